#include "ci/energy_em.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <stdexcept>
#include <vector>

#include "ci/random.hpp"

namespace ci {

namespace {
constexpr double kNegInf = -std::numeric_limits<double>::infinity();

// Clean (noise-free) density of E1 + E2 for scatter-scatter chains,
// tabulated on a uniform t-grid over (0, E0).
std::vector<double> clean_sum_table(double E0, int t_nodes, int e1_nodes) {
    std::vector<double> g(t_nodes, 0.0);
    const double m1 = max_deposit(E0);
    const double dt = E0 / t_nodes;
    const double de = m1 / e1_nodes;
    for (int i = 0; i < e1_nodes; ++i) {
        double e1 = (i + 0.5) * de;
        double p1 = kn_deposit_density(E0, e1);
        double rem = E0 - e1;
        double m2 = max_deposit(rem);
        for (int j = 0; j < t_nodes; ++j) {
            double t = (j + 0.5) * dt;
            double e2 = t - e1;
            if (e2 <= 0.0 || e2 >= m2) continue;
            g[j] += p1 * kn_deposit_density(rem, e2) * de;
        }
    }
    return g;
}
}  // namespace

double absorb_sum_density(double e_sum, double E0, double sigma) {
    return norm_pdf((e_sum - E0) / sigma) / sigma;
}

double scatter_sum_density(double e_sum, double E0, double sigma, int n_nodes) {
    if (!(E0 > 0.0) || !(sigma > 0.0) || n_nodes < 10)
        throw std::invalid_argument("scatter_sum_density: bad arguments");
    std::vector<double> g = clean_sum_table(E0, n_nodes, n_nodes);
    const double dt = E0 / n_nodes;
    double acc = 0.0;
    for (int j = 0; j < n_nodes; ++j) {
        double t = (j + 0.5) * dt;
        acc += g[j] * norm_pdf((e_sum - t) / sigma) / sigma * dt;
    }
    return acc;
}

std::vector<double> em_e_step(const std::vector<double>& sums, double E0, double sigma,
                              double p_absorb, bool* degenerate, const EmConfig& config) {
    std::vector<double> gamma(sums.size());
    bool bad = false;
    for (std::size_t n = 0; n < sums.size(); ++n) {
        double fa = p_absorb * absorb_sum_density(sums[n], E0, sigma);
        double fs = (1.0 - p_absorb) * scatter_sum_density(sums[n], E0, sigma, config.quad_nodes);
        double den = fa + fs;
        if (den > 0.0) {
            gamma[n] = fa / den;
        } else {
            gamma[n] = 0.5;
            bad = true;
        }
    }
    if (degenerate) *degenerate = bad;
    return gamma;
}

EmResult run_em(const std::vector<double>& sums, const EmConfig& config) {
    if (sums.empty()) throw std::invalid_argument("run_em: no events");
    const int n_e0 = static_cast<int>(std::round((config.e0_max - config.e0_min) / config.e0_step)) + 1;
    const int n_sig =
        static_cast<int>(std::round((config.sigma_max - config.sigma_min) / config.sigma_step)) + 1;
    if (n_e0 < 1 || n_sig < 1) throw std::invalid_argument("run_em: empty parameter grid");

    std::vector<double> e0s(n_e0), sigs(n_sig);
    for (int i = 0; i < n_e0; ++i) e0s[i] = config.e0_min + i * config.e0_step;
    for (int j = 0; j < n_sig; ++j) sigs[j] = config.sigma_min + j * config.sigma_step;

    // Tabulate the scatter-branch density once per grid cell on a shared
    // uniform s-grid, then interpolate at the observed sums.
    const double s_hi = config.e0_max + 6.0 * config.sigma_max;
    const int s_nodes = config.table_nodes;
    const double ds = s_hi / s_nodes;
    // f_cs[i * n_sig + j][k]: density at s_k for (E0_i, sigma_j).
    std::vector<std::vector<double>> f_cs(static_cast<std::size_t>(n_e0) * n_sig);
    for (int i = 0; i < n_e0; ++i) {
        std::vector<double> g = clean_sum_table(e0s[i], config.table_nodes, config.quad_nodes);
        const double dt = e0s[i] / config.table_nodes;
        for (int j = 0; j < n_sig; ++j) {
            double sigma = sigs[j];
            std::vector<double>& f = f_cs[static_cast<std::size_t>(i) * n_sig + j];
            f.assign(s_nodes, 0.0);
            if (sigma < dt) {
                // Noise narrower than the clean-sum grid: the convolution is
                // below grid resolution, interpolate the clean density.
                for (int k = 0; k < s_nodes; ++k) {
                    double x = (k + 0.5) * ds / dt - 0.5;
                    int t = static_cast<int>(std::floor(x));
                    if (t < 0 || t >= config.table_nodes - 1) continue;
                    double wgt = x - t;
                    f[k] = (1.0 - wgt) * g[t] + wgt * g[t + 1];
                }
                continue;
            }
            int window = static_cast<int>(std::ceil(8.0 * sigma / dt)) + 1;
            for (int k = 0; k < s_nodes; ++k) {
                double s = (k + 0.5) * ds;
                int t0 = std::max(0, static_cast<int>((s - window * dt) / dt));
                int t1 = std::min(config.table_nodes, static_cast<int>((s + window * dt) / dt) + 1);
                double acc = 0.0;
                for (int t = t0; t < t1; ++t)
                    acc += g[t] * norm_pdf((s - (t + 0.5) * dt) / sigma);
                f[k] = acc / sigma * dt;
            }
        }
    }
    auto lookup = [&](int i, int j, double s) {
        if (s < 0.0 || s >= s_hi) return 0.0;
        const std::vector<double>& f = f_cs[static_cast<std::size_t>(i) * n_sig + j];
        double x = s / ds - 0.5;
        int k = static_cast<int>(std::floor(x));
        if (k < 0) return f.front();
        if (k >= s_nodes - 1) return f.back();
        double w = x - k;
        return (1.0 - w) * f[k] + w * f[k + 1];
    };

    EmResult result;
    int ci_e0 = n_e0 / 2, ci_sig = std::min(n_sig - 1, 20);
    double p = 0.5;
    std::vector<double> gamma(sums.size(), 0.5);

    for (int iter = 0; iter < config.iterations; ++iter) {
        // E step against the current grid cell.
        double e0 = e0s[ci_e0], sigma = sigs[ci_sig];
        double loglik = 0.0;
        for (std::size_t n = 0; n < sums.size(); ++n) {
            double fa = p * absorb_sum_density(sums[n], e0, sigma);
            double fs = (1.0 - p) * lookup(ci_e0, ci_sig, sums[n]);
            double den = fa + fs;
            if (den > 0.0) {
                gamma[n] = fa / den;
                loglik += std::log(den);
            } else {
                gamma[n] = 0.5;
                result.degenerate_fallback = true;
                loglik += std::log(1e-300);
            }
        }
        result.loglik_trace.push_back(loglik);

        // M step: closed-form weight, grid argmax for (E0, sigma).
        double gsum = 0.0;
        for (double g : gamma) gsum += g;
        p = gsum / sums.size();
        double best_q = kNegInf;
        int best_i = 0, best_j = 0;
        for (int i = 0; i < n_e0; ++i)
            for (int j = 0; j < n_sig; ++j) {
                double q = 0.0;
                for (std::size_t n = 0; n < sums.size(); ++n) {
                    double la = std::log(std::max(absorb_sum_density(sums[n], e0s[i], sigs[j]),
                                                  1e-300));
                    double ls = std::log(std::max(lookup(i, j, sums[n]), 1e-300));
                    q += gamma[n] * la + (1.0 - gamma[n]) * ls;
                }
                if (q > best_q + 1e-12) {  // ties keep the smaller (E0, sigma)
                    best_q = q;
                    best_i = i;
                    best_j = j;
                }
            }
        ci_e0 = best_i;
        ci_sig = best_j;
    }

    result.E0 = e0s[ci_e0];
    result.sigma = sigs[ci_sig];
    result.p_absorb = p;
    result.responsibility = gamma;
    return result;
}

}  // namespace ci
