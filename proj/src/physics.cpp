#include "ci/physics.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <limits>
#include <sstream>
#include <stdexcept>

namespace ci {

namespace {

// Unnormalized Klein-Nishina deposit kernel. With lambda = (E0-x)/E0 the
// photon energy ratio and c = cos(omega), this is
// lambda + 1/lambda - sin^2(omega), the KN cross-section bracket; the
// change of variables from angle to deposit contributes only constants.
double kn_kernel(double E0, double x) {
    double lambda = (E0 - x) / E0;
    double t = x / (E0 - x);
    double c = 1.0 - (kMc2 / E0) * t;
    return lambda + t + c * c;
}

}  // namespace

double max_deposit(double E0) {
    if (E0 <= 0.0) throw std::invalid_argument("max_deposit: E0 must be positive");
    return E0 * (1.0 - 1.0 / (1.0 + 2.0 * E0 / kMc2));
}

double compton_angle(double E0, double E1) {
    if (E0 <= 0.0) throw std::invalid_argument("compton_angle: E0 must be positive");
    double arg = 1.0 - kMc2 * (1.0 / (E0 - E1) - 1.0 / E0);
    constexpr double kTol = 1e-12;
    if (arg < -1.0 - kTol || arg > 1.0 + kTol)
        throw std::domain_error("compton_angle: deposit outside kinematic range");
    return std::acos(std::clamp(arg, -1.0, 1.0));
}

double deposit_for_angle(double E0, double omega) {
    double c = std::cos(omega);
    // Invert c = 1 - mc2 (1/(E0-E1) - 1/E0).
    return E0 - 1.0 / ((1.0 - c) / kMc2 + 1.0 / E0);
}

double kn_antiderivative(double E0, double E) {
    if (E < 0.0 || E >= E0 - 1e-12)
        throw std::domain_error("kn_antiderivative: E outside [0, E0)");
    double m = kMc2;
    double A = 1.0 + m / E0;
    return (m / (E0 * E0)) *
           (-E * E / (2.0 * E0) + A * A * E +
            (2.0 * A * m - E0) * std::log(E0 - E) + m * m / (E0 - E));
}

double kn_deposit_density(double E0, double E1) {
    double emax = max_deposit(E0);
    if (E1 < 0.0 || E1 > emax) return 0.0;
    double norm = (kn_antiderivative(E0, emax) - kn_antiderivative(E0, 0.0)) * E0 * E0 / kMc2;
    return kn_kernel(E0, E1) / norm;
}

double kn_log_deposit_density(double E0, double E1) {
    double d = kn_deposit_density(E0, E1);
    return d > 0.0 ? std::log(d) : -std::numeric_limits<double>::infinity();
}

double kn_sample_deposit(double E0, double u01) {
    double emax = max_deposit(E0);
    double f0 = kn_antiderivative(E0, 0.0);
    double target = f0 + u01 * (kn_antiderivative(E0, emax) - f0);
    double lo = 0.0, hi = emax;
    for (int i = 0; i < 80; ++i) {
        double mid = 0.5 * (lo + hi);
        if (kn_antiderivative(E0, mid) < target)
            lo = mid;
        else
            hi = mid;
    }
    return 0.5 * (lo + hi);
}

AttenuationTable::AttenuationTable(std::vector<Row> rows) : rows_(std::move(rows)) {
    if (rows_.size() < 2) throw std::invalid_argument("attenuation table needs >= 2 rows");
    for (std::size_t i = 0; i < rows_.size(); ++i) {
        const Row& r = rows_[i];
        if (r.energy <= 0.0 || r.mu_total <= 0.0 || r.mu_photo <= 0.0 || r.mu_compton <= 0.0)
            throw std::invalid_argument("attenuation table entries must be positive");
        if (r.mu_photo + r.mu_compton > r.mu_total * (1.0 + 1e-9))
            throw std::invalid_argument("mu_photo + mu_compton exceeds mu_total");
        if (i > 0 && r.energy <= rows_[i - 1].energy)
            throw std::invalid_argument("attenuation table energies must be increasing");
    }
}

AttenuationTable AttenuationTable::parse_csv(const std::string& text) {
    std::istringstream in(text);
    std::string line;
    if (!std::getline(in, line)) throw std::invalid_argument("empty attenuation CSV");
    std::vector<Row> rows;
    int lineno = 1;
    while (std::getline(in, line)) {
        ++lineno;
        if (line.empty()) continue;
        std::istringstream ls(line);
        Row r{};
        char c1, c2, c3;
        if (!(ls >> r.energy >> c1 >> r.mu_total >> c2 >> r.mu_photo >> c3 >> r.mu_compton) ||
            c1 != ',' || c2 != ',' || c3 != ',')
            throw std::invalid_argument("attenuation CSV parse error at line " +
                                        std::to_string(lineno));
        rows.push_back(r);
    }
    return AttenuationTable(std::move(rows));
}

AttenuationTable AttenuationTable::load_csv(const std::string& path) {
    std::ifstream f(path);
    if (!f) throw std::runtime_error("cannot open attenuation CSV: " + path);
    std::ostringstream ss;
    ss << f.rdbuf();
    return parse_csv(ss.str());
}

double AttenuationTable::mu(MuKind kind, double energy) const {
    if (energy < rows_.front().energy || energy > rows_.back().energy)
        throw std::out_of_range("attenuation lookup outside table range");
    auto it = std::lower_bound(rows_.begin(), rows_.end(), energy,
                               [](const Row& r, double e) { return r.energy < e; });
    auto pick = [kind](const Row& r) {
        switch (kind) {
            case MuKind::Total: return r.mu_total;
            case MuKind::Photo: return r.mu_photo;
            default: return r.mu_compton;
        }
    };
    if (it->energy == energy) return pick(*it);
    const Row& hi = *it;
    const Row& lo = *(it - 1);
    double t = (std::log(energy) - std::log(lo.energy)) /
               (std::log(hi.energy) - std::log(lo.energy));
    return std::exp((1.0 - t) * std::log(pick(lo)) + t * std::log(pick(hi)));
}

double analytic_p_absorb(const AttenuationTable& table, double E0, int n_nodes) {
    double emax = max_deposit(E0);
    if (E0 > table.max_energy() || E0 - emax < table.min_energy())
        throw std::out_of_range("analytic_p_absorb: remaining energies exit table range");
    double acc = 0.0;
    double h = emax / (n_nodes - 1);
    for (int i = 0; i < n_nodes; ++i) {
        double e1 = i * h;
        double rem = E0 - e1;
        double ratio = table.mu(MuKind::Photo, rem) / table.mu(MuKind::Total, rem);
        double w = (i == 0 || i == n_nodes - 1) ? 0.5 : 1.0;
        acc += w * ratio * kn_deposit_density(E0, e1);
    }
    return acc * h;
}

}  // namespace ci
