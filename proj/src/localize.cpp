#include "ci/localize.hpp"

#include <algorithm>
#include <chrono>
#include <cstdio>
#include <cstdlib>
#include <cmath>
#include <fstream>
#include <functional>
#include <numeric>
#include <limits>
#include <stdexcept>

#include "ci/analysis.hpp"
#include "ci/physics.hpp"
#include "ci/random.hpp"

namespace ci {

namespace {
constexpr double kNegInf = -std::numeric_limits<double>::infinity();
constexpr double kFourPi = 4.0 * M_PI;

struct EventState {
    Vec3 r1, r2;
    double E1, E2;
    SecondKind kind;
    Vec3 dir;  // latent source direction, unit
    double log_fwd, log_noise, log_mix;
};

struct Chain {
    const DetectorArray& array;
    const AttenuationTable& table;
    const DirectionPrior& prior;
    const std::vector<NoisyEvent>& obs;
    const GibbsConfig& cfg;
    ForwardParams params;
    std::vector<double> alpha;

    std::vector<EventState> ev;
    std::vector<Vec3> srcs;
    std::vector<double> w;      // [outlier, sources...]
    std::vector<double> src_w;  // w[1..], kept in sync (hot-path scratch)
    double sigma_xy, sigma_z, sigma_e;

    void sync_src_w() { src_w.assign(w.begin() + 1, w.end()); }

    double log_fwd(const EventState& s) const {
        Event e{{s.r1, s.E1}, {s.r2, s.E2}, s.kind};
        return event_log_likelihood(array, table, prior, s.dir * cfg.sphere_radius, cfg.E0, e,
                                    params);
    }

    double log_noise(const EventState& s, std::size_t n) const {
        return log_noise(s, n, sigma_xy, sigma_z, sigma_e);
    }

    double log_noise(const EventState& s, std::size_t n, double sxy, double sz,
                     double se) const {
        const NoisyEvent& o = obs[n];
        NoiseScales scales{sxy, sz, se};
        if (!array.containing_sensor(s.r1) || !array.containing_sensor(s.r2)) return kNegInf;
        double acc = log_position_noise_density(array, s.r1, o.first.position, scales) +
                     log_position_noise_density(array, s.r2, o.second.position, scales) +
                     log_energy_noise_density(s.E1, o.first.deposit, se) +
                     log_energy_noise_density(s.E2, o.second.deposit, se);
        return acc;
    }

    double log_mix(const Vec3& dir) const {
        return std::log(prior_virtual_source(dir, srcs, src_w, cfg.kappa_mix));
    }

    double log_weight_prior() const {
        return dirichlet_log_prior(std::vector<double>(w.begin() + 1, w.end()), alpha);
    }

    double total_log_post() const {
        double acc = log_weight_prior();
        for (const EventState& s : ev) acc += s.log_fwd + s.log_noise + s.log_mix;
        return acc;
    }
};

// Proposal-scale adapter: multiplicative updates toward a 40-60% acceptance
// window, frozen after burn-in. `invert` flips the direction for
// concentration-style scales where larger means smaller steps.
struct Adapter {
    double* scale = nullptr;
    bool invert = false;
    double lo = 1e-12, hi = 1e12;
    int accepts = 0, trials = 0;
    long post_accepts = 0, post_trials = 0;

    void record(bool accepted, bool adapting) {
        if (!adapting) {
            post_trials++;
            post_accepts += accepted;
            return;
        }
        trials++;
        accepts += accepted;
        if (trials == 50) {
            double rate = accepts / 50.0;
            double f = 1.0;
            if (rate > 0.6) f = 1.1;
            else if (rate < 0.4) f = 0.9;
            if (invert) f = 1.0 / f;
            *scale = std::clamp(*scale * f, lo, hi);
            accepts = trials = 0;
        }
    }
    double rate() const { return post_trials ? static_cast<double>(post_accepts) / post_trials : 0.0; }
};

Vec3 rotate_about(const Vec3& v, const Vec3& axis, double cos_t, double sin_t) {
    // Rodrigues rotation; axis must be unit length.
    return v * cos_t + axis.cross(v) * sin_t + axis * (axis.dot(v) * (1.0 - cos_t));
}

bool mh_accept(double log_ratio, RngStream& rng) {
    if (std::isnan(log_ratio)) return false;
    if (log_ratio >= 0.0) return true;
    return std::log(rng.uniform_pos()) < log_ratio;
}
}  // namespace

bool mh_step(double log_target_cur, double log_target_prop, double log_q_fwd, double log_q_rev,
             RngStream& rng) {
    if (!std::isfinite(log_target_prop)) return false;
    return mh_accept(log_target_prop - log_target_cur + log_q_rev - log_q_fwd, rng);
}

double prior_virtual_source(const Vec3& r0n, const std::vector<Vec3>& sources,
                            const std::vector<double>& source_weights, double kappa) {
    if (sources.size() != source_weights.size())
        throw std::invalid_argument("prior_virtual_source: sources/weights size mismatch");
    double rest = 1.0;
    double den = 0.0;
    for (std::size_t k = 0; k < sources.size(); ++k) {
        den += source_weights[k] * std::exp(log_vmf_pdf(r0n, sources[k], kappa));
        rest -= source_weights[k];
    }
    return den + std::max(rest, 0.0) / kFourPi;
}

double dirichlet_log_prior(const std::vector<double>& source_weights,
                           const std::vector<double>& alpha) {
    if (alpha.size() != source_weights.size() + 1)
        throw std::invalid_argument("dirichlet_log_prior: alpha needs K + 1 entries");
    double rest = 1.0;
    double acc = 0.0;
    double alpha_sum = alpha[0];
    for (std::size_t k = 0; k < source_weights.size(); ++k) {
        double w = source_weights[k];
        if (!(w > 0.0)) return kNegInf;
        acc += (alpha[k + 1] - 1.0) * std::log(w);
        acc -= std::lgamma(alpha[k + 1]);
        alpha_sum += alpha[k + 1];
        rest -= w;
    }
    if (!(rest > 0.0)) return kNegInf;
    acc += (alpha[0] - 1.0) * std::log(rest) - std::lgamma(alpha[0]);
    return acc + std::lgamma(alpha_sum);
}

std::vector<Vec3> init_source_directions(const DetectorArray& array, const SphereModel& sphere,
                                         const std::vector<NoisyEvent>& events, double E0,
                                         int n_sources, const AttenuationTable* table,
                                         const DirectionPrior* prior) {
    (void)array;
    SphereGrid grid(2562);
    std::vector<double> image = back_project(grid, sphere, events, E0);
    if (n_sources == 1) return bp_modes(grid, image, 1);

    // Multi-source starts: gather the local maxima of the back-projection
    // image, then pick the subset of n_sources peaks that jointly explains
    // the event cones best. A pure top-k of the image often puts several
    // starts on the shoulders of the single strongest lobe.
    const double peak_radius = 15.0 * M_PI / 180.0;
    const double cos_peak = std::cos(peak_radius);
    std::vector<int> peaks;
    for (int p = 0; p < grid.size(); ++p) {
        bool is_max = true;
        for (int q = 0; q < grid.size() && is_max; ++q)
            if (q != p && grid.directions()[p].dot(grid.directions()[q]) > cos_peak &&
                image[q] > image[p])
                is_max = false;
        if (is_max) peaks.push_back(p);
    }
    std::sort(peaks.begin(), peaks.end(), [&](int a, int b) { return image[a] > image[b]; });
    int n_cand = std::min<int>(peaks.size(), std::max(12, 4 * n_sources));
    if (n_cand < n_sources) return bp_modes(grid, image, n_sources, 30.0 * M_PI / 180.0);
    peaks.resize(n_cand);

    // Per-event score of a candidate direction: plug-in forward log
    // likelihood of the observed event if available, otherwise a
    // robustified cone residual. Each event is then explained by its best
    // candidate in the subset.
    const double e1_cap = max_deposit(E0) * (1.0 - 1e-9);
    const double resid_cap = 0.3;  // rad
    const double ll_floor = -20.0;
    auto score_at = [&](const NoisyEvent& e, const Vec3& dir) -> double {
        double e1 = std::clamp(e.first.deposit, 1e-6, e1_cap);
        if (table && prior) {
            Event ev{{e.first.position, e1},
                     {e.second.position, e.second.deposit},
                     e.truth ? e.truth->kind : SecondKind::Absorb};
            if (ev.second_kind == SecondKind::Absorb)
                ev.second.deposit = E0 - e1;
            else
                ev.second.deposit =
                    std::clamp(e.second.deposit, 1e-4, max_deposit(E0 - e1) * 0.999);
            // Widen the cone term to the observation-noise angular scale:
            // the plug-in likelihood sees noisy deposits directly, without
            // the latent marginalization the sampler performs.
            ForwardParams soft{35.0, 400.0};
            double ll = event_log_likelihood(array, *table, *prior, dir * sphere.radius, E0,
                                             ev, soft);
            return std::max(ll, ll_floor);
        }
        double omega = compton_angle(E0, e1);
        Vec3 axis = (e.first.position - e.second.position).normalized();
        Vec3 v = (dir * sphere.radius - e.first.position).normalized();
        double d = std::min(std::fabs(angle_between(v, axis) - omega), resid_cap);
        return -d * d;
    };

    std::vector<Vec3> cands;
    for (int j = 0; j < n_cand; ++j) cands.push_back(grid.directions()[peaks[j]]);

    // Greedy peel: locate the strongest lobe, strip the events it explains
    // best, and back-project the remainder for the next source. A few
    // reassignment passes then polish the split. This recovers lobes that
    // never surface as local maxima of the joint image.
    std::vector<Vec3> peel;
    {
        std::vector<int> remaining(events.size());
        std::iota(remaining.begin(), remaining.end(), 0);
        for (int k = 0; k < n_sources; ++k) {
            std::vector<NoisyEvent> sub;
            for (int i : remaining) sub.push_back(events[i]);
            std::vector<double> im = back_project(grid, sphere, sub, E0);
            peel.push_back(bp_modes(grid, im, 1)[0]);
            if (k == n_sources - 1) break;
            std::stable_sort(remaining.begin(), remaining.end(), [&](int a, int b) {
                return score_at(events[a], peel[k]) > score_at(events[b], peel[k]);
            });
            int claimed = ((int)remaining.size() + (n_sources - k) - 1) / (n_sources - k);
            remaining.erase(remaining.begin(), remaining.begin() + claimed);
        }
        for (int pass = 0; pass < 3; ++pass) {
            std::vector<std::vector<NoisyEvent>> groups(n_sources);
            for (const NoisyEvent& e : events) {
                int best_k = 0;
                double best_ll = -1e300;
                for (int k = 0; k < n_sources; ++k) {
                    double ll = score_at(e, peel[k]);
                    if (ll > best_ll) {
                        best_ll = ll;
                        best_k = k;
                    }
                }
                groups[best_k].push_back(e);
            }
            for (int k = 0; k < n_sources; ++k) {
                if (groups[k].size() < 2) continue;
                std::vector<double> im = back_project(grid, sphere, groups[k], E0);
                peel[k] = bp_modes(grid, im, 1)[0];
            }
        }
        const double cos_dup = std::cos(5.0 * M_PI / 180.0);
        for (const Vec3& d : peel) {
            bool dup = false;
            for (const Vec3& c : cands) dup = dup || c.dot(d) > cos_dup;
            if (!dup) cands.push_back(d);
        }
    }
    n_cand = (int)cands.size();

    std::vector<std::vector<double>> score_nj(events.size(), std::vector<double>(n_cand));
    for (std::size_t n = 0; n < events.size(); ++n)
        for (int j = 0; j < n_cand; ++j) score_nj[n][j] = score_at(events[n], cands[j]);
    // Exhaustive search over candidate subsets (n_cand is small), keeping
    // the best few by plug-in score.
    struct Scored {
        double score;
        std::vector<int> pick;
    };
    std::vector<Scored> subsets;
    std::vector<int> pick(n_sources);
    std::function<void(int, int)> search = [&](int start, int depth) {
        if (depth == n_sources) {
            double score = 0.0;
            for (std::size_t n = 0; n < events.size(); ++n) {
                double m = -1e300;
                for (int j : pick) m = std::max(m, score_nj[n][j]);
                score += m;
            }
            subsets.push_back({score, pick});
            return;
        }
        for (int j = start; j <= n_cand - (n_sources - depth); ++j) {
            pick[depth] = j;
            search(j + 1, depth + 1);
        }
    };
    search(0, 0);
    std::sort(subsets.begin(), subsets.end(),
              [](const Scored& a, const Scored& b) { return a.score > b.score; });
    auto subset_dirs = [&](const Scored& s) {
        std::vector<Vec3> dirs;
        for (int j : s.pick) dirs.push_back(cands[j]);
        return dirs;
    };
    if (!(table && prior)) return subset_dirs(subsets.front());

    // The plug-in score cannot absorb observation noise, so it is an
    // unreliable judge between close subsets. Run a short pilot chain from
    // each leading subset and keep the one reaching the best posterior.
    std::vector<SecondKind> kinds;
    for (const NoisyEvent& e : events)
        kinds.push_back(e.truth ? e.truth->kind : SecondKind::Absorb);
    GibbsConfig pilot;
    pilot.n_sources = n_sources;
    pilot.E0 = E0;
    pilot.sphere_radius = sphere.radius;
    pilot.sweeps = 800;
    pilot.burn_in = 400;
    pilot.seed = 0x9e3779b9;
    int n_pilots = std::min<std::size_t>(6, subsets.size());
    std::vector<std::vector<Vec3>> starts;
    for (int i = 0; i < n_pilots; ++i) starts.push_back(subset_dirs(subsets[i]));
    starts.push_back(peel);
    std::vector<Vec3> best;
    double best_post = -1e300;
    for (std::vector<Vec3>& start : starts) {
        GibbsResult r = run_gibbs(array, *table, *prior, events, kinds, pilot, &start);
        double post = 0.0;
        for (const GibbsSample& s : r.samples) post += s.log_post;
        post /= r.samples.size();
        std::vector<Vec3> means(n_sources);
        for (int k = 0; k < n_sources; ++k) {
            std::vector<Vec3> chain;
            for (const GibbsSample& s : r.samples) chain.push_back(s.r0[k]);
            means[k] = spherical_mean(chain);
        }
        int explained = 0;
        for (const NoisyEvent& e : events) {
            double m = -1e300;
            for (int k = 0; k < n_sources; ++k) m = std::max(m, score_at(e, means[k]));
            explained += m > -10.0;
        }
        if (std::getenv("CI_INIT_DEBUG")) {
            std::fprintf(stderr, "[init] pilot post %.2f expl %d means:", post, explained);
            for (const Vec3& d : means)
                std::fprintf(stderr, " (%.0f,%.0f)", std::atan2(d.y, d.x) * 180.0 / M_PI,
                             std::asin(std::clamp(d.z, -1.0, 1.0)) * 180.0 / M_PI);
            std::fprintf(stderr, " starts:");
            for (const Vec3& d : start)
                std::fprintf(stderr, " (%.0f,%.0f)", std::atan2(d.y, d.x) * 180.0 / M_PI,
                             std::asin(std::clamp(d.z, -1.0, 1.0)) * 180.0 / M_PI);
            std::fprintf(stderr, "\n");
        }
        if (post > best_post) {
            best_post = post;
            // Hand back the pilot's per-label means: partially converged
            // starts for the full chain.
            for (int k = 0; k < n_sources; ++k) {
                std::vector<Vec3> chain;
                for (const GibbsSample& s : r.samples) chain.push_back(s.r0[k]);
                start[k] = spherical_mean(chain);
            }
            best = start;
        }
    }
    return best;
}

GibbsResult run_gibbs(const DetectorArray& array, const AttenuationTable& table,
                      const DirectionPrior& prior, const std::vector<NoisyEvent>& events,
                      const std::vector<SecondKind>& kinds, const GibbsConfig& config,
                      const std::vector<Vec3>* init_sources) {
    if (events.empty()) throw std::invalid_argument("run_gibbs: no events");
    if (kinds.size() != events.size())
        throw std::invalid_argument("run_gibbs: one second kind per event required");
    if (config.n_sources < 1) throw std::invalid_argument("run_gibbs: need >= 1 source");
    if (config.burn_in < 0 || config.burn_in >= config.sweeps)
        throw std::invalid_argument("run_gibbs: burn_in must be in [0, sweeps)");
    const int K = config.n_sources;

    auto t_start = std::chrono::steady_clock::now();
    Chain c{array,  table, prior, events, config, {config.a, config.a_E},
            {},     {},    {},    {},     {},     0,
            0,      0};
    c.alpha = config.dirichlet_alpha;
    if (c.alpha.empty()) {
        c.alpha.assign(K + 1, 50.0);
        c.alpha[0] = 1.0;
    }
    if (static_cast<int>(c.alpha.size()) != K + 1)
        throw std::invalid_argument("run_gibbs: dirichlet_alpha needs n_sources + 1 entries");

    RngStream root(config.seed);
    RngStream init_rng = root.derive("init", 0, 0);

    // --- initial state ---
    if (init_sources) {
        if (static_cast<int>(init_sources->size()) != K)
            throw std::invalid_argument("run_gibbs: wrong number of initial sources");
        c.srcs = *init_sources;
        for (Vec3& s : c.srcs) s = s.normalized();
    } else {
        c.srcs = init_source_directions(array, SphereModel{config.sphere_radius}, events,
                                        config.E0, K, &table, &prior);
    }
    c.w.assign(K + 1, config.init_source_weight / K);
    c.w[0] = 1.0 - config.init_source_weight;
    c.sync_src_w();
    c.sigma_xy = std::clamp(config.init_noise.sigma_xy, config.sigma_xy_lo, config.sigma_xy_hi);
    c.sigma_z = std::clamp(config.init_noise.sigma_z, config.sigma_z_lo, config.sigma_z_hi);
    c.sigma_e = std::clamp(config.init_noise.sigma_E, config.sigma_e_lo, config.sigma_e_hi);

    const double e1_cap = max_deposit(config.E0);
    c.ev.resize(events.size());
    for (std::size_t n = 0; n < events.size(); ++n) {
        EventState& s = c.ev[n];
        const NoisyEvent& o = events[n];
        auto clamp_into_sensor = [&](Vec3 p) {
            std::optional<int> idx = array.containing_sensor(p);
            if (!idx) {
                // Snap to the closest sensor box, slightly inset.
                double best = 1e300;
                int bi = 0;
                for (std::size_t i = 0; i < array.sensors().size(); ++i) {
                    const Sensor& sn = array.sensors()[i];
                    double d2 = 0.0;
                    for (int a = 0; a < 3; ++a) {
                        double lo = sn.center[a] - sn.half_extents[a];
                        double hi = sn.center[a] + sn.half_extents[a];
                        double d = std::max({lo - p[a], p[a] - hi, 0.0});
                        d2 += d * d;
                    }
                    if (d2 < best) {
                        best = d2;
                        bi = static_cast<int>(i);
                    }
                }
                idx = bi;
            }
            const Sensor& sn = array.sensors()[*idx];
            for (int a = 0; a < 3; ++a) {
                double lo = sn.center[a] - sn.half_extents[a] + 1e-6;
                double hi = sn.center[a] + sn.half_extents[a] - 1e-6;
                p[a] = std::clamp(p[a], lo, hi);
            }
            return p;
        };
        s.r1 = clamp_into_sensor(o.first.position);
        s.r2 = clamp_into_sensor(o.second.position);
        s.E1 = std::clamp(o.first.deposit, 1e-4, e1_cap - 1e-6);
        s.kind = kinds[n];
        if (s.kind == SecondKind::Absorb)
            s.E2 = config.E0 - s.E1;
        else
            s.E2 = std::clamp(o.second.deposit, 1e-4, max_deposit(config.E0 - s.E1) * 0.999);
        // Latent direction: seed near the source class whose centre best
        // agrees with the event's observed cone.
        int best_k = 0;
        double best_score = 1e300;
        Vec3 axis = (s.r1 - s.r2).normalized();
        double omega = compton_angle(config.E0, s.E1);
        for (int k = 0; k < K; ++k) {
            Vec3 to_src = (c.srcs[k] * config.sphere_radius - s.r1).normalized();
            double score = std::fabs(angle_between(to_src, axis) - omega);
            if (score < best_score) {
                best_score = score;
                best_k = k;
            }
        }
        s.dir = init_rng.vmf(c.srcs[best_k], config.init_kappa_spread);
        s.log_fwd = c.log_fwd(s);
        s.log_noise = c.log_noise(s, n);
        s.log_mix = c.log_mix(s.dir);
    }

    // --- proposal scales and their adapters ---
    double step_pos_r1 = config.step_pos, step_pos_r2 = config.step_pos;
    double step_e = config.step_energy;
    double kap_dir = config.kappa_prop_r0n, kap_src = config.kappa_prop_r0k;
    double step_w = config.step_w;
    double step_sxy = config.step_sigma_pos, step_sz = config.step_sigma_pos;
    double step_se = config.step_sigma_e;
    std::map<std::string, Adapter> adapt;
    adapt["r1"] = {&step_pos_r1, false, 1e-3, 10.0};
    adapt["r2"] = {&step_pos_r2, false, 1e-3, 10.0};
    adapt["energy"] = {&step_e, false, 1e-4, 0.5};
    adapt["dir"] = {&kap_dir, true, 20.0, 1e7};
    adapt["src"] = {&kap_src, true, 50.0, 1e8};
    adapt["w"] = {&step_w, false, 1e-4, 0.5};
    adapt["sigma_xy"] = {&step_sxy, false, 1e-4, 2.0};
    adapt["sigma_z"] = {&step_sz, false, 1e-4, 2.0};
    adapt["sigma_e"] = {&step_se, false, 1e-5, 0.1};
    double step_rot = config.step_rotation;
    adapt["rotation"] = {&step_rot, false, 1e-4, 1.5};
    double kap_jump = 80.0;  // fixed; the adapter only records acceptance
    adapt["dir_jump"] = {&kap_jump, true, 80.0, 80.0};

    // Cone-circle independence proposal per event: the latent direction's
    // conditional concentrates along the observed cone's intersection with
    // the sphere, so a fixed vMF mixture along that circle can relocate a
    // latent between distant source lobes in a single move. Built from the
    // observed event only, so the proposal is state independent.
    std::vector<std::vector<Vec3>> jump_centers(events.size());
    for (std::size_t n = 0; n < events.size(); ++n) {
        const NoisyEvent& o = events[n];
        double e1 = std::clamp(o.first.deposit, 1e-6, e1_cap - 1e-6);
        double omega = compton_angle(config.E0, e1);
        Vec3 axis = (o.first.position - o.second.position).normalized();
        Vec3 seed = std::fabs(axis.x) < 0.9 ? Vec3{1.0, 0.0, 0.0} : Vec3{0.0, 1.0, 0.0};
        Vec3 u = axis.cross(seed).normalized();
        Vec3 v = axis.cross(u);
        const int M = 96;
        for (int m = 0; m < M; ++m) {
            double phi = 2.0 * M_PI * m / M;
            Vec3 ray = axis * std::cos(omega) +
                       (u * std::cos(phi) + v * std::sin(phi)) * std::sin(omega);
            double b = o.first.position.dot(ray);
            double csq = o.first.position.dot(o.first.position) -
                         config.sphere_radius * config.sphere_radius;
            double disc = b * b - csq;
            if (disc < 0.0) continue;
            double t = -b + std::sqrt(disc);
            if (t <= 0.0) continue;
            jump_centers[n].push_back((o.first.position + ray * t).normalized());
        }
    }
    auto log_q_jump = [&](std::size_t n, const Vec3& d) {
        const std::vector<Vec3>& cs = jump_centers[n];
        double mx = -1e300;
        for (const Vec3& cm : cs) mx = std::max(mx, log_vmf_pdf(d, cm, kap_jump));
        double acc = 0.0;
        for (const Vec3& cm : cs) acc += std::exp(log_vmf_pdf(d, cm, kap_jump) - mx);
        return mx + std::log(acc) - std::log(static_cast<double>(cs.size()));
    };

    GibbsResult result;
    result.samples.reserve(config.sweeps - config.burn_in);

    for (int sweep = 0; sweep < config.sweeps; ++sweep) {
        const bool adapting = sweep < config.burn_in;

        for (std::size_t n = 0; n < events.size(); ++n) {
            EventState& s = c.ev[n];
            RngStream rng = root.derive("event", static_cast<std::uint64_t>(n),
                                        static_cast<std::uint64_t>(sweep));

            // r1 / r2 position moves (symmetric Gaussian).
            for (int which = 0; which < 2; ++which) {
                Adapter& ad = adapt[which == 0 ? "r1" : "r2"];
                double step = which == 0 ? step_pos_r1 : step_pos_r2;
                EventState p = s;
                Vec3& target = which == 0 ? p.r1 : p.r2;
                target = target + Vec3{rng.normal(0.0, step), rng.normal(0.0, step),
                                       rng.normal(0.0, step)};
                p.log_noise = c.log_noise(p, n);
                bool acc = false;
                if (p.log_noise != kNegInf) {
                    p.log_fwd = c.log_fwd(p);
                    acc = mh_accept(p.log_fwd + p.log_noise - s.log_fwd - s.log_noise, rng);
                }
                if (acc) s = p;
                ad.record(acc, adapting);
            }

            // Joint (E1, E2) move; Absorb events keep E1 + E2 = E0 exactly,
            // Scatter events keep E2 inside the kinematic bound.
            {
                Adapter& ad = adapt["energy"];
                EventState p = s;
                p.E1 = rng.truncated_normal(s.E1, step_e, 0.0, e1_cap);
                double log_q_fwd = log_truncated_normal_pdf(p.E1, s.E1, step_e, 0.0, e1_cap);
                double log_q_rev = log_truncated_normal_pdf(s.E1, p.E1, step_e, 0.0, e1_cap);
                if (p.kind == SecondKind::Absorb) {
                    p.E2 = config.E0 - p.E1;
                } else {
                    double hi_fwd = max_deposit(config.E0 - p.E1);
                    double hi_rev = max_deposit(config.E0 - s.E1);
                    double center = std::min(s.E2, hi_fwd * (1.0 - 1e-12));
                    p.E2 = rng.truncated_normal(center, step_e, 0.0, hi_fwd);
                    log_q_fwd += log_truncated_normal_pdf(p.E2, center, step_e, 0.0, hi_fwd);
                    double rev_center = std::min(p.E2, hi_rev * (1.0 - 1e-12));
                    log_q_rev += log_truncated_normal_pdf(s.E2, rev_center, step_e, 0.0, hi_rev);
                }
                p.log_fwd = c.log_fwd(p);
                p.log_noise = c.log_noise(p, n);
                bool acc = mh_accept(p.log_fwd + p.log_noise - s.log_fwd - s.log_noise +
                                         log_q_rev - log_q_fwd,
                                     rng);
                if (acc) s = p;
                ad.record(acc, adapting);
            }

            // Latent direction moves (symmetric vMF proposal). Repeated hits
            // speed up the slow slide of each direction along its cone arc.
            for (int hit = 0; hit < 2; ++hit) {
                Adapter& ad = adapt["dir"];
                EventState p = s;
                p.dir = rng.vmf(s.dir, kap_dir);
                p.log_fwd = c.log_fwd(p);
                p.log_mix = c.log_mix(p.dir);
                bool acc = mh_accept(p.log_fwd + p.log_mix - s.log_fwd - s.log_mix, rng);
                if (acc) s = p;
                ad.record(acc, adapting);
            }

            // Cone-circle jump (Metropolized independence proposal).
            if (!jump_centers[n].empty()) {
                Adapter& ad = adapt["dir_jump"];
                const std::vector<Vec3>& cs = jump_centers[n];
                int pick = std::min<int>(static_cast<int>(cs.size()) - 1,
                                         static_cast<int>(rng.uniform() * cs.size()));
                EventState p = s;
                p.dir = rng.vmf(cs[pick], kap_jump);
                p.log_fwd = c.log_fwd(p);
                p.log_mix = c.log_mix(p.dir);
                double delta = p.log_fwd + p.log_mix - s.log_fwd - s.log_mix +
                               log_q_jump(n, s.dir) - log_q_jump(n, p.dir);
                bool acc = mh_accept(delta, rng);
                if (acc) s = p;
                ad.record(acc, adapting);
            }
        }

        RngStream grng = root.derive("global", static_cast<std::uint64_t>(sweep), 0);

        // Source direction moves (symmetric vMF proposal; flat prior on the
        // sphere, so only the mixture term changes).
        for (int hit = 0; hit < 3; ++hit)
        for (int k = 0; k < K; ++k) {
            Adapter& ad = adapt["src"];
            Vec3 old = c.srcs[k];
            Vec3 prop = grng.vmf(old, kap_src);
            double before = 0.0;
            for (const EventState& s : c.ev) before += s.log_mix;
            c.srcs[k] = prop;
            std::vector<double> new_mix(c.ev.size());
            double after = 0.0;
            for (std::size_t n = 0; n < c.ev.size(); ++n) {
                new_mix[n] = c.log_mix(c.ev[n].dir);
                after += new_mix[n];
            }
            bool acc = mh_accept(after - before, grng);
            if (acc)
                for (std::size_t n = 0; n < c.ev.size(); ++n) c.ev[n].log_mix = new_mix[n];
            else
                c.srcs[k] = old;
            ad.record(acc, adapting);
        }

        // Global rotation move: rigidly rotate every source and every latent
        // direction by the same small rotation. Relative angles are
        // preserved, so the mixture and noise terms cancel and the move is
        // driven purely by the event likelihoods. Axis uniform on the
        // sphere, angle zero-mean Gaussian: the proposal is symmetric. This
        // decorrelates the slow collective drift of the whole constellation.
        for (int r = 0; r < 3; ++r) {
            Adapter& ad = adapt["rotation"];
            Vec3 axis = grng.uniform_sphere();
            double theta = grng.normal(0.0, step_rot);
            double ct = std::cos(theta), st = std::sin(theta);
            double delta = 0.0;
            std::vector<Vec3> new_dirs(c.ev.size());
            std::vector<double> new_fwd(c.ev.size());
            for (std::size_t n = 0; n < c.ev.size(); ++n) {
                EventState p = c.ev[n];
                p.dir = rotate_about(p.dir, axis, ct, st).normalized();
                new_dirs[n] = p.dir;
                new_fwd[n] = c.log_fwd(p);
                delta += new_fwd[n] - c.ev[n].log_fwd;
            }
            bool acc = mh_accept(delta, grng);
            if (acc) {
                for (int k = 0; k < K; ++k)
                    c.srcs[k] = rotate_about(c.srcs[k], axis, ct, st).normalized();
                for (std::size_t n = 0; n < c.ev.size(); ++n) {
                    c.ev[n].dir = new_dirs[n];
                    c.ev[n].log_fwd = new_fwd[n];
                }
            }
            ad.record(acc, adapting);
        }

        // Weight moves: shift mass between each source and the outlier class
        // with a truncated-normal proposal on the two-component margin.
        for (int k = 1; k <= K; ++k) {
            Adapter& ad = adapt["w"];
            double budget = c.w[0] + c.w[k];
            double wk_new = grng.truncated_normal(c.w[k], step_w, 0.0, budget);
            double log_q_fwd = log_truncated_normal_pdf(wk_new, c.w[k], step_w, 0.0, budget);
            double log_q_rev = log_truncated_normal_pdf(c.w[k], wk_new, step_w, 0.0, budget);
            std::vector<double> old_w = c.w;
            double before = c.log_weight_prior();
            for (const EventState& s : c.ev) before += s.log_mix;
            c.w[k] = wk_new;
            c.w[0] = budget - wk_new;
            c.sync_src_w();
            double after = c.log_weight_prior();
            std::vector<double> new_mix(c.ev.size());
            for (std::size_t n = 0; n < c.ev.size(); ++n) {
                new_mix[n] = c.log_mix(c.ev[n].dir);
                after += new_mix[n];
            }
            bool acc = mh_accept(after - before + log_q_rev - log_q_fwd, grng);
            if (acc) {
                for (std::size_t n = 0; n < c.ev.size(); ++n) c.ev[n].log_mix = new_mix[n];
            } else {
                c.w = old_w;
                c.sync_src_w();
            }
            ad.record(acc, adapting);
        }

        // Noise-scale moves (symmetric Gaussian, uniform priors).
        for (int which = 0; which < 3; ++which) {
            const char* name = which == 0 ? "sigma_xy" : which == 1 ? "sigma_z" : "sigma_e";
            Adapter& ad = adapt[name];
            double step = which == 0 ? step_sxy : which == 1 ? step_sz : step_se;
            double lo = which == 0 ? config.sigma_xy_lo
                        : which == 1 ? config.sigma_z_lo
                                     : config.sigma_e_lo;
            double hi = which == 0 ? config.sigma_xy_hi
                        : which == 1 ? config.sigma_z_hi
                                     : config.sigma_e_hi;
            double cur = which == 0 ? c.sigma_xy : which == 1 ? c.sigma_z : c.sigma_e;
            double prop = cur + grng.normal(0.0, step);
            bool acc = false;
            if (prop >= lo && prop <= hi) {
                double sxy = which == 0 ? prop : c.sigma_xy;
                double sz = which == 1 ? prop : c.sigma_z;
                double se = which == 2 ? prop : c.sigma_e;
                double before = 0.0, after = 0.0;
                std::vector<double> new_noise(c.ev.size());
                for (std::size_t n = 0; n < c.ev.size(); ++n) {
                    before += c.ev[n].log_noise;
                    new_noise[n] = c.log_noise(c.ev[n], n, sxy, sz, se);
                    after += new_noise[n];
                }
                acc = mh_accept(after - before, grng);
                if (acc) {
                    c.sigma_xy = sxy;
                    c.sigma_z = sz;
                    c.sigma_e = se;
                    for (std::size_t n = 0; n < c.ev.size(); ++n)
                        c.ev[n].log_noise = new_noise[n];
                }
            }
            ad.record(acc, adapting);
        }

        if (sweep >= config.burn_in) {
            GibbsSample sample;
            sample.r0 = c.srcs;
            sample.w = c.w;
            sample.sigma_xy = c.sigma_xy;
            sample.sigma_z = c.sigma_z;
            sample.sigma_e = c.sigma_e;
            sample.log_post = c.total_log_post();
            result.samples.push_back(std::move(sample));
        }
    }

    for (auto& [name, ad] : adapt) {
        result.diagnostics.acceptance[name] = ad.rate();
        result.diagnostics.final_step[name] = *ad.scale;
    }
    result.event_directions.reserve(c.ev.size());
    for (const EventState& s : c.ev) result.event_directions.push_back(s.dir);
    result.diagnostics.seconds =
        std::chrono::duration<double>(std::chrono::steady_clock::now() - t_start).count();
    return result;
}

void write_chain_csv(const std::string& path, const GibbsResult& result, int source,
                     int sweep_offset) {
    std::ofstream f(path);
    if (!f) throw std::runtime_error("cannot write chain: " + path);
    f << "sweep,ux,uy,uz\n";
    for (std::size_t i = 0; i < result.samples.size(); ++i) {
        const Vec3& u = result.samples[i].r0.at(source);
        f << sweep_offset + static_cast<int>(i) << ',' << u.x << ',' << u.y << ',' << u.z
          << '\n';
    }
    if (!f) throw std::runtime_error("failed writing chain: " + path);
}

}  // namespace ci
