// Acceptance gate: one test case per acceptance criterion; each prints a
// single "criterion N: PASS/FAIL" line with the key measured numbers.
#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <map>
#include <string>
#include <vector>

#include "ci/analysis.hpp"
#include "ci/energy_em.hpp"
#include "ci/forward.hpp"
#include "ci/geometry.hpp"
#include "ci/localize.hpp"
#include "ci/physics.hpp"
#include "ci/random.hpp"
#include "ci/sha256.hpp"
#include "ci/simulate.hpp"

namespace fs = std::filesystem;
using namespace ci;

namespace {

constexpr double kE0 = 0.6617;
constexpr double kRadius = 300.0;

const DetectorArray& paper_array() {
    static DetectorArray a = DetectorArray::paper_4x7();
    return a;
}

const AttenuationTable& lyso() {
    static AttenuationTable t = AttenuationTable::load_csv("data/lyso_attenuation.csv");
    return t;
}

double now_seconds() {
    using clock = std::chrono::steady_clock;
    static const clock::time_point t0 = clock::now();
    return std::chrono::duration<double>(clock::now() - t0).count();
}

// Default-configuration direction-prior LUT shared by criteria 1, 6 and 8.
// Cached on disk so repeated suite runs skip the ~minute-long build.
const DirectionPriorLut& shared_lut() {
    static DirectionPriorLut lut = [] {
        const char* cache = "/tmp/ci_acceptance_default_lut_seed11.bin";
        if (fs::exists(cache)) {
            try {
                return DirectionPriorLut::load(cache);
            } catch (const std::exception&) {
                // stale or truncated cache; rebuild below
            }
        }
        DirectionPriorLut::Config cfg;  // 2563 nodes, 10000 samples, 2000 kept
        DirectionPriorLut built = DirectionPriorLut::build(paper_array(), lyso(), kE0,
                                                           SphereModel{kRadius}, cfg, 11);
        built.save(cache);
        return built;
    }();
    return lut;
}

double median_of(std::vector<double> v) {
    std::sort(v.begin(), v.end());
    std::size_t n = v.size();
    return n % 2 ? v[n / 2] : 0.5 * (v[n / 2 - 1] + v[n / 2]);
}

void report(int criterion, bool ok, const std::string& detail) {
    std::printf("criterion %d: %s (%s)\n", criterion, ok ? "PASS" : "FAIL", detail.c_str());
    std::fflush(stdout);
}

}  // namespace

// ---------------------------------------------------------------------------
TEST_CASE("criterion 1: stage density normalization") {
    const DetectorArray& array = paper_array();
    const AttenuationTable& table = lyso();
    const DirectionPriorLut& lut = shared_lut();  // build excluded from the timing below
    double t0 = now_seconds();
    double worst = 0.0;
    auto track = [&worst](double integral) {
        worst = std::max(worst, std::abs(integral - 1.0));
        return integral;
    };

    // Path density over (0, d_max).
    {
        double mu = table.mu(MuKind::Total, kE0), d_max = 12.0;
        int n = 200000;
        double h = d_max / n, sum = 0.0;
        for (int i = 1; i < n; ++i) sum += std::exp(log_path_density(mu, i * h, d_max));
        track(sum * h);
    }
    // Klein-Nishina deposit density over its support.
    {
        double hi = max_deposit(kE0) - 1e-12;
        int n = 200000;
        double h = hi / n, sum = 0.5 * kn_deposit_density(kE0, hi);
        for (int i = 1; i < n; ++i) sum += kn_deposit_density(kE0, i * h);
        track(sum * h);
    }
    // Scatter-direction density in the (psi, phi) coordinate measure; the
    // density has no phi dependence, so the phi integral is a 2*pi factor.
    {
        Vec3 theta1 = Vec3{0.3, -0.2, 0.9}.normalized();
        double E1 = deposit_for_angle(kE0, 0.9);
        int n = 200000;
        double h = M_PI / n, sum = 0.0;
        for (int i = 1; i < n; ++i) {
            Vec3 theta2 = from_cone_angles(theta1, std::cos(i * h), 1.3);
            sum += scatter_direction_density(theta1, theta2, kE0, E1, 400.0);
        }
        track(2.0 * M_PI * sum * h);
    }
    // Position-noise density over the containing sensor.
    {
        const Sensor& s = array.sensors()[10];
        Vec3 true_p = s.center + Vec3{0.8, -0.4, 1.5};
        NoiseScales scales{0.43, 0.72, 0.029};
        int nx = 100, ny = 100, nz = 220;
        double zlo = std::max(s.center.z - s.half_extents.z, true_p.z - 6.0 * scales.sigma_z);
        double zhi = std::min(s.center.z + s.half_extents.z, true_p.z + 6.0 * scales.sigma_z);
        double hx = 2.0 * s.half_extents.x / nx, hy = 2.0 * s.half_extents.y / ny,
               hz = (zhi - zlo) / nz;
        double sum = 0.0;
        for (int i = 0; i < nx; ++i)
            for (int j = 0; j < ny; ++j)
                for (int k = 0; k < nz; ++k) {
                    Vec3 obs{s.center.x - s.half_extents.x + (i + 0.5) * hx,
                             s.center.y - s.half_extents.y + (j + 0.5) * hy,
                             zlo + (k + 0.5) * hz};
                    sum += position_noise_density(array, true_p, obs, scales);
                }
        track(sum * hx * hy * hz);
    }
    // Energy-noise density over obs >= 0.
    {
        double true_E = 0.21, sigma = 0.029;
        int n = 200000;
        double hi = true_E + 8.0 * sigma, h = hi / n, sum = 0.0;
        for (int i = 1; i < n; ++i) sum += energy_noise_density(true_E, i * h, sigma);
        track(sum * h);
    }
    // Virtual-source mixture prior over the sphere (lat-lon quadrature).
    {
        std::vector<Vec3> sources{from_lon_lat_deg(0.0, 0.0), from_lon_lat_deg(120.0, 0.0)};
        std::vector<double> weights{0.4, 0.35};
        int nt = 1600, np = 1600;
        double ht = M_PI / nt, hp = 2.0 * M_PI / np, sum = 0.0;
        for (int i = 0; i < nt; ++i) {
            double theta = (i + 0.5) * ht, st = std::sin(theta), ct = std::cos(theta);
            double row = 0.0;
            for (int j = 0; j < np; ++j) {
                double phi = (j + 0.5) * hp;
                Vec3 u{st * std::cos(phi), st * std::sin(phi), ct};
                row += prior_virtual_source(u, sources, weights, 80.0);
            }
            sum += row * st;
        }
        track(sum * ht * hp);
    }
    // Exact direction prior: deterministic in-cap quadrature (density is
    // zero off the bounding cone, so the cap integral is the full integral).
    double exact_prior_integral;
    {
        ExactDirectionPrior prior(array, table, kE0);
        Vec3 r0 = from_lon_lat_deg(25.0, -10.0) * kRadius;
        BoundingCone cone = array.bounding_cone(r0);
        int n = 4000000;
        double span = 1.0 - cone.cos_half_angle;
        double cap_omega = 2.0 * M_PI * span;
        double golden = M_PI * (3.0 - std::sqrt(5.0)), sum = 0.0;
        for (int i = 0; i < n; ++i) {
            double c = 1.0 - (i + 0.5) / n * span;
            Vec3 dir = from_cone_angles(cone.axis, c, std::fmod(golden * i, 2.0 * M_PI));
            sum += prior.density(r0, dir);
        }
        exact_prior_integral = track(sum * cap_omega / n);
    }
    // LUT direction prior at a node: sphere quadrature of the KDE, 2e-2.
    double lut_integral;
    {
        int node = lut.nearest_node(from_lon_lat_deg(0.0, 0.0));
        std::vector<Vec3> quad = fibonacci_sphere(20000);
        double sum = 0.0;
        for (const Vec3& u : quad) sum += std::exp(lut.log_density_at_node(node, u));
        lut_integral = sum * 4.0 * M_PI / quad.size();
        // reported separately against its own tolerance
    }

    double elapsed = now_seconds() - t0;
    bool ok = worst <= 1e-3 && std::abs(lut_integral - 1.0) <= 2e-2 && elapsed < 60.0;
    char buf[256];
    std::snprintf(buf, sizeof buf,
                  "max |integral-1| = %.2e, exact prior %.6f, lut %.4f, %.1f s", worst,
                  exact_prior_integral, lut_integral, elapsed);
    report(1, ok, buf);
    CHECK(ok);
}

// ---------------------------------------------------------------------------
TEST_CASE("criterion 2: closed-form antiderivative vs quadrature") {
    // Independent re-derivation of the deposit integrand, including the
    // angle-to-deposit Jacobian constant.
    auto kernel = [](double E0, double x) {
        double lam = (E0 - x) / E0;
        double c = 1.0 - (kMc2 / E0) * x / (E0 - x);
        return kMc2 / (E0 * E0) * (lam + x / (E0 - x) + c * c);
    };
    RngStream rng(31);
    double worst = 0.0;
    for (double E0 : {0.3, 0.6617, 1.0}) {
        double hi = max_deposit(E0);
        for (int rep = 0; rep < 50; ++rep) {
            double a = rng.uniform(1e-6, hi - 1e-6);
            double b = rng.uniform(1e-6, hi - 1e-6);
            if (a > b) std::swap(a, b);
            if (b - a < 1e-4) b = std::min(hi - 1e-6, a + 1e-4);
            int n = 1000000;
            double h = (b - a) / n;
            double sum = 0.5 * (kernel(E0, a) + kernel(E0, b));
            for (int i = 1; i < n; ++i) sum += kernel(E0, a + i * h);
            double quad = sum * h;
            double closed = kn_antiderivative(E0, b) - kn_antiderivative(E0, a);
            worst = std::max(worst, std::abs(closed - quad) / std::abs(quad));
        }
    }
    bool ok = worst <= 1e-6;
    char buf[128];
    std::snprintf(buf, sizeof buf, "max relative error = %.2e over 150 intervals", worst);
    report(2, ok, buf);
    CHECK(ok);
}

// ---------------------------------------------------------------------------
TEST_CASE("criterion 3: transport fidelity") {
    double t0 = now_seconds();
    const DetectorArray& array = paper_array();
    const AttenuationTable& table = lyso();
    Vec3 r0 = from_lon_lat_deg(0.0, 0.0) * kRadius;
    RngStream rng(2203);
    int n_photons = 100000, completed = 0, scatter_second = 0;
    std::vector<double> first_deposits;
    first_deposits.reserve(n_photons);
    for (int i = 0; i < n_photons; ++i) {
        TransportRecord rec = transport_photon(array, table, r0, kE0, rng);
        if (rec.outcome != TransportRecord::Outcome::AbsorbedFirst)
            first_deposits.push_back(rec.E1);
        if (rec.outcome == TransportRecord::Outcome::Completed) {
            ++completed;
            if (rec.event.second_kind == SecondKind::Scatter) ++scatter_second;
        }
    }
    double p_cs = static_cast<double>(scatter_second) / completed;

    // Chi-square of the first-deposit marginal against the Klein-Nishina
    // density, 40 equal-probability bins (critical value 62.43 at 1%, 39 df).
    int n_bins = 40;
    std::vector<double> edges(n_bins + 1);
    edges[0] = 0.0;
    edges[n_bins] = max_deposit(kE0);
    for (int k = 1; k < n_bins; ++k)
        edges[k] = kn_sample_deposit(kE0, static_cast<double>(k) / n_bins);
    std::vector<int> counts(n_bins, 0);
    for (double e : first_deposits) {
        int k = static_cast<int>(std::upper_bound(edges.begin(), edges.end(), e) -
                                 edges.begin()) - 1;
        counts[std::clamp(k, 0, n_bins - 1)]++;
    }
    double expected = static_cast<double>(first_deposits.size()) / n_bins, chi2 = 0.0;
    for (int c : counts) chi2 += (c - expected) * (c - expected) / expected;

    double elapsed = now_seconds() - t0;
    bool ok = std::abs(p_cs - 0.1615) <= 0.03 && chi2 < 62.43 && elapsed < 120.0;
    char buf[160];
    std::snprintf(buf, sizeof buf, "p_CS = %.4f (target 0.1615 +- 0.03), chi2 = %.1f < 62.43, %.1f s",
                  p_cs, chi2, elapsed);
    report(3, ok, buf);
    CHECK(ok);
}

// ---------------------------------------------------------------------------
TEST_CASE("criterion 4: EM at desk scale") {
    double t0 = now_seconds();
    SimConfig sim;
    sim.sources.push_back({from_lon_lat_deg(0.0, 0.0), 1.0});
    sim.n_events = 2000;
    sim.seed = 404;
    std::vector<NoisyEvent> events = generate_events(paper_array(), lyso(), sim);
    std::vector<double> sums;
    int truth_scatter = 0;
    for (const NoisyEvent& e : events) {
        sums.push_back(e.first.deposit + e.second.deposit);
        if (e.truth->kind == SecondKind::Scatter) ++truth_scatter;
    }
    double sim_p_cs = static_cast<double>(truth_scatter) / sums.size();

    EmResult r = run_em(sums);
    int miscls = 0;
    for (std::size_t n = 0; n < events.size(); ++n) {
        bool said_absorb = r.responsibility[n] >= 0.5;
        if (said_absorb != (events[n].truth->kind == SecondKind::Absorb)) ++miscls;
    }
    // The noise acts per deposit, so the summed energy carries sqrt(2) * sigma_E.
    double injected_sigma = std::sqrt(2.0) * sim.noise.sigma_E;
    double elapsed = now_seconds() - t0;
    bool ok = std::abs(r.E0 - 0.6617) <= 0.02 &&
              std::abs(r.sigma - injected_sigma) <= 0.005 &&
              std::abs((1.0 - r.p_absorb) - sim_p_cs) <= 0.03 &&
              miscls <= static_cast<int>(events.size()) / 100 &&
              r.loglik_trace.size() <= 10 && !r.degenerate_fallback && elapsed < 300.0;
    char buf[200];
    std::snprintf(buf, sizeof buf,
                  "E0 = %.4f, sigma = %.4f (inj %.4f), p_CS = %.4f (sim %.4f), "
                  "miscls %d/2000, %zu iters, %.1f s",
                  r.E0, r.sigma, injected_sigma, 1.0 - r.p_absorb, sim_p_cs, miscls,
                  r.loglik_trace.size(), elapsed);
    report(4, ok, buf);
    CHECK(ok);
}

// ---------------------------------------------------------------------------
TEST_CASE("criterion 5: sampler correctness") {
    double t0 = now_seconds();
    // (a) Two-state Metropolis chain with a flip proposal; occupancy of the
    // smaller state vs its stationary probability within 3 binomial sigma
    // (the flip chain is anticorrelated, so this bound is conservative).
    bool ok_a;
    double occ_a, p1 = 0.35;
    {
        RngStream rng(501);
        double logpi[2] = {std::log(0.65), std::log(p1)};
        int state = 0;
        long hits = 0;
        int steps = 100000;
        for (int i = 0; i < steps; ++i) {
            int prop = 1 - state;
            if (mh_step(logpi[state], logpi[prop], 0.0, 0.0, rng)) state = prop;
            hits += state;
        }
        occ_a = static_cast<double>(hits) / steps;
        double sigma = std::sqrt(p1 * (1.0 - p1) / steps);
        ok_a = std::abs(occ_a - p1) <= 3.0 * sigma;
    }

    // (b) Frozen-latent toy: one simulated noise-free event, the virtual
    // source restricted to two candidate directions. Long-run occupancy vs
    // the exactly enumerated posterior odds.
    const DetectorArray& array = paper_array();
    const AttenuationTable& table = lyso();
    ExactDirectionPrior prior(array, table, kE0);
    Vec3 sA = from_lon_lat_deg(0.0, 0.0);
    RngStream rng(502);
    Event frozen{};
    bool have_event = false;
    while (!have_event) {
        TransportRecord rec = transport_photon(array, table, sA * kRadius, kE0, rng);
        if (rec.outcome == TransportRecord::Outcome::Completed) {
            frozen = rec.event;
            have_event = true;
        }
    }
    ForwardParams params;
    std::vector<Vec3> cand{sA, sA};
    std::vector<double> wts{0.45, 0.45};
    auto target = [&](const Vec3& s) {
        return event_log_likelihood(array, table, prior, s * kRadius, kE0, frozen, params) +
               std::log(prior_virtual_source(s, cand, wts, 80.0));
    };
    // Pick a second candidate whose posterior is comparable to sA's, so the
    // occupancy estimate has usable statistics.
    Vec3 sB = sA;
    double best_gap = 1e30;
    for (double delta : {0.005, 0.01, 0.02, 0.04, 0.07, 0.1}) {
        for (double az : {0.0, M_PI / 2, M_PI, 3 * M_PI / 2}) {
            Vec3 c = from_cone_angles(sA, std::cos(delta), az);
            cand[1] = c;
            double gap = std::abs(target(c) - target(sA));
            if (gap < best_gap) {
                best_gap = gap;
                sB = c;
            }
        }
    }
    cand[1] = sB;
    double logA = target(sA), logB = target(sB);
    double pB = 1.0 / (1.0 + std::exp(logA - logB));
    int state = 0;
    long hitsB = 0;
    int steps = 100000;
    double logt[2] = {logA, logB};
    for (int i = 0; i < steps; ++i) {
        int prop = 1 - state;
        if (mh_step(logt[state], logt[prop], 0.0, 0.0, rng)) state = prop;
        hitsB += state;
    }
    double occ_b = static_cast<double>(hitsB) / steps;
    bool ok_b = std::abs(occ_b - pB) / pB <= 0.05;

    double elapsed = now_seconds() - t0;
    bool ok = ok_a && ok_b && elapsed < 300.0;
    char buf[200];
    std::snprintf(buf, sizeof buf,
                  "(a) occupancy %.4f vs 0.3500; (b) occupancy %.4f vs exact %.4f, %.1f s",
                  occ_a, occ_b, pB, elapsed);
    report(5, ok, buf);
    CHECK(ok);
}

// ---------------------------------------------------------------------------
TEST_CASE("criterion 6: single-source localization desk run") {
    double t0 = now_seconds();
    const DetectorArray& array = paper_array();
    const AttenuationTable& table = lyso();
    TabulatedConePrior prior(array, table, kE0, shared_lut());
    SphereModel sphere{kRadius};
    Vec3 truth = from_lon_lat_deg(0.0, 0.0);
    SphereGrid grid(2562);

    std::vector<double> gibbs_err, bp_err;
    for (int rep = 0; rep < 10; ++rep) {
        SimConfig sim;
        sim.sources.push_back({truth, 1.0});
        sim.n_events = 10;
        sim.seed = 6000 + rep;
        std::vector<NoisyEvent> events = generate_events(array, table, sim);
        std::vector<SecondKind> kinds;
        for (const NoisyEvent& e : events) kinds.push_back(e.truth->kind);

        GibbsConfig cfg;  // sweeps 10000, burn-in 2000
        cfg.seed = 6100 + rep;
        std::vector<Vec3> init = init_source_directions(array, sphere, events, kE0, 1);
        GibbsResult r = run_gibbs(array, table, prior, events, kinds, cfg, &init);
        std::vector<Vec3> chain;
        chain.reserve(r.samples.size());
        for (const GibbsSample& s : r.samples) chain.push_back(s.r0[0]);
        Vec3 mean = spherical_mean(chain);
        gibbs_err.push_back(geodesic_distance(sphere, mean * kRadius, truth * kRadius));

        std::vector<double> image = back_project(grid, sphere, events, kE0);
        Vec3 mode = bp_modes(grid, image, 1)[0];
        bp_err.push_back(geodesic_distance(sphere, mode * kRadius, truth * kRadius));
    }
    double gm = median_of(gibbs_err), bm = median_of(bp_err);
    double elapsed = now_seconds() - t0;
    bool ok = gm <= 100.0 && gm <= bm && elapsed < 1800.0;
    char buf[160];
    std::snprintf(buf, sizeof buf,
                  "gibbs median %.1f mm (<= 100), bp median %.1f mm, %.0f s", gm, bm, elapsed);
    report(6, ok, buf);
    CHECK(ok);
}

// ---------------------------------------------------------------------------
TEST_CASE("criterion 7: credible calibration") {
    double t0 = now_seconds();
    RngStream rng(707);
    int repeats = 100;
    std::vector<int> hits(9, 0);
    for (int rep = 0; rep < repeats; ++rep) {
        Vec3 m = rng.uniform_sphere();
        double kappa = 150.0;
        Vec3 truth = rng.vmf(m, kappa);
        std::vector<Vec3> samples(2000);
        for (Vec3& s : samples) s = rng.vmf(m, kappa);
        for (int a = 1; a <= 9; ++a) {
            CredibleRegion cr = credible_region(samples, a / 10.0);
            if (angle_between(cr.center, truth) <= cr.radius) hits[a - 1]++;
        }
    }
    double worst = 0.0;
    for (int a = 1; a <= 9; ++a)
        worst = std::max(worst,
                         std::abs(static_cast<double>(hits[a - 1]) / repeats - a / 10.0));
    double elapsed = now_seconds() - t0;
    bool ok = worst <= 0.1 && elapsed < 600.0;
    char buf[128];
    std::snprintf(buf, sizeof buf, "max |coverage - nominal| = %.3f over 9 levels, %.1f s",
                  worst, elapsed);
    report(7, ok, buf);
    CHECK(ok);
}

// ---------------------------------------------------------------------------
TEST_CASE("criterion 8: two-source desk run") {
    double t0 = now_seconds();
    const DetectorArray& array = paper_array();
    const AttenuationTable& table = lyso();
    TabulatedConePrior prior(array, table, kE0, shared_lut());
    SphereModel sphere{kRadius};
    Vec3 tA = from_lon_lat_deg(0.0, 0.0), tB = from_lon_lat_deg(120.0, 0.0);

    int successes = 0;
    double last_eA = -1.0, last_eB = -1.0;
    for (int rep = 0; rep < 10; ++rep) {
        SimConfig sim;
        sim.sources.push_back({tA, 1.0});
        sim.sources.push_back({tB, 1.0});
        sim.n_events = 20;
        sim.seed = 8000 + rep;
        std::vector<NoisyEvent> events = generate_events(array, table, sim);
        std::vector<SecondKind> kinds;
        for (const NoisyEvent& e : events) kinds.push_back(e.truth->kind);

        GibbsConfig cfg;
        cfg.n_sources = 2;
        cfg.sweeps = 4000;
        cfg.burn_in = 1000;
        cfg.init_source_weight = 0.98;
        cfg.seed = 8100 + rep;
        std::vector<Vec3> init = init_source_directions(array, sphere, events, kE0, 2);
        try {
            GibbsResult r = run_gibbs(array, table, prior, events, kinds, cfg, &init);
            std::vector<Vec3> pool;
            for (const GibbsSample& s : r.samples) {
                pool.push_back(s.r0[0]);
                pool.push_back(s.r0[1]);
            }
            Vec3 centers[2];
            std::vector<int> labels = deentangle(pool, centers);
            std::vector<Vec3> c0, c1;
            for (std::size_t i = 0; i < pool.size(); ++i)
                (labels[i] == 0 ? c0 : c1).push_back(pool[i]);
            Vec3 m0 = spherical_mean(c0), m1 = spherical_mean(c1);
            // Best pairing of recovered means to truths.
            double d00 = geodesic_distance(sphere, m0 * kRadius, tA * kRadius);
            double d01 = geodesic_distance(sphere, m0 * kRadius, tB * kRadius);
            double d10 = geodesic_distance(sphere, m1 * kRadius, tA * kRadius);
            double d11 = geodesic_distance(sphere, m1 * kRadius, tB * kRadius);
            double eA, eB;
            if (std::max(d00, d11) <= std::max(d01, d10)) {
                eA = d00;
                eB = d11;
            } else {
                eA = d10;
                eB = d01;
            }
            last_eA = eA;
            last_eB = eB;
            if (eA <= 150.0 && eB <= 150.0) ++successes;
        } catch (const std::exception&) {
            // degenerate de-entangling counts as a failed repeat
        }
    }
    double elapsed = now_seconds() - t0;
    bool ok = successes >= 7 && elapsed < 3600.0;
    char buf[160];
    std::snprintf(buf, sizeof buf, "%d/10 repeats within 150 mm (last errors %.0f / %.0f mm), %.0f s",
                  successes, last_eA, last_eB, elapsed);
    report(8, ok, buf);
    CHECK(ok);
}

// ---------------------------------------------------------------------------
TEST_CASE("criterion 9: LUT accuracy and speed") {
    const DetectorArray& array = paper_array();
    const AttenuationTable& table = lyso();
    // Fixed kernel width and matched sample counts on both sides, so the
    // comparison measures tabulation error rather than bandwidth selection.
    DirectionPriorLut::Config cfg;
    cfg.n_nodes = 16;
    cfg.n_samples = 100000;
    cfg.kept_samples = 100000;
    cfg.kde_kappa = 400.0;
    DirectionPriorLut lut =
        DirectionPriorLut::build(array, table, kE0, SphereModel{kRadius}, cfg, 909);

    int node = lut.nearest_node(from_lon_lat_deg(0.0, 0.0));
    Vec3 origin_dir = lut.nodes()[node];
    Vec3 r0 = origin_dir * lut.source_radius();

    // Fresh rejection sampling from the same origin, timed as the cost of
    // rebuilding the node.
    double t_build0 = now_seconds();
    RngStream rng(910);
    int n_fresh = 100000;
    std::vector<Vec3> fresh(n_fresh);
    for (Vec3& v : fresh) v = sample_first_direction(array, table, r0, kE0, rng);
    double rebuild_seconds = now_seconds() - t_build0;

    double kappa = cfg.kde_kappa;
    double log_c = std::log(kappa) - std::log(2.0 * M_PI) - kappa;  // log(kappa/(4 pi sinh))
    auto fresh_density = [&](const Vec3& u) {
        double sum = 0.0;
        for (const Vec3& v : fresh) sum += std::exp(log_c + kappa * v.dot(u));
        return sum / n_fresh;
    };

    BoundingCone cone = array.bounding_cone(r0);
    double span = 1.0 - cone.cos_half_angle;
    double golden = M_PI * (3.0 - std::sqrt(5.0));
    int n_probe = 400;
    std::vector<Vec3> probes(n_probe);
    for (int i = 0; i < n_probe; ++i)
        probes[i] = from_cone_angles(cone.axis, 1.0 - (i + 0.5) / n_probe * span,
                                     std::fmod(golden * i, 2.0 * M_PI));
    std::vector<double> f(n_probe), g(n_probe);
    double fmax = 0.0;
    for (int i = 0; i < n_probe; ++i) {
        f[i] = fresh_density(probes[i]);
        g[i] = std::exp(lut.log_density_at_node(node, probes[i]));
        fmax = std::max(fmax, f[i]);
    }
    double worst = 0.0;
    int compared = 0;
    for (int i = 0; i < n_probe; ++i) {
        if (f[i] < 0.25 * fmax) continue;  // compare where the prior has mass
        worst = std::max(worst, std::abs(g[i] - f[i]) / f[i]);
        ++compared;
    }

    double t_q0 = now_seconds();
    int n_query = 200;
    double sink = 0.0;
    for (int i = 0; i < n_query; ++i) sink += lut.log_density(origin_dir, probes[i % n_probe]);
    if (!std::isfinite(sink)) std::printf("unexpected non-finite query sum\n");
    double query_seconds = (now_seconds() - t_q0) / n_query;

    bool ok = worst <= 0.05 && rebuild_seconds >= 10.0 * query_seconds && compared >= 30;
    char buf[200];
    std::snprintf(buf, sizeof buf,
                  "max relative error %.3f over %d probes; query %.3f ms vs rebuild %.2f s (%.0fx)",
                  worst, compared, query_seconds * 1e3, rebuild_seconds,
                  rebuild_seconds / query_seconds);
    report(9, ok, buf);
    CHECK(ok);
}

// ---------------------------------------------------------------------------
TEST_CASE("criterion 10: CLI determinism") {
    fs::path root = "/tmp/ci_acceptance_cli";
    fs::remove_all(root);
    fs::create_directories(root);
    fs::path out = root / "out";
    fs::path cfg_path = root / "config.json";
    {
        std::ofstream f(cfg_path);
        f << R"({
  "seed": 42,
  "out_dir": ")" << out.string() << R"(",
  "n_events": 150,
  "sources": [{"lon_deg": 0.0, "lat_deg": 0.0}],
  "lut": {"n_nodes": 64, "n_samples": 4000, "kept_samples": 1500},
  "gibbs": {"sweeps": 120, "burn_in": 40},
  "em": {"e0_min": 0.6617, "e0_max": 0.6617, "e0_step": 1.0,
         "sigma_min": 0.041, "sigma_max": 0.041, "sigma_step": 1.0,
         "iterations": 2},
  "bp_pixels": 2562
})";
    }
    std::string env = "COMPTON_LUT_DIR=" + (root / "lut").string() + " ";
    std::string base = env + "\"" + COMPTON_BIN + "\" --config " + cfg_path.string() + " ";
    auto run = [&](const std::string& args) {
        std::string cmd = base + args + " > /dev/null 2>&1";
        return std::system(cmd.c_str());
    };
    auto run_pipeline = [&] {
        if (run("simulate") != 0) return false;
        if (run("em --events " + (out / "events.jsonl").string()) != 0) return false;
        if (run("backproject --events " + (out / "events.jsonl").string()) != 0) return false;
        if (run("localize --events " + (out / "events.jsonl").string() + " --em " +
                (out / "em.json").string()) != 0)
            return false;
        return true;
    };
    std::vector<std::string> files{
        "events.jsonl",        "simulate_stats.json",      "simulate_manifest.json",
        "em.json",             "em_manifest.json",         "bp_image.csv",
        "bp.json",             "backproject_manifest.json", "chain_0.csv",
        "sigma_traces.csv",    "localize_diagnostics.json", "localize_summary.json",
        "localize_manifest.json"};

    bool ran1 = run_pipeline();
    std::map<std::string, std::string> first_hashes;
    if (ran1)
        for (const std::string& name : files)
            first_hashes[name] = sha256_file_hex((out / name).string());
    bool ran2 = ran1 && run_pipeline();
    int mismatches = 0;
    if (ran2)
        for (const std::string& name : files)
            if (sha256_file_hex((out / name).string()) != first_hashes[name]) ++mismatches;

    bool ok = ran1 && ran2 && mismatches == 0;
    char buf[128];
    std::snprintf(buf, sizeof buf, "%s, %d/%zu outputs differ on re-run",
                  ran2 ? "pipeline ran twice" : "pipeline failed", mismatches, files.size());
    report(10, ok, buf);
    CHECK(ok);
}
