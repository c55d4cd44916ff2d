#ifndef CI_LOCALIZE_HPP_
#define CI_LOCALIZE_HPP_

#include <cstdint>
#include <map>
#include <string>
#include <vector>

#include "ci/forward.hpp"
#include "ci/geometry.hpp"
#include "ci/simulate.hpp"

namespace ci {

struct GibbsConfig {
    int n_sources = 1;  // mixture components besides the outlier class
    double E0 = 0.6617;
    double sphere_radius = 300.0;

    // Model hyperparameters.
    double kappa_mix = 80.0;   // concentration of each source's vMF class
    double a = 400.0;          // cone-widening, 1/rad^2
    double a_E = 400.0;        // absorption-delta widening, 1/MeV^2
    std::vector<double> dirichlet_alpha;  // size n_sources + 1; empty -> (1, 50, ...)
    // Uniform prior domains for the noise scales: neighbourhoods of the
    // expected instrument resolutions rather than unconstrained ranges.
    double sigma_xy_lo = 0.1, sigma_xy_hi = 1.5;    // mm
    double sigma_z_lo = 0.1, sigma_z_hi = 2.0;      // mm
    double sigma_e_lo = 0.005, sigma_e_hi = 0.08;   // MeV

    // Chain controls.
    int sweeps = 10000;
    int burn_in = 2000;
    std::uint64_t seed = 1;

    // Initial proposal scales (adapted during burn-in).
    double step_pos = 0.6;          // mm
    double step_energy = 0.02;      // MeV
    double kappa_prop_r0n = 500.0;  // per-event direction proposal
    double kappa_prop_r0k = 3000.0; // source direction proposal
    double step_w = 0.02;
    double step_sigma_pos = 0.05;   // mm
    double step_sigma_e = 0.004;    // MeV
    double step_rotation = 0.05;    // rad, global constellation rotation

    // Initial state.
    double init_source_weight = 0.99;  // total weight shared by the sources
    double init_kappa_spread = 100.0;  // per-event directions around their source
    NoiseScales init_noise{0.6, 0.9, 0.04};
};

struct GibbsSample {
    std::vector<Vec3> r0;     // unit source directions, size n_sources
    std::vector<double> w;    // weights: [outlier, source 1, ...]
    double sigma_xy, sigma_z, sigma_e;
    double log_post;          // unnormalized log posterior
};

struct GibbsDiagnostics {
    std::map<std::string, double> acceptance;  // per move type, post burn-in
    std::map<std::string, double> final_step;
    double seconds = 0.0;
};

struct GibbsResult {
    std::vector<GibbsSample> samples;  // post burn-in, every sweep
    GibbsDiagnostics diagnostics;
    std::vector<Vec3> event_directions;  // final per-event latent directions
};

// One Metropolis-Hastings decision in log space; non-finite proposal targets
// are always rejected.
bool mh_step(double log_target_cur, double log_target_prop, double log_q_fwd, double log_q_rev,
             RngStream& rng);

// Mixture prior of a per-event virtual source direction: vMF class per
// source plus a uniform remainder class; density per steradian.
double prior_virtual_source(const Vec3& r0n, const std::vector<Vec3>& sources,
                            const std::vector<double>& source_weights, double kappa);

// Dirichlet log density over (remainder, w_1 .. w_K) with concentrations
// alpha = (alpha_0, alpha_1 .. alpha_K); -inf on the simplex boundary.
double dirichlet_log_prior(const std::vector<double>& source_weights,
                           const std::vector<double>& alpha);

// Initial source directions from the back-projection image. With several
// sources, candidate local maxima of the image are scored jointly: when a
// direction prior is supplied, by the plug-in event likelihoods, otherwise
// by robust cone residuals.
std::vector<Vec3> init_source_directions(const DetectorArray& array, const SphereModel& sphere,
                                         const std::vector<NoisyEvent>& events, double E0,
                                         int n_sources, const AttenuationTable* table = nullptr,
                                         const DirectionPrior* prior = nullptr);

// Metropolis-within-Gibbs posterior sampling of source directions, mixture
// weights and noise scales, with per-event latent interaction states. The
// second-interaction kind of each event is a fixed input (EM classification
// or truth); Absorb events keep E1 + E2 = E0 exactly.
GibbsResult run_gibbs(const DetectorArray& array, const AttenuationTable& table,
                      const DirectionPrior& prior, const std::vector<NoisyEvent>& events,
                      const std::vector<SecondKind>& kinds, const GibbsConfig& config,
                      const std::vector<Vec3>* init_sources = nullptr);

// Chain trace of one source direction: "sweep,ux,uy,uz" rows.
void write_chain_csv(const std::string& path, const GibbsResult& result, int source,
                     int sweep_offset);

}  // namespace ci

#endif  // CI_LOCALIZE_HPP_
