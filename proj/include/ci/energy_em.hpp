#ifndef CI_ENERGY_EM_HPP_
#define CI_ENERGY_EM_HPP_

#include <vector>

#include "ci/physics.hpp"

namespace ci {

// Density of the summed deposit E1 + E2 for a scatter-scatter event with
// Gaussian noise of scale sigma on the sum: Klein-Nishina chain convolved
// with the noise kernel. Direct double quadrature; n_nodes per axis.
double scatter_sum_density(double e_sum, double E0, double sigma, int n_nodes = 200);

// Gaussian density of the summed deposit for a final photo absorption.
double absorb_sum_density(double e_sum, double E0, double sigma);

struct EmConfig {
    double e0_min = 0.5, e0_max = 1.0, e0_step = 0.02;     // MeV
    double sigma_min = 1e-4, sigma_max = 1e-1, sigma_step = 2e-3;
    int iterations = 10;
    int quad_nodes = 400;   // inner quadrature per axis
    int table_nodes = 600;  // tabulation grid over the summed energy
};

struct EmResult {
    double E0 = 0.0;
    double sigma = 0.0;
    double p_absorb = 0.0;               // mixture weight of the absorb branch
    std::vector<double> responsibility;  // P(absorb | event), per event
    std::vector<double> loglik_trace;    // observed-data log likelihood per iteration
    bool degenerate_fallback = false;    // some event had zero density in both branches
};

// E step: responsibilities of the absorb branch given current parameters.
// Events where both branch densities vanish fall back to 0.5 and set the
// degenerate flag.
std::vector<double> em_e_step(const std::vector<double>& sums, double E0, double sigma,
                              double p_absorb, bool* degenerate, const EmConfig& config);

// Alternating estimate of (E0, sigma, p_absorb) from summed deposits:
// closed-form weight update plus grid argmax of the expected complete-data
// log likelihood; ties break toward smaller E0, then smaller sigma.
EmResult run_em(const std::vector<double>& sums, const EmConfig& config = {});

}  // namespace ci

#endif  // CI_ENERGY_EM_HPP_
