#ifndef CI_FORWARD_HPP_
#define CI_FORWARD_HPP_

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "ci/geometry.hpp"
#include "ci/physics.hpp"
#include "ci/random.hpp"
#include "ci/vec3.hpp"

namespace ci {

struct Interaction {
    Vec3 position;   // mm
    double deposit;  // MeV, > 0
};

enum class SecondKind { Absorb, Scatter };

struct Event {
    Interaction first;
    Interaction second;
    SecondKind second_kind;
};

struct EventTruth {
    int source = -1;  // -1 marks an outlier pairing
    SecondKind kind = SecondKind::Absorb;
    Interaction first;
    Interaction second;
};

struct NoisyEvent {
    Interaction first;
    Interaction second;
    std::optional<EventTruth> truth;
};

struct NoiseScales {
    double sigma_xy;  // mm
    double sigma_z;   // mm
    double sigma_E;   // MeV
};

// Draw a first-interaction direction from the Beer-law prior by rejection:
// propose uniformly in the array's bounding cone from r0, draw a free path
// d = -ln(1-v)/mu, accept when d falls inside the in-material budget.
Vec3 sample_first_direction(const DetectorArray& array, const AttenuationTable& table,
                            const Vec3& r0, double E0, RngStream& rng,
                            std::int64_t max_proposals = 10'000'000);

// First-interaction direction prior f(Theta1 | r0, E0), density per steradian.
class DirectionPrior {
public:
    virtual ~DirectionPrior() = default;
    virtual double log_density(const Vec3& r0, const Vec3& theta1) const = 0;
    double density(const Vec3& r0, const Vec3& theta1) const {
        return std::exp(log_density(r0, theta1));
    }
};

// Direct evaluation: (1 - exp(-mu d_max)) over a quadrature normalizer.
// Slow per fresh origin (one cone quadrature); intended for tests, oracles
// and LUT verification. Normalizers are memoized per origin.
class ExactDirectionPrior : public DirectionPrior {
public:
    ExactDirectionPrior(const DetectorArray& array, const AttenuationTable& table, double E0,
                        int quadrature_points = 20000);
    double log_density(const Vec3& r0, const Vec3& theta1) const override;

private:
    double normalizer(const Vec3& r0) const;

    const DetectorArray& array_;
    double mu_;
    int quad_points_;
    mutable std::vector<std::pair<Vec3, double>> cache_;
};

// Precomputed prior over 2563 source nodes: per node a von Mises-Fisher KDE
// of accepted rejection samples, queried by geodesic nearest node.
class DirectionPriorLut : public DirectionPrior {
public:
    struct Config {
        int n_nodes = 2563;
        int n_samples = 10000;   // accepted draws per node
        int kept_samples = 2000; // retained for the KDE
        double kde_kappa = 0.0;  // 0 = plug-in rule
    };

    static DirectionPriorLut build(const DetectorArray& array, const AttenuationTable& table,
                                   double E0, const SphereModel& sphere, const Config& config,
                                   std::uint64_t seed);

    double log_density(const Vec3& r0, const Vec3& theta1) const override;

    // Node KDE evaluated directly (no nearest-node step).
    double log_density_at_node(int node, const Vec3& theta1) const;
    int nearest_node(const Vec3& direction) const;
    const std::vector<Vec3>& nodes() const { return nodes_; }
    double kde_kappa() const { return kde_kappa_; }
    double source_radius() const { return radius_; }
    // log of the prior normalizer integral at the node origin, estimated
    // from the rejection-sampler acceptance rate during the build.
    double log_normalizer(int node) const { return log_z_[node]; }

    // Binary cache keyed by (array hash, E0, node count, kernel parameters).
    void save(const std::string& path) const;
    static DirectionPriorLut load(const std::string& path);
    std::uint64_t cache_key() const { return cache_key_; }

private:
    void build_node_index() const;

    std::vector<Vec3> nodes_;                 // unit directions
    std::vector<std::vector<Vec3>> samples_;  // per node, kept accepted directions
    std::vector<double> log_z_;               // per node log normalizer
    double kde_kappa_ = 0.0;
    double radius_ = 0.0;
    std::uint64_t cache_key_ = 0;
    // Lazy lat/lon bucket index for nearest-node queries; first query builds
    // it, so warm the structure up before sharing across threads.
    mutable std::vector<std::vector<int>> node_index_;
};

// Beer-law prior with the exact numerator and the normalizer interpolated
// from the nearest LUT node: fast enough for per-event sampler updates while
// staying within the normalizer's Monte Carlo error of the exact density.
class TabulatedConePrior : public DirectionPrior {
public:
    TabulatedConePrior(const DetectorArray& array, const AttenuationTable& table, double E0,
                       const DirectionPriorLut& lut);
    double log_density(const Vec3& r0, const Vec3& theta1) const override;

private:
    const DetectorArray& array_;
    double mu_;
    const DirectionPriorLut& lut_;
};

// log of the truncated-exponential path density
// mu e^{-mu d} / (1 - e^{-mu d_max}) on (0, d_max).
double log_path_density(double mu, double d, double d_max);

// path density for travelling from origin to target at photon energy E,
// using effective in-sensor distances.
double path_density(const DetectorArray& array, const AttenuationTable& table,
                    const Vec3& origin, const Vec3& target, double E);

// Gaussian-widened cone density (1/2pi) sqrt(a/pi) exp(-a (omega - psi)^2),
// psi = angle between theta1 and theta2; density in the (theta, phi)
// coordinate measure, matching the widened Dirac of the cone constraint.
double scatter_direction_density(const Vec3& theta1, const Vec3& theta2, double E0, double E1,
                                 double a);
double log_scatter_direction_density(const Vec3& theta1, const Vec3& theta2, double E0,
                                     double E1, double a);

// Truncated-Gaussian position noise; truncation box is the sensor containing
// true_p (x, y share sigma_xy). Density per mm^3.
double position_noise_density(const DetectorArray& array, const Vec3& true_p,
                              const Vec3& obs_p, const NoiseScales& scales);
double log_position_noise_density(const DetectorArray& array, const Vec3& true_p,
                                  const Vec3& obs_p, const NoiseScales& scales);

// Gaussian energy noise truncated to obs >= 0. Density per MeV.
double energy_noise_density(double true_E, double obs_E, double sigma_E);
double log_energy_noise_density(double true_E, double obs_E, double sigma_E);

struct ForwardParams {
    double a = 400.0;    // 1/rad^2, cone widening
    double a_E = 400.0;  // 1/MeV^2, absorption-delta widening
};

struct StageLogs {
    double direction;       // f(Theta1 | r0, E0)
    double first_path;      // f(d1 | ...)
    double first_deposit;   // f(E1 | E0, CS1)
    double scatter_dir;     // f(Theta2 | ...)
    double second_path;     // f(d2 | ...)
    double second_deposit;  // f(E2 | ...)
    double total() const {
        return direction + first_path + first_deposit + scatter_dir + second_path +
               second_deposit;
    }
};

// Noise-free event log likelihood f(r1, E1, r2, E2 | r0, E0, CS1, X2),
// assembled from the stage densities. Kinematically impossible events give
// -inf.
StageLogs event_stage_logs(const DetectorArray& array, const AttenuationTable& table,
                           const DirectionPrior& prior, const Vec3& r0, double E0,
                           const Event& event, const ForwardParams& params);
double event_log_likelihood(const DetectorArray& array, const AttenuationTable& table,
                            const DirectionPrior& prior, const Vec3& r0, double E0,
                            const Event& event, const ForwardParams& params);

// Near-uniform deterministic unit directions (Fibonacci sphere).
std::vector<Vec3> fibonacci_sphere(int n);

}  // namespace ci

#endif  // CI_FORWARD_HPP_
