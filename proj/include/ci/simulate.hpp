#ifndef CI_SIMULATE_HPP_
#define CI_SIMULATE_HPP_

#include <cstdint>
#include <string>
#include <vector>

#include "ci/forward.hpp"
#include "ci/geometry.hpp"
#include "ci/physics.hpp"
#include "ci/random.hpp"

namespace ci {

struct SourceSpec {
    Vec3 direction;  // unit vector from detector centre
    double weight;   // relative intensity, > 0
};

struct SimConfig {
    std::vector<SourceSpec> sources;
    double E0 = 0.6617;        // MeV
    int n_events = 1000;       // completed two-site events to emit
    double sphere_radius = 300.0;
    NoiseScales noise{0.43, 0.72, 0.029};
    double outlier_fraction = 0.0;
    std::uint64_t seed = 1;
};

// One photon history through the array.
struct TransportRecord {
    enum class Outcome { AbsorbedFirst, Escaped, Completed };
    Outcome outcome;
    Vec3 theta1;        // first-interaction direction
    double E1 = 0.0;    // first Compton deposit (Escaped / Completed)
    Event event;        // valid when outcome == Completed
};

// Analog transport of a single photon from r0: Beer-law first direction,
// truncated-exponential first depth, photo/Compton branch, Klein-Nishina
// deposit, uniform cone scatter, free-flight second leg.
TransportRecord transport_photon(const DetectorArray& array, const AttenuationTable& table,
                                 const Vec3& r0, double E0, RngStream& rng);

// Point at in-sensor depth d along the ray (throws if the budget is shorter).
Vec3 position_at_effective_depth(const DetectorArray& array, const Vec3& origin, const Vec3& dir,
                                 double d);

// Apply truncated-Gaussian measurement noise to an event: positions stay in
// the containing sensor, energies stay non-negative.
NoisyEvent add_noise(const DetectorArray& array, const Event& event, const NoiseScales& scales,
                     RngStream& rng);

struct SimStats {
    std::int64_t photons = 0;
    std::int64_t absorbed_first = 0;
    std::int64_t escaped = 0;
    std::int64_t completed = 0;
};

// Draw completed events (with truth and noise applied); a fraction of events
// is replaced by outlier pairings: half swapped-order, half cross-photon.
std::vector<NoisyEvent> generate_events(const DetectorArray& array, const AttenuationTable& table,
                                        const SimConfig& config, SimStats* stats = nullptr);

// Event list I/O, one JSON object per line.
void write_events_jsonl(const std::string& path, const std::vector<NoisyEvent>& events);
std::vector<NoisyEvent> read_events_jsonl(const std::string& path);

// Histogram of summed deposits E1+E2 over [lo, hi) with uniform bins.
std::vector<int> summed_energy_histogram(const std::vector<NoisyEvent>& events, double lo,
                                         double hi, int n_bins);

}  // namespace ci

#endif  // CI_SIMULATE_HPP_
