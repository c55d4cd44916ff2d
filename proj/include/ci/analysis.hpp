#ifndef CI_ANALYSIS_HPP_
#define CI_ANALYSIS_HPP_

#include <string>
#include <vector>

#include "ci/forward.hpp"
#include "ci/geometry.hpp"
#include "ci/simulate.hpp"

namespace ci {

// Near-uniform pixelation of the unit sphere (Fibonacci points); every pixel
// is assigned the same solid angle 4 pi / size.
class SphereGrid {
public:
    explicit SphereGrid(int n_pixels = 10242);
    const std::vector<Vec3>& directions() const { return dirs_; }
    int size() const { return static_cast<int>(dirs_.size()); }
    double pixel_solid_angle() const { return 4.0 * M_PI * solid_angle_frac_; }

private:
    std::vector<Vec3> dirs_;
    double solid_angle_frac_;
};

// Cone back-projection image: each event adds a Gaussian ridge of width
// ridge_sigma (radians) around its Compton cone, apex at the first observed
// interaction, axis from second to first interaction, opening angle from the
// observed first deposit.
std::vector<double> back_project(const SphereGrid& grid, const SphereModel& sphere,
                                 const std::vector<NoisyEvent>& events, double E0,
                                 double ridge_sigma = 0.05);

// Greedy image modes: highest pixels subject to a minimum mutual separation.
std::vector<Vec3> bp_modes(const SphereGrid& grid, const std::vector<double>& image, int k,
                           double min_separation_rad = 10.0 * M_PI / 180.0);

void write_image_csv(const std::string& path, const SphereGrid& grid,
                     const std::vector<double>& image);

// Direction of the normalized vector sum of unit directions.
Vec3 spherical_mean(const std::vector<Vec3>& dirs);

struct BoxStats {
    double minimum, whisker_low, q1, median, q3, whisker_high, maximum, mean;
};

// Five-number summary with 1.5 IQR whiskers clamped to the sample range;
// quartiles by linear interpolation of order statistics.
BoxStats box_stats(std::vector<double> values);

struct CredibleRegion {
    Vec3 center;    // unit direction
    double radius;  // geodesic radius, radians
};

// Geodesic ball centered at the spherical mean holding a `level` fraction of
// the samples.
CredibleRegion credible_region(const std::vector<Vec3>& dirs, double level);

// Fraction of (region, truth) pairs where the truth lies inside the region.
double credible_coverage(const std::vector<CredibleRegion>& regions,
                         const std::vector<Vec3>& truths);

// Two-group spherical K-means (chordal metric) for separating interleaved
// posterior samples of a two-source chain. Returns per-sample labels in
// {0, 1}; centers come out in deterministic order (larger z, then x, first).
std::vector<int> deentangle(const std::vector<Vec3>& dirs, Vec3 centers_out[2]);

}  // namespace ci

#endif  // CI_ANALYSIS_HPP_
