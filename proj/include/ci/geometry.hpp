#ifndef CI_GEOMETRY_HPP_
#define CI_GEOMETRY_HPP_

#include <optional>
#include <string>
#include <vector>

#include "ci/vec3.hpp"

namespace ci {

struct Sensor {
    Vec3 center;
    Vec3 half_extents;  // strictly positive, axis aligned
};

struct RaySegment {
    double t_enter;
    double t_exit;
    int sensor;
};

struct BoundingCone {
    Vec3 axis;
    double cos_half_angle;
};

// Immutable array of axis-aligned box sensors with traversal queries.
class DetectorArray {
public:
    explicit DetectorArray(std::vector<Sensor> sensors);

    // The 4x7 LYSO layout: 28 sensors of 3 x 3 x 50 mm at
    // (X_i, Y_j, 0), X_i = -19.5 + 13 i, Y_j = -33 + 11 j.
    static DetectorArray paper_4x7();

    // JSON list of {center:[x,y,z], half_extents:[hx,hy,hz]}.
    static DetectorArray from_json_file(const std::string& path);
    static DetectorArray from_json_text(const std::string& text);

    const std::vector<Sensor>& sensors() const { return sensors_; }
    const Vec3& bbox_min() const { return bbox_min_; }
    const Vec3& bbox_max() const { return bbox_max_; }

    // In-sensor intervals along origin + t*dir, t >= 0, sorted by t_enter.
    std::vector<RaySegment> ray_segments(const Vec3& origin, const Vec3& dir) const;

    // Sum of in-sensor chord lengths of segment [a, b].
    double effective_distance(const Vec3& a, const Vec3& b) const;

    // Total in-sensor length of the full forward ray (d_max).
    double max_effective_distance(const Vec3& origin, const Vec3& dir) const;

    // Lowest-index sensor whose closed box contains p, if any.
    std::optional<int> containing_sensor(const Vec3& p) const;

    // Smallest cone from origin that encloses the array bounding box.
    BoundingCone bounding_cone(const Vec3& origin) const;

    // Stable content hash for cache keys.
    std::uint64_t layout_hash() const;

private:
    std::vector<Sensor> sensors_;
    Vec3 bbox_min_, bbox_max_;
};

struct SphereModel {
    double radius;  // mm
};

// Great-circle distance R * arccos(u . v) between unit vectors.
double geodesic_distance(const SphereModel& sphere, const Vec3& u, const Vec3& v);

}  // namespace ci

#endif  // CI_GEOMETRY_HPP_
