#include "ci/geometry.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <fstream>
#include <sstream>
#include <stdexcept>

#include "json.hpp"

namespace ci {

namespace {
constexpr double kEps = 1e-12;

// Slab-method intersection of the forward ray with one box; returns false on
// miss or grazing hit.
bool ray_box(const Vec3& origin, const Vec3& dir, const Sensor& s, double& t0, double& t1) {
    t0 = 0.0;
    t1 = std::numeric_limits<double>::infinity();
    for (int a = 0; a < 3; ++a) {
        double lo = s.center[a] - s.half_extents[a];
        double hi = s.center[a] + s.half_extents[a];
        double o = origin[a], d = dir[a];
        if (std::fabs(d) < kEps) {
            if (o < lo || o > hi) return false;
            continue;
        }
        double ta = (lo - o) / d;
        double tb = (hi - o) / d;
        if (ta > tb) std::swap(ta, tb);
        t0 = std::max(t0, ta);
        t1 = std::min(t1, tb);
        if (t1 - t0 < kEps) return false;
    }
    return true;
}
}  // namespace

DetectorArray::DetectorArray(std::vector<Sensor> sensors) : sensors_(std::move(sensors)) {
    if (sensors_.empty()) throw std::invalid_argument("detector array needs >= 1 sensor");
    bbox_min_ = {1e300, 1e300, 1e300};
    bbox_max_ = {-1e300, -1e300, -1e300};
    for (const Sensor& s : sensors_) {
        for (int a = 0; a < 3; ++a) {
            if (s.half_extents[a] <= 0.0)
                throw std::invalid_argument("sensor half extents must be positive");
            bbox_min_[a] = std::min(bbox_min_[a], s.center[a] - s.half_extents[a]);
            bbox_max_[a] = std::max(bbox_max_[a], s.center[a] + s.half_extents[a]);
        }
    }
    // Interiors must be pairwise disjoint.
    for (std::size_t i = 0; i < sensors_.size(); ++i)
        for (std::size_t j = i + 1; j < sensors_.size(); ++j) {
            bool overlap = true;
            for (int a = 0; a < 3; ++a) {
                double d = std::fabs(sensors_[i].center[a] - sensors_[j].center[a]);
                if (d >= sensors_[i].half_extents[a] + sensors_[j].half_extents[a] - kEps)
                    overlap = false;
            }
            if (overlap) throw std::invalid_argument("sensors overlap");
        }
}

DetectorArray DetectorArray::paper_4x7() {
    std::vector<Sensor> sensors;
    for (int i = 0; i < 4; ++i)
        for (int j = 0; j < 7; ++j)
            sensors.push_back({{-19.5 + 13.0 * i, -33.0 + 11.0 * j, 0.0}, {1.5, 1.5, 25.0}});
    return DetectorArray(std::move(sensors));
}

DetectorArray DetectorArray::from_json_text(const std::string& text) {
    auto j = nlohmann::json::parse(text);
    std::vector<Sensor> sensors;
    for (const auto& e : j) {
        Sensor s;
        for (int a = 0; a < 3; ++a) {
            s.center[a] = e.at("center").at(a).get<double>();
            s.half_extents[a] = e.at("half_extents").at(a).get<double>();
        }
        sensors.push_back(s);
    }
    return DetectorArray(std::move(sensors));
}

DetectorArray DetectorArray::from_json_file(const std::string& path) {
    std::ifstream f(path);
    if (!f) throw std::runtime_error("cannot open detector layout: " + path);
    std::ostringstream ss;
    ss << f.rdbuf();
    return from_json_text(ss.str());
}

std::vector<RaySegment> DetectorArray::ray_segments(const Vec3& origin, const Vec3& dir) const {
    std::vector<RaySegment> out;
    for (std::size_t i = 0; i < sensors_.size(); ++i) {
        double t0, t1;
        if (ray_box(origin, dir, sensors_[i], t0, t1))
            out.push_back({t0, t1, static_cast<int>(i)});
    }
    std::sort(out.begin(), out.end(),
              [](const RaySegment& a, const RaySegment& b) { return a.t_enter < b.t_enter; });
    return out;
}

double DetectorArray::effective_distance(const Vec3& a, const Vec3& b) const {
    Vec3 d = b - a;
    double len = d.norm();
    if (len == 0.0) throw std::invalid_argument("effective_distance: a == b");
    Vec3 dir = d / len;
    double acc = 0.0;
    for (const RaySegment& seg : ray_segments(a, dir)) {
        if (seg.t_enter >= len) break;
        acc += std::min(seg.t_exit, len) - seg.t_enter;
    }
    return acc;
}

double DetectorArray::max_effective_distance(const Vec3& origin, const Vec3& dir) const {
    double acc = 0.0;
    for (const RaySegment& seg : ray_segments(origin, dir)) acc += seg.t_exit - seg.t_enter;
    return acc;
}

std::optional<int> DetectorArray::containing_sensor(const Vec3& p) const {
    for (std::size_t i = 0; i < sensors_.size(); ++i) {
        const Sensor& s = sensors_[i];
        bool inside = true;
        for (int a = 0; a < 3; ++a)
            if (std::fabs(p[a] - s.center[a]) > s.half_extents[a]) inside = false;
        if (inside) return static_cast<int>(i);
    }
    return std::nullopt;
}

BoundingCone DetectorArray::bounding_cone(const Vec3& origin) const {
    Vec3 center = (bbox_min_ + bbox_max_) * 0.5;
    Vec3 axis = (center - origin).normalized();
    double min_cos = 1.0;
    for (int corner = 0; corner < 8; ++corner) {
        Vec3 c{corner & 1 ? bbox_max_.x : bbox_min_.x,
               corner & 2 ? bbox_max_.y : bbox_min_.y,
               corner & 4 ? bbox_max_.z : bbox_min_.z};
        min_cos = std::min(min_cos, axis.dot((c - origin).normalized()));
    }
    // Small margin so box corners stay strictly inside the cone.
    double half = std::acos(std::clamp(min_cos, -1.0, 1.0)) * 1.02 + 1e-6;
    return {axis, std::cos(std::min(half, M_PI))};
}

std::uint64_t DetectorArray::layout_hash() const {
    std::uint64_t h = 0xcbf29ce484222325ULL;
    auto mix = [&h](double v) {
        std::uint64_t bits;
        std::memcpy(&bits, &v, sizeof bits);
        h ^= bits;
        h *= 0x100000001b3ULL;
    };
    for (const Sensor& s : sensors_)
        for (int a = 0; a < 3; ++a) {
            mix(s.center[a]);
            mix(s.half_extents[a]);
        }
    return h;
}

double geodesic_distance(const SphereModel& sphere, const Vec3& u, const Vec3& v) {
    if (sphere.radius <= 0.0) throw std::invalid_argument("sphere radius must be positive");
    return sphere.radius * angle_between(u, v);
}

}  // namespace ci
