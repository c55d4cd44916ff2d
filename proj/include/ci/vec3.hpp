#ifndef CI_VEC3_HPP_
#define CI_VEC3_HPP_

#include <cmath>
#include <stdexcept>

namespace ci {

struct Vec3 {
    double x = 0.0, y = 0.0, z = 0.0;

    Vec3() = default;
    Vec3(double x_, double y_, double z_) : x(x_), y(y_), z(z_) {}

    Vec3 operator+(const Vec3& o) const { return {x + o.x, y + o.y, z + o.z}; }
    Vec3 operator-(const Vec3& o) const { return {x - o.x, y - o.y, z - o.z}; }
    Vec3 operator*(double s) const { return {x * s, y * s, z * s}; }
    Vec3 operator/(double s) const { return {x / s, y / s, z / s}; }
    Vec3 operator-() const { return {-x, -y, -z}; }
    Vec3& operator+=(const Vec3& o) { x += o.x; y += o.y; z += o.z; return *this; }

    double dot(const Vec3& o) const { return x * o.x + y * o.y + z * o.z; }
    Vec3 cross(const Vec3& o) const {
        return {y * o.z - z * o.y, z * o.x - x * o.z, x * o.y - y * o.x};
    }
    double norm2() const { return dot(*this); }
    double norm() const { return std::sqrt(norm2()); }

    Vec3 normalized() const {
        double n = norm();
        if (n == 0.0) throw std::invalid_argument("cannot normalize zero vector");
        return *this / n;
    }

    double operator[](int i) const { return i == 0 ? x : (i == 1 ? y : z); }
    double& operator[](int i) { return i == 0 ? x : (i == 1 ? y : z); }
};

inline Vec3 operator*(double s, const Vec3& v) { return v * s; }

inline double angle_between(const Vec3& u, const Vec3& v) {
    double c = u.dot(v) / std::sqrt(u.norm2() * v.norm2());
    c = std::fmin(1.0, std::fmax(-1.0, c));
    return std::acos(c);
}

// Orthonormal frame with e3 = axis (assumed unit).
inline void orthonormal_basis(const Vec3& axis, Vec3& e1, Vec3& e2) {
    Vec3 a = std::fabs(axis.x) < 0.9 ? Vec3{1, 0, 0} : Vec3{0, 1, 0};
    e1 = axis.cross(a).normalized();
    e2 = axis.cross(e1);
}

// Direction from colatitude theta and azimuth phi about the given axis.
inline Vec3 from_cone_angles(const Vec3& axis, double cos_theta, double phi) {
    Vec3 e1, e2;
    orthonormal_basis(axis, e1, e2);
    double s = std::sqrt(std::fmax(0.0, 1.0 - cos_theta * cos_theta));
    return axis * cos_theta + e1 * (s * std::cos(phi)) + e2 * (s * std::sin(phi));
}

// Longitude (east positive) / latitude (north positive) in degrees -> unit vector.
// Longitude 0, latitude 0 maps to +x.
inline Vec3 from_lon_lat_deg(double lon_deg, double lat_deg) {
    double lon = lon_deg * M_PI / 180.0, lat = lat_deg * M_PI / 180.0;
    return {std::cos(lat) * std::cos(lon), std::cos(lat) * std::sin(lon), std::sin(lat)};
}

}  // namespace ci

#endif  // CI_VEC3_HPP_
