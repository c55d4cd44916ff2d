#include "ci/forward.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <fstream>
#include <limits>
#include <numbers>
#include <stdexcept>

namespace ci {

namespace {
constexpr double kNegInf = -std::numeric_limits<double>::infinity();
constexpr double kPi = std::numbers::pi;

std::uint64_t fnv_step(std::uint64_t h, std::uint64_t v) {
    for (int i = 0; i < 8; ++i) {
        h ^= (v >> (8 * i)) & 0xffu;
        h *= 1099511628211ull;
    }
    return h;
}

std::uint64_t double_bits(double v) {
    std::uint64_t b;
    std::memcpy(&b, &v, sizeof b);
    return b;
}

// log of kappa / (4 pi sinh kappa), stable for large kappa.
double log_vmf_norm(double kappa) {
    return std::log(kappa) - std::log(2.0 * kPi) - kappa - std::log1p(-std::exp(-2.0 * kappa));
}
}  // namespace

std::vector<Vec3> fibonacci_sphere(int n) {
    if (n < 1) throw std::invalid_argument("fibonacci_sphere: n must be positive");
    std::vector<Vec3> out;
    out.reserve(n);
    const double ga = kPi * (3.0 - std::sqrt(5.0));
    for (int i = 0; i < n; ++i) {
        double z = 1.0 - (2.0 * i + 1.0) / n;
        double r = std::sqrt(std::max(0.0, 1.0 - z * z));
        double phi = ga * i;
        out.push_back({r * std::cos(phi), r * std::sin(phi), z});
    }
    return out;
}

Vec3 sample_first_direction(const DetectorArray& array, const AttenuationTable& table,
                            const Vec3& r0, double E0, RngStream& rng,
                            std::int64_t max_proposals) {
    const double mu = table.mu(MuKind::Total, E0);
    const BoundingCone cone = array.bounding_cone(r0);
    for (std::int64_t k = 0; k < max_proposals; ++k) {
        Vec3 theta = rng.uniform_cone(cone.axis, cone.cos_half_angle);
        double d_max = array.max_effective_distance(r0, theta);
        if (d_max <= 0.0) continue;
        double d = -std::log1p(-rng.uniform()) / mu;
        if (d < d_max) return theta;
    }
    throw std::runtime_error("sample_first_direction: proposal budget exhausted");
}

ExactDirectionPrior::ExactDirectionPrior(const DetectorArray& array, const AttenuationTable& table,
                                         double E0, int quadrature_points)
    : array_(array), mu_(table.mu(MuKind::Total, E0)), quad_points_(quadrature_points) {
    if (quadrature_points < 100)
        throw std::invalid_argument("ExactDirectionPrior: too few quadrature points");
}

double ExactDirectionPrior::normalizer(const Vec3& r0) const {
    for (const auto& [origin, z] : cache_)
        if (origin.x == r0.x && origin.y == r0.y && origin.z == r0.z) return z;
    // Quadrature over the bounding cone: Fibonacci points mapped to the cap.
    const BoundingCone cone = array_.bounding_cone(r0);
    Vec3 e1, e2;
    orthonormal_basis(cone.axis, e1, e2);
    const double ga = kPi * (3.0 - std::sqrt(5.0));
    double acc = 0.0;
    for (int i = 0; i < quad_points_; ++i) {
        double c = 1.0 - (1.0 - cone.cos_half_angle) * (2.0 * i + 1.0) / (2.0 * quad_points_);
        double s = std::sqrt(std::max(0.0, 1.0 - c * c));
        double phi = ga * i;
        Vec3 theta = cone.axis * c + e1 * (s * std::cos(phi)) + e2 * (s * std::sin(phi));
        double d_max = array_.max_effective_distance(r0, theta);
        if (d_max > 0.0) acc += -std::expm1(-mu_ * d_max);
    }
    double omega = 2.0 * kPi * (1.0 - cone.cos_half_angle);
    double z = omega * acc / quad_points_;
    cache_.push_back({r0, z});
    return z;
}

double ExactDirectionPrior::log_density(const Vec3& r0, const Vec3& theta1) const {
    double d_max = array_.max_effective_distance(r0, theta1);
    if (d_max <= 0.0) return kNegInf;
    double num = -std::expm1(-mu_ * d_max);
    return std::log(num) - std::log(normalizer(r0));
}

DirectionPriorLut DirectionPriorLut::build(const DetectorArray& array,
                                           const AttenuationTable& table, double E0,
                                           const SphereModel& sphere, const Config& config,
                                           std::uint64_t seed) {
    if (config.n_nodes < 1 || config.n_samples < 1 || config.kept_samples < 1 ||
        config.kept_samples > config.n_samples)
        throw std::invalid_argument("DirectionPriorLut: bad configuration");
    DirectionPriorLut lut;
    lut.nodes_ = fibonacci_sphere(config.n_nodes);
    lut.radius_ = sphere.radius;
    lut.samples_.resize(config.n_nodes);
    lut.log_z_.resize(config.n_nodes);
    RngStream root(seed);
    const double mu = table.mu(MuKind::Total, E0);
    const int stride = config.n_samples / config.kept_samples;
    for (int n = 0; n < config.n_nodes; ++n) {
        RngStream rng = root.derive("lut-node", static_cast<std::uint64_t>(n), 0);
        Vec3 r0 = lut.nodes_[n] * sphere.radius;
        const BoundingCone cone = array.bounding_cone(r0);
        std::vector<Vec3>& kept = lut.samples_[n];
        kept.reserve(config.kept_samples);
        std::int64_t proposals = 0;
        for (int s = 0; s < config.n_samples; ++s) {
            // Inline rejection loop so the proposal count (and with it the
            // normalizer estimate) comes out of the same draws.
            Vec3 theta;
            for (;;) {
                ++proposals;
                if (proposals > 10'000'000'000ll)
                    throw std::runtime_error("DirectionPriorLut: proposal budget exhausted");
                theta = rng.uniform_cone(cone.axis, cone.cos_half_angle);
                double d_max = array.max_effective_distance(r0, theta);
                if (d_max <= 0.0) continue;
                double d = -std::log1p(-rng.uniform()) / mu;
                if (d < d_max) break;
            }
            if (s % stride == 0 && static_cast<int>(kept.size()) < config.kept_samples)
                kept.push_back(theta);
        }
        double omega = 2.0 * kPi * (1.0 - cone.cos_half_angle);
        lut.log_z_[n] = std::log(omega * config.n_samples / static_cast<double>(proposals));
    }
    if (config.kde_kappa > 0.0) {
        lut.kde_kappa_ = config.kde_kappa;
    } else {
        // Plug-in rule: estimate the sample concentration at the widest-spread
        // node and scale with the kept-sample count.
        double kappa_hat = std::numeric_limits<double>::infinity();
        for (int n = 0; n < config.n_nodes; n += std::max(1, config.n_nodes / 16)) {
            Vec3 mean{0, 0, 0};
            for (const Vec3& v : lut.samples_[n]) mean = mean + v;
            double rbar = mean.norm() / lut.samples_[n].size();
            rbar = std::min(rbar, 1.0 - 1e-9);
            double k = rbar * (3.0 - rbar * rbar) / (1.0 - rbar * rbar);
            kappa_hat = std::min(kappa_hat, k);
        }
        double m = static_cast<double>(config.kept_samples);
        lut.kde_kappa_ = std::clamp(kappa_hat * std::cbrt(m), 50.0, 20000.0);
    }
    std::uint64_t h = 1469598103934665603ull;
    h = fnv_step(h, array.layout_hash());
    h = fnv_step(h, double_bits(E0));
    h = fnv_step(h, double_bits(sphere.radius));
    h = fnv_step(h, static_cast<std::uint64_t>(config.n_nodes));
    h = fnv_step(h, static_cast<std::uint64_t>(config.kept_samples));
    h = fnv_step(h, double_bits(lut.kde_kappa_));
    h = fnv_step(h, seed);
    lut.cache_key_ = h;
    return lut;
}

namespace {
constexpr int kIdxTheta = 64;
constexpr int kIdxPhi = 128;

int bucket_of(const Vec3& u) {
    double theta = std::acos(std::clamp(u.z, -1.0, 1.0));
    double phi = std::atan2(u.y, u.x) + kPi;
    int bt = std::min(kIdxTheta - 1, static_cast<int>(theta / kPi * kIdxTheta));
    int bp = std::min(kIdxPhi - 1, static_cast<int>(phi / (2.0 * kPi) * kIdxPhi));
    return bt * kIdxPhi + bp;
}
}  // namespace

void DirectionPriorLut::build_node_index() const {
    node_index_.assign(kIdxTheta * kIdxPhi, {});
    // Bucket radius plus a generous node-spacing margin keeps the true
    // nearest node inside every bucket's candidate list.
    const double spacing = std::sqrt(4.0 * kPi / nodes_.size());
    const double margin = kPi / kIdxTheta + 2.5 * spacing;
    for (int bt = 0; bt < kIdxTheta; ++bt)
        for (int bp = 0; bp < kIdxPhi; ++bp) {
            double theta = (bt + 0.5) * kPi / kIdxTheta;
            double phi = (bp + 0.5) * 2.0 * kPi / kIdxPhi - kPi;
            Vec3 c{std::sin(theta) * std::cos(phi), std::sin(theta) * std::sin(phi),
                   std::cos(theta)};
            double cos_cap = std::cos(std::min(kPi, margin));
            std::vector<int>& bucket = node_index_[bt * kIdxPhi + bp];
            for (std::size_t i = 0; i < nodes_.size(); ++i)
                if (c.dot(nodes_[i]) >= cos_cap) bucket.push_back(static_cast<int>(i));
        }
}

int DirectionPriorLut::nearest_node(const Vec3& direction) const {
    Vec3 u = direction.normalized();
    if (nodes_.size() > 128) {
        if (node_index_.empty()) build_node_index();
        const std::vector<int>& bucket = node_index_[bucket_of(u)];
        if (!bucket.empty()) {
            int best = bucket[0];
            double best_dot = -2.0;
            for (int i : bucket) {
                double d = u.dot(nodes_[i]);
                if (d > best_dot) {
                    best_dot = d;
                    best = i;
                }
            }
            return best;
        }
    }
    int best = 0;
    double best_dot = -2.0;
    for (std::size_t i = 0; i < nodes_.size(); ++i) {
        double d = u.dot(nodes_[i]);
        if (d > best_dot) {
            best_dot = d;
            best = static_cast<int>(i);
        }
    }
    return best;
}

double DirectionPriorLut::log_density_at_node(int node, const Vec3& theta1) const {
    const std::vector<Vec3>& s = samples_[node];
    Vec3 u = theta1.normalized();
    double max_e = kNegInf;
    std::vector<double> exps(s.size());
    for (std::size_t i = 0; i < s.size(); ++i) {
        exps[i] = kde_kappa_ * u.dot(s[i]);
        max_e = std::max(max_e, exps[i]);
    }
    double acc = 0.0;
    for (double e : exps) acc += std::exp(e - max_e);
    return max_e + std::log(acc) - std::log(static_cast<double>(s.size())) +
           log_vmf_norm(kde_kappa_);
}

double DirectionPriorLut::log_density(const Vec3& r0, const Vec3& theta1) const {
    return log_density_at_node(nearest_node(r0), theta1);
}

void DirectionPriorLut::save(const std::string& path) const {
    std::ofstream f(path, std::ios::binary);
    if (!f) throw std::runtime_error("cannot write lut cache: " + path);
    const char magic[8] = {'C', 'I', 'L', 'U', 'T', '0', '0', '1'};
    f.write(magic, 8);
    auto w64 = [&](std::uint64_t v) { f.write(reinterpret_cast<const char*>(&v), 8); };
    auto wd = [&](double v) { f.write(reinterpret_cast<const char*>(&v), 8); };
    w64(cache_key_);
    wd(radius_);
    wd(kde_kappa_);
    w64(nodes_.size());
    for (const Vec3& n : nodes_) {
        wd(n.x);
        wd(n.y);
        wd(n.z);
    }
    for (double z : log_z_) wd(z);
    for (const std::vector<Vec3>& node_samples : samples_) {
        w64(node_samples.size());
        for (const Vec3& s : node_samples) {
            float v[3] = {static_cast<float>(s.x), static_cast<float>(s.y),
                          static_cast<float>(s.z)};
            f.write(reinterpret_cast<const char*>(v), sizeof v);
        }
    }
    if (!f) throw std::runtime_error("failed writing lut cache: " + path);
}

DirectionPriorLut DirectionPriorLut::load(const std::string& path) {
    std::ifstream f(path, std::ios::binary);
    if (!f) throw std::runtime_error("cannot open lut cache: " + path);
    char magic[8];
    f.read(magic, 8);
    if (!f || std::memcmp(magic, "CILUT001", 8) != 0)
        throw std::runtime_error("bad lut cache header: " + path);
    auto r64 = [&] {
        std::uint64_t v;
        f.read(reinterpret_cast<char*>(&v), 8);
        return v;
    };
    auto rd = [&] {
        double v;
        f.read(reinterpret_cast<char*>(&v), 8);
        return v;
    };
    DirectionPriorLut lut;
    lut.cache_key_ = r64();
    lut.radius_ = rd();
    lut.kde_kappa_ = rd();
    std::uint64_t n = r64();
    if (!f || n == 0 || n > 10'000'000) throw std::runtime_error("bad lut cache: " + path);
    lut.nodes_.resize(n);
    for (Vec3& v : lut.nodes_) {
        v.x = rd();
        v.y = rd();
        v.z = rd();
    }
    lut.log_z_.resize(n);
    for (double& z : lut.log_z_) z = rd();
    lut.samples_.resize(n);
    for (std::vector<Vec3>& node_samples : lut.samples_) {
        std::uint64_t m = r64();
        if (!f || m == 0 || m > 100'000'000) throw std::runtime_error("bad lut cache: " + path);
        node_samples.resize(m);
        for (Vec3& s : node_samples) {
            float v[3];
            f.read(reinterpret_cast<char*>(v), sizeof v);
            s = Vec3{v[0], v[1], v[2]}.normalized();
        }
    }
    if (!f) throw std::runtime_error("truncated lut cache: " + path);
    return lut;
}

TabulatedConePrior::TabulatedConePrior(const DetectorArray& array, const AttenuationTable& table,
                                       double E0, const DirectionPriorLut& lut)
    : array_(array), mu_(table.mu(MuKind::Total, E0)), lut_(lut) {
    lut_.nearest_node({0.0, 0.0, 1.0});  // warm the node index up front
}

double TabulatedConePrior::log_density(const Vec3& r0, const Vec3& theta1) const {
    double d_max = array_.max_effective_distance(r0, theta1);
    if (d_max <= 0.0) return kNegInf;
    return std::log(-std::expm1(-mu_ * d_max)) - lut_.log_normalizer(lut_.nearest_node(r0));
}

double log_path_density(double mu, double d, double d_max) {
    if (!(mu > 0.0) || !(d_max > 0.0)) return kNegInf;
    if (!(d > 0.0) || d >= d_max) return kNegInf;
    return std::log(mu) - mu * d - std::log(-std::expm1(-mu * d_max));
}

double path_density(const DetectorArray& array, const AttenuationTable& table,
                    const Vec3& origin, const Vec3& target, double E) {
    Vec3 diff = target - origin;
    double len = diff.norm();
    if (len == 0.0) return 0.0;
    Vec3 dir = diff / len;
    double mu = table.mu(MuKind::Total, E);
    double d = array.effective_distance(origin, target);
    double d_max = array.max_effective_distance(origin, dir);
    return std::exp(log_path_density(mu, d, d_max));
}

double log_scatter_direction_density(const Vec3& theta1, const Vec3& theta2, double E0,
                                     double E1, double a) {
    if (!(a > 0.0)) throw std::invalid_argument("scatter_direction_density: a must be positive");
    if (E1 >= max_deposit(E0)) return kNegInf;
    double omega = compton_angle(E0, E1);
    double psi = angle_between(theta1, theta2);
    double d = omega - psi;
    return -std::log(2.0 * kPi) + 0.5 * std::log(a / kPi) - a * d * d;
}

double scatter_direction_density(const Vec3& theta1, const Vec3& theta2, double E0, double E1,
                                 double a) {
    return std::exp(log_scatter_direction_density(theta1, theta2, E0, E1, a));
}

double log_position_noise_density(const DetectorArray& array, const Vec3& true_p,
                                  const Vec3& obs_p, const NoiseScales& scales) {
    std::optional<int> idx = array.containing_sensor(true_p);
    if (!idx) throw std::invalid_argument("position_noise_density: true position not in a sensor");
    const Sensor& s = array.sensors()[*idx];
    double acc = 0.0;
    for (int a = 0; a < 3; ++a) {
        double sigma = (a == 2) ? scales.sigma_z : scales.sigma_xy;
        double lo = s.center[a] - s.half_extents[a];
        double hi = s.center[a] + s.half_extents[a];
        acc += log_truncated_normal_pdf(obs_p[a], true_p[a], sigma, lo, hi);
    }
    return acc;
}

double position_noise_density(const DetectorArray& array, const Vec3& true_p, const Vec3& obs_p,
                              const NoiseScales& scales) {
    return std::exp(log_position_noise_density(array, true_p, obs_p, scales));
}

double log_energy_noise_density(double true_E, double obs_E, double sigma_E) {
    if (!(true_E > 0.0)) throw std::invalid_argument("energy_noise_density: true_E must be > 0");
    return log_truncated_normal_pdf(obs_E, true_E, sigma_E, 0.0,
                                    std::numeric_limits<double>::infinity());
}

double energy_noise_density(double true_E, double obs_E, double sigma_E) {
    return std::exp(log_energy_noise_density(true_E, obs_E, sigma_E));
}

StageLogs event_stage_logs(const DetectorArray& array, const AttenuationTable& table,
                           const DirectionPrior& prior, const Vec3& r0, double E0,
                           const Event& event, const ForwardParams& params) {
    StageLogs logs{kNegInf, kNegInf, kNegInf, kNegInf, kNegInf, kNegInf};
    const double E1 = event.first.deposit;
    const double E2 = event.second.deposit;
    if (!(E1 > 0.0) || !(E2 > 0.0) || E1 >= max_deposit(E0)) return logs;

    Vec3 leg1 = event.first.position - r0;
    Vec3 leg2 = event.second.position - event.first.position;
    if (leg1.norm() == 0.0 || leg2.norm() == 0.0) return logs;
    Vec3 theta1 = leg1.normalized();
    Vec3 theta2 = leg2.normalized();

    logs.direction = prior.log_density(r0, theta1);

    double mu1 = table.mu(MuKind::Total, E0);
    double d1 = array.effective_distance(r0, event.first.position);
    double d1_max = array.max_effective_distance(r0, theta1);
    logs.first_path = log_path_density(mu1, d1, d1_max);

    logs.first_deposit = kn_log_deposit_density(E0, E1);

    logs.scatter_dir = log_scatter_direction_density(theta1, theta2, E0, E1, params.a);

    double mu2 = table.mu(MuKind::Total, E0 - E1);
    double d2 = array.effective_distance(event.first.position, event.second.position);
    double d2_max = array.max_effective_distance(event.first.position, theta2);
    logs.second_path = log_path_density(mu2, d2, d2_max);

    if (event.second_kind == SecondKind::Absorb) {
        // Widened Dirac at full remaining energy.
        double d = E2 - (E0 - E1);
        logs.second_deposit = 0.5 * std::log(params.a_E / kPi) - params.a_E * d * d;
    } else {
        double rem = E0 - E1;
        if (E2 >= max_deposit(rem))
            logs.second_deposit = kNegInf;
        else
            logs.second_deposit = kn_log_deposit_density(rem, E2);
    }
    return logs;
}

double event_log_likelihood(const DetectorArray& array, const AttenuationTable& table,
                            const DirectionPrior& prior, const Vec3& r0, double E0,
                            const Event& event, const ForwardParams& params) {
    return event_stage_logs(array, table, prior, r0, E0, event, params).total();
}

}  // namespace ci
