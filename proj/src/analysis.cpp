#include "ci/analysis.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numeric>
#include <stdexcept>

#include "ci/physics.hpp"

namespace ci {

SphereGrid::SphereGrid(int n_pixels) : dirs_(fibonacci_sphere(n_pixels)) {
    solid_angle_frac_ = 1.0 / n_pixels;
}

std::vector<double> back_project(const SphereGrid& grid, const SphereModel& sphere,
                                 const std::vector<NoisyEvent>& events, double E0,
                                 double ridge_sigma) {
    if (!(ridge_sigma > 0.0)) throw std::invalid_argument("back_project: bad ridge width");
    std::vector<double> image(grid.size(), 0.0);
    const double inv2s2 = 1.0 / (2.0 * ridge_sigma * ridge_sigma);
    const double e1_cap = max_deposit(E0) * (1.0 - 1e-9);
    for (const NoisyEvent& e : events) {
        // Observed deposits can exceed the kinematic limit through noise;
        // clamp so every event still casts a cone.
        double e1 = std::clamp(e.first.deposit, 1e-6, e1_cap);
        double omega = compton_angle(E0, e1);
        Vec3 apex = e.first.position;
        Vec3 axis = (e.first.position - e.second.position).normalized();
        for (int p = 0; p < grid.size(); ++p) {
            Vec3 v = (grid.directions()[p] * sphere.radius - apex).normalized();
            double d = angle_between(v, axis) - omega;
            image[p] += std::exp(-d * d * inv2s2);
        }
    }
    return image;
}

std::vector<Vec3> bp_modes(const SphereGrid& grid, const std::vector<double>& image, int k,
                           double min_separation_rad) {
    if (static_cast<int>(image.size()) != grid.size())
        throw std::invalid_argument("bp_modes: image/grid size mismatch");
    if (k < 1) throw std::invalid_argument("bp_modes: k must be >= 1");
    std::vector<int> order(image.size());
    std::iota(order.begin(), order.end(), 0);
    std::sort(order.begin(), order.end(), [&](int a, int b) { return image[a] > image[b]; });
    const double cos_sep = std::cos(min_separation_rad);
    std::vector<Vec3> modes;
    for (int idx : order) {
        if (static_cast<int>(modes.size()) == k) break;
        const Vec3& u = grid.directions()[idx];
        bool ok = true;
        for (const Vec3& m : modes)
            if (u.dot(m) > cos_sep) {
                ok = false;
                break;
            }
        if (ok) modes.push_back(u);
    }
    // Degenerate images (flat or tiny grids) may not yield k separated
    // maxima; fall back to farthest points from the chosen set.
    while (static_cast<int>(modes.size()) < k) {
        int best = 0;
        double best_d = -2.0;
        for (int p = 0; p < grid.size(); ++p) {
            double d = 2.0;
            for (const Vec3& m : modes) d = std::min(d, -grid.directions()[p].dot(m));
            if (d > best_d) {
                best_d = d;
                best = p;
            }
        }
        modes.push_back(grid.directions()[best]);
    }
    return modes;
}

void write_image_csv(const std::string& path, const SphereGrid& grid,
                     const std::vector<double>& image) {
    std::ofstream f(path);
    if (!f) throw std::runtime_error("cannot write image: " + path);
    f << "pixel,ux,uy,uz,value\n";
    for (int p = 0; p < grid.size(); ++p) {
        const Vec3& u = grid.directions()[p];
        f << p << ',' << u.x << ',' << u.y << ',' << u.z << ',' << image[p] << '\n';
    }
    if (!f) throw std::runtime_error("failed writing image: " + path);
}

Vec3 spherical_mean(const std::vector<Vec3>& dirs) {
    if (dirs.empty()) throw std::invalid_argument("spherical_mean: no directions");
    Vec3 acc{0, 0, 0};
    for (const Vec3& d : dirs) acc = acc + d;
    return acc.normalized();
}

BoxStats box_stats(std::vector<double> values) {
    if (values.empty()) throw std::invalid_argument("box_stats: no values");
    std::sort(values.begin(), values.end());
    auto quantile = [&](double q) {
        double x = q * (values.size() - 1);
        std::size_t k = static_cast<std::size_t>(std::floor(x));
        if (k + 1 >= values.size()) return values.back();
        double w = x - k;
        return (1.0 - w) * values[k] + w * values[k + 1];
    };
    BoxStats s;
    s.minimum = values.front();
    s.maximum = values.back();
    s.q1 = quantile(0.25);
    s.median = quantile(0.5);
    s.q3 = quantile(0.75);
    double iqr = s.q3 - s.q1;
    s.whisker_low = std::max(s.minimum, s.q1 - 1.5 * iqr);
    s.whisker_high = std::min(s.maximum, s.q3 + 1.5 * iqr);
    s.mean = std::accumulate(values.begin(), values.end(), 0.0) / values.size();
    return s;
}

CredibleRegion credible_region(const std::vector<Vec3>& dirs, double level) {
    if (dirs.empty()) throw std::invalid_argument("credible_region: no samples");
    if (!(level > 0.0) || !(level < 1.0))
        throw std::invalid_argument("credible_region: level must be in (0, 1)");
    CredibleRegion r;
    r.center = spherical_mean(dirs);
    std::vector<double> dist(dirs.size());
    for (std::size_t i = 0; i < dirs.size(); ++i)
        dist[i] = angle_between(r.center, dirs[i]);
    std::sort(dist.begin(), dist.end());
    double x = level * (dist.size() - 1);
    std::size_t k = static_cast<std::size_t>(std::floor(x));
    r.radius = (k + 1 >= dist.size()) ? dist.back()
                                      : (1.0 - (x - k)) * dist[k] + (x - k) * dist[k + 1];
    return r;
}

double credible_coverage(const std::vector<CredibleRegion>& regions,
                         const std::vector<Vec3>& truths) {
    if (regions.size() != truths.size() || regions.empty())
        throw std::invalid_argument("credible_coverage: size mismatch");
    int hit = 0;
    for (std::size_t i = 0; i < regions.size(); ++i)
        if (angle_between(regions[i].center, truths[i]) <= regions[i].radius) ++hit;
    return static_cast<double>(hit) / regions.size();
}

std::vector<int> deentangle(const std::vector<Vec3>& dirs, Vec3 centers_out[2]) {
    if (dirs.size() < 2) throw std::invalid_argument("deentangle: need >= 2 samples");
    // Seed with the most separated sample pair found from the global mean.
    Vec3 mean = spherical_mean(dirs);
    Vec3 c0 = dirs[0];
    double worst = 2.0;
    for (const Vec3& d : dirs)
        if (d.dot(mean) < worst) {
            worst = d.dot(mean);
            c0 = d;
        }
    Vec3 c1 = dirs[0];
    worst = 2.0;
    for (const Vec3& d : dirs)
        if (d.dot(c0) < worst) {
            worst = d.dot(c0);
            c1 = d;
        }
    std::vector<int> label(dirs.size(), 0);
    for (int iter = 0; iter < 100; ++iter) {
        bool changed = false;
        for (std::size_t i = 0; i < dirs.size(); ++i) {
            int l = dirs[i].dot(c0) >= dirs[i].dot(c1) ? 0 : 1;
            if (l != label[i]) {
                label[i] = l;
                changed = true;
            }
        }
        Vec3 acc[2] = {{0, 0, 0}, {0, 0, 0}};
        int cnt[2] = {0, 0};
        for (std::size_t i = 0; i < dirs.size(); ++i) {
            acc[label[i]] = acc[label[i]] + dirs[i];
            ++cnt[label[i]];
        }
        if (cnt[0] > 0) c0 = acc[0].normalized();
        if (cnt[1] > 0) c1 = acc[1].normalized();
        if (!changed && iter > 0) break;
    }
    // An empty cluster after re-seeding means the pooled chains never
    // separate into two groups.
    int final_cnt[2] = {0, 0};
    for (int l : label) ++final_cnt[l];
    if (final_cnt[0] == 0 || final_cnt[1] == 0 || c0.dot(c1) > 1.0 - 1e-12)
        throw std::runtime_error("deentangle: degenerate separation between chains");
    // Deterministic ordering of the two groups.
    bool swap = (c1.z > c0.z) || (c1.z == c0.z && c1.x > c0.x);
    if (swap) {
        std::swap(c0, c1);
        for (int& l : label) l = 1 - l;
    }
    centers_out[0] = c0;
    centers_out[1] = c1;
    return label;
}

}  // namespace ci
