#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <vector>

#include "ci/analysis.hpp"
#include "ci/physics.hpp"
#include "ci/random.hpp"
#include "ci/simulate.hpp"

using ci::Vec3;

namespace {

ci::AttenuationTable lyso() { return ci::AttenuationTable::load_csv("data/lyso_attenuation.csv"); }

std::vector<ci::NoisyEvent> clean_events(int n, const Vec3& source, std::uint64_t seed) {
    ci::SimConfig cfg;
    cfg.sources = {{source, 1.0}};
    cfg.n_events = n;
    cfg.noise = {1e-4, 1e-4, 1e-6};  // effectively noiseless
    cfg.seed = seed;
    ci::DetectorArray array = ci::DetectorArray::paper_4x7();
    ci::AttenuationTable table = lyso();
    return ci::generate_events(array, table, cfg);
}

}  // namespace

TEST_CASE("SphereGrid: unit pixels with equal solid angles") {
    ci::SphereGrid grid(10242);
    CHECK(grid.size() == 10242);
    for (const Vec3& d : grid.directions()) CHECK(d.norm() == doctest::Approx(1.0).epsilon(1e-12));
    CHECK(grid.pixel_solid_angle() == doctest::Approx(4.0 * M_PI / 10242).epsilon(1e-12));
}

TEST_CASE("back_project: empty input, reorder invariance, ridge location") {
    ci::DetectorArray array = ci::DetectorArray::paper_4x7();
    ci::SphereModel sphere{300.0};
    ci::SphereGrid grid(2562);
    double E0 = 0.6617;

    auto empty = ci::back_project(grid, sphere, {}, E0);
    for (double v : empty) CHECK(v == 0.0);

    Vec3 truth{1, 0, 0};
    auto events = clean_events(10, truth, 31);
    auto img = ci::back_project(grid, sphere, events, E0);
    auto shuffled = events;
    std::reverse(shuffled.begin(), shuffled.end());
    auto img2 = ci::back_project(grid, sphere, shuffled, E0);
    for (int i = 0; i < grid.size(); ++i)
        CHECK(img[i] == doctest::Approx(img2[i]).epsilon(1e-12));

    // With 10 clean events the argmax lands within 3 degrees of the truth.
    int best = int(std::max_element(img.begin(), img.end()) - img.begin());
    CHECK(ci::angle_between(grid.directions()[best], truth) < 3.0 * M_PI / 180.0);

    // Single clean event: the truth direction sits on the cone ridge.
    auto one = ci::back_project(grid, sphere, {events[0]}, E0);
    double peak = *std::max_element(one.begin(), one.end());
    int tp = 0;
    for (int i = 1; i < grid.size(); ++i)
        if (grid.directions()[i].dot(truth) > grid.directions()[tp].dot(truth)) tp = i;
    CHECK(one[tp] > 0.5 * peak);
}

TEST_CASE("bp_modes: argmax and separated antipodal peaks") {
    ci::SphereGrid grid(2562);
    std::vector<double> img(grid.size(), 0.0);
    int a = 100, b = -1;
    // Find the pixel most nearly antipodal to pixel a.
    double worst = 2.0;
    for (int i = 0; i < grid.size(); ++i) {
        double d = grid.directions()[i].dot(grid.directions()[a]);
        if (d < worst) {
            worst = d;
            b = i;
        }
    }
    img[a] = 2.0;
    img[b] = 2.0;
    auto one = ci::bp_modes(grid, img, 1);
    REQUIRE(one.size() == 1);
    CHECK(one[0].dot(grid.directions()[a]) > 0.999);
    auto two = ci::bp_modes(grid, img, 2);
    REQUIRE(two.size() == 2);
    double got = std::min(two[0].dot(grid.directions()[a]), two[1].dot(grid.directions()[a]));
    double gob = std::min(two[0].dot(grid.directions()[b]), two[1].dot(grid.directions()[b]));
    CHECK(std::max(two[0].dot(grid.directions()[a]), two[1].dot(grid.directions()[a])) > 0.999);
    CHECK(std::max(two[0].dot(grid.directions()[b]), two[1].dot(grid.directions()[b])) > 0.999);
    (void)got;
    (void)gob;
}

TEST_CASE("spherical_mean: identity, bisector, vMF concentration") {
    Vec3 u = Vec3{0.3, -0.5, 0.8}.normalized();
    CHECK(ci::spherical_mean({u, u, u}).dot(u) == doctest::Approx(1.0).epsilon(1e-12));

    Vec3 p = Vec3{1, 0, 0.2}.normalized(), q = Vec3{1, 0, -0.2}.normalized();
    Vec3 m = ci::spherical_mean({p, q});
    CHECK(m.dot(Vec3{1, 0, 0}) == doctest::Approx(1.0).epsilon(1e-12));

    ci::RngStream rng(3);
    Vec3 center = Vec3{0.2, 0.9, -0.1}.normalized();
    std::vector<Vec3> cloud;
    for (int i = 0; i < 8000; ++i) cloud.push_back(rng.vmf(center, 100.0));
    CHECK(ci::angle_between(ci::spherical_mean(cloud), center) < 0.5 * M_PI / 180.0);

    CHECK_THROWS(ci::spherical_mean({p, -p}));
}

TEST_CASE("box_stats: constants, interpolated quartiles, whisker capping") {
    ci::BoxStats c = ci::box_stats(std::vector<double>(8, 3.5));
    CHECK(c.whisker_low == 3.5);
    CHECK(c.q1 == 3.5);
    CHECK(c.median == 3.5);
    CHECK(c.q3 == 3.5);
    CHECK(c.whisker_high == 3.5);

    std::vector<double> v(100);
    std::iota(v.begin(), v.end(), 1.0);
    ci::BoxStats s = ci::box_stats(v);
    CHECK(s.q1 == doctest::Approx(25.75).epsilon(1e-12));
    CHECK(s.median == doctest::Approx(50.5).epsilon(1e-12));
    CHECK(s.q3 == doctest::Approx(75.25).epsilon(1e-12));
    CHECK(s.whisker_low == doctest::Approx(1.0));
    CHECK(s.whisker_high == doctest::Approx(100.0));

    std::vector<double> w{1, 2, 3, 4, 5, 6, 7, 1000};
    ci::BoxStats t = ci::box_stats(w);
    CHECK(t.whisker_high < 1000.0);
    CHECK(t.whisker_high <= t.q3 + 1.5 * (t.q3 - t.q1) + 1e-9);
    CHECK(t.maximum == 1000.0);
}

TEST_CASE("credible regions: levels, coverage bounds and monotonicity") {
    ci::RngStream rng(9);
    Vec3 center{0, 0, 1};
    std::vector<Vec3> dirs;
    for (int i = 0; i < 4000; ++i) dirs.push_back(rng.vmf(center, 60.0));

    double prev = 0.0;
    for (double level : {0.1, 0.3, 0.5, 0.7, 0.9}) {
        ci::CredibleRegion r = ci::credible_region(dirs, level);
        CHECK(r.radius >= prev);
        prev = r.radius;
        // The region holds the requested fraction of the samples.
        int in = 0;
        for (const Vec3& d : dirs)
            if (ci::angle_between(d, r.center) <= r.radius + 1e-12) ++in;
        CHECK(in / double(dirs.size()) == doctest::Approx(level).epsilon(0.02));
    }

    std::vector<ci::CredibleRegion> regions{{center, 0.0}, {center, M_PI}};
    std::vector<Vec3> truths{Vec3{1, 0, 0}, Vec3{1, 0, 0}};
    CHECK(ci::credible_coverage({regions[0]}, {truths[0]}) == 0.0);
    CHECK(ci::credible_coverage({regions[1]}, {truths[1]}) == 1.0);
}

TEST_CASE("deentangle: separated chains, swapped halves, degenerate input") {
    ci::RngStream rng(4);
    Vec3 ca{1, 0, 0};
    Vec3 cb = ci::from_lon_lat_deg(120.0, 0.0);
    std::vector<Vec3> pooled;
    std::vector<int> want;
    for (int i = 0; i < 2000; ++i) {
        pooled.push_back(rng.vmf(ca, 200.0));
        want.push_back(0);
        pooled.push_back(rng.vmf(cb, 200.0));
        want.push_back(1);
    }
    Vec3 centers[2];
    std::vector<int> got = ci::deentangle(pooled, centers);
    // Labels are a (possibly flipped) permutation of the generating labels.
    int agree = 0;
    for (std::size_t i = 0; i < got.size(); ++i)
        if (got[i] == want[i]) ++agree;
    bool flipped = agree < int(got.size()) / 2;
    for (std::size_t i = 0; i < got.size(); ++i)
        CHECK(got[i] == (flipped ? 1 - want[i] : want[i]));
    // Centers recover the true modes.
    double d0 = std::min(ci::angle_between(centers[0], ca), ci::angle_between(centers[0], cb));
    double d1 = std::min(ci::angle_between(centers[1], ca), ci::angle_between(centers[1], cb));
    CHECK(d0 < 0.05);
    CHECK(d1 < 0.05);

    // Identical chains never separate.
    std::vector<Vec3> same(100, ca);
    CHECK_THROWS(ci::deentangle(same, centers));
}
