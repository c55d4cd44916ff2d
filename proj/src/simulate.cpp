#include "ci/simulate.hpp"

#include <cmath>
#include <fstream>
#include <limits>
#include <sstream>
#include <stdexcept>

#include "json.hpp"

namespace ci {

namespace {
using nlohmann::json;

double photo_fraction(const AttenuationTable& table, double E) {
    return table.mu(MuKind::Photo, E) / table.mu(MuKind::Total, E);
}
}  // namespace

Vec3 position_at_effective_depth(const DetectorArray& array, const Vec3& origin, const Vec3& dir,
                                 double d) {
    if (!(d > 0.0)) throw std::invalid_argument("position_at_effective_depth: d must be > 0");
    double remaining = d;
    for (const RaySegment& seg : array.ray_segments(origin, dir)) {
        double len = seg.t_exit - seg.t_enter;
        if (remaining <= len) return origin + dir * (seg.t_enter + remaining);
        remaining -= len;
    }
    throw std::invalid_argument("position_at_effective_depth: depth exceeds in-sensor budget");
}

TransportRecord transport_photon(const DetectorArray& array, const AttenuationTable& table,
                                 const Vec3& r0, double E0, RngStream& rng) {
    TransportRecord rec;
    rec.theta1 = sample_first_direction(array, table, r0, E0, rng);

    // First depth: truncated exponential on the in-sensor budget.
    const double mu1 = table.mu(MuKind::Total, E0);
    const double d1_max = array.max_effective_distance(r0, rec.theta1);
    double u = rng.uniform();
    double d1 = -std::log1p(u * std::expm1(-mu1 * d1_max)) / mu1;
    d1 = std::min(d1, d1_max * (1.0 - 1e-12));
    Vec3 r1 = position_at_effective_depth(array, r0, rec.theta1, d1);

    if (rng.uniform() < photo_fraction(table, E0)) {
        rec.outcome = TransportRecord::Outcome::AbsorbedFirst;
        return rec;
    }
    rec.E1 = kn_sample_deposit(E0, rng.uniform());

    // Scatter onto the Compton cone, uniform in azimuth.
    double omega = compton_angle(E0, rec.E1);
    Vec3 e1, e2;
    orthonormal_basis(rec.theta1, e1, e2);
    double phi = 2.0 * 3.14159265358979323846 * rng.uniform();
    double s = std::sin(omega), c = std::cos(omega);
    Vec3 theta2 = rec.theta1 * c + e1 * (s * std::cos(phi)) + e2 * (s * std::sin(phi));

    // Second leg: free flight against the remaining in-sensor budget.
    const double mu2 = table.mu(MuKind::Total, E0 - rec.E1);
    const double d2_max = array.max_effective_distance(r1, theta2);
    double d2 = -std::log1p(-rng.uniform()) / mu2;
    if (d2 >= d2_max) {
        rec.outcome = TransportRecord::Outcome::Escaped;
        return rec;
    }
    Vec3 r2 = position_at_effective_depth(array, r1, theta2, d2);

    rec.outcome = TransportRecord::Outcome::Completed;
    rec.event.first = {r1, rec.E1};
    double rem = E0 - rec.E1;
    if (rng.uniform() < photo_fraction(table, rem)) {
        rec.event.second_kind = SecondKind::Absorb;
        rec.event.second = {r2, rem};
    } else {
        rec.event.second_kind = SecondKind::Scatter;
        rec.event.second = {r2, kn_sample_deposit(rem, rng.uniform())};
    }
    return rec;
}

NoisyEvent add_noise(const DetectorArray& array, const Event& event, const NoiseScales& scales,
                     RngStream& rng) {
    auto noisy_interaction = [&](const Interaction& in) {
        std::optional<int> idx = array.containing_sensor(in.position);
        if (!idx) throw std::runtime_error("add_noise: interaction outside every sensor");
        const Sensor& s = array.sensors()[*idx];
        Vec3 p;
        for (int a = 0; a < 3; ++a) {
            double sigma = (a == 2) ? scales.sigma_z : scales.sigma_xy;
            double lo = s.center[a] - s.half_extents[a];
            double hi = s.center[a] + s.half_extents[a];
            p[a] = rng.truncated_normal(in.position[a], sigma, lo, hi);
        }
        double E = rng.truncated_normal(in.deposit, scales.sigma_E, 0.0,
                                        std::numeric_limits<double>::infinity());
        return Interaction{p, E};
    };
    NoisyEvent out;
    out.first = noisy_interaction(event.first);
    out.second = noisy_interaction(event.second);
    return out;
}

std::vector<NoisyEvent> generate_events(const DetectorArray& array, const AttenuationTable& table,
                                        const SimConfig& config, SimStats* stats) {
    if (config.sources.empty()) throw std::invalid_argument("generate_events: no sources");
    if (config.n_events < 1) throw std::invalid_argument("generate_events: n_events must be >= 1");
    if (config.outlier_fraction < 0.0 || config.outlier_fraction > 1.0)
        throw std::invalid_argument("generate_events: outlier_fraction out of range");
    double total_w = 0.0;
    for (const SourceSpec& s : config.sources) {
        if (!(s.weight > 0.0)) throw std::invalid_argument("generate_events: weights must be > 0");
        total_w += s.weight;
    }

    SimStats local;
    RngStream root(config.seed);
    RngStream pick = root.derive("source-pick", 0, 0);

    auto next_completed = [&](int* source_out) {
        for (std::int64_t attempt = 0;; ++attempt) {
            if (attempt > 100'000'000)
                throw std::runtime_error("generate_events: completion rate too low");
            double w = pick.uniform() * total_w;
            int src = 0;
            for (std::size_t i = 0; i < config.sources.size(); ++i) {
                w -= config.sources[i].weight;
                if (w <= 0.0) {
                    src = static_cast<int>(i);
                    break;
                }
            }
            Vec3 r0 = config.sources[src].direction.normalized() * config.sphere_radius;
            RngStream rng = root.derive("photon", static_cast<std::uint64_t>(local.photons), 0);
            ++local.photons;
            TransportRecord rec = transport_photon(array, table, r0, config.E0, rng);
            switch (rec.outcome) {
                case TransportRecord::Outcome::AbsorbedFirst:
                    ++local.absorbed_first;
                    break;
                case TransportRecord::Outcome::Escaped:
                    ++local.escaped;
                    break;
                case TransportRecord::Outcome::Completed:
                    ++local.completed;
                    *source_out = src;
                    return rec.event;
            }
        }
    };

    std::vector<NoisyEvent> out;
    out.reserve(config.n_events);
    RngStream noise_rng = root.derive("noise", 0, 0);
    RngStream outlier_rng = root.derive("outlier", 0, 0);
    for (int n = 0; n < config.n_events; ++n) {
        int src = -1;
        Event ev = next_completed(&src);
        EventTruth truth;
        truth.source = src;
        if (outlier_rng.uniform() < config.outlier_fraction) {
            truth.source = -1;
            if (outlier_rng.uniform() < 0.5) {
                std::swap(ev.first, ev.second);  // swapped interaction order
            } else {
                int other_src = -1;  // cross-photon pairing
                Event other = next_completed(&other_src);
                ev.second = other.second;
                ev.second_kind = other.second_kind;
            }
        }
        truth.kind = ev.second_kind;
        truth.first = ev.first;
        truth.second = ev.second;
        NoisyEvent ne = add_noise(array, ev, config.noise, noise_rng);
        ne.truth = truth;
        out.push_back(ne);
    }
    if (stats) *stats = local;
    return out;
}

namespace {
json vec_to_json(const Vec3& v) { return json::array({v.x, v.y, v.z}); }

Vec3 vec_from_json(const json& j) {
    if (!j.is_array() || j.size() != 3) throw std::runtime_error("expected 3-vector");
    return {j[0].get<double>(), j[1].get<double>(), j[2].get<double>()};
}
}  // namespace

void write_events_jsonl(const std::string& path, const std::vector<NoisyEvent>& events) {
    std::ofstream f(path);
    if (!f) throw std::runtime_error("cannot write events: " + path);
    for (std::size_t i = 0; i < events.size(); ++i) {
        const NoisyEvent& e = events[i];
        json j{{"id", static_cast<int>(i)},
               {"r1", vec_to_json(e.first.position)},
               {"E1", e.first.deposit},
               {"r2", vec_to_json(e.second.position)},
               {"E2", e.second.deposit}};
        if (e.truth) {
            j["truth"] = {{"source", e.truth->source},
                          {"kind", e.truth->kind == SecondKind::Absorb ? "absorb" : "scatter"},
                          {"r1", vec_to_json(e.truth->first.position)},
                          {"E1", e.truth->first.deposit},
                          {"r2", vec_to_json(e.truth->second.position)},
                          {"E2", e.truth->second.deposit}};
        }
        f << j.dump() << '\n';
    }
    if (!f) throw std::runtime_error("failed writing events: " + path);
}

std::vector<NoisyEvent> read_events_jsonl(const std::string& path) {
    std::ifstream f(path);
    if (!f) throw std::runtime_error("cannot open events: " + path);
    std::vector<NoisyEvent> out;
    std::string line;
    int line_no = 0;
    while (std::getline(f, line)) {
        ++line_no;
        if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
        json j;
        try {
            j = json::parse(line);
        } catch (const std::exception& ex) {
            throw std::runtime_error(path + ":" + std::to_string(line_no) + ": " + ex.what());
        }
        NoisyEvent e;
        e.first = {vec_from_json(j.at("r1")), j.at("E1").get<double>()};
        e.second = {vec_from_json(j.at("r2")), j.at("E2").get<double>()};
        if (j.contains("truth")) {
            const json& t = j["truth"];
            EventTruth truth;
            truth.source = t.at("source").get<int>();
            truth.kind = t.at("kind").get<std::string>() == "absorb" ? SecondKind::Absorb
                                                                     : SecondKind::Scatter;
            truth.first = {vec_from_json(t.at("r1")), t.at("E1").get<double>()};
            truth.second = {vec_from_json(t.at("r2")), t.at("E2").get<double>()};
            e.truth = truth;
        }
        out.push_back(e);
    }
    return out;
}

std::vector<int> summed_energy_histogram(const std::vector<NoisyEvent>& events, double lo,
                                         double hi, int n_bins) {
    if (!(hi > lo) || n_bins < 1) throw std::invalid_argument("summed_energy_histogram: bad bins");
    std::vector<int> counts(n_bins, 0);
    for (const NoisyEvent& e : events) {
        double s = e.first.deposit + e.second.deposit;
        if (s < lo || s >= hi) continue;
        int b = static_cast<int>((s - lo) / (hi - lo) * n_bins);
        counts[std::min(b, n_bins - 1)]++;
    }
    return counts;
}

}  // namespace ci
