// Pipeline driver: simulate -> em -> localize -> backproject -> evaluate,
// with reproducible configuration and per-command manifests.
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "json.hpp"

#include "ci/analysis.hpp"
#include "ci/energy_em.hpp"
#include "ci/forward.hpp"
#include "ci/geometry.hpp"
#include "ci/localize.hpp"
#include "ci/physics.hpp"
#include "ci/sha256.hpp"
#include "ci/simulate.hpp"

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

struct ConfigError : std::runtime_error {
    using std::runtime_error::runtime_error;
};
struct DataError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

std::uint64_t labeled_seed(std::uint64_t master, std::string_view label) {
    std::uint64_t h = 1469598103934665603ull;
    for (char ch : label) {
        h ^= static_cast<unsigned char>(ch);
        h *= 1099511628211ull;
    }
    std::uint64_t s = master ^ h;
    return ci::splitmix64(s);
}

json load_json_file(const std::string& path, const char* what) {
    std::ifstream f(path);
    if (!f) throw DataError(std::string("cannot open ") + what + ": " + path);
    try {
        return json::parse(f);
    } catch (const std::exception& ex) {
        throw DataError(path + ": " + ex.what());
    }
}

struct Pipeline {
    json config;           // merged config (file + flag overrides)
    std::string out_dir = "out";
    std::uint64_t seed = 1;

    ci::DetectorArray array = ci::DetectorArray::paper_4x7();
    std::optional<ci::AttenuationTable> table;
    double E0 = 0.6617;
    double sphere_radius = 300.0;

    std::string config_hash() const { return ci::sha256_hex(config.dump()); }

    std::string out_path(const std::string& name) const {
        fs::create_directories(out_dir);
        return (fs::path(out_dir) / name).string();
    }

    void write_manifest(const std::string& command,
                        const std::vector<std::string>& input_files,
                        const std::vector<std::string>& output_files) const {
        json inputs = json::object(), outputs = json::object();
        for (const std::string& p : input_files) inputs[p] = ci::sha256_file_hex(p);
        for (const std::string& p : output_files) outputs[p] = ci::sha256_file_hex(p);
        json m{{"command", command},
               {"config", config},
               {"config_sha256", config_hash()},
               {"seed", seed},
               {"inputs", inputs},
               {"outputs", outputs}};
        std::ofstream f(out_path(command + "_manifest.json"));
        if (!f) throw DataError("cannot write manifest");
        f << m.dump(2) << '\n';
    }
};

ci::Vec3 source_direction(const json& s) {
    if (s.contains("direction")) {
        const json& d = s["direction"];
        return ci::Vec3{d.at(0).get<double>(), d.at(1).get<double>(), d.at(2).get<double>()}
            .normalized();
    }
    return ci::from_lon_lat_deg(s.value("lon_deg", 0.0), s.value("lat_deg", 0.0));
}

Pipeline make_pipeline(const std::string& config_file, const std::string& out_dir_flag,
                       std::optional<std::uint64_t> seed_flag) {
    Pipeline p;
    if (!config_file.empty()) {
        std::ifstream f(config_file);
        if (!f) throw ConfigError("cannot open config: " + config_file);
        try {
            p.config = json::parse(f);
        } catch (const std::exception& ex) {
            throw ConfigError(config_file + ": " + ex.what());
        }
    } else {
        p.config = json::object();
    }
    if (!out_dir_flag.empty()) p.config["out_dir"] = out_dir_flag;
    if (seed_flag) p.config["seed"] = *seed_flag;
    if (!p.config.contains("seed"))
        throw ConfigError("a seed is required (config key \"seed\" or --seed)");

    p.out_dir = p.config.value("out_dir", "out");
    p.seed = p.config["seed"].get<std::uint64_t>();
    p.E0 = p.config.value("E0", 0.6617);
    p.sphere_radius = p.config.value("sphere_radius", 300.0);
    if (!(p.E0 > 0.0) || !(p.sphere_radius > 0.0))
        throw ConfigError("E0 and sphere_radius must be positive");

    if (p.config.contains("detector")) {
        const json& d = p.config["detector"];
        if (d.contains("file")) {
            try {
                p.array = ci::DetectorArray::from_json_file(d["file"].get<std::string>());
            } catch (const std::exception& ex) {
                throw ConfigError(std::string("detector layout: ") + ex.what());
            }
        } else if (d.value("preset", "paper-4x7") != "paper-4x7") {
            throw ConfigError("unknown detector preset: " + d["preset"].get<std::string>());
        }
    }
    std::string atten = p.config.value("attenuation", "data/lyso_attenuation.csv");
    try {
        p.table.emplace(ci::AttenuationTable::load_csv(atten));
    } catch (const std::exception& ex) {
        throw ConfigError(std::string("attenuation table: ") + ex.what());
    }
    return p;
}

// ---- LUT handling -------------------------------------------------------

ci::DirectionPriorLut::Config lut_config(const Pipeline& p) {
    ci::DirectionPriorLut::Config c;
    if (p.config.contains("lut")) {
        const json& l = p.config["lut"];
        c.n_nodes = l.value("n_nodes", c.n_nodes);
        c.n_samples = l.value("n_samples", c.n_samples);
        c.kept_samples = l.value("kept_samples", c.kept_samples);
        c.kde_kappa = l.value("kde_kappa", c.kde_kappa);
    }
    return c;
}

std::string lut_cache_dir(const Pipeline& p) {
    if (const char* env = std::getenv("COMPTON_LUT_DIR")) return env;
    return p.out_dir;
}

ci::DirectionPriorLut load_or_build_lut(const Pipeline& p, bool force_build) {
    ci::DirectionPriorLut::Config cfg = lut_config(p);
    std::uint64_t lut_seed = labeled_seed(p.seed, "lut");
    std::ostringstream name;
    name << "lut_" << std::hex << p.array.layout_hash() << "_" << cfg.n_nodes << "_"
         << cfg.kept_samples << "_" << lut_seed << ".bin";
    fs::path dir = lut_cache_dir(p);
    fs::create_directories(dir);
    fs::path path = dir / name.str();
    if (!force_build && fs::exists(path)) {
        std::cerr << "loading direction prior lut: " << path << '\n';
        return ci::DirectionPriorLut::load(path.string());
    }
    std::cerr << "building direction prior lut (" << cfg.n_nodes << " nodes)...\n";
    ci::DirectionPriorLut lut =
        ci::DirectionPriorLut::build(p.array, *p.table, p.E0, ci::SphereModel{p.sphere_radius},
                                     cfg, lut_seed);
    lut.save(path.string());
    std::cerr << "lut cached at " << path << '\n';
    return lut;
}

// ---- subcommands --------------------------------------------------------

void cmd_simulate(const Pipeline& p) {
    ci::SimConfig sim;
    sim.E0 = p.E0;
    sim.sphere_radius = p.sphere_radius;
    sim.n_events = p.config.value("n_events", 10);
    sim.outlier_fraction = p.config.value("outlier_fraction", 0.0);
    sim.seed = labeled_seed(p.seed, "simulate");
    if (p.config.contains("noise")) {
        const json& n = p.config["noise"];
        sim.noise.sigma_xy = n.value("sigma_xy", sim.noise.sigma_xy);
        sim.noise.sigma_z = n.value("sigma_z", sim.noise.sigma_z);
        sim.noise.sigma_E = n.value("sigma_E", sim.noise.sigma_E);
    }
    if (p.config.contains("sources")) {
        for (const json& s : p.config["sources"])
            sim.sources.push_back({source_direction(s), s.value("weight", 1.0)});
    } else {
        sim.sources.push_back({ci::from_lon_lat_deg(0.0, 0.0), 1.0});
    }
    std::vector<ci::NoisyEvent> events;
    ci::SimStats stats;
    if (sim.n_events == 0) {
        // Empty run is legal: emit an empty event file.
    } else {
        events = ci::generate_events(p.array, *p.table, sim, &stats);
    }
    std::string events_path = p.out_path("events.jsonl");
    ci::write_events_jsonl(events_path, events);
    json stats_json{{"photons", stats.photons},
                    {"absorbed_first", stats.absorbed_first},
                    {"escaped", stats.escaped},
                    {"completed", stats.completed},
                    {"events", events.size()}};
    std::ofstream sf(p.out_path("simulate_stats.json"));
    sf << stats_json.dump(2) << '\n';
    p.write_manifest("simulate", {}, {events_path, p.out_path("simulate_stats.json")});
    std::cout << "wrote " << events.size() << " events to " << events_path << '\n';
}

void cmd_em(const Pipeline& p, const std::string& events_file) {
    std::vector<ci::NoisyEvent> events;
    try {
        events = ci::read_events_jsonl(events_file);
    } catch (const std::exception& ex) {
        throw DataError(ex.what());
    }
    if (events.empty()) throw DataError("event file is empty: " + events_file);
    std::vector<double> sums;
    sums.reserve(events.size());
    for (const ci::NoisyEvent& e : events) sums.push_back(e.first.deposit + e.second.deposit);

    ci::EmConfig cfg;
    if (p.config.contains("em")) {
        const json& e = p.config["em"];
        cfg.e0_min = e.value("e0_min", cfg.e0_min);
        cfg.e0_max = e.value("e0_max", cfg.e0_max);
        cfg.e0_step = e.value("e0_step", cfg.e0_step);
        cfg.sigma_min = e.value("sigma_min", cfg.sigma_min);
        cfg.sigma_max = e.value("sigma_max", cfg.sigma_max);
        cfg.sigma_step = e.value("sigma_step", cfg.sigma_step);
        cfg.iterations = e.value("iterations", cfg.iterations);
    }
    ci::EmResult r = ci::run_em(sums, cfg);
    json cls = json::array();
    for (double g : r.responsibility) cls.push_back(g >= 0.5 ? "absorb" : "scatter");
    json out{{"E0", r.E0},
             {"sigma", r.sigma},
             {"p_A", r.p_absorb},
             {"p_CS", 1.0 - r.p_absorb},
             {"iterations", static_cast<int>(r.loglik_trace.size())},
             {"loglik_trace", r.loglik_trace},
             {"degenerate_fallback", r.degenerate_fallback},
             {"classifications", cls}};
    std::string em_path = p.out_path("em.json");
    std::ofstream f(em_path);
    f << out.dump(2) << '\n';
    if (!f) throw DataError("cannot write " + em_path);
    f.close();
    p.write_manifest("em", {events_file}, {em_path});
    std::cout << "E0=" << r.E0 << " sigma=" << r.sigma << " p_A=" << r.p_absorb << '\n';
}

ci::GibbsConfig gibbs_config(const Pipeline& p) {
    ci::GibbsConfig g;
    g.E0 = p.E0;
    g.sphere_radius = p.sphere_radius;
    g.seed = labeled_seed(p.seed, "localize");
    if (p.config.contains("gibbs")) {
        const json& j = p.config["gibbs"];
        g.n_sources = j.value("n_sources", g.n_sources);
        g.sweeps = j.value("sweeps", g.sweeps);
        g.burn_in = j.value("burn_in", g.burn_in);
        g.kappa_mix = j.value("kappa", g.kappa_mix);
        g.a = j.value("a", g.a);
        g.a_E = j.value("a_E", g.a_E);
        if (j.contains("dirichlet_alpha"))
            g.dirichlet_alpha = j["dirichlet_alpha"].get<std::vector<double>>();
        g.init_source_weight = j.value("init_source_weight",
                                       g.n_sources == 1 ? 0.99 : 0.49 * g.n_sources);
    }
    return g;
}

std::vector<ci::SecondKind> event_kinds(const std::vector<ci::NoisyEvent>& events,
                                        const std::string& em_file) {
    std::vector<ci::SecondKind> kinds;
    kinds.reserve(events.size());
    if (!em_file.empty()) {
        json em = load_json_file(em_file, "em output");
        if (!em.contains("classifications") || em["classifications"].size() != events.size())
            throw DataError("em output does not classify every event");
        for (const json& c : em["classifications"])
            kinds.push_back(c.get<std::string>() == "absorb" ? ci::SecondKind::Absorb
                                                             : ci::SecondKind::Scatter);
        return kinds;
    }
    for (std::size_t n = 0; n < events.size(); ++n) {
        if (!events[n].truth)
            throw DataError("event " + std::to_string(n) +
                            " has no truth record; provide --em classifications");
        kinds.push_back(events[n].truth->kind);
    }
    return kinds;
}

void cmd_localize(const Pipeline& p, const std::string& events_file, const std::string& em_file,
                  bool rebuild_lut) {
    std::vector<ci::NoisyEvent> events;
    try {
        events = ci::read_events_jsonl(events_file);
    } catch (const std::exception& ex) {
        throw DataError(ex.what());
    }
    if (events.empty()) throw DataError("event file is empty: " + events_file);
    std::vector<ci::SecondKind> kinds = event_kinds(events, em_file);

    ci::DirectionPriorLut lut = load_or_build_lut(p, rebuild_lut);
    ci::TabulatedConePrior prior(p.array, *p.table, p.E0, lut);
    ci::GibbsConfig cfg = gibbs_config(p);
    ci::GibbsResult r = ci::run_gibbs(p.array, *p.table, prior, events, kinds, cfg);

    const int K = cfg.n_sources;
    std::vector<std::string> outputs;

    // Pool per-sweep source samples; two-source chains go through the
    // de-entangling step to undo label switching.
    std::vector<std::vector<ci::Vec3>> chains(K);
    std::vector<std::vector<int>> chain_sweeps(K);
    if (K == 2) {
        std::vector<ci::Vec3> pool;
        std::vector<int> pool_sweep;
        for (std::size_t i = 0; i < r.samples.size(); ++i)
            for (int k = 0; k < K; ++k) {
                pool.push_back(r.samples[i].r0[k]);
                pool_sweep.push_back(cfg.burn_in + static_cast<int>(i));
            }
        ci::Vec3 centers[2];
        std::vector<int> labels = ci::deentangle(pool, centers);
        for (std::size_t i = 0; i < pool.size(); ++i) {
            chains[labels[i]].push_back(pool[i]);
            chain_sweeps[labels[i]].push_back(pool_sweep[i]);
        }
    } else {
        for (std::size_t i = 0; i < r.samples.size(); ++i)
            for (int k = 0; k < K; ++k) {
                chains[k].push_back(r.samples[i].r0[k]);
                chain_sweeps[k].push_back(cfg.burn_in + static_cast<int>(i));
            }
    }
    for (int k = 0; k < K; ++k) {
        std::string path = p.out_path("chain_" + std::to_string(k) + ".csv");
        std::ofstream f(path);
        f << "sweep,ux,uy,uz\n";
        for (std::size_t i = 0; i < chains[k].size(); ++i) {
            const ci::Vec3& u = chains[k][i];
            f << chain_sweeps[k][i] << ',' << u.x << ',' << u.y << ',' << u.z << '\n';
        }
        if (!f) throw DataError("cannot write " + path);
        outputs.push_back(path);
    }

    std::string sig_path = p.out_path("sigma_traces.csv");
    {
        std::ofstream f(sig_path);
        f << "sweep,sigma_xy,sigma_z,sigma_e,w_outlier\n";
        for (std::size_t i = 0; i < r.samples.size(); ++i)
            f << cfg.burn_in + static_cast<int>(i) << ',' << r.samples[i].sigma_xy << ','
              << r.samples[i].sigma_z << ',' << r.samples[i].sigma_e << ','
              << r.samples[i].w[0] << '\n';
        outputs.push_back(sig_path);
    }

    json diag{{"acceptance", r.diagnostics.acceptance},
              {"final_step", r.diagnostics.final_step},
              {"sigma_traces", sig_path},
              {"seed", cfg.seed}};
    std::string diag_path = p.out_path("localize_diagnostics.json");
    std::ofstream df(diag_path);
    df << diag.dump(2) << '\n';
    outputs.push_back(diag_path);

    // Run summary: per-source spherical means and credible regions.
    json sources = json::array();
    for (int k = 0; k < K; ++k) {
        if (chains[k].empty()) throw DataError("empty chain after de-entangling");
        ci::Vec3 mean = ci::spherical_mean(chains[k]);
        json regions = json::array();
        for (int a = 1; a <= 9; ++a) {
            double level = a / 10.0;
            ci::CredibleRegion cr = ci::credible_region(chains[k], level);
            regions.push_back({{"level", level},
                               {"center", {cr.center.x, cr.center.y, cr.center.z}},
                               {"radius_rad", cr.radius},
                               {"radius_mm", cr.radius * p.sphere_radius}});
        }
        sources.push_back({{"mean_direction", {mean.x, mean.y, mean.z}},
                           {"mean_point_mm",
                            {mean.x * p.sphere_radius, mean.y * p.sphere_radius,
                             mean.z * p.sphere_radius}},
                           {"samples", chains[k].size()},
                           {"credible_regions", regions}});
    }
    double mw0 = 0.0, msxy = 0.0, msz = 0.0, mse = 0.0;
    for (const ci::GibbsSample& s : r.samples) {
        mw0 += s.w[0];
        msxy += s.sigma_xy;
        msz += s.sigma_z;
        mse += s.sigma_e;
    }
    double ns = static_cast<double>(r.samples.size());
    json summary{{"n_sources", K},
                 {"sphere_radius", p.sphere_radius},
                 {"retained_samples", r.samples.size()},
                 {"sources", sources},
                 {"mean_outlier_weight", mw0 / ns},
                 {"mean_sigma_xy", msxy / ns},
                 {"mean_sigma_z", msz / ns},
                 {"mean_sigma_e", mse / ns},
                 {"diagnostics", diag_path}};
    std::string sum_path = p.out_path("localize_summary.json");
    std::ofstream sf(sum_path);
    sf << summary.dump(2) << '\n';
    if (!sf) throw DataError("cannot write " + sum_path);
    sf.close();
    outputs.push_back(sum_path);

    std::vector<std::string> inputs{events_file};
    if (!em_file.empty()) inputs.push_back(em_file);
    p.write_manifest("localize", inputs, outputs);
    std::cout << "retained " << r.samples.size() << " samples; summary at " << sum_path << '\n';
}

void cmd_backproject(const Pipeline& p, const std::string& events_file) {
    std::vector<ci::NoisyEvent> events;
    try {
        events = ci::read_events_jsonl(events_file);
    } catch (const std::exception& ex) {
        throw DataError(ex.what());
    }
    if (events.empty()) throw DataError("event file is empty: " + events_file);
    int pixels = p.config.value("bp_pixels", 10242);
    double ridge = p.config.value("bp_ridge_sigma", 0.05);
    int k = p.config.contains("gibbs") ? p.config["gibbs"].value("n_sources", 1) : 1;
    ci::SphereGrid grid(pixels);
    std::vector<double> image =
        ci::back_project(grid, ci::SphereModel{p.sphere_radius}, events, p.E0, ridge);
    std::string img_path = p.out_path("bp_image.csv");
    ci::write_image_csv(img_path, grid, image);
    std::vector<ci::Vec3> modes = ci::bp_modes(grid, image, k);
    json jm = json::array();
    for (const ci::Vec3& m : modes)
        jm.push_back({{"direction", {m.x, m.y, m.z}},
                      {"point_mm", {m.x * p.sphere_radius, m.y * p.sphere_radius,
                                    m.z * p.sphere_radius}}});
    json out{{"pixels", pixels}, {"ridge_sigma", ridge}, {"modes", jm}};
    std::string bp_path = p.out_path("bp.json");
    std::ofstream f(bp_path);
    f << out.dump(2) << '\n';
    p.write_manifest("backproject", {events_file}, {img_path, bp_path});
    std::cout << "bp image at " << img_path << '\n';
}

void cmd_evaluate(const Pipeline& p, const std::string& runs_file) {
    json runs = load_json_file(runs_file, "runs list");
    if (!runs.is_array() || runs.empty()) throw DataError("runs list must be a non-empty array");
    json per_run = json::array();
    std::vector<double> gibbs_err, bp_err;
    std::vector<int> cover_hits(9, 0);
    int cover_total = 0;
    for (const json& run : runs) {
        json summary = load_json_file(run.at("summary").get<std::string>(), "run summary");
        ci::Vec3 truth = source_direction(run);
        const json& src = summary.at("sources").at(run.value("source_index", 0));
        const json& md = src.at("mean_direction");
        ci::Vec3 mean{md.at(0).get<double>(), md.at(1).get<double>(), md.at(2).get<double>()};
        double r = summary.value("sphere_radius", p.sphere_radius);
        double err = ci::geodesic_distance(ci::SphereModel{r}, mean * r, truth * r);
        gibbs_err.push_back(err);
        json entry{{"summary", run["summary"]}, {"gibbs_error_mm", err}};
        if (run.contains("bp")) {
            json bp = load_json_file(run["bp"].get<std::string>(), "bp output");
            const json& m0 = bp.at("modes").at(run.value("source_index", 0)).at("direction");
            ci::Vec3 bpm{m0.at(0).get<double>(), m0.at(1).get<double>(), m0.at(2).get<double>()};
            double berr = ci::geodesic_distance(ci::SphereModel{r}, bpm * r, truth * r);
            bp_err.push_back(berr);
            entry["bp_error_mm"] = berr;
        }
        ++cover_total;
        for (const json& reg : src.at("credible_regions")) {
            int idx = static_cast<int>(std::lround(reg.at("level").get<double>() * 10)) - 1;
            if (idx < 0 || idx > 8) continue;
            const json& cj = reg.at("center");
            ci::Vec3 center{cj.at(0).get<double>(), cj.at(1).get<double>(), cj.at(2).get<double>()};
            if (ci::angle_between(center, truth) <= reg.at("radius_rad").get<double>())
                cover_hits[idx]++;
        }
        per_run.push_back(entry);
    }
    auto box_json = [](const std::vector<double>& v) {
        ci::BoxStats b = ci::box_stats(v);
        return json{{"min", b.minimum},     {"whisker_low", b.whisker_low},
                    {"q1", b.q1},           {"median", b.median},
                    {"q3", b.q3},           {"whisker_high", b.whisker_high},
                    {"max", b.maximum},     {"mean", b.mean},
                    {"n", v.size()}};
    };
    json coverage = json::array();
    for (int a = 0; a < 9; ++a)
        coverage.push_back({{"level", (a + 1) / 10.0},
                            {"observed", static_cast<double>(cover_hits[a]) / cover_total}});
    json report{{"runs", per_run},
                {"gibbs_box_stats_mm", box_json(gibbs_err)},
                {"coverage_curve", coverage}};
    if (!bp_err.empty()) report["bp_box_stats_mm"] = box_json(bp_err);
    std::string path = p.out_path("evaluate_report.json");
    std::ofstream f(path);
    f << report.dump(2) << '\n';
    if (!f) throw DataError("cannot write " + path);
    f.close();
    p.write_manifest("evaluate", {runs_file}, {path});
    std::cout << "report at " << path << '\n';
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"Compton imager pipeline: simulation, energy EM, Bayesian localization"};
    app.require_subcommand(1);

    std::string config_file, out_dir, events_file, em_file, runs_file;
    std::optional<std::uint64_t> seed_flag;
    int threads = 1;
    bool rebuild_lut = false;

    app.add_option("--config", config_file, "pipeline config JSON");
    app.add_option("--out-dir", out_dir, "output directory (overrides config)");
    std::uint64_t seed_raw = 0;
    auto* seed_opt = app.add_option("--seed", seed_raw, "master seed (overrides config)");
    app.add_option("--threads", threads, "worker cap")->check(CLI::PositiveNumber);

    auto* sim = app.add_subcommand("simulate", "generate noisy two-site events");
    auto* em = app.add_subcommand("em", "estimate (E0, sigma, p_A) and classify events");
    em->add_option("--events", events_file, "event JSONL file")->required();
    auto* loc = app.add_subcommand("localize", "Gibbs posterior over source directions");
    loc->add_option("--events", events_file, "event JSONL file")->required();
    loc->add_option("--em", em_file, "em output JSON with per-event classifications");
    auto* bp = app.add_subcommand("backproject", "cone back-projection image and modes");
    bp->add_option("--events", events_file, "event JSONL file")->required();
    auto* ev = app.add_subcommand("evaluate", "aggregate runs into an error/coverage report");
    ev->add_option("--runs", runs_file, "JSON array of {summary, lon_deg, lat_deg, [bp]}")
        ->required();
    auto* lut = app.add_subcommand("lut", "direction-prior lookup table utilities");
    auto* lut_build = lut->add_subcommand("build", "build and cache the LUT");
    lut_build->add_flag("--force", rebuild_lut, "rebuild even if cached");

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        int code = app.exit(e);
        return code == 0 ? 0 : 2;
    }
    if (seed_opt->count() > 0) seed_flag = seed_raw;

    try {
        Pipeline p = make_pipeline(config_file, out_dir, seed_flag);
        if (sim->parsed()) cmd_simulate(p);
        if (em->parsed()) cmd_em(p, events_file);
        if (loc->parsed()) cmd_localize(p, events_file, em_file, false);
        if (bp->parsed()) cmd_backproject(p, events_file);
        if (ev->parsed()) cmd_evaluate(p, runs_file);
        if (lut->parsed()) {
            if (!lut_build->parsed()) throw ConfigError("usage: lut build [--force]");
            load_or_build_lut(p, rebuild_lut);
        }
    } catch (const ConfigError& e) {
        std::cerr << "config error: " << e.what() << '\n';
        return 2;
    } catch (const DataError& e) {
        std::cerr << "error: " << e.what() << '\n';
        return 3;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << '\n';
        return 3;
    }
    return 0;
}
