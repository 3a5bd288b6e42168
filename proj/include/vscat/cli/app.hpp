// SPDX-License-Identifier: Apache-2.0
//
// The vscat command-line front end. Exit codes: 0 success, 2 input error,
// 3 numeric failure, 4 partial sweep failure, 1 unexpected internal error.

#pragma once

#include "vscat/metrics.hpp"

#include <CLI11.hpp>

#include <cstdlib>
#include <filesystem>
#include <iostream>

namespace vscat::cli {

inline constexpr int kExitOk = 0;
inline constexpr int kExitInternal = 1;
inline constexpr int kExitInput = 2;
inline constexpr int kExitNumeric = 3;
inline constexpr int kExitPartial = 4;

/// Error that maps directly to an exit code.
class ExitError : public std::runtime_error {
public:
    ExitError(int code, const std::string& msg) : std::runtime_error(msg), code_(code) {}
    int code() const { return code_; }

private:
    int code_;
};

/// Output locations confined to one directory.
class OutDir {
public:
    explicit OutDir(std::filesystem::path root) : root_(std::move(root)) {}

    const std::filesystem::path& root() const { return root_; }

    /// `rel` under the root; absolute paths and ".." segments are rejected.
    std::string resolve(const std::string& rel) const {
        const std::filesystem::path p(rel);
        if (rel.empty() || p.is_absolute()) throw ExitError(kExitInput, "output path '" + rel + "' must be relative to --out-dir");
        for (const auto& part : p) {
            if (part == "..") throw ExitError(kExitInput, "output path '" + rel + "' must not leave --out-dir");
        }
        const std::filesystem::path full = root_ / p;
        std::filesystem::create_directories(full.parent_path());
        return full.string();
    }

private:
    std::filesystem::path root_;
};

struct GlobalOptions {
    std::uint64_t seed = 1;
    std::string config_path;
    std::vector<std::string> overrides;
    std::string out_dir;
    bool quiet = false;
    bool record_runtime = false;
};

namespace detail {

inline BaselineConfig effective_config(const GlobalOptions& g) {
    BaselineConfig config;
    if (!g.config_path.empty()) apply_config(config, parse_config_file(g.config_path), g.config_path);
    for (const auto& o : g.overrides) apply_config(config, parse_override(o), "--set " + o);
    try {
        config.validate();
        config.estimator.validate();
    } catch (const std::invalid_argument& e) {
        throw FormatError(std::string("config: ") + e.what());
    }
    return config;
}

inline GridMap grid_for(const SceneBundle& b) {
    try {
        return partition_region(b.scene, b.layout.nx, b.layout.ny, b.layout.plane_height);
    } catch (const std::invalid_argument& e) {
        throw FormatError(std::string("scene grid: ") + e.what());
    }
}

inline std::string file_label(const std::string& path) {
    std::string name = std::filesystem::path(path).filename().string();
    for (const char* suffix : {".map.csv", ".csv"}) {
        const std::string s(suffix);
        if (name.size() > s.size() && name.compare(name.size() - s.size(), s.size(), s) == 0) {
            return name.substr(0, name.size() - s.size());
        }
    }
    return name;
}

} // namespace detail

// ---------------------------------------------------------------------------
// Subcommands
// ---------------------------------------------------------------------------

struct GenSceneOptions {
    SceneGenSpec gen;
    SceneLayout layout;
    std::string out = "scene.json";
};

inline int gen_scene(const GlobalOptions& g, const OutDir& dir, GenSceneOptions o) {
    o.gen.seed = g.seed;
    Scene scene;
    try {
        scene = generate_scene(o.gen);
    } catch (const PlacementError& e) {
        throw ExitError(kExitInput, std::string(e.what()) + "; try fewer or smaller scatterers");
    }
    SceneBundle bundle{scene, o.layout};
    detail::grid_for(bundle);
    const std::string path = dir.resolve(o.out);
    write_text(path, scene_to_json(scene, o.layout).dump(2) + "\n");
    if (!g.quiet) std::cout << "wrote " << path << " (" << scene.scatterers.size() << " scatterers)\n";
    return kExitOk;
}

struct GenTruthOptions {
    std::string scene;
    std::optional<int> n_true;
    std::string generator = "model_consistent";
    TruthSpec spec;
    std::string out = "truth";
};

inline int gen_truth(const GlobalOptions& g, const OutDir& dir, GenTruthOptions o) {
    const SceneBundle b = load_scene(o.scene);
    const GridMap grid = detail::grid_for(b);
    TruthSpec spec = o.spec;
    spec.seed = g.seed;
    spec.generator = parse_generator(o.generator);
    spec.n_true = o.n_true.value_or(static_cast<int>(b.scene.scatterers.size()));
    const Truth truth = generate_truth(b.scene, grid, b.layout.sectors, spec);

    const std::string map_path = dir.resolve(o.out + ".map.csv");
    write_text(dir.resolve(o.out + ".model.json"), model_to_json(truth.model).dump(2) + "\n");
    write_text(map_path, map_to_csv(truth.map, grid));
    const Json meta = {{"seed", g.seed},
                       {"scene", std::filesystem::path(o.scene).filename().string()},
                       {"truth_spec",
                        {{"n_true", spec.n_true},
                         {"generator", std::string(to_string(spec.generator))},
                         {"src_v", spec.src_v},
                         {"src_rho", spec.src_rho},
                         {"src_mean", spec.src_mean},
                         {"jitter_frac", spec.jitter_frac},
                         {"reflection_loss", spec.reflection_loss}}}};
    write_text(dir.resolve(o.out + ".meta.json"), meta.dump(2) + "\n");
    if (!g.quiet) std::cout << "wrote " << map_path << " (" << grid.size() << " valid grids)\n";
    return kExitOk;
}

struct SampleOptions {
    std::string scene;
    std::string truth;
    int l = 20;
    std::string selection = "type2";
    double noise = 0.0;
    std::string out = "measurements.csv";
};

inline int sample(const GlobalOptions& g, const OutDir& dir, const SampleOptions& o) {
    const SceneBundle b = load_scene(o.scene);
    const GridMap grid = detail::grid_for(b);
    const Cgm truth = map_on_grid(read_map_csv(o.truth), grid, o.truth);
    const MeasurementSet ms = sample_measurements(truth, grid, b.scene, b.layout.sectors, o.l,
                                                  parse_selection(o.selection), o.noise, g.seed);
    const std::string path = dir.resolve(o.out);
    write_text(path, measurements_to_csv(ms, grid));
    if (!g.quiet) std::cout << "wrote " << path << " (" << ms.size() << " measurements)\n";
    return kExitOk;
}

struct ReconstructOptions {
    std::string scene;
    std::string measurements;
    std::string method = "proposed";
    std::string out;
};

inline int reconstruct(const GlobalOptions& g, const OutDir& dir, ReconstructOptions o) {
    const SceneBundle b = load_scene(o.scene);
    const GridMap grid = detail::grid_for(b);
    const MeasurementSet ms = read_measurements_csv(o.measurements, grid);
    const Method method = parse_method(o.method);
    const BaselineConfig config = detail::effective_config(g);
    if (o.out.empty()) o.out = std::string(to_string(method));

    Json report;
    report["method"] = std::string(to_string(method));
    report["measurements"] = ms.size();
    report["config"] = config_to_json(config);
    const std::string report_path = dir.resolve(o.out + ".report.json");
    try {
        const MethodResult r = run_method(method, b.scene, grid, b.layout.sectors, ms, config);
        report.update(method_report_to_json(r, g.record_runtime));
        const std::string map_path = dir.resolve(o.out + ".map.csv");
        write_text(map_path, map_to_csv(r.map, grid));
        if (r.model) write_text(dir.resolve(o.out + ".model.json"), model_to_json(*r.model, r.gpr).dump(2) + "\n");
        write_text(report_path, report.dump(2) + "\n");
        if (!g.quiet) {
            std::cout << "wrote " << map_path << " (" << grid.size() << " grids, method " << o.method << ")\n";
            for (const auto& w : r.warnings) std::cerr << "warning: " << w << "\n";
        }
        return kExitOk;
    } catch (const std::invalid_argument&) {
        throw;
    } catch (...) {
        std::string message;
        const RunStatus status = classify_failure(std::current_exception(), message);
        if (status != RunStatus::numeric_failure) throw;
        report["status"] = "numeric_failure";
        report["error"] = message;
        write_text(report_path, report.dump(2) + "\n");
        throw ExitError(kExitNumeric, message + " (report: " + report_path + ")");
    }
}

struct EvaluateOptions {
    std::string truth;
    std::vector<std::string> estimates;
    std::string out = "evaluation.csv";
};

inline int evaluate(const GlobalOptions& g, const OutDir& dir, const EvaluateOptions& o) {
    const MapTable truth = read_map_csv(o.truth);
    std::string csv = "estimate,nmse\n";
    for (const auto& path : o.estimates) {
        const MapTable est = read_map_csv(path);
        if (est.nx != truth.nx || est.ny != truth.ny) throw FormatError(path + ": grid differs from the truth map");
        Cgm a;
        Cgm b;
        for (std::size_t c = 0; c < truth.cells.size(); ++c) {
            if (truth.cells[c].has_value() != est.cells[c].has_value()) {
                throw FormatError(path + ": occupied cells differ from the truth map at cell " + std::to_string(c));
            }
            if (truth.cells[c]) {
                a.gain.push_back(*truth.cells[c]);
                b.gain.push_back(*est.cells[c]);
            }
        }
        const double nmse = map_nmse(a, b);
        const std::string label = detail::file_label(path);
        csv += label + "," + format_double(nmse) + "\n";
        if (!g.quiet) std::cout << label << ": nmse " << nmse << " (" << 10.0 * std::log10(nmse) << " dB)\n";
    }
    write_text(dir.resolve(o.out), csv);
    return kExitOk;
}

struct SweepCliOptions {
    std::string spec;
    bool resume = false;
    int jobs = 1;
};

inline int sweep(const GlobalOptions& g, const OutDir& dir, const SweepCliOptions& o) {
    const std::string base = std::filesystem::path(o.spec).parent_path().string();
    ExperimentSpec spec = experiment_from_json(parse_config_file(o.spec), o.spec, base);
    if (!g.config_path.empty() || !g.overrides.empty()) {
        if (!g.config_path.empty()) apply_config(spec.config, parse_config_file(g.config_path), g.config_path);
        for (const auto& ov : g.overrides) apply_config(spec.config, parse_override(ov), "--set " + ov);
    }
    spec.record_runtime = spec.record_runtime || g.record_runtime;
    if (o.jobs < 1) throw FormatError("--jobs must be >= 1");

    const std::string results_path = dir.resolve(spec.output + ".results.csv");
    const std::string aggregates_path = dir.resolve(spec.output + ".aggregates.csv");
    SweepOptions opts;
    opts.jobs = o.jobs;
    // Rows are appended in spec order as they arrive, so an interrupted
    // sweep leaves a valid prefix for --resume.
    const std::string partial = results_path + ".partial";
    if (o.resume) {
        for (const auto& path : {results_path, partial}) {
            if (!std::filesystem::exists(path)) continue;
            auto rows = read_results_csv(path);
            opts.completed.insert(opts.completed.end(), rows.begin(), rows.end());
        }
    }
    std::ofstream appender(partial, std::ios::binary | std::ios::trunc);
    if (!appender) throw std::runtime_error("cannot write '" + partial + "'");
    appender << kResultsHeader << "\n" << std::flush;
    const std::size_t total = run_keys(spec).size();
    std::size_t finished = 0;
    opts.on_row = [&](const RunRow& r) { appender << result_row_csv(r) << std::flush; };
    opts.on_progress = [&](const RunRow& r) {
        ++finished;
        if (g.quiet) return;
        std::cerr << "[" << finished << "/" << total << "] seed " << r.key.seed << " L " << r.key.l << " "
                  << to_string(r.key.selection) << " " << to_string(r.key.method) << ": "
                  << (r.nmse ? format_double(*r.nmse) : std::string(to_string(r.status)));
        if (!r.message.empty()) std::cerr << " (" << r.message << ")";
        std::cerr << "\n";
    };
    const SweepResult result = run_experiment(spec, opts);
    appender.close();
    std::filesystem::rename(partial, results_path);
    write_text(aggregates_path, aggregates_to_csv(result.aggregates));
    if (!g.quiet) {
        std::cerr << "sweep: " << result.rows.size() << " runs (" << result.reused << " reused, " << result.failed
                  << " failed)\n";
    }
    return result.failed > 0 ? kExitPartial : kExitOk;
}

// ---------------------------------------------------------------------------
// Entry point
// ---------------------------------------------------------------------------

inline int run(int argc, char** argv) {
    CLI::App app{"Channel gain map reconstruction with virtual scatterers"};
    app.require_subcommand(1);
    app.fallthrough();
    GlobalOptions g;
    app.add_option("--seed", g.seed, "Master seed; stages derive sub-seeds from it")->capture_default_str();
    app.add_option("--config", g.config_path, "Method config file (.toml or .json)")->check(CLI::ExistingFile);
    app.add_option("--set", g.overrides, "Config override, e.g. estimator.step_rho=4 (repeatable)");
    app.add_option("--out-dir", g.out_dir, "Directory for every output file (default: $VSCAT_OUT_DIR or .)");
    app.add_flag("--quiet", g.quiet, "Suppress informational output");
    app.add_flag("--record-runtime", g.record_runtime, "Record wall-clock times in reports and results");

    GenSceneOptions scene_o;
    auto* c_scene = app.add_subcommand("gen-scene", "Generate a random scene of box scatterers");
    c_scene->add_option("--region", scene_o.gen.side, "Square region side (m)")->capture_default_str();
    c_scene->add_option("--height", scene_o.gen.height, "Region height (m)")->capture_default_str();
    c_scene->add_option("--n-scatterers", scene_o.gen.n_scatterers)->capture_default_str()->check(CLI::NonNegativeNumber);
    c_scene->add_option("--tx-height", scene_o.gen.tx_height)->capture_default_str();
    c_scene->add_option("--wavelength", scene_o.gen.wavelength)->capture_default_str();
    c_scene->add_option("--alpha", scene_o.gen.alpha, "Path-loss exponent")->capture_default_str();
    c_scene->add_option("--nx", scene_o.layout.nx)->capture_default_str();
    c_scene->add_option("--ny", scene_o.layout.ny)->capture_default_str();
    c_scene->add_option("--plane-height", scene_o.layout.plane_height)->capture_default_str();
    c_scene->add_option("--m-azimuth", scene_o.layout.sectors.m_azimuth)->capture_default_str();
    c_scene->add_option("--m-elevation", scene_o.layout.sectors.m_elevation)->capture_default_str();
    c_scene->add_option("--out", scene_o.out)->capture_default_str();

    GenTruthOptions truth_o;
    auto* c_truth = app.add_subcommand("gen-truth", "Generate a ground-truth model and map for a scene");
    c_truth->add_option("--scene", truth_o.scene)->required()->check(CLI::ExistingFile);
    c_truth->add_option("--n-true", truth_o.n_true, "True scatterers (default: all)");
    c_truth->add_option("--generator", truth_o.generator)->capture_default_str()->check(
        CLI::IsMember({"model_consistent", "single_bounce"}));
    c_truth->add_option("--src-v", truth_o.spec.src_v)->capture_default_str();
    c_truth->add_option("--src-rho", truth_o.spec.src_rho)->capture_default_str();
    c_truth->add_option("--src-mean", truth_o.spec.src_mean)->capture_default_str();
    c_truth->add_option("--jitter-frac", truth_o.spec.jitter_frac)->capture_default_str();
    c_truth->add_option("--reflection-loss", truth_o.spec.reflection_loss)->capture_default_str();
    c_truth->add_option("--out", truth_o.out, "Output stem")->capture_default_str();

    SampleOptions sample_o;
    auto* c_sample = app.add_subcommand("sample", "Sample noisy measurements from a truth map");
    c_sample->add_option("--scene", sample_o.scene)->required()->check(CLI::ExistingFile);
    c_sample->add_option("--truth", sample_o.truth, "Truth map CSV")->required()->check(CLI::ExistingFile);
    c_sample->add_option("--L", sample_o.l, "Number of measured grids")->capture_default_str();
    c_sample->add_option("--selection", sample_o.selection)->capture_default_str()->check(CLI::IsMember({"type1", "type2"}));
    c_sample->add_option("--noise", sample_o.noise, "Relative noise std")->capture_default_str();
    c_sample->add_option("--out", sample_o.out)->capture_default_str();

    ReconstructOptions rec_o;
    auto* c_rec = app.add_subcommand("reconstruct", "Reconstruct a map from measurements");
    c_rec->add_option("--scene", rec_o.scene)->required()->check(CLI::ExistingFile);
    c_rec->add_option("--measurements", rec_o.measurements)->required()->check(CLI::ExistingFile);
    c_rec->add_option("--method", rec_o.method)->capture_default_str()->check(
        CLI::IsMember({"proposed", "kpsm", "issm", "kriging"}));
    c_rec->add_option("--out", rec_o.out, "Output stem (default: method name)");

    EvaluateOptions eval_o;
    auto* c_eval = app.add_subcommand("evaluate", "Score estimated maps against a truth map");
    c_eval->add_option("--truth", eval_o.truth)->required()->check(CLI::ExistingFile);
    c_eval->add_option("--estimate", eval_o.estimates, "Estimated map CSV (repeatable)")->required()->check(CLI::ExistingFile);
    c_eval->add_option("--out", eval_o.out)->capture_default_str();

    SweepCliOptions sweep_o;
    auto* c_sweep = app.add_subcommand("sweep", "Run a seeded experiment sweep");
    c_sweep->add_option("--spec", sweep_o.spec, "Experiment spec (.toml or .json)")->required()->check(CLI::ExistingFile);
    c_sweep->add_flag("--resume", sweep_o.resume, "Keep rows already in the results file");
    c_sweep->add_option("--jobs", sweep_o.jobs, "Worker threads")->capture_default_str();

    try {
        app.parse(argc, argv);
    } catch (const CLI::CallForHelp& e) {
        return app.exit(e);
    } catch (const CLI::CallForAllHelp& e) {
        return app.exit(e);
    } catch (const CLI::ParseError& e) {
        app.exit(e);
        return kExitInput;
    }

    try {
        if (g.out_dir.empty()) {
            const char* env = std::getenv("VSCAT_OUT_DIR");
            g.out_dir = env && *env ? env : ".";
        }
        const OutDir dir(g.out_dir);
        if (c_scene->parsed()) return gen_scene(g, dir, scene_o);
        if (c_truth->parsed()) return gen_truth(g, dir, truth_o);
        if (c_sample->parsed()) return sample(g, dir, sample_o);
        if (c_rec->parsed()) return reconstruct(g, dir, rec_o);
        if (c_eval->parsed()) return evaluate(g, dir, eval_o);
        if (c_sweep->parsed()) return sweep(g, dir, sweep_o);
        return kExitInput;
    } catch (const ExitError& e) {
        std::cerr << "error: " << e.what() << "\n";
        return e.code();
    } catch (const FormatError& e) {
        std::cerr << "error: " << e.what() << "\n";
        return kExitInput;
    } catch (const std::invalid_argument& e) {
        std::cerr << "error: " << e.what() << "\n";
        return kExitInput;
    } catch (const std::exception& e) {
        std::cerr << "internal error: " << e.what() << "\n";
        return kExitInternal;
    }
}

} // namespace vscat::cli
