// SPDX-License-Identifier: Apache-2.0
//
// Map error metrics and the seeded experiment sweep behind NMSE-vs-L curves.

#pragma once

#include "vscat/config.hpp"

#include <chrono>
#include <condition_variable>
#include <functional>
#include <map>
#include <mutex>
#include <thread>
#include <tuple>

namespace vscat {

/// sum (q - q_hat)^2 / sum q^2 over every valid grid, measured ones included.
inline double map_nmse(const Cgm& truth, const Cgm& estimate) {
    if (truth.size() != estimate.size()) throw std::invalid_argument("map_nmse: maps have different support");
    double err = 0.0;
    double energy = 0.0;
    for (int i = 0; i < truth.size(); ++i) {
        const double d = truth.gain[i] - estimate.gain[i];
        err += d * d;
        energy += truth.gain[i] * truth.gain[i];
    }
    if (!(energy > 0.0)) throw std::invalid_argument("map_nmse: truth map is all zero");
    return err / energy;
}

inline std::string_view to_string(Selection s) { return s == Selection::type1 ? "type1" : "type2"; }

inline Selection parse_selection(std::string_view s) {
    if (s == "type1") return Selection::type1;
    if (s == "type2") return Selection::type2;
    throw std::invalid_argument("unknown selection '" + std::string(s) + "' (expected type1|type2)");
}

inline std::string_view to_string(TruthGenerator g) {
    return g == TruthGenerator::model_consistent ? "model_consistent" : "single_bounce";
}

inline TruthGenerator parse_generator(std::string_view s) {
    if (s == "model_consistent") return TruthGenerator::model_consistent;
    if (s == "single_bounce") return TruthGenerator::single_bounce;
    throw std::invalid_argument("unknown generator '" + std::string(s) + "' (expected model_consistent|single_bounce)");
}

// ---------------------------------------------------------------------------
// Experiment specification
// ---------------------------------------------------------------------------

/// Either a fixed scene file or a scene generated per seed.
struct ExperimentSpec {
    std::optional<SceneBundle> scene; // fixed scene; unset: generate per seed
    SceneGenSpec scene_gen;
    SceneLayout layout;
    TruthSpec truth;
    std::optional<int> n_true; // unset: every physical scatterer
    std::vector<int> l_values;
    std::vector<Selection> selections{Selection::type2};
    std::vector<Method> methods{Method::proposed, Method::kpsm, Method::issm, Method::kriging};
    std::vector<std::uint64_t> seeds;
    BaselineConfig config;
    std::string output = "sweep"; // results and aggregates file stem
    bool failures_as_one = false;
    bool record_runtime = false;

    void validate() const {
        if (l_values.empty() || selections.empty() || methods.empty() || seeds.empty()) {
            throw std::invalid_argument("experiment spec: L, selections, methods and seeds must be non-empty");
        }
        for (int l : l_values) {
            if (l < 1) throw std::invalid_argument("experiment spec: L values must be >= 1");
        }
        if (n_true && *n_true < 0) throw std::invalid_argument("experiment spec: n_true must be >= 0");
        if (output.empty()) throw std::invalid_argument("experiment spec: output stem must be non-empty");
        layout.sectors.validate();
        config.validate();
    }
};

namespace detail {

template <class T, class F>
std::vector<T> read_list(const Json& j, const char* key, F convert, const std::string& where) {
    if (!j.contains(key)) return {};
    const Json& list = j.at(key);
    if (!list.is_array()) throw FormatError(where + "." + key + ": expected an array");
    std::vector<T> out;
    for (std::size_t k = 0; k < list.size(); ++k) {
        const std::string w = where + "." + key + "[" + std::to_string(k) + "]";
        try {
            out.push_back(convert(list[k], w));
        } catch (const std::invalid_argument& e) {
            throw FormatError(w + ": " + e.what());
        }
    }
    return out;
}

inline std::string as_string(const Json& j, const std::string& where) {
    if (!j.is_string()) throw FormatError(where + ": expected a string");
    return j.get<std::string>();
}

} // namespace detail

/// Spec document layout (JSON or TOML):
///   seeds = [..] | { first, count }, L = [..], selections = [..], methods = [..],
///   output, failures_as_one, record_runtime,
///   [scene] path = ".." | generate = { n_scatterers, side, height, tx_height, ... },
///   [grid] nx, ny, plane_height, [sectors] m_azimuth, m_elevation,
///   [truth] n_true, src_v, src_rho, src_mean, noise_std_rel, jitter_frac,
///           reflection_loss, generator, [config] as in config files.
/// Relative scene paths resolve against `base_dir`.
inline ExperimentSpec experiment_from_json(const Json& j, const std::string& where, const std::string& base_dir = "") {
    using namespace detail;
    reject_unknown(j,
                   {"seeds", "L", "selections", "methods", "output", "failures_as_one", "record_runtime", "scene", "grid",
                    "sectors", "truth", "config"},
                   where);
    ExperimentSpec spec;
    if (j.contains("seeds") && j.at("seeds").is_object()) {
        const Json& s = j.at("seeds");
        reject_unknown(s, {"first", "count"}, where + ".seeds");
        const int first = integer(require(s, "first", where + ".seeds"), where + ".seeds.first");
        const int count = integer(require(s, "count", where + ".seeds"), where + ".seeds.count");
        if (count < 1) throw FormatError(where + ".seeds.count: must be >= 1");
        for (int k = 0; k < count; ++k) spec.seeds.push_back(static_cast<std::uint64_t>(first + k));
    } else {
        spec.seeds = read_list<std::uint64_t>(
            j, "seeds",
            [](const Json& v, const std::string& w) {
                if (!v.is_number_unsigned()) throw FormatError(w + ": expected a non-negative integer");
                return v.get<std::uint64_t>();
            },
            where);
    }
    spec.l_values = read_list<int>(j, "L", [](const Json& v, const std::string& w) { return integer(v, w); }, where);
    if (j.contains("selections")) {
        spec.selections = read_list<Selection>(
            j, "selections", [](const Json& v, const std::string& w) { return parse_selection(as_string(v, w)); }, where);
    }
    if (j.contains("methods")) {
        spec.methods = read_list<Method>(
            j, "methods", [](const Json& v, const std::string& w) { return parse_method(as_string(v, w)); }, where);
    }
    spec.output = read_string(j, "output", spec.output, where);
    read_field(j, "failures_as_one", spec.failures_as_one, where);
    read_field(j, "record_runtime", spec.record_runtime, where);

    const Json& scene = require(j, "scene", where);
    reject_unknown(scene, {"path", "generate"}, where + ".scene");
    if (scene.contains("path") == scene.contains("generate")) {
        throw FormatError(where + ".scene: give exactly one of 'path' or 'generate'");
    }
    if (scene.contains("path")) {
        std::string path = as_string(scene.at("path"), where + ".scene.path");
        if (!base_dir.empty() && !path.empty() && path.front() != '/') path = base_dir + "/" + path;
        spec.scene = load_scene(path);
        spec.layout = spec.scene->layout;
    } else {
        const Json& g = scene.at("generate");
        const std::string w = where + ".scene.generate";
        reject_unknown(g,
                       {"n_scatterers", "side", "height", "tx_height", "min_footprint", "max_footprint", "min_box_height",
                        "max_box_height", "gap", "wavelength", "alpha", "beta0"},
                       w);
        auto& sg = spec.scene_gen;
        read_field(g, "n_scatterers", sg.n_scatterers, w);
        read_field(g, "side", sg.side, w);
        read_field(g, "height", sg.height, w);
        read_field(g, "tx_height", sg.tx_height, w);
        read_field(g, "min_footprint", sg.min_footprint, w);
        read_field(g, "max_footprint", sg.max_footprint, w);
        read_field(g, "min_box_height", sg.min_box_height, w);
        read_field(g, "max_box_height", sg.max_box_height, w);
        read_field(g, "gap", sg.gap, w);
        read_field(g, "wavelength", sg.wavelength, w);
        read_field(g, "alpha", sg.alpha, w);
        if (g.contains("beta0")) sg.beta0 = number(g.at("beta0"), w + ".beta0");
    }
    if (j.contains("grid")) {
        const Json& g = j.at("grid");
        reject_unknown(g, {"nx", "ny", "plane_height"}, where + ".grid");
        read_field(g, "nx", spec.layout.nx, where + ".grid");
        read_field(g, "ny", spec.layout.ny, where + ".grid");
        read_field(g, "plane_height", spec.layout.plane_height, where + ".grid");
    }
    if (j.contains("sectors")) {
        const Json& s = j.at("sectors");
        reject_unknown(s, {"m_azimuth", "m_elevation"}, where + ".sectors");
        read_field(s, "m_azimuth", spec.layout.sectors.m_azimuth, where + ".sectors");
        read_field(s, "m_elevation", spec.layout.sectors.m_elevation, where + ".sectors");
    }
    if (j.contains("truth")) {
        const Json& t = j.at("truth");
        const std::string w = where + ".truth";
        reject_unknown(t,
                       {"n_true", "src_v", "src_rho", "src_mean", "noise_std_rel", "jitter_frac", "reflection_loss",
                        "generator"},
                       w);
        if (t.contains("n_true")) spec.n_true = integer(t.at("n_true"), w + ".n_true");
        read_field(t, "src_v", spec.truth.src_v, w);
        read_field(t, "src_rho", spec.truth.src_rho, w);
        read_field(t, "src_mean", spec.truth.src_mean, w);
        read_field(t, "noise_std_rel", spec.truth.noise_std_rel, w);
        read_field(t, "jitter_frac", spec.truth.jitter_frac, w);
        read_field(t, "reflection_loss", spec.truth.reflection_loss, w);
        const std::string gen = read_string(t, "generator", "", w);
        if (!gen.empty()) {
            try {
                spec.truth.generator = parse_generator(gen);
            } catch (const std::invalid_argument& e) {
                throw FormatError(w + ".generator: " + e.what());
            }
        }
    }
    if (j.contains("config")) apply_config(spec.config, j.at("config"), where + ".config");
    try {
        spec.validate();
        spec.truth.validate();
    } catch (const std::invalid_argument& e) {
        throw FormatError(where + ": " + e.what());
    }
    return spec;
}

// ---------------------------------------------------------------------------
// Runs
// ---------------------------------------------------------------------------

enum class RunStatus { ok, invalid_input, numeric_failure, error };

inline std::string_view to_string(RunStatus s) {
    switch (s) {
    case RunStatus::ok: return "ok";
    case RunStatus::invalid_input: return "invalid_input";
    case RunStatus::numeric_failure: return "numeric_failure";
    case RunStatus::error: return "error";
    }
    return "error";
}

inline RunStatus parse_status(std::string_view s) {
    if (s == "ok") return RunStatus::ok;
    if (s == "invalid_input") return RunStatus::invalid_input;
    if (s == "numeric_failure") return RunStatus::numeric_failure;
    if (s == "error") return RunStatus::error;
    throw std::invalid_argument("unknown run status '" + std::string(s) + "'");
}

struct RunKey {
    std::uint64_t seed = 0;
    int l = 0;
    Selection selection = Selection::type2;
    Method method = Method::proposed;

    auto tie() const { return std::tuple(seed, l, static_cast<int>(selection), static_cast<int>(method)); }
    bool operator<(const RunKey& o) const { return tie() < o.tie(); }
    bool operator==(const RunKey& o) const { return tie() == o.tie(); }
};

struct RunRow {
    RunKey key;
    std::optional<double> nmse;       // unset unless status is ok
    std::optional<double> runtime_ms; // recorded only on request
    RunStatus status = RunStatus::ok;
    std::string message;              // diagnostic, not written to the CSV
};

/// Runs in spec order: seed, then L, then selection, then method.
inline std::vector<RunKey> run_keys(const ExperimentSpec& spec) {
    std::vector<RunKey> keys;
    for (auto seed : spec.seeds) {
        for (int l : spec.l_values) {
            for (auto sel : spec.selections) {
                for (auto m : spec.methods) keys.push_back({seed, l, sel, m});
            }
        }
    }
    return keys;
}

/// Maps a thrown exception to a run status.
inline RunStatus classify_failure(const std::exception_ptr& error, std::string& message) {
    try {
        std::rethrow_exception(error);
    } catch (const NumericError& e) {
        message = e.what();
        return RunStatus::numeric_failure;
    } catch (const RankDeficientError& e) {
        message = e.what();
        return RunStatus::numeric_failure;
    } catch (const DegenerateSystemError& e) {
        message = e.what();
        return RunStatus::numeric_failure;
    } catch (const MissingCoefficientError& e) {
        message = e.what();
        return RunStatus::numeric_failure;
    } catch (const std::invalid_argument& e) {
        message = e.what();
        return RunStatus::invalid_input;
    } catch (const std::exception& e) {
        message = e.what();
        return RunStatus::error;
    }
}

/// Scene, grid and truth shared by every run of one seed.
struct SeedContext {
    Scene scene;
    GridMap grid;
    Truth truth;
};

inline SeedContext make_seed_context(const ExperimentSpec& spec, std::uint64_t seed) {
    SeedContext ctx;
    if (spec.scene) {
        ctx.scene = spec.scene->scene;
    } else {
        SceneGenSpec sg = spec.scene_gen;
        sg.seed = seed;
        ctx.scene = generate_scene(sg);
    }
    ctx.grid = partition_region(ctx.scene, spec.layout.nx, spec.layout.ny, spec.layout.plane_height);
    TruthSpec ts = spec.truth;
    ts.seed = seed;
    ts.n_true = spec.n_true.value_or(static_cast<int>(ctx.scene.scatterers.size()));
    ctx.truth = generate_truth(ctx.scene, ctx.grid, spec.layout.sectors, ts);
    return ctx;
}

/// One reconstruction scored against the truth; never throws.
inline RunRow run_one(const ExperimentSpec& spec, const SeedContext& ctx, const RunKey& key) {
    RunRow row;
    row.key = key;
    const auto start = std::chrono::steady_clock::now();
    try {
        const MeasurementSet ms = sample_measurements(ctx.truth.map, ctx.grid, ctx.scene, spec.layout.sectors, key.l,
                                                      key.selection, spec.truth.noise_std_rel, key.seed);
        const MethodResult r = run_method(key.method, ctx.scene, ctx.grid, spec.layout.sectors, ms, spec.config);
        row.nmse = map_nmse(ctx.truth.map, r.map.clamped());
    } catch (...) {
        row.status = classify_failure(std::current_exception(), row.message);
        row.nmse.reset();
    }
    if (spec.record_runtime) {
        row.runtime_ms = std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - start).count();
    }
    return row;
}

// ---------------------------------------------------------------------------
// Results tables
// ---------------------------------------------------------------------------

inline constexpr const char* kResultsHeader = "seed,L,selection,method,nmse,runtime_ms,status";
inline constexpr const char* kAggregatesHeader = "L,selection,method,mean_nmse,std_nmse,n_ok,n_failed";

inline std::string result_row_csv(const RunRow& r) {
    return std::to_string(r.key.seed) + "," + std::to_string(r.key.l) + "," + std::string(to_string(r.key.selection)) +
           "," + std::string(to_string(r.key.method)) + "," + (r.nmse ? format_double(*r.nmse) : "") + "," +
           (r.runtime_ms ? format_double(*r.runtime_ms) : "") + "," + std::string(to_string(r.status)) + "\n";
}

inline std::string results_to_csv(const std::vector<RunRow>& rows) {
    std::string out = std::string(kResultsHeader) + "\n";
    for (const auto& r : rows) out += result_row_csv(r);
    return out;
}

/// Rows of a results CSV; used to resume a sweep.
inline std::vector<RunRow> read_results_csv(const std::string& path) {
    std::vector<RunRow> rows;
    for (const auto& [line, cols] : detail::csv_rows(path, kResultsHeader)) {
        const std::string w = path + ":" + std::to_string(line);
        if (cols.size() != 7) throw FormatError(w + ": expected 7 fields");
        RunRow r;
        if (cols[0].empty() || cols[0].find_first_not_of("0123456789") != std::string::npos) {
            throw FormatError(w + ": seed must be a non-negative integer");
        }
        r.key.seed = std::stoull(cols[0]);
        r.key.l = detail::parse_int(cols[1], w + " L");
        try {
            r.key.selection = parse_selection(cols[2]);
            r.key.method = parse_method(cols[3]);
            r.status = parse_status(cols[6]);
        } catch (const std::invalid_argument& e) {
            throw FormatError(w + ": " + e.what());
        }
        if (!cols[4].empty()) r.nmse = detail::parse_double(cols[4], w + " nmse");
        if (!cols[5].empty()) r.runtime_ms = detail::parse_double(cols[5], w + " runtime_ms");
        if (r.status == RunStatus::ok && !r.nmse) throw FormatError(w + ": ok row without nmse");
        rows.push_back(std::move(r));
    }
    return rows;
}

struct AggregateRow {
    int l = 0;
    Selection selection = Selection::type2;
    Method method = Method::proposed;
    double mean = 0.0;
    double stddev = 0.0; // sample standard deviation, 0 below two values
    int n_ok = 0;
    int n_failed = 0;
};

/// Per (L, selection, method) statistics recomputed from run rows. Failed
/// runs count as NMSE 1 only with failures_as_one.
inline std::vector<AggregateRow> aggregate(const std::vector<RunRow>& rows, const ExperimentSpec& spec) {
    std::vector<AggregateRow> out;
    for (int l : spec.l_values) {
        for (auto sel : spec.selections) {
            for (auto m : spec.methods) {
                AggregateRow a{l, sel, m};
                std::vector<double> values;
                for (const auto& r : rows) {
                    if (r.key.l != l || r.key.selection != sel || r.key.method != m) continue;
                    if (r.status == RunStatus::ok) {
                        ++a.n_ok;
                        values.push_back(*r.nmse);
                    } else {
                        ++a.n_failed;
                        if (spec.failures_as_one) values.push_back(1.0);
                    }
                }
                if (!values.empty()) {
                    double sum = 0.0;
                    for (double v : values) sum += v;
                    a.mean = sum / values.size();
                    if (values.size() > 1) {
                        double ss = 0.0;
                        for (double v : values) ss += (v - a.mean) * (v - a.mean);
                        a.stddev = std::sqrt(ss / (values.size() - 1));
                    }
                } else {
                    a.mean = std::numeric_limits<double>::quiet_NaN();
                }
                out.push_back(a);
            }
        }
    }
    return out;
}

inline std::string aggregates_to_csv(const std::vector<AggregateRow>& rows) {
    std::string out = std::string(kAggregatesHeader) + "\n";
    for (const auto& a : rows) {
        out += std::to_string(a.l) + "," + std::string(to_string(a.selection)) + "," + std::string(to_string(a.method)) +
               "," + (std::isnan(a.mean) ? "" : format_double(a.mean)) + "," +
               (std::isnan(a.mean) ? "" : format_double(a.stddev)) + "," + std::to_string(a.n_ok) + "," +
               std::to_string(a.n_failed) + "\n";
    }
    return out;
}

// ---------------------------------------------------------------------------
// Sweep driver
// ---------------------------------------------------------------------------

struct SweepOptions {
    int jobs = 1;
    std::vector<RunRow> completed;                 // reused rows; a later duplicate key wins
    std::function<void(const RunRow&)> on_row;     // called in spec order
    std::function<void(const RunRow&)> on_progress; // called as runs finish
};

struct SweepResult {
    std::vector<RunRow> rows; // spec order
    std::vector<AggregateRow> aggregates;
    int failed = 0;
    int reused = 0;
};

/// Runs every (seed, L, selection, method) of the spec. Work is split by
/// seed across `jobs` threads; rows are delivered in spec order regardless.
inline SweepResult run_experiment(const ExperimentSpec& spec, const SweepOptions& options = {}) {
    spec.validate();
    const std::vector<RunKey> keys = run_keys(spec);
    std::map<RunKey, RunRow> done;
    for (const auto& r : options.completed) done.insert_or_assign(r.key, r);

    const std::size_t per_seed = keys.size() / spec.seeds.size();
    std::vector<std::optional<RunRow>> slots(keys.size());
    SweepResult result;
    for (std::size_t k = 0; k < keys.size(); ++k) {
        if (auto it = done.find(keys[k]); it != done.end()) {
            slots[k] = it->second;
            ++result.reused;
        }
    }

    std::mutex mu;
    std::condition_variable cv;
    std::size_t next_seed = 0;

    auto work = [&] {
        while (true) {
            std::size_t s;
            {
                std::lock_guard lock(mu);
                if (next_seed >= spec.seeds.size()) return;
                s = next_seed++;
            }
            const std::size_t first = s * per_seed;
            bool pending = false;
            for (std::size_t k = first; k < first + per_seed; ++k) pending |= !slots[k].has_value();
            if (!pending) continue;

            std::optional<SeedContext> ctx;
            std::exception_ptr ctx_error;
            try {
                ctx = make_seed_context(spec, spec.seeds[s]);
            } catch (...) {
                ctx_error = std::current_exception();
            }
            for (std::size_t k = first; k < first + per_seed; ++k) {
                {
                    std::lock_guard lock(mu);
                    if (slots[k]) continue;
                }
                RunRow row;
                if (ctx) {
                    row = run_one(spec, *ctx, keys[k]);
                } else {
                    row.key = keys[k];
                    row.status = classify_failure(ctx_error, row.message);
                }
                std::lock_guard lock(mu);
                if (options.on_progress) options.on_progress(row);
                slots[k] = std::move(row);
                cv.notify_all();
            }
        }
    };

    const int jobs = std::max(1, std::min<int>(options.jobs, static_cast<int>(spec.seeds.size())));
    std::vector<std::thread> pool;
    for (int t = 1; t < jobs; ++t) pool.emplace_back(work);
    std::thread main_worker;
    if (jobs == 1) {
        work();
    } else {
        main_worker = std::thread(work);
    }

    for (std::size_t k = 0; k < keys.size(); ++k) {
        std::unique_lock lock(mu);
        cv.wait(lock, [&] { return slots[k].has_value(); });
        RunRow row = *slots[k];
        lock.unlock();
        if (row.status != RunStatus::ok) ++result.failed;
        if (options.on_row) options.on_row(row);
        result.rows.push_back(std::move(row));
    }
    for (auto& t : pool) t.join();
    if (main_worker.joinable()) main_worker.join();

    result.aggregates = aggregate(result.rows, spec);
    return result;
}

} // namespace vscat
