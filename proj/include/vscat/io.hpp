// SPDX-License-Identifier: Apache-2.0
//
// File formats: scene JSON, channel gain map CSV, measurement CSV, model JSON
// and fit report JSON. Gains are stored linear; gain_db is informational.

#pragma once

#include "vscat/baselines.hpp"

#include <nlohmann/json.hpp>

#include <algorithm>
#include <cstdio>
#include <fstream>
#include <sstream>
#include <stdexcept>
#include <string>
#include <tuple>
#include <vector>

namespace vscat {

using Json = nlohmann::json;

/// Malformed or inconsistent input file.
class FormatError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

/// Grid and sectorization that travel with a scene file.
struct SceneLayout {
    int nx = 30;
    int ny = 30;
    double plane_height = 1.5;
    AodSectorization sectors;
};

struct SceneBundle {
    Scene scene;
    SceneLayout layout;
};

/// Decimal text that round-trips a double exactly.
inline std::string format_double(double x) {
    char buf[32];
    std::snprintf(buf, sizeof buf, "%.17g", x);
    return buf;
}

inline std::string read_text(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw FormatError("cannot open '" + path + "'");
    std::ostringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

inline void write_text(const std::string& path, const std::string& text) {
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw std::runtime_error("cannot write '" + path + "'");
    out << text;
    if (!out) throw std::runtime_error("write failed for '" + path + "'");
}

inline Json parse_json_file(const std::string& path) {
    const std::string text = read_text(path);
    try {
        return Json::parse(text);
    } catch (const Json::parse_error& e) {
        throw FormatError(path + ": " + e.what());
    }
}

namespace detail {

inline Json vec3_json(const Point3& p) { return Json::array({p.x(), p.y(), p.z()}); }

inline const Json& require(const Json& obj, const char* key, const std::string& where) {
    if (!obj.is_object() || !obj.contains(key)) throw FormatError(where + ": missing field '" + key + "'");
    return obj.at(key);
}

inline double number(const Json& j, const std::string& where) {
    if (!j.is_number()) throw FormatError(where + ": expected a number");
    return j.get<double>();
}

inline int integer(const Json& j, const std::string& where) {
    if (!j.is_number_integer()) throw FormatError(where + ": expected an integer");
    return j.get<int>();
}

inline Point3 vec3(const Json& j, const std::string& where) {
    if (!j.is_array() || j.size() != 3) throw FormatError(where + ": expected [x, y, z]");
    return {number(j[0], where + "[0]"), number(j[1], where + "[1]"), number(j[2], where + "[2]")};
}

inline std::vector<std::string> split_csv_line(const std::string& line) {
    std::vector<std::string> out;
    std::string cell;
    std::istringstream ss(line);
    while (std::getline(ss, cell, ',')) out.push_back(cell);
    if (!line.empty() && line.back() == ',') out.emplace_back();
    return out;
}

inline double parse_double(const std::string& s, const std::string& where) {
    std::size_t used = 0;
    double v = 0.0;
    try {
        v = std::stod(s, &used);
    } catch (const std::exception&) {
        throw FormatError(where + ": '" + s + "' is not a number");
    }
    if (used != s.size()) throw FormatError(where + ": '" + s + "' is not a number");
    return v;
}

inline int parse_int(const std::string& s, const std::string& where) {
    std::size_t used = 0;
    long v = 0;
    try {
        v = std::stol(s, &used);
    } catch (const std::exception&) {
        throw FormatError(where + ": '" + s + "' is not an integer");
    }
    if (used != s.size()) throw FormatError(where + ": '" + s + "' is not an integer");
    return static_cast<int>(v);
}

/// Data lines of a CSV after checking the header; CR and blank lines dropped.
inline std::vector<std::pair<int, std::vector<std::string>>> csv_rows(const std::string& path,
                                                                      const std::string& header) {
    std::istringstream in(read_text(path));
    std::string line;
    int line_no = 0;
    std::vector<std::pair<int, std::vector<std::string>>> rows;
    bool seen_header = false;
    while (std::getline(in, line)) {
        ++line_no;
        if (!line.empty() && line.back() == '\r') line.pop_back();
        if (line.empty()) continue;
        if (!seen_header) {
            if (line != header) throw FormatError(path + ":" + std::to_string(line_no) + ": expected header '" + header + "'");
            seen_header = true;
            continue;
        }
        rows.emplace_back(line_no, split_csv_line(line));
    }
    if (!seen_header) throw FormatError(path + ": empty file, expected header '" + header + "'");
    return rows;
}

} // namespace detail

// ---------------------------------------------------------------------------
// Scene
// ---------------------------------------------------------------------------

inline Json scene_to_json(const Scene& scene, const SceneLayout& layout) {
    Json j;
    j["region"] = {{"min", detail::vec3_json(scene.region.min)}, {"max", detail::vec3_json(scene.region.max)}};
    j["tx"] = detail::vec3_json(scene.tx);
    j["beta0"] = scene.beta0;
    j["alpha"] = scene.alpha;
    j["wavelength"] = scene.wavelength;
    j["scatterers"] = Json::array();
    for (const auto& s : scene.scatterers) {
        j["scatterers"].push_back(
            {{"id", s.id}, {"min", detail::vec3_json(s.box.min)}, {"max", detail::vec3_json(s.box.max)}});
    }
    j["grid"] = {{"nx", layout.nx}, {"ny", layout.ny}, {"plane_height", layout.plane_height}};
    j["sectors"] = {{"m_azimuth", layout.sectors.m_azimuth}, {"m_elevation", layout.sectors.m_elevation}};
    return j;
}

/// Parses and validates a scene; grid and sectors keys are optional.
inline SceneBundle scene_from_json(const Json& j, const std::string& where = "scene") {
    using detail::require;
    SceneBundle b;
    const Json& region = require(j, "region", where);
    b.scene.region.min = detail::vec3(require(region, "min", where + ".region"), where + ".region.min");
    b.scene.region.max = detail::vec3(require(region, "max", where + ".region"), where + ".region.max");
    b.scene.tx = detail::vec3(require(j, "tx", where), where + ".tx");
    b.scene.beta0 = detail::number(require(j, "beta0", where), where + ".beta0");
    b.scene.alpha = detail::number(require(j, "alpha", where), where + ".alpha");
    b.scene.wavelength = detail::number(require(j, "wavelength", where), where + ".wavelength");
    const Json& list = require(j, "scatterers", where);
    if (!list.is_array()) throw FormatError(where + ".scatterers: expected an array");
    for (std::size_t k = 0; k < list.size(); ++k) {
        const std::string w = where + ".scatterers[" + std::to_string(k) + "]";
        PhysicalScatterer s;
        s.id = detail::integer(require(list[k], "id", w), w + ".id");
        s.box.min = detail::vec3(require(list[k], "min", w), w + ".min");
        s.box.max = detail::vec3(require(list[k], "max", w), w + ".max");
        b.scene.scatterers.push_back(s);
    }
    if (j.contains("grid")) {
        const Json& g = j.at("grid");
        b.layout.nx = detail::integer(require(g, "nx", where + ".grid"), where + ".grid.nx");
        b.layout.ny = detail::integer(require(g, "ny", where + ".grid"), where + ".grid.ny");
        b.layout.plane_height = detail::number(require(g, "plane_height", where + ".grid"), where + ".grid.plane_height");
    }
    if (j.contains("sectors")) {
        const Json& s = j.at("sectors");
        b.layout.sectors.m_azimuth = detail::integer(require(s, "m_azimuth", where + ".sectors"), where + ".sectors.m_azimuth");
        b.layout.sectors.m_elevation =
            detail::integer(require(s, "m_elevation", where + ".sectors"), where + ".sectors.m_elevation");
    }
    try {
        b.scene.validate();
        b.layout.sectors.validate();
    } catch (const std::invalid_argument& e) {
        throw FormatError(where + ": " + e.what());
    }
    if (b.layout.nx < 1 || b.layout.ny < 1) throw FormatError(where + ".grid: nx and ny must be >= 1");
    return b;
}

inline SceneBundle load_scene(const std::string& path) { return scene_from_json(parse_json_file(path), path); }

// ---------------------------------------------------------------------------
// Channel gain map CSV
// ---------------------------------------------------------------------------

inline constexpr const char* kMapHeader = "ix,iy,x,y,gain_linear,gain_db";

/// One row per cell in row-major order; occupied cells carry empty gains.
/// Negative estimates are clamped to zero.
inline std::string map_to_csv(const Cgm& map, const GridMap& grid) {
    if (map.size() != grid.size()) throw std::invalid_argument("map_to_csv: map/grid size mismatch");
    std::string out = std::string(kMapHeader) + "\n";
    for (int c = 0; c < grid.cell_count(); ++c) {
        const Point3 center = grid.cell_center(c);
        out += std::to_string(grid.ix_of(c)) + "," + std::to_string(grid.iy_of(c)) + "," + format_double(center.x()) + "," +
               format_double(center.y()) + ",";
        const int i = grid.dense_of_cell[c];
        if (i >= 0) {
            const double g = std::max(map.gain[i], 0.0);
            out += format_double(g) + "," + format_double(to_db(g));
        } else {
            out += ",";
        }
        out += "\n";
    }
    return out;
}

/// A parsed map keyed by cell index; nullopt marks an occupied cell.
struct MapTable {
    int nx = 0;
    int ny = 0;
    std::vector<std::optional<double>> cells;
};

inline MapTable read_map_csv(const std::string& path) {
    const auto rows = detail::csv_rows(path, kMapHeader);
    std::vector<std::tuple<int, int, std::optional<double>>> parsed;
    MapTable t;
    for (const auto& [line, cols] : rows) {
        const std::string w = path + ":" + std::to_string(line);
        if (cols.size() != 6) throw FormatError(w + ": expected 6 fields");
        const int ix = detail::parse_int(cols[0], w + " ix");
        const int iy = detail::parse_int(cols[1], w + " iy");
        if (ix < 0 || iy < 0) throw FormatError(w + ": negative cell index");
        std::optional<double> g;
        if (!cols[4].empty()) {
            g = detail::parse_double(cols[4], w + " gain_linear");
            if (!std::isfinite(*g) || *g < 0.0) throw FormatError(w + ": gain_linear must be finite and >= 0");
        }
        t.nx = std::max(t.nx, ix + 1);
        t.ny = std::max(t.ny, iy + 1);
        parsed.emplace_back(ix, iy, g);
    }
    if (static_cast<long>(t.nx) * t.ny != static_cast<long>(parsed.size())) {
        throw FormatError(path + ": rows do not form a complete " + std::to_string(t.nx) + "x" + std::to_string(t.ny) +
                          " grid");
    }
    t.cells.assign(parsed.size(), std::nullopt);
    std::vector<char> seen(parsed.size(), 0);
    for (const auto& [ix, iy, g] : parsed) {
        const int c = iy * t.nx + ix;
        if (seen[c]) throw FormatError(path + ": duplicate cell (" + std::to_string(ix) + "," + std::to_string(iy) + ")");
        seen[c] = 1;
        t.cells[c] = g;
    }
    return t;
}

/// Map on the grid's valid cells; the table's support must match exactly.
inline Cgm map_on_grid(const MapTable& t, const GridMap& grid, const std::string& where) {
    if (t.nx != grid.nx || t.ny != grid.ny) {
        throw FormatError(where + ": map is " + std::to_string(t.nx) + "x" + std::to_string(t.ny) + ", grid is " +
                          std::to_string(grid.nx) + "x" + std::to_string(grid.ny));
    }
    Cgm out;
    out.gain.resize(grid.size());
    for (int c = 0; c < grid.cell_count(); ++c) {
        const int i = grid.dense_of_cell[c];
        if ((i >= 0) != t.cells[c].has_value()) {
            throw FormatError(where + ": cell " + std::to_string(c) + (i >= 0 ? " is valid but has no gain" : " is occupied but has a gain"));
        }
        if (i >= 0) out.gain[i] = *t.cells[c];
    }
    return out;
}

// ---------------------------------------------------------------------------
// Measurement CSV
// ---------------------------------------------------------------------------

inline constexpr const char* kMeasurementHeader = "grid_index,gain_linear";

/// grid_index is the row-major cell index iy * nx + ix.
inline std::string measurements_to_csv(const MeasurementSet& ms, const GridMap& grid) {
    std::string out = std::string(kMeasurementHeader) + "\n";
    for (int r = 0; r < ms.size(); ++r) {
        out += std::to_string(grid.valid_cells[ms.grids[r]]) + "," + format_double(ms.gains[r]) + "\n";
    }
    return out;
}

inline MeasurementSet read_measurements_csv(const std::string& path, const GridMap& grid) {
    MeasurementSet ms;
    std::vector<std::pair<int, double>> entries;
    std::vector<char> seen(grid.size(), 0);
    for (const auto& [line, cols] : detail::csv_rows(path, kMeasurementHeader)) {
        const std::string w = path + ":" + std::to_string(line);
        if (cols.size() != 2) throw FormatError(w + ": expected 2 fields");
        const int cell = detail::parse_int(cols[0], w + " grid_index");
        const double g = detail::parse_double(cols[1], w + " gain_linear");
        if (cell < 0 || cell >= grid.cell_count()) throw FormatError(w + ": grid_index outside the grid");
        const int i = grid.dense_of_cell[cell];
        if (i < 0) throw FormatError(w + ": grid_index " + std::to_string(cell) + " is an occupied cell");
        if (seen[i]) throw FormatError(w + ": duplicate grid_index " + std::to_string(cell));
        if (!std::isfinite(g) || g < 0.0) throw FormatError(w + ": gain_linear must be finite and >= 0");
        seen[i] = 1;
        entries.emplace_back(i, g);
    }
    std::sort(entries.begin(), entries.end());
    for (const auto& [i, g] : entries) {
        ms.grids.push_back(i);
        ms.gains.push_back(g);
    }
    return ms;
}

// ---------------------------------------------------------------------------
// Model and report JSON
// ---------------------------------------------------------------------------

inline Json model_to_json(const VirtualScattererSet& vs, const std::vector<std::optional<GprFitSummary>>& gpr = {}) {
    Json j;
    j["sectors"] = {{"m_azimuth", vs.sectors.m_azimuth}, {"m_elevation", vs.sectors.m_elevation}};
    j["scatterers"] = Json::array();
    for (int k = 0; k < vs.size(); ++k) {
        const auto& v = vs.items[k];
        Json s;
        s["anchor_id"] = v.anchor_id;
        s["position"] = detail::vec3_json(v.position);
        s["src"] = Json::array();
        for (const auto& x : v.src) s["src"].push_back(x ? Json(*x) : Json(nullptr));
        if (k < static_cast<int>(gpr.size()) && gpr[k]) {
            const auto& g = *gpr[k];
            s["gpr"] = {{"v", g.hyper.v}, {"rho", g.hyper.rho}, {"sigma", g.hyper.sigma},
                        {"m_trained", g.m_trained}, {"fitted", g.fitted}};
        } else {
            s["gpr"] = nullptr;
        }
        j["scatterers"].push_back(std::move(s));
    }
    return j;
}

inline VirtualScattererSet model_from_json(const Json& j, const std::string& where = "model") {
    using detail::require;
    VirtualScattererSet vs;
    const Json& sec = require(j, "sectors", where);
    vs.sectors.m_azimuth = detail::integer(require(sec, "m_azimuth", where + ".sectors"), where + ".sectors.m_azimuth");
    vs.sectors.m_elevation =
        detail::integer(require(sec, "m_elevation", where + ".sectors"), where + ".sectors.m_elevation");
    try {
        vs.sectors.validate();
    } catch (const std::invalid_argument& e) {
        throw FormatError(where + ": " + e.what());
    }
    const Json& list = require(j, "scatterers", where);
    if (!list.is_array()) throw FormatError(where + ".scatterers: expected an array");
    for (std::size_t k = 0; k < list.size(); ++k) {
        const std::string w = where + ".scatterers[" + std::to_string(k) + "]";
        auto& v = vs.add(detail::vec3(require(list[k], "position", w), w + ".position"),
                         detail::integer(require(list[k], "anchor_id", w), w + ".anchor_id"));
        const Json& src = require(list[k], "src", w);
        if (!src.is_array() || static_cast<int>(src.size()) != vs.sectors.count()) {
            throw FormatError(w + ".src: expected " + std::to_string(vs.sectors.count()) + " entries");
        }
        for (std::size_t m = 0; m < src.size(); ++m) {
            if (!src[m].is_null()) v.src[m] = detail::number(src[m], w + ".src[" + std::to_string(m) + "]");
        }
    }
    return vs;
}

inline Json fit_report_to_json(const FitReport& r, bool record_runtime) {
    Json j;
    j["iterations"] = Json::array();
    for (const auto& it : r.iterations) {
        Json e = {{"t", it.t},
                  {"n_scatterers", it.n_scatterers},
                  {"zeta", it.zeta},
                  {"sweeps", it.sweeps},
                  {"gd_iterations", it.gd_iterations},
                  {"kept_previous", it.kept_previous}};
        if (record_runtime) e["wall_ms"] = it.wall_ms;
        j["iterations"].push_back(std::move(e));
    }
    j["converged"] = r.converged;
    j["chosen_t"] = r.chosen_t;
    j["chosen_n"] = r.chosen_n;
    j["final_objective"] = r.final_objective;
    return j;
}

inline Json method_report_to_json(const MethodResult& r, bool record_runtime) {
    Json j;
    j["status"] = "ok";
    j["metadata"] = r.metadata;
    j["warnings"] = r.warnings;
    j["fit"] = r.report ? fit_report_to_json(*r.report, record_runtime) : Json(nullptr);
    return j;
}

} // namespace vscat
