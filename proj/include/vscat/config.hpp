// SPDX-License-Identifier: Apache-2.0
//
// Method configuration from JSON or TOML files plus dotted-key overrides.
// Field names mirror the config structs; unknown keys are rejected.
//
//   [estimator]            EstimatorConfig fields, objective = "mse" | "nmse"
//   [estimator.constraint] mode = "anchor_dilated" | "scene_region" | "fixed_box",
//                          margin, min = [x, y, z], max = [x, y, z]
//   [gpr]                  GprConfig fields
//   [baselines]            issm_sectors, kriging_variogram, kriging_nugget,
//                          kpsm_refine_positions

#pragma once

#include "vscat/io.hpp"

#include <toml.hpp>

#include <set>
#include <sstream>
#include <string>
#include <string_view>

namespace vscat {

namespace detail {

inline void reject_unknown(const Json& obj, const std::set<std::string>& known, const std::string& where) {
    if (!obj.is_object()) throw FormatError(where + ": expected a table");
    for (const auto& [key, value] : obj.items()) {
        if (!known.count(key)) throw FormatError(where + ": unknown key '" + key + "'");
    }
}

template <class T>
void read_field(const Json& obj, const char* key, T& out, const std::string& where) {
    if (!obj.contains(key)) return;
    const Json& v = obj.at(key);
    const std::string w = where + "." + key;
    if constexpr (std::is_same_v<T, bool>) {
        if (!v.is_boolean()) throw FormatError(w + ": expected true or false");
        out = v.get<bool>();
    } else if constexpr (std::is_integral_v<T>) {
        out = static_cast<T>(integer(v, w));
    } else {
        out = number(v, w);
    }
}

inline std::string read_string(const Json& obj, const char* key, const std::string& fallback, const std::string& where) {
    if (!obj.contains(key)) return fallback;
    if (!obj.at(key).is_string()) throw FormatError(where + "." + key + ": expected a string");
    return obj.at(key).get<std::string>();
}

inline void apply_constraint(ConstraintRegion& c, const Json& j, const std::string& where) {
    reject_unknown(j, {"mode", "margin", "min", "max"}, where);
    const std::string mode = read_string(j, "mode", "", where);
    if (mode == "anchor_dilated") c.mode = ConstraintRegion::Mode::anchor_dilated;
    else if (mode == "scene_region") c.mode = ConstraintRegion::Mode::scene_region;
    else if (mode == "fixed_box") c.mode = ConstraintRegion::Mode::fixed_box;
    else if (!mode.empty()) throw FormatError(where + ".mode: expected anchor_dilated|scene_region|fixed_box");
    read_field(j, "margin", c.margin, where);
    if (j.contains("min")) c.box.min = vec3(j.at("min"), where + ".min");
    if (j.contains("max")) c.box.max = vec3(j.at("max"), where + ".max");
}

inline void apply_estimator(EstimatorConfig& e, const Json& j, const std::string& where) {
    reject_unknown(j,
                   {"step_rho", "max_progressive_iters", "objective", "ridge_lambda", "ridge_auto_scale", "gd_max_iters",
                    "gd_step_init", "gd_armijo_c", "gd_shrink", "gd_min_step", "gd_max_step", "gd_rel_tol",
                    "zeta_rel_tol", "zeta_floor_rel", "max_sweeps", "constraint"},
                   where);
    read_field(j, "step_rho", e.step_rho, where);
    read_field(j, "max_progressive_iters", e.max_progressive_iters, where);
    const std::string obj = read_string(j, "objective", "", where);
    if (obj == "mse") e.objective = Objective::mse;
    else if (obj == "nmse") e.objective = Objective::nmse;
    else if (!obj.empty()) throw FormatError(where + ".objective: expected mse|nmse");
    if (j.contains("ridge_lambda")) {
        if (j.at("ridge_lambda").is_null()) e.ridge_lambda.reset();
        else e.ridge_lambda = number(j.at("ridge_lambda"), where + ".ridge_lambda");
    }
    read_field(j, "ridge_auto_scale", e.ridge_auto_scale, where);
    read_field(j, "gd_max_iters", e.gd_max_iters, where);
    read_field(j, "gd_step_init", e.gd_step_init, where);
    read_field(j, "gd_armijo_c", e.gd_armijo_c, where);
    read_field(j, "gd_shrink", e.gd_shrink, where);
    read_field(j, "gd_min_step", e.gd_min_step, where);
    read_field(j, "gd_max_step", e.gd_max_step, where);
    read_field(j, "gd_rel_tol", e.gd_rel_tol, where);
    read_field(j, "zeta_rel_tol", e.zeta_rel_tol, where);
    read_field(j, "zeta_floor_rel", e.zeta_floor_rel, where);
    read_field(j, "max_sweeps", e.max_sweeps, where);
    if (j.contains("constraint")) apply_constraint(e.constraint, j.at("constraint"), where + ".constraint");
}

inline void apply_gpr(GprConfig& g, const Json& j, const std::string& where) {
    reject_unknown(j, {"constant_mean", "max_iters", "sigma_floor_rel", "jitter_rel", "min_points_for_fit"}, where);
    read_field(j, "constant_mean", g.constant_mean, where);
    read_field(j, "max_iters", g.max_iters, where);
    read_field(j, "sigma_floor_rel", g.sigma_floor_rel, where);
    read_field(j, "jitter_rel", g.jitter_rel, where);
    read_field(j, "min_points_for_fit", g.min_points_for_fit, where);
}

inline void apply_baselines(BaselineConfig& b, const Json& j, const std::string& where) {
    reject_unknown(j, {"issm_sectors", "kriging_variogram", "kriging_nugget", "kpsm_refine_positions"}, where);
    read_field(j, "issm_sectors", b.issm_sectors, where);
    const std::string v = read_string(j, "kriging_variogram", "", where);
    if (v == "gaussian") b.kriging_variogram = Variogram::gaussian;
    else if (v == "exponential") b.kriging_variogram = Variogram::exponential;
    else if (!v.empty()) throw FormatError(where + ".kriging_variogram: expected gaussian|exponential");
    read_field(j, "kriging_nugget", b.kriging_nugget, where);
    read_field(j, "kpsm_refine_positions", b.kpsm_refine_positions, where);
}

} // namespace detail

/// Overlays `j` onto `config`; absent keys keep their current values.
inline void apply_config(BaselineConfig& config, const Json& j, const std::string& where = "config") {
    detail::reject_unknown(j, {"estimator", "gpr", "baselines"}, where);
    if (j.contains("estimator")) detail::apply_estimator(config.estimator, j.at("estimator"), where + ".estimator");
    if (j.contains("gpr")) detail::apply_gpr(config.gpr, j.at("gpr"), where + ".gpr");
    if (j.contains("baselines")) detail::apply_baselines(config, j.at("baselines"), where + ".baselines");
}

/// Parses a TOML or JSON document by file extension into JSON.
inline Json parse_config_file(const std::string& path) {
    const bool is_toml = path.size() >= 5 && path.compare(path.size() - 5, 5, ".toml") == 0;
    if (!is_toml) return parse_json_file(path);
    try {
        const toml::table table = toml::parse(read_text(path), path);
        std::ostringstream ss;
        ss << toml::json_formatter{table};
        return Json::parse(ss.str());
    } catch (const toml::parse_error& e) {
        throw FormatError(path + ":" + std::to_string(e.source().begin.line) + ": " + std::string(e.description()));
    }
}

inline BaselineConfig load_config(const std::string& path) {
    BaselineConfig config;
    apply_config(config, parse_config_file(path), path);
    return config;
}

/// Turns "section.key=value" into a nested JSON patch. The value is read as
/// JSON when it parses, otherwise as a plain string.
inline Json parse_override(std::string_view text) {
    const auto eq = text.find('=');
    if (eq == std::string_view::npos || eq == 0) {
        throw FormatError("override '" + std::string(text) + "': expected section.key=value");
    }
    const std::string path(text.substr(0, eq));
    const std::string raw(text.substr(eq + 1));
    Json value = Json::parse(raw, nullptr, false);
    if (value.is_discarded()) value = raw;
    Json patch = Json::object();
    Json* node = &patch;
    std::size_t start = 0;
    while (true) {
        const auto dot = path.find('.', start);
        const std::string key = path.substr(start, dot == std::string::npos ? std::string::npos : dot - start);
        if (key.empty()) throw FormatError("override '" + std::string(text) + "': empty key segment");
        if (dot == std::string::npos) {
            (*node)[key] = value;
            break;
        }
        node = &(*node)[key];
        start = dot + 1;
    }
    return patch;
}

inline Json config_to_json(const BaselineConfig& c) {
    const auto& e = c.estimator;
    const char* mode = e.constraint.mode == ConstraintRegion::Mode::anchor_dilated ? "anchor_dilated"
                       : e.constraint.mode == ConstraintRegion::Mode::scene_region ? "scene_region"
                                                                                    : "fixed_box";
    Json constraint = {{"mode", mode}, {"margin", e.constraint.margin}};
    if (e.constraint.mode == ConstraintRegion::Mode::fixed_box) {
        constraint["min"] = detail::vec3_json(e.constraint.box.min);
        constraint["max"] = detail::vec3_json(e.constraint.box.max);
    }
    Json j;
    j["estimator"] = {{"step_rho", e.step_rho},
                      {"max_progressive_iters", e.max_progressive_iters},
                      {"objective", e.objective == Objective::mse ? "mse" : "nmse"},
                      {"ridge_lambda", e.ridge_lambda ? Json(*e.ridge_lambda) : Json(nullptr)},
                      {"ridge_auto_scale", e.ridge_auto_scale},
                      {"gd_max_iters", e.gd_max_iters},
                      {"gd_step_init", e.gd_step_init},
                      {"gd_armijo_c", e.gd_armijo_c},
                      {"gd_shrink", e.gd_shrink},
                      {"gd_min_step", e.gd_min_step},
                      {"gd_max_step", e.gd_max_step},
                      {"gd_rel_tol", e.gd_rel_tol},
                      {"zeta_rel_tol", e.zeta_rel_tol},
                      {"zeta_floor_rel", e.zeta_floor_rel},
                      {"max_sweeps", e.max_sweeps},
                      {"constraint", constraint}};
    j["gpr"] = {{"constant_mean", c.gpr.constant_mean},
                {"max_iters", c.gpr.max_iters},
                {"sigma_floor_rel", c.gpr.sigma_floor_rel},
                {"jitter_rel", c.gpr.jitter_rel},
                {"min_points_for_fit", c.gpr.min_points_for_fit}};
    j["baselines"] = {{"issm_sectors", c.issm_sectors},
                      {"kriging_variogram", c.kriging_variogram == Variogram::gaussian ? "gaussian" : "exponential"},
                      {"kriging_nugget", c.kriging_nugget},
                      {"kpsm_refine_positions", c.kpsm_refine_positions}};
    return j;
}

} // namespace vscat
