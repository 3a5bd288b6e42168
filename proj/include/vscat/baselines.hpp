// SPDX-License-Identifier: Apache-2.0
//
// Comparison methods behind the same interface as the proposed
// reconstruction:
//   kpsm    - kernel-based SRCs, scatterers fixed at physical box centers
//   issm    - fixed points with independent per-sector SRCs, no inference
//   kriging - ordinary kriging of measured gains in dB

#pragma once

#include "vscat/gpr.hpp"

#include <Eigen/Dense>

#include <array>
#include <cmath>
#include <limits>
#include <span>
#include <map>
#include <optional>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

namespace vscat {

enum class Method { proposed, kpsm, issm, kriging };

inline std::string_view to_string(Method m) {
    switch (m) {
    case Method::proposed: return "proposed";
    case Method::kpsm: return "kpsm";
    case Method::issm: return "issm";
    case Method::kriging: return "kriging";
    }
    return "?";
}

inline Method parse_method(std::string_view s) {
    if (s == "proposed") return Method::proposed;
    if (s == "kpsm") return Method::kpsm;
    if (s == "issm") return Method::issm;
    if (s == "kriging") return Method::kriging;
    throw std::invalid_argument("unknown method '" + std::string(s) + "' (expected proposed|kpsm|issm|kriging)");
}

enum class Variogram { gaussian, exponential };

struct BaselineConfig {
    int issm_sectors = 0; // azimuth sectors for ISSM; 0 uses the shared sectorization
    Variogram kriging_variogram = Variogram::gaussian;
    double kriging_nugget = 0.0;
    bool kpsm_refine_positions = false;
    EstimatorConfig estimator;
    GprConfig gpr;

    void validate() const {
        if (kriging_nugget < 0.0) throw std::invalid_argument("baseline config: kriging_nugget must be >= 0");
        if (issm_sectors < 0) throw std::invalid_argument("baseline config: issm_sectors must be >= 0");
    }
};

/// Output shared by every method.
struct MethodResult {
    Cgm map;
    std::optional<FitReport> report;
    std::optional<VirtualScattererSet> model;
    std::vector<std::optional<GprFitSummary>> gpr;
    std::map<std::string, std::string> metadata;
    std::vector<std::string> warnings;
};

// ---------------------------------------------------------------------------
// KPSM
// ---------------------------------------------------------------------------

/// Proposed pipeline with one virtual scatterer per physical box, fixed at
/// the box centers unless kpsm_refine_positions is set.
inline Reconstruction kpsm_reconstruct(const Scene& scene, const GridMap& grid, const AodSectorization& sectors,
                                       const MeasurementSet& ms, const BaselineConfig& config) {
    EstimatorConfig est = config.estimator;
    est.step_rho = std::max<int>(1, static_cast<int>(scene.scatterers.size()));
    est.max_progressive_iters = 1;
    if (!config.kpsm_refine_positions) est.gd_max_iters = 0;
    return reconstruct_cgm(scene, grid, sectors, ms, est, config.gpr);
}

// ---------------------------------------------------------------------------
// ISSM
// ---------------------------------------------------------------------------

/// Every physical scatterer is a point at its box center with one
/// independent SRC per sector, solved by ridge LS; sectors without a
/// covering measurement contribute nothing.
inline MethodResult issm_reconstruct(const Scene& scene, const GridMap& grid, const AodSectorization& sectors,
                                     const MeasurementSet& ms, const BaselineConfig& config) {
    VirtualScattererSet vs;
    vs.sectors = config.issm_sectors > 0 ? AodSectorization{config.issm_sectors, 1} : sectors;
    for (const auto* s : scene.by_size()) vs.add(s->box.center(), s->id);

    EstimatorConfig est = config.estimator;
    const FitProblem problem(scene, grid, ms, est);
    const Evaluation e = problem.evaluate(vs);
    FitProblem::store_srcs(vs, e);
    int zero_filled = 0;
    for (auto& v : vs.items) {
        for (auto& s : v.src) {
            if (!s) {
                s = 0.0;
                ++zero_filled;
            }
        }
    }
    MethodResult out;
    out.map = predict_map(vs, grid, scene);
    out.model = std::move(vs);
    out.metadata["issm_zero_filled_sectors"] = std::to_string(zero_filled);
    out.metadata["issm_uncovered_sector_rule"] = "zero";
    return out;
}

// ---------------------------------------------------------------------------
// Ordinary kriging
// ---------------------------------------------------------------------------

struct VariogramModel {
    Variogram family = Variogram::gaussian;
    double nugget = 0.0;
    double sill = 0.0; // partial sill
    double range = 1.0;

    /// gamma(0) = 0; the nugget applies to every positive lag.
    double operator()(double h) const {
        if (h <= 0.0) return 0.0;
        const double x = h / range;
        const double shape = family == Variogram::gaussian ? 1.0 - std::exp(-x * x) : 1.0 - std::exp(-x);
        return nugget + sill * shape;
    }
};

struct KrigingResult {
    Cgm map;
    VariogramModel variogram;
    std::vector<std::string> warnings;
};

inline double to_db(double linear) { return 10.0 * std::log10(linear); }
inline double from_db(double db) { return std::pow(10.0, db / 10.0); }

/// Measured gains in dB; zero gains are floored at 1e-3 of the smallest
/// positive measurement.
inline std::vector<double> measurements_db(const MeasurementSet& ms) {
    double min_pos = std::numeric_limits<double>::infinity();
    for (double q : ms.gains) {
        if (q > 0.0) min_pos = std::min(min_pos, q);
    }
    const double floor = std::isfinite(min_pos) ? 1e-3 * min_pos : 1e-30;
    std::vector<double> z;
    for (double q : ms.gains) z.push_back(to_db(std::max(q, floor)));
    return z;
}

/// Weighted least-squares fit of the partial sill and range to the
/// empirical variogram (10 equal-width lag bins), nugget held fixed.
inline VariogramModel fit_variogram(std::span<const Eigen::Vector2d> xy, std::span<const double> z,
                                    Variogram family, double nugget) {
    const std::size_t n = xy.size();
    double h_max = 0.0;
    for (std::size_t a = 0; a < n; ++a) {
        for (std::size_t b = 0; b < a; ++b) h_max = std::max(h_max, (xy[a] - xy[b]).norm());
    }
    VariogramModel model{family, nugget, 0.0, std::max(h_max, 1.0)};
    if (h_max <= 0.0) return model;

    constexpr int kBins = 10;
    std::array<double, kBins> h_sum{}, g_sum{};
    std::array<int, kBins> count{};
    for (std::size_t a = 0; a < n; ++a) {
        for (std::size_t b = 0; b < a; ++b) {
            const double h = (xy[a] - xy[b]).norm();
            const int bin = std::min(kBins - 1, static_cast<int>(h / h_max * kBins));
            h_sum[bin] += h;
            g_sum[bin] += 0.5 * (z[a] - z[b]) * (z[a] - z[b]);
            ++count[bin];
        }
    }

    double best_err = std::numeric_limits<double>::infinity();
    constexpr int kRanges = 120;
    for (int r = 0; r < kRanges; ++r) {
        const double range = h_max * std::pow(10.0, -2.0 + 2.5 * r / (kRanges - 1)); // 0.01 .. ~3.2 h_max
        VariogramModel trial{family, nugget, 1.0, range};
        double num = 0.0;
        double den = 0.0;
        for (int bin = 0; bin < kBins; ++bin) {
            if (!count[bin]) continue;
            const double f = trial(h_sum[bin] / count[bin]) - nugget;
            num += count[bin] * f * (g_sum[bin] / count[bin] - nugget);
            den += count[bin] * f * f;
        }
        const double sill = den > 0.0 ? std::max(num / den, 0.0) : 0.0;
        trial.sill = sill;
        double err = 0.0;
        for (int bin = 0; bin < kBins; ++bin) {
            if (!count[bin]) continue;
            const double diff = g_sum[bin] / count[bin] - trial(h_sum[bin] / count[bin]);
            err += count[bin] * diff * diff;
        }
        if (err < best_err) {
            best_err = err;
            model = trial;
        }
    }
    return model;
}

/// Ordinary kriging of dB gains over the grid-center plane coordinates.
/// A target that coincides with a measured grid returns that measurement.
/// Systems with reciprocal condition below 1e-12 get a growing nugget.
inline KrigingResult kriging_reconstruct(const GridMap& grid, const MeasurementSet& ms, const BaselineConfig& config) {
    config.validate();
    if (ms.size() < 2) throw std::invalid_argument("kriging requires ≥ 2 measurements");
    const int n = ms.size();
    std::vector<Eigen::Vector2d> xy;
    for (int i : ms.grids) xy.emplace_back(grid.centers[i].x(), grid.centers[i].y());
    const std::vector<double> z = measurements_db(ms);

    KrigingResult out;
    out.variogram = fit_variogram(xy, z, config.kriging_variogram, config.kriging_nugget);

    Eigen::MatrixXd system(n + 1, n + 1);
    Eigen::FullPivLU<Eigen::MatrixXd> lu;
    for (int attempt = 0;; ++attempt) {
        for (int a = 0; a < n; ++a) {
            for (int b = 0; b < n; ++b) system(a, b) = out.variogram((xy[a] - xy[b]).norm());
            system(a, n) = system(n, a) = 1.0;
        }
        system(n, n) = 0.0;
        lu.compute(system);
        if ((lu.isInvertible() && lu.rcond() >= 1e-12) || attempt >= 20) break;
        const double bump = 1e-8 * std::max(1.0, out.variogram.sill + out.variogram.nugget) * std::pow(10.0, attempt);
        out.variogram.nugget += bump;
        out.warnings.push_back("kriging: ill-conditioned system, nugget raised by " + std::to_string(bump));
    }

    std::vector<int> measured_at(grid.size(), -1);
    for (int r = 0; r < n; ++r) measured_at[ms.grids[r]] = r;

    out.map.gain.resize(grid.size());
    Eigen::VectorXd rhs(n + 1);
    const Eigen::Map<const Eigen::VectorXd> zv(z.data(), n);
    for (int i = 0; i < grid.size(); ++i) {
        if (measured_at[i] >= 0) {
            out.map.gain[i] = from_db(z[measured_at[i]]);
            continue;
        }
        const Eigen::Vector2d p(grid.centers[i].x(), grid.centers[i].y());
        for (int a = 0; a < n; ++a) rhs[a] = out.variogram((xy[a] - p).norm());
        rhs[n] = 1.0;
        const Eigen::VectorXd w = lu.solve(rhs);
        out.map.gain[i] = from_db(w.head(n).dot(zv));
    }
    return out;
}

// ---------------------------------------------------------------------------
// Dispatch
// ---------------------------------------------------------------------------

inline MethodResult run_method(Method method, const Scene& scene, const GridMap& grid,
                               const AodSectorization& sectors, const MeasurementSet& ms,
                               const BaselineConfig& config) {
    config.validate();
    MethodResult out;
    auto from_reconstruction = [&](Reconstruction r) {
        out.map = std::move(r.map);
        out.report = std::move(r.report);
        out.model = std::move(r.model);
        out.gpr = std::move(r.gpr);
        out.warnings = std::move(r.warnings);
    };
    switch (method) {
    case Method::proposed:
        from_reconstruction(reconstruct_cgm(scene, grid, sectors, ms, config.estimator, config.gpr));
        break;
    case Method::kpsm:
        from_reconstruction(kpsm_reconstruct(scene, grid, sectors, ms, config));
        out.metadata["kpsm_refine_positions"] = config.kpsm_refine_positions ? "true" : "false";
        break;
    case Method::issm:
        out = issm_reconstruct(scene, grid, sectors, ms, config);
        break;
    case Method::kriging: {
        KrigingResult k = kriging_reconstruct(grid, ms, config);
        out.map = std::move(k.map);
        out.warnings = std::move(k.warnings);
        out.metadata["variogram"] = config.kriging_variogram == Variogram::gaussian ? "gaussian" : "exponential";
        out.metadata["variogram_sill"] = std::to_string(k.variogram.sill);
        out.metadata["variogram_range"] = std::to_string(k.variogram.range);
        out.metadata["variogram_nugget"] = std::to_string(k.variogram.nugget);
        break;
    }
    }
    out.metadata["method"] = std::string(to_string(method));
    return out;
}

} // namespace vscat
