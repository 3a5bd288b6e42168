// SPDX-License-Identifier: Apache-2.0
//
// Progressive estimation of virtual scatterers from channel power
// measurements.
//
// For fixed positions the predicted gains are linear in the response
// coefficients (SRCs), so every objective evaluation solves a ridge
// least-squares problem for them. Positions are refined one scatterer at a
// time by projected gradient descent on that reduced objective, and the
// number of scatterers grows by `step_rho` per outer iteration until the
// training objective stops improving.

#pragma once

#include "vscat/channel_model.hpp"
#include "vscat/synth.hpp"

#include <Eigen/Dense>

#include <chrono>
#include <cmath>
#include <limits>
#include <optional>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

namespace vscat {

class DegenerateSystemError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

class RankDeficientError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

enum class Objective { mse, nmse };

struct EstimatorConfig {
    int step_rho = 2;
    int max_progressive_iters = 5;
    Objective objective = Objective::nmse;
    std::optional<double> ridge_lambda; // unset: ridge_auto_scale * trace(Phi^T Phi) / cols
    double ridge_auto_scale = 1e-8;

    int gd_max_iters = 50;
    double gd_step_init = 2.0;  // first trial displacement (m)
    double gd_armijo_c = 1e-4;
    double gd_shrink = 0.5;
    double gd_min_step = 1e-6;  // smallest trial displacement (m)
    double gd_max_step = 50.0;  // largest trial displacement (m)
    double gd_rel_tol = 1e-12;  // stop when a step improves by less than this fraction

    double zeta_rel_tol = 1e-3;
    double zeta_floor_rel = 1e-3; // relative-improvement denominator floor, as a fraction of U(q, 0)
    int max_sweeps = 10;
    ConstraintRegion constraint;

    void validate() const {
        if (step_rho < 1) throw std::invalid_argument("estimator config: step_rho must be >= 1");
        if (max_progressive_iters < 1) throw std::invalid_argument("estimator config: max_progressive_iters >= 1");
        if (ridge_lambda && *ridge_lambda < 0.0) throw std::invalid_argument("estimator config: ridge_lambda >= 0");
        if (!(zeta_rel_tol > 0.0)) throw std::invalid_argument("estimator config: zeta_rel_tol must be > 0");
        if (gd_max_iters < 0 || max_sweeps < 0) throw std::invalid_argument("estimator config: negative iteration cap");
        if (!(gd_shrink > 0.0 && gd_shrink < 1.0)) throw std::invalid_argument("estimator config: gd_shrink in (0,1)");
        if (!(gd_armijo_c > 0.0 && gd_armijo_c < 1.0)) throw std::invalid_argument("estimator config: gd_armijo_c in (0,1)");
        if (!(gd_step_init > 0.0) || !(gd_min_step > 0.0) || !(gd_max_step >= gd_min_step)) {
            throw std::invalid_argument("estimator config: step lengths must be positive");
        }
    }
};

// ---------------------------------------------------------------------------
// Objective
// ---------------------------------------------------------------------------

inline double objective_value(std::span<const double> measured, std::span<const double> predicted, Objective kind) {
    if (measured.size() != predicted.size()) throw std::invalid_argument("objective_value: size mismatch");
    if (measured.empty()) throw std::invalid_argument("objective_value: no measurements");
    double sse = 0.0;
    double energy = 0.0;
    for (std::size_t i = 0; i < measured.size(); ++i) {
        const double r = measured[i] - predicted[i];
        sse += r * r;
        energy += measured[i] * measured[i];
    }
    if (kind == Objective::mse) return sse / static_cast<double>(measured.size());
    if (energy == 0.0) throw std::invalid_argument("objective_value: nmse undefined for all-zero measurements");
    return sse / energy;
}

/// d objective / d prediction_i = -weight * 2 * residual_i.
inline double objective_weight(std::span<const double> measured, Objective kind) {
    if (kind == Objective::mse) return 1.0 / static_cast<double>(measured.size());
    double energy = 0.0;
    for (double q : measured) energy += q * q;
    return 1.0 / energy;
}

// ---------------------------------------------------------------------------
// Design matrix and least squares
// ---------------------------------------------------------------------------

/// Linear system behind the SRC estimate: measured = offset + phi * srcs.
/// Columns are (scatterer, sector) pairs seen by at least one measured grid,
/// ordered by scatterer then sector.
struct DesignMatrix {
    struct Column {
        int scatterer;
        int sector;
    };
    struct Term {
        int scatterer;
        int column;
    };

    Eigen::MatrixXd phi;
    Eigen::VectorXd offset; // tx direct-path gain per row
    std::vector<Column> columns;
    std::vector<std::vector<Term>> row_terms; // visible scatterers per row

    int rows() const { return static_cast<int>(phi.rows()); }
    int cols() const { return static_cast<int>(columns.size()); }
};

inline DesignMatrix build_design(const VirtualScattererSet& vs, const GridMap& grid, const Scene& scene,
                                 const MeasurementSet& ms) {
    const int rows = ms.size();
    const int n = vs.size();
    const int m_count = vs.sectors.count();

    std::vector<std::vector<int>> col_of(n, std::vector<int>(m_count, -1));
    std::vector<std::vector<std::pair<int, int>>> hits(rows); // (scatterer, sector) per row
    for (int r = 0; r < rows; ++r) {
        const int i = ms.grids[r];
        for (int k = 0; k < n; ++k) {
            if (!grid.sees(i, vs.items[k].anchor_id)) continue;
            const int m = sector_index(aod_of(vs.items[k].position, grid.centers[i]), vs.sectors);
            hits[r].emplace_back(k, m);
            col_of[k][m] = 0;
        }
    }

    DesignMatrix d;
    for (int k = 0; k < n; ++k) {
        for (int m = 0; m < m_count; ++m) {
            if (col_of[k][m] < 0) continue;
            col_of[k][m] = static_cast<int>(d.columns.size());
            d.columns.push_back({k, m});
        }
    }
    d.phi = Eigen::MatrixXd::Zero(rows, d.cols());
    d.offset = Eigen::VectorXd::Zero(rows);
    d.row_terms.resize(rows);
    bool any_signal = d.cols() > 0;
    for (int r = 0; r < rows; ++r) {
        const int i = ms.grids[r];
        d.offset[r] = tx_path_power(grid, i, scene);
        any_signal = any_signal || d.offset[r] != 0.0;
        for (const auto& [k, m] : hits[r]) {
            const int c = col_of[k][m];
            d.phi(r, c) += path_gain(vs.items[k].position, grid.centers[i], scene.beta0, scene.alpha);
            d.row_terms[r].push_back({k, c});
        }
    }
    if (!any_signal) {
        throw DegenerateSystemError("build_design: no measured grid sees the tx or any scatterer");
    }
    return d;
}

inline double auto_ridge(const DesignMatrix& design, double scale) {
    if (design.cols() == 0) return 0.0;
    return scale * design.phi.colwise().squaredNorm().sum() / design.cols();
}

/// argmin |(q - offset) - phi tau|^2 + lambda |tau|^2 via Cholesky on the
/// normal equations.
inline Eigen::VectorXd ls_estimate_srcs(const DesignMatrix& design, std::span<const double> measured,
                                        double ridge_lambda) {
    if (static_cast<int>(measured.size()) != design.rows()) {
        throw std::invalid_argument("ls_estimate_srcs: measurement count does not match design rows");
    }
    if (design.cols() == 0) return Eigen::VectorXd();
    const Eigen::Map<const Eigen::VectorXd> q(measured.data(), static_cast<Eigen::Index>(measured.size()));
    const Eigen::VectorXd rhs = design.phi.transpose() * (q - design.offset);
    Eigen::MatrixXd normal = design.phi.transpose() * design.phi;
    normal.diagonal().array() += ridge_lambda;

    Eigen::LLT<Eigen::MatrixXd> llt(normal);
    bool ok = llt.info() == Eigen::Success;
    if (ok) {
        const Eigen::VectorXd l_diag = llt.matrixLLT().diagonal();
        for (Eigen::Index c = 0; c < normal.rows(); ++c) {
            if (!(l_diag[c] * l_diag[c] > 1e-14 * normal(c, c))) ok = false;
        }
    }
    if (!ok) {
        if (ridge_lambda == 0.0) {
            throw RankDeficientError("ls_estimate_srcs: normal equations are singular (" +
                                     std::to_string(design.cols()) + " unknowns, " + std::to_string(design.rows()) +
                                     " measurements); use a positive ridge_lambda");
        }
        throw RankDeficientError("ls_estimate_srcs: regularized normal equations are not positive definite");
    }
    return llt.solve(rhs);
}

// ---------------------------------------------------------------------------
// Fit problem: objective, gradient, refinement
// ---------------------------------------------------------------------------

/// One evaluation of the reduced objective at the current positions.
struct Evaluation {
    DesignMatrix design;
    Eigen::VectorXd srcs;
    Eigen::VectorXd residual; // measured - predicted
    double objective = std::numeric_limits<double>::infinity();
};

/// Binds the measurements and scene to the estimator routines.
class FitProblem {
public:
    FitProblem(const Scene& scene, const GridMap& grid, const MeasurementSet& ms, const EstimatorConfig& config)
        : scene_(scene), grid_(grid), ms_(ms), config_(config) {
        if (ms.size() < 1) throw std::invalid_argument("progressive estimation needs at least one measurement (L >= 1)");
        weight_ = objective_weight(ms.gains, config.objective);
        std::vector<double> zeros(ms.gains.size(), 0.0);
        null_objective_ = objective_value(ms.gains, zeros, config.objective);
    }

    const Scene& scene() const { return scene_; }
    const GridMap& grid() const { return grid_; }
    const MeasurementSet& measurements() const { return ms_; }
    const EstimatorConfig& config() const { return config_; }

    /// Objective of the all-zero prediction.
    double null_objective() const { return null_objective_; }

    double ridge_for(const DesignMatrix& design) const {
        return config_.ridge_lambda ? *config_.ridge_lambda : auto_ridge(design, config_.ridge_auto_scale);
    }

    Evaluation evaluate(const VirtualScattererSet& vs) const {
        Evaluation e;
        e.design = build_design(vs, grid_, scene_, ms_);
        e.srcs = ls_estimate_srcs(e.design, ms_.gains, ridge_for(e.design));
        const Eigen::Map<const Eigen::VectorXd> q(ms_.gains.data(), ms_.size());
        Eigen::VectorXd predicted = e.design.offset;
        if (e.design.cols() > 0) predicted += e.design.phi * e.srcs;
        e.residual = q - predicted;
        e.objective = objective_value(ms_.gains, std::span<const double>(predicted.data(), predicted.size()),
                                      config_.objective);
        return e;
    }

    /// Like evaluate, but a coincident scatterer/grid pair yields +inf.
    Evaluation try_evaluate(const VirtualScattererSet& vs) const {
        try {
            return evaluate(vs);
        } catch (const std::invalid_argument&) {
            return Evaluation{};
        } catch (const RankDeficientError&) {
            return Evaluation{};
        }
    }

    /// Gradient of the objective with respect to the position of scatterer
    /// k, with SRCs, visibility and sector assignments held fixed.
    Point3 gradient(const VirtualScattererSet& vs, int k, const Evaluation& e) const {
        Point3 g = Point3::Zero();
        const Point3& s = vs.items[k].position;
        for (int r = 0; r < ms_.size(); ++r) {
            for (const auto& term : e.design.row_terms[r]) {
                if (term.scatterer != k) continue;
                const Point3 diff = s - grid_.centers[ms_.grids[r]];
                const double d = diff.norm();
                const double dgain = -scene_.alpha * scene_.beta0 / std::pow(d, scene_.alpha + 2.0);
                g += (-2.0 * weight_ * e.residual[r] * e.srcs[term.column] * dgain) * diff;
            }
        }
        return g;
    }

    /// Prediction-based objective using the SRCs stored in the model.
    double objective_with_srcs(const VirtualScattererSet& vs) const {
        std::vector<double> predicted(ms_.gains.size());
        for (int r = 0; r < ms_.size(); ++r) predicted[r] = predict_gain(vs, grid_, ms_.grids[r], scene_);
        return objective_value(ms_.gains, predicted, config_.objective);
    }

    /// Writes LS SRCs into the model; every other slot becomes undefined.
    static void store_srcs(VirtualScattererSet& vs, const Evaluation& e) {
        for (auto& v : vs.items) std::fill(v.src.begin(), v.src.end(), std::nullopt);
        for (int c = 0; c < e.design.cols(); ++c) {
            const auto& col = e.design.columns[c];
            vs.items[col.scatterer].src[col.sector] = e.srcs[c];
        }
    }

private:
    const Scene& scene_;
    const GridMap& grid_;
    const MeasurementSet& ms_;
    const EstimatorConfig& config_;
    double weight_ = 1.0;
    double null_objective_ = 1.0;
};

/// Free-function form: LS SRCs at the current positions, then the gradient
/// for scatterer k.
inline Point3 position_gradient(const VirtualScattererSet& vs, int k, const GridMap& grid, const Scene& scene,
                                const MeasurementSet& ms, Objective objective,
                                std::optional<double> ridge_lambda = std::nullopt) {
    EstimatorConfig config;
    config.objective = objective;
    config.ridge_lambda = ridge_lambda;
    const FitProblem problem(scene, grid, ms, config);
    return problem.gradient(vs, k, problem.evaluate(vs));
}

struct RefineResult {
    double objective_before = 0.0;
    double objective_after = 0.0;
    int iterations = 0;
    std::vector<double> trace; // objective after every accepted step
};

/// Projected gradient descent with Armijo backtracking on the position of
/// scatterer k. Trial steps use the Barzilai-Borwein length after the first
/// iteration. The objective never increases; positions stay in the
/// scatterer's feasible box.
inline RefineResult refine_position(VirtualScattererSet& vs, int k, const FitProblem& problem) {
    const auto& cfg = problem.config();
    const Box feasible = cfg.constraint.for_anchor(problem.scene(), vs.items[k].anchor_id);
    Point3& x = vs.items[k].position;

    Evaluation current = problem.evaluate(vs);
    RefineResult out;
    out.objective_before = current.objective;
    out.objective_after = current.objective;
    if (cfg.gd_max_iters == 0) return out;

    Point3 g = problem.gradient(vs, k, current);
    double gnorm = g.norm();
    if (!(gnorm > 0.0) || !std::isfinite(gnorm)) return out;
    double t = cfg.gd_step_init / gnorm;

    for (int it = 0; it < cfg.gd_max_iters; ++it) {
        t = std::clamp(t, cfg.gd_min_step / gnorm, cfg.gd_max_step / gnorm);
        const Point3 x_old = x;
        bool accepted = false;
        Evaluation trial;
        for (;;) {
            const Point3 x_new = feasible.clamp(x_old - t * g);
            const Point3 dx = x_new - x_old;
            if (dx.norm() < cfg.gd_min_step) break;
            x = x_new;
            trial = problem.try_evaluate(vs);
            if (trial.objective <= current.objective + cfg.gd_armijo_c * g.dot(dx) &&
                trial.objective <= current.objective) {
                accepted = true;
                break;
            }
            t *= cfg.gd_shrink;
        }
        if (!accepted) {
            x = x_old;
            break;
        }
        ++out.iterations;
        const double improvement = current.objective - trial.objective;
        const double previous = current.objective;
        current = std::move(trial);
        out.trace.push_back(current.objective);
        out.objective_after = current.objective;

        const Point3 g_new = problem.gradient(vs, k, current);
        const double gnorm_new = g_new.norm();
        if (!(gnorm_new > 0.0) || !std::isfinite(gnorm_new)) break;
        if (improvement <= cfg.gd_rel_tol * previous) break;

        const Point3 s = x - x_old;
        const Point3 y = g_new - g;
        const double sy = s.dot(y);
        t = sy > 0.0 ? s.squaredNorm() / sy : 2.0 * t;
        g = g_new;
        gnorm = gnorm_new;
    }
    return out;
}

// ---------------------------------------------------------------------------
// Progressive estimation
// ---------------------------------------------------------------------------

/// Positions for outer iteration t (1-based): the first step_rho * (t - 1)
/// scatterers are copied from `previous`, the new ones start at the centers of
/// the physical scatterers taken in size order with wrap-around.
inline VirtualScattererSet init_positions(int t, const VirtualScattererSet* previous, const Scene& scene,
                                          const AodSectorization& sectors, const EstimatorConfig& config) {
    if (t < 1) throw std::invalid_argument("init_positions: t must be >= 1");
    const int rho = config.step_rho;
    VirtualScattererSet vs;
    vs.sectors = sectors;
    const auto ordered = scene.by_size();
    if (ordered.empty()) return vs;

    const int kept = rho * (t - 1);
    if (kept > 0) {
        if (!previous || previous->size() < kept) {
            throw std::invalid_argument("init_positions: previous model has fewer than step_rho * (t - 1) scatterers");
        }
        for (int n = 0; n < kept; ++n) vs.items.push_back(previous->items[n]);
    }
    const int nd = static_cast<int>(ordered.size());
    for (int n = kept + 1; n <= rho * t; ++n) {
        const auto* phys = ordered[(n - 1) % nd];
        const Box feasible = config.constraint.for_anchor(scene, phys->id);
        vs.add(feasible.clamp(phys->box.center()), phys->id);
    }
    return vs;
}

struct FitIteration {
    int t = 0;
    int n_scatterers = 0;
    double zeta = 0.0;
    int sweeps = 0;
    int gd_iterations = 0;
    double wall_ms = 0.0;
    bool kept_previous = false; // refinement did not beat the previous model
};

struct FitReport {
    std::vector<FitIteration> iterations;
    bool converged = false;
    int chosen_t = 0;
    int chosen_n = 0;
    double final_objective = 0.0;
};

struct EstimateResult {
    VirtualScattererSet model;
    FitReport report;
};

namespace detail {

/// Block-coordinate sweeps over all scatterers until the per-sweep relative
/// improvement drops below tol. Returns (sweeps, gd iterations).
inline std::pair<int, int> refine_all(VirtualScattererSet& vs, const FitProblem& problem) {
    const auto& cfg = problem.config();
    int sweeps = 0;
    int iterations = 0;
    if (vs.size() == 0 || cfg.gd_max_iters == 0) return {0, 0};
    double before = problem.evaluate(vs).objective;
    for (int sweep = 0; sweep < cfg.max_sweeps; ++sweep) {
        double after = before;
        for (int k = 0; k < vs.size(); ++k) {
            const RefineResult r = refine_position(vs, k, problem);
            iterations += r.iterations;
            after = r.objective_after;
        }
        ++sweeps;
        const double improvement = before - after;
        const double den = std::max(before, 1e-30);
        before = after;
        if (improvement / den < cfg.zeta_rel_tol) break;
    }
    return {sweeps, iterations};
}

} // namespace detail

/// Grows the model by step_rho scatterers per iteration until the relative
/// improvement of the training objective zeta falls below zeta_rel_tol or
/// max_progressive_iters is reached. Returns the lowest-zeta model.
inline EstimateResult progressive_estimate(const Scene& scene, const GridMap& grid, const AodSectorization& sectors,
                                           const MeasurementSet& ms, const EstimatorConfig& config) {
    config.validate();
    sectors.validate();
    const FitProblem problem(scene, grid, ms, config);
    const double floor = std::max(config.zeta_floor_rel * problem.null_objective(), 1e-30);

    EstimateResult best;
    double best_zeta = std::numeric_limits<double>::infinity();
    VirtualScattererSet previous;
    double zeta_prev = std::numeric_limits<double>::infinity();

    for (int t = 1; t <= config.max_progressive_iters; ++t) {
        const auto start = std::chrono::steady_clock::now();
        FitIteration rec;
        rec.t = t;

        VirtualScattererSet vs;
        try {
            vs = init_positions(t, t > 1 ? &previous : nullptr, scene, sectors, config);
            const auto [sweeps, iterations] = detail::refine_all(vs, problem);
            rec.sweeps = sweeps;
            rec.gd_iterations = iterations;
            FitProblem::store_srcs(vs, problem.evaluate(vs));
        } catch (const DegenerateSystemError& e) {
            throw DegenerateSystemError(std::string(e.what()) + " (progressive iteration " + std::to_string(t) + ")");
        }
        double zeta = problem.objective_with_srcs(vs);

        if (t > 1 && !(zeta <= zeta_prev)) {
            // The previous model padded with silent new scatterers reproduces
            // zeta_prev exactly.
            VirtualScattererSet padded = previous;
            for (int k = previous.size(); k < vs.size(); ++k) {
                VirtualScatterer v = vs.items[k];
                for (auto& s : v.src) {
                    if (s) s = 0.0;
                }
                padded.items.push_back(std::move(v));
            }
            vs = std::move(padded);
            zeta = problem.objective_with_srcs(vs);
            rec.kept_previous = true;
        }
        rec.n_scatterers = vs.size();
        rec.zeta = zeta;
        rec.wall_ms = std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - start).count();
        best.report.iterations.push_back(rec);

        if (zeta < best_zeta) {
            best_zeta = zeta;
            best.model = vs;
            best.report.chosen_t = t;
            best.report.chosen_n = vs.size();
        }
        if (t > 1) {
            const double improvement = zeta_prev - zeta;
            if (improvement / std::max(zeta_prev, floor) < config.zeta_rel_tol) {
                best.report.converged = true;
                break;
            }
        }
        previous = std::move(vs);
        zeta_prev = zeta;
    }
    best.report.final_objective = best_zeta;
    return best;
}

} // namespace vscat
