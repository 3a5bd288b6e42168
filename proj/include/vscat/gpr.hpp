// SPDX-License-Identifier: Apache-2.0
//
// Gaussian-process inference of response coefficients over departure angles,
// and assembly of the full channel gain map.

#pragma once

#include "vscat/channel_model.hpp"
#include "vscat/estimation.hpp"
#include "vscat/kernel.hpp"

#include <Eigen/Dense>

#include <array>
#include <cmath>
#include <limits>
#include <optional>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

namespace vscat {

class NumericError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

struct GprHyper {
    double v = 1.0;
    double rho = 1.0;
    double sigma = 1e-6;
};

struct GprConfig {
    bool constant_mean = false; // prior mean = average of the training SRCs
    int max_iters = 200;        // ascent iterations per start
    double sigma_floor_rel = 1e-6;
    double jitter_rel = 1e-10;
    int min_points_for_fit = 3;
};

inline double sigma_floor(std::span<const double> srcs, double rel) {
    double peak = 1.0;
    for (double s : srcs) peak = std::max(peak, std::abs(s));
    return rel * peak;
}

inline double rms(std::span<const double> values) {
    if (values.empty()) return 0.0;
    double acc = 0.0;
    for (double x : values) acc += x * x;
    return std::sqrt(acc / static_cast<double>(values.size()));
}

/// Posterior of a zero-mean (or constant-mean) GP over angles, with the
/// Cholesky factor of A = V + sigma^2 I cached.
class GprModel {
public:
    GprModel(std::vector<Aod> angles, std::vector<double> srcs, GprHyper hyper, double mean = 0.0,
             double jitter_rel = 1e-10)
        : angles_(std::move(angles)), srcs_(std::move(srcs)), hyper_(hyper), mean_(mean) {
        if (angles_.empty() || angles_.size() != srcs_.size()) {
            throw std::invalid_argument("GprModel: need matching, non-empty angles and SRCs");
        }
        if (!(hyper_.v > 0.0) || !(hyper_.rho > 0.0) || !(hyper_.sigma >= 0.0)) {
            throw std::invalid_argument("GprModel: hyperparameters must satisfy v > 0, rho > 0, sigma >= 0");
        }
        Eigen::MatrixXd a = kernel_matrix(angles_, hyper_.v, hyper_.rho);
        a.diagonal().array() += hyper_.sigma * hyper_.sigma;
        llt_.compute(a);
        if (llt_.info() != Eigen::Success) {
            a.diagonal().array() += jitter_rel * hyper_.v * hyper_.v;
            llt_.compute(a);
            if (llt_.info() != Eigen::Success) {
                throw NumericError("GprModel: covariance not positive definite after jitter (v=" +
                                   std::to_string(hyper_.v) + ", rho=" + std::to_string(hyper_.rho) +
                                   ", sigma=" + std::to_string(hyper_.sigma) + ")");
            }
        }
        Eigen::VectorXd centered(size());
        for (int a_idx = 0; a_idx < size(); ++a_idx) centered[a_idx] = srcs_[a_idx] - mean_;
        weights_ = llt_.solve(centered);
        centered_ = std::move(centered);
    }

    int size() const { return static_cast<int>(angles_.size()); }
    const GprHyper& hyper() const { return hyper_; }
    double mean() const { return mean_; }
    const std::vector<Aod>& angles() const { return angles_; }
    const std::vector<double>& srcs() const { return srcs_; }

    /// -1/2 y^T A^-1 y - 1/2 log|A| - M/2 log 2 pi, y = srcs - mean.
    double log_marginal_likelihood() const {
        const double log_det = 2.0 * llt_.matrixLLT().diagonal().array().log().sum();
        return -0.5 * centered_.dot(weights_) - 0.5 * log_det - 0.5 * size() * std::log(2.0 * kPi);
    }

    /// Gradient of the log marginal likelihood with respect to
    /// (log v, log rho, log sigma).
    std::array<double, 3> log_likelihood_gradient() const {
        const int n = size();
        const Eigen::MatrixXd a_inv = llt_.solve(Eigen::MatrixXd::Identity(n, n));
        const Eigen::MatrixXd inner = weights_ * weights_.transpose() - a_inv;
        double d_v = 0.0;
        double d_rho = 0.0;
        for (int a = 0; a < n; ++a) {
            for (int b = 0; b < n; ++b) {
                const double d2 = angular_distance_sq(angles_[a], angles_[b]);
                const double k = kernel_from_distance_sq(d2, hyper_.v, hyper_.rho);
                d_v += inner(a, b) * 2.0 * k;
                d_rho += inner(a, b) * k * d2 / (hyper_.rho * hyper_.rho);
            }
        }
        const double d_sigma = inner.trace() * 2.0 * hyper_.sigma * hyper_.sigma;
        return {0.5 * d_v, 0.5 * d_rho, 0.5 * d_sigma};
    }

    /// Posterior mean k(target)^T A^-1 y + mean.
    double predict(const Aod& target) const {
        double out = mean_;
        for (int a = 0; a < size(); ++a) out += kernel(target, angles_[a], hyper_.v, hyper_.rho) * weights_[a];
        return out;
    }

private:
    std::vector<Aod> angles_;
    std::vector<double> srcs_;
    GprHyper hyper_;
    double mean_ = 0.0;
    Eigen::LLT<Eigen::MatrixXd> llt_;
    Eigen::VectorXd weights_;
    Eigen::VectorXd centered_;
};

inline double log_marginal_likelihood(const GprModel& model) { return model.log_marginal_likelihood(); }

inline double predict_src(const GprModel& model, const Aod& target) { return model.predict(target); }

/// Hyperparameters for fewer than min_points_for_fit training points.
inline GprHyper fallback_hyper(std::span<const double> srcs, double sector_width, const GprConfig& config) {
    const double floor = sigma_floor(srcs, config.sigma_floor_rel);
    return GprHyper{std::max(rms(srcs), floor), sector_width, floor};
}

struct GprFitResult {
    GprHyper hyper;
    double log_likelihood = -std::numeric_limits<double>::infinity();
    std::vector<double> start_log_likelihoods;
};

/// Maximizes the log marginal likelihood over (log v, log rho, log sigma)
/// by projected gradient ascent from 8 corner starts of a log-grid.
inline GprFitResult fit_hyperparams_detailed(std::span<const Aod> angles, std::span<const double> srcs,
                                             double sector_width, const GprConfig& config) {
    if (angles.empty() || angles.size() != srcs.size()) {
        throw std::invalid_argument("fit_hyperparams: need matching, non-empty angles and SRCs");
    }
    const double mean = config.constant_mean ? [&] {
        double acc = 0.0;
        for (double s : srcs) acc += s;
        return acc / static_cast<double>(srcs.size());
    }() : 0.0;
    std::vector<double> centered(srcs.begin(), srcs.end());
    for (double& c : centered) c -= mean;

    const double floor = sigma_floor(srcs, config.sigma_floor_rel);
    const double scale = std::max(rms(centered), floor);
    const std::vector<Aod> angle_vec(angles.begin(), angles.end());
    const std::vector<double> src_vec(srcs.begin(), srcs.end());

    auto lml_at = [&](const std::array<double, 3>& theta, std::array<double, 3>* grad) {
        try {
            const GprModel m(angle_vec, src_vec, {std::exp(theta[0]), std::exp(theta[1]), std::exp(theta[2])}, mean,
                             config.jitter_rel);
            if (grad) *grad = m.log_likelihood_gradient();
            const double l = m.log_marginal_likelihood();
            return std::isfinite(l) ? l : -std::numeric_limits<double>::infinity();
        } catch (const NumericError&) {
            return -std::numeric_limits<double>::infinity();
        }
    };

    GprFitResult out;
    if (static_cast<int>(angles.size()) < config.min_points_for_fit) {
        out.hyper = fallback_hyper(centered, sector_width, config);
        out.log_likelihood = lml_at({std::log(out.hyper.v), std::log(out.hyper.rho), std::log(out.hyper.sigma)}, nullptr);
        return out;
    }

    const std::array<double, 3> lo{std::log(1e-3 * scale), std::log(0.05 * sector_width), std::log(floor)};
    const std::array<double, 3> hi{std::log(1e3 * scale), std::log(20.0), std::log(std::max(10.0 * scale, floor))};
    auto project = [&](std::array<double, 3> th) {
        for (int d = 0; d < 3; ++d) th[d] = std::clamp(th[d], lo[d], hi[d]);
        return th;
    };

    for (double fv : {0.5, 2.0}) {
        for (double fr : {0.5, 2.0}) {
            for (double fs : {1e-4, 1e-2}) {
                std::array<double, 3> theta =
                    project({std::log(fv * scale), std::log(fr * sector_width), std::log(fs * scale)});
                std::array<double, 3> grad{};
                double value = lml_at(theta, &grad);
                out.start_log_likelihoods.push_back(value);
                if (std::isfinite(value)) {
                    double step = 0.1;
                    for (int it = 0; it < config.max_iters; ++it) {
                        const double gnorm = std::sqrt(grad[0] * grad[0] + grad[1] * grad[1] + grad[2] * grad[2]);
                        if (!(gnorm > 1e-10)) break;
                        bool accepted = false;
                        std::array<double, 3> next{};
                        std::array<double, 3> next_grad{};
                        double next_value = value;
                        for (int ls = 0; ls < 40; ++ls) {
                            std::array<double, 3> cand{};
                            for (int d = 0; d < 3; ++d) cand[d] = theta[d] + step * grad[d] / gnorm;
                            cand = project(cand);
                            double moved = 0.0;
                            double ascent = 0.0;
                            for (int d = 0; d < 3; ++d) {
                                moved += std::abs(cand[d] - theta[d]);
                                ascent += grad[d] * (cand[d] - theta[d]);
                            }
                            if (moved < 1e-12) break;
                            next_value = lml_at(cand, &next_grad);
                            if (next_value >= value + 1e-4 * ascent) {
                                next = cand;
                                accepted = true;
                                break;
                            }
                            step *= 0.5;
                        }
                        if (!accepted) break;
                        const double gain = next_value - value;
                        theta = next;
                        grad = next_grad;
                        value = next_value;
                        step = std::min(2.0 * step, 2.0);
                        if (gain < 1e-10 * (1.0 + std::abs(value))) break;
                    }
                }
                if (value > out.log_likelihood) {
                    out.log_likelihood = value;
                    out.hyper = {std::exp(theta[0]), std::exp(theta[1]), std::exp(theta[2])};
                }
            }
        }
    }
    if (!std::isfinite(out.log_likelihood)) out.hyper = fallback_hyper(centered, sector_width, config);
    return out;
}

inline GprHyper fit_hyperparams(std::span<const Aod> angles, std::span<const double> srcs, double sector_width,
                                const GprConfig& config) {
    return fit_hyperparams_detailed(angles, srcs, sector_width, config).hyper;
}

/// Hyperparameters reported per scatterer after completion.
struct GprFitSummary {
    GprHyper hyper;
    int m_trained = 0;
    bool fitted = false; // false: fallback defaults (too few points)
};

struct Completion {
    VirtualScattererSet model;
    std::vector<std::optional<GprFitSummary>> gpr; // nullopt: nothing to infer or nothing observed
    std::vector<std::string> warnings;
};

/// Fills every undefined SRC entry with the GP posterior mean at the
/// sector's center angle. Defined entries are never modified.
inline Completion complete_model(const VirtualScattererSet& vs, const GprConfig& config) {
    Completion out;
    out.model = vs;
    out.gpr.resize(vs.size());
    const double width = vs.sectors.azimuth_width();
    for (int k = 0; k < vs.size(); ++k) {
        auto& v = out.model.items[k];
        std::vector<Aod> angles;
        std::vector<double> values;
        for (int m = 0; m < vs.sectors.count(); ++m) {
            if (v.src[m]) {
                angles.push_back(sector_center(m, vs.sectors));
                values.push_back(*v.src[m]);
            }
        }
        if (static_cast<int>(angles.size()) == vs.sectors.count()) continue;
        if (angles.empty()) {
            for (auto& s : v.src) s = 0.0;
            out.warnings.push_back("virtual scatterer " + std::to_string(k) +
                                   " has no estimated SRC; filled with 0 (unobserved scatterer)");
            continue;
        }
        const GprHyper hyper = fit_hyperparams(angles, values, width, config);
        double mean = 0.0;
        if (config.constant_mean) {
            for (double x : values) mean += x;
            mean /= static_cast<double>(values.size());
        }
        const GprModel model(angles, values, hyper, mean, config.jitter_rel);
        for (int m = 0; m < vs.sectors.count(); ++m) {
            if (!v.src[m]) v.src[m] = model.predict(sector_center(m, vs.sectors));
        }
        out.gpr[k] = GprFitSummary{hyper, static_cast<int>(angles.size()),
                                   static_cast<int>(angles.size()) >= config.min_points_for_fit};
    }
    return out;
}

struct Reconstruction {
    Cgm map;
    FitReport report;
    VirtualScattererSet model; // completed
    std::vector<std::optional<GprFitSummary>> gpr;
    std::vector<std::string> warnings;
};

/// Estimation, GP completion and forward map in one call.
inline Reconstruction reconstruct_cgm(const Scene& scene, const GridMap& grid, const AodSectorization& sectors,
                                      const MeasurementSet& ms, const EstimatorConfig& est_config,
                                      const GprConfig& gpr_config) {
    EstimateResult est = progressive_estimate(scene, grid, sectors, ms, est_config);
    Completion done = complete_model(est.model, gpr_config);
    Reconstruction out;
    out.map = predict_map(done.model, grid, scene);
    out.report = std::move(est.report);
    out.model = std::move(done.model);
    out.gpr = std::move(done.gpr);
    out.warnings = std::move(done.warnings);
    return out;
}

} // namespace vscat
