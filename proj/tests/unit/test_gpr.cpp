// SPDX-License-Identifier: Apache-2.0

#include "oracles/oracles.hpp"
#include "support.hpp"

#include <gtest/gtest.h>

using namespace vscat;

namespace {

std::vector<Aod> random_angles(std::mt19937_64& rng, int n, double el_span = 1.0) {
    std::uniform_real_distribution<double> az(-kPi, kPi);
    std::uniform_real_distribution<double> el(-0.5 * kPi * el_span, 0.5 * kPi * el_span);
    std::vector<Aod> out;
    for (int k = 0; k < n; ++k) out.push_back(Aod{az(rng), el(rng)});
    return out;
}

// Draw from the GP prior plus white noise.
std::vector<double> draw(const std::vector<Aod>& angles, double v, double rho, double sigma, std::mt19937_64& rng) {
    const Eigen::MatrixXd a = oracle::covariance(angles, v, rho, sigma);
    const Eigen::LLT<Eigen::MatrixXd> llt(a);
    std::normal_distribution<double> n(0.0, 1.0);
    Eigen::VectorXd z(static_cast<Eigen::Index>(angles.size()));
    for (auto& x : z) x = n(rng);
    const Eigen::VectorXd y = llt.matrixL() * z;
    return std::vector<double>(y.data(), y.data() + y.size());
}

double min_eigenvalue(const Eigen::MatrixXd& m) {
    return Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd>(m, Eigen::EigenvaluesOnly).eigenvalues().minCoeff();
}

} // namespace

TEST(Kernel, ZeroLagAndPlugInValue) {
    const Aod a{0.3, -0.2};
    EXPECT_DOUBLE_EQ(kernel(a, a, 1.7, 0.4), 1.7 * 1.7);
    // Azimuths a quarter turn apart have squared chord 2.
    EXPECT_NEAR(kernel(Aod{0.0, 0.0}, Aod{kPi / 2, 0.0}, 1.0, 1.0), std::exp(-1.0), 1e-15);
    EXPECT_NEAR(kernel(Aod{0.0, 0.0}, Aod{0.0, std::sqrt(2.0)}, 1.0, 1.0), std::exp(-1.0), 1e-15);
}

TEST(Kernel, ContinuousAcrossTheAzimuthSeam) {
    const Aod just_below{kPi - 1e-9, 0.1};
    const Aod just_above{-kPi, 0.1};
    EXPECT_NEAR(kernel(just_below, just_above, 1.0, 0.3), 1.0, 1e-12);
}

TEST(Kernel, MatrixIsSymmetricAndPsdAfterJitterOnRandomAngleSets) {
    std::mt19937_64 rng(100);
    std::uniform_int_distribution<int> size(2, 60);
    std::uniform_real_distribution<double> log_rho(std::log(0.05), std::log(20.0));
    for (int trial = 0; trial < 100; ++trial) {
        auto angles = random_angles(rng, size(rng));
        if (trial % 4 == 0) angles.push_back(angles.front()); // exact duplicate
        const double v = 0.5 + trial * 0.01;
        Eigen::MatrixXd k = kernel_matrix(angles, v, std::exp(log_rho(rng)));
        EXPECT_EQ(k, k.transpose());
        k.diagonal().array() += 1e-10 * v * v;
        EXPECT_GE(min_eigenvalue(k), 0.0) << "trial " << trial;
        EXPECT_EQ(Eigen::LLT<Eigen::MatrixXd>(k).info(), Eigen::Success);
    }
}

// The wrapped-angle Euclidean distance is not a valid input for a Gaussian
// kernel: on evenly spaced azimuths some length scales give negative
// eigenvalues, which the chordal distance never does.
TEST(Kernel, WrappedAzimuthDistanceBreaksPositiveDefiniteness) {
    const int n = 64;
    std::vector<Aod> angles;
    for (int k = 0; k < n; ++k) angles.push_back(Aod{-kPi + 2.0 * kPi * k / n, 0.0});
    double worst_wrapped = 0.0;
    double worst_chordal = 0.0;
    for (double rho : {0.5, 1.0, 1.5, 2.0, 3.0}) {
        Eigen::MatrixXd w(n, n);
        for (int a = 0; a < n; ++a) {
            for (int b = 0; b < n; ++b) {
                double d = std::abs(angles[a].azimuth - angles[b].azimuth);
                d = std::min(d, 2.0 * kPi - d);
                w(a, b) = std::exp(-d * d / (2.0 * rho * rho));
            }
        }
        worst_wrapped = std::min(worst_wrapped, min_eigenvalue(w));
        worst_chordal = std::min(worst_chordal, min_eigenvalue(kernel_matrix(angles, 1.0, rho)));
    }
    EXPECT_LT(worst_wrapped, -1e-6);
    EXPECT_GT(worst_chordal, -1e-12);
}

TEST(LogMarginalLikelihood, SinglePointClosedForms) {
    const GprModel zero({Aod{}}, {0.0}, GprHyper{1.0, 1.0, 0.0});
    EXPECT_NEAR(zero.log_marginal_likelihood(), -0.5 * std::log(2.0 * kPi), 1e-15);
    EXPECT_NEAR(zero.log_marginal_likelihood(), -0.91893853320467, 1e-12);
    const GprModel one({Aod{}}, {1.0}, GprHyper{1.0, 1.0, 0.0});
    EXPECT_NEAR(one.log_marginal_likelihood(), -0.5 - 0.5 * std::log(2.0 * kPi), 1e-15);
}

TEST(LogMarginalLikelihood, MatchesDenseInverseEvaluation) {
    std::mt19937_64 rng(55);
    std::uniform_real_distribution<double> u(0.0, 1.0);
    int checked = 0;
    for (int trial = 0; trial < 200; ++trial) {
        const int n = 2 + trial % 12;
        const auto angles = random_angles(rng, n);
        const double v = 0.2 + 2.0 * u(rng);
        const double rho = 0.1 + 1.5 * u(rng);
        const double sigma = v * (0.01 + 0.3 * u(rng));
        const Eigen::MatrixXd a = oracle::covariance(angles, v, rho, sigma);
        const Eigen::JacobiSVD<Eigen::MatrixXd> svd(a);
        const double cond = svd.singularValues()(0) / svd.singularValues().tail(1)(0);
        if (cond >= 1e8) continue;
        std::vector<double> y(n);
        for (double& x : y) x = u(rng) - 0.5;
        const GprModel m(angles, y, GprHyper{v, rho, sigma});
        EXPECT_NEAR(m.log_marginal_likelihood(), oracle::lml_dense(angles, y, v, rho, sigma), 1e-10);
        ++checked;
    }
    EXPECT_GT(checked, 150);
}

TEST(LogMarginalLikelihood, GradientMatchesFiniteDifferences) {
    std::mt19937_64 rng(56);
    for (int trial = 0; trial < 20; ++trial) {
        const auto angles = random_angles(rng, 8);
        const auto y = draw(angles, 1.0, 0.7, 0.1, rng);
        const std::array<double, 3> theta{std::log(0.8), std::log(0.6), std::log(0.2)};
        const GprModel m(angles, y, GprHyper{std::exp(theta[0]), std::exp(theta[1]), std::exp(theta[2])});
        const auto g = m.log_likelihood_gradient();
        for (int d = 0; d < 3; ++d) {
            auto lml = [&](double step) {
                std::array<double, 3> t = theta;
                t[d] += step;
                return GprModel(angles, y, GprHyper{std::exp(t[0]), std::exp(t[1]), std::exp(t[2])})
                    .log_marginal_likelihood();
            };
            const double h = 1e-5;
            const double fd = (lml(h) - lml(-h)) / (2.0 * h);
            EXPECT_NEAR(g[d], fd, 1e-6 * std::max(1.0, std::abs(fd))) << "dim " << d;
        }
    }
}

TEST(Predict, TwoPointPosteriorMatchesHandExpandedInverse) {
    std::mt19937_64 rng(3);
    std::uniform_real_distribution<double> u(0.0, 1.0);
    for (int trial = 0; trial < 200; ++trial) {
        const auto angles = random_angles(rng, 3);
        const Aod target = angles[2];
        const double v = 0.3 + u(rng);
        const double rho = 0.2 + u(rng);
        const double sigma = 0.1 + u(rng);
        const double y1 = u(rng) - 0.5;
        const double y2 = u(rng) - 0.5;
        const double a = v * v + sigma * sigma;
        const double dx = std::cos(angles[0].azimuth) - std::cos(angles[1].azimuth);
        const double dy = std::sin(angles[0].azimuth) - std::sin(angles[1].azimuth);
        const double de = angles[0].elevation - angles[1].elevation;
        const double b = v * v * std::exp(-(dx * dx + dy * dy + de * de) / (2.0 * rho * rho));
        auto cross = [&](const Aod& p) {
            const double cx = std::cos(p.azimuth) - std::cos(target.azimuth);
            const double cy = std::sin(p.azimuth) - std::sin(target.azimuth);
            const double ce = p.elevation - target.elevation;
            return v * v * std::exp(-(cx * cx + cy * cy + ce * ce) / (2.0 * rho * rho));
        };
        const double k1 = cross(angles[0]);
        const double k2 = cross(angles[1]);
        const double det = a * a - b * b;
        const double expect = (k1 * (a * y1 - b * y2) + k2 * (a * y2 - b * y1)) / det;
        const GprModel m({angles[0], angles[1]}, {y1, y2}, GprHyper{v, rho, sigma});
        EXPECT_NEAR(m.predict(target), expect, 1e-12);
    }
}

TEST(Predict, NearInterpolationAtTrainingAnglesAndDecayFarAway) {
    std::mt19937_64 rng(4);
    const auto angles = random_angles(rng, 6, 0.2);
    const std::vector<double> y{0.5, 0.7, 0.2, 0.9, 0.4, 0.6};
    const GprModel tight(angles, y, GprHyper{1.0, 0.3, 1e-6});
    for (int k = 0; k < 6; ++k) EXPECT_NEAR(tight.predict(angles[k]), y[k], 0.01 * y[k]);

    const GprModel local({Aod{0.0, 0.0}, Aod{0.1, 0.0}}, {1.0, 1.0}, GprHyper{1.0, 0.1, 1e-3});
    EXPECT_LT(std::abs(local.predict(Aod{kPi - 0.1, 0.0})), 1e-12);
}

TEST(Predict, LinearInTheTrainingValues) {
    std::mt19937_64 rng(5);
    const auto angles = random_angles(rng, 7);
    const auto ya = draw(angles, 1.0, 0.5, 0.05, rng);
    const auto yb = draw(angles, 1.0, 0.5, 0.05, rng);
    std::vector<double> mix(7);
    for (int k = 0; k < 7; ++k) mix[k] = 2.0 * ya[k] - 0.5 * yb[k];
    const GprHyper h{1.0, 0.5, 0.05};
    const GprModel a(angles, ya, h), b(angles, yb, h), m(angles, mix, h);
    for (const Aod& t : random_angles(rng, 20)) {
        EXPECT_NEAR(m.predict(t), 2.0 * a.predict(t) - 0.5 * b.predict(t), 1e-12);
    }
}

TEST(GprModel, RejectsInvalidInput) {
    EXPECT_THROW(GprModel({}, {}, GprHyper{}), std::invalid_argument);
    EXPECT_THROW(GprModel({Aod{}}, {1.0, 2.0}, GprHyper{}), std::invalid_argument);
    EXPECT_THROW(GprModel({Aod{}}, {1.0}, GprHyper{0.0, 1.0, 0.0}), std::invalid_argument);
}

TEST(FitHyperparams, RecoversKnownHyperparametersInMostSeeds) {
    const double v = 1.0;
    const double rho = 0.5;
    const double sigma = 0.01;
    const int seeds = 50;
    int within = 0;
    for (int seed = 1; seed <= seeds; ++seed) {
        std::mt19937_64 rng(1000 + seed);
        const auto angles = random_angles(rng, 64);
        const auto y = draw(angles, v, rho, sigma, rng);
        const GprHyper h = fit_hyperparams(angles, y, 2.0 * kPi / 8, GprConfig{});
        within += std::abs(std::log(h.v / v)) <= 0.3 && std::abs(std::log(h.rho / rho)) <= 0.3;
    }
    EXPECT_GE(within, static_cast<int>(0.8 * seeds)) << within << " of " << seeds;
}

TEST(FitHyperparams, BestLikelihoodDominatesEveryStart) {
    std::mt19937_64 rng(9);
    for (int trial = 0; trial < 10; ++trial) {
        const auto angles = random_angles(rng, 12);
        const auto y = draw(angles, 0.7, 0.8, 0.05, rng);
        const GprFitResult r = fit_hyperparams_detailed(angles, y, 2.0 * kPi / 8, GprConfig{});
        ASSERT_EQ(r.start_log_likelihoods.size(), 8u);
        for (double start : r.start_log_likelihoods) EXPECT_GE(r.log_likelihood, start);
        const GprModel m(angles, y, r.hyper);
        EXPECT_NEAR(m.log_marginal_likelihood(), r.log_likelihood, 1e-9 * std::abs(r.log_likelihood));
    }
}

TEST(FitHyperparams, ConstantDataIsPredictedNearTheConstant) {
    const AodSectorization sectors{8, 1};
    std::vector<Aod> angles;
    for (int m : {0, 2, 3, 5, 6}) angles.push_back(sector_center(m, sectors));
    const std::vector<double> y(angles.size(), 0.4);
    const GprConfig cfg;
    const GprHyper h = fit_hyperparams(angles, y, sectors.azimuth_width(), cfg);
    const GprModel m(angles, y, h, 0.0, cfg.jitter_rel);
    const double sigma = std::max(h.sigma, sigma_floor(y, cfg.sigma_floor_rel));
    for (const Aod& a : angles) {
        EXPECT_GE(m.predict(a), 0.4 - 3.0 * sigma);
        EXPECT_LE(m.predict(a), 0.4 + 3.0 * sigma);
    }
}

TEST(FitHyperparams, FewPointsUseTheFallback) {
    const std::vector<Aod> angles{Aod{0.0, 0.0}, Aod{1.0, 0.0}};
    const std::vector<double> y{0.3, 0.4};
    const GprHyper h = fit_hyperparams(angles, y, 0.7, GprConfig{});
    EXPECT_DOUBLE_EQ(h.v, std::sqrt((0.09 + 0.16) / 2.0));
    EXPECT_DOUBLE_EQ(h.rho, 0.7);
    EXPECT_DOUBLE_EQ(h.sigma, 1e-6);
}

TEST(CompleteModel, LeavesDefinedEntriesAndFillsTheRest) {
    VirtualScattererSet vs;
    vs.sectors = AodSectorization{8, 1};
    auto& full = vs.add(Point3(0, 0, 0), 1);
    for (int m = 0; m < 8; ++m) full.src[m] = 0.1 * m;
    auto& one = vs.add(Point3(1, 0, 0), 1);
    one.src[2] = 0.5;
    auto& some = vs.add(Point3(2, 0, 0), 1);
    some.src[0] = 0.2;
    some.src[1] = 0.25;
    some.src[4] = 0.1;
    some.src[6] = 0.3;
    vs.add(Point3(3, 0, 0), 1); // nothing observed

    const Completion c = complete_model(vs, GprConfig{});
    EXPECT_EQ(c.model.items[0].src, vs.items[0].src);
    EXPECT_FALSE(c.gpr[0].has_value());
    for (int k = 1; k < 4; ++k) {
        for (int m = 0; m < 8; ++m) {
            ASSERT_TRUE(c.model.items[k].src[m].has_value());
            EXPECT_TRUE(std::isfinite(*c.model.items[k].src[m]));
            if (vs.items[k].src[m]) EXPECT_EQ(*c.model.items[k].src[m], *vs.items[k].src[m]);
        }
    }
    // A single observation decays toward the zero prior away from its sector.
    EXPECT_LT(std::abs(*c.model.items[1].src[6]), std::abs(*c.model.items[1].src[3]));
    EXPECT_LE(std::abs(*c.model.items[1].src[3]), 0.5);
    ASSERT_TRUE(c.gpr[2].has_value());
    EXPECT_TRUE(c.gpr[2]->fitted);
    EXPECT_EQ(c.gpr[2]->m_trained, 4);
    EXPECT_FALSE(c.gpr[1]->fitted);
    for (int m = 0; m < 8; ++m) EXPECT_EQ(*c.model.items[3].src[m], 0.0);
    EXPECT_EQ(c.warnings.size(), 1u);
}

// Every other sector observed without noise; the held-out sectors should be
// predicted better than by zeros.
TEST(CompleteModel, HeldOutSectorsBeatTheZeroBaseline) {
    const AodSectorization sectors{8, 1};
    double err_gp = 0.0;
    double err_zero = 0.0;
    for (int seed = 1; seed <= 50; ++seed) {
        std::mt19937_64 rng(seed);
        const auto truth = sample_src_vector(sectors, 0.15, 1.0, 0.3, rng);
        VirtualScattererSet vs;
        vs.sectors = sectors;
        auto& v = vs.add(Point3(0, 0, 0), 1);
        for (int m = 0; m < 8; m += 2) v.src[m] = truth[m];
        const Completion c = complete_model(vs, GprConfig{});
        for (int m = 1; m < 8; m += 2) {
            err_gp += std::pow(*c.model.items[0].src[m] - *truth[m], 2);
            err_zero += std::pow(*truth[m], 2);
        }
    }
    EXPECT_LT(err_gp, err_zero);
}

TEST(ReconstructCgm, ProducesAFiniteGainForEveryValidGrid) {
    const auto w = testing_support::make_world(2, 6, 20);
    const Truth t = testing_support::make_truth(w, 2, 3);
    const MeasurementSet ms = sample_measurements(t.map, w.grid, w.scene, w.sectors, 30, Selection::type2, 0.0, 2);
    const Reconstruction r = reconstruct_cgm(w.scene, w.grid, w.sectors, ms, EstimatorConfig{}, GprConfig{});
    ASSERT_EQ(r.map.size(), w.grid.size());
    for (double g : r.map.gain) EXPECT_TRUE(std::isfinite(g));
    // The training objective is reproduced from the completed model.
    double sse = 0.0;
    double energy = 0.0;
    for (int k = 0; k < ms.size(); ++k) {
        sse += std::pow(ms.gains[k] - r.map.gain[ms.grids[k]], 2);
        energy += ms.gains[k] * ms.gains[k];
    }
    EXPECT_NEAR(sse / energy, r.report.final_objective, 1e-9 + 1e-9 * r.report.final_objective);
}
