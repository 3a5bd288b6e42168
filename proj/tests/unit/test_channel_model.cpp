// SPDX-License-Identifier: Apache-2.0

#include "oracles/oracles.hpp"
#include "support.hpp"

#include <gtest/gtest.h>

using namespace vscat;
using testing_support::make_world;

namespace {

VirtualScattererSet random_set(const Scene& scene, const AodSectorization& sectors, int count, std::mt19937_64& rng) {
    std::uniform_real_distribution<double> u(-0.5, 0.5);
    std::uniform_real_distribution<double> pos(0.0, 2.0);
    VirtualScattererSet vs;
    vs.sectors = sectors;
    const auto ordered = scene.by_size();
    for (int k = 0; k < count; ++k) {
        const auto* phys = ordered[k % ordered.size()];
        Point3 p = phys->box.center();
        for (int a = 0; a < 3; ++a) p[a] += u(rng) * phys->box.extent()[a];
        p.z() = std::max(p.z(), 3.0); // keep off the grid plane
        auto& v = vs.add(p, phys->id);
        for (auto& s : v.src) s = pos(rng);
    }
    return vs;
}

} // namespace

TEST(PathGain, InverseAlphaPowerOfDistance) {
    EXPECT_DOUBLE_EQ(path_gain(Point3(0, 0, 0), Point3(3, 4, 0), 2.0, 2.0), 2.0 / 25.0);
    EXPECT_NEAR(path_gain(Point3(0, 0, 0), Point3(0, 0, 10), 1.0, 3.5), std::pow(10.0, -3.5), 1e-18);
    EXPECT_THROW(path_gain(Point3(1, 1, 1), Point3(1, 1, 1), 1.0, 2.0), std::invalid_argument);
}

TEST(PredictMap, MatchesPathEnumerationOracle) {
    std::mt19937_64 rng(21);
    for (std::uint64_t seed : {1u, 2u}) {
        const auto w = make_world(seed, 6, 14);
        const VirtualScattererSet vs = random_set(w.scene, w.sectors, 5, rng);
        const Cgm map = predict_map(vs, w.grid, w.scene);
        ASSERT_EQ(map.size(), w.grid.size());
        for (int i = 0; i < w.grid.size(); ++i) {
            const double expect = oracle::gain_by_paths(vs, w.grid.centers[i], w.scene);
            EXPECT_NEAR(map.gain[i], expect, 1e-12 * std::abs(expect)) << "grid " << i;
        }
    }
}

TEST(PredictMap, IsAffineInTheResponseCoefficients) {
    std::mt19937_64 rng(4);
    const auto w = make_world(3, 8, 20);
    VirtualScattererSet a = random_set(w.scene, w.sectors, 4, rng);
    VirtualScattererSet b = a;
    VirtualScattererSet mix = a;
    VirtualScattererSet none = a;
    std::uniform_real_distribution<double> u(0.0, 1.0);
    for (int k = 0; k < a.size(); ++k) {
        for (int m = 0; m < w.sectors.count(); ++m) {
            b.items[k].src[m] = u(rng);
            mix.items[k].src[m] = 0.3 * *a.items[k].src[m] + 0.7 * *b.items[k].src[m];
            none.items[k].src[m] = 0.0;
        }
    }
    const Cgm ma = predict_map(a, w.grid, w.scene);
    const Cgm mb = predict_map(b, w.grid, w.scene);
    const Cgm mm = predict_map(mix, w.grid, w.scene);
    const Cgm m0 = predict_map(none, w.grid, w.scene);
    for (int i = 0; i < w.grid.size(); ++i) {
        EXPECT_NEAR(m0.gain[i], tx_path_power(w.grid, i, w.scene), 0.0);
        const double expect = 0.3 * ma.gain[i] + 0.7 * mb.gain[i];
        EXPECT_NEAR(mm.gain[i], expect, 1e-12 * std::abs(expect));
    }
}

TEST(PredictMap, ReportsEveryMissingCoefficient) {
    std::mt19937_64 rng(9);
    const auto w = make_world(4, 6, 12);
    VirtualScattererSet vs = random_set(w.scene, w.sectors, 2, rng);
    for (auto& s : vs.items[1].src) s.reset();
    try {
        (void)predict_map(vs, w.grid, w.scene);
        FAIL() << "expected MissingCoefficientError";
    } catch (const MissingCoefficientError& e) {
        ASSERT_FALSE(e.entries().empty());
        int expected = 0;
        for (int i = 0; i < w.grid.size(); ++i) expected += w.grid.sees(i, vs.items[1].anchor_id);
        EXPECT_EQ(static_cast<int>(e.entries().size()), expected);
        for (const auto& entry : e.entries()) {
            EXPECT_EQ(entry.scatterer, 1);
            EXPECT_EQ(entry.sector, sector_index(aod_of(vs.items[1].position, w.grid.centers[entry.grid]), w.sectors));
        }
    }
}

TEST(PredictMap, InvisibleAnchorContributesNothing) {
    Scene s;
    s.region = Box{Point3(0, 0, 0), Point3(100, 100, 50)};
    s.tx = Point3(90, 90, 9);
    s.scatterers = {{1, Box{Point3(10, 40, 0), Point3(20, 60, 40)}}, {2, Box{Point3(40, 40, 0), Point3(50, 60, 40)}}};
    const GridMap g = partition_region(s, 10, 10, 1.5);
    VirtualScattererSet vs;
    vs.sectors = AodSectorization{4, 1};
    auto& v = vs.add(Point3(15, 50, 20), 1);
    for (auto& x : v.src) x = 1.0;
    const Cgm map = predict_map(vs, g, s);
    int hidden = 0;
    for (int i = 0; i < g.size(); ++i) {
        if (g.sees(i, 1)) continue;
        ++hidden;
        EXPECT_EQ(map.gain[i], tx_path_power(g, i, s));
    }
    EXPECT_GT(hidden, 0);
}

TEST(VirtualScattererSet, ValidateChecksAnchorsLengthsAndFiniteness) {
    const auto w = make_world(5, 4, 10);
    VirtualScattererSet vs;
    vs.sectors = w.sectors;
    vs.add(Point3(1, 1, 1), w.scene.scatterers[0].id);
    EXPECT_NO_THROW(vs.validate(w.scene));
    auto bad_anchor = vs;
    bad_anchor.items[0].anchor_id = 999;
    EXPECT_THROW(bad_anchor.validate(w.scene), std::invalid_argument);
    auto bad_len = vs;
    bad_len.items[0].src.pop_back();
    EXPECT_THROW(bad_len.validate(w.scene), std::invalid_argument);
    auto bad_val = vs;
    bad_val.items[0].src[0] = std::numeric_limits<double>::quiet_NaN();
    EXPECT_THROW(bad_val.validate(w.scene), std::invalid_argument);
    EXPECT_EQ(vs.items[0].defined_count(), 0);
}

TEST(ConstraintRegion, ModesProduceBoxesInsideTheRegion) {
    const auto w = make_world(6, 5, 10);
    const int id = w.scene.scatterers[0].id;
    ConstraintRegion c;
    c.margin = 7.0;
    const Box dil = c.for_anchor(w.scene, id);
    EXPECT_TRUE(w.scene.region.contains(dil));
    EXPECT_TRUE(dil.contains(w.scene.at(id).box.intersected(w.scene.region)));
    c.mode = ConstraintRegion::Mode::scene_region;
    EXPECT_EQ(c.for_anchor(w.scene, id), w.scene.region);
    c.mode = ConstraintRegion::Mode::fixed_box;
    c.box = Box{Point3(-10, -10, -10), Point3(50, 50, 20)};
    EXPECT_EQ(c.for_anchor(w.scene, id), (Box{Point3(0, 0, 0), Point3(50, 50, 20)}));
}

TEST(Cgm, ClampedZeroesNegativesOnly) {
    Cgm m{{-1.0, 0.0, 2.5}};
    const Cgm c = m.clamped();
    EXPECT_EQ(c.gain, (std::vector<double>{0.0, 0.0, 2.5}));
    EXPECT_EQ(m.gain[0], -1.0);
}
