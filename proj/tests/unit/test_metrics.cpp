// SPDX-License-Identifier: Apache-2.0

#include <vscat/vscat.hpp>

#include <gtest/gtest.h>

#include <cmath>
#include <filesystem>
#include <fstream>

using namespace vscat;

namespace {

ExperimentSpec small_spec() {
    ExperimentSpec spec;
    spec.scene_gen.side = 120.0;
    spec.scene_gen.n_scatterers = 4;
    spec.layout.nx = 12;
    spec.layout.ny = 12;
    spec.layout.sectors = AodSectorization{4, 1};
    spec.truth.noise_std_rel = 0.05;
    spec.l_values = {10, 30};
    spec.methods = {Method::kpsm, Method::issm, Method::kriging};
    spec.seeds = {1, 2, 3};
    return spec;
}

std::string temp_path(const std::string& name) {
    const auto dir = std::filesystem::temp_directory_path() / "vscat_metrics_test";
    std::filesystem::create_directories(dir);
    return (dir / name).string();
}

} // namespace

TEST(MapNmse, WorkedExamples) {
    const Cgm truth{{1.0, 2.0}};
    EXPECT_EQ(map_nmse(truth, truth), 0.0);
    EXPECT_DOUBLE_EQ(map_nmse(truth, Cgm{{0.0, 0.0}}), 1.0);
    EXPECT_DOUBLE_EQ(map_nmse(truth, Cgm{{0.0, 2.0}}), 0.2);
    EXPECT_THROW(map_nmse(Cgm{{0.0, 0.0}}, Cgm{{1.0, 1.0}}), std::invalid_argument);
    EXPECT_THROW(map_nmse(truth, Cgm{{1.0}}), std::invalid_argument);
}

TEST(MapNmse, InvariantToCommonScaling) {
    std::mt19937_64 rng(3);
    std::uniform_real_distribution<double> u(0.0, 1.0);
    for (int trial = 0; trial < 100; ++trial) {
        Cgm a;
        Cgm b;
        for (int i = 0; i < 20; ++i) {
            a.gain.push_back(u(rng));
            b.gain.push_back(u(rng));
        }
        const double s = std::pow(10.0, 12.0 * u(rng) - 6.0);
        Cgm as = a;
        Cgm bs = b;
        for (auto& x : as.gain) x *= s;
        for (auto& x : bs.gain) x *= s;
        EXPECT_NEAR(map_nmse(as, bs), map_nmse(a, b), 1e-12 * map_nmse(a, b));
    }
}

TEST(Names, RoundTrip) {
    for (auto s : {Selection::type1, Selection::type2}) EXPECT_EQ(parse_selection(to_string(s)), s);
    for (auto g : {TruthGenerator::model_consistent, TruthGenerator::single_bounce}) EXPECT_EQ(parse_generator(to_string(g)), g);
    for (auto s : {RunStatus::ok, RunStatus::invalid_input, RunStatus::numeric_failure, RunStatus::error}) {
        EXPECT_EQ(parse_status(to_string(s)), s);
    }
    EXPECT_THROW(parse_selection("type3"), std::invalid_argument);
}

TEST(RunKeys, SeedThenLThenSelectionThenMethod) {
    ExperimentSpec spec = small_spec();
    spec.selections = {Selection::type1, Selection::type2};
    const auto keys = run_keys(spec);
    ASSERT_EQ(keys.size(), 3u * 2u * 2u * 3u);
    EXPECT_TRUE(std::is_sorted(keys.begin(), keys.end(), [&](const RunKey& a, const RunKey& b) {
        // spec order equals lexicographic order here because every list is ascending
        return a < b;
    }));
    EXPECT_EQ(keys.front(), (RunKey{1, 10, Selection::type1, Method::kpsm}));
    EXPECT_EQ(keys[1], (RunKey{1, 10, Selection::type1, Method::issm}));
    EXPECT_EQ(keys.back(), (RunKey{3, 30, Selection::type2, Method::kriging}));
}

TEST(Aggregate, RecomputedFromRowsWithAndWithoutFailuresAsOne) {
    ExperimentSpec spec;
    spec.l_values = {5};
    spec.methods = {Method::kpsm};
    spec.seeds = {1, 2, 3};
    std::vector<RunRow> rows(3);
    for (int k = 0; k < 3; ++k) rows[k].key = RunKey{static_cast<std::uint64_t>(k + 1), 5, Selection::type2, Method::kpsm};
    rows[0].nmse = 0.2;
    rows[1].nmse = 0.4;
    rows[2].status = RunStatus::numeric_failure;

    auto a = aggregate(rows, spec);
    ASSERT_EQ(a.size(), 1u);
    EXPECT_DOUBLE_EQ(a[0].mean, 0.3);
    EXPECT_DOUBLE_EQ(a[0].stddev, std::sqrt(0.02));
    EXPECT_EQ(a[0].n_ok, 2);
    EXPECT_EQ(a[0].n_failed, 1);

    spec.failures_as_one = true;
    a = aggregate(rows, spec);
    EXPECT_DOUBLE_EQ(a[0].mean, 1.6 / 3.0);
    const double m = 1.6 / 3.0;
    EXPECT_NEAR(a[0].stddev, std::sqrt(((0.2 - m) * (0.2 - m) + (0.4 - m) * (0.4 - m) + (1.0 - m) * (1.0 - m)) / 2.0),
                1e-15);

    spec.failures_as_one = false;
    rows[0].status = rows[1].status = RunStatus::error;
    a = aggregate(rows, spec);
    EXPECT_TRUE(std::isnan(a[0].mean));
    EXPECT_EQ(aggregates_to_csv(a), std::string(kAggregatesHeader) + "\n5,type2,kpsm,,,0,3\n");
}

TEST(Sweep, OneRunGivesOneRowAndOneAggregate) {
    ExperimentSpec spec = small_spec();
    spec.l_values = {20};
    spec.methods = {Method::kpsm};
    spec.seeds = {4};
    const SweepResult r = run_experiment(spec);
    ASSERT_EQ(r.rows.size(), 1u);
    ASSERT_EQ(r.aggregates.size(), 1u);
    EXPECT_EQ(r.rows[0].status, RunStatus::ok) << r.rows[0].message;
    EXPECT_EQ(r.aggregates[0].n_ok, 1);
    EXPECT_EQ(r.aggregates[0].mean, *r.rows[0].nmse);
    EXPECT_FALSE(r.rows[0].runtime_ms.has_value());
}

TEST(Sweep, RowsMatchIndependentRunsAndAggregatesMatchRows) {
    const ExperimentSpec spec = small_spec();
    const SweepResult r = run_experiment(spec);
    const auto keys = run_keys(spec);
    ASSERT_EQ(r.rows.size(), keys.size());
    for (std::size_t k = 0; k < keys.size(); ++k) {
        EXPECT_EQ(r.rows[k].key, keys[k]);
        const SeedContext ctx = make_seed_context(spec, keys[k].seed);
        const RunRow again = run_one(spec, ctx, keys[k]);
        EXPECT_EQ(again.status, r.rows[k].status);
        EXPECT_EQ(again.nmse, r.rows[k].nmse);
    }
    const auto agg = aggregate(r.rows, spec);
    EXPECT_EQ(aggregates_to_csv(agg), aggregates_to_csv(r.aggregates));
}

TEST(Sweep, OutputIsIdenticalAcrossRunsAndWorkerCounts) {
    const ExperimentSpec spec = small_spec();
    const SweepResult a = run_experiment(spec);
    const SweepResult b = run_experiment(spec);
    SweepOptions opts;
    opts.jobs = 3;
    std::vector<RunKey> order;
    opts.on_row = [&](const RunRow& row) { order.push_back(row.key); };
    const SweepResult c = run_experiment(spec, opts);
    EXPECT_EQ(results_to_csv(a.rows), results_to_csv(b.rows));
    EXPECT_EQ(results_to_csv(a.rows), results_to_csv(c.rows));
    EXPECT_EQ(aggregates_to_csv(a.aggregates), aggregates_to_csv(c.aggregates));
    EXPECT_EQ(order, run_keys(spec));
}

TEST(Sweep, ResumeReusesCompletedRows) {
    const ExperimentSpec spec = small_spec();
    const SweepResult full = run_experiment(spec);
    const std::string path = temp_path("resume.csv");
    std::vector<RunRow> partial(full.rows.begin(), full.rows.begin() + 7);
    write_text(path, results_to_csv(partial));
    SweepOptions opts;
    opts.completed = read_results_csv(path);
    const SweepResult resumed = run_experiment(spec, opts);
    EXPECT_EQ(resumed.reused, 7);
    EXPECT_EQ(results_to_csv(resumed.rows), results_to_csv(full.rows));
}

TEST(Sweep, FailuresAreRecordedNotThrown) {
    ExperimentSpec spec = small_spec();
    spec.l_values = {1, 100000};
    spec.methods = {Method::kriging};
    spec.seeds = {1};
    const SweepResult r = run_experiment(spec);
    ASSERT_EQ(r.rows.size(), 2u);
    EXPECT_EQ(r.failed, 2);
    for (const auto& row : r.rows) {
        EXPECT_EQ(row.status, RunStatus::invalid_input);
        EXPECT_FALSE(row.nmse.has_value());
    }
    EXPECT_NE(r.rows[0].message.find("kriging requires"), std::string::npos) << r.rows[0].message;
}

TEST(ResultsCsv, RoundTripsAndRejectsMalformedRows) {
    std::vector<RunRow> rows(2);
    rows[0].key = {7, 12, Selection::type1, Method::issm};
    rows[0].nmse = 0.123456789012345;
    rows[0].runtime_ms = 3.5;
    rows[1].key = {8, 12, Selection::type2, Method::proposed};
    rows[1].status = RunStatus::numeric_failure;
    const std::string path = temp_path("rows.csv");
    write_text(path, results_to_csv(rows));
    const auto back = read_results_csv(path);
    ASSERT_EQ(back.size(), 2u);
    for (int k = 0; k < 2; ++k) {
        EXPECT_EQ(back[k].key, rows[k].key);
        EXPECT_EQ(back[k].nmse, rows[k].nmse);
        EXPECT_EQ(back[k].runtime_ms, rows[k].runtime_ms);
        EXPECT_EQ(back[k].status, rows[k].status);
    }
    write_text(path, std::string(kResultsHeader) + "\n1,5,type2,kpsm,,,ok\n");
    EXPECT_THROW(read_results_csv(path), FormatError);
    write_text(path, std::string(kResultsHeader) + "\n-1,5,type2,kpsm,0.1,,ok\n");
    EXPECT_THROW(read_results_csv(path), FormatError);
}

TEST(ExperimentFromJson, ParsesAndRejects) {
    const Json ok = Json::parse(R"({
        "seeds": {"first": 3, "count": 4}, "L": [10, 20], "methods": ["kpsm", "kriging"],
        "selections": ["type1"], "output": "out",
        "scene": {"generate": {"n_scatterers": 5, "side": 150}},
        "grid": {"nx": 10, "ny": 11}, "sectors": {"m_azimuth": 6},
        "truth": {"n_true": 3, "noise_std_rel": 0.1, "generator": "single_bounce"},
        "config": {"estimator": {"step_rho": 3}}
    })");
    const ExperimentSpec spec = experiment_from_json(ok, "spec");
    EXPECT_EQ(spec.seeds, (std::vector<std::uint64_t>{3, 4, 5, 6}));
    EXPECT_EQ(spec.l_values, (std::vector<int>{10, 20}));
    EXPECT_EQ(spec.methods, (std::vector<Method>{Method::kpsm, Method::kriging}));
    EXPECT_EQ(spec.selections, (std::vector<Selection>{Selection::type1}));
    EXPECT_EQ(spec.scene_gen.n_scatterers, 5);
    EXPECT_EQ(spec.scene_gen.side, 150.0);
    EXPECT_EQ(spec.layout.nx, 10);
    EXPECT_EQ(spec.layout.ny, 11);
    EXPECT_EQ(spec.layout.sectors.m_azimuth, 6);
    EXPECT_EQ(spec.n_true, 3);
    EXPECT_EQ(spec.truth.generator, TruthGenerator::single_bounce);
    EXPECT_EQ(spec.config.estimator.step_rho, 3);

    auto rejects = [&](const char* patch) {
        Json j = ok;
        j.merge_patch(Json::parse(patch));
        EXPECT_THROW(experiment_from_json(j, "spec"), FormatError) << patch;
    };
    rejects(R"({"colour": 1})");
    rejects(R"({"scene": {"path": "x.json"}})"); // both path and generate
    rejects(R"({"L": [0]})");
    rejects(R"({"L": []})");
    rejects(R"({"methods": ["magic"]})");
    rejects(R"({"truth": {"generator": "ray_tracer"}})");
    rejects(R"({"config": {"estimator": {"stepsize": 1}}})");
    rejects(R"({"seeds": {"first": 1, "count": 0}})");
    Json no_scene = ok;
    no_scene.erase("scene");
    EXPECT_THROW(experiment_from_json(no_scene, "spec"), FormatError);
}
