#include "support.hpp"

#include <gtest/gtest.h>

#include <filesystem>
#include <fstream>
#include <sstream>

using namespace beamql;
using beamql::testing::beam;
using beamql::testing::road;

namespace
{
    std::string slurp(const std::filesystem::path &p)
    {
        std::ifstream f(p, std::ios::binary);
        std::ostringstream os;
        os << f.rdbuf();
        return os.str();
    }

    std::filesystem::path scratch_dir(const std::string &name)
    {
        const auto p = std::filesystem::temp_directory_path() / ("beamql_" + name);
        std::filesystem::remove_all(p);
        return p;
    }

    ExperimentSettings quick_settings()
    {
        ExperimentSettings e;
        e.stop = StopCondition::updates(3000);
        e.eval_trips = 20;
        return e;
    }
} // namespace

TEST(MetricsCsv, GoldenRow)
{
    MetricsRecord r;
    r.seed = 3;
    r.sweep_param = "mean_speed";
    r.sweep_value = "7";
    r.policy = "max_rate";
    r.avg_rate_gbps = 3.8712345678;
    r.handovers = 0.29;
    r.disconn_prob = 0.125;
    r.trips = 1000;
    r.updates = 0;
    r.sim_time_s = 0.0;
    std::ostringstream os;
    write_metrics_csv(os, {r});
    EXPECT_EQ(os.str(), std::string(kMetricsHeader) + "\n" +
                            "3,mean_speed,7,max_rate,3.871235,0.290000,0.125000,1000,0,0.000000\n");
}

TEST(MetricsCsv, EmptyIsHeaderOnly)
{
    std::ostringstream os;
    write_metrics_csv(os, {});
    EXPECT_EQ(os.str(), std::string(kMetricsHeader) + "\n");
}

TEST(Config, SpeedSweepExpandsToAllCells)
{
    const ExperimentConfig c = load_config(std::string(BEAMQL_SOURCE_DIR) + "/configs/speed_sweep.json");
    const auto cells = sweep_cells(c.experiment);
    EXPECT_EQ(cells.size(), 9u * 10u * 4u);
    EXPECT_EQ(cells.front().name(), "parallel_ql_seed1_mean_speed1");
}

TEST(Config, ShippedConfigsLoad)
{
    for (const char *name : {"canonical", "speed_sweep", "handover_sweep", "arrival_sweep", "learners", "reduced"})
        EXPECT_NO_THROW(load_config(std::string(BEAMQL_SOURCE_DIR) + "/configs/" + name + ".json")) << name;
}

TEST(Config, RejectsEmptySweepAndUnknownKeys)
{
    EXPECT_THROW(parse_config_text(R"({"experiment": {"sweep": {"parameter": "mean_speed", "values": []}}})"),
                 ConfigError);
    EXPECT_THROW(parse_config_text(R"({"experiment": {"sweep": {"parameter": "colour", "values": [1]}}})"),
                 ConfigError);
    EXPECT_THROW(parse_config_text(R"({"experiment": {"sede": [1]}})"), ConfigError);
    EXPECT_THROW(parse_config_text(R"({"scenario": {"num_mmbs": 2, "bogus": 1}})"), ConfigError);
    EXPECT_THROW(parse_config_text(R"({"experiment": {"policy": "oracle"}})"), ConfigError);
    EXPECT_THROW(parse_config_text("{"), ConfigError);
    ExperimentSettings e;
    EXPECT_THROW(sweep_cells(e), ConfigError);
}

TEST(Config, LearnerCapSweepAcceptsInfinity)
{
    const ExperimentConfig c = parse_config_text(
        R"({"experiment": {"sweep": {"parameter": "learner_cap", "values": [1, 2, "inf"]}}})");
    ASSERT_TRUE(c.experiment.sweep);
    EXPECT_TRUE(c.experiment.sweep->values[2].unlimited);
    EXPECT_EQ(c.experiment.sweep->values[1].label(), "2");
}

TEST(ScenarioLock, RoundTrip)
{
    const Scenario s = build_scenario(ScenarioConfig{});
    const std::string text = scenario_lock_text(s);
    EXPECT_EQ(parse_scenario_lock(text), s);
    EXPECT_EQ(fnv1a_hex(text), fnv1a_hex(scenario_lock_text(parse_scenario_lock(text))));
}

TEST(Trial, BaselineHasNoTraining)
{
    const Scenario s = build_scenario(ScenarioConfig{});
    const TrialResult r = run_trial(s, LearningSchedule{}, quick_settings(), TrialCell{PolicyKind::BlockageAware, 1, std::nullopt, {}});
    EXPECT_FALSE(r.training);
    EXPECT_EQ(r.record.updates, 0u);
    EXPECT_EQ(r.record.trips, 20u);
    EXPECT_EQ(r.record.policy, "blockage_aware");
}

TEST(Trial, LearnedPolicyRecordsTraining)
{
    const Scenario s = build_scenario(ScenarioConfig{});
    const TrialResult r = run_trial(s, LearningSchedule{}, quick_settings(), TrialCell{PolicyKind::ParallelQl, 2, std::nullopt, {}});
    ASSERT_TRUE(r.training);
    EXPECT_EQ(r.record.updates, 3000u);
    EXPECT_EQ(r.record.sim_time_s, r.training->sim_time_s);
}

TEST(Trial, Deterministic)
{
    const Scenario s = build_scenario(ScenarioConfig{});
    for (PolicyKind p : {PolicyKind::ParallelQl, PolicyKind::MaxRate, PolicyKind::UpperBound})
    {
        const auto a = run_trial(s, LearningSchedule{}, quick_settings(), TrialCell{p, 5, std::nullopt, {}});
        const auto b = run_trial(s, LearningSchedule{}, quick_settings(), TrialCell{p, 5, std::nullopt, {}});
        std::ostringstream x;
        std::ostringstream y;
        write_metrics_csv(x, {a.record});
        write_metrics_csv(y, {b.record});
        EXPECT_EQ(x.str(), y.str());
    }
}

TEST(Trial, CertainBlockageEverywhere)
{
    const Scenario s = road(10, 5.0, 2, 1, 10, {beam(1, 1, 0, 6, 1.0, 10, 7), beam(2, 1, 4, 10, 1.0, 10, 9)});
    for (PolicyKind p : {PolicyKind::ParallelQl, PolicyKind::MaxRate, PolicyKind::BlockageAware, PolicyKind::UpperBound})
    {
        const TrialResult r = run_trial(s, LearningSchedule{}, quick_settings(), TrialCell{p, 1, std::nullopt, {}});
        EXPECT_EQ(r.record.avg_rate_gbps, 0.0) << policy_name(p);
        EXPECT_EQ(r.record.disconn_prob, 1.0) << policy_name(p);
    }
}

TEST(Trial, MetricsStayInRange)
{
    const Scenario s = build_scenario(ScenarioConfig{});
    for (PolicyKind p : {PolicyKind::ParallelQl, PolicyKind::MaxRate, PolicyKind::BlockageAware, PolicyKind::UpperBound})
    {
        const MetricsRecord r = run_trial(s, LearningSchedule{}, quick_settings(), TrialCell{p, 1, std::nullopt, {}}).record;
        EXPECT_GE(r.disconn_prob, 0.0);
        EXPECT_LE(r.disconn_prob, 1.0);
        EXPECT_GE(r.avg_rate_gbps, 0.0);
        // Delivered rate is bounded by the top level over connected time.
        EXPECT_LE(r.avg_rate_gbps, s.max_rate() * (1.0 - r.disconn_prob) + 1e-9);
        EXPECT_GE(r.handovers, 0.0);
    }
}

TEST(Sweep, ApplySweepChangesOneKnob)
{
    Scenario s = build_scenario(ScenarioConfig{});
    ExperimentSettings e;
    apply_sweep(Sweep{SweepParameter::HandoverTime, {}}, SweepValue{0.3}, s, e);
    EXPECT_EQ(s.handover_time_s, 0.3);
    apply_sweep(Sweep{SweepParameter::LearnerCap, {}}, SweepValue{0.0, true}, s, e);
    EXPECT_FALSE(e.learner_cap);
    apply_sweep(Sweep{SweepParameter::LearnerCap, {}}, SweepValue{2.0}, s, e);
    EXPECT_EQ(e.learner_cap, std::optional<std::size_t>(2));
}

TEST(Outputs, WritesExpectedFiles)
{
    const Scenario s = build_scenario(ScenarioConfig{});
    ExperimentSettings e = quick_settings();
    e.seeds = {1, 2};
    e.policy = PolicyKind::ParallelQl;
    const auto results = run_cells(s, LearningSchedule{}, e, simulate_cells(e), 1);
    const auto dir = scratch_dir("outputs");
    write_outputs(results, s, dir);
    EXPECT_TRUE(std::filesystem::exists(dir / "metrics.csv"));
    EXPECT_EQ(parse_scenario_lock(slurp(dir / "scenario.lock")), s);
    for (const char *cell : {"parallel_ql_seed1", "parallel_ql_seed2"})
    {
        EXPECT_TRUE(std::filesystem::exists(dir / (std::string("convergence_") + cell + ".csv")));
        std::ifstream f(dir / (std::string("qtable_") + cell + ".snapshot"), std::ios::binary);
        const Snapshot snap = read_snapshot(f);
        EXPECT_EQ(snap.meta.scenario_hash, fnv1a_hex(slurp(dir / "scenario.lock")));
    }
    std::filesystem::remove_all(dir);
}

TEST(Outputs, ParallelCellsMatchSerialCells)
{
    const Scenario s = build_scenario(ScenarioConfig{});
    ExperimentSettings e = quick_settings();
    e.seeds = {1, 2, 3};
    const auto one = run_cells(s, LearningSchedule{}, e, simulate_cells(e), 1);
    const auto three = run_cells(s, LearningSchedule{}, e, simulate_cells(e), 3);
    std::ostringstream a;
    std::ostringstream b;
    std::vector<MetricsRecord> ra;
    std::vector<MetricsRecord> rb;
    for (const auto &r : one)
        ra.push_back(r.record);
    for (const auto &r : three)
        rb.push_back(r.record);
    write_metrics_csv(a, ra);
    write_metrics_csv(b, rb);
    EXPECT_EQ(a.str(), b.str());
}
