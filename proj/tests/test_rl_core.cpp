#include "support.hpp"

#include <gtest/gtest.h>

#include <map>
#include <sstream>
#include <thread>

using namespace beamql;
using beamql::testing::beam;
using beamql::testing::road;

namespace
{
    Scenario small_road()
    {
        return road(4, 5.0, 2, 2, 10,
                    {beam(1, 1, 0, 3, 0.0, 10, 5), beam(1, 2, 0, 2, 0.0, 10, 5), beam(2, 1, 1, 4, 0.2, 10, 8),
                     beam(2, 2, 3, 4, 0.0, 10, 2)});
    }

    TransitionSample sample(SystemState s, BeamId a, double r, SystemState next)
    {
        TransitionSample t;
        t.state = s;
        t.action = a;
        t.reward_gbit = r;
        t.next_state = next;
        return t;
    }

    const SystemState kS{5, BeamId{1, 1}, 7, 0};
    const SystemState kNext{8, BeamId{2, 1}, 7, 0};
} // namespace

TEST(QUpdate, FirstVisitFromZeroTable)
{
    QTable t(small_road());
    const std::vector<BeamId> next{{1, 1}, {2, 1}, kNoBeam};
    q_update(t, sample(kS, BeamId{2, 1}, 4.5, kNext), next, LearningSchedule{});
    // 0 + 0.1 * (4.5 + 0.9 * 0 - 0)
    EXPECT_DOUBLE_EQ(t.q(kS, BeamId{2, 1}), 0.1 * 4.5);
    EXPECT_DOUBLE_EQ(t.q(kS, BeamId{2, 1}), 0.45);
}

TEST(QUpdate, ZeroRewardKeepsZero)
{
    QTable t(small_road());
    const std::vector<BeamId> next{{1, 1}, kNoBeam};
    q_update(t, sample(kS, BeamId{1, 1}, 0.0, kNext), next, LearningSchedule{});
    EXPECT_EQ(t.q(kS, BeamId{1, 1}), 0.0);
}

TEST(QUpdate, BootstrapsFromBestAvailableNextAction)
{
    QTable t(small_road());
    t.set(kS, BeamId{1, 1}, 1.0);
    t.set(kNext, BeamId{2, 1}, 1.0);
    t.set(kNext, BeamId{2, 2}, 50.0); // not available next epoch
    const std::vector<BeamId> next{{1, 1}, {2, 1}, kNoBeam};
    q_update(t, sample(kS, BeamId{1, 1}, 1.0, kNext), next, LearningSchedule{});
    EXPECT_DOUBLE_EQ(t.q(kS, BeamId{1, 1}), 1.0 + 0.1 * (1.0 + 0.9 * 1.0 - 1.0));
    EXPECT_DOUBLE_EQ(t.q(kS, BeamId{1, 1}), 1.09);
}

TEST(QUpdate, TerminalTransitionDoesNotBootstrap)
{
    QTable t(small_road());
    t.set(kNext, BeamId{2, 1}, 100.0);
    q_update(t, sample(kS, BeamId{1, 1}, 2.0, kNext), {}, LearningSchedule{});
    EXPECT_DOUBLE_EQ(t.q(kS, BeamId{1, 1}), 0.2);
}

TEST(QUpdate, RobbinsMonroStepSizes)
{
    LearningSchedule s;
    s.robbins_monro = true;
    s.robbins_monro_c = 4.0;
    EXPECT_EQ(s.step_size(0), 1.0);
    EXPECT_DOUBLE_EQ(s.step_size(1), 4.0 / 5.0);
    EXPECT_DOUBLE_EQ(s.step_size(2), 4.0 / 6.0);
    double sum = 0.0;
    double sq = 0.0;
    for (std::uint64_t t = 0; t < 100000; ++t)
    {
        const double a = s.step_size(t);
        EXPECT_GT(a, 0.0);
        EXPECT_LE(a, 1.0);
        sum += a;
        sq += a * a;
    }
    EXPECT_GT(sum, 30.0);
    EXPECT_LT(sq, 20.0);
    LearningSchedule constant;
    EXPECT_EQ(constant.step_size(12345), 0.1);
}

TEST(QValues, ConcurrentUpdatesAreNotLost)
{
    QValues q(1, 1);
    std::vector<std::thread> pool;
    for (int w = 0; w < 4; ++w)
        pool.emplace_back([&] {
            for (int i = 0; i < 20000; ++i)
                q.modify(0, 0, [](double v) { return v + 1.0; });
        });
    for (auto &t : pool)
        t.join();
    EXPECT_EQ(q.get(0, 0), 80000.0);
}

TEST(SelectAction, FullExplorationIsUniform)
{
    const QTable t(small_road());
    const std::vector<BeamId> avail{{1, 1}, {1, 2}, {2, 1}, kNoBeam};
    std::map<BeamId, int> counts;
    const int n = 100000;
    for (int i = 0; i < n; ++i)
    {
        auto rng = keyed_stream(11, DrawKind::Exploration, {static_cast<std::uint64_t>(i)});
        ++counts[select_action(t, kS, avail, 1.0, rng)];
    }
    ASSERT_EQ(counts.size(), avail.size());
    double chi2 = 0.0;
    const double expected = static_cast<double>(n) / avail.size();
    for (const auto &[b, c] : counts)
        chi2 += (c - expected) * (c - expected) / expected;
    // 3 degrees of freedom, p = 0.001
    EXPECT_LT(chi2, 16.27);
}

TEST(SelectAction, PureExploitation)
{
    QTable t(small_road());
    t.set(kS, BeamId{1, 1}, 2.0);
    t.set(kS, BeamId{1, 2}, 5.0);
    const std::vector<BeamId> avail{{1, 1}, {1, 2}, kNoBeam};
    auto rng = keyed_stream(1, DrawKind::Exploration, {0});
    EXPECT_EQ(select_action(t, kS, avail, 0.0, rng), (BeamId{1, 2}));
}

TEST(SelectAction, TieGoesToSmallestBeam)
{
    QTable t(small_road());
    t.set(kS, BeamId{1, 1}, 3.0);
    t.set(kS, BeamId{2, 1}, 3.0);
    const std::vector<BeamId> avail{{1, 1}, {2, 1}, kNoBeam};
    auto rng = keyed_stream(1, DrawKind::Exploration, {0});
    EXPECT_EQ(select_action(t, kS, avail, 0.0, rng), (BeamId{1, 1}));
}

TEST(SelectAction, RejectsEmptyActionSet)
{
    const QTable t(small_road());
    auto rng = keyed_stream(1, DrawKind::Exploration, {0});
    EXPECT_THROW(select_action(t, kS, std::vector<BeamId>{}, 0.5, rng), std::invalid_argument);
}

TEST(EpsilonSchedule, ReachesFloorAtConfiguredUpdate)
{
    LearningSchedule s;
    s.epsilon_floor_at_updates = 6000;
    EXPECT_EQ(s.epsilon_at(0), 1.0);
    EXPECT_NEAR(s.epsilon_at(3000), 0.1, 1e-9);
    EXPECT_NEAR(s.epsilon_at(6000), 0.01, 1e-9);
    EXPECT_EQ(s.epsilon_at(100000), 0.01);
    EXPECT_NEAR(std::pow(s.decay_factor(), 6000.0), 0.01, 1e-9);
    for (std::uint64_t k = 1; k < 7000; ++k)
        ASSERT_LE(s.epsilon_at(k), s.epsilon_at(k - 1));
}

TEST(EpsilonSchedule, ExplicitDecayWins)
{
    LearningSchedule s;
    s.epsilon_decay = 0.5;
    s.epsilon_floor_at_updates = 6000;
    EXPECT_EQ(s.epsilon_at(1), 0.5);
    EXPECT_EQ(s.epsilon_at(2), 0.25);
}

TEST(EpsilonSchedule, Validation)
{
    LearningSchedule s;
    s.discount = 1.0;
    EXPECT_THROW(s.validate(), ConfigError);
    s = LearningSchedule{};
    s.learning_rate = 0.0;
    EXPECT_THROW(s.validate(), ConfigError);
    s = LearningSchedule{};
    s.epsilon_floor = 0.5;
    s.epsilon_start = 0.4;
    EXPECT_THROW(s.validate(), ConfigError);
    s = LearningSchedule{};
    s.robbins_monro = true;
    s.robbins_monro_c = 0.0;
    EXPECT_THROW(s.validate(), ConfigError);
}

TEST(QTableDims, IndexRoundTrip)
{
    const QTableDims d = QTableDims::of(small_road());
    EXPECT_EQ(d.num_states(), 10u * 5u * 12u * 2u);
    EXPECT_EQ(d.num_actions(), 5u);
    for (std::size_t i = 0; i < d.num_states(); ++i)
        ASSERT_EQ(d.state_index(d.state_at(i)), i);
    EXPECT_THROW(d.state_index(SystemState{10, kNoBeam, 0, 0}), std::out_of_range);
    EXPECT_THROW(d.state_index(SystemState{0, BeamId{3, 1}, 0, 0}), std::out_of_range);
}

TEST(ExtractPolicy, ZeroTablePicksFirstAvailable)
{
    const Scenario s = small_road();
    const GreedyPolicy p = extract_policy(QTable(s), s);
    // Virtual beam is realizable everywhere, and (1,1) covers zone 0.
    EXPECT_EQ(p.at(SystemState{0, kNoBeam, 3, 0}), (BeamId{1, 1}));
    // After (2,2) in zone 3 going backwards, the vehicle is in zone 2.
    EXPECT_EQ(p.at(SystemState{2, BeamId{2, 2}, 3, 1}), (BeamId{1, 1}));
    // (2,2) moving forward leaves the road from zone 3: no realizable zone.
    EXPECT_EQ(p.at(SystemState{2, BeamId{2, 2}, 3, 0}), kNoBeam);
}

TEST(ExtractPolicy, SingleBeamRoad)
{
    const Scenario s = road(3, 5.0, 1, 1, 4, {beam(1, 1, 0, 3, 0.5, 4, 2)});
    QTable t(s);
    t.set(SystemState{2, BeamId{1, 1}, 5, 0}, kNoBeam, 1.0);
    const GreedyPolicy p = extract_policy(t, s);
    for (BeamId a : p.actions)
        EXPECT_TRUE(a == (BeamId{1, 1}) || a == kNoBeam);
    EXPECT_EQ(p.at(SystemState{2, BeamId{1, 1}, 5, 0}), kNoBeam);
}

TEST(ExtractPolicy, RestrictedToRealizableActions)
{
    const Scenario s = small_road();
    QTable t(s);
    const SystemState st{3, BeamId{1, 2}, 4, 0};
    // (2,2) only covers zone 3, unreachable right after (1,2) forward.
    t.set(st, BeamId{2, 2}, 9.0);
    t.set(st, BeamId{2, 1}, 1.0);
    EXPECT_EQ(extract_policy(t, s).at(st), (BeamId{2, 1}));
}

TEST(ExtractPolicy, ShapeMismatchRejected)
{
    const Scenario s = small_road();
    const Scenario other = road(2, 5.0, 1, 1, 10, {beam(1, 1, 0, 2, 0.0, 10, 5)});
    EXPECT_THROW(extract_policy(QTable(other), s), std::invalid_argument);
}

TEST(ModelLearning, GreedyMatchesValueIteration)
{
    const Scenario s = beamql::testing::toy_road();
    const ModelMdp m = build_model_mdp(s);
    const QStar ref = q_star(m.mdp, 0.9, 1e-12);
    LearningSchedule sch;
    sch.robbins_monro = true;
    sch.robbins_monro_c = 1000.0;
    ModelTrainingOptions o;
    o.updates = 2000000;
    const ModelTrainingResult r = train_on_model(m.mdp, sch, o);
    for (std::size_t st = 0; st < ref.q.size(); ++st)
    {
        std::size_t best = 0;
        for (std::size_t a = 1; a < ref.q[st].size(); ++a)
            if (r.q.get(st, a) > r.q.get(st, best))
                best = a;
        EXPECT_EQ(static_cast<int>(best), ref.greedy[st]) << "state " << st;
    }
}

TEST(SettlingPoint, FirstEntryThatStaysAboveThreshold)
{
    ConvergenceLog log;
    const std::vector<double> curve{0.5, 2.0, 1.0, 9.6, 9.4, 9.8, 10.0, 10.0, 10.0, 10.0};
    for (std::size_t i = 0; i < curve.size(); ++i)
        log.entries.push_back(ConvergenceEntry{(i + 1) * 100, (i + 1) * 10.0, curve[i], 0.0});
    const SettlingPoint p = settling_point(log);
    EXPECT_EQ(p.final_value, 10.0);
    EXPECT_EQ(p.updates, 600u); // 9.4 dips below 0.95 * 10
    EXPECT_EQ(p.sim_time_s, 60.0);
    EXPECT_THROW(settling_point(ConvergenceLog{}), std::invalid_argument);
}

TEST(ConvergenceLog, CsvLayout)
{
    ConvergenceLog log;
    log.epsilon_decay = 0.5;
    log.entries.push_back(ConvergenceEntry{100, 12.5, 3.25, 0.29});
    std::ostringstream os;
    log.write_csv(os);
    EXPECT_EQ(os.str(), "# epsilon_decay=0.5\nupdates,sim_time_s,avg_reward_gbps,epsilon\n"
                        "100,12.500000,3.250000,0.290000\n");
}

TEST(Snapshot, RoundTripIsExact)
{
    const Scenario s = small_road();
    QTable t(s);
    t.set(kS, BeamId{2, 1}, 0.1 + 0.2);
    t.set(kNext, kNoBeam, -1.0 / 3.0);
    t.set(SystemState{9, BeamId{2, 2}, 11, 1}, BeamId{2, 2}, 1e-300);
    std::stringstream ss;
    write_snapshot(ss, t, SnapshotMeta{"abc123", describe_schedule(LearningSchedule{}), 42});
    const Snapshot back = read_snapshot(ss);
    EXPECT_EQ(back.table, t);
    EXPECT_EQ(back.meta.scenario_hash, "abc123");
    EXPECT_EQ(back.meta.updates, 42u);
    EXPECT_EQ(back.meta.schedule, describe_schedule(LearningSchedule{}));
}

TEST(Snapshot, MalformedInputsAreRejected)
{
    {
        std::istringstream is("rssi_level,mmbs,beam,speed,direction,action_mmbs,action_beam,q_value\n");
        EXPECT_THROW(read_snapshot(is), std::runtime_error);
    }
    {
        std::istringstream is("# dims=10,2,2,11\nrssi_level,mmbs,beam,speed,direction,action_mmbs,action_beam,"
                              "q_value\n1,1,1,1,0,1,1\n");
        EXPECT_THROW(read_snapshot(is), std::runtime_error);
    }
    {
        std::istringstream is("# dims=10,2,2,11\nrssi_level,mmbs,beam,speed,direction,action_mmbs,action_beam,"
                              "q_value\n1,3,1,1,0,1,1,0.5\n");
        EXPECT_THROW(read_snapshot(is), std::runtime_error);
    }
}
