#pragma once

// Trials, sweeps and their output files.

#include "beamql/config.hpp"
#include "beamql/env_model.hpp"
#include "beamql/exact_oracle.hpp"
#include "beamql/policies.hpp"
#include "beamql/rl_core.hpp"
#include "beamql/smdp.hpp"
#include "beamql/training.hpp"

#include <atomic>
#include <cstdint>
#include <exception>
#include <filesystem>
#include <fstream>
#include <mutex>
#include <optional>
#include <ostream>
#include <stdexcept>
#include <string>
#include <thread>
#include <vector>

namespace beamql
{
    struct MetricsRecord
    {
        std::uint64_t seed = 0;
        std::string sweep_param;
        std::string sweep_value;
        std::string policy;
        double avg_rate_gbps = 0.0;
        double handovers = 0.0;
        double disconn_prob = 0.0;
        std::uint64_t trips = 0;
        std::uint64_t updates = 0;
        double sim_time_s = 0.0;
    };

    inline constexpr const char *kMetricsHeader =
        "seed,sweep_param,sweep_value,policy,avg_rate_gbps,handovers,disconn_prob,trips,updates,sim_time_s";

    struct EvaluationTotals
    {
        double reward_gbit = 0.0;
        double duration_s = 0.0;
        double disconnected_s = 0.0;
        std::uint64_t handovers = 0;
        std::uint64_t trips = 0;
        std::uint64_t epochs = 0;

        void add(const TripSummary &t)
        {
            reward_gbit += t.reward_gbit;
            duration_s += t.duration_s;
            disconnected_s += t.disconnected_time_s;
            handovers += static_cast<std::uint64_t>(t.handovers);
            epochs += static_cast<std::uint64_t>(t.epochs);
            ++trips;
        }

        double avg_rate() const { return duration_s > 0.0 ? reward_gbit / duration_s : 0.0; }
        double disconnection() const { return duration_s > 0.0 ? disconnected_s / duration_s : 0.0; }
        double handovers_per_trip() const
        {
            return trips > 0 ? static_cast<double>(handovers) / static_cast<double>(trips) : 0.0;
        }
    };

    // Evaluation uses its own realizations, shared by every policy.
    inline std::uint64_t evaluation_seed(std::uint64_t seed) { return mix_key({seed, 0x6576616c756174ULL}); }

    // Plays one trip under a fixed policy, feeding it only the view its
    // privilege allows.
    template <BeamPolicy P>
    TripSummary policy_trip(const Scenario &s, std::uint64_t seed, std::uint64_t vehicle_id, const P &policy)
    {
        return run_trip(
                   s, seed, vehicle_id, 0.0,
                   [&](const VehicleState &v, double) -> std::optional<BeamId> {
                       auto probe = [&](BeamId b) {
                           auto rng = connection_stream(seed, vehicle_id, v.epoch_index, b);
                           return sample_connection(s, b, v.zone_index, rng);
                       };
                       return policy(observe<P::privilege>(s, v, probe));
                   },
                   [](const TransitionSample &, double) {})
            .summary;
    }

    template <BeamPolicy P>
    EvaluationTotals evaluate_policy(const Scenario &s, const P &policy, std::uint64_t seed, std::uint64_t trips)
    {
        EvaluationTotals totals;
        for (std::uint64_t id = 1; id <= trips; ++id)
            totals.add(policy_trip(s, seed, id, policy));
        return totals;
    }

    // -------------------------------------------------------------------------
    // Trials.

    struct TrialCell
    {
        PolicyKind policy = PolicyKind::ParallelQl;
        std::uint64_t seed = 1;
        std::optional<SweepParameter> sweep_param;
        SweepValue sweep_value;

        std::string name() const
        {
            std::string n = std::string(policy_name(policy)) + "_seed" + std::to_string(seed);
            if (sweep_param)
                n += std::string("_") + sweep_name(*sweep_param) + sweep_value.label();
            return n;
        }
    };

    struct TrialResult
    {
        TrialCell cell;
        MetricsRecord record;
        std::optional<TrainingResult> training;
    };

    inline TrainingOptions training_options(const ExperimentSettings &e, PolicyKind policy, std::uint64_t seed)
    {
        TrainingOptions o;
        o.mode = e.mode;
        o.learner_cap = policy == PolicyKind::Ql ? std::optional<std::size_t>(1) : e.learner_cap;
        o.stop = e.stop;
        o.seed = seed;
        o.log_interval = e.log_interval;
        o.log_window = e.log_window;
        return o;
    }

    inline void apply_sweep(const Sweep &sw, const SweepValue &v, Scenario &s, ExperimentSettings &e)
    {
        switch (sw.parameter)
        {
        case SweepParameter::MeanSpeed:
            s.mean_speed_mps = static_cast<int>(v.number);
            break;
        case SweepParameter::HandoverTime:
            s.handover_time_s = v.number;
            break;
        case SweepParameter::ArrivalProb:
            s.arrival_prob = v.number;
            break;
        case SweepParameter::LearnerCap:
            e.learner_cap = v.unlimited ? std::nullopt : std::optional<std::size_t>(static_cast<std::size_t>(v.number));
            break;
        }
        s.validate();
    }

    inline TrialResult run_trial(const Scenario &base, const LearningSchedule &schedule,
                                 const ExperimentSettings &settings, const TrialCell &cell)
    {
        Scenario s = base;
        ExperimentSettings e = settings;
        if (cell.sweep_param)
        {
            if (!e.sweep)
                throw std::logic_error("run_trial: sweep cell without sweep block");
            apply_sweep(*e.sweep, cell.sweep_value, s, e);
        }

        TrialResult out;
        out.cell = cell;
        MetricsRecord &r = out.record;
        r.seed = cell.seed;
        r.policy = policy_name(cell.policy);
        if (cell.sweep_param)
        {
            r.sweep_param = sweep_name(*cell.sweep_param);
            r.sweep_value = cell.sweep_value.label();
        }

        const std::uint64_t eval_seed = evaluation_seed(cell.seed);
        EvaluationTotals totals;
        switch (cell.policy)
        {
        case PolicyKind::ParallelQl:
        case PolicyKind::Ql: {
            out.training = run_training(s, schedule, training_options(e, cell.policy, cell.seed));
            r.updates = out.training->updates;
            r.sim_time_s = out.training->sim_time_s;
            totals = evaluate_policy(s, TablePolicy{&out.training->table}, eval_seed, e.eval_trips);
            break;
        }
        case PolicyKind::MaxRate:
            totals = evaluate_policy(s, MaxRatePolicy{}, eval_seed, e.eval_trips);
            break;
        case PolicyKind::BlockageAware:
            totals = evaluate_policy(s, BlockageAwarePolicy{}, eval_seed, e.eval_trips);
            break;
        case PolicyKind::UpperBound:
            totals = evaluate_policy(s, UpperBoundPolicy{}, eval_seed, e.eval_trips);
            break;
        }
        if (totals.trips == 0)
            throw std::runtime_error("run_trial: no completed trips");
        r.avg_rate_gbps = totals.avg_rate();
        r.handovers = totals.handovers_per_trip();
        r.disconn_prob = totals.disconnection();
        r.trips = totals.trips;
        return out;
    }

    // Runs cells on `workers` threads; results keep the order of `cells`.
    inline std::vector<TrialResult> run_cells(const Scenario &s, const LearningSchedule &schedule,
                                              const ExperimentSettings &e, const std::vector<TrialCell> &cells,
                                              std::size_t workers)
    {
        std::vector<std::optional<TrialResult>> slots(cells.size());
        std::atomic<std::size_t> next{0};
        std::exception_ptr failure;
        std::mutex failure_mu;
        auto work = [&] {
            for (;;)
            {
                const std::size_t i = next.fetch_add(1);
                if (i >= cells.size())
                    return;
                try
                {
                    slots[i] = run_trial(s, schedule, e, cells[i]);
                }
                catch (...)
                {
                    std::lock_guard lock(failure_mu);
                    if (!failure)
                        failure = std::current_exception();
                    next.store(cells.size());
                }
            }
        };
        std::vector<std::thread> pool;
        for (std::size_t w = 1; w < std::max<std::size_t>(1, workers); ++w)
            pool.emplace_back(work);
        work();
        for (auto &t : pool)
            t.join();
        if (failure)
            std::rethrow_exception(failure);
        std::vector<TrialResult> out;
        out.reserve(cells.size());
        for (auto &r : slots)
            out.push_back(std::move(*r));
        return out;
    }

    inline std::vector<TrialCell> sweep_cells(const ExperimentSettings &e)
    {
        if (!e.sweep)
            throw ConfigError("experiment.sweep", "sweep block required");
        if (e.sweep->values.empty())
            throw ConfigError("experiment.sweep.values", "must not be empty");
        std::vector<TrialCell> cells;
        for (const auto &v : e.sweep->values)
            for (std::uint64_t seed : e.seeds)
                for (PolicyKind p : e.policies)
                    cells.push_back(TrialCell{p, seed, e.sweep->parameter, v});
        return cells;
    }

    inline std::vector<TrialCell> simulate_cells(const ExperimentSettings &e)
    {
        std::vector<TrialCell> cells;
        for (std::uint64_t seed : e.seeds)
            cells.push_back(TrialCell{e.policy, seed, std::nullopt, {}});
        return cells;
    }

    inline std::vector<TrialResult> run_sweep(const ExperimentConfig &c)
    {
        return run_cells(c.scenario(), c.schedule, c.experiment, sweep_cells(c.experiment), c.experiment.workers);
    }

    // -------------------------------------------------------------------------
    // Output files.

    inline void write_metrics_csv(std::ostream &os, const std::vector<MetricsRecord> &records)
    {
        os << kMetricsHeader << '\n';
        for (const auto &r : records)
        {
            os << r.seed << ',' << r.sweep_param << ',' << r.sweep_value << ',' << r.policy << ','
               << detail::fixed6(r.avg_rate_gbps) << ',' << detail::fixed6(r.handovers) << ','
               << detail::fixed6(r.disconn_prob) << ',' << r.trips << ',' << r.updates << ','
               << detail::fixed6(r.sim_time_s) << '\n';
        }
    }

    namespace detail
    {
        inline std::ofstream open_output(const std::filesystem::path &p)
        {
            std::ofstream f(p, std::ios::binary);
            if (!f)
                throw std::runtime_error("cannot write '" + p.string() + "'");
            return f;
        }

        inline void close_output(std::ofstream &f, const std::filesystem::path &p)
        {
            f.close();
            if (!f)
                throw std::runtime_error("error while writing '" + p.string() + "'");
        }
    } // namespace detail

    inline void write_outputs(const std::vector<TrialResult> &results, const Scenario &scenario,
                              const std::filesystem::path &out_dir)
    {
        std::error_code ec;
        std::filesystem::create_directories(out_dir, ec);
        if (ec)
            throw std::runtime_error("cannot create '" + out_dir.string() + "': " + ec.message());

        const std::string lock = scenario_lock_text(scenario);
        {
            const auto p = out_dir / "scenario.lock";
            auto f = detail::open_output(p);
            f << lock;
            detail::close_output(f, p);
        }
        {
            std::vector<MetricsRecord> records;
            for (const auto &r : results)
                records.push_back(r.record);
            const auto p = out_dir / "metrics.csv";
            auto f = detail::open_output(p);
            write_metrics_csv(f, records);
            detail::close_output(f, p);
        }
        const std::string hash = fnv1a_hex(lock);
        for (const auto &r : results)
        {
            if (!r.training)
                continue;
            const std::string cell = r.cell.name();
            {
                const auto p = out_dir / ("convergence_" + cell + ".csv");
                auto f = detail::open_output(p);
                r.training->log.write_csv(f);
                detail::close_output(f, p);
            }
            {
                const auto p = out_dir / ("qtable_" + cell + ".snapshot");
                auto f = detail::open_output(p);
                write_snapshot(f, r.training->table,
                               SnapshotMeta{hash, describe_schedule(r.training->schedule), r.training->updates});
                detail::close_output(f, p);
            }
        }
    }

    // -------------------------------------------------------------------------
    // Simulated long-run rate of a policy the oracle can evaluate.

    inline EvaluationTotals simulate_oracle_policy(const Scenario &s, const OraclePolicy &policy,
                                                   std::uint64_t min_epochs, std::uint64_t seed)
    {
        EvaluationTotals totals;
        auto trip = [&](std::uint64_t id) -> TripSummary {
            return std::visit(
                [&](const auto &p) -> TripSummary {
                    using P = std::decay_t<decltype(p)>;
                    if constexpr (std::is_same_v<P, UniformRandomOracle>)
                    {
                        return run_trip(
                                   s, seed, id, 0.0,
                                   [&](const VehicleState &v, double) -> std::optional<BeamId> {
                                       const auto &a = available_actions(s, v.zone_index);
                                       auto rng = keyed_stream(seed, DrawKind::Exploration,
                                                               {id, static_cast<std::uint64_t>(v.epoch_index)});
                                       return a[uniform_index(rng, a.size())];
                                   },
                                   [](const TransitionSample &, double) {})
                            .summary;
                    }
                    else if constexpr (std::is_same_v<P, FixedActionOracle>)
                    {
                        return run_trip(
                                   s, seed, id, 0.0,
                                   [&](const VehicleState &v, double) -> std::optional<BeamId> {
                                       const auto &a = available_actions(s, v.zone_index);
                                       return std::find(a.begin(), a.end(), p.action) != a.end() ? p.action
                                                                                                  : kNoBeam;
                                   },
                                   [](const TransitionSample &, double) {})
                            .summary;
                    }
                    else if constexpr (std::is_same_v<P, TableOracle>)
                    {
                        return policy_trip(s, seed, id, TablePolicy{p.table});
                    }
                    else
                    {
                        return policy_trip(s, seed, id, p);
                    }
                },
                policy);
        };
        for (std::uint64_t id = 1; totals.epochs < min_epochs; ++id)
            totals.add(trip(id));
        return totals;
    }
} // namespace beamql
