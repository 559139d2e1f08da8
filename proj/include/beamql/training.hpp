#pragma once

// Training loops: vehicles on the road act as learners writing one shared
// table, either driven by the event-serial world or by a pool of workers.

#include "beamql/env_model.hpp"
#include "beamql/finite_mdp.hpp"
#include "beamql/rl_core.hpp"
#include "beamql/smdp.hpp"

#include <algorithm>
#include <atomic>
#include <condition_variable>
#include <cstdint>
#include <cstdlib>
#include <deque>
#include <functional>
#include <limits>
#include <mutex>
#include <optional>
#include <queue>
#include <set>
#include <stdexcept>
#include <string>
#include <thread>
#include <vector>

namespace beamql
{
    enum class ExecutionMode
    {
        EventSerial,
        Concurrent,
    };

    struct StopCondition
    {
        std::optional<std::uint64_t> max_updates;
        std::optional<double> max_sim_time_s;

        static StopCondition updates(std::uint64_t n) { return StopCondition{n, std::nullopt}; }
        static StopCondition sim_time(double s) { return StopCondition{std::nullopt, s}; }
    };

    struct TrainingOptions
    {
        ExecutionMode mode = ExecutionMode::EventSerial;
        std::optional<std::size_t> learner_cap; // nullopt: every vehicle learns
        StopCondition stop = StopCondition::updates(10000);
        std::uint64_t seed = 1;
        std::uint64_t log_interval = 100;
        std::uint64_t log_window = 0; // 0: max(2000, update budget / 50)
        std::size_t workers = 0; // 0: BEAMQL_WORKERS or hardware concurrency
        // Epsilon horizon for time-limited runs, whose update count is not
        // known in advance.
        std::uint64_t nominal_update_budget = 2500000;
        // Called with the live table every checkpoint_interval updates
        // (event-serial mode only).
        std::uint64_t checkpoint_interval = 0;
        std::function<void(std::uint64_t, double, const QTable &)> on_checkpoint;
    };

    struct TrainingResult
    {
        QTable table;
        ConvergenceLog log;
        LearningSchedule schedule; // with the decay actually used
        std::uint64_t updates = 0;
        double sim_time_s = 0.0;
        std::uint64_t trips_completed = 0;
    };

    inline std::size_t resolve_workers(std::size_t requested)
    {
        if (requested > 0)
            return requested;
        if (const char *env = std::getenv("BEAMQL_WORKERS"))
        {
            const long v = std::strtol(env, nullptr, 10);
            if (v > 0)
                return static_cast<std::size_t>(v);
        }
        return std::max<std::size_t>(1, std::thread::hardware_concurrency());
    }

    inline std::uint64_t update_budget(const TrainingOptions &o)
    {
        return o.stop.max_updates ? *o.stop.max_updates : o.nominal_update_budget;
    }

    inline std::uint64_t resolve_log_window(const TrainingOptions &o)
    {
        return o.log_window > 0 ? o.log_window : std::max<std::uint64_t>(2000, update_budget(o) / 50);
    }

    inline LearningSchedule resolve_schedule(LearningSchedule s, const TrainingOptions &o)
    {
        if (s.epsilon_decay == 0.0 && s.epsilon_floor_at_updates == 0)
        {
            const std::uint64_t budget = update_budget(o);
            s.epsilon_floor_at_updates = std::max<std::uint64_t>(1, budget * 6 / 10);
        }
        s.epsilon_decay = s.decay_factor();
        return s;
    }

    inline void validate_training(const TrainingOptions &o)
    {
        if (o.stop.max_updates.has_value() == o.stop.max_sim_time_s.has_value())
            throw ConfigError("experiment.stop", "exactly one of max_updates and max_sim_time_s is required");
        if (o.stop.max_sim_time_s && !(*o.stop.max_sim_time_s > 0.0))
            throw ConfigError("experiment.stop.max_sim_time_s", "must be positive");
        if (o.learner_cap && *o.learner_cap == 0)
            throw ConfigError("experiment.learner_cap", "must be at least 1");
        if (o.log_interval == 0)
            throw ConfigError("experiment.log_interval", "must be positive");
        if (o.on_checkpoint && o.mode == ExecutionMode::Concurrent)
            throw std::invalid_argument("checkpoints require event-serial mode");
    }

    // Moving average of delivered Gbit over elapsed epoch time.
    class ConvergenceRecorder
    {
    public:
        ConvergenceRecorder(std::uint64_t interval, std::uint64_t window) : interval_(interval), window_(window) {}

        void record(std::uint64_t updates, double time_s, double reward, double duration, double epsilon)
        {
            recent_.emplace_back(reward, duration);
            sum_r_ += reward;
            sum_t_ += duration;
            if (recent_.size() > window_)
            {
                sum_r_ -= recent_.front().first;
                sum_t_ -= recent_.front().second;
                recent_.pop_front();
            }
            if (updates % interval_ == 0)
            {
                // Recompute to keep the running sums from drifting.
                double r = 0.0;
                double t = 0.0;
                for (const auto &[a, b] : recent_)
                {
                    r += a;
                    t += b;
                }
                sum_r_ = r;
                sum_t_ = t;
                log_.entries.push_back(ConvergenceEntry{updates, time_s, t > 0.0 ? r / t : 0.0, epsilon});
            }
        }

        ConvergenceLog take(double decay)
        {
            log_.epsilon_decay = decay;
            return std::move(log_);
        }

    private:
        std::uint64_t interval_;
        std::uint64_t window_;
        std::deque<std::pair<double, double>> recent_;
        double sum_r_ = 0.0;
        double sum_t_ = 0.0;
        ConvergenceLog log_;
    };

    namespace detail
    {
        inline KeyedStream exploration_stream(std::uint64_t seed, const VehicleState &v)
        {
            return keyed_stream(seed, DrawKind::Exploration,
                                {v.vehicle_id, static_cast<std::uint64_t>(v.epoch_index)});
        }

        inline void learn(QTable &table, const Scenario &s, const VehicleState &before, const TransitionSample &t,
                          const LearningSchedule &schedule)
        {
            static const std::vector<BeamId> none;
            const auto nz = next_zone(s, before.zone_index, before.direction);
            const std::vector<BeamId> &next = nz ? available_actions(s, *nz) : none;
            q_update(table, t, next, schedule);
        }

        inline TrainingResult train_serial(const Scenario &s, const LearningSchedule &schedule,
                                           const TrainingOptions &o)
        {
            TrainingResult res{QTable(s), {}, schedule, 0, 0.0, 0};
            ConvergenceRecorder rec(o.log_interval, resolve_log_window(o));
            WorldOptions wo;
            if (o.learner_cap)
                wo.max_active = *o.learner_cap;
            if (o.stop.max_sim_time_s)
                wo.arrival_horizon_s = *o.stop.max_sim_time_s;
            World world(s, o.seed, wo);

            for (;;)
            {
                if (o.stop.max_updates && res.updates >= *o.stop.max_updates)
                    break;
                const auto ev = world.advance_clock();
                if (!ev)
                    break;
                if (o.stop.max_sim_time_s && ev->timestamp_s > *o.stop.max_sim_time_s)
                    break;
                res.sim_time_s = ev->timestamp_s;
                if (!ev->is_decision())
                {
                    ++res.trips_completed;
                    continue;
                }
                const VehicleState before = world.vehicle(ev->vehicle_id);
                const auto &available = available_actions(s, before.zone_index);
                const double eps = schedule.epsilon_at(res.updates);
                auto xr = exploration_stream(o.seed, before);
                const BeamId a = select_action(res.table, before.system_state(), available, eps, xr);
                const TransitionSample t = world.act(ev->vehicle_id, a);
                learn(res.table, s, before, t, schedule);
                ++res.updates;
                rec.record(res.updates, ev->timestamp_s, t.reward_gbit, t.epoch_duration_s, eps);
                if (o.on_checkpoint && o.checkpoint_interval > 0 && res.updates % o.checkpoint_interval == 0)
                    o.on_checkpoint(res.updates, ev->timestamp_s, res.table);
            }
            if (o.stop.max_sim_time_s)
                res.sim_time_s = *o.stop.max_sim_time_s;
            res.log = rec.take(schedule.decay_factor());
            return res;
        }

        struct PlannedTrip
        {
            std::uint64_t id = 0;
            double spawn_s = 0.0;
            double departure_s = 0.0;
        };

        // Generates admitted trips in spawn order, replaying the arrival and
        // admission rules of World.
        class TripPlanner
        {
        public:
            TripPlanner(const Scenario &s, std::uint64_t seed, std::optional<std::size_t> cap, double horizon)
                : s_(&s), seed_(seed), cap_(cap), horizon_(horizon), tick_(arrival_tick_length(s))
            {
            }

            std::optional<PlannedTrip> next()
            {
                if (!(s_->arrival_prob > 0.0))
                    return std::nullopt;
                for (;;)
                {
                    const std::uint64_t j = tick_index_++;
                    const double t = static_cast<double>(j) * tick_;
                    if (t > horizon_)
                        return std::nullopt;
                    auto rng = keyed_stream(seed_, DrawKind::Arrival, {j});
                    if (!(uniform01(rng) < s_->arrival_prob))
                        continue;
                    const std::uint64_t id = next_id_++;
                    // A departure at the same instant as a tick is processed after it.
                    while (!active_.empty() && active_.top() < t)
                        active_.pop();
                    if (cap_ && active_.size() >= *cap_)
                        continue;
                    const double dep = departure_time(*s_, seed_, id, t);
                    active_.push(dep);
                    return PlannedTrip{id, t, dep};
                }
            }

        private:
            const Scenario *s_;
            std::uint64_t seed_;
            std::optional<std::size_t> cap_;
            double horizon_;
            double tick_;
            std::uint64_t tick_index_ = 0;
            std::uint64_t next_id_ = 1;
            std::priority_queue<double, std::vector<double>, std::greater<>> active_;
        };

        struct UpdateRecord
        {
            std::uint64_t ticket;
            double time_s;
            double reward;
            double duration;
            double epsilon;
        };

        inline TrainingResult train_concurrent(const Scenario &s, const LearningSchedule &schedule,
                                               const TrainingOptions &o)
        {
            TrainingResult res{QTable(s), {}, schedule, 0, 0.0, 0};
            const double horizon =
                o.stop.max_sim_time_s ? *o.stop.max_sim_time_s : std::numeric_limits<double>::infinity();
            const std::uint64_t max_updates =
                o.stop.max_updates ? *o.stop.max_updates : std::numeric_limits<std::uint64_t>::max();

            TripPlanner planner(s, o.seed, o.learner_cap, horizon);
            std::mutex mu;
            std::condition_variable cv;
            std::multiset<double> in_flight; // departure times of dispatched, unfinished trips
            std::atomic<std::uint64_t> tickets{0};
            std::atomic<bool> stop{false};
            std::atomic<std::uint64_t> trips_done{0};
            std::vector<std::vector<UpdateRecord>> records(resolve_workers(o.workers));

            auto worker = [&](std::size_t w) {
                for (;;)
                {
                    PlannedTrip trip;
                    {
                        std::unique_lock lock(mu);
                        if (stop.load())
                            return;
                        const auto next = planner.next();
                        if (!next)
                            return;
                        trip = *next;
                        in_flight.insert(trip.departure_s);
                        // Wait for every trip that ends no later than this one starts.
                        cv.wait(lock, [&] { return stop.load() || *in_flight.begin() > trip.spawn_s; });
                    }
                    std::uint64_t ticket = 0;
                    double eps = 0.0;
                    const TripRun run = run_trip(
                        s, o.seed, trip.id, trip.spawn_s,
                        [&](const VehicleState &v, double t) -> std::optional<BeamId> {
                            if (stop.load(std::memory_order_relaxed) || t > horizon)
                                return std::nullopt;
                            ticket = tickets.fetch_add(1);
                            if (ticket >= max_updates)
                            {
                                stop.store(true);
                                return std::nullopt;
                            }
                            eps = schedule.epsilon_at(ticket);
                            auto xr = exploration_stream(o.seed, v);
                            return select_action(res.table, v.system_state(), available_actions(s, v.zone_index),
                                                 eps, xr);
                        },
                        [&](const TransitionSample &t, double time) {
                            VehicleState before;
                            before.zone_index = t.zone_index;
                            before.direction = t.state.direction;
                            learn(res.table, s, before, t, schedule);
                            records[w].push_back(UpdateRecord{ticket, time, t.reward_gbit, t.epoch_duration_s, eps});
                        });
                    {
                        std::lock_guard lock(mu);
                        in_flight.erase(in_flight.find(trip.departure_s));
                        if (run.completed && trip.departure_s <= horizon)
                            trips_done.fetch_add(1);
                    }
                    cv.notify_all();
                }
            };

            std::vector<std::thread> pool;
            for (std::size_t w = 0; w < records.size(); ++w)
                pool.emplace_back(worker, w);
            for (auto &t : pool)
                t.join();

            std::vector<UpdateRecord> all;
            for (auto &r : records)
                all.insert(all.end(), r.begin(), r.end());
            std::sort(all.begin(), all.end(), [](const auto &a, const auto &b) { return a.ticket < b.ticket; });
            ConvergenceRecorder rec(o.log_interval, resolve_log_window(o));
            for (const auto &u : all)
            {
                rec.record(u.ticket + 1, u.time_s, u.reward, u.duration, u.epsilon);
                res.sim_time_s = std::max(res.sim_time_s, u.time_s);
            }
            res.updates = all.size();
            res.trips_completed = trips_done.load();
            if (o.stop.max_sim_time_s)
                res.sim_time_s = *o.stop.max_sim_time_s;
            res.log = rec.take(schedule.decay_factor());
            return res;
        }
    } // namespace detail

    inline TrainingResult run_training(const Scenario &scenario, const LearningSchedule &schedule,
                                       const TrainingOptions &options)
    {
        scenario.validate();
        schedule.validate();
        validate_training(options);
        const LearningSchedule resolved = resolve_schedule(schedule, options);
        if (options.stop.max_updates && *options.stop.max_updates == 0)
        {
            TrainingResult res{QTable(scenario), {}, resolved, 0, 0.0, 0};
            res.log.epsilon_decay = resolved.decay_factor();
            return res;
        }
        return options.mode == ExecutionMode::EventSerial ? detail::train_serial(scenario, resolved, options)
                                                          : detail::train_concurrent(scenario, resolved, options);
    }

    // -------------------------------------------------------------------------
    // Q-learning directly on an explicit model, sampling episodes from its
    // restart distribution.

    struct ModelTrainingOptions
    {
        std::uint64_t updates = 1000000;
        double epsilon = 1.0; // constant exploration
        std::uint64_t seed = 1;
        // Record the distance to a reference every this many updates (0: never).
        std::uint64_t trace_interval = 0;
    };

    struct ModelTrainingResult
    {
        QValues q;
        std::vector<std::pair<std::uint64_t, double>> distance_trace;
    };

    inline double max_distance(const QValues &q, const std::vector<std::vector<double>> &ref)
    {
        double d = 0.0;
        for (std::size_t s = 0; s < ref.size(); ++s)
            for (std::size_t a = 0; a < ref[s].size(); ++a)
                d = std::max(d, std::abs(q.get(s, a) - ref[s][a]));
        return d;
    }

    inline ModelTrainingResult train_on_model(const FiniteMdp &mdp, const LearningSchedule &schedule,
                                              const ModelTrainingOptions &o,
                                              const std::vector<std::vector<double>> *reference = nullptr)
    {
        mdp.validate();
        schedule.validate();
        if (mdp.restart.empty())
            throw std::invalid_argument("train_on_model: model has no restart distribution");
        ModelTrainingResult res{QValues(mdp.num_states(), mdp.max_actions()), {}};
        auto rng = keyed_stream(o.seed, DrawKind::ModelSampling, {});

        auto pick = [&](const auto &items, auto prob_of) -> std::size_t {
            const double u = uniform01(rng);
            double acc = 0.0;
            for (std::size_t i = 0; i < items.size(); ++i)
            {
                acc += prob_of(items[i]);
                if (u < acc)
                    return i;
            }
            return items.size() - 1;
        };
        auto restart = [&] {
            return mdp.restart[pick(mdp.restart, [](const auto &e) { return e.second; })].first;
        };

        int s = restart();
        std::vector<std::size_t> next_actions;
        for (std::uint64_t k = 0; k < o.updates; ++k)
        {
            const auto &acts = mdp.actions[static_cast<std::size_t>(s)];
            std::size_t a = 0;
            if (uniform01(rng) < o.epsilon)
            {
                a = uniform_index(rng, acts.size());
            }
            else
            {
                double best = -std::numeric_limits<double>::infinity();
                for (std::size_t i = 0; i < acts.size(); ++i)
                {
                    const double v = res.q.get(static_cast<std::size_t>(s), i);
                    if (v > best)
                    {
                        best = v;
                        a = i;
                    }
                }
            }
            const auto &outcomes = acts[a].outcomes;
            const MdpOutcome &out = outcomes[pick(outcomes, [](const MdpOutcome &x) { return x.prob; })];
            next_actions.clear();
            if (out.next >= 0)
            {
                for (std::size_t i = 0; i < mdp.actions[static_cast<std::size_t>(out.next)].size(); ++i)
                    next_actions.push_back(i);
            }
            q_update_cell(res.q, static_cast<std::size_t>(s), a, out.reward,
                          out.next >= 0 ? static_cast<std::size_t>(out.next) : 0, next_actions, schedule);
            s = out.next >= 0 ? out.next : restart();
            if (reference && o.trace_interval > 0 && (k + 1) % o.trace_interval == 0)
                res.distance_trace.emplace_back(k + 1, max_distance(res.q, *reference));
        }
        return res;
    }
} // namespace beamql
