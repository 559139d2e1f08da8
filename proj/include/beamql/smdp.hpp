#pragma once

// Vehicle kinematics and the semi-Markov decision mechanics: a decision epoch
// starts whenever a vehicle enters a zone, lasts z / v seconds, and earns the
// data delivered over the beam chosen for it minus any handover interruption.

#include "beamql/env_model.hpp"
#include "beamql/rng.hpp"

#include <cassert>
#include <cstdint>
#include <limits>
#include <optional>
#include <queue>
#include <stdexcept>
#include <unordered_map>
#include <vector>

namespace beamql
{
    struct SystemState
    {
        int rssi_level = 0;
        BeamId beam = kNoBeam;
        int speed = 0;
        int direction = 0;

        bool operator==(const SystemState &) const = default;
    };

    struct VehicleState
    {
        std::uint64_t vehicle_id = 0;
        double position_m = 0.0; // boundary of the zone being entered
        int zone_index = 0;
        int direction = 0;  // 0: towards increasing position, 1: decreasing
        int speed_mps = 1;  // speed for the current epoch
        int next_speed_mps = 1;
        BeamId connected_beam = kNoBeam;
        int rssi_level = 0;
        double handover_residual_s = 0.0;
        double spawn_time_s = 0.0;
        int epoch_index = 0;

        SystemState system_state() const { return SystemState{rssi_level, connected_beam, speed_mps, direction}; }
    };

    struct TransitionSample
    {
        SystemState state;
        BeamId action;
        double reward_gbit = 0.0;
        SystemState next_state;
        double epoch_duration_s = 0.0;
        bool handover_occurred = false;
        double disconnected_time_s = 0.0;

        int zone_index = 0;
        bool terminal = false; // the vehicle leaves the road at the end of this epoch
        double connected_time_s = 0.0;
        double residual_after_s = 0.0;
        double rate_gbps = 0.0;
    };

    enum class EventKind
    {
        ZoneEntered,
        VehicleArrived,
        VehicleDeparted,
    };

    struct EpochEvent
    {
        double timestamp_s = 0.0;
        std::uint64_t vehicle_id = 0;
        EventKind kind = EventKind::ZoneEntered;

        bool is_decision() const noexcept { return kind != EventKind::VehicleDeparted; }
    };

    struct TripSummary
    {
        std::uint64_t vehicle_id = 0;
        int direction = 0;
        double spawn_time_s = 0.0;
        double duration_s = 0.0;
        double reward_gbit = 0.0;
        double connected_time_s = 0.0;
        double disconnected_time_s = 0.0;
        int handovers = 0;
        int epochs = 0;

        void add(const TransitionSample &t)
        {
            duration_s += t.epoch_duration_s;
            reward_gbit += t.reward_gbit;
            connected_time_s += t.epoch_duration_s - t.disconnected_time_s;
            disconnected_time_s += t.disconnected_time_s;
            handovers += t.handover_occurred ? 1 : 0;
            ++epochs;
        }
    };

    // ---------------------------------------------------------------------
    // Speed law: per-epoch speed uniform on {max(1, mean-2) .. min(vmax, mean+2)}.

    struct SpeedRange
    {
        int lo = 1;
        int hi = 1;

        int count() const noexcept { return hi - lo + 1; }
    };

    inline SpeedRange speed_range(const Scenario &s)
    {
        return SpeedRange{std::max(1, s.mean_speed_mps - 2), std::min(s.max_speed_mps, s.mean_speed_mps + 2)};
    }

    inline int epoch_speed(const Scenario &s, std::uint64_t seed, std::uint64_t vehicle_id, int epoch)
    {
        auto rng = keyed_stream(seed, DrawKind::Speed, {vehicle_id, static_cast<std::uint64_t>(epoch)});
        const SpeedRange r = speed_range(s);
        return uniform_int(rng, r.lo, r.hi);
    }

    inline int travel_direction(std::uint64_t seed, std::uint64_t vehicle_id)
    {
        auto rng = keyed_stream(seed, DrawKind::Direction, {vehicle_id});
        return static_cast<int>(uniform_index(rng, 2));
    }

    inline double epoch_duration(const Scenario &s, int speed_mps)
    {
        return s.zone_length_m / static_cast<double>(speed_mps);
    }

    inline double arrival_tick_length(const Scenario &s)
    {
        return s.zone_length_m / static_cast<double>(s.mean_speed_mps);
    }

    inline int entry_zone(const Scenario &s, int direction) { return direction == 0 ? 0 : s.num_zones() - 1; }

    // Next zone in the direction of travel, or nullopt when leaving the road.
    inline std::optional<int> next_zone(const Scenario &s, int zone, int direction)
    {
        const int z = zone + (direction == 0 ? 1 : -1);
        if (z < 0 || z >= s.num_zones())
        {
            return std::nullopt;
        }
        return z;
    }

    // Keyed stream for the realization of `beam` at one epoch of one vehicle.
    inline KeyedStream connection_stream(std::uint64_t seed, std::uint64_t vehicle_id, int epoch, BeamId beam)
    {
        return keyed_stream(seed, DrawKind::Connection,
                            {vehicle_id, static_cast<std::uint64_t>(epoch),
                             static_cast<std::uint64_t>(beam.mmbs) << 32 | static_cast<std::uint32_t>(beam.beam)});
    }

    // ---------------------------------------------------------------------
    // Reward accounting.

    inline const std::vector<BeamId> &available_actions(const Scenario &s, int zone_index)
    {
        return beams_covering(s, zone_index);
    }

    // Unfinished handover time survives only while the vehicle is still
    // inside the coverage of the beam it was switching to.
    inline double carried_residual(const Scenario &s, BeamId previous, double residual_s, int zone)
    {
        if (residual_s <= 0.0 || !beam_covers(s, previous, zone))
        {
            return 0.0;
        }
        return residual_s;
    }

    struct EpochTiming
    {
        double connected_s = 0.0;
        double residual_after_s = 0.0;
        bool handover = false;
    };

    // Connected time within an epoch of length `epoch_s` after choosing `action`
    // while associated with `previous`. A handover blocks h seconds on top of
    // any residual still pending; what does not fit in the epoch is carried.
    inline EpochTiming epoch_timing(BeamId previous, double carried_s, BeamId action, double epoch_s, double handover_s)
    {
        EpochTiming t;
        if (action.is_virtual())
        {
            return t;
        }
        double blocking = carried_s;
        if (is_handover(previous, action))
        {
            t.handover = true;
            blocking += handover_s;
        }
        t.connected_s = std::max(0.0, epoch_s - blocking);
        t.residual_after_s = std::min(handover_s, std::max(0.0, blocking - epoch_s));
        return t;
    }

    // One decision epoch for `vehicle` taking `action`. The caller provides
    // the stream used for the connection draw.
    template <class Rng>
    TransitionSample execute_action(const Scenario &s, const VehicleState &vehicle, BeamId action, Rng &rng)
    {
        assert(action.is_virtual() || beam_covers(s, action, vehicle.zone_index));

        TransitionSample t;
        t.state = vehicle.system_state();
        t.action = action;
        t.zone_index = vehicle.zone_index;
        t.epoch_duration_s = epoch_duration(s, vehicle.speed_mps);

        const Connection conn = sample_connection(s, action, vehicle.zone_index, rng);
        const double carried =
            carried_residual(s, vehicle.connected_beam, vehicle.handover_residual_s, vehicle.zone_index);
        const EpochTiming timing =
            epoch_timing(vehicle.connected_beam, carried, action, t.epoch_duration_s, s.handover_time_s);

        t.rate_gbps = conn.rate_gbps;
        t.handover_occurred = timing.handover;
        t.connected_time_s = conn.rate_gbps > 0.0 ? timing.connected_s : 0.0;
        t.reward_gbit = timing.connected_s * conn.rate_gbps;
        t.disconnected_time_s = t.epoch_duration_s - t.connected_time_s;
        t.residual_after_s = timing.residual_after_s;
        t.next_state = SystemState{conn.rssi_level, action, vehicle.next_speed_mps, vehicle.direction};
        t.terminal = !next_zone(s, vehicle.zone_index, vehicle.direction).has_value();
        return t;
    }

    // ---------------------------------------------------------------------
    // Vehicle lifecycle shared by World and run_trip.

    inline VehicleState spawn_vehicle(const Scenario &s, std::uint64_t seed, std::uint64_t id, double time)
    {
        VehicleState v;
        v.vehicle_id = id;
        v.direction = travel_direction(seed, id);
        v.zone_index = entry_zone(s, v.direction);
        v.position_m = v.direction == 0 ? 0.0 : s.road_length_m;
        v.spawn_time_s = time;
        v.epoch_index = 0;
        v.speed_mps = epoch_speed(s, seed, id, 0);
        v.next_speed_mps = epoch_speed(s, seed, id, 1);
        return v;
    }

    // Moves the vehicle into the next zone along its direction. The caller
    // checks that such a zone exists.
    inline void enter_next_zone(const Scenario &s, std::uint64_t seed, VehicleState &v)
    {
        v.zone_index = *next_zone(s, v.zone_index, v.direction);
        v.position_m = (v.direction == 0 ? v.zone_index : v.zone_index + 1) * s.zone_length_m;
        ++v.epoch_index;
        v.speed_mps = v.next_speed_mps;
        v.next_speed_mps = epoch_speed(s, seed, v.vehicle_id, v.epoch_index + 1);
    }

    inline void apply_transition(VehicleState &v, const TransitionSample &t)
    {
        v.connected_beam = t.action;
        v.rssi_level = t.next_state.rssi_level;
        v.handover_residual_s = t.residual_after_s;
    }

    // ---------------------------------------------------------------------
    // Event-serial world.

    struct WorldOptions
    {
        // Arrivals that would exceed this many vehicles on the road are dropped.
        std::size_t max_active = std::numeric_limits<std::size_t>::max();
        // No arrivals after this time.
        double arrival_horizon_s = std::numeric_limits<double>::infinity();
    };

    class World
    {
    public:
        World(const Scenario &scenario, std::uint64_t seed, WorldOptions options = {})
            : scenario_(&scenario), seed_(seed), options_(options), tick_length_(arrival_tick_length(scenario))
        {
            if (scenario.arrival_prob > 0.0)
            {
                queue_.push(Pending{0.0, kTickId, PendingKind::Tick});
            }
        }

        const Scenario &scenario() const noexcept { return *scenario_; }
        std::uint64_t seed() const noexcept { return seed_; }
        double now() const noexcept { return now_; }
        std::size_t active_vehicles() const noexcept { return vehicles_.size(); }
        std::uint64_t vehicles_spawned() const noexcept { return next_vehicle_id_ - 1; }
        bool decision_pending() const noexcept { return pending_decision_.has_value(); }

        // Time of the next event without popping it.
        std::optional<double> peek_time() const
        {
            if (queue_.empty())
                return std::nullopt;
            return queue_.top().time;
        }

        // Pops events until one is worth reporting. Decision events
        // (VehicleArrived, ZoneEntered) must be answered with act() before the
        // next call.
        std::optional<EpochEvent> advance_clock()
        {
            if (pending_decision_)
            {
                throw std::logic_error("World::advance_clock: previous decision epoch was not acted upon");
            }
            while (!queue_.empty())
            {
                const Pending ev = queue_.top();
                queue_.pop();
                now_ = ev.time;
                switch (ev.kind)
                {
                case PendingKind::Tick:
                    if (auto spawned = on_tick(ev.time))
                    {
                        return spawned;
                    }
                    break;
                case PendingKind::Crossing:
                    return on_crossing(ev);
                case PendingKind::Departure:
                    return on_departure(ev);
                }
            }
            return std::nullopt;
        }

        const VehicleState &vehicle(std::uint64_t id) const { return vehicles_.at(id).state; }
        const TripSummary &trip(std::uint64_t id) const { return vehicles_.at(id).trip; }

        // Summary of the most recently departed vehicle.
        const TripSummary &last_departed() const noexcept { return last_departed_; }

        // What `beam` would deliver to the vehicle in its current epoch. The
        // draw is identical to the one act() uses for the same beam.
        Connection probe(std::uint64_t id, BeamId beam) const
        {
            const VehicleState &v = vehicle(id);
            auto rng = connection_stream(seed_, id, v.epoch_index, beam);
            return sample_connection(*scenario_, beam, v.zone_index, rng);
        }

        TransitionSample act(std::uint64_t id, BeamId action)
        {
            if (!pending_decision_ || *pending_decision_ != id)
            {
                throw std::logic_error("World::act: vehicle has no pending decision");
            }
            pending_decision_.reset();
            Entry &e = vehicles_.at(id);
            VehicleState &v = e.state;
            auto rng = connection_stream(seed_, id, v.epoch_index, action);
            TransitionSample t = execute_action(*scenario_, v, action, rng);
            apply_transition(v, t);
            e.trip.add(t);
            return t;
        }

    private:
        static constexpr std::uint64_t kTickId = 0;

        enum class PendingKind
        {
            Tick,
            Crossing,
            Departure,
        };

        struct Pending
        {
            double time;
            std::uint64_t id;
            PendingKind kind;
        };

        struct Later
        {
            bool operator()(const Pending &a, const Pending &b) const noexcept
            {
                if (a.time != b.time)
                    return a.time > b.time;
                return a.id > b.id;
            }
        };

        struct Entry
        {
            VehicleState state;
            TripSummary trip;
        };

        void schedule_next(const VehicleState &v, double now)
        {
            const double t = now + epoch_duration(*scenario_, v.speed_mps);
            const bool leaving = !next_zone(*scenario_, v.zone_index, v.direction).has_value();
            queue_.push(Pending{t, v.vehicle_id, leaving ? PendingKind::Departure : PendingKind::Crossing});
        }

        std::optional<EpochEvent> on_tick(double time)
        {
            const std::uint64_t j = tick_index_++;
            if (scenario_->arrival_prob > 0.0)
            {
                const double next = static_cast<double>(tick_index_) * tick_length_;
                if (next <= options_.arrival_horizon_s)
                {
                    queue_.push(Pending{next, kTickId, PendingKind::Tick});
                }
            }
            auto rng = keyed_stream(seed_, DrawKind::Arrival, {j});
            if (!(uniform01(rng) < scenario_->arrival_prob))
            {
                return std::nullopt;
            }
            const std::uint64_t id = next_vehicle_id_++;
            if (vehicles_.size() >= options_.max_active)
            {
                return std::nullopt;
            }
            Entry e;
            e.state = spawn_vehicle(*scenario_, seed_, id, time);
            const VehicleState &v = e.state;
            e.trip.vehicle_id = id;
            e.trip.direction = v.direction;
            e.trip.spawn_time_s = time;
            schedule_next(v, time);
            vehicles_.emplace(id, e);
            pending_decision_ = id;
            return EpochEvent{time, id, EventKind::VehicleArrived};
        }

        EpochEvent on_crossing(const Pending &ev)
        {
            VehicleState &v = vehicles_.at(ev.id).state;
            enter_next_zone(*scenario_, seed_, v);
            schedule_next(v, ev.time);
            pending_decision_ = ev.id;
            return EpochEvent{ev.time, ev.id, EventKind::ZoneEntered};
        }

        EpochEvent on_departure(const Pending &ev)
        {
            auto it = vehicles_.find(ev.id);
            last_departed_ = it->second.trip;
            vehicles_.erase(it);
            return EpochEvent{ev.time, ev.id, EventKind::VehicleDeparted};
        }

        const Scenario *scenario_;
        std::uint64_t seed_;
        WorldOptions options_;
        double tick_length_;
        double now_ = 0.0;
        std::uint64_t tick_index_ = 0;
        std::uint64_t next_vehicle_id_ = 1;
        std::priority_queue<Pending, std::vector<Pending>, Later> queue_;
        std::unordered_map<std::uint64_t, Entry> vehicles_;
        std::optional<std::uint64_t> pending_decision_;
        TripSummary last_departed_;
    };

    // Spawn time and departure time of a vehicle are independent of the
    // actions taken, so the whole timeline can be computed up front. Uses the
    // same floating-point summation order as World.
    inline double departure_time(const Scenario &s, std::uint64_t seed, std::uint64_t vehicle_id, double spawn_time_s)
    {
        double t = spawn_time_s;
        for (int e = 0; e < s.num_zones(); ++e)
        {
            t = t + epoch_duration(s, epoch_speed(s, seed, vehicle_id, e));
        }
        return t;
    }

    struct TripRun
    {
        TripSummary summary;
        bool completed = false;
    };

    // Drives a single vehicle from spawn to departure on its own. Epoch times,
    // draws and samples are identical to what World produces for the same
    // vehicle. `choose(vehicle, time)` returns the action, or nullopt to stop
    // the trip early; `sink(sample, time)` sees every transition.
    template <class Chooser, class Sink>
    TripRun run_trip(const Scenario &s, std::uint64_t seed, std::uint64_t id, double spawn_time_s, Chooser &&choose,
                     Sink &&sink)
    {
        TripRun run;
        VehicleState v = spawn_vehicle(s, seed, id, spawn_time_s);
        run.summary.vehicle_id = id;
        run.summary.direction = v.direction;
        run.summary.spawn_time_s = spawn_time_s;
        double t = spawn_time_s;
        for (;;)
        {
            const std::optional<BeamId> action = choose(static_cast<const VehicleState &>(v), t);
            if (!action)
            {
                return run;
            }
            auto rng = connection_stream(seed, id, v.epoch_index, *action);
            const TransitionSample sample = execute_action(s, v, *action, rng);
            apply_transition(v, sample);
            run.summary.add(sample);
            sink(sample, t);
            t = t + sample.epoch_duration_s;
            if (sample.terminal)
            {
                run.completed = true;
                return run;
            }
            enter_next_zone(s, seed, v);
        }
    }
} // namespace beamql
