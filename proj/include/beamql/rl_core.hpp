#pragma once

// Shared Q-table, learning schedules, the Q-update rule and greedy policy
// extraction.

#include "beamql/env_model.hpp"
#include "beamql/smdp.hpp"

#include <algorithm>
#include <atomic>
#include <charconv>
#include <cmath>
#include <cstdint>
#include <istream>
#include <limits>
#include <ostream>
#include <span>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

namespace beamql
{
    // Dense state x action value array. Cells are read and written through
    // std::atomic_ref so any number of threads may update it concurrently.
    class QValues
    {
    public:
        QValues() = default;
        QValues(std::size_t states, std::size_t actions)
            : states_(states), actions_(actions), values_(states * actions, 0.0), visits_(states * actions, 0)
        {
        }

        std::size_t num_states() const noexcept { return states_; }
        std::size_t num_actions() const noexcept { return actions_; }

        double get(std::size_t s, std::size_t a) const
        {
            return std::atomic_ref<double>(const_cast<double &>(values_[cell(s, a)])).load(std::memory_order_relaxed);
        }

        void set(std::size_t s, std::size_t a, double v)
        {
            std::atomic_ref<double>(values_[cell(s, a)]).store(v, std::memory_order_relaxed);
        }

        std::uint64_t visits(std::size_t s, std::size_t a) const
        {
            return std::atomic_ref<std::uint64_t>(const_cast<std::uint64_t &>(visits_[cell(s, a)]))
                .load(std::memory_order_relaxed);
        }

        // Returns the visit count before this visit.
        std::uint64_t add_visit(std::size_t s, std::size_t a)
        {
            return std::atomic_ref<std::uint64_t>(visits_[cell(s, a)]).fetch_add(1, std::memory_order_relaxed);
        }

        // Atomic read-modify-write of one cell: v <- f(v). f may be called
        // more than once under contention.
        template <class F>
        double modify(std::size_t s, std::size_t a, F &&f)
        {
            std::atomic_ref<double> ref(values_[cell(s, a)]);
            double expected = ref.load(std::memory_order_relaxed);
            double desired = f(expected);
            while (!ref.compare_exchange_weak(expected, desired, std::memory_order_relaxed))
            {
                desired = f(expected);
            }
            return desired;
        }

        const std::vector<double> &raw() const noexcept { return values_; }

        bool operator==(const QValues &o) const { return states_ == o.states_ && actions_ == o.actions_ && values_ == o.values_; }

    private:
        std::size_t cell(std::size_t s, std::size_t a) const
        {
            if (s >= states_ || a >= actions_)
            {
                throw std::out_of_range("QValues: index out of range");
            }
            return s * actions_ + a;
        }

        std::size_t states_ = 0;
        std::size_t actions_ = 0;
        std::vector<double> values_;
        std::vector<std::uint64_t> visits_;
    };

    struct QTableDims
    {
        int num_rssi_levels = 0;
        int num_mmbs = 0;
        int beams_per_mmbs = 0;
        int max_speed_mps = 0;

        static QTableDims of(const Scenario &s)
        {
            return QTableDims{s.num_rssi_levels, s.num_mmbs, s.beams_per_mmbs, s.max_speed_mps};
        }

        int beam_slots() const noexcept { return num_mmbs * beams_per_mmbs + 1; }
        std::size_t num_states() const noexcept
        {
            return static_cast<std::size_t>(num_rssi_levels) * static_cast<std::size_t>(beam_slots()) *
                   static_cast<std::size_t>(max_speed_mps + 1) * 2;
        }
        std::size_t num_actions() const noexcept { return static_cast<std::size_t>(beam_slots()); }

        int slot(BeamId b) const noexcept { return b.is_virtual() ? 0 : (b.mmbs - 1) * beams_per_mmbs + b.beam; }
        BeamId beam(int slot) const noexcept
        {
            return slot == 0 ? kNoBeam : BeamId{(slot - 1) / beams_per_mmbs + 1, (slot - 1) % beams_per_mmbs + 1};
        }

        bool valid(const SystemState &s) const noexcept
        {
            const bool beam_ok = s.beam.is_virtual() || (s.beam.mmbs >= 1 && s.beam.mmbs <= num_mmbs &&
                                                         s.beam.beam >= 1 && s.beam.beam <= beams_per_mmbs);
            return beam_ok && s.rssi_level >= 0 && s.rssi_level < num_rssi_levels && s.speed >= 0 &&
                   s.speed <= max_speed_mps && (s.direction == 0 || s.direction == 1);
        }

        std::size_t state_index(const SystemState &s) const
        {
            if (!valid(s))
            {
                throw std::out_of_range("QTable: state out of range");
            }
            const std::size_t l = static_cast<std::size_t>(s.rssi_level);
            const std::size_t b = static_cast<std::size_t>(slot(s.beam));
            const std::size_t v = static_cast<std::size_t>(s.speed);
            return ((l * static_cast<std::size_t>(beam_slots()) + b) * static_cast<std::size_t>(max_speed_mps + 1) +
                    v) * 2 + static_cast<std::size_t>(s.direction);
        }

        SystemState state_at(std::size_t index) const
        {
            SystemState s;
            s.direction = static_cast<int>(index % 2);
            index /= 2;
            s.speed = static_cast<int>(index % static_cast<std::size_t>(max_speed_mps + 1));
            index /= static_cast<std::size_t>(max_speed_mps + 1);
            s.beam = beam(static_cast<int>(index % static_cast<std::size_t>(beam_slots())));
            s.rssi_level = static_cast<int>(index / static_cast<std::size_t>(beam_slots()));
            return s;
        }

        bool operator==(const QTableDims &) const = default;
    };

    // The global table indexed by (SystemState, action beam).
    class QTable
    {
    public:
        QTable() = default;
        explicit QTable(const QTableDims &dims) : dims_(dims), values_(dims.num_states(), dims.num_actions()) {}
        explicit QTable(const Scenario &s) : QTable(QTableDims::of(s)) {}

        const QTableDims &dims() const noexcept { return dims_; }
        QValues &values() noexcept { return values_; }
        const QValues &values() const noexcept { return values_; }

        double q(const SystemState &s, BeamId a) const { return values_.get(dims_.state_index(s), action_index(a)); }
        void set(const SystemState &s, BeamId a, double v) { values_.set(dims_.state_index(s), action_index(a), v); }

        std::size_t action_index(BeamId a) const { return static_cast<std::size_t>(dims_.slot(a)); }

        bool operator==(const QTable &) const = default;

    private:
        QTableDims dims_;
        QValues values_;
    };

    struct LearningSchedule
    {
        double learning_rate = 0.1;
        double discount = 0.9;
        double epsilon_start = 1.0;
        double epsilon_floor = 0.01;
        // Per-update multiplicative decay. 0 means: derive it so that epsilon
        // reaches the floor after epsilon_floor_at_updates updates.
        double epsilon_decay = 0.0;
        std::uint64_t epsilon_floor_at_updates = 0;
        bool robbins_monro = false;
        double robbins_monro_c = 1.0;

        void validate() const
        {
            if (!(discount >= 0.0 && discount < 1.0))
                throw ConfigError("schedule.discount", "must lie in [0,1)");
            if (!(learning_rate > 0.0 && learning_rate < 1.0))
                throw ConfigError("schedule.learning_rate", "must lie in (0,1)");
            if (!(epsilon_floor >= 0.0 && epsilon_floor <= epsilon_start && epsilon_start <= 1.0))
                throw ConfigError("schedule.epsilon_floor", "need 0 <= epsilon_floor <= epsilon_start <= 1");
            if (!(epsilon_decay >= 0.0 && epsilon_decay <= 1.0))
                throw ConfigError("schedule.epsilon_decay", "must lie in [0,1] (0 = derived)");
            if (robbins_monro && !(robbins_monro_c > 0.0))
                throw ConfigError("schedule.robbins_monro_c", "must be positive");
        }

        double decay_factor() const
        {
            if (epsilon_decay > 0.0)
                return epsilon_decay;
            if (epsilon_floor_at_updates == 0 || epsilon_floor <= 0.0 || epsilon_floor >= epsilon_start)
                return 1.0;
            return std::pow(epsilon_floor / epsilon_start, 1.0 / static_cast<double>(epsilon_floor_at_updates));
        }

        // Exploration rate for the k-th global update (k counted from 0).
        double epsilon_at(std::uint64_t k) const
        {
            return std::max(epsilon_floor, epsilon_start * std::pow(decay_factor(), static_cast<double>(k)));
        }

        // Step size for the (n+1)-th visit of a state-action cell.
        double step_size(std::uint64_t prior_visits) const
        {
            if (!robbins_monro)
                return learning_rate;
            return robbins_monro_c / (robbins_monro_c + static_cast<double>(prior_visits));
        }
    };

    // One Q-learning step on a generic value array. An empty `next_actions`
    // marks a terminal transition (no bootstrap).
    inline double q_update_cell(QValues &q, std::size_t s, std::size_t a, double reward, std::size_t next_s,
                                std::span<const std::size_t> next_actions, const LearningSchedule &schedule)
    {
        double best_next = 0.0;
        if (!next_actions.empty())
        {
            best_next = -std::numeric_limits<double>::infinity();
            for (std::size_t na : next_actions)
            {
                best_next = std::max(best_next, q.get(next_s, na));
            }
        }
        const double target = reward + schedule.discount * best_next;
        const double tau = schedule.step_size(q.add_visit(s, a));
        return q.modify(s, a, [&](double old) { return old + tau * (target - old); });
    }

    inline double q_update(QTable &table, const TransitionSample &sample, std::span<const BeamId> next_available,
                           const LearningSchedule &schedule)
    {
        const QTableDims &d = table.dims();
        const std::size_t s = d.state_index(sample.state);
        const std::size_t a = table.action_index(sample.action);
        std::size_t next_s = 0;
        std::vector<std::size_t> next_actions;
        if (!next_available.empty())
        {
            next_s = d.state_index(sample.next_state);
            next_actions.reserve(next_available.size());
            for (BeamId b : next_available)
            {
                next_actions.push_back(table.action_index(b));
            }
        }
        return q_update_cell(table.values(), s, a, sample.reward_gbit, next_s, next_actions, schedule);
    }

    // Greedy choice among `available` (already in action order); the first
    // maximum wins.
    inline BeamId greedy_action(const QTable &table, const SystemState &state, std::span<const BeamId> available)
    {
        const std::size_t s = table.dims().state_index(state);
        BeamId best = available.front();
        double best_q = -std::numeric_limits<double>::infinity();
        for (BeamId b : available)
        {
            const double v = table.values().get(s, table.action_index(b));
            if (v > best_q)
            {
                best_q = v;
                best = b;
            }
        }
        return best;
    }

    template <class Rng>
    BeamId select_action(const QTable &table, const SystemState &state, std::span<const BeamId> available,
                         double epsilon, Rng &rng)
    {
        if (available.empty())
        {
            throw std::invalid_argument("select_action: no available actions");
        }
        if (uniform01(rng) < epsilon)
        {
            return available[uniform_index(rng, available.size())];
        }
        return greedy_action(table, state, available);
    }

    // Greedy action for every table state.
    struct GreedyPolicy
    {
        QTableDims dims;
        std::vector<BeamId> actions; // indexed by QTableDims::state_index

        BeamId at(const SystemState &s) const { return actions.at(dims.state_index(s)); }
    };

    // Zones where a decision can be made while in state `s`: right after
    // leaving a zone covered by s.beam. The virtual beam can be held anywhere.
    inline std::vector<int> realizable_zones(const Scenario &scenario, const SystemState &s)
    {
        std::vector<int> zones;
        for (int z = 0; z < scenario.num_zones(); ++z)
        {
            if (s.beam.is_virtual())
            {
                zones.push_back(z);
                continue;
            }
            const int prev = z + (s.direction == 0 ? -1 : 1);
            if (prev >= 0 && prev < scenario.num_zones() && scenario.profile(s.beam).covers(prev))
            {
                zones.push_back(z);
            }
        }
        return zones;
    }

    inline GreedyPolicy extract_policy(const QTable &table, const Scenario &scenario)
    {
        GreedyPolicy p;
        p.dims = table.dims();
        if (!(p.dims == QTableDims::of(scenario)))
        {
            throw std::invalid_argument("extract_policy: table shape does not match scenario");
        }
        const std::size_t n = p.dims.num_states();
        p.actions.assign(n, kNoBeam);

        // Candidate sets depend only on (beam, direction).
        const int slots = p.dims.beam_slots();
        std::vector<std::vector<BeamId>> candidates(static_cast<std::size_t>(slots) * 2);
        for (int slot = 0; slot < slots; ++slot)
        {
            for (int d = 0; d < 2; ++d)
            {
                SystemState probe{0, p.dims.beam(slot), 0, d};
                std::vector<BeamId> c;
                for (int z : realizable_zones(scenario, probe))
                {
                    const auto &avail = available_actions(scenario, z);
                    c.insert(c.end(), avail.begin(), avail.end());
                }
                std::sort(c.begin(), c.end(), action_order_less);
                c.erase(std::unique(c.begin(), c.end()), c.end());
                candidates[static_cast<std::size_t>(slot * 2 + d)] = std::move(c);
            }
        }
        for (std::size_t i = 0; i < n; ++i)
        {
            const SystemState s = p.dims.state_at(i);
            const auto &c = candidates[static_cast<std::size_t>(p.dims.slot(s.beam) * 2 + s.direction)];
            p.actions[i] = c.empty() ? kNoBeam : greedy_action(table, s, c);
        }
        return p;
    }

    // -------------------------------------------------------------------------
    // Convergence log.

    struct ConvergenceEntry
    {
        std::uint64_t updates = 0;
        double sim_time_s = 0.0;
        double avg_reward_gbps = 0.0;
        double epsilon = 0.0;
    };

    struct ConvergenceLog
    {
        double epsilon_decay = 1.0;
        std::vector<ConvergenceEntry> entries;

        void write_csv(std::ostream &os) const;
    };

    namespace detail
    {
        inline std::string shortest(double v)
        {
            char buf[64];
            const auto r = std::to_chars(buf, buf + sizeof buf, v);
            return std::string(buf, r.ptr);
        }

        inline std::string fixed6(double v)
        {
            char buf[64];
            const auto r = std::to_chars(buf, buf + sizeof buf, v, std::chars_format::fixed, 6);
            return std::string(buf, r.ptr);
        }

        inline double parse_double(std::string_view s, const std::string &what)
        {
            double v = 0.0;
            const auto r = std::from_chars(s.data(), s.data() + s.size(), v);
            if (r.ec != std::errc{} || r.ptr != s.data() + s.size())
            {
                throw std::runtime_error(what + ": cannot parse number '" + std::string(s) + "'");
            }
            return v;
        }

        inline long long parse_int(std::string_view s, const std::string &what)
        {
            long long v = 0;
            const auto r = std::from_chars(s.data(), s.data() + s.size(), v);
            if (r.ec != std::errc{} || r.ptr != s.data() + s.size())
            {
                throw std::runtime_error(what + ": cannot parse integer '" + std::string(s) + "'");
            }
            return v;
        }

        inline std::vector<std::string_view> split(std::string_view line, char sep)
        {
            std::vector<std::string_view> out;
            std::size_t start = 0;
            for (;;)
            {
                const std::size_t pos = line.find(sep, start);
                out.push_back(line.substr(start, pos == std::string_view::npos ? std::string_view::npos : pos - start));
                if (pos == std::string_view::npos)
                    return out;
                start = pos + 1;
            }
        }
    } // namespace detail

    inline void ConvergenceLog::write_csv(std::ostream &os) const
    {
        os << "# epsilon_decay=" << detail::shortest(epsilon_decay) << '\n';
        os << "updates,sim_time_s,avg_reward_gbps,epsilon\n";
        for (const auto &e : entries)
        {
            os << e.updates << ',' << detail::fixed6(e.sim_time_s) << ',' << detail::fixed6(e.avg_reward_gbps) << ','
               << detail::fixed6(e.epsilon) << '\n';
        }
    }

    struct SettlingPoint
    {
        double final_value = 0.0;
        std::uint64_t updates = 0;
        double sim_time_s = 0.0;
    };

    // `final_value` is the mean of the last `tail_fraction` of entries; the
    // settling point is the first entry after which every entry stays at or
    // above `fraction` of it.
    inline SettlingPoint settling_point(const ConvergenceLog &log, double fraction = 0.95, double tail_fraction = 0.1)
    {
        if (log.entries.empty())
        {
            throw std::invalid_argument("settling_point: empty log");
        }
        const std::size_t n = log.entries.size();
        const std::size_t tail = std::max<std::size_t>(1, static_cast<std::size_t>(std::ceil(tail_fraction * n)));
        double sum = 0.0;
        for (std::size_t i = n - tail; i < n; ++i)
            sum += log.entries[i].avg_reward_gbps;
        SettlingPoint sp;
        sp.final_value = sum / static_cast<double>(tail);
        const double threshold = fraction * sp.final_value;
        std::size_t first = n - 1;
        for (std::size_t i = n; i-- > 0;)
        {
            if (log.entries[i].avg_reward_gbps < threshold)
                break;
            first = i;
        }
        sp.updates = log.entries[first].updates;
        sp.sim_time_s = log.entries[first].sim_time_s;
        return sp;
    }

    // -------------------------------------------------------------------------
    // Snapshot files.

    struct SnapshotMeta
    {
        std::string scenario_hash;
        std::string schedule;
        std::uint64_t updates = 0;
    };

    struct Snapshot
    {
        SnapshotMeta meta;
        QTable table;
    };

    inline constexpr const char *kSnapshotHeader = "rssi_level,mmbs,beam,speed,direction,action_mmbs,action_beam,q_value";

    inline std::string describe_schedule(const LearningSchedule &s)
    {
        std::ostringstream os;
        os << "learning_rate=" << detail::shortest(s.learning_rate) << " discount=" << detail::shortest(s.discount)
           << " epsilon_start=" << detail::shortest(s.epsilon_start)
           << " epsilon_floor=" << detail::shortest(s.epsilon_floor)
           << " epsilon_decay=" << detail::shortest(s.decay_factor())
           << " robbins_monro=" << (s.robbins_monro ? "true" : "false");
        if (s.robbins_monro)
            os << " robbins_monro_c=" << detail::shortest(s.robbins_monro_c);
        return os.str();
    }

    inline void write_snapshot(std::ostream &os, const QTable &table, const SnapshotMeta &meta)
    {
        const QTableDims &d = table.dims();
        os << "# scenario_hash=" << meta.scenario_hash << '\n';
        os << "# schedule=" << meta.schedule << '\n';
        os << "# updates=" << meta.updates << '\n';
        os << "# dims=" << d.num_rssi_levels << ',' << d.num_mmbs << ',' << d.beams_per_mmbs << ',' << d.max_speed_mps
           << '\n';
        os << kSnapshotHeader << '\n';
        const QValues &q = table.values();
        for (std::size_t s = 0; s < q.num_states(); ++s)
        {
            const SystemState st = d.state_at(s);
            for (std::size_t a = 0; a < q.num_actions(); ++a)
            {
                const double v = q.get(s, a);
                if (v == 0.0)
                    continue;
                const BeamId act = d.beam(static_cast<int>(a));
                os << st.rssi_level << ',' << st.beam.mmbs << ',' << st.beam.beam << ',' << st.speed << ','
                   << st.direction << ',' << act.mmbs << ',' << act.beam << ',' << detail::shortest(v) << '\n';
            }
        }
    }

    inline Snapshot read_snapshot(std::istream &is)
    {
        Snapshot snap;
        std::string line;
        bool have_dims = false;
        bool have_header = false;
        std::size_t line_no = 0;
        while (std::getline(is, line))
        {
            ++line_no;
            if (!line.empty() && line.back() == '\r')
                line.pop_back();
            const std::string where = "snapshot line " + std::to_string(line_no);
            if (line.empty())
                continue;
            if (line[0] == '#')
            {
                const std::string_view body = std::string_view(line).substr(line.size() > 1 && line[1] == ' ' ? 2 : 1);
                const std::size_t eq = body.find('=');
                if (eq == std::string_view::npos)
                    continue;
                const std::string_view key = body.substr(0, eq);
                const std::string_view value = body.substr(eq + 1);
                if (key == "scenario_hash")
                    snap.meta.scenario_hash = std::string(value);
                else if (key == "schedule")
                    snap.meta.schedule = std::string(value);
                else if (key == "updates")
                    snap.meta.updates = static_cast<std::uint64_t>(detail::parse_int(value, where));
                else if (key == "dims")
                {
                    const auto f = detail::split(value, ',');
                    if (f.size() != 4)
                        throw std::runtime_error(where + ": dims needs 4 fields");
                    QTableDims d{static_cast<int>(detail::parse_int(f[0], where)),
                                 static_cast<int>(detail::parse_int(f[1], where)),
                                 static_cast<int>(detail::parse_int(f[2], where)),
                                 static_cast<int>(detail::parse_int(f[3], where))};
                    if (d.num_rssi_levels < 1 || d.num_mmbs < 1 || d.beams_per_mmbs < 1 || d.max_speed_mps < 0)
                        throw std::runtime_error(where + ": invalid dims");
                    snap.table = QTable(d);
                    have_dims = true;
                }
                continue;
            }
            if (!have_header)
            {
                if (line != kSnapshotHeader)
                    throw std::runtime_error(where + ": expected header '" + kSnapshotHeader + "'");
                if (!have_dims)
                    throw std::runtime_error(where + ": dims metadata missing before header");
                have_header = true;
                continue;
            }
            const auto f = detail::split(line, ',');
            if (f.size() != 8)
                throw std::runtime_error(where + ": expected 8 fields");
            SystemState st{static_cast<int>(detail::parse_int(f[0], where)),
                           BeamId{static_cast<int>(detail::parse_int(f[1], where)),
                                  static_cast<int>(detail::parse_int(f[2], where))},
                           static_cast<int>(detail::parse_int(f[3], where)),
                           static_cast<int>(detail::parse_int(f[4], where))};
            const BeamId act{static_cast<int>(detail::parse_int(f[5], where)),
                             static_cast<int>(detail::parse_int(f[6], where))};
            const double v = detail::parse_double(f[7], where);
            const QTableDims &d = snap.table.dims();
            if (!d.valid(st) || !d.valid(SystemState{0, act, 0, 0}))
                throw std::runtime_error(where + ": index out of range");
            snap.table.set(st, act, v);
        }
        if (!have_header)
            throw std::runtime_error("snapshot: header line missing");
        return snap;
    }
} // namespace beamql
