#pragma once

// Reference beam association policies and the observations they may see.

#include "beamql/env_model.hpp"
#include "beamql/rl_core.hpp"
#include "beamql/smdp.hpp"

#include <span>
#include <stdexcept>
#include <string>
#include <vector>

namespace beamql
{
    enum class ObservationPrivilege
    {
        RealizedRates,
        BlockageProbs,
        None,
    };

    inline const char *to_string(ObservationPrivilege p)
    {
        switch (p)
        {
        case ObservationPrivilege::RealizedRates:
            return "realized_rates";
        case ObservationPrivilege::BlockageProbs:
            return "blockage_probs";
        case ObservationPrivilege::None:
            return "none";
        }
        return "?";
    }

    struct RealizedBeam
    {
        BeamId id;
        int rssi_level = 0;
        double rate_gbps = 0.0;
    };

    struct BeamBlockage
    {
        BeamId id;
        double blockage_prob = 0.0;
    };

    struct UpperBoundCandidate
    {
        BeamId id;
        double rate_gbps = 0.0;
        bool is_new_mmbs = false;
    };

    // Highest realized level; the first maximum in action order wins, except
    // that when nothing is received the vehicle stays unconnected.
    inline BeamId max_rate_action(std::span<const RealizedBeam> realized)
    {
        if (realized.empty())
            throw std::invalid_argument("max_rate_action: empty candidate list");
        const RealizedBeam *best = nullptr;
        for (const auto &r : realized)
        {
            if (r.rssi_level > 0 &&
                (!best || r.rssi_level > best->rssi_level ||
                 (r.rssi_level == best->rssi_level && action_order_less(r.id, best->id))))
            {
                best = &r;
            }
        }
        if (best)
            return best->id;
        for (const auto &r : realized)
            if (r.id.is_virtual())
                return r.id;
        BeamId first = realized.front().id;
        for (const auto &r : realized)
            if (action_order_less(r.id, first))
                first = r.id;
        return first;
    }

    inline BeamId blockage_aware_action(std::span<const BeamBlockage> probs)
    {
        if (probs.empty())
            throw std::invalid_argument("blockage_aware_action: empty candidate list");
        const BeamBlockage *best = nullptr;
        for (const auto &p : probs)
        {
            if (p.id.is_virtual())
                continue;
            if (!best || p.blockage_prob < best->blockage_prob ||
                (p.blockage_prob == best->blockage_prob && p.id < best->id))
            {
                best = &p;
            }
        }
        return best ? best->id : kNoBeam;
    }

    inline double one_epoch_payoff(const UpperBoundCandidate &c, double epoch_s, double handover_s)
    {
        return c.is_new_mmbs ? c.rate_gbps * std::max(0.0, epoch_s - handover_s) : c.rate_gbps * epoch_s;
    }

    // Switches away from `current` only for a strictly larger one-epoch payoff.
    inline BeamId upper_bound_action(BeamId current, std::span<const UpperBoundCandidate> candidates, double epoch_s,
                                     double handover_s)
    {
        if (candidates.empty())
            throw std::invalid_argument("upper_bound_action: empty candidate list");
        const UpperBoundCandidate *best = nullptr;
        double best_payoff = 0.0;
        const UpperBoundCandidate *stay = nullptr;
        for (const auto &c : candidates)
        {
            const double v = one_epoch_payoff(c, epoch_s, handover_s);
            if (!best || v > best_payoff || (v == best_payoff && action_order_less(c.id, best->id)))
            {
                best = &c;
                best_payoff = v;
            }
            if (c.id == current)
                stay = &c;
        }
        if (stay && !(best_payoff > one_epoch_payoff(*stay, epoch_s, handover_s)))
            return stay->id;
        return best->id;
    }

    // -------------------------------------------------------------------------
    // Observations. A policy is called with exactly the view its privilege
    // names; the other views do not convert.

    struct RealizedRatesView
    {
        SystemState state;
        double epoch_s = 0.0;
        double handover_s = 0.0;
        std::vector<RealizedBeam> beams; // every available action, in action order
    };

    struct BlockageProbsView
    {
        SystemState state;
        std::vector<BeamBlockage> beams;
    };

    struct OwnStateView
    {
        SystemState state;
        std::span<const BeamId> available;
    };

    template <ObservationPrivilege P>
    struct ViewFor;
    template <>
    struct ViewFor<ObservationPrivilege::RealizedRates>
    {
        using type = RealizedRatesView;
    };
    template <>
    struct ViewFor<ObservationPrivilege::BlockageProbs>
    {
        using type = BlockageProbsView;
    };
    template <>
    struct ViewFor<ObservationPrivilege::None>
    {
        using type = OwnStateView;
    };

    template <class P>
    concept BeamPolicy = requires(const P &p, const typename ViewFor<P::privilege>::type &view) {
        { P::privilege } -> std::convertible_to<ObservationPrivilege>;
        { p(view) } -> std::same_as<BeamId>;
    };

    struct MaxRatePolicy
    {
        static constexpr ObservationPrivilege privilege = ObservationPrivilege::RealizedRates;
        static constexpr const char *name = "max_rate";

        BeamId operator()(const RealizedRatesView &v) const { return max_rate_action(v.beams); }
    };

    struct UpperBoundPolicy
    {
        static constexpr ObservationPrivilege privilege = ObservationPrivilege::RealizedRates;
        static constexpr const char *name = "upper_bound";

        BeamId operator()(const RealizedRatesView &v) const
        {
            std::vector<UpperBoundCandidate> c;
            c.reserve(v.beams.size());
            for (const auto &b : v.beams)
                c.push_back(UpperBoundCandidate{b.id, b.rate_gbps, is_handover(v.state.beam, b.id)});
            return upper_bound_action(v.state.beam, c, v.epoch_s, v.handover_s);
        }
    };

    struct BlockageAwarePolicy
    {
        static constexpr ObservationPrivilege privilege = ObservationPrivilege::BlockageProbs;
        static constexpr const char *name = "blockage_aware";

        BeamId operator()(const BlockageProbsView &v) const { return blockage_aware_action(v.beams); }
    };

    // Frozen greedy policy of a learned table.
    struct TablePolicy
    {
        static constexpr ObservationPrivilege privilege = ObservationPrivilege::None;
        static constexpr const char *name = "parallel_ql";

        const QTable *table = nullptr;

        BeamId operator()(const OwnStateView &v) const { return greedy_action(*table, v.state, v.available); }
    };

    // Builds the view a policy is entitled to for the vehicle's current epoch.
    // `probe(beam)` returns this epoch's realization of a beam and is only
    // called for the RealizedRates privilege.
    template <ObservationPrivilege P, class Probe>
    typename ViewFor<P>::type observe(const Scenario &s, const VehicleState &v, Probe &&probe)
    {
        const auto &available = available_actions(s, v.zone_index);
        if constexpr (P == ObservationPrivilege::RealizedRates)
        {
            RealizedRatesView view{v.system_state(), epoch_duration(s, v.speed_mps), s.handover_time_s, {}};
            view.beams.reserve(available.size());
            for (BeamId b : available)
            {
                const Connection c = probe(b);
                view.beams.push_back(RealizedBeam{b, c.rssi_level, c.rate_gbps});
            }
            return view;
        }
        else if constexpr (P == ObservationPrivilege::BlockageProbs)
        {
            BlockageProbsView view{v.system_state(), {}};
            view.beams.reserve(available.size());
            for (BeamId b : available)
                view.beams.push_back(BeamBlockage{b, b.is_virtual() ? 1.0 : s.profile(b).blockage_prob});
            return view;
        }
        else
        {
            return OwnStateView{v.system_state(), available};
        }
    }

    // Runtime counterpart of the compile-time check, used when policies are
    // wired by name.
    inline void require_privilege(const std::string &policy, ObservationPrivilege declared,
                                  ObservationPrivilege supplied)
    {
        if (declared != supplied)
        {
            throw std::logic_error("policy '" + policy + "' declares privilege " + to_string(declared) +
                                   " but was wired to " + to_string(supplied));
        }
    }
} // namespace beamql
