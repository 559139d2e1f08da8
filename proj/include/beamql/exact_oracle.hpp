#pragma once

// Exact models of small scenarios. The state is augmented with the zone and
// the pending handover residual so that the chain is Markov; trips renew at
// the spawn distribution when a vehicle leaves the road.

#include "beamql/env_model.hpp"
#include "beamql/finite_mdp.hpp"
#include "beamql/policies.hpp"
#include "beamql/rl_core.hpp"
#include "beamql/smdp.hpp"

#include <functional>
#include <map>
#include <stdexcept>
#include <string>
#include <tuple>
#include <variant>
#include <vector>

namespace beamql
{
    struct AugmentedState
    {
        int zone = 0;
        SystemState learner; // what the Q-table sees
        double residual_s = 0.0;

        auto key() const
        {
            return std::tuple(zone, learner.rssi_level, learner.beam, learner.speed, learner.direction, residual_s);
        }
        bool operator<(const AugmentedState &o) const { return key() < o.key(); }
        bool operator==(const AugmentedState &o) const { return key() == o.key(); }
    };

    inline constexpr std::size_t kDefaultStateCap = 5000;

    struct LevelProb
    {
        int level = 0;
        double prob = 0.0;
    };

    inline void require_exact_model(const Scenario &s)
    {
        if (s.rate_jitter)
            throw std::invalid_argument("exact oracle: rate jitter makes the rate map stochastic");
    }

    // Distribution of the realized level of `beam` in `zone`.
    inline std::vector<LevelProb> level_distribution(const Scenario &s, BeamId beam, int zone)
    {
        if (beam.is_virtual() || !s.profile(beam).covers(zone))
            return {LevelProb{0, 1.0}};
        const BeamProfile &p = s.profile(beam);
        std::vector<LevelProb> out;
        if (p.blockage_prob > 0.0)
            out.push_back(LevelProb{0, p.blockage_prob});
        const auto &dist = p.dist_at(zone);
        for (std::size_t j = 0; j < dist.size(); ++j)
        {
            const double pr = (1.0 - p.blockage_prob) * dist[j];
            if (pr > 0.0)
                out.push_back(LevelProb{static_cast<int>(j) + 1, pr});
        }
        return out;
    }

    // -------------------------------------------------------------------------
    // Policies the oracle can evaluate.

    struct UniformRandomOracle
    {
    };
    struct FixedActionOracle
    {
        BeamId action; // used where available, otherwise (0,0)
    };
    struct TableOracle
    {
        const QTable *table = nullptr;
    };

    using OraclePolicy =
        std::variant<UniformRandomOracle, BlockageAwarePolicy, MaxRatePolicy, UpperBoundPolicy, TableOracle,
                     FixedActionOracle>;

    struct ActionBranch
    {
        BeamId action;
        int level = 0;
        double prob = 0.0;
    };

    namespace detail
    {
        inline void add_branch(std::vector<ActionBranch> &out, BeamId a, int level, double prob)
        {
            for (auto &b : out)
            {
                if (b.action == a && b.level == level)
                {
                    b.prob += prob;
                    return;
                }
            }
            out.push_back(ActionBranch{a, level, prob});
        }

        inline std::vector<ActionBranch> branches_for(const Scenario &s, int zone, BeamId a, double prob)
        {
            std::vector<ActionBranch> out;
            for (const auto &lp : level_distribution(s, a, zone))
                out.push_back(ActionBranch{a, lp.level, prob * lp.prob});
            return out;
        }

        // Enumerates every joint realization of the available beams and lets
        // a clairvoyant policy pick from each.
        template <class Pick>
        std::vector<ActionBranch> joint_branches(const Scenario &s, const AugmentedState &st, Pick &&pick)
        {
            const auto &available = available_actions(s, st.zone);
            std::vector<std::vector<LevelProb>> dists;
            std::size_t combos = 1;
            for (BeamId b : available)
            {
                dists.push_back(level_distribution(s, b, st.zone));
                combos *= dists.back().size();
                if (combos > 1000000)
                    throw std::length_error("exact oracle: too many joint beam realizations in zone " +
                                            std::to_string(st.zone));
            }
            std::vector<ActionBranch> out;
            std::vector<std::size_t> idx(available.size(), 0);
            RealizedRatesView view{st.learner, epoch_duration(s, st.learner.speed), s.handover_time_s, {}};
            view.beams.resize(available.size());
            for (std::size_t c = 0; c < combos; ++c)
            {
                double prob = 1.0;
                for (std::size_t i = 0; i < available.size(); ++i)
                {
                    const LevelProb &lp = dists[i][idx[i]];
                    prob *= lp.prob;
                    view.beams[i] = RealizedBeam{available[i], lp.level, s.rate_table.rate(lp.level)};
                }
                const BeamId a = pick(view);
                int level = 0;
                for (const auto &rb : view.beams)
                    if (rb.id == a)
                        level = rb.rssi_level;
                add_branch(out, a, level, prob);
                for (std::size_t i = 0; i < idx.size(); ++i)
                {
                    if (++idx[i] < dists[i].size())
                        break;
                    idx[i] = 0;
                }
            }
            return out;
        }
    } // namespace detail

    // Joint distribution of (action, realized level of that action) in `st`.
    inline std::vector<ActionBranch> policy_branches(const Scenario &s, const AugmentedState &st,
                                                     const OraclePolicy &policy)
    {
        const auto &available = available_actions(s, st.zone);
        return std::visit(
            [&](const auto &p) -> std::vector<ActionBranch> {
                using P = std::decay_t<decltype(p)>;
                if constexpr (std::is_same_v<P, UniformRandomOracle>)
                {
                    std::vector<ActionBranch> out;
                    const double w = 1.0 / static_cast<double>(available.size());
                    for (BeamId a : available)
                    {
                        auto b = detail::branches_for(s, st.zone, a, w);
                        out.insert(out.end(), b.begin(), b.end());
                    }
                    return out;
                }
                else if constexpr (std::is_same_v<P, FixedActionOracle>)
                {
                    const bool ok = std::find(available.begin(), available.end(), p.action) != available.end();
                    return detail::branches_for(s, st.zone, ok ? p.action : kNoBeam, 1.0);
                }
                else if constexpr (std::is_same_v<P, TableOracle>)
                {
                    return detail::branches_for(s, st.zone, greedy_action(*p.table, st.learner, available), 1.0);
                }
                else if constexpr (P::privilege == ObservationPrivilege::BlockageProbs)
                {
                    VehicleState v;
                    v.zone_index = st.zone;
                    const auto view = observe<ObservationPrivilege::BlockageProbs>(
                        s, v, [](BeamId) { return Connection{}; });
                    return detail::branches_for(s, st.zone, p(view), 1.0);
                }
                else
                {
                    return detail::joint_branches(s, st, p);
                }
            },
            policy);
    }

    // Successors of `st` after taking `action` and observing `level`:
    // calls emit(next_or_nullptr, prob, reward). nullptr means departure.
    template <class Emit>
    void expand_branch(const Scenario &s, const AugmentedState &st, BeamId action, int level, double prob,
                       Emit &&emit)
    {
        const double xi = epoch_duration(s, st.learner.speed);
        const double carried = carried_residual(s, st.learner.beam, st.residual_s, st.zone);
        const EpochTiming timing = epoch_timing(st.learner.beam, carried, action, xi, s.handover_time_s);
        const double reward = timing.connected_s * s.rate_table.rate(level);
        const auto nz = next_zone(s, st.zone, st.learner.direction);
        if (!nz)
        {
            emit(static_cast<const AugmentedState *>(nullptr), prob, reward);
            return;
        }
        const SpeedRange r = speed_range(s);
        const double w = prob / static_cast<double>(r.count());
        for (int v = r.lo; v <= r.hi; ++v)
        {
            const AugmentedState next{*nz, SystemState{level, action, v, st.learner.direction}, timing.residual_after_s};
            emit(&next, w, reward);
        }
    }

    inline std::vector<std::pair<AugmentedState, double>> spawn_distribution(const Scenario &s)
    {
        std::vector<std::pair<AugmentedState, double>> out;
        const SpeedRange r = speed_range(s);
        for (int d = 0; d < 2; ++d)
        {
            for (int v = r.lo; v <= r.hi; ++v)
            {
                out.emplace_back(AugmentedState{entry_zone(s, d), SystemState{0, kNoBeam, v, d}, 0.0},
                                 0.5 / static_cast<double>(r.count()));
            }
        }
        return out;
    }

    namespace detail
    {
        class StateIndex
        {
        public:
            explicit StateIndex(std::size_t cap) : cap_(cap) {}

            int intern(const AugmentedState &st)
            {
                auto [it, inserted] = index_.emplace(st, static_cast<int>(states_.size()));
                if (inserted)
                {
                    if (states_.size() >= cap_)
                        throw std::length_error("exact oracle: more than " + std::to_string(cap_) +
                                                " augmented states");
                    states_.push_back(st);
                }
                return it->second;
            }

            std::vector<AugmentedState> &states() { return states_; }

        private:
            std::size_t cap_;
            std::map<AugmentedState, int> index_;
            std::vector<AugmentedState> states_;
        };
    } // namespace detail

    // -------------------------------------------------------------------------
    // Chain induced by a fixed policy.

    struct EnumeratedChain
    {
        std::vector<AugmentedState> states;
        SparseMatrix transition;
        Eigen::VectorXd reward;  // expected Gbit per epoch
        Eigen::VectorXd sojourn; // expected seconds per epoch

        DenseMatrix dense_transition() const { return DenseMatrix(transition); }
    };

    inline EnumeratedChain enumerate_chain(const Scenario &s, const OraclePolicy &policy,
                                           std::size_t cap = kDefaultStateCap)
    {
        require_exact_model(s);
        detail::StateIndex index(cap);
        const auto spawn = spawn_distribution(s);
        std::vector<std::pair<int, double>> restart;
        for (const auto &[st, p] : spawn)
            restart.emplace_back(index.intern(st), p);

        std::vector<Eigen::Triplet<double>> triplets;
        std::vector<double> reward;
        std::vector<double> sojourn;
        for (std::size_t i = 0; i < index.states().size(); ++i)
        {
            const AugmentedState st = index.states()[i];
            double r = 0.0;
            std::map<int, double> row;
            for (const auto &br : policy_branches(s, st, policy))
            {
                expand_branch(s, st, br.action, br.level, br.prob,
                              [&](const AugmentedState *next, double p, double rew) {
                                  r += p * rew;
                                  if (next)
                                  {
                                      row[index.intern(*next)] += p;
                                  }
                                  else
                                  {
                                      for (const auto &[j, q] : restart)
                                          row[j] += p * q;
                                  }
                              });
            }
            for (const auto &[j, p] : row)
                if (p > 0.0)
                    triplets.emplace_back(static_cast<int>(i), j, p);
            reward.push_back(r);
            sojourn.push_back(epoch_duration(s, st.learner.speed));
        }

        EnumeratedChain c;
        c.states = std::move(index.states());
        const auto n = static_cast<Eigen::Index>(c.states.size());
        c.transition.resize(n, n);
        c.transition.setFromTriplets(triplets.begin(), triplets.end());
        c.transition.makeCompressed();
        c.reward = Eigen::Map<Eigen::VectorXd>(reward.data(), n);
        c.sojourn = Eigen::Map<Eigen::VectorXd>(sojourn.data(), n);
        return c;
    }

    // Long-run Gbit/s from every starting state: (Lbar r) / (Lbar y).
    inline Eigen::VectorXd average_reward(const EnumeratedChain &chain, double tol = 1e-13)
    {
        auto lim = cesaro_apply(chain.transition, {chain.reward, chain.sojourn}, tol);
        const Eigen::VectorXd &lr = lim[0];
        const Eigen::VectorXd &ly = lim[1];
        if ((ly.array() <= 0.0).any())
            throw std::domain_error("average_reward: nonpositive expected sojourn");
        return lr.cwiseQuotient(ly);
    }

    // Dense variant for small chains given as (P, r, y).
    inline Eigen::VectorXd average_reward(const DenseMatrix &p, const Eigen::VectorXd &r, const Eigen::VectorXd &y,
                                          double tol = 1e-12)
    {
        const DenseMatrix l = cesaro_limit(p, tol);
        const Eigen::VectorXd ly = l * y;
        if ((ly.array() <= 0.0).any())
            throw std::domain_error("average_reward: nonpositive expected sojourn");
        return (l * r).cwiseQuotient(ly);
    }

    // -------------------------------------------------------------------------
    // Controlled model over augmented states: every available action.

    struct ModelMdp
    {
        FiniteMdp mdp;
        std::vector<AugmentedState> states;
        std::vector<std::vector<BeamId>> action_ids; // parallel to mdp.actions
    };

    inline ModelMdp build_model_mdp(const Scenario &s, std::size_t cap = kDefaultStateCap)
    {
        require_exact_model(s);
        detail::StateIndex index(cap);
        ModelMdp m;
        for (const auto &[st, p] : spawn_distribution(s))
            m.mdp.restart.emplace_back(index.intern(st), p);

        for (std::size_t i = 0; i < index.states().size(); ++i)
        {
            const AugmentedState st = index.states()[i];
            std::vector<MdpAction> acts;
            std::vector<BeamId> ids;
            for (BeamId a : available_actions(s, st.zone))
            {
                MdpAction act;
                act.label = s.beam_slot(a);
                act.sojourn = epoch_duration(s, st.learner.speed);
                for (const auto &lp : level_distribution(s, a, st.zone))
                {
                    expand_branch(s, st, a, lp.level, lp.prob, [&](const AugmentedState *next, double p, double r) {
                        act.outcomes.push_back(MdpOutcome{next ? index.intern(*next) : -1, p, r});
                    });
                }
                acts.push_back(std::move(act));
                ids.push_back(a);
            }
            m.mdp.actions.push_back(std::move(acts));
            m.action_ids.push_back(std::move(ids));
        }
        m.states = std::move(index.states());
        return m;
    }

    // Shrinks a scenario to its first `zones` zones; beams are clipped and
    // beams left without coverage are parked on zone 0 with certain blockage.
    inline Scenario truncate_scenario(const Scenario &s, int zones)
    {
        if (zones < 1 || zones > s.num_zones())
            throw std::invalid_argument("truncate_scenario: zone count out of range");
        Scenario t = s;
        t.road_length_m = zones * s.zone_length_m;
        for (auto &b : t.beams)
        {
            const int end = std::min(b.end_zone, zones);
            if (b.start_zone >= end)
            {
                b.start_zone = 0;
                b.end_zone = 1;
                b.blockage_prob = 1.0;
                std::vector<double> point(static_cast<std::size_t>(s.num_rssi_levels - 1), 0.0);
                point[0] = 1.0;
                b.rssi_dist = {point};
                continue;
            }
            b.rssi_dist.resize(static_cast<std::size_t>(end - b.start_zone));
            b.end_zone = end;
        }
        t.rebuild_index();
        t.validate();
        return t;
    }
} // namespace beamql
