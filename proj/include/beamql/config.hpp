#pragma once

// Experiment configuration: a JSON document with `scenario`, `schedule` and
// `experiment` blocks. Unknown keys are rejected. A scenario block that lists
// its beams explicitly is a pinned world (the format of scenario.lock).

#include "beamql/env_model.hpp"
#include "beamql/rl_core.hpp"
#include "beamql/training.hpp"

#include <json.hpp>

#include <cstdint>
#include <fstream>
#include <initializer_list>
#include <optional>
#include <set>
#include <sstream>
#include <string>
#include <vector>

namespace beamql
{
    using Json = nlohmann::json;

    enum class PolicyKind
    {
        ParallelQl,
        Ql,
        MaxRate,
        BlockageAware,
        UpperBound,
    };

    inline const char *policy_name(PolicyKind p)
    {
        switch (p)
        {
        case PolicyKind::ParallelQl:
            return "parallel_ql";
        case PolicyKind::Ql:
            return "ql";
        case PolicyKind::MaxRate:
            return "max_rate";
        case PolicyKind::BlockageAware:
            return "blockage_aware";
        case PolicyKind::UpperBound:
            return "upper_bound";
        }
        return "?";
    }

    inline PolicyKind parse_policy(const std::string &name, const std::string &field = "experiment.policy")
    {
        for (PolicyKind p : {PolicyKind::ParallelQl, PolicyKind::Ql, PolicyKind::MaxRate, PolicyKind::BlockageAware,
                             PolicyKind::UpperBound})
            if (name == policy_name(p))
                return p;
        throw ConfigError(field, "unknown policy '" + name + "'");
    }

    inline bool is_learned(PolicyKind p) { return p == PolicyKind::ParallelQl || p == PolicyKind::Ql; }

    enum class SweepParameter
    {
        MeanSpeed,
        HandoverTime,
        ArrivalProb,
        LearnerCap,
    };

    inline const char *sweep_name(SweepParameter p)
    {
        switch (p)
        {
        case SweepParameter::MeanSpeed:
            return "mean_speed";
        case SweepParameter::HandoverTime:
            return "handover_time";
        case SweepParameter::ArrivalProb:
            return "arrival_prob";
        case SweepParameter::LearnerCap:
            return "learner_cap";
        }
        return "?";
    }

    // One sweep value; learner_cap may be unlimited.
    struct SweepValue
    {
        double number = 0.0;
        bool unlimited = false;

        std::string label() const
        {
            if (unlimited)
                return "inf";
            std::ostringstream os;
            os << number;
            return os.str();
        }
    };

    struct Sweep
    {
        SweepParameter parameter = SweepParameter::MeanSpeed;
        std::vector<SweepValue> values;
    };

    struct ExperimentSettings
    {
        PolicyKind policy = PolicyKind::ParallelQl;
        std::vector<PolicyKind> policies{PolicyKind::ParallelQl, PolicyKind::MaxRate, PolicyKind::BlockageAware,
                                         PolicyKind::UpperBound}; // compared in a sweep
        ExecutionMode mode = ExecutionMode::EventSerial;
        std::optional<std::size_t> learner_cap;
        StopCondition stop = StopCondition::sim_time(20000.0);
        std::vector<std::uint64_t> seeds{1};
        std::uint64_t eval_trips = 1000;
        std::uint64_t log_interval = 100;
        std::uint64_t log_window = 0; // 0: derived from the update budget
        std::size_t workers = 1; // sweep cells run in parallel
        std::optional<Sweep> sweep;
    };

    struct ExperimentConfig
    {
        ScenarioConfig generator;
        std::optional<Scenario> pinned; // explicit beams given
        LearningSchedule schedule;
        ExperimentSettings experiment;

        Scenario scenario() const { return pinned ? *pinned : build_scenario(generator); }
    };

    namespace detail
    {
        inline void check_keys(const Json &obj, const std::string &block, std::initializer_list<const char *> allowed)
        {
            if (!obj.is_object())
                throw ConfigError(block, "must be an object");
            const std::set<std::string> ok(allowed.begin(), allowed.end());
            for (const auto &[key, _] : obj.items())
                if (!ok.count(key))
                    throw ConfigError(block + "." + key, "unknown key");
        }

        template <class T>
        void read(const Json &obj, const std::string &block, const char *key, T &out)
        {
            if (!obj.contains(key))
                return;
            try
            {
                out = obj.at(key).get<T>();
            }
            catch (const nlohmann::json::exception &e)
            {
                throw ConfigError(block + "." + key, std::string("wrong type: ") + e.what());
            }
        }

        inline RssiMode parse_rssi_mode(const std::string &s)
        {
            if (s == "random")
                return RssiMode::Random;
            if (s == "pathloss")
                return RssiMode::Pathloss;
            throw ConfigError("scenario.rssi_mode", "expected 'random' or 'pathloss'");
        }

        inline void read_radio(const Json &j, RadioParams &r)
        {
            check_keys(j, "scenario.radio",
                       {"reference_distance_m", "pathloss_exponent", "carrier_wavelength_m", "shadowing_sigma_db"});
            read(j, "scenario.radio", "reference_distance_m", r.reference_distance_m);
            read(j, "scenario.radio", "pathloss_exponent", r.pathloss_exponent);
            read(j, "scenario.radio", "carrier_wavelength_m", r.carrier_wavelength_m);
            read(j, "scenario.radio", "shadowing_sigma_db", r.shadowing_sigma_db);
        }

        inline Json radio_json(const RadioParams &r)
        {
            return Json{{"reference_distance_m", r.reference_distance_m},
                        {"pathloss_exponent", r.pathloss_exponent},
                        {"carrier_wavelength_m", r.carrier_wavelength_m},
                        {"shadowing_sigma_db", r.shadowing_sigma_db}};
        }

        inline std::optional<std::size_t> parse_cap(const Json &j, const std::string &field)
        {
            if (j.is_null() || (j.is_string() && (j == "unlimited" || j == "inf")))
                return std::nullopt;
            if (j.is_number_integer() && j.get<long long>() >= 1)
                return static_cast<std::size_t>(j.get<long long>());
            throw ConfigError(field, "expected a positive integer, \"unlimited\" or null");
        }
    } // namespace detail

    inline Scenario parse_pinned_scenario(const Json &j, const ScenarioConfig &g)
    {
        Scenario s;
        s.road_length_m = g.road_length_m;
        s.zone_length_m = g.zone_length_m;
        s.num_mmbs = g.num_mmbs;
        s.beams_per_mmbs = g.beams_per_mmbs;
        s.num_rssi_levels = g.num_rssi_levels;
        s.rate_table =
            g.rates_by_level.empty() ? RateTable::linear(g.num_rssi_levels) : RateTable{g.rates_by_level};
        s.rate_jitter = g.rate_jitter;
        s.radio = g.radio;
        s.handover_time_s = g.handover_time_s;
        s.arrival_prob = g.arrival_prob;
        s.mean_speed_mps = g.mean_speed_mps;
        s.max_speed_mps = g.max_speed_mps;
        s.generation_seed = g.generation_seed;
        const Json &beams = j.at("beams");
        if (!beams.is_array())
            throw ConfigError("scenario.beams", "must be an array");
        for (std::size_t i = 0; i < beams.size(); ++i)
        {
            const std::string field = "scenario.beams[" + std::to_string(i) + "]";
            const Json &b = beams[i];
            detail::check_keys(b, field, {"mmbs", "beam", "start_zone", "end_zone", "blockage_prob", "rssi_dist"});
            BeamProfile p;
            for (const char *k : {"mmbs", "beam", "start_zone", "end_zone", "blockage_prob", "rssi_dist"})
                if (!b.contains(k))
                    throw ConfigError(field + "." + k, "missing");
            detail::read(b, field, "mmbs", p.id.mmbs);
            detail::read(b, field, "beam", p.id.beam);
            detail::read(b, field, "start_zone", p.start_zone);
            detail::read(b, field, "end_zone", p.end_zone);
            detail::read(b, field, "blockage_prob", p.blockage_prob);
            detail::read(b, field, "rssi_dist", p.rssi_dist);
            s.beams.push_back(std::move(p));
        }
        if (s.beams.size() != static_cast<std::size_t>(s.num_mmbs * s.beams_per_mmbs))
            throw ConfigError("scenario.beams", "expected num_mmbs * beams_per_mmbs beams");
        for (std::size_t i = 0; i < s.beams.size(); ++i)
        {
            const auto &b = s.beams[i];
            if (b.id.mmbs < 1 || b.id.mmbs > s.num_mmbs || b.id.beam < 1 || b.id.beam > s.beams_per_mmbs)
                throw ConfigError("scenario.beams[" + std::to_string(i) + "]", "beam id out of range");
            if (b.start_zone < 0 || b.end_zone > s.num_zones() || b.start_zone >= b.end_zone)
                throw ConfigError("scenario.beams[" + std::to_string(i) + "]", "coverage must lie on the road");
        }
        s.rebuild_index();
        s.validate();
        return s;
    }

    inline void parse_scenario_block(const Json &j, ScenarioConfig &g, std::optional<Scenario> &pinned)
    {
        const std::string B = "scenario";
        detail::check_keys(j, B,
                           {"road_length_m", "zone_length_m", "num_mmbs", "beams_per_mmbs", "num_rssi_levels",
                            "min_coverage_m", "max_coverage_m", "blockage_prob_min", "blockage_prob_max", "rssi_mode",
                            "rate_jitter", "rates_by_level", "radio", "tx_power_dbm", "mmbs_offset_m", "rx_floor_dbm",
                            "rx_ceiling_dbm", "handover_time_s", "arrival_prob", "mean_speed_mps", "max_speed_mps",
                            "generation_seed", "beams"});
        detail::read(j, B, "road_length_m", g.road_length_m);
        detail::read(j, B, "zone_length_m", g.zone_length_m);
        detail::read(j, B, "num_mmbs", g.num_mmbs);
        detail::read(j, B, "beams_per_mmbs", g.beams_per_mmbs);
        detail::read(j, B, "num_rssi_levels", g.num_rssi_levels);
        detail::read(j, B, "min_coverage_m", g.min_coverage_m);
        detail::read(j, B, "max_coverage_m", g.max_coverage_m);
        detail::read(j, B, "blockage_prob_min", g.blockage_prob_min);
        detail::read(j, B, "blockage_prob_max", g.blockage_prob_max);
        if (j.contains("rssi_mode"))
        {
            std::string m;
            detail::read(j, B, "rssi_mode", m);
            g.rssi_mode = detail::parse_rssi_mode(m);
        }
        detail::read(j, B, "rate_jitter", g.rate_jitter);
        detail::read(j, B, "rates_by_level", g.rates_by_level);
        if (j.contains("radio"))
            detail::read_radio(j.at("radio"), g.radio);
        detail::read(j, B, "tx_power_dbm", g.tx_power_dbm);
        detail::read(j, B, "mmbs_offset_m", g.mmbs_offset_m);
        detail::read(j, B, "rx_floor_dbm", g.rx_floor_dbm);
        detail::read(j, B, "rx_ceiling_dbm", g.rx_ceiling_dbm);
        detail::read(j, B, "handover_time_s", g.handover_time_s);
        detail::read(j, B, "arrival_prob", g.arrival_prob);
        detail::read(j, B, "mean_speed_mps", g.mean_speed_mps);
        detail::read(j, B, "max_speed_mps", g.max_speed_mps);
        detail::read(j, B, "generation_seed", g.generation_seed);
        g.validate();
        if (j.contains("beams"))
            pinned = parse_pinned_scenario(j, g);
    }

    inline void parse_schedule_block(const Json &j, LearningSchedule &s)
    {
        const std::string B = "schedule";
        detail::check_keys(j, B,
                           {"learning_rate", "discount", "epsilon_start", "epsilon_floor", "epsilon_decay",
                            "epsilon_floor_at_updates", "robbins_monro", "robbins_monro_c"});
        detail::read(j, B, "learning_rate", s.learning_rate);
        detail::read(j, B, "discount", s.discount);
        detail::read(j, B, "epsilon_start", s.epsilon_start);
        detail::read(j, B, "epsilon_floor", s.epsilon_floor);
        detail::read(j, B, "epsilon_decay", s.epsilon_decay);
        detail::read(j, B, "epsilon_floor_at_updates", s.epsilon_floor_at_updates);
        detail::read(j, B, "robbins_monro", s.robbins_monro);
        detail::read(j, B, "robbins_monro_c", s.robbins_monro_c);
        s.validate();
    }

    inline void parse_experiment_block(const Json &j, ExperimentSettings &e)
    {
        const std::string B = "experiment";
        detail::check_keys(j, B,
                           {"policy", "policies", "mode", "learner_cap", "stop", "seeds", "eval_trips", "log_interval",
                            "log_window", "workers", "sweep"});
        if (j.contains("policy"))
        {
            std::string p;
            detail::read(j, B, "policy", p);
            e.policy = parse_policy(p);
        }
        if (j.contains("policies"))
        {
            std::vector<std::string> names;
            detail::read(j, B, "policies", names);
            if (names.empty())
                throw ConfigError("experiment.policies", "must not be empty");
            e.policies.clear();
            for (const auto &n : names)
                e.policies.push_back(parse_policy(n, "experiment.policies"));
        }
        if (j.contains("mode"))
        {
            std::string m;
            detail::read(j, B, "mode", m);
            if (m == "event_serial")
                e.mode = ExecutionMode::EventSerial;
            else if (m == "concurrent")
                e.mode = ExecutionMode::Concurrent;
            else
                throw ConfigError("experiment.mode", "expected 'event_serial' or 'concurrent'");
        }
        if (j.contains("learner_cap"))
            e.learner_cap = detail::parse_cap(j.at("learner_cap"), "experiment.learner_cap");
        if (j.contains("stop"))
        {
            const Json &s = j.at("stop");
            detail::check_keys(s, "experiment.stop", {"max_updates", "max_sim_time_s"});
            StopCondition stop;
            if (s.contains("max_updates"))
            {
                std::uint64_t n = 0;
                detail::read(s, "experiment.stop", "max_updates", n);
                stop.max_updates = n;
            }
            if (s.contains("max_sim_time_s"))
            {
                double t = 0.0;
                detail::read(s, "experiment.stop", "max_sim_time_s", t);
                stop.max_sim_time_s = t;
            }
            e.stop = stop;
        }
        detail::read(j, B, "seeds", e.seeds);
        if (e.seeds.empty())
            throw ConfigError("experiment.seeds", "must not be empty");
        detail::read(j, B, "eval_trips", e.eval_trips);
        if (e.eval_trips == 0)
            throw ConfigError("experiment.eval_trips", "must be positive");
        detail::read(j, B, "log_interval", e.log_interval);
        detail::read(j, B, "log_window", e.log_window);
        detail::read(j, B, "workers", e.workers);
        if (e.workers == 0)
            throw ConfigError("experiment.workers", "must be positive");
        if (j.contains("sweep"))
        {
            const Json &s = j.at("sweep");
            detail::check_keys(s, "experiment.sweep", {"parameter", "values"});
            Sweep sw;
            std::string param;
            detail::read(s, "experiment.sweep", "parameter", param);
            bool found = false;
            for (SweepParameter p : {SweepParameter::MeanSpeed, SweepParameter::HandoverTime,
                                     SweepParameter::ArrivalProb, SweepParameter::LearnerCap})
            {
                if (param == sweep_name(p))
                {
                    sw.parameter = p;
                    found = true;
                }
            }
            if (!found)
                throw ConfigError("experiment.sweep.parameter", "unknown sweep parameter '" + param + "'");
            if (!s.contains("values") || !s.at("values").is_array() || s.at("values").empty())
                throw ConfigError("experiment.sweep.values", "must be a nonempty array");
            for (const Json &v : s.at("values"))
            {
                const std::string field = "experiment.sweep.values";
                SweepValue sv;
                if (sw.parameter == SweepParameter::LearnerCap)
                {
                    const auto cap = detail::parse_cap(v, field);
                    sv.unlimited = !cap;
                    sv.number = cap ? static_cast<double>(*cap) : 0.0;
                }
                else if (v.is_number())
                {
                    sv.number = v.get<double>();
                }
                else
                {
                    throw ConfigError(field, "expected numbers");
                }
                switch (sw.parameter)
                {
                case SweepParameter::MeanSpeed:
                    if (sv.number < 1.0 || sv.number != std::floor(sv.number))
                        throw ConfigError(field, "mean_speed values must be positive integers");
                    break;
                case SweepParameter::HandoverTime:
                    if (!(sv.number >= 0.0))
                        throw ConfigError(field, "handover_time values must be nonnegative");
                    break;
                case SweepParameter::ArrivalProb:
                    if (!(sv.number >= 0.0 && sv.number <= 1.0))
                        throw ConfigError(field, "arrival_prob values must lie in [0,1]");
                    break;
                case SweepParameter::LearnerCap:
                    break;
                }
                sw.values.push_back(sv);
            }
            e.sweep = std::move(sw);
        }
    }

    inline ExperimentConfig parse_config(const Json &j)
    {
        detail::check_keys(j, "config", {"scenario", "schedule", "experiment"});
        ExperimentConfig c;
        if (j.contains("scenario"))
            parse_scenario_block(j.at("scenario"), c.generator, c.pinned);
        else
            c.generator.validate();
        if (j.contains("schedule"))
            parse_schedule_block(j.at("schedule"), c.schedule);
        if (j.contains("experiment"))
            parse_experiment_block(j.at("experiment"), c.experiment);
        if (c.experiment.sweep && c.experiment.sweep->parameter == SweepParameter::MeanSpeed)
        {
            const int vmax = c.pinned ? c.pinned->max_speed_mps : c.generator.max_speed_mps;
            for (const auto &v : c.experiment.sweep->values)
                if (v.number > vmax)
                    throw ConfigError("experiment.sweep.values", "mean_speed above max_speed_mps");
        }
        return c;
    }

    inline ExperimentConfig parse_config_text(const std::string &text)
    {
        Json j;
        try
        {
            j = Json::parse(text);
        }
        catch (const nlohmann::json::parse_error &e)
        {
            throw ConfigError("config", std::string("not valid JSON: ") + e.what());
        }
        return parse_config(j);
    }

    inline ExperimentConfig load_config(const std::string &path)
    {
        std::ifstream in(path);
        if (!in)
            throw std::runtime_error("cannot open config file '" + path + "'");
        std::stringstream ss;
        ss << in.rdbuf();
        return parse_config_text(ss.str());
    }

    // Pinned-world document in the scenario block schema.
    inline Json scenario_to_json(const Scenario &s)
    {
        Json beams = Json::array();
        for (const auto &b : s.beams)
        {
            beams.push_back(Json{{"mmbs", b.id.mmbs},
                                 {"beam", b.id.beam},
                                 {"start_zone", b.start_zone},
                                 {"end_zone", b.end_zone},
                                 {"blockage_prob", b.blockage_prob},
                                 {"rssi_dist", b.rssi_dist}});
        }
        return Json{{"road_length_m", s.road_length_m},
                    {"zone_length_m", s.zone_length_m},
                    {"num_mmbs", s.num_mmbs},
                    {"beams_per_mmbs", s.beams_per_mmbs},
                    {"num_rssi_levels", s.num_rssi_levels},
                    {"rate_jitter", s.rate_jitter},
                    {"rates_by_level", s.rate_table.rates_by_level},
                    {"radio", detail::radio_json(s.radio)},
                    {"handover_time_s", s.handover_time_s},
                    {"arrival_prob", s.arrival_prob},
                    {"mean_speed_mps", s.mean_speed_mps},
                    {"max_speed_mps", s.max_speed_mps},
                    {"generation_seed", s.generation_seed},
                    {"beams", std::move(beams)}};
    }

    inline std::string scenario_lock_text(const Scenario &s) { return Json{{"scenario", scenario_to_json(s)}}.dump(2) + "\n"; }

    inline Scenario parse_scenario_lock(const std::string &text)
    {
        const ExperimentConfig c = parse_config_text(text);
        if (!c.pinned)
            throw ConfigError("scenario.beams", "scenario.lock must list its beams");
        return *c.pinned;
    }

    inline std::string fnv1a_hex(const std::string &text)
    {
        std::uint64_t h = 0xcbf29ce484222325ULL;
        for (unsigned char c : text)
        {
            h ^= c;
            h *= 0x100000001b3ULL;
        }
        static const char *digits = "0123456789abcdef";
        std::string out(16, '0');
        for (int i = 15; i >= 0; --i)
        {
            out[static_cast<std::size_t>(i)] = digits[h & 0xf];
            h >>= 4;
        }
        return out;
    }
} // namespace beamql
