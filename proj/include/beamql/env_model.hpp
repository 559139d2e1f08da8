#pragma once

// Static scenario: road geometry, mmBS beams, blockage probabilities,
// per-zone RSSI-level distributions and the level -> data rate map.

#include "beamql/rng.hpp"

#include <algorithm>
#include <cmath>
#include <compare>
#include <cstdint>
#include <numbers>
#include <random>
#include <stdexcept>
#include <string>
#include <vector>

namespace beamql
{
    class ConfigError : public std::runtime_error
    {
    public:
        ConfigError(const std::string &field, const std::string &what)
            : std::runtime_error(field + ": " + what), field_(field)
        {
        }

        const std::string &field() const noexcept { return field_; }

    private:
        std::string field_;
    };

    // (mmbs, beam) pair. (0,0) is the virtual "not connected" beam.
    struct BeamId
    {
        int mmbs = 0;
        int beam = 0;

        constexpr bool is_virtual() const noexcept { return mmbs == 0 && beam == 0; }
        constexpr auto operator<=>(const BeamId &) const = default;
    };

    inline constexpr BeamId kNoBeam{0, 0};

    // Order used for action lists and every argmax tie-break: real beams
    // lexicographically by (mmbs, beam), the virtual beam last.
    inline constexpr bool action_order_less(BeamId a, BeamId b) noexcept
    {
        if (a.is_virtual() != b.is_virtual())
        {
            return b.is_virtual();
        }
        return a < b;
    }

    // A switch between two real beams of different mmBSs is a handover.
    inline constexpr bool is_handover(BeamId from, BeamId to) noexcept
    {
        return !from.is_virtual() && !to.is_virtual() && from.mmbs != to.mmbs;
    }

    struct RadioParams
    {
        double reference_distance_m = 1.0;
        double pathloss_exponent = 2.0;
        double carrier_wavelength_m = 0.005; // 60 GHz
        double shadowing_sigma_db = 4.0;

        bool operator==(const RadioParams &) const = default;
    };

    // Log-distance path loss with free-space loss at the reference distance.
    // The caller supplies the shadowing draw so the function is deterministic.
    inline double pathloss_db(double distance_m, const RadioParams &radio, double shadowing_draw_db)
    {
        if (!(radio.reference_distance_m > 0.0) || !(radio.pathloss_exponent > 0.0) ||
            !(radio.carrier_wavelength_m > 0.0))
        {
            throw std::domain_error("pathloss_db: radio parameters must be positive");
        }
        if (!(distance_m >= radio.reference_distance_m))
        {
            throw std::domain_error("pathloss_db: distance below reference distance");
        }
        const double free_space =
            20.0 * std::log10(4.0 * std::numbers::pi * radio.reference_distance_m / radio.carrier_wavelength_m);
        return free_space + 10.0 * radio.pathloss_exponent * std::log10(distance_m / radio.reference_distance_m) +
               shadowing_draw_db;
    }

    struct RateTable
    {
        std::vector<double> rates_by_level; // Gbit/s, index = RSSI level

        static RateTable linear(int num_levels)
        {
            RateTable t;
            t.rates_by_level.resize(static_cast<std::size_t>(num_levels));
            for (int l = 0; l < num_levels; ++l)
            {
                t.rates_by_level[static_cast<std::size_t>(l)] = static_cast<double>(l);
            }
            return t;
        }

        double rate(int level) const { return rates_by_level.at(static_cast<std::size_t>(level)); }
        double max_rate() const { return rates_by_level.empty() ? 0.0 : rates_by_level.back(); }
        int num_levels() const { return static_cast<int>(rates_by_level.size()); }

        bool operator==(const RateTable &) const = default;

        void validate() const
        {
            if (rates_by_level.size() < 2)
            {
                throw ConfigError("scenario.rates_by_level", "needs at least two levels");
            }
            if (rates_by_level.front() != 0.0)
            {
                throw ConfigError("scenario.rates_by_level", "level 0 must map to rate 0");
            }
            for (std::size_t l = 1; l < rates_by_level.size(); ++l)
            {
                if (!(rates_by_level[l] >= rates_by_level[l - 1]) || !std::isfinite(rates_by_level[l]))
                {
                    throw ConfigError("scenario.rates_by_level", "rates must be finite and nondecreasing");
                }
            }
        }
    };

    struct BeamProfile
    {
        BeamId id;
        int start_zone = 0; // coverage is [start_zone, end_zone)
        int end_zone = 0;
        double blockage_prob = 0.0;
        // One vector per covered zone (start_zone + i), entry j = P(level j+1 | not blocked).
        std::vector<std::vector<double>> rssi_dist;

        bool covers(int zone) const noexcept { return zone >= start_zone && zone < end_zone; }
        int coverage_zones() const noexcept { return end_zone - start_zone; }
        const std::vector<double> &dist_at(int zone) const
        {
            return rssi_dist.at(static_cast<std::size_t>(zone - start_zone));
        }

        bool operator==(const BeamProfile &) const = default;
    };

    enum class RssiMode
    {
        Random,
        Pathloss,
    };

    struct Scenario
    {
        double road_length_m = 1000.0;
        double zone_length_m = 5.0;
        int num_mmbs = 10;
        int beams_per_mmbs = 10;
        int num_rssi_levels = 10;
        std::vector<BeamProfile> beams; // ordered by (mmbs, beam)
        RateTable rate_table;
        bool rate_jitter = false; // +-1 level fading on the rate only
        RadioParams radio;
        double handover_time_s = 0.5;
        double arrival_prob = 0.5;
        int mean_speed_mps = 7;
        int max_speed_mps = 11;
        std::uint64_t generation_seed = 1;

        int num_zones() const { return static_cast<int>(std::floor(road_length_m / zone_length_m + 1e-9)); }
        int num_beam_slots() const { return num_mmbs * beams_per_mmbs + 1; }

        // Slot 0 is the virtual beam, slot (n-1)*K + k the real beam (n,k).
        int beam_slot(BeamId b) const
        {
            return b.is_virtual() ? 0 : (b.mmbs - 1) * beams_per_mmbs + b.beam;
        }
        BeamId beam_at_slot(int slot) const
        {
            if (slot == 0)
            {
                return kNoBeam;
            }
            return BeamId{(slot - 1) / beams_per_mmbs + 1, (slot - 1) % beams_per_mmbs + 1};
        }
        const BeamProfile &profile(BeamId b) const { return beams.at(static_cast<std::size_t>(beam_slot(b) - 1)); }

        double max_rate() const { return rate_table.max_rate(); }

        // Real beams covering each zone, lexicographic, followed by (0,0).
        const std::vector<BeamId> &zone_actions(int zone) const
        {
            return zone_index_.at(static_cast<std::size_t>(zone));
        }

        // Must be called after the beam list changes.
        void rebuild_index()
        {
            zone_index_.assign(static_cast<std::size_t>(std::max(0, num_zones())), {});
            for (const auto &b : beams)
            {
                for (int z = std::max(0, b.start_zone); z < std::min(b.end_zone, num_zones()); ++z)
                {
                    zone_index_[static_cast<std::size_t>(z)].push_back(b.id);
                }
            }
            for (auto &list : zone_index_)
            {
                std::sort(list.begin(), list.end());
                list.push_back(kNoBeam);
            }
        }

        void validate() const;

        bool operator==(const Scenario &) const = default;

    private:
        std::vector<std::vector<BeamId>> zone_index_;
    };

    inline void Scenario::validate() const
    {
        if (!(road_length_m > 0.0))
            throw ConfigError("scenario.road_length_m", "must be positive");
        if (!(zone_length_m > 0.0))
            throw ConfigError("scenario.zone_length_m", "must be positive");
        if (num_zones() < 1)
            throw ConfigError("scenario.zone_length_m", "road must hold at least one zone");
        if (num_mmbs < 1)
            throw ConfigError("scenario.num_mmbs", "must be at least 1");
        if (beams_per_mmbs < 1)
            throw ConfigError("scenario.beams_per_mmbs", "must be at least 1");
        if (num_rssi_levels < 2)
            throw ConfigError("scenario.num_rssi_levels", "must be at least 2");
        rate_table.validate();
        if (rate_table.num_levels() != num_rssi_levels)
            throw ConfigError("scenario.rates_by_level", "length must equal num_rssi_levels");
        if (!(radio.reference_distance_m > 0.0) || !(radio.pathloss_exponent > 0.0) ||
            !(radio.carrier_wavelength_m > 0.0) || !(radio.shadowing_sigma_db >= 0.0))
            throw ConfigError("scenario.radio", "parameters must be positive");
        if (!(handover_time_s >= 0.0))
            throw ConfigError("scenario.handover_time_s", "must be nonnegative");
        if (!(arrival_prob >= 0.0 && arrival_prob <= 1.0))
            throw ConfigError("scenario.arrival_prob", "must lie in [0,1]");
        if (mean_speed_mps < 1)
            throw ConfigError("scenario.mean_speed_mps", "must be at least 1");
        if (max_speed_mps < mean_speed_mps)
            throw ConfigError("scenario.max_speed_mps", "must be >= mean_speed_mps");
        if (beams.size() != static_cast<std::size_t>(num_mmbs * beams_per_mmbs))
            throw ConfigError("scenario.beams", "expected num_mmbs * beams_per_mmbs beams");
        for (std::size_t i = 0; i < beams.size(); ++i)
        {
            const auto &b = beams[i];
            const std::string field = "scenario.beams[" + std::to_string(i) + "]";
            if (b.id != beam_at_slot(static_cast<int>(i) + 1))
                throw ConfigError(field, "beams must be ordered by (mmbs, beam)");
            if (b.start_zone < 0 || b.end_zone > num_zones() || b.start_zone >= b.end_zone)
                throw ConfigError(field, "coverage must be a nonempty interval on the road");
            if (!(b.blockage_prob >= 0.0 && b.blockage_prob <= 1.0))
                throw ConfigError(field, "blockage_prob must lie in [0,1]");
            if (b.rssi_dist.size() != static_cast<std::size_t>(b.coverage_zones()))
                throw ConfigError(field, "one rssi distribution per covered zone required");
            for (const auto &dist : b.rssi_dist)
            {
                if (dist.size() != static_cast<std::size_t>(num_rssi_levels - 1))
                    throw ConfigError(field, "rssi distribution must cover levels 1..M-1");
                double sum = 0.0;
                for (double p : dist)
                {
                    if (!(p >= 0.0))
                        throw ConfigError(field, "rssi probabilities must be nonnegative");
                    sum += p;
                }
                if (std::abs(sum - 1.0) > 1e-9)
                    throw ConfigError(field, "rssi distribution must sum to 1");
            }
        }
    }

    // Parameters of the random world generator.
    struct ScenarioConfig
    {
        double road_length_m = 1000.0;
        double zone_length_m = 5.0;
        int num_mmbs = 10;
        int beams_per_mmbs = 10;
        int num_rssi_levels = 10;
        double min_coverage_m = 20.0;
        double max_coverage_m = 50.0;
        double blockage_prob_min = 0.0;
        double blockage_prob_max = 1.0;
        RssiMode rssi_mode = RssiMode::Random;
        bool rate_jitter = false;
        std::vector<double> rates_by_level; // empty = Delta(l) = l
        RadioParams radio;
        // Only used in pathloss mode.
        double tx_power_dbm = 30.0;
        double mmbs_offset_m = 10.0;
        double rx_floor_dbm = -80.0;
        double rx_ceiling_dbm = -55.0;
        double handover_time_s = 0.5;
        double arrival_prob = 0.5;
        int mean_speed_mps = 7;
        int max_speed_mps = 11;
        std::uint64_t generation_seed = 1;

        void validate() const
        {
            if (!(road_length_m > 0.0))
                throw ConfigError("scenario.road_length_m", "must be positive");
            if (!(zone_length_m > 0.0) || zone_length_m > road_length_m)
                throw ConfigError("scenario.zone_length_m", "must be positive and at most the road length");
            if (num_mmbs < 1)
                throw ConfigError("scenario.num_mmbs", "must be at least 1");
            if (beams_per_mmbs < 1)
                throw ConfigError("scenario.beams_per_mmbs", "must be at least 1");
            if (num_rssi_levels < 2)
                throw ConfigError("scenario.num_rssi_levels", "must be at least 2");
            if (!(min_coverage_m > 0.0))
                throw ConfigError("scenario.min_coverage_m", "must be positive");
            if (!(max_coverage_m >= min_coverage_m))
                throw ConfigError("scenario.max_coverage_m", "must be >= min_coverage_m");
            if (!(blockage_prob_min >= 0.0 && blockage_prob_max <= 1.0 && blockage_prob_min <= blockage_prob_max))
                throw ConfigError("scenario.blockage_prob_min", "blockage range must lie within [0,1]");
            if (!rates_by_level.empty() && rates_by_level.size() != static_cast<std::size_t>(num_rssi_levels))
                throw ConfigError("scenario.rates_by_level", "length must equal num_rssi_levels");
            if (rssi_mode == RssiMode::Pathloss && !(rx_ceiling_dbm > rx_floor_dbm))
                throw ConfigError("scenario.rx_ceiling_dbm", "must exceed rx_floor_dbm");
            if (!(handover_time_s >= 0.0))
                throw ConfigError("scenario.handover_time_s", "must be nonnegative");
            if (!(arrival_prob >= 0.0 && arrival_prob <= 1.0))
                throw ConfigError("scenario.arrival_prob", "must lie in [0,1]");
            if (mean_speed_mps < 1)
                throw ConfigError("scenario.mean_speed_mps", "must be at least 1");
            if (max_speed_mps < mean_speed_mps)
                throw ConfigError("scenario.max_speed_mps", "must be >= mean_speed_mps");
        }
    };

    namespace detail
    {
        inline double normal_cdf(double x) { return 0.5 * std::erfc(-x / std::numbers::sqrt2); }

        // Point mass at max(1, peak - floor(distance_from_center / 2)).
        inline std::vector<std::vector<double>> random_rssi_profile(const BeamProfile &b, int peak, int levels)
        {
            std::vector<std::vector<double>> out;
            const double center = 0.5 * (b.start_zone + b.end_zone);
            for (int z = b.start_zone; z < b.end_zone; ++z)
            {
                const double dist = std::abs((z + 0.5) - center);
                const int level = std::max(1, peak - static_cast<int>(std::floor(dist / 2.0)));
                std::vector<double> dist_vec(static_cast<std::size_t>(levels - 1), 0.0);
                dist_vec[static_cast<std::size_t>(level - 1)] = 1.0;
                out.push_back(std::move(dist_vec));
            }
            return out;
        }

        // Received power quantized into M-1 equal-width bins, with the
        // log-normal shadowing integrated analytically.
        inline std::vector<double> pathloss_rssi_dist(const ScenarioConfig &cfg, double distance_m)
        {
            const int bins = cfg.num_rssi_levels - 1;
            const double mean_rx =
                cfg.tx_power_dbm - pathloss_db(std::max(distance_m, cfg.radio.reference_distance_m), cfg.radio, 0.0);
            const double width = (cfg.rx_ceiling_dbm - cfg.rx_floor_dbm) / bins;
            std::vector<double> dist(static_cast<std::size_t>(bins), 0.0);
            const double sigma = cfg.radio.shadowing_sigma_db;
            for (int l = 1; l <= bins; ++l)
            {
                const double lo = cfg.rx_floor_dbm + (l - 1) * width;
                const double hi = lo + width;
                // P(rx < lo) and P(rx < hi); the outer bins are open-ended.
                auto below = [&](double x) {
                    return sigma > 0.0 ? normal_cdf((x - mean_rx) / sigma) : (mean_rx < x ? 1.0 : 0.0);
                };
                const double p_lo = (l == 1) ? 0.0 : below(lo);
                const double p_hi = (l == bins) ? 1.0 : below(hi);
                dist[static_cast<std::size_t>(l - 1)] = std::max(0.0, p_hi - p_lo);
            }
            double sum = 0.0;
            for (double p : dist)
                sum += p;
            for (double &p : dist)
                p /= sum;
            return dist;
        }
    } // namespace detail

    // Deterministic in cfg (including generation_seed).
    inline Scenario build_scenario(const ScenarioConfig &cfg)
    {
        cfg.validate();
        std::mt19937_64 rng(cfg.generation_seed);

        Scenario s;
        s.road_length_m = cfg.road_length_m;
        s.zone_length_m = cfg.zone_length_m;
        s.num_mmbs = cfg.num_mmbs;
        s.beams_per_mmbs = cfg.beams_per_mmbs;
        s.num_rssi_levels = cfg.num_rssi_levels;
        s.rate_table = cfg.rates_by_level.empty() ? RateTable::linear(cfg.num_rssi_levels)
                                                  : RateTable{cfg.rates_by_level};
        s.rate_jitter = cfg.rate_jitter;
        s.radio = cfg.radio;
        s.handover_time_s = cfg.handover_time_s;
        s.arrival_prob = cfg.arrival_prob;
        s.mean_speed_mps = cfg.mean_speed_mps;
        s.max_speed_mps = cfg.max_speed_mps;
        s.generation_seed = cfg.generation_seed;

        const int zones = s.num_zones();
        const int min_len = std::max(1, static_cast<int>(std::ceil(cfg.min_coverage_m / cfg.zone_length_m - 1e-9)));
        const int max_len =
            std::min(zones, static_cast<int>(std::floor(cfg.max_coverage_m / cfg.zone_length_m + 1e-9)));
        if (min_len > max_len)
        {
            throw ConfigError("scenario.min_coverage_m", "coverage range admits no whole number of zones on the road");
        }
        const int levels = cfg.num_rssi_levels;
        const int peak_lo = std::min(3, levels - 1);

        std::vector<int> peaks;
        for (int n = 1; n <= cfg.num_mmbs; ++n)
        {
            for (int k = 1; k <= cfg.beams_per_mmbs; ++k)
            {
                BeamProfile b;
                b.id = BeamId{n, k};
                const int len = uniform_int(rng, min_len, max_len);
                b.start_zone = uniform_int(rng, 0, zones - len);
                b.end_zone = b.start_zone + len;
                b.blockage_prob =
                    cfg.blockage_prob_min + (cfg.blockage_prob_max - cfg.blockage_prob_min) * uniform01(rng);
                peaks.push_back(uniform_int(rng, peak_lo, levels - 1));
                s.beams.push_back(std::move(b));
            }
        }

        if (cfg.rssi_mode == RssiMode::Random)
        {
            for (std::size_t i = 0; i < s.beams.size(); ++i)
            {
                s.beams[i].rssi_dist = detail::random_rssi_profile(s.beams[i], peaks[i], levels);
            }
        }
        else
        {
            // mmBS site: midpoint of the union of its beams' coverage.
            for (int n = 1; n <= cfg.num_mmbs; ++n)
            {
                int lo = zones;
                int hi = 0;
                for (const auto &b : s.beams)
                {
                    if (b.id.mmbs == n)
                    {
                        lo = std::min(lo, b.start_zone);
                        hi = std::max(hi, b.end_zone);
                    }
                }
                const double site_m = 0.5 * (lo + hi) * cfg.zone_length_m;
                for (auto &b : s.beams)
                {
                    if (b.id.mmbs != n)
                        continue;
                    for (int z = b.start_zone; z < b.end_zone; ++z)
                    {
                        const double along = (z + 0.5) * cfg.zone_length_m - site_m;
                        const double d = std::hypot(along, cfg.mmbs_offset_m);
                        b.rssi_dist.push_back(detail::pathloss_rssi_dist(cfg, d));
                    }
                }
            }
        }

        s.rebuild_index();
        s.validate();
        return s;
    }

    // All real beams covering the zone (lexicographic), then (0,0).
    inline const std::vector<BeamId> &beams_covering(const Scenario &s, int zone_index)
    {
        if (zone_index < 0 || zone_index >= s.num_zones())
        {
            throw std::out_of_range("beams_covering: zone index " + std::to_string(zone_index) + " out of range");
        }
        return s.zone_actions(zone_index);
    }

    inline bool beam_covers(const Scenario &s, BeamId b, int zone)
    {
        return !b.is_virtual() && s.profile(b).covers(zone);
    }

    struct Connection
    {
        int rssi_level = 0;
        double rate_gbps = 0.0;

        bool operator==(const Connection &) const = default;
    };

    namespace detail
    {
        template <class Rng>
        int draw_level(const std::vector<double> &dist, Rng &rng)
        {
            const double u = uniform01(rng);
            double acc = 0.0;
            int last_positive = 1;
            for (std::size_t j = 0; j < dist.size(); ++j)
            {
                if (dist[j] > 0.0)
                {
                    last_positive = static_cast<int>(j) + 1;
                    acc += dist[j];
                    if (u < acc)
                        return last_positive;
                }
            }
            return last_positive;
        }
    } // namespace detail

    // Realized connection on `beam` in `zone` for one epoch.
    template <class Rng>
    Connection sample_connection(const Scenario &s, BeamId beam, int zone_index, Rng &rng)
    {
        if (beam.is_virtual() || !s.profile(beam).covers(zone_index))
        {
            return {};
        }
        const BeamProfile &p = s.profile(beam);
        // Always consume the blockage draw first so the level draw is aligned
        // across beams with different blockage probabilities.
        const double u = uniform01(rng);
        const int level = detail::draw_level(p.dist_at(zone_index), rng);
        int rate_level = level;
        if (s.rate_jitter)
        {
            rate_level = std::clamp(level + uniform_int(rng, -1, 1), 1, s.num_rssi_levels - 1);
        }
        if (u < p.blockage_prob)
        {
            return {};
        }
        return Connection{level, s.rate_table.rate(rate_level)};
    }
} // namespace beamql
