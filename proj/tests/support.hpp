#pragma once

#include "beamql/beamql.hpp"

#include <vector>

namespace beamql::testing
{
    inline std::vector<double> point_mass(int levels, int level)
    {
        std::vector<double> v(static_cast<std::size_t>(levels - 1), 0.0);
        v[static_cast<std::size_t>(level - 1)] = 1.0;
        return v;
    }

    inline BeamProfile beam(int n, int k, int start, int end, double omega, int levels, int level)
    {
        BeamProfile b;
        b.id = BeamId{n, k};
        b.start_zone = start;
        b.end_zone = end;
        b.blockage_prob = omega;
        b.rssi_dist.assign(static_cast<std::size_t>(end - start), point_mass(levels, level));
        return b;
    }

    // Hand-built road: every beam slot N x K must be listed in `beams`.
    inline Scenario road(int zones, double zone_m, int n, int k, int levels, std::vector<BeamProfile> beams,
                         int mean_speed = 7, int max_speed = 11, double handover = 0.5)
    {
        Scenario s;
        s.zone_length_m = zone_m;
        s.road_length_m = zones * zone_m;
        s.num_mmbs = n;
        s.beams_per_mmbs = k;
        s.num_rssi_levels = levels;
        s.rate_table = RateTable::linear(levels);
        s.handover_time_s = handover;
        s.mean_speed_mps = mean_speed;
        s.max_speed_mps = max_speed;
        s.beams = std::move(beams);
        s.rebuild_index();
        s.validate();
        return s;
    }

    // Four zones of 5 m; (1,1) covers zones 0-2 at level 5, (2,1) covers 1-3
    // at level 8, no blockage, every vehicle drives at 1 m/s.
    inline Scenario toy_road()
    {
        return road(4, 5.0, 2, 1, 10, {beam(1, 1, 0, 3, 0.0, 10, 5), beam(2, 1, 1, 4, 0.0, 10, 8)}, 1, 1, 0.5);
    }

    // Small generated instance whose augmented chains stay well below the
    // oracle state cap.
    inline ScenarioConfig reduced_config()
    {
        ScenarioConfig c;
        c.road_length_m = 50.0;
        c.zone_length_m = 5.0;
        c.num_mmbs = 2;
        c.beams_per_mmbs = 2;
        c.num_rssi_levels = 4;
        c.min_coverage_m = 15.0;
        c.max_coverage_m = 30.0;
        c.mean_speed_mps = 2;
        c.max_speed_mps = 3;
        c.generation_seed = 3;
        return c;
    }

    inline VehicleState vehicle_at(int zone, int speed, BeamId connected = kNoBeam, int direction = 0)
    {
        VehicleState v;
        v.vehicle_id = 1;
        v.zone_index = zone;
        v.direction = direction;
        v.speed_mps = speed;
        v.next_speed_mps = speed;
        v.connected_beam = connected;
        return v;
    }
} // namespace beamql::testing
