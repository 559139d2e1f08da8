#include "beamql/beamql.hpp"

#include <CLI11.hpp>

#include <algorithm>
#include <cstdio>
#include <fstream>
#include <iostream>
#include <limits>

namespace
{
    using namespace beamql;

    void print_metrics(const std::vector<TrialResult> &results)
    {
        std::vector<MetricsRecord> records;
        for (const auto &r : results)
            records.push_back(r.record);
        write_metrics_csv(std::cout, records);
    }

    int cmd_simulate(const std::string &config_path, const std::string &out, std::optional<std::uint64_t> seed,
                     const std::string &mode)
    {
        ExperimentConfig c = load_config(config_path);
        if (seed)
            c.experiment.seeds = {*seed};
        if (mode == "event_serial")
            c.experiment.mode = ExecutionMode::EventSerial;
        else if (mode == "concurrent")
            c.experiment.mode = ExecutionMode::Concurrent;
        const Scenario s = c.scenario();
        const auto results =
            run_cells(s, c.schedule, c.experiment, simulate_cells(c.experiment), c.experiment.workers);
        if (!out.empty())
            write_outputs(results, s, out);
        print_metrics(results);
        return 0;
    }

    int cmd_sweep(const std::string &config_path, const std::string &out)
    {
        const ExperimentConfig c = load_config(config_path);
        const Scenario s = c.scenario();
        const auto results = run_cells(s, c.schedule, c.experiment, sweep_cells(c.experiment), c.experiment.workers);
        write_outputs(results, s, out);
        std::cerr << results.size() << " cells written to " << out << '\n';
        return 0;
    }

    int cmd_oracle(const std::string &config_path, const std::string &policy_arg, int zones,
                   std::uint64_t epochs, std::size_t cap)
    {
        const ExperimentConfig c = load_config(config_path);
        Scenario s = c.scenario();
        if (zones > 0)
            s = truncate_scenario(s, zones);
        const PolicyKind kind = parse_policy(policy_arg, "--policy");
        const std::uint64_t seed = c.experiment.seeds.front();

        std::optional<TrainingResult> trained;
        OraclePolicy policy;
        switch (kind)
        {
        case PolicyKind::MaxRate:
            policy = MaxRatePolicy{};
            break;
        case PolicyKind::BlockageAware:
            policy = BlockageAwarePolicy{};
            break;
        case PolicyKind::UpperBound:
            policy = UpperBoundPolicy{};
            break;
        case PolicyKind::ParallelQl:
        case PolicyKind::Ql:
            trained = run_training(s, c.schedule, training_options(c.experiment, kind, seed));
            policy = TableOracle{&trained->table};
            break;
        }

        const EnumeratedChain chain = enumerate_chain(s, policy, cap);
        const Eigen::VectorXd g = average_reward(chain);
        const EvaluationTotals sim = simulate_oracle_policy(s, policy, epochs, evaluation_seed(seed));

        const double exact = g.maxCoeff();
        const double spread = exact - g.minCoeff();
        const double est = sim.avg_rate();
        std::printf("policy            %s\n", policy_name(kind));
        std::printf("zones             %d\n", s.num_zones());
        std::printf("augmented_states  %zu\n", chain.states.size());
        std::printf("closed_classes    %zu\n", closed_classes(support_graph(chain.transition)).size());
        std::printf("exact_gbps        %.9f\n", exact);
        std::printf("exact_spread      %.3e\n", spread);
        std::printf("simulated_gbps    %.9f\n", est);
        std::printf("simulated_epochs  %llu\n", static_cast<unsigned long long>(sim.epochs));
        std::printf("relative_error    %.6f\n", exact > 0.0 ? std::abs(est - exact) / exact : std::abs(est));
        return 0;
    }

    int cmd_inspect(const std::string &path, bool dump)
    {
        std::ifstream f(path, std::ios::binary);
        if (!f)
            throw std::runtime_error("cannot read '" + path + "'");
        const Snapshot snap = read_snapshot(f);
        const QTableDims &d = snap.table.dims();
        const QValues &q = snap.table.values();

        std::size_t nonzero = 0;
        std::size_t visited_states = 0;
        double lo = std::numeric_limits<double>::infinity();
        double hi = -std::numeric_limits<double>::infinity();
        for (std::size_t st = 0; st < q.num_states(); ++st)
        {
            bool any = false;
            for (std::size_t a = 0; a < q.num_actions(); ++a)
            {
                const double v = q.get(st, a);
                if (v == 0.0)
                    continue;
                ++nonzero;
                any = true;
                lo = std::min(lo, v);
                hi = std::max(hi, v);
            }
            visited_states += any;
        }

        std::printf("scenario_hash  %s\n", snap.meta.scenario_hash.c_str());
        std::printf("schedule       %s\n", snap.meta.schedule.c_str());
        std::printf("updates        %llu\n", static_cast<unsigned long long>(snap.meta.updates));
        std::printf("dims           M=%d N=%d K=%d vmax=%d\n", d.num_rssi_levels, d.num_mmbs, d.beams_per_mmbs,
                    d.max_speed_mps);
        std::printf("states         %zu (%zu with nonzero entries)\n", q.num_states(), visited_states);
        std::printf("actions        %zu\n", q.num_actions());
        std::printf("nonzero cells  %zu\n", nonzero);
        if (nonzero > 0)
            std::printf("q range        [%.6f, %.6f]\n", lo, hi);

        if (dump)
        {
            std::printf("rssi_level,mmbs,beam,speed,direction,greedy_mmbs,greedy_beam,q_value\n");
            for (std::size_t st = 0; st < q.num_states(); ++st)
            {
                std::size_t best = q.num_actions();
                for (std::size_t a = 0; a < q.num_actions(); ++a)
                {
                    const double v = q.get(st, a);
                    if (v != 0.0 && (best == q.num_actions() || v > q.get(st, best)))
                        best = a;
                }
                if (best == q.num_actions())
                    continue;
                const SystemState s = d.state_at(st);
                const BeamId b = d.beam(static_cast<int>(best));
                std::printf("%d,%d,%d,%d,%d,%d,%d,%.6f\n", s.rssi_level, s.beam.mmbs, s.beam.beam, s.speed,
                            s.direction, b.mmbs, b.beam, q.get(st, best));
            }
        }
        return 0;
    }
} // namespace

int main(int argc, char **argv)
{
    CLI::App app{"Beam association for vehicular mmWave networks: simulation, learning and exact evaluation"};
    app.require_subcommand(1);

    std::string config;
    std::string out;
    std::optional<std::uint64_t> seed_override;
    std::string mode;
    auto *simulate = app.add_subcommand("simulate", "Train (if learned) and evaluate the configured policy");
    simulate->add_option("--config", config, "Config file")->required()->check(CLI::ExistingFile);
    simulate->add_option("--out", out, "Output directory");
    simulate->add_option("--seed-override", seed_override, "Run this seed only");
    simulate->add_option("--mode", mode, "Execution mode")
        ->check(CLI::IsMember({"event_serial", "concurrent"}));

    auto *sweep = app.add_subcommand("sweep", "Run the configured sweep over all comparison policies");
    sweep->add_option("--config", config, "Config file")->required()->check(CLI::ExistingFile);
    sweep->add_option("--out", out, "Output directory")->required();

    std::string policy;
    int zones = 0;
    std::uint64_t epochs = 1000000;
    std::size_t cap = kDefaultStateCap;
    auto *oracle = app.add_subcommand("oracle", "Exact long-run rate of a policy against a simulated estimate");
    oracle->add_option("--config", config, "Config file")->required()->check(CLI::ExistingFile);
    oracle->add_option("--policy", policy, "Policy name")->required();
    oracle->add_option("--zones", zones, "Keep only the first N zones")->check(CLI::PositiveNumber);
    oracle->add_option("--epochs", epochs, "Simulated decision epochs")->check(CLI::PositiveNumber);
    oracle->add_option("--state-cap", cap, "Maximum augmented states")->check(CLI::PositiveNumber);

    std::string snapshot;
    bool dump = false;
    auto *inspect = app.add_subcommand("inspect-qtable", "Summarize a Q-table snapshot");
    inspect->add_option("snapshot", snapshot, "Snapshot file")->required()->check(CLI::ExistingFile);
    inspect->add_flag("--greedy", dump, "Print the greedy action of every visited state");

    CLI11_PARSE(app, argc, argv);

    try
    {
        if (*simulate)
            return cmd_simulate(config, out, seed_override, mode);
        if (*sweep)
            return cmd_sweep(config, out);
        if (*oracle)
            return cmd_oracle(config, policy, zones, epochs, cap);
        if (*inspect)
            return cmd_inspect(snapshot, dump);
    }
    catch (const std::exception &e)
    {
        std::cerr << "error: " << e.what() << '\n';
        return 1;
    }
    return 0;
}
