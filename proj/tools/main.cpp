#include <CLI11.hpp>

#include <cstdio>
#include <exception>

#include "gkmcmc/experiment.hpp"

namespace {

int guarded(const std::function<void()>& body) {
    try {
        body();
        return 0;
    } catch (const gkmcmc::ConfigError& e) {
        std::fprintf(stderr, "config error: %s\n", e.what());
        return 2;
    } catch (const std::invalid_argument& e) {
        std::fprintf(stderr, "config error: %s\n", e.what());
        return 2;
    } catch (const gkmcmc::NumericError& e) {
        std::fprintf(stderr, "numeric failure: %s\n", e.what());
        return 3;
    } catch (const gkmcmc::CheckpointError& e) {
        std::fprintf(stderr, "checkpoint mismatch: %s\n", e.what());
        return 4;
    } catch (const std::exception& e) {
        std::fprintf(stderr, "error: %s\n", e.what());
        return 1;
    }
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"Krylov-based MCMC experiments for hierarchical Bayesian linear inverse problems"};
    app.require_subcommand(1);

    std::string config_path, chain_path, out_dir = "diagnostics";
    double burnin = 0.10;
    bool resume = false;
    long long stop_after = 0;

    auto* run = app.add_subcommand("run", "run a configured experiment");
    run->add_option("--config", config_path, "experiment config JSON")->required();
    run->add_flag("--resume", resume, "resume from a checkpoint if present");
    run->add_option("--stop-after", stop_after,
                    "stop every chain after this many samples (testing aid)");

    auto* diag = app.add_subcommand("diagnose", "diagnostics report for a chain CSV");
    diag->add_option("--chain", chain_path, "chain CSV produced by run")->required();
    diag->add_option("--out", out_dir, "output directory for the report");
    diag->add_option("--burnin", burnin,
                     "burn-in fraction; floor(burnin * T) leading samples are dropped");

    auto* oracle = app.add_subcommand("oracle-compare", "dense block Gibbs vs the configured sampler");
    oracle->add_option("--config", config_path, "experiment config JSON")->required();

    CLI11_PARSE(app, argc, argv);

    if (run->parsed())
        return guarded([&] {
            gkmcmc::run_experiment(config_path, resume,
                                   stop_after > 0 ? std::optional<gkmcmc::Index>(stop_after)
                                                  : std::nullopt);
        });
    if (diag->parsed())
        return guarded([&] { gkmcmc::diagnose_chain(chain_path, out_dir, burnin); });
    return guarded([&] {
        const auto cmp = gkmcmc::oracle_compare(config_path);
        std::printf("mean_rel_discrepancy %.6g\nvar_rel_discrepancy %.6g\nmc_noise_floor %.6g\n"
                    "approx_acceptance_rate %.6g\n",
                    cmp.mean_rel_discrepancy, cmp.var_rel_discrepancy, cmp.mc_noise_floor,
                    cmp.approx_acceptance_rate);
    });
}
