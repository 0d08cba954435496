#pragma once

#include <filesystem>
#include <optional>

#include <json.hpp>

#include "gkmcmc/diagnostics.hpp"
#include "gkmcmc/problems.hpp"
#include "gkmcmc/samplers.hpp"

namespace gkmcmc {

struct ProblemSpec {
    std::string kind = "tomography";  // tomography | dynamic
    Index nx = 16;
    Index nt = 4;
    Index n_angles = 12;
    Index angles_per_step = 6;
    double span_deg = 160.0;
    double noise_level = 0.02;
    MaternParams matern{0.5, 0.25};
    MaternParams q_time{2.5, 0.1};
    MaternParams q_space{0.5, 0.25};
    std::uint64_t seed = 1;
};

struct SamplerSpec {
    std::string kind = "gengk-lowrank";
    Index samples = 500;
    double burnin = 0.10;
    Index rank = 100;
    std::uint64_t seed = 0;
    Index chains = 1;
    bool store_x = false;
    Index oversample = 5;
    Index lanczos_max_iter = 200;
    double lanczos_tol = 1e-8;
    std::optional<double> lambda0, delta0;        // absent: initialization heuristics
    std::optional<double> fix_lambda, fix_delta;  // freeze the hyperparameters
    std::string preconditioner = "auto";          // auto | laplacian | dense-f0
    double precond_gamma = 1.0;
};

struct OutputSpec {
    std::string dir = "out";
    Index checkpoint_interval = 100;
};

struct ExperimentConfig {
    ProblemSpec problem;
    SamplerSpec sampler;
    OutputSpec output;
};

// Strict schema: unknown keys are rejected by name.
ExperimentConfig parse_config(const nlohmann::json& j);
nlohmann::json config_to_json(const ExperimentConfig& cfg);
ExperimentConfig load_config(const std::filesystem::path& path);
std::string config_hash_hex(const ExperimentConfig& cfg);

TestProblem build_problem(const ProblemSpec& spec);

// Chain CSV: header `t,lambda,delta,accepted,log_weight`, one row per sample.
void write_chain_csv(const std::filesystem::path& path, const Chain& chain);
Chain read_chain_csv(const std::filesystem::path& path, double burnin_fraction);

// Runs the configured experiment; writes chain CSVs, per-chain diagnostics,
// mean/variance field dumps, and a manifest into the output directory.
// `stop_after` ends every chain early after that many samples (checkpoint
// intact), which exists to exercise resume handling.
void run_experiment(const std::filesystem::path& config_path, bool resume = false,
                    std::optional<Index> stop_after = std::nullopt);

void diagnose_chain(const std::filesystem::path& chain_path, const std::filesystem::path& out_dir,
                    double burnin_fraction = 0.10);

// Dense block Gibbs against the configured approximate sampler on the same
// problem, reporting moment discrepancies next to the Monte Carlo noise floor.
struct OracleComparison {
    double mean_rel_discrepancy = 0.0;
    double var_rel_discrepancy = 0.0;
    double mc_noise_floor = 0.0;
    double approx_acceptance_rate = 0.0;
};
OracleComparison oracle_compare(const std::filesystem::path& config_path);

std::uint64_t fnv1a64(std::string_view data);

}  // namespace gkmcmc
