#include "gkmcmc/experiment.hpp"

#include "gkmcmc/mmio.hpp"

#include <chrono>
#include <cstdio>
#include <cstdlib>
#include <fstream>
#include <future>
#include <set>
#include <sstream>

namespace gkmcmc {

namespace fs = std::filesystem;
using nlohmann::json;

std::uint64_t fnv1a64(std::string_view data) {
    std::uint64_t h = 14695981039346656037ULL;
    for (unsigned char c : data) {
        h ^= c;
        h *= 1099511628211ULL;
    }
    return h;
}

namespace {

std::string hex64(std::uint64_t v) {
    char buf[20];
    std::snprintf(buf, sizeof(buf), "%016llx", static_cast<unsigned long long>(v));
    return buf;
}

std::string fmt17(double v) {
    char buf[32];
    std::snprintf(buf, sizeof(buf), "%.17g", v);
    return buf;
}

std::string hash_file(const fs::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw ConfigError("cannot hash missing file " + path.string());
    std::ostringstream ss;
    ss << in.rdbuf();
    return hex64(fnv1a64(ss.str()));
}

// Object reader that rejects unknown keys by name.
class StrictObject {
public:
    StrictObject(const json& j, std::string path) : j_(j), path_(std::move(path)) {
        if (!j_.is_object()) throw ConfigError(path_ + " must be a JSON object");
    }

    template <class T>
    T get(const std::string& key, T fallback) {
        seen_.insert(key);
        if (!j_.contains(key)) return fallback;
        return read<T>(key);
    }

    template <class T>
    std::optional<T> maybe(const std::string& key) {
        seen_.insert(key);
        if (!j_.contains(key)) return std::nullopt;
        return read<T>(key);
    }

    const json* object(const std::string& key) {
        seen_.insert(key);
        if (!j_.contains(key)) return nullptr;
        return &j_.at(key);
    }

    void finish() const {
        for (const auto& item : j_.items())
            if (!seen_.contains(item.key()))
                throw ConfigError("unknown key '" + item.key() + "' in " + path_);
    }

private:
    template <class T>
    T read(const std::string& key) {
        try {
            return j_.at(key).get<T>();
        } catch (const json::exception& e) {
            throw ConfigError("bad value for '" + key + "' in " + path_ + ": " + e.what());
        }
    }

    const json& j_;
    std::string path_;
    std::set<std::string> seen_;
};

MaternParams parse_matern(const json& j, const std::string& path) {
    StrictObject o(j, path);
    MaternParams m;
    m.nu = o.get<double>("nu", m.nu);
    m.ell = o.get<double>("ell", m.ell);
    o.finish();
    return m;
}

json matern_to_json(const MaternParams& m) { return json{{"nu", m.nu}, {"ell", m.ell}}; }

}  // namespace

ExperimentConfig parse_config(const json& j) {
    StrictObject top(j, "config");
    ExperimentConfig cfg;

    if (const json* p = top.object("problem")) {
        StrictObject o(*p, "problem");
        cfg.problem.kind = o.get<std::string>("kind", cfg.problem.kind);
        cfg.problem.nx = o.get<Index>("nx", cfg.problem.nx);
        cfg.problem.nt = o.get<Index>("nt", cfg.problem.nt);
        cfg.problem.n_angles = o.get<Index>("n_angles", cfg.problem.n_angles);
        cfg.problem.angles_per_step = o.get<Index>("angles_per_step", cfg.problem.angles_per_step);
        cfg.problem.span_deg = o.get<double>("span_deg", cfg.problem.span_deg);
        cfg.problem.noise_level = o.get<double>("noise_level", cfg.problem.noise_level);
        if (const json* m = o.object("matern")) cfg.problem.matern = parse_matern(*m, "problem.matern");
        if (const json* m = o.object("q_time")) cfg.problem.q_time = parse_matern(*m, "problem.q_time");
        if (const json* m = o.object("q_space")) cfg.problem.q_space = parse_matern(*m, "problem.q_space");
        cfg.problem.seed = o.get<std::uint64_t>("seed", cfg.problem.seed);
        o.finish();
        if (cfg.problem.kind != "tomography" && cfg.problem.kind != "dynamic")
            throw ConfigError("problem.kind must be 'tomography' or 'dynamic'");
    }

    if (const json* s = top.object("sampler")) {
        StrictObject o(*s, "sampler");
        cfg.sampler.kind = o.get<std::string>("kind", cfg.sampler.kind);
        cfg.sampler.samples = o.get<Index>("samples", cfg.sampler.samples);
        cfg.sampler.burnin = o.get<double>("burnin", cfg.sampler.burnin);
        cfg.sampler.rank = o.get<Index>("rank", cfg.sampler.rank);
        cfg.sampler.seed = o.get<std::uint64_t>("seed", cfg.sampler.seed);
        cfg.sampler.chains = o.get<Index>("chains", cfg.sampler.chains);
        cfg.sampler.store_x = o.get<bool>("store_x", cfg.sampler.store_x);
        cfg.sampler.oversample = o.get<Index>("oversample", cfg.sampler.oversample);
        if (const json* l = o.object("lanczos")) {
            StrictObject lo(*l, "sampler.lanczos");
            cfg.sampler.lanczos_max_iter = lo.get<Index>("max_iter", cfg.sampler.lanczos_max_iter);
            cfg.sampler.lanczos_tol = lo.get<double>("tol", cfg.sampler.lanczos_tol);
            lo.finish();
        }
        cfg.sampler.lambda0 = o.maybe<double>("lambda0");
        cfg.sampler.delta0 = o.maybe<double>("delta0");
        cfg.sampler.fix_lambda = o.maybe<double>("fix_lambda");
        cfg.sampler.fix_delta = o.maybe<double>("fix_delta");
        cfg.sampler.preconditioner = o.get<std::string>("preconditioner", cfg.sampler.preconditioner);
        cfg.sampler.precond_gamma = o.get<double>("precond_gamma", cfg.sampler.precond_gamma);
        o.finish();
        proposal_kind_from_string(cfg.sampler.kind);  // validates
        if (cfg.sampler.chains < 1) throw ConfigError("sampler.chains must be >= 1");
        if (cfg.sampler.fix_lambda.has_value() != cfg.sampler.fix_delta.has_value())
            throw ConfigError("fix_lambda and fix_delta must be given together");
    }

    if (const json* out = top.object("output")) {
        StrictObject o(*out, "output");
        cfg.output.dir = o.get<std::string>("dir", cfg.output.dir);
        cfg.output.checkpoint_interval = o.get<Index>("checkpoint_interval", cfg.output.checkpoint_interval);
        o.finish();
        if (cfg.output.checkpoint_interval < 1) throw ConfigError("output.checkpoint_interval must be >= 1");
    }

    top.finish();
    return cfg;
}

json config_to_json(const ExperimentConfig& cfg) {
    json problem{{"kind", cfg.problem.kind},
                 {"nx", cfg.problem.nx},
                 {"nt", cfg.problem.nt},
                 {"n_angles", cfg.problem.n_angles},
                 {"angles_per_step", cfg.problem.angles_per_step},
                 {"span_deg", cfg.problem.span_deg},
                 {"noise_level", cfg.problem.noise_level},
                 {"matern", matern_to_json(cfg.problem.matern)},
                 {"q_time", matern_to_json(cfg.problem.q_time)},
                 {"q_space", matern_to_json(cfg.problem.q_space)},
                 {"seed", cfg.problem.seed}};
    json sampler{{"kind", cfg.sampler.kind},
                 {"samples", cfg.sampler.samples},
                 {"burnin", cfg.sampler.burnin},
                 {"rank", cfg.sampler.rank},
                 {"seed", cfg.sampler.seed},
                 {"chains", cfg.sampler.chains},
                 {"store_x", cfg.sampler.store_x},
                 {"oversample", cfg.sampler.oversample},
                 {"lanczos", json{{"max_iter", cfg.sampler.lanczos_max_iter},
                                  {"tol", cfg.sampler.lanczos_tol}}},
                 {"preconditioner", cfg.sampler.preconditioner},
                 {"precond_gamma", cfg.sampler.precond_gamma}};
    if (cfg.sampler.lambda0) sampler["lambda0"] = *cfg.sampler.lambda0;
    if (cfg.sampler.delta0) sampler["delta0"] = *cfg.sampler.delta0;
    if (cfg.sampler.fix_lambda) sampler["fix_lambda"] = *cfg.sampler.fix_lambda;
    if (cfg.sampler.fix_delta) sampler["fix_delta"] = *cfg.sampler.fix_delta;
    json output{{"dir", cfg.output.dir}, {"checkpoint_interval", cfg.output.checkpoint_interval}};
    return json{{"problem", problem}, {"sampler", sampler}, {"output", output}};
}

ExperimentConfig load_config(const fs::path& path) {
    std::ifstream in(path);
    if (!in) throw ConfigError("cannot open config " + path.string());
    json j;
    try {
        in >> j;
    } catch (const json::exception& e) {
        throw ConfigError("config " + path.string() + " is not valid JSON: " + e.what());
    }
    return parse_config(j);
}

std::string config_hash_hex(const ExperimentConfig& cfg) { return hex64(fnv1a64(config_to_json(cfg).dump())); }

TestProblem build_problem(const ProblemSpec& spec) {
    RngStream rng(spec.seed, 0);
    TestProblem p;
    if (spec.kind == "tomography") {
        p = make_tomography_problem(spec.nx, spec.n_angles, spec.noise_level, spec.matern, rng);
    } else if (spec.kind == "dynamic") {
        p = make_dynamic_problem(spec.nx, spec.nt, spec.angles_per_step, spec.span_deg, spec.noise_level,
                                 spec.q_time, spec.q_space, rng);
    } else {
        throw ConfigError("unknown problem kind '" + spec.kind + "'");
    }
    p.meta.seed = spec.seed;
    return p;
}

void write_chain_csv(const fs::path& path, const Chain& chain) {
    std::ofstream out(path);
    if (!out) throw ConfigError("cannot open " + path.string() + " for writing");
    out << "t,lambda,delta,accepted,log_weight\n";
    for (Index t = 0; t < chain.size(); ++t) {
        const auto i = static_cast<std::size_t>(t);
        out << (t + 1) << "," << fmt17(chain.lambda[i]) << "," << fmt17(chain.delta[i]) << ","
            << int(chain.accepted[i]) << "," << fmt17(chain.log_weight[i]) << "\n";
    }
}

Chain read_chain_csv(const fs::path& path, double burnin_fraction) {
    std::ifstream in(path);
    if (!in) throw ConfigError("cannot open chain file " + path.string());
    std::string line;
    if (!std::getline(in, line) || line != "t,lambda,delta,accepted,log_weight")
        throw ConfigError(path.string() + ": missing or malformed chain CSV header");
    Chain chain;
    chain.burnin_fraction = burnin_fraction;
    Index expected_t = 1;
    while (std::getline(in, line)) {
        if (line.empty()) continue;
        std::replace(line.begin(), line.end(), ',', ' ');
        std::istringstream row(line);
        Index t = 0;
        double lam = 0, del = 0, logw = 0;
        int acc = 0;
        if (!(row >> t >> lam >> del >> acc >> logw) || t != expected_t)
            throw ConfigError(path.string() + ": malformed chain CSV row " + std::to_string(expected_t));
        chain.lambda.push_back(lam);
        chain.delta.push_back(del);
        chain.accepted.push_back(acc ? 1 : 0);
        chain.log_weight.push_back(logw);
        ++expected_t;
    }
    chain.planned = chain.size();
    return chain;
}

namespace {

SamplerConfig make_sampler_config(const SamplerSpec& s, double lambda0, double delta0) {
    SamplerConfig c;
    c.samples = s.samples;
    c.burnin_fraction = s.burnin;
    c.rank = s.rank;
    c.lanczos = LanczosConfig{s.lanczos_max_iter, s.lanczos_tol, true};
    c.sqrt_policy.lanczos = c.lanczos;
    c.kind = proposal_kind_from_string(s.kind);
    c.store_x = s.store_x;
    c.seed = s.seed;
    c.oversample = s.oversample;
    c.lambda0 = lambda0;
    c.delta0 = delta0;
    if (s.fix_lambda) c.fixed_hp = HyperParams{*s.fix_lambda, *s.fix_delta};
    c.validate();
    return c;
}

bool kind_uses_gengk_state(ProposalKind k) {
    return k == ProposalKind::GenGKLowRank || k == ProposalKind::PrecondLanczos;
}

// lambda0 from the Haar detail heuristic, delta0 from projected GCV; either is
// overridden by an explicit config value.
struct Initialization {
    double lambda0 = 1.0;
    double delta0 = 1.0;
    std::shared_ptr<const GenGKState> state;  // reusable when the sampler wants one
};

Initialization initialize_hyperparams(const TestProblem& p, const SamplerSpec& s, ProposalKind kind) {
    Initialization init;
    init.lambda0 = s.lambda0 ? *s.lambda0 : estimate_lambda0(p.model.b, p.meta.n_det);
    if (s.delta0) {
        init.delta0 = *s.delta0;
        return init;
    }
    const Index k = kind_uses_gengk_state(kind)
                        ? s.rank
                        : std::min<Index>(20, std::min(p.model.m(), p.model.n()));
    init.state = std::make_shared<const GenGKState>(
        gengk_bidiagonalize(p.model.A, p.model.R, p.model.Q, p.model.b, p.model.mu, k, true));
    init.delta0 = estimate_delta0(*init.state, init.lambda0).delta0;
    return init;
}

OperatorPtr make_preconditioner(const TestProblem& p, const SamplerSpec& s, const SamplerConfig& c) {
    std::string choice = s.preconditioner;
    if (choice == "auto") choice = p.meta.kind == "dynamic" ? "laplacian" : "dense-f0";
    if (choice == "dense-f0")
        return dense_f_preconditioner(p.model, HyperParams{c.lambda0, c.delta0});
    if (choice == "laplacian") {
        const auto* kron = dynamic_cast<const KroneckerCovariance*>(p.model.Q.get());
        if (kron) return laplacian_preconditioner(p.meta.nx, p.meta.nt, s.precond_gamma, kron->left());
        const ScaledIdentityCovariance unit_time(1, 1.0);
        return laplacian_preconditioner(p.meta.nx, 1, s.precond_gamma, unit_time);
    }
    throw ConfigError("unknown preconditioner '" + s.preconditioner + "'");
}

SamplerResources build_resources(const TestProblem& p, const SamplerSpec& s, const SamplerConfig& c,
                                 std::shared_ptr<const GenGKState> state) {
    SamplerResources res;
    if (kind_uses_gengk_state(c.kind)) {
        if (!state)
            state = std::make_shared<const GenGKState>(
                gengk_bidiagonalize(p.model.A, p.model.R, p.model.Q, p.model.b, p.model.mu, c.rank, true));
        res.state = std::move(state);
    }
    switch (c.kind) {
        case ProposalKind::GenGKLowRank:
            res.factors = std::make_shared<const LowRankSqrtFactors>(
                lowrank_sqrt_factors(*res.state, c.sqrt_policy));
            break;
        case ProposalKind::PrecondLanczos:
            res.precond = make_preconditioner(p, s, c);
            break;
        case ProposalKind::Tsvd:
            res.svd = std::make_shared<const SvdProposalFactors>(
                tsvd_proposal_factors(p.model, prior_chol_lower(p.model), c.rank));
            break;
        case ProposalKind::Rsvd: {
            RngStream factor_rng(c.seed, 0x1defaced);
            res.svd = std::make_shared<const SvdProposalFactors>(rsvd_proposal_factors(
                p.model, prior_chol_lower(p.model), c.rank, c.oversample, factor_rng));
            break;
        }
        case ProposalKind::ExactDense:
            res.dense = std::make_shared<const DensePosteriorWorkspace>(p.model);
            break;
    }
    return res;
}

fs::path resolve_output_dir(const std::string& dir) {
    fs::path p(dir);
    if (p.is_relative())
        if (const char* root = std::getenv("GKMCMC_OUTPUT_ROOT")) p = fs::path(root) / p;
    return p;
}

json rng_to_json(const RngStream::State& s) {
    return json{{"state_hi", s.state_hi}, {"state_lo", s.state_lo},   {"inc_hi", s.inc_hi},
                {"inc_lo", s.inc_lo},     {"have_spare", s.have_spare}, {"spare", s.spare}};
}

RngStream::State rng_from_json(const json& j) {
    RngStream::State s;
    s.state_hi = j.at("state_hi").get<std::uint64_t>();
    s.state_lo = j.at("state_lo").get<std::uint64_t>();
    s.inc_hi = j.at("inc_hi").get<std::uint64_t>();
    s.inc_lo = j.at("inc_lo").get<std::uint64_t>();
    s.have_spare = j.at("have_spare").get<bool>();
    s.spare = j.at("spare").get<double>();
    return s;
}

json vector_to_json(const Vector& v) {
    json a = json::array();
    for (Index i = 0; i < v.size(); ++i) a.push_back(v[i]);
    return a;
}

Vector vector_from_json(const json& a) {
    Vector v(static_cast<Index>(a.size()));
    for (Index i = 0; i < v.size(); ++i) v[i] = a.at(static_cast<std::size_t>(i)).get<double>();
    return v;
}

void write_checkpoint(const fs::path& path, const std::string& config_hash, Index chain_id,
                      const Chain& chain, const McmcState& cur, const RngStream& rng) {
    json j;
    j["config_hash"] = config_hash;
    j["chain"] = chain_id;
    j["t"] = chain.size();
    j["rng"] = rng_to_json(rng.save());
    j["x"] = vector_to_json(cur.x);
    j["weight_core"] = cur.weight_core;
    j["resid_norm_sq"] = cur.resid_norm_sq;
    j["prior_norm_sq"] = cur.prior_norm_sq;
    j["retained_count"] = chain.retained_count;
    j["x_mean"] = vector_to_json(chain.x_mean);
    j["x_m2"] = vector_to_json(chain.x_m2);
    if (chain.x_states) {
        const Matrix& xs = *chain.x_states;
        json cols = json::array();
        for (Index t = 0; t < chain.size(); ++t) cols.push_back(vector_to_json(xs.col(t)));
        j["x_states"] = std::move(cols);
    }
    std::ofstream out(path);
    out << j.dump() << "\n";
}

// Thrown by the iteration callback to emulate an interrupted run.
struct StopRun {};

struct ChainFiles {
    fs::path csv, checkpoint, diagnostics, acf, x_mean, x_var;
};

ChainFiles chain_files(const fs::path& dir, Index chain_id) {
    const std::string tag = "chain_" + std::to_string(chain_id);
    return {dir / (tag + ".csv"),          dir / (tag + ".ckpt.json"), dir / (tag + ".diagnostics.json"),
            dir / (tag + ".acf.csv"),      dir / (tag + ".x_mean.mtx"), dir / (tag + ".x_var.mtx")};
}

// Returns true if the chain ran to completion (false: stopped early on purpose).
bool run_one_chain(const HierarchicalModel& model, const SamplerConfig& scfg, const SamplerResources& res,
                   const std::string& config_hash, Index chain_id, const ChainFiles& files,
                   Index checkpoint_interval, bool resume, std::optional<Index> stop_after, Chain& chain) {
    RngStream rng(scfg.seed, static_cast<std::uint64_t>(chain_id));
    McmcState start;
    bool resuming = false;

    if (resume && fs::exists(files.checkpoint)) {
        std::ifstream in(files.checkpoint);
        json j;
        try {
            in >> j;
        } catch (const json::exception& e) {
            throw CheckpointError("unreadable checkpoint " + files.checkpoint.string() + ": " + e.what());
        }
        if (j.at("config_hash").get<std::string>() != config_hash)
            throw CheckpointError("checkpoint " + files.checkpoint.string() +
                                  " belongs to a different configuration; refusing to resume");
        const auto t_done = j.at("t").get<Index>();
        chain = read_chain_csv(files.csv, scfg.burnin_fraction);
        if (chain.size() < t_done)
            throw CheckpointError("chain CSV has fewer rows than the checkpoint expects");
        chain.lambda.resize(static_cast<std::size_t>(t_done));
        chain.delta.resize(static_cast<std::size_t>(t_done));
        chain.accepted.resize(static_cast<std::size_t>(t_done));
        chain.log_weight.resize(static_cast<std::size_t>(t_done));
        chain.planned = scfg.samples;
        chain.burnin_fraction = scfg.burnin_fraction;
        chain.n_param = model.n();
        chain.retained_count = j.at("retained_count").get<Index>();
        chain.x_mean = vector_from_json(j.at("x_mean"));
        chain.x_m2 = vector_from_json(j.at("x_m2"));
        if (scfg.store_x) {
            chain.x_states = Matrix::Zero(model.n(), scfg.samples);
            if (j.contains("x_states")) {
                const auto& cols = j.at("x_states");
                for (Index t = 0; t < std::min<Index>(t_done, static_cast<Index>(cols.size())); ++t)
                    chain.x_states->col(t) = vector_from_json(cols.at(static_cast<std::size_t>(t)));
            }
        }
        start.x = vector_from_json(j.at("x"));
        start.weight_core = j.at("weight_core").get<double>();
        start.resid_norm_sq = j.at("resid_norm_sq").get<double>();
        start.prior_norm_sq = j.at("prior_norm_sq").get<double>();
        rng.restore(rng_from_json(j.at("rng")));
        resuming = true;
    }

    auto callback = [&](Index t, const Chain& c, const McmcState& cur, const RngStream& r) {
        const bool stop_here = stop_after && t >= *stop_after && t < scfg.samples;
        if (t % checkpoint_interval == 0 || t == scfg.samples || stop_here) {
            write_chain_csv(files.csv, c);
            write_checkpoint(files.checkpoint, config_hash, chain_id, c, cur, r);
        }
        if (stop_here) throw StopRun{};
    };

    try {
        run_chain(model, scfg, res, rng, chain, resuming ? &start : nullptr, callback);
    } catch (const StopRun&) {
        return false;
    }
    write_chain_csv(files.csv, chain);
    return true;
}

void write_diagnostics_files(const Chain& chain, const ChainFiles& files, json& manifest_files) {
    const ChainStats stats = summarize(chain);
    json d;
    d["retained"] = stats.retained;
    d["acceptance_rate"] = stats.acceptance_rate;
    d["acceptance_rate_post_burnin"] = stats.acceptance_rate_post_burnin;
    d["ess_lambda"] = stats.lambda.ess;
    d["ess_delta"] = stats.delta.ess;
    d["geweke_z_lambda"] = stats.lambda.geweke_z;
    d["geweke_p_lambda"] = stats.lambda.geweke_p;
    d["geweke_z_delta"] = stats.delta.geweke_z;
    d["geweke_p_delta"] = stats.delta.geweke_p;
    d["ci_lambda"] = {stats.lambda.ci_lo, stats.lambda.ci_hi};
    d["ci_delta"] = {stats.delta.ci_lo, stats.delta.ci_hi};
    d["mean_lambda"] = stats.lambda.mean;
    d["mean_delta"] = stats.delta.mean;
    {
        std::ofstream out(files.diagnostics);
        out << d.dump(2) << "\n";
    }
    {
        std::ofstream out(files.acf);
        out << "lag,acf_lambda,acf_delta\n";
        const std::size_t lags = std::min(stats.lambda.acf.size(), stats.delta.acf.size());
        for (std::size_t k = 0; k < lags; ++k)
            out << k << "," << fmt17(stats.lambda.acf[k]) << "," << fmt17(stats.delta.acf[k]) << "\n";
    }
    if (stats.x_mean.size() > 0) {
        mmio::write_array(files.x_mean, stats.x_mean);
        mmio::write_array(files.x_var, stats.x_var);
        manifest_files[files.x_mean.filename().string()] = hash_file(files.x_mean);
        manifest_files[files.x_var.filename().string()] = hash_file(files.x_var);
    }
    manifest_files[files.diagnostics.filename().string()] = hash_file(files.diagnostics);
    manifest_files[files.acf.filename().string()] = hash_file(files.acf);
}

}  // namespace

void run_experiment(const fs::path& config_path, bool resume, std::optional<Index> stop_after) {
    const auto t0 = std::chrono::steady_clock::now();
    const ExperimentConfig cfg = load_config(config_path);
    const std::string hash = config_hash_hex(cfg);
    const fs::path outdir = resolve_output_dir(cfg.output.dir);
    fs::create_directories(outdir);

    const TestProblem problem = build_problem(cfg.problem);
    const auto init = initialize_hyperparams(problem, cfg.sampler, proposal_kind_from_string(cfg.sampler.kind));
    const SamplerConfig scfg = make_sampler_config(cfg.sampler, init.lambda0, init.delta0);
    const SamplerResources res = build_resources(problem, cfg.sampler, scfg, init.state);

    const Index n_chains = cfg.sampler.chains;
    std::vector<Chain> chains(static_cast<std::size_t>(n_chains));
    std::vector<bool> completed(static_cast<std::size_t>(n_chains), false);

    auto run_one = [&](Index i) {
        return run_one_chain(problem.model, scfg, res, hash, i, chain_files(outdir, i),
                             cfg.output.checkpoint_interval, resume, stop_after,
                             chains[static_cast<std::size_t>(i)]);
    };
    if (n_chains == 1) {
        completed[0] = run_one(0);
    } else {
        std::vector<std::future<bool>> futures;
        futures.reserve(static_cast<std::size_t>(n_chains));
        for (Index i = 0; i < n_chains; ++i)
            futures.push_back(std::async(std::launch::async, run_one, i));
        for (Index i = 0; i < n_chains; ++i) completed[static_cast<std::size_t>(i)] = futures[i].get();
    }

    const bool all_done = std::all_of(completed.begin(), completed.end(), [](bool b) { return b; });
    if (!all_done) return;  // interrupted on purpose; checkpoints are in place

    json manifest;
    manifest["config_hash"] = hash;
    manifest["seed"] = cfg.sampler.seed;
    manifest["sampler"] = cfg.sampler.kind;
    manifest["problem"] = cfg.problem.kind;
    manifest["lambda0"] = scfg.lambda0;
    manifest["delta0"] = scfg.delta0;
    manifest["chains"] = n_chains;
    json files_json = json::object();
    json acceptance = json::array();
    for (Index i = 0; i < n_chains; ++i) {
        const auto files = chain_files(outdir, i);
        const Chain& chain = chains[static_cast<std::size_t>(i)];
        files_json[files.csv.filename().string()] = hash_file(files.csv);
        acceptance.push_back(chain.acceptance_rate());
        try {
            write_diagnostics_files(chain, files, files_json);
        } catch (const std::exception& e) {
            // degenerate chain (too short for the estimators): record the reason
            // and keep the rest of the run's artifacts intact
            std::ofstream out(files.diagnostics);
            out << json{{"error", e.what()}}.dump(2) << "\n";
            files_json[files.diagnostics.filename().string()] = hash_file(files.diagnostics);
        }
        if (chain.x_states) {
            const fs::path xs = outdir / ("chain_" + std::to_string(i) + ".x_states.mtx");
            mmio::write_array(xs, *chain.x_states);
            files_json[xs.filename().string()] = hash_file(xs);
        }
    }
    manifest["acceptance_rate"] = acceptance;
    manifest["files"] = files_json;
    manifest["wall_time_s"] =
        std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    std::ofstream mout(outdir / "manifest.json");
    mout << manifest.dump(2) << "\n";
}

void diagnose_chain(const fs::path& chain_path, const fs::path& out_dir, double burnin_fraction) {
    const Chain chain = read_chain_csv(chain_path, burnin_fraction);
    fs::create_directories(out_dir);
    ChainFiles files;
    files.diagnostics = out_dir / "diagnostics.json";
    files.acf = out_dir / "acf.csv";
    files.x_mean = out_dir / "x_mean.mtx";
    files.x_var = out_dir / "x_var.mtx";
    json dummy = json::object();
    write_diagnostics_files(chain, files, dummy);
}

OracleComparison oracle_compare(const fs::path& config_path) {
    const ExperimentConfig cfg = load_config(config_path);
    const TestProblem problem = build_problem(cfg.problem);
    const auto kind = proposal_kind_from_string(cfg.sampler.kind);
    if (kind == ProposalKind::ExactDense)
        throw ConfigError("oracle-compare needs an approximate sampler to compare against");
    const auto init = initialize_hyperparams(problem, cfg.sampler, kind);
    const SamplerConfig approx_cfg = make_sampler_config(cfg.sampler, init.lambda0, init.delta0);
    SamplerConfig dense_cfg = approx_cfg;
    dense_cfg.kind = ProposalKind::ExactDense;

    const SamplerResources approx_res = build_resources(problem, cfg.sampler, approx_cfg, init.state);
    SamplerResources dense_res;
    dense_res.dense = std::make_shared<const DensePosteriorWorkspace>(problem.model);

    // Same seed, split streams.
    RngStream dense_rng(approx_cfg.seed, 0);
    RngStream approx_rng(approx_cfg.seed, 1);
    Chain dense_chain, approx_chain;
    run_chain(problem.model, dense_cfg, dense_res, dense_rng, dense_chain, nullptr, {});
    run_chain(problem.model, approx_cfg, approx_res, approx_rng, approx_chain, nullptr, {});

    const Vector mean_d = dense_chain.x_mean, mean_a = approx_chain.x_mean;
    const Vector var_d = dense_chain.x_variance(), var_a = approx_chain.x_variance();
    OracleComparison out;
    out.mean_rel_discrepancy = (mean_a - mean_d).norm() / mean_d.norm();
    out.var_rel_discrepancy = (var_a - var_d).norm() / var_d.norm();
    const double rd = static_cast<double>(dense_chain.retained_count);
    const double ra = static_cast<double>(approx_chain.retained_count);
    out.mc_noise_floor = 4.0 * std::sqrt((var_d / rd + var_a / ra).sum()) / mean_d.norm();
    out.approx_acceptance_rate = approx_chain.acceptance_rate();

    const fs::path outdir = resolve_output_dir(cfg.output.dir);
    fs::create_directories(outdir);
    json j{{"mean_rel_discrepancy", out.mean_rel_discrepancy},
           {"var_rel_discrepancy", out.var_rel_discrepancy},
           {"mc_noise_floor", out.mc_noise_floor},
           {"approx_acceptance_rate", out.approx_acceptance_rate},
           {"dense_retained", dense_chain.retained_count},
           {"approx_retained", approx_chain.retained_count}};
    std::ofstream jout(outdir / "oracle_compare.json");
    jout << j.dump(2) << "\n";
    return out;
}

}  // namespace gkmcmc
