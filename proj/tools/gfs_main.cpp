// Command-line front end: train / eval / sample / gradvar.
//
// Exit codes: 0 success, 1 runtime failure, 2 config error, 3 checkpoint
// incompatibility.

#include <cmath>
#include <filesystem>
#include <iostream>
#include <sstream>

#include <CLI11.hpp>
#include <json.hpp>

#include "gfs/config.hpp"
#include "gfs/estimator.hpp"
#include "gfs/rng.hpp"
#include "gfs/trainer.hpp"

using nlohmann::json;

namespace {

int run_train(const std::string& config_path, const std::vector<std::string>& overrides,
              std::string out_dir) {
    gfs::TrainConfig cfg = gfs::load_config(config_path, overrides);
    if (out_dir.empty()) {
        std::ostringstream oss;
        oss << "runs/" << cfg.target_name << "_" << cfg.objective_name << "_s" << cfg.seed;
        out_dir = oss.str();
    }
    gfs::TrainResult r = gfs::train(cfg, out_dir);
    if (r.aborted) {
        std::cerr << r.abort_reason << "\n";
        return 1;
    }
    json line{{"run_dir", r.run_dir},
              {"final_bias_mean", r.final_bias_mean},
              {"last_logz", r.last_logz},
              {"dropped_total", r.dropped_total}};
    std::cout << line.dump() << "\n";
    return 0;
}

int run_eval(const std::string& ckpt_path, std::size_t particles, std::uint64_t seed) {
    gfs::Checkpoint ckpt = gfs::load_checkpoint(ckpt_path);
    gfs::EvalOutput out = gfs::evaluate_checkpoint(ckpt, particles, seed);
    json line{{"logz_estimate", out.estimate.value},
              {"bias_abs", out.bias},
              {"particles", out.estimate.particles},
              {"dropped", out.estimate.dropped},
              {"seed", seed}};
    if (out.estimate.unreliable) line["unreliable"] = true;
    std::cout << line.dump() << "\n";
    return 0;
}

int run_sample(const std::string& ckpt_path, std::size_t count, std::uint64_t seed,
               const std::string& out_path) {
    gfs::Checkpoint ckpt = gfs::load_checkpoint(ckpt_path);
    const gfs::TargetDensity target = gfs::make_target(ckpt.config.target_name);
    const gfs::Schedule schedule = ckpt.config.make_schedule();
    const gfs::ModelConfig mcfg = ckpt.config.make_model_config(target.dim);

    gfs::StreamKey key{seed, gfs::stream_purpose::kSample, 0};
    gfs::TrajectoryBatch batch = gfs::rollout(mcfg, ckpt.params, schedule, target, count,
                                              schedule.sigma, key, ckpt.config.exec());
    std::ostringstream oss;
    for (std::size_t d = 0; d < target.dim; ++d) {
        if (d) oss << ',';
        oss << 'x' << d;
    }
    oss << '\n';
    oss.precision(17);
    const gfs::Tensor& terminal = batch.states[batch.n_steps];
    for (std::size_t j = 0; j < batch.batch; ++j) {
        for (std::size_t d = 0; d < target.dim; ++d) {
            if (d) oss << ',';
            oss << terminal.data[d * batch.batch + j];
        }
        oss << '\n';
    }
    gfs::write_file_atomic(out_path, oss.str());
    return 0;
}

int run_gradvar(const std::string& config_path, const std::vector<std::string>& overrides,
                const std::string& ckpt_path, std::size_t m_batches, std::uint64_t seed,
                const std::string& objectives_csv, bool reuse_batch_seed) {
    gfs::TrainConfig cfg;
    std::int64_t step = 0;
    gfs::ParameterStore params;
    if (!ckpt_path.empty()) {
        gfs::Checkpoint ckpt = gfs::load_checkpoint(ckpt_path);
        cfg = ckpt.config;
        step = ckpt.step;
        for (const auto& [name, entry] : ckpt.params) params.add(name, entry.value);
    } else {
        cfg = gfs::load_config(config_path, overrides);
    }
    const gfs::TargetDensity target = gfs::make_target(cfg.target_name);
    const gfs::Schedule schedule = cfg.make_schedule();
    const gfs::ModelConfig mcfg = cfg.make_model_config(target.dim);
    if (params.names().empty()) params = gfs::init_params(mcfg, cfg.seed);

    std::vector<std::string> names;
    std::stringstream ss(objectives_csv);
    std::string item;
    while (std::getline(ss, item, ',')) {
        if (!item.empty()) names.push_back(item);
    }
    if (names.empty()) names = {cfg.objective_name};

    for (const auto& name : names) {
        gfs::Objective obj;
        try {
            obj = gfs::parse_objective(name);
        } catch (const std::invalid_argument& e) {
            throw gfs::ConfigError(e.what());
        }
        gfs::GradVarianceResult r = gfs::grad_variance(
            mcfg, params, target, schedule, obj, cfg.lambda, cfg.batch, m_batches,
            gfs::CounterRng::derive(seed, 0x6776), cfg.exec(), reuse_batch_seed);
        json line{{"objective", r.objective}, {"variance", r.variance}, {"M", r.batches},
                  {"step", step}};
        std::cout << line.dump() << "\n";
    }
    return 0;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"Diffusion samplers for unnormalized densities: subtrajectory-balance "
                 "training with KL baselines"};
    app.require_subcommand(1);

    std::string config_path, ckpt_path, out_path, objectives_csv;
    std::vector<std::string> overrides;
    std::size_t particles = 2000;
    std::size_t count = 1000;
    std::size_t m_batches = 8;
    std::uint64_t seed = 0;
    bool reuse_batch_seed = false;

    auto* train_cmd = app.add_subcommand("train", "run the training loop");
    train_cmd->add_option("--config", config_path, "JSON config path")->required();
    train_cmd->add_option("--set", overrides, "dotted-path override key=value");
    train_cmd->add_option("--out", out_path, "run directory");

    auto* eval_cmd = app.add_subcommand("eval", "estimate log Z from a checkpoint");
    eval_cmd->add_option("--checkpoint", ckpt_path, "checkpoint path")->required();
    eval_cmd->add_option("--particles", particles, "number of particles");
    eval_cmd->add_option("--seed", seed, "evaluation seed");

    auto* sample_cmd = app.add_subcommand("sample", "write terminal samples as CSV");
    sample_cmd->add_option("--checkpoint", ckpt_path, "checkpoint path")->required();
    sample_cmd->add_option("--count", count, "number of samples");
    sample_cmd->add_option("--seed", seed, "sampling seed");
    sample_cmd->add_option("--out", out_path, "output CSV path")->required();

    auto* gradvar_cmd = app.add_subcommand("gradvar", "per-objective gradient variance");
    gradvar_cmd->add_option("--config", config_path, "JSON config path");
    gradvar_cmd->add_option("--set", overrides, "dotted-path override key=value");
    gradvar_cmd->add_option("--checkpoint", ckpt_path, "parameter snapshot (optional)");
    gradvar_cmd->add_option("--batches", m_batches, "number of independent batches (M)");
    gradvar_cmd->add_option("--seed", seed, "base seed");
    gradvar_cmd->add_option("--objectives", objectives_csv, "comma-separated objective names");
    gradvar_cmd->add_flag("--reuse-batch-seed", reuse_batch_seed,
                          "draw every batch with the same seed (determinism diagnostic)");

    CLI11_PARSE(app, argc, argv);

    try {
        if (train_cmd->parsed()) return run_train(config_path, overrides, out_path);
        if (eval_cmd->parsed()) return run_eval(ckpt_path, particles, seed);
        if (sample_cmd->parsed()) return run_sample(ckpt_path, count, seed, out_path);
        if (gradvar_cmd->parsed()) {
            if (config_path.empty() && ckpt_path.empty()) {
                throw gfs::ConfigError("gradvar needs --config or --checkpoint");
            }
            return run_gradvar(config_path, overrides, ckpt_path, m_batches, seed,
                               objectives_csv, reuse_batch_seed);
        }
    } catch (const gfs::ConfigError& e) {
        std::cerr << "config error: " << e.what() << "\n";
        return 2;
    } catch (const gfs::CheckpointVersionError& e) {
        std::cerr << "checkpoint error: " << e.what() << "\n";
        return 3;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 1;
    }
    return 1;
}
