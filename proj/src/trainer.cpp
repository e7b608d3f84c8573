#include "gfs/trainer.hpp"

#include <chrono>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <sstream>

#include <json.hpp>

#include "gfs/rng.hpp"

namespace gfs {

using nlohmann::json;

namespace {
constexpr double kBeta1 = 0.9;
constexpr double kBeta2 = 0.999;
constexpr double kAdamEps = 1e-8;
constexpr std::uint64_t kEvalSeedTag = 0x6576616c;  // "eval"
}  // namespace

double LrMap::rate_for(const std::string& name) const {
    if (name.rfind("drift.", 0) == 0) return lr_drift;
    if (name.rfind("flow.", 0) == 0) return lr_flow;
    throw std::invalid_argument("LrMap: no learning rate for parameter " + name);
}

AdamState AdamState::like(const ParameterStore& store) {
    AdamState s;
    for (const auto& [name, entry] : store) {
        s.slots[name] = Slot{Tensor::zeros(entry.value.shape), Tensor::zeros(entry.value.shape)};
    }
    return s;
}

void adam_step(ParameterStore& store, AdamState& state, const LrMap& lr, std::int64_t t) {
    for (const auto& [name, entry] : store) {
        for (double g : entry.grad.data) {
            if (!std::isfinite(g)) {
                ++state.skipped;
                return;
            }
        }
    }
    const double c1 = 1.0 - std::pow(kBeta1, static_cast<double>(t));
    const double c2 = 1.0 - std::pow(kBeta2, static_cast<double>(t));
    for (auto& [name, entry] : store) {
        auto& slot = state.slots.at(name);
        const double rate = lr.rate_for(name);
        for (std::size_t i = 0; i < entry.value.data.size(); ++i) {
            const double g = entry.grad.data[i];
            slot.m.data[i] = kBeta1 * slot.m.data[i] + (1.0 - kBeta1) * g;
            slot.v.data[i] = kBeta2 * slot.v.data[i] + (1.0 - kBeta2) * g * g;
            const double mhat = slot.m.data[i] / c1;
            const double vhat = slot.v.data[i] / c2;
            entry.value.data[i] -= rate * mhat / (std::sqrt(vhat) + kAdamEps);
        }
    }
}

void save_checkpoint(const std::string& path, const Checkpoint& ckpt) {
    json root;
    root["format_version"] = ckpt.format_version;
    root["step"] = ckpt.step;
    if (std::isfinite(ckpt.logz_estimate)) {
        root["logz_estimate"] = ckpt.logz_estimate;
    } else {
        root["logz_estimate"] = nullptr;
    }
    root["config"] = json::parse(config_to_json_text(ckpt.config));
    json params = json::object();
    for (const auto& [name, entry] : ckpt.params) {
        params[name] = {{"shape", entry.value.shape}, {"data", entry.value.data}};
    }
    root["params"] = std::move(params);
    write_file_atomic(path, root.dump() + "\n");
}

Checkpoint load_checkpoint(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw std::runtime_error("cannot read checkpoint: " + path);
    std::stringstream buf;
    buf << in.rdbuf();
    json root = json::parse(buf.str(), nullptr, false);
    if (root.is_discarded()) throw std::runtime_error("checkpoint is not valid JSON: " + path);

    Checkpoint c;
    c.format_version = root.value("format_version", -1);
    if (c.format_version != 1) {
        throw CheckpointVersionError("checkpoint format_version " +
                                     std::to_string(c.format_version) + " unsupported");
    }
    c.step = root.value("step", std::int64_t{0});
    if (root.contains("logz_estimate") && root["logz_estimate"].is_number()) {
        c.logz_estimate = root["logz_estimate"].get<double>();
    }
    c.config = config_from_json_text(root.at("config").dump());
    for (const auto& [name, arr] : root.at("params").items()) {
        auto shape = arr.at("shape").get<std::vector<std::size_t>>();
        auto data = arr.at("data").get<std::vector<double>>();
        c.params.add(name, Tensor::from_data(std::move(shape), std::move(data)));
    }
    return c;
}

namespace {

struct MetricsRow {
    std::int64_t step;
    std::int64_t wall_ms;
    double train_loss;
    double logz = std::numeric_limits<double>::quiet_NaN();
    double bias = std::numeric_limits<double>::quiet_NaN();
    std::size_t dropped = 0;
};

std::string format_double(double v) {
    std::ostringstream oss;
    oss.precision(17);
    oss << v;
    return oss.str();
}

std::string render_metrics(const std::vector<MetricsRow>& rows) {
    std::ostringstream oss;
    oss << "step,wall_ms,train_loss,logz_estimate,bias_abs,dropped\n";
    for (const auto& r : rows) {
        oss << r.step << ',' << r.wall_ms << ',' << format_double(r.train_loss) << ',';
        if (std::isfinite(r.logz)) oss << format_double(r.logz);
        oss << ',';
        if (std::isfinite(r.bias)) oss << format_double(r.bias);
        oss << ',' << r.dropped << '\n';
    }
    return oss.str();
}

// One optimization step's loss and gradients, sharded over the batch with a
// read-only snapshot per shard and gradient reduction in shard order.
struct StepOutcome {
    double loss = 0.0;
    std::size_t used = 0;
    std::size_t dropped = 0;
};

StepOutcome loss_and_gradients(const TrainConfig& cfg, const ModelConfig& mcfg,
                               ParameterStore& store, const TargetDensity& target,
                               const Schedule& schedule, const TrajectoryBatch& batch,
                               Objective objective) {
    const std::size_t n_shards =
        (batch.batch + cfg.exec().shard_size - 1) / cfg.exec().shard_size;

    std::size_t rollout_valid = batch.batch - batch.invalid_count();

    for (int round = 0; round < 2; ++round) {
        store.zero_grads();
        const double norm = objective_norm(objective, schedule, cfg.lambda, rollout_valid);
        std::vector<double> shard_values(n_shards, 0.0);
        std::vector<std::size_t> shard_used(n_shards, 0), shard_dropped(n_shards, 0);
        std::vector<ParameterStore> snapshots(n_shards);

        for_each_shard(batch.batch, cfg.exec(), [&](std::size_t s, std::size_t b0,
                                                    std::size_t b1) {
            TrajectoryBatch shard = slice_columns(batch, b0, b1);
            ParameterStore& snap = snapshots[s];
            for (const auto& [name, entry] : store) snap.add(name, entry.value);
            Tape tape;
            ObjectiveBuild build = build_objective_shard(tape, objective, mcfg, snap, target,
                                                         schedule, shard, cfg.lambda);
            shard_used[s] = build.used;
            shard_dropped[s] = build.dropped;
            if (!build.empty) {
                shard_values[s] = tape.value(build.node).scalar_value();
                tape.backward(build.node, 1.0 / norm);
            }
        });

        std::size_t used = 0, dropped = 0;
        double value = 0.0;
        for (std::size_t s = 0; s < n_shards; ++s) {
            used += shard_used[s];
            dropped += shard_dropped[s];
            value += shard_values[s];
        }
        if (used != rollout_valid && round == 0) {
            // Non-finite loss ingredients beyond the rollout flags: redo with
            // the corrected normalizer so the mean stays a mean.
            rollout_valid = used;
            continue;
        }
        for (const auto& snap : snapshots) store.accumulate_grads_from(snap);
        StepOutcome out;
        out.loss = used == 0 ? std::numeric_limits<double>::quiet_NaN() : value / norm;
        out.used = used;
        out.dropped = dropped;
        return out;
    }
    return {};
}

}  // namespace

TrainResult train(const TrainConfig& cfg, const std::string& out_dir) {
    cfg.validate();
    const TargetDensity target = make_target(cfg.target_name);
    const Schedule schedule = cfg.make_schedule();
    const ModelConfig mcfg = cfg.make_model_config(target.dim);
    const Objective objective = cfg.objective();
    const ExecPolicy exec = cfg.exec();

    std::filesystem::create_directories(out_dir);
    write_file_atomic(out_dir + "/config.json", config_to_json_text(cfg));

    ParameterStore store = init_params(mcfg, cfg.seed);
    AdamState adam = AdamState::like(store);
    LrMap lr{cfg.lr_drift, cfg.lr_flow};

    std::vector<MetricsRow> rows;
    std::vector<std::pair<std::int64_t, double>> checkpoint_biases;
    TrainResult result;
    result.run_dir = out_dir;

    const auto t_start = std::chrono::steady_clock::now();
    auto wall_ms = [&]() {
        return std::chrono::duration_cast<std::chrono::milliseconds>(
                   std::chrono::steady_clock::now() - t_start)
            .count();
    };
    auto flush_metrics = [&]() {
        write_file_atomic(out_dir + "/metrics.csv", render_metrics(rows));
    };

    for (int step = 0; step < cfg.total_steps; ++step) {
        const double sigma_tilde = cfg.explore.at(step, cfg.sigma);
        StreamKey key{cfg.seed, stream_purpose::kTrain, static_cast<std::uint64_t>(step)};
        TrajectoryBatch batch = rollout(mcfg, store, schedule, target, cfg.batch, sigma_tilde,
                                        key, exec);

        StepOutcome outcome =
            loss_and_gradients(cfg, mcfg, store, target, schedule, batch, objective);
        result.dropped_total += outcome.dropped;
        if (outcome.dropped * 10 > static_cast<std::size_t>(cfg.batch)) {
            result.aborted = true;
            std::ostringstream oss;
            oss << "aborted at step " << step + 1 << ": " << outcome.dropped << " of "
                << cfg.batch << " trajectories invalid";
            result.abort_reason = oss.str();
            flush_metrics();
            write_file_atomic(out_dir + "/final.json",
                              json{{"aborted", true}, {"reason", result.abort_reason}}.dump(2) +
                                  "\n");
            return result;
        }

        adam_step(store, adam, lr, step + 1);

        MetricsRow row;
        row.step = step + 1;
        row.wall_ms = wall_ms();
        row.train_loss = outcome.loss;
        row.dropped = outcome.dropped;

        const bool eval_now =
            ((step + 1) % cfg.eval_every == 0) || (step + 1 == cfg.total_steps);
        if (eval_now) {
            const std::uint64_t eval_seed =
                CounterRng::derive(cfg.seed, kEvalSeedTag, static_cast<std::uint64_t>(step + 1));
            LogZEstimate est = estimate_logz(mcfg, store, schedule, target,
                                             cfg.eval_particles, eval_seed, exec);
            const double bias = bias_abs(est.value, target);
            row.logz = est.value;
            row.bias = bias;
            row.dropped += est.dropped;
            checkpoint_biases.emplace_back(step + 1, bias);
            result.last_logz = est.value;

            Checkpoint ckpt;
            ckpt.step = step + 1;
            ckpt.config = cfg;
            ckpt.logz_estimate = est.value;
            for (const auto& [name, entry] : store) ckpt.params.add(name, entry.value);
            save_checkpoint(out_dir + "/ckpt_" + std::to_string(step + 1) + ".json", ckpt);
            rows.push_back(row);
            flush_metrics();
        } else {
            rows.push_back(row);
        }
    }
    flush_metrics();

    const std::size_t tail = std::min<std::size_t>(10, checkpoint_biases.size());
    double acc = 0.0;
    for (std::size_t i = checkpoint_biases.size() - tail; i < checkpoint_biases.size(); ++i) {
        result.tail_steps.push_back(checkpoint_biases[i].first);
        result.tail_biases.push_back(checkpoint_biases[i].second);
        acc += checkpoint_biases[i].second;
    }
    result.final_bias_mean = tail > 0 ? acc / static_cast<double>(tail)
                                      : std::numeric_limits<double>::quiet_NaN();
    result.skipped_updates = adam.skipped;

    json final_doc;
    final_doc["final_bias_mean"] = result.final_bias_mean;
    final_doc["tail_checkpoints"] = json::array();
    for (std::size_t i = 0; i < result.tail_steps.size(); ++i) {
        final_doc["tail_checkpoints"].push_back(
            {{"step", result.tail_steps[i]}, {"bias_abs", result.tail_biases[i]}});
    }
    final_doc["dropped_total"] = result.dropped_total;
    final_doc["skipped_updates"] = result.skipped_updates;
    final_doc["aborted"] = false;
    write_file_atomic(out_dir + "/final.json", final_doc.dump(2) + "\n");
    return result;
}

EvalOutput evaluate_checkpoint(const Checkpoint& ckpt, std::size_t particles,
                               std::uint64_t seed) {
    const TargetDensity target = make_target(ckpt.config.target_name);
    const Schedule schedule = ckpt.config.make_schedule();
    const ModelConfig mcfg = ckpt.config.make_model_config(target.dim);
    EvalOutput out;
    out.estimate = estimate_logz(mcfg, ckpt.params, schedule, target, particles, seed,
                                 ckpt.config.exec());
    out.bias = bias_abs(out.estimate.value, target);
    return out;
}

}  // namespace gfs
