#pragma once

#include <cstdint>
#include <limits>
#include <map>
#include <string>
#include <vector>

#include "gfs/config.hpp"
#include "gfs/estimator.hpp"
#include "gfs/params.hpp"

namespace gfs {

struct LrMap {
    double lr_drift = 1e-4;
    double lr_flow = 1e-3;
    double rate_for(const std::string& name) const;
};

struct AdamState {
    struct Slot {
        Tensor m;
        Tensor v;
    };
    std::map<std::string, Slot> slots;
    std::int64_t skipped = 0;

    static AdamState like(const ParameterStore& store);
};

// Bias-corrected Adam (beta1 = 0.9, beta2 = 0.999, eps = 1e-8); t is 1-based.
// A non-finite gradient entry skips the whole update and bumps the counter.
void adam_step(ParameterStore& store, AdamState& state, const LrMap& lr, std::int64_t t);

struct Checkpoint {
    int format_version = 1;
    std::int64_t step = 0;
    TrainConfig config;
    double logz_estimate = std::numeric_limits<double>::quiet_NaN();
    ParameterStore params;
};

void save_checkpoint(const std::string& path, const Checkpoint& ckpt);
Checkpoint load_checkpoint(const std::string& path);  // CheckpointVersionError on mismatch

struct TrainResult {
    std::string run_dir;
    bool aborted = false;
    std::string abort_reason;
    double final_bias_mean = std::numeric_limits<double>::quiet_NaN();
    std::vector<std::int64_t> tail_steps;
    std::vector<double> tail_biases;
    std::size_t dropped_total = 0;
    std::int64_t skipped_updates = 0;
    double last_logz = std::numeric_limits<double>::quiet_NaN();
};

// Algorithm driver: rollout -> loss -> gradients -> Adam, with periodic
// evaluation and checkpointing. Writes config.json, metrics.csv,
// ckpt_<step>.json and final.json into out_dir.
TrainResult train(const TrainConfig& cfg, const std::string& out_dir);

struct EvalOutput {
    LogZEstimate estimate;
    double bias = 0.0;
};

EvalOutput evaluate_checkpoint(const Checkpoint& ckpt, std::size_t particles,
                               std::uint64_t seed);

}  // namespace gfs
