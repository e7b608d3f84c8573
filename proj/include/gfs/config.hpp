#pragma once

#include <cstdint>
#include <stdexcept>
#include <string>
#include <vector>

#include "gfs/model.hpp"
#include "gfs/objectives.hpp"
#include "gfs/rollout.hpp"
#include "gfs/schedule.hpp"

namespace gfs {

// Config problems map to CLI exit code 2, checkpoint incompatibilities to 3.
struct ConfigError : std::runtime_error {
    using std::runtime_error::runtime_error;
};
struct CheckpointVersionError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

struct ExploreSchedule {
    enum class Kind { Constant, LinearAnneal };
    Kind kind = Kind::Constant;
    double sigma_tilde = -1.0;  // constant value; negative means "use sigma"
    double from = 1.1;
    double to = 1.0;
    int over_steps = 1000;

    double at(int step, double sigma) const;
};

struct TrainConfig {
    std::string target_name;

    std::string schedule_kind = "ve";
    int n_steps = 100;
    double h = -1.0;  // negative: per-target default (0.05 for MoG tasks, 0.01 otherwise)
    double sigma = 1.0;
    double beta_start = 0.02;
    double beta_end = 0.3;

    std::size_t time_embed_dim = 64;
    std::size_t hidden = 64;
    bool use_score = true;
    double score_clip = 1e4;
    double freq_min = 1.0;
    double freq_max = 1000.0;
    std::string activation = "tanh";

    std::string objective_name = "subtb";
    double lambda = 2.0;

    double lr_drift = 1e-4;
    double lr_flow = 1e-3;
    int batch = 256;
    int total_steps = 5000;
    int eval_every = 100;
    int eval_particles = 2000;
    std::uint64_t seed = 0;
    int shard_size = 32;
    int threads = 0;
    ExploreSchedule explore;

    double resolved_h() const;
    Schedule make_schedule() const;
    ModelConfig make_model_config(std::size_t target_dim) const;
    Objective objective() const { return parse_objective(objective_name); }
    ExecPolicy exec() const { return ExecPolicy{static_cast<std::size_t>(shard_size), threads}; }
    void validate() const;
};

// Strict parsing: unknown keys anywhere are rejected with their dotted path.
TrainConfig config_from_json_text(const std::string& text);
std::string config_to_json_text(const TrainConfig& cfg);

// Reads the file, applies dotted key=value overrides, validates.
TrainConfig load_config(const std::string& path, const std::vector<std::string>& overrides);

// Atomic file write (temp file + rename in the target directory).
void write_file_atomic(const std::string& path, const std::string& content);

}  // namespace gfs
