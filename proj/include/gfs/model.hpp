#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "gfs/params.hpp"
#include "gfs/schedule.hpp"
#include "gfs/tape.hpp"
#include "gfs/targets.hpp"
#include "gfs/tensor.hpp"

namespace gfs {

// Architecture of the learnable pieces: a drift network (state head nn1 plus
// a time-only scalar head nn2 gating the target score) and a flow network
// nn3 with fixed endpoints. Hidden layers are 64-wide by default; output
// layers start at exactly zero so the initial process is the reference one.
struct ModelConfig {
    std::size_t dim = 2;
    std::size_t time_embed_dim = 64;  // even
    std::size_t hidden = 64;
    bool use_score = true;
    double score_clip = 1e4;
    double freq_min = 1.0;
    double freq_max = 1000.0;
    std::string activation = "tanh";  // or "gelu"

    void validate() const;
};

// Fourier features of t = n / n_total: sin(w_k t) then cos(w_k t) with
// geometric frequencies w_k in [freq_min, freq_max].
std::vector<double> time_embed(int n, int n_total, std::size_t dim, double freq_min,
                               double freq_max);
// Embedding as a {T,B} constant with identical columns.
Tensor time_embed_cols(const ModelConfig& cfg, int n, int n_total, std::size_t batch);

ParameterStore init_params(const ModelConfig& cfg, std::uint64_t seed);
std::size_t parameter_count(const ModelConfig& cfg);

// sigma * (nn1(x,n) + nn2(n) * clip(score(x))) over a {D,B} state matrix.
Tensor drift_batch(const ModelConfig& cfg, const ParameterStore& params,
                   const TargetDensity& target, double sigma, const Tensor& x, int n,
                   int n_total);

// Same drift on a tape. If score_through_x, the score subgraph differentiates
// through x (needed when x itself is a tape variable); otherwise the score is
// a constant input.
NodeRef taped_drift(Tape& tape, const ModelConfig& cfg, ParameterStore& params,
                    const TargetDensity& target, double sigma, NodeRef x, int n, int n_total,
                    bool score_through_x);

// log F_n(x). n = N returns log mu(x) exactly; VE n = 0 is the scalar c0 and
// only the origin is a valid state there.
double log_flow(const ModelConfig& cfg, const ParameterStore& params,
                const TargetDensity& target, const Schedule& schedule,
                std::span<const double> x, int n);

// Taped flow over constant states {D,B} -> {1,B}.
NodeRef taped_log_flow(Tape& tape, const ModelConfig& cfg, ParameterStore& params,
                       const TargetDensity& target, const Schedule& schedule, const Tensor& x,
                       int n);

// Forward-looking prior (1 - n/N) log p_n^ref(x) + (n/N) log mu(x).
double forward_looking_log_reward(const Schedule& schedule, const TargetDensity& target,
                                  std::span<const double> x, int n);

}  // namespace gfs
