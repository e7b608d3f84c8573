#pragma once

#include <cstdint>
#include <span>
#include <vector>

#include "gfs/objectives.hpp"
#include "gfs/rollout.hpp"

namespace gfs {

// Path importance weight S = log P - log Q from the trajectory's cached
// log-densities. For VE the step-0 Dirac pair is already cancelled
// (logpb[0] = 0 and there is no p_0^ref term); for VP the x_0 proposal
// density is subtracted explicitly.
double traj_logweight(const Trajectory& traj, const Schedule& schedule,
                      const TargetDensity& target);

// Column-wise weights; non-finite entries come back as NaN for the caller
// to drop and count.
std::vector<double> batch_logweights(const TrajectoryBatch& batch, const Schedule& schedule,
                                     const TargetDensity& target);

// logsumexp(weights) - log B, overflow-safe. Rejects empty input.
double logz_lower_bound(std::span<const double> weights);

double bias_abs(double estimate, const TargetDensity& target);

struct LogZEstimate {
    double value = 0.0;
    std::size_t particles = 0;  // particles that entered the estimate
    std::size_t dropped = 0;
    bool unreliable = false;    // more than 1% of particles dropped
    std::uint64_t seed = 0;
};

// On-policy rollout of `particles` paths followed by the lower-bound
// estimate. Deterministic given (params, seed, particles).
LogZEstimate estimate_logz(const ModelConfig& cfg, const ParameterStore& params,
                           const Schedule& schedule, const TargetDensity& target,
                           std::size_t particles, std::uint64_t seed, const ExecPolicy& exec);

struct GradVarianceResult {
    std::string objective;
    double variance = 0.0;      // mean over coordinates of across-batch variance
    std::size_t batches = 0;
    std::size_t coords = 0;
};

// Draws M independent batches at a fixed parameter snapshot, computes the
// full flattened gradient of the objective for each, and returns the mean
// across-batch variance per coordinate. reuse_batch_seed makes every batch
// identical (a determinism diagnostic; the variance is then exactly 0).
GradVarianceResult grad_variance(const ModelConfig& cfg, ParameterStore& params,
                                 const TargetDensity& target, const Schedule& schedule,
                                 Objective objective, double lambda, std::size_t batch,
                                 std::size_t m_batches, std::uint64_t seed,
                                 const ExecPolicy& exec, bool reuse_batch_seed = false);

}  // namespace gfs
