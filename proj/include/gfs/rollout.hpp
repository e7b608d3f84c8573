#pragma once

#include <cstdint>
#include <vector>

#include "gfs/model.hpp"
#include "gfs/schedule.hpp"
#include "gfs/targets.hpp"
#include "gfs/trajectory.hpp"

namespace gfs {

// Identifies one rollout's random stream family. Trajectory j inside the
// rollout draws from the counter stream keyed by (seed, purpose, iteration,
// first_index + j), so results never depend on sharding or thread count.
struct StreamKey {
    std::uint64_t seed = 0;
    std::uint64_t purpose = 0;
    std::uint64_t iteration = 0;

    std::uint64_t trajectory_key(std::uint64_t index) const;
};

namespace stream_purpose {
constexpr std::uint64_t kTrain = 1;
constexpr std::uint64_t kEval = 2;
constexpr std::uint64_t kGradVar = 3;
constexpr std::uint64_t kLossSample = 4;
constexpr std::uint64_t kSample = 5;
}  // namespace stream_purpose

struct ExecPolicy {
    std::size_t shard_size = 32;  // trajectories per tape shard
    int threads = 0;              // 0 = hardware concurrency

    int effective_threads() const;
};

// Sample `batch` trajectories with the current drift and exploration sigma.
// sigma_explore scales only the injected noise; densities are recorded under
// the schedule's sigma. first_index offsets the per-trajectory streams.
TrajectoryBatch rollout(const ModelConfig& cfg, const ParameterStore& params,
                        const Schedule& schedule, const TargetDensity& target, std::size_t batch,
                        double sigma_explore, const StreamKey& key, const ExecPolicy& exec,
                        std::uint64_t first_index = 0);

// Drift-free rollout at sigma_explore = sigma (reference process).
TrajectoryBatch reference_rollout(const Schedule& schedule, std::size_t dim, std::size_t batch,
                                  const StreamKey& key, const ExecPolicy& exec);

// Column range views for sharded processing.
TrajectoryBatch slice_columns(const TrajectoryBatch& full, std::size_t b0, std::size_t b1);
TrajectoryBatch select_columns(const TrajectoryBatch& full, const std::vector<std::size_t>& cols);

// Run fn(shard_index, b0, b1) over contiguous column shards, in parallel.
void for_each_shard(std::size_t batch, const ExecPolicy& exec,
                    const std::function<void(std::size_t, std::size_t, std::size_t)>& fn);

}  // namespace gfs
