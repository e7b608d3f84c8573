#pragma once

#include <string>
#include <vector>

#include "gfs/model.hpp"
#include "gfs/schedule.hpp"
#include "gfs/tape.hpp"
#include "gfs/targets.hpp"
#include "gfs/trajectory.hpp"

namespace gfs {

enum class Objective { SubTB, DB, TB, KlPis, KlDds, SubTBFullPath };

Objective parse_objective(const std::string& name);
std::string objective_name(Objective o);
// Parameter name prefixes whose gradients the objective trains.
std::vector<std::string> objective_param_prefixes(Objective o);

// Per-trajectory log-flow values and prefix sums of logpf - logpb. The
// residual of segment (m,n) reproduces the direct product-form log-ratio.
struct SegmentResiduals {
    std::vector<double> phi;     // N+1
    std::vector<double> prefix;  // N+1, prefix[0] = 0

    double residual(int m, int n) const {
        return phi[m] - phi[n] + (prefix[n] - prefix[m]);
    }
    int n_steps() const { return static_cast<int>(prefix.size()) - 1; }

    static SegmentResiduals from_arrays(std::vector<double> phi, const std::vector<double>& logpf,
                                        const std::vector<double>& logpb);
    // Recomputes phi and logpf under the given parameters; logpb is the fixed
    // kernel of the schedule.
    static SegmentResiduals from_model(const ModelConfig& cfg, const ParameterStore& params,
                                       const TargetDensity& target, const Schedule& schedule,
                                       const Trajectory& traj);

    double subtb_value(double lambda) const;
    double db_value(int n) const { return residual(n, n + 1) * residual(n, n + 1); }
    double tb_value() const { return residual(0, n_steps()) * residual(0, n_steps()); }
};

// Geometric segment weights scaled by their maximum so that lambda^N never
// overflows; the scale cancels in the normalized objective.
double subtb_weight(double lambda, int gap, int n_steps);
double subtb_weight_sum(double lambda, int n_steps);

// Per-trajectory loss values.
double subtb_loss(const Trajectory& traj, const ModelConfig& cfg, const ParameterStore& params,
                  const TargetDensity& target, const Schedule& schedule, double lambda);
double db_loss(const Trajectory& traj, int n, const ModelConfig& cfg,
               const ParameterStore& params, const TargetDensity& target,
               const Schedule& schedule);
double tb_loss(const Trajectory& traj, const ModelConfig& cfg, const ParameterStore& params,
               const TargetDensity& target, const Schedule& schedule);

// One shard of a batched objective on a tape. `node` is the unnormalized sum
// over segments/paths of the shard's surviving columns; the full-batch loss
// is sum(node) / norm(total_used) and backward seeds 1 / norm(total_used).
struct ObjectiveBuild {
    NodeRef node;
    std::size_t used = 0;     // columns that made it into the sum
    std::size_t dropped = 0;  // columns discarded for non-finite ingredients
    bool empty = false;
};

ObjectiveBuild build_objective_shard(Tape& tape, Objective objective, const ModelConfig& cfg,
                                     ParameterStore& params, const TargetDensity& target,
                                     const Schedule& schedule, const TrajectoryBatch& shard,
                                     double lambda);

// Normalizer turning summed shard nodes into the batch-mean objective.
double objective_norm(Objective objective, const Schedule& schedule, double lambda,
                      std::size_t total_used);

// Standalone KL losses: on-policy rollout of `batch` paths under the stream
// key, returning the batch-mean reparameterized loss value.
double kl_pis_loss(const ModelConfig& cfg, ParameterStore& params, const TargetDensity& target,
                   const Schedule& schedule, std::size_t batch, std::uint64_t seed);
double kl_dds_loss(const ModelConfig& cfg, ParameterStore& params, const TargetDensity& target,
                   const Schedule& schedule, std::size_t batch, std::uint64_t seed);

}  // namespace gfs
