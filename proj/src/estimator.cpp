#include "gfs/estimator.hpp"

#include <cmath>
#include <mutex>
#include <stdexcept>

namespace gfs {

double traj_logweight(const Trajectory& traj, const Schedule& schedule,
                      const TargetDensity& target) {
    double s = target.log_mu(traj.state(traj.n_steps));
    for (int n = 0; n < traj.n_steps; ++n) s += traj.logpb[n] - traj.logpf[n];
    if (schedule.kind == ProcessKind::VP) {
        s -= ref_marginal_logpdf(schedule, 0, traj.state(0));
    }
    return s;
}

std::vector<double> batch_logweights(const TrajectoryBatch& batch, const Schedule& schedule,
                                     const TargetDensity& target) {
    const std::size_t b = batch.batch;
    std::vector<double> out(b, std::numeric_limits<double>::quiet_NaN());
    std::vector<double> col(batch.dim);
    for (std::size_t j = 0; j < b; ++j) {
        if (!batch.valid[j]) continue;
        batch.states[batch.n_steps].copy_col(j, col);
        double s = target.log_mu(col);
        for (int n = 0; n < batch.n_steps; ++n) {
            s += batch.logpb.data[n * b + j] - batch.logpf.data[n * b + j];
        }
        if (schedule.kind == ProcessKind::VP) {
            batch.states[0].copy_col(j, col);
            s -= ref_marginal_logpdf(schedule, 0, col);
        }
        out[j] = s;
    }
    return out;
}

double logz_lower_bound(std::span<const double> weights) {
    if (weights.empty()) throw std::invalid_argument("logz_lower_bound: no particles");
    double m = -INFINITY;
    for (double w : weights) m = std::max(m, w);
    double acc = 0.0;
    for (double w : weights) acc += std::exp(w - m);
    return m + std::log(acc) - std::log(static_cast<double>(weights.size()));
}

double bias_abs(double estimate, const TargetDensity& target) {
    return std::abs(estimate - target.true_log_z);
}

LogZEstimate estimate_logz(const ModelConfig& cfg, const ParameterStore& params,
                           const Schedule& schedule, const TargetDensity& target,
                           std::size_t particles, std::uint64_t seed, const ExecPolicy& exec) {
    if (particles == 0) throw std::invalid_argument("estimate_logz: need at least one particle");
    StreamKey key{seed, stream_purpose::kEval, 0};
    TrajectoryBatch tb =
        rollout(cfg, params, schedule, target, particles, schedule.sigma, key, exec);
    const std::vector<double> raw = batch_logweights(tb, schedule, target);

    std::vector<double> kept;
    kept.reserve(raw.size());
    for (double w : raw) {
        if (std::isfinite(w)) kept.push_back(w);
    }
    LogZEstimate est;
    est.seed = seed;
    est.particles = kept.size();
    est.dropped = raw.size() - kept.size();
    est.unreliable = est.dropped * 100 > raw.size();
    if (kept.empty()) {
        est.value = -INFINITY;
        est.unreliable = true;
        return est;
    }
    est.value = logz_lower_bound(kept);
    return est;
}

GradVarianceResult grad_variance(const ModelConfig& cfg, ParameterStore& params,
                                 const TargetDensity& target, const Schedule& schedule,
                                 Objective objective, double lambda, std::size_t batch,
                                 std::size_t m_batches, std::uint64_t seed,
                                 const ExecPolicy& exec, bool reuse_batch_seed) {
    if (m_batches < 2) throw std::invalid_argument("grad_variance: need at least two batches");
    const auto prefixes = objective_param_prefixes(objective);

    std::vector<std::vector<double>> grads;
    grads.reserve(m_batches);
    for (std::size_t m = 0; m < m_batches; ++m) {
        StreamKey key{seed, stream_purpose::kGradVar, reuse_batch_seed ? 0 : m};
        TrajectoryBatch tb =
            rollout(cfg, params, schedule, target, batch, schedule.sigma, key, exec);

        params.zero_grads();
        std::size_t used_total = 0;
        std::vector<Tape> tapes;
        std::vector<ObjectiveBuild> builds;
        for_each_shard(tb.batch, ExecPolicy{exec.shard_size, 1},
                       [&](std::size_t, std::size_t b0, std::size_t b1) {
                           TrajectoryBatch shard = slice_columns(tb, b0, b1);
                           tapes.emplace_back();
                           builds.push_back(build_objective_shard(tapes.back(), objective, cfg,
                                                                  params, target, schedule, shard,
                                                                  lambda));
                           used_total += builds.back().used;
                       });
        if (used_total == 0) throw std::runtime_error("grad_variance: all paths dropped");
        const double norm = objective_norm(objective, schedule, lambda, used_total);
        for (std::size_t s = 0; s < tapes.size(); ++s) {
            if (!builds[s].empty) tapes[s].backward(builds[s].node, 1.0 / norm);
        }
        grads.push_back(params.flat_grads(prefixes));
    }

    const std::size_t coords = grads[0].size();
    double var_sum = 0.0;
    for (std::size_t i = 0; i < coords; ++i) {
        double mean = 0.0;
        for (const auto& g : grads) mean += g[i];
        mean /= static_cast<double>(m_batches);
        double acc = 0.0;
        for (const auto& g : grads) {
            const double d = g[i] - mean;
            acc += d * d;
        }
        var_sum += acc / static_cast<double>(m_batches - 1);
    }

    GradVarianceResult r;
    r.objective = objective_name(objective);
    r.variance = var_sum / static_cast<double>(coords);
    r.batches = m_batches;
    r.coords = coords;
    return r;
}

}  // namespace gfs
