#include "gfs/rollout.hpp"

#include <cmath>
#include <future>
#include <stdexcept>
#include <thread>

#include "gfs/rng.hpp"

namespace gfs {

std::size_t TrajectoryBatch::invalid_count() const {
    std::size_t n = 0;
    for (auto v : valid) n += v ? 0 : 1;
    return n;
}

Trajectory TrajectoryBatch::extract(std::size_t b) const {
    Trajectory t;
    t.n_steps = n_steps;
    t.dim = dim;
    t.valid = valid[b] != 0;
    t.states.resize((n_steps + 1) * dim);
    t.noises.resize(n_steps * dim);
    t.drifts.resize(n_steps * dim);
    t.logpf.resize(n_steps);
    t.logpb.resize(n_steps);
    for (int n = 0; n <= n_steps; ++n) {
        for (std::size_t d = 0; d < dim; ++d) t.states[n * dim + d] = states[n].data[d * batch + b];
    }
    for (int n = 0; n < n_steps; ++n) {
        for (std::size_t d = 0; d < dim; ++d) {
            t.noises[n * dim + d] = noises[n].data[d * batch + b];
            t.drifts[n * dim + d] = drifts[n].data[d * batch + b];
        }
        t.logpf[n] = logpf.data[n * batch + b];
        t.logpb[n] = logpb.data[n * batch + b];
    }
    return t;
}

TrajectoryBatch TrajectoryBatch::from_trajectory(const Trajectory& t) {
    TrajectoryBatch b;
    b.n_steps = t.n_steps;
    b.dim = t.dim;
    b.batch = 1;
    b.valid = {static_cast<std::uint8_t>(t.valid ? 1 : 0)};
    for (int n = 0; n <= t.n_steps; ++n) {
        b.states.push_back(Tensor::from_data({t.dim, 1}, {t.states.begin() + n * t.dim,
                                                          t.states.begin() + (n + 1) * t.dim}));
    }
    b.logpf = Tensor::zeros({static_cast<std::size_t>(t.n_steps), 1});
    b.logpb = Tensor::zeros({static_cast<std::size_t>(t.n_steps), 1});
    for (int n = 0; n < t.n_steps; ++n) {
        b.noises.push_back(Tensor::from_data({t.dim, 1}, {t.noises.begin() + n * t.dim,
                                                          t.noises.begin() + (n + 1) * t.dim}));
        b.drifts.push_back(Tensor::from_data({t.dim, 1}, {t.drifts.begin() + n * t.dim,
                                                          t.drifts.begin() + (n + 1) * t.dim}));
        b.logpf.data[n] = t.logpf[n];
        b.logpb.data[n] = t.logpb[n];
    }
    return b;
}

std::uint64_t StreamKey::trajectory_key(std::uint64_t index) const {
    return CounterRng::derive(seed, purpose, iteration, index);
}

int ExecPolicy::effective_threads() const {
    if (threads > 0) return threads;
    const unsigned hw = std::thread::hardware_concurrency();
    return hw > 0 ? static_cast<int>(hw) : 1;
}

void for_each_shard(std::size_t batch, const ExecPolicy& exec,
                    const std::function<void(std::size_t, std::size_t, std::size_t)>& fn) {
    const std::size_t shard = std::max<std::size_t>(1, exec.shard_size);
    const std::size_t n_shards = (batch + shard - 1) / shard;
    const int workers = std::min<int>(exec.effective_threads(), static_cast<int>(n_shards));
    if (workers <= 1) {
        for (std::size_t s = 0; s < n_shards; ++s) {
            fn(s, s * shard, std::min(batch, (s + 1) * shard));
        }
        return;
    }
    std::atomic<std::size_t> next{0};
    std::vector<std::future<void>> tasks;
    tasks.reserve(workers);
    for (int w = 0; w < workers; ++w) {
        tasks.push_back(std::async(std::launch::async, [&]() {
            for (;;) {
                const std::size_t s = next.fetch_add(1);
                if (s >= n_shards) return;
                fn(s, s * shard, std::min(batch, (s + 1) * shard));
            }
        }));
    }
    for (auto& t : tasks) t.get();
}

namespace {

struct RolloutSetup {
    const ModelConfig* cfg = nullptr;       // null for the reference process
    const ParameterStore* params = nullptr;
    const TargetDensity* target = nullptr;
    const Schedule* schedule = nullptr;
    std::size_t dim = 0;
    double sigma_explore = 1.0;
};

void rollout_columns(const RolloutSetup& su, TrajectoryBatch& out, std::size_t b0, std::size_t b1,
                     const StreamKey& key, std::uint64_t first_index) {
    const Schedule& s = *su.schedule;
    const std::size_t dim = su.dim;
    const std::size_t width = b1 - b0;
    const std::size_t full = out.batch;
    const int n_total = s.n_steps;

    std::vector<CounterRng> streams;
    streams.reserve(width);
    for (std::size_t j = 0; j < width; ++j) {
        streams.emplace_back(key.trajectory_key(first_index + b0 + j));
    }

    Tensor x = Tensor::zeros({dim, width});
    if (s.kind == ProcessKind::VP) {
        for (std::size_t j = 0; j < width; ++j) {
            for (std::size_t d = 0; d < dim; ++d) {
                x.data[d * width + j] =
                    s.sigma * streams[j].normal(static_cast<std::uint64_t>(n_total) * dim + d);
            }
        }
    }
    for (std::size_t d = 0; d < dim; ++d) {
        for (std::size_t j = 0; j < width; ++j) {
            out.states[0].data[d * full + b0 + j] = x.data[d * width + j];
        }
    }

    std::vector<double> xn(dim), xnext(dim), fcol(dim);
    for (int n = 0; n < n_total; ++n) {
        Tensor f = su.cfg ? drift_batch(*su.cfg, *su.params, *su.target, s.sigma, x, n, n_total)
                          : Tensor::zeros({dim, width});
        const double a = step_mean_coeff(s, n);
        const double gain = step_drift_gain(s, n);
        const double scale = step_noise_scale(s, n, su.sigma_explore);

        Tensor eps = Tensor::zeros({dim, width});
        for (std::size_t j = 0; j < width; ++j) {
            for (std::size_t d = 0; d < dim; ++d) {
                eps.data[d * width + j] =
                    streams[j].normal(static_cast<std::uint64_t>(n) * dim + d);
            }
        }
        Tensor xn1 = Tensor::zeros({dim, width});
        for (std::size_t i = 0; i < dim * width; ++i) {
            xn1.data[i] = a * x.data[i] + gain * f.data[i] + scale * eps.data[i];
        }

        for (std::size_t j = 0; j < width; ++j) {
            x.copy_col(j, xn);
            xn1.copy_col(j, xnext);
            f.copy_col(j, fcol);
            bool ok = true;
            for (double v : xnext) ok = ok && std::isfinite(v);
            if (!ok) out.valid[b0 + j] = 0;
            const double lf = ok ? forward_logpdf(s, n, fcol, xn, xnext) : 0.0;
            const double lb = (!ok || (s.kind == ProcessKind::VE && n == 0))
                                  ? 0.0
                                  : backward_logpdf(s, n, xn, xnext);
            out.logpf.data[n * full + b0 + j] = lf;
            out.logpb.data[n * full + b0 + j] = lb;
        }
        for (std::size_t d = 0; d < dim; ++d) {
            for (std::size_t j = 0; j < width; ++j) {
                out.states[n + 1].data[d * full + b0 + j] = xn1.data[d * width + j];
                out.noises[n].data[d * full + b0 + j] = eps.data[d * width + j];
                out.drifts[n].data[d * full + b0 + j] = f.data[d * width + j];
            }
        }
        x = std::move(xn1);
    }
}

TrajectoryBatch run_rollout(const RolloutSetup& su, std::size_t batch, const StreamKey& key,
                            const ExecPolicy& exec, std::uint64_t first_index) {
    const Schedule& s = *su.schedule;
    TrajectoryBatch out;
    out.n_steps = s.n_steps;
    out.dim = su.dim;
    out.batch = batch;
    out.valid.assign(batch, 1);
    out.states.assign(s.n_steps + 1, Tensor::zeros({su.dim, batch}));
    out.noises.assign(s.n_steps, Tensor::zeros({su.dim, batch}));
    out.drifts.assign(s.n_steps, Tensor::zeros({su.dim, batch}));
    out.logpf = Tensor::zeros({static_cast<std::size_t>(s.n_steps), batch});
    out.logpb = Tensor::zeros({static_cast<std::size_t>(s.n_steps), batch});

    for_each_shard(batch, exec, [&](std::size_t, std::size_t b0, std::size_t b1) {
        rollout_columns(su, out, b0, b1, key, first_index);
    });
    return out;
}

}  // namespace

TrajectoryBatch rollout(const ModelConfig& cfg, const ParameterStore& params,
                        const Schedule& schedule, const TargetDensity& target, std::size_t batch,
                        double sigma_explore, const StreamKey& key, const ExecPolicy& exec,
                        std::uint64_t first_index) {
    if (sigma_explore < schedule.sigma) {
        throw std::invalid_argument("rollout: exploration sigma must be >= model sigma");
    }
    RolloutSetup su;
    su.cfg = &cfg;
    su.params = &params;
    su.target = &target;
    su.schedule = &schedule;
    su.dim = cfg.dim;
    su.sigma_explore = sigma_explore;
    return run_rollout(su, batch, key, exec, first_index);
}

TrajectoryBatch reference_rollout(const Schedule& schedule, std::size_t dim, std::size_t batch,
                                  const StreamKey& key, const ExecPolicy& exec) {
    RolloutSetup su;
    su.schedule = &schedule;
    su.dim = dim;
    su.sigma_explore = schedule.sigma;
    return run_rollout(su, batch, key, exec, 0);
}

TrajectoryBatch select_columns(const TrajectoryBatch& full, const std::vector<std::size_t>& cols) {
    TrajectoryBatch out;
    out.n_steps = full.n_steps;
    out.dim = full.dim;
    out.batch = cols.size();
    out.valid.reserve(cols.size());
    for (std::size_t j : cols) out.valid.push_back(full.valid[j]);
    auto pick = [&](const Tensor& t) {
        Tensor r = Tensor::zeros({t.rows(), cols.size()});
        for (std::size_t i = 0; i < t.rows(); ++i) {
            for (std::size_t j = 0; j < cols.size(); ++j) {
                r.data[i * cols.size() + j] = t.data[i * full.batch + cols[j]];
            }
        }
        return r;
    };
    for (const auto& t : full.states) out.states.push_back(pick(t));
    for (const auto& t : full.noises) out.noises.push_back(pick(t));
    for (const auto& t : full.drifts) out.drifts.push_back(pick(t));
    out.logpf = pick(full.logpf);
    out.logpb = pick(full.logpb);
    return out;
}

TrajectoryBatch slice_columns(const TrajectoryBatch& full, std::size_t b0, std::size_t b1) {
    TrajectoryBatch out;
    out.n_steps = full.n_steps;
    out.dim = full.dim;
    out.batch = b1 - b0;
    out.valid.assign(full.valid.begin() + b0, full.valid.begin() + b1);
    auto slice = [&](const Tensor& t) {
        Tensor r = Tensor::zeros({t.rows(), b1 - b0});
        for (std::size_t i = 0; i < t.rows(); ++i) {
            for (std::size_t j = b0; j < b1; ++j) {
                r.data[i * (b1 - b0) + (j - b0)] = t.data[i * full.batch + j];
            }
        }
        return r;
    };
    for (const auto& t : full.states) out.states.push_back(slice(t));
    for (const auto& t : full.noises) out.noises.push_back(slice(t));
    for (const auto& t : full.drifts) out.drifts.push_back(slice(t));
    out.logpf = slice(full.logpf);
    out.logpb = slice(full.logpb);
    return out;
}

}  // namespace gfs
