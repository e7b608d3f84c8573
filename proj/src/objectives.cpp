#include "gfs/objectives.hpp"

#include <cmath>
#include <stdexcept>

#include "gfs/rollout.hpp"

namespace gfs {

namespace {

constexpr double kLog2Pi = 1.8378770664093454836;

// Taped forward kernel log-density rows for constant states: drift comes
// from the model, the squared distance is taken to the realized next state.
NodeRef taped_logpf_row(Tape& t, const ModelConfig& cfg, ParameterStore& params,
                        const TargetDensity& target, const Schedule& s, NodeRef x_node,
                        const Tensor& x_n, const Tensor& x_next, int n, bool states_on_tape) {
    const std::size_t b = x_n.cols();
    NodeRef f = taped_drift(t, cfg, params, target, s.sigma, x_node, n, s.n_steps,
                            /*score_through_x=*/states_on_tape);
    const double a = step_mean_coeff(s, n);
    const double gain = step_drift_gain(s, n);
    const double var = step_kernel_var(s, n);
    NodeRef mean;
    if (s.kind == ProcessKind::VE) {
        mean = t.add(x_node, t.scalar_mul(f, gain));
    } else {
        mean = t.add(t.scalar_mul(x_node, a), f);
    }
    NodeRef diff = t.sub(t.constant(x_next), mean);
    NodeRef q = t.sum_cols(t.square(diff));
    return t.add(t.scalar_mul(q, -0.5 / var),
                 t.constant(Tensor::full({1, b}, -0.5 * x_n.rows() * (kLog2Pi + std::log(var)))));
}

std::vector<std::size_t> finite_columns(const Tensor& m) {
    const std::size_t r = m.rows(), c = m.cols();
    std::vector<std::size_t> ok;
    for (std::size_t j = 0; j < c; ++j) {
        bool good = true;
        for (std::size_t i = 0; i < r && good; ++i) good = std::isfinite(m.data[i * c + j]);
        if (good) ok.push_back(j);
    }
    return ok;
}

// Lower-triangular ones matrix turning per-step deltas into prefix sums:
// c_n = sum_{l<n} d_l, with c_0 = 0.
Tensor prefix_matrix(int n_steps) {
    Tensor L = Tensor::zeros({static_cast<std::size_t>(n_steps + 1),
                              static_cast<std::size_t>(n_steps)});
    for (int n = 1; n <= n_steps; ++n) {
        for (int l = 0; l < n; ++l) L.data[n * n_steps + l] = 1.0;
    }
    return L;
}

struct BalanceIngredients {
    NodeRef u;  // {N+1, B}: phi_n - prefix_n per column
};

BalanceIngredients build_balance_u(Tape& t, const ModelConfig& cfg, ParameterStore& params,
                                   const TargetDensity& target, const Schedule& s,
                                   const TrajectoryBatch& shard) {
    const int n_total = s.n_steps;
    const std::size_t b = shard.batch;

    std::vector<NodeRef> phi_rows;
    phi_rows.reserve(n_total + 1);
    for (int n = 0; n <= n_total; ++n) {
        phi_rows.push_back(taped_log_flow(t, cfg, params, target, s, shard.states[n], n));
    }

    std::vector<NodeRef> delta_rows;
    delta_rows.reserve(n_total);
    for (int n = 0; n < n_total; ++n) {
        NodeRef x_node = t.constant(shard.states[n]);
        NodeRef lf = taped_logpf_row(t, cfg, params, target, s, x_node, shard.states[n],
                                     shard.states[n + 1], n, /*states_on_tape=*/false);
        Tensor lb = Tensor::zeros({1, b});
        for (std::size_t j = 0; j < b; ++j) lb.data[j] = shard.logpb.data[n * b + j];
        delta_rows.push_back(t.sub(lf, t.constant(std::move(lb))));
    }

    NodeRef d = t.concat_rows(delta_rows);
    NodeRef c = t.affine(t.constant(prefix_matrix(n_total)),
                         t.constant(Tensor::zeros({static_cast<std::size_t>(n_total + 1)})), d);
    NodeRef phi = t.concat_rows(phi_rows);
    return {t.sub(phi, c)};
}

NodeRef reduce_balance(Tape& t, Objective objective, NodeRef u, int n_steps, double lambda) {
    const std::size_t rows = static_cast<std::size_t>(n_steps) + 1;
    auto gap_term = [&](int g) {
        NodeRef head = t.slice_rows(u, 0, rows - g);
        NodeRef tail = t.slice_rows(u, g, rows);
        return t.sum(t.square(t.sub(head, tail)));
    };
    switch (objective) {
        case Objective::DB:
            return gap_term(1);
        case Objective::TB:
        case Objective::SubTBFullPath:
            return gap_term(n_steps);
        case Objective::SubTB: {
            NodeRef acc = t.scalar_mul(gap_term(1), subtb_weight(lambda, 1, n_steps));
            for (int g = 2; g <= n_steps; ++g) {
                acc = t.add(acc, t.scalar_mul(gap_term(g), subtb_weight(lambda, g, n_steps)));
            }
            return acc;
        }
        default:
            throw std::invalid_argument("reduce_balance: not a balance objective");
    }
}

// Reparameterized KL path loss: rebuilds the state recursion on the tape
// from the stored noises (rollouts feeding this must be on-policy).
NodeRef build_kl_row(Tape& t, const ModelConfig& cfg, ParameterStore& params,
                     const TargetDensity& target, const Schedule& s,
                     const TrajectoryBatch& shard) {
    if (!target.taped_log_mu) {
        throw std::invalid_argument("kl loss: target lacks a taped log-density");
    }
    const int n_total = s.n_steps;
    const std::size_t b = shard.batch;
    const double sigma = s.sigma;

    NodeRef x = t.constant(shard.states[0]);
    NodeRef acc{};
    bool have_acc = false;
    for (int n = 0; n < n_total; ++n) {
        NodeRef f = taped_drift(t, cfg, params, target, sigma, x, n, n_total,
                                /*score_through_x=*/true);
        double quad_coeff, cross_coeff;
        if (s.kind == ProcessKind::VE) {
            quad_coeff = s.h / (2.0 * sigma * sigma);
            cross_coeff = std::sqrt(s.h) / sigma;
        } else {
            quad_coeff = 1.0 / (2.0 * s.betas[n] * sigma * sigma);
            cross_coeff = 1.0 / (sigma * std::sqrt(s.betas[n]));
        }
        NodeRef eps = t.constant(shard.noises[n]);
        NodeRef quad = t.scalar_mul(t.sum_cols(t.square(f)), quad_coeff);
        NodeRef cross = t.scalar_mul(t.sum_cols(t.mul(f, eps)), cross_coeff);
        NodeRef term = t.add(quad, cross);
        acc = have_acc ? t.add(acc, term) : term;
        have_acc = true;

        const double a = step_mean_coeff(s, n);
        const double noise_scale = step_noise_scale(s, n, sigma);
        Tensor shift = shard.noises[n];
        for (double& v : shift.data) v *= noise_scale;
        NodeRef drift_part = s.kind == ProcessKind::VE ? t.scalar_mul(f, s.h) : f;
        NodeRef mean = s.kind == ProcessKind::VE ? t.add(x, drift_part)
                                                 : t.add(t.scalar_mul(x, a), drift_part);
        x = t.add(mean, t.constant(std::move(shift)));
    }

    const double v_n = s.ref_marginal_var(n_total);
    NodeRef ref = t.add(
        t.scalar_mul(t.sum_cols(t.square(x)), -0.5 / v_n),
        t.constant(Tensor::full({1, b}, -0.5 * shard.dim * (kLog2Pi + std::log(v_n)))));
    return t.add(acc, t.sub(ref, target.taped_log_mu(t, x)));
}

}  // namespace

Objective parse_objective(const std::string& name) {
    if (name == "subtb") return Objective::SubTB;
    if (name == "db") return Objective::DB;
    if (name == "tb") return Objective::TB;
    if (name == "kl_pis") return Objective::KlPis;
    if (name == "kl_dds") return Objective::KlDds;
    if (name == "subtb_full") return Objective::SubTBFullPath;
    throw std::invalid_argument("unknown objective: " + name);
}

std::string objective_name(Objective o) {
    switch (o) {
        case Objective::SubTB: return "subtb";
        case Objective::DB: return "db";
        case Objective::TB: return "tb";
        case Objective::KlPis: return "kl_pis";
        case Objective::KlDds: return "kl_dds";
        case Objective::SubTBFullPath: return "subtb_full";
    }
    return "?";
}

std::vector<std::string> objective_param_prefixes(Objective o) {
    switch (o) {
        case Objective::SubTB:
        case Objective::DB:
            return {"drift.", "flow."};
        case Objective::TB:
        case Objective::SubTBFullPath:
            return {"drift.", "flow.c0"};
        case Objective::KlPis:
        case Objective::KlDds:
            return {"drift."};
    }
    return {};
}

SegmentResiduals SegmentResiduals::from_arrays(std::vector<double> phi,
                                               const std::vector<double>& logpf,
                                               const std::vector<double>& logpb) {
    if (phi.size() != logpf.size() + 1 || logpf.size() != logpb.size()) {
        throw std::invalid_argument("SegmentResiduals: inconsistent array lengths");
    }
    SegmentResiduals r;
    r.phi = std::move(phi);
    r.prefix.resize(logpf.size() + 1);
    r.prefix[0] = 0.0;
    for (std::size_t n = 0; n < logpf.size(); ++n) {
        r.prefix[n + 1] = r.prefix[n] + (logpf[n] - logpb[n]);
    }
    return r;
}

SegmentResiduals SegmentResiduals::from_model(const ModelConfig& cfg, const ParameterStore& params,
                                              const TargetDensity& target,
                                              const Schedule& schedule, const Trajectory& traj) {
    const int n_total = traj.n_steps;
    std::vector<double> phi(n_total + 1), logpf(n_total), logpb(n_total);
    for (int n = 0; n <= n_total; ++n) {
        phi[n] = log_flow(cfg, params, target, schedule, traj.state(n), n);
    }
    Tensor x = Tensor::zeros({traj.dim, 1});
    for (int n = 0; n < n_total; ++n) {
        std::copy(traj.state(n).begin(), traj.state(n).end(), x.data.begin());
        Tensor f = drift_batch(cfg, params, target, schedule.sigma, x, n, n_total);
        logpf[n] = forward_logpdf(schedule, n, f.view(), traj.state(n), traj.state(n + 1));
        logpb[n] = (schedule.kind == ProcessKind::VE && n == 0)
                       ? 0.0
                       : backward_logpdf(schedule, n, traj.state(n), traj.state(n + 1));
    }
    return from_arrays(std::move(phi), logpf, logpb);
}

double subtb_weight(double lambda, int gap, int n_steps) {
    if (!(lambda > 0.0)) throw std::invalid_argument("subtb: lambda must be positive");
    const int anchor = lambda >= 1.0 ? n_steps : 1;
    return std::pow(lambda, gap - anchor);
}

double subtb_weight_sum(double lambda, int n_steps) {
    double acc = 0.0;
    for (int g = 1; g <= n_steps; ++g) {
        acc += (n_steps + 1 - g) * subtb_weight(lambda, g, n_steps);
    }
    return acc;
}

double SegmentResiduals::subtb_value(double lambda) const {
    const int n = n_steps();
    double acc = 0.0;
    for (int g = 1; g <= n; ++g) {
        const double w = subtb_weight(lambda, g, n);
        for (int m = 0; m + g <= n; ++m) {
            const double r = residual(m, m + g);
            acc += w * r * r;
        }
    }
    return acc / subtb_weight_sum(lambda, n);
}

double subtb_loss(const Trajectory& traj, const ModelConfig& cfg, const ParameterStore& params,
                  const TargetDensity& target, const Schedule& schedule, double lambda) {
    return SegmentResiduals::from_model(cfg, params, target, schedule, traj).subtb_value(lambda);
}

double db_loss(const Trajectory& traj, int n, const ModelConfig& cfg,
               const ParameterStore& params, const TargetDensity& target,
               const Schedule& schedule) {
    if (n < 0 || n >= traj.n_steps) throw std::invalid_argument("db_loss: bad transition index");
    return SegmentResiduals::from_model(cfg, params, target, schedule, traj).db_value(n);
}

double tb_loss(const Trajectory& traj, const ModelConfig& cfg, const ParameterStore& params,
               const TargetDensity& target, const Schedule& schedule) {
    return SegmentResiduals::from_model(cfg, params, target, schedule, traj).tb_value();
}

ObjectiveBuild build_objective_shard(Tape& tape, Objective objective, const ModelConfig& cfg,
                                     ParameterStore& params, const TargetDensity& target,
                                     const Schedule& schedule, const TrajectoryBatch& shard,
                                     double lambda) {
    const bool is_kl = objective == Objective::KlPis || objective == Objective::KlDds;
    if (objective == Objective::KlPis && schedule.kind != ProcessKind::VE) {
        throw std::invalid_argument("kl_pis requires a VE schedule");
    }
    if (objective == Objective::KlDds && schedule.kind != ProcessKind::VP) {
        throw std::invalid_argument("kl_dds requires a VP schedule");
    }

    // Start from the rollout-valid columns; drop further columns whose loss
    // ingredients come out non-finite, then rebuild once on the survivors.
    std::vector<std::size_t> cols;
    for (std::size_t j = 0; j < shard.batch; ++j) {
        if (shard.valid[j]) cols.push_back(j);
    }
    ObjectiveBuild out;
    out.dropped = shard.batch - cols.size();

    TrajectoryBatch current;
    const TrajectoryBatch* active = &shard;
    if (cols.size() != shard.batch) {
        current = select_columns(shard, cols);
        active = &current;
    }

    for (int attempt = 0; attempt < 3; ++attempt) {
        if (active->batch == 0) {
            out.empty = true;
            out.used = 0;
            out.node = tape.constant_scalar(0.0);
            return out;
        }
        NodeRef per_col;
        if (is_kl) {
            per_col = build_kl_row(tape, cfg, params, target, schedule, *active);
        } else {
            per_col = build_balance_u(tape, cfg, params, target, schedule, *active).u;
        }
        const std::vector<std::size_t> good = finite_columns(tape.value(per_col));
        if (good.size() == active->batch) {
            out.used = active->batch;
            if (is_kl) {
                out.node = tape.sum(per_col);
            } else {
                out.node = reduce_balance(tape, objective, per_col, schedule.n_steps, lambda);
            }
            return out;
        }
        out.dropped += active->batch - good.size();
        current = select_columns(*active, good);
        active = &current;
    }
    out.empty = true;
    out.used = 0;
    out.node = tape.constant_scalar(0.0);
    return out;
}

double objective_norm(Objective objective, const Schedule& schedule, double lambda,
                      std::size_t total_used) {
    const double b = static_cast<double>(total_used);
    switch (objective) {
        case Objective::SubTB:
            return subtb_weight_sum(lambda, schedule.n_steps) * b;
        case Objective::DB:
            return static_cast<double>(schedule.n_steps) * b;
        case Objective::TB:
        case Objective::SubTBFullPath:
        case Objective::KlPis:
        case Objective::KlDds:
            return b;
    }
    return b;
}

namespace {

double kl_loss_value(Objective objective, const ModelConfig& cfg, ParameterStore& params,
                     const TargetDensity& target, const Schedule& schedule, std::size_t batch,
                     std::uint64_t seed) {
    StreamKey key{seed, stream_purpose::kLossSample, 0};
    TrajectoryBatch tb =
        rollout(cfg, params, schedule, target, batch, schedule.sigma, key, ExecPolicy{});
    Tape tape;
    ObjectiveBuild b = build_objective_shard(tape, objective, cfg, params, target, schedule, tb,
                                             /*lambda=*/1.0);
    if (b.empty) throw std::runtime_error("kl loss: every path was dropped as non-finite");
    return tape.value(b.node).scalar_value() /
           objective_norm(objective, schedule, 1.0, b.used);
}

}  // namespace

double kl_pis_loss(const ModelConfig& cfg, ParameterStore& params, const TargetDensity& target,
                   const Schedule& schedule, std::size_t batch, std::uint64_t seed) {
    return kl_loss_value(Objective::KlPis, cfg, params, target, schedule, batch, seed);
}

double kl_dds_loss(const ModelConfig& cfg, ParameterStore& params, const TargetDensity& target,
                   const Schedule& schedule, std::size_t batch, std::uint64_t seed) {
    return kl_loss_value(Objective::KlDds, cfg, params, target, schedule, batch, seed);
}

}  // namespace gfs
