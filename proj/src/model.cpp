#include "gfs/model.hpp"

#include <cmath>
#include <stdexcept>

#include "gfs/fastmath.hpp"
#include "gfs/rng.hpp"

namespace gfs {

namespace {

Tensor mlp_affine(const Tensor& w, const Tensor& b, const Tensor& x) {
    Tensor out;
    gemm_nn(w, x, out, false);
    const std::size_t m = out.rows(), c = out.cols();
    for (std::size_t i = 0; i < m; ++i) {
        for (std::size_t j = 0; j < c; ++j) out.data[i * c + j] += b.data[i];
    }
    return out;
}

void apply_activation(Tensor& t, const std::string& act) {
    if (act == "tanh") {
        for (double& v : t.data) v = fast_tanh(v);
    } else {
        for (double& v : t.data) v = 0.5 * v * (1.0 + std::erf(v * 0.7071067811865475244));
    }
}

// Two hidden layers then a linear output: w2(act(w1(act(w0 x + b0)) + b1)) + b2.
Tensor mlp_forward(const ParameterStore& p, const std::string& prefix, const Tensor& in,
                   const std::string& act) {
    Tensor h = mlp_affine(p.value(prefix + ".w0"), p.value(prefix + ".b0"), in);
    apply_activation(h, act);
    h = mlp_affine(p.value(prefix + ".w1"), p.value(prefix + ".b1"), h);
    apply_activation(h, act);
    return mlp_affine(p.value(prefix + ".w2"), p.value(prefix + ".b2"), h);
}

NodeRef taped_activation(Tape& t, NodeRef x, const std::string& act) {
    return act == "tanh" ? t.tanh(x) : t.gelu(x);
}

NodeRef taped_mlp(Tape& t, ParameterStore& p, const std::string& prefix, NodeRef in,
                  const std::string& act) {
    NodeRef h = t.affine(t.param(p, prefix + ".w0"), t.param(p, prefix + ".b0"), in);
    h = taped_activation(t, h, act);
    h = t.affine(t.param(p, prefix + ".w1"), t.param(p, prefix + ".b1"), h);
    h = taped_activation(t, h, act);
    return t.affine(t.param(p, prefix + ".w2"), t.param(p, prefix + ".b2"), h);
}

NodeRef bcast_row(Tape& t, NodeRef row_1x1, std::size_t batch) {
    NodeRef ones = t.constant(Tensor::full({1, batch}, 1.0));
    return t.affine(row_1x1, t.constant(Tensor::zeros({1})), ones);
}

void add_mlp_params(ParameterStore& store, const std::string& prefix, std::size_t in,
                    std::size_t hidden, std::size_t out, const CounterRng& rng,
                    std::uint64_t tensor_tag) {
    auto uniform_init = [&](std::vector<std::size_t> shape, std::size_t fan_in,
                            std::uint64_t sub) {
        Tensor t = Tensor::zeros(shape);
        const double a = 1.0 / std::sqrt(static_cast<double>(fan_in));
        const CounterRng sub_rng(CounterRng::derive(rng.key(), tensor_tag, sub));
        for (std::size_t i = 0; i < t.data.size(); ++i) {
            t.data[i] = a * (2.0 * sub_rng.uniform(i) - 1.0);
        }
        return t;
    };
    store.add(prefix + ".w0", uniform_init({hidden, in}, in, 0));
    store.add(prefix + ".b0", uniform_init({hidden}, in, 1));
    store.add(prefix + ".w1", uniform_init({hidden, hidden}, hidden, 2));
    store.add(prefix + ".b1", uniform_init({hidden}, hidden, 3));
    store.add(prefix + ".w2", Tensor::zeros({out, hidden}));
    store.add(prefix + ".b2", Tensor::zeros({out}));
}

}  // namespace

void ModelConfig::validate() const {
    if (dim == 0) throw std::invalid_argument("ModelConfig: dim must be positive");
    if (time_embed_dim == 0 || time_embed_dim % 2 != 0) {
        throw std::invalid_argument("ModelConfig: time_embed_dim must be positive and even");
    }
    if (hidden == 0) throw std::invalid_argument("ModelConfig: hidden must be positive");
    if (!(freq_min > 0.0) || !(freq_max >= freq_min)) {
        throw std::invalid_argument("ModelConfig: need 0 < freq_min <= freq_max");
    }
    if (activation != "tanh" && activation != "gelu") {
        throw std::invalid_argument("ModelConfig: unknown activation " + activation);
    }
    if (score_clip <= 0.0) throw std::invalid_argument("ModelConfig: score_clip must be positive");
}

std::vector<double> time_embed(int n, int n_total, std::size_t dim, double freq_min,
                               double freq_max) {
    if (n < 0 || n > n_total) throw std::invalid_argument("time_embed: step out of range");
    const std::size_t k = dim / 2;
    const double t = static_cast<double>(n) / static_cast<double>(n_total);
    std::vector<double> out(dim);
    for (std::size_t i = 0; i < k; ++i) {
        const double frac = k > 1 ? static_cast<double>(i) / (k - 1) : 0.0;
        const double w = freq_min * std::pow(freq_max / freq_min, frac);
        out[i] = std::sin(w * t);
        out[k + i] = std::cos(w * t);
    }
    return out;
}

Tensor time_embed_cols(const ModelConfig& cfg, int n, int n_total, std::size_t batch) {
    const auto e = time_embed(n, n_total, cfg.time_embed_dim, cfg.freq_min, cfg.freq_max);
    Tensor out = Tensor::zeros({cfg.time_embed_dim, batch});
    for (std::size_t i = 0; i < e.size(); ++i) {
        for (std::size_t j = 0; j < batch; ++j) out.data[i * batch + j] = e[i];
    }
    return out;
}

ParameterStore init_params(const ModelConfig& cfg, std::uint64_t seed) {
    cfg.validate();
    ParameterStore store;
    const CounterRng rng(CounterRng::derive(seed, 0x696e6974));  // "init"
    add_mlp_params(store, "drift.nn1", cfg.dim + cfg.time_embed_dim, cfg.hidden, cfg.dim, rng, 1);
    add_mlp_params(store, "drift.nn2", cfg.time_embed_dim, cfg.hidden, 1, rng, 2);
    add_mlp_params(store, "flow.nn3", cfg.dim + cfg.time_embed_dim, cfg.hidden, 1, rng, 3);
    store.add("flow.c0", Tensor::zeros({1, 1}));
    return store;
}

std::size_t parameter_count(const ModelConfig& cfg) {
    const std::size_t in1 = cfg.dim + cfg.time_embed_dim, h = cfg.hidden;
    const std::size_t mlp1 = h * in1 + h + h * h + h + cfg.dim * h + cfg.dim;
    const std::size_t mlp2 = h * cfg.time_embed_dim + h + h * h + h + h + 1;
    const std::size_t mlp3 = h * in1 + h + h * h + h + h + 1;
    return mlp1 + mlp2 + mlp3 + 1;
}

Tensor drift_batch(const ModelConfig& cfg, const ParameterStore& params,
                   const TargetDensity& target, double sigma, const Tensor& x, int n,
                   int n_total) {
    const std::size_t b = x.cols();
    const Tensor temb = time_embed_cols(cfg, n, n_total, b);
    Tensor in = Tensor::zeros({cfg.dim + cfg.time_embed_dim, b});
    std::copy(x.data.begin(), x.data.end(), in.data.begin());
    std::copy(temb.data.begin(), temb.data.end(), in.data.begin() + x.data.size());

    Tensor out = mlp_forward(params, "drift.nn1", in, cfg.activation);
    if (cfg.use_score) {
        Tensor temb_col = time_embed_cols(cfg, n, n_total, 1);
        const Tensor gate = mlp_forward(params, "drift.nn2", temb_col, cfg.activation);
        const double g = gate.data[0];
        Tensor s = score_batch(target, x);
        for (double& v : s.data) v = std::min(std::max(v, -cfg.score_clip), cfg.score_clip);
        for (std::size_t i = 0; i < out.data.size(); ++i) out.data[i] += g * s.data[i];
    }
    for (double& v : out.data) v *= sigma;
    return out;
}

NodeRef taped_drift(Tape& tape, const ModelConfig& cfg, ParameterStore& params,
                    const TargetDensity& target, double sigma, NodeRef x, int n, int n_total,
                    bool score_through_x) {
    const std::size_t b = tape.value(x).cols();
    NodeRef temb = tape.constant(time_embed_cols(cfg, n, n_total, b));
    std::array<NodeRef, 2> parts{x, temb};
    NodeRef in = tape.concat_rows(parts);

    NodeRef out = taped_mlp(tape, params, "drift.nn1", in, cfg.activation);
    if (cfg.use_score) {
        NodeRef temb_col = tape.constant(time_embed_cols(cfg, n, n_total, 1));
        NodeRef gate = taped_mlp(tape, params, "drift.nn2", temb_col, cfg.activation);  // {1,1}
        NodeRef gate_row = bcast_row(tape, gate, b);
        NodeRef ones = tape.constant(Tensor::full({cfg.dim, 1}, 1.0));
        NodeRef gate_mat = tape.affine(ones, tape.constant(Tensor::zeros({cfg.dim})), gate_row);
        NodeRef s = score_through_x ? target.taped_score(tape, x)
                                    : tape.constant(score_batch(target, tape.value(x)));
        s = tape.clip(s, -cfg.score_clip, cfg.score_clip);
        out = tape.add(out, tape.mul(gate_mat, s));
    }
    return tape.scalar_mul(out, sigma);
}

double forward_looking_log_reward(const Schedule& schedule, const TargetDensity& target,
                                  std::span<const double> x, int n) {
    const double frac = static_cast<double>(n) / schedule.n_steps;
    return (1.0 - frac) * ref_marginal_logpdf(schedule, n, x) + frac * target.log_mu(x);
}

double log_flow(const ModelConfig& cfg, const ParameterStore& params, const TargetDensity& target,
                const Schedule& schedule, std::span<const double> x, int n) {
    if (n < 0 || n > schedule.n_steps) throw std::invalid_argument("log_flow: step out of range");
    if (n == schedule.n_steps) return target.log_mu(x);
    if (schedule.kind == ProcessKind::VE && n == 0) {
        for (double v : x) {
            if (v != 0.0) {
                throw std::invalid_argument("log_flow: VE step 0 only exists at the origin");
            }
        }
        return params.value("flow.c0").data[0];
    }

    const std::size_t d = x.size();
    Tensor in = Tensor::zeros({cfg.dim + cfg.time_embed_dim, 1});
    std::copy(x.begin(), x.end(), in.data.begin());
    const auto e = time_embed(n, schedule.n_steps, cfg.time_embed_dim, cfg.freq_min, cfg.freq_max);
    std::copy(e.begin(), e.end(), in.data.begin() + d);
    const Tensor corr = mlp_forward(params, "flow.nn3", in, cfg.activation);
    return forward_looking_log_reward(schedule, target, x, n) + corr.data[0];
}

NodeRef taped_log_flow(Tape& tape, const ModelConfig& cfg, ParameterStore& params,
                       const TargetDensity& target, const Schedule& schedule, const Tensor& x,
                       int n) {
    const std::size_t b = x.cols();
    if (n == schedule.n_steps) return tape.constant(log_mu_batch(target, x));
    if (schedule.kind == ProcessKind::VE && n == 0) {
        for (double v : x.data) {
            if (v != 0.0) {
                throw std::invalid_argument("taped_log_flow: VE step 0 only exists at the origin");
            }
        }
        return bcast_row(tape, tape.param(params, "flow.c0"), b);
    }

    Tensor fl = Tensor::zeros({1, b});
    std::vector<double> col(x.rows());
    for (std::size_t j = 0; j < b; ++j) {
        x.copy_col(j, col);
        fl.data[j] = forward_looking_log_reward(schedule, target, col, n);
    }

    const Tensor temb = time_embed_cols(cfg, n, schedule.n_steps, b);
    Tensor in = Tensor::zeros({cfg.dim + cfg.time_embed_dim, b});
    std::copy(x.data.begin(), x.data.end(), in.data.begin());
    std::copy(temb.data.begin(), temb.data.end(), in.data.begin() + x.data.size());

    NodeRef corr = taped_mlp(tape, params, "flow.nn3", tape.constant(std::move(in)),
                             cfg.activation);
    return tape.add(corr, tape.constant(std::move(fl)));
}

}  // namespace gfs
