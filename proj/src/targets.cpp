#include "gfs/targets.hpp"

#include <array>
#include <cmath>
#include <stdexcept>

#include "gfs/fastmath.hpp"

namespace gfs {

namespace {

constexpr double kLog2Pi = 1.8378770664093454836;
constexpr double kFunnelClamp = 20.0;  // exponent guard; density there is ~1e-9 of the mode

// Broadcast a {1,B} row to {D,B} via a constant ones matrix.
NodeRef bcast_rows(Tape& t, NodeRef row, std::size_t d) {
    NodeRef ones = t.constant(Tensor::full({d, 1}, 1.0));
    NodeRef zero = t.constant(Tensor::zeros({d}));
    return t.affine(ones, zero, row);
}

struct MogLayout {
    std::vector<std::array<double, 2>> means;
    double var;
};

MogLayout mog_layout(bool plus) {
    MogLayout s;
    s.var = 0.3;
    const double g = plus ? 10.0 : 5.0;
    for (double mx : {-g, 0.0, g}) {
        for (double my : {-g, 0.0, g}) {
            s.means.push_back({mx, my});
        }
    }
    return s;
}

double simpson_rec(const std::function<double(double)>& f, double a, double b, double fa,
                   double fb, double fm, double whole, double tol, int depth) {
    const double m = 0.5 * (a + b);
    const double lm = 0.5 * (a + m), rm = 0.5 * (m + b);
    const double flm = f(lm), frm = f(rm);
    const double left = (m - a) / 6.0 * (fa + 4.0 * flm + fm);
    const double right = (b - m) / 6.0 * (fm + 4.0 * frm + fb);
    const double delta = left + right - whole;
    if (depth <= 0 || std::abs(delta) <= 15.0 * tol) {
        return left + right + delta / 15.0;
    }
    return simpson_rec(f, a, m, fa, fm, flm, left, 0.5 * tol, depth - 1) +
           simpson_rec(f, m, b, fm, fb, frm, right, 0.5 * tol, depth - 1);
}

}  // namespace

double adaptive_simpson(const std::function<double(double)>& f, double a, double b, double tol) {
    const double fa = f(a), fb = f(b), fm = f(0.5 * (a + b));
    const double whole = (b - a) / 6.0 * (fa + 4.0 * fm + fb);
    return simpson_rec(f, a, b, fa, fb, fm, whole, tol, 48);
}

TargetDensity make_mog(bool plus) {
    const MogLayout layout = mog_layout(plus);
    const double var = layout.var;
    const double log_w = -std::log(static_cast<double>(layout.means.size()));
    const double log_norm = -kLog2Pi - std::log(var);  // D = 2

    TargetDensity t;
    t.name = plus ? "mog_plus" : "mog";
    t.dim = 2;
    t.true_log_z = 0.0;
    t.log_z_provenance = "closed-form";

    auto means = layout.means;
    t.log_mu = [means, var, log_w, log_norm](std::span<const double> x) {
        double m = -INFINITY;
        double comp[9];
        for (std::size_t k = 0; k < means.size(); ++k) {
            const double dx = x[0] - means[k][0];
            const double dy = x[1] - means[k][1];
            comp[k] = log_w + log_norm - (dx * dx + dy * dy) / (2.0 * var);
            m = std::max(m, comp[k]);
        }
        double acc = 0.0;
        for (std::size_t k = 0; k < means.size(); ++k) acc += fast_exp(comp[k] - m);
        return m + std::log(acc);
    };
    t.score = [means, var, log_w, log_norm](std::span<const double> x, std::span<double> out) {
        double m = -INFINITY;
        double comp[9];
        for (std::size_t k = 0; k < means.size(); ++k) {
            const double dx = x[0] - means[k][0];
            const double dy = x[1] - means[k][1];
            comp[k] = log_w + log_norm - (dx * dx + dy * dy) / (2.0 * var);
            m = std::max(m, comp[k]);
        }
        double acc = 0.0;
        for (std::size_t k = 0; k < means.size(); ++k) acc += fast_exp(comp[k] - m);
        out[0] = 0.0;
        out[1] = 0.0;
        for (std::size_t k = 0; k < means.size(); ++k) {
            const double w = fast_exp(comp[k] - m) / acc;
            out[0] += w * (means[k][0] - x[0]) / var;
            out[1] += w * (means[k][1] - x[1]) / var;
        }
    };

    auto component_rows = [means, var, log_w, log_norm](Tape& tp, NodeRef x) {
        std::vector<NodeRef> rows;
        const std::size_t b = tp.value(x).cols();
        for (const auto& mk : means) {
            Tensor mean_mat = Tensor::zeros({2, b});
            for (std::size_t j = 0; j < b; ++j) {
                mean_mat.data[j] = mk[0];
                mean_mat.data[b + j] = mk[1];
            }
            NodeRef diff = tp.sub(x, tp.constant(std::move(mean_mat)));
            NodeRef q = tp.sum_cols(tp.square(diff));
            NodeRef row = tp.add(tp.scalar_mul(q, -0.5 / var),
                                 tp.constant(Tensor::full({1, b}, log_w + log_norm)));
            rows.push_back(row);
        }
        return rows;
    };
    t.taped_log_mu = [component_rows](Tape& tp, NodeRef x) {
        auto rows = component_rows(tp, x);
        return tp.logsumexp_cols(tp.concat_rows(rows));
    };
    t.taped_score = [component_rows, means, var](Tape& tp, NodeRef x) {
        auto rows = component_rows(tp, x);
        NodeRef lse = tp.logsumexp_cols(tp.concat_rows(rows));
        const std::size_t b = tp.value(x).cols();
        NodeRef acc{};
        bool first = true;
        for (std::size_t k = 0; k < means.size(); ++k) {
            NodeRef w = tp.exp(tp.sub(rows[k], lse));
            Tensor mean_mat = Tensor::zeros({2, b});
            for (std::size_t j = 0; j < b; ++j) {
                mean_mat.data[j] = means[k][0];
                mean_mat.data[b + j] = means[k][1];
            }
            NodeRef pull = tp.sub(tp.constant(std::move(mean_mat)), x);
            NodeRef term = tp.scalar_mul(tp.mul(bcast_rows(tp, w, 2), pull), 1.0 / var);
            acc = first ? term : tp.add(acc, term);
            first = false;
        }
        return acc;
    };
    return t;
}

TargetDensity make_funnel() {
    constexpr std::size_t kDim = 10;
    const double c0 = -0.5 * std::log(2.0 * M_PI * 9.0);
    const double crest = -0.5 * (kDim - 1) * kLog2Pi;

    TargetDensity t;
    t.name = "funnel";
    t.dim = kDim;
    t.true_log_z = 0.0;
    t.log_z_provenance = "closed-form";

    t.log_mu = [c0, crest](std::span<const double> x) {
        const double v = x[0];
        const double vc = std::min(std::max(v, -kFunnelClamp), kFunnelClamp);
        double s2 = 0.0;
        for (std::size_t i = 1; i < kDim; ++i) s2 += x[i] * x[i];
        return c0 - v * v / 18.0 + crest - 0.5 * (kDim - 1) * v - 0.5 * fast_exp(-vc) * s2;
    };
    t.score = [](std::span<const double> x, std::span<double> out) {
        const double v = x[0];
        const double vc = std::min(std::max(v, -kFunnelClamp), kFunnelClamp);
        const double e = fast_exp(-vc);
        double s2 = 0.0;
        for (std::size_t i = 1; i < kDim; ++i) s2 += x[i] * x[i];
        out[0] = -v / 9.0 - 0.5 * (kDim - 1) + 0.5 * e * s2;
        for (std::size_t i = 1; i < kDim; ++i) out[i] = -x[i] * e;
    };

    t.taped_log_mu = [c0, crest](Tape& tp, NodeRef x) {
        const std::size_t b = tp.value(x).cols();
        NodeRef v = tp.slice_rows(x, 0, 1);
        NodeRef rest = tp.slice_rows(x, 1, kDim);
        NodeRef s2 = tp.sum_cols(tp.square(rest));
        NodeRef e = tp.exp(tp.scalar_mul(tp.clip(v, -kFunnelClamp, kFunnelClamp), -1.0));
        NodeRef out = tp.scalar_mul(tp.square(v), -1.0 / 18.0);
        out = tp.add(out, tp.scalar_mul(v, -0.5 * (kDim - 1)));
        out = tp.add(out, tp.scalar_mul(tp.mul(e, s2), -0.5));
        return tp.add(out, tp.constant(Tensor::full({1, b}, c0 + crest)));
    };
    t.taped_score = [](Tape& tp, NodeRef x) {
        const std::size_t b = tp.value(x).cols();
        NodeRef v = tp.slice_rows(x, 0, 1);
        NodeRef rest = tp.slice_rows(x, 1, kDim);
        NodeRef s2 = tp.sum_cols(tp.square(rest));
        NodeRef e = tp.exp(tp.scalar_mul(tp.clip(v, -kFunnelClamp, kFunnelClamp), -1.0));
        NodeRef s0 = tp.scalar_mul(v, -1.0 / 9.0);
        s0 = tp.add(s0, tp.scalar_mul(tp.mul(e, s2), 0.5));
        s0 = tp.add(s0, tp.constant(Tensor::full({1, b}, -0.5 * (kDim - 1))));
        NodeRef si = tp.scalar_mul(tp.mul(rest, bcast_rows(tp, e, kDim - 1)), -1.0);
        std::array<NodeRef, 2> parts{s0, si};
        return tp.concat_rows(parts);
    };
    return t;
}

TargetDensity make_manywell() {
    constexpr std::size_t kDim = 32;
    constexpr std::size_t kPairs = kDim / 2;

    // One-dimensional well normalizer, integrated with the exponent shifted
    // to keep the integrand O(1).
    const auto well = [](double u) { return -u * u * u * u + 6.0 * u * u + 0.5 * u; };
    double peak = 0.0;
    for (double u = -3.0; u <= 3.0; u += 1e-3) peak = std::max(peak, well(u));
    const double shifted =
        adaptive_simpson([&](double u) { return std::exp(well(u) - peak); }, -5.0, 5.0, 1e-10);
    const double log_z1 = peak + std::log(shifted);

    TargetDensity t;
    t.name = "manywell";
    t.dim = kDim;
    t.true_log_z = kPairs * (log_z1 + 0.5 * kLog2Pi);
    t.log_z_provenance = "quadrature";

    t.log_mu = [](std::span<const double> x) {
        double acc = 0.0;
        for (std::size_t p = 0; p < kPairs; ++p) {
            const double a = x[2 * p], y = x[2 * p + 1];
            acc += -a * a * a * a + 6.0 * a * a + 0.5 * a - 0.5 * y * y;
        }
        return acc;
    };
    t.score = [](std::span<const double> x, std::span<double> out) {
        for (std::size_t p = 0; p < kPairs; ++p) {
            const double a = x[2 * p];
            out[2 * p] = -4.0 * a * a * a + 12.0 * a + 0.5;
            out[2 * p + 1] = -x[2 * p + 1];
        }
    };

    t.taped_log_mu = [](Tape& tp, NodeRef x) {
        // Even rows a: -a^4 + 6a^2 + 0.5a ; odd rows y: -y^2/2, summed.
        std::vector<NodeRef> rows;
        for (std::size_t p = 0; p < kPairs; ++p) {
            NodeRef a = tp.slice_rows(x, 2 * p, 2 * p + 1);
            NodeRef y = tp.slice_rows(x, 2 * p + 1, 2 * p + 2);
            NodeRef a2 = tp.square(a);
            NodeRef term = tp.scalar_mul(tp.square(a2), -1.0);
            term = tp.add(term, tp.scalar_mul(a2, 6.0));
            term = tp.add(term, tp.scalar_mul(a, 0.5));
            term = tp.add(term, tp.scalar_mul(tp.square(y), -0.5));
            rows.push_back(term);
        }
        return tp.sum_cols(tp.concat_rows(rows));
    };
    t.taped_score = [](Tape& tp, NodeRef x) {
        std::vector<NodeRef> rows;
        const std::size_t b = tp.value(x).cols();
        for (std::size_t p = 0; p < kPairs; ++p) {
            NodeRef a = tp.slice_rows(x, 2 * p, 2 * p + 1);
            NodeRef y = tp.slice_rows(x, 2 * p + 1, 2 * p + 2);
            NodeRef a3 = tp.mul(tp.square(a), a);
            NodeRef sa = tp.add(tp.scalar_mul(a3, -4.0), tp.scalar_mul(a, 12.0));
            sa = tp.add(sa, tp.constant(Tensor::full({1, b}, 0.5)));
            rows.push_back(sa);
            rows.push_back(tp.scalar_mul(y, -1.0));
        }
        return tp.concat_rows(rows);
    };
    return t;
}

TargetDensity make_gaussian(std::size_t dim, double var, double log_scale) {
    TargetDensity t;
    t.name = "gaussian";
    t.dim = dim;
    t.true_log_z = log_scale;
    t.log_z_provenance = "closed-form";
    const double log_norm = -0.5 * (kLog2Pi + std::log(var));

    t.log_mu = [dim, var, log_scale, log_norm](std::span<const double> x) {
        double q = 0.0;
        for (std::size_t i = 0; i < dim; ++i) q += x[i] * x[i];
        return log_scale + dim * log_norm - 0.5 * q / var;
    };
    t.score = [dim, var](std::span<const double> x, std::span<double> out) {
        for (std::size_t i = 0; i < dim; ++i) out[i] = -x[i] / var;
    };
    t.taped_log_mu = [dim, var, log_scale, log_norm](Tape& tp, NodeRef x) {
        const std::size_t b = tp.value(x).cols();
        NodeRef q = tp.sum_cols(tp.square(x));
        return tp.add(tp.scalar_mul(q, -0.5 / var),
                      tp.constant(Tensor::full({1, b}, log_scale + dim * log_norm)));
    };
    t.taped_score = [var](Tape& tp, NodeRef x) { return tp.scalar_mul(x, -1.0 / var); };
    return t;
}

TargetDensity make_target(const std::string& name) {
    if (name == "mog") return make_mog(false);
    if (name == "mog_plus") return make_mog(true);
    if (name == "funnel") return make_funnel();
    if (name == "manywell") return make_manywell();
    throw std::invalid_argument("unknown target: " + name);
}

std::pair<double, std::vector<double>> evaluate(const TargetDensity& target,
                                                std::span<const double> x, bool want_score) {
    if (x.size() != target.dim) {
        throw std::invalid_argument("evaluate: state length " + std::to_string(x.size()) +
                                    " does not match target dim " + std::to_string(target.dim));
    }
    std::vector<double> s;
    if (want_score) {
        s.assign(target.dim, 0.0);
        target.score(x, s);
    }
    return {target.log_mu(x), std::move(s)};
}

Tensor log_mu_batch(const TargetDensity& target, const Tensor& x) {
    const std::size_t d = x.rows(), b = x.cols();
    Tensor out = Tensor::zeros({1, b});
    std::vector<double> col(d);
    for (std::size_t j = 0; j < b; ++j) {
        x.copy_col(j, col);
        out.data[j] = target.log_mu(col);
    }
    return out;
}

Tensor score_batch(const TargetDensity& target, const Tensor& x) {
    const std::size_t d = x.rows(), b = x.cols();
    Tensor out = Tensor::zeros({d, b});
    std::vector<double> col(d), s(d);
    for (std::size_t j = 0; j < b; ++j) {
        x.copy_col(j, col);
        target.score(col, s);
        for (std::size_t i = 0; i < d; ++i) out.data[i * b + j] = s[i];
    }
    return out;
}

}  // namespace gfs
