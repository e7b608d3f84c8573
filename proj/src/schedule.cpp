#include "gfs/schedule.hpp"

#include <cmath>
#include <stdexcept>
#include <string>

namespace gfs {

namespace {
constexpr double kLog2Pi = 1.8378770664093454836;
}

Schedule Schedule::ve(int n_steps, double h, double sigma) {
    Schedule s;
    s.kind = ProcessKind::VE;
    s.n_steps = n_steps;
    s.h = h;
    s.sigma = sigma;
    s.validate();
    return s;
}

Schedule Schedule::vp(int n_steps, double sigma, double beta_start, double beta_end) {
    Schedule s;
    s.kind = ProcessKind::VP;
    s.n_steps = n_steps;
    s.h = 0.0;
    s.sigma = sigma;
    s.betas.resize(n_steps);
    for (int n = 0; n < n_steps; ++n) {
        const double frac = n_steps > 1 ? static_cast<double>(n) / (n_steps - 1) : 0.0;
        s.betas[n] = beta_start + (beta_end - beta_start) * frac;
    }
    s.validate();
    return s;
}

void Schedule::validate() const {
    if (n_steps < 2) throw std::invalid_argument("Schedule: n_steps must be >= 2");
    if (sigma <= 0.0) throw std::invalid_argument("Schedule: sigma must be positive");
    if (kind == ProcessKind::VE) {
        if (h <= 0.0) throw std::invalid_argument("Schedule: VE step size h must be positive");
    } else {
        if (static_cast<int>(betas.size()) != n_steps) {
            throw std::invalid_argument("Schedule: VP needs one beta per step");
        }
        for (double b : betas) {
            if (!(b > 0.0 && b < 1.0)) {
                throw std::invalid_argument("Schedule: VP betas must lie in (0,1)");
            }
        }
    }
}

double Schedule::ref_marginal_var(int n) const {
    if (kind == ProcessKind::VE) return n * h * sigma * sigma;
    return sigma * sigma;
}

double iso_gauss_logpdf(std::span<const double> x, std::span<const double> mean, double var) {
    double q = 0.0;
    for (std::size_t i = 0; i < x.size(); ++i) {
        const double d = x[i] - mean[i];
        q += d * d;
    }
    return -0.5 * x.size() * (kLog2Pi + std::log(var)) - 0.5 * q / var;
}

double iso_gauss_logpdf_centered(std::span<const double> x, double var) {
    double q = 0.0;
    for (double v : x) q += v * v;
    return -0.5 * x.size() * (kLog2Pi + std::log(var)) - 0.5 * q / var;
}

double ref_marginal_logpdf(const Schedule& s, int n, std::span<const double> x) {
    if (n < 0 || n > s.n_steps) throw std::invalid_argument("ref_marginal_logpdf: bad step");
    if (s.kind == ProcessKind::VE && n == 0) {
        throw std::invalid_argument("ref_marginal_logpdf: VE step 0 is a point mass at 0");
    }
    return iso_gauss_logpdf_centered(x, s.ref_marginal_var(n));
}

double backward_logpdf(const Schedule& s, int n, std::span<const double> x_n,
                       std::span<const double> x_next) {
    if (n < 0 || n >= s.n_steps) throw std::invalid_argument("backward_logpdf: bad step");
    if (s.kind == ProcessKind::VE) {
        if (n == 0) {
            throw std::invalid_argument("backward_logpdf: VE step 0 kernel is a Dirac at 0");
        }
        const double ratio = static_cast<double>(n) / (n + 1);
        const double var = ratio * s.h * s.sigma * s.sigma;
        double q = 0.0;
        for (std::size_t i = 0; i < x_n.size(); ++i) {
            const double d = x_n[i] - ratio * x_next[i];
            q += d * d;
        }
        return -0.5 * x_n.size() * (kLog2Pi + std::log(var)) - 0.5 * q / var;
    }
    const double beta = s.betas[n];
    const double var = beta * s.sigma * s.sigma;
    const double a = std::sqrt(1.0 - beta);
    double q = 0.0;
    for (std::size_t i = 0; i < x_n.size(); ++i) {
        const double d = x_n[i] - a * x_next[i];
        q += d * d;
    }
    return -0.5 * x_n.size() * (kLog2Pi + std::log(var)) - 0.5 * q / var;
}

double forward_logpdf(const Schedule& s, int n, std::span<const double> drift,
                      std::span<const double> x_n, std::span<const double> x_next) {
    if (n < 0 || n >= s.n_steps) throw std::invalid_argument("forward_logpdf: bad step");
    const double a = step_mean_coeff(s, n);
    const double gain = step_drift_gain(s, n);
    const double var = step_kernel_var(s, n);
    double q = 0.0;
    for (std::size_t i = 0; i < x_n.size(); ++i) {
        const double d = x_next[i] - (a * x_n[i] + gain * drift[i]);
        q += d * d;
    }
    return -0.5 * x_n.size() * (kLog2Pi + std::log(var)) - 0.5 * q / var;
}

double step_mean_coeff(const Schedule& s, int n) {
    if (s.kind == ProcessKind::VE) return 1.0;
    return std::sqrt(1.0 - s.betas[n]);
}

double step_drift_gain(const Schedule& s, int n) {
    (void)n;
    return s.kind == ProcessKind::VE ? s.h : 1.0;
}

double step_noise_scale(const Schedule& s, int n, double sigma) {
    if (s.kind == ProcessKind::VE) return std::sqrt(s.h) * sigma;
    return std::sqrt(s.betas[n]) * sigma;
}

double step_kernel_var(const Schedule& s, int n) {
    if (s.kind == ProcessKind::VE) return s.h * s.sigma * s.sigma;
    return s.betas[n] * s.sigma * s.sigma;
}

}  // namespace gfs
