#pragma once

#include <span>
#include <vector>

namespace gfs {

enum class ProcessKind { VE, VP };

// Discrete-time diffusion description. VE is the Brownian-increment chain
// started at 0; VP keeps a stationary N(0, sigma^2 I) reference at every step.
struct Schedule {
    ProcessKind kind = ProcessKind::VE;
    int n_steps = 100;
    double h = 0.05;      // VE step size
    double sigma = 1.0;
    std::vector<double> betas;  // VP only, one per step

    static Schedule ve(int n_steps, double h, double sigma);
    static Schedule vp(int n_steps, double sigma, double beta_start, double beta_end);

    // Reference marginal variance per coordinate at step n.
    double ref_marginal_var(int n) const;
    void validate() const;
};

// Closed-form reference marginal log-density p_n^ref. VE rejects n = 0 (the
// marginal there is a point mass at the origin).
double ref_marginal_logpdf(const Schedule& s, int n, std::span<const double> x);

// Fixed backward kernel log-density P_B(x_n | x_{n+1}). VE rejects n = 0.
double backward_logpdf(const Schedule& s, int n, std::span<const double> x_n,
                       std::span<const double> x_next);

// Learned forward kernel log-density given the drift value at (x_n, n),
// always evaluated under the schedule's own sigma.
double forward_logpdf(const Schedule& s, int n, std::span<const double> drift,
                      std::span<const double> x_n, std::span<const double> x_next);

// Per-step transition decomposition x_{n+1} = mean + noise_scale * eps, where
// mean = step_mean_coeff(n) * x_n + drift_gain(n) * drift and noise_scale uses
// the supplied sigma (the rollout may inflate it for exploration).
double step_mean_coeff(const Schedule& s, int n);   // VE: 1, VP: sqrt(1-beta_n)
double step_drift_gain(const Schedule& s, int n);   // VE: h, VP: 1
double step_noise_scale(const Schedule& s, int n, double sigma);  // VE: sqrt(h)*sigma
double step_kernel_var(const Schedule& s, int n);   // variance under the model sigma

// Isotropic Gaussian helpers.
double iso_gauss_logpdf(std::span<const double> x, std::span<const double> mean, double var);
double iso_gauss_logpdf_centered(std::span<const double> x, double var);

}  // namespace gfs
