#pragma once

#include <functional>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "gfs/tape.hpp"
#include "gfs/tensor.hpp"

namespace gfs {

// Unnormalized benchmark density with analytic score and known log-normalizer.
// The taped builders express the same log-density / score as tape primitives
// so that losses needing gradients through x can differentiate them exactly.
struct TargetDensity {
    std::string name;
    std::size_t dim = 0;
    double true_log_z = 0.0;
    std::string log_z_provenance;  // "closed-form" or "quadrature"

    std::function<double(std::span<const double>)> log_mu;
    std::function<void(std::span<const double>, std::span<double>)> score;

    // x node {D,B} -> {1,B}
    std::function<NodeRef(Tape&, NodeRef)> taped_log_mu;
    // x node {D,B} -> {D,B}
    std::function<NodeRef(Tape&, NodeRef)> taped_score;
};

TargetDensity make_mog(bool plus = false);
TargetDensity make_funnel();
TargetDensity make_manywell();
// Isotropic N(0, var I) scaled by exp(log_scale); true log Z = log_scale.
TargetDensity make_gaussian(std::size_t dim, double var, double log_scale);

// Registry used by the CLI config: mog, mog_plus, funnel, manywell.
TargetDensity make_target(const std::string& name);

// Single evaluation pass; the score half is skipped for score-free models.
std::pair<double, std::vector<double>> evaluate(const TargetDensity& target,
                                                std::span<const double> x,
                                                bool want_score = true);

// Column-wise helpers over a {D,B} state matrix.
Tensor log_mu_batch(const TargetDensity& target, const Tensor& x);  // {1,B}
Tensor score_batch(const TargetDensity& target, const Tensor& x);   // {D,B}

// Adaptive Simpson quadrature on [a,b] with absolute tolerance tol.
double adaptive_simpson(const std::function<double(double)>& f, double a, double b, double tol);

}  // namespace gfs
