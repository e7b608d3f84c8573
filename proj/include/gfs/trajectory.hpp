#pragma once

#include <cstdint>
#include <span>
#include <vector>

#include "gfs/tensor.hpp"

namespace gfs {

// One sampled path (x_0 .. x_N) with the noises that generated it, cached
// drift outputs, and per-step log-densities. logpf is recorded under the
// model's own sigma even when the rollout used an inflated exploration
// sigma; for VE, logpb[0] is fixed to 0 (the step-0 backward kernel is the
// Dirac at the origin and cancels in every ratio that uses it).
struct Trajectory {
    int n_steps = 0;
    std::size_t dim = 0;
    std::vector<double> states;  // (N+1) * D
    std::vector<double> noises;  // N * D
    std::vector<double> drifts;  // N * D
    std::vector<double> logpf;   // N
    std::vector<double> logpb;   // N
    bool valid = true;

    std::span<const double> state(int n) const { return {states.data() + n * dim, dim}; }
    std::span<const double> noise(int n) const { return {noises.data() + n * dim, dim}; }
    std::span<const double> drift(int n) const { return {drifts.data() + n * dim, dim}; }
};

// Column-per-path container used by the compute paths; column j of every
// tensor belongs to one trajectory.
struct TrajectoryBatch {
    int n_steps = 0;
    std::size_t dim = 0;
    std::size_t batch = 0;
    std::vector<Tensor> states;  // N+1 tensors {D,B}
    std::vector<Tensor> noises;  // N tensors {D,B}
    std::vector<Tensor> drifts;  // N tensors {D,B}
    Tensor logpf;                // {N,B}
    Tensor logpb;                // {N,B}
    std::vector<std::uint8_t> valid;

    std::size_t invalid_count() const;
    Trajectory extract(std::size_t b) const;
    static TrajectoryBatch from_trajectory(const Trajectory& t);
};

}  // namespace gfs
