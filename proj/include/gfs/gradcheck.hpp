#pragma once

#include <functional>
#include <string>

#include "gfs/params.hpp"

namespace gfs {

// Compares reverse-mode gradients against central finite differences.
//
// `loss` must be deterministic given the store. When called with
// want_grad=true it must also run a backward pass that accumulates gradients
// into the store; with want_grad=false only the value is needed.
//
// Returns max over parameter entries of |analytic - fd| / max(1, |fd|).
// Throws if the loss is non-finite at a perturbed point, naming the
// offending parameter.
double gradcheck(const std::function<double(ParameterStore&, bool want_grad)>& loss,
                 ParameterStore& store, double fd_step);

}  // namespace gfs
