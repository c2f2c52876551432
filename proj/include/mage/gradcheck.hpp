#pragma once

#include <functional>
#include <vector>

#include "mage/graph.hpp"
#include "mage/rng.hpp"
#include "mage/tensor.hpp"

namespace mage {

// Central finite differences against reverse-mode gradients.
//
// `eval(with_grad)` rebuilds the computation from scratch (it is called many
// times with perturbed parameter values) and returns the scalar loss; when
// with_grad is true it must also leave gradients in each Param::grad.
// Gradients are compared at up to `max_coords` coordinates per parameter,
// sampled with `rng`. Returns max over coordinates of
// |analytic - numeric| / (|analytic| + |numeric| + 1e-8).
double grad_check(const std::vector<ag::Param*>& params,
                  const std::function<double(bool with_grad)>& eval, RngStream& rng,
                  double epsilon = 1e-3, int max_coords = 20);

} // namespace mage
