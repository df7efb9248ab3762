#pragma once

#include "emo/nn/value.hpp"

#include <functional>
#include <string>
#include <vector>

namespace emo::nn {

struct GradCheckResult {
  double max_relative_error = 0.0;
  bool finite = true;
  std::string worst;  // "<tensor>[<index>]" of the largest error
};

/// Compares analytic gradients of `f` with central differences for every
/// coordinate of `params`. The relative error denominator is
/// max(|analytic|, |numeric|, 1e-8). `f` must rebuild its graph each call.
GradCheckResult finite_diff_check(const std::function<Value()>& f,
                                  const std::vector<Value>& params, double eps);

}  // namespace emo::nn
