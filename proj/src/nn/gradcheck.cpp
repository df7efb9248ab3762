#include "emo/nn/gradcheck.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

namespace emo::nn {

GradCheckResult finite_diff_check(const std::function<Value()>& f,
                                  const std::vector<Value>& params,
                                  double eps) {
  if (!(eps > 0.0)) throw std::invalid_argument("finite_diff_check: eps must be > 0");
  GradCheckResult result;

  auto params_copy = params;
  for (auto& p : params_copy) p.zero_grad();
  const Value root = f();
  if (!std::isfinite(root.item())) {
    result.finite = false;
    result.worst = "f(p)";
    return result;
  }
  backward(root);

  for (std::size_t pi = 0; pi < params_copy.size(); ++pi) {
    Value& p = params_copy[pi];
    const Matrix analytic = p.grad();
    Matrix& data = p.mutable_data();
    for (Eigen::Index i = 0; i < data.size(); ++i) {
      const double saved = data(i);
      data(i) = saved + eps;
      const double up = f().item();
      data(i) = saved - eps;
      const double down = f().item();
      data(i) = saved;
      if (!std::isfinite(up) || !std::isfinite(down)) {
        result.finite = false;
        result.worst = "param" + std::to_string(pi) + "[" + std::to_string(i) + "]";
        return result;
      }
      const double numeric = (up - down) / (2.0 * eps);
      const double a = analytic(i);
      const double denom = std::max({std::abs(a), std::abs(numeric), 1e-8});
      const double rel = std::abs(a - numeric) / denom;
      if (rel > result.max_relative_error) {
        result.max_relative_error = rel;
        result.worst = "param" + std::to_string(pi) + "[" + std::to_string(i) + "]";
      }
    }
  }
  return result;
}

}  // namespace emo::nn
