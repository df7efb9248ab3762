#include "emo/losses.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>
#include <string>

namespace emo {

CccStats ccc_stats(std::span<const double> x, std::span<const double> y) {
  if (x.size() != y.size()) throw std::invalid_argument("ccc: length mismatch");
  if (x.size() < 2) throw std::invalid_argument("ccc: needs at least two samples");
  const auto n = static_cast<double>(x.size());
  CccStats s;
  for (std::size_t i = 0; i < x.size(); ++i) {
    s.mean_x += x[i];
    s.mean_y += y[i];
  }
  s.mean_x /= n;
  s.mean_y /= n;
  for (std::size_t i = 0; i < x.size(); ++i) {
    const double dx = x[i] - s.mean_x;
    const double dy = y[i] - s.mean_y;
    s.var_x += dx * dx;
    s.var_y += dy * dy;
    s.covariance += dx * dy;
  }
  s.var_x /= n;
  s.var_y /= n;
  s.covariance /= n;
  if (s.var_x > 0 && s.var_y > 0) s.rho = s.covariance / std::sqrt(s.var_x * s.var_y);
  return s;
}

double ccc(std::span<const double> x, std::span<const double> y) {
  const auto s = ccc_stats(x, y);
  if (s.var_x == 0.0 || s.var_y == 0.0) return 0.0;
  const double shift = s.mean_x - s.mean_y;
  // 2 rho sx sy == 2 cov
  return 2.0 * s.covariance / (s.var_x + s.var_y + shift * shift);
}

Value ccc_loss(const Value& scores, const Matrix& labels, CccWeights weights) {
  if (scores.rows() != kNumDims || labels.rows() != kNumDims ||
      scores.cols() != labels.cols()) {
    throw std::invalid_argument("ccc_loss: expected matching 3 x B scores and labels");
  }
  const Eigen::Index b = scores.cols();
  if (b < 2) throw std::invalid_argument("ccc_loss: batch needs at least two samples");

  Eigen::Vector3d w;
  w[kActivation] = weights.activation;
  w[kValence] = weights.valence;
  w[kDominance] = 1.0 - weights.activation - weights.valence;

  const double n = static_cast<double>(b);
  Matrix d_ccc = Matrix::Zero(kNumDims, b);  // dCCC_k / dx
  double weighted = 0.0;
  for (int k = 0; k < kNumDims; ++k) {
    const Eigen::RowVectorXd x = scores.data().row(k);
    const Eigen::RowVectorXd y = labels.row(k);
    const double mx = x.mean(), my = y.mean();
    const Eigen::RowVectorXd dx = x.array() - mx;
    const Eigen::RowVectorXd dy = y.array() - my;
    const double vx = dx.squaredNorm() / n;
    const double vy = dy.squaredNorm() / n;
    const double cov = dx.dot(dy) / n;
    const double shift = mx - my;
    const double den = vx + vy + shift * shift;
    if (den <= 0.0) continue;
    const double value = 2.0 * cov / den;
    weighted += w[k] * value;
    d_ccc.row(k) = (2.0 / (n * den)) * dy.array() -
                   (value / den) * (2.0 / n) * (dx.array() + shift);
  }

  Matrix out(1, 1);
  out(0, 0) = 1.0 - weighted;
  return nn::make_node(std::move(out), {scores.node()}, "ccc_loss",
                       [d_ccc, w](nn::Node& node) {
                         nn::Node& p = *node.parents[0];
                         p.ensure_grad();
                         p.grad -= node.grad(0, 0) * (w.asDiagonal() * d_ccc);
                       });
}

Value cross_entropy(const Value& logits, std::span<const int> classes) {
  const Eigen::Index k = logits.rows();
  const Eigen::Index b = logits.cols();
  if (static_cast<Eigen::Index>(classes.size()) != b || b < 1) {
    throw std::invalid_argument("cross_entropy: one class index per column required");
  }
  Matrix probs(k, b);
  double total = 0.0;
  for (Eigen::Index j = 0; j < b; ++j) {
    const int c = classes[j];
    if (c < 0 || c >= k) {
      throw std::invalid_argument("cross_entropy: class index " + std::to_string(c) +
                                  " outside [0, " + std::to_string(k) + ")");
    }
    const auto col = logits.data().col(j);
    const double mx = col.maxCoeff();
    const Eigen::VectorXd e = (col.array() - mx).exp();
    const double z = e.sum();
    probs.col(j) = e / z;
    total += mx + std::log(z) - col(c);
  }
  Matrix out(1, 1);
  out(0, 0) = total / static_cast<double>(b);
  std::vector<int> cls(classes.begin(), classes.end());
  return nn::make_node(std::move(out), {logits.node()}, "cross_entropy",
                       [probs, cls](nn::Node& node) {
                         nn::Node& p = *node.parents[0];
                         Matrix g = probs;
                         for (std::size_t j = 0; j < cls.size(); ++j) {
                           g(cls[j], static_cast<Eigen::Index>(j)) -= 1.0;
                         }
                         p.ensure_grad();
                         p.grad += (node.grad(0, 0) / static_cast<double>(cls.size())) * g;
                       });
}

double gamma_confidence(const Eigen::Vector3d& labels, const Eigen::Vector3d& teacher,
                        double range) {
  if (!(range > 0.0)) throw std::invalid_argument("gamma_confidence: range must be > 0");
  const double mean_residual = (labels - teacher).cwiseAbs().sum() / 3.0;
  return std::clamp(1.0 - mean_residual / range, 0.0, 1.0);
}

Value distillation_loss(const Matrix& teacher, const Value& student,
                        std::span<const double> gamma) {
  if (teacher.rows() != student.rows() || teacher.cols() != student.cols()) {
    throw std::invalid_argument("distillation_loss: teacher and student embedding shapes differ");
  }
  const Eigen::Index b = student.cols();
  if (static_cast<Eigen::Index>(gamma.size()) != b || b < 1) {
    throw std::invalid_argument("distillation_loss: one gamma per sample required");
  }
  const double n = static_cast<double>(b);
  const Matrix& s = student.data();
  Matrix d_student(s.rows(), b);
  double total = 0.0;
  for (Eigen::Index i = 0; i < b; ++i) {
    const double nt = teacher.col(i).norm();
    const double ns = s.col(i).norm();
    const double dot = teacher.col(i).dot(s.col(i));
    const double den = std::max(nt * ns, kCosineEpsilon);
    total += gamma[i] * (1.0 - dot / den);
    Eigen::VectorXd d_cos = teacher.col(i) / den;
    if (nt * ns > kCosineEpsilon) d_cos -= (dot / (den * ns * ns)) * s.col(i);
    d_student.col(i) = -(gamma[i] / n) * d_cos;
  }
  Matrix out(1, 1);
  out(0, 0) = total / n;
  return nn::make_node(std::move(out), {student.node()}, "distillation_loss",
                       [d_student](nn::Node& node) {
                         nn::Node& p = *node.parents[0];
                         p.ensure_grad();
                         p.grad += node.grad(0, 0) * d_student;
                       });
}

ScheduleState ScheduleConfig::at(int epoch) const {
  if (epoch < 0) throw std::invalid_argument("schedule: epoch must be >= 0");
  if (epoch < switch_epoch) return {epoch, kappa_early, lambda_early};
  return {epoch, kappa_late, lambda_late};
}

ScheduleState schedule(int epoch) { return ScheduleConfig{}.at(epoch); }

Value total_loss(const Value& l_ccc, const Value& l_ce, const std::optional<Value>& l_dis,
                 const ScheduleState& s) {
  const Value task = nn::add(l_ccc, nn::scale(l_ce, kAuxiliaryWeight));
  if (!l_dis) return task;
  return nn::add(nn::scale(task, s.kappa), nn::scale(*l_dis, s.lambda));
}

}  // namespace emo
