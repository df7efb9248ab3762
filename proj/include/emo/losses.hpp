#pragma once

#include "emo/model.hpp"

#include <optional>
#include <span>

namespace emo {

/// Population moments of an (estimate, truth) pair.
struct CccStats {
  double mean_x = 0, mean_y = 0;
  double var_x = 0, var_y = 0;
  double covariance = 0;
  double rho = 0;  // 0 when either variance is zero
};

CccStats ccc_stats(std::span<const double> x, std::span<const double> y);

/// Concordance correlation coefficient of estimates `x` against truth `y`.
/// Zero when either vector is constant. Requires equal lengths >= 2.
double ccc(std::span<const double> x, std::span<const double> y);

/// Weights of the valence and activation CCCs; dominance gets 1 - a - b.
struct CccWeights {
  double valence = 1.0 / 3.0;
  double activation = 1.0 / 3.0;
};

/// 1 - weighted per-dimension CCC over the batch. `scores` and `labels` are
/// 3 x B with rows (activation, valence, dominance).
Value ccc_loss(const Value& scores, const Matrix& labels, CccWeights weights = {});

/// Mean softmax cross-entropy of K x B logits.
Value cross_entropy(const Value& logits, std::span<const int> classes);

/// Dynamic range of the 7-point label scale.
inline constexpr double kLabelRange = 6.0;

/// Teacher confidence: 1 - mean absolute residual / range, clamped to [0, 1].
double gamma_confidence(const Eigen::Vector3d& labels, const Eigen::Vector3d& teacher,
                        double range = kLabelRange);

inline constexpr double kCosineEpsilon = 1e-8;

/// Mean over the batch of gamma_i * (1 - cos(teacher_i, student_i)). The
/// teacher embeddings are constants.
Value distillation_loss(const Matrix& teacher, const Value& student,
                        std::span<const double> gamma);

struct ScheduleState {
  int epoch = 0;
  double kappa = 1.0;
  double lambda = 0.0;
};

/// Piecewise-constant loss weights: (kappa_early, lambda_early) before
/// `switch_epoch`, (kappa_late, lambda_late) from it on. Epochs are
/// zero-based.
struct ScheduleConfig {
  int switch_epoch = 40;
  double kappa_early = 0.001;
  double lambda_early = 1.0;
  double kappa_late = 1.0;
  double lambda_late = 0.01;

  ScheduleState at(int epoch) const;
};

/// Default distillation schedule.
ScheduleState schedule(int epoch);

inline constexpr double kAuxiliaryWeight = 0.2;

/// kappa * (L_ccc + 0.2 L_CE) + lambda * L_dis. Without a distillation term
/// the schedule is ignored and the result is L_ccc + 0.2 L_CE.
Value total_loss(const Value& l_ccc, const Value& l_ce, const std::optional<Value>& l_dis,
                 const ScheduleState& s);

}  // namespace emo
