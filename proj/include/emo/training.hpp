#pragma once

#include "emo/data.hpp"
#include "emo/losses.hpp"
#include "emo/model.hpp"

#include <cstdint>
#include <map>
#include <span>
#include <string>
#include <vector>

namespace emo {

struct AdamConfig {
  double lr = 0.0005;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
};

struct OptState {
  AdamConfig config;
  std::vector<Matrix> m;
  std::vector<Matrix> v;
  long step = 0;
};

OptState make_opt_state(std::span<const Value> params, AdamConfig config = {});

/// Bias-corrected Adam update from the parameters' accumulated gradients.
/// Throws NumericError, leaving parameters and state untouched, when any
/// gradient is non-finite.
void adam_step(std::span<Value> params, OptState& state);

/// Rescales gradients so their global L2 norm is at most `max_norm`.
/// Returns the norm before clipping.
double clip_grad_norm(std::span<Value> params, double max_norm);

struct TeacherEntry {
  Vector embedding;
  Eigen::Vector3d scores;
  double gamma = 1.0;
};

struct TeacherCache {
  int embed_dim = 0;
  std::map<std::string, TeacherEntry> entries;

  const TeacherEntry& at(const std::string& id) const;
};

/// One teacher forward per utterance; gamma from the teacher's residuals.
TeacherCache prepare_teacher_cache(const EmotionModel& teacher, const Dataset& teacher_data);

/// "EMOT" v1: count u32, embed dim u32, then per record the id string,
/// embedding, three scores and gamma as float64, sorted by id.
void write_teacher_cache(const std::string& path, const TeacherCache& cache);
TeacherCache read_teacher_cache(const std::string& path);

/// Per-epoch training log record (one JSON line).
struct LossBreakdown {
  int epoch = 0;
  double kappa = 1.0;
  double lambda = 0.0;
  double l_ccc = 0.0;
  double l_ce = 0.0;
  double l_dis = 0.0;
  double mean_gamma = 0.0;
  double total = 0.0;
  Eigen::Vector3d train_ccc = Eigen::Vector3d::Zero();
  Eigen::Vector3d val_ccc = Eigen::Vector3d::Zero();
  int clipped_steps = 0;
  bool distilled = false;

  std::string to_json() const;
};

inline constexpr double kClipNorm = 5.0;

/// Forward, total loss, backward and an Adam step for every batch. With a
/// teacher cache every batch id must be present in it.
LossBreakdown train_epoch(EmotionModel& model, std::span<const Batch> batches, OptState& opt,
                          const ScheduleState& schedule, const TeacherCache* teacher = nullptr,
                          double clip_norm = kClipNorm);

struct TrainConfig {
  int batch_size = kDefaultBatchSize;
  int max_epochs = 100;
  int patience = 10;
  /// Early stopping is not considered before this many epochs.
  int min_epochs = 0;
  double clip_norm = kClipNorm;
  std::uint64_t seed = 1;
  AdamConfig adam;
  ScheduleConfig schedule;
  /// JSON-lines log, one LossBreakdown per epoch; empty disables it.
  std::string log_path;
};

struct FitReport {
  std::vector<LossBreakdown> epochs;
  Eigen::Vector3d best_val_ccc = Eigen::Vector3d::Zero();
  double best_val_mean = -2.0;
  int best_epoch = -1;
  bool stopped_early = false;
};

/// Trains until `patience` epochs pass without a better mean validation CCC
/// or `max_epochs` is reached, then restores the best parameters. A
/// non-finite loss restores the best parameters and throws NumericError.
FitReport fit(EmotionModel& model, const Dataset& train, const Dataset& val,
              const TrainConfig& config, const TeacherCache* teacher = nullptr);

}  // namespace emo
