#pragma once

#include "emo/data.hpp"
#include "emo/model.hpp"

#include <optional>
#include <string>
#include <vector>

namespace emo {

/// Model outputs over a dataset, columns in dataset order.
struct Predictions {
  std::vector<std::string> ids;
  Matrix scores;      // 3 x N
  Matrix embeddings;  // embed_dim x N
  Matrix labels;      // 3 x N
};

/// Worker count for read-only inference, from EMO_THREADS (default 1).
int default_threads();

/// Batched inference in length order; results are placed back in dataset
/// order so they do not depend on batching or thread count.
Predictions predict(const EmotionModel& model, const Dataset& data, int batch_size = 32,
                    int threads = default_threads());

/// Per-dimension CCC of 3 x N predictions against labels over the whole set.
Eigen::Vector3d split_ccc(const Matrix& predictions, const Matrix& labels);

struct CccReport {
  Eigen::Vector3d ccc = Eigen::Vector3d::Zero();  // activation, valence, dominance
  std::size_t count = 0;

  double mean() const { return ccc.mean(); }
};

/// Split-level CCC. Rejects sets with fewer than two utterances.
CccReport evaluate(const EmotionModel& model, const Dataset& data);
CccReport evaluate_predictions(const Predictions& p);

struct ValenceBin {
  double low = 0, high = 0;
  std::size_t count = 0;
  double sum_squared_error = 0;
  std::optional<double> rmse;  // absent for empty bins
};

inline constexpr int kDefaultValenceBins = 6;

/// Equal-width bins over [1, 7] by true valence; the top bin is closed.
std::vector<ValenceBin> rmse_by_valence_bin(const Eigen::VectorXd& estimate,
                                            const Eigen::VectorXd& truth,
                                            int n_bins = kDefaultValenceBins);
std::vector<ValenceBin> rmse_by_valence_bin(const EmotionModel& model, const Dataset& data,
                                            int n_bins = kDefaultValenceBins);

/// CSV: id, e0..e{E-1}, act, val, dom; rows sorted by id.
void export_embeddings(const Predictions& p, const std::string& path);

std::string report_json(const CccReport& report, const std::vector<ValenceBin>& bins);
std::string report_table(const CccReport& report, const std::vector<ValenceBin>& bins);

}  // namespace emo
