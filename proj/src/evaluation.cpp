#include "emo/evaluation.hpp"

#include "emo/errors.hpp"
#include "emo/losses.hpp"

#include <json.hpp>

#include <algorithm>
#include <atomic>
#include <cstdlib>
#include <exception>
#include <mutex>
#include <thread>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <numeric>
#include <sstream>

namespace emo {

int default_threads() {
  if (const char* env = std::getenv("EMO_THREADS")) {
    const int n = std::atoi(env);
    if (n > 0) return std::min(n, 64);
  }
  return 1;
}

Predictions predict(const EmotionModel& model, const Dataset& data, int batch_size,
                    int threads) {
  if (batch_size < 1) throw std::invalid_argument("predict: batch size must be positive");
  const auto n = static_cast<Eigen::Index>(data.size());
  Predictions p;
  p.scores.resize(kNumDims, n);
  p.embeddings.resize(model.config().embed_dim, n);
  p.labels.resize(kNumDims, n);
  for (const auto& ex : data) p.ids.push_back(ex.id);

  std::vector<std::size_t> order(data.size());
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
    return data[a].frames.rows() < data[b].frames.rows();
  });
  std::vector<std::size_t> starts;
  for (std::size_t i = 0; i < order.size(); i += static_cast<std::size_t>(batch_size)) {
    starts.push_back(i);
  }

  // Each batch writes a disjoint set of columns.
  auto run_batch = [&](std::size_t start) {
    const auto end = std::min(order.size(), start + static_cast<std::size_t>(batch_size));
    const std::span<const std::size_t> members(order.data() + start, end - start);
    const Batch batch = collate(data, members);
    const auto out = model.forward(batch.frames, batch.layout);
    for (std::size_t j = 0; j < members.size(); ++j) {
      const auto col = static_cast<Eigen::Index>(members[j]);
      p.scores.col(col) = out.scores.data().col(static_cast<Eigen::Index>(j));
      p.embeddings.col(col) = out.embedding.data().col(static_cast<Eigen::Index>(j));
      p.labels.col(col) = data[members[j]].labels;
    }
  };

  const auto workers = static_cast<std::size_t>(std::max(1, threads));
  if (workers == 1 || starts.size() < 2) {
    for (auto s : starts) run_batch(s);
    return p;
  }
  std::atomic<std::size_t> next{0};
  std::exception_ptr failure;
  std::mutex failure_mutex;
  std::vector<std::thread> pool;
  for (std::size_t w = 0; w < std::min(workers, starts.size()); ++w) {
    pool.emplace_back([&] {
      for (std::size_t i = next++; i < starts.size(); i = next++) {
        try {
          run_batch(starts[i]);
        } catch (...) {
          std::lock_guard lock(failure_mutex);
          if (!failure) failure = std::current_exception();
        }
      }
    });
  }
  for (auto& t : pool) t.join();
  if (failure) std::rethrow_exception(failure);
  return p;
}

Eigen::Vector3d split_ccc(const Matrix& predictions, const Matrix& labels) {
  if (predictions.rows() != kNumDims || labels.rows() != kNumDims ||
      predictions.cols() != labels.cols()) {
    throw std::invalid_argument("split_ccc: expected matching 3 x N matrices");
  }
  Eigen::Vector3d out;
  for (int k = 0; k < kNumDims; ++k) {
    const Eigen::RowVectorXd x = predictions.row(k);
    const Eigen::RowVectorXd y = labels.row(k);
    out[k] = ccc({x.data(), static_cast<std::size_t>(x.size())},
                 {y.data(), static_cast<std::size_t>(y.size())});
  }
  return out;
}

CccReport evaluate_predictions(const Predictions& p) {
  if (p.scores.cols() < 2) throw std::invalid_argument("evaluate: need at least two utterances");
  return {split_ccc(p.scores, p.labels), static_cast<std::size_t>(p.scores.cols())};
}

CccReport evaluate(const EmotionModel& model, const Dataset& data) {
  if (data.size() < 2) throw std::invalid_argument("evaluate: need at least two utterances");
  return evaluate_predictions(predict(model, data));
}

std::vector<ValenceBin> rmse_by_valence_bin(const Eigen::VectorXd& estimate,
                                            const Eigen::VectorXd& truth, int n_bins) {
  if (n_bins < 2) throw std::invalid_argument("rmse_by_valence_bin: n_bins must be >= 2");
  if (estimate.size() != truth.size()) {
    throw std::invalid_argument("rmse_by_valence_bin: length mismatch");
  }
  const double lo = 1.0, hi = 7.0, width = (hi - lo) / n_bins;
  std::vector<ValenceBin> bins(static_cast<std::size_t>(n_bins));
  for (int b = 0; b < n_bins; ++b) {
    bins[b].low = lo + b * width;
    bins[b].high = b + 1 == n_bins ? hi : lo + (b + 1) * width;
  }
  for (Eigen::Index i = 0; i < truth.size(); ++i) {
    int b = static_cast<int>(std::floor((truth[i] - lo) / width));
    b = std::clamp(b, 0, n_bins - 1);
    const double e = estimate[i] - truth[i];
    bins[b].count += 1;
    bins[b].sum_squared_error += e * e;
  }
  for (auto& bin : bins) {
    if (bin.count > 0) bin.rmse = std::sqrt(bin.sum_squared_error / static_cast<double>(bin.count));
  }
  return bins;
}

std::vector<ValenceBin> rmse_by_valence_bin(const EmotionModel& model, const Dataset& data,
                                            int n_bins) {
  const auto p = predict(model, data);
  return rmse_by_valence_bin(p.scores.row(kValence).transpose(), p.labels.row(kValence).transpose(),
                             n_bins);
}

namespace {
std::string fmt(double v) {
  char buf[40];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}
}  // namespace

void export_embeddings(const Predictions& p, const std::string& path) {
  std::vector<Eigen::Index> order(p.ids.size());
  std::iota(order.begin(), order.end(), 0);
  std::sort(order.begin(), order.end(), [&](auto a, auto b) { return p.ids[a] < p.ids[b]; });
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw DataError(DataError::Kind::kIo, "cannot write embeddings to " + path);
  out << "id";
  for (Eigen::Index e = 0; e < p.embeddings.rows(); ++e) out << ",e" << e;
  out << ",act,val,dom\n";
  for (auto i : order) {
    out << p.ids[i];
    for (Eigen::Index e = 0; e < p.embeddings.rows(); ++e) out << ',' << fmt(p.embeddings(e, i));
    for (int k = 0; k < kNumDims; ++k) out << ',' << fmt(p.labels(k, i));
    out << '\n';
  }
  if (!out) throw DataError(DataError::Kind::kIo, "write failed: " + path);
}

std::string report_json(const CccReport& report, const std::vector<ValenceBin>& bins) {
  nlohmann::ordered_json j;
  j["count"] = report.count;
  j["ccc"] = {{"act", report.ccc[kActivation]},
              {"val", report.ccc[kValence]},
              {"dom", report.ccc[kDominance]}};
  j["ccc_mean"] = report.mean();
  j["valence_rmse_bins"] = nlohmann::ordered_json::array();
  for (const auto& b : bins) {
    nlohmann::ordered_json jb = {{"low", b.low}, {"high", b.high}, {"count", b.count}};
    if (b.rmse) jb["rmse"] = *b.rmse;
    j["valence_rmse_bins"].push_back(jb);
  }
  return j.dump(2);
}

std::string report_table(const CccReport& report, const std::vector<ValenceBin>& bins) {
  std::ostringstream os;
  char line[128];
  std::snprintf(line, sizeof line, "%-8s %8s %8s %8s\n", "", "act", "val", "dom");
  os << line;
  std::snprintf(line, sizeof line, "%-8s %8.4f %8.4f %8.4f\n", "CCC", report.ccc[0],
                report.ccc[1], report.ccc[2]);
  os << line << "n = " << report.count << "\n\nvalence interval    count     RMSE\n";
  for (const auto& b : bins) {
    if (b.rmse) {
      std::snprintf(line, sizeof line, "[%.2f, %.2f%c  %8zu %8.4f\n", b.low, b.high,
                    b.high >= 7.0 ? ']' : ')', b.count, *b.rmse);
    } else {
      std::snprintf(line, sizeof line, "[%.2f, %.2f%c  %8zu %8s\n", b.low, b.high,
                    b.high >= 7.0 ? ']' : ')', b.count, "-");
    }
    os << line;
  }
  return os.str();
}

}  // namespace emo
