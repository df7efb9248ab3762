#include "emo/training.hpp"

#include "binary_io.hpp"
#include "emo/errors.hpp"
#include "emo/evaluation.hpp"

#include <json.hpp>

#include <cmath>
#include <fstream>

#if defined(__GLIBC__)
#include <malloc.h>
#endif

namespace emo {

OptState make_opt_state(std::span<const Value> params, AdamConfig config) {
  OptState s;
  s.config = config;
  for (const auto& p : params) {
    s.m.push_back(Matrix::Zero(p.rows(), p.cols()));
    s.v.push_back(Matrix::Zero(p.rows(), p.cols()));
  }
  return s;
}

void adam_step(std::span<Value> params, OptState& state) {
  if (params.size() != state.m.size()) {
    throw std::invalid_argument("adam_step: parameter count does not match optimizer state");
  }
  for (std::size_t i = 0; i < params.size(); ++i) {
    const Matrix& g = params[i].grad();
    if (g.rows() != state.m[i].rows() || g.cols() != state.m[i].cols()) {
      throw std::invalid_argument("adam_step: gradient shape mismatch for parameter " +
                                  std::to_string(i));
    }
    if (!g.allFinite()) {
      throw NumericError("adam_step: non-finite gradient in parameter " + std::to_string(i) +
                         " at step " + std::to_string(state.step + 1));
    }
  }
  const auto& c = state.config;
  ++state.step;
  const double bc1 = 1.0 - std::pow(c.beta1, static_cast<double>(state.step));
  const double bc2 = 1.0 - std::pow(c.beta2, static_cast<double>(state.step));
  for (std::size_t i = 0; i < params.size(); ++i) {
    const Matrix& g = params[i].grad();
    state.m[i] = c.beta1 * state.m[i] + (1.0 - c.beta1) * g;
    state.v[i] = c.beta2 * state.v[i] + (1.0 - c.beta2) * g.cwiseAbs2();
    params[i].mutable_data().array() -=
        c.lr * (state.m[i].array() / bc1) / ((state.v[i].array() / bc2).sqrt() + c.eps);
  }
}

double clip_grad_norm(std::span<Value> params, double max_norm) {
  double sq = 0.0;
  for (const auto& p : params) sq += p.grad().squaredNorm();
  const double norm = std::sqrt(sq);
  if (norm > max_norm && std::isfinite(norm)) {
    const double s = max_norm / norm;
    for (auto& p : params) p.mutable_grad() *= s;
  }
  return norm;
}

const TeacherEntry& TeacherCache::at(const std::string& id) const {
  auto it = entries.find(id);
  if (it == entries.end()) {
    throw DataError(DataError::Kind::kMissing, "teacher cache has no entry for utterance " + id);
  }
  return it->second;
}

TeacherCache prepare_teacher_cache(const EmotionModel& teacher, const Dataset& teacher_data) {
  TeacherCache cache;
  cache.embed_dim = teacher.config().embed_dim;
  const Predictions p = predict(teacher, teacher_data);
  for (std::size_t i = 0; i < p.ids.size(); ++i) {
    const auto col = static_cast<Eigen::Index>(i);
    TeacherEntry e;
    e.embedding = p.embeddings.col(col);
    e.scores = p.scores.col(col);
    if (!e.embedding.allFinite() || !e.scores.allFinite()) {
      throw NumericError("teacher produced non-finite outputs for " + p.ids[i]);
    }
    e.gamma = gamma_confidence(p.labels.col(col), e.scores);
    cache.entries.emplace(p.ids[i], std::move(e));
  }
  return cache;
}

namespace {
constexpr std::uint32_t kCacheVersion = 1;
}

void write_teacher_cache(const std::string& path, const TeacherCache& cache) {
  io::Writer w(path);
  w.bytes("EMOT", 4);
  w.u32(kCacheVersion);
  w.u32(static_cast<std::uint32_t>(cache.entries.size()));
  w.u32(static_cast<std::uint32_t>(cache.embed_dim));
  for (const auto& [id, e] : cache.entries) {
    w.str(id);
    for (Eigen::Index i = 0; i < e.embedding.size(); ++i) w.f64(e.embedding[i]);
    for (int k = 0; k < kNumDims; ++k) w.f64(e.scores[k]);
    w.f64(e.gamma);
  }
  w.close();
}

TeacherCache read_teacher_cache(const std::string& path) {
  io::Reader r(path);
  r.expect_magic("EMOT");
  const auto version = r.u32("version");
  if (version != kCacheVersion) {
    throw DataError(DataError::Kind::kBadVersion,
                    path + ": unsupported teacher cache version " + std::to_string(version));
  }
  const auto count = r.u32("record count");
  TeacherCache cache;
  cache.embed_dim = static_cast<int>(r.u32("embedding dim"));
  for (std::uint32_t i = 0; i < count; ++i) {
    const std::string id = r.str("utterance id");
    TeacherEntry e;
    e.embedding.resize(cache.embed_dim);
    for (int d = 0; d < cache.embed_dim; ++d) e.embedding[d] = r.f64("embedding");
    for (int k = 0; k < kNumDims; ++k) e.scores[k] = r.f64("teacher scores");
    e.gamma = r.f64("gamma");
    cache.entries.emplace(id, std::move(e));
  }
  if (r.remaining() != 0) {
    throw DataError(DataError::Kind::kShapeMismatch, path + ": trailing bytes after records");
  }
  return cache;
}

std::string LossBreakdown::to_json() const {
  nlohmann::ordered_json j;
  j["epoch"] = epoch;
  j["kappa"] = kappa;
  j["lambda"] = lambda;
  j["L_ccc"] = l_ccc;
  j["L_CE"] = l_ce;
  j["L_dis"] = l_dis;
  j["mean_gamma"] = mean_gamma;
  j["total"] = total;
  j["train_ccc"] = {train_ccc[0], train_ccc[1], train_ccc[2]};
  j["val_ccc"] = {val_ccc[0], val_ccc[1], val_ccc[2]};
  j["clipped_steps"] = clipped_steps;
  j["distilled"] = distilled;
  return j.dump();
}

LossBreakdown train_epoch(EmotionModel& model, std::span<const Batch> batches, OptState& opt,
                          const ScheduleState& schedule, const TeacherCache* teacher,
                          double clip_norm) {
  LossBreakdown bd;
  bd.epoch = schedule.epoch;
  bd.distilled = teacher != nullptr;
  bd.kappa = teacher ? schedule.kappa : 1.0;
  bd.lambda = teacher ? schedule.lambda : 0.0;
  if (batches.empty()) return bd;

  auto params = model.parameters();
  Eigen::Index total_cols = 0;
  for (const auto& b : batches) total_cols += b.size();
  Matrix seen_scores(kNumDims, total_cols), seen_labels(kNumDims, total_cols);
  Eigen::Index filled = 0;
  double gamma_sum = 0.0;

  for (const auto& batch : batches) {
    model.zero_grad();
    const auto out = model.forward(batch.frames, batch.layout);
    const Value l_ccc = ccc_loss(out.scores, batch.labels);
    const Value l_ce = cross_entropy(out.logits, batch.classes);
    std::optional<Value> l_dis;
    if (teacher) {
      Matrix targets(teacher->embed_dim, batch.size());
      std::vector<double> gamma(static_cast<std::size_t>(batch.size()));
      for (Eigen::Index j = 0; j < batch.size(); ++j) {
        const auto& e = teacher->at(batch.ids[j]);
        if (e.embedding.size() != targets.rows()) {
          throw DataError(DataError::Kind::kShapeMismatch,
                          "teacher embedding width differs from student for " + batch.ids[j]);
        }
        targets.col(j) = e.embedding;
        gamma[j] = e.gamma;
        gamma_sum += e.gamma;
      }
      l_dis = distillation_loss(targets, out.embedding, gamma);
    }
    const Value loss = total_loss(l_ccc, l_ce, l_dis, schedule);
    if (!std::isfinite(loss.item())) {
      throw NumericError("non-finite loss at epoch " + std::to_string(schedule.epoch));
    }
    backward(loss);
    if (clip_norm > 0.0 && clip_grad_norm(params, clip_norm) > clip_norm) ++bd.clipped_steps;
    adam_step(params, opt);

    bd.l_ccc += l_ccc.item();
    bd.l_ce += l_ce.item();
    if (l_dis) bd.l_dis += l_dis->item();
    bd.total += loss.item();
    seen_scores.middleCols(filled, batch.size()) = out.scores.data();
    seen_labels.middleCols(filled, batch.size()) = batch.labels;
    filled += batch.size();
  }
  const double nb = static_cast<double>(batches.size());
  bd.l_ccc /= nb;
  bd.l_ce /= nb;
  bd.l_dis /= nb;
  bd.total /= nb;
  if (teacher) bd.mean_gamma = gamma_sum / static_cast<double>(total_cols);
  if (total_cols >= 2) bd.train_ccc = split_ccc(seen_scores, seen_labels);
  return bd;
}

namespace {

// Per-batch graphs allocate and free the same large blocks every step; keep
// them in the heap instead of returning them to the OS each time.
void keep_large_blocks() {
#if defined(__GLIBC__)
  static const bool once = [] {
    mallopt(M_MMAP_THRESHOLD, 256 << 20);
    mallopt(M_TRIM_THRESHOLD, 512 << 20);
    return true;
  }();
  (void)once;
#endif
}

}  // namespace

FitReport fit(EmotionModel& model, const Dataset& train, const Dataset& val,
              const TrainConfig& config, const TeacherCache* teacher) {
  keep_large_blocks();
  if (train.size() < 2) throw std::invalid_argument("fit: training split needs >= 2 utterances");
  if (val.size() < 2) throw std::invalid_argument("fit: validation split needs >= 2 utterances");

  std::ofstream log;
  if (!config.log_path.empty()) {
    log.open(config.log_path, std::ios::trunc);
    if (!log) throw DataError(DataError::Kind::kIo, "cannot write training log " + config.log_path);
  }

  auto params = model.parameters();
  OptState opt = make_opt_state(params, config.adam);
  FitReport report;
  auto best_state = model.state();
  int since_best = 0;

  for (int epoch = 0; epoch < config.max_epochs; ++epoch) {
    const std::uint64_t batch_seed = config.seed * 0x9e3779b97f4a7c15ULL + static_cast<std::uint64_t>(epoch);
    const auto batches = make_batches(train, config.batch_size, batch_seed);
    const ScheduleState state =
        teacher ? config.schedule.at(epoch) : ScheduleState{epoch, 1.0, 0.0};

    LossBreakdown bd;
    try {
      bd = train_epoch(model, batches, opt, state, teacher, config.clip_norm);
      bd.val_ccc = evaluate(model, val).ccc;
      if (!bd.val_ccc.allFinite()) throw NumericError("non-finite validation CCC");
    } catch (const NumericError& e) {
      model.load_state(best_state);
      throw NumericError(std::string(e.what()) + "; last good epoch " +
                         std::to_string(report.best_epoch));
    }
    report.epochs.push_back(bd);
    if (log) log << bd.to_json() << "\n" << std::flush;

    const double mean = bd.val_ccc.mean();
    if (mean > report.best_val_mean) {
      report.best_val_mean = mean;
      report.best_val_ccc = bd.val_ccc;
      report.best_epoch = epoch;
      best_state = model.state();
      since_best = 0;
    } else {
      ++since_best;
    }
    if (epoch + 1 >= config.min_epochs && since_best > config.patience) {
      report.stopped_early = epoch + 1 < config.max_epochs;
      break;
    }
  }
  model.load_state(best_state);
  return report;
}

}  // namespace emo
