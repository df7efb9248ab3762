#include "emo/model.hpp"

#include "emo/errors.hpp"

#include <json.hpp>

#include <fstream>
#include <random>
#include <sstream>
#include <stdexcept>

namespace emo {

using nlohmann::json;

void ModelConfig::validate() const {
  if (input_dim < 1 || hidden < 1 || embed_dim < 1) {
    throw std::invalid_argument("ModelConfig: input_dim, hidden and embed_dim must be positive");
  }
  if (recurrent_layers < 1) {
    throw std::invalid_argument("ModelConfig: at least one recurrent layer is required");
  }
  if (n_dims != kNumDims || n_classes != kNumClasses) {
    throw std::invalid_argument("ModelConfig: heads must produce 3 scores and 7 classes");
  }
}

std::string ModelConfig::to_json() const {
  json j = {{"input_dim", input_dim},     {"use_tconv", use_tconv},
            {"hidden", hidden},           {"embed_dim", embed_dim},
            {"recurrent_layers", recurrent_layers},
            {"n_dims", n_dims},           {"n_classes", n_classes}};
  if (!features.empty()) j["features"] = features;
  return j.dump(2);
}

ModelConfig ModelConfig::from_json(const std::string& text) {
  const json j = json::parse(text);
  ModelConfig cfg;
  cfg.input_dim = j.at("input_dim").get<int>();
  cfg.use_tconv = j.at("use_tconv").get<bool>();
  cfg.hidden = j.value("hidden", 128);
  cfg.embed_dim = j.value("embed_dim", 128);
  cfg.recurrent_layers = j.value("recurrent_layers", 2);
  cfg.n_dims = j.value("n_dims", kNumDims);
  cfg.n_classes = j.value("n_classes", kNumClasses);
  cfg.features = j.value("features", std::string());
  cfg.validate();
  return cfg;
}

EmotionModel::EmotionModel(const ModelConfig& cfg, std::uint64_t seed) : cfg_(cfg) {
  cfg_.validate();
  std::mt19937_64 rng(seed);
  if (cfg_.use_tconv) tconv_ = nn::make_tconv(cfg_.input_dim, rng);
  int width = cfg_.recurrent_input_dim();
  for (int l = 0; l < cfg_.recurrent_layers; ++l) {
    grus_.push_back(nn::make_gru(width, cfg_.hidden, rng));
    width = cfg_.hidden;
  }
  embed_w_ = nn::parameter(nn::scaled_uniform(cfg_.embed_dim, cfg_.hidden, rng));
  embed_b_ = nn::parameter(Matrix::Zero(cfg_.embed_dim, 1));
  score_w_ = nn::parameter(nn::scaled_uniform(cfg_.n_dims, cfg_.embed_dim, rng));
  score_b_ = nn::parameter(Matrix::Zero(cfg_.n_dims, 1));
  class_w_ = nn::parameter(nn::scaled_uniform(cfg_.n_classes, cfg_.embed_dim, rng));
  class_b_ = nn::parameter(Matrix::Zero(cfg_.n_classes, 1));
}

EmotionModel EmotionModel::clone() const {
  EmotionModel copy(cfg_, 0);
  copy.load_state(state());
  return copy;
}

std::vector<std::pair<std::string, Value>> EmotionModel::named() const {
  std::vector<std::pair<std::string, Value>> out;
  if (cfg_.use_tconv) {
    out.emplace_back("tconv.kernel", tconv_.kernel);
    out.emplace_back("tconv.bias", tconv_.bias);
  }
  for (std::size_t l = 0; l < grus_.size(); ++l) {
    const std::string prefix = "gru" + std::to_string(l + 1) + ".";
    out.emplace_back(prefix + "w_input", grus_[l].w_input);
    out.emplace_back(prefix + "w_hidden", grus_[l].w_hidden);
    out.emplace_back(prefix + "bias", grus_[l].bias);
  }
  out.emplace_back("embed.weight", embed_w_);
  out.emplace_back("embed.bias", embed_b_);
  out.emplace_back("scores.weight", score_w_);
  out.emplace_back("scores.bias", score_b_);
  out.emplace_back("classes.weight", class_w_);
  out.emplace_back("classes.bias", class_b_);
  return out;
}

std::vector<Value> EmotionModel::parameters() const {
  std::vector<Value> out;
  for (auto& [name, v] : named()) out.push_back(v);
  return out;
}

std::vector<nn::NamedTensor> EmotionModel::state() const {
  std::vector<nn::NamedTensor> out;
  for (auto& [name, v] : named()) out.push_back({name, v.data()});
  return out;
}

void EmotionModel::load_state(const std::vector<nn::NamedTensor>& tensors) {
  auto params = named();
  if (tensors.size() != params.size()) {
    throw DataError(DataError::Kind::kShapeMismatch,
                    "checkpoint has " + std::to_string(tensors.size()) +
                        " tensors, model expects " + std::to_string(params.size()));
  }
  for (std::size_t i = 0; i < params.size(); ++i) {
    auto& [name, v] = params[i];
    const auto& t = tensors[i];
    if (t.name != name || t.value.rows() != v.rows() || t.value.cols() != v.cols()) {
      throw DataError(DataError::Kind::kShapeMismatch,
                      "checkpoint tensor " + t.name + " does not match model tensor " + name);
    }
    v.mutable_data() = t.value;
  }
}

void EmotionModel::zero_grad() {
  for (auto& p : parameters()) p.zero_grad();
}

BatchOutput EmotionModel::forward(const Matrix& frames,
                                  const nn::FrameLayout& layout) const {
  if (frames.rows() != cfg_.input_dim) {
    throw std::invalid_argument("forward: feature width " + std::to_string(frames.rows()) +
                                " != model input_dim " + std::to_string(cfg_.input_dim));
  }
  Value x = nn::constant(frames);
  if (cfg_.use_tconv) x = nn::concat_rows({x, nn::tconv(tconv_, x, layout)});
  for (const auto& gru : grus_) x = nn::gru_sequence(gru, x, layout);
  const Value pooled = nn::masked_mean_pool(x, layout);
  BatchOutput out;
  out.embedding = nn::tanh(nn::linear(embed_w_, embed_b_, pooled));
  out.scores = nn::linear(score_w_, score_b_, out.embedding);
  out.logits = nn::linear(class_w_, class_b_, out.embedding);
  return out;
}

UtteranceOutput EmotionModel::forward_utterance(const Matrix& seq) const {
  if (seq.rows() < 1) throw std::invalid_argument("forward_utterance: empty sequence");
  const auto layout = nn::FrameLayout::dense(seq.rows(), 1);
  const auto out = forward(seq.transpose(), layout);
  return {out.embedding.data().col(0), out.scores.data().col(0), out.logits.data().col(0)};
}

std::size_t count_parameters(const ModelConfig& cfg) {
  cfg.validate();
  const std::size_t h = cfg.hidden;
  std::size_t n = 0;
  if (cfg.use_tconv) n += 4 * static_cast<std::size_t>(cfg.input_dim);
  std::size_t width = cfg.recurrent_input_dim();
  for (int l = 0; l < cfg.recurrent_layers; ++l) {
    n += 3 * h * (width + h + 1);
    width = h;
  }
  n += cfg.embed_dim * (h + 1);
  n += static_cast<std::size_t>(cfg.n_dims + cfg.n_classes) * (cfg.embed_dim + 1);
  return n;
}

ParamReport EmotionModel::param_report() const {
  ParamReport r;
  for (auto& [name, v] : named()) {
    const auto n = static_cast<std::size_t>(v.size());
    r.tensors.emplace_back(name, n);
    r.count += n;
    if (name.starts_with("scores.") || name.starts_with("classes.")) r.head_count += n;
  }
  r.bytes_fp32 = 4 * r.count;
  return r;
}

void EmotionModel::save(const std::string& path) const {
  nn::write_checkpoint(path, state());
  std::ofstream sidecar(path + ".json");
  if (!sidecar) throw DataError(DataError::Kind::kIo, "cannot write " + path + ".json");
  sidecar << cfg_.to_json() << "\n";
}

EmotionModel EmotionModel::load(const std::string& path) {
  std::ifstream sidecar(path + ".json");
  if (!sidecar) {
    throw DataError(DataError::Kind::kMissing, "missing model config sidecar " + path + ".json");
  }
  std::stringstream ss;
  ss << sidecar.rdbuf();
  ModelConfig cfg;
  try {
    cfg = ModelConfig::from_json(ss.str());
  } catch (const std::exception& e) {
    throw DataError(DataError::Kind::kInvalidRecord, path + ".json: " + e.what());
  }
  EmotionModel model(cfg, 0);
  model.load_state(nn::read_checkpoint(path));
  return model;
}

}  // namespace emo
