#pragma once

#include "emo/nn/checkpoint.hpp"
#include "emo/nn/layers.hpp"
#include "emo/nn/value.hpp"

#include <cstdint>
#include <string>
#include <utility>
#include <vector>

namespace emo {

using nn::Matrix;
using nn::Value;
using nn::Vector;

/// Row order of the regression head and of label matrices.
enum Dimension : int { kActivation = 0, kValence = 1, kDominance = 2 };
inline constexpr int kNumDims = 3;
inline constexpr int kNumClasses = 7;

struct ModelConfig {
  int input_dim = 43;
  bool use_tconv = true;
  int hidden = 128;
  int embed_dim = 128;
  int recurrent_layers = 2;
  int n_dims = kNumDims;
  int n_classes = kNumClasses;
  /// Feature source the model was trained on (metadata only).
  std::string features;

  /// Throws std::invalid_argument for non-positive sizes or head sizes other
  /// than 3 scores / 7 classes.
  void validate() const;
  /// Width seen by the first recurrent layer (raw features plus the TC path).
  int recurrent_input_dim() const { return use_tconv ? 2 * input_dim : input_dim; }

  std::string to_json() const;
  static ModelConfig from_json(const std::string& text);
};

struct UtteranceOutput {
  Vector embedding;     // embed_dim
  Vector scores;        // activation, valence, dominance on the label scale
  Vector class_logits;  // n_classes
};

/// Graph outputs for a batch, one column per utterance.
struct BatchOutput {
  Value embedding;
  Value scores;
  Value logits;
};

struct ParamReport {
  std::size_t count = 0;
  std::size_t bytes_fp32 = 0;
  std::size_t head_count = 0;
  std::vector<std::pair<std::string, std::size_t>> tensors;
};

/// TCGRU / GRU emotion network: optional depthwise TC layer whose output is
/// concatenated with the raw frames, stacked GRUs, masked mean pooling, a
/// tanh embedding layer and two linear heads.
class EmotionModel {
 public:
  EmotionModel(const ModelConfig& cfg, std::uint64_t seed);

  EmotionModel(EmotionModel&&) noexcept = default;
  EmotionModel& operator=(EmotionModel&&) noexcept = default;
  EmotionModel(const EmotionModel&) = delete;
  EmotionModel& operator=(const EmotionModel&) = delete;

  /// Deep copy with independent parameter storage.
  EmotionModel clone() const;

  const ModelConfig& config() const { return cfg_; }

  /// `frames` is input_dim x (steps * batch), see nn::FrameLayout.
  BatchOutput forward(const Matrix& frames, const nn::FrameLayout& layout) const;

  /// `seq` holds one frame per row.
  UtteranceOutput forward_utterance(const Matrix& seq) const;

  std::vector<Value> parameters() const;
  std::vector<nn::NamedTensor> state() const;
  /// Copies values from `tensors`; names and shapes must match exactly.
  void load_state(const std::vector<nn::NamedTensor>& tensors);
  void zero_grad();

  ParamReport param_report() const;

  /// Writes the EMOW checkpoint at `path` and the config to `path + ".json"`.
  void save(const std::string& path) const;
  static EmotionModel load(const std::string& path);

  // Exposed for structural tests.
  const nn::TConvParams* tconv() const { return cfg_.use_tconv ? &tconv_ : nullptr; }
  const std::vector<nn::GruParams>& recurrent() const { return grus_; }

 private:
  std::vector<std::pair<std::string, Value>> named() const;

  ModelConfig cfg_;
  nn::TConvParams tconv_;
  std::vector<nn::GruParams> grus_;
  Value embed_w_, embed_b_;
  Value score_w_, score_b_;
  Value class_w_, class_b_;
};

inline EmotionModel build_model(const ModelConfig& cfg, std::uint64_t seed) {
  return EmotionModel(cfg, seed);
}

/// Closed-form parameter count for a configuration.
std::size_t count_parameters(const ModelConfig& cfg);

}  // namespace emo
