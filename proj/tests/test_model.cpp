#include "emo/model.hpp"
#include "emo/errors.hpp"
#include "emo/nn/gradcheck.hpp"
#include "test_util.hpp"

#include <doctest.h>

#include <cmath>

using namespace emo;
using emo::testing::random_matrix;
using emo::testing::TempDir;

namespace {

ModelConfig small_config(bool use_tconv) {
  ModelConfig cfg;
  cfg.input_dim = 4;
  cfg.use_tconv = use_tconv;
  cfg.hidden = 5;
  cfg.embed_dim = 6;
  return cfg;
}

// Scalar reimplementation of the full forward pass for one utterance.
UtteranceOutput oracle_forward(const EmotionModel& model, const Matrix& seq) {
  auto state = model.state();
  auto get = [&](const std::string& name) -> const Matrix& {
    for (const auto& t : state)
      if (t.name == name) return t.value;
    throw std::runtime_error("missing " + name);
  };
  const ModelConfig& cfg = model.config();
  const int steps = static_cast<int>(seq.rows());
  Matrix x = seq;
  if (cfg.use_tconv) {
    const Matrix& k = get("tconv.kernel");
    const Matrix& b = get("tconv.bias");
    Matrix conv(steps, cfg.input_dim);
    for (int t = 0; t < steps; ++t)
      for (int c = 0; c < cfg.input_dim; ++c) {
        double acc = b(c, 0);
        for (int j = -1; j <= 1; ++j)
          if (t + j >= 0 && t + j < steps) acc += k(c, j + 1) * seq(t + j, c);
        conv(t, c) = acc;
      }
    x = Matrix(steps, 2 * cfg.input_dim);
    x << seq, conv;
  }
  for (int layer = 0; layer < cfg.recurrent_layers; ++layer) {
    const std::string p = "gru" + std::to_string(layer + 1) + ".";
    const Matrix& wi = get(p + "w_input");
    const Matrix& wh = get(p + "w_hidden");
    const Matrix& bias = get(p + "bias");
    const int hd = cfg.hidden;
    Matrix out(steps, hd);
    std::vector<double> h(hd, 0.0);
    for (int t = 0; t < steps; ++t) {
      std::vector<double> z(hd), r(hd), n(hd);
      for (int i = 0; i < hd; ++i) {
        double az = bias(i, 0), ar = bias(hd + i, 0);
        for (int j = 0; j < x.cols(); ++j) {
          az += wi(i, j) * x(t, j);
          ar += wi(hd + i, j) * x(t, j);
        }
        for (int j = 0; j < hd; ++j) {
          az += wh(i, j) * h[j];
          ar += wh(hd + i, j) * h[j];
        }
        z[i] = 1 / (1 + std::exp(-az));
        r[i] = 1 / (1 + std::exp(-ar));
      }
      for (int i = 0; i < hd; ++i) {
        double a = bias(2 * hd + i, 0);
        for (int j = 0; j < x.cols(); ++j) a += wi(2 * hd + i, j) * x(t, j);
        for (int j = 0; j < hd; ++j) a += wh(2 * hd + i, j) * r[j] * h[j];
        n[i] = (1 - z[i]) * h[i] + z[i] * std::tanh(a);
      }
      h = n;
      for (int i = 0; i < hd; ++i) out(t, i) = h[i];
    }
    x = out;
  }
  Vector pooled = x.colwise().mean().transpose();
  UtteranceOutput o;
  o.embedding = (get("embed.weight") * pooled + get("embed.bias")).array().tanh().matrix();
  o.scores = get("scores.weight") * o.embedding + get("scores.bias");
  o.class_logits = get("classes.weight") * o.embedding + get("classes.bias");
  return o;
}

}  // namespace

TEST_SUITE("model") {

TEST_CASE("forward matches scalar reimplementation") {
  std::mt19937_64 rng(1);
  for (bool tc : {true, false}) {
    EmotionModel model(small_config(tc), 17);
    Matrix seq = random_matrix(9, 4, rng, 2.0);
    UtteranceOutput got = model.forward_utterance(seq);
    UtteranceOutput want = oracle_forward(model, seq);
    CHECK((got.embedding - want.embedding).cwiseAbs().maxCoeff() < 1e-10);
    CHECK((got.scores - want.scores).cwiseAbs().maxCoeff() < 1e-10);
    CHECK((got.class_logits - want.class_logits).cwiseAbs().maxCoeff() < 1e-10);
  }
}

TEST_CASE("batched forward agrees with per-utterance forward") {
  std::mt19937_64 rng(2);
  EmotionModel model(small_config(true), 3);
  const std::vector<int> lengths{7, 3, 5};
  nn::FrameLayout lay{7, 3, Matrix::Zero(7, 3)};
  Matrix frames = Matrix::Zero(4, lay.columns());
  std::vector<Matrix> seqs;
  for (int b = 0; b < 3; ++b) {
    lay.mask.col(b).head(lengths[b]).setOnes();
    seqs.push_back(random_matrix(lengths[b], 4, rng));
    for (int t = 0; t < lengths[b]; ++t) frames.col(t * 3 + b) = seqs[b].row(t).transpose();
  }
  BatchOutput out = model.forward(frames, lay);
  CHECK(out.embedding.rows() == 6);
  CHECK(out.scores.rows() == 3);
  CHECK(out.logits.rows() == 7);
  for (int b = 0; b < 3; ++b) {
    UtteranceOutput u = model.forward_utterance(seqs[b]);
    CHECK((out.scores.data().col(b) - u.scores).cwiseAbs().maxCoeff() < 1e-12);
    CHECK((out.embedding.data().col(b) - u.embedding).cwiseAbs().maxCoeff() < 1e-12);
  }
}

TEST_CASE("whole-model gradient check") {
  std::mt19937_64 rng(3);
  ModelConfig cfg = small_config(true);
  cfg.hidden = 3;
  cfg.embed_dim = 4;
  EmotionModel model(cfg, 5);
  for (auto& p : model.parameters()) {
    Value v = p;
    v.mutable_data() += random_matrix(v.rows(), v.cols(), rng, 0.1);
  }
  nn::FrameLayout lay = nn::FrameLayout::dense(4, 2);
  Matrix frames = random_matrix(4, lay.columns(), rng);
  Matrix w = random_matrix(3, 2, rng);
  auto f = [&] {
    BatchOutput o = model.forward(frames, lay);
    return nn::add(nn::sum(nn::mul(o.scores, nn::constant(w))),
                   nn::scale(nn::sum(nn::mul(o.logits, o.logits)), 0.1));
  };
  auto r = nn::finite_diff_check(f, model.parameters(), 1e-6);
  CHECK(r.finite);
  CHECK_MESSAGE(r.max_relative_error < 1e-5, r.worst);
}

TEST_CASE("parameter counts") {
  for (bool tc : {true, false}) {
    ModelConfig cfg = small_config(tc);
    EmotionModel model(cfg, 1);
    std::size_t n = 0;
    for (const auto& p : model.parameters()) n += static_cast<std::size_t>(p.size());
    CHECK(n == count_parameters(cfg));
    ParamReport rep = model.param_report();
    CHECK(rep.count == n);
    CHECK(rep.bytes_fp32 == 4 * n);
    CHECK(rep.head_count == static_cast<std::size_t>(10 * (cfg.embed_dim + 1)));
  }
  ModelConfig big;
  big.input_dim = 43;
  ModelConfig wide = big;
  wide.input_dim = 2048;
  wide.use_tconv = false;
  CHECK(count_parameters(big) == 199222);
  CHECK(count_parameters(wide) == 952458);
}

TEST_CASE("seeded construction and clone independence") {
  EmotionModel a(small_config(true), 9), b(small_config(true), 9), c(small_config(true), 10);
  auto sa = a.state(), sb = b.state(), sc = c.state();
  bool all_same = true, any_diff = false;
  for (std::size_t i = 0; i < sa.size(); ++i) {
    all_same = all_same && sa[i].value == sb[i].value;
    any_diff = any_diff || sa[i].value != sc[i].value;
  }
  CHECK(all_same);
  CHECK(any_diff);

  EmotionModel d = a.clone();
  Value p = d.parameters().front();
  p.mutable_data().array() += 1.0;
  CHECK(a.state().front().value != d.state().front().value);
}

TEST_CASE("save and load round trip") {
  TempDir dir("model");
  ModelConfig cfg = small_config(true);
  cfg.features = "fused:a,b";
  EmotionModel model(cfg, 4);
  model.save(dir.str("m.emow"));
  EmotionModel back = EmotionModel::load(dir.str("m.emow"));
  CHECK(back.config().features == "fused:a,b");
  CHECK(back.config().hidden == 5);
  Matrix seq = Matrix::Random(6, 4);
  CHECK(model.forward_utterance(seq).scores == back.forward_utterance(seq).scores);

  auto state = model.state();
  state.pop_back();
  CHECK_THROWS(back.load_state(state));
}

TEST_CASE("config validation and json") {
  ModelConfig cfg = small_config(false);
  CHECK_NOTHROW(cfg.validate());
  ModelConfig back = ModelConfig::from_json(cfg.to_json());
  CHECK(back.input_dim == cfg.input_dim);
  CHECK(back.use_tconv == false);
  CHECK(back.recurrent_input_dim() == 4);
  CHECK(small_config(true).recurrent_input_dim() == 8);
  cfg.hidden = 0;
  CHECK_THROWS(cfg.validate());
  cfg = small_config(false);
  cfg.n_classes = 5;
  CHECK_THROWS(cfg.validate());
}

TEST_CASE("embedding lies in the open unit cube") {
  EmotionModel model(small_config(true), 2);
  Matrix seq = 50.0 * Matrix::Random(20, 4);
  Vector e = model.forward_utterance(seq).embedding;
  CHECK(e.cwiseAbs().maxCoeff() <= 1.0);
  CHECK(e.allFinite());
}

}  // TEST_SUITE
