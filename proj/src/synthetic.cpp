#include "emo/synthetic.hpp"

#include "emo/errors.hpp"

#include <json.hpp>

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <numbers>
#include <random>

namespace emo {

namespace fs = std::filesystem;
using nlohmann::json;

SyntheticSpec SyntheticSpec::from_json(const std::string& text) {
  const json j = json::parse(text);
  SyntheticSpec s;
  s.n_utts = j.value("n_utts", s.n_utts);
  s.seed = j.value("seed", s.seed);
  s.teacher_dim = j.value("teacher_dim", s.teacher_dim);
  s.student_dim = j.value("student_dim", s.student_dim);
  s.noise = j.value("noise", s.noise);
  s.n_val = j.value("n_val", s.n_val);
  s.n_test = j.value("n_test", s.n_test);
  s.student_valence_corr = j.value("student_valence_corr", s.student_valence_corr);
  s.student_valence_modulation =
      j.value("student_valence_modulation", s.student_valence_modulation);
  s.complementary_views = j.value("complementary_views", s.complementary_views);
  s.view_valence_corr = j.value("view_valence_corr", s.view_valence_corr);
  s.skew_to_neutral = j.value("skew_to_neutral", s.skew_to_neutral);
  s.label_noise = j.value("label_noise", s.label_noise);
  s.min_seconds = j.value("min_seconds", s.min_seconds);
  s.max_seconds = j.value("max_seconds", s.max_seconds);
  s.frame_period_ms = j.value("frame_period_ms", s.frame_period_ms);
  return s;
}

std::string SyntheticSpec::to_json() const {
  json j = {{"n_utts", n_utts},
            {"seed", seed},
            {"teacher_dim", teacher_dim},
            {"student_dim", student_dim},
            {"noise", noise},
            {"n_val", n_val},
            {"n_test", n_test},
            {"student_valence_corr", student_valence_corr},
            {"student_valence_modulation", student_valence_modulation},
            {"complementary_views", complementary_views},
            {"view_valence_corr", view_valence_corr},
            {"skew_to_neutral", skew_to_neutral},
            {"label_noise", label_noise},
            {"min_seconds", min_seconds},
            {"max_seconds", max_seconds},
            {"frame_period_ms", frame_period_ms}};
  return j.dump(2);
}

int octant_class(const Eigen::Vector3d& labels) {
  const int idx = (labels[kActivation] > 4.0 ? 4 : 0) + (labels[kValence] > 4.0 ? 2 : 0) +
                  (labels[kDominance] > 4.0 ? 1 : 0);
  return idx == 7 ? 6 : idx;
}

namespace {

// Fixed per-channel structure of one feature view.
struct ViewShape {
  Matrix loadings;            // D x 3
  Eigen::VectorXd frequency;  // Hz, per channel
};

ViewShape make_view_shape(int dim, std::mt19937_64& rng) {
  std::normal_distribution<double> normal(0.0, 1.0);
  std::uniform_real_distribution<double> freq(0.5, 2.0);
  ViewShape v;
  v.loadings.resize(dim, 3);
  for (int c = 0; c < dim; ++c) {
    for (int k = 0; k < 3; ++k) v.loadings(c, k) = normal(rng);
  }
  v.frequency.resize(dim);
  for (int c = 0; c < dim; ++c) v.frequency(c) = freq(rng);
  return v;
}

// Each channel is a low-frequency oscillation around its loading-weighted
// cue value, plus white noise.
FeatureSequence render(const ViewShape& shape, const Eigen::Vector3d& cue, int frames,
                       double period_ms, double noise, double depth, std::mt19937_64& rng) {
  std::normal_distribution<double> normal(0.0, 1.0);
  std::uniform_real_distribution<double> phase(0.0, 2.0 * std::numbers::pi);
  const Eigen::Index dim = shape.loadings.rows();
  const Eigen::VectorXd level = shape.loadings * cue;
  Eigen::VectorXd phases(dim);
  for (Eigen::Index c = 0; c < dim; ++c) phases(c) = phase(rng);
  FeatureSequence seq;
  seq.frame_period_ms = period_ms;
  seq.frames.resize(frames, dim);
  for (int t = 0; t < frames; ++t) {
    const double sec = t * period_ms / 1000.0;
    for (Eigen::Index c = 0; c < dim; ++c) {
      const double mod =
          1.0 + depth * std::sin(2.0 * std::numbers::pi * shape.frequency(c) * sec + phases(c));
      seq.frames(t, c) = level(c) * mod + (noise > 0 ? noise * normal(rng) : 0.0);
    }
  }
  return seq;
}

}  // namespace

namespace {

void check_spec(const SyntheticSpec& spec) {
  if (spec.teacher_dim < 4 || spec.student_dim < 4) {
    throw std::invalid_argument("gen_synthetic: feature dims must be >= 4");
  }
  if (spec.n_utts < 0) throw std::invalid_argument("gen_synthetic: n_utts must be >= 0");
  if (!(spec.min_seconds > 0 && spec.max_seconds >= spec.min_seconds)) {
    throw std::invalid_argument("gen_synthetic: invalid duration range");
  }
  if (spec.label_noise < 0) throw std::invalid_argument("gen_synthetic: label_noise must be >= 0");
  if (std::abs(spec.student_valence_corr) > 1 || std::abs(spec.view_valence_corr) > 1) {
    throw std::invalid_argument("gen_synthetic: correlations must lie in [-1, 1]");
  }
}

}  // namespace

std::vector<SyntheticUtterance> plan_synthetic(const SyntheticSpec& spec) {
  check_spec(spec);
  const int n_val = spec.n_val >= 0 ? spec.n_val : spec.n_utts / 10;
  const int n_test = spec.n_test >= 0 ? spec.n_test : spec.n_utts / 10;
  if (n_val + n_test > spec.n_utts) {
    throw std::invalid_argument("gen_synthetic: split sizes exceed n_utts");
  }
  const int n_train = spec.n_utts - n_val - n_test;

  std::mt19937_64 rng(spec.seed);
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  std::normal_distribution<double> normal(0.0, 1.0);
  const double latent_sd = 1.0 / std::sqrt(3.0);  // sd of U[-1, 1]
  // Separate stream so the latents do not depend on the label noise level.
  std::mt19937_64 label_rng(spec.seed ^ 0x5851f42d4c957f2dULL);
  std::normal_distribution<double> label_normal(0.0, 1.0);

  // Mixes a valence latent with utterance-level nuisance at correlation rho.
  auto weak_copy = [&](double zv, double rho) {
    return rho * zv + std::sqrt(1.0 - rho * rho) * latent_sd * normal(rng);
  };

  std::vector<SyntheticUtterance> out;
  out.reserve(static_cast<std::size_t>(spec.n_utts));
  for (int i = 0; i < spec.n_utts; ++i) {
    char id[32];
    std::snprintf(id, sizeof id, "utt%05d", i);
    SyntheticUtterance u;
    UtteranceRecord& rec = u.record;
    rec.id = id;
    rec.split = i < n_train ? Split::kTrain : (i < n_train + n_val ? Split::kVal : Split::kTest);

    Eigen::Vector3d labels;
    for (int k = 0; k < 3; ++k) {
      if (spec.skew_to_neutral) {
        // Mean of three uniforms: peaked at the midpoint, support [1, 7].
        labels[k] = 1.0 + 6.0 * (unit(rng) + unit(rng) + unit(rng)) / 3.0;
      } else {
        labels[k] = 1.0 + 6.0 * unit(rng);
      }
    }
    u.latent = labels;
    Eigen::Vector3d observed = labels;
    if (spec.label_noise > 0) {
      for (int k = 0; k < 3; ++k) {
        observed[k] = std::clamp(labels[k] + spec.label_noise * label_normal(label_rng), 1.0, 7.0);
      }
    }
    rec.act = observed[kActivation];
    rec.val = observed[kValence];
    rec.dom = observed[kDominance];
    rec.emo_class = octant_class(observed);

    const double zv = (labels[kValence] - 4.0) / 3.0;
    u.valence_cues[0] = weak_copy(zv, spec.student_valence_corr);
    u.valence_cues[1] = weak_copy(zv, spec.view_valence_corr);
    u.valence_cues[2] = weak_copy(zv, spec.view_valence_corr);

    const double seconds = spec.min_seconds + (spec.max_seconds - spec.min_seconds) * unit(rng);
    u.frames = std::max(1, static_cast<int>(std::floor(seconds * 1000.0 / spec.frame_period_ms)));
    out.push_back(std::move(u));
  }
  return out;
}

Manifest gen_synthetic(const SyntheticSpec& spec, const std::string& out_dir) {
  auto plan = plan_synthetic(spec);

  std::vector<std::string> views = {"embed", "mfb"};
  if (spec.complementary_views) {
    views.push_back("embed_a");
    views.push_back("embed_b");
  }
  fs::create_directories(out_dir);
  for (const auto& v : views) fs::create_directories(fs::path(out_dir) / v);

  // View structure depends only on the seed, not on the corpus size.
  std::mt19937_64 shape_rng(spec.seed ^ 0x9e3779b97f4a7c15ULL);
  const ViewShape teacher = make_view_shape(spec.teacher_dim, shape_rng);
  const ViewShape student = make_view_shape(spec.student_dim, shape_rng);
  const ViewShape view_a = make_view_shape(spec.teacher_dim, shape_rng);
  const ViewShape view_b = make_view_shape(spec.teacher_dim, shape_rng);
  std::mt19937_64 rng(spec.seed ^ 0xd1b54a32d192ed03ULL);

  Manifest manifest;
  manifest.base_dir = out_dir;
  for (auto& u : plan) {
    UtteranceRecord& rec = u.record;
    const Eigen::Vector3d z = (u.latent.array() - 4.0) / 3.0;
    auto emit = [&](const std::string& view, const ViewShape& shape, double valence_cue,
                    double depth) {
      Eigen::Vector3d cue = z;
      cue[kValence] = valence_cue;
      const auto seq = render(shape, cue, u.frames, spec.frame_period_ms, spec.noise, depth, rng);
      const std::string rel = view + "/" + rec.id + ".emof";
      write_feature_file((fs::path(out_dir) / rel).string(), seq);
      rec.features[view] = rel;
    };
    constexpr double kDepth = 0.2;
    emit("embed", teacher, z[kValence], kDepth);
    emit("mfb", student, u.valence_cues[0],
         kDepth + spec.student_valence_modulation * (z[kValence] + 1.0) / 2.0);
    if (spec.complementary_views) {
      emit("embed_a", view_a, u.valence_cues[1], kDepth);
      emit("embed_b", view_b, u.valence_cues[2], kDepth);
    }
    manifest.records.push_back(std::move(rec));
  }
  write_manifest((fs::path(out_dir) / "manifest.jsonl").string(), manifest);
  return manifest;
}

}  // namespace emo
