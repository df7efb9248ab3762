#pragma once

#include "emo/data.hpp"

#include <cstdint>
#include <string>

namespace emo {

/// Desk-scale stand-in corpus. Every utterance has latent (a, v, d) scores;
/// the "embed" view encodes all three cleanly, the "mfb" view encodes
/// activation and dominance but only a weakly correlated copy of valence.
struct SyntheticSpec {
  int n_utts = 1000;
  std::uint64_t seed = 1;
  int teacher_dim = 16;
  int student_dim = 8;
  double noise = 0.1;

  /// Split sizes; negative means 10% of n_utts each.
  int n_val = -1;
  int n_test = -1;

  /// Utterance-level correlation between the student's valence cue and the
  /// valence latent.
  double student_valence_corr = 0.5;
  /// Depth by which the valence latent scales the temporal modulation of the
  /// student channels (0 disables). The information is present but only
  /// recoverable through temporal statistics, not the frame mean.
  double student_valence_modulation = 0.0;
  /// Adds "embed_a" / "embed_b" views whose valence cues carry independent
  /// nuisance, so that fusing them recovers more than either alone.
  bool complementary_views = false;
  double view_valence_corr = 0.8;
  /// Draw latents from a neutral-peaked distribution instead of uniform.
  bool skew_to_neutral = false;
  /// Gaussian annotator noise (label scale units) added to the recorded
  /// scores; features are rendered from the noise-free latents.
  double label_noise = 0.0;

  double min_seconds = 2.75;
  double max_seconds = 11.0;
  double frame_period_ms = kFramePeriodMs;

  static SyntheticSpec from_json(const std::string& text);
  std::string to_json() const;
};

/// Discrete class from the (a, v, d) octant around the scale midpoint; the
/// two high-activation/high-valence octants share class 6.
int octant_class(const Eigen::Vector3d& labels);

/// Labels, split and length of one synthetic utterance.
struct SyntheticUtterance {
  UtteranceRecord record;  // features map left empty
  int frames = 0;
  /// Noise-free scores the features are rendered from.
  Eigen::Vector3d latent = Eigen::Vector3d::Constant(4.0);
  /// Valence cues of the weak views: student, view a, view b.
  Eigen::Vector3d valence_cues = Eigen::Vector3d::Zero();
};

/// Draws every utterance's latents, cues and length without rendering
/// features. Deterministic in the spec.
std::vector<SyntheticUtterance> plan_synthetic(const SyntheticSpec& spec);

/// Writes `<out_dir>/<view>/<id>.emof` for every view plus
/// `<out_dir>/manifest.jsonl`, and returns the manifest.
Manifest gen_synthetic(const SyntheticSpec& spec, const std::string& out_dir);

}  // namespace emo
