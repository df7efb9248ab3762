#pragma once

#include "emo/model.hpp"

#include <cstdint>
#include <map>
#include <span>
#include <string>
#include <vector>

namespace emo {

inline constexpr double kFramePeriodMs = 20.0;

/// Per-frame features, one frame per row.
struct FeatureSequence {
  Matrix frames;
  double frame_period_ms = kFramePeriodMs;

  Eigen::Index length() const { return frames.rows(); }
  Eigen::Index dim() const { return frames.cols(); }
};

/// "EMOF" v1, little-endian: magic, version u32, dim u32, frames u32,
/// frame period f64 (ms), then frames x dim float32 row-major.
void write_feature_file(const std::string& path, const FeatureSequence& seq);
FeatureSequence read_feature_file(const std::string& path);

/// Frame-wise concatenation truncated to the shortest stream. Rejects
/// mismatched frame periods and length differences above two frames.
FeatureSequence fuse_streams(std::span<const FeatureSequence> streams);

enum class Split { kTrain, kVal, kTest };
std::string to_string(Split s);
Split parse_split(const std::string& s);

struct UtteranceRecord {
  std::string id;
  /// View name -> feature file path (relative paths resolve against the
  /// manifest directory).
  std::map<std::string, std::string> features;
  double act = 4, val = 4, dom = 4;
  int emo_class = 0;
  Split split = Split::kTrain;

  Eigen::Vector3d labels() const { return {act, val, dom}; }
};

struct Manifest {
  std::vector<UtteranceRecord> records;
  std::string base_dir = ".";

  std::vector<const UtteranceRecord*> select(Split split) const;
  /// Throws DataError on duplicate ids, out-of-range scores or classes.
  void validate() const;
};

/// JSON-lines, one record per line.
Manifest read_manifest(const std::string& path);
void write_manifest(const std::string& path, const Manifest& manifest);

/// Which features to feed a model. Each stream is either a view name present
/// in the record's `features` map or a directory holding `<id>.emof`. More
/// than one stream means frame-wise fusion.
struct FeatureSource {
  std::vector<std::string> streams;

  /// Accepts "name", "fused:a,b,..." or a directory path.
  static FeatureSource parse(const std::string& spec);
  FeatureSequence load(const UtteranceRecord& rec, const std::string& base_dir) const;
};

/// One utterance with its features promoted to 64-bit.
struct Example {
  std::string id;
  Matrix frames;  // T x D
  Eigen::Vector3d labels;
  int emo_class = 0;
};

using Dataset = std::vector<Example>;

/// Loads every record of `split`. Missing or unreadable feature files are
/// collected and reported together in one DataError.
Dataset load_dataset(const Manifest& manifest, Split split, const FeatureSource& source);

struct Batch {
  Matrix frames;  // D x (T_max * B), see nn::FrameLayout
  nn::FrameLayout layout;
  Matrix labels;  // 3 x B
  std::vector<int> classes;
  std::vector<std::string> ids;

  Eigen::Index size() const { return static_cast<Eigen::Index>(ids.size()); }
};

/// Zero-padded batch over `members` (indices into `data`).
Batch collate(const Dataset& data, std::span<const std::size_t> members);

inline constexpr int kDefaultBatchSize = 32;
inline constexpr int kBucketWidthFrames = 50;

/// Length-bucketed, seeded shuffling into batches. Every example appears in
/// exactly one batch; a trailing singleton joins the previous batch.
std::vector<Batch> make_batches(const Dataset& data, int batch_size, std::uint64_t seed);

}  // namespace emo
