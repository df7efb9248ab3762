#include "emo/data.hpp"

#include "binary_io.hpp"
#include "emo/errors.hpp"

#include <json.hpp>

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <numeric>
#include <random>
#include <set>
#include <sstream>

namespace emo {

namespace fs = std::filesystem;
using ojson = nlohmann::ordered_json;

namespace {
constexpr std::uint32_t kFeatureVersion = 1;
}

void write_feature_file(const std::string& path, const FeatureSequence& seq) {
  if (seq.dim() < 1) throw DataError(DataError::Kind::kShapeMismatch, path + ": dim must be >= 1");
  if (seq.length() < 1) {
    throw DataError(DataError::Kind::kShapeMismatch, path + ": frames must be >= 1");
  }
  if (!(seq.frame_period_ms > 0.0)) {
    throw DataError(DataError::Kind::kShapeMismatch, path + ": frame period must be > 0");
  }
  io::Writer w(path);
  w.bytes("EMOF", 4);
  w.u32(kFeatureVersion);
  w.u32(static_cast<std::uint32_t>(seq.dim()));
  w.u32(static_cast<std::uint32_t>(seq.length()));
  w.f64(seq.frame_period_ms);
  for (Eigen::Index t = 0; t < seq.length(); ++t) {
    for (Eigen::Index d = 0; d < seq.dim(); ++d) w.f32(static_cast<float>(seq.frames(t, d)));
  }
  w.close();
}

FeatureSequence read_feature_file(const std::string& path) {
  io::Reader r(path);
  r.expect_magic("EMOF");
  const auto version = r.u32("version");
  if (version != kFeatureVersion) {
    throw DataError(DataError::Kind::kBadVersion,
                    path + ": unsupported feature file version " + std::to_string(version));
  }
  const auto dim = r.u32("dim");
  const auto frames = r.u32("frame count");
  FeatureSequence seq;
  seq.frame_period_ms = r.f64("frame period");
  if (dim == 0 || frames == 0) {
    throw DataError(DataError::Kind::kShapeMismatch, path + ": empty dim or frame count");
  }
  const std::size_t payload = static_cast<std::size_t>(dim) * frames * 4;
  r.need(payload, "feature payload");
  if (r.remaining() != payload) {
    throw DataError(DataError::Kind::kShapeMismatch,
                    path + ": payload size disagrees with dim x frames header");
  }
  seq.frames.resize(frames, dim);
  for (std::uint32_t t = 0; t < frames; ++t) {
    for (std::uint32_t d = 0; d < dim; ++d) seq.frames(t, d) = r.f32("feature payload");
  }
  return seq;
}

FeatureSequence fuse_streams(std::span<const FeatureSequence> streams) {
  if (streams.size() < 2) throw std::invalid_argument("fuse_streams: need at least two streams");
  Eigen::Index min_len = streams[0].length(), max_len = min_len, dim = 0;
  for (const auto& s : streams) {
    if (s.frame_period_ms != streams[0].frame_period_ms) {
      throw std::invalid_argument("fuse_streams: frame periods differ");
    }
    min_len = std::min(min_len, s.length());
    max_len = std::max(max_len, s.length());
    dim += s.dim();
  }
  if (max_len - min_len > 2) {
    throw std::invalid_argument("fuse_streams: frame counts differ by " +
                                std::to_string(max_len - min_len) + " (> 2), streams misaligned");
  }
  FeatureSequence out;
  out.frame_period_ms = streams[0].frame_period_ms;
  out.frames.resize(min_len, dim);
  Eigen::Index offset = 0;
  for (const auto& s : streams) {
    out.frames.middleCols(offset, s.dim()) = s.frames.topRows(min_len);
    offset += s.dim();
  }
  return out;
}

std::string to_string(Split s) {
  switch (s) {
    case Split::kTrain: return "train";
    case Split::kVal: return "val";
    case Split::kTest: return "test";
  }
  return "train";
}

Split parse_split(const std::string& s) {
  if (s == "train") return Split::kTrain;
  if (s == "val" || s == "validation") return Split::kVal;
  if (s == "test") return Split::kTest;
  throw std::invalid_argument("unknown split '" + s + "'");
}

std::vector<const UtteranceRecord*> Manifest::select(Split split) const {
  std::vector<const UtteranceRecord*> out;
  for (const auto& r : records) {
    if (r.split == split) out.push_back(&r);
  }
  return out;
}

void Manifest::validate() const {
  std::set<std::string> seen;
  for (const auto& r : records) {
    if (r.id.empty()) throw DataError(DataError::Kind::kInvalidRecord, "record with empty id");
    if (!seen.insert(r.id).second) {
      throw DataError(DataError::Kind::kInvalidRecord, "duplicate utterance id " + r.id);
    }
    for (double v : {r.act, r.val, r.dom}) {
      if (!(v >= 1.0 && v <= 7.0)) {
        throw DataError(DataError::Kind::kInvalidRecord, r.id + ": score outside [1, 7]");
      }
    }
    if (r.emo_class < 0 || r.emo_class >= kNumClasses) {
      throw DataError(DataError::Kind::kInvalidRecord, r.id + ": emotion class outside [0, 7)");
    }
  }
}

Manifest read_manifest(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw DataError(DataError::Kind::kMissing, "cannot open manifest " + path);
  Manifest m;
  m.base_dir = fs::path(path).parent_path().string();
  if (m.base_dir.empty()) m.base_dir = ".";
  std::string line;
  int lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    try {
      const auto j = ojson::parse(line);
      UtteranceRecord r;
      r.id = j.at("id").get<std::string>();
      for (auto& [name, p] : j.at("features").items()) r.features[name] = p.get<std::string>();
      r.act = j.at("act").get<double>();
      r.val = j.at("val").get<double>();
      r.dom = j.at("dom").get<double>();
      r.emo_class = j.at("emo_class").get<int>();
      r.split = parse_split(j.at("split").get<std::string>());
      m.records.push_back(std::move(r));
    } catch (const std::exception& e) {
      throw DataError(DataError::Kind::kInvalidRecord,
                      path + ":" + std::to_string(lineno) + ": " + e.what());
    }
  }
  m.validate();
  return m;
}

void write_manifest(const std::string& path, const Manifest& manifest) {
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw DataError(DataError::Kind::kIo, "cannot write manifest " + path);
  for (const auto& r : manifest.records) {
    ojson j;
    j["id"] = r.id;
    j["features"] = ojson::object();
    for (const auto& [name, p] : r.features) j["features"][name] = p;
    j["act"] = r.act;
    j["val"] = r.val;
    j["dom"] = r.dom;
    j["emo_class"] = r.emo_class;
    j["split"] = to_string(r.split);
    out << j.dump() << "\n";
  }
  if (!out) throw DataError(DataError::Kind::kIo, "write failed: " + path);
}

FeatureSource FeatureSource::parse(const std::string& spec) {
  FeatureSource src;
  std::string rest = spec;
  if (spec.starts_with("fused:")) rest = spec.substr(6);
  std::stringstream ss(rest);
  std::string item;
  while (std::getline(ss, item, ',')) {
    if (!item.empty()) src.streams.push_back(item);
  }
  if (src.streams.empty()) throw std::invalid_argument("empty feature source '" + spec + "'");
  if (spec.starts_with("fused:") && src.streams.size() < 2) {
    throw std::invalid_argument("fused feature source needs at least two streams");
  }
  return src;
}

FeatureSequence FeatureSource::load(const UtteranceRecord& rec,
                                    const std::string& base_dir) const {
  std::vector<FeatureSequence> parts;
  for (const auto& stream : streams) {
    fs::path p;
    if (auto it = rec.features.find(stream); it != rec.features.end()) {
      p = it->second;
      if (p.is_relative()) p = fs::path(base_dir) / p;
    } else {
      p = fs::path(stream) / (rec.id + ".emof");
    }
    parts.push_back(read_feature_file(p.string()));
  }
  if (parts.size() == 1) return std::move(parts.front());
  return fuse_streams(parts);
}

Dataset load_dataset(const Manifest& manifest, Split split, const FeatureSource& source) {
  Dataset out;
  std::vector<std::string> failures;
  for (const auto* rec : manifest.select(split)) {
    try {
      auto seq = source.load(*rec, manifest.base_dir);
      out.push_back({rec->id, std::move(seq.frames), rec->labels(), rec->emo_class});
    } catch (const std::exception& e) {
      failures.push_back(e.what());
    }
  }
  if (!failures.empty()) {
    std::string msg = std::to_string(failures.size()) + " utterance(s) failed to load:";
    for (std::size_t i = 0; i < failures.size() && i < 20; ++i) msg += "\n  " + failures[i];
    if (failures.size() > 20) msg += "\n  ...";
    throw DataError(DataError::Kind::kMissing, msg);
  }
  return out;
}

Batch collate(const Dataset& data, std::span<const std::size_t> members) {
  if (members.empty()) throw std::invalid_argument("collate: empty batch");
  const Eigen::Index b = static_cast<Eigen::Index>(members.size());
  const Eigen::Index dim = data[members[0]].frames.cols();
  Eigen::Index steps = 0;
  for (auto i : members) {
    if (data[i].frames.cols() != dim) {
      throw std::invalid_argument("collate: feature widths differ within a batch");
    }
    steps = std::max(steps, data[i].frames.rows());
  }
  Batch batch;
  batch.frames = Matrix::Zero(dim, steps * b);
  batch.layout = {steps, b, Matrix::Zero(steps, b)};
  batch.labels.resize(kNumDims, b);
  for (Eigen::Index j = 0; j < b; ++j) {
    const Example& ex = data[members[j]];
    for (Eigen::Index t = 0; t < ex.frames.rows(); ++t) {
      batch.frames.col(t * b + j) = ex.frames.row(t).transpose();
      batch.layout.mask(t, j) = 1.0;
    }
    batch.labels.col(j) = ex.labels;
    batch.classes.push_back(ex.emo_class);
    batch.ids.push_back(ex.id);
  }
  return batch;
}

std::vector<Batch> make_batches(const Dataset& data, int batch_size, std::uint64_t seed) {
  if (batch_size < 2) throw std::invalid_argument("make_batches: batch size must be >= 2");
  if (data.empty()) throw std::invalid_argument("make_batches: empty split");
  std::mt19937_64 rng(seed);

  std::vector<std::size_t> order(data.size());
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
    if (data[a].frames.rows() != data[b].frames.rows()) {
      return data[a].frames.rows() < data[b].frames.rows();
    }
    return data[a].id < data[b].id;
  });

  // Buckets span at most kBucketWidthFrames frames of length.
  std::size_t start = 0;
  while (start < order.size()) {
    const auto base = data[order[start]].frames.rows();
    std::size_t end = start + 1;
    while (end < order.size() && data[order[end]].frames.rows() - base < kBucketWidthFrames) ++end;
    std::shuffle(order.begin() + static_cast<std::ptrdiff_t>(start),
                 order.begin() + static_cast<std::ptrdiff_t>(end), rng);
    start = end;
  }

  std::vector<std::vector<std::size_t>> groups;
  for (std::size_t i = 0; i < order.size(); i += static_cast<std::size_t>(batch_size)) {
    const auto end = std::min(order.size(), i + static_cast<std::size_t>(batch_size));
    groups.emplace_back(order.begin() + static_cast<std::ptrdiff_t>(i),
                        order.begin() + static_cast<std::ptrdiff_t>(end));
  }
  if (groups.size() > 1 && groups.back().size() < 2) {
    groups[groups.size() - 2].push_back(groups.back().front());
    groups.pop_back();
  }
  std::shuffle(groups.begin(), groups.end(), rng);

  std::vector<Batch> batches;
  batches.reserve(groups.size());
  for (const auto& g : groups) batches.push_back(collate(data, g));
  return batches;
}

}  // namespace emo
