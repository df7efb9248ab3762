#include "emo/nn/checkpoint.hpp"

#include "../binary_io.hpp"

namespace emo::nn {

namespace {
constexpr std::uint32_t kVersion = 1;
}

void write_checkpoint(const std::string& path,
                      const std::vector<NamedTensor>& tensors) {
  io::Writer w(path);
  w.bytes("EMOW", 4);
  w.u32(kVersion);
  w.u32(static_cast<std::uint32_t>(tensors.size()));
  for (const auto& t : tensors) {
    w.str(t.name);
    w.u32(2);
    w.u32(static_cast<std::uint32_t>(t.value.rows()));
    w.u32(static_cast<std::uint32_t>(t.value.cols()));
    for (Eigen::Index r = 0; r < t.value.rows(); ++r) {
      for (Eigen::Index c = 0; c < t.value.cols(); ++c) w.f64(t.value(r, c));
    }
  }
  w.close();
}

std::vector<NamedTensor> read_checkpoint(const std::string& path) {
  io::Reader r(path);
  r.expect_magic("EMOW");
  const auto version = r.u32("version");
  if (version != kVersion) {
    throw DataError(DataError::Kind::kBadVersion,
                    path + ": unsupported checkpoint version " + std::to_string(version));
  }
  const auto count = r.u32("tensor count");
  std::vector<NamedTensor> out;
  out.reserve(count);
  for (std::uint32_t i = 0; i < count; ++i) {
    NamedTensor t;
    t.name = r.str("tensor name");
    const auto rank = r.u32("rank");
    if (rank < 1 || rank > 2) {
      throw DataError(DataError::Kind::kShapeMismatch,
                      path + ": tensor " + t.name + " has unsupported rank " +
                          std::to_string(rank));
    }
    const auto rows = r.u32("dims");
    const auto cols = rank == 2 ? r.u32("dims") : 1u;
    r.need(static_cast<std::size_t>(rows) * cols * 8, "tensor values");
    t.value.resize(rows, cols);
    for (std::uint32_t a = 0; a < rows; ++a) {
      for (std::uint32_t b = 0; b < cols; ++b) t.value(a, b) = r.f64("tensor values");
    }
    out.push_back(std::move(t));
  }
  if (r.remaining() != 0) {
    throw DataError(DataError::Kind::kShapeMismatch, path + ": trailing bytes after tensors");
  }
  return out;
}

}  // namespace emo::nn
