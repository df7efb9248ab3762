#pragma once

#include "emo/nn/value.hpp"

#include <string>
#include <vector>

namespace emo::nn {

struct NamedTensor {
  std::string name;
  Matrix value;
};

/// "EMOW" v1: tensor count, then per tensor the name, rank, dims and
/// row-major little-endian float64 values. Matrices are written as rank 2.
void write_checkpoint(const std::string& path, const std::vector<NamedTensor>& tensors);

/// Rank-1 tensors load as column vectors.
std::vector<NamedTensor> read_checkpoint(const std::string& path);

}  // namespace emo::nn
