#pragma once

#include "emo/nn/value.hpp"

#include <cstdint>
#include <random>

namespace emo::nn {

/// Frames of a padded batch are stored column-wise: column `t * batch + b`
/// holds frame t of utterance b. `mask(t, b)` is 1 for valid frames.
struct FrameLayout {
  Eigen::Index steps = 0;
  Eigen::Index batch = 0;
  Matrix mask;

  static FrameLayout dense(Eigen::Index steps, Eigen::Index batch) {
    return {steps, batch, Matrix::Ones(steps, batch)};
  }
  Eigen::Index columns() const { return steps * batch; }
};

/// GRU weights with the gates stacked as [update; reset; candidate].
struct GruParams {
  Value w_input;   // 3H x D
  Value w_hidden;  // 3H x H
  Value bias;      // 3H x 1

  Eigen::Index input_dim() const { return w_input.cols(); }
  Eigen::Index hidden_dim() const { return w_hidden.cols(); }
  std::vector<Value> tensors() const { return {w_input, w_hidden, bias}; }
};

/// One length-3 kernel per channel plus a per-channel bias.
struct TConvParams {
  Value kernel;  // D x 3, taps applied to frames t-1, t, t+1
  Value bias;    // D x 1

  Eigen::Index channels() const { return kernel.rows(); }
  std::vector<Value> tensors() const { return {kernel, bias}; }
};

/// Uniform in +-sqrt(1/fan_in) where fan_in is the column count.
Matrix scaled_uniform(Eigen::Index rows, Eigen::Index cols, std::mt19937_64& rng);

GruParams make_gru(Eigen::Index input_dim, Eigen::Index hidden_dim,
                   std::mt19937_64& rng);
TConvParams make_tconv(Eigen::Index channels, std::mt19937_64& rng);

// Plain numeric kernels, templated on the scalar type.

template <typename Scalar>
using MatrixX = Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic>;

template <typename Derived>
auto logistic(const Eigen::MatrixBase<Derived>& a) {
  using Scalar = typename Derived::Scalar;
  return (Scalar(1) + (-a.array()).exp()).inverse().matrix();
}

/// One GRU step on column-batched inputs x (D x B) and h (H x B).
template <typename Scalar>
MatrixX<Scalar> gru_step(const MatrixX<Scalar>& w_input,
                         const MatrixX<Scalar>& w_hidden,
                         const MatrixX<Scalar>& bias,
                         const MatrixX<Scalar>& x, const MatrixX<Scalar>& h) {
  const Eigen::Index hd = w_hidden.cols();
  MatrixX<Scalar> pre = w_input * x;
  pre.colwise() += bias.col(0);
  MatrixX<Scalar> zr = pre.topRows(2 * hd) + w_hidden.topRows(2 * hd) * h;
  zr = logistic(zr);
  const auto z = zr.topRows(hd).array();
  const MatrixX<Scalar> rh = zr.bottomRows(hd).cwiseProduct(h);
  const MatrixX<Scalar> cand =
      (pre.bottomRows(hd) + w_hidden.bottomRows(hd) * rh).array().tanh().matrix();
  return ((Scalar(1) - z) * h.array() + z * cand.array()).matrix();
}

/// Depthwise kernel-3 convolution with zero same-padding over a T x D
/// sequence (frames are rows).
template <typename Scalar>
MatrixX<Scalar> depthwise_conv3(const MatrixX<Scalar>& kernel,
                                const MatrixX<Scalar>& bias,
                                const MatrixX<Scalar>& seq) {
  const Eigen::Index steps = seq.rows();
  MatrixX<Scalar> out = seq * kernel.col(1).asDiagonal();
  out.rowwise() += bias.col(0).transpose();
  if (steps > 1) {
    out.bottomRows(steps - 1) +=
        seq.topRows(steps - 1) * kernel.col(0).asDiagonal();
    out.topRows(steps - 1) +=
        seq.bottomRows(steps - 1) * kernel.col(2).asDiagonal();
  }
  return out;
}

// Differentiable operations.

/// h' = (1 - z) * h + z * h~ built from primitive graph ops. x is D x B,
/// h is H x B.
Value gru_cell_forward(const GruParams& params, const Value& x, const Value& h);

/// Full recurrence over a padded batch as one graph node with an explicit
/// backward-through-time pass. Returns H x (T*B) hidden states; masked
/// steps carry the previous state forward.
Value gru_sequence(const GruParams& params, const Value& frames,
                   const FrameLayout& layout);

/// Depthwise convolution over a padded batch. Invalid frames read as zero.
Value tconv(const TConvParams& params, const Value& frames,
            const FrameLayout& layout);

/// Single-sequence convolution (T x D in, T x D out) for inference.
Matrix tconv_forward(const TConvParams& params, const Matrix& seq);

/// Mean over valid frames: (C x T*B) -> (C x B).
Value masked_mean_pool(const Value& frames, const FrameLayout& layout);

/// W x + b with column-batched x.
Value linear(const Value& weight, const Value& bias, const Value& x);

}  // namespace emo::nn
