#include "emo/nn/layers.hpp"

#include <cmath>
#include <stdexcept>
#include <string>

namespace emo::nn {

namespace {

void check_layout(const Value& frames, const FrameLayout& layout,
                  const char* op) {
  if (layout.steps < 1 || layout.batch < 1) {
    throw std::invalid_argument(std::string(op) + ": empty layout");
  }
  if (frames.cols() != layout.columns()) {
    throw std::invalid_argument(std::string(op) + ": expected " +
                                std::to_string(layout.columns()) +
                                " frame columns, got " +
                                std::to_string(frames.cols()));
  }
  if (layout.mask.rows() != layout.steps || layout.mask.cols() != layout.batch) {
    throw std::invalid_argument(std::string(op) + ": mask shape mismatch");
  }
}

// Zeroes the columns of invalid frames.
Matrix apply_mask(const Matrix& frames, const FrameLayout& layout) {
  Matrix out = frames;
  const Eigen::Index b = layout.batch;
  for (Eigen::Index t = 0; t < layout.steps; ++t) {
    out.middleCols(t * b, b).array().rowwise() *= layout.mask.row(t).array();
  }
  return out;
}

}  // namespace

Matrix scaled_uniform(Eigen::Index rows, Eigen::Index cols,
                      std::mt19937_64& rng) {
  const double bound = std::sqrt(1.0 / static_cast<double>(cols));
  std::uniform_real_distribution<double> dist(-bound, bound);
  Matrix m(rows, cols);
  // Fill in row-major order so the draw sequence does not depend on storage.
  for (Eigen::Index r = 0; r < rows; ++r) {
    for (Eigen::Index c = 0; c < cols; ++c) m(r, c) = dist(rng);
  }
  return m;
}

GruParams make_gru(Eigen::Index input_dim, Eigen::Index hidden_dim,
                   std::mt19937_64& rng) {
  if (input_dim < 1 || hidden_dim < 1) {
    throw std::invalid_argument("make_gru: dimensions must be positive");
  }
  GruParams p;
  p.w_input = parameter(scaled_uniform(3 * hidden_dim, input_dim, rng));
  p.w_hidden = parameter(scaled_uniform(3 * hidden_dim, hidden_dim, rng));
  p.bias = parameter(Matrix::Zero(3 * hidden_dim, 1));
  return p;
}

TConvParams make_tconv(Eigen::Index channels, std::mt19937_64& rng) {
  if (channels < 1) {
    throw std::invalid_argument("make_tconv: channel count must be positive");
  }
  TConvParams p;
  p.kernel = parameter(scaled_uniform(channels, 3, rng));
  p.bias = parameter(Matrix::Zero(channels, 1));
  return p;
}

Value gru_cell_forward(const GruParams& params, const Value& x, const Value& h) {
  const Eigen::Index hd = params.hidden_dim();
  if (x.rows() != params.input_dim() || h.rows() != hd || x.cols() != h.cols()) {
    throw std::invalid_argument("gru_cell_forward: dimension mismatch");
  }
  auto gate_pre = [&](Eigen::Index gate, const Value& recurrent_in) {
    const Value wx = slice_rows(params.w_input, gate * hd, hd);
    const Value wh = slice_rows(params.w_hidden, gate * hd, hd);
    const Value b = slice_rows(params.bias, gate * hd, hd);
    return add_bias(add(matmul(wx, x), matmul(wh, recurrent_in)), b);
  };
  const Value z = sigmoid(gate_pre(0, h));
  const Value r = sigmoid(gate_pre(1, h));
  const Value cand = tanh(gate_pre(2, mul(r, h)));
  // (1 - z) * h + z * cand == h - z * h + z * cand
  return add(sub(h, mul(z, h)), mul(z, cand));
}

namespace {

// tanh through the vectorized exp; Eigen has no packet tanh for double.
template <typename Derived>
auto fast_tanh(const Eigen::MatrixBase<Derived>& a) {
  return (1.0 - 2.0 / ((2.0 * a.array()).exp() + 1.0)).matrix();
}

struct GruTrace {
  Matrix inputs;       // D x TB
  Matrix prev_hidden;  // H x TB
  Matrix reset_hidden; // H x TB, r * h_prev
  Matrix gates;        // 3H x TB: z, r, candidate (post-activation)
};

}  // namespace

Value gru_sequence(const GruParams& params, const Value& frames,
                   const FrameLayout& layout) {
  check_layout(frames, layout, "gru_sequence");
  if (frames.rows() != params.input_dim()) {
    throw std::invalid_argument("gru_sequence: input width " +
                                std::to_string(frames.rows()) + " != " +
                                std::to_string(params.input_dim()));
  }
  const Eigen::Index hd = params.hidden_dim();
  const Eigen::Index b = layout.batch;
  const Matrix& u = params.w_hidden.data();

  auto trace = std::make_shared<GruTrace>();
  trace->inputs = frames.data();
  Matrix pre = params.w_input.data() * trace->inputs;
  pre.colwise() += params.bias.data().col(0);
  trace->prev_hidden.resize(hd, layout.columns());
  trace->reset_hidden.resize(hd, layout.columns());
  trace->gates.resize(3 * hd, layout.columns());

  Matrix out(hd, layout.columns());
  Matrix h = Matrix::Zero(hd, b);
  Matrix zr(2 * hd, b), rh(hd, b), cand(hd, b), next(hd, b);
  for (Eigen::Index t = 0; t < layout.steps; ++t) {
    const Eigen::Index c0 = t * b;
    const auto pre_t = pre.middleCols(c0, b);
    zr.noalias() = u.topRows(2 * hd) * h;
    zr += pre_t.topRows(2 * hd);
    zr = logistic(zr);
    rh = zr.bottomRows(hd).cwiseProduct(h);
    cand.noalias() = u.bottomRows(hd) * rh;
    cand += pre_t.bottomRows(hd);
    cand = fast_tanh(cand);
    const auto z = zr.topRows(hd).array();
    const auto m = layout.mask.row(t).array();
    next = ((1.0 - z) * h.array() + z * cand.array()).matrix();
    next.array().rowwise() *= m;
    next.array() += h.array().rowwise() * (1.0 - m);

    auto gates = trace->gates.middleCols(c0, b);
    gates.topRows(2 * hd) = zr;
    gates.bottomRows(hd) = cand;
    trace->prev_hidden.middleCols(c0, b) = h;
    trace->reset_hidden.middleCols(c0, b) = rh;
    out.middleCols(c0, b) = next;
    h.swap(next);
  }

  return make_node(
      std::move(out),
      {frames.node(), params.w_input.node(), params.w_hidden.node(),
       params.bias.node()},
      "gru_sequence", [trace, layout, hd](Node& n) {
        Node& x_node = *n.parents[0];
        Node& wx_node = *n.parents[1];
        Node& wh_node = *n.parents[2];
        Node& b_node = *n.parents[3];
        const Matrix& u = wh_node.data;
        const Eigen::Index bsz = layout.batch;

        Matrix d_pre(3 * hd, layout.columns());
        Matrix dh = Matrix::Zero(hd, bsz);
        Matrix g(hd, bsz), gm(hd, bsz), d_rh(hd, bsz), next(hd, bsz);
        for (Eigen::Index t = layout.steps - 1; t >= 0; --t) {
          const Eigen::Index c0 = t * bsz;
          const auto gates = trace->gates.middleCols(c0, bsz);
          const auto z = gates.topRows(hd).array();
          const auto r = gates.middleRows(hd, hd).array();
          const auto cand = gates.bottomRows(hd).array();
          const auto hp = trace->prev_hidden.middleCols(c0, bsz).array();
          const auto m = layout.mask.row(t).array();

          g = n.grad.middleCols(c0, bsz) + dh;
          gm = g;
          gm.array().rowwise() *= m;

          auto d = d_pre.middleCols(c0, bsz);
          d.bottomRows(hd) = (gm.array() * z * (1.0 - cand.square())).matrix();
          d_rh.noalias() = u.bottomRows(hd).transpose() * d.bottomRows(hd);
          d.topRows(hd) = (gm.array() * (cand - hp) * z * (1.0 - z)).matrix();
          d.middleRows(hd, hd) = (d_rh.array() * hp * r * (1.0 - r)).matrix();

          next = g;
          next.array().rowwise() *= (1.0 - m);
          next.array() += gm.array() * (1.0 - z) + d_rh.array() * r;
          next.noalias() += u.topRows(2 * hd).transpose() * d.topRows(2 * hd);
          dh.swap(next);
        }

        if (x_node.requires_grad) {
          x_node.ensure_grad();
          x_node.grad.noalias() += wx_node.data.transpose() * d_pre;
        }
        if (wx_node.requires_grad) {
          wx_node.ensure_grad();
          wx_node.grad.noalias() += d_pre * trace->inputs.transpose();
        }
        if (wh_node.requires_grad) {
          wh_node.ensure_grad();
          wh_node.grad.topRows(2 * hd).noalias() +=
              d_pre.topRows(2 * hd) * trace->prev_hidden.transpose();
          wh_node.grad.bottomRows(hd).noalias() +=
              d_pre.bottomRows(hd) * trace->reset_hidden.transpose();
        }
        if (b_node.requires_grad) {
          b_node.ensure_grad();
          b_node.grad += d_pre.rowwise().sum();
        }
      });
}

Value tconv(const TConvParams& params, const Value& frames,
            const FrameLayout& layout) {
  check_layout(frames, layout, "tconv");
  if (frames.rows() != params.channels()) {
    throw std::invalid_argument("tconv: channel count " +
                                std::to_string(frames.rows()) + " != " +
                                std::to_string(params.channels()));
  }
  const Eigen::Index b = layout.batch;
  const Eigen::Index shifted = (layout.steps - 1) * b;
  auto masked = std::make_shared<Matrix>(apply_mask(frames.data(), layout));
  const Matrix& k = params.kernel.data();

  Matrix out = k.col(1).asDiagonal() * (*masked);
  out.colwise() += params.bias.data().col(0);
  if (shifted > 0) {
    out.rightCols(shifted).noalias() +=
        k.col(0).asDiagonal() * masked->leftCols(shifted);
    out.leftCols(shifted).noalias() +=
        k.col(2).asDiagonal() * masked->rightCols(shifted);
  }

  return make_node(
      std::move(out),
      {frames.node(), params.kernel.node(), params.bias.node()}, "tconv",
      [masked, layout, shifted](Node& n) {
        Node& x_node = *n.parents[0];
        Node& k_node = *n.parents[1];
        Node& b_node = *n.parents[2];
        const Matrix& g = n.grad;
        if (k_node.requires_grad) {
          k_node.ensure_grad();
          k_node.grad.col(1) += g.cwiseProduct(*masked).rowwise().sum();
          if (shifted > 0) {
            k_node.grad.col(0) += g.rightCols(shifted)
                                      .cwiseProduct(masked->leftCols(shifted))
                                      .rowwise()
                                      .sum();
            k_node.grad.col(2) += g.leftCols(shifted)
                                      .cwiseProduct(masked->rightCols(shifted))
                                      .rowwise()
                                      .sum();
          }
        }
        if (b_node.requires_grad) {
          b_node.ensure_grad();
          b_node.grad += g.rowwise().sum();
        }
        if (x_node.requires_grad) {
          const Matrix& k = k_node.data;
          Matrix dx = k.col(1).asDiagonal() * g;
          if (shifted > 0) {
            dx.leftCols(shifted).noalias() +=
                k.col(0).asDiagonal() * g.rightCols(shifted);
            dx.rightCols(shifted).noalias() +=
                k.col(2).asDiagonal() * g.leftCols(shifted);
          }
          x_node.ensure_grad();
          x_node.grad += apply_mask(dx, layout);
        }
      });
}

Matrix tconv_forward(const TConvParams& params, const Matrix& seq) {
  if (seq.rows() < 1) throw std::invalid_argument("tconv_forward: empty sequence");
  if (seq.cols() != params.channels()) {
    throw std::invalid_argument("tconv_forward: channel count " +
                                std::to_string(seq.cols()) + " != " +
                                std::to_string(params.channels()));
  }
  return depthwise_conv3<double>(params.kernel.data(), params.bias.data(), seq);
}

Value masked_mean_pool(const Value& frames, const FrameLayout& layout) {
  check_layout(frames, layout, "masked_mean_pool");
  const Eigen::Index b = layout.batch;
  const Eigen::RowVectorXd counts = layout.mask.colwise().sum();
  if ((counts.array() <= 0.0).any()) {
    throw std::invalid_argument("masked_mean_pool: utterance without valid frames");
  }
  Matrix out = Matrix::Zero(frames.rows(), b);
  for (Eigen::Index t = 0; t < layout.steps; ++t) {
    out.array() += frames.data().middleCols(t * b, b).array().rowwise() *
                   layout.mask.row(t).array();
  }
  out.array().rowwise() /= counts.array();
  return make_node(std::move(out), {frames.node()}, "masked_mean_pool",
                   [layout, counts](Node& n) {
                     Node& p = *n.parents[0];
                     if (!p.requires_grad) return;
                     p.ensure_grad();
                     const Eigen::Index bsz = layout.batch;
                     const Eigen::RowVectorXd inv = counts.cwiseInverse();
                     for (Eigen::Index t = 0; t < layout.steps; ++t) {
                       const Eigen::RowVectorXd w =
                           layout.mask.row(t).cwiseProduct(inv);
                       p.grad.middleCols(t * bsz, bsz).array() +=
                           n.grad.array().rowwise() * w.array();
                     }
                   });
}

Value linear(const Value& weight, const Value& bias, const Value& x) {
  return add_bias(matmul(weight, x), bias);
}

}  // namespace emo::nn
