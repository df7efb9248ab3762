#pragma once

#include <Eigen/Dense>

#include <functional>
#include <memory>
#include <string>
#include <vector>

namespace emo::nn {

using Matrix = Eigen::MatrixXd;
using Vector = Eigen::VectorXd;

struct Node;
using NodePtr = std::shared_ptr<Node>;

/// One vertex of the computation graph. `backward_fn` reads `grad` and
/// accumulates into the parents' `grad`.
struct Node {
  Matrix data;
  Matrix grad;
  std::vector<NodePtr> parents;
  std::function<void(Node&)> backward_fn;
  const char* op = "leaf";
  bool requires_grad = false;

  void ensure_grad() {
    if (grad.rows() != data.rows() || grad.cols() != data.cols()) {
      grad = Matrix::Zero(data.rows(), data.cols());
    }
  }
};

/// Handle to a graph node. Copies share the node.
class Value {
 public:
  Value() = default;
  explicit Value(NodePtr node) : node_(std::move(node)) {}

  const Matrix& data() const { return node_->data; }
  Matrix& mutable_data() { return node_->data; }
  const Matrix& grad() const { return node_->grad; }
  Matrix& mutable_grad() {
    node_->ensure_grad();
    return node_->grad;
  }
  Eigen::Index rows() const { return node_->data.rows(); }
  Eigen::Index cols() const { return node_->data.cols(); }
  Eigen::Index size() const { return node_->data.size(); }
  double item() const;
  const char* op() const { return node_->op; }
  bool requires_grad() const { return node_ && node_->requires_grad; }
  bool valid() const { return static_cast<bool>(node_); }

  void zero_grad() { node_->grad = Matrix::Zero(rows(), cols()); }

  const NodePtr& node() const { return node_; }

 private:
  NodePtr node_;
};

/// Trainable leaf. Gradients accumulate across backward passes until reset.
Value parameter(Matrix data);
/// Leaf that never receives a gradient.
Value constant(Matrix data);

/// Builds an interior node. `backward_fn` is skipped when no parent requires
/// a gradient.
Value make_node(Matrix data, std::vector<NodePtr> parents, const char* op,
                std::function<void(Node&)> backward_fn);

/// Reverse pass from a 1x1 root. Interior gradients are reset first, leaf
/// gradients accumulate. Throws std::invalid_argument for non-scalar roots.
void backward(const Value& root);

/// Nodes reachable from `root` in reverse topological order.
std::vector<Node*> reverse_topological_order(const Value& root);

// Elementwise and linear algebra primitives.
Value matmul(const Value& a, const Value& b);
Value add(const Value& a, const Value& b);
Value sub(const Value& a, const Value& b);
Value mul(const Value& a, const Value& b);
Value scale(const Value& a, double s);
Value add_bias(const Value& a, const Value& bias);
Value sigmoid(const Value& a);
Value tanh(const Value& a);
Value sum(const Value& a);
Value concat_rows(const std::vector<Value>& parts);
Value slice_rows(const Value& a, Eigen::Index start, Eigen::Index count);

}  // namespace emo::nn
