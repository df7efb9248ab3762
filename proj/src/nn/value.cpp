#include "emo/nn/value.hpp"

#include <stdexcept>
#include <unordered_set>

namespace emo::nn {

namespace {

template <typename Expr>
void accumulate(Node& target, const Expr& delta) {
  if (!target.requires_grad) return;
  target.ensure_grad();
  target.grad += delta;
}

void require_same_shape(const Value& a, const Value& b, const char* op) {
  if (a.rows() != b.rows() || a.cols() != b.cols()) {
    throw std::invalid_argument(std::string(op) + ": shape mismatch (" +
                                std::to_string(a.rows()) + "x" +
                                std::to_string(a.cols()) + " vs " +
                                std::to_string(b.rows()) + "x" +
                                std::to_string(b.cols()) + ")");
  }
}

}  // namespace

double Value::item() const {
  if (size() != 1) throw std::invalid_argument("item() on non-scalar value");
  return node_->data(0, 0);
}

Value parameter(Matrix data) {
  auto node = std::make_shared<Node>();
  node->data = std::move(data);
  node->grad = Matrix::Zero(node->data.rows(), node->data.cols());
  node->requires_grad = true;
  node->op = "param";
  return Value(std::move(node));
}

Value constant(Matrix data) {
  auto node = std::make_shared<Node>();
  node->data = std::move(data);
  node->op = "const";
  return Value(std::move(node));
}

Value make_node(Matrix data, std::vector<NodePtr> parents, const char* op,
                std::function<void(Node&)> backward_fn) {
  auto node = std::make_shared<Node>();
  node->data = std::move(data);
  node->op = op;
  for (const auto& p : parents) node->requires_grad |= p->requires_grad;
  if (node->requires_grad) {
    node->parents = std::move(parents);
    node->backward_fn = std::move(backward_fn);
  }
  return Value(std::move(node));
}

std::vector<Node*> reverse_topological_order(const Value& root) {
  std::vector<Node*> post;
  std::unordered_set<Node*> visited;
  // Iterative post-order DFS; graphs over long sequences are deep.
  std::vector<std::pair<Node*, std::size_t>> stack;
  stack.emplace_back(root.node().get(), 0);
  visited.insert(root.node().get());
  while (!stack.empty()) {
    auto& [node, next] = stack.back();
    if (next < node->parents.size()) {
      Node* child = node->parents[next++].get();
      if (visited.insert(child).second) stack.emplace_back(child, 0);
    } else {
      post.push_back(node);
      stack.pop_back();
    }
  }
  return {post.rbegin(), post.rend()};
}

void backward(const Value& root) {
  if (!root.valid() || root.size() != 1) {
    throw std::invalid_argument("backward: root must be a scalar value");
  }
  const auto order = reverse_topological_order(root);
  for (Node* node : order) {
    if (!node->parents.empty()) {
      node->grad = Matrix::Zero(node->data.rows(), node->data.cols());
    }
  }
  Node& top = *root.node();
  if (!top.requires_grad) return;
  top.ensure_grad();
  top.grad(0, 0) += 1.0;
  for (Node* node : order) {
    if (node->backward_fn) node->backward_fn(*node);
  }
}

Value matmul(const Value& a, const Value& b) {
  if (a.cols() != b.rows()) {
    throw std::invalid_argument("matmul: inner dimensions differ");
  }
  return make_node(a.data() * b.data(), {a.node(), b.node()}, "matmul",
                   [](Node& n) {
                     Node& pa = *n.parents[0];
                     Node& pb = *n.parents[1];
                     accumulate(pa, n.grad * pb.data.transpose());
                     accumulate(pb, pa.data.transpose() * n.grad);
                   });
}

Value add(const Value& a, const Value& b) {
  require_same_shape(a, b, "add");
  return make_node(a.data() + b.data(), {a.node(), b.node()}, "add",
                   [](Node& n) {
                     accumulate(*n.parents[0], n.grad);
                     accumulate(*n.parents[1], n.grad);
                   });
}

Value sub(const Value& a, const Value& b) {
  require_same_shape(a, b, "sub");
  return make_node(a.data() - b.data(), {a.node(), b.node()}, "sub",
                   [](Node& n) {
                     accumulate(*n.parents[0], n.grad);
                     accumulate(*n.parents[1], -n.grad);
                   });
}

Value mul(const Value& a, const Value& b) {
  require_same_shape(a, b, "mul");
  return make_node(a.data().cwiseProduct(b.data()), {a.node(), b.node()},
                   "mul", [](Node& n) {
                     Node& pa = *n.parents[0];
                     Node& pb = *n.parents[1];
                     accumulate(pa, n.grad.cwiseProduct(pb.data));
                     accumulate(pb, n.grad.cwiseProduct(pa.data));
                   });
}

Value scale(const Value& a, double s) {
  return make_node(a.data() * s, {a.node()}, "scale",
                   [s](Node& n) { accumulate(*n.parents[0], n.grad * s); });
}

Value add_bias(const Value& a, const Value& bias) {
  if (bias.cols() != 1 || bias.rows() != a.rows()) {
    throw std::invalid_argument("add_bias: bias must be a column of height " +
                                std::to_string(a.rows()));
  }
  Matrix out = a.data().colwise() + bias.data().col(0);
  return make_node(std::move(out), {a.node(), bias.node()}, "add_bias",
                   [](Node& n) {
                     accumulate(*n.parents[0], n.grad);
                     accumulate(*n.parents[1], n.grad.rowwise().sum());
                   });
}

Value sigmoid(const Value& a) {
  Matrix out = (1.0 + (-a.data().array()).exp()).inverse().matrix();
  return make_node(std::move(out), {a.node()}, "sigmoid", [](Node& n) {
    const auto& s = n.data.array();
    accumulate(*n.parents[0], (n.grad.array() * s * (1.0 - s)).matrix());
  });
}

Value tanh(const Value& a) {
  Matrix out = a.data().array().tanh().matrix();
  return make_node(std::move(out), {a.node()}, "tanh", [](Node& n) {
    const auto& t = n.data.array();
    accumulate(*n.parents[0], (n.grad.array() * (1.0 - t.square())).matrix());
  });
}

Value sum(const Value& a) {
  Matrix out(1, 1);
  out(0, 0) = a.data().sum();
  return make_node(std::move(out), {a.node()}, "sum", [](Node& n) {
    Node& p = *n.parents[0];
    accumulate(p, Matrix::Constant(p.data.rows(), p.data.cols(), n.grad(0, 0)));
  });
}

Value concat_rows(const std::vector<Value>& parts) {
  if (parts.empty()) throw std::invalid_argument("concat_rows: no inputs");
  const Eigen::Index cols = parts.front().cols();
  Eigen::Index rows = 0;
  for (const auto& p : parts) {
    if (p.cols() != cols) {
      throw std::invalid_argument("concat_rows: column counts differ");
    }
    rows += p.rows();
  }
  Matrix out(rows, cols);
  std::vector<NodePtr> parents;
  Eigen::Index offset = 0;
  for (const auto& p : parts) {
    out.middleRows(offset, p.rows()) = p.data();
    offset += p.rows();
    parents.push_back(p.node());
  }
  return make_node(std::move(out), std::move(parents), "concat_rows",
                   [](Node& n) {
                     Eigen::Index off = 0;
                     for (auto& p : n.parents) {
                       const auto r = p->data.rows();
                       accumulate(*p, n.grad.middleRows(off, r));
                       off += r;
                     }
                   });
}

Value slice_rows(const Value& a, Eigen::Index start, Eigen::Index count) {
  if (start < 0 || count < 0 || start + count > a.rows()) {
    throw std::invalid_argument("slice_rows: range out of bounds");
  }
  Matrix out = a.data().middleRows(start, count);
  return make_node(std::move(out), {a.node()}, "slice_rows",
                   [start, count](Node& n) {
                     Node& p = *n.parents[0];
                     if (!p.requires_grad) return;
                     p.ensure_grad();
                     p.grad.middleRows(start, count) += n.grad;
                   });
}

}  // namespace emo::nn
