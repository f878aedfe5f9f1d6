#include "dcn/tensor.hpp"

#include <Eigen/Core>

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <sstream>
#include <stdexcept>
#include <unordered_set>
#include <utility>

namespace dcn {

namespace {

using RowMatrix = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using MatrixMap = Eigen::Map<RowMatrix>;
using ConstMatrixMap = Eigen::Map<const RowMatrix>;

thread_local bool g_grad_enabled = true;

void require_same_shape(const char* op, const Tensor& a, const Tensor& b) {
  if (a.shape() != b.shape()) {
    throw std::invalid_argument(std::string(op) + ": shape mismatch " + shape_string(a.shape()) +
                                " vs " + shape_string(b.shape()));
  }
}

void require_defined(const char* op, const Tensor& t) {
  if (!t.defined()) throw std::invalid_argument(std::string(op) + ": undefined tensor");
}

}  // namespace

std::size_t shape_numel(const Shape& shape) {
  return std::accumulate(shape.begin(), shape.end(), std::size_t{1}, std::multiplies<>());
}

std::string shape_string(const Shape& shape) {
  std::ostringstream out;
  out << '[';
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i) out << ", ";
    out << shape[i];
  }
  out << ']';
  return out.str();
}

std::vector<double>& Node::grad_buffer() {
  if (grad.empty()) grad.assign(data.size(), 0.0);
  return grad;
}

Tensor::Tensor(std::shared_ptr<Node> node) : node_(std::move(node)) {}

Tensor::Tensor(Shape shape, std::vector<double> data, bool requires_grad) {
  for (std::size_t e : shape) {
    if (e == 0) throw std::invalid_argument("tensor extents must be positive: " + shape_string(shape));
  }
  if (shape_numel(shape) != data.size()) {
    throw std::invalid_argument("tensor data size " + std::to_string(data.size()) +
                                " does not match shape " + shape_string(shape));
  }
  node_ = std::make_shared<Node>();
  node_->shape = std::move(shape);
  node_->data = std::move(data);
  node_->requires_grad = requires_grad;
}

Tensor Tensor::zeros(Shape shape, bool requires_grad) { return full(std::move(shape), 0.0, requires_grad); }

Tensor Tensor::full(Shape shape, double value, bool requires_grad) {
  const std::size_t n = shape_numel(shape);
  return Tensor(std::move(shape), std::vector<double>(n, value), requires_grad);
}

Tensor Tensor::scalar(double value, bool requires_grad) { return Tensor({1}, {value}, requires_grad); }

const Shape& Tensor::shape() const {
  if (!node_) throw std::logic_error("undefined tensor");
  return node_->shape;
}

std::size_t Tensor::extent(std::size_t axis) const {
  const Shape& s = shape();
  if (axis >= s.size()) {
    throw std::out_of_range("axis " + std::to_string(axis) + " out of range for " + shape_string(s));
  }
  return s[axis];
}

std::size_t Tensor::numel() const { return node_ ? node_->data.size() : 0; }

std::span<const double> Tensor::data() const {
  if (!node_) return {};
  return node_->data;
}

std::span<double> Tensor::mutable_data() {
  if (!node_) return {};
  return node_->data;
}

double Tensor::item() const {
  if (numel() != 1) throw std::logic_error("item() on tensor of shape " + shape_string(shape()));
  return node_->data[0];
}

bool Tensor::requires_grad() const { return node_ && node_->requires_grad; }

void Tensor::set_requires_grad(bool value) {
  if (!node_) throw std::logic_error("undefined tensor");
  node_->requires_grad = value;
}

bool Tensor::has_grad() const { return node_ && !node_->grad.empty(); }

std::span<const double> Tensor::grad() const {
  if (!node_) return {};
  return node_->grad;
}

void Tensor::zero_grad() {
  if (node_) node_->grad.clear();
}

Tensor Tensor::detach() const {
  if (!node_) return {};
  return Tensor(node_->shape, node_->data, false);
}

bool grad_enabled() { return g_grad_enabled; }

NoGradGuard::NoGradGuard() : previous_(g_grad_enabled) { g_grad_enabled = false; }

NoGradGuard::~NoGradGuard() { g_grad_enabled = previous_; }

Tensor make_op_result(const char* op, Shape shape, std::vector<double> data,
                      const std::vector<Tensor>& inputs, std::function<void(Node&)> backward) {
  Tensor out(std::move(shape), std::move(data), false);
  Node& node = *out.node();
  node.op = op;
  if (!g_grad_enabled) return out;
  const bool any = std::any_of(inputs.begin(), inputs.end(),
                               [](const Tensor& t) { return t.requires_grad(); });
  if (!any) return out;
  node.requires_grad = true;
  node.inputs.reserve(inputs.size());
  for (const Tensor& t : inputs) node.inputs.push_back(t.node());
  node.backward = std::move(backward);
  return out;
}

Graph::Graph(const Tensor& root) {
  require_defined("graph", root);
  if (!root.requires_grad()) return;
  std::unordered_set<const Node*> visited;
  // Iterative post-order DFS; a frame holds the node and its next input slot.
  std::vector<std::pair<Node*, std::size_t>> stack;
  stack.emplace_back(root.node().get(), 0);
  visited.insert(root.node().get());
  while (!stack.empty()) {
    auto& [node, next] = stack.back();
    if (next < node->inputs.size()) {
      Node* child = node->inputs[next++].get();
      if (child->requires_grad && visited.insert(child).second) stack.emplace_back(child, 0);
      continue;
    }
    order_.push_back(node);
    stack.pop_back();
  }
}

void backward(const Tensor& loss) {
  require_defined("backward", loss);
  if (loss.numel() != 1) {
    throw std::invalid_argument("backward: loss must be scalar, got shape " + shape_string(loss.shape()));
  }
  if (!loss.requires_grad()) {
    throw std::invalid_argument("backward: loss does not depend on any tensor requiring grad");
  }
  Graph graph(loss);
  auto order = graph.order();
  loss.node()->grad_buffer()[0] += 1.0;
  for (auto it = order.rbegin(); it != order.rend(); ++it) {
    Node* node = *it;
    if (node->backward && !node->grad.empty()) node->backward(*node);
  }
}

Tensor elementwise(ElementwiseKind kind, const Tensor& a, const Tensor& b) {
  require_defined("elementwise", a);
  switch (kind) {
    case ElementwiseKind::abs:
      return abs(a);
    case ElementwiseKind::square:
      return square(a);
    case ElementwiseKind::add:
      return add(a, b);
    case ElementwiseKind::sub:
      return sub(a, b);
    case ElementwiseKind::mul:
      return mul(a, b);
  }
  throw std::invalid_argument("elementwise: unknown kind");
}

Tensor elementwise(ElementwiseKind kind, const Tensor& a, double b) {
  switch (kind) {
    case ElementwiseKind::abs:
      return abs(a);
    case ElementwiseKind::square:
      return square(a);
    case ElementwiseKind::add:
      return add(a, b);
    case ElementwiseKind::sub:
      return add(a, -b);
    case ElementwiseKind::mul:
      return mul(a, b);
  }
  throw std::invalid_argument("elementwise: unknown kind");
}

Tensor add(const Tensor& a, const Tensor& b) {
  require_same_shape("add", a, b);
  std::vector<double> out(a.numel());
  auto x = a.data();
  auto y = b.data();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = x[i] + y[i];
  return make_op_result("add", a.shape(), std::move(out), {a, b}, [](Node& self) {
    for (auto& in : self.inputs) {
      if (!in->requires_grad) continue;
      auto& g = in->grad_buffer();
      for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i];
    }
  });
}

Tensor sub(const Tensor& a, const Tensor& b) {
  require_same_shape("sub", a, b);
  std::vector<double> out(a.numel());
  auto x = a.data();
  auto y = b.data();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = x[i] - y[i];
  return make_op_result("sub", a.shape(), std::move(out), {a, b}, [](Node& self) {
    for (std::size_t k = 0; k < 2; ++k) {
      auto& in = self.inputs[k];
      if (!in->requires_grad) continue;
      const double sign = k == 0 ? 1.0 : -1.0;
      auto& g = in->grad_buffer();
      for (std::size_t i = 0; i < g.size(); ++i) g[i] += sign * self.grad[i];
    }
  });
}

Tensor mul(const Tensor& a, const Tensor& b) {
  require_same_shape("mul", a, b);
  std::vector<double> out(a.numel());
  auto x = a.data();
  auto y = b.data();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = x[i] * y[i];
  return make_op_result("mul", a.shape(), std::move(out), {a, b}, [](Node& self) {
    Node& lhs = *self.inputs[0];
    Node& rhs = *self.inputs[1];
    if (lhs.requires_grad) {
      auto& g = lhs.grad_buffer();
      for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i] * rhs.data[i];
    }
    if (rhs.requires_grad) {
      auto& g = rhs.grad_buffer();
      for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i] * lhs.data[i];
    }
  });
}

Tensor add(const Tensor& a, double b) {
  require_defined("add", a);
  std::vector<double> out(a.data().begin(), a.data().end());
  for (double& v : out) v += b;
  return make_op_result("add_scalar", a.shape(), std::move(out), {a}, [](Node& self) {
    auto& g = self.inputs[0]->grad_buffer();
    for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i];
  });
}

Tensor mul(const Tensor& a, double b) {
  require_defined("mul", a);
  std::vector<double> out(a.data().begin(), a.data().end());
  for (double& v : out) v *= b;
  return make_op_result("mul_scalar", a.shape(), std::move(out), {a}, [b](Node& self) {
    auto& g = self.inputs[0]->grad_buffer();
    for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i] * b;
  });
}

Tensor abs(const Tensor& a) {
  require_defined("abs", a);
  std::vector<double> out(a.numel());
  auto x = a.data();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = std::fabs(x[i]);
  return make_op_result("abs", a.shape(), std::move(out), {a}, [](Node& self) {
    Node& in = *self.inputs[0];
    auto& g = in.grad_buffer();
    for (std::size_t i = 0; i < g.size(); ++i) {
      const double v = in.data[i];
      // subgradient 0 at the kink
      const double slope = v > 0.0 ? 1.0 : (v < 0.0 ? -1.0 : 0.0);
      g[i] += self.grad[i] * slope;
    }
  });
}

Tensor square(const Tensor& a) {
  require_defined("square", a);
  std::vector<double> out(a.numel());
  auto x = a.data();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = x[i] * x[i];
  return make_op_result("square", a.shape(), std::move(out), {a}, [](Node& self) {
    Node& in = *self.inputs[0];
    auto& g = in.grad_buffer();
    for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i] * 2.0 * in.data[i];
  });
}

Tensor sum(const Tensor& a) {
  require_defined("sum", a);
  double total = 0.0;
  for (double v : a.data()) total += v;
  return make_op_result("sum", {1}, {total}, {a}, [](Node& self) {
    auto& g = self.inputs[0]->grad_buffer();
    const double upstream = self.grad[0];
    for (double& v : g) v += upstream;
  });
}

Tensor mean(const Tensor& a) {
  require_defined("mean", a);
  double total = 0.0;
  for (double v : a.data()) total += v;
  const double n = static_cast<double>(a.numel());
  return make_op_result("mean", {1}, {total / n}, {a}, [n](Node& self) {
    auto& g = self.inputs[0]->grad_buffer();
    const double upstream = self.grad[0] / n;
    for (double& v : g) v += upstream;
  });
}

Tensor matmul(const Tensor& a, const Tensor& b) {
  require_defined("matmul", a);
  require_defined("matmul", b);
  if (a.rank() != 2 || b.rank() != 2 || a.extent(1) != b.extent(0)) {
    throw std::invalid_argument("matmul: incompatible shapes " + shape_string(a.shape()) + " x " +
                                shape_string(b.shape()));
  }
  const auto rows = static_cast<Eigen::Index>(a.extent(0));
  const auto inner = static_cast<Eigen::Index>(a.extent(1));
  const auto cols = static_cast<Eigen::Index>(b.extent(1));
  std::vector<double> out(static_cast<std::size_t>(rows * cols));
  MatrixMap(out.data(), rows, cols).noalias() =
      ConstMatrixMap(a.data().data(), rows, inner) * ConstMatrixMap(b.data().data(), inner, cols);
  return make_op_result(
      "matmul", {a.extent(0), b.extent(1)}, std::move(out), {a, b}, [rows, inner, cols](Node& self) {
        Node& lhs = *self.inputs[0];
        Node& rhs = *self.inputs[1];
        ConstMatrixMap upstream(self.grad.data(), rows, cols);
        if (lhs.requires_grad) {
          MatrixMap(lhs.grad_buffer().data(), rows, inner).noalias() +=
              upstream * ConstMatrixMap(rhs.data.data(), inner, cols).transpose();
        }
        if (rhs.requires_grad) {
          MatrixMap(rhs.grad_buffer().data(), inner, cols).noalias() +=
              ConstMatrixMap(lhs.data.data(), rows, inner).transpose() * upstream;
        }
      });
}

Tensor transpose(const Tensor& a) {
  require_defined("transpose", a);
  if (a.rank() != 2) throw std::invalid_argument("transpose: expected 2-D tensor, got " + shape_string(a.shape()));
  return permute(a, {1, 0});
}

Tensor causal_mask(const Tensor& w) {
  require_defined("causal_mask", w);
  if (w.rank() != 2 || w.extent(0) != w.extent(1)) {
    throw std::invalid_argument("causal_mask: expected square matrix, got " + shape_string(w.shape()));
  }
  const std::size_t n = w.extent(0);
  std::vector<double> out(w.data().begin(), w.data().end());
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t j = i + 1; j < n; ++j) out[i * n + j] = -std::numeric_limits<double>::infinity();
  }
  return make_op_result("causal_mask", w.shape(), std::move(out), {w}, [n](Node& self) {
    auto& g = self.inputs[0]->grad_buffer();
    for (std::size_t i = 0; i < n; ++i) {
      for (std::size_t j = 0; j <= i; ++j) g[i * n + j] += self.grad[i * n + j];
    }
  });
}

Tensor softmax_rows(const Tensor& w) {
  require_defined("softmax_rows", w);
  if (w.rank() != 2) throw std::invalid_argument("softmax_rows: expected 2-D tensor, got " + shape_string(w.shape()));
  const std::size_t rows = w.extent(0);
  const std::size_t cols = w.extent(1);
  auto in = w.data();
  std::vector<double> out(in.size());
  for (std::size_t i = 0; i < rows; ++i) {
    const double* row = in.data() + i * cols;
    double* dst = out.data() + i * cols;
    double peak = -std::numeric_limits<double>::infinity();
    for (std::size_t j = 0; j < cols; ++j) peak = std::max(peak, row[j]);
    if (std::isinf(peak) && peak < 0) throw std::domain_error("softmax_rows: empty attention row " + std::to_string(i));
    double total = 0.0;
    for (std::size_t j = 0; j < cols; ++j) {
      dst[j] = std::isinf(row[j]) ? 0.0 : std::exp(row[j] - peak);
      total += dst[j];
    }
    for (std::size_t j = 0; j < cols; ++j) dst[j] /= total;
  }
  return make_op_result("softmax_rows", w.shape(), std::move(out), {w}, [rows, cols](Node& self) {
    auto& g = self.inputs[0]->grad_buffer();
    for (std::size_t i = 0; i < rows; ++i) {
      const double* p = self.data.data() + i * cols;
      const double* up = self.grad.data() + i * cols;
      double dot = 0.0;
      for (std::size_t j = 0; j < cols; ++j) dot += p[j] * up[j];
      for (std::size_t j = 0; j < cols; ++j) g[i * cols + j] += p[j] * (up[j] - dot);
    }
  });
}

Tensor prelu(const Tensor& x, const Tensor& slopes) {
  require_defined("prelu", x);
  require_defined("prelu", slopes);
  if (slopes.rank() != 1 || x.rank() < 1 || slopes.extent(0) != x.extent(0)) {
    throw std::invalid_argument("prelu: need one slope per channel, got slopes " + shape_string(slopes.shape()) +
                                " for input " + shape_string(x.shape()));
  }
  const std::size_t channels = x.extent(0);
  const std::size_t inner = x.numel() / channels;
  auto in = x.data();
  auto a = slopes.data();
  std::vector<double> out(in.size());
  for (std::size_t c = 0; c < channels; ++c) {
    for (std::size_t k = 0; k < inner; ++k) {
      const double v = in[c * inner + k];
      out[c * inner + k] = v >= 0.0 ? v : a[c] * v;
    }
  }
  return make_op_result("prelu", x.shape(), std::move(out), {x, slopes}, [channels, inner](Node& self) {
    Node& input = *self.inputs[0];
    Node& slope = *self.inputs[1];
    if (input.requires_grad) {
      auto& g = input.grad_buffer();
      for (std::size_t c = 0; c < channels; ++c) {
        for (std::size_t k = 0; k < inner; ++k) {
          const std::size_t i = c * inner + k;
          g[i] += self.grad[i] * (input.data[i] >= 0.0 ? 1.0 : slope.data[c]);
        }
      }
    }
    if (slope.requires_grad) {
      auto& g = slope.grad_buffer();
      for (std::size_t c = 0; c < channels; ++c) {
        double acc = 0.0;
        for (std::size_t k = 0; k < inner; ++k) {
          const std::size_t i = c * inner + k;
          if (input.data[i] < 0.0) acc += self.grad[i] * input.data[i];
        }
        g[c] += acc;
      }
    }
  });
}

Tensor reshape(const Tensor& x, Shape shape) {
  require_defined("reshape", x);
  for (std::size_t e : shape) {
    if (e == 0) throw std::invalid_argument("reshape: zero extent in " + shape_string(shape));
  }
  if (shape_numel(shape) != x.numel()) {
    throw std::invalid_argument("reshape: cannot view " + shape_string(x.shape()) + " as " + shape_string(shape));
  }
  std::vector<double> out(x.data().begin(), x.data().end());
  return make_op_result("reshape", std::move(shape), std::move(out), {x}, [](Node& self) {
    auto& g = self.inputs[0]->grad_buffer();
    for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i];
  });
}

Tensor permute(const Tensor& x, const std::vector<std::size_t>& axes) {
  require_defined("permute", x);
  const Shape& in_shape = x.shape();
  const std::size_t rank = in_shape.size();
  std::vector<bool> seen(rank, false);
  if (axes.size() != rank) {
    throw std::invalid_argument("permute: axis order has " + std::to_string(axes.size()) + " entries for rank " +
                                std::to_string(rank));
  }
  for (std::size_t a : axes) {
    if (a >= rank || seen[a]) throw std::invalid_argument("permute: axis order is not a permutation");
    seen[a] = true;
  }
  std::vector<std::size_t> in_strides(rank, 1);
  for (std::size_t i = rank; i-- > 1;) in_strides[i - 1] = in_strides[i] * in_shape[i];
  Shape out_shape(rank);
  for (std::size_t i = 0; i < rank; ++i) out_shape[i] = in_shape[axes[i]];

  // source[k] is the input offset of output element k
  auto source = std::make_shared<std::vector<std::size_t>>(x.numel());
  std::vector<std::size_t> index(rank, 0);
  for (std::size_t k = 0; k < source->size(); ++k) {
    std::size_t offset = 0;
    for (std::size_t i = 0; i < rank; ++i) offset += index[i] * in_strides[axes[i]];
    (*source)[k] = offset;
    for (std::size_t i = rank; i-- > 0;) {
      if (++index[i] < out_shape[i]) break;
      index[i] = 0;
    }
  }
  auto in = x.data();
  std::vector<double> out(in.size());
  for (std::size_t k = 0; k < out.size(); ++k) out[k] = in[(*source)[k]];
  return make_op_result("permute", std::move(out_shape), std::move(out), {x}, [source](Node& self) {
    auto& g = self.inputs[0]->grad_buffer();
    for (std::size_t k = 0; k < source->size(); ++k) g[(*source)[k]] += self.grad[k];
  });
}

Tensor concat_channels(const std::vector<Tensor>& xs) {
  if (xs.empty()) throw std::invalid_argument("concat_channels: no inputs");
  for (const Tensor& t : xs) require_defined("concat_channels", t);
  const Shape& first = xs.front().shape();
  if (first.empty()) throw std::invalid_argument("concat_channels: rank-0 input");
  Shape out_shape = first;
  out_shape[0] = 0;
  for (const Tensor& t : xs) {
    const Shape& s = t.shape();
    if (s.size() != first.size() || !std::equal(s.begin() + 1, s.end(), first.begin() + 1)) {
      throw std::invalid_argument("concat_channels: trailing dims differ, " + shape_string(first) + " vs " +
                                  shape_string(s));
    }
    out_shape[0] += s[0];
  }
  std::vector<double> out;
  out.reserve(shape_numel(out_shape));
  for (const Tensor& t : xs) out.insert(out.end(), t.data().begin(), t.data().end());
  return make_op_result("concat_channels", std::move(out_shape), std::move(out), xs, [](Node& self) {
    std::size_t offset = 0;
    for (auto& in : self.inputs) {
      const std::size_t n = in->data.size();
      if (in->requires_grad) {
        auto& g = in->grad_buffer();
        for (std::size_t i = 0; i < n; ++i) g[i] += self.grad[offset + i];
      }
      offset += n;
    }
  });
}

}  // namespace dcn
