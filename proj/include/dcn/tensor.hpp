#pragma once

#include <cstddef>
#include <functional>
#include <memory>
#include <span>
#include <string>
#include <vector>

namespace dcn {

using Shape = std::vector<std::size_t>;

std::size_t shape_numel(const Shape& shape);
std::string shape_string(const Shape& shape);

// One value in the dynamic tape. Ops fill `inputs` and `backward` only when
// gradient recording is active and at least one input requires a gradient.
struct Node {
  Shape shape;
  std::vector<double> data;
  std::vector<double> grad;  // empty until something is accumulated
  bool requires_grad = false;
  const char* op = "leaf";
  std::vector<std::shared_ptr<Node>> inputs;
  std::function<void(Node&)> backward;

  // Zero-initialised on first use.
  std::vector<double>& grad_buffer();
};

class Tensor {
 public:
  Tensor() = default;
  explicit Tensor(std::shared_ptr<Node> node);
  Tensor(Shape shape, std::vector<double> data, bool requires_grad = false);

  static Tensor zeros(Shape shape, bool requires_grad = false);
  static Tensor full(Shape shape, double value, bool requires_grad = false);
  static Tensor scalar(double value, bool requires_grad = false);

  bool defined() const { return node_ != nullptr; }
  const Shape& shape() const;
  std::size_t rank() const { return shape().size(); }
  std::size_t extent(std::size_t axis) const;
  std::size_t numel() const;

  std::span<const double> data() const;
  // Writes bypass the tape; only for leaves (parameters, inputs).
  std::span<double> mutable_data();
  double item() const;

  bool requires_grad() const;
  void set_requires_grad(bool value);
  bool has_grad() const;
  std::span<const double> grad() const;
  void zero_grad();

  // Copy of the values with no graph history.
  Tensor detach() const;

  const std::shared_ptr<Node>& node() const { return node_; }

 private:
  std::shared_ptr<Node> node_;
};

// Gradient recording is on by default; the guard turns it off for the
// current thread.
bool grad_enabled();

class NoGradGuard {
 public:
  NoGradGuard();
  ~NoGradGuard();
  NoGradGuard(const NoGradGuard&) = delete;
  NoGradGuard& operator=(const NoGradGuard&) = delete;

 private:
  bool previous_;
};

// Wraps freshly computed values as an op output. `backward` receives the
// output node (its grad is populated) and must accumulate into inputs.
Tensor make_op_result(const char* op, Shape shape, std::vector<double> data,
                      const std::vector<Tensor>& inputs,
                      std::function<void(Node&)> backward);

// Topological view of the recorded operations reachable from a root.
class Graph {
 public:
  explicit Graph(const Tensor& root);

  // Every node appears after all of its recorded inputs.
  std::span<Node* const> order() const { return order_; }

 private:
  std::vector<Node*> order_;
};

// Accumulates d(loss)/d(leaf) into every reachable leaf that requires grad.
void backward(const Tensor& loss);

enum class ElementwiseKind { add, sub, mul, abs, square };

// Binary kinds combine `a` and `b` (equal shapes); unary kinds ignore `b`.
Tensor elementwise(ElementwiseKind kind, const Tensor& a, const Tensor& b);
Tensor elementwise(ElementwiseKind kind, const Tensor& a, double b);

Tensor add(const Tensor& a, const Tensor& b);
Tensor sub(const Tensor& a, const Tensor& b);
Tensor mul(const Tensor& a, const Tensor& b);
Tensor add(const Tensor& a, double b);
Tensor mul(const Tensor& a, double b);
Tensor abs(const Tensor& a);
Tensor square(const Tensor& a);

Tensor sum(const Tensor& a);
Tensor mean(const Tensor& a);

Tensor matmul(const Tensor& a, const Tensor& b);
Tensor transpose(const Tensor& a);

// Sets entries with column > row to -inf.
Tensor causal_mask(const Tensor& w);
// Row-wise softmax; -inf entries map to exactly 0.
Tensor softmax_rows(const Tensor& w);

// Per-channel parametric ReLU; axis 0 of `x` indexes channels.
Tensor prelu(const Tensor& x, const Tensor& slopes);

Tensor reshape(const Tensor& x, Shape shape);
Tensor permute(const Tensor& x, const std::vector<std::size_t>& axes);

// Concatenation along axis 0 of [C_i, ...] tensors with equal trailing dims.
Tensor concat_channels(const std::vector<Tensor>& xs);

}  // namespace dcn
