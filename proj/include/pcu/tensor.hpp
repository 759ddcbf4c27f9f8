#pragma once

#include <cstdint>
#include <functional>
#include <memory>
#include <span>
#include <string>
#include <vector>

namespace pcu {

using Shape = std::vector<int64_t>;

int64_t shape_numel(const Shape& s);
std::string shape_str(const Shape& s);

struct TensorNode;
using NodePtr = std::shared_ptr<TensorNode>;

/// One node of the recorded computation graph. Leaf nodes (parameters,
/// inputs) have no parents and keep their gradient across backward calls;
/// interior nodes get a fresh gradient on every backward pass.
struct TensorNode {
  Shape shape;
  std::vector<double> value;
  std::vector<double> grad;  // same length as value once allocated
  bool requires_grad = false;
  std::vector<NodePtr> parents;
  // Reads this->grad and accumulates into each parent's grad.
  std::function<void(TensorNode&)> backward_fn;

  int64_t numel() const { return static_cast<int64_t>(value.size()); }
  bool is_leaf() const { return !backward_fn; }
  void ensure_grad() {
    if (grad.size() != value.size()) grad.assign(value.size(), 0.0);
  }
};

/// Value-semantics handle onto a graph node. Copies alias the same node.
class Tensor {
 public:
  Tensor() = default;
  Tensor(Shape shape, std::vector<double> data, bool requires_grad = false);
  explicit Tensor(NodePtr node) : node_(std::move(node)) {}

  static Tensor zeros(Shape shape, bool requires_grad = false);
  static Tensor full(Shape shape, double v, bool requires_grad = false);
  static Tensor scalar(double v, bool requires_grad = false);

  bool defined() const { return node_ != nullptr; }
  const Shape& shape() const { return node_->shape; }
  int64_t rank() const { return static_cast<int64_t>(node_->shape.size()); }
  int64_t dim(int axis) const { return node_->shape[axis]; }
  int64_t size() const { return node_->numel(); }

  std::span<const double> data() const { return node_->value; }
  std::span<double> mutable_data() { return node_->value; }
  double operator[](int64_t i) const { return node_->value[i]; }
  double item() const;

  bool requires_grad() const { return node_->requires_grad; }
  void set_requires_grad(bool v) { node_->requires_grad = v; }
  bool has_grad() const { return !node_->grad.empty(); }
  std::span<const double> grad() const { return node_->grad; }
  void zero_grad() {
    if (!node_->grad.empty()) node_->grad.assign(node_->value.size(), 0.0);
  }

  NodePtr node() const { return node_; }

 private:
  NodePtr node_;
};

enum class Reduce { kSum, kMax, kMean };
enum class Combine { kAdd, kConcatLastAxis };

// out[i,j] = sum_k x[i,k] * w[k,j] (+ b[j])
Tensor linear(const Tensor& x, const Tensor& w);
Tensor linear(const Tensor& x, const Tensor& w, const Tensor& b);

Tensor relu(const Tensor& x);

// x: [n, c], idx: n*k row-major entries in [0, n) -> [n, k, c].
Tensor group_gather(const Tensor& x, std::span<const int64_t> idx, int64_t k);

// x: [n, ...], rows: m indices in [0, n) -> [m, ...]. Backward scatter-adds.
Tensor gather_rows(const Tensor& x, std::span<const int64_t> rows);

Tensor reduce(const Tensor& x, int axis, Reduce mode);
Tensor sum_all(const Tensor& x);  // [1]

// kAdd broadcasts where one operand has extent 1 on an axis (same rank);
// any other mismatch is an error. kConcatLastAxis requires equal leading dims.
Tensor combine(const Tensor& a, const Tensor& b, Combine mode);
Tensor add(const Tensor& a, const Tensor& b);
Tensor sub(const Tensor& a, const Tensor& b);
Tensor mul(const Tensor& a, const Tensor& b);  // elementwise, same shape
Tensor scale(const Tensor& x, double s);
Tensor reshape(const Tensor& x, Shape new_shape);

/// Reverse-mode sweep from a scalar root. Leaf gradients accumulate across
/// calls; interior gradients are reset per call.
void backward(const Tensor& loss);

}  // namespace pcu
