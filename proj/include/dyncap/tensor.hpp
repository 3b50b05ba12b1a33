#pragma once

#include <cstdint>
#include <functional>
#include <memory>
#include <stdexcept>
#include <string>
#include <vector>

namespace dyncap {

class TensorError : public std::runtime_error {
 public:
  explicit TensorError(const std::string& what) : std::runtime_error(what) {}
};

using Shape = std::vector<std::int64_t>;

std::string shape_str(const Shape& shape);
std::int64_t shape_numel(const Shape& shape);

namespace detail {

struct Node;
using NodePtr = std::shared_ptr<Node>;

// One recorded primitive. Nodes form a DAG through `parents`; creation
// order is a topological order by construction, and backward() replays
// the reachable subgraph once in reverse topological order.
struct Node {
  Shape shape;
  std::vector<double> value;
  std::vector<double> grad;  // empty until first needed
  bool requires_grad = false;
  bool backward_root_used = false;
  const char* op = "leaf";
  std::vector<NodePtr> parents;
  // Reads this node's grad and accumulates into the parents' grads.
  std::function<void(Node&)> backprop;

  std::int64_t numel() const { return static_cast<std::int64_t>(value.size()); }
  void ensure_grad() {
    if (grad.empty()) grad.assign(value.size(), 0.0);
  }
};

NodePtr make_leaf(Shape shape, std::vector<double> value, bool requires_grad);
NodePtr make_op(const char* op, Shape shape, std::vector<double> value,
                std::vector<NodePtr> parents, std::function<void(Node&)> backprop);

}  // namespace detail

// Dense row-major 64-bit tensor with an optional gradient slot. Copies are
// shallow handles onto the same node; use detach() for an independent value.
class Tensor {
 public:
  Tensor() = default;

  static Tensor zeros(Shape shape, bool requires_grad = false);
  static Tensor full(Shape shape, double v, bool requires_grad = false);
  static Tensor from_data(Shape shape, std::vector<double> data, bool requires_grad = false);
  static Tensor scalar(double v);

  bool defined() const { return node_ != nullptr; }
  const Shape& shape() const;
  std::int64_t numel() const;
  int rank() const;
  std::int64_t dim(int i) const;
  bool requires_grad() const;
  const char* op_name() const;

  const std::vector<double>& data() const;
  // In-place edits are only allowed on leaves (parameters, constants);
  // op outputs are immutable records.
  std::vector<double>& mutable_data();
  double item() const;

  bool has_grad() const;
  const std::vector<double>& grad() const;
  void zero_grad();

  // Value copy with no graph attached.
  Tensor detach() const;

  detail::Node* node() const { return node_.get(); }
  detail::NodePtr handle() const { return node_; }
  static Tensor wrap(detail::NodePtr n) { return Tensor(std::move(n)); }

 private:
  explicit Tensor(detail::NodePtr n) : node_(std::move(n)) {}
  detail::NodePtr node_;
};

// Elementwise ops. Shapes must match exactly, or one operand may omit the
// leading batch extent of the other and is broadcast across it.
Tensor add(const Tensor& a, const Tensor& b);
Tensor sub(const Tensor& a, const Tensor& b);
Tensor mul(const Tensor& a, const Tensor& b);
inline Tensor operator+(const Tensor& a, const Tensor& b) { return add(a, b); }
inline Tensor operator-(const Tensor& a, const Tensor& b) { return sub(a, b); }
inline Tensor operator*(const Tensor& a, const Tensor& b) { return mul(a, b); }
Tensor scale(const Tensor& a, double c);

Tensor matmul(const Tensor& a, const Tensor& b);
Tensor transpose(const Tensor& a);
Tensor reshape(const Tensor& a, Shape new_shape);

// input [B,I,H,W], kernel [O,I,k,k], bias [O]. H' = (H + 2*pad - k)/stride + 1.
Tensor conv2d(const Tensor& input, const Tensor& kernel, const Tensor& bias,
              std::int64_t stride, std::int64_t pad);
// input [B,I,H,W], kernel [I,O,k,k], bias [O]. H' = (H-1)*stride - 2*pad + k.
Tensor conv_transpose2d(const Tensor& input, const Tensor& kernel, const Tensor& bias,
                        std::int64_t stride, std::int64_t pad);

Tensor leaky_relu(const Tensor& x, double slope);
Tensor sigmoid(const Tensor& x);
Tensor softplus(const Tensor& x);
Tensor tanh(const Tensor& x);
Tensor mean(const Tensor& x);
Tensor sum(const Tensor& x);

// Leading-block view: rank 1 -> x[0:n0]; rank 2 -> x[0:n0,0:n1];
// rank 4 -> x[0:n0,0:n1,:,:]. Gradients scatter back into the block.
Tensor take_block(const Tensor& x, std::int64_t n0, std::int64_t n1 = -1);
// Index view over dim 0 (and dim 1 when idx1 is nonempty). Gradients
// scatter back to the selected entries only.
Tensor take_index(const Tensor& x, std::vector<std::int64_t> idx0,
                  std::vector<std::int64_t> idx1 = {});

// Identity forward, gradient multiplied by `factor` on the way back.
Tensor scale_grad(const Tensor& x, double factor);

// Reverse-mode sweep from a scalar loss. Leaf gradients accumulate until
// zero_grad(); calling backward twice on the same loss node is an error.
void backward(const Tensor& loss);

// Max relative error between the analytic gradient of f at `point` and a
// central finite difference, coordinate-wise, with denominator
// max(|g|, |g_fd|, 1e-8). f must map a tensor to a scalar.
double finite_diff_check(const std::function<Tensor(const Tensor&)>& f,
                         const Tensor& point, double eps = 1e-6);

}  // namespace dyncap
