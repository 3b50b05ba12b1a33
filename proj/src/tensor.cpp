#include "dyncap/tensor.hpp"

#include <algorithm>
#include <cmath>
#include <sstream>
#include <unordered_set>

namespace dyncap {

std::string shape_str(const Shape& shape) {
  std::ostringstream os;
  os << "[";
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i) os << "x";
    os << shape[i];
  }
  os << "]";
  return os.str();
}

std::int64_t shape_numel(const Shape& shape) {
  std::int64_t n = 1;
  for (auto d : shape) n *= d;
  return n;
}

namespace detail {

NodePtr make_leaf(Shape shape, std::vector<double> value, bool requires_grad) {
  auto n = std::make_shared<Node>();
  n->shape = std::move(shape);
  n->value = std::move(value);
  n->requires_grad = requires_grad;
  n->op = "leaf";
  return n;
}

NodePtr make_op(const char* op, Shape shape, std::vector<double> value,
                std::vector<NodePtr> parents, std::function<void(Node&)> backprop) {
  auto n = std::make_shared<Node>();
  n->shape = std::move(shape);
  n->value = std::move(value);
  n->op = op;
  n->parents = std::move(parents);
  for (const auto& p : n->parents) {
    if (p->requires_grad) {
      n->requires_grad = true;
      break;
    }
  }
  if (n->requires_grad) n->backprop = std::move(backprop);
  return n;
}

}  // namespace detail

using detail::Node;
using detail::NodePtr;

// ---------------------------------------------------------------------------
// Tensor handle

Tensor Tensor::zeros(Shape shape, bool requires_grad) {
  const auto n = shape_numel(shape);
  if (n < 0) throw TensorError("zeros: negative extent in shape " + shape_str(shape));
  return Tensor(detail::make_leaf(std::move(shape), std::vector<double>(static_cast<std::size_t>(n), 0.0), requires_grad));
}

Tensor Tensor::full(Shape shape, double v, bool requires_grad) {
  const auto n = shape_numel(shape);
  if (n < 0) throw TensorError("full: negative extent in shape " + shape_str(shape));
  return Tensor(detail::make_leaf(std::move(shape), std::vector<double>(static_cast<std::size_t>(n), v), requires_grad));
}

Tensor Tensor::from_data(Shape shape, std::vector<double> data, bool requires_grad) {
  const auto n = shape_numel(shape);
  if (n != static_cast<std::int64_t>(data.size())) {
    throw TensorError("from_data: shape " + shape_str(shape) + " expects " + std::to_string(n) +
                      " values, got " + std::to_string(data.size()));
  }
  return Tensor(detail::make_leaf(std::move(shape), std::move(data), requires_grad));
}

Tensor Tensor::scalar(double v) {
  return Tensor(detail::make_leaf(Shape{}, std::vector<double>{v}, false));
}

static const Node& deref(const Tensor& t, const char* where) {
  if (!t.defined()) throw TensorError(std::string(where) + ": undefined tensor");
  return *t.node();
}

const Shape& Tensor::shape() const { return deref(*this, "shape").shape; }
std::int64_t Tensor::numel() const { return deref(*this, "numel").numel(); }
int Tensor::rank() const { return static_cast<int>(shape().size()); }
std::int64_t Tensor::dim(int i) const { return shape().at(static_cast<std::size_t>(i)); }
bool Tensor::requires_grad() const { return deref(*this, "requires_grad").requires_grad; }
const char* Tensor::op_name() const { return deref(*this, "op_name").op; }

const std::vector<double>& Tensor::data() const { return deref(*this, "data").value; }

std::vector<double>& Tensor::mutable_data() {
  Node& n = *node_;
  if (!defined()) throw TensorError("mutable_data: undefined tensor");
  if (n.backprop || !n.parents.empty()) {
    throw TensorError("mutable_data: only leaf tensors may be mutated in place");
  }
  return n.value;
}

double Tensor::item() const {
  const Node& n = deref(*this, "item");
  if (n.numel() != 1) throw TensorError("item: tensor of shape " + shape_str(n.shape) + " is not scalar");
  return n.value[0];
}

bool Tensor::has_grad() const { return defined() && !node_->grad.empty(); }

const std::vector<double>& Tensor::grad() const {
  const Node& n = deref(*this, "grad");
  if (n.grad.empty()) throw TensorError("grad: no gradient present (run backward first)");
  return n.grad;
}

void Tensor::zero_grad() {
  Node& n = *node_;
  if (!defined()) throw TensorError("zero_grad: undefined tensor");
  std::fill(n.grad.begin(), n.grad.end(), 0.0);
  n.backward_root_used = false;
}

Tensor Tensor::detach() const {
  const Node& n = deref(*this, "detach");
  return Tensor(detail::make_leaf(n.shape, n.value, false));
}

// ---------------------------------------------------------------------------
// Elementwise with leading-batch broadcast

namespace {

enum class Broadcast { kNone, kBOverA, kAOverB };

bool suffix_matches(const Shape& big, const Shape& small) {
  if (big.size() != small.size() + 1) return false;
  for (std::size_t i = 0; i < small.size(); ++i) {
    if (big[i + 1] != small[i]) return false;
  }
  return true;
}

Broadcast classify_broadcast(const char* op, const Shape& a, const Shape& b) {
  if (a == b) return Broadcast::kNone;
  if (suffix_matches(a, b)) return Broadcast::kBOverA;
  if (suffix_matches(b, a)) return Broadcast::kAOverB;
  throw TensorError(std::string(op) + ": shape mismatch between " + shape_str(a) + " and " + shape_str(b));
}

enum class EwKind { kAdd, kSub, kMul };

Tensor elementwise(const char* opname, EwKind kind, const Tensor& a, const Tensor& b) {
  const Node& na = deref(a, opname);
  const Node& nb = deref(b, opname);
  const Broadcast bc = classify_broadcast(opname, na.shape, nb.shape);

  const Shape& out_shape = (bc == Broadcast::kAOverB) ? nb.shape : na.shape;
  const std::size_t n_out = static_cast<std::size_t>(shape_numel(out_shape));
  const std::size_t n_a = na.value.size();
  const std::size_t n_b = nb.value.size();

  std::vector<double> out(n_out);
  for (std::size_t i = 0; i < n_out; ++i) {
    const double va = na.value[n_a ? i % n_a : 0];
    const double vb = nb.value[n_b ? i % n_b : 0];
    switch (kind) {
      case EwKind::kAdd: out[i] = va + vb; break;
      case EwKind::kSub: out[i] = va - vb; break;
      case EwKind::kMul: out[i] = va * vb; break;
    }
  }

  auto backprop = [kind](Node& self) {
    Node& pa = *self.parents[0];
    Node& pb = *self.parents[1];
    const std::size_t n_a2 = pa.value.size();
    const std::size_t n_b2 = pb.value.size();
    if (pa.requires_grad) pa.ensure_grad();
    if (pb.requires_grad) pb.ensure_grad();
    for (std::size_t i = 0; i < self.grad.size(); ++i) {
      const double g = self.grad[i];
      switch (kind) {
        case EwKind::kAdd:
          if (pa.requires_grad) pa.grad[i % n_a2] += g;
          if (pb.requires_grad) pb.grad[i % n_b2] += g;
          break;
        case EwKind::kSub:
          if (pa.requires_grad) pa.grad[i % n_a2] += g;
          if (pb.requires_grad) pb.grad[i % n_b2] -= g;
          break;
        case EwKind::kMul:
          if (pa.requires_grad) pa.grad[i % n_a2] += g * pb.value[i % n_b2];
          if (pb.requires_grad) pb.grad[i % n_b2] += g * pa.value[i % n_a2];
          break;
      }
    }
  };

  return Tensor::wrap(detail::make_op(opname, out_shape, std::move(out),
                                      {a.handle(), b.handle()}, backprop));
}

}  // namespace

Tensor add(const Tensor& a, const Tensor& b) { return elementwise("add", EwKind::kAdd, a, b); }
Tensor sub(const Tensor& a, const Tensor& b) { return elementwise("sub", EwKind::kSub, a, b); }
Tensor mul(const Tensor& a, const Tensor& b) { return elementwise("mul", EwKind::kMul, a, b); }

Tensor scale(const Tensor& a, double c) {
  const Node& na = deref(a, "scale");
  std::vector<double> out(na.value.size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = na.value[i] * c;
  auto backprop = [c](Node& self) {
    Node& p = *self.parents[0];
    p.ensure_grad();
    for (std::size_t i = 0; i < self.grad.size(); ++i) p.grad[i] += c * self.grad[i];
  };
  return Tensor::wrap(detail::make_op("scale", na.shape, std::move(out), {a.handle()}, backprop));
}

// ---------------------------------------------------------------------------
// matmul / transpose / reshape

Tensor matmul(const Tensor& a, const Tensor& b) {
  const Node& na = deref(a, "matmul");
  const Node& nb = deref(b, "matmul");
  if (na.shape.size() != 2 || nb.shape.size() != 2) {
    throw TensorError("matmul: expects rank-2 operands, got " + shape_str(na.shape) + " and " + shape_str(nb.shape));
  }
  const std::int64_t m = na.shape[0], k = na.shape[1];
  const std::int64_t k2 = nb.shape[0], p = nb.shape[1];
  if (k != k2) {
    throw TensorError("matmul: inner extents disagree: " + shape_str(na.shape) + " vs " + shape_str(nb.shape));
  }

  std::vector<double> out(static_cast<std::size_t>(m * p), 0.0);
  for (std::int64_t i = 0; i < m; ++i) {
    for (std::int64_t j = 0; j < p; ++j) {
      double acc = 0.0;
      for (std::int64_t l = 0; l < k; ++l) {
        acc += na.value[static_cast<std::size_t>(i * k + l)] * nb.value[static_cast<std::size_t>(l * p + j)];
      }
      out[static_cast<std::size_t>(i * p + j)] = acc;
    }
  }

  auto backprop = [m, k, p](Node& self) {
    Node& pa = *self.parents[0];
    Node& pb = *self.parents[1];
    // grad_a = grad_out * b^T ; grad_b = a^T * grad_out
    if (pa.requires_grad) {
      pa.ensure_grad();
      for (std::int64_t i = 0; i < m; ++i) {
        for (std::int64_t l = 0; l < k; ++l) {
          double acc = 0.0;
          for (std::int64_t j = 0; j < p; ++j) {
            acc += self.grad[static_cast<std::size_t>(i * p + j)] * pb.value[static_cast<std::size_t>(l * p + j)];
          }
          pa.grad[static_cast<std::size_t>(i * k + l)] += acc;
        }
      }
    }
    if (pb.requires_grad) {
      pb.ensure_grad();
      for (std::int64_t l = 0; l < k; ++l) {
        for (std::int64_t j = 0; j < p; ++j) {
          double acc = 0.0;
          for (std::int64_t i = 0; i < m; ++i) {
            acc += pa.value[static_cast<std::size_t>(i * k + l)] * self.grad[static_cast<std::size_t>(i * p + j)];
          }
          pb.grad[static_cast<std::size_t>(l * p + j)] += acc;
        }
      }
    }
  };

  return Tensor::wrap(detail::make_op("matmul", Shape{m, p}, std::move(out),
                                      {a.handle(), b.handle()}, backprop));
}

Tensor transpose(const Tensor& a) {
  const Node& na = deref(a, "transpose");
  if (na.shape.size() != 2) throw TensorError("transpose: expects rank-2 tensor, got " + shape_str(na.shape));
  const std::int64_t r = na.shape[0], c = na.shape[1];
  std::vector<double> out(na.value.size());
  for (std::int64_t i = 0; i < r; ++i) {
    for (std::int64_t j = 0; j < c; ++j) {
      out[static_cast<std::size_t>(j * r + i)] = na.value[static_cast<std::size_t>(i * c + j)];
    }
  }
  auto backprop = [r, c](Node& self) {
    Node& p = *self.parents[0];
    p.ensure_grad();
    for (std::int64_t i = 0; i < r; ++i) {
      for (std::int64_t j = 0; j < c; ++j) {
        p.grad[static_cast<std::size_t>(i * c + j)] += self.grad[static_cast<std::size_t>(j * r + i)];
      }
    }
  };
  return Tensor::wrap(detail::make_op("transpose", Shape{c, r}, std::move(out), {a.handle()}, backprop));
}

Tensor reshape(const Tensor& a, Shape new_shape) {
  const Node& na = deref(a, "reshape");
  if (shape_numel(new_shape) != na.numel()) {
    throw TensorError("reshape: cannot view " + shape_str(na.shape) + " as " + shape_str(new_shape));
  }
  auto backprop = [](Node& self) {
    Node& p = *self.parents[0];
    p.ensure_grad();
    for (std::size_t i = 0; i < self.grad.size(); ++i) p.grad[i] += self.grad[i];
  };
  return Tensor::wrap(detail::make_op("reshape", std::move(new_shape), na.value, {a.handle()}, backprop));
}

// ---------------------------------------------------------------------------
// Convolutions

namespace {

void check_conv_common(const char* op, const Node& in, const Node& kernel, const Node& bias,
                       std::int64_t stride, std::int64_t pad) {
  if (in.shape.size() != 4) throw TensorError(std::string(op) + ": input must be rank 4, got " + shape_str(in.shape));
  if (kernel.shape.size() != 4) throw TensorError(std::string(op) + ": kernel must be rank 4, got " + shape_str(kernel.shape));
  if (kernel.shape[2] != kernel.shape[3]) {
    throw TensorError(std::string(op) + ": kernel must be square, got " + shape_str(kernel.shape));
  }
  if (bias.shape.size() != 1) throw TensorError(std::string(op) + ": bias must be rank 1, got " + shape_str(bias.shape));
  if (stride < 1) throw TensorError(std::string(op) + ": stride must be positive");
  if (pad < 0) throw TensorError(std::string(op) + ": pad must be nonnegative");
}

}  // namespace

Tensor conv2d(const Tensor& input, const Tensor& kernel, const Tensor& bias,
              std::int64_t stride, std::int64_t pad) {
  const Node& ni = deref(input, "conv2d");
  const Node& nk = deref(kernel, "conv2d");
  const Node& nb = deref(bias, "conv2d");
  check_conv_common("conv2d", ni, nk, nb, stride, pad);

  const std::int64_t B = ni.shape[0], I = ni.shape[1], H = ni.shape[2], W = ni.shape[3];
  const std::int64_t O = nk.shape[0], KI = nk.shape[1], K = nk.shape[2];
  if (I != KI) {
    throw TensorError("conv2d: input has " + std::to_string(I) + " channels but kernel expects " + std::to_string(KI));
  }
  if (nb.shape[0] != O) {
    throw TensorError("conv2d: bias length " + std::to_string(nb.shape[0]) + " != output channels " + std::to_string(O));
  }
  const std::int64_t HO = (H + 2 * pad - K) / stride + 1;
  const std::int64_t WO = (W + 2 * pad - K) / stride + 1;
  if (H + 2 * pad < K || W + 2 * pad < K || HO <= 0 || WO <= 0) {
    throw TensorError("conv2d: nonpositive output extent for input " + shape_str(ni.shape) +
                      ", kernel " + shape_str(nk.shape) + ", stride " + std::to_string(stride) +
                      ", pad " + std::to_string(pad));
  }

  // Accumulation order is fixed (i, kh, kw innermost) so results are
  // reproducible and comparable against a plain loop reference.
  std::vector<double> out(static_cast<std::size_t>(B * O * HO * WO));
  for (std::int64_t b = 0; b < B; ++b) {
    for (std::int64_t o = 0; o < O; ++o) {
      for (std::int64_t oh = 0; oh < HO; ++oh) {
        for (std::int64_t ow = 0; ow < WO; ++ow) {
          double acc = nb.value[static_cast<std::size_t>(o)];
          for (std::int64_t i = 0; i < I; ++i) {
            for (std::int64_t kh = 0; kh < K; ++kh) {
              const std::int64_t y = oh * stride + kh - pad;
              if (y < 0 || y >= H) continue;
              for (std::int64_t kw = 0; kw < K; ++kw) {
                const std::int64_t x = ow * stride + kw - pad;
                if (x < 0 || x >= W) continue;
                acc += ni.value[static_cast<std::size_t>(((b * I + i) * H + y) * W + x)] *
                       nk.value[static_cast<std::size_t>(((o * I + i) * K + kh) * K + kw)];
              }
            }
          }
          out[static_cast<std::size_t>(((b * O + o) * HO + oh) * WO + ow)] = acc;
        }
      }
    }
  }

  auto backprop = [B, I, H, W, O, K, HO, WO, stride, pad](Node& self) {
    Node& pin = *self.parents[0];
    Node& pker = *self.parents[1];
    Node& pbias = *self.parents[2];
    const bool gi = pin.requires_grad, gk = pker.requires_grad, gb = pbias.requires_grad;
    if (gi) pin.ensure_grad();
    if (gk) pker.ensure_grad();
    if (gb) pbias.ensure_grad();
    for (std::int64_t b = 0; b < B; ++b) {
      for (std::int64_t o = 0; o < O; ++o) {
        for (std::int64_t oh = 0; oh < HO; ++oh) {
          for (std::int64_t ow = 0; ow < WO; ++ow) {
            const double g = self.grad[static_cast<std::size_t>(((b * O + o) * HO + oh) * WO + ow)];
            if (g == 0.0) continue;
            if (gb) pbias.grad[static_cast<std::size_t>(o)] += g;
            for (std::int64_t i = 0; i < I; ++i) {
              for (std::int64_t kh = 0; kh < K; ++kh) {
                const std::int64_t y = oh * stride + kh - pad;
                if (y < 0 || y >= H) continue;
                for (std::int64_t kw = 0; kw < K; ++kw) {
                  const std::int64_t x = ow * stride + kw - pad;
                  if (x < 0 || x >= W) continue;
                  const std::size_t in_at = static_cast<std::size_t>(((b * I + i) * H + y) * W + x);
                  const std::size_t k_at = static_cast<std::size_t>(((o * I + i) * K + kh) * K + kw);
                  if (gi) pin.grad[in_at] += g * pker.value[k_at];
                  if (gk) pker.grad[k_at] += g * pin.value[in_at];
                }
              }
            }
          }
        }
      }
    }
  };

  return Tensor::wrap(detail::make_op("conv2d", Shape{B, O, HO, WO}, std::move(out),
                                      {input.handle(), kernel.handle(), bias.handle()}, backprop));
}

Tensor conv_transpose2d(const Tensor& input, const Tensor& kernel, const Tensor& bias,
                        std::int64_t stride, std::int64_t pad) {
  const Node& ni = deref(input, "conv_transpose2d");
  const Node& nk = deref(kernel, "conv_transpose2d");
  const Node& nb = deref(bias, "conv_transpose2d");
  check_conv_common("conv_transpose2d", ni, nk, nb, stride, pad);

  const std::int64_t B = ni.shape[0], I = ni.shape[1], H = ni.shape[2], W = ni.shape[3];
  const std::int64_t KI = nk.shape[0], O = nk.shape[1], K = nk.shape[2];
  if (I != KI) {
    throw TensorError("conv_transpose2d: input has " + std::to_string(I) +
                      " channels but kernel expects " + std::to_string(KI));
  }
  if (nb.shape[0] != O) {
    throw TensorError("conv_transpose2d: bias length " + std::to_string(nb.shape[0]) +
                      " != output channels " + std::to_string(O));
  }
  const std::int64_t HO = (H - 1) * stride - 2 * pad + K;
  const std::int64_t WO = (W - 1) * stride - 2 * pad + K;
  if (HO <= 0 || WO <= 0) {
    throw TensorError("conv_transpose2d: nonpositive output extent for input " + shape_str(ni.shape));
  }

  std::vector<double> out(static_cast<std::size_t>(B * O * HO * WO));
  for (std::int64_t b = 0; b < B; ++b) {
    for (std::int64_t o = 0; o < O; ++o) {
      const double bv = nb.value[static_cast<std::size_t>(o)];
      for (std::int64_t y = 0; y < HO * WO; ++y) {
        out[static_cast<std::size_t>((b * O + o) * HO * WO + y)] = bv;
      }
    }
  }
  for (std::int64_t b = 0; b < B; ++b) {
    for (std::int64_t i = 0; i < I; ++i) {
      for (std::int64_t h = 0; h < H; ++h) {
        for (std::int64_t w = 0; w < W; ++w) {
          const double v = ni.value[static_cast<std::size_t>(((b * I + i) * H + h) * W + w)];
          for (std::int64_t o = 0; o < O; ++o) {
            for (std::int64_t kh = 0; kh < K; ++kh) {
              const std::int64_t y = h * stride + kh - pad;
              if (y < 0 || y >= HO) continue;
              for (std::int64_t kw = 0; kw < K; ++kw) {
                const std::int64_t x = w * stride + kw - pad;
                if (x < 0 || x >= WO) continue;
                out[static_cast<std::size_t>(((b * O + o) * HO + y) * WO + x)] +=
                    v * nk.value[static_cast<std::size_t>(((i * O + o) * K + kh) * K + kw)];
              }
            }
          }
        }
      }
    }
  }

  auto backprop = [B, I, H, W, O, K, HO, WO, stride, pad](Node& self) {
    Node& pin = *self.parents[0];
    Node& pker = *self.parents[1];
    Node& pbias = *self.parents[2];
    const bool gi = pin.requires_grad, gk = pker.requires_grad, gb = pbias.requires_grad;
    if (gi) pin.ensure_grad();
    if (gk) pker.ensure_grad();
    if (gb) pbias.ensure_grad();
    if (gb) {
      for (std::int64_t b = 0; b < B; ++b) {
        for (std::int64_t o = 0; o < O; ++o) {
          double acc = 0.0;
          for (std::int64_t y = 0; y < HO * WO; ++y) {
            acc += self.grad[static_cast<std::size_t>((b * O + o) * HO * WO + y)];
          }
          pbias.grad[static_cast<std::size_t>(o)] += acc;
        }
      }
    }
    if (gi || gk) {
      for (std::int64_t b = 0; b < B; ++b) {
        for (std::int64_t i = 0; i < I; ++i) {
          for (std::int64_t h = 0; h < H; ++h) {
            for (std::int64_t w = 0; w < W; ++w) {
              const std::size_t in_at = static_cast<std::size_t>(((b * I + i) * H + h) * W + w);
              const double v = pin.value[in_at];
              double in_acc = 0.0;
              for (std::int64_t o = 0; o < O; ++o) {
                for (std::int64_t kh = 0; kh < K; ++kh) {
                  const std::int64_t y = h * stride + kh - pad;
                  if (y < 0 || y >= HO) continue;
                  for (std::int64_t kw = 0; kw < K; ++kw) {
                    const std::int64_t x = w * stride + kw - pad;
                    if (x < 0 || x >= WO) continue;
                    const double g = self.grad[static_cast<std::size_t>(((b * O + o) * HO + y) * WO + x)];
                    const std::size_t k_at = static_cast<std::size_t>(((i * O + o) * K + kh) * K + kw);
                    if (gi) in_acc += g * pker.value[k_at];
                    if (gk) pker.grad[k_at] += g * v;
                  }
                }
              }
              if (gi) pin.grad[in_at] += in_acc;
            }
          }
        }
      }
    }
  };

  return Tensor::wrap(detail::make_op("conv_transpose2d", Shape{B, O, HO, WO}, std::move(out),
                                      {input.handle(), kernel.handle(), bias.handle()}, backprop));
}

// ---------------------------------------------------------------------------
// Activations and reductions

namespace {

Tensor unary_op(const char* opname, const Tensor& x,
                const std::function<double(double)>& fwd,
                std::function<void(Node&)> backprop) {
  const Node& nx = deref(x, opname);
  std::vector<double> out(nx.value.size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = fwd(nx.value[i]);
  return Tensor::wrap(detail::make_op(opname, nx.shape, std::move(out), {x.handle()}, std::move(backprop)));
}

}  // namespace

Tensor leaky_relu(const Tensor& x, double slope) {
  if (slope < 0.0 || slope >= 1.0) throw TensorError("leaky_relu: slope must lie in [0,1)");
  auto backprop = [slope](Node& self) {
    Node& p = *self.parents[0];
    p.ensure_grad();
    for (std::size_t i = 0; i < self.grad.size(); ++i) {
      p.grad[i] += self.grad[i] * (p.value[i] >= 0.0 ? 1.0 : slope);
    }
  };
  return unary_op("leaky_relu", x,
                  [slope](double v) { return v >= 0.0 ? v : slope * v; }, backprop);
}

namespace {
inline double sigmoid_stable(double v) {
  if (v >= 0.0) {
    return 1.0 / (1.0 + std::exp(-v));
  }
  const double e = std::exp(v);
  return e / (1.0 + e);
}
inline double softplus_stable(double v) {
  // log(1+exp(v)) without overflow on either tail.
  return v > 0.0 ? v + std::log1p(std::exp(-v)) : std::log1p(std::exp(v));
}
}  // namespace

Tensor sigmoid(const Tensor& x) {
  auto backprop = [](Node& self) {
    Node& p = *self.parents[0];
    p.ensure_grad();
    for (std::size_t i = 0; i < self.grad.size(); ++i) {
      const double s = self.value[i];
      p.grad[i] += self.grad[i] * s * (1.0 - s);
    }
  };
  return unary_op("sigmoid", x, [](double v) { return sigmoid_stable(v); }, backprop);
}

Tensor softplus(const Tensor& x) {
  auto backprop = [](Node& self) {
    Node& p = *self.parents[0];
    p.ensure_grad();
    for (std::size_t i = 0; i < self.grad.size(); ++i) {
      p.grad[i] += self.grad[i] * sigmoid_stable(p.value[i]);
    }
  };
  return unary_op("softplus", x, [](double v) { return softplus_stable(v); }, backprop);
}

Tensor tanh(const Tensor& x) {
  auto backprop = [](Node& self) {
    Node& p = *self.parents[0];
    p.ensure_grad();
    for (std::size_t i = 0; i < self.grad.size(); ++i) {
      const double t = self.value[i];
      p.grad[i] += self.grad[i] * (1.0 - t * t);
    }
  };
  return unary_op("tanh", x, [](double v) { return std::tanh(v); }, backprop);
}

Tensor mean(const Tensor& x) {
  const Node& nx = deref(x, "mean");
  if (nx.numel() == 0) throw TensorError("mean: empty tensor");
  double acc = 0.0;
  for (double v : nx.value) acc += v;
  const double inv_n = 1.0 / static_cast<double>(nx.numel());
  auto backprop = [inv_n](Node& self) {
    Node& p = *self.parents[0];
    p.ensure_grad();
    const double g = self.grad[0] * inv_n;
    for (std::size_t i = 0; i < p.grad.size(); ++i) p.grad[i] += g;
  };
  return Tensor::wrap(detail::make_op("mean", Shape{}, {acc * inv_n}, {x.handle()}, backprop));
}

Tensor sum(const Tensor& x) {
  const Node& nx = deref(x, "sum");
  double acc = 0.0;
  for (double v : nx.value) acc += v;
  auto backprop = [](Node& self) {
    Node& p = *self.parents[0];
    p.ensure_grad();
    const double g = self.grad[0];
    for (std::size_t i = 0; i < p.grad.size(); ++i) p.grad[i] += g;
  };
  return Tensor::wrap(detail::make_op("sum", Shape{}, {acc}, {x.handle()}, backprop));
}

// ---------------------------------------------------------------------------
// Active-view selection

namespace {

// Extents of the two leading "width" dims and the trailing element count
// shared by both take_block and take_index: rank 1 -> (d0, 1, 1),
// rank 2 -> (d0, d1, 1), rank 4 -> (d0, d1, k*k).
void selection_dims(const char* op, const Shape& s, std::int64_t& d0, std::int64_t& d1, std::int64_t& rest) {
  if (s.size() == 1) {
    d0 = s[0]; d1 = 1; rest = 1;
  } else if (s.size() == 2) {
    d0 = s[0]; d1 = s[1]; rest = 1;
  } else if (s.size() == 4) {
    d0 = s[0]; d1 = s[1]; rest = s[2] * s[3];
  } else {
    throw TensorError(std::string(op) + ": expects rank 1, 2 or 4, got " + shape_str(s));
  }
}

}  // namespace

Tensor take_block(const Tensor& x, std::int64_t n0, std::int64_t n1) {
  const Node& nx = deref(x, "take_block");
  std::int64_t d0, d1, rest;
  selection_dims("take_block", nx.shape, d0, d1, rest);
  const bool has_d1 = nx.shape.size() >= 2;
  if (!has_d1) n1 = 1;
  if (n1 < 0) n1 = d1;
  if (n0 < 1 || n0 > d0 || n1 < 1 || n1 > d1) {
    throw TensorError("take_block: block " + std::to_string(n0) + "x" + std::to_string(n1) +
                      " out of range for " + shape_str(nx.shape));
  }

  Shape out_shape = nx.shape;
  out_shape[0] = n0;
  if (has_d1) out_shape[1] = n1;

  std::vector<double> out(static_cast<std::size_t>(n0 * n1 * rest));
  for (std::int64_t i = 0; i < n0; ++i) {
    for (std::int64_t j = 0; j < n1; ++j) {
      const std::size_t src = static_cast<std::size_t>((i * d1 + j) * rest);
      const std::size_t dst = static_cast<std::size_t>((i * n1 + j) * rest);
      std::copy_n(nx.value.begin() + static_cast<std::ptrdiff_t>(src), rest, out.begin() + static_cast<std::ptrdiff_t>(dst));
    }
  }

  auto backprop = [n0, n1, d1, rest](Node& self) {
    Node& p = *self.parents[0];
    p.ensure_grad();
    for (std::int64_t i = 0; i < n0; ++i) {
      for (std::int64_t j = 0; j < n1; ++j) {
        const std::size_t src = static_cast<std::size_t>((i * n1 + j) * rest);
        const std::size_t dst = static_cast<std::size_t>((i * d1 + j) * rest);
        for (std::int64_t t = 0; t < rest; ++t) {
          p.grad[dst + static_cast<std::size_t>(t)] += self.grad[src + static_cast<std::size_t>(t)];
        }
      }
    }
  };

  return Tensor::wrap(detail::make_op("take_block", std::move(out_shape), std::move(out), {x.handle()}, backprop));
}

Tensor take_index(const Tensor& x, std::vector<std::int64_t> idx0, std::vector<std::int64_t> idx1) {
  const Node& nx = deref(x, "take_index");
  std::int64_t d0, d1, rest;
  selection_dims("take_index", nx.shape, d0, d1, rest);
  const bool has_d1 = nx.shape.size() >= 2;
  if (!has_d1 && !idx1.empty()) {
    throw TensorError("take_index: second index list given for rank-1 tensor " + shape_str(nx.shape));
  }
  if (idx0.empty()) throw TensorError("take_index: first index list is empty");
  for (auto i : idx0) {
    if (i < 0 || i >= d0) {
      throw TensorError("take_index: index " + std::to_string(i) + " out of range for dim 0 of " + shape_str(nx.shape));
    }
  }
  std::vector<std::int64_t> cols = std::move(idx1);
  if (has_d1 && cols.empty()) {
    cols.resize(static_cast<std::size_t>(d1));
    for (std::int64_t j = 0; j < d1; ++j) cols[static_cast<std::size_t>(j)] = j;
  }
  for (auto j : cols) {
    if (j < 0 || j >= d1) {
      throw TensorError("take_index: index " + std::to_string(j) + " out of range for dim 1 of " + shape_str(nx.shape));
    }
  }

  const std::int64_t n0 = static_cast<std::int64_t>(idx0.size());
  const std::int64_t n1 = has_d1 ? static_cast<std::int64_t>(cols.size()) : 1;

  Shape out_shape = nx.shape;
  out_shape[0] = n0;
  if (has_d1) out_shape[1] = n1;

  std::vector<double> out(static_cast<std::size_t>(n0 * n1 * rest));
  for (std::int64_t i = 0; i < n0; ++i) {
    const std::int64_t si = idx0[static_cast<std::size_t>(i)];
    for (std::int64_t j = 0; j < n1; ++j) {
      const std::int64_t sj = has_d1 ? cols[static_cast<std::size_t>(j)] : 0;
      const std::size_t src = static_cast<std::size_t>((si * d1 + sj) * rest);
      const std::size_t dst = static_cast<std::size_t>((i * n1 + j) * rest);
      std::copy_n(nx.value.begin() + static_cast<std::ptrdiff_t>(src), rest, out.begin() + static_cast<std::ptrdiff_t>(dst));
    }
  }

  auto backprop = [idx0, cols, d1, rest, has_d1, n1](Node& self) {
    Node& p = *self.parents[0];
    p.ensure_grad();
    for (std::size_t i = 0; i < idx0.size(); ++i) {
      const std::int64_t si = idx0[i];
      for (std::int64_t j = 0; j < n1; ++j) {
        const std::int64_t sj = has_d1 ? cols[static_cast<std::size_t>(j)] : 0;
        const std::size_t dst = static_cast<std::size_t>((si * d1 + sj) * rest);
        const std::size_t src = static_cast<std::size_t>((static_cast<std::int64_t>(i) * n1 + j) * rest);
        for (std::int64_t t = 0; t < rest; ++t) {
          p.grad[dst + static_cast<std::size_t>(t)] += self.grad[src + static_cast<std::size_t>(t)];
        }
      }
    }
  };

  return Tensor::wrap(detail::make_op("take_index", std::move(out_shape), std::move(out), {x.handle()}, backprop));
}

Tensor scale_grad(const Tensor& x, double factor) {
  const Node& nx = deref(x, "scale_grad");
  auto backprop = [factor](Node& self) {
    Node& p = *self.parents[0];
    p.ensure_grad();
    for (std::size_t i = 0; i < self.grad.size(); ++i) p.grad[i] += factor * self.grad[i];
  };
  return Tensor::wrap(detail::make_op("scale_grad", nx.shape, nx.value, {x.handle()}, backprop));
}

// ---------------------------------------------------------------------------
// Backward sweep

void backward(const Tensor& loss) {
  if (!loss.defined()) throw TensorError("backward: undefined tensor");
  Node* root = loss.node();
  if (root->numel() != 1) {
    throw TensorError("backward: loss must be scalar, got shape " + shape_str(root->shape));
  }
  if (!root->requires_grad) {
    throw TensorError("backward: loss is detached from every gradient-requiring input");
  }
  if (root->backward_root_used) {
    throw TensorError("backward: already ran for this loss; rebuild the graph (or zero_grad) first");
  }

  // Post-order DFS over gradient-requiring ancestors: parents land before
  // their consumers, so the reverse walk visits each op exactly once with
  // its output gradient complete.
  struct Frame {
    Node* n;
    std::size_t next;
  };
  std::vector<Node*> order;
  std::unordered_set<Node*> visited;
  std::vector<Frame> stack;
  stack.push_back({root, 0});
  visited.insert(root);
  while (!stack.empty()) {
    Frame& f = stack.back();
    if (f.next < f.n->parents.size()) {
      Node* p = f.n->parents[f.next++].get();
      if (p->requires_grad && !visited.count(p)) {
        visited.insert(p);
        stack.push_back({p, 0});
      }
    } else {
      order.push_back(f.n);
      stack.pop_back();
    }
  }

  // Op outputs get a fresh gradient each sweep; leaf gradients accumulate
  // across sweeps until zero_grad().
  for (Node* n : order) {
    if (n->backprop) n->grad.assign(n->value.size(), 0.0);
  }
  root->ensure_grad();
  root->grad[0] = 1.0;
  for (auto it = order.rbegin(); it != order.rend(); ++it) {
    Node* n = *it;
    if (n->backprop) n->backprop(*n);
  }
  root->backward_root_used = true;
}

double finite_diff_check(const std::function<Tensor(const Tensor&)>& f,
                         const Tensor& point, double eps) {
  if (eps <= 0.0) throw TensorError("finite_diff_check: eps must be positive");
  const Node& np = deref(point, "finite_diff_check");

  Tensor x = Tensor::from_data(np.shape, np.value, /*requires_grad=*/true);
  Tensor y = f(x);
  if (y.numel() != 1) {
    throw TensorError("finite_diff_check: function output must be scalar, got " + shape_str(y.shape()));
  }
  std::vector<double> analytic(np.value.size(), 0.0);
  if (y.requires_grad()) {
    backward(y);
    if (x.has_grad()) analytic = x.grad();
  }

  double worst = 0.0;
  std::vector<double> probe = np.value;
  for (std::size_t i = 0; i < probe.size(); ++i) {
    const double saved = probe[i];
    probe[i] = saved + eps;
    const double up = f(Tensor::from_data(np.shape, probe, false)).item();
    probe[i] = saved - eps;
    const double down = f(Tensor::from_data(np.shape, probe, false)).item();
    probe[i] = saved;
    const double fd = (up - down) / (2.0 * eps);
    const double denom = std::max({std::fabs(analytic[i]), std::fabs(fd), 1e-8});
    worst = std::max(worst, std::fabs(analytic[i] - fd) / denom);
  }
  return worst;
}

}  // namespace dyncap
