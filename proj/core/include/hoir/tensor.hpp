#pragma once

#include <cstdint>
#include <functional>
#include <memory>
#include <string>
#include <unordered_set>
#include <vector>

#include "hoir/errors.hpp"

namespace hoir {

using Shape = std::vector<int64_t>;

int64_t numel(const Shape& s);
std::string shape_str(const Shape& s);

// Broadcast two shapes under the trailing-axes rule: align from the right,
// extents must match or be 1. Throws ShapeError otherwise.
Shape broadcast_shape(const Shape& a, const Shape& b);

namespace detail {
struct Node;
}

// Dense row-major tensor of 64-bit reals participating in a reverse-mode
// gradient tape. A Tensor is a cheap handle; the underlying value is
// immutable once produced by an op. Leaves created with requires_grad
// accumulate gradients across backward passes until zero_grad().
class Tensor {
 public:
  Tensor() = default;

  static Tensor zeros(Shape shape, bool requires_grad = false);
  static Tensor full(Shape shape, double value, bool requires_grad = false);
  static Tensor scalar(double value, bool requires_grad = false);
  static Tensor from_data(Shape shape, std::vector<double> data,
                          bool requires_grad = false);

  bool defined() const { return node_ != nullptr; }
  const Shape& shape() const;
  int64_t rank() const;
  int64_t size() const;
  const std::vector<double>& data() const;
  // In-place access for optimizer updates; leaves only.
  std::vector<double>& mutable_data();
  bool requires_grad() const;
  bool is_leaf() const;
  // Gradient accumulated so far (all zeros before any backward).
  const std::vector<double>& grad() const;
  void zero_grad();
  // Scalar read; ContractError if size() != 1.
  double value() const;
  double at(int64_t flat_index) const;
  uint64_t id() const;

  // Same values, no gradient participation.
  Tensor detach() const;

  // internal
  explicit Tensor(std::shared_ptr<detail::Node> n) : node_(std::move(n)) {}
  const std::shared_ptr<detail::Node>& node() const { return node_; }

 private:
  std::shared_ptr<detail::Node> node_;
};

// ---- elementwise ops (broadcasting, gradients reduce-summed over
// broadcast axes) ----
Tensor add(const Tensor& a, const Tensor& b);
Tensor sub(const Tensor& a, const Tensor& b);
Tensor mul(const Tensor& a, const Tensor& b);
Tensor divide(const Tensor& a, const Tensor& b);
Tensor minimum(const Tensor& a, const Tensor& b);
Tensor maximum(const Tensor& a, const Tensor& b);

Tensor neg(const Tensor& x);
Tensor exp(const Tensor& x);
Tensor log(const Tensor& x);
Tensor sin(const Tensor& x);
Tensor cos(const Tensor& x);
Tensor abs(const Tensor& x);
Tensor relu(const Tensor& x);
Tensor sigmoid(const Tensor& x);
// x^p elementwise. DomainError for negative base with non-integer exponent.
Tensor pow(const Tensor& x, double p);
// Clamp to [lo, hi] with straight-through gradient.
Tensor clamp_st(const Tensor& x, double lo, double hi);

inline Tensor operator+(const Tensor& a, const Tensor& b) { return add(a, b); }
inline Tensor operator-(const Tensor& a, const Tensor& b) { return sub(a, b); }
inline Tensor operator*(const Tensor& a, const Tensor& b) { return mul(a, b); }
inline Tensor operator/(const Tensor& a, const Tensor& b) { return divide(a, b); }
inline Tensor operator-(const Tensor& a) { return neg(a); }
inline Tensor operator+(const Tensor& a, double b) { return add(a, Tensor::scalar(b)); }
inline Tensor operator+(double a, const Tensor& b) { return add(Tensor::scalar(a), b); }
inline Tensor operator-(const Tensor& a, double b) { return sub(a, Tensor::scalar(b)); }
inline Tensor operator-(double a, const Tensor& b) { return sub(Tensor::scalar(a), b); }
inline Tensor operator*(const Tensor& a, double b) { return mul(a, Tensor::scalar(b)); }
inline Tensor operator*(double a, const Tensor& b) { return mul(Tensor::scalar(a), b); }
inline Tensor operator/(const Tensor& a, double b) { return divide(a, Tensor::scalar(b)); }

// ---- linear algebra ----
// Matrix product over the trailing two axes; leading axes broadcast.
// Both operands must have rank >= 2.
Tensor matmul(const Tensor& a, const Tensor& b);
// Swap the trailing two axes.
Tensor transpose(const Tensor& x);

// ---- shape ops ----
// Insert a new axis of the given extent at `axis`, replicating values.
// The adjoint sums over the inserted axis.
Tensor expand(const Tensor& x, int64_t axis, int64_t extent);
Tensor reshape(const Tensor& x, Shape shape);
Tensor concat(const std::vector<Tensor>& parts, int64_t axis);
// Keep the listed indices along `axis` (gradient scatters back; dropped
// positions get zero).
Tensor index_select(const Tensor& x, int64_t axis,
                    const std::vector<int64_t>& indices);
// Remove `axis` by fixing it at `index`.
Tensor chip(const Tensor& x, int64_t axis, int64_t index);

// ---- reductions and normalizations ----
Tensor reduce_sum(const Tensor& x, int64_t axis);
Tensor reduce_mean(const Tensor& x, int64_t axis);
// Subgradient convention: ties route to the lowest index.
Tensor reduce_max(const Tensor& x, int64_t axis);
Tensor sum_all(const Tensor& x);
Tensor mean_all(const Tensor& x);
// Max-subtracted softmax along `axis`; slices sum to 1.
Tensor softmax_axis(const Tensor& x, int64_t axis);
Tensor log_softmax_axis(const Tensor& x, int64_t axis);

// ---- autodiff driver ----
// Reverse pass from a scalar loss. Every requires_grad leaf below `loss`
// receives its gradient; the tape is single-use and consumed. Returns the
// number of nodes visited.
size_t backward(const Tensor& loss);
// Same, but gradient accumulation into leaves is restricted to ids in
// `leaf_allowlist`. Interior propagation is unaffected.
size_t backward(const Tensor& loss,
                const std::unordered_set<uint64_t>& leaf_allowlist);

// ---- tape inspection ----
struct TapeEntry {
  std::string op;
  std::vector<uint64_t> inputs;
  uint64_t output;
};
using Tape = std::vector<TapeEntry>;
// Topologically ordered record of the graph below `root` (inputs precede
// outputs).
Tape trace(const Tensor& root);

// ---- gradient checking ----
struct GradCheckReport {
  double max_rel_error = 0.0;
  int64_t worst_index = -1;
  int64_t checked = 0;
  // Coordinates where one-sided slopes disagree (kinks, max ties); these
  // are reported but excluded from max_rel_error.
  int64_t skipped_nonsmooth = 0;
};

// Central-difference check of a scalar-valued function at x. The numeric
// side uses only forward evaluations and is independent of the reverse
// pass it validates. Relative error per coordinate is
// |analytic - numeric| / max(1, |analytic|).
GradCheckReport grad_check(const std::function<Tensor(const Tensor&)>& f,
                           const Tensor& x, double h = 1e-5);

}  // namespace hoir
