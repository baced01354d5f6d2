#include "hoir/tensor.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <cstring>
#include <limits>
#include <sstream>

namespace hoir {

namespace detail {

struct Ctx;

struct Node {
  uint64_t id = 0;
  Shape shape;
  std::vector<double> data;
  std::vector<double> grad;
  bool requires_grad = false;
  bool leaf = true;
  bool consumed = false;
  const char* op = "leaf";
  std::vector<std::shared_ptr<Node>> parents;
  std::function<void(Node&, Ctx&)> backward_fn;

  int64_t size() const { return static_cast<int64_t>(data.size()); }
};

struct Ctx {
  const std::unordered_set<uint64_t>* allow = nullptr;

  bool accepts(const Node& p) const {
    if (!p.requires_grad) return false;
    if (p.leaf && allow != nullptr && allow->count(p.id) == 0) return false;
    return true;
  }

  // Ensure the gradient buffer exists before accumulating into it.
  static std::vector<double>& grad_buf(Node& p) {
    if (p.grad.empty()) p.grad.assign(p.data.size(), 0.0);
    return p.grad;
  }
};

namespace {

std::atomic<uint64_t> g_next_id{1};

std::shared_ptr<Node> make_leaf(Shape shape, std::vector<double> data,
                                bool requires_grad) {
  auto n = std::make_shared<Node>();
  n->id = g_next_id.fetch_add(1, std::memory_order_relaxed);
  n->shape = std::move(shape);
  n->data = std::move(data);
  n->requires_grad = requires_grad;
  n->leaf = true;
  if (requires_grad) n->grad.assign(n->data.size(), 0.0);
  return n;
}

std::shared_ptr<Node> make_op(const char* op, Shape shape,
                              std::vector<double> data,
                              std::vector<std::shared_ptr<Node>> parents,
                              std::function<void(Node&, Ctx&)> backward_fn) {
  auto n = std::make_shared<Node>();
  n->id = g_next_id.fetch_add(1, std::memory_order_relaxed);
  n->shape = std::move(shape);
  n->data = std::move(data);
  n->op = op;
  n->leaf = false;
  n->parents = std::move(parents);
  for (const auto& p : n->parents) {
    if (p->requires_grad) n->requires_grad = true;
  }
  if (n->requires_grad) n->backward_fn = std::move(backward_fn);
  return n;
}

std::vector<int64_t> row_major_strides(const Shape& s) {
  std::vector<int64_t> st(s.size());
  int64_t acc = 1;
  for (int64_t i = static_cast<int64_t>(s.size()) - 1; i >= 0; --i) {
    st[static_cast<size_t>(i)] = acc;
    acc *= s[static_cast<size_t>(i)];
  }
  return st;
}

// Strides of `in` viewed through the broadcast shape `out`: zero where the
// input extent is 1 or the axis was prepended.
std::vector<int64_t> broadcast_strides(const Shape& in, const Shape& out) {
  std::vector<int64_t> st(out.size(), 0);
  auto in_st = row_major_strides(in);
  size_t off = out.size() - in.size();
  for (size_t i = 0; i < in.size(); ++i) {
    if (in[i] != 1) st[off + i] = in_st[i];
  }
  return st;
}

// Odometer over an output shape tracking flat offsets into two inputs.
struct Odometer2 {
  const Shape& out;
  std::vector<int64_t> idx;
  std::vector<int64_t> sa, sb;
  int64_t oa = 0, ob = 0;

  Odometer2(const Shape& out_, std::vector<int64_t> sa_, std::vector<int64_t> sb_)
      : out(out_), idx(out_.size(), 0), sa(std::move(sa_)), sb(std::move(sb_)) {}

  void step() {
    for (int64_t i = static_cast<int64_t>(out.size()) - 1; i >= 0; --i) {
      auto u = static_cast<size_t>(i);
      oa += sa[u];
      ob += sb[u];
      if (++idx[u] < out[u]) return;
      oa -= sa[u] * out[u];
      ob -= sb[u] * out[u];
      idx[u] = 0;
    }
  }
};

void check_axis(const Shape& s, int64_t axis, const char* op) {
  if (axis < 0 || axis >= static_cast<int64_t>(s.size())) {
    throw IndexError(std::string(op) + ": axis " + std::to_string(axis) +
                     " out of range for shape " + shape_str(s));
  }
}

// Factor a shape around one axis: extents before, at, and after it.
void split_axis(const Shape& s, int64_t axis, int64_t& outer, int64_t& extent,
                int64_t& inner) {
  outer = 1;
  inner = 1;
  for (int64_t i = 0; i < axis; ++i) outer *= s[static_cast<size_t>(i)];
  extent = s[static_cast<size_t>(axis)];
  for (size_t i = static_cast<size_t>(axis) + 1; i < s.size(); ++i) inner *= s[i];
}

}  // namespace
}  // namespace detail

using detail::Ctx;
using detail::Node;

int64_t numel(const Shape& s) {
  int64_t n = 1;
  for (auto e : s) n *= e;
  return n;
}

std::string shape_str(const Shape& s) {
  std::ostringstream os;
  os << '(';
  for (size_t i = 0; i < s.size(); ++i) {
    if (i) os << ',';
    os << s[i];
  }
  os << ')';
  return os.str();
}

Shape broadcast_shape(const Shape& a, const Shape& b) {
  size_t r = std::max(a.size(), b.size());
  Shape out(r, 1);
  for (size_t i = 0; i < r; ++i) {
    int64_t ea = i < r - a.size() ? 1 : a[i - (r - a.size())];
    int64_t eb = i < r - b.size() ? 1 : b[i - (r - b.size())];
    if (ea != eb && ea != 1 && eb != 1) {
      throw ShapeError("broadcast: incompatible shapes " + shape_str(a) +
                       " and " + shape_str(b));
    }
    out[i] = std::max(ea, eb);
  }
  return out;
}

// ---- Tensor handle ----

Tensor Tensor::zeros(Shape shape, bool requires_grad) {
  auto n = numel(shape);
  return Tensor(detail::make_leaf(std::move(shape),
                                  std::vector<double>(static_cast<size_t>(n), 0.0),
                                  requires_grad));
}

Tensor Tensor::full(Shape shape, double value, bool requires_grad) {
  auto n = numel(shape);
  return Tensor(detail::make_leaf(
      std::move(shape), std::vector<double>(static_cast<size_t>(n), value),
      requires_grad));
}

Tensor Tensor::scalar(double value, bool requires_grad) {
  return from_data({}, {value}, requires_grad);
}

Tensor Tensor::from_data(Shape shape, std::vector<double> data,
                         bool requires_grad) {
  if (numel(shape) != static_cast<int64_t>(data.size())) {
    throw ShapeError("from_data: shape " + shape_str(shape) + " wants " +
                     std::to_string(numel(shape)) + " values, got " +
                     std::to_string(data.size()));
  }
  return Tensor(detail::make_leaf(std::move(shape), std::move(data),
                                  requires_grad));
}

const Shape& Tensor::shape() const { return node_->shape; }
int64_t Tensor::rank() const { return static_cast<int64_t>(node_->shape.size()); }
int64_t Tensor::size() const { return node_->size(); }
const std::vector<double>& Tensor::data() const { return node_->data; }

std::vector<double>& Tensor::mutable_data() {
  if (!node_->leaf) {
    throw ContractError("mutable_data: only leaf tensors may be updated in place");
  }
  return node_->data;
}

bool Tensor::requires_grad() const { return node_->requires_grad; }
bool Tensor::is_leaf() const { return node_->leaf; }

const std::vector<double>& Tensor::grad() const {
  if (node_->grad.empty()) {
    node_->grad.assign(node_->data.size(), 0.0);
  }
  return node_->grad;
}

void Tensor::zero_grad() {
  std::fill(node_->grad.begin(), node_->grad.end(), 0.0);
}

double Tensor::value() const {
  if (size() != 1) {
    throw ContractError("value: tensor of shape " + shape_str(shape()) +
                        " is not scalar");
  }
  return node_->data[0];
}

double Tensor::at(int64_t flat_index) const {
  if (flat_index < 0 || flat_index >= size()) {
    throw IndexError("at: index " + std::to_string(flat_index) +
                     " out of range for size " + std::to_string(size()));
  }
  return node_->data[static_cast<size_t>(flat_index)];
}

uint64_t Tensor::id() const { return node_->id; }

Tensor Tensor::detach() const {
  return from_data(node_->shape, node_->data, false);
}

// ---- elementwise machinery ----

namespace {

using detail::broadcast_strides;
using detail::make_op;
using detail::Odometer2;

// Binary elementwise op. `fwd(a,b)` computes the value, `dfa`/`dfb` the
// partials w.r.t. each input evaluated at the inputs.
template <class F, class Da, class Db>
Tensor binary_op(const char* name, const Tensor& a, const Tensor& b, F fwd,
                 Da dfa, Db dfb) {
  const auto& as = a.shape();
  const auto& bs = b.shape();
  Shape os;
  try {
    os = broadcast_shape(as, bs);
  } catch (const ShapeError&) {
    throw ShapeError(std::string(name) + ": incompatible shapes " +
                     shape_str(as) + " and " + shape_str(bs));
  }
  int64_t n = numel(os);
  std::vector<double> out(static_cast<size_t>(n));
  const auto& ad = a.data();
  const auto& bd = b.data();

  if (as == bs) {
    for (int64_t i = 0; i < n; ++i) {
      out[static_cast<size_t>(i)] =
          fwd(ad[static_cast<size_t>(i)], bd[static_cast<size_t>(i)]);
    }
  } else if (b.size() == 1) {
    double bv = bd[0];
    for (int64_t i = 0; i < n; ++i)
      out[static_cast<size_t>(i)] = fwd(ad[static_cast<size_t>(i)], bv);
  } else if (a.size() == 1) {
    double av = ad[0];
    for (int64_t i = 0; i < n; ++i)
      out[static_cast<size_t>(i)] = fwd(av, bd[static_cast<size_t>(i)]);
  } else {
    Odometer2 it(os, broadcast_strides(as, os), broadcast_strides(bs, os));
    for (int64_t i = 0; i < n; ++i) {
      out[static_cast<size_t>(i)] = fwd(ad[static_cast<size_t>(it.oa)],
                                        bd[static_cast<size_t>(it.ob)]);
      it.step();
    }
  }

  auto backward = [fwd, dfa, dfb, os](Node& self, Ctx& ctx) {
    Node& pa = *self.parents[0];
    Node& pb = *self.parents[1];
    bool wa = ctx.accepts(pa);
    bool wb = ctx.accepts(pb);
    if (!wa && !wb) return;
    int64_t n = self.size();
    const auto& g = self.grad;
    if (pa.shape == pb.shape) {
      auto* ga = wa ? Ctx::grad_buf(pa).data() : nullptr;
      auto* gb = wb ? Ctx::grad_buf(pb).data() : nullptr;
      for (int64_t i = 0; i < n; ++i) {
        auto u = static_cast<size_t>(i);
        double av = pa.data[u], bv = pb.data[u];
        if (ga) ga[u] += g[u] * dfa(av, bv);
        if (gb) gb[u] += g[u] * dfb(av, bv);
      }
    } else if (pb.data.size() == 1) {
      auto* ga = wa ? Ctx::grad_buf(pa).data() : nullptr;
      auto* gb = wb ? Ctx::grad_buf(pb).data() : nullptr;
      double bv = pb.data[0];
      for (int64_t i = 0; i < n; ++i) {
        auto u = static_cast<size_t>(i);
        double av = pa.data[u];
        if (ga) ga[u] += g[u] * dfa(av, bv);
        if (gb) gb[0] += g[u] * dfb(av, bv);
      }
    } else if (pa.data.size() == 1) {
      auto* ga = wa ? Ctx::grad_buf(pa).data() : nullptr;
      auto* gb = wb ? Ctx::grad_buf(pb).data() : nullptr;
      double av = pa.data[0];
      for (int64_t i = 0; i < n; ++i) {
        auto u = static_cast<size_t>(i);
        double bv = pb.data[u];
        if (ga) ga[0] += g[u] * dfa(av, bv);
        if (gb) gb[u] += g[u] * dfb(av, bv);
      }
    } else {
      Odometer2 it(os, broadcast_strides(pa.shape, os),
                   broadcast_strides(pb.shape, os));
      auto* ga = wa ? Ctx::grad_buf(pa).data() : nullptr;
      auto* gb = wb ? Ctx::grad_buf(pb).data() : nullptr;
      for (int64_t i = 0; i < n; ++i) {
        auto u = static_cast<size_t>(i);
        double av = pa.data[static_cast<size_t>(it.oa)];
        double bv = pb.data[static_cast<size_t>(it.ob)];
        if (ga) ga[static_cast<size_t>(it.oa)] += g[u] * dfa(av, bv);
        if (gb) gb[static_cast<size_t>(it.ob)] += g[u] * dfb(av, bv);
        it.step();
      }
    }
  };

  return Tensor(make_op(name, std::move(os), std::move(out),
                        {a.node(), b.node()}, std::move(backward)));
}

// Unary elementwise op; `dfx` receives the input value.
template <class F, class Dx>
Tensor unary_op(const char* name, const Tensor& x, F fwd, Dx dfx) {
  int64_t n = x.size();
  std::vector<double> out(static_cast<size_t>(n));
  const auto& xd = x.data();
  for (int64_t i = 0; i < n; ++i)
    out[static_cast<size_t>(i)] = fwd(xd[static_cast<size_t>(i)]);

  auto backward = [dfx](Node& self, Ctx& ctx) {
    Node& p = *self.parents[0];
    if (!ctx.accepts(p)) return;
    auto* gp = Ctx::grad_buf(p).data();
    int64_t n = self.size();
    for (int64_t i = 0; i < n; ++i) {
      auto u = static_cast<size_t>(i);
      gp[u] += self.grad[u] * dfx(p.data[u]);
    }
  };
  return Tensor(make_op(name, x.shape(), std::move(out), {x.node()},
                        std::move(backward)));
}

}  // namespace

Tensor add(const Tensor& a, const Tensor& b) {
  return binary_op(
      "add", a, b, [](double x, double y) { return x + y; },
      [](double, double) { return 1.0; }, [](double, double) { return 1.0; });
}

Tensor sub(const Tensor& a, const Tensor& b) {
  return binary_op(
      "sub", a, b, [](double x, double y) { return x - y; },
      [](double, double) { return 1.0; }, [](double, double) { return -1.0; });
}

Tensor mul(const Tensor& a, const Tensor& b) {
  return binary_op(
      "mul", a, b, [](double x, double y) { return x * y; },
      [](double, double y) { return y; }, [](double x, double) { return x; });
}

Tensor divide(const Tensor& a, const Tensor& b) {
  return binary_op(
      "div", a, b, [](double x, double y) { return x / y; },
      [](double, double y) { return 1.0 / y; },
      [](double x, double y) { return -x / (y * y); });
}

Tensor minimum(const Tensor& a, const Tensor& b) {
  return binary_op(
      "min", a, b, [](double x, double y) { return x < y ? x : y; },
      [](double x, double y) { return x <= y ? 1.0 : 0.0; },
      [](double x, double y) { return x <= y ? 0.0 : 1.0; });
}

Tensor maximum(const Tensor& a, const Tensor& b) {
  return binary_op(
      "max", a, b, [](double x, double y) { return x > y ? x : y; },
      [](double x, double y) { return x >= y ? 1.0 : 0.0; },
      [](double x, double y) { return x >= y ? 0.0 : 1.0; });
}

Tensor neg(const Tensor& x) {
  return unary_op(
      "neg", x, [](double v) { return -v; }, [](double) { return -1.0; });
}

Tensor exp(const Tensor& x) {
  return unary_op(
      "exp", x, [](double v) { return std::exp(v); },
      [](double v) { return std::exp(v); });
}

Tensor log(const Tensor& x) {
  return unary_op(
      "log", x, [](double v) { return std::log(v); },
      [](double v) { return 1.0 / v; });
}

Tensor sin(const Tensor& x) {
  return unary_op(
      "sin", x, [](double v) { return std::sin(v); },
      [](double v) { return std::cos(v); });
}

Tensor cos(const Tensor& x) {
  return unary_op(
      "cos", x, [](double v) { return std::cos(v); },
      [](double v) { return -std::sin(v); });
}

Tensor abs(const Tensor& x) {
  return unary_op(
      "abs", x, [](double v) { return std::fabs(v); },
      [](double v) { return v > 0.0 ? 1.0 : (v < 0.0 ? -1.0 : 0.0); });
}

Tensor relu(const Tensor& x) {
  return unary_op(
      "relu", x, [](double v) { return v > 0.0 ? v : 0.0; },
      [](double v) { return v > 0.0 ? 1.0 : 0.0; });
}

Tensor sigmoid(const Tensor& x) {
  auto s = [](double v) {
    return v >= 0.0 ? 1.0 / (1.0 + std::exp(-v))
                    : std::exp(v) / (1.0 + std::exp(v));
  };
  return unary_op("sigmoid", x, s, [s](double v) {
    double y = s(v);
    return y * (1.0 - y);
  });
}

Tensor pow(const Tensor& x, double p) {
  bool integral = std::floor(p) == p;
  if (!integral) {
    for (double v : x.data()) {
      if (v < 0.0) {
        throw DomainError("pow: negative base with non-integer exponent " +
                          std::to_string(p));
      }
    }
  }
  return unary_op(
      "pow", x, [p](double v) { return std::pow(v, p); },
      [p](double v) {
        if (v == 0.0) return p == 1.0 ? 1.0 : (p > 1.0 ? 0.0 : std::pow(v, p - 1.0));
        return p * std::pow(v, p - 1.0);
      });
}

Tensor clamp_st(const Tensor& x, double lo, double hi) {
  return unary_op(
      "clamp_st", x,
      [lo, hi](double v) { return v < lo ? lo : (v > hi ? hi : v); },
      [](double) { return 1.0; });
}

// ---- matmul ----

Tensor matmul(const Tensor& a, const Tensor& b) {
  const auto& as = a.shape();
  const auto& bs = b.shape();
  if (as.size() < 2 || bs.size() < 2) {
    throw ShapeError("matmul: operands must have rank >= 2, got " +
                     shape_str(as) + " and " + shape_str(bs));
  }
  int64_t m = as[as.size() - 2], k = as[as.size() - 1];
  int64_t k2 = bs[bs.size() - 2], n = bs[bs.size() - 1];
  if (k != k2) {
    throw ShapeError("matmul: inner extents differ for shapes " +
                     shape_str(as) + " and " + shape_str(bs));
  }
  Shape abatch(as.begin(), as.end() - 2);
  Shape bbatch(bs.begin(), bs.end() - 2);
  Shape obatch = broadcast_shape(abatch, bbatch);
  Shape os = obatch;
  os.push_back(m);
  os.push_back(n);
  int64_t cells = numel(obatch);
  std::vector<double> out(static_cast<size_t>(cells * m * n), 0.0);

  auto sa = broadcast_strides(abatch, obatch);
  auto sb = broadcast_strides(bbatch, obatch);
  // Batch strides index whole matrices, not scalars.
  const auto& ad = a.data();
  const auto& bd = b.data();
  {
    Odometer2 it(obatch, sa, sb);
    for (int64_t c = 0; c < cells; ++c) {
      const double* A = ad.data() + it.oa * m * k;
      const double* B = bd.data() + it.ob * k * n;
      double* C = out.data() + c * m * n;
      for (int64_t i = 0; i < m; ++i) {
        for (int64_t kk = 0; kk < k; ++kk) {
          double av = A[i * k + kk];
          if (av == 0.0) continue;
          const double* Brow = B + kk * n;
          double* Crow = C + i * n;
          for (int64_t j = 0; j < n; ++j) Crow[j] += av * Brow[j];
        }
      }
      it.step();
    }
  }

  auto backward = [obatch, sa, sb, m, k, n, cells](Node& self, Ctx& ctx) {
    Node& pa = *self.parents[0];
    Node& pb = *self.parents[1];
    bool wa = ctx.accepts(pa);
    bool wb = ctx.accepts(pb);
    if (!wa && !wb) return;
    double* ga = wa ? Ctx::grad_buf(pa).data() : nullptr;
    double* gb = wb ? Ctx::grad_buf(pb).data() : nullptr;
    Odometer2 it(obatch, sa, sb);
    for (int64_t c = 0; c < cells; ++c) {
      const double* A = pa.data.data() + it.oa * m * k;
      const double* B = pb.data.data() + it.ob * k * n;
      const double* G = self.grad.data() + c * m * n;
      if (ga) {
        double* dA = ga + it.oa * m * k;
        for (int64_t i = 0; i < m; ++i) {
          for (int64_t kk = 0; kk < k; ++kk) {
            double s = 0.0;
            const double* Brow = B + kk * n;
            const double* Grow = G + i * n;
            for (int64_t j = 0; j < n; ++j) s += Grow[j] * Brow[j];
            dA[i * k + kk] += s;
          }
        }
      }
      if (gb) {
        double* dB = gb + it.ob * k * n;
        for (int64_t kk = 0; kk < k; ++kk) {
          for (int64_t i = 0; i < m; ++i) {
            double av = A[i * k + kk];
            if (av == 0.0) continue;
            const double* Grow = G + i * n;
            double* dBrow = dB + kk * n;
            for (int64_t j = 0; j < n; ++j) dBrow[j] += av * Grow[j];
          }
        }
      }
      it.step();
    }
  };

  return Tensor(make_op("matmul", std::move(os), std::move(out),
                        {a.node(), b.node()}, std::move(backward)));
}

Tensor transpose(const Tensor& x) {
  const auto& xs = x.shape();
  if (xs.size() < 2) {
    throw ShapeError("transpose: rank >= 2 required, got " + shape_str(xs));
  }
  Shape os = xs;
  std::swap(os[os.size() - 1], os[os.size() - 2]);
  int64_t r = xs[xs.size() - 2], c = xs[xs.size() - 1];
  int64_t cells = x.size() / (r * c);
  std::vector<double> out(static_cast<size_t>(x.size()));
  const auto& xd = x.data();
  for (int64_t b = 0; b < cells; ++b) {
    const double* src = xd.data() + b * r * c;
    double* dst = out.data() + b * r * c;
    for (int64_t i = 0; i < r; ++i)
      for (int64_t j = 0; j < c; ++j) dst[j * r + i] = src[i * c + j];
  }
  auto backward = [r, c, cells](Node& self, Ctx& ctx) {
    Node& p = *self.parents[0];
    if (!ctx.accepts(p)) return;
    double* gp = Ctx::grad_buf(p).data();
    for (int64_t b = 0; b < cells; ++b) {
      const double* g = self.grad.data() + b * r * c;
      double* dst = gp + b * r * c;
      for (int64_t i = 0; i < r; ++i)
        for (int64_t j = 0; j < c; ++j) dst[i * c + j] += g[j * r + i];
    }
  };
  return Tensor(make_op("transpose", std::move(os), std::move(out), {x.node()},
                        std::move(backward)));
}

// ---- shape ops ----

Tensor expand(const Tensor& x, int64_t axis, int64_t extent) {
  const auto& xs = x.shape();
  if (axis < 0 || axis > static_cast<int64_t>(xs.size())) {
    throw IndexError("expand: axis " + std::to_string(axis) +
                     " out of range for shape " + shape_str(xs));
  }
  if (extent < 1) {
    throw ShapeError("expand: extent must be positive, got " +
                     std::to_string(extent));
  }
  Shape os = xs;
  os.insert(os.begin() + axis, extent);
  int64_t before = 1, after = 1;
  for (int64_t i = 0; i < axis; ++i) before *= xs[static_cast<size_t>(i)];
  for (size_t i = static_cast<size_t>(axis); i < xs.size(); ++i) after *= xs[i];

  std::vector<double> out(static_cast<size_t>(before * extent * after));
  const auto& xd = x.data();
  for (int64_t b = 0; b < before; ++b) {
    const double* src = xd.data() + b * after;
    for (int64_t e = 0; e < extent; ++e) {
      std::memcpy(out.data() + (b * extent + e) * after, src,
                  static_cast<size_t>(after) * sizeof(double));
    }
  }
  auto backward = [before, extent, after](Node& self, Ctx& ctx) {
    Node& p = *self.parents[0];
    if (!ctx.accepts(p)) return;
    double* gp = Ctx::grad_buf(p).data();
    for (int64_t b = 0; b < before; ++b) {
      for (int64_t e = 0; e < extent; ++e) {
        const double* g = self.grad.data() + (b * extent + e) * after;
        double* dst = gp + b * after;
        for (int64_t t = 0; t < after; ++t) dst[t] += g[t];
      }
    }
  };
  return Tensor(make_op("expand", std::move(os), std::move(out), {x.node()},
                        std::move(backward)));
}

Tensor reshape(const Tensor& x, Shape shape) {
  if (numel(shape) != x.size()) {
    throw ShapeError("reshape: cannot view " + shape_str(x.shape()) + " as " +
                     shape_str(shape));
  }
  auto backward = [](Node& self, Ctx& ctx) {
    Node& p = *self.parents[0];
    if (!ctx.accepts(p)) return;
    double* gp = Ctx::grad_buf(p).data();
    for (size_t i = 0; i < self.grad.size(); ++i) gp[i] += self.grad[i];
  };
  return Tensor(make_op("reshape", std::move(shape), x.data(), {x.node()},
                        std::move(backward)));
}

Tensor concat(const std::vector<Tensor>& parts, int64_t axis) {
  if (parts.empty()) throw ContractError("concat: no inputs");
  const auto& s0 = parts[0].shape();
  detail::check_axis(s0, axis, "concat");
  int64_t total = 0;
  for (const auto& p : parts) {
    const auto& ps = p.shape();
    if (ps.size() != s0.size()) {
      throw ShapeError("concat: rank mismatch " + shape_str(s0) + " vs " +
                       shape_str(ps));
    }
    for (size_t i = 0; i < ps.size(); ++i) {
      if (static_cast<int64_t>(i) != axis && ps[i] != s0[i]) {
        throw ShapeError("concat: shapes differ off-axis: " + shape_str(s0) +
                         " vs " + shape_str(ps));
      }
    }
    total += ps[static_cast<size_t>(axis)];
  }
  Shape os = s0;
  os[static_cast<size_t>(axis)] = total;
  int64_t outer, extent_unused, inner;
  detail::split_axis(os, axis, outer, extent_unused, inner);

  std::vector<double> out(static_cast<size_t>(numel(os)));
  std::vector<int64_t> extents;
  extents.reserve(parts.size());
  for (const auto& p : parts)
    extents.push_back(p.shape()[static_cast<size_t>(axis)]);

  int64_t off = 0;
  for (size_t pi = 0; pi < parts.size(); ++pi) {
    int64_t e = extents[pi];
    const auto& pd = parts[pi].data();
    for (int64_t o = 0; o < outer; ++o) {
      std::memcpy(out.data() + (o * total + off) * inner,
                  pd.data() + o * e * inner,
                  static_cast<size_t>(e * inner) * sizeof(double));
    }
    off += e;
  }

  std::vector<std::shared_ptr<Node>> pnodes;
  pnodes.reserve(parts.size());
  for (const auto& p : parts) pnodes.push_back(p.node());

  auto backward = [outer, inner, total, extents](Node& self, Ctx& ctx) {
    int64_t off = 0;
    for (size_t pi = 0; pi < self.parents.size(); ++pi) {
      Node& p = *self.parents[pi];
      int64_t e = extents[pi];
      if (ctx.accepts(p)) {
        double* gp = Ctx::grad_buf(p).data();
        for (int64_t o = 0; o < outer; ++o) {
          const double* g = self.grad.data() + (o * total + off) * inner;
          double* dst = gp + o * e * inner;
          for (int64_t t = 0; t < e * inner; ++t) dst[t] += g[t];
        }
      }
      off += e;
    }
  };
  return Tensor(make_op("concat", std::move(os), std::move(out),
                        std::move(pnodes), std::move(backward)));
}

Tensor index_select(const Tensor& x, int64_t axis,
                    const std::vector<int64_t>& indices) {
  const auto& xs = x.shape();
  detail::check_axis(xs, axis, "index_select");
  int64_t outer, extent, inner;
  detail::split_axis(xs, axis, outer, extent, inner);
  for (auto i : indices) {
    if (i < 0 || i >= extent) {
      throw IndexError("index_select: index " + std::to_string(i) +
                       " out of range for extent " + std::to_string(extent));
    }
  }
  Shape os = xs;
  os[static_cast<size_t>(axis)] = static_cast<int64_t>(indices.size());
  std::vector<double> out(static_cast<size_t>(numel(os)));
  const auto& xd = x.data();
  int64_t nsel = static_cast<int64_t>(indices.size());
  for (int64_t o = 0; o < outer; ++o) {
    for (int64_t s = 0; s < nsel; ++s) {
      std::memcpy(out.data() + (o * nsel + s) * inner,
                  xd.data() + (o * extent + indices[static_cast<size_t>(s)]) * inner,
                  static_cast<size_t>(inner) * sizeof(double));
    }
  }
  auto idx = indices;
  auto backward = [outer, extent, inner, idx](Node& self, Ctx& ctx) {
    Node& p = *self.parents[0];
    if (!ctx.accepts(p)) return;
    double* gp = Ctx::grad_buf(p).data();
    int64_t nsel = static_cast<int64_t>(idx.size());
    for (int64_t o = 0; o < outer; ++o) {
      for (int64_t s = 0; s < nsel; ++s) {
        const double* g = self.grad.data() + (o * nsel + s) * inner;
        double* dst = gp + (o * extent + idx[static_cast<size_t>(s)]) * inner;
        for (int64_t t = 0; t < inner; ++t) dst[t] += g[t];
      }
    }
  };
  return Tensor(make_op("index_select", std::move(os), std::move(out),
                        {x.node()}, std::move(backward)));
}

Tensor chip(const Tensor& x, int64_t axis, int64_t index) {
  const auto& xs = x.shape();
  detail::check_axis(xs, axis, "chip");
  int64_t outer, extent, inner;
  detail::split_axis(xs, axis, outer, extent, inner);
  if (index < 0 || index >= extent) {
    throw IndexError("chip: index " + std::to_string(index) +
                     " out of range for extent " + std::to_string(extent));
  }
  Shape os;
  for (size_t i = 0; i < xs.size(); ++i)
    if (static_cast<int64_t>(i) != axis) os.push_back(xs[i]);
  std::vector<double> out(static_cast<size_t>(outer * inner));
  const auto& xd = x.data();
  for (int64_t o = 0; o < outer; ++o) {
    std::memcpy(out.data() + o * inner, xd.data() + (o * extent + index) * inner,
                static_cast<size_t>(inner) * sizeof(double));
  }
  auto backward = [outer, extent, inner, index](Node& self, Ctx& ctx) {
    Node& p = *self.parents[0];
    if (!ctx.accepts(p)) return;
    double* gp = Ctx::grad_buf(p).data();
    for (int64_t o = 0; o < outer; ++o) {
      const double* g = self.grad.data() + o * inner;
      double* dst = gp + (o * extent + index) * inner;
      for (int64_t t = 0; t < inner; ++t) dst[t] += g[t];
    }
  };
  return Tensor(make_op("chip", std::move(os), std::move(out), {x.node()},
                        std::move(backward)));
}

// ---- reductions ----

namespace {

enum class ReduceKind { Sum, Mean, Max };

Tensor reduce_impl(ReduceKind kind, const char* name, const Tensor& x,
                   int64_t axis) {
  const auto& xs = x.shape();
  detail::check_axis(xs, axis, name);
  int64_t outer, extent, inner;
  detail::split_axis(xs, axis, outer, extent, inner);
  Shape os;
  for (size_t i = 0; i < xs.size(); ++i)
    if (static_cast<int64_t>(i) != axis) os.push_back(xs[i]);

  std::vector<double> out(static_cast<size_t>(outer * inner), 0.0);
  std::vector<int64_t> argmax;
  const auto& xd = x.data();
  if (kind == ReduceKind::Max) {
    argmax.assign(static_cast<size_t>(outer * inner), 0);
    for (int64_t o = 0; o < outer; ++o) {
      for (int64_t t = 0; t < inner; ++t) {
        double best = xd[static_cast<size_t>(o * extent * inner + t)];
        int64_t bi = 0;
        for (int64_t e = 1; e < extent; ++e) {
          double v = xd[static_cast<size_t>((o * extent + e) * inner + t)];
          if (v > best) {
            best = v;
            bi = e;
          }
        }
        out[static_cast<size_t>(o * inner + t)] = best;
        argmax[static_cast<size_t>(o * inner + t)] = bi;
      }
    }
  } else {
    for (int64_t o = 0; o < outer; ++o) {
      for (int64_t e = 0; e < extent; ++e) {
        const double* src = xd.data() + (o * extent + e) * inner;
        double* dst = out.data() + o * inner;
        for (int64_t t = 0; t < inner; ++t) dst[t] += src[t];
      }
    }
    if (kind == ReduceKind::Mean) {
      double inv = 1.0 / static_cast<double>(extent);
      for (auto& v : out) v *= inv;
    }
  }

  auto backward = [kind, outer, extent, inner, argmax](Node& self, Ctx& ctx) {
    Node& p = *self.parents[0];
    if (!ctx.accepts(p)) return;
    double* gp = Ctx::grad_buf(p).data();
    double scale = kind == ReduceKind::Mean ? 1.0 / static_cast<double>(extent) : 1.0;
    if (kind == ReduceKind::Max) {
      for (int64_t o = 0; o < outer; ++o) {
        for (int64_t t = 0; t < inner; ++t) {
          int64_t e = argmax[static_cast<size_t>(o * inner + t)];
          gp[(o * extent + e) * inner + t] +=
              self.grad[static_cast<size_t>(o * inner + t)];
        }
      }
    } else {
      for (int64_t o = 0; o < outer; ++o) {
        for (int64_t e = 0; e < extent; ++e) {
          double* dst = gp + (o * extent + e) * inner;
          const double* g = self.grad.data() + o * inner;
          for (int64_t t = 0; t < inner; ++t) dst[t] += g[t] * scale;
        }
      }
    }
  };
  return Tensor(make_op(name, std::move(os), std::move(out), {x.node()},
                        std::move(backward)));
}

}  // namespace

Tensor reduce_sum(const Tensor& x, int64_t axis) {
  return reduce_impl(ReduceKind::Sum, "reduce_sum", x, axis);
}
Tensor reduce_mean(const Tensor& x, int64_t axis) {
  return reduce_impl(ReduceKind::Mean, "reduce_mean", x, axis);
}
Tensor reduce_max(const Tensor& x, int64_t axis) {
  return reduce_impl(ReduceKind::Max, "reduce_max", x, axis);
}

Tensor sum_all(const Tensor& x) {
  double s = 0.0;
  for (double v : x.data()) s += v;
  auto backward = [](Node& self, Ctx& ctx) {
    Node& p = *self.parents[0];
    if (!ctx.accepts(p)) return;
    double* gp = Ctx::grad_buf(p).data();
    double g = self.grad[0];
    for (size_t i = 0; i < p.data.size(); ++i) gp[i] += g;
  };
  return Tensor(make_op("sum_all", {}, {s}, {x.node()}, std::move(backward)));
}

Tensor mean_all(const Tensor& x) {
  if (x.size() == 0) throw ContractError("mean_all: empty tensor");
  double s = 0.0;
  for (double v : x.data()) s += v;
  double inv = 1.0 / static_cast<double>(x.size());
  auto backward = [inv](Node& self, Ctx& ctx) {
    Node& p = *self.parents[0];
    if (!ctx.accepts(p)) return;
    double* gp = Ctx::grad_buf(p).data();
    double g = self.grad[0] * inv;
    for (size_t i = 0; i < p.data.size(); ++i) gp[i] += g;
  };
  return Tensor(make_op("mean_all", {}, {s * inv}, {x.node()},
                        std::move(backward)));
}

namespace {

Tensor softmax_impl(const Tensor& x, int64_t axis, bool log_form) {
  const auto& xs = x.shape();
  detail::check_axis(xs, axis, log_form ? "log_softmax_axis" : "softmax_axis");
  int64_t outer, extent, inner;
  detail::split_axis(xs, axis, outer, extent, inner);
  std::vector<double> out(static_cast<size_t>(x.size()));
  const auto& xd = x.data();
  for (int64_t o = 0; o < outer; ++o) {
    for (int64_t t = 0; t < inner; ++t) {
      double mx = -std::numeric_limits<double>::infinity();
      for (int64_t e = 0; e < extent; ++e) {
        mx = std::max(mx, xd[static_cast<size_t>((o * extent + e) * inner + t)]);
      }
      double z = 0.0;
      for (int64_t e = 0; e < extent; ++e) {
        z += std::exp(xd[static_cast<size_t>((o * extent + e) * inner + t)] - mx);
      }
      if (log_form) {
        double lz = std::log(z);
        for (int64_t e = 0; e < extent; ++e) {
          auto u = static_cast<size_t>((o * extent + e) * inner + t);
          out[u] = xd[u] - mx - lz;
        }
      } else {
        double inv = 1.0 / z;
        for (int64_t e = 0; e < extent; ++e) {
          auto u = static_cast<size_t>((o * extent + e) * inner + t);
          out[u] = std::exp(xd[u] - mx) * inv;
        }
      }
    }
  }

  // Both backward rules need the op's own output, which survives on the node.
  auto backward = [outer, extent, inner, log_form](Node& self, Ctx& ctx) {
    Node& p = *self.parents[0];
    if (!ctx.accepts(p)) return;
    double* gp = Ctx::grad_buf(p).data();
    const auto& y = self.data;
    const auto& g = self.grad;
    for (int64_t o = 0; o < outer; ++o) {
      for (int64_t t = 0; t < inner; ++t) {
        double dot = 0.0;
        for (int64_t e = 0; e < extent; ++e) {
          auto u = static_cast<size_t>((o * extent + e) * inner + t);
          dot += log_form ? g[u] : g[u] * y[u];
        }
        for (int64_t e = 0; e < extent; ++e) {
          auto u = static_cast<size_t>((o * extent + e) * inner + t);
          gp[u] += log_form ? g[u] - std::exp(y[u]) * dot : y[u] * (g[u] - dot);
        }
      }
    }
  };
  return Tensor(make_op(log_form ? "log_softmax" : "softmax", xs,
                        std::move(out), {x.node()}, std::move(backward)));
}

}  // namespace

Tensor softmax_axis(const Tensor& x, int64_t axis) {
  return softmax_impl(x, axis, false);
}

Tensor log_softmax_axis(const Tensor& x, int64_t axis) {
  return softmax_impl(x, axis, true);
}

// ---- backward driver ----

namespace {

std::vector<std::shared_ptr<Node>> collect_reachable(
    const std::shared_ptr<Node>& root) {
  std::vector<std::shared_ptr<Node>> nodes;
  std::unordered_set<uint64_t> seen;
  std::vector<std::shared_ptr<Node>> stack{root};
  seen.insert(root->id);
  while (!stack.empty()) {
    auto n = stack.back();
    stack.pop_back();
    nodes.push_back(n);
    for (const auto& p : n->parents) {
      if (p->requires_grad && seen.insert(p->id).second) stack.push_back(p);
    }
  }
  return nodes;
}

size_t backward_impl(const Tensor& loss,
                     const std::unordered_set<uint64_t>* allow) {
  if (!loss.defined()) throw ContractError("backward: undefined tensor");
  if (loss.size() != 1) {
    throw ContractError("backward: loss must be scalar, got shape " +
                        shape_str(loss.shape()));
  }
  auto root = loss.node();
  if (root->consumed) {
    throw ContractError("backward: tape already consumed for this graph");
  }
  if (!root->requires_grad) return 0;

  auto nodes = collect_reachable(root);
  // Node ids increase in creation order, so descending id order is a
  // valid reverse-topological order.
  std::sort(nodes.begin(), nodes.end(),
            [](const auto& a, const auto& b) { return a->id > b->id; });

  Ctx ctx;
  ctx.allow = allow;
  Ctx::grad_buf(*root)[0] += 1.0;

  size_t visited = 0;
  for (auto& n : nodes) {
    if (n->backward_fn) {
      n->backward_fn(*n, ctx);
      ++visited;
    }
    n->consumed = true;
    // The tape is single-use: release the closure and the graph edges.
    n->backward_fn = nullptr;
    if (!n->leaf) n->parents.clear();
  }
  return visited;
}

}  // namespace

size_t backward(const Tensor& loss) { return backward_impl(loss, nullptr); }

size_t backward(const Tensor& loss,
                const std::unordered_set<uint64_t>& leaf_allowlist) {
  return backward_impl(loss, &leaf_allowlist);
}

Tape trace(const Tensor& root) {
  std::vector<std::shared_ptr<Node>> nodes;
  std::unordered_set<uint64_t> seen;
  std::vector<std::shared_ptr<Node>> stack{root.node()};
  seen.insert(root.node()->id);
  while (!stack.empty()) {
    auto n = stack.back();
    stack.pop_back();
    nodes.push_back(n);
    for (const auto& p : n->parents) {
      if (seen.insert(p->id).second) stack.push_back(p);
    }
  }
  std::sort(nodes.begin(), nodes.end(),
            [](const auto& a, const auto& b) { return a->id < b->id; });
  Tape tape;
  tape.reserve(nodes.size());
  for (const auto& n : nodes) {
    TapeEntry e;
    e.op = n->op;
    e.output = n->id;
    for (const auto& p : n->parents) e.inputs.push_back(p->id);
    tape.push_back(std::move(e));
  }
  return tape;
}

// ---- gradient check ----

GradCheckReport grad_check(const std::function<Tensor(const Tensor&)>& f,
                           const Tensor& x, double h) {
  Tensor leaf = Tensor::from_data(x.shape(), x.data(), true);
  Tensor y = f(leaf);
  if (y.size() != 1) {
    throw ContractError("grad_check: f must return a scalar");
  }
  if (!std::isfinite(y.value())) {
    throw NumericError("grad_check: f(x) is not finite");
  }
  backward(y);
  std::vector<double> analytic = leaf.grad();

  auto eval = [&](const std::vector<double>& d) {
    Tensor t = Tensor::from_data(x.shape(), d, false);
    double v = f(t).value();
    if (!std::isfinite(v)) {
      throw NumericError("grad_check: non-finite evaluation");
    }
    return v;
  };

  std::vector<double> base = x.data();
  double f0 = eval(base);

  GradCheckReport report;
  for (size_t i = 0; i < base.size(); ++i) {
    double saved = base[i];
    base[i] = saved + h;
    double fp = eval(base);
    base[i] = saved - h;
    double fm = eval(base);
    base[i] = saved;

    double fwd = (fp - f0) / h;
    double bwd = (f0 - fm) / h;
    double central = (fp - fm) / (2.0 * h);
    // One-sided slopes that disagree mark a kink (e.g. a max tie); those
    // coordinates are reported but not judged.
    double scale = std::max({1.0, std::fabs(fwd), std::fabs(bwd)});
    if (std::fabs(fwd - bwd) > 1e-2 * scale) {
      ++report.skipped_nonsmooth;
      continue;
    }
    double a = analytic[i];
    double rel = std::fabs(a - central) / std::max(1.0, std::fabs(a));
    ++report.checked;
    if (rel > report.max_rel_error) {
      report.max_rel_error = rel;
      report.worst_index = static_cast<int64_t>(i);
    }
  }
  return report;
}

}  // namespace hoir
