#include "hoir/geometry.hpp"

#include <algorithm>
#include <cmath>

namespace hoir {

namespace {
constexpr double kTwoPi = 6.28318530717958647692;
constexpr double kPeTemperature = 10000.0;
}  // namespace

Box Box::clamped() const {
  double x1c = std::clamp(x1(), 0.0, 1.0);
  double y1c = std::clamp(y1(), 0.0, 1.0);
  double x2c = std::clamp(x2(), 0.0, 1.0);
  double y2c = std::clamp(y2(), 0.0, 1.0);
  const double eps = 1e-6;
  if (x2c - x1c < eps) {
    x2c = std::min(1.0, x1c + eps);
    x1c = x2c - eps;
  }
  if (y2c - y1c < eps) {
    y2c = std::min(1.0, y1c + eps);
    y1c = y2c - eps;
  }
  return Box{(x1c + x2c) / 2, (y1c + y2c) / 2, x2c - x1c, y2c - y1c};
}

const char* relation_name(SpatialRelation r) {
  switch (r) {
    case SpatialRelation::above: return "above";
    case SpatialRelation::below: return "below";
    case SpatialRelation::around: return "around";
    case SpatialRelation::within: return "within";
    case SpatialRelation::containing: return "containing";
  }
  return "?";
}

std::optional<SpatialRelation> relation_from_name(const std::string& name) {
  for (int i = 0; i < kNumRelations; ++i) {
    auto r = static_cast<SpatialRelation>(i);
    if (name == relation_name(r)) return r;
  }
  return std::nullopt;
}

double giou(const Box& a, const Box& b) {
  if (a.w <= 0.0 || a.h <= 0.0 || b.w <= 0.0 || b.h <= 0.0) {
    throw DomainError("giou: degenerate box with non-positive extent");
  }
  double ix = std::max(0.0, std::min(a.x2(), b.x2()) - std::max(a.x1(), b.x1()));
  double iy = std::max(0.0, std::min(a.y2(), b.y2()) - std::max(a.y1(), b.y1()));
  double inter = ix * iy;
  double uni = a.area() + b.area() - inter;
  double hx = std::max(a.x2(), b.x2()) - std::min(a.x1(), b.x1());
  double hy = std::max(a.y2(), b.y2()) - std::min(a.y1(), b.y1());
  double hull = hx * hy;
  return inter / uni - (hull - uni) / hull;
}

namespace {

// Column views of an (N, 4) center-size tensor as corner coordinates.
struct Corners {
  Tensor x1, y1, x2, y2, area;
};

Corners corners_of(const Tensor& boxes) {
  Tensor cx = chip(boxes, 1, 0);
  Tensor cy = chip(boxes, 1, 1);
  Tensor w = chip(boxes, 1, 2);
  Tensor h = chip(boxes, 1, 3);
  Corners c;
  c.x1 = cx - 0.5 * w;
  c.y1 = cy - 0.5 * h;
  c.x2 = cx + 0.5 * w;
  c.y2 = cy + 0.5 * h;
  c.area = w * h;
  return c;
}

}  // namespace

Tensor giou_rows(const Tensor& a, const Tensor& b) {
  if (a.rank() != 2 || a.shape()[1] != 4 || a.shape() != b.shape()) {
    throw ShapeError("giou_rows: expected matching (N,4) tensors, got " +
                     shape_str(a.shape()) + " and " + shape_str(b.shape()));
  }
  for (int64_t r = 0; r < a.shape()[0]; ++r) {
    if (a.at(r * 4 + 2) <= 0.0 || a.at(r * 4 + 3) <= 0.0 ||
        b.at(r * 4 + 2) <= 0.0 || b.at(r * 4 + 3) <= 0.0) {
      throw DomainError("giou_rows: degenerate box at row " + std::to_string(r));
    }
  }
  Corners ca = corners_of(a);
  Corners cb = corners_of(b);
  Tensor iw = relu(minimum(ca.x2, cb.x2) - maximum(ca.x1, cb.x1));
  Tensor ih = relu(minimum(ca.y2, cb.y2) - maximum(ca.y1, cb.y1));
  Tensor inter = iw * ih;
  Tensor uni = ca.area + cb.area - inter;
  Tensor hull = (maximum(ca.x2, cb.x2) - minimum(ca.x1, cb.x1)) *
                (maximum(ca.y2, cb.y2) - minimum(ca.y1, cb.y1));
  return inter / uni - (hull - uni) / hull;
}

Tensor box_l1_rows(const Tensor& a, const Tensor& b) {
  if (a.rank() != 2 || a.shape()[1] != 4 || a.shape() != b.shape()) {
    throw ShapeError("box_l1_rows: expected matching (N,4) tensors");
  }
  return reduce_sum(abs(a - b), 1);
}

namespace {

void encode_coord(double v, int64_t pairs, double* out) {
  // pairs sin/cos pairs with geometrically decreasing frequency.
  for (int64_t j = 0; j < pairs; ++j) {
    double freq = std::pow(kPeTemperature,
                           -static_cast<double>(j) / static_cast<double>(pairs));
    double angle = kTwoPi * v * freq;
    out[2 * j] = std::sin(angle);
    out[2 * j + 1] = std::cos(angle);
  }
}

}  // namespace

Tensor box_pe(const Box& b, int64_t dims) {
  if (dims <= 0 || dims % 8 != 0) {
    throw ConfigError("box_pe: dims must be a positive multiple of 8, got " +
                      std::to_string(dims));
  }
  int64_t per = dims / 4;
  int64_t pairs = per / 2;
  std::vector<double> out(static_cast<size_t>(dims));
  const double coords[4] = {b.cx, b.cy, b.w, b.h};
  for (int c = 0; c < 4; ++c) {
    encode_coord(coords[c], pairs, out.data() + c * per);
  }
  return Tensor::from_data({dims}, std::move(out), false);
}

Tensor box_pe_rows(const Tensor& boxes, int64_t dims) {
  if (boxes.rank() != 2 || boxes.shape()[1] != 4) {
    throw ShapeError("box_pe_rows: expected (N,4), got " +
                     shape_str(boxes.shape()));
  }
  if (dims <= 0 || dims % 8 != 0) {
    throw ConfigError("box_pe_rows: dims must be a positive multiple of 8");
  }
  int64_t per = dims / 4;
  int64_t pairs = per / 2;
  // angle[s] = 2*pi*freq(s)*coord(s): one matmul against a constant
  // placement matrix, then masked sin/cos, so gradients flow into the
  // box predictions.
  std::vector<double> fmat(static_cast<size_t>(4 * dims), 0.0);
  std::vector<double> sin_mask(static_cast<size_t>(dims), 0.0);
  std::vector<double> cos_mask(static_cast<size_t>(dims), 0.0);
  for (int c = 0; c < 4; ++c) {
    for (int64_t j = 0; j < pairs; ++j) {
      double freq = std::pow(kPeTemperature,
                             -static_cast<double>(j) / static_cast<double>(pairs));
      int64_t s = c * per + 2 * j;
      fmat[static_cast<size_t>(c * dims + s)] = kTwoPi * freq;
      fmat[static_cast<size_t>(c * dims + s + 1)] = kTwoPi * freq;
      sin_mask[static_cast<size_t>(s)] = 1.0;
      cos_mask[static_cast<size_t>(s + 1)] = 1.0;
    }
  }
  Tensor f = Tensor::from_data({4, dims}, std::move(fmat), false);
  Tensor sm = Tensor::from_data({dims}, std::move(sin_mask), false);
  Tensor cm = Tensor::from_data({dims}, std::move(cos_mask), false);
  Tensor angles = matmul(boxes, f);
  return sin(angles) * sm + cos(angles) * cm;
}

SpatialRelation classify_relation(const Box& human, const Box& object,
                                  const RelationThresholds& thr) {
  auto inside_frac = [](const Box& inner, const Box& outer) {
    double ix = std::max(
        0.0, std::min(inner.x2(), outer.x2()) - std::max(inner.x1(), outer.x1()));
    double iy = std::max(
        0.0, std::min(inner.y2(), outer.y2()) - std::max(inner.y1(), outer.y1()));
    double a = inner.area();
    return a > 0.0 ? (ix * iy) / a : 0.0;
  };
  // Evaluated in order; first match wins.
  if (inside_frac(object, human) >= thr.inside_frac) {
    return SpatialRelation::within;
  }
  if (inside_frac(human, object) >= thr.inside_frac) {
    return SpatialRelation::containing;
  }
  double overlap_x =
      std::min(human.x2(), object.x2()) - std::max(human.x1(), object.x1());
  if (overlap_x > 0.0) {
    if (object.cy < human.y1() - thr.margin * human.h) {
      return SpatialRelation::above;
    }
    if (object.cy > human.y2() + thr.margin * human.h) {
      return SpatialRelation::below;
    }
  }
  return SpatialRelation::around;
}

}  // namespace hoir
