#pragma once

#include <optional>
#include <string>

#include "hoir/tensor.hpp"

namespace hoir {

// Axis-aligned box in normalized center-size coordinates.
struct Box {
  double cx = 0.0;
  double cy = 0.0;
  double w = 0.0;
  double h = 0.0;

  double x1() const { return cx - 0.5 * w; }
  double y1() const { return cy - 0.5 * h; }
  double x2() const { return cx + 0.5 * w; }
  double y2() const { return cy + 0.5 * h; }
  double area() const { return w * h; }

  // Clamp corners into the unit square, keeping a positive extent.
  Box clamped() const;
};

// Relative position of an object with the human as reference frame.
// y grows downward (image convention), so "above" means smaller y.
enum class SpatialRelation { above = 0, below, around, within, containing };
inline constexpr int kNumRelations = 5;

const char* relation_name(SpatialRelation r);
std::optional<SpatialRelation> relation_from_name(const std::string& name);

// Plain intersection-over-union in [0, 1].
double iou(const Box& a, const Box& b);

// Generalized IoU in [-1, 1]: IoU minus the empty fraction of the
// enclosing hull. DomainError on zero-area boxes.
double giou(const Box& a, const Box& b);

// Row-wise GIoU for (N, 4) center-size tensors; differentiable w.r.t.
// both inputs. Returns shape (N,).
Tensor giou_rows(const Tensor& a, const Tensor& b);

// Row-wise |a - b| L1 distance over the 4 coordinates, shape (N,).
Tensor box_l1_rows(const Tensor& a, const Tensor& b);

// Sinusoidal positional encoding of a box: dims/4 values per coordinate,
// sin/cos pairs over a geometric frequency ladder. `dims` must be
// divisible by 8. The result does not participate in gradients.
Tensor box_pe(const Box& b, int64_t dims);
// One encoding per row of an (N, 4) value array -> (N, dims).
Tensor box_pe_rows(const Tensor& boxes, int64_t dims);

struct RelationThresholds {
  double inside_frac = 0.98;  // containment fraction for within/containing
  double margin = 0.25;       // vertical clearance in units of human height
};

// Ordered decision table; total and deterministic.
SpatialRelation classify_relation(const Box& human, const Box& object,
                                  const RelationThresholds& thr = {});

}  // namespace hoir
