#include <doctest.h>

#include <cmath>
#include <set>

#include "hoir/geometry.hpp"
#include "hoir/rng.hpp"

using namespace hoir;

namespace {

Box random_box(Rng& rng) {
  Box b;
  b.w = rng.uniform(0.05, 0.4);
  b.h = rng.uniform(0.05, 0.4);
  b.cx = rng.uniform(b.w / 2, 1.0 - b.w / 2);
  b.cy = rng.uniform(b.h / 2, 1.0 - b.h / 2);
  return b;
}

}  // namespace

TEST_CASE("giou basics") {
  Box a{0.5, 0.5, 0.2, 0.3};
  CHECK(giou(a, a) == doctest::Approx(1.0).epsilon(1e-12));

  // Hand-derived: a=(0.25,0.25,0.5,0.5), b=(0.5,0.5,0.5,0.5)
  //   intersection = 0.25*0.25 = 0.0625, union = 0.4375 -> IoU = 1/7
  //   hull = 0.75*0.75 = 0.5625 -> penalty = 0.125/0.5625 = 2/9
  //   giou = 1/7 - 2/9 = -5/63
  Box p{0.25, 0.25, 0.5, 0.5};
  Box q{0.5, 0.5, 0.5, 0.5};
  CHECK(giou(p, q) == doctest::Approx(-5.0 / 63.0).epsilon(1e-12));

  CHECK_THROWS_AS(giou(Box{0.5, 0.5, 0.0, 0.1}, a), DomainError);
}

TEST_CASE("giou approaches -1 for growing separation") {
  Box a{0.05, 0.05, 0.02, 0.02};
  double prev = 1.0;
  for (double sep : {0.2, 0.4, 0.6, 0.9}) {
    Box b{0.05 + sep, 0.05, 0.02, 0.02};
    double g = giou(a, b);
    CHECK(g < prev);
    prev = g;
  }
  CHECK(prev > -1.0);
  CHECK(prev < -0.85);
}

TEST_CASE("giou symmetry and range") {
  Rng rng(17);
  for (int i = 0; i < 200; ++i) {
    Box a = random_box(rng);
    Box b = random_box(rng);
    double g1 = giou(a, b);
    double g2 = giou(b, a);
    CHECK(g1 == doctest::Approx(g2).epsilon(1e-12));
    CHECK(g1 >= -1.0);
    CHECK(g1 <= 1.0);
  }
}

TEST_CASE("giou_rows matches scalar giou and is differentiable") {
  Rng rng(23);
  std::vector<double> av, bv;
  std::vector<Box> boxes_a, boxes_b;
  for (int i = 0; i < 5; ++i) {
    Box a = random_box(rng);
    Box b = random_box(rng);
    boxes_a.push_back(a);
    boxes_b.push_back(b);
    av.insert(av.end(), {a.cx, a.cy, a.w, a.h});
    bv.insert(bv.end(), {b.cx, b.cy, b.w, b.h});
  }
  Tensor ta = Tensor::from_data({5, 4}, av);
  Tensor tb = Tensor::from_data({5, 4}, bv);
  Tensor g = giou_rows(ta, tb);
  for (int i = 0; i < 5; ++i) {
    CHECK(g.data()[static_cast<size_t>(i)] ==
          doctest::Approx(giou(boxes_a[static_cast<size_t>(i)],
                               boxes_b[static_cast<size_t>(i)]))
              .epsilon(1e-12));
  }

  // gradient vs finite differences, away from degenerate overlaps
  Tensor fixed = tb;
  auto f = [&fixed](const Tensor& x) { return sum_all(giou_rows(x, fixed)); };
  auto report = grad_check(f, ta, 1e-6);
  CHECK(report.max_rel_error < 1e-4);
}

TEST_CASE("box_pe zero box, dims contract") {
  Tensor pe = box_pe(Box{0, 0, 0, 0}, 16);
  REQUIRE(pe.size() == 16);
  for (int64_t i = 0; i < 16; i += 2) {
    CHECK(pe.data()[static_cast<size_t>(i)] == doctest::Approx(0.0));      // sin
    CHECK(pe.data()[static_cast<size_t>(i + 1)] == doctest::Approx(1.0));  // cos
  }
  CHECK_THROWS_AS(box_pe(Box{0, 0, 0, 0}, 12), ConfigError);
  CHECK_THROWS_AS(box_pe(Box{0, 0, 0, 0}, 0), ConfigError);
}

TEST_CASE("box_pe_rows matches box_pe and carries gradients") {
  Rng rng(29);
  std::vector<double> rows;
  std::vector<Box> boxes;
  for (int i = 0; i < 3; ++i) {
    Box b = random_box(rng);
    boxes.push_back(b);
    rows.insert(rows.end(), {b.cx, b.cy, b.w, b.h});
  }
  Tensor t = Tensor::from_data({3, 4}, rows);
  Tensor pe = box_pe_rows(t, 16);
  REQUIRE(pe.shape() == Shape{3, 16});
  for (int64_t r = 0; r < 3; ++r) {
    Tensor single = box_pe(boxes[static_cast<size_t>(r)], 16);
    for (int64_t s = 0; s < 16; ++s) {
      CHECK(pe.at(r * 16 + s) ==
            doctest::Approx(single.at(s)).epsilon(1e-12));
    }
  }
  auto f = [](const Tensor& x) { return sum_all(box_pe_rows(x, 16)); };
  CHECK(grad_check(f, t, 1e-6).max_rel_error < 1e-6);
}

TEST_CASE("box_pe distinguishes distinct boxes (collision scan)") {
  Rng rng(31);
  for (int i = 0; i < 10000; ++i) {
    Box a = random_box(rng);
    Box b = random_box(rng);
    if (std::fabs(a.cx - b.cx) + std::fabs(a.cy - b.cy) + std::fabs(a.w - b.w) +
            std::fabs(a.h - b.h) <
        1e-6) {
      continue;
    }
    Tensor pa = box_pe(a, 16);
    Tensor pb = box_pe(b, 16);
    double diff = 0.0;
    for (size_t k = 0; k < pa.data().size(); ++k) {
      diff += std::fabs(pa.data()[k] - pb.data()[k]);
    }
    CHECK(diff > 0.0);
  }
}

TEST_CASE("box_pe is Lipschitz with the ladder constant") {
  // |d pe_k / d coord| <= 2*pi*freq_max = 2*pi, so the l2 bound over
  // dims/4 pairs per coordinate gives C = 2*pi*sqrt(dims/4).
  Rng rng(37);
  const int64_t dims = 32;
  const double c = 2.0 * 3.14159265358979323846 * std::sqrt(dims / 4.0);
  for (int i = 0; i < 100; ++i) {
    Box a = random_box(rng);
    Box b = random_box(rng);
    Tensor pa = box_pe(a, dims);
    Tensor pb = box_pe(b, dims);
    double dist2 = 0.0;
    for (size_t k = 0; k < pa.data().size(); ++k) {
      double d = pa.data()[k] - pb.data()[k];
      dist2 += d * d;
    }
    double coord = std::sqrt(
        (a.cx - b.cx) * (a.cx - b.cx) + (a.cy - b.cy) * (a.cy - b.cy) +
        (a.w - b.w) * (a.w - b.w) + (a.h - b.h) * (a.h - b.h));
    CHECK(std::sqrt(dist2) <= c * coord + 1e-9);
  }
}

TEST_CASE("classify_relation decision table") {
  Box human{0.5, 0.5, 0.3, 0.4};

  // object fully inside the human box
  CHECK(classify_relation(human, Box{0.5, 0.5, 0.1, 0.1}) ==
        SpatialRelation::within);
  // human fully inside the object box
  CHECK(classify_relation(human, Box{0.5, 0.5, 0.8, 0.9}) ==
        SpatialRelation::containing);
  // object centered well above the human's top edge, horizontally overlapping
  CHECK(classify_relation(human, Box{0.5, 0.12, 0.1, 0.08}) ==
        SpatialRelation::above);
  CHECK(classify_relation(human, Box{0.5, 0.9, 0.1, 0.08}) ==
        SpatialRelation::below);
  CHECK(classify_relation(human, Box{0.1, 0.5, 0.1, 0.2}) ==
        SpatialRelation::around);
}

TEST_CASE("classify_relation is total and swaps within/containing") {
  Rng rng(41);
  for (int i = 0; i < 500; ++i) {
    Box h = random_box(rng);
    Box o = random_box(rng);
    auto r1 = classify_relation(h, o);
    auto r2 = classify_relation(h, o);
    CHECK(r1 == r2);  // deterministic
  }
  // a strictly smaller box inside a larger one
  for (int i = 0; i < 200; ++i) {
    Box outer = random_box(rng);
    Box inner;
    inner.w = outer.w * rng.uniform(0.2, 0.6);
    inner.h = outer.h * rng.uniform(0.2, 0.6);
    inner.cx = outer.cx + rng.uniform(-0.2, 0.2) * (outer.w - inner.w) / 2;
    inner.cy = outer.cy + rng.uniform(-0.2, 0.2) * (outer.h - inner.h) / 2;
    CHECK(classify_relation(outer, inner) == SpatialRelation::within);
    CHECK(classify_relation(inner, outer) == SpatialRelation::containing);
  }
}

TEST_CASE("relation names round trip") {
  for (int i = 0; i < kNumRelations; ++i) {
    auto r = static_cast<SpatialRelation>(i);
    auto back = relation_from_name(relation_name(r));
    REQUIRE(back.has_value());
    CHECK(*back == r);
  }
  CHECK(!relation_from_name("sideways").has_value());
}
