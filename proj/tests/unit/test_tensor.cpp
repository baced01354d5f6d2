#include <doctest.h>

#include <cmath>

#include "hoir/io.hpp"
#include "hoir/rng.hpp"
#include "hoir/tensor.hpp"

using namespace hoir;

namespace {

// Independent reference: naive triple-loop matrix product, optionally
// batched over broadcast leading axes handled by the caller.
std::vector<double> matmul_oracle(const std::vector<double>& a,
                                  const std::vector<double>& b, int64_t m,
                                  int64_t k, int64_t n) {
  std::vector<double> c(static_cast<size_t>(m * n), 0.0);
  for (int64_t i = 0; i < m; ++i) {
    for (int64_t j = 0; j < n; ++j) {
      double s = 0.0;
      for (int64_t t = 0; t < k; ++t) {
        s += a[static_cast<size_t>(i * k + t)] * b[static_cast<size_t>(t * n + j)];
      }
      c[static_cast<size_t>(i * n + j)] = s;
    }
  }
  return c;
}

Tensor random_tensor(Shape shape, Rng& rng, bool rg = false) {
  std::vector<double> d(static_cast<size_t>(numel(shape)));
  for (auto& v : d) v = rng.uniform(-1.0, 1.0);
  return Tensor::from_data(std::move(shape), std::move(d), rg);
}

}  // namespace

TEST_CASE("matmul identity and 1x1") {
  Tensor eye = Tensor::from_data({2, 2}, {1, 0, 0, 1});
  Tensor m = Tensor::from_data({2, 2}, {3, 4, 5, 6});
  Tensor r = matmul(eye, m);
  CHECK(r.data() == std::vector<double>{3, 4, 5, 6});

  Tensor a = Tensor::from_data({1, 1}, {2});
  Tensor b = Tensor::from_data({1, 1}, {3});
  CHECK(matmul(a, b).value() == 6.0);
}

TEST_CASE("matmul matches triple-loop oracle") {
  Rng rng(42);
  Tensor a = random_tensor({3, 4}, rng);
  Tensor b = random_tensor({4, 2}, rng);
  Tensor c = matmul(a, b);
  auto expect = matmul_oracle(a.data(), b.data(), 3, 4, 2);
  for (size_t i = 0; i < expect.size(); ++i) {
    CHECK(std::fabs(c.data()[i] - expect[i]) < 1e-12);
  }
}

TEST_CASE("matmul oracle property over shapes up to 8x8x8") {
  Rng rng(7);
  for (int64_t m = 1; m <= 8; m += 3) {
    for (int64_t k = 1; k <= 8; k += 3) {
      for (int64_t n = 1; n <= 8; n += 3) {
        Tensor a = random_tensor({m, k}, rng);
        Tensor b = random_tensor({k, n}, rng);
        Tensor c = matmul(a, b);
        auto expect = matmul_oracle(a.data(), b.data(), m, k, n);
        for (size_t i = 0; i < expect.size(); ++i) {
          CHECK(std::fabs(c.data()[i] - expect[i]) < 1e-12);
        }
      }
    }
  }
  // batched: (2,3,4) x (4,2), leading axis broadcast against rank-2 rhs
  Tensor a = random_tensor({2, 3, 4}, rng);
  Tensor b = random_tensor({4, 2}, rng);
  Tensor c = matmul(a, b);
  REQUIRE(c.shape() == Shape{2, 3, 2});
  for (int64_t cell = 0; cell < 2; ++cell) {
    std::vector<double> ac(a.data().begin() + cell * 12,
                           a.data().begin() + (cell + 1) * 12);
    auto expect = matmul_oracle(ac, b.data(), 3, 4, 2);
    for (size_t i = 0; i < expect.size(); ++i) {
      CHECK(std::fabs(c.data()[static_cast<size_t>(cell * 6) + i] - expect[i]) <
            1e-12);
    }
  }
}

TEST_CASE("matmul shape mismatch names both shapes") {
  Tensor a = Tensor::zeros({2, 3});
  Tensor b = Tensor::zeros({4, 2});
  try {
    matmul(a, b);
    FAIL("expected ShapeError");
  } catch (const ShapeError& e) {
    std::string msg = e.what();
    CHECK(msg.find("(2,3)") != std::string::npos);
    CHECK(msg.find("(4,2)") != std::string::npos);
  }
}

TEST_CASE("softmax uniform, stability, closed form") {
  Tensor z = softmax_axis(Tensor::from_data({3}, {0, 0, 0}), 0);
  for (double v : z.data()) CHECK(v == doctest::Approx(1.0 / 3).epsilon(1e-12));

  Tensor big = softmax_axis(Tensor::from_data({2}, {1000, 1000}), 0);
  CHECK(big.data()[0] == doctest::Approx(0.5).epsilon(1e-12));
  CHECK(std::isfinite(big.data()[0]));

  // [0, ln 3] -> [1/4, 3/4]
  Tensor c = softmax_axis(Tensor::from_data({2}, {0.0, std::log(3.0)}), 0);
  CHECK(c.data()[0] == doctest::Approx(0.25).epsilon(1e-12));
  CHECK(c.data()[1] == doctest::Approx(0.75).epsilon(1e-12));
}

TEST_CASE("softmax slices sum to one and stay in [0,1]") {
  Rng rng(3);
  Tensor x = random_tensor({4, 5, 3}, rng);
  for (int64_t axis = 0; axis < 3; ++axis) {
    Tensor y = softmax_axis(x, axis);
    for (double v : y.data()) {
      CHECK(v >= 0.0);
      CHECK(v <= 1.0);
    }
    Tensor s = reduce_sum(y, axis);
    for (double v : s.data()) CHECK(v == doctest::Approx(1.0).epsilon(1e-9));
  }
  CHECK_THROWS_AS(softmax_axis(x, 3), IndexError);
}

TEST_CASE("elementwise ops and broadcasting") {
  Tensor r = mul(Tensor::from_data({2}, {2, 3}), Tensor::from_data({2}, {4, 5}));
  CHECK(r.data() == std::vector<double>{8, 15});

  Tensor a = Tensor::from_data({2, 1}, {1, 2});
  Tensor b = Tensor::from_data({1, 3}, {10, 20, 30});
  Tensor c = add(a, b);
  REQUIRE(c.shape() == Shape{2, 3});
  CHECK(c.data() == std::vector<double>{11, 21, 31, 12, 22, 32});

  Tensor p = pow(Tensor::from_data({1}, {4}), 0.5);
  CHECK(p.data()[0] == doctest::Approx(2.0).epsilon(1e-12));

  CHECK_THROWS_AS(add(Tensor::zeros({2, 3}), Tensor::zeros({4, 5})), ShapeError);
  CHECK_THROWS_AS(pow(Tensor::from_data({1}, {-2.0}), 0.5), DomainError);
}

TEST_CASE("broadcast gradients reduce-sum over broadcast axes") {
  Tensor a = Tensor::from_data({2, 1}, {1, 2}, true);
  Tensor b = Tensor::from_data({1, 3}, {10, 20, 30}, true);
  backward(sum_all(a + b));
  CHECK(a.grad() == std::vector<double>{3, 3});   // summed over 3 columns
  CHECK(b.grad() == std::vector<double>{2, 2, 2});
}

TEST_CASE("reductions") {
  Tensor x = Tensor::from_data({3}, {1, 2, 3});
  CHECK(reduce_sum(x, 0).value() == 6.0);
  CHECK(reduce_mean(Tensor::from_data({2}, {2, 4}), 0).value() ==
        3.0);
  CHECK_THROWS_AS(reduce_sum(x, 1), IndexError);
}

TEST_CASE("max reduction routes gradient to first argmax on ties") {
  Tensor x = Tensor::from_data({4}, {1, 5, 5, 2}, true);
  backward(reduce_max(x, 0));
  CHECK(x.grad() == std::vector<double>{0, 1, 0, 0});
}

TEST_CASE("expand: paper shape pattern, adjoint, scalar mean") {
  // (N_h, D) expanded at axis 1, broadcast-added to (1, N_a, D)
  Tensor qh = Tensor::from_data({2, 3}, {1, 2, 3, 4, 5, 6});
  Tensor qa = Tensor::from_data({4, 3}, std::vector<double>(12, 0.5));
  Tensor sum = expand(qh, 1, 1) + expand(qa, 0, 1);
  REQUIRE(sum.shape() == Shape{2, 4, 3});
  CHECK(sum.data()[0] == doctest::Approx(1.5));

  // expand then reduce-sum over the new axis multiplies gradient by k
  Tensor x = Tensor::from_data({3}, {1, 2, 3}, true);
  backward(sum_all(reduce_sum(expand(x, 0, 5), 0)));
  CHECK(x.grad() == std::vector<double>{5, 5, 5});

  // expand of a scalar then mean is the identity
  Tensor s = Tensor::scalar(1.25);
  Tensor m = reduce_mean(expand(s, 0, 5), 0);
  CHECK(m.value() == 1.25);
}

TEST_CASE("backward: quadratic, unused leaf, non-scalar error") {
  Tensor x = Tensor::from_data({3}, {1, 2, 3}, true);
  backward(sum_all(x * x));
  CHECK(x.grad() == std::vector<double>{2, 4, 6});

  Tensor w = Tensor::from_data({2}, {1, 1}, true);
  Tensor y = Tensor::from_data({2}, {1, 1}, true);
  backward(sum_all(y * y));
  CHECK(w.grad() == std::vector<double>{0, 0});

  CHECK_THROWS_AS(backward(Tensor::zeros({2}, true)), ContractError);
}

TEST_CASE("tape is single-use") {
  Tensor x = Tensor::from_data({2}, {1, 2}, true);
  Tensor loss = sum_all(x * x);
  backward(loss);
  CHECK_THROWS_AS(backward(loss), ContractError);
}

TEST_CASE("tape trace is topologically ordered and visited once") {
  Tensor x = Tensor::from_data({2}, {1, 2}, true);
  Tensor y = Tensor::from_data({2}, {3, 4}, true);
  Tensor loss = sum_all(x * y + x);
  Tape tape = trace(loss);
  // every input id precedes its output id
  for (const auto& e : tape) {
    for (auto in : e.inputs) CHECK(in < e.output);
  }
  size_t interior = 0;
  for (const auto& e : tape) {
    if (!e.inputs.empty()) ++interior;
  }
  CHECK(backward(loss) == interior);  // each op node visited exactly once
}

TEST_CASE("composed graph matches finite differences") {
  Rng rng(11);
  Tensor x0 = random_tensor({3, 4}, rng);
  auto f = [](const Tensor& x) {
    Tensor w = Tensor::from_data(
        {4, 4}, {0.3, -0.1, 0.2, 0.5, 0.7, 0.1, -0.4, 0.2,
                 -0.3, 0.6, 0.1, 0.2, 0.05, -0.2, 0.4, -0.6});
    return sum_all(softmax_axis(matmul(x, w), 1) * Tensor::full({3, 4}, 0.7));
  };
  auto report = grad_check(f, x0, 1e-5);
  CHECK(report.max_rel_error < 1e-4);
  CHECK(report.skipped_nonsmooth == 0);
}

TEST_CASE("grad_check: linear exactness and softmax cross-entropy") {
  Tensor x = Tensor::from_data({4}, {0.1, -0.2, 0.3, 0.4});
  auto linear_f = [](const Tensor& t) { return sum_all(t); };
  CHECK(grad_check(linear_f, x).max_rel_error < 1e-10);

  auto ce = [](const Tensor& logits) {
    // cross-entropy against class 2
    Tensor ls = log_softmax_axis(reshape(logits, {1, 4}), 1);
    Tensor mask = Tensor::from_data({1, 4}, {0, 0, 1, 0});
    return neg(sum_all(ls * mask));
  };
  CHECK(grad_check(ce, x).max_rel_error < 1e-4);
}

TEST_CASE("grad_check flags ties as non-smooth and excludes them") {
  Tensor x = Tensor::from_data({2}, {1.0, 1.0});
  auto f = [](const Tensor& t) { return reduce_max(t, 0); };
  auto report = grad_check(f, x, 1e-5);
  CHECK(report.skipped_nonsmooth >= 1);
}

TEST_CASE("grad_check property over composed random graphs") {
  Rng rng(123);
  int points = 0;
  double worst = 0.0;
  for (int trial = 0; trial < 25; ++trial) {
    Tensor x = random_tensor({6}, rng);
    auto f = [trial](const Tensor& t) {
      Tensor a = reshape(t, {2, 3});
      Tensor b = softmax_axis(a, 1);
      Tensor c = b * b + 0.5 * b;
      switch (trial % 4) {
        case 0: return sum_all(c);
        case 1: return mean_all(exp(c * 0.3));
        case 2: return sum_all(sigmoid(a) * c);
        default: return mean_all(pow(clamp_st(b, 0.0, 1.0) + 1.0, 2.0));
      }
    };
    auto report = grad_check(f, x, 1e-5);
    points += static_cast<int>(report.checked);
    worst = std::max(worst, report.max_rel_error);
  }
  CHECK(points >= 100);
  CHECK(worst < 1e-4);
}

TEST_CASE("unary op gradients against finite differences") {
  Rng rng(5);
  auto check = [&](auto op) {
    Tensor x = random_tensor({5}, rng);
    auto f = [&op](const Tensor& t) { return sum_all(op(t)); };
    auto report = grad_check(f, x, 1e-5);
    CHECK(report.max_rel_error < 1e-5);
  };
  check([](const Tensor& t) { return exp(t); });
  check([](const Tensor& t) { return sigmoid(t); });
  check([](const Tensor& t) { return log(t * t + 1.0); });
  check([](const Tensor& t) { return abs(t * t + 0.1); });
  check([](const Tensor& t) { return divide(t, t * t + 2.0); });
  check([](const Tensor& t) { return minimum(t, neg(t) + 0.77); });
}

TEST_CASE("index_select, chip and concat gradients") {
  Tensor x = Tensor::from_data({3, 2}, {1, 2, 3, 4, 5, 6}, true);
  Tensor sel = index_select(x, 0, {2, 0});
  CHECK(sel.data() == std::vector<double>{5, 6, 1, 2});
  backward(sum_all(sel));
  CHECK(x.grad() == std::vector<double>{1, 1, 0, 0, 1, 1});

  Tensor y = Tensor::from_data({2, 2}, {1, 2, 3, 4}, true);
  backward(sum_all(chip(y, 1, 1)));
  CHECK(y.grad() == std::vector<double>{0, 1, 0, 1});
  CHECK_THROWS_AS(chip(y, 1, 5), IndexError);

  Tensor a = Tensor::from_data({1, 2}, {1, 2}, true);
  Tensor b = Tensor::from_data({2, 2}, {3, 4, 5, 6}, true);
  Tensor c = concat({a, b}, 0);
  REQUIRE(c.shape() == Shape{3, 2});
  backward(sum_all(c * 2.0));
  CHECK(a.grad() == std::vector<double>{2, 2});
  CHECK(b.grad() == std::vector<double>{2, 2, 2, 2});
}

TEST_CASE("masked backward restricts leaf accumulation") {
  Tensor a = Tensor::from_data({2}, {1, 2}, true);
  Tensor b = Tensor::from_data({2}, {3, 4}, true);
  Tensor loss = sum_all(a * b);
  backward(loss, {a.id()});
  CHECK(a.grad() == std::vector<double>{3, 4});
  CHECK(b.grad() == std::vector<double>{0, 0});
}

TEST_CASE("tensor JSON round trip") {
  Tensor t = Tensor::from_data({2, 2}, {1.5, -2.25, 0.0, 1e-9});
  std::string j = tensor_to_json(t);
  Tensor back = tensor_from_json(j);
  CHECK(back.shape() == t.shape());
  CHECK(back.data() == t.data());
  CHECK(j.find("\"shape\"") != std::string::npos);
  CHECK(j.find("\"data\"") != std::string::npos);
}

TEST_CASE("forward ops keep finite values on finite inputs") {
  Rng rng(9);
  Tensor x = random_tensor({4, 4}, rng);
  Tensor y = softmax_axis(matmul(x, transpose(x)) * 50.0, 1);
  for (double v : y.data()) CHECK(std::isfinite(v));
  Tensor z = sigmoid(x * 1000.0);
  for (double v : z.data()) CHECK(std::isfinite(v));
}
