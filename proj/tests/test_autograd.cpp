#include "doctest.h"

#include <cmath>
#include <functional>

#include "sslseg/autograd.hpp"
#include "sslseg/errors.hpp"
#include "sslseg/rng.hpp"

using namespace sslseg;
using namespace sslseg::ag;

namespace {

using Fn = std::function<Var(const std::vector<Var>&)>;

Tensor random_tensor(std::vector<int> shape, Rng& rng) {
  Tensor t(std::move(shape));
  for (double& v : t.span()) v = rng.normal();
  return t;
}

// <r, f(x)> as a scalar node so backward() can be seeded.
Var weighted_sum(const Var& out, const Tensor& r) {
  Tensor v({1});
  for (std::size_t i = 0; i < r.numel(); ++i) v[0] += r[i] * out->value[i];
  return make_op(v, {out}, [out, r](Node& self) {
    Tensor& g = out->grad_buffer();
    for (std::size_t i = 0; i < r.numel(); ++i) g[i] += self.grad[0] * r[i];
  });
}

// Largest |analytic - numeric| / (1 + |numeric|) over every input element.
double check(const Fn& f, const std::vector<Tensor>& inputs, Rng& rng) {
  std::vector<Var> leaves;
  for (const auto& t : inputs) leaves.push_back(leaf(t));
  const Var out = f(leaves);
  const Tensor r = random_tensor(out->value.shape(), rng);
  backward(weighted_sum(out, r));

  auto eval = [&](const std::vector<Tensor>& in) {
    std::vector<Var> c;
    for (const auto& t : in) c.push_back(constant(t));
    const Var o = f(c);
    double s = 0;
    for (std::size_t i = 0; i < r.numel(); ++i) s += r[i] * o->value[i];
    return s;
  };
  const double eps = 1e-6;
  double worst = 0;
  for (std::size_t k = 0; k < inputs.size(); ++k) {
    for (std::size_t i = 0; i < inputs[k].numel(); ++i) {
      auto p = inputs, m = inputs;
      p[k][i] += eps;
      m[k][i] -= eps;
      const double fd = (eval(p) - eval(m)) / (2 * eps);
      worst = std::max(worst, std::abs(leaves[k]->grad[i] - fd) / (1 + std::abs(fd)));
    }
  }
  return worst;
}

}  // namespace

TEST_CASE("conv2d gradients") {
  Rng rng(1);
  for (int pad : {0, 1}) {
    for (int k : {1, 3}) {
      const auto x = random_tensor({2, 3, 5, 4}, rng);
      const auto w = random_tensor({2, 3, k, k}, rng);
      const auto b = random_tensor({2}, rng);
      CHECK(check([pad](const std::vector<Var>& v) { return conv2d(v[0], v[1], v[2], pad); }, {x, w, b}, rng) <
            1e-7);
      CHECK(check([pad](const std::vector<Var>& v) { return conv2d(v[0], v[1], nullptr, pad); }, {x, w}, rng) <
            1e-7);
    }
  }
}

TEST_CASE("conv2d forward matches a direct loop") {
  Rng rng(2);
  const auto x = random_tensor({1, 2, 4, 4}, rng);
  const auto w = random_tensor({3, 2, 3, 3}, rng);
  const auto y = conv2d(constant(x), constant(w), nullptr, 1)->value;
  REQUIRE(y.shape() == std::vector<int>{1, 3, 4, 4});
  for (int o = 0; o < 3; ++o)
    for (int i = 0; i < 4; ++i)
      for (int j = 0; j < 4; ++j) {
        double s = 0;
        for (int c = 0; c < 2; ++c)
          for (int dy = 0; dy < 3; ++dy)
            for (int dx = 0; dx < 3; ++dx) {
              const int yy = i + dy - 1, xx = j + dx - 1;
              if (yy < 0 || yy >= 4 || xx < 0 || xx >= 4) continue;
              s += x[static_cast<std::size_t>((c * 4 + yy) * 4 + xx)] *
                   w[static_cast<std::size_t>(((o * 2 + c) * 3 + dy) * 3 + dx)];
            }
        CHECK(y[static_cast<std::size_t>((o * 4 + i) * 4 + j)] == doctest::Approx(s).epsilon(1e-12));
      }
}

TEST_CASE("batch norm gradients in both modes") {
  Rng rng(3);
  for (auto shape : {std::vector<int>{4, 3}, std::vector<int>{3, 2, 2, 3}}) {
    const int C = shape[1];
    const auto x = random_tensor(shape, rng);
    const auto g = random_tensor({C}, rng);
    const auto b = random_tensor({C}, rng);
    CHECK(check(
              [C](const std::vector<Var>& v) {
                BatchNormStats s{Tensor({C}, 0.0), Tensor({C}, 1.0)};
                return batch_norm(v[0], v[1], v[2], s, BnMode::train);
              },
              {x, g, b}, rng) < 1e-6);
    const auto mean = random_tensor({C}, rng);
    CHECK(check(
              [C, mean](const std::vector<Var>& v) {
                BatchNormStats s{mean, Tensor({C}, 2.0)};
                return batch_norm(v[0], v[1], v[2], s, BnMode::infer);
              },
              {x, g, b}, rng) < 1e-7);
  }
}

TEST_CASE("batch norm running statistics") {
  Tensor x({4, 1}, 0.0);
  x[0] = 1;
  x[1] = 2;
  x[2] = 3;
  x[3] = 6;
  BatchNormStats s{Tensor({1}, 0.0), Tensor({1}, 1.0)};
  const auto y = batch_norm(constant(x), constant(Tensor({1}, 1.0)), constant(Tensor({1}, 0.0)), s, BnMode::train);
  CHECK(s.mean[0] == doctest::Approx(0.1 * 3.0));
  CHECK(s.var[0] == doctest::Approx(0.9 + 0.1 * (14.0 / 3.0)));
  double mean = 0;
  for (std::size_t i = 0; i < 4; ++i) mean += y->value[i];
  CHECK(std::abs(mean) < 1e-12);
  CHECK_THROWS(batch_norm(constant(Tensor({1, 1}, 1.0)), constant(Tensor({1}, 1.0)), constant(Tensor({1}, 0.0)),
                          s, BnMode::train));
}

TEST_CASE("pointwise and reshaping operators") {
  Rng rng(4);
  const auto x = random_tensor({2, 3, 4, 6}, rng);
  CHECK(check([](const std::vector<Var>& v) { return relu(v[0]); }, {x}, rng) < 1e-7);
  CHECK(check([](const std::vector<Var>& v) { return max_pool2(v[0]); }, {x}, rng) < 1e-7);
  CHECK(check([](const std::vector<Var>& v) { return upsample2(v[0]); }, {x}, rng) < 1e-7);
  CHECK(check([](const std::vector<Var>& v) { return flatten(v[0]); }, {x}, rng) < 1e-7);
  const auto y = random_tensor({2, 2, 4, 6}, rng);
  CHECK(check([](const std::vector<Var>& v) { return concat_channels(v[0], v[1]); }, {x, y}, rng) < 1e-7);
  const auto a = random_tensor({3, 5}, rng), w = random_tensor({4, 5}, rng), b = random_tensor({4}, rng);
  CHECK(check([](const std::vector<Var>& v) { return linear(v[0], v[1], v[2]); }, {a, w, b}, rng) < 1e-7);
}

TEST_CASE("operator shapes") {
  const Var x = constant(Tensor({2, 3, 4, 6}, 1.0));
  CHECK(max_pool2(x)->value.shape() == std::vector<int>{2, 3, 2, 3});
  CHECK(upsample2(x)->value.shape() == std::vector<int>{2, 3, 8, 12});
  CHECK(flatten(x)->value.shape() == std::vector<int>{2, 72});
  CHECK_THROWS(max_pool2(constant(Tensor({1, 1, 3, 4}))));
}

TEST_CASE("shared subexpressions accumulate gradients") {
  const Var x = leaf(Tensor({1, 2}, 1.5));
  const Var w = constant(Tensor({1, 2}, 1.0));
  const Var out = linear(x, w, nullptr);
  const Var twice = make_op(Tensor({1}, 2 * out->value[0]), {out, out}, [out](Node& self) {
    out->grad_buffer()[0] += self.grad[0];
    out->grad_buffer()[0] += self.grad[0];
  });
  backward(twice);
  CHECK(x->grad[0] == 2.0);
  CHECK(x->grad[1] == 2.0);
}

TEST_CASE("constants carry no graph") {
  const Var c = constant(Tensor({2}, 1.0));
  const Var y = relu(c);
  CHECK_FALSE(y->requires_grad);
  CHECK(y->parents.empty());
}
