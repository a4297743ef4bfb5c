#include <cmath>
#include <functional>
#include <set>
#include <string>
#include <vector>

#include "doctest.h"
#include "qeot/errors.hpp"
#include "qeot/grad_check.hpp"
#include "qeot/ops.hpp"
#include "support.hpp"

using namespace qeot;
using qeot::testing::random_tensor;

namespace {

std::vector<double> naive_matmul(const Tensor& a, const Tensor& b) {
  const std::size_t m = a.dim(0), k = a.dim(1), n = b.dim(1);
  std::vector<double> c(m * n, 0.0);
  for (std::size_t i = 0; i < m; ++i) {
    for (std::size_t j = 0; j < n; ++j) {
      for (std::size_t p = 0; p < k; ++p) c[i * n + j] += a.data()[i * k + p] * b.data()[p * n + j];
    }
  }
  return c;
}

double check_op(const std::function<Tensor()>& f, std::vector<GradProbe> probes) {
  return grad_check(f, probes).max_rel_error;
}

}  // namespace

TEST_CASE("matmul fixtures") {
  const Tensor i2 = Tensor::from({2, 2}, {1, 0, 0, 1});
  const Tensor m = Tensor::from({2, 2}, {1, 2, 3, 4});
  const Tensor im = matmul(i2, m);
  CHECK(std::vector<double>(im.data().begin(), im.data().end()) == std::vector<double>{1, 2, 3, 4});
  const Tensor p = Tensor::from({2, 2}, {1, 0, 0, 0});
  const Tensor r = matmul(p, Tensor::from({2, 2}, {5, 6, 7, 8}));
  CHECK(std::vector<double>(r.data().begin(), r.data().end()) == std::vector<double>{5, 6, 0, 0});

  const Tensor a = random_tensor({3, 4}, 1, false);
  const Tensor b = random_tensor({4, 5}, 2, false);
  const auto ref = naive_matmul(a, b);
  const Tensor c = matmul(a, b);
  REQUIRE(c.shape() == Shape{3, 5});
  for (std::size_t i = 0; i < ref.size(); ++i) CHECK(std::abs(c.data()[i] - ref[i]) < 1e-12);
}

TEST_CASE("matmul broadcasts leading dimensions") {
  const Tensor a = random_tensor({2, 1, 3, 4}, 3, false);
  const Tensor b = random_tensor({3, 4, 2}, 4, false);
  const Tensor c = matmul(a, b);
  REQUIRE(c.shape() == Shape{2, 3, 3, 2});
  for (std::size_t i = 0; i < 2; ++i) {
    for (std::size_t j = 0; j < 3; ++j) {
      for (std::size_t r = 0; r < 3; ++r) {
        for (std::size_t s = 0; s < 2; ++s) {
          double want = 0.0;
          for (std::size_t p = 0; p < 4; ++p) want += a.at({i, 0, r, p}) * b.at({j, p, s});
          CHECK(std::abs(c.at({i, j, r, s}) - want) < 1e-12);
        }
      }
    }
  }
}

TEST_CASE("matmul shape mismatch names both shapes") {
  const Tensor a = Tensor::zeros({2, 3});
  const Tensor b = Tensor::zeros({4, 2});
  try {
    matmul(a, b);
    FAIL("expected DimensionError");
  } catch (const DimensionError& e) {
    const std::string msg = e.what();
    CHECK(msg.find("[2,3]") != std::string::npos);
    CHECK(msg.find("[4,2]") != std::string::npos);
  }
  CHECK_THROWS_AS(add(Tensor::zeros({2, 3}), Tensor::zeros({4})), DimensionError);
  CHECK_THROWS_AS(Tensor::from({2, 2}, {1, 2, 3}), DimensionError);
}

TEST_CASE("softmax fixtures and stability") {
  const Tensor u = softmax(Tensor::from({3}, {0, 0, 0}));
  for (double v : u.data()) CHECK(v == doctest::Approx(1.0 / 3.0).epsilon(1e-15));
  const Tensor big = softmax(Tensor::from({3}, {1000, 0, 0}));
  CHECK(std::abs(big.data()[0] - 1.0) < 1e-12);
  CHECK(std::isfinite(big.data()[1]));
  const Tensor s = softmax(Tensor::from({3}, {1, 2, 3}));
  CHECK(std::abs(s.data()[0] - 0.09003) < 1e-5);
  CHECK(std::abs(s.data()[1] - 0.24473) < 1e-5);
  CHECK(std::abs(s.data()[2] - 0.66524) < 1e-5);

  const Tensor x = random_tensor({4, 5, 6}, 5, false, -30, 30);
  for (int axis : {0, 1, 2}) {
    const Tensor y = softmax(x, axis);
    const Tensor sums = mean_axis(y, axis);  // mean * len = sum
    for (double v : sums.data()) CHECK(std::abs(v * static_cast<double>(x.dim(axis)) - 1.0) < 1e-9);
    for (double v : y.data()) CHECK(v >= 0.0);
  }
}

TEST_CASE("elementwise fixtures") {
  const Tensor r = relu(Tensor::from({3}, {-1, 0, 2}));
  CHECK(std::vector<double>(r.data().begin(), r.data().end()) == std::vector<double>{0, 0, 2});
  CHECK(sigmoid(Tensor::scalar(0)).item() == 0.5);
  CHECK(std::abs(sigmoid(Tensor::scalar(2)).item() - 0.88080) < 1e-5);
  const Tensor extreme = sigmoid(Tensor::from({2}, {-30, 30}));
  CHECK(extreme.data()[0] > 0.0);
  CHECK(extreme.data()[1] < 1.0);
}

TEST_CASE("relu subgradient at zero is zero") {
  Tensor x = Tensor::from({3}, {-1, 0, 2}, true);
  sum(relu(x)).backward();
  CHECK(std::vector<double>(x.grad().begin(), x.grad().end()) == std::vector<double>{0, 0, 1});
}

TEST_CASE("layer_norm fixtures") {
  const Tensor g = Tensor::full({4}, 1.0);
  const Tensor b0 = Tensor::zeros({4});
  const Tensor c = layer_norm(Tensor::full({4}, 3.5), g, b0);
  for (double v : c.data()) CHECK(v == 0.0);

  const Tensor two = layer_norm(Tensor::from({2}, {1, 3}), Tensor::full({2}, 1.0), Tensor::zeros({2}));
  CHECK(std::abs(two.data()[0] + 1.0) < 1e-3);
  CHECK(std::abs(two.data()[1] - 1.0) < 1e-3);

  const Tensor bias = Tensor::from({4}, {0.1, -0.2, 0.3, 0.4});
  const Tensor z = layer_norm(Tensor::zeros({4}), g, bias);
  for (std::size_t i = 0; i < 4; ++i) CHECK(z.data()[i] == bias.data()[i]);

  const Tensor x = random_tensor({5, 8}, 6, false);
  const Tensor y = layer_norm(x, Tensor::full({8}, 1.0), Tensor::zeros({8}));
  for (std::size_t r = 0; r < 5; ++r) {
    double mean = 0.0, var = 0.0;
    for (std::size_t c2 = 0; c2 < 8; ++c2) mean += y.at({r, c2}) / 8.0;
    for (std::size_t c2 = 0; c2 < 8; ++c2) var += (y.at({r, c2}) - mean) * (y.at({r, c2}) - mean) / 8.0;
    CHECK(std::abs(mean) < 1e-6);
    // eps = 1e-5 in the denominator shifts the variance slightly below 1.
    CHECK(std::abs(var - 1.0) < 1e-3);
  }
}

TEST_CASE("backward fixtures") {
  Tensor x = random_tensor({2, 3}, 7);
  sum(x).backward();
  for (double g : x.grad()) CHECK(g == 1.0);

  Tensor y = Tensor::from({2}, {1, 2}, true);
  sum(y * y).backward();
  CHECK(std::vector<double>(y.grad().begin(), y.grad().end()) == std::vector<double>{2, 4});

  CHECK_THROWS_AS(backward(y * y), ContractError);
}

TEST_CASE("fan-out sums gradients exactly") {
  Tensor x = random_tensor({4}, 8);
  auto f = [&] { return sum(exp(x)); };
  auto g = [&] { return sum(x * x); };
  f().backward();
  const std::vector<double> gf(x.grad().begin(), x.grad().end());
  x.zero_grad();
  g().backward();
  const std::vector<double> gg(x.grad().begin(), x.grad().end());
  x.zero_grad();
  (f() + g()).backward();
  for (std::size_t i = 0; i < 4; ++i) CHECK(x.grad()[i] == gf[i] + gg[i]);
}

TEST_CASE("unreachable parameters receive no gradient") {
  Tensor used = random_tensor({3}, 9);
  Tensor unused = random_tensor({3}, 10);
  sum(used).backward();
  for (double g : unused.grad()) CHECK(g == 0.0);
}

TEST_CASE("tape visits every node once with inputs first") {
  Tensor x = random_tensor({3}, 11);
  const Tensor a = exp(x);
  const Tensor root = sum(a * a + a);
  const Tape tape = Tape::record(root);
  std::set<Node*> seen;
  for (Node* n : tape.nodes()) {
    CHECK(seen.insert(n).second);
    for (const auto& in : n->inputs) {
      if (in->requires_grad) CHECK(seen.count(in.get()) == 1);
    }
  }
  CHECK(tape.nodes().back() == root.node());
}

TEST_CASE("no-grad mode records nothing") {
  Tensor x = random_tensor({3}, 12);
  NoGradGuard guard;
  const Tensor y = exp(x);
  CHECK(!y.requires_grad());
  CHECK(y.node()->inputs.empty());
}

TEST_CASE("every primitive matches finite differences") {
  Tensor a = random_tensor({3, 4}, 20);
  Tensor b = random_tensor({4, 5}, 21);
  Tensor c = random_tensor({3, 4}, 22);
  Tensor row = random_tensor({4}, 23);
  Tensor pos = random_tensor({3, 4}, 24, true, 0.5, 2.0);
  Tensor gain = random_tensor({4}, 25);
  Tensor w = random_tensor({3, 4}, 26, false);
  auto ws = [&](const Tensor& t) {
    const auto v = qeot::testing::uniform_values(t.numel(), 99);
    return weighted_sum(t, v);
  };

  CHECK(check_op([&] { return ws(matmul(a, b)); }, {{"a", a}, {"b", b}}) < 1e-4);
  CHECK(check_op([&] { return ws(a + row); }, {{"a", a}, {"row", row}}) < 1e-4);
  CHECK(check_op([&] { return ws(a - c); }, {{"a", a}, {"c", c}}) < 1e-4);
  CHECK(check_op([&] { return ws(a * row); }, {{"a", a}, {"row", row}}) < 1e-4);
  CHECK(check_op([&] { return ws(sigmoid(a)); }, {{"a", a}}) < 1e-4);
  CHECK(check_op([&] { return ws(relu(a)); }, {{"a", a}}) < 1e-4);
  CHECK(check_op([&] { return ws(exp(a)); }, {{"a", a}}) < 1e-4);
  CHECK(check_op([&] { return ws(log(pos)); }, {{"pos", pos}}) < 1e-4);
  CHECK(check_op([&] { return ws(softmax(a, 0)); }, {{"a", a}}) < 1e-4);
  CHECK(check_op([&] { return ws(softmax(a, 1)); }, {{"a", a}}) < 1e-4);
  CHECK(check_op([&] { return ws(log_softmax(a)); }, {{"a", a}}) < 1e-4);
  CHECK(check_op([&] { return ws(layer_norm(a, gain, row)); }, {{"a", a}, {"gain", gain}, {"bias", row}}) < 1e-4);
  CHECK(check_op([&] { return ws(transpose(a)); }, {{"a", a}}) < 1e-4);
  CHECK(check_op([&] { return ws(permute(reshape(a, {3, 2, 2}), {2, 0, 1})); }, {{"a", a}}) < 1e-4);
  CHECK(check_op([&] { return ws(mean_axis(a, 0)); }, {{"a", a}}) < 1e-4);
  CHECK(check_op([&] { return mean(a * a); }, {{"a", a}}) < 1e-4);
  const Tensor parts[2] = {a, c};
  CHECK(check_op([&] { return ws(concat(std::span<const Tensor>(parts), 1)); }, {{"a", a}, {"c", c}}) < 1e-4);
  const std::size_t rows[3] = {2, 0, 2};
  CHECK(check_op([&] { return ws(take_rows(a, rows)); }, {{"a", a}}) < 1e-4);
  CHECK(check_op([&] { return ws(select_last(a, 1)); }, {{"a", a}}) < 1e-4);
  const int targets[3] = {0, 3, 1};
  CHECK(check_op([&] { return ws(cross_entropy_rows(a, targets)); }, {{"a", a}}) < 1e-4);
  const int ids[3] = {2, 0, 2};
  CHECK(check_op([&] { return ws(embedding(a, ids, {3})); }, {{"a", a}}) < 1e-4);
  CHECK(check_op([&] { return ws(a * 0.5 + w); }, {{"a", a}}) < 1e-4);
}

TEST_CASE("embedding rejects out-of-vocabulary ids") {
  const Tensor table = Tensor::zeros({4, 2});
  const int bad[1] = {4};
  CHECK_THROWS_AS(embedding(table, bad, {1}), DataError);
  const int neg[1] = {-1};
  CHECK_THROWS_AS(embedding(table, neg, {1}), DataError);
}

TEST_CASE("grad_check reports the worst offender by name") {
  Tensor x = random_tensor({3}, 30);
  // Wrong backward on purpose: claims d/dx (x^3) = x^2.
  auto bad_cube = [&] {
    const std::vector<double> v(x.data().begin(), x.data().end());
    std::vector<double> out(v.size());
    for (std::size_t i = 0; i < v.size(); ++i) out[i] = v[i] * v[i] * v[i];
    return sum(make_result("bad_cube", x.shape(), out, {x}, [](Node& self) {
      auto& g = self.inputs[0]->ensure_grad();
      for (std::size_t i = 0; i < g.size(); ++i) {
        g[i] += self.grad[i] * self.inputs[0]->value[i] * self.inputs[0]->value[i];
      }
    }));
  };
  std::vector<GradProbe> probes = {{"x", x}};
  const GradCheckReport r = grad_check(bad_cube, probes);
  CHECK(r.max_rel_error > 0.5);
  CHECK(r.worst_name == "x");
}

TEST_CASE("linear layer passes grad_check at 1e-6") {
  Tensor x = random_tensor({4, 6}, 40);
  Tensor w = random_tensor({6, 3}, 41);
  Tensor b = random_tensor({3}, 42);
  const auto v = qeot::testing::uniform_values(12, 43);
  std::vector<GradProbe> probes = {{"x", x}, {"w", w}, {"b", b}};
  const auto r = grad_check([&] { return weighted_sum(matmul(x, w) + b, v); }, probes);
  CHECK(r.max_rel_error < 1e-6);
}
