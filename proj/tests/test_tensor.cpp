#include <doctest.h>

#include <cmath>
#include <limits>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "gopt/error.hpp"
#include "gopt/random.hpp"
#include "gopt/tensor.hpp"
#include "helpers.hpp"

using namespace gopt;
using testing::random_tensor;

namespace {

std::vector<double> values(const Tensor& t) { return {t.data().begin(), t.data().end()}; }

}  // namespace

TEST_CASE("matmul: identity and hand-computed product") {
  Tape tape;
  const Tensor eye = Tensor::from({2, 2}, {1, 0, 0, 1});
  const Tensor m = Tensor::from({2, 2}, {0.5, -2, 3.25, 7});
  CHECK(values(matmul(tape, eye, m)) == values(m));

  const Tensor a = Tensor::from({2, 2}, {1, 2, 3, 4});
  const Tensor ones = Tensor::from({2, 1}, {1, 1});
  const Tensor c = matmul(tape, a, ones);
  CHECK(c.shape() == Shape{2, 1});
  CHECK(values(c) == std::vector<double>{3, 7});
}

TEST_CASE("matmul: triple-loop oracle on random 3x4 by 4x2") {
  Rng rng(11);
  Tape tape;
  const Tensor a = random_tensor(rng, {3, 4});
  const Tensor b = random_tensor(rng, {4, 2});
  const Tensor c = matmul(tape, a, b);
  for (std::size_t i = 0; i < 3; ++i) {
    for (std::size_t j = 0; j < 2; ++j) {
      double ref = 0.0;
      for (std::size_t k = 0; k < 4; ++k) ref += a.at(i, k) * b.at(k, j);
      CHECK(std::abs(c.at(i, j) - ref) <= 1e-12);
    }
  }
}

TEST_CASE("matmul: shape mismatch names both shapes") {
  Tape tape;
  const Tensor a = Tensor::zeros({2, 3});
  const Tensor b = Tensor::zeros({2, 3});
  try {
    matmul(tape, a, b);
    FAIL("expected DimensionError");
  } catch (const DimensionError& e) {
    const std::string msg = e.what();
    CHECK(msg.find("[2x3]") != std::string::npos);
  }
}

TEST_CASE("softmax_rows: symmetric, stable, and matches the direct formula") {
  Tape tape;
  const Tensor s = softmax_rows(tape, Tensor::from({3, 3}, {0, 0, 0, 1000, 0, -1000, 1, 2, 3}));
  for (std::size_t j = 0; j < 3; ++j) CHECK(std::abs(s.at(0, j) - 1.0 / 3.0) <= 1e-12);
  CHECK(std::abs(s.at(1, 0) - 1.0) <= 1e-12);
  CHECK(std::abs(s.at(1, 1)) <= 1e-12);
  const double z = std::exp(1.0) + std::exp(2.0) + std::exp(3.0);
  for (std::size_t j = 0; j < 3; ++j) CHECK(std::abs(s.at(2, j) - std::exp(j + 1.0) / z) <= 1e-12);
}

TEST_CASE("softmax_rows: rows sum to one for finite inputs of any magnitude") {
  Rng rng(5);
  Tape tape;
  for (double scale_ : {1e-3, 1.0, 50.0, 700.0, 1e5}) {
    const Tensor x = random_tensor(rng, {6, 9}, -scale_, scale_);
    const Tensor s = softmax_rows(tape, x);
    for (std::size_t i = 0; i < 6; ++i) {
      double total = 0.0;
      for (std::size_t j = 0; j < 9; ++j) {
        CHECK(s.at(i, j) >= 0.0);
        total += s.at(i, j);
      }
      CHECK(std::abs(total - 1.0) <= 1e-12);
    }
  }
}

TEST_CASE("softmax_rows: masked keys get exactly zero and the rest renormalise") {
  Tape tape;
  const Mask mask{1, 0, 1, 0};
  const Tensor s = softmax_rows(tape, Tensor::from({2, 4}, {1, 50, 2, -3, 0.5, 0.1, 0.5, 9}), mask);
  for (std::size_t i = 0; i < 2; ++i) {
    CHECK(s.at(i, 1) == 0.0);
    CHECK(s.at(i, 3) == 0.0);
    CHECK(std::abs(s.at(i, 0) + s.at(i, 2) - 1.0) <= 1e-12);
  }
  CHECK(std::abs(s.at(1, 0) - 0.5) <= 1e-12);
}

TEST_CASE("softmax_rows: NaN input is a numeric error") {
  Tape tape;
  const double nan = std::numeric_limits<double>::quiet_NaN();
  CHECK_THROWS_AS(softmax_rows(tape, Tensor::from({1, 3}, {0.0, nan, 1.0})), NumericError);
}

TEST_CASE("layer_norm: constant rows, zero gain, and normalised moments") {
  Tape tape;
  const Tensor ones = Tensor::from({4}, {1, 1, 1, 1});
  const Tensor zeros = Tensor::zeros({4});
  const Tensor c = layer_norm(tape, Tensor::from({1, 4}, {3, 3, 3, 3}), ones, zeros);
  for (double v : c.data()) CHECK(v == 0.0);

  const Tensor bias = Tensor::from({4}, {0.5, -1, 2, 0});
  const Tensor g0 = layer_norm(tape, Tensor::from({2, 4}, {1, 5, -2, 8, 0, 0, 1, 3}), zeros, bias);
  for (std::size_t i = 0; i < 2; ++i)
    for (std::size_t j = 0; j < 4; ++j) CHECK(g0.at(i, j) == bias[j]);

  Rng rng(9);
  const Tensor x = random_tensor(rng, {1, 8}, -3, 3);
  const Tensor y = layer_norm(tape, x, Tensor::from({8}, std::vector<double>(8, 1.0)), Tensor::zeros({8}));
  auto moments = [](std::span<const double> v) {
    double mean = 0.0, var = 0.0;
    for (double e : v) mean += e;
    mean /= static_cast<double>(v.size());
    for (double e : v) var += (e - mean) * (e - mean);
    return std::pair{mean, var / static_cast<double>(v.size())};
  };
  const auto [mean, var] = moments(y.data());
  const double in_var = moments(x.data()).second;
  CHECK(std::abs(mean) <= 1e-9);
  // eps = 1e-5 inside the square root shrinks the variance slightly.
  CHECK(std::abs(var - in_var / (in_var + 1e-5)) <= 1e-12);
}

TEST_CASE("layer_norm: zero width is a dimension error") {
  Tape tape;
  CHECK_THROWS_AS(layer_norm(tape, Tensor::zeros({3, 0}), Tensor::zeros({0}), Tensor::zeros({0})),
                  DimensionError);
}

TEST_CASE("backward: sum gives ones, mean-squared error gives 2x/n") {
  Tape tape;
  Tensor x = Tensor::from({2, 3}, {1, -2, 3, 0.5, 7, -1}, true);
  Tensor s = sum(tape, x);
  tape.backward(s);
  for (double g : x.grad()) CHECK(g == 1.0);

  Tape tape2;
  Tensor y = Tensor::from({2}, {1, 2}, true);
  Tensor loss = mean(tape2, mul(tape2, y, y));
  tape2.backward(loss);
  CHECK(y.grad()[0] == doctest::Approx(1.0).epsilon(1e-15));
  CHECK(y.grad()[1] == doctest::Approx(2.0).epsilon(1e-15));
}

TEST_CASE("backward: non-scalar loss is a contract error") {
  Tape tape;
  Tensor x = Tensor::from({2}, {1, 2}, true);
  Tensor y = scale(tape, x, 2.0);
  CHECK_THROWS_AS(tape.backward(y), ContractError);
}

TEST_CASE("masked reductions ignore masked elements in value and gradient") {
  Tape tape;
  Tensor x = Tensor::from({4}, {1, 100, 3, -50}, true);
  const Mask mask{1, 0, 1, 0};
  Tensor m = mean(tape, x, mask);
  CHECK(m.item() == 2.0);
  tape.backward(m);
  CHECK(std::vector<double>(x.grad().begin(), x.grad().end()) == std::vector<double>{0.5, 0.0, 0.5, 0.0});

  Tape t2;
  CHECK(sum(t2, x, mask).item() == 4.0);
  CHECK_THROWS_AS(mean(t2, x, Mask{0, 0, 0, 0}), ContractError);
}

TEST_CASE("column_mean over selected rows") {
  Tape tape;
  const Tensor x = Tensor::from({3, 2}, {1, 10, 2, 20, 4, 40});
  const Tensor all = column_mean(tape, x);
  CHECK(all.shape() == Shape{2});
  CHECK(all[0] == doctest::Approx(7.0 / 3.0));
  const Tensor some = column_mean(tape, x, Mask{1, 0, 1});
  CHECK(some[0] == 2.5);
  CHECK(some[1] == 25.0);
}

TEST_CASE("inference tape records nothing") {
  Tape tape(Tape::Mode::inference);
  Tensor w = Tensor::from({2, 2}, {1, 2, 3, 4}, true);
  const Tensor y = relu(tape, matmul(tape, w, w));
  CHECK(tape.size() == 0);
  CHECK_FALSE(y.requires_grad());
}

TEST_CASE("two backward passes over the same tape are bit-identical") {
  Rng rng(3);
  Tensor w = random_tensor(rng, {4, 3}, -1, 1, true);
  Tensor b = random_tensor(rng, {3}, -1, 1, true);
  const Tensor x = random_tensor(rng, {5, 4});
  Tape tape;
  Tensor h = tanh(tape, add_row(tape, matmul(tape, x, w), b));
  Tensor loss = mean(tape, mul(tape, h, softmax_rows(tape, h)));
  tape.backward(loss);
  const std::vector<double> gw1(w.grad().begin(), w.grad().end());
  const std::vector<double> gb1(b.grad().begin(), b.grad().end());
  w.zero_grad();
  b.zero_grad();
  tape.backward(loss);
  const std::vector<double> gw2(w.grad().begin(), w.grad().end());
  const std::vector<double> gb2(b.grad().begin(), b.grad().end());
  CHECK(gw1 == gw2);
  CHECK(gb1 == gb2);
}

TEST_CASE("gradient check: composed graph of every primitive") {
  for (std::uint64_t seed : {1u, 2u, 3u, 4u}) {
    CAPTURE(seed);
    Rng rng(seed);
    std::vector<std::pair<std::string, Tensor>> params{
        {"w", random_tensor(rng, {4, 5}, -1, 1, true)},    {"b", random_tensor(rng, {5}, -1, 1, true)},
        {"g", random_tensor(rng, {5}, 0.5, 1.5, true)},    {"beta", random_tensor(rng, {5}, -1, 1, true)},
        {"table", random_tensor(rng, {6, 5}, -1, 1, true)}, {"v", random_tensor(rng, {5, 3}, -1, 1, true)},
        {"u", random_tensor(rng, {3, 5}, -1, 1, true)},
    };
    const Tensor x = random_tensor(rng, {3, 4}, -2, 2);
    const Tensor target = random_tensor(rng, {6, 3}, -1, 1);
    const std::vector<std::size_t> index{0, 2, 5};
    const Mask key_mask{1, 1, 0, 1, 1, 1};
    const Mask row_mask{1, 0, 1, 1, 1, 0};
    auto loss_fn = [&](Tape& tape) {
      const Tensor& w = params[0].second;
      Tensor h = add_row(tape, matmul(tape, x, w), params[1].second);
      h = layer_norm(tape, h, params[2].second, params[3].second);
      Tensor e = gather_rows(tape, params[4].second, index);
      std::vector<Tensor> rows{tanh(tape, h), sigmoid(tape, e)};
      Tensor stacked = concat_rows(tape, rows);  // 6 x 5
      Tensor att = softmax_rows(tape, scale(tape, matmul(tape, stacked, transpose(tape, stacked)), 0.7), key_mask);
      Tensor ctx = matmul(tape, att, stacked);
      Tensor proj = matmul(tape, relu(tape, add_scalar(tape, ctx, 0.1)), params[5].second);  // 6 x 3
      std::vector<Tensor> cols{slice_cols(tape, proj, 0, 2), slice_cols(tape, matmul(tape, proj, params[6].second), 1, 1)};
      Tensor joined = concat_cols(tape, cols);
      Tensor diff = sub(tape, joined, target);
      Tensor per_col = column_mean(tape, mul(tape, diff, diff), row_mask);
      Tensor tail = slice_rows(tape, stacked, 2, 3);
      return add(tape, mean(tape, per_col), scale(tape, sum(tape, mul(tape, tail, tail)), 0.01));
    };
    const GradCheckResult r = gradient_check(params, loss_fn);
    CAPTURE(r.worst);
    CHECK(r.checked == 4 * 5 + 5 + 5 + 5 + 6 * 5 + 5 * 3 + 3 * 5);
    CHECK(r.max_rel_error <= 1e-3);
  }
}

TEST_CASE("tensor shape and data invariants") {
  CHECK_THROWS_AS(Tensor::from({2, 3}, {1, 2, 3}), DimensionError);
  const Tensor t = Tensor::zeros({2, 3, 4});
  CHECK(t.size() == 24);
  Tensor p = Tensor::from({2, 2}, {1, 2, 3, 4}, true);
  CHECK_FALSE(p.has_grad());
  CHECK(p.grad().size() == p.size());
}
