#include <cmath>
#include <cstring>
#include <sstream>

#include "doctest.h"
#include "secap/gradcheck.hpp"
#include "secap/ops.hpp"
#include "secap/optim.hpp"
#include "secap/random.hpp"
#include "secap/rten.hpp"

using namespace secap;

namespace {

Tensor<double> random_tensor(Shape shape, std::uint64_t seed, double lo = -1.0, double hi = 1.0) {
  Rng rng(seed);
  Tensor<double> t(std::move(shape));
  for (auto& v : t.data()) v = rng.uniform(lo, hi);
  return t;
}

// Weighted sum with fixed random weights, so every output coordinate gets a
// distinct upstream gradient.
Tensor<double> probe_sum(const Tensor<double>& y) {
  const auto w = random_tensor(y.shape(), 4242);
  return sum(mul(y, w));
}

}  // namespace

TEST_CASE("matmul") {
  SUBCASE("identity leaves input unchanged") {
    Tensor<float> a({2, 2}, {1.5f, -2.f, 3.25f, 4.f});
    Tensor<float> eye({2, 2}, {1, 0, 0, 1});
    const auto c = matmul(a, eye);
    CHECK(std::memcmp(c.data().data(), a.data().data(), 4 * sizeof(float)) == 0);
  }
  SUBCASE("hand product") {
    Tensor<double> a({2, 2}, {1, 2, 3, 4});
    Tensor<double> b({2, 2}, {5, 6, 7, 8});
    const auto c = matmul(a, b);
    CHECK(std::vector<double>(c.data().begin(), c.data().end()) == std::vector<double>{19, 22, 43, 50});
  }
  SUBCASE("inner dimension mismatch names both shapes") {
    Tensor<double> a({2, 3}), b({4, 5});
    CHECK_THROWS_WITH_AS(matmul(a, b), doctest::Contains("(2,3) x (4,5)"), DimensionError);
  }
  SUBCASE("batch broadcast matches per-batch loops") {
    const auto a = random_tensor({3, 2, 4}, 1);
    const auto b = random_tensor({1, 4, 5}, 2);
    const auto c = matmul(a, b);
    REQUIRE(c.shape() == Shape{3, 2, 5});
    for (std::size_t n = 0; n < 3; ++n)
      for (std::size_t i = 0; i < 2; ++i)
        for (std::size_t j = 0; j < 5; ++j) {
          double s = 0;
          for (std::size_t k = 0; k < 4; ++k) s += a.data()[(n * 2 + i) * 4 + k] * b.data()[k * 5 + j];
          CHECK(c.data()[(n * 2 + i) * 5 + j] == doctest::Approx(s).epsilon(1e-12));
        }
  }
}

TEST_CASE("softmax_lastdim") {
  Tensor<double> z({2}, {0, 0});
  const auto u = softmax_lastdim(z);
  CHECK(u.data()[0] == doctest::Approx(0.5));
  CHECK(u.data()[1] == doctest::Approx(0.5));

  Tensor<double> x({3}, {1, 2, 3});
  const auto y = softmax_lastdim(x);
  CHECK(std::abs(y.data()[0] - 0.0900) < 1e-4);
  CHECK(std::abs(y.data()[1] - 0.2447) < 1e-4);
  CHECK(std::abs(y.data()[2] - 0.6652) < 1e-4);

  const auto r = random_tensor({5, 7}, 3, -5, 5);
  const auto s = softmax_lastdim(r);
  const auto shifted = softmax_lastdim(add(r, Tensor<double>::scalar(3.7)));
  for (std::size_t i = 0; i < 5; ++i) {
    double row = 0;
    for (std::size_t j = 0; j < 7; ++j) {
      row += s.data()[i * 7 + j];
      CHECK(std::abs(s.data()[i * 7 + j] - shifted.data()[i * 7 + j]) <= 1e-6);
    }
    CHECK(std::abs(row - 1.0) <= 1e-6);
  }
}

TEST_CASE("layer_norm") {
  Tensor<double> ones = Tensor<double>::full({3}, 1.0), zeros({3});
  const auto c = layer_norm(Tensor<double>({1, 3}, {5, 5, 5}), ones, zeros);
  for (double v : c.data()) CHECK(v == 0.0);

  Tensor<double> g2 = Tensor<double>::full({2}, 1.0), b2({2});
  const auto y = layer_norm(Tensor<double>({2}, {1, 3}), g2, b2);
  CHECK(std::abs(y.data()[0] + 1.0) < 1e-5);
  CHECK(std::abs(y.data()[1] - 1.0) < 1e-5);

  const auto z = layer_norm(Tensor<double>({2}, {1, 3}), Tensor<double>({2}), Tensor<double>::full({2}, 7.0));
  CHECK(z.data()[0] == 7.0);
  CHECK(z.data()[1] == 7.0);

  CHECK_THROWS_AS(layer_norm(Tensor<double>({2, 3}), g2, b2), DimensionError);
}

TEST_CASE("gelu") {
  const auto y = gelu(Tensor<double>({3}, {0.0, 1.0, -10.0}));
  CHECK(y.data()[0] == 0.0);
  CHECK(std::abs(y.data()[1] - 0.8413) < 1e-3);
  CHECK(std::abs(y.data()[2]) < 1e-6);
}

TEST_CASE("elementwise and broadcasting") {
  const auto x = random_tensor({2, 3}, 5);
  const auto zero = sub(x, x);
  for (double v : zero.data()) CHECK(v == 0.0);

  const auto s = add(Tensor<double>({2}, {1, 2}), Tensor<double>({2}, {3, 4}));
  CHECK(s.data()[0] == 4.0);
  CHECK(s.data()[1] == 6.0);

  const auto m = mul(Tensor<double>({3}, {1, 2, 3}), Tensor<double>::scalar(2.0));
  CHECK(std::vector<double>(m.data().begin(), m.data().end()) == std::vector<double>{2, 4, 6});

  CHECK_THROWS_AS(add(Tensor<double>({2, 3}), Tensor<double>({2, 4})), DimensionError);

  // [2,1,3] + [4,1] -> [2,4,3] exercises the general strided path.
  const auto a = random_tensor({2, 1, 3}, 6);
  const auto b = random_tensor({4, 1}, 7);
  const auto c = add(a, b);
  REQUIRE(c.shape() == Shape{2, 4, 3});
  for (std::size_t i = 0; i < 2; ++i)
    for (std::size_t j = 0; j < 4; ++j)
      for (std::size_t k = 0; k < 3; ++k)
        CHECK(c.data()[(i * 4 + j) * 3 + k] == a.data()[i * 3 + k] + b.data()[j]);
}

TEST_CASE("concat and split") {
  const auto a = random_tensor({2, 5}, 8);
  const auto single = concat<double>({a}, 0);
  CHECK(std::memcmp(single.data().data(), a.data().data(), 10 * sizeof(double)) == 0);

  const auto row = random_tensor({1, 4}, 9);
  const auto bank = random_tensor({6, 4}, 10);
  const auto joined = concat<double>({row, bank}, 0);
  CHECK(joined.shape() == Shape{7, 4});

  const auto parts = split(joined, 0, {1, 6});
  CHECK(std::memcmp(parts[0].data().data(), row.data().data(), 4 * sizeof(double)) == 0);
  CHECK(std::memcmp(parts[1].data().data(), bank.data().data(), 24 * sizeof(double)) == 0);

  const auto x = random_tensor({2, 3, 4}, 11);
  const auto y = random_tensor({2, 2, 4}, 12);
  const auto mid = split(concat<double>({x, y}, 1), 1, {3, 2});
  CHECK(std::memcmp(mid[0].data().data(), x.data().data(), x.numel() * sizeof(double)) == 0);
  CHECK(std::memcmp(mid[1].data().data(), y.data().data(), y.numel() * sizeof(double)) == 0);

  CHECK_THROWS_AS(concat<double>({x}, 3), DimensionError);
  CHECK_THROWS_AS(concat<double>({x, random_tensor({2, 3, 5}, 1)}, 1), DimensionError);
}

TEST_CASE("backward") {
  Tape<double>::current().clear();
  SUBCASE("sum gives ones") {
    Tensor<double> x({3}, {1, 2, 3});
    x.set_requires_grad();
    backward(sum(x));
    CHECK(std::vector<double>(x.grad().begin(), x.grad().end()) == std::vector<double>{1, 1, 1});
  }
  SUBCASE("sum of squares") {
    Tensor<double> x({2}, {1, 2});
    x.set_requires_grad();
    backward(sum(mul(x, x)));
    CHECK(x.grad()[0] == 2.0);
    CHECK(x.grad()[1] == 4.0);
  }
  SUBCASE("consumed tape") {
    Tensor<double> x({2}, {1, 2});
    x.set_requires_grad();
    const auto loss = sum(mul(x, x));
    backward(loss);
    CHECK_THROWS_AS(backward(loss), ContractError);
  }
  SUBCASE("non-scalar loss") {
    Tensor<double> x({2}, {1, 2});
    x.set_requires_grad();
    CHECK_THROWS_AS(backward(mul(x, x)), ContractError);
    Tape<double>::current().clear();
  }
  SUBCASE("unreachable gradients untouched") {
    Tensor<double> x({2}, {1, 2}), y({2}, {3, 4});
    x.set_requires_grad();
    y.set_requires_grad();
    const auto unused = mul(y, y);
    backward(sum(x));
    CHECK(!y.has_grad());
  }
  SUBCASE("no-grad guard records nothing") {
    Tensor<double> x({2}, {1, 2});
    x.set_requires_grad();
    NoGradGuard guard;
    const auto y = mul(x, x);
    CHECK(Tape<double>::current().size() == 0);
    CHECK_THROWS_AS(backward(sum(y)), ContractError);
  }
}

TEST_CASE("sgd_step") {
  ParameterStore<double> store;
  auto p = store.add("p", Tensor<double>({1}, {1.0}));

  SUBCASE("lr zero is a byte-level no-op") {
    Sgd<double> opt(store, {});
    p.mutable_grad()[0] = 123.456;
    const double before = p.data()[0];
    opt.step(0.0);
    CHECK(std::memcmp(&before, p.data().data(), sizeof(double)) == 0);
    CHECK(!p.has_grad());
  }
  SUBCASE("plain gradient step") {
    Sgd<double> opt(store, {0.0, 0.0});
    p.mutable_grad()[0] = 2.0;
    opt.step(0.1);
    CHECK(p.data()[0] == doctest::Approx(0.8));
  }
  SUBCASE("momentum recurrence") {
    p.data()[0] = 0.0;
    Sgd<double> opt(store, {0.9, 0.0});
    p.mutable_grad()[0] = 1.0;
    opt.step(1.0);
    p.mutable_grad()[0] = 1.0;
    opt.step(1.0);
    CHECK(p.data()[0] == doctest::Approx(-2.9));
  }
  SUBCASE("missing gradient") {
    Sgd<double> opt(store, {});
    CHECK_THROWS_AS(opt.step(0.1), ContractError);
  }
}

TEST_CASE("finite_diff_check") {
  CHECK(finite_diff_check([](const Tensor<double>& x) { return sum(mul(x, x)); },
                          random_tensor({6}, 13)) < 1e-7);

  const std::vector<std::int64_t> labels{0, 3, 2, 1};
  CHECK(finite_diff_check([&](const Tensor<double>& x) { return cross_entropy<double>(x, labels); },
                          random_tensor({4, 5}, 14, -3, 3)) < 1e-6);

  CHECK_THROWS_AS(finite_diff_check([](const Tensor<double>& x) { return mul(x, x); }, random_tensor({3}, 1)),
                  ContractError);
}

TEST_CASE("every differentiable op passes finite differences") {
  using F = std::function<Tensor<double>(const Tensor<double>&)>;
  const auto other = random_tensor({3, 4}, 20);
  const auto row = random_tensor({4}, 21);
  const auto gamma = random_tensor({4}, 22, 0.5, 1.5);
  const auto beta = random_tensor({4}, 23);
  const std::vector<std::size_t> rows{2, 0, 2};
  const std::vector<std::pair<const char*, F>> cases{
      {"add", [&](const Tensor<double>& x) { return probe_sum(add(x, other)); }},
      {"sub-broadcast", [&](const Tensor<double>& x) { return probe_sum(sub(row, x)); }},
      {"mul", [&](const Tensor<double>& x) { return probe_sum(mul(x, x)); }},
      {"mul-broadcast", [&](const Tensor<double>& x) { return probe_sum(mul(x, row)); }},
      {"scale", [&](const Tensor<double>& x) { return probe_sum(scale(x, -1.7)); }},
      {"matmul-left", [&](const Tensor<double>& x) { return probe_sum(matmul(x, permute(other, {1, 0}))); }},
      {"matmul-right", [&](const Tensor<double>& x) { return probe_sum(matmul(permute(other, {1, 0}), x)); }},
      {"matmul-batched", [&](const Tensor<double>& x) {
         const auto b = reshape(x, {3, 2, 2});
         return probe_sum(matmul(b, b));
       }},
      {"softmax", [&](const Tensor<double>& x) { return probe_sum(softmax_lastdim(x)); }},
      {"layer_norm", [&](const Tensor<double>& x) { return probe_sum(layer_norm(x, gamma, beta)); }},
      {"gelu", [&](const Tensor<double>& x) { return probe_sum(gelu(x)); }},
      {"abs", [&](const Tensor<double>& x) { return probe_sum(abs(x)); }},
      {"softplus", [&](const Tensor<double>& x) { return probe_sum(softplus(scale(x, 4.0))); }},
      {"sqrt", [&](const Tensor<double>& x) { return probe_sum(sqrt_clamped(mul(x, x), 1e-12)); }},
      {"sum_lastdim", [&](const Tensor<double>& x) { return probe_sum(sum_lastdim(x)); }},
      {"mean", [&](const Tensor<double>& x) { return mean(mul(x, x)); }},
      {"permute", [&](const Tensor<double>& x) { return probe_sum(permute(reshape(x, {3, 2, 2}), {2, 0, 1})); }},
      {"broadcast_to", [&](const Tensor<double>& x) { return probe_sum(broadcast_to(reshape(x, {1, 3, 4}), {2, 3, 4})); }},
      {"concat", [&](const Tensor<double>& x) { return probe_sum(concat<double>({x, other, x}, 1)); }},
      {"slice", [&](const Tensor<double>& x) { return probe_sum(slice(x, 1, 1, 2)); }},
      {"index_select", [&](const Tensor<double>& x) { return probe_sum(index_select<double>(x, rows)); }},
      {"cross_entropy", [&](const Tensor<double>& x) {
         const std::vector<std::int64_t> labels{1, 3, 0};
         return cross_entropy<double>(x, labels);
       }},
  };
  for (std::size_t i = 0; i < cases.size(); ++i) {
    CAPTURE(cases[i].first);
    CHECK(finite_diff_check(cases[i].second, random_tensor({3, 4}, 100 + i)) < 1e-6);
  }
}

TEST_CASE("finite scan flags NaN outputs") {
  set_finite_checks(true);
  Tensor<double> x({2}, {1.0, std::nan("")});
  CHECK_THROWS_AS(scale(x, 2.0), NumericError);
  CHECK_NOTHROW(scale(Tensor<double>({2}, {1.0, 2.0}), 2.0));
  set_finite_checks(false);
}

TEST_CASE("rten round trip") {
  const auto t = cast<float>(random_tensor({2, 3, 4}, 30));
  std::stringstream buf;
  write_rten(buf, t);
  const std::string bytes = buf.str();
  CHECK(bytes.substr(0, 4) == "RTEN");
  CHECK(bytes[4] == 1);
  CHECK(bytes[5] == 0);
  CHECK(bytes[6] == 3);
  CHECK(bytes.size() == 7 + 3 * 8 + 24 * 4);
  RtenHeader header;
  const auto back = read_rten<float>(buf, &header);
  CHECK(header.dtype == DType::F32);
  CHECK(back.shape() == t.shape());
  CHECK(std::memcmp(back.data().data(), t.data().data(), 24 * sizeof(float)) == 0);

  std::stringstream bad("RTEX\x01");
  CHECK_THROWS_AS(read_rten<float>(bad), IoError);
}
