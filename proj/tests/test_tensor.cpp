#include <doctest.h>

#include <cmath>

#include "oracles.hpp"
#include "ovv/random.hpp"
#include "ovv/tensor.hpp"

using namespace ovv;

namespace {

std::vector<double> values(const Tensor& t) { return {t.data().begin(), t.data().end()}; }

}  // namespace

TEST_CASE("affine forward") {
  auto out = affine(Tensor::from({1, 2}, {1, 2}), Tensor::from({2, 2}, {1, 0, 0, 1}), Tensor::from({2}, {0, 0}));
  CHECK(values(out) == std::vector<double>{1, 2});

  out = affine(Tensor::from({1, 2}, {1, 1}), Tensor::from({2, 1}, {2, 3}), Tensor::from({1}, {1}));
  CHECK(out.item() == 6.0);

  out = affine(Tensor::zeros({3, 2}), Tensor::from({2, 2}, {5, -1, 7, 2}), Tensor::zeros({2}));
  for (double v : out.data()) CHECK(v == 0.0);

  CHECK_THROWS_AS(affine(Tensor::zeros({1, 3}), Tensor::zeros({2, 2}), Tensor::zeros({2})), Error);
}

TEST_CASE("activations") {
  CHECK(sigmoid(Tensor::scalar(0.0)).item() == 0.5);
  CHECK(relu(Tensor::scalar(-1.0)).item() == 0.0);
  CHECK(relu(Tensor::scalar(2.5)).item() == 2.5);
  const auto s = softmax(Tensor::from({1, 3}, {0, 0, 0}));
  for (double v : s.data()) CHECK(v == doctest::Approx(1.0 / 3.0).epsilon(1e-15));

  // Large logits stay finite and normalised.
  const auto big = softmax(Tensor::from({1, 2}, {1000, 0}));
  CHECK(big.data()[0] == doctest::Approx(1.0));
  CHECK(sigmoid(Tensor::scalar(-800.0)).item() >= 0.0);

  try {
    sigmoid(Tensor::scalar(NAN));
    FAIL("expected non-finite error");
  } catch (const Error& e) {
    CHECK(e.category() == ErrorCategory::non_finite);
  }
}

TEST_CASE("backward on scalar roots") {
  auto x = Tensor::scalar(3.0, true);
  backward(sum(square(x)));
  CHECK(x.grad()[0] == 6.0);

  auto z = Tensor::scalar(0.0, true);
  backward(sum(sigmoid(z)));
  CHECK(z.grad()[0] == 0.25);

  auto v = Tensor::from({2}, {1, 2}, true);
  CHECK_THROWS_AS(backward(square(v)), Error);
}

TEST_CASE("gradients accumulate over shared inputs") {
  auto x = Tensor::from({2}, {1.5, -2.0}, true);
  // d/dx sum(x*x + x) = 2x + 1
  backward(sum(add(mul(x, x), x)));
  CHECK(x.grad()[0] == doctest::Approx(4.0));
  CHECK(x.grad()[1] == doctest::Approx(-3.0));
}

TEST_CASE("random two-layer MLP matches finite differences") {
  for (std::uint64_t seed = 1; seed <= 5; ++seed) {
    Rng rng(seed);
    const std::size_t n = 4, d = 3, h = 5;
    std::vector<double> x(n * d), w1(d * h), b1(h), w2(h), b2(1);
    for (auto* v : {&x, &w1, &b1, &w2, &b2})
      for (double& e : *v) e = rng.uniform(-1.0, 1.0);
    std::vector<double> targets = {1, 0, 0, 1};

    const auto loss_of = [&](const std::vector<double>& w1v, bool grad, Tensor* w1_out) {
      Tensor tw1 = Tensor::from({d, h}, w1v, grad);
      Tensor hidden = relu(affine(Tensor::from({n, d}, x), tw1, Tensor::from({h}, b1)));
      Tensor p = sigmoid(affine(hidden, Tensor::from({h, 1}, w2), Tensor::from({1}, b2)));
      Tensor loss = binary_cross_entropy_sum(p, targets, 0.7, 0.3, 1e-12);
      if (w1_out) *w1_out = tw1;
      return loss;
    };
    Tensor tw1;
    backward(loss_of(w1, true, &tw1));
    const auto numeric = oracle::numeric_gradient([&](const std::vector<double>& w) { return loss_of(w, false, nullptr).item(); }, w1);
    for (std::size_t k = 0; k < w1.size(); ++k) {
      CHECK(std::fabs(tw1.grad()[k] - numeric[k]) <= 1e-4 * std::max(1.0, std::fabs(numeric[k])));
    }
  }
}

TEST_CASE("log_clamped and cross-entropy clamp") {
  auto p = Tensor::from({2}, {0.0, 1.0}, true);
  const std::vector<double> t = {1.0, 0.0};
  const auto loss = binary_cross_entropy_sum(p, t, 1.0, 1.0, 1e-12);
  CHECK(std::isfinite(loss.item()));
  CHECK(loss.item() == doctest::Approx(-2.0 * std::log(1e-12)));
  backward(loss);
  // Clamped entries carry no gradient.
  CHECK(p.grad()[0] == 0.0);
  CHECK(p.grad()[1] == 0.0);
  CHECK(std::isfinite(log_clamped(Tensor::scalar(0.0), 1e-12).item()));
}

TEST_CASE("sgd step and schedule") {
  SgdConfig cfg{0.1, 100, 0.98};
  auto w = Tensor::scalar(1.0, true);
  backward(scale(w, 0.5));
  std::vector<Tensor> params{w};
  sgd_step(params, cfg, 1);
  CHECK(w.item() == doctest::Approx(0.95).epsilon(1e-15));
  CHECK(w.grad()[0] == 0.0);

  // Zero gradient leaves the weight alone.
  sgd_step(params, cfg, 1);
  CHECK(w.item() == doctest::Approx(0.95).epsilon(1e-15));

  SgdConfig halving{1.0, 10, 0.5};
  CHECK(learning_rate_at(halving, 10) == 1.0);
  CHECK(learning_rate_at(halving, 11) == 0.5);
  CHECK(learning_rate_at(halving, 13) == 0.125);
  CHECK(learning_rate_at(SgdConfig{}, 1) == 0.001);

  CHECK_THROWS_AS((SgdConfig{0.0, 10, 0.5}.validate()), Error);
  CHECK_THROWS_AS((SgdConfig{0.1, 10, 1.5}.validate()), Error);
}

TEST_CASE("parameter payload round trip") {
  Rng rng(7);
  std::vector<Tensor> params;
  for (Shape s : {Shape{3, 4}, Shape{4}, Shape{2, 1}}) {
    std::vector<double> v(shape_size(s));
    for (double& e : v) e = rng.normal();
    params.push_back(Tensor::from(s, v, true));
  }
  const auto bytes = serialize_params(params);
  const auto back = deserialize_params(bytes);
  REQUIRE(back.size() == params.size());
  for (std::size_t i = 0; i < params.size(); ++i) {
    CHECK(back[i].shape() == params[i].shape());
    CHECK(values(back[i]) == values(params[i]));
  }

  const auto empty = serialize_params({});
  CHECK(deserialize_params(empty).empty());

  for (std::size_t cut : {std::size_t{3}, std::size_t{20}, bytes.size() - 1}) {
    try {
      deserialize_params(std::string_view(bytes).substr(0, cut));
      FAIL("truncated payload accepted");
    } catch (const Error& e) {
      CHECK(e.category() == ErrorCategory::format);
    }
  }
  CHECK_THROWS_AS(deserialize_params(bytes + "x"), Error);
  std::string bad = bytes;
  bad[0] = 'X';
  CHECK_THROWS_AS(deserialize_params(bad), Error);
}

TEST_CASE("clone and detach") {
  auto a = Tensor::from({2}, {1, 2}, true);
  auto c = a.clone();
  c.mutable_data()[0] = 9;
  CHECK(a.data()[0] == 1);
  CHECK_FALSE(a.detach().requires_grad());
}
