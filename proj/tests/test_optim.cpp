#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>

#include "dfkd/optim.hpp"
#include "dfkd/rng.hpp"

using namespace dfkd;

TEST_CASE("cosine schedule endpoints and midpoint") {
  CHECK(cosine_lr(0, 100, 0.1) == doctest::Approx(0.1));
  CHECK(cosine_lr(100, 100, 0.1) == doctest::Approx(0.0).epsilon(1e-12));
  CHECK(cosine_lr(50, 100, 0.1) == doctest::Approx(0.05));
  CHECK_THROWS_AS(cosine_lr(101, 100, 0.1), std::invalid_argument);
  CHECK_THROWS_AS(cosine_lr(0, 0, 0.1), std::invalid_argument);
}

TEST_CASE("cosine schedule never increases") {
  double prev = cosine_lr(0, 333, 1e-3);
  for (std::size_t s = 1; s <= 333; ++s) {
    const double now = cosine_lr(s, 333, 1e-3);
    CHECK(now <= prev + 1e-15);
    prev = now;
  }
}

TEST_CASE("adam first step approximates a sign step") {
  std::map<std::string, Tensor> params{{"w", Tensor({3}, {1.0f, 2.0f, 3.0f})}};
  std::map<std::string, Tensor> grads{{"w", Tensor({3}, {0.5f, -0.2f, 4.0f})}};
  AdamState state;
  adam_step(params, grads, state, AdamConfig{}, 0.01);
  const Tensor& w = params.at("w");
  CHECK(double(w[0]) == doctest::Approx(1.0 - 0.01).epsilon(1e-4));
  CHECK(double(w[1]) == doctest::Approx(2.0 + 0.01).epsilon(1e-4));
  CHECK(double(w[2]) == doctest::Approx(3.0 - 0.01).epsilon(1e-4));
  CHECK(state.step == 1);
}

TEST_CASE("adam leaves parameters alone on zero gradients") {
  std::map<std::string, Tensor> params{{"w", Tensor({2}, {1.5f, -2.5f})}};
  std::map<std::string, Tensor> grads{{"w", Tensor({2})}};
  AdamState state;
  for (int i = 0; i < 5; ++i) adam_step(params, grads, state, AdamConfig{}, 0.1);
  CHECK(params.at("w")[0] == 1.5f);
  CHECK(params.at("w")[1] == -2.5f);
}

TEST_CASE("adam runs are bitwise reproducible") {
  Rng rng(32);
  Tensor w0({16});
  rng.fill_normal(w0);
  auto run = [&]() {
    std::map<std::string, Tensor> params{{"w", w0}};
    AdamState state;
    Rng grng(99);
    for (int i = 0; i < 20; ++i) {
      Tensor g({16});
      grng.fill_normal(g);
      std::map<std::string, Tensor> grads{{"w", std::move(g)}};
      adam_step(params, grads, state, AdamConfig{}, 1e-3);
    }
    return params.at("w");
  };
  const Tensor a = run(), b = run();
  for (std::size_t i = 0; i < a.size(); ++i) CHECK(a[i] == b[i]);
}

TEST_CASE("nesterov with zero momentum is plain gradient descent") {
  std::map<std::string, Tensor> params{{"w", Tensor({2}, {1.0f, -1.0f})}};
  std::map<std::string, Tensor> grads{{"w", Tensor({2}, {2.0f, -4.0f})}};
  NesterovState state;
  nesterov_step(params, grads, state, 0.0, 0.1);
  CHECK(double(params.at("w")[0]) == doctest::Approx(1.0 - 0.2));
  CHECK(double(params.at("w")[1]) == doctest::Approx(-1.0 + 0.4));
}

TEST_CASE("nesterov first step is amplified by the momentum lookahead") {
  std::map<std::string, Tensor> params{{"w", Tensor({1}, {0.0f})}};
  std::map<std::string, Tensor> grads{{"w", Tensor({1}, {1.0f})}};
  NesterovState state;
  nesterov_step(params, grads, state, 0.9, 0.1);
  CHECK(double(params.at("w")[0]) == doctest::Approx(-(1.0 + 0.9) * 0.1));
}

TEST_CASE("nesterov velocity approaches the geometric limit") {
  std::map<std::string, Tensor> params{{"w", Tensor({1}, {0.0f})}};
  NesterovState state;
  const double mu = 0.9, lr = 0.01, g = 2.0;
  for (int i = 0; i < 400; ++i) {
    std::map<std::string, Tensor> grads{{"w", Tensor({1}, {float(g)})}};
    nesterov_step(params, grads, state, mu, lr);
  }
  CHECK(double(std::abs(state.velocity.at("w")[0])) ==
        doctest::Approx(lr * g / (1.0 - mu)).epsilon(1e-3));
}

TEST_CASE("optimizers reject non-finite gradients by name") {
  std::map<std::string, Tensor> params{{"w", Tensor({1}, {0.0f})}};
  Tensor bad({1}, {std::numeric_limits<float>::quiet_NaN()});
  std::map<std::string, Tensor> grads{{"w", bad}};
  AdamState astate;
  NesterovState nstate;
  try {
    adam_step(params, grads, astate, AdamConfig{}, 0.1);
    FAIL("expected an exception");
  } catch (const std::runtime_error& e) {
    CHECK(std::string(e.what()).find("w") != std::string::npos);
  }
  CHECK_THROWS_AS(nesterov_step(params, grads, nstate, 0.9, 0.1),
                  std::runtime_error);

  std::map<std::string, Tensor> unknown{{"missing", Tensor({1})}};
  CHECK_THROWS_AS(adam_step(params, unknown, astate, AdamConfig{}, 0.1),
                  std::runtime_error);
}
