#include <cmath>
#include <limits>

#include "doctest.h"
#include "spdnn/errors.hpp"
#include "spdnn/optim.hpp"

using namespace spdnn;

namespace {

template <typename S>
ParameterStore<S> store_of(std::initializer_list<Matrix<S>> values) {
  ParameterStore<S> store;
  int i = 0;
  for (const auto& v : values)
    store.params().push_back(
        {"n" + std::to_string(i++), "weight", v, Matrix<S>::Zero(v.rows(), v.cols())});
  return store;
}

}  // namespace

TEST_CASE("zero gradient with zero velocity is a fixed point") {
  auto store = store_of<float>({Matrix<float>::Constant(2, 3, 1.5f), Matrix<float>::Ones(4, 1)});
  const auto before = store.params();
  nesterov_step(store, {Matrix<float>::Zero(2, 3), Matrix<float>::Zero(4, 1)}, 0.01, 0.9);
  for (std::size_t i = 0; i < before.size(); ++i) {
    CHECK(store.params()[i].value == before[i].value);
    CHECK(store.params()[i].velocity.isZero(0));
  }
}

TEST_CASE("momentum zero is plain gradient descent") {
  Matrix<double> theta(2, 2), g(2, 2);
  theta << 1, -2, 0.5, 3;
  g << 0.3, -0.1, 2, 0;
  auto store = store_of<double>({theta});
  for (int step = 0; step < 5; ++step) {
    nesterov_step(store, {g}, 0.05, 0.0);
    theta = theta - 0.05 * g;
    CHECK(store.params()[0].value == theta);
  }
}

TEST_CASE("update rule") {
  // v <- mu v - lr g ; theta <- theta + mu v - lr g, evaluated by hand.
  auto store = store_of<double>({Matrix<double>::Constant(1, 1, 1.0)});
  store.params()[0].velocity(0, 0) = 0.5;
  nesterov_step(store, {Matrix<double>::Constant(1, 1, 2.0)}, 0.1, 0.9);
  const double v = 0.9 * 0.5 - 0.1 * 2.0;
  CHECK(store.params()[0].velocity(0, 0) == v);
  CHECK(store.params()[0].value(0, 0) == 1.0 + (0.9 * v - 0.1 * 2.0));
}

TEST_CASE("quadratic bowl converges") {
  // f(theta) = theta^2, gradient 2 theta; scalar oracle alongside.
  auto store = store_of<double>({Matrix<double>::Constant(1, 1, 1.0)});
  double theta = 1.0, v = 0.0;
  for (int step = 0; step < 200; ++step) {
    const double g = 2 * store.params()[0].value(0, 0);
    nesterov_step(store, {Matrix<double>::Constant(1, 1, g)}, 0.1, 0.9);
    const double og = 2 * theta;
    v = 0.9 * v - 0.1 * og;
    theta = theta + (0.9 * v - 0.1 * og);
  }
  // Same recurrence; only fused multiply-add contraction may differ.
  CHECK(std::abs(store.params()[0].value(0, 0) - theta) < 1e-15);
  CHECK(std::abs(theta) < 1e-3);
  CHECK(std::abs(store.params()[0].value(0, 0)) < 1e-3);
}

TEST_CASE("non-finite gradients are rejected before anything moves") {
  auto store = store_of<float>({Matrix<float>::Ones(2, 2), Matrix<float>::Ones(1, 1)});
  Matrix<float> bad = Matrix<float>::Zero(1, 1);
  bad(0, 0) = std::numeric_limits<float>::quiet_NaN();
  try {
    nesterov_step(store, {Matrix<float>::Ones(2, 2), bad}, 0.1, 0.9);
    FAIL("expected NumericError");
  } catch (const NumericError& e) {
    CHECK(e.where().find("n1") != std::string::npos);
  }
  CHECK(store.params()[0].value.isOnes(0));
  CHECK(store.params()[0].velocity.isZero(0));
}

TEST_CASE("gradient shapes must match") {
  auto store = store_of<float>({Matrix<float>::Ones(2, 2)});
  CHECK_THROWS_AS(nesterov_step(store, {Matrix<float>::Ones(2, 1)}, 0.1, 0.9), ShapeError);
  CHECK_THROWS_AS(nesterov_step(store, {}, 0.1, 0.9), ShapeError);
}
