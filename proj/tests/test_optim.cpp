#include <doctest.h>

#include <cmath>
#include <limits>

#include "mcthfr/optim.hpp"

using namespace mcthfr;

namespace {

AdamW<double> make_opt(const TensorPtr<double>& p, AdamWSettings s) {
  AdamW<double> opt(s);
  opt.register_params({{"p", p}});
  return opt;
}

}  // namespace

TEST_CASE("zero gradient with zero decay leaves parameters unchanged") {
  auto p = make_tensor<double>({1, 3}, {1.0, -2.0, 0.5}, true);
  AdamWSettings s;
  s.weight_decay = 0.0;
  auto opt = make_opt(p, s);
  p->zero_grad();
  opt.step();
  CHECK(p->values[0] == 1.0);
  CHECK(p->values[1] == -2.0);
  CHECK(p->values[2] == 0.5);
}

TEST_CASE("zero gradient with decay scales parameters by 1 - lr*wd") {
  auto p = make_tensor<double>({1, 2}, {1.0, -4.0}, true);
  AdamWSettings s;
  s.lr = 1e-4;
  s.weight_decay = 0.01;
  auto opt = make_opt(p, s);
  p->zero_grad();
  opt.step();
  CHECK(p->values[0] == doctest::Approx(0.999999).epsilon(1e-12));
  CHECK(p->values[1] == doctest::Approx(-4.0 * 0.999999).epsilon(1e-12));
}

TEST_CASE("single-step update matches the closed-form reference") {
  AdamWSettings s;
  s.lr = 1e-3;
  s.weight_decay = 0.0;
  auto p = make_tensor<double>({1}, {0.7}, true);
  auto opt = make_opt(p, s);
  p->grad[0] = 1.0;
  opt.step();
  // step 1, g = 1: m_hat = 1, v_hat = 1 -> update = -lr / (1 + eps)
  const double m = (1 - s.beta1) * 1.0;
  const double v = (1 - s.beta2) * 1.0;
  const double mhat = m / (1 - s.beta1);
  const double vhat = v / (1 - s.beta2);
  const double expect = 0.7 - s.lr * mhat / (std::sqrt(vhat) + s.eps);
  CHECK(p->values[0] == doctest::Approx(expect).epsilon(1e-12));
}

TEST_CASE("two steps agree with a hand-rolled reference loop") {
  AdamWSettings s;
  s.lr = 0.01;
  s.weight_decay = 0.02;
  auto p = make_tensor<double>({1}, {1.5}, true);
  auto opt = make_opt(p, s);

  double ref = 1.5, m = 0, v = 0;
  const double grads[2] = {0.3, -0.8};
  for (int t = 1; t <= 2; ++t) {
    p->grad[0] = grads[t - 1];
    opt.step();
    ref *= 1 - s.lr * s.weight_decay;
    m = s.beta1 * m + (1 - s.beta1) * grads[t - 1];
    v = s.beta2 * v + (1 - s.beta2) * grads[t - 1] * grads[t - 1];
    const double mhat = m / (1 - std::pow(s.beta1, t));
    const double vhat = v / (1 - std::pow(s.beta2, t));
    ref -= s.lr * mhat / (std::sqrt(vhat) + s.eps);
    CHECK(p->values[0] == doctest::Approx(ref).epsilon(1e-14));
  }
}

TEST_CASE("non-finite gradients are rejected naming the parameter") {
  auto p = make_tensor<double>({1, 2}, {0.0, 0.0}, true);
  AdamW<double> opt;
  opt.register_params({{"encoder.conv_w.a", p}});
  p->grad[0] = std::numeric_limits<double>::quiet_NaN();
  CHECK_THROWS_WITH_AS(opt.step(), doctest::Contains("encoder.conv_w.a"), std::runtime_error);
}
