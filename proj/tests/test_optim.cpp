#include <cmath>

#include "doctest.h"
#include "helpers.hpp"
#include "lsanet/optim.hpp"

using namespace lsanet;
using testutil::random_tensor;

TEST_CASE("lr schedule: 0.002 with 0.7 decay every 40 epochs, floored at 1e-5") {
  LrSchedule s;
  CHECK(s.lr_for_epoch(0) == doctest::Approx(0.002).epsilon(1e-12));
  CHECK(s.lr_for_epoch(39) == doctest::Approx(0.002).epsilon(1e-12));
  CHECK(s.lr_for_epoch(40) == doctest::Approx(0.0014).epsilon(1e-12));
  CHECK(s.lr_for_epoch(80) == doctest::Approx(0.00098).epsilon(1e-12));
  CHECK(s.lr_for_epoch(40 * 40) == doctest::Approx(1e-5).epsilon(1e-12));  // clamp
}

TEST_CASE("adam leaves parameters unchanged under zero gradients") {
  Rng rng(3);
  auto p = random_tensor<float>({4, 3}, rng);
  auto before = p.clone();
  auto g = Tensor<float>::zeros({4, 3});
  Adam<float> adam;
  std::vector<std::pair<Tensor<float>*, const Tensor<float>*>> pg = {{&p, &g}};
  CHECK(adam.step(pg, 0));
  CHECK(testutil::bit_equal(p, before));
  CHECK(adam.step_count() == 1);
}

TEST_CASE("adam moves against the gradient at the scheduled rate") {
  auto p = Tensor<float>::zeros({2});
  auto g = Tensor<float>::full({2}, 1.0f);
  Adam<float> adam;
  std::vector<std::pair<Tensor<float>*, const Tensor<float>*>> pg = {{&p, &g}};
  CHECK(adam.step(pg, 0));
  // first bias-corrected step is -lr * g / (|g| + eps) ~= -lr
  CHECK(p.at({0}) == doctest::Approx(-0.002).epsilon(1e-3));
  CHECK(adam.step(pg, 0));
  CHECK(p.at({0}) < -0.0035);
}

TEST_CASE("adam rejects non-finite gradients and leaves state untouched") {
  Rng rng(5);
  auto p = random_tensor<float>({3}, rng);
  auto before = p.clone();
  auto g = Tensor<float>::full({3}, std::numeric_limits<float>::quiet_NaN());
  Adam<float> adam;
  std::vector<std::pair<Tensor<float>*, const Tensor<float>*>> pg = {{&p, &g}};
  CHECK_FALSE(adam.step(pg, 0));
  CHECK(testutil::bit_equal(p, before));
  CHECK(adam.step_count() == 0);
}

TEST_CASE("adam enforces shape congruence") {
  auto p = Tensor<float>::zeros({3});
  auto g = Tensor<float>::zeros({4});
  Adam<float> adam;
  std::vector<std::pair<Tensor<float>*, const Tensor<float>*>> pg = {{&p, &g}};
  CHECK_THROWS_AS(adam.step(pg, 0), Error);
}

TEST_CASE("moment buffers are shape-congruent with their parameters") {
  Rng rng(6);
  auto p1 = random_tensor<float>({2, 5}, rng);
  auto p2 = random_tensor<float>({7}, rng);
  auto g1 = random_tensor<float>({2, 5}, rng);
  auto g2 = random_tensor<float>({7}, rng);
  Adam<float> adam;
  std::vector<std::pair<Tensor<float>*, const Tensor<float>*>> pg = {{&p1, &g1}, {&p2, &g2}};
  CHECK(adam.step(pg, 0));
  CHECK(adam.first_moments()[0].shape() == p1.shape());
  CHECK(adam.second_moments()[1].shape() == p2.shape());
}
