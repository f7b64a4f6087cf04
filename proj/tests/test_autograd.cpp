#include "doctest.h"
#include "helpers.hpp"
#include "lsanet/gradcheck.hpp"
#include "lsanet/parallel.hpp"

using namespace lsanet;
using testutil::random_tensor;

TEST_CASE("backward of sum gives ones and tape is consumable once") {
  Rng rng(2);
  auto x = random_tensor<double>({3, 4}, rng);
  x.requires_grad = true;
  Tape<double> tape;
  auto loss = ops::sum_all(x, &tape);
  tape.backward(loss);
  for (int64_t i = 0; i < x.numel(); ++i) CHECK(tape.grad(x).data()[i] == 1.0);
  CHECK_THROWS_AS(tape.backward(loss), Error);
}

TEST_CASE("backward rejects a non-scalar loss and off-tape tensors") {
  Rng rng(4);
  auto x = random_tensor<double>({2, 2}, rng);
  x.requires_grad = true;
  Tape<double> tape;
  auto y = ops::relu(x, &tape);
  CHECK_THROWS_AS(tape.backward(y), Error);

  Tape<double> other;
  auto loss = ops::sum_all(x);  // not recorded anywhere
  CHECK_THROWS_AS(other.backward(loss), Error);
}

TEST_CASE("gradients of a tensor used in several places sum") {
  auto x = Tensor<double>::from({2}, {1.5, -0.5});
  x.requires_grad = true;
  Tape<double> tape;
  // loss = sum(x) + sum(x * x): d/dx = 1 + 2x
  auto loss = ops::sum_all(ops::concat(x, ops::ew_mul(x, x, &tape), 0, &tape), &tape);
  tape.backward(loss);
  CHECK(tape.grad(x).at({0}) == doctest::Approx(1 + 2 * 1.5));
  CHECK(tape.grad(x).at({1}) == doctest::Approx(1 - 2 * 0.5));
}

TEST_CASE("unreached leaves read as zero gradients") {
  Rng rng(6);
  auto x = random_tensor<double>({3}, rng);
  auto unused = random_tensor<double>({3}, rng);
  x.requires_grad = unused.requires_grad = true;
  Tape<double> tape;
  tape.backward(ops::sum_all(x, &tape));
  auto gz = tape.grad_or_zeros(unused);
  for (int64_t i = 0; i < 3; ++i) CHECK(gz.data()[i] == 0.0);
}

TEST_CASE("finite differences confirm every primitive (sampled seeds)") {
  for (uint64_t seed : {11ULL, 12ULL, 13ULL}) {
    for (const FdProblem& p : make_op_problems(seed)) {
      FdReport r = run_fd_check(p);
      INFO(p.name, " worst ", r.worst());
      CHECK(r.pass());
    }
  }
}

TEST_CASE("finite differences confirm randomized compositions up to depth 6") {
  for (uint64_t seed : {21ULL, 22ULL, 23ULL, 24ULL}) {
    for (int depth : {2, 4, 6}) {
      FdReport r = run_fd_check(make_composition_problem(seed, depth));
      INFO("depth ", depth, " seed ", seed, " worst ", r.worst());
      CHECK(r.pass());
    }
  }
}

TEST_CASE("finite differences confirm the composed layer forward end-to-end") {
  for (const FdProblem& p : make_layer_problems(31)) {
    FdReport r = run_fd_check(p);
    INFO(p.name, " worst ", r.worst());
    CHECK(r.pass());
  }
}

TEST_CASE("a corrupted gradient rule is caught (negative control)") {
  Rng rng(8);
  auto x = random_tensor<double>({3}, rng);
  x.requires_grad = true;
  FdProblem problem;
  problem.name = "corrupted";
  auto xp = std::make_shared<Tensor<double>>(x);
  problem.targets = {{"x", xp.get()}};
  problem.loss = [xp](Tape<double>* tape) {
    // y = x^2 recorded with a wrong backward rule (3x instead of 2x)
    const Tensor<double>& in = *xp;
    Tensor<double> y(in.shape());
    for (int64_t i = 0; i < in.numel(); ++i) y.data()[i] = in.data()[i] * in.data()[i];
    if (tape) {
      int nx = tape->node_of(in);
      tape->record({nx}, y, [nx, in](Tape<double>& tp, const Tensor<double>& g) {
        Tensor<double>& gx = tp.grad_buf(nx);
        for (int64_t i = 0; i < g.numel(); ++i)
          gx.data()[i] += g.data()[i] * 3.0 * in.data()[i];
      });
    }
    return ops::sum_all(y, tape);
  };
  FdReport r = run_fd_check(problem);
  CHECK_FALSE(r.pass());
}

TEST_CASE("tape determinism: same seed, same inputs, bit-identical grads") {
  auto run_once = [](uint64_t seed) {
    Rng rng(seed);
    auto x = random_tensor<double>({4, 8}, rng);
    auto w = random_tensor<double>({3, 8}, rng);
    x.requires_grad = w.requires_grad = true;
    Tape<double> tape;
    auto loss = ops::sum_all(ops::sigmoid(ops::linear(x, w, &tape), &tape), &tape);
    tape.backward(loss);
    return std::make_tuple(loss.item(), tape.grad(x).clone(), tape.grad(w).clone());
  };
  auto [l1, gx1, gw1] = run_once(1234);
  auto [l2, gx2, gw2] = run_once(1234);
  CHECK(l1 == l2);
  CHECK(testutil::bit_equal(gx1, gx2));
  CHECK(testutil::bit_equal(gw1, gw2));
}

TEST_CASE("exceptions inside parallel regions surface on the caller") {
  CHECK_THROWS_AS(
      parallel_for(100000, [](int64_t b, int64_t) {
        if (b >= 0) throw Error("boom");
      }, 1),
      Error);
  // the pool stays usable afterwards
  std::vector<int64_t> hits(8, 0);
  parallel_for(8, [&](int64_t b, int64_t e) {
    for (int64_t i = b; i < e; ++i) hits[i] = i;
  }, 1);
  for (int64_t i = 0; i < 8; ++i) CHECK(hits[i] == i);
}

TEST_CASE("leaf gradients are shape-congruent with their values") {
  Rng rng(10);
  auto x = random_tensor<double>({2, 3, 5}, rng);
  auto w = random_tensor<double>({4, 5}, rng);
  x.requires_grad = w.requires_grad = true;
  Tape<double> tape;
  tape.backward(ops::sum_all(ops::linear(x, w, &tape), &tape));
  CHECK(tape.grad(x).shape() == x.shape());
  CHECK(tape.grad(w).shape() == w.shape());
}
