#pragma once

#include <functional>
#include <span>
#include <string>
#include <vector>

#include "lsanet/network.hpp"

// Central-difference verification of the analytic gradients. The finite
// difference only re-runs forward evaluations, so it is independent of the
// tape's backward rules. All checks run at 64-bit precision.
namespace lsanet {

struct FdTarget {
  std::string name;
  double max_rel_err = 0;
};

struct FdReport {
  std::vector<FdTarget> targets;
  double h = 1e-5;
  double tol = 1e-4;

  double worst() const {
    double w = 0;
    for (const auto& t : targets) w = std::max(w, t.max_rel_err);
    return w;
  }
  bool pass() const { return worst() < tol; }
};

/// A differentiable scalar problem: `loss` rebuilds the value from the
/// current target contents, recording on the tape when one is given.
struct FdProblem {
  std::string name;
  std::function<Tensor<double>(Tape<double>*)> loss;
  std::vector<std::pair<std::string, Tensor<double>*>> targets;
};

/// err = |analytic - fd| / max(1, |analytic|, |fd|), maximized per target.
inline FdReport run_fd_check(const FdProblem& problem, double h = 1e-5, double tol = 1e-4) {
  FdReport report;
  report.h = h;
  report.tol = tol;
  Tape<double> tape;
  Tensor<double> loss = problem.loss(&tape);
  tape.backward(loss);
  std::vector<Tensor<double>> analytic;
  analytic.reserve(problem.targets.size());
  for (const auto& [name, t] : problem.targets) analytic.push_back(tape.grad_or_zeros(*t).clone());
  for (size_t ti = 0; ti < problem.targets.size(); ++ti) {
    Tensor<double>* t = problem.targets[ti].second;
    FdTarget rep{problem.name + "/" + problem.targets[ti].first, 0};
    for (int64_t i = 0; i < t->numel(); ++i) {
      const double orig = t->data()[i];
      t->data()[i] = orig + h;
      const double f1 = problem.loss(nullptr).item();
      t->data()[i] = orig - h;
      const double f2 = problem.loss(nullptr).item();
      t->data()[i] = orig;
      const double fd = (f1 - f2) / (2 * h);
      const double a = analytic[ti].data()[i];
      const double err = std::abs(a - fd) / std::max({1.0, std::abs(a), std::abs(fd)});
      rep.max_rel_err = std::max(rep.max_rel_err, err);
    }
    report.targets.push_back(rep);
  }
  return report;
}

namespace gradcheck_detail {

inline Tensor<double> random_tensor(Shape shape, Rng& rng, double lo = -1.0, double hi = 1.0,
                                    bool requires_grad = true) {
  Tensor<double> t(std::move(shape));
  for (int64_t i = 0; i < t.numel(); ++i) t.data()[i] = rng.uniform(lo, hi);
  t.requires_grad = requires_grad;
  return t;
}

/// Random values bounded away from zero, so ReLU kinks stay > h away.
inline Tensor<double> random_offzero(Shape shape, Rng& rng) {
  Tensor<double> t(std::move(shape));
  for (int64_t i = 0; i < t.numel(); ++i) {
    const double mag = rng.uniform(0.1, 1.0);
    t.data()[i] = rng.uniform() < 0.5 ? -mag : mag;
  }
  t.requires_grad = true;
  return t;
}

}  // namespace gradcheck_detail

// Problem factories. Each FdProblem owns its tensors through the loss
// closure's captures; the raw target pointers stay valid for the problem's
// lifetime.

/// Per-primitive problems (one per op), freshly randomized from `seed`.
std::vector<FdProblem> make_op_problems(uint64_t seed);

/// Randomized elementwise-op composition up to `depth`.
FdProblem make_composition_problem(uint64_t seed, int depth);

/// LSA layer (all flag variants) and the SFE stage (both combine modes).
std::vector<FdProblem> make_layer_problems(uint64_t seed);

/// Toy end-to-end classifier: N = (8, 1), K = (4, 8), F = ((4, 4), (4, 8)).
FdProblem make_network_problem(uint64_t seed);

enum class GradCheckScope { kOp, kLayer, kNetwork };

/// Runs the requested suite over `seeds`; one FdReport per problem instance.
std::vector<FdReport> run_gradcheck_suite(GradCheckScope scope, std::span<const uint64_t> seeds,
                                          double h = 1e-5, double tol = 1e-4);

}  // namespace lsanet
