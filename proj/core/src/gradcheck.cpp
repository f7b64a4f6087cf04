#include "lsanet/gradcheck.hpp"

#include <memory>

namespace lsanet {

namespace {

using gradcheck_detail::random_offzero;
using gradcheck_detail::random_tensor;

using TensorPtr = std::shared_ptr<Tensor<double>>;

TensorPtr rt(Shape shape, Rng& rng, double lo = -1.0, double hi = 1.0, bool grad = true) {
  return std::make_shared<Tensor<double>>(random_tensor(std::move(shape), rng, lo, hi, grad));
}

TensorPtr rz(Shape shape, Rng& rng) {
  return std::make_shared<Tensor<double>>(random_offzero(std::move(shape), rng));
}

/// sum(out (*) probe): a random probe makes every output coordinate matter.
Tensor<double> probed_sum(const Tensor<double>& out, const Tensor<double>& probe,
                          Tape<double>* tape) {
  return ops::sum_all(ops::ew_mul(out, probe, tape), tape);
}

}  // namespace

std::vector<FdProblem> make_op_problems(uint64_t seed) {
  std::vector<FdProblem> problems;
  Rng rng(mix_seed(seed, hash_str("op-problems")));

  {
    auto a = rt({2, 3, 4}, rng), b = rt({4, 5}, rng), p = rt({2, 3, 5}, rng, -1, 1, false);
    problems.push_back({"matmul",
                        [=](Tape<double>* t) { return probed_sum(ops::matmul(*a, *b, t), *p, t); },
                        {{"a", a.get()}, {"b", b.get()}}});
  }
  {
    auto x = rt({2, 3, 5}, rng), w = rt({4, 5}, rng), p = rt({2, 3, 4}, rng, -1, 1, false);
    problems.push_back({"linear",
                        [=](Tape<double>* t) { return probed_sum(ops::linear(*x, *w, t), *p, t); },
                        {{"x", x.get()}, {"w", w.get()}}});
  }
  {
    auto x = rt({3, 4}, rng), w = rt({5, 4}, rng);
    problems.push_back({"sigmoid_linear_chain",
                        [=](Tape<double>* t) {
                          return ops::sum_all(ops::sigmoid(ops::linear(*x, *w, t), t), t);
                        },
                        {{"x", x.get()}, {"w", w.get()}}});
  }
  {
    auto a = rt({3, 4}, rng), b = rt({4}, rng), p = rt({3, 4}, rng, -1, 1, false);
    problems.push_back({"ew_mul_broadcast",
                        [=](Tape<double>* t) { return probed_sum(ops::ew_mul(*a, *b, t), *p, t); },
                        {{"a", a.get()}, {"b", b.get()}}});
  }
  {
    auto a = rt({3, 4}, rng), b = rt({4}, rng), p = rt({3, 4}, rng, -1, 1, false);
    problems.push_back({"add_broadcast",
                        [=](Tape<double>* t) { return probed_sum(ops::add(*a, *b, t), *p, t); },
                        {{"a", a.get()}, {"b", b.get()}}});
  }
  {
    auto x = rt({3, 4}, rng, -3, 3);
    problems.push_back({"sigmoid",
                        [=](Tape<double>* t) { return ops::sum_all(ops::sigmoid(*x, t), t); },
                        {{"x", x.get()}}});
  }
  {
    auto x = rz({3, 4}, rng);
    auto p = rt({3, 4}, rng, -1, 1, false);
    problems.push_back({"relu",
                        [=](Tape<double>* t) { return probed_sum(ops::relu(*x, t), *p, t); },
                        {{"x", x.get()}}});
  }
  {
    auto x = rt({3, 5, 2}, rng), p = rt({3, 2}, rng, -1, 1, false);
    problems.push_back({"reduce_max",
                        [=](Tape<double>* t) {
                          return probed_sum(ops::reduce_max(*x, 1, t).values, *p, t);
                        },
                        {{"x", x.get()}}});
  }
  {
    auto x = rt({3, 5, 2}, rng), p = rt({3, 2}, rng, -1, 1, false);
    problems.push_back({"reduce_mean",
                        [=](Tape<double>* t) { return probed_sum(ops::reduce_mean(*x, 1, t), *p, t); },
                        {{"x", x.get()}}});
  }
  {
    auto x = rt({3, 5, 2}, rng), p = rt({5, 2}, rng, -1, 1, false);
    problems.push_back({"reduce_sum",
                        [=](Tape<double>* t) { return probed_sum(ops::reduce_sum(*x, 0, t), *p, t); },
                        {{"x", x.get()}}});
  }
  {
    auto a = rt({2, 3, 2}, rng), b = rt({2, 4, 2}, rng), p = rt({2, 7, 2}, rng, -1, 1, false);
    problems.push_back({"concat",
                        [=](Tape<double>* t) { return probed_sum(ops::concat(*a, *b, 1, t), *p, t); },
                        {{"a", a.get()}, {"b", b.get()}}});
  }
  {
    auto x = rt({2, 4}, rng), p = rt({2, 3, 4}, rng, -1, 1, false);
    problems.push_back({"expand",
                        [=](Tape<double>* t) { return probed_sum(ops::expand(*x, 1, 3, t), *p, t); },
                        {{"x", x.get()}}});
  }
  {
    auto x = rt({2, 6}, rng), p = rt({3, 4}, rng, -1, 1, false);
    problems.push_back({"reshape",
                        [=](Tape<double>* t) {
                          return probed_sum(ops::reshape(*x, {3, 4}, t), *p, t);
                        },
                        {{"x", x.get()}}});
  }
  {
    auto x = rt({6, 4}, rng, -2, 2);
    auto gamma = rt({4}, rng, 0.5, 1.5);
    auto beta = rt({4}, rng, -0.5, 0.5);
    auto p = rt({6, 4}, rng, -1, 1, false);
    auto rm = std::make_shared<Tensor<double>>(Tensor<double>::zeros({4}));
    auto rv = std::make_shared<Tensor<double>>(Tensor<double>::full({4}, 1.0));
    problems.push_back({"batch_norm_train",
                        [=](Tape<double>* t) {
                          return probed_sum(ops::batch_norm(*x, *gamma, *beta, *rm, *rv, 1e-5, 0.9,
                                                            Mode::kTrain, t),
                                            *p, t);
                        },
                        {{"x", x.get()}, {"gamma", gamma.get()}, {"beta", beta.get()}}});
  }
  {
    auto x = rt({6, 4}, rng, -2, 2);
    auto gamma = rt({4}, rng, 0.5, 1.5);
    auto beta = rt({4}, rng, -0.5, 0.5);
    auto p = rt({6, 4}, rng, -1, 1, false);
    auto rm = rt({4}, rng, -0.3, 0.3, false);
    auto rv = rt({4}, rng, 0.5, 1.5, false);
    problems.push_back({"batch_norm_infer",
                        [=](Tape<double>* t) {
                          return probed_sum(ops::batch_norm(*x, *gamma, *beta, *rm, *rv, 1e-5, 0.9,
                                                            Mode::kInfer, t),
                                            *p, t);
                        },
                        {{"x", x.get()}, {"gamma", gamma.get()}, {"beta", beta.get()}}});
  }
  {
    auto x = rt({2, 5, 3}, rng);
    auto idx = std::make_shared<std::vector<int64_t>>();
    for (int i = 0; i < 2 * 4; ++i) idx->push_back(rng.uniform_int(5));
    auto p = rt({2, 4, 3}, rng, -1, 1, false);
    problems.push_back({"gather_points",
                        [=](Tape<double>* t) {
                          return probed_sum(ops::gather_points(*x, *idx, 4, t), *p, t);
                        },
                        {{"x", x.get()}}});
  }
  {
    auto x = rt({2, 5, 3}, rng);
    auto idx = std::make_shared<std::vector<int64_t>>();
    for (int i = 0; i < 2 * 2 * 3; ++i) idx->push_back(rng.uniform_int(5));
    auto p = rt({2, 2, 3, 3}, rng, -1, 1, false);
    problems.push_back({"group_points",
                        [=](Tape<double>* t) {
                          return probed_sum(ops::group_points(*x, *idx, 2, 3, t), *p, t);
                        },
                        {{"x", x.get()}}});
  }
  {
    auto logits = rt({4, 5}, rng, -2, 2);
    auto labels = std::make_shared<std::vector<int>>();
    for (int i = 0; i < 4; ++i) labels->push_back(static_cast<int>(rng.uniform_int(5)));
    problems.push_back({"cross_entropy",
                        [=](Tape<double>* t) { return ops::cross_entropy(*logits, *labels, t); },
                        {{"logits", logits.get()}}});
  }
  {
    auto x = rt({2, 3, 4, 3}, rng), p = rt({2, 3, 3}, rng, -1, 1, false);
    problems.push_back({"canonical_mean_k",
                        [=](Tape<double>* t) { return probed_sum(ops::canonical_mean_k(*x, t), *p, t); },
                        {{"x", x.get()}}});
  }
  {
    auto x = rt({2, 3, 4, 3}, rng), p = rt({2, 3, 3}, rng, -1, 1, false);
    auto counts = std::make_shared<std::vector<int>>();
    for (int i = 0; i < 6; ++i) counts->push_back(1 + static_cast<int>(rng.uniform_int(4)));
    problems.push_back({"masked_mean_k",
                        [=](Tape<double>* t) {
                          return probed_sum(ops::masked_mean_k(*x, *counts, t), *p, t);
                        },
                        {{"x", x.get()}}});
  }
  {
    auto x = rt({3, 4}, rng);
    problems.push_back({"scale",
                        [=](Tape<double>* t) { return ops::sum_all(ops::scale(*x, 1.7, t), t); },
                        {{"x", x.get()}}});
  }
  return problems;
}

FdProblem make_composition_problem(uint64_t seed, int depth) {
  Rng rng(mix_seed(seed, hash_str("composition")));
  const Shape shape{2, 3, 4};
  auto x0 = rz(shape, rng);
  auto x1 = rz(shape, rng);
  auto c_full = rt(shape, rng, -1, 1, false);
  auto c_bcast = rt({4}, rng, -1, 1, false);
  auto probe = rt(shape, rng, -1, 1, false);
  auto picks = std::make_shared<std::vector<int>>();
  for (int d = 0; d < depth; ++d) picks->push_back(static_cast<int>(rng.uniform_int(6)));
  FdProblem problem;
  problem.name = "composition_depth" + std::to_string(depth);
  problem.targets = {{"x0", x0.get()}, {"x1", x1.get()}};
  problem.loss = [=](Tape<double>* t) {
    Tensor<double> v = ops::ew_mul(*x0, *c_full, t);
    for (int op : *picks) {
      switch (op) {
        case 0: v = ops::sigmoid(v, t); break;
        case 1: v = ops::relu(ops::add(v, *c_bcast, t), t); break;
        case 2: v = ops::ew_mul(v, *c_full, t); break;
        case 3: v = ops::add(v, *x1, t); break;
        case 4: v = ops::ew_mul(v, *c_bcast, t); break;
        default: v = ops::scale(v, 0.8, t); break;
      }
    }
    return probed_sum(v, *probe, t);
  };
  return problem;
}

namespace {

struct LayerFixture {
  StageTensors<double> stage;
  std::shared_ptr<LsaLayer<double>> layer;
  TensorPtr x_in, rel, probe;
};

std::shared_ptr<LayerFixture> make_layer_fixture(uint64_t seed, LsaFlags flags, Rng& rng) {
  auto fx = std::make_shared<LayerFixture>();
  const int64_t b = 2, m = 2, k = 3, c_in = 3;
  const std::vector<int64_t> widths{4, 4};
  fx->rel = rt({b, m, k, 3}, rng);
  fx->x_in = rt({b, m, k, c_in}, rng);
  fx->probe = rt({b, m, widths.back()}, rng, -1, 1, false);
  fx->stage.b = b;
  fx->stage.m = m;
  fx->stage.k = k;
  fx->stage.n_parent = 8;
  fx->stage.rel = *fx->rel;
  fx->stage.valid_counts.assign(b * m, static_cast<int>(k));
  if (flags.region_mean_valid_only)
    for (auto& c : fx->stage.valid_counts) c = 2;
  fx->layer = std::make_shared<LsaLayer<double>>(c_in, widths, flags, seed, "gradcheck_layer");
  return fx;
}

FdProblem layer_problem(const std::string& name, uint64_t seed, LsaFlags flags, Rng& rng) {
  auto fx = make_layer_fixture(seed, flags, rng);
  FdProblem problem;
  problem.name = name;
  TensorRegistry<double> reg;
  fx->layer->register_tensors("p", reg);
  for (auto& [n, t] : reg.learnable) problem.targets.emplace_back(n, t);
  problem.targets.emplace_back("x_in", fx->x_in.get());
  problem.targets.emplace_back("rel", fx->rel.get());
  problem.loss = [fx](Tape<double>* t) {
    FwdCtx<double> ctx;
    ctx.tape = t;
    ctx.mode = Mode::kTrain;
    fx->stage.rel = *fx->rel;  // rebind in case the caller perturbed rel
    Tensor<double> y = fx->layer->forward(fx->stage, *fx->x_in, ctx);
    return ops::sum_all(ops::ew_mul(y, *fx->probe, t), t);
  };
  return problem;
}

}  // namespace

std::vector<FdProblem> make_layer_problems(uint64_t seed) {
  std::vector<FdProblem> problems;
  Rng rng(mix_seed(seed, hash_str("layer-problems")));
  problems.push_back(layer_problem("lsa_layer", seed, LsaFlags{}, rng));
  {
    LsaFlags f;
    f.use_region_encoder = false;
    problems.push_back(layer_problem("lsa_layer_no_region", mix_seed(seed, 2), f, rng));
  }
  {
    LsaFlags f;
    f.use_modulated_pool = false;
    problems.push_back(layer_problem("lsa_layer_no_pool_mod", mix_seed(seed, 3), f, rng));
  }
  {
    LsaFlags f;
    f.sdw_prerelu = true;
    problems.push_back(layer_problem("lsa_layer_prerelu", mix_seed(seed, 4), f, rng));
  }
  {
    LsaFlags f;
    f.region_mean_valid_only = true;
    problems.push_back(layer_problem("lsa_layer_valid_mean", mix_seed(seed, 5), f, rng));
  }
  {
    LsaFlags f;
    f.use_lsa = false;
    problems.push_back(layer_problem("plain_set_abstraction", mix_seed(seed, 6), f, rng));
  }
  for (bool projected : {false, true}) {
    auto sfe = std::make_shared<SfeStage<double>>(3, 4, projected, mix_seed(seed, projected ? 8 : 7),
                                                  "gradcheck_sfe");
    auto x = rt({2, 2, 3, 3}, rng);
    auto p_inject = rt({2, 2, 3, sfe->inject_dim()}, rng, -1, 1, false);
    auto p_state = rt({2, 2, sfe->state_dim()}, rng, -1, 1, false);
    FdProblem problem;
    problem.name = projected ? "sfe_projected_sum" : "sfe";
    TensorRegistry<double> reg;
    sfe->register_tensors("p", reg);
    for (auto& [n, t] : reg.learnable) problem.targets.emplace_back(n, t);
    problem.targets.emplace_back("x", x.get());
    problem.loss = [=](Tape<double>* t) {
      FwdCtx<double> ctx;
      ctx.tape = t;
      ctx.mode = Mode::kTrain;
      auto [inject, state] = sfe->forward(*x, ctx);
      Tensor<double> a = ops::sum_all(ops::ew_mul(inject, *p_inject, t), t);
      Tensor<double> b = ops::sum_all(ops::ew_mul(state, *p_state, t), t);
      return ops::add(a, b, t);
    };
    problems.push_back(std::move(problem));
  }
  return problems;
}

FdProblem make_network_problem(uint64_t seed) {
  Rng rng(mix_seed(seed, hash_str("network-problem")));
  NetworkConfig cfg;
  cfg.layers = {{8, 4, 0.7f, {4, 4}}, {1, 8, 0.0f, {4, 8}}};
  cfg.head_widths = {8};
  cfg.num_classes = 3;
  cfg.dropout_rate = 0.0;
  cfg.sfe_lift_widths = {4, 4};
  auto net = std::make_shared<LsaNet<double>>(cfg, mix_seed(seed, 11));
  std::vector<PointCloud> clouds(2);
  for (auto& c : clouds) {
    c.coords.resize(16);
    for (auto& p : c.coords) {
      p.x = static_cast<float>(rng.uniform(-1, 1));
      p.y = static_cast<float>(rng.uniform(-1, 1));
      p.z = static_cast<float>(rng.uniform(-1, 1));
    }
    c = normalize_unit_sphere(std::move(c));
  }
  auto groupings = std::make_shared<BatchGroupings<double>>(
      compute_groupings<double>(clouds, cfg));
  auto labels = std::make_shared<std::vector<int>>();
  for (int i = 0; i < 2; ++i) labels->push_back(static_cast<int>(rng.uniform_int(3)));
  FdProblem problem;
  problem.name = "toy_network";
  TensorRegistry<double> reg = net->registry();
  for (auto& [n, t] : reg.learnable) problem.targets.emplace_back(n, t);
  problem.loss = [=](Tape<double>* t) {
    FwdCtx<double> ctx;
    ctx.tape = t;
    ctx.mode = Mode::kTrain;
    Tensor<double> logits = net->forward(*groupings, ctx);
    return ops::cross_entropy(logits, *labels, t);
  };
  return problem;
}

std::vector<FdReport> run_gradcheck_suite(GradCheckScope scope, std::span<const uint64_t> seeds,
                                          double h, double tol) {
  std::vector<FdReport> reports;
  for (uint64_t seed : seeds) {
    switch (scope) {
      case GradCheckScope::kOp: {
        for (const FdProblem& p : make_op_problems(seed)) reports.push_back(run_fd_check(p, h, tol));
        for (int depth = 3; depth <= 6; depth += 3)
          reports.push_back(run_fd_check(make_composition_problem(seed, depth), h, tol));
        break;
      }
      case GradCheckScope::kLayer: {
        for (const FdProblem& p : make_layer_problems(seed)) reports.push_back(run_fd_check(p, h, tol));
        break;
      }
      case GradCheckScope::kNetwork:
        reports.push_back(run_fd_check(make_network_problem(seed), h, tol));
        break;
    }
  }
  return reports;
}

}  // namespace lsanet
