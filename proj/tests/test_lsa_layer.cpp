#include <numeric>

#include "doctest.h"
#include "helpers.hpp"
#include "lsanet/lsa_layer.hpp"

using namespace lsanet;
using testutil::random_tensor;

namespace {

StageTensors<double> stage_from(const Tensor<double>& rel, int64_t n_parent = 16) {
  StageTensors<double> st;
  st.b = rel.dim(0);
  st.m = rel.dim(1);
  st.k = rel.dim(2);
  st.n_parent = n_parent;
  st.rel = rel;
  st.valid_counts.assign(st.b * st.m, static_cast<int>(st.k));
  return st;
}

}  // namespace

TEST_CASE("point spatial feature: linear in the relative coordinate") {
  // centroid slot (0,0,0) maps to the zero vector
  auto rel = Tensor<double>::zeros({1, 1, 2, 3});
  rel.data()[3] = 1.0;  // second slot (1,0,0)
  Rng rng(1);
  auto w0 = random_tensor<double>({64, 3}, rng);
  auto s = point_spatial_feature(rel, w0);
  CHECK(s.shape() == Shape{1, 1, 2, 64});
  for (int c = 0; c < 64; ++c) {
    CHECK(s.at({0, 0, 0, c}) == 0.0);
    CHECK(s.at({0, 0, 1, c}) == w0.at({c, 0}));
  }

  // one-row toy: w0 = [1 1 1], P = (1,2,3) -> 6
  auto w_row = Tensor<double>::from({1, 3}, {1, 1, 1});
  auto p = Tensor<double>::from({1, 1, 1, 3}, {1, 2, 3});
  CHECK(point_spatial_feature(p, w_row).item() == 6.0);
}

TEST_CASE("region spatial feature: symmetry, mean, permutation bit-identity") {
  // symmetric region sums to zero for any weight
  auto rel = Tensor<double>::from({1, 1, 2, 3}, {1, 0, 0, -1, 0, 0});
  Rng rng(2);
  auto w1 = random_tensor<double>({64, 3}, rng);
  auto s = region_spatial_feature(rel, w1, {2}, false);
  CHECK(s.shape() == Shape{1, 1, 64});
  for (int c = 0; c < 64; ++c) CHECK(std::abs(s.at({0, 0, c})) < 1e-15);

  // one-row toy: w1 = [1 0 0], points x = 1 and 3 -> mean 2
  auto w_row = Tensor<double>::from({1, 3}, {1, 0, 0});
  auto p = Tensor<double>::from({1, 1, 2, 3}, {1, 5, 5, 3, 7, 7});
  CHECK(region_spatial_feature(p, w_row, {2}, false).item() == doctest::Approx(2.0));

  // permuting the K slots leaves the value bit-identical
  auto r = random_tensor<double>({1, 2, 5, 3}, rng);
  auto base = region_spatial_feature(r, w1, {5, 5}, false);
  std::vector<int> perm{4, 2, 0, 3, 1};
  Tensor<double> shuffled({1, 2, 5, 3});
  for (int m = 0; m < 2; ++m)
    for (int k = 0; k < 5; ++k)
      for (int d = 0; d < 3; ++d)
        shuffled.data()[(m * 5 + k) * 3 + d] = r.data()[(m * 5 + perm[k]) * 3 + d];
  CHECK(testutil::bit_equal(region_spatial_feature(shuffled, w1, {5, 5}, false), base));
}

TEST_CASE("spatial distribution feature: 64 + 64 with the region half broadcast") {
  Rng rng(3);
  auto per_point = random_tensor<double>({2, 3, 4, 64}, rng);
  auto regional = random_tensor<double>({2, 3, 64}, rng);
  auto s = spatial_distribution_feature(per_point, regional);
  CHECK(s.shape() == Shape{2, 3, 4, 128});
  for (int b = 0; b < 2; ++b)
    for (int m = 0; m < 3; ++m)
      for (int k = 0; k < 4; ++k)
        for (int c = 0; c < 64; ++c) {
          CHECK(s.at({b, m, k, c}) == per_point.at({b, m, k, c}));
          // region half identical across all K slots of a region, exactly
          CHECK(s.at({b, m, k, 64 + c}) == regional.at({b, m, c}));
        }
}

TEST_CASE("sdw_first: zero weights give 0.5, outputs strictly inside (0,1)") {
  auto s = Tensor<double>::full({1, 2, 3, 128}, 0.37);
  auto ws_zero = Tensor<double>::zeros({8, 128});
  auto e = sdw_first(s, ws_zero);
  CHECK(e.shape() == Shape{1, 2, 3, 8});
  for (int64_t i = 0; i < e.numel(); ++i) CHECK(e.data()[i] == 0.5);

  // one-channel toy: ws = [2, 0, ...], s = (1, 0, ...) -> sigmoid(2)
  auto ws = Tensor<double>::zeros({1, 128});
  ws.data()[0] = 2.0;
  auto s1 = Tensor<double>::zeros({1, 1, 1, 128});
  s1.data()[0] = 1.0;
  CHECK(sdw_first(s1, ws).item() == doctest::Approx(0.8807970779778823).epsilon(1e-12));

  Rng rng(4);
  auto big = random_tensor<double>({2, 2, 4, 128}, rng, -50, 50);
  auto wsr = random_tensor<double>({16, 128}, rng);
  auto er = sdw_first(big, wsr);
  for (int64_t i = 0; i < er.numel(); ++i) {
    CHECK(er.data()[i] > 0.0);
    CHECK(er.data()[i] < 1.0);
  }
}

TEST_CASE("sdw_next: chained sigmoid weights") {
  auto ws_zero = Tensor<double>::zeros({4, 4});
  auto e_prev = Tensor<double>::full({1, 1, 2, 4}, 0.9);
  auto e = sdw_next(e_prev, ws_zero);
  for (int64_t i = 0; i < e.numel(); ++i) CHECK(e.data()[i] == 0.5);

  // scalar chain from input 1 with weight 2 applied twice:
  // sigmoid(2 * sigmoid(2)) = sigmoid(1.7615941...) = 0.8534092...
  auto w2 = Tensor<double>::from({1, 1}, {2.0});
  auto x = Tensor<double>::full({1, 1, 1, 1}, 1.0);
  auto e1 = sdw_next(x, w2);
  auto e2 = sdw_next(e1, w2);
  const double sig2 = 1.0 / (1.0 + std::exp(-2.0));
  const double expected = 1.0 / (1.0 + std::exp(-2.0 * sig2));
  CHECK(e2.item() == doctest::Approx(expected).epsilon(1e-12));
  CHECK(e2.item() == doctest::Approx(0.8534092).epsilon(1e-6));
}

TEST_CASE("modulated linear core equals the explicit updated-weight oracle") {
  // wm . (x (*) e) == (wm . diag(e)) . x, checked to 1e-12 at 64-bit
  Rng rng(5);
  auto x = random_tensor<double>({2, 3, 4, 6}, rng);
  auto e = random_tensor<double>({2, 3, 4, 6}, rng, 0.01, 0.99);
  auto wm = random_tensor<double>({5, 6}, rng);
  auto fast = ops::linear(ops::ew_mul(x, e), wm);
  for (int64_t r = 0; r < 2 * 3 * 4; ++r) {
    // materialize W'm = wm . diag(e_r) for this point, then apply to x_r
    for (int o = 0; o < 5; ++o) {
      double acc = 0;
      for (int c = 0; c < 6; ++c) acc += wm.at({o, c}) * e.data()[r * 6 + c] * x.data()[r * 6 + c];
      CHECK(std::abs(fast.data()[r * 5 + o] - acc) < 1e-12);
    }
  }
}

TEST_CASE("sdw_modulated_mlp_step: identity modulation reduces to the plain step") {
  Rng rng(6);
  auto x = random_tensor<double>({1, 2, 3, 4}, rng);
  auto ones = Tensor<double>::full({1, 2, 3, 4}, 1.0);
  LinearBnRelu<double> stage(5, 4, 99, "stage");
  LinearBnRelu<double> stage_copy(5, 4, 99, "stage");  // same seed, same weights
  FwdCtx<double> ctx;  // infer mode keeps bn state untouched
  auto modulated = sdw_modulated_mlp_step(x, ones, stage, ctx);
  auto plain = stage_copy.forward(x, ctx);
  CHECK(testutil::bit_equal(modulated, plain));

  auto bad_e = Tensor<double>::full({1, 2, 3, 5}, 1.0);
  CHECK_THROWS_AS(sdw_modulated_mlp_step(x, bad_e, stage, ctx), Error);

  // scalar toy with bn and activation stripped: 3 * (2 * 0.5) = 3
  auto xs = Tensor<double>::full({1, 1, 1, 1}, 2.0);
  auto es = Tensor<double>::full({1, 1, 1, 1}, 0.5);
  auto wm = Tensor<double>::from({1, 1}, {3.0});
  CHECK(ops::linear(ops::ew_mul(xs, es), wm).item() == 3.0);
}

TEST_CASE("sdw_modulated_max_pool examples and permutation freedom") {
  auto x = Tensor<double>::from({1, 1, 2, 2}, {1, 4, 3, 2});
  auto ones = Tensor<double>::full({1, 1, 2, 2}, 1.0);
  auto y = sdw_modulated_max_pool(x, ones);
  CHECK(y.at({0, 0, 0}) == 3);
  CHECK(y.at({0, 0, 1}) == 4);

  auto e = Tensor<double>::from({1, 1, 2, 2}, {1, 0.5, 0.5, 1});
  auto ym = sdw_modulated_max_pool(x, e);
  CHECK(ym.at({0, 0, 0}) == 1.5);
  CHECK(ym.at({0, 0, 1}) == 2.0);

  // permuting the K slots (x and e together) leaves the pool bit-identical
  Rng rng(7);
  auto xr = random_tensor<double>({1, 2, 6, 3}, rng);
  auto er = random_tensor<double>({1, 2, 6, 3}, rng, 0.1, 0.9);
  auto base = sdw_modulated_max_pool(xr, er);
  std::vector<int> perm{5, 3, 1, 0, 4, 2};
  Tensor<double> xp({1, 2, 6, 3}), ep({1, 2, 6, 3});
  for (int m = 0; m < 2; ++m)
    for (int k = 0; k < 6; ++k)
      for (int d = 0; d < 3; ++d) {
        xp.data()[(m * 6 + k) * 3 + d] = xr.data()[(m * 6 + perm[k]) * 3 + d];
        ep.data()[(m * 6 + k) * 3 + d] = er.data()[(m * 6 + perm[k]) * 3 + d];
      }
  CHECK(testutil::bit_equal(sdw_modulated_max_pool(xp, ep), base));
}

TEST_CASE("layer forward: zero SDW weights behave as constant 0.5 gates") {
  Rng rng(8);
  const int64_t b = 2, m = 2, k = 3, c_in = 3;
  LsaLayer<double> layer(c_in, {4, 4}, LsaFlags{}, 17, "t");
  for (auto& w : layer.sdw_weights()) std::fill(w.data(), w.data() + w.numel(), 0.0);
  auto rel = random_tensor<double>({b, m, k, 3}, rng);
  auto x_in = random_tensor<double>({b, m, k, c_in}, rng);
  auto st = stage_from(rel);
  FwdCtx<double> ctx;  // infer
  auto y = layer.forward(st, x_in, ctx);

  // reference: plain stages with inputs scaled by the constant 0.5 gate from
  // the second stage on, pool over 0.5-scaled activations
  LsaLayer<double> ref_layer(c_in, {4, 4}, LsaFlags{}, 17, "t");
  auto& stages = ref_layer.mlp_stages();
  auto half = [&](const Tensor<double>& t) { return ops::scale(t, 0.5); };
  auto x1 = stages[0].forward(x_in, ctx);
  auto x2 = stages[1].forward(half(x1), ctx);
  auto ref = ops::reduce_max(half(x2), 2).values;
  CHECK(testutil::max_abs_diff(y, ref) < 1e-12);
}

TEST_CASE("layer forward: widths (64,64,128) pool to 128 per region") {
  Rng rng(9);
  LsaLayer<double> layer(3, {64, 64, 128}, LsaFlags{}, 5, "t");
  auto rel = random_tensor<double>({1, 4, 8, 3}, rng);
  auto st = stage_from(rel);
  FwdCtx<double> ctx;
  auto y = layer.forward(st, rel, ctx);
  CHECK(y.shape() == Shape{1, 4, 128});
}

TEST_CASE("layer forward rejects inputs with the wrong channel extent") {
  Rng rng(10);
  LsaLayer<double> layer(6, {4}, LsaFlags{}, 5, "t");
  auto rel = random_tensor<double>({1, 2, 3, 3}, rng);
  auto bad = random_tensor<double>({1, 2, 3, 5}, rng);
  auto st = stage_from(rel);
  FwdCtx<double> ctx;
  CHECK_THROWS_AS(layer.forward(st, bad, ctx), Error);
}

TEST_CASE("shape chain is asserted with the offending sub-layer index") {
  LsaLayer<double> layer(3, {4, 8}, LsaFlags{}, 5, "t");
  layer.check_shape_chain();  // fine as built
  layer.sdw_weights()[1] = Tensor<double>::zeros({8, 5});  // wrong input extent
  try {
    layer.check_shape_chain();
    FAIL("expected chain error");
  } catch (const Error& e) {
    CHECK(std::string(e.what()).find("sub-layer 1") != std::string::npos);
  }
}

TEST_CASE("permutation equivariance: SDW levels permute, pooled output bit-identical") {
  Rng rng(11);
  const int64_t b = 1, m = 4, k = 6, c_in = 3;
  LsaLayer<double> layer(c_in, {8, 8}, LsaFlags{}, 23, "t");
  auto rel = random_tensor<double>({b, m, k, 3}, rng);
  auto st = stage_from(rel);

  SdwRecord<double> rec_base;
  FwdCtx<double> ctx;
  ctx.sdw_record = &rec_base;
  auto y_base = layer.forward(st, rel, ctx);

  Rng prng(12);
  for (int trial = 0; trial < 10; ++trial) {
    std::vector<int64_t> perm(k);
    std::iota(perm.begin(), perm.end(), 0);
    prng.shuffle(perm.begin(), perm.end());
    Tensor<double> rel_p({b, m, k, 3});
    for (int64_t mi = 0; mi < m; ++mi)
      for (int64_t ki = 0; ki < k; ++ki)
        for (int64_t d = 0; d < 3; ++d)
          rel_p.data()[(mi * k + ki) * 3 + d] = rel.data()[(mi * k + perm[ki]) * 3 + d];
    auto st_p = stage_from(rel_p);
    SdwRecord<double> rec_p;
    FwdCtx<double> ctx_p;
    ctx_p.sdw_record = &rec_p;
    auto y_p = layer.forward(st_p, rel_p, ctx_p);
    CHECK(testutil::bit_equal(y_p, y_base));
    // every SDW level is permuted by exactly the same permutation
    for (size_t lvl = 0; lvl < rec_base.levels.size(); ++lvl) {
      const auto& e0 = rec_base.levels[lvl];
      const auto& e1 = rec_p.levels[lvl];
      const int64_t f = e0.dim(3);
      for (int64_t mi = 0; mi < m; ++mi)
        for (int64_t ki = 0; ki < k; ++ki)
          for (int64_t c = 0; c < f; ++c)
            CHECK(e1.data()[(mi * k + ki) * f + c] == e0.data()[(mi * k + perm[ki]) * f + c]);
    }
  }
}

TEST_CASE("SDW range: every captured level lies strictly in (0,1)") {
  Rng rng(13);
  LsaLayer<double> layer(3, {8, 16}, LsaFlags{}, 31, "t");
  auto rel = random_tensor<double>({2, 3, 5, 3}, rng, -2, 2);
  auto st = stage_from(rel);
  SdwRecord<double> rec;
  FwdCtx<double> ctx;
  ctx.sdw_record = &rec;
  (void)layer.forward(st, rel, ctx);
  REQUIRE(rec.levels.size() == 2);
  for (const auto& e : rec.levels)
    for (int64_t i = 0; i < e.numel(); ++i) {
      CHECK(e.data()[i] > 0.0);
      CHECK(e.data()[i] < 1.0);
    }
}

TEST_CASE("baseline reduction: disabling the SDW branch gives the plain path exactly") {
  Rng rng(14);
  const int64_t b = 2, m = 3, k = 4, c_in = 3;
  LsaFlags off;
  off.use_lsa = false;
  LsaLayer<double> layer(c_in, {6, 6}, off, 41, "t");
  auto rel = random_tensor<double>({b, m, k, 3}, rng);
  auto st = stage_from(rel);
  FwdCtx<double> ctx;
  auto y = layer.forward(st, rel, ctx);

  LsaLayer<double> twin(c_in, {6, 6}, off, 41, "t");
  auto& stages = twin.mlp_stages();
  auto ref = ops::reduce_max(stages[1].forward(stages[0].forward(rel, ctx), ctx), 2).values;
  CHECK(testutil::bit_equal(y, ref));
}

TEST_CASE("region encoder flag changes the SDW conditioning width") {
  LsaFlags no_region;
  no_region.use_region_encoder = false;
  LsaLayer<double> layer(3, {4}, no_region, 5, "t");
  CHECK(layer.sdw_weights()[0].dim(1) == 64);  // point term only
  LsaLayer<double> full(3, {4}, LsaFlags{}, 5, "t");
  CHECK(full.sdw_weights()[0].dim(1) == 128);
}
