#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <functional>

#include "ctt/graph.hpp"
#include "ctt/rng.hpp"

using namespace ctt;

namespace {

using DGraph = GraphT<double>;
using DTensor = TensorT<double>;
using DStore = ParamStoreT<double>;

DTensor random_tensor(Shape shape, Rng& rng, double scale = 1.0) {
  DTensor t(std::move(shape));
  for (double& v : t.data) v = rng.normal() * scale;
  return t;
}

// Central finite differences over every trainable parameter element.
void check_gradients(DStore& store, const std::function<double(DGraph&)>& forward, double step,
                     double tol) {
  store.zero_grad();
  {
    DGraph g;
    forward(g);
    g.backward(static_cast<DGraph::Id>(g.node_count() - 1));
  }
  double max_rel = 0.0;
  for (std::size_t pi = 0; pi < store.size(); ++pi) {
    auto& p = store.at(pi);
    if (!p.trainable) continue;
    for (std::size_t i = 0; i < p.value.numel(); ++i) {
      const double orig = p.value.data[i];
      p.value.data[i] = orig + step;
      DGraph gp;
      const double lp = forward(gp);
      p.value.data[i] = orig - step;
      DGraph gm;
      const double lm = forward(gm);
      p.value.data[i] = orig;
      const double numeric = (lp - lm) / (2.0 * step);
      const double analytic = p.grad.data[i];
      const double rel = std::fabs(analytic - numeric) /
                         std::max({std::fabs(analytic), std::fabs(numeric), 1e-6});
      max_rel = std::max(max_rel, rel);
      if (rel >= tol) {
        CAPTURE(p.name);
        CAPTURE(i);
        CAPTURE(analytic);
        CAPTURE(numeric);
      }
      REQUIRE(rel < tol);
    }
  }
  MESSAGE("max relative error: ", max_rel);
}

}  // namespace

TEST_CASE("backward on an empty graph raises GraphNotBuilt") {
  Graph g;
  CHECK_THROWS_AS(g.backward(0), NnError);
}

TEST_CASE("backward requires a scalar root") {
  Graph g;
  Tensor t({2});
  const auto id = g.constant(t);
  CHECK_THROWS_AS(g.backward(id), NnError);
}

TEST_CASE("linear layer: dW equals x^T delta") {
  Rng rng(21);
  DStore store;
  auto& w = store.add("w", {3, 2});
  w.value = random_tensor({3, 2}, rng);
  DTensor x = random_tensor({4, 3}, rng);
  const std::vector<int> targets{0, 1, 1, 0};

  DGraph g;
  const auto logits = g.linear(g.constant(x), g.param(w), std::nullopt);
  const auto loss = g.softmax_cross_entropy(logits, targets, std::nullopt);
  store.zero_grad();
  g.backward(loss);

  // delta = dL/dlogits reconstructed from softmax rows.
  const DTensor& lv = g.value(logits);
  for (int d = 0; d < 3; ++d)
    for (int k = 0; k < 2; ++k) {
      double expect = 0.0;
      for (int n = 0; n < 4; ++n) {
        const double l0 = lv.at({n, 0}), l1 = lv.at({n, 1});
        const double m = std::max(l0, l1);
        const double z = std::exp(l0 - m) + std::exp(l1 - m);
        const double p = std::exp((k == 0 ? l0 : l1) - m) / z;
        const double delta = (p - (targets[n] == k ? 1.0 : 0.0)) / 4.0;
        expect += x.at({n, d}) * delta;
      }
      CHECK(w.grad.at({d, k}) == doctest::Approx(expect).epsilon(1e-9));
    }
}

TEST_CASE("a parameter outside the forward path gets an exactly zero gradient") {
  Rng rng(22);
  DStore store;
  auto& used = store.add("used", {2, 2});
  used.value = random_tensor({2, 2}, rng);
  auto& unused = store.add("unused", {2, 2});
  unused.value = random_tensor({2, 2}, rng);

  DGraph g;
  const auto logits = g.linear(g.constant(random_tensor({1, 2}, rng)), g.param(used),
                               std::nullopt);
  store.zero_grad();
  g.backward(g.softmax_cross_entropy(logits, {0}, std::nullopt));
  for (double v : unused.grad.data) CHECK(v == 0.0);
  bool any_nonzero = false;
  for (double v : used.grad.data) any_nonzero = any_nonzero || v != 0.0;
  CHECK(any_nonzero);
}

TEST_CASE("backward accumulates parameter gradients until zero_grad") {
  Rng rng(23);
  DStore store;
  auto& w = store.add("w", {2, 2});
  w.value = random_tensor({2, 2}, rng);
  DTensor x = random_tensor({1, 2}, rng);

  auto run = [&] {
    DGraph g;
    const auto logits = g.linear(g.constant(x), g.param(w), std::nullopt);
    g.backward(g.softmax_cross_entropy(logits, {1}, std::nullopt));
  };
  store.zero_grad();
  run();
  const DTensor once = w.grad;
  run();
  for (std::size_t i = 0; i < once.numel(); ++i)
    CHECK(w.grad.data[i] == doctest::Approx(2.0 * once.data[i]).epsilon(1e-12));
}

TEST_CASE("finite differences: conv + train-mode batch norm + relu + pool + linear") {
  Rng rng(24);
  DStore store;
  auto& cw = store.add("conv.weight", {3, 2, 3, 3});
  cw.value = random_tensor({3, 2, 3, 3}, rng, 0.5);
  auto& cb = store.add("conv.bias", {3});
  cb.value = random_tensor({3}, rng, 0.1);
  auto& gamma = store.add("bn.gamma", {3});
  std::fill(gamma.value.data.begin(), gamma.value.data.end(), 1.0);
  auto& beta = store.add("bn.beta", {3});
  auto& fw = store.add("fc.weight", {3, 2});
  fw.value = random_tensor({3, 2}, rng, 0.5);
  auto& fb = store.add("fc.bias", {2});

  std::vector<double> rm(3, 0.0), rv(3, 1.0);
  const DTensor x = random_tensor({4, 2, 9, 9}, rng);
  const std::vector<int> targets{0, 1, 1, 0};

  auto forward = [&](DGraph& g) {
    auto h = g.conv2d(g.constant(x), g.param(cw), g.param(cb), {1, 1, 1});
    h = g.batch_norm(h, g.param(gamma), g.param(beta), rm, rv, 0.1, 1e-5, ops::BnMode::Train);
    h = g.relu(h);
    h = g.max_pool2d(h, 3, 2, 1);
    h = g.global_pool(h, ops::PoolKind::Avg);
    const auto logits = g.linear(h, g.param(fw), g.param(fb));
    const auto loss = g.softmax_cross_entropy(logits, targets, std::nullopt);
    return g.value(loss).data[0];
  };
  check_gradients(store, forward, 1e-4, 1e-5);
}

TEST_CASE("finite differences: dilated strided conv and eval-mode batch norm") {
  Rng rng(25);
  DStore store;
  auto& cw = store.add("conv.weight", {2, 2, 3, 3});
  cw.value = random_tensor({2, 2, 3, 3}, rng, 0.5);
  auto& gamma = store.add("bn.gamma", {2});
  gamma.value.data = {1.2, 0.8};
  auto& beta = store.add("bn.beta", {2});
  beta.value.data = {0.1, -0.2};
  auto& fw = store.add("fc.weight", {2, 2});
  fw.value = random_tensor({2, 2}, rng, 0.5);

  std::vector<double> rm{0.05, -0.1}, rv{1.5, 0.75};
  const DTensor x = random_tensor({2, 2, 11, 11}, rng);
  const std::vector<int> targets{1, 0};

  auto forward = [&](DGraph& g) {
    auto h = g.conv2d(g.constant(x), g.param(cw), std::nullopt, {2, 2, 2});
    h = g.batch_norm(h, g.param(gamma), g.param(beta), rm, rv, 0.1, 1e-5, ops::BnMode::Eval);
    h = g.relu(h);
    h = g.global_pool(h, ops::PoolKind::Avg);
    const auto logits = g.linear(h, g.param(fw), std::nullopt);
    return g.value(g.softmax_cross_entropy(logits, targets, std::nullopt)).data[0];
  };
  check_gradients(store, forward, 1e-4, 1e-5);
}

TEST_CASE("finite differences: attention-style gating graph") {
  Rng rng(26);
  DStore store;
  auto& fc1 = store.add("fc1", {4, 2});
  fc1.value = random_tensor({4, 2}, rng, 0.7);
  auto& fc2 = store.add("fc2", {2, 4});
  fc2.value = random_tensor({2, 4}, rng, 0.7);
  auto& sw = store.add("spatial.weight", {1, 2, 3, 3});
  sw.value = random_tensor({1, 2, 3, 3}, rng, 0.5);
  auto& sb = store.add("spatial.bias", {1});
  auto& fw = store.add("fc.weight", {4, 2});
  fw.value = random_tensor({4, 2}, rng, 0.5);

  const DTensor x = random_tensor({3, 4, 5, 5}, rng);
  const std::vector<int> targets{0, 1, 0};

  auto forward = [&](DGraph& g) {
    const auto f = g.constant(x);
    // channel gate: shared MLP over avg- and max-pooled descriptors
    const auto avg = g.global_pool(f, ops::PoolKind::Avg);
    const auto mx = g.global_pool(f, ops::PoolKind::Max);
    const auto mlp = [&](DGraph::Id v) {
      return g.linear(g.relu(g.linear(v, g.param(fc1), std::nullopt)), g.param(fc2),
                      std::nullopt);
    };
    const auto mc = g.sigmoid(g.add(mlp(avg), mlp(mx)));
    const auto gated = g.mul_channel_gate(f, mc);
    // spatial gate: conv over concatenated mean/max planes
    const auto cat = g.concat_channels({g.channel_reduce(gated, ops::ReduceKind::Mean),
                                        g.channel_reduce(gated, ops::ReduceKind::Max)});
    const auto ms = g.sigmoid(g.conv2d(cat, g.param(sw), g.param(sb), {1, 1, 1}));
    const auto out = g.mul_spatial_gate(gated, ms);
    const auto pooled = g.global_pool(out, ops::PoolKind::Avg);
    const auto logits = g.linear(pooled, g.param(fw), std::nullopt);
    return g.value(g.softmax_cross_entropy(logits, targets, std::nullopt)).data[0];
  };
  check_gradients(store, forward, 1e-4, 1e-5);
}

TEST_CASE("finite differences: residual add, feature concat, shared weights") {
  Rng rng(27);
  DStore store;
  auto& cw = store.add("conv.weight", {2, 2, 1, 1});
  cw.value = random_tensor({2, 2, 1, 1}, rng, 0.7);
  auto& fw = store.add("fc.weight", {4, 2});
  fw.value = random_tensor({4, 2}, rng, 0.5);

  const DTensor xa = random_tensor({2, 2, 4, 4}, rng);
  const DTensor xb = random_tensor({2, 2, 4, 4}, rng);
  const std::vector<int> targets{1, 0};

  auto forward = [&](DGraph& g) {
    // The same conv parameter is used on both branches.
    const auto a = g.constant(xa);
    const auto b = g.constant(xb);
    const auto ha = g.relu(g.add(g.conv2d(a, g.param(cw), std::nullopt, {1, 0, 1}), a));
    const auto hb = g.relu(g.add(g.conv2d(b, g.param(cw), std::nullopt, {1, 0, 1}), b));
    const auto cat = g.concat_features(
        {g.global_pool(ha, ops::PoolKind::Avg), g.global_pool(hb, ops::PoolKind::Avg)});
    const auto logits = g.linear(cat, g.param(fw), std::nullopt);
    return g.value(g.softmax_cross_entropy(logits, targets, std::nullopt)).data[0];
  };
  check_gradients(store, forward, 1e-4, 1e-5);
}

TEST_CASE("select picks a scalar and routes its gradient") {
  DStore store;
  auto& w = store.add("w", {2, 3});
  w.value.data = {1, 2, 3, 4, 5, 6};
  DTensor x({1, 2});
  x.data = {1.0, -1.0};
  DGraph g;
  const auto y = g.linear(g.constant(x), g.param(w), std::nullopt);
  store.zero_grad();
  g.backward(g.select(y, 1));
  // y[0,1] = x0*w[0,1] + x1*w[1,1]
  CHECK(w.grad.at({0, 1}) == 1.0);
  CHECK(w.grad.at({1, 1}) == -1.0);
  CHECK(w.grad.at({0, 0}) == 0.0);
  CHECK(g.value(y).at({0, 1}) == doctest::Approx(2.0 - 5.0));
}
