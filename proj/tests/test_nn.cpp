#include <doctest.h>

#include <algorithm>
#include <sstream>

#include "duscloud/error.hpp"
#include "duscloud/nn/checkpoint.hpp"
#include "duscloud/nn/layers.hpp"
#include "support.hpp"

using namespace duscloud;
using namespace duscloud::nn;
using testing::op_gradient_error;
using testing::param_gradient_error;
using testing::random_tensor;

namespace {

constexpr int kSeeds = 20;
constexpr double kTol = 1e-4;

}  // namespace

TEST_CASE("elementwise and matrix ops pass finite-difference checks") {
  for (int seed = 0; seed < kSeeds; ++seed) {
    Rng rng(1000 + seed);
    const std::size_t r = 2 + rng.index(4);
    const std::size_t c = 2 + rng.index(4);
    const std::size_t m = 2 + rng.index(4);
    CAPTURE(seed);
    CHECK(op_gradient_error({random_tensor(rng, r, c), random_tensor(rng, c, m)},
                            [](Tape&, const std::vector<Var>& v) { return matmul(v[0], v[1]); }, rng) < kTol);
    CHECK(op_gradient_error({random_tensor(rng, r, c), random_tensor(rng, c, m), random_tensor(rng, 1, m)},
                            [](Tape&, const std::vector<Var>& v) { return linear(v[0], v[1], v[2]); }, rng) < kTol);
    CHECK(op_gradient_error({random_tensor(rng, r, c), random_tensor(rng, r, c)},
                            [](Tape&, const std::vector<Var>& v) { return add(v[0], v[1]); }, rng) < kTol);
    CHECK(op_gradient_error({random_tensor(rng, r, c)}, [](Tape&, const std::vector<Var>& v) { return relu(v[0]); },
                            rng) < kTol);
    std::vector<double> scale(r);
    for (auto& s : scale) s = rng.uniform(0.1, 2.0);
    CHECK(op_gradient_error({random_tensor(rng, r, c, 2.0)},
                            [&](Tape&, const std::vector<Var>& v) { return scaled_tanh(v[0], scale); }, rng) < kTol);
    CHECK(op_gradient_error({random_tensor(rng, r, c), random_tensor(rng, r, m)},
                            [](Tape&, const std::vector<Var>& v) { return concat_cols({v[0], v[1]}); }, rng) < kTol);
    CHECK(op_gradient_error({random_tensor(rng, r * 2, c)},
                            [&](Tape&, const std::vector<Var>& v) { return reshape(v[0], r, 2 * c); }, rng) < kTol);
  }
}

TEST_CASE("pooling, gathering and normalisation ops pass finite-difference checks") {
  for (int seed = 0; seed < kSeeds; ++seed) {
    Rng rng(2000 + seed);
    CAPTURE(seed);
    const std::size_t group = 1 + rng.index(4);
    const std::size_t n = 1 + rng.index(4);
    CHECK(op_gradient_error({random_tensor(rng, n * group, 3)},
                            [&](Tape&, const std::vector<Var>& v) { return group_max(v[0], group); }, rng) < kTol);

    std::vector<std::size_t> idx(7);
    for (auto& i : idx) i = rng.index(5);
    CHECK(op_gradient_error({random_tensor(rng, 5, 3)},
                            [&](Tape&, const std::vector<Var>& v) { return gather_rows(v[0], idx); }, rng) < kTol);

    std::vector<std::size_t> taps(4 * 3);
    std::vector<double> weights(taps.size());
    for (std::size_t i = 0; i < taps.size(); ++i) {
      taps[i] = rng.index(6);
      weights[i] = rng.uniform(0.0, 1.0);
    }
    CHECK(op_gradient_error({random_tensor(rng, 6, 2)},
                            [&](Tape&, const std::vector<Var>& v) { return weighted_rows(v[0], taps, weights, 3); },
                            rng) < kTol);

    CHECK(op_gradient_error({random_tensor(rng, 4, 6), random_tensor(rng, 1, 6), random_tensor(rng, 1, 6)},
                            [](Tape&, const std::vector<Var>& v) { return layer_norm(v[0], v[1], v[2], 1e-5); },
                            rng) < kTol);

    const std::size_t heads = 1 + rng.index(3);
    const std::size_t rows = 1 + rng.index(4);
    CHECK(op_gradient_error(
              {random_tensor(rng, rows, 2 * heads), random_tensor(rng, rows, 2 * heads),
               random_tensor(rng, rows, 2 * heads)},
              [&](Tape&, const std::vector<Var>& v) { return multi_head_attention(v[0], v[1], v[2], heads); }, rng) <
          kTol);
  }
}

TEST_CASE("ops reject mismatched shapes") {
  Tape tape;
  const Var a = tape.input(Tensor::matrix(2, 3));
  const Var b = tape.input(Tensor::matrix(2, 2));
  CHECK_THROWS_AS(matmul(a, b), Error);
  CHECK_THROWS_AS(add(a, b), Error);
  CHECK_THROWS_AS(group_max(a, 3), Error);
  CHECK_THROWS_AS(multi_head_attention(a, a, a, 2), Error);
}

TEST_CASE("MLP with identity or zero weights") {
  Rng rng(1);
  ParamStore store;
  const Mlp mlp(store, "m", {{3, 3}, Activation::kRelu, true}, rng);
  Tensor& w = store[store.index_of("m.0.w")].value;
  Tensor& b = store[store.index_of("m.0.b")].value;
  for (std::size_t i = 0; i < 9; ++i) w[i] = (i % 4 == 0) ? 1.0 : 0.0;
  for (std::size_t i = 0; i < 3; ++i) b[i] = 0.0;
  const Tensor x = random_tensor(rng, 5, 3);
  Tape tape(false);
  const Var y = mlp.forward(tape, store, tape.input(x));
  for (std::size_t i = 0; i < x.size(); ++i) CHECK(y.value()[i] == x[i]);

  for (std::size_t i = 0; i < 9; ++i) w[i] = 0.0;
  const Var z = mlp.forward(tape, store, tape.input(x));
  for (std::size_t i = 0; i < x.size(); ++i) CHECK(z.value()[i] == 0.0);
}

TEST_CASE("MLP parameter gradients") {
  for (int seed = 0; seed < kSeeds; ++seed) {
    Rng rng(3000 + seed);
    ParamStore store;
    const Mlp mlp(store, "m", {{4, 7, 3}}, rng);
    const Tensor x = random_tensor(rng, 6, 4);
    CHECK(param_gradient_error(
              store, [&](Tape& t) { return mlp.forward(t, store, t.input(x)); }, rng, 100) < kTol);
    CHECK(op_gradient_error({x}, [&](Tape& t, const std::vector<Var>& v) { return mlp.forward(t, store, v[0]); },
                            rng) < kTol);
  }
}

TEST_CASE("pointnet is permutation invariant and reduces to the single feature for K=1") {
  Rng rng(7);
  ParamStore store;
  const Mlp mlp(store, "p", {{3, 8, 5}, Activation::kRelu, false}, rng);
  const std::size_t k = 6;
  Tensor x = random_tensor(rng, 2 * k, 3);
  Tensor shuffled = x;
  std::vector<std::size_t> perm(k);
  std::iota(perm.begin(), perm.end(), 0);
  std::reverse(perm.begin(), perm.end());
  std::swap(perm[1], perm[4]);
  for (std::size_t i = 0; i < k; ++i)
    for (std::size_t c = 0; c < 3; ++c) shuffled.at(i, c) = x.at(perm[i], c);
  Tape tape(false);
  const Var a = pointnet_forward(tape, store, mlp, tape.input(x), k);
  const Var b = pointnet_forward(tape, store, mlp, tape.input(shuffled), k);
  for (std::size_t i = 0; i < a.value().size(); ++i) CHECK(a.value()[i] == b.value()[i]);

  const Tensor one = random_tensor(rng, 3, 3);
  const Var pooled = pointnet_forward(tape, store, mlp, tape.input(one), 1);
  const Var direct = mlp.forward(tape, store, tape.input(one));
  for (std::size_t i = 0; i < pooled.value().size(); ++i) CHECK(pooled.value()[i] == direct.value()[i]);

  for (int seed = 0; seed < kSeeds; ++seed) {
    Rng r(4000 + seed);
    ParamStore s;
    const Mlp m(s, "p", {{3, 6, 4}, Activation::kRelu, false}, r);
    const Tensor pts = random_tensor(r, 3 * 4, 3);
    CHECK(param_gradient_error(
              s, [&](Tape& t) { return pointnet_forward(t, s, m, t.input(pts), 4); }, r, 100) < kTol);
  }
}

TEST_CASE("decoder attention is a proper softmax") {
  Rng rng(8);
  ParamStore store;
  const Decoder dec(store, "d", {6, 8, 2, 2, 12, 1e-5}, rng);
  {
    Tape tape(false);
    AttentionTrace trace;
    dec.forward(tape, store, tape.input(random_tensor(rng, 1, 6)), &trace);
    REQUIRE(trace.size() == 2);
    for (const auto& block : trace)
      for (const auto& p : block) CHECK(p[0] == 1.0);
  }
  Tape tape(false);
  AttentionTrace trace;
  const Var out = dec.forward(tape, store, tape.input(random_tensor(rng, 9, 6, 10.0)), &trace);
  CHECK(out.value().all_finite());
  for (const auto& block : trace) {
    for (const auto& p : block) {
      for (std::size_t r = 0; r < p.rows(); ++r) {
        double sum = 0.0;
        for (std::size_t c = 0; c < p.cols(); ++c) sum += p.at(r, c);
        CHECK(sum == doctest::Approx(1.0).epsilon(1e-6));
      }
    }
  }
}

TEST_CASE("decoder gradients on G=4, 2 heads, one block") {
  for (int seed = 0; seed < kSeeds; ++seed) {
    Rng rng(5000 + seed);
    ParamStore store;
    const Decoder dec(store, "d", {5, 8, 1, 2, 10, 1e-5}, rng);
    const Tensor tokens = random_tensor(rng, 4, 5);
    CAPTURE(seed);
    CHECK(param_gradient_error(
              store, [&](Tape& t) { return dec.forward(t, store, t.input(tokens)); }, rng, 1000) < kTol);
    CHECK(op_gradient_error({tokens}, [&](Tape& t, const std::vector<Var>& v) { return dec.forward(t, store, v[0]); },
                            rng) < kTol);
  }
}

TEST_CASE("forward passes are bit-deterministic") {
  Rng rng(9);
  ParamStore store;
  const Decoder dec(store, "d", {5, 8, 2, 4, 10, 1e-5}, rng);
  const Tensor tokens = random_tensor(rng, 7, 5);
  Tape a(false);
  Tape b(true);
  const Var x = dec.forward(a, store, a.input(tokens));
  const Var y = dec.forward(b, store, b.input(tokens));
  for (std::size_t i = 0; i < x.value().size(); ++i) CHECK(x.value()[i] == y.value()[i]);
}

TEST_CASE("adam: first step, zero gradient and a quadratic bowl") {
  ParamStore store;
  store.add("theta", Tensor({1, 1}, 2.0));
  store[0].value.enable_grad();
  store[0].value.grad()[0] = 1.0;
  adam_step(store, {0.1, 0.9, 0.999, 1e-8});
  CHECK(store[0].value[0] - 2.0 == doctest::Approx(-0.1 / (1.0 + 1e-8)).epsilon(1e-12));

  ParamStore still;
  still.add("theta", Tensor({1, 3}, 0.5));
  still.zero_grad();
  adam_step(still, {});
  for (std::size_t i = 0; i < 3; ++i) CHECK(still[0].value[i] == 0.5);

  ParamStore bowl;
  bowl.add("theta", Tensor({1, 2}, std::vector<double>{3.0, -2.0}));
  double prev = std::numeric_limits<double>::infinity();
  for (int step = 0; step < 100; ++step) {
    auto& t = bowl[0].value;
    const double loss = t[0] * t[0] + 4 * t[1] * t[1];
    CHECK(loss < prev);
    prev = loss;
    t.zero_grad();
    t.grad()[0] = 2 * t[0];
    t.grad()[1] = 8 * t[1];
    adam_step(bowl, {0.05, 0.9, 0.999, 1e-8});
  }
}

TEST_CASE("tape accumulates gradients for parameters used twice") {
  ParamStore store;
  store.add("w", Tensor({1, 1}, 3.0));
  Tape tape;
  const Var w = store.bind(tape, 0);
  const Var y = matmul(w, w);  // w^2
  tape.backward(y);
  store.zero_grad();
  store.accumulate(tape);
  CHECK(store[0].value.grad()[0] == 6.0);
}

TEST_CASE("checkpoint round trip in both precisions") {
  Rng rng(10);
  Checkpoint ckpt;
  ckpt.kind = "down";
  ckpt.config_hash = "abc";
  ckpt.config = {{"g", 4}};
  ckpt.params.add_uniform("a.w", {3, 4}, 3, rng);
  ckpt.params.add_uniform("a.b", {1, 4}, 3, rng);

  std::stringstream f64;
  write_checkpoint(f64, ckpt);
  const Checkpoint back = read_checkpoint(f64);
  CHECK(back.kind == "down");
  CHECK(back.config_hash == "abc");
  CHECK(back.config == ckpt.config);
  CHECK(back.params.same_values(ckpt.params));

  std::stringstream f32;
  write_checkpoint(f32, ckpt, Dtype::kF32);
  const Checkpoint lossy = read_checkpoint(f32);
  for (std::size_t i = 0; i < 12; ++i) {
    CHECK(lossy.params[0].value[i] == doctest::Approx(ckpt.params[0].value[i]).epsilon(1e-6));
  }

  std::stringstream junk("not a checkpoint at all");
  CHECK_THROWS_AS(read_checkpoint(junk), Error);

  ParamStore target;
  target.add("a.w", Tensor({3, 4}));
  target.add("a.b", Tensor({1, 4}));
  copy_values(ckpt.params, target);
  CHECK(target.same_values(ckpt.params));
}

TEST_CASE("tensor reshape keeps data and checks counts") {
  Tensor t({2, 3}, std::vector<double>{1, 2, 3, 4, 5, 6});
  const Tensor r = t.reshaped({3, 2});
  CHECK(r.at(2, 1) == 6.0);
  CHECK_THROWS_AS(t.reshaped({4, 2}), Error);
}
