#pragma once

#include <string>
#include <utility>
#include <vector>

#include "duscloud/down_net.hpp"
#include "duscloud/noise.hpp"
#include "duscloud/nn/layers.hpp"
#include "duscloud/up_net.hpp"
#include "support.hpp"

namespace testing {

// One finite-difference sweep over every loss and every network block for a
// single seed. Returns (name, worst relative error) pairs.
inline std::vector<std::pair<std::string, double>> gradient_suite(std::uint64_t seed) {
  using namespace duscloud;
  using namespace duscloud::nn;
  std::vector<std::pair<std::string, double>> out;
  Rng rng(seed);
  auto term = [](const LossTerm& t) { return std::make_pair(t.value, t.grad); };

  const auto pred = random_points(rng, 9);
  const auto target = random_points(rng, 9);
  const auto other = random_points(rng, 5);
  out.emplace_back("loss_mse", point_loss_gradient_error(pred, [&](const auto& p) { return term(loss_mse(p, target)); }));
  out.emplace_back("loss_cos", point_loss_gradient_error(pred, [&](const auto& p) { return term(loss_cos(p, target)); }));
  out.emplace_back("loss_chamfer",
                   point_loss_gradient_error(pred, [&](const auto& p) { return term(loss_chamfer(p, other)); }));
  out.emplace_back("loss_down", point_loss_gradient_error(pred, [&](const auto& p) {
                     const DownLoss l = loss_down(p, target);
                     return std::make_pair(l.total, l.grad);
                   }));

  const auto up_pred = random_points(rng, 10);
  const auto gt = random_points(rng, 10);
  out.emplace_back("loss_emd", point_loss_gradient_error(up_pred, [&](const auto& p) { return term(loss_emd(p, gt)); }));
  out.emplace_back("loss_emd_assignment", point_loss_gradient_error(up_pred, [&](const auto& p) {
                     return term(loss_emd_assignment(p, gt));
                   }));
  out.emplace_back("loss_repulsion",
                   point_loss_gradient_error(up_pred, [&](const auto& p) { return term(loss_repulsion(p, 3, 0.5)); }));
  out.emplace_back("loss_up", point_loss_gradient_error(up_pred, [&](const auto& p) {
                     UpLossOptions o;
                     o.rep_k = 4;
                     o.rep_h = 0.5;
                     const UpLoss l = loss_up(p, gt, o);
                     return std::make_pair(l.total, l.grad);
                   }));

  {
    const std::size_t heads = 1 + rng.index(2);
    out.emplace_back("attention", op_gradient_error({random_tensor(rng, 3, 2 * heads), random_tensor(rng, 3, 2 * heads),
                                                     random_tensor(rng, 3, 2 * heads)},
                                                    [&](Tape&, const std::vector<Var>& v) {
                                                      return multi_head_attention(v[0], v[1], v[2], heads);
                                                    },
                                                    rng));
    std::vector<double> scale(5);
    for (auto& s : scale) s = rng.uniform(0.1, 2.0);
    out.emplace_back("scaled_tanh", op_gradient_error({random_tensor(rng, 5, 3, 2.0)},
                                                      [&](Tape&, const std::vector<Var>& v) {
                                                        return scaled_tanh(v[0], scale);
                                                      },
                                                      rng));
    out.emplace_back("layer_norm",
                     op_gradient_error({random_tensor(rng, 4, 6), random_tensor(rng, 1, 6), random_tensor(rng, 1, 6)},
                                       [](Tape&, const std::vector<Var>& v) { return layer_norm(v[0], v[1], v[2], 1e-5); },
                                       rng));
  }
  {
    ParamStore store;
    const Mlp mlp(store, "m", {{4, 7, 3}}, rng);
    const Tensor x = random_tensor(rng, 6, 4);
    const double p = param_gradient_error(store, [&](Tape& t) { return mlp.forward(t, store, t.input(x)); }, rng, 100);
    const double i = op_gradient_error({x}, [&](Tape& t, const std::vector<Var>& v) { return mlp.forward(t, store, v[0]); },
                                       rng);
    out.emplace_back("mlp", std::max(p, i));
  }
  {
    ParamStore store;
    const Mlp mlp(store, "p", {{3, 6, 4}, Activation::kRelu, false}, rng);
    const Tensor pts = random_tensor(rng, 3 * 4, 3);
    out.emplace_back("pointnet", param_gradient_error(
                                     store, [&](Tape& t) { return pointnet_forward(t, store, mlp, t.input(pts), 4); },
                                     rng, 100));
  }
  {
    ParamStore store;
    const Decoder dec(store, "d", {5, 8, 1, 2, 10, 1e-5}, rng);
    const Tensor tokens = random_tensor(rng, 4, 5);
    const double p = param_gradient_error(store, [&](Tape& t) { return dec.forward(t, store, t.input(tokens)); }, rng, 1000);
    const double i = op_gradient_error(
        {tokens}, [&](Tape& t, const std::vector<Var>& v) { return dec.forward(t, store, v[0]); }, rng);
    out.emplace_back("decoder", std::max(p, i));
  }
  {
    DownNetConfig c;
    c.groups = 4;
    c.neighbors = 3;
    c.position_width = 6;
    c.patch_width = 6;
    c.feature_width = 8;
    c.depth = 1;
    c.heads = 2;
    c.ffn_width = 10;
    c.position_hidden = 5;
    c.patch_hidden = 5;
    c.head_hidden = 7;
    DownNetModel model(c, rng.next_u64());
    PatchSet ps;
    for (std::size_t i = 0; i < c.groups; ++i) {
      Patch p;
      p.center = random_points(rng, 1).front();
      p.neighbors = random_points(rng, c.neighbors);
      ps.patches.push_back(p);
    }
    NoiseParams n;
    n.seed = rng.next_u64();
    const NoisyPatchSet noisy = inject(ps, n);
    out.emplace_back("down_net",
                     param_gradient_error(model.params(), [&](Tape& t) { return model.forward(t, noisy); }, rng, 4));
  }
  {
    const auto pts = random_points(rng, 16);
    const ScalePyramid pyr = build_pyramid(pts, 4);
    ParamStore store;
    const Mlp mlp(store, "sa", {{3 + 3, 5, 4}, Activation::kRelu, false}, rng);
    const Tensor feats = random_tensor(rng, 16, 3);
    auto sa = [&](Tape& t, Var f) {
      return set_abstraction(t, store, mlp, pyr.levels[0], f, pyr.levels[1], pyr.neighborhoods[0],
                             pyr.neighborhood_size[0]);
    };
    const double p = param_gradient_error(store, [&](Tape& t) { return sa(t, t.input(feats)); }, rng, 100);
    const double i = op_gradient_error({feats}, [&](Tape& t, const std::vector<Var>& v) { return sa(t, v[0]); }, rng);
    out.emplace_back("set_abstraction", std::max(p, i));
    const Tensor coarse = random_tensor(rng, pyr.levels[1].size(), 3);
    out.emplace_back("tri_interpolate",
                     op_gradient_error({coarse},
                                       [&](Tape&, const std::vector<Var>& v) {
                                         return tri_interpolate(pyr.levels[0], pyr.levels[1], v[0]);
                                       },
                                       rng));
  }
  {
    UpNetConfig c;
    c.gamma = 2;
    c.sa_k = 3;
    c.sa_width = 5;
    c.conv_width = 4;
    c.head_hidden = 6;
    UpNetModel model(c, rng.next_u64());
    const auto centers = random_points(rng, 12);
    out.emplace_back("up_net",
                     param_gradient_error(model.params(), [&](Tape& t) { return model.forward(t, centers); }, rng, 4));
  }
  return out;
}

}  // namespace testing
