#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <functional>
#include <limits>
#include <numeric>
#include <vector>

#include "duscloud/geometry.hpp"
#include "duscloud/nn/ops.hpp"
#include "duscloud/nn/param_store.hpp"
#include "duscloud/nn/tape.hpp"
#include "duscloud/rng.hpp"

namespace testing {

using duscloud::Point3;
using duscloud::Rng;
using duscloud::nn::Tape;
using duscloud::nn::Tensor;
using duscloud::nn::Var;

inline std::vector<Point3> random_points(Rng& rng, std::size_t n, double spread = 1.0) {
  std::vector<Point3> pts(n);
  for (auto& p : pts) p = {rng.uniform(-spread, spread), rng.uniform(-spread, spread), rng.uniform(-spread, spread)};
  return pts;
}

inline Tensor random_tensor(Rng& rng, std::size_t rows, std::size_t cols, double spread = 1.0) {
  Tensor t = Tensor::matrix(rows, cols);
  for (std::size_t i = 0; i < t.size(); ++i) t[i] = rng.uniform(-spread, spread);
  return t;
}

// Plain quadratic-time oracles, written independently of the library code.

inline std::vector<std::size_t> oracle_fps(const std::vector<Point3>& pts, std::size_t g, std::size_t seed) {
  std::vector<std::size_t> picked = {seed};
  while (picked.size() < g) {
    std::size_t best = 0;
    double best_d = -1.0;
    for (std::size_t i = 0; i < pts.size(); ++i) {
      if (std::find(picked.begin(), picked.end(), i) != picked.end()) continue;
      double d = std::numeric_limits<double>::infinity();
      for (std::size_t j : picked) d = std::min(d, duscloud::squared_distance(pts[i], pts[j]));
      if (d > best_d) {
        best_d = d;
        best = i;
      }
    }
    picked.push_back(best);
  }
  return picked;
}

inline std::vector<std::size_t> oracle_knn(const Point3& q, const std::vector<Point3>& pts, std::size_t k) {
  std::vector<std::size_t> idx(pts.size());
  std::iota(idx.begin(), idx.end(), 0);
  std::stable_sort(idx.begin(), idx.end(), [&](std::size_t a, std::size_t b) {
    return duscloud::squared_distance(q, pts[a]) < duscloud::squared_distance(q, pts[b]);
  });
  idx.resize(k);
  return idx;
}

inline double oracle_nn(const Point3& p, const std::vector<Point3>& set) {
  double best = std::numeric_limits<double>::infinity();
  for (const auto& q : set) best = std::min(best, std::sqrt(duscloud::squared_distance(p, q)));
  return best;
}

inline double oracle_chamfer(const std::vector<Point3>& a, const std::vector<Point3>& b) {
  auto one_way = [](const std::vector<Point3>& x, const std::vector<Point3>& y) {
    double sum = 0.0;
    for (const auto& p : x) {
      const double d = oracle_nn(p, y);
      sum += d * d;
    }
    return sum / static_cast<double>(x.size());
  };
  return one_way(a, b) + one_way(b, a);
}

inline double oracle_emd(const std::vector<Point3>& pred, const std::vector<Point3>& gt) {
  double sum = 0.0;
  for (const auto& p : pred) sum += oracle_nn(p, gt);
  return sum;
}

// Inverse-distance interpolation from the three nearest sources, computed from scratch.
inline std::vector<double> oracle_interpolate(const Point3& p, const std::vector<Point3>& src, const Tensor& feats) {
  const auto nb = oracle_knn(p, src, std::min<std::size_t>(3, src.size()));
  std::vector<double> w;
  double total = 0.0;
  for (std::size_t j : nb) {
    w.push_back(1.0 / std::max(std::sqrt(duscloud::squared_distance(p, src[j])), 1e-9));
    total += w.back();
  }
  std::vector<double> out(feats.cols(), 0.0);
  for (std::size_t t = 0; t < nb.size(); ++t)
    for (std::size_t c = 0; c < feats.cols(); ++c) out[c] += w[t] / total * feats.at(nb[t], c);
  return out;
}

// Largest coordinate-wise disagreement between an analytic and a numeric
// gradient. Each entry is compared relative to max(|a|, |n|), floored at
// 1e-3 of the largest numeric entry (or 1e-8 overall) so that entries
// which are zero up to rounding do not dominate.
inline double gradient_error(const std::vector<double>& analytic, const std::vector<double>& numeric) {
  double scale = 0.0;
  for (double v : numeric) scale = std::max(scale, std::abs(v));
  const double floor = std::max(1e-3 * scale, 1e-8);
  double worst = 0.0;
  for (std::size_t i = 0; i < analytic.size(); ++i) {
    const double denom = std::max({std::abs(analytic[i]), std::abs(numeric[i]), floor});
    worst = std::max(worst, std::abs(analytic[i] - numeric[i]) / denom);
  }
  return worst;
}

// Gradient of a point-set loss: analytic grad from `eval` (value, grad), numeric
// by central differences on every coordinate.
inline double point_loss_gradient_error(std::vector<Point3> pts,
                                        const std::function<std::pair<double, std::vector<Point3>>(
                                            const std::vector<Point3>&)>& eval,
                                        double h = 1e-6) {
  const auto [value, grad] = eval(pts);
  (void)value;
  std::vector<double> analytic;
  std::vector<double> numeric;
  for (std::size_t i = 0; i < pts.size(); ++i) {
    for (int c = 0; c < 3; ++c) {
      double* coord = c == 0 ? &pts[i].x : c == 1 ? &pts[i].y : &pts[i].z;
      const double keep = *coord;
      *coord = keep + h;
      const double up = eval(pts).first;
      *coord = keep - h;
      const double down = eval(pts).first;
      *coord = keep;
      numeric.push_back((up - down) / (2 * h));
      analytic.push_back(c == 0 ? grad[i].x : c == 1 ? grad[i].y : grad[i].z);
    }
  }
  return gradient_error(analytic, numeric);
}

// Checks d<w, f(inputs)>/d inputs for a tape-built function with random
// projection weights w.
inline double op_gradient_error(std::vector<Tensor> inputs,
                                const std::function<Var(Tape&, const std::vector<Var>&)>& build, Rng& rng,
                                double h = 1e-6) {
  std::vector<double> w;
  auto project = [&](std::vector<Tensor>& in, bool record, std::vector<std::vector<double>>* grads) {
    Tape tape(record);
    std::vector<Var> vars;
    for (auto& t : in) vars.push_back(tape.input(t));
    const Var out = build(tape, vars);
    if (w.empty()) {
      w.resize(out.value().size());
      for (auto& x : w) x = rng.uniform(-1.0, 1.0);
    }
    double s = 0.0;
    for (std::size_t i = 0; i < w.size(); ++i) s += w[i] * out.value()[i];
    if (grads) {
      tape.backward(out, w);
      for (const auto& v : vars) {
        const auto g = tape.grad(v);
        grads->emplace_back(g.begin(), g.end());
        if (grads->back().empty()) grads->back().assign(v.value().size(), 0.0);
      }
    }
    return s;
  };
  std::vector<std::vector<double>> grads;
  project(inputs, true, &grads);
  std::vector<double> analytic;
  std::vector<double> numeric;
  for (std::size_t t = 0; t < inputs.size(); ++t) {
    for (std::size_t i = 0; i < inputs[t].size(); ++i) {
      const double keep = inputs[t][i];
      inputs[t][i] = keep + h;
      const double up = project(inputs, false, nullptr);
      inputs[t][i] = keep - h;
      const double down = project(inputs, false, nullptr);
      inputs[t][i] = keep;
      numeric.push_back((up - down) / (2 * h));
      analytic.push_back(grads[t][i]);
    }
  }
  return gradient_error(analytic, numeric);
}

// Same projection check against the parameters of a model: `forward` builds
// the output on the given tape from the (possibly perturbed) store. Up to
// `per_tensor` random coordinates of every parameter tensor are probed.
inline double param_gradient_error(duscloud::nn::ParamStore& store,
                                   const std::function<Var(Tape&)>& forward, Rng& rng, std::size_t per_tensor = 6,
                                   double h = 1e-6) {
  std::vector<double> w;
  auto project = [&](Tape& tape) {
    const Var out = forward(tape);
    if (w.empty()) {
      w.resize(out.value().size());
      for (auto& x : w) x = rng.uniform(-1.0, 1.0);
    }
    double s = 0.0;
    for (std::size_t i = 0; i < w.size(); ++i) s += w[i] * out.value()[i];
    return std::make_pair(s, out);
  };
  std::vector<std::vector<double>> grads(store.size());
  {
    Tape tape(true);
    const auto [s, out] = project(tape);
    (void)s;
    tape.backward(out, w);
    tape.for_each_parameter_grad([&](std::size_t key, std::span<const double> g) {
      auto& dst = grads[key];
      if (dst.empty()) dst.assign(g.size(), 0.0);
      for (std::size_t i = 0; i < g.size(); ++i) dst[i] += g[i];
    });
  }
  std::vector<double> analytic;
  std::vector<double> numeric;
  for (std::size_t p = 0; p < store.size(); ++p) {
    Tensor& value = store[p].value;
    for (std::size_t probe = 0; probe < std::min(per_tensor, value.size()); ++probe) {
      const std::size_t i = rng.index(value.size());
      const double keep = value[i];
      value[i] = keep + h;
      Tape up_tape(false);
      const double up = project(up_tape).first;
      value[i] = keep - h;
      Tape down_tape(false);
      const double down = project(down_tape).first;
      value[i] = keep;
      numeric.push_back((up - down) / (2 * h));
      analytic.push_back(grads[p].empty() ? 0.0 : grads[p][i]);
    }
  }
  return gradient_error(analytic, numeric);
}

}  // namespace testing
