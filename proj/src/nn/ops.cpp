#include "duscloud/nn/ops.hpp"

#include <Eigen/Dense>
#include <algorithm>
#include <cmath>
#include <limits>
#include <string>

#include "duscloud/error.hpp"

namespace duscloud::nn {
namespace {

using RowMat = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using MatMap = Eigen::Map<RowMat>;
using ConstMatMap = Eigen::Map<const RowMat>;
using Strided = Eigen::Map<RowMat, 0, Eigen::OuterStride<>>;
using ConstStrided = Eigen::Map<const RowMat, 0, Eigen::OuterStride<>>;

ConstMatMap view(const Tensor& t) {
  return ConstMatMap(t.ptr(), static_cast<Eigen::Index>(t.rows()), static_cast<Eigen::Index>(t.cols()));
}
ConstMatMap view(std::span<const double> g, std::size_t rows, std::size_t cols) {
  return ConstMatMap(g.data(), static_cast<Eigen::Index>(rows), static_cast<Eigen::Index>(cols));
}
MatMap view(std::span<double> g, std::size_t rows, std::size_t cols) {
  return MatMap(g.data(), static_cast<Eigen::Index>(rows), static_cast<Eigen::Index>(cols));
}

void require(bool ok, const std::string& what) {
  if (!ok) throw Error(ErrorKind::kShapeMismatch, what);
}

std::string dims(const Tensor& t) { return std::to_string(t.rows()) + "x" + std::to_string(t.cols()); }

bool any_grad(Tape& tape, std::initializer_list<Var> vars) {
  for (Var v : vars) {
    if (tape.requires_grad(v)) return true;
  }
  return false;
}

}  // namespace

Var matmul(Var a, Var b) {
  Tape& tape = a.tape();
  const Tensor& av = a.value();
  const Tensor& bv = b.value();
  require(av.cols() == bv.rows(), "matmul " + dims(av) + " * " + dims(bv));
  Tensor out = Tensor::matrix(av.rows(), bv.cols());
  view(out.data(), out.rows(), out.cols()).noalias() = view(av) * view(bv);
  return tape.record(std::move(out), any_grad(tape, {a, b}),
                     [a, b](Tape& t, const Tensor& o, std::span<const double> g) {
                       const auto dy = view(g, o.rows(), o.cols());
                       if (t.requires_grad(a)) {
                         const Tensor& bv = t.value(b);
                         view(t.grad_buffer(a), o.rows(), bv.rows()).noalias() += dy * view(bv).transpose();
                       }
                       if (t.requires_grad(b)) {
                         const Tensor& av = t.value(a);
                         view(t.grad_buffer(b), av.cols(), o.cols()).noalias() += view(av).transpose() * dy;
                       }
                     });
}

Var linear(Var x, Var w, Var b) {
  Tape& tape = x.tape();
  const Tensor& xv = x.value();
  const Tensor& wv = w.value();
  const Tensor& bv = b.value();
  require(xv.cols() == wv.rows(), "linear input " + dims(xv) + " vs weight " + dims(wv));
  require(bv.size() == wv.cols(), "linear bias width " + std::to_string(bv.size()) + " vs " + dims(wv));
  Tensor out = Tensor::matrix(xv.rows(), wv.cols());
  auto ov = view(out.data(), out.rows(), out.cols());
  ov.noalias() = view(xv) * view(wv);
  ov.rowwise() += view(bv.data(), 1, bv.size()).row(0);
  return tape.record(std::move(out), any_grad(tape, {x, w, b}),
                     [x, w, b](Tape& t, const Tensor& o, std::span<const double> g) {
                       const auto dy = view(g, o.rows(), o.cols());
                       if (t.requires_grad(x)) {
                         const Tensor& wv = t.value(w);
                         view(t.grad_buffer(x), o.rows(), wv.rows()).noalias() += dy * view(wv).transpose();
                       }
                       if (t.requires_grad(w)) {
                         const Tensor& xv = t.value(x);
                         view(t.grad_buffer(w), xv.cols(), o.cols()).noalias() += view(xv).transpose() * dy;
                       }
                       if (t.requires_grad(b)) {
                         auto db = t.grad_buffer(b);
                         const std::size_t c = o.cols();
                         for (std::size_t r = 0; r < o.rows(); ++r) {
                           const double* row = g.data() + r * c;
                           for (std::size_t j = 0; j < c; ++j) db[j] += row[j];
                         }
                       }
                     });
}

Var add(Var a, Var b) {
  Tape& tape = a.tape();
  const Tensor& av = a.value();
  const Tensor& bv = b.value();
  require(av.rows() == bv.rows() && av.cols() == bv.cols(), "add " + dims(av) + " + " + dims(bv));
  Tensor out = Tensor::matrix(av.rows(), av.cols());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = av[i] + bv[i];
  return tape.record(std::move(out), any_grad(tape, {a, b}),
                     [a, b](Tape& t, const Tensor&, std::span<const double> g) {
                       for (Var v : {a, b}) {
                         if (!t.requires_grad(v)) continue;
                         auto dst = t.grad_buffer(v);
                         for (std::size_t i = 0; i < g.size(); ++i) dst[i] += g[i];
                       }
                     });
}

Var relu(Var x) {
  Tape& tape = x.tape();
  const Tensor& xv = x.value();
  Tensor out = Tensor::matrix(xv.rows(), xv.cols());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = xv[i] > 0.0 ? xv[i] : 0.0;
  return tape.record(std::move(out), tape.requires_grad(x), [x](Tape& t, const Tensor& o, std::span<const double> g) {
    auto dst = t.grad_buffer(x);
    const double* ov = o.ptr();
    for (std::size_t i = 0; i < g.size(); ++i) dst[i] += ov[i] > 0.0 ? g[i] : 0.0;
  });
}

Var scaled_tanh(Var x, std::vector<double> scale) {
  Tape& tape = x.tape();
  const Tensor& xv = x.value();
  require(scale.size() == xv.rows(), "scaled_tanh needs one scale per row");
  Tensor out = Tensor::matrix(xv.rows(), xv.cols());
  for (std::size_t i = 0; i < xv.rows(); ++i)
    for (std::size_t j = 0; j < xv.cols(); ++j) out.at(i, j) = scale[i] * std::tanh(xv.at(i, j));
  return tape.record(std::move(out), tape.requires_grad(x),
                     [x, scale = std::move(scale)](Tape& t, const Tensor& o, std::span<const double> g) {
                       auto dst = t.grad_buffer(x);
                       const Tensor& xv = x.value();
                       for (std::size_t i = 0; i < g.size(); ++i) {
                         const double th = std::tanh(xv[i]);
                         dst[i] += g[i] * scale[i / o.cols()] * (1.0 - th * th);
                       }
                     });
}

Var concat_cols(std::span<const Var> parts) {
  require(!parts.empty(), "concat_cols with no inputs");
  Tape& tape = parts.front().tape();
  const std::size_t rows = parts.front().rows();
  std::size_t cols = 0;
  bool needs_grad = false;
  for (Var p : parts) {
    require(p.rows() == rows, "concat_cols row mismatch");
    cols += p.cols();
    needs_grad = needs_grad || tape.requires_grad(p);
  }
  Tensor out = Tensor::matrix(rows, cols);
  std::size_t offset = 0;
  for (Var p : parts) {
    const Tensor& pv = p.value();
    for (std::size_t r = 0; r < rows; ++r) {
      std::copy_n(pv.ptr() + r * pv.cols(), pv.cols(), out.ptr() + r * cols + offset);
    }
    offset += pv.cols();
  }
  std::vector<Var> inputs(parts.begin(), parts.end());
  return tape.record(std::move(out), needs_grad,
                     [inputs = std::move(inputs)](Tape& t, const Tensor& o, std::span<const double> g) {
                       std::size_t off = 0;
                       for (Var p : inputs) {
                         const std::size_t pc = t.value(p).cols();
                         if (t.requires_grad(p)) {
                           auto dst = t.grad_buffer(p);
                           for (std::size_t r = 0; r < o.rows(); ++r) {
                             for (std::size_t c = 0; c < pc; ++c) dst[r * pc + c] += g[r * o.cols() + off + c];
                           }
                         }
                         off += pc;
                       }
                     });
}

Var concat_cols(std::initializer_list<Var> parts) {
  return concat_cols(std::span<const Var>(parts.begin(), parts.size()));
}

Var reshape(Var x, std::size_t rows, std::size_t cols) {
  Tape& tape = x.tape();
  Tensor out = x.value().reshaped({rows, cols});
  return tape.record(std::move(out), tape.requires_grad(x), [x](Tape& t, const Tensor&, std::span<const double> g) {
    auto dst = t.grad_buffer(x);
    for (std::size_t i = 0; i < g.size(); ++i) dst[i] += g[i];
  });
}

Var group_max(Var x, std::size_t group) {
  Tape& tape = x.tape();
  const Tensor& xv = x.value();
  require(group >= 1 && xv.rows() % group == 0,
          "group_max: " + std::to_string(xv.rows()) + " rows not divisible by " + std::to_string(group));
  const std::size_t n = xv.rows() / group;
  const std::size_t c = xv.cols();
  Tensor out = Tensor::matrix(n, c);
  std::vector<std::uint32_t> arg(n * c);
  for (std::size_t i = 0; i < n; ++i) {
    const double* base = xv.ptr() + i * group * c;
    double* dst = out.ptr() + i * c;
    std::uint32_t* a = arg.data() + i * c;
    std::copy_n(base, c, dst);
    std::fill_n(a, c, 0u);
    for (std::size_t r = 1; r < group; ++r) {
      const double* row = base + r * c;
      for (std::size_t j = 0; j < c; ++j) {
        if (row[j] > dst[j]) {
          dst[j] = row[j];
          a[j] = static_cast<std::uint32_t>(r);
        }
      }
    }
  }
  return tape.record(std::move(out), tape.requires_grad(x),
                     [x, group, arg = std::move(arg)](Tape& t, const Tensor& o, std::span<const double> g) {
                       auto dst = t.grad_buffer(x);
                       const std::size_t c = o.cols();
                       for (std::size_t i = 0; i < o.rows(); ++i) {
                         for (std::size_t j = 0; j < c; ++j) {
                           dst[(i * group + arg[i * c + j]) * c + j] += g[i * c + j];
                         }
                       }
                     });
}

Var gather_rows(Var x, std::vector<std::size_t> index) {
  Tape& tape = x.tape();
  const Tensor& xv = x.value();
  const std::size_t c = xv.cols();
  Tensor out = Tensor::matrix(index.size(), c);
  for (std::size_t i = 0; i < index.size(); ++i) {
    require(index[i] < xv.rows(), "gather_rows index out of range");
    std::copy_n(xv.ptr() + index[i] * c, c, out.ptr() + i * c);
  }
  return tape.record(std::move(out), tape.requires_grad(x),
                     [x, index = std::move(index)](Tape& t, const Tensor& o, std::span<const double> g) {
                       auto dst = t.grad_buffer(x);
                       const std::size_t c = o.cols();
                       for (std::size_t i = 0; i < index.size(); ++i) {
                         for (std::size_t j = 0; j < c; ++j) dst[index[i] * c + j] += g[i * c + j];
                       }
                     });
}

Var weighted_rows(Var x, std::vector<std::size_t> index, std::vector<double> weight, std::size_t per) {
  Tape& tape = x.tape();
  const Tensor& xv = x.value();
  require(per >= 1 && index.size() == weight.size() && index.size() % per == 0, "weighted_rows tap layout");
  const std::size_t rows = index.size() / per;
  const std::size_t c = xv.cols();
  Tensor out = Tensor::matrix(rows, c);
  for (std::size_t i = 0; i < rows; ++i) {
    double* dst = out.ptr() + i * c;
    for (std::size_t tap = 0; tap < per; ++tap) {
      const std::size_t src = index[i * per + tap];
      require(src < xv.rows(), "weighted_rows index out of range");
      const double w = weight[i * per + tap];
      const double* row = xv.ptr() + src * c;
      for (std::size_t j = 0; j < c; ++j) dst[j] += w * row[j];
    }
  }
  return tape.record(
      std::move(out), tape.requires_grad(x),
      [x, per, index = std::move(index), weight = std::move(weight)](Tape& t, const Tensor& o, std::span<const double> g) {
        auto dst = t.grad_buffer(x);
        const std::size_t c = o.cols();
        for (std::size_t i = 0; i < o.rows(); ++i) {
          for (std::size_t tap = 0; tap < per; ++tap) {
            const std::size_t src = index[i * per + tap];
            const double w = weight[i * per + tap];
            for (std::size_t j = 0; j < c; ++j) dst[src * c + j] += w * g[i * c + j];
          }
        }
      });
}

Var layer_norm(Var x, Var gain, Var bias, double eps) {
  Tape& tape = x.tape();
  const Tensor& xv = x.value();
  const Tensor& gv = gain.value();
  const Tensor& bv = bias.value();
  const std::size_t n = xv.rows();
  const std::size_t c = xv.cols();
  require(gv.size() == c && bv.size() == c, "layer_norm gain/bias width");
  Tensor out = Tensor::matrix(n, c);
  Tensor normed = Tensor::matrix(n, c);
  std::vector<double> inv_std(n);
  for (std::size_t i = 0; i < n; ++i) {
    const double* row = xv.ptr() + i * c;
    double mean = 0.0;
    for (std::size_t j = 0; j < c; ++j) mean += row[j];
    mean /= static_cast<double>(c);
    double var = 0.0;
    for (std::size_t j = 0; j < c; ++j) var += (row[j] - mean) * (row[j] - mean);
    var /= static_cast<double>(c);
    inv_std[i] = 1.0 / std::sqrt(var + eps);
    for (std::size_t j = 0; j < c; ++j) {
      const double h = (row[j] - mean) * inv_std[i];
      normed.at(i, j) = h;
      out.at(i, j) = gv[j] * h + bv[j];
    }
  }
  return tape.record(
      std::move(out), any_grad(tape, {x, gain, bias}),
      [x, gain, bias, normed = std::move(normed), inv_std = std::move(inv_std)](Tape& t, const Tensor& o,
                                                                                std::span<const double> g) {
        const std::size_t n = o.rows();
        const std::size_t c = o.cols();
        const Tensor& gv = t.value(gain);
        if (t.requires_grad(gain)) {
          auto dg = t.grad_buffer(gain);
          for (std::size_t i = 0; i < n; ++i) {
            for (std::size_t j = 0; j < c; ++j) dg[j] += g[i * c + j] * normed.at(i, j);
          }
        }
        if (t.requires_grad(bias)) {
          auto db = t.grad_buffer(bias);
          for (std::size_t i = 0; i < n; ++i) {
            for (std::size_t j = 0; j < c; ++j) db[j] += g[i * c + j];
          }
        }
        if (t.requires_grad(x)) {
          auto dx = t.grad_buffer(x);
          std::vector<double> dh(c);
          for (std::size_t i = 0; i < n; ++i) {
            double mean_dh = 0.0;
            double mean_dh_h = 0.0;
            for (std::size_t j = 0; j < c; ++j) {
              dh[j] = g[i * c + j] * gv[j];
              mean_dh += dh[j];
              mean_dh_h += dh[j] * normed.at(i, j);
            }
            mean_dh /= static_cast<double>(c);
            mean_dh_h /= static_cast<double>(c);
            for (std::size_t j = 0; j < c; ++j) {
              dx[i * c + j] += inv_std[i] * (dh[j] - mean_dh - normed.at(i, j) * mean_dh_h);
            }
          }
        }
      });
}

Var multi_head_attention(Var q, Var k, Var v, std::size_t heads, std::vector<Tensor>* probabilities) {
  Tape& tape = q.tape();
  const Tensor& qv = q.value();
  const Tensor& kv = k.value();
  const Tensor& vv = v.value();
  const std::size_t n = qv.rows();
  const std::size_t width = qv.cols();
  require(heads >= 1 && width % heads == 0, "attention width not divisible by head count");
  require(kv.rows() == n && vv.rows() == n && kv.cols() == width && vv.cols() == width, "attention q/k/v shapes");
  const std::size_t d = width / heads;
  const double scale = 1.0 / std::sqrt(static_cast<double>(d));
  const auto N = static_cast<Eigen::Index>(n);
  const auto D = static_cast<Eigen::Index>(d);
  const Eigen::OuterStride<> stride(static_cast<Eigen::Index>(width));

  Tensor out = Tensor::matrix(n, width);
  std::vector<RowMat> probs(heads);
  for (std::size_t h = 0; h < heads; ++h) {
    const ConstStrided qh(qv.ptr() + h * d, N, D, stride);
    const ConstStrided kh(kv.ptr() + h * d, N, D, stride);
    const ConstStrided vh(vv.ptr() + h * d, N, D, stride);
    RowMat s = (qh * kh.transpose()) * scale;
    for (Eigen::Index i = 0; i < N; ++i) {
      const double m = s.row(i).maxCoeff();
      s.row(i) = (s.row(i).array() - m).exp().matrix();
      s.row(i) /= s.row(i).sum();
    }
    Strided oh(out.ptr() + h * d, N, D, stride);
    oh.noalias() = s * vh;
    probs[h] = std::move(s);
  }
  if (probabilities) {
    probabilities->clear();
    for (const auto& p : probs) {
      Tensor t = Tensor::matrix(n, n);
      std::copy_n(p.data(), p.size(), t.ptr());
      probabilities->push_back(std::move(t));
    }
  }
  return tape.record(
      std::move(out), any_grad(tape, {q, k, v}),
      [q, k, v, heads, d, scale, probs = std::move(probs)](Tape& t, const Tensor& o, std::span<const double> g) {
        const std::size_t n = o.rows();
        const std::size_t width = o.cols();
        const auto N = static_cast<Eigen::Index>(n);
        const auto D = static_cast<Eigen::Index>(d);
        const Eigen::OuterStride<> stride(static_cast<Eigen::Index>(width));
        const Tensor& qv = t.value(q);
        const Tensor& kv = t.value(k);
        const Tensor& vv = t.value(v);
        const bool gq = t.requires_grad(q);
        const bool gk = t.requires_grad(k);
        const bool gv = t.requires_grad(v);
        double* dq = gq ? t.grad_buffer(q).data() : nullptr;
        double* dk = gk ? t.grad_buffer(k).data() : nullptr;
        double* dv = gv ? t.grad_buffer(v).data() : nullptr;
        for (std::size_t h = 0; h < heads; ++h) {
          const RowMat& p = probs[h];
          const ConstStrided dout(g.data() + h * d, N, D, stride);
          const ConstStrided qh(qv.ptr() + h * d, N, D, stride);
          const ConstStrided kh(kv.ptr() + h * d, N, D, stride);
          const ConstStrided vh(vv.ptr() + h * d, N, D, stride);
          if (gv) Strided(dv + h * d, N, D, stride).noalias() += p.transpose() * dout;
          if (!gq && !gk) continue;
          RowMat dp = dout * vh.transpose();
          const Eigen::VectorXd row_dot = (dp.array() * p.array()).rowwise().sum();
          RowMat ds = (p.array() * (dp.colwise() - row_dot).array()).matrix() * scale;
          if (gq) Strided(dq + h * d, N, D, stride).noalias() += ds * kh;
          if (gk) Strided(dk + h * d, N, D, stride).noalias() += ds.transpose() * qh;
        }
      });
}

}  // namespace duscloud::nn
