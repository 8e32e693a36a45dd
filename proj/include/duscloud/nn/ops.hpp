#pragma once

#include <cstddef>
#include <initializer_list>
#include <span>
#include <vector>

#include "duscloud/nn/tape.hpp"

namespace duscloud::nn {

// All ops take and return rank-2 values (rows x cols).

Var matmul(Var a, Var b);
// x * w + b, with b broadcast over rows (b is 1 x out).
Var linear(Var x, Var w, Var b);
Var add(Var a, Var b);
Var relu(Var x);
// out[i][j] = scale[i] * tanh(x[i][j]): bounded per-row outputs.
Var scaled_tanh(Var x, std::vector<double> scale);
Var concat_cols(std::span<const Var> parts);
Var concat_cols(std::initializer_list<Var> parts);
Var reshape(Var x, std::size_t rows, std::size_t cols);

// Column-wise max over consecutive blocks of `group` rows:
// (n*group x c) -> (n x c). The first maximal row wins the gradient.
Var group_max(Var x, std::size_t group);

// out[i] = x[index[i]].
Var gather_rows(Var x, std::vector<std::size_t> index);

// out[i] = sum_t weight[i*per + t] * x[index[i*per + t]], per taps per row.
Var weighted_rows(Var x, std::vector<std::size_t> index, std::vector<double> weight, std::size_t per);

// Row-wise layer normalisation with learned gain/bias (both 1 x cols).
Var layer_norm(Var x, Var gain, Var bias, double eps);

// Scaled dot-product attention with `heads` equal column slices of q/k/v
// (each rows x width). When `probabilities` is non-null it receives one
// rows x rows softmax matrix per head.
Var multi_head_attention(Var q, Var k, Var v, std::size_t heads, std::vector<Tensor>* probabilities = nullptr);

}  // namespace duscloud::nn
