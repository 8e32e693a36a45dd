#pragma once

#include <cstddef>
#include <string>
#include <vector>

#include "duscloud/nn/ops.hpp"
#include "duscloud/nn/param_store.hpp"

namespace duscloud::nn {

enum class Activation { kRelu, kNone };

struct MlpSpec {
  std::vector<std::size_t> widths;  // input width first, output width last
  Activation activation = Activation::kRelu;
  bool linear_last = true;

  std::size_t input_width() const { return widths.front(); }
  std::size_t output_width() const { return widths.back(); }
  void validate() const;
};

// Stack of affine layers applied row-wise. Parameters are registered in the
// store as "<prefix>.<layer>.w" / "<prefix>.<layer>.b".
class Mlp {
 public:
  Mlp() = default;
  Mlp(ParamStore& store, const std::string& prefix, MlpSpec spec, Rng& rng);
  // Rebinds to parameters already present in `store` (checkpoint load).
  static Mlp attach(const ParamStore& store, const std::string& prefix, MlpSpec spec);

  Var forward(Tape& tape, const ParamStore& store, Var x) const;
  const MlpSpec& spec() const { return spec_; }

 private:
  MlpSpec spec_;
  std::vector<std::size_t> weights_;
  std::vector<std::size_t> biases_;
};

// Shared MLP over every point followed by a max over each block of
// `group_size` rows: (G*K x 3) -> (G x C). Permutation-invariant per block.
Var pointnet_forward(Tape& tape, const ParamStore& store, const Mlp& shared, Var points, std::size_t group_size);

struct DecoderSpec {
  std::size_t input_width = 128;
  std::size_t width = 128;
  std::size_t depth = 2;
  std::size_t heads = 4;
  std::size_t ffn_width = 256;
  double ln_eps = 1e-5;

  void validate() const;
};

// Attention probabilities per block, then per head.
using AttentionTrace = std::vector<std::vector<Tensor>>;

// Input projection followed by `depth` post-norm blocks:
//   x = LN(x + MHSA(x)); x = LN(x + FFN(x)).
class Decoder {
 public:
  Decoder() = default;
  Decoder(ParamStore& store, const std::string& prefix, DecoderSpec spec, Rng& rng);
  static Decoder attach(const ParamStore& store, const std::string& prefix, DecoderSpec spec);

  Var forward(Tape& tape, const ParamStore& store, Var tokens, AttentionTrace* trace = nullptr) const;
  const DecoderSpec& spec() const { return spec_; }

 private:
  struct Block {
    std::size_t wq, bq, wk, bk, wv, bv, wo, bo;
    std::size_t ln1_g, ln1_b, w1, b1, w2, b2, ln2_g, ln2_b;
  };

  DecoderSpec spec_;
  std::size_t in_w_ = 0;
  std::size_t in_b_ = 0;
  std::vector<Block> blocks_;
};

}  // namespace duscloud::nn
