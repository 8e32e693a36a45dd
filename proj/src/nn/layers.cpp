#include "duscloud/nn/layers.hpp"

#include "duscloud/error.hpp"

namespace duscloud::nn {
namespace {

std::size_t add_weight(ParamStore& store, const std::string& name, std::size_t in, std::size_t out, Rng& rng) {
  return store.add_uniform(name, {in, out}, in, rng);
}

std::size_t add_bias(ParamStore& store, const std::string& name, std::size_t in, std::size_t out, Rng& rng) {
  return store.add_uniform(name, {1, out}, in, rng);
}

std::size_t add_constant(ParamStore& store, const std::string& name, std::size_t width, double value) {
  return store.add(name, Tensor({1, width}, value));
}

std::size_t expect(const ParamStore& store, const std::string& name, std::size_t rows, std::size_t cols) {
  const std::size_t id = store.index_of(name);
  const auto& shape = store[id].value.shape();
  if (shape.size() != 2 || shape[0] != rows || shape[1] != cols) {
    throw Error(ErrorKind::kShapeMismatch, "parameter '" + name + "' has unexpected shape");
  }
  return id;
}

}  // namespace

void MlpSpec::validate() const {
  if (widths.size() < 2) throw Error(ErrorKind::kInvalidArgument, "MLP needs at least one layer");
  for (std::size_t w : widths) {
    if (w == 0) throw Error(ErrorKind::kInvalidArgument, "MLP widths must be positive");
  }
}

Mlp::Mlp(ParamStore& store, const std::string& prefix, MlpSpec spec, Rng& rng) : spec_(std::move(spec)) {
  spec_.validate();
  for (std::size_t l = 0; l + 1 < spec_.widths.size(); ++l) {
    const std::size_t in = spec_.widths[l];
    const std::size_t out = spec_.widths[l + 1];
    const std::string base = prefix + "." + std::to_string(l);
    weights_.push_back(add_weight(store, base + ".w", in, out, rng));
    biases_.push_back(add_bias(store, base + ".b", in, out, rng));
  }
}

Mlp Mlp::attach(const ParamStore& store, const std::string& prefix, MlpSpec spec) {
  spec.validate();
  Mlp m;
  m.spec_ = std::move(spec);
  for (std::size_t l = 0; l + 1 < m.spec_.widths.size(); ++l) {
    const std::string base = prefix + "." + std::to_string(l);
    m.weights_.push_back(expect(store, base + ".w", m.spec_.widths[l], m.spec_.widths[l + 1]));
    m.biases_.push_back(expect(store, base + ".b", 1, m.spec_.widths[l + 1]));
  }
  return m;
}

Var Mlp::forward(Tape& tape, const ParamStore& store, Var x) const {
  if (x.cols() != spec_.input_width()) {
    throw Error(ErrorKind::kShapeMismatch, "MLP expects width " + std::to_string(spec_.input_width()) + ", got " +
                                               std::to_string(x.cols()));
  }
  Var h = x;
  for (std::size_t l = 0; l < weights_.size(); ++l) {
    h = linear(h, store.bind(tape, weights_[l]), store.bind(tape, biases_[l]));
    const bool last = l + 1 == weights_.size();
    if (spec_.activation == Activation::kRelu && !(last && spec_.linear_last)) h = relu(h);
  }
  return h;
}

Var pointnet_forward(Tape& tape, const ParamStore& store, const Mlp& shared, Var points, std::size_t group_size) {
  if (group_size < 1 || points.rows() % group_size != 0) {
    throw Error(ErrorKind::kShapeMismatch, "PointNet rows must be a multiple of the group size");
  }
  return group_max(shared.forward(tape, store, points), group_size);
}

void DecoderSpec::validate() const {
  if (input_width == 0 || width == 0 || ffn_width == 0 || heads == 0) {
    throw Error(ErrorKind::kInvalidArgument, "decoder widths and head count must be positive");
  }
  if (width % heads != 0) throw Error(ErrorKind::kInvalidArgument, "decoder width must be divisible by heads");
}

Decoder::Decoder(ParamStore& store, const std::string& prefix, DecoderSpec spec, Rng& rng) : spec_(spec) {
  spec_.validate();
  const std::size_t w = spec_.width;
  in_w_ = add_weight(store, prefix + ".in.w", spec_.input_width, w, rng);
  in_b_ = add_bias(store, prefix + ".in.b", spec_.input_width, w, rng);
  for (std::size_t l = 0; l < spec_.depth; ++l) {
    const std::string p = prefix + ".block" + std::to_string(l);
    Block b{};
    b.wq = add_weight(store, p + ".q.w", w, w, rng);
    b.bq = add_bias(store, p + ".q.b", w, w, rng);
    b.wk = add_weight(store, p + ".k.w", w, w, rng);
    b.bk = add_bias(store, p + ".k.b", w, w, rng);
    b.wv = add_weight(store, p + ".v.w", w, w, rng);
    b.bv = add_bias(store, p + ".v.b", w, w, rng);
    b.wo = add_weight(store, p + ".o.w", w, w, rng);
    b.bo = add_bias(store, p + ".o.b", w, w, rng);
    b.ln1_g = add_constant(store, p + ".ln1.g", w, 1.0);
    b.ln1_b = add_constant(store, p + ".ln1.b", w, 0.0);
    b.w1 = add_weight(store, p + ".ffn1.w", w, spec_.ffn_width, rng);
    b.b1 = add_bias(store, p + ".ffn1.b", w, spec_.ffn_width, rng);
    b.w2 = add_weight(store, p + ".ffn2.w", spec_.ffn_width, w, rng);
    b.b2 = add_bias(store, p + ".ffn2.b", spec_.ffn_width, w, rng);
    b.ln2_g = add_constant(store, p + ".ln2.g", w, 1.0);
    b.ln2_b = add_constant(store, p + ".ln2.b", w, 0.0);
    blocks_.push_back(b);
  }
}

Decoder Decoder::attach(const ParamStore& store, const std::string& prefix, DecoderSpec spec) {
  spec.validate();
  Decoder d;
  d.spec_ = spec;
  const std::size_t w = spec.width;
  const std::size_t f = spec.ffn_width;
  d.in_w_ = expect(store, prefix + ".in.w", spec.input_width, w);
  d.in_b_ = expect(store, prefix + ".in.b", 1, w);
  for (std::size_t l = 0; l < spec.depth; ++l) {
    const std::string p = prefix + ".block" + std::to_string(l);
    Block b{};
    b.wq = expect(store, p + ".q.w", w, w);
    b.bq = expect(store, p + ".q.b", 1, w);
    b.wk = expect(store, p + ".k.w", w, w);
    b.bk = expect(store, p + ".k.b", 1, w);
    b.wv = expect(store, p + ".v.w", w, w);
    b.bv = expect(store, p + ".v.b", 1, w);
    b.wo = expect(store, p + ".o.w", w, w);
    b.bo = expect(store, p + ".o.b", 1, w);
    b.ln1_g = expect(store, p + ".ln1.g", 1, w);
    b.ln1_b = expect(store, p + ".ln1.b", 1, w);
    b.w1 = expect(store, p + ".ffn1.w", w, f);
    b.b1 = expect(store, p + ".ffn1.b", 1, f);
    b.w2 = expect(store, p + ".ffn2.w", f, w);
    b.b2 = expect(store, p + ".ffn2.b", 1, w);
    b.ln2_g = expect(store, p + ".ln2.g", 1, w);
    b.ln2_b = expect(store, p + ".ln2.b", 1, w);
    d.blocks_.push_back(b);
  }
  return d;
}

Var Decoder::forward(Tape& tape, const ParamStore& store, Var tokens, AttentionTrace* trace) const {
  if (tokens.cols() != spec_.input_width || tokens.rows() == 0) {
    throw Error(ErrorKind::kShapeMismatch, "decoder expects G x " + std::to_string(spec_.input_width) + " tokens");
  }
  auto p = [&](std::size_t id) { return store.bind(tape, id); };
  if (trace) trace->clear();
  Var x = linear(tokens, p(in_w_), p(in_b_));
  for (const Block& b : blocks_) {
    const Var q = linear(x, p(b.wq), p(b.bq));
    const Var k = linear(x, p(b.wk), p(b.bk));
    const Var v = linear(x, p(b.wv), p(b.bv));
    std::vector<Tensor> probs;
    const Var attn = multi_head_attention(q, k, v, spec_.heads, trace ? &probs : nullptr);
    if (trace) trace->push_back(std::move(probs));
    x = layer_norm(add(x, linear(attn, p(b.wo), p(b.bo))), p(b.ln1_g), p(b.ln1_b), spec_.ln_eps);
    const Var ff = linear(relu(linear(x, p(b.w1), p(b.b1))), p(b.w2), p(b.b2));
    x = layer_norm(add(x, ff), p(b.ln2_g), p(b.ln2_b), spec_.ln_eps);
  }
  return x;
}

}  // namespace duscloud::nn
