#include "duscloud/down_net.hpp"

#include <cstdio>
#include <fstream>

#include "duscloud/error.hpp"
#include "duscloud/kdtree.hpp"

namespace duscloud {
namespace {

void require_aligned(std::span<const Point3> pred, std::span<const Point3> target, const char* what) {
  if (pred.size() != target.size()) {
    throw Error(ErrorKind::kShapeMismatch, std::string(what) + ": " + std::to_string(pred.size()) + " predictions vs " +
                                               std::to_string(target.size()) + " targets");
  }
  if (pred.empty()) throw Error(ErrorKind::kEmptySet, std::string(what) + " on empty sets");
}

}  // namespace

LossTerm loss_mse(std::span<const Point3> pred, std::span<const Point3> target) {
  require_aligned(pred, target, "loss_mse");
  const double inv = 1.0 / static_cast<double>(pred.size());
  LossTerm out;
  out.grad.resize(pred.size());
  for (std::size_t i = 0; i < pred.size(); ++i) {
    const Point3 diff = pred[i] - target[i];
    out.value += diff.dot(diff);
    out.grad[i] = diff * (2.0 * inv);
  }
  out.value *= inv;
  return out;
}

CosineLoss loss_cos(std::span<const Point3> pred, std::span<const Point3> target) {
  require_aligned(pred, target, "loss_cos");
  const double inv = 1.0 / static_cast<double>(pred.size());
  CosineLoss out;
  out.grad.assign(pred.size(), Point3{});
  for (std::size_t i = 0; i < pred.size(); ++i) {
    const double np = pred[i].norm();
    const double nt = target[i].norm();
    if (np == 0.0 || nt == 0.0) {
      ++out.degenerate_pairs;
      continue;
    }
    const double cosine = pred[i].dot(target[i]) / (np * nt);
    out.value += 1.0 - cosine;
    const Point3 dcos = target[i] / (np * nt) - pred[i] * (cosine / (np * np));
    out.grad[i] = dcos * (-inv);
  }
  out.value *= inv;
  return out;
}

LossTerm loss_chamfer(std::span<const Point3> a, std::span<const Point3> b) {
  if (a.empty() || b.empty()) throw Error(ErrorKind::kEmptySet, "loss_chamfer needs two non-empty sets");
  const double inv_a = 1.0 / static_cast<double>(a.size());
  const double inv_b = 1.0 / static_cast<double>(b.size());
  const auto a_to_b = nearest_indices(a, b);
  const auto b_to_a = nearest_indices(b, a);
  LossTerm out;
  out.grad.assign(a.size(), Point3{});
  double forward = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    const Point3 diff = a[i] - b[a_to_b[i]];
    forward += diff.dot(diff);
    out.grad[i] += diff * (2.0 * inv_a);
  }
  double backward = 0.0;
  for (std::size_t j = 0; j < b.size(); ++j) {
    const Point3 diff = b[j] - a[b_to_a[j]];
    backward += diff.dot(diff);
    out.grad[b_to_a[j]] += diff * (-2.0 * inv_b);
  }
  out.value = forward * inv_a + backward * inv_b;
  return out;
}

DownLoss loss_down(std::span<const Point3> pred, std::span<const Point3> target, const DownLossWeights& weights) {
  const LossTerm mse = loss_mse(pred, target);
  const CosineLoss cos = loss_cos(pred, target);
  const LossTerm cd = loss_chamfer(pred, target);
  DownLoss out;
  out.mse = mse.value;
  out.cos = cos.value;
  out.chamfer = cd.value;
  out.degenerate_pairs = cos.degenerate_pairs;
  out.grad.assign(pred.size(), Point3{});
  auto add_term = [&](bool on, const LossTerm& term) {
    if (!on) return;
    out.total += term.value;
    for (std::size_t i = 0; i < pred.size(); ++i) out.grad[i] += term.grad[i];
  };
  add_term(weights.mse, mse);
  add_term(weights.cos, cos);
  add_term(weights.chamfer, cd);
  return out;
}

void DownNetConfig::validate() const {
  const std::size_t fields[] = {groups,    neighbors, position_width,  patch_width,  feature_width,
                                heads,     ffn_width, position_hidden, patch_hidden, head_hidden};
  for (std::size_t f : fields) {
    if (f == 0) throw Error(ErrorKind::kConfigError, "Down-Net dimensions must be positive");
  }
  if (feature_width % heads != 0) throw Error(ErrorKind::kConfigError, "C3 must be divisible by the head count");
}

nlohmann::json DownNetConfig::to_json() const {
  return {{"groups", groups},
          {"neighbors", neighbors},
          {"position_width", position_width},
          {"patch_width", patch_width},
          {"feature_width", feature_width},
          {"depth", depth},
          {"heads", heads},
          {"ffn_width", ffn_width},
          {"position_hidden", position_hidden},
          {"patch_hidden", patch_hidden},
          {"head_hidden", head_hidden}};
}

DownNetConfig DownNetConfig::from_json(const nlohmann::json& j) {
  DownNetConfig c;
  c.groups = j.at("groups");
  c.neighbors = j.at("neighbors");
  c.position_width = j.at("position_width");
  c.patch_width = j.at("patch_width");
  c.feature_width = j.at("feature_width");
  c.depth = j.at("depth");
  c.heads = j.at("heads");
  c.ffn_width = j.at("ffn_width");
  c.position_hidden = j.at("position_hidden");
  c.patch_hidden = j.at("patch_hidden");
  c.head_hidden = j.at("head_hidden");
  c.validate();
  return c;
}

namespace {

nn::MlpSpec position_spec(const DownNetConfig& c) { return {{3, c.position_hidden, c.position_width}}; }
nn::MlpSpec patch_spec(const DownNetConfig& c) {
  return {{3, c.patch_hidden, c.patch_width}, nn::Activation::kRelu, false};
}
nn::DecoderSpec decoder_spec(const DownNetConfig& c) {
  nn::DecoderSpec s;
  s.input_width = c.position_width + c.patch_width;
  s.width = c.feature_width;
  s.depth = c.depth;
  s.heads = c.heads;
  s.ffn_width = c.ffn_width;
  return s;
}
nn::MlpSpec head_spec(const DownNetConfig& c) { return {{c.feature_width, c.head_hidden, 3}}; }

}  // namespace

DownNetModel::DownNetModel(const DownNetConfig& config) : config_(config) { config_.validate(); }

DownNetModel::DownNetModel(const DownNetConfig& config, std::uint64_t seed) : DownNetModel(config) {
  Rng rng(seed);
  position_ = nn::Mlp(params_, "down.position", position_spec(config_), rng);
  patch_ = nn::Mlp(params_, "down.patch", patch_spec(config_), rng);
  decoder_ = nn::Decoder(params_, "down.decoder", decoder_spec(config_), rng);
  head_ = nn::Mlp(params_, "down.head", head_spec(config_), rng);
}

void DownNetModel::attach() {
  position_ = nn::Mlp::attach(params_, "down.position", position_spec(config_));
  patch_ = nn::Mlp::attach(params_, "down.patch", patch_spec(config_));
  decoder_ = nn::Decoder::attach(params_, "down.decoder", decoder_spec(config_));
  head_ = nn::Mlp::attach(params_, "down.head", head_spec(config_));
}

DownNetModel DownNetModel::from_checkpoint(const nn::Checkpoint& ckpt) {
  if (ckpt.kind != "down") throw Error(ErrorKind::kConfigMismatch, "checkpoint kind is '" + ckpt.kind + "', not down");
  DownNetModel model(DownNetConfig::from_json(ckpt.config));
  model.params_ = ckpt.params;
  model.attach();
  return model;
}

nn::Checkpoint DownNetModel::to_checkpoint(const std::string& config_hash) const {
  return nn::Checkpoint{"down", config_hash, config_.to_json(), params_};
}

nn::Var DownNetModel::forward(nn::Tape& tape, const NoisyPatchSet& noisy, nn::AttentionTrace* trace) const {
  const std::size_t g = noisy.group_count();
  const std::size_t k = noisy.neighbor_count();
  if (g != config_.groups || k != config_.neighbors) {
    throw Error(ErrorKind::kShapeMismatch, "Down-Net configured for G=" + std::to_string(config_.groups) +
                                               ", K=" + std::to_string(config_.neighbors) + " but got G=" +
                                               std::to_string(g) + ", K=" + std::to_string(k));
  }
  nn::Tensor centers = nn::Tensor::matrix(g, 3);
  nn::Tensor neighbors = nn::Tensor::matrix(g * k, 3);
  for (std::size_t i = 0; i < g; ++i) {
    const Patch& patch = noisy.patches[i];
    if (patch.neighbors.size() != k) throw Error(ErrorKind::kShapeMismatch, "ragged patch set");
    centers.at(i, 0) = patch.center.x;
    centers.at(i, 1) = patch.center.y;
    centers.at(i, 2) = patch.center.z;
    for (std::size_t j = 0; j < k; ++j) {
      const Point3& q = patch.neighbors[j];
      neighbors.at(i * k + j, 0) = q.x;
      neighbors.at(i * k + j, 1) = q.y;
      neighbors.at(i * k + j, 2) = q.z;
    }
  }
  const nn::Var c = tape.constant(std::move(centers));
  const nn::Var n = tape.constant(std::move(neighbors));
  const nn::Var e_c = position_.forward(tape, params_, c);
  const nn::Var e_p = nn::pointnet_forward(tape, params_, patch_, n, k);
  const nn::Var e_f = decoder_.forward(tape, params_, nn::concat_cols({e_c, e_p}), trace);
  return head_.forward(tape, params_, e_f);
}

std::vector<Point3> rows_to_points(const nn::Tensor& t) {
  if (t.cols() != 3) throw Error(ErrorKind::kShapeMismatch, "expected an N x 3 tensor");
  std::vector<Point3> out(t.rows());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = {t.at(i, 0), t.at(i, 1), t.at(i, 2)};
  return out;
}

nn::Tensor points_to_rows(std::span<const Point3> points) {
  nn::Tensor t = nn::Tensor::matrix(points.size(), 3);
  for (std::size_t i = 0; i < points.size(); ++i) {
    t.at(i, 0) = points[i].x;
    t.at(i, 1) = points[i].y;
    t.at(i, 2) = points[i].z;
  }
  return t;
}

CenterPrediction down_forward(const DownNetModel& model, const NoisyPatchSet& noisy) {
  nn::Tape tape(false);
  const nn::Var out = model.forward(tape, noisy);
  return {rows_to_points(out.value()), noisy.clean_centers};
}

double augmentation_scale(std::uint64_t seed, double jitter, std::size_t epoch, std::size_t cloud) {
  if (jitter <= 0.0) return 1.0;
  Rng rng(derive_seed(seed ^ 0x5343414c45ULL, epoch, cloud));
  return 1.0 - jitter * rng.uniform();
}

std::vector<DownEpochLog> train_down(DownNetModel& model, std::span<const PointCloud> clouds,
                                     const DownTrainConfig& config, const EpochCallback& on_epoch) {
  if (clouds.empty()) throw Error(ErrorKind::kInvalidArgument, "train_down needs at least one cloud");
  std::vector<PatchSet> groups;
  groups.reserve(clouds.size());
  for (const auto& cloud : clouds) {
    groups.push_back(group(normalize(cloud).first, model.config().groups, model.config().neighbors));
  }

  std::vector<DownEpochLog> log;
  for (std::size_t epoch = 1; epoch <= config.epochs; ++epoch) {
    DownEpochLog entry{epoch};
    for (std::size_t c = 0; c < groups.size(); ++c) {
      NoiseParams noise = config.noise;
      noise.seed = derive_seed(config.noise.seed, epoch, c);
      const double s = augmentation_scale(config.noise.seed, config.scale_jitter, epoch, c);
      const PatchSet patches = s == 1.0 ? groups[c] : scaled(groups[c], s);
      const NoisyPatchSet noisy = config.noise_enabled ? inject(patches, noise) : without_noise(patches);

      nn::Tape tape;
      const nn::Var pred = model.forward(tape, noisy);
      const auto pred_points = rows_to_points(pred.value());
      const DownLoss loss = loss_down(pred_points, noisy.clean_centers, config.weights);
      const nn::Tensor seed = points_to_rows(loss.grad);
      tape.backward(pred, seed.data());
      model.params().zero_grad();
      model.params().accumulate(tape);
      nn::adam_step(model.params(), config.adam);

      entry.mse += loss.mse;
      entry.cos += loss.cos;
      entry.chamfer += loss.chamfer;
      entry.total += loss.total;
    }
    const double inv = 1.0 / static_cast<double>(groups.size());
    entry.mse *= inv;
    entry.cos *= inv;
    entry.chamfer *= inv;
    entry.total *= inv;
    log.push_back(entry);
    if (on_epoch) on_epoch(epoch, entry.total);
  }
  return log;
}

void write_down_log(const std::filesystem::path& path, std::span<const DownEpochLog> log) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream out(path);
  if (!out) throw Error(ErrorKind::kIoError, "cannot write " + path.string());
  out << "epoch,mse,cos,chamfer,total\n";
  char buf[160];
  for (const auto& e : log) {
    std::snprintf(buf, sizeof(buf), "%zu,%.9g,%.9g,%.9g,%.9g\n", e.epoch, e.mse, e.cos, e.chamfer, e.total);
    out << buf;
  }
}

}  // namespace duscloud
