#include "duscloud/up_net.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <limits>

#include "duscloud/error.hpp"
#include "duscloud/kdtree.hpp"

namespace duscloud {
namespace {

constexpr double kInterpolationFloor = 1e-9;
// Keeps the Up-Net noise stream apart from the one Down-Net training used.
constexpr std::uint64_t kUpNoiseStream = 0x55502d4e4f495345ULL;

void require_nonempty(std::span<const Point3> a, std::span<const Point3> b, const char* what) {
  if (a.empty() || b.empty()) throw Error(ErrorKind::kEmptySet, std::string(what) + " needs two non-empty sets");
}

// Minimum-cost perfect matching on a square cost matrix (row-major), returning
// the column assigned to each row. Shortest augmenting paths with potentials.
std::vector<std::size_t> hungarian(const std::vector<double>& cost, std::size_t n) {
  const double inf = std::numeric_limits<double>::infinity();
  std::vector<double> u(n + 1, 0.0);
  std::vector<double> v(n + 1, 0.0);
  std::vector<std::size_t> match(n + 1, 0);  // column -> row, 1-based, 0 = free
  std::vector<std::size_t> way(n + 1, 0);
  std::vector<double> minv(n + 1);
  std::vector<char> used(n + 1);
  for (std::size_t row = 1; row <= n; ++row) {
    match[0] = row;
    std::size_t col0 = 0;
    std::fill(minv.begin(), minv.end(), inf);
    std::fill(used.begin(), used.end(), 0);
    do {
      used[col0] = 1;
      const std::size_t r = match[col0];
      double delta = inf;
      std::size_t col1 = 0;
      for (std::size_t c = 1; c <= n; ++c) {
        if (used[c]) continue;
        const double cur = cost[(r - 1) * n + (c - 1)] - u[r] - v[c];
        if (cur < minv[c]) {
          minv[c] = cur;
          way[c] = col0;
        }
        if (minv[c] < delta) {
          delta = minv[c];
          col1 = c;
        }
      }
      for (std::size_t c = 0; c <= n; ++c) {
        if (used[c]) {
          u[match[c]] += delta;
          v[c] -= delta;
        } else {
          minv[c] -= delta;
        }
      }
      col0 = col1;
    } while (match[col0] != 0);
    do {
      const std::size_t col1 = way[col0];
      match[col0] = match[col1];
      col0 = col1;
    } while (col0 != 0);
  }
  std::vector<std::size_t> assigned(n);
  for (std::size_t c = 1; c <= n; ++c) assigned[match[c] - 1] = c - 1;
  return assigned;
}

void add_distance_term(LossTerm& out, std::size_t i, const Point3& p, const Point3& q) {
  const Point3 diff = p - q;
  const double d = diff.norm();
  out.value += d;
  if (d > 0.0) out.grad[i] += diff / d;
}

}  // namespace

LossTerm loss_emd(std::span<const Point3> pred, std::span<const Point3> gt) {
  require_nonempty(pred, gt, "loss_emd");
  const auto nearest = nearest_indices(pred, gt);
  LossTerm out;
  out.grad.assign(pred.size(), Point3{});
  for (std::size_t i = 0; i < pred.size(); ++i) add_distance_term(out, i, pred[i], gt[nearest[i]]);
  return out;
}

LossTerm loss_emd_assignment(std::span<const Point3> pred, std::span<const Point3> gt) {
  require_nonempty(pred, gt, "loss_emd_assignment");
  if (pred.size() != gt.size()) {
    throw Error(ErrorKind::kShapeMismatch, "assignment EMD needs equal set sizes, got " +
                                               std::to_string(pred.size()) + " and " + std::to_string(gt.size()));
  }
  const std::size_t n = pred.size();
  std::vector<double> cost(n * n);
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t j = 0; j < n; ++j) cost[i * n + j] = distance(pred[i], gt[j]);
  }
  const auto assigned = hungarian(cost, n);
  LossTerm out;
  out.grad.assign(n, Point3{});
  for (std::size_t i = 0; i < n; ++i) add_distance_term(out, i, pred[i], gt[assigned[i]]);
  return out;
}

LossTerm loss_repulsion(std::span<const Point3> cloud, std::size_t k, double h) {
  if (k == 0) throw Error(ErrorKind::kInvalidArgument, "repulsion needs k >= 1");
  if (!(h > 0.0)) throw Error(ErrorKind::kInvalidArgument, "repulsion bandwidth must be positive");
  const double inv_h2 = 1.0 / (h * h);
  if (k >= cloud.size()) {
    throw Error(ErrorKind::kOutOfRange, "repulsion k=" + std::to_string(k) + " needs more than " +
                                            std::to_string(cloud.size()) + " points");
  }
  const KdTree tree(cloud);
  LossTerm out;
  out.grad.assign(cloud.size(), Point3{});
  for (std::size_t i = 0; i < cloud.size(); ++i) {
    auto found = tree.knn(cloud[i], k + 1);
    const auto self = std::find_if(found.begin(), found.end(), [i](const Neighbor& n) { return n.index == i; });
    if (self != found.end()) {
      found.erase(self);
    } else {
      found.pop_back();
    }
    for (const Neighbor& nb : found) {
      const double d = std::sqrt(nb.squared_distance);
      const double w = std::exp(-d * d * inv_h2);
      out.value -= d * w;
      if (d == 0.0) continue;
      const double coef = -(1.0 - 2.0 * d * d * inv_h2) * w / d;
      const Point3 g = (cloud[i] - cloud[nb.index]) * coef;
      out.grad[i] += g;
      out.grad[nb.index] += g * -1.0;
    }
  }
  return out;
}

UpLoss loss_up(std::span<const Point3> pred, std::span<const Point3> gt, const UpLossOptions& options) {
  const LossTerm rep = loss_repulsion(pred, options.rep_k, options.rep_h);
  const LossTerm emd = options.emd_mode == EmdMode::kAssignment ? loss_emd_assignment(pred, gt) : loss_emd(pred, gt);
  UpLoss out;
  out.rep = rep.value;
  out.emd = emd.value;
  out.grad.assign(pred.size(), Point3{});
  auto add_term = [&](bool on, const LossTerm& term) {
    if (!on) return;
    out.total += term.value;
    for (std::size_t i = 0; i < pred.size(); ++i) out.grad[i] += term.grad[i];
  };
  add_term(options.repulsion, rep);
  add_term(options.emd, emd);
  return out;
}

ScalePyramid build_pyramid(std::span<const Point3> centers, std::size_t sa_k) {
  if (centers.empty()) throw Error(ErrorKind::kEmptySet, "pyramid over an empty center set");
  if (sa_k == 0) throw Error(ErrorKind::kInvalidArgument, "set abstraction needs sa_k >= 1");
  ScalePyramid pyr;
  pyr.levels[0].assign(centers.begin(), centers.end());
  for (std::size_t l = 0; l < 2; ++l) {
    const auto& prev = pyr.levels[l];
    const std::size_t count = std::max<std::size_t>(1, centers.size() / (l == 0 ? 2 : 4));
    const auto picks = fps(prev, std::min(count, prev.size()), fps_seed(prev));
    auto& next = pyr.levels[l + 1];
    for (std::size_t idx : picks) next.push_back(prev[idx]);
    const std::size_t per = std::min(sa_k, prev.size());
    pyr.neighborhood_size[l] = per;
    auto& hood = pyr.neighborhoods[l];
    hood.reserve(next.size() * per);
    for (const Point3& p : next) {
      const auto nb = knn(p, prev, per);
      hood.insert(hood.end(), nb.begin(), nb.end());
    }
  }
  return pyr;
}

InterpolationTaps interpolation_taps(std::span<const Point3> target, std::span<const Point3> source) {
  if (source.empty()) throw Error(ErrorKind::kEmptySet, "interpolation from an empty source");
  InterpolationTaps taps;
  taps.per = std::min<std::size_t>(3, source.size());
  taps.index.reserve(target.size() * taps.per);
  taps.weight.reserve(target.size() * taps.per);
  for (const Point3& p : target) {
    const auto nb = knn(p, source, taps.per);
    double total = 0.0;
    const std::size_t first = taps.weight.size();
    for (std::size_t j : nb) {
      const double w = 1.0 / std::max(distance(p, source[j]), kInterpolationFloor);
      taps.index.push_back(j);
      taps.weight.push_back(w);
      total += w;
    }
    for (std::size_t t = first; t < taps.weight.size(); ++t) taps.weight[t] /= total;
  }
  return taps;
}

nn::Var tri_interpolate(std::span<const Point3> target, std::span<const Point3> source, nn::Var source_feats) {
  if (source_feats.rows() != source.size()) {
    throw Error(ErrorKind::kShapeMismatch, "interpolation features are not row-aligned with their points");
  }
  InterpolationTaps taps = interpolation_taps(target, source);
  return nn::weighted_rows(source_feats, std::move(taps.index), std::move(taps.weight), taps.per);
}

nn::Var set_abstraction(nn::Tape& tape, const nn::ParamStore& store, const nn::Mlp& mlp,
                        std::span<const Point3> prev_points, nn::Var prev_feats, std::span<const Point3> next_points,
                        std::span<const std::size_t> neighborhoods, std::size_t per) {
  if (per == 0 || neighborhoods.size() != next_points.size() * per) {
    throw Error(ErrorKind::kShapeMismatch, "set abstraction neighborhoods do not match the next level");
  }
  if (prev_feats.rows() != prev_points.size()) {
    throw Error(ErrorKind::kShapeMismatch, "set abstraction features are not row-aligned with their points");
  }
  nn::Tensor rel = nn::Tensor::matrix(neighborhoods.size(), 3);
  for (std::size_t i = 0; i < next_points.size(); ++i) {
    for (std::size_t t = 0; t < per; ++t) {
      const std::size_t j = neighborhoods[i * per + t];
      if (j >= prev_points.size()) throw Error(ErrorKind::kOutOfRange, "set abstraction neighbor index");
      const Point3 d = prev_points[j] - next_points[i];
      rel.at(i * per + t, 0) = d.x;
      rel.at(i * per + t, 1) = d.y;
      rel.at(i * per + t, 2) = d.z;
    }
  }
  const nn::Var offsets = tape.constant(std::move(rel));
  const nn::Var gathered = nn::gather_rows(prev_feats, {neighborhoods.begin(), neighborhoods.end()});
  return nn::pointnet_forward(tape, store, mlp, nn::concat_cols({offsets, gathered}), per);
}

void UpNetConfig::validate() const {
  if (gamma == 0) throw Error(ErrorKind::kConfigError, "up.gamma must be at least 1");
  if (sa_k == 0) throw Error(ErrorKind::kConfigError, "up.sa_k must be at least 1");
  if (sa_width == 0 || conv_width == 0 || head_hidden == 0) {
    throw Error(ErrorKind::kConfigError, "Up-Net widths must be positive");
  }
  if (!(offset_scale > 0.0)) throw Error(ErrorKind::kConfigError, "up.offset_scale must be positive");
}

nlohmann::json UpNetConfig::to_json() const {
  return {{"gamma", gamma},
          {"sa_k", sa_k},
          {"sa_width", sa_width},
          {"conv_width", conv_width},
          {"head_hidden", head_hidden},
          {"offset_scale", offset_scale}};
}

UpNetConfig UpNetConfig::from_json(const nlohmann::json& j) {
  UpNetConfig c;
  c.gamma = j.at("gamma");
  c.sa_k = j.at("sa_k");
  c.sa_width = j.at("sa_width");
  c.conv_width = j.at("conv_width");
  c.head_hidden = j.at("head_hidden");
  c.offset_scale = j.at("offset_scale");
  c.validate();
  return c;
}

namespace {

nn::MlpSpec sa_spec(const UpNetConfig& c, std::size_t in) {
  return {{3 + in, c.sa_width, c.sa_width}, nn::Activation::kRelu, false};
}
nn::MlpSpec conv_spec(const UpNetConfig& c, std::size_t in) {
  return {{in, c.conv_width, c.conv_width, c.conv_width}, nn::Activation::kRelu, false};
}
nn::MlpSpec branch_spec(const UpNetConfig& c) {
  return {{2 * c.conv_width, c.conv_width}, nn::Activation::kRelu, false};
}
nn::MlpSpec head_spec(const UpNetConfig& c) { return {{2 * c.conv_width, c.head_hidden, 3 * c.gamma}}; }

std::size_t conv_input(const UpNetConfig& c, std::size_t level) { return level == 0 ? 3 : c.sa_width; }

}  // namespace

UpNetModel::UpNetModel(const UpNetConfig& config) : config_(config) { config_.validate(); }

UpNetModel::UpNetModel(const UpNetConfig& config, std::uint64_t seed) : UpNetModel(config) {
  Rng rng(seed);
  sa_[0] = nn::Mlp(params_, "up.sa0", sa_spec(config_, 3), rng);
  sa_[1] = nn::Mlp(params_, "up.sa1", sa_spec(config_, config_.sa_width), rng);
  for (std::size_t l = 0; l < 3; ++l) {
    conv_[l] = nn::Mlp(params_, "up.conv" + std::to_string(l), conv_spec(config_, conv_input(config_, l)), rng);
  }
  branch_a_ = nn::Mlp(params_, "up.branch_a", branch_spec(config_), rng);
  branch_b_ = nn::Mlp(params_, "up.branch_b", branch_spec(config_), rng);
  head_ = nn::Mlp(params_, "up.head", head_spec(config_), rng);
}

void UpNetModel::attach() {
  sa_[0] = nn::Mlp::attach(params_, "up.sa0", sa_spec(config_, 3));
  sa_[1] = nn::Mlp::attach(params_, "up.sa1", sa_spec(config_, config_.sa_width));
  for (std::size_t l = 0; l < 3; ++l) {
    conv_[l] = nn::Mlp::attach(params_, "up.conv" + std::to_string(l), conv_spec(config_, conv_input(config_, l)));
  }
  branch_a_ = nn::Mlp::attach(params_, "up.branch_a", branch_spec(config_));
  branch_b_ = nn::Mlp::attach(params_, "up.branch_b", branch_spec(config_));
  head_ = nn::Mlp::attach(params_, "up.head", head_spec(config_));
}

UpNetModel UpNetModel::from_checkpoint(const nn::Checkpoint& ckpt) {
  if (ckpt.kind != "up") throw Error(ErrorKind::kConfigMismatch, "checkpoint kind is '" + ckpt.kind + "', not up");
  UpNetModel model(UpNetConfig::from_json(ckpt.config));
  model.params_ = ckpt.params;
  model.attach();
  return model;
}

nn::Checkpoint UpNetModel::to_checkpoint(const std::string& config_hash) const {
  return nn::Checkpoint{"up", config_hash, config_.to_json(), params_};
}

nn::Var UpNetModel::forward(nn::Tape& tape, std::span<const Point3> centers) const {
  const std::size_t g = centers.size();
  if (g < 4) throw Error(ErrorKind::kShapeMismatch, "Up-Net needs at least 4 centers, got " + std::to_string(g));
  const std::size_t gamma = config_.gamma;
  const ScalePyramid pyr = build_pyramid(centers, config_.sa_k);

  const nn::Var c = tape.constant(points_to_rows(centers));
  const nn::Var f1 = set_abstraction(tape, params_, sa_[0], pyr.levels[0], c, pyr.levels[1], pyr.neighborhoods[0],
                                     pyr.neighborhood_size[0]);
  const nn::Var f2 = set_abstraction(tape, params_, sa_[1], pyr.levels[1], f1, pyr.levels[2], pyr.neighborhoods[1],
                                     pyr.neighborhood_size[1]);
  const nn::Var t1 = tri_interpolate(pyr.levels[0], pyr.levels[1], f1);
  const nn::Var t2 = tri_interpolate(pyr.levels[0], pyr.levels[2], f2);

  const nn::Var h0 = conv_[0].forward(tape, params_, c);
  const nn::Var h1 = conv_[1].forward(tape, params_, t1);
  const nn::Var h2 = conv_[2].forward(tape, params_, t2);
  const nn::Var a = branch_a_.forward(tape, params_, nn::concat_cols({h0, h1}));
  const nn::Var b = branch_b_.forward(tape, params_, nn::concat_cols({h1, h2}));
  // Each center's points stay within a ball sized by the local center
  // spacing, so the generated cloud keeps the coverage of the centers.
  std::vector<double> reach(g);
  const std::size_t k = std::min<std::size_t>(4, g);
  for (std::size_t i = 0; i < g; ++i) {
    double sum = 0.0;
    for (std::size_t j : knn(centers[i], centers, k)) sum += distance(centers[i], centers[j]);
    reach[i] = config_.offset_scale * sum / static_cast<double>(k - 1);
  }
  const nn::Var offsets = nn::scaled_tanh(head_.forward(tape, params_, nn::concat_cols({a, b})), std::move(reach));

  nn::Tensor anchors = nn::Tensor::matrix(g, 3 * gamma);
  for (std::size_t i = 0; i < g; ++i) {
    for (std::size_t r = 0; r < gamma; ++r) {
      anchors.at(i, 3 * r) = centers[i].x;
      anchors.at(i, 3 * r + 1) = centers[i].y;
      anchors.at(i, 3 * r + 2) = centers[i].z;
    }
  }
  const nn::Var dense = nn::add(offsets, tape.constant(std::move(anchors)));
  return nn::reshape(dense, g * gamma, 3);
}

std::vector<Point3> up_forward(const UpNetModel& model, std::span<const Point3> centers) {
  nn::Tape tape(false);
  return rows_to_points(model.forward(tape, centers).value());
}

std::vector<UpEpochLog> train_up(UpNetModel& model, const DownNetModel& frozen_down, std::span<const PointCloud> clouds,
                                 const UpTrainConfig& config, const EpochCallback& on_epoch) {
  if (clouds.empty()) throw Error(ErrorKind::kInvalidArgument, "train_up needs at least one cloud");
  const DownNetConfig& dc = frozen_down.config();
  std::vector<PatchSet> groups;
  std::vector<std::vector<Point3>> truth;
  for (const auto& cloud : clouds) {
    const PointCloud normalized = normalize(cloud).first;
    groups.push_back(group(normalized, dc.groups, dc.neighbors));
    const std::size_t dense = std::min(dc.groups * model.config().gamma, normalized.size());
    std::vector<Point3> gt;
    gt.reserve(dense);
    for (std::size_t i : fps(normalized, dense, fps_seed(normalized.points()))) gt.push_back(normalized[i]);
    truth.push_back(std::move(gt));
  }

  std::vector<UpEpochLog> log;
  for (std::size_t epoch = 1; epoch <= config.epochs; ++epoch) {
    UpEpochLog entry{epoch};
    for (std::size_t c = 0; c < groups.size(); ++c) {
      NoiseParams noise = config.noise;
      noise.seed = derive_seed(config.noise.seed ^ kUpNoiseStream, epoch, c);
      const double s = augmentation_scale(config.noise.seed ^ kUpNoiseStream, config.scale_jitter, epoch, c);
      const PatchSet patches = s == 1.0 ? groups[c] : scaled(groups[c], s);
      const NoisyPatchSet noisy = config.noise_enabled ? inject(patches, noise) : without_noise(patches);
      const CenterPrediction centers = down_forward(frozen_down, noisy);
      std::vector<Point3> gt = truth[c];
      for (Point3& p : gt) p = p * s;

      nn::Tape tape;
      const nn::Var pred = model.forward(tape, centers.predicted);
      const UpLoss loss = loss_up(rows_to_points(pred.value()), gt, config.loss);
      const nn::Tensor seed = points_to_rows(loss.grad);
      tape.backward(pred, seed.data());
      model.params().zero_grad();
      model.params().accumulate(tape);
      nn::adam_step(model.params(), config.adam);

      entry.rep += loss.rep;
      entry.emd += loss.emd;
      entry.total += loss.total;
    }
    const double inv = 1.0 / static_cast<double>(groups.size());
    entry.rep *= inv;
    entry.emd *= inv;
    entry.total *= inv;
    log.push_back(entry);
    if (on_epoch) on_epoch(epoch, entry.total);
  }
  return log;
}

void write_up_log(const std::filesystem::path& path, std::span<const UpEpochLog> log) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream out(path);
  if (!out) throw Error(ErrorKind::kIoError, "cannot write " + path.string());
  out << "epoch,rep,emd,total\n";
  char buf[128];
  for (const auto& e : log) {
    std::snprintf(buf, sizeof(buf), "%zu,%.9g,%.9g,%.9g\n", e.epoch, e.rep, e.emd, e.total);
    out << buf;
  }
}

}  // namespace duscloud
