#pragma once

#include <array>
#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <span>
#include <vector>

#include <json.hpp>

#include "duscloud/down_net.hpp"
#include "duscloud/geometry.hpp"
#include "duscloud/nn/checkpoint.hpp"
#include "duscloud/nn/layers.hpp"
#include "duscloud/noise.hpp"

namespace duscloud {

// Sum over points of the nearest-neighbor distance (unsquared) into `gt`.
LossTerm loss_emd(std::span<const Point3> pred, std::span<const Point3> gt);

// Sum of matched distances under the optimal one-to-one assignment. Needs
// |pred| == |gt|; cubic in the set size.
LossTerm loss_emd_assignment(std::span<const Point3> pred, std::span<const Point3> gt);

// Sum over i and its k nearest other points j of -d_ij * exp(-d_ij^2 / h^2).
// h = 1 is the plain fast-decaying weight; smaller h keeps the push local.
LossTerm loss_repulsion(std::span<const Point3> cloud, std::size_t k, double h = 1.0);

enum class EmdMode { kNearest, kAssignment };

struct UpLossOptions {
  bool repulsion = true;
  bool emd = true;
  EmdMode emd_mode = EmdMode::kNearest;
  std::size_t rep_k = 5;
  double rep_h = 1.0;
};

struct UpLoss {
  double rep = 0.0;
  double emd = 0.0;
  double total = 0.0;
  std::vector<Point3> grad;
};

UpLoss loss_up(std::span<const Point3> pred, std::span<const Point3> gt, const UpLossOptions& options = {});

// Level 0 holds the input centers; levels 1 and 2 are FPS subsets of the level
// below with floor(n/2) and floor(n/4) points (at least one).
struct ScalePyramid {
  std::array<std::vector<Point3>, 3> levels;
  // For each point of level l+1, its nearest points in level l (at most sa_k).
  std::array<std::vector<std::size_t>, 2> neighborhoods;
  std::size_t neighborhood_size[2] = {0, 0};
};

ScalePyramid build_pyramid(std::span<const Point3> centers, std::size_t sa_k);

// Taps (3 per target, fewer if the source is smaller) of the inverse-distance
// interpolation from `source` onto `target`, weights normalized per target.
struct InterpolationTaps {
  std::vector<std::size_t> index;
  std::vector<double> weight;
  std::size_t per = 0;
};

InterpolationTaps interpolation_taps(std::span<const Point3> target, std::span<const Point3> source);

nn::Var tri_interpolate(std::span<const Point3> target, std::span<const Point3> source, nn::Var source_feats);

// PointNet++-style aggregation: for each next-level point p_i, shared MLP over
// [p_j - p_i ; F_j] of its neighborhood in the previous level, then max.
nn::Var set_abstraction(nn::Tape& tape, const nn::ParamStore& store, const nn::Mlp& mlp,
                        std::span<const Point3> prev_points, nn::Var prev_feats, std::span<const Point3> next_points,
                        std::span<const std::size_t> neighborhoods, std::size_t per);

struct UpNetConfig {
  std::size_t gamma = 4;
  std::size_t sa_k = 8;
  std::size_t sa_width = 64;
  std::size_t conv_width = 64;
  std::size_t head_hidden = 128;
  // Offsets are bounded by this multiple of the mean distance from a center
  // to its three nearest neighbours.
  double offset_scale = 0.5;

  void validate() const;
  nlohmann::json to_json() const;
  static UpNetConfig from_json(const nlohmann::json& j);
};

// Densifies G centers into G*gamma points. Each center's gamma points are
// predicted as bounded offsets from that center; row g*gamma + r comes from
// center g.
class UpNetModel {
 public:
  UpNetModel(const UpNetConfig& config, std::uint64_t seed);
  static UpNetModel from_checkpoint(const nn::Checkpoint& ckpt);
  nn::Checkpoint to_checkpoint(const std::string& config_hash) const;

  const UpNetConfig& config() const { return config_; }
  nn::ParamStore& params() { return params_; }
  const nn::ParamStore& params() const { return params_; }

  // Returns the (G*gamma) x 3 reconstruction for G >= 4 centers.
  nn::Var forward(nn::Tape& tape, std::span<const Point3> centers) const;

 private:
  explicit UpNetModel(const UpNetConfig& config);
  void attach();

  UpNetConfig config_;
  nn::ParamStore params_;
  std::array<nn::Mlp, 2> sa_;
  std::array<nn::Mlp, 3> conv_;
  nn::Mlp branch_a_;
  nn::Mlp branch_b_;
  nn::Mlp head_;
};

std::vector<Point3> up_forward(const UpNetModel& model, std::span<const Point3> centers);

struct UpTrainConfig {
  std::size_t epochs = 200;
  nn::AdamConfig adam;
  NoiseParams noise;
  bool noise_enabled = true;
  double scale_jitter = 0.0;  // as in DownTrainConfig
  UpLossOptions loss;
};

struct UpEpochLog {
  std::size_t epoch = 0;
  double rep = 0.0;
  double emd = 0.0;
  double total = 0.0;
};

// Per epoch, per cloud: noisy patches -> frozen Down-Net centers -> Up-Net ->
// loss against an FPS subsample (G*gamma points) of the clean normalized cloud.
std::vector<UpEpochLog> train_up(UpNetModel& model, const DownNetModel& frozen_down, std::span<const PointCloud> clouds,
                                 const UpTrainConfig& config, const EpochCallback& on_epoch = {});

void write_up_log(const std::filesystem::path& path, std::span<const UpEpochLog> log);

}  // namespace duscloud
