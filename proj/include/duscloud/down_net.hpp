#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <functional>
#include <span>
#include <vector>

#include <json.hpp>

#include "duscloud/geometry.hpp"
#include "duscloud/nn/checkpoint.hpp"
#include "duscloud/nn/layers.hpp"
#include "duscloud/noise.hpp"

namespace duscloud {

// A scalar loss and its gradient with respect to the first (predicted) set.
struct LossTerm {
  double value = 0.0;
  std::vector<Point3> grad;
};

// Mean squared distance over index-aligned pairs.
LossTerm loss_mse(std::span<const Point3> pred, std::span<const Point3> target);

struct CosineLoss : LossTerm {
  // Pairs where either vector has zero norm; they contribute 0.
  std::size_t degenerate_pairs = 0;
};

// Mean of (1 - cos angle) over index-aligned pairs.
CosineLoss loss_cos(std::span<const Point3> pred, std::span<const Point3> target);

// Symmetric Chamfer distance with squared distances and per-set means.
// Gradient is with respect to `a`.
LossTerm loss_chamfer(std::span<const Point3> a, std::span<const Point3> b);

struct DownLossWeights {
  bool mse = true;
  bool cos = true;
  bool chamfer = true;
};

struct DownLoss {
  double mse = 0.0;
  double cos = 0.0;
  double chamfer = 0.0;
  double total = 0.0;
  std::size_t degenerate_pairs = 0;
  std::vector<Point3> grad;
};

// Unweighted sum of the enabled terms. Disabled terms are still reported.
DownLoss loss_down(std::span<const Point3> pred, std::span<const Point3> target, const DownLossWeights& weights = {});

struct DownNetConfig {
  std::size_t groups = 256;
  std::size_t neighbors = 32;
  std::size_t position_width = 64;  // C1
  std::size_t patch_width = 64;     // C2
  std::size_t feature_width = 128;  // C3
  std::size_t depth = 2;
  std::size_t heads = 4;
  std::size_t ffn_width = 256;
  std::size_t position_hidden = 64;
  std::size_t patch_hidden = 32;
  std::size_t head_hidden = 64;

  void validate() const;
  nlohmann::json to_json() const;
  static DownNetConfig from_json(const nlohmann::json& j);
};

struct CenterPrediction {
  std::vector<Point3> predicted;
  std::vector<Point3> target;
};

// Predicts the G clean group centers from noise-corrupted patches:
//   E_c = MLP(noisy centers), E_p = PointNet(noisy neighbors),
//   centers = MLP(Decoder([E_c, E_p])).
class DownNetModel {
 public:
  DownNetModel(const DownNetConfig& config, std::uint64_t seed);
  static DownNetModel from_checkpoint(const nn::Checkpoint& ckpt);
  nn::Checkpoint to_checkpoint(const std::string& config_hash) const;

  const DownNetConfig& config() const { return config_; }
  nn::ParamStore& params() { return params_; }
  const nn::ParamStore& params() const { return params_; }

  // Returns the G x 3 prediction on `tape`.
  nn::Var forward(nn::Tape& tape, const NoisyPatchSet& noisy, nn::AttentionTrace* trace = nullptr) const;

 private:
  explicit DownNetModel(const DownNetConfig& config);
  void attach();

  DownNetConfig config_;
  nn::ParamStore params_;
  nn::Mlp position_;
  nn::Mlp patch_;
  nn::Decoder decoder_;
  nn::Mlp head_;
};

CenterPrediction down_forward(const DownNetModel& model, const NoisyPatchSet& noisy);

std::vector<Point3> rows_to_points(const nn::Tensor& t);
nn::Tensor points_to_rows(std::span<const Point3> points);

struct DownTrainConfig {
  std::size_t epochs = 200;
  nn::AdamConfig adam;
  NoiseParams noise;
  bool noise_enabled = true;
  // Each step shrinks the normalized patches by a factor drawn from
  // [1 - scale_jitter, 1]; 0 disables it.
  double scale_jitter = 0.0;
  DownLossWeights weights;
};

struct DownEpochLog {
  std::size_t epoch = 0;
  double mse = 0.0;
  double cos = 0.0;
  double chamfer = 0.0;
  double total = 0.0;
};

using EpochCallback = std::function<void(std::size_t epoch, double total)>;

// Per epoch, per cloud: normalize -> group -> inject -> forward -> loss -> Adam.
// Logged values are means over the clouds of each epoch.
std::vector<DownEpochLog> train_down(DownNetModel& model, std::span<const PointCloud> clouds,
                                     const DownTrainConfig& config, const EpochCallback& on_epoch = {});

// Shrink factor for one training step; 1 when jitter is 0.
double augmentation_scale(std::uint64_t seed, double jitter, std::size_t epoch, std::size_t cloud);

void write_down_log(const std::filesystem::path& path, std::span<const DownEpochLog> log);

}  // namespace duscloud
