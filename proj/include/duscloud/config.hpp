#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <string>
#include <string_view>
#include <vector>

#include <json.hpp>

#include "duscloud/down_net.hpp"
#include "duscloud/noise.hpp"
#include "duscloud/synth.hpp"
#include "duscloud/up_net.hpp"

namespace duscloud {

struct RunConfig {
  NoiseParams noise;
  bool noise_train = true;   // Noise-Gen during training
  bool noise_infer = true;   // Noise-Gen at inference

  DownNetConfig down;
  UpNetConfig up;
  std::size_t rep_k = 5;
  double rep_h = 0.05;
  EmdMode emd_mode = EmdMode::kNearest;
  DownLossWeights down_loss;
  bool loss_rep = true;
  bool loss_emd = true;

  double lr = 1e-3;
  std::size_t down_epochs = 200;
  std::size_t up_epochs = 200;
  std::uint64_t seed = 7;
  double scale_jitter = 0.25;

  CorpusSpec data;

  static RunConfig preset(std::string_view name);

  // Applies one "key.path = value" assignment; unknown keys and malformed or
  // out-of-range values throw ConfigError.
  void set(std::string_view key, std::string_view value);
  void validate() const;

  static std::vector<std::string> keys();
  nlohmann::json to_json() const;
  // key = value text that set() reads back into an identical config.
  std::string to_text() const;

  DownTrainConfig down_train() const;
  UpTrainConfig up_train() const;

  // Fingerprints of everything that shapes each trained model (paths excluded).
  std::string down_hash() const;
  std::string up_hash() const;
};

// Reads a key = value file ('#' comments, blank lines allowed) on top of `base`.
RunConfig load_config(const std::filesystem::path& path, RunConfig base);
void apply_config_text(RunConfig& config, std::string_view text, const std::string& origin);

std::string fingerprint(const nlohmann::json& j);

}  // namespace duscloud
