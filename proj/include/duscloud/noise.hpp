#pragma once

#include <cstdint>
#include <string>
#include <string_view>
#include <vector>

#include "duscloud/geometry.hpp"
#include "duscloud/rng.hpp"

namespace duscloud {

enum class NoiseKind { kGaussian, kUniform, kSaltPepper };

NoiseKind parse_noise_kind(std::string_view name);
std::string_view to_string(NoiseKind kind);

struct NoiseParams {
  double alpha = 0.08;  // center noise std
  double beta = 0.15;   // neighbor noise std
  std::uint64_t seed = 0;
  NoiseKind kind = NoiseKind::kGaussian;

  void validate() const;
};

struct NoisyPatchSet {
  std::vector<Patch> patches;
  std::vector<Point3> clean_centers;
  std::string source_id;

  std::size_t group_count() const { return patches.size(); }
  std::size_t neighbor_count() const { return patches.empty() ? 0 : patches.front().neighbors.size(); }
};

// p + N(0, sigma^2 I), three draws in x, y, z order.
Point3 gsn_point(const Point3& p, double sigma, Rng& rng);

// Salt-and-pepper probability for the ablation noise family.
inline constexpr double kSaltPepperRate = 0.05;

// Corrupts one coordinate triple with the selected noise family. `extent` is the
// replacement magnitude for salt-and-pepper and is ignored otherwise. Uniform
// noise is scaled to the same standard deviation as the Gaussian.
Point3 corrupt_point(const Point3& p, double sigma, NoiseKind kind, double extent, Rng& rng);

// Centers get std alpha, neighbors std beta. Draws are patch-major: the center
// first, then neighbors in order. clean_centers are copied verbatim.
NoisyPatchSet inject(const PatchSet& patches, const NoiseParams& params);

// Noise-free pass-through (used when Noise-Gen is ablated).
NoisyPatchSet without_noise(const PatchSet& patches);

}  // namespace duscloud
