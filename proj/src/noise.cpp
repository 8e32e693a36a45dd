#include "duscloud/noise.hpp"

#include <algorithm>
#include <cmath>

#include "duscloud/error.hpp"

namespace duscloud {

NoiseKind parse_noise_kind(std::string_view name) {
  if (name == "gaussian") return NoiseKind::kGaussian;
  if (name == "uniform") return NoiseKind::kUniform;
  if (name == "salt_pepper") return NoiseKind::kSaltPepper;
  throw Error(ErrorKind::kConfigError, "unknown noise kind '" + std::string(name) + "'");
}

std::string_view to_string(NoiseKind kind) {
  switch (kind) {
    case NoiseKind::kGaussian: return "gaussian";
    case NoiseKind::kUniform: return "uniform";
    case NoiseKind::kSaltPepper: return "salt_pepper";
  }
  return "gaussian";
}

void NoiseParams::validate() const {
  if (!std::isfinite(alpha) || alpha < 0.0) throw Error(ErrorKind::kInvalidArgument, "noise alpha must be >= 0");
  if (!std::isfinite(beta) || beta < 0.0) throw Error(ErrorKind::kInvalidArgument, "noise beta must be >= 0");
}

Point3 gsn_point(const Point3& p, double sigma, Rng& rng) {
  const double dx = rng.normal();
  const double dy = rng.normal();
  const double dz = rng.normal();
  return {p.x + sigma * dx, p.y + sigma * dy, p.z + sigma * dz};
}

Point3 corrupt_point(const Point3& p, double sigma, NoiseKind kind, double extent, Rng& rng) {
  switch (kind) {
    case NoiseKind::kGaussian:
      return gsn_point(p, sigma, rng);
    case NoiseKind::kUniform: {
      const double half = std::sqrt(3.0) * sigma;
      const double dx = rng.uniform(-half, half);
      const double dy = rng.uniform(-half, half);
      const double dz = rng.uniform(-half, half);
      return {p.x + dx, p.y + dy, p.z + dz};
    }
    case NoiseKind::kSaltPepper: {
      auto flip = [&](double v) {
        const double u = rng.uniform();
        const double sign = rng.uniform() < 0.5 ? -1.0 : 1.0;
        return (sigma > 0.0 && u < kSaltPepperRate) ? sign * extent : v;
      };
      const double x = flip(p.x);
      const double y = flip(p.y);
      const double z = flip(p.z);
      return {x, y, z};
    }
  }
  return p;
}

NoisyPatchSet inject(const PatchSet& patches, const NoiseParams& params) {
  params.validate();
  double extent = 0.0;
  if (params.kind == NoiseKind::kSaltPepper) {
    for (const auto& patch : patches.patches) {
      for (const auto& q : patch.neighbors) {
        extent = std::max({extent, std::abs(q.x), std::abs(q.y), std::abs(q.z)});
      }
    }
  }
  Rng rng(params.seed);
  NoisyPatchSet out;
  out.source_id = patches.source_id;
  out.patches.reserve(patches.patches.size());
  out.clean_centers.reserve(patches.patches.size());
  for (const auto& patch : patches.patches) {
    out.clean_centers.push_back(patch.center);
    Patch noisy;
    noisy.center_index = patch.center_index;
    noisy.center = corrupt_point(patch.center, params.alpha, params.kind, extent, rng);
    noisy.neighbors.reserve(patch.neighbors.size());
    for (const auto& q : patch.neighbors) noisy.neighbors.push_back(corrupt_point(q, params.beta, params.kind, extent, rng));
    out.patches.push_back(std::move(noisy));
  }
  return out;
}

NoisyPatchSet without_noise(const PatchSet& patches) {
  NoisyPatchSet out;
  out.source_id = patches.source_id;
  out.patches = patches.patches;
  for (const auto& patch : patches.patches) out.clean_centers.push_back(patch.center);
  return out;
}

}  // namespace duscloud
