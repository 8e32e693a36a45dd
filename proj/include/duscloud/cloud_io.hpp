#pragma once

#include <filesystem>
#include <iosfwd>

#include "duscloud/geometry.hpp"

namespace duscloud {

// ASCII XYZ: one "x y z[ label]" line per point. '#' starts a comment line.
PointCloud read_xyz(std::istream& in, std::string id = {});
PointCloud read_xyz(const std::filesystem::path& path);
void write_xyz(std::ostream& out, const PointCloud& cloud);
void write_xyz(const std::filesystem::path& path, const PointCloud& cloud);

// ASCII PLY with float x/y/z and an optional uchar "anomaly" vertex property.
// Other vertex properties and non-vertex elements are skipped on read.
PointCloud read_ply(std::istream& in, std::string id = {});
PointCloud read_ply(const std::filesystem::path& path);
void write_ply(std::ostream& out, const PointCloud& cloud);
void write_ply(const std::filesystem::path& path, const PointCloud& cloud);

// Dispatches on the file extension (.xyz / .ply).
PointCloud read_cloud(const std::filesystem::path& path);
void write_cloud(const std::filesystem::path& path, const PointCloud& cloud);

}  // namespace duscloud
