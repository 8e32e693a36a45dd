#include "duscloud/cloud_io.hpp"

#include <cstdio>
#include <fstream>
#include <istream>
#include <ostream>
#include <sstream>

#include "duscloud/error.hpp"

namespace duscloud {
namespace {

std::string format_real(double v) {
  char buf[32];
  std::snprintf(buf, sizeof(buf), "%.9g", v);
  return buf;
}

std::ifstream open_in(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw Error(ErrorKind::kIoError, "cannot open " + path.string());
  return in;
}

std::ofstream open_out(const std::filesystem::path& path) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream out(path);
  if (!out) throw Error(ErrorKind::kIoError, "cannot write " + path.string());
  return out;
}

std::uint8_t parse_label(double v, std::size_t line_no) {
  if (v != 0.0 && v != 1.0) {
    throw Error(ErrorKind::kParseError, "line " + std::to_string(line_no) + ": label must be 0 or 1");
  }
  return static_cast<std::uint8_t>(v);
}

}  // namespace

PointCloud read_xyz(std::istream& in, std::string id) {
  std::vector<Point3> points;
  std::vector<std::uint8_t> labels;
  std::size_t with_label = 0;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    const auto first = line.find_first_not_of(" \t\r");
    if (first == std::string::npos || line[first] == '#') continue;
    std::istringstream row(line);
    std::vector<double> vals;
    double v = 0.0;
    while (row >> v) vals.push_back(v);
    if (!row.eof()) throw Error(ErrorKind::kParseError, "line " + std::to_string(line_no) + ": not numeric");
    if (vals.size() != 3 && vals.size() != 4) {
      throw Error(ErrorKind::kParseError, "line " + std::to_string(line_no) + ": expected 3 or 4 fields");
    }
    points.push_back({vals[0], vals[1], vals[2]});
    if (vals.size() == 4) {
      labels.push_back(parse_label(vals[3], line_no));
      ++with_label;
    } else {
      labels.push_back(0);
    }
  }
  if (with_label != 0 && with_label != points.size()) {
    throw Error(ErrorKind::kParseError, "labels present on only some lines");
  }
  if (points.empty()) throw Error(ErrorKind::kParseError, "no points in XYZ input");
  std::optional<std::vector<std::uint8_t>> mask;
  if (with_label) mask = std::move(labels);
  return PointCloud(std::move(points), std::move(mask), std::move(id));
}

PointCloud read_xyz(const std::filesystem::path& path) {
  auto in = open_in(path);
  return read_xyz(in, path.stem().string());
}

void write_xyz(std::ostream& out, const PointCloud& cloud) {
  for (std::size_t i = 0; i < cloud.size(); ++i) {
    const auto& p = cloud[i];
    out << format_real(p.x) << ' ' << format_real(p.y) << ' ' << format_real(p.z);
    if (cloud.has_labels()) out << ' ' << static_cast<int>(cloud.labels()[i]);
    out << '\n';
  }
}

void write_xyz(const std::filesystem::path& path, const PointCloud& cloud) {
  auto out = open_out(path);
  write_xyz(out, cloud);
}

PointCloud read_ply(std::istream& in, std::string id) {
  std::string line;
  if (!std::getline(in, line) || line.substr(0, 3) != "ply") throw Error(ErrorKind::kParseError, "missing ply magic");

  struct Element {
    std::string name;
    std::size_t count = 0;
    std::vector<std::string> properties;
  };
  std::vector<Element> elements;
  bool ascii = false;
  while (std::getline(in, line)) {
    if (!line.empty() && line.back() == '\r') line.pop_back();
    std::istringstream row(line);
    std::string word;
    row >> word;
    if (word == "end_header") break;
    if (word == "format") {
      std::string fmt;
      row >> fmt;
      ascii = fmt == "ascii";
    } else if (word == "element") {
      Element e;
      row >> e.name >> e.count;
      elements.push_back(e);
    } else if (word == "property") {
      if (elements.empty()) throw Error(ErrorKind::kParseError, "property before element");
      std::string type, name;
      row >> type;
      if (type == "list") {
        std::string count_type, item_type;
        row >> count_type >> item_type;
        type = "list";
      }
      row >> name;
      elements.back().properties.push_back(type == "list" ? "list:" + name : name);
    }
  }
  if (!ascii) throw Error(ErrorKind::kParseError, "only ASCII PLY is supported");

  std::vector<Point3> points;
  std::vector<std::uint8_t> labels;
  bool has_anomaly = false;
  for (const auto& e : elements) {
    if (e.name != "vertex") {
      for (std::size_t i = 0; i < e.count; ++i) std::getline(in, line);
      continue;
    }
    int ix = -1, iy = -1, iz = -1, ia = -1;
    for (std::size_t p = 0; p < e.properties.size(); ++p) {
      const auto& name = e.properties[p];
      if (name.rfind("list:", 0) == 0) throw Error(ErrorKind::kParseError, "list property on vertex element");
      if (name == "x") ix = static_cast<int>(p);
      if (name == "y") iy = static_cast<int>(p);
      if (name == "z") iz = static_cast<int>(p);
      if (name == "anomaly") ia = static_cast<int>(p);
    }
    if (ix < 0 || iy < 0 || iz < 0) throw Error(ErrorKind::kParseError, "vertex element lacks x/y/z");
    has_anomaly = ia >= 0;
    for (std::size_t i = 0; i < e.count; ++i) {
      if (!std::getline(in, line)) throw Error(ErrorKind::kParseError, "truncated vertex list");
      std::istringstream row(line);
      std::vector<double> vals(e.properties.size());
      for (auto& v : vals) {
        if (!(row >> v)) throw Error(ErrorKind::kParseError, "bad vertex row " + std::to_string(i));
      }
      points.push_back({vals[ix], vals[iy], vals[iz]});
      if (has_anomaly) labels.push_back(parse_label(vals[ia], i));
    }
  }
  if (points.empty()) throw Error(ErrorKind::kParseError, "no vertices in PLY input");
  std::optional<std::vector<std::uint8_t>> mask;
  if (has_anomaly) mask = std::move(labels);
  return PointCloud(std::move(points), std::move(mask), std::move(id));
}

PointCloud read_ply(const std::filesystem::path& path) {
  auto in = open_in(path);
  return read_ply(in, path.stem().string());
}

void write_ply(std::ostream& out, const PointCloud& cloud) {
  out << "ply\nformat ascii 1.0\nelement vertex " << cloud.size()
      << "\nproperty float x\nproperty float y\nproperty float z\n";
  if (cloud.has_labels()) out << "property uchar anomaly\n";
  out << "end_header\n";
  write_xyz(out, cloud);
}

void write_ply(const std::filesystem::path& path, const PointCloud& cloud) {
  auto out = open_out(path);
  write_ply(out, cloud);
}

PointCloud read_cloud(const std::filesystem::path& path) {
  const auto ext = path.extension().string();
  if (ext == ".ply") return read_ply(path);
  if (ext == ".xyz") return read_xyz(path);
  throw Error(ErrorKind::kIoError, "unknown point cloud extension '" + ext + "'");
}

void write_cloud(const std::filesystem::path& path, const PointCloud& cloud) {
  const auto ext = path.extension().string();
  if (ext == ".ply") return write_ply(path, cloud);
  if (ext == ".xyz") return write_xyz(path, cloud);
  throw Error(ErrorKind::kIoError, "unknown point cloud extension '" + ext + "'");
}

}  // namespace duscloud
