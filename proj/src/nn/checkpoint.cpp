#include "duscloud/nn/checkpoint.hpp"

#include <bit>
#include <cstring>
#include <fstream>

#include "duscloud/error.hpp"

namespace duscloud::nn {
namespace {

static_assert(std::endian::native == std::endian::little, "checkpoint I/O assumes a little-endian host");

constexpr char kMagic[8] = {'D', 'U', 'S', 'C', 'K', 'P', 'T', '1'};

template <typename T>
void write_raw(std::ostream& out, const T& v) {
  out.write(reinterpret_cast<const char*>(&v), sizeof(T));
}

template <typename T>
T read_raw(std::istream& in) {
  T v{};
  in.read(reinterpret_cast<char*>(&v), sizeof(T));
  if (!in) throw Error(ErrorKind::kParseError, "truncated checkpoint");
  return v;
}

}  // namespace

void write_checkpoint(std::ostream& out, const Checkpoint& ckpt, Dtype dtype) {
  nlohmann::json manifest;
  manifest["format"] = "duscloud-checkpoint";
  manifest["version"] = 1;
  manifest["kind"] = ckpt.kind;
  manifest["config_hash"] = ckpt.config_hash;
  manifest["config"] = ckpt.config;
  manifest["dtype"] = dtype == Dtype::kF64 ? "f64" : "f32";
  manifest["tensors"] = nlohmann::json::array();
  for (const auto& p : ckpt.params) {
    manifest["tensors"].push_back({{"name", p.name}, {"shape", p.value.shape()}});
  }
  const std::string text = manifest.dump();
  out.write(kMagic, sizeof(kMagic));
  write_raw<std::uint64_t>(out, text.size());
  out.write(text.data(), static_cast<std::streamsize>(text.size()));
  for (const auto& p : ckpt.params) {
    for (double v : p.value.data()) {
      if (dtype == Dtype::kF64) {
        write_raw(out, v);
      } else {
        write_raw(out, static_cast<float>(v));
      }
    }
  }
  if (!out) throw Error(ErrorKind::kIoError, "checkpoint write failed");
}

void save_checkpoint(const std::filesystem::path& path, const Checkpoint& ckpt, Dtype dtype) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary);
  if (!out) throw Error(ErrorKind::kIoError, "cannot write " + path.string());
  write_checkpoint(out, ckpt, dtype);
}

Checkpoint read_checkpoint(std::istream& in) {
  char magic[8];
  in.read(magic, sizeof(magic));
  if (!in || std::memcmp(magic, kMagic, sizeof(kMagic)) != 0) {
    throw Error(ErrorKind::kParseError, "not a checkpoint file (bad magic)");
  }
  const auto length = read_raw<std::uint64_t>(in);
  std::string text(length, '\0');
  in.read(text.data(), static_cast<std::streamsize>(length));
  if (!in) throw Error(ErrorKind::kParseError, "truncated checkpoint manifest");
  nlohmann::json manifest;
  try {
    manifest = nlohmann::json::parse(text);
  } catch (const nlohmann::json::exception& e) {
    throw Error(ErrorKind::kParseError, std::string("bad checkpoint manifest: ") + e.what());
  }
  Checkpoint ckpt;
  ckpt.kind = manifest.at("kind").get<std::string>();
  ckpt.config_hash = manifest.at("config_hash").get<std::string>();
  ckpt.config = manifest.at("config");
  const std::string dtype = manifest.at("dtype").get<std::string>();
  if (dtype != "f64" && dtype != "f32") throw Error(ErrorKind::kParseError, "unknown dtype " + dtype);
  for (const auto& entry : manifest.at("tensors")) {
    Tensor t(entry.at("shape").get<std::vector<std::size_t>>());
    for (auto& v : t.data()) v = dtype == "f64" ? read_raw<double>(in) : static_cast<double>(read_raw<float>(in));
    ckpt.params.add(entry.at("name").get<std::string>(), std::move(t));
  }
  return ckpt;
}

Checkpoint load_checkpoint(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error(ErrorKind::kMissingCheckpoint, "cannot open checkpoint " + path.string());
  return read_checkpoint(in);
}

void copy_values(const ParamStore& source, ParamStore& target) {
  if (source.size() != target.size()) throw Error(ErrorKind::kShapeMismatch, "parameter count mismatch");
  for (std::size_t i = 0; i < target.size(); ++i) {
    const std::size_t j = source.index_of(target[i].name);
    const auto& src = source[j].value;
    auto& dst = target[i].value;
    if (src.shape() != dst.shape()) throw Error(ErrorKind::kShapeMismatch, "shape mismatch for " + target[i].name);
    std::copy(src.data().begin(), src.data().end(), dst.data().begin());
  }
}

}  // namespace duscloud::nn
