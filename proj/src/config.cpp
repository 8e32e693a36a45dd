#include "duscloud/config.hpp"

#include <charconv>
#include <cstdio>
#include <fstream>
#include <functional>
#include <sstream>

#include "duscloud/error.hpp"

namespace duscloud {
namespace {

[[noreturn]] void bad_value(std::string_view key, std::string_view value, const std::string& why) {
  throw Error(ErrorKind::kConfigError, std::string(key) + " = '" + std::string(value) + "': " + why);
}

std::string_view trim(std::string_view s) {
  const auto first = s.find_first_not_of(" \t\r");
  if (first == std::string_view::npos) return {};
  const auto last = s.find_last_not_of(" \t\r");
  return s.substr(first, last - first + 1);
}

std::uint64_t parse_u64(std::string_view key, std::string_view v) {
  std::uint64_t out = 0;
  const auto [ptr, ec] = std::from_chars(v.data(), v.data() + v.size(), out);
  if (ec != std::errc() || ptr != v.data() + v.size()) bad_value(key, v, "expected a non-negative integer");
  return out;
}

std::size_t parse_size(std::string_view key, std::string_view v, std::size_t lo, std::size_t hi) {
  const std::uint64_t out = parse_u64(key, v);
  if (out < lo || out > hi) {
    bad_value(key, v, "must lie in [" + std::to_string(lo) + ", " + std::to_string(hi) + "]");
  }
  return static_cast<std::size_t>(out);
}

double parse_real(std::string_view key, std::string_view v, double lo, double hi) {
  double out = 0.0;
  const auto [ptr, ec] = std::from_chars(v.data(), v.data() + v.size(), out);
  if (ec != std::errc() || ptr != v.data() + v.size()) bad_value(key, v, "expected a number");
  if (!(out >= lo && out <= hi)) {
    char buf[96];
    std::snprintf(buf, sizeof(buf), "must lie in [%g, %g]", lo, hi);
    bad_value(key, v, buf);
  }
  return out;
}

bool parse_bool(std::string_view key, std::string_view v) {
  if (v == "true" || v == "on" || v == "1") return true;
  if (v == "false" || v == "off" || v == "0") return false;
  bad_value(key, v, "expected true or false");
}

std::vector<std::string> parse_list(std::string_view v) {
  std::vector<std::string> out;
  while (!v.empty()) {
    const auto comma = v.find(',');
    const auto item = trim(v.substr(0, comma));
    if (!item.empty()) out.emplace_back(item);
    if (comma == std::string_view::npos) break;
    v.remove_prefix(comma + 1);
  }
  return out;
}

// Shortest text that reads back to the same double.
std::string real_text(double v) {
  char buf[64];
  const auto res = std::to_chars(buf, buf + sizeof(buf), v);
  return std::string(buf, res.ptr);
}

std::string bool_text(bool v) { return v ? "true" : "false"; }

template <typename Kinds>
std::string list_text(const Kinds& kinds) {
  std::string out;
  for (const auto& k : kinds) {
    if (!out.empty()) out += ',';
    out += to_string(k);
  }
  return out;
}

struct Field {
  const char* key;
  std::function<void(RunConfig&, std::string_view, std::string_view)> set;
  std::function<std::string(const RunConfig&)> get;  // empty for aliases
};

constexpr std::size_t kMaxWidth = 4096;
constexpr std::size_t kMaxEpochs = 100000;

#define SIZE_FIELD(name, member, lo, hi)                                                                  \
  Field {                                                                                                 \
    name, [](RunConfig& c, std::string_view k, std::string_view v) { c.member = parse_size(k, v, lo, hi); }, \
        [](const RunConfig& c) { return std::to_string(c.member); }                                       \
  }
#define REAL_FIELD(name, member, lo, hi)                                                                  \
  Field {                                                                                                 \
    name, [](RunConfig& c, std::string_view k, std::string_view v) { c.member = parse_real(k, v, lo, hi); }, \
        [](const RunConfig& c) { return real_text(c.member); }                                            \
  }
#define BOOL_FIELD(name, member)                                                                      \
  Field {                                                                                             \
    name, [](RunConfig& c, std::string_view k, std::string_view v) { c.member = parse_bool(k, v); }, \
        [](const RunConfig& c) { return bool_text(c.member); }                                        \
  }
#define U64_FIELD(name, member)                                                                      \
  Field {                                                                                            \
    name, [](RunConfig& c, std::string_view k, std::string_view v) { c.member = parse_u64(k, v); }, \
        [](const RunConfig& c) { return std::to_string(c.member); }                                  \
  }

const std::vector<Field>& fields() {
  static const std::vector<Field> table = {
      REAL_FIELD("noise.alpha", noise.alpha, 0.0, 1.0),
      REAL_FIELD("noise.beta", noise.beta, 0.0, 1.0),
      Field{"noise.kind",
            [](RunConfig& c, std::string_view k, std::string_view v) {
              try {
                c.noise.kind = parse_noise_kind(v);
              } catch (const Error&) {
                bad_value(k, v, "expected gaussian, uniform or salt_pepper");
              }
            },
            [](const RunConfig& c) { return std::string(to_string(c.noise.kind)); }},
      U64_FIELD("noise.seed", noise.seed),
      BOOL_FIELD("noise.train", noise_train),
      BOOL_FIELD("noise.infer", noise_infer),
      SIZE_FIELD("group.g", down.groups, 4, 1u << 20),
      SIZE_FIELD("group.k", down.neighbors, 1, 1u << 16),
      SIZE_FIELD("down.c1", down.position_width, 1, kMaxWidth),
      SIZE_FIELD("down.c2", down.patch_width, 1, kMaxWidth),
      SIZE_FIELD("down.c3", down.feature_width, 1, kMaxWidth),
      SIZE_FIELD("down.depth", down.depth, 0, 64),
      SIZE_FIELD("down.heads", down.heads, 1, 64),
      SIZE_FIELD("down.ffn", down.ffn_width, 1, kMaxWidth),
      SIZE_FIELD("down.position_hidden", down.position_hidden, 1, kMaxWidth),
      SIZE_FIELD("down.patch_hidden", down.patch_hidden, 1, kMaxWidth),
      SIZE_FIELD("down.head_hidden", down.head_hidden, 1, kMaxWidth),
      SIZE_FIELD("up.gamma", up.gamma, 1, 64),
      SIZE_FIELD("up.sa_k", up.sa_k, 1, 256),
      SIZE_FIELD("up.rep_k", rep_k, 1, 256),
      REAL_FIELD("up.rep_h", rep_h, 1e-6, 1e6),
      SIZE_FIELD("up.sa_width", up.sa_width, 1, kMaxWidth),
      SIZE_FIELD("up.conv_width", up.conv_width, 1, kMaxWidth),
      SIZE_FIELD("up.head_hidden", up.head_hidden, 1, kMaxWidth),
      REAL_FIELD("up.offset_scale", up.offset_scale, 1e-6, 1e3),
      Field{"up.emd",
            [](RunConfig& c, std::string_view k, std::string_view v) {
              if (v == "nearest") {
                c.emd_mode = EmdMode::kNearest;
              } else if (v == "assignment") {
                c.emd_mode = EmdMode::kAssignment;
              } else {
                bad_value(k, v, "expected nearest or assignment");
              }
            },
            [](const RunConfig& c) { return std::string(c.emd_mode == EmdMode::kNearest ? "nearest" : "assignment"); }},
      BOOL_FIELD("loss.mse", down_loss.mse),
      BOOL_FIELD("loss.cos", down_loss.cos),
      BOOL_FIELD("loss.cd", down_loss.chamfer),
      BOOL_FIELD("loss.rep", loss_rep),
      BOOL_FIELD("loss.emd", loss_emd),
      REAL_FIELD("train.lr", lr, 1e-9, 1.0),
      Field{"train.epochs",
            [](RunConfig& c, std::string_view k, std::string_view v) {
              c.down_epochs = c.up_epochs = parse_size(k, v, 0, kMaxEpochs);
            },
            {}},
      SIZE_FIELD("train.down_epochs", down_epochs, 0, kMaxEpochs),
      SIZE_FIELD("train.up_epochs", up_epochs, 0, kMaxEpochs),
      U64_FIELD("train.seed", seed),
      REAL_FIELD("train.scale_jitter", scale_jitter, 0.0, 0.9),
      Field{"data.categories",
            [](RunConfig& c, std::string_view k, std::string_view v) {
              std::vector<ShapeKind> kinds;
              for (const auto& name : parse_list(v)) {
                try {
                  kinds.push_back(parse_shape_kind(name));
                } catch (const Error&) {
                  bad_value(k, v, "unknown category '" + name + "'");
                }
              }
              if (kinds.empty()) bad_value(k, v, "needs at least one category");
              c.data.categories = kinds;
            },
            [](const RunConfig& c) { return list_text(c.data.categories); }},
      SIZE_FIELD("data.train", data.train_normal, 1, 100000),
      SIZE_FIELD("data.test_normal", data.test_normal, 0, 100000),
      SIZE_FIELD("data.test_anomalous", data.test_anomalous, 0, 100000),
      SIZE_FIELD("data.points", data.points, 64, 1u << 24),
      REAL_FIELD("data.jitter", data.jitter, 0.0, 1.0),
      Field{"data.anomalies",
            [](RunConfig& c, std::string_view k, std::string_view v) {
              std::vector<AnomalyKind> kinds;
              for (const auto& name : parse_list(v)) {
                try {
                  kinds.push_back(parse_anomaly_kind(name));
                } catch (const Error&) {
                  bad_value(k, v, "unknown anomaly kind '" + name + "'");
                }
              }
              if (kinds.empty()) bad_value(k, v, "needs at least one anomaly kind");
              c.data.anomaly_kinds = kinds;
            },
            [](const RunConfig& c) { return list_text(c.data.anomaly_kinds); }},
      REAL_FIELD("data.radius_min", data.radius_min, 1e-6, 10.0),
      REAL_FIELD("data.radius_max", data.radius_max, 1e-6, 10.0),
      REAL_FIELD("data.magnitude_min", data.magnitude_min, 1e-9, 10.0),
      REAL_FIELD("data.magnitude_max", data.magnitude_max, 1e-9, 10.0),
      U64_FIELD("data.seed", data.seed),
  };
  return table;
}

#undef SIZE_FIELD
#undef REAL_FIELD
#undef BOOL_FIELD
#undef U64_FIELD

}  // namespace

RunConfig RunConfig::preset(std::string_view name) {
  RunConfig c;
  if (name == "desk") return c;
  if (name == "paper") {
    c.down.groups = 8192;
    c.down.neighbors = 640;
    c.up.gamma = 8;
    c.data.points = 65536;
    return c;
  }
  throw Error(ErrorKind::kConfigError, "unknown preset '" + std::string(name) + "' (expected desk or paper)");
}

void RunConfig::set(std::string_view key, std::string_view value) {
  key = trim(key);
  value = trim(value);
  for (const Field& f : fields()) {
    if (key == f.key) {
      f.set(*this, key, value);
      return;
    }
  }
  throw Error(ErrorKind::kConfigError, "unknown config key '" + std::string(key) + "'");
}

void RunConfig::validate() const {
  noise.validate();
  down.validate();
  up.validate();
  if (down.groups > data.points) {
    throw Error(ErrorKind::kConfigError, "group.g exceeds data.points");
  }
  if (down.neighbors > data.points) throw Error(ErrorKind::kConfigError, "group.k exceeds data.points");
  if (rep_k >= down.groups * up.gamma) throw Error(ErrorKind::kConfigError, "up.rep_k must be below G * gamma");
  if (data.radius_min > data.radius_max) throw Error(ErrorKind::kConfigError, "data.radius_min > data.radius_max");
  if (data.magnitude_min > data.magnitude_max) {
    throw Error(ErrorKind::kConfigError, "data.magnitude_min > data.magnitude_max");
  }
  if (down.groups * up.gamma > data.points && emd_mode == EmdMode::kAssignment) {
    throw Error(ErrorKind::kConfigError, "assignment EMD needs G * gamma <= data.points");
  }
}

std::vector<std::string> RunConfig::keys() {
  std::vector<std::string> out;
  for (const Field& f : fields()) out.emplace_back(f.key);
  return out;
}

nlohmann::json RunConfig::to_json() const {
  nlohmann::json j = nlohmann::json::object();
  for (const Field& f : fields()) {
    if (f.get) j[f.key] = f.get(*this);
  }
  return j;
}

std::string RunConfig::to_text() const {
  std::string out;
  for (const Field& f : fields()) {
    if (f.get) out += std::string(f.key) + " = " + f.get(*this) + "\n";
  }
  return out;
}

DownTrainConfig RunConfig::down_train() const {
  DownTrainConfig t;
  t.epochs = down_epochs;
  t.adam.lr = lr;
  t.noise = noise;
  t.noise_enabled = noise_train;
  t.scale_jitter = scale_jitter;
  t.weights = down_loss;
  return t;
}

UpTrainConfig RunConfig::up_train() const {
  UpTrainConfig t;
  t.epochs = up_epochs;
  t.adam.lr = lr;
  t.noise = noise;
  t.noise_enabled = noise_train;
  t.scale_jitter = scale_jitter;
  t.loss.repulsion = loss_rep;
  t.loss.emd = loss_emd;
  t.loss.emd_mode = emd_mode;
  t.loss.rep_k = rep_k;
  t.loss.rep_h = rep_h;
  return t;
}

std::string fingerprint(const nlohmann::json& j) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char c : j.dump()) {
    h ^= c;
    h *= 0x100000001b3ULL;
  }
  char buf[17];
  std::snprintf(buf, sizeof(buf), "%016llx", static_cast<unsigned long long>(h));
  return buf;
}

std::string RunConfig::down_hash() const {
  const nlohmann::json j = to_json();
  nlohmann::json subset = nlohmann::json::object();
  for (const auto& [key, value] : j.items()) {
    const bool up_only = key.rfind("up.", 0) == 0 || key == "loss.rep" || key == "loss.emd" ||
                         key == "train.up_epochs" || key == "noise.infer";
    if (!up_only) subset[key] = value;
  }
  return fingerprint(subset);
}

std::string RunConfig::up_hash() const {
  nlohmann::json j = to_json();
  j.erase("noise.infer");
  return fingerprint(j);
}

void apply_config_text(RunConfig& config, std::string_view text, const std::string& origin) {
  std::size_t line_no = 0;
  while (!text.empty()) {
    const auto nl = text.find('\n');
    std::string_view line = text.substr(0, nl);
    text = nl == std::string_view::npos ? std::string_view{} : text.substr(nl + 1);
    ++line_no;
    const auto hash = line.find('#');
    if (hash != std::string_view::npos) line = line.substr(0, hash);
    line = trim(line);
    if (line.empty()) continue;
    const auto eq = line.find('=');
    if (eq == std::string_view::npos) {
      throw Error(ErrorKind::kConfigError, origin + ":" + std::to_string(line_no) + ": expected key = value");
    }
    try {
      config.set(line.substr(0, eq), line.substr(eq + 1));
    } catch (const Error& e) {
      throw Error(ErrorKind::kConfigError, origin + ":" + std::to_string(line_no) + ": " + e.detail());
    }
  }
}

RunConfig load_config(const std::filesystem::path& path, RunConfig base) {
  std::ifstream in(path);
  if (!in) throw Error(ErrorKind::kConfigError, "cannot read config " + path.string());
  std::stringstream ss;
  ss << in.rdbuf();
  apply_config_text(base, ss.str(), path.string());
  return base;
}

}  // namespace duscloud
