#include "duscloud/pipeline.hpp"

#include <algorithm>
#include <atomic>
#include <chrono>
#include <cstdio>
#include <cstdlib>
#include <exception>
#include <fstream>
#include <mutex>
#include <numeric>
#include <ostream>
#include <sstream>
#include <thread>

#include "duscloud/cloud_io.hpp"
#include "duscloud/error.hpp"
#include "duscloud/nn/checkpoint.hpp"
#include "duscloud/rng.hpp"

namespace duscloud {
namespace {

using Clock = std::chrono::steady_clock;

constexpr std::uint64_t kPerturbStream = 0x5045525455524bULL;

double seconds_since(Clock::time_point start) {
  return std::chrono::duration<double>(Clock::now() - start).count();
}

// Runs fn(i) for i in [0, n) on up to worker_count(n) threads. The first
// failure (lowest index) is rethrown after every worker has stopped.
template <typename Fn>
void parallel_for(std::size_t n, Fn fn) {
  const std::size_t workers = worker_count(n);
  std::vector<std::exception_ptr> errors(n);
  if (workers <= 1) {
    for (std::size_t i = 0; i < n; ++i) {
      try {
        fn(i);
      } catch (...) {
        errors[i] = std::current_exception();
        break;
      }
    }
  } else {
    std::atomic<std::size_t> next{0};
    std::atomic<bool> failed{false};
    std::vector<std::thread> pool;
    for (std::size_t w = 0; w < workers; ++w) {
      pool.emplace_back([&] {
        for (std::size_t i = next++; i < n && !failed; i = next++) {
          try {
            fn(i);
          } catch (...) {
            errors[i] = std::current_exception();
            failed = true;
          }
        }
      });
    }
    for (auto& t : pool) t.join();
  }
  for (auto& e : errors) {
    if (e) std::rethrow_exception(e);
  }
}

class Logger {
 public:
  explicit Logger(std::ostream& out) : out_(out) {}
  void line(const std::string& text) {
    std::lock_guard<std::mutex> lock(mu_);
    out_ << text << '\n' << std::flush;
  }

 private:
  std::ostream& out_;
  std::mutex mu_;
};

std::uint64_t category_seed(std::uint64_t base, const std::string& category, std::uint64_t stream) {
  return derive_seed(inference_seed(base, category), stream);
}

Corpus open_corpus(const RunConfig& config, const OutLayout& out) {
  Corpus corpus = read_corpus(out.corpus());
  std::ifstream in(out.corpus() / "manifest.json");
  const nlohmann::json manifest = nlohmann::json::parse(in);
  if (manifest.at("spec") != config.data.to_json()) {
    throw Error(ErrorKind::kConfigMismatch,
                "corpus at " + out.corpus().string() + " was generated with different data.* settings");
  }
  return corpus;
}

std::vector<std::string> selected_categories(const Corpus& corpus, const std::optional<std::string>& only) {
  std::vector<std::string> cats = corpus.categories();
  if (only) {
    if (std::find(cats.begin(), cats.end(), *only) == cats.end()) {
      throw Error(ErrorKind::kMissingCorpus, "category '" + *only + "' is not in the corpus");
    }
    return {*only};
  }
  return cats;
}

std::vector<PointCloud> load_split(const Corpus& corpus, const std::string& category, const std::string& split) {
  std::vector<PointCloud> clouds;
  for (const CorpusEntry* e : corpus.select(category, split)) clouds.push_back(corpus.load(*e));
  if (clouds.empty()) {
    throw Error(ErrorKind::kMissingCorpus, "no " + split + " clouds for category '" + category + "'");
  }
  return clouds;
}

nn::Checkpoint checked_checkpoint(const std::filesystem::path& path, const std::string& expected_hash,
                                  const char* what) {
  if (!std::filesystem::exists(path)) {
    throw Error(ErrorKind::kMissingCheckpoint, std::string(what) + " checkpoint " + path.string() +
                                                   " not found; run the matching train command first");
  }
  nn::Checkpoint ckpt = nn::load_checkpoint(path);
  if (ckpt.config_hash != expected_hash) {
    throw Error(ErrorKind::kConfigMismatch, std::string(what) + " checkpoint " + path.string() + " has config hash " +
                                                ckpt.config_hash + ", current config expects " + expected_hash);
  }
  return ckpt;
}

DownNetModel load_down(const RunConfig& config, const OutLayout& out, const std::string& category) {
  return DownNetModel::from_checkpoint(checked_checkpoint(out.down_ckpt(category), config.down_hash(), "Down-Net"));
}

UpNetModel load_up(const RunConfig& config, const OutLayout& out, const std::string& category) {
  return UpNetModel::from_checkpoint(checked_checkpoint(out.up_ckpt(category), config.up_hash(), "Up-Net"));
}

InferOptions infer_options(const RunConfig& config) {
  InferOptions o;
  o.noise = config.noise;
  o.inject_noise = config.noise_infer;
  return o;
}

std::string fmt(const char* pattern, double v) {
  char buf[64];
  std::snprintf(buf, sizeof(buf), pattern, v);
  return buf;
}

std::string metric_text(const std::optional<double>& v) { return v ? fmt("%.6f", *v) : std::string("NA"); }

MetricSet mean_metrics(const std::vector<CategoryMetrics>& cats) {
  MetricSet m;
  double p_auroc = 0.0;
  double p_aupr = 0.0;
  std::size_t with_points = 0;
  for (const auto& c : cats) {
    m.o_auroc += c.metrics.o_auroc;
    m.o_aupr += c.metrics.o_aupr;
    m.samples += c.metrics.samples;
    m.anomalous += c.metrics.anomalous;
    if (c.metrics.p_auroc) {
      p_auroc += *c.metrics.p_auroc;
      p_aupr += *c.metrics.p_aupr;
      ++with_points;
    }
  }
  if (!cats.empty()) {
    m.o_auroc /= static_cast<double>(cats.size());
    m.o_aupr /= static_cast<double>(cats.size());
  }
  if (with_points > 0) {
    m.p_auroc = p_auroc / static_cast<double>(with_points);
    m.p_aupr = p_aupr / static_cast<double>(with_points);
  }
  return m;
}

void write_text(const std::filesystem::path& path, const std::string& text) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary);
  if (!out) throw Error(ErrorKind::kIoError, "cannot write " + path.string());
  out << text;
}

}  // namespace

std::string Perturbation::tag() const {
  if (subsample <= 1 && noise_std <= 0.0) return "clean";
  std::string t;
  if (subsample > 1) t = "subsample-" + std::to_string(subsample);
  if (noise_std > 0.0) t += std::string(t.empty() ? "" : "+") + "noise-" + fmt("%g", noise_std);
  return t;
}

PointCloud perturb(const PointCloud& cloud, const Perturbation& p, std::uint64_t seed) {
  if (p.subsample == 0) throw Error(ErrorKind::kInvalidArgument, "subsample factor must be at least 1");
  if (!(p.noise_std >= 0.0)) throw Error(ErrorKind::kInvalidArgument, "noise std must be non-negative");
  Rng rng(seed);
  std::vector<std::size_t> keep(cloud.size());
  std::iota(keep.begin(), keep.end(), 0);
  if (p.subsample > 1) {
    const std::size_t n = cloud.size() / p.subsample;
    if (n == 0) throw Error(ErrorKind::kTooFewPoints, "subsampling leaves no points");
    for (std::size_t i = 0; i < n; ++i) std::swap(keep[i], keep[i + rng.index(keep.size() - i)]);
    keep.resize(n);
    std::sort(keep.begin(), keep.end());
  }
  std::vector<Point3> points;
  std::optional<std::vector<std::uint8_t>> labels;
  if (cloud.has_labels()) labels.emplace();
  for (std::size_t i : keep) {
    Point3 q = cloud[i];
    if (p.noise_std > 0.0) q = q + Point3{rng.normal(), rng.normal(), rng.normal()} * p.noise_std;
    points.push_back(q);
    if (labels) labels->push_back(cloud.labels()[i]);
  }
  return PointCloud(std::move(points), std::move(labels), cloud.id());
}

std::size_t worker_count(std::size_t jobs) {
  std::size_t n = std::max(1u, std::thread::hardware_concurrency());
  if (const char* env = std::getenv("DUSCLOUD_THREADS")) {
    const long v = std::strtol(env, nullptr, 10);
    if (v >= 1) n = static_cast<std::size_t>(v);
  }
  return std::max<std::size_t>(1, std::min(n, jobs));
}

Corpus cmd_synth(const RunConfig& config, const OutLayout& out, std::ostream& log) {
  config.validate();
  Corpus corpus = write_corpus(out.corpus(), config.data);
  log << "synth: wrote " << corpus.entries.size() << " clouds to " << out.corpus().string() << '\n';
  return corpus;
}

void cmd_train_down(const RunConfig& config, const OutLayout& out, std::ostream& log,
                    const std::optional<std::string>& category) {
  config.validate();
  const Corpus corpus = open_corpus(config, out);
  const auto cats = selected_categories(corpus, category);
  Logger logger(log);
  parallel_for(cats.size(), [&](std::size_t i) {
    const std::string& cat = cats[i];
    const auto clouds = load_split(corpus, cat, "train");
    DownNetModel model(config.down, category_seed(config.seed, cat, 1));
    DownTrainConfig train = config.down_train();
    train.noise.seed = category_seed(config.noise.seed, cat, 2);
    const auto start = Clock::now();
    const auto history = train_down(model, clouds, train, [&](std::size_t epoch, double total) {
      if (epoch == 1 || epoch % 20 == 0 || epoch == train.epochs) {
        logger.line("train-down[" + cat + "] epoch " + std::to_string(epoch) + " loss " + fmt("%.6f", total));
      }
    });
    nn::save_checkpoint(out.down_ckpt(cat), model.to_checkpoint(config.down_hash()));
    write_down_log(out.down_log(cat), history);
    logger.line("train-down[" + cat + "] done in " + fmt("%.1f", seconds_since(start)) + " s");
  });
}

void cmd_train_up(const RunConfig& config, const OutLayout& out, std::ostream& log,
                  const std::optional<std::string>& category) {
  config.validate();
  const Corpus corpus = open_corpus(config, out);
  const auto cats = selected_categories(corpus, category);
  Logger logger(log);
  parallel_for(cats.size(), [&](std::size_t i) {
    const std::string& cat = cats[i];
    const DownNetModel down = load_down(config, out, cat);
    const auto clouds = load_split(corpus, cat, "train");
    UpNetModel model(config.up, category_seed(config.seed, cat, 3));
    UpTrainConfig train = config.up_train();
    train.noise.seed = category_seed(config.noise.seed, cat, 2);
    const auto start = Clock::now();
    const auto history = train_up(model, down, clouds, train, [&](std::size_t epoch, double total) {
      if (epoch == 1 || epoch % 20 == 0 || epoch == train.epochs) {
        logger.line("train-up[" + cat + "] epoch " + std::to_string(epoch) + " loss " + fmt("%.4f", total));
      }
    });
    nn::save_checkpoint(out.up_ckpt(cat), model.to_checkpoint(config.up_hash()));
    write_up_log(out.up_log(cat), history);
    logger.line("train-up[" + cat + "] done in " + fmt("%.1f", seconds_since(start)) + " s");
  });
}

nlohmann::json EvalResult::to_json() const {
  nlohmann::json cats = nlohmann::json::object();
  for (const auto& c : categories) cats[c.category] = c.metrics.to_json();
  nlohmann::json j = mean.to_json();
  j["perturbation"] = {{"subsample", perturbation.subsample}, {"noise_std", perturbation.noise_std}};
  j["categories"] = cats;
  j["clouds"] = clouds;
  j["fps_throughput"] = throughput;
  return j;
}

EvalResult cmd_eval(const RunConfig& config, const OutLayout& out, std::ostream& log, const Perturbation& p,
                    bool write_scores) {
  config.validate();
  const Corpus corpus = open_corpus(config, out);
  const auto cats = corpus.categories();
  EvalResult result;
  result.perturbation = p;
  const std::filesystem::path dir = out.eval(p.tag());
  bool any_labels = false;
  for (const auto& cat : cats) {
    const DownNetModel down = load_down(config, out, cat);
    const UpNetModel up = load_up(config, out, cat);
    const auto entries = corpus.select(cat, "test");
    if (entries.empty()) throw Error(ErrorKind::kMissingCorpus, "no test clouds for category '" + cat + "'");
    std::vector<PointCloud> clouds;
    for (const CorpusEntry* e : entries) {
      clouds.push_back(perturb(corpus.load(*e), p, inference_seed(config.seed ^ kPerturbStream, e->id)));
    }
    std::vector<std::optional<AnomalyReport>> reports(clouds.size());
    const auto start = Clock::now();
    parallel_for(clouds.size(), [&](std::size_t i) { reports[i] = infer(down, up, infer_options(config), clouds[i]); });
    result.infer_seconds += seconds_since(start);
    result.clouds += clouds.size();

    std::vector<LabeledReport> labeled;
    for (std::size_t i = 0; i < clouds.size(); ++i) {
      const auto* labels = clouds[i].has_labels() ? &clouds[i].labels() : nullptr;
      any_labels = any_labels || labels != nullptr;
      labeled.push_back({&*reports[i], static_cast<std::uint8_t>(entries[i]->anomaly != "none"), labels});
      if (write_scores) write_score_csv(dir / "scores" / cat / (entries[i]->id + ".csv"), *reports[i], labels);
    }
    const MetricSet m = evaluate(labeled);
    result.categories.push_back({cat, m});
    log << "eval[" << p.tag() << "] " << cat << ": O-AUROC " << fmt("%.4f", m.o_auroc) << "  P-AUROC "
        << metric_text(m.p_auroc) << "  O-AUPR " << fmt("%.4f", m.o_aupr) << "  P-AUPR " << metric_text(m.p_aupr)
        << '\n';
  }
  if (!any_labels) log << "warning: test clouds carry no point labels; P-metrics omitted\n";
  result.mean = mean_metrics(result.categories);
  result.throughput = result.infer_seconds > 0.0 ? static_cast<double>(result.clouds) / result.infer_seconds : 0.0;
  log << "eval[" << p.tag() << "] mean: O-AUROC " << fmt("%.4f", result.mean.o_auroc) << "  P-AUROC "
      << metric_text(result.mean.p_auroc) << "  O-AUPR " << fmt("%.4f", result.mean.o_aupr) << "  P-AUPR "
      << metric_text(result.mean.p_aupr) << "  throughput " << fmt("%.2f", result.throughput) << " clouds/s\n";
  write_text(dir / "metrics.json", result.to_json().dump(2) + "\n");
  return result;
}

std::vector<RobustnessRow> cmd_robustness(const RunConfig& config, const OutLayout& out, std::ostream& log,
                                          const std::vector<std::size_t>& subsample_levels,
                                          const std::vector<double>& noise_levels) {
  std::vector<RobustnessRow> rows;
  rows.push_back({"clean", "-", cmd_eval(config, out, log, {}, false)});
  for (std::size_t f : subsample_levels) {
    rows.push_back({"subsample", "1/" + std::to_string(f), cmd_eval(config, out, log, {f, 0.0}, false)});
  }
  for (double s : noise_levels) {
    rows.push_back({"noise", fmt("%g", s), cmd_eval(config, out, log, {1, s}, false)});
  }
  std::string csv = "kind,level,o_auroc,p_auroc,o_aupr,p_aupr,o_auroc_drop\n";
  nlohmann::json j = nlohmann::json::array();
  const double clean = rows.front().result.mean.o_auroc;
  for (const auto& r : rows) {
    const MetricSet& m = r.result.mean;
    csv += r.kind + "," + r.level + "," + fmt("%.6f", m.o_auroc) + "," + metric_text(m.p_auroc) + "," +
           fmt("%.6f", m.o_aupr) + "," + metric_text(m.p_aupr) + "," + fmt("%.6f", clean - m.o_auroc) + "\n";
    nlohmann::json row = r.result.to_json();
    row["kind"] = r.kind;
    row["level"] = r.level;
    j.push_back(row);
  }
  write_text(out.root / "robustness" / "robustness.csv", csv);
  write_text(out.root / "robustness" / "robustness.json", j.dump(2) + "\n");
  return rows;
}

AnomalyReport cmd_infer(const RunConfig& config, const OutLayout& out, const std::string& category,
                        const std::filesystem::path& input, const std::filesystem::path& csv) {
  config.validate();
  const DownNetModel down = load_down(config, out, category);
  const UpNetModel up = load_up(config, out, category);
  PointCloud cloud = read_cloud(input);
  if (cloud.id().empty()) cloud.set_id(input.stem().string());
  AnomalyReport report = infer(down, up, infer_options(config), cloud);
  write_score_csv(csv, report, cloud.has_labels() ? &cloud.labels() : nullptr);
  return report;
}

nlohmann::json BenchResult::to_json() const {
  return {{"clouds", clouds},
          {"seconds", seconds},
          {"fps_throughput", throughput},
          {"train_step_down_ms", train_step_down_ms},
          {"train_step_up_ms", train_step_up_ms}};
}

BenchResult cmd_bench(const RunConfig& config, const OutLayout& out, std::ostream& log, std::size_t repeats) {
  config.validate();
  const Corpus corpus = open_corpus(config, out);
  BenchResult bench;
  const auto cats = corpus.categories();
  for (const auto& cat : cats) {
    const DownNetModel down = load_down(config, out, cat);
    const UpNetModel up = load_up(config, out, cat);
    const auto clouds = load_split(corpus, cat, "test");
    const auto start = Clock::now();
    for (std::size_t r = 0; r < std::max<std::size_t>(1, repeats); ++r) {
      parallel_for(clouds.size(), [&](std::size_t i) { (void)infer(down, up, infer_options(config), clouds[i]); });
      bench.clouds += clouds.size();
    }
    bench.seconds += seconds_since(start);
  }
  bench.throughput = bench.seconds > 0.0 ? static_cast<double>(bench.clouds) / bench.seconds : 0.0;

  // Training step cost on the first category, a few steps from fresh weights.
  constexpr std::size_t kSteps = 5;
  const auto clouds = load_split(corpus, cats.front(), "train");
  const std::vector<PointCloud> one(clouds.begin(), clouds.begin() + 1);
  DownNetModel down(config.down, 1);
  DownTrainConfig dt = config.down_train();
  dt.epochs = kSteps;
  auto start = Clock::now();
  train_down(down, one, dt);
  bench.train_step_down_ms = 1e3 * seconds_since(start) / kSteps;
  UpNetModel up(config.up, 2);
  UpTrainConfig ut = config.up_train();
  ut.epochs = kSteps;
  start = Clock::now();
  train_up(up, down, one, ut);
  bench.train_step_up_ms = 1e3 * seconds_since(start) / kSteps;

  log << "bench: " << bench.clouds << " clouds in " << fmt("%.2f", bench.seconds) << " s -> "
      << fmt("%.2f", bench.throughput) << " clouds/s; train step down " << fmt("%.1f", bench.train_step_down_ms)
      << " ms, up " << fmt("%.1f", bench.train_step_up_ms) << " ms\n";
  write_text(out.root / "bench" / "bench.json", bench.to_json().dump(2) + "\n");
  return bench;
}

std::vector<AblationVariant> ablation_variants(const RunConfig& base, const std::vector<std::string>& names) {
  std::vector<AblationVariant> out;
  for (const auto& name : names) {
    RunConfig c = base;
    if (name == "full") {
    } else if (name == "no_mse") {
      c.down_loss.mse = false;
    } else if (name == "no_cos") {
      c.down_loss.cos = false;
    } else if (name == "no_cd") {
      c.down_loss.chamfer = false;
    } else if (name == "no_rep") {
      c.loss_rep = false;
    } else if (name == "no_emd") {
      c.loss_emd = false;
    } else if (name == "no_noise") {
      c.noise_train = false;
      c.noise_infer = false;
    } else {
      throw Error(ErrorKind::kConfigError, "unknown ablation variant '" + name + "'");
    }
    out.push_back({name, c});
  }
  return out;
}

nlohmann::json AblationReport::to_json() const {
  nlohmann::json rows_json = nlohmann::json::array();
  for (const auto& r : rows) {
    nlohmann::json j = r.result.to_json();
    j["variant"] = r.name;
    j["o_auroc_drop"] = r.o_auroc_drop;
    rows_json.push_back(j);
  }
  return {{"variants", rows_json}, {"ordering_holds", ordering_holds}};
}

std::string AblationReport::to_markdown() const {
  std::string md = "| variant | O-AUROC | P-AUROC | O-AUPR | P-AUPR | O-AUROC drop |\n|---|---|---|---|---|---|\n";
  for (const auto& r : rows) {
    const MetricSet& m = r.result.mean;
    md += "| " + r.name + " | " + fmt("%.4f", m.o_auroc) + " | " + metric_text(m.p_auroc) + " | " +
          fmt("%.4f", m.o_aupr) + " | " + metric_text(m.p_aupr) + " | " + fmt("%+.4f", r.o_auroc_drop) + " |\n";
  }
  md += std::string("\nRemoving EMD and removing Noise-Gen each cost more O-AUROC than removing COS: ") +
        (ordering_holds ? "yes" : "no") + "\n";
  return md;
}

AblationReport cmd_ablate(const RunConfig& base, const OutLayout& out, std::ostream& log,
                          const std::vector<std::string>& variants) {
  const auto list = ablation_variants(base, variants);
  const Corpus corpus = open_corpus(base, out);
  const auto cats = corpus.categories();
  // Checkpoints already on disk that a variant may adopt when its hash matches:
  // its own from an earlier ablate, the main run, then earlier variants.
  std::vector<OutLayout> pools = {out};
  AblationReport report;
  for (const auto& v : list) {
    const OutLayout layout{out.root / "ablation" / v.name, out.corpus()};
    std::vector<OutLayout> candidates = {layout};
    candidates.insert(candidates.end(), pools.begin(), pools.end());
    auto adopt = [&](const std::string& cat, bool is_down) {
      const std::string hash = is_down ? v.config.down_hash() : v.config.up_hash();
      const auto dst = is_down ? layout.down_ckpt(cat) : layout.up_ckpt(cat);
      const auto dst_log = is_down ? layout.down_log(cat) : layout.up_log(cat);
      for (const auto& pool : candidates) {
        const auto src = is_down ? pool.down_ckpt(cat) : pool.up_ckpt(cat);
        if (!std::filesystem::exists(src)) continue;
        if (nn::load_checkpoint(src).config_hash != hash) continue;
        if (src != dst) {
          std::filesystem::create_directories(dst.parent_path());
          std::filesystem::copy_file(src, dst, std::filesystem::copy_options::overwrite_existing);
          const auto src_log = is_down ? pool.down_log(cat) : pool.up_log(cat);
          if (std::filesystem::exists(src_log)) {
            std::filesystem::copy_file(src_log, dst_log, std::filesystem::copy_options::overwrite_existing);
          }
        }
        return true;
      }
      return false;
    };
    for (const auto& cat : cats) {
      if (!adopt(cat, true)) {
        log << "ablation[" << v.name << "] training Down-Net for " << cat << '\n';
        cmd_train_down(v.config, layout, log, cat);
      }
      if (!adopt(cat, false)) {
        log << "ablation[" << v.name << "] training Up-Net for " << cat << '\n';
        cmd_train_up(v.config, layout, log, cat);
      }
    }
    pools.push_back(layout);
    report.rows.push_back({v.name, cmd_eval(v.config, layout, log, {}, false), 0.0});
  }
  const auto find = [&](const std::string& name) -> const AblationRow* {
    for (const auto& r : report.rows) {
      if (r.name == name) return &r;
    }
    return nullptr;
  };
  if (const AblationRow* full = find("full")) {
    for (auto& r : report.rows) r.o_auroc_drop = full->result.mean.o_auroc - r.result.mean.o_auroc;
  }
  const AblationRow* no_cos = find("no_cos");
  const AblationRow* no_emd = find("no_emd");
  const AblationRow* no_noise = find("no_noise");
  report.ordering_holds = find("full") && no_cos && no_emd && no_noise &&
                          no_emd->o_auroc_drop > no_cos->o_auroc_drop && no_noise->o_auroc_drop > no_cos->o_auroc_drop;
  write_text(out.root / "ablation" / "ablation.json", report.to_json().dump(2) + "\n");
  write_text(out.root / "ablation" / "ablation.md", report.to_markdown());
  log << report.to_markdown();
  return report;
}

}  // namespace duscloud
