#include <doctest.h>

#include <filesystem>
#include <fstream>
#include <sstream>

#include "duscloud/error.hpp"
#include "duscloud/nn/checkpoint.hpp"
#include "duscloud/pipeline.hpp"

using namespace duscloud;
namespace fs = std::filesystem;

namespace {

RunConfig tiny() {
  RunConfig c;
  apply_config_text(c,
                    "data.categories = sphere, box\n"
                    "data.train = 2\n"
                    "data.test_normal = 2\n"
                    "data.test_anomalous = 2\n"
                    "data.points = 256\n"
                    "group.g = 16\n"
                    "group.k = 8\n"
                    "down.c1 = 8\ndown.c2 = 8\ndown.c3 = 8\ndown.ffn = 8\ndown.heads = 2\ndown.depth = 1\n"
                    "up.sa_width = 8\nup.conv_width = 8\nup.head_hidden = 8\n"
                    "train.epochs = 2\n",
                    "tiny");
  return c;
}

fs::path fresh_dir(const std::string& name) {
  const fs::path p = fs::temp_directory_path() / name;
  fs::remove_all(p);
  return p;
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

ErrorKind kind_of(const std::function<void()>& fn) {
  try {
    fn();
  } catch (const Error& e) {
    return e.kind();
  }
  FAIL("no error raised");
  return ErrorKind::kInvalidArgument;
}

}  // namespace

TEST_CASE("perturb subsamples and adds noise deterministically") {
  std::vector<Point3> pts;
  for (int i = 0; i < 80; ++i) pts.push_back({double(i), 0, 0});
  const PointCloud cloud(pts, std::vector<std::uint8_t>(80, 0), "c");
  const PointCloud eighth = perturb(cloud, {8, 0.0}, 3);
  CHECK(eighth.size() == 10);
  CHECK(eighth.has_labels());
  for (std::size_t i = 1; i < eighth.size(); ++i) CHECK(eighth[i - 1].x < eighth[i].x);
  CHECK(perturb(cloud, {8, 0.0}, 3).points() == eighth.points());
  const PointCloud noisy = perturb(cloud, {1, 0.01}, 3);
  CHECK(noisy.size() == 80);
  CHECK(noisy[5] != cloud[5]);
  CHECK(distance(noisy[5], cloud[5]) < 0.1);
  CHECK(perturb(cloud, {}, 1).points() == cloud.points());
  CHECK(Perturbation{}.tag() == "clean");
  CHECK(Perturbation{4, 0.0}.tag() == "subsample-4");
  CHECK(Perturbation{1, 0.005}.tag() == "noise-0.005");
}

TEST_CASE("worker count honors the environment cap") {
  setenv("DUSCLOUD_THREADS", "2", 1);
  CHECK(worker_count(10) == 2);
  CHECK(worker_count(1) == 1);
  unsetenv("DUSCLOUD_THREADS");
  CHECK(worker_count(3) >= 1);
}

TEST_CASE("train-up and eval need matching checkpoints") {
  const RunConfig cfg = tiny();
  const OutLayout out{fresh_dir("duscloud_pipe_missing"), {}};
  std::ostringstream log;
  CHECK(kind_of([&] { cmd_train_down(cfg, out, log); }) == ErrorKind::kMissingCorpus);
  cmd_synth(cfg, out, log);
  CHECK(kind_of([&] { cmd_train_up(cfg, out, log); }) == ErrorKind::kMissingCheckpoint);
  cmd_train_down(cfg, out, log, std::string("sphere"));
  CHECK(fs::exists(out.down_ckpt("sphere")));
  CHECK(!fs::exists(out.down_ckpt("box")));
  CHECK(kind_of([&] { cmd_train_down(cfg, out, log, std::string("cone")); }) == ErrorKind::kMissingCorpus);

  RunConfig other = cfg;
  other.set("down.c1", "4");
  CHECK(kind_of([&] { cmd_train_up(other, out, log, std::string("sphere")); }) == ErrorKind::kConfigMismatch);
  cmd_train_up(cfg, out, log, std::string("sphere"));
  CHECK(kind_of([&] { cmd_eval(cfg, out, log); }) == ErrorKind::kMissingCheckpoint);

  RunConfig data = cfg;
  data.set("data.seed", "5");
  CHECK(kind_of([&] { cmd_train_down(data, out, log); }) == ErrorKind::kConfigMismatch);
  fs::remove_all(out.root);
}

TEST_CASE("end-to-end run is byte-deterministic and complete") {
  const RunConfig cfg = tiny();
  std::vector<fs::path> roots = {fresh_dir("duscloud_pipe_a"), fresh_dir("duscloud_pipe_b")};
  std::vector<nlohmann::json> metrics;
  // The second run uses a different worker count; output must not change.
  for (const auto& root : roots) {
    setenv("DUSCLOUD_THREADS", root == roots[0] ? "1" : "3", 1);
    const OutLayout out{root, {}};
    std::ostringstream log;
    cmd_synth(cfg, out, log);
    cmd_train_down(cfg, out, log);
    cmd_train_up(cfg, out, log);
    const EvalResult r = cmd_eval(cfg, out, log);
    CHECK(r.categories.size() == 2);
    CHECK(r.clouds == 8);
    CHECK(r.mean.p_auroc.has_value());
    nlohmann::json j = nlohmann::json::parse(slurp(out.eval("clean") / "metrics.json"));
    for (const char* key : {"o_auroc", "p_auroc", "o_aupr", "p_aupr", "fps_throughput", "categories"}) {
      CHECK(j.contains(key));
    }
    j.erase("fps_throughput");
    metrics.push_back(j);
  }
  unsetenv("DUSCLOUD_THREADS");
  CHECK(metrics[0] == metrics[1]);
  for (const auto& rel : {"models/sphere/down.ckpt", "models/box/up.ckpt", "models/box/down_loss.csv",
                          "models/sphere/up_loss.csv", "corpus/manifest.json", "corpus/box/test/box-test-good-00.xyz",
                          "eval/clean/scores/sphere/sphere-test-good-01.csv"}) {
    CAPTURE(rel);
    REQUIRE(fs::exists(roots[0] / rel));
    CHECK(slurp(roots[0] / rel) == slurp(roots[1] / rel));
  }

  const OutLayout out{roots[0], {}};
  std::ostringstream log;

  SUBCASE("robustness sweep has one row per level") {
    const auto rows = cmd_robustness(cfg, out, log, {2, 8}, {0.001, 0.009});
    CHECK(rows.size() == 5);
    const std::string csv = slurp(out.root / "robustness" / "robustness.csv");
    CHECK(std::count(csv.begin(), csv.end(), '\n') == 6);
    CHECK(csv.find("subsample,1/8") != std::string::npos);
    CHECK(csv.find("noise,0.009") != std::string::npos);
  }

  SUBCASE("single-cloud inference repeats exactly and tolerates 1/8 subsampling") {
    const fs::path input = out.corpus() / "sphere" / "test" / "sphere-test-bulge-00.xyz";
    REQUIRE(fs::exists(input));
    const AnomalyReport a = cmd_infer(cfg, out, "sphere", input, out.root / "infer" / "a.csv");
    const AnomalyReport b = cmd_infer(cfg, out, "sphere", input, out.root / "infer" / "b.csv");
    CHECK(a.normalized == b.normalized);
    CHECK(a.object == b.object);
    CHECK(a.recon_size == 16 * 4);
    CHECK(slurp(out.root / "infer" / "a.csv") == slurp(out.root / "infer" / "b.csv"));

    const EvalResult sub = cmd_eval(cfg, out, log, {8, 0.0}, false);
    CHECK(sub.clouds == 8);
    CHECK(fs::exists(out.eval("subsample-8") / "metrics.json"));
  }

  SUBCASE("label-free test clouds drop point metrics with a warning") {
    const OutLayout bare{fresh_dir("duscloud_pipe_bare"), {}};
    fs::copy(out.root, bare.root, fs::copy_options::recursive);
    for (const auto& e : fs::recursive_directory_iterator(bare.corpus())) {
      if (e.path().extension() != ".xyz" || e.path().parent_path().filename() != "test") continue;
      std::ifstream in(e.path());
      std::ostringstream stripped;
      std::string line;
      while (std::getline(in, line)) {
        std::istringstream ls(line);
        double x, y, z;
        if (ls >> x >> y >> z) stripped << line.substr(0, line.rfind(' ')) << '\n';
      }
      in.close();
      std::ofstream(e.path()) << stripped.str();
    }
    std::ostringstream warn;
    const EvalResult r = cmd_eval(cfg, bare, warn, {}, false);
    CHECK(!r.mean.p_auroc);
    CHECK(warn.str().find("warning") != std::string::npos);
    const auto j = nlohmann::json::parse(slurp(bare.eval("clean") / "metrics.json"));
    CHECK(!j.contains("p_auroc"));
    CHECK(j.contains("o_auroc"));
    fs::remove_all(bare.root);
  }

  SUBCASE("ablation reuses matching checkpoints and writes its report") {
    const AblationReport rep = cmd_ablate(cfg, out, log, {"full", "no_cos", "no_emd", "no_noise"});
    CHECK(rep.rows.size() == 4);
    CHECK(rep.rows.front().o_auroc_drop == 0.0);
    CHECK(fs::exists(out.root / "ablation" / "ablation.json"));
    CHECK(fs::exists(out.root / "ablation" / "ablation.md"));
    // full matches the main run, and no_emd keeps the main Down-Net.
    CHECK(slurp(out.root / "ablation" / "full" / "models" / "box" / "up.ckpt") ==
          slurp(out.root / "models" / "box" / "up.ckpt"));
    CHECK(slurp(out.root / "ablation" / "no_emd" / "models" / "box" / "down.ckpt") ==
          slurp(out.root / "models" / "box" / "down.ckpt"));
    CHECK(slurp(out.root / "ablation" / "no_emd" / "models" / "box" / "up.ckpt") !=
          slurp(out.root / "models" / "box" / "up.ckpt"));
    CHECK(kind_of([&] { ablation_variants(cfg, {"no_everything"}); }) == ErrorKind::kConfigError);

    // A second pass finds every variant's own checkpoints and trains nothing.
    std::ostringstream again;
    const AblationReport rerun = cmd_ablate(cfg, out, again, {"full", "no_cos", "no_emd", "no_noise"});
    CHECK(again.str().find("training") == std::string::npos);
    REQUIRE(rerun.rows.size() == rep.rows.size());
    for (std::size_t i = 0; i < rep.rows.size(); ++i) {
      CHECK(rerun.rows[i].result.mean.o_auroc == rep.rows[i].result.mean.o_auroc);
      CHECK(rerun.rows[i].result.mean.p_auroc == rep.rows[i].result.mean.p_auroc);
    }
  }

  SUBCASE("bench reports throughput") {
    const BenchResult b = cmd_bench(cfg, out, log, 1);
    CHECK(b.clouds == 8);
    CHECK(b.throughput > 0.0);
    CHECK(b.train_step_down_ms > 0.0);
  }
}
