#include <doctest.h>

#include "duscloud/config.hpp"
#include "duscloud/error.hpp"

using namespace duscloud;

namespace {

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

TEST_CASE("presets carry the desk and paper operating points") {
  const RunConfig desk = RunConfig::preset("desk");
  CHECK(desk.down.groups == 256);
  CHECK(desk.down.neighbors == 32);
  CHECK(desk.up.gamma == 4);
  CHECK(desk.noise.alpha == 0.08);
  CHECK(desk.noise.beta == 0.15);
  const RunConfig paper = RunConfig::preset("paper");
  CHECK(paper.down.groups == 8192);
  CHECK(paper.down.neighbors == 640);
  CHECK(paper.up.gamma == 8);
  paper.validate();
  CHECK(kind_of([] { RunConfig::preset("huge"); }) == ErrorKind::kConfigError);
}

TEST_CASE("set parses typed values and rejects bad input") {
  RunConfig c;
  c.set("noise.alpha", "0.05");
  c.set(" group.g ", " 128 ");
  c.set("loss.cos", "false");
  c.set("up.emd", "assignment");
  c.set("data.categories", "sphere,torus");
  c.set("train.epochs", "12");
  CHECK(c.noise.alpha == 0.05);
  CHECK(c.down.groups == 128);
  CHECK(!c.down_loss.cos);
  CHECK(c.emd_mode == EmdMode::kAssignment);
  CHECK(c.data.categories.size() == 2);
  CHECK(c.down_epochs == 12);
  CHECK(c.up_epochs == 12);

  CHECK(kind_of([&] { c.set("noise.gamma", "1"); }) == ErrorKind::kConfigError);
  CHECK(kind_of([&] { c.set("group.g", "many"); }) == ErrorKind::kConfigError);
  CHECK(kind_of([&] { c.set("group.g", "-3"); }) == ErrorKind::kConfigError);
  CHECK(kind_of([&] { c.set("noise.alpha", "-0.1"); }) == ErrorKind::kConfigError);
  CHECK(kind_of([&] { c.set("loss.mse", "maybe"); }) == ErrorKind::kConfigError);
}

TEST_CASE("validate catches inconsistent combinations") {
  RunConfig c;
  c.set("group.g", "4096");
  CHECK(kind_of([&] { c.validate(); }) == ErrorKind::kConfigError);
  RunConfig d;
  d.set("down.heads", "3");
  CHECK(kind_of([&] { d.validate(); }) == ErrorKind::kConfigError);
}

TEST_CASE("config text round trip and precedence") {
  RunConfig c;
  c.set("noise.seed", "99");
  c.set("up.rep_h", "0.125");
  RunConfig back;
  apply_config_text(back, c.to_text(), "dump");
  CHECK(back.to_json() == c.to_json());

  RunConfig file;
  apply_config_text(file, "# comment\n\ngroup.g = 64   # trailing\ntrain.lr=0.01\n", "f.cfg");
  CHECK(file.down.groups == 64);
  CHECK(file.lr == 0.01);
  file.set("group.g", "32");  // a later override wins
  CHECK(file.down.groups == 32);

  try {
    apply_config_text(file, "group.g = 8\nbogus.key = 1\n", "f.cfg");
    FAIL("expected ConfigError");
  } catch (const Error& e) {
    CHECK(e.kind() == ErrorKind::kConfigError);
    const std::string msg = e.what();
    CHECK(msg.find("f.cfg:2") != std::string::npos);
    CHECK(msg.find("ConfigError: f.cfg") != std::string::npos);
  }
  CHECK(kind_of([] { load_config("/nonexistent/duscloud.cfg", RunConfig{}); }) == ErrorKind::kConfigError);
}

TEST_CASE("model hashes follow what shapes each model") {
  const RunConfig base;
  RunConfig up_only = base;
  up_only.set("up.gamma", "2");
  CHECK(up_only.down_hash() == base.down_hash());
  CHECK(up_only.up_hash() != base.up_hash());

  RunConfig no_emd = base;
  no_emd.set("loss.emd", "false");
  CHECK(no_emd.down_hash() == base.down_hash());
  CHECK(no_emd.up_hash() != base.up_hash());

  RunConfig no_cos = base;
  no_cos.set("loss.cos", "false");
  CHECK(no_cos.down_hash() != base.down_hash());
  CHECK(no_cos.up_hash() != base.up_hash());

  RunConfig infer_only = base;
  infer_only.set("noise.infer", "false");
  CHECK(infer_only.down_hash() == base.down_hash());
  CHECK(infer_only.up_hash() == base.up_hash());

  CHECK(fingerprint({{"a", 1}}) == fingerprint({{"a", 1}}));
  CHECK(fingerprint({{"a", 1}}) != fingerprint({{"a", 2}}));
}

TEST_CASE("derived training configs") {
  RunConfig c;
  c.set("train.down_epochs", "7");
  c.set("train.up_epochs", "9");
  c.set("noise.train", "false");
  c.set("loss.rep", "false");
  CHECK(c.down_train().epochs == 7);
  CHECK(!c.down_train().noise_enabled);
  CHECK(c.up_train().epochs == 9);
  CHECK(!c.up_train().loss.repulsion);
  CHECK(c.up_train().loss.rep_h == c.rep_h);
}
