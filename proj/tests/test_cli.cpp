#include "doctest.h"
#include "drmlab/config.hpp"
#include "drmlab/experiment.hpp"

#include <sys/wait.h>

#include <cmath>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <sstream>

using namespace drmlab;
namespace fs = std::filesystem;

namespace {

fs::path scratch(const std::string& name) {
  const fs::path p = fs::temp_directory_path() / ("drmlab_cli_" + name);
  fs::remove_all(p);
  fs::create_directories(p);
  return p;
}

int run_cli(const std::string& args) {
  const std::string cmd = std::string(DRMLAB_CLI) + " " + args + " > /dev/null 2>&1";
  const int status = std::system(cmd.c_str());
  return WIFEXITED(status) ? WEXITSTATUS(status) : -1;
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

std::string small_run(const fs::path& out, const std::string& exp) {
  return "train --run.out=" + out.string() + " --run.experiment=" + exp +
         " --data.n_train=200 --data.n_eval=200 --train.steps=50 --model.hidden=8 --model.feature_dim=8";
}

}  // namespace

TEST_CASE("flags override the config file") {
  const auto dir = scratch("precedence");
  {
    std::ofstream f(dir / "run.cfg");
    f << "# comment\nselect.gamma = 3\ntrain.steps = 10\n";
  }
  RunConfig cfg;
  apply_config_file(cfg, dir / "run.cfg");
  CHECK(cfg.real("select.gamma") == 3.0);
  apply_override(cfg, "--select.gamma=0");
  CHECK(cfg.real("select.gamma") == 0.0);
  CHECK(cfg.integer("train.steps") == 10);
  CHECK(cfg.integer("train.batch") == 64);
}

TEST_CASE("inf parses to infinity") {
  RunConfig cfg;
  cfg.set("select.gamma", "inf");
  CHECK(std::isinf(cfg.real("select.gamma")));
  CHECK(cfg.real("select.gamma") > 0.0);
}

TEST_CASE("unknown keys name the nearest valid key") {
  RunConfig cfg;
  CHECK(nearest_key("selct.gamma") == "select.gamma");
  try {
    apply_override(cfg, "--selct.gamma=1");
    FAIL("expected ConfigError");
  } catch (const ConfigError& e) {
    CHECK(std::string(e.what()).find("select.gamma") != std::string::npos);
    CHECK(std::string(e.what()).find("selct.gamma") != std::string::npos);
  }
  CHECK_THROWS_AS(cfg.set("train.steps", "many"), ConfigError);
  CHECK_THROWS_AS(apply_config_text(cfg, "train.steps 5"), ConfigError);
}

TEST_CASE("resolved config round trips") {
  RunConfig a;
  a.command = "train";
  a.set("select.gamma", "2.5");
  a.set("data.p_d", "0.3,0.1,0.9");
  const std::string text = a.resolved();
  RunConfig b;
  b.command = "train";
  std::string body = text.substr(text.find('\n') + 1);
  apply_config_text(b, body);
  CHECK(b.resolved() == text);
  CHECK(b.reals("data.p_d") == std::vector<double>{0.3, 0.1, 0.9});
}

TEST_CASE("format_real is shortest round trip") {
  CHECK(format_real(0.1) == "0.1");
  CHECK(format_real(1.0) == "1");
  CHECK(format_real(std::numeric_limits<double>::infinity()) == "inf");
  for (const double v : {1.0 / 3.0, 2.0 / 7.0, 1e-300, 123456.789, -0.0625})
    CHECK(std::stod(format_real(v)) == v);
}

TEST_CASE("metrics csv round trip") {
  std::vector<MetricsRow> rows(2);
  rows[0] = {"exp", "counterexample", "o", "drm/none/clf", "PEM", 1.0 / 3.0, true, 7, "r,b", 0.9375, 0.125, 0.0};
  rows[0].split = "main";
  rows[1] = {"exp", "colored", "2", "erm/none/clf", "Uniform", std::numeric_limits<double>::infinity(), false, 8,
             "lodo_2", 2.0 / 3.0, 1e-9, 1.5};
  std::stringstream ss;
  write_metrics_csv(ss, rows);
  const auto back = read_metrics_csv(ss);
  CHECK(back == rows);
  std::istringstream bad("a,b\n");
  CHECK_THROWS_AS(read_metrics_csv(bad), FormatError);
  rows[0].split = "r,b";
  std::ostringstream sink;
  CHECK_THROWS_AS(write_metrics_csv(sink, rows), FormatError);
}

TEST_CASE("cli exit codes") {
  const auto dir = scratch("exit");
  CHECK(run_cli("--list-keys") == 0);
  CHECK(run_cli("train --selct.gamma=1 --run.out=" + dir.string()) == 2);
  CHECK(run_cli("frobnicate") == 2);
  CHECK(run_cli("eval --run.out=" + dir.string() + " --run.experiment=nockpt") == 3);
  CHECK(run_cli("train --config=" + (dir / "missing.cfg").string()) == 5);
}

TEST_CASE("same config and seed give byte-identical metrics") {
  const auto dir = scratch("determinism");
  REQUIRE(run_cli(small_run(dir / "1", "a")) == 0);
  REQUIRE(run_cli(small_run(dir / "2", "a")) == 0);
  const std::string a = slurp(dir / "1" / "a" / "metrics.csv");
  const std::string b = slurp(dir / "2" / "a" / "metrics.csv");
  CHECK(!a.empty());
  CHECK(a == b);
  CHECK(fs::exists(dir / "1" / "a" / "config.resolved"));
  CHECK(fs::exists(dir / "1" / "a" / "model.ckpt"));
  CHECK(fs::exists(dir / "1" / "a" / "trace.csv"));
  std::istringstream in(a);
  const auto rows = read_metrics_csv(in);
  REQUIRE(rows.size() == 2);
  for (const auto& r : rows) {
    CHECK(r.accuracy >= 0.0);
    CHECK(r.accuracy <= 1.0);
    CHECK(r.wall_clock == 0.0);
  }
}

TEST_CASE("eval after train reuses the checkpoint") {
  const auto dir = scratch("eval");
  REQUIRE(run_cli(small_run(dir, "x")) == 0);
  const std::string eval = "eval --run.out=" + dir.string() +
                           " --run.experiment=x --data.n_train=200 --data.n_eval=200 --train.steps=50"
                           " --model.hidden=8 --model.feature_dim=8";
  REQUIRE(run_cli(eval) == 0);
  std::istringstream in(slurp(dir / "x" / "metrics.csv"));
  const auto rows = read_metrics_csv(in);
  CHECK(rows.size() == 2);
}

TEST_CASE("corr matrix shape") {
  RunConfig cfg;
  cfg.set("data.n_train", "200");
  cfg.set("data.n_eval", "200");
  cfg.set("train.steps", "50");
  cfg.set("model.hidden", "8");
  cfg.set("model.feature_dim", "8");
  const auto splits = build_task(cfg, 0);
  REQUIRE(splits.size() == 1);
  const auto tm = train_split(cfg, splits[0], 0, "drm");
  const auto t = split_corr(tm, splits[0]);
  CHECK(t.v.rows() == 4);
  CHECK(t.v.cols() == 2);
  CHECK(t.rows.size() == 4);
  CHECK(t.cols.size() == 2);
  std::ostringstream os;
  write_corr_csv(os, t.v, t.rows, t.cols);
  CHECK(os.str().rfind("domain,head_r,head_b\n", 0) == 0);
}
