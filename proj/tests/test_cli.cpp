#include <doctest.h>

#include <algorithm>
#include <filesystem>
#include <fstream>
#include <sstream>

#include <json.hpp>

#include "sleepguard/cli.hpp"
#include "sleepguard/harness.hpp"

using namespace sleepguard;
namespace fs = std::filesystem;

namespace {

struct Run {
  int code;
  std::string out, err;
};

Run run(std::vector<std::string> args) {
  std::ostringstream out, err;
  const int code = cli::parse_and_dispatch(args, out, err);
  return {code, out.str(), err.str()};
}

fs::path temp_dir(const std::string& name) {
  const auto p = fs::temp_directory_path() / ("sleepguard_cli_" + name);
  fs::remove_all(p);
  return p;
}

nlohmann::json read_json(const fs::path& p) {
  std::ifstream in(p);
  return nlohmann::json::parse(in);
}

}  // namespace

TEST_CASE("synth, train, attack and evaluate pipeline") {
  const auto root = temp_dir("pipeline");
  const auto d = (root / "d").string(), m = (root / "m").string();
  REQUIRE(run({"synth", "--n", "60", "--seed", "3", "--out", d}).code == 0);
  CHECK(fs::is_directory(root / "d" / "train" / "closed"));
  CHECK(fs::exists(root / "d" / "splits.csv"));

  const auto t = run({"train", "--data", d, "--epochs", "1", "--seed", "4", "--out", m});
  REQUIRE(t.code == 0);
  CHECK(fs::exists(root / "m" / "model.rsnm"));
  CHECK(fs::exists(root / "m" / "history.csv"));
  const auto manifest = read_json(root / "m" / "manifest.json");
  CHECK(manifest.at("status") == "complete");
  CHECK(manifest.at("config").at("epochs") == 1);
  CHECK(manifest.at("artifacts").contains("model.rsnm"));

  const auto a = run({"attack", "--model", m, "--data", d + "/test", "--attack", "fgsm", "--epsilon", "0", "--out",
                      (root / "a").string()});
  REQUIRE(a.code == 0);
  CHECK(a.out.find("success_rate=0 ") == 0);
  CHECK(read_json(root / "a" / "metrics.json").at("success_rate") == 0.0);
  CHECK(fs::exists(root / "a" / "attack_manifest.csv"));
  CHECK(fs::is_directory(root / "a" / "adversarial" / "open"));

  const auto e = run({"evaluate", "--model", m + "/model.rsnm", "--data", d + "/test"});
  REQUIRE(e.code == 0);
  CHECK(nlohmann::json::parse(e.out).contains("f1"));

  const auto adv = run({"adv-train", "--model", m, "--data", d, "--attack", "fgsm", "--adv-epochs", "1", "--out",
                        (root / "adv").string()});
  REQUIRE(adv.code == 0);
  CHECK(adv.out.find("training_set_size=") == 0);
  CHECK(read_json(root / "adv" / "metrics.json").contains("after"));

  const auto aug = run({"augment", "--data", d + "/val", "--copies", "2", "--out", (root / "aug").string()});
  REQUIRE(aug.code == 0);
  CHECK(fs::exists(root / "aug" / "augment_manifest.csv"));
  fs::remove_all(root);
}

TEST_CASE("flags override config files") {
  const auto root = temp_dir("precedence");
  fs::create_directories(root);
  {
    std::ofstream f(root / "c.json");
    f << R"({"epochs": 7, "epsilon": 0.3, "data": "synthetic", "train_size": 8, "val_size": 4, "test_size": 4})";
  }
  const auto r = run({"train", "--config", (root / "c.json").string(), "--epochs", "1", "--out", (root / "o").string()});
  REQUIRE(r.code == 0);
  const auto cfg = read_json(root / "o" / "manifest.json").at("config");
  CHECK(cfg.at("epochs") == 1);
  CHECK(cfg.at("epsilon") == 0.3);
  fs::remove_all(root);
}

TEST_CASE("exit codes") {
  const auto root = temp_dir("codes");
  fs::create_directories(root);
  const auto out = (root / "o").string();
  CHECK(run({}).code == cli::kUsage);
  CHECK(run({"train", "--out", out, "--no-such-flag"}).code == cli::kUsage);
  CHECK(run({"frobnicate"}).code == cli::kUsage);
  CHECK(run({"train", "--out", out, "--epochs", "many"}).code == cli::kUsage);
  CHECK(run({"train", "--data", "/nonexistent/sleepguard", "--out", out}).code == cli::kData);
  CHECK(run({"train", "--config", "/nonexistent/c.json", "--out", out}).code == cli::kConfig);
  {
    std::ofstream f(root / "bad.json");
    f << "{ not json";
  }
  CHECK(run({"train", "--config", (root / "bad.json").string(), "--out", out}).code == cli::kConfig);
  {
    std::ofstream f(root / "unknown.json");
    f << R"({"epsilonn": 1})";
  }
  CHECK(run({"train", "--config", (root / "unknown.json").string(), "--out", out}).code == cli::kUsage);
  CHECK(run({"evaluate", "--model", "/nonexistent/m", "--data", "/tmp"}).code == cli::kData);

  const auto diverge = run({"train", "--data", "synthetic", "--lr", "1e300", "--epochs", "2", "--out", out,
                            "--config", (root / "tiny.json").string()});
  CHECK(diverge.code == cli::kConfig);
  {
    std::ofstream f(root / "tiny.json");
    f << R"({"train_size": 8, "val_size": 4, "test_size": 4})";
  }
  const auto d2 = run({"train", "--data", "synthetic", "--lr", "1e300", "--epochs", "2", "--out", out, "--config",
                       (root / "tiny.json").string()});
  CHECK(d2.code == cli::kNumeric);
  CHECK(d2.err.find("error[numeric]: ") == 0);
  CHECK(std::count(d2.err.begin(), d2.err.end(), '\n') == 1);

  const auto help = run({"attack", "--help"});
  CHECK(help.code == 0);
  CHECK(help.out.find("normalized pixel units") != std::string::npos);
  fs::remove_all(root);
}

TEST_CASE("grid and report commands") {
  const auto root = temp_dir("grid");
  fs::create_directories(root);
  {
    std::ofstream f(root / "g.json");
    f << R"({"defaults": {"train_size": 8, "val_size": 4, "test_size": 4, "epochs": 1, "adv_epochs": 1,
             "data": "data/not-here"},
             "configs": [{"name": "b", "model_tag": "Eye"}, {"name": "f", "model_tag": "Eye", "attack": "fgsm"}]})";
  }
  const auto g = run({"grid", "--config", (root / "g.json").string(), "--synthetic", "--out", (root / "o").string()});
  REQUIRE(g.code == 0);
  CHECK(g.out.find("| Model | D.A | Config") == 0);
  const auto rep = parse_report_csv([&] {
    std::ifstream in(root / "o" / "report.csv");
    std::stringstream s;
    s << in.rdbuf();
    return s.str();
  }());
  REQUIRE(rep.rows.size() == 2);
  CHECK(rep.rows[0].status == "ok");
  CHECK(rep.rows[1].after);

  const auto r = run({"report", (root / "o" / "report.csv").string()});
  CHECK(r.code == 0);
  CHECK(r.out == g.out);
  fs::remove_all(root);
}
