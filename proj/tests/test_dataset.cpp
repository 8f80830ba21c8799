#include <doctest.h>

#include <filesystem>
#include <fstream>
#include <set>

#include <opencv2/core.hpp>
#include <opencv2/imgcodecs.hpp>

#include "sleepguard/dataset.hpp"

using namespace sleepguard;
namespace fs = std::filesystem;

namespace {

struct TempDir {
  fs::path path;
  explicit TempDir(const std::string& name) : path(fs::temp_directory_path() / ("sleepguard_" + name)) {
    fs::remove_all(path);
    fs::create_directories(path);
  }
  ~TempDir() { fs::remove_all(path); }
};

void write_gray(const fs::path& p, int rows, int cols, unsigned char value) {
  fs::create_directories(p.parent_path());
  cv::Mat img(rows, cols, CV_8UC1, cv::Scalar(value));
  REQUIRE(cv::imwrite(p.string(), img));
}

std::set<std::string> ids(const Dataset& d) {
  std::set<std::string> out;
  for (const auto& r : d.records) out.insert(r.id);
  return out;
}

}  // namespace

TEST_CASE("load a class-folder directory") {
  TempDir dir("load");
  for (int i = 0; i < 3; ++i) write_gray(dir.path / "open" / ("o" + std::to_string(i) + ".png"), 24, 24, 255);
  for (int i = 0; i < 2; ++i) write_gray(dir.path / "closed" / ("c" + std::to_string(i) + ".pgm"), 30, 20, 40);
  std::ofstream(dir.path / "open" / "notes.txt") << "ignored";

  const Dataset d = load_directory(dir.path);
  REQUIRE(d.size() == 5);
  CHECK(d.label_counts() == std::array<std::size_t, 2>{3, 2});
  for (const auto& r : d.records) {
    CHECK(r.pixels.shape() == Shape{100, 100});
    if (r.label == kOpen) {
      for (double v : r.pixels.data()) CHECK(v == 1.0);
    }
  }
  CHECK(d.records.front().id == "closed/c0.pgm");

  const Dataset again = load_directory(dir.path);
  for (std::size_t i = 0; i < d.size(); ++i) {
    CHECK(again.records[i].id == d.records[i].id);
    CHECK(again.records[i].pixels == d.records[i].pixels);
  }
}

TEST_CASE("color images use luminance weights and gray stays gray") {
  TempDir dir("color");
  fs::create_directories(dir.path / "open");
  fs::create_directories(dir.path / "closed");
  cv::Mat color(4, 4, CV_8UC3, cv::Scalar(10, 200, 50));  // B, G, R
  REQUIRE(cv::imwrite((dir.path / "open" / "c.png").string(), color));
  cv::Mat gray3(4, 4, CV_8UC3, cv::Scalar(77, 77, 77));
  REQUIRE(cv::imwrite((dir.path / "closed" / "g.png").string(), gray3));

  LoadOptions opt;
  opt.height = 4;
  opt.width = 4;
  const Dataset d = load_directory(dir.path, opt);
  const double expected = (299.0 * 50 + 587.0 * 200 + 114.0 * 10) / 1000.0 / 255.0;
  CHECK(d.records[1].pixels[0] == doctest::Approx(expected).epsilon(1e-15));
  CHECK(d.records[0].pixels[0] == 77.0 * (1.0 / 255.0));
}

TEST_CASE("directory errors") {
  TempDir dir("errors");
  CHECK_THROWS_AS(load_directory(dir.path / "missing"), DataError);
  fs::create_directories(dir.path / "open");
  CHECK_THROWS_AS(load_directory(dir.path), DataError);
  fs::create_directories(dir.path / "closed");
  fs::create_directories(dir.path / "maybe");
  CHECK_THROWS_AS(load_directory(dir.path), DataError);
  fs::remove_all(dir.path / "maybe");

  write_gray(dir.path / "open" / "ok.png", 8, 8, 100);
  write_gray(dir.path / "closed" / "ok.png", 8, 8, 100);
  std::ofstream(dir.path / "closed" / "broken.png") << "not an image";
  CHECK_THROWS_AS(load_directory(dir.path), DataError);
  LoadOptions skip;
  skip.skip_undecodable = true;
  CHECK(load_directory(dir.path, skip).size() == 2);
}

TEST_CASE("bilinear resize") {
  const Tensor img({2, 2}, std::vector<double>{0, 1, 1, 0});
  CHECK(resize_bilinear(img, 2, 2) == img);
  const Tensor up = resize_bilinear(img, 4, 4);
  CHECK(up.at({0, 0}) == 0.0);
  CHECK(up.at({0, 3}) == 1.0);
  CHECK(up.at({0, 1}) == doctest::Approx(0.25));
  for (double v : up.data()) {
    CHECK(v >= 0.0);
    CHECK(v <= 1.0);
  }
}

TEST_CASE("stratified split") {
  SyntheticConfig cfg;
  cfg.seed = 4;
  cfg.height = cfg.width = 16;
  const Dataset d = generate_synthetic(cfg, 60);
  const SplitFractions f{0.6, 0.2, 0.2};
  const auto s = split_dataset(d, f, 9);
  CHECK(s.train.size() + s.val.size() + s.test.size() == d.size());
  for (const Dataset* part : {&s.train, &s.val, &s.test}) {
    const auto c = part->label_counts();
    CHECK(c[0] == c[1]);
  }
  std::set<std::string> all;
  for (const Dataset* part : {&s.train, &s.val, &s.test}) {
    for (const auto& id : ids(*part)) CHECK(all.insert(id).second);
  }
  CHECK(all == ids(d));

  const auto again = split_dataset(d, f, 9);
  CHECK(ids(again.train) == ids(s.train));
  CHECK(ids(again.test) == ids(s.test));
  CHECK(ids(split_dataset(d, f, 10).train) != ids(s.train));

  CHECK_THROWS(split_dataset(d, {0.5, 0.2, 0.2}, 1));
  CHECK_THROWS_AS(split_dataset(generate_synthetic(cfg, 2), f, 1), DataError);
}

TEST_CASE("eye-model split sizes") {
  // 4846 records split with the default fractions.
  Dataset d;
  for (int i = 0; i < 4846; ++i) {
    const int label = i < 2423 ? kOpen : kClosed;
    d.records.push_back({std::to_string(100000 + i), Tensor({1, 1}), label});
  }
  const auto s = split_dataset(d, SplitFractions{}, 1);
  CHECK(std::abs(static_cast<long>(s.train.size()) - 3108) <= 1);
  CHECK(std::abs(static_cast<long>(s.val.size()) - 776) <= 1);
  CHECK(std::abs(static_cast<long>(s.test.size()) - 962) <= 1);
}

TEST_CASE("split manifest round trip") {
  TempDir dir("manifest");
  SyntheticConfig cfg;
  cfg.height = cfg.width = 8;
  const Dataset d = generate_synthetic(cfg, 10);
  const auto s = split_dataset(d, {0.6, 0.2, 0.2}, 2);
  write_split_manifest(s, dir.path / "splits.csv");
  const auto back = apply_split_manifest(d, dir.path / "splits.csv");
  CHECK(ids(back.train) == ids(s.train));
  CHECK(ids(back.val) == ids(s.val));
  CHECK(ids(back.test) == ids(s.test));
}

TEST_CASE("synthetic generator") {
  SyntheticConfig cfg;
  cfg.seed = 12;
  const Dataset d = generate_synthetic(cfg, 50);
  CHECK(d.size() == 100);
  CHECK(d.label_counts() == std::array<std::size_t, 2>{50, 50});
  d.validate();
  const Dataset again = generate_synthetic(cfg, 50);
  for (std::size_t i = 0; i < d.size(); ++i) CHECK(d.records[i].pixels == again.records[i].pixels);

  cfg.style = SyntheticStyle::kFace;
  const Dataset faces = generate_synthetic(cfg, 3);
  CHECK(faces.records[0].pixels.shape() == Shape{100, 100});
  CHECK_THROWS(generate_synthetic(cfg, 0));
}

TEST_CASE("synthetic classes are not linearly separable") {
  for (auto style : {SyntheticStyle::kEye, SyntheticStyle::kFace}) {
    SyntheticConfig cfg;
    cfg.style = style;
    cfg.seed = 3;
    const auto s = split_dataset(generate_synthetic(cfg, 300), {0.6, 0.2, 0.2}, 5);
    const double acc = linear_probe_accuracy(s.train, s.test, 1);
    CHECK(acc < 1.0);
  }
}

TEST_CASE("write and reload keeps ids and labels") {
  TempDir dir("write");
  SyntheticConfig cfg;
  cfg.height = cfg.width = 20;
  const Dataset d = generate_synthetic(cfg, 4);
  write_directory(d, dir.path);
  LoadOptions opt;
  opt.height = opt.width = 20;
  const Dataset back = load_directory(dir.path, opt);
  REQUIRE(back.size() == d.size());
  for (std::size_t i = 0; i < d.size(); ++i) {
    CHECK(back.records[i].id == d.records[i].id);
    CHECK(back.records[i].label == d.records[i].label);
    CHECK(max_abs_diff(back.records[i].pixels, d.records[i].pixels) <= 0.5 / 255.0 + 1e-12);
  }
}
