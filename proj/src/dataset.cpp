#include "sleepguard/dataset.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <map>
#include <set>
#include <sstream>

#include "sleepguard/nn.hpp"
#include "sleepguard/parallel.hpp"
#include "sleepguard/rng.hpp"

namespace fs = std::filesystem;

namespace sleepguard {

std::string label_name(int label) {
  if (label == kOpen) return "open";
  if (label == kClosed) return "closed";
  throw std::invalid_argument("label must be 0 (open) or 1 (closed)");
}

int parse_label(const std::string& name) {
  if (name == "open" || name == "0") return kOpen;
  if (name == "closed" || name == "1") return kClosed;
  throw DataError("unknown label '" + name + "'");
}

std::array<std::size_t, 2> Dataset::label_counts() const {
  std::array<std::size_t, 2> counts{0, 0};
  for (const auto& r : records) ++counts.at(static_cast<std::size_t>(r.label));
  return counts;
}

std::vector<const Tensor*> Dataset::inputs() const {
  std::vector<const Tensor*> out;
  out.reserve(records.size());
  for (const auto& r : records) out.push_back(&r.pixels);
  return out;
}

std::vector<int> Dataset::labels() const {
  std::vector<int> out;
  out.reserve(records.size());
  for (const auto& r : records) out.push_back(r.label);
  return out;
}

void Dataset::validate() const {
  std::set<std::string> ids;
  for (const auto& r : records) {
    if (!ids.insert(r.id).second) throw DataError("duplicate record id " + r.id);
    if (r.label != kOpen && r.label != kClosed) throw DataError("record " + r.id + " has a non-binary label");
    if (r.pixels.rank() != 2) throw DataError("record " + r.id + " is not an (H,W) image");
    if (r.pixels.shape() != records.front().pixels.shape()) {
      throw DataError("record " + r.id + " has shape " + shape_str(r.pixels.shape()) + ", expected " +
                      shape_str(records.front().pixels.shape()));
    }
    for (double v : r.pixels.data()) {
      if (!(v >= 0.0 && v <= 1.0)) throw DataError("record " + r.id + " has a pixel outside [0,1]");
    }
  }
}

namespace {

bool is_image_file(const fs::path& p) {
  std::string ext = p.extension().string();
  std::transform(ext.begin(), ext.end(), ext.begin(), [](unsigned char c) { return std::tolower(c); });
  return ext == ".png" || ext == ".pgm" || ext == ".bmp" || ext == ".jpg" || ext == ".jpeg";
}

}  // namespace

Dataset load_directory(const fs::path& root, const LoadOptions& options) {
  if (!fs::is_directory(root)) throw DataError("dataset directory " + root.string() + " does not exist");
  std::vector<std::string> classes;
  for (const auto& entry : fs::directory_iterator(root)) {
    if (entry.is_directory()) classes.push_back(entry.path().filename().string());
  }
  std::sort(classes.begin(), classes.end());
  if (classes != std::vector<std::string>{"closed", "open"}) {
    std::string found;
    for (const auto& c : classes) found += (found.empty() ? "" : ",") + c;
    throw DataError(root.string() + " must contain exactly the class folders open/ and closed/, found " +
                    std::to_string(classes.size()) + " [" + found + "]");
  }

  struct Item {
    std::string id;
    fs::path path;
    int label;
  };
  std::vector<Item> items;
  for (const auto& cls : classes) {
    for (const auto& entry : fs::directory_iterator(root / cls)) {
      if (!entry.is_regular_file() || !is_image_file(entry.path())) continue;
      items.push_back({cls + "/" + entry.path().filename().string(), entry.path(), parse_label(cls)});
    }
  }
  std::sort(items.begin(), items.end(), [](const Item& a, const Item& b) { return a.id < b.id; });

  std::vector<ImageRecord> loaded(items.size());
  std::vector<std::string> errors(items.size());
  parallel_for(items.size(), options.threads, [&](std::size_t i) {
    try {
      Tensor raw = read_luminance(items[i].path);
      Tensor resized = resize_bilinear(raw, options.height, options.width);
      loaded[i] = {items[i].id, scale(resized, options.rescale), items[i].label};
    } catch (const DataError& e) {
      errors[i] = e.what();
    }
  });

  Dataset data;
  data.provenance = "directory:" + root.string() + " resize=bilinear:" + std::to_string(options.height) +
                    "x" + std::to_string(options.width);
  for (std::size_t i = 0; i < items.size(); ++i) {
    if (!errors[i].empty()) {
      if (options.skip_undecodable) continue;
      throw DataError(errors[i]);
    }
    data.records.push_back(std::move(loaded[i]));
  }
  data.validate();
  return data;
}

void write_directory(const Dataset& data, const fs::path& root) {
  std::set<fs::path> written;
  for (const auto& r : data.records) {
    fs::path target = root / fs::path(r.id).replace_extension(".png");
    if (!written.insert(target).second) throw DataError("two records map to file " + target.string());
    write_png(target, r.pixels);
  }
  fs::create_directories(root / "open");
  fs::create_directories(root / "closed");
}

// ---------------------------------------------------------------------------

namespace {

void sort_by_id(Dataset& d) {
  std::sort(d.records.begin(), d.records.end(),
            [](const ImageRecord& a, const ImageRecord& b) { return a.id < b.id; });
}

}  // namespace

DatasetSplits split_dataset(const Dataset& data, const SplitFractions& fractions, std::uint64_t seed) {
  const double total = fractions.train + fractions.val + fractions.test;
  if (!(fractions.train > 0 && fractions.val > 0 && fractions.test > 0) || std::abs(total - 1.0) > 1e-9) {
    throw std::invalid_argument("split fractions must be positive and sum to 1");
  }
  DatasetSplits out;
  out.train.split = "train";
  out.val.split = "val";
  out.test.split = "test";
  for (int label : {kOpen, kClosed}) {
    std::vector<std::size_t> idx;
    for (std::size_t i = 0; i < data.records.size(); ++i) {
      if (data.records[i].label == label) idx.push_back(i);
    }
    Rng rng = Rng::stream(seed, static_cast<std::uint64_t>(label));
    rng.shuffle(idx.begin(), idx.end());
    const auto n = static_cast<double>(idx.size());
    const auto n_train = static_cast<std::size_t>(std::llround(fractions.train * n));
    const auto n_val = std::min(idx.size() - std::min(n_train, idx.size()),
                                static_cast<std::size_t>(std::llround(fractions.val * n)));
    const std::size_t n_test = idx.size() - std::min(idx.size(), n_train + n_val);
    if (n_train == 0 || n_val == 0 || n_test == 0) {
      throw DataError("split leaves a partition without any '" + label_name(label) + "' samples (" +
                      std::to_string(idx.size()) + " available)");
    }
    for (std::size_t k = 0; k < idx.size(); ++k) {
      Dataset& dst = k < n_train ? out.train : (k < n_train + n_val ? out.val : out.test);
      dst.records.push_back(data.records[idx[k]]);
    }
  }
  for (Dataset* d : {&out.train, &out.val, &out.test}) {
    sort_by_id(*d);
    d->provenance = data.provenance + " split=" + d->split + " seed=" + std::to_string(seed);
  }
  return out;
}

void write_split_manifest(const DatasetSplits& splits, const fs::path& path) {
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  std::ofstream out(path);
  if (!out) throw DataError("cannot write split manifest " + path.string());
  out << "id,split,label\n";
  for (const Dataset* d : {&splits.train, &splits.val, &splits.test}) {
    for (const auto& r : d->records) out << r.id << ',' << d->split << ',' << label_name(r.label) << '\n';
  }
}

DatasetSplits apply_split_manifest(const Dataset& data, const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw DataError("cannot read split manifest " + path.string());
  std::map<std::string, const ImageRecord*> by_id;
  for (const auto& r : data.records) by_id[r.id] = &r;
  DatasetSplits out;
  out.train.split = "train";
  out.val.split = "val";
  out.test.split = "test";
  std::string line;
  std::getline(in, line);
  if (line != "id,split,label") throw DataError(path.string() + " is not a split manifest");
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    std::stringstream ss(line);
    std::string id, split, label;
    std::getline(ss, id, ',');
    std::getline(ss, split, ',');
    std::getline(ss, label, ',');
    auto it = by_id.find(id);
    if (it == by_id.end()) throw DataError("manifest id " + id + " is not in the dataset");
    if (parse_label(label) != it->second->label) throw DataError("manifest label mismatch for " + id);
    Dataset* dst = split == "train" ? &out.train : split == "val" ? &out.val : split == "test" ? &out.test : nullptr;
    if (!dst) throw DataError("unknown split '" + split + "' in " + path.string());
    dst->records.push_back(*it->second);
  }
  for (Dataset* d : {&out.train, &out.val, &out.test}) {
    sort_by_id(*d);
    d->provenance = data.provenance + " split=" + d->split + " manifest=" + path.string();
  }
  return out;
}

// ---------------------------------------------------------------------------

std::string synthetic_style_name(SyntheticStyle style) {
  return style == SyntheticStyle::kEye ? "eye" : "face";
}

SyntheticStyle parse_synthetic_style(const std::string& name) {
  if (name == "eye") return SyntheticStyle::kEye;
  if (name == "face") return SyntheticStyle::kFace;
  throw std::invalid_argument("unknown synthetic style '" + name + "' (expected eye or face)");
}

namespace {

struct Canvas {
  std::size_t h, w;
  std::vector<double> px;

  Canvas(std::size_t height, std::size_t width, double fill) : h(height), w(width), px(height * width, fill) {}

  // Blends `value` in with per-pixel coverage from cover(x, y) in [0, 1].
  template <typename F>
  void paint(double value, F cover) {
    for (std::size_t i = 0; i < h; ++i) {
      for (std::size_t j = 0; j < w; ++j) {
        const double c = cover(static_cast<double>(j), static_cast<double>(i));
        if (c > 0.0) px[i * w + j] += (value - px[i * w + j]) * std::min(c, 1.0);
      }
    }
  }
};

// Antialiased coverage from a signed distance in pixels (negative inside).
double coverage(double signed_distance) { return std::clamp(0.5 - signed_distance, 0.0, 1.0); }

double ellipse_distance(double x, double y, double cx, double cy, double a, double b) {
  const double dx = (x - cx) / a, dy = (y - cy) / b;
  return (std::sqrt(dx * dx + dy * dy) - 1.0) * std::min(a, b);
}

struct EyeGeometry {
  double cx, cy;  // center
  double a;       // half width
  double b;       // half height when open
};

void draw_eye(Canvas& c, const EyeGeometry& g, bool open, double skin, Rng& rng) {
  // Brow above the eye in both classes.
  const double brow_y = g.cy - g.b * rng.uniform(1.7, 2.4);
  const double brow_t = std::max(0.6, g.a * rng.uniform(0.10, 0.18));
  const double brow_tone = skin * rng.uniform(0.35, 0.75);
  const double brow_tilt = rng.uniform(-0.15, 0.15);
  c.paint(brow_tone, [&](double x, double y) {
    const double u = (x - g.cx) / (1.15 * g.a);
    if (std::abs(u) > 1.0) return 0.0;
    const double centre = brow_y - 0.25 * g.b * (1.0 - u * u) + brow_tilt * (x - g.cx);
    return coverage(std::abs(y - centre) - brow_t);
  });

  if (open) {
    const double sclera = std::min(1.0, skin + rng.uniform(0.18, 0.35));
    c.paint(sclera, [&](double x, double y) { return coverage(ellipse_distance(x, y, g.cx, g.cy, g.a, g.b)); });
    const double r = g.b * rng.uniform(0.7, 0.95);
    const double ix = g.cx + g.a * rng.uniform(-0.35, 0.35);
    const double iy = g.cy + g.b * rng.uniform(-0.1, 0.1);
    const double iris = rng.uniform(0.05, 0.3);
    auto inside_eye = [&](double x, double y) { return coverage(ellipse_distance(x, y, g.cx, g.cy, g.a, g.b)); };
    c.paint(iris, [&](double x, double y) {
      return coverage(std::hypot(x - ix, y - iy) - r) * inside_eye(x, y);
    });
    c.paint(0.02, [&](double x, double y) {
      return coverage(std::hypot(x - ix, y - iy) - 0.45 * r) * inside_eye(x, y);
    });
    const double lid = rng.uniform(0.05, 0.25);
    const double lid_t = std::max(0.35, 0.12 * g.b);
    c.paint(lid, [&](double x, double y) {
      if (y > g.cy) return 0.0;
      return coverage(std::abs(ellipse_distance(x, y, g.cx, g.cy, g.a, g.b)) - lid_t);
    });
  } else {
    const double sag = g.b * rng.uniform(-0.2, 0.5);
    const double line_t = std::max(0.35, g.b * rng.uniform(0.1, 0.22));
    const double tone = rng.uniform(0.05, 0.3);
    c.paint(tone, [&](double x, double y) {
      const double u = (x - g.cx) / g.a;
      if (std::abs(u) > 1.05) return 0.0;
      const double centre = g.cy + sag * (1.0 - u * u);
      return coverage(std::abs(y - centre) - line_t * (1.0 - 0.5 * u * u));
    });
    // Faint crease above the closed lid.
    const double crease = skin * rng.uniform(0.75, 0.95);
    c.paint(crease, [&](double x, double y) {
      const double u = (x - g.cx) / g.a;
      if (std::abs(u) > 1.0) return 0.0;
      const double centre = g.cy - 0.8 * g.b * (1.0 - u * u);
      return 0.6 * coverage(std::abs(y - centre) - 0.5 * line_t);
    });
  }
}

// Smooth skin with a random linear shading gradient.
Canvas skin_canvas(std::size_t h, std::size_t w, double skin, Rng& rng) {
  Canvas c(h, w, skin);
  const double angle = rng.uniform(0.0, 6.283185307179586);
  const double amp = rng.uniform(0.0, 0.15);
  const double gx = std::cos(angle) * amp / static_cast<double>(w);
  const double gy = std::sin(angle) * amp / static_cast<double>(h);
  for (std::size_t i = 0; i < h; ++i) {
    for (std::size_t j = 0; j < w; ++j) {
      c.px[i * w + j] += gx * (static_cast<double>(j) - 0.5 * static_cast<double>(w)) +
                         gy * (static_cast<double>(i) - 0.5 * static_cast<double>(h));
    }
  }
  return c;
}

Tensor finish(Canvas& c, double noise, Rng& rng) {
  for (double& v : c.px) v = std::clamp(v + noise * rng.normal(), 0.0, 1.0);
  return Tensor({c.h, c.w}, std::move(c.px));
}

Tensor render_eye_patch(const SyntheticConfig& cfg, bool open, Rng& rng) {
  const auto s = static_cast<double>(cfg.source_size);
  const double skin = rng.uniform(0.35, 0.75);
  Canvas c = skin_canvas(cfg.source_size, cfg.source_size, skin, rng);
  EyeGeometry g;
  g.a = s * rng.uniform(0.27, 0.4);
  g.b = g.a * rng.uniform(0.45, 0.65);
  g.cx = 0.5 * (s - 1) + s * rng.uniform(-0.1, 0.1);
  g.cy = 0.5 * (s - 1) + s * rng.uniform(-0.06, 0.14);
  draw_eye(c, g, open, skin, rng);
  Tensor small = finish(c, cfg.noise, rng);
  return resize_bilinear(small, cfg.height, cfg.width);
}

Tensor render_face(const SyntheticConfig& cfg, bool open, Rng& rng) {
  const auto h = static_cast<double>(cfg.height), w = static_cast<double>(cfg.width);
  const double background = rng.uniform(0.1, 0.9);
  Canvas c(cfg.height, cfg.width, background);
  const double skin = rng.uniform(0.4, 0.8);
  const double fcx = 0.5 * w + w * rng.uniform(-0.05, 0.05);
  const double fcy = 0.52 * h + h * rng.uniform(-0.04, 0.04);
  const double fa = w * rng.uniform(0.32, 0.4), fb = h * rng.uniform(0.42, 0.48);
  c.paint(skin, [&](double x, double y) { return coverage(ellipse_distance(x, y, fcx, fcy, fa, fb)); });
  const double hair = rng.uniform(0.02, 0.35);
  const double hairline = fcy - fb * rng.uniform(0.55, 0.75);
  c.paint(hair, [&](double x, double y) {
    return y < hairline ? coverage(ellipse_distance(x, y, fcx, fcy, fa * 1.05, fb * 1.05)) : 0.0;
  });

  const double scale = w / 100.0;
  const double eye_y = fcy - fb * rng.uniform(0.12, 0.25);
  const double spread = fa * rng.uniform(0.38, 0.5);
  const double a = scale * rng.uniform(6.0, 8.5);
  const double b = a * rng.uniform(0.45, 0.65);
  for (double side : {-1.0, 1.0}) {
    EyeGeometry g{fcx + side * spread + scale * rng.uniform(-1.0, 1.0), eye_y + scale * rng.uniform(-1.0, 1.0), a, b};
    draw_eye(c, g, open, skin, rng);
  }
  const double nose_tone = skin * rng.uniform(0.6, 0.85);
  const double nose_len = fb * rng.uniform(0.2, 0.3);
  c.paint(nose_tone, [&](double x, double y) {
    if (y < eye_y + b || y > eye_y + b + nose_len) return 0.0;
    return coverage(std::abs(x - fcx) - 0.8 * scale);
  });
  const double mouth_y = fcy + fb * rng.uniform(0.4, 0.55);
  const double mouth_w = fa * rng.uniform(0.3, 0.45);
  const double mouth_curve = scale * rng.uniform(-3.0, 3.0);
  const double mouth_tone = rng.uniform(0.1, 0.4);
  c.paint(mouth_tone, [&](double x, double y) {
    const double u = (x - fcx) / mouth_w;
    if (std::abs(u) > 1.0) return 0.0;
    return coverage(std::abs(y - (mouth_y + mouth_curve * (1.0 - u * u))) - 1.2 * scale);
  });
  return finish(c, cfg.noise, rng);
}

}  // namespace

Dataset generate_synthetic(const SyntheticConfig& cfg, std::size_t n_per_class) {
  if (n_per_class == 0) throw std::invalid_argument("synthetic dataset needs at least one sample per class");
  if (cfg.height == 0 || cfg.width == 0 || cfg.source_size < 8) throw std::invalid_argument("synthetic image size too small");
  if (!(cfg.noise >= 0.0)) throw std::invalid_argument("synthetic noise must be non-negative");
  Dataset data;
  data.provenance = "synthetic:" + synthetic_style_name(cfg.style) + " seed=" + std::to_string(cfg.seed) +
                    " noise=" + std::to_string(cfg.noise) + " size=" + std::to_string(cfg.height) + "x" +
                    std::to_string(cfg.width) +
                    (cfg.style == SyntheticStyle::kEye
                         ? " source=" + std::to_string(cfg.source_size) + " resize=bilinear"
                         : std::string());
  data.records.resize(2 * n_per_class);
  for (std::size_t k = 0; k < 2 * n_per_class; ++k) {
    const int label = k < n_per_class ? kOpen : kClosed;
    const std::size_t index = k % n_per_class;
    Rng rng = Rng::stream(cfg.seed, k);
    char name[32];
    std::snprintf(name, sizeof name, "%06zu.png", index);
    Tensor img = cfg.style == SyntheticStyle::kEye ? render_eye_patch(cfg, label == kOpen, rng)
                                                   : render_face(cfg, label == kOpen, rng);
    data.records[k] = {label_name(label) + "/" + name, std::move(img), label};
  }
  sort_by_id(data);
  return data;
}

double linear_probe_accuracy(const Dataset& train, const Dataset& test, std::uint64_t seed, std::size_t epochs) {
  if (train.empty() || test.empty()) throw DataError("linear probe needs non-empty train and test sets");
  const Shape img = train.records.front().pixels.shape();
  const std::size_t n_in = shape_numel(img);
  Model probe({img[0], img[1]}, {LayerSpec::flatten(), LayerSpec::dense(n_in, 1), LayerSpec::act(Activation::kSigmoid)},
              seed);
  probe.zero_parameters();
  AdamState adam;
  const auto inputs = train.inputs();
  const auto labels = train.labels();
  std::vector<std::size_t> order(train.size());
  for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
  constexpr std::size_t kBatch = 32;
  for (std::size_t e = 0; e < epochs; ++e) {
    Rng rng = Rng::stream(seed, e);
    rng.shuffle(order.begin(), order.end());
    for (std::size_t start = 0; start < order.size(); start += kBatch) {
      std::vector<const Tensor*> xs;
      std::vector<int> ys;
      for (std::size_t k = start; k < std::min(order.size(), start + kBatch); ++k) {
        xs.push_back(inputs[order[k]]);
        ys.push_back(labels[order[k]]);
      }
      auto g = batch_gradient(probe, xs, ys);
      adam_step(adam, probe, g.params);
    }
  }
  std::size_t correct = 0;
  const auto preds = predict_batch(probe, test.inputs());
  for (std::size_t i = 0; i < preds.size(); ++i) {
    correct += static_cast<std::size_t>((preds[i] >= 0.5 ? kClosed : kOpen) == test.records[i].label);
  }
  return static_cast<double>(correct) / static_cast<double>(test.size());
}

}  // namespace sleepguard
