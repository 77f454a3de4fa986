#include "hact/config.hpp"

#include <array>
#include <charconv>
#include <cstdlib>
#include <cstdio>
#include <fstream>
#include <functional>
#include <map>
#include <set>
#include <sstream>

#include "hact/error.hpp"

namespace hact {
namespace {

struct Field {
  std::string key;
  std::string doc;
  std::function<void(ExperimentConfig&, const std::string&)> set;
  std::function<std::string(const ExperimentConfig&)> get;
};

class BadValue : public std::exception {
 public:
  explicit BadValue(std::string expected) : expected_(std::move(expected)) {}
  const std::string& expected() const { return expected_; }

 private:
  std::string expected_;
};

std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string::npos) return "";
  const auto e = s.find_last_not_of(" \t\r");
  return s.substr(b, e - b + 1);
}

std::uint64_t parse_uint(const std::string& s) {
  std::uint64_t v = 0;
  const auto r = std::from_chars(s.data(), s.data() + s.size(), v);
  if (s.empty() || r.ec != std::errc() || r.ptr != s.data() + s.size()) throw BadValue("a non-negative integer");
  return v;
}

double parse_double(const std::string& s) {
  double v = 0.0;
  const auto r = std::from_chars(s.data(), s.data() + s.size(), v);
  if (s.empty() || r.ec != std::errc() || r.ptr != s.data() + s.size()) throw BadValue("a number");
  return v;
}

bool parse_bool(const std::string& s) {
  if (s == "true" || s == "1" || s == "on") return true;
  if (s == "false" || s == "0" || s == "off") return false;
  throw BadValue("true or false");
}

std::vector<std::string> split_list(const std::string& s) {
  std::vector<std::string> out;
  std::stringstream ss(s);
  std::string item;
  while (std::getline(ss, item, ',')) out.push_back(trim(item));
  return out;
}

template <std::size_t N>
std::array<std::size_t, N> parse_uint_array(const std::string& s) {
  const auto items = split_list(s);
  if (items.size() != N) throw BadValue(std::to_string(N) + " comma-separated integers");
  std::array<std::size_t, N> out{};
  for (std::size_t i = 0; i < N; ++i) out[i] = parse_uint(items[i]);
  return out;
}

template <std::size_t N>
std::array<double, N> parse_double_array(const std::string& s) {
  const auto items = split_list(s);
  if (items.size() != N) throw BadValue(std::to_string(N) + " comma-separated numbers");
  std::array<double, N> out{};
  for (std::size_t i = 0; i < N; ++i) out[i] = parse_double(items[i]);
  return out;
}

std::string fmt(std::uint64_t v) { return std::to_string(v); }
std::string fmt(bool v) { return v ? "true" : "false"; }
std::string fmt(double v) {
  char buf[40];
  const auto r = std::to_chars(buf, buf + sizeof buf, v);
  return std::string(buf, r.ptr);
}
template <typename C>
std::string fmt_list(const C& c) {
  std::string out;
  for (const auto& v : c) {
    if (!out.empty()) out += ",";
    out += fmt(v);
  }
  return out;
}

#define HACT_UINT(KEY, DOC, MEMBER)                                                               \
  Field {                                                                                         \
    KEY, DOC, [](ExperimentConfig& c, const std::string& v) { c.MEMBER = parse_uint(v); },        \
        [](const ExperimentConfig& c) { return fmt(static_cast<std::uint64_t>(c.MEMBER)); }       \
  }
#define HACT_DOUBLE(KEY, DOC, MEMBER)                                                             \
  Field {                                                                                         \
    KEY, DOC, [](ExperimentConfig& c, const std::string& v) { c.MEMBER = parse_double(v); },      \
        [](const ExperimentConfig& c) { return fmt(c.MEMBER); }                                   \
  }
#define HACT_BOOL(KEY, DOC, MEMBER)                                                               \
  Field {                                                                                         \
    KEY, DOC, [](ExperimentConfig& c, const std::string& v) { c.MEMBER = parse_bool(v); },        \
        [](const ExperimentConfig& c) { return fmt(c.MEMBER); }                                   \
  }

const std::vector<Field>& fields() {
  static const std::vector<Field> table = {
      HACT_UINT("seed", "experiment seed; every random stream is derived from it", seed),
      HACT_UINT("synthetic.classes", "number of classes (also the width of the last head)", synthetic.classes),
      HACT_UINT("synthetic.superfamilies", "planted superfamilies (at most 4, must divide classes)",
                synthetic.superfamilies),
      HACT_UINT("synthetic.clips_per_class", "clips generated per class", synthetic.clips_per_class),
      HACT_UINT("synthetic.width", "frame width in pixels", synthetic.width),
      HACT_UINT("synthetic.height", "frame height in pixels", synthetic.height),
      HACT_UINT("synthetic.clip_len", "frames per clip", synthetic.clip_len),
      HACT_DOUBLE("synthetic.clutter", "background clutter level in [0,1]", synthetic.clutter),
      HACT_DOUBLE("synthetic.offset", "subject displacement range in [0,1] of the free room", synthetic.offset),
      HACT_UINT("synthetic.joints", "skeleton joints per frame (at least 6)", synthetic.joints),
      HACT_BOOL("preprocess.crop", "crop frames to the skeleton box before resizing", preprocess.crop),
      HACT_DOUBLE("preprocess.margin", "crop margin as a fraction of the box size", preprocess.margin),
      HACT_UINT("preprocess.size", "side of the resized square frames", preprocess.size),
      Field{"preprocess.skeleton", "skeleton used for cropping: 3d (projected) or 2d",
            [](ExperimentConfig& c, const std::string& v) {
              if (v != "3d" && v != "2d") throw BadValue("3d or 2d");
              c.preprocess.skeleton = v;
            },
            [](const ExperimentConfig& c) { return c.preprocess.skeleton; }},
      HACT_DOUBLE("projection.c_x", "horizontal focal coefficient", projection.c_x),
      HACT_DOUBLE("projection.c_y", "vertical focal coefficient", projection.c_y),
      HACT_DOUBLE("projection.b_x", "principal point x", projection.b_x),
      HACT_DOUBLE("projection.b_y", "principal point y", projection.b_y),
      Field{"model.blocks", "residual blocks in each of the four stacks",
            [](ExperimentConfig& c, const std::string& v) { c.model.blocks_per_stack = parse_uint_array<kNumStacks>(v); },
            [](const ExperimentConfig& c) { return fmt_list(c.model.blocks_per_stack); }},
      HACT_UINT("model.base_channels", "channels of the first stack", model.base_channels),
      HACT_BOOL("model.bottleneck", "bottleneck (1x1, 3x3, 1x1) blocks", model.bottleneck),
      HACT_UINT("model.temporal_kernel", "temporal extent of the inflated kernels", model.temporal_kernel),
      Field{"hierarchy.k", "superclasses at heads 1..3, nondecreasing divisors of the class count",
            [](ExperimentConfig& c, const std::string& v) {
              const auto a = parse_uint_array<kNumStacks - 1>(v);
              c.hierarchy.k.assign(a.begin(), a.end());
            },
            [](const ExperimentConfig& c) { return fmt_list(c.hierarchy.k); }},
      HACT_UINT("hierarchy.restarts", "random restarts of the greedy partition", hierarchy.restarts),
      HACT_BOOL("hierarchy.soft", "build the confusion matrix from probabilities instead of counts", hierarchy.soft),
      HACT_DOUBLE("hierarchy.temperature", "softmax temperature of the soft confusion matrix",
                  hierarchy.temperature),
      HACT_UINT("train.epochs", "epochs per training run", train.epochs),
      HACT_DOUBLE("train.learning_rate", "initial Adam step size", train.learning_rate),
      HACT_DOUBLE("train.lr_decay", "divisor applied on a validation-loss plateau", train.lr_decay),
      HACT_UINT("train.patience", "epochs without improvement before the rate drops", train.patience),
      HACT_UINT("train.batch_size", "clips per optimizer step", train.batch_size),
      Field{"train.loss_weights", "weights of the four head losses in the second pass",
            [](ExperimentConfig& c, const std::string& v) { c.train.loss_weights = parse_double_array<kNumStacks>(v); },
            [](const ExperimentConfig& c) { return fmt_list(c.train.loss_weights); }},
      HACT_UINT("train.crop_size", "side of the random (train) or center (test) crop", train.crop_size),
      HACT_UINT("train.frames_per_clip", "frames sampled per clip, one per segment", train.frames_per_clip),
      HACT_UINT("train.eval_samplings", "frame samplings averaged per clip at evaluation", train.eval_samplings),
      HACT_BOOL("train.warm_start", "second pass starts from the first-pass weights", train.warm_start),
      HACT_DOUBLE("train.validation_fraction", "share of the test clips held out for validation",
                  validation_fraction),
      HACT_BOOL("train.stratified_validation", "draw the validation share inside each class",
                stratified_validation),
      HACT_DOUBLE("prune.p", "fraction of the remaining filters pruned per pass", prune.p),
      Field{"prune.variant", "global or per_layer",
            [](ExperimentConfig& c, const std::string& v) {
              try {
                c.prune.variant = parse_variant(v);
              } catch (const ConfigError&) {
                throw BadValue("global or per_layer");
              }
            },
            [](const ExperimentConfig& c) { return std::string(variant_name(c.prune.variant)); }},
      HACT_UINT("prune.max_passes", "upper bound on prune passes", prune.max_passes),
      HACT_UINT("prune.retrain_epochs", "epochs of retraining per pass (0 = train.epochs)", prune.retrain_epochs),
  };
  return table;
}

#undef HACT_UINT
#undef HACT_DOUBLE
#undef HACT_BOOL

const Field* find_field(const std::string& key) {
  for (const auto& f : fields()) {
    if (f.key == key) return &f;
  }
  return nullptr;
}

void assign(ExperimentConfig& cfg, const Field& f, const std::string& value, const std::string& where) {
  try {
    f.set(cfg, value);
  } catch (const BadValue& e) {
    throw ConfigError(where + "field " + f.key + ": expected " + e.expected() + ", got '" + value + "'");
  }
}

}  // namespace

ExperimentConfig::ExperimentConfig() {
  train.learning_rate = 1e-3;
  prune.variant = PruneVariant::kPerLayer;
  finalize();
}

void ExperimentConfig::finalize() {
  auto fail = [](const std::string& key, const std::string& what) {
    throw ConfigError("field " + key + ": " + what);
  };
  synthetic.seed = seed;
  train.seed = train_seed();
  if (hierarchy.k.size() != kNumStacks - 1) fail("hierarchy.k", "expected 3 values");
  for (std::size_t l = 0; l + 1 < kNumStacks; ++l) model.head_classes[l] = hierarchy.k[l];
  model.head_classes[kNumStacks - 1] = synthetic.classes;
  model.in_channels = 1;
  try {
    synthetic.validate();
  } catch (const ConfigError& e) {
    fail("synthetic", e.what());
  }
  for (std::size_t l = 0; l < kNumStacks; ++l) {
    const std::size_t k = model.head_classes[l];
    if (k == 0 || synthetic.classes % k != 0) fail("hierarchy.k", "each value must divide synthetic.classes");
    if (l > 0 && k < model.head_classes[l - 1]) fail("hierarchy.k", "values must be nondecreasing");
  }
  try {
    model.validate();
  } catch (const ConfigError& e) {
    fail("model", e.what());
  }
  try {
    train.validate();
  } catch (const ConfigError& e) {
    fail("train", e.what());
  }
  try {
    projection.validate();
  } catch (const Error& e) {
    fail("projection", e.what());
  }
  if (!(preprocess.margin >= 0.0)) fail("preprocess.margin", "must be non-negative");
  if (preprocess.size < train.crop_size) fail("preprocess.size", "must be at least train.crop_size");
  if (hierarchy.restarts == 0) fail("hierarchy.restarts", "must be positive");
  if (!(hierarchy.temperature > 0.0)) fail("hierarchy.temperature", "must be positive");
  if (!(validation_fraction > 0.0 && validation_fraction < 1.0)) {
    fail("train.validation_fraction", "must lie in (0,1)");
  }
  if (!(prune.p > 0.0 && prune.p < 1.0)) fail("prune.p", "must lie in (0,1)");
  if (prune.max_passes == 0) fail("prune.max_passes", "must be positive");
}

std::vector<ConfigKey> config_keys() {
  std::vector<ConfigKey> out;
  for (const auto& f : fields()) out.push_back({f.key, f.doc});
  return out;
}

ExperimentConfig parse_config(const std::string& text, const std::string& source) {
  ExperimentConfig cfg;
  std::set<std::string> seen;
  std::istringstream in(text);
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    const std::string where = source + ":" + std::to_string(lineno) + ": ";
    if (const auto hash = line.find('#'); hash != std::string::npos) line.resize(hash);
    line = trim(line);
    if (line.empty()) continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos) throw ConfigError(where + "expected 'key = value', got '" + line + "'");
    const std::string key = trim(line.substr(0, eq));
    const std::string value = trim(line.substr(eq + 1));
    const Field* f = find_field(key);
    if (f == nullptr) throw ConfigError(where + "unknown key '" + key + "'");
    if (!seen.insert(key).second) throw ConfigError(where + "field " + key + ": set more than once");
    assign(cfg, *f, value, where);
  }
  try {
    cfg.finalize();
  } catch (const ConfigError& e) {
    throw ConfigError(source + ": " + e.what());
  }
  return cfg;
}

ExperimentConfig load_config(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot read config file " + path);
  std::stringstream ss;
  ss << in.rdbuf();
  return parse_config(ss.str(), path);
}

void set_config_value(ExperimentConfig& cfg, const std::string& key, const std::string& value) {
  const Field* f = find_field(key);
  if (f == nullptr) throw ConfigError("unknown key '" + key + "'");
  assign(cfg, *f, value, "");
  cfg.finalize();
}

std::string config_to_text(const ExperimentConfig& cfg) {
  std::string out;
  for (const auto& f : fields()) out += f.key + " = " + f.get(cfg) + "\n";
  return out;
}

}  // namespace hact
