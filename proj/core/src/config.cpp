#include "uapguard/config.hpp"

#include <boost/property_tree/ini_parser.hpp>
#include <boost/property_tree/ptree.hpp>

#include <charconv>
#include <fstream>
#include <functional>
#include <map>
#include <set>
#include <sstream>
#include <stdexcept>

#include "uapguard/binary_io.hpp"

namespace uapguard {

namespace {

std::string trim(std::string_view s) {
  const auto first = s.find_first_not_of(" \t\r\n");
  if (first == std::string_view::npos) return {};
  const auto last = s.find_last_not_of(" \t\r\n");
  return std::string(s.substr(first, last - first + 1));
}

[[noreturn]] void bad_value(std::string_view key, std::string_view value, std::string_view expected) {
  throw std::invalid_argument("config: " + std::string(key) + ": expected " + std::string(expected) + ", got '" +
                              std::string(value) + "'");
}

template <typename T>
T parse_number(std::string_view key, std::string_view raw) {
  const std::string s = trim(raw);
  T v{};
  const auto [ptr, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
  if (ec != std::errc{} || ptr != s.data() + s.size() || s.empty()) bad_value(key, raw, "a number");
  return v;
}

bool parse_bool(std::string_view key, std::string_view raw) {
  const std::string s = trim(raw);
  if (s == "true" || s == "1" || s == "yes" || s == "on") return true;
  if (s == "false" || s == "0" || s == "no" || s == "off") return false;
  bad_value(key, raw, "a boolean");
}

template <typename T>
std::string format_number(T v) {
  char buf[64];
  const auto [ptr, ec] = std::to_chars(buf, buf + sizeof buf, v);
  return std::string(buf, ptr);
}

std::vector<std::string> split_list(std::string_view raw) {
  std::vector<std::string> out;
  std::string s = trim(raw);
  if (s.empty()) return out;
  std::size_t start = 0;
  while (true) {
    const auto comma = s.find(',', start);
    out.push_back(trim(std::string_view(s).substr(start, comma == std::string::npos ? std::string::npos : comma - start)));
    if (comma == std::string::npos) break;
    start = comma + 1;
  }
  return out;
}

template <typename T, typename F>
std::string join(const std::vector<T>& values, F&& fmt) {
  std::string out;
  for (std::size_t i = 0; i < values.size(); ++i) {
    if (i) out += ", ";
    out += fmt(values[i]);
  }
  return out;
}

// Wraps a parse function so enum/string conversion errors name the key.
template <typename F>
auto keyed(std::string_view key, std::string_view raw, F&& parse) {
  try {
    return parse(trim(raw));
  } catch (const std::invalid_argument& e) {
    throw std::invalid_argument("config: " + std::string(key) + ": " + e.what());
  }
}

struct Field {
  std::string section;
  std::string key;
  std::function<std::string(const ExperimentConfig&)> get;
  std::function<void(ExperimentConfig&, std::string_view, std::string_view)> set;
};

template <typename T>
Field number_field(std::string section, std::string key, std::function<T&(ExperimentConfig&)> ref) {
  return Field{std::move(section), std::move(key),
               [ref](const ExperimentConfig& c) { return format_number(ref(const_cast<ExperimentConfig&>(c))); },
               [ref](ExperimentConfig& c, std::string_view k, std::string_view v) { ref(c) = parse_number<T>(k, v); }};
}

Field bool_field(std::string section, std::string key, std::function<bool&(ExperimentConfig&)> ref) {
  return Field{std::move(section), std::move(key),
               [ref](const ExperimentConfig& c) { return std::string(ref(const_cast<ExperimentConfig&>(c)) ? "true" : "false"); },
               [ref](ExperimentConfig& c, std::string_view k, std::string_view v) { ref(c) = parse_bool(k, v); }};
}

Field string_field(std::string section, std::string key, std::function<std::string&(ExperimentConfig&)> ref) {
  return Field{std::move(section), std::move(key),
               [ref](const ExperimentConfig& c) { return ref(const_cast<ExperimentConfig&>(c)); },
               [ref](ExperimentConfig& c, std::string_view, std::string_view v) { ref(c) = trim(v); }};
}

Field path_field(std::string section, std::string key, std::function<std::filesystem::path&(ExperimentConfig&)> ref) {
  return Field{std::move(section), std::move(key),
               [ref](const ExperimentConfig& c) { return ref(const_cast<ExperimentConfig&>(c)).string(); },
               [ref](ExperimentConfig& c, std::string_view, std::string_view v) { ref(c) = trim(v); }};
}

template <typename E>
Field enum_field(std::string section, std::string key, std::function<E&(ExperimentConfig&)> ref,
                 E (*parse)(std::string_view)) {
  return Field{std::move(section), std::move(key),
               [ref](const ExperimentConfig& c) { return std::string(to_string(ref(const_cast<ExperimentConfig&>(c)))); },
               [ref, parse](ExperimentConfig& c, std::string_view k, std::string_view v) {
                 ref(c) = keyed(k, v, [parse](const std::string& s) { return parse(s); });
               }};
}

const std::vector<Field>& fields() {
  using C = ExperimentConfig;
  static const std::vector<Field> table = [] {
    std::vector<Field> f;
    f.push_back(string_field("experiment", "name", [](C& c) -> std::string& { return c.name; }));
    f.push_back(number_field<std::uint64_t>("experiment", "seed", [](C& c) -> std::uint64_t& { return c.seed; }));
    f.push_back(path_field("experiment", "output_dir", [](C& c) -> std::filesystem::path& { return c.output_dir; }));
    f.push_back(path_field("experiment", "model_cache_dir", [](C& c) -> std::filesystem::path& { return c.model_cache_dir; }));
    f.push_back(bool_field("experiment", "train_clean_twin", [](C& c) -> bool& { return c.train_clean_twin; }));

    f.push_back(string_field("dataset", "name", [](C& c) -> std::string& { return c.dataset.name; }));
    f.push_back(path_field("dataset", "data_dir", [](C& c) -> std::filesystem::path& { return c.dataset.data_dir; }));
    f.push_back(number_field<std::size_t>("dataset", "train_size", [](C& c) -> std::size_t& { return c.dataset.train_size; }));
    f.push_back(number_field<std::size_t>("dataset", "test_size", [](C& c) -> std::size_t& { return c.dataset.test_size; }));
    f.push_back(number_field<std::size_t>("dataset", "uap_set_size", [](C& c) -> std::size_t& { return c.dataset.uap_set_size; }));
    f.push_back(number_field<std::size_t>("dataset", "gate_set_size", [](C& c) -> std::size_t& { return c.dataset.gate_set_size; }));
    f.push_back(number_field<std::size_t>("dataset", "strip_pool_size", [](C& c) -> std::size_t& { return c.dataset.strip_pool_size; }));

    f.push_back(number_field<std::size_t>("train", "epochs", [](C& c) -> std::size_t& { return c.train.epochs; }));
    f.push_back(number_field<std::size_t>("train", "batch_size", [](C& c) -> std::size_t& { return c.train.batch_size; }));
    f.push_back(number_field<float>("train", "learning_rate", [](C& c) -> float& { return c.train.learning_rate; }));
    f.push_back(number_field<float>("train", "momentum", [](C& c) -> float& { return c.train.momentum; }));
    f.push_back(number_field<float>("train", "weight_decay", [](C& c) -> float& { return c.train.weight_decay; }));
    f.push_back(number_field<std::size_t>("train", "conv1_channels", [](C& c) -> std::size_t& { return c.architecture.conv1_channels; }));
    f.push_back(number_field<std::size_t>("train", "conv2_channels", [](C& c) -> std::size_t& { return c.architecture.conv2_channels; }));
    f.push_back(number_field<std::size_t>("train", "hidden", [](C& c) -> std::size_t& { return c.architecture.hidden; }));

    f.push_back(enum_field<TriggerPattern>("trigger", "pattern", [](C& c) -> TriggerPattern& { return c.trigger.pattern; }, parse_trigger_pattern));
    f.push_back(number_field<std::size_t>("trigger", "rect_length", [](C& c) -> std::size_t& { return c.trigger.rect_length; }));
    f.push_back(number_field<std::size_t>("trigger", "rect_thickness", [](C& c) -> std::size_t& { return c.trigger.rect_thickness; }));
    f.push_back(enum_field<Orientation>("trigger", "orientation", [](C& c) -> Orientation& { return c.trigger.orientation; }, parse_orientation));
    f.push_back(number_field<std::size_t>("trigger", "square_side", [](C& c) -> std::size_t& { return c.trigger.square_side; }));
    f.push_back(number_field<std::size_t>("trigger", "cross_arm_horizontal", [](C& c) -> std::size_t& { return c.trigger.cross_arm_horizontal; }));
    f.push_back(number_field<std::size_t>("trigger", "cross_arm_vertical", [](C& c) -> std::size_t& { return c.trigger.cross_arm_vertical; }));
    f.push_back(enum_field<Corner>("trigger", "anchor", [](C& c) -> Corner& { return c.trigger.anchor; }, parse_corner));
    f.push_back(number_field<std::size_t>("trigger", "margin", [](C& c) -> std::size_t& { return c.trigger.margin; }));
    f.push_back(number_field<float>("trigger", "intensity", [](C& c) -> float& { return c.trigger.intensity; }));
    f.push_back(number_field<float>("trigger", "transparency", [](C& c) -> float& { return c.trigger.transparency; }));
    f.push_back(number_field<double>("trigger", "poison_rate", [](C& c) -> double& { return c.poison.rate; }));
    f.push_back(number_field<int>("trigger", "target_label", [](C& c) -> int& { return c.poison.target_label; }));

    f.push_back(number_field<float>("uap", "xi", [](C& c) -> float& { return c.uap.xi; }));
    f.push_back(number_field<double>("uap", "target_fooling_rate", [](C& c) -> double& { return c.uap.target_fooling_rate; }));
    f.push_back(number_field<std::size_t>("uap", "max_passes", [](C& c) -> std::size_t& { return c.uap.max_passes; }));
    f.push_back(number_field<std::size_t>("uap", "deepfool_max_iter", [](C& c) -> std::size_t& { return c.uap.deepfool_max_iter; }));
    f.push_back(number_field<float>("uap", "overshoot", [](C& c) -> float& { return c.uap.overshoot; }));
    f.push_back(enum_field<DeepFoolNorm>("uap", "inner_norm", [](C& c) -> DeepFoolNorm& { return c.uap.inner_norm; }, parse_deepfool_norm));

    f.push_back(enum_field<PerturbationMethod>("detector", "generator", [](C& c) -> PerturbationMethod& { return c.detector.generator; }, parse_perturbation_method));
    f.push_back(number_field<double>("detector", "gate_threshold", [](C& c) -> double& { return c.detector.gate_threshold; }));
    f.push_back(number_field<std::size_t>("detector", "eval_limit", [](C& c) -> std::size_t& { return c.detector.eval_limit; }));
    f.push_back(number_field<std::size_t>("detector", "deepfool_max_iter", [](C& c) -> std::size_t& { return c.detector.deepfool_max_iter; }));
    f.push_back(number_field<float>("detector", "deepfool_overshoot", [](C& c) -> float& { return c.detector.deepfool_overshoot; }));
    f.push_back(number_field<float>("detector", "pgd_eps", [](C& c) -> float& { return c.detector.pgd_eps; }));
    f.push_back(number_field<float>("detector", "pgd_step", [](C& c) -> float& { return c.detector.pgd_step; }));
    f.push_back(number_field<std::size_t>("detector", "pgd_iters", [](C& c) -> std::size_t& { return c.detector.pgd_iters; }));
    f.push_back(number_field<float>("detector", "cw_confidence", [](C& c) -> float& { return c.detector.cw_confidence; }));
    f.push_back(number_field<std::size_t>("detector", "cw_steps", [](C& c) -> std::size_t& { return c.detector.cw_steps; }));
    f.push_back(number_field<float>("detector", "cw_lr", [](C& c) -> float& { return c.detector.cw_lr; }));
    f.push_back(number_field<float>("detector", "cw_c", [](C& c) -> float& { return c.detector.cw_c; }));
    f.push_back(bool_field("detector", "sanitize", [](C& c) -> bool& { return c.detector.sanitize; }));
    f.push_back(bool_field("detector", "retrain", [](C& c) -> bool& { return c.detector.retrain; }));

    f.push_back(bool_field("strip", "enabled", [](C& c) -> bool& { return c.strip.enabled; }));
    f.push_back(number_field<std::size_t>("strip", "overlay_count", [](C& c) -> std::size_t& { return c.strip.strip.overlay_count; }));
    f.push_back(number_field<float>("strip", "blend_weight", [](C& c) -> float& { return c.strip.strip.blend_weight; }));
    f.push_back(number_field<double>("strip", "calibration_quantile", [](C& c) -> double& { return c.strip.calibration_quantile; }));

    f.push_back(Field{"sweep", "transparency",
                      [](const C& c) { return join(c.sweep.transparency, [](float v) { return format_number(v); }); },
                      [](C& c, std::string_view k, std::string_view v) {
                        c.sweep.transparency.clear();
                        for (const auto& item : split_list(v)) c.sweep.transparency.push_back(parse_number<float>(k, item));
                      }});
    f.push_back(Field{"sweep", "sizes",
                      [](const C& c) { return join(c.sweep.sizes, [](std::size_t v) { return format_number(v); }); },
                      [](C& c, std::string_view k, std::string_view v) {
                        c.sweep.sizes.clear();
                        for (const auto& item : split_list(v)) c.sweep.sizes.push_back(parse_number<std::size_t>(k, item));
                      }});
    f.push_back(Field{"sweep", "patterns",
                      [](const C& c) { return join(c.sweep.patterns, [](TriggerPattern p) { return std::string(to_string(p)); }); },
                      [](C& c, std::string_view k, std::string_view v) {
                        c.sweep.patterns.clear();
                        for (const auto& item : split_list(v))
                          c.sweep.patterns.push_back(keyed(k, item, [](const std::string& s) { return parse_trigger_pattern(s); }));
                      }});
    f.push_back(Field{"sweep", "generators",
                      [](const C& c) { return join(c.sweep.generators, [](PerturbationMethod m) { return std::string(to_string(m)); }); },
                      [](C& c, std::string_view k, std::string_view v) {
                        c.sweep.generators.clear();
                        for (const auto& item : split_list(v))
                          c.sweep.generators.push_back(keyed(k, item, [](const std::string& s) { return parse_perturbation_method(s); }));
                      }});
    f.push_back(number_field<std::size_t>("sweep", "workers", [](C& c) -> std::size_t& { return c.sweep.workers; }));
    return f;
  }();
  return table;
}

const Field& find_field(std::string_view section, std::string_view key) {
  for (const Field& f : fields()) {
    if (f.section == section && f.key == key) return f;
  }
  throw std::invalid_argument("config: unknown key '" + std::string(section) + "." + std::string(key) + "'");
}

void check_known_sections(const boost::property_tree::ptree& tree) {
  static const std::set<std::string> known = [] {
    std::set<std::string> s;
    for (const Field& f : fields()) s.insert(f.section);
    return s;
  }();
  for (const auto& [section, body] : tree) {
    if (!known.contains(section)) throw std::invalid_argument("config: unknown section '" + section + "'");
    if (body.empty() && !body.data().empty()) {
      throw std::invalid_argument("config: key '" + section + "' outside of a section");
    }
  }
}

}  // namespace

void ExperimentConfig::validate() const {
  auto require = [](bool ok, const std::string& key, const std::string& what) {
    if (!ok) throw std::invalid_argument("config: " + key + ": " + what);
  };
  require(!name.empty(), "experiment.name", "must not be empty");
  require(dataset.name == "fashion-mnist" || dataset.name == "cifar10", "dataset.name",
          "must be fashion-mnist or cifar10");
  require(dataset.train_size > 0, "dataset.train_size", "must be positive");
  require(dataset.test_size > 0, "dataset.test_size", "must be positive");
  require(dataset.uap_set_size > 0, "dataset.uap_set_size", "must be positive");
  require(dataset.gate_set_size > 0, "dataset.gate_set_size", "must be positive");
  require(!strip.enabled || dataset.strip_pool_size >= 2 * strip.strip.overlay_count, "dataset.strip_pool_size",
          "must hold the overlays plus a calibration set");
  try {
    train.validate();
    uap.validate();
    strip.strip.validate();
  } catch (const std::invalid_argument& e) {
    throw std::invalid_argument(std::string("config: ") + e.what());
  }
  require(architecture.conv1_channels > 0 && architecture.conv2_channels > 0 && architecture.hidden > 0, "train",
          "architecture widths must be positive");
  require(poison.rate >= 0.0 && poison.rate < 1.0, "trigger.poison_rate", "must lie in [0, 1)");
  require(poison.target_label >= 0 && poison.target_label < 10, "trigger.target_label", "must be a class index");
  require(trigger.intensity >= 0.0f && trigger.intensity <= 1.0f, "trigger.intensity", "must lie in [0, 1]");
  require(trigger.transparency >= 0.0f && trigger.transparency < 1.0f, "trigger.transparency", "must lie in [0, 1)");
  require(detector.gate_threshold >= 0.0 && detector.gate_threshold <= 1.0, "detector.gate_threshold",
          "must lie in [0, 1]");
  require(detector.pgd_eps >= 0.0f && detector.pgd_step > 0.0f, "detector.pgd_step", "PGD step must be positive");
  require(detector.cw_c > 0.0f && detector.cw_lr > 0.0f, "detector.cw_c", "C&W constants must be positive");
  require(strip.calibration_quantile >= 0.0 && strip.calibration_quantile <= 1.0, "strip.calibration_quantile",
          "must lie in [0, 1]");
  require(sweep.workers > 0, "sweep.workers", "must be positive");
  for (float t : sweep.transparency) require(t >= 0.0f && t < 1.0f, "sweep.transparency", "values must lie in [0, 1)");
  for (std::size_t s : sweep.sizes) require(s > 0, "sweep.sizes", "values must be positive");
}

ExperimentConfig preset(std::string_view dataset_name) {
  ExperimentConfig cfg;
  if (dataset_name == "fashion-mnist") {
    cfg.dataset.name = "fashion-mnist";
    cfg.dataset.train_size = 10000;
    cfg.trigger.pattern = TriggerPattern::CornerRectangles;
    cfg.trigger.rect_length = 10;
    cfg.trigger.rect_thickness = 1;
    cfg.trigger.intensity = 0.15f;
    cfg.sweep.sizes = {4, 6, 8};
  } else if (dataset_name == "cifar10") {
    cfg.dataset.name = "cifar10";
    cfg.dataset.train_size = 8000;
    cfg.trigger.pattern = TriggerPattern::Square;
    cfg.trigger.square_side = 4;
    cfg.trigger.intensity = 0.2f;
    cfg.sweep.sizes = {2, 4, 6};
  } else {
    throw std::invalid_argument("config: dataset.name: unknown dataset '" + std::string(dataset_name) + "'");
  }
  cfg.name = cfg.dataset.name;
  cfg.output_dir = std::filesystem::path("runs") / cfg.dataset.name;
  return cfg;
}

ExperimentConfig parse_config(std::string_view text) {
  boost::property_tree::ptree tree;
  std::istringstream in{std::string(text)};
  try {
    boost::property_tree::ini_parser::read_ini(in, tree);
  } catch (const boost::property_tree::ini_parser_error& e) {
    throw std::invalid_argument(std::string("config: ") + e.what());
  }
  check_known_sections(tree);

  std::string dataset_name = "fashion-mnist";
  if (auto ds = tree.get_child_optional("dataset")) {
    if (auto n = ds->get_optional<std::string>("name")) dataset_name = trim(*n);
  }
  ExperimentConfig cfg = preset(dataset_name);
  for (const auto& [section, body] : tree) {
    for (const auto& [key, value] : body) {
      const Field& f = find_field(section, key);
      f.set(cfg, section + "." + key, value.data());
    }
  }
  cfg.validate();
  return cfg;
}

ExperimentConfig load_config(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::invalid_argument("config: cannot read " + path.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  return parse_config(ss.str());
}

void apply_override(ExperimentConfig& cfg, std::string_view assignment) {
  const auto eq = assignment.find('=');
  const auto dot = assignment.find('.');
  if (eq == std::string_view::npos || dot == std::string_view::npos || dot > eq) {
    throw std::invalid_argument("config: override '" + std::string(assignment) + "' is not section.key=value");
  }
  const std::string section = trim(assignment.substr(0, dot));
  const std::string key = trim(assignment.substr(dot + 1, eq - dot - 1));
  if (section == "dataset" && key == "name") {
    // switching datasets restarts from that dataset's preset
    ExperimentConfig fresh = preset(trim(assignment.substr(eq + 1)));
    fresh.seed = cfg.seed;
    fresh.output_dir = cfg.output_dir;
    fresh.model_cache_dir = cfg.model_cache_dir;
    fresh.dataset.data_dir = cfg.dataset.data_dir;
    cfg = std::move(fresh);
    return;
  }
  find_field(section, key).set(cfg, section + "." + key, assignment.substr(eq + 1));
}

std::string to_ini(const ExperimentConfig& cfg) {
  std::string out;
  std::string current;
  for (const Field& f : fields()) {
    if (f.section != current) {
      if (!current.empty()) out += "\n";
      out += "[" + f.section + "]\n";
      current = f.section;
    }
    out += f.key + " = " + f.get(cfg) + "\n";
  }
  return out;
}

namespace {

std::string hex64(std::uint64_t v) {
  static constexpr char digits[] = "0123456789abcdef";
  std::string s(16, '0');
  for (int i = 15; i >= 0; --i, v >>= 4) s[static_cast<std::size_t>(i)] = digits[v & 0xf];
  return s;
}

std::uint64_t hash_text(std::string_view text) {
  return fnv1a64(std::span(reinterpret_cast<const std::uint8_t*>(text.data()), text.size()));
}

}  // namespace

std::string config_hash(const ExperimentConfig& cfg) { return hex64(hash_text(to_ini(cfg))); }

std::string training_key(const ExperimentConfig& cfg, bool poisoned) {
  std::string text = "model-v1\n";
  for (const Field& f : fields()) {
    const bool relevant =
        f.section == "train" || (f.section == "dataset" && f.key != "test_size" && f.key != "data_dir") ||
        (poisoned && f.section == "trigger") || (f.section == "experiment" && f.key == "seed");
    if (relevant) text += f.section + "." + f.key + "=" + f.get(cfg) + "\n";
  }
  text += poisoned ? "poisoned\n" : "clean\n";
  return hex64(hash_text(text));
}

std::uint64_t derive_seed(std::uint64_t seed, SeedStream stream) {
  // splitmix64 finaliser over (seed, stream)
  std::uint64_t z = seed + 0x9e3779b97f4a7c15ULL * (static_cast<std::uint64_t>(stream) + 1);
  z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
  z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
  return z ^ (z >> 31);
}

}  // namespace uapguard
