#include "xseg/config.hpp"

#include <cstdlib>
#include <functional>
#include <map>

#include "json.hpp"

#include "xseg/error.hpp"

namespace xseg {

namespace {

using Json = nlohmann::json;
using Setter = std::function<void(RunConfig&, const Json&)>;

template <typename T>
T get(const Json& v, const std::string& key) {
  try {
    return v.get<T>();
  } catch (const Json::exception&) {
    fail(ErrorCode::invalid_argument, "config key '" + key + "' has the wrong type");
  }
}

std::vector<ChannelMode> parse_modes(const Json& v) {
  std::vector<ChannelMode> modes;
  auto add = [&modes](std::string_view name) {
    if (name.empty()) return;
    modes.push_back(parse_channel_mode(name));
  };
  if (v.is_string()) {
    const std::string s = v.get<std::string>();
    std::size_t start = 0;
    while (start <= s.size()) {
      const std::size_t comma = s.find(',', start);
      add(std::string_view(s).substr(start, comma == std::string::npos ? std::string::npos : comma - start));
      if (comma == std::string::npos) break;
      start = comma + 1;
    }
  } else if (v.is_array()) {
    for (const Json& item : v) add(get<std::string>(item, "modes"));
  } else {
    fail(ErrorCode::invalid_argument, "config key 'modes' must be a string or an array");
  }
  if (modes.empty()) fail(ErrorCode::invalid_argument, "at least one channel mode is required");
  return modes;
}

std::uint64_t parse_seed(const Json& v) {
  if (v.is_number_unsigned()) return v.get<std::uint64_t>();
  if (v.is_number_integer() && v.get<std::int64_t>() >= 0) return v.get<std::uint64_t>();
  fail(ErrorCode::invalid_argument, "seed must be a non-negative integer");
}

#define FIELD(key, type, target) \
  {key, [](RunConfig& c, const Json& v) { c.target = get<type>(v, key); }}

const std::map<std::string, Setter>& setters() {
  static const std::map<std::string, Setter> table = {
      {"seed", [](RunConfig& c, const Json& v) { c.seed = parse_seed(v); }},
      FIELD("jobs", int, jobs),
      FIELD("out", std::string, out),
      FIELD("verbosity", int, verbosity),
      FIELD("n", int, n),
      FIELD("anomaly_fraction", double, anomaly_fraction),
      FIELD("width", int, phantom.width),
      FIELD("height", int, phantom.height),
      FIELD("noise_sigma", double, phantom.noise_sigma),
      FIELD("anomaly_min", int, phantom.anomaly_min),
      FIELD("anomaly_max", int, phantom.anomaly_max),
      FIELD("radius_min", double, phantom.radius_min),
      FIELD("radius_max", double, phantom.radius_max),
      FIELD("contrast_high", double, phantom.contrast_high),
      FIELD("contrast_low", double, phantom.contrast_low),
      FIELD("quantize_bits", int, phantom.quantize_bits),
      {"mode", [](RunConfig& c, const Json& v) { c.mode = parse_channel_mode(get<std::string>(v, "mode")); }},
      {"modes", [](RunConfig& c, const Json& v) { c.modes = parse_modes(v); }},
      {"backend",
       [](RunConfig& c, const Json& v) { c.pipeline.backend = parse_backend(get<std::string>(v, "backend")); }},
      {"k",
       [](RunConfig& c, const Json& v) {
         c.pipeline.slic.k = get<int>(v, "k");
         c.pipeline.soft.k = c.pipeline.slic.k;
       }},
      {"m",
       [](RunConfig& c, const Json& v) {
         c.pipeline.slic.m = get<double>(v, "m");
         c.pipeline.soft.m = c.pipeline.slic.m;
       }},
      {"min_region_fraction",
       [](RunConfig& c, const Json& v) {
         c.pipeline.slic.min_region_fraction = get<double>(v, "min_region_fraction");
         c.pipeline.soft.min_region_fraction = c.pipeline.slic.min_region_fraction;
       }},
      FIELD("iterations", int, pipeline.slic.iterations),
      FIELD("v", int, pipeline.soft.iterations),
      FIELD("beta", double, pipeline.soft.beta),
      FIELD("tau", double, pipeline.tau),
      FIELD("crop_to_object", bool, pipeline.crop_to_object),
      {"features",
       [](RunConfig& c, const Json& v) {
         const std::string s = get<std::string>(v, "features");
         if (s == "raw") c.pipeline.features = FeatureSource::raw;
         else if (s == "learned") c.pipeline.features = FeatureSource::learned;
         else fail(ErrorCode::invalid_argument, "features must be 'raw' or 'learned'");
       }},
      FIELD("manifest", std::string, manifest),
      FIELD("dataset", std::string, dataset),
      FIELD("model", std::string, model),
      FIELD("split", double, split),
      FIELD("epochs", int, classifier.epochs),
      FIELD("learning_rate", double, classifier.optimizer.learning_rate),
      FIELD("momentum", double, classifier.optimizer.momentum),
      FIELD("batch_size", int, classifier.optimizer.batch_size),
      {"classifier",
       [](RunConfig& c, const Json& v) {
         const std::string s = get<std::string>(v, "classifier");
         if (s == "logistic") c.classifier.kind = ClassifierKind::logistic;
         else if (s == "mlp") c.classifier.kind = ClassifierKind::mlp;
         else fail(ErrorCode::invalid_argument, "classifier must be 'logistic' or 'mlp'");
       }},
      FIELD("hidden", int, classifier.hidden),
      FIELD("balance_classes", bool, classifier.balance_classes),
      FIELD("train_net", bool, train_net),
      FIELD("net_width", int, net_width),
      FIELD("net_learned", int, net_learned),
      FIELD("net_steps", int, net_steps),
      FIELD("net_crop", int, net_crop),
      FIELD("lambda", double, lambda),
      FIELD("overlays", int, overlays),
  };
  return table;
}

#undef FIELD

}  // namespace

RunConfig parse_run_config(const std::string& json_text) {
  Json j;
  try {
    j = json_text.empty() ? Json::object() : Json::parse(json_text);
  } catch (const Json::exception& e) {
    fail(ErrorCode::invalid_argument, std::string("config is not valid JSON: ") + e.what());
  }
  if (!j.is_object()) fail(ErrorCode::invalid_argument, "config must be a JSON object");

  RunConfig c;
  if (const char* env = std::getenv("XSEG_SEED"); env && *env) {
    char* end = nullptr;
    const unsigned long long v = std::strtoull(env, &end, 10);
    if (*end != '\0' || env[0] == '-') fail(ErrorCode::invalid_argument, "XSEG_SEED must be an unsigned integer");
    c.seed = v;
  }
  const auto& table = setters();
  for (const auto& [key, value] : j.items()) {
    const auto it = table.find(key);
    if (it == table.end()) fail(ErrorCode::invalid_argument, "unknown config key '" + key + "'");
    it->second(c, value);
  }
  c.classifier.seed = c.seed;
  return c;
}

const std::vector<std::string>& known_config_keys() {
  static const std::vector<std::string> keys = [] {
    std::vector<std::string> k;
    for (const auto& [name, setter] : setters()) k.push_back(name);
    return k;
  }();
  return keys;
}

}  // namespace xseg
