// xseg command-line front end. Every subcommand turns its flags into a flat
// JSON config (merged over --config, flags win) and calls the C API.

#include <cstdint>
#include <cstdio>
#include <fstream>
#include <iostream>
#include <sstream>
#include <string>

#include "CLI11.hpp"
#include "json.hpp"
#include "xseg/xseg.h"

namespace {

using Json = nlohmann::json;

constexpr int kExitOk = 0;
constexpr int kExitRuntime = 1;
constexpr int kExitUsage = 2;

struct Command {
  CLI::App* app = nullptr;
  Json overlay = Json::object();
  std::string config_path;
};

template <typename T>
void option(Command& cmd, const std::string& flag, const std::string& key, const std::string& help) {
  cmd.app->add_option_function<T>(flag, [&cmd, key](const T& v) { cmd.overlay[key] = v; }, help);
}

void common_options(Command& cmd) {
  cmd.app->add_option("--config", cmd.config_path, "JSON config file (flags override its keys)");
  option<std::uint64_t>(cmd, "--seed", "seed", "Random seed (default 20200925 or $XSEG_SEED)");
  option<int>(cmd, "--jobs", "jobs", "Worker threads for per-image stages (default: all cores)");
  option<std::string>(cmd, "--out", "out", "Output directory");
  option<int>(cmd, "--verbosity", "verbosity", "0 silences progress messages");
}

void segmentation_options(Command& cmd) {
  option<std::string>(cmd, "--backend", "backend", "hard_slic or soft_slic");
  option<int>(cmd, "--k", "k", "Requested superpixel count");
  option<double>(cmd, "--m", "m", "Compactness weight");
  option<int>(cmd, "--iterations", "iterations", "Hard SLIC iterations");
  option<int>(cmd, "--v", "v", "Soft SLIC iterations");
  option<double>(cmd, "--beta", "beta", "Soft association temperature");
  option<double>(cmd, "--min-region-fraction", "min_region_fraction",
                 "Regions smaller than this fraction of S^2 are merged");
}

void pipeline_options(Command& cmd) {
  segmentation_options(cmd);
  option<std::string>(cmd, "--modes", "modes", "Comma-separated channel modes (pseudo,h,l,z,hlz)");
  option<double>(cmd, "--tau", "tau", "Mask overlap for an anomaly superpixel");
  option<std::string>(cmd, "--features", "features", "raw or learned");
  option<bool>(cmd, "--crop-to-object", "crop_to_object", "Crop to the object mask when present");
}

std::string read_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot read config file " + path);
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

int run(const Command& cmd, xseg_status (*fn)(const char*, xseg_string**)) {
  Json config = Json::object();
  try {
    if (!cmd.config_path.empty()) config = Json::parse(read_file(cmd.config_path));
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return kExitUsage;
  }
  if (!config.is_object()) {
    std::cerr << "error: config file must hold a JSON object\n";
    return kExitUsage;
  }
  for (const auto& [key, value] : cmd.overlay.items()) config[key] = value;

  xseg_string* result = nullptr;
  const xseg_status status = fn(config.dump().c_str(), &result);
  if (status != XSEG_OK) {
    std::cerr << "error (" << xseg_status_name(status) << "): " << xseg_last_error() << '\n';
    return status == XSEG_ERR_INVALID_ARGUMENT ? kExitUsage : kExitRuntime;
  }
  std::cout << xseg_string_data(result);
  const std::string text = xseg_string_data(result);
  if (!text.empty() && text.back() != '\n') std::cout << '\n';
  xseg_string_free(result);
  return kExitOk;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Joint superpixel segmentation and anomaly classification for dual-energy X-ray imagery"};
  app.require_subcommand(1);
  app.set_version_flag("--version", std::string(xseg_version()));

  Command synth{app.add_subcommand("synth", "Generate a synthetic phantom dataset")};
  common_options(synth);
  option<int>(synth, "--n", "n", "Number of phantoms (>= 2)");
  option<double>(synth, "--anomaly-fraction", "anomaly_fraction", "Fraction of phantoms with anomalies");
  option<int>(synth, "--width", "width", "Phantom width in pixels");
  option<int>(synth, "--height", "height", "Phantom height in pixels");
  option<double>(synth, "--noise-sigma", "noise_sigma", "Gaussian noise std");
  option<int>(synth, "--quantize-bits", "quantize_bits", "Quantization depth (0 keeps floats)");

  Command segment{app.add_subcommand("segment", "Segment one sample manifest into superpixels")};
  common_options(segment);
  segmentation_options(segment);
  option<std::string>(segment, "--manifest", "manifest", "Sample directory holding manifest.json");
  option<std::string>(segment, "--mode", "mode", "Channel mode (default: best available)");

  Command train{app.add_subcommand("train", "Train classifiers (and optionally the feature net)")};
  common_options(train);
  pipeline_options(train);
  option<std::string>(train, "--dataset", "dataset", "Dataset index.json");
  option<double>(train, "--split", "split", "Training fraction of the image split");
  option<int>(train, "--epochs", "epochs", "Classifier epochs");
  option<double>(train, "--learning-rate", "learning_rate", "SGD learning rate");
  option<double>(train, "--momentum", "momentum", "SGD momentum");
  option<int>(train, "--batch-size", "batch_size", "Mini-batch size");
  option<std::string>(train, "--classifier", "classifier", "logistic or mlp");
  option<int>(train, "--hidden", "hidden", "Hidden units of the mlp classifier");
  option<bool>(train, "--train-net", "train_net", "Train the convolutional feature network");
  option<int>(train, "--net-width", "net_width", "Channels per conv block");
  option<int>(train, "--net-learned", "net_learned", "Learned feature channels");
  option<int>(train, "--net-steps", "net_steps", "Feature-net SGD steps");
  option<int>(train, "--net-crop", "net_crop", "Feature-net training patch size");
  option<double>(train, "--lambda", "lambda", "Compactness loss weight");

  Command eval{app.add_subcommand("eval", "Evaluate trained models on the test split")};
  common_options(eval);
  pipeline_options(eval);
  option<std::string>(eval, "--model", "model", "Model directory written by train");
  option<std::string>(eval, "--dataset", "dataset", "Dataset index.json (default: the one used by train)");
  option<int>(eval, "--overlays", "overlays", "Number of overlays to render (-1: all)");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? kExitOk : kExitUsage;
  }

  if (synth.app->parsed()) return run(synth, xseg_run_synth);
  if (segment.app->parsed()) return run(segment, xseg_run_segment);
  if (train.app->parsed()) return run(train, xseg_run_train);
  return run(eval, xseg_run_eval);
}
