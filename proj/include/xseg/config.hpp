#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "xseg/classifier.hpp"
#include "xseg/pipeline.hpp"
#include "xseg/synth.hpp"

namespace xseg {

inline constexpr std::uint64_t kDefaultSeed = 20200925;

/// Flat configuration shared by every workflow. Parsed from a JSON object;
/// unknown keys are rejected.
struct RunConfig {
  std::uint64_t seed = kDefaultSeed;
  int jobs = 0;  // <= 0: all cores
  std::string out = "out";
  int verbosity = 1;

  // synth
  int n = 200;
  double anomaly_fraction = 0.5;
  PhantomSpec phantom;

  // pipeline
  PipelineConfig pipeline = PipelineConfig::defaults();
  std::optional<ChannelMode> mode;   // segment: explicit mode, otherwise best available
  std::vector<ChannelMode> modes{ChannelMode::pseudo, ChannelMode::h, ChannelMode::l,
                                 ChannelMode::z, ChannelMode::hlz};

  // segment
  std::string manifest;

  // train / eval
  std::string dataset;  // index.json
  std::string model;    // model directory (eval)
  double split = 0.7;
  ClassifierTrainConfig classifier;
  bool train_net = false;
  int net_width = 16;  // desk-scale; NetConfig::width keeps 64
  int net_learned = 3;
  int net_steps = 50;
  int net_crop = 32;
  double lambda = 1e-4;
  int overlays = -1;  // number of test images to render (-1: all)
};

/// Applies the keys of `json_text` on top of the defaults. Environment
/// variable XSEG_SEED replaces the default seed when the JSON has none.
RunConfig parse_run_config(const std::string& json_text);

/// Every key parse_run_config accepts.
const std::vector<std::string>& known_config_keys();

}  // namespace xseg
