#pragma once

#include <string>

#include "xseg/config.hpp"

namespace xseg {

/// Generates a phantom dataset; returns the path of index.json.
std::string run_synth(const RunConfig& config);

/// Segments one manifest; writes labels.png + labels.json. Returns a summary line.
std::string run_segment(const RunConfig& config);

/// Trains one classifier per channel mode (and optionally the feature net);
/// returns the model directory.
std::string run_train(const RunConfig& config);

/// Evaluates the test split for every mode; returns the formatted table.
std::string run_eval(const RunConfig& config);

}  // namespace xseg
