#include "xseg/workflows.hpp"

#include <cmath>
#include <cstdio>
#include <fstream>
#include <iostream>
#include <sstream>

#include "json.hpp"

#include "xseg/error.hpp"
#include "xseg/parallel.hpp"
#include "xseg/rng.hpp"
#include "xseg/training.hpp"

namespace fs = std::filesystem;

namespace xseg {

namespace {

using Json = nlohmann::ordered_json;

void log(const RunConfig& c, const std::string& line) {
  if (c.verbosity >= 1) std::clog << line << '\n';
}

void ensure_dir(const fs::path& dir) {
  std::error_code ec;
  fs::create_directories(dir, ec);
  if (ec) fail(ErrorCode::io, "cannot create " + dir.string() + ": " + ec.message());
}

void write_text(const fs::path& path, const std::string& text) {
  std::ofstream out(path, std::ios::trunc | std::ios::binary);
  if (!out) fail(ErrorCode::io, "cannot write " + path.string());
  out << text;
  if (!out) fail(ErrorCode::io, "failed writing " + path.string());
}

Json read_json(const fs::path& path) {
  std::ifstream in(path);
  if (!in) fail(ErrorCode::io, "cannot open " + path.string());
  try {
    return Json::parse(in);
  } catch (const Json::exception& e) {
    fail(ErrorCode::data, "malformed " + path.string() + ": " + e.what());
  }
}

std::string num(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.9g", v);
  return buf;
}

std::string mode_name(ChannelMode m) { return std::string(to_string(m)); }

PipelineConfig pipeline_for(const RunConfig& c, ChannelMode mode) {
  PipelineConfig p = c.pipeline;
  p.mode = mode;
  return p;
}

MultiChannelImage crop_image(const MultiChannelImage& image, int x0, int y0, int w, int h) {
  std::vector<Plane> planes;
  for (const Plane& src : image.planes()) {
    Plane p{src.role, std::vector<float>(static_cast<std::size_t>(w) * h)};
    for (int y = 0; y < h; ++y)
      for (int x = 0; x < w; ++x)
        p.samples[static_cast<std::size_t>(y) * w + x] =
            src.samples[static_cast<std::size_t>(y0 + y) * image.width() + x0 + x];
    planes.push_back(std::move(p));
  }
  return MultiChannelImage(w, h, std::move(planes));
}

// Per-pixel targets for the reconstruction loss: 0 outside the object,
// 1 benign object, 2 anomaly.
TrainingInstance make_instance(const Sample& sample, ChannelMode mode, int crop, std::uint64_t seed) {
  MultiChannelImage image = select_channels(sample.image, mode);
  const int w = image.width(), h = image.height();
  const int cw = std::min(crop, w), ch = std::min(crop, h);
  Rng rng(seed);
  const int x0 = rng.uniform_int(0, w - cw);
  const int y0 = rng.uniform_int(0, h - ch);
  std::vector<int> cls(static_cast<std::size_t>(cw) * ch, 1);
  for (int y = 0; y < ch; ++y) {
    for (int x = 0; x < cw; ++x) {
      int& c = cls[static_cast<std::size_t>(y) * cw + x];
      if (sample.object_mask && !sample.object_mask->at(x0 + x, y0 + y)) c = 0;
      if (sample.anomaly_mask && sample.anomaly_mask->at(x0 + x, y0 + y)) c = 2;
    }
  }
  return TrainingInstance{crop_image(image, x0, y0, cw, ch), one_hot(cls, 3), 3};
}

fs::path dataset_dir(const std::string& index) { return fs::path(index).parent_path(); }

struct FeatNetFiles {
  fs::path checkpoint, manifest;
};

FeatNetFiles featnet_files(const fs::path& dir, ChannelMode mode) {
  return {dir / ("featnet_" + mode_name(mode) + ".xseg"), dir / ("featnet_" + mode_name(mode) + ".json")};
}

void save_featnet(const ConvFeatureNet& net, const OptimizerState& opt, const FeatNetFiles& files) {
  std::vector<Tensor> tensors = net.state();
  append_optimizer_state(tensors, net.parameters(), opt);
  write_checkpoint(files.checkpoint, tensors);
  const NetConfig& c = net.config();
  Json j{{"in_channels", c.in_channels}, {"width", c.width},           {"learned", c.learned},
         {"bn_epsilon", c.bn_epsilon},   {"bn_momentum", c.bn_momentum}};
  write_text(files.manifest, j.dump(2) + "\n");
}

std::optional<ConvFeatureNet> load_featnet(const FeatNetFiles& files) {
  if (!fs::exists(files.checkpoint)) return std::nullopt;
  const Json j = read_json(files.manifest);
  NetConfig c;
  try {
    c.in_channels = j.at("in_channels").get<int>();
    c.width = j.at("width").get<int>();
    c.learned = j.at("learned").get<int>();
    c.bn_epsilon = j.at("bn_epsilon").get<double>();
    c.bn_momentum = j.at("bn_momentum").get<double>();
  } catch (const Json::exception& e) {
    fail(ErrorCode::data, std::string("malformed feature-net manifest: ") + e.what());
  }
  return ConvFeatureNet(c, read_checkpoint(files.checkpoint));
}

std::string classifier_name(const BinaryClassifier& m, bool learned) {
  std::string s = m.kind == ClassifierKind::logistic ? "logistic" : "mlp";
  if (learned) s += "+featnet";
  return s;
}

}  // namespace

std::string run_synth(const RunConfig& config) {
  generate_dataset(config.n, config.phantom, config.anomaly_fraction, config.seed, config.out, config.jobs);
  return (fs::path(config.out) / "index.json").string();
}

std::string run_segment(const RunConfig& config) {
  if (config.manifest.empty()) fail(ErrorCode::invalid_argument, "segment needs a manifest directory");
  const Sample sample = load_sample(config.manifest);
  ChannelMode mode = ChannelMode::hlz;
  if (config.mode) {
    mode = *config.mode;
  } else {
    // Best available: hlz, then pseudo, then any single plane.
    bool found = false;
    for (ChannelMode m : {ChannelMode::hlz, ChannelMode::pseudo, ChannelMode::h, ChannelMode::l, ChannelMode::z}) {
      bool ok = true;
      for (ChannelRole r : roles_for(m)) ok = ok && sample.image.find(r).has_value();
      if (ok) {
        mode = m;
        found = true;
        break;
      }
    }
    if (!found) fail(ErrorCode::data, "manifest provides no usable channel combination");
  }
  const MultiChannelImage image = select_channels(sample.image, mode);
  PipelineConfig p = pipeline_for(config, mode);
  const Labeling labeling = segment_image(image, p);
  ensure_dir(config.out);
  const fs::path png = fs::path(config.out) / "labels.png";
  write_labeling(labeling, png, fs::path(config.out) / "labels.json");
  return "segmented " + config.manifest + " (" + mode_name(mode) + ", " + std::string(to_string(p.backend)) +
         ") into " + std::to_string(labeling.count) + " superpixels: " + png.string();
}

std::string run_train(const RunConfig& config) {
  if (config.dataset.empty()) fail(ErrorCode::invalid_argument, "train needs a dataset index");
  config.classifier.validate();
  const std::vector<DatasetEntry> entries = read_index(config.dataset);
  const fs::path root = dataset_dir(config.dataset);
  const auto [train, test] = split_dataset(entries.size(), config.split, config.seed);
  const fs::path out = config.out;
  ensure_dir(out);

  Json split{{"seed", config.seed}, {"ratio", config.split}, {"dataset", config.dataset}};
  split["train"] = Json::array();
  split["test"] = Json::array();
  for (std::size_t i : train) split["train"].push_back(entries[i].path);
  for (std::size_t i : test) split["test"].push_back(entries[i].path);
  write_text(out / "split.json", split.dump(2) + "\n");

  const bool use_net = config.train_net || config.pipeline.features == FeatureSource::learned;
  std::string curve = "stage,mode,step,loss,accuracy\n";
  for (std::size_t mi = 0; mi < config.modes.size(); ++mi) {
    const ChannelMode mode = config.modes[mi];
    PipelineConfig p = pipeline_for(config, mode);
    std::optional<ConvFeatureNet> net;
    if (use_net) {
      p.features = FeatureSource::learned;
      std::vector<std::optional<TrainingInstance>> slots(train.size());
      parallel_for(train.size(), config.jobs, [&](std::size_t i) {
        const Sample s = load_sample(root / entries[train[i]].path);
        slots[i] = make_instance(s, mode, config.net_crop, stream_seed(config.seed, Stream::patch_crop, train[i]));
      });
      std::vector<TrainingInstance> instances;
      for (auto& s : slots) instances.push_back(std::move(*s));
      const MultiChannelImage& first = instances.front().image;
      NetConfig nc;
      nc.in_channels = static_cast<int>(first.plane_count());
      nc.width = config.net_width;
      nc.learned = config.net_learned;
      net.emplace(nc, stream_seed(config.seed, Stream::net_init, mi));
      FeatureTrainConfig fc;
      fc.soft = p.soft;
      // Keep the superpixel size of the full images on the training patches.
      const Sample probe = load_sample(root / entries[train[0]].path);
      const double full = static_cast<double>(probe.image.pixel_count());
      fc.soft.k = std::max(1, static_cast<int>(std::lround(first.pixel_count() * p.soft.k / full)));
      fc.loss.lambda = config.lambda;
      OptimizerState opt = config.classifier.optimizer;
      train_feature_net(*net, instances, fc, opt, config.net_steps, stream_seed(config.seed, Stream::net_batches, mi),
                        [&](const FeatureTrainProgress& pr) {
                          curve += "featnet," + mode_name(mode) + "," + std::to_string(pr.step) + "," +
                                   num(pr.loss.total) + ",\n";
                        });
      save_featnet(*net, opt, featnet_files(out, mode));
      log(config, "train " + mode_name(mode) + ": feature net trained for " + std::to_string(config.net_steps) +
                      " steps");
    }

    std::vector<std::vector<FeatureRow>> rows(train.size());
    std::vector<std::vector<SuperpixelClass>> truth(train.size());
    parallel_for(train.size(), config.jobs, [&](std::size_t i) {
      const Sample s = load_sample(root / entries[train[i]].path);
      PreparedSample prep = prepare_sample(s, p, net ? &*net : nullptr);
      if (!prep.truth) fail(ErrorCode::data, "training sample " + entries[train[i]].path + " has no anomaly mask");
      rows[i] = std::move(prep.features);
      truth[i] = std::move(*prep.truth);
    });
    std::vector<FeatureRow> features;
    std::vector<SuperpixelClass> labels;
    for (std::size_t i = 0; i < train.size(); ++i) {
      features.insert(features.end(), rows[i].begin(), rows[i].end());
      labels.insert(labels.end(), truth[i].begin(), truth[i].end());
    }
    std::size_t positives = 0;
    for (SuperpixelClass c : labels) positives += c == SuperpixelClass::anomaly;
    log(config, "train " + mode_name(mode) + ": " + std::to_string(features.size()) + " superpixels, " +
                    std::to_string(positives) + " anomalous");
    ClassifierTrainConfig cc = config.classifier;
    cc.seed = stream_seed(config.seed, Stream::classifier, mi);
    const BinaryClassifier model = train_classifier(features, labels, cc, [&](const ClassifierEpoch& e) {
      curve += "classifier," + mode_name(mode) + "," + std::to_string(e.epoch) + "," + num(e.loss) + "," +
               num(e.accuracy) + "\n";
    });
    save_classifier(model, out / ("classifier_" + mode_name(mode) + ".xseg"),
                    out / ("classifier_" + mode_name(mode) + ".json"));
  }
  write_text(out / "train_curve.csv", curve);
  return out.string();
}

std::string run_eval(const RunConfig& config) {
  if (config.model.empty()) fail(ErrorCode::invalid_argument, "eval needs a model directory");
  const fs::path model_dir = config.model;
  const Json split = read_json(model_dir / "split.json");
  std::string index = config.dataset;
  if (index.empty()) index = split.value("dataset", std::string());
  if (index.empty()) fail(ErrorCode::invalid_argument, "eval needs a dataset index");
  const std::vector<DatasetEntry> entries = read_index(index);
  const fs::path root = dataset_dir(index);
  std::vector<DatasetEntry> test;
  for (const auto& path : split.at("test")) {
    const std::string p = path.get<std::string>();
    bool anomalous = false;
    for (const DatasetEntry& e : entries)
      if (e.path == p) anomalous = e.anomalous;
    test.push_back({p, anomalous});
  }
  if (test.empty()) fail(ErrorCode::data, "test split is empty");

  const fs::path out = config.out;
  ensure_dir(out / "reports");
  std::vector<TableRow> rows, image_rows;
  for (ChannelMode mode : config.modes) {
    const std::string name = mode_name(mode);
    const BinaryClassifier model =
        load_classifier(model_dir / ("classifier_" + name + ".xseg"), model_dir / ("classifier_" + name + ".json"));
    const std::optional<ConvFeatureNet> net = load_featnet(featnet_files(model_dir, mode));
    PipelineConfig p = pipeline_for(config, mode);
    if (net) p.features = FeatureSource::learned;
    else if (p.features == FeatureSource::learned)
      fail(ErrorCode::state, "learned features requested but the model has no feature network for " + name);

    for (const char* sub : {"overlays", "labels", "predictions"}) ensure_dir(out / sub / name);
    std::vector<ConfusionCounts> counts(test.size());
    std::vector<std::uint8_t> flagged(test.size(), 0);
    const std::size_t overlay_limit =
        config.overlays < 0 ? test.size() : static_cast<std::size_t>(config.overlays);
    parallel_for(test.size(), config.jobs, [&](std::size_t i) {
      const Sample s = load_sample(root / test[i].path);
      const PipelineResult r = run_pipeline(s, p, model, net ? &*net : nullptr);
      if (!r.counts) fail(ErrorCode::data, "test sample " + test[i].path + " has no anomaly mask");
      counts[i] = *r.counts;
      for (const SuperpixelLabel& l : r.labels) flagged[i] |= l.value == SuperpixelClass::anomaly;
      const std::string stem = fs::path(test[i].path).filename().string();
      write_labeling(r.prepared.labeling, out / "labels" / name / (stem + ".png"),
                     out / "labels" / name / (stem + ".json"));
      write_predictions_csv(out / "predictions" / name / (stem + ".csv"), r.labels);
      if (i < overlay_limit)
        png::write_rgb(out / "overlays" / name / (stem + ".png"),
                       render_overlay(r.prepared.image, r.prepared.labeling, r.labels));
    });

    ConfusionCounts total, per_image;
    for (std::size_t i = 0; i < test.size(); ++i) {
      total += counts[i];
      if (test[i].anomalous) (flagged[i] ? per_image.tp : per_image.fn)++;
      else (flagged[i] ? per_image.fp : per_image.tn)++;
    }
    const EvalReport report = compute_metrics(total);
    const EvalReport image_report = compute_metrics(per_image);
    write_text(out / "reports" / (name + ".json"), report_json(name, report));
    write_text(out / "reports" / (name + "_image.json"), report_json(name, image_report));
    const std::string network = classifier_name(model, net.has_value());
    rows.push_back({name, network, report});
    image_rows.push_back({name, network, image_report});
    log(config, "eval " + name + ": " + format_metrics(report));
  }
  const std::string table = report_table(rows);
  write_text(out / "table.txt", table + "\nPer-image\n" + report_table(image_rows));
  return table;
}

}  // namespace xseg
