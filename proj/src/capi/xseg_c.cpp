#include "xseg/xseg.h"

#include <exception>
#include <new>
#include <string>

#include "xseg/config.hpp"
#include "xseg/error.hpp"
#include "xseg/metrics.hpp"
#include "xseg/pipeline.hpp"
#include "xseg/workflows.hpp"

struct xseg_image {
  xseg::MultiChannelImage image;
  std::vector<std::string> roles;
};

struct xseg_labeling {
  xseg::Labeling labeling;
};

struct xseg_string {
  std::string text;
};

namespace {

thread_local std::string last_error;

xseg_status map_code(xseg::ErrorCode code) {
  switch (code) {
    case xseg::ErrorCode::invalid_argument: return XSEG_ERR_INVALID_ARGUMENT;
    case xseg::ErrorCode::io: return XSEG_ERR_IO;
    case xseg::ErrorCode::data: return XSEG_ERR_DATA;
    case xseg::ErrorCode::numeric: return XSEG_ERR_NUMERIC;
    case xseg::ErrorCode::state: return XSEG_ERR_STATE;
  }
  return XSEG_ERR_INTERNAL;
}

template <typename F>
xseg_status guarded(F&& fn) {
  last_error.clear();
  try {
    fn();
    return XSEG_OK;
  } catch (const xseg::Error& e) {
    last_error = e.what();
    return map_code(e.code());
  } catch (const std::bad_alloc&) {
    last_error = "out of memory";
  } catch (const std::exception& e) {
    last_error = e.what();
  } catch (...) {
    last_error = "unknown error";
  }
  return XSEG_ERR_INTERNAL;
}

void require(const void* p, const char* what) {
  if (!p) xseg::fail(xseg::ErrorCode::invalid_argument, std::string(what) + " must not be NULL");
}

xseg_image* wrap(xseg::MultiChannelImage image) {
  auto* out = new xseg_image{std::move(image), {}};
  for (const xseg::Plane& p : out->image.planes()) out->roles.emplace_back(xseg::to_string(p.role));
  return out;
}

template <typename F>
xseg_status run_workflow(const char* config_json, xseg_string** result, F&& fn) {
  return guarded([&] {
    const xseg::RunConfig config = xseg::parse_run_config(config_json ? config_json : "");
    std::string text = fn(config);
    if (result) *result = new xseg_string{std::move(text)};
  });
}

}  // namespace

extern "C" {

const char* xseg_version(void) { return "1.0.0"; }

const char* xseg_last_error(void) { return last_error.c_str(); }

const char* xseg_status_name(xseg_status status) {
  switch (status) {
    case XSEG_OK: return "ok";
    case XSEG_ERR_INVALID_ARGUMENT: return "invalid_argument";
    case XSEG_ERR_IO: return "io";
    case XSEG_ERR_DATA: return "data";
    case XSEG_ERR_NUMERIC: return "numeric";
    case XSEG_ERR_STATE: return "state";
    case XSEG_ERR_INTERNAL: return "internal";
  }
  return "unknown";
}

const char* xseg_string_data(const xseg_string* s) { return s ? s->text.c_str() : ""; }

void xseg_string_free(xseg_string* s) { delete s; }

xseg_status xseg_image_load(const char* manifest_dir, xseg_image** out) {
  return guarded([&] {
    require(manifest_dir, "manifest_dir");
    require(out, "out");
    *out = wrap(xseg::load_manifest(manifest_dir));
  });
}

xseg_status xseg_image_select(const xseg_image* image, const char* mode, xseg_image** out) {
  return guarded([&] {
    require(image, "image");
    require(mode, "mode");
    require(out, "out");
    *out = wrap(xseg::select_channels(image->image, xseg::parse_channel_mode(mode)));
  });
}

xseg_status xseg_image_info(const xseg_image* image, int* width, int* height, int* planes) {
  return guarded([&] {
    require(image, "image");
    if (width) *width = image->image.width();
    if (height) *height = image->image.height();
    if (planes) *planes = static_cast<int>(image->image.plane_count());
  });
}

xseg_status xseg_image_plane(const xseg_image* image, int index, const float** samples, const char** role) {
  return guarded([&] {
    require(image, "image");
    if (index < 0 || static_cast<std::size_t>(index) >= image->image.plane_count())
      xseg::fail(xseg::ErrorCode::invalid_argument, "plane index out of range");
    if (samples) *samples = image->image.samples(index).data();
    if (role) *role = image->roles[index].c_str();
  });
}

void xseg_image_free(xseg_image* image) { delete image; }

xseg_status xseg_segment(const xseg_image* image, const char* options_json, xseg_labeling** out) {
  return guarded([&] {
    require(image, "image");
    require(out, "out");
    const xseg::RunConfig config = xseg::parse_run_config(options_json ? options_json : "");
    *out = new xseg_labeling{xseg::segment_image(image->image, config.pipeline)};
  });
}

xseg_status xseg_labeling_info(const xseg_labeling* labeling, int* width, int* height, int* count) {
  return guarded([&] {
    require(labeling, "labeling");
    if (width) *width = labeling->labeling.width;
    if (height) *height = labeling->labeling.height;
    if (count) *count = labeling->labeling.count;
  });
}

xseg_status xseg_labeling_labels(const xseg_labeling* labeling, const int32_t** labels) {
  return guarded([&] {
    require(labeling, "labeling");
    require(labels, "labels");
    *labels = labeling->labeling.labels.data();
  });
}

xseg_status xseg_labeling_save(const xseg_labeling* labeling, const char* png_path, const char* sidecar_path) {
  return guarded([&] {
    require(labeling, "labeling");
    require(png_path, "png_path");
    require(sidecar_path, "sidecar_path");
    xseg::write_labeling(labeling->labeling, png_path, sidecar_path);
  });
}

void xseg_labeling_free(xseg_labeling* labeling) { delete labeling; }

xseg_status xseg_run_synth(const char* config_json, xseg_string** result) {
  return run_workflow(config_json, result, xseg::run_synth);
}

xseg_status xseg_run_segment(const char* config_json, xseg_string** result) {
  return run_workflow(config_json, result, xseg::run_segment);
}

xseg_status xseg_run_train(const char* config_json, xseg_string** result) {
  return run_workflow(config_json, result, xseg::run_train);
}

xseg_status xseg_run_eval(const char* config_json, xseg_string** result) {
  return run_workflow(config_json, result, xseg::run_eval);
}

xseg_status xseg_compute_metrics(uint64_t tp, uint64_t fn, uint64_t fp, uint64_t tn, xseg_metrics* out) {
  return guarded([&] {
    require(out, "out");
    const xseg::EvalReport r = xseg::compute_metrics({tp, fn, fp, tn});
    *out = {r.accuracy, r.precision, r.f1, r.tp_rate_percent, r.fp_rate_percent, r.flags.empty() ? 0 : 1};
  });
}

}  // extern "C"
