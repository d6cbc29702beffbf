/* C interface to the xseg segmentation and anomaly classification library.
 *
 * All objects are opaque handles released with their *_free function.
 * Every fallible call returns an xseg_status; on failure the message is
 * available from xseg_last_error() on the same thread until the next call.
 */
#ifndef XSEG_XSEG_H
#define XSEG_XSEG_H

#include <stddef.h>
#include <stdint.h>

#if defined(XSEG_BUILDING_LIBRARY)
#define XSEG_API __attribute__((visibility("default")))
#else
#define XSEG_API
#endif

#ifdef __cplusplus
extern "C" {
#endif

typedef enum xseg_status {
  XSEG_OK = 0,
  XSEG_ERR_INVALID_ARGUMENT = 1, /* bad configuration or arguments */
  XSEG_ERR_IO = 2,               /* missing or unwritable files */
  XSEG_ERR_DATA = 3,             /* input content violates a contract */
  XSEG_ERR_NUMERIC = 4,          /* non-finite values during computation */
  XSEG_ERR_STATE = 5,
  XSEG_ERR_INTERNAL = 6
} xseg_status;

typedef struct xseg_image xseg_image;
typedef struct xseg_labeling xseg_labeling;
typedef struct xseg_string xseg_string;

XSEG_API const char* xseg_version(void);
XSEG_API const char* xseg_last_error(void);
XSEG_API const char* xseg_status_name(xseg_status status);

/* Strings returned by the library. */
XSEG_API const char* xseg_string_data(const xseg_string* s);
XSEG_API void xseg_string_free(xseg_string* s);

/* Images ---------------------------------------------------------------- */

/* Loads a sample directory containing manifest.json. */
XSEG_API xseg_status xseg_image_load(const char* manifest_dir, xseg_image** out);
/* mode: "pseudo", "h", "l", "z" or "hlz". */
XSEG_API xseg_status xseg_image_select(const xseg_image* image, const char* mode,
                                       xseg_image** out);
XSEG_API xseg_status xseg_image_info(const xseg_image* image, int* width, int* height,
                                     int* planes);
/* Borrowed pointer to width*height samples; valid while the image lives. */
XSEG_API xseg_status xseg_image_plane(const xseg_image* image, int index, const float** samples,
                                      const char** role);
XSEG_API void xseg_image_free(xseg_image* image);

/* Segmentation ---------------------------------------------------------- */

/* options_json keys: backend ("hard_slic"|"soft_slic"), k, m, iterations, v,
 * beta, min_region_fraction. NULL uses the library defaults. */
XSEG_API xseg_status xseg_segment(const xseg_image* image, const char* options_json,
                                  xseg_labeling** out);
XSEG_API xseg_status xseg_labeling_info(const xseg_labeling* labeling, int* width, int* height,
                                        int* count);
XSEG_API xseg_status xseg_labeling_labels(const xseg_labeling* labeling,
                                          const int32_t** labels);
/* 16-bit PNG label map plus JSON sidecar. */
XSEG_API xseg_status xseg_labeling_save(const xseg_labeling* labeling, const char* png_path,
                                        const char* sidecar_path);
XSEG_API void xseg_labeling_free(xseg_labeling* labeling);

/* Workflows --------------------------------------------------------------
 * config_json is a flat JSON object (see README for the keys). On success
 * *result (when non-NULL) receives a summary string: the index path for
 * synth, a summary line for segment, the model directory for train and the
 * formatted table for eval. */
XSEG_API xseg_status xseg_run_synth(const char* config_json, xseg_string** result);
XSEG_API xseg_status xseg_run_segment(const char* config_json, xseg_string** result);
XSEG_API xseg_status xseg_run_train(const char* config_json, xseg_string** result);
XSEG_API xseg_status xseg_run_eval(const char* config_json, xseg_string** result);

/* Metrics ----------------------------------------------------------------- */

typedef struct xseg_metrics {
  double accuracy;
  double precision;
  double f1;
  double tp_rate_percent;
  double fp_rate_percent;
  int degenerate; /* non-zero when a 0/0 ratio was reported as 0 */
} xseg_metrics;

XSEG_API xseg_status xseg_compute_metrics(uint64_t tp, uint64_t fn, uint64_t fp, uint64_t tn,
                                          xseg_metrics* out);

#ifdef __cplusplus
}
#endif

#endif /* XSEG_XSEG_H */
