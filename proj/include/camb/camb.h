#ifndef CAMB_CAMB_H
#define CAMB_CAMB_H

/* C interface to the camb library: class activation maps and their
 * evaluation. All functions return a camb_status; on failure a description is
 * available from camb_last_error() on the calling thread. Strings returned
 * through `const char**` stay valid while the owning handle lives. */

#include <stddef.h>
#include <stdint.h>

#if defined(_WIN32)
#define CAMB_API __declspec(dllexport)
#else
#define CAMB_API __attribute__((visibility("default")))
#endif

#ifdef __cplusplus
extern "C" {
#endif

typedef enum camb_status {
  CAMB_OK = 0,
  CAMB_ERR_INVALID_ARGUMENT = 1,
  CAMB_ERR_SHAPE_MISMATCH = 2,
  CAMB_ERR_OUT_OF_RANGE = 3,
  CAMB_ERR_UNSUPPORTED = 4,
  CAMB_ERR_IO = 5,
  CAMB_ERR_PARSE = 6,
  CAMB_ERR_RUNTIME = 7,
  CAMB_ERR_NULL_ARGUMENT = 8
} camb_status;

typedef struct camb_model camb_model;
typedef struct camb_image camb_image;
typedef struct camb_saliency camb_saliency;

CAMB_API const char* camb_version(void);
CAMB_API const char* camb_status_name(camb_status status);
/* Message for the most recent failure on this thread ("" if none). */
CAMB_API const char* camb_last_error(void);
/* trace, debug, info, warn, error, off */
CAMB_API camb_status camb_set_log_level(const char* level);

/* ---- models ---- */

/* "toy" or a path to an .onnx file (relative paths also tried under
 * $CAMB_CACHE). */
CAMB_API camb_status camb_model_open(const char* spec, camb_model** out);
CAMB_API void camb_model_close(camb_model* model);
CAMB_API camb_status camb_model_name(const camb_model* model, const char** out);
CAMB_API camb_status camb_model_input_size(const camb_model* model, int* height, int* width);
CAMB_API camb_status camb_model_class_count(const camb_model* model, int* out);
CAMB_API camb_status camb_model_layer_count(const camb_model* model, int* out);
CAMB_API camb_status camb_model_layer_name(const camb_model* model, int index, const char** out);
CAMB_API camb_status camb_model_default_layer(const camb_model* model, const char** out);
/* Each flag is 0 or 1; any pointer may be NULL. */
CAMB_API camb_status camb_model_capabilities(const camb_model* model, int* forward, int* activations, int* gradients);

/* ---- images ---- */

CAMB_API camb_status camb_image_load(const char* path, camb_image** out);
/* Interleaved 8-bit RGB, row-major, height * width * 3 bytes. */
CAMB_API camb_status camb_image_from_rgb8(const uint8_t* rgb, int height, int width, camb_image** out);
CAMB_API void camb_image_free(camb_image* image);
CAMB_API camb_status camb_image_size(const camb_image* image, int* height, int* width);

/* Softmax top-k over the preprocessed image. Writes up to k entries and the
 * number written to *count. */
CAMB_API camb_status camb_model_top_k(const camb_model* model, const camb_image* image, int k, int* classes,
                                      double* probabilities, int* count);

/* ---- explanations ---- */

typedef struct camb_explain_options {
  const char* method;         /* cam, gradcam, gradcampp, sgradcampp, scorecam, sscam, iscam */
  const char* layer;          /* NULL: the model's default layer */
  int class_index;            /* -1: top-1 prediction */
  int n_steps;                /* IS-CAM integration steps, SS-CAM noise draws */
  double sigma;               /* noise std for SS-CAM and Smooth Grad-CAM++ */
  int smooth_samples;         /* Smooth Grad-CAM++ noise draws */
  uint64_t seed;
  int softmax_weights;        /* -1: method default, 0: off, 1: on */
  const char* iscam_path;     /* NULL or "linear", "cumulative" */
} camb_explain_options;

CAMB_API void camb_explain_options_init(camb_explain_options* options);

CAMB_API camb_status camb_explain(const camb_model* model, const camb_image* image,
                                  const camb_explain_options* options, camb_saliency** out);
CAMB_API void camb_saliency_free(camb_saliency* saliency);
/* The map is at model input resolution, values in [0, 1]. */
CAMB_API camb_status camb_saliency_size(const camb_saliency* saliency, int* height, int* width);
CAMB_API camb_status camb_saliency_class(const camb_saliency* saliency, int* class_index);
CAMB_API camb_status camb_saliency_data(const camb_saliency* saliency, const double** values);
/* float64 .npy at model input resolution. */
CAMB_API camb_status camb_saliency_write_npy(const camb_saliency* saliency, const char* path);
/* Colormapped map resized to the image and blended over it. */
CAMB_API camb_status camb_saliency_write_overlay(const camb_saliency* saliency, const camb_image* image,
                                                 const char* path);

/* ---- evaluation ---- */

typedef struct camb_eval_summary {
  int images_scored;
  int images_failed;
  int annotations_skipped;
  int records;
  char output_dir[4096];
} camb_eval_summary;

/* Runs the experiment described by a JSON config and writes records.csv,
 * aggregate.json, tables.md and curve charts into its output_dir. */
CAMB_API camb_status camb_evaluate(const char* config_path, camb_eval_summary* summary);

/* Re-aggregates one or more records.csv files into `output_dir`. */
CAMB_API camb_status camb_report(const char* const* records_paths, int count, const char* output_dir,
                                 int* records);

/* VOC/ILSVRC XML (files or directories) to JSON-lines annotations. `synsets`
 * may be NULL when object names are class indices. */
CAMB_API camb_status camb_convert_annotations(const char* const* inputs, int count, const char* synsets,
                                              const char* output, int* converted, int* failed);

#ifdef __cplusplus
}
#endif

#endif
