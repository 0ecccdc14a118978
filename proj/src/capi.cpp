#include "camb/camb.h"

#include <algorithm>
#include <cstdio>
#include <cstring>
#include <exception>
#include <memory>
#include <numeric>
#include <string>
#include <vector>

#include <fmt/format.h>
#include <spdlog/sinks/stdout_color_sinks.h>
#include <spdlog/spdlog.h>

#include "backend.hpp"
#include "cams.hpp"
#include "data.hpp"
#include "error.hpp"
#include "harness.hpp"
#include "imageio.hpp"

struct camb_model {
  std::unique_ptr<camb::ModelBackend> backend;
  std::string name;
  std::string default_layer;
  std::vector<std::string> layers;
};

struct camb_image {
  camb::Image raw;
};

struct camb_saliency {
  camb::SaliencyMap map;
};

namespace {

thread_local std::string last_error;

// Diagnostics go to stderr so command output on stdout stays parseable.
[[maybe_unused]] const bool logger_ready = [] {
  spdlog::set_default_logger(spdlog::stderr_color_mt("camb"));
  return true;
}();

camb_status to_status(camb::ErrorCode code) {
  switch (code) {
    case camb::ErrorCode::kInvalidArgument: return CAMB_ERR_INVALID_ARGUMENT;
    case camb::ErrorCode::kShapeMismatch: return CAMB_ERR_SHAPE_MISMATCH;
    case camb::ErrorCode::kOutOfRange: return CAMB_ERR_OUT_OF_RANGE;
    case camb::ErrorCode::kUnsupported: return CAMB_ERR_UNSUPPORTED;
    case camb::ErrorCode::kIo: return CAMB_ERR_IO;
    case camb::ErrorCode::kParse: return CAMB_ERR_PARSE;
    case camb::ErrorCode::kRuntime: return CAMB_ERR_RUNTIME;
  }
  return CAMB_ERR_RUNTIME;
}

template <typename F>
camb_status guarded(F&& f) {
  try {
    f();
    last_error.clear();
    return CAMB_OK;
  } catch (const camb::Error& e) {
    last_error = e.what();
    return to_status(e.code());
  } catch (const std::bad_alloc&) {
    last_error = "out of memory";
  } catch (const std::exception& e) {
    last_error = e.what();
  } catch (...) {
    last_error = "unknown error";
  }
  return CAMB_ERR_RUNTIME;
}

template <typename... Ts>
bool any_null(const Ts*... ps) {
  return ((ps == nullptr) || ...);
}

camb_status null_argument(const char* fn) {
  last_error = fmt::format("{}: required argument is NULL", fn);
  return CAMB_ERR_NULL_ARGUMENT;
}

}  // namespace

extern "C" {

const char* camb_version(void) { return "1.0.0"; }

const char* camb_status_name(camb_status status) {
  switch (status) {
    case CAMB_OK: return "ok";
    case CAMB_ERR_INVALID_ARGUMENT: return "invalid argument";
    case CAMB_ERR_SHAPE_MISMATCH: return "shape mismatch";
    case CAMB_ERR_OUT_OF_RANGE: return "out of range";
    case CAMB_ERR_UNSUPPORTED: return "unsupported";
    case CAMB_ERR_IO: return "i/o error";
    case CAMB_ERR_PARSE: return "parse error";
    case CAMB_ERR_RUNTIME: return "runtime error";
    case CAMB_ERR_NULL_ARGUMENT: return "null argument";
  }
  return "unknown status";
}

const char* camb_last_error(void) { return last_error.c_str(); }

camb_status camb_set_log_level(const char* level) {
  if (level == nullptr) return null_argument(__func__);
  return guarded([&] {
    const auto lvl = spdlog::level::from_str(level);
    if (lvl == spdlog::level::off && std::strcmp(level, "off") != 0) {
      camb::fail(camb::ErrorCode::kInvalidArgument, fmt::format("unknown log level '{}'", level));
    }
    spdlog::set_level(lvl);
  });
}

camb_status camb_model_open(const char* spec, camb_model** out) {
  if (any_null(spec, out)) return null_argument(__func__);
  *out = nullptr;
  return guarded([&] {
    auto m = std::make_unique<camb_model>();
    m->backend = camb::open_backend(spec);
    m->name = m->backend->name();
    m->default_layer = m->backend->default_layer();
    m->layers = m->backend->layers();
    *out = m.release();
  });
}

void camb_model_close(camb_model* model) { delete model; }

camb_status camb_model_name(const camb_model* model, const char** out) {
  if (any_null(model, out)) return null_argument(__func__);
  *out = model->name.c_str();
  return CAMB_OK;
}

camb_status camb_model_input_size(const camb_model* model, int* height, int* width) {
  if (any_null(model, height, width)) return null_argument(__func__);
  const camb::Size s = model->backend->input_size();
  *height = s.height;
  *width = s.width;
  return CAMB_OK;
}

camb_status camb_model_class_count(const camb_model* model, int* out) {
  if (any_null(model, out)) return null_argument(__func__);
  *out = model->backend->class_count();
  return CAMB_OK;
}

camb_status camb_model_layer_count(const camb_model* model, int* out) {
  if (any_null(model, out)) return null_argument(__func__);
  *out = static_cast<int>(model->layers.size());
  return CAMB_OK;
}

camb_status camb_model_layer_name(const camb_model* model, int index, const char** out) {
  if (any_null(model, out)) return null_argument(__func__);
  if (index < 0 || index >= static_cast<int>(model->layers.size())) {
    last_error = fmt::format("layer index {} out of range [0, {})", index, model->layers.size());
    return CAMB_ERR_OUT_OF_RANGE;
  }
  *out = model->layers[static_cast<std::size_t>(index)].c_str();
  return CAMB_OK;
}

camb_status camb_model_default_layer(const camb_model* model, const char** out) {
  if (any_null(model, out)) return null_argument(__func__);
  *out = model->default_layer.c_str();
  return CAMB_OK;
}

camb_status camb_model_capabilities(const camb_model* model, int* forward, int* activations, int* gradients) {
  if (model == nullptr) return null_argument(__func__);
  const camb::Capabilities c = model->backend->capabilities();
  if (forward) *forward = c.forward ? 1 : 0;
  if (activations) *activations = c.activations ? 1 : 0;
  if (gradients) *gradients = c.gradients ? 1 : 0;
  return CAMB_OK;
}

camb_status camb_image_load(const char* path, camb_image** out) {
  if (any_null(path, out)) return null_argument(__func__);
  *out = nullptr;
  return guarded([&] { *out = new camb_image{camb::load_image(path)}; });
}

camb_status camb_image_from_rgb8(const uint8_t* rgb, int height, int width, camb_image** out) {
  if (any_null(rgb, out)) return null_argument(__func__);
  *out = nullptr;
  return guarded([&] {
    camb::Image img(height, width, 3, camb::Space::kRaw);
    for (int y = 0; y < height; ++y) {
      for (int x = 0; x < width; ++x) {
        const uint8_t* px = rgb + (static_cast<std::size_t>(y) * width + x) * 3;
        for (int c = 0; c < 3; ++c) img.at(c, y, x) = px[c];
      }
    }
    *out = new camb_image{std::move(img)};
  });
}

void camb_image_free(camb_image* image) { delete image; }

camb_status camb_image_size(const camb_image* image, int* height, int* width) {
  if (any_null(image, height, width)) return null_argument(__func__);
  *height = image->raw.height();
  *width = image->raw.width();
  return CAMB_OK;
}

camb_status camb_model_top_k(const camb_model* model, const camb_image* image, int k, int* classes,
                             double* probabilities, int* count) {
  if (any_null(model, image, classes, probabilities, count)) return null_argument(__func__);
  return guarded([&] {
    if (k < 1) camb::fail(camb::ErrorCode::kInvalidArgument, "k must be >= 1");
    const camb::Image x = camb::preprocess(image->raw, model->backend->input_size());
    const auto probs = model->backend->forward(x).scores;
    std::vector<int> order(probs.size());
    std::iota(order.begin(), order.end(), 0);
    std::stable_sort(order.begin(), order.end(), [&](int a, int b) { return probs[a] > probs[b]; });
    const int n = std::min<int>(k, static_cast<int>(order.size()));
    for (int i = 0; i < n; ++i) {
      classes[i] = order[static_cast<std::size_t>(i)];
      probabilities[i] = probs[static_cast<std::size_t>(order[static_cast<std::size_t>(i)])];
    }
    *count = n;
  });
}

void camb_explain_options_init(camb_explain_options* options) {
  if (options == nullptr) return;
  const camb::CamHyperparams d;
  options->method = "iscam";
  options->layer = nullptr;
  options->class_index = -1;
  options->n_steps = d.n_steps;
  options->sigma = d.sigma;
  options->smooth_samples = d.smooth_samples;
  options->seed = d.seed;
  options->softmax_weights = -1;
  options->iscam_path = nullptr;
}

camb_status camb_explain(const camb_model* model, const camb_image* image, const camb_explain_options* options,
                         camb_saliency** out) {
  if (any_null(model, image, options, out)) return null_argument(__func__);
  *out = nullptr;
  return guarded([&] {
    using camb::ErrorCode;
    if (options->method == nullptr) camb::fail(ErrorCode::kInvalidArgument, "options.method is NULL");
    const auto method = camb::parse_method(options->method);
    if (!method) {
      camb::fail(ErrorCode::kInvalidArgument,
                 fmt::format("unknown method '{}' (expected cam, gradcam, gradcampp, sgradcampp, scorecam, sscam, iscam)",
                             options->method));
    }
    camb::CamHyperparams h;
    h.n_steps = options->n_steps;
    h.sigma = options->sigma;
    h.smooth_samples = options->smooth_samples;
    h.seed = options->seed;
    if (options->softmax_weights == 0 || options->softmax_weights == 1) {
      h.softmax_weights = options->softmax_weights == 1;
    } else if (options->softmax_weights != -1) {
      camb::fail(ErrorCode::kInvalidArgument, "softmax_weights must be -1, 0 or 1");
    }
    if (options->iscam_path != nullptr) {
      const auto p = camb::parse_path(options->iscam_path);
      if (!p) camb::fail(ErrorCode::kInvalidArgument, fmt::format("unknown IS-CAM path '{}'", options->iscam_path));
      h.iscam_path = *p;
    }
    h.validate();
    const camb::ModelBackend& b = *model->backend;
    const std::string layer = options->layer ? options->layer : model->default_layer;
    const camb::Image x = camb::preprocess(image->raw, b.input_size());
    if (options->class_index < -1) camb::fail(ErrorCode::kOutOfRange, "class_index must be >= -1");
    const int c = options->class_index >= 0 ? options->class_index : b.forward(x).argmax();
    *out = new camb_saliency{camb::explain(*method, b, x, layer, c, h).map};
  });
}

void camb_saliency_free(camb_saliency* saliency) { delete saliency; }

camb_status camb_saliency_size(const camb_saliency* saliency, int* height, int* width) {
  if (any_null(saliency, height, width)) return null_argument(__func__);
  *height = saliency->map.data.rows();
  *width = saliency->map.data.cols();
  return CAMB_OK;
}

camb_status camb_saliency_class(const camb_saliency* saliency, int* class_index) {
  if (any_null(saliency, class_index)) return null_argument(__func__);
  *class_index = saliency->map.class_index;
  return CAMB_OK;
}

camb_status camb_saliency_data(const camb_saliency* saliency, const double** values) {
  if (any_null(saliency, values)) return null_argument(__func__);
  *values = saliency->map.data.values().data();
  return CAMB_OK;
}

camb_status camb_saliency_write_npy(const camb_saliency* saliency, const char* path) {
  if (any_null(saliency, path)) return null_argument(__func__);
  return guarded([&] { camb::write_npy(saliency->map.data, path); });
}

camb_status camb_saliency_write_overlay(const camb_saliency* saliency, const camb_image* image, const char* path) {
  if (any_null(saliency, image, path)) return null_argument(__func__);
  return guarded([&] {
    const camb::Map2D resized = camb::resize_bilinear(saliency->map.data, image->raw.size());
    camb::write_overlay(resized, image->raw, path);
  });
}

camb_status camb_evaluate(const char* config_path, camb_eval_summary* summary) {
  if (any_null(config_path, summary)) return null_argument(__func__);
  return guarded([&] {
    const camb::ExperimentConfig cfg = camb::load_config(config_path);
    const camb::RunSummary s = camb::run_experiment(cfg);
    summary->images_scored = s.images_scored;
    summary->images_failed = s.images_failed;
    summary->annotations_skipped = s.annotations_skipped;
    summary->records = static_cast<int>(s.records.size());
    const std::string dir = cfg.output_dir.string();
    std::snprintf(summary->output_dir, sizeof(summary->output_dir), "%s", dir.c_str());
  });
}

camb_status camb_report(const char* const* records_paths, int count, const char* output_dir, int* records) {
  if (any_null(records_paths, output_dir)) return null_argument(__func__);
  return guarded([&] {
    if (count < 1) camb::fail(camb::ErrorCode::kInvalidArgument, "at least one records file is required");
    std::vector<camb::EvalRecord> all;
    for (int i = 0; i < count; ++i) {
      if (records_paths[i] == nullptr) camb::fail(camb::ErrorCode::kInvalidArgument, "records path is NULL");
      auto part = camb::read_records_csv(records_paths[i]);
      all.insert(all.end(), std::make_move_iterator(part.begin()), std::make_move_iterator(part.end()));
    }
    camb::render_report(camb::aggregate(all), all, output_dir);
    if (records) *records = static_cast<int>(all.size());
  });
}

camb_status camb_convert_annotations(const char* const* inputs, int count, const char* synsets, const char* output,
                                     int* converted, int* failed) {
  if (any_null(inputs, output)) return null_argument(__func__);
  return guarded([&] {
    if (count < 1) camb::fail(camb::ErrorCode::kInvalidArgument, "at least one input is required");
    std::vector<std::filesystem::path> paths;
    for (int i = 0; i < count; ++i) {
      if (inputs[i] == nullptr) camb::fail(camb::ErrorCode::kInvalidArgument, "input path is NULL");
      paths.emplace_back(inputs[i]);
    }
    const auto report = camb::convert_voc_to_jsonl(paths, synsets ? synsets : "", output);
    if (converted) *converted = report.converted;
    if (failed) *failed = report.failed;
  });
}

}  // extern "C"
