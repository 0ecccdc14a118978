// camb: command-line front end over the C API.

#include <cstdio>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "camb/camb.h"

namespace fs = std::filesystem;

namespace {

constexpr int kExitOk = 0;
constexpr int kExitRuntime = 1;
constexpr int kExitUsage = 2;

int report_failure(const char* what, camb_status st) {
  std::fprintf(stderr, "camb: %s: %s\n", what, camb_last_error());
  switch (st) {
    case CAMB_ERR_INVALID_ARGUMENT:
    case CAMB_ERR_UNSUPPORTED:
    case CAMB_ERR_OUT_OF_RANGE:
    case CAMB_ERR_NULL_ARGUMENT:
      return kExitUsage;
    default:
      return kExitRuntime;
  }
}

struct ModelGuard {
  camb_model* p = nullptr;
  ~ModelGuard() { camb_model_close(p); }
};
struct ImageGuard {
  camb_image* p = nullptr;
  ~ImageGuard() { camb_image_free(p); }
};
struct SaliencyGuard {
  camb_saliency* p = nullptr;
  ~SaliencyGuard() { camb_saliency_free(p); }
};

struct ExplainArgs {
  std::string image;
  std::string model = "toy";
  std::string layer;
  std::string method = "iscam";
  int class_index = -1;
  int n_steps = 15;
  double sigma = 2.0;
  int smooth_samples = 15;
  std::uint64_t seed = 0;
  std::string softmax = "auto";
  std::string iscam_path = "linear";
  std::string out = ".";
  int top = 5;
};

int cmd_explain(const ExplainArgs& a) {
  ModelGuard model;
  if (auto st = camb_model_open(a.model.c_str(), &model.p); st != CAMB_OK) return report_failure("cannot open model", st);
  ImageGuard image;
  if (auto st = camb_image_load(a.image.c_str(), &image.p); st != CAMB_OK) return report_failure("cannot load image", st);

  std::vector<int> classes(static_cast<std::size_t>(a.top));
  std::vector<double> probs(static_cast<std::size_t>(a.top));
  int count = 0;
  if (auto st = camb_model_top_k(model.p, image.p, a.top, classes.data(), probs.data(), &count); st != CAMB_OK) {
    return report_failure("forward pass failed", st);
  }
  std::printf("top-%d classes:\n", count);
  for (int i = 0; i < count; ++i) std::printf("  %d  class %-6d p=%.6f\n", i + 1, classes[i], probs[i]);

  camb_explain_options opt;
  camb_explain_options_init(&opt);
  opt.method = a.method.c_str();
  opt.layer = a.layer.empty() ? nullptr : a.layer.c_str();
  opt.class_index = a.class_index;
  opt.n_steps = a.n_steps;
  opt.sigma = a.sigma;
  opt.smooth_samples = a.smooth_samples;
  opt.seed = a.seed;
  opt.softmax_weights = a.softmax == "on" ? 1 : a.softmax == "off" ? 0 : -1;
  opt.iscam_path = a.iscam_path.c_str();

  SaliencyGuard sal;
  if (auto st = camb_explain(model.p, image.p, &opt, &sal.p); st != CAMB_OK) return report_failure("explain failed", st);
  int cls = 0;
  camb_saliency_class(sal.p, &cls);

  std::error_code ec;
  fs::create_directories(a.out, ec);
  const std::string stem = fs::path(a.image).stem().string();
  const fs::path overlay = fs::path(a.out) / (stem + "." + a.method + ".overlay.png");
  const fs::path raw = fs::path(a.out) / (stem + "." + a.method + ".npy");
  if (auto st = camb_saliency_write_overlay(sal.p, image.p, overlay.string().c_str()); st != CAMB_OK) {
    return report_failure("cannot write overlay", st);
  }
  if (auto st = camb_saliency_write_npy(sal.p, raw.string().c_str()); st != CAMB_OK) {
    return report_failure("cannot write map", st);
  }
  std::printf("explained class %d with %s\n", cls, a.method.c_str());
  std::printf("overlay: %s\nmap:     %s\n", overlay.string().c_str(), raw.string().c_str());
  return kExitOk;
}

int cmd_layers(const std::string& spec) {
  ModelGuard model;
  if (auto st = camb_model_open(spec.c_str(), &model.p); st != CAMB_OK) return report_failure("cannot open model", st);
  const char* name = nullptr;
  const char* def = nullptr;
  int n = 0, classes = 0, h = 0, w = 0, grads = 0;
  camb_model_name(model.p, &name);
  camb_model_default_layer(model.p, &def);
  camb_model_layer_count(model.p, &n);
  camb_model_class_count(model.p, &classes);
  camb_model_input_size(model.p, &h, &w);
  camb_model_capabilities(model.p, nullptr, nullptr, &grads);
  std::printf("model %s: input %dx%d, %d classes, gradients %s\n", name, h, w, classes, grads ? "yes" : "no");
  for (int i = 0; i < n; ++i) {
    const char* layer = nullptr;
    camb_model_layer_name(model.p, i, &layer);
    std::printf("%s%s\n", layer, std::string(layer) == def ? "  (default)" : "");
  }
  return kExitOk;
}

int cmd_evaluate(const std::string& config) {
  camb_eval_summary s{};
  if (auto st = camb_evaluate(config.c_str(), &s); st != CAMB_OK) return report_failure("evaluate failed", st);
  std::printf("scored %d images (%d failed, %d annotation lines skipped), %d records\n", s.images_scored,
              s.images_failed, s.annotations_skipped, s.records);
  for (const char* f : {"records.csv", "aggregate.json", "tables.md", "insertion_curve.png", "deletion_curve.png"}) {
    const fs::path p = fs::path(s.output_dir) / f;
    if (fs::exists(p)) std::printf("%s\n", p.string().c_str());
  }
  return kExitOk;
}

int cmd_report(const std::vector<std::string>& records, const std::string& out) {
  std::vector<const char*> paths;
  for (const auto& r : records) paths.push_back(r.c_str());
  int n = 0;
  if (auto st = camb_report(paths.data(), static_cast<int>(paths.size()), out.c_str(), &n); st != CAMB_OK) {
    return report_failure("report failed", st);
  }
  std::printf("aggregated %d records\n", n);
  for (const char* f : {"records.csv", "aggregate.json", "tables.md", "insertion_curve.png", "deletion_curve.png"}) {
    const fs::path p = fs::path(out) / f;
    if (fs::exists(p)) std::printf("%s\n", p.string().c_str());
  }
  return kExitOk;
}

int cmd_convert(const std::vector<std::string>& inputs, const std::string& synsets, const std::string& out) {
  std::vector<const char*> paths;
  for (const auto& i : inputs) paths.push_back(i.c_str());
  int converted = 0, failed = 0;
  const auto st = camb_convert_annotations(paths.data(), static_cast<int>(paths.size()),
                                           synsets.empty() ? nullptr : synsets.c_str(), out.c_str(), &converted, &failed);
  if (st != CAMB_OK) return report_failure("conversion failed", st);
  std::printf("converted %d files (%d failed) -> %s\n", converted, failed, out.c_str());
  return failed > 0 && converted == 0 ? kExitRuntime : kExitOk;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Class activation maps and their evaluation"};
  app.require_subcommand(1);
  app.set_version_flag("--version", std::string("camb ") + camb_version());
  std::string log_level = "warn";
  app.add_option("--log-level", log_level, "trace, debug, info, warn, error or off")->capture_default_str();

  ExplainArgs ex;
  auto* explain = app.add_subcommand("explain", "Explain one image and write an overlay and the raw map");
  explain->add_option("image", ex.image, "Input image (PNG or JPEG)")->required()->check(CLI::ExistingFile);
  explain->add_option("--model", ex.model, "'toy' or an .onnx file")->capture_default_str();
  explain->add_option("--layer", ex.layer, "Target layer (default: the model's default layer)");
  explain->add_option("--method", ex.method, "cam, gradcam, gradcampp, sgradcampp, scorecam, sscam or iscam")
      ->capture_default_str()
      ->check(CLI::IsMember({"cam", "gradcam", "gradcampp", "sgradcampp", "scorecam", "sscam", "iscam"}));
  explain->add_option("--class", ex.class_index, "Class to explain (-1: top-1 prediction)")->capture_default_str();
  explain->add_option("--n-steps", ex.n_steps, "IS-CAM steps / SS-CAM noise draws")->capture_default_str()->check(CLI::PositiveNumber);
  explain->add_option("--sigma", ex.sigma, "Noise standard deviation")->capture_default_str()->check(CLI::NonNegativeNumber);
  explain->add_option("--smooth-samples", ex.smooth_samples, "Smooth Grad-CAM++ noise draws")->capture_default_str()->check(CLI::PositiveNumber);
  explain->add_option("--seed", ex.seed, "Noise seed")->capture_default_str();
  explain->add_option("--softmax-weights", ex.softmax, "Softmax over channel weights")
      ->capture_default_str()
      ->check(CLI::IsMember({"auto", "on", "off"}));
  explain->add_option("--iscam-path", ex.iscam_path, "linear or cumulative")
      ->capture_default_str()
      ->check(CLI::IsMember({"linear", "cumulative"}));
  explain->add_option("--out", ex.out, "Output directory")->capture_default_str();
  explain->add_option("--top", ex.top, "Number of class scores to print")->capture_default_str()->check(CLI::PositiveNumber);

  std::string config;
  auto* evaluate = app.add_subcommand("evaluate", "Run an experiment from a JSON config");
  evaluate->add_option("--config", config, "Experiment config")->required();

  std::vector<std::string> records;
  std::string report_out;
  auto* report = app.add_subcommand("report", "Re-aggregate records.csv files");
  report->add_option("--records", records, "One or more records.csv files")->required()->check(CLI::ExistingFile);
  report->add_option("--out", report_out, "Output directory")->required();

  std::string layers_model = "toy";
  auto* layers = app.add_subcommand("layers", "List the layers a model exposes");
  layers->add_option("--model", layers_model, "'toy' or an .onnx file")->capture_default_str();

  std::vector<std::string> xml_inputs;
  std::string from = "voc-xml", to = "jsonl", synsets, convert_out;
  auto* convert = app.add_subcommand("convert-annotations", "Convert XML box annotations to JSON lines");
  convert->add_option("inputs", xml_inputs, "XML files or directories")->required();
  convert->add_option("--from", from, "Input format")->capture_default_str()->check(CLI::IsMember({"voc-xml"}));
  convert->add_option("--to", to, "Output format")->capture_default_str()->check(CLI::IsMember({"jsonl"}));
  convert->add_option("--synsets", synsets, "Synset list mapping names to class indices by line");
  convert->add_option("--out", convert_out, "Output .jsonl file")->required();

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? kExitOk : kExitUsage;
  }

  if (auto st = camb_set_log_level(log_level.c_str()); st != CAMB_OK) return report_failure("bad --log-level", st);
  if (*explain) return cmd_explain(ex);
  if (*evaluate) return cmd_evaluate(config);
  if (*report) return cmd_report(records, report_out);
  if (*layers) return cmd_layers(layers_model);
  if (*convert) return cmd_convert(xml_inputs, synsets, convert_out);
  return kExitUsage;
}
