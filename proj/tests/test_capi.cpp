// Exercises the shared library through its C header only.

#include <gtest/gtest.h>

#include <algorithm>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <string>
#include <vector>

#include <unistd.h>

#include "camb/camb.h"

namespace fs = std::filesystem;

namespace {

struct Model {
  camb_model* p = nullptr;
  ~Model() { camb_model_close(p); }
};
struct Img {
  camb_image* p = nullptr;
  ~Img() { camb_image_free(p); }
};
struct Sal {
  camb_saliency* p = nullptr;
  ~Sal() { camb_saliency_free(p); }
};

std::vector<uint8_t> red_patch_rgb(int h, int w) {
  std::vector<uint8_t> rgb(static_cast<std::size_t>(h) * w * 3, 128);
  for (int y = h / 4; y < h / 2; ++y) {
    for (int x = w / 4; x < w / 2; ++x) {
      uint8_t* px = &rgb[(static_cast<std::size_t>(y) * w + x) * 3];
      px[0] = 230;
      px[1] = 20;
      px[2] = 20;
    }
  }
  return rgb;
}

fs::path scratch(const std::string& tag) {
  fs::path p = fs::temp_directory_path() / ("camb_capi_" + tag + "_" + std::to_string(::getpid()));
  fs::remove_all(p);
  fs::create_directories(p);
  return p;
}

}  // namespace

TEST(CApi, VersionAndStatusNames) {
  EXPECT_STREQ(camb_version(), "1.0.0");
  EXPECT_STREQ(camb_status_name(CAMB_OK), "ok");
  EXPECT_STREQ(camb_status_name(CAMB_ERR_UNSUPPORTED), "unsupported");
  EXPECT_EQ(camb_set_log_level("error"), CAMB_OK);
  EXPECT_EQ(camb_set_log_level("loud"), CAMB_ERR_INVALID_ARGUMENT);
}

TEST(CApi, ModelIntrospection) {
  Model m;
  ASSERT_EQ(camb_model_open("toy", &m.p), CAMB_OK);
  const char* name = nullptr;
  ASSERT_EQ(camb_model_name(m.p, &name), CAMB_OK);
  EXPECT_STREQ(name, "toy");
  int h = 0, w = 0, classes = 0, layers = 0, grads = -1;
  EXPECT_EQ(camb_model_input_size(m.p, &h, &w), CAMB_OK);
  EXPECT_EQ(h, 224);
  EXPECT_EQ(w, 224);
  EXPECT_EQ(camb_model_class_count(m.p, &classes), CAMB_OK);
  EXPECT_EQ(classes, 3);
  EXPECT_EQ(camb_model_layer_count(m.p, &layers), CAMB_OK);
  EXPECT_EQ(layers, 1);
  const char* layer = nullptr;
  EXPECT_EQ(camb_model_layer_name(m.p, 0, &layer), CAMB_OK);
  EXPECT_STREQ(layer, "conv");
  EXPECT_EQ(camb_model_layer_name(m.p, 1, &layer), CAMB_ERR_OUT_OF_RANGE);
  EXPECT_EQ(camb_model_default_layer(m.p, &layer), CAMB_OK);
  EXPECT_STREQ(layer, "conv");
  EXPECT_EQ(camb_model_capabilities(m.p, nullptr, nullptr, &grads), CAMB_OK);
  EXPECT_EQ(grads, 1);
}

TEST(CApi, ErrorsAreReported) {
  camb_model* m = nullptr;
  EXPECT_EQ(camb_model_open(nullptr, &m), CAMB_ERR_NULL_ARGUMENT);
  EXPECT_EQ(camb_model_open("/no/such/file.onnx", &m), CAMB_ERR_IO);
  EXPECT_EQ(m, nullptr);
  EXPECT_NE(std::string(camb_last_error()).find("file.onnx"), std::string::npos);
  camb_image* img = nullptr;
  EXPECT_EQ(camb_image_load("/no/such.png", &img), CAMB_ERR_IO);
  EXPECT_EQ(camb_image_from_rgb8(nullptr, 4, 4, &img), CAMB_ERR_NULL_ARGUMENT);
  camb_model_close(nullptr);
  camb_image_free(nullptr);
  camb_saliency_free(nullptr);
}

TEST(CApi, ExplainTopKAndOutputs) {
  Model m;
  Img img;
  ASSERT_EQ(camb_model_open("toy", &m.p), CAMB_OK);
  const auto rgb = red_patch_rgb(300, 500);
  ASSERT_EQ(camb_image_from_rgb8(rgb.data(), 300, 500, &img.p), CAMB_OK);
  int h = 0, w = 0;
  EXPECT_EQ(camb_image_size(img.p, &h, &w), CAMB_OK);
  EXPECT_EQ(h, 300);
  EXPECT_EQ(w, 500);

  int classes[3];
  double probs[3];
  int count = 0;
  ASSERT_EQ(camb_model_top_k(m.p, img.p, 5, classes, probs, &count), CAMB_OK);
  EXPECT_EQ(count, 3);
  EXPECT_EQ(classes[0], 0);
  EXPECT_GE(probs[0], probs[1]);
  EXPECT_NEAR(probs[0] + probs[1] + probs[2], 1.0, 1e-12);

  camb_explain_options opt;
  camb_explain_options_init(&opt);
  EXPECT_STREQ(opt.method, "iscam");
  EXPECT_EQ(opt.class_index, -1);
  opt.n_steps = 4;
  Sal s;
  ASSERT_EQ(camb_explain(m.p, img.p, &opt, &s.p), CAMB_OK) << camb_last_error();
  int sh = 0, sw = 0, c = -1;
  EXPECT_EQ(camb_saliency_size(s.p, &sh, &sw), CAMB_OK);
  EXPECT_EQ(sh, 224);
  EXPECT_EQ(sw, 224);
  EXPECT_EQ(camb_saliency_class(s.p, &c), CAMB_OK);
  EXPECT_EQ(c, 0);
  const double* v = nullptr;
  ASSERT_EQ(camb_saliency_data(s.p, &v), CAMB_OK);
  double lo = 1.0, hi = 0.0;
  for (int i = 0; i < 224 * 224; ++i) {
    lo = std::min(lo, v[i]);
    hi = std::max(hi, v[i]);
  }
  EXPECT_EQ(lo, 0.0);
  EXPECT_EQ(hi, 1.0);

  const fs::path dir = scratch("explain");
  const std::string npy = (dir / "s.npy").string(), png = (dir / "s.png").string();
  EXPECT_EQ(camb_saliency_write_npy(s.p, npy.c_str()), CAMB_OK);
  EXPECT_EQ(fs::file_size(npy), 128u + 224u * 224u * 8u);
  std::ifstream in(npy, std::ios::binary);
  char magic[6];
  in.read(magic, 6);
  EXPECT_EQ(std::string(magic, 6), "\x93NUMPY");
  EXPECT_EQ(camb_saliency_write_overlay(s.p, img.p, png.c_str()), CAMB_OK);
  Img back;
  ASSERT_EQ(camb_image_load(png.c_str(), &back.p), CAMB_OK);
  EXPECT_EQ(camb_image_size(back.p, &h, &w), CAMB_OK);
  EXPECT_EQ(h, 300);
  EXPECT_EQ(w, 500);
  fs::remove_all(dir);
}

TEST(CApi, ExplainOptionErrors) {
  Model m;
  Img img;
  ASSERT_EQ(camb_model_open("toy", &m.p), CAMB_OK);
  const auto rgb = red_patch_rgb(64, 64);
  ASSERT_EQ(camb_image_from_rgb8(rgb.data(), 64, 64, &img.p), CAMB_OK);
  camb_explain_options opt;
  camb_explain_options_init(&opt);
  camb_saliency* s = nullptr;
  opt.method = "bogus";
  EXPECT_EQ(camb_explain(m.p, img.p, &opt, &s), CAMB_ERR_INVALID_ARGUMENT);
  camb_explain_options_init(&opt);
  opt.class_index = 7;
  EXPECT_EQ(camb_explain(m.p, img.p, &opt, &s), CAMB_ERR_OUT_OF_RANGE);
  camb_explain_options_init(&opt);
  opt.layer = "fc";
  EXPECT_EQ(camb_explain(m.p, img.p, &opt, &s), CAMB_ERR_INVALID_ARGUMENT);
  camb_explain_options_init(&opt);
  opt.iscam_path = "spiral";
  EXPECT_EQ(camb_explain(m.p, img.p, &opt, &s), CAMB_ERR_INVALID_ARGUMENT);
  camb_explain_options_init(&opt);
  opt.n_steps = 0;
  EXPECT_EQ(camb_explain(m.p, img.p, &opt, &s), CAMB_ERR_INVALID_ARGUMENT);
  EXPECT_EQ(s, nullptr);
}

TEST(CApi, SeededExplanationsRepeat) {
  Model m;
  Img img;
  ASSERT_EQ(camb_model_open("toy", &m.p), CAMB_OK);
  const auto rgb = red_patch_rgb(100, 100);
  ASSERT_EQ(camb_image_from_rgb8(rgb.data(), 100, 100, &img.p), CAMB_OK);
  camb_explain_options opt;
  camb_explain_options_init(&opt);
  opt.method = "sscam";
  opt.n_steps = 3;
  opt.seed = 99;
  Sal a, b;
  ASSERT_EQ(camb_explain(m.p, img.p, &opt, &a.p), CAMB_OK);
  ASSERT_EQ(camb_explain(m.p, img.p, &opt, &b.p), CAMB_OK);
  const double *va = nullptr, *vb = nullptr;
  camb_saliency_data(a.p, &va);
  camb_saliency_data(b.p, &vb);
  EXPECT_TRUE(std::equal(va, va + 224 * 224, vb));
}

TEST(CApi, EvaluateReportAndConvert) {
  const fs::path dir = scratch("eval");
  const fs::path fixtures = fs::path(CAMB_SOURCE_DIR) / "fixtures";
  {
    std::ofstream os(dir / "exp.json");
    os << R"({"backend": {"name": "toy", "layer": "conv"}, "methods": ["cam", "gradcam"],
             "metrics": ["avg_drop", "energy_pg"],
             "dataset": {"root": ")"
       << (fixtures / "images").string() << R"(", "annotations": ")" << (fixtures / "annotations.jsonl").string()
       << R"(", "count": 3}, "output_dir": "out"})";
  }
  camb_eval_summary summary;
  const std::string cfg = (dir / "exp.json").string();
  ASSERT_EQ(camb_evaluate(cfg.c_str(), &summary), CAMB_OK) << camb_last_error();
  EXPECT_EQ(summary.images_scored, 3);
  EXPECT_EQ(summary.images_failed, 0);
  EXPECT_EQ(summary.records, 6);
  EXPECT_EQ(fs::path(summary.output_dir), dir / "out");
  EXPECT_TRUE(fs::exists(dir / "out" / "aggregate.json"));
  EXPECT_FALSE(fs::exists(dir / "out" / "insertion_curve.png"));

  const std::string rec = (dir / "out" / "records.csv").string();
  const char* paths[] = {rec.c_str()};
  int records = 0;
  const std::string again = (dir / "again").string();
  ASSERT_EQ(camb_report(paths, 1, again.c_str(), &records), CAMB_OK) << camb_last_error();
  EXPECT_EQ(records, 6);

  std::ofstream(dir / "a.xml") << R"(<annotation><object><name>2</name>
    <bndbox><xmin>1</xmin><ymin>1</ymin><xmax>9</xmax><ymax>9</ymax></bndbox></object></annotation>)";
  const std::string xml = (dir / "a.xml").string(), out = (dir / "a.jsonl").string();
  const char* inputs[] = {xml.c_str()};
  int converted = 0, failed = 0;
  ASSERT_EQ(camb_convert_annotations(inputs, 1, nullptr, out.c_str(), &converted, &failed), CAMB_OK);
  EXPECT_EQ(converted, 1);
  EXPECT_EQ(failed, 0);

  std::ofstream(dir / "bad.json") << R"({"backend": {"name": "toy"}})";
  const std::string bad = (dir / "bad.json").string();
  EXPECT_EQ(camb_evaluate(bad.c_str(), &summary), CAMB_ERR_INVALID_ARGUMENT);
  EXPECT_NE(std::string(camb_last_error()).find("backend.layer"), std::string::npos);
  fs::remove_all(dir);
}
