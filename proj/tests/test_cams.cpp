#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>

#include "cams.hpp"
#include "error.hpp"
#include "stub_backend.hpp"
#include "toy_backend.hpp"
#include "toy_oracle.hpp"

using namespace camb;

namespace {

double max_abs_diff(const Map2D& a, const std::vector<double>& b) {
  double worst = 0.0;
  for (std::size_t i = 0; i < b.size(); ++i) worst = std::max(worst, std::abs(a.values()[i] - b[i]));
  return worst;
}

double max_abs_diff(const Map2D& a, const Map2D& b) {
  return max_abs_diff(a, std::vector<double>(b.values().begin(), b.values().end()));
}

bool all_zero(const Map2D& m) {
  return std::all_of(m.values().begin(), m.values().end(), [](double v) { return v == 0.0; });
}

CamHyperparams small_params() {
  CamHyperparams h;
  h.n_steps = 4;
  h.smooth_samples = 4;
  h.sigma = 0.5;
  h.seed = 17;
  return h;
}

Map2D bump(int rows, int cols, int cy, int cx, double height) {
  Map2D m(rows, cols);
  for (int y = 0; y < rows; ++y) {
    for (int x = 0; x < cols; ++x) m(y, x) = height * std::exp(-((y - cy) * (y - cy) + (x - cx) * (x - cx)) / 2.0);
  }
  return m;
}

int argmax(const Map2D& m) {
  auto v = m.values();
  return static_cast<int>(std::max_element(v.begin(), v.end()) - v.begin());
}

}  // namespace

TEST(Methods, Identifiers) {
  for (Method m : kAllMethods) EXPECT_EQ(parse_method(method_id(m)), m);
  EXPECT_FALSE(parse_method("bogus"));
  EXPECT_EQ(parse_path("cumulative"), IsCamPath::kCumulative);
  EXPECT_TRUE(needs_gradients(Method::kSmoothGradCamPP));
  EXPECT_FALSE(needs_gradients(Method::kIsCam));
  EXPECT_TRUE(is_score_family(Method::kSsCam));
}

TEST(Methods, SoftmaxDefaults) {
  CamHyperparams h;
  EXPECT_TRUE(h.softmax_for(Method::kScoreCam));
  EXPECT_TRUE(h.softmax_for(Method::kIsCam));
  EXPECT_FALSE(h.softmax_for(Method::kGradCam));
  h.softmax_weights = false;
  EXPECT_FALSE(h.softmax_for(Method::kIsCam));
  EXPECT_EQ(CamHyperparams{}.snapshot(Method::kIsCam), "softmax_weights=1;n_steps=15;iscam_path=linear");
}

TEST(Methods, HyperparamValidation) {
  CamHyperparams h;
  h.n_steps = 0;
  EXPECT_THROW(h.validate(), Error);
  h = {};
  h.sigma = -1;
  EXPECT_THROW(h.validate(), Error);
  h = {};
  h.smooth_samples = 0;
  EXPECT_THROW(h.validate(), Error);
  const ToyBackend toy;
  h = {};
  h.n_steps = 0;
  EXPECT_THROW(is_cam(toy, oracle::fixture_input(0, 0), "conv", 0, h), Error);
}

// Every method's channel weights against the straight-line oracle, with the
// channel softmax both on and off.
TEST(Oracle, ChannelWeightsAndMapsMatch) {
  const ToyBackend toy;
  for (std::uint64_t seed = 0; seed < 2; ++seed) {
    for (int kind = 0; kind < 3; ++kind) {
      const Image x = oracle::fixture_input(seed, kind);
      for (int c = 0; c < 3; ++c) {
        for (int sm = 0; sm < 2; ++sm) {
          for (Method m : kAllMethods) {
            CamHyperparams h = small_params();
            h.softmax_weights = sm == 1;
            const auto r = explain(m, toy, x, "conv", c, h);
            const auto expect = oracle::weights(m, x, c, h);
            ASSERT_EQ(r.weights.weights.size(), expect.size());
            for (std::size_t k = 0; k < expect.size(); ++k) {
              EXPECT_NEAR(r.weights.weights[k], expect[k], 1e-6) << method_id(m) << " k=" << k;
            }
            EXPECT_LT(max_abs_diff(r.map.data, oracle::method_map(m, x, expect, h)), 1e-6) << method_id(m);
            EXPECT_EQ(r.map.class_index, c);
            EXPECT_EQ(r.weights.method_name, method_id(m));
          }
        }
      }
    }
  }
}

TEST(Oracle, IsCamCumulativePath) {
  const ToyBackend toy;
  for (int kind = 0; kind < 3; ++kind) {
    const Image x = oracle::fixture_input(5, kind);
    CamHyperparams h;
    h.n_steps = 10;
    h.iscam_path = IsCamPath::kCumulative;
    const auto r = is_cam(toy, x, "conv", kind == 1 ? 1 : 0, h);
    const auto expect = oracle::iscam_weights(x, kind == 1 ? 1 : 0, h);
    for (std::size_t k = 0; k < 2; ++k) EXPECT_NEAR(r.weights.weights[k], expect[k], 1e-6);
  }
}

TEST(Degeneracy, IsCamSingleStepIsScoreCam) {
  const ToyBackend toy;
  for (int kind = 0; kind < 3; ++kind) {
    const Image x = oracle::fixture_input(9, kind);
    for (int sm = 0; sm < 2; ++sm) {
      CamHyperparams h;
      h.n_steps = 1;
      h.softmax_weights = sm == 1;
      const auto a = is_cam(toy, x, "conv", 0, h);
      const auto b = score_cam(toy, x, "conv", 0, h);
      EXPECT_EQ(a.weights.weights, b.weights.weights);
      EXPECT_EQ(a.map.data, b.map.data);
    }
  }
}

TEST(Degeneracy, ZeroNoiseSmoothingIsExact) {
  const ToyBackend toy;
  for (int kind = 0; kind < 3; ++kind) {
    const Image x = oracle::fixture_input(10, kind);
    CamHyperparams h;
    h.sigma = 0.0;
    h.n_steps = 5;
    h.smooth_samples = 6;
    EXPECT_EQ(ss_cam(toy, x, "conv", 1, h).map.data, score_cam(toy, x, "conv", 1, h).map.data);
    EXPECT_EQ(smooth_grad_cam_pp(toy, x, "conv", 1, h).map.data, grad_cam_pp(toy, x, "conv", 1, h).map.data);
  }
}

TEST(Determinism, SeededMethodsRepeat) {
  const ToyBackend toy;
  const Image x = oracle::fixture_input(3, 2);
  const CamHyperparams h = small_params();
  for (Method m : kAllMethods) {
    EXPECT_EQ(explain(m, toy, x, "conv", 0, h).map.data, explain(m, toy, x, "conv", 0, h).map.data) << method_id(m);
  }
  CamHyperparams other = h;
  other.seed = h.seed + 1;
  EXPECT_NE(ss_cam(toy, x, "conv", 0, h).weights.weights, ss_cam(toy, x, "conv", 0, other).weights.weights);
}

TEST(Noise, StreamsAreIndependentAndSeeded) {
  const Image like(4, 4, 3, Space::kNormalized);
  EXPECT_EQ(gaussian_noise(like, 1.0, 1, 2), gaussian_noise(like, 1.0, 1, 2));
  EXPECT_NE(gaussian_noise(like, 1.0, 1, 2), gaussian_noise(like, 1.0, 1, 3));
  EXPECT_NE(gaussian_noise(like, 1.0, 1, 2), gaussian_noise(like, 1.0, 2, 2));
  EXPECT_EQ(gaussian_noise(like, 0.0, 1, 2), Image(4, 4, 3, Space::kNormalized, 0.0));
}

TEST(Cam, ZeroAndNegativeWeightsGiveZeroMap) {
  StubBackend stub;
  stub.acts = {bump(4, 4, 1, 1, 1.0), bump(4, 4, 2, 3, 2.0)};
  stub.head = {{0.0, 0.0}, {-1.0, -2.0}};
  const Image x(16, 16, 3, Space::kNormalized, 0.1);
  EXPECT_TRUE(all_zero(cam(stub, x, "feat", 0).map.data));
  EXPECT_TRUE(all_zero(cam(stub, x, "feat", 1).map.data));
}

TEST(Cam, ToyClassZeroByHand) {
  // Two channels, weights (2, -1): ReLU(2 A0 - A1), upsampled, normalized.
  const ToyBackend toy;
  const Image x = oracle::fixture_input(6, 2);
  const auto a = toy.capture_activations(x, "conv");
  Map2D combined(8, 8);
  for (int y = 0; y < 8; ++y) {
    for (int xx = 0; xx < 8; ++xx) combined(y, xx) = std::max(0.0, 2.0 * a[0].data(y, xx) - a[1].data(y, xx));
  }
  EXPECT_LT(max_abs_diff(cam(toy, x, "conv", 0).map.data, normalize_map(upsample(combined, {224, 224}))), 1e-12);
}

TEST(GradCam, ZeroGradientsGiveZeroMap) {
  StubBackend stub;
  stub.acts = {bump(4, 4, 1, 1, 1.0), bump(4, 4, 2, 3, 2.0)};
  stub.head = {{1.0, 1.0}};
  stub.grads = std::vector<Map2D>{Map2D(4, 4), Map2D(4, 4)};
  const Image x(16, 16, 3, Space::kNormalized, 0.1);
  EXPECT_TRUE(all_zero(grad_cam(stub, x, "feat", 0).map.data));
  EXPECT_TRUE(all_zero(grad_cam_pp(stub, x, "feat", 0).map.data));
}

TEST(GradCam, UniformGradientsFollowDominantChannel) {
  StubBackend stub;
  stub.acts = {bump(4, 4, 3, 2, 5.0), bump(4, 4, 0, 0, 1.0)};
  stub.head = {{1.0, 1.0}};
  stub.grads = std::vector<Map2D>{Map2D(4, 4, 0.5), Map2D(4, 4, 0.5)};
  const Image x(16, 16, 3, Space::kNormalized, 0.0);
  const auto r = grad_cam(stub, x, "feat", 0);
  const Map2D up = upsample(stub.acts[0], {16, 16});
  EXPECT_EQ(argmax(r.map.data), argmax(up));
}

TEST(GradCamPP, SingleChannelEqualGradientsReducesToGradCam) {
  StubBackend stub;
  stub.acts = {bump(4, 4, 1, 2, 3.0)};
  stub.head = {{1.0}};
  stub.grads = std::vector<Map2D>{Map2D(4, 4, 0.25)};
  const Image x(16, 16, 3, Space::kNormalized, 0.0);
  EXPECT_LT(max_abs_diff(grad_cam_pp(stub, x, "feat", 0).map.data, grad_cam(stub, x, "feat", 0).map.data), 1e-12);
}

TEST(GradientMethods, RefuseBackendsWithoutGradients) {
  StubBackend stub;
  stub.acts = {bump(4, 4, 1, 1, 1.0)};
  stub.head = {{1.0}};
  stub.with_gradients = false;
  const Image x(16, 16, 3, Space::kNormalized, 0.0);
  for (Method m : {Method::kGradCam, Method::kGradCamPP, Method::kSmoothGradCamPP}) {
    try {
      explain(m, stub, x, "feat", 0, {});
      FAIL() << method_id(m);
    } catch (const Error& e) {
      EXPECT_EQ(e.code(), ErrorCode::kUnsupported);
    }
  }
  EXPECT_NO_THROW(explain(Method::kScoreCam, stub, x, "feat", 0, {}));
}

TEST(ScoreCam, ZeroActivationsGiveZeroMap) {
  StubBackend stub;
  stub.acts = {Map2D(4, 4), Map2D(4, 4)};
  stub.head = {{1.0, -1.0}};
  const Image x(16, 16, 3, Space::kNormalized, 0.3);
  CamHyperparams h;
  h.softmax_weights = false;
  const auto r = score_cam(stub, x, "feat", 0, h);
  EXPECT_EQ(r.weights.weights, (std::vector<double>{0.0, 0.0}));
  EXPECT_TRUE(all_zero(r.map.data));
}

TEST(ScoreFamily, DiscriminativeChannelWins) {
  // A red patch is isolated by channel 0's mask, so channel 0 carries the
  // largest class-0 weight for every score-based method.
  const ToyBackend toy;
  for (std::uint64_t seed = 0; seed < 5; ++seed) {
    const Image x = oracle::fixture_input(seed, 2);
    CamHyperparams h;
    h.seed = seed;
    for (Method m : {Method::kScoreCam, Method::kSsCam, Method::kIsCam}) {
      const auto w = explain(m, toy, x, "conv", 0, h).weights.weights;
      EXPECT_GT(w[0], w[1]) << method_id(m) << " seed " << seed;
    }
  }
}

TEST(IsCam, ZeroInputGivesZeroMap) {
  const ToyBackend toy;
  const Image x(224, 224, 3, Space::kNormalized, 0.0);
  for (auto path : {IsCamPath::kLinear, IsCamPath::kCumulative}) {
    CamHyperparams h;
    h.iscam_path = path;
    h.softmax_weights = false;
    const auto r = is_cam(toy, x, "conv", 0, h);
    EXPECT_EQ(r.weights.weights, (std::vector<double>{0.0, 0.0}));
    EXPECT_TRUE(all_zero(r.map.data));
  }
}

TEST(SmoothGradCamPP, NoisyMeanStaysNearGradCamPP) {
  const ToyBackend toy;
  const Image x = oracle::fixture_input(2, 0);
  const Map2D plain = grad_cam_pp(toy, x, "conv", 0).map.data;
  for (std::uint64_t seed = 0; seed < 5; ++seed) {
    CamHyperparams h;
    h.seed = seed;
    EXPECT_LT(max_abs_diff(smooth_grad_cam_pp(toy, x, "conv", 0, h).map.data, plain), 0.1) << seed;
  }
}

TEST(ExplanationMap, OnesZerosAndPatchIsolation) {
  const ToyBackend toy;
  // Gray image with a red 56x56 square at (84, 28).
  Image raw(224, 224, 3, Space::kRaw, 128.0);
  auto square = [](int top, int left) {
    SaliencyMap s{Map2D(224, 224), 0, "square", true};
    for (int r = top; r < top + 56; ++r) {
      for (int c = left; c < left + 56; ++c) s.data(r, c) = 1.0;
    }
    return s;
  };
  for (int r = 84; r < 140; ++r) {
    for (int c = 28; c < 84; ++c) {
      raw.at(0, r, c) = 230.0;
      raw.at(1, r, c) = 30.0;
      raw.at(2, r, c) = 30.0;
    }
  }
  const Image x = preprocess(raw);
  const double y = toy.forward(x).scores[0];
  SaliencyMap ones{Map2D(224, 224, 1.0), 0, "ones", true};
  SaliencyMap zeros{Map2D(224, 224, 0.0), 0, "zeros", true};
  EXPECT_EQ(toy.forward(explanation_map(x, ones)).scores[0], y);
  EXPECT_EQ(toy.forward(explanation_map(x, zeros)).scores[0],
            toy.forward(Image(224, 224, 3, Space::kNormalized, 0.0)).scores[0]);

  const double o = toy.forward(explanation_map(x, square(84, 28))).scores[0];
  EXPECT_NEAR(o, y, 0.1 * y);
  // Same mass elsewhere scores lower.
  for (auto [top, left] : {std::pair{0, 140}, std::pair{150, 150}, std::pair{10, 10}}) {
    EXPECT_LT(toy.forward(explanation_map(x, square(top, left))).scores[0], o);
  }

  SaliencyMap bad{Map2D(224, 224, 1.5), 0, "bad", false};
  EXPECT_THROW(explanation_map(x, bad), Error);
}

TEST(Methods, InputAndClassChecks) {
  const ToyBackend toy;
  const Image x = oracle::fixture_input(0, 0);
  EXPECT_THROW(explain(Method::kIsCam, toy, x, "conv", 3, {}), Error);
  EXPECT_THROW(explain(Method::kGradCam, toy, x, "nope", 0, {}), Error);
  EXPECT_THROW(explain(Method::kScoreCam, toy, Image(10, 10, 3, Space::kNormalized), "conv", 0, {}), Error);
}
