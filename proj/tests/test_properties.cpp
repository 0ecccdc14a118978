// Randomized invariants. Each suite draws at least 100 cases from a seeded
// generator so failures reproduce.

#include <gtest/gtest.h>

#include <cmath>
#include <random>

#include "cams.hpp"
#include "metrics.hpp"
#include "stub_backend.hpp"
#include "toy_backend.hpp"
#include "toy_oracle.hpp"

using namespace camb;

namespace {

constexpr int kCases = 100;

struct Gen {
  std::mt19937_64 rng;
  explicit Gen(std::uint64_t seed) : rng(seed) {}
  double uniform(double lo, double hi) { return std::uniform_real_distribution<double>(lo, hi)(rng); }
  int integer(int lo, int hi) { return std::uniform_int_distribution<int>(lo, hi)(rng); }

  Map2D map(int rows, int cols, double lo, double hi) {
    Map2D m(rows, cols);
    for (double& v : m.values()) v = uniform(lo, hi);
    return m;
  }

  StubBackend stub() {
    StubBackend s;
    const int k = integer(1, 4), side = integer(2, 6), classes = integer(1, 3);
    for (int i = 0; i < k; ++i) s.acts.push_back(map(side, side, 0.0, 2.0));
    s.head.assign(static_cast<std::size_t>(classes), {});
    for (auto& row : s.head) {
      for (int i = 0; i < k; ++i) row.push_back(uniform(-1.0, 1.0));
    }
    s.input = {side * integer(1, 4), side * integer(1, 4)};
    return s;
  }

  Image input(Size sz) {
    Image x(sz.height, sz.width, 3, Space::kNormalized);
    for (double& v : x.values()) v = uniform(-1.0, 1.0);
    return x;
  }

  CamHyperparams params() {
    CamHyperparams h;
    h.n_steps = integer(1, 4);
    h.smooth_samples = integer(1, 3);
    h.sigma = uniform(0.0, 1.0);
    h.seed = rng();
    h.iscam_path = integer(0, 1) ? IsCamPath::kCumulative : IsCamPath::kLinear;
    if (integer(0, 2) == 0) h.softmax_weights = integer(0, 1) == 1;
    return h;
  }
};

bool in_unit_range_or_zero(const Map2D& m) {
  double lo = 1.0, hi = 0.0;
  for (double v : m.values()) {
    if (!(v >= 0.0 && v <= 1.0)) return false;
    lo = std::min(lo, v);
    hi = std::max(hi, v);
  }
  return lo == 0.0 && (hi == 1.0 || hi == 0.0);
}

}  // namespace

TEST(Property, EveryMethodYieldsNormalizedMapsAtInputSize) {
  Gen g(101);
  for (int i = 0; i < kCases; ++i) {
    StubBackend s = g.stub();
    const Image x = g.input(s.input);
    const int c = g.integer(0, s.class_count() - 1);
    const CamHyperparams h = g.params();
    for (Method m : kAllMethods) {
      const auto r = explain(m, s, x, "feat", c, h);
      EXPECT_EQ(r.map.data.size(), s.input) << i;
      EXPECT_TRUE(r.map.normalized);
      EXPECT_TRUE(in_unit_range_or_zero(r.map.data)) << method_id(m) << " case " << i;
      EXPECT_EQ(r.weights.weights.size(), s.acts.size());
    }
  }
}

TEST(Property, ToyMapsNormalizedForRandomInputs) {
  Gen g(102);
  const ToyBackend toy;
  for (int i = 0; i < kCases; ++i) {
    const Image x = oracle::fixture_input(static_cast<std::uint64_t>(i), i % 3);
    const Method m = kAllMethods[static_cast<std::size_t>(i) % kAllMethods.size()];
    const auto r = explain(m, toy, x, "conv", g.integer(0, 2), g.params());
    EXPECT_TRUE(in_unit_range_or_zero(r.map.data)) << method_id(m) << " case " << i;
  }
}

TEST(Property, GradientFreeMapsIgnorePositiveHeadScaling) {
  // Scaling every class weight by a > 0 scales each combined map by a, which
  // normalization removes.
  Gen g(103);
  for (int i = 0; i < kCases; ++i) {
    StubBackend s = g.stub();
    const Image x = g.input(s.input);
    const int c = g.integer(0, s.class_count() - 1);
    StubBackend scaled = s;
    const double a = g.uniform(0.1, 10.0);
    for (auto& row : scaled.head) {
      for (double& w : row) w *= a;
    }
    for (Method m : {Method::kCam, Method::kGradCam}) {
      const auto p = explain(m, s, x, "feat", c, {});
      const auto q = explain(m, scaled, x, "feat", c, {});
      for (std::size_t j = 0; j < p.map.data.count(); ++j) {
        ASSERT_NEAR(p.map.data.values()[j], q.map.data.values()[j], 1e-9) << method_id(m) << " case " << i;
      }
    }
  }
}

TEST(Property, NormalizeIgnoresAffineRescaling) {
  Gen g(104);
  for (int i = 0; i < kCases; ++i) {
    const Map2D m = g.map(g.integer(1, 9), g.integer(2, 9), -3.0, 3.0);
    const double a = g.uniform(0.01, 100.0), b = g.uniform(-5.0, 5.0);
    Map2D t = m;
    for (double& v : t.values()) v = a * v + b;
    const Map2D p = normalize_map(m), q = normalize_map(t);
    for (std::size_t j = 0; j < p.count(); ++j) ASSERT_NEAR(p.values()[j], q.values()[j], 1e-9) << i;
  }
}

TEST(Property, PointingGameIsScaleInvariantAndBounded) {
  Gen g(105);
  for (int i = 0; i < kCases; ++i) {
    const int h = g.integer(2, 20), w = g.integer(2, 20);
    const SaliencyMap s{g.map(h, w, 0.0, 1.0), 0, "r", true};
    std::vector<BoundingBox> boxes;
    for (int b = g.integer(1, 3); b > 0; --b) {
      const int x0 = g.integer(0, w - 1), y0 = g.integer(0, h - 1);
      boxes.push_back({x0, y0, g.integer(x0 + 1, w), g.integer(y0 + 1, h), 0});
    }
    SaliencyMap scaled = s;
    const double a = g.uniform(0.001, 1000.0);
    for (double& v : scaled.data.values()) v *= a;
    const double p = pointing_game(s, boxes);
    EXPECT_GE(p, 0.0);
    EXPECT_LE(p, 1.0);
    EXPECT_NEAR(pointing_game(scaled, boxes), p, 1e-12) << i;
    const std::vector<BoundingBox> all{{0, 0, w, h, 0}};
    EXPECT_NEAR(pointing_game(s, all), 1.0, 1e-12);
  }
}

TEST(Property, SeededMethodsAreDeterministic) {
  Gen g(106);
  for (int i = 0; i < kCases; ++i) {
    StubBackend s = g.stub();
    const Image x = g.input(s.input);
    const CamHyperparams h = g.params();
    const int c = g.integer(0, s.class_count() - 1);
    for (Method m : {Method::kSsCam, Method::kSmoothGradCamPP, Method::kIsCam}) {
      const auto a = explain(m, s, x, "feat", c, h);
      const auto b = explain(m, *s.clone(), x, "feat", c, h);
      EXPECT_EQ(a.map.data, b.map.data) << method_id(m) << " case " << i;
      EXPECT_EQ(a.weights.weights, b.weights.weights);
    }
  }
}

TEST(Property, DropAndIncreaseStayInRange) {
  Gen g(107);
  for (int i = 0; i < kCases; ++i) {
    std::vector<ScorePair> pairs;
    for (int j = g.integer(1, 20); j > 0; --j) pairs.push_back({g.uniform(1e-6, 1.0), g.uniform(0.0, 1.0)});
    const double d = average_drop(pairs), inc = average_increase(pairs);
    EXPECT_GE(d, 0.0);
    EXPECT_LE(d, 100.0);
    EXPECT_GE(inc, 0.0);
    EXPECT_LE(inc, 100.0);
    std::vector<double> da, db;
    for (const auto& p : pairs) {
      da.push_back(drop_percent(p));
      db.push_back(g.uniform(0.0, 100.0));
    }
    // Strict comparisons: a and b can never both win the same image.
    EXPECT_LE(win_rate(da, db) + win_rate(db, da), 100.0 + 1e-9);
  }
}

TEST(Property, DeletionOrderIsAPermutation) {
  Gen g(108);
  for (int i = 0; i < kCases; ++i) {
    Map2D m = g.map(g.integer(1, 12), g.integer(1, 12), 0.0, 1.0);
    // Introduce ties.
    for (double& v : m.values()) v = std::round(v * 4.0) / 4.0;
    const auto order = saliency_order(m);
    std::vector<bool> seen(order.size(), false);
    for (std::size_t j = 0; j < order.size(); ++j) {
      seen[static_cast<std::size_t>(order[j])] = true;
      if (j > 0) {
        const double prev = m.values()[static_cast<std::size_t>(order[j - 1])];
        const double cur = m.values()[static_cast<std::size_t>(order[j])];
        ASSERT_GE(prev, cur);
        if (prev == cur) ASSERT_LT(order[j - 1], order[j]);
      }
    }
    EXPECT_TRUE(std::all_of(seen.begin(), seen.end(), [](bool b) { return b; }));
  }
}
