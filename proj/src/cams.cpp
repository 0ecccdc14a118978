#include "cams.hpp"

#include <cmath>
#include <random>

#include <fmt/format.h>

#include "error.hpp"

namespace camb {

std::string_view method_id(Method m) {
  switch (m) {
    case Method::kCam: return "cam";
    case Method::kGradCam: return "gradcam";
    case Method::kGradCamPP: return "gradcampp";
    case Method::kSmoothGradCamPP: return "sgradcampp";
    case Method::kScoreCam: return "scorecam";
    case Method::kSsCam: return "sscam";
    case Method::kIsCam: return "iscam";
  }
  return "?";
}

std::optional<Method> parse_method(std::string_view id) {
  for (Method m : kAllMethods) {
    if (method_id(m) == id) return m;
  }
  return std::nullopt;
}

bool needs_gradients(Method m) {
  return m == Method::kGradCam || m == Method::kGradCamPP || m == Method::kSmoothGradCamPP;
}

bool is_score_family(Method m) { return m == Method::kScoreCam || m == Method::kSsCam || m == Method::kIsCam; }

std::string_view path_id(IsCamPath p) { return p == IsCamPath::kLinear ? "linear" : "cumulative"; }

std::optional<IsCamPath> parse_path(std::string_view id) {
  if (id == "linear") return IsCamPath::kLinear;
  if (id == "cumulative") return IsCamPath::kCumulative;
  return std::nullopt;
}

void CamHyperparams::validate() const {
  if (n_steps < 1) fail(ErrorCode::kInvalidArgument, fmt::format("n_steps must be >= 1, got {}", n_steps));
  if (smooth_samples < 1) fail(ErrorCode::kInvalidArgument, fmt::format("smooth_samples must be >= 1, got {}", smooth_samples));
  if (!(sigma >= 0) || !std::isfinite(sigma)) fail(ErrorCode::kInvalidArgument, fmt::format("sigma must be >= 0, got {}", sigma));
}

bool CamHyperparams::softmax_for(Method m) const { return softmax_weights.value_or(is_score_family(m)); }

std::string CamHyperparams::snapshot(Method m) const {
  std::string out = fmt::format("softmax_weights={}", softmax_for(m) ? 1 : 0);
  switch (m) {
    case Method::kIsCam:
      out += fmt::format(";n_steps={};iscam_path={}", n_steps, path_id(iscam_path));
      break;
    case Method::kSsCam:
      out += fmt::format(";n_steps={};sigma={};seed={};noise=masked_input", n_steps, sigma, seed);
      break;
    case Method::kSmoothGradCamPP:
      out += fmt::format(";smooth_samples={};sigma={};seed={}", smooth_samples, sigma, seed);
      break;
    default:
      break;
  }
  return out;
}

Map2D combine_channels(std::span<const ActivationMap> acts, std::span<const double> weights) {
  if (acts.empty()) fail(ErrorCode::kInvalidArgument, "no activation maps to combine");
  if (acts.size() != weights.size()) {
    fail(ErrorCode::kShapeMismatch, fmt::format("{} weights for {} channels", weights.size(), acts.size()));
  }
  Map2D out(acts[0].data.rows(), acts[0].data.cols());
  auto dst = out.values();
  for (std::size_t k = 0; k < acts.size(); ++k) {
    if (acts[k].data.size() != out.size()) fail(ErrorCode::kShapeMismatch, "activation maps differ in size");
    const double w = weights[k];
    if (w == 0.0) continue;
    auto src = acts[k].data.values();
    for (std::size_t i = 0; i < dst.size(); ++i) dst[i] += w * src[i];
  }
  return out;
}

SaliencyMap finalize_map(const Map2D& combined, Size input, int c, std::string method) {
  SaliencyMap s;
  s.data = normalize_map(upsample(relu(combined), input));
  s.class_index = c;
  s.method_name = std::move(method);
  s.normalized = true;
  return s;
}

std::vector<Map2D> channel_masks(std::span<const ActivationMap> acts, Size input) {
  std::vector<Map2D> masks;
  masks.reserve(acts.size());
  for (const auto& a : acts) masks.push_back(normalize_map(upsample(a.data, input)));
  return masks;
}

Image explanation_map(const Image& x, const SaliencyMap& s) {
  for (double v : s.data.values()) {
    if (!(v >= 0.0 && v <= 1.0)) fail(ErrorCode::kInvalidArgument, "explanation_map: saliency must be normalized to [0,1]");
  }
  return mask_input(x, s.data);
}

namespace {

std::uint64_t splitmix64(std::uint64_t z) {
  z += 0x9E3779B97F4A7C15ULL;
  z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ULL;
  z = (z ^ (z >> 27)) * 0x94D049BB133111EBULL;
  return z ^ (z >> 31);
}

void apply_softmax(std::vector<double>& w) { w = softmax(w); }

CamResult make_result(Method m, std::span<const ActivationMap> acts, std::vector<double> weights, Size input, int c,
                      const CamHyperparams& h) {
  if (h.softmax_for(m)) apply_softmax(weights);
  CamResult r;
  r.map = finalize_map(combine_channels(acts, weights), input, c, std::string(method_id(m)));
  r.weights = {std::move(weights), c, std::string(method_id(m))};
  return r;
}

void require(const ModelBackend& backend, Method m) {
  if (needs_gradients(m) && !backend.capabilities().gradients) {
    fail(ErrorCode::kUnsupported,
         fmt::format("method '{}' needs gradients, which backend '{}' does not provide", method_id(m), backend.name()));
  }
}

double class_probability(const ModelBackend& backend, const Image& x, int c) {
  return backend.forward(x, ScoreKind::kSoftmax).scores[static_cast<std::size_t>(c)];
}

Image zeros_like(const Image& x) { return Image(x.height(), x.width(), x.channels(), x.space(), 0.0); }

Image scaled(const Image& x, double t) {
  Image out = x;
  for (double& v : out.values()) v *= t;
  return out;
}

void add_inplace(Image& acc, const Image& x) {
  auto dst = acc.values();
  auto src = x.values();
  for (std::size_t i = 0; i < dst.size(); ++i) dst[i] += src[i];
}

bool all_zero(const Map2D& m) {
  for (double v : m.values()) {
    if (v != 0.0) return false;
  }
  return true;
}

void check_common(const ModelBackend& backend, const Image& x, int c) {
  if (x.size() != backend.input_size()) {
    fail(ErrorCode::kShapeMismatch, fmt::format("input {}x{} does not match backend input {}x{}", x.height(),
                                                x.width(), backend.input_size().height, backend.input_size().width));
  }
  if (c < 0 || c >= backend.class_count()) {
    fail(ErrorCode::kOutOfRange, fmt::format("class {} out of range [0, {})", c, backend.class_count()));
  }
}

}  // namespace

Image gaussian_noise(const Image& like, double sigma, std::uint64_t seed, std::uint64_t stream) {
  Image out = zeros_like(like);
  if (sigma == 0.0) return out;
  std::mt19937_64 rng(splitmix64(seed ^ splitmix64(stream)));
  std::normal_distribution<double> normal(0.0, 1.0);
  for (double& v : out.values()) v = sigma * normal(rng);
  return out;
}

CamResult cam(const ModelBackend& backend, const Image& x, const std::string& layer, int c) {
  check_common(backend, x, c);
  std::vector<double> w = backend.gap_class_weights(layer, c);
  const auto acts = backend.capture_activations(x, layer);
  if (w.size() != acts.size()) fail(ErrorCode::kRuntime, "class weight count does not match channel count");
  CamHyperparams h;
  h.softmax_weights = false;
  return make_result(Method::kCam, acts, std::move(w), x.size(), c, h);
}

CamResult grad_cam(const ModelBackend& backend, const Image& x, const std::string& layer, int c,
                   const CamHyperparams& h) {
  require(backend, Method::kGradCam);
  check_common(backend, x, c);
  const auto acts = backend.capture_activations(x, layer);
  const auto grads = backend.capture_gradients(x, layer, c);
  std::vector<double> w(grads.size());
  for (std::size_t k = 0; k < grads.size(); ++k) w[k] = grads[k].data.sum() / static_cast<double>(grads[k].data.count());
  return make_result(Method::kGradCam, acts, std::move(w), x.size(), c, h);
}

std::vector<double> gradcampp_weights(std::span<const ActivationMap> acts, std::span<const Map2D> g,
                                      std::span<const Map2D> g2, std::span<const Map2D> g3) {
  if (g.size() != acts.size() || g2.size() != acts.size() || g3.size() != acts.size()) {
    fail(ErrorCode::kShapeMismatch, "gradient and activation channel counts differ");
  }
  std::vector<double> w(acts.size(), 0.0);
  for (std::size_t k = 0; k < acts.size(); ++k) {
    const double act_sum = acts[k].data.sum();
    auto d1 = g[k].values();
    auto d2 = g2[k].values();
    auto d3 = g3[k].values();
    double acc = 0.0;
    for (std::size_t i = 0; i < d1.size(); ++i) {
      if (d1[i] == 0.0) continue;
      const double denom = 2.0 * d2[i] + act_sum * d3[i];
      if (denom == 0.0) continue;
      const double alpha = d2[i] / denom;
      acc += alpha * (d1[i] > 0 ? d1[i] : 0.0);
    }
    w[k] = acc;
  }
  return w;
}

namespace {

struct GradPowers {
  std::vector<Map2D> g, g2, g3;
};

GradPowers powers(const std::vector<GradientMap>& grads) {
  GradPowers p;
  for (const auto& gm : grads) {
    Map2D sq = gm.data, cube = gm.data;
    auto a = gm.data.values();
    auto s = sq.values();
    auto cb = cube.values();
    for (std::size_t i = 0; i < a.size(); ++i) {
      s[i] = a[i] * a[i];
      cb[i] = a[i] * a[i] * a[i];
    }
    p.g.push_back(gm.data);
    p.g2.push_back(std::move(sq));
    p.g3.push_back(std::move(cube));
  }
  return p;
}

// mean += (v - mean) / n, which leaves the mean bit-identical when every
// sample is identical.
void running_mean(Map2D& mean, const Map2D& v, int n) {
  auto m = mean.values();
  auto s = v.values();
  for (std::size_t i = 0; i < m.size(); ++i) m[i] += (s[i] - m[i]) / n;
}

}  // namespace

CamResult grad_cam_pp(const ModelBackend& backend, const Image& x, const std::string& layer, int c,
                      const CamHyperparams& h) {
  require(backend, Method::kGradCamPP);
  check_common(backend, x, c);
  const auto acts = backend.capture_activations(x, layer);
  const GradPowers p = powers(backend.capture_gradients(x, layer, c));
  return make_result(Method::kGradCamPP, acts, gradcampp_weights(acts, p.g, p.g2, p.g3), x.size(), c, h);
}

CamResult smooth_grad_cam_pp(const ModelBackend& backend, const Image& x, const std::string& layer, int c,
                             const CamHyperparams& h) {
  require(backend, Method::kSmoothGradCamPP);
  check_common(backend, x, c);
  h.validate();
  std::vector<ActivationMap> acts;
  GradPowers mean;
  for (int s = 0; s < h.smooth_samples; ++s) {
    Image noisy = x;
    add_inplace(noisy, gaussian_noise(x, h.sigma, h.seed, static_cast<std::uint64_t>(s)));
    const auto a = backend.capture_activations(noisy, layer);
    const GradPowers p = powers(backend.capture_gradients(noisy, layer, c));
    if (s == 0) {
      acts = a;
      mean = p;
      for (auto& m : acts) m.data = Map2D(m.data.rows(), m.data.cols());
      for (auto* v : {&mean.g, &mean.g2, &mean.g3}) {
        for (auto& m : *v) m = Map2D(m.rows(), m.cols());
      }
    }
    for (std::size_t k = 0; k < a.size(); ++k) {
      running_mean(acts[k].data, a[k].data, s + 1);
      running_mean(mean.g[k], p.g[k], s + 1);
      running_mean(mean.g2[k], p.g2[k], s + 1);
      running_mean(mean.g3[k], p.g3[k], s + 1);
    }
  }
  return make_result(Method::kSmoothGradCamPP, acts, gradcampp_weights(acts, mean.g, mean.g2, mean.g3), x.size(), c,
                     h);
}

CamResult score_cam(const ModelBackend& backend, const Image& x, const std::string& layer, int c,
                    const CamHyperparams& h) {
  check_common(backend, x, c);
  const auto acts = backend.capture_activations(x, layer);
  const auto masks = channel_masks(acts, x.size());
  const double base = class_probability(backend, zeros_like(x), c);
  std::vector<double> w(acts.size(), 0.0);
  for (std::size_t k = 0; k < acts.size(); ++k) {
    // A zero mask yields the baseline itself, whose increase is exactly 0.
    if (all_zero(masks[k])) continue;
    w[k] = class_probability(backend, mask_input(x, masks[k]), c) - base;
  }
  return make_result(Method::kScoreCam, acts, std::move(w), x.size(), c, h);
}

CamResult ss_cam(const ModelBackend& backend, const Image& x, const std::string& layer, int c,
                 const CamHyperparams& h) {
  check_common(backend, x, c);
  h.validate();
  const auto acts = backend.capture_activations(x, layer);
  const auto masks = channel_masks(acts, x.size());
  const double base = class_probability(backend, zeros_like(x), c);
  std::vector<double> w(acts.size(), 0.0);
  for (std::size_t k = 0; k < acts.size(); ++k) {
    const Image masked = mask_input(x, masks[k]);
    double mean = 0.0;
    for (int j = 0; j < h.n_steps; ++j) {
      Image noisy = masked;
      const std::uint64_t stream = (static_cast<std::uint64_t>(k) << 32) | static_cast<std::uint64_t>(j);
      add_inplace(noisy, gaussian_noise(x, h.sigma, h.seed, stream));
      const double score = class_probability(backend, noisy, c) - base;
      mean += (score - mean) / (j + 1);
    }
    w[k] = mean;
  }
  return make_result(Method::kSsCam, acts, std::move(w), x.size(), c, h);
}

CamResult is_cam(const ModelBackend& backend, const Image& x, const std::string& layer, int c,
                 const CamHyperparams& h) {
  check_common(backend, x, c);
  h.validate();
  const auto acts = backend.capture_activations(x, layer);
  const auto masks = channel_masks(acts, x.size());
  const double base = class_probability(backend, zeros_like(x), c);
  const int n = h.n_steps;
  std::vector<double> w(acts.size(), 0.0);
  for (std::size_t k = 0; k < acts.size(); ++k) {
    if (all_zero(masks[k])) continue;
    const Image masked = mask_input(x, masks[k]);
    double total = 0.0;
    if (h.iscam_path == IsCamPath::kLinear) {
      for (int i = 1; i <= n; ++i) {
        const double t = static_cast<double>(i) / n;
        total += class_probability(backend, scaled(masked, t), c) - base;
      }
    } else {
      Image path = zeros_like(x);
      for (int i = 0; i < n; ++i) {
        add_inplace(path, scaled(masked, static_cast<double>(i) / n));
        total += class_probability(backend, path, c) - base;
      }
    }
    w[k] = total / n;
  }
  return make_result(Method::kIsCam, acts, std::move(w), x.size(), c, h);
}

CamResult explain(Method m, const ModelBackend& backend, const Image& x, const std::string& layer, int c,
                  const CamHyperparams& h) {
  require(backend, m);
  switch (m) {
    case Method::kCam: return cam(backend, x, layer, c);
    case Method::kGradCam: return grad_cam(backend, x, layer, c, h);
    case Method::kGradCamPP: return grad_cam_pp(backend, x, layer, c, h);
    case Method::kSmoothGradCamPP: return smooth_grad_cam_pp(backend, x, layer, c, h);
    case Method::kScoreCam: return score_cam(backend, x, layer, c, h);
    case Method::kSsCam: return ss_cam(backend, x, layer, c, h);
    case Method::kIsCam: return is_cam(backend, x, layer, c, h);
  }
  fail(ErrorCode::kInvalidArgument, "unknown method");
}

}  // namespace camb
