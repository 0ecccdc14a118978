#pragma once

// Class activation mapping methods behind one signature:
//   (backend, preprocessed image, layer, class, hyperparameters) -> saliency.
//
// Every method forms channel weights alpha_k, combines ReLU(sum_k alpha_k A^k)
// at the layer's resolution, upsamples bilinearly to the input size and
// min-max normalizes.

#include <array>
#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "backend.hpp"
#include "tensorcore.hpp"

namespace camb {

enum class Method { kCam, kGradCam, kGradCamPP, kSmoothGradCamPP, kScoreCam, kSsCam, kIsCam };

inline constexpr std::array<Method, 7> kAllMethods{Method::kCam,      Method::kGradCam, Method::kGradCamPP,
                                                   Method::kSmoothGradCamPP, Method::kScoreCam,
                                                   Method::kSsCam,    Method::kIsCam};

// Stable CLI identifiers: cam, gradcam, gradcampp, sgradcampp, scorecam, sscam, iscam.
std::string_view method_id(Method m);
std::optional<Method> parse_method(std::string_view id);
bool needs_gradients(Method m);
bool is_score_family(Method m);

// Path along which IS-CAM scales the masked input.
//   linear:     M_i = (i/N) * B,            i = 1..N
//   cumulative: M_0 = 0, M_{i+1} = M_i + (i/N) * B
enum class IsCamPath { kLinear, kCumulative };

std::string_view path_id(IsCamPath p);
std::optional<IsCamPath> parse_path(std::string_view id);

struct CamHyperparams {
  int n_steps = 15;         // IS-CAM integration steps, SS-CAM noise draws
  double sigma = 2.0;       // noise std (SS-CAM, Smooth Grad-CAM++)
  int smooth_samples = 15;  // Smooth Grad-CAM++ noise draws
  std::uint64_t seed = 0;
  // Softmax across channel weights. Unset: on for the Score-CAM family, off
  // for gradient methods.
  std::optional<bool> softmax_weights;
  IsCamPath iscam_path = IsCamPath::kLinear;

  void validate() const;
  bool softmax_for(Method m) const;
  // Compact "key=value;..." rendering stored with every evaluation record.
  std::string snapshot(Method m) const;
};

struct ChannelWeights {
  std::vector<double> weights;
  int class_index = 0;
  std::string method_name;
};

struct CamResult {
  SaliencyMap map;
  ChannelWeights weights;
};

CamResult cam(const ModelBackend& backend, const Image& x, const std::string& layer, int c);
CamResult grad_cam(const ModelBackend& backend, const Image& x, const std::string& layer, int c,
                   const CamHyperparams& h = {});
CamResult grad_cam_pp(const ModelBackend& backend, const Image& x, const std::string& layer, int c,
                      const CamHyperparams& h = {});
CamResult smooth_grad_cam_pp(const ModelBackend& backend, const Image& x, const std::string& layer, int c,
                             const CamHyperparams& h);
CamResult score_cam(const ModelBackend& backend, const Image& x, const std::string& layer, int c,
                    const CamHyperparams& h);
CamResult ss_cam(const ModelBackend& backend, const Image& x, const std::string& layer, int c,
                 const CamHyperparams& h);
CamResult is_cam(const ModelBackend& backend, const Image& x, const std::string& layer, int c,
                 const CamHyperparams& h);

CamResult explain(Method m, const ModelBackend& backend, const Image& x, const std::string& layer, int c,
                  const CamHyperparams& h);

// sum_k w_k A^k at activation resolution, before rectification.
Map2D combine_channels(std::span<const ActivationMap> acts, std::span<const double> weights);

// ReLU, upsample to `input`, normalize.
SaliencyMap finalize_map(const Map2D& combined, Size input, int c, std::string method);

// normalize_map(upsample(A^k)) for every channel: the Score-CAM input masks.
std::vector<Map2D> channel_masks(std::span<const ActivationMap> acts, Size input);

// Grad-CAM++ channel weights from (possibly averaged) gradient powers:
//   a_ij = g2 / (2 g2 + sum(A) g3), w = sum_ij a_ij relu(g).
std::vector<double> gradcampp_weights(std::span<const ActivationMap> acts, std::span<const Map2D> g,
                                      std::span<const Map2D> g2, std::span<const Map2D> g3);

// x masked by the normalized saliency map; the input scored to obtain O^c.
Image explanation_map(const Image& x, const SaliencyMap& s);

// Seeded N(0, sigma^2) noise for one independent stream.
Image gaussian_noise(const Image& like, double sigma, std::uint64_t seed, std::uint64_t stream);

}  // namespace camb
