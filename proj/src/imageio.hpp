#pragma once

#include <filesystem>
#include <string>
#include <vector>

#include "tensorcore.hpp"

namespace camb {

// Decodes PNG/JPEG into a raw-space 3-channel RGB image. Grayscale files are
// expanded to three channels.
Image load_image(const std::filesystem::path& path);

void save_image(const Image& raw, const std::filesystem::path& path);

// Saliency through a fixed perceptual colormap (viridis), alpha-blended at 0.5
// over `background` (raw space, same size as the map).
void write_overlay(const Map2D& saliency, const Image& background, const std::filesystem::path& path);

// NumPy .npy (little-endian float64, C order) so maps load with numpy.load.
void write_npy(const Map2D& m, const std::filesystem::path& path);
Map2D read_npy(const std::filesystem::path& path);

struct Series {
  std::string label;
  std::vector<double> y;  // sampled at uniformly spaced x over [0, 1]
};

// Line chart of several series over x in [0, 1], y in [0, 1].
void write_line_chart(const std::string& title, const std::string& x_label, const std::string& y_label,
                      const std::vector<Series>& series, const std::filesystem::path& path);

}  // namespace camb
