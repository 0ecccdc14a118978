#pragma once

// Array primitives shared by every attribution method and metric. Nothing in
// here knows about models.

#include <cstddef>
#include <span>
#include <string>
#include <vector>

namespace camb {

struct Size {
  int height = 0;
  int width = 0;
  bool operator==(const Size&) const = default;
};

// Row-major real-valued 2-D array.
class Map2D {
 public:
  Map2D() = default;
  Map2D(int rows, int cols, double fill = 0.0);
  Map2D(int rows, int cols, std::vector<double> values);

  int rows() const { return rows_; }
  int cols() const { return cols_; }
  Size size() const { return {rows_, cols_}; }
  std::size_t count() const { return data_.size(); }
  bool empty() const { return data_.empty(); }

  double& operator()(int r, int c) { return data_[static_cast<std::size_t>(r) * cols_ + c]; }
  double operator()(int r, int c) const { return data_[static_cast<std::size_t>(r) * cols_ + c]; }

  std::span<double> values() { return data_; }
  std::span<const double> values() const { return data_; }

  double min() const;
  double max() const;
  double sum() const;

  bool operator==(const Map2D&) const = default;

 private:
  int rows_ = 0;
  int cols_ = 0;
  std::vector<double> data_;
};

// Which value domain an image lives in. raw: [0,255] pixels; unit: [0,1];
// normalized: per-channel standardized model input.
enum class Space { kRaw, kUnit, kNormalized };

const char* space_name(Space s);

// Planar (channel-major) image tensor: data[c][y][x].
class Image {
 public:
  Image() = default;
  Image(int height, int width, int channels, Space space, double fill = 0.0);

  int height() const { return height_; }
  int width() const { return width_; }
  int channels() const { return channels_; }
  Size size() const { return {height_, width_}; }
  Space space() const { return space_; }
  void set_space(Space s) { space_ = s; }
  std::size_t plane_size() const { return static_cast<std::size_t>(height_) * width_; }

  double& at(int c, int y, int x) { return data_[c * plane_size() + static_cast<std::size_t>(y) * width_ + x]; }
  double at(int c, int y, int x) const { return data_[c * plane_size() + static_cast<std::size_t>(y) * width_ + x]; }

  std::span<double> plane(int c) { return {data_.data() + c * plane_size(), plane_size()}; }
  std::span<const double> plane(int c) const { return {data_.data() + c * plane_size(), plane_size()}; }

  std::span<double> values() { return data_; }
  std::span<const double> values() const { return data_; }

  bool operator==(const Image&) const = default;

 private:
  int height_ = 0;
  int width_ = 0;
  int channels_ = 0;
  Space space_ = Space::kRaw;
  std::vector<double> data_;
};

// One channel of a convolutional layer's output.
struct ActivationMap {
  Map2D data;
  int channel_index = 0;
  std::string layer_name;
};

// Non-negative attribution map registered to input-image coordinates.
struct SaliencyMap {
  Map2D data;
  int class_index = 0;
  std::string method_name;
  bool normalized = false;
};

// (m - min) / (max - min). A constant map has no spatial evidence and maps to
// all zeros.
Map2D normalize_map(const Map2D& m);

// Bilinear interpolation with half-pixel centers (corners not aligned). The
// target must be at least as large as the source on both axes.
Map2D upsample(const Map2D& m, Size target);

// Same interpolation without the no-downsampling restriction. Used to resize
// raw images.
Map2D resize_bilinear(const Map2D& m, Size target);

// Element-wise product of every channel of x with s.
Image mask_input(const Image& x, const Map2D& s);

// Normalized trapezoidal area under scores sampled at uniformly spaced
// abscissae over [0, 1].
double auc(std::span<const double> scores);

// Separable Gaussian blur with mirrored borders (reflect-101); ksize odd.
Image gaussian_blur(const Image& x, double sigma, int ksize);

Map2D relu(Map2D m);

}  // namespace camb
