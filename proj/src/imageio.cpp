#include "imageio.hpp"

#include <algorithm>
#include <array>
#include <cstring>
#include <fstream>
#include <regex>

#include <fmt/format.h>
#include <opencv2/imgcodecs.hpp>
#include <opencv2/imgproc.hpp>

#include "error.hpp"

namespace camb {

namespace fs = std::filesystem;

Image load_image(const fs::path& path) {
  if (!fs::is_regular_file(path)) fail(ErrorCode::kIo, fmt::format("image '{}' not found", path.string()));
  cv::Mat bgr = cv::imread(path.string(), cv::IMREAD_COLOR);
  if (bgr.empty()) fail(ErrorCode::kIo, fmt::format("cannot decode image '{}'", path.string()));
  Image out(bgr.rows, bgr.cols, 3, Space::kRaw);
  for (int y = 0; y < bgr.rows; ++y) {
    const auto* row = bgr.ptr<cv::Vec3b>(y);
    for (int x = 0; x < bgr.cols; ++x) {
      out.at(0, y, x) = row[x][2];
      out.at(1, y, x) = row[x][1];
      out.at(2, y, x) = row[x][0];
    }
  }
  return out;
}

namespace {

cv::Mat to_bgr8(const Image& raw) {
  if (raw.channels() != 3) fail(ErrorCode::kInvalidArgument, "expected a 3-channel image");
  const double scale = raw.space() == Space::kUnit ? 255.0 : 1.0;
  cv::Mat out(raw.height(), raw.width(), CV_8UC3);
  for (int y = 0; y < raw.height(); ++y) {
    auto* row = out.ptr<cv::Vec3b>(y);
    for (int x = 0; x < raw.width(); ++x) {
      for (int c = 0; c < 3; ++c) {
        row[x][2 - c] = cv::saturate_cast<uchar>(raw.at(c, y, x) * scale);
      }
    }
  }
  return out;
}

void write_mat(const cv::Mat& m, const fs::path& path) {
  bool ok = false;
  try {
    ok = cv::imwrite(path.string(), m);
  } catch (const cv::Exception& e) {
    fail(ErrorCode::kIo, fmt::format("cannot write '{}': {}", path.string(), e.what()));
  }
  if (!ok) fail(ErrorCode::kIo, fmt::format("cannot write '{}'", path.string()));
}

}  // namespace

void save_image(const Image& raw, const fs::path& path) { write_mat(to_bgr8(raw), path); }

void write_overlay(const Map2D& saliency, const Image& background, const fs::path& path) {
  if (saliency.size() != background.size()) fail(ErrorCode::kShapeMismatch, "overlay: map and image sizes differ");
  cv::Mat gray(saliency.rows(), saliency.cols(), CV_8UC1);
  for (int y = 0; y < saliency.rows(); ++y) {
    for (int x = 0; x < saliency.cols(); ++x) {
      gray.at<uchar>(y, x) = cv::saturate_cast<uchar>(std::clamp(saliency(y, x), 0.0, 1.0) * 255.0);
    }
  }
  cv::Mat colored;
  cv::applyColorMap(gray, colored, cv::COLORMAP_VIRIDIS);
  cv::Mat blended;
  cv::addWeighted(colored, 0.5, to_bgr8(background), 0.5, 0.0, blended);
  write_mat(blended, path);
}

void write_npy(const Map2D& m, const fs::path& path) {
  std::string header = fmt::format("{{'descr': '<f8', 'fortran_order': False, 'shape': ({}, {}), }}", m.rows(), m.cols());
  const std::size_t total = 10 + header.size() + 1;
  header.append((64 - total % 64) % 64, ' ');
  header.push_back('\n');
  std::ofstream os(path, std::ios::binary);
  if (!os) fail(ErrorCode::kIo, fmt::format("cannot write '{}'", path.string()));
  const char magic[] = "\x93NUMPY";
  os.write(magic, 6);
  const char version[2] = {1, 0};
  os.write(version, 2);
  const auto len = static_cast<std::uint16_t>(header.size());
  const char len_bytes[2] = {static_cast<char>(len & 0xff), static_cast<char>(len >> 8)};
  os.write(len_bytes, 2);
  os.write(header.data(), static_cast<std::streamsize>(header.size()));
  os.write(reinterpret_cast<const char*>(m.values().data()), static_cast<std::streamsize>(m.count() * sizeof(double)));
  if (!os) fail(ErrorCode::kIo, fmt::format("short write to '{}'", path.string()));
}

Map2D read_npy(const fs::path& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) fail(ErrorCode::kIo, fmt::format("cannot open '{}'", path.string()));
  char pre[10];
  is.read(pre, 10);
  if (!is || std::memcmp(pre, "\x93NUMPY", 6) != 0 || pre[6] != 1) fail(ErrorCode::kParse, "not a version-1 .npy file");
  const std::size_t len = static_cast<unsigned char>(pre[8]) | (static_cast<std::size_t>(static_cast<unsigned char>(pre[9])) << 8);
  std::string header(len, '\0');
  is.read(header.data(), static_cast<std::streamsize>(len));
  std::smatch match;
  static const std::regex shape_re(R"('shape':\s*\((\d+),\s*(\d+)\))");
  if (header.find("'<f8'") == std::string::npos || header.find("'fortran_order': False") == std::string::npos ||
      !std::regex_search(header, match, shape_re)) {
    fail(ErrorCode::kParse, "unsupported .npy layout (need 2-D C-order float64)");
  }
  const int rows = std::stoi(match[1]), cols = std::stoi(match[2]);
  std::vector<double> values(static_cast<std::size_t>(rows) * cols);
  is.read(reinterpret_cast<char*>(values.data()), static_cast<std::streamsize>(values.size() * sizeof(double)));
  if (!is) fail(ErrorCode::kParse, "truncated .npy data");
  return Map2D(rows, cols, std::move(values));
}

void write_line_chart(const std::string& title, const std::string& x_label, const std::string& y_label,
                      const std::vector<Series>& series, const fs::path& path) {
  constexpr int kW = 800, kH = 560, kLeft = 80, kRight = 190, kTop = 50, kBottom = 70;
  const int plot_w = kW - kLeft - kRight, plot_h = kH - kTop - kBottom;
  cv::Mat canvas(kH, kW, CV_8UC3, cv::Scalar(255, 255, 255));
  const auto font = cv::FONT_HERSHEY_SIMPLEX;
  const cv::Scalar ink(40, 40, 40), grid(225, 225, 225);
  auto px = [&](double x) { return kLeft + static_cast<int>(std::lround(x * plot_w)); };
  auto py = [&](double y) { return kTop + plot_h - static_cast<int>(std::lround(std::clamp(y, 0.0, 1.0) * plot_h)); };

  for (int i = 0; i <= 5; ++i) {
    const double t = i / 5.0;
    cv::line(canvas, {px(t), kTop}, {px(t), kTop + plot_h}, grid, 1);
    cv::line(canvas, {kLeft, py(t)}, {kLeft + plot_w, py(t)}, grid, 1);
    const std::string label = fmt::format("{:.1f}", t);
    cv::putText(canvas, label, {px(t) - 12, kTop + plot_h + 20}, font, 0.45, ink, 1, cv::LINE_AA);
    cv::putText(canvas, label, {kLeft - 36, py(t) + 5}, font, 0.45, ink, 1, cv::LINE_AA);
  }
  cv::rectangle(canvas, {kLeft, kTop}, {kLeft + plot_w, kTop + plot_h}, ink, 1);
  cv::putText(canvas, title, {kLeft, 24}, font, 0.65, ink, 1, cv::LINE_AA);
  cv::putText(canvas, x_label, {kLeft + plot_w / 2 - 80, kH - 22}, font, 0.5, ink, 1, cv::LINE_AA);
  cv::putText(canvas, y_label, {8, kTop - 10}, font, 0.5, ink, 1, cv::LINE_AA);

  static const std::array<cv::Scalar, 8> palette{
      cv::Scalar(180, 119, 31), cv::Scalar(14, 127, 255), cv::Scalar(44, 160, 44), cv::Scalar(40, 39, 214),
      cv::Scalar(189, 103, 148), cv::Scalar(75, 86, 140), cv::Scalar(194, 119, 227), cv::Scalar(127, 127, 127)};
  for (std::size_t s = 0; s < series.size(); ++s) {
    const auto& ys = series[s].y;
    const cv::Scalar color = palette[s % palette.size()];
    for (std::size_t i = 1; i < ys.size(); ++i) {
      const double x0 = static_cast<double>(i - 1) / static_cast<double>(ys.size() - 1);
      const double x1 = static_cast<double>(i) / static_cast<double>(ys.size() - 1);
      cv::line(canvas, {px(x0), py(ys[i - 1])}, {px(x1), py(ys[i])}, color, 2, cv::LINE_AA);
    }
    const int ly = kTop + 20 + static_cast<int>(s) * 24;
    cv::line(canvas, {kLeft + plot_w + 15, ly - 4}, {kLeft + plot_w + 45, ly - 4}, color, 3, cv::LINE_AA);
    cv::putText(canvas, series[s].label, {kLeft + plot_w + 52, ly}, font, 0.5, ink, 1, cv::LINE_AA);
  }
  write_mat(canvas, path);
}

}  // namespace camb
