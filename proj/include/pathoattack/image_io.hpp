#pragma once

// Raster decode/encode (OpenCV codecs) and the bilinear resampler.

#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <string>
#include <vector>

#include <opencv2/core.hpp>
#include <opencv2/imgcodecs.hpp>

#include "pathoattack/core.hpp"

namespace pathoattack {

/// Bilinear resampling with half-pixel centres (align_corners = false), edge
/// clamping and no anti-aliasing prefilter.
inline Tensor resize_bilinear(const Tensor& src, std::size_t out_h, std::size_t out_w) {
  const Shape& s = src.shape();
  if (out_h == 0 || out_w == 0) throw InvalidArgument("resize target must be non-empty");
  if (s.height == out_h && s.width == out_w) return src;

  struct Tap {
    std::size_t lo, hi;
    double frac;
  };
  auto taps = [](std::size_t in, std::size_t out) {
    std::vector<Tap> t(out);
    const double scale = static_cast<double>(in) / static_cast<double>(out);
    for (std::size_t i = 0; i < out; ++i) {
      double pos = (static_cast<double>(i) + 0.5) * scale - 0.5;
      pos = std::clamp(pos, 0.0, static_cast<double>(in - 1));
      const auto lo = static_cast<std::size_t>(std::floor(pos));
      const std::size_t hi = std::min(lo + 1, in - 1);
      t[i] = {lo, hi, pos - static_cast<double>(lo)};
    }
    return t;
  };
  const auto ty = taps(s.height, out_h);
  const auto tx = taps(s.width, out_w);

  Tensor out(Shape{s.channels, out_h, out_w});
  for (std::size_t c = 0; c < s.channels; ++c) {
    for (std::size_t y = 0; y < out_h; ++y) {
      const Tap& a = ty[y];
      for (std::size_t x = 0; x < out_w; ++x) {
        const Tap& b = tx[x];
        const double top = src.at(c, a.lo, b.lo) + (src.at(c, a.lo, b.hi) - src.at(c, a.lo, b.lo)) * b.frac;
        const double bottom = src.at(c, a.hi, b.lo) + (src.at(c, a.hi, b.hi) - src.at(c, a.hi, b.lo)) * b.frac;
        out.at(c, y, x) = top + (bottom - top) * a.frac;
      }
    }
  }
  return out;
}

/// Decodes an RGB raster (TIFF/PNG/JPEG, 8- or 16-bit; grayscale is expanded,
/// alpha dropped) to [0, 1] channels-first, resampling to (height, width).
inline ImageTensor load_image(const std::filesystem::path& path, std::size_t height, std::size_t width) {
  cv::Mat raw = cv::imread(path.string(), cv::IMREAD_COLOR | cv::IMREAD_ANYDEPTH);
  if (raw.empty()) throw IoError("cannot decode image '" + path.string() + "'");
  double max_value = 0.0;
  switch (raw.depth()) {
    case CV_8U: max_value = 255.0; break;
    case CV_16U: max_value = 65535.0; break;
    default: throw IoError("unsupported pixel depth in '" + path.string() + "'");
  }
  if (raw.channels() != 3) throw IoError("cannot convert '" + path.string() + "' to RGB");

  cv::Mat planar;
  raw.convertTo(planar, CV_64FC3, 1.0 / max_value);
  Tensor t(Shape{3, static_cast<std::size_t>(planar.rows), static_cast<std::size_t>(planar.cols)});
  for (int y = 0; y < planar.rows; ++y) {
    const auto* row = planar.ptr<cv::Vec3d>(y);
    for (int x = 0; x < planar.cols; ++x) {
      // OpenCV stores BGR.
      for (std::size_t c = 0; c < 3; ++c) {
        t.at(c, static_cast<std::size_t>(y), static_cast<std::size_t>(x)) = row[x][static_cast<int>(2 - c)];
      }
    }
  }
  Tensor resized = resize_bilinear(t, height, width);
  for (double& v : resized.values()) v = std::clamp(v, 0.0, 1.0);
  return ImageTensor(std::move(resized));
}

inline ImageTensor load_image(const std::filesystem::path& path, std::size_t side) {
  return load_image(path, side, side);
}

/// Round-half-even to 8 bits (nearbyint under the default FE_TONEAREST mode).
inline std::uint8_t quantize_8bit(double v) {
  return static_cast<std::uint8_t>(std::nearbyint(std::clamp(v, 0.0, 1.0) * 255.0));
}

/// The in-memory image a reader of save_png's output would decode.
inline ImageTensor quantize_image(const ImageTensor& image) {
  Tensor q(image.shape());
  for (std::size_t i = 0; i < q.size(); ++i) q[i] = quantize_8bit(image[i]) / 255.0;
  return ImageTensor(std::move(q));
}

/// Writes `bytes` to `path` through a sibling temporary file so a failed write
/// never leaves a truncated artifact behind.
inline void write_file_atomic(const std::filesystem::path& path, const void* bytes, std::size_t size) {
  namespace fs = std::filesystem;
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  fs::path tmp = path;
  tmp += ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw IoError("cannot open '" + tmp.string() + "' for writing");
    out.write(static_cast<const char*>(bytes), static_cast<std::streamsize>(size));
    out.flush();
    if (!out) {
      out.close();
      std::error_code ec;
      fs::remove(tmp, ec);
      throw IoError("write failed for '" + path.string() + "'");
    }
  }
  std::error_code ec;
  fs::rename(tmp, path, ec);
  if (ec) {
    fs::remove(tmp, ec);
    throw IoError("cannot move '" + tmp.string() + "' into place: " + ec.message());
  }
}

inline void write_file_atomic(const std::filesystem::path& path, const std::string& text) {
  write_file_atomic(path, text.data(), text.size());
}

/// Lossless 8-bit RGB PNG of a [0, 1] tensor with 3 channels.
inline void save_png(const Tensor& t, const std::filesystem::path& path) {
  const Shape& s = t.shape();
  if (s.channels != 3) throw InvalidArgument("save_png expects 3 channels");
  cv::Mat bgr(static_cast<int>(s.height), static_cast<int>(s.width), CV_8UC3);
  for (std::size_t y = 0; y < s.height; ++y) {
    auto* row = bgr.ptr<cv::Vec3b>(static_cast<int>(y));
    for (std::size_t x = 0; x < s.width; ++x) {
      for (std::size_t c = 0; c < 3; ++c) row[x][static_cast<int>(2 - c)] = quantize_8bit(t.at(c, y, x));
    }
  }
  std::vector<unsigned char> encoded;
  if (!cv::imencode(".png", bgr, encoded)) throw IoError("PNG encoding failed for '" + path.string() + "'");
  write_file_atomic(path, encoded.data(), encoded.size());
}

inline void save_png(const ImageTensor& image, const std::filesystem::path& path) { save_png(image.tensor(), path); }

/// Maps a perturbation in [-scale, scale] onto [0, 1] (zero becomes mid-grey)
/// where scale = max|delta|, falling back to 1 for an all-zero delta.
inline std::pair<Tensor, double> perturbation_visual(const Tensor& delta) {
  double scale = 0.0;
  for (double v : delta.values()) scale = std::max(scale, std::abs(v));
  if (scale == 0.0) scale = 1.0;
  Tensor vis(delta.shape());
  for (std::size_t i = 0; i < vis.size(); ++i) vis[i] = std::clamp(0.5 + delta[i] / (2.0 * scale), 0.0, 1.0);
  return {std::move(vis), scale};
}

}  // namespace pathoattack
