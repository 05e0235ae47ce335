#pragma once

// Synthetic class-per-folder datasets for offline runs and tests.

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <random>
#include <string>
#include <vector>

#include "pathoattack/core.hpp"
#include "pathoattack/image_io.hpp"

namespace pathoattack {

/// Image of class k: a per-class base colour plus a per-class linear ramp
/// across the patch, with mild seeded pixel noise. Classes are therefore
/// separable by their linear statistics.
inline ImageTensor synthetic_patch(std::size_t class_index, std::size_t class_count, std::size_t side,
                                   std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> noise(0.0, 0.03);
  const double phase = 2.0 * 3.14159265358979323846 * static_cast<double>(class_index) /
                       static_cast<double>(std::max<std::size_t>(class_count, 1));
  Tensor t(Shape{3, side, side});
  for (std::size_t c = 0; c < 3; ++c) {
    const double base = 0.5 + 0.25 * std::cos(phase + 2.1 * static_cast<double>(c));
    const double slope = 0.15 * std::sin(phase + static_cast<double>(c));
    for (std::size_t y = 0; y < side; ++y) {
      for (std::size_t x = 0; x < side; ++x) {
        const double ramp = (static_cast<double>(x) + static_cast<double>(y)) / (2.0 * static_cast<double>(side)) - 0.5;
        t.at(c, y, x) = std::clamp(base + slope * ramp + noise(rng), 0.0, 1.0);
      }
    }
  }
  return ImageTensor(std::move(t));
}

/// Writes root/<label>/img_NNN.png for every label; returns the file count.
inline std::size_t write_synthetic_dataset(const std::filesystem::path& root, const std::vector<std::string>& labels,
                                           std::size_t per_class, std::size_t side, std::uint64_t seed) {
  std::size_t written = 0;
  for (std::size_t k = 0; k < labels.size(); ++k) {
    for (std::size_t i = 0; i < per_class; ++i) {
      char name[32];
      std::snprintf(name, sizeof name, "img_%03zu.png", i);
      const std::string id = labels[k] + "/" + name;
      save_png(synthetic_patch(k, labels.size(), side, derive_seed(seed, id)), root / labels[k] / name);
      ++written;
    }
  }
  return written;
}

}  // namespace pathoattack
