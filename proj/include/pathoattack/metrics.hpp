#pragma once

// Perceptual and attack metrics: Gaussian-window SSIM, perturbation norms,
// cumulative attack-success-rate curves and SSIM summaries.

#include <cmath>
#include <concepts>
#include <cstddef>
#include <map>
#include <optional>
#include <ranges>
#include <string>
#include <vector>

#include "pathoattack/core.hpp"

namespace pathoattack {

struct SsimParams {
  std::size_t window_size = 11;
  double gaussian_sigma = 1.5;
  double k1 = 0.01;
  double k2 = 0.03;
  double dynamic_range = 1.0;

  void validate() const {
    if (window_size < 3 || window_size % 2 == 0) {
      throw InvalidArgument("SSIM window size must be odd and >= 3, got " + std::to_string(window_size));
    }
    if (!(gaussian_sigma > 0.0)) throw InvalidArgument("SSIM gaussian sigma must be positive");
    if (!(dynamic_range > 0.0)) throw InvalidArgument("SSIM dynamic range must be positive");
  }
};

/// Normalized 1-D Gaussian taps centred on (size - 1) / 2. The 2-D window is
/// the outer product of this with itself.
inline std::vector<double> gaussian_window(std::size_t size, double sigma) {
  std::vector<double> w(size);
  const double centre = (static_cast<double>(size) - 1.0) / 2.0;
  double total = 0.0;
  for (std::size_t i = 0; i < size; ++i) {
    const double d = static_cast<double>(i) - centre;
    w[i] = std::exp(-(d * d) / (2.0 * sigma * sigma));
    total += w[i];
  }
  for (double& v : w) v /= total;
  return w;
}

namespace detail {

// Valid-mode separable filtering of one channel plane.
inline std::vector<double> filter_valid(const double* plane, std::size_t h, std::size_t w,
                                        const std::vector<double>& taps) {
  const std::size_t n = taps.size();
  const std::size_t ow = w - n + 1;
  const std::size_t oh = h - n + 1;
  std::vector<double> horizontal(h * ow);
  for (std::size_t y = 0; y < h; ++y) {
    for (std::size_t x = 0; x < ow; ++x) {
      double acc = 0.0;
      for (std::size_t k = 0; k < n; ++k) acc += taps[k] * plane[y * w + x + k];
      horizontal[y * ow + x] = acc;
    }
  }
  std::vector<double> out(oh * ow);
  for (std::size_t y = 0; y < oh; ++y) {
    for (std::size_t x = 0; x < ow; ++x) {
      double acc = 0.0;
      for (std::size_t k = 0; k < n; ++k) acc += taps[k] * horizontal[(y + k) * ow + x];
      out[y * ow + x] = acc;
    }
  }
  return out;
}

}  // namespace detail

/// Mean SSIM over all valid (unpadded) Gaussian windows, computed per channel
/// and averaged across channels.
inline double ssim(const Tensor& x, const Tensor& y, const SsimParams& p = {}) {
  p.validate();
  if (x.shape() != y.shape()) {
    throw InvalidArgument("ssim: shape mismatch " + to_string(x.shape()) + " vs " + to_string(y.shape()));
  }
  const Shape& s = x.shape();
  if (s.channels == 0 || p.window_size > s.height || p.window_size > s.width) {
    throw InvalidArgument("ssim: window of size " + std::to_string(p.window_size) + " does not fit image " +
                          to_string(s));
  }
  const auto taps = gaussian_window(p.window_size, p.gaussian_sigma);
  const double c1 = (p.k1 * p.dynamic_range) * (p.k1 * p.dynamic_range);
  const double c2 = (p.k2 * p.dynamic_range) * (p.k2 * p.dynamic_range);
  const std::size_t plane = s.height * s.width;

  std::vector<double> xx(plane), yy(plane), xy(plane);
  double channel_total = 0.0;
  for (std::size_t c = 0; c < s.channels; ++c) {
    const double* px = x.values().data() + c * plane;
    const double* py = y.values().data() + c * plane;
    for (std::size_t i = 0; i < plane; ++i) {
      xx[i] = px[i] * px[i];
      yy[i] = py[i] * py[i];
      xy[i] = px[i] * py[i];
    }
    const auto mu_x = detail::filter_valid(px, s.height, s.width, taps);
    const auto mu_y = detail::filter_valid(py, s.height, s.width, taps);
    const auto e_xx = detail::filter_valid(xx.data(), s.height, s.width, taps);
    const auto e_yy = detail::filter_valid(yy.data(), s.height, s.width, taps);
    const auto e_xy = detail::filter_valid(xy.data(), s.height, s.width, taps);

    double sum = 0.0;
    for (std::size_t i = 0; i < mu_x.size(); ++i) {
      const double mxy = mu_x[i] * mu_y[i];
      const double mxx = mu_x[i] * mu_x[i];
      const double myy = mu_y[i] * mu_y[i];
      const double var_x = e_xx[i] - mxx;
      const double var_y = e_yy[i] - myy;
      const double cov = e_xy[i] - mxy;
      sum += ((2.0 * mxy + c1) * (2.0 * cov + c2)) / ((mxx + myy + c1) * (var_x + var_y + c2));
    }
    channel_total += sum / static_cast<double>(mu_x.size());
  }
  return channel_total / static_cast<double>(s.channels);
}

inline double ssim(const ImageTensor& x, const ImageTensor& y, const SsimParams& p = {}) {
  return ssim(x.tensor(), y.tensor(), p);
}

inline double linf_distance(const Tensor& x, const Tensor& y) {
  if (x.shape() != y.shape()) throw InvalidArgument("linf_distance: shape mismatch");
  double m = 0.0;
  for (std::size_t i = 0; i < x.size(); ++i) m = std::max(m, std::abs(x[i] - y[i]));
  return m;
}

inline double l2_distance(const Tensor& x, const Tensor& y) {
  if (x.shape() != y.shape()) throw InvalidArgument("l2_distance: shape mismatch");
  double s = 0.0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    const double d = x[i] - y[i];
    s += d * d;
  }
  return std::sqrt(s);
}

// ---------------------------------------------------------------------------
// Attack aggregates

/// Anything that reports a true label, the 1-based step of first success (if
/// any) and how many steps it ran.
template <typename T>
concept AttackOutcome = requires(const T& r) {
  { r.true_label } -> std::convertible_to<std::string>;
  { r.success_step } -> std::convertible_to<std::optional<int>>;
  { r.trace.size() } -> std::convertible_to<std::size_t>;
};

template <typename T>
concept HasFinalSsim = requires(const T& r) {
  { r.final_ssim } -> std::convertible_to<double>;
};

/// Cumulative success fraction after each step, overall and per true label.
struct AsrCurve {
  std::vector<double> per_step;
  std::map<std::string, std::vector<double>> per_class;
  std::size_t n_attacks = 0;
  std::map<std::string, std::size_t> per_class_attacks;
  std::size_t n_successes = 0;
};

namespace detail {

inline std::vector<double> cumulative_curve(const std::vector<std::size_t>& first_success_hist, std::size_t total,
                                            int max_steps) {
  std::vector<double> curve(static_cast<std::size_t>(max_steps), 0.0);
  std::size_t running = 0;
  for (int s = 0; s < max_steps; ++s) {
    running += first_success_hist[static_cast<std::size_t>(s)];
    curve[static_cast<std::size_t>(s)] = static_cast<double>(running) / static_cast<double>(total);
  }
  return curve;
}

}  // namespace detail

/// per_step[s] = #(success_step <= s + 1) / n.
template <std::ranges::input_range R>
  requires AttackOutcome<std::ranges::range_value_t<R>>
AsrCurve asr_per_step(const R& results, int max_steps) {
  if (max_steps < 1) throw InvalidArgument("asr_per_step: max_steps must be >= 1");
  const auto steps = static_cast<std::size_t>(max_steps);
  std::vector<std::size_t> overall(steps, 0);
  std::map<std::string, std::vector<std::size_t>> by_class;
  AsrCurve curve;
  for (const auto& r : results) {
    if (r.trace.size() > steps) {
      throw InvalidArgument("asr_per_step: trace of length " + std::to_string(r.trace.size()) +
                            " exceeds max_steps " + std::to_string(max_steps));
    }
    ++curve.n_attacks;
    ++curve.per_class_attacks[r.true_label];
    auto& hist = by_class.try_emplace(r.true_label, steps, 0).first->second;
    const std::optional<int> step = r.success_step;
    if (step) {
      if (*step < 1 || *step > max_steps) throw InvalidArgument("asr_per_step: success step out of range");
      ++overall[static_cast<std::size_t>(*step - 1)];
      ++hist[static_cast<std::size_t>(*step - 1)];
      ++curve.n_successes;
    }
  }
  if (curve.n_attacks == 0) throw InvalidArgument("asr_per_step: no attack results");
  curve.per_step = detail::cumulative_curve(overall, curve.n_attacks, max_steps);
  for (const auto& [label, hist] : by_class) {
    curve.per_class[label] = detail::cumulative_curve(hist, curve.per_class_attacks[label], max_steps);
  }
  return curve;
}

struct SsimSummary {
  double mean = 0.0;
  double min = 0.0;
  double max = 0.0;
  double fraction_above = 0.0;  // fraction with final SSIM >= threshold
  double threshold = 0.90;
  std::size_t count = 0;
};

inline SsimSummary ssim_summary(std::span<const double> values, double threshold = 0.90) {
  if (values.empty()) throw InvalidArgument("ssim_summary: no values");
  SsimSummary s;
  s.threshold = threshold;
  s.count = values.size();
  s.min = values.front();
  s.max = values.front();
  double total = 0.0;
  std::size_t above = 0;
  for (double v : values) {
    total += v;
    s.min = std::min(s.min, v);
    s.max = std::max(s.max, v);
    if (v >= threshold) ++above;
  }
  s.mean = total / static_cast<double>(values.size());
  s.fraction_above = static_cast<double>(above) / static_cast<double>(values.size());
  return s;
}

template <std::ranges::input_range R>
  requires HasFinalSsim<std::ranges::range_value_t<R>>
SsimSummary ssim_summary(const R& results, double threshold = 0.90) {
  std::vector<double> values;
  for (const auto& r : results) values.push_back(r.final_ssim);
  return ssim_summary(std::span<const double>(values), threshold);
}

}  // namespace pathoattack
