#pragma once

// Shared domain types for the attack pipeline: CHW image tensors, label sets,
// predictions, dataset records, seeding, and the exception hierarchy.

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <limits>
#include <optional>
#include <span>
#include <stdexcept>
#include <string>
#include <string_view>
#include <unordered_map>
#include <utility>
#include <vector>

namespace pathoattack {

inline constexpr const char* kVersion = "pathoattack 0.1.0";

struct Error : std::runtime_error {
  using std::runtime_error::runtime_error;
};

struct InvalidArgument : Error {
  using Error::Error;
};

struct IoError : Error {
  using Error::Error;
};

/// Raised when a gradient or loss stops being finite. Carries the id of the
/// record being processed so campaign logs can point at the offending image.
struct NumericalError : Error {
  NumericalError(std::string record, const std::string& what)
      : Error(record.empty() ? what : what + " (record " + record + ")"),
        record_id(std::move(record)) {}
  std::string record_id;
};

struct Shape {
  std::size_t channels = 0;
  std::size_t height = 0;
  std::size_t width = 0;

  constexpr std::size_t size() const { return channels * height * width; }
  friend constexpr bool operator==(const Shape&, const Shape&) = default;
};

inline std::string to_string(const Shape& s) {
  return std::to_string(s.channels) + "x" + std::to_string(s.height) + "x" + std::to_string(s.width);
}

/// Dense channels-first array of doubles. Used for images, perturbations and
/// gradients alike; ImageTensor adds the pixel-domain invariants on top.
class Tensor {
 public:
  Tensor() = default;
  explicit Tensor(Shape shape, double fill = 0.0) : shape_(shape), data_(shape.size(), fill) {}
  Tensor(Shape shape, std::vector<double> data) : shape_(shape), data_(std::move(data)) {
    if (data_.size() != shape_.size()) {
      throw InvalidArgument("tensor data length " + std::to_string(data_.size()) +
                            " does not match shape " + to_string(shape_));
    }
  }

  const Shape& shape() const { return shape_; }
  std::size_t size() const { return data_.size(); }

  double& at(std::size_t c, std::size_t y, std::size_t x) {
    return data_[(c * shape_.height + y) * shape_.width + x];
  }
  double at(std::size_t c, std::size_t y, std::size_t x) const {
    return data_[(c * shape_.height + y) * shape_.width + x];
  }
  double& operator[](std::size_t i) { return data_[i]; }
  double operator[](std::size_t i) const { return data_[i]; }

  std::span<double> values() { return data_; }
  std::span<const double> values() const { return data_; }
  const std::vector<double>& vector() const { return data_; }

  friend bool operator==(const Tensor&, const Tensor&) = default;

 private:
  Shape shape_{};
  std::vector<double> data_;
};

inline Tensor operator-(const Tensor& a, const Tensor& b) {
  if (a.shape() != b.shape()) {
    throw InvalidArgument("shape mismatch: " + to_string(a.shape()) + " vs " + to_string(b.shape()));
  }
  Tensor out(a.shape());
  for (std::size_t i = 0; i < a.size(); ++i) out[i] = a[i] - b[i];
  return out;
}

inline constexpr std::size_t kMinImageSide = 8;

/// Returns a description of the first violated image invariant, or nullopt.
inline std::optional<std::string> validate_image(const Tensor& t) {
  const Shape& s = t.shape();
  if (s.channels != 3) {
    return "expected 3 channels, got " + std::to_string(s.channels);
  }
  if (s.height < kMinImageSide || s.width < kMinImageSide) {
    return "image " + to_string(s) + " is smaller than the 8x8 minimum";
  }
  for (std::size_t i = 0; i < t.size(); ++i) {
    const double v = t[i];
    if (!std::isfinite(v)) return "non-finite value at flat index " + std::to_string(i);
    if (v < 0.0 || v > 1.0) {
      return "value " + std::to_string(v) + " at flat index " + std::to_string(i) + " outside [0, 1]";
    }
  }
  return std::nullopt;
}

/// A 3-channel tensor with every value finite and inside [0, 1].
class ImageTensor {
 public:
  ImageTensor() = default;
  explicit ImageTensor(Tensor t) : tensor_(std::move(t)) {
    if (auto violation = validate_image(tensor_)) throw InvalidArgument("invalid image: " + *violation);
  }

  const Tensor& tensor() const { return tensor_; }
  const Shape& shape() const { return tensor_.shape(); }
  std::size_t size() const { return tensor_.size(); }
  double operator[](std::size_t i) const { return tensor_[i]; }
  std::span<const double> values() const { return tensor_.values(); }

  friend bool operator==(const ImageTensor&, const ImageTensor&) = default;

 private:
  Tensor tensor_;
};

/// Ordered, duplicate-free class names. Position defines the class index.
class LabelSet {
 public:
  LabelSet() = default;
  explicit LabelSet(std::vector<std::string> labels) : labels_(std::move(labels)) {
    for (std::size_t i = 0; i < labels_.size(); ++i) {
      if (labels_[i].empty()) throw InvalidArgument("empty class label at index " + std::to_string(i));
      if (!index_.emplace(labels_[i], i).second) {
        throw InvalidArgument("duplicate class label '" + labels_[i] + "'");
      }
    }
  }

  std::size_t size() const { return labels_.size(); }
  bool empty() const { return labels_.empty(); }
  const std::string& operator[](std::size_t i) const { return labels_.at(i); }
  const std::vector<std::string>& names() const { return labels_; }
  bool contains(std::string_view label) const { return index_.contains(std::string(label)); }

  std::size_t index_of(std::string_view label) const {
    auto it = index_.find(std::string(label));
    if (it == index_.end()) {
      throw InvalidArgument("unknown label '" + std::string(label) + "'; known labels: " + joined());
    }
    return it->second;
  }

  std::string joined(std::string_view sep = ", ") const {
    std::string out;
    for (std::size_t i = 0; i < labels_.size(); ++i) {
      if (i) out += sep;
      out += labels_[i];
    }
    return out;
  }

  friend bool operator==(const LabelSet& a, const LabelSet& b) { return a.labels_ == b.labels_; }

 private:
  std::vector<std::string> labels_;
  std::unordered_map<std::string, std::size_t> index_;
};

struct Prediction {
  std::vector<double> logits;
  std::vector<double> probabilities;
  std::size_t predicted_index = 0;
};

/// Numerically stable softmax.
inline std::vector<double> softmax(std::span<const double> logits) {
  std::vector<double> p(logits.size());
  if (logits.empty()) return p;
  const double top = *std::max_element(logits.begin(), logits.end());
  double total = 0.0;
  for (std::size_t i = 0; i < logits.size(); ++i) {
    p[i] = std::exp(logits[i] - top);
    total += p[i];
  }
  for (double& v : p) v /= total;
  return p;
}

/// Index of the largest value; the lowest index wins ties.
inline std::size_t argmax(std::span<const double> values) {
  std::size_t best = 0;
  for (std::size_t i = 1; i < values.size(); ++i) {
    if (values[i] > values[best]) best = i;
  }
  return best;
}

inline Prediction make_prediction(std::vector<double> logits) {
  if (logits.empty()) throw InvalidArgument("cannot build a prediction from zero logits");
  Prediction p;
  p.probabilities = softmax(logits);
  p.predicted_index = argmax(p.probabilities);
  p.logits = std::move(logits);
  return p;
}

struct DatasetRecord {
  std::string id;
  std::filesystem::path path;
  std::string true_label;

  friend bool operator==(const DatasetRecord&, const DatasetRecord&) = default;
};

namespace detail {

inline constexpr std::uint64_t splitmix64(std::uint64_t x) {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

inline constexpr std::uint64_t fnv1a64(std::string_view s) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char c : s) {
    h ^= c;
    h *= 0x100000001b3ULL;
  }
  return h;
}

}  // namespace detail

/// Per-record seed: FNV-1a of the id mixed with the global seed through two
/// splitmix64 rounds. Pure, platform independent, and independent of the order
/// in which records are processed.
inline std::uint64_t derive_seed(std::uint64_t global_seed, std::string_view record_id) {
  if (record_id.empty()) throw InvalidArgument("derive_seed: record id must be non-empty");
  return detail::splitmix64(detail::splitmix64(global_seed) ^ detail::fnv1a64(record_id));
}

}  // namespace pathoattack
