#pragma once

// Differentiable classifier contract, the zero-shot vision-language head, and
// the seeded linear classifier used as an exact-gradient oracle.

#include <cmath>
#include <cstdint>
#include <map>
#include <memory>
#include <mutex>
#include <optional>
#include <random>
#include <string>
#include <vector>

#include "pathoattack/core.hpp"

namespace pathoattack {

/// Cross-entropy loss toward `target`, with its gradient w.r.t. the raw image.
struct LossGradient {
  Prediction prediction;
  double loss = 0.0;
  Tensor gradient;
};

class DifferentiableClassifier {
 public:
  virtual ~DifferentiableClassifier() = default;

  virtual const LabelSet& labels() const = 0;
  virtual Prediction forward(const ImageTensor& image) const = 0;
  virtual LossGradient loss_gradient(const ImageTensor& image, std::size_t target) const = 0;

  /// True when concurrent forward/gradient calls are unsafe. Callers that
  /// share the model across threads must serialize access in that case.
  virtual bool exclusive() const { return false; }
};

/// -log softmax(logits)[target], via log-sum-exp.
inline double cross_entropy(std::span<const double> logits, std::size_t target) {
  const double top = *std::max_element(logits.begin(), logits.end());
  double total = 0.0;
  for (double z : logits) total += std::exp(z - top);
  return top + std::log(total) - logits[target];
}

inline Prediction classify(const DifferentiableClassifier& model, const ImageTensor& image) {
  return model.forward(image);
}

/// Gradient of the cross-entropy toward `target`. Throws NumericalError
/// (naming `record_id`) if the loss or any gradient entry is not finite.
inline LossGradient input_gradient(const DifferentiableClassifier& model, const ImageTensor& image,
                                   std::size_t target, const std::string& record_id = {}) {
  if (target >= model.labels().size()) {
    throw InvalidArgument("target index " + std::to_string(target) + " out of range for " +
                          std::to_string(model.labels().size()) + " classes");
  }
  LossGradient lg = model.loss_gradient(image, target);
  if (lg.gradient.shape() != image.shape()) {
    throw Error("classifier returned gradient of shape " + to_string(lg.gradient.shape()) +
                " for image of shape " + to_string(image.shape()));
  }
  if (!std::isfinite(lg.loss)) throw NumericalError(record_id, "non-finite loss");
  for (double g : lg.gradient.values()) {
    if (!std::isfinite(g)) throw NumericalError(record_id, "non-finite input gradient");
  }
  return lg;
}

// ---------------------------------------------------------------------------
// Linear oracle model

/// logits = W * flatten(x) + b. Forward and gradient are closed form.
class ToyLinearClassifier final : public DifferentiableClassifier {
 public:
  ToyLinearClassifier(LabelSet labels, Shape input_shape, std::vector<double> weights,
                      std::vector<double> bias)
      : labels_(std::move(labels)), shape_(input_shape), weights_(std::move(weights)), bias_(std::move(bias)) {
    if (labels_.size() < 2) throw InvalidArgument("toy classifier needs at least 2 classes");
    if (weights_.size() != labels_.size() * shape_.size()) {
      throw InvalidArgument("weight matrix must be K x pixel_count");
    }
    if (bias_.size() != labels_.size()) throw InvalidArgument("bias must have K entries");
  }

  const LabelSet& labels() const override { return labels_; }
  const Shape& input_shape() const { return shape_; }
  const std::vector<double>& weights() const { return weights_; }
  const std::vector<double>& bias() const { return bias_; }

  std::vector<double> logits(const ImageTensor& image) const {
    check_shape(image);
    const std::size_t n = shape_.size();
    std::vector<double> z(bias_);
    for (std::size_t k = 0; k < z.size(); ++k) {
      const double* row = weights_.data() + k * n;
      double acc = 0.0;
      for (std::size_t i = 0; i < n; ++i) acc += row[i] * image[i];
      z[k] += acc;
    }
    return z;
  }

  Prediction forward(const ImageTensor& image) const override { return make_prediction(logits(image)); }

  // d CE / dx = (softmax(z) - onehot(target))^T W
  LossGradient loss_gradient(const ImageTensor& image, std::size_t target) const override {
    LossGradient out;
    auto z = logits(image);
    out.loss = cross_entropy(z, target);
    out.prediction = make_prediction(std::move(z));
    const std::size_t n = shape_.size();
    out.gradient = Tensor(shape_);
    for (std::size_t k = 0; k < labels_.size(); ++k) {
      const double coeff = out.prediction.probabilities[k] - (k == target ? 1.0 : 0.0);
      const double* row = weights_.data() + k * n;
      for (std::size_t i = 0; i < n; ++i) out.gradient[i] += coeff * row[i];
    }
    return out;
  }

 private:
  void check_shape(const ImageTensor& image) const {
    if (image.shape() != shape_) {
      throw InvalidArgument("toy classifier expects " + to_string(shape_) + ", got " + to_string(image.shape()));
    }
  }

  LabelSet labels_;
  Shape shape_;
  std::vector<double> weights_;
  std::vector<double> bias_;
};

inline LabelSet generic_labels(std::size_t count) {
  std::vector<std::string> names;
  for (std::size_t i = 0; i < count; ++i) names.push_back("class_" + std::to_string(i));
  return LabelSet(std::move(names));
}

/// W and b drawn from N(0, 1) / sqrt(pixel_count) with a mt19937_64 stream
/// seeded by `seed`; W first, row-major, then b.
inline std::shared_ptr<ToyLinearClassifier> make_toy_classifier(std::uint64_t seed, LabelSet labels, Shape shape) {
  if (labels.size() < 2) throw InvalidArgument("toy classifier needs at least 2 classes");
  const std::size_t n = shape.size();
  const double scale = 1.0 / std::sqrt(static_cast<double>(n));
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> normal(0.0, 1.0);
  std::vector<double> w(labels.size() * n);
  for (double& v : w) v = normal(rng) * scale;
  std::vector<double> b(labels.size());
  for (double& v : b) v = normal(rng) * scale;
  return std::make_shared<ToyLinearClassifier>(std::move(labels), shape, std::move(w), std::move(b));
}

inline std::shared_ptr<ToyLinearClassifier> make_toy_classifier(std::uint64_t seed, std::size_t label_count,
                                                                Shape shape) {
  return make_toy_classifier(seed, generic_labels(label_count), shape);
}

// ---------------------------------------------------------------------------
// Zero-shot head

inline constexpr const char* kDefaultPromptTemplate = "An H&E image of {}.";
inline constexpr double kDefaultTemperature = 100.0;

/// Substitutes each label into the single "{}" placeholder of `templ`.
inline std::vector<std::string> build_prompts(const std::vector<std::string>& labels, const std::string& templ) {
  const auto first = templ.find("{}");
  if (first == std::string::npos) throw InvalidArgument("prompt template has no {} placeholder: \"" + templ + "\"");
  if (templ.find("{}", first + 2) != std::string::npos) {
    throw InvalidArgument("prompt template has more than one {} placeholder: \"" + templ + "\"");
  }
  std::vector<std::string> prompts;
  prompts.reserve(labels.size());
  for (const auto& label : labels) {
    prompts.push_back(templ.substr(0, first) + label + templ.substr(first + 2));
  }
  return prompts;
}

inline std::vector<std::string> build_prompts(const LabelSet& labels, const std::string& templ) {
  return build_prompts(labels.names(), templ);
}

/// K x d matrix whose rows are rescaled to unit L2 norm on construction.
class TextEmbeddingMatrix {
 public:
  TextEmbeddingMatrix() = default;
  explicit TextEmbeddingMatrix(std::vector<std::vector<double>> rows) : rows_(std::move(rows)) {
    if (rows_.empty()) throw InvalidArgument("text embedding matrix has no rows");
    dim_ = rows_.front().size();
    if (dim_ < 2) throw InvalidArgument("text embedding dimension must be at least 2");
    for (auto& row : rows_) {
      if (row.size() != dim_) throw InvalidArgument("ragged text embedding matrix");
      double norm = 0.0;
      for (double v : row) norm += v * v;
      norm = std::sqrt(norm);
      if (!(norm > 0.0) || !std::isfinite(norm)) throw InvalidArgument("text embedding row has zero or non-finite norm");
      for (double& v : row) v /= norm;
    }
  }

  std::size_t rows() const { return rows_.size(); }
  std::size_t dim() const { return dim_; }
  const std::vector<double>& row(std::size_t k) const { return rows_.at(k); }

 private:
  std::vector<std::vector<double>> rows_;
  std::size_t dim_ = 0;
};

struct ZeroShotHead {
  ZeroShotHead(LabelSet l, TextEmbeddingMatrix t, double tau)
      : labels(std::move(l)), text_embeddings(std::move(t)), temperature(tau) {
    if (!(temperature > 0.0) || !std::isfinite(temperature)) throw InvalidArgument("temperature must be positive");
    if (text_embeddings.rows() != labels.size()) {
      throw InvalidArgument("text embedding rows (" + std::to_string(text_embeddings.rows()) +
                            ") do not match label count (" + std::to_string(labels.size()) + ")");
    }
  }

  std::size_t dim() const { return text_embeddings.dim(); }

  LabelSet labels;
  TextEmbeddingMatrix text_embeddings;
  double temperature;
};

namespace detail {

inline double l2_norm(std::span<const double> v) {
  double s = 0.0;
  for (double x : v) s += x * x;
  return std::sqrt(s);
}

inline void check_embedding(std::span<const double> e, const ZeroShotHead& head) {
  if (e.size() != head.dim()) {
    throw InvalidArgument("image embedding has dimension " + std::to_string(e.size()) + ", head expects " +
                          std::to_string(head.dim()));
  }
}

}  // namespace detail

/// logit_k = tau * <e / |e|, t_k>.
inline std::vector<double> zero_shot_logits(std::span<const double> image_embedding, const ZeroShotHead& head) {
  detail::check_embedding(image_embedding, head);
  const double norm = detail::l2_norm(image_embedding);
  if (!(norm > 0.0)) throw InvalidArgument("image embedding has zero norm");
  std::vector<double> z(head.labels.size());
  for (std::size_t k = 0; k < z.size(); ++k) {
    const auto& t = head.text_embeddings.row(k);
    double dot = 0.0;
    for (std::size_t j = 0; j < t.size(); ++j) dot += image_embedding[j] * t[j];
    z[k] = head.temperature * dot / norm;
  }
  return z;
}

// ---------------------------------------------------------------------------
// Encoders

struct EmbeddingVjp {
  std::vector<double> embedding;
  Tensor gradient;  // cotangent^T * d(embedding)/d(image)
};

/// Image tower of a vision-language model, differentiable w.r.t. the raw
/// [0, 1] image (any model normalization happens inside).
class ImageEncoder {
 public:
  virtual ~ImageEncoder() = default;
  virtual std::size_t dim() const = 0;
  virtual std::vector<double> embed(const ImageTensor& image) const = 0;
  virtual EmbeddingVjp embed_vjp(const ImageTensor& image, std::span<const double> cotangent) const = 0;
  virtual bool exclusive() const { return false; }
};

class TextEncoder {
 public:
  virtual ~TextEncoder() = default;
  virtual std::vector<std::vector<double>> encode(const std::vector<std::string>& prompts) const = 0;
  /// Logit scale stored alongside the weights, when the checkpoint has one.
  virtual std::optional<double> temperature() const { return std::nullopt; }
};

/// Memoizes text embeddings per prompt list. Thread-safe.
class CachingTextEncoder final : public TextEncoder {
 public:
  explicit CachingTextEncoder(std::shared_ptr<const TextEncoder> inner) : inner_(std::move(inner)) {}

  std::vector<std::vector<double>> encode(const std::vector<std::string>& prompts) const override {
    std::lock_guard lock(mutex_);
    auto it = cache_.find(prompts);
    if (it != cache_.end()) return it->second;
    ++encode_calls_;
    auto rows = inner_->encode(prompts);
    cache_.emplace(prompts, rows);
    return rows;
  }

  std::optional<double> temperature() const override { return inner_->temperature(); }

  std::size_t encode_calls() const {
    std::lock_guard lock(mutex_);
    return encode_calls_;
  }

 private:
  std::shared_ptr<const TextEncoder> inner_;
  mutable std::mutex mutex_;
  mutable std::map<std::vector<std::string>, std::vector<std::vector<double>>> cache_;
  mutable std::size_t encode_calls_ = 0;
};

/// Classifier = image encoder followed by a fixed zero-shot head.
class ZeroShotClassifier final : public DifferentiableClassifier {
 public:
  ZeroShotClassifier(std::shared_ptr<const ImageEncoder> encoder, ZeroShotHead head)
      : encoder_(std::move(encoder)), head_(std::move(head)) {
    if (encoder_->dim() != head_.dim()) {
      throw InvalidArgument("image encoder dimension " + std::to_string(encoder_->dim()) +
                            " does not match text embedding dimension " + std::to_string(head_.dim()));
    }
  }

  /// Builds the head by encoding `prompts` once through `text`.
  static std::shared_ptr<ZeroShotClassifier> from_prompts(std::shared_ptr<const ImageEncoder> encoder,
                                                          const TextEncoder& text, LabelSet labels,
                                                          const std::vector<std::string>& prompts,
                                                          std::optional<double> temperature = std::nullopt) {
    if (prompts.size() != labels.size()) throw InvalidArgument("one prompt per label required");
    const double tau = temperature.value_or(text.temperature().value_or(kDefaultTemperature));
    ZeroShotHead head(std::move(labels), TextEmbeddingMatrix(text.encode(prompts)), tau);
    return std::make_shared<ZeroShotClassifier>(std::move(encoder), std::move(head));
  }

  const LabelSet& labels() const override { return head_.labels; }
  const ZeroShotHead& head() const { return head_; }
  bool exclusive() const override { return encoder_->exclusive(); }

  Prediction forward(const ImageTensor& image) const override {
    return make_prediction(zero_shot_logits(encoder_->embed(image), head_));
  }

  // Chain rule through the head: with u = e/|e| and g = softmax - onehot,
  // dL/du = tau * T^T g and dL/de = (I - u u^T) dL/du / |e|.
  LossGradient loss_gradient(const ImageTensor& image, std::size_t target) const override {
    const auto e = encoder_->embed(image);
    auto z = zero_shot_logits(e, head_);
    LossGradient out;
    out.loss = cross_entropy(z, target);
    out.prediction = make_prediction(std::move(z));

    const std::size_t d = head_.dim();
    const double norm = detail::l2_norm(e);
    std::vector<double> du(d, 0.0);
    for (std::size_t k = 0; k < head_.labels.size(); ++k) {
      const double g = out.prediction.probabilities[k] - (k == target ? 1.0 : 0.0);
      const auto& t = head_.text_embeddings.row(k);
      for (std::size_t j = 0; j < d; ++j) du[j] += head_.temperature * g * t[j];
    }
    double u_dot = 0.0;
    for (std::size_t j = 0; j < d; ++j) u_dot += (e[j] / norm) * du[j];
    std::vector<double> de(d);
    for (std::size_t j = 0; j < d; ++j) de[j] = (du[j] - (e[j] / norm) * u_dot) / norm;

    out.gradient = encoder_->embed_vjp(image, de).gradient;
    return out;
  }

 private:
  std::shared_ptr<const ImageEncoder> encoder_;
  ZeroShotHead head_;
};

/// e = tanh(A x + c) with seeded Gaussian A, c. A small smooth stand-in for a
/// real image tower, used to exercise the zero-shot path without weights.
class RandomFeatureEncoder final : public ImageEncoder {
 public:
  RandomFeatureEncoder(std::uint64_t seed, Shape input_shape, std::size_t dim) : shape_(input_shape), dim_(dim) {
    if (dim_ < 2) throw InvalidArgument("embedding dimension must be at least 2");
    const std::size_t n = shape_.size();
    std::mt19937_64 rng(seed);
    std::normal_distribution<double> normal(0.0, 1.0);
    const double scale = 1.0 / std::sqrt(static_cast<double>(n));
    projection_.resize(dim_ * n);
    for (double& v : projection_) v = normal(rng) * scale;
    offset_.resize(dim_);
    for (double& v : offset_) v = normal(rng);
  }

  std::size_t dim() const override { return dim_; }

  std::vector<double> embed(const ImageTensor& image) const override {
    auto pre = preactivation(image);
    for (double& v : pre) v = std::tanh(v);
    return pre;
  }

  EmbeddingVjp embed_vjp(const ImageTensor& image, std::span<const double> cotangent) const override {
    if (cotangent.size() != dim_) throw InvalidArgument("cotangent dimension mismatch");
    EmbeddingVjp out;
    out.embedding = embed(image);
    out.gradient = Tensor(shape_);
    const std::size_t n = shape_.size();
    for (std::size_t j = 0; j < dim_; ++j) {
      const double local = cotangent[j] * (1.0 - out.embedding[j] * out.embedding[j]);
      const double* row = projection_.data() + j * n;
      for (std::size_t i = 0; i < n; ++i) out.gradient[i] += local * row[i];
    }
    return out;
  }

 private:
  std::vector<double> preactivation(const ImageTensor& image) const {
    if (image.shape() != shape_) {
      throw InvalidArgument("encoder expects " + to_string(shape_) + ", got " + to_string(image.shape()));
    }
    const std::size_t n = shape_.size();
    std::vector<double> pre(offset_);
    for (std::size_t j = 0; j < dim_; ++j) {
      const double* row = projection_.data() + j * n;
      double acc = 0.0;
      for (std::size_t i = 0; i < n; ++i) acc += row[i] * image[i];
      pre[j] += acc;
    }
    return pre;
  }

  Shape shape_;
  std::size_t dim_;
  std::vector<double> projection_;
  std::vector<double> offset_;
};

/// Deterministic prompt embeddings: a Gaussian vector seeded by the prompt
/// text. Offline counterpart of a real text tower.
class HashingTextEncoder final : public TextEncoder {
 public:
  HashingTextEncoder(std::uint64_t seed, std::size_t dim) : seed_(seed), dim_(dim) {}

  std::vector<std::vector<double>> encode(const std::vector<std::string>& prompts) const override {
    std::vector<std::vector<double>> rows;
    for (const auto& prompt : prompts) {
      std::mt19937_64 rng(derive_seed(seed_, prompt.empty() ? std::string(" ") : prompt));
      std::normal_distribution<double> normal(0.0, 1.0);
      std::vector<double> row(dim_);
      for (double& v : row) v = normal(rng);
      rows.push_back(std::move(row));
    }
    return rows;
  }

 private:
  std::uint64_t seed_;
  std::size_t dim_;
};

}  // namespace pathoattack
