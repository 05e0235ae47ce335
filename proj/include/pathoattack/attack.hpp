#pragma once

// L-infinity projected gradient descent with per-step tracing.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <optional>
#include <random>
#include <string>
#include <vector>

#include "pathoattack/core.hpp"
#include "pathoattack/metrics.hpp"
#include "pathoattack/model.hpp"

namespace pathoattack {

struct AttackSpec {
  double epsilon = 8.0 / 255.0;
  double alpha = 2.0 / 255.0;
  int max_steps = 10;
  bool targeted = true;
  std::string target_label;
  bool random_start = false;
  bool stop_on_success = false;
  std::uint64_t seed = 0;
};

/// Hard errors throw; soft issues (zero radius, oversized step) come back as
/// human-readable warnings.
inline std::vector<std::string> check_attack_spec(const AttackSpec& spec) {
  if (!std::isfinite(spec.epsilon) || spec.epsilon < 0.0) throw InvalidArgument("epsilon must be finite and >= 0");
  if (!std::isfinite(spec.alpha) || !(spec.alpha > 0.0)) throw InvalidArgument("alpha must be finite and > 0");
  if (spec.max_steps < 1) throw InvalidArgument("max_steps must be >= 1");
  std::vector<std::string> warnings;
  if (spec.epsilon == 0.0) warnings.emplace_back("epsilon is 0: the perturbation ball is a single point");
  if (spec.alpha > 2.0 * spec.epsilon) {
    warnings.emplace_back("alpha exceeds 2*epsilon: every step will saturate the projection");
  }
  return warnings;
}

struct StepRecord {
  int step = 0;
  double loss = 0.0;  // CE toward the target, or -CE of the true label when untargeted
  std::string predicted_label;
  double target_probability = 0.0;  // probability of the true label when untargeted
  double ssim_to_original = 0.0;
};

struct AttackResult {
  ImageTensor original;
  /// Last iterate that met the attack goal, or the final iterate if none did.
  ImageTensor adversarial;
  Tensor perturbation;
  std::vector<StepRecord> trace;
  bool success = false;
  std::optional<int> success_step;
  int adversarial_step = 0;
  double final_ssim = 1.0;
  std::string true_label;
  std::string target_label;  // empty for untargeted attacks
  Prediction adversarial_prediction;
};

/// Thrown when the loss or gradient turns non-finite mid-attack.
struct AttackAborted : NumericalError {
  AttackAborted(const NumericalError& cause, std::vector<StepRecord> partial)
      : NumericalError(cause), partial_trace(std::move(partial)) {}
  std::vector<StepRecord> partial_trace;
};

/// Elementwise clamp into [-epsilon, epsilon].
inline Tensor project_linf(Tensor delta, double epsilon) {
  if (!(epsilon > 0.0)) throw InvalidArgument("project_linf: epsilon must be > 0");
  for (double& v : delta.values()) v = std::clamp(v, -epsilon, epsilon);
  return delta;
}

inline double sign_of(double g) { return g > 0.0 ? 1.0 : (g < 0.0 ? -1.0 : 0.0); }

/// One signed step (descending when targeted, ascending otherwise), then
/// projection onto the epsilon ball around `x_orig` and the [0, 1] box.
/// Clamping the iterate to [x_orig - eps, x_orig + eps] is the same map as
/// x_orig + project_linf(x - x_orig) but leaves feasible pixels bit-identical.
inline ImageTensor pgd_step(const ImageTensor& x_adv, const ImageTensor& x_orig, const Tensor& grad,
                            const AttackSpec& spec) {
  if (x_adv.shape() != x_orig.shape() || grad.shape() != x_orig.shape()) {
    throw InvalidArgument("pgd_step: shape mismatch");
  }
  const double direction = spec.targeted ? -1.0 : 1.0;
  Tensor next(x_orig.shape());
  for (std::size_t i = 0; i < next.size(); ++i) {
    if (!std::isfinite(grad[i])) throw NumericalError({}, "pgd_step: non-finite gradient");
    const double stepped = x_adv[i] + direction * spec.alpha * sign_of(grad[i]);
    const double in_ball = std::clamp(stepped, x_orig[i] - spec.epsilon, x_orig[i] + spec.epsilon);
    next[i] = std::clamp(in_ball, 0.0, 1.0);
  }
  return ImageTensor(std::move(next));
}

/// Uniform draw in the epsilon ball, clipped to [0, 1].
inline ImageTensor random_start_point(const ImageTensor& x_orig, double epsilon, std::uint64_t seed) {
  Tensor delta(x_orig.shape());
  if (epsilon > 0.0) {
    std::mt19937_64 rng(seed);
    std::uniform_real_distribution<double> uniform(-epsilon, epsilon);
    for (double& v : delta.values()) v = uniform(rng);
    delta = project_linf(std::move(delta), epsilon);
  }
  Tensor start(x_orig.shape());
  for (std::size_t i = 0; i < start.size(); ++i) start[i] = std::clamp(x_orig[i] + delta[i], 0.0, 1.0);
  return ImageTensor(std::move(start));
}

/// Runs PGD against `model`. The loss is cross-entropy toward the target
/// (targeted) or the negated cross-entropy of the true label (untargeted);
/// SSIM is tracked per step but never enters the loss.
inline AttackResult run_pgd(const DifferentiableClassifier& model, const ImageTensor& image,
                            const std::string& true_label, const AttackSpec& spec, const SsimParams& ssim_params = {},
                            const std::string& record_id = {}) {
  check_attack_spec(spec);
  const LabelSet& labels = model.labels();
  const std::size_t true_index = labels.index_of(true_label);
  std::size_t goal_index = true_index;
  if (spec.targeted) {
    goal_index = labels.index_of(spec.target_label);
    if (goal_index == true_index) {
      throw InvalidArgument("targeted attack: target label equals true label '" + true_label + "'");
    }
  }

  AttackResult result;
  result.original = image;
  result.true_label = true_label;
  if (spec.targeted) result.target_label = spec.target_label;

  ImageTensor x = spec.random_start ? random_start_point(image, spec.epsilon, spec.seed) : image;
  std::optional<ImageTensor> last_success;
  Prediction last_success_prediction;
  Prediction prediction;

  for (int step = 1; step <= spec.max_steps; ++step) {
    try {
      const LossGradient lg = input_gradient(model, x, goal_index, record_id);
      x = pgd_step(x, image, lg.gradient, spec);
      prediction = model.forward(x);
      const double ce = cross_entropy(prediction.logits, goal_index);
      if (!std::isfinite(ce)) throw NumericalError(record_id, "non-finite loss");

      StepRecord rec;
      rec.step = step;
      rec.loss = spec.targeted ? ce : -ce;
      rec.predicted_label = labels[prediction.predicted_index];
      rec.target_probability = prediction.probabilities[goal_index];
      rec.ssim_to_original = ssim(x, image, ssim_params);
      result.trace.push_back(std::move(rec));
    } catch (const NumericalError& e) {
      throw AttackAborted(NumericalError(record_id, e.what()), result.trace);
    }

    const bool reached = spec.targeted ? prediction.predicted_index == goal_index
                                       : prediction.predicted_index != true_index;
    if (reached) {
      if (!result.success_step) result.success_step = step;
      last_success = x;
      last_success_prediction = prediction;
      result.adversarial_step = step;
      if (spec.stop_on_success) break;
    }
  }

  result.success = result.success_step.has_value();
  if (last_success) {
    result.adversarial = std::move(*last_success);
    result.adversarial_prediction = std::move(last_success_prediction);
  } else {
    result.adversarial = std::move(x);
    result.adversarial_prediction = std::move(prediction);
    result.adversarial_step = static_cast<int>(result.trace.size());
  }
  result.perturbation = result.adversarial.tensor() - image.tensor();
  result.final_ssim = result.trace[static_cast<std::size_t>(result.adversarial_step - 1)].ssim_to_original;
  return result;
}

}  // namespace pathoattack
