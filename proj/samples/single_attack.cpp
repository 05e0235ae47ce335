// Targeted PGD against the seeded linear classifier on one synthetic patch,
// printing the per-step trace.

#include <cstdio>

#include "pathoattack/attack.hpp"
#include "pathoattack/fixture.hpp"

int main() {
  using namespace pathoattack;
  const LabelSet labels({"ADI", "STR", "TUM"});
  const Shape shape{3, 64, 64};
  auto model = make_toy_classifier(7, labels, shape);
  const ImageTensor patch = synthetic_patch(2, labels.size(), shape.height, 11);

  AttackSpec spec;
  spec.target_label = "ADI";
  spec.max_steps = 10;
  const auto clean = classify(*model, patch);
  std::printf("clean prediction: %s\n", labels[clean.predicted_index].c_str());

  const AttackResult r = run_pgd(*model, patch, "TUM", spec);
  for (const auto& s : r.trace) {
    std::printf("step %2d  loss %8.4f  pred %-4s  p(target) %.3f  ssim %.4f\n", s.step, s.loss,
                s.predicted_label.c_str(), s.target_probability, s.ssim_to_original);
  }
  std::printf("success: %s (step %d), final SSIM %.4f\n", r.success ? "yes" : "no",
              r.success_step.value_or(0), r.final_ssim);
  return r.success ? 0 : 1;
}
