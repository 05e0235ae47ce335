// Zero-shot classification and attack through the vision-language head,
// using seeded stand-in encoders so no checkpoint is needed.

#include <cstdio>
#include <memory>

#include "pathoattack/attack.hpp"
#include "pathoattack/fixture.hpp"
#include "pathoattack/ingest.hpp"

int main() {
  using namespace pathoattack;
  const LabelSet labels({"ADI", "BACK", "DEB", "LYM", "MUC", "MUS", "NORM", "STR", "TUM"});
  const Shape shape{3, 32, 32};

  auto image_tower = std::make_shared<RandomFeatureEncoder>(3, shape, 64);
  CachingTextEncoder text(std::make_shared<HashingTextEncoder>(5, 64));
  const auto prompts = build_prompts(prompt_phrases(labels), kDefaultPromptTemplate);
  auto model = ZeroShotClassifier::from_prompts(image_tower, text, labels, prompts);

  for (const auto& p : prompts) std::printf("prompt: %s\n", p.c_str());
  const ImageTensor patch = synthetic_patch(8, labels.size(), shape.height, 1);
  const auto clean = classify(*model, patch);
  std::printf("clean: %s (p=%.3f)\n", labels[clean.predicted_index].c_str(),
              clean.probabilities[clean.predicted_index]);

  AttackSpec spec;
  spec.target_label = clean.predicted_index == 0 ? "BACK" : "ADI";
  spec.epsilon = 16.0 / 255.0;
  const AttackResult r = run_pgd(*model, patch, labels[clean.predicted_index], spec);
  std::printf("target %s: success=%d step=%d ssim=%.4f\n", spec.target_label.c_str(), r.success,
              r.success_step.value_or(0), r.final_ssim);
  return 0;
}
