#pragma once

// Command-line front end. run_cli is the whole program; tools/ only wraps it
// in main(). Exit codes: 0 success, 1 runtime failure, 2 bad arguments.

#include <cstdio>
#include <iomanip>
#include <iostream>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "pathoattack/attack.hpp"
#include "pathoattack/campaign.hpp"
#include "pathoattack/config.hpp"
#include "pathoattack/fixture.hpp"
#include "pathoattack/image_io.hpp"
#include "pathoattack/ingest.hpp"
#include "pathoattack/render.hpp"

namespace pathoattack {

inline constexpr int kExitOk = 0;
inline constexpr int kExitRuntime = 1;
inline constexpr int kExitUsage = 2;

inline std::vector<std::string> kather_codes() {
  std::vector<std::string> codes;
  for (const auto& [code, phrase] : kather_phrases()) codes.push_back(code);
  return codes;
}

namespace detail {

inline std::vector<std::string> split_csv(const std::string& s) {
  std::vector<std::string> out;
  std::string cur;
  for (char c : s) {
    if (c == ',') {
      out.push_back(cur);
      cur.clear();
    } else {
      cur += c;
    }
  }
  out.push_back(cur);
  return out;
}

inline void print_stats(std::ostream& out, const std::vector<ClassShare>& shares) {
  std::size_t total = 0;
  out << std::left << std::setw(12) << "label" << std::right << std::setw(8) << "count" << std::setw(11) << "fraction"
      << "\n";
  for (const auto& s : shares) {
    total += s.count;
    out << std::left << std::setw(12) << s.label << std::right << std::setw(8) << s.count << std::setw(11)
        << std::fixed << std::setprecision(4) << s.fraction << "\n";
  }
  out << std::left << std::setw(12) << "total" << std::right << std::setw(8) << total << "\n";
  out.unsetf(std::ios::floatfield);
}

inline void print_summary(std::ostream& out, const CampaignReport& report) {
  out << std::left << std::setw(12) << "class" << std::right << std::setw(9) << "attacks" << std::setw(11)
      << "final ASR" << std::setw(11) << "mean SSIM" << "\n";
  for (const auto& label : report.labels.names()) {
    auto it = report.asr.per_class.find(label);
    if (it == report.asr.per_class.end()) {
      out << std::left << std::setw(12) << label << std::right << std::setw(9) << 0 << std::setw(11) << "-"
          << std::setw(11) << "-" << "\n";
      continue;
    }
    double ssim_sum = 0.0;
    std::size_t n = 0;
    for (const auto& row : report.rows) {
      if (row.true_label == label) {
        ssim_sum += row.final_ssim;
        ++n;
      }
    }
    out << std::left << std::setw(12) << label << std::right << std::setw(9) << n << std::setw(11) << std::fixed
        << std::setprecision(3) << it->second.back() << std::setw(11) << ssim_sum / static_cast<double>(n) << "\n";
  }
  out << std::left << std::setw(12) << "overall" << std::right << std::setw(9) << report.asr.n_attacks
      << std::setw(11) << std::fixed << std::setprecision(3) << report.asr.per_step.back() << std::setw(11)
      << report.ssim_stats.mean << "\n";
  out << "SSIM >= " << report.ssim_stats.threshold << ": " << report.ssim_stats.fraction_above * 100.0 << "% of attacks"
      << "; skipped records: " << report.skipped.size() << "\n";
  out.unsetf(std::ios::floatfield);
}

struct AttackArgs {
  std::string image, model = "toy", target, true_label, out_dir, labels, device = "cpu",
                     prompt_template = kDefaultPromptTemplate;
  double eps = 8.0 / 255.0, alpha = 2.0 / 255.0;
  int steps = 10;
  std::optional<std::uint64_t> seed;
  std::size_t size = 224;
  bool random_start = false, stop_on_success = false, untargeted = false;
};

inline int cmd_attack(const AttackArgs& a, std::ostream& out, std::ostream& err) {
  std::vector<std::string> names = a.labels.empty() ? kather_codes() : split_csv(a.labels);
  LabelSet labels;
  try {
    labels = LabelSet(names);
  } catch (const InvalidArgument& e) {
    err << "error: --labels: " << e.what() << "\n";
    return kExitUsage;
  }
  if (!a.untargeted && !labels.contains(a.target)) {
    err << "error: --target '" << a.target << "' is not a known label; expected one of: " << labels.joined() << "\n";
    return kExitUsage;
  }
  if (!a.true_label.empty() && !labels.contains(a.true_label)) {
    err << "error: --true-label '" << a.true_label << "' is not a known label; expected one of: " << labels.joined()
        << "\n";
    return kExitUsage;
  }
  AttackSpec spec;
  spec.epsilon = a.eps;
  spec.alpha = a.alpha;
  spec.max_steps = a.steps;
  spec.targeted = !a.untargeted;
  spec.target_label = a.target;
  spec.random_start = a.random_start;
  spec.stop_on_success = a.stop_on_success;
  std::vector<std::string> warnings;
  try {
    warnings = check_attack_spec(spec);
  } catch (const InvalidArgument& e) {
    err << "error: " << e.what() << "\n";
    return kExitUsage;
  }
  for (const auto& w : warnings) err << "warning: " << w << "\n";

  const std::uint64_t seed = a.seed.value_or(generate_seed());
  if (!a.seed) out << "seed: " << seed << " (generated)\n";

  try {
    const ImageTensor image = load_image(a.image, a.size);
    std::shared_ptr<const DifferentiableClassifier> model;
    if (a.model == "toy") {
      model = make_toy_classifier(derive_seed(seed, "model:toy"), labels, image.shape());
    } else if (a.model.starts_with("pretrained:")) {
      PretrainedOptions opts;
      opts.prompt_template = a.prompt_template;
      opts.prompt_labels = prompt_phrases(labels);
      model = load_pretrained_adapter(a.model.substr(11), a.device, labels, opts);
    } else {
      err << "error: --model must be toy or pretrained:<locator>\n";
      return kExitUsage;
    }
    const Prediction clean = classify(*model, image);
    const std::string true_label = a.true_label.empty() ? labels[clean.predicted_index] : a.true_label;
    if (spec.targeted && true_label == spec.target_label) {
      err << "error: target equals the true label '" << true_label << "'\n";
      return kExitUsage;
    }
    const std::string id = std::filesystem::path(a.image).filename().string();
    spec.seed = derive_seed(seed, id + "=>" + spec.target_label);
    const AttackResult result = run_pgd(*model, image, true_label, spec, {}, id);

    const std::filesystem::path dir = a.out_dir;
    save_png(image, dir / "original.png");
    auto [vis, scale] = perturbation_visual(result.perturbation);
    save_png(vis, dir / "perturbation.png");
    save_png(result.adversarial, dir / "adversarial.png");

    AttackRow row;
    row.id = id;
    row.true_label = true_label;
    row.target_label = spec.targeted ? spec.target_label : "";
    row.clean_pred = labels[clean.predicted_index];
    row.adv_pred = labels[result.adversarial_prediction.predicted_index];
    row.success = result.success;
    row.success_step = result.success_step;
    row.final_ssim = result.final_ssim;
    row.linf = linf_distance(result.adversarial.tensor(), image.tensor());
    row.l2 = l2_distance(result.adversarial.tensor(), image.tensor());
    row.quantized_pred = labels[classify(*model, quantize_image(result.adversarial)).predicted_index];
    row.quantization_flip = row.quantized_pred != row.adv_pred;
    row.adversarial_png = "adversarial.png";
    row.perturbation_png = "perturbation.png";
    row.perturbation_scale = scale;
    write_file_atomic(dir / "manifest.jsonl", row_to_json(row).dump() + "\n");

    out << "clean prediction:       " << row.clean_pred << " (p=" << clean.probabilities[clean.predicted_index]
        << ")\n";
    out << "adversarial prediction: " << row.adv_pred << "\n";
    out << "success step:           " << (row.success_step ? std::to_string(*row.success_step) : "none") << "\n";
    out << "final SSIM:             " << row.final_ssim << "\n";
    out << "artifacts:              " << dir.string() << "\n";
  } catch (const std::exception& e) {
    err << "error: " << e.what() << "\n";
    return kExitRuntime;
  }
  return kExitOk;
}

inline int cmd_campaign(const std::string& config_path, const std::vector<std::string>& overrides,
                        std::ostream& out, std::ostream& err) {
  CampaignConfig config;
  try {
    FlatConfig flat = config_path.empty() ? default_config() : load_config_file(config_path);
    for (const auto& o : overrides) apply_override(flat, o);
    if (flat["seed"].is_null()) {
      flat["seed"] = generate_seed();
      out << "seed: " << flat["seed"].get<std::uint64_t>() << " (generated)\n";
    }
    config = to_campaign_config(flat);
  } catch (const ConfigError& e) {
    err << "error: " << e.what() << "\n";
    return kExitUsage;
  }

  try {
    std::filesystem::create_directories(config.output_dir);
    CampaignRun run = run_campaign(config);
    for (const auto& w : run.report.warnings) err << "warning: " << w << "\n";
    for (const auto& s : run.report.skipped) err << "skipped " << s.id << ": " << s.reason << "\n";
    persist_artifacts(run.report, run.results, config.output_dir);
    render_report(run.report, config.output_dir);
    print_summary(out, run.report);
    out << "report: " << (config.output_dir / "report.json").string() << "\n";
  } catch (const std::exception& e) {
    err << "error: " << e.what() << "\n";
    return kExitRuntime;
  }
  return kExitOk;
}

inline int cmd_stats(const std::string& root, const std::string& chart_dir, std::ostream& out, std::ostream& err) {
  try {
    const DatasetManifest m = scan_dataset(root);
    for (const auto& w : m.warnings) err << "warning: " << w << "\n";
    const auto shares = dataset_stats(m);
    print_stats(out, shares);
    if (!chart_dir.empty()) {
      std::string csv = "label,count,fraction\n";
      for (const auto& s : shares) csv += s.label + "," + std::to_string(s.count) + "," + detail::csv_num(s.fraction) + "\n";
      write_file_atomic(std::filesystem::path(chart_dir) / "class_distribution.csv", csv);
      write_file_atomic(std::filesystem::path(chart_dir) / "manifest.json", manifest_to_json(m).dump(2) + "\n");
    }
  } catch (const std::exception& e) {
    err << "error: " << e.what() << "\n";
    return kExitRuntime;
  }
  return kExitOk;
}

inline int cmd_render(const std::string& report_path, std::string out_dir, std::ostream& out, std::ostream& err) {
  try {
    std::ifstream in(report_path);
    if (!in) throw IoError("cannot read '" + report_path + "'");
    const CampaignReport report = report_from_json(nlohmann::json::parse(in));
    if (out_dir.empty()) out_dir = std::filesystem::path(report_path).parent_path().string();
    for (const auto& p : render_report(report, out_dir)) out << p.string() << "\n";
  } catch (const std::exception& e) {
    err << "error: " << e.what() << "\n";
    return kExitRuntime;
  }
  return kExitOk;
}

}  // namespace detail

/// Parses `args` (without the program name) and runs the chosen command.
inline int run_cli(const std::vector<std::string>& args, std::ostream& out = std::cout,
                   std::ostream& err = std::cerr) {
  CLI::App app{"Targeted PGD attacks on zero-shot histopathology classifiers", "pathoattack"};
  app.require_subcommand(1);

  detail::AttackArgs aa;
  auto* attack = app.add_subcommand("attack", "attack one image and write the original/perturbation/adversarial triptych");
  attack->add_option("--image", aa.image, "input image (TIFF/PNG/JPEG)")->required();
  attack->add_option("--model", aa.model, "toy | pretrained:<locator>")->capture_default_str();
  attack->add_option("--target", aa.target, "target label");
  attack->add_option("--true-label", aa.true_label, "ground-truth label (default: clean prediction)");
  attack->add_option("--labels", aa.labels, "comma-separated label set (default: Kather codes)");
  attack->add_option("--eps", aa.eps, "L-infinity radius")->capture_default_str();
  attack->add_option("--alpha", aa.alpha, "step size")->capture_default_str();
  attack->add_option("--steps", aa.steps, "PGD iterations")->capture_default_str();
  attack->add_option("--seed", aa.seed, "global seed (default: generated and printed)");
  attack->add_option("--size", aa.size, "square side the image is resized to")->capture_default_str();
  attack->add_option("--device", aa.device, "device for pretrained checkpoints")->capture_default_str();
  attack->add_option("--template", aa.prompt_template, "zero-shot prompt template")->capture_default_str();
  attack->add_flag("--random-start", aa.random_start, "uniform random start inside the ball");
  attack->add_flag("--stop-on-success", aa.stop_on_success, "stop at the first successful step");
  attack->add_flag("--untargeted", aa.untargeted, "push away from the true label instead of toward --target");
  attack->add_option("--out", aa.out_dir, "output directory")->required();

  std::string config_path;
  std::vector<std::string> overrides;
  auto* campaign = app.add_subcommand("campaign", "attack a sampled dataset and write report, artifacts and plots");
  campaign->add_option("--config", config_path, "JSON config file")->check(CLI::ExistingFile);
  campaign->add_option("overrides", overrides, "dotted key=value overrides, e.g. attack.epsilon=0.05");
  campaign->footer(config_help());

  std::string stats_root, stats_out;
  auto* stats = app.add_subcommand("stats", "per-class counts of a class-per-folder dataset");
  stats->add_option("--dataset", stats_root, "dataset root")->required();
  stats->add_option("--out", stats_out, "also write class_distribution.csv and manifest.json here");

  std::string render_path, render_out;
  auto* render = app.add_subcommand("render", "re-render plots from an existing report.json");
  render->add_option("--report", render_path, "report.json")->required();
  render->add_option("--out", render_out, "output directory (default: the report's directory)");

  std::string fx_root, fx_classes = "A,B,C";
  std::size_t fx_per_class = 4, fx_size = 32;
  std::uint64_t fx_seed = 0;
  auto* fixture = app.add_subcommand("fixture", "write a synthetic class-per-folder PNG dataset");
  fixture->add_option("--out", fx_root, "dataset root to create")->required();
  fixture->add_option("--classes", fx_classes, "comma-separated class names")->capture_default_str();
  fixture->add_option("--per-class", fx_per_class, "images per class")->capture_default_str();
  fixture->add_option("--size", fx_size, "square image side")->capture_default_str();
  fixture->add_option("--seed", fx_seed, "seed")->capture_default_str();

  std::vector<std::string> argv_store = {"pathoattack"};
  argv_store.insert(argv_store.end(), args.begin(), args.end());
  std::vector<const char*> argv;
  for (const auto& s : argv_store) argv.push_back(s.c_str());
  try {
    app.parse(static_cast<int>(argv.size()), argv.data());
  } catch (const CLI::ParseError& e) {
    // Prints help to `out` for --help and the failure message to `err` otherwise.
    return app.exit(e, out, err) == 0 ? kExitOk : kExitUsage;
  }

  if (*attack) {
    if (!aa.untargeted && aa.target.empty()) {
      err << "error: --target is required unless --untargeted is given\n";
      return kExitUsage;
    }
    return detail::cmd_attack(aa, out, err);
  }
  if (*campaign) return detail::cmd_campaign(config_path, overrides, out, err);
  if (*stats) return detail::cmd_stats(stats_root, stats_out, out, err);
  if (*render) return detail::cmd_render(render_path, render_out, out, err);
  if (*fixture) {
    try {
      const auto n = write_synthetic_dataset(fx_root, detail::split_csv(fx_classes), fx_per_class, fx_size, fx_seed);
      out << "wrote " << n << " images under " << fx_root << "\n";
    } catch (const std::exception& e) {
      err << "error: " << e.what() << "\n";
      return kExitRuntime;
    }
    return kExitOk;
  }
  return kExitUsage;
}

inline int run_cli(int argc, char** argv) {
  std::vector<std::string> args(argv + 1, argv + argc);
  return run_cli(args);
}

}  // namespace pathoattack
