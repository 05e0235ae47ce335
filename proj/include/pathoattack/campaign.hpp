#pragma once

// Dataset-scale attack campaigns: target selection, a deterministic worker
// pool, aggregation into a report, and artifact persistence.

#include <atomic>
#include <filesystem>
#include <map>
#include <memory>
#include <mutex>
#include <optional>
#include <string>
#include <thread>
#include <vector>

#include "json.hpp"
#include "pathoattack/attack.hpp"
#include "pathoattack/bridge.hpp"
#include "pathoattack/core.hpp"
#include "pathoattack/image_io.hpp"
#include "pathoattack/ingest.hpp"
#include "pathoattack/metrics.hpp"
#include "pathoattack/model.hpp"

namespace pathoattack {

// ---------------------------------------------------------------------------
// Target selection

struct TargetStrategy {
  enum class Kind { fixed_map, next_class, all_pairs };
  Kind kind = Kind::next_class;
  std::map<std::string, std::string> fixed_map;

  void validate(const LabelSet& labels) const {
    if (kind != Kind::fixed_map) return;
    for (const auto& label : labels.names()) {
      auto it = fixed_map.find(label);
      if (it == fixed_map.end()) throw InvalidArgument("fixed target map has no entry for label '" + label + "'");
      if (!labels.contains(it->second)) {
        throw InvalidArgument("fixed target map sends '" + label + "' to unknown label '" + it->second + "'");
      }
      if (it->second == label) throw InvalidArgument("fixed target map sends '" + label + "' to itself");
    }
    for (const auto& [from, to] : fixed_map) {
      if (!labels.contains(from)) throw InvalidArgument("fixed target map has unknown source label '" + from + "'");
    }
  }
};

inline std::string to_string(TargetStrategy::Kind k) {
  switch (k) {
    case TargetStrategy::Kind::fixed_map: return "fixed_map";
    case TargetStrategy::Kind::next_class: return "next_class";
    case TargetStrategy::Kind::all_pairs: return "all_pairs";
  }
  return "next_class";
}

inline TargetStrategy::Kind parse_strategy_kind(const std::string& s) {
  if (s == "fixed_map") return TargetStrategy::Kind::fixed_map;
  if (s == "next_class") return TargetStrategy::Kind::next_class;
  if (s == "all_pairs") return TargetStrategy::Kind::all_pairs;
  throw InvalidArgument("unknown target strategy '" + s + "' (expected fixed_map, next_class or all_pairs)");
}

/// Every target label the strategy assigns to an image of `true_label`.
inline std::vector<std::string> resolve_targets(const TargetStrategy& strategy, const std::string& true_label,
                                                const LabelSet& labels) {
  const std::size_t idx = labels.index_of(true_label);
  if (labels.size() < 2) throw InvalidArgument("targeted attacks need at least 2 labels");
  switch (strategy.kind) {
    case TargetStrategy::Kind::next_class:
      return {labels[(idx + 1) % labels.size()]};
    case TargetStrategy::Kind::fixed_map: {
      strategy.validate(labels);
      return {strategy.fixed_map.at(true_label)};
    }
    case TargetStrategy::Kind::all_pairs: {
      std::vector<std::string> out;
      for (std::size_t k = 0; k < labels.size(); ++k) {
        if (k != idx) out.push_back(labels[k]);
      }
      return out;
    }
  }
  return {};
}

inline std::string resolve_target(const TargetStrategy& strategy, const std::string& true_label,
                                  const LabelSet& labels) {
  if (strategy.kind == TargetStrategy::Kind::all_pairs) {
    throw InvalidArgument("all_pairs yields several targets; use resolve_targets");
  }
  return resolve_targets(strategy, true_label, labels).front();
}

// ---------------------------------------------------------------------------
// Configuration

struct CampaignConfig {
  std::filesystem::path dataset_root;
  std::size_t per_class = 5;
  std::size_t image_size = 224;

  std::string model = "toy";  // "toy" or "pretrained:<locator>"
  std::string device = "cpu";
  std::string prompt_template = kDefaultPromptTemplate;
  std::optional<double> temperature;

  AttackSpec attack;  // target_label and seed are filled per work item
  TargetStrategy strategy;
  SsimParams ssim;
  double min_ssim_report_threshold = 0.90;

  std::filesystem::path output_dir = "runs/latest";
  std::uint64_t seed = 0;
  std::size_t workers = 1;
};

/// Config fields that define the result. Worker count and output location are
/// left out so they cannot change report bytes.
inline nlohmann::json canonical_config(const CampaignConfig& c) {
  nlohmann::json j;
  j["dataset"] = {{"root", c.dataset_root.generic_string()}, {"per_class", c.per_class}, {"image_size", c.image_size}};
  j["model"] = {{"spec", c.model}, {"device", c.device}, {"prompt_template", c.prompt_template},
                {"temperature", c.temperature ? nlohmann::json(*c.temperature) : nlohmann::json(nullptr)}};
  j["attack"] = {{"epsilon", c.attack.epsilon},     {"alpha", c.attack.alpha},
                 {"max_steps", c.attack.max_steps}, {"targeted", c.attack.targeted},
                 {"random_start", c.attack.random_start}, {"stop_on_success", c.attack.stop_on_success}};
  j["target"] = {{"strategy", to_string(c.strategy.kind)}, {"fixed_map", c.strategy.fixed_map}};
  j["ssim"] = {{"window_size", c.ssim.window_size}, {"sigma", c.ssim.gaussian_sigma}, {"k1", c.ssim.k1},
               {"k2", c.ssim.k2},                   {"dynamic_range", c.ssim.dynamic_range}};
  j["report"] = {{"min_ssim_threshold", c.min_ssim_report_threshold}};
  j["seed"] = c.seed;
  return j;
}

/// Serializes access to a classifier that declared itself exclusive.
class SerializedClassifier final : public DifferentiableClassifier {
 public:
  explicit SerializedClassifier(std::shared_ptr<const DifferentiableClassifier> inner) : inner_(std::move(inner)) {}
  const LabelSet& labels() const override { return inner_->labels(); }
  Prediction forward(const ImageTensor& image) const override {
    std::lock_guard lock(mutex_);
    return inner_->forward(image);
  }
  LossGradient loss_gradient(const ImageTensor& image, std::size_t target) const override {
    std::lock_guard lock(mutex_);
    return inner_->loss_gradient(image, target);
  }

 private:
  std::shared_ptr<const DifferentiableClassifier> inner_;
  mutable std::mutex mutex_;
};

inline std::shared_ptr<const DifferentiableClassifier> make_classifier(const CampaignConfig& config,
                                                                       const LabelSet& labels) {
  if (config.model == "toy") {
    return make_toy_classifier(derive_seed(config.seed, "model:toy"), labels,
                               Shape{3, config.image_size, config.image_size});
  }
  constexpr std::string_view prefix = "pretrained:";
  if (config.model.starts_with(prefix)) {
    PretrainedOptions opts;
    opts.prompt_template = config.prompt_template;
    opts.prompt_labels = prompt_phrases(labels);
    opts.temperature = config.temperature;
    return load_pretrained_adapter(config.model.substr(prefix.size()), config.device, labels, opts);
  }
  throw InvalidArgument("unknown model '" + config.model + "' (expected toy or pretrained:<locator>)");
}

// ---------------------------------------------------------------------------
// Report

struct AttackRow {
  std::string id;
  std::string true_label;
  std::string target_label;
  std::string clean_pred;
  std::string adv_pred;
  bool success = false;
  std::optional<int> success_step;
  double final_ssim = 0.0;
  double linf = 0.0;
  double l2 = 0.0;
  std::string quantized_pred;  // prediction on the 8-bit image that is written to disk
  bool quantization_flip = false;
  std::string adversarial_png;
  std::string perturbation_png;
  double perturbation_scale = 0.0;
  std::vector<StepRecord> trace;
};

struct SkippedRecord {
  std::string id;
  std::string label;
  std::string reason;
};

struct ClassTally {
  std::size_t sampled = 0;
  std::size_t attacked = 0;
  std::size_t skipped = 0;
};

using CountMatrix = std::vector<std::vector<std::size_t>>;

struct CampaignReport {
  LabelSet labels;
  int max_steps = 0;
  bool targeted = true;
  AsrCurve asr;
  CountMatrix pre_matrix;   // rows: true label, columns: clean prediction
  CountMatrix post_matrix;  // rows: true label, columns: adversarial prediction
  SsimSummary ssim_stats;
  std::vector<AttackRow> rows;  // sorted by (id, target)
  std::vector<SkippedRecord> skipped;
  std::map<std::string, ClassTally> tallies;
  std::map<std::string, std::size_t> dataset_counts;
  nlohmann::json config;
  std::uint64_t seed = 0;
  std::string version = kVersion;
  std::vector<std::string> warnings;
};

/// In-memory campaign output: rows[i] of the report corresponds to results[i].
struct CampaignRun {
  CampaignReport report;
  std::vector<AttackResult> results;
};

inline std::string artifact_stem(const std::string& id, const std::string& target) {
  std::string stem;
  for (char c : id) {
    const bool keep = std::isalnum(static_cast<unsigned char>(c)) || c == '-' || c == '_';
    stem += keep ? c : (c == '/' ? '.' : '_');
  }
  if (!target.empty()) stem += "__to_" + target;
  return stem;
}

inline CountMatrix zero_matrix(std::size_t k) { return CountMatrix(k, std::vector<std::size_t>(k, 0)); }

/// Rebuilds every aggregate from the rows; results must align with rows.
inline void aggregate(CampaignReport& report, const std::vector<AttackResult>& results,
                      double ssim_threshold) {
  const std::size_t k = report.labels.size();
  report.pre_matrix = zero_matrix(k);
  report.post_matrix = zero_matrix(k);
  for (const auto& row : report.rows) {
    const std::size_t t = report.labels.index_of(row.true_label);
    ++report.pre_matrix[t][report.labels.index_of(row.clean_pred)];
    ++report.post_matrix[t][report.labels.index_of(row.adv_pred)];
  }
  if (!results.empty()) {
    report.asr = asr_per_step(results, report.max_steps);
    report.ssim_stats = ssim_summary(results, ssim_threshold);
  }
}

namespace detail {

struct RecordOutcome {
  std::vector<AttackRow> rows;
  std::vector<AttackResult> results;
  std::optional<std::string> skip_reason;
  std::vector<std::string> warnings;
};

inline RecordOutcome attack_record(const DifferentiableClassifier& model, const DatasetRecord& record,
                                   const CampaignConfig& config) {
  RecordOutcome out;
  try {
    const ImageTensor image = load_image(record.path, config.image_size);
    const LabelSet& labels = model.labels();
    const Prediction clean = classify(model, image);
    std::vector<std::string> targets = {""};
    if (config.attack.targeted) targets = resolve_targets(config.strategy, record.true_label, labels);

    for (const auto& target : targets) {
      AttackSpec spec = config.attack;
      spec.target_label = target;
      spec.seed = derive_seed(config.seed, record.id + "=>" + target);
      AttackResult result = run_pgd(model, image, record.true_label, spec, config.ssim, record.id);

      AttackRow row;
      row.id = record.id;
      row.true_label = record.true_label;
      row.target_label = target;
      row.clean_pred = labels[clean.predicted_index];
      row.adv_pred = labels[classify(model, result.adversarial).predicted_index];
      row.success = result.success;
      row.success_step = result.success_step;
      row.final_ssim = result.final_ssim;
      row.linf = linf_distance(result.adversarial.tensor(), image.tensor());
      row.l2 = l2_distance(result.adversarial.tensor(), image.tensor());
      row.quantized_pred = labels[classify(model, quantize_image(result.adversarial)).predicted_index];
      row.quantization_flip = row.quantized_pred != row.adv_pred;
      const std::string stem = artifact_stem(record.id, target);
      row.adversarial_png = "adversarial/" + stem + ".png";
      row.perturbation_png = "perturbation/" + stem + ".png";
      row.perturbation_scale = perturbation_visual(result.perturbation).second;
      row.trace = result.trace;
      out.rows.push_back(std::move(row));
      out.results.push_back(std::move(result));
    }
  } catch (const std::exception& e) {
    out.rows.clear();
    out.results.clear();
    out.skip_reason = e.what();
  }
  return out;
}

}  // namespace detail

/// Attacks every sampled record with a supplied model. Each record is one
/// work item; per-item seeds and index-ordered collection make the report
/// independent of the worker count. Records that fail to load or attack are
/// reported as skipped.
inline CampaignRun run_campaign(const CampaignConfig& config, std::shared_ptr<const DifferentiableClassifier> model,
                                const DatasetManifest& manifest) {
  auto warnings = check_attack_spec(config.attack);
  const LabelSet& labels = model->labels();
  if (!(labels == manifest.label_set)) {
    throw InvalidArgument("model labels [" + labels.joined() + "] differ from dataset labels [" +
                          manifest.label_set.joined() + "]");
  }
  if (config.attack.targeted) config.strategy.validate(labels);
  if (model->exclusive()) model = std::make_shared<SerializedClassifier>(std::move(model));

  const auto sample = sample_per_class(manifest, config.per_class, config.seed);
  std::vector<detail::RecordOutcome> outcomes(sample.size());
  std::atomic<std::size_t> next{0};
  auto work = [&] {
    for (std::size_t i = next++; i < sample.size(); i = next++) {
      outcomes[i] = detail::attack_record(*model, sample[i], config);
    }
  };
  {
    const std::size_t n = std::max<std::size_t>(1, std::min(config.workers, sample.size()));
    std::vector<std::jthread> pool;
    for (std::size_t w = 1; w < n; ++w) pool.emplace_back(work);
    work();
  }

  CampaignRun run;
  CampaignReport& report = run.report;
  report.labels = labels;
  report.max_steps = config.attack.max_steps;
  report.targeted = config.attack.targeted;
  report.dataset_counts = manifest.counts;
  report.config = canonical_config(config);
  report.seed = config.seed;
  report.warnings = std::move(warnings);
  for (const auto& label : labels.names()) report.tallies[label] = {};

  std::vector<std::pair<std::size_t, std::size_t>> order;  // (outcome, row) sorted by (id, target)
  for (std::size_t i = 0; i < sample.size(); ++i) {
    auto& tally = report.tallies[sample[i].true_label];
    ++tally.sampled;
    if (outcomes[i].skip_reason) {
      ++tally.skipped;
      report.skipped.push_back({sample[i].id, sample[i].true_label, *outcomes[i].skip_reason});
      continue;
    }
    ++tally.attacked;
    for (std::size_t r = 0; r < outcomes[i].rows.size(); ++r) order.emplace_back(i, r);
  }
  std::sort(order.begin(), order.end(), [&](const auto& a, const auto& b) {
    const auto& ra = outcomes[a.first].rows[a.second];
    const auto& rb = outcomes[b.first].rows[b.second];
    return std::tie(ra.id, ra.target_label) < std::tie(rb.id, rb.target_label);
  });
  for (const auto& [i, r] : order) {
    report.rows.push_back(std::move(outcomes[i].rows[r]));
    run.results.push_back(std::move(outcomes[i].results[r]));
  }
  if (run.results.empty()) throw Error("campaign produced no attackable records");
  aggregate(report, run.results, config.min_ssim_report_threshold);
  return run;
}

inline CampaignRun run_campaign(const CampaignConfig& config) {
  const DatasetManifest manifest = scan_dataset(config.dataset_root);
  auto model = make_classifier(config, manifest.label_set);
  CampaignRun run = run_campaign(config, std::move(model), manifest);
  run.report.warnings.insert(run.report.warnings.begin(), manifest.warnings.begin(), manifest.warnings.end());
  return run;
}

// ---------------------------------------------------------------------------
// Serialization

inline nlohmann::json step_to_json(const StepRecord& s) {
  return {{"step", s.step},
          {"loss", s.loss},
          {"predicted_label", s.predicted_label},
          {"target_probability", s.target_probability},
          {"ssim", s.ssim_to_original}};
}

inline StepRecord step_from_json(const nlohmann::json& j) {
  return {j.at("step").get<int>(), j.at("loss").get<double>(), j.at("predicted_label").get<std::string>(),
          j.at("target_probability").get<double>(), j.at("ssim").get<double>()};
}

inline nlohmann::json optional_step(const std::optional<int>& s) {
  return s ? nlohmann::json(*s) : nlohmann::json(nullptr);
}

/// One manifest.jsonl line. The trace lives in report.json only.
inline nlohmann::json row_to_json(const AttackRow& r) {
  return {{"id", r.id},
          {"true", r.true_label},
          {"target", r.target_label},
          {"clean_pred", r.clean_pred},
          {"adv_pred", r.adv_pred},
          {"success", r.success},
          {"success_step", optional_step(r.success_step)},
          {"final_ssim", r.final_ssim},
          {"linf", r.linf},
          {"l2", r.l2},
          {"quantized_pred", r.quantized_pred},
          {"quantization_flip", r.quantization_flip},
          {"adversarial_png", r.adversarial_png},
          {"perturbation_png", r.perturbation_png},
          {"perturbation_scale", r.perturbation_scale}};
}

inline AttackRow row_from_json(const nlohmann::json& j) {
  AttackRow r;
  r.id = j.at("id").get<std::string>();
  r.true_label = j.at("true").get<std::string>();
  r.target_label = j.at("target").get<std::string>();
  r.clean_pred = j.at("clean_pred").get<std::string>();
  r.adv_pred = j.at("adv_pred").get<std::string>();
  r.success = j.at("success").get<bool>();
  if (!j.at("success_step").is_null()) r.success_step = j.at("success_step").get<int>();
  r.final_ssim = j.at("final_ssim").get<double>();
  r.linf = j.at("linf").get<double>();
  r.l2 = j.at("l2").get<double>();
  r.quantized_pred = j.at("quantized_pred").get<std::string>();
  r.quantization_flip = j.at("quantization_flip").get<bool>();
  r.adversarial_png = j.at("adversarial_png").get<std::string>();
  r.perturbation_png = j.at("perturbation_png").get<std::string>();
  r.perturbation_scale = j.at("perturbation_scale").get<double>();
  if (j.contains("trace")) {
    for (const auto& s : j["trace"]) r.trace.push_back(step_from_json(s));
  }
  return r;
}

inline nlohmann::json report_to_json(const CampaignReport& r) {
  nlohmann::json rows = nlohmann::json::array();
  for (const auto& row : r.rows) {
    auto j = row_to_json(row);
    j["trace"] = nlohmann::json::array();
    for (const auto& s : row.trace) j["trace"].push_back(step_to_json(s));
    rows.push_back(std::move(j));
  }
  nlohmann::json skipped = nlohmann::json::array();
  for (const auto& s : r.skipped) skipped.push_back({{"id", s.id}, {"label", s.label}, {"reason", s.reason}});
  nlohmann::json tallies = nlohmann::json::object();
  for (const auto& [label, t] : r.tallies) {
    tallies[label] = {{"sampled", t.sampled}, {"attacked", t.attacked}, {"skipped", t.skipped}};
  }
  return {{"version", r.version},
          {"seed", r.seed},
          {"config", r.config},
          {"labels", r.labels.names()},
          {"max_steps", r.max_steps},
          {"targeted", r.targeted},
          {"asr",
           {{"per_step", r.asr.per_step},
            {"per_class", r.asr.per_class},
            {"n_attacks", r.asr.n_attacks},
            {"n_successes", r.asr.n_successes},
            {"per_class_attacks", r.asr.per_class_attacks}}},
          {"pre_matrix", r.pre_matrix},
          {"post_matrix", r.post_matrix},
          {"ssim_stats",
           {{"mean", r.ssim_stats.mean},
            {"min", r.ssim_stats.min},
            {"max", r.ssim_stats.max},
            {"fraction_above", r.ssim_stats.fraction_above},
            {"threshold", r.ssim_stats.threshold},
            {"count", r.ssim_stats.count}}},
          {"rows", rows},
          {"skipped", skipped},
          {"tallies", tallies},
          {"dataset_counts", r.dataset_counts},
          {"warnings", r.warnings}};
}

inline CampaignReport report_from_json(const nlohmann::json& j) {
  CampaignReport r;
  r.version = j.at("version").get<std::string>();
  r.seed = j.at("seed").get<std::uint64_t>();
  r.config = j.at("config");
  r.labels = LabelSet(j.at("labels").get<std::vector<std::string>>());
  r.max_steps = j.at("max_steps").get<int>();
  r.targeted = j.at("targeted").get<bool>();
  const auto& a = j.at("asr");
  r.asr.per_step = a.at("per_step").get<std::vector<double>>();
  r.asr.per_class = a.at("per_class").get<std::map<std::string, std::vector<double>>>();
  r.asr.n_attacks = a.at("n_attacks").get<std::size_t>();
  r.asr.n_successes = a.at("n_successes").get<std::size_t>();
  r.asr.per_class_attacks = a.at("per_class_attacks").get<std::map<std::string, std::size_t>>();
  r.pre_matrix = j.at("pre_matrix").get<CountMatrix>();
  r.post_matrix = j.at("post_matrix").get<CountMatrix>();
  const auto& s = j.at("ssim_stats");
  r.ssim_stats = {s.at("mean").get<double>(), s.at("min").get<double>(), s.at("max").get<double>(),
                  s.at("fraction_above").get<double>(), s.at("threshold").get<double>(),
                  s.at("count").get<std::size_t>()};
  for (const auto& row : j.at("rows")) r.rows.push_back(row_from_json(row));
  for (const auto& sk : j.at("skipped")) {
    r.skipped.push_back({sk.at("id").get<std::string>(), sk.at("label").get<std::string>(),
                         sk.at("reason").get<std::string>()});
  }
  for (const auto& [label, t] : j.at("tallies").items()) {
    r.tallies[label] = {t.at("sampled").get<std::size_t>(), t.at("attacked").get<std::size_t>(),
                        t.at("skipped").get<std::size_t>()};
  }
  r.dataset_counts = j.at("dataset_counts").get<std::map<std::string, std::size_t>>();
  r.warnings = j.at("warnings").get<std::vector<std::string>>();
  return r;
}

/// Sorted keys, two-space indent, trailing newline.
inline std::string canonical_report_text(const CampaignReport& r) { return report_to_json(r).dump(2) + "\n"; }

/// Writes adversarial and perturbation PNGs for each result, manifest.jsonl
/// and report.json under `out_dir`. Returns the manifest path.
inline std::filesystem::path persist_artifacts(const CampaignReport& report, const std::vector<AttackResult>& results,
                                               const std::filesystem::path& out_dir) {
  namespace fs = std::filesystem;
  if (results.size() != report.rows.size()) throw InvalidArgument("persist_artifacts: results do not match rows");
  fs::create_directories(out_dir);
  std::string manifest;
  for (std::size_t i = 0; i < results.size(); ++i) {
    const AttackRow& row = report.rows[i];
    save_png(results[i].adversarial, out_dir / row.adversarial_png);
    save_png(perturbation_visual(results[i].perturbation).first, out_dir / row.perturbation_png);
    manifest += row_to_json(row).dump() + "\n";
  }
  const fs::path manifest_path = out_dir / "manifest.jsonl";
  write_file_atomic(manifest_path, manifest);
  write_file_atomic(out_dir / "report.json", canonical_report_text(report));
  return manifest_path;
}

}  // namespace pathoattack
