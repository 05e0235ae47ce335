#include <catch2/catch_amalgamated.hpp>

#include <fstream>
#include <sstream>

#include "oracles.hpp"
#include "pathoattack/campaign.hpp"
#include "pathoattack/fixture.hpp"
#include "pathoattack/render.hpp"

using namespace pathoattack;
namespace fs = std::filesystem;

namespace {

CampaignConfig fixture_config(const fs::path& root) {
  CampaignConfig c;
  c.dataset_root = root;
  c.per_class = 4;
  c.image_size = 32;
  c.model = "toy";
  c.attack.epsilon = 0.2;
  c.attack.alpha = 0.04;
  c.attack.max_steps = 20;
  c.strategy.kind = TargetStrategy::Kind::next_class;
  c.seed = 2024;
  return c;
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::ostringstream s;
  s << in.rdbuf();
  return s.str();
}

}  // namespace

TEST_CASE("target resolution", "[campaign][targets]") {
  const LabelSet labels({"A", "B", "C"});
  TargetStrategy next;
  CHECK(resolve_target(next, "A", labels) == "B");
  CHECK(resolve_target(next, "C", labels) == "A");

  TargetStrategy fixed;
  fixed.kind = TargetStrategy::Kind::fixed_map;
  fixed.fixed_map = {{"A", "C"}, {"B", "C"}, {"C", "A"}};
  CHECK(resolve_target(fixed, "B", labels) == "C");
  fixed.fixed_map["B"] = "B";
  CHECK_THROWS_AS(resolve_target(fixed, "A", labels), InvalidArgument);
  fixed.fixed_map.erase("B");
  CHECK_THROWS_AS(fixed.validate(labels), InvalidArgument);
  fixed.fixed_map["B"] = "Z";
  CHECK_THROWS_AS(fixed.validate(labels), InvalidArgument);

  TargetStrategy pairs;
  pairs.kind = TargetStrategy::Kind::all_pairs;
  CHECK(resolve_targets(pairs, "B", labels) == std::vector<std::string>{"A", "C"});
  CHECK_THROWS_AS(resolve_target(pairs, "B", labels), InvalidArgument);
  CHECK_THROWS_AS(resolve_target(next, "Q", labels), InvalidArgument);
  CHECK_THROWS_AS(parse_strategy_kind("random"), InvalidArgument);
}

TEST_CASE("artifact names are filesystem safe", "[campaign]") {
  CHECK(artifact_stem("TUM/img 001.tif", "ADI") == "TUM.img_001_tif__to_ADI");
  CHECK(artifact_stem("a/b", "") == "a.b");
}

TEST_CASE("toy fixture campaign reaches full targeted success", "[campaign]") {
  oracle::TempDir dir("campaign_asr");
  write_synthetic_dataset(dir.path, {"A", "B", "C"}, 4, 32, 7);
  const CampaignRun run = run_campaign(fixture_config(dir.path));
  const CampaignReport& r = run.report;
  REQUIRE(r.rows.size() == 12);
  CHECK(r.asr.per_step.back() == 1.0);
  for (const auto& [label, curve] : r.asr.per_class) CHECK(curve.back() == 1.0);

  // Conservation: every sampled record is attacked or skipped.
  std::size_t sampled = 0, attacked = 0;
  for (const auto& [label, t] : r.tallies) {
    CHECK(t.sampled == t.attacked + t.skipped);
    sampled += t.sampled;
    attacked += t.attacked;
  }
  CHECK(sampled == 12);
  CHECK(attacked == 12);

  // Matrix rows sum to the per-class attack counts; post mass sits on targets.
  for (std::size_t i = 0; i < 3; ++i) {
    std::size_t pre = 0, post = 0;
    for (std::size_t j = 0; j < 3; ++j) {
      pre += r.pre_matrix[i][j];
      post += r.post_matrix[i][j];
    }
    CHECK(pre == 4);
    CHECK(post == 4);
    CHECK(r.post_matrix[i][(i + 1) % 3] == 4);
  }
  for (std::size_t i = 0; i < r.rows.size(); ++i) {
    CHECK(r.rows[i].linf <= 0.2 + 1e-12);
    CHECK(r.rows[i].adv_pred == r.rows[i].target_label);
    if (i > 0) {
      CHECK(std::tie(r.rows[i - 1].id, r.rows[i - 1].target_label) < std::tie(r.rows[i].id, r.rows[i].target_label));
    }
  }
}

TEST_CASE("worker count does not change the report", "[campaign][determinism]") {
  oracle::TempDir dir("campaign_workers");
  write_synthetic_dataset(dir.path, {"A", "B", "C"}, 4, 32, 3);
  CampaignConfig c = fixture_config(dir.path);
  c.strategy.kind = TargetStrategy::Kind::all_pairs;
  c.attack.random_start = true;
  c.workers = 1;
  const std::string one = canonical_report_text(run_campaign(c).report);
  c.workers = 4;
  const std::string four = canonical_report_text(run_campaign(c).report);
  CHECK(one == four);
  c.seed = 2025;
  CHECK(canonical_report_text(run_campaign(c).report) != one);
}

TEST_CASE("unreadable images are skipped without aborting", "[campaign][errors]") {
  oracle::TempDir dir("campaign_skip");
  write_synthetic_dataset(dir.path, {"A", "B"}, 2, 32, 3);
  std::ofstream(dir.path / "A" / "broken.png") << "not a png";
  CampaignConfig c = fixture_config(dir.path);
  c.per_class = 10;
  const CampaignRun run = run_campaign(c);
  REQUIRE(run.report.skipped.size() == 1);
  CHECK(run.report.skipped[0].id == "A/broken.png");
  CHECK(run.report.tallies.at("A").sampled == 3);
  CHECK(run.report.tallies.at("A").skipped == 1);
  CHECK(run.report.rows.size() == 4);
}

TEST_CASE("report JSON round trips", "[campaign][json]") {
  oracle::TempDir dir("campaign_json");
  write_synthetic_dataset(dir.path, {"A", "B", "C"}, 2, 32, 3);
  CampaignConfig c = fixture_config(dir.path);
  c.per_class = 2;
  const CampaignReport r = run_campaign(c).report;
  const std::string text = canonical_report_text(r);
  const CampaignReport back = report_from_json(nlohmann::json::parse(text));
  CHECK(canonical_report_text(back) == text);
}

TEST_CASE("persisted artifacts round trip through PNG", "[campaign][artifacts]") {
  oracle::TempDir data("persist_data");
  oracle::TempDir out("persist_out");
  write_synthetic_dataset(data.path, {"A", "B", "C"}, 2, 32, 5);
  CampaignConfig c = fixture_config(data.path);
  c.per_class = 2;
  const CampaignRun run = run_campaign(c);
  REQUIRE(run.results.size() == 6);
  const fs::path manifest = persist_artifacts(run.report, run.results, out.path);

  auto count = [](const fs::path& d) {
    return static_cast<std::size_t>(std::distance(fs::directory_iterator(d), fs::directory_iterator{}));
  };
  CHECK(count(out.path / "adversarial") == 6);
  CHECK(count(out.path / "perturbation") == 6);
  std::ifstream lines(manifest);
  std::size_t n = 0;
  for (std::string line; std::getline(lines, line);) {
    const auto j = nlohmann::json::parse(line);
    CHECK(j.contains("id"));
    CHECK_FALSE(j.contains("trace"));
    ++n;
  }
  CHECK(n == 6);
  CHECK(slurp(out.path / "report.json") == canonical_report_text(run.report));

  for (std::size_t i = 0; i < run.results.size(); ++i) {
    const ImageTensor back = load_image(out.path / run.report.rows[i].adversarial_png, 32);
    CHECK(linf_distance(back.tensor(), run.results[i].adversarial.tensor()) <= 1.0 / 255.0 + 1e-6);
    CHECK(linf_distance(back.tensor(), run.results[i].original.tensor()) <= c.attack.epsilon + 1.0 / 255.0 + 1e-6);
  }
}

TEST_CASE("rendered CSVs agree with the report", "[campaign][render]") {
  oracle::TempDir data("render_data");
  oracle::TempDir out("render_out");
  write_synthetic_dataset(data.path, {"A", "B", "C"}, 2, 32, 5);
  fs::create_directories(data.path / "D");
  CampaignConfig c = fixture_config(data.path);
  c.per_class = 2;
  const CampaignReport r = run_campaign(c).report;
  const auto files = render_report(r, out.path);
  CHECK(files.size() == 10);
  for (const auto& f : files) CHECK(fs::file_size(f) > 0);

  const std::string post = slurp(out.path / "plots" / "heatmap_post.csv");
  std::istringstream in(post);
  std::string line;
  std::getline(in, line);
  CHECK(line == "true\\predicted,A,B,C,D");
  for (std::size_t i = 0; i < 4; ++i) {
    std::getline(in, line);
    std::string expected = r.labels[i];
    for (std::size_t v : r.post_matrix[i]) expected += "," + std::to_string(v);
    CHECK(line == expected);
  }

  const std::string asr_svg = slurp(out.path / "plots" / "asr_per_step.svg");
  CHECK(asr_svg.find("D: no attacks in sample") != std::string::npos);
  const std::string asr_csv = slurp(out.path / "plots" / "asr_per_step.csv");
  CHECK(asr_csv.starts_with("step,overall,A,B,C\n"));
}

TEST_CASE("a single-step campaign renders a flat curve", "[campaign][render]") {
  oracle::TempDir data("render_flat");
  oracle::TempDir out("render_flat_out");
  write_synthetic_dataset(data.path, {"A", "B"}, 2, 32, 9);
  CampaignConfig c = fixture_config(data.path);
  c.attack.max_steps = 1;
  c.attack.epsilon = 1e-4;
  c.attack.alpha = 1e-4;
  const CampaignReport r = run_campaign(c).report;
  REQUIRE(r.asr.per_step.size() == 1);
  CHECK_NOTHROW(render_report(r, out.path));
  const std::string csv = slurp(out.path / "plots" / "asr_per_step.csv");
  CHECK(std::count(csv.begin(), csv.end(), '\n') == 2);
}

TEST_CASE("campaign input validation", "[campaign][errors]") {
  oracle::TempDir data("campaign_bad");
  write_synthetic_dataset(data.path, {"A", "B"}, 1, 32, 9);
  CampaignConfig c = fixture_config(data.path);
  c.model = "mystery";
  CHECK_THROWS_AS(run_campaign(c), InvalidArgument);
  c = fixture_config(data.path);
  c.strategy.kind = TargetStrategy::Kind::fixed_map;
  c.strategy.fixed_map = {{"A", "B"}};
  CHECK_THROWS_AS(run_campaign(c), InvalidArgument);
  const auto manifest = scan_dataset(data.path);
  auto wrong = make_toy_classifier(1, 3, Shape{3, 32, 32});
  CHECK_THROWS_AS(run_campaign(fixture_config(data.path), wrong, manifest), InvalidArgument);
}
