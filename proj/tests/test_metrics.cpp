#include <catch2/catch_amalgamated.hpp>

#include "oracles.hpp"
#include "pathoattack/metrics.hpp"

using namespace pathoattack;

namespace {

struct Outcome {
  std::string true_label;
  std::optional<int> success_step;
  std::vector<int> trace;
  double final_ssim = 1.0;
};

Outcome outcome(std::string label, std::optional<int> step, int steps = 3, double ssim_value = 1.0) {
  return Outcome{std::move(label), step, std::vector<int>(static_cast<std::size_t>(steps)), ssim_value};
}

}  // namespace

TEST_CASE("SSIM matches a brute-force sliding window", "[metrics][ssim]") {
  const Shape s{3, 32, 32};
  for (std::uint64_t i = 0; i < 20; ++i) {
    const Tensor x = oracle::random_tensor(s, 2 * i);
    Tensor y = oracle::random_tensor(s, 2 * i + 1, -0.2, 0.2);
    for (std::size_t j = 0; j < y.size(); ++j) y[j] = std::clamp(x[j] + y[j] * static_cast<double>(i % 4), 0.0, 1.0);
    CHECK(std::abs(ssim(x, y) - oracle::brute_force_ssim(x, y)) <= 1e-6);
  }
}

TEST_CASE("SSIM identities and closed forms", "[metrics][ssim]") {
  const Shape s{3, 24, 24};
  for (std::uint64_t i = 0; i < 10; ++i) {
    const Tensor x = oracle::random_tensor(s, i);
    CHECK(std::abs(ssim(x, x) - 1.0) <= 1e-9);
    const Tensor y = oracle::random_tensor(s, 100 + i);
    CHECK(ssim(x, y) == Catch::Approx(ssim(y, x)).margin(1e-12));
    CHECK(ssim(x, y) <= 1.0 + 1e-12);
    CHECK(ssim(x, y) >= -1.0 - 1e-12);
  }

  const double c1 = 1e-4;
  const std::vector<std::pair<double, double>> pairs = {{0.0, 1.0}, {0.5, 0.5}, {0.2, 0.7}, {1.0, 0.9}, {0.0, 0.0}};
  for (auto [a, b] : pairs) {
    const double expected = (2 * a * b + c1) / (a * a + b * b + c1);
    CHECK(std::abs(ssim(Tensor(s, a), Tensor(s, b)) - expected) <= 1e-9);
  }
  CHECK(std::abs(ssim(Tensor(s, 0.0), Tensor(s, 1.0)) - 1e-4 / (1 + 1e-4)) <= 1e-9);
}

TEST_CASE("SSIM falls as a brightness shift grows", "[metrics][ssim]") {
  const Shape s{3, 24, 24};
  const Tensor x = oracle::random_tensor(s, 31, 0.0, 0.5);
  double previous = 1.0 + 1e-12;
  for (double shift : {0.0, 0.01, 0.05, 0.1, 0.2, 0.4}) {
    Tensor y = x;
    for (double& v : y.values()) v += shift;
    const double value = ssim(x, y);
    CHECK(value <= previous);
    previous = value;
  }
}

TEST_CASE("SSIM parameter and shape errors", "[metrics][ssim][errors]") {
  const Tensor x(Shape{3, 8, 8}, 0.5);
  CHECK_THROWS_AS(ssim(x, x), InvalidArgument);  // 11 > 8
  SsimParams small;
  small.window_size = 7;
  CHECK(ssim(x, x, small) == Catch::Approx(1.0));
  SsimParams even = small;
  even.window_size = 6;
  CHECK_THROWS_AS(ssim(x, x, even), InvalidArgument);
  SsimParams bad_sigma = small;
  bad_sigma.gaussian_sigma = 0.0;
  CHECK_THROWS_AS(ssim(x, x, bad_sigma), InvalidArgument);
  CHECK_THROWS_AS(ssim(x, Tensor(Shape{3, 9, 8}, 0.5), small), InvalidArgument);

  const auto w = gaussian_window(11, 1.5);
  double total = 0;
  for (double v : w) total += v;
  CHECK(total == Catch::Approx(1.0).margin(1e-15));
  CHECK(w[5] == *std::max_element(w.begin(), w.end()));
  CHECK(w[0] == Catch::Approx(w[10]).margin(1e-18));
}

TEST_CASE("perturbation norms", "[metrics]") {
  const Shape s{1, 1, 3};
  const Tensor a(s, std::vector<double>{0.0, 0.5, 1.0});
  const Tensor b(s, std::vector<double>{0.1, 0.5, 0.7});
  CHECK(linf_distance(a, b) == Catch::Approx(0.3));
  CHECK(l2_distance(a, b) == Catch::Approx(std::sqrt(0.01 + 0.09)));
  CHECK(linf_distance(a, a) == 0.0);
  CHECK_THROWS_AS(linf_distance(a, Tensor(Shape{1, 1, 2})), InvalidArgument);
}

TEST_CASE("ASR hand-counted micro cases", "[metrics][asr]") {
  const std::vector<Outcome> rs = {outcome("A", 1), outcome("A", 2), outcome("B", 2), outcome("B", std::nullopt)};
  const AsrCurve c = asr_per_step(rs, 3);
  CHECK(c.per_step == std::vector<double>{0.25, 0.75, 0.75});
  CHECK(c.per_class.at("A") == std::vector<double>{0.5, 1.0, 1.0});
  CHECK(c.per_class.at("B") == std::vector<double>{0.0, 0.5, 0.5});
  CHECK(c.n_attacks == 4);
  CHECK(c.n_successes == 3);

  const std::vector<Outcome> none = {outcome("A", std::nullopt), outcome("A", std::nullopt)};
  CHECK(asr_per_step(none, 3).per_step == std::vector<double>{0.0, 0.0, 0.0});
  const std::vector<Outcome> all_first = {outcome("A", 1), outcome("B", 1)};
  CHECK(asr_per_step(all_first, 3).per_step == std::vector<double>{1.0, 1.0, 1.0});

  CHECK_THROWS_AS(asr_per_step(std::vector<Outcome>{}, 3), InvalidArgument);
  CHECK_THROWS_AS(asr_per_step(std::vector<Outcome>{outcome("A", 1, 5)}, 3), InvalidArgument);
  CHECK_THROWS_AS(asr_per_step(std::vector<Outcome>{outcome("A", 4)}, 3), InvalidArgument);
}

TEST_CASE("ASR curves are monotone and bounded on random result sets", "[metrics][asr][property]") {
  std::mt19937_64 rng(4242);
  for (int trial = 0; trial < 100; ++trial) {
    const int steps = 1 + static_cast<int>(rng() % 20);
    const std::size_t n = 1 + rng() % 60;
    std::vector<Outcome> rs;
    std::size_t successes = 0;
    for (std::size_t i = 0; i < n; ++i) {
      std::optional<int> step;
      if (rng() % 4 != 0) {
        step = 1 + static_cast<int>(rng() % static_cast<std::uint64_t>(steps));
        ++successes;
      }
      rs.push_back(outcome("c" + std::to_string(rng() % 5), step, steps));
    }
    const AsrCurve c = asr_per_step(rs, steps);
    REQUIRE(c.per_step.size() == static_cast<std::size_t>(steps));
    for (std::size_t s = 0; s < c.per_step.size(); ++s) {
      CHECK(c.per_step[s] >= 0.0);
      CHECK(c.per_step[s] <= 1.0);
      if (s > 0) CHECK(c.per_step[s] >= c.per_step[s - 1]);
    }
    CHECK(c.per_step.back() == Catch::Approx(static_cast<double>(successes) / static_cast<double>(n)));
    for (const auto& [label, curve] : c.per_class) {
      for (std::size_t s = 1; s < curve.size(); ++s) CHECK(curve[s] >= curve[s - 1]);
    }
  }
}

TEST_CASE("SSIM summary statistics", "[metrics][summary]") {
  const std::vector<double> v = {0.93, 0.93, 0.93};
  const SsimSummary s = ssim_summary(std::span<const double>(v));
  CHECK(s.mean == Catch::Approx(0.93));
  CHECK(s.fraction_above == 1.0);
  const std::vector<double> w = {0.5, 0.95, 0.9, 0.85};
  const SsimSummary t = ssim_summary(std::span<const double>(w), 0.9);
  CHECK(t.min == 0.5);
  CHECK(t.max == 0.95);
  CHECK(t.fraction_above == 0.5);
  CHECK(t.count == 4);
  CHECK_THROWS_AS(ssim_summary(std::span<const double>()), InvalidArgument);

  const std::vector<Outcome> rs = {outcome("A", 1, 3, 0.8), outcome("B", 2, 3, 1.0)};
  CHECK(ssim_summary(rs).mean == Catch::Approx(0.9));
}
