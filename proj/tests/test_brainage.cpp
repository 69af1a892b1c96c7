#include <cmath>
#include <filesystem>
#include <functional>
#include <numeric>
#include <vector>

#include <doctest.h>

#include "fedage/brainage.hpp"
#include "fedage/error.hpp"
#include "fedage/rng.hpp"

using namespace fedage;
using namespace fedage::brainage;

namespace {

std::vector<PredictionRecord> synthetic_records(
    std::size_t n, std::uint64_t seed,
    const std::function<double(double age, Rng&)>& pad_of) {
  std::vector<PredictionRecord> records;
  Rng rng(seed);
  for (std::size_t i = 0; i < n; ++i) {
    const double age = rng.uniform(40.0, 95.0);
    const double pad = pad_of(age, rng);
    records.push_back(make_prediction(static_cast<long>(i + 1), age, age + pad));
  }
  return records;
}

}  // namespace

TEST_CASE("PAD sign convention") {
  CHECK(compute_pad(75.0, 70.0) == 5.0);
  CHECK(compute_pad(70.0, 70.0) == 0.0);
  CHECK(compute_pad(60.0, 72.0) == -12.0);
}

TEST_CASE("bias line on exact inputs") {
  std::vector<double> ages, pads;
  for (int i = 0; i < 50; ++i) {
    const double age = 40.0 + i;
    ages.push_back(age);
    pads.push_back(0.0);
  }
  const auto zero = fit_bias_line(pads, ages);
  CHECK(zero.slope == 0.0);
  CHECK(zero.intercept == 0.0);

  for (int i = 0; i < 50; ++i) pads[i] = -0.5 * ages[i] + 40.0;
  const auto line = fit_bias_line(pads, ages);
  CHECK(line.slope == doctest::Approx(-0.5).epsilon(1e-12));
  CHECK(line.intercept == doctest::Approx(40.0).epsilon(1e-10));
}

TEST_CASE("bias line recovers a planted slope within three standard errors") {
  Rng rng(9);
  std::vector<double> ages, pads;
  const double planted_slope = -0.3, planted_intercept = 21.0, noise = 4.0;
  for (int i = 0; i < 1000; ++i) {
    const double age = rng.uniform(40.0, 95.0);
    ages.push_back(age);
    pads.push_back(planted_slope * age + planted_intercept +
                   rng.normal(0.0, noise));
  }
  const auto line = fit_bias_line(pads, ages);

  // Independent oracle: closed-form OLS slope standard error on this sample.
  double mean_age = 0.0;
  for (double a : ages) mean_age += a;
  mean_age /= ages.size();
  double sxx = 0.0, ss_res = 0.0;
  for (std::size_t i = 0; i < ages.size(); ++i) {
    sxx += (ages[i] - mean_age) * (ages[i] - mean_age);
    const double r = pads[i] - line.at(ages[i]);
    ss_res += r * r;
  }
  const double se_slope =
      std::sqrt(ss_res / (static_cast<double>(ages.size()) - 2.0) / sxx);
  CHECK(std::fabs(line.slope - planted_slope) < 3.0 * se_slope);
}

TEST_CASE("degenerate bias fits are rejected") {
  CHECK_THROWS_AS(
      fit_bias_line(std::vector<double>{1.0, 2.0}, std::vector<double>{70.0, 71.0}),
      InsufficientDataError);
  CHECK_THROWS_AS(fit_bias_line(std::vector<double>{1.0, 2.0, 3.0},
                                std::vector<double>{70.0, 70.0, 70.0}),
                  DegenerateFitError);
}

TEST_CASE("perfect predictions stay zero after correction") {
  auto records = synthetic_records(
      200, 5, [](double, Rng&) { return 0.0; });
  correct_brainage_cv(records, 10, 42);
  for (const auto& r : records) {
    CHECK(r.corrected);
    CHECK(std::fabs(r.brainage) < 1e-12);
  }
}

TEST_CASE("an exactly age-linear PAD is fully removed") {
  auto records = synthetic_records(
      500, 6, [](double age, Rng&) { return 0.4 * age - 25.0; });
  correct_brainage_cv(records, 10, 7);
  for (const auto& r : records) CHECK(std::fabs(r.brainage) < 1e-6);
}

TEST_CASE("an age-independent subgroup offset survives correction") {
  // Subjects with odd ids carry a +5 year PAD offset.
  std::vector<PredictionRecord> records;
  Rng rng(12);
  for (int i = 0; i < 1000; ++i) {
    const double age = rng.uniform(40.0, 95.0);
    const long id = i + 1;
    const double offset = (id % 2 == 1) ? 5.0 : 0.0;
    const double pad = offset + rng.normal(0.0, 3.0);
    records.push_back(make_prediction(id, age, age + pad));
  }

  // Oracle: whole-sample (non cross-validated) correction.
  std::vector<double> pads, ages;
  for (const auto& r : records) {
    pads.push_back(r.pad);
    ages.push_back(r.actual_age);
  }
  const auto line = fit_bias_line(pads, ages);
  double oracle_with = 0.0, oracle_without = 0.0;
  std::size_t n_with = 0, n_without = 0;
  for (const auto& r : records) {
    const double corrected = r.pad - line.at(r.actual_age);
    if (r.subject_id % 2 == 1) {
      oracle_with += corrected;
      ++n_with;
    } else {
      oracle_without += corrected;
      ++n_without;
    }
  }
  oracle_with /= n_with;
  oracle_without /= n_without;

  correct_brainage_cv(records, 10, 3);
  double cv_with = 0.0, cv_without = 0.0;
  for (const auto& r : records)
    (r.subject_id % 2 == 1 ? cv_with : cv_without) += r.brainage;
  cv_with /= n_with;
  cv_without /= n_without;

  CHECK(std::fabs((oracle_with - oracle_without) - 5.0) < 0.5);
  CHECK(std::fabs((cv_with - cv_without) - 5.0) < 0.5);
  CHECK(std::fabs(cv_with - oracle_with) < 0.25);
}

TEST_CASE("corrected BrainAGE is age-neutral and idempotent") {
  auto records = synthetic_records(800, 77, [](double age, Rng& rng) {
    return 0.3 * age - 20.0 + rng.normal(0.0, 5.0);
  });
  correct_brainage_cv(records, 10, 8);

  std::vector<double> ages, brainages;
  for (const auto& r : records) {
    ages.push_back(r.actual_age);
    brainages.push_back(r.brainage);
  }
  const auto slope_after = fit_bias_line(brainages, ages);
  CHECK(std::fabs(slope_after.slope) < 0.02);
  CHECK(std::fabs(slope_after.slope) < 1e-3);  // idempotence in the bias sense
}

TEST_CASE("within each fold the applied correction is affine in age") {
  auto records = synthetic_records(200, 14, [](double age, Rng& rng) {
    return 0.2 * age - 10.0 + rng.normal(0.0, 4.0);
  });
  const int k = 10;
  const std::uint64_t seed = 21;
  correct_brainage_cv(records, k, seed);

  // Reproduce the fold assignment from the documented scheme.
  std::vector<std::size_t> order(records.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  Rng rng(seed);
  rng.shuffle(order);
  std::vector<int> fold_of(records.size());
  for (std::size_t i = 0; i < order.size(); ++i)
    fold_of[order[i]] = static_cast<int>(i % k);

  for (int fold = 0; fold < k; ++fold) {
    // (age, pad - brainage) pairs of one fold must be collinear.
    std::vector<std::pair<double, double>> pts;
    for (std::size_t i = 0; i < records.size(); ++i)
      if (fold_of[i] == fold)
        pts.push_back({records[i].actual_age,
                       records[i].pad - records[i].brainage});
    REQUIRE(pts.size() >= 3);
    const double slope =
        (pts[1].second - pts[0].second) / (pts[1].first - pts[0].first);
    const double intercept = pts[0].second - slope * pts[0].first;
    for (const auto& [age, corr] : pts)
      CHECK(std::fabs(corr - (slope * age + intercept)) < 1e-9);
  }
}

TEST_CASE("correction requires at least k records") {
  auto records = synthetic_records(5, 1, [](double, Rng&) { return 1.0; });
  CHECK_THROWS_AS(correct_brainage_cv(records, 10, 0), InsufficientDataError);
}

TEST_CASE("prediction CSV round-trips, including the uncorrected state") {
  auto records = synthetic_records(50, 2, [](double age, Rng& rng) {
    return 0.1 * age + rng.normal(0.0, 2.0);
  });
  records[10].brainage = 1.25;
  records[10].corrected = true;

  const std::string path = "test_predictions_roundtrip.csv";
  write_predictions_csv(records, path);
  const auto loaded = load_predictions_csv(path);
  std::filesystem::remove(path);

  REQUIRE(loaded.size() == records.size());
  for (std::size_t i = 0; i < records.size(); ++i) {
    CHECK(loaded[i].subject_id == records[i].subject_id);
    CHECK(loaded[i].actual_age == records[i].actual_age);
    CHECK(loaded[i].predicted_age == records[i].predicted_age);
    CHECK(loaded[i].pad == records[i].pad);
    CHECK(loaded[i].corrected == records[i].corrected);
    if (records[i].corrected) CHECK(loaded[i].brainage == records[i].brainage);
  }
}
