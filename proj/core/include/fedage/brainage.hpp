// PAD computation and cross-validated age-bias correction.
#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <vector>

namespace fedage::brainage {

struct PredictionRecord {
  long subject_id = 0;
  double actual_age = 0.0;
  double predicted_age = 0.0;
  double pad = 0.0;       // predicted - actual
  double brainage = 0.0;  // filled by correct_brainage_cv
  bool corrected = false;
};

// Ordinary least squares fit of PAD on chronological age.
struct BiasLine {
  double slope = 0.0;
  double intercept = 0.0;

  double at(double age) const { return slope * age + intercept; }
};

double compute_pad(double predicted, double actual);

PredictionRecord make_prediction(long subject_id, double actual,
                                 double predicted);

// Requires >= 3 points and nonzero age variance.
BiasLine fit_bias_line(std::span<const double> pads,
                       std::span<const double> ages);

// k-fold bias correction: each fold's records are corrected with a line
// fitted on the remaining folds, so a record never influences its own
// correction. Deterministic for a given seed.
void correct_brainage_cv(std::vector<PredictionRecord>& records, int k,
                         std::uint64_t seed);

void write_predictions_csv(const std::vector<PredictionRecord>& records,
                           const std::string& path);
std::vector<PredictionRecord> load_predictions_csv(const std::string& path);

}  // namespace fedage::brainage
