#include "fedage/brainage.hpp"

#include <charconv>
#include <cmath>
#include <fstream>
#include <numeric>

#include "fedage/error.hpp"
#include "fedage/rng.hpp"

namespace fedage::brainage {

double compute_pad(double predicted, double actual) {
  if (!std::isfinite(predicted) || !std::isfinite(actual))
    throw ConfigError("non-finite age in PAD computation");
  return predicted - actual;
}

PredictionRecord make_prediction(long subject_id, double actual,
                                 double predicted) {
  PredictionRecord r;
  r.subject_id = subject_id;
  r.actual_age = actual;
  r.predicted_age = predicted;
  r.pad = compute_pad(predicted, actual);
  return r;
}

BiasLine fit_bias_line(std::span<const double> pads,
                       std::span<const double> ages) {
  if (pads.size() != ages.size()) throw ShapeError("pad/age length mismatch");
  const std::size_t n = pads.size();
  if (n < 3) throw InsufficientDataError("bias line needs >= 3 points");

  const double mean_age =
      std::accumulate(ages.begin(), ages.end(), 0.0) / static_cast<double>(n);
  const double mean_pad =
      std::accumulate(pads.begin(), pads.end(), 0.0) / static_cast<double>(n);
  double sxx = 0.0, sxy = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    const double dx = ages[i] - mean_age;
    sxx += dx * dx;
    sxy += dx * (pads[i] - mean_pad);
  }
  if (!(sxx > 0.0)) throw DegenerateFitError("zero age variance in bias fit");

  BiasLine line;
  line.slope = sxy / sxx;
  line.intercept = mean_pad - line.slope * mean_age;
  if (!std::isfinite(line.slope) || !std::isfinite(line.intercept))
    throw DegenerateFitError("non-finite bias line");
  return line;
}

void correct_brainage_cv(std::vector<PredictionRecord>& records, int k,
                         std::uint64_t seed) {
  if (k < 2) throw ConfigError("correction fold count must be >= 2");
  if (records.size() < static_cast<std::size_t>(k))
    throw InsufficientDataError("fewer records than correction folds");

  std::vector<std::size_t> order(records.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  Rng rng(seed);
  rng.shuffle(order);

  std::vector<int> fold_of(records.size());
  for (std::size_t i = 0; i < order.size(); ++i)
    fold_of[order[i]] = static_cast<int>(i % static_cast<std::size_t>(k));

  for (int fold = 0; fold < k; ++fold) {
    std::vector<double> pads, ages;
    for (std::size_t i = 0; i < records.size(); ++i)
      if (fold_of[i] != fold) {
        pads.push_back(records[i].pad);
        ages.push_back(records[i].actual_age);
      }
    const BiasLine line = fit_bias_line(pads, ages);
    for (std::size_t i = 0; i < records.size(); ++i)
      if (fold_of[i] == fold) {
        records[i].brainage = records[i].pad - line.at(records[i].actual_age);
        records[i].corrected = true;
      }
  }
}

namespace {

std::string fmt(double v) {
  char buf[32];
  const auto res = std::to_chars(buf, buf + sizeof(buf), v);
  return std::string(buf, res.ptr);
}

double parse_double_field(const std::string& tok, std::size_t row) {
  double v = 0.0;
  const auto res = std::from_chars(tok.data(), tok.data() + tok.size(), v);
  if (res.ec != std::errc{} || res.ptr != tok.data() + tok.size())
    throw CsvError(row, "unparsable value '" + tok + "'");
  return v;
}

}  // namespace

void write_predictions_csv(const std::vector<PredictionRecord>& records,
                           const std::string& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw Error("cannot open " + path + " for writing");
  out << "subject_id,actual_age,predicted_age,pad,brainage\n";
  for (const auto& r : records) {
    out << r.subject_id << ',' << fmt(r.actual_age) << ','
        << fmt(r.predicted_age) << ',' << fmt(r.pad) << ',';
    if (r.corrected) out << fmt(r.brainage);
    out << '\n';
  }
  if (!out) throw Error("write failed for " + path);
}

std::vector<PredictionRecord> load_predictions_csv(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error("cannot open " + path);
  std::string line;
  if (!std::getline(in, line)) throw CsvError(1, "missing header");
  if (!line.empty() && line.back() == '\r') line.pop_back();
  if (line != "subject_id,actual_age,predicted_age,pad,brainage")
    throw CsvError(1, "unexpected prediction CSV header");

  std::vector<PredictionRecord> records;
  std::size_t row = 1;
  while (std::getline(in, line)) {
    ++row;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) continue;
    std::vector<std::string> tok;
    std::size_t start = 0;
    while (true) {
      const std::size_t comma = line.find(',', start);
      if (comma == std::string::npos) {
        tok.push_back(line.substr(start));
        break;
      }
      tok.push_back(line.substr(start, comma - start));
      start = comma + 1;
    }
    if (tok.size() != 5) throw CsvError(row, "expected 5 columns");
    PredictionRecord r;
    r.subject_id = std::stol(tok[0]);
    r.actual_age = parse_double_field(tok[1], row);
    r.predicted_age = parse_double_field(tok[2], row);
    r.pad = parse_double_field(tok[3], row);
    if (!tok[4].empty()) {
      r.brainage = parse_double_field(tok[4], row);
      r.corrected = true;
    }
    records.push_back(r);
  }
  return records;
}

}  // namespace fedage::brainage
