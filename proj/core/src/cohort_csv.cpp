// Cohort CSV codec and CohortSpec JSON bindings.
//
// CSV layout: one header row, comma separated, UTF-8. Clinical columns come
// first in a fixed order, then feature columns f000..fNNN. Floating-point
// fields are written with shortest round-trip formatting so that
// write -> load is the identity on valid cohorts.
#include <charconv>
#include <cmath>
#include <fstream>
#include <sstream>
#include <string_view>

#include <json.hpp>

#include "fedage/cohort.hpp"
#include "fedage/error.hpp"

namespace fedage::cohort {

namespace {

const std::vector<std::string> kClinicalColumns = {
    "subject_id", "center_id", "age",  "sex",  "htn",
    "dm",         "af",        "smk",  "hcl",  "nihss",
    "p2p",        "ivt",       "reca", "mrs_3m"};

std::string format_double(double v) {
  char buf[32];
  const auto res = std::to_chars(buf, buf + sizeof(buf), v);
  return std::string(buf, res.ptr);
}

double parse_double(std::string_view tok, std::size_t row,
                    const std::string& column) {
  double v = 0.0;
  const auto res = std::from_chars(tok.data(), tok.data() + tok.size(), v);
  if (res.ec != std::errc{} || res.ptr != tok.data() + tok.size())
    throw CsvError(row, "unparsable value '" + std::string(tok) +
                            "' in column " + column);
  return v;
}

long parse_long(std::string_view tok, std::size_t row,
                const std::string& column) {
  long v = 0;
  const auto res = std::from_chars(tok.data(), tok.data() + tok.size(), v);
  if (res.ec != std::errc{} || res.ptr != tok.data() + tok.size())
    throw CsvError(row, "unparsable value '" + std::string(tok) +
                            "' in column " + column);
  return v;
}

int parse_flag(std::string_view tok, std::size_t row,
               const std::string& column) {
  const long v = parse_long(tok, row, column);
  if (v != 0 && v != 1)
    throw CsvError(row, column + "=" + std::string(tok) + " is not 0/1");
  return static_cast<int>(v);
}

std::vector<std::string_view> split_csv_line(std::string_view line) {
  std::vector<std::string_view> out;
  std::size_t start = 0;
  while (true) {
    const std::size_t comma = line.find(',', start);
    if (comma == std::string_view::npos) {
      out.push_back(line.substr(start));
      break;
    }
    out.push_back(line.substr(start, comma - start));
    start = comma + 1;
  }
  return out;
}

void validate_record(const SubjectRecord& s, std::size_t row) {
  if (!(s.age >= 18.0 && s.age <= 100.0))
    throw CsvError(row, "age=" + format_double(s.age) + " outside [18,100]");
  if (s.mrs_3m < 0 || s.mrs_3m > 6)
    throw CsvError(row, "mrs_3m=" + std::to_string(s.mrs_3m) + " outside 0..6");
  if (s.nihss < 0)
    throw CsvError(row, "nihss=" + std::to_string(s.nihss) + " is negative");
  if (!std::isfinite(s.p2p)) throw CsvError(row, "non-finite p2p");
  for (double f : s.features)
    if (!std::isfinite(f)) throw CsvError(row, "non-finite feature value");
}

}  // namespace

void write_cohort_csv(const Cohort& cohort, const std::string& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw Error("cannot open " + path + " for writing");

  for (std::size_t i = 0; i < kClinicalColumns.size(); ++i)
    out << (i ? "," : "") << kClinicalColumns[i];
  for (const auto& name : cohort.feature_names) out << ',' << name;
  out << '\n';

  for (const auto& s : cohort.subjects) {
    if (s.features.size() != cohort.feature_dim())
      throw ShapeError("subject feature length does not match cohort schema");
    out << s.subject_id << ',' << s.center_id << ',' << format_double(s.age)
        << ',' << s.sex << ',' << s.htn << ',' << s.dm << ',' << s.af << ','
        << s.smk << ',' << s.hcl << ',' << s.nihss << ','
        << format_double(s.p2p) << ',' << s.ivt << ',' << s.reca << ','
        << s.mrs_3m;
    for (double f : s.features) out << ',' << format_double(f);
    out << '\n';
  }
  if (!out) throw Error("write failed for " + path);
}

Cohort load_cohort_csv(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error("cannot open " + path);

  std::string line;
  if (!std::getline(in, line)) throw CsvError(1, "missing header row");
  if (!line.empty() && line.back() == '\r') line.pop_back();
  const auto header = split_csv_line(line);
  if (header.size() < kClinicalColumns.size())
    throw CsvError(1, "header has too few columns");
  for (std::size_t i = 0; i < kClinicalColumns.size(); ++i)
    if (header[i] != kClinicalColumns[i])
      throw CsvError(1, "missing or misplaced column '" + kClinicalColumns[i] +
                            "' (found '" + std::string(header[i]) + "')");

  Cohort cohort;
  for (std::size_t i = kClinicalColumns.size(); i < header.size(); ++i)
    cohort.feature_names.emplace_back(header[i]);

  std::size_t row = 1;
  while (std::getline(in, line)) {
    ++row;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) continue;
    const auto tok = split_csv_line(line);
    if (tok.size() != header.size())
      throw CsvError(row, "expected " + std::to_string(header.size()) +
                              " columns, found " + std::to_string(tok.size()));

    SubjectRecord s;
    s.subject_id = parse_long(tok[0], row, "subject_id");
    s.center_id = static_cast<int>(parse_long(tok[1], row, "center_id"));
    s.age = parse_double(tok[2], row, "age");
    s.sex = parse_flag(tok[3], row, "sex");
    s.htn = parse_flag(tok[4], row, "htn");
    s.dm = parse_flag(tok[5], row, "dm");
    s.af = parse_flag(tok[6], row, "af");
    s.smk = parse_flag(tok[7], row, "smk");
    s.hcl = parse_flag(tok[8], row, "hcl");
    s.nihss = static_cast<int>(parse_long(tok[9], row, "nihss"));
    s.p2p = parse_double(tok[10], row, "p2p");
    s.ivt = parse_flag(tok[11], row, "ivt");
    s.reca = parse_flag(tok[12], row, "reca");
    s.mrs_3m = static_cast<int>(parse_long(tok[13], row, "mrs_3m"));
    s.features.reserve(cohort.feature_dim());
    for (std::size_t i = kClinicalColumns.size(); i < tok.size(); ++i)
      s.features.push_back(
          parse_double(tok[i], row, std::string(header[i])));

    validate_record(s, row);
    cohort.subjects.push_back(std::move(s));
  }
  return cohort;
}

namespace {

using nlohmann::json;

template <class T>
void maybe_get(const json& j, const char* key, T& out) {
  if (j.contains(key)) out = j.at(key).get<T>();
}

}  // namespace

CohortSpec cohort_spec_from_json(const std::string& json_text) {
  json j;
  try {
    j = json::parse(json_text);
  } catch (const json::parse_error& e) {
    throw ConfigError(std::string("cohort spec JSON: ") + e.what());
  }

  CohortSpec spec;
  maybe_get(j, "n_centers", spec.n_centers);
  if (j.contains("subjects_per_center"))
    spec.subjects_per_center =
        j.at("subjects_per_center").get<std::vector<int>>();
  if (j.contains("age_distribution")) {
    spec.age_distribution.clear();
    for (const auto& a : j.at("age_distribution")) {
      CenterAgeModel m;
      maybe_get(a, "mean", m.mean);
      maybe_get(a, "sd", m.sd);
      spec.age_distribution.push_back(m);
    }
  }
  maybe_get(j, "volume_features", spec.volume_features);
  maybe_get(j, "radiomics_features", spec.radiomics_features);
  maybe_get(j, "site_scale_sigma", spec.site_scale_sigma);
  maybe_get(j, "site_shift_sigma", spec.site_shift_sigma);
  maybe_get(j, "dm_feature_offset", spec.dm_feature_offset);
  maybe_get(j, "latent_noise_sd", spec.latent_noise_sd);
  if (j.contains("prevalence")) {
    const auto& p = j.at("prevalence");
    maybe_get(p, "sex", spec.prevalence.sex);
    maybe_get(p, "htn", spec.prevalence.htn);
    maybe_get(p, "dm", spec.prevalence.dm);
    maybe_get(p, "af", spec.prevalence.af);
    maybe_get(p, "smk", spec.prevalence.smk);
    maybe_get(p, "hcl", spec.prevalence.hcl);
    maybe_get(p, "ivt", spec.prevalence.ivt);
    maybe_get(p, "reca", spec.prevalence.reca);
  }
  if (j.contains("outcome_model")) {
    const auto& o = j.at("outcome_model");
    maybe_get(o, "intercept", spec.outcome_model.intercept);
    maybe_get(o, "age", spec.outcome_model.age);
    maybe_get(o, "latent_dev", spec.outcome_model.latent_dev);
    maybe_get(o, "nihss", spec.outcome_model.nihss);
    maybe_get(o, "p2p", spec.outcome_model.p2p);
    maybe_get(o, "ivt", spec.outcome_model.ivt);
    maybe_get(o, "reca", spec.outcome_model.reca);
    maybe_get(o, "sex", spec.outcome_model.sex);
  }
  maybe_get(j, "nihss_mean", spec.nihss_mean);
  maybe_get(j, "nihss_sd", spec.nihss_sd);
  maybe_get(j, "p2p_mean", spec.p2p_mean);
  maybe_get(j, "p2p_sd", spec.p2p_sd);
  maybe_get(j, "seed", spec.seed);
  spec.validate();
  return spec;
}

std::string cohort_spec_to_json(const CohortSpec& spec) {
  json j;
  j["n_centers"] = spec.n_centers;
  j["subjects_per_center"] = spec.subjects_per_center;
  if (!spec.age_distribution.empty()) {
    json arr = json::array();
    for (const auto& a : spec.age_distribution)
      arr.push_back({{"mean", a.mean}, {"sd", a.sd}});
    j["age_distribution"] = arr;
  }
  j["volume_features"] = spec.volume_features;
  j["radiomics_features"] = spec.radiomics_features;
  j["site_scale_sigma"] = spec.site_scale_sigma;
  j["site_shift_sigma"] = spec.site_shift_sigma;
  j["dm_feature_offset"] = spec.dm_feature_offset;
  j["latent_noise_sd"] = spec.latent_noise_sd;
  j["prevalence"] = {{"sex", spec.prevalence.sex}, {"htn", spec.prevalence.htn},
                     {"dm", spec.prevalence.dm},   {"af", spec.prevalence.af},
                     {"smk", spec.prevalence.smk}, {"hcl", spec.prevalence.hcl},
                     {"ivt", spec.prevalence.ivt}, {"reca", spec.prevalence.reca}};
  j["outcome_model"] = {{"intercept", spec.outcome_model.intercept},
                        {"age", spec.outcome_model.age},
                        {"latent_dev", spec.outcome_model.latent_dev},
                        {"nihss", spec.outcome_model.nihss},
                        {"p2p", spec.outcome_model.p2p},
                        {"ivt", spec.outcome_model.ivt},
                        {"reca", spec.outcome_model.reca},
                        {"sex", spec.outcome_model.sex}};
  j["nihss_mean"] = spec.nihss_mean;
  j["nihss_sd"] = spec.nihss_sd;
  j["p2p_mean"] = spec.p2p_mean;
  j["p2p_sd"] = spec.p2p_sd;
  j["seed"] = spec.seed;
  return j.dump(2);
}

}  // namespace fedage::cohort
