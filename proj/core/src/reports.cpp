// Pipeline stages and the CSV/Markdown report bundle.
//
// Stage outputs under the config's out_dir:
//   generate-data: cohort.csv, cohort_summary.csv, cohort_center_tests.csv
//   train:         predictions_<family>_<configuration>_seed<N>.csv (raw)
//   evaluate:      same files, BrainAGE column filled
//   stats:         error_summary.csv, error_comparisons.csv,
//                  phenotype_brainage.csv, phenotype_age.csv,
//                  outcome_tests.csv, outcome_odds_ratios.csv,
//                  outcome_odds_ratios_standardized.csv
//   report:        report.md
#include <algorithm>
#include <charconv>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <functional>
#include <map>
#include <sstream>

#include "fedage/error.hpp"
#include "fedage/harness.hpp"
#include "fedage/stats.hpp"

namespace fedage::harness {

namespace fs = std::filesystem;

namespace {

std::string fmt(double v) {
  char buf[32];
  const auto res = std::to_chars(buf, buf + sizeof(buf), v);
  return std::string(buf, res.ptr);
}

std::string fmt_fixed(double v, int digits = 3) {
  char buf[64];
  std::snprintf(buf, sizeof(buf), "%.*f", digits, v);
  return buf;
}

std::ofstream open_out(const fs::path& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw Error("cannot open " + path.string() + " for writing");
  return out;
}

double median_of_sorted_copy(std::vector<double> v) {
  std::sort(v.begin(), v.end());
  const std::size_t n = v.size();
  if (n == 0) return 0.0;
  return n % 2 ? v[n / 2] : 0.5 * (v[n / 2 - 1] + v[n / 2]);
}

cohort::Cohort summary_cohort(const ExperimentConfig& cfg) {
  if (!cfg.cohort_csv.empty()) return cohort::load_cohort_csv(cfg.cohort_csv);
  return cohort::generate_cohort(*cfg.generate);
}

void write_cohort_summary(const cohort::Cohort& cohort, const fs::path& dir) {
  auto out = open_out(dir / "cohort_summary.csv");
  out << "center_id,n,age_mean,age_sd,sex_pct,htn_pct,dm_pct,af_pct,smk_pct,"
         "hcl_pct,nihss_median,p2p_median,ivt_pct,reca_pct,mrs_median\n";

  auto emit = [&out](const std::string& label,
                     const std::vector<const cohort::SubjectRecord*>& subs) {
    const double n = static_cast<double>(subs.size());
    double age_sum = 0.0;
    for (const auto* s : subs) age_sum += s->age;
    const double age_mean = age_sum / n;
    double age_ss = 0.0;
    for (const auto* s : subs) age_ss += (s->age - age_mean) * (s->age - age_mean);
    const double age_sd = subs.size() > 1 ? std::sqrt(age_ss / (n - 1.0)) : 0.0;
    auto pct = [&](auto field) {
      double c = 0.0;
      for (const auto* s : subs) c += field(*s);
      return 100.0 * c / n;
    };
    std::vector<double> nihss, p2p, mrs;
    for (const auto* s : subs) {
      nihss.push_back(s->nihss);
      p2p.push_back(s->p2p);
      mrs.push_back(s->mrs_3m);
    }
    out << label << ',' << subs.size() << ',' << fmt_fixed(age_mean, 2) << ','
        << fmt_fixed(age_sd, 2) << ','
        << fmt_fixed(pct([](const auto& s) { return s.sex; }), 1) << ','
        << fmt_fixed(pct([](const auto& s) { return s.htn; }), 1) << ','
        << fmt_fixed(pct([](const auto& s) { return s.dm; }), 1) << ','
        << fmt_fixed(pct([](const auto& s) { return s.af; }), 1) << ','
        << fmt_fixed(pct([](const auto& s) { return s.smk; }), 1) << ','
        << fmt_fixed(pct([](const auto& s) { return s.hcl; }), 1) << ','
        << fmt_fixed(median_of_sorted_copy(nihss), 1) << ','
        << fmt_fixed(median_of_sorted_copy(p2p), 1) << ','
        << fmt_fixed(pct([](const auto& s) { return s.ivt; }), 1) << ','
        << fmt_fixed(pct([](const auto& s) { return s.reca; }), 1) << ','
        << fmt_fixed(median_of_sorted_copy(mrs), 1) << '\n';
  };

  for (int center : cohort.center_ids()) {
    std::vector<const cohort::SubjectRecord*> subs;
    for (const auto& s : cohort.subjects)
      if (s.center_id == center) subs.push_back(&s);
    emit(std::to_string(center), subs);
  }
  std::vector<const cohort::SubjectRecord*> all;
  for (const auto& s : cohort.subjects) all.push_back(&s);
  emit("total", all);
}

void write_center_tests(const cohort::Cohort& cohort, const fs::path& dir) {
  auto out = open_out(dir / "cohort_center_tests.csv");
  out << "variable,method,statistic,p_value\n";
  const std::vector<std::pair<std::string, std::function<double(
                                               const cohort::SubjectRecord&)>>>
      vars = {{"age", [](const auto& s) { return s.age; }},
              {"nihss", [](const auto& s) { return double(s.nihss); }},
              {"p2p", [](const auto& s) { return s.p2p; }},
              {"mrs_3m", [](const auto& s) { return double(s.mrs_3m); }}};
  for (const auto& [name, getter] : vars) {
    std::vector<std::vector<double>> groups;
    for (int center : cohort.center_ids()) {
      std::vector<double> g;
      for (const auto& s : cohort.subjects)
        if (s.center_id == center) g.push_back(getter(s));
      groups.push_back(std::move(g));
    }
    const auto res = stats::kruskal_wallis(groups);
    out << name << ",kruskal_wallis," << fmt(res.statistic) << ','
        << fmt(res.p_value) << '\n';
  }
}

std::vector<RunKey> config_runs(const ExperimentConfig& cfg) {
  std::vector<RunKey> keys;
  for (auto family : cfg.families)
    for (auto topology : cfg.topologies)
      for (auto seed : cfg.seeds) keys.push_back({family, topology, seed});
  return keys;
}

PredictionSet load_predictions(const ExperimentConfig& cfg) {
  PredictionSet runs;
  for (const auto& key : config_runs(cfg)) {
    const fs::path path = fs::path(cfg.out_dir) / predictions_filename(key);
    if (!fs::exists(path))
      throw ConfigError("missing " + path.string() + "; run the train stage");
    runs[key] = brainage::load_predictions_csv(path.string());
  }
  return runs;
}

}  // namespace

void stage_generate_data(const ExperimentConfig& cfg) {
  cfg.validate();
  fs::create_directories(cfg.out_dir);
  const auto cohort = summary_cohort(cfg);
  if (cfg.generate)
    cohort::write_cohort_csv(cohort, (fs::path(cfg.out_dir) / "cohort.csv").string());
  write_cohort_summary(cohort, cfg.out_dir);
  write_center_tests(cohort, cfg.out_dir);
}

void stage_train(const ExperimentConfig& cfg) {
  cfg.validate();
  fs::create_directories(cfg.out_dir);
  std::map<std::uint64_t, cohort::Cohort> cohorts;
  for (const auto& key : config_runs(cfg)) {
    if (!cohorts.count(key.seed))
      cohorts.emplace(key.seed, cohort_for_run(cfg, key.seed));
    const auto records = run_training_protocol(cohorts.at(key.seed), key.family,
                                               key.topology, cfg, key.seed);
    brainage::write_predictions_csv(
        records, (fs::path(cfg.out_dir) / predictions_filename(key)).string());
  }
}

void stage_evaluate(const ExperimentConfig& cfg) {
  cfg.validate();
  auto runs = load_predictions(cfg);
  for (auto& [key, records] : runs) {
    correct_records(records, cfg, key.seed);
    brainage::write_predictions_csv(
        records, (fs::path(cfg.out_dir) / predictions_filename(key)).string());
  }
}

void stage_stats(const ExperimentConfig& cfg) {
  cfg.validate();
  const fs::path dir(cfg.out_dir);
  const auto runs = load_predictions(cfg);

  {
    auto out = open_out(dir / "error_summary.csv");
    out << "family,configuration,seed,n,mean_abs_error,sd_abs_error\n";
    for (const auto& row : error_summary(runs))
      out << to_string(row.key.family) << ',' << to_string(row.key.topology)
          << ',' << row.key.seed << ',' << row.n << ',' << fmt(row.mean_abs_err)
          << ',' << fmt(row.sd_abs_err) << '\n';
  }
  {
    auto out = open_out(dir / "error_comparisons.csv");
    out << "family,config_a,config_b,seed,n_pairs,wilcoxon_w,p_value,note\n";
    for (const auto& row : compare_errors(runs))
      out << to_string(row.family) << ',' << to_string(row.topo_a) << ','
          << to_string(row.topo_b) << ',' << row.seed_label << ','
          << row.n_pairs << ',' << fmt(row.statistic) << ',' << fmt(row.p_value)
          << ',' << row.note << '\n';
  }

  auto group_row = [](std::ofstream& out, const GroupTestRow& row) {
    out << to_string(row.key.family) << ',' << to_string(row.key.topology)
        << ',' << row.key.seed << ',' << row.variable << ',' << row.quantity
        << ',' << row.n_with << ',' << row.n_without << ','
        << fmt(row.median_with) << ',' << fmt(row.median_without) << ','
        << fmt(row.statistic) << ',' << fmt(row.p_value) << ',' << row.stars
        << ',' << row.note << '\n';
  };
  const std::string group_header =
      "family,configuration,seed,variable,quantity,n_with,n_without,"
      "median_with,median_without,statistic,p_value,stars,note\n";

  auto pheno_brainage = open_out(dir / "phenotype_brainage.csv");
  auto pheno_age = open_out(dir / "phenotype_age.csv");
  auto outcome_tests = open_out(dir / "outcome_tests.csv");
  pheno_brainage << group_header;
  pheno_age << group_header;
  outcome_tests << group_header;
  auto or_raw = open_out(dir / "outcome_odds_ratios.csv");
  auto or_std = open_out(dir / "outcome_odds_ratios_standardized.csv");
  const std::string or_header =
      "family,configuration,seed,predictor,odds_ratio,ci_lo,ci_hi,p_value,"
      "stars\n";
  or_raw << or_header;
  or_std << or_header;

  for (auto seed : cfg.seeds) {
    const auto run_cohort = cohort_for_run(cfg, seed);
    for (const auto& row : phenotype_analysis(runs, run_cohort, seed))
      group_row(row.quantity == "brainage" ? pheno_brainage : pheno_age, row);
    const auto outcome = outcome_analysis(runs, run_cohort, seed);
    for (const auto& row : outcome.brainage_by_outcome)
      group_row(outcome_tests, row);
    for (const auto& row : outcome.phenotype_chi2) group_row(outcome_tests, row);
    for (const auto& row : outcome.odds_ratios) {
      auto& out = row.standardized ? or_std : or_raw;
      out << to_string(row.key.family) << ',' << to_string(row.key.topology)
          << ',' << row.key.seed << ',' << row.predictor << ','
          << fmt(row.odds_ratio) << ',' << fmt(row.ci_lo) << ','
          << fmt(row.ci_hi) << ',' << fmt(row.p) << ',' << row.stars << '\n';
    }
  }
}

namespace {

// Render a CSV file as a Markdown table section.
void render_csv_section(std::ofstream& md, const fs::path& csv,
                        const std::string& title) {
  std::ifstream in(csv);
  if (!in) return;
  md << "## " << title << "\n\n";
  std::string line;
  bool header = true;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    std::string row = "|";
    std::size_t start = 0;
    std::size_t fields = 0;
    while (true) {
      const std::size_t comma = line.find(',', start);
      const std::string cell = comma == std::string::npos
                                   ? line.substr(start)
                                   : line.substr(start, comma - start);
      row += ' ' + (cell.empty() ? std::string(" ") : cell) + " |";
      ++fields;
      if (comma == std::string::npos) break;
      start = comma + 1;
    }
    md << row << '\n';
    if (header) {
      md << '|';
      for (std::size_t i = 0; i < fields; ++i) md << " --- |";
      md << '\n';
      header = false;
    }
  }
  md << '\n';
}

}  // namespace

void stage_report(const ExperimentConfig& cfg) {
  cfg.validate();
  const fs::path dir(cfg.out_dir);
  auto md = open_out(dir / "report.md");

  md << "# Brain-age federation report\n\n";
  md << "Families:";
  for (auto f : cfg.families) md << ' ' << to_string(f);
  md << "\nConfigurations:";
  for (auto t : cfg.topologies) md << ' ' << to_string(t);
  md << "\nSeeds:";
  for (auto s : cfg.seeds) md << ' ' << s;
  md << "\nBudgets: " << epoch_budget(cfg.families.front(), cfg) << " epochs / "
     << round_budget(cfg.families.front(), cfg) << " rounds\n\n";

  render_csv_section(md, dir / "cohort_summary.csv", "Cohort by center");
  render_csv_section(md, dir / "cohort_center_tests.csv",
                     "Center association tests");
  render_csv_section(md, dir / "error_summary.csv",
                     "Absolute prediction errors");
  render_csv_section(md, dir / "error_comparisons.csv",
                     "Paired error comparisons (Wilcoxon)");
  render_csv_section(md, dir / "phenotype_brainage.csv",
                     "BrainAGE by phenotype (Mann-Whitney)");
  render_csv_section(md, dir / "phenotype_age.csv",
                     "Age by phenotype (Mann-Whitney)");
  render_csv_section(md, dir / "outcome_tests.csv",
                     "Functional outcome comparisons");
  render_csv_section(md, dir / "outcome_odds_ratios.csv",
                     "Odds ratios (good outcome)");
  render_csv_section(md, dir / "outcome_odds_ratios_standardized.csv",
                     "Standardized odds ratios");
}

}  // namespace fedage::harness
