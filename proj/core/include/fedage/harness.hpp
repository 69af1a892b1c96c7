// End-to-end experiment pipeline: cohort -> training protocol (per model
// family and topology) -> bias-corrected BrainAGE -> statistical analyses ->
// CSV/Markdown report bundle.
#pragma once

#include <cstdint>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "fedage/brainage.hpp"
#include "fedage/cohort.hpp"
#include "fedage/federation.hpp"
#include "fedage/model.hpp"
#include "fedage/stats.hpp"

namespace fedage::harness {

enum class ModelFamily { vol_simple, vol_augmented, radiomics_like, feedforward };
enum class Topology { centralized, federated, single_site };

std::string to_string(ModelFamily family);
std::string to_string(Topology topology);
ModelFamily parse_family(const std::string& name);
Topology parse_topology(const std::string& name);

struct ExperimentConfig {
  // Cohort source: an inline generator spec, or a CSV path. With a generator
  // spec, each run seed draws its own cohort; a CSV cohort is fixed and run
  // seeds vary only training and fold randomness.
  std::optional<cohort::CohortSpec> generate;
  std::string cohort_csv;
  int volume_features = 32;  // leading feature block for CSV cohorts

  std::vector<ModelFamily> families = {ModelFamily::vol_simple};
  std::vector<Topology> topologies = {Topology::centralized,
                                      Topology::federated,
                                      Topology::single_site};
  std::vector<std::uint64_t> seeds = {1};

  std::optional<int> reference_center;  // default: the largest center
  int cv_folds_test = 5;
  int cv_folds_correction = 10;

  // Desk-scale budgets; paper_budgets switches to 1000 epochs/rounds
  // (500 rounds for the federated feedforward model).
  int epochs = 100;
  int rounds = 100;
  bool paper_budgets = false;

  int batch_size = 8;
  double l2_penalty = 1e-4;
  bool tune_l2 = false;
  std::vector<double> l2_grid = {0.0, 1e-4, 1e-3, 1e-2, 1e-1, 1.0};

  std::string out_dir = "out";
  int tcp_timeout_seconds = 60;

  void validate() const;
  static ExperimentConfig from_json(const std::string& json_text);
  static ExperimentConfig from_json_file(const std::string& path);
  std::string to_json() const;
};

int epoch_budget(ModelFamily family, const ExperimentConfig& cfg);
int round_budget(ModelFamily family, const ExperimentConfig& cfg);

// Published learning-rate settings per family and topology.
model::LrSchedule family_schedule(ModelFamily family, Topology topology,
                                  int horizon);
model::Optimizer family_optimizer(ModelFamily family, Topology topology);

// Feature rows for one model family, aligned with cohort.subjects. The
// volume block feeds vol_simple (raw), vol_augmented (degree-2 expansion) and
// the feedforward model; the remaining columns form the radiomics-like block.
struct FamilyFeatures {
  std::vector<std::vector<double>> rows;
  bool needs_minmax = false;
};
FamilyFeatures family_features(const cohort::Cohort& cohort, ModelFamily family,
                               int volume_features);

// The evaluation protocol. Test set: every subject outside the reference
// center. single_site trains on the reference center only and predicts the
// whole test set; centralized/federated run center-stratified k-fold
// cross-validation over the test set, training on reference center + k-1
// folds. Returns one raw prediction per test subject, ordered by subject id;
// correct_records fills BrainAGE afterwards.
std::vector<brainage::PredictionRecord> run_training_protocol(
    const cohort::Cohort& cohort, ModelFamily family, Topology topology,
    const ExperimentConfig& cfg, std::uint64_t seed);

// k-fold age-bias correction with the run's correction seed.
void correct_records(std::vector<brainage::PredictionRecord>& records,
                     const ExperimentConfig& cfg, std::uint64_t seed);

// Whole-cohort federated training (no test split); the unit exposed by the
// serve-server / serve-client subcommands for multi-process runs.
struct SingleFederationResult {
  model::ModelParams params;
  std::vector<fed::RoundRecord> history;
  std::vector<int> roster;
};
SingleFederationResult run_single_federation(const cohort::Cohort& cohort,
                                             ModelFamily family,
                                             const ExperimentConfig& cfg,
                                             std::uint64_t seed,
                                             fed::Transport* transport);

// Federation plan for one client of the whole-cohort unit (serve-client side).
fed::FederationPlan single_federation_plan(const cohort::Cohort& cohort,
                                           ModelFamily family,
                                           const ExperimentConfig& cfg,
                                           std::uint64_t seed);

// --- analyses ---------------------------------------------------------------

struct RunKey {
  ModelFamily family{};
  Topology topology{};
  std::uint64_t seed = 0;

  bool operator<(const RunKey& other) const;
};

using PredictionSet = std::map<RunKey, std::vector<brainage::PredictionRecord>>;

struct ErrorSummaryRow {
  RunKey key;
  double mean_abs_err = 0.0;
  double sd_abs_err = 0.0;
  std::size_t n = 0;
};

struct ErrorComparisonRow {
  ModelFamily family{};
  Topology topo_a{}, topo_b{};
  std::string seed_label;  // seed number, or "all" for the pooled row
  double statistic = 0.0;
  double p_value = 1.0;
  std::size_t n_pairs = 0;
  std::string note;  // "no difference" when the pairing is degenerate
};

std::vector<ErrorSummaryRow> error_summary(const PredictionSet& runs);

// Paired |error| Wilcoxon tests per topology pair: one row per seed plus a
// pooled-over-seeds row per family.
std::vector<ErrorComparisonRow> compare_errors(const PredictionSet& runs);

struct GroupTestRow {
  RunKey key;
  std::string variable;   // phenotype or outcome label
  std::string quantity;   // "brainage" or "age"
  std::size_t n_with = 0, n_without = 0;
  double median_with = 0.0, median_without = 0.0;
  double statistic = 0.0;
  double p_value = 1.0;
  std::string stars;
  std::string note;  // "skipped: empty group" etc.
};

// Mann-Whitney comparisons of BrainAGE (and of age, for context) across the
// binary phenotypes sex/htn/dm/af/smk/hcl.
std::vector<GroupTestRow> phenotype_analysis(
    const PredictionSet& runs, const cohort::Cohort& cohort_for_seed,
    std::uint64_t seed);

struct OutcomeAnalysisResult {
  std::vector<GroupTestRow> brainage_by_outcome;   // Mann-Whitney rows
  std::vector<GroupTestRow> phenotype_chi2;        // Yates 2x2 vs outcome
  struct OrRow {
    RunKey key;
    std::string predictor;
    double odds_ratio, ci_lo, ci_hi, p;
    std::string stars;
    bool standardized;
  };
  std::vector<OrRow> odds_ratios;
};

// Good outcome = mRS at 3 months <= 2. Logistic regression of good outcome
// on BrainAGE, age, sex, HTN, DM, AF, SMK, HCL, NIHSS, P2P, IVT, RECA;
// raw and standardized odds-ratio tables.
OutcomeAnalysisResult outcome_analysis(const PredictionSet& runs,
                                       const cohort::Cohort& cohort_for_seed,
                                       std::uint64_t seed);

// --- pipeline stages (reports.cpp) ------------------------------------------

cohort::Cohort cohort_for_run(const ExperimentConfig& cfg, std::uint64_t seed);

std::string predictions_filename(const RunKey& key);

void stage_generate_data(const ExperimentConfig& cfg);
void stage_train(const ExperimentConfig& cfg);
void stage_evaluate(const ExperimentConfig& cfg);
void stage_stats(const ExperimentConfig& cfg);
void stage_report(const ExperimentConfig& cfg);

}  // namespace fedage::harness
