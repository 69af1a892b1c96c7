// Synthetic multi-site cohort generation, CSV ingestion, normalization and
// center-stratified k-fold splitting.
#pragma once

#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <unordered_map>
#include <vector>

namespace fedage::cohort {

struct SubjectRecord {
  long subject_id = 0;
  int center_id = 0;
  double age = 0.0;  // years, in [18, 100]
  int sex = 0;       // 1 = male
  int htn = 0, dm = 0, af = 0, smk = 0, hcl = 0;
  int nihss = 0;     // stroke severity at admission, >= 0
  double p2p = 0.0;  // minutes between imaging and arterial puncture
  int ivt = 0, reca = 0;
  int mrs_3m = 0;  // modified Rankin Scale at 3 months, 0..6
  std::vector<double> features;
};

struct Cohort {
  std::vector<std::string> feature_names;  // f000.. column labels
  std::vector<SubjectRecord> subjects;

  std::size_t size() const { return subjects.size(); }
  std::size_t feature_dim() const { return feature_names.size(); }
  std::vector<int> center_ids() const;              // sorted, unique
  std::vector<std::size_t> center_indices(int center_id) const;
  double center_mean_age(int center_id) const;
  int largest_center() const;  // most subjects; ties -> smaller id
};

// Feature 0 always carries this fixed positive loading on the standardized
// latent, so every cohort has a known primary aging marker.
inline constexpr double kPrimaryFeatureSlope = 0.05;

struct PhenotypePrevalence {
  double sex = 0.46;
  double htn = 0.68;
  double dm = 0.21;
  double af = 0.37;
  double smk = 0.17;
  double hcl = 0.41;
  double ivt = 0.62;
  double reca = 0.83;
};

// Logistic model linking covariates to the good-outcome probability. The
// brain-aging term acts on the latent deviation (latent age minus
// chronological age), which is what corrected BrainAGE estimates.
struct OutcomeModel {
  double intercept = -1.35;
  double age = -0.045;         // per year, centered at 70
  double latent_dev = -0.10;   // per year of brain-aging deviation
  double nihss = -0.10;        // per point, centered at 16
  double p2p = -0.003;         // per minute, centered at 148
  double ivt = 0.38;
  double reca = 0.74;
  double sex = 0.17;
};

struct CenterAgeModel {
  double mean = 70.03;
  double sd = 14.71;
};

struct CohortSpec {
  int n_centers = 16;
  // Default center sizes sum to 1674 with the largest center first.
  std::vector<int> subjects_per_center = {651, 184, 135, 84, 83, 82, 79, 66,
                                          63,  62,  46,  44, 32, 30, 23, 10};
  std::vector<CenterAgeModel> age_distribution;  // broadcast when size 1/empty

  int volume_features = 32;
  int radiomics_features = 256;

  // Per-center affine feature distortion: scale ~ logNormal(0, scale_sigma)
  // with a center-common log component, shift ~ Normal(0, shift_sigma *
  // feature scale). Zero disables. Defaults are calibrated so single-site
  // models degrade visibly at desk-scale budgets.
  double site_scale_sigma = 0.25;
  double site_shift_sigma = 0.4;

  double dm_feature_offset = 3.0;  // planted latent shift, years
  double latent_noise_sd = 4.0;    // aging noise around chronological age

  PhenotypePrevalence prevalence;
  OutcomeModel outcome_model;
  double nihss_mean = 16.0, nihss_sd = 6.0;
  double p2p_mean = 148.18, p2p_sd = 40.27;

  std::uint64_t seed = 0;

  void validate() const;  // throws ConfigError
  std::size_t total_subjects() const;
};

CohortSpec cohort_spec_from_json(const std::string& json_text);
std::string cohort_spec_to_json(const CohortSpec& spec);

// Deterministic synthetic cohort: features are a fixed per-seed function of a
// latent brain age (chronological age + planted phenotype offsets + aging
// noise) composed with per-center affine site effects; outcomes follow the
// planted logistic model.
Cohort generate_cohort(const CohortSpec& spec);

struct NormStats {
  std::vector<double> mins;
  std::vector<double> maxs;
};

// Min-max statistics from training rows only; constant columns map to 0.
NormStats fit_minmax(std::span<const std::vector<double>> train_rows);
std::vector<double> apply_minmax(const NormStats& stats,
                                 std::span<const double> features);

struct FoldAssignment {
  int k = 0;
  std::unordered_map<long, int> fold_of;  // subject_id -> fold

  int fold(long subject_id) const;
};

// Within each center, subjects are shuffled (seeded) and dealt round-robin,
// keeping per-center fold proportions within one subject of 1/k.
FoldAssignment stratified_center_kfold(const Cohort& cohort, int k,
                                       std::uint64_t seed);

Cohort load_cohort_csv(const std::string& path);
void write_cohort_csv(const Cohort& cohort, const std::string& path);

}  // namespace fedage::cohort
