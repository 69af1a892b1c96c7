#include "fedage/cohort.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <limits>
#include <map>
#include <numeric>

#include "fedage/error.hpp"
#include "fedage/rng.hpp"

namespace fedage::cohort {

namespace {
constexpr std::uint64_t kLoadingStream = 0x10AD;
constexpr std::uint64_t kSiteStream = 0x517E;
constexpr std::uint64_t kSubjectStream = 0x5B1E;

constexpr double kLatentCenter = 70.0;
constexpr double kLatentScale = 15.0;

enum class FeatureKind { linear, tanh_sat, mixed, quadratic };

struct FeatureLoading {
  FeatureKind kind = FeatureKind::linear;
  double base = 0.0;
  double slope = 0.0;

  double eval(double z) const {
    switch (kind) {
      case FeatureKind::linear:
        return base + slope * z;
      case FeatureKind::tanh_sat:
        return base + slope * std::tanh(z);
      case FeatureKind::mixed:
        return base + slope * z + 0.3 * slope * (z * z - 1.0);
      case FeatureKind::quadratic:
        return base + slope * 0.5 * (z * z - 1.0);
    }
    return base;
  }
};

double sigmoid(double x) { return 1.0 / (1.0 + std::exp(-x)); }

double truncated_normal(Rng& rng, double mean, double sd, double lo,
                        double hi) {
  for (int tries = 0; tries < 200; ++tries) {
    const double v = rng.normal(mean, sd);
    if (v >= lo && v <= hi) return v;
  }
  return std::clamp(mean, lo, hi);
}

}  // namespace

std::vector<int> Cohort::center_ids() const {
  std::vector<int> ids;
  for (const auto& s : subjects) ids.push_back(s.center_id);
  std::sort(ids.begin(), ids.end());
  ids.erase(std::unique(ids.begin(), ids.end()), ids.end());
  return ids;
}

std::vector<std::size_t> Cohort::center_indices(int center_id) const {
  std::vector<std::size_t> idx;
  for (std::size_t i = 0; i < subjects.size(); ++i)
    if (subjects[i].center_id == center_id) idx.push_back(i);
  return idx;
}

double Cohort::center_mean_age(int center_id) const {
  double sum = 0.0;
  std::size_t n = 0;
  for (const auto& s : subjects)
    if (s.center_id == center_id) {
      sum += s.age;
      ++n;
    }
  if (n == 0) throw ConfigError("no subjects in center " + std::to_string(center_id));
  return sum / static_cast<double>(n);
}

int Cohort::largest_center() const {
  if (subjects.empty()) throw ConfigError("empty cohort");
  std::map<int, std::size_t> counts;
  for (const auto& s : subjects) ++counts[s.center_id];
  int best = counts.begin()->first;
  std::size_t best_n = counts.begin()->second;
  for (const auto& [id, n] : counts)
    if (n > best_n) {
      best = id;
      best_n = n;
    }
  return best;
}

void CohortSpec::validate() const {
  if (n_centers < 1) throw ConfigError("n_centers must be >= 1");
  if (subjects_per_center.size() != static_cast<std::size_t>(n_centers))
    throw ConfigError("subjects_per_center must list one count per center");
  for (int n : subjects_per_center)
    if (n < 1) throw ConfigError("each center needs >= 1 subject");
  if (!age_distribution.empty() &&
      age_distribution.size() != 1 &&
      age_distribution.size() != static_cast<std::size_t>(n_centers))
    throw ConfigError("age_distribution must have size 0, 1 or n_centers");
  if (volume_features < 1) throw ConfigError("volume_features must be >= 1");
  if (radiomics_features < 0) throw ConfigError("radiomics_features must be >= 0");
  if (site_scale_sigma < 0 || site_shift_sigma < 0)
    throw ConfigError("site-effect sigmas must be >= 0");
  if (latent_noise_sd < 0) throw ConfigError("latent_noise_sd must be >= 0");
  for (double p : {prevalence.sex, prevalence.htn, prevalence.dm, prevalence.af,
                   prevalence.smk, prevalence.hcl, prevalence.ivt,
                   prevalence.reca})
    if (p < 0.0 || p > 1.0) throw ConfigError("prevalence outside [0,1]");
}

std::size_t CohortSpec::total_subjects() const {
  return static_cast<std::size_t>(
      std::accumulate(subjects_per_center.begin(), subjects_per_center.end(), 0));
}

Cohort generate_cohort(const CohortSpec& spec) {
  spec.validate();
  const int n_feat = spec.volume_features + spec.radiomics_features;

  // Fixed per-seed feature map. Volume-like features live on the scale of
  // ICV fractions (structure volume / intracranial volume), radiomics-like
  // features on an arbitrary O(1) scale that min-max normalization absorbs.
  // Feature 0 keeps a pinned positive linear loading so there is always a
  // primary aging marker.
  std::vector<FeatureLoading> loadings(n_feat);
  {
    Rng rng(mix_seed(spec.seed, kLoadingStream));
    for (int j = 0; j < n_feat; ++j) {
      FeatureLoading& L = loadings[j];
      const bool volume = j < spec.volume_features;
      const double sign = rng.bernoulli(0.5) ? 1.0 : -1.0;
      if (volume) {
        L.kind = FeatureKind::linear;
        L.base = rng.uniform(0.15, 0.45);
        L.slope = sign * rng.uniform(0.03, 0.12);
      } else {
        L.base = rng.uniform(1.0, 3.0);
        L.slope = sign * rng.uniform(0.4, 1.2);
        switch ((j - spec.volume_features) % 4) {
          case 0: L.kind = FeatureKind::linear; break;
          case 1: L.kind = FeatureKind::tanh_sat; break;
          case 2: L.kind = FeatureKind::mixed; break;
          default: L.kind = FeatureKind::quadratic; break;
        }
      }
    }
    loadings[0].kind = FeatureKind::linear;
    loadings[0].slope = kPrimaryFeatureSlope;
  }

  // Per-center affine site effects, drawn up front. The log-scale splits
  // into a center-common component (scanner-wide calibration, which no
  // amount of feature averaging removes) and independent per-feature jitter;
  // each marginal stays logNormal(0, site_scale_sigma).
  std::vector<std::vector<double>> site_scale(spec.n_centers),
      site_shift(spec.n_centers);
  {
    Rng rng(mix_seed(spec.seed, kSiteStream));
    const double sigma_common = spec.site_scale_sigma * std::sqrt(0.5);
    const double sigma_feature = spec.site_scale_sigma * std::sqrt(0.5);
    for (int c = 0; c < spec.n_centers; ++c) {
      site_scale[c].resize(n_feat);
      site_shift[c].resize(n_feat);
      const double common = rng.normal(0.0, sigma_common);
      for (int j = 0; j < n_feat; ++j) {
        site_scale[c][j] = std::exp(common + rng.normal(0.0, sigma_feature));
        site_shift[c][j] =
            rng.normal(0.0, spec.site_shift_sigma * std::fabs(loadings[j].slope));
      }
    }
  }

  Cohort cohort;
  cohort.feature_names.reserve(n_feat);
  for (int j = 0; j < n_feat; ++j) {
    char buf[16];
    std::snprintf(buf, sizeof(buf), "f%03d", j);
    cohort.feature_names.emplace_back(buf);
  }

  Rng rng(mix_seed(spec.seed, kSubjectStream));
  long subject_id = 1;
  for (int c = 0; c < spec.n_centers; ++c) {
    CenterAgeModel age_model;
    if (spec.age_distribution.size() == 1)
      age_model = spec.age_distribution.front();
    else if (!spec.age_distribution.empty())
      age_model = spec.age_distribution[c];

    for (int i = 0; i < spec.subjects_per_center[c]; ++i) {
      SubjectRecord s;
      s.subject_id = subject_id++;
      s.center_id = c + 1;
      s.age = truncated_normal(rng, age_model.mean, age_model.sd, 18.0, 100.0);
      s.sex = rng.bernoulli(spec.prevalence.sex) ? 1 : 0;
      s.htn = rng.bernoulli(spec.prevalence.htn) ? 1 : 0;
      s.dm = rng.bernoulli(spec.prevalence.dm) ? 1 : 0;
      s.af = rng.bernoulli(spec.prevalence.af) ? 1 : 0;
      s.smk = rng.bernoulli(spec.prevalence.smk) ? 1 : 0;
      s.hcl = rng.bernoulli(spec.prevalence.hcl) ? 1 : 0;
      s.nihss = static_cast<int>(std::lround(
          truncated_normal(rng, spec.nihss_mean, spec.nihss_sd, 0.0, 42.0)));
      s.p2p = truncated_normal(rng, spec.p2p_mean, spec.p2p_sd, 10.0, 600.0);
      s.ivt = rng.bernoulli(spec.prevalence.ivt) ? 1 : 0;
      s.reca = rng.bernoulli(spec.prevalence.reca) ? 1 : 0;

      const double latent = s.age + spec.dm_feature_offset * s.dm +
                            rng.normal(0.0, spec.latent_noise_sd);
      const double z = (latent - kLatentCenter) / kLatentScale;
      const double icv =
          std::clamp(rng.normal(1.0, 0.08), 0.7, 1.3);  // normalized head size

      s.features.resize(n_feat);
      for (int j = 0; j < n_feat; ++j) {
        const double g = loadings[j].eval(z);
        if (j < spec.volume_features) {
          // Head size enters raw volumes multiplicatively and the ICV
          // normalization removes it exactly, so only the additive site
          // shift keeps a 1/ICV footprint after renormalization.
          s.features[j] = site_scale[c][j] * g + site_shift[c][j] / icv;
        } else {
          s.features[j] = site_scale[c][j] * g + site_shift[c][j];
        }
      }

      const auto& om = spec.outcome_model;
      const double logit = om.intercept + om.age * (s.age - 70.0) +
                           om.latent_dev * (latent - s.age) +
                           om.nihss * (s.nihss - spec.nihss_mean) +
                           om.p2p * (s.p2p - spec.p2p_mean) + om.ivt * s.ivt +
                           om.reca * s.reca + om.sex * s.sex;
      const bool good = rng.bernoulli(sigmoid(logit));
      const double u = rng.uniform01();
      if (good)
        s.mrs_3m = u < 0.20 ? 0 : (u < 0.55 ? 1 : 2);
      else
        s.mrs_3m = u < 0.40 ? 3 : (u < 0.70 ? 4 : (u < 0.85 ? 5 : 6));

      cohort.subjects.push_back(std::move(s));
    }
  }
  return cohort;
}

NormStats fit_minmax(std::span<const std::vector<double>> train_rows) {
  if (train_rows.empty()) throw InsufficientDataError("empty normalization fit");
  const std::size_t d = train_rows.front().size();
  NormStats stats;
  stats.mins.assign(d, std::numeric_limits<double>::infinity());
  stats.maxs.assign(d, -std::numeric_limits<double>::infinity());
  for (const auto& row : train_rows) {
    if (row.size() != d) throw ShapeError("ragged rows in normalization fit");
    for (std::size_t j = 0; j < d; ++j) {
      stats.mins[j] = std::min(stats.mins[j], row[j]);
      stats.maxs[j] = std::max(stats.maxs[j], row[j]);
    }
  }
  return stats;
}

std::vector<double> apply_minmax(const NormStats& stats,
                                 std::span<const double> features) {
  if (features.size() != stats.mins.size())
    throw ShapeError("feature length does not match normalization stats");
  std::vector<double> out(features.size());
  for (std::size_t j = 0; j < features.size(); ++j) {
    const double range = stats.maxs[j] - stats.mins[j];
    out[j] = range > 0.0 ? (features[j] - stats.mins[j]) / range : 0.0;
  }
  return out;
}

int FoldAssignment::fold(long subject_id) const {
  const auto it = fold_of.find(subject_id);
  if (it == fold_of.end())
    throw ConfigError("subject " + std::to_string(subject_id) +
                      " has no fold assignment");
  return it->second;
}

FoldAssignment stratified_center_kfold(const Cohort& cohort, int k,
                                       std::uint64_t seed) {
  if (k < 2) throw ConfigError("fold count k must be >= 2");
  if (cohort.subjects.empty()) throw InsufficientDataError("empty cohort");

  FoldAssignment assignment;
  assignment.k = k;
  for (int center : cohort.center_ids()) {
    auto idx = cohort.center_indices(center);
    Rng rng(mix_seed(seed, static_cast<std::uint64_t>(center)));
    rng.shuffle(idx);
    for (std::size_t i = 0; i < idx.size(); ++i)
      assignment.fold_of[cohort.subjects[idx[i]].subject_id] =
          static_cast<int>(i % static_cast<std::size_t>(k));
  }
  return assignment;
}

}  // namespace fedage::cohort
