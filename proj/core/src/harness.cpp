#include "fedage/harness.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numeric>
#include <set>
#include <sstream>

#include <json.hpp>

#include "fedage/error.hpp"
#include "fedage/rng.hpp"

namespace fedage::harness {

namespace {
constexpr std::uint64_t kCohortStream = 0xC0C0;
constexpr std::uint64_t kFoldStream = 0xF01D;
constexpr std::uint64_t kCorrectionStream = 0xC0BB;
constexpr std::uint64_t kTrainStream = 0x7BA1;
constexpr std::uint64_t kClientStream = 0xC11E;
}  // namespace

std::string to_string(ModelFamily family) {
  switch (family) {
    case ModelFamily::vol_simple: return "vol_simple";
    case ModelFamily::vol_augmented: return "vol_augmented";
    case ModelFamily::radiomics_like: return "radiomics_like";
    case ModelFamily::feedforward: return "feedforward";
  }
  throw ConfigError("unknown model family");
}

std::string to_string(Topology topology) {
  switch (topology) {
    case Topology::centralized: return "centralized";
    case Topology::federated: return "federated";
    case Topology::single_site: return "single_site";
  }
  throw ConfigError("unknown topology");
}

ModelFamily parse_family(const std::string& name) {
  if (name == "vol_simple") return ModelFamily::vol_simple;
  if (name == "vol_augmented") return ModelFamily::vol_augmented;
  if (name == "radiomics_like") return ModelFamily::radiomics_like;
  if (name == "feedforward") return ModelFamily::feedforward;
  throw ConfigError("unknown model family '" + name + "'");
}

Topology parse_topology(const std::string& name) {
  if (name == "centralized") return Topology::centralized;
  if (name == "federated") return Topology::federated;
  if (name == "single_site") return Topology::single_site;
  throw ConfigError("unknown topology '" + name + "'");
}

bool RunKey::operator<(const RunKey& other) const {
  if (family != other.family) return family < other.family;
  if (topology != other.topology) return topology < other.topology;
  return seed < other.seed;
}

void ExperimentConfig::validate() const {
  if (!generate.has_value() && cohort_csv.empty())
    throw ConfigError("config needs a cohort source (generate spec or CSV)");
  if (generate.has_value() && !cohort_csv.empty())
    throw ConfigError("config must give exactly one cohort source");
  if (generate) generate->validate();
  if (families.empty()) throw ConfigError("no model families selected");
  if (topologies.empty()) throw ConfigError("no topologies selected");
  if (seeds.empty()) throw ConfigError("no seeds listed");
  if (cv_folds_test < 2) throw ConfigError("cv_folds_test must be >= 2");
  if (cv_folds_correction < 2)
    throw ConfigError("cv_folds_correction must be >= 2");
  if (epochs < 1 || rounds < 1) throw ConfigError("budgets must be >= 1");
  if (batch_size < 1) throw ConfigError("batch_size must be >= 1");
  if (l2_penalty < 0.0) throw ConfigError("l2_penalty must be >= 0");
  if (tune_l2 && l2_grid.empty()) throw ConfigError("tune_l2 needs a grid");
  if (out_dir.empty()) throw ConfigError("out_dir must not be empty");
}

int epoch_budget(ModelFamily, const ExperimentConfig& cfg) {
  return cfg.paper_budgets ? 1000 : cfg.epochs;
}

int round_budget(ModelFamily family, const ExperimentConfig& cfg) {
  if (cfg.paper_budgets)
    return family == ModelFamily::feedforward ? 500 : 1000;
  return cfg.rounds;
}

model::LrSchedule family_schedule(ModelFamily family, Topology topology,
                                  int horizon) {
  using model::LrSchedule;
  const bool fed = topology == Topology::federated;
  switch (family) {
    case ModelFamily::vol_simple:
      return fed ? LrSchedule::linear_decay(0.1, 0.01, horizon)
                 : LrSchedule::inverse_scaling(0.5, 0.25, horizon);
    case ModelFamily::vol_augmented:
      return fed ? LrSchedule::linear_decay(0.02, 0.002, horizon)
                 : LrSchedule::inverse_scaling(0.07, 0.25, horizon);
    case ModelFamily::radiomics_like:
      return fed ? LrSchedule::linear_decay(0.01, 0.001, horizon)
                 : LrSchedule::inverse_scaling(0.004, 0.25, horizon);
    case ModelFamily::feedforward:
      return fed ? LrSchedule::linear_decay(0.0005, 0.00005, horizon)
                 : LrSchedule::linear_decay(0.001, 0.0001, horizon);
  }
  throw ConfigError("unknown model family");
}

model::Optimizer family_optimizer(ModelFamily family, Topology topology) {
  if (family == ModelFamily::feedforward && topology != Topology::federated)
    return model::Optimizer::adam;
  return model::Optimizer::sgd;
}

FamilyFeatures family_features(const cohort::Cohort& cohort, ModelFamily family,
                               int volume_features) {
  const int total = static_cast<int>(cohort.feature_dim());
  if (volume_features < 1 || volume_features > total)
    throw ConfigError("volume feature block outside cohort feature range");
  const int radiomics = total - volume_features;

  FamilyFeatures out;
  out.rows.reserve(cohort.size());
  switch (family) {
    case ModelFamily::vol_simple:
    case ModelFamily::feedforward:
      for (const auto& s : cohort.subjects)
        out.rows.emplace_back(s.features.begin(),
                              s.features.begin() + volume_features);
      out.needs_minmax = family == ModelFamily::feedforward;
      break;
    case ModelFamily::vol_augmented:
      for (const auto& s : cohort.subjects)
        out.rows.push_back(model::expand_polynomial_values(
            std::span<const double>(s.features.data(),
                                    static_cast<std::size_t>(volume_features)),
            2));
      out.needs_minmax = false;
      break;
    case ModelFamily::radiomics_like:
      if (radiomics < 1)
        throw ConfigError("cohort has no radiomics-like feature block");
      for (const auto& s : cohort.subjects)
        out.rows.emplace_back(s.features.begin() + volume_features,
                              s.features.end());
      out.needs_minmax = true;
      break;
  }
  return out;
}

namespace {

struct Unit {
  model::RegressionData train;
  std::vector<int> train_centers;
  std::vector<std::size_t> predict_idx;            // cohort indices
  std::vector<std::vector<double>> predict_rows;   // normalized like train
};

Unit build_unit(const cohort::Cohort& cohort, const FamilyFeatures& feats,
                const std::vector<std::size_t>& train_idx,
                const std::vector<std::size_t>& predict_idx) {
  Unit unit;
  unit.predict_idx = predict_idx;
  for (std::size_t i : train_idx) {
    unit.train.x.push_back(feats.rows[i]);
    unit.train.y.push_back(cohort.subjects[i].age);
    unit.train_centers.push_back(cohort.subjects[i].center_id);
  }
  if (feats.needs_minmax) {
    const auto stats = cohort::fit_minmax(unit.train.x);
    for (auto& row : unit.train.x) row = cohort::apply_minmax(stats, row);
    for (std::size_t i : predict_idx)
      unit.predict_rows.push_back(cohort::apply_minmax(stats, feats.rows[i]));
  } else {
    for (std::size_t i : predict_idx) unit.predict_rows.push_back(feats.rows[i]);
  }
  return unit;
}

model::TrainConfig base_train_config(ModelFamily family, Topology topology,
                                     const ExperimentConfig& cfg,
                                     std::uint64_t seed, std::uint64_t fold,
                                     double intercept_init, double lambda) {
  model::TrainConfig tc;
  tc.batch_size = cfg.batch_size;
  tc.l2_penalty = lambda;
  tc.seed = mix_seed(seed, kTrainStream, fold);
  tc.intercept_init = intercept_init;
  if (topology == Topology::federated) {
    const int rounds = round_budget(family, cfg);
    tc.epochs = 1;
    tc.schedule = family_schedule(family, topology, rounds);
    tc.optimizer = model::Optimizer::sgd;
  } else {
    tc.epochs = epoch_budget(family, cfg);
    tc.schedule = family_schedule(family, topology, tc.epochs);
    tc.optimizer = family_optimizer(family, topology);
  }
  return tc;
}

model::ModelParams train_local_unit(const Unit& unit, ModelFamily family,
                                    const model::TrainConfig& tc) {
  if (family == ModelFamily::feedforward)
    return model::fit_feedforward(unit.train, tc);
  return model::fit_linear_sgd(unit.train, tc);
}

model::ModelParams train_federated_unit(const Unit& unit, ModelFamily family,
                                        const ExperimentConfig& cfg,
                                        const model::TrainConfig& tc,
                                        std::uint64_t seed, std::uint64_t fold) {
  fed::FederationPlan plan;
  plan.rounds = round_budget(family, cfg);
  plan.train_cfg = tc;
  plan.model_kind = family == ModelFamily::feedforward
                        ? fed::ModelKind::feedforward
                        : fed::ModelKind::linear;

  std::set<int> centers(unit.train_centers.begin(), unit.train_centers.end());
  for (int center : centers) {
    fed::ClientSite client;
    client.client_id = center;
    client.local_seed =
        mix_seed(seed, kClientStream, fold * 1000 + static_cast<std::uint64_t>(center));
    for (std::size_t i = 0; i < unit.train.size(); ++i)
      if (unit.train_centers[i] == center) {
        client.local_data.x.push_back(unit.train.x[i]);
        client.local_data.y.push_back(unit.train.y[i]);
      }
    plan.clients.push_back(std::move(client));
  }
  return fed::run_federation(plan).params;
}

double mean_age_of(const cohort::Cohort& cohort,
                   const std::vector<std::size_t>& idx) {
  double sum = 0.0;
  for (std::size_t i : idx) sum += cohort.subjects[i].age;
  return sum / static_cast<double>(idx.size());
}

}  // namespace

std::vector<brainage::PredictionRecord> run_training_protocol(
    const cohort::Cohort& cohort, ModelFamily family, Topology topology,
    const ExperimentConfig& cfg, std::uint64_t seed) {
  const int volume_features =
      cfg.generate ? cfg.generate->volume_features : cfg.volume_features;
  const int ref = cfg.reference_center.value_or(cohort.largest_center());

  const auto ref_idx = cohort.center_indices(ref);
  if (ref_idx.empty())
    throw ConfigError("reference center " + std::to_string(ref) +
                      " has no subjects");
  std::vector<std::size_t> test_idx;
  for (std::size_t i = 0; i < cohort.size(); ++i)
    if (cohort.subjects[i].center_id != ref) test_idx.push_back(i);
  if (test_idx.empty())
    throw ConfigError("no test subjects outside the reference center");

  const FamilyFeatures feats = family_features(cohort, family, volume_features);
  const double ref_mean_age = cohort.center_mean_age(ref);

  // L2 selection: centralized and single-site tune on their own training
  // data; the federated model adopts the single-site penalty. The
  // feedforward family keeps the configured penalty.
  double lambda_single = cfg.l2_penalty;
  const bool tune = cfg.tune_l2 && family != ModelFamily::feedforward;
  if (tune) {
    Unit ref_unit = build_unit(cohort, feats, ref_idx, {});
    const auto tc = base_train_config(family, Topology::single_site, cfg, seed,
                                      0xEE, ref_mean_age, cfg.l2_penalty);
    lambda_single = model::tune_l2_cv(ref_unit.train, cfg.l2_grid, 5, tc);
  }

  std::vector<brainage::PredictionRecord> records;
  auto run_unit = [&](const std::vector<std::size_t>& train_idx,
                      const std::vector<std::size_t>& predict_idx,
                      std::uint64_t fold) {
    const double intercept = topology == Topology::centralized
                                 ? mean_age_of(cohort, train_idx)
                                 : ref_mean_age;
    double lambda = lambda_single;
    if (tune && topology == Topology::centralized) {
      Unit unit = build_unit(cohort, feats, train_idx, {});
      const auto tc = base_train_config(family, topology, cfg, seed,
                                        0xEE00 + fold, intercept, cfg.l2_penalty);
      lambda = model::tune_l2_cv(unit.train, cfg.l2_grid, 5, tc);
    }

    Unit unit = build_unit(cohort, feats, train_idx, predict_idx);
    const auto tc = base_train_config(family, topology, cfg, seed, fold,
                                      intercept, lambda);
    const model::ModelParams params =
        topology == Topology::federated
            ? train_federated_unit(unit, family, cfg, tc, seed, fold)
            : train_local_unit(unit, family, tc);

    for (std::size_t k = 0; k < unit.predict_idx.size(); ++k) {
      const auto& s = cohort.subjects[unit.predict_idx[k]];
      records.push_back(brainage::make_prediction(
          s.subject_id, s.age, model::predict(params, unit.predict_rows[k])));
    }
  };

  if (topology == Topology::single_site) {
    run_unit(ref_idx, test_idx, 0);
  } else {
    // Center-stratified folds over the test set only.
    cohort::Cohort testset;
    for (std::size_t i : test_idx) {
      cohort::SubjectRecord shallow;
      shallow.subject_id = cohort.subjects[i].subject_id;
      shallow.center_id = cohort.subjects[i].center_id;
      testset.subjects.push_back(std::move(shallow));
    }
    const auto folds = cohort::stratified_center_kfold(
        testset, cfg.cv_folds_test, mix_seed(seed, kFoldStream));

    for (int f = 0; f < cfg.cv_folds_test; ++f) {
      std::vector<std::size_t> train_idx(ref_idx), predict_idx;
      for (std::size_t i : test_idx) {
        if (folds.fold(cohort.subjects[i].subject_id) == f)
          predict_idx.push_back(i);
        else
          train_idx.push_back(i);
      }
      run_unit(train_idx, predict_idx, static_cast<std::uint64_t>(f));
    }
  }

  std::sort(records.begin(), records.end(),
            [](const auto& a, const auto& b) {
              return a.subject_id < b.subject_id;
            });
  if (records.size() != test_idx.size())
    throw Error("internal: prediction count does not match test set");
  return records;
}

void correct_records(std::vector<brainage::PredictionRecord>& records,
                     const ExperimentConfig& cfg, std::uint64_t seed) {
  brainage::correct_brainage_cv(records, cfg.cv_folds_correction,
                                mix_seed(seed, kCorrectionStream));
}

fed::FederationPlan single_federation_plan(const cohort::Cohort& cohort,
                                           ModelFamily family,
                                           const ExperimentConfig& cfg,
                                           std::uint64_t seed) {
  const int volume_features =
      cfg.generate ? cfg.generate->volume_features : cfg.volume_features;
  const FamilyFeatures feats = family_features(cohort, family, volume_features);
  const int ref = cfg.reference_center.value_or(cohort.largest_center());

  std::vector<std::size_t> all_idx(cohort.size());
  std::iota(all_idx.begin(), all_idx.end(), std::size_t{0});
  Unit unit = build_unit(cohort, feats, all_idx, {});

  const auto tc = base_train_config(family, Topology::federated, cfg, seed, 0xF,
                                    cohort.center_mean_age(ref), cfg.l2_penalty);

  fed::FederationPlan plan;
  plan.rounds = round_budget(family, cfg);
  plan.train_cfg = tc;
  plan.model_kind = family == ModelFamily::feedforward
                        ? fed::ModelKind::feedforward
                        : fed::ModelKind::linear;
  std::set<int> centers(unit.train_centers.begin(), unit.train_centers.end());
  for (int center : centers) {
    fed::ClientSite client;
    client.client_id = center;
    client.local_seed =
        mix_seed(seed, kClientStream, 0xF000 + static_cast<std::uint64_t>(center));
    for (std::size_t i = 0; i < unit.train.size(); ++i)
      if (unit.train_centers[i] == center) {
        client.local_data.x.push_back(unit.train.x[i]);
        client.local_data.y.push_back(unit.train.y[i]);
      }
    plan.clients.push_back(std::move(client));
  }
  return plan;
}

SingleFederationResult run_single_federation(const cohort::Cohort& cohort,
                                             ModelFamily family,
                                             const ExperimentConfig& cfg,
                                             std::uint64_t seed,
                                             fed::Transport* transport) {
  const auto plan = single_federation_plan(cohort, family, cfg, seed);
  SingleFederationResult result;
  result.roster = plan.roster();
  const auto fed_result =
      transport ? fed::run_federation(plan, *transport) : fed::run_federation(plan);
  result.params = fed_result.params;
  result.history = fed_result.history;
  return result;
}

// --- analyses ---------------------------------------------------------------

namespace {

double median_of(std::vector<double> v) {
  if (v.empty()) return 0.0;
  std::sort(v.begin(), v.end());
  const std::size_t n = v.size();
  return n % 2 ? v[n / 2] : 0.5 * (v[n / 2 - 1] + v[n / 2]);
}

const cohort::SubjectRecord& subject_by_id(
    const cohort::Cohort& cohort,
    const std::map<long, std::size_t>& index, long id) {
  const auto it = index.find(id);
  if (it == index.end())
    throw ConfigError("prediction for unknown subject " + std::to_string(id));
  return cohort.subjects[it->second];
}

std::map<long, std::size_t> subject_index(const cohort::Cohort& cohort) {
  std::map<long, std::size_t> index;
  for (std::size_t i = 0; i < cohort.size(); ++i)
    index[cohort.subjects[i].subject_id] = i;
  return index;
}

int phenotype_flag(const cohort::SubjectRecord& s, const std::string& name) {
  if (name == "sex") return s.sex;
  if (name == "htn") return s.htn;
  if (name == "dm") return s.dm;
  if (name == "af") return s.af;
  if (name == "smk") return s.smk;
  if (name == "hcl") return s.hcl;
  throw ConfigError("unknown phenotype " + name);
}

const std::vector<std::string> kPhenotypes = {"sex", "htn", "dm",
                                              "af",  "smk", "hcl"};

}  // namespace

std::vector<ErrorSummaryRow> error_summary(const PredictionSet& runs) {
  std::vector<ErrorSummaryRow> rows;
  for (const auto& [key, records] : runs) {
    ErrorSummaryRow row;
    row.key = key;
    row.n = records.size();
    double sum = 0.0;
    for (const auto& r : records) sum += std::fabs(r.pad);
    row.mean_abs_err = sum / static_cast<double>(records.size());
    double ss = 0.0;
    for (const auto& r : records) {
      const double d = std::fabs(r.pad) - row.mean_abs_err;
      ss += d * d;
    }
    row.sd_abs_err =
        records.size() > 1 ? std::sqrt(ss / static_cast<double>(records.size() - 1))
                           : 0.0;
    rows.push_back(row);
  }
  return rows;
}

std::vector<ErrorComparisonRow> compare_errors(const PredictionSet& runs) {
  // Collect (family, seed) -> topology -> records.
  std::map<std::pair<ModelFamily, std::uint64_t>,
           std::map<Topology, const std::vector<brainage::PredictionRecord>*>>
      grid;
  for (const auto& [key, records] : runs)
    grid[{key.family, key.seed}][key.topology] = &records;

  const std::vector<std::pair<Topology, Topology>> pairs = {
      {Topology::centralized, Topology::federated},
      {Topology::centralized, Topology::single_site},
      {Topology::federated, Topology::single_site}};

  std::vector<ErrorComparisonRow> rows;
  std::map<std::pair<ModelFamily, std::pair<Topology, Topology>>,
           std::vector<double>>
      pooled;

  for (const auto& [fs, by_topo] : grid) {
    for (const auto& [ta, tb] : pairs) {
      const auto ia = by_topo.find(ta), ib = by_topo.find(tb);
      if (ia == by_topo.end() || ib == by_topo.end()) continue;
      const auto& ra = *ia->second;
      const auto& rb = *ib->second;
      if (ra.size() != rb.size())
        throw ConfigError("pairing error: prediction sets differ in size");
      std::vector<double> diffs;
      diffs.reserve(ra.size());
      for (std::size_t i = 0; i < ra.size(); ++i) {
        if (ra[i].subject_id != rb[i].subject_id)
          throw ConfigError("pairing error: subject sets differ");
        diffs.push_back(std::fabs(ra[i].pad) - std::fabs(rb[i].pad));
      }
      ErrorComparisonRow row;
      row.family = fs.first;
      row.topo_a = ta;
      row.topo_b = tb;
      row.seed_label = std::to_string(fs.second);
      row.n_pairs = diffs.size();
      try {
        const auto res = stats::wilcoxon_signed_rank(diffs);
        row.statistic = res.statistic;
        row.p_value = res.p_value;
      } catch (const DegenerateTestError&) {
        row.note = "no difference";
        row.p_value = 1.0;
      }
      rows.push_back(row);
      auto& pool = pooled[{fs.first, {ta, tb}}];
      pool.insert(pool.end(), diffs.begin(), diffs.end());
    }
  }

  for (const auto& [key, diffs] : pooled) {
    ErrorComparisonRow row;
    row.family = key.first;
    row.topo_a = key.second.first;
    row.topo_b = key.second.second;
    row.seed_label = "all";
    row.n_pairs = diffs.size();
    try {
      const auto res = stats::wilcoxon_signed_rank(diffs);
      row.statistic = res.statistic;
      row.p_value = res.p_value;
    } catch (const DegenerateTestError&) {
      row.note = "no difference";
      row.p_value = 1.0;
    }
    rows.push_back(row);
  }
  return rows;
}

std::vector<GroupTestRow> phenotype_analysis(const PredictionSet& runs,
                                             const cohort::Cohort& cohort,
                                             std::uint64_t seed) {
  const auto index = subject_index(cohort);
  std::vector<GroupTestRow> rows;
  for (const auto& [key, records] : runs) {
    if (key.seed != seed) continue;
    for (const auto& phenotype : kPhenotypes) {
      for (const std::string& quantity : {std::string("brainage"), std::string("age")}) {
        GroupTestRow row;
        row.key = key;
        row.variable = phenotype;
        row.quantity = quantity;
        std::vector<double> with, without;
        for (const auto& r : records) {
          if (quantity == "brainage" && !r.corrected)
            throw ConfigError("BrainAGE not filled; run the evaluate stage");
          const auto& s = subject_by_id(cohort, index, r.subject_id);
          const double value = quantity == "brainage" ? r.brainage : r.actual_age;
          (phenotype_flag(s, phenotype) ? with : without).push_back(value);
        }
        row.n_with = with.size();
        row.n_without = without.size();
        if (with.empty() || without.empty()) {
          row.note = "skipped: empty group";
          rows.push_back(row);
          continue;
        }
        row.median_with = median_of(with);
        row.median_without = median_of(without);
        const auto res = stats::mann_whitney_u(with, without);
        row.statistic = res.statistic;
        row.p_value = res.p_value;
        row.stars = stats::significance_stars(res.p_value);
        rows.push_back(row);
      }
    }
  }
  return rows;
}

OutcomeAnalysisResult outcome_analysis(const PredictionSet& runs,
                                       const cohort::Cohort& cohort,
                                       std::uint64_t seed) {
  const auto index = subject_index(cohort);
  OutcomeAnalysisResult result;

  const std::vector<std::string> predictor_names = {
      "intercept", "brainage", "age", "sex", "htn",  "dm", "af",
      "smk",       "hcl",      "nihss", "p2p", "ivt", "reca"};

  for (const auto& [key, records] : runs) {
    if (key.seed != seed) continue;

    std::vector<double> good_brainage, poor_brainage;
    std::vector<std::vector<double>> design;
    std::vector<int> outcomes;
    std::map<std::string, std::array<std::array<double, 2>, 2>> tables;
    for (const auto& phenotype : kPhenotypes) tables[phenotype] = {};

    for (const auto& r : records) {
      if (!r.corrected)
        throw ConfigError("BrainAGE not filled; run the evaluate stage");
      const auto& s = subject_by_id(cohort, index, r.subject_id);
      const bool good = s.mrs_3m <= 2;
      (good ? good_brainage : poor_brainage).push_back(r.brainage);
      design.push_back({1.0, r.brainage, s.age,
                        static_cast<double>(s.sex), static_cast<double>(s.htn),
                        static_cast<double>(s.dm), static_cast<double>(s.af),
                        static_cast<double>(s.smk), static_cast<double>(s.hcl),
                        static_cast<double>(s.nihss), s.p2p,
                        static_cast<double>(s.ivt),
                        static_cast<double>(s.reca)});
      outcomes.push_back(good ? 1 : 0);
      for (const auto& phenotype : kPhenotypes)
        tables[phenotype][phenotype_flag(s, phenotype)][good ? 1 : 0] += 1.0;
    }

    {
      GroupTestRow row;
      row.key = key;
      row.variable = "good_outcome";
      row.quantity = "brainage";
      row.n_with = good_brainage.size();
      row.n_without = poor_brainage.size();
      if (good_brainage.empty() || poor_brainage.empty()) {
        row.note = "skipped: empty group";
      } else {
        row.median_with = median_of(good_brainage);
        row.median_without = median_of(poor_brainage);
        const auto res = stats::mann_whitney_u(good_brainage, poor_brainage);
        row.statistic = res.statistic;
        row.p_value = res.p_value;
        row.stars = stats::significance_stars(res.p_value);
      }
      result.brainage_by_outcome.push_back(row);
    }

    for (const auto& phenotype : kPhenotypes) {
      GroupTestRow row;
      row.key = key;
      row.variable = phenotype;
      row.quantity = "good_outcome";
      const auto& t = tables[phenotype];
      row.n_with = static_cast<std::size_t>(t[1][0] + t[1][1]);
      row.n_without = static_cast<std::size_t>(t[0][0] + t[0][1]);
      try {
        const auto res = stats::chi2_yates(t);
        row.statistic = res.statistic;
        row.p_value = res.p_value;
        row.stars = stats::significance_stars(res.p_value);
      } catch (const DegenerateTestError&) {
        row.note = "skipped: degenerate table";
      }
      result.phenotype_chi2.push_back(row);
    }

    for (const bool standardized : {false, true}) {
      stats::LogisticOptions opts;
      opts.standardize = standardized;
      opts.names = predictor_names;
      const auto fit = stats::logistic_fit(design, outcomes, opts);
      for (const auto& or_row : stats::odds_ratio_table(fit)) {
        OutcomeAnalysisResult::OrRow row;
        row.key = key;
        row.predictor = or_row.name;
        row.odds_ratio = or_row.odds_ratio;
        row.ci_lo = or_row.ci_lo;
        row.ci_hi = or_row.ci_hi;
        row.p = or_row.p;
        row.stars = or_row.stars;
        row.standardized = standardized;
        result.odds_ratios.push_back(row);
      }
    }
  }
  return result;
}

cohort::Cohort cohort_for_run(const ExperimentConfig& cfg, std::uint64_t seed) {
  if (!cfg.cohort_csv.empty()) return cohort::load_cohort_csv(cfg.cohort_csv);
  cohort::CohortSpec spec = *cfg.generate;
  spec.seed = mix_seed(spec.seed, mix_seed(seed, kCohortStream));
  return cohort::generate_cohort(spec);
}

std::string predictions_filename(const RunKey& key) {
  return "predictions_" + to_string(key.family) + "_" + to_string(key.topology) +
         "_seed" + std::to_string(key.seed) + ".csv";
}

// --- config JSON -------------------------------------------------------------

using nlohmann::json;

namespace {

template <class T, class Parse>
std::vector<T> parse_list(const json& j, const Parse& parse) {
  std::vector<T> out;
  if (j.is_array())
    for (const auto& e : j) out.push_back(parse(e));
  else
    out.push_back(parse(j));
  return out;
}

}  // namespace

ExperimentConfig ExperimentConfig::from_json(const std::string& json_text) {
  json j;
  try {
    j = json::parse(json_text);
  } catch (const json::parse_error& e) {
    throw ConfigError(std::string("experiment config JSON: ") + e.what());
  }

  ExperimentConfig cfg;
  if (j.contains("cohort")) {
    const auto& c = j.at("cohort");
    if (c.contains("generate"))
      cfg.generate = cohort::cohort_spec_from_json(c.at("generate").dump());
    if (c.contains("csv")) cfg.cohort_csv = c.at("csv").get<std::string>();
  }
  if (j.contains("volume_features"))
    cfg.volume_features = j.at("volume_features").get<int>();
  if (j.contains("families"))
    cfg.families = parse_list<ModelFamily>(j.at("families"), [](const json& e) {
      return parse_family(e.get<std::string>());
    });
  if (j.contains("configurations"))
    cfg.topologies =
        parse_list<Topology>(j.at("configurations"), [](const json& e) {
          return parse_topology(e.get<std::string>());
        });
  if (j.contains("seeds"))
    cfg.seeds = parse_list<std::uint64_t>(j.at("seeds"), [](const json& e) {
      return e.get<std::uint64_t>();
    });
  if (j.contains("reference_center"))
    cfg.reference_center = j.at("reference_center").get<int>();
  if (j.contains("cv_folds_test"))
    cfg.cv_folds_test = j.at("cv_folds_test").get<int>();
  if (j.contains("cv_folds_correction"))
    cfg.cv_folds_correction = j.at("cv_folds_correction").get<int>();
  if (j.contains("epochs")) cfg.epochs = j.at("epochs").get<int>();
  if (j.contains("rounds")) cfg.rounds = j.at("rounds").get<int>();
  if (j.contains("paper_budgets"))
    cfg.paper_budgets = j.at("paper_budgets").get<bool>();
  if (j.contains("batch_size")) cfg.batch_size = j.at("batch_size").get<int>();
  if (j.contains("l2_penalty")) cfg.l2_penalty = j.at("l2_penalty").get<double>();
  if (j.contains("tune_l2")) cfg.tune_l2 = j.at("tune_l2").get<bool>();
  if (j.contains("l2_grid"))
    cfg.l2_grid = j.at("l2_grid").get<std::vector<double>>();
  if (j.contains("out_dir")) cfg.out_dir = j.at("out_dir").get<std::string>();
  if (j.contains("tcp_timeout_seconds"))
    cfg.tcp_timeout_seconds = j.at("tcp_timeout_seconds").get<int>();
  cfg.validate();
  return cfg;
}

ExperimentConfig ExperimentConfig::from_json_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open config file " + path);
  std::stringstream buffer;
  buffer << in.rdbuf();
  return from_json(buffer.str());
}

std::string ExperimentConfig::to_json() const {
  json j;
  if (generate)
    j["cohort"] = {{"generate", json::parse(cohort::cohort_spec_to_json(*generate))}};
  else
    j["cohort"] = {{"csv", cohort_csv}};
  j["volume_features"] = volume_features;
  json fams = json::array();
  for (auto f : families) fams.push_back(to_string(f));
  j["families"] = fams;
  json topos = json::array();
  for (auto t : topologies) topos.push_back(to_string(t));
  j["configurations"] = topos;
  j["seeds"] = seeds;
  if (reference_center) j["reference_center"] = *reference_center;
  j["cv_folds_test"] = cv_folds_test;
  j["cv_folds_correction"] = cv_folds_correction;
  j["epochs"] = epochs;
  j["rounds"] = rounds;
  j["paper_budgets"] = paper_budgets;
  j["batch_size"] = batch_size;
  j["l2_penalty"] = l2_penalty;
  j["tune_l2"] = tune_l2;
  j["l2_grid"] = l2_grid;
  j["out_dir"] = out_dir;
  j["tcp_timeout_seconds"] = tcp_timeout_seconds;
  return j.dump(2);
}

}  // namespace fedage::harness
