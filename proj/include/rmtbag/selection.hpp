#pragma once

#include <algorithm>
#include <bit>
#include <chrono>
#include <cmath>
#include <cstdint>
#include <limits>
#include <map>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include <json.hpp>

#include "rmtbag/data.hpp"
#include "rmtbag/errors.hpp"
#include "rmtbag/estimation.hpp"
#include "rmtbag/lssvm.hpp"
#include "rmtbag/model.hpp"
#include "rmtbag/parallel.hpp"
#include "rmtbag/random.hpp"
#include "rmtbag/rmt.hpp"
#include "rmtbag/stats.hpp"
#include "rmtbag/version.hpp"

namespace rmtbag {

struct SearchGrid {
  std::vector<int> m_values;
  std::vector<double> lambda_values;

  static SearchGrid default_grid() { return log_grid(1, 50, 1e-4, 10.0, 40); }

  static SearchGrid log_grid(int m_min, int m_max, double lambda_min,
                             double lambda_max, int lambda_points) {
    if (m_min < 1 || m_max < m_min) throw ConfigError("invalid m range");
    if (!(lambda_min > 0.0) || !(lambda_max >= lambda_min))
      throw ConfigError("invalid lambda range");
    if (lambda_points < 1) throw ConfigError("lambda_points must be at least 1");
    SearchGrid g;
    for (int m = m_min; m <= m_max; ++m) g.m_values.push_back(m);
    if (lambda_points == 1 || lambda_max == lambda_min) {
      g.lambda_values.push_back(lambda_min);
      if (lambda_points > 1)
        throw ConfigError("degenerate lambda range needs lambda_points = 1");
    } else {
      double l0 = std::log(lambda_min), l1 = std::log(lambda_max);
      for (int j = 0; j < lambda_points; ++j)
        g.lambda_values.push_back(
            std::exp(l0 + (l1 - l0) * static_cast<double>(j) /
                              static_cast<double>(lambda_points - 1)));
    }
    g.validate();
    return g;
  }

  std::size_t size() const { return m_values.size() * lambda_values.size(); }

  void validate() const {
    if (m_values.empty() || lambda_values.empty()) throw ConfigError("empty search grid");
    for (std::size_t i = 0; i < m_values.size(); ++i) {
      if (m_values[i] < 1) throw ConfigError("grid m values must be >= 1");
      if (i > 0 && m_values[i] <= m_values[i - 1])
        throw ConfigError("grid m values must be strictly ascending");
    }
    for (std::size_t j = 0; j < lambda_values.size(); ++j) {
      if (!(lambda_values[j] > 0.0)) throw ConfigError("grid lambda values must be positive");
      if (j > 0 && lambda_values[j] <= lambda_values[j - 1])
        throw ConfigError("grid lambda values must be strictly ascending");
    }
  }
};

// Row-major over (m index, lambda index); absent cells are infeasible for the
// asymptotic formulas (subset ratio >= 1).
using ErrorMap = std::vector<std::optional<double>>;

// Predicted error at every grid cell. Cells with subset ratio >= 1 are left
// absent unless include_infeasible is set (the formulas remain evaluable
// there, but they are excluded from selection either way).
inline ErrorMap theoretical_error_map(const MixtureModel& model, Eigen::Index n_total,
                                      const SearchGrid& grid, unsigned jobs = 1,
                                      bool include_infeasible = false) {
  model.validate();
  grid.validate();
  const std::size_t rows = grid.m_values.size(), cols = grid.lambda_values.size();
  ErrorMap map(rows * cols);
  std::size_t feasible = 0;
  for (std::size_t i = 0; i < rows; ++i) {
    EnsembleConfig c;
    c.n_total = n_total;
    c.d = model.dim();
    c.m = grid.m_values[i];
    c.lambda = 1.0;
    if (c.subset_size() >= 2 && (include_infeasible || c.theory_feasible()))
      feasible += cols;
  }
  if (feasible == 0) throw ConfigError("every grid cell is infeasible for n_total");

  parallel_for(rows * cols, jobs, [&](std::size_t k) {
    std::size_t i = k / cols, j = k % cols;
    EnsembleConfig c;
    c.n_total = n_total;
    c.d = model.dim();
    c.m = grid.m_values[i];
    c.lambda = grid.lambda_values[j];
    if (c.subset_size() < 2 || (!include_infeasible && !c.theory_feasible())) return;
    map[k] = predict(model, c).error;
  });
  return map;
}

struct SelectedCell {
  int m = 0;
  double lambda = 0.0;
  double predicted_error = 0.0;
};

// Argmin over present cells; row-major scan with strict comparison implements
// the tie rule (smallest m, then smallest lambda).
inline SelectedCell argmin_cell(const ErrorMap& map, const SearchGrid& grid) {
  const std::size_t cols = grid.lambda_values.size();
  std::optional<std::size_t> best;
  for (std::size_t k = 0; k < map.size(); ++k) {
    if (!map[k]) continue;
    if (!best || *map[k] < *map[*best]) best = k;
  }
  if (!best) throw ConfigError("no feasible grid cell to select from");
  SelectedCell out;
  out.m = grid.m_values[*best / cols];
  out.lambda = grid.lambda_values[*best % cols];
  out.predicted_error = *map[*best];
  return out;
}

inline SelectedCell select_theoretical(const MixtureModel& model, Eigen::Index n_total,
                                       const SearchGrid& grid, unsigned jobs = 1) {
  return argmin_cell(theoretical_error_map(model, n_total, grid, jobs), grid);
}

struct CandidateStats {
  int m = 0;
  double lambda = 0.0;
  double error_mean = 0.0;
  double error_std = 0.0;
};

namespace detail {

// Shared evaluation loop of the empirical searches: per repetition, one
// stratified train/validation split (stream "splits", shared across search
// strategies so comparisons are paired), then every candidate trains on the
// train part (stream "partition", indexed by repetition and candidate) and is
// scored on the validation part.
inline std::vector<std::vector<double>> validation_errors(
    const Dataset& data, const std::vector<std::pair<int, double>>& candidates,
    int reps, double validation_fraction, std::uint64_t seed, unsigned jobs) {
  if (reps < 1) throw ConfigError("reps must be at least 1");
  std::vector<std::vector<double>> errors(candidates.size(),
                                          std::vector<double>(static_cast<std::size_t>(reps)));
  for (int r = 0; r < reps; ++r) {
    std::mt19937_64 split_rng = substream(seed, "splits", static_cast<std::uint64_t>(r));
    auto [train, valid] = stratified_split(data, validation_fraction, split_rng);
    parallel_for(candidates.size(), jobs, [&](std::size_t c) {
      EnsembleConfig cfg;
      cfg.n_total = train.size();
      cfg.d = train.dim();
      cfg.m = candidates[c].first;
      cfg.lambda = candidates[c].second;
      std::mt19937_64 part_rng = substream(
          seed, "partition",
          static_cast<std::uint64_t>(r) * candidates.size() + c);
      TrainedEnsemble ens = train_ensemble(train, cfg, part_rng);
      errors[c][static_cast<std::size_t>(r)] = empirical_error(ens, valid);
    });
  }
  return errors;
}

inline CandidateStats pick_best(const std::vector<std::pair<int, double>>& candidates,
                                const std::vector<std::vector<double>>& errors) {
  std::optional<std::size_t> best;
  auto better = [&](std::size_t a, std::size_t b) {
    double ea = mean(errors[a]), eb = mean(errors[b]);
    if (ea != eb) return ea < eb;
    if (candidates[a].first != candidates[b].first)
      return candidates[a].first < candidates[b].first;
    return candidates[a].second < candidates[b].second;
  };
  for (std::size_t c = 0; c < candidates.size(); ++c)
    if (!best || better(c, *best)) best = c;
  CandidateStats out;
  out.m = candidates[*best].first;
  out.lambda = candidates[*best].second;
  out.error_mean = mean(errors[*best]);
  out.error_std = errors[*best].size() > 1 ? sample_stddev(errors[*best]) : 0.0;
  return out;
}

}  // namespace detail

// Exhaustive evaluation of every grid cell on repeated stratified
// train/validation splits; returns the cell with the lowest mean validation
// error (ties: smallest m, then smallest lambda).
inline CandidateStats grid_search(const Dataset& data, const SearchGrid& grid, int reps,
                                  double validation_fraction, std::uint64_t seed,
                                  unsigned jobs = 1) {
  grid.validate();
  std::vector<std::pair<int, double>> candidates;
  for (int m : grid.m_values)
    for (double l : grid.lambda_values) candidates.emplace_back(m, l);
  auto errors = detail::validation_errors(data, candidates, reps, validation_fraction,
                                          seed, jobs);
  return detail::pick_best(candidates, errors);
}

struct SearchBounds {
  int m_min = 1, m_max = 50;
  double lambda_min = 1e-4, lambda_max = 10.0;

  void validate() const {
    if (m_min < 1 || m_max < m_min) throw ConfigError("invalid m bounds");
    if (!(lambda_min > 0.0) || !(lambda_max >= lambda_min))
      throw ConfigError("invalid lambda bounds");
  }
};

// `budget` candidates with m uniform on the integer range and lambda
// log-uniform, evaluated exactly like grid_search (identical split streams).
inline CandidateStats random_search(const Dataset& data, const SearchBounds& bounds,
                                    int budget, int reps, double validation_fraction,
                                    std::uint64_t seed, unsigned jobs = 1) {
  bounds.validate();
  if (budget < 1) throw ConfigError("budget must be at least 1");
  std::mt19937_64 rng = substream(seed, "random-search");
  std::uniform_int_distribution<int> pick_m(bounds.m_min, bounds.m_max);
  std::uniform_real_distribution<double> pick_log(std::log(bounds.lambda_min),
                                                  std::log(bounds.lambda_max));
  std::vector<std::pair<int, double>> candidates;
  candidates.reserve(static_cast<std::size_t>(budget));
  for (int b = 0; b < budget; ++b) {
    int m = pick_m(rng);
    double l = std::exp(pick_log(rng));
    candidates.emplace_back(m, l);
  }
  auto errors = detail::validation_errors(data, candidates, reps, validation_fraction,
                                          seed, jobs);
  return detail::pick_best(candidates, errors);
}

struct BenchmarkConfig {
  int reps = 10;
  double validation_fraction = 0.2;  // inside the baseline searches
  double heldout_fraction = 0.2;     // final common evaluation splits
  std::optional<int> random_budget;  // default: one per grid cell
  std::uint64_t seed = 0;
  unsigned jobs = 1;
  EstimationConfig estimation;

  void validate() const {
    if (reps < 1) throw ConfigError("reps must be at least 1");
    if (!(validation_fraction > 0.0 && validation_fraction < 1.0))
      throw ConfigError("validation_fraction must lie in (0, 1)");
    if (!(heldout_fraction > 0.0 && heldout_fraction < 1.0))
      throw ConfigError("heldout_fraction must lie in (0, 1)");
    if (random_budget && *random_budget < 1)
      throw ConfigError("random_budget must be at least 1");
    estimation.validate();
  }
};

struct StrategyResult {
  std::string name;
  int m = 0;
  double lambda = 0.0;
  double error_mean = 0.0;  // common held-out evaluation
  double error_std = 0.0;
  double wall_seconds = 0.0;
  double improvement = 0.0;  // (baseline error - theory error) / theory error
};

struct SelectionReport {
  int best_m = 0;
  double best_lambda = 0.0;
  double predicted_error = 0.0;
  SearchGrid grid;
  ErrorMap error_map;
  Eigen::Index map_n_total = 0;
  std::vector<StrategyResult> strategies;  // theoretical first, then baselines
  std::uint64_t seed = 0;
  int reps = 0;
  double validation_fraction = 0.0;
  double heldout_fraction = 0.0;
  int random_budget = 0;
  EstimationConfig estimation;
  Eigen::Index n_total = 0;
  Eigen::Index d = 0;
  std::string generated_at;  // excluded from canonical serialization
};

namespace detail {

// Per-class held-out training size after a stratified split, mirroring
// stratified_split's rounding so selection targets the size actually trained.
inline Eigen::Index heldout_train_size(const Dataset& data, double heldout_fraction) {
  auto counts = data.class_counts();
  Eigen::Index train = 0;
  for (Eigen::Index n_c : {counts[0], counts[1]}) {
    Eigen::Index n_test = static_cast<Eigen::Index>(
        std::llround(heldout_fraction * static_cast<double>(n_c)));
    n_test = std::clamp<Eigen::Index>(n_test, 1, n_c - 1);
    train += n_c - n_test;
  }
  return train;
}

}  // namespace detail

// Full comparison pipeline: estimate a mixture from the data, select (m,
// lambda) from the theoretical map, run both empirical baselines, then give
// every chosen pair the same repeated held-out evaluation (stream "eval";
// identical pairs share evaluations, so equal choices yield improvement 0).
inline SelectionReport benchmark(const Dataset& data, const SearchGrid& grid,
                                 const BenchmarkConfig& cfg) {
  data.validate();
  grid.validate();
  cfg.validate();
  using clock = std::chrono::steady_clock;
  SelectionReport report;
  report.grid = grid;
  report.seed = cfg.seed;
  report.reps = cfg.reps;
  report.validation_fraction = cfg.validation_fraction;
  report.heldout_fraction = cfg.heldout_fraction;
  report.estimation = cfg.estimation;
  report.n_total = data.size();
  report.d = data.dim();
  report.map_n_total = detail::heldout_train_size(data, cfg.heldout_fraction);

  auto t0 = clock::now();
  EstimationConfig est = cfg.estimation;
  est.seed = cfg.seed;
  MixtureModel model = estimate_model(data, est);
  report.error_map = theoretical_error_map(model, report.map_n_total, grid, cfg.jobs);
  SelectedCell chosen = argmin_cell(report.error_map, grid);
  double theory_wall = std::chrono::duration<double>(clock::now() - t0).count();
  report.best_m = chosen.m;
  report.best_lambda = chosen.lambda;
  report.predicted_error = chosen.predicted_error;

  t0 = clock::now();
  CandidateStats grid_best =
      grid_search(data, grid, cfg.reps, cfg.validation_fraction, cfg.seed, cfg.jobs);
  double grid_wall = std::chrono::duration<double>(clock::now() - t0).count();

  SearchBounds bounds;
  bounds.m_min = grid.m_values.front();
  bounds.m_max = grid.m_values.back();
  bounds.lambda_min = grid.lambda_values.front();
  bounds.lambda_max = grid.lambda_values.back();
  int budget = cfg.random_budget ? *cfg.random_budget : static_cast<int>(grid.size());
  report.random_budget = budget;
  t0 = clock::now();
  CandidateStats random_best = random_search(data, bounds, budget, cfg.reps,
                                             cfg.validation_fraction, cfg.seed, cfg.jobs);
  double random_wall = std::chrono::duration<double>(clock::now() - t0).count();

  // Common held-out evaluation, cached per pair so identical choices get
  // identical numbers.
  std::map<std::pair<int, std::uint64_t>, std::pair<double, double>> eval_cache;
  auto heldout_eval = [&](int m, double lambda) {
    auto key = std::make_pair(m, std::bit_cast<std::uint64_t>(lambda));
    auto it = eval_cache.find(key);
    if (it != eval_cache.end()) return it->second;
    std::vector<double> errs(static_cast<std::size_t>(cfg.reps));
    for (int r = 0; r < cfg.reps; ++r) {
      std::mt19937_64 split_rng = substream(cfg.seed, "eval", static_cast<std::uint64_t>(r));
      auto [train, test] = stratified_split(data, cfg.heldout_fraction, split_rng);
      EnsembleConfig c;
      c.n_total = train.size();
      c.d = train.dim();
      c.m = m;
      c.lambda = lambda;
      std::mt19937_64 part_rng =
          substream(cfg.seed, "eval-partition", static_cast<std::uint64_t>(r));
      errs[static_cast<std::size_t>(r)] = empirical_error(train_ensemble(train, c, part_rng), test);
    }
    auto value = std::make_pair(mean(errs), errs.size() > 1 ? sample_stddev(errs) : 0.0);
    eval_cache.emplace(key, value);
    return value;
  };

  auto [theory_mean, theory_std] = heldout_eval(chosen.m, chosen.lambda);
  auto [grid_mean, grid_std] = heldout_eval(grid_best.m, grid_best.lambda);
  auto [random_mean, random_std] = heldout_eval(random_best.m, random_best.lambda);
  auto improvement = [&](double baseline_err) {
    if (theory_mean == baseline_err) return 0.0;
    if (theory_mean <= 0.0)
      return baseline_err > 0.0 ? std::numeric_limits<double>::infinity() : 0.0;
    return (baseline_err - theory_mean) / theory_mean;
  };
  report.strategies = {
      {"theoretical", chosen.m, chosen.lambda, theory_mean, theory_std, theory_wall, 0.0},
      {"grid_search", grid_best.m, grid_best.lambda, grid_mean, grid_std, grid_wall,
       improvement(grid_mean)},
      {"random_search", random_best.m, random_best.lambda, random_mean, random_std,
       random_wall, improvement(random_mean)},
  };
  return report;
}

// JSON form of the report. With include_timing off, wall-clock fields and the
// timestamp are omitted, making the output a pure function of (data, flags,
// seed); digests and reproducibility checks use that form.
inline nlohmann::ordered_json report_to_json(const SelectionReport& report,
                                             bool include_timing = true) {
  nlohmann::ordered_json j;
  j["schema"] = "rmtbag.selection_report/1";
  j["library_version"] = std::string(kVersion);
  j["grid"]["m_values"] = report.grid.m_values;
  j["grid"]["lambda_values"] = report.grid.lambda_values;
  j["selection"] = {{"best_m", report.best_m},
                    {"best_lambda", report.best_lambda},
                    {"predicted_error", report.predicted_error}};
  nlohmann::ordered_json map = nlohmann::ordered_json::array();
  const std::size_t cols = report.grid.lambda_values.size();
  for (std::size_t i = 0; i < report.grid.m_values.size(); ++i) {
    nlohmann::ordered_json row = nlohmann::ordered_json::array();
    for (std::size_t jx = 0; jx < cols; ++jx) {
      const auto& cell = report.error_map[i * cols + jx];
      if (cell)
        row.push_back(*cell);
      else
        row.push_back(nullptr);
    }
    map.push_back(row);
  }
  j["error_map"] = map;
  j["error_map_n_total"] = report.map_n_total;
  nlohmann::ordered_json strategies = nlohmann::ordered_json::array();
  for (const auto& s : report.strategies) {
    nlohmann::ordered_json e;
    e["strategy"] = s.name;
    e["m"] = s.m;
    e["lambda"] = s.lambda;
    e["error_mean"] = s.error_mean;
    e["error_std"] = s.error_std;
    e["improvement"] = s.improvement;
    if (include_timing) e["wall_seconds"] = s.wall_seconds;
    strategies.push_back(e);
  }
  j["strategies"] = strategies;
  nlohmann::ordered_json meta;
  meta["seed"] = report.seed;
  meta["reps"] = report.reps;
  meta["validation_fraction"] = report.validation_fraction;
  meta["heldout_fraction"] = report.heldout_fraction;
  meta["random_budget"] = report.random_budget;
  meta["n_total"] = report.n_total;
  meta["d"] = report.d;
  meta["estimator"] = {{"bootstrap_reps", report.estimation.bootstrap_reps}};
  if (report.estimation.shrinkage_override)
    meta["estimator"]["shrinkage_override"] = *report.estimation.shrinkage_override;
  else
    meta["estimator"]["shrinkage_override"] = nullptr;
  if (include_timing && !report.generated_at.empty())
    meta["generated_at"] = report.generated_at;
  j["metadata"] = meta;
  return j;
}

// Structural validation of a serialized report: required keys, types, map
// shape, and the argmin consistency between selection and map.
inline void validate_report_json(const nlohmann::json& j) {
  auto need = [&](const nlohmann::json& obj, const char* key) -> const nlohmann::json& {
    if (!obj.contains(key)) throw DataError(std::string("report missing key: ") + key);
    return obj.at(key);
  };
  if (need(j, "schema") != "rmtbag.selection_report/1")
    throw DataError("unknown report schema");
  if (!need(j, "library_version").is_string()) throw DataError("library_version must be a string");
  const auto& grid = need(j, "grid");
  const auto& mv = need(grid, "m_values");
  const auto& lv = need(grid, "lambda_values");
  if (!mv.is_array() || mv.empty() || !lv.is_array() || lv.empty())
    throw DataError("grid axes must be nonempty arrays");
  const auto& sel = need(j, "selection");
  if (!need(sel, "best_m").is_number_integer()) throw DataError("best_m must be an integer");
  if (!need(sel, "best_lambda").is_number()) throw DataError("best_lambda must be a number");
  if (!need(sel, "predicted_error").is_number())
    throw DataError("predicted_error must be a number");
  const auto& map = need(j, "error_map");
  if (!map.is_array() || map.size() != mv.size())
    throw DataError("error_map row count must match m_values");
  double best_seen = std::numeric_limits<double>::infinity();
  for (const auto& row : map) {
    if (!row.is_array() || row.size() != lv.size())
      throw DataError("error_map column count must match lambda_values");
    for (const auto& cell : row) {
      if (cell.is_null()) continue;
      if (!cell.is_number()) throw DataError("error_map cells must be numbers or null");
      double v = cell.get<double>();
      if (!(v >= 0.0 && v <= 1.0)) throw DataError("error_map cell outside [0, 1]");
      best_seen = std::min(best_seen, v);
    }
  }
  if (std::isfinite(best_seen) &&
      std::abs(best_seen - sel.at("predicted_error").get<double>()) > 1e-12)
    throw DataError("selection does not attain the error_map minimum");
  const auto& strategies = need(j, "strategies");
  if (!strategies.is_array() || strategies.empty())
    throw DataError("strategies must be a nonempty array");
  for (const auto& s : strategies) {
    for (const char* key : {"strategy", "m", "lambda", "error_mean", "error_std",
                            "improvement"})
      (void)need(s, key);
    if (!s.at("strategy").is_string()) throw DataError("strategy name must be a string");
  }
  const auto& meta = need(j, "metadata");
  for (const char* key : {"seed", "reps", "validation_fraction", "heldout_fraction",
                          "random_budget", "n_total", "d", "estimator"})
    (void)need(meta, key);
}

}  // namespace rmtbag
