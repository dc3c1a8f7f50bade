// Command-line front end: dataset generation, error maps, error-vs-m curves,
// and the selection benchmark, all emitting plot-ready CSV/JSON artifacts.
//
// Exit codes: 0 success, 2 usage or configuration error, 3 data error,
// 4 numerical error.

#include <chrono>
#include <ctime>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <json.hpp>
#include <openssl/evp.h>

#include "rmtbag/rmtbag.hpp"

namespace fs = std::filesystem;
using namespace rmtbag;

namespace {

std::string sha256_file(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("cannot open file: " + path.string());
  std::string bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  unsigned char md[EVP_MAX_MD_SIZE];
  unsigned int len = 0;
  if (EVP_Digest(bytes.data(), bytes.size(), md, &len, EVP_sha256(), nullptr) != 1)
    throw NumericalError("sha256 digest failed");
  static const char hex[] = "0123456789abcdef";
  std::string out;
  out.reserve(2 * len);
  for (unsigned int i = 0; i < len; ++i) {
    out += hex[md[i] >> 4];
    out += hex[md[i] & 0xf];
  }
  return out;
}

std::string utc_timestamp() {
  auto now = std::chrono::system_clock::now();
  std::time_t t = std::chrono::system_clock::to_time_t(now);
  std::tm tm{};
  gmtime_r(&t, &tm);
  char buf[32];
  std::strftime(buf, sizeof buf, "%Y-%m-%dT%H:%M:%SZ", &tm);
  return buf;
}

struct CommonFlags {
  std::uint64_t seed = 0;
  unsigned jobs = 1;
  std::string out_dir = ".";

  unsigned effective_jobs() const { return jobs == 0 ? default_jobs() : jobs; }

  fs::path prepare_out_dir() const {
    fs::path dir(out_dir);
    std::error_code ec;
    fs::create_directories(dir, ec);
    if (ec) throw DataError("cannot create output directory: " + dir.string());
    return dir;
  }
};

struct SyntheticFlags {
  Eigen::Index d = 100;
  Eigen::Index n_per_class = 1000;
  double mu_scale = 0.9;
  std::string cov = "identity";
  double rho = 0.5;

  SyntheticSpec spec(std::uint64_t seed) const {
    SyntheticSpec s;
    s.d = d;
    s.n_per_class = n_per_class;
    s.mu_scale = mu_scale;
    s.covariance_kind =
        cov == "toeplitz" ? CovarianceKind::toeplitz : CovarianceKind::identity;
    s.rho = rho;
    s.seed = seed;
    s.validate();
    return s;
  }
};

struct SourceFlags {
  bool synthetic = false;
  std::string csv;
  SyntheticFlags syn;
  std::string label_column = "label";
  std::string positive_label = "1";
  std::string negative_label = "-1";
  bool standardize = false;
  double test_fraction = 0.2;
  int bootstrap_reps = 100;
  std::optional<double> shrinkage;
};

// Resolved data source: the dataset plus the mixture the theory runs on (the
// generating model when synthetic, an estimate from the data when loaded).
// need_model=false skips the estimation step for commands whose pipeline
// estimates internally.
struct ResolvedSource {
  Dataset data;
  MixtureModel model;
  bool synthetic = false;
};

ResolvedSource resolve_source(const SourceFlags& sf, std::uint64_t seed,
                              bool need_model = true) {
  if (sf.synthetic == !sf.csv.empty())
    throw ConfigError("exactly one of --synthetic or --csv is required");
  ResolvedSource out;
  if (sf.synthetic) {
    SyntheticSpec spec = sf.syn.spec(seed);
    out.data = generate_synthetic(spec);
    out.model = model_from_spec(spec);
    out.synthetic = true;
  } else {
    CsvLoadResult loaded = load_csv(sf.csv, sf.label_column, sf.positive_label,
                                    sf.negative_label, sf.standardize);
    if (!loaded.constant_features.empty()) {
      std::cerr << "note: " << loaded.constant_features.size()
                << " constant feature(s) left unscaled:";
      for (Eigen::Index i : loaded.constant_features)
        std::cerr << ' ' << loaded.feature_names[static_cast<std::size_t>(i)];
      std::cerr << '\n';
    }
    if (need_model) {
      EstimationConfig est;
      est.bootstrap_reps = sf.bootstrap_reps;
      est.seed = seed;
      est.shrinkage_override = sf.shrinkage;
      out.model = estimate_model(loaded.data, est);
    }
    out.data = std::move(loaded.data);
  }
  return out;
}

struct GridFlags {
  int m_min = 1;
  int m_max = 50;
  double lambda_min = 1e-4;
  double lambda_max = 10.0;
  int lambda_points = 40;
  int reps = 10;

  SearchGrid grid() const {
    return SearchGrid::log_grid(m_min, m_max, lambda_min, lambda_max, lambda_points);
  }
};

// One train/test pair per repetition: fresh draws from the generating model
// when synthetic (stream "map-data"), stratified splits otherwise (stream
// "splits"). Shared by the map and curve commands so their empirical columns
// follow the same protocol.
std::vector<std::pair<Dataset, Dataset>> evaluation_pairs(const ResolvedSource& src,
                                                          const SourceFlags& sf,
                                                          std::uint64_t seed, int reps) {
  if (reps < 1) throw ConfigError("reps must be at least 1");
  std::vector<std::pair<Dataset, Dataset>> out;
  out.reserve(static_cast<std::size_t>(reps));
  if (src.synthetic) {
    std::mt19937_64 seeder = substream(seed, "map-data");
    for (int r = 0; r < reps; ++r) {
      SyntheticSpec train_spec = sf.syn.spec(seeder());
      SyntheticSpec test_spec = sf.syn.spec(seeder());
      out.emplace_back(generate_synthetic(train_spec), generate_synthetic(test_spec));
    }
  } else {
    for (int r = 0; r < reps; ++r) {
      std::mt19937_64 split_rng = substream(seed, "splits", static_cast<std::uint64_t>(r));
      out.push_back(stratified_split(src.data, sf.test_fraction, split_rng));
    }
  }
  return out;
}

struct EmpiricalCell {
  bool present = false;
  double error = 0.0;
  // theoretical cells carry no sampling spread and leave the std field empty
  bool has_std = false;
  double stddev = 0.0;
};

// Mean and spread of the test error per grid cell over the repetitions. Cells
// whose subsets would be smaller than two samples stay absent. Within one
// repetition every lambda shares the same partition of each m row.
std::vector<EmpiricalCell> empirical_map(const std::vector<std::pair<Dataset, Dataset>>& pairs,
                                         const SearchGrid& grid, std::uint64_t seed,
                                         unsigned jobs) {
  const std::size_t rows = grid.m_values.size();
  const std::size_t cols = grid.lambda_values.size();
  const int reps = static_cast<int>(pairs.size());
  std::vector<std::vector<double>> samples(rows * cols);
  for (auto& s : samples) s.reserve(static_cast<std::size_t>(reps));
  for (int r = 0; r < reps; ++r) {
    const Dataset& train = pairs[static_cast<std::size_t>(r)].first;
    const Dataset& test = pairs[static_cast<std::size_t>(r)].second;
    std::vector<std::vector<double>> row_errors(rows);
    parallel_for(rows, jobs, [&](std::size_t i) {
      int m = grid.m_values[i];
      if (train.size() / m < 2) return;
      std::mt19937_64 rng = substream(
          seed, "partition", static_cast<std::uint64_t>(r) * rows + i);
      row_errors[i] = lambda_sweep_errors(train, test, m, grid.lambda_values, rng);
    });
    for (std::size_t i = 0; i < rows; ++i) {
      if (row_errors[i].empty()) continue;
      for (std::size_t j = 0; j < cols; ++j)
        samples[i * cols + j].push_back(row_errors[i][j]);
    }
  }
  std::vector<EmpiricalCell> out(rows * cols);
  for (std::size_t k = 0; k < out.size(); ++k) {
    if (samples[k].empty()) continue;
    out[k].present = true;
    out[k].error = mean(samples[k]);
    out[k].has_std = true;
    out[k].stddev = samples[k].size() > 1 ? sample_stddev(samples[k]) : 0.0;
  }
  return out;
}

void write_long_map(const fs::path& path, const SearchGrid& grid,
                    const std::vector<EmpiricalCell>& cells) {
  std::ofstream outf(path);
  if (!outf) throw DataError("cannot write file: " + path.string());
  outf << "m,lambda,error,std\n";
  const std::size_t cols = grid.lambda_values.size();
  for (std::size_t i = 0; i < grid.m_values.size(); ++i)
    for (std::size_t j = 0; j < cols; ++j) {
      const EmpiricalCell& c = cells[i * cols + j];
      outf << grid.m_values[i] << ',' << detail::format_double(grid.lambda_values[j]) << ',';
      if (c.present) {
        outf << detail::format_double(c.error) << ',';
        if (c.has_std) outf << detail::format_double(c.stddev);
      } else {
        outf << ',';
      }
      outf << '\n';
    }
  if (!outf) throw DataError("write failed: " + path.string());
}

void write_matrix_map(const fs::path& path, const SearchGrid& grid,
                      const std::vector<EmpiricalCell>& cells) {
  std::ofstream outf(path);
  if (!outf) throw DataError("cannot write file: " + path.string());
  outf << 'm';
  for (double l : grid.lambda_values) outf << ',' << detail::format_double(l);
  outf << '\n';
  const std::size_t cols = grid.lambda_values.size();
  for (std::size_t i = 0; i < grid.m_values.size(); ++i) {
    outf << grid.m_values[i];
    for (std::size_t j = 0; j < cols; ++j) {
      const EmpiricalCell& c = cells[i * cols + j];
      outf << ',';
      if (c.present) outf << detail::format_double(c.error);
    }
    outf << '\n';
  }
  if (!outf) throw DataError("write failed: " + path.string());
}

std::vector<EmpiricalCell> theory_as_cells(const ErrorMap& map) {
  std::vector<EmpiricalCell> out(map.size());
  for (std::size_t k = 0; k < map.size(); ++k)
    if (map[k]) {
      out[k].present = true;
      out[k].error = *map[k];
    }
  return out;
}

int cmd_gen(const CommonFlags& common, const SyntheticFlags& syn) {
  SyntheticSpec spec = syn.spec(common.seed);
  Dataset data = generate_synthetic(spec);
  fs::path path = common.prepare_out_dir() / "dataset.csv";
  save_csv(path, data);
  std::cout << "wrote " << path.string() << '\n';
  std::cout << "sha256 " << sha256_file(path) << '\n';
  return 0;
}

int cmd_map(const CommonFlags& common, const SourceFlags& sf, const GridFlags& gf,
            bool matrix) {
  SearchGrid grid = gf.grid();
  ResolvedSource src = resolve_source(sf, common.seed);
  Eigen::Index n_theory = src.synthetic
                              ? src.data.size()
                              : detail::heldout_train_size(src.data, sf.test_fraction);
  ErrorMap theory = theoretical_error_map(src.model, n_theory, grid,
                                          common.effective_jobs());
  auto pairs = evaluation_pairs(src, sf, common.seed, gf.reps);
  auto empirical = empirical_map(pairs, grid, common.seed, common.effective_jobs());

  fs::path dir = common.prepare_out_dir();
  fs::path emp_path = dir / "empirical_map.csv";
  fs::path theo_path = dir / "theoretical_map.csv";
  write_long_map(emp_path, grid, empirical);
  write_long_map(theo_path, grid, theory_as_cells(theory));
  std::cout << "wrote " << emp_path.string() << '\n';
  std::cout << "wrote " << theo_path.string() << '\n';
  if (matrix) {
    fs::path emp_m = dir / "empirical_map_matrix.csv";
    fs::path theo_m = dir / "theoretical_map_matrix.csv";
    write_matrix_map(emp_m, grid, empirical);
    write_matrix_map(theo_m, grid, theory_as_cells(theory));
    std::cout << "wrote " << emp_m.string() << '\n';
    std::cout << "wrote " << theo_m.string() << '\n';
  }
  SelectedCell best = argmin_cell(theory, grid);
  std::cout << "selected m=" << best.m
            << " lambda=" << detail::format_double(best.lambda)
            << " predicted_error=" << detail::format_double(best.predicted_error) << '\n';
  return 0;
}

int cmd_curve(const CommonFlags& common, const SourceFlags& sf, double lambda, int m_min,
              int m_max, int reps) {
  if (m_min < 1 || m_max < m_min) throw ConfigError("invalid m range");
  if (!(lambda > 0.0)) throw ConfigError("lambda must be positive");
  SearchGrid grid;
  for (int m = m_min; m <= m_max; ++m) grid.m_values.push_back(m);
  grid.lambda_values = {lambda};

  ResolvedSource src = resolve_source(sf, common.seed);
  Eigen::Index n_theory = src.synthetic
                              ? src.data.size()
                              : detail::heldout_train_size(src.data, sf.test_fraction);
  if (n_theory / m_max < 2)
    throw ConfigError("m-max leaves subsets smaller than 2 samples");
  // the curve follows the theory across the whole m range, past subset
  // ratio 1 included: that is where the interpolation ridge lives
  ErrorMap theory = theoretical_error_map(src.model, n_theory, grid,
                                          common.effective_jobs(), true);
  auto pairs = evaluation_pairs(src, sf, common.seed, reps);
  auto empirical = empirical_map(pairs, grid, common.seed, common.effective_jobs());

  fs::path path = common.prepare_out_dir() / "curve.csv";
  std::ofstream outf(path);
  if (!outf) throw DataError("cannot write file: " + path.string());
  outf << "m,lambda,empirical_error,empirical_std,theoretical_error\n";
  for (std::size_t i = 0; i < grid.m_values.size(); ++i) {
    outf << grid.m_values[i] << ',' << detail::format_double(lambda) << ',';
    if (empirical[i].present)
      outf << detail::format_double(empirical[i].error) << ','
           << detail::format_double(empirical[i].stddev);
    else
      outf << ',';
    outf << ',';
    if (theory[i]) outf << detail::format_double(*theory[i]);
    outf << '\n';
  }
  if (!outf) throw DataError("write failed: " + path.string());
  std::cout << "wrote " << path.string() << '\n';
  return 0;
}

int cmd_select(const CommonFlags& common, const SourceFlags& sf, const GridFlags& gf,
               double validation_fraction, std::optional<int> random_budget,
               bool timing) {
  try {
    SearchGrid grid = gf.grid();
    ResolvedSource src = resolve_source(sf, common.seed, false);
    BenchmarkConfig cfg;
    cfg.reps = gf.reps;
    cfg.validation_fraction = validation_fraction;
    cfg.heldout_fraction = sf.test_fraction;
    cfg.random_budget = random_budget;
    cfg.seed = common.seed;
    cfg.jobs = common.effective_jobs();
    cfg.estimation.bootstrap_reps = sf.bootstrap_reps;
    cfg.estimation.shrinkage_override = sf.shrinkage;
    SelectionReport report = benchmark(src.data, grid, cfg);
    if (timing) report.generated_at = utc_timestamp();

    fs::path path = common.prepare_out_dir() / "selection_report.json";
    std::ofstream outf(path);
    if (!outf) throw DataError("cannot write file: " + path.string());
    outf << report_to_json(report, timing).dump(2) << '\n';
    if (!outf) throw DataError("write failed: " + path.string());

    std::cout << "wrote " << path.string() << '\n';
    std::cout << "selected m=" << report.best_m
              << " lambda=" << detail::format_double(report.best_lambda)
              << " predicted_error=" << detail::format_double(report.predicted_error)
              << '\n';
    for (const auto& s : report.strategies)
      std::cout << "strategy " << s.name << " m=" << s.m
                << " lambda=" << detail::format_double(s.lambda)
                << " heldout_error=" << detail::format_double(s.error_mean)
                << " improvement=" << detail::format_double(s.improvement) << '\n';
    return 0;
  } catch (const std::exception& e) {
    const char* type = "internal";
    if (dynamic_cast<const ConfigError*>(&e))
      type = "config";
    else if (dynamic_cast<const DataError*>(&e))
      type = "data";
    else if (dynamic_cast<const NumericalError*>(&e))
      type = "numerical";
    nlohmann::ordered_json err;
    err["error"] = {{"type", type}, {"message", e.what()}};
    std::cout << err.dump(2) << '\n';
    throw;
  }
}

void add_synthetic_flags(CLI::App* sub, SyntheticFlags& syn) {
  sub->add_option("--d", syn.d, "Feature dimension")->capture_default_str();
  sub->add_option("--n-per-class", syn.n_per_class, "Samples per class")
      ->capture_default_str();
  sub->add_option("--mu-scale", syn.mu_scale, "Class mean magnitude along e1")
      ->capture_default_str();
  sub->add_option("--cov", syn.cov, "Covariance kind")
      ->check(CLI::IsMember({"identity", "toeplitz"}))
      ->capture_default_str();
  sub->add_option("--rho", syn.rho, "Toeplitz decay parameter")->capture_default_str();
}

void add_source_flags(CLI::App* sub, SourceFlags& sf) {
  auto* syn = sub->add_flag("--synthetic", sf.synthetic, "Generate a synthetic dataset");
  auto* csv = sub->add_option("--csv", sf.csv, "Load a CSV dataset");
  syn->excludes(csv);
  add_synthetic_flags(sub, sf.syn);
  sub->add_option("--label-column", sf.label_column, "Label column name")
      ->capture_default_str();
  sub->add_option("--positive-label", sf.positive_label, "Label mapped to +1")
      ->capture_default_str();
  sub->add_option("--negative-label", sf.negative_label, "Label mapped to -1")
      ->capture_default_str();
  sub->add_flag("--standardize", sf.standardize,
                "Standardize features (whole-file statistics)");
  sub->add_option("--test-fraction", sf.test_fraction,
                  "Held-out fraction for CSV evaluation splits")
      ->capture_default_str();
  sub->add_option("--bootstrap-reps", sf.bootstrap_reps,
                  "Bootstrap repetitions for mean estimation (CSV source)")
      ->capture_default_str();
  sub->add_option("--shrinkage", sf.shrinkage,
                  "Fix the covariance shrinkage intensity in [0,1]");
}

void add_grid_flags(CLI::App* sub, GridFlags& gf) {
  sub->add_option("--m-min", gf.m_min, "Smallest subset count")->capture_default_str();
  sub->add_option("--m-max", gf.m_max, "Largest subset count")->capture_default_str();
  sub->add_option("--lambda-min", gf.lambda_min, "Smallest ridge value")
      ->capture_default_str();
  sub->add_option("--lambda-max", gf.lambda_max, "Largest ridge value")
      ->capture_default_str();
  sub->add_option("--lambda-points", gf.lambda_points, "Log-spaced ridge grid size")
      ->capture_default_str();
  sub->add_option("--reps", gf.reps, "Evaluation repetitions")->capture_default_str();
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Bootstrapped LSSVM ensembles with closed-form error prediction"};
  app.set_version_flag("--version", std::string(kVersion));
  app.require_subcommand(1);

  CommonFlags common;
  auto add_common = [&](CLI::App* sub) {
    sub->add_option("--seed", common.seed, "Master random seed")->capture_default_str();
    sub->add_option("--jobs", common.jobs, "Worker threads (0 = hardware)")
        ->capture_default_str();
    sub->add_option("--out-dir", common.out_dir, "Output directory")
        ->capture_default_str();
  };

  SyntheticFlags gen_syn;
  auto* gen = app.add_subcommand("gen", "Generate a synthetic dataset CSV");
  add_common(gen);
  add_synthetic_flags(gen, gen_syn);

  SourceFlags map_src;
  GridFlags map_grid;
  bool map_matrix = false;
  auto* map = app.add_subcommand("map", "Empirical and theoretical error maps");
  add_common(map);
  add_source_flags(map, map_src);
  add_grid_flags(map, map_grid);
  map->add_flag("--matrix", map_matrix, "Also emit matrix-layout CSVs");

  SourceFlags curve_src;
  double curve_lambda = 0.0;
  int curve_m_min = 1, curve_m_max = 50, curve_reps = 10;
  auto* curve = app.add_subcommand("curve", "Error as a function of the subset count");
  add_common(curve);
  add_source_flags(curve, curve_src);
  curve->add_option("--lambda", curve_lambda, "Ridge value")->required();
  curve->add_option("--m-min", curve_m_min, "Smallest subset count")->capture_default_str();
  curve->add_option("--m-max", curve_m_max, "Largest subset count")->capture_default_str();
  curve->add_option("--reps", curve_reps, "Evaluation repetitions")->capture_default_str();

  SourceFlags sel_src;
  GridFlags sel_grid;
  double sel_validation_fraction = 0.2;
  std::optional<int> sel_budget;
  bool sel_timing = false;
  auto* sel = app.add_subcommand("select", "Selection benchmark with a JSON report");
  add_common(sel);
  add_source_flags(sel, sel_src);
  add_grid_flags(sel, sel_grid);
  sel->add_option("--validation-fraction", sel_validation_fraction,
                  "Validation fraction inside the baseline searches")
      ->capture_default_str();
  sel->add_option("--random-budget", sel_budget,
                  "Random search draws (default: one per grid cell)");
  sel->add_flag("--timing", sel_timing,
                "Include wall-clock fields and a timestamp in the report");

  int rc = 0;
  gen->callback([&] { rc = cmd_gen(common, gen_syn); });
  map->callback([&] { rc = cmd_map(common, map_src, map_grid, map_matrix); });
  curve->callback([&] {
    rc = cmd_curve(common, curve_src, curve_lambda, curve_m_min, curve_m_max, curve_reps);
  });
  sel->callback([&] {
    rc = cmd_select(common, sel_src, sel_grid, sel_validation_fraction, sel_budget,
                    sel_timing);
  });

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    int code = app.exit(e);
    return code == 0 ? 0 : 2;
  } catch (const ConfigError& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 2;
  } catch (const DataError& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 3;
  } catch (const NumericalError& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 4;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 4;
  }
  return rc;
}
