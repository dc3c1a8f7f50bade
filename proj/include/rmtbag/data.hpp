#pragma once

#include <algorithm>
#include <array>
#include <charconv>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <numeric>
#include <optional>
#include <random>
#include <sstream>
#include <string>
#include <string_view>
#include <system_error>
#include <vector>

#include <Eigen/Dense>

#include "rmtbag/errors.hpp"
#include "rmtbag/model.hpp"
#include "rmtbag/random.hpp"

namespace rmtbag {

// Immutable two-class dataset. Samples are columns of x; labels are -1
// (class 1) or +1 (class 2), aligned with columns. Sample order is meaningful:
// loaders and generators never reorder behind the caller's back.
struct Dataset {
  Eigen::MatrixXd x;   // d x n
  Eigen::VectorXi y;   // n, entries in {-1, +1}

  Eigen::Index dim() const { return x.rows(); }
  Eigen::Index size() const { return x.cols(); }

  std::array<Eigen::Index, 2> class_counts() const {
    std::array<Eigen::Index, 2> c{0, 0};
    for (Eigen::Index i = 0; i < y.size(); ++i) {
      if (y(i) == -1)
        ++c[0];
      else if (y(i) == 1)
        ++c[1];
      else
        throw DataError("labels must be -1 or +1");
    }
    return c;
  }

  void validate() const {
    if (x.cols() != y.size()) throw DataError("feature/label count mismatch");
    if (x.rows() < 1 || x.cols() < 1) throw DataError("dataset is empty");
    (void)class_counts();
  }

  Dataset select(const std::vector<Eigen::Index>& idx) const {
    Dataset out;
    out.x.resize(x.rows(), static_cast<Eigen::Index>(idx.size()));
    out.y.resize(static_cast<Eigen::Index>(idx.size()));
    for (std::size_t k = 0; k < idx.size(); ++k) {
      out.x.col(static_cast<Eigen::Index>(k)) = x.col(idx[k]);
      out.y(static_cast<Eigen::Index>(k)) = y(idx[k]);
    }
    return out;
  }
};

enum class CovarianceKind { identity, toeplitz };

// Synthetic two-class Gaussian spec: class 1 ~ N(-mu_scale*e1, Sigma),
// class 2 ~ N(+mu_scale*e1, Sigma), n_per_class samples each.
struct SyntheticSpec {
  Eigen::Index d = 100;
  Eigen::Index n_per_class = 1000;
  double mu_scale = 0.9;
  CovarianceKind covariance_kind = CovarianceKind::identity;
  double rho = 0.5;
  std::uint64_t seed = 0;

  void validate() const {
    if (d < 1) throw ConfigError("d must be positive");
    if (n_per_class < 1) throw ConfigError("n_per_class must be positive");
    if (covariance_kind == CovarianceKind::toeplitz && !(rho > 0.0 && rho < 1.0))
      throw ConfigError("toeplitz rho must lie in (0, 1)");
  }
};

inline Eigen::MatrixXd toeplitz_covariance(Eigen::Index d, double rho) {
  Eigen::MatrixXd s(d, d);
  for (Eigen::Index i = 0; i < d; ++i)
    for (Eigen::Index j = 0; j < d; ++j)
      s(i, j) = std::pow(rho, static_cast<double>(std::abs(i - j)));
  return s;
}

inline Eigen::MatrixXd covariance_for(const SyntheticSpec& spec) {
  return spec.covariance_kind == CovarianceKind::identity
             ? Eigen::MatrixXd::Identity(spec.d, spec.d).eval()
             : toeplitz_covariance(spec.d, spec.rho);
}

inline MixtureModel model_from_spec(const SyntheticSpec& spec) {
  spec.validate();
  return symmetric_model(spec.d, spec.mu_scale, covariance_for(spec));
}

// Symmetric PSD square root via eigendecomposition.
inline Eigen::MatrixXd matrix_sqrt(const Eigen::MatrixXd& s) {
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> eig(s);
  if (eig.info() != Eigen::Success)
    throw NumericalError("covariance eigendecomposition failed");
  Eigen::VectorXd ev = eig.eigenvalues().cwiseMax(0.0).cwiseSqrt();
  return eig.eigenvectors() * ev.asDiagonal() * eig.eigenvectors().transpose();
}

// Draws n1 class-1 and n2 class-2 samples from the mixture; class-1 block
// first. The covariance square roots are computed once per call.
inline Dataset sample_mixture(const MixtureModel& model, Eigen::Index n1,
                              Eigen::Index n2, std::mt19937_64& rng) {
  model.validate();
  if (n1 < 0 || n2 < 0 || n1 + n2 < 1) throw ConfigError("need at least one sample");
  const Eigen::Index d = model.dim();
  Eigen::MatrixXd a1 = matrix_sqrt(model.sigma1);
  Eigen::MatrixXd a2 = matrix_sqrt(model.sigma2);
  Dataset ds;
  ds.x.resize(d, n1 + n2);
  ds.y.resize(n1 + n2);
  if (n1 > 0) {
    ds.x.leftCols(n1) = (a1 * gaussian_matrix(d, n1, rng)).colwise() + model.mu1;
    ds.y.head(n1).setConstant(-1);
  }
  if (n2 > 0) {
    ds.x.rightCols(n2) = (a2 * gaussian_matrix(d, n2, rng)).colwise() + model.mu2;
    ds.y.tail(n2).setConstant(1);
  }
  return ds;
}

inline Dataset generate_synthetic(const SyntheticSpec& spec) {
  spec.validate();
  MixtureModel model = model_from_spec(spec);
  std::mt19937_64 rng = substream(spec.seed, "gen");
  return sample_mixture(model, spec.n_per_class, spec.n_per_class, rng);
}

namespace detail {

inline std::string format_double(double v) {
  char buf[40];
  auto res = std::to_chars(buf, buf + sizeof(buf), v);
  return std::string(buf, res.ptr);
}

inline double parse_double(std::string_view s) {
  double v = 0.0;
  const char* begin = s.data();
  const char* end = s.data() + s.size();
  auto res = std::from_chars(begin, end, v);
  if (res.ec != std::errc() || res.ptr != end)
    throw DataError("unparseable numeric cell: '" + std::string(s) + "'");
  return v;
}

inline std::string_view trim(std::string_view s) {
  while (!s.empty() && (s.front() == ' ' || s.front() == '\t' || s.front() == '\r'))
    s.remove_prefix(1);
  while (!s.empty() && (s.back() == ' ' || s.back() == '\t' || s.back() == '\r'))
    s.remove_suffix(1);
  return s;
}

inline std::vector<std::string_view> split_csv_line(std::string_view line) {
  std::vector<std::string_view> cells;
  std::size_t start = 0;
  for (std::size_t i = 0; i <= line.size(); ++i) {
    if (i == line.size() || line[i] == ',') {
      cells.push_back(trim(line.substr(start, i - start)));
      start = i + 1;
    }
  }
  return cells;
}

}  // namespace detail

struct CsvLoadResult {
  Dataset data;
  std::vector<std::string> feature_names;
  // Indices of features whose variance vanished under standardization; they
  // are centered but left unscaled.
  std::vector<Eigen::Index> constant_features;
};

// Reads a comma-separated file with a header row; every data row becomes one
// sample (a column of the feature matrix). The label column is matched by
// name, and label cells must equal positive_label or negative_label verbatim
// after trimming. Missing (empty) cells are rejected. With standardize, each
// feature is shifted to zero mean and scaled to unit sample variance using
// statistics of the whole file.
inline CsvLoadResult load_csv(const std::filesystem::path& path,
                              const std::string& label_column = "label",
                              const std::string& positive_label = "1",
                              const std::string& negative_label = "-1",
                              bool standardize = false) {
  std::ifstream in(path);
  if (!in) throw DataError("cannot open file: " + path.string());
  std::string line;
  if (!std::getline(in, line)) throw DataError("empty file: " + path.string());
  auto header = detail::split_csv_line(line);
  std::optional<std::size_t> label_idx;
  CsvLoadResult out;
  for (std::size_t i = 0; i < header.size(); ++i) {
    if (header[i] == label_column) {
      if (label_idx) throw DataError("duplicate label column: " + label_column);
      label_idx = i;
    } else {
      out.feature_names.emplace_back(header[i]);
    }
  }
  if (!label_idx) throw DataError("label column not found: " + label_column);
  const std::size_t n_cols = header.size();
  const Eigen::Index d = static_cast<Eigen::Index>(n_cols) - 1;
  if (d < 1) throw DataError("no feature columns");

  std::vector<double> features;
  std::vector<int> labels;
  std::size_t row = 1;
  while (std::getline(in, line)) {
    ++row;
    if (detail::trim(line).empty()) continue;
    auto cells = detail::split_csv_line(line);
    if (cells.size() != n_cols)
      throw DataError("row " + std::to_string(row) + " has " +
                      std::to_string(cells.size()) + " cells, expected " +
                      std::to_string(n_cols));
    for (std::size_t i = 0; i < cells.size(); ++i) {
      if (cells[i].empty())
        throw DataError("missing value at row " + std::to_string(row));
      if (i == *label_idx) {
        if (cells[i] == positive_label)
          labels.push_back(1);
        else if (cells[i] == negative_label)
          labels.push_back(-1);
        else
          throw DataError("unknown label '" + std::string(cells[i]) + "' at row " +
                          std::to_string(row));
      } else {
        features.push_back(detail::parse_double(cells[i]));
      }
    }
  }
  const Eigen::Index n = static_cast<Eigen::Index>(labels.size());
  if (n < 1) throw DataError("no data rows in " + path.string());
  out.data.x.resize(d, n);
  for (Eigen::Index j = 0; j < n; ++j)
    for (Eigen::Index i = 0; i < d; ++i)
      out.data.x(i, j) = features[static_cast<std::size_t>(j * d + i)];
  out.data.y = Eigen::Map<Eigen::VectorXi>(labels.data(), n);

  if (standardize) {
    for (Eigen::Index i = 0; i < d; ++i) {
      double mu = out.data.x.row(i).mean();
      out.data.x.row(i).array() -= mu;
      double var = n > 1 ? out.data.x.row(i).squaredNorm() / static_cast<double>(n - 1) : 0.0;
      if (var < 1e-24)
        out.constant_features.push_back(i);
      else
        out.data.x.row(i) /= std::sqrt(var);
    }
  }
  return out;
}

// Writes the dataset in the load_csv format with shortest-round-trip numeric
// formatting, so save/load is lossless.
inline void save_csv(const std::filesystem::path& path, const Dataset& data,
                     const std::vector<std::string>& feature_names = {},
                     const std::string& label_column = "label") {
  data.validate();
  std::ofstream outf(path);
  if (!outf) throw DataError("cannot write file: " + path.string());
  const Eigen::Index d = data.dim();
  if (!feature_names.empty() && static_cast<Eigen::Index>(feature_names.size()) != d)
    throw ConfigError("feature name count mismatch");
  for (Eigen::Index i = 0; i < d; ++i) {
    if (feature_names.empty())
      outf << 'f' << i;
    else
      outf << feature_names[static_cast<std::size_t>(i)];
    outf << ',';
  }
  outf << label_column << '\n';
  for (Eigen::Index j = 0; j < data.size(); ++j) {
    for (Eigen::Index i = 0; i < d; ++i)
      outf << detail::format_double(data.x(i, j)) << ',';
    outf << data.y(j) << '\n';
  }
  if (!outf) throw DataError("write failed: " + path.string());
}

// Deterministic stratified split: each class contributes round(fraction * n_c)
// samples to the test side (so proportions hold within one sample). Original
// sample order is preserved inside both parts.
inline std::pair<Dataset, Dataset> stratified_split(const Dataset& data,
                                                    double test_fraction,
                                                    std::mt19937_64& rng) {
  data.validate();
  if (!(test_fraction > 0.0 && test_fraction < 1.0))
    throw ConfigError("test fraction must lie in (0, 1)");
  auto counts = data.class_counts();
  if (counts[0] < 2 || counts[1] < 2)
    throw DataError("stratified split needs at least 2 samples per class");
  std::vector<Eigen::Index> test_idx, train_idx;
  for (int cls = 0; cls < 2; ++cls) {
    const int label = cls == 0 ? -1 : 1;
    std::vector<Eigen::Index> pool;
    for (Eigen::Index i = 0; i < data.size(); ++i)
      if (data.y(i) == label) pool.push_back(i);
    Eigen::Index n_test = static_cast<Eigen::Index>(
        std::llround(test_fraction * static_cast<double>(pool.size())));
    n_test = std::clamp<Eigen::Index>(n_test, 1, static_cast<Eigen::Index>(pool.size()) - 1);
    std::shuffle(pool.begin(), pool.end(), rng);
    test_idx.insert(test_idx.end(), pool.begin(), pool.begin() + n_test);
    train_idx.insert(train_idx.end(), pool.begin() + n_test, pool.end());
  }
  std::sort(test_idx.begin(), test_idx.end());
  std::sort(train_idx.begin(), train_idx.end());
  return {data.select(train_idx), data.select(test_idx)};
}

}  // namespace rmtbag
