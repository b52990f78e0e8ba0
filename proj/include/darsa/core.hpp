#ifndef DARSA_CORE_HPP
#define DARSA_CORE_HPP

#include <Eigen/Core>

#include <cstddef>
#include <cstdint>
#include <optional>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

namespace darsa {

using Scalar = double;
using Vec = Eigen::VectorX<Scalar>;
using Mat = Eigen::MatrixX<Scalar>;
using RowMat = Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

// Bad caller input: shapes, ranges, malformed files. Maps to CLI exit code 2.
class InputError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

// A numerical routine failed to reach its tolerance. Maps to exit code 3.
class SolverError : public std::runtime_error {
 public:
  explicit SolverError(const std::string& what, double residual = 0.0)
      : std::runtime_error(what), residual_(residual) {}
  double residual() const noexcept { return residual_; }

 private:
  double residual_;
};

// Non-finite gradients during optimisation. Maps to exit code 4.
class TrainingError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// A point on the (K-1)-simplex: class priors such as w_S and w_T.
class ClassWeights {
 public:
  static constexpr double kSimplexTol = 1e-9;

  ClassWeights() = default;
  /// Throws InputError unless entries are >= 0 and sum to one within 1e-9.
  explicit ClassWeights(Vec w);

  static ClassWeights uniform(int k);
  /// Normalises nonnegative counts (e.g. class histograms) onto the simplex.
  static ClassWeights from_counts(const Vec& counts);
  static ClassWeights empirical(std::span<const int> labels, int k);

  const Vec& values() const noexcept { return w_; }
  int size() const noexcept { return static_cast<int>(w_.size()); }
  double operator[](int k) const { return w_(k); }

 private:
  Vec w_;
};

/// Class ids over N samples, each in {0..K-1}.
class SubdomainPartition {
 public:
  SubdomainPartition(std::vector<int> assignments, int k);

  int num_subdomains() const noexcept { return k_; }
  std::span<const int> assignments() const noexcept { return assignments_; }
  std::size_t size() const noexcept { return assignments_.size(); }
  /// Row indices per sub-domain, ascending.
  std::vector<std::vector<int>> members() const;
  std::vector<int> counts() const;

 private:
  std::vector<int> assignments_;
  int k_;
};

/// Feature matrix (one sample per row) with optional class labels.
struct Dataset {
  Mat features;
  std::optional<std::vector<int>> labels;
  int num_classes = 1;

  Eigen::Index size() const noexcept { return features.rows(); }
  Eigen::Index dim() const noexcept { return features.cols(); }
  bool labeled() const noexcept { return labels.has_value(); }

  /// Throws InputError on non-finite features or out-of-range labels.
  void validate() const;
};

/// Independent 64-bit seed for a named sub-stream of a run seed.
std::uint64_t derive_seed(std::uint64_t seed, std::uint64_t stream);

/// Gathers the given rows of a matrix into a new matrix.
Mat gather_rows(const Mat& x, std::span<const int> rows);

/// Splits rows of `x` by class id; class k gets the rows whose id is k.
std::vector<Mat> split_by_class(const Mat& x, std::span<const int> ids, int k);

}  // namespace darsa

#endif  // DARSA_CORE_HPP
