#include "darsa/core.hpp"

#include <cmath>
#include <random>

namespace darsa {

ClassWeights::ClassWeights(Vec w) : w_(std::move(w)) {
  if (w_.size() == 0) throw InputError("class weights are empty");
  for (Eigen::Index k = 0; k < w_.size(); ++k) {
    if (!std::isfinite(w_(k)) || w_(k) < 0.0)
      throw InputError("class weights must be finite and nonnegative");
  }
  if (std::abs(w_.sum() - 1.0) > kSimplexTol)
    throw InputError("class weights do not sum to one");
}

ClassWeights ClassWeights::uniform(int k) {
  if (k <= 0) throw InputError("number of classes must be positive");
  return ClassWeights(Vec::Constant(k, 1.0 / k));
}

ClassWeights ClassWeights::from_counts(const Vec& counts) {
  const double total = counts.sum();
  if (!(total > 0.0)) throw InputError("class counts sum to zero");
  return ClassWeights(counts / total);
}

ClassWeights ClassWeights::empirical(std::span<const int> labels, int k) {
  if (labels.empty()) throw InputError("no labels to estimate class proportions");
  Vec counts = Vec::Zero(k);
  for (int y : labels) {
    if (y < 0 || y >= k) throw InputError("label out of range");
    counts(y) += 1.0;
  }
  return from_counts(counts);
}

SubdomainPartition::SubdomainPartition(std::vector<int> assignments, int k)
    : assignments_(std::move(assignments)), k_(k) {
  if (k_ <= 0) throw InputError("partition needs at least one sub-domain");
  for (int a : assignments_) {
    if (a < 0 || a >= k_) throw InputError("sub-domain id out of range");
  }
}

std::vector<std::vector<int>> SubdomainPartition::members() const {
  std::vector<std::vector<int>> out(static_cast<std::size_t>(k_));
  for (std::size_t i = 0; i < assignments_.size(); ++i)
    out[static_cast<std::size_t>(assignments_[i])].push_back(static_cast<int>(i));
  return out;
}

std::vector<int> SubdomainPartition::counts() const {
  std::vector<int> c(static_cast<std::size_t>(k_), 0);
  for (int a : assignments_) ++c[static_cast<std::size_t>(a)];
  return c;
}

void Dataset::validate() const {
  if (num_classes <= 0) throw InputError("dataset needs a positive class count");
  if (!features.allFinite()) throw InputError("non-finite value in features");
  if (labels) {
    if (static_cast<Eigen::Index>(labels->size()) != features.rows())
      throw InputError("label count does not match feature rows");
    for (int y : *labels) {
      if (y < 0 || y >= num_classes) throw InputError("label out of range");
    }
  }
}

std::uint64_t derive_seed(std::uint64_t seed, std::uint64_t stream) {
  std::seed_seq seq{static_cast<std::uint32_t>(seed), static_cast<std::uint32_t>(seed >> 32),
                    static_cast<std::uint32_t>(stream), static_cast<std::uint32_t>(stream >> 32)};
  std::uint32_t out[2];
  seq.generate(out, out + 2);
  return (static_cast<std::uint64_t>(out[0]) << 32) | out[1];
}

Mat gather_rows(const Mat& x, std::span<const int> rows) {
  Mat out(static_cast<Eigen::Index>(rows.size()), x.cols());
  for (std::size_t i = 0; i < rows.size(); ++i)
    out.row(static_cast<Eigen::Index>(i)) = x.row(rows[i]);
  return out;
}

std::vector<Mat> split_by_class(const Mat& x, std::span<const int> ids, int k) {
  if (static_cast<Eigen::Index>(ids.size()) != x.rows())
    throw InputError("class ids do not match row count");
  const auto groups = SubdomainPartition(std::vector<int>(ids.begin(), ids.end()), k).members();
  std::vector<Mat> out;
  out.reserve(groups.size());
  for (const auto& g : groups) out.push_back(gather_rows(x, g));
  return out;
}

}  // namespace darsa
