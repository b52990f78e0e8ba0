#ifndef DARSA_BOUNDS_HPP
#define DARSA_BOUNDS_HPP

// Empirical estimators for the terms of the overall and sub-domain
// generalisation bounds. The ideal joint errors and Lipschitz constants have
// no estimator and are left out; reports compare the computable parts only.

#include "darsa/core.hpp"
#include "darsa/transport.hpp"

#include "json.hpp"

#include <span>
#include <vector>

namespace darsa::bounds {

/// Fraction of mismatched predictions (0-1 risk).
double source_risk(std::span<const int> predictions, std::span<const int> labels);

struct SubdomainRisks {
  Vec risks;               ///< per sub-domain 0-1 risk, 0 where empty
  std::vector<bool> empty;
  int skipped = 0;
};

SubdomainRisks subdomain_risks(std::span<const int> predictions, std::span<const int> labels,
                               const SubdomainPartition& partition);

/// |risk - sum_k p_k risk_k| with p_k the empirical sub-domain proportions.
/// The identity is exact, so this is rounding error only.
double check_decomposition(std::span<const int> predictions, std::span<const int> labels,
                           const SubdomainPartition& partition);

/// 4 sqrt(max_k trace(Cov_k)) over the given parts (unbiased covariance;
/// parts with fewer than two rows count as zero).
double delta_c(std::span<const Mat> parts);

struct BoundReport {
  double gamma_s = 0;
  double gamma_s_weighted = 0;
  double disc_overall = 0;
  double disc_weighted = 0;
  double delta_c = 0;
  double eps_g_partial = 0;  ///< gamma_s + disc_overall
  double eps_c_partial = 0;  ///< gamma_s_weighted + disc_weighted
  int skipped_subdomains = 0;

  /// eps_c_partial <= eps_g_partial + delta_c + slack
  bool ordering_holds(double slack = 0.0) const { return eps_c_partial <= eps_g_partial + delta_c + slack; }
};

struct BoundInputs {
  const Mat& source_features;
  std::span<const int> source_predictions;
  std::span<const int> source_labels;
  const Mat& target_features;
  std::span<const int> target_pseudo_labels;
};

/// Fills every report field. Source sub-domains come from labels, target
/// sub-domains from pseudo-labels; the number of classes is |w_t|.
BoundReport bound_report(const BoundInputs& in, const ClassWeights& w_t, const ot::SinkhornParams& sinkhorn);

void to_json(nlohmann::json& j, const BoundReport& r);
void from_json(const nlohmann::json& j, BoundReport& r);

}  // namespace darsa::bounds

#endif  // DARSA_BOUNDS_HPP
