#include "darsa/bounds.hpp"

#include <algorithm>
#include <cmath>

namespace darsa::bounds {

namespace {

void require_same_length(std::span<const int> a, std::span<const int> b) {
  if (a.size() != b.size()) throw InputError("prediction and label lengths differ");
  if (a.empty()) throw InputError("no samples");
}

double trace_of_covariance(const Mat& x) {
  if (x.rows() < 2) return 0.0;
  const Mat centred = x.rowwise() - x.colwise().mean();
  return centred.squaredNorm() / static_cast<double>(x.rows() - 1);
}

}  // namespace

double source_risk(std::span<const int> predictions, std::span<const int> labels) {
  require_same_length(predictions, labels);
  std::size_t wrong = 0;
  for (std::size_t i = 0; i < labels.size(); ++i) wrong += predictions[i] != labels[i] ? 1 : 0;
  return static_cast<double>(wrong) / static_cast<double>(labels.size());
}

SubdomainRisks subdomain_risks(std::span<const int> predictions, std::span<const int> labels,
                               const SubdomainPartition& partition) {
  require_same_length(predictions, labels);
  if (partition.size() != labels.size()) throw InputError("partition does not cover the samples");
  const int k = partition.num_subdomains();
  Vec wrong = Vec::Zero(k), count = Vec::Zero(k);
  const auto ids = partition.assignments();
  for (std::size_t i = 0; i < labels.size(); ++i) {
    count(ids[i]) += 1.0;
    if (predictions[i] != labels[i]) wrong(ids[i]) += 1.0;
  }
  SubdomainRisks out;
  out.risks = Vec::Zero(k);
  out.empty.assign(static_cast<std::size_t>(k), false);
  for (int c = 0; c < k; ++c) {
    if (count(c) == 0.0) {
      out.empty[static_cast<std::size_t>(c)] = true;
      ++out.skipped;
    } else {
      out.risks(c) = wrong(c) / count(c);
    }
  }
  return out;
}

double check_decomposition(std::span<const int> predictions, std::span<const int> labels,
                           const SubdomainPartition& partition) {
  const double overall = source_risk(predictions, labels);
  const auto per = subdomain_risks(predictions, labels, partition);
  const auto counts = partition.counts();
  double mixed = 0.0;
  for (int k = 0; k < partition.num_subdomains(); ++k)
    mixed += static_cast<double>(counts[static_cast<std::size_t>(k)]) / static_cast<double>(labels.size()) * per.risks(k);
  return std::abs(overall - mixed);
}

double delta_c(std::span<const Mat> parts) {
  const bool any = std::any_of(parts.begin(), parts.end(), [](const Mat& p) { return p.rows() > 0; });
  if (!any) throw InputError("delta_c needs at least one non-empty part");
  double worst = 0.0;
  for (const auto& p : parts) worst = std::max(worst, trace_of_covariance(p));
  return 4.0 * std::sqrt(worst);
}

BoundReport bound_report(const BoundInputs& in, const ClassWeights& w_t, const ot::SinkhornParams& sinkhorn) {
  const int k = w_t.size();
  if (in.source_features.cols() != in.target_features.cols())
    throw InputError("source and target features live in different spaces");
  if (static_cast<Eigen::Index>(in.source_labels.size()) != in.source_features.rows() ||
      static_cast<Eigen::Index>(in.target_pseudo_labels.size()) != in.target_features.rows())
    throw InputError("label count does not match feature rows");

  BoundReport r;
  r.gamma_s = source_risk(in.source_predictions, in.source_labels);
  const SubdomainPartition source_parts(std::vector<int>(in.source_labels.begin(), in.source_labels.end()), k);
  const auto risks = subdomain_risks(in.source_predictions, in.source_labels, source_parts);
  r.gamma_s_weighted = w_t.values().dot(risks.risks);

  r.disc_overall = ot::w1_empirical(in.source_features, in.target_features, sinkhorn);
  const auto s_parts = split_by_class(in.source_features, in.source_labels, k);
  const auto t_parts = split_by_class(in.target_features, in.target_pseudo_labels, k);
  const auto weighted = ot::weighted_subdomain_w1(s_parts, t_parts, w_t, sinkhorn);
  r.disc_weighted = weighted.value;
  r.skipped_subdomains = weighted.skipped;

  std::vector<Mat> all_parts(s_parts);
  all_parts.insert(all_parts.end(), t_parts.begin(), t_parts.end());
  r.delta_c = delta_c(all_parts);

  r.eps_g_partial = r.gamma_s + r.disc_overall;
  r.eps_c_partial = r.gamma_s_weighted + r.disc_weighted;
  return r;
}

void to_json(nlohmann::json& j, const BoundReport& r) {
  j = nlohmann::json{{"gamma_s", r.gamma_s},
                     {"gamma_s_weighted", r.gamma_s_weighted},
                     {"disc_overall", r.disc_overall},
                     {"disc_weighted", r.disc_weighted},
                     {"delta_c", r.delta_c},
                     {"eps_g_partial", r.eps_g_partial},
                     {"eps_c_partial", r.eps_c_partial},
                     {"skipped_subdomains", r.skipped_subdomains}};
}

void from_json(const nlohmann::json& j, BoundReport& r) {
  j.at("gamma_s").get_to(r.gamma_s);
  j.at("gamma_s_weighted").get_to(r.gamma_s_weighted);
  j.at("disc_overall").get_to(r.disc_overall);
  j.at("disc_weighted").get_to(r.disc_weighted);
  j.at("delta_c").get_to(r.delta_c);
  j.at("eps_g_partial").get_to(r.eps_g_partial);
  j.at("eps_c_partial").get_to(r.eps_c_partial);
  j.at("skipped_subdomains").get_to(r.skipped_subdomains);
}

}  // namespace darsa::bounds
