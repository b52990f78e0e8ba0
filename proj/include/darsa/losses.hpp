#ifndef DARSA_LOSSES_HPP
#define DARSA_LOSSES_HPP

// The four training terms with gradients w.r.t. their matrix arguments.
// Rows are samples; label spans index rows.

#include "darsa/core.hpp"
#include "darsa/transport.hpp"

#include "json.hpp"

#include <span>

namespace darsa::nn {

struct LossValue {
  double value = 0.0;
  Mat grad;
};

struct ImportanceOptions {
  double weight_floor = 1e-3;  ///< smallest admissible source weight
  double max_ratio = 10.0;     ///< cap on w_T / w_S
};

/// Per-class importance ratios min(w_T^k / w_S^k, max_ratio). Throws
/// InputError("degenerate source weight") if some w_S^k < floor.
Vec importance_ratios(const ClassWeights& w_t, const ClassWeights& w_s, const ImportanceOptions& opt = {});

/// (1/n) sum_i r_{y_i} CE(logits_i, y_i), gradient w.r.t. the logits.
LossValue loss_classification_weighted(const Mat& logits, std::span<const int> labels, const ClassWeights& w_t,
                                       const ClassWeights& w_s, const ImportanceOptions& opt = {});

struct DiscrepancyLoss {
  double value = 0.0;            ///< sum_k w_T^k <pi_k, C_k>
  double entropic_value = 0.0;   ///< same sum over the entropic dual objectives
  Mat grad_source;
  Mat grad_target;
  int skipped = 0;
};

/// Class-paired Sinkhorn W1 weighted by w_T. Gradients hold each coupling
/// fixed; they are exact for `entropic_value`.
DiscrepancyLoss loss_discrepancy_weighted(const Mat& feat_s, std::span<const int> labels_s, const Mat& feat_t,
                                          std::span<const int> labels_t, const ClassWeights& w_t,
                                          const ot::SinkhornParams& params);

/// Contrastive term over all n^2 ordered pairs of one batch.
LossValue loss_intra(const Mat& features, std::span<const int> labels, double margin);

struct InterLoss {
  double value = 0.0;
  Mat grad_source;
  Mat grad_target;
  int skipped = 0;
};

/// Mean squared distance between matching class centroids of the two sides,
/// over classes present on both.
InterLoss loss_inter(const Mat& feat_s, std::span<const int> labels_s, const Mat& feat_t,
                     std::span<const int> labels_t, int num_classes);

struct LossWeights {
  double lambda_y = 1.0;
  double lambda_d = 1.0;
  double lambda_c = 1.0;
  double lambda_a = 1.0;
};

struct LossBundle {
  double l_y = 0.0;
  double l_d = 0.0;
  double l_intra = 0.0;
  double l_inter = 0.0;
  double total = 0.0;

  static LossBundle combine(double l_y, double l_d, double l_intra, double l_inter, const LossWeights& w);
};

void to_json(nlohmann::json& j, const LossBundle& b);
void from_json(const nlohmann::json& j, LossBundle& b);

}  // namespace darsa::nn

#endif  // DARSA_LOSSES_HPP
