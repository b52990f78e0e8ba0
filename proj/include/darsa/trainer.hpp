#ifndef DARSA_TRAINER_HPP
#define DARSA_TRAINER_HPP

// Training driver: source pretraining, target prior estimation, and the
// alternating source / target encoder updates.

#include "darsa/bounds.hpp"
#include "darsa/core.hpp"
#include "darsa/losses.hpp"
#include "darsa/nn.hpp"

#include "json.hpp"

#include <cstdint>
#include <functional>
#include <optional>
#include <span>
#include <vector>

namespace darsa {

struct DarsaConfig {
  double lambda_y = 1.0;
  double lambda_d = 0.1;
  double lambda_c = 0.1;
  double lambda_a = 0.1;
  double margin = 1.0;  ///< hinge on squared feature distance
  double lr = 0.05;
  double momentum = 0.5;
  int batch_size = 128;
  int pretrain_epochs = 30;
  int epochs = 5;
  double sinkhorn_reg = 0.05;
  double sinkhorn_tol = 1e-4;
  int sinkhorn_max_iter = 2000;
  double weight_floor = 1e-3;
  double max_importance_ratio = 10.0;
  std::uint64_t seed = 0;

  // Network shape: input -> hidden... -> feature_dim (linear) -> K logits.
  std::vector<int> hidden{16};
  int feature_dim = 8;
  nn::Activation activation = nn::Activation::LeakyRelu;

  /// Keep w_T equal to the source proportions instead of estimating it.
  bool fix_target_weights = false;
  /// Copy the source encoder into the target encoder after every step.
  bool share_encoders = false;
  /// Per-domain row cap for the per-epoch bound snapshot.
  int bound_sample = 500;

  /// Throws InputError when a field is out of range.
  void validate() const;
  nn::LossWeights loss_weights() const { return {lambda_y, lambda_d, lambda_c, lambda_a}; }
  ot::SinkhornParams sinkhorn() const { return {sinkhorn_reg, sinkhorn_max_iter, sinkhorn_tol}; }
  nn::ImportanceOptions importance() const { return {weight_floor, max_importance_ratio}; }

  /// Source-only baseline: no alignment terms, w_T = w_S, one shared encoder.
  DarsaConfig source_only() const;
};

void to_json(nlohmann::json& j, const DarsaConfig& c);
/// Missing keys keep their defaults; unknown keys are an InputError.
void from_json(const nlohmann::json& j, DarsaConfig& c);

struct Model {
  nn::NetworkParams encoder_source;
  nn::NetworkParams encoder_target;
  nn::NetworkParams classifier;
  int num_classes = 0;
};

/// Fresh seeded networks for `input_dim` features and `num_classes` classes.
Model make_model(Eigen::Index input_dim, int num_classes, const DarsaConfig& config);

void to_json(nlohmann::json& j, const Model& m);
void from_json(const nlohmann::json& j, Model& m);

struct EpochRecord {
  int epoch = 0;  ///< 1-based adaptation epoch
  nn::LossBundle losses;
  ClassWeights w_t;
  double source_accuracy = 0.0;
  std::optional<double> target_accuracy;
  bounds::BoundReport bounds;
  int skipped_discrepancy = 0;
  int skipped_inter = 0;
  double seconds = 0.0;  ///< wall clock, left out of the JSON record
};

void to_json(nlohmann::json& j, const EpochRecord& r);

struct TrainMetrics {
  double pretrain_source_accuracy = 0.0;
  std::optional<double> pretrain_target_accuracy;
  std::vector<EpochRecord> epochs;
};

using EpochCallback = std::function<void(const EpochRecord&)>;

/// Plain cross-entropy SGD on the source for config.pretrain_epochs.
void pretrain(nn::NetworkParams& encoder_s, nn::NetworkParams& classifier, const Dataset& source,
              const DarsaConfig& config);

/// Mean softmax over the target rows, clamped below at `floor`, renormalised.
ClassWeights estimate_target_weights(const nn::NetworkParams& encoder_t, const nn::NetworkParams& classifier,
                                     const Mat& x_target, double floor);

/// Argmax of the logits; ties go to the lower class id.
std::vector<int> predict(const nn::NetworkParams& encoder, const nn::NetworkParams& classifier, const Mat& x);

double accuracy(std::span<const int> predicted, std::span<const int> truth);

struct FitResult {
  Model model;
  TrainMetrics metrics;
};

/// Pretrains, then runs config.epochs adaptation epochs. `on_epoch` sees
/// each record as soon as it is complete. Throws TrainingError naming the
/// epoch and batch when an update fails.
FitResult fit(const Dataset& source, const Dataset& target, const DarsaConfig& config,
              std::optional<std::span<const int>> eval_labels = std::nullopt, const EpochCallback& on_epoch = {});

}  // namespace darsa

#endif  // DARSA_TRAINER_HPP
