#ifndef DARSA_SYNTHDATA_HPP
#define DARSA_SYNTHDATA_HPP

// Seeded generators for two-domain Gaussian tasks, class-proportion
// resampling, and CSV / JSON-manifest I/O for datasets.

#include "darsa/core.hpp"
#include "darsa/gaussian.hpp"

#include "json.hpp"

#include <cstdint>
#include <filesystem>
#include <optional>

namespace darsa::synth {

struct TaskPair {
  Dataset source;
  Dataset target;  ///< labels kept for evaluation
  ot::GaussianMixtureXd source_model;
  ot::GaussianMixtureXd target_model;
  nlohmann::json manifest;  ///< generator name, parameters, seed, shapes
};

/// 1-D two-class task: source 0.7 N(-1.5, s^2) + 0.3 N(1.5, s^2), target
/// 0.3 N(-1.4, s^2) + 0.7 N(1.6, s^2). Class = generating component.
TaskPair make_figure1_task(double sigma, int n_per_domain, std::uint64_t seed);

struct ShiftedGmmSpec {
  int num_classes = 3;
  int dim = 2;
  double mean_separation = 1.0;
  double target_mean_shift = 0.5;
  ClassWeights source_props = ClassWeights::uniform(3);
  ClassWeights target_props = ClassWeights::uniform(3);
  int n_per_domain = 1000;
  double sigma = 0.3;
  std::uint64_t seed = 0;
  int audit_sample = 200;  ///< per-class subsample for the paired-distance audit
  int max_attempts = 10;

  void validate() const;
};

/// Class means on a centred grid of side ceil(K^(1/d)) with spacing
/// `separation`; rows are classes.
Mat grid_means(int num_classes, int dim, double separation);

/// Isotropic class Gaussians at grid_means; target means shifted along
/// (1,...,1)/sqrt(d). Regenerates until each class is closest to its own
/// counterpart across domains; throws SolverError when attempts run out.
TaskPair make_shifted_gmm(const ShiftedGmmSpec& spec);

/// Per class k, distance between source class k and target class l (sampled
/// Sinkhorn W1). Classes missing on a side give +inf.
Mat cross_class_w1(const Dataset& source, const Dataset& target, int per_class, std::uint64_t seed);

/// True when every diagonal entry is strictly below the rest of its row and
/// column. Non-finite diagonal entries are ignored.
bool paired_distance_holds(const Mat& cross);

/// Draws round(n * props_k) samples of each class with replacement, shuffled.
Dataset resample_with_props(const Dataset& data, const ClassWeights& props, int n, std::uint64_t seed);

/// CSV with header f0..f{d-1} and an optional trailing `label` column.
void write_csv(const Dataset& data, const std::filesystem::path& path);
/// `num_classes` defaults to max label + 1 (1 when unlabeled).
Dataset read_csv(const std::filesystem::path& path, std::optional<int> num_classes = std::nullopt);

nlohmann::json mixture_to_json(const ot::GaussianMixtureXd& mix);
ot::GaussianMixtureXd mixture_from_json(const nlohmann::json& j);

void write_json(const nlohmann::json& j, const std::filesystem::path& path);
nlohmann::json read_json(const std::filesystem::path& path);

}  // namespace darsa::synth

#endif  // DARSA_SYNTHDATA_HPP
