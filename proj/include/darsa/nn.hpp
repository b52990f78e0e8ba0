#ifndef DARSA_NN_HPP
#define DARSA_NN_HPP

// Small fully connected networks with hand-written reverse-mode gradients.
// Samples are rows: a layer maps X (n x in) to act(X W^T + 1 b^T).

#include "darsa/core.hpp"

#include "json.hpp"

#include <cstdint>
#include <span>
#include <string>
#include <string_view>
#include <vector>

namespace darsa::nn {

enum class Activation { Identity, Relu, LeakyRelu, Softplus };

std::string_view to_string(Activation a);
Activation parse_activation(std::string_view name);

inline constexpr double kLeakySlope = 0.01;

struct Layer {
  Mat weight;  ///< out x in
  Vec bias;    ///< out
  Activation activation = Activation::Identity;
};

struct NetworkParams {
  std::vector<Layer> layers;
  /// Bumped by every in-place update; forward caches remember it.
  std::uint64_t revision = 0;

  Eigen::Index input_dim() const;
  Eigen::Index output_dim() const;
  std::size_t parameter_count() const;
  /// Throws InputError if shapes do not chain or a parameter is non-finite.
  void validate() const;
};

/// Layer sizes `widths` (input first), one activation per layer. He-uniform
/// init for the relu family, Xavier-uniform otherwise, zero biases.
NetworkParams make_network(std::span<const int> widths, std::span<const Activation> activations,
                           std::uint64_t seed);

/// Values kept by forward() for the matching backward().
struct ForwardCache {
  std::vector<Mat> inputs;       ///< input to each layer
  std::vector<Mat> preactivations;
  std::uint64_t revision = 0;
  bool filled = false;
};

Mat forward(const NetworkParams& net, const Mat& x);
Mat forward(const NetworkParams& net, const Mat& x, ForwardCache& cache);

struct Gradients {
  std::vector<Mat> weight;
  std::vector<Vec> bias;
  Mat input;  ///< d loss / d network input

  static Gradients zeros_like(const NetworkParams& net);
};

/// Exact gradients of a scalar loss given d loss / d output. Throws
/// InputError ("stale forward cache") if the network changed since forward().
Gradients backward(const NetworkParams& net, const ForwardCache& cache, const Mat& upstream);

/// Momentum buffers, one per parameter tensor.
struct Velocity {
  std::vector<Mat> weight;
  std::vector<Vec> bias;

  static Velocity zeros_like(const NetworkParams& net);
};

/// Raised for non-finite gradients; carries the offending layer.
class GradientBlowup : public TrainingError {
 public:
  explicit GradientBlowup(std::size_t layer)
      : TrainingError("gradient blowup in layer " + std::to_string(layer)), layer_(layer) {}
  std::size_t layer() const noexcept { return layer_; }

 private:
  std::size_t layer_;
};

/// v <- momentum * v + g; theta <- theta - lr * v.
void sgd_momentum_step(NetworkParams& net, const Gradients& grads, Velocity& velocity, double lr,
                       double momentum);

/// Row-wise argmax; ties go to the lowest index.
std::vector<int> argmax_rows(const Mat& scores);

inline constexpr int kCheckpointVersion = 1;

void to_json(nlohmann::json& j, const NetworkParams& net);
void from_json(const nlohmann::json& j, NetworkParams& net);

}  // namespace darsa::nn

#endif  // DARSA_NN_HPP
