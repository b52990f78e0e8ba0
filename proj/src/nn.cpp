#include "darsa/nn.hpp"

#include <cmath>
#include <random>

namespace darsa::nn {

namespace {

Mat activate(const Mat& z, Activation a) {
  switch (a) {
    case Activation::Identity:
      return z;
    case Activation::Relu:
      return z.cwiseMax(0.0);
    case Activation::LeakyRelu:
      return z.unaryExpr([](double v) { return v > 0.0 ? v : kLeakySlope * v; });
    case Activation::Softplus:
      return z.unaryExpr([](double v) { return v > 0.0 ? v + std::log1p(std::exp(-v)) : std::log1p(std::exp(v)); });
  }
  return z;
}

Mat activation_derivative(const Mat& z, Activation a) {
  switch (a) {
    case Activation::Identity:
      return Mat::Ones(z.rows(), z.cols());
    case Activation::Relu:
      return z.unaryExpr([](double v) { return v > 0.0 ? 1.0 : 0.0; });
    case Activation::LeakyRelu:
      return z.unaryExpr([](double v) { return v > 0.0 ? 1.0 : kLeakySlope; });
    case Activation::Softplus:
      return z.unaryExpr([](double v) { return 1.0 / (1.0 + std::exp(-v)); });
  }
  return Mat::Ones(z.rows(), z.cols());
}

bool relu_family(Activation a) { return a == Activation::Relu || a == Activation::LeakyRelu; }

}  // namespace

std::string_view to_string(Activation a) {
  switch (a) {
    case Activation::Identity:
      return "identity";
    case Activation::Relu:
      return "relu";
    case Activation::LeakyRelu:
      return "leaky-relu";
    case Activation::Softplus:
      return "softplus";
  }
  return "identity";
}

Activation parse_activation(std::string_view name) {
  if (name == "identity") return Activation::Identity;
  if (name == "relu") return Activation::Relu;
  if (name == "leaky-relu") return Activation::LeakyRelu;
  if (name == "softplus") return Activation::Softplus;
  throw InputError("unknown activation '" + std::string(name) + "'");
}

Eigen::Index NetworkParams::input_dim() const { return layers.empty() ? 0 : layers.front().weight.cols(); }

Eigen::Index NetworkParams::output_dim() const { return layers.empty() ? 0 : layers.back().weight.rows(); }

std::size_t NetworkParams::parameter_count() const {
  std::size_t n = 0;
  for (const auto& l : layers) n += static_cast<std::size_t>(l.weight.size() + l.bias.size());
  return n;
}

void NetworkParams::validate() const {
  if (layers.empty()) throw InputError("network has no layers");
  for (std::size_t i = 0; i < layers.size(); ++i) {
    const auto& l = layers[i];
    if (l.bias.size() != l.weight.rows()) throw InputError("bias length does not match layer width");
    if (i > 0 && l.weight.cols() != layers[i - 1].weight.rows()) throw InputError("layer dimensions do not chain");
    if (!l.weight.allFinite() || !l.bias.allFinite()) throw InputError("non-finite network parameter");
  }
}

NetworkParams make_network(std::span<const int> widths, std::span<const Activation> activations,
                           std::uint64_t seed) {
  if (widths.size() < 2) throw InputError("a network needs input and output widths");
  if (activations.size() != widths.size() - 1) throw InputError("need one activation per layer");
  std::mt19937_64 rng(seed);
  NetworkParams net;
  for (std::size_t i = 0; i + 1 < widths.size(); ++i) {
    const int in = widths[i], out = widths[i + 1];
    if (in <= 0 || out <= 0) throw InputError("layer widths must be positive");
    const double limit = relu_family(activations[i]) ? std::sqrt(6.0 / in) : std::sqrt(6.0 / (in + out));
    std::uniform_real_distribution<double> u(-limit, limit);
    Layer layer;
    layer.weight = Mat::NullaryExpr(out, in, [&]() { return u(rng); });
    layer.bias = Vec::Zero(out);
    layer.activation = activations[i];
    net.layers.push_back(std::move(layer));
  }
  return net;
}

Mat forward(const NetworkParams& net, const Mat& x) {
  ForwardCache scratch;
  return forward(net, x, scratch);
}

Mat forward(const NetworkParams& net, const Mat& x, ForwardCache& cache) {
  if (net.layers.empty()) throw InputError("network has no layers");
  if (x.cols() != net.input_dim()) throw InputError("dimension mismatch: input has " + std::to_string(x.cols()) +
                                                    " columns, network expects " + std::to_string(net.input_dim()));
  cache.inputs.clear();
  cache.preactivations.clear();
  Mat h = x;
  for (const auto& l : net.layers) {
    Mat z = h * l.weight.transpose();
    z.rowwise() += l.bias.transpose();
    cache.inputs.push_back(std::move(h));
    h = activate(z, l.activation);
    cache.preactivations.push_back(std::move(z));
  }
  cache.revision = net.revision;
  cache.filled = true;
  return h;
}

Gradients Gradients::zeros_like(const NetworkParams& net) {
  Gradients g;
  for (const auto& l : net.layers) {
    g.weight.push_back(Mat::Zero(l.weight.rows(), l.weight.cols()));
    g.bias.push_back(Vec::Zero(l.bias.size()));
  }
  g.input = Mat::Zero(0, net.input_dim());
  return g;
}

Gradients backward(const NetworkParams& net, const ForwardCache& cache, const Mat& upstream) {
  if (!cache.filled || cache.revision != net.revision || cache.inputs.size() != net.layers.size())
    throw InputError("stale forward cache");
  for (std::size_t i = 0; i < net.layers.size(); ++i)
    if (cache.inputs[i].cols() != net.layers[i].weight.cols()) throw InputError("stale forward cache");
  const Mat& last = cache.preactivations.back();
  if (upstream.rows() != last.rows() || upstream.cols() != last.cols())
    throw InputError("upstream gradient shape does not match network output");

  Gradients g;
  g.weight.resize(net.layers.size());
  g.bias.resize(net.layers.size());
  Mat delta = upstream;
  for (std::size_t i = net.layers.size(); i-- > 0;) {
    const auto& l = net.layers[i];
    delta = delta.cwiseProduct(activation_derivative(cache.preactivations[i], l.activation));
    g.weight[i] = delta.transpose() * cache.inputs[i];
    g.bias[i] = delta.colwise().sum().transpose();
    delta = delta * l.weight;
  }
  g.input = std::move(delta);
  return g;
}

Velocity Velocity::zeros_like(const NetworkParams& net) {
  Velocity v;
  for (const auto& l : net.layers) {
    v.weight.push_back(Mat::Zero(l.weight.rows(), l.weight.cols()));
    v.bias.push_back(Vec::Zero(l.bias.size()));
  }
  return v;
}

void sgd_momentum_step(NetworkParams& net, const Gradients& grads, Velocity& velocity, double lr,
                       double momentum) {
  if (!(lr >= 0.0)) throw InputError("learning rate must be nonnegative");
  if (!(momentum >= 0.0 && momentum < 1.0)) throw InputError("momentum must lie in [0, 1)");
  if (grads.weight.size() != net.layers.size() || velocity.weight.size() != net.layers.size())
    throw InputError("gradient shapes do not match the network");
  for (std::size_t i = 0; i < net.layers.size(); ++i) {
    if (grads.weight[i].rows() != net.layers[i].weight.rows() || grads.weight[i].cols() != net.layers[i].weight.cols() ||
        grads.bias[i].size() != net.layers[i].bias.size())
      throw InputError("gradient shapes do not match the network");
    if (!grads.weight[i].allFinite() || !grads.bias[i].allFinite()) throw GradientBlowup(i);
  }
  // Staged so a blowup leaves both the network and the velocity untouched.
  Velocity v = velocity;
  std::vector<Layer> next = net.layers;
  for (std::size_t i = 0; i < net.layers.size(); ++i) {
    v.weight[i] = momentum * v.weight[i] + grads.weight[i];
    v.bias[i] = momentum * v.bias[i] + grads.bias[i];
    next[i].weight -= lr * v.weight[i];
    next[i].bias -= lr * v.bias[i];
    if (!next[i].weight.allFinite() || !next[i].bias.allFinite()) throw GradientBlowup(i);
  }
  velocity = std::move(v);
  net.layers = std::move(next);
  ++net.revision;
}

std::vector<int> argmax_rows(const Mat& scores) {
  std::vector<int> out(static_cast<std::size_t>(scores.rows()));
  for (Eigen::Index i = 0; i < scores.rows(); ++i) {
    Eigen::Index best = 0;
    for (Eigen::Index k = 1; k < scores.cols(); ++k)
      if (scores(i, k) > scores(i, best)) best = k;
    out[static_cast<std::size_t>(i)] = static_cast<int>(best);
  }
  return out;
}

void to_json(nlohmann::json& j, const NetworkParams& net) {
  j = nlohmann::json::object();
  j["format_version"] = kCheckpointVersion;
  auto& layers = j["layers"] = nlohmann::json::array();
  for (const auto& l : net.layers) {
    const RowMat w = l.weight;  // serialised row-major
    layers.push_back({{"in", l.weight.cols()},
                      {"out", l.weight.rows()},
                      {"activation", to_string(l.activation)},
                      {"weight", std::vector<double>(w.data(), w.data() + w.size())},
                      {"bias", std::vector<double>(l.bias.data(), l.bias.data() + l.bias.size())}});
  }
}

void from_json(const nlohmann::json& j, NetworkParams& net) {
  const int version = j.at("format_version").get<int>();
  if (version != kCheckpointVersion)
    throw InputError("unsupported checkpoint format version " + std::to_string(version));
  net = NetworkParams{};
  for (const auto& jl : j.at("layers")) {
    const auto in = jl.at("in").get<Eigen::Index>(), out = jl.at("out").get<Eigen::Index>();
    const auto w = jl.at("weight").get<std::vector<double>>();
    const auto b = jl.at("bias").get<std::vector<double>>();
    if (in <= 0 || out <= 0 || static_cast<Eigen::Index>(w.size()) != in * out ||
        static_cast<Eigen::Index>(b.size()) != out)
      throw InputError("checkpoint layer arrays do not match their shape");
    Layer layer;
    layer.weight = Eigen::Map<const RowMat>(w.data(), out, in);
    layer.bias = Eigen::Map<const Vec>(b.data(), out);
    layer.activation = parse_activation(jl.at("activation").get<std::string>());
    net.layers.push_back(std::move(layer));
  }
  net.validate();
}

}  // namespace darsa::nn
