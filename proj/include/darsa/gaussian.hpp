#ifndef DARSA_GAUSSIAN_HPP
#define DARSA_GAUSSIAN_HPP

#include "darsa/core.hpp"
#include "darsa/transport.hpp"

#include <Eigen/Cholesky>
#include <Eigen/Eigenvalues>

#include <cstdint>
#include <random>
#include <vector>

namespace darsa::ot {

/// N(mean, covariance). Covariance must be symmetric PSD to within 1e-9.
template <typename Scalar>
struct GaussianComponent {
  VectorX<Scalar> mean;
  MatrixX<Scalar> covariance;

  GaussianComponent() = default;
  GaussianComponent(VectorX<Scalar> m, MatrixX<Scalar> cov) : mean(std::move(m)), covariance(std::move(cov)) {
    validate();
  }

  static GaussianComponent isotropic(VectorX<Scalar> m, Scalar sigma) {
    const auto d = m.size();
    return GaussianComponent(std::move(m), MatrixX<Scalar>::Identity(d, d) * (sigma * sigma));
  }

  Eigen::Index dim() const noexcept { return mean.size(); }

  void validate() const {
    if (covariance.rows() != mean.size() || covariance.cols() != mean.size())
      throw InputError("covariance shape does not match mean");
    if (!mean.allFinite() || !covariance.allFinite()) throw InputError("non-finite value");
    if ((covariance - covariance.transpose()).cwiseAbs().maxCoeff() > Scalar(1e-9))
      throw InputError("covariance not symmetric");
    Eigen::SelfAdjointEigenSolver<MatrixX<Scalar>> es(covariance, Eigen::EigenvaluesOnly);
    if (es.info() != Eigen::Success || es.eigenvalues().minCoeff() < Scalar(-1e-9))
      throw InputError("covariance not positive semidefinite");
  }
};

template <typename Scalar>
struct GaussianMixture {
  ClassWeights weights;
  std::vector<GaussianComponent<Scalar>> components;

  GaussianMixture() = default;
  GaussianMixture(ClassWeights w, std::vector<GaussianComponent<Scalar>> comps)
      : weights(std::move(w)), components(std::move(comps)) {
    if (components.empty()) throw InputError("mixture has no components");
    if (static_cast<int>(components.size()) != weights.size())
      throw InputError("mixture weights and components differ in count");
    for (const auto& c : components)
      if (c.dim() != components.front().dim()) throw InputError("mixture components differ in dimension");
  }

  int size() const noexcept { return static_cast<int>(components.size()); }
  Eigen::Index dim() const noexcept { return components.front().dim(); }
};

using GaussianComponentXd = GaussianComponent<double>;
using GaussianMixtureXd = GaussianMixture<double>;

namespace detail {

template <typename Scalar>
MatrixX<Scalar> psd_sqrt(const MatrixX<Scalar>& s) {
  Eigen::SelfAdjointEigenSolver<MatrixX<Scalar>> es(s);
  if (es.info() != Eigen::Success) throw SolverError("spd sqrt failure");
  const VectorX<Scalar> root = es.eigenvalues().cwiseMax(Scalar(0)).cwiseSqrt();
  return es.eigenvectors() * root.asDiagonal() * es.eigenvectors().transpose();
}

// Any L with L L^T = covariance; Cholesky when it succeeds, otherwise the
// symmetric square root (covers rank-deficient covariances).
template <typename Scalar>
MatrixX<Scalar> sampling_factor(const MatrixX<Scalar>& covariance) {
  Eigen::LLT<MatrixX<Scalar>> llt(covariance);
  if (llt.info() == Eigen::Success) return llt.matrixL();
  return psd_sqrt(covariance);
}

}  // namespace detail

/// Bures-Wasserstein W2 between two Gaussians. Upper-bounds their W1.
template <typename Scalar>
Scalar gaussian_w2(const GaussianComponent<Scalar>& p, const GaussianComponent<Scalar>& q) {
  if (p.dim() != q.dim()) throw InputError("dimension mismatch");
  const MatrixX<Scalar> root_p = detail::psd_sqrt(p.covariance);
  const MatrixX<Scalar> cross = root_p * q.covariance * root_p;
  Eigen::SelfAdjointEigenSolver<MatrixX<Scalar>> es((cross + cross.transpose()) / Scalar(2),
                                                     Eigen::EigenvaluesOnly);
  if (es.info() != Eigen::Success) throw SolverError("spd sqrt failure");
  const Scalar cross_trace = es.eigenvalues().cwiseMax(Scalar(0)).cwiseSqrt().sum();
  const Scalar w2_sq = (p.mean - q.mean).squaredNorm() + p.covariance.trace() + q.covariance.trace() -
                       Scalar(2) * cross_trace;
  return std::sqrt(std::max(w2_sq, Scalar(0)));
}

template <typename Scalar>
struct LabeledSamples {
  MatrixX<Scalar> samples;
  std::vector<int> labels;
};

/// Draws n samples from one Gaussian using the caller's generator.
template <typename Scalar, typename Rng>
MatrixX<Scalar> sample_gaussian(const GaussianComponent<Scalar>& g, int n, Rng& rng) {
  const MatrixX<Scalar> factor = detail::sampling_factor(g.covariance);
  std::normal_distribution<Scalar> normal(Scalar(0), Scalar(1));
  MatrixX<Scalar> out(n, g.dim());
  VectorX<Scalar> z(g.dim());
  for (int i = 0; i < n; ++i) {
    for (Eigen::Index k = 0; k < z.size(); ++k) z(k) = normal(rng);
    out.row(i) = (g.mean + factor * z).transpose();
  }
  return out;
}

/// Ancestral sampling: component id from the mixture weights, then the
/// component's Gaussian. Deterministic for a fixed seed.
template <typename Scalar>
LabeledSamples<Scalar> sample_gmm(const GaussianMixture<Scalar>& mix, int n, std::uint64_t seed) {
  if (n < 1) throw InputError("sample count must be positive");
  std::vector<MatrixX<Scalar>> factors;
  factors.reserve(mix.components.size());
  for (const auto& c : mix.components) factors.push_back(detail::sampling_factor(c.covariance));

  std::mt19937_64 rng(seed);
  const Vec& w = mix.weights.values();
  std::discrete_distribution<int> pick(w.data(), w.data() + w.size());
  std::normal_distribution<Scalar> normal(Scalar(0), Scalar(1));
  LabeledSamples<Scalar> out;
  out.samples.resize(n, mix.dim());
  out.labels.resize(static_cast<std::size_t>(n));
  VectorX<Scalar> z(mix.dim());
  for (int i = 0; i < n; ++i) {
    const int k = pick(rng);
    for (Eigen::Index j = 0; j < z.size(); ++j) z(j) = normal(rng);
    const auto& c = mix.components[static_cast<std::size_t>(k)];
    out.samples.row(i) = (c.mean + factors[static_cast<std::size_t>(k)] * z).transpose();
    out.labels[static_cast<std::size_t>(i)] = k;
  }
  return out;
}

/// How MW1 prices a pair of components.
struct PairwiseMode {
  enum class Kind { AnalyticW2Bound, SampledSinkhorn };
  Kind kind = Kind::AnalyticW2Bound;
  int samples = 1000;  ///< per component, sampled mode only
  SinkhornParams sinkhorn{};
  std::uint64_t seed = 0;

  static PairwiseMode analytic() { return {}; }
  static PairwiseMode sampled(int n, double reg, std::uint64_t seed) {
    PairwiseMode m;
    m.kind = Kind::SampledSinkhorn;
    m.samples = n;
    m.sinkhorn.reg = reg;
    m.seed = seed;
    return m;
  }
};

template <typename Scalar>
struct MixtureDistance {
  Scalar value = 0;
  TransportPlan<Scalar> plan;        ///< K_s x K_t coupling of mixture weights
  MatrixX<Scalar> pairwise;          ///< component-to-component ground cost
};

/// Component-pair ground costs used by MW1.
template <typename Scalar>
MatrixX<Scalar> mixture_pairwise_costs(const GaussianMixture<Scalar>& s, const GaussianMixture<Scalar>& t,
                                       const PairwiseMode& mode) {
  if (s.dim() != t.dim()) throw InputError("dimension mismatch");
  MatrixX<Scalar> cost(s.size(), t.size());
  if (mode.kind == PairwiseMode::Kind::AnalyticW2Bound) {
    for (int i = 0; i < s.size(); ++i)
      for (int j = 0; j < t.size(); ++j)
        cost(i, j) = gaussian_w2(s.components[static_cast<std::size_t>(i)], t.components[static_cast<std::size_t>(j)]);
    return cost;
  }
  if (mode.samples < 1) throw InputError("sample count must be positive");
  // One sample cloud per component, reused across all pairs.
  std::mt19937_64 rng(mode.seed);
  std::vector<MatrixX<Scalar>> cs, ct;
  for (const auto& c : s.components) cs.push_back(sample_gaussian(c, mode.samples, rng));
  for (const auto& c : t.components) ct.push_back(sample_gaussian(c, mode.samples, rng));
  for (int i = 0; i < s.size(); ++i)
    for (int j = 0; j < t.size(); ++j)
      cost(i, j) = w1_empirical(cs[static_cast<std::size_t>(i)], ct[static_cast<std::size_t>(j)], mode.sinkhorn);
  return cost;
}

/// MW1: optimal transport between the mixture weights with component W1 as
/// ground cost. Analytic mode prices pairs by Bures W2, so its value is an
/// upper bound on MW1.
template <typename Scalar>
MixtureDistance<Scalar> mw1_gmm(const GaussianMixture<Scalar>& s, const GaussianMixture<Scalar>& t,
                                const PairwiseMode& mode = PairwiseMode::analytic()) {
  if (s.size() > 64 || t.size() > 64) throw InputError("at most 64 components per mixture");
  MixtureDistance<Scalar> out;
  out.pairwise = mixture_pairwise_costs(s, t, mode);
  const VectorX<Scalar> ws = s.weights.values().template cast<Scalar>();
  const VectorX<Scalar> wt = t.weights.values().template cast<Scalar>();
  out.plan = ot_exact_discrete(out.pairwise, ws, wt);
  out.value = out.plan.cost;
  return out;
}

}  // namespace darsa::ot

#endif  // DARSA_GAUSSIAN_HPP
