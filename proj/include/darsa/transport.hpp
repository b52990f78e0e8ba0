#ifndef DARSA_TRANSPORT_HPP
#define DARSA_TRANSPORT_HPP

// Discrete optimal transport: an exact transportation-simplex solver, a
// log-domain Sinkhorn solver and the Wasserstein-1 estimators built on them.
// Every routine is a free function templated on the Eigen scalar type.

#include "darsa/core.hpp"

#include <Eigen/Core>

#include <algorithm>
#include <cmath>
#include <limits>
#include <optional>
#include <span>
#include <utility>
#include <vector>

namespace darsa::ot {

template <typename Scalar>
using MatrixX = Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic>;
template <typename Scalar>
using VectorX = Eigen::Matrix<Scalar, Eigen::Dynamic, 1>;

/// A coupling between two discrete marginals and its transport cost.
template <typename Scalar>
struct TransportPlan {
  MatrixX<Scalar> coupling;
  VectorX<Scalar> row_marginal;
  VectorX<Scalar> col_marginal;
  Scalar cost = 0;  ///< <coupling, C>, entropy excluded
  /// Sinkhorn only: the entropic dual objective. Its derivative with respect
  /// to C is exactly the coupling.
  Scalar entropic_objective = 0;
  int iterations = 0;
  Scalar marginal_residual = 0;  ///< L1 violation of both marginals
};

using TransportPlanXd = TransportPlan<double>;

struct SinkhornParams {
  double reg = 0.01;
  int max_iter = 10000;
  double tol = 1e-6;
  /// Anneal the regulariser geometrically from the cost scale down to `reg`,
  /// warm-starting the potentials at each level.
  bool eps_scaling = true;
};

namespace detail {

inline void require(bool ok, const char* what) {
  if (!ok) throw InputError(what);
}

template <typename Derived>
void require_finite(const Eigen::DenseBase<Derived>& x) {
  if (!x.derived().allFinite()) throw InputError("non-finite value");
}

template <typename Derived>
void require_probability(const Eigen::MatrixBase<Derived>& p, double tol) {
  using Scalar = typename Derived::Scalar;
  if (p.size() == 0) throw InputError("invalid marginals: empty");
  if (!p.allFinite() || (p.array() < Scalar(0)).any())
    throw InputError("invalid marginals: negative or non-finite entry");
  if (std::abs(static_cast<double>(p.sum()) - 1.0) > tol) throw InputError("invalid marginals");
}

// Log-sum-exp that tolerates -inf entries (zero-mass atoms).
template <typename Derived>
typename Derived::Scalar log_sum_exp(const Eigen::ArrayBase<Derived>& v) {
  using Scalar = typename Derived::Scalar;
  const Scalar hi = v.maxCoeff();
  if (!std::isfinite(hi)) return hi;
  return hi + std::log((v - hi).exp().sum());
}

// Transportation simplex (the network simplex specialised to a complete
// bipartite graph). The basis is a spanning tree of n + m - 1 cells over the
// row and column nodes; potentials satisfy u_i + v_j = C_ij on it.
template <typename Scalar>
class TransportationSimplex {
 public:
  TransportationSimplex(const MatrixX<Scalar>& cost, const VectorX<Scalar>& a,
                        const VectorX<Scalar>& b)
      : cost_(cost), n_(static_cast<int>(cost.rows())), m_(static_cast<int>(cost.cols())),
        flow_(MatrixX<Scalar>::Zero(cost.rows(), cost.cols())),
        basic_(static_cast<std::size_t>(n_) * m_, false) {
    northwest_corner(a, b);
  }

  MatrixX<Scalar> solve() {
    const Scalar scale = std::max<Scalar>(Scalar(1), cost_.cwiseAbs().maxCoeff());
    const Scalar rc_tol = Scalar(1e-12) * scale;
    const long max_pivots = 100L * n_ * m_ + 1000;
    int degenerate_streak = 0;
    bool bland = false;
    for (long pivot = 0; pivot < max_pivots; ++pivot) {
      compute_potentials();
      const auto entering = choose_entering(rc_tol, bland);
      if (!entering) return flow_;
      const Scalar theta = pivot_on(entering->first, entering->second);
      degenerate_streak = theta <= Scalar(0) ? degenerate_streak + 1 : 0;
      // Dantzig pricing can cycle on degenerate vertices; Bland's rule cannot.
      if (degenerate_streak > n_ + m_) bland = true;
    }
    throw SolverError("transportation simplex exceeded its pivot budget");
  }

 private:
  struct Cell {
    int row;
    int col;
  };

  std::size_t index(int i, int j) const { return static_cast<std::size_t>(i) * m_ + j; }

  void northwest_corner(VectorX<Scalar> ra, VectorX<Scalar> rb) {
    int i = 0, j = 0;
    for (;;) {
      const Scalar q = std::max<Scalar>(Scalar(0), std::min(ra(i), rb(j)));
      flow_(i, j) = q;
      ra(i) -= q;
      rb(j) -= q;
      add_basic(i, j);
      if (i == n_ - 1 && j == m_ - 1) break;
      if (i == n_ - 1) {
        ++j;
      } else if (j == m_ - 1) {
        ++i;
      } else if (ra(i) <= rb(j)) {
        ++i;
      } else {
        ++j;
      }
    }
  }

  void add_basic(int i, int j) {
    basis_.push_back({i, j});
    basic_[index(i, j)] = true;
  }

  // Adjacency over nodes 0..n-1 (rows) and n..n+m-1 (columns).
  std::vector<std::vector<int>> adjacency() const {
    std::vector<std::vector<int>> adj(static_cast<std::size_t>(n_ + m_));
    for (int e = 0; e < static_cast<int>(basis_.size()); ++e) {
      adj[static_cast<std::size_t>(basis_[e].row)].push_back(e);
      adj[static_cast<std::size_t>(n_ + basis_[e].col)].push_back(e);
    }
    return adj;
  }

  int other_end(int node, int edge) const {
    const Cell& c = basis_[static_cast<std::size_t>(edge)];
    return node < n_ ? n_ + c.col : c.row;
  }

  void compute_potentials() {
    const auto adj = adjacency();
    u_.assign(static_cast<std::size_t>(n_), Scalar(0));
    v_.assign(static_cast<std::size_t>(m_), Scalar(0));
    std::vector<bool> seen(static_cast<std::size_t>(n_ + m_), false);
    std::vector<int> stack{0};
    seen[0] = true;
    while (!stack.empty()) {
      const int node = stack.back();
      stack.pop_back();
      for (int e : adj[static_cast<std::size_t>(node)]) {
        const int next = other_end(node, e);
        if (seen[static_cast<std::size_t>(next)]) continue;
        seen[static_cast<std::size_t>(next)] = true;
        const Cell& c = basis_[static_cast<std::size_t>(e)];
        if (next >= n_) {
          v_[static_cast<std::size_t>(c.col)] = cost_(c.row, c.col) - u_[static_cast<std::size_t>(c.row)];
        } else {
          u_[static_cast<std::size_t>(c.row)] = cost_(c.row, c.col) - v_[static_cast<std::size_t>(c.col)];
        }
        stack.push_back(next);
      }
    }
  }

  std::optional<std::pair<int, int>> choose_entering(Scalar rc_tol, bool bland) const {
    std::optional<std::pair<int, int>> best;
    Scalar best_rc = -rc_tol;
    for (int i = 0; i < n_; ++i) {
      for (int j = 0; j < m_; ++j) {
        if (basic_[index(i, j)]) continue;
        const Scalar rc = cost_(i, j) - u_[static_cast<std::size_t>(i)] - v_[static_cast<std::size_t>(j)];
        if (rc < best_rc) {
          best = std::make_pair(i, j);
          if (bland) return best;
          best_rc = rc;
        }
      }
    }
    return best;
  }

  // Pushes flow around the cycle closed by the entering cell; returns theta.
  Scalar pivot_on(int p, int q) {
    const auto adj = adjacency();
    // Tree path from row node p to column node n + q.
    std::vector<int> parent_edge(static_cast<std::size_t>(n_ + m_), -1);
    std::vector<bool> seen(static_cast<std::size_t>(n_ + m_), false);
    std::vector<int> stack{p};
    seen[static_cast<std::size_t>(p)] = true;
    while (!stack.empty()) {
      const int node = stack.back();
      stack.pop_back();
      if (node == n_ + q) break;
      for (int e : adj[static_cast<std::size_t>(node)]) {
        const int next = other_end(node, e);
        if (seen[static_cast<std::size_t>(next)]) continue;
        seen[static_cast<std::size_t>(next)] = true;
        parent_edge[static_cast<std::size_t>(next)] = e;
        stack.push_back(next);
      }
    }
    // Walking back from column q, edges alternate -, +, -, ... ending with -.
    std::vector<int> path;
    for (int node = n_ + q; node != p;) {
      const int e = parent_edge[static_cast<std::size_t>(node)];
      path.push_back(e);
      node = other_end(node, e);
    }
    Scalar theta = std::numeric_limits<Scalar>::infinity();
    int leaving = -1;
    for (std::size_t k = 0; k < path.size(); k += 2) {
      const Cell& c = basis_[static_cast<std::size_t>(path[k])];
      const Scalar x = flow_(c.row, c.col);
      const bool better = x < theta ||
          (x == theta && index(c.row, c.col) <
                             index(basis_[static_cast<std::size_t>(leaving)].row,
                                   basis_[static_cast<std::size_t>(leaving)].col));
      if (leaving < 0 || better) {
        theta = x;
        leaving = path[k];
      }
    }
    theta = std::max<Scalar>(theta, Scalar(0));
    flow_(p, q) += theta;
    for (std::size_t k = 0; k < path.size(); ++k) {
      const Cell& c = basis_[static_cast<std::size_t>(path[k])];
      flow_(c.row, c.col) += (k % 2 == 0) ? -theta : theta;
    }
    Cell& out = basis_[static_cast<std::size_t>(leaving)];
    flow_(out.row, out.col) = Scalar(0);
    basic_[index(out.row, out.col)] = false;
    out = {p, q};
    basic_[index(p, q)] = true;
    return theta;
  }

  const MatrixX<Scalar>& cost_;
  int n_;
  int m_;
  MatrixX<Scalar> flow_;
  std::vector<bool> basic_;
  std::vector<Cell> basis_;
  std::vector<Scalar> u_;
  std::vector<Scalar> v_;
};

// Projects a nearly feasible coupling onto the transport polytope: scale
// down over-full rows, then columns, and spread the remaining deficit as a
// rank-one correction. Moves at most the L1 marginal violation in mass.
template <typename Scalar>
void round_to_marginals(MatrixX<Scalar>& p, const VectorX<Scalar>& a, const VectorX<Scalar>& b) {
  const VectorX<Scalar> rows = p.rowwise().sum();
  for (Eigen::Index i = 0; i < p.rows(); ++i)
    if (rows(i) > a(i)) p.row(i) *= a(i) / rows(i);
  const VectorX<Scalar> cols = p.colwise().sum().transpose();
  for (Eigen::Index j = 0; j < p.cols(); ++j)
    if (cols(j) > b(j)) p.col(j) *= b(j) / cols(j);
  const VectorX<Scalar> err_r = (a - p.rowwise().sum()).cwiseMax(Scalar(0));
  const VectorX<Scalar> err_c = (b - p.colwise().sum().transpose()).cwiseMax(Scalar(0));
  const Scalar total = err_c.sum();
  if (total > Scalar(0)) p.noalias() += err_r * err_c.transpose() / total;
}

template <typename Derived>
bool lexicographically_before(const Eigen::MatrixBase<Derived>& x, const Eigen::MatrixBase<Derived>& y) {
  if (x.rows() != y.rows()) return x.rows() < y.rows();
  for (Eigen::Index i = 0; i < x.rows(); ++i)
    for (Eigen::Index j = 0; j < x.cols(); ++j)
      if (x(i, j) != y(i, j)) return x(i, j) < y(i, j);
  return false;
}

}  // namespace detail

/// Exact W1 between two 1-D empirical distributions: the integral of
/// |F_a^-1(u) - F_b^-1(u)| over the merged quantile breakpoints.
template <typename DA, typename DB>
typename DA::Scalar w1_exact_1d(const Eigen::DenseBase<DA>& samples_a, const Eigen::DenseBase<DB>& samples_b) {
  using Scalar = typename DA::Scalar;
  if (samples_a.size() == 0 || samples_b.size() == 0) throw InputError("empty sample set");
  if (!samples_a.derived().allFinite() || !samples_b.derived().allFinite())
    throw InputError("non-finite value");
  std::vector<Scalar> a(static_cast<std::size_t>(samples_a.size()));
  std::vector<Scalar> b(static_cast<std::size_t>(samples_b.size()));
  for (Eigen::Index i = 0; i < samples_a.size(); ++i) a[static_cast<std::size_t>(i)] = samples_a.derived()(i);
  for (Eigen::Index i = 0; i < samples_b.size(); ++i) b[static_cast<std::size_t>(i)] = samples_b.derived()(i);
  std::sort(a.begin(), a.end());
  std::sort(b.begin(), b.end());
  const std::size_t n = a.size(), m = b.size();
  if (n == m) {
    Scalar total = 0;
    for (std::size_t k = 0; k < n; ++k) total += std::abs(a[k] - b[k]);
    return total / static_cast<Scalar>(n);
  }
  // Breakpoints k/n and l/m, walked in integer units of 1/(n m).
  std::size_t i = 0, j = 0, u = 0;
  Scalar total = 0;
  while (i < n && j < m) {
    const std::size_t next = std::min((i + 1) * m, (j + 1) * n);
    total += static_cast<Scalar>(next - u) * std::abs(a[i] - b[j]);
    u = next;
    if ((i + 1) * m == next) ++i;
    if ((j + 1) * n == next) ++j;
  }
  return total / static_cast<Scalar>(n * m);
}

/// Pairwise Euclidean ground cost, C_ij = |x_i - y_j|_2.
template <typename DX, typename DY>
MatrixX<typename DX::Scalar> euclidean_cost(const Eigen::MatrixBase<DX>& x, const Eigen::MatrixBase<DY>& y) {
  using Scalar = typename DX::Scalar;
  if (x.cols() != y.cols()) throw InputError("dimension mismatch");
  MatrixX<Scalar> c(x.rows(), y.rows());
  for (Eigen::Index j = 0; j < y.rows(); ++j)
    c.col(j) = (x.rowwise() - y.row(j)).rowwise().norm();
  return c;
}

/// Minimum-cost coupling by the transportation simplex. Marginals must be
/// probability vectors to within 1e-9.
template <typename DC, typename DA, typename DB>
TransportPlan<typename DC::Scalar> ot_exact_discrete(const Eigen::MatrixBase<DC>& cost_matrix,
                                                     const Eigen::MatrixBase<DA>& a,
                                                     const Eigen::MatrixBase<DB>& b) {
  using Scalar = typename DC::Scalar;
  detail::require(cost_matrix.rows() == a.size() && cost_matrix.cols() == b.size(),
                  "cost matrix shape does not match marginals");
  detail::require(cost_matrix.rows() <= 64 && cost_matrix.cols() <= 64,
                  "exact solver supports at most 64 atoms per side");
  detail::require_finite(cost_matrix);
  detail::require_probability(a, 1e-9);
  detail::require_probability(b, 1e-9);

  const MatrixX<Scalar> cost = cost_matrix;
  TransportPlan<Scalar> plan;
  plan.row_marginal = a;
  plan.col_marginal = b;
  plan.coupling = detail::TransportationSimplex<Scalar>(cost, plan.row_marginal, plan.col_marginal).solve();
  plan.coupling = plan.coupling.cwiseMax(Scalar(0));
  plan.cost = (plan.coupling.array() * cost.array()).sum();
  plan.marginal_residual = (plan.coupling.rowwise().sum() - plan.row_marginal).cwiseAbs().sum() +
                           (plan.coupling.colwise().sum().transpose() - plan.col_marginal).cwiseAbs().sum();
  return plan;
}

/// Entropy-regularised OT by Sinkhorn scaling in the log domain. Stops once
/// the L1 marginal violation is at most `tol`; throws SolverError ("sinkhorn
/// diverged") when max_iter is exhausted with violation above 100 * tol.
/// The returned coupling is rounded onto the exact marginals;
/// `marginal_residual` reports the violation before rounding.
template <typename DC, typename DA, typename DB>
TransportPlan<typename DC::Scalar> sinkhorn(const Eigen::MatrixBase<DC>& cost_matrix,
                                            const Eigen::MatrixBase<DA>& a,
                                            const Eigen::MatrixBase<DB>& b,
                                            const SinkhornParams& params) {
  using Scalar = typename DC::Scalar;
  using Vector = VectorX<Scalar>;
  detail::require(params.reg > 0.0, "sinkhorn regulariser must be positive");
  detail::require(params.max_iter > 0, "max_iter must be positive");
  detail::require(params.tol > 0.0, "tol must be positive");
  detail::require(cost_matrix.rows() == a.size() && cost_matrix.cols() == b.size(),
                  "cost matrix shape does not match marginals");
  detail::require_finite(cost_matrix);
  detail::require_probability(a, 1e-6);
  detail::require_probability(b, 1e-6);

  const MatrixX<Scalar> cost = cost_matrix;
  const MatrixX<Scalar> cost_t = cost.transpose();
  const Eigen::Index n = cost.rows(), m = cost.cols();
  const Vector log_a = a.array().log().matrix();
  const Vector log_b = b.array().log().matrix();
  Vector f = Vector::Zero(n), g = Vector::Zero(m);

  // lse(i) = log sum_j exp((g_j - C_ij) / eps); it drives the f half-step and
  // also yields the current row sums, exp(f_i / eps + lse(i)).
  Vector lse(n);
  auto row_lse = [&](Scalar eps) {
    for (Eigen::Index i = 0; i < n; ++i) lse(i) = detail::log_sum_exp((g - cost_t.col(i)).array() / eps);
  };
  auto update_f = [&](Scalar eps) { f = eps * (log_a - lse); };
  auto update_g = [&](Scalar eps) {
    for (Eigen::Index j = 0; j < m; ++j)
      g(j) = eps * (log_b(j) - detail::log_sum_exp((f - cost.col(j)).array() / eps));
  };

  // Columns are exact after a g half-step; rows carry the violation.
  // Valid right after row_lse(eps).
  auto row_violation = [&](Scalar eps) {
    Scalar r(0);
    for (Eigen::Index i = 0; i < n; ++i)
      r += std::abs((std::isfinite(f(i)) ? std::exp(f(i) / eps + lse(i)) : Scalar(0)) - a(i));
    return r;
  };

  const auto reg = static_cast<Scalar>(params.reg);
  int iterations = 0;
  if (params.eps_scaling) {
    // Coarse levels only need rough potentials; the final level enforces tol.
    const Scalar coarse_tol = std::max(static_cast<Scalar>(params.tol), Scalar(1e-3));
    Scalar eps = std::max(reg, cost.maxCoeff());
    while (eps > reg) {
      for (int k = 0; k < 200; ++k) {
        row_lse(eps);
        if (k > 0 && row_violation(eps) <= coarse_tol) break;
        update_f(eps);
        update_g(eps);
        ++iterations;
      }
      eps = std::max(reg, eps * Scalar(0.5));
    }
  }

  Scalar residual = std::numeric_limits<Scalar>::infinity();
  for (int it = 0; it <= params.max_iter; ++it) {
    row_lse(reg);
    if (iterations > 0) {
      residual = row_violation(reg);
      if (!std::isfinite(residual) || residual <= params.tol) break;
    }
    if (it == params.max_iter) break;
    update_f(reg);
    update_g(reg);
    ++iterations;
  }
  if (!std::isfinite(residual) || residual > Scalar(100) * static_cast<Scalar>(params.tol))
    throw SolverError("sinkhorn diverged", static_cast<double>(residual));

  TransportPlan<Scalar> plan;
  plan.row_marginal = a;
  plan.col_marginal = b;
  plan.coupling.resize(n, m);
  for (Eigen::Index j = 0; j < m; ++j)
    plan.coupling.col(j) = ((f + Vector::Constant(n, g(j)) - cost.col(j)).array() / reg).exp().matrix();
  const Scalar mass = plan.coupling.sum();
  Scalar dual = -reg * (mass - Scalar(1));
  for (Eigen::Index i = 0; i < n; ++i)
    if (a(i) > 0) dual += a(i) * f(i);
  for (Eigen::Index j = 0; j < m; ++j)
    if (b(j) > 0) dual += b(j) * g(j);
  plan.entropic_objective = dual;
  plan.iterations = iterations;
  plan.marginal_residual = (plan.coupling.rowwise().sum() - plan.row_marginal).cwiseAbs().sum() +
                           (plan.coupling.colwise().sum().transpose() - plan.col_marginal).cwiseAbs().sum();
  detail::round_to_marginals(plan.coupling, plan.row_marginal, plan.col_marginal);
  plan.cost = (plan.coupling.array() * cost.array()).sum();
  return plan;
}

/// Sinkhorn W1 between two point clouds (Euclidean ground cost, uniform
/// weights). The pair is put in a canonical order first so the result is
/// bit-for-bit symmetric.
template <typename DX, typename DY>
TransportPlan<typename DX::Scalar> w1_empirical_plan(const Eigen::MatrixBase<DX>& x,
                                                     const Eigen::MatrixBase<DY>& y,
                                                     const SinkhornParams& params) {
  using Scalar = typename DX::Scalar;
  if (x.rows() == 0 || y.rows() == 0) throw InputError("empty sample set");
  if (x.cols() != y.cols()) throw InputError("dimension mismatch");
  detail::require_finite(x);
  detail::require_finite(y);
  const MatrixX<Scalar> xs = x, ys = y;
  const bool swap = detail::lexicographically_before(ys, xs);
  const MatrixX<Scalar>& first = swap ? ys : xs;
  const MatrixX<Scalar>& second = swap ? xs : ys;
  const VectorX<Scalar> a = VectorX<Scalar>::Constant(first.rows(), Scalar(1) / first.rows());
  const VectorX<Scalar> b = VectorX<Scalar>::Constant(second.rows(), Scalar(1) / second.rows());
  auto plan = sinkhorn(euclidean_cost(first, second), a, b, params);
  if (swap) {
    plan.coupling.transposeInPlace();
    std::swap(plan.row_marginal, plan.col_marginal);
  }
  return plan;
}

template <typename DX, typename DY>
typename DX::Scalar w1_empirical(const Eigen::MatrixBase<DX>& x, const Eigen::MatrixBase<DY>& y,
                                 const SinkhornParams& params) {
  return w1_empirical_plan(x, y, params).cost;
}

template <typename Scalar>
struct SubdomainDistance {
  Scalar value = 0;
  int skipped = 0;                             ///< pairs with an empty side
  std::vector<std::optional<Scalar>> paired;   ///< per-class W1, empty if skipped
};

/// sum_k w_T^k W1(source_k, target_k) over the class-paired sub-domains.
template <typename Scalar>
SubdomainDistance<Scalar> weighted_subdomain_w1(std::span<const MatrixX<Scalar>> source_parts,
                                                std::span<const MatrixX<Scalar>> target_parts,
                                                const ClassWeights& w_t, const SinkhornParams& params) {
  if (source_parts.size() != target_parts.size())
    throw InputError("source and target sub-domain counts differ");
  if (static_cast<int>(source_parts.size()) != w_t.size())
    throw InputError("weight vector length does not match sub-domain count");
  SubdomainDistance<Scalar> out;
  out.paired.resize(source_parts.size());
  for (std::size_t k = 0; k < source_parts.size(); ++k) {
    if (source_parts[k].rows() == 0 || target_parts[k].rows() == 0) {
      ++out.skipped;
      continue;
    }
    const Scalar d = w1_empirical(source_parts[k], target_parts[k], params);
    out.paired[k] = d;
    out.value += static_cast<Scalar>(w_t[static_cast<int>(k)]) * d;
  }
  if (out.skipped == static_cast<int>(source_parts.size())) throw InputError("no aligned sub-domains");
  return out;
}

template <typename Scalar>
SubdomainDistance<Scalar> weighted_subdomain_w1(const std::vector<MatrixX<Scalar>>& source_parts,
                                                const std::vector<MatrixX<Scalar>>& target_parts,
                                                const ClassWeights& w_t, const SinkhornParams& params) {
  return weighted_subdomain_w1<Scalar>(std::span<const MatrixX<Scalar>>(source_parts),
                                       std::span<const MatrixX<Scalar>>(target_parts), w_t, params);
}

}  // namespace darsa::ot

#endif  // DARSA_TRANSPORT_HPP
