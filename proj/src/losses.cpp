#include "darsa/losses.hpp"

#include <cmath>
#include <string>

namespace darsa::nn {

namespace {

void check_labels(std::span<const int> labels, Eigen::Index rows, int k) {
  if (static_cast<Eigen::Index>(labels.size()) != rows) throw InputError("label count does not match rows");
  for (int y : labels)
    if (y < 0 || y >= k) throw InputError("label out of range");
}

}  // namespace

Vec importance_ratios(const ClassWeights& w_t, const ClassWeights& w_s, const ImportanceOptions& opt) {
  if (w_t.size() != w_s.size()) throw InputError("class cardinality mismatch");
  Vec r(w_s.size());
  for (int k = 0; k < w_s.size(); ++k) {
    if (w_s[k] < opt.weight_floor) throw InputError("degenerate source weight");
    r(k) = std::min(w_t[k] / w_s[k], opt.max_ratio);
  }
  return r;
}

LossValue loss_classification_weighted(const Mat& logits, std::span<const int> labels, const ClassWeights& w_t,
                                       const ClassWeights& w_s, const ImportanceOptions& opt) {
  const int k = static_cast<int>(logits.cols());
  if (w_s.size() != k) throw InputError("class cardinality mismatch");
  check_labels(labels, logits.rows(), k);
  const Vec ratio = importance_ratios(w_t, w_s, opt);
  const double n = static_cast<double>(logits.rows());
  LossValue out;
  out.grad.resize(logits.rows(), logits.cols());
  for (Eigen::Index i = 0; i < logits.rows(); ++i) {
    const double top = logits.row(i).maxCoeff();
    const auto shifted = (logits.row(i).array() - top).exp();
    const double z = shifted.sum();
    const int y = labels[static_cast<std::size_t>(i)];
    const double r = ratio(y);
    out.value += r * (std::log(z) + top - logits(i, y)) / n;
    out.grad.row(i) = (r / n) * (shifted / z).matrix();
    out.grad(i, y) -= r / n;
  }
  return out;
}

DiscrepancyLoss loss_discrepancy_weighted(const Mat& feat_s, std::span<const int> labels_s, const Mat& feat_t,
                                          std::span<const int> labels_t, const ClassWeights& w_t,
                                          const ot::SinkhornParams& params) {
  if (feat_s.cols() != feat_t.cols()) throw InputError("dimension mismatch");
  const int k = w_t.size();
  check_labels(labels_s, feat_s.rows(), k);
  check_labels(labels_t, feat_t.rows(), k);
  DiscrepancyLoss out;
  out.grad_source = Mat::Zero(feat_s.rows(), feat_s.cols());
  out.grad_target = Mat::Zero(feat_t.rows(), feat_t.cols());
  const auto src = SubdomainPartition({labels_s.begin(), labels_s.end()}, k).members();
  const auto tgt = SubdomainPartition({labels_t.begin(), labels_t.end()}, k).members();
  for (int c = 0; c < k; ++c) {
    const auto& si = src[static_cast<std::size_t>(c)];
    const auto& ti = tgt[static_cast<std::size_t>(c)];
    if (si.empty() || ti.empty()) {
      ++out.skipped;
      continue;
    }
    const Mat xs = gather_rows(feat_s, si), xt = gather_rows(feat_t, ti);
    const auto plan = ot::w1_empirical_plan(xs, xt, params);
    const double w = w_t[c];
    out.value += w * plan.cost;
    out.entropic_value += w * plan.entropic_objective;
    if (w == 0.0) continue;
    for (Eigen::Index i = 0; i < xs.rows(); ++i) {
      for (Eigen::Index j = 0; j < xt.rows(); ++j) {
        const auto diff = xs.row(i) - xt.row(j);
        const double dist = diff.norm();
        if (dist <= 0.0) continue;  // subgradient zero at coincident points
        const Eigen::RowVectorXd step = (w * plan.coupling(i, j) / dist) * diff;
        out.grad_source.row(si[static_cast<std::size_t>(i)]) += step;
        out.grad_target.row(ti[static_cast<std::size_t>(j)]) -= step;
      }
    }
  }
  return out;
}

LossValue loss_intra(const Mat& features, std::span<const int> labels, double margin) {
  if (!(margin > 0.0)) throw InputError("margin must be positive");
  if (features.rows() == 0) throw InputError("empty batch");
  if (static_cast<Eigen::Index>(labels.size()) != features.rows()) throw InputError("label count does not match rows");
  const Eigen::Index n = features.rows();
  const double scale = 1.0 / static_cast<double>(n * n);
  // coef(i,j) = d(pair term)/d(squared distance): 1 same label, -1 active hinge, else 0.
  Mat coef = Mat::Zero(n, n);
  double total = 0.0;
  for (Eigen::Index i = 0; i < n; ++i) {
    for (Eigen::Index j = 0; j < n; ++j) {
      if (i == j) continue;
      const double d2 = (features.row(i) - features.row(j)).squaredNorm();
      if (labels[static_cast<std::size_t>(i)] == labels[static_cast<std::size_t>(j)]) {
        total += d2;
        coef(i, j) = 1.0;
      } else if (d2 < margin) {
        total += margin - d2;
        coef(i, j) = -1.0;
      }
    }
  }
  LossValue out;
  out.value = scale * total;
  // Each unordered pair appears twice, each copy contributing 2 (x_i - x_j).
  out.grad = (4.0 * scale) * (coef.rowwise().sum().asDiagonal() * features - coef * features);
  return out;
}

InterLoss loss_inter(const Mat& feat_s, std::span<const int> labels_s, const Mat& feat_t,
                     std::span<const int> labels_t, int num_classes) {
  if (num_classes < 1) throw InputError("need at least one class");
  if (feat_s.cols() != feat_t.cols()) throw InputError("dimension mismatch");
  check_labels(labels_s, feat_s.rows(), num_classes);
  check_labels(labels_t, feat_t.rows(), num_classes);
  const auto src = SubdomainPartition({labels_s.begin(), labels_s.end()}, num_classes).members();
  const auto tgt = SubdomainPartition({labels_t.begin(), labels_t.end()}, num_classes).members();
  InterLoss out;
  out.grad_source = Mat::Zero(feat_s.rows(), feat_s.cols());
  out.grad_target = Mat::Zero(feat_t.rows(), feat_t.cols());
  std::vector<std::pair<int, Vec>> gaps;
  for (int c = 0; c < num_classes; ++c) {
    const auto& si = src[static_cast<std::size_t>(c)];
    const auto& ti = tgt[static_cast<std::size_t>(c)];
    if (si.empty() || ti.empty()) {
      ++out.skipped;
      continue;
    }
    const Vec cs = gather_rows(feat_s, si).colwise().mean().transpose();
    const Vec ct = gather_rows(feat_t, ti).colwise().mean().transpose();
    gaps.emplace_back(c, cs - ct);
  }
  if (gaps.empty()) return out;
  const double inv = 1.0 / static_cast<double>(gaps.size());
  for (const auto& [c, gap] : gaps) {
    out.value += inv * gap.squaredNorm();
    const auto& si = src[static_cast<std::size_t>(c)];
    const auto& ti = tgt[static_cast<std::size_t>(c)];
    const Vec gs = (2.0 * inv / static_cast<double>(si.size())) * gap;
    const Vec gt = (2.0 * inv / static_cast<double>(ti.size())) * gap;
    for (int i : si) out.grad_source.row(i) = gs.transpose();
    for (int j : ti) out.grad_target.row(j) = -gt.transpose();
  }
  return out;
}

LossBundle LossBundle::combine(double l_y, double l_d, double l_intra, double l_inter, const LossWeights& w) {
  return {l_y, l_d, l_intra, l_inter, w.lambda_y * l_y + w.lambda_d * l_d + w.lambda_c * l_intra + w.lambda_a * l_inter};
}

void to_json(nlohmann::json& j, const LossBundle& b) {
  j = {{"l_y", b.l_y}, {"l_d", b.l_d}, {"l_intra", b.l_intra}, {"l_inter", b.l_inter}, {"total", b.total}};
}

void from_json(const nlohmann::json& j, LossBundle& b) {
  b.l_y = j.at("l_y").get<double>();
  b.l_d = j.at("l_d").get<double>();
  b.l_intra = j.at("l_intra").get<double>();
  b.l_inter = j.at("l_inter").get<double>();
  b.total = j.at("total").get<double>();
}

}  // namespace darsa::nn
