#include "darsa/trainer.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <numeric>
#include <random>
#include <string>

namespace darsa {

namespace {

constexpr std::uint64_t kSourceStream = 1;
constexpr std::uint64_t kTargetStream = 2;
constexpr std::uint64_t kEncoderInit = 3;
constexpr std::uint64_t kClassifierInit = 4;
constexpr std::uint64_t kBoundSample = 5;

// Epoch-wise shuffled minibatches over one dataset.
class BatchStream {
 public:
  BatchStream(Eigen::Index n, int batch, std::uint64_t seed)
      : order_(static_cast<std::size_t>(n)), batch_(std::min<Eigen::Index>(batch, n)), rng_(seed) {
    std::iota(order_.begin(), order_.end(), 0);
    cursor_ = order_.size();
  }

  int batches_per_epoch() const {
    return static_cast<int>((static_cast<Eigen::Index>(order_.size()) + batch_ - 1) / batch_);
  }

  /// Next batch of row ids; the last batch of a pass may be short.
  std::vector<int> next() {
    if (cursor_ >= order_.size()) {
      std::shuffle(order_.begin(), order_.end(), rng_);
      cursor_ = 0;
    }
    const std::size_t end = std::min(order_.size(), cursor_ + static_cast<std::size_t>(batch_));
    std::vector<int> ids(order_.begin() + static_cast<std::ptrdiff_t>(cursor_),
                         order_.begin() + static_cast<std::ptrdiff_t>(end));
    cursor_ = end;
    return ids;
  }

 private:
  std::vector<int> order_;
  Eigen::Index batch_;
  std::size_t cursor_;
  std::mt19937_64 rng_;
};

std::vector<int> pick(std::span<const int> labels, const std::vector<int>& ids) {
  std::vector<int> out;
  out.reserve(ids.size());
  for (int i : ids) out.push_back(labels[static_cast<std::size_t>(i)]);
  return out;
}

struct SourceState {
  BatchStream stream;
  nn::Velocity v_encoder;
  nn::Velocity v_classifier;
};

void pretrain_epochs(nn::NetworkParams& enc, nn::NetworkParams& clf, const Dataset& source, const DarsaConfig& cfg,
                     SourceState& state, int epochs) {
  const auto& labels = *source.labels;
  const auto w = ClassWeights::uniform(source.num_classes);
  for (int e = 0; e < epochs; ++e) {
    for (int b = 0; b < state.stream.batches_per_epoch(); ++b) {
      try {
        const auto ids = state.stream.next();
        const auto y = pick(labels, ids);
        nn::ForwardCache ce, cc;
        const Mat feats = nn::forward(enc, gather_rows(source.features, ids), ce);
        const Mat logits = nn::forward(clf, feats, cc);
        if (!logits.allFinite()) throw TrainingError("non-finite activations");
        const auto loss = nn::loss_classification_weighted(logits, y, w, w, cfg.importance());
        const auto gc = nn::backward(clf, cc, loss.grad);
        const auto ge = nn::backward(enc, ce, gc.input);
        nn::sgd_momentum_step(clf, gc, state.v_classifier, cfg.lr, cfg.momentum);
        nn::sgd_momentum_step(enc, ge, state.v_encoder, cfg.lr, cfg.momentum);
      } catch (const TrainingError& err) {
        throw TrainingError("pretrain epoch " + std::to_string(e + 1) + " batch " + std::to_string(b + 1) + ": " +
                            err.what());
      }
    }
  }
}

void require_source(const Dataset& source) {
  if (!source.labeled()) throw InputError("source dataset needs labels");
  if (source.size() == 0) throw InputError("source dataset is empty");
  source.validate();
}

std::vector<int> subsample_rows(Eigen::Index n, int cap, std::mt19937_64& rng) {
  std::vector<int> rows(static_cast<std::size_t>(n));
  std::iota(rows.begin(), rows.end(), 0);
  if (n > cap) {
    std::shuffle(rows.begin(), rows.end(), rng);
    rows.resize(static_cast<std::size_t>(cap));
    std::sort(rows.begin(), rows.end());
  }
  return rows;
}

// Feature scale drifts during training; the snapshot regulariser follows it.
ot::SinkhornParams snapshot_sinkhorn(ot::SinkhornParams p, const Mat& a, const Mat& b) {
  const double mean_cost = ot::euclidean_cost(a, b).mean();
  if (std::isfinite(mean_cost)) p.reg *= std::max(1.0, mean_cost);
  return p;
}

}  // namespace

void DarsaConfig::validate() const {
  for (double l : {lambda_y, lambda_d, lambda_c, lambda_a})
    if (!(l >= 0.0) || !std::isfinite(l)) throw InputError("loss weights must be finite and nonnegative");
  if (!(margin > 0.0)) throw InputError("margin must be positive");
  if (!(lr >= 0.0) || !std::isfinite(lr)) throw InputError("learning rate must be nonnegative");
  if (!(momentum >= 0.0 && momentum < 1.0)) throw InputError("momentum must lie in [0, 1)");
  if (batch_size < 1) throw InputError("batch size must be positive");
  if (pretrain_epochs < 0 || epochs < 0) throw InputError("epoch counts must be nonnegative");
  if (!(sinkhorn_reg > 0.0) || !(sinkhorn_tol > 0.0) || sinkhorn_max_iter < 1)
    throw InputError("sinkhorn settings must be positive");
  if (!(weight_floor > 0.0 && weight_floor < 1.0)) throw InputError("weight floor must lie in (0, 1)");
  if (!(max_importance_ratio >= 1.0)) throw InputError("importance ratio cap must be at least 1");
  if (feature_dim < 1) throw InputError("feature dimension must be positive");
  for (int h : hidden)
    if (h < 1) throw InputError("hidden widths must be positive");
  if (bound_sample < 2) throw InputError("bound sample must be at least 2");
}

DarsaConfig DarsaConfig::source_only() const {
  DarsaConfig c = *this;
  c.lambda_d = c.lambda_c = c.lambda_a = 0.0;
  c.fix_target_weights = true;
  c.share_encoders = true;
  return c;
}

void to_json(nlohmann::json& j, const DarsaConfig& c) {
  j = {{"lambda_y", c.lambda_y},
       {"lambda_d", c.lambda_d},
       {"lambda_c", c.lambda_c},
       {"lambda_a", c.lambda_a},
       {"margin", c.margin},
       {"lr", c.lr},
       {"momentum", c.momentum},
       {"batch_size", c.batch_size},
       {"pretrain_epochs", c.pretrain_epochs},
       {"epochs", c.epochs},
       {"sinkhorn_reg", c.sinkhorn_reg},
       {"sinkhorn_tol", c.sinkhorn_tol},
       {"sinkhorn_max_iter", c.sinkhorn_max_iter},
       {"weight_floor", c.weight_floor},
       {"max_importance_ratio", c.max_importance_ratio},
       {"seed", c.seed},
       {"hidden", c.hidden},
       {"feature_dim", c.feature_dim},
       {"activation", nn::to_string(c.activation)},
       {"fix_target_weights", c.fix_target_weights},
       {"share_encoders", c.share_encoders},
       {"bound_sample", c.bound_sample}};
}

void from_json(const nlohmann::json& j, DarsaConfig& c) {
  if (!j.is_object()) throw InputError("training config must be a JSON object");
  nlohmann::json defaults = DarsaConfig{};
  for (const auto& [key, value] : j.items())
    if (!defaults.contains(key)) throw InputError("unknown training config key '" + key + "'");
  try {
    auto get = [&](const char* key, auto& field) {
      if (j.contains(key)) field = j.at(key).get<std::decay_t<decltype(field)>>();
    };
    get("lambda_y", c.lambda_y);
    get("lambda_d", c.lambda_d);
    get("lambda_c", c.lambda_c);
    get("lambda_a", c.lambda_a);
    get("margin", c.margin);
    get("lr", c.lr);
    get("momentum", c.momentum);
    get("batch_size", c.batch_size);
    get("pretrain_epochs", c.pretrain_epochs);
    get("epochs", c.epochs);
    get("sinkhorn_reg", c.sinkhorn_reg);
    get("sinkhorn_tol", c.sinkhorn_tol);
    get("sinkhorn_max_iter", c.sinkhorn_max_iter);
    get("weight_floor", c.weight_floor);
    get("max_importance_ratio", c.max_importance_ratio);
    get("seed", c.seed);
    get("hidden", c.hidden);
    get("feature_dim", c.feature_dim);
    get("fix_target_weights", c.fix_target_weights);
    get("share_encoders", c.share_encoders);
    get("bound_sample", c.bound_sample);
    if (j.contains("activation")) c.activation = nn::parse_activation(j.at("activation").get<std::string>());
  } catch (const nlohmann::json::exception& e) {
    throw InputError(std::string("bad training config: ") + e.what());
  }
  c.validate();
}

Model make_model(Eigen::Index input_dim, int num_classes, const DarsaConfig& config) {
  if (input_dim < 1 || num_classes < 1) throw InputError("model needs positive input and class counts");
  std::vector<int> widths{static_cast<int>(input_dim)};
  std::vector<nn::Activation> acts;
  for (int h : config.hidden) {
    widths.push_back(h);
    acts.push_back(config.activation);
  }
  widths.push_back(config.feature_dim);
  acts.push_back(nn::Activation::Identity);
  Model m;
  m.encoder_source = nn::make_network(widths, acts, derive_seed(config.seed, kEncoderInit));
  m.encoder_target = m.encoder_source;
  const std::vector<int> head{config.feature_dim, num_classes};
  const std::vector<nn::Activation> linear{nn::Activation::Identity};
  m.classifier = nn::make_network(head, linear, derive_seed(config.seed, kClassifierInit));
  m.num_classes = num_classes;
  return m;
}

void to_json(nlohmann::json& j, const Model& m) {
  j = {{"format_version", nn::kCheckpointVersion},
       {"num_classes", m.num_classes},
       {"encoder_source", m.encoder_source},
       {"encoder_target", m.encoder_target},
       {"classifier", m.classifier}};
}

void from_json(const nlohmann::json& j, Model& m) {
  try {
    if (j.at("format_version").get<int>() != nn::kCheckpointVersion)
      throw InputError("unsupported checkpoint format version");
    m.num_classes = j.at("num_classes").get<int>();
    m.encoder_source = j.at("encoder_source").get<nn::NetworkParams>();
    m.encoder_target = j.at("encoder_target").get<nn::NetworkParams>();
    m.classifier = j.at("classifier").get<nn::NetworkParams>();
  } catch (const nlohmann::json::exception& e) {
    throw InputError(std::string("malformed checkpoint: ") + e.what());
  }
  if (m.classifier.output_dim() != m.num_classes || m.encoder_source.output_dim() != m.classifier.input_dim() ||
      m.encoder_target.output_dim() != m.classifier.input_dim() ||
      m.encoder_source.input_dim() != m.encoder_target.input_dim())
    throw InputError("checkpoint networks do not fit together");
}

void to_json(nlohmann::json& j, const EpochRecord& r) {
  const auto& w = r.w_t.values();
  j = {{"epoch", r.epoch},
       {"losses", r.losses},
       {"w_t", std::vector<double>(w.data(), w.data() + w.size())},
       {"source_accuracy", r.source_accuracy},
       {"target_accuracy", r.target_accuracy ? nlohmann::json(*r.target_accuracy) : nlohmann::json(nullptr)},
       {"bounds", r.bounds},
       {"skipped", {{"discrepancy", r.skipped_discrepancy}, {"inter", r.skipped_inter}}}};
}

void pretrain(nn::NetworkParams& encoder_s, nn::NetworkParams& classifier, const Dataset& source,
              const DarsaConfig& config) {
  config.validate();
  require_source(source);
  SourceState state{BatchStream(source.size(), config.batch_size, derive_seed(config.seed, kSourceStream)),
                    nn::Velocity::zeros_like(encoder_s), nn::Velocity::zeros_like(classifier)};
  pretrain_epochs(encoder_s, classifier, source, config, state, config.pretrain_epochs);
}

ClassWeights estimate_target_weights(const nn::NetworkParams& encoder_t, const nn::NetworkParams& classifier,
                                     const Mat& x_target, double floor) {
  if (x_target.rows() == 0) throw InputError("empty target");
  const Mat logits = nn::forward(classifier, nn::forward(encoder_t, x_target));
  const auto k = logits.cols();
  if (!(floor > 0.0) || floor * static_cast<double>(k) >= 1.0) throw InputError("weight floor too large for class count");
  Vec mean = Vec::Zero(k);
  for (Eigen::Index i = 0; i < logits.rows(); ++i) {
    const auto p = (logits.row(i).array() - logits.row(i).maxCoeff()).exp();
    mean += (p / p.sum()).matrix().transpose();
  }
  mean /= static_cast<double>(logits.rows());
  return ClassWeights::from_counts(mean.cwiseMax(floor));
}

std::vector<int> predict(const nn::NetworkParams& encoder, const nn::NetworkParams& classifier, const Mat& x) {
  return nn::argmax_rows(nn::forward(classifier, nn::forward(encoder, x)));
}

double accuracy(std::span<const int> predicted, std::span<const int> truth) {
  return 1.0 - bounds::source_risk(predicted, truth);
}

FitResult fit(const Dataset& source, const Dataset& target, const DarsaConfig& config,
              std::optional<std::span<const int>> eval_labels, const EpochCallback& on_epoch) {
  config.validate();
  require_source(source);
  target.validate();
  if (target.size() == 0) throw InputError("target dataset is empty");
  if (source.num_classes != target.num_classes) throw InputError("class cardinality mismatch");
  if (source.dim() != target.dim()) throw InputError("source and target feature dimensions differ");
  if (eval_labels && static_cast<Eigen::Index>(eval_labels->size()) != target.size())
    throw InputError("evaluation labels do not match target rows");

  const int k = source.num_classes;
  const auto& ys_all = *source.labels;
  const auto w_s = ClassWeights::empirical(ys_all, k);
  const auto lw = config.loss_weights();
  const auto sink = config.sinkhorn();
  const auto imp = config.importance();

  FitResult out;
  Model& m = out.model;
  m = make_model(source.dim(), k, config);
  SourceState src{BatchStream(source.size(), config.batch_size, derive_seed(config.seed, kSourceStream)),
                  nn::Velocity::zeros_like(m.encoder_source), nn::Velocity::zeros_like(m.classifier)};
  pretrain_epochs(m.encoder_source, m.classifier, source, config, src, config.pretrain_epochs);
  m.encoder_target = m.encoder_source;
  nn::Velocity v_target = nn::Velocity::zeros_like(m.encoder_target);

  auto evaluate_target = [&]() -> std::optional<double> {
    if (!eval_labels) return std::nullopt;
    return accuracy(predict(m.encoder_target, m.classifier, target.features), *eval_labels);
  };
  out.metrics.pretrain_source_accuracy = accuracy(predict(m.encoder_source, m.classifier, source.features), ys_all);
  out.metrics.pretrain_target_accuracy = evaluate_target();

  // Fixed rows for the per-epoch bound snapshot.
  std::mt19937_64 bound_rng(derive_seed(config.seed, kBoundSample));
  const auto bound_src = subsample_rows(source.size(), config.bound_sample, bound_rng);
  const auto bound_tgt = subsample_rows(target.size(), config.bound_sample, bound_rng);
  const Mat bs_x = gather_rows(source.features, bound_src), bt_x = gather_rows(target.features, bound_tgt);
  const auto bs_y = pick(ys_all, bound_src);

  BatchStream tgt_stream(target.size(), config.batch_size, derive_seed(config.seed, kTargetStream));
  ClassWeights w_t = config.fix_target_weights ? w_s : ClassWeights::uniform(k);

  for (int epoch = 1; epoch <= config.epochs; ++epoch) {
    const auto started = std::chrono::steady_clock::now();
    const int steps = src.stream.batches_per_epoch();
    double sum_y = 0, sum_d = 0, sum_intra = 0, sum_inter = 0;
    EpochRecord rec;
    rec.epoch = epoch;
    for (int b = 0; b < steps; ++b) {
      try {
        const auto sid = src.stream.next(), tid = tgt_stream.next();
        const auto ys = pick(ys_all, sid);
        nn::ForwardCache c_es, c_cls, c_et;
        const Mat fs = nn::forward(m.encoder_source, gather_rows(source.features, sid), c_es);
        const Mat logits_s = nn::forward(m.classifier, fs, c_cls);
        const Mat ft = nn::forward(m.encoder_target, gather_rows(target.features, tid), c_et);
        if (!logits_s.allFinite() || !ft.allFinite()) throw TrainingError("non-finite activations");
        // Pseudo-labels stay fixed for the whole step.
        const auto yt = nn::argmax_rows(nn::forward(m.classifier, ft));

        const auto l_y = nn::loss_classification_weighted(logits_s, ys, w_t, w_s, imp);
        const auto l_d = nn::loss_discrepancy_weighted(fs, ys, ft, yt, w_t, sink);
        const auto intra_s = nn::loss_intra(fs, ys, config.margin);
        const auto intra_t = nn::loss_intra(ft, yt, config.margin);
        const auto l_a = nn::loss_inter(fs, ys, ft, yt, k);
        sum_y += l_y.value;
        sum_d += l_d.value;
        sum_intra += intra_s.value + intra_t.value;
        sum_inter += l_a.value;
        rec.skipped_discrepancy += l_d.skipped;
        rec.skipped_inter += l_a.skipped;

        const auto g_cls = nn::backward(m.classifier, c_cls, lw.lambda_y * l_y.grad);
        Mat d_fs = g_cls.input;
        Mat d_ft = Mat::Zero(ft.rows(), ft.cols());
        if (lw.lambda_d != 0.0) {
          d_fs += lw.lambda_d * l_d.grad_source;
          d_ft += lw.lambda_d * l_d.grad_target;
        }
        if (lw.lambda_c != 0.0) {
          d_fs += lw.lambda_c * intra_s.grad;
          d_ft += lw.lambda_c * intra_t.grad;
        }
        if (lw.lambda_a != 0.0) {
          d_fs += lw.lambda_a * l_a.grad_source;
          d_ft += lw.lambda_a * l_a.grad_target;
        }
        const auto g_es = nn::backward(m.encoder_source, c_es, d_fs);
        const auto g_et = nn::backward(m.encoder_target, c_et, d_ft);
        nn::sgd_momentum_step(m.classifier, g_cls, src.v_classifier, config.lr, config.momentum);
        nn::sgd_momentum_step(m.encoder_source, g_es, src.v_encoder, config.lr, config.momentum);
        if (config.share_encoders)
          m.encoder_target = m.encoder_source;
        else
          nn::sgd_momentum_step(m.encoder_target, g_et, v_target, config.lr, config.momentum);
      } catch (const TrainingError& err) {
        throw TrainingError("epoch " + std::to_string(epoch) + " batch " + std::to_string(b + 1) + ": " + err.what());
      } catch (const SolverError& err) {
        throw TrainingError("epoch " + std::to_string(epoch) + " batch " + std::to_string(b + 1) + ": " + err.what());
      }
    }
    const double n_steps = static_cast<double>(steps);
    rec.losses = nn::LossBundle::combine(sum_y / n_steps, sum_d / n_steps, sum_intra / n_steps, sum_inter / n_steps, lw);

    if (!config.fix_target_weights)
      w_t = estimate_target_weights(m.encoder_target, m.classifier, target.features, config.weight_floor);
    rec.w_t = w_t;
    rec.source_accuracy = accuracy(predict(m.encoder_source, m.classifier, source.features), ys_all);
    rec.target_accuracy = evaluate_target();

    const Mat fs_b = nn::forward(m.encoder_source, bs_x), ft_b = nn::forward(m.encoder_target, bt_x);
    const auto ps_b = nn::argmax_rows(nn::forward(m.classifier, fs_b));
    const auto pt_b = nn::argmax_rows(nn::forward(m.classifier, ft_b));
    try {
      rec.bounds = bounds::bound_report({fs_b, ps_b, bs_y, ft_b, pt_b}, w_t, snapshot_sinkhorn(sink, fs_b, ft_b));
    } catch (const SolverError& err) {
      throw TrainingError("epoch " + std::to_string(epoch) + " bound snapshot: " + err.what());
    }
    rec.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - started).count();
    out.metrics.epochs.push_back(rec);
    if (on_epoch) on_epoch(out.metrics.epochs.back());
  }
  return out;
}

}  // namespace darsa
