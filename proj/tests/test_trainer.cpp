#include "doctest.h"
#include "oracles.hpp"

#include "darsa/synthdata.hpp"
#include "darsa/trainer.hpp"

#include <algorithm>
#include <numeric>
#include <random>

using namespace darsa;

namespace {

Dataset blobs(int n, double gap, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> noise(0.0, 0.3);
  Dataset d;
  d.features.resize(n, 2);
  d.labels = std::vector<int>(static_cast<std::size_t>(n));
  d.num_classes = 2;
  for (int i = 0; i < n; ++i) {
    const int y = i % 2;
    (*d.labels)[static_cast<std::size_t>(i)] = y;
    d.features(i, 0) = (y == 0 ? -gap : gap) + noise(rng);
    d.features(i, 1) = noise(rng);
  }
  return d;
}

DarsaConfig quick() {
  DarsaConfig c;
  c.pretrain_epochs = 5;
  c.epochs = 3;
  c.batch_size = 32;
  c.bound_sample = 100;
  return c;
}

bool same_params(const nn::NetworkParams& a, const nn::NetworkParams& b, double tol) {
  if (a.layers.size() != b.layers.size()) return false;
  for (std::size_t l = 0; l < a.layers.size(); ++l) {
    if ((a.layers[l].weight - b.layers[l].weight).cwiseAbs().maxCoeff() > tol) return false;
    if ((a.layers[l].bias - b.layers[l].bias).cwiseAbs().maxCoeff() > tol) return false;
  }
  return true;
}

}  // namespace

TEST_CASE("pretrain") {
  const Dataset src = blobs(400, 2.0, 1);
  DarsaConfig cfg = quick();
  Model m0 = make_model(2, 2, cfg);

  SUBCASE("separable source is learned") {
    Model m = m0;
    cfg.pretrain_epochs = 20;
    pretrain(m.encoder_source, m.classifier, src, cfg);
    CHECK(accuracy(predict(m.encoder_source, m.classifier, src.features), *src.labels) >= 0.99);
  }
  SUBCASE("zero epochs leave parameters alone") {
    Model m = m0;
    cfg.pretrain_epochs = 0;
    pretrain(m.encoder_source, m.classifier, src, cfg);
    CHECK(same_params(m.encoder_source, m0.encoder_source, 0.0));
    CHECK(same_params(m.classifier, m0.classifier, 0.0));
  }
  SUBCASE("zero learning rate leaves parameters alone") {
    Model m = m0;
    cfg.lr = 0.0;
    pretrain(m.encoder_source, m.classifier, src, cfg);
    CHECK(same_params(m.encoder_source, m0.encoder_source, 0.0));
    CHECK(same_params(m.classifier, m0.classifier, 0.0));
  }
  SUBCASE("unlabeled source") {
    Dataset bare = src;
    bare.labels.reset();
    CHECK_THROWS_AS(pretrain(m0.encoder_source, m0.classifier, bare, cfg), InputError);
  }
}

TEST_CASE("estimate_target_weights") {
  std::mt19937_64 rng(2);
  const Mat x = oracle::random_matrix(50, 3, rng, -1, 1);
  const std::vector<nn::Activation> lin{nn::Activation::Identity};
  const std::vector<int> widths{3, 2};
  nn::NetworkParams id_enc = nn::make_network(std::vector<int>{3, 3}, lin, 0);
  id_enc.layers[0].weight.setIdentity();

  nn::NetworkParams clf = nn::make_network(widths, lin, 0);
  clf.layers[0].weight.setZero();
  const auto uniform = estimate_target_weights(id_enc, clf, x, 1e-3);
  CHECK(uniform[0] == doctest::Approx(0.5).epsilon(1e-12));
  CHECK(uniform[1] == doctest::Approx(0.5).epsilon(1e-12));

  clf.layers[0].bias << 100.0, -100.0;
  const auto saturated = estimate_target_weights(id_enc, clf, x, 1e-3);
  CHECK(saturated[0] == doctest::Approx(1.0 / 1.001).epsilon(1e-9));
  CHECK(saturated[1] == doctest::Approx(1e-3 / 1.001).epsilon(1e-9));

  for (int trial = 0; trial < 20; ++trial) {
    const int k = 2 + trial % 5;
    const double floor = 0.01;
    const auto enc = nn::make_network(std::vector<int>{3, 4}, std::vector<nn::Activation>{nn::Activation::Relu},
                                      static_cast<std::uint64_t>(trial));
    auto head = nn::make_network(std::vector<int>{4, k}, lin, static_cast<std::uint64_t>(trial + 100));
    head.layers[0].weight *= 20.0;
    const auto w = estimate_target_weights(enc, head, x, floor);
    CHECK(std::abs(w.values().sum() - 1.0) <= 1e-9);
    CHECK(w.values().minCoeff() >= floor / (1.0 + k * floor) - 1e-15);
  }

  CHECK_THROWS_AS(estimate_target_weights(id_enc, clf, Mat(0, 3), 1e-3), InputError);
  CHECK_THROWS_AS(estimate_target_weights(id_enc, clf, x, 0.5), InputError);
}

TEST_CASE("predict") {
  const std::vector<nn::Activation> lin{nn::Activation::Identity};
  nn::NetworkParams enc = nn::make_network(std::vector<int>{2, 2}, lin, 0);
  enc.layers[0].weight.setIdentity();
  nn::NetworkParams clf = nn::make_network(std::vector<int>{2, 3}, lin, 0);

  clf.layers[0].weight.setZero();
  const Mat x = Mat::Random(4, 2);
  for (int p : predict(enc, clf, x)) CHECK(p == 0);

  clf.layers[0].weight << 1, 0, 0, 1, -1, -1;
  Mat pt(1, 2);
  pt << -0.5, -0.2;  // logits (-0.5, -0.2, 0.7)
  CHECK(predict(enc, clf, pt) == std::vector<int>{2});
  pt << 0.4, -0.1;  // (0.4, -0.1, -0.3)
  CHECK(predict(enc, clf, pt) == std::vector<int>{0});

  std::mt19937_64 rng(3);
  const Mat cloud = oracle::random_matrix(30, 2, rng, -2, 2);
  std::vector<int> perm(30);
  std::iota(perm.begin(), perm.end(), 0);
  std::shuffle(perm.begin(), perm.end(), rng);
  const auto base = predict(enc, clf, cloud), shuffled = predict(enc, clf, gather_rows(cloud, perm));
  for (std::size_t i = 0; i < perm.size(); ++i) CHECK(shuffled[i] == base[static_cast<std::size_t>(perm[i])]);

  CHECK_THROWS_AS(predict(enc, clf, Mat::Zero(2, 3)), InputError);
}

TEST_CASE("fit guards and bookkeeping") {
  const Dataset src = blobs(200, 2.0, 4);
  Dataset tgt = blobs(200, 2.0, 5);
  const auto cfg = quick();

  Dataset three = tgt;
  three.num_classes = 3;
  CHECK_THROWS_WITH_AS(fit(src, three, cfg), "class cardinality mismatch", InputError);

  std::vector<int> calls;
  const auto r = fit(src, tgt, cfg, std::span<const int>(*tgt.labels),
                     [&](const EpochRecord& e) { calls.push_back(e.epoch); });
  CHECK(r.metrics.epochs.size() == static_cast<std::size_t>(cfg.epochs));
  CHECK(calls == std::vector<int>{1, 2, 3});
  for (const auto& e : r.metrics.epochs) {
    CHECK(std::abs(e.w_t.values().sum() - 1.0) <= 1e-9);
    CHECK(e.w_t.values().minCoeff() >= cfg.weight_floor / (1.0 + 2 * cfg.weight_floor) - 1e-15);
    CHECK(e.target_accuracy.has_value());
  }

  DarsaConfig none = cfg;
  none.epochs = 0;
  CHECK(fit(src, tgt, none).metrics.epochs.empty());

  DarsaConfig bad = cfg;
  bad.momentum = 1.0;
  CHECK_THROWS_AS(fit(src, tgt, bad), InputError);
}

TEST_CASE("fit on target equal to source") {
  const Dataset src = blobs(400, 2.0, 6);
  DarsaConfig cfg = quick();
  cfg.pretrain_epochs = 20;
  const auto r = fit(src, src, cfg, std::span<const int>(*src.labels));
  CHECK(*r.metrics.epochs.back().target_accuracy >= 0.99);
}

TEST_CASE("fit on the two-cluster 1-D task") {
  const auto task = synth::make_figure1_task(0.05, 2000, 7);
  DarsaConfig cfg;
  cfg.epochs = 10;
  const auto r = fit(task.source, task.target, cfg, std::span<const int>(*task.target.labels));
  CHECK(*r.metrics.epochs.back().target_accuracy >= 0.95);
  for (const auto& e : r.metrics.epochs) CHECK(e.bounds.ordering_holds(0.05));
}

TEST_CASE("without alignment terms fit reduces to source training") {
  const Dataset src = blobs(300, 1.0, 8);
  const Dataset tgt = blobs(250, 1.2, 9);
  DarsaConfig cfg = quick();
  cfg.lambda_d = cfg.lambda_c = cfg.lambda_a = 0.0;
  cfg.fix_target_weights = true;
  const auto r = fit(src, tgt, cfg);

  DarsaConfig longer = cfg;
  longer.pretrain_epochs = cfg.pretrain_epochs + cfg.epochs;
  Model m = make_model(2, 2, longer);
  pretrain(m.encoder_source, m.classifier, src, longer);
  CHECK(same_params(r.model.encoder_source, m.encoder_source, 1e-9));
  CHECK(same_params(r.model.classifier, m.classifier, 1e-9));

  // L_Y never reaches the target encoder: it stays at the pretrained copy.
  Model pre = make_model(2, 2, cfg);
  pretrain(pre.encoder_source, pre.classifier, src, cfg);
  CHECK(same_params(r.model.encoder_target, pre.encoder_source, 0.0));
}

TEST_CASE("classification loss does not depend on the target encoder") {
  std::mt19937_64 rng(10);
  const DarsaConfig cfg = quick();
  Model m = make_model(2, 3, cfg);
  const Mat xs = oracle::random_matrix(20, 2, rng, -1, 1), xt = oracle::random_matrix(20, 2, rng, -1, 1);
  std::vector<int> ys(20);
  for (int i = 0; i < 20; ++i) ys[static_cast<std::size_t>(i)] = i % 3;
  const Mat ft0 = nn::forward(m.encoder_target, xt);
  const auto yt = nn::argmax_rows(nn::forward(m.classifier, ft0));
  const ClassWeights ws = ClassWeights::empirical(ys, 3);
  const ClassWeights wt = ClassWeights::empirical(yt, 3);

  auto objective = [&](const nn::NetworkParams& enc_t, bool with_d) {
    const Mat fs = nn::forward(m.encoder_source, xs);
    const Mat ft = nn::forward(enc_t, xt);
    double v = nn::loss_classification_weighted(nn::forward(m.classifier, fs), ys, wt, ws).value;
    if (with_d) v += nn::loss_discrepancy_weighted(fs, ys, ft, yt, wt, {0.5, 100000, 1e-12}).value;
    return v;
  };
  const double h = 1e-5;
  double max_y = 0.0, max_d = 0.0;
  for (std::size_t l = 0; l < m.encoder_target.layers.size(); ++l) {
    for (Eigen::Index i = 0; i < m.encoder_target.layers[l].weight.size(); ++i) {
      nn::NetworkParams plus = m.encoder_target, minus = m.encoder_target;
      plus.layers[l].weight.data()[i] += h;
      minus.layers[l].weight.data()[i] -= h;
      max_y = std::max(max_y, std::abs(objective(plus, false) - objective(minus, false)) / (2 * h));
      max_d = std::max(max_d, std::abs(objective(plus, true) - objective(minus, true)) / (2 * h));
    }
  }
  CHECK(max_y == 0.0);
  CHECK(max_d > 1e-3);
}

TEST_CASE("fit is deterministic") {
  const auto task = synth::make_figure1_task(0.1, 300, 11);
  DarsaConfig cfg = quick();
  cfg.seed = 42;
  const auto a = fit(task.source, task.target, cfg), b = fit(task.source, task.target, cfg);
  REQUIRE(a.metrics.epochs.size() == b.metrics.epochs.size());
  for (std::size_t e = 0; e < a.metrics.epochs.size(); ++e) {
    const nlohmann::json ja = a.metrics.epochs[e], jb = b.metrics.epochs[e];
    CHECK(ja.dump() == jb.dump());
  }
  cfg.seed = 43;
  const auto c = fit(task.source, task.target, cfg);
  CHECK(nlohmann::json(c.metrics.epochs.back()).dump() != nlohmann::json(a.metrics.epochs.back()).dump());
}

TEST_CASE("config JSON") {
  DarsaConfig c;
  c.lambda_d = 0.25;
  c.hidden = {5, 7};
  c.activation = nn::Activation::Softplus;
  const nlohmann::json j = c;
  const auto back = j.get<DarsaConfig>();
  CHECK(nlohmann::json(back) == j);
  CHECK(nlohmann::json::parse(R"({"epochs": 3})").get<DarsaConfig>().lambda_c == DarsaConfig{}.lambda_c);
  CHECK_THROWS_AS(nlohmann::json::parse(R"({"epoch": 3})").get<DarsaConfig>(), InputError);
  CHECK_THROWS_AS(nlohmann::json::parse(R"({"lr": -1})").get<DarsaConfig>(), InputError);

  const auto so = c.source_only();
  CHECK(so.lambda_d == 0.0);
  CHECK(so.lambda_c == 0.0);
  CHECK(so.lambda_a == 0.0);
  CHECK(so.fix_target_weights);

  Model m = make_model(3, 4, c);
  const nlohmann::json mj = m;
  const auto m2 = mj.get<Model>();
  CHECK(same_params(m2.classifier, m.classifier, 0.0));
  CHECK(same_params(m2.encoder_target, m.encoder_target, 0.0));
  nlohmann::json broken = mj;
  broken["format_version"] = 99;
  CHECK_THROWS_AS(broken.get<Model>(), InputError);
}
