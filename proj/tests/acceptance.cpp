// End-to-end acceptance run. Prints one PASS/FAIL line per criterion and
// exits nonzero when any criterion fails.

#include "gradient_checks.hpp"
#include "oracles.hpp"

#include "darsa/bounds.hpp"
#include "darsa/ot.hpp"
#include "darsa/synthdata.hpp"

#include "json.hpp"

#include <sys/resource.h>
#include <sys/wait.h>

#include <chrono>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iostream>
#include <sstream>
#include <string>

namespace fs = std::filesystem;
using darsa::ClassWeights;
using darsa::Mat;
using darsa::Vec;
using nlohmann::json;

namespace {

struct Outcome {
  bool pass = false;
  std::string detail;
};

double seconds_since(std::chrono::steady_clock::time_point t0) {
  return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
}

double child_cpu_seconds() {
  rusage u{};
  getrusage(RUSAGE_CHILDREN, &u);
  return static_cast<double>(u.ru_utime.tv_sec + u.ru_stime.tv_sec) +
         1e-6 * static_cast<double>(u.ru_utime.tv_usec + u.ru_stime.tv_usec);
}

std::string slurp(const fs::path& p) {
  std::ifstream f(p, std::ios::binary);
  std::stringstream s;
  s << f.rdbuf();
  return s.str();
}

int run_cli(const std::string& args, const fs::path& log) {
  const std::string cmd = std::string("'") + DARSA_CLI_PATH + "' " + args + " > '" + log.string() + "' 2>&1";
  const int status = std::system(cmd.c_str());
  return WIFEXITED(status) ? WEXITSTATUS(status) : -1;
}

std::string fmt(double v) {
  std::ostringstream s;
  s.precision(4);
  s << v;
  return s.str();
}

// ---------------------------------------------------------------------------

Outcome decomposition_identity() {
  std::mt19937_64 rng(1);
  double worst = 0.0;
  for (int trial = 0; trial < 200; ++trial) {
    const int n = std::uniform_int_distribution<int>(1, 1000)(rng);
    const int k = std::uniform_int_distribution<int>(1, 10)(rng);
    std::uniform_int_distribution<int> cls(0, k - 1);
    std::bernoulli_distribution correct(0.7);
    std::vector<int> labels(static_cast<std::size_t>(n)), preds(static_cast<std::size_t>(n)), parts(static_cast<std::size_t>(n));
    for (std::size_t i = 0; i < labels.size(); ++i) {
      labels[i] = cls(rng);
      preds[i] = correct(rng) ? labels[i] : cls(rng);
      parts[i] = trial % 2 == 0 ? labels[i] : cls(rng);
    }
    worst = std::max(worst, darsa::bounds::check_decomposition(preds, labels, darsa::SubdomainPartition(parts, k)));
  }
  return {worst <= 1e-12, "max residual " + fmt(worst)};
}

Outcome sinkhorn_vs_exact() {
  std::mt19937_64 rng(2);
  const darsa::ot::SinkhornParams p{0.005, 20000, 1e-6};
  double worst_excess = -1.0, worst_lib = 0.0;
  for (int trial = 0; trial < 50; ++trial) {
    const int n = std::uniform_int_distribution<int>(1, 8)(rng), m = std::uniform_int_distribution<int>(1, 8)(rng);
    const Mat x = oracle::random_matrix(n, 2, rng), y = oracle::random_matrix(m, 2, rng);
    const Mat c = darsa::ot::euclidean_cost(x, y);
    const Vec a = oracle::random_simplex(n, rng), b = oracle::random_simplex(m, rng);
    const double exact = oracle::transport_lp(c, a, b);
    const double approx = darsa::ot::sinkhorn(c, a, b, p).cost;
    worst_excess = std::max(worst_excess, std::abs(approx - exact) - std::max(0.05 * exact, 0.01));
    worst_lib = std::max(worst_lib, std::abs(darsa::ot::ot_exact_discrete(c, a, b).cost - exact));
  }
  return {worst_excess <= 0.0 && worst_lib <= 1e-9,
          "worst |sinkhorn-exact| minus allowance " + fmt(worst_excess) + ", library exact vs LP oracle " + fmt(worst_lib)};
}

Outcome gradient_fidelity() {
  const double errs[] = {gradcheck::classification(50, 101), gradcheck::discrepancy(50, 102), gradcheck::intra(50, 103),
                         gradcheck::inter(50, 104), gradcheck::backward(50, 105)};
  const char* names[] = {"L_Y", "L_D", "L_intra", "L_inter", "backward"};
  std::string detail;
  bool ok = true;
  for (int i = 0; i < 5; ++i) {
    ok = ok && errs[i] <= 1e-4;
    detail += std::string(i ? ", " : "") + names[i] + " " + fmt(errs[i]);
  }
  return {ok, "max relative error " + detail};
}

Outcome two_cluster_task() {
  const auto task = darsa::synth::make_figure1_task(0.05, 2000, 4);
  const darsa::ot::SinkhornParams p{0.01, 20000, 1e-6};
  const auto sp = darsa::split_by_class(task.source.features, *task.source.labels, 2);
  const auto tp = darsa::split_by_class(task.target.features, *task.target.labels, 2);
  const auto w_t = ClassWeights::empirical(*task.target.labels, 2);
  const auto weighted = darsa::ot::weighted_subdomain_w1(sp, tp, w_t, p);
  const double overall = darsa::ot::w1_empirical(task.source.features, task.target.features, p);
  const std::vector<Mat> parts{sp[0], sp[1], tp[0], tp[1]};
  const double dc = darsa::bounds::delta_c(parts);

  bool ok = weighted.value <= 0.2 && overall >= 1.0 && weighted.value <= overall + dc;
  std::string detail = "weighted " + fmt(weighted.value) + ", overall " + fmt(overall) + ", delta_c " + fmt(dc) + ", paired";
  for (std::size_t k = 0; k < 2; ++k) {
    auto column = [](const Mat& m) { return std::vector<double>(m.data(), m.data() + m.rows()); };
    const double reference = oracle::quantile_w1(column(sp[k]), column(tp[k]));
    const double solved = *weighted.paired[k];
    ok = ok && std::abs(reference - 0.10) <= 0.03 && std::abs(solved - 0.10) <= 0.03;
    detail += " " + fmt(solved) + " (oracle " + fmt(reference) + ")";
  }
  return {ok, detail};
}

// Random mixture pair with well separated components, component traces at
// most eps, and each component closest to its own counterpart.
struct MixturePair {
  darsa::ot::GaussianMixtureXd source, target;
  double eps = 0.0;
};

MixturePair random_mixture_pair(int k, int d, double eps, std::mt19937_64& rng) {
  std::normal_distribution<double> g(0.0, 1.0);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  const double box = 2.0 * k;
  auto covariance = [&] {
    Mat b(d, d);
    for (Eigen::Index i = 0; i < b.size(); ++i) b.data()[i] = g(rng);
    Mat s = b * b.transpose();
    return Mat(s * (eps * (0.3 + 0.7 * u(rng)) / s.trace()));
  };
  for (;;) {
    Mat means = oracle::random_matrix(k, d, rng, -box, box);
    double closest = std::numeric_limits<double>::infinity();
    for (int i = 0; i < k; ++i)
      for (int j = i + 1; j < k; ++j) closest = std::min(closest, (means.row(i) - means.row(j)).norm());
    if (closest < 2.0) continue;
    std::vector<darsa::ot::GaussianComponentXd> cs, ct;
    for (int i = 0; i < k; ++i) {
      Vec dir(d);
      for (int j = 0; j < d; ++j) dir(j) = g(rng);
      const Vec shift = dir.normalized() * (0.3 * u(rng));
      cs.emplace_back(Vec(means.row(i).transpose()), covariance());
      ct.emplace_back(Vec(means.row(i).transpose() + shift), covariance());
    }
    const Vec flat = Vec::Constant(k, 1.0 / k);
    MixturePair out{{ClassWeights(0.5 * flat + 0.5 * oracle::random_simplex(k, rng)), cs},
                    {ClassWeights(0.5 * flat + 0.5 * oracle::random_simplex(k, rng)), ct},
                    eps};
    const Mat cost = darsa::ot::mixture_pairwise_costs(out.source, out.target, darsa::ot::PairwiseMode::analytic());
    if (darsa::synth::paired_distance_holds(cost)) return out;
  }
}

Outcome mixture_chain() {
  std::mt19937_64 rng(5);
  const darsa::ot::SinkhornParams p{0.01, 20000, 1e-6};
  double worst_left = -1e9, worst_right = -1e9;
  for (int trial = 0; trial < 20; ++trial) {
    const int k = 2 + trial % 3, d = 1 + trial % 5;
    const double eps = 0.01 * (1 << (trial % 3));
    const auto pair = random_mixture_pair(k, d, eps, rng);
    const auto mw1 = darsa::ot::mw1_gmm(pair.source, pair.target);
    double paired = 0.0;
    for (int c = 0; c < k; ++c) paired += pair.target.weights[c] * mw1.pairwise(c, c);
    const auto xs = darsa::ot::sample_gmm(pair.source, 600, 1000 + trial).samples;
    const auto xt = darsa::ot::sample_gmm(pair.target, 600, 2000 + trial).samples;
    const double sampled = darsa::ot::w1_empirical(xs, xt, p);
    worst_left = std::max(worst_left, paired - mw1.value);
    worst_right = std::max(worst_right, mw1.value - (sampled + 4.0 * std::sqrt(eps) + 0.05));
  }
  return {worst_left <= 0.0 && worst_right <= 0.0,
          "max(paired - MW1) " + fmt(worst_left) + ", max(MW1 - rhs) " + fmt(worst_right)};
}

// Criteria 6 to 8 share these training runs.
struct TrainingRuns {
  std::vector<double> darsa, baseline, cpu;
  std::vector<fs::path> darsa_dirs;
  bool all_ran = true;
  std::string error;
};

const char* kShiftedTask = R"({
  "task": {"name": "gmm", "num_classes": 3, "dim": 2, "mean_separation": 1.0, "target_mean_shift": 0.5,
           "source_props": [0.6, 0.2, 0.2], "target_props": [0.2, 0.2, 0.6], "n_per_domain": 1000, "sigma": 0.3}
})";

TrainingRuns shifted_gmm_runs(const fs::path& root) {
  TrainingRuns r;
  fs::create_directories(root);
  std::ofstream(root / "shifted_gmm.json") << kShiftedTask;
  for (int seed = 0; seed < 5; ++seed) {
    const double cpu0 = child_cpu_seconds();
    for (bool baseline : {false, true}) {
      const fs::path dir = root / ((baseline ? "baseline_" : "darsa_") + std::to_string(seed));
      const std::string args = "train --config '" + (root / "shifted_gmm.json").string() + "' --seed " +
                               std::to_string(seed) + " --out '" + dir.string() + "'" + (baseline ? " --source-only" : "");
      const int code = run_cli(args, dir.string() + ".log");
      if (code != 0) {
        r.all_ran = false;
        r.error = "train exited " + std::to_string(code) + " for " + dir.string();
        return r;
      }
      const double acc = darsa::synth::read_json(dir / "summary.json").at("target_accuracy").get<double>();
      (baseline ? r.baseline : r.darsa).push_back(acc);
      if (!baseline) r.darsa_dirs.push_back(dir);
    }
    r.cpu.push_back(child_cpu_seconds() - cpu0);
  }
  return r;
}

Outcome adaptation_gain(const TrainingRuns& runs) {
  if (!runs.all_ran) return {false, runs.error};
  double md = 0.0, mb = 0.0, max_cpu = 0.0;
  std::string per_seed;
  for (std::size_t i = 0; i < runs.darsa.size(); ++i) {
    md += runs.darsa[i] / static_cast<double>(runs.darsa.size());
    mb += runs.baseline[i] / static_cast<double>(runs.baseline.size());
    max_cpu = std::max(max_cpu, runs.cpu[i]);
    per_seed += " " + fmt(runs.darsa[i]) + "/" + fmt(runs.baseline[i]);
  }
  const double gain = 100.0 * (md - mb);
  return {gain >= 5.0 && max_cpu < 300.0, "mean target accuracy " + fmt(md) + " vs source-only " + fmt(mb) + " (gain " +
                                              fmt(gain) + " points; per seed darsa/baseline" + per_seed +
                                              "; max cpu per seed " + fmt(max_cpu) + " s)"};
}

Outcome bound_ordering(const TrainingRuns& runs) {
  if (!runs.all_ran) return {false, runs.error};
  double worst = -1e9;
  int rows = 0;
  for (const auto& dir : runs.darsa_dirs) {
    std::ifstream csv(dir / "bounds_per_epoch.csv");
    if (!csv) return {false, "missing " + (dir / "bounds_per_epoch.csv").string()};
    std::string line;
    std::getline(csv, line);
    while (std::getline(csv, line)) {
      std::vector<double> v;
      std::stringstream s(line);
      for (std::string cell; std::getline(s, cell, ',') && v.size() < 4;) v.push_back(std::stod(cell));
      worst = std::max(worst, v[1] - (v[2] + v[3] + 0.05));
      ++rows;
    }
  }
  return {rows > 0 && worst <= 0.0, std::to_string(rows) + " epoch rows, max(eps_c - eps_g - delta_c - 0.05) " + fmt(worst)};
}

Outcome deterministic_metrics(const fs::path& root) {
  const fs::path cfg = root / "shifted_gmm.json";
  const fs::path a = root / "repeat_a", b = root / "repeat_b";
  for (const auto& dir : {a, b}) {
    const int code = run_cli("train --config '" + cfg.string() + "' --seed 7 --out '" + dir.string() + "'", dir.string() + ".log");
    if (code != 0) return {false, "train exited " + std::to_string(code)};
  }
  const std::string ma = slurp(a / "metrics.jsonl"), mb = slurp(b / "metrics.jsonl");
  return {!ma.empty() && ma == mb, std::to_string(ma.size()) + " bytes, identical " + (ma == mb ? "yes" : "no")};
}

}  // namespace

int main() {
  const fs::path root = fs::absolute("acceptance_runs");
  std::error_code ec;
  fs::remove_all(root, ec);
  fs::create_directories(root);

  bool all = true;
  auto report = [&](int id, const char* name, double limit_s, const std::function<Outcome()>& body) {
    const auto t0 = std::chrono::steady_clock::now();
    Outcome o;
    try {
      o = body();
    } catch (const std::exception& e) {
      o = {false, std::string("exception: ") + e.what()};
    }
    const double t = seconds_since(t0);
    if (limit_s > 0 && t > limit_s) {
      o.pass = false;
      o.detail += "; over time limit";
    }
    all = all && o.pass;
    std::cout << (o.pass ? "PASS" : "FAIL") << " criterion " << id << " (" << name << "): " << o.detail << " ["
              << fmt(t) << " s]" << std::endl;
  };

  report(1, "risk decomposition identity", 10, decomposition_identity);
  report(2, "sinkhorn vs exact LP", 60, sinkhorn_vs_exact);
  report(3, "gradient fidelity", 300, gradient_fidelity);
  report(4, "two-cluster distances", 60, two_cluster_task);
  report(5, "mixture distance chain", 300, mixture_chain);
  TrainingRuns runs;
  report(6, "shifted GMM adaptation gain", 0, [&] {
    runs = shifted_gmm_runs(root);
    return adaptation_gain(runs);
  });
  report(7, "per-epoch bound ordering", 0, [&] { return bound_ordering(runs); });
  report(8, "metrics determinism", 0, [&] { return deterministic_metrics(root); });
  return all ? 0 : 1;
}
