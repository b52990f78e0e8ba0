#include "darsa/cli.hpp"

#include "darsa/bounds.hpp"
#include "darsa/ot.hpp"
#include "darsa/synthdata.hpp"
#include "darsa/trainer.hpp"

#include "CLI11.hpp"
#include "json.hpp"

#include <filesystem>
#include <fstream>
#include <iomanip>
#include <optional>
#include <ostream>
#include <sstream>
#include <string>
#include <vector>

namespace darsa::cli {

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

// Flags shared by several subcommands; unset ones leave the config file alone.
struct Common {
  std::string config_path;
  std::optional<std::uint64_t> seed;
  std::string out_dir = "darsa_out";
  std::optional<double> reg;
  std::optional<int> epochs;
  std::optional<std::string> task;
};

// --config file: {"task": {...}, "train": {...}, "sinkhorn": {...}, "log_every": n}
struct ExperimentConfig {
  json task = json::object();
  DarsaConfig train;
  ot::SinkhornParams sinkhorn{0.01, 20000, 1e-6};
  int log_every = 0;
  std::uint64_t seed = 0;
};

ot::SinkhornParams sinkhorn_from_json(const json& j, ot::SinkhornParams p) {
  for (const auto& [key, value] : j.items()) {
    if (key == "reg")
      p.reg = value.get<double>();
    else if (key == "max_iter")
      p.max_iter = value.get<int>();
    else if (key == "tol")
      p.tol = value.get<double>();
    else if (key == "eps_scaling")
      p.eps_scaling = value.get<bool>();
    else
      throw InputError("unknown sinkhorn key '" + key + "'");
  }
  return p;
}

ExperimentConfig load_config(const Common& c) {
  ExperimentConfig cfg;
  if (!c.config_path.empty()) {
    const json j = synth::read_json(c.config_path);
    if (!j.is_object()) throw InputError("config must be a JSON object: " + c.config_path);
    try {
      for (const auto& [key, value] : j.items()) {
        if (key == "task")
          cfg.task = value;
        else if (key == "train")
          cfg.train = value.get<DarsaConfig>();
        else if (key == "sinkhorn")
          cfg.sinkhorn = sinkhorn_from_json(value, cfg.sinkhorn);
        else if (key == "log_every")
          cfg.log_every = value.get<int>();
        else if (key == "seed")
          cfg.seed = value.get<std::uint64_t>();
        else
          throw InputError("unknown config key '" + key + "'");
      }
    } catch (const json::exception& e) {
      throw InputError("bad config " + c.config_path + ": " + e.what());
    }
    if (!cfg.task.is_object()) throw InputError("config task must be an object");
  }
  if (c.seed) cfg.seed = *c.seed;
  cfg.train.seed = cfg.seed;
  if (c.epochs) cfg.train.epochs = *c.epochs;
  if (c.reg) {
    cfg.sinkhorn.reg = *c.reg;
    cfg.train.sinkhorn_reg = *c.reg;
  }
  if (c.task) cfg.task["name"] = *c.task;
  cfg.train.validate();
  if (!(cfg.sinkhorn.reg > 0.0)) throw InputError("--reg must be positive");
  return cfg;
}

ClassWeights props_from_json(const json& j) {
  const auto v = j.get<std::vector<double>>();
  return ClassWeights(Eigen::Map<const Vec>(v.data(), static_cast<Eigen::Index>(v.size())));
}

synth::TaskPair load_task(const json& task, std::uint64_t seed) {
  const std::string name = task.value("name", "figure1");
  auto reject_unknown = [&](std::initializer_list<const char*> allowed) {
    for (const auto& [key, value] : task.items()) {
      bool ok = key == "name";
      for (const char* a : allowed) ok = ok || key == a;
      if (!ok) throw InputError("unknown key '" + key + "' for task " + name);
    }
  };
  try {
    if (name == "figure1") {
      reject_unknown({"sigma", "n_per_domain"});
      return synth::make_figure1_task(task.value("sigma", 0.05), task.value("n_per_domain", 2000), seed);
    }
    if (name == "gmm") {
      reject_unknown({"num_classes", "dim", "mean_separation", "target_mean_shift", "source_props", "target_props",
                      "n_per_domain", "sigma", "audit_sample", "max_attempts"});
      synth::ShiftedGmmSpec s;
      s.num_classes = task.value("num_classes", 3);
      s.dim = task.value("dim", 2);
      s.mean_separation = task.value("mean_separation", s.mean_separation);
      s.target_mean_shift = task.value("target_mean_shift", s.target_mean_shift);
      s.source_props = task.contains("source_props") ? props_from_json(task.at("source_props"))
                                                     : ClassWeights::uniform(s.num_classes);
      s.target_props = task.contains("target_props") ? props_from_json(task.at("target_props"))
                                                     : ClassWeights::uniform(s.num_classes);
      s.n_per_domain = task.value("n_per_domain", s.n_per_domain);
      s.sigma = task.value("sigma", s.sigma);
      s.audit_sample = task.value("audit_sample", s.audit_sample);
      s.max_attempts = task.value("max_attempts", s.max_attempts);
      s.seed = seed;
      return synth::make_shifted_gmm(s);
    }
    if (name == "csv") {
      reject_unknown({"source", "target", "num_classes"});
      if (!task.contains("source") || !task.contains("target"))
        throw InputError("csv task needs source and target paths");
      std::optional<int> k;
      if (task.contains("num_classes")) k = task.at("num_classes").get<int>();
      synth::TaskPair out;
      out.source = synth::read_csv(task.at("source").get<std::string>(), k);
      if (!out.source.labeled()) throw InputError("source CSV needs a label column");
      out.target = synth::read_csv(task.at("target").get<std::string>(), out.source.num_classes);
      if (out.target.labeled()) {
        out.source.num_classes = out.target.num_classes = std::max(out.source.num_classes, out.target.num_classes);
      } else {
        out.target.num_classes = out.source.num_classes;
      }
      out.manifest = {{"generator", "csv"},
                      {"num_classes", out.source.num_classes},
                      {"dim", out.source.dim()},
                      {"seed", seed},
                      {"params", {{"source", task.at("source")}, {"target", task.at("target")}}}};
      return out;
    }
  } catch (const json::exception& e) {
    throw InputError("bad task parameters: " + std::string(e.what()));
  }
  throw InputError("unknown task '" + name + "'");
}

void ensure_dir(const fs::path& dir) {
  std::error_code ec;
  fs::create_directories(dir, ec);
  if (ec || !fs::is_directory(dir)) throw InputError("cannot create output directory " + dir.string());
}

std::ofstream open_out(const fs::path& path) {
  std::ofstream f(path);
  if (!f) throw InputError("cannot write " + path.string());
  f << std::setprecision(17);
  return f;
}

json vec_json(const Vec& v) { return std::vector<double>(v.data(), v.data() + v.size()); }

void write_matrix_csv(const Mat& m, const fs::path& path) {
  auto f = open_out(path);
  for (Eigen::Index i = 0; i < m.rows(); ++i) {
    for (Eigen::Index j = 0; j < m.cols(); ++j) f << (j ? "," : "") << m(i, j);
    f << '\n';
  }
}

// ---- ot ---------------------------------------------------------------------

int cmd_ot(const std::vector<std::string>& inputs, const std::string& method, const Common& common,
           std::optional<int> max_iter, std::optional<double> tol, int samples, const std::string& plan_path,
           std::ostream& out) {
  ExperimentConfig cfg = load_config(common);
  if (max_iter) cfg.sinkhorn.max_iter = *max_iter;
  if (tol) cfg.sinkhorn.tol = *tol;
  json result = {{"method", method}};
  std::optional<Mat> coupling;

  if (method == "mw1") {
    const auto s = synth::mixture_from_json(synth::read_json(inputs[0]));
    const auto t = synth::mixture_from_json(synth::read_json(inputs[1]));
    const auto mode = samples > 0 ? ot::PairwiseMode::sampled(samples, cfg.sinkhorn.reg, cfg.seed)
                                  : ot::PairwiseMode::analytic();
    const auto d = ot::mw1_gmm(s, t, mode);
    result["value"] = d.value;
    result["iterations"] = d.plan.iterations;
    result["marginal_residual"] = d.plan.marginal_residual;
    coupling = d.plan.coupling;
  } else {
    const Mat a = synth::read_csv(inputs[0]).features, b = synth::read_csv(inputs[1]).features;
    if (a.cols() != b.cols()) throw InputError("inputs have different feature counts");
    if (method == "exact1d") {
      if (a.cols() != 1) throw InputError("exact1d needs one-dimensional samples");
      result["value"] = ot::w1_exact_1d(a.col(0), b.col(0));
      result["iterations"] = 0;
      result["marginal_residual"] = 0.0;
    } else if (method == "exact") {
      const Vec wa = Vec::Constant(a.rows(), 1.0 / static_cast<double>(a.rows()));
      const Vec wb = Vec::Constant(b.rows(), 1.0 / static_cast<double>(b.rows()));
      const auto plan = ot::ot_exact_discrete(ot::euclidean_cost(a, b), wa, wb);
      result["value"] = plan.cost;
      result["iterations"] = plan.iterations;
      result["marginal_residual"] = plan.marginal_residual;
      coupling = plan.coupling;
    } else {
      const auto plan = ot::w1_empirical_plan(a, b, cfg.sinkhorn);
      result["value"] = plan.cost;
      result["iterations"] = plan.iterations;
      result["marginal_residual"] = plan.marginal_residual;
      result["reg"] = cfg.sinkhorn.reg;
      coupling = plan.coupling;
    }
  }
  if (!plan_path.empty()) {
    if (!coupling) throw InputError("exact1d has no coupling to write");
    write_matrix_csv(*coupling, plan_path);
  }
  out << result.dump() << '\n';
  return kExitOk;
}

// ---- bounds -----------------------------------------------------------------

std::vector<int> nearest_centroid(const Mat& centroids, const Mat& x) {
  std::vector<int> out(static_cast<std::size_t>(x.rows()));
  for (Eigen::Index i = 0; i < x.rows(); ++i) {
    Eigen::Index best = 0;
    (centroids.rowwise() - x.row(i)).rowwise().squaredNorm().minCoeff(&best);
    out[static_cast<std::size_t>(i)] = static_cast<int>(best);
  }
  return out;
}

void write_bound_table(const bounds::BoundReport& r, const fs::path& path) {
  auto f = open_out(path);
  f << "term,subdomain_weighted,overall\n";
  f << "discrepancy," << r.disc_weighted << ',' << r.disc_overall << '\n';
  f << "source_risk," << r.gamma_s_weighted << ',' << r.gamma_s << '\n';
  f << "partial_bound," << r.eps_c_partial << ',' << r.eps_g_partial << '\n';
}

int cmd_bounds(const std::string& source_path, const std::string& target_path, const std::string& checkpoint,
               const Common& common, std::ostream& out) {
  const ExperimentConfig cfg = load_config(common);
  const Dataset source = synth::read_csv(source_path);
  if (!source.labeled()) throw InputError("source CSV needs a label column: " + source_path);
  Dataset target = synth::read_csv(target_path, source.num_classes);
  if (source.dim() != target.dim()) throw InputError("source and target feature counts differ");

  Mat fs_, ft_;
  std::vector<int> ps, pt;
  int k = source.num_classes;
  if (checkpoint.empty()) {
    // Raw features and a nearest-source-centroid classifier.
    fs_ = source.features;
    ft_ = target.features;
    Mat centroids = Mat::Constant(k, source.dim(), std::numeric_limits<double>::infinity());
    const auto parts = split_by_class(fs_, *source.labels, k);
    for (int c = 0; c < k; ++c)
      if (parts[static_cast<std::size_t>(c)].rows() > 0) centroids.row(c) = parts[static_cast<std::size_t>(c)].colwise().mean();
    ps = nearest_centroid(centroids, fs_);
    pt = nearest_centroid(centroids, ft_);
  } else {
    const Model m = synth::read_json(checkpoint).get<Model>();
    if (m.num_classes < k) throw InputError("checkpoint has fewer classes than the source labels");
    k = m.num_classes;
    fs_ = nn::forward(m.encoder_source, source.features);
    ft_ = nn::forward(m.encoder_target, target.features);
    ps = nn::argmax_rows(nn::forward(m.classifier, fs_));
    pt = nn::argmax_rows(nn::forward(m.classifier, ft_));
  }
  const auto w_t = ClassWeights::empirical(pt, k);
  const auto report = bounds::bound_report({fs_, ps, *source.labels, ft_, pt}, w_t, cfg.sinkhorn);

  const fs::path dir = common.out_dir;
  ensure_dir(dir);
  json j = report;
  j["w_t"] = vec_json(w_t.values());
  j["ordering_holds"] = report.ordering_holds();
  synth::write_json(j, dir / "boundreport.json");
  write_bound_table(report, dir / "bounds.csv");
  out << j.dump() << '\n';
  return kExitOk;
}

// ---- train ------------------------------------------------------------------

int cmd_train(const Common& common, bool source_only, std::ostream& out, std::ostream& err) {
  ExperimentConfig cfg = load_config(common);
  if (source_only) cfg.train = cfg.train.source_only();
  const auto task = load_task(cfg.task, cfg.seed);
  std::optional<std::span<const int>> eval;
  if (task.target.labeled()) eval = std::span<const int>(*task.target.labels);

  const fs::path dir = common.out_dir;
  ensure_dir(dir);
  auto metrics = open_out(dir / "metrics.jsonl");
  auto bound_csv = open_out(dir / "bounds_per_epoch.csv");
  auto timings = open_out(dir / "timings.csv");
  bound_csv << "epoch,eps_c_partial,eps_g_partial,delta_c,disc_weighted,disc_overall,gamma_s_weighted,gamma_s,"
               "ordering_holds\n";
  timings << "epoch,seconds\n";

  const auto on_epoch = [&](const EpochRecord& r) {
    metrics << json(r).dump() << '\n' << std::flush;
    const auto& b = r.bounds;
    bound_csv << r.epoch << ',' << b.eps_c_partial << ',' << b.eps_g_partial << ',' << b.delta_c << ','
              << b.disc_weighted << ',' << b.disc_overall << ',' << b.gamma_s_weighted << ',' << b.gamma_s << ','
              << (b.ordering_holds() ? "true" : "false") << '\n';
    timings << r.epoch << ',' << r.seconds << '\n';
    if (cfg.log_every > 0 && r.epoch % cfg.log_every == 0) {
      err << "epoch " << r.epoch << " loss " << r.losses.total << " source_acc " << r.source_accuracy;
      if (r.target_accuracy) err << " target_acc " << *r.target_accuracy;
      err << '\n';
    }
  };
  const auto result = fit(task.source, task.target, cfg.train, eval, on_epoch);

  synth::write_json(result.model, dir / "checkpoint.json");
  const auto& m = result.metrics;
  json summary = {{"epochs", static_cast<int>(m.epochs.size())}, {"seed", cfg.seed}};
  if (m.epochs.empty()) {
    summary["source_accuracy"] = m.pretrain_source_accuracy;
    summary["target_accuracy"] = m.pretrain_target_accuracy ? json(*m.pretrain_target_accuracy) : json(nullptr);
  } else {
    summary["source_accuracy"] = m.epochs.back().source_accuracy;
    summary["target_accuracy"] = m.epochs.back().target_accuracy ? json(*m.epochs.back().target_accuracy) : json(nullptr);
  }
  summary["pretrain_source_accuracy"] = m.pretrain_source_accuracy;
  summary["pretrain_target_accuracy"] = m.pretrain_target_accuracy ? json(*m.pretrain_target_accuracy) : json(nullptr);
  synth::write_json(summary, dir / "summary.json");
  json run = {{"config", cfg.train}, {"task", task.manifest}};
  run["task"].erase("source_mixture");
  run["task"].erase("target_mixture");
  synth::write_json(run, dir / "run.json");
  out << summary.dump() << '\n';
  return kExitOk;
}

// ---- figure1 ----------------------------------------------------------------

int cmd_figure1(double sigma, int n, const std::string& method, const Common& common, std::ostream& out) {
  const ExperimentConfig cfg = load_config(common);
  const auto task = synth::make_figure1_task(sigma, n, cfg.seed);
  const auto sp = split_by_class(task.source.features, *task.source.labels, 2);
  const auto tp = split_by_class(task.target.features, *task.target.labels, 2);
  const auto w_t = ClassWeights::empirical(*task.target.labels, 2);

  auto w1 = [&](const Mat& a, const Mat& b) {
    return method == "exact1d" ? ot::w1_exact_1d(a.col(0), b.col(0)) : ot::w1_empirical(a, b, cfg.sinkhorn);
  };
  Vec paired(2);
  for (int c = 0; c < 2; ++c) paired(c) = w1(sp[static_cast<std::size_t>(c)], tp[static_cast<std::size_t>(c)]);
  const double overall = w1(task.source.features, task.target.features);
  std::vector<Mat> parts{sp[0], sp[1], tp[0], tp[1]};
  const double dc = bounds::delta_c(parts);
  const double weighted = w_t.values().dot(paired);
  const bool holds = weighted <= overall + dc;

  const fs::path dir = common.out_dir;
  ensure_dir(dir);
  {
    auto f = open_out(dir / "figure1.csv");
    f << "cluster,w_t,w1_paired,w1_overall,delta_c,holds\n";
    for (int c = 0; c < 2; ++c)
      f << c << ',' << w_t[c] << ',' << paired(c) << ',' << overall << ',' << dc << ',' << (holds ? "true" : "false")
        << '\n';
  }
  const json summary = {{"method", method},     {"sigma", sigma},          {"n_per_domain", n},
                        {"seed", cfg.seed},     {"w_t", vec_json(w_t.values())}, {"w1_paired", vec_json(paired)},
                        {"weighted", weighted}, {"w1_overall", overall},  {"delta_c", dc},
                        {"holds", holds}};
  synth::write_json(summary, dir / "figure1.json");
  out << summary.dump() << '\n';
  return kExitOk;
}

// ---- gen --------------------------------------------------------------------

int cmd_gen(const Common& common, std::ostream& out) {
  const ExperimentConfig cfg = load_config(common);
  const auto task = load_task(cfg.task, cfg.seed);
  const fs::path dir = common.out_dir;
  ensure_dir(dir);
  synth::write_csv(task.source, dir / "source.csv");
  synth::write_csv(task.target, dir / "target.csv");
  json manifest = task.manifest;
  manifest["files"] = {{"source", "source.csv"}, {"target", "target.csv"}};
  if (manifest.contains("source_mixture")) {
    synth::write_json(manifest.at("source_mixture"), dir / "source_mixture.json");
    synth::write_json(manifest.at("target_mixture"), dir / "target_mixture.json");
  }
  synth::write_json(manifest, dir / "manifest.json");
  out << json{{"out", dir.string()}, {"source_rows", task.source.size()}, {"target_rows", task.target.size()}}.dump()
      << '\n';
  return kExitOk;
}

void add_common(CLI::App* app, Common& c, bool with_epochs, bool with_task) {
  app->add_option("--config", c.config_path, "JSON experiment config")->check(CLI::ExistingFile);
  app->add_option("--seed", c.seed, "Run seed");
  app->add_option("--out", c.out_dir, "Output directory")->capture_default_str();
  app->add_option("--reg", c.reg, "Sinkhorn regulariser");
  if (with_epochs) app->add_option("--epochs", c.epochs, "Adaptation epochs");
  if (with_task)
    app->add_option("--task", c.task, "Task generator")->check(CLI::IsMember({"figure1", "gmm", "csv"}));
}

}  // namespace

int run(int argc, const char* const* argv, std::ostream& out, std::ostream& err) {
  CLI::App app{"Sub-domain adaptation experiments"};
  app.name("darsa");
  app.require_subcommand(1);

  Common common;
  std::vector<std::string> ot_inputs;
  std::string method = "sinkhorn", plan_path, source_path, target_path, checkpoint;
  std::optional<int> max_iter;
  std::optional<double> tol;
  int samples = 0;
  bool source_only = false;
  double sigma = 0.05;
  int n_per_domain = 2000;

  auto* ot_cmd = app.add_subcommand("ot", "Distance between two CSV clouds or two mixture JSON files");
  ot_cmd->add_option("inputs", ot_inputs, "Two CSV files (or mixture JSON for mw1)")->required()->expected(2);
  ot_cmd->add_option("--method", method, "Estimator")
      ->check(CLI::IsMember({"exact1d", "exact", "sinkhorn", "mw1"}))
      ->capture_default_str();
  ot_cmd->add_option("--max-iter", max_iter, "Sinkhorn iteration cap");
  ot_cmd->add_option("--tol", tol, "Sinkhorn marginal tolerance");
  ot_cmd->add_option("--samples", samples, "mw1: price component pairs by sampled Sinkhorn with this many draws");
  ot_cmd->add_option("--plan", plan_path, "Write the coupling as CSV");
  add_common(ot_cmd, common, false, false);

  auto* bounds_cmd = app.add_subcommand("bounds", "Bound-term report for a labeled source and a target");
  bounds_cmd->add_option("--source", source_path, "Labeled source CSV")->required();
  bounds_cmd->add_option("--target", target_path, "Target CSV")->required();
  bounds_cmd->add_option("--checkpoint", checkpoint, "Model checkpoint JSON")->check(CLI::ExistingFile);
  add_common(bounds_cmd, common, false, false);

  auto* train_cmd = app.add_subcommand("train", "Pretrain and adapt");
  train_cmd->add_flag("--source-only", source_only, "Baseline: no alignment terms, w_T = w_S, one encoder");
  add_common(train_cmd, common, true, true);

  auto* fig_cmd = app.add_subcommand("figure1", "Per-cluster distances on the two-cluster 1-D task");
  fig_cmd->add_option("--sigma", sigma, "Component standard deviation")->capture_default_str();
  fig_cmd->add_option("--n", n_per_domain, "Samples per domain")->capture_default_str();
  fig_cmd->add_option("--method", method, "Estimator")->check(CLI::IsMember({"exact1d", "sinkhorn"}))->capture_default_str();
  add_common(fig_cmd, common, false, false);

  auto* gen_cmd = app.add_subcommand("gen", "Write a generated task as CSV plus manifest");
  add_common(gen_cmd, common, false, true);

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp&) {
    out << app.help();
    return kExitOk;
  } catch (const CLI::CallForAllHelp&) {
    out << app.help("", CLI::AppFormatMode::All);
    return kExitOk;
  } catch (const CLI::ParseError& e) {
    err << "error: " << e.what() << '\n';
    const auto* sub = app.get_subcommands().empty() ? &app : app.get_subcommands().front();
    err << sub->help();
    return kExitInput;
  }

  try {
    if (ot_cmd->parsed()) return cmd_ot(ot_inputs, method, common, max_iter, tol, samples, plan_path, out);
    if (bounds_cmd->parsed()) return cmd_bounds(source_path, target_path, checkpoint, common, out);
    if (train_cmd->parsed()) return cmd_train(common, source_only, out, err);
    if (fig_cmd->parsed()) return cmd_figure1(sigma, n_per_domain, method, common, out);
    if (gen_cmd->parsed()) return cmd_gen(common, out);
  } catch (const InputError& e) {
    err << "input error: " << e.what() << '\n';
    return kExitInput;
  } catch (const SolverError& e) {
    err << "solver error: " << e.what() << " (residual " << e.residual() << ")\n";
    return kExitSolver;
  } catch (const TrainingError& e) {
    err << "training failure: " << e.what() << '\n';
    return kExitTraining;
  } catch (const fs::filesystem_error& e) {
    err << "input error: " << e.what() << '\n';
    return kExitInput;
  } catch (const json::exception& e) {
    err << "input error: " << e.what() << '\n';
    return kExitInput;
  }
  return kExitInput;
}

}  // namespace darsa::cli
