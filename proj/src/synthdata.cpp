#include "darsa/synthdata.hpp"

#include <algorithm>
#include <cctype>
#include <charconv>
#include <cmath>
#include <fstream>
#include <limits>
#include <numeric>
#include <random>
#include <sstream>

namespace darsa::synth {

namespace {

Dataset to_dataset(ot::LabeledSamples<double> s, int k) {
  Dataset d;
  d.features = std::move(s.samples);
  d.labels = std::move(s.labels);
  d.num_classes = k;
  return d;
}

nlohmann::json weights_json(const ClassWeights& w) {
  return std::vector<double>(w.values().data(), w.values().data() + w.size());
}

ot::GaussianMixtureXd isotropic_mixture(const ClassWeights& w, const Mat& means, double sigma) {
  std::vector<ot::GaussianComponentXd> comps;
  for (Eigen::Index k = 0; k < means.rows(); ++k)
    comps.push_back(ot::GaussianComponentXd::isotropic(means.row(k).transpose(), sigma));
  return ot::GaussianMixtureXd(w, std::move(comps));
}

std::string trim(std::string s) {
  const auto keep = [](unsigned char c) { return !std::isspace(c); };
  s.erase(s.begin(), std::find_if(s.begin(), s.end(), keep));
  s.erase(std::find_if(s.rbegin(), s.rend(), keep).base(), s.end());
  return s;
}

std::vector<std::string> split_fields(const std::string& line) {
  std::vector<std::string> out;
  std::stringstream ss(line);
  std::string field;
  while (std::getline(ss, field, ',')) out.push_back(trim(field));
  if (!line.empty() && line.back() == ',') out.emplace_back();
  return out;
}

std::string format_double(double v) {
  char buf[64];
  const auto r = std::to_chars(buf, buf + sizeof buf, v);
  return std::string(buf, r.ptr);
}

}  // namespace

TaskPair make_figure1_task(double sigma, int n_per_domain, std::uint64_t seed) {
  if (!(sigma > 0.0) || !std::isfinite(sigma)) throw InputError("sigma must be positive");
  if (n_per_domain < 2) throw InputError("need at least two samples per domain");
  Mat ms(2, 1), mt(2, 1);
  ms << -1.5, 1.5;
  mt << -1.4, 1.6;
  Vec ws(2), wt(2);
  ws << 0.7, 0.3;
  wt << 0.3, 0.7;
  auto smix = isotropic_mixture(ClassWeights(ws), ms, sigma);
  auto tmix = isotropic_mixture(ClassWeights(wt), mt, sigma);
  TaskPair out{to_dataset(ot::sample_gmm(smix, n_per_domain, derive_seed(seed, 1)), 2),
               to_dataset(ot::sample_gmm(tmix, n_per_domain, derive_seed(seed, 2)), 2), smix, tmix, {}};
  out.manifest = {{"generator", "figure1"},
                  {"num_classes", 2},
                  {"dim", 1},
                  {"n_per_domain", n_per_domain},
                  {"seed", seed},
                  {"params", {{"sigma", sigma}}},
                  {"source_mixture", mixture_to_json(smix)},
                  {"target_mixture", mixture_to_json(tmix)}};
  return out;
}

void ShiftedGmmSpec::validate() const {
  if (num_classes < 1 || dim < 1) throw InputError("need at least one class and one dimension");
  if (!(mean_separation > 0.0)) throw InputError("mean separation must be positive");
  if (!(target_mean_shift >= 0.0)) throw InputError("target mean shift must be nonnegative");
  if (!(sigma > 0.0)) throw InputError("sigma must be positive");
  if (n_per_domain < 1) throw InputError("sample count must be positive");
  if (source_props.size() != num_classes || target_props.size() != num_classes)
    throw InputError("class proportions do not match the class count");
  if (audit_sample < 1 || max_attempts < 1) throw InputError("audit settings must be positive");
}

Mat grid_means(int num_classes, int dim, double separation) {
  if (num_classes < 1 || dim < 1) throw InputError("need at least one class and one dimension");
  int side = 1;
  while (std::pow(static_cast<double>(side), dim) < num_classes) ++side;
  Mat means = Mat::Zero(num_classes, dim);
  for (int k = 0; k < num_classes; ++k) {
    int rest = k;
    for (int j = 0; j < dim; ++j) {
      means(k, j) = separation * (rest % side);
      rest /= side;
    }
  }
  means.rowwise() -= means.colwise().mean();
  return means;
}

Mat cross_class_w1(const Dataset& source, const Dataset& target, int per_class, std::uint64_t seed) {
  if (!source.labeled() || !target.labeled()) throw InputError("cross-class audit needs labels on both domains");
  const int k = source.num_classes;
  std::mt19937_64 rng(seed);
  auto subsample = [&](const Dataset& d) {
    auto members = SubdomainPartition(*d.labels, k).members();
    std::vector<Mat> parts;
    for (auto& m : members) {
      std::shuffle(m.begin(), m.end(), rng);
      if (static_cast<int>(m.size()) > per_class) m.resize(static_cast<std::size_t>(per_class));
      parts.push_back(gather_rows(d.features, m));
    }
    return parts;
  };
  const auto s = subsample(source), t = subsample(target);
  const ot::SinkhornParams params{0.02, 5000, 1e-4};
  Mat cross = Mat::Constant(k, k, std::numeric_limits<double>::infinity());
  for (int i = 0; i < k; ++i)
    for (int j = 0; j < k; ++j)
      if (s[static_cast<std::size_t>(i)].rows() > 0 && t[static_cast<std::size_t>(j)].rows() > 0)
        cross(i, j) = ot::w1_empirical(s[static_cast<std::size_t>(i)], t[static_cast<std::size_t>(j)], params);
  return cross;
}

bool paired_distance_holds(const Mat& cross) {
  for (Eigen::Index k = 0; k < cross.rows(); ++k) {
    const double own = cross(k, k);
    if (!std::isfinite(own)) continue;
    for (Eigen::Index l = 0; l < cross.rows(); ++l) {
      if (l == k) continue;
      if (!(own < cross(k, l)) || !(own < cross(l, k))) return false;
    }
  }
  return true;
}

TaskPair make_shifted_gmm(const ShiftedGmmSpec& spec) {
  spec.validate();
  const Mat ms = grid_means(spec.num_classes, spec.dim, spec.mean_separation);
  const Eigen::RowVectorXd offset =
      Eigen::RowVectorXd::Constant(spec.dim, spec.target_mean_shift / std::sqrt(static_cast<double>(spec.dim)));
  const Mat mt = ms.rowwise() + offset;
  auto smix = isotropic_mixture(spec.source_props, ms, spec.sigma);
  auto tmix = isotropic_mixture(spec.target_props, mt, spec.sigma);

  for (int attempt = 0; attempt < spec.max_attempts; ++attempt) {
    const auto a = static_cast<std::uint64_t>(attempt);
    TaskPair out{to_dataset(ot::sample_gmm(smix, spec.n_per_domain, derive_seed(spec.seed, 2 * a + 1)), spec.num_classes),
                 to_dataset(ot::sample_gmm(tmix, spec.n_per_domain, derive_seed(spec.seed, 2 * a + 2)), spec.num_classes),
                 smix, tmix, {}};
    const Mat cross = cross_class_w1(out.source, out.target, spec.audit_sample, derive_seed(spec.seed, 1000 + a));
    if (!paired_distance_holds(cross)) continue;
    out.manifest = {{"generator", "gmm"},
                    {"num_classes", spec.num_classes},
                    {"dim", spec.dim},
                    {"n_per_domain", spec.n_per_domain},
                    {"seed", spec.seed},
                    {"attempts", attempt + 1},
                    {"params",
                     {{"mean_separation", spec.mean_separation},
                      {"target_mean_shift", spec.target_mean_shift},
                      {"sigma", spec.sigma},
                      {"source_props", weights_json(spec.source_props)},
                      {"target_props", weights_json(spec.target_props)}}},
                    {"source_mixture", mixture_to_json(smix)},
                    {"target_mixture", mixture_to_json(tmix)}};
    return out;
  }
  throw SolverError("paired-distance audit failed after " + std::to_string(spec.max_attempts) + " attempts");
}

Dataset resample_with_props(const Dataset& data, const ClassWeights& props, int n, std::uint64_t seed) {
  if (!data.labeled()) throw InputError("resampling needs labels");
  if (n < 1) throw InputError("sample count must be positive");
  if (props.size() != data.num_classes) throw InputError("class proportions do not match the class count");
  const auto members = SubdomainPartition(*data.labels, data.num_classes).members();
  std::mt19937_64 rng(seed);
  std::vector<int> rows;
  for (int k = 0; k < data.num_classes; ++k) {
    const auto count = std::llround(static_cast<double>(n) * props[k]);
    if (count == 0) continue;
    const auto& pool = members[static_cast<std::size_t>(k)];
    if (pool.empty()) throw InputError("class " + std::to_string(k) + " absent from data");
    std::uniform_int_distribution<std::size_t> pick(0, pool.size() - 1);
    for (long long i = 0; i < count; ++i) rows.push_back(pool[pick(rng)]);
  }
  std::shuffle(rows.begin(), rows.end(), rng);
  Dataset out;
  out.features = gather_rows(data.features, rows);
  out.labels = std::vector<int>();
  for (int r : rows) out.labels->push_back((*data.labels)[static_cast<std::size_t>(r)]);
  out.num_classes = data.num_classes;
  return out;
}

void write_csv(const Dataset& data, const std::filesystem::path& path) {
  std::ofstream out(path);
  if (!out) throw InputError("cannot write " + path.string());
  for (Eigen::Index j = 0; j < data.dim(); ++j) out << (j ? "," : "") << 'f' << j;
  if (data.labeled()) out << (data.dim() ? "," : "") << "label";
  out << '\n';
  for (Eigen::Index i = 0; i < data.size(); ++i) {
    for (Eigen::Index j = 0; j < data.dim(); ++j) out << (j ? "," : "") << format_double(data.features(i, j));
    if (data.labeled()) out << ',' << (*data.labels)[static_cast<std::size_t>(i)];
    out << '\n';
  }
  if (!out) throw InputError("cannot write " + path.string());
}

Dataset read_csv(const std::filesystem::path& path, std::optional<int> num_classes) {
  std::ifstream in(path);
  if (!in) throw InputError("cannot open " + path.string());
  std::string line;
  if (!std::getline(in, line)) throw InputError("malformed CSV header in " + path.string());
  const auto header = split_fields(line);
  bool labeled = !header.empty() && header.back() == "label";
  const std::size_t d = header.size() - (labeled ? 1 : 0);
  if (d == 0) throw InputError("malformed CSV header in " + path.string());
  for (std::size_t j = 0; j < d; ++j)
    if (header[j] != "f" + std::to_string(j)) throw InputError("malformed CSV header in " + path.string());

  std::vector<double> values;
  std::vector<int> labels;
  std::size_t line_no = 1;
  while (std::getline(in, line)) {
    ++line_no;
    if (trim(line).empty()) continue;
    const auto fields = split_fields(line);
    const auto where = path.string() + ":" + std::to_string(line_no);
    if (fields.size() != header.size()) throw InputError("wrong field count at " + where);
    for (std::size_t j = 0; j < d; ++j) {
      double v = 0.0;
      const auto& f = fields[j];
      const auto r = std::from_chars(f.data(), f.data() + f.size(), v);
      if (r.ec != std::errc() || r.ptr != f.data() + f.size() || !std::isfinite(v))
        throw InputError("bad number at " + where);
      values.push_back(v);
    }
    if (labeled) {
      int y = 0;
      const auto& f = fields.back();
      const auto r = std::from_chars(f.data(), f.data() + f.size(), y);
      if (r.ec != std::errc() || r.ptr != f.data() + f.size() || y < 0) throw InputError("bad label at " + where);
      labels.push_back(y);
    }
  }
  Dataset data;
  const auto n = static_cast<Eigen::Index>(values.size() / d);
  data.features = Eigen::Map<const RowMat>(values.data(), n, static_cast<Eigen::Index>(d));
  if (labeled) {
    data.num_classes = labels.empty() ? 1 : *std::max_element(labels.begin(), labels.end()) + 1;
    data.labels = std::move(labels);
  }
  if (num_classes) data.num_classes = *num_classes;
  data.validate();
  return data;
}

nlohmann::json mixture_to_json(const ot::GaussianMixtureXd& mix) {
  auto comps = nlohmann::json::array();
  for (const auto& c : mix.components) {
    const RowMat cov = c.covariance;
    comps.push_back({{"mean", std::vector<double>(c.mean.data(), c.mean.data() + c.mean.size())},
                     {"covariance", std::vector<double>(cov.data(), cov.data() + cov.size())}});
  }
  return {{"weights", weights_json(mix.weights)}, {"components", comps}};
}

ot::GaussianMixtureXd mixture_from_json(const nlohmann::json& j) {
  try {
    const auto w = j.at("weights").get<std::vector<double>>();
    std::vector<ot::GaussianComponentXd> comps;
    for (const auto& c : j.at("components")) {
      const auto mean = c.at("mean").get<std::vector<double>>();
      const auto cov = c.at("covariance").get<std::vector<double>>();
      const auto d = static_cast<Eigen::Index>(mean.size());
      if (static_cast<Eigen::Index>(cov.size()) != d * d) throw InputError("covariance size does not match mean");
      comps.emplace_back(Eigen::Map<const Vec>(mean.data(), d), Eigen::Map<const RowMat>(cov.data(), d, d));
    }
    return ot::GaussianMixtureXd(ClassWeights(Eigen::Map<const Vec>(w.data(), static_cast<Eigen::Index>(w.size()))),
                                 std::move(comps));
  } catch (const nlohmann::json::exception& e) {
    throw InputError(std::string("malformed mixture: ") + e.what());
  }
}

void write_json(const nlohmann::json& j, const std::filesystem::path& path) {
  std::ofstream out(path);
  if (!out) throw InputError("cannot write " + path.string());
  out << j.dump(2) << '\n';
}

nlohmann::json read_json(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw InputError("cannot open " + path.string());
  try {
    return nlohmann::json::parse(in);
  } catch (const nlohmann::json::parse_error& e) {
    throw InputError("malformed JSON in " + path.string() + ": " + e.what());
  }
}

}  // namespace darsa::synth
