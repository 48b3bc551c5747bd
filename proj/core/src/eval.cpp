#include "epistemic/eval.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <iomanip>
#include <numeric>
#include <random>
#include <set>
#include <sstream>
#include <stdexcept>

#include <nlohmann/json.hpp>

namespace epistemic {

namespace {
constexpr std::array<Assertion, 3> kAssertions{Assertion::ik, Assertion::imk, Assertion::idk};
}

AugConfusionMatrix::AugConfusionMatrix(std::size_t class_count)
    : classes_(class_count), counts_(3 * class_count * class_count, 0) {
  if (class_count == 0) throw std::invalid_argument("confusion matrix needs at least one class");
}

void AugConfusionMatrix::add(Assertion assertion, std::size_t predicted, std::size_t truth) {
  if (predicted >= classes_ || truth >= classes_) {
    throw std::out_of_range("confusion matrix: label (" + std::to_string(predicted) + ", " +
                            std::to_string(truth) + ") outside " + std::to_string(classes_) + " classes");
  }
  ++counts_[offset(assertion, predicted, truth)];
}

void AugConfusionMatrix::merge(const AugConfusionMatrix& other) {
  if (other.classes_ != classes_) throw std::invalid_argument("confusion matrix merge: class counts differ");
  for (std::size_t i = 0; i < counts_.size(); ++i) counts_[i] += other.counts_[i];
}

std::size_t AugConfusionMatrix::count(Assertion a, std::size_t predicted, std::size_t truth) const {
  if (predicted >= classes_ || truth >= classes_) throw std::out_of_range("confusion matrix: label out of range");
  return counts_[offset(a, predicted, truth)];
}

std::size_t AugConfusionMatrix::block_total(Assertion a) const {
  const auto begin = counts_.begin() + static_cast<std::ptrdiff_t>(offset(a, 0, 0));
  return std::accumulate(begin, begin + static_cast<std::ptrdiff_t>(classes_ * classes_), std::size_t{0});
}

std::size_t AugConfusionMatrix::block_diagonal(Assertion a) const {
  std::size_t s = 0;
  for (std::size_t c = 0; c < classes_; ++c) s += counts_[offset(a, c, c)];
  return s;
}

std::size_t AugConfusionMatrix::total() const {
  return std::accumulate(counts_.begin(), counts_.end(), std::size_t{0});
}

EpistemicMetrics metrics_from(const AugConfusionMatrix& acm) {
  const std::size_t total = acm.total();
  if (total == 0) throw std::invalid_argument("metrics_from: confusion matrix is empty");
  const std::size_t ik = acm.block_total(Assertion::ik);
  const std::size_t imk = acm.block_total(Assertion::imk);
  const std::size_t idk = acm.block_total(Assertion::idk);
  const double n = static_cast<double>(total);
  EpistemicMetrics m;
  m.f_ik = static_cast<double>(ik) / n;
  m.f_imk = static_cast<double>(imk) / n;
  // Complement form keeps f_ik + f_imk + f_idk == 1 exact in floating point.
  m.f_idk = idk == 0 ? 0.0 : 1.0 - (m.f_ik + m.f_imk);
  if (ik > 0) m.a_ik = static_cast<double>(acm.block_diagonal(Assertion::ik)) / static_cast<double>(ik);
  if (imk + idk > 0) {
    m.a_not_ik = static_cast<double>(acm.block_diagonal(Assertion::imk) + acm.block_diagonal(Assertion::idk)) /
                 static_cast<double>(imk + idk);
  }
  return m;
}

std::string_view to_string(PerturbationKind kind) {
  switch (kind) {
    case PerturbationKind::gaussian: return "gaussian";
    case PerturbationKind::uniform: return "uniform";
    case PerturbationKind::large_uniform: return "large_uniform";
    case PerturbationKind::bim: return "bim";
  }
  return "?";
}

PerturbationSpec parse_perturbation(std::string_view text) {
  const auto colon = text.find(':');
  if (colon == std::string_view::npos) {
    throw std::invalid_argument("perturbation '" + std::string(text) + "' must look like kind:magnitude");
  }
  const std::string_view kind = text.substr(0, colon);
  const std::string_view mag = text.substr(colon + 1);
  PerturbationSpec spec;
  if (kind == "gaussian") spec.kind = PerturbationKind::gaussian;
  else if (kind == "uniform") spec.kind = PerturbationKind::uniform;
  else if (kind == "large_uniform") spec.kind = PerturbationKind::large_uniform;
  else if (kind == "bim") spec.kind = PerturbationKind::bim;
  else throw std::invalid_argument("unknown perturbation kind '" + std::string(kind) + "'");
  const auto [ptr, ec] = std::from_chars(mag.data(), mag.data() + mag.size(), spec.magnitude);
  if (ec != std::errc() || ptr != mag.data() + mag.size() || !(spec.magnitude >= 0.0)) {
    throw std::invalid_argument("perturbation magnitude '" + std::string(mag) + "' is not a non-negative number");
  }
  return spec;
}

FeatureStats feature_stats(const Matrix& x) {
  if (x.rows() == 0) throw std::invalid_argument("feature_stats: no rows");
  const std::size_t d = x.cols();
  FeatureStats s{std::vector<double>(d, 0.0), std::vector<double>(d, 0.0), std::vector<double>(d), std::vector<double>(d)};
  for (std::size_t f = 0; f < d; ++f) {
    s.min[f] = s.max[f] = x(0, f);
  }
  for (std::size_t r = 0; r < x.rows(); ++r) {
    for (std::size_t f = 0; f < d; ++f) {
      const double v = x(r, f);
      s.mean[f] += v;
      s.min[f] = std::min(s.min[f], v);
      s.max[f] = std::max(s.max[f], v);
    }
  }
  const double n = static_cast<double>(x.rows());
  for (auto& m : s.mean) m /= n;
  for (std::size_t r = 0; r < x.rows(); ++r)
    for (std::size_t f = 0; f < d; ++f) s.stddev[f] += (x(r, f) - s.mean[f]) * (x(r, f) - s.mean[f]);
  for (auto& v : s.stddev) v = std::sqrt(v / n);
  return s;
}

namespace {

double safe_scale(double sd) { return sd > 0.0 ? sd : 1.0; }

}  // namespace

Dataset standardize(const Dataset& data, const FeatureStats& stats) {
  if (stats.mean.size() != data.dim()) throw std::invalid_argument("standardize: statistics do not match the data width");
  Dataset out = data;
  for (std::size_t r = 0; r < out.size(); ++r) {
    auto row = out.features.row(r);
    for (std::size_t f = 0; f < row.size(); ++f) row[f] = (row[f] - stats.mean[f]) / safe_scale(stats.stddev[f]);
  }
  return out;
}

LayeredNet fold_standardization(const LayeredNet& net, const FeatureStats& stats) {
  if (stats.mean.size() != net.input_dim()) {
    throw std::invalid_argument("fold_standardization: statistics do not match the network input");
  }
  std::vector<DenseLayer> layers = net.layers();
  DenseLayer& first = layers.front();
  // (x - m)/s W + b  =  x (W/s) + (b - (m/s) W)
  for (std::size_t i = 0; i < first.input_dim(); ++i) {
    const double s = safe_scale(stats.stddev[i]);
    for (std::size_t j = 0; j < first.output_dim(); ++j) {
      first.bias[j] -= stats.mean[i] / s * first.weights(i, j);
      first.weights(i, j) /= s;
    }
  }
  return LayeredNet(net.input_dim(), std::move(layers));
}

Dataset perturb(const Dataset& data, const PerturbationSpec& spec, const FeatureStats& reference,
                const LayeredNet* net) {
  if (!(spec.magnitude >= 0.0)) throw std::invalid_argument("perturb: magnitude must be non-negative");
  if (reference.stddev.size() != data.dim()) {
    throw std::invalid_argument("perturb: reference statistics have the wrong dimension");
  }
  Dataset out = data;
  if (spec.kind == PerturbationKind::bim) {
    if (net == nullptr) throw std::invalid_argument("perturb: bim requires a network");
    BimOptions opt;
    opt.bound = spec.magnitude;
    opt.iterations = spec.bim_iterations;
    opt.step = spec.magnitude > 0.0 ? 0.25 * spec.magnitude : 1.0;
    opt.clip_range = spec.clip_range;
    for (std::size_t r = 0; r < out.size(); ++r) {
      const auto adv = bim_attack(*net, data.sample(r), data.labels[r], opt);
      std::copy(adv.begin(), adv.end(), out.features.row(r).begin());
    }
    return out;
  }

  std::mt19937_64 rng(spec.seed);
  std::normal_distribution<double> normal(0.0, 1.0);
  std::uniform_real_distribution<double> uniform(-1.0, 1.0);
  for (std::size_t r = 0; r < out.size(); ++r) {
    auto row = out.features.row(r);
    for (std::size_t f = 0; f < row.size(); ++f) {
      switch (spec.kind) {
        case PerturbationKind::gaussian:
          row[f] += spec.magnitude * reference.stddev[f] * normal(rng);
          break;
        case PerturbationKind::uniform:
          row[f] += spec.magnitude * reference.stddev[f] * uniform(rng);
          break;
        case PerturbationKind::large_uniform:
          row[f] += spec.magnitude * (reference.max[f] - reference.min[f]) * uniform(rng);
          break;
        case PerturbationKind::bim:
          break;
      }
    }
  }
  return out;
}

AugConfusionMatrix evaluate(const EpistemicClassifier& ec, const Dataset& data) {
  AugConfusionMatrix acm(ec.net().class_count());
  for (std::size_t i = 0; i < data.size(); ++i) acm.accumulate(ec.infer(data.sample(i)), data.labels[i]);
  return acm;
}

AugConfusionMatrix evaluate_baseline(const LayeredNet& net, const Dataset& data, double threshold) {
  AugConfusionMatrix acm(net.class_count());
  for (std::size_t i = 0; i < data.size(); ++i) {
    const auto d = softmax_baseline(net, data.sample(i), threshold);
    acm.add(d.abstain ? Assertion::idk : Assertion::ik, d.belief, data.labels[i]);
  }
  return acm;
}

std::vector<SweepRow> epsilon_sweep(const EpistemicClassifier& ec, const Dataset& data, std::span<const double> grid) {
  if (grid.empty()) throw std::invalid_argument("epsilon_sweep: empty grid");
  std::vector<double> sorted(grid.begin(), grid.end());
  std::sort(sorted.begin(), sorted.end());
  std::vector<SweepRow> rows;
  rows.reserve(sorted.size());
  for (double eps : sorted) {
    std::vector<NeighborhoodSpec> specs = ec.specs();
    for (auto& s : specs) {
      if (s.mode == NeighborhoodMode::knn) throw std::invalid_argument("epsilon_sweep: knn mode has no eps");
      s.eps = eps;
    }
    rows.push_back({eps, metrics_from(evaluate(ec.with_specs(std::move(specs)), data))});
  }
  return rows;
}

Dataset make_blobs(std::span<const std::vector<double>> centers, double sigma, std::size_t per_class,
                   std::uint64_t seed) {
  if (centers.size() < 2) throw std::invalid_argument("make_blobs: need at least two centers");
  if (!(sigma >= 0.0)) throw std::invalid_argument("make_blobs: sigma must be non-negative");
  const std::size_t dim = centers.front().size();
  for (const auto& c : centers)
    if (c.size() != dim) throw std::invalid_argument("make_blobs: centers have different dimensions");

  std::mt19937_64 rng(seed);
  std::normal_distribution<double> normal(0.0, 1.0);
  Dataset d;
  d.class_count = centers.size();
  d.features = Matrix(centers.size() * per_class, dim);
  d.labels.reserve(centers.size() * per_class);
  std::size_t r = 0;
  for (std::size_t c = 0; c < centers.size(); ++c) {
    for (std::size_t i = 0; i < per_class; ++i, ++r) {
      auto row = d.features.row(r);
      for (std::size_t f = 0; f < dim; ++f) row[f] = centers[c][f] + sigma * normal(rng);
      d.labels.push_back(c);
    }
  }
  return d;
}

namespace {

std::string_view trim(std::string_view s) {
  while (!s.empty() && (s.front() == ' ' || s.front() == '\t' || s.front() == '\r')) s.remove_prefix(1);
  while (!s.empty() && (s.back() == ' ' || s.back() == '\t' || s.back() == '\r')) s.remove_suffix(1);
  return s;
}

}  // namespace

Dataset parse_csv(std::istream& in, bool has_header) {
  Dataset d;
  std::string line;
  std::size_t line_no = 0;
  bool header_pending = has_header;
  std::vector<double> row;
  std::size_t max_label = 0;
  std::set<std::size_t> seen;
  while (std::getline(in, line)) {
    ++line_no;
    if (trim(line).empty()) continue;
    if (header_pending) {
      header_pending = false;
      continue;
    }
    row.clear();
    std::string_view rest = line;
    while (true) {
      const auto comma = rest.find(',');
      const std::string_view cell = trim(rest.substr(0, comma));
      double v = 0.0;
      const auto [ptr, ec] = std::from_chars(cell.data(), cell.data() + cell.size(), v);
      if (cell.empty() || ec != std::errc() || ptr != cell.data() + cell.size() || !std::isfinite(v)) {
        throw std::invalid_argument("csv line " + std::to_string(line_no) + ", column " +
                                    std::to_string(row.size() + 1) + ": '" + std::string(cell) +
                                    "' is not a number");
      }
      row.push_back(v);
      if (comma == std::string_view::npos) break;
      rest.remove_prefix(comma + 1);
    }
    if (row.size() < 2) {
      throw std::invalid_argument("csv line " + std::to_string(line_no) + ": need features and a label");
    }
    if (d.features.rows() > 0 && row.size() != d.features.cols() + 1) {
      throw std::invalid_argument("csv line " + std::to_string(line_no) + ": expected " +
                                  std::to_string(d.features.cols() + 1) + " columns, found " +
                                  std::to_string(row.size()));
    }
    const double label = row.back();
    if (label < 0.0 || label != std::floor(label)) {
      throw std::invalid_argument("csv line " + std::to_string(line_no) + ": label " + std::to_string(label) +
                                  " is not a non-negative integer");
    }
    row.pop_back();
    d.features.append_row(row);
    const auto l = static_cast<std::size_t>(label);
    d.labels.push_back(l);
    seen.insert(l);
    max_label = std::max(max_label, l);
  }
  if (d.labels.empty()) throw std::invalid_argument("csv: no data rows");
  if (seen.size() != max_label + 1) {
    for (std::size_t c = 0; c <= max_label; ++c) {
      if (!seen.contains(c)) {
        throw std::invalid_argument("csv: label " + std::to_string(c) + " never occurs but label " +
                                    std::to_string(max_label) + " does; labels must be 0..C-1");
      }
    }
  }
  d.class_count = max_label + 1;
  return d;
}

Dataset load_csv(const std::filesystem::path& path, bool has_header) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open " + path.string());
  try {
    return parse_csv(in, has_header);
  } catch (const std::invalid_argument& e) {
    throw std::invalid_argument(path.string() + ": " + e.what());
  }
}

DataSplit split(const Dataset& data, std::array<double, 3> fractions, std::uint64_t seed) {
  data.validate();
  for (double f : fractions)
    if (!(f >= 0.0)) throw std::invalid_argument("split: fractions must be non-negative");
  if (std::abs(fractions[0] + fractions[1] + fractions[2] - 1.0) > 1e-9) {
    throw std::invalid_argument("split: fractions must sum to 1");
  }
  std::mt19937_64 rng(seed);
  std::array<std::vector<std::size_t>, 3> parts;
  for (std::size_t c = 0; c < data.class_count; ++c) {
    std::vector<std::size_t> idx;
    for (std::size_t i = 0; i < data.size(); ++i)
      if (data.labels[i] == c) idx.push_back(i);
    std::shuffle(idx.begin(), idx.end(), rng);
    const auto n = static_cast<double>(idx.size());
    const std::size_t n_train = std::min(idx.size(), static_cast<std::size_t>(std::llround(fractions[0] * n)));
    const std::size_t n_val =
        std::min(idx.size() - n_train, static_cast<std::size_t>(std::llround(fractions[1] * n)));
    parts[0].insert(parts[0].end(), idx.begin(), idx.begin() + static_cast<std::ptrdiff_t>(n_train));
    parts[1].insert(parts[1].end(), idx.begin() + static_cast<std::ptrdiff_t>(n_train),
                    idx.begin() + static_cast<std::ptrdiff_t>(n_train + n_val));
    parts[2].insert(parts[2].end(), idx.begin() + static_cast<std::ptrdiff_t>(n_train + n_val), idx.end());
  }
  constexpr std::array<DataRole, 3> roles{DataRole::train, DataRole::validation, DataRole::test};
  std::array<Dataset, 3> out;
  for (std::size_t p = 0; p < 3; ++p) {
    std::sort(parts[p].begin(), parts[p].end());
    out[p].class_count = data.class_count;
    out[p].role = roles[p];
    out[p].features = Matrix(parts[p].size(), data.dim());
    for (std::size_t r = 0; r < parts[p].size(); ++r) {
      auto src = data.sample(parts[p][r]);
      std::copy(src.begin(), src.end(), out[p].features.row(r).begin());
      out[p].labels.push_back(data.labels[parts[p][r]]);
    }
  }
  return {std::move(out[0]), std::move(out[1]), std::move(out[2])};
}

std::string format_number(std::optional<double> v) {
  if (!v) return "null";
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.17g", *v);
  return buf;
}

std::string sweep_csv(std::span<const SweepRow> rows) {
  std::string out = "epsilon,f_ik,f_imk,f_idk,a_ik,a_not_ik\n";
  for (const auto& r : rows) {
    out += format_number(r.eps) + "," + format_number(r.metrics.f_ik) + "," + format_number(r.metrics.f_imk) +
           "," + format_number(r.metrics.f_idk) + "," + format_number(r.metrics.a_ik) + "," +
           format_number(r.metrics.a_not_ik) + "\n";
  }
  return out;
}

std::string acm_json(const AugConfusionMatrix& acm) {
  using nlohmann::json;
  json blocks = json::object();
  for (Assertion a : kAssertions) {
    json rows = json::array();
    for (std::size_t p = 0; p < acm.class_count(); ++p) {
      json row = json::array();
      for (std::size_t t = 0; t < acm.class_count(); ++t) row.push_back(acm.count(a, p, t));
      rows.push_back(std::move(row));
    }
    blocks[std::string(to_string(a))] = std::move(rows);
  }
  const auto m = metrics_from(acm);
  auto opt = [](std::optional<double> v) { return v ? json(*v) : json(nullptr); };
  json doc;
  doc["blocks"] = std::move(blocks);
  doc["metrics"] = {{"f_ik", m.f_ik},       {"f_imk", m.f_imk},           {"f_idk", m.f_idk},
                    {"a_ik", opt(m.a_ik)}, {"a_not_ik", opt(m.a_not_ik)}, {"samples", acm.total()}};
  doc["orientation"] = "rows=predicted,cols=true";
  return doc.dump(2) + "\n";
}

std::string acm_text(const AugConfusionMatrix& acm) {
  std::ostringstream os;
  const std::size_t c = acm.class_count();
  std::size_t width = 5;
  for (Assertion a : kAssertions)
    for (std::size_t p = 0; p < c; ++p)
      for (std::size_t t = 0; t < c; ++t) width = std::max(width, std::to_string(acm.count(a, p, t)).size() + 1);
  os << "augmented confusion matrix (rows=predicted, cols=true), " << acm.total() << " samples\n";
  for (Assertion a : kAssertions) {
    os << to_string(a) << " (" << acm.block_total(a) << ")\n";
    os << std::setw(static_cast<int>(width)) << "";
    for (std::size_t t = 0; t < c; ++t) os << std::setw(static_cast<int>(width)) << ("t" + std::to_string(t));
    os << "\n";
    for (std::size_t p = 0; p < c; ++p) {
      os << std::setw(static_cast<int>(width)) << ("p" + std::to_string(p));
      for (std::size_t t = 0; t < c; ++t) os << std::setw(static_cast<int>(width)) << acm.count(a, p, t);
      os << "\n";
    }
  }
  const auto m = metrics_from(acm);
  os << "F_IK=" << format_number(m.f_ik) << " F_IMK=" << format_number(m.f_imk) << " F_IDK=" << format_number(m.f_idk)
     << " A_IK=" << format_number(m.a_ik) << " A_notIK=" << format_number(m.a_not_ik) << "\n";
  return os.str();
}

}  // namespace epistemic
