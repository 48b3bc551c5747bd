#include "commands.hpp"

#include <algorithm>
#include <cctype>
#include <charconv>
#include <fstream>
#include <iostream>
#include <sstream>
#include <stdexcept>

namespace epistemic::cli {

using nlohmann::json;

namespace {

void write_file(const std::filesystem::path& path, const std::string& text) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw std::runtime_error("cannot write " + path.string());
  out << text;
  if (!out) throw std::runtime_error("write failed for " + path.string());
}

std::vector<std::size_t> widths_of(const LayeredNet& net) {
  std::vector<std::size_t> w;
  for (const auto& l : net.layers()) w.push_back(l.output_dim());
  return w;
}

void require_architecture(const RunConfig& config, const LayeredNet& net) {
  if (net.layer_count() != config.hidden.size() + 1) {
    throw std::invalid_argument("weights have " + std::to_string(net.layer_count() - 1) +
                                " hidden layers but the config declares " + std::to_string(config.hidden.size()));
  }
  for (std::size_t i = 0; i < config.hidden.size(); ++i) {
    if (net.layer(i).output_dim() != config.hidden[i]) {
      throw std::invalid_argument("weights: hidden layer " + std::to_string(i + 1) + " has width " +
                                  std::to_string(net.layer(i).output_dim()) + ", config says " +
                                  std::to_string(config.hidden[i]));
    }
  }
}

LayeredNet load_checked(const RunConfig& config, const std::filesystem::path& weights, const DataSplit& data) {
  LayeredNet net = load_weights(weights);
  require_architecture(config, net);
  if (net.input_dim() != data.train.dim()) {
    throw std::invalid_argument("weights expect input dimension " + std::to_string(net.input_dim()) +
                                " but the data has " + std::to_string(data.train.dim()));
  }
  if (net.class_count() != data.train.class_count) {
    throw std::invalid_argument("weights have " + std::to_string(net.class_count()) + " classes but the data has " +
                                std::to_string(data.train.class_count));
  }
  return net;
}

std::string perturbation_tag(const std::optional<PerturbationSpec>& p) {
  if (!p) return "clean";
  char buf[32];
  const auto res = std::to_chars(buf, buf + sizeof buf, p->magnitude);
  return std::string(to_string(p->kind)) + "_" + std::string(buf, res.ptr);
}

std::string metrics_cells(const EpistemicMetrics& m) {
  return format_number(m.f_ik) + "," + format_number(m.a_ik) + "," + format_number(m.a_not_ik);
}

std::vector<double> parse_row(const std::string& line, std::size_t line_no) {
  std::vector<double> row;
  std::size_t start = 0;
  while (start <= line.size()) {
    std::size_t end = line.find(',', start);
    if (end == std::string::npos) end = line.size();
    std::size_t b = start, e = end;
    while (b < e && std::isspace(static_cast<unsigned char>(line[b]))) ++b;
    while (e > b && std::isspace(static_cast<unsigned char>(line[e - 1]))) --e;
    double v = 0.0;
    const auto [ptr, ec] = std::from_chars(line.data() + b, line.data() + e, v);
    if (b == e || ec != std::errc() || ptr != line.data() + e) {
      throw std::invalid_argument("stdin line " + std::to_string(line_no) + ", column " +
                                  std::to_string(row.size() + 1) + ": not a number");
    }
    row.push_back(v);
    start = end + 1;
  }
  return row;
}

}  // namespace

std::vector<double> default_sweep_grid() {
  std::vector<double> grid{1e-3, 0.017, 0.237, 3.162};
  const auto extra = log_grid(1e-3, 1e3, 22);
  grid.insert(grid.end(), extra.begin() + 1, extra.end());
  std::sort(grid.begin(), grid.end());
  grid.erase(std::unique(grid.begin(), grid.end()), grid.end());
  return grid;
}

void run_train(const RunConfig& config) {
  const DataSplit data = prepare_data(config);
  LayeredNet net = make_network(data.train.dim(), config.hidden, config.activation, data.train.class_count,
                                config.seed + kSeedInit);
  if (config.standardize) {
    const FeatureStats stats = feature_stats(data.train.features);
    net = fold_standardization(train(std::move(net), standardize(data.train, stats), config.train_options()), stats);
  } else {
    net = train(std::move(net), data.train, config.train_options());
  }

  write_file(config.out / "weights.json", weights_to_json(net) + "\n");
  json report = {
      {"seed", config.seed},
      {"epochs", config.epochs},
      {"learning_rate", config.learning_rate},
      {"batch_size", config.batch_size},
      {"standardize", config.standardize},
      {"sizes", {{"train", data.train.size()}, {"validation", data.validation.size()}, {"test", data.test.size()}}},
      {"accuracy",
       {{"train", accuracy(net, data.train)},
        {"validation", data.validation.size() ? json(accuracy(net, data.validation)) : json(nullptr)},
        {"test", data.test.size() ? json(accuracy(net, data.test)) : json(nullptr)}}},
      {"overrides", config.overrides},
  };
  write_file(config.out / "train_report.json", report.dump(2) + "\n");
}

void run_build(const RunConfig& config, const std::filesystem::path& weights) {
  const DataSplit data = prepare_data(config);
  const LayeredNet net = load_checked(config, weights, data);
  if (data.validation.size() == 0) throw std::invalid_argument("split: validation set is empty");

  BuildOptions options;
  options.layers = config.layers;
  options.metric = config.metric;
  options.leaf_size = config.leaf_size;
  options.selection = config.selection();
  const BuildResult result = build(net, data.train, data.validation, options);

  const std::size_t hidden = net.layer_count() - 1;
  json specs = json::array();
  json ids = json::array();
  json names = json::array();
  for (const auto& s : result.classifier.specs()) {
    ids.push_back(s.layer);
    names.push_back(layer_name(s.layer, hidden));
    specs.push_back({{"layer", s.layer},
                     {"name", layer_name(s.layer, hidden)},
                     {"eps", s.eps ? json(*s.eps) : json(nullptr)},
                     {"k", s.k ? json(*s.k) : json(nullptr)}});
  }
  json manifest = {
      {"input_dim", net.input_dim()},
      {"class_count", net.class_count()},
      {"widths", widths_of(net)},
      {"layer_set", ids},
      {"layer_names", names},
      {"mode", std::string(to_string(config.mode))},
      {"metric", std::string(to_string(config.metric))},
      {"propagate", config.propagate},
      {"leaf_size", config.leaf_size},
      {"specs", specs},
      {"validation_f_ik", result.selection.coverage},
      {"candidates_evaluated", result.selection.evaluated.size()},
      {"seed", config.seed},
      {"overrides", config.overrides},
  };
  write_file(config.out / "manifest.json", manifest.dump(2) + "\n");
}

EpistemicClassifier load_classifier(const RunConfig& config, const LayeredNet& net, const Dataset& train,
                                    const std::filesystem::path& manifest_path) {
  std::ifstream in(manifest_path);
  if (!in) throw std::invalid_argument("cannot open manifest " + manifest_path.string());
  json m;
  try {
    m = json::parse(in);
  } catch (const json::parse_error& e) {
    throw std::invalid_argument(manifest_path.string() + ": malformed JSON: " + e.what());
  }
  try {
    if (m.at("input_dim").get<std::size_t>() != net.input_dim() ||
        m.at("class_count").get<std::size_t>() != net.class_count() ||
        m.at("widths").get<std::vector<std::size_t>>() != widths_of(net)) {
      throw std::invalid_argument("manifest " + manifest_path.string() + " was built for a different network");
    }
    const NeighborhoodMode mode = parse_mode(m.at("mode").get<std::string>());
    const MetricKind metric = parse_metric(m.at("metric").get<std::string>());
    const auto leaf = m.at("leaf_size").get<std::size_t>();
    std::vector<NeighborhoodSpec> specs;
    std::vector<SharedIndex> indexes;
    for (const auto& s : m.at("specs")) {
      NeighborhoodSpec spec;
      spec.layer = s.at("layer").get<LayerId>();
      spec.mode = mode;
      if (!s.at("eps").is_null()) spec.eps = s.at("eps").get<double>();
      if (!s.at("k").is_null()) spec.k = s.at("k").get<std::size_t>();
      net.require_layer(spec.layer);
      specs.push_back(spec);
      indexes.push_back(build_layer_index(net, train, spec.layer, metric, leaf));
    }
    (void)config;
    return EpistemicClassifier(net, std::move(specs), std::move(indexes));
  } catch (const json::exception& e) {
    throw std::invalid_argument("manifest " + manifest_path.string() + ": " + e.what());
  }
}

void run_eval(const RunConfig& config, const std::filesystem::path& weights, const std::filesystem::path& manifest,
              const std::optional<PerturbationSpec>& perturbation) {
  const DataSplit data = prepare_data(config);
  const LayeredNet net = load_checked(config, weights, data);
  if (data.test.size() == 0) throw std::invalid_argument("split: test set is empty");
  const EpistemicClassifier ec = load_classifier(config, net, data.train, manifest);

  // Baseline abstains on the same validation fraction the classifier leaves un-IK'd.
  const AugConfusionMatrix val_acm = evaluate(ec, data.validation);
  const double target = metrics_from(val_acm).f_ik;
  const double threshold = calibrate_softmax_threshold(net, data.validation, target);

  std::vector<std::optional<PerturbationSpec>> runs;
  if (perturbation) {
    runs.push_back(perturbation);
  } else {
    runs.emplace_back(std::nullopt);
    for (const auto& p : config.perturbations) runs.emplace_back(p);
  }

  const FeatureStats stats = feature_stats(data.train.features);
  std::ostringstream csv;
  csv << "perturbation,ec_f_ik,ec_a_ik,ec_a_not_ik,baseline_f_ik,baseline_a_ik,baseline_a_not_ik,baseline_threshold\n";
  for (const auto& run : runs) {
    Dataset test = data.test;
    if (run) {
      PerturbationSpec spec = *run;
      spec.seed = config.seed + kSeedPerturb;
      test = perturb(data.test, spec, stats, &net);
    }
    const std::string tag = perturbation_tag(run);
    const AugConfusionMatrix acm = evaluate(ec, test);
    const AugConfusionMatrix base = evaluate_baseline(net, test, threshold);
    write_file(config.out / ("acm_" + tag + ".json"), acm_json(acm) + "\n");
    write_file(config.out / ("acm_" + tag + ".txt"), acm_text(acm));
    write_file(config.out / ("acm_baseline_" + tag + ".json"), acm_json(base) + "\n");
    csv << tag << ',' << metrics_cells(metrics_from(acm)) << ',' << metrics_cells(metrics_from(base)) << ','
        << format_number(threshold) << '\n';
  }
  const std::string name = perturbation ? "eval_" + perturbation_tag(perturbation) + ".csv" : "eval.csv";
  write_file(config.out / name, csv.str());
}

void run_sweep(const RunConfig& config, const std::filesystem::path& weights) {
  const DataSplit data = prepare_data(config);
  const LayeredNet net = load_checked(config, weights, data);
  if (data.test.size() == 0) throw std::invalid_argument("split: test set is empty");
  if (config.mode == NeighborhoodMode::knn) throw std::invalid_argument("epistemic.mode: sweep needs an eps mode");

  const std::vector<LayerId> layers = config.layers.empty() ? default_layer_set(net) : config.layers;
  std::vector<NeighborhoodSpec> specs;
  std::vector<SharedIndex> indexes;
  const std::size_t k = config.k_values.empty() ? 1 : config.k_values.front();
  for (LayerId id : layers) {
    NeighborhoodSpec s{id, config.mode, 1.0, {}};
    if (config.mode != NeighborhoodMode::eps_ball) s.k = k;
    specs.push_back(s);
    indexes.push_back(build_layer_index(net, data.train, id, config.metric, config.leaf_size));
  }
  const EpistemicClassifier ec(net, std::move(specs), std::move(indexes));
  const std::vector<double> grid = config.sweep_grid.empty() ? default_sweep_grid() : config.sweep_grid;
  const auto rows = epsilon_sweep(ec, data.test, grid);
  write_file(config.out / "sweep.csv", sweep_csv(rows));
}

void run_infer(const RunConfig& config, const std::filesystem::path& weights, const std::filesystem::path& manifest,
               std::istream& in, std::ostream& out) {
  const DataSplit data = prepare_data(config);
  const LayeredNet net = load_checked(config, weights, data);
  const EpistemicClassifier ec = load_classifier(config, net, data.train, manifest);
  const std::size_t hidden = net.layer_count() - 1;

  std::string line;
  std::size_t line_no = 0;
  bool first = true;
  while (std::getline(in, line)) {
    ++line_no;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.find_first_not_of(" \t") == std::string::npos) continue;
    if (first) {
      first = false;
      // A leading non-numeric row is a header.
      const char c = line[line.find_first_not_of(" \t")];
      if (!(std::isdigit(static_cast<unsigned char>(c)) || c == '-' || c == '+' || c == '.')) continue;
    }
    std::vector<double> x = parse_row(line, line_no);
    if (x.size() == net.input_dim() + 1) x.pop_back();  // trailing label column
    if (x.size() != net.input_dim()) {
      throw std::invalid_argument("stdin line " + std::to_string(line_no) + ": expected " +
                                  std::to_string(net.input_dim()) + " features, got " + std::to_string(x.size()));
    }
    const EpistemicVerdict v = ec.infer(x);
    json supports = json::array();
    for (const auto& s : v.supports) {
      supports.push_back({{"layer", layer_name(s.layer, hidden)},
                          {"classes", s.classes},
                          {"count", s.neighbor_count()}});
    }
    const json row = {{"belief", v.belief},
                      {"assertion", std::string(to_string(v.assertion))},
                      {"justification", v.justification},
                      {"supports", supports}};
    out << row.dump() << '\n';
  }
}

}  // namespace epistemic::cli
