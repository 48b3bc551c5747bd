#include "config.hpp"

#include <fstream>

namespace epistemic::cli {

using nlohmann::json;

namespace {

template <typename T>
T get(const json& obj, const char* key, const std::string& path, T fallback) {
  if (!obj.contains(key)) return fallback;
  try {
    return obj.at(key).get<T>();
  } catch (const json::exception&) {
    throw ConfigError(path + key + ": has the wrong type");
  }
}

void require_object(const json& j, const std::string& path) {
  if (!j.is_object()) throw ConfigError((path.empty() ? "<root>" : path) + ": expected an object");
}

}  // namespace

SelectionConfig RunConfig::selection() const {
  SelectionConfig s;
  s.mode = mode;
  s.eps_grid = eps_grid;
  s.relative_grid = relative_grid;
  s.k_values = k_values;
  s.propagate = propagate;
  return s;
}

LayerId resolve_layer(const json& value, std::size_t hidden_count, const std::string& where) {
  const auto logit = static_cast<LayerId>(hidden_count);
  if (value.is_number_integer()) {
    const auto id = value.get<long long>();
    if (id < kInputLayer || id > logit) {
      throw ConfigError(where + ": layer id " + std::to_string(id) + " outside [-1, " + std::to_string(logit) + "]");
    }
    return static_cast<LayerId>(id);
  }
  if (!value.is_string()) throw ConfigError(where + ": layer must be a name or an integer id");
  const std::string name = value.get<std::string>();
  if (name == "input") return kInputLayer;
  if (name == "logit") return logit;
  if (name.rfind("hidden", 0) == 0) {
    try {
      std::size_t pos = 0;
      const int n = std::stoi(name.substr(6), &pos);
      if (pos == name.size() - 6 && n >= 1 && static_cast<std::size_t>(n) <= hidden_count) return n - 1;
    } catch (const std::exception&) {
    }
  }
  throw ConfigError(where + ": unknown layer '" + name + "' (network has " + std::to_string(hidden_count) +
                    " hidden layers)");
}

std::string layer_name(LayerId id, std::size_t hidden_count) {
  if (id == kInputLayer) return "input";
  if (static_cast<std::size_t>(id) == hidden_count) return "logit";
  return "hidden" + std::to_string(id + 1);
}

RunConfig parse_config(const json& doc, const std::filesystem::path& base_dir) {
  require_object(doc, "");
  RunConfig c;
  c.seed = get<std::uint64_t>(doc, "seed", "", 0);

  if (!doc.contains("data")) throw ConfigError("data: missing");
  const json& data = doc.at("data");
  require_object(data, "data");
  const bool has_csv = data.contains("csv");
  const bool has_blobs = data.contains("blobs");
  if (has_csv == has_blobs) throw ConfigError("data: specify exactly one of 'csv' or 'blobs'");
  if (has_csv) {
    std::filesystem::path p = get<std::string>(data, "csv", "data.", "");
    c.data.csv = p.is_absolute() ? p : base_dir / p;
    c.data.header = get<bool>(data, "header", "data.", true);
  } else {
    const json& b = data.at("blobs");
    require_object(b, "data.blobs");
    BlobSource blobs;
    blobs.centers = get<std::vector<std::vector<double>>>(b, "centers", "data.blobs.", {});
    if (blobs.centers.size() < 2) throw ConfigError("data.blobs.centers: need at least two centers");
    for (const auto& ctr : blobs.centers) {
      if (ctr.empty() || ctr.size() != blobs.centers.front().size()) {
        throw ConfigError("data.blobs.centers: centers must share a non-zero dimension");
      }
    }
    blobs.sigma = get<double>(b, "sigma", "data.blobs.", 1.0);
    if (!(blobs.sigma >= 0.0)) throw ConfigError("data.blobs.sigma: must be non-negative");
    blobs.per_class = get<std::size_t>(b, "per_class", "data.blobs.", 500);
    if (blobs.per_class == 0) throw ConfigError("data.blobs.per_class: must be positive");
    c.data.blobs = std::move(blobs);
  }

  if (doc.contains("split")) {
    const auto s = get<std::vector<double>>(doc, "split", "", {});
    if (s.size() != 3) throw ConfigError("split: expected [train, validation, test] fractions");
    double sum = 0.0;
    for (double f : s) {
      if (!(f >= 0.0)) throw ConfigError("split: fractions must be non-negative");
      sum += f;
    }
    if (std::abs(sum - 1.0) > 1e-9) throw ConfigError("split: fractions must sum to 1");
    c.split = {s[0], s[1], s[2]};
  }

  if (doc.contains("network")) {
    const json& n = doc.at("network");
    require_object(n, "network");
    c.hidden = get<std::vector<std::size_t>>(n, "hidden", "network.", {});
    for (std::size_t i = 0; i < c.hidden.size(); ++i) {
      if (c.hidden[i] == 0) throw ConfigError("network.hidden[" + std::to_string(i) + "]: width must be positive");
    }
    try {
      c.activation = parse_activation(get<std::string>(n, "activation", "network.", "relu"));
    } catch (const std::invalid_argument& e) {
      throw ConfigError(std::string("network.activation: ") + e.what());
    }
    if (c.activation == ActivationKind::softmax) throw ConfigError("network.activation: softmax is output-only");
  }

  if (doc.contains("training")) {
    const json& t = doc.at("training");
    require_object(t, "training");
    c.epochs = get<std::size_t>(t, "epochs", "training.", c.epochs);
    c.learning_rate = get<double>(t, "learning_rate", "training.", c.learning_rate);
    c.batch_size = get<std::size_t>(t, "batch_size", "training.", c.batch_size);
    c.standardize = get<bool>(t, "standardize", "training.", false);
    if (!(c.learning_rate > 0.0)) throw ConfigError("training.learning_rate: must be positive");
    if (c.batch_size == 0) throw ConfigError("training.batch_size: must be positive");
  }

  if (doc.contains("epistemic")) {
    const json& e = doc.at("epistemic");
    require_object(e, "epistemic");
    if (e.contains("layers")) {
      const json& layers = e.at("layers");
      if (!layers.is_array() || layers.empty()) throw ConfigError("epistemic.layers: expected a non-empty array");
      for (std::size_t i = 0; i < layers.size(); ++i) {
        c.layers.push_back(resolve_layer(layers[i], c.hidden.size(), "epistemic.layers[" + std::to_string(i) + "]"));
      }
    }
    try {
      c.mode = parse_mode(get<std::string>(e, "mode", "epistemic.", "eps"));
      c.metric = parse_metric(get<std::string>(e, "metric", "epistemic.", "l2"));
    } catch (const ConfigError&) {
      throw;
    } catch (const std::invalid_argument& ex) {
      throw ConfigError(std::string("epistemic: ") + ex.what());
    }
    c.eps_grid = get<std::vector<double>>(e, "eps_grid", "epistemic.", {});
    for (double g : c.eps_grid)
      if (!(g > 0.0)) throw ConfigError("epistemic.eps_grid: values must be positive");
    c.relative_grid = get<bool>(e, "relative_grid", "epistemic.", true);
    c.k_values = get<std::vector<std::size_t>>(e, "k", "epistemic.", c.k_values);
    for (std::size_t k : c.k_values)
      if (k == 0) throw ConfigError("epistemic.k: values must be at least 1");
    c.propagate = get<bool>(e, "propagate", "epistemic.", false);
    c.leaf_size = get<std::size_t>(e, "leaf_size", "epistemic.", c.leaf_size);
    if (c.leaf_size == 0) throw ConfigError("epistemic.leaf_size: must be at least 1");
  }

  if (doc.contains("perturbations")) {
    const auto list = get<std::vector<std::string>>(doc, "perturbations", "", {});
    for (std::size_t i = 0; i < list.size(); ++i) {
      try {
        c.perturbations.push_back(parse_perturbation(list[i]));
      } catch (const std::invalid_argument& ex) {
        throw ConfigError("perturbations[" + std::to_string(i) + "]: " + ex.what());
      }
    }
  }
  c.sweep_grid = get<std::vector<double>>(doc, "sweep_grid", "", {});
  for (double g : c.sweep_grid)
    if (!(g > 0.0)) throw ConfigError("sweep_grid: values must be positive");
  if (doc.contains("out")) {
    std::filesystem::path p = get<std::string>(doc, "out", "", "out");
    c.out = p.is_absolute() ? p : base_dir / p;
  } else {
    c.out = base_dir / "out";
  }
  return c;
}

RunConfig load_config(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open config " + path.string());
  json doc;
  try {
    doc = json::parse(in);
  } catch (const json::parse_error& e) {
    throw ConfigError(path.string() + ": malformed JSON: " + e.what());
  }
  return parse_config(doc, path.parent_path());
}

DataSplit prepare_data(const RunConfig& config) {
  Dataset all;
  if (config.data.csv) {
    all = load_csv(*config.data.csv, config.data.header);
  } else {
    const auto& b = *config.data.blobs;
    all = make_blobs(b.centers, b.sigma, b.per_class, config.seed + kSeedBlobs);
  }
  return split(all, config.split, config.seed + kSeedSplit);
}

}  // namespace epistemic::cli
