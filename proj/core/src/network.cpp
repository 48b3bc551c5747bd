#include "epistemic/network.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numeric>
#include <random>
#include <sstream>

#include <nlohmann/json.hpp>

namespace epistemic {

using nlohmann::json;

std::string_view to_string(ActivationKind kind) {
  switch (kind) {
    case ActivationKind::relu: return "relu";
    case ActivationKind::tanh: return "tanh";
    case ActivationKind::linear: return "linear";
    case ActivationKind::softmax: return "softmax";
  }
  return "?";
}

ActivationKind parse_activation(std::string_view name) {
  if (name == "relu") return ActivationKind::relu;
  if (name == "tanh") return ActivationKind::tanh;
  if (name == "linear") return ActivationKind::linear;
  if (name == "softmax") return ActivationKind::softmax;
  throw std::invalid_argument("unknown activation '" + std::string(name) + "'");
}

double lipschitz_constant(ActivationKind) { return 1.0; }

std::string_view to_string(DataRole role) {
  switch (role) {
    case DataRole::train: return "train";
    case DataRole::validation: return "validation";
    case DataRole::test: return "test";
  }
  return "?";
}

LayeredNet::LayeredNet(std::size_t input_dim, std::vector<DenseLayer> layers)
    : input_dim_(input_dim), layers_(std::move(layers)) {
  if (layers_.empty()) throw std::invalid_argument("network needs at least one layer");
  std::size_t width = input_dim_;
  for (std::size_t i = 0; i < layers_.size(); ++i) {
    const auto& l = layers_[i];
    const std::string where = "layer " + std::to_string(i);
    if (l.input_dim() != width) {
      throw std::invalid_argument(where + ": expects input width " + std::to_string(l.input_dim()) +
                                  " but previous width is " + std::to_string(width));
    }
    if (l.bias.size() != l.output_dim()) {
      throw std::invalid_argument(where + ": bias length " + std::to_string(l.bias.size()) +
                                  " does not match output width " + std::to_string(l.output_dim()));
    }
    const bool last = i + 1 == layers_.size();
    if (last != (l.activation == ActivationKind::softmax)) {
      throw std::invalid_argument(where + (last ? ": final layer must be softmax"
                                                : ": softmax is only allowed on the final layer"));
    }
    width = l.output_dim();
  }
  if (width == 0) throw std::invalid_argument("network has zero output classes");
}

std::size_t LayeredNet::layer_width(LayerId id) const {
  require_layer(id);
  if (id == kInputLayer) return input_dim_;
  return layers_[static_cast<std::size_t>(id)].output_dim();
}

void LayeredNet::require_layer(LayerId id) const {
  if (id < kInputLayer || id > logit_layer()) {
    throw std::out_of_range("layer id " + std::to_string(id) + " is outside [-1, " +
                            std::to_string(logit_layer()) + "]");
  }
}

namespace {

double activate(ActivationKind kind, double z) {
  switch (kind) {
    case ActivationKind::relu: return z > 0.0 ? z : 0.0;
    case ActivationKind::tanh: return std::tanh(z);
    default: return z;
  }
}

double activation_derivative(ActivationKind kind, double z, double a) {
  switch (kind) {
    case ActivationKind::relu: return z > 0.0 ? 1.0 : 0.0;
    case ActivationKind::tanh: return 1.0 - a * a;
    default: return 1.0;
  }
}

std::vector<double> softmax(std::span<const double> z) {
  const double m = *std::max_element(z.begin(), z.end());
  std::vector<double> p(z.size());
  double s = 0.0;
  for (std::size_t i = 0; i < z.size(); ++i) {
    p[i] = std::exp(z[i] - m);
    s += p[i];
  }
  for (auto& v : p) v /= s;
  return p;
}

void require_input(const LayeredNet& net, std::span<const double> x) {
  if (x.size() != net.input_dim()) {
    throw std::invalid_argument("input of dimension " + std::to_string(x.size()) +
                                " given to a network expecting " + std::to_string(net.input_dim()));
  }
}

// Pre-activations and activations of every layer; the last activation is softmax(z).
struct Trace {
  std::vector<std::vector<double>> pre;
  std::vector<std::vector<double>> post;
};

Trace trace(const LayeredNet& net, std::span<const double> x) {
  require_input(net, x);
  Trace t;
  t.pre.reserve(net.layer_count());
  t.post.reserve(net.layer_count());
  std::span<const double> in = x;
  for (const auto& layer : net.layers()) {
    std::vector<double> z = vec_mat(in, layer.weights);
    for (std::size_t j = 0; j < z.size(); ++j) z[j] += layer.bias[j];
    std::vector<double> a;
    if (layer.activation == ActivationKind::softmax) {
      a = softmax(z);
    } else {
      a.resize(z.size());
      for (std::size_t j = 0; j < z.size(); ++j) a[j] = activate(layer.activation, z[j]);
    }
    t.pre.push_back(std::move(z));
    t.post.push_back(std::move(a));
    in = t.post.back();
  }
  return t;
}

// Backpropagates dL/dz of the final layer; accumulates parameter gradients
// into `grads` when given and returns dL/dx.
std::vector<double> backward(const LayeredNet& net, std::span<const double> x, const Trace& t,
                             std::vector<double> dz, Gradients* grads, double scale) {
  for (std::size_t li = net.layer_count(); li-- > 0;) {
    const auto& layer = net.layer(li);
    std::span<const double> in = li == 0 ? x : std::span<const double>(t.post[li - 1]);
    if (grads != nullptr) {
      Matrix& gw = grads->weights[li];
      for (std::size_t k = 0; k < in.size(); ++k) {
        const double ak = in[k] * scale;
        if (ak == 0.0) continue;
        auto row = gw.row(k);
        for (std::size_t j = 0; j < dz.size(); ++j) row[j] += ak * dz[j];
      }
      for (std::size_t j = 0; j < dz.size(); ++j) grads->bias[li][j] += scale * dz[j];
    }
    std::vector<double> da = mat_vec(layer.weights, dz);
    if (li == 0) return da;
    const auto& prev = net.layer(li - 1);
    for (std::size_t k = 0; k < da.size(); ++k) {
      da[k] *= activation_derivative(prev.activation, t.pre[li - 1][k], t.post[li - 1][k]);
    }
    dz = std::move(da);
  }
  return {};
}

std::vector<double> output_delta(const Trace& t, std::size_t label) {
  std::vector<double> dz = t.post.back();
  dz[label] -= 1.0;
  return dz;
}

double cross_entropy(const Trace& t, std::size_t label) {
  // log-softmax from logits for accuracy at saturation
  const auto& z = t.pre.back();
  const double m = *std::max_element(z.begin(), z.end());
  double s = 0.0;
  for (double v : z) s += std::exp(v - m);
  return -(z[label] - m - std::log(s));
}

}  // namespace

ForwardPass forward_capture(const LayeredNet& net, std::span<const double> x) {
  Trace t = trace(net, x);
  ForwardPass out;
  out.softmax = std::move(t.post.back());
  t.post.back() = std::move(t.pre.back());
  out.activations = std::move(t.post);
  return out;
}

std::vector<double> layer_activation(const LayeredNet& net, std::span<const double> x, LayerId id) {
  net.require_layer(id);
  if (id == kInputLayer) {
    require_input(net, x);
    return {x.begin(), x.end()};
  }
  auto pass = forward_capture(net, x);
  return std::move(pass.activations[static_cast<std::size_t>(id)]);
}

Matrix layer_activations(const LayeredNet& net, const Matrix& x, LayerId id) {
  Matrix out(x.rows(), net.layer_width(id));
  for (std::size_t r = 0; r < x.rows(); ++r) {
    auto h = layer_activation(net, x.row(r), id);
    std::copy(h.begin(), h.end(), out.row(r).begin());
  }
  return out;
}

std::size_t argmax(std::span<const double> values) {
  if (values.empty()) throw std::invalid_argument("argmax of an empty vector");
  std::size_t best = 0;
  for (std::size_t i = 1; i < values.size(); ++i)
    if (values[i] > values[best]) best = i;
  return best;
}

std::size_t predict(const LayeredNet& net, std::span<const double> x) {
  return argmax(forward_capture(net, x).softmax);
}

void Dataset::validate() const {
  if (features.rows() != labels.size()) {
    throw std::invalid_argument("dataset has " + std::to_string(features.rows()) + " rows but " +
                                std::to_string(labels.size()) + " labels");
  }
  for (std::size_t i = 0; i < labels.size(); ++i) {
    if (labels[i] >= class_count) {
      throw std::invalid_argument("label " + std::to_string(labels[i]) + " at row " +
                                  std::to_string(i) + " is not below class count " +
                                  std::to_string(class_count));
    }
  }
}

double accuracy(const LayeredNet& net, const Dataset& data) {
  if (data.size() == 0) throw std::invalid_argument("accuracy of an empty dataset");
  std::size_t hits = 0;
  for (std::size_t i = 0; i < data.size(); ++i) hits += predict(net, data.sample(i)) == data.labels[i];
  return static_cast<double>(hits) / static_cast<double>(data.size());
}

LayeredNet make_network(std::size_t input_dim, std::span<const std::size_t> hidden_widths,
                        ActivationKind hidden_activation, std::size_t class_count,
                        std::uint64_t seed) {
  if (hidden_activation == ActivationKind::softmax) {
    throw std::invalid_argument("hidden layers cannot use softmax");
  }
  std::mt19937_64 rng(seed);
  std::vector<DenseLayer> layers;
  std::size_t fan_in = input_dim;
  auto add = [&](std::size_t fan_out, ActivationKind kind) {
    const double limit = std::sqrt(6.0 / static_cast<double>(fan_in + fan_out));
    std::uniform_real_distribution<double> uni(-limit, limit);
    DenseLayer l{Matrix(fan_in, fan_out), std::vector<double>(fan_out, 0.0), kind};
    for (auto& w : l.weights.data()) w = uni(rng);
    layers.push_back(std::move(l));
    fan_in = fan_out;
  };
  for (std::size_t w : hidden_widths) add(w, hidden_activation);
  add(class_count, ActivationKind::softmax);
  return LayeredNet(input_dim, std::move(layers));
}

Gradients loss_gradients(const LayeredNet& net, const Matrix& x, std::span<const std::size_t> labels,
                         std::span<const std::size_t> rows) {
  if (rows.empty()) throw std::invalid_argument("loss_gradients needs at least one row");
  Gradients g;
  for (const auto& l : net.layers()) {
    g.weights.emplace_back(l.weights.rows(), l.weights.cols());
    g.bias.emplace_back(l.bias.size(), 0.0);
  }
  const double scale = 1.0 / static_cast<double>(rows.size());
  for (std::size_t r : rows) {
    Trace t = trace(net, x.row(r));
    g.loss += scale * cross_entropy(t, labels[r]);
    backward(net, x.row(r), t, output_delta(t, labels[r]), &g, scale);
  }
  return g;
}

double mean_loss(const LayeredNet& net, const Matrix& x, std::span<const std::size_t> labels) {
  double s = 0.0;
  for (std::size_t r = 0; r < x.rows(); ++r) s += cross_entropy(trace(net, x.row(r)), labels[r]);
  return s / static_cast<double>(x.rows());
}

LayeredNet train(LayeredNet net, const Dataset& data, const TrainOptions& options) {
  data.validate();
  if (data.size() == 0) throw std::invalid_argument("train: empty dataset");
  if (options.learning_rate <= 0.0 || !std::isfinite(options.learning_rate)) {
    throw std::invalid_argument("train: learning_rate must be positive");
  }
  if (options.batch_size == 0) throw std::invalid_argument("train: batch_size must be positive");
  if (data.dim() != net.input_dim()) {
    throw std::invalid_argument("train: data dimension " + std::to_string(data.dim()) +
                                " does not match network input " + std::to_string(net.input_dim()));
  }
  if (data.class_count > net.class_count()) {
    throw std::invalid_argument("train: data has more classes than the network outputs");
  }

  std::mt19937_64 rng(options.seed);
  std::vector<std::size_t> order(data.size());
  std::iota(order.begin(), order.end(), 0);
  for (std::size_t epoch = 0; epoch < options.epochs; ++epoch) {
    std::shuffle(order.begin(), order.end(), rng);
    for (std::size_t start = 0; start < order.size(); start += options.batch_size) {
      const std::size_t end = std::min(order.size(), start + options.batch_size);
      std::span<const std::size_t> batch(order.data() + start, end - start);
      Gradients g = loss_gradients(net, data.features, data.labels, batch);
      for (std::size_t li = 0; li < net.layer_count(); ++li) {
        auto& layer = net.mutable_layer(li);
        auto w = layer.weights.data();
        auto gw = g.weights[li].data();
        for (std::size_t k = 0; k < w.size(); ++k) w[k] -= options.learning_rate * gw[k];
        for (std::size_t j = 0; j < layer.bias.size(); ++j)
          layer.bias[j] -= options.learning_rate * g.bias[li][j];
      }
    }
  }
  return net;
}

std::vector<double> input_gradient(const LayeredNet& net, std::span<const double> x, std::size_t label) {
  if (label >= net.class_count()) throw std::invalid_argument("input_gradient: label out of range");
  Trace t = trace(net, x);
  return backward(net, x, t, output_delta(t, label), nullptr, 1.0);
}

std::vector<double> bim_attack(const LayeredNet& net, std::span<const double> x,
                               std::size_t true_label, const BimOptions& options) {
  require_input(net, x);
  if (options.bound < 0.0) throw std::invalid_argument("bim_attack: bound must be non-negative");
  std::vector<double> adv(x.begin(), x.end());
  if (options.bound == 0.0 || options.iterations == 0) return adv;
  if (options.step <= 0.0) throw std::invalid_argument("bim_attack: step must be positive");

  for (std::size_t it = 0; it < options.iterations; ++it) {
    const std::vector<double> g = input_gradient(net, adv, true_label);
    const bool finite = std::all_of(g.begin(), g.end(), [](double v) { return std::isfinite(v); });
    const bool zero = std::all_of(g.begin(), g.end(), [](double v) { return v == 0.0; });
    if (!finite || (it == 0 && zero)) {
      throw std::runtime_error("bim_attack: loss gradient unavailable (degenerate network)");
    }
    for (std::size_t i = 0; i < adv.size(); ++i) {
      const double sign = g[i] > 0.0 ? 1.0 : (g[i] < 0.0 ? -1.0 : 0.0);
      double v = adv[i] + options.step * sign;
      v = std::clamp(v, x[i] - options.bound, x[i] + options.bound);
      if (options.clip_range) v = std::clamp(v, options.clip_range->first, options.clip_range->second);
      adv[i] = v;
    }
  }
  return adv;
}

std::string weights_to_json(const LayeredNet& net) {
  json doc;
  doc["input_dim"] = net.input_dim();
  doc["class_count"] = net.class_count();
  json layers = json::array();
  for (const auto& l : net.layers()) {
    json jl;
    jl["activation"] = std::string(to_string(l.activation));
    jl["rows"] = l.weights.rows();
    jl["cols"] = l.weights.cols();
    jl["weights"] = std::vector<double>(l.weights.data().begin(), l.weights.data().end());
    jl["bias"] = l.bias;
    layers.push_back(std::move(jl));
  }
  doc["layers"] = std::move(layers);
  return doc.dump(1) + "\n";
}

namespace {

template <typename T>
T field(const json& obj, const char* key, const std::string& where) {
  if (!obj.is_object() || !obj.contains(key)) {
    throw std::invalid_argument("weight file: missing field '" + where + key + "'");
  }
  try {
    return obj.at(key).get<T>();
  } catch (const json::exception& e) {
    throw std::invalid_argument("weight file: field '" + where + key + "' has the wrong type: " +
                                e.what());
  }
}

}  // namespace

LayeredNet weights_from_json(std::string_view text) {
  json doc;
  try {
    doc = json::parse(text);
  } catch (const json::parse_error& e) {
    throw std::invalid_argument(std::string("weight file: malformed JSON: ") + e.what());
  }
  const auto input_dim = field<std::size_t>(doc, "input_dim", "");
  const auto class_count = field<std::size_t>(doc, "class_count", "");
  const auto jlayers = field<json>(doc, "layers", "");
  if (!jlayers.is_array()) throw std::invalid_argument("weight file: 'layers' must be an array");

  std::vector<DenseLayer> layers;
  for (std::size_t i = 0; i < jlayers.size(); ++i) {
    const std::string where = "layers[" + std::to_string(i) + "].";
    const json& jl = jlayers[i];
    DenseLayer l;
    l.activation = parse_activation(field<std::string>(jl, "activation", where));
    const auto rows = field<std::size_t>(jl, "rows", where);
    const auto cols = field<std::size_t>(jl, "cols", where);
    auto w = field<std::vector<double>>(jl, "weights", where);
    if (w.size() != rows * cols) {
      throw std::invalid_argument("weight file: '" + where + "weights' has " + std::to_string(w.size()) +
                                  " values, expected rows*cols = " + std::to_string(rows * cols));
    }
    l.weights = Matrix(rows, cols, std::move(w));
    l.bias = field<std::vector<double>>(jl, "bias", where);
    if (l.bias.size() != cols) {
      throw std::invalid_argument("weight file: '" + where + "bias' has " + std::to_string(l.bias.size()) +
                                  " values, expected cols = " + std::to_string(cols));
    }
    layers.push_back(std::move(l));
  }
  LayeredNet net;
  try {
    net = LayeredNet(input_dim, std::move(layers));
  } catch (const std::invalid_argument& e) {
    throw std::invalid_argument(std::string("weight file: ") + e.what());
  }
  if (net.class_count() != class_count) {
    throw std::invalid_argument("weight file: 'class_count' is " + std::to_string(class_count) +
                                " but the final layer has " + std::to_string(net.class_count()) + " units");
  }
  return net;
}

void save_weights(const LayeredNet& net, const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("cannot open " + path.string() + " for writing");
  out << weights_to_json(net);
  if (!out) throw std::runtime_error("failed writing " + path.string());
}

LayeredNet load_weights(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot open weight file " + path.string());
  std::ostringstream buf;
  buf << in.rdbuf();
  try {
    return weights_from_json(buf.str());
  } catch (const std::invalid_argument& e) {
    throw std::invalid_argument(path.string() + ": " + e.what());
  }
}

}  // namespace epistemic
