#pragma once

// Word recognizer: Conv1D x2 -> adaptive max-pool -> BiLSTM -> dropout ->
// LSTM -> dense(tanh) -> output layer with log-softmax over K+1 classes.
// Five fusion taps expose intermediate embeddings:
//   c=1 after the second convolution    (input_len x conv_filters)
//   c=2 after the BiLSTM                (pooled_len x 2*lstm1_hidden)
//   c=3 after dropout                   (pooled_len x 2*lstm1_hidden)
//   c=4 after the unidirectional LSTM   (pooled_len x lstm2_hidden)
//   c=5 after the dense layer           (pooled_len x lstm2_hidden)

#include <array>
#include <cmath>
#include <cstdint>
#include <map>
#include <random>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

#include "seqda/autodiff.hpp"
#include "seqda/config.hpp"
#include "seqda/tensor.hpp"

namespace seqda::model {

struct ModelConfig {
  std::size_t input_len = 400;
  std::size_t channels = 13;
  std::size_t conv_filters = 200;
  std::size_t conv_kernel = 5;
  std::size_t pooled_len = 60;
  std::size_t lstm1_hidden = 100;
  std::size_t lstm2_hidden = 100;
  std::size_t num_classes = 27;  ///< K + 1, blank last
  double dropout = 0.2;
  std::uint64_t seed = 0;

  void validate() const {
    auto positive = [](std::size_t v, const char* name) {
      if (v < 1) throw std::invalid_argument(std::string("model config: ") + name + " must be >= 1");
    };
    positive(input_len, "input_len");
    positive(channels, "channels");
    positive(conv_filters, "conv_filters");
    positive(conv_kernel, "conv_kernel");
    positive(pooled_len, "pooled_len");
    positive(lstm1_hidden, "lstm1_hidden");
    positive(lstm2_hidden, "lstm2_hidden");
    if (num_classes < 2) throw std::invalid_argument("model config: num_classes must be >= 2 (K >= 1 plus blank)");
    if (pooled_len > input_len) throw std::invalid_argument("model config: pooled_len must not exceed input_len");
    if (dropout < 0.0 || dropout >= 1.0) throw std::invalid_argument("model config: dropout must be in [0, 1)");
  }

  static ModelConfig from_config(const KeyValueConfig& kv);
  static ModelConfig from_config(const KeyValueConfig& kv, ModelConfig base) {
    auto sz = [&](const char* key, std::size_t v) {
      return static_cast<std::size_t>(kv.get_int(key, static_cast<std::int64_t>(v)));
    };
    base.input_len = sz("input_len", base.input_len);
    base.conv_filters = sz("conv_filters", base.conv_filters);
    base.conv_kernel = sz("conv_kernel", base.conv_kernel);
    base.pooled_len = sz("pooled_len", base.pooled_len);
    base.lstm1_hidden = sz("lstm1_hidden", base.lstm1_hidden);
    base.lstm2_hidden = sz("lstm2_hidden", base.lstm2_hidden);
    base.num_classes = sz("num_classes", base.num_classes);
    base.dropout = kv.get_double("dropout", base.dropout);
    base.seed = static_cast<std::uint64_t>(kv.get_int("model_seed", static_cast<std::int64_t>(base.seed)));
    base.validate();
    return base;
  }

  void to_config(KeyValueConfig& kv) const {
    kv.set("input_len", static_cast<std::uint64_t>(input_len));
    kv.set("conv_filters", static_cast<std::uint64_t>(conv_filters));
    kv.set("conv_kernel", static_cast<std::uint64_t>(conv_kernel));
    kv.set("pooled_len", static_cast<std::uint64_t>(pooled_len));
    kv.set("lstm1_hidden", static_cast<std::uint64_t>(lstm1_hidden));
    kv.set("lstm2_hidden", static_cast<std::uint64_t>(lstm2_hidden));
    kv.set("num_classes", static_cast<std::uint64_t>(num_classes));
    kv.set("dropout", dropout);
    kv.set("model_seed", seed);
  }
};

inline ModelConfig ModelConfig::from_config(const KeyValueConfig& kv) { return from_config(kv, ModelConfig{}); }

/// (time, features) of fusion tap c in 1..5.
inline std::pair<std::size_t, std::size_t> tap_shape(const ModelConfig& cfg, int c) {
  switch (c) {
    case 1: return {cfg.input_len, cfg.conv_filters};
    case 2:
    case 3: return {cfg.pooled_len, 2 * cfg.lstm1_hidden};
    case 4:
    case 5: return {cfg.pooled_len, cfg.lstm2_hidden};
    default: throw std::invalid_argument("tap_shape: fusion point c=" + std::to_string(c) + " outside 1..5");
  }
}

/// Named parameter tensors in a fixed order.
class ParamStore {
 public:
  void add(std::string name, Tensor value) {
    if (index_.count(name)) throw std::invalid_argument("duplicate parameter '" + name + "'");
    index_.emplace(name, entries_.size());
    entries_.emplace_back(std::move(name), std::move(value));
  }

  std::size_t size() const { return entries_.size(); }
  const std::string& name(std::size_t i) const { return entries_[i].first; }
  const Tensor& at(std::size_t i) const { return entries_[i].second; }
  Tensor& at(std::size_t i) { return entries_[i].second; }

  const Tensor& at(const std::string& name) const { return entries_[lookup(name)].second; }
  Tensor& at(const std::string& name) { return entries_[lookup(name)].second; }
  bool contains(const std::string& name) const { return index_.count(name) != 0; }

  std::size_t total_values() const {
    std::size_t n = 0;
    for (const auto& e : entries_) n += e.second.size();
    return n;
  }

  /// Zero tensors with the same shapes (gradient accumulators).
  std::vector<Tensor> zeros_like() const {
    std::vector<Tensor> out;
    for (const auto& e : entries_) out.emplace_back(e.second.shape, 0.0);
    return out;
  }

  friend bool operator==(const ParamStore& a, const ParamStore& b) { return a.entries_ == b.entries_; }

 private:
  std::size_t lookup(const std::string& name) const {
    auto it = index_.find(name);
    if (it == index_.end()) throw std::invalid_argument("unknown parameter '" + name + "'");
    return it->second;
  }

  std::vector<std::pair<std::string, Tensor>> entries_;
  std::map<std::string, std::size_t> index_;
};

/// Uniform(-1/sqrt(fan_in), 1/sqrt(fan_in)) for weights and biases, forget
/// gate biases shifted by +1. Deterministic in cfg.seed.
inline ParamStore init_params(const ModelConfig& cfg) {
  cfg.validate();
  std::mt19937_64 rng(cfg.seed);
  ParamStore ps;
  auto uniform = [&](std::size_t rows, std::size_t cols, std::size_t fan_in) {
    const double bound = 1.0 / std::sqrt(static_cast<double>(fan_in));
    std::uniform_real_distribution<double> u(-bound, bound);
    Tensor t = Tensor::matrix(rows, cols);
    for (double& v : t.values) v = u(rng);
    return t;
  };
  auto lstm = [&](const std::string& prefix, std::size_t in, std::size_t hid) {
    ps.add(prefix + ".w", uniform(in + hid, 4 * hid, in + hid));
    Tensor b = uniform(1, 4 * hid, in + hid);
    for (std::size_t j = hid; j < 2 * hid; ++j) b.values[j] += 1.0;
    ps.add(prefix + ".b", std::move(b));
  };
  const std::size_t k = cfg.conv_kernel, f = cfg.conv_filters;
  ps.add("conv1.w", uniform(k * cfg.channels, f, k * cfg.channels));
  ps.add("conv1.b", uniform(1, f, k * cfg.channels));
  ps.add("conv2.w", uniform(k * f, f, k * f));
  ps.add("conv2.b", uniform(1, f, k * f));
  lstm("bilstm.fw", f, cfg.lstm1_hidden);
  lstm("bilstm.bw", f, cfg.lstm1_hidden);
  lstm("lstm2", 2 * cfg.lstm1_hidden, cfg.lstm2_hidden);
  ps.add("dense.w", uniform(cfg.lstm2_hidden, cfg.lstm2_hidden, cfg.lstm2_hidden));
  ps.add("dense.b", uniform(1, cfg.lstm2_hidden, cfg.lstm2_hidden));
  ps.add("out.w", uniform(cfg.lstm2_hidden, cfg.num_classes, cfg.lstm2_hidden));
  ps.add("out.b", uniform(1, cfg.num_classes, cfg.lstm2_hidden));
  return ps;
}

/// Parameters of one network bound as leaves of a graph, in store order.
struct BoundParams {
  std::vector<ad::Var> vars;
  const ParamStore* store = nullptr;

  ad::Var operator[](const std::string& name) const {
    for (std::size_t i = 0; i < store->size(); ++i)
      if (store->name(i) == name) return vars[i];
    throw std::invalid_argument("unbound parameter '" + name + "'");
  }

  /// Gradients in store order after graph.backward().
  void accumulate_grads(const ad::Graph& g, std::vector<Tensor>& into) const {
    for (std::size_t i = 0; i < vars.size(); ++i) {
      if (!g.needs_grad(vars[i].id)) continue;
      const Tensor adj = g.adjoint(vars[i]);
      auto& dst = into[i].values;
      for (std::size_t k = 0; k < dst.size(); ++k) dst[k] += adj.values[k];
    }
  }
};

/// Binds every parameter as a graph leaf; frozen binding records constants
/// (no gradient bookkeeping, used for inference).
inline BoundParams bind(ad::Graph& g, const ParamStore& ps, const std::string& prefix = "", bool trainable = true) {
  BoundParams b;
  b.store = &ps;
  for (std::size_t i = 0; i < ps.size(); ++i)
    b.vars.push_back(trainable ? g.parameter(prefix + ps.name(i), ps.at(i)) : g.constant(ps.at(i)));
  return b;
}

/// Dropout mask source; inactive masks leave the tap c3 equal to c2.
struct DropoutMode {
  bool active = false;
  std::uint64_t seed = 0;
};

struct Outputs {
  ad::Var log_probs;        ///< pooled_len x num_classes
  std::array<ad::Var, 5> taps;
  ad::Var tap(int c) const {
    if (c < 1 || c > 5) throw std::invalid_argument("tap: fusion point c=" + std::to_string(c) + " outside 1..5");
    return taps[static_cast<std::size_t>(c - 1)];
  }
};

/// Unidirectional LSTM over the rows of x (T x in) with zero initial state;
/// returns the hidden sequence (T x H).
inline ad::Var lstm_layer(ad::Var x, ad::Var w, ad::Var b, std::size_t hidden) {
  ad::Graph& g = *x.graph;
  ad::Var state = g.constant(Tensor::matrix(1, 2 * hidden));
  std::vector<ad::Var> hs;
  const std::size_t steps = x.value().rows();
  hs.reserve(steps);
  for (std::size_t t = 0; t < steps; ++t) {
    state = ad::lstm_cell(ad::slice_rows(x, t, t + 1), state, w, b);
    hs.push_back(ad::slice_cols(state, 0, hidden));
  }
  return ad::concat_rows(hs);
}

/// Forward LSTM on x, backward LSTM on reversed x (output re-reversed),
/// concatenated along features: T x 2H.
inline ad::Var bilstm_layer(ad::Var x, ad::Var fw_w, ad::Var fw_b, ad::Var bw_w, ad::Var bw_b, std::size_t hidden) {
  ad::Var fw = lstm_layer(x, fw_w, fw_b, hidden);
  ad::Var bw = ad::reverse_rows(lstm_layer(ad::reverse_rows(x), bw_w, bw_b, hidden));
  return ad::concat_cols({fw, bw});
}

/// One sample (input_len x channels, already padded/normalized).
inline Outputs forward(const BoundParams& p, ad::Var input, const ModelConfig& cfg, DropoutMode dropout = {}) {
  ad::Graph& g = *input.graph;
  const Tensor& x = input.value();
  if (!x.is_matrix() || x.rows() != cfg.input_len || x.cols() != cfg.channels)
    throw ad::ShapeError(g.next_id(), "model input " + shape_string(x.shape) + " does not match (" +
                                          std::to_string(cfg.input_len) + "," + std::to_string(cfg.channels) + ")");
  Outputs out;
  ad::Var h = ad::relu(ad::conv1d(input, p.vars[0], p.vars[1], cfg.conv_kernel));
  h = ad::relu(ad::conv1d(h, p.vars[2], p.vars[3], cfg.conv_kernel));
  out.taps[0] = h;
  h = ad::max_pool_time(h, cfg.pooled_len);
  h = bilstm_layer(h, p.vars[4], p.vars[5], p.vars[6], p.vars[7], cfg.lstm1_hidden);
  out.taps[1] = h;
  if (dropout.active && cfg.dropout > 0.0) {
    std::mt19937_64 rng(dropout.seed);
    std::bernoulli_distribution keep(1.0 - cfg.dropout);
    Tensor mask(h.value().shape);
    const double scale = 1.0 / (1.0 - cfg.dropout);
    for (double& m : mask.values) m = keep(rng) ? scale : 0.0;
    h = ad::mul(h, g.constant(std::move(mask)));
  }
  out.taps[2] = h;
  h = lstm_layer(h, p.vars[8], p.vars[9], cfg.lstm2_hidden);
  out.taps[3] = h;
  h = ad::tanh(ad::affine(h, p.vars[10], p.vars[11]));
  out.taps[4] = h;
  out.log_probs = ad::log_softmax(ad::affine(h, p.vars[12], p.vars[13]));
  return out;
}

/// Valid rows of tap c given the number of valid input steps.
inline std::size_t tap_valid_rows(const ModelConfig& cfg, int c, std::size_t valid_steps) {
  if (c == 1) return valid_steps;
  std::size_t rows = 0;
  for (std::size_t t = 0; t < cfg.pooled_len; ++t)
    if (ad::pool_window(t, cfg.input_len, cfg.pooled_len).first < valid_steps) rows = t + 1;
  return std::max<std::size_t>(rows, 1);
}

struct BatchOutputs {
  Tensor log_probs;                         ///< b x pooled_len x num_classes
  std::vector<std::array<Tensor, 5>> taps;  ///< per sample
};

/// Inference over a batch tensor (b x input_len x channels); samples are
/// evaluated independently.
inline BatchOutputs forward_batch(const ParamStore& params, const Tensor& batch, const ModelConfig& cfg) {
  if (batch.rank() != 3 || batch.shape[1] != cfg.input_len || batch.shape[2] != cfg.channels)
    throw std::invalid_argument("forward_batch: batch " + shape_string(batch.shape) + " does not match (b," +
                                std::to_string(cfg.input_len) + "," + std::to_string(cfg.channels) + ")");
  const std::size_t b = batch.shape[0], per = cfg.input_len * cfg.channels;
  BatchOutputs out{Tensor({b, cfg.pooled_len, cfg.num_classes}), {}};
  for (std::size_t i = 0; i < b; ++i) {
    ad::Graph g;
    const BoundParams p = bind(g, params, "", false);
    std::vector<double> slice(batch.values.begin() + static_cast<std::ptrdiff_t>(i * per),
                              batch.values.begin() + static_cast<std::ptrdiff_t>((i + 1) * per));
    Outputs o = forward(p, g.constant(Tensor::matrix(cfg.input_len, cfg.channels, std::move(slice))), cfg);
    const auto& lp = o.log_probs.value().values;
    std::copy(lp.begin(), lp.end(), out.log_probs.values.begin() + static_cast<std::ptrdiff_t>(i * lp.size()));
    std::array<Tensor, 5> taps;
    for (int c = 1; c <= 5; ++c) taps[static_cast<std::size_t>(c - 1)] = o.tap(c).value();
    out.taps.push_back(std::move(taps));
  }
  return out;
}

/// Log-probabilities of one padded sample, no dropout.
inline Tensor infer(const ParamStore& params, const Tensor& input, const ModelConfig& cfg) {
  ad::Graph g;
  const BoundParams p = bind(g, params, "", false);
  return forward(p, g.constant(input), cfg).log_probs.value();
}

}  // namespace seqda::model
