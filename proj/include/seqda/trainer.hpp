#pragma once

#include <algorithm>
#include <atomic>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <functional>
#include <numeric>
#include <optional>
#include <ostream>
#include <random>
#include <stdexcept>
#include <string>
#include <thread>
#include <vector>

#include "seqda/checkpoint.hpp"
#include "seqda/config.hpp"
#include "seqda/ctc.hpp"
#include "seqda/data.hpp"
#include "seqda/dml.hpp"
#include "seqda/lm.hpp"
#include "seqda/metrics.hpp"
#include "seqda/model.hpp"
#include "seqda/pairing.hpp"

namespace seqda::train {

// ---- configuration ---------------------------------------------------------

enum class PairMode { triplet, contrastive };

inline const char* mode_name(PairMode m) { return m == PairMode::triplet ? "triplet" : "contrastive"; }

inline PairMode parse_mode(const std::string& s) {
  if (s == "triplet") return PairMode::triplet;
  if (s == "contrastive") return PairMode::contrastive;
  throw std::invalid_argument("unknown pairing mode '" + s + "' (expected triplet or contrastive)");
}

struct TrainConfig {
  double lr = 1e-4;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double adam_eps = 1e-8;
  double clip_norm = 0.0;  ///< global gradient norm cap; 0 disables
  std::size_t batch_size = 16;
  std::int64_t pretrain_epochs = 1000;
  std::int64_t adapt_epochs = 0;  ///< 0 selects the mode default
  std::int64_t schedule_epochs = 200;  ///< max_e of the ED schedule
  int c = 3;
  dml::DmlLossSpec spec;
  PairMode mode = PairMode::triplet;
  double lambda_pair = 1.0;
  std::uint64_t seed = 1;
  std::int64_t eval_every = 0;        ///< 0 evaluates only after the last epoch
  std::int64_t checkpoint_every = 0;  ///< 0 disables periodic checkpoints
  std::string checkpoint_dir;

  std::int64_t effective_adapt_epochs() const {
    if (adapt_epochs > 0) return adapt_epochs;
    return mode == PairMode::triplet ? 2000 : 200;
  }

  void validate() const {
    if (!(lr >= 0.0)) throw std::invalid_argument("train config: lr must be >= 0");
    if (batch_size < 1) throw std::invalid_argument("train config: batch_size must be >= 1");
    if (c < 1 || c > 5) throw std::invalid_argument("train config: fusion point c must be in 1..5");
    if (pretrain_epochs < 0 || adapt_epochs < 0) throw std::invalid_argument("train config: epochs must be >= 0");
    if (schedule_epochs < 1) throw std::invalid_argument("train config: schedule_epochs must be >= 1");
    if (lambda_pair < 0.0) throw std::invalid_argument("train config: lambda_pair must be >= 0");
    spec.validate();
  }

  static TrainConfig from_config(const KeyValueConfig& kv) {
    TrainConfig t;
    t.lr = kv.get_double("lr", t.lr);
    t.clip_norm = kv.get_double("clip_norm", t.clip_norm);
    t.batch_size = static_cast<std::size_t>(kv.get_int("batch_size", static_cast<std::int64_t>(t.batch_size)));
    t.pretrain_epochs = kv.get_int("pretrain_epochs", t.pretrain_epochs);
    t.adapt_epochs = kv.get_int("adapt_epochs", t.adapt_epochs);
    t.schedule_epochs = kv.get_int("schedule_epochs", t.schedule_epochs);
    t.c = static_cast<int>(kv.get_int("c", t.c));
    t.spec.kind = dml::parse_kind(kv.get("dml", std::string(dml::kind_name(t.spec.kind))));
    t.spec.variant = dml::parse_variant(kv.get("dml_variant", std::string(dml::variant_name(t.spec.variant))));
    t.spec.groups = static_cast<std::size_t>(kv.get_int("dml_groups", static_cast<std::int64_t>(t.spec.groups)));
    t.spec.samples = static_cast<std::size_t>(kv.get_int("dml_samples", static_cast<std::int64_t>(t.spec.samples)));
    t.spec.bandwidth = kv.get_double("dml_bandwidth", t.spec.bandwidth);
    t.mode = parse_mode(kv.get("mode", mode_name(t.mode)));
    t.lambda_pair = kv.get_double("lambda_pair", t.lambda_pair);
    t.seed = static_cast<std::uint64_t>(kv.get_int("seed", static_cast<std::int64_t>(t.seed)));
    t.spec.seed = static_cast<std::uint64_t>(kv.get_int("dml_seed", static_cast<std::int64_t>(t.seed)));
    t.eval_every = kv.get_int("eval_every", t.eval_every);
    t.checkpoint_every = kv.get_int("checkpoint_every", t.checkpoint_every);
    t.validate();
    return t;
  }

  void to_config(KeyValueConfig& kv) const {
    kv.set("lr", lr);
    kv.set("clip_norm", clip_norm);
    kv.set("batch_size", static_cast<std::uint64_t>(batch_size));
    kv.set("pretrain_epochs", pretrain_epochs);
    kv.set("adapt_epochs", effective_adapt_epochs());
    kv.set("schedule_epochs", schedule_epochs);
    kv.set("c", c);
    kv.set("dml", std::string(dml::kind_name(spec.kind)));
    kv.set("dml_variant", std::string(dml::variant_name(spec.variant)));
    kv.set("dml_groups", static_cast<std::uint64_t>(spec.groups));
    kv.set("dml_samples", static_cast<std::uint64_t>(spec.samples));
    kv.set("dml_bandwidth", spec.bandwidth);
    kv.set("dml_seed", spec.seed);
    kv.set("mode", std::string(mode_name(mode)));
    kv.set("lambda_pair", lambda_pair);
    kv.set("seed", seed);
    kv.set("eval_every", eval_every);
    kv.set("checkpoint_every", checkpoint_every);
  }
};

// ---- utilities -------------------------------------------------------------

inline std::uint64_t mix(std::uint64_t x) {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

inline std::uint64_t key(std::uint64_t seed, std::uint64_t a, std::uint64_t b = 0, std::uint64_t c = 0) {
  return mix(mix(mix(mix(seed) ^ a) ^ b) ^ c);
}

/// Worker count from SEQDA_THREADS, else the machine's cores.
inline std::size_t thread_count() {
  if (const char* env = std::getenv("SEQDA_THREADS")) {
    const long n = std::strtol(env, nullptr, 10);
    if (n >= 1) return static_cast<std::size_t>(n);
  }
  return std::max<std::size_t>(1, std::thread::hardware_concurrency());
}

/// Runs fn(i) for i in [0, n). Results must be written to per-index slots so
/// the outcome is independent of scheduling.
inline void parallel_for(std::size_t n, const std::function<void(std::size_t)>& fn) {
  const std::size_t workers = std::min(thread_count(), n);
  if (workers <= 1) {
    for (std::size_t i = 0; i < n; ++i) fn(i);
    return;
  }
  std::atomic<std::size_t> next{0};
  std::exception_ptr error;
  std::atomic<bool> failed{false};
  std::vector<std::jthread> pool;
  for (std::size_t w = 0; w < workers; ++w)
    pool.emplace_back([&] {
      for (std::size_t i = next++; i < n && !failed; i = next++) {
        try {
          fn(i);
        } catch (...) {
          if (!failed.exchange(true)) error = std::current_exception();
        }
      }
    });
  pool.clear();
  if (error) std::rethrow_exception(error);
}

struct Adam {
  double lr, beta1, beta2, eps;
  std::vector<Tensor> m, v;
  std::int64_t t = 0;

  Adam(const model::ParamStore& ps, const TrainConfig& cfg)
      : lr(cfg.lr), beta1(cfg.beta1), beta2(cfg.beta2), eps(cfg.adam_eps), m(ps.zeros_like()), v(ps.zeros_like()) {}

  void step(model::ParamStore& ps, const std::vector<Tensor>& grads) {
    ++t;
    const double c1 = 1.0 - std::pow(beta1, static_cast<double>(t));
    const double c2 = 1.0 - std::pow(beta2, static_cast<double>(t));
    for (std::size_t i = 0; i < ps.size(); ++i) {
      auto& p = ps.at(i).values;
      const auto& g = grads[i].values;
      auto& mi = m[i].values;
      auto& vi = v[i].values;
      for (std::size_t k = 0; k < p.size(); ++k) {
        mi[k] = beta1 * mi[k] + (1.0 - beta1) * g[k];
        vi[k] = beta2 * vi[k] + (1.0 - beta2) * g[k] * g[k];
        p[k] -= lr * (mi[k] / c1) / (std::sqrt(vi[k] / c2) + eps);
      }
    }
  }
};

inline void clip_gradients(std::vector<Tensor>& grads, double max_norm) {
  if (max_norm <= 0.0) return;
  double sq = 0.0;
  for (const auto& g : grads)
    for (double x : g.values) sq += x * x;
  const double norm = std::sqrt(sq);
  if (norm <= max_norm) return;
  const double s = max_norm / norm;
  for (auto& g : grads)
    for (double& x : g.values) x *= s;
}

// ---- prepared data ---------------------------------------------------------

/// Padded, normalized inputs with encoded labels.
struct Prepared {
  std::vector<Tensor> inputs;
  std::vector<ctc::LabelSeq> labels;
  std::vector<std::size_t> lengths;
  std::vector<std::string> words;
  std::vector<std::string> ids;

  std::size_t size() const { return inputs.size(); }
};

inline Prepared prepare(const data::Dataset& ds, const model::ModelConfig& cfg) {
  if (ds.alphabet.size() + 1 != cfg.num_classes)
    throw std::invalid_argument("prepare: alphabet of " + std::to_string(ds.alphabet.size()) +
                                " characters needs num_classes = " + std::to_string(ds.alphabet.size() + 1));
  Prepared p;
  for (const auto& s : ds.samples) {
    auto padded = data::pad_normalize(s, cfg.input_len);
    auto label = ds.alphabet.encode(s.label);
    if (ctc::required_frames(label) > cfg.pooled_len)
      throw std::invalid_argument("prepare: label '" + s.label + "' of sample " + s.id +
                                  " is infeasible for pooled_len " + std::to_string(cfg.pooled_len));
    p.inputs.push_back(std::move(padded.signal));
    p.labels.push_back(std::move(label));
    p.lengths.push_back(padded.length);
    p.words.push_back(s.label);
    p.ids.push_back(s.id);
  }
  return p;
}

// ---- report ----------------------------------------------------------------

/// Per-epoch numeric table written as CSV.
struct RunReport {
  std::vector<std::string> columns;
  std::vector<std::vector<double>> rows;

  std::size_t column(const std::string& name) const {
    auto it = std::find(columns.begin(), columns.end(), name);
    if (it == columns.end()) throw std::invalid_argument("report: no column '" + name + "'");
    return static_cast<std::size_t>(it - columns.begin());
  }

  double at(std::size_t row, const std::string& name) const { return rows.at(row).at(column(name)); }

  std::vector<double> series(const std::string& name) const {
    const std::size_t c = column(name);
    std::vector<double> out;
    for (const auto& r : rows) out.push_back(r[c]);
    return out;
  }

  static std::string format(double v) {
    if (v == std::floor(v) && std::abs(v) < 1e15) return std::to_string(static_cast<long long>(v));
    char buf[32];
    std::snprintf(buf, sizeof buf, "%.10g", v);
    return buf;
  }

  void write_csv(std::ostream& out) const {
    for (std::size_t i = 0; i < columns.size(); ++i) out << (i ? "," : "") << columns[i];
    out << '\n';
    for (const auto& r : rows) {
      for (std::size_t i = 0; i < r.size(); ++i) out << (i ? "," : "") << format(r[i]);
      out << '\n';
    }
  }
};

// ---- evaluation ------------------------------------------------------------

struct EvalResult {
  double cer = 0.0;
  double wer = 0.0;
  std::vector<std::string> predictions;
};

struct LmOptions {
  const lm::NGramModel* model = nullptr;
  double gamma = 1.0;
  lm::EnumOptions enumeration;
};

inline std::string decode(const Tensor& log_probs, const data::Alphabet& alphabet, const LmOptions& lmopt = {}) {
  if (!lmopt.model) return alphabet.decode(ctc::best_path_decode(log_probs));
  Tensor probs = log_probs;
  for (double& v : probs.values) v = std::exp(v);
  auto candidates = lm::enumerate_paths(probs, lmopt.enumeration);
  if (candidates.empty()) return alphabet.decode(ctc::best_path_decode(log_probs));
  return lm::rescore(candidates, *lmopt.model, lmopt.gamma, alphabet).word;
}

inline EvalResult evaluate(const model::ParamStore& params, const Prepared& ds, const data::Alphabet& alphabet,
                           const model::ModelConfig& cfg, const LmOptions& lmopt = {}) {
  EvalResult r;
  if (ds.size() == 0) return r;
  r.predictions.resize(ds.size());
  parallel_for(ds.size(), [&](std::size_t i) {
    r.predictions[i] = decode(model::infer(params, ds.inputs[i], cfg), alphabet, lmopt);
  });
  r.cer = metrics::cer(r.predictions, ds.words);
  r.wer = metrics::wer(r.predictions, ds.words);
  return r;
}

// ---- objectives ------------------------------------------------------------

/// Valid rows of a fusion embedding for a sample with `length` input steps.
inline ad::Var valid_tap(const model::Outputs& o, const model::ModelConfig& cfg, int c, std::size_t length) {
  ad::Var t = o.tap(c);
  const std::size_t rows = std::min(model::tap_valid_rows(cfg, c, length), t.value().rows());
  return rows == t.value().rows() ? t : ad::slice_rows(t, 0, rows);
}

struct TripletInputs {
  const Tensor* anchor;
  const Tensor* positive;
  const Tensor* negative;
  const ctc::LabelSeq* anchor_label;
  const ctc::LabelSeq* positive_label;
  const ctc::LabelSeq* negative_label;
  std::size_t anchor_len, positive_len, negative_len;
};

struct ObjectiveParts {
  ad::Var total;
  double ctc_main = 0.0;
  double ctc_aux = 0.0;
  double pair = 0.0;
};

struct ObjectiveSettings {
  const model::ModelConfig* model;
  const TrainConfig* train;
  double alpha = 1.0;
  std::size_t batch = 1;  ///< triplets in the batch (CTC terms are batch means)
  bool dropout = false;
  std::uint64_t dropout_seed = 0;
};

/// One triplet's share of the adaptation objective:
///   ctc_main(a)/N + (ctc_aux(p)+ctc_aux(n))/(2N) + lambda * pair term.
/// Summing over the batch's triplets gives the batch loss.
inline ObjectiveParts triplet_objective(const model::BoundParams& main, const model::BoundParams& aux,
                                        const TripletInputs& in, const ObjectiveSettings& s) {
  ad::Graph& g = *main.vars.at(0).graph;
  const auto& mc = *s.model;
  const auto& tc = *s.train;
  auto drop = [&](std::uint64_t role) { return model::DropoutMode{s.dropout, key(s.dropout_seed, role)}; };
  model::Outputs oa = model::forward(main, g.constant(*in.anchor), mc, drop(1));
  model::Outputs op = model::forward(aux, g.constant(*in.positive), mc, drop(2));
  model::Outputs on = model::forward(aux, g.constant(*in.negative), mc, drop(3));
  const double n = static_cast<double>(s.batch);
  ad::Var la = ctc::ctc_loss(oa.log_probs, *in.anchor_label);
  ad::Var lp = ctc::ctc_loss(op.log_probs, *in.positive_label);
  ad::Var ln = ctc::ctc_loss(on.log_probs, *in.negative_label);
  ad::Var ctc_part = ad::add(ad::scale(la, 1.0 / n), ad::scale(ad::add(lp, ln), 0.5 / n));

  ad::Var ea = valid_tap(oa, mc, tc.c, in.anchor_len);
  ad::Var ep = valid_tap(op, mc, tc.c, in.positive_len);
  ad::Var en = valid_tap(on, mc, tc.c, in.negative_len);
  ad::Var pair = tc.mode == PairMode::triplet
                     ? pairing::triplet_loss({ea}, {ep}, {en}, tc.spec, s.alpha)
                     : pairing::contrastive_loss({ea, ea}, {ep, en}, {true, false}, tc.spec, s.alpha);
  ObjectiveParts parts;
  parts.ctc_main = la.value().item();
  parts.ctc_aux = 0.5 * (lp.value().item() + ln.value().item());
  parts.pair = pair.value().item();
  parts.total = tc.lambda_pair == 0.0 ? ctc_part : ad::add(ctc_part, ad::scale(pair, tc.lambda_pair));
  return parts;
}

// ---- training loops --------------------------------------------------------

class Divergence : public std::runtime_error {
 public:
  Divergence(const std::string& phase, std::int64_t epoch)
      : std::runtime_error(phase + ": loss is not finite at epoch " + std::to_string(epoch)), epoch_(epoch) {}
  std::int64_t epoch() const { return epoch_; }

 private:
  std::int64_t epoch_;
};

/// Optional validation sets used for the report columns.
struct Validation {
  const Prepared* tablet = nullptr;
  const Prepared* paper = nullptr;
  const data::Alphabet* alphabet = nullptr;
  const lm::NGramModel* lm = nullptr;
  double gamma = 1.0;
};

using EpochHook = std::function<void(std::int64_t epoch, const RunReport&)>;

namespace detail {

inline std::vector<std::size_t> shuffled(std::size_t n, std::uint64_t seed) {
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::mt19937_64 rng(seed);
  std::shuffle(order.begin(), order.end(), rng);
  return order;
}

inline bool eval_due(std::int64_t e, std::int64_t epochs, std::int64_t every) {
  return e + 1 == epochs || (every > 0 && (e + 1) % every == 0);
}

inline std::vector<std::string> eval_columns(const Validation& v) {
  std::vector<std::string> cols;
  auto add = [&](const char* dom) {
    cols.push_back(std::string("cer_") + dom);
    cols.push_back(std::string("wer_") + dom);
    if (v.lm) {
      cols.push_back(std::string("cer_") + dom + "_lm");
      cols.push_back(std::string("wer_") + dom + "_lm");
    }
  };
  if (v.tablet) add("tablet");
  if (v.paper) add("paper");
  return cols;
}

/// Evaluates `main` on tablet and `aux` on paper validation sets.
inline std::vector<double> eval_values(const Validation& v, const model::ParamStore& main,
                                       const model::ParamStore& aux, const model::ModelConfig& cfg) {
  std::vector<double> out;
  auto add = [&](const Prepared* ds, const model::ParamStore& ps) {
    if (!ds) return;
    auto r = evaluate(ps, *ds, *v.alphabet, cfg);
    out.push_back(r.cer);
    out.push_back(r.wer);
    if (v.lm) {
      auto rl = evaluate(ps, *ds, *v.alphabet, cfg, LmOptions{v.lm, v.gamma, {}});
      out.push_back(rl.cer);
      out.push_back(rl.wer);
    }
  };
  add(v.tablet, main);
  add(v.paper, aux);
  return out;
}

inline void maybe_checkpoint(const TrainConfig& cfg, std::int64_t e, const std::string& tag,
                             const model::ParamStore& ps, const model::ModelConfig& mc) {
  if (cfg.checkpoint_every <= 0 || cfg.checkpoint_dir.empty() || (e + 1) % cfg.checkpoint_every != 0) return;
  std::filesystem::create_directories(cfg.checkpoint_dir);
  checkpoint::Checkpoint ck;
  mc.to_config(ck.meta);
  ck.meta.set("epoch", e + 1);
  ck.params = ps;
  checkpoint::save(cfg.checkpoint_dir + "/" + tag + "_epoch" + std::to_string(e + 1) + ".ckpt", ck);
}

}  // namespace detail

/// CTC pretraining of one network. Validation columns use `val.tablet` if set,
/// else `val.paper`.
inline RunReport pretrain(model::ParamStore& params, const Prepared& train, const model::ModelConfig& mc,
                          const TrainConfig& cfg, const Validation& val = {}, const std::string& tag = "net",
                          const EpochHook& hook = {}) {
  cfg.validate();
  if (train.size() == 0) throw std::invalid_argument("pretrain: empty training set");
  Validation v = val;
  if (v.tablet && v.paper) v.paper = nullptr;
  RunReport report;
  report.columns = {"epoch", "ctc"};
  for (auto& c : detail::eval_columns(v)) report.columns.push_back(c);
  std::vector<double> last_eval(report.columns.size() - 2, 0.0);
  const bool have_eval = v.alphabet && (v.tablet || v.paper);
  if (have_eval) last_eval = detail::eval_values(v, params, params, mc);

  Adam adam(params, cfg);
  const std::size_t n = train.size();
  std::vector<std::vector<Tensor>> per_sample(std::min(cfg.batch_size, n));
  std::vector<double> losses(per_sample.size());
  for (std::int64_t e = 0; e < cfg.pretrain_epochs; ++e) {
    const auto order = detail::shuffled(n, key(cfg.seed, 0x70, static_cast<std::uint64_t>(e)));
    double epoch_loss = 0.0;
    for (std::size_t start = 0; start < n; start += cfg.batch_size) {
      const std::size_t b = std::min(cfg.batch_size, n - start);
      parallel_for(b, [&](std::size_t k) {
        const std::size_t i = order[start + k];
        ad::Graph g;
        const auto bound = model::bind(g, params);
        auto out = model::forward(bound, g.constant(train.inputs[i]), mc,
                                  {true, key(cfg.seed, 0x71, static_cast<std::uint64_t>(e), i)});
        ad::Var loss = ctc::ctc_loss(out.log_probs, train.labels[i]);
        losses[k] = loss.value().item();
        g.backward(loss);
        per_sample[k] = params.zeros_like();
        bound.accumulate_grads(g, per_sample[k]);
      });
      std::vector<Tensor> grads = params.zeros_like();
      for (std::size_t k = 0; k < b; ++k) {
        epoch_loss += losses[k];
        for (std::size_t p = 0; p < grads.size(); ++p)
          for (std::size_t j = 0; j < grads[p].values.size(); ++j)
            grads[p].values[j] += per_sample[k][p].values[j] / static_cast<double>(b);
      }
      if (!std::isfinite(epoch_loss)) throw Divergence("pretrain", e);
      clip_gradients(grads, cfg.clip_norm);
      adam.step(params, grads);
    }
    if (have_eval && detail::eval_due(e, cfg.pretrain_epochs, cfg.eval_every))
      last_eval = detail::eval_values(v, params, params, mc);
    std::vector<double> row{static_cast<double>(e + 1), epoch_loss / static_cast<double>(n)};
    row.insert(row.end(), last_eval.begin(), last_eval.end());
    report.rows.push_back(std::move(row));
    detail::maybe_checkpoint(cfg, e, tag, params, mc);
    if (hook) hook(e, report);
  }
  return report;
}

/// Result of assembling one adaptation epoch's batches.
struct AdaptState {
  pairing::TripletDictionary dict;
  std::vector<std::size_t> anchors;  ///< tablet indices that own a positive
};

inline AdaptState adapt_state(const Prepared& tablet, const Prepared& paper) {
  AdaptState s;
  s.dict = pairing::build_pair_dictionary(tablet.words, paper.words);
  for (std::size_t i = 0; i < tablet.size(); ++i)
    if (!s.dict.per_anchor[i][0].empty()) s.anchors.push_back(i);
  return s;
}

/// Fine-tunes both networks with CTC plus the pairwise loss at fusion point c.
inline RunReport adapt(model::ParamStore& main, model::ParamStore& aux, const Prepared& tablet, const Prepared& paper,
                       const model::ModelConfig& mc, const TrainConfig& cfg, const Validation& val = {},
                       const EpochHook& hook = {}) {
  cfg.validate();
  const AdaptState state = adapt_state(tablet, paper);
  if (state.anchors.empty()) throw std::runtime_error("adapt: no tablet anchor has a positive paper sample");
  const pairing::MarginPolicy policy{dml::beta_lookup(cfg.spec.kind, cfg.c)};
  const std::int64_t epochs = cfg.effective_adapt_epochs();

  // alpha and mean_ed are those of the epoch's last batch.
  RunReport report;
  report.columns = {"epoch", "ctc_main", "ctc_aux", "pair_loss", "total_loss", "alpha", "mean_ed", "ed_bound",
                    "fallbacks", "skipped"};
  for (auto& c : detail::eval_columns(val)) report.columns.push_back(c);
  const bool have_eval = val.alphabet && (val.tablet || val.paper);
  std::vector<double> last_eval;
  if (have_eval) last_eval = detail::eval_values(val, main, aux, mc);

  Adam adam_main(main, cfg), adam_aux(aux, cfg);
  std::vector<ObjectiveParts> parts(cfg.batch_size);
  std::vector<double> totals(cfg.batch_size);
  std::vector<std::vector<Tensor>> gm(cfg.batch_size), ga(cfg.batch_size);
  for (std::int64_t e = 0; e < epochs; ++e) {
    const std::int64_t sched_e = std::min(e, cfg.schedule_epochs - 1);
    const auto order = detail::shuffled(state.anchors.size(), key(cfg.seed, 0xa0, static_cast<std::uint64_t>(e)));
    double sum_main = 0, sum_aux = 0, sum_pair = 0, sum_total = 0, last_alpha = 0, last_ed = 0;
    std::size_t count = 0, batches = 0, fallbacks = 0, skipped = 0;
    int bound = 0;
    for (std::size_t start = 0, bi = 0; start < order.size(); start += cfg.batch_size, ++bi) {
      std::vector<std::size_t> batch_anchors;
      for (std::size_t k = start; k < std::min(order.size(), start + cfg.batch_size); ++k)
        batch_anchors.push_back(state.anchors[order[k]]);
      const auto sel = pairing::select_triplets(batch_anchors, state.dict, sched_e, cfg.schedule_epochs,
                                                key(cfg.seed, 0xa1, static_cast<std::uint64_t>(e), bi));
      bound = sel.bound;
      fallbacks += sel.fallbacks;
      skipped += sel.skipped;
      if (sel.triplets.empty()) continue;
      const double mean_ed = pairing::mean_negative_ed(sel.triplets);
      const double alpha = pairing::dynamic_margin(mean_ed, policy);
      const std::size_t b = sel.triplets.size();
      parallel_for(b, [&](std::size_t k) {
        const auto& t = sel.triplets[k];
        ad::Graph g;
        const auto bm = model::bind(g, main, "main.");
        const auto ba = model::bind(g, aux, "aux.");
        TripletInputs in{&tablet.inputs[t.anchor],  &paper.inputs[t.positive],  &paper.inputs[t.negative],
                         &tablet.labels[t.anchor],  &paper.labels[t.positive],  &paper.labels[t.negative],
                         tablet.lengths[t.anchor],  paper.lengths[t.positive],  paper.lengths[t.negative]};
        ObjectiveSettings s{&mc, &cfg, alpha, b, true, key(cfg.seed, 0xa2, static_cast<std::uint64_t>(e), t.anchor)};
        parts[k] = triplet_objective(bm, ba, in, s);
        totals[k] = parts[k].total.value().item();
        g.backward(parts[k].total);
        gm[k] = main.zeros_like();
        ga[k] = aux.zeros_like();
        bm.accumulate_grads(g, gm[k]);
        ba.accumulate_grads(g, ga[k]);
        parts[k].total = {};
      });
      std::vector<Tensor> grad_main = main.zeros_like(), grad_aux = aux.zeros_like();
      double batch_total = 0.0;
      for (std::size_t k = 0; k < b; ++k) {
        sum_main += parts[k].ctc_main;
        sum_aux += parts[k].ctc_aux;
        sum_pair += parts[k].pair;
        batch_total += totals[k];
        for (std::size_t p = 0; p < grad_main.size(); ++p) {
          for (std::size_t j = 0; j < grad_main[p].values.size(); ++j) grad_main[p].values[j] += gm[k][p].values[j];
          for (std::size_t j = 0; j < grad_aux[p].values.size(); ++j) grad_aux[p].values[j] += ga[k][p].values[j];
        }
      }
      if (!std::isfinite(batch_total)) throw Divergence("adapt", e);
      sum_total += batch_total;
      last_alpha = alpha;
      last_ed = mean_ed;
      count += b;
      ++batches;
      clip_gradients(grad_main, cfg.clip_norm);
      clip_gradients(grad_aux, cfg.clip_norm);
      adam_main.step(main, grad_main);
      adam_aux.step(aux, grad_aux);
    }
    if (batches == 0) throw std::runtime_error("adapt: no triplets could be formed at epoch " + std::to_string(e));
    if (have_eval && detail::eval_due(e, epochs, cfg.eval_every)) last_eval = detail::eval_values(val, main, aux, mc);
    const double nb = static_cast<double>(batches), nc = static_cast<double>(count);
    std::vector<double> row{static_cast<double>(e + 1), sum_main / nc, sum_aux / nc, sum_pair / nc, sum_total / nb,
                            last_alpha, last_ed, static_cast<double>(bound),
                            static_cast<double>(fallbacks), static_cast<double>(skipped)};
    row.insert(row.end(), last_eval.begin(), last_eval.end());
    report.rows.push_back(std::move(row));
    detail::maybe_checkpoint(cfg, e, "main", main, mc);
    detail::maybe_checkpoint(cfg, e, "aux", aux, mc);
    if (hook) hook(e, report);
  }
  return report;
}

}  // namespace seqda::train
