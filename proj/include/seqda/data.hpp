#pragma once

// Sensor-pen recordings: sample/dataset model, JSONL storage, WD/WI
// splitting, per-sample padding + z-scoring and a synthetic tablet/paper
// generator with a controllable domain shift.

#include <nlohmann/json.hpp>

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <fstream>
#include <map>
#include <numbers>
#include <optional>
#include <random>
#include <set>
#include <sstream>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

#include "seqda/config.hpp"
#include "seqda/tensor.hpp"

namespace seqda::data {

/// accelerometer front (0-2), accelerometer rear (3-5), gyroscope (6-8),
/// magnetometer (9-11), force (12).
inline constexpr std::size_t kChannels = 13;
inline constexpr std::size_t kMagnetometer = 9;

enum class Domain { tablet, paper };

inline const char* domain_name(Domain d) { return d == Domain::tablet ? "tablet" : "paper"; }

inline Domain parse_domain(const std::string& s) {
  if (s == "tablet") return Domain::tablet;
  if (s == "paper") return Domain::paper;
  throw std::invalid_argument("unknown domain '" + s + "'");
}

struct MTSSample {
  std::string id;
  std::string writer;
  Domain domain = Domain::tablet;
  std::string label;
  Tensor signal;  ///< m x 13
};

/// Ordered set of label characters; class index = position.
class Alphabet {
 public:
  Alphabet() = default;
  explicit Alphabet(std::string symbols) {
    std::set<char> uniq(symbols.begin(), symbols.end());
    symbols_.assign(uniq.begin(), uniq.end());
  }

  static Alphabet from_labels(const std::vector<std::string>& labels) {
    std::string all;
    for (const auto& l : labels) all += l;
    return Alphabet(all);
  }

  std::size_t size() const { return symbols_.size(); }
  const std::string& symbols() const { return symbols_; }
  bool contains(char c) const { return symbols_.find(c) != std::string::npos; }

  int index(char c) const {
    const auto pos = symbols_.find(c);
    if (pos == std::string::npos) throw std::invalid_argument(std::string("unknown character '") + c + "'");
    return static_cast<int>(pos);
  }

  char symbol(int k) const { return symbols_.at(static_cast<std::size_t>(k)); }

  std::vector<int> encode(const std::string& word) const {
    std::vector<int> out;
    for (char c : word) out.push_back(index(c));
    return out;
  }

  std::string decode(const std::vector<int>& ids) const {
    std::string out;
    for (int k : ids) out += symbol(k);
    return out;
  }

  friend bool operator==(const Alphabet&, const Alphabet&) = default;

 private:
  std::string symbols_;
};

struct Dataset {
  std::vector<MTSSample> samples;
  Alphabet alphabet;

  std::size_t size() const { return samples.size(); }

  std::vector<std::string> labels() const {
    std::vector<std::string> out;
    out.reserve(samples.size());
    for (const auto& s : samples) out.push_back(s.label);
    return out;
  }

  std::vector<std::string> writers() const {
    std::set<std::string> w;
    for (const auto& s : samples) w.insert(s.writer);
    return {w.begin(), w.end()};
  }
};

class DataError : public std::runtime_error {
 public:
  DataError(const std::string& source, std::size_t line, const std::string& what)
      : std::runtime_error(source + ":" + std::to_string(line) + ": " + what), line_(line) {}
  std::size_t line() const { return line_; }

 private:
  std::size_t line_;
};

inline void validate_sample(const MTSSample& s, const Alphabet& alphabet) {
  if (!s.signal.is_matrix() || s.signal.rows() < 1) throw std::invalid_argument("sample '" + s.id + "': empty signal");
  if (s.signal.cols() != kChannels)
    throw std::invalid_argument("sample '" + s.id + "': expected 13 channels, got " + std::to_string(s.signal.cols()));
  if (s.label.empty()) throw std::invalid_argument("sample '" + s.id + "': empty label");
  for (char c : s.label)
    if (!alphabet.contains(c))
      throw std::invalid_argument("sample '" + s.id + "': unknown character '" + std::string(1, c) + "'");
}

enum class Format { jsonl };

struct LoadOptions {
  std::optional<Alphabet> alphabet;  ///< derived from labels when absent
  std::optional<Domain> domain;      ///< every record must carry this domain
  Format format = Format::jsonl;
};

inline nlohmann::json to_json(const MTSSample& s) {
  nlohmann::json signal = nlohmann::json::array();
  for (std::size_t t = 0; t < s.signal.rows(); ++t)
    signal.push_back(std::vector<double>(s.signal.row_ptr(t), s.signal.row_ptr(t) + s.signal.cols()));
  return {{"id", s.id}, {"writer", s.writer}, {"domain", domain_name(s.domain)}, {"label", s.label}, {"signal", signal}};
}

/// One JSON object per line: {id, writer, domain, label, signal: [[13 reals] x m]}.
inline Dataset parse_jsonl(std::istream& in, const std::string& source, const LoadOptions& opts = {}) {
  Dataset ds;
  std::string line;
  std::size_t lineno = 0;
  std::vector<std::size_t> lines;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    MTSSample s;
    try {
      const auto j = nlohmann::json::parse(line);
      s.id = j.at("id").get<std::string>();
      s.writer = j.at("writer").get<std::string>();
      s.domain = parse_domain(j.at("domain").get<std::string>());
      s.label = j.at("label").get<std::string>();
      const auto& rows = j.at("signal");
      if (!rows.is_array() || rows.empty()) throw std::invalid_argument("signal must be a non-empty array");
      s.signal = Tensor::matrix(rows.size(), kChannels);
      for (std::size_t t = 0; t < rows.size(); ++t) {
        if (!rows[t].is_array() || rows[t].size() != kChannels)
          throw std::invalid_argument("signal row " + std::to_string(t) + " has " +
                                      std::to_string(rows[t].is_array() ? rows[t].size() : 0) +
                                      " channels, expected 13");
        for (std::size_t c = 0; c < kChannels; ++c) s.signal(t, c) = rows[t][c].get<double>();
      }
    } catch (const nlohmann::json::exception& e) {
      throw DataError(source, lineno, std::string("malformed record: ") + e.what());
    } catch (const std::invalid_argument& e) {
      throw DataError(source, lineno, e.what());
    }
    if (s.label.empty()) throw DataError(source, lineno, "empty label");
    if (opts.domain && s.domain != *opts.domain)
      throw DataError(source, lineno, std::string("record domain '") + domain_name(s.domain) + "' but expected '" +
                                          domain_name(*opts.domain) + "'");
    ds.samples.push_back(std::move(s));
    lines.push_back(lineno);
  }
  if (ds.samples.empty()) throw DataError(source, lineno, "empty dataset");
  ds.alphabet = opts.alphabet ? *opts.alphabet : Alphabet::from_labels(ds.labels());
  for (std::size_t i = 0; i < ds.samples.size(); ++i)
    for (char c : ds.samples[i].label)
      if (!ds.alphabet.contains(c))
        throw DataError(source, lines[i], "unknown character '" + std::string(1, c) + "' in label '" +
                                              ds.samples[i].label + "'");
  return ds;
}

inline Dataset load_dataset(const std::string& path, const LoadOptions& opts = {}) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open dataset '" + path + "'");
  return parse_jsonl(in, path, opts);
}

inline void save_dataset(const std::string& path, const Dataset& ds) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot write dataset '" + path + "'");
  for (const auto& s : ds.samples) out << to_json(s).dump() << '\n';
}

// ---- splitting -------------------------------------------------------------

enum class SplitMode { WD, WI };

inline SplitMode parse_split_mode(const std::string& s) {
  if (s == "WD" || s == "wd") return SplitMode::WD;
  if (s == "WI" || s == "wi") return SplitMode::WI;
  throw std::invalid_argument("unknown split mode '" + s + "' (expected WD or WI)");
}

/// Writer-dependent: every writer's samples are split by `ratio`.
/// Writer-independent: writers are partitioned so validation writers never
/// appear in training. Sample order is preserved inside each part.
inline std::pair<Dataset, Dataset> split(const Dataset& ds, SplitMode mode, double ratio, std::uint64_t seed) {
  if (!(ratio > 0.0 && ratio < 1.0)) throw std::invalid_argument("split: ratio must be in (0, 1)");
  std::mt19937_64 rng(seed);
  std::vector<char> to_train(ds.size(), 0);
  std::map<std::string, std::vector<std::size_t>> by_writer;
  for (std::size_t i = 0; i < ds.size(); ++i) by_writer[ds.samples[i].writer].push_back(i);

  if (mode == SplitMode::WD) {
    for (auto& [writer, idx] : by_writer) {
      std::shuffle(idx.begin(), idx.end(), rng);
      const auto n_train = static_cast<std::size_t>(std::llround(ratio * static_cast<double>(idx.size())));
      for (std::size_t k = 0; k < n_train; ++k) to_train[idx[k]] = 1;
    }
  } else {
    if (by_writer.size() < 2) throw std::invalid_argument("split: writer-independent split needs at least 2 writers");
    std::vector<std::string> writers;
    for (const auto& [w, _] : by_writer) writers.push_back(w);
    std::shuffle(writers.begin(), writers.end(), rng);
    auto n_train = static_cast<std::size_t>(std::llround(ratio * static_cast<double>(writers.size())));
    n_train = std::clamp<std::size_t>(n_train, 1, writers.size() - 1);
    for (std::size_t k = 0; k < n_train; ++k)
      for (std::size_t i : by_writer[writers[k]]) to_train[i] = 1;
  }

  Dataset train{{}, ds.alphabet}, val{{}, ds.alphabet};
  for (std::size_t i = 0; i < ds.size(); ++i) (to_train[i] ? train : val).samples.push_back(ds.samples[i]);
  return {std::move(train), std::move(val)};
}

// ---- padding / normalization -----------------------------------------------

struct Padded {
  Tensor signal;                    ///< target_len x 13
  std::vector<std::uint8_t> mask;   ///< 1 on valid steps
  std::size_t length = 0;           ///< number of valid steps
};

/// Per-channel z-score over the sample's own valid steps (divisor 1 when the
/// channel std is below 1e-8), then zero-padding to target_len.
inline Padded pad_normalize(const MTSSample& s, std::size_t target_len) {
  const std::size_t m = s.signal.rows();
  if (m > target_len)
    throw std::invalid_argument("sequence too long: " + std::to_string(m) + " steps > target length " +
                                std::to_string(target_len));
  Padded out{Tensor::matrix(target_len, kChannels), std::vector<std::uint8_t>(target_len, 0), m};
  for (std::size_t c = 0; c < kChannels; ++c) {
    double mean = 0.0;
    for (std::size_t t = 0; t < m; ++t) mean += s.signal(t, c);
    mean /= static_cast<double>(m);
    double var = 0.0;
    for (std::size_t t = 0; t < m; ++t) var += (s.signal(t, c) - mean) * (s.signal(t, c) - mean);
    const double sd = std::sqrt(var / static_cast<double>(m));
    const double div = sd < 1e-8 ? 1.0 : sd;
    for (std::size_t t = 0; t < m; ++t) out.signal(t, c) = (s.signal(t, c) - mean) / div;
  }
  std::fill(out.mask.begin(), out.mask.begin() + static_cast<std::ptrdiff_t>(m), 1);
  return out;
}

// ---- synthetic generator ---------------------------------------------------

struct SynthConfig {
  std::size_t tablet_samples = 400;
  std::size_t paper_samples = 2000;
  std::vector<std::string> words;  ///< explicit vocabulary; generated when empty
  std::size_t n_words = 30;
  std::size_t word_min_len = 3;
  std::size_t word_max_len = 5;
  std::string alphabet = "abcdefgh";
  std::size_t tablet_writers = 2;
  std::size_t paper_writers = 20;
  std::size_t steps_per_char = 10;
  std::size_t char_jitter = 0;       ///< +-steps per character, drawn per sample
  double paper_noise_std = 0.5;
  std::array<double, 3> tablet_mag_bias{1.0, 0.0, 0.0};
  double writer_offset_std = 0.5;
  double writer_style_std = 0.0;     ///< per-writer perturbation of character amplitudes
  double sample_noise_std = 0.0;     ///< white noise on both domains
  double tablet_mix_std = 0.0;       ///< tablet channels pass through I + std * G, G fixed per seed
  std::uint64_t seed = 1;

  void validate() const {
    if (tablet_samples < 1 || paper_samples < 1) throw std::invalid_argument("synth: n_samples must be >= 1");
    if (paper_noise_std < 0 || writer_offset_std < 0 || writer_style_std < 0 || sample_noise_std < 0 ||
        tablet_mix_std < 0)
      throw std::invalid_argument("synth: standard deviations must be >= 0");
    if (tablet_writers < 1 || paper_writers < 1) throw std::invalid_argument("synth: writer counts must be >= 1");
    if (steps_per_char < 1 || char_jitter >= steps_per_char)
      throw std::invalid_argument("synth: need steps_per_char >= 1 and char_jitter < steps_per_char");
    if (words.empty() && (n_words == 0 || alphabet.empty()))
      throw std::invalid_argument("synth: empty word list");
    if (words.empty() && (word_min_len < 1 || word_max_len < word_min_len))
      throw std::invalid_argument("synth: invalid word length range");
  }

  static SynthConfig from_config(const KeyValueConfig& kv) {
    SynthConfig c;
    if (kv.has("n_samples")) c.tablet_samples = c.paper_samples = static_cast<std::size_t>(kv.get_int("n_samples", 1));
    c.tablet_samples = static_cast<std::size_t>(kv.get_int("tablet_samples", static_cast<std::int64_t>(c.tablet_samples)));
    c.paper_samples = static_cast<std::size_t>(kv.get_int("paper_samples", static_cast<std::int64_t>(c.paper_samples)));
    c.words = kv.get_list("words");
    if (kv.has("words") && c.words.empty()) throw std::invalid_argument("synth: empty word list");
    c.n_words = static_cast<std::size_t>(kv.get_int("n_words", static_cast<std::int64_t>(c.n_words)));
    c.word_min_len = static_cast<std::size_t>(kv.get_int("word_min_len", static_cast<std::int64_t>(c.word_min_len)));
    c.word_max_len = static_cast<std::size_t>(kv.get_int("word_max_len", static_cast<std::int64_t>(c.word_max_len)));
    c.alphabet = kv.get("alphabet", c.alphabet);
    if (kv.has("writers")) c.tablet_writers = c.paper_writers = static_cast<std::size_t>(kv.get_int("writers", 1));
    c.tablet_writers = static_cast<std::size_t>(kv.get_int("tablet_writers", static_cast<std::int64_t>(c.tablet_writers)));
    c.paper_writers = static_cast<std::size_t>(kv.get_int("paper_writers", static_cast<std::int64_t>(c.paper_writers)));
    c.steps_per_char = static_cast<std::size_t>(kv.get_int("steps_per_char", static_cast<std::int64_t>(c.steps_per_char)));
    c.char_jitter = static_cast<std::size_t>(kv.get_int("char_jitter", static_cast<std::int64_t>(c.char_jitter)));
    c.paper_noise_std = kv.get_double("paper_noise_std", c.paper_noise_std);
    const auto bias = kv.get_doubles("tablet_mag_bias", {c.tablet_mag_bias[0], c.tablet_mag_bias[1], c.tablet_mag_bias[2]});
    if (bias.size() != 3) throw std::invalid_argument("synth: tablet_mag_bias needs 3 values");
    std::copy(bias.begin(), bias.end(), c.tablet_mag_bias.begin());
    c.writer_offset_std = kv.get_double("writer_offset_std", c.writer_offset_std);
    c.writer_style_std = kv.get_double("writer_style_std", c.writer_style_std);
    c.sample_noise_std = kv.get_double("sample_noise_std", c.sample_noise_std);
    c.tablet_mix_std = kv.get_double("tablet_mix_std", c.tablet_mix_std);
    c.seed = static_cast<std::uint64_t>(kv.get_int("seed", static_cast<std::int64_t>(c.seed)));
    c.validate();
    return c;
  }

  KeyValueConfig to_config() const {
    KeyValueConfig kv;
    kv.set("tablet_samples", static_cast<std::uint64_t>(tablet_samples));
    kv.set("paper_samples", static_cast<std::uint64_t>(paper_samples));
    if (!words.empty()) {
      std::string w;
      for (const auto& s : words) w += (w.empty() ? "" : ",") + s;
      kv.set("words", w);
    }
    kv.set("n_words", static_cast<std::uint64_t>(n_words));
    kv.set("word_min_len", static_cast<std::uint64_t>(word_min_len));
    kv.set("word_max_len", static_cast<std::uint64_t>(word_max_len));
    kv.set("alphabet", alphabet);
    kv.set("tablet_writers", static_cast<std::uint64_t>(tablet_writers));
    kv.set("paper_writers", static_cast<std::uint64_t>(paper_writers));
    kv.set("steps_per_char", static_cast<std::uint64_t>(steps_per_char));
    kv.set("char_jitter", static_cast<std::uint64_t>(char_jitter));
    kv.set("paper_noise_std", paper_noise_std);
    kv.set("tablet_mag_bias", KeyValueConfig::format(tablet_mag_bias[0]) + "," +
                                  KeyValueConfig::format(tablet_mag_bias[1]) + "," +
                                  KeyValueConfig::format(tablet_mag_bias[2]));
    kv.set("writer_offset_std", writer_offset_std);
    kv.set("writer_style_std", writer_style_std);
    kv.set("sample_noise_std", sample_noise_std);
    kv.set("tablet_mix_std", tablet_mix_std);
    kv.set("seed", seed);
    return kv;
  }
};

namespace detail {

inline std::mt19937_64 keyed_rng(std::uint64_t seed, std::uint64_t tag, std::uint64_t a, std::uint64_t b = 0) {
  std::seed_seq seq{static_cast<std::uint32_t>(seed), static_cast<std::uint32_t>(seed >> 32),
                    static_cast<std::uint32_t>(tag), static_cast<std::uint32_t>(a), static_cast<std::uint32_t>(a >> 32),
                    static_cast<std::uint32_t>(b)};
  return std::mt19937_64(seq);
}

enum : std::uint64_t { kTagSignature = 1, kTagWriter = 2, kTagStyle = 3, kTagWords = 4, kTagSample = 5, kTagMix = 6 };

inline constexpr std::size_t kComponents = 2;

struct CharSignature {
  std::array<std::array<double, kComponents>, kChannels> amp{}, freq{}, phase{};
};

inline CharSignature signature(std::uint64_t seed, std::size_t char_id) {
  auto rng = keyed_rng(seed, kTagSignature, char_id);
  std::uniform_real_distribution<double> amp(0.5, 1.5), freq(0.5, 2.0), phase(0.0, 2.0 * std::numbers::pi);
  CharSignature s;
  for (std::size_t c = 0; c < kChannels; ++c)
    for (std::size_t k = 0; k < kComponents; ++k) {
      s.amp[c][k] = amp(rng);
      s.freq[c][k] = freq(rng);
      s.phase[c][k] = phase(rng);
    }
  return s;
}

}  // namespace detail

/// Vocabulary used by the generator: cfg.words, or n_words distinct random
/// words over cfg.alphabet.
inline std::vector<std::string> synth_words(const SynthConfig& cfg) {
  if (!cfg.words.empty()) return cfg.words;
  auto rng = detail::keyed_rng(cfg.seed, detail::kTagWords, 0);
  std::uniform_int_distribution<std::size_t> len(cfg.word_min_len, cfg.word_max_len);
  std::uniform_int_distribution<std::size_t> ch(0, cfg.alphabet.size() - 1);
  std::set<std::string> seen;
  std::vector<std::string> out;
  for (std::size_t attempts = 0; out.size() < cfg.n_words; ++attempts) {
    if (attempts > 100 * cfg.n_words + 1000) throw std::invalid_argument("synth: cannot draw enough distinct words");
    std::string w(len(rng), ' ');
    for (char& c : w) c = cfg.alphabet[ch(rng)];
    if (seen.insert(w).second) out.push_back(w);
  }
  return out;
}

/// Renders one recording. Characters are concatenated sinusoid banks keyed by
/// character and seed; the writer adds a constant offset (and optionally a
/// style perturbation); `rng` drives per-sample duration jitter and noise.
inline Tensor synth_render(const SynthConfig& cfg, const std::string& word, std::size_t writer, Domain domain,
                           std::mt19937_64& rng) {
  std::vector<std::size_t> durations;
  std::uniform_int_distribution<std::ptrdiff_t> jitter(-static_cast<std::ptrdiff_t>(cfg.char_jitter),
                                                        static_cast<std::ptrdiff_t>(cfg.char_jitter));
  for (std::size_t i = 0; i < word.size(); ++i)
    durations.push_back(static_cast<std::size_t>(static_cast<std::ptrdiff_t>(cfg.steps_per_char) +
                                                 (cfg.char_jitter ? jitter(rng) : 0)));
  std::size_t total = 0;
  for (std::size_t d : durations) total += d;

  auto wrng = detail::keyed_rng(cfg.seed, detail::kTagWriter, writer);
  std::normal_distribution<double> unit(0.0, 1.0);
  std::array<double, kChannels> offset{};
  for (double& o : offset) o = cfg.writer_offset_std * unit(wrng);

  Tensor sig = Tensor::matrix(total, kChannels);
  std::size_t t0 = 0;
  for (std::size_t i = 0; i < word.size(); ++i) {
    const auto char_id = static_cast<std::size_t>(static_cast<unsigned char>(word[i]));
    auto sigp = detail::signature(cfg.seed, char_id);
    if (cfg.writer_style_std > 0.0) {
      auto srng = detail::keyed_rng(cfg.seed, detail::kTagStyle, writer, char_id);
      for (auto& ch : sigp.amp)
        for (double& a : ch) a += cfg.writer_style_std * unit(srng);
    }
    const double d = static_cast<double>(durations[i]);
    for (std::size_t t = 0; t < durations[i]; ++t)
      for (std::size_t c = 0; c < kChannels; ++c) {
        double v = offset[c];
        for (std::size_t k = 0; k < detail::kComponents; ++k)
          v += sigp.amp[c][k] *
               std::sin(2.0 * std::numbers::pi * sigp.freq[c][k] * static_cast<double>(t) / d + sigp.phase[c][k]);
        sig(t0 + t, c) = v;
      }
    t0 += durations[i];
  }
  if (cfg.sample_noise_std > 0.0)
    for (double& v : sig.values) v += cfg.sample_noise_std * unit(rng);
  if (domain == Domain::paper && cfg.paper_noise_std > 0.0)
    for (double& v : sig.values) v += cfg.paper_noise_std * unit(rng);
  if (domain == Domain::tablet && cfg.tablet_mix_std > 0.0) {
    // sensor response of the tablet surface: one fixed channel mixing per seed
    auto mrng = detail::keyed_rng(cfg.seed, detail::kTagMix, 0);
    std::normal_distribution<double> mixn(0.0, 1.0);  // own state so no cached draw leaks in
    std::array<std::array<double, kChannels>, kChannels> mix{};
    for (std::size_t i = 0; i < kChannels; ++i)
      for (std::size_t j = 0; j < kChannels; ++j) mix[i][j] = (i == j ? 1.0 : 0.0) + cfg.tablet_mix_std * mixn(mrng);
    for (std::size_t t = 0; t < total; ++t) {
      std::array<double, kChannels> row{};
      for (std::size_t j = 0; j < kChannels; ++j)
        for (std::size_t i = 0; i < kChannels; ++i) row[j] += sig(t, i) * mix[i][j];
      for (std::size_t j = 0; j < kChannels; ++j) sig(t, j) = row[j];
    }
  }
  if (domain == Domain::tablet)
    for (std::size_t t = 0; t < total; ++t)
      for (std::size_t c = 0; c < 3; ++c) sig(t, kMagnetometer + c) += cfg.tablet_mag_bias[c];
  return sig;
}

inline std::string writer_name(std::size_t w) {
  std::ostringstream os;
  os << 'w' << (w < 10 ? "0" : "") << w;
  return os.str();
}

/// Generates (tablet, paper) datasets; deterministic in cfg.seed.
inline std::pair<Dataset, Dataset> synth_generate(const SynthConfig& cfg) {
  cfg.validate();
  const auto words = synth_words(cfg);
  std::string chars = cfg.alphabet;
  for (const auto& w : words) chars += w;
  const Alphabet alphabet(chars);

  auto make = [&](Domain domain, std::size_t n, std::size_t writers) {
    Dataset ds{{}, alphabet};
    for (std::size_t i = 0; i < n; ++i) {
      auto rng = detail::keyed_rng(cfg.seed, detail::kTagSample, i, domain == Domain::tablet ? 0 : 1);
      std::uniform_int_distribution<std::size_t> pick_word(0, words.size() - 1), pick_writer(0, writers - 1);
      const auto& word = words[pick_word(rng)];
      const std::size_t writer = pick_writer(rng);
      std::ostringstream id;
      id << (domain == Domain::tablet ? 't' : 'p');
      id.width(5);
      id.fill('0');
      id << i;
      ds.samples.push_back({id.str(), writer_name(writer), domain, word, synth_render(cfg, word, writer, domain, rng)});
    }
    return ds;
  };
  return {make(Domain::tablet, cfg.tablet_samples, cfg.tablet_writers),
          make(Domain::paper, cfg.paper_samples, cfg.paper_writers)};
}

}  // namespace seqda::data
