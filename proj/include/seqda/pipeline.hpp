#pragma once

// Glue shared by the command-line tool and the experiment tests: dataset
// pairing, splits, model/train configuration and checkpoint metadata.

#include <string>
#include <utility>

#include "seqda/checkpoint.hpp"
#include "seqda/config.hpp"
#include "seqda/data.hpp"
#include "seqda/model.hpp"
#include "seqda/trainer.hpp"

namespace seqda::pipeline {

/// Both datasets re-labelled with the union of their alphabets.
inline std::pair<data::Dataset, data::Dataset> align_alphabets(data::Dataset tablet, data::Dataset paper) {
  const data::Alphabet alphabet(tablet.alphabet.symbols() + paper.alphabet.symbols());
  tablet.alphabet = alphabet;
  paper.alphabet = alphabet;
  return {std::move(tablet), std::move(paper)};
}

inline std::pair<data::Dataset, data::Dataset> load_pair(const std::string& tablet_path, const std::string& paper_path) {
  return align_alphabets(data::load_dataset(tablet_path, {std::nullopt, data::Domain::tablet, data::Format::jsonl}),
                         data::load_dataset(paper_path, {std::nullopt, data::Domain::paper, data::Format::jsonl}));
}

struct Splits {
  data::Dataset tablet_train, tablet_val, paper_train, paper_val;
};

/// Tablet data is split by `split` (WI by default), paper data writer-dependently.
inline Splits make_splits(const data::Dataset& tablet, const data::Dataset& paper, const KeyValueConfig& kv) {
  const auto mode = data::parse_split_mode(kv.get("split", "WI"));
  const double ratio = kv.get_double("split_ratio", 0.8);
  const auto seed = static_cast<std::uint64_t>(kv.get_int("split_seed", 7));
  Splits s;
  std::tie(s.tablet_train, s.tablet_val) = data::split(tablet, mode, ratio, seed);
  std::tie(s.paper_train, s.paper_val) = data::split(paper, data::SplitMode::WD, ratio, seed);
  return s;
}

/// Model configuration from `kv`; num_classes follows the alphabet unless given.
inline model::ModelConfig model_config(const KeyValueConfig& kv, const data::Alphabet& alphabet) {
  model::ModelConfig base;
  base.num_classes = alphabet.size() + 1;
  base.seed = static_cast<std::uint64_t>(kv.get_int("seed", static_cast<std::int64_t>(base.seed)));
  return model::ModelConfig::from_config(kv, base);
}

inline model::ModelConfig aux_config(model::ModelConfig mc) {
  mc.seed += 1;
  return mc;
}

struct PreparedSplits {
  train::Prepared tablet_train, tablet_val, paper_train, paper_val;
};

inline PreparedSplits prepare(const Splits& s, const model::ModelConfig& mc) {
  return {train::prepare(s.tablet_train, mc), train::prepare(s.tablet_val, mc), train::prepare(s.paper_train, mc),
          train::prepare(s.paper_val, mc)};
}

inline checkpoint::Checkpoint make_checkpoint(const model::ParamStore& ps, const model::ModelConfig& mc,
                                              const data::Alphabet& alphabet, const std::string& role) {
  checkpoint::Checkpoint ck;
  mc.to_config(ck.meta);
  ck.meta.set("alphabet", alphabet.symbols());
  ck.meta.set("role", role);
  ck.params = ps;
  return ck;
}

struct LoadedModel {
  model::ParamStore params;
  model::ModelConfig config;
  data::Alphabet alphabet;
};

inline LoadedModel load_model(const std::string& path) {
  auto ck = checkpoint::load(path);
  LoadedModel m;
  m.config = model::ModelConfig::from_config(ck.meta);
  m.alphabet = data::Alphabet(ck.meta.require("alphabet"));
  m.params = std::move(ck.params);
  const auto expected = model::init_params(m.config);
  if (expected.size() != m.params.size())
    throw std::runtime_error("checkpoint '" + path + "' does not match its model configuration");
  for (std::size_t i = 0; i < expected.size(); ++i)
    if (expected.name(i) != m.params.name(i) || expected.at(i).shape != m.params.at(i).shape)
      throw std::runtime_error("checkpoint '" + path + "': parameter '" + m.params.name(i) + "' has wrong name or shape");
  return m;
}

}  // namespace seqda::pipeline
