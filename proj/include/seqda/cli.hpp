#pragma once

#include <CLI11.hpp>

#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "seqda/config.hpp"
#include "seqda/data.hpp"
#include "seqda/dml.hpp"
#include "seqda/lm.hpp"
#include "seqda/pairing.hpp"
#include "seqda/pipeline.hpp"
#include "seqda/report.hpp"
#include "seqda/trainer.hpp"

namespace seqda::cli {

namespace fs = std::filesystem;

/// Raised for invalid invocations; mapped to exit code 2.
class UsageError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

struct Options {
  std::string command;
  std::string config;
  std::string out = ".";
  std::optional<std::int64_t> seed;
  std::optional<int> c;
  std::optional<std::string> dml;
  std::optional<std::string> mode;
  std::optional<double> gamma;
  std::optional<int> ngram;
  std::optional<double> lambda;
  std::string tablet, paper, main_ckpt, aux_ckpt, checkpoint, data, lm_path, corpus, manifest;
  std::string subset = "all";
};

namespace detail {

inline KeyValueConfig effective_config(const Options& o) {
  KeyValueConfig kv;
  if (!o.config.empty()) kv = KeyValueConfig::load(o.config);
  if (o.seed) kv.set("seed", *o.seed);
  if (o.c) kv.set("c", *o.c);
  if (o.dml) kv.set("dml", *o.dml);
  if (o.mode) kv.set("mode", *o.mode);
  if (o.gamma) kv.set("gamma", *o.gamma);
  if (o.ngram) kv.set("ngram", *o.ngram);
  if (o.lambda) kv.set("lambda_pair", *o.lambda);
  return kv;
}

/// Everything needed to repeat the run: effective config plus the CLI inputs.
inline void write_manifest(const Options& o, const KeyValueConfig& effective, const fs::path& out) {
  KeyValueConfig m = effective;
  m.set("cli.command", o.command);
  auto put = [&](const char* k, const std::string& v) {
    if (!v.empty()) m.set(std::string("cli.") + k, fs::absolute(v).lexically_normal().string());
  };
  put("tablet", o.tablet);
  put("paper", o.paper);
  put("main", o.main_ckpt);
  put("aux", o.aux_ckpt);
  put("checkpoint", o.checkpoint);
  put("data", o.data);
  put("lm", o.lm_path);
  put("corpus", o.corpus);
  if (o.command == "evaluate" || o.command == "rescore") m.set("cli.subset", o.subset);
  m.set("version.seqda", std::string(report::kVersion));
  m.set("version.checkpoint_format", static_cast<std::int64_t>(checkpoint::kVersion));
  m.save((out / "manifest.cfg").string());
}

inline void write_report(const train::RunReport& r, const fs::path& csv) {
  std::ofstream out(csv, std::ios::binary);
  if (!out) throw std::runtime_error("cannot write '" + csv.string() + "'");
  r.write_csv(out);
}

/// CER/WER curves for every error-rate column of the report.
inline void plot_error_rates(const train::RunReport& r, const std::string& title, const fs::path& svg) {
  std::vector<report::Series> series;
  for (const auto& c : r.columns)
    if (c.rfind("cer_", 0) == 0 || c.rfind("wer_", 0) == 0) series.push_back({c, r.series(c)});
  report::write_file(svg.string(), report::line_plot(title, "epoch", "error rate", r.series("epoch"), series));
}

inline void plot_losses(const train::RunReport& r, const std::vector<std::string>& cols, const std::string& title,
                        const fs::path& svg) {
  std::vector<report::Series> series;
  for (const auto& c : cols) series.push_back({c, r.series(c)});
  report::write_file(svg.string(), report::line_plot(title, "epoch", "loss", r.series("epoch"), series));
}

inline data::Dataset subset_of(const data::Dataset& ds, const KeyValueConfig& kv, const std::string& subset) {
  if (subset == "all") return ds;
  const bool tablet = !ds.samples.empty() && ds.samples.front().domain == data::Domain::tablet;
  const auto mode = tablet ? data::parse_split_mode(kv.get("split", "WI")) : data::SplitMode::WD;
  auto [tr, va] = data::split(ds, mode, kv.get_double("split_ratio", 0.8),
                              static_cast<std::uint64_t>(kv.get_int("split_seed", 7)));
  if (subset == "train") return tr;
  if (subset == "val") return va;
  throw UsageError("--subset must be all, train or val");
}

// ---- commands --------------------------------------------------------------

inline int gen_data(const Options& o, const KeyValueConfig& kv, const fs::path& out, std::ostream& log) {
  const auto sc = data::SynthConfig::from_config(kv);
  const auto [tablet, paper] = data::synth_generate(sc);
  data::save_dataset((out / "tablet.jsonl").string(), tablet);
  data::save_dataset((out / "paper.jsonl").string(), paper);
  std::string corpus;
  for (const auto& w : data::synth_words(sc)) corpus += w + "\n";
  report::write_file((out / "vocabulary.txt").string(), corpus);
  KeyValueConfig eff = kv;
  eff.merge(sc.to_config());
  write_manifest(o, eff, out);
  log << "wrote " << tablet.size() << " tablet and " << paper.size() << " paper samples to " << out.string() << "\n";
  return 0;
}

inline int pretrain(const Options& o, const KeyValueConfig& kv, const fs::path& out, std::ostream& log) {
  const auto [tablet, paper] = pipeline::load_pair(o.tablet, o.paper);
  const auto splits = pipeline::make_splits(tablet, paper, kv);
  const auto mc = pipeline::model_config(kv, tablet.alphabet);
  auto tc = train::TrainConfig::from_config(kv);
  const auto prep = pipeline::prepare(splits, mc);
  auto main = model::init_params(mc);
  auto aux = model::init_params(pipeline::aux_config(mc));
  tc.checkpoint_dir = (out / "checkpoints").string();
  const auto& alpha = tablet.alphabet;
  auto rm = train::pretrain(main, prep.tablet_train, mc, tc, {&prep.tablet_val, nullptr, &alpha}, "main");
  auto ra = train::pretrain(aux, prep.paper_train, mc, tc, {nullptr, &prep.paper_val, &alpha}, "aux");
  checkpoint::save((out / "main.ckpt").string(), pipeline::make_checkpoint(main, mc, alpha, "main"));
  checkpoint::save((out / "aux.ckpt").string(), pipeline::make_checkpoint(aux, pipeline::aux_config(mc), alpha, "aux"));
  write_report(rm, out / "pretrain_main.csv");
  write_report(ra, out / "pretrain_aux.csv");
  plot_error_rates(rm, "Pretraining (tablet, main network)", out / "pretrain_main_error.svg");
  plot_error_rates(ra, "Pretraining (paper, auxiliary network)", out / "pretrain_aux_error.svg");
  plot_losses(rm, {"ctc"}, "CTC loss (main)", out / "pretrain_main_loss.svg");
  plot_losses(ra, {"ctc"}, "CTC loss (auxiliary)", out / "pretrain_aux_loss.svg");
  KeyValueConfig eff = kv;
  mc.to_config(eff);
  tc.to_config(eff);
  write_manifest(o, eff, out);
  log << "pretrained main (tablet val CER " << rm.rows.back()[2] << ") and aux (paper val CER " << ra.rows.back()[2]
      << ")\n";
  return 0;
}

inline int adapt(const Options& o, const KeyValueConfig& kv, const fs::path& out, std::ostream& log) {
  auto main = pipeline::load_model(o.main_ckpt);
  auto aux = pipeline::load_model(o.aux_ckpt);
  if (!(main.alphabet == aux.alphabet)) throw std::runtime_error("main and aux checkpoints use different alphabets");
  auto [tablet, paper] = pipeline::load_pair(o.tablet, o.paper);
  if (!(tablet.alphabet == main.alphabet))
    throw std::runtime_error("dataset alphabet '" + tablet.alphabet.symbols() + "' differs from checkpoint alphabet '" +
                             main.alphabet.symbols() + "'");
  const auto splits = pipeline::make_splits(tablet, paper, kv);
  const auto& mc = main.config;
  auto tc = train::TrainConfig::from_config(kv);
  tc.checkpoint_dir = (out / "checkpoints").string();
  const auto prep = pipeline::prepare(splits, mc);
  std::optional<lm::NGramModel> lmodel;
  if (!o.lm_path.empty()) lmodel = lm::load(o.lm_path);
  train::Validation val{&prep.tablet_val, &prep.paper_val, &main.alphabet, lmodel ? &*lmodel : nullptr,
                        kv.get_double("gamma", 1.0)};
  auto r = train::adapt(main.params, aux.params, prep.tablet_train, prep.paper_train, mc, tc, val);
  checkpoint::save((out / "main.ckpt").string(), pipeline::make_checkpoint(main.params, mc, main.alphabet, "main"));
  checkpoint::save((out / "aux.ckpt").string(),
                   pipeline::make_checkpoint(aux.params, aux.config, aux.alphabet, "aux"));
  write_report(r, out / "adapt.csv");
  plot_error_rates(r, "Adaptation error rates", out / "adapt_error.svg");
  plot_losses(r, {"ctc_main", "ctc_aux"}, "Adaptation CTC losses", out / "adapt_loss.svg");
  KeyValueConfig eff = kv;
  mc.to_config(eff);
  tc.to_config(eff);
  eff.set("beta", dml::beta_lookup(tc.spec.kind, tc.c));
  write_manifest(o, eff, out);
  log << "adapted " << tc.effective_adapt_epochs() << " epochs; tablet val CER " << r.at(r.rows.size() - 1, "cer_tablet")
      << "\n";
  return 0;
}

inline void write_predictions(const fs::path& path, const data::Dataset& ds, const std::vector<std::string>& preds,
                              const std::vector<std::string>* rescored = nullptr) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("cannot write '" + path.string() + "'");
  out << "id,label,prediction" << (rescored ? ",rescored" : "") << "\n";
  for (std::size_t i = 0; i < ds.size(); ++i) {
    out << ds.samples[i].id << ',' << ds.samples[i].label << ',' << preds[i];
    if (rescored) out << ',' << (*rescored)[i];
    out << '\n';
  }
}

inline int evaluate(const Options& o, const KeyValueConfig& kv, const fs::path& out, std::ostream& log,
                    bool rescore_mode) {
  const auto m = pipeline::load_model(o.checkpoint);
  const auto raw = data::load_dataset(o.data, {m.alphabet, std::nullopt, data::Format::jsonl});
  const auto ds = subset_of(raw, kv, o.subset);
  const auto prep = train::prepare(ds, m.config);
  std::optional<lm::NGramModel> lmodel;
  if (!o.lm_path.empty()) lmodel = lm::load(o.lm_path);
  const double gamma = kv.get_double("gamma", 1.0);
  const auto plain = train::evaluate(m.params, prep, m.alphabet, m.config);
  std::optional<train::EvalResult> with_lm;
  if (lmodel) with_lm = train::evaluate(m.params, prep, m.alphabet, m.config, {&*lmodel, gamma, {}});

  std::ofstream csv(out / (rescore_mode ? "rescore.csv" : "eval.csv"), std::ios::binary);
  csv << "decoder,samples,cer,wer\n";
  csv << "best_path," << ds.size() << ',' << train::RunReport::format(plain.cer) << ','
      << train::RunReport::format(plain.wer) << '\n';
  if (with_lm)
    csv << "lm_rescore," << ds.size() << ',' << train::RunReport::format(with_lm->cer) << ','
        << train::RunReport::format(with_lm->wer) << '\n';
  write_predictions(out / "predictions.csv", ds, plain.predictions, with_lm ? &with_lm->predictions : nullptr);
  KeyValueConfig eff = kv;
  m.config.to_config(eff);
  if (lmodel) eff.set("gamma", gamma);
  write_manifest(o, eff, out);
  log << "CER " << plain.cer << " WER " << plain.wer;
  if (with_lm) log << " | with LM: CER " << with_lm->cer << " WER " << with_lm->wer;
  log << "\n";
  return 0;
}

inline std::string read_text(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open '" + path + "'");
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

inline int build_lm(const Options& o, const KeyValueConfig& kv, const fs::path& out, std::ostream& log) {
  const int n = static_cast<int>(kv.get_int("ngram", 3));
  const auto m = lm::build_ngram(read_text(o.corpus), n);
  lm::save((out / "lm.txt").string(), m);
  KeyValueConfig eff = kv;
  eff.set("ngram", n);
  write_manifest(o, eff, out);
  log << "built " << n << "-gram model with " << m.counts.size() << " contexts\n";
  return 0;
}

inline int pairs_report(const Options& o, const KeyValueConfig& kv, const fs::path& out, std::ostream& log) {
  const auto [tablet, paper] = pipeline::load_pair(o.tablet, o.paper);
  const auto dict = pairing::build_pair_dictionary(tablet, paper);
  {
    std::ofstream f(out / "pairs.csv", std::ios::binary);
    pairing::write_pairs_csv(f, dict, tablet, paper);
  }
  {
    std::ofstream f(out / "pair_histogram.csv", std::ios::binary);
    pairing::write_histogram_csv(f, dict);
  }
  std::vector<std::string> labels;
  std::vector<double> values;
  const auto h = dict.histogram();
  for (int d = 0; d <= pairing::kMaxEd; ++d) {
    labels.push_back(std::to_string(d));
    values.push_back(static_cast<double>(h[static_cast<std::size_t>(d)]));
  }
  report::write_file((out / "pair_histogram.svg").string(),
                     report::bar_chart("Tablet-paper pairs per edit distance", "ED", "pairs", labels, values));
  write_manifest(o, kv, out);
  log << "indexed " << dict.count(0) << " positive and " << dict.negatives() << " negative pairs\n";
  return 0;
}

}  // namespace detail

inline std::vector<std::string> commands() {
  return {"gen-data", "pretrain", "adapt", "evaluate", "build-lm", "rescore", "pairs-report", "rerun"};
}

inline int run(const std::vector<std::string>& args, std::ostream& log = std::cout, std::ostream& err = std::cerr);

namespace detail {

/// Re-issues the command recorded in a manifest, reading every setting from it.
inline int rerun(const Options& o, std::ostream& log, std::ostream& err) {
  const auto m = KeyValueConfig::load(o.manifest);
  const std::string cmd = m.require("cli.command");
  std::vector<std::string> args{cmd, "--config", o.manifest, "--out", o.out};
  const std::pair<const char*, const char*> flags[] = {
      {"cli.tablet", "--tablet"}, {"cli.paper", "--paper"}, {"cli.main", "--main"}, {"cli.aux", "--aux"},
      {"cli.checkpoint", "--checkpoint"}, {"cli.data", "--data"}, {"cli.lm", "--lm"}, {"cli.corpus", "--corpus"},
      {"cli.subset", "--subset"}};
  for (const auto& [key, flag] : flags)
    if (m.has(key)) {
      args.push_back(flag);
      args.push_back(m.require(key));
    }
  return run(args, log, err);
}

}  // namespace detail

/// Runs one command; returns 0 on success, 2 on usage errors, 1 on failures.
inline int run(const std::vector<std::string>& args, std::ostream& log, std::ostream& err) {
  Options o;
  CLI::App app{"Sensor-handwriting domain adaptation toolkit", "seqda"};
  app.require_subcommand(1, 1);
  auto common = [&](CLI::App* sub) {
    sub->add_option("--config", o.config, "flat key = value configuration file")->check(CLI::ExistingFile);
    sub->add_option("--out", o.out, "output directory (created if absent)");
    sub->add_option("--seed", o.seed, "seed override");
  };
  auto* gen = app.add_subcommand("gen-data", "generate synthetic tablet/paper datasets");
  common(gen);
  auto* pre = app.add_subcommand("pretrain", "CTC pretraining of main (tablet) and auxiliary (paper) networks");
  common(pre);
  pre->add_option("--tablet", o.tablet)->required()->check(CLI::ExistingFile);
  pre->add_option("--paper", o.paper)->required()->check(CLI::ExistingFile);
  auto* ada = app.add_subcommand("adapt", "domain-adaptation fine-tuning at a fusion point");
  common(ada);
  ada->add_option("--tablet", o.tablet)->required()->check(CLI::ExistingFile);
  ada->add_option("--paper", o.paper)->required()->check(CLI::ExistingFile);
  ada->add_option("--main", o.main_ckpt, "pretrained main checkpoint")->required()->check(CLI::ExistingFile);
  ada->add_option("--aux", o.aux_ckpt, "pretrained auxiliary checkpoint")->required()->check(CLI::ExistingFile);
  ada->add_option("--c", o.c, "fusion point 1..5")->check(CLI::Range(1, 5));
  ada->add_option("--dml", o.dml, "distance kind, e.g. kHoMM_p3");
  ada->add_option("--mode", o.mode, "triplet or contrastive")->check(CLI::IsMember({"triplet", "contrastive"}));
  ada->add_option("--lambda", o.lambda, "pairwise loss weight");
  ada->add_option("--lm", o.lm_path, "n-gram model for LM-rescored validation columns")->check(CLI::ExistingFile);
  ada->add_option("--gamma", o.gamma, "LM weight");
  for (const char* name : {"evaluate", "rescore"}) {
    auto* ev = app.add_subcommand(name, std::string(name) == "evaluate" ? "CER/WER of a checkpoint on a dataset"
                                                                        : "LM rescoring of a checkpoint's outputs");
    common(ev);
    ev->add_option("--checkpoint", o.checkpoint)->required()->check(CLI::ExistingFile);
    ev->add_option("--data", o.data)->required()->check(CLI::ExistingFile);
    auto* lmopt = ev->add_option("--lm", o.lm_path, "n-gram model file")->check(CLI::ExistingFile);
    if (std::string(name) == "rescore") lmopt->required();
    ev->add_option("--gamma", o.gamma, "LM weight (default 1)");
    ev->add_option("--subset", o.subset, "all, train or val")->check(CLI::IsMember({"all", "train", "val"}));
  }
  auto* blm = app.add_subcommand("build-lm", "character n-gram model from a text corpus");
  common(blm);
  blm->add_option("--corpus", o.corpus)->required()->check(CLI::ExistingFile);
  blm->add_option("--ngram", o.ngram, "order n (default 3)")->check(CLI::PositiveNumber);
  auto* pr = app.add_subcommand("pairs-report", "pair counts per edit distance");
  common(pr);
  pr->add_option("--tablet", o.tablet)->required()->check(CLI::ExistingFile);
  pr->add_option("--paper", o.paper)->required()->check(CLI::ExistingFile);
  auto* rr = app.add_subcommand("rerun", "repeat the run recorded in a manifest");
  rr->add_option("--manifest", o.manifest)->required()->check(CLI::ExistingFile);
  rr->add_option("--out", o.out, "output directory")->required();

  std::vector<std::string> reversed(args.rbegin(), args.rend());
  try {
    app.parse(reversed);
  } catch (const CLI::CallForHelp&) {
    log << app.help();
    return 0;
  } catch (const CLI::ParseError& e) {
    err << "usage error: " << e.what() << "\n" << "run 'seqda --help' for usage\n";
    return 2;
  }
  o.command = app.get_subcommands().front()->get_name();
  try {
    fs::create_directories(o.out);
    if (o.command == "rerun") return detail::rerun(o, log, err);
    const auto kv = detail::effective_config(o);
    const fs::path out(o.out);
    if (o.command == "gen-data") return detail::gen_data(o, kv, out, log);
    if (o.command == "pretrain") return detail::pretrain(o, kv, out, log);
    if (o.command == "adapt") return detail::adapt(o, kv, out, log);
    if (o.command == "evaluate") return detail::evaluate(o, kv, out, log, false);
    if (o.command == "rescore") return detail::evaluate(o, kv, out, log, true);
    if (o.command == "build-lm") return detail::build_lm(o, kv, out, log);
    if (o.command == "pairs-report") return detail::pairs_report(o, kv, out, log);
  } catch (const UsageError& e) {
    err << "usage error: " << e.what() << "\n";
    return 2;
  } catch (const std::exception& e) {
    err << "error (" << o.command << "): " << e.what() << "\n";
    return 1;
  }
  return 2;
}

inline int run(int argc, char** argv, std::ostream& log = std::cout, std::ostream& err = std::cerr) {
  return run(std::vector<std::string>(argv + 1, argv + argc), log, err);
}

}  // namespace seqda::cli
