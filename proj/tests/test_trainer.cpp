#include <gtest/gtest.h>

#include <cmath>
#include <random>

#include "cases.hpp"
#include "oracles.hpp"
#include "seqda/trainer.hpp"

using namespace seqda;

namespace {

model::ModelConfig tiny_model(std::size_t classes) {
  model::ModelConfig c;
  c.input_len = 24;
  c.pooled_len = 8;
  c.conv_filters = 6;
  c.lstm1_hidden = 6;
  c.lstm2_hidden = 6;
  c.num_classes = classes;
  c.seed = 5;
  return c;
}

struct Fixture {
  data::Dataset tablet, paper;
  model::ModelConfig mc;
  train::Prepared t, p;

  explicit Fixture(std::size_t tablet_n = 20, std::size_t paper_n = 40) {
    data::SynthConfig sc;
    sc.tablet_samples = tablet_n;
    sc.paper_samples = paper_n;
    sc.n_words = 5;
    sc.word_min_len = 2;
    sc.word_max_len = 3;
    sc.alphabet = "abcd";
    sc.steps_per_char = 6;
    sc.seed = 4;
    std::tie(tablet, paper) = data::synth_generate(sc);
    paper.alphabet = tablet.alphabet;
    mc = tiny_model(tablet.alphabet.size() + 1);
    t = train::prepare(tablet, mc);
    p = train::prepare(paper, mc);
  }
};

train::TrainConfig quick(std::int64_t pre, std::int64_t adapt) {
  train::TrainConfig tc;
  tc.lr = 1e-3;
  tc.batch_size = 8;
  tc.pretrain_epochs = pre;
  tc.adapt_epochs = adapt;
  tc.schedule_epochs = std::max<std::int64_t>(adapt, 1);
  tc.spec.samples = 50;
  return tc;
}

}  // namespace

TEST(TrainConfig, DefaultsAndValidation) {
  train::TrainConfig tc;
  EXPECT_EQ(tc.lr, 1e-4);
  EXPECT_EQ(tc.effective_adapt_epochs(), 2000);
  tc.mode = train::PairMode::contrastive;
  EXPECT_EQ(tc.effective_adapt_epochs(), 200);
  tc.c = 6;
  EXPECT_THROW(tc.validate(), std::invalid_argument);
  tc.c = 3;
  tc.batch_size = 0;
  EXPECT_THROW(tc.validate(), std::invalid_argument);
  EXPECT_THROW(train::parse_mode("siamese"), std::invalid_argument);
}

TEST(TrainConfig, KeyValueRoundTrip) {
  auto tc = quick(3, 4);
  tc.spec.kind = dml::DmlKind::CORAL;
  tc.mode = train::PairMode::contrastive;
  tc.c = 2;
  tc.lambda_pair = 0.25;
  KeyValueConfig kv;
  tc.to_config(kv);
  const auto back = train::TrainConfig::from_config(kv);
  KeyValueConfig kv2;
  back.to_config(kv2);
  EXPECT_EQ(kv.to_text(), kv2.to_text());
  EXPECT_EQ(back.spec.kind, dml::DmlKind::CORAL);
  EXPECT_EQ(back.lambda_pair, 0.25);
}

TEST(Adam, FirstStepMovesByLearningRate) {
  model::ParamStore ps;
  ps.add("w", Tensor::row({1.0, -2.0, 0.5}));
  train::TrainConfig tc;
  tc.lr = 0.1;
  train::Adam adam(ps, tc);
  adam.step(ps, {Tensor::row({3.0, -0.5, 0.0})});
  EXPECT_NEAR(ps.at("w").values[0], 0.9, 1e-8);
  EXPECT_NEAR(ps.at("w").values[1], -1.9, 1e-8);
  EXPECT_EQ(ps.at("w").values[2], 0.5);
}

TEST(Adam, ClipGradientsScalesGlobalNorm) {
  std::vector<Tensor> g{Tensor::row({3.0}), Tensor::row({4.0})};
  train::clip_gradients(g, 1.0);
  EXPECT_NEAR(g[0].values[0], 0.6, 1e-15);
  EXPECT_NEAR(g[1].values[0], 0.8, 1e-15);
  train::clip_gradients(g, 0.0);
  EXPECT_NEAR(g[1].values[0], 0.8, 1e-15);
}

TEST(Pretrain, ZeroLearningRateLeavesParameters) {
  Fixture f;
  auto params = model::init_params(f.mc);
  const auto before = params;
  auto tc = quick(3, 1);
  tc.lr = 0.0;
  const auto report = train::pretrain(params, f.t, f.mc, tc);
  EXPECT_EQ(params, before);
  EXPECT_EQ(report.rows.size(), 3u);
}

TEST(Pretrain, DeterministicInSeed) {
  Fixture f;
  auto a = model::init_params(f.mc), b = a;
  const auto tc = quick(4, 1);
  const auto ra = train::pretrain(a, f.t, f.mc, tc);
  const auto rb = train::pretrain(b, f.t, f.mc, tc);
  EXPECT_EQ(ra.rows, rb.rows);
  EXPECT_EQ(a, b);
}

TEST(Pretrain, LossHalvesOnTwentySamples) {
  Fixture f(20);
  auto params = model::init_params(f.mc);
  const auto report = train::pretrain(params, f.t, f.mc, quick(200, 1));
  const auto ctc = report.series("ctc");
  ASSERT_EQ(ctc.size(), 200u);
  for (double v : ctc) ASSERT_TRUE(std::isfinite(v));
  EXPECT_LE(ctc.back(), 0.5 * ctc.front()) << ctc.front() << " -> " << ctc.back();
}

TEST(Pretrain, NonFiniteLossAbortsWithEpoch) {
  Fixture f;
  f.t.inputs[0].values[0] = std::nan("");
  auto params = model::init_params(f.mc);
  try {
    train::pretrain(params, f.t, f.mc, quick(2, 1));
    FAIL() << "expected divergence";
  } catch (const train::Divergence& d) {
    EXPECT_EQ(d.epoch(), 0);
    EXPECT_NE(std::string(d.what()).find("epoch 0"), std::string::npos);
  }
}

TEST(Adapt, ZeroLambdaTotalIsCtcOnly) {
  Fixture f(8, 40);
  auto main = model::init_params(f.mc);
  auto mc_aux = f.mc;
  mc_aux.seed += 1;
  auto aux = model::init_params(mc_aux);
  auto tc = quick(0, 3);
  tc.lambda_pair = 0.0;
  tc.batch_size = 64;  // one batch per epoch, so batch means equal epoch means
  const auto r = train::adapt(main, aux, f.t, f.p, f.mc, tc);
  ASSERT_EQ(r.rows.size(), 3u);
  for (std::size_t e = 0; e < r.rows.size(); ++e) {
    const double ctc_only = r.at(e, "ctc_main") + r.at(e, "ctc_aux");
    EXPECT_NEAR(r.at(e, "total_loss"), ctc_only, 1e-12 * std::max(1.0, ctc_only));
    EXPECT_GT(r.at(e, "pair_loss"), 0.0);
  }
}

TEST(Adapt, ZeroLambdaGradientsMatchCtcOnlyObjective) {
  Fixture f;
  const auto main = model::init_params(f.mc);
  auto mc_aux = f.mc;
  mc_aux.seed += 1;
  const auto aux = model::init_params(mc_aux);
  auto tc = quick(0, 1);
  tc.lambda_pair = 0.0;
  train::TripletInputs in{&f.t.inputs[0], &f.p.inputs[0], &f.p.inputs[1], &f.t.labels[0], &f.p.labels[0],
                          &f.p.labels[1], f.t.lengths[0], f.p.lengths[0], f.p.lengths[1]};
  ad::Graph g;
  const auto bm = model::bind(g, main, "main.");
  const auto ba = model::bind(g, aux, "aux.");
  const auto parts = train::triplet_objective(bm, ba, in, {&f.mc, &tc, 7.0, 4});
  g.backward(parts.total);
  auto gm = main.zeros_like();
  bm.accumulate_grads(g, gm);

  ad::Graph h;
  const auto hm = model::bind(h, main, "main.");
  auto oa = model::forward(hm, h.constant(f.t.inputs[0]), f.mc);
  ad::Var ctc_main = ad::scale(ctc::ctc_loss(oa.log_probs, f.t.labels[0]), 0.25);
  h.backward(ctc_main);
  auto hg = main.zeros_like();
  hm.accumulate_grads(h, hg);
  EXPECT_NEAR(parts.total.value().item(), (parts.ctc_main + parts.ctc_aux) / 4.0, 1e-12);
  for (std::size_t i = 0; i < gm.size(); ++i)
    for (std::size_t k = 0; k < gm[i].values.size(); ++k) EXPECT_DOUBLE_EQ(gm[i].values[k], hg[i].values[k]);
}

TEST(Adapt, LoggedMarginAndBoundFollowFormulas) {
  Fixture f(12, 60);
  auto main = model::init_params(f.mc);
  auto aux = model::init_params(f.mc);
  auto tc = quick(0, 6);
  tc.schedule_epochs = 4;  // epochs past the schedule stay at its last value
  tc.spec.kind = dml::DmlKind::CORAL;
  tc.c = 4;
  const auto r = train::adapt(main, aux, f.t, f.p, f.mc, tc);
  const pairing::MarginPolicy policy{dml::beta_lookup(dml::DmlKind::CORAL, 4)};
  for (std::size_t e = 0; e < r.rows.size(); ++e) {
    const auto sched_e = std::min<std::int64_t>(static_cast<std::int64_t>(e), tc.schedule_epochs - 1);
    EXPECT_EQ(r.at(e, "ed_bound"), pairing::ed_lower_bound(sched_e, tc.schedule_epochs));
    EXPECT_EQ(r.at(e, "alpha"), pairing::dynamic_margin(r.at(e, "mean_ed"), policy));
    EXPECT_EQ(r.at(e, "alpha"), policy.beta * std::clamp(r.at(e, "mean_ed"), 1.0, 11.0));
    for (double v : r.rows[e]) EXPECT_TRUE(std::isfinite(v));
  }
}

TEST(Adapt, DeterministicAndUpdatesBothNetworks) {
  Fixture f(10, 40);
  const auto main0 = model::init_params(f.mc);
  auto mc_aux = f.mc;
  mc_aux.seed += 1;
  const auto aux0 = model::init_params(mc_aux);
  const auto tc = quick(0, 2);
  auto m1 = main0, a1 = aux0, m2 = main0, a2 = aux0;
  const auto r1 = train::adapt(m1, a1, f.t, f.p, f.mc, tc);
  const auto r2 = train::adapt(m2, a2, f.t, f.p, f.mc, tc);
  EXPECT_EQ(r1.rows, r2.rows);
  EXPECT_EQ(m1, m2);
  EXPECT_EQ(a1, a2);
  EXPECT_FALSE(m1 == main0);
  EXPECT_FALSE(a1 == aux0);
}

TEST(Adapt, NoPositivesIsAnError) {
  Fixture f;
  train::Prepared paper = f.p;
  for (auto& w : paper.words) w = "zzzzzzz";
  auto main = model::init_params(f.mc), aux = main;
  EXPECT_THROW(train::adapt(main, aux, f.t, paper, f.mc, quick(0, 1)), std::runtime_error);
}

TEST(Objective, GradientMatchesFiniteDifferences) {
  for (const auto mode : {train::PairMode::triplet, train::PairMode::contrastive})
    for (const auto kind : {dml::DmlKind::kHoMM_p3, dml::DmlKind::CORAL, dml::DmlKind::kMMD_p1})
      EXPECT_LT(cases::objective_gradient(kind, mode).rel_error, 1e-3)
          << dml::kind_name(kind) << " " << train::mode_name(mode);
}

TEST(Evaluate, OneHotDecodingIsPerfect) {
  const data::Alphabet abc("ab");
  Tensor lp = Tensor::matrix(4, 3, std::log(1e-12));
  lp(0, 0) = lp(1, 2) = lp(2, 0) = lp(3, 1) = 0.0;
  EXPECT_EQ(train::decode(lp, abc), "aab");
  const auto corpus = lm::build_ngram("aab ab", 2);
  EXPECT_EQ(train::decode(lp, abc, {&corpus, 1.0, {}}), "aab");
  EXPECT_EQ(metrics::cer({"aab"}, {"aab"}), 0.0);
}

TEST(Evaluate, UntrainedNetworkIsFiniteAndGammaZeroMatchesBestPath) {
  Fixture f;
  const auto params = model::init_params(f.mc);
  const auto plain = train::evaluate(params, f.t, f.tablet.alphabet, f.mc);
  EXPECT_TRUE(std::isfinite(plain.cer));
  EXPECT_GT(plain.cer, 0.0);
  const auto corpus = lm::build_ngram("ab abc bcd", 3);
  lm::EnumOptions all = lm::EnumOptions::uncapped();
  all.threshold = 0.0;
  all.path_thresh = 1u << 20;
  // gamma 0 picks the best merged word; with peaked outputs that is the best path
  Tensor lp = Tensor::matrix(3, 5, std::log(0.01));
  for (std::size_t t = 0; t < 3; ++t) lp(t, t) = std::log(0.96);
  EXPECT_EQ(train::decode(lp, f.tablet.alphabet, {&corpus, 0.0, all}), train::decode(lp, f.tablet.alphabet));
}

TEST(Report, CsvFormatting) {
  train::RunReport r;
  r.columns = {"epoch", "loss"};
  r.rows = {{1, 0.5}, {2, 0.25}};
  std::ostringstream out;
  r.write_csv(out);
  EXPECT_EQ(out.str(), "epoch,loss\n1,0.5\n2,0.25\n");
  EXPECT_THROW(r.column("cer"), std::invalid_argument);
}
