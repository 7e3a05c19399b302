#include <gtest/gtest.h>

#include <cmath>
#include <limits>

#include "samst/synthetic.hpp"
#include "samst/trainer.hpp"

using namespace samst;

namespace {

NetworkConfig tiny_config() {
  NetworkConfig c;
  c.encoder_channels = {4, 6, 8};
  c.sab_count = 2;
  c.mlp_hidden = 12;
  return c;
}

TrainConfig tiny_train() {
  TrainConfig t;
  t.iterations = 6;
  t.batch_size = 2;
  t.content_crop = 8;
  t.style_size = 16;
  t.checkpoint_every = 3;
  t.incremental_iterations = 4;
  t.geo_mode = GeoMode::sample1;
  return t;
}

std::vector<Tensor<float>> contents(std::size_t n = 3) {
  std::vector<Tensor<float>> out;
  for (std::size_t i = 0; i < n; ++i) out.push_back(synthetic::content<float>(CounterRng(40).split(i), 12, 12));
  return out;
}

std::vector<NamedImage<float>> styles(std::size_t n, std::uint64_t seed = 50) {
  std::vector<NamedImage<float>> out;
  for (std::size_t i = 0; i < n; ++i) {
    out.push_back({"style" + std::to_string(i), "Style " + std::to_string(i),
                   synthetic::style<float>(CounterRng(seed).split(i), 16, i)});
  }
  return out;
}

bool same_weights(const SamstModel<float>& a, const SamstModel<float>& b) {
  const auto& wa = a.weights().all();
  const auto& wb = b.weights().all();
  if (wa.size() != wb.size()) return false;
  for (std::size_t i = 0; i < wa.size(); ++i) {
    if (wa[i].name != wb[i].name || !(wa[i].value == wb[i].value)) return false;
  }
  return true;
}

// Textbook Adam written out independently of adam_step.
struct OracleAdam {
  std::vector<double> m, v;
  int t = 0;
  void step(std::vector<double>& p, const std::vector<double>& g, double lr) {
    if (m.empty()) m.assign(p.size(), 0.0), v.assign(p.size(), 0.0);
    ++t;
    for (std::size_t i = 0; i < p.size(); ++i) {
      m[i] = 0.9 * m[i] + 0.1 * g[i];
      v[i] = 0.999 * v[i] + 0.001 * g[i] * g[i];
      const double mh = m[i] / (1 - std::pow(0.9, t));
      const double vh = v[i] / (1 - std::pow(0.999, t));
      p[i] -= lr * mh / (std::sqrt(vh) + 1e-8);
    }
  }
};

}  // namespace

TEST(Adam, FirstStepMovesByLearningRate) {
  Parameter<double> p("p", Tensor<double>::scalar(0.5));
  p.grad[0] = 1.0;
  AdamState<double> s;
  adam_step<double>({&p}, s, 0.001);
  EXPECT_NEAR(p.value[0] - 0.5, -0.001, 1e-6);
  EXPECT_EQ(p.grad[0], 0.0);
  EXPECT_EQ(s.step, 1u);
}

TEST(Adam, ZeroGradientIsANoOp) {
  CounterRng rng(1);
  Parameter<double> p("p", Tensor<double>::uniform(Shape{7}, rng, -1, 1));
  const auto before = p.value;
  AdamState<double> s;
  for (int i = 0; i < 5; ++i) adam_step<double>({&p}, s, 0.01);
  EXPECT_EQ(p.value, before);
}

TEST(Adam, MatchesIndependentOracleOnQuadratic) {
  CounterRng rng(2);
  const auto target = Tensor<double>::uniform(Shape{5}, rng, -1, 1);
  const auto curv = Tensor<double>::uniform(Shape{5}, rng, 0.5, 3);
  Parameter<double> p("p", Tensor<double>::uniform(Shape{5}, rng, -1, 1));
  std::vector<double> q(p.value.data().begin(), p.value.data().end());
  AdamState<double> s;
  OracleAdam o;
  for (int step = 0; step < 5; ++step) {
    std::vector<double> g(5);
    for (std::size_t i = 0; i < 5; ++i) {
      p.grad[i] = curv[i] * (p.value[i] - target[i]);
      g[i] = curv[i] * (q[i] - target[i]);
    }
    adam_step<double>({&p}, s, 0.05);
    o.step(q, g, 0.05);
  }
  for (std::size_t i = 0; i < 5; ++i) EXPECT_NEAR(p.value[i], q[i], 1e-10);
}

TEST(Adam, NonFiniteGradientAbortsBeforeUpdating) {
  Parameter<double> a("a", Tensor<double>::scalar(1.0)), b("b", Tensor<double>::scalar(2.0));
  a.grad[0] = 1.0;
  b.grad[0] = std::numeric_limits<double>::quiet_NaN();
  AdamState<double> s;
  EXPECT_THROW(adam_step<double>({&a, &b}, s, 0.1), NumericError);
  EXPECT_EQ(a.value[0], 1.0);
  EXPECT_EQ(s.step, 0u);
}

TEST(Adam, MomentShapesFollowParameters) {
  Parameter<float> a("a", Tensor<float>(Shape{2, 3})), b("b", Tensor<float>(Shape{4}));
  AdamState<float> s;
  adam_step<float>({&a, &b}, s, 0.1f);
  ASSERT_EQ(s.m.size(), 2u);
  EXPECT_EQ(s.m[0].shape(), a.value.shape());
  EXPECT_EQ(s.v[1].shape(), b.value.shape());
  EXPECT_THROW(adam_step<float>({&a}, s, 0.1f), ContractError);
}

TEST(Schedule, HalvesAtFixedIntervals) {
  TrainConfig cfg;
  EXPECT_DOUBLE_EQ(lr_at(0, cfg), 0.001);
  EXPECT_DOUBLE_EQ(lr_at(cfg.lr_halve_every - 1, cfg), 0.001);
  EXPECT_DOUBLE_EQ(lr_at(cfg.lr_halve_every, cfg), 0.0005);
  cfg.lr_halve_every = 750'000;
  EXPECT_DOUBLE_EQ(lr_at(2'900'000, cfg), 0.000125);
  for (std::size_t it = 1; it < 5'000'000; it += 12'345) EXPECT_LE(lr_at(it, cfg), lr_at(it - 1, cfg));
}

TEST(Schedule, DefaultIncrementalIterations) { EXPECT_EQ(TrainConfig{}.incremental_iterations, 3000u); }

TEST(Minibatch, DeterministicForAFreshGenerator) {
  const auto pool = contents();
  CounterRng r1(9), r2(9);
  const auto a = sample_minibatch(r1, pool, 4, 5, 8, GeoMode::sample1);
  const auto b = sample_minibatch(r2, pool, 4, 5, 8, GeoMode::sample1);
  EXPECT_EQ(a.styles, b.styles);
  for (std::size_t j = 0; j < 5; ++j) {
    EXPECT_EQ(a.contents[j], b.contents[j]);
    EXPECT_EQ(a.contents[j].shape(), (Shape{3, 8, 8}));
    EXPECT_EQ(a.transforms[j], b.transforms[j]);
    ASSERT_EQ(a.transforms[j].size(), 1u);
    EXPECT_NE(a.transforms[j][0], DihedralTransform::identity());
  }
}

TEST(Minibatch, SingleStyleAndAllTransforms) {
  CounterRng rng(3);
  const auto mb = sample_minibatch(rng, contents(1), 1, 1, 8, GeoMode::all8);
  EXPECT_EQ(mb.styles, std::vector<std::size_t>{0});
  EXPECT_EQ(mb.transforms[0].size(), 7u);
}

TEST(Minibatch, CropsAreWindowsOfTheSource) {
  const auto pool = contents(1);
  CounterRng rng(4);
  const auto mb = sample_minibatch(rng, pool, 1, 20, 8, GeoMode::sample1);
  for (const auto& c : mb.contents) {
    bool found = false;
    for (std::size_t y = 0; y + 8 <= 12 && !found; ++y)
      for (std::size_t x = 0; x + 8 <= 12 && !found; ++x) found = crop(pool[0], y, x, 8, 8) == c;
    EXPECT_TRUE(found);
  }
}

TEST(Minibatch, StyleIndicesAreUniform) {
  const std::vector<Tensor<float>> pool{Tensor<float>(Shape{3, 4, 4})};
  CounterRng rng(5);
  const std::size_t K = 5, draws = 10'000;
  std::vector<std::size_t> counts(K);
  for (std::size_t i = 0; i < draws / 500; ++i) {
    for (auto y : sample_minibatch(rng, pool, K, 500, 4, GeoMode::sample1).styles) ++counts[y];
  }
  const double p = 1.0 / K, expect = draws * p, sigma = std::sqrt(draws * p * (1 - p));
  for (auto c : counts) EXPECT_LT(std::abs(static_cast<double>(c) - expect), 3 * sigma);
}

TEST(Minibatch, EmptyPoolsAreErrors) {
  CounterRng rng(1);
  EXPECT_THROW(sample_minibatch<float>(rng, {}, 2, 1, 8, GeoMode::sample1), ContractError);
  EXPECT_THROW(sample_minibatch(rng, contents(1), 0, 1, 8, GeoMode::sample1), ContractError);
  EXPECT_THROW(sample_minibatch(rng, contents(1), 1, 1, 16, GeoMode::sample1), ShapeError);
}

class TrainTest : public ::testing::Test {
 protected:
  FeatureBackbone<float> bb = FeatureBackbone<float>::test_backbone();
  std::vector<Tensor<float>> pool = contents();
  std::vector<NamedImage<float>> style_set = styles(2);
};

TEST_F(TrainTest, ZeroIterationsChangeNothing) {
  auto cfg = tiny_train();
  cfg.iterations = 0;
  auto model = SamstModel<float>::initialize(tiny_config(), 1);
  const auto initial = model;
  auto cb = initial_codebook(style_set, 16);
  const auto cb0 = cb;
  const auto report = train_general(cfg, pool, style_set, model, cb, bb);
  EXPECT_TRUE(report.records.empty());
  EXPECT_TRUE(same_weights(model, initial));
  EXPECT_EQ(cb, cb0);
}

TEST_F(TrainTest, UpdatesWeightsStylesAndIdentityAndLogsEachIteration) {
  const auto cfg = tiny_train();
  auto model = SamstModel<float>::initialize(tiny_config(), 1);
  const auto initial = model;
  auto cb = initial_codebook(style_set, 16);
  const auto cb0 = cb;
  std::vector<std::size_t> checkpoints;
  std::size_t logged = 0;
  TrainHooks<float> hooks;
  hooks.on_iteration = [&](const IterationRecord&) { ++logged; };
  hooks.on_checkpoint = [&](std::size_t done, const SamstModel<float>& m, const StyleCodebook& c) {
    checkpoints.push_back(done);
    EXPECT_EQ(c.fingerprint(), model_fingerprint(m));
  };
  const auto report = train_general(cfg, pool, style_set, model, cb, bb, hooks);
  ASSERT_EQ(report.records.size(), cfg.iterations);
  EXPECT_EQ(logged, cfg.iterations);
  EXPECT_EQ(checkpoints, (std::vector<std::size_t>{3, 6}));
  for (std::size_t i = 0; i < report.records.size(); ++i) {
    EXPECT_EQ(report.records[i].iteration, i);
    EXPECT_GT(report.records[i].total, 0.0);
    EXPECT_GT(report.records[i].reconstruction, 0.0);
  }
  EXPECT_FALSE(same_weights(model, initial));
  EXPECT_NE(cb.identity().values, cb0.identity().values);
  EXPECT_NE(cb.at("style0").values, cb0.at("style0").values);
  EXPECT_NE(cb.at("style1").values, cb0.at("style1").values);
  EXPECT_EQ(report.final_digest, model_fingerprint(model));
  EXPECT_EQ(cb.fingerprint(), report.final_digest);
}

TEST_F(TrainTest, SameSeedGivesBitIdenticalResults) {
  const auto cfg = tiny_train();
  auto m1 = SamstModel<float>::initialize(tiny_config(), 1);
  auto m2 = m1;
  auto c1 = initial_codebook(style_set, 16), c2 = c1;
  const auto r1 = train_general(cfg, pool, style_set, m1, c1, bb);
  const auto r2 = train_general(cfg, pool, style_set, m2, c2, bb);
  EXPECT_TRUE(same_weights(m1, m2));
  EXPECT_EQ(c1, c2);
  for (std::size_t i = 0; i < r1.records.size(); ++i) EXPECT_EQ(r1.records[i].total, r2.records[i].total);
}

TEST_F(TrainTest, ReportedLossMatchesReevaluationAtCheckpoint) {
  const auto cfg = tiny_train();
  auto model = SamstModel<float>::initialize(tiny_config(), 2);
  auto cb = initial_codebook(style_set, 16);
  std::optional<SamstModel<float>> saved_model;
  std::optional<StyleCodebook> saved_cb;
  TrainHooks<float> hooks;
  hooks.on_checkpoint = [&](std::size_t done, const SamstModel<float>& m, const StyleCodebook& c) {
    if (done == 3) saved_model = m, saved_cb = c;
  };
  const auto report = train_general(cfg, pool, style_set, model, cb, bb, hooks);
  ASSERT_TRUE(saved_model);
  const auto stats = style_statistics(bb, style_set, cfg.style_size);
  Tape<float> tape(false);
  const auto bound = saved_model->bind_frozen(tape);
  std::vector<Var<float>> reps;
  for (const auto& s : style_set) reps.push_back(tape.constant(SamstModel<float>::rep_tensor(saved_cb->at(s.id))));
  const auto id = tape.constant(SamstModel<float>::rep_tensor(saved_cb->identity()));
  const auto terms = evaluate_iteration<float>(tape, *saved_model, bb, pool, stats, reps, id, bound, cfg, 3);
  EXPECT_NEAR(terms.total.value()[0], report.records[3].total, 1e-4 * report.records[3].total);
}

TEST_F(TrainTest, BackboneIsNeverUpdated) {
  const auto before = bb.layers();
  auto model = SamstModel<float>::initialize(tiny_config(), 3);
  auto cb = initial_codebook(style_set, 16);
  train_general(tiny_train(), pool, style_set, model, cb, bb);
  ASSERT_EQ(before.size(), bb.layers().size());
  for (std::size_t i = 0; i < before.size(); ++i) {
    EXPECT_EQ(before[i].weight, bb.layers()[i].weight);
    EXPECT_EQ(before[i].bias, bb.layers()[i].bias);
  }
}

TEST_F(TrainTest, DivergenceRestoresLastCheckpoint) {
  auto cfg = tiny_train();
  cfg.lr0 = 1e30;
  cfg.checkpoint_every = 100;
  auto model = SamstModel<float>::initialize(tiny_config(), 4);
  const auto initial = model;
  auto cb = initial_codebook(style_set, 16);
  const auto cb0 = cb;
  EXPECT_THROW(train_general(cfg, pool, style_set, model, cb, bb), NumericError);
  EXPECT_TRUE(same_weights(model, initial));
  EXPECT_EQ(cb, cb0);
}

TEST_F(TrainTest, IncrementalLeavesNetworkAndOldStylesUntouched) {
  auto model = SamstModel<float>::initialize(tiny_config(), 5);
  auto cb = initial_codebook(style_set, 16);
  train_general(tiny_train(), pool, style_set, model, cb, bb);
  const auto frozen = model;
  const auto probe = synthetic::content<float>(CounterRng(77), 8, 8);
  std::vector<Tensor<float>> before;
  for (const auto& e : cb.entries()) before.push_back(model.stylize(probe, e));

  const auto added = styles(2, 90);
  std::vector<NamedImage<float>> renamed{{"new0", "New 0", added[0].image}, {"new1", "New 1", added[1].image}};
  const auto result = train_incremental(tiny_train(), pool, renamed, model, cb, bb);
  EXPECT_TRUE(same_weights(model, frozen));
  ASSERT_EQ(result.codebook.size(), cb.size() + 2);
  EXPECT_EQ(result.codebook.identity(), cb.identity());
  for (std::size_t i = 0; i < cb.size(); ++i) {
    EXPECT_EQ(result.codebook.entries()[i], cb.entries()[i]);
    EXPECT_EQ(model.stylize(probe, result.codebook.entries()[i]), before[i]);
  }
  EXPECT_EQ(result.codebook.fingerprint(), cb.fingerprint());
  EXPECT_NE(result.codebook.at("new0").values, StyleRepresentation::ones("x", "x").values);
  EXPECT_EQ(result.report.records.size(), 2 * tiny_train().incremental_iterations);
  ASSERT_EQ(result.report.styles.size(), 2u);
  EXPECT_EQ(result.report.styles[1].id, "new1");
}

TEST_F(TrainTest, IncrementalIsRepeatableForTheSameImage) {
  auto model = SamstModel<float>::initialize(tiny_config(), 6);
  const auto cb = initial_codebook(style_set, 16);
  const auto img = styles(1, 123)[0].image;
  const auto result = train_incremental(tiny_train(), pool, {{"a", "A", img}, {"b", "B", img}}, model, cb, bb);
  const auto& a = result.codebook.at("a").values;
  const auto& b = result.codebook.at("b").values;
  for (std::size_t k = 0; k < a.size(); ++k) EXPECT_NEAR(a[k], b[k], 1e-3);
}

TEST_F(TrainTest, IncrementalRejectsIdCollisionsBeforeTraining) {
  auto model = SamstModel<float>::initialize(tiny_config(), 6);
  const auto cb = initial_codebook(style_set, 16);
  std::size_t iterations = 0;
  TrainHooks<float> hooks;
  hooks.on_iteration = [&](const IterationRecord&) { ++iterations; };
  const auto img = style_set[0].image;
  EXPECT_THROW(train_incremental(tiny_train(), pool, {{"style0", "dup", img}}, model, cb, bb, hooks), CodebookError);
  EXPECT_THROW(train_incremental(tiny_train(), pool, {{"n", "n", img}, {"n", "m", img}}, model, cb, bb, hooks),
               CodebookError);
  EXPECT_THROW(train_incremental(tiny_train(), pool, {{"identity", "i", img}}, model, cb, bb, hooks), CodebookError);
  EXPECT_EQ(iterations, 0u);
}

TEST(IterationRecord, SerializesAllFields) {
  IterationRecord r{12, "", 0.001, 5, 1, 2, 3, 4, 99.5};
  const nlohmann::json j = r;
  EXPECT_EQ(j.at("iteration"), 12);
  EXPECT_EQ(j.at("wall_ms"), 99.5);
  EXPECT_EQ(j.at("reconstruction"), 3);
  EXPECT_FALSE(j.contains("style_id"));
}
