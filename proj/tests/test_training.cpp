#include "oracle.hpp"

#include "ralb/errors.hpp"
#include "ralb/training.hpp"

#include <gtest/gtest.h>

#include <json.hpp>

#include <cmath>
#include <numbers>
#include <sstream>

using namespace ralb;
using namespace ralb::train;

namespace {

// Random images, labels cycling over 3 classes, short captions over ids 3..15.
TrainingData toy_data(std::uint64_t seed, int n, const EncoderConfig& c) {
  TrainingData d;
  Rng rng(seed);
  d.images.resize(n, c.image_size());
  for (Eigen::Index i = 0; i < d.images.size(); ++i) d.images.data()[i] = rng.uniform();
  for (int i = 0; i < n; ++i) {
    d.labels.push_back(i % 3);
    d.captions.push_back({{1, 3 + i % 13, 3 + (i * 7) % 13, 2}});
  }
  for (int k = 0; k < 3; ++k) d.class_templates.push_back({{1, 3 + k, 2}});
  return d;
}

TrainConfig tiny(Method m) {
  TrainConfig c = TrainConfig::desk(m);
  c.epochs = 1;
  c.batch_size = 4;
  c.lr0 = 1e-3f;
  c.attack.steps = 2;
  c.seed = 5;
  return c;
}

std::vector<std::size_t> first(std::size_t k) {
  std::vector<std::size_t> v(k);
  for (std::size_t i = 0; i < k; ++i) v[i] = i;
  return v;
}

}  // namespace

TEST(CosineLr, Examples) {
  EXPECT_FLOAT_EQ(cosine_lr(0, 10, 0.1f), 0.1f);
  EXPECT_NEAR(cosine_lr(10, 10, 0.1f), 0.0f, 1e-9f);
  EXPECT_NEAR(cosine_lr(5, 10, 0.1f), 0.05f, 1e-8f);
  EXPECT_NEAR(cosine_lr(1, 4, 2.0f), 2.0 * 0.5 * (1 + std::cos(std::numbers::pi / 4)), 1e-6);
}

TEST(CosineLr, Errors) {
  EXPECT_THROW(cosine_lr(-1, 10, 0.1f), ArgumentError);
  EXPECT_THROW(cosine_lr(11, 10, 0.1f), ArgumentError);
  EXPECT_THROW(cosine_lr(0, 0, 0.1f), ArgumentError);
}

TEST(CosineLr, NonIncreasing) {
  float prev = cosine_lr(0, 37, 1.0f);
  for (long s = 1; s <= 37; ++s) {
    const float v = cosine_lr(s, 37, 1.0f);
    EXPECT_LE(v, prev);
    prev = v;
  }
}

TEST(StepsPerEpoch, FullBatchesOnly) {
  EXPECT_EQ(steps_per_epoch(10, 4), 2);
  EXPECT_EQ(steps_per_epoch(3, 4), 0);
  EXPECT_EQ(steps_per_epoch(8, 4), 2);
}

TEST(TrainConfig, FullScalePresetAndValidation) {
  const auto p = TrainConfig::full_scale(Method::QTAFT);
  EXPECT_EQ(p.epochs, 2);
  EXPECT_EQ(p.batch_size, 128);
  EXPECT_FLOAT_EQ(p.lr0, 1e-5f);
  EXPECT_FLOAT_EQ(p.weight_decay, 1e-4f);
  EXPECT_FLOAT_EQ(p.lambda, 10.0f);
  EXPECT_EQ(p.attack.steps, 10);
  EXPECT_FLOAT_EQ(p.attack.epsilon, 4.0f / 255.0f);
  EXPECT_FLOAT_EQ(p.attack.step_size, 1.0f / 255.0f);
  const auto d = TrainConfig::desk(Method::FARE);
  EXPECT_EQ(d.epochs, 10);
  EXPECT_EQ(d.batch_size, 64);
  EXPECT_FLOAT_EQ(d.lr0, 1e-4f);

  auto c = tiny(Method::QTAFT);
  c.batch_size = 1;
  EXPECT_THROW(c.validate(), ConfigError);
  c = tiny(Method::TeCoA);
  c.batch_size = 1;
  EXPECT_NO_THROW(c.validate());
  c.lr0 = 0.0f;
  EXPECT_THROW(c.validate(), ConfigError);
  c = tiny(Method::FARE);
  c.epochs = 0;
  EXPECT_THROW(c.validate(), ConfigError);
}

TEST(TrainConfig, MethodNames) {
  for (Method m : {Method::QTAFT, Method::QTAFTLabel, Method::FARE, Method::TeCoA, Method::CleanPretrain})
    EXPECT_EQ(parse_method(method_name(m)), m);
  EXPECT_THROW(parse_method("pmg-aft"), ArgumentError);
}

TEST(Train, ZeroStepsReturnsInputTheta) {
  const auto st = snapshot(init_model(oracle::small_config(), 1));
  const auto d = toy_data(2, 3, st.config);
  const auto r = train::train(st, d, tiny(Method::QTAFT));
  EXPECT_EQ(r.state.theta, st.theta);
  EXPECT_TRUE(r.log.empty());
}

TEST(Train, FareAtIdentityHasZeroOuterLoss) {
  const auto st = snapshot(init_model(oracle::small_config(), 1));
  const auto d = toy_data(2, 12, st.config);
  auto c = tiny(Method::FARE);
  c.attack.steps = 0;
  c.attack.epsilon = 0.0f;
  c.weight_decay = 0.0f;
  const auto r = train::train(st, d, c);
  ASSERT_EQ(r.log.size(), 3u);
  for (const auto& rec : r.log) EXPECT_EQ(rec.outer_loss, 0.0f);
  EXPECT_EQ(r.state.theta, st.theta);
}

TEST(Train, AdversarialNeedsSnapshotAndCaptions) {
  const auto raw = init_model(oracle::small_config(), 1);
  auto d = toy_data(2, 8, raw.config);
  EXPECT_THROW(train::train(raw, d, tiny(Method::FARE)), StateError);
  d.captions.clear();
  EXPECT_THROW(train::train(snapshot(raw), d, tiny(Method::QTAFT)), ArgumentError);
  EXPECT_NO_THROW(train::train(snapshot(raw), d, tiny(Method::FARE)));
  d.class_templates.clear();
  EXPECT_THROW(train::train(snapshot(raw), d, tiny(Method::TeCoA)), ArgumentError);
}

TEST(Train, FrozenWeightsStayBitwiseUnchanged) {
  const auto st = snapshot(init_model(oracle::small_config(), 3));
  const auto d = toy_data(4, 12, st.config);
  for (Method m : {Method::QTAFT, Method::QTAFTLabel, Method::FARE, Method::TeCoA}) {
    const auto r = train::train(st, d, tiny(m));
    SCOPED_TRACE(method_name(m));
    EXPECT_EQ(*r.state.theta_orig, *st.theta_orig);
    EXPECT_EQ(r.state.phi, st.phi);
    EXPECT_EQ(r.state.temperature.log_tau(), st.temperature.log_tau());
    EXPECT_FALSE(r.state.theta == st.theta);
    EXPECT_TRUE(r.state.finetune_started);
  }
}

TEST(Train, ZeroLearningRateLeavesThetaUnchanged) {
  auto st = snapshot(init_model(oracle::small_config(), 3));
  const auto d = toy_data(4, 8, st.config);
  const VisionParams before = st.theta;
  const Matrix x_adv = (d.images.topRows(4).array() + 0.01f).min(1.0f);
  fit_fixed_batch(st, d, tiny(Method::QTAFT), x_adv, first(4), 20, 0.0f);
  EXPECT_EQ(st.theta, before);
}

TEST(Train, SeededDeterminism) {
  const auto st = snapshot(init_model(oracle::small_config(), 3));
  const auto d = toy_data(4, 12, st.config);
  const auto a = train::train(st, d, tiny(Method::QTAFT));
  const auto b = train::train(st, d, tiny(Method::QTAFT));
  EXPECT_EQ(a.state.theta, b.state.theta);
  auto c = tiny(Method::QTAFT);
  c.seed = 6;
  EXPECT_FALSE(train::train(st, d, c).state.theta == a.state.theta);
}

TEST(Train, LogHasOneRecordPerStep) {
  const auto st = snapshot(init_model(oracle::small_config(), 3));
  const auto d = toy_data(4, 10, st.config);
  auto c = tiny(Method::TeCoA);
  c.epochs = 2;
  const auto r = train::train(st, d, c);
  ASSERT_EQ(r.log.size(), 4u);
  for (std::size_t i = 0; i < r.log.size(); ++i) {
    EXPECT_EQ(r.log[i].step, static_cast<long>(i));
    EXPECT_FLOAT_EQ(r.log[i].lr, cosine_lr(static_cast<long>(i), 4, c.lr0));
    EXPECT_GE(r.log[i].inner_objective, 0.0f);
  }
  std::istringstream lines(train_log_jsonl(r.log));
  std::string line;
  int count = 0;
  while (std::getline(lines, line)) {
    const auto j = nlohmann::json::parse(line);
    EXPECT_EQ(j.at("step").get<long>(), count++);
    EXPECT_TRUE(j.contains("outer_loss"));
    EXPECT_TRUE(j.contains("wall_time"));
  }
  EXPECT_EQ(count, 4);
}

TEST(Train, SingleBatchOverfitDecreasesMonotonically) {
  auto st = snapshot(init_model(oracle::small_config(), 8));
  const auto d = toy_data(9, 8, st.config);
  auto c = tiny(Method::QTAFT);
  c.weight_decay = 0.0f;
  auto spec = c.attack;
  spec.objective = {attack::ObjectiveKind::QTAFT, c.lambda};
  attack::SideData side;
  std::vector<TokenSequence> caps(d.captions.begin(), d.captions.begin() + 8);
  side.caption_embs = encode_texts(st, caps).emb;
  const Matrix x = d.images.topRows(8);
  const Matrix x_adv = attack::pgd_attack(st, x, side, spec, 1).perturbed;
  const auto losses = fit_fixed_batch(st, d, c, x_adv, first(8), 50, 1e-3f);
  ASSERT_EQ(losses.size(), 50u);
  for (std::size_t i = 1; i < losses.size(); ++i) EXPECT_LT(losses[i], losses[i - 1]) << "step " << i;
  EXPECT_FLOAT_EQ(losses.front(), outer_loss(snapshot(init_model(oracle::small_config(), 8)), d, c, x_adv, first(8)));
}

TEST(Train, CleanPretrainMovesEveryParameterGroup) {
  const auto st = init_model(oracle::small_config(), 2);
  const auto d = toy_data(3, 8, st.config);
  auto c = tiny(Method::CleanPretrain);
  c.epochs = 3;
  const auto r = train::train(st, d, c);
  EXPECT_FALSE(r.state.theta == st.theta);
  EXPECT_FALSE(r.state.phi == st.phi);
  EXPECT_NE(r.state.temperature.log_tau(), st.temperature.log_tau());
  EXPECT_FALSE(r.state.finetune_started);
  for (const auto& rec : r.log) EXPECT_EQ(rec.inner_objective, 0.0f);
}

TEST(Train, QtAftWithZeroLambdaMatchesFareOuterLoss) {
  const auto st = snapshot(init_model(oracle::small_config(), 8));
  const auto d = toy_data(9, 8, st.config);
  auto q = tiny(Method::QTAFT);
  q.lambda = 0.0f;
  const Matrix x_adv = (d.images.topRows(4).array() - 0.02f).max(0.0f);
  EXPECT_FLOAT_EQ(outer_loss(st, d, q, x_adv, first(4)), outer_loss(st, d, tiny(Method::FARE), x_adv, first(4)));
}

TEST(LambdaSweep, SingletonMatchesDirectRunAndEmptyIsError) {
  const auto st = snapshot(init_model(oracle::small_config(), 8));
  const auto d = toy_data(9, 8, st.config);
  Vocabulary vocab = Vocabulary::build({"a photo of circle square triangle"});
  eval::EvalDataset es;
  es.name = "toy";
  es.class_names = {"circle", "square", "triangle"};
  es.images = d.images;
  es.labels = d.labels;
  auto plan = eval::attack_preset("pgd10-ce");
  plan.specs[0].steps = 2;
  auto c = tiny(Method::QTAFT);
  c.lambda = 10.0f;

  EXPECT_THROW(lambda_sweep(st, d, {}, c, vocab, es, plan, {}), ArgumentError);
  EXPECT_THROW(lambda_sweep(st, d, {-1.0f}, c, vocab, es, plan, {}), ArgumentError);

  // Sweep state must fit the vocabulary's ids; toy captions only use ids below 16.
  const auto rows = lambda_sweep(st, d, {10.0f}, c, vocab, es, plan, {});
  ASSERT_EQ(rows.size(), 1u);
  const auto direct = train::train(st, d, c).state;
  const Matrix t = eval::template_embeddings(direct, vocab, es.class_names);
  EXPECT_EQ(rows[0].lambda, 10.0f);
  EXPECT_EQ(rows[0].clean_accuracy, eval::eval_clean(direct, es.images, es.labels, t));
  EXPECT_EQ(rows[0].robust_accuracy, eval::eval_robust(direct, es.images, es.labels, t, plan, {}).accuracy);
}
