#include "oracle.hpp"

#include "ralb/errors.hpp"
#include "ralb/evaluation.hpp"

#include <gtest/gtest.h>

#include <json.hpp>

#include <cmath>

using namespace ralb;
using namespace ralb::eval;

namespace {

const std::vector<std::string> kClasses{"circle", "square", "triangle"};

Vocabulary vocab() { return Vocabulary::build({"a photo of circle square triangle star"}); }

Matrix random_images(std::uint64_t seed, int n, const EncoderConfig& c) {
  Rng rng(seed);
  Matrix m(n, c.image_size());
  for (Eigen::Index i = 0; i < m.size(); ++i) m.data()[i] = rng.uniform();
  return m;
}

std::vector<std::int32_t> random_labels(std::uint64_t seed, int n, int k) {
  Rng rng(seed);
  std::vector<std::int32_t> y(static_cast<std::size_t>(n));
  for (auto& v : y) v = static_cast<std::int32_t>(rng.below(static_cast<std::size_t>(k)));
  return y;
}

AttackPlan short_plan(const std::string& name, std::optional<float> eps = std::nullopt) {
  auto p = attack_preset(name, eps);
  for (auto& s : p.specs) s.steps = 3;
  return p;
}

}  // namespace

TEST(EvalClean, PerfectWhenTemplatesAreTheImageEmbeddings) {
  const auto st = init_model(oracle::small_config(), 2);
  const Matrix x = random_images(1, 3, st.config);
  const Matrix t = encode_images(st, x).emb;
  EXPECT_EQ(eval_clean(st, x, {0, 1, 2}, t), 1.0);
}

TEST(EvalClean, RandomLabelsGiveChanceAccuracy) {
  const auto st = init_model(oracle::small_config(), 2);
  constexpr int n = 3000, k = 4;
  Rng rng(3);
  Matrix t(k, st.config.embed_dim);
  for (Eigen::Index i = 0; i < t.size(); ++i) t.data()[i] = static_cast<float>(rng.normal());
  t.rowwise().normalize();
  const double acc = eval_clean(st, random_images(4, n, st.config), random_labels(5, n, k), t);
  const double sigma = std::sqrt(0.25 * 0.75 / n);
  EXPECT_NEAR(acc, 0.25, 3 * sigma);
}

TEST(EvalClean, Errors) {
  const auto st = init_model(oracle::small_config(), 2);
  const Matrix t = template_embeddings(st, vocab(), kClasses);
  EXPECT_THROW(eval_clean(st, Matrix(0, st.config.image_size()), {}, t), ArgumentError);
  const Matrix x = random_images(1, 2, st.config);
  EXPECT_THROW(eval_clean(st, x, {0}, t), ArgumentError);
  EXPECT_THROW(eval_clean(st, x, {0, 3}, t), ArgumentError);
  EXPECT_THROW(eval_robust(st, x, {0, 1}, t, AttackPlan{"none", {}}), ArgumentError);
  EXPECT_THROW(attack_preset("autoattack"), ArgumentError);
}

TEST(EvalRobust, ZeroBudgetEqualsClean) {
  const auto st = init_model(oracle::small_config(), 6);
  const Matrix x = random_images(7, 40, st.config);
  const auto y = random_labels(8, 40, 3);
  const Matrix t = template_embeddings(st, vocab(), kClasses);
  for (const auto& name : attack_preset_names()) {
    const auto r = eval_robust(st, x, y, t, short_plan(name, 0.0f));
    EXPECT_EQ(r.accuracy, eval_clean(st, x, y, t)) << name;
    EXPECT_EQ(r.accuracy, r.clean_accuracy);
  }
}

TEST(EvalRobust, EnsembleIsPerSampleUnion) {
  const auto st = init_model(oracle::small_config(), 6);
  const Matrix x = random_images(7, 60, st.config);
  const Matrix t = template_embeddings(st, vocab(), kClasses);
  const auto y = attack::predict(st, x, t);
  RobustOptions o;
  o.seed = 4;
  const auto ce = eval_robust(st, x, y, t, short_plan("pgd10-ce", 2.0f / 255), o);
  const auto dlr = eval_robust(st, x, y, t, short_plan("pgd10-dlr", 2.0f / 255), o);
  const auto ens = eval_robust(st, x, y, t, short_plan("ensemble", 2.0f / 255), o);
  EXPECT_LE(ens.accuracy, ce.accuracy);
  EXPECT_LE(ens.accuracy, dlr.accuracy);
  for (std::size_t i = 0; i < y.size(); ++i)
    EXPECT_EQ(ens.robust_correct[i], ce.robust_correct[i] && dlr.robust_correct[i]) << i;
}

TEST(EvalRobust, SubsampleIsSeeded) {
  const auto st = init_model(oracle::small_config(), 6);
  const Matrix x = random_images(7, 50, st.config);
  const auto y = random_labels(8, 50, 3);
  const Matrix t = template_embeddings(st, vocab(), kClasses);
  RobustOptions o;
  o.seed = 11;
  o.subsample = 20;
  const auto a = eval_robust(st, x, y, t, short_plan("pgd10-ce"), o);
  const auto b = eval_robust(st, x, y, t, short_plan("pgd10-ce"), o);
  EXPECT_EQ(a.accuracy, b.accuracy);
  EXPECT_EQ(a.indices, b.indices);
  EXPECT_EQ(a.indices.size(), 20u);
  EXPECT_TRUE(std::is_sorted(a.indices.begin(), a.indices.end()));
  EXPECT_EQ(draw_subsample(50, 20, 11), a.indices);
  EXPECT_NE(draw_subsample(50, 20, 12), a.indices);
  EXPECT_EQ(draw_subsample(5, 9, 1).size(), 5u);
}

TEST(EvalRobust, WorkerCountDoesNotChangeResults) {
  const auto st = init_model(oracle::small_config(), 6);
  const Matrix x = random_images(7, 45, st.config);
  const auto y = random_labels(8, 45, 3);
  const Matrix t = template_embeddings(st, vocab(), kClasses);
  RobustOptions o;
  o.chunk = 8;
  const auto serial = eval_robust(st, x, y, t, short_plan("ensemble"), o);
  o.workers = 4;
  const auto par = eval_robust(st, x, y, t, short_plan("ensemble"), o);
  EXPECT_EQ(serial.robust_correct, par.robust_correct);
  EXPECT_EQ(serial.accuracy, par.accuracy);
}

TEST(EvalRobust, AccuraciesAreFractions) {
  const auto st = init_model(oracle::small_config(), 9);
  const Matrix x = random_images(1, 30, st.config);
  const auto y = random_labels(2, 30, 3);
  const Matrix t = template_embeddings(st, vocab(), kClasses);
  const auto r = eval_robust(st, x, y, t, short_plan("cw"));
  EXPECT_GE(r.accuracy, 0.0);
  EXPECT_LE(r.accuracy, 1.0);
  std::size_t hits = 0;
  for (bool b : r.robust_correct) hits += b;
  EXPECT_EQ(r.accuracy, static_cast<double>(hits) / 30.0);
  for (std::size_t i = 0; i < 30; ++i)
    if (r.robust_correct[i]) EXPECT_TRUE(r.clean_correct[i]);
}

TEST(CompareMethods, SingletonMatchesDirectCalls) {
  const auto st = init_model(oracle::small_config(), 6);
  EvalDataset ds{"toy", kClasses, random_images(7, 20, st.config), random_labels(8, 20, 3), false};
  const auto plan = short_plan("pgd10-ce");
  RobustOptions o;
  o.seed = 3;
  const auto rep = compare_methods({{"m", st}}, vocab(), {ds}, {plan}, o);
  ASSERT_EQ(rep.rows.size(), 1u);
  const Matrix t = template_embeddings(st, vocab(), kClasses);
  EXPECT_EQ(rep.at("m", "toy", "pgd10-ce").clean_accuracy, eval_clean(st, ds.images, ds.labels, t));
  EXPECT_EQ(rep.rows[0].robust_accuracy, eval_robust(st, ds.images, ds.labels, t, plan, o).accuracy);
  EXPECT_EQ(rep.rows[0].n, 20u);
  EXPECT_EQ(rep.rows[0].seed, 3u);
  EXPECT_THROW(rep.at("m", "toy", "cw"), ArgumentError);
}

TEST(CompareMethods, SortedRowsAveragesAndSerialization) {
  const auto a = init_model(oracle::small_config(), 6);
  const auto b = init_model(oracle::small_config(), 7);
  EvalDataset held{"zz-held", kClasses, random_images(7, 12, a.config), random_labels(8, 12, 3), false};
  EvalDataset zs{"aa-zs", {"star", "circle"}, random_images(9, 12, a.config), random_labels(10, 12, 2), true};
  const auto rep = compare_methods({{"beta", b}, {"alpha", a}}, vocab(), {held, zs},
                                   {short_plan("pgd10-ce"), short_plan("cw")}, {});
  ASSERT_EQ(rep.rows.size(), 8u);
  EXPECT_EQ(rep.rows.front().method, "alpha");
  EXPECT_EQ(rep.rows.front().dataset, "aa-zs");
  EXPECT_EQ(rep.rows.front().attack, "cw");
  EXPECT_EQ(rep.rows.back().method, "beta");
  const auto& avg = rep.averages.at("alpha").at("cw");
  EXPECT_EQ(avg.clean_zero_shot, rep.at("alpha", "aa-zs", "cw").clean_accuracy);
  EXPECT_EQ(avg.robust_held_in, rep.at("alpha", "zz-held", "cw").robust_accuracy);

  const auto csv = rep.to_csv();
  EXPECT_EQ(csv.substr(0, csv.find('\n')), "method,dataset,zero_shot,attack,clean_acc,robust_acc,n,seed");
  EXPECT_EQ(std::count(csv.begin(), csv.end(), '\n'), 9);
  const auto j = nlohmann::json::parse(rep.to_json());
  EXPECT_EQ(j.at("rows").size(), 8u);
  EXPECT_TRUE(j.at("averages").contains("beta"));
}

TEST(CompareMethods, Errors) {
  const auto a = init_model(oracle::small_config(), 6);
  auto other = oracle::small_config();
  other.vision_hidden = 12;
  const auto b = init_model(other, 6);
  EvalDataset ds{"toy", kClasses, random_images(7, 4, a.config), random_labels(8, 4, 3), false};
  EXPECT_THROW(compare_methods({{"a", a}, {"b", b}}, vocab(), {ds}, {short_plan("cw")}, {}), ArgumentError);
  EXPECT_THROW(compare_methods({}, vocab(), {ds}, {short_plan("cw")}, {}), ArgumentError);
  EXPECT_THROW(compare_methods({{"a", a}}, vocab(), {}, {short_plan("cw")}, {}), ArgumentError);
}
