#include <gtest/gtest.h>

#include <cmath>

#include "support/fixtures.hpp"
#include "support/gradcheck.hpp"
#include "support/metric_oracles.hpp"
#include "uatmc/attack.hpp"
#include "uatmc/errors.hpp"
#include "uatmc/metrics.hpp"

namespace uatmc::attack {
namespace {

using testing::make_world;

AttackConfig cfg(Variant v, std::size_t k = 10) {
  AttackConfig c;
  c.variant = v;
  c.k = k;
  return c;
}

double loss_value(const model::ModelParams& p, const model::Content& c, const PromotionProblem& prob) {
  ad::Tape tape;
  AttackGraph g(tape, p, c);
  model::SlotDelta d{tape.constant(Tensor::zeros({1, p.dim_v()})), tape.constant(Tensor::zeros({1, p.dim_t()}))};
  return promotion_loss(g, prob, d).value().item();
}

TEST(Budget, Examples) {
  data::FeatureMatrix f{data::Modality::kVisual, Tensor::matrix(2, 2, {3, 4, 1, 0})};
  EXPECT_NEAR(resolve_budget(f, 0, 0.10), 0.5, 1e-15);
  EXPECT_EQ(resolve_budget(f, 1, 1.0), 1.0);
  double prev = 0.0;
  for (double pct : {0.025, 0.05, 0.075, 0.10}) {
    const double e = resolve_budget(f, 0, pct);
    EXPECT_GT(e, prev);
    prev = e;
  }
}

TEST(PromotionLoss, TiedMarginIsHalf) {
  std::vector<std::vector<double>> s{{1, 1, 0}};
  auto m = testing::score_model(s, data::InteractionTable::from_pairs(1, 3, {}));
  metrics::RankingCache cache(m.params, *m.content, 1);
  EXPECT_DOUBLE_EQ(loss_value(m.params, *m.content, make_problem(cache, 0, {0})), 0.5);
}

TEST(PromotionLoss, TwoUsersByHand) {
  std::vector<std::vector<double>> s{{1, 1, 0}, {std::log(3.0), 0, -1}};
  auto m = testing::score_model(s, data::InteractionTable::from_pairs(2, 3, {}));
  metrics::RankingCache cache(m.params, *m.content, 1);
  EXPECT_NEAR(loss_value(m.params, *m.content, make_problem(cache, 0, {0, 1})), 0.625, 1e-15);
}

TEST(PromotionLoss, SaturatesTowardOne) {
  std::vector<std::vector<double>> s{{1e3, 1, 0}};
  auto m = testing::score_model(s, data::InteractionTable::from_pairs(1, 3, {}));
  metrics::RankingCache cache(m.params, *m.content, 1);
  EXPECT_NEAR(loss_value(m.params, *m.content, make_problem(cache, 0, {0})), 1.0, 1e-15);
}

TEST(PromotionLoss, EmptyUsersRejected) {
  auto w = make_world(1);
  metrics::RankingCache cache(w.params, *w.content, 10);
  EXPECT_THROW(make_problem(cache, 0, {}), ContractError);
}

// One user whose only item has visual feature (3, 4); the target's feature has norm 10.
struct DirectionToy {
  model::ModelParams params;
  std::shared_ptr<const model::Content> content;
};

DirectionToy direction_toy(bool zero_text_projection) {
  auto t = data::InteractionTable::from_pairs(1, 3, {{0, 2}});
  data::FeatureMatrix v{data::Modality::kVisual, Tensor::matrix(3, 2, {6, 8, 1, 0, 3, 4})};
  data::FeatureMatrix tx{data::Modality::kTextual, Tensor::matrix(3, 2, {0, 10, 1, 1, 1, 2})};
  model::ModelConfig mc;
  mc.fusion = model::Fusion::kIdentity;
  mc.dim = 1;
  mc.fuse_dim = 2;
  DirectionToy toy;
  toy.params = model::init_params(mc, 1, 3, 2, 2, 0);
  toy.params.proj_v = Tensor::matrix(2, 2, {1, 0, 0, 1});
  toy.params.proj_t = zero_text_projection ? Tensor::zeros({2, 2}) : Tensor::matrix(2, 2, {1, 0, 0, 1});
  toy.content = model::build_content(model::Kind::kConcat, t, v, tx);
  return toy;
}

TEST(Fgsm, NormalisedDirection) {
  auto toy = direction_toy(false);
  metrics::RankingCache cache(toy.params, *toy.content, 1);
  AttackConfig c = cfg(Variant::kFgsm, 1);
  c.eps_pct = 0.1;
  auto r = fgsm_promote(toy.params, *toy.content, cache, 0, c);
  EXPECT_NEAR(r.perturbation.delta_v[0], 0.6, 1e-12);
  EXPECT_NEAR(r.perturbation.delta_v[1], 0.8, 1e-12);
  EXPECT_NEAR(l2_norm(r.perturbation.delta_v.data()), r.perturbation.eps_v, 1e-9);
  EXPECT_EQ(r.trace.records.size(), 1u);
}

TEST(Fgsm, ZeroGradientModalityStaysZero) {
  auto toy = direction_toy(true);
  metrics::RankingCache cache(toy.params, *toy.content, 1);
  auto r = fgsm_promote(toy.params, *toy.content, cache, 0, cfg(Variant::kFgsm, 1));
  EXPECT_TRUE(r.perturbation.zero_grad_t);
  EXPECT_FALSE(r.perturbation.zero_grad_v);
  EXPECT_EQ(l2_norm(r.perturbation.delta_t.data()), 0.0);
  EXPECT_NEAR(l2_norm(r.perturbation.delta_v.data()), r.perturbation.eps_v, 1e-9);
}

TEST(Fgsm, ZeroNormFeatureRowGivesNoOp) {
  auto w = make_world(2);
  auto v = w.data.visual;
  for (std::size_t k = 0; k < v.cols(); ++k) v.values.at(3, k) = 0.0;
  auto content = model::build_content(model::Kind::kConcat, w.split, v, w.data.textual);
  metrics::RankingCache cache(w.params, *content, 10);
  auto r = fgsm_promote(w.params, *content, cache, 3, cfg(Variant::kFgsm));
  EXPECT_TRUE(r.perturbation.zero_budget);
  EXPECT_EQ(l2_norm(r.perturbation.delta_v.data()), 0.0);
}

TEST(Fgsm, HitDoesNotDropOnFrozenModel) {
  auto w = make_world(3);
  auto targets = metrics::select_targets(w.data.table, 10, 5, metrics::PopularityMode::kExact, 1).items;
  auto campaign = run_campaign(w.params, *w.content, targets, cfg(Variant::kFgsm));
  EXPECT_GE(campaign.summary.mean_hit_after, campaign.summary.mean_hit_before);
}

TEST(Pgd, SingleStepLandsOnSphere) {
  auto w = make_world(4);
  metrics::RankingCache cache(w.params, *w.content, 10);
  AttackConfig c = cfg(Variant::kPgd);
  c.pgd_steps = 1;
  auto r = pgd_promote(w.params, *w.content, cache, 7, c);
  EXPECT_NEAR(l2_norm(r.perturbation.delta_v.data()), r.perturbation.eps_v, 1e-9);
  EXPECT_NEAR(l2_norm(r.perturbation.delta_t.data()), r.perturbation.eps_t, 1e-9);
}

TEST(Pgd, FeasibleForEveryStepCount) {
  auto w = make_world(5);
  metrics::RankingCache cache(w.params, *w.content, 10);
  for (std::size_t steps = 1; steps <= 12; ++steps) {
    AttackConfig c = cfg(Variant::kPgd);
    c.pgd_steps = steps;
    auto r = pgd_promote(w.params, *w.content, cache, 11, c);
    EXPECT_LE(l2_norm(r.perturbation.delta_v.data()), r.perturbation.eps_v + 1e-9);
    EXPECT_LE(l2_norm(r.perturbation.delta_t.data()), r.perturbation.eps_t + 1e-9);
    EXPECT_EQ(r.trace.records.size(), steps);
  }
}

TEST(Pgd, AtLeastAsStrongAsFgsmOnAverage) {
  auto w = make_world(6);
  auto targets = metrics::select_targets(w.data.table, 20, 5, metrics::PopularityMode::kExact, 2).items;
  ASSERT_GE(targets.size(), 20u);
  auto f = run_campaign(w.params, *w.content, targets, cfg(Variant::kFgsm));
  auto p = run_campaign(w.params, *w.content, targets, cfg(Variant::kPgd));
  double lf = 0, lp = 0;
  for (std::size_t k = 0; k < targets.size(); ++k) {
    lf += f.results[k].final_loss;
    lp += p.results[k].final_loss;
  }
  EXPECT_GE(lp, lf);
}

TEST(Pgd, MonotoneTraceForLinearSingleUser) {
  for (std::uint64_t seed = 10; seed < 15; ++seed) {
    auto w = make_world(seed, model::Kind::kConcat, model::Fusion::kIdentity);
    metrics::RankingCache cache(w.params, *w.content, 10);
    AttackConfig c = cfg(Variant::kPgd);
    c.pgd_steps = 15;
    c.users = std::vector<std::size_t>{0};
    auto r = pgd_promote(w.params, *w.content, cache, 20, c);
    for (std::size_t k = 1; k < r.trace.records.size(); ++k) {
      EXPECT_GE(r.trace.records[k].promotion_loss, r.trace.records[k - 1].promotion_loss - 1e-12);
    }
  }
}

TEST(Attack, FrozenModelAndDeterminism) {
  auto w = make_world(7);
  const auto before = w.params;
  auto targets = metrics::select_targets(w.data.table, 6, 5, metrics::PopularityMode::kExact, 3).items;
  AttackConfig c = cfg(Variant::kPgd);
  c.with_align = true;
  auto a = run_campaign(w.params, *w.content, targets, c);
  auto b = run_campaign(w.params, *w.content, targets, c);
  EXPECT_TRUE(w.params == before);
  for (std::size_t k = 0; k < targets.size(); ++k) {
    EXPECT_TRUE(a.results[k].perturbation.delta_v == b.results[k].perturbation.delta_v);
    EXPECT_TRUE(a.results[k].perturbation.delta_t == b.results[k].perturbation.delta_t);
  }
  EXPECT_EQ(attack_csv(a).str(), attack_csv(b).str());
}

TEST(Align, BoundedAndSymmetricConstruction) {
  auto w = make_world(8);
  metrics::RankingCache cache(w.params, *w.content, 10);
  auto prob = make_problem(cache, 5, default_users(*w.content, 5));
  ad::Tape tape;
  AttackGraph g(tape, w.params, *w.content);
  model::SlotDelta d{tape.leaf(Tensor::zeros({1, 6})), tape.leaf(Tensor::zeros({1, 6}))};
  const double v = align_loss_for_attack(g, prob, d).value().item();
  EXPECT_LE(std::abs(v), 1.0 + 1e-12);

  auto sym = w.params;
  sym.proj_t = sym.proj_v;
  auto content = model::build_content(model::Kind::kConcat, w.split, w.data.visual,
                                      {data::Modality::kTextual, w.data.visual.values});
  metrics::RankingCache c2(sym, *content, 10);
  auto p2 = make_problem(c2, 5, default_users(*content, 5));
  ad::Tape t2;
  AttackGraph g2(t2, sym, *content);
  model::SlotDelta d2{t2.leaf(Tensor::zeros({1, 6})), t2.leaf(Tensor::zeros({1, 6}))};
  EXPECT_NEAR(align_loss_for_attack(g2, p2, d2).value().item(), 1.0, 1e-12);
}

TEST(Align, GradientMatchesFiniteDifferences) {
  data::SynthConfig sc = testing::tiny_synth();
  sc.dim_v = 3;
  sc.dim_t = 3;
  for (std::uint64_t seed : {21u, 22u, 23u}) {
    auto w = make_world(seed, model::Kind::kConcat, model::Fusion::kTanh, sc, 0.5);
    metrics::RankingCache cache(w.params, *w.content, 10);
    auto prob = make_problem(cache, 9, default_users(*w.content, 9));
    auto value = [&](const std::vector<Tensor>& x) {
      ad::Tape tape;
      AttackGraph g(tape, w.params, *w.content);
      model::SlotDelta d{tape.leaf(x[0]), tape.leaf(x[1])};
      return align_loss_for_attack(g, prob, d).value().item();
    };
    std::mt19937_64 rng(seed);
    std::vector<Tensor> at{testing::random_tensor({1, 3}, rng, -0.2, 0.2), testing::random_tensor({1, 3}, rng, -0.2, 0.2)};
    ad::Tape tape;
    AttackGraph g(tape, w.params, *w.content);
    model::SlotDelta d{tape.leaf(at[0]), tape.leaf(at[1])};
    auto grads = tape.grad(align_loss_for_attack(g, prob, d), std::vector<ad::Var>{d.v, d.t});
    EXPECT_LT(testing::max_rel_error(grads, testing::fd_gradient(value, at)), 1e-4);
  }
}

TEST(Align, ProjectedCosineWhenWidthsDiffer) {
  data::SynthConfig sc = testing::tiny_synth();
  sc.dim_t = 4;
  auto w = make_world(30, model::Kind::kGraph, model::Fusion::kTanh, sc);
  metrics::RankingCache cache(w.params, *w.content, 10);
  AttackConfig c = cfg(Variant::kPgd);
  c.with_align = true;
  auto r = pgd_promote(w.params, *w.content, cache, 2, c);
  for (const auto& rec : r.trace.records) EXPECT_LE(std::abs(rec.grad_cosine), 1.0 + 1e-12);
}

TEST(Campaign, CsvShapes) {
  auto w = make_world(9);
  auto targets = metrics::select_targets(w.data.table, 5, 5, metrics::PopularityMode::kExact, 4).items;
  auto p = run_campaign(w.params, *w.content, targets, cfg(Variant::kPgd));
  EXPECT_EQ(attack_csv(p).rows(), targets.size() + 1);
  EXPECT_EQ(trace_csv(p).rows(), targets.size() * 10);
  auto f = run_campaign(w.params, *w.content, targets, cfg(Variant::kFgsm));
  EXPECT_EQ(trace_csv(f).rows(), targets.size());
}

}  // namespace
}  // namespace uatmc::attack
