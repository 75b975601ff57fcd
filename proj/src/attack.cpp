#include "uatmc/attack.hpp"

#include <algorithm>
#include <cmath>
#include <exception>

#include "uatmc/errors.hpp"

namespace uatmc::attack {

Variant parse_variant(const std::string& s) {
  if (s == "fgsm") return Variant::kFgsm;
  if (s == "pgd") return Variant::kPgd;
  throw ConfigError("unknown attack variant '" + s + "'");
}

const char* name(Variant v) { return v == Variant::kFgsm ? "fgsm" : "pgd"; }

void AttackConfig::validate() const {
  if (!(eps_pct > 0.0 && eps_pct <= 1.0)) throw ConfigError("attack eps_pct must be in (0, 1]");
  if (pgd_steps == 0) throw ConfigError("attack pgd_steps must be >= 1");
  if (align_weight < 0.0) throw ConfigError("attack align_weight must be non-negative");
  if (k == 0) throw ConfigError("attack k must be >= 1");
}

double resolve_budget(double row_norm, double eps_pct) { return eps_pct * row_norm; }

double resolve_budget(const data::FeatureMatrix& features, std::size_t item, double eps_pct) {
  if (item >= features.rows()) throw DimensionError("resolve_budget: item out of range");
  return resolve_budget(l2_norm(features.row(item)), eps_pct);
}

std::vector<std::size_t> default_users(const model::Content& content, std::size_t item) {
  std::vector<std::size_t> users;
  for (std::size_t u = 0; u < content.num_users(); ++u) {
    const auto& s = content.seen[u];
    if (!std::binary_search(s.begin(), s.end(), item)) users.push_back(u);
  }
  return users;
}

PromotionProblem make_problem(const metrics::RankingCache& cache, std::size_t item, std::vector<std::size_t> users,
                              bool include_target) {
  if (users.empty()) throw ContractError("promotion user set is empty");
  if (item >= cache.num_items()) throw DimensionError("target item out of range");
  PromotionProblem p;
  p.item = item;
  const std::size_t w = cache.user_embeddings().cols();
  p.user_rows = Tensor::zeros({users.size(), w});
  p.thresholds.resize(users.size());
  for (std::size_t r = 0; r < users.size(); ++r) {
    if (users[r] >= cache.num_users()) throw DimensionError("promotion user out of range");
    auto src = cache.user_embeddings().row(users[r]);
    std::copy(src.begin(), src.end(), p.user_rows.mutable_row(r).begin());
    p.thresholds[r] = cache.threshold(users[r], item, include_target);
  }
  p.users = std::move(users);
  return p;
}

ad::Var promotion_loss(const AttackGraph& g, const PromotionProblem& prob, const model::SlotDelta& delta) {
  if (prob.users.empty()) throw ContractError("promotion user set is empty");
  ad::Var h = model::encode_items(g.pv, g.params, g.content, {prob.item}, &delta);
  ad::Var s = ad::matmul(g.tape.constant(prob.user_rows), h, false, true);
  s = ad::reshape(s, {prob.users.size()});
  ad::Var margin = ad::sub(s, g.tape.constant(Tensor::vector(prob.thresholds)));
  return ad::mean(ad::sigmoid(margin));
}

ad::CosineResult gradient_alignment(const AttackGraph& g, const ad::Var& inner, const model::SlotDelta& delta) {
  std::vector<ad::Var> wrt{delta.v, delta.t};
  auto grads = g.tape.grad_graph(inner, wrt);
  if (g.params.dim_v() == g.params.dim_t()) return ad::cosine(grads[0], grads[1]);
  return ad::cosine(ad::matmul(grads[0], g.pv.proj_v, false, true), ad::matmul(grads[1], g.pv.proj_t, false, true));
}

ad::Var align_loss_for_attack(const AttackGraph& g, const PromotionProblem& prob, const model::SlotDelta& delta) {
  return gradient_alignment(g, promotion_loss(g, prob, delta), delta).value;
}

double modality_cosine(const model::ModelParams& params, std::span<const double> g_v, std::span<const double> g_t) {
  std::vector<double> a(g_v.begin(), g_v.end()), b(g_t.begin(), g_t.end());
  if (params.dim_v() != params.dim_t()) {
    auto project = [](const Tensor& p, std::span<const double> x) {
      std::vector<double> out(p.rows());
      for (std::size_t j = 0; j < p.rows(); ++j) out[j] = dot(x, p.row(j));
      return out;
    };
    a = project(params.proj_v, g_v);
    b = project(params.proj_t, g_t);
  }
  const double na = l2_norm(a), nb = l2_norm(b);
  if (na < ad::kNormTolerance || nb < ad::kNormTolerance) return 0.0;
  return dot(a, b) / (na * nb);
}

namespace {

struct Direction {
  Tensor g_v, g_t;
  double cosine = 0.0;
};

Direction ascent_direction(const model::ModelParams& params, const model::Content& content,
                           const PromotionProblem& prob, const Tensor& dv, const Tensor& dt,
                           const AttackConfig& config) {
  ad::Tape tape;
  AttackGraph g(tape, params, content);
  model::SlotDelta d{tape.leaf(dv.reshaped({1, dv.size()})), tape.leaf(dt.reshaped({1, dt.size()}))};
  ad::Var prom = promotion_loss(g, prob, d);
  std::vector<ad::Var> wrt{d.v, d.t};
  Direction out;
  std::vector<Tensor> grads;
  if (config.with_align) {
    ad::CosineResult align = gradient_alignment(g, prom, d);
    out.cosine = align.value.value().item();
    ad::Var objective = align.degenerate ? prom : ad::add(prom, ad::scale(align.value, config.align_weight));
    grads = tape.grad(objective, wrt);
  } else {
    grads = tape.grad(prom, wrt);
  }
  out.g_v = grads[0].reshaped({dv.size()});
  out.g_t = grads[1].reshaped({dt.size()});
  if (!config.with_align) out.cosine = modality_cosine(params, out.g_v.data(), out.g_t.data());
  if (!out.g_v.all_finite() || !out.g_t.all_finite()) throw NumericalError("non-finite attack gradient");
  return out;
}

double stable_sigmoid(double x) {
  if (x >= 0) return 1.0 / (1.0 + std::exp(-x));
  const double e = std::exp(x);
  return e / (1.0 + e);
}

struct Evaluation {
  double loss = 0.0;
  std::size_t n_rec = 0;
  double hit = 0.0;
};

Evaluation evaluate(const model::ModelParams& params, const model::Content& content,
                    const metrics::RankingCache& cache, const PromotionProblem& prob, const Tensor& dv,
                    const Tensor& dt) {
  const auto h = model::fused_item(params, content, prob.item, dv.data(), dt.data());
  const auto scores = cache.scores_for(h);
  Evaluation e;
  for (std::size_t r = 0; r < prob.users.size(); ++r) {
    e.loss += stable_sigmoid(scores[prob.users[r]] - prob.thresholds[r]);
  }
  e.loss /= static_cast<double>(prob.users.size());
  for (std::size_t u = 0; u < cache.num_users(); ++u) e.n_rec += cache.hit(u, prob.item, scores[u]);
  e.hit = 100.0 * static_cast<double>(e.n_rec) / static_cast<double>(cache.num_users());
  return e;
}

// delta + step * g / |g|, then projected onto the eps-ball. Returns false when g is zero.
bool ascend(Tensor& delta, const Tensor& g, double step, double eps) {
  const double n = l2_norm(g.data());
  if (n == 0.0) return false;
  for (std::size_t k = 0; k < delta.size(); ++k) delta[k] += step * g[k] / n;
  const double dn = l2_norm(delta.data());
  if (dn > eps) {
    for (std::size_t k = 0; k < delta.size(); ++k) delta[k] *= eps / dn;
  }
  return true;
}

AttackResult run(const model::ModelParams& params, const model::Content& content, const metrics::RankingCache& cache,
                 std::size_t item, const AttackConfig& config, Variant variant) {
  config.validate();
  if (config.k != cache.k()) throw ContractError("ranking cache K differs from attack K");
  const PromotionProblem prob = make_problem(
      cache, item, config.users ? *config.users : default_users(content, item), config.include_target_in_threshold);
  AttackResult res;
  Perturbation& p = res.perturbation;
  p.item = item;
  p.eps_v = resolve_budget(content.raw_norm_v[item], config.eps_pct);
  p.eps_t = resolve_budget(content.raw_norm_t[item], config.eps_pct);
  p.zero_budget = p.eps_v == 0.0 || p.eps_t == 0.0;
  p.delta_v = Tensor::zeros({params.dim_v()});
  p.delta_t = Tensor::zeros({params.dim_t()});
  res.hit_before = cache.hit_pct_clean(item);

  const std::size_t steps = variant == Variant::kFgsm ? 1 : config.pgd_steps;
  // FGSM is a single full-budget step; PGD takes 1.25 eps / steps per iteration.
  const double factor = variant == Variant::kFgsm ? 1.0 : 1.25 / static_cast<double>(steps);
  bool moved_v = false, moved_t = false;
  for (std::size_t it = 1; it <= steps; ++it) {
    Direction dir = ascent_direction(params, content, prob, p.delta_v, p.delta_t, config);
    moved_v |= ascend(p.delta_v, dir.g_v, factor * p.eps_v, p.eps_v);
    moved_t |= ascend(p.delta_t, dir.g_t, factor * p.eps_t, p.eps_t);
    const Evaluation e = evaluate(params, content, cache, prob, p.delta_v, p.delta_t);
    res.trace.records.push_back({it, e.loss, e.n_rec, dir.cosine});
  }
  p.zero_grad_v = !moved_v;
  p.zero_grad_t = !moved_t;
  const Evaluation final_eval = evaluate(params, content, cache, prob, p.delta_v, p.delta_t);
  res.final_loss = final_eval.loss;
  res.hit_after = final_eval.hit;
  res.gain = metrics::gain_hit(res.hit_before, res.hit_after);
  return res;
}

}  // namespace

AttackResult fgsm_promote(const model::ModelParams& params, const model::Content& content,
                          const metrics::RankingCache& cache, std::size_t item, const AttackConfig& config) {
  if (config.variant != Variant::kFgsm) throw ContractError("fgsm_promote needs variant fgsm");
  return run(params, content, cache, item, config, Variant::kFgsm);
}

AttackResult pgd_promote(const model::ModelParams& params, const model::Content& content,
                         const metrics::RankingCache& cache, std::size_t item, const AttackConfig& config) {
  if (config.variant != Variant::kPgd) throw ContractError("pgd_promote needs variant pgd");
  return run(params, content, cache, item, config, Variant::kPgd);
}

AttackResult promote(const model::ModelParams& params, const model::Content& content,
                     const metrics::RankingCache& cache, std::size_t item, const AttackConfig& config) {
  return run(params, content, cache, item, config, config.variant);
}

Campaign run_campaign(const model::ModelParams& params, const model::Content& content,
                      const std::vector<std::size_t>& targets, const AttackConfig& config) {
  config.validate();
  const metrics::RankingCache cache(params, content, config.k);
  Campaign c;
  c.config = config;
  c.results.resize(targets.size());
  std::vector<std::exception_ptr> errors(targets.size());
#pragma omp parallel for schedule(dynamic)
  for (std::size_t k = 0; k < targets.size(); ++k) {
    try {
      c.results[k] = promote(params, content, cache, targets[k], config);
    } catch (...) {
      errors[k] = std::current_exception();
    }
  }
  for (const auto& e : errors) {
    if (e) std::rethrow_exception(e);
  }
  double gain_sum = 0.0;
  std::size_t gains = 0;
  for (const auto& r : c.results) {
    c.summary.mean_hit_before += r.hit_before;
    c.summary.mean_hit_after += r.hit_after;
    if (r.gain) {
      gain_sum += *r.gain;
      ++gains;
    } else {
      ++c.summary.undefined_gains;
    }
  }
  if (!targets.empty()) {
    c.summary.mean_hit_before /= static_cast<double>(targets.size());
    c.summary.mean_hit_after /= static_cast<double>(targets.size());
  }
  c.summary.gain = metrics::gain_hit(c.summary.mean_hit_before, c.summary.mean_hit_after);
  if (gains > 0) c.summary.mean_item_gain = gain_sum / static_cast<double>(gains);
  return c;
}

CsvTable attack_csv(const Campaign& c) {
  CsvTable t({"target_item", "variant", "with_align", "eps_pct", "hit_before", "hit_after", "gain_pct"});
  const std::string variant = name(c.config.variant);
  const std::string align = c.config.with_align ? "1" : "0";
  const std::string eps = fmt_num(c.config.eps_pct);
  auto gain = [](const std::optional<double>& g) { return g ? fmt_num(*g) : std::string("undefined"); };
  for (const auto& r : c.results) {
    t.add_row({std::to_string(r.perturbation.item), variant, align, eps, fmt_num(r.hit_before), fmt_num(r.hit_after),
               gain(r.gain)});
  }
  t.add_row({"mean", variant, align, eps, fmt_num(c.summary.mean_hit_before), fmt_num(c.summary.mean_hit_after),
             gain(c.summary.gain)});
  return t;
}

CsvTable trace_csv(const Campaign& c) {
  CsvTable t({"target_item", "iteration", "promotion_loss", "n_rec", "grad_cosine"});
  for (const auto& r : c.results) {
    for (const auto& rec : r.trace.records) {
      t.add_row({std::to_string(r.perturbation.item), std::to_string(rec.iteration), fmt_num(rec.promotion_loss),
                 std::to_string(rec.n_rec), fmt_num(rec.grad_cosine)});
    }
  }
  return t;
}

}  // namespace uatmc::attack
