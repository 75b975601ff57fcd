#include "uatmc/diagnostics.hpp"

#include <algorithm>
#include <cmath>
#include <exception>
#include <numeric>

#include "uatmc/errors.hpp"

namespace uatmc::diagnostics {

PerUserGradients per_user_gradients(const model::ModelParams& params, const model::Content& content,
                                    const attack::PromotionProblem& prob, std::span<const double> delta_v,
                                    std::span<const double> delta_t) {
  const std::size_t n = prob.users.size();
  if (n == 0) throw ContractError("per_user_gradients: empty user set");
  const std::size_t dv = params.dim_v(), dt = params.dim_t();
  if ((!delta_v.empty() && delta_v.size() != dv) || (!delta_t.empty() && delta_t.size() != dt)) {
    throw DimensionError("per_user_gradients: perturbation width mismatch");
  }
  // Every user gets its own copy of the target's perturbation so one backward
  // pass separates the per-user terms.
  Tensor rep_v = Tensor::zeros({n, dv}), rep_t = Tensor::zeros({n, dt});
  for (std::size_t r = 0; r < n; ++r) {
    if (!delta_v.empty()) std::copy(delta_v.begin(), delta_v.end(), rep_v.mutable_row(r).begin());
    if (!delta_t.empty()) std::copy(delta_t.begin(), delta_t.end(), rep_t.mutable_row(r).begin());
  }
  ad::Tape tape;
  attack::AttackGraph g(tape, params, content);
  model::SlotDelta d{tape.leaf(std::move(rep_v)), tape.leaf(std::move(rep_t))};
  ad::Var h = model::encode_items(g.pv, params, content, std::vector<std::size_t>(n, prob.item), &d);
  ad::Var s = ad::row_dot(tape.constant(prob.user_rows), h);
  ad::Var loss = ad::sum(ad::sigmoid(ad::sub(s, tape.constant(Tensor::vector(prob.thresholds)))));
  std::vector<ad::Var> wrt{d.v, d.t};
  auto grads = tape.grad(loss, wrt);
  if (!grads[0].all_finite() || !grads[1].all_finite()) throw NumericalError("non-finite per-user gradient");
  return {prob.users, std::move(grads[0]), std::move(grads[1])};
}

std::vector<double> aggregate(const Tensor& per_user) {
  std::vector<double> out(per_user.cols(), 0.0);
  for (std::size_t r = 0; r < per_user.rows(); ++r) {
    auto row = per_user.row(r);
    for (std::size_t k = 0; k < out.size(); ++k) out[k] += row[k];
  }
  return out;
}

double directional_contribution(std::span<const double> g_u, std::span<const double> g_total, double norm_sum) {
  if (g_u.size() != g_total.size()) throw DimensionError("directional_contribution: width mismatch");
  if (!(norm_sum > 0.0)) throw NumericalError("every per-user gradient is zero");
  const double nu = l2_norm(g_u), ng = l2_norm(g_total);
  if (nu == 0.0 || ng == 0.0) return 0.0;
  return dot(g_u, g_total) / (nu * ng) * nu / norm_sum;
}

std::vector<UserContribution> contributions(const PerUserGradients& grads, bool keep_gradients) {
  const std::size_t n = grads.users.size();
  const auto total_v = aggregate(grads.g_v), total_t = aggregate(grads.g_t);
  double sum_v = 0.0, sum_t = 0.0;
  for (std::size_t r = 0; r < n; ++r) {
    sum_v += l2_norm(grads.g_v.row(r));
    sum_t += l2_norm(grads.g_t.row(r));
  }
  std::vector<UserContribution> out(n);
  for (std::size_t r = 0; r < n; ++r) {
    auto& c = out[r];
    c.user = grads.users[r];
    c.c_v = directional_contribution(grads.g_v.row(r), total_v, sum_v);
    c.c_t = directional_contribution(grads.g_t.row(r), total_t, sum_t);
    if (keep_gradients) {
      c.g_v.assign(grads.g_v.row(r).begin(), grads.g_v.row(r).end());
      c.g_t.assign(grads.g_t.row(r).begin(), grads.g_t.row(r).end());
    }
  }
  return out;
}

namespace {

std::vector<std::size_t> top_by(const std::vector<UserContribution>& cs, std::size_t k, double UserContribution::*field) {
  std::vector<std::size_t> order(cs.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::partial_sort(order.begin(), order.begin() + static_cast<std::ptrdiff_t>(k), order.end(),
                    [&](std::size_t a, std::size_t b) {
                      if (cs[a].*field != cs[b].*field) return cs[a].*field > cs[b].*field;
                      return cs[a].user < cs[b].user;
                    });
  std::vector<std::size_t> ids(k);
  for (std::size_t r = 0; r < k; ++r) ids[r] = cs[order[r]].user;
  return ids;
}

std::vector<std::size_t> sorted_unique(std::vector<std::size_t> v) {
  std::sort(v.begin(), v.end());
  v.erase(std::unique(v.begin(), v.end()), v.end());
  return v;
}

}  // namespace

UserSets top_user_sets(const std::vector<UserContribution>& contribs, std::size_t k_users) {
  if (k_users > contribs.size()) throw ContractError("top_user_sets: k_users exceeds the number of users");
  return {top_by(contribs, k_users, &UserContribution::c_v), top_by(contribs, k_users, &UserContribution::c_t)};
}

std::size_t intersection_size(const std::vector<std::size_t>& a, const std::vector<std::size_t>& b) {
  const auto sa = sorted_unique(a), sb = sorted_unique(b);
  std::vector<std::size_t> both;
  std::set_intersection(sa.begin(), sa.end(), sb.begin(), sb.end(), std::back_inserter(both));
  return both.size();
}

double jaccard(const std::vector<std::size_t>& a, const std::vector<std::size_t>& b) {
  if (a.empty() && b.empty()) throw DomainError("jaccard of two empty sets is undefined");
  const auto sa = sorted_unique(a), sb = sorted_unique(b);
  const std::size_t inter = intersection_size(sa, sb);
  return static_cast<double>(inter) / static_cast<double>(sa.size() + sb.size() - inter);
}

std::size_t default_k_users(std::size_t num_users) {
  return std::max<std::size_t>(1, static_cast<std::size_t>(std::ceil(0.1 * static_cast<double>(num_users))));
}

std::vector<HistogramBin> histogram(const std::vector<double>& values, double bin_width) {
  if (!(bin_width > 0.0 && bin_width <= 1.0)) throw ConfigError("histogram bin width must be in (0, 1]");
  const double per_unit = 1.0 / bin_width;
  const auto nbins = static_cast<std::size_t>(std::ceil(per_unit - 1e-9));
  std::vector<HistogramBin> bins(nbins);
  for (std::size_t b = 0; b < nbins; ++b) {
    bins[b].low = static_cast<double>(b) / per_unit;
    bins[b].high = std::min(1.0, static_cast<double>(b + 1) / per_unit);
  }
  for (double v : values) {
    if (!(v >= 0.0 && v <= 1.0)) throw DomainError("histogram value outside [0, 1]");
    auto b = std::min(nbins - 1, static_cast<std::size_t>(v / bin_width));
    while (b + 1 < nbins && v >= bins[b].high) ++b;
    while (b > 0 && v < bins[b].low) --b;
    ++bins[b].count;
  }
  return bins;
}

void SurveyConfig::validate() const {
  if (k == 0) throw ConfigError("survey k must be >= 1");
  if (k_users && *k_users == 0) throw ConfigError("survey k_users must be >= 1");
  if (!(bin_width > 0.0 && bin_width <= 1.0)) throw ConfigError("survey bin_width must be in (0, 1]");
}

Survey mismatch_survey(const model::ModelParams& params, const model::Content& content,
                       const std::vector<std::size_t>& targets, const SurveyConfig& config) {
  config.validate();
  if (targets.empty()) throw ContractError("mismatch_survey: no targets");
  metrics::RankingCache cache(params, content, config.k);
  const auto n = static_cast<std::ptrdiff_t>(targets.size());
  std::vector<std::optional<MismatchReport>> slots(targets.size());
  std::vector<std::string> errors(targets.size());

#pragma omp parallel for schedule(dynamic)
  for (std::ptrdiff_t t = 0; t < n; ++t) {
    const std::size_t item = targets[static_cast<std::size_t>(t)];
    try {
      auto prob = attack::make_problem(cache, item, attack::default_users(content, item),
                                       config.include_target_in_threshold);
      MismatchReport rep;
      rep.item = item;
      rep.contributions = contributions(per_user_gradients(params, content, prob), config.keep_gradients);
      const std::size_t k_users = config.k_users.value_or(default_k_users(prob.users.size()));
      rep.sets = top_user_sets(rep.contributions, k_users);
      rep.jaccard = jaccard(rep.sets.visual, rep.sets.textual);
      rep.overlap = intersection_size(rep.sets.visual, rep.sets.textual);
      slots[static_cast<std::size_t>(t)] = std::move(rep);
    } catch (const std::exception& e) {
      errors[static_cast<std::size_t>(t)] = e.what();
    }
  }

  Survey s;
  std::vector<double> js;
  for (std::size_t t = 0; t < targets.size(); ++t) {
    if (slots[t]) {
      js.push_back(slots[t]->jaccard);
      s.reports.push_back(std::move(*slots[t]));
    } else {
      s.skipped.push_back({targets[t], errors[t]});
    }
  }
  s.bins = histogram(js, config.bin_width);
  if (!js.empty()) s.mean_jaccard = std::accumulate(js.begin(), js.end(), 0.0) / static_cast<double>(js.size());
  return s;
}

CsvTable report_csv(const Survey& s) {
  CsvTable t({"item", "jaccard", "overlap"});
  for (const auto& r : s.reports) t.add_row({std::to_string(r.item), fmt_num(r.jaccard), std::to_string(r.overlap)});
  return t;
}

CsvTable histogram_csv(const Survey& s) {
  CsvTable t({"bin_low", "bin_high", "count"});
  for (const auto& b : s.bins) t.add_row({fmt_num(b.low), fmt_num(b.high), std::to_string(b.count)});
  t.add_note("mean_jaccard", s.reports.empty() ? "nan" : fmt_num(s.mean_jaccard));
  t.add_note("items", std::to_string(s.reports.size()));
  return t;
}

CsvTable contribution_csv(const Survey& s) {
  CsvTable t({"item", "user", "c_v", "c_t"});
  for (const auto& r : s.reports) {
    for (const auto& c : r.contributions) {
      t.add_row({std::to_string(r.item), std::to_string(c.user), fmt_num(c.c_v), fmt_num(c.c_t)});
    }
  }
  return t;
}

}  // namespace uatmc::diagnostics
