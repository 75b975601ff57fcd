#include "uatmc/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>

#include "uatmc/errors.hpp"
#include "uatmc/rng.hpp"

namespace uatmc::metrics {

RankingCache::RankingCache(const model::ModelParams& params, const model::Content& content, std::size_t k)
    : k_(k), seen_(content.seen) {
  if (k == 0 || k >= params.num_items()) throw ContractError("K must be in [1, num_items)");
  users_ = model::fused_users(params, content);
  items_ = model::fused_items(params, content);
  scores_ = model::score_matrix(users_, items_);
  const std::vector<std::vector<std::size_t>> none(num_users());
  top_unseen_ = kernels::top_entries(scores_.data(), num_users(), num_items(), seen_, k + 1);
  top_all_ = kernels::top_entries(scores_.data(), num_users(), num_items(), none, k + 1);
}

bool RankingCache::seen(std::size_t u, std::size_t i) const {
  return std::binary_search(seen_[u].begin(), seen_[u].end(), i);
}

std::vector<double> RankingCache::scores_for(std::span<const double> h_item) const {
  std::vector<double> s(num_users());
  kernels::gemm(false, true, num_users(), 1, users_.cols(), users_.data(), h_item, s);
  return s;
}

namespace {

const ScoredItem* kth_skipping(const std::vector<ScoredItem>& list, std::size_t k, std::size_t skip) {
  std::size_t seen = 0;
  for (const auto& e : list) {
    if (e.item == skip) continue;
    if (++seen == k) return &e;
  }
  return nullptr;
}

}  // namespace

std::optional<ScoredItem> RankingCache::kth_unseen_excluding(std::size_t u, std::size_t target) const {
  const ScoredItem* e = kth_skipping(top_unseen_[u], k_, target);
  if (!e) return std::nullopt;
  return *e;
}

double RankingCache::threshold(std::size_t u, std::size_t target, bool include_target) const {
  const auto& list = top_all_[u];
  if (include_target) return list[k_ - 1].score;
  return kth_skipping(list, k_, target)->score;
}

bool RankingCache::hit(std::size_t u, std::size_t target, double target_score) const {
  if (seen(u, target)) return false;
  auto kth = kth_unseen_excluding(u, target);
  if (!kth) return true;
  return kernels::ranks_before({target_score, target}, *kth);
}

double RankingCache::hit_pct(std::size_t target, std::span<const double> target_scores) const {
  std::size_t n = 0;
  for (std::size_t u = 0; u < num_users(); ++u) n += hit(u, target, target_scores[u]);
  return 100.0 * static_cast<double>(n) / static_cast<double>(num_users());
}

double RankingCache::hit_pct_clean(std::size_t target) const {
  std::vector<double> s(num_users());
  for (std::size_t u = 0; u < num_users(); ++u) s[u] = scores_.at(u, target);
  return hit_pct(target, s);
}

double hit_at_k(const model::ModelParams& params, const model::Content& content, std::size_t item, std::size_t k,
                std::span<const double> delta_v, std::span<const double> delta_t) {
  RankingCache cache(params, content, k);
  return cache.hit_pct(item, cache.scores_for(model::fused_item(params, content, item, delta_v, delta_t)));
}

std::optional<double> gain_hit(double hit_before, double hit_after) {
  if (hit_before == 0.0) return std::nullopt;
  return (hit_after - hit_before) / hit_before * 100.0;
}

RankMetrics recall_ndcg(const Tensor& scores, const data::InteractionTable& split, std::size_t k) {
  const std::size_t users = split.num_users, items = split.num_items;
  std::vector<double> rec(users, 0.0), ndcg(users, 0.0);
  std::vector<char> eligible(users, 0);
#pragma omp parallel for schedule(dynamic, 64)
  for (std::size_t u = 0; u < users; ++u) {
    if (!split.holdout[u]) continue;
    eligible[u] = 1;
    const std::size_t h = *split.holdout[u];
    const ScoredItem target{scores.at(u, h), h};
    std::size_t rank = 1;
    for (std::size_t j = 0; j < items; ++j) {
      if (j == h || split.in_train(u, j)) continue;
      if (kernels::ranks_before({scores.at(u, j), j}, target)) ++rank;
    }
    if (rank <= k) {
      rec[u] = 1.0;
      ndcg[u] = 1.0 / std::log2(static_cast<double>(rank) + 1.0);
    }
  }
  RankMetrics m;
  for (std::size_t u = 0; u < users; ++u) {
    if (!eligible[u]) continue;
    m.recall += rec[u];
    m.ndcg += ndcg[u];
    ++m.users;
  }
  if (m.users == 0) throw DataError("no user has a held-out item");
  m.recall /= static_cast<double>(m.users);
  m.ndcg /= static_cast<double>(m.users);
  return m;
}

RankMetrics recall_ndcg(const model::ModelParams& params, const model::Content& content,
                        const data::InteractionTable& split, std::size_t k) {
  return recall_ndcg(model::score_matrix(model::fused_users(params, content), model::fused_items(params, content)),
                     split, k);
}

PopularityMode parse_popularity_mode(const std::string& s) {
  if (s == "exact") return PopularityMode::kExact;
  if (s == "at_most") return PopularityMode::kAtMost;
  throw ConfigError("unknown popularity mode '" + s + "'");
}

TargetSelection select_targets(const data::InteractionTable& table, std::size_t count, std::size_t threshold,
                               PopularityMode mode, std::uint64_t seed) {
  const auto counts = table.item_counts();
  std::vector<std::size_t> pool;
  for (std::size_t i = 0; i < counts.size(); ++i) {
    const bool ok = mode == PopularityMode::kExact ? counts[i] == threshold : counts[i] >= 1 && counts[i] <= threshold;
    if (ok) pool.push_back(i);
  }
  TargetSelection sel;
  sel.qualifying = pool.size();
  sel.short_of_count = pool.size() < count;
  Rng rng(seed);
  std::shuffle(pool.begin(), pool.end(), rng);
  pool.resize(std::min(count, pool.size()));
  std::sort(pool.begin(), pool.end());
  sel.items = std::move(pool);
  return sel;
}

CsvTable metrics_csv(const std::vector<MetricsRow>& rows) {
  CsvTable t({"run_id", "defense", "attack", "eps_d", "eps_a", "lambda", "alpha", "hit_before", "hit_after", "gain",
              "recall10", "ndcg10"});
  for (const auto& r : rows) {
    t.add_row({r.run_id, r.defense, r.attack, fmt_num(r.eps_d), fmt_num(r.eps_a), fmt_num(r.lambda), fmt_num(r.alpha),
               fmt_num(r.hit_before), fmt_num(r.hit_after), r.gain ? fmt_num(*r.gain) : "undefined",
               fmt_num(r.recall10), fmt_num(r.ndcg10)});
  }
  return t;
}

}  // namespace uatmc::metrics
