#pragma once

#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "uatmc/csv.hpp"
#include "uatmc/data.hpp"
#include "uatmc/kernels.hpp"
#include "uatmc/model.hpp"

namespace uatmc::metrics {

using kernels::ScoredItem;

// Clean scores of a frozen model plus, per user, the best k+1 items of the
// recommendation list (training items removed) and of the full catalogue.
class RankingCache {
 public:
  RankingCache(const model::ModelParams& params, const model::Content& content, std::size_t k);

  std::size_t k() const { return k_; }
  std::size_t num_users() const { return users_.rows(); }
  std::size_t num_items() const { return items_.rows(); }
  const Tensor& user_embeddings() const { return users_; }
  const Tensor& scores() const { return scores_; }
  double clean_score(std::size_t u, std::size_t i) const { return scores_.at(u, i); }
  bool seen(std::size_t u, std::size_t i) const;

  // Every user's score for an item whose fused embedding is `h_item`.
  std::vector<double> scores_for(std::span<const double> h_item) const;

  // K-th entry of u's recommendation list once `target` is removed; nullopt
  // when fewer than K other unseen items exist.
  std::optional<ScoredItem> kth_unseen_excluding(std::size_t u, std::size_t target) const;
  // K-th highest clean score over all items, the target left out unless
  // `include_target`.
  double threshold(std::size_t u, std::size_t target, bool include_target = false) const;

  // Whether `target` scored `target_score` lands in u's top-K list.
  bool hit(std::size_t u, std::size_t target, double target_score) const;
  double hit_pct(std::size_t target, std::span<const double> target_scores) const;
  double hit_pct_clean(std::size_t target) const;

 private:
  std::size_t k_;
  Tensor users_, items_, scores_;
  std::vector<std::vector<std::size_t>> seen_;
  std::vector<std::vector<ScoredItem>> top_unseen_, top_all_;
};

// Percentage of all users whose top-K list contains `item`.
double hit_at_k(const model::ModelParams& params, const model::Content& content, std::size_t item, std::size_t k,
                std::span<const double> delta_v = {}, std::span<const double> delta_t = {});

// (after - before) / before * 100; nullopt when before == 0.
std::optional<double> gain_hit(double hit_before, double hit_after);

struct RankMetrics {
  double recall = 0.0;
  double ndcg = 0.0;
  std::size_t users = 0;
};

// Leave-one-out Recall@K / NDCG@K: the held-out item is ranked among all items
// outside the user's training set. DataError when no user has a holdout.
RankMetrics recall_ndcg(const model::ModelParams& params, const model::Content& content,
                        const data::InteractionTable& split, std::size_t k = 10);
RankMetrics recall_ndcg(const Tensor& scores, const data::InteractionTable& split, std::size_t k = 10);

enum class PopularityMode { kExact, kAtMost };
PopularityMode parse_popularity_mode(const std::string& s);

struct TargetSelection {
  std::vector<std::size_t> items;  // ascending
  std::size_t qualifying = 0;
  bool short_of_count = false;
};

// Uniform sample without replacement among items whose interaction count is
// exactly `threshold` (kExact) or in [1, threshold] (kAtMost).
TargetSelection select_targets(const data::InteractionTable& table, std::size_t count, std::size_t threshold,
                               PopularityMode mode, std::uint64_t seed);

struct MetricsRow {
  std::string run_id, defense, attack;
  double eps_d = 0, eps_a = 0, lambda = 0, alpha = 0;
  double hit_before = 0, hit_after = 0;
  std::optional<double> gain;
  double recall10 = 0, ndcg10 = 0;
};

CsvTable metrics_csv(const std::vector<MetricsRow>& rows);

}  // namespace uatmc::metrics
