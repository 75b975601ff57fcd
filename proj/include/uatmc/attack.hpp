#pragma once

#include <optional>
#include <string>
#include <vector>

#include "uatmc/autodiff.hpp"
#include "uatmc/csv.hpp"
#include "uatmc/metrics.hpp"
#include "uatmc/model.hpp"

namespace uatmc::attack {

enum class Variant { kFgsm, kPgd };
Variant parse_variant(const std::string& s);
const char* name(Variant v);

struct Perturbation {
  std::size_t item = 0;
  Tensor delta_v, delta_t;  // vectors of width d_v / d_t
  double eps_v = 0.0, eps_t = 0.0;
  bool zero_grad_v = false, zero_grad_t = false;  // modality had no gradient and stayed at zero
  bool zero_budget = false;                       // a feature row had zero norm
};

struct AttackConfig {
  Variant variant = Variant::kPgd;
  double eps_pct = 0.1;
  std::size_t pgd_steps = 10;
  bool with_align = false;
  double align_weight = 1.0;
  std::size_t k = 50;
  // Count the target itself when locating the K-th score of the threshold.
  bool include_target_in_threshold = false;
  // Promote to these users instead of everyone who has not interacted with the target.
  std::optional<std::vector<std::size_t>> users;

  void validate() const;  // ConfigError
};

struct TraceRecord {
  std::size_t iteration = 0;
  double promotion_loss = 0.0;
  std::size_t n_rec = 0;
  double grad_cosine = 0.0;
};

struct AttackTrace {
  std::vector<TraceRecord> records;
};

// eps_pct * ||row||_2 of the item's raw feature.
double resolve_budget(const data::FeatureMatrix& features, std::size_t item, double eps_pct);
double resolve_budget(double row_norm, double eps_pct);

// Users without a training interaction with `item`.
std::vector<std::size_t> default_users(const model::Content& content, std::size_t item);

// Clean-state constants of one promotion attack: the targeted users, their
// fused embeddings and their fixed K-th scores.
struct PromotionProblem {
  std::size_t item = 0;
  std::vector<std::size_t> users;
  Tensor user_rows;  // |users| x fused width
  std::vector<double> thresholds;
};

PromotionProblem make_problem(const metrics::RankingCache& cache, std::size_t item, std::vector<std::size_t> users,
                              bool include_target = false);

// Frozen model on one tape: parameters bound as constants.
struct AttackGraph {
  const model::ModelParams& params;
  const model::Content& content;
  ad::Tape& tape;
  model::ParamVars pv;

  AttackGraph(ad::Tape& t, const model::ModelParams& p, const model::Content& c)
      : params(p), content(c), tape(t), pv(model::bind(t, p, false)) {}
};

// (1/N) sum_u sigmoid(y_ui(delta) - y_uK); delta rows are 1 x d_v and 1 x d_t.
ad::Var promotion_loss(const AttackGraph& g, const PromotionProblem& prob, const model::SlotDelta& delta);

// Cosine between the visual and textual gradients of `inner`, recorded so it
// can be differentiated. When d_v != d_t both gradients are first mapped
// through their projections into the shared fused space.
ad::CosineResult gradient_alignment(const AttackGraph& g, const ad::Var& inner, const model::SlotDelta& delta);
ad::Var align_loss_for_attack(const AttackGraph& g, const PromotionProblem& prob, const model::SlotDelta& delta);

// Plain cosine of two modality gradients, projected when widths differ.
double modality_cosine(const model::ModelParams& params, std::span<const double> g_v, std::span<const double> g_t);

struct AttackResult {
  Perturbation perturbation;
  AttackTrace trace;
  double hit_before = 0.0;
  double hit_after = 0.0;
  std::optional<double> gain;
  double final_loss = 0.0;
};

AttackResult fgsm_promote(const model::ModelParams& params, const model::Content& content,
                          const metrics::RankingCache& cache, std::size_t item, const AttackConfig& config);
AttackResult pgd_promote(const model::ModelParams& params, const model::Content& content,
                         const metrics::RankingCache& cache, std::size_t item, const AttackConfig& config);
AttackResult promote(const model::ModelParams& params, const model::Content& content,
                     const metrics::RankingCache& cache, std::size_t item, const AttackConfig& config);

struct CampaignSummary {
  double mean_hit_before = 0.0;
  double mean_hit_after = 0.0;
  // Gain of the mean hits, and the mean of per-item gains over items with a
  // defined gain.
  std::optional<double> gain;
  std::optional<double> mean_item_gain;
  std::size_t undefined_gains = 0;
};

struct Campaign {
  AttackConfig config;
  std::vector<AttackResult> results;  // in target order
  CampaignSummary summary;
};

// Attacks every target independently; targets run in parallel.
Campaign run_campaign(const model::ModelParams& params, const model::Content& content,
                      const std::vector<std::size_t>& targets, const AttackConfig& config);

// target_item, variant, with_align, eps_pct, hit_before, hit_after, gain_pct plus a trailing mean row.
CsvTable attack_csv(const Campaign& c);
// target_item, iteration, promotion_loss, n_rec, grad_cosine
CsvTable trace_csv(const Campaign& c);

}  // namespace uatmc::attack
