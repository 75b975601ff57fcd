#pragma once

#include <optional>
#include <string>
#include <vector>

#include "uatmc/attack.hpp"
#include "uatmc/csv.hpp"

namespace uatmc::diagnostics {

// Row r holds the gradient of user r's promotion term w.r.t. the target's
// visual / textual perturbation.
struct PerUserGradients {
  std::vector<std::size_t> users;
  Tensor g_v;  // users x d_v
  Tensor g_t;  // users x d_t
};

// Gradients of sigmoid(y_ui(delta) - y_uK) per user, at delta = 0 unless
// `delta_v` / `delta_t` are given.
PerUserGradients per_user_gradients(const model::ModelParams& params, const model::Content& content,
                                    const attack::PromotionProblem& prob, std::span<const double> delta_v = {},
                                    std::span<const double> delta_t = {});

// Column sums of a per-user gradient block.
std::vector<double> aggregate(const Tensor& per_user);

// cos(g_u, G) * |g_u| / norm_sum; zero when g_u or G vanishes.
// NumericalError when norm_sum is not positive.
double directional_contribution(std::span<const double> g_u, std::span<const double> g_total, double norm_sum);

struct UserContribution {
  std::size_t user = 0;
  std::vector<double> g_v, g_t;  // empty unless kept
  double c_v = 0.0, c_t = 0.0;
};

// Contributions of every row of `grads`. NumericalError if every gradient of a
// modality is zero.
std::vector<UserContribution> contributions(const PerUserGradients& grads, bool keep_gradients = false);

struct UserSets {
  std::vector<std::size_t> visual, textual;
};

// Top `k_users` ids by c_v and by c_t, descending, ties to the lower id.
// ContractError when k_users exceeds the number of contributions.
UserSets top_user_sets(const std::vector<UserContribution>& contribs, std::size_t k_users);

// |A n B| / |A u B| over id sets; DomainError when both are empty.
double jaccard(const std::vector<std::size_t>& a, const std::vector<std::size_t>& b);
std::size_t intersection_size(const std::vector<std::size_t>& a, const std::vector<std::size_t>& b);

std::size_t default_k_users(std::size_t num_users);

struct MismatchReport {
  std::size_t item = 0;
  UserSets sets;
  double jaccard = 0.0;
  std::size_t overlap = 0;
  std::vector<UserContribution> contributions;
};

struct HistogramBin {
  double low = 0.0, high = 0.0;
  std::size_t count = 0;
};

// Bins of width `bin_width` over [0, 1]; the last bin is closed.
std::vector<HistogramBin> histogram(const std::vector<double>& values, double bin_width);

struct SurveyConfig {
  std::size_t k = 50;                     // threshold rank
  std::optional<std::size_t> k_users;     // default_k_users(|U_p|) when unset
  double bin_width = 0.05;
  bool include_target_in_threshold = false;
  bool keep_gradients = false;
  void validate() const;  // ConfigError
};

struct SkippedItem {
  std::size_t item = 0;
  std::string reason;
};

struct Survey {
  std::vector<MismatchReport> reports;  // target order, skipped items omitted
  std::vector<SkippedItem> skipped;
  std::vector<HistogramBin> bins;
  double mean_jaccard = 0.0;
};

Survey mismatch_survey(const model::ModelParams& params, const model::Content& content,
                       const std::vector<std::size_t>& targets, const SurveyConfig& config);

CsvTable report_csv(const Survey& s);          // item, jaccard, overlap
CsvTable histogram_csv(const Survey& s);       // bin_low, bin_high, count + mean note
CsvTable contribution_csv(const Survey& s);    // item, user, c_v, c_t

}  // namespace uatmc::diagnostics
