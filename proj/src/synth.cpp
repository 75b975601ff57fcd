#include <algorithm>
#include <cmath>
#include <numeric>

#include "uatmc/data.hpp"
#include "uatmc/errors.hpp"

namespace uatmc::data {

namespace {

void check_config(const SynthConfig& c) {
  if (c.num_users == 0 || c.num_items == 0) throw ConfigError("synth: users and items must be positive");
  if (c.latent_dim == 0) throw ConfigError("synth: latent_dim must be >= 1");
  if (c.dim_v == 0 || c.dim_t == 0) throw ConfigError("synth: feature dims must be positive");
  if (c.min_user_interactions == 0 || c.min_user_interactions > c.max_user_interactions) {
    throw ConfigError("synth: need 1 <= min_user_interactions <= max_user_interactions");
  }
  if (c.noise < 0 || c.feature_noise < 0 || c.user_factor_spread < 0 || c.popularity_std < 0) {
    throw ConfigError("synth: noise and spread parameters must be non-negative");
  }
  if (c.mixing_overlap < 0 || c.mixing_overlap > 1) throw ConfigError("synth: mixing_overlap must be in [0, 1]");
  if (c.mixing_overlap > 0 && c.dim_v != c.dim_t) {
    throw ConfigError("synth: mixing_overlap > 0 requires dim_v == dim_t");
  }
  if (c.unpopular_count > c.num_items) throw ConfigError("synth: unpopular_count exceeds num_items");
  if (c.unpopular_count > 0 && (c.unpopular_interactions == 0 || c.unpopular_interactions > c.num_users)) {
    throw ConfigError("synth: unpopular_interactions must be in [1, num_users]");
  }
  const double cells = static_cast<double>(c.num_users) * static_cast<double>(c.num_items);
  const double requested = static_cast<double>(c.num_users) * static_cast<double>(c.max_user_interactions) +
                           static_cast<double>(c.unpopular_count) * static_cast<double>(c.unpopular_interactions);
  if (requested > cells || c.max_user_interactions > c.num_items - c.unpopular_count) {
    throw ConfigError("synth: requested interactions exceed users * items");
  }
}

Tensor gaussian(std::size_t rows, std::size_t cols, double stddev, Rng& rng) {
  std::normal_distribution<double> n(0.0, 1.0);
  Tensor t = Tensor::zeros({rows, cols});
  for (double& v : t.mutable_data()) v = stddev * n(rng);
  return t;
}

// Indices of the `k` largest scores, ties broken by lower index.
std::vector<std::size_t> top_k(const std::vector<double>& s, const std::vector<std::size_t>& candidates, std::size_t k) {
  std::vector<std::size_t> idx = candidates;
  auto better = [&](std::size_t a, std::size_t b) { return s[a] > s[b] || (s[a] == s[b] && a < b); };
  std::partial_sort(idx.begin(), idx.begin() + static_cast<std::ptrdiff_t>(k), idx.end(), better);
  idx.resize(k);
  return idx;
}

FeatureMatrix mix(Modality m, const Tensor& mixing, const Tensor& q, double noise, Rng& rng) {
  std::normal_distribution<double> n(0.0, 1.0);
  const std::size_t items = q.rows(), r = q.cols(), d = mixing.rows();
  FeatureMatrix fm;
  fm.modality = m;
  fm.values = Tensor::zeros({items, d});
  for (std::size_t i = 0; i < items; ++i) {
    for (std::size_t j = 0; j < d; ++j) {
      double acc = 0.0;
      for (std::size_t k = 0; k < r; ++k) acc += mixing.at(j, k) * q.at(i, k);
      fm.values.at(i, j) = acc + noise * n(rng);
    }
  }
  return fm;
}

}  // namespace

SynthData synth_generate(const SynthConfig& c, std::uint64_t seed) {
  check_config(c);
  Rng factor_rng = make_rng(seed, "synth.factors");
  Rng noise_rng = make_rng(seed, "synth.noise");
  Rng feature_rng = make_rng(seed, "synth.features");
  Rng layout_rng = make_rng(seed, "synth.layout");
  const std::size_t r = c.latent_dim;

  Tensor base = gaussian(1, r, 0.5, factor_rng);
  Tensor p = gaussian(c.num_users, r, c.user_factor_spread, factor_rng);
  for (std::size_t u = 0; u < c.num_users; ++u) {
    for (std::size_t k = 0; k < r; ++k) p.at(u, k) += base.at(0, k);
  }
  Tensor q = gaussian(c.num_items, r, 1.0, factor_rng);
  Tensor pop = gaussian(1, c.num_items, c.popularity_std, factor_rng);

  std::vector<std::size_t> perm(c.num_items);
  std::iota(perm.begin(), perm.end(), 0);
  std::shuffle(perm.begin(), perm.end(), layout_rng);
  std::vector<bool> unpopular(c.num_items, false);
  for (std::size_t k = 0; k < c.unpopular_count; ++k) unpopular[perm[k]] = true;
  std::vector<std::size_t> normal_items, pool_items;
  for (std::size_t i = 0; i < c.num_items; ++i) (unpopular[i] ? pool_items : normal_items).push_back(i);

  // Noisy affinity for every user-item pair.
  std::normal_distribution<double> n01(0.0, 1.0);
  std::vector<std::vector<double>> affinity(c.num_users, std::vector<double>(c.num_items));
  for (std::size_t u = 0; u < c.num_users; ++u) {
    for (std::size_t i = 0; i < c.num_items; ++i) {
      double s = pop.at(0, i);
      for (std::size_t k = 0; k < r; ++k) s += p.at(u, k) * q.at(i, k);
      affinity[u][i] = s + c.noise * n01(noise_rng);
    }
  }

  std::uniform_int_distribution<std::size_t> count_dist(c.min_user_interactions, c.max_user_interactions);
  std::vector<std::pair<std::size_t, std::size_t>> pairs;
  std::vector<std::size_t> item_count(c.num_items, 0);
  std::vector<std::vector<bool>> has(c.num_users, std::vector<bool>(c.num_items, false));
  auto add = [&](std::size_t u, std::size_t i) {
    pairs.emplace_back(u, i);
    has[u][i] = true;
    ++item_count[i];
  };
  for (std::size_t u = 0; u < c.num_users; ++u) {
    for (std::size_t i : top_k(affinity[u], normal_items, count_dist(layout_rng))) add(u, i);
  }

  std::vector<std::size_t> all_users(c.num_users);
  std::iota(all_users.begin(), all_users.end(), 0);
  std::vector<double> column(c.num_users);
  for (std::size_t i : pool_items) {
    for (std::size_t u = 0; u < c.num_users; ++u) column[u] = affinity[u][i];
    for (std::size_t u : top_k(column, all_users, c.unpopular_interactions)) add(u, i);
  }

  // Keep the exact-count pool unambiguous: no ordinary item may share its count.
  if (c.unpopular_count > 0) {
    for (std::size_t i : normal_items) {
      if (item_count[i] != c.unpopular_interactions) continue;
      std::vector<std::size_t> free_users;
      for (std::size_t u = 0; u < c.num_users; ++u) {
        if (!has[u][i]) free_users.push_back(u);
      }
      for (std::size_t u = 0; u < c.num_users; ++u) column[u] = affinity[u][i];
      add(top_k(column, free_users, 1).front(), i);
    }
  }

  SynthData out;
  out.table = InteractionTable::from_pairs(c.num_users, c.num_items, pairs);

  Tensor mv = gaussian(c.dim_v, r, 1.0 / std::sqrt(static_cast<double>(r)), feature_rng);
  Tensor mt = gaussian(c.dim_t, r, 1.0 / std::sqrt(static_cast<double>(r)), feature_rng);
  if (c.mixing_overlap > 0) {
    const double a = c.mixing_overlap, b = std::sqrt(1.0 - a * a);
    for (std::size_t k = 0; k < mt.size(); ++k) mt[k] = a * mv[k] + b * mt[k];
  }
  out.visual = mix(Modality::kVisual, mv, q, c.feature_noise, feature_rng);
  out.textual = mix(Modality::kTextual, mt, q, c.feature_noise, feature_rng);
  return out;
}

}  // namespace uatmc::data
