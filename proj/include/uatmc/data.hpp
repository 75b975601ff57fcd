#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "uatmc/rng.hpp"
#include "uatmc/tensor.hpp"

namespace uatmc::data {

// Implicit-feedback interactions. `train` holds per-user sorted item ids; after
// a leave-one-out split `holdout` carries the single held-out item per user.
struct InteractionTable {
  std::size_t num_users = 0;
  std::size_t num_items = 0;
  std::vector<std::vector<std::size_t>> train;
  std::vector<std::optional<std::size_t>> holdout;

  static InteractionTable from_pairs(std::size_t users, std::size_t items,
                                     const std::vector<std::pair<std::size_t, std::size_t>>& pairs);

  bool has_split() const;
  bool in_train(std::size_t u, std::size_t i) const;
  std::size_t num_train() const;
  // Training plus held-out interactions.
  std::size_t num_interactions() const;
  // Interaction count per item over the full (pre-split) data.
  std::vector<std::size_t> item_counts() const;
  // Users that interacted with each item in training, ascending.
  std::vector<std::vector<std::size_t>> item_users() const;

  // Throws DataError when ids are out of range, a pair is duplicated, or a
  // held-out item also appears in training.
  void validate() const;
};

struct IdMap {
  std::vector<std::string> users;  // dense id -> raw id
  std::vector<std::string> items;
  bool empty() const { return users.empty() && items.empty(); }
};

struct LoadedInteractions {
  InteractionTable table;
  // Filled only when the file carried non-numeric ids.
  IdMap ids;
};

enum class Modality { kVisual, kTextual };
const char* modality_name(Modality m);

struct FeatureMatrix {
  Modality modality = Modality::kVisual;
  Tensor values;  // items x dims

  std::size_t rows() const { return values.rows(); }
  std::size_t cols() const { return values.cols(); }
  std::span<const double> row(std::size_t i) const { return values.row(i); }
};

struct DatasetStats {
  std::size_t num_users = 0;
  std::size_t num_items = 0;
  std::size_t num_interactions = 0;
  double sparsity_pct = 0.0;

  static DatasetStats from_counts(std::size_t users, std::size_t items, std::size_t interactions);
  static DatasetStats of(const InteractionTable& t);
};

// TSV `user<TAB>item`, duplicates dropped. '#' lines are comments, except that
// `# users=N items=M` (written by save_interactions) declares counts. When any
// id is not a non-negative integer, ids are densified in order of first
// appearance and, if `persist_id_maps`, written next to `path` as
// `<path>.users.tsv` / `<path>.items.tsv` (`raw_id<TAB>dense_id`).
LoadedInteractions load_interactions(const std::filesystem::path& path, bool persist_id_maps = true);
void save_interactions(const std::filesystem::path& path, const InteractionTable& table);
void save_id_map(const std::filesystem::path& path, const std::vector<std::string>& raw_ids);

// Binary little-endian: "MMFE", u32 version = 1, u64 rows, u64 cols, f64 payload.
FeatureMatrix load_features(const std::filesystem::path& path, Modality modality,
                            std::optional<std::size_t> expected_rows = std::nullopt);
void save_features(const std::filesystem::path& path, const FeatureMatrix& features);

struct SynthConfig {
  std::size_t num_users = 2000;
  std::size_t num_items = 1000;
  std::size_t latent_dim = 8;
  std::size_t dim_v = 32;
  std::size_t dim_t = 32;
  std::size_t min_user_interactions = 10;
  std::size_t max_user_interactions = 30;
  double noise = 0.5;          // std of the preference noise
  double feature_noise = 0.1;  // std of the additive feature noise
  double user_factor_spread = 1.0;
  double popularity_std = 0.5;
  // 0 = independent visual/textual mixing, 1 = both modalities share one mixing.
  double mixing_overlap = 0.0;
  std::size_t unpopular_count = 100;
  std::size_t unpopular_interactions = 5;
};

struct SynthData {
  InteractionTable table;
  FeatureMatrix visual;
  FeatureMatrix textual;
};

SynthData synth_generate(const SynthConfig& config, std::uint64_t seed);

// Holds out one uniformly chosen training item for every user with >= 2
// interactions; users with fewer keep everything for training.
InteractionTable split_leave_one_out(InteractionTable table, std::uint64_t seed);

struct Triple {
  std::size_t user;
  std::size_t pos;
  std::size_t neg;
};

class TripleSampler {
 public:
  TripleSampler(const InteractionTable& table, std::uint64_t seed);

  std::vector<Triple> sample(std::size_t batch_size);
  std::size_t eligible_users() const { return users_.size(); }

 private:
  const InteractionTable& table_;
  std::vector<std::size_t> users_;  // users with >= 1 training item and >= 1 negative
  Rng rng_;
};

}  // namespace uatmc::data
