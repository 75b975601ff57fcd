#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <memory>
#include <span>
#include <string>
#include <vector>

#include "uatmc/autodiff.hpp"
#include "uatmc/data.hpp"
#include "uatmc/tensor.hpp"

namespace uatmc::model {

enum class Kind : std::uint8_t { kConcat = 0, kGraph = 1 };
enum class Fusion : std::uint8_t { kIdentity = 0, kTanh = 1 };
// kShared: the user side fuses the mean content of the user's training items
// through the item projections. kIdOnly: a free per-user content vector.
enum class UserMode : std::uint8_t { kShared = 0, kIdOnly = 1 };

Kind parse_kind(const std::string& s);
Fusion parse_fusion(const std::string& s);
UserMode parse_user_mode(const std::string& s);
const char* name(Kind k);
const char* name(Fusion f);
const char* name(UserMode m);

struct ModelConfig {
  Kind kind = Kind::kConcat;
  Fusion fusion = Fusion::kTanh;
  UserMode user_mode = UserMode::kShared;
  std::size_t dim = 32;       // id embedding width
  std::size_t fuse_dim = 32;  // projected width per modality
  double init_std = 0.01;
};

struct ModelParams {
  ModelConfig config;
  Tensor user_emb;      // users x dim
  Tensor item_emb;      // items x dim
  Tensor proj_v;        // fuse_dim x d_v
  Tensor proj_t;        // fuse_dim x d_t
  Tensor user_content;  // users x 2*fuse_dim, kIdOnly only

  std::size_t num_users() const { return user_emb.rows(); }
  std::size_t num_items() const { return item_emb.rows(); }
  std::size_t dim_v() const { return proj_v.cols(); }
  std::size_t dim_t() const { return proj_t.cols(); }
  std::size_t fused_dim() const { return config.dim + 2 * config.fuse_dim; }

  // Trainable blocks in a fixed order.
  std::vector<std::pair<std::string, Tensor*>> blocks();
  std::vector<std::pair<std::string, const Tensor*>> blocks() const;

  void validate() const;  // DimensionError / NumericalError
  friend bool operator==(const ModelParams& a, const ModelParams& b);
};

ModelParams init_params(const ModelConfig& config, std::size_t users, std::size_t items, std::size_t d_v,
                        std::size_t d_t, std::uint64_t seed);

// Model inputs derived from data: the content each item and user contributes
// per modality, plus the factor with which a perturbation of an item's raw
// feature reaches its own content row. For the concat model the content is
// the raw feature (gain 1); for the graph model it is one symmetric-normalised
// propagation step over the training bipartite graph with self-loops.
struct Content {
  Kind kind = Kind::kConcat;
  Tensor item_v, item_t;  // items x d_m
  Tensor user_v, user_t;  // users x d_m
  std::vector<double> gain;
  std::vector<double> raw_norm_v, raw_norm_t;  // per-item L2 norm of raw features
  std::vector<std::vector<std::size_t>> seen;  // training items per user

  std::size_t num_users() const { return user_v.rows(); }
  std::size_t num_items() const { return item_v.rows(); }
};

std::shared_ptr<const Content> build_content(Kind kind, const data::InteractionTable& train,
                                             const data::FeatureMatrix& visual, const data::FeatureMatrix& textual);

// ---- tape encoding ---------------------------------------------------------

struct ParamVars {
  ad::Var user_emb, item_emb, proj_v, proj_t, user_content;
  std::vector<ad::Var> trainable() const;
};

// Leaves when `trainable`, constants otherwise.
ParamVars bind(ad::Tape& tape, const ModelParams& params, bool trainable);

// Raw-feature perturbations for a list of item slots: rows x d_v and rows x d_t.
struct SlotDelta {
  ad::Var v, t;
};

struct EncodedTriple {
  ad::Var h_u, h_plus, h_minus;
};

// Rows of fused item embeddings, one per entry of `items`.
ad::Var encode_items(const ParamVars& p, const ModelParams& params, const Content& content,
                     const std::vector<std::size_t>& items, const SlotDelta* delta = nullptr);
ad::Var encode_users(const ParamVars& p, const ModelParams& params, const Content& content,
                     const std::vector<std::size_t>& users);
EncodedTriple encode(const ParamVars& p, const ModelParams& params, const Content& content,
                     const std::vector<data::Triple>& triples, const SlotDelta* plus = nullptr,
                     const SlotDelta* minus = nullptr);

// ---- plain evaluation ------------------------------------------------------

// Inner product; DimensionError on width mismatch.
double score(std::span<const double> h_u, std::span<const double> h_i);

std::vector<double> fused_item(const ModelParams& params, const Content& content, std::size_t item,
                               std::span<const double> delta_v = {}, std::span<const double> delta_t = {});
Tensor fused_items(const ModelParams& params, const Content& content);
Tensor fused_users(const ModelParams& params, const Content& content);

// Users x items score matrix.
Tensor score_matrix(const Tensor& users, const Tensor& items);

struct ItemOverride {
  std::size_t item;
  std::span<const double> delta_v, delta_t;
};

inline constexpr double kSeenSentinel = -std::numeric_limits<double>::infinity();

std::vector<double> rank_all(const ModelParams& params, const Content& content, std::size_t user,
                             const std::vector<ItemOverride>& overrides = {}, bool exclude_seen = true);

// ---- checkpoints -----------------------------------------------------------

// How the parameters were trained: 0 untrained, 1 bpr, 2 uat, 3 uat_mc,
// followed by eps_d_pct, lambda and alpha.
using TrainingTag = std::array<double, 4>;

struct Checkpoint {
  ModelParams params;
  std::size_t epochs_completed = 0;
  TrainingTag training{};
};

void save_checkpoint(const std::filesystem::path& path, const Checkpoint& ckpt);
Checkpoint load_checkpoint(const std::filesystem::path& path);

}  // namespace uatmc::model
