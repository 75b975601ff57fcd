#pragma once

#include <cstdint>
#include <functional>
#include <string>
#include <vector>

#include "uatmc/autodiff.hpp"
#include "uatmc/csv.hpp"
#include "uatmc/data.hpp"
#include "uatmc/model.hpp"

namespace uatmc::defense {

enum class Mode { kBpr, kUat, kUatMc };
enum class OptimizerKind { kSgd, kAdam };

Mode parse_mode(const std::string& s);
OptimizerKind parse_optimizer(const std::string& s);
const char* name(Mode m);
const char* name(OptimizerKind o);

struct DefenseConfig {
  Mode mode = Mode::kUatMc;
  double lambda = 1.0;
  double alpha = 1.0;
  double beta = 1e-4;
  double eta = 0.01;
  double eps_d_pct = 0.1;
  std::size_t batch_size = 256;
  std::size_t max_epochs = 50;
  std::size_t patience = 100;
  OptimizerKind optimizer = OptimizerKind::kSgd;
  bool mean_loss = false;  // BPR terms averaged instead of summed over the batch
  std::size_t eval_k = 10;
  std::uint64_t seed = 0;

  void validate() const;  // ConfigError
};

// sum (or mean) of -ln sigmoid(h_u.h_+ - h_u.h_-) over the batch rows.
ad::Var bpr_loss(const model::EncodedTriple& e, bool mean = false);
ad::Var bpr_loss(const model::ParamVars& pv, const model::ModelParams& params, const model::Content& content,
                 const std::vector<data::Triple>& triples, bool mean = false);

// Perturbations of the positive and negative item slots of a batch, one row per triple.
struct BatchDelta {
  Tensor v_plus, t_plus, v_minus, t_minus;
  std::size_t zero_rows = 0;  // rows left at zero because their gradient vanished
};

BatchDelta zero_delta(std::size_t batch, std::size_t d_v, std::size_t d_t);

// BPR over perturbation-aware encodings; DimensionError on shape mismatch.
ad::Var adversarial_bpr_loss(const model::ParamVars& pv, const model::ModelParams& params,
                             const model::Content& content, const std::vector<data::Triple>& triples,
                             const BatchDelta& delta, bool mean = false);

// Leaves for the four perturbation blocks of one batch.
struct DeltaVars {
  model::SlotDelta plus, minus;
  std::vector<ad::Var> all() const { return {plus.v, plus.t, minus.v, minus.t}; }
};

// cos(G_v+, G_t+) + cos(G_v-, G_t-) where G are create-graph gradients of
// `adv_loss` w.r.t. the perturbation blocks. Gradients are compared in the
// projected space when d_v != d_t.
struct AlignTerm {
  ad::Var value;
  bool degenerate = false;  // either cosine had a vanishing gradient
};
AlignTerm alignment_loss(const model::ParamVars& pv, const model::ModelParams& params, const ad::Var& adv_loss,
                         const DeltaVars& delta);

// Value and gradient of the alignment term w.r.t. the four perturbation
// blocks at `at`, with parameters frozen.
struct AlignProbe {
  double value = 0.0;
  bool degenerate = false;
  std::vector<Tensor> grads;  // v_plus, t_plus, v_minus, t_minus
};
AlignProbe probe_alignment(const model::ModelParams& params, const model::Content& content,
                           const std::vector<data::Triple>& triples, const BatchDelta& at, bool mean = false);

struct MaxPhaseResult {
  BatchDelta delta;
  double adv_loss = 0.0;  // at zero perturbation
  double align = 0.0;     // zero unless mode is kUatMc
  bool align_degenerate = false;
};

// One normalised-gradient assignment per row: delta_r = eps_r g_r / |g_r| with
// eps_r = eps_d_pct times the raw feature norm of the row's item. Parameters
// are read only.
MaxPhaseResult max_phase(const model::ModelParams& params, const model::Content& content,
                         const std::vector<data::Triple>& triples, const DefenseConfig& config);

class Optimizer {
 public:
  Optimizer(OptimizerKind kind, double eta, const model::ModelParams& shape);
  void step(model::ModelParams& params, const std::vector<Tensor>& grads);

 private:
  OptimizerKind kind_;
  double eta_;
  std::size_t t_ = 0;
  std::vector<Tensor> m_, v_;
};

struct MinPhaseResult {
  double clean_loss = 0.0;
  double adv_loss = 0.0;
  std::vector<Tensor> grads;  // in ModelParams::blocks() order
};

// Gradient of L_BPR + lambda L'_BPR(delta) + beta |Theta|^2 (the middle term
// is skipped when `delta` is null), then one optimiser step. NumericalError
// on a non-finite loss or gradient.
MinPhaseResult min_phase(model::ModelParams& params, const model::Content& content,
                         const std::vector<data::Triple>& triples, const BatchDelta* delta,
                         const DefenseConfig& config, Optimizer& opt);

struct EpochLog {
  std::size_t epoch = 0;  // 1-based, continues across resumes
  double clean_loss = 0.0;
  double adv_loss = 0.0;
  double align_mean = 0.0;
  double val_recall10 = 0.0;
  double seconds = 0.0;
};

struct TrainLog {
  std::vector<EpochLog> epochs;
  std::size_t best_epoch = 0;
  double best_recall = -1.0;
  bool early_stopped = false;
};

struct TrainResult {
  model::ModelParams params;  // best validation checkpoint
  TrainLog log;
  std::size_t epochs_completed = 0;
};

using EpochCallback = std::function<void(const EpochLog&)>;

// Runs `config.mode` for up to max_epochs epochs after `start_epoch`, with
// early stopping on holdout Recall@eval_k. Each epoch samples from its own
// seed, so a resumed run draws the same batches as an uninterrupted one.
TrainResult train(model::ModelParams params, const data::InteractionTable& split, const model::Content& content,
                  const DefenseConfig& config, std::size_t start_epoch = 0, const EpochCallback& on_epoch = {});

TrainResult pretrain(model::ModelParams params, const data::InteractionTable& split, const model::Content& content,
                     DefenseConfig config, std::size_t start_epoch = 0);
TrainResult uat_mc_train(model::ModelParams params, const data::InteractionTable& split,
                         const model::Content& content, const DefenseConfig& config, std::size_t start_epoch = 0);

// epoch, clean_loss, adv_loss, align_mean, val_recall10, seconds. Wall times
// are written as 0 unless `wall_time` is set, keeping the file reproducible.
CsvTable train_log_csv(const TrainLog& log, bool wall_time = false);

}  // namespace uatmc::defense
