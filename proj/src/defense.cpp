#include "uatmc/defense.hpp"

#include <chrono>
#include <cmath>

#include "uatmc/errors.hpp"
#include "uatmc/metrics.hpp"

namespace uatmc::defense {

Mode parse_mode(const std::string& s) {
  if (s == "bpr") return Mode::kBpr;
  if (s == "uat") return Mode::kUat;
  if (s == "uat_mc") return Mode::kUatMc;
  throw ConfigError("unknown defense mode '" + s + "'");
}

OptimizerKind parse_optimizer(const std::string& s) {
  if (s == "sgd") return OptimizerKind::kSgd;
  if (s == "adam") return OptimizerKind::kAdam;
  throw ConfigError("unknown optimizer '" + s + "'");
}

const char* name(Mode m) {
  switch (m) {
    case Mode::kBpr: return "bpr";
    case Mode::kUat: return "uat";
    case Mode::kUatMc: return "uat_mc";
  }
  return "?";
}

const char* name(OptimizerKind o) { return o == OptimizerKind::kSgd ? "sgd" : "adam"; }

void DefenseConfig::validate() const {
  if (!(lambda >= 0.0)) throw ConfigError("defense lambda must be >= 0");
  if (!(alpha >= 0.0)) throw ConfigError("defense alpha must be >= 0");
  if (!(beta >= 0.0)) throw ConfigError("defense beta must be >= 0");
  if (!(eta >= 0.0) || !std::isfinite(eta)) throw ConfigError("defense eta must be finite and >= 0");
  if (!(eps_d_pct > 0.0 && eps_d_pct <= 1.0)) throw ConfigError("defense eps_d_pct must be in (0, 1]");
  if (batch_size == 0) throw ConfigError("defense batch_size must be >= 1");
  if (eval_k == 0) throw ConfigError("defense eval_k must be >= 1");
}

ad::Var bpr_loss(const model::EncodedTriple& e, bool mean) {
  ad::Var margin = ad::sub(ad::row_dot(e.h_u, e.h_plus), ad::row_dot(e.h_u, e.h_minus));
  ad::Var ls = ad::log_sigmoid(margin);
  return ad::neg(mean ? ad::mean(ls) : ad::sum(ls));
}

ad::Var bpr_loss(const model::ParamVars& pv, const model::ModelParams& params, const model::Content& content,
                 const std::vector<data::Triple>& triples, bool mean) {
  return bpr_loss(model::encode(pv, params, content, triples), mean);
}

BatchDelta zero_delta(std::size_t batch, std::size_t d_v, std::size_t d_t) {
  return {Tensor::zeros({batch, d_v}), Tensor::zeros({batch, d_t}), Tensor::zeros({batch, d_v}),
          Tensor::zeros({batch, d_t}), 0};
}

namespace {

void check_delta(const BatchDelta& d, std::size_t batch, std::size_t d_v, std::size_t d_t) {
  auto ok = [&](const Tensor& t, std::size_t w) { return t.rank() == 2 && t.rows() == batch && t.cols() == w; };
  if (!ok(d.v_plus, d_v) || !ok(d.t_plus, d_t) || !ok(d.v_minus, d_v) || !ok(d.t_minus, d_t)) {
    throw DimensionError("perturbation blocks must be batch x feature width");
  }
}

DeltaVars leaves(ad::Tape& tape, const BatchDelta& d) {
  return {{tape.leaf(d.v_plus), tape.leaf(d.t_plus)}, {tape.leaf(d.v_minus), tape.leaf(d.t_minus)}};
}

ad::CosineResult modality_cosine(const model::ParamVars& pv, const model::ModelParams& params, const ad::Var& g_v,
                                 const ad::Var& g_t) {
  if (params.dim_v() == params.dim_t()) return ad::cosine(g_v, g_t);
  return ad::cosine(ad::matmul(g_v, pv.proj_v, false, true), ad::matmul(g_t, pv.proj_t, false, true));
}

}  // namespace

ad::Var adversarial_bpr_loss(const model::ParamVars& pv, const model::ModelParams& params,
                             const model::Content& content, const std::vector<data::Triple>& triples,
                             const BatchDelta& delta, bool mean) {
  check_delta(delta, triples.size(), params.dim_v(), params.dim_t());
  ad::Tape& tape = pv.user_emb.tape();
  model::SlotDelta plus{tape.constant(delta.v_plus), tape.constant(delta.t_plus)};
  model::SlotDelta minus{tape.constant(delta.v_minus), tape.constant(delta.t_minus)};
  return bpr_loss(model::encode(pv, params, content, triples, &plus, &minus), mean);
}

AlignTerm alignment_loss(const model::ParamVars& pv, const model::ModelParams& params, const ad::Var& adv_loss,
                         const DeltaVars& delta) {
  auto g = adv_loss.tape().grad_graph(adv_loss, delta.all());
  auto pos = modality_cosine(pv, params, g[0], g[1]);
  auto neg = modality_cosine(pv, params, g[2], g[3]);
  return {ad::add(pos.value, neg.value), pos.degenerate || neg.degenerate};
}

AlignProbe probe_alignment(const model::ModelParams& params, const model::Content& content,
                           const std::vector<data::Triple>& triples, const BatchDelta& at, bool mean) {
  check_delta(at, triples.size(), params.dim_v(), params.dim_t());
  ad::Tape tape;
  auto pv = model::bind(tape, params, false);
  auto d = leaves(tape, at);
  auto e = model::encode(pv, params, content, triples, &d.plus, &d.minus);
  auto align = alignment_loss(pv, params, bpr_loss(e, mean), d);
  AlignProbe out;
  out.value = align.value.value().item();
  out.degenerate = align.degenerate;
  out.grads = tape.grad(align.value, d.all());
  return out;
}

MaxPhaseResult max_phase(const model::ModelParams& params, const model::Content& content,
                         const std::vector<data::Triple>& triples, const DefenseConfig& config) {
  const std::size_t b = triples.size();
  if (b == 0) throw ContractError("max_phase: empty batch");
  ad::Tape tape;
  auto pv = model::bind(tape, params, false);
  auto d = leaves(tape, zero_delta(b, params.dim_v(), params.dim_t()));
  auto e = model::encode(pv, params, content, triples, &d.plus, &d.minus);
  ad::Var adv = bpr_loss(e, config.mean_loss);

  MaxPhaseResult out;
  out.adv_loss = adv.value().item();
  ad::Var objective = adv;
  if (config.mode == Mode::kUatMc) {
    auto align = alignment_loss(pv, params, adv, d);
    out.align = align.value.value().item();
    out.align_degenerate = align.degenerate;
    objective = ad::add(adv, ad::scale(align.value, config.alpha));
  }
  auto grads = tape.grad(objective, d.all());

  out.delta = zero_delta(b, params.dim_v(), params.dim_t());
  Tensor* blocks[4] = {&out.delta.v_plus, &out.delta.t_plus, &out.delta.v_minus, &out.delta.t_minus};
  for (std::size_t k = 0; k < 4; ++k) {
    const auto& norms = (k % 2 == 0) ? content.raw_norm_v : content.raw_norm_t;
    for (std::size_t r = 0; r < b; ++r) {
      const std::size_t item = k < 2 ? triples[r].pos : triples[r].neg;
      auto g = grads[k].row(r);
      const double n = l2_norm(g);
      if (!std::isfinite(n)) throw NumericalError("non-finite max-phase gradient");
      if (n == 0.0) {
        ++out.delta.zero_rows;
        continue;
      }
      const double eps = config.eps_d_pct * norms[item];
      auto dst = blocks[k]->mutable_row(r);
      for (std::size_t c = 0; c < g.size(); ++c) dst[c] = eps * g[c] / n;
    }
  }
  return out;
}

Optimizer::Optimizer(OptimizerKind kind, double eta, const model::ModelParams& shape) : kind_(kind), eta_(eta) {
  if (kind_ == OptimizerKind::kAdam) {
    for (const auto& [n, t] : shape.blocks()) {
      m_.push_back(Tensor::zeros_like(*t));
      v_.push_back(Tensor::zeros_like(*t));
    }
  }
}

void Optimizer::step(model::ModelParams& params, const std::vector<Tensor>& grads) {
  auto blocks = params.blocks();
  if (grads.size() != blocks.size()) throw DimensionError("optimizer: gradient count mismatch");
  ++t_;
  constexpr double b1 = 0.9, b2 = 0.999, tiny = 1e-8;
  const double c1 = 1.0 - std::pow(b1, static_cast<double>(t_));
  const double c2 = 1.0 - std::pow(b2, static_cast<double>(t_));
  for (std::size_t k = 0; k < blocks.size(); ++k) {
    auto p = blocks[k].second->mutable_data();
    auto g = grads[k].data();
    if (g.size() != p.size()) throw DimensionError("optimizer: gradient shape mismatch");
    if (kind_ == OptimizerKind::kSgd) {
      for (std::size_t j = 0; j < p.size(); ++j) p[j] -= eta_ * g[j];
      continue;
    }
    auto m = m_[k].mutable_data();
    auto v = v_[k].mutable_data();
    for (std::size_t j = 0; j < p.size(); ++j) {
      m[j] = b1 * m[j] + (1.0 - b1) * g[j];
      v[j] = b2 * v[j] + (1.0 - b2) * g[j] * g[j];
      p[j] -= eta_ * (m[j] / c1) / (std::sqrt(v[j] / c2) + tiny);
    }
  }
}

MinPhaseResult min_phase(model::ModelParams& params, const model::Content& content,
                         const std::vector<data::Triple>& triples, const BatchDelta* delta,
                         const DefenseConfig& config, Optimizer& opt) {
  if (triples.empty()) throw ContractError("min_phase: empty batch");
  ad::Tape tape;
  auto pv = model::bind(tape, params, true);
  const auto wrt = pv.trainable();
  ad::Var clean = bpr_loss(pv, params, content, triples, config.mean_loss);
  ad::Var total = clean;
  MinPhaseResult out;
  out.clean_loss = clean.value().item();
  if (delta) {
    ad::Var adv = adversarial_bpr_loss(pv, params, content, triples, *delta, config.mean_loss);
    out.adv_loss = adv.value().item();
    total = ad::add(total, ad::scale(adv, config.lambda));
  }
  ad::Var reg = ad::sum(ad::square(wrt[0]));
  for (std::size_t k = 1; k < wrt.size(); ++k) reg = ad::add(reg, ad::sum(ad::square(wrt[k])));
  total = ad::add(total, ad::scale(reg, config.beta));
  if (!std::isfinite(total.value().item())) throw NumericalError("training loss is not finite");
  out.grads = tape.grad(total, wrt);
  for (const auto& g : out.grads) {
    if (!g.all_finite()) throw NumericalError("training gradient is not finite");
  }
  opt.step(params, out.grads);
  return out;
}

TrainResult train(model::ModelParams params, const data::InteractionTable& split, const model::Content& content,
                  const DefenseConfig& config, std::size_t start_epoch, const EpochCallback& on_epoch) {
  config.validate();
  params.validate();
  if (!split.has_split()) throw DataError("training needs a leave-one-out split for validation");
  Optimizer opt(config.optimizer, config.eta, params);
  const std::size_t batches = std::max<std::size_t>(1, (split.num_train() + config.batch_size - 1) / config.batch_size);

  TrainResult res;
  res.params = params;
  res.epochs_completed = start_epoch;
  std::size_t stale = 0;
  for (std::size_t epoch = start_epoch + 1; epoch <= config.max_epochs; ++epoch) {
    const auto t0 = std::chrono::steady_clock::now();
    data::TripleSampler sampler(split, derive_seed(config.seed, "epoch/" + std::to_string(epoch)));
    EpochLog log;
    log.epoch = epoch;
    for (std::size_t b = 0; b < batches; ++b) {
      const auto triples = sampler.sample(config.batch_size);
      if (config.mode == Mode::kBpr) {
        log.clean_loss += min_phase(params, content, triples, nullptr, config, opt).clean_loss;
        continue;
      }
      const auto mp = max_phase(params, content, triples, config);
      const auto step = min_phase(params, content, triples, &mp.delta, config, opt);
      log.clean_loss += step.clean_loss;
      log.adv_loss += step.adv_loss;
      log.align_mean += mp.align;
    }
    const auto nb = static_cast<double>(batches);
    log.clean_loss /= nb;
    log.adv_loss /= nb;
    log.align_mean /= nb;
    log.val_recall10 = metrics::recall_ndcg(params, content, split, config.eval_k).recall;
    log.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    res.log.epochs.push_back(log);
    res.epochs_completed = epoch;
    if (log.val_recall10 > res.log.best_recall) {
      res.log.best_recall = log.val_recall10;
      res.log.best_epoch = epoch;
      res.params = params;
      stale = 0;
    } else {
      ++stale;
    }
    if (on_epoch) on_epoch(log);
    if (stale >= config.patience) {
      res.log.early_stopped = true;
      break;
    }
  }
  return res;
}

TrainResult pretrain(model::ModelParams params, const data::InteractionTable& split, const model::Content& content,
                     DefenseConfig config, std::size_t start_epoch) {
  config.mode = Mode::kBpr;
  return train(std::move(params), split, content, config, start_epoch);
}

TrainResult uat_mc_train(model::ModelParams params, const data::InteractionTable& split,
                         const model::Content& content, const DefenseConfig& config, std::size_t start_epoch) {
  return train(std::move(params), split, content, config, start_epoch);
}

CsvTable train_log_csv(const TrainLog& log, bool wall_time) {
  CsvTable t({"epoch", "clean_loss", "adv_loss", "align_mean", "val_recall10", "seconds"});
  for (const auto& e : log.epochs) {
    t.add_row({std::to_string(e.epoch), fmt_num(e.clean_loss), fmt_num(e.adv_loss), fmt_num(e.align_mean),
               fmt_num(e.val_recall10), fmt_num(wall_time ? e.seconds : 0.0)});
  }
  return t;
}

}  // namespace uatmc::defense
