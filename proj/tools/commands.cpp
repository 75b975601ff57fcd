#include "commands.hpp"

#include <CLI11.hpp>
#include <fmt/format.h>

#include <algorithm>
#include <chrono>
#include <fstream>
#include <sstream>

#include "uatmc/csv.hpp"
#include "uatmc/errors.hpp"
#include "uatmc/metrics.hpp"

#ifndef UATMC_VERSION
#define UATMC_VERSION "dev"
#endif

namespace uatmc::cli {

namespace {

bool g_quiet = false;

template <typename... Args>
void note(fmt::format_string<Args...> f, Args&&... args) {
  if (!g_quiet) fmt::print(stderr, "{}\n", fmt::format(f, std::forward<Args>(args)...));
}

std::uint64_t root_seed(const Config& c) { return static_cast<std::uint64_t>(c.get_int("seed")); }

void ensure_dir(const fs::path& dir) {
  std::error_code ec;
  fs::create_directories(dir, ec);
  if (ec || !fs::is_directory(dir)) throw DataError("cannot create output directory " + dir.string());
}

void write_text(const fs::path& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw DataError("cannot write " + path.string());
  out << text;
  if (!out) throw DataError("write failed for " + path.string());
}

void write_csv(const CsvTable& t, const fs::path& out, const std::string& name, Manifest& m) {
  t.write(out / name);
  m.add_output(out, name);
}

void write_json(const nlohmann::json& j, const fs::path& out, const std::string& name, Manifest& m) {
  write_text(out / name, j.dump(2) + "\n");
  m.add_output(out, name);
}

double mode_code(defense::Mode m) {
  switch (m) {
    case defense::Mode::kBpr: return 1;
    case defense::Mode::kUat: return 2;
    case defense::Mode::kUatMc: return 3;
  }
  return 0;
}

std::string defense_label(const model::TrainingTag& tag) {
  switch (static_cast<int>(tag[0])) {
    case 2: return "uat";
    case 3: return "uat_mc";
    default: return "none";
  }
}

std::string attack_label(const attack::AttackConfig& a) {
  return std::string(attack::name(a.variant)) + (a.with_align ? "+align" : "");
}

model::Checkpoint read_checkpoint(const fs::path& path, Manifest& m) {
  auto ck = model::load_checkpoint(path);
  m.add_input(path);
  return ck;
}

std::shared_ptr<const model::Content> content_for(const model::ModelParams& p, const Dataset& d) {
  if (p.num_users() != d.split.num_users || p.num_items() != d.split.num_items || p.dim_v() != d.visual.cols() ||
      p.dim_t() != d.textual.cols()) {
    throw DataError("checkpoint does not match the dataset shape");
  }
  return model::build_content(p.config.kind, d.split, d.visual, d.textual);
}

std::vector<std::size_t> pick_targets(const Config& c, const data::InteractionTable& full, std::size_t count,
                                      const std::string& tag) {
  auto sel = metrics::select_targets(full, count, c.get_size("attack.popularity_threshold"),
                                     metrics::parse_popularity_mode(c.get_string("attack.popularity_mode")),
                                     derive_seed(root_seed(c), tag));
  if (sel.short_of_count) {
    note("warning: only {} items qualify as targets, {} requested", sel.qualifying, count);
  }
  if (sel.items.empty()) throw DataError("no item qualifies as an attack target");
  return sel.items;
}

defense::EpochCallback epoch_printer(const char* what) {
  return [what](const defense::EpochLog& e) {
    note("{} epoch {}: loss {:.5f} adv {:.5f} align {:.4f} recall@10 {:.4f}", what, e.epoch, e.clean_loss,
         e.adv_loss, e.align_mean, e.val_recall10);
  };
}

struct Evaluation {
  attack::Campaign campaign;
  metrics::RankMetrics rank;
};

Evaluation evaluate(const Config& c, const model::ModelParams& params, const model::Content& content,
                    const Dataset& d, const std::vector<std::size_t>& targets, const attack::AttackConfig& a) {
  Evaluation e;
  e.campaign = attack::run_campaign(params, content, targets, a);
  e.rank = metrics::recall_ndcg(params, content, d.split, c.get_size("eval.k_rank"));
  return e;
}

metrics::MetricsRow metrics_row(const std::string& run_id, const model::TrainingTag& tag,
                                const attack::AttackConfig& a, const Evaluation& e) {
  metrics::MetricsRow r;
  r.run_id = run_id;
  r.defense = defense_label(tag);
  r.attack = attack_label(a);
  if (tag[0] >= 2) {
    r.eps_d = tag[1];
    r.lambda = tag[2];
    r.alpha = tag[3];
  }
  r.eps_a = a.eps_pct;
  r.hit_before = e.campaign.summary.mean_hit_before;
  r.hit_after = e.campaign.summary.mean_hit_after;
  r.gain = e.campaign.summary.gain;
  r.recall10 = e.rank.recall;
  r.ndcg10 = e.rank.ndcg;
  return r;
}

std::string gain_cell(const std::optional<double>& g) { return g ? fmt_num(*g) : "undefined"; }

double median(std::vector<double> v) {
  std::sort(v.begin(), v.end());
  const std::size_t n = v.size();
  return n % 2 ? v[n / 2] : 0.5 * (v[n / 2 - 1] + v[n / 2]);
}

}  // namespace

void set_quiet(bool quiet) { g_quiet = quiet; }

std::string provenance() {
  return fmt::format("uatmc {} (compiler {}, C++{})", UATMC_VERSION, __VERSION__, __cplusplus / 100 % 100);
}

Manifest::Manifest(std::string command, const Config& config)
    : command_(std::move(command)), config_(config.to_json()) {}

void Manifest::add_input(const fs::path& path) { inputs_[path.string()] = sha256_file(path); }

void Manifest::add_output(const fs::path& out_dir, const std::string& name) {
  outputs_[name] = sha256_file(out_dir / name);
}

std::string Manifest::run_id() const {
  nlohmann::json key{{"command", command_}, {"config", config_}};
  // Inputs are identified by content, not by where they live.
  std::vector<std::string> digests;
  for (const auto& [p, h] : inputs_) digests.push_back(h);
  std::sort(digests.begin(), digests.end());
  key["inputs"] = digests;
  return sha256_hex(key.dump()).substr(0, 16);
}

nlohmann::json Manifest::to_json() const {
  nlohmann::json j;
  j["run_id"] = run_id();
  j["command"] = command_;
  j["provenance"] = provenance();
  j["config"] = config_;
  j["inputs"] = inputs_;
  j["outputs"] = outputs_;
  return j;
}

void Manifest::write(const fs::path& out_dir) const { write_text(out_dir / "manifest.json", to_json().dump(2) + "\n"); }

Dataset load_dataset(const Config& c, Manifest* manifest) {
  const fs::path dir = c.get_string("data.path");
  const fs::path inter = dir / "interactions.tsv", vis = dir / "visual.mmfe", txt = dir / "textual.mmfe";
  Dataset d;
  d.full = data::load_interactions(inter).table;
  d.visual = data::load_features(vis, data::Modality::kVisual, d.full.num_items);
  d.textual = data::load_features(txt, data::Modality::kTextual, d.full.num_items);
  d.split = data::split_leave_one_out(d.full, derive_seed(root_seed(c), "split"));
  if (manifest) {
    manifest->add_input(inter);
    manifest->add_input(vis);
    manifest->add_input(txt);
  }
  return d;
}

void cmd_gen_data(const Config& c, const fs::path& out) {
  ensure_dir(out);
  Manifest m("gen-data", c);
  const auto s = data::synth_generate(synth_config(c), derive_seed(root_seed(c), "synth"));
  data::save_interactions(out / "interactions.tsv", s.table);
  m.add_output(out, "interactions.tsv");
  data::save_features(out / "visual.mmfe", s.visual);
  m.add_output(out, "visual.mmfe");
  data::save_features(out / "textual.mmfe", s.textual);
  m.add_output(out, "textual.mmfe");
  const auto st = data::DatasetStats::of(s.table);
  write_json({{"users", st.num_users},
              {"items", st.num_items},
              {"interactions", st.num_interactions},
              {"sparsity_pct", st.sparsity_pct}},
             out, "stats.json", m);
  m.write(out);
  note("wrote {} users, {} items, {} interactions to {}", st.num_users, st.num_items, st.num_interactions,
       out.string());
}

void cmd_train(const Config& c, const fs::path& out, const std::optional<fs::path>& resume) {
  ensure_dir(out);
  Manifest m("train", c);
  const auto d = load_dataset(c, &m);
  model::ModelParams params;
  std::size_t start = 0;
  if (resume) {
    auto ck = read_checkpoint(*resume, m);
    params = std::move(ck.params);
    start = ck.epochs_completed;
  } else {
    params = model::init_params(model_config(c), d.full.num_users, d.full.num_items, d.visual.cols(),
                                d.textual.cols(), derive_seed(root_seed(c), "init"));
  }
  const auto content = content_for(params, d);
  auto cfg = pretrain_config(c);
  auto r = defense::train(std::move(params), d.split, *content, cfg, start, epoch_printer("train"));
  model::save_checkpoint(out / "model.uatm", {r.params, r.epochs_completed, {1, 0, 0, 0}});
  m.add_output(out, "model.uatm");
  write_csv(defense::train_log_csv(r.log, c.get_bool("log.wall_time")), out, "train_log.csv", m);
  m.write(out);
  note("best recall@10 {:.4f} at epoch {}", r.log.best_recall, r.log.best_epoch);
}

void cmd_defend(const Config& c, const fs::path& checkpoint, const fs::path& out,
                const std::optional<fs::path>& resume) {
  ensure_dir(out);
  Manifest m("defend", c);
  const auto d = load_dataset(c, &m);
  auto ck = read_checkpoint(resume ? *resume : checkpoint, m);
  const std::size_t start = resume ? ck.epochs_completed : 0;
  const auto content = content_for(ck.params, d);
  auto cfg = defense_config(c);
  auto r = defense::train(std::move(ck.params), d.split, *content, cfg, start, epoch_printer("defend"));
  model::save_checkpoint(out / "model.uatm",
                         {r.params, r.epochs_completed, {mode_code(cfg.mode), cfg.eps_d_pct, cfg.lambda, cfg.alpha}});
  m.add_output(out, "model.uatm");
  write_csv(defense::train_log_csv(r.log, c.get_bool("log.wall_time")), out, "train_log.csv", m);
  m.write(out);
}

void cmd_attack(const Config& c, const fs::path& checkpoint, const fs::path& out) {
  ensure_dir(out);
  Manifest m("attack", c);
  const auto d = load_dataset(c, &m);
  const auto ck = read_checkpoint(checkpoint, m);
  const auto content = content_for(ck.params, d);
  const auto a = attack_config(c);
  const auto targets = pick_targets(c, d.full, c.get_size("attack.targets"), "targets");
  const auto e = evaluate(c, ck.params, *content, d, targets, a);
  write_csv(attack::attack_csv(e.campaign), out, "attack.csv", m);
  write_csv(attack::trace_csv(e.campaign), out, "trace.csv", m);
  write_csv(metrics::metrics_csv({metrics_row(m.run_id(), ck.training, a, e)}), out, "metrics.csv", m);
  m.write(out);
  const auto& s = e.campaign.summary;
  note("{} targets: hit@{} {:.4f} -> {:.4f}, gain {}", targets.size(), a.k, s.mean_hit_before, s.mean_hit_after,
       gain_cell(s.gain));
}

void cmd_diagnose(const Config& c, const fs::path& checkpoint, const fs::path& out) {
  ensure_dir(out);
  Manifest m("diagnose", c);
  const auto d = load_dataset(c, &m);
  const auto ck = read_checkpoint(checkpoint, m);
  const auto content = content_for(ck.params, d);
  const auto targets = pick_targets(c, d.full, c.get_size("diagnose.targets"), "diagnose-targets");
  const auto s = diagnostics::mismatch_survey(ck.params, *content, targets, survey_config(c));
  write_csv(diagnostics::report_csv(s), out, "mismatch_items.csv", m);
  write_csv(diagnostics::histogram_csv(s), out, "mismatch_hist.csv", m);
  if (c.get_bool("diagnose.keep_per_user")) write_csv(diagnostics::contribution_csv(s), out, "mismatch_users.csv", m);
  CsvTable skipped({"item", "reason"});
  for (const auto& k : s.skipped) {
    std::string reason = k.reason;
    std::replace(reason.begin(), reason.end(), ',', ';');
    skipped.add_row({std::to_string(k.item), reason});
  }
  write_csv(skipped, out, "mismatch_skipped.csv", m);
  m.write(out);
  note("{} items surveyed, {} skipped, mean jaccard {:.4f}", s.reports.size(), s.skipped.size(), s.mean_jaccard);
}

void cmd_sweep(const Config& c, const fs::path& checkpoint, const fs::path& out) {
  ensure_dir(out);
  Manifest m("sweep", c);
  const auto d = load_dataset(c, &m);
  const auto base = read_checkpoint(checkpoint, m);
  const auto content = content_for(base.params, d);
  const auto targets = pick_targets(c, d.full, c.get_size("attack.targets"), "targets");
  const std::string kind = c.get_string("sweep.kind");
  const std::string run_id = m.run_id();

  auto defend = [&](defense::DefenseConfig cfg) {
    note("sweep: defending with eps_d {} lambda {} alpha {}", cfg.eps_d_pct, cfg.lambda, cfg.alpha);
    auto r = defense::train(base.params, d.split, *content, cfg, 0);
    return std::pair{std::move(r.params), model::TrainingTag{mode_code(cfg.mode), cfg.eps_d_pct, cfg.lambda, cfg.alpha}};
  };

  std::vector<metrics::MetricsRow> rows;
  std::unique_ptr<CsvTable> grid;
  if (kind == "eps") {
    grid = std::make_unique<CsvTable>(std::vector<std::string>{"eps_d", "eps_a", "gain", "hit_before", "hit_after"});
    for (double eps_d : c.get_list("sweep.eps_d")) {
      auto cfg = defense_config(c);
      cfg.eps_d_pct = eps_d;
      cfg.validate();
      const auto [params, tag] = defend(cfg);
      for (double eps_a : c.get_list("sweep.eps_a")) {
        auto a = attack_config(c);
        a.eps_pct = eps_a;
        a.validate();
        const auto e = evaluate(c, params, *content, d, targets, a);
        const auto& s = e.campaign.summary;
        grid->add_row({fmt_num(eps_d), fmt_num(eps_a), gain_cell(s.gain), fmt_num(s.mean_hit_before),
                       fmt_num(s.mean_hit_after)});
        rows.push_back(metrics_row(run_id, tag, a, e));
      }
    }
  } else if (kind == "lambda" || kind == "alpha") {
    const std::string col = kind;
    grid = std::make_unique<CsvTable>(std::vector<std::string>{col, "ndcg10", "recall10", "gain"});
    for (double v : c.get_list(kind == "lambda" ? "sweep.lambdas" : "sweep.alphas")) {
      auto cfg = defense_config(c);
      (kind == "lambda" ? cfg.lambda : cfg.alpha) = v;
      cfg.validate();
      const auto [params, tag] = defend(cfg);
      const auto a = attack_config(c);
      const auto e = evaluate(c, params, *content, d, targets, a);
      grid->add_row({fmt_num(v), fmt_num(e.rank.ndcg), fmt_num(e.rank.recall), gain_cell(e.campaign.summary.gain)});
      rows.push_back(metrics_row(run_id, tag, a, e));
    }
  } else {
    throw ConfigError("sweep.kind must be eps, lambda or alpha");
  }
  write_csv(*grid, out, "sweep.csv", m);
  write_csv(metrics::metrics_csv(rows), out, "metrics.csv", m);
  m.write(out);
}

void cmd_bench(const Config& c, const fs::path& out) {
  ensure_dir(out);
  Manifest m("bench", c);
  const auto s = data::synth_generate(synth_config(c), derive_seed(root_seed(c), "synth"));
  const auto split = data::split_leave_one_out(s.table, derive_seed(root_seed(c), "split"));
  const auto mc = model_config(c);
  const auto init = model::init_params(mc, s.table.num_users, s.table.num_items, s.visual.cols(), s.textual.cols(),
                                       derive_seed(root_seed(c), "init"));
  const auto content = model::build_content(mc.kind, split, s.visual, s.textual);
  const std::size_t batches = c.get_size("bench.batches"), warmup = c.get_size("bench.warmup");
  const std::size_t batch = c.get_size("bench.batch_size");
  if (batches == 0 || batch == 0) throw ConfigError("bench.batches and bench.batch_size must be >= 1");

  CsvTable timing({"mode", "batch", "seconds"});
  nlohmann::json summary{{"d", mc.dim}, {"fuse_dim", mc.fuse_dim}, {"batch_size", batch}, {"batches", batches}};
  std::map<std::string, double> med;
  for (auto mode : {defense::Mode::kBpr, defense::Mode::kUat, defense::Mode::kUatMc}) {
    auto cfg = defense_config(c);
    cfg.mode = mode;
    cfg.batch_size = batch;
    auto params = init;
    defense::Optimizer opt(cfg.optimizer, cfg.eta, params);
    data::TripleSampler sampler(split, derive_seed(root_seed(c), "bench"));
    std::vector<double> secs;
    for (std::size_t b = 0; b < warmup + batches; ++b) {
      const auto triples = sampler.sample(batch);
      const auto t0 = std::chrono::steady_clock::now();
      if (mode == defense::Mode::kBpr) {
        defense::min_phase(params, *content, triples, nullptr, cfg, opt);
      } else {
        const auto mp = defense::max_phase(params, *content, triples, cfg);
        defense::min_phase(params, *content, triples, &mp.delta, cfg, opt);
      }
      const double dt = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
      if (b < warmup) continue;
      secs.push_back(dt);
      timing.add_row({defense::name(mode), std::to_string(b - warmup), fmt_num(dt)});
    }
    med[defense::name(mode)] = median(secs);
    summary["median_seconds"][defense::name(mode)] = med[defense::name(mode)];
  }
  summary["uat_mc_over_uat"] = med["uat_mc"] / med["uat"];
  summary["uat_over_bpr"] = med["uat"] / med["bpr"];
  write_csv(timing, out, "timing.csv", m);
  write_json(summary, out, "bench.json", m);
  m.write(out);
  note("median per batch: bpr {:.4g}s, uat {:.4g}s, uat_mc {:.4g}s (ratio {:.3f})", med["bpr"], med["uat"],
       med["uat_mc"], med["uat_mc"] / med["uat"]);
}

void cmd_report(const std::vector<fs::path>& inputs, const fs::path& out) {
  if (inputs.empty()) throw ConfigError("report needs at least one input");
  ensure_dir(out);
  std::unique_ptr<CsvTable> merged;
  for (const auto& in : inputs) {
    const fs::path file = fs::is_directory(in) ? in / "metrics.csv" : in;
    if (!verify_csv_checksum(file)) throw DataError("missing or corrupt checksum in " + file.string());
    std::ifstream f(file);
    std::string line;
    std::vector<std::string> header;
    while (std::getline(f, line)) {
      if (line.empty() || line[0] == '#') continue;
      std::vector<std::string> cells;
      std::stringstream ss(line);
      for (std::string cell; std::getline(ss, cell, ',');) cells.push_back(cell);
      if (header.empty()) {
        header = cells;
        if (!merged) merged = std::make_unique<CsvTable>(header);
        if (header != merged->header()) throw DataError("metrics header mismatch in " + file.string());
        continue;
      }
      merged->add_row(cells);
    }
  }
  merged->write(out / "report.csv");
  const auto& h = merged->header();
  std::string md = "|";
  for (const auto& col : h) md += " " + col + " |";
  md += "\n|";
  for (std::size_t k = 0; k < h.size(); ++k) md += "---|";
  md += "\n";
  for (const auto& r : merged->data()) {
    md += "|";
    for (const auto& cell : r) md += " " + cell + " |";
    md += "\n";
  }
  write_text(out / "report.md", md);
  if (!g_quiet) fmt::print("{}", md);
}

int run_cli(int argc, char** argv) {
  CLI::App app{"Promotion attacks and coordinated adversarial training for multimodal recommenders"};
  app.require_subcommand(1);
  app.fallthrough();
  bool quiet = false;
  app.add_flag("-q,--quiet", quiet, "Suppress progress output");

  std::optional<std::string> config_path;
  std::vector<std::string> overrides;
  std::string out, checkpoint;
  std::optional<std::string> resume;
  std::vector<std::string> inputs;

  auto common = [&](CLI::App* sub) {
    sub->add_option("-c,--config", config_path, "JSON config or run manifest");
    sub->add_option("-s,--set", overrides, "Override a config key (key=value)");
    sub->add_option("-o,--out", out, "Output directory")->required();
  };
  auto* gen = app.add_subcommand("gen-data", "Generate a synthetic dataset");
  common(gen);
  auto* train = app.add_subcommand("train", "Pretrain with BPR");
  common(train);
  train->add_option("--resume", resume, "Continue from a checkpoint");
  auto* defend = app.add_subcommand("defend", "Adversarial training from a pretrained checkpoint");
  common(defend);
  defend->add_option("--checkpoint", checkpoint, "Pretrained checkpoint")->required();
  defend->add_option("--resume", resume, "Continue from a defended checkpoint");
  auto* atk = app.add_subcommand("attack", "Promotion attack campaign");
  common(atk);
  atk->add_option("--checkpoint", checkpoint, "Model checkpoint")->required();
  auto* diag = app.add_subcommand("diagnose", "Cross-modal gradient mismatch survey");
  common(diag);
  diag->add_option("--checkpoint", checkpoint, "Model checkpoint")->required();
  auto* sweep = app.add_subcommand("sweep", "Defense/attack hyperparameter sweep");
  common(sweep);
  sweep->add_option("--checkpoint", checkpoint, "Pretrained checkpoint")->required();
  auto* bench = app.add_subcommand("bench", "Per-batch training cost");
  common(bench);
  auto* report = app.add_subcommand("report", "Merge metrics CSVs");
  report->add_option("-i,--input", inputs, "Run directory or metrics CSV")->required();
  report->add_option("-o,--out", out, "Output directory")->required();

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return 2;
  }
  set_quiet(quiet);

  try {
    const auto cfg = [&] {
      return load_config(config_path ? std::optional<fs::path>(*config_path) : std::nullopt, overrides);
    };
    const std::optional<fs::path> res = resume ? std::optional<fs::path>(*resume) : std::nullopt;
    if (gen->parsed()) cmd_gen_data(cfg(), out);
    if (train->parsed()) cmd_train(cfg(), out, res);
    if (defend->parsed()) cmd_defend(cfg(), checkpoint, out, res);
    if (atk->parsed()) cmd_attack(cfg(), checkpoint, out);
    if (diag->parsed()) cmd_diagnose(cfg(), checkpoint, out);
    if (sweep->parsed()) cmd_sweep(cfg(), checkpoint, out);
    if (bench->parsed()) cmd_bench(cfg(), out);
    if (report->parsed()) cmd_report(std::vector<fs::path>(inputs.begin(), inputs.end()), out);
  } catch (const ConfigError& e) {
    fmt::print(stderr, "config error: {}\n", e.what());
    return 2;
  } catch (const ParseError& e) {
    fmt::print(stderr, "data error: {}\n", e.what());
    return 3;
  } catch (const DataError& e) {
    fmt::print(stderr, "data error: {}\n", e.what());
    return 3;
  } catch (const NumericalError& e) {
    fmt::print(stderr, "numerical error: {}\n", e.what());
    return 4;
  } catch (const std::exception& e) {
    fmt::print(stderr, "error: {}\n", e.what());
    return 1;
  }
  return 0;
}

}  // namespace uatmc::cli
