#include "config.hpp"

#include <fmt/format.h>

#include <fstream>

#include "uatmc/errors.hpp"

namespace uatmc::cli {

namespace {

using List = std::vector<double>;

const char* type_name(const Value& v) {
  switch (v.index()) {
    case 0: return "bool";
    case 1: return "integer";
    case 2: return "number";
    case 3: return "string";
    default: return "list of numbers";
  }
}

}  // namespace

Config Config::defaults() {
  Config c;
  auto& v = c.values_;
  v["seed"] = std::int64_t{42};
  v["data.path"] = std::string("data");

  v["synth.users"] = std::int64_t{2000};
  v["synth.items"] = std::int64_t{1000};
  v["synth.latent_dim"] = std::int64_t{8};
  v["synth.dim_v"] = std::int64_t{32};
  v["synth.dim_t"] = std::int64_t{32};
  v["synth.min_interactions"] = std::int64_t{10};
  v["synth.max_interactions"] = std::int64_t{30};
  v["synth.noise"] = 0.5;
  v["synth.feature_noise"] = 0.1;
  v["synth.user_spread"] = 1.0;
  v["synth.popularity_std"] = 2.0;
  v["synth.mixing_overlap"] = 0.0;
  v["synth.unpopular_count"] = std::int64_t{100};
  v["synth.unpopular_interactions"] = std::int64_t{5};

  v["model.kind"] = std::string("concat");
  v["model.fusion"] = std::string("tanh");
  v["model.user_mode"] = std::string("shared");
  v["model.dim"] = std::int64_t{32};
  v["model.fuse_dim"] = std::int64_t{32};
  v["model.init_std"] = 0.1;

  v["train.optimizer"] = std::string("sgd");
  v["train.eta"] = 0.2;
  v["train.beta"] = 1e-4;
  v["train.batch_size"] = std::int64_t{256};
  v["train.max_epochs"] = std::int64_t{40};
  v["train.patience"] = std::int64_t{100};
  v["train.mean_loss"] = true;

  v["defense.mode"] = std::string("uat_mc");
  v["defense.lambda"] = 1.0;
  v["defense.alpha"] = 1.0;
  v["defense.beta"] = 1e-4;
  v["defense.eta"] = 0.05;
  v["defense.eps_d_pct"] = 0.1;
  v["defense.optimizer"] = std::string("sgd");
  v["defense.batch_size"] = std::int64_t{256};
  v["defense.max_epochs"] = std::int64_t{15};
  v["defense.patience"] = std::int64_t{100};
  v["defense.mean_loss"] = true;

  v["attack.variant"] = std::string("pgd");
  v["attack.eps_a_pct"] = 0.1;
  v["attack.pgd_steps"] = std::int64_t{10};
  v["attack.with_align"] = false;
  v["attack.align_weight"] = 0.001;
  v["attack.k"] = std::int64_t{50};
  v["attack.include_target"] = false;
  v["attack.targets"] = std::int64_t{100};
  v["attack.popularity_threshold"] = std::int64_t{5};
  v["attack.popularity_mode"] = std::string("exact");

  v["eval.k_hit"] = std::int64_t{50};
  v["eval.k_rank"] = std::int64_t{10};

  v["diagnose.targets"] = std::int64_t{100};
  v["diagnose.k_users"] = std::int64_t{0};
  v["diagnose.bin_width"] = 0.05;
  v["diagnose.keep_per_user"] = true;

  v["sweep.kind"] = std::string("eps");
  v["sweep.eps_d"] = List{0.025, 0.05, 0.075, 0.10};
  v["sweep.eps_a"] = List{0.025, 0.05, 0.075, 0.10};
  v["sweep.lambdas"] = List{1, 2, 3, 4, 5, 6, 7, 8, 9, 10};
  v["sweep.alphas"] = List{0.1, 1, 2, 3, 4, 5, 6, 7, 8, 9, 10};

  v["bench.batches"] = std::int64_t{50};
  v["bench.batch_size"] = std::int64_t{256};
  v["bench.warmup"] = std::int64_t{3};

  v["log.wall_time"] = false;
  return c;
}

void Config::assign(const std::string& key, const nlohmann::json& j) {
  auto it = values_.find(key);
  if (it == values_.end()) throw ConfigError("unknown config key '" + key + "'");
  Value& slot = it->second;
  auto mismatch = [&] {
    return ConfigError(fmt::format("config key '{}' expects a {}, got {}", key, type_name(slot), j.dump()));
  };
  switch (slot.index()) {
    case 0:
      if (!j.is_boolean()) throw mismatch();
      slot = j.get<bool>();
      break;
    case 1:
      if (!j.is_number_integer()) throw mismatch();
      slot = j.get<std::int64_t>();
      break;
    case 2:
      if (!j.is_number()) throw mismatch();
      slot = j.get<double>();
      break;
    case 3:
      if (!j.is_string()) throw mismatch();
      slot = j.get<std::string>();
      break;
    default: {
      if (!j.is_array()) throw mismatch();
      List out;
      for (const auto& e : j) {
        if (!e.is_number()) throw mismatch();
        out.push_back(e.get<double>());
      }
      slot = std::move(out);
    }
  }
}

void Config::merge_json(const nlohmann::json& j) {
  if (!j.is_object()) throw ConfigError("config must be a JSON object");
  if (j.contains("command") && j.contains("config") && j.contains("run_id")) {
    merge_json(j.at("config"));
    return;
  }
  auto walk = [&](auto&& self, const nlohmann::json& node, const std::string& prefix) -> void {
    for (auto it = node.begin(); it != node.end(); ++it) {
      const std::string key = prefix.empty() ? it.key() : prefix + "." + it.key();
      if (it->is_object()) {
        self(self, *it, key);
      } else {
        assign(key, *it);
      }
    }
  };
  walk(walk, j, "");
}

void Config::merge_file(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot read config " + path.string());
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(in);
  } catch (const nlohmann::json::parse_error& e) {
    throw ConfigError("invalid JSON in " + path.string() + ": " + e.what());
  }
  merge_json(j);
}

void Config::set(const std::string& assignment) {
  const auto eq = assignment.find('=');
  if (eq == std::string::npos || eq == 0) throw ConfigError("override must look like key=value: " + assignment);
  const std::string key = assignment.substr(0, eq), text = assignment.substr(eq + 1);
  const Value& slot = at(key);
  nlohmann::json j;
  try {
    switch (slot.index()) {
      case 3:
        j = text;
        break;
      case 4:
        j = nlohmann::json::parse("[" + text + "]");
        break;
      default:
        j = nlohmann::json::parse(text);
    }
  } catch (const nlohmann::json::parse_error&) {
    throw ConfigError(fmt::format("cannot parse value '{}' for key '{}'", text, key));
  }
  assign(key, j);
}

const Value& Config::at(const std::string& key) const {
  auto it = values_.find(key);
  if (it == values_.end()) throw ConfigError("unknown config key '" + key + "'");
  return it->second;
}

bool Config::get_bool(const std::string& key) const { return std::get<bool>(at(key)); }
std::int64_t Config::get_int(const std::string& key) const { return std::get<std::int64_t>(at(key)); }
double Config::get_double(const std::string& key) const { return std::get<double>(at(key)); }
const std::string& Config::get_string(const std::string& key) const { return std::get<std::string>(at(key)); }
const List& Config::get_list(const std::string& key) const { return std::get<List>(at(key)); }

std::size_t Config::get_size(const std::string& key) const {
  const auto v = get_int(key);
  if (v < 0) throw ConfigError("config key '" + key + "' must be non-negative");
  return static_cast<std::size_t>(v);
}

nlohmann::json Config::to_json() const {
  nlohmann::json j = nlohmann::json::object();
  for (const auto& [k, v] : values_) std::visit([&](const auto& x) { j[k] = x; }, v);
  return j;
}

Config load_config(const std::optional<std::filesystem::path>& path, const std::vector<std::string>& overrides) {
  Config c = Config::defaults();
  if (path) c.merge_file(*path);
  for (const auto& o : overrides) c.set(o);
  return c;
}

data::SynthConfig synth_config(const Config& c) {
  data::SynthConfig s;
  s.num_users = c.get_size("synth.users");
  s.num_items = c.get_size("synth.items");
  s.latent_dim = c.get_size("synth.latent_dim");
  s.dim_v = c.get_size("synth.dim_v");
  s.dim_t = c.get_size("synth.dim_t");
  s.min_user_interactions = c.get_size("synth.min_interactions");
  s.max_user_interactions = c.get_size("synth.max_interactions");
  s.noise = c.get_double("synth.noise");
  s.feature_noise = c.get_double("synth.feature_noise");
  s.user_factor_spread = c.get_double("synth.user_spread");
  s.popularity_std = c.get_double("synth.popularity_std");
  s.mixing_overlap = c.get_double("synth.mixing_overlap");
  s.unpopular_count = c.get_size("synth.unpopular_count");
  s.unpopular_interactions = c.get_size("synth.unpopular_interactions");
  return s;
}

model::ModelConfig model_config(const Config& c) {
  model::ModelConfig m;
  m.kind = model::parse_kind(c.get_string("model.kind"));
  m.fusion = model::parse_fusion(c.get_string("model.fusion"));
  m.user_mode = model::parse_user_mode(c.get_string("model.user_mode"));
  m.dim = c.get_size("model.dim");
  m.fuse_dim = c.get_size("model.fuse_dim");
  m.init_std = c.get_double("model.init_std");
  if (m.dim == 0 || m.fuse_dim == 0) throw ConfigError("model.dim and model.fuse_dim must be >= 1");
  if (!(m.init_std > 0.0)) throw ConfigError("model.init_std must be positive");
  return m;
}

namespace {

defense::DefenseConfig trainer(const Config& c, const std::string& section) {
  defense::DefenseConfig d;
  d.beta = c.get_double(section + ".beta");
  d.eta = c.get_double(section + ".eta");
  d.optimizer = defense::parse_optimizer(c.get_string(section + ".optimizer"));
  d.batch_size = c.get_size(section + ".batch_size");
  d.max_epochs = c.get_size(section + ".max_epochs");
  d.patience = c.get_size(section + ".patience");
  d.mean_loss = c.get_bool(section + ".mean_loss");
  d.eval_k = c.get_size("eval.k_rank");
  d.seed = derive_seed(static_cast<std::uint64_t>(c.get_int("seed")), section);
  return d;
}

}  // namespace

defense::DefenseConfig pretrain_config(const Config& c) {
  auto d = trainer(c, "train");
  d.mode = defense::Mode::kBpr;
  d.validate();
  return d;
}

defense::DefenseConfig defense_config(const Config& c) {
  auto d = trainer(c, "defense");
  d.mode = defense::parse_mode(c.get_string("defense.mode"));
  d.lambda = c.get_double("defense.lambda");
  d.alpha = c.get_double("defense.alpha");
  d.eps_d_pct = c.get_double("defense.eps_d_pct");
  d.validate();
  return d;
}

attack::AttackConfig attack_config(const Config& c) {
  attack::AttackConfig a;
  a.variant = attack::parse_variant(c.get_string("attack.variant"));
  a.eps_pct = c.get_double("attack.eps_a_pct");
  a.pgd_steps = c.get_size("attack.pgd_steps");
  a.with_align = c.get_bool("attack.with_align");
  a.align_weight = c.get_double("attack.align_weight");
  a.k = c.get_size("attack.k");
  a.include_target_in_threshold = c.get_bool("attack.include_target");
  if (a.k != c.get_size("eval.k_hit")) throw ConfigError("attack.k and eval.k_hit must agree");
  a.validate();
  return a;
}

diagnostics::SurveyConfig survey_config(const Config& c) {
  diagnostics::SurveyConfig s;
  s.k = c.get_size("attack.k");
  if (const auto k = c.get_size("diagnose.k_users"); k > 0) s.k_users = k;
  s.bin_width = c.get_double("diagnose.bin_width");
  s.include_target_in_threshold = c.get_bool("attack.include_target");
  s.validate();
  return s;
}

}  // namespace uatmc::cli
