#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <string>
#include <variant>
#include <vector>

#include <json.hpp>

#include "uatmc/attack.hpp"
#include "uatmc/data.hpp"
#include "uatmc/defense.hpp"
#include "uatmc/diagnostics.hpp"
#include "uatmc/model.hpp"

namespace uatmc::cli {

using Value = std::variant<bool, std::int64_t, double, std::string, std::vector<double>>;

// Flat dotted-key configuration. Every key has a typed default; unknown keys
// and type mismatches raise ConfigError.
class Config {
 public:
  static Config defaults();

  // Nested objects flatten to dotted keys. A run manifest is accepted too; its
  // config snapshot is used.
  void merge_json(const nlohmann::json& j);
  void merge_file(const std::filesystem::path& path);
  // `key=value`, value parsed according to the key's type.
  void set(const std::string& assignment);

  bool has(const std::string& key) const { return values_.count(key) != 0; }
  bool get_bool(const std::string& key) const;
  std::int64_t get_int(const std::string& key) const;
  std::size_t get_size(const std::string& key) const;
  double get_double(const std::string& key) const;
  const std::string& get_string(const std::string& key) const;
  const std::vector<double>& get_list(const std::string& key) const;

  nlohmann::json to_json() const;  // flat, keys sorted

 private:
  void assign(const std::string& key, const nlohmann::json& v);
  const Value& at(const std::string& key) const;
  std::map<std::string, Value> values_;
};

Config load_config(const std::optional<std::filesystem::path>& path, const std::vector<std::string>& overrides);

data::SynthConfig synth_config(const Config& c);
model::ModelConfig model_config(const Config& c);
defense::DefenseConfig pretrain_config(const Config& c);
defense::DefenseConfig defense_config(const Config& c);
attack::AttackConfig attack_config(const Config& c);
diagnostics::SurveyConfig survey_config(const Config& c);

}  // namespace uatmc::cli
