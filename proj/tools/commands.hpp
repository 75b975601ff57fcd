#pragma once

#include <filesystem>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "config.hpp"

namespace uatmc::cli {

namespace fs = std::filesystem;

// Record of one command run: what went in, what came out. Contains no
// timestamps, so identical runs write identical manifests.
class Manifest {
 public:
  Manifest(std::string command, const Config& config);

  void add_input(const fs::path& path);
  void add_output(const fs::path& out_dir, const std::string& name);
  std::string run_id() const;
  nlohmann::json to_json() const;
  void write(const fs::path& out_dir) const;

 private:
  std::string command_;
  nlohmann::json config_;
  std::map<std::string, std::string> inputs_, outputs_;
};

std::string provenance();

struct Dataset {
  data::InteractionTable full;
  data::InteractionTable split;
  data::FeatureMatrix visual, textual;
};

// data.path/{interactions.tsv, visual.mmfe, textual.mmfe}, split with the
// configured seed.
Dataset load_dataset(const Config& c, Manifest* manifest = nullptr);

void cmd_gen_data(const Config& c, const fs::path& out);
void cmd_train(const Config& c, const fs::path& out, const std::optional<fs::path>& resume = std::nullopt);
void cmd_defend(const Config& c, const fs::path& checkpoint, const fs::path& out,
                const std::optional<fs::path>& resume = std::nullopt);
void cmd_attack(const Config& c, const fs::path& checkpoint, const fs::path& out);
void cmd_diagnose(const Config& c, const fs::path& checkpoint, const fs::path& out);
void cmd_sweep(const Config& c, const fs::path& checkpoint, const fs::path& out);
void cmd_bench(const Config& c, const fs::path& out);
void cmd_report(const std::vector<fs::path>& inputs, const fs::path& out);

// Parses argv, runs the subcommand and maps errors onto exit codes:
// 0 success, 1 other failure, 2 config, 3 data, 4 numerical.
int run_cli(int argc, char** argv);

void set_quiet(bool quiet);

}  // namespace uatmc::cli
