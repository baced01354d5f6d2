#pragma once

#include <string>
#include <vector>

#include "hoir/logic.hpp"
#include "hoir/model.hpp"
#include "hoir/train.hpp"

namespace hoir::cli {

// Everything a run needs, resolved from the JSON config plus command-line
// overrides. Environment variables are never consulted.
struct RunConfig {
  ModelConfig model;
  Vocabulary vocab;
  std::vector<uint64_t> seeds{1};
  int64_t steps = 1000;
  int64_t batch = 2;
  double lr = 1e-3;
  int64_t eval_every = 250;
  int64_t top_k = 10;
  int64_t train_scenes = 500;
  int64_t eval_scenes = 100;
  uint64_t scene_seed = 12345;
  SplitSpec split;
  std::string rules_path;
  struct Ablation {
    bool tra = true;
    bool lrl = true;
    bool lvp = true;
    bool lop = true;
  } ablation;
  LogicConfig logic;
  std::string output_dir = "out";
  bool plots = false;
};

// Parses and validates; ConfigError / VocabError on bad values (including
// lvp/lop set without lrl).
RunConfig load_config(const std::string& path);
RunConfig parse_config_json(const std::string& json_text);

struct CliOptions {
  std::string config_path;
  std::string checkpoint;
  std::string out_override;
  std::string scope;       // gradcheck
  std::string rules_file;  // rules check
  int64_t seed_override = -1;
  int64_t steps_override = -1;
  bool plots = false;
};

int cmd_train(const CliOptions& opt);
int cmd_eval(const CliOptions& opt);
int cmd_ablate(const CliOptions& opt);
int cmd_gradcheck(const CliOptions& opt);
int cmd_rules_check(const CliOptions& opt);

// Exit codes: 0 success, 1 runtime/numeric failure, 2 config/parse failure.
inline constexpr int kExitOk = 0;
inline constexpr int kExitRuntime = 1;
inline constexpr int kExitConfig = 2;

}  // namespace hoir::cli
