#include <doctest.h>

#include <filesystem>
#include <fstream>
#include <sstream>

#include "cli.hpp"

using namespace hoir;
namespace fs = std::filesystem;

namespace {

struct TempDir {
  fs::path path;
  TempDir() {
    path = fs::temp_directory_path() /
           ("hoir_cli_test_" + std::to_string(::getpid()));
    fs::create_directories(path);
  }
  ~TempDir() {
    std::error_code ec;
    fs::remove_all(path, ec);
  }
};

std::string base_config(const fs::path& rules, const fs::path& out) {
  std::ostringstream os;
  os << R"({
    "model": {"d": 16, "n_queries": 4, "layers_interaction": 1,
              "layers_decoder": 1, "layers_encoder": 1, "ffn_dim": 32,
              "pe_dims": 16, "alpha": 0.2},
    "vocab": {"actions": 4, "objects": 5},
    "seeds": [7],
    "steps": 6,
    "batch": 2,
    "eval_every": 3,
    "top_k": 5,
    "dataset": {"train_scenes": 8, "eval_scenes": 6, "scene_seed": 42},
    "split": {"kind": "unseen_combination", "count": 3, "seed": 5},
    "rules_path": ")"
     << rules.string() << R"(",
    "output_dir": ")"
     << out.string() << R"("
  })";
  return os.str();
}

void write_file(const fs::path& p, const std::string& text) {
  std::ofstream f(p);
  f << text;
}

std::string read_file(const fs::path& p) {
  std::ifstream f(p);
  std::stringstream ss;
  ss << f.rdbuf();
  return ss.str();
}

}  // namespace

TEST_CASE("config parsing and validation") {
  TempDir tmp;
  fs::path rules = tmp.path / "r.rules";
  write_file(rules, "action v0 @ above => forbid (human,v0,o1)\n");
  fs::path cfg_path = tmp.path / "cfg.json";
  write_file(cfg_path, base_config(rules, tmp.path / "out"));

  auto rc = cli::load_config(cfg_path.string());
  CHECK(rc.model.d == 16);
  CHECK(rc.vocab.num_actions() == 4);
  CHECK(rc.model.num_interactions == 20);
  CHECK(rc.split.kind == SplitKind::UnseenCombination);
  CHECK(rc.split.held_out.size() == 3);
  CHECK(rc.seeds == std::vector<uint64_t>{7});

  // lvp/lop without lrl is rejected at parse time
  std::string bad = base_config(rules, tmp.path / "out");
  bad.insert(bad.rfind('}'),
             R"(, "ablation": {"tra": true, "lrl": false, "lvp": true})");
  CHECK_THROWS_AS(cli::parse_config_json(bad), ConfigError);

  // named vocabularies work
  std::string named = R"({"vocab": {"actions": ["launch","fly"],
                                    "objects": ["boat","kite"]},
                          "model": {"d": 16, "n_queries": 4, "pe_dims": 16}})";
  auto rc2 = cli::parse_config_json(named);
  CHECK(rc2.vocab.actions[0] == "launch");
  CHECK(rc2.model.num_interactions == 4);

  CHECK_THROWS_AS(cli::parse_config_json("{nope"), ConfigError);
  CHECK_THROWS_AS(cli::load_config((tmp.path / "missing.json").string()),
                  ConfigError);
}

TEST_CASE("train: determinism, metrics schema, checkpoint") {
  TempDir tmp;
  fs::path rules = tmp.path / "r.rules";
  write_file(rules,
             "action v0 @ above => forbid (human,v0,o1)\n"
             "object o2 @ within => forbid (human,v1,o2)\n");
  fs::path cfg = tmp.path / "cfg.json";
  write_file(cfg, base_config(rules, tmp.path / "out1"));

  cli::CliOptions opt;
  opt.config_path = cfg.string();
  CHECK(cli::cmd_train(opt) == cli::kExitOk);

  // exact column contract
  std::string csv = read_file(tmp.path / "out1" / "metrics.csv");
  CHECK(csv.rfind("step,l_total,l_hoi,l_vp,l_op,interaction_accuracy,"
                  "rule_violation_rate,unseen_accuracy\n",
                  0) == 0);
  CHECK(fs::exists(tmp.path / "out1" / "checkpoint.json"));
  CHECK(fs::exists(tmp.path / "out1" / "manifest.json"));

  // byte-identical summaries for identical (config, seed)
  cli::CliOptions opt2 = opt;
  opt2.out_override = (tmp.path / "out2").string();
  CHECK(cli::cmd_train(opt2) == cli::kExitOk);
  CHECK(read_file(tmp.path / "out1" / "summary.json") ==
        read_file(tmp.path / "out2" / "summary.json"));

  // --seed override changes the run
  cli::CliOptions opt3 = opt;
  opt3.out_override = (tmp.path / "out3").string();
  opt3.seed_override = 8;
  CHECK(cli::cmd_train(opt3) == cli::kExitOk);
  CHECK(read_file(tmp.path / "out1" / "summary.json") !=
        read_file(tmp.path / "out3" / "summary.json"));
}

TEST_CASE("train: missing rules file names the path") {
  TempDir tmp;
  fs::path cfg = tmp.path / "cfg.json";
  fs::path missing = tmp.path / "nope.rules";
  write_file(cfg, base_config(missing, tmp.path / "out"));
  cli::CliOptions opt;
  opt.config_path = cfg.string();
  try {
    cli::cmd_train(opt);
    FAIL("expected ConfigError");
  } catch (const ConfigError& e) {
    CHECK(std::string(e.what()).find(missing.string()) != std::string::npos);
  }
}

TEST_CASE("train: steps 0 writes the initial evaluation only") {
  TempDir tmp;
  fs::path rules = tmp.path / "r.rules";
  write_file(rules, "action v0 @ above => forbid (human,v0,o1)\n");
  fs::path cfg = tmp.path / "cfg.json";
  write_file(cfg, base_config(rules, tmp.path / "out"));
  cli::CliOptions opt;
  opt.config_path = cfg.string();
  opt.steps_override = 0;
  CHECK(cli::cmd_train(opt) == cli::kExitOk);
  std::string csv = read_file(tmp.path / "out" / "metrics.csv");
  int lines = 0;
  for (char c : csv) lines += c == '\n' ? 1 : 0;
  CHECK(lines == 2);  // header + step-0 row
  CHECK(csv.find("\n0,") != std::string::npos);
  CHECK(fs::exists(tmp.path / "out" / "summary.json"));
}

TEST_CASE("eval loads the trained checkpoint") {
  TempDir tmp;
  fs::path rules = tmp.path / "r.rules";
  write_file(rules, "action v0 @ above => forbid (human,v0,o1)\n");
  fs::path cfg = tmp.path / "cfg.json";
  write_file(cfg, base_config(rules, tmp.path / "out"));
  cli::CliOptions opt;
  opt.config_path = cfg.string();
  REQUIRE(cli::cmd_train(opt) == cli::kExitOk);

  cli::CliOptions ev = opt;
  ev.checkpoint = (tmp.path / "out" / "checkpoint.json").string();
  ev.out_override = (tmp.path / "evalout").string();
  CHECK(cli::cmd_eval(ev) == cli::kExitOk);
  CHECK(fs::exists(tmp.path / "evalout" / "eval.json"));

  cli::CliOptions nock = opt;
  CHECK_THROWS_AS(cli::cmd_eval(nock), ConfigError);
}

TEST_CASE("ablate produces four cells sharing one manifest") {
  TempDir tmp;
  fs::path rules = tmp.path / "r.rules";
  write_file(rules,
             "action v0 @ above => forbid (human,v0,o1)\n"
             "object o2 @ within => forbid (human,v1,o2)\n");
  fs::path cfg = tmp.path / "cfg.json";
  std::string text = base_config(rules, tmp.path / "abl");
  // two seeds, very few steps: bookkeeping is what is under test
  text.insert(text.rfind('}'), R"(, "x_unused": 0)");
  write_file(cfg, text);

  cli::CliOptions opt;
  opt.config_path = cfg.string();
  opt.steps_override = 4;
  CHECK(cli::cmd_ablate(opt) == cli::kExitOk);
  std::string csv = read_file(tmp.path / "abl" / "ablation.csv");
  int lines = 0;
  for (char c : csv) lines += c == '\n' ? 1 : 0;
  CHECK(lines == 5);  // header + 4 cells
  CHECK(csv.find("tra,lrl,") == 0);
  CHECK(fs::exists(tmp.path / "abl" / "manifest.json"));
  CHECK(fs::exists(tmp.path / "abl" / "summary.json"));
}

TEST_CASE("gradcheck scopes pass") {
  cli::CliOptions opt;
  opt.scope = "tensor-ops";
  CHECK(cli::cmd_gradcheck(opt) == cli::kExitOk);
  opt.scope = "logic";
  CHECK(cli::cmd_gradcheck(opt) == cli::kExitOk);
  opt.scope = "bogus";
  CHECK_THROWS_AS(cli::cmd_gradcheck(opt), ConfigError);
}

TEST_CASE("rules check validates against the config vocabulary") {
  TempDir tmp;
  fs::path rules = tmp.path / "r.rules";
  write_file(rules, "action v0 @ above => forbid (human,v0,o1)\n");
  fs::path cfg = tmp.path / "cfg.json";
  write_file(cfg, base_config(rules, tmp.path / "out"));

  cli::CliOptions opt;
  opt.config_path = cfg.string();
  opt.rules_file = rules.string();
  CHECK(cli::cmd_rules_check(opt) == cli::kExitOk);

  fs::path bad = tmp.path / "bad.rules";
  write_file(bad, "action warp @ above => forbid (human,v0,o1)\n");
  cli::CliOptions optbad = opt;
  optbad.rules_file = bad.string();
  CHECK_THROWS_AS(cli::cmd_rules_check(optbad), VocabError);

  fs::path syntax = tmp.path / "syntax.rules";
  write_file(syntax, "this is not a rule\n");
  cli::CliOptions opts = opt;
  opts.rules_file = syntax.string();
  CHECK_THROWS_AS(cli::cmd_rules_check(opts), ParseError);
}

TEST_CASE("plots flag writes SVG curves") {
  TempDir tmp;
  fs::path rules = tmp.path / "r.rules";
  write_file(rules, "action v0 @ above => forbid (human,v0,o1)\n");
  fs::path cfg = tmp.path / "cfg.json";
  write_file(cfg, base_config(rules, tmp.path / "out"));
  cli::CliOptions opt;
  opt.config_path = cfg.string();
  opt.plots = true;
  CHECK(cli::cmd_train(opt) == cli::kExitOk);
  CHECK(fs::exists(tmp.path / "out" / "loss_curve.svg"));
  CHECK(fs::exists(tmp.path / "out" / "violation_curve.svg"));
  std::string svg = read_file(tmp.path / "out" / "loss_curve.svg");
  CHECK(svg.find("<svg") != std::string::npos);
  CHECK(svg.find("polyline") != std::string::npos);
}
