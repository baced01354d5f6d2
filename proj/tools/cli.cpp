#include "cli.hpp"

#include <filesystem>
#include <fstream>
#include <future>
#include <iostream>
#include <sstream>
#include <thread>

#include <json.hpp>

#include "hoir/diagnostics.hpp"

namespace fs = std::filesystem;
using nlohmann::json;
using nlohmann::ordered_json;

namespace hoir::cli {

namespace {

// ---- config ----

Vocabulary parse_vocab(const json& j) {
  Vocabulary v;
  if (!j.contains("vocab")) return Vocabulary::synthetic(6, 8);
  const json& jv = j.at("vocab");
  auto read_side = [&](const char* key, std::vector<std::string>& out,
                       const char* prefix) {
    if (!jv.contains(key)) {
      throw ConfigError(std::string("config: vocab.") + key + " missing");
    }
    const json& side = jv.at(key);
    if (side.is_number_integer()) {
      int64_t n = side.get<int64_t>();
      for (int64_t i = 0; i < n; ++i) out.push_back(prefix + std::to_string(i));
    } else if (side.is_array()) {
      for (const auto& name : side) out.push_back(name.get<std::string>());
    } else {
      throw ConfigError(std::string("config: vocab.") + key +
                        " must be a count or a list of names");
    }
  };
  read_side("actions", v.actions, "v");
  read_side("objects", v.objects, "o");
  if (v.actions.empty() || v.objects.empty()) {
    throw ConfigError("config: vocabulary must be non-empty");
  }
  return v;
}

SplitSpec parse_split(const json& j, const Vocabulary& vocab) {
  SplitSpec split;
  if (!j.contains("split")) return split;
  const json& js = j.at("split");
  std::string kind = js.value("kind", "regular");
  if (kind == "regular") {
    split.kind = SplitKind::Regular;
  } else if (kind == "unseen_combination") {
    split.kind = SplitKind::UnseenCombination;
  } else if (kind == "unseen_object") {
    split.kind = SplitKind::UnseenObject;
  } else if (kind == "unseen_verb") {
    split.kind = SplitKind::UnseenVerb;
  } else {
    throw ConfigError("config: unknown split kind '" + kind + "'");
  }
  if (split.kind == SplitKind::Regular) return split;
  if (js.contains("held_out")) {
    split.held_out = js.at("held_out").get<std::vector<int64_t>>();
    if (split.held_out.empty()) {
      throw ConfigError("config: split.held_out must be non-empty");
    }
  } else {
    int64_t count = js.value("count", 4);
    uint64_t seed = js.value("seed", uint64_t{7});
    split = make_split(vocab, split.kind, count, seed);
  }
  return split;
}

}  // namespace

RunConfig parse_config_json(const std::string& json_text) {
  json j;
  try {
    j = json::parse(json_text);
  } catch (const json::parse_error& e) {
    throw ConfigError(std::string("config: invalid JSON: ") + e.what());
  }
  RunConfig rc;
  rc.vocab = parse_vocab(j);
  rc.model = ModelConfig::for_vocab(rc.vocab);

  if (j.contains("model")) {
    const json& m = j.at("model");
    rc.model.d = m.value("d", rc.model.d);
    rc.model.n_queries = m.value("n_queries", rc.model.n_queries);
    rc.model.layers_interaction =
        m.value("layers_interaction", rc.model.layers_interaction);
    rc.model.layers_decoder = m.value("layers_decoder", rc.model.layers_decoder);
    rc.model.layers_encoder = m.value("layers_encoder", rc.model.layers_encoder);
    rc.model.ffn_dim = m.value("ffn_dim", rc.model.ffn_dim);
    rc.model.pe_dims = m.value("pe_dims", rc.model.pe_dims);
    rc.model.alpha = m.value("alpha", rc.model.alpha);
    rc.model.use_state_in_pair_terms =
        m.value("use_state_in_pair_terms", rc.model.use_state_in_pair_terms);
  }

  rc.seeds = j.value("seeds", rc.seeds);
  rc.steps = j.value("steps", rc.steps);
  rc.batch = j.value("batch", rc.batch);
  rc.lr = j.value("lr", rc.lr);
  rc.eval_every = j.value("eval_every", rc.eval_every);
  rc.top_k = j.value("top_k", rc.top_k);
  if (j.contains("dataset")) {
    const json& d = j.at("dataset");
    rc.train_scenes = d.value("train_scenes", rc.train_scenes);
    rc.eval_scenes = d.value("eval_scenes", rc.eval_scenes);
    rc.scene_seed = d.value("scene_seed", rc.scene_seed);
  }
  rc.split = parse_split(j, rc.vocab);
  rc.rules_path = j.value("rules_path", rc.rules_path);
  if (j.contains("ablation")) {
    const json& a = j.at("ablation");
    rc.ablation.tra = a.value("tra", true);
    rc.ablation.lrl = a.value("lrl", true);
    bool lvp_given = a.contains("lvp");
    bool lop_given = a.contains("lop");
    rc.ablation.lvp = a.value("lvp", rc.ablation.lrl);
    rc.ablation.lop = a.value("lop", rc.ablation.lrl);
    if (!rc.ablation.lrl && ((lvp_given && rc.ablation.lvp) ||
                             (lop_given && rc.ablation.lop))) {
      throw ConfigError(
          "config: ablation.lvp/lop are only meaningful when lrl is true");
    }
    if (!rc.ablation.lrl) {
      rc.ablation.lvp = false;
      rc.ablation.lop = false;
    }
  }
  if (j.contains("logic")) {
    rc.logic.quant.q = j.at("logic").value("q", 1.0);
    rc.logic.object_rules_use_action_score =
        j.at("logic").value("literal_object_grounding", false);
    if (rc.logic.quant.q < 1.0) {
      throw ConfigError("config: logic.q must be >= 1");
    }
  }
  rc.output_dir = j.value("output_dir", rc.output_dir);
  rc.model.use_triplet_attention = rc.ablation.tra;

  if (rc.steps < 0 || rc.batch < 1 || rc.seeds.empty()) {
    throw ConfigError("config: steps must be >= 0, batch >= 1, seeds non-empty");
  }
  if (rc.train_scenes < 1 || rc.eval_scenes < 1) {
    throw ConfigError("config: dataset sizes must be positive");
  }
  rc.model.validate();
  return rc;
}

RunConfig load_config(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("config: cannot open '" + path + "'");
  std::stringstream ss;
  ss << in.rdbuf();
  return parse_config_json(ss.str());
}

namespace {

// ---- shared run machinery ----

struct Corpus {
  std::vector<Scene> train;
  std::vector<Scene> eval;
  std::vector<uint64_t> train_seeds;
  std::vector<uint64_t> eval_seeds;
};

constexpr uint64_t kEvalSeedOffset = 1000000;

Corpus build_corpus(const RunConfig& rc, const RuleSet& rules) {
  Corpus c;
  for (int64_t i = 0; i < rc.train_scenes; ++i) {
    uint64_t seed = rc.scene_seed + static_cast<uint64_t>(i);
    c.train_seeds.push_back(seed);
    c.train.push_back(
        generate_scene(seed, rc.vocab, rules, rc.split, ScenePhase::Train));
  }
  for (int64_t i = 0; i < rc.eval_scenes; ++i) {
    uint64_t seed = rc.scene_seed + kEvalSeedOffset + static_cast<uint64_t>(i);
    c.eval_seeds.push_back(seed);
    c.eval.push_back(
        generate_scene(seed, rc.vocab, rules, rc.split, ScenePhase::Eval));
  }
  return c;
}

RuleSet load_rules(const RunConfig& rc) {
  if (rc.rules_path.empty()) return RuleSet{};
  std::ifstream in(rc.rules_path);
  if (!in) {
    throw ConfigError("rules: cannot open '" + rc.rules_path + "'");
  }
  std::stringstream ss;
  ss << in.rdbuf();
  return parse_rules(ss.str(), rc.vocab);
}

struct MetricsRow {
  int64_t step = 0;
  LossReport losses;
  Metrics metrics;
};

std::string csv_header() {
  return "step,l_total,l_hoi,l_vp,l_op,interaction_accuracy,"
         "rule_violation_rate,unseen_accuracy";
}

std::string csv_row(const MetricsRow& r) {
  std::ostringstream os;
  os.precision(10);
  os << r.step << ',' << r.losses.total << ',' << r.losses.hoi_sum() << ','
     << r.losses.l_vp << ',' << r.losses.l_op << ','
     << r.metrics.interaction_accuracy << ',' << r.metrics.rule_violation_rate
     << ',' << r.metrics.unseen_accuracy;
  return os.str();
}

// Loss values on a batch without touching parameters.
LossReport measure_losses(const Model& model, const std::vector<const Scene*>& batch,
                          const RunConfig& rc, const RuleSet& rules,
                          const TrainConfig& tc) {
  LossReport report;
  report.alpha = model.config().alpha;
  double inv_b = 1.0 / static_cast<double>(batch.size());
  std::vector<Predictions> preds;
  preds.reserve(batch.size());
  for (const Scene* s : batch) {
    preds.push_back(model.forward(s->features));
    auto r = hoi_loss(preds.back(), *s, rc.vocab, tc.weights);
    report.l_cls_human += r.report.l_cls_human * inv_b;
    report.l_cls_object += r.report.l_cls_object * inv_b;
    report.l_box_l1 += r.report.l_box_l1 * inv_b;
    report.l_box_giou += r.report.l_box_giou * inv_b;
    report.l_action += r.report.l_action * inv_b;
    report.l_interaction += r.report.l_interaction * inv_b;
  }
  RuleSet active;
  for (const auto& r : rules.rules) {
    if (r.kind == TriggerKind::Action && !tc.lvp) continue;
    if (r.kind == TriggerKind::Object && !tc.lop) continue;
    active.rules.push_back(r);
  }
  if (tc.lrl && !active.rules.empty()) {
    std::vector<const Predictions*> ptrs;
    for (const auto& p : preds) ptrs.push_back(&p);
    ScoreTable table = build_score_table(ptrs, rc.vocab);
    auto ll = logic_loss(active, table, tc.logic);
    report.l_vp = ll.l_vp.value();
    report.l_op = ll.l_op.value();
  }
  report.total = report.hoi_sum() + report.alpha * (report.l_vp + report.l_op);
  return report;
}

struct RunResult {
  uint64_t seed = 0;
  std::vector<MetricsRow> rows;
  Metrics final_metrics;
};

struct CellFlags {
  bool tra = true;
  bool lrl = true;
  bool lvp = true;
  bool lop = true;
};

RunResult run_training(const RunConfig& rc, const Corpus& corpus,
                       const RuleSet& rules, uint64_t model_seed,
                       const CellFlags& flags, Model* out_model = nullptr) {
  ModelConfig mc = rc.model;
  mc.use_triplet_attention = flags.tra;
  Model model(mc, model_seed);

  TrainConfig tc;
  tc.adam.lr = rc.lr;
  tc.lrl = flags.lrl;
  tc.lvp = flags.lvp;
  tc.lop = flags.lop;
  tc.logic = rc.logic;
  Adam opt(tc.adam);

  EvalConfig ec;
  ec.top_k = rc.top_k;

  RunResult result;
  result.seed = model_seed;

  Rng batch_rng(model_seed * 7919 + 13);
  auto sample_batch = [&]() {
    std::vector<const Scene*> batch;
    for (int64_t b = 0; b < rc.batch; ++b) {
      batch.push_back(&corpus.train[static_cast<size_t>(batch_rng.uniform_int(
          static_cast<int64_t>(corpus.train.size())))]);
    }
    return batch;
  };

  auto eval_row = [&](int64_t step, const LossReport& losses) {
    MetricsRow row;
    row.step = step;
    row.losses = losses;
    row.metrics = evaluate(model, corpus.eval, rc.split, rc.vocab, rules, ec);
    result.rows.push_back(row);
  };

  eval_row(0, measure_losses(model, sample_batch(), rc, rules, tc));

  LossReport last;
  for (int64_t step = 1; step <= rc.steps; ++step) {
    last = train_step(model, opt, sample_batch(), rc.vocab, rules, tc);
    if (step % rc.eval_every == 0 && step != rc.steps) {
      eval_row(step, last);
    }
  }
  if (rc.steps > 0) {
    eval_row(rc.steps, last);
  }
  result.final_metrics = result.rows.back().metrics;
  if (out_model) *out_model = std::move(model);
  return result;
}

ordered_json metrics_json(const Metrics& m) {
  ordered_json j;
  j["interaction_accuracy"] = m.interaction_accuracy;
  j["rule_violation_rate"] = m.rule_violation_rate;
  j["unseen_accuracy"] = m.unseen_accuracy;
  j["seen_accuracy"] = m.seen_accuracy;
  return j;
}

ordered_json config_echo(const RunConfig& rc, const RuleSet& rules) {
  // Everything that determines the run, but nothing that varies between
  // output locations, so identical runs produce identical summaries.
  ordered_json j;
  j["model"] = {{"d", rc.model.d},
                {"n_queries", rc.model.n_queries},
                {"layers_interaction", rc.model.layers_interaction},
                {"layers_decoder", rc.model.layers_decoder},
                {"layers_encoder", rc.model.layers_encoder},
                {"ffn_dim", rc.model.ffn_dim},
                {"pe_dims", rc.model.pe_dims},
                {"alpha", rc.model.alpha},
                {"tra", rc.model.use_triplet_attention}};
  j["vocab"] = {{"actions", rc.vocab.actions}, {"objects", rc.vocab.objects}};
  j["steps"] = rc.steps;
  j["batch"] = rc.batch;
  j["lr"] = rc.lr;
  j["top_k"] = rc.top_k;
  j["dataset"] = {{"train_scenes", rc.train_scenes},
                  {"eval_scenes", rc.eval_scenes},
                  {"scene_seed", rc.scene_seed}};
  const char* kind = rc.split.kind == SplitKind::Regular ? "regular"
                     : rc.split.kind == SplitKind::UnseenCombination
                         ? "unseen_combination"
                     : rc.split.kind == SplitKind::UnseenObject
                         ? "unseen_object"
                         : "unseen_verb";
  j["split"] = {{"kind", kind}, {"held_out", rc.split.held_out}};
  j["ablation"] = {{"tra", rc.ablation.tra},
                   {"lrl", rc.ablation.lrl},
                   {"lvp", rc.ablation.lvp},
                   {"lop", rc.ablation.lop}};
  j["rules"] = static_cast<int64_t>(rules.rules.size());
  return j;
}

void write_text(const fs::path& path, const std::string& text) {
  std::ofstream out(path);
  if (!out) throw NumericError("cannot write " + path.string());
  out << text;
}

void write_manifest(const fs::path& dir, const RunConfig& rc,
                    const Corpus& corpus) {
  ordered_json j;
  j["scene_seed"] = rc.scene_seed;
  j["train_seeds"] = corpus.train_seeds;
  j["eval_seeds"] = corpus.eval_seeds;
  const char* kind = rc.split.kind == SplitKind::Regular ? "regular"
                     : rc.split.kind == SplitKind::UnseenCombination
                         ? "unseen_combination"
                     : rc.split.kind == SplitKind::UnseenObject
                         ? "unseen_object"
                         : "unseen_verb";
  j["split"] = {{"kind", kind}, {"held_out", rc.split.held_out}};
  write_text(dir / "manifest.json", j.dump(1) + "\n");
}

// Minimal static SVG polyline plot.
void write_svg_plot(const fs::path& path, const std::string& title,
                    const std::vector<std::pair<double, double>>& points) {
  const double w = 640, h = 360, m = 45;
  double xmin = 0, xmax = 1, ymin = 0, ymax = 1;
  if (!points.empty()) {
    xmin = xmax = points[0].first;
    ymin = ymax = points[0].second;
    for (auto& [x, y] : points) {
      xmin = std::min(xmin, x);
      xmax = std::max(xmax, x);
      ymin = std::min(ymin, y);
      ymax = std::max(ymax, y);
    }
  }
  if (xmax == xmin) xmax = xmin + 1;
  if (ymax == ymin) ymax = ymin + 1;
  std::ostringstream os;
  os << "<svg xmlns='http://www.w3.org/2000/svg' width='" << w << "' height='"
     << h << "'>\n";
  os << "<rect width='100%' height='100%' fill='white'/>\n";
  os << "<text x='" << w / 2 << "' y='20' text-anchor='middle' "
     << "font-family='monospace' font-size='14'>" << title << "</text>\n";
  os << "<polyline fill='none' stroke='#336699' stroke-width='1.5' points='";
  for (auto& [x, y] : points) {
    double px = m + (x - xmin) / (xmax - xmin) * (w - 2 * m);
    double py = h - m - (y - ymin) / (ymax - ymin) * (h - 2 * m);
    os << px << ',' << py << ' ';
  }
  os << "'/>\n";
  os << "<text x='10' y='" << h - 8 << "' font-family='monospace' font-size='11'>"
     << "y: [" << ymin << ", " << ymax << "]  x: [" << xmin << ", " << xmax
     << "]</text>\n</svg>\n";
  write_text(path, os.str());
}

void write_run_outputs(const fs::path& dir, const RunConfig& rc,
                       const RunResult& result, Model* model, bool plots) {
  fs::create_directories(dir);
  std::ostringstream csv;
  csv << csv_header() << "\n";
  for (const auto& row : result.rows) csv << csv_row(row) << "\n";
  write_text(dir / "metrics.csv", csv.str());
  if (model) model->save_checkpoint((dir / "checkpoint.json").string());
  if (plots) {
    std::vector<std::pair<double, double>> loss_pts, viol_pts;
    for (const auto& row : result.rows) {
      loss_pts.push_back({double(row.step), row.losses.total});
      viol_pts.push_back({double(row.step), row.metrics.rule_violation_rate});
    }
    write_svg_plot(dir / "loss_curve.svg", "total loss", loss_pts);
    write_svg_plot(dir / "violation_curve.svg", "rule violation rate", viol_pts);
  }
}

RunConfig apply_overrides(const CliOptions& opt) {
  RunConfig rc = load_config(opt.config_path);
  if (opt.seed_override >= 0) {
    rc.seeds = {static_cast<uint64_t>(opt.seed_override)};
  }
  if (opt.steps_override >= 0) rc.steps = opt.steps_override;
  if (!opt.out_override.empty()) rc.output_dir = opt.out_override;
  rc.plots = rc.plots || opt.plots;
  return rc;
}

}  // namespace

int cmd_train(const CliOptions& opt) {
  RunConfig rc = apply_overrides(opt);
  RuleSet rules = load_rules(rc);
  Corpus corpus = build_corpus(rc, rules);
  fs::path out(rc.output_dir);
  fs::create_directories(out);
  write_manifest(out, rc, corpus);

  CellFlags flags{rc.ablation.tra, rc.ablation.lrl, rc.ablation.lvp,
                  rc.ablation.lop};

  ordered_json summary;
  summary["config"] = config_echo(rc, rules);
  ordered_json per_seed = ordered_json::array();

  std::vector<double> acc, unseen, viol;
  for (size_t i = 0; i < rc.seeds.size(); ++i) {
    uint64_t seed = rc.seeds[i];
    Model model(rc.model, seed);  // placeholder, replaced by the run
    RunResult result = run_training(rc, corpus, rules, seed, flags, &model);
    fs::path dir = rc.seeds.size() == 1 ? out : out / ("seed_" + std::to_string(seed));
    write_run_outputs(dir, rc, result, &model, rc.plots);

    ordered_json sj;
    sj["seed"] = seed;
    sj["final"] = metrics_json(result.final_metrics);
    sj["final_loss"] = result.rows.back().losses.total;
    per_seed.push_back(sj);
    acc.push_back(result.final_metrics.interaction_accuracy);
    unseen.push_back(result.final_metrics.unseen_accuracy);
    viol.push_back(result.final_metrics.rule_violation_rate);
    std::cout << "seed " << seed << ": accuracy="
              << result.final_metrics.interaction_accuracy
              << " unseen=" << result.final_metrics.unseen_accuracy
              << " violation=" << result.final_metrics.rule_violation_rate
              << "\n";
  }
  auto mean = [](const std::vector<double>& v) {
    double s = 0;
    for (double x : v) s += x;
    return v.empty() ? 0.0 : s / static_cast<double>(v.size());
  };
  summary["seeds"] = per_seed;
  summary["mean"] = {{"interaction_accuracy", mean(acc)},
                     {"unseen_accuracy", mean(unseen)},
                     {"rule_violation_rate", mean(viol)}};
  write_text(out / "summary.json", summary.dump(1) + "\n");
  return kExitOk;
}

int cmd_eval(const CliOptions& opt) {
  RunConfig rc = apply_overrides(opt);
  if (opt.checkpoint.empty()) {
    throw ConfigError("eval: --checkpoint is required");
  }
  RuleSet rules = load_rules(rc);
  Corpus corpus = build_corpus(rc, rules);
  Model model(rc.model, rc.seeds[0]);
  model.load_checkpoint(opt.checkpoint);
  EvalConfig ec;
  ec.top_k = rc.top_k;
  Metrics m = evaluate(model, corpus.eval, rc.split, rc.vocab, rules, ec);

  ordered_json j;
  j["checkpoint_metrics"] = metrics_json(m);
  std::cout << j.dump(1) << "\n";
  fs::path out(rc.output_dir);
  fs::create_directories(out);
  write_text(out / "eval.json", j.dump(1) + "\n");
  return kExitOk;
}

int cmd_ablate(const CliOptions& opt) {
  RunConfig rc = apply_overrides(opt);
  RuleSet rules = load_rules(rc);
  Corpus corpus = build_corpus(rc, rules);
  fs::path out(rc.output_dir);
  fs::create_directories(out);
  write_manifest(out, rc, corpus);

  struct Cell {
    bool tra, lrl;
  };
  // Rows in presentation order: neither, TRA only, LRL only, both.
  std::vector<Cell> cells{{false, false}, {true, false}, {false, true},
                          {true, true}};

  struct Job {
    size_t cell;
    uint64_t seed;
  };
  std::vector<Job> jobs;
  for (size_t c = 0; c < cells.size(); ++c) {
    for (uint64_t s : rc.seeds) jobs.push_back({c, s});
  }

  std::vector<Metrics> results(jobs.size());
  unsigned workers = std::max(1u, std::thread::hardware_concurrency());
  std::atomic<size_t> next{0};
  auto worker = [&]() {
    while (true) {
      size_t i = next.fetch_add(1);
      if (i >= jobs.size()) return;
      const Job& job = jobs[i];
      CellFlags flags{cells[job.cell].tra, cells[job.cell].lrl,
                      cells[job.cell].lrl, cells[job.cell].lrl};
      RunResult r = run_training(rc, corpus, rules, job.seed, flags);
      results[i] = r.final_metrics;
    }
  };
  std::vector<std::thread> pool;
  for (unsigned w = 0; w < workers; ++w) pool.emplace_back(worker);
  for (auto& t : pool) t.join();

  auto stats = [&](size_t cell, auto pick) {
    std::vector<double> vals;
    for (size_t i = 0; i < jobs.size(); ++i) {
      if (jobs[i].cell == cell) vals.push_back(pick(results[i]));
    }
    double m = 0;
    for (double v : vals) m += v;
    m /= static_cast<double>(vals.size());
    double var = 0;
    for (double v : vals) var += (v - m) * (v - m);
    double sd = vals.size() > 1 ? std::sqrt(var / static_cast<double>(vals.size() - 1))
                                : 0.0;
    return std::make_pair(m, sd);
  };

  std::ostringstream csv;
  csv << "tra,lrl,interaction_accuracy_mean,interaction_accuracy_std,"
         "unseen_accuracy_mean,unseen_accuracy_std,"
         "rule_violation_rate_mean,rule_violation_rate_std\n";
  ordered_json jcells = ordered_json::array();
  for (size_t c = 0; c < cells.size(); ++c) {
    auto [am, as] = stats(c, [](const Metrics& m) { return m.interaction_accuracy; });
    auto [um, us] = stats(c, [](const Metrics& m) { return m.unseen_accuracy; });
    auto [vm, vs] = stats(c, [](const Metrics& m) { return m.rule_violation_rate; });
    csv.precision(10);
    csv << (cells[c].tra ? 1 : 0) << ',' << (cells[c].lrl ? 1 : 0) << ',' << am
        << ',' << as << ',' << um << ',' << us << ',' << vm << ',' << vs << "\n";
    ordered_json jc;
    jc["tra"] = cells[c].tra;
    jc["lrl"] = cells[c].lrl;
    jc["interaction_accuracy"] = {{"mean", am}, {"std", as}};
    jc["unseen_accuracy"] = {{"mean", um}, {"std", us}};
    jc["rule_violation_rate"] = {{"mean", vm}, {"std", vs}};
    jcells.push_back(jc);
    std::cout << "cell tra=" << cells[c].tra << " lrl=" << cells[c].lrl
              << ": unseen=" << um << " +- " << us << ", violation=" << vm
              << " +- " << vs << "\n";
  }
  write_text(out / "ablation.csv", csv.str());
  ordered_json summary;
  summary["config"] = config_echo(rc, rules);
  summary["cells"] = jcells;
  write_text(out / "summary.json", summary.dump(1) + "\n");
  return kExitOk;
}

int cmd_gradcheck(const CliOptions& opt) {
  std::vector<GradCheckSuiteResult> suites;
  auto want = [&](const char* name) {
    return opt.scope == "all" || opt.scope == name;
  };
  if (want("tensor-ops")) suites.push_back(gradcheck_tensor_ops());
  if (want("attention")) suites.push_back(gradcheck_attention());
  if (want("logic")) suites.push_back(gradcheck_logic());
  if (want("full-model")) suites.push_back(gradcheck_full_model());
  if (suites.empty()) {
    throw ConfigError("gradcheck: unknown scope '" + opt.scope +
                      "' (tensor-ops|attention|logic|full-model|all)");
  }
  bool all_pass = true;
  for (const auto& s : suites) {
    std::cout << "[" << (s.pass ? "PASS" : "FAIL") << "] " << s.scope
              << ": worst rel error " << s.worst_rel_error << " (tolerance "
              << s.tolerance << ", " << s.checked << " coords, "
              << s.skipped_nonsmooth << " non-smooth skipped)\n";
    for (const auto& line : s.lines) std::cout << "    " << line << "\n";
    all_pass = all_pass && s.pass;
  }
  return all_pass ? kExitOk : kExitRuntime;
}

int cmd_rules_check(const CliOptions& opt) {
  RunConfig rc = load_config(opt.config_path);
  std::ifstream in(opt.rules_file);
  if (!in) {
    throw ConfigError("rules check: cannot open '" + opt.rules_file + "'");
  }
  std::stringstream ss;
  ss << in.rdbuf();
  RuleSet rs = parse_rules(ss.str(), rc.vocab);
  std::cout << "ok: " << rs.rules.size() << " rules (" << rs.num_action_rules()
            << " action, " << rs.num_object_rules() << " object)\n";
  for (const auto& rule : rs.rules) {
    Formula f = rule.to_formula(rc.vocab);
    f.validate(&rc.vocab);
  }
  std::cout << "all rules ground to valid formulas\n";
  return kExitOk;
}

}  // namespace hoir::cli
