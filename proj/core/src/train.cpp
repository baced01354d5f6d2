#include "hoir/train.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <set>
#include <sstream>

namespace hoir {

// ---- Scene ----

SpatialRelation Scene::relation(int64_t human_idx, int64_t object_idx) const {
  auto it = relations.find({human_idx, object_idx});
  if (it == relations.end()) {
    throw ContractError("scene: no relation for pair (" +
                        std::to_string(human_idx) + "," +
                        std::to_string(object_idx) + ")");
  }
  return it->second;
}

std::vector<int64_t> Scene::human_indices() const {
  std::vector<int64_t> out;
  for (size_t i = 0; i < entities.size(); ++i) {
    if (entities[i].is_human) out.push_back(static_cast<int64_t>(i));
  }
  return out;
}

std::vector<int64_t> Scene::object_indices() const {
  std::vector<int64_t> out;
  for (size_t i = 0; i < entities.size(); ++i) {
    if (!entities[i].is_human) out.push_back(static_cast<int64_t>(i));
  }
  return out;
}

// ---- splits ----

bool SplitSpec::holds_out_interaction(const Vocabulary& vocab,
                                      int64_t id) const {
  auto [verb, object] = vocab.interaction_parts(id);
  switch (kind) {
    case SplitKind::Regular:
      return false;
    case SplitKind::UnseenCombination:
      return std::find(held_out.begin(), held_out.end(), id) != held_out.end();
    case SplitKind::UnseenObject:
      return std::find(held_out.begin(), held_out.end(), object) !=
             held_out.end();
    case SplitKind::UnseenVerb:
      return std::find(held_out.begin(), held_out.end(), verb) !=
             held_out.end();
  }
  return false;
}

bool SplitSpec::allows_in_training(const Vocabulary& vocab,
                                   int64_t interaction_id) const {
  return !holds_out_interaction(vocab, interaction_id);
}

SplitSpec make_split(const Vocabulary& vocab, SplitKind kind, int64_t count,
                     uint64_t seed) {
  SplitSpec split;
  split.kind = kind;
  if (kind == SplitKind::Regular) return split;
  int64_t domain = kind == SplitKind::UnseenCombination ? vocab.num_interactions()
                   : kind == SplitKind::UnseenObject    ? vocab.num_objects()
                                                        : vocab.num_actions();
  if (count < 1 || count >= domain) {
    throw ConfigError("make_split: held-out count " + std::to_string(count) +
                      " must be in [1, " + std::to_string(domain) + ")");
  }
  Rng rng(seed);
  std::set<int64_t> chosen;
  while (static_cast<int64_t>(chosen.size()) < count) {
    chosen.insert(rng.uniform_int(domain));
  }
  split.held_out.assign(chosen.begin(), chosen.end());
  return split;
}

RuleSet make_synthetic_rules(const Vocabulary& vocab, int64_t count,
                             uint64_t seed) {
  if (vocab.num_actions() < 2 || vocab.num_objects() < 2) {
    throw ConfigError("make_synthetic_rules: vocabulary too small");
  }
  Rng rng(seed);
  RuleSet rs;
  std::set<std::tuple<int, int64_t, int>> used_triggers;
  for (int64_t r = 0; r < count; ++r) {
    Rule rule;
    rule.kind = (r % 2 == 0) ? TriggerKind::Action : TriggerKind::Object;
    for (int attempt = 0; attempt < 256; ++attempt) {
      int64_t domain = rule.kind == TriggerKind::Action ? vocab.num_actions()
                                                        : vocab.num_objects();
      rule.trigger_id = rng.uniform_int(domain);
      rule.relation = static_cast<SpatialRelation>(rng.uniform_int(kNumRelations));
      auto key = std::make_tuple(static_cast<int>(rule.kind), rule.trigger_id,
                                 static_cast<int>(rule.relation));
      if (used_triggers.insert(key).second) break;
    }
    rule.infeasible.clear();
    int64_t n_inf = 2 + rng.uniform_int(2);  // 2..3
    std::set<int64_t> ids;
    while (static_cast<int64_t>(ids.size()) < n_inf) {
      if (rule.kind == TriggerKind::Action) {
        // Keep half the forbidden interactions on the trigger verb so the
        // rule reads as an affordance statement, the rest anywhere.
        int64_t verb = rng.uniform() < 0.5 ? rule.trigger_id
                                           : rng.uniform_int(vocab.num_actions());
        ids.insert(vocab.interaction_id(verb, rng.uniform_int(vocab.num_objects())));
      } else {
        ids.insert(vocab.interaction_id(rng.uniform_int(vocab.num_actions()),
                                        rule.trigger_id));
      }
    }
    rule.infeasible.assign(ids.begin(), ids.end());
    rs.rules.push_back(std::move(rule));
  }
  return rs;
}

// ---- scene generation ----

namespace {

Box sample_human_box(Rng& rng) {
  Box b;
  b.w = rng.uniform(0.12, 0.3);
  b.h = rng.uniform(0.25, 0.45);
  b.cx = rng.uniform(0.2, 0.8);
  b.cy = rng.uniform(0.35, 0.65);
  return b.clamped();
}

// Place an object trying to realize `target` relative to `anchor`; falls
// back to whatever relation the final clamped box actually has.
Box sample_object_box(Rng& rng, const Box& anchor, SpatialRelation target) {
  for (int attempt = 0; attempt < 8; ++attempt) {
    Box b;
    switch (target) {
      case SpatialRelation::within:
        b.w = anchor.w * rng.uniform(0.2, 0.45);
        b.h = anchor.h * rng.uniform(0.2, 0.45);
        b.cx = rng.uniform(anchor.x1() + b.w / 2, anchor.x2() - b.w / 2);
        b.cy = rng.uniform(anchor.y1() + b.h / 2, anchor.y2() - b.h / 2);
        break;
      case SpatialRelation::containing:
        b.w = std::min(0.95, anchor.w * rng.uniform(1.6, 2.4));
        b.h = std::min(0.95, anchor.h * rng.uniform(1.6, 2.4));
        b.cx = anchor.cx + rng.uniform(-0.2, 0.2) * (b.w - anchor.w) / 2;
        b.cy = anchor.cy + rng.uniform(-0.2, 0.2) * (b.h - anchor.h) / 2;
        break;
      case SpatialRelation::above:
        b.w = rng.uniform(0.06, 0.2);
        b.h = rng.uniform(0.05, 0.15);
        b.cx = anchor.cx + rng.uniform(-0.3, 0.3) * anchor.w;
        b.cy = anchor.y1() - anchor.h * rng.uniform(0.3, 0.6) - b.h / 2;
        break;
      case SpatialRelation::below:
        b.w = rng.uniform(0.06, 0.2);
        b.h = rng.uniform(0.05, 0.15);
        b.cx = anchor.cx + rng.uniform(-0.3, 0.3) * anchor.w;
        b.cy = anchor.y2() + anchor.h * rng.uniform(0.3, 0.6) + b.h / 2;
        break;
      case SpatialRelation::around:
        b.w = rng.uniform(0.08, 0.25);
        b.h = rng.uniform(0.1, 0.3);
        b.cx = rng.uniform() < 0.5
                   ? anchor.x1() - rng.uniform(0.02, 0.2) - b.w / 2
                   : anchor.x2() + rng.uniform(0.02, 0.2) + b.w / 2;
        b.cy = anchor.cy + rng.uniform(-0.4, 0.4) * anchor.h;
        break;
    }
    b = b.clamped();
    if (classify_relation(anchor, b) == target) return b;
  }
  Box b;
  b.w = rng.uniform(0.08, 0.25);
  b.h = rng.uniform(0.1, 0.3);
  b.cx = rng.uniform(0.1, 0.9);
  b.cy = rng.uniform(0.1, 0.9);
  return b.clamped();
}

struct Candidate {
  int64_t human, object, action;
  int64_t interaction_id;
};

}  // namespace

Scene generate_scene(uint64_t seed, const Vocabulary& vocab,
                     const RuleSet& rules, const SplitSpec& split,
                     ScenePhase phase, const SceneGenConfig& gen) {
  Rng rng(seed);
  const int64_t num_obj = vocab.num_objects();
  const int64_t num_act = vocab.num_actions();

  // Object classes available for entity placement under this split.
  std::vector<int64_t> train_classes;
  for (int64_t c = 0; c < num_obj; ++c) {
    bool held = split.kind == SplitKind::UnseenObject &&
                std::find(split.held_out.begin(), split.held_out.end(), c) !=
                    split.held_out.end();
    if (!(phase == ScenePhase::Train && held)) train_classes.push_back(c);
  }
  if (train_classes.empty()) {
    throw GenerationError("generate_scene: no object classes available");
  }

  for (int attempt = 0; attempt < gen.max_retries; ++attempt) {
    Scene scene;
    int64_t n_h = 1 + rng.uniform_int(4);  // 1..4
    int64_t n_o = 1 + rng.uniform_int(5);  // 1..5
    for (int64_t i = 0; i < n_h; ++i) {
      scene.entities.push_back(Entity{num_obj, sample_human_box(rng), true});
    }
    for (int64_t i = 0; i < n_o; ++i) {
      int64_t cls;
      if (phase == ScenePhase::Eval && split.kind == SplitKind::UnseenObject &&
          i == 0 && !split.held_out.empty()) {
        cls = split.held_out[static_cast<size_t>(
            rng.uniform_int(static_cast<int64_t>(split.held_out.size())))];
      } else {
        cls = train_classes[static_cast<size_t>(
            rng.uniform_int(static_cast<int64_t>(train_classes.size())))];
      }
      const Box& anchor =
          scene.entities[static_cast<size_t>(rng.uniform_int(n_h))].box;
      auto target = static_cast<SpatialRelation>(rng.uniform_int(kNumRelations));
      scene.entities.push_back(Entity{cls, sample_object_box(rng, anchor, target),
                                      false});
    }

    auto humans = scene.human_indices();
    auto objects = scene.object_indices();
    for (auto h : humans) {
      for (auto o : objects) {
        scene.relations[{h, o}] = classify_relation(
            scene.entities[static_cast<size_t>(h)].box,
            scene.entities[static_cast<size_t>(o)].box);
      }
    }

    // Enumerate rule-consistent, split-consistent interaction candidates.
    std::vector<Candidate> legal, held_out_legal;
    for (auto h : humans) {
      for (auto o : objects) {
        int64_t cls = scene.entities[static_cast<size_t>(o)].cls;
        SpatialRelation rel = scene.relation(h, o);
        for (int64_t v = 0; v < num_act; ++v) {
          int64_t id = vocab.interaction_id(v, cls);
          if (rules.violates(id, v, cls, rel)) continue;
          bool held = split.holds_out_interaction(vocab, id);
          if (phase == ScenePhase::Train && held) continue;
          Candidate c{h, o, v, id};
          legal.push_back(c);
          if (held) held_out_legal.push_back(c);
        }
      }
    }
    bool need_held = phase == ScenePhase::Eval && split.kind != SplitKind::Regular;
    if (legal.empty() || (need_held && held_out_legal.empty())) {
      continue;  // resample the whole scene
    }

    int64_t n_i = 1 + rng.uniform_int(6);  // 1..6
    std::vector<Candidate> chosen;
    if (need_held) {
      chosen.push_back(held_out_legal[static_cast<size_t>(rng.uniform_int(
          static_cast<int64_t>(held_out_legal.size())))]);
    }
    // Fisher-Yates prefix over the remaining pool.
    std::vector<size_t> order(legal.size());
    std::iota(order.begin(), order.end(), 0);
    for (size_t i = 0; i < order.size(); ++i) {
      size_t j = i + static_cast<size_t>(rng.uniform_int(
                         static_cast<int64_t>(order.size() - i)));
      std::swap(order[i], order[j]);
    }
    for (size_t oi = 0;
         oi < order.size() && static_cast<int64_t>(chosen.size()) < n_i; ++oi) {
      const Candidate& c = legal[order[oi]];
      bool dup = false;
      for (const auto& e : chosen) {
        dup = dup || (e.human == c.human && e.object == c.object &&
                      e.action == c.action);
      }
      if (!dup) chosen.push_back(c);
    }
    for (const auto& c : chosen) {
      scene.gt.push_back(GtInteraction{c.human, c.action, c.object});
    }

    // Feature tokens: one per entity plus one evidence token per
    // interaction carrying the action identity. Evidence tokens are not
    // localized, so attributing actions to pairs requires reasoning over
    // feasible combinations rather than box matching.
    const int64_t width = num_obj + 1 + num_act + 4 + 1;
    int64_t m = static_cast<int64_t>(scene.entities.size() + scene.gt.size());
    std::vector<double> feat(static_cast<size_t>(m * width), 0.0);
    auto write_box = [&](double* row, const Box& b) {
      row[num_obj + 1 + num_act + 0] = b.cx;
      row[num_obj + 1 + num_act + 1] = b.cy;
      row[num_obj + 1 + num_act + 2] = b.w;
      row[num_obj + 1 + num_act + 3] = b.h;
    };
    for (size_t i = 0; i < scene.entities.size(); ++i) {
      double* row = feat.data() + i * width;
      row[scene.entities[i].cls] = 1.0;
      write_box(row, scene.entities[i].box);
      row[width - 1] = 1.0;  // entity flag
    }
    for (size_t g = 0; g < scene.gt.size(); ++g) {
      double* row = feat.data() + (scene.entities.size() + g) * width;
      row[num_obj + 1 + scene.gt[g].action] = 1.0;
    }
    for (auto& v : feat) v += gen.noise * rng.normal();
    scene.features = Tensor::from_data({m, width}, std::move(feat), false);
    return scene;
  }
  throw GenerationError(
      "generate_scene: could not satisfy rule/split constraints after " +
      std::to_string(gen.max_retries) + " attempts (seed " +
      std::to_string(seed) + ")");
}

// ---- Hungarian matching ----

namespace {

// Shortest-augmenting-path assignment with potentials, O(n^3), on a
// square matrix. Returns row -> column.
std::vector<int64_t> hungarian_square(const std::vector<double>& a, int64_t n) {
  const double kInf = std::numeric_limits<double>::infinity();
  std::vector<double> u(static_cast<size_t>(n + 1), 0.0);
  std::vector<double> v(static_cast<size_t>(n + 1), 0.0);
  std::vector<int64_t> p(static_cast<size_t>(n + 1), 0);
  std::vector<int64_t> way(static_cast<size_t>(n + 1), 0);
  for (int64_t i = 1; i <= n; ++i) {
    p[0] = i;
    int64_t j0 = 0;
    std::vector<double> minv(static_cast<size_t>(n + 1), kInf);
    std::vector<char> used(static_cast<size_t>(n + 1), 0);
    do {
      used[static_cast<size_t>(j0)] = 1;
      int64_t i0 = p[static_cast<size_t>(j0)];
      int64_t j1 = 0;
      double delta = kInf;
      for (int64_t j = 1; j <= n; ++j) {
        if (used[static_cast<size_t>(j)]) continue;
        double cur = a[static_cast<size_t>((i0 - 1) * n + (j - 1))] -
                     u[static_cast<size_t>(i0)] - v[static_cast<size_t>(j)];
        if (cur < minv[static_cast<size_t>(j)]) {
          minv[static_cast<size_t>(j)] = cur;
          way[static_cast<size_t>(j)] = j0;
        }
        if (minv[static_cast<size_t>(j)] < delta) {
          delta = minv[static_cast<size_t>(j)];
          j1 = j;
        }
      }
      for (int64_t j = 0; j <= n; ++j) {
        if (used[static_cast<size_t>(j)]) {
          u[static_cast<size_t>(p[static_cast<size_t>(j)])] += delta;
          v[static_cast<size_t>(j)] -= delta;
        } else {
          minv[static_cast<size_t>(j)] -= delta;
        }
      }
      j0 = j1;
    } while (p[static_cast<size_t>(j0)] != 0);
    do {
      int64_t j1 = way[static_cast<size_t>(j0)];
      p[static_cast<size_t>(j0)] = p[static_cast<size_t>(j1)];
      j0 = j1;
    } while (j0 != 0);
  }
  std::vector<int64_t> row_to_col(static_cast<size_t>(n), -1);
  for (int64_t j = 1; j <= n; ++j) {
    if (p[static_cast<size_t>(j)] > 0) {
      row_to_col[static_cast<size_t>(p[static_cast<size_t>(j)] - 1)] = j - 1;
    }
  }
  return row_to_col;
}

}  // namespace

std::vector<int64_t> hungarian_match(
    const std::vector<std::vector<double>>& cost) {
  int64_t rows = static_cast<int64_t>(cost.size());
  if (rows == 0) return {};
  int64_t cols = static_cast<int64_t>(cost[0].size());
  if (cols == 0) return std::vector<int64_t>(static_cast<size_t>(rows), -1);
  for (const auto& r : cost) {
    if (static_cast<int64_t>(r.size()) != cols) {
      throw ShapeError("hungarian_match: ragged cost matrix");
    }
    for (double c : r) {
      if (std::isnan(c)) throw NumericError("hungarian_match: NaN cost");
    }
  }
  // Pad to square with a constant; padded cells absorb the surplus rows
  // or columns without affecting which real pairs win.
  int64_t n = std::max(rows, cols);
  std::vector<double> a(static_cast<size_t>(n * n), 0.0);
  for (int64_t i = 0; i < rows; ++i) {
    for (int64_t j = 0; j < cols; ++j) {
      a[static_cast<size_t>(i * n + j)] = cost[static_cast<size_t>(i)]
                                              [static_cast<size_t>(j)];
    }
  }
  auto full = hungarian_square(a, n);
  std::vector<int64_t> out(static_cast<size_t>(rows), -1);
  for (int64_t i = 0; i < rows; ++i) {
    int64_t j = full[static_cast<size_t>(i)];
    out[static_cast<size_t>(i)] = j < cols ? j : -1;
  }
  return out;
}

std::vector<int64_t> hungarian_match(const Tensor& cost) {
  if (cost.rank() != 2) {
    throw ShapeError("hungarian_match: expected a (P,G) matrix, got " +
                     shape_str(cost.shape()));
  }
  int64_t p = cost.shape()[0], g = cost.shape()[1];
  std::vector<std::vector<double>> m(static_cast<size_t>(p));
  for (int64_t i = 0; i < p; ++i) {
    m[static_cast<size_t>(i)].resize(static_cast<size_t>(g));
    for (int64_t j = 0; j < g; ++j) {
      m[static_cast<size_t>(i)][static_cast<size_t>(j)] = cost.at(i * g + j);
    }
  }
  return hungarian_match(m);
}

// ---- losses ----

namespace {

Box box_from_row(const Tensor& t, int64_t row) {
  return Box{t.at(row * 4 + 0), t.at(row * 4 + 1), t.at(row * 4 + 2),
             t.at(row * 4 + 3)};
}

Tensor bce_with_logits(const Tensor& logits, const Tensor& targets) {
  return relu(logits) - logits * targets + log(1.0 + exp(neg(abs(logits))));
}

// Weighted mean of elementwise losses; weights are constants.
Tensor weighted_mean(const Tensor& values, const std::vector<double>& weights) {
  double wsum = 0.0;
  for (double w : weights) wsum += w;
  if (wsum <= 0.0) return Tensor::scalar(0.0);
  Tensor wt = Tensor::from_data({static_cast<int64_t>(weights.size())},
                                std::vector<double>(weights), false);
  return sum_all(values * wt) / wsum;
}

// Cross-entropy over rows of (R, C) logits with integer targets and
// per-row weights.
Tensor weighted_ce(const Tensor& logits, const std::vector<int64_t>& targets,
                   const std::vector<double>& row_weights) {
  int64_t rows = logits.shape()[0], cols = logits.shape()[1];
  double wsum = 0.0;
  std::vector<double> mask(static_cast<size_t>(rows * cols), 0.0);
  for (int64_t r = 0; r < rows; ++r) {
    double w = row_weights[static_cast<size_t>(r)];
    mask[static_cast<size_t>(r * cols + targets[static_cast<size_t>(r)])] = w;
    wsum += w;
  }
  if (wsum <= 0.0) return Tensor::scalar(0.0);
  Tensor m = Tensor::from_data({rows, cols}, std::move(mask), false);
  return neg(sum_all(log_softmax_axis(logits, 1) * m)) / wsum;
}

Tensor gt_box_tensor(const Scene& scene, const std::vector<int64_t>& entity_idx) {
  std::vector<double> d;
  d.reserve(entity_idx.size() * 4);
  for (auto e : entity_idx) {
    const Box& b = scene.entities[static_cast<size_t>(e)].box;
    d.push_back(b.cx);
    d.push_back(b.cy);
    d.push_back(b.w);
    d.push_back(b.h);
  }
  return Tensor::from_data({static_cast<int64_t>(entity_idx.size()), 4},
                           std::move(d), false);
}

}  // namespace

HoiLossResult hoi_loss(const Predictions& pred, const Scene& scene,
                       const Vocabulary& vocab, const LossWeights& w) {
  auto gt_humans = scene.human_indices();
  auto gt_objects = scene.object_indices();
  int64_t n_h = pred.human_boxes.shape()[0];
  int64_t n_o = pred.object_boxes.shape()[0];

  // Match predictions to ground truth on values.
  auto build_cost = [&](const std::vector<int64_t>& gts, bool human) {
    std::vector<std::vector<double>> cost(
        static_cast<size_t>(human ? n_h : n_o));
    const Tensor& boxes = human ? pred.human_boxes : pred.object_boxes;
    for (int64_t i = 0; i < (human ? n_h : n_o); ++i) {
      auto& row = cost[static_cast<size_t>(i)];
      row.resize(gts.size());
      Box pb = box_from_row(boxes, i);
      for (size_t g = 0; g < gts.size(); ++g) {
        const Entity& ent = scene.entities[static_cast<size_t>(gts[g])];
        double cls_cost;
        if (human) {
          cls_cost = 1.0 - pred.human_scores.at(i);
        } else {
          // softmax prob of the gt class, computed on values
          int64_t c = vocab.num_objects() + 1;
          double mx = pred.object_logits.at(i * c);
          for (int64_t k = 1; k < c; ++k) {
            mx = std::max(mx, pred.object_logits.at(i * c + k));
          }
          double z = 0.0;
          for (int64_t k = 0; k < c; ++k) {
            z += std::exp(pred.object_logits.at(i * c + k) - mx);
          }
          double p = std::exp(pred.object_logits.at(i * c + ent.cls) - mx) / z;
          cls_cost = 1.0 - p;
        }
        double l1 = std::fabs(pb.cx - ent.box.cx) + std::fabs(pb.cy - ent.box.cy) +
                    std::fabs(pb.w - ent.box.w) + std::fabs(pb.h - ent.box.h);
        double g_iou = giou(pb.clamped(), ent.box);
        row[g] = w.cls * cls_cost + w.box_l1 * l1 + w.box_giou * (1.0 - g_iou);
      }
    }
    return cost;
  };

  std::vector<int64_t> match_h =
      gt_humans.empty() ? std::vector<int64_t>(static_cast<size_t>(n_h), -1)
                        : hungarian_match(build_cost(gt_humans, true));
  std::vector<int64_t> match_o =
      gt_objects.empty() ? std::vector<int64_t>(static_cast<size_t>(n_o), -1)
                         : hungarian_match(build_cost(gt_objects, false));

  HoiLossResult out;

  // Human score BCE: matched -> 1, others -> 0 with background weight.
  {
    std::vector<double> targets(static_cast<size_t>(n_h), 0.0);
    std::vector<double> weights(static_cast<size_t>(n_h), w.background);
    for (int64_t i = 0; i < n_h; ++i) {
      if (match_h[static_cast<size_t>(i)] >= 0) {
        targets[static_cast<size_t>(i)] = 1.0;
        weights[static_cast<size_t>(i)] = 1.0;
      }
    }
    Tensor t = Tensor::from_data({n_h}, std::move(targets), false);
    Tensor bce = bce_with_logits(pred.human_score_logits, t);
    Tensor l = weighted_mean(bce, weights) * w.cls;
    out.report.l_cls_human = l.value();
    out.total = l;
  }

  // Object class CE: matched -> gt class, unmatched -> background.
  {
    std::vector<int64_t> targets(static_cast<size_t>(n_o), vocab.num_objects());
    std::vector<double> weights(static_cast<size_t>(n_o), w.background);
    for (int64_t i = 0; i < n_o; ++i) {
      int64_t g = match_o[static_cast<size_t>(i)];
      if (g >= 0) {
        targets[static_cast<size_t>(i)] =
            scene.entities[static_cast<size_t>(gt_objects[static_cast<size_t>(g)])]
                .cls;
        weights[static_cast<size_t>(i)] = 1.0;
      }
    }
    Tensor l = weighted_ce(pred.object_logits, targets, weights) * w.cls;
    out.report.l_cls_object = l.value();
    out.total = out.total + l;
  }

  // Box regression on matched pairs, humans and objects pooled.
  {
    std::vector<int64_t> h_rows, h_ents, o_rows, o_ents;
    for (int64_t i = 0; i < n_h; ++i) {
      int64_t g = match_h[static_cast<size_t>(i)];
      if (g >= 0) {
        h_rows.push_back(i);
        h_ents.push_back(gt_humans[static_cast<size_t>(g)]);
      }
    }
    for (int64_t i = 0; i < n_o; ++i) {
      int64_t g = match_o[static_cast<size_t>(i)];
      if (g >= 0) {
        o_rows.push_back(i);
        o_ents.push_back(gt_objects[static_cast<size_t>(g)]);
      }
    }
    int64_t total_matched =
        static_cast<int64_t>(h_rows.size() + o_rows.size());
    if (total_matched > 0) {
      std::vector<Tensor> preds, gts;
      if (!h_rows.empty()) {
        preds.push_back(index_select(pred.human_boxes, 0, h_rows));
        gts.push_back(gt_box_tensor(scene, h_ents));
      }
      if (!o_rows.empty()) {
        preds.push_back(index_select(pred.object_boxes, 0, o_rows));
        gts.push_back(gt_box_tensor(scene, o_ents));
      }
      Tensor pb = preds.size() == 1 ? preds[0] : concat(preds, 0);
      Tensor gb = gts.size() == 1 ? gts[0] : concat(gts, 0);
      Tensor l1 = mean_all(box_l1_rows(pb, gb)) * w.box_l1;
      Tensor lg = mean_all(1.0 - giou_rows(pb, gb)) * w.box_giou;
      out.report.l_box_l1 = l1.value();
      out.report.l_box_giou = lg.value();
      out.total = out.total + l1 + lg;
    } else {
      out.report.l_box_l1 = 0.0;
      out.report.l_box_giou = 0.0;
    }
  }

  // Image-level multi-label action BCE, max-pooled over action queries.
  {
    std::vector<double> targets(static_cast<size_t>(vocab.num_actions()), 0.0);
    for (const auto& it : scene.gt) {
      targets[static_cast<size_t>(it.action)] = 1.0;
    }
    Tensor pooled = reduce_max(pred.action_logits, 0);
    Tensor t = Tensor::from_data({vocab.num_actions()}, std::move(targets), false);
    Tensor l = mean_all(bce_with_logits(pooled, t)) * w.cls;
    out.report.l_action = l.value();
    out.total = out.total + l;
  }

  // Interaction grid CE with targets induced from the role matchings.
  {
    int64_t bg = vocab.num_interactions();
    std::vector<int64_t> targets(static_cast<size_t>(n_h * n_o), bg);
    std::vector<double> weights(static_cast<size_t>(n_h * n_o), w.background);
    std::map<int64_t, int64_t> ent_to_h_slot, ent_to_o_slot;
    for (int64_t i = 0; i < n_h; ++i) {
      int64_t g = match_h[static_cast<size_t>(i)];
      if (g >= 0) ent_to_h_slot[gt_humans[static_cast<size_t>(g)]] = i;
    }
    for (int64_t i = 0; i < n_o; ++i) {
      int64_t g = match_o[static_cast<size_t>(i)];
      if (g >= 0) ent_to_o_slot[gt_objects[static_cast<size_t>(g)]] = i;
    }
    for (const auto& it : scene.gt) {
      auto hi = ent_to_h_slot.find(it.human);
      auto oj = ent_to_o_slot.find(it.object);
      if (hi == ent_to_h_slot.end() || oj == ent_to_o_slot.end()) continue;
      int64_t cls = scene.entities[static_cast<size_t>(it.object)].cls;
      int64_t cell = hi->second * n_o + oj->second;
      targets[static_cast<size_t>(cell)] = vocab.interaction_id(it.action, cls);
      weights[static_cast<size_t>(cell)] = 1.0;
    }
    Tensor flat = reshape(pred.interaction_logits, {n_h * n_o, bg + 1});
    Tensor l = weighted_ce(flat, targets, weights) * w.cls;
    out.report.l_interaction = l.value();
    out.total = out.total + l;
  }

  return out;
}

ScoreTable build_score_table(const std::vector<const Predictions*>& preds,
                             const Vocabulary& vocab) {
  if (preds.empty()) throw ContractError("build_score_table: empty batch");
  std::vector<Tensor> act_parts, obj_parts, int_parts, rel_parts;
  for (const Predictions* p : preds) {
    int64_t n_h = p->human_boxes.shape()[0];
    int64_t n_o = p->object_boxes.shape()[0];
    int64_t k = n_h * n_o;

    // Image-level action probabilities, shared by every pair sample.
    Tensor a_img = sigmoid(reduce_max(p->action_logits, 0));
    act_parts.push_back(expand(a_img, 0, k));

    // Object class probabilities of the pair's object slot.
    Tensor o_probs = softmax_axis(p->object_logits, 1);
    std::vector<int64_t> fg_cols(static_cast<size_t>(vocab.num_objects()));
    std::iota(fg_cols.begin(), fg_cols.end(), 0);
    Tensor o_fg = index_select(o_probs, 1, fg_cols);
    std::vector<int64_t> tiling(static_cast<size_t>(k));
    for (int64_t i = 0; i < n_h; ++i) {
      for (int64_t j = 0; j < n_o; ++j) {
        tiling[static_cast<size_t>(i * n_o + j)] = j;
      }
    }
    obj_parts.push_back(index_select(o_fg, 0, tiling));

    // Interaction probabilities per cell (foreground classes only).
    Tensor i_probs = softmax_axis(p->interaction_logits, 2);
    std::vector<int64_t> fg_ints(static_cast<size_t>(vocab.num_interactions()));
    std::iota(fg_ints.begin(), fg_ints.end(), 0);
    Tensor i_fg = index_select(i_probs, 2, fg_ints);
    int_parts.push_back(reshape(i_fg, {k, vocab.num_interactions()}));

    // Hard relation gates from the predicted boxes.
    std::vector<double> gates(static_cast<size_t>(k * kNumRelations), 0.0);
    for (int64_t i = 0; i < n_h; ++i) {
      Box hb = box_from_row(p->human_boxes, i).clamped();
      for (int64_t j = 0; j < n_o; ++j) {
        Box ob = box_from_row(p->object_boxes, j).clamped();
        auto rel = classify_relation(hb, ob);
        gates[static_cast<size_t>((i * n_o + j) * kNumRelations +
                                  static_cast<int64_t>(rel))] = 1.0;
      }
    }
    rel_parts.push_back(Tensor::from_data({k, static_cast<int64_t>(kNumRelations)},
                                          std::move(gates), false));
  }
  ScoreTable table;
  table.actions = act_parts.size() == 1 ? act_parts[0] : concat(act_parts, 0);
  table.objects = obj_parts.size() == 1 ? obj_parts[0] : concat(obj_parts, 0);
  table.interactions =
      int_parts.size() == 1 ? int_parts[0] : concat(int_parts, 0);
  table.relations = rel_parts.size() == 1 ? rel_parts[0] : concat(rel_parts, 0);
  return table;
}

// ---- Adam ----

void Adam::step(ParamStore& params) {
  ++t_;
  double bc1 = 1.0 - std::pow(cfg_.beta1, static_cast<double>(t_));
  double bc2 = 1.0 - std::pow(cfg_.beta2, static_cast<double>(t_));
  for (const auto& [name, tensor] : params.items()) {
    Tensor t = tensor;
    const auto& g = t.grad();
    auto& slot = state_[name];
    if (slot.m.empty()) {
      slot.m.assign(g.size(), 0.0);
      slot.v.assign(g.size(), 0.0);
    }
    auto& data = t.mutable_data();
    for (size_t i = 0; i < g.size(); ++i) {
      slot.m[i] = cfg_.beta1 * slot.m[i] + (1.0 - cfg_.beta1) * g[i];
      slot.v[i] = cfg_.beta2 * slot.v[i] + (1.0 - cfg_.beta2) * g[i] * g[i];
      double mhat = slot.m[i] / bc1;
      double vhat = slot.v[i] / bc2;
      data[i] -= cfg_.lr * mhat / (std::sqrt(vhat) + cfg_.eps);
    }
    t.zero_grad();
  }
}

// ---- training ----

namespace {

std::string report_dump(const LossReport& r) {
  std::ostringstream os;
  os << "cls_h=" << r.l_cls_human << " cls_o=" << r.l_cls_object
     << " l1=" << r.l_box_l1 << " giou=" << r.l_box_giou
     << " act=" << r.l_action << " int=" << r.l_interaction
     << " vp=" << r.l_vp << " op=" << r.l_op << " total=" << r.total;
  return os.str();
}

}  // namespace

LossReport train_step(Model& model, Adam& opt,
                      const std::vector<const Scene*>& batch,
                      const Vocabulary& vocab, const RuleSet& rules,
                      const TrainConfig& cfg) {
  if (batch.empty()) throw ContractError("train_step: empty batch");
  const double alpha = model.config().alpha;
  const double inv_b = 1.0 / static_cast<double>(batch.size());

  LossReport report;
  report.alpha = alpha;

  std::vector<Model::ForwardBundle> bundles;
  bundles.reserve(batch.size());
  Tensor hoi_total;
  for (const Scene* scene : batch) {
    bundles.push_back(model.forward_bundle(scene->features));
    HoiLossResult r = hoi_loss(bundles.back().pred, *scene, vocab, cfg.weights);
    report.l_cls_human += r.report.l_cls_human * inv_b;
    report.l_cls_object += r.report.l_cls_object * inv_b;
    report.l_box_l1 += r.report.l_box_l1 * inv_b;
    report.l_box_giou += r.report.l_box_giou * inv_b;
    report.l_action += r.report.l_action * inv_b;
    report.l_interaction += r.report.l_interaction * inv_b;
    hoi_total = hoi_total.defined() ? hoi_total + r.total * inv_b
                                    : r.total * inv_b;
  }

  if (!std::isfinite(hoi_total.value())) {
    throw NumericError("train_step: non-finite detection loss; " +
                       report_dump(report));
  }
  backward(hoi_total);

  // Logic loss: separate pass on the re-run reasoner graph, leaf
  // accumulation restricted to the interaction-decoder group.
  RuleSet active;
  for (const auto& r : rules.rules) {
    if (r.kind == TriggerKind::Action && !cfg.lvp) continue;
    if (r.kind == TriggerKind::Object && !cfg.lop) continue;
    active.rules.push_back(r);
  }
  if (cfg.lrl && alpha > 0.0 && !active.rules.empty()) {
    std::vector<Predictions> logic_preds;
    logic_preds.reserve(bundles.size());
    for (const auto& bundle : bundles) {
      Predictions lp = bundle.pred;
      lp.interaction_logits = model.rerun_reasoner(bundle.detached);
      lp.action_logits = bundle.pred.action_logits.detach();
      lp.object_logits = bundle.pred.object_logits.detach();
      logic_preds.push_back(std::move(lp));
    }
    std::vector<const Predictions*> ptrs;
    for (const auto& lp : logic_preds) ptrs.push_back(&lp);
    ScoreTable table = build_score_table(ptrs, vocab);
    LogicLossResult ll = logic_loss(active, table, cfg.logic);
    report.l_vp = ll.l_vp.value();
    report.l_op = ll.l_op.value();
    if (!std::isfinite(report.l_vp) || !std::isfinite(report.l_op)) {
      throw NumericError("train_step: non-finite logic loss; " +
                         report_dump(report));
    }
    backward(ll.total * alpha, model.reasoner_param_ids());
  }

  report.total = report.hoi_sum() + alpha * (report.l_vp + report.l_op);
  if (!std::isfinite(report.total)) {
    throw NumericError("train_step: non-finite total loss; " +
                       report_dump(report));
  }
  opt.step(model.params());
  return report;
}

// ---- evaluation ----

std::vector<DecodedTriplet> decode_topk(const Predictions& pred,
                                        int64_t num_interactions, int64_t k) {
  int64_t n_h = pred.interaction_logits.shape()[0];
  int64_t n_o = pred.interaction_logits.shape()[1];
  int64_t c = pred.interaction_logits.shape()[2];
  if (c != num_interactions + 1) {
    throw ShapeError("decode_topk: logits have " + std::to_string(c) +
                     " classes, expected " + std::to_string(num_interactions + 1));
  }
  const auto& d = pred.interaction_logits.data();
  std::vector<DecodedTriplet> cands;
  cands.reserve(static_cast<size_t>(n_h * n_o));
  for (int64_t i = 0; i < n_h; ++i) {
    for (int64_t j = 0; j < n_o; ++j) {
      const double* row = d.data() + (i * n_o + j) * c;
      double mx = row[0];
      for (int64_t t = 1; t < c; ++t) mx = std::max(mx, row[t]);
      double z = 0.0;
      for (int64_t t = 0; t < c; ++t) z += std::exp(row[t] - mx);
      // Greedy per-pair: the best foreground class of this cell.
      int64_t best = 0;
      for (int64_t t = 1; t < num_interactions; ++t) {
        if (row[t] > row[best]) best = t;
      }
      double p = std::exp(row[best] - mx) / z;
      cands.push_back(DecodedTriplet{i, j, best, p});
    }
  }
  std::sort(cands.begin(), cands.end(), [](const auto& a, const auto& b) {
    if (a.score != b.score) return a.score > b.score;
    if (a.human_slot != b.human_slot) return a.human_slot < b.human_slot;
    if (a.object_slot != b.object_slot) return a.object_slot < b.object_slot;
    return a.interaction < b.interaction;
  });
  if (static_cast<int64_t>(cands.size()) > k) {
    cands.resize(static_cast<size_t>(k));
  }
  return cands;
}

void EvalTally::add(const EvalTally& o) {
  gt_total += o.gt_total;
  gt_hit += o.gt_hit;
  unseen_total += o.unseen_total;
  unseen_hit += o.unseen_hit;
  seen_total += o.seen_total;
  seen_hit += o.seen_hit;
  predicted += o.predicted;
  violations += o.violations;
}

EvalTally score_scene(const Scene& scene, const Predictions& pred,
                      const std::vector<DecodedTriplet>& decoded,
                      const Vocabulary& vocab, const RuleSet& rules,
                      const SplitSpec& split) {
  EvalTally tally;
  std::set<int64_t> predicted_cats;
  for (const auto& d : decoded) predicted_cats.insert(d.interaction);

  for (const auto& it : scene.gt) {
    int64_t cls = scene.entities[static_cast<size_t>(it.object)].cls;
    int64_t id = vocab.interaction_id(it.action, cls);
    bool hit = predicted_cats.count(id) > 0;
    ++tally.gt_total;
    tally.gt_hit += hit ? 1 : 0;
    if (split.holds_out_interaction(vocab, id)) {
      ++tally.unseen_total;
      tally.unseen_hit += hit ? 1 : 0;
    } else {
      ++tally.seen_total;
      tally.seen_hit += hit ? 1 : 0;
    }
  }

  for (const auto& d : decoded) {
    ++tally.predicted;
    auto [verb, object] = vocab.interaction_parts(d.interaction);
    Box hb = box_from_row(pred.human_boxes, d.human_slot).clamped();
    Box ob = box_from_row(pred.object_boxes, d.object_slot).clamped();
    auto rel = classify_relation(hb, ob);
    if (rules.violates(d.interaction, verb, object, rel)) ++tally.violations;
  }
  return tally;
}

Metrics metrics_from_tally(const EvalTally& t) {
  Metrics m;
  m.interaction_accuracy =
      t.gt_total > 0 ? static_cast<double>(t.gt_hit) / t.gt_total : 0.0;
  m.unseen_accuracy =
      t.unseen_total > 0 ? static_cast<double>(t.unseen_hit) / t.unseen_total : 0.0;
  m.seen_accuracy =
      t.seen_total > 0 ? static_cast<double>(t.seen_hit) / t.seen_total : 0.0;
  m.rule_violation_rate =
      t.predicted > 0 ? static_cast<double>(t.violations) / t.predicted : 0.0;
  return m;
}

Metrics evaluate(const Model& model, const std::vector<Scene>& scenes,
                 const SplitSpec& split, const Vocabulary& vocab,
                 const RuleSet& rules, const EvalConfig& cfg) {
  EvalTally tally;
  for (const auto& scene : scenes) {
    Predictions pred = model.forward(scene.features);
    auto decoded = decode_topk(pred, vocab.num_interactions(), cfg.top_k);
    tally.add(score_scene(scene, pred, decoded, vocab, rules, split));
  }
  return metrics_from_tally(tally);
}

}  // namespace hoir
