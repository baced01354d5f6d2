#pragma once

#include <map>
#include <vector>

#include "hoir/logic.hpp"
#include "hoir/model.hpp"

namespace hoir {

// ---- synthetic scenes ----

struct Entity {
  int64_t cls = 0;        // object class id; humans use the person slot
  Box box;
  bool is_human = false;
};

struct GtInteraction {
  int64_t human = 0;   // entity index
  int64_t action = 0;  // action id
  int64_t object = 0;  // entity index
};

struct Scene {
  Tensor features;  // (M, feature_width)
  std::vector<Entity> entities;
  std::vector<GtInteraction> gt;
  // Precomputed relation per (human entity, object entity) pair.
  std::map<std::pair<int64_t, int64_t>, SpatialRelation> relations;

  SpatialRelation relation(int64_t human_idx, int64_t object_idx) const;
  std::vector<int64_t> human_indices() const;
  std::vector<int64_t> object_indices() const;
};

enum class SplitKind { Regular, UnseenCombination, UnseenObject, UnseenVerb };

struct SplitSpec {
  SplitKind kind = SplitKind::Regular;
  // Interaction ids (UC), object ids (UO), or verb ids (UV).
  std::vector<int64_t> held_out;

  bool holds_out_interaction(const Vocabulary& vocab, int64_t id) const;
  bool allows_in_training(const Vocabulary& vocab, int64_t interaction_id) const;
};

SplitSpec make_split(const Vocabulary& vocab, SplitKind kind, int64_t count,
                     uint64_t seed);

// Deterministic synthetic rule inventory: alternating action/object rules
// with small infeasible lists.
RuleSet make_synthetic_rules(const Vocabulary& vocab, int64_t count,
                             uint64_t seed);

enum class ScenePhase { Train, Eval };

struct SceneGenConfig {
  double noise = 0.05;  // feature noise sigma
  int max_retries = 64;
};

// Deterministic per seed: 1-4 humans, 1-5 objects, 1-6 rule-consistent
// interactions, features carrying class/box/action evidence so the task
// is learnable. Eval scenes for non-regular splits contain at least one
// held-out interaction. GenerationError when the constraints cannot be
// satisfied.
Scene generate_scene(uint64_t seed, const Vocabulary& vocab,
                     const RuleSet& rules, const SplitSpec& split,
                     ScenePhase phase, const SceneGenConfig& gen = {});

// ---- set matching ----

// Minimum-total-cost one-to-one assignment of min(P,G) pairs. Returns a
// vector of length P with the matched column per row, -1 for unmatched.
// NumericError on NaN entries.
std::vector<int64_t> hungarian_match(const std::vector<std::vector<double>>& cost);
std::vector<int64_t> hungarian_match(const Tensor& cost);

// ---- losses ----

struct LossWeights {
  double box_l1 = 5.0;
  double box_giou = 2.0;
  double cls = 1.0;
  double background = 0.1;  // down-weight for background cells
};

struct LossReport {
  double l_cls_human = 0, l_cls_object = 0;
  double l_box_l1 = 0, l_box_giou = 0;
  double l_action = 0, l_interaction = 0;
  double l_vp = 0, l_op = 0;
  double alpha = 0;
  double total = 0;

  double hoi_sum() const {
    return l_cls_human + l_cls_object + l_box_l1 + l_box_giou + l_action +
           l_interaction;
  }
};

struct HoiLossResult {
  Tensor total;        // detection loss, weighted sum
  LossReport report;   // detection components filled in
};

// DETR-style detection loss: Hungarian matching per role, classification
// everywhere, l1 + GIoU on matched boxes, image-level action BCE, and
// cross-entropy on the interaction grid with targets induced from the
// role matchings.
HoiLossResult hoi_loss(const Predictions& pred, const Scene& scene,
                       const Vocabulary& vocab, const LossWeights& w = {});

// Scores fed to the logic loss, one sample per interaction-grid cell.
// Action scores are the image-level action probabilities; gates come from
// the predicted boxes.
ScoreTable build_score_table(const std::vector<const Predictions*>& preds,
                             const Vocabulary& vocab);

// ---- optimizer ----

struct AdamConfig {
  double lr = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
};

class Adam {
 public:
  explicit Adam(AdamConfig cfg = {}) : cfg_(cfg) {}
  const AdamConfig& config() const { return cfg_; }
  // Applies one update from the accumulated gradients, then zeroes them.
  void step(ParamStore& params);

 private:
  struct Slot {
    std::vector<double> m, v;
  };
  AdamConfig cfg_;
  int64_t t_ = 0;
  std::map<std::string, Slot> state_;
};

// ---- training ----

struct TrainConfig {
  AdamConfig adam;
  LossWeights weights;
  LogicConfig logic;
  bool lrl = true;  // logic-guided learning on/off
  bool lvp = true;  // action-rule family
  bool lop = true;  // object-rule family
};

// One optimizer step over a batch. The detection loss back-propagates
// through the whole model; the logic loss runs as a separate backward
// pass whose leaf accumulation is restricted to the interaction-decoder
// parameter group. NumericError with a diagnostic dump on non-finite
// losses.
LossReport train_step(Model& model, Adam& opt,
                      const std::vector<const Scene*>& batch,
                      const Vocabulary& vocab, const RuleSet& rules,
                      const TrainConfig& cfg);

// ---- evaluation ----

struct DecodedTriplet {
  int64_t human_slot = 0, object_slot = 0;
  int64_t interaction = 0;
  double score = 0;
};

// Greedy per-pair decoding (argmax foreground class per grid cell), then
// the top-k cells by probability.
std::vector<DecodedTriplet> decode_topk(const Predictions& pred,
                                        int64_t num_interactions, int64_t k);

struct EvalTally {
  int64_t gt_total = 0, gt_hit = 0;
  int64_t unseen_total = 0, unseen_hit = 0;
  int64_t seen_total = 0, seen_hit = 0;
  int64_t predicted = 0, violations = 0;

  void add(const EvalTally& other);
};

// Category-level scoring of decoded triplets against the scene's ground
// truth; violations are judged with relations from the predicted boxes.
EvalTally score_scene(const Scene& scene, const Predictions& pred,
                      const std::vector<DecodedTriplet>& decoded,
                      const Vocabulary& vocab, const RuleSet& rules,
                      const SplitSpec& split);

struct Metrics {
  double interaction_accuracy = 0;
  double rule_violation_rate = 0;
  double unseen_accuracy = 0;
  double seen_accuracy = 0;
};

Metrics metrics_from_tally(const EvalTally& t);

struct EvalConfig {
  int64_t top_k = 10;
};

Metrics evaluate(const Model& model, const std::vector<Scene>& scenes,
                 const SplitSpec& split, const Vocabulary& vocab,
                 const RuleSet& rules, const EvalConfig& cfg = {});

}  // namespace hoir
