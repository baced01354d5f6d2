#pragma once

#include <string>
#include <vector>

#include "hoir/attention.hpp"
#include "hoir/geometry.hpp"
#include "hoir/logic.hpp"
#include "hoir/param_store.hpp"

namespace hoir {

struct ModelConfig {
  int64_t d = 64;                 // embedding width
  int64_t n_queries = 16;         // per role, must be even
  int64_t layers_interaction = 3; // L
  int64_t layers_decoder = 3;     // per role decoder
  int64_t layers_encoder = 1;
  int64_t ffn_dim = 128;
  int64_t pe_dims = 64;           // box-PE width, multiple of 8
  int64_t num_actions = 6;
  int64_t num_objects = 8;
  int64_t num_relations = kNumRelations;
  int64_t num_interactions = 48;  // num_actions * num_objects
  double alpha = 0.2;             // logic-loss weight
  bool use_triplet_attention = true;
  bool use_state_in_pair_terms = true;

  int64_t kept() const { return n_queries / 2; }
  // Synthetic token width: entity classes (objects + person), action
  // evidence slots, box coordinates, and an entity/evidence flag.
  int64_t feature_width() const { return num_objects + 1 + num_actions + 4 + 1; }

  static ModelConfig for_vocab(const Vocabulary& vocab);
  void validate() const;  // ConfigError
};

struct Predictions {
  std::vector<int64_t> kept_human, kept_action, kept_object;
  Tensor human_scores;       // (N/2,) in [0,1]
  Tensor human_score_logits; // (N/2,) pre-sigmoid, for the stable BCE
  Tensor human_boxes;        // (N/2, 4) center-size in [0,1]
  Tensor object_logits;      // (N/2, num_objects + 1), background last
  Tensor object_boxes;       // (N/2, 4)
  Tensor action_logits;      // (N/2, num_actions), per kept action query
  Tensor interaction_logits; // (N/2, N/2, num_interactions + 1), bg last
};

// Keeps the N/2 highest-scoring queries in stable original order; ties
// keep the lowest indices. Kept embeddings pass gradients through,
// dropped ones receive zero. ConfigError when N is odd.
QuerySet filter_queries(const QuerySet& qs);

// The assembled detector: synthetic-feature encoder, three parallel role
// decoders, query filtering, box-encoding attachment, the interaction
// decoder, and the prediction heads.
class Model {
 public:
  Model(ModelConfig cfg, uint64_t seed);

  const ModelConfig& config() const { return cfg_; }
  ParamStore& params() { return params_; }
  const ParamStore& params() const { return params_; }

  // Parameter ids of the interaction decoder (the "reasoner" group the
  // logic loss is restricted to).
  std::unordered_set<uint64_t> reasoner_param_ids() const;

  Predictions forward(const Tensor& features) const;

  // Detached snapshots of the interaction-decoder inputs, captured during
  // a forward pass so the reasoner can be re-run on a fresh tape.
  struct ReasonerInputs {
    Tensor memory;
    QuerySet human, action, object;
  };
  struct ForwardBundle {
    Predictions pred;
    ReasonerInputs detached;
  };
  ForwardBundle forward_bundle(const Tensor& features) const;

  // Re-runs only the interaction decoder and its head on the detached
  // inputs. Losses on the result reach dp.* parameters alone; this backs
  // the separate masked backward pass for the logic loss.
  Tensor rerun_reasoner(const ReasonerInputs& in) const;

  // Embedding concat(e, box_pe) projected back to width D.
  QuerySet attach_box_pe(const QuerySet& qs, const Tensor& boxes) const;

  // Named-tensor checkpoint (JSON).
  void save_checkpoint(const std::string& path) const;
  void load_checkpoint(const std::string& path);

 private:
  struct RoleBranch {
    Tensor queries;  // (N, D) learned
    std::vector<DecoderLayer> layers;
  };

  struct RoleOutputs {
    QuerySet human, action, object;
    Tensor human_boxes, object_boxes;  // for kept queries
    Tensor human_score_logits;
    Tensor action_logits;
    Tensor object_logits;
    Tensor memory;
    std::vector<int64_t> kept_h, kept_a, kept_o;
  };

  Tensor encode(const Tensor& features) const;
  RoleOutputs run_roles(const Tensor& features) const;
  Tensor interaction_head(const Tensor& y) const;

  ModelConfig cfg_;
  ParamStore params_;

  Tensor w_in_, b_in_;
  std::vector<DecoderLayer> encoder_;
  RoleBranch dh_, da_, do_;
  // score/box/class heads
  Tensor h_score_w_, h_score_b_;
  Tensor a_score_w_, a_score_b_;
  Tensor h_box_w_, h_box_b_, o_box_w_, o_box_b_;
  Tensor o_cls_w_, o_cls_b_;
  Tensor a_cls_w_, a_cls_b_;
  Tensor pe_proj_h_e_, pe_proj_h_p_, pe_proj_h_b_;
  Tensor pe_proj_o_e_, pe_proj_o_p_, pe_proj_o_b_;
  InteractionDecoder dp_;
  // Interaction readout: factored verb/object marginals plus a
  // per-category residual and a background logit.
  Tensor head_act_w_, head_act_b_;
  Tensor head_obj_w_, head_obj_b_;
  Tensor head_res_;
  Tensor head_bg_w_, head_bg_b_;
};

}  // namespace hoir
