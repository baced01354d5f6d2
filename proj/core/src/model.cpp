#include "hoir/model.hpp"

#include <algorithm>
#include <fstream>
#include <numeric>

#include <json.hpp>

namespace hoir {

ModelConfig ModelConfig::for_vocab(const Vocabulary& vocab) {
  ModelConfig cfg;
  cfg.num_actions = vocab.num_actions();
  cfg.num_objects = vocab.num_objects();
  cfg.num_interactions = vocab.num_interactions();
  return cfg;
}

void ModelConfig::validate() const {
  if (n_queries < 2 || n_queries % 2 != 0) {
    throw ConfigError("model: n_queries must be even and >= 2, got " +
                      std::to_string(n_queries));
  }
  if (layers_interaction < 1) {
    throw ConfigError("model: layers_interaction must be >= 1");
  }
  if (layers_decoder < 1 || layers_encoder < 0) {
    throw ConfigError("model: bad decoder/encoder layer counts");
  }
  if (alpha < 0.0) throw ConfigError("model: alpha must be >= 0");
  if (d < 1 || ffn_dim < 1) throw ConfigError("model: bad widths");
  if (pe_dims <= 0 || pe_dims % 8 != 0) {
    throw ConfigError("model: pe_dims must be a positive multiple of 8");
  }
  if (num_actions < 1 || num_objects < 1) {
    throw ConfigError("model: empty vocabulary");
  }
  if (num_interactions != num_actions * num_objects) {
    throw ConfigError("model: num_interactions must equal actions*objects");
  }
  if (num_relations != kNumRelations) {
    throw ConfigError("model: num_relations must be " +
                      std::to_string(kNumRelations));
  }
}

QuerySet filter_queries(const QuerySet& qs) {
  int64_t n = qs.count();
  if (n % 2 != 0) {
    throw ConfigError("filter_queries: query count must be even, got " +
                      std::to_string(n));
  }
  int64_t keep = n / 2;
  const auto& s = qs.scores.data();
  std::vector<int64_t> order(static_cast<size_t>(n));
  std::iota(order.begin(), order.end(), 0);
  std::sort(order.begin(), order.end(), [&](int64_t a, int64_t b) {
    if (s[static_cast<size_t>(a)] != s[static_cast<size_t>(b)]) {
      return s[static_cast<size_t>(a)] > s[static_cast<size_t>(b)];
    }
    return a < b;  // ties keep the lowest index
  });
  std::vector<int64_t> kept(order.begin(), order.begin() + keep);
  std::sort(kept.begin(), kept.end());  // stable original order
  QuerySet out;
  out.role = qs.role;
  out.embeddings = index_select(qs.embeddings, 0, kept);
  out.scores = index_select(qs.scores, 0, kept);
  return out;
}

namespace {

std::vector<int64_t> kept_indices(const Tensor& scores) {
  int64_t n = scores.size();
  int64_t keep = n / 2;
  const auto& s = scores.data();
  std::vector<int64_t> order(static_cast<size_t>(n));
  std::iota(order.begin(), order.end(), 0);
  std::sort(order.begin(), order.end(), [&](int64_t a, int64_t b) {
    if (s[static_cast<size_t>(a)] != s[static_cast<size_t>(b)]) {
      return s[static_cast<size_t>(a)] > s[static_cast<size_t>(b)];
    }
    return a < b;
  });
  std::vector<int64_t> kept(order.begin(), order.begin() + keep);
  std::sort(kept.begin(), kept.end());
  return kept;
}

Tensor linear(const Tensor& x, const Tensor& w, const Tensor& b) {
  return matmul(x, w) + b;
}

}  // namespace

Model::Model(ModelConfig cfg, uint64_t seed) : cfg_(std::move(cfg)) {
  cfg_.validate();
  Rng rng(seed);
  int64_t d = cfg_.d;
  int64_t n = cfg_.n_queries;
  int64_t keep = cfg_.kept();

  w_in_ = params_.create_xavier("enc.w_in", {cfg_.feature_width(), d}, rng);
  b_in_ = params_.create_zeros("enc.b_in", {d});
  for (int64_t i = 0; i < cfg_.layers_encoder; ++i) {
    encoder_.push_back(DecoderLayer::create(
        params_, "enc.layer" + std::to_string(i), d, cfg_.ffn_dim, rng));
  }

  auto build_role = [&](const char* prefix, RoleBranch& branch) {
    branch.queries =
        params_.create(std::string(prefix) + ".queries", {n, d}, rng, 0.1);
    for (int64_t i = 0; i < cfg_.layers_decoder; ++i) {
      branch.layers.push_back(DecoderLayer::create(
          params_, std::string(prefix) + ".layer" + std::to_string(i), d,
          cfg_.ffn_dim, rng));
    }
  };
  build_role("dh", dh_);
  build_role("da", da_);
  build_role("do", do_);

  h_score_w_ = params_.create_xavier("heads.h_score.w", {d, 1}, rng);
  h_score_b_ = params_.create_zeros("heads.h_score.b", {1});
  a_score_w_ = params_.create_xavier("heads.a_score.w", {d, 1}, rng);
  a_score_b_ = params_.create_zeros("heads.a_score.b", {1});
  h_box_w_ = params_.create_xavier("heads.h_box.w", {d, 4}, rng);
  h_box_b_ = params_.create_zeros("heads.h_box.b", {4});
  o_box_w_ = params_.create_xavier("heads.o_box.w", {d, 4}, rng);
  o_box_b_ = params_.create_zeros("heads.o_box.b", {4});
  o_cls_w_ = params_.create_xavier("heads.o_cls.w", {d, cfg_.num_objects + 1}, rng);
  o_cls_b_ = params_.create_zeros("heads.o_cls.b", {cfg_.num_objects + 1});
  a_cls_w_ = params_.create_xavier("heads.a_cls.w", {d, cfg_.num_actions}, rng);
  a_cls_b_ = params_.create_zeros("heads.a_cls.b", {cfg_.num_actions});

  pe_proj_h_e_ = params_.create_xavier("heads.pe_h.we", {d, d}, rng);
  pe_proj_h_p_ = params_.create_xavier("heads.pe_h.wp", {cfg_.pe_dims, d}, rng);
  pe_proj_h_b_ = params_.create_zeros("heads.pe_h.b", {d});
  pe_proj_o_e_ = params_.create_xavier("heads.pe_o.we", {d, d}, rng);
  pe_proj_o_p_ = params_.create_xavier("heads.pe_o.wp", {cfg_.pe_dims, d}, rng);
  pe_proj_o_b_ = params_.create_zeros("heads.pe_o.b", {d});

  TripletOptions opt;
  opt.use_state_in_pair_terms = cfg_.use_state_in_pair_terms;
  dp_ = InteractionDecoder::create(params_, "dp", keep, keep, d, cfg_.ffn_dim,
                                   cfg_.layers_interaction,
                                   cfg_.use_triplet_attention, opt, rng);

  head_act_w_ = params_.create_xavier("dp.head.act_w", {d, cfg_.num_actions}, rng);
  head_act_b_ = params_.create_zeros("dp.head.act_b", {cfg_.num_actions});
  head_obj_w_ = params_.create_xavier("dp.head.obj_w", {d, cfg_.num_objects}, rng);
  head_obj_b_ = params_.create_zeros("dp.head.obj_b", {cfg_.num_objects});
  head_res_ = params_.create_zeros("dp.head.residual", {cfg_.num_interactions});
  head_bg_w_ = params_.create_xavier("dp.head.bg_w", {d, 1}, rng);
  head_bg_b_ = params_.create_zeros("dp.head.bg_b", {1});
}

std::unordered_set<uint64_t> Model::reasoner_param_ids() const {
  return params_.ids_with_prefix("dp.");
}

Tensor Model::encode(const Tensor& features) const {
  if (features.rank() != 2 || features.shape()[1] != cfg_.feature_width()) {
    throw ShapeError("model: features " + shape_str(features.shape()) +
                     " do not match configured width " +
                     std::to_string(cfg_.feature_width()));
  }
  Tensor x = linear(features, w_in_, b_in_);
  for (const auto& layer : encoder_) {
    x = layer.forward(x, x);
  }
  return x;
}

QuerySet Model::attach_box_pe(const QuerySet& qs, const Tensor& boxes) const {
  if (boxes.rank() != 2 || boxes.shape()[0] != qs.count() ||
      boxes.shape()[1] != 4) {
    throw ShapeError("attach_box_pe: boxes " + shape_str(boxes.shape()) +
                     " do not match " + std::to_string(qs.count()) +
                     " queries");
  }
  const bool human = qs.role == Role::Human;
  const Tensor& we = human ? pe_proj_h_e_ : pe_proj_o_e_;
  const Tensor& wp = human ? pe_proj_h_p_ : pe_proj_o_p_;
  const Tensor& b = human ? pe_proj_h_b_ : pe_proj_o_b_;
  Tensor pe = box_pe_rows(boxes, cfg_.pe_dims);
  QuerySet out = qs;
  out.embeddings = matmul(qs.embeddings, we) + matmul(pe, wp) + b;
  return out;
}

Model::RoleOutputs Model::run_roles(const Tensor& features) const {
  RoleOutputs out;
  out.memory = encode(features);

  auto run_branch = [&](const RoleBranch& branch) {
    Tensor q = branch.queries;
    for (const auto& layer : branch.layers) q = layer.forward(q, out.memory);
    return q;
  };
  Tensor qh = run_branch(dh_);
  Tensor qa = run_branch(da_);
  Tensor qo = run_branch(do_);

  Tensor h_score_logits =
      reshape(linear(qh, h_score_w_, h_score_b_), {cfg_.n_queries});
  Tensor h_scores = sigmoid(h_score_logits);
  Tensor a_scores =
      reshape(sigmoid(linear(qa, a_score_w_, a_score_b_)), {cfg_.n_queries});
  Tensor o_logits_all = linear(qo, o_cls_w_, o_cls_b_);
  Tensor o_probs = softmax_axis(o_logits_all, 1);
  Tensor o_fg = 1.0 - chip(o_probs, 1, cfg_.num_objects);  // bg is last

  out.kept_h = kept_indices(h_scores);
  out.kept_a = kept_indices(a_scores);
  out.kept_o = kept_indices(o_fg);

  out.human = QuerySet{Role::Human, index_select(qh, 0, out.kept_h),
                       index_select(h_scores, 0, out.kept_h)};
  out.human_score_logits = index_select(h_score_logits, 0, out.kept_h);
  out.action = QuerySet{Role::Action, index_select(qa, 0, out.kept_a),
                        index_select(a_scores, 0, out.kept_a)};
  out.object = QuerySet{Role::Object, index_select(qo, 0, out.kept_o),
                        index_select(o_fg, 0, out.kept_o)};

  // Bounded strictly inside [1e-4, 1-1e-4] so extents never collapse to
  // zero even when the sigmoid saturates.
  auto box_head = [](const Tensor& x) {
    return sigmoid(x) * (1.0 - 2e-4) + 1e-4;
  };
  out.human_boxes = box_head(linear(out.human.embeddings, h_box_w_, h_box_b_));
  out.object_boxes =
      box_head(linear(out.object.embeddings, o_box_w_, o_box_b_));
  out.object_logits = index_select(o_logits_all, 0, out.kept_o);
  out.action_logits = linear(out.action.embeddings, a_cls_w_, a_cls_b_);

  // Concatenate sinusoidal box encodings into the human/object
  // embeddings before the interaction decoder.
  out.human = attach_box_pe(out.human, out.human_boxes);
  out.object = attach_box_pe(out.object, out.object_boxes);
  return out;
}

Tensor Model::interaction_head(const Tensor& y) const {
  int64_t n_h = y.shape()[0], n_o = y.shape()[1];
  Tensor act = linear(y, head_act_w_, head_act_b_);  // (N_h,N_o,A)
  Tensor obj = linear(y, head_obj_w_, head_obj_b_);  // (N_h,N_o,B)
  Tensor grid = expand(act, 3, 1) + expand(obj, 2, 1);  // (N_h,N_o,A,B)
  Tensor fg = reshape(grid, {n_h, n_o, cfg_.num_interactions}) + head_res_;
  Tensor bg = linear(y, head_bg_w_, head_bg_b_);  // (N_h,N_o,1)
  return concat({fg, bg}, 2);
}

Model::ForwardBundle Model::forward_bundle(const Tensor& features) const {
  RoleOutputs roles = run_roles(features);
  PairQuerySet y = dp_.forward(roles.memory, roles.human, roles.action,
                               roles.object);
  ForwardBundle bundle;
  Predictions& pred = bundle.pred;
  pred.kept_human = roles.kept_h;
  pred.kept_action = roles.kept_a;
  pred.kept_object = roles.kept_o;
  pred.human_scores = roles.human.scores;
  pred.human_score_logits = roles.human_score_logits;
  pred.human_boxes = roles.human_boxes;
  pred.object_logits = roles.object_logits;
  pred.object_boxes = roles.object_boxes;
  pred.action_logits = roles.action_logits;
  pred.interaction_logits = interaction_head(y.embeddings);

  bundle.detached.memory = roles.memory.detach();
  bundle.detached.human = QuerySet{Role::Human, roles.human.embeddings.detach(),
                                   roles.human.scores.detach()};
  bundle.detached.action = QuerySet{Role::Action,
                                    roles.action.embeddings.detach(),
                                    roles.action.scores.detach()};
  bundle.detached.object = QuerySet{Role::Object,
                                    roles.object.embeddings.detach(),
                                    roles.object.scores.detach()};
  return bundle;
}

Predictions Model::forward(const Tensor& features) const {
  return forward_bundle(features).pred;
}

Tensor Model::rerun_reasoner(const ReasonerInputs& in) const {
  PairQuerySet y = dp_.forward(in.memory, in.human, in.action, in.object);
  return interaction_head(y.embeddings);
}

void Model::save_checkpoint(const std::string& path) const {
  nlohmann::ordered_json j;
  for (const auto& [name, t] : params_.items()) {
    nlohmann::ordered_json entry;
    entry["shape"] = t.shape();
    entry["data"] = t.data();
    j[name] = std::move(entry);
  }
  std::ofstream out(path);
  if (!out) throw NumericError("save_checkpoint: cannot open " + path);
  out << j.dump(1) << "\n";
}

void Model::load_checkpoint(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("load_checkpoint: cannot open " + path);
  nlohmann::json j;
  in >> j;
  for (const auto& [name, t] : params_.items()) {
    auto it = j.find(name);
    if (it == j.end()) {
      throw ContractError("load_checkpoint: missing parameter '" + name + "'");
    }
    Shape shape = it->at("shape").get<Shape>();
    if (shape != t.shape()) {
      throw ShapeError("load_checkpoint: shape mismatch for '" + name + "'");
    }
    std::vector<double> data = it->at("data").get<std::vector<double>>();
    Tensor handle = t;
    handle.mutable_data() = std::move(data);
  }
}

}  // namespace hoir
