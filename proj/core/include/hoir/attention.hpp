#pragma once

#include <string>
#include <vector>

#include "hoir/param_store.hpp"
#include "hoir/tensor.hpp"

namespace hoir {

enum class Role { Human, Action, Object };

// A bank of query embeddings of one role with per-query scores in [0,1].
struct QuerySet {
  Role role = Role::Human;
  Tensor embeddings;  // (N, D)
  Tensor scores;      // (N,)

  int64_t count() const { return embeddings.shape()[0]; }
  int64_t width() const { return embeddings.shape()[1]; }
};

// Projection matrices for one attention block, all (D, D). Baseline
// self-attention uses wq/wk/wv; the triplet block replaces wv with the
// wv_h/wv_o pair. wv_out is the output projection.
struct AttentionWeights {
  Tensor wq, wk, wv, wv_h, wv_o, wv_out;

  static AttentionWeights create_self(ParamStore& ps, const std::string& prefix,
                                      int64_t d, Rng& rng);
  static AttentionWeights create_triplet(ParamStore& ps,
                                         const std::string& prefix, int64_t d,
                                         Rng& rng);
};

// The pair-grid interaction state: embeddings (N_h, N_o, D).
struct PairQuerySet {
  Tensor embeddings;
};

// Baseline single-head self-attention over N pair queries:
//   F^{q,k,v} = (x + pair_queries) W^{q,k,v}
//   out_i = [sum_n softmax_n(F^q_i . F^k_n / sqrt(D)) F^v_n] W^{v'}
Tensor self_attention(const Tensor& x, const Tensor& pair_queries,
                      const AttentionWeights& w);

struct LayerNorm {
  Tensor gamma, beta;
  static LayerNorm create(ParamStore& ps, const std::string& prefix, int64_t d);
  Tensor forward(const Tensor& x) const;  // normalizes the last axis
};

struct FeedForward {
  Tensor w1, b1, w2, b2;
  static FeedForward create(ParamStore& ps, const std::string& prefix,
                            int64_t d, int64_t hidden, Rng& rng);
  Tensor forward(const Tensor& x) const;
};

// Single-head cross-attention: queries (.., N, D) attend to memory (M, D).
struct CrossAttention {
  Tensor wq, wk, wv, wo;
  static CrossAttention create(ParamStore& ps, const std::string& prefix,
                               int64_t d, Rng& rng);
  Tensor forward(const Tensor& queries, const Tensor& memory) const;
};

// One role-decoder layer: pre-LN cross-attention over the memory followed
// by a pre-LN feed-forward, residual throughout.
struct DecoderLayer {
  LayerNorm ln1, ln2;
  CrossAttention cross;
  FeedForward ffn;
  static DecoderLayer create(ParamStore& ps, const std::string& prefix,
                             int64_t d, int64_t ffn_dim, Rng& rng);
  Tensor forward(const Tensor& queries, const Tensor& memory) const;
};

struct TripletQKV {
  Tensor fq;  // (N_h, N_a, D)
  Tensor fk;  // (N_a, N_o, D)
  Tensor fv;  // (N_h, N_a, N_o, D)
};

struct TripletOptions {
  // When false, the pair-grid state is left out of the Fq/Fk pair terms
  // (it always enters Fv).
  bool use_state_in_pair_terms = true;
};

// Builds the triplet query/key/value embeddings. The pair-grid state X
// has shape (N_h, N_o, D) while the pair terms live on (N_h, N_a, D) and
// (N_a, N_o, D); X enters them reduced by a mean over the missing axis
// and enters both Fv factors broadcast over the action axis.
TripletQKV build_triplet_qkv(const PairQuerySet& x, const QuerySet& qh,
                             const QuerySet& qa, const QuerySet& qo,
                             const AttentionWeights& w,
                             const TripletOptions& opt = {});

// Triplet-reasoning attention update:
//   out_{ij} = [sum_n softmax_n(F^q_{in} . F^k_{nj} / sqrt(D)) F^v_{inj}] W^{v'}
// The softmax normalizes over the shared action axis for each (i, j).
Tensor triplet_attention(const TripletQKV& qkv, const AttentionWeights& w);

// Same contract computed with explicit scalar loops; shares no vectorized
// code with triplet_attention and serves as its oracle.
Tensor triplet_oracle(const TripletQKV& qkv, const AttentionWeights& w);

// One interaction-decoder layer: triplet attention (or baseline
// self-attention over the flattened pair grid), cross-attention to the
// visual memory, and a feed-forward, all pre-LN residual branches.
struct InteractionLayer {
  LayerNorm ln1, ln2, ln3;
  AttentionWeights attn;
  CrossAttention cross;
  FeedForward ffn;
  bool use_triplet = true;
  TripletOptions opt;

  static InteractionLayer create(ParamStore& ps, const std::string& prefix,
                                 int64_t d, int64_t ffn_dim, bool use_triplet,
                                 Rng& rng);
  // x: (N_h, N_o, D). For the baseline path, pair_queries is the
  // broadcast-sum projection of the human/object embeddings.
  Tensor forward(const Tensor& x, const Tensor& memory, const QuerySet& qh,
                 const QuerySet& qa, const QuerySet& qo,
                 const Tensor& pair_queries) const;
};

// The interaction decoder D^p: L layers over an initial pair-grid state
// built from learned per-human and per-object position embeddings.
struct InteractionDecoder {
  Tensor pos_h, pos_o;  // (N_h, D), (N_o, D)
  Tensor pair_wh, pair_wo;  // baseline pair-query projections (D, D)
  std::vector<InteractionLayer> layers;
  bool use_triplet = true;

  static InteractionDecoder create(ParamStore& ps, const std::string& prefix,
                                   int64_t n_h, int64_t n_o, int64_t d,
                                   int64_t ffn_dim, int64_t num_layers,
                                   bool use_triplet, const TripletOptions& opt,
                                   Rng& rng);

  Tensor initial_state() const;
  // Returns Y of shape (N_h, N_o, D). ConfigError when constructed with
  // zero layers.
  PairQuerySet forward(const Tensor& memory, const QuerySet& qh,
                       const QuerySet& qa, const QuerySet& qo) const;
};

}  // namespace hoir
