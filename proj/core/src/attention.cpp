#include "hoir/attention.hpp"

#include <cmath>

namespace hoir {

namespace {

constexpr double kLnEps = 1e-5;

void check_square(const Tensor& w, int64_t d, const char* name) {
  if (w.rank() != 2 || w.shape()[0] != d || w.shape()[1] != d) {
    throw ShapeError(std::string(name) + ": expected (" + std::to_string(d) +
                     "," + std::to_string(d) + "), got " + shape_str(w.shape()));
  }
}

// Reduce the last axis keeping it as extent 1, so the result broadcasts
// back against the input.
Tensor mean_lastdim_keep(const Tensor& x) {
  Shape ks = x.shape();
  ks.back() = 1;
  return reshape(reduce_mean(x, x.rank() - 1), std::move(ks));
}

}  // namespace

AttentionWeights AttentionWeights::create_self(ParamStore& ps,
                                               const std::string& prefix,
                                               int64_t d, Rng& rng) {
  AttentionWeights w;
  w.wq = ps.create_xavier(prefix + ".wq", {d, d}, rng);
  w.wk = ps.create_xavier(prefix + ".wk", {d, d}, rng);
  w.wv = ps.create_xavier(prefix + ".wv", {d, d}, rng);
  w.wv_out = ps.create_xavier(prefix + ".wv_out", {d, d}, rng);
  return w;
}

AttentionWeights AttentionWeights::create_triplet(ParamStore& ps,
                                                  const std::string& prefix,
                                                  int64_t d, Rng& rng) {
  AttentionWeights w;
  w.wq = ps.create_xavier(prefix + ".wq", {d, d}, rng);
  w.wk = ps.create_xavier(prefix + ".wk", {d, d}, rng);
  w.wv_h = ps.create_xavier(prefix + ".wv_h", {d, d}, rng);
  w.wv_o = ps.create_xavier(prefix + ".wv_o", {d, d}, rng);
  w.wv_out = ps.create_xavier(prefix + ".wv_out", {d, d}, rng);
  return w;
}

Tensor self_attention(const Tensor& x, const Tensor& pair_queries,
                      const AttentionWeights& w) {
  if (x.rank() != 2 || pair_queries.shape() != x.shape()) {
    throw ShapeError("self_attention: x " + shape_str(x.shape()) +
                     " and pair queries " + shape_str(pair_queries.shape()) +
                     " must be matching (N,D)");
  }
  int64_t d = x.shape()[1];
  check_square(w.wq, d, "self_attention wq");
  check_square(w.wk, d, "self_attention wk");
  check_square(w.wv, d, "self_attention wv");
  check_square(w.wv_out, d, "self_attention wv_out");

  Tensor base = x + pair_queries;
  Tensor fq = matmul(base, w.wq);
  Tensor fk = matmul(base, w.wk);
  Tensor fv = matmul(base, w.wv);
  Tensor logits = matmul(fq, transpose(fk)) / std::sqrt(static_cast<double>(d));
  Tensor attn = softmax_axis(logits, 1);
  return matmul(matmul(attn, fv), w.wv_out);
}

LayerNorm LayerNorm::create(ParamStore& ps, const std::string& prefix,
                            int64_t d) {
  LayerNorm ln;
  ln.gamma = ps.create_full(prefix + ".gamma", {d}, 1.0);
  ln.beta = ps.create_zeros(prefix + ".beta", {d});
  return ln;
}

Tensor LayerNorm::forward(const Tensor& x) const {
  Tensor centered = x - mean_lastdim_keep(x);
  Tensor var = mean_lastdim_keep(centered * centered);
  Tensor normed = centered / pow(var + kLnEps, 0.5);
  return normed * gamma + beta;
}

FeedForward FeedForward::create(ParamStore& ps, const std::string& prefix,
                                int64_t d, int64_t hidden, Rng& rng) {
  FeedForward f;
  f.w1 = ps.create_xavier(prefix + ".w1", {d, hidden}, rng);
  f.b1 = ps.create_zeros(prefix + ".b1", {hidden});
  f.w2 = ps.create_xavier(prefix + ".w2", {hidden, d}, rng);
  f.b2 = ps.create_zeros(prefix + ".b2", {d});
  return f;
}

Tensor FeedForward::forward(const Tensor& x) const {
  return matmul(relu(matmul(x, w1) + b1), w2) + b2;
}

CrossAttention CrossAttention::create(ParamStore& ps, const std::string& prefix,
                                      int64_t d, Rng& rng) {
  CrossAttention c;
  c.wq = ps.create_xavier(prefix + ".wq", {d, d}, rng);
  c.wk = ps.create_xavier(prefix + ".wk", {d, d}, rng);
  c.wv = ps.create_xavier(prefix + ".wv", {d, d}, rng);
  c.wo = ps.create_xavier(prefix + ".wo", {d, d}, rng);
  return c;
}

Tensor CrossAttention::forward(const Tensor& queries,
                               const Tensor& memory) const {
  if (memory.rank() != 2 ||
      memory.shape()[1] != queries.shape().back()) {
    throw ShapeError("cross_attention: memory " + shape_str(memory.shape()) +
                     " incompatible with queries " +
                     shape_str(queries.shape()));
  }
  int64_t d = memory.shape()[1];
  Tensor fq = matmul(queries, wq);
  Tensor fk = matmul(memory, wk);
  Tensor fv = matmul(memory, wv);
  Tensor logits = matmul(fq, transpose(fk)) / std::sqrt(static_cast<double>(d));
  Tensor attn = softmax_axis(logits, logits.rank() - 1);
  return matmul(matmul(attn, fv), wo);
}

DecoderLayer DecoderLayer::create(ParamStore& ps, const std::string& prefix,
                                  int64_t d, int64_t ffn_dim, Rng& rng) {
  DecoderLayer l;
  l.ln1 = LayerNorm::create(ps, prefix + ".ln1", d);
  l.ln2 = LayerNorm::create(ps, prefix + ".ln2", d);
  l.cross = CrossAttention::create(ps, prefix + ".cross", d, rng);
  l.ffn = FeedForward::create(ps, prefix + ".ffn", d, ffn_dim, rng);
  return l;
}

Tensor DecoderLayer::forward(const Tensor& queries, const Tensor& memory) const {
  Tensor x = queries + cross.forward(ln1.forward(queries), memory);
  return x + ffn.forward(ln2.forward(x));
}

TripletQKV build_triplet_qkv(const PairQuerySet& x, const QuerySet& qh,
                             const QuerySet& qa, const QuerySet& qo,
                             const AttentionWeights& w,
                             const TripletOptions& opt) {
  int64_t d = qh.width();
  if (qa.width() != d || qo.width() != d) {
    throw ShapeError("build_triplet_qkv: query widths differ");
  }
  int64_t n_h = qh.count(), n_a = qa.count(), n_o = qo.count();
  const Tensor& state = x.embeddings;
  if (state.rank() != 3 || state.shape()[0] != n_h || state.shape()[1] != n_o ||
      state.shape()[2] != d) {
    throw ShapeError("build_triplet_qkv: pair state " +
                     shape_str(state.shape()) + " inconsistent with queries");
  }
  check_square(w.wq, d, "triplet wq");
  check_square(w.wk, d, "triplet wk");
  check_square(w.wv_h, d, "triplet wv_h");
  check_square(w.wv_o, d, "triplet wv_o");

  Tensor h_term = qh.embeddings;
  Tensor o_term = qo.embeddings;
  if (opt.use_state_in_pair_terms) {
    h_term = h_term + reduce_mean(state, 1);  // (N_h, D)
    o_term = o_term + reduce_mean(state, 0);  // (N_o, D)
  }

  TripletQKV out;
  // (N_h, 1, D) + (1, N_a, D) -> (N_h, N_a, D)
  Tensor pair_ha = expand(h_term, 1, 1) + expand(qa.embeddings, 0, 1);
  out.fq = matmul(pair_ha, w.wq);
  // (N_a, 1, D) + (1, N_o, D) -> (N_a, N_o, D)
  Tensor pair_ao = expand(qa.embeddings, 1, 1) + expand(o_term, 0, 1);
  out.fk = matmul(pair_ao, w.wk);

  // Both value factors carry the full state broadcast over the action axis.
  Tensor state4 = expand(state, 1, 1);                       // (N_h,1,N_o,D)
  Tensor qh4 = reshape(qh.embeddings, {n_h, 1, 1, d});
  Tensor qa4 = reshape(qa.embeddings, {1, n_a, 1, d});
  Tensor qo4 = reshape(qo.embeddings, {1, 1, n_o, d});
  Tensor factor_h = state4 + qh4 + qa4;                      // (N_h,N_a,N_o,D)
  Tensor factor_o = state4 + qa4 + qo4;
  out.fv = matmul(factor_h, w.wv_h) * matmul(factor_o, w.wv_o);
  return out;
}

Tensor triplet_attention(const TripletQKV& qkv, const AttentionWeights& w) {
  const Tensor& fq = qkv.fq;
  const Tensor& fk = qkv.fk;
  const Tensor& fv = qkv.fv;
  if (fq.rank() != 3 || fk.rank() != 3 || fv.rank() != 4) {
    throw ShapeError("triplet_attention: bad ranks");
  }
  int64_t n_h = fq.shape()[0], n_a = fq.shape()[1], d = fq.shape()[2];
  int64_t n_o = fk.shape()[1];
  if (fk.shape()[0] != n_a) {
    throw ShapeError("triplet_attention: action extents differ, Fq has " +
                     std::to_string(n_a) + ", Fk has " +
                     std::to_string(fk.shape()[0]));
  }
  if (fk.shape()[2] != d || fv.shape() != Shape{n_h, n_a, n_o, d}) {
    throw ShapeError("triplet_attention: inconsistent shapes");
  }
  check_square(w.wv_out, d, "triplet wv_out");

  // scores[i,n,j] = Fq[i,n,:] . Fk[n,j,:] / sqrt(D)
  Tensor prod = expand(fq, 2, 1) * expand(fk, 0, 1);  // (N_h,N_a,N_o,D)
  Tensor logits = reduce_sum(prod, 3) / std::sqrt(static_cast<double>(d));
  Tensor weights = softmax_axis(logits, 1);           // normalize over n
  Tensor ctx = reduce_sum(expand(weights, 3, 1) * fv, 1);  // (N_h,N_o,D)
  return matmul(ctx, w.wv_out);
}

Tensor triplet_oracle(const TripletQKV& qkv, const AttentionWeights& w) {
  const auto& fq = qkv.fq;
  const auto& fk = qkv.fk;
  const auto& fv = qkv.fv;
  int64_t n_h = fq.shape()[0], n_a = fq.shape()[1], d = fq.shape()[2];
  int64_t n_o = fk.shape()[1];
  if (fk.shape()[0] != n_a) {
    throw ShapeError("triplet_oracle: action extents differ");
  }
  const auto& q = fq.data();
  const auto& k = fk.data();
  const auto& v = fv.data();
  const auto& wo = w.wv_out.data();
  double inv_sqrt_d = 1.0 / std::sqrt(static_cast<double>(d));

  std::vector<double> out(static_cast<size_t>(n_h * n_o * d), 0.0);
  std::vector<double> logits(static_cast<size_t>(n_a));
  std::vector<double> acc(static_cast<size_t>(d));
  for (int64_t i = 0; i < n_h; ++i) {
    for (int64_t j = 0; j < n_o; ++j) {
      for (int64_t n = 0; n < n_a; ++n) {
        double dot = 0.0;
        for (int64_t e = 0; e < d; ++e) {
          dot += q[static_cast<size_t>((i * n_a + n) * d + e)] *
                 k[static_cast<size_t>((n * n_o + j) * d + e)];
        }
        logits[static_cast<size_t>(n)] = dot * inv_sqrt_d;
      }
      double mx = logits[0];
      for (int64_t n = 1; n < n_a; ++n) mx = std::max(mx, logits[static_cast<size_t>(n)]);
      double z = 0.0;
      for (int64_t n = 0; n < n_a; ++n) {
        logits[static_cast<size_t>(n)] = std::exp(logits[static_cast<size_t>(n)] - mx);
        z += logits[static_cast<size_t>(n)];
      }
      std::fill(acc.begin(), acc.end(), 0.0);
      for (int64_t n = 0; n < n_a; ++n) {
        double wn = logits[static_cast<size_t>(n)] / z;
        for (int64_t e = 0; e < d; ++e) {
          acc[static_cast<size_t>(e)] +=
              wn * v[static_cast<size_t>(((i * n_a + n) * n_o + j) * d + e)];
        }
      }
      for (int64_t e = 0; e < d; ++e) {
        double s = 0.0;
        for (int64_t f = 0; f < d; ++f) {
          s += acc[static_cast<size_t>(f)] * wo[static_cast<size_t>(f * d + e)];
        }
        out[static_cast<size_t>((i * n_o + j) * d + e)] = s;
      }
    }
  }
  return Tensor::from_data({n_h, n_o, d}, std::move(out), false);
}

InteractionLayer InteractionLayer::create(ParamStore& ps,
                                          const std::string& prefix, int64_t d,
                                          int64_t ffn_dim, bool use_triplet,
                                          Rng& rng) {
  InteractionLayer l;
  l.use_triplet = use_triplet;
  l.ln1 = LayerNorm::create(ps, prefix + ".ln1", d);
  l.ln2 = LayerNorm::create(ps, prefix + ".ln2", d);
  l.ln3 = LayerNorm::create(ps, prefix + ".ln3", d);
  l.attn = use_triplet
               ? AttentionWeights::create_triplet(ps, prefix + ".tri", d, rng)
               : AttentionWeights::create_self(ps, prefix + ".sa", d, rng);
  l.cross = CrossAttention::create(ps, prefix + ".cross", d, rng);
  l.ffn = FeedForward::create(ps, prefix + ".ffn", d, ffn_dim, rng);
  return l;
}

Tensor InteractionLayer::forward(const Tensor& x, const Tensor& memory,
                                 const QuerySet& qh, const QuerySet& qa,
                                 const QuerySet& qo,
                                 const Tensor& pair_queries) const {
  int64_t n_h = x.shape()[0], n_o = x.shape()[1], d = x.shape()[2];
  Tensor state = x;
  if (use_triplet) {
    PairQuerySet normed{ln1.forward(state)};
    TripletQKV qkv = build_triplet_qkv(normed, qh, qa, qo, attn, opt);
    state = state + triplet_attention(qkv, attn);
  } else {
    Tensor flat = reshape(ln1.forward(state), {n_h * n_o, d});
    Tensor pq = reshape(pair_queries, {n_h * n_o, d});
    state = state + reshape(self_attention(flat, pq, attn), {n_h, n_o, d});
  }
  state = state + cross.forward(ln2.forward(state), memory);
  return state + ffn.forward(ln3.forward(state));
}

InteractionDecoder InteractionDecoder::create(
    ParamStore& ps, const std::string& prefix, int64_t n_h, int64_t n_o,
    int64_t d, int64_t ffn_dim, int64_t num_layers, bool use_triplet,
    const TripletOptions& opt, Rng& rng) {
  if (num_layers < 1) {
    throw ConfigError("interaction decoder: needs at least 1 layer, got " +
                      std::to_string(num_layers));
  }
  InteractionDecoder dec;
  dec.use_triplet = use_triplet;
  dec.pos_h = ps.create(prefix + ".pos_h", {n_h, d}, rng, 0.1);
  dec.pos_o = ps.create(prefix + ".pos_o", {n_o, d}, rng, 0.1);
  dec.pair_wh = ps.create_xavier(prefix + ".pair_wh", {d, d}, rng);
  dec.pair_wo = ps.create_xavier(prefix + ".pair_wo", {d, d}, rng);
  for (int64_t i = 0; i < num_layers; ++i) {
    InteractionLayer l = InteractionLayer::create(
        ps, prefix + ".layer" + std::to_string(i), d, ffn_dim, use_triplet, rng);
    l.opt = opt;
    dec.layers.push_back(std::move(l));
  }
  return dec;
}

Tensor InteractionDecoder::initial_state() const {
  // Factored interaction position embedding: per-human + per-object.
  return expand(pos_h, 1, 1) + expand(pos_o, 0, 1);
}

PairQuerySet InteractionDecoder::forward(const Tensor& memory,
                                         const QuerySet& qh, const QuerySet& qa,
                                         const QuerySet& qo) const {
  int64_t n_h = qh.count(), n_o = qo.count();
  if (pos_h.shape()[0] != n_h || pos_o.shape()[0] != n_o) {
    throw ShapeError("interaction decoder built for (" +
                     std::to_string(pos_h.shape()[0]) + "," +
                     std::to_string(pos_o.shape()[0]) + ") queries, got (" +
                     std::to_string(n_h) + "," + std::to_string(n_o) + ")");
  }
  Tensor x = initial_state();
  Tensor pair_queries;
  if (!use_triplet) {
    // Q^{h-o}: concat-then-project of the human and object embeddings,
    // realized as the equivalent sum of two projections.
    pair_queries = expand(matmul(qh.embeddings, pair_wh), 1, 1) +
                   expand(matmul(qo.embeddings, pair_wo), 0, 1);
  }
  for (const auto& layer : layers) {
    x = layer.forward(x, memory, qh, qa, qo, pair_queries);
  }
  return PairQuerySet{x};
}

}  // namespace hoir
