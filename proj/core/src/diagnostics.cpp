#include "hoir/diagnostics.hpp"

#include <cmath>
#include <sstream>

#include "hoir/attention.hpp"
#include "hoir/train.hpp"

namespace hoir {

namespace {

Tensor random_tensor(Shape shape, Rng& rng, double scale = 1.0) {
  std::vector<double> d(static_cast<size_t>(numel(shape)));
  for (auto& v : d) v = rng.uniform(-scale, scale);
  return Tensor::from_data(std::move(shape), std::move(d), false);
}

void fold(GradCheckSuiteResult& suite, const std::string& name,
          const GradCheckReport& r) {
  std::ostringstream os;
  os << name << ": rel_err=" << r.max_rel_error << " checked=" << r.checked
     << " skipped=" << r.skipped_nonsmooth;
  suite.lines.push_back(os.str());
  suite.worst_rel_error = std::max(suite.worst_rel_error, r.max_rel_error);
  suite.checked += r.checked;
  suite.skipped_nonsmooth += r.skipped_nonsmooth;
}

}  // namespace

GradCheckSuiteResult gradcheck_tensor_ops(uint64_t seed) {
  GradCheckSuiteResult suite;
  suite.scope = "tensor-ops";
  suite.tolerance = 1e-4;
  Rng rng(seed);

  {
    Tensor w = random_tensor({4, 4}, rng);
    auto f = [&](const Tensor& x) {
      return sum_all(softmax_axis(matmul(x, w), 1) * 0.7);
    };
    fold(suite, "matmul+softmax+sum", grad_check(f, random_tensor({3, 4}, rng)));
  }
  {
    auto f = [](const Tensor& x) {
      Tensor a = reshape(x, {2, 3});
      return mean_all(exp(a * 0.3) + sigmoid(a) * pow(a * a + 1.0, 0.5));
    };
    fold(suite, "elementwise chain", grad_check(f, random_tensor({6}, rng)));
  }
  {
    auto f = [](const Tensor& x) {
      Tensor e = expand(x, 0, 4);
      return sum_all(reduce_mean(e, 0) * reduce_sum(e, 0));
    };
    fold(suite, "expand+reduce", grad_check(f, random_tensor({5}, rng)));
  }
  {
    Tensor other = random_tensor({4, 4}, rng, 0.3);
    auto f = [&](const Tensor& x) {
      return sum_all(log_softmax_axis(concat({x, other}, 0), 1));
    };
    fold(suite, "concat+log_softmax", grad_check(f, random_tensor({2, 4}, rng)));
  }
  {
    // GIoU on jittered box pairs, away from degenerate overlaps
    Rng brng(seed + 7);
    std::vector<double> av, bv;
    for (int i = 0; i < 4; ++i) {
      double w = brng.uniform(0.15, 0.3), h = brng.uniform(0.15, 0.3);
      av.insert(av.end(), {brng.uniform(0.3, 0.7), brng.uniform(0.3, 0.7), w, h});
      double w2 = brng.uniform(0.15, 0.3), h2 = brng.uniform(0.15, 0.3);
      bv.insert(bv.end(), {brng.uniform(0.3, 0.7), brng.uniform(0.3, 0.7), w2, h2});
    }
    Tensor fixed = Tensor::from_data({4, 4}, bv);
    auto f = [&](const Tensor& boxes) {
      return sum_all(giou_rows(boxes, fixed));
    };
    fold(suite, "giou", grad_check(f, Tensor::from_data({4, 4}, av), 1e-6));
  }
  suite.pass = suite.worst_rel_error < suite.tolerance;
  return suite;
}

GradCheckSuiteResult gradcheck_attention(uint64_t seed) {
  GradCheckSuiteResult suite;
  suite.scope = "attention";
  suite.tolerance = 1e-4;
  Rng rng(seed);
  ParamStore ps;

  {
    auto w = AttentionWeights::create_self(ps, "sa", 6, rng);
    Tensor pq = random_tensor({4, 6}, rng, 0.5);
    auto f = [&](const Tensor& x) {
      return sum_all(self_attention(x, pq, w) * 0.31);
    };
    fold(suite, "self_attention", grad_check(f, random_tensor({4, 6}, rng)));
  }
  {
    auto w = AttentionWeights::create_triplet(ps, "tri", 5, rng);
    Tensor fk = random_tensor({3, 2, 5}, rng);
    Tensor fv = random_tensor({2, 3, 2, 5}, rng);
    auto f = [&](const Tensor& fq) {
      return sum_all(triplet_attention(TripletQKV{fq, fk, fv}, w) * 0.17);
    };
    fold(suite, "triplet_attention/fq", grad_check(f, random_tensor({2, 3, 5}, rng)));
    Tensor fq = random_tensor({2, 3, 5}, rng);
    auto g = [&](const Tensor& v) {
      return sum_all(triplet_attention(TripletQKV{fq, fk, v}, w) * 0.17);
    };
    fold(suite, "triplet_attention/fv",
         grad_check(g, random_tensor({2, 3, 2, 5}, rng)));
  }
  {
    auto dec = InteractionDecoder::create(ps, "dp", 2, 2, 4, 8, 1, true, {}, rng);
    Tensor mem = random_tensor({3, 4}, rng, 0.5);
    Tensor qa_emb = random_tensor({2, 4}, rng, 0.5);
    Tensor qo_emb = random_tensor({2, 4}, rng, 0.5);
    auto f = [&](const Tensor& qh_emb) {
      QuerySet qh{Role::Human, qh_emb, Tensor::zeros({2})};
      QuerySet qa{Role::Action, qa_emb, Tensor::zeros({2})};
      QuerySet qo{Role::Object, qo_emb, Tensor::zeros({2})};
      return sum_all(dec.forward(mem, qh, qa, qo).embeddings * 0.05);
    };
    fold(suite, "interaction_decoder",
         grad_check(f, random_tensor({2, 4}, rng, 0.5)));
  }
  suite.pass = suite.worst_rel_error < suite.tolerance;
  return suite;
}

GradCheckSuiteResult gradcheck_logic(uint64_t seed) {
  GradCheckSuiteResult suite;
  suite.scope = "logic";
  suite.tolerance = 1e-6;
  Rng rng(seed);
  Vocabulary vocab = Vocabulary::synthetic(4, 5);
  RuleSet rules = make_synthetic_rules(vocab, 8, seed + 13);
  LogicConfig cfg;

  const int64_t K = 6;
  auto rnd01 = [&](Shape s) {
    std::vector<double> d(static_cast<size_t>(numel(s)));
    for (auto& v : d) v = rng.uniform(0.1, 0.9);
    return Tensor::from_data(std::move(s), std::move(d), false);
  };
  Tensor actions = rnd01({K, 4});
  Tensor objects = rnd01({K, 5});
  Tensor interactions = rnd01({K, 20});
  std::vector<double> gates(static_cast<size_t>(K * kNumRelations), 0.0);
  for (int64_t k = 0; k < K; ++k) {
    gates[static_cast<size_t>(k * kNumRelations + rng.uniform_int(kNumRelations))] =
        1.0;
  }
  Tensor relations = Tensor::from_data({K, kNumRelations}, gates);

  auto table_with = [&](const Tensor& a, const Tensor& o, const Tensor& i) {
    ScoreTable t;
    t.actions = a;
    t.objects = o;
    t.interactions = i;
    t.relations = relations;
    return t;
  };

  auto f_int = [&](const Tensor& x) {
    return logic_loss(rules, table_with(actions, objects, x), cfg).total;
  };
  fold(suite, "d/ds[h]", grad_check(f_int, interactions, 1e-6));
  auto f_act = [&](const Tensor& x) {
    return logic_loss(rules, table_with(x, objects, interactions), cfg).total;
  };
  fold(suite, "d/ds[v]", grad_check(f_act, actions, 1e-6));
  auto f_obj = [&](const Tensor& x) {
    return logic_loss(rules, table_with(actions, x, interactions), cfg).total;
  };
  fold(suite, "d/ds[o]", grad_check(f_obj, objects, 1e-6));

  // connectives and quantifiers
  auto f_conn = [&](const Tensor& x) {
    Formula a = Formula::pred("a");
    Formula b = Formula::pred("b");
    Formula f = Formula::implies(Formula::land(a, b),
                                 Formula::lor(Formula::lnot(a), b));
    Env env{{"a", chip(x, 0, 0)}, {"b", chip(x, 0, 1)}};
    return mean_all(eval_connective(f, env));
  };
  fold(suite, "connectives", grad_check(f_conn, rnd01({2, 5}), 1e-6));
  auto f_quant = [&](const Tensor& x) {
    return eval_quantifier(QuantifierKind::ForAll, x, {2.0}) +
           eval_quantifier(QuantifierKind::Exists, x, {2.0});
  };
  fold(suite, "quantifiers q=2", grad_check(f_quant, rnd01({7}), 1e-6));

  suite.pass = suite.worst_rel_error < suite.tolerance;
  return suite;
}

ModelGradCheckResult model_param_grad_check(Model& model,
                                            const Tensor& features,
                                            int64_t coords_per_param,
                                            double h) {
  auto scalar_loss = [&]() {
    Predictions p = model.forward(features);
    return sum_all(p.interaction_logits) * 0.01 + sum_all(p.human_boxes) +
           sum_all(p.object_boxes) + sum_all(p.action_logits) * 0.1 +
           sum_all(p.object_logits) * 0.1 + sum_all(p.human_score_logits) * 0.1;
  };

  model.params().zero_grads();
  Tensor loss = scalar_loss();
  double f0 = loss.value();
  backward(loss);

  ModelGradCheckResult result;
  Rng pick(12345);
  for (const auto& [name, t] : model.params().items()) {
    Tensor param = t;
    const auto& grad = param.grad();
    for (int64_t c = 0; c < coords_per_param; ++c) {
      size_t i = static_cast<size_t>(pick.uniform_int(param.size()));
      double saved = param.mutable_data()[i];
      param.mutable_data()[i] = saved + h;
      double fp = scalar_loss().value();
      param.mutable_data()[i] = saved - h;
      double fm = scalar_loss().value();
      param.mutable_data()[i] = saved;

      double fwd = (fp - f0) / h;
      double bwd = (f0 - fm) / h;
      double scale = std::max({1.0, std::fabs(fwd), std::fabs(bwd)});
      if (std::fabs(fwd - bwd) > 1e-2 * scale) {
        ++result.skipped_nonsmooth;
        continue;
      }
      double central = (fp - fm) / (2.0 * h);
      double a = grad[i];
      double rel = std::fabs(a - central) / std::max(1.0, std::fabs(a));
      ++result.checked;
      result.worst_rel_error = std::max(result.worst_rel_error, rel);
    }
  }
  model.params().zero_grads();
  return result;
}

GradCheckSuiteResult gradcheck_full_model(uint64_t seed) {
  GradCheckSuiteResult suite;
  suite.scope = "full-model";
  suite.tolerance = 1e-3;

  ModelConfig cfg;
  cfg.d = 8;
  cfg.n_queries = 4;
  cfg.layers_interaction = 1;
  cfg.layers_decoder = 1;
  cfg.layers_encoder = 1;
  cfg.ffn_dim = 16;
  cfg.pe_dims = 8;
  cfg.num_actions = 3;
  cfg.num_objects = 4;
  cfg.num_interactions = 12;
  Model model(cfg, seed);

  Rng rng(seed + 3);
  Tensor features = random_tensor({4, cfg.feature_width()}, rng, 0.5);
  auto r = model_param_grad_check(model, features, 2, 1e-5);
  std::ostringstream os;
  os << "full model: rel_err=" << r.worst_rel_error << " checked=" << r.checked
     << " skipped=" << r.skipped_nonsmooth;
  suite.lines.push_back(os.str());
  suite.worst_rel_error = r.worst_rel_error;
  suite.checked = r.checked;
  suite.skipped_nonsmooth = r.skipped_nonsmooth;
  suite.pass = suite.worst_rel_error < suite.tolerance;
  return suite;
}

}  // namespace hoir
