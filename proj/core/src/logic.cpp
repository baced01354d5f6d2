#include "hoir/logic.hpp"

#include <algorithm>
#include <set>
#include <sstream>

namespace hoir {

// ---- Vocabulary ----

int64_t Vocabulary::interaction_id(int64_t action, int64_t object) const {
  if (action < 0 || action >= num_actions() || object < 0 ||
      object >= num_objects()) {
    throw VocabError("interaction_id: action " + std::to_string(action) +
                     " / object " + std::to_string(object) +
                     " outside vocabulary");
  }
  return action * num_objects() + object;
}

std::pair<int64_t, int64_t> Vocabulary::interaction_parts(int64_t id) const {
  if (id < 0 || id >= num_interactions()) {
    throw VocabError("interaction_parts: id " + std::to_string(id) +
                     " outside vocabulary");
  }
  return {id / num_objects(), id % num_objects()};
}

std::string Vocabulary::interaction_name(int64_t id) const {
  auto [a, o] = interaction_parts(id);
  return "(human," + actions[static_cast<size_t>(a)] + "," +
         objects[static_cast<size_t>(o)] + ")";
}

int64_t Vocabulary::find_action(const std::string& name) const {
  for (size_t i = 0; i < actions.size(); ++i) {
    if (actions[i] == name) return static_cast<int64_t>(i);
  }
  return -1;
}

int64_t Vocabulary::find_object(const std::string& name) const {
  for (size_t i = 0; i < objects.size(); ++i) {
    if (objects[i] == name) return static_cast<int64_t>(i);
  }
  return -1;
}

Vocabulary Vocabulary::synthetic(int64_t num_actions, int64_t num_objects) {
  Vocabulary v;
  for (int64_t i = 0; i < num_actions; ++i)
    v.actions.push_back("v" + std::to_string(i));
  for (int64_t i = 0; i < num_objects; ++i)
    v.objects.push_back("o" + std::to_string(i));
  return v;
}

// ---- Formula ----

struct Formula::NodeImpl {
  FormulaKind kind;
  std::string name;  // predicate name or quantifier variable
  std::string var;   // predicate's variable (Predicate nodes only)
  std::vector<Formula> children;
};

Formula::Formula(std::shared_ptr<const NodeImpl> impl) : impl_(std::move(impl)) {}

Formula Formula::pred(std::string name, std::string var) {
  return Formula(std::make_shared<NodeImpl>(
      NodeImpl{FormulaKind::Predicate, std::move(name), std::move(var), {}}));
}

FormulaKind Formula::kind() const { return impl_->kind; }

const std::string& Formula::name() const { return impl_->name; }

const Formula& Formula::child(size_t i) const { return impl_->children.at(i); }

size_t Formula::child_count() const { return impl_->children.size(); }

Formula Formula::lnot(Formula f) {
  return Formula(std::make_shared<NodeImpl>(
      NodeImpl{FormulaKind::Not, "", "", {std::move(f)}}));
}

Formula Formula::land(Formula a, Formula b) {
  return Formula(std::make_shared<NodeImpl>(
      NodeImpl{FormulaKind::And, "", "", {std::move(a), std::move(b)}}));
}

Formula Formula::lor(Formula a, Formula b) {
  return Formula(std::make_shared<NodeImpl>(
      NodeImpl{FormulaKind::Or, "", "", {std::move(a), std::move(b)}}));
}

Formula Formula::implies(Formula a, Formula b) {
  return Formula(std::make_shared<NodeImpl>(
      NodeImpl{FormulaKind::Implies, "", "", {std::move(a), std::move(b)}}));
}

Formula Formula::forall(std::string var, Formula body) {
  return Formula(std::make_shared<NodeImpl>(
      NodeImpl{FormulaKind::ForAll, std::move(var), "", {std::move(body)}}));
}

Formula Formula::exists(std::string var, Formula body) {
  return Formula(std::make_shared<NodeImpl>(
      NodeImpl{FormulaKind::Exists, std::move(var), "", {std::move(body)}}));
}

const std::string& Formula::variable() const { return impl_->var; }

std::string Formula::to_string() const {
  switch (kind()) {
    case FormulaKind::Predicate:
      return name() + "(" + variable() + ")";
    case FormulaKind::Not:
      return "!" + child(0).to_string();
    case FormulaKind::And:
      return "(" + child(0).to_string() + " & " + child(1).to_string() + ")";
    case FormulaKind::Or:
      return "(" + child(0).to_string() + " | " + child(1).to_string() + ")";
    case FormulaKind::Implies:
      return "(" + child(0).to_string() + " -> " + child(1).to_string() + ")";
    case FormulaKind::ForAll:
      return "forall " + name() + " " + child(0).to_string();
    case FormulaKind::Exists:
      return "exists " + name() + " " + child(0).to_string();
  }
  return "?";
}

namespace {

void validate_walk(const Formula& f, std::set<std::string>& bound,
                   const Vocabulary* vocab) {
  switch (f.kind()) {
    case FormulaKind::Predicate: {
      const std::string& name = f.name();
      if (!bound.count(f.variable())) {
        throw ContractError("formula: variable '" + f.variable() +
                            "' is not bound by any quantifier");
      }
      if (vocab) {
        bool known = vocab->find_action(name) >= 0 ||
                     vocab->find_object(name) >= 0 ||
                     relation_from_name(name).has_value();
        if (!known) {
          for (int64_t i = 0; !known && i < vocab->num_interactions(); ++i) {
            known = vocab->interaction_name(i) == name;
          }
        }
        if (!known) {
          throw VocabError("formula: unknown predicate '" + name + "'");
        }
      }
      return;
    }
    case FormulaKind::ForAll:
    case FormulaKind::Exists: {
      if (bound.count(f.name())) {
        throw ContractError("formula: variable '" + f.name() +
                            "' bound more than once");
      }
      bound.insert(f.name());
      validate_walk(f.child(0), bound, vocab);
      bound.erase(f.name());
      return;
    }
    default:
      for (size_t i = 0; i < f.child_count(); ++i) {
        validate_walk(f.child(i), bound, vocab);
      }
  }
}

}  // namespace

void Formula::validate(const Vocabulary* vocab) const {
  std::set<std::string> bound;
  validate_walk(*this, bound, vocab);
}

// ---- evaluation ----

namespace {

void check_degrees(const Tensor& t, const char* what) {
  for (double v : t.data()) {
    if (!(v >= 0.0 && v <= 1.0)) {
      throw DomainError(std::string(what) + ": truth degree " +
                        std::to_string(v) + " outside [0,1]");
    }
  }
}

Tensor clamp01(const Tensor& t) { return clamp_st(t, 0.0, 1.0); }

Tensor eval_rec(const Formula& f, const Env& env, const LogicConfig* cfg) {
  switch (f.kind()) {
    case FormulaKind::Predicate: {
      auto it = env.find(f.name());
      if (it == env.end()) {
        throw VocabError("eval: no value for predicate '" + f.name() + "'");
      }
      check_degrees(it->second, "eval");
      return it->second;
    }
    case FormulaKind::Not:
      return clamp01(1.0 - eval_rec(f.child(0), env, cfg));
    case FormulaKind::And:
      return clamp01(eval_rec(f.child(0), env, cfg) *
                     eval_rec(f.child(1), env, cfg));
    case FormulaKind::Or: {
      Tensor a = eval_rec(f.child(0), env, cfg);
      Tensor b = eval_rec(f.child(1), env, cfg);
      return clamp01(a + b - a * b);
    }
    case FormulaKind::Implies: {
      Tensor a = eval_rec(f.child(0), env, cfg);
      Tensor b = eval_rec(f.child(1), env, cfg);
      return clamp01(1.0 - a + a * b);
    }
    case FormulaKind::ForAll:
    case FormulaKind::Exists: {
      if (!cfg) {
        throw ContractError(
            "eval_connective: quantifiers require eval_formula");
      }
      Tensor body = eval_rec(f.child(0), env, cfg);
      Tensor flat = body.rank() == 1 ? body : reshape(body, {body.size()});
      return eval_quantifier(f.kind() == FormulaKind::ForAll
                                 ? QuantifierKind::ForAll
                                 : QuantifierKind::Exists,
                             flat, cfg->quant);
    }
  }
  throw ContractError("eval: unreachable formula kind");
}

}  // namespace

Tensor eval_connective(const Formula& f, const Env& env) {
  return eval_rec(f, env, nullptr);
}

Tensor eval_quantifier(QuantifierKind kind, const Tensor& values,
                       const QuantifierConfig& cfg) {
  if (!values.defined() || values.size() == 0) {
    throw ContractError("eval_quantifier: empty value vector");
  }
  if (cfg.q < 1.0) {
    throw ConfigError("eval_quantifier: exponent q must be >= 1, got " +
                      std::to_string(cfg.q));
  }
  check_degrees(values, "eval_quantifier");
  Tensor flat = values.rank() == 1 ? values : reshape(values, {values.size()});
  if (kind == QuantifierKind::Exists) {
    return pow(mean_all(pow(flat, cfg.q)), 1.0 / cfg.q);
  }
  return 1.0 - pow(mean_all(pow(1.0 - flat, cfg.q)), 1.0 / cfg.q);
}

Tensor eval_formula(const Formula& f, const Env& env, const LogicConfig& cfg) {
  return eval_rec(f, env, &cfg);
}

// ---- rules ----

Formula Rule::to_formula(const Vocabulary& vocab) const {
  const std::string trigger_name =
      kind == TriggerKind::Action
          ? vocab.actions.at(static_cast<size_t>(trigger_id))
          : vocab.objects.at(static_cast<size_t>(trigger_id));
  Formula lhs = Formula::land(Formula::pred(trigger_name),
                              Formula::pred(relation_name(relation)));
  if (infeasible.empty()) {
    throw ContractError("rule: empty infeasible list");
  }
  Formula rhs = Formula::lnot(Formula::pred(vocab.interaction_name(infeasible[0])));
  for (size_t i = 1; i < infeasible.size(); ++i) {
    rhs = Formula::land(std::move(rhs),
                        Formula::lnot(Formula::pred(
                            vocab.interaction_name(infeasible[i]))));
  }
  return Formula::forall("x", Formula::implies(std::move(lhs), std::move(rhs)));
}

int64_t RuleSet::num_action_rules() const {
  return std::count_if(rules.begin(), rules.end(), [](const Rule& r) {
    return r.kind == TriggerKind::Action;
  });
}

int64_t RuleSet::num_object_rules() const {
  return std::count_if(rules.begin(), rules.end(), [](const Rule& r) {
    return r.kind == TriggerKind::Object;
  });
}

bool RuleSet::violates(int64_t interaction_id, int64_t action_id,
                       int64_t object_id, SpatialRelation rel) const {
  for (const auto& r : rules) {
    if (r.relation != rel) continue;
    bool triggered = (r.kind == TriggerKind::Action && r.trigger_id == action_id) ||
                     (r.kind == TriggerKind::Object && r.trigger_id == object_id);
    if (!triggered) continue;
    if (std::find(r.infeasible.begin(), r.infeasible.end(), interaction_id) !=
        r.infeasible.end()) {
      return true;
    }
  }
  return false;
}

// ---- rule-file grammar ----

namespace {

struct LineCursor {
  const std::string& s;
  int line;
  size_t pos = 0;

  int col() const { return static_cast<int>(pos) + 1; }

  void skip_ws() {
    while (pos < s.size() && (s[pos] == ' ' || s[pos] == '\t')) ++pos;
  }

  bool done() {
    skip_ws();
    return pos >= s.size();
  }

  // Identifier: letters, digits, '_' or '-'.
  std::string ident(const char* what) {
    skip_ws();
    size_t start = pos;
    while (pos < s.size() &&
           (std::isalnum(static_cast<unsigned char>(s[pos])) || s[pos] == '_' ||
            s[pos] == '-')) {
      ++pos;
    }
    if (pos == start) {
      throw ParseError(std::string("expected ") + what, line, col());
    }
    return s.substr(start, pos - start);
  }

  void expect(const std::string& tok) {
    skip_ws();
    if (s.compare(pos, tok.size(), tok) != 0) {
      throw ParseError("expected '" + tok + "'", line, col());
    }
    pos += tok.size();
  }

  bool peek(char c) {
    skip_ws();
    return pos < s.size() && s[pos] == c;
  }
};

int64_t parse_triplet(LineCursor& cur, const Vocabulary& vocab) {
  cur.expect("(");
  std::string subj = cur.ident("interaction subject");
  if (subj != "human") {
    throw ParseError("interaction subject must be 'human', got '" + subj + "'",
                     cur.line, cur.col());
  }
  cur.expect(",");
  std::string verb = cur.ident("interaction verb");
  cur.expect(",");
  std::string obj = cur.ident("interaction object");
  cur.expect(")");
  int64_t v = vocab.find_action(verb);
  if (v < 0) throw VocabError("unknown action '" + verb + "'");
  int64_t o = vocab.find_object(obj);
  if (o < 0) throw VocabError("unknown object '" + obj + "'");
  return vocab.interaction_id(v, o);
}

}  // namespace

RuleSet parse_rules(const std::string& text, const Vocabulary& vocab) {
  RuleSet rs;
  std::istringstream in(text);
  std::string raw;
  int line_no = 0;
  while (std::getline(in, raw)) {
    ++line_no;
    auto hash = raw.find('#');
    if (hash != std::string::npos) raw = raw.substr(0, hash);
    LineCursor cur{raw, line_no};
    if (cur.done()) continue;

    Rule rule;
    std::string head = cur.ident("'action' or 'object'");
    if (head == "action") {
      rule.kind = TriggerKind::Action;
      std::string name = cur.ident("action name");
      rule.trigger_id = vocab.find_action(name);
      if (rule.trigger_id < 0) throw VocabError("unknown action '" + name + "'");
    } else if (head == "object") {
      rule.kind = TriggerKind::Object;
      std::string name = cur.ident("object name");
      rule.trigger_id = vocab.find_object(name);
      if (rule.trigger_id < 0) throw VocabError("unknown object '" + name + "'");
    } else {
      throw ParseError("expected 'action' or 'object', got '" + head + "'",
                       line_no, 1);
    }

    cur.expect("@");
    std::string rel = cur.ident("spatial relation");
    auto r = relation_from_name(rel);
    if (!r) {
      throw ParseError("unknown relation '" + rel + "'", line_no, cur.col());
    }
    rule.relation = *r;

    cur.expect("=>");
    cur.expect("forbid");
    rule.infeasible.push_back(parse_triplet(cur, vocab));
    while (cur.peek(',')) {
      cur.expect(",");
      rule.infeasible.push_back(parse_triplet(cur, vocab));
    }
    if (!cur.done()) {
      throw ParseError("trailing input", line_no, cur.col());
    }
    rs.rules.push_back(std::move(rule));
  }
  return rs;
}

std::string serialize_rules(const RuleSet& rs, const Vocabulary& vocab) {
  std::ostringstream out;
  for (const auto& r : rs.rules) {
    if (r.kind == TriggerKind::Action) {
      out << "action " << vocab.actions.at(static_cast<size_t>(r.trigger_id));
    } else {
      out << "object " << vocab.objects.at(static_cast<size_t>(r.trigger_id));
    }
    out << " @ " << relation_name(r.relation) << " => forbid ";
    for (size_t i = 0; i < r.infeasible.size(); ++i) {
      if (i) out << ", ";
      auto [v, o] = vocab.interaction_parts(r.infeasible[i]);
      out << "(human," << vocab.actions.at(static_cast<size_t>(v)) << ","
          << vocab.objects.at(static_cast<size_t>(o)) << ")";
    }
    out << "\n";
  }
  return out.str();
}

// ---- grounded losses ----

int64_t ScoreTable::samples() const {
  return actions.defined() ? actions.shape()[0] : 0;
}

void ScoreTable::validate() const {
  if (!actions.defined() || !objects.defined() || !interactions.defined() ||
      !relations.defined()) {
    throw ContractError("ScoreTable: all four tables must be set");
  }
  int64_t k = actions.shape().at(0);
  if (k < 1) throw ContractError("ScoreTable: needs at least one sample");
  for (const Tensor* t : {&actions, &objects, &interactions, &relations}) {
    if (t->rank() != 2 || t->shape()[0] != k) {
      throw ShapeError("ScoreTable: tables disagree on sample count");
    }
  }
  check_degrees(actions, "ScoreTable.actions");
  check_degrees(objects, "ScoreTable.objects");
  check_degrees(interactions, "ScoreTable.interactions");
  for (double v : relations.data()) {
    if (v != 0.0 && v != 1.0) {
      throw DomainError("ScoreTable.relations: gate must be 0 or 1");
    }
  }
}

Tensor ground_rule(const Rule& rule, const ScoreTable& scores,
                   const LogicConfig& cfg) {
  scores.validate();
  int64_t num_interactions = scores.interactions.shape()[1];
  for (auto id : rule.infeasible) {
    if (id < 0 || id >= num_interactions) {
      throw VocabError("ground_rule: interaction id " + std::to_string(id) +
                       " outside the score table");
    }
  }
  if (rule.infeasible.empty()) {
    throw ContractError("ground_rule: rule has no infeasible interactions");
  }

  Tensor gate = chip(scores.relations, 1, static_cast<int64_t>(rule.relation));

  Tensor violation_sum;
  for (size_t m = 0; m < rule.infeasible.size(); ++m) {
    Tensor trigger;
    if (rule.kind == TriggerKind::Action) {
      trigger = chip(scores.actions, 1, rule.trigger_id);
    } else if (cfg.object_rules_use_action_score) {
      // Literal published grounding: read the action score of the
      // infeasible interaction's own verb instead of the object score.
      int64_t num_objects = scores.objects.shape()[1];
      int64_t verb = rule.infeasible[m] / num_objects;
      trigger = chip(scores.actions, 1, verb);
    } else {
      trigger = chip(scores.objects, 1, rule.trigger_id);
    }
    Tensor h = chip(scores.interactions, 1, rule.infeasible[m]);
    Tensor degree =
        eval_quantifier(QuantifierKind::Exists, trigger * h * gate, cfg.quant);
    violation_sum = violation_sum.defined() ? violation_sum + degree : degree;
  }
  double inv_m = 1.0 / static_cast<double>(rule.infeasible.size());
  return clamp_st(1.0 - violation_sum * inv_m, 0.0, 1.0);
}

LogicLossResult logic_loss(const RuleSet& rules, const ScoreTable& scores,
                           const LogicConfig& cfg) {
  Tensor vp_sum, op_sum;
  int64_t vp_n = 0, op_n = 0;
  for (const auto& r : rules.rules) {
    Tensor l = 1.0 - ground_rule(r, scores, cfg);
    if (r.kind == TriggerKind::Action) {
      vp_sum = vp_sum.defined() ? vp_sum + l : l;
      ++vp_n;
    } else {
      op_sum = op_sum.defined() ? op_sum + l : l;
      ++op_n;
    }
  }
  LogicLossResult out;
  out.l_vp = vp_n > 0 ? vp_sum * (1.0 / static_cast<double>(vp_n))
                      : Tensor::scalar(0.0);
  out.l_op = op_n > 0 ? op_sum * (1.0 / static_cast<double>(op_n))
                      : Tensor::scalar(0.0);
  out.total = out.l_vp + out.l_op;
  return out;
}

}  // namespace hoir
