#pragma once

#include <map>
#include <memory>
#include <string>
#include <vector>

#include "hoir/geometry.hpp"
#include "hoir/tensor.hpp"

namespace hoir {

// ---- vocabulary ----

// Registered predicate symbols: actions (verbs), object classes, spatial
// relations, and the interaction categories formed from every
// (verb, object) pair. Interaction id = verb * num_objects + object.
struct Vocabulary {
  std::vector<std::string> actions;
  std::vector<std::string> objects;

  int64_t num_actions() const { return static_cast<int64_t>(actions.size()); }
  int64_t num_objects() const { return static_cast<int64_t>(objects.size()); }
  int64_t num_interactions() const { return num_actions() * num_objects(); }

  int64_t interaction_id(int64_t action, int64_t object) const;
  std::pair<int64_t, int64_t> interaction_parts(int64_t id) const;
  std::string interaction_name(int64_t id) const;

  // -1 when unknown.
  int64_t find_action(const std::string& name) const;
  int64_t find_object(const std::string& name) const;

  // Generic names v0..v{A-1}, o0..o{B-1}.
  static Vocabulary synthetic(int64_t num_actions, int64_t num_objects);
};

// ---- formulas ----

enum class FormulaKind { Predicate, Not, And, Or, Implies, ForAll, Exists };

// Immutable first-order formula AST. Leaves are named predicates over a
// single pair variable; connectives are grounded with product logic and
// quantifiers with generalized means.
class Formula {
 public:
  static Formula pred(std::string name, std::string var = "x");
  static Formula lnot(Formula f);
  static Formula land(Formula a, Formula b);
  static Formula lor(Formula a, Formula b);
  static Formula implies(Formula a, Formula b);
  static Formula forall(std::string var, Formula body);
  static Formula exists(std::string var, Formula body);

  FormulaKind kind() const;
  const std::string& name() const;      // predicate name or quantifier variable
  const std::string& variable() const;  // predicate's variable
  const Formula& child(size_t i) const;
  size_t child_count() const;
  std::string to_string() const;

  // Checks that every variable is bound by exactly one quantifier and,
  // when a vocabulary is given, that predicate names are registered
  // actions, objects, relations, or interaction names. Throws
  // ContractError / VocabError.
  void validate(const Vocabulary* vocab = nullptr) const;

 private:
  struct NodeImpl;
  std::shared_ptr<const NodeImpl> impl_;
  explicit Formula(std::shared_ptr<const NodeImpl> impl);
};

struct QuantifierConfig {
  double q = 1.0;  // generalized-mean exponent, >= 1
};

struct LogicConfig {
  QuantifierConfig quant;
  // Reproduces the literal published form of the object-rule grounding,
  // which reads the action score where the object score is meant.
  bool object_rules_use_action_score = false;
};

// Truth-degree environment: per-sample values in [0,1], one (K,) tensor
// per predicate name.
using Env = std::map<std::string, Tensor>;

// Product-logic evaluation of a quantifier-free formula. Differentiable
// through tensor leaves; degrees are clamped to [0,1] after every
// connective with a straight-through gradient. DomainError when a leaf
// value is outside [0,1]; ContractError on quantifiers.
Tensor eval_connective(const Formula& f, const Env& env);

enum class QuantifierKind { ForAll, Exists };

// Generalized-mean quantifier over a (K,) vector of truth degrees.
//   exists = ((1/K) sum v^q)^(1/q)
//   forall = 1 - ((1/K) sum (1-v)^q)^(1/q)
Tensor eval_quantifier(QuantifierKind kind, const Tensor& values,
                       const QuantifierConfig& cfg);

// Full evaluation: quantifiers reduce the sample axis of the environment.
Tensor eval_formula(const Formula& f, const Env& env, const LogicConfig& cfg);

// ---- rules ----

enum class TriggerKind { Action, Object };

// One grounded constraint: when the trigger predicate and spatial
// relation hold for a pair, the listed interactions are infeasible.
struct Rule {
  TriggerKind kind = TriggerKind::Action;
  int64_t trigger_id = 0;  // action id or object id
  SpatialRelation relation = SpatialRelation::around;
  std::vector<int64_t> infeasible;  // interaction ids, non-empty

  Formula to_formula(const Vocabulary& vocab) const;
};

struct RuleSet {
  std::vector<Rule> rules;

  int64_t num_action_rules() const;
  int64_t num_object_rules() const;
  bool empty() const { return rules.empty(); }

  // True when the interaction is forbidden for the given pair attributes.
  bool violates(int64_t interaction_id, int64_t action_id, int64_t object_id,
                SpatialRelation rel) const;
};

// One rule per line:
//   action <verb> @ <relation> => forbid (<subj>,<verb'>,<object>) [, ...]
//   object <noun> @ <relation> => forbid (...) [, ...]
// '#' starts a comment. ParseError carries line/column; VocabError for
// unknown names.
RuleSet parse_rules(const std::string& text, const Vocabulary& vocab);
std::string serialize_rules(const RuleSet& rs, const Vocabulary& vocab);

// ---- grounded losses ----

// Per-sample predicate scores for K human-object pair samples.
struct ScoreTable {
  Tensor actions;       // (K, num_actions) in [0,1]
  Tensor objects;       // (K, num_objects) in [0,1]
  Tensor interactions;  // (K, num_interactions) in [0,1]
  Tensor relations;     // (K, kNumRelations), hard 0/1 gates

  int64_t samples() const;
  void validate() const;  // ContractError / DomainError
};

// Satisfaction degree of one rule against the score table:
//   G = 1 - (1/M) sum_m gmean_q(s[trigger] * s[h_m] * gate)
// clamped to [0,1]. VocabError on out-of-range interaction ids.
Tensor ground_rule(const Rule& rule, const ScoreTable& scores,
                   const LogicConfig& cfg);

struct LogicLossResult {
  Tensor l_vp;    // mean over action rules of (1 - G)
  Tensor l_op;    // mean over object rules of (1 - G)
  Tensor total;   // l_vp + l_op
};

// Empty rule families contribute 0.
LogicLossResult logic_loss(const RuleSet& rules, const ScoreTable& scores,
                           const LogicConfig& cfg);

}  // namespace hoir
