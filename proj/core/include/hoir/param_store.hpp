#pragma once

#include <map>
#include <string>
#include <unordered_set>

#include "hoir/rng.hpp"
#include "hoir/tensor.hpp"

namespace hoir {

// Named bank of trainable leaf tensors. Names are hierarchical
// ("dp.layer0.tri.wq") so parameter groups can be selected by prefix,
// which is how the logic loss is restricted to the interaction decoder.
class ParamStore {
 public:
  // Uniform init in [-scale, scale].
  Tensor create(const std::string& name, Shape shape, Rng& rng, double scale);
  // Xavier-style uniform init for a (fan_in, fan_out) matrix.
  Tensor create_xavier(const std::string& name, Shape shape, Rng& rng);
  Tensor create_zeros(const std::string& name, Shape shape);
  Tensor create_full(const std::string& name, Shape shape, double value);

  bool has(const std::string& name) const { return params_.count(name) > 0; }
  Tensor get(const std::string& name) const;
  // Deterministic iteration order (sorted by name).
  const std::map<std::string, Tensor>& items() const { return params_; }

  std::unordered_set<uint64_t> ids_with_prefix(const std::string& prefix) const;
  std::unordered_set<uint64_t> all_ids() const;

  void zero_grads();
  // Overwrite every parameter's values with zeros (test hook for the
  // residual-identity contracts).
  void set_all_zero();
  void set_zero_with_prefix(const std::string& prefix);

  size_t count() const { return params_.size(); }

 private:
  Tensor insert(const std::string& name, Tensor t);
  std::map<std::string, Tensor> params_;
};

}  // namespace hoir
