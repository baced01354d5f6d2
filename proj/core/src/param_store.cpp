#include "hoir/param_store.hpp"

#include <cmath>

namespace hoir {

Tensor ParamStore::insert(const std::string& name, Tensor t) {
  if (params_.count(name)) {
    throw ContractError("ParamStore: duplicate parameter name '" + name + "'");
  }
  params_.emplace(name, t);
  return t;
}

Tensor ParamStore::create(const std::string& name, Shape shape, Rng& rng,
                          double scale) {
  auto n = numel(shape);
  std::vector<double> data(static_cast<size_t>(n));
  for (auto& v : data) v = rng.uniform(-scale, scale);
  return insert(name, Tensor::from_data(std::move(shape), std::move(data), true));
}

Tensor ParamStore::create_xavier(const std::string& name, Shape shape,
                                 Rng& rng) {
  if (shape.size() < 2) {
    throw ContractError("create_xavier: rank >= 2 required for '" + name + "'");
  }
  double fan_in = static_cast<double>(shape[shape.size() - 2]);
  double fan_out = static_cast<double>(shape[shape.size() - 1]);
  double scale = std::sqrt(6.0 / (fan_in + fan_out));
  return create(name, std::move(shape), rng, scale);
}

Tensor ParamStore::create_zeros(const std::string& name, Shape shape) {
  return insert(name, Tensor::zeros(std::move(shape), true));
}

Tensor ParamStore::create_full(const std::string& name, Shape shape,
                               double value) {
  return insert(name, Tensor::full(std::move(shape), value, true));
}

Tensor ParamStore::get(const std::string& name) const {
  auto it = params_.find(name);
  if (it == params_.end()) {
    throw ContractError("ParamStore: unknown parameter '" + name + "'");
  }
  return it->second;
}

std::unordered_set<uint64_t> ParamStore::ids_with_prefix(
    const std::string& prefix) const {
  std::unordered_set<uint64_t> ids;
  for (const auto& [name, t] : params_) {
    if (name.rfind(prefix, 0) == 0) ids.insert(t.id());
  }
  return ids;
}

std::unordered_set<uint64_t> ParamStore::all_ids() const {
  std::unordered_set<uint64_t> ids;
  for (const auto& [name, t] : params_) ids.insert(t.id());
  return ids;
}

void ParamStore::zero_grads() {
  for (auto& [name, t] : params_) t.zero_grad();
}

void ParamStore::set_all_zero() {
  for (auto& [name, t] : params_) {
    auto& d = t.mutable_data();
    std::fill(d.begin(), d.end(), 0.0);
  }
}

void ParamStore::set_zero_with_prefix(const std::string& prefix) {
  for (auto& [name, t] : params_) {
    if (name.rfind(prefix, 0) == 0) {
      auto& d = t.mutable_data();
      std::fill(d.begin(), d.end(), 0.0);
    }
  }
}

}  // namespace hoir
