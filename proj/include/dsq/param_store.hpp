#pragma once

#include <map>
#include <string>

#include "dsq/tensor.hpp"

namespace dsq {

// Named learnable tensors. Names encode module/layer/slot
// ("user_tower/layer0/mhsa/wq") and are unique; iteration is sorted by name,
// which fixes checkpoint and update order.
template <class Real>
class ParamStore {
 public:
  Tensor<Real>& add(const std::string& name, Tensor<Real> t) {
    if (params_.count(name)) throw ConfigError("duplicate parameter name: " + name);
    t.set_requires_grad(true);
    auto [it, ok] = params_.emplace(name, std::move(t));
    (void)ok;
    return it->second;
  }

  Tensor<Real>& get(const std::string& name) {
    auto it = params_.find(name);
    if (it == params_.end()) throw ConfigError("unknown parameter: " + name);
    return it->second;
  }
  const Tensor<Real>& get(const std::string& name) const {
    auto it = params_.find(name);
    if (it == params_.end()) throw ConfigError("unknown parameter: " + name);
    return it->second;
  }

  bool contains(const std::string& name) const { return params_.count(name) != 0; }
  std::size_t size() const { return params_.size(); }

  void zero_grads() {
    for (auto& [name, t] : params_) t.zero_grad();
  }

  std::size_t coord_count() const {
    std::size_t n = 0;
    for (const auto& [name, t] : params_) n += t.size();
    return n;
  }

  auto begin() { return params_.begin(); }
  auto end() { return params_.end(); }
  auto begin() const { return params_.begin(); }
  auto end() const { return params_.end(); }

  // Deep copy (fresh storage, fresh grad slots).
  ParamStore clone() const {
    ParamStore out;
    for (const auto& [name, t] : params_) out.add(name, t.clone());
    return out;
  }

  // Merge another store under this one; duplicate names reject.
  void absorb(const ParamStore& other) {
    for (const auto& [name, t] : other.params_) add(name, t.clone());
  }

 private:
  std::map<std::string, Tensor<Real>> params_;
};

}  // namespace dsq
