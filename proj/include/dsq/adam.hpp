#pragma once

#include <cmath>
#include <map>
#include <string>
#include <vector>

#include "dsq/param_store.hpp"

namespace dsq {

// Bias-corrected Adam. Moments are keyed by parameter name; update order is
// the store's sorted-name order, so steps are deterministic.
template <class Real>
class AdamOptimizer {
 public:
  explicit AdamOptimizer(double lr = 1e-3, double beta1 = 0.9, double beta2 = 0.999, double eps = 1e-8)
      : lr_(lr), beta1_(beta1), beta2_(beta2), eps_(eps) {}

  void step(ParamStore<Real>& params) {
    ++t_;
    const double bc1 = 1.0 - std::pow(beta1_, double(t_));
    const double bc2 = 1.0 - std::pow(beta2_, double(t_));
    for (auto& [name, p] : params) {
      if (!p.requires_grad() || p.grad().size() != p.size())
        throw NumericError("adam: parameter '" + name + "' has no gradient");
      auto& slot = moments_[name];
      if (slot.m.size() != p.size()) {
        slot.m.assign(p.size(), 0.0);
        slot.v.assign(p.size(), 0.0);
      }
      for (std::size_t i = 0; i < p.size(); ++i) {
        const double g = double(p.grad()[i]);
        slot.m[i] = beta1_ * slot.m[i] + (1.0 - beta1_) * g;
        slot.v[i] = beta2_ * slot.v[i] + (1.0 - beta2_) * g * g;
        const double mhat = slot.m[i] / bc1;
        const double vhat = slot.v[i] / bc2;
        p.at(i) = Real(double(p.at(i)) - lr_ * mhat / (std::sqrt(vhat) + eps_));
      }
    }
  }

  long step_index() const { return t_; }
  double learning_rate() const { return lr_; }
  void set_learning_rate(double lr) { lr_ = lr; }

 private:
  struct Moments {
    std::vector<double> m, v;
  };
  double lr_, beta1_, beta2_, eps_;
  long t_ = 0;
  std::map<std::string, Moments> moments_;
};

}  // namespace dsq
