#pragma once

#include <functional>
#include <utility>
#include <vector>

#include "dsq/tensor.hpp"

namespace dsq {

// Records primitive operations in execution order. backward() replays them in
// reverse, accumulating into each tensor's grad slot; a tensor used by several
// ops receives one contribution per use. One training step owns one tape.
template <class Real>
class Tape {
 public:
  void record(std::function<void()> backward_fn) { ops_.push_back(std::move(backward_fn)); }

  std::size_t size() const { return ops_.size(); }

  void backward(Tensor<Real>& loss) {
    if (loss.size() != 1) throw ShapeError("backward expects a scalar loss, got " + loss.shape_string());
    if (!loss.requires_grad()) throw NumericError("loss does not require grad; nothing to backpropagate");
    loss.grad()[0] = Real(1);
    for (auto it = ops_.rbegin(); it != ops_.rend(); ++it) (*it)();
  }

  void clear() { ops_.clear(); }

 private:
  std::vector<std::function<void()>> ops_;
};

}  // namespace dsq
