#pragma once

#include <string>

#include "dsq/param_store.hpp"

// Checkpoint container: magic "DSQ1", a textual header listing
// (name, dtype, shape) per parameter in sorted-name order, then little-endian
// row-major payloads in the same order. Round-trips are bit-exact.

namespace dsq {

void save_checkpoint(const ParamStore<double>& params, const std::string& path);
void save_checkpoint(const ParamStore<float>& params, const std::string& path);

// Peek at the (homogeneous) payload dtype: "f32" or "f64".
std::string checkpoint_dtype(const std::string& path);

template <class Real>
ParamStore<Real> load_checkpoint(const std::string& path);

extern template ParamStore<double> load_checkpoint<double>(const std::string&);
extern template ParamStore<float> load_checkpoint<float>(const std::string&);

}  // namespace dsq
