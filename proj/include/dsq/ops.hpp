#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <type_traits>
#include <numbers>
#include <utility>
#include <vector>

#include "dsq/tape.hpp"
#include "dsq/tensor.hpp"

// Dense kernels with reverse-mode gradients. Every op computes its value
// eagerly and, when a tape is supplied and any input carries a grad slot,
// records one backward closure. Inner products accumulate in double in both
// float widths.

namespace dsq {

namespace detail {

template <class Real>
bool want_grad(Tape<Real>* tape, std::initializer_list<bool> reqs) {
  if (!tape) return false;
  for (bool r : reqs)
    if (r) return true;
  return false;
}

inline void check_2d(const Shape& s, const char* op) {
  if (s.size() != 2) throw ShapeError(std::string(op) + ": expected 2-D tensor, got " + shape_str(s));
}

}  // namespace detail

// ---------------------------------------------------------------------------
// matmul and friends

template <class Real>
Tensor<Real> matmul(const Tensor<Real>& a, const Tensor<Real>& b, std::type_identity_t<Tape<Real>*> tape) {
  detail::check_2d(a.shape(), "matmul");
  detail::check_2d(b.shape(), "matmul");
  const std::size_t m = a.shape()[0], k = a.shape()[1], n = b.shape()[1];
  if (b.shape()[0] != k)
    throw ShapeError("matmul: inner extents differ, " + a.shape_string() + " x " + b.shape_string());
  Tensor<Real> out(Shape{m, n});
  const Real* av = a.value().data();
  const Real* bv = b.value().data();
  Real* ov = out.value().data();
  for (std::size_t i = 0; i < m; ++i) {
    for (std::size_t j = 0; j < n; ++j) {
      double acc = 0;
      for (std::size_t t = 0; t < k; ++t) acc += double(av[i * k + t]) * double(bv[t * n + j]);
      ov[i * n + j] = Real(acc);
    }
  }
  if (detail::want_grad(tape, {a.requires_grad(), b.requires_grad()})) {
    out.set_requires_grad(true);
    auto ad = a.node(), bd = b.node(), od = out.node();
    tape->record([ad, bd, od, m, k, n] {
      const auto& g = od->grad;
      if (ad->requires_grad) {  // dA = dC * B^T
        for (std::size_t i = 0; i < m; ++i)
          for (std::size_t t = 0; t < k; ++t) {
            double acc = 0;
            for (std::size_t j = 0; j < n; ++j) acc += double(g[i * n + j]) * double(bd->value[t * n + j]);
            ad->grad[i * k + t] += Real(acc);
          }
      }
      if (bd->requires_grad) {  // dB = A^T * dC
        for (std::size_t t = 0; t < k; ++t)
          for (std::size_t j = 0; j < n; ++j) {
            double acc = 0;
            for (std::size_t i = 0; i < m; ++i) acc += double(ad->value[i * k + t]) * double(g[i * n + j]);
            bd->grad[t * n + j] += Real(acc);
          }
      }
    });
  }
  return out;
}

// a[m x k] * b[n x k]^T -> [m x n]; used for attention scores and dot-product
// scoring without materializing transposes.
template <class Real>
Tensor<Real> matmul_nt(const Tensor<Real>& a, const Tensor<Real>& b, std::type_identity_t<Tape<Real>*> tape) {
  detail::check_2d(a.shape(), "matmul_nt");
  detail::check_2d(b.shape(), "matmul_nt");
  const std::size_t m = a.shape()[0], k = a.shape()[1], n = b.shape()[0];
  if (b.shape()[1] != k)
    throw ShapeError("matmul_nt: inner extents differ, " + a.shape_string() + " x " + b.shape_string() + "^T");
  Tensor<Real> out(Shape{m, n});
  for (std::size_t i = 0; i < m; ++i)
    for (std::size_t j = 0; j < n; ++j) {
      double acc = 0;
      for (std::size_t t = 0; t < k; ++t) acc += double(a.value()[i * k + t]) * double(b.value()[j * k + t]);
      out.value()[i * n + j] = Real(acc);
    }
  if (detail::want_grad(tape, {a.requires_grad(), b.requires_grad()})) {
    out.set_requires_grad(true);
    auto ad = a.node(), bd = b.node(), od = out.node();
    tape->record([ad, bd, od, m, k, n] {
      const auto& g = od->grad;
      if (ad->requires_grad) {  // dA = dC * B
        for (std::size_t i = 0; i < m; ++i)
          for (std::size_t t = 0; t < k; ++t) {
            double acc = 0;
            for (std::size_t j = 0; j < n; ++j) acc += double(g[i * n + j]) * double(bd->value[j * k + t]);
            ad->grad[i * k + t] += Real(acc);
          }
      }
      if (bd->requires_grad) {  // dB = dC^T * A
        for (std::size_t j = 0; j < n; ++j)
          for (std::size_t t = 0; t < k; ++t) {
            double acc = 0;
            for (std::size_t i = 0; i < m; ++i) acc += double(g[i * n + j]) * double(ad->value[i * k + t]);
            bd->grad[j * k + t] += Real(acc);
          }
      }
    });
  }
  return out;
}

// ---------------------------------------------------------------------------
// elementwise

template <class Real>
Tensor<Real> add(const Tensor<Real>& a, const Tensor<Real>& b, std::type_identity_t<Tape<Real>*> tape) {
  if (!a.same_shape(b))
    throw ShapeError("add: shape mismatch " + a.shape_string() + " vs " + b.shape_string());
  Tensor<Real> out(a.shape());
  for (std::size_t i = 0; i < a.size(); ++i) out.at(i) = a.at(i) + b.at(i);
  if (detail::want_grad(tape, {a.requires_grad(), b.requires_grad()})) {
    out.set_requires_grad(true);
    auto ad = a.node(), bd = b.node(), od = out.node();
    tape->record([ad, bd, od] {
      if (ad->requires_grad)
        for (std::size_t i = 0; i < od->grad.size(); ++i) ad->grad[i] += od->grad[i];
      if (bd->requires_grad)
        for (std::size_t i = 0; i < od->grad.size(); ++i) bd->grad[i] += od->grad[i];
    });
  }
  return out;
}

template <class Real>
Tensor<Real> sub(const Tensor<Real>& a, const Tensor<Real>& b, std::type_identity_t<Tape<Real>*> tape) {
  if (!a.same_shape(b))
    throw ShapeError("sub: shape mismatch " + a.shape_string() + " vs " + b.shape_string());
  Tensor<Real> out(a.shape());
  for (std::size_t i = 0; i < a.size(); ++i) out.at(i) = a.at(i) - b.at(i);
  if (detail::want_grad(tape, {a.requires_grad(), b.requires_grad()})) {
    out.set_requires_grad(true);
    auto ad = a.node(), bd = b.node(), od = out.node();
    tape->record([ad, bd, od] {
      if (ad->requires_grad)
        for (std::size_t i = 0; i < od->grad.size(); ++i) ad->grad[i] += od->grad[i];
      if (bd->requires_grad)
        for (std::size_t i = 0; i < od->grad.size(); ++i) bd->grad[i] -= od->grad[i];
    });
  }
  return out;
}

template <class Real>
Tensor<Real> mul(const Tensor<Real>& a, const Tensor<Real>& b, std::type_identity_t<Tape<Real>*> tape) {
  if (!a.same_shape(b))
    throw ShapeError("mul: shape mismatch " + a.shape_string() + " vs " + b.shape_string());
  Tensor<Real> out(a.shape());
  for (std::size_t i = 0; i < a.size(); ++i) out.at(i) = a.at(i) * b.at(i);
  if (detail::want_grad(tape, {a.requires_grad(), b.requires_grad()})) {
    out.set_requires_grad(true);
    auto ad = a.node(), bd = b.node(), od = out.node();
    tape->record([ad, bd, od] {
      if (ad->requires_grad)
        for (std::size_t i = 0; i < od->grad.size(); ++i) ad->grad[i] += od->grad[i] * bd->value[i];
      if (bd->requires_grad)
        for (std::size_t i = 0; i < od->grad.size(); ++i) bd->grad[i] += od->grad[i] * ad->value[i];
    });
  }
  return out;
}

template <class Real>
Tensor<Real> scale(const Tensor<Real>& a, Real c, std::type_identity_t<Tape<Real>*> tape) {
  Tensor<Real> out(a.shape());
  for (std::size_t i = 0; i < a.size(); ++i) out.at(i) = a.at(i) * c;
  if (detail::want_grad(tape, {a.requires_grad()})) {
    out.set_requires_grad(true);
    auto ad = a.node(), od = out.node();
    tape->record([ad, od, c] {
      for (std::size_t i = 0; i < od->grad.size(); ++i) ad->grad[i] += od->grad[i] * c;
    });
  }
  return out;
}

// x + c where c is a plain constant buffer (no gradient); entries may be -inf.
template <class Real>
Tensor<Real> add_const(const Tensor<Real>& a, const std::vector<Real>& c, std::type_identity_t<Tape<Real>*> tape) {
  if (a.size() != c.size())
    throw ShapeError("add_const: constant length " + std::to_string(c.size()) + " vs tensor " + a.shape_string());
  Tensor<Real> out(a.shape());
  for (std::size_t i = 0; i < a.size(); ++i) out.at(i) = a.at(i) + c[i];
  if (detail::want_grad(tape, {a.requires_grad()})) {
    out.set_requires_grad(true);
    auto ad = a.node(), od = out.node();
    tape->record([ad, od] {
      for (std::size_t i = 0; i < od->grad.size(); ++i) ad->grad[i] += od->grad[i];
    });
  }
  return out;
}

// x[m x n] + v[n] broadcast over rows.
template <class Real>
Tensor<Real> add_rowvec(const Tensor<Real>& x, const Tensor<Real>& v, std::type_identity_t<Tape<Real>*> tape) {
  detail::check_2d(x.shape(), "add_rowvec");
  if (v.size() != x.shape()[1])
    throw ShapeError("add_rowvec: vector " + v.shape_string() + " vs matrix " + x.shape_string());
  const std::size_t m = x.shape()[0], n = x.shape()[1];
  Tensor<Real> out(x.shape());
  for (std::size_t i = 0; i < m; ++i)
    for (std::size_t j = 0; j < n; ++j) out.at(i, j) = x.at(i, j) + v.at(j);
  if (detail::want_grad(tape, {x.requires_grad(), v.requires_grad()})) {
    out.set_requires_grad(true);
    auto xd = x.node(), vd = v.node(), od = out.node();
    tape->record([xd, vd, od, m, n] {
      if (xd->requires_grad)
        for (std::size_t i = 0; i < m * n; ++i) xd->grad[i] += od->grad[i];
      if (vd->requires_grad)
        for (std::size_t i = 0; i < m; ++i)
          for (std::size_t j = 0; j < n; ++j) vd->grad[j] += od->grad[i * n + j];
    });
  }
  return out;
}

// Affine layer x*W + b as a composite.
template <class Real>
Tensor<Real> affine(const Tensor<Real>& x, const Tensor<Real>& w, const Tensor<Real>& b, std::type_identity_t<Tape<Real>*> tape) {
  return add_rowvec(matmul(x, w, tape), b, tape);
}

// ---------------------------------------------------------------------------
// normalization and activations

// Per-last-axis standardization then affine; eps inside the sqrt.
template <class Real>
Tensor<Real> layer_norm(const Tensor<Real>& x, const Tensor<Real>& gain, const Tensor<Real>& bias, Real eps,
                        std::type_identity_t<Tape<Real>*> tape) {
  const std::size_t d = x.shape().empty() ? 0 : x.shape().back();
  if (d < 2) throw ShapeError("layer_norm: degenerate last axis of extent " + std::to_string(d));
  if (gain.size() != d || bias.size() != d)
    throw ShapeError("layer_norm: gain/bias length must equal last axis " + std::to_string(d));
  const std::size_t rows = x.size() / d;
  Tensor<Real> out(x.shape());
  std::vector<Real> xhat(x.size());
  std::vector<Real> inv_sigma(rows);
  for (std::size_t r = 0; r < rows; ++r) {
    const Real* xv = x.value().data() + r * d;
    double mu = 0;
    for (std::size_t j = 0; j < d; ++j) mu += xv[j];
    mu /= double(d);
    double var = 0;
    for (std::size_t j = 0; j < d; ++j) {
      const double c = double(xv[j]) - mu;
      var += c * c;
    }
    var /= double(d);
    const double is = 1.0 / std::sqrt(var + double(eps));
    inv_sigma[r] = Real(is);
    for (std::size_t j = 0; j < d; ++j) {
      const Real xh = Real((double(xv[j]) - mu) * is);
      xhat[r * d + j] = xh;
      out.value()[r * d + j] = xh * gain.at(j) + bias.at(j);
    }
  }
  if (detail::want_grad(tape, {x.requires_grad(), gain.requires_grad(), bias.requires_grad()})) {
    out.set_requires_grad(true);
    auto xd = x.node(), gd = gain.node(), bd = bias.node(), od = out.node();
    tape->record([xd, gd, bd, od, rows, d, xhat = std::move(xhat), inv_sigma = std::move(inv_sigma)] {
      for (std::size_t r = 0; r < rows; ++r) {
        const Real* gy = od->grad.data() + r * d;
        const Real* xh = xhat.data() + r * d;
        if (bd->requires_grad)
          for (std::size_t j = 0; j < d; ++j) bd->grad[j] += gy[j];
        if (gd->requires_grad)
          for (std::size_t j = 0; j < d; ++j) gd->grad[j] += gy[j] * xh[j];
        if (xd->requires_grad) {
          double mean_dh = 0, mean_dh_xh = 0;
          for (std::size_t j = 0; j < d; ++j) {
            const double dh = double(gy[j]) * double(gd->value[j]);
            mean_dh += dh;
            mean_dh_xh += dh * double(xh[j]);
          }
          mean_dh /= double(d);
          mean_dh_xh /= double(d);
          for (std::size_t j = 0; j < d; ++j) {
            const double dh = double(gy[j]) * double(gd->value[j]);
            xd->grad[r * d + j] += Real(double(inv_sigma[r]) * (dh - mean_dh - double(xh[j]) * mean_dh_xh));
          }
        }
      }
    });
  }
  return out;
}

template <class Real>
Tensor<Real> gelu(const Tensor<Real>& x, std::type_identity_t<Tape<Real>*> tape) {
  Tensor<Real> out(x.shape());
  constexpr double inv_sqrt2 = 0.7071067811865475244;
  for (std::size_t i = 0; i < x.size(); ++i) {
    const double v = double(x.at(i));
    out.at(i) = Real(0.5 * v * (1.0 + std::erf(v * inv_sqrt2)));
  }
  if (detail::want_grad(tape, {x.requires_grad()})) {
    out.set_requires_grad(true);
    auto xd = x.node(), od = out.node();
    tape->record([xd, od] {
      constexpr double inv_sqrt2 = 0.7071067811865475244;
      constexpr double inv_sqrt_2pi = 0.3989422804014326779;
      for (std::size_t i = 0; i < od->grad.size(); ++i) {
        const double v = double(xd->value[i]);
        const double cdf = 0.5 * (1.0 + std::erf(v * inv_sqrt2));
        const double pdf = inv_sqrt_2pi * std::exp(-0.5 * v * v);
        xd->grad[i] += Real(double(od->grad[i]) * (cdf + v * pdf));
      }
    });
  }
  return out;
}

template <class Real>
Tensor<Real> sigmoid(const Tensor<Real>& x, std::type_identity_t<Tape<Real>*> tape) {
  Tensor<Real> out(x.shape());
  for (std::size_t i = 0; i < x.size(); ++i) {
    const double v = double(x.at(i));
    out.at(i) = Real(v >= 0 ? 1.0 / (1.0 + std::exp(-v)) : std::exp(v) / (1.0 + std::exp(v)));
  }
  if (detail::want_grad(tape, {x.requires_grad()})) {
    out.set_requires_grad(true);
    auto xd = x.node(), od = out.node();
    tape->record([xd, od] {
      for (std::size_t i = 0; i < od->grad.size(); ++i) {
        const double y = double(od->value[i]);
        xd->grad[i] += Real(double(od->grad[i]) * y * (1.0 - y));
      }
    });
  }
  return out;
}

namespace detail {

// Shared softmax kernel. Rows whose entries are all -inf either throw
// (allow_empty_rows=false) or emit zeros.
template <class Real>
Tensor<Real> softmax_rows_impl(const Tensor<Real>& x, Tape<Real>* tape, bool allow_empty_rows) {
  check_2d(x.shape(), "softmax_rows");
  const std::size_t m = x.shape()[0], n = x.shape()[1];
  Tensor<Real> out(x.shape());
  constexpr double neg_inf = -std::numeric_limits<double>::infinity();
  for (std::size_t i = 0; i < m; ++i) {
    double mx = neg_inf;
    for (std::size_t j = 0; j < n; ++j) mx = std::max(mx, double(x.at(i, j)));
    if (mx == neg_inf) {
      if (!allow_empty_rows) throw NumericError("softmax_rows: row " + std::to_string(i) + " is entirely masked");
      for (std::size_t j = 0; j < n; ++j) out.at(i, j) = Real(0);
      continue;
    }
    double sum = 0;
    for (std::size_t j = 0; j < n; ++j) {
      const double e = std::exp(double(x.at(i, j)) - mx);
      out.at(i, j) = Real(e);
      sum += e;
    }
    const double inv = 1.0 / sum;
    for (std::size_t j = 0; j < n; ++j) out.at(i, j) = Real(double(out.at(i, j)) * inv);
  }
  if (want_grad(tape, {x.requires_grad()})) {
    out.set_requires_grad(true);
    auto xd = x.node(), od = out.node();
    tape->record([xd, od, m, n] {
      for (std::size_t i = 0; i < m; ++i) {
        double dot = 0;
        for (std::size_t j = 0; j < n; ++j) dot += double(od->grad[i * n + j]) * double(od->value[i * n + j]);
        for (std::size_t j = 0; j < n; ++j) {
          const double y = double(od->value[i * n + j]);
          xd->grad[i * n + j] += Real(y * (double(od->grad[i * n + j]) - dot));
        }
      }
    });
  }
  return out;
}

}  // namespace detail

// Row softmax with max-subtraction; -inf entries (from masks) get weight 0.
// A row of all -inf raises an error.
template <class Real>
Tensor<Real> softmax_rows(const Tensor<Real>& x, std::type_identity_t<Tape<Real>*> tape = nullptr) {
  return detail::softmax_rows_impl(x, tape, false);
}

// Attention variant: rows with no allowed entry produce zeros instead of
// erroring, so fully padded positions stay inert.
template <class Real>
Tensor<Real> attention_softmax_rows(const Tensor<Real>& x, std::type_identity_t<Tape<Real>*> tape) {
  return detail::softmax_rows_impl(x, tape, true);
}

// Normalizes each last-axis slice to unit norm. Slices with norm < 1e-12 pass
// through unchanged; their indices land in *degenerate when supplied.
template <class Real>
Tensor<Real> l2_normalize(const Tensor<Real>& x, Tape<Real>* tape, std::vector<std::size_t>* degenerate = nullptr) {
  const std::size_t d = x.shape().empty() ? 1 : x.shape().back();
  const std::size_t rows = d ? x.size() / d : 0;
  Tensor<Real> out(x.shape());
  std::vector<double> inv_norm(rows, 0.0);
  std::vector<char> skip(rows, 0);
  for (std::size_t r = 0; r < rows; ++r) {
    double sq = 0;
    for (std::size_t j = 0; j < d; ++j) sq += double(x.at(r * d + j)) * double(x.at(r * d + j));
    const double norm = std::sqrt(sq);
    if (norm < 1e-12) {
      skip[r] = 1;
      if (degenerate) degenerate->push_back(r);
      for (std::size_t j = 0; j < d; ++j) out.at(r * d + j) = x.at(r * d + j);
    } else {
      inv_norm[r] = 1.0 / norm;
      for (std::size_t j = 0; j < d; ++j) out.at(r * d + j) = Real(double(x.at(r * d + j)) * inv_norm[r]);
    }
  }
  if (detail::want_grad(tape, {x.requires_grad()})) {
    out.set_requires_grad(true);
    auto xd = x.node(), od = out.node();
    tape->record([xd, od, rows, d, inv_norm = std::move(inv_norm), skip = std::move(skip)] {
      for (std::size_t r = 0; r < rows; ++r) {
        if (skip[r]) {
          for (std::size_t j = 0; j < d; ++j) xd->grad[r * d + j] += od->grad[r * d + j];
          continue;
        }
        double dot = 0;
        for (std::size_t j = 0; j < d; ++j) dot += double(od->grad[r * d + j]) * double(od->value[r * d + j]);
        for (std::size_t j = 0; j < d; ++j)
          xd->grad[r * d + j] +=
              Real((double(od->grad[r * d + j]) - double(od->value[r * d + j]) * dot) * inv_norm[r]);
      }
    });
  }
  return out;
}

// ---------------------------------------------------------------------------
// structural ops

template <class Real>
Tensor<Real> col_slice(const Tensor<Real>& x, std::size_t c0, std::size_t c1, std::type_identity_t<Tape<Real>*> tape) {
  detail::check_2d(x.shape(), "col_slice");
  const std::size_t m = x.shape()[0], n = x.shape()[1];
  if (c1 > n || c0 >= c1) throw ShapeError("col_slice: bad range on " + x.shape_string());
  const std::size_t w = c1 - c0;
  Tensor<Real> out(Shape{m, w});
  for (std::size_t i = 0; i < m; ++i)
    for (std::size_t j = 0; j < w; ++j) out.at(i, j) = x.at(i, c0 + j);
  if (detail::want_grad(tape, {x.requires_grad()})) {
    out.set_requires_grad(true);
    auto xd = x.node(), od = out.node();
    tape->record([xd, od, m, n, w, c0] {
      for (std::size_t i = 0; i < m; ++i)
        for (std::size_t j = 0; j < w; ++j) xd->grad[i * n + c0 + j] += od->grad[i * w + j];
    });
  }
  return out;
}

template <class Real>
Tensor<Real> col_concat(const std::vector<Tensor<Real>>& xs, std::type_identity_t<Tape<Real>*> tape) {
  if (xs.empty()) throw ShapeError("col_concat: empty input list");
  const std::size_t m = xs[0].shape()[0];
  std::size_t n = 0;
  for (const auto& x : xs) {
    detail::check_2d(x.shape(), "col_concat");
    if (x.shape()[0] != m) throw ShapeError("col_concat: row mismatch");
    n += x.shape()[1];
  }
  Tensor<Real> out(Shape{m, n});
  std::size_t off = 0;
  bool any = false;
  for (const auto& x : xs) {
    const std::size_t w = x.shape()[1];
    for (std::size_t i = 0; i < m; ++i)
      for (std::size_t j = 0; j < w; ++j) out.at(i, off + j) = x.at(i, j);
    any = any || x.requires_grad();
    off += w;
  }
  if (tape && any) {
    out.set_requires_grad(true);
    std::vector<std::shared_ptr<TensorData<Real>>> nodes;
    nodes.reserve(xs.size());
    for (const auto& x : xs) nodes.push_back(x.node());
    auto od = out.node();
    tape->record([nodes = std::move(nodes), od, m, n] {
      std::size_t off = 0;
      for (auto& xd : nodes) {
        const std::size_t w = xd->shape[1];
        if (xd->requires_grad)
          for (std::size_t i = 0; i < m; ++i)
            for (std::size_t j = 0; j < w; ++j) xd->grad[i * w + j] += od->grad[i * n + off + j];
        off += w;
      }
    });
  }
  return out;
}

template <class Real>
Tensor<Real> row_concat(const std::vector<Tensor<Real>>& xs, std::type_identity_t<Tape<Real>*> tape) {
  if (xs.empty()) throw ShapeError("row_concat: empty input list");
  const std::size_t n = xs[0].shape().size() == 2 ? xs[0].shape()[1] : xs[0].size();
  std::size_t m = 0;
  for (const auto& x : xs) {
    const std::size_t xc = x.shape().size() == 2 ? x.shape()[1] : x.size();
    if (xc != n) throw ShapeError("row_concat: column mismatch");
    m += x.shape().size() == 2 ? x.shape()[0] : 1;
  }
  Tensor<Real> out(Shape{m, n});
  std::size_t off = 0;
  bool any = false;
  for (const auto& x : xs) {
    for (std::size_t i = 0; i < x.size(); ++i) out.at(off + i) = x.at(i);
    off += x.size();
    any = any || x.requires_grad();
  }
  if (tape && any) {
    out.set_requires_grad(true);
    std::vector<std::shared_ptr<TensorData<Real>>> nodes;
    nodes.reserve(xs.size());
    for (const auto& x : xs) nodes.push_back(x.node());
    auto od = out.node();
    tape->record([nodes = std::move(nodes), od] {
      std::size_t off = 0;
      for (auto& xd : nodes) {
        if (xd->requires_grad)
          for (std::size_t i = 0; i < xd->value.size(); ++i) xd->grad[i] += od->grad[off + i];
        off += xd->value.size();
      }
    });
  }
  return out;
}

// out[i] = x[idx[i]] for row indices; backward scatter-adds.
template <class Real>
Tensor<Real> row_gather(const Tensor<Real>& x, const std::vector<std::size_t>& idx, std::type_identity_t<Tape<Real>*> tape) {
  detail::check_2d(x.shape(), "row_gather");
  const std::size_t n = x.shape()[0], d = x.shape()[1];
  Tensor<Real> out(Shape{idx.size(), d});
  for (std::size_t i = 0; i < idx.size(); ++i) {
    if (idx[i] >= n) throw ShapeError("row_gather: index " + std::to_string(idx[i]) + " out of " + x.shape_string());
    for (std::size_t j = 0; j < d; ++j) out.at(i, j) = x.at(idx[i], j);
  }
  if (detail::want_grad(tape, {x.requires_grad()})) {
    out.set_requires_grad(true);
    auto xd = x.node(), od = out.node();
    tape->record([xd, od, idx, d] {
      for (std::size_t i = 0; i < idx.size(); ++i)
        for (std::size_t j = 0; j < d; ++j) xd->grad[idx[i] * d + j] += od->grad[i * d + j];
    });
  }
  return out;
}

// Zero out rows whose keep flag is false; gradient is blocked there too.
template <class Real>
Tensor<Real> mask_rows(const Tensor<Real>& x, const std::vector<std::uint8_t>& keep, std::type_identity_t<Tape<Real>*> tape) {
  detail::check_2d(x.shape(), "mask_rows");
  const std::size_t m = x.shape()[0], n = x.shape()[1];
  if (keep.size() != m) throw ShapeError("mask_rows: mask length vs " + x.shape_string());
  Tensor<Real> out(x.shape());
  for (std::size_t i = 0; i < m; ++i)
    for (std::size_t j = 0; j < n; ++j) out.at(i, j) = keep[i] ? x.at(i, j) : Real(0);
  if (detail::want_grad(tape, {x.requires_grad()})) {
    out.set_requires_grad(true);
    auto xd = x.node(), od = out.node();
    tape->record([xd, od, keep, m, n] {
      for (std::size_t i = 0; i < m; ++i)
        if (keep[i])
          for (std::size_t j = 0; j < n; ++j) xd->grad[i * n + j] += od->grad[i * n + j];
    });
  }
  return out;
}

// ---------------------------------------------------------------------------
// reductions and losses

template <class Real>
Tensor<Real> sum_all(const Tensor<Real>& x, std::type_identity_t<Tape<Real>*> tape) {
  double acc = 0;
  for (std::size_t i = 0; i < x.size(); ++i) acc += double(x.at(i));
  Tensor<Real> out = Tensor<Real>::scalar(Real(acc));
  if (detail::want_grad(tape, {x.requires_grad()})) {
    out.set_requires_grad(true);
    auto xd = x.node(), od = out.node();
    tape->record([xd, od] {
      for (std::size_t i = 0; i < xd->grad.size(); ++i) xd->grad[i] += od->grad[0];
    });
  }
  return out;
}

template <class Real>
Tensor<Real> mean_all(const Tensor<Real>& x, std::type_identity_t<Tape<Real>*> tape) {
  return scale(sum_all(x, tape), Real(1.0 / double(x.size())), tape);
}

template <class Real>
Tensor<Real> add_scalars(const std::vector<Tensor<Real>>& xs, std::type_identity_t<Tape<Real>*> tape) {
  if (xs.empty()) throw ShapeError("add_scalars: empty input list");
  Tensor<Real> acc = xs[0];
  for (std::size_t i = 1; i < xs.size(); ++i) acc = add(acc, xs[i], tape);
  return acc;
}

// -log( exp(u.p/tau) / (exp(u.p/tau) + sum_j exp(u.n_j/tau)) ).
// Zero negatives gives probability 1 hence loss 0.
template <class Real>
Tensor<Real> softmax_retrieval_loss(const Tensor<Real>& u, const Tensor<Real>& positive,
                                    const Tensor<Real>& negatives, Real tau, std::type_identity_t<Tape<Real>*> tape) {
  if (tau <= Real(0)) throw ConfigError("softmax_retrieval_loss: temperature must be positive");
  const std::size_t d = u.size();
  if (positive.size() != d)
    throw ShapeError("softmax_retrieval_loss: positive " + positive.shape_string() + " vs u " + u.shape_string());
  std::size_t k = 0;
  if (negatives.size() > 0) {
    detail::check_2d(negatives.shape(), "softmax_retrieval_loss");
    if (negatives.shape()[1] != d)
      throw ShapeError("softmax_retrieval_loss: negatives " + negatives.shape_string() + " vs u " + u.shape_string());
    k = negatives.shape()[0];
  }
  const double inv_tau = 1.0 / double(tau);
  std::vector<double> z(k + 1);
  auto dot = [&](const Tensor<Real>& v, std::size_t row) {
    double acc = 0;
    for (std::size_t j = 0; j < d; ++j) acc += double(u.at(j)) * double(v.at(row * d + j));
    return acc;
  };
  z[0] = dot(positive, 0) * inv_tau;
  for (std::size_t i = 0; i < k; ++i) z[i + 1] = dot(negatives, i) * inv_tau;
  const double mx = *std::max_element(z.begin(), z.end());
  double sum = 0;
  for (double v : z) sum += std::exp(v - mx);
  const double lse = mx + std::log(sum);
  Tensor<Real> out = Tensor<Real>::scalar(Real(lse - z[0]));
  if (detail::want_grad(tape, {u.requires_grad(), positive.requires_grad(), negatives.requires_grad()})) {
    out.set_requires_grad(true);
    std::vector<double> soft(k + 1);
    for (std::size_t i = 0; i <= k; ++i) soft[i] = std::exp(z[i] - lse);
    auto ud = u.node(), pd = positive.node(), nd = negatives.node(), od = out.node();
    tape->record([ud, pd, nd, od, d, k, inv_tau, soft = std::move(soft)] {
      const double g = double(od->grad[0]);
      const double dz0 = (soft[0] - 1.0) * g;
      if (ud->requires_grad) {
        for (std::size_t j = 0; j < d; ++j) {
          double acc = dz0 * double(pd->value[j]);
          for (std::size_t i = 0; i < k; ++i) acc += soft[i + 1] * g * double(nd->value[i * d + j]);
          ud->grad[j] += Real(acc * inv_tau);
        }
      }
      if (pd->requires_grad)
        for (std::size_t j = 0; j < d; ++j) pd->grad[j] += Real(dz0 * inv_tau * double(ud->value[j]));
      if (k > 0 && nd->requires_grad)
        for (std::size_t i = 0; i < k; ++i)
          for (std::size_t j = 0; j < d; ++j)
            nd->grad[i * d + j] += Real(soft[i + 1] * g * inv_tau * double(ud->value[j]));
    });
  }
  return out;
}

// Batched retrieval loss over a logits matrix. For each (row, positive column)
// pair the denominator runs over {positive} + neg_cols of that row. Returns the
// SUM over pairs; callers divide by the pair count.
template <class Real>
Tensor<Real> pair_softmax_loss_sum(const Tensor<Real>& logits, const std::vector<std::size_t>& neg_cols,
                                   const std::vector<std::pair<std::size_t, std::size_t>>& pairs,
                                   std::type_identity_t<Tape<Real>*> tape) {
  detail::check_2d(logits.shape(), "pair_softmax_loss_sum");
  const std::size_t n = logits.shape()[1];
  for (auto c : neg_cols)
    if (c >= n) throw ShapeError("pair_softmax_loss_sum: negative column out of range");
  double total = 0;
  for (auto [r, c] : pairs) {
    if (r >= logits.shape()[0] || c >= n) throw ShapeError("pair_softmax_loss_sum: pair index out of range");
    double mx = double(logits.at(r, c));
    for (auto j : neg_cols) mx = std::max(mx, double(logits.at(r, j)));
    double sum = std::exp(double(logits.at(r, c)) - mx);
    for (auto j : neg_cols) sum += std::exp(double(logits.at(r, j)) - mx);
    total += mx + std::log(sum) - double(logits.at(r, c));
  }
  Tensor<Real> out = Tensor<Real>::scalar(Real(total));
  if (detail::want_grad(tape, {logits.requires_grad()})) {
    out.set_requires_grad(true);
    auto ld = logits.node(), od = out.node();
    tape->record([ld, od, neg_cols, pairs, n] {
      const double g = double(od->grad[0]);
      for (auto [r, c] : pairs) {
        double mx = double(ld->value[r * n + c]);
        for (auto j : neg_cols) mx = std::max(mx, double(ld->value[r * n + j]));
        double sum = std::exp(double(ld->value[r * n + c]) - mx);
        for (auto j : neg_cols) sum += std::exp(double(ld->value[r * n + j]) - mx);
        const double inv = 1.0 / sum;
        ld->grad[r * n + c] += Real(g * (std::exp(double(ld->value[r * n + c]) - mx) * inv - 1.0));
        for (auto j : neg_cols) ld->grad[r * n + j] += Real(g * std::exp(double(ld->value[r * n + j]) - mx) * inv);
      }
    });
  }
  return out;
}

// Mean binary cross-entropy on logits; numerically stable softplus form.
template <class Real>
Tensor<Real> bce_with_logits_mean(const Tensor<Real>& logits, const std::vector<double>& labels, std::type_identity_t<Tape<Real>*> tape) {
  if (logits.size() != labels.size())
    throw ShapeError("bce_with_logits_mean: " + std::to_string(labels.size()) + " labels vs " + logits.shape_string());
  if (logits.size() == 0) throw ShapeError("bce_with_logits_mean: empty batch");
  const std::size_t n = logits.size();
  double total = 0;
  for (std::size_t i = 0; i < n; ++i) {
    const double z = double(logits.at(i));
    total += std::max(z, 0.0) - z * labels[i] + std::log1p(std::exp(-std::abs(z)));
  }
  Tensor<Real> out = Tensor<Real>::scalar(Real(total / double(n)));
  if (detail::want_grad(tape, {logits.requires_grad()})) {
    out.set_requires_grad(true);
    auto ld = logits.node(), od = out.node();
    tape->record([ld, od, labels, n] {
      const double g = double(od->grad[0]) / double(n);
      for (std::size_t i = 0; i < n; ++i) {
        const double z = double(ld->value[i]);
        const double s = z >= 0 ? 1.0 / (1.0 + std::exp(-z)) : std::exp(z) / (1.0 + std::exp(z));
        ld->grad[i] += Real(g * (s - labels[i]));
      }
    });
  }
  return out;
}

}  // namespace dsq
