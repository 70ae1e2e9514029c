#pragma once

#include <cstdint>
#include <limits>
#include <string>
#include <vector>

#include "dsq/encoder.hpp"
#include "dsq/ops.hpp"
#include "dsq/param_store.hpp"
#include "dsq/rng.hpp"

// The two towers: a causal PreNorm transformer producing one L2-normalized
// embedding per position, and an MLP pin tower mapping raw pin embeddings
// into the same space.

namespace dsq::model {

struct TransformerConfig {
  int n_layers = 2;
  int n_heads = 2;
  int d_h = 32;
  int d_ffn = 64;
  int d_e = 16;
  double ln_eps = 1e-5;

  void validate() const {
    if (n_layers < 1 || n_heads < 1) throw ConfigError("transformer needs at least one layer and head");
    if (d_h % n_heads != 0)
      throw ConfigError("d_h (" + std::to_string(d_h) + ") not divisible by n_heads (" + std::to_string(n_heads) + ")");
    if (d_e < 2) throw ConfigError("d_e must be at least 2");
  }
};

template <class Real>
struct UserTowerOutput {
  Tensor<Real> embeddings;  // M x d_e, valid rows unit norm, invalid rows zero
  std::vector<std::uint8_t> validity;
};

// Additive attention mask: entry (i,j) is 0 when j <= i and validity[j],
// else -inf. Rows with no allowed entry (padding) yield zero attention output.
template <class Real>
std::vector<Real> causal_mask(std::size_t m, const std::vector<std::uint8_t>& validity) {
  const Real neg_inf = -std::numeric_limits<Real>::infinity();
  std::vector<Real> mask(m * m, neg_inf);
  for (std::size_t i = 0; i < m; ++i)
    for (std::size_t j = 0; j <= i; ++j)
      if (validity[j]) mask[i * m + j] = Real(0);
  return mask;
}

// Full (non-causal) mask over valid tokens; used by the realtime ranker.
template <class Real>
std::vector<Real> full_mask(std::size_t m, const std::vector<std::uint8_t>& validity) {
  const Real neg_inf = -std::numeric_limits<Real>::infinity();
  std::vector<Real> mask(m * m, neg_inf);
  for (std::size_t i = 0; i < m; ++i)
    for (std::size_t j = 0; j < m; ++j)
      if (validity[j]) mask[i * m + j] = Real(0);
  return mask;
}

// Residual-path projections keep the small GPT-style scale; layers without a
// residual around them (tower MLPs, input projections) need fan-in scaling or
// their outputs collapse below the l2_normalize floor and training stalls.
enum class InitScale { residual, fan_in };

template <class Real>
void add_affine_params(ParamStore<Real>& params, const std::string& prefix, int in, int out, Rng& rng,
                       InitScale scale = InitScale::residual) {
  Tensor<Real> w(Shape{std::size_t(in), std::size_t(out)});
  rng.fill_normal(w, scale == InitScale::residual ? 0.02 : 1.0 / std::sqrt(double(in)));
  params.add(prefix + "/w", std::move(w));
  params.add(prefix + "/b", Tensor<Real>(Shape{std::size_t(out)}));
}

template <class Real>
void add_layer_norm_params(ParamStore<Real>& params, const std::string& prefix, int d) {
  params.add(prefix + "/gain", Tensor<Real>(Shape{std::size_t(d)}, Real(1)));
  params.add(prefix + "/bias", Tensor<Real>(Shape{std::size_t(d)}));
}

template <class Real>
void add_block_params(ParamStore<Real>& params, const std::string& layer, const TransformerConfig& cfg, Rng& rng) {
  add_layer_norm_params(params, layer + "/mhsa/ln", cfg.d_h);
  add_affine_params(params, layer + "/mhsa/wq", cfg.d_h, cfg.d_h, rng);
  add_affine_params(params, layer + "/mhsa/wk", cfg.d_h, cfg.d_h, rng);
  add_affine_params(params, layer + "/mhsa/wv", cfg.d_h, cfg.d_h, rng);
  add_affine_params(params, layer + "/mhsa/wo", cfg.d_h, cfg.d_h, rng);
  add_layer_norm_params(params, layer + "/ffn/ln", cfg.d_h);
  add_affine_params(params, layer + "/ffn/w1", cfg.d_h, cfg.d_ffn, rng);
  add_affine_params(params, layer + "/ffn/w2", cfg.d_ffn, cfg.d_h, rng);
}

// Parameters for both towers under "user_tower/..." and "pin_tower/...".
template <class Real>
ParamStore<Real> init_tower_params(const TransformerConfig& cfg, const enc::EncoderConfig& enc_cfg,
                                   std::uint64_t seed) {
  cfg.validate();
  enc_cfg.validate();
  Rng rng(mix_seed(seed, "tower_init"));
  ParamStore<Real> params;
  add_affine_params(params, "user_tower/input_proj", enc_cfg.d_feat(), cfg.d_h, rng, InitScale::fan_in);
  Tensor<Real> pos(Shape{std::size_t(enc_cfg.max_actions), std::size_t(cfg.d_h)});
  rng.fill_normal(pos, 0.02);
  params.add("user_tower/pos_table", std::move(pos));
  for (int l = 0; l < cfg.n_layers; ++l)
    add_block_params(params, "user_tower/layer" + std::to_string(l), cfg, rng);
  add_layer_norm_params(params, "user_tower/final_ln", cfg.d_h);
  add_affine_params(params, "user_tower/head/fc1", cfg.d_h, cfg.d_h, rng, InitScale::fan_in);
  add_affine_params(params, "user_tower/head/fc2", cfg.d_h, cfg.d_e, rng, InitScale::fan_in);

  add_affine_params(params, "pin_tower/fc1", enc_cfg.d_pin, cfg.d_h, rng, InitScale::fan_in);
  add_affine_params(params, "pin_tower/fc2", cfg.d_h, cfg.d_e, rng, InitScale::fan_in);
  return params;
}

// PreNorm MHSA block: y = x + Wo(attention(LN(x))). The additive mask carries
// -inf at disallowed (i,j); fully masked rows produce zero attention output.
template <class Real>
Tensor<Real> mhsa_block(const Tensor<Real>& x, const std::vector<Real>& add_mask, const ParamStore<Real>& params,
                        const std::string& prefix, int n_heads, double ln_eps,
                        std::type_identity_t<Tape<Real>*> tape) {
  const std::size_t m = x.shape()[0];
  const std::size_t d_h = x.shape()[1];
  if (add_mask.size() != m * m) throw ShapeError("mhsa_block: mask size does not match " + x.shape_string());
  if (d_h % std::size_t(n_heads) != 0) throw ShapeError("mhsa_block: d_h not divisible by heads");
  const std::size_t d_k = d_h / std::size_t(n_heads);

  auto ln = layer_norm(x, params.get(prefix + "/ln/gain"), params.get(prefix + "/ln/bias"), Real(ln_eps), tape);
  auto q = affine(ln, params.get(prefix + "/wq/w"), params.get(prefix + "/wq/b"), tape);
  auto k = affine(ln, params.get(prefix + "/wk/w"), params.get(prefix + "/wk/b"), tape);
  auto v = affine(ln, params.get(prefix + "/wv/w"), params.get(prefix + "/wv/b"), tape);

  std::vector<Tensor<Real>> heads;
  heads.reserve(std::size_t(n_heads));
  const Real inv_sqrt_dk = Real(1.0 / std::sqrt(double(d_k)));
  for (int h = 0; h < n_heads; ++h) {
    const std::size_t c0 = std::size_t(h) * d_k, c1 = c0 + d_k;
    auto qh = col_slice(q, c0, c1, tape);
    auto kh = col_slice(k, c0, c1, tape);
    auto vh = col_slice(v, c0, c1, tape);
    auto scores = scale(matmul_nt(qh, kh, tape), inv_sqrt_dk, tape);
    auto weights = attention_softmax_rows(add_const(scores, add_mask, tape), tape);
    heads.push_back(matmul(weights, vh, tape));
  }
  auto merged = col_concat(heads, tape);
  auto projected = affine(merged, params.get(prefix + "/wo/w"), params.get(prefix + "/wo/b"), tape);
  return add(x, projected, tape);
}

// PreNorm FFN block: y = x + W2 gelu(W1 LN(x) + b1) + b2.
template <class Real>
Tensor<Real> ffn_block(const Tensor<Real>& x, const ParamStore<Real>& params, const std::string& prefix,
                       double ln_eps, std::type_identity_t<Tape<Real>*> tape) {
  auto ln = layer_norm(x, params.get(prefix + "/ln/gain"), params.get(prefix + "/ln/bias"), Real(ln_eps), tape);
  auto h = gelu(affine(ln, params.get(prefix + "/w1/w"), params.get(prefix + "/w1/b"), tape), tape);
  auto out = affine(h, params.get(prefix + "/w2/w"), params.get(prefix + "/w2/b"), tape);
  return add(x, out, tape);
}

template <class Real>
UserTowerOutput<Real> user_tower_forward(const ParamStore<Real>& params, const Tensor<Real>& features,
                                         const std::vector<std::uint8_t>& validity, const TransformerConfig& cfg,
                                         std::type_identity_t<Tape<Real>*> tape) {
  cfg.validate();
  const std::size_t m = features.shape()[0];
  if (validity.size() != m) throw ShapeError("user_tower_forward: validity length does not match input rows");

  auto h = affine(features, params.get("user_tower/input_proj/w"), params.get("user_tower/input_proj/b"), tape);
  h = enc::apply_positional_encoding(h, params.get("user_tower/pos_table"), tape);
  const auto mask = causal_mask<Real>(m, validity);
  for (int l = 0; l < cfg.n_layers; ++l) {
    const std::string layer = "user_tower/layer" + std::to_string(l);
    h = mhsa_block(h, mask, params, layer + "/mhsa", cfg.n_heads, cfg.ln_eps, tape);
    h = ffn_block(h, params, layer + "/ffn", cfg.ln_eps, tape);
  }
  h = layer_norm(h, params.get("user_tower/final_ln/gain"), params.get("user_tower/final_ln/bias"),
                 Real(cfg.ln_eps), tape);
  auto e = affine(h, params.get("user_tower/head/fc1/w"), params.get("user_tower/head/fc1/b"), tape);
  e = gelu(e, tape);
  e = affine(e, params.get("user_tower/head/fc2/w"), params.get("user_tower/head/fc2/b"), tape);
  e = l2_normalize(e, tape);
  e = mask_rows(e, validity, tape);

  UserTowerOutput<Real> out;
  out.embeddings = std::move(e);
  out.validity = validity;
  return out;
}

// 2-layer MLP pin tower with unit-norm outputs.
template <class Real>
Tensor<Real> pin_tower_forward(const ParamStore<Real>& params, const Tensor<Real>& pin_embeddings,
                               std::type_identity_t<Tape<Real>*> tape) {
  auto h = affine(pin_embeddings, params.get("pin_tower/fc1/w"), params.get("pin_tower/fc1/b"), tape);
  h = gelu(h, tape);
  h = affine(h, params.get("pin_tower/fc2/w"), params.get("pin_tower/fc2/b"), tape);
  return l2_normalize(h, tape);
}

}  // namespace dsq::model
