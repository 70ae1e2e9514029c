#pragma once

#include <algorithm>
#include <cmath>
#include <limits>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "dsq/adam.hpp"
#include "dsq/encoder.hpp"
#include "dsq/model.hpp"

// Short-term intention ranker: the last P real-time actions pass through one
// MHSA block, then join the candidate-pin token and the long-term user
// embedding token inside a full-attention encoder. Time-window masks hide
// actions newer than a cutoff to damp over-responsiveness.

namespace dsq::realtime {

struct RealtimeConfig {
  int max_actions = 32;               // P; 100 at full scale
  double mask_window_seconds = 3600;  // T_mask
  int d_h = 32;
  int n_layers = 1;
  int n_heads = 2;
  int d_ffn = 64;
  int d_e = 16;   // long-term embedding width
  int d_pin = 16;
  double ln_eps = 1e-5;

  void validate() const {
    if (max_actions < 1) throw ConfigError("realtime max_actions must be at least 1");
    if (mask_window_seconds < 0) throw ConfigError("mask_window_seconds must be nonnegative");
    if (d_h % n_heads != 0) throw ConfigError("realtime d_h not divisible by n_heads");
  }

  enc::EncoderConfig action_encoder() const {
    enc::EncoderConfig e;
    e.max_actions = max_actions;
    e.d_pin = d_pin;
    e.d_h = d_h;
    return e;
  }
};

struct RankRequest {
  std::vector<double> long_term;               // d_e, unit norm; required
  std::vector<synth::ActionRecord> actions;    // <= P, time-ascending
  std::int64_t candidate_pin = 0;
  std::int64_t request_time = 0;
};

// Action valid iff timestamp <= request_time - T_mask. An infinite T_mask
// masks everything.
inline std::vector<std::uint8_t> time_window_mask(const std::vector<synth::ActionRecord>& actions,
                                                  std::int64_t request_time, double t_mask_seconds) {
  std::vector<std::uint8_t> valid(actions.size(), 0);
  for (std::size_t i = 0; i < actions.size(); ++i) {
    if (actions[i].ts > request_time)
      throw NumericError("real-time action at " + std::to_string(actions[i].ts) + " is after request time");
    if (std::isinf(t_mask_seconds)) continue;
    if (double(actions[i].ts) <= double(request_time) - t_mask_seconds) valid[i] = 1;
  }
  return valid;
}

template <class Real>
ParamStore<Real> init_ranker_params(const RealtimeConfig& cfg, std::uint64_t seed) {
  cfg.validate();
  Rng rng(mix_seed(seed, "ranker_init"));
  ParamStore<Real> params;
  const int d_feat = cfg.action_encoder().d_feat();
  model::add_affine_params(params, "ranker/rt_proj", d_feat, cfg.d_h, rng, model::InitScale::fan_in);
  model::add_layer_norm_params(params, "ranker/rt_block/ln", cfg.d_h);
  model::add_affine_params(params, "ranker/rt_block/wq", cfg.d_h, cfg.d_h, rng);
  model::add_affine_params(params, "ranker/rt_block/wk", cfg.d_h, cfg.d_h, rng);
  model::add_affine_params(params, "ranker/rt_block/wv", cfg.d_h, cfg.d_h, rng);
  model::add_affine_params(params, "ranker/rt_block/wo", cfg.d_h, cfg.d_h, rng);
  model::add_affine_params(params, "ranker/cand_proj", cfg.d_pin, cfg.d_h, rng, model::InitScale::fan_in);
  model::add_affine_params(params, "ranker/long_proj", cfg.d_e, cfg.d_h, rng, model::InitScale::fan_in);
  Tensor<Real> type_emb(Shape{3, std::size_t(cfg.d_h)});
  rng.fill_normal(type_emb, 0.02);
  params.add("ranker/type_emb", std::move(type_emb));
  model::TransformerConfig enc_cfg;
  enc_cfg.d_h = cfg.d_h;
  enc_cfg.d_ffn = cfg.d_ffn;
  enc_cfg.n_heads = cfg.n_heads;
  enc_cfg.n_layers = cfg.n_layers;
  for (int l = 0; l < cfg.n_layers; ++l)
    model::add_block_params(params, "ranker/enc_layer" + std::to_string(l), enc_cfg, rng);
  model::add_layer_norm_params(params, "ranker/final_ln", cfg.d_h);
  model::add_affine_params(params, "ranker/head", cfg.d_h, 1, rng, model::InitScale::fan_in);
  return params;
}

// One PreNorm MHSA block over the projected real-time tokens, non-causal
// within the window; masked rows come out zero.
template <class Real>
Tensor<Real> realtime_encode(const Tensor<Real>& action_features, const std::vector<std::uint8_t>& valid,
                             const ParamStore<Real>& params, const RealtimeConfig& cfg,
                             std::type_identity_t<Tape<Real>*> tape) {
  auto x = affine(action_features, params.get("ranker/rt_proj/w"), params.get("ranker/rt_proj/b"), tape);
  const auto mask = model::full_mask<Real>(x.shape()[0], valid);
  auto h = model::mhsa_block(x, mask, params, "ranker/rt_block", cfg.n_heads, cfg.ln_eps, tape);
  return mask_rows(h, valid, tape);
}

namespace detail {

template <class Real>
Tensor<Real> type_row(const ParamStore<Real>& params, std::size_t role, std::type_identity_t<Tape<Real>*> tape) {
  return row_gather(params.get("ranker/type_emb"), {role}, tape);
}

}  // namespace detail

// Engagement logit for one request. Token order: candidate, long-term
// embedding, P real-time tokens; full attention over valid tokens; the
// candidate token's final state feeds the linear head.
template <class Real>
Tensor<Real> rank_logit(const RankRequest& req, const std::vector<std::uint8_t>& rt_valid,
                        const synth::World& world, const ParamStore<Real>& params, const RealtimeConfig& cfg,
                        std::type_identity_t<Tape<Real>*> tape) {
  cfg.validate();
  if (req.long_term.size() != std::size_t(cfg.d_e))
    throw ConfigError("rank request is missing the long-term embedding (need width " + std::to_string(cfg.d_e) +
                      ", got " + std::to_string(req.long_term.size()) + ")");
  if (req.actions.size() > std::size_t(cfg.max_actions))
    throw ConfigError("rank request carries more than P real-time actions");

  const auto ecfg = cfg.action_encoder();
  const std::size_t p = std::size_t(cfg.max_actions);

  // right-aligned realtime token features
  Tensor<Real> feats(Shape{p, std::size_t(ecfg.d_feat())});
  std::vector<std::uint8_t> valid(p, 0);
  const std::size_t pad = p - req.actions.size();
  for (std::size_t i = 0; i < req.actions.size(); ++i) {
    const auto row =
        enc::encode_action(req.actions[i], world.pin_by_id(req.actions[i].pin_id), req.request_time);
    for (std::size_t j = 0; j < row.size(); ++j) feats.at(pad + i, j) = Real(row[j]);
    valid[pad + i] = rt_valid[i];
  }

  auto rt = realtime_encode(feats, valid, params, cfg, tape);
  rt = add_rowvec(rt, detail::type_row(params, 2, tape), tape);

  const auto& pin = world.pin_by_id(req.candidate_pin);
  Tensor<Real> cand_in(Shape{1, std::size_t(cfg.d_pin)});
  for (int j = 0; j < cfg.d_pin; ++j) cand_in.at(0, std::size_t(j)) = Real(pin.embedding[std::size_t(j)]);
  auto cand = affine(cand_in, params.get("ranker/cand_proj/w"), params.get("ranker/cand_proj/b"), tape);
  cand = add(cand, detail::type_row(params, 0, tape), tape);

  Tensor<Real> long_in(Shape{1, std::size_t(cfg.d_e)});
  for (int j = 0; j < cfg.d_e; ++j) long_in.at(0, std::size_t(j)) = Real(req.long_term[std::size_t(j)]);
  auto long_tok = affine(long_in, params.get("ranker/long_proj/w"), params.get("ranker/long_proj/b"), tape);
  long_tok = add(long_tok, detail::type_row(params, 1, tape), tape);

  auto tokens = row_concat<Real>({cand, long_tok, rt}, tape);
  std::vector<std::uint8_t> token_valid(p + 2, 0);
  token_valid[0] = token_valid[1] = 1;
  for (std::size_t i = 0; i < p; ++i) token_valid[2 + i] = valid[i];

  const auto mask = model::full_mask<Real>(p + 2, token_valid);
  auto h = tokens;
  for (int l = 0; l < cfg.n_layers; ++l) {
    const std::string layer = "ranker/enc_layer" + std::to_string(l);
    h = model::mhsa_block(h, mask, params, layer + "/mhsa", cfg.n_heads, cfg.ln_eps, tape);
    h = model::ffn_block(h, params, layer + "/ffn", cfg.ln_eps, tape);
  }
  h = layer_norm(h, params.get("ranker/final_ln/gain"), params.get("ranker/final_ln/bias"), Real(cfg.ln_eps),
                 tape);
  auto cand_state = row_gather(h, {0}, tape);
  return affine(cand_state, params.get("ranker/head/w"), params.get("ranker/head/b"), tape);
}

// Engagement probability in (0,1); inference-time mask applied when
// t_mask_inference > 0 (or infinite).
template <class Real>
double rank_score(const RankRequest& req, const synth::World& world, const ParamStore<Real>& params,
                  const RealtimeConfig& cfg, double t_mask_inference = 0.0) {
  const auto rt_valid = time_window_mask(req.actions, req.request_time, t_mask_inference);
  auto logit = rank_logit<Real>(req, rt_valid, world, params, cfg, nullptr);
  const double z = double(logit.at(0));
  return z >= 0 ? 1.0 / (1.0 + std::exp(-z)) : std::exp(z) / (1.0 + std::exp(z));
}

// --- impression replay training ---------------------------------------------

struct Impression {
  std::size_t user_index = 0;
  std::size_t action_index = 0;  // the replayed event
};

struct RankerTrainConfig {
  RealtimeConfig ranker;
  int steps = 1200;
  int batch_size = 8;
  double learning_rate = 1e-3;
  std::uint64_t seed = 1;
  // sampled per example during training: uniform over {0, 1h, 24h};
  // false pins the mask at zero (the over-responsive baseline)
  bool sample_mask_training = true;
  double click_min_duration = 10.0;
  int min_history = 8;  // events before this index are never replayed
};

template <class Real>
struct TrainedRanker {
  ParamStore<Real> params;
  std::vector<std::pair<int, double>> loss_log;
};

// Impressions for users inside the replay window: every logged event after
// min_history whose timestamp is past the embedding cut.
inline std::vector<Impression> build_impressions(const synth::World& world,
                                                 const std::vector<std::size_t>& users, std::int64_t replay_start,
                                                 int min_history) {
  std::vector<Impression> out;
  for (auto ui : users) {
    const auto& u = world.users[ui];
    for (std::size_t k = std::size_t(min_history); k < u.actions.size(); ++k)
      if (u.actions[k].ts > replay_start) out.push_back({ui, k});
  }
  return out;
}

template <class Real>
RankRequest impression_request(const synth::World& world, const Impression& imp,
                               const std::vector<std::vector<Real>>& long_term_by_user,
                               const RealtimeConfig& cfg) {
  const auto& u = world.users[imp.user_index];
  const auto& event = u.actions[imp.action_index];
  RankRequest req;
  req.candidate_pin = event.pin_id;
  req.request_time = event.ts;
  const std::size_t first = imp.action_index > std::size_t(cfg.max_actions)
                                ? imp.action_index - std::size_t(cfg.max_actions)
                                : 0;
  for (std::size_t i = first; i < imp.action_index; ++i) req.actions.push_back(u.actions[i]);
  req.long_term.assign(long_term_by_user[imp.user_index].begin(), long_term_by_user[imp.user_index].end());
  return req;
}

// Binary cross-entropy over replayed impressions; label = is_positive(event).
template <class Real>
TrainedRanker<Real> train_ranker(const synth::World& world, const std::vector<Impression>& impressions,
                                 const std::vector<std::vector<Real>>& long_term_by_user,
                                 const RankerTrainConfig& cfg) {
  if (impressions.empty()) throw ConfigError("train_ranker: empty impression set");
  TrainedRanker<Real> result;
  result.params = init_ranker_params<Real>(cfg.ranker, cfg.seed);
  AdamOptimizer<Real> opt(cfg.learning_rate);
  const double mask_choices[3] = {0.0, 3600.0, 86400.0};

  for (int step = 0; step < cfg.steps; ++step) {
    Rng rng(mix_seed(cfg.seed, "ranker_step", std::uint64_t(step)));
    Tape<Real> tape;
    std::vector<Tensor<Real>> logits;
    std::vector<double> labels;
    for (int b = 0; b < cfg.batch_size; ++b) {
      const auto& imp = impressions[rng.index(impressions.size())];
      auto req = impression_request(world, imp, long_term_by_user, cfg.ranker);
      const double t_mask = cfg.sample_mask_training ? mask_choices[rng.index(3)] : 0.0;
      const auto rt_valid = time_window_mask(req.actions, req.request_time, t_mask);
      logits.push_back(rank_logit<Real>(req, rt_valid, world, result.params, cfg.ranker, &tape));
      const auto& event = world.users[imp.user_index].actions[imp.action_index];
      labels.push_back(synth::is_positive(event, cfg.click_min_duration) ? 1.0 : 0.0);
    }
    auto stacked = row_concat(logits, &tape);
    auto loss = bce_with_logits_mean(stacked, labels, &tape);
    result.params.zero_grads();
    tape.backward(loss);
    opt.step(result.params);
    result.loss_log.emplace_back(step, double(loss.at(0)));
  }
  return result;
}

// --- responsiveness ----------------------------------------------------------

// Mean rank improvement of category-c probe pins after appending one fresh
// category-c engagement at request_time - 1s. Ranks are 0-based, dense, ties
// broken by pin id; positive values mean the fresh action pushed its category
// up the ranking.
template <class Real>
double responsiveness(const synth::World& world, const ParamStore<Real>& params, const RealtimeConfig& cfg,
                      const synth::UserHistory& probe_user, const std::vector<Real>& long_term, int category,
                      const std::vector<std::int64_t>& probe_pins, std::int64_t fresh_pin,
                      double t_mask_inference = 0.0) {
  {
    std::vector<int> cats;
    for (auto pid : probe_pins) cats.push_back(world.pin_by_id(pid).topic_id);
    std::sort(cats.begin(), cats.end());
    cats.erase(std::unique(cats.begin(), cats.end()), cats.end());
    if (cats.size() < 2) throw ConfigError("responsiveness probe set must span at least 2 categories");
  }
  const std::int64_t request_time = probe_user.actions.empty() ? world.cfg.horizon_end()
                                                               : probe_user.actions.back().ts + 60;
  auto base_request = [&](const std::vector<synth::ActionRecord>& actions) {
    RankRequest req;
    req.long_term.assign(long_term.begin(), long_term.end());
    req.request_time = request_time;
    const std::size_t first =
        actions.size() > std::size_t(cfg.max_actions) ? actions.size() - std::size_t(cfg.max_actions) : 0;
    req.actions.assign(actions.begin() + std::ptrdiff_t(first), actions.end());
    return req;
  };
  auto ranks_of = [&](const std::vector<synth::ActionRecord>& actions) {
    auto req = base_request(actions);
    std::vector<std::pair<double, std::int64_t>> scored;
    for (auto pid : probe_pins) {
      req.candidate_pin = pid;
      scored.emplace_back(-rank_score(req, world, params, cfg, t_mask_inference), pid);
    }
    std::sort(scored.begin(), scored.end());
    std::vector<std::pair<std::int64_t, std::size_t>> ranks;
    for (std::size_t r = 0; r < scored.size(); ++r) ranks.emplace_back(scored[r].second, r);
    std::sort(ranks.begin(), ranks.end());
    return ranks;
  };

  auto before = ranks_of(probe_user.actions);
  auto appended = probe_user.actions;
  synth::ActionRecord fresh;
  fresh.pin_id = fresh_pin;
  fresh.ts = request_time - 1;
  fresh.type = synth::ActionType::repin;
  fresh.duration = 30.0;
  fresh.surface = synth::Surface::homefeed;
  appended.push_back(fresh);
  auto after = ranks_of(appended);

  double sum = 0;
  int count = 0;
  for (std::size_t i = 0; i < probe_pins.size(); ++i) {
    if (world.pin_by_id(probe_pins[i]).topic_id != category) continue;
    sum += double(before[i].second) - double(after[i].second);
    ++count;
  }
  if (count == 0) throw ConfigError("responsiveness: no probe pins in category " + std::to_string(category));
  return sum / double(count);
}

}  // namespace dsq::realtime
