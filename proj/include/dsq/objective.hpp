#pragma once

#include <algorithm>
#include <map>
#include <optional>
#include <set>
#include <string>
#include <unordered_set>
#include <utility>
#include <vector>

#include "dsq/adam.hpp"
#include "dsq/model.hpp"

// Training objectives: the dense all-action loss applied at every causal
// position, plus last-position all-action and next-action baselines, with
// uniform random and in-batch negative sampling.

namespace dsq::objective {

enum class LossKind { dense_all_action, all_action, next_action };

inline const char* to_string(LossKind k) {
  switch (k) {
    case LossKind::dense_all_action: return "dense_all_action";
    case LossKind::all_action: return "all_action";
    case LossKind::next_action: return "next_action";
  }
  return "dense_all_action";
}

inline LossKind loss_kind_from_string(const std::string& s) {
  for (LossKind k : {LossKind::dense_all_action, LossKind::all_action, LossKind::next_action})
    if (s == to_string(k)) return k;
  throw ConfigError("unknown loss kind: " + s);
}

struct ObjectiveConfig {
  int window_days = 28;
  double temperature = 0.1;
  int n_random_negatives = 128;
  bool use_in_batch_negatives = true;
  LossKind loss_kind = LossKind::dense_all_action;
  double click_min_duration = 10.0;
  // training-throughput caps; 0 means unlimited
  int max_in_batch_negatives = 64;   // per-example sample of other examples' targets
  int max_targets_per_position = 4;  // seeded subsample applied by the training loop

  void validate() const {
    if (window_days <= 0) throw ConfigError("window_days must be positive");
    if (temperature <= 0) throw ConfigError("temperature must be positive");
    if (n_random_negatives < 0) throw ConfigError("n_random_negatives must be nonnegative");
    if (max_in_batch_negatives < 0 || max_targets_per_position < 0)
      throw ConfigError("throughput caps must be nonnegative");
  }
};

// Per-position target pin ids; one entry per positive action in the position's
// forward window, duplicates kept so every action contributes.
struct PositionTargets {
  std::vector<std::vector<std::int64_t>> per_position;

  std::size_t pair_count(const std::vector<std::uint8_t>& validity) const {
    std::size_t n = 0;
    for (std::size_t i = 0; i < per_position.size(); ++i)
      if (validity[i]) n += per_position[i].size();
    return n;
  }
};

// Positives with timestamp in (t_i, t_i + window] for every valid position i.
// source_rows maps matrix rows to indices into user.actions.
inline PositionTargets build_position_targets(const synth::UserHistory& user,
                                              const std::vector<std::ptrdiff_t>& source_rows,
                                              const std::vector<std::uint8_t>& validity,
                                              const ObjectiveConfig& cfg) {
  cfg.validate();
  const std::int64_t window = std::int64_t(cfg.window_days) * 86400;
  PositionTargets out;
  out.per_position.resize(source_rows.size());
  for (std::size_t i = 0; i < source_rows.size(); ++i) {
    if (!validity[i]) continue;
    const std::size_t src = std::size_t(source_rows[i]);
    const std::int64_t t_i = user.actions[src].ts;
    for (std::size_t j = src + 1; j < user.actions.size(); ++j) {
      const auto& a = user.actions[j];
      if (a.ts <= t_i) continue;
      if (a.ts > t_i + window) break;
      if (synth::is_positive(a, cfg.click_min_duration)) out.per_position[i].push_back(a.pin_id);
    }
  }
  return out;
}

// Single next positive action after each position, any horizon.
inline PositionTargets build_next_action_targets(const synth::UserHistory& user,
                                                 const std::vector<std::ptrdiff_t>& source_rows,
                                                 const std::vector<std::uint8_t>& validity,
                                                 const ObjectiveConfig& cfg) {
  PositionTargets out;
  out.per_position.resize(source_rows.size());
  for (std::size_t i = 0; i < source_rows.size(); ++i) {
    if (!validity[i]) continue;
    const std::size_t src = std::size_t(source_rows[i]);
    const std::int64_t t_i = user.actions[src].ts;
    for (std::size_t j = src + 1; j < user.actions.size(); ++j) {
      const auto& a = user.actions[j];
      if (a.ts <= t_i) continue;
      if (synth::is_positive(a, cfg.click_min_duration)) {
        out.per_position[i].push_back(a.pin_id);
        break;
      }
    }
  }
  return out;
}

// Keep only the last valid position's targets.
inline PositionTargets restrict_to_last_position(const PositionTargets& targets,
                                                 const std::vector<std::uint8_t>& validity) {
  PositionTargets out;
  out.per_position.assign(targets.per_position.size(), {});
  for (std::size_t i = validity.size(); i-- > 0;) {
    if (validity[i]) {
      out.per_position[i] = targets.per_position[i];
      break;
    }
  }
  return out;
}

// Uniform random negatives excluding the example's own target pins across all
// positions; deterministic under (seed, example_index).
inline std::vector<std::int64_t> sample_random_negatives(const PositionTargets& targets, std::int64_t n_pins,
                                                         const ObjectiveConfig& cfg, std::uint64_t seed,
                                                         std::uint64_t example_index) {
  std::unordered_set<std::int64_t> own;
  for (const auto& t : targets.per_position) own.insert(t.begin(), t.end());
  const std::int64_t available = n_pins - std::int64_t(own.size());
  if (cfg.n_random_negatives >= n_pins || cfg.n_random_negatives > available)
    throw ConfigError("n_random_negatives (" + std::to_string(cfg.n_random_negatives) +
                      ") does not fit the corpus of " + std::to_string(n_pins) + " pins");
  Rng rng(mix_seed(seed, "negatives", example_index));
  std::unordered_set<std::int64_t> chosen;
  std::vector<std::int64_t> out;
  out.reserve(std::size_t(cfg.n_random_negatives));
  while (out.size() < std::size_t(cfg.n_random_negatives)) {
    const std::int64_t pin = rng.uniform_int(0, n_pins - 1);
    if (own.count(pin) || chosen.count(pin)) continue;
    chosen.insert(pin);
    out.push_back(pin);
  }
  return out;
}

// Negative lists for a whole batch: uniform random pins per example plus,
// when enabled, a (capped, seeded) sample of the other examples' target pins;
// an example's own targets never appear in its negatives.
inline std::vector<std::vector<std::int64_t>> sample_negatives(const std::vector<PositionTargets>& batch_targets,
                                                               std::int64_t n_pins, const ObjectiveConfig& cfg,
                                                               std::uint64_t seed) {
  std::vector<std::vector<std::int64_t>> out(batch_targets.size());
  for (std::size_t e = 0; e < batch_targets.size(); ++e) {
    out[e] = sample_random_negatives(batch_targets[e], n_pins, cfg, seed, e);
    if (!cfg.use_in_batch_negatives) continue;
    std::unordered_set<std::int64_t> own;
    for (const auto& t : batch_targets[e].per_position) own.insert(t.begin(), t.end());
    std::unordered_set<std::int64_t> have(out[e].begin(), out[e].end());
    std::vector<std::int64_t> pool;
    for (std::size_t o = 0; o < batch_targets.size(); ++o) {
      if (o == e) continue;
      for (const auto& t : batch_targets[o].per_position)
        for (auto pin : t)
          if (!own.count(pin) && !have.count(pin)) {
            have.insert(pin);
            pool.push_back(pin);
          }
    }
    if (cfg.max_in_batch_negatives > 0 && pool.size() > std::size_t(cfg.max_in_batch_negatives)) {
      Rng rng(mix_seed(seed, "in_batch", e));
      rng.shuffle(pool);
      pool.resize(std::size_t(cfg.max_in_batch_negatives));
    }
    out[e].insert(out[e].end(), pool.begin(), pool.end());
  }
  return out;
}

// One example prepared for the batched loss.
template <class Real>
struct PreparedExample {
  model::UserTowerOutput<Real> tower;
  PositionTargets targets;
  std::vector<std::int64_t> negatives;
};

template <class Real>
struct PinTowerRef {
  const ParamStore<Real>& params;
  const Tensor<Real>& raw_embeddings;  // n_pins x d_pin, row index == pin id
};

// Shared assembly: per-pair softmax losses over {target} + negatives, pooled
// across examples as one mean over contributing (position, action) pairs.
// Empty batches signal skip by returning nullopt.
template <class Real>
std::optional<Tensor<Real>> batch_retrieval_loss(const std::vector<PreparedExample<Real>>& batch,
                                                 const PinTowerRef<Real>& pin_tower, const ObjectiveConfig& cfg,
                                                 std::type_identity_t<Tape<Real>*> tape) {
  cfg.validate();
  // candidate pins used anywhere in the batch
  std::vector<std::int64_t> candidate_ids;
  std::map<std::int64_t, std::size_t> column_of;
  auto intern = [&](std::int64_t pin) {
    auto it = column_of.find(pin);
    if (it != column_of.end()) return it->second;
    const std::size_t col = candidate_ids.size();
    column_of.emplace(pin, col);
    candidate_ids.push_back(pin);
    return col;
  };
  std::size_t total_pairs = 0;
  for (const auto& ex : batch) {
    for (std::size_t i = 0; i < ex.targets.per_position.size(); ++i)
      if (ex.tower.validity[i])
        for (auto pin : ex.targets.per_position[i]) {
          intern(pin);
          ++total_pairs;
        }
    for (auto pin : ex.negatives) intern(pin);
  }
  if (total_pairs == 0) return std::nullopt;

  std::vector<std::size_t> rows(candidate_ids.size());
  for (std::size_t i = 0; i < candidate_ids.size(); ++i) rows[i] = std::size_t(candidate_ids[i]);
  auto candidate_raw = row_gather(pin_tower.raw_embeddings, rows, tape);
  auto candidate_emb = model::pin_tower_forward(pin_tower.params, candidate_raw, tape);

  const Real inv_tau = Real(1.0 / cfg.temperature);
  std::vector<Tensor<Real>> sums;
  sums.reserve(batch.size());
  for (const auto& ex : batch) {
    std::set<std::size_t> neg_cols_set;
    for (auto pin : ex.negatives) neg_cols_set.insert(column_of.at(pin));
    std::vector<std::size_t> neg_cols(neg_cols_set.begin(), neg_cols_set.end());

    std::vector<std::pair<std::size_t, std::size_t>> pairs;
    for (std::size_t i = 0; i < ex.targets.per_position.size(); ++i)
      if (ex.tower.validity[i])
        for (auto pin : ex.targets.per_position[i]) pairs.emplace_back(i, column_of.at(pin));
    if (pairs.empty()) continue;

    auto logits = scale(matmul_nt(ex.tower.embeddings, candidate_emb, tape), inv_tau, tape);
    sums.push_back(pair_softmax_loss_sum(logits, neg_cols, pairs, tape));
  }
  auto total = add_scalars(sums, tape);
  return scale(total, Real(1.0 / double(total_pairs)), tape);
}

// Dense all-action loss for one example: mean over (valid position, target)
// pairs of the retrieval softmax loss.
template <class Real>
std::optional<Tensor<Real>> dense_all_action_loss(const model::UserTowerOutput<Real>& tower,
                                                  const PositionTargets& targets,
                                                  const PinTowerRef<Real>& pin_tower,
                                                  const std::vector<std::int64_t>& negatives,
                                                  const ObjectiveConfig& cfg,
                                                  std::type_identity_t<Tape<Real>*> tape) {
  std::vector<PreparedExample<Real>> batch(1);
  batch[0].tower = tower;
  batch[0].targets = targets;
  batch[0].negatives = negatives;
  return batch_retrieval_loss(batch, pin_tower, cfg, tape);
}

// All-action baseline: the same objective restricted to the final valid position.
template <class Real>
std::optional<Tensor<Real>> all_action_loss(const model::UserTowerOutput<Real>& tower,
                                            const PositionTargets& targets, const PinTowerRef<Real>& pin_tower,
                                            const std::vector<std::int64_t>& negatives, const ObjectiveConfig& cfg,
                                            std::type_identity_t<Tape<Real>*> tape) {
  return dense_all_action_loss(tower, restrict_to_last_position(targets, tower.validity), pin_tower, negatives,
                               cfg, tape);
}

// Next-action baseline: one target per position, the next positive action.
template <class Real>
std::optional<Tensor<Real>> next_action_loss(const model::UserTowerOutput<Real>& tower,
                                             const PositionTargets& next_targets,
                                             const PinTowerRef<Real>& pin_tower,
                                             const std::vector<std::int64_t>& negatives, const ObjectiveConfig& cfg,
                                             std::type_identity_t<Tape<Real>*> tape) {
  return dense_all_action_loss(tower, next_targets, pin_tower, negatives, cfg, tape);
}

}  // namespace dsq::objective
