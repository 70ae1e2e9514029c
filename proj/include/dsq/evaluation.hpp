#pragma once

#include <set>
#include <string>
#include <vector>

#include "dsq/realtime.hpp"
#include "dsq/train.hpp"

// Offline evaluation: exhaustive-scan retrieval recall, exact AUC, and the
// comparative harnesses (loss kinds; mask vs no-mask ranker training).

namespace dsq::eval {

// |top-k by dot product ∩ positives| / min(k, |positives|); ties in score
// break by ascending pin id. Throws on an empty index.
double recall_at_k(const std::vector<double>& user_embedding, const std::set<std::int64_t>& positives,
                   const Tensor<double>& pin_index, std::size_t k);

// Probability a random positive outscores a random negative, ties at 0.5;
// exact via midranks. Throws when one class is missing.
double auc(const std::vector<double>& scores, const std::vector<int>& labels);

// --- retrieval evaluation ----------------------------------------------------

struct RetrievalMetrics {
  double recall1 = 0, recall10 = 0, recall100 = 0;
  int users_evaluated = 0;
};

// Hold out the last fraction of users by id; they are never trained on.
inline std::pair<std::vector<std::size_t>, std::vector<std::size_t>> holdout_split(std::size_t n_users,
                                                                                   double holdout_fraction) {
  const auto n_holdout = std::size_t(double(n_users) * holdout_fraction);
  std::vector<std::size_t> train, held;
  for (std::size_t i = 0; i < n_users; ++i)
    (i + n_holdout >= n_users ? held : train).push_back(i);
  return {train, held};
}

// Future-window retrieval recall for the given users: embedding from actions
// at/before cut, positives from (cut, cut+window]; users without positives or
// without inputs are excluded.
template <class Real>
RetrievalMetrics evaluate_retrieval(const synth::World& world, const ParamStore<Real>& params,
                                    const model::TransformerConfig& model_cfg, const enc::EncoderConfig& enc_cfg,
                                    const std::vector<std::size_t>& users, int window_days) {
  const std::int64_t cut = world.cfg.horizon_end() - std::int64_t(window_days) * 86400;

  Tensor<double> raw64 = world.pin_matrix();
  Tensor<Real> raw(raw64.shape());
  for (std::size_t i = 0; i < raw64.size(); ++i) raw.at(i) = Real(raw64.at(i));
  auto pin_emb = model::pin_tower_forward(params, raw, nullptr);
  Tensor<double> index(pin_emb.shape());
  for (std::size_t i = 0; i < pin_emb.size(); ++i) index.at(i) = double(pin_emb.at(i));

  RetrievalMetrics out;
  for (auto ui : users) {
    const auto& u = world.users[ui];
    std::set<std::int64_t> positives;
    for (const auto& a : u.actions)
      if (a.ts > cut && a.ts <= world.cfg.horizon_end() && synth::is_positive(a, world.cfg.click_min_duration))
        positives.insert(a.pin_id);
    if (positives.empty()) continue;
    std::vector<Real> emb;
    try {
      emb = objective::user_embedding_at(params, world, u, cut, enc_cfg, model_cfg);
    } catch (const enc::EmptyInputError&) {
      continue;
    }
    std::vector<double> emb64(emb.begin(), emb.end());
    out.recall1 += recall_at_k(emb64, positives, index, 1);
    out.recall10 += recall_at_k(emb64, positives, index, 10);
    out.recall100 += recall_at_k(emb64, positives, index, 100);
    ++out.users_evaluated;
  }
  if (out.users_evaluated > 0) {
    out.recall1 /= out.users_evaluated;
    out.recall10 /= out.users_evaluated;
    out.recall100 /= out.users_evaluated;
  }
  return out;
}

// --- loss comparison ---------------------------------------------------------

struct CompareRow {
  std::string loss_kind;
  std::uint64_t seed = 0;
  RetrievalMetrics metrics;
  double final_loss = 0;
  bool diverged = false;
};

struct CompareConfig {
  objective::TowerTrainConfig train;
  int eval_window_days = 14;
  double holdout_fraction = 0.2;
};

// Train one tower per (seed, loss kind) on identical data and report held-out
// future-window recall. Divergent runs are flagged and excluded by callers.
template <class Real>
std::vector<CompareRow> compare_losses(const synth::World& world, const std::vector<std::uint64_t>& seeds,
                                       const std::vector<objective::LossKind>& kinds, const CompareConfig& cfg) {
  auto [train_users, held_users] = holdout_split(world.users.size(), cfg.holdout_fraction);
  std::vector<CompareRow> rows;
  for (auto seed : seeds) {
    for (auto kind : kinds) {
      auto tcfg = cfg.train;
      tcfg.seed = seed;
      tcfg.objective.loss_kind = kind;
      CompareRow row;
      row.loss_kind = objective::to_string(kind);
      row.seed = seed;
      auto trained = objective::train_towers<Real>(world, train_users, tcfg);
      row.final_loss = trained.loss_log.empty() ? 0.0 : trained.loss_log.back().second;
      row.diverged = !trained.loss_log.empty() && !std::isfinite(trained.loss_log.back().second);
      if (!row.diverged)
        row.metrics = evaluate_retrieval(world, trained.params, tcfg.model, tcfg.encoder, held_users,
                                         cfg.eval_window_days);
      rows.push_back(std::move(row));
    }
  }
  return rows;
}

// --- time-window mask experiment ----------------------------------------------

struct MaskExperimentRow {
  std::uint64_t seed = 0;
  double responsiveness_masked = 0;
  double responsiveness_unmasked = 0;
  double auc_masked = 0;
  double auc_unmasked = 0;
};

struct MaskExperimentConfig {
  realtime::RankerTrainConfig ranker;
  double embed_cut_fraction = 0.6;
  double holdout_fraction = 0.2;
  int probe_users = 10;
  int probe_categories = 3;     // sampled per probe user
  int probe_pins_per_topic = 2;
  int probe_topics = 8;
  int auc_impressions = 800;    // held-out impressions scored per model
};

template <class Real>
struct RankerEvalSetup {
  std::vector<std::vector<Real>> long_term_by_user;
  std::vector<realtime::Impression> train_impressions;
  std::vector<realtime::Impression> held_impressions;
  std::vector<std::size_t> held_users;
  std::int64_t embed_cut = 0;
};

template <class Real>
RankerEvalSetup<Real> prepare_ranker_data(const synth::World& world, const ParamStore<Real>& tower_params,
                                          const model::TransformerConfig& model_cfg,
                                          const enc::EncoderConfig& enc_cfg, const MaskExperimentConfig& cfg) {
  RankerEvalSetup<Real> setup;
  const std::int64_t t0 = world.cfg.epoch_start;
  setup.embed_cut = t0 + std::int64_t(cfg.embed_cut_fraction * double(world.cfg.horizon_end() - t0));
  setup.long_term_by_user.resize(world.users.size());
  const std::size_t d_e = std::size_t(model_cfg.d_e);
  for (std::size_t ui = 0; ui < world.users.size(); ++ui) {
    try {
      setup.long_term_by_user[ui] =
          objective::user_embedding_at(tower_params, world, world.users[ui], setup.embed_cut, enc_cfg, model_cfg);
    } catch (const enc::EmptyInputError&) {
      setup.long_term_by_user[ui].assign(d_e, Real(0));
    }
  }
  auto [train_users, held_users] = holdout_split(world.users.size(), cfg.holdout_fraction);
  setup.held_users = held_users;
  setup.train_impressions =
      realtime::build_impressions(world, train_users, setup.embed_cut, cfg.ranker.min_history);
  setup.held_impressions = realtime::build_impressions(world, held_users, setup.embed_cut, cfg.ranker.min_history);
  return setup;
}

// Held-out AUC of a trained ranker over a seeded impression sample.
template <class Real>
double ranker_auc(const synth::World& world, const ParamStore<Real>& ranker_params,
                  const realtime::RealtimeConfig& rcfg, const RankerEvalSetup<Real>& setup,
                  std::size_t max_impressions, std::uint64_t seed, double click_min_duration) {
  auto impressions = setup.held_impressions;
  Rng rng(mix_seed(seed, "auc_sample"));
  rng.shuffle(impressions);
  if (impressions.size() > max_impressions) impressions.resize(max_impressions);
  std::vector<double> scores;
  std::vector<int> labels;
  for (const auto& imp : impressions) {
    auto req = realtime::impression_request(world, imp, setup.long_term_by_user, rcfg);
    scores.push_back(realtime::rank_score(req, world, ranker_params, rcfg, 0.0));
    const auto& event = world.users[imp.user_index].actions[imp.action_index];
    labels.push_back(synth::is_positive(event, click_min_duration) ? 1 : 0);
  }
  return auc(scores, labels);
}

// Seeded probe set: pins_per_topic pins from each of the first probe_topics
// topics, plus per-category fresh pins disjoint from the probes.
struct ProbeSet {
  std::vector<std::int64_t> pins;
  std::vector<std::int64_t> fresh_by_topic;  // indexed by topic id
};

inline ProbeSet build_probe_set(const synth::World& world, int probe_topics, int pins_per_topic,
                                std::uint64_t seed) {
  Rng rng(mix_seed(seed, "probe_set"));
  const int topics = std::min(probe_topics, world.cfg.n_topics);
  std::vector<std::vector<std::int64_t>> by_topic(std::size_t(world.cfg.n_topics));
  for (const auto& p : world.pins) by_topic[std::size_t(p.topic_id)].push_back(p.pin_id);
  ProbeSet out;
  out.fresh_by_topic.assign(std::size_t(world.cfg.n_topics), -1);
  for (int t = 0; t < topics; ++t) {
    auto& bucket = by_topic[std::size_t(t)];
    if (bucket.size() < std::size_t(pins_per_topic + 1))
      throw ConfigError("topic " + std::to_string(t) + " has too few pins for the probe set");
    rng.shuffle(bucket);
    for (int i = 0; i < pins_per_topic; ++i) out.pins.push_back(bucket[std::size_t(i)]);
    out.fresh_by_topic[std::size_t(t)] = bucket[std::size_t(pins_per_topic)];
  }
  return out;
}

// Mean responsiveness over sampled held-out probe users and categories.
template <class Real>
double mean_responsiveness(const synth::World& world, const ParamStore<Real>& ranker_params,
                           const realtime::RealtimeConfig& rcfg, const RankerEvalSetup<Real>& setup,
                           const MaskExperimentConfig& cfg, std::uint64_t seed) {
  auto probes = build_probe_set(world, cfg.probe_topics, cfg.probe_pins_per_topic, seed);
  Rng rng(mix_seed(seed, "probe_users"));
  auto users = setup.held_users;
  rng.shuffle(users);
  if (users.size() > std::size_t(cfg.probe_users)) users.resize(std::size_t(cfg.probe_users));
  const int topics = std::min(cfg.probe_topics, world.cfg.n_topics);
  double total = 0;
  int count = 0;
  for (auto ui : users) {
    const auto& u = world.users[ui];
    if (u.actions.empty()) continue;
    for (int c = 0; c < cfg.probe_categories; ++c) {
      const int category = int(rng.index(std::size_t(topics)));
      total += realtime::responsiveness(world, ranker_params, rcfg, u, setup.long_term_by_user[ui], category,
                                        probes.pins, probes.fresh_by_topic[std::size_t(category)], 0.0);
      ++count;
    }
  }
  if (count == 0) throw ConfigError("mean_responsiveness: no usable probe users");
  return total / double(count);
}

// One seed of the mask experiment: identical data, masked vs unmasked training.
template <class Real>
MaskExperimentRow run_mask_experiment_seed(const synth::World& world, const RankerEvalSetup<Real>& setup,
                                           const MaskExperimentConfig& cfg, std::uint64_t seed) {
  MaskExperimentRow row;
  row.seed = seed;
  for (bool masked : {true, false}) {
    auto tcfg = cfg.ranker;
    tcfg.seed = seed;
    tcfg.sample_mask_training = masked;
    auto trained = realtime::train_ranker<Real>(world, setup.train_impressions, setup.long_term_by_user, tcfg);
    const double a = ranker_auc(world, trained.params, tcfg.ranker, setup, std::size_t(cfg.auc_impressions), seed,
                                tcfg.click_min_duration);
    const double r = mean_responsiveness(world, trained.params, tcfg.ranker, setup, cfg, seed);
    if (masked) {
      row.auc_masked = a;
      row.responsiveness_masked = r;
    } else {
      row.auc_unmasked = a;
      row.responsiveness_unmasked = r;
    }
  }
  return row;
}

}  // namespace dsq::eval
