#pragma once

#include <string>
#include <utility>
#include <vector>

#include "dsq/objective.hpp"

// Tower training loop: seeded batch sampling over users with per-step cut
// times, dense/all/next-action objectives, Adam updates, and a (step, loss)
// log. Single-threaded and bit-deterministic under (config, seed).

namespace dsq::objective {

struct TowerTrainConfig {
  model::TransformerConfig model;
  enc::EncoderConfig encoder;
  ObjectiveConfig objective;
  int steps = 400;
  int batch_size = 8;
  double learning_rate = 1e-3;
  std::uint64_t seed = 1;
  // per-example cut times sampled uniformly in this fraction of the horizon
  double cut_lo = 0.35;
  double cut_hi = 0.95;
};

template <class Real>
struct TrainedTowers {
  ParamStore<Real> params;
  std::vector<std::pair<int, double>> loss_log;
  int skipped_batches = 0;
};

template <class Real>
PositionTargets targets_for(const synth::UserHistory& user, const enc::InputMatrix<Real>& input,
                            const ObjectiveConfig& cfg) {
  PositionTargets t;
  switch (cfg.loss_kind) {
    case LossKind::dense_all_action:
      t = build_position_targets(user, input.source_rows, input.validity, cfg);
      break;
    case LossKind::all_action:
      t = restrict_to_last_position(build_position_targets(user, input.source_rows, input.validity, cfg),
                                    input.validity);
      break;
    case LossKind::next_action:
      t = build_next_action_targets(user, input.source_rows, input.validity, cfg);
      break;
  }
  return t;
}

template <class Real>
TrainedTowers<Real> train_towers(const synth::World& world, const std::vector<std::size_t>& train_users,
                                 const TowerTrainConfig& cfg) {
  cfg.model.validate();
  cfg.encoder.validate();
  cfg.objective.validate();
  if (train_users.empty()) throw ConfigError("train_towers: empty user set");

  TrainedTowers<Real> result;
  result.params = model::init_tower_params<Real>(cfg.model, cfg.encoder, cfg.seed);
  AdamOptimizer<Real> opt(cfg.learning_rate);

  Tensor<double> pin_matrix64 = world.pin_matrix();
  Tensor<Real> pin_matrix(pin_matrix64.shape());
  for (std::size_t i = 0; i < pin_matrix64.size(); ++i) pin_matrix.at(i) = Real(pin_matrix64.at(i));

  const std::int64_t t0 = world.cfg.epoch_start;
  const std::int64_t span = world.cfg.horizon_end() - t0;

  for (int step = 0; step < cfg.steps; ++step) {
    Rng rng(mix_seed(cfg.seed, "train_step", std::uint64_t(step)));
    Tape<Real> tape;
    std::vector<enc::InputMatrix<Real>> inputs;
    std::vector<PositionTargets> batch_targets;
    int attempts = 0;
    while (inputs.size() < std::size_t(cfg.batch_size) && attempts < cfg.batch_size * 8) {
      ++attempts;
      const auto& user = world.users[train_users[rng.index(train_users.size())]];
      if (user.actions.empty()) continue;
      const std::int64_t cut =
          t0 + std::int64_t(rng.uniform(cfg.cut_lo, cfg.cut_hi) * double(span));
      enc::InputMatrix<Real> input;
      try {
        input = enc::build_input_matrix<Real>(user, cut, world, cfg.encoder);
      } catch (const enc::EmptyInputError&) {
        continue;
      }
      auto targets = targets_for(user, input, cfg.objective);
      // throughput cap: seeded per-position target subsample
      const int cap = cfg.objective.max_targets_per_position;
      if (cap > 0)
        for (auto& t : targets.per_position)
          if (t.size() > std::size_t(cap)) {
            rng.shuffle(t);
            t.resize(std::size_t(cap));
          }
      if (targets.pair_count(input.validity) == 0) continue;
      inputs.push_back(std::move(input));
      batch_targets.push_back(std::move(targets));
    }
    auto negatives = sample_negatives(batch_targets, std::int64_t(world.pins.size()), cfg.objective,
                                      mix_seed(cfg.seed, "step_negatives", std::uint64_t(step)));
    std::vector<PreparedExample<Real>> batch(inputs.size());
    for (std::size_t e = 0; e < inputs.size(); ++e) {
      batch[e].targets = std::move(batch_targets[e]);
      batch[e].negatives = std::move(negatives[e]);
      batch[e].tower =
          model::user_tower_forward(result.params, inputs[e].features, inputs[e].validity, cfg.model, &tape);
    }
    PinTowerRef<Real> pins{result.params, pin_matrix};
    auto loss = batch_retrieval_loss(batch, pins, cfg.objective, &tape);
    if (!loss) {
      ++result.skipped_batches;
      continue;
    }
    result.params.zero_grads();
    tape.backward(*loss);
    opt.step(result.params);
    result.loss_log.emplace_back(step, double(loss->at(0)));
  }
  return result;
}

// Long-term user embedding: last valid position of the tower output for the
// user's history cut at cut_time.
template <class Real>
std::vector<Real> user_embedding_at(const ParamStore<Real>& params, const synth::World& world,
                                    const synth::UserHistory& user, std::int64_t cut_time,
                                    const enc::EncoderConfig& enc_cfg, const model::TransformerConfig& model_cfg) {
  auto input = enc::build_input_matrix<Real>(user, cut_time, world, enc_cfg);
  auto out = model::user_tower_forward(params, input.features, input.validity, model_cfg, nullptr);
  const std::size_t m = input.validity.size();
  std::size_t last = m;
  for (std::size_t i = m; i-- > 0;)
    if (input.validity[i]) {
      last = i;
      break;
    }
  if (last == m) throw enc::EmptyInputError("no valid position for user " + std::to_string(user.user_id));
  std::vector<Real> emb(std::size_t(model_cfg.d_e));
  for (int j = 0; j < model_cfg.d_e; ++j) emb[std::size_t(j)] = out.embeddings.at(last, std::size_t(j));
  return emb;
}

}  // namespace dsq::objective
