#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <limits>

#include "dsq/evaluation.hpp"
#include "dsq/gradcheck.hpp"
#include "dsq/realtime.hpp"

using namespace dsq;
using namespace dsq::synth;
using namespace dsq::realtime;

namespace {

World small_world(std::uint64_t seed = 71) {
  WorldConfig cfg;
  cfg.seed = seed;
  cfg.n_topics = 4;
  cfg.n_pins = 80;
  cfg.n_users = 14;
  cfg.d_pin = 8;
  cfg.horizon_days = 60;
  return generate_world(cfg);
}

RealtimeConfig small_ranker_cfg() {
  RealtimeConfig cfg;
  cfg.max_actions = 8;
  cfg.d_h = 16;
  cfg.d_ffn = 24;
  cfg.d_e = 8;
  cfg.d_pin = 8;
  return cfg;
}

ActionRecord action_at(std::int64_t ts, std::int64_t pin = 0) {
  ActionRecord a;
  a.pin_id = pin;
  a.ts = ts;
  a.type = ActionType::repin;
  a.duration = 20;
  return a;
}

std::vector<double> unit_long_term(std::size_t d) {
  std::vector<double> v(d, 0.0);
  v[0] = 1.0;
  return v;
}

}  // namespace

TEST_CASE("time_window_mask: zero window keeps everything, infinity masks everything") {
  std::vector<ActionRecord> actions{action_at(100), action_at(500), action_at(900)};
  auto all = time_window_mask(actions, 1000, 0.0);
  CHECK(all == std::vector<std::uint8_t>{1, 1, 1});
  auto none = time_window_mask(actions, 1000, std::numeric_limits<double>::infinity());
  CHECK(none == std::vector<std::uint8_t>{0, 0, 0});
}

TEST_CASE("time_window_mask: one hour window masks only the fresh action") {
  std::vector<ActionRecord> actions{action_at(1000000 - 7200), action_at(1000000 - 10)};
  auto mask = time_window_mask(actions, 1000000, 3600.0);
  CHECK(mask == std::vector<std::uint8_t>{1, 0});
  CHECK_THROWS_AS(time_window_mask({action_at(2000000)}, 1000000, 0.0), NumericError);
}

TEST_CASE("time_window_mask is monotone in the window") {
  std::vector<ActionRecord> actions;
  for (int i = 0; i < 20; ++i) actions.push_back(action_at(1000000 - i * 1800));
  std::vector<std::uint8_t> prev(actions.size(), 1);
  for (double t : {0.0, 600.0, 3600.0, 7200.0, 86400.0}) {
    auto mask = time_window_mask(actions, 1000000, t);
    for (std::size_t i = 0; i < mask.size(); ++i) CHECK(mask[i] <= prev[i]);
    prev = mask;
  }
}

TEST_CASE("realtime_encode: masked rows zero, single token attends itself, gradcheck") {
  auto cfg = small_ranker_cfg();
  auto params = init_ranker_params<double>(cfg, 5);
  Rng rng(mix_seed(5, "rt"));
  Tensor<double> feats(Shape{4, std::size_t(cfg.action_encoder().d_feat())});
  for (std::size_t i = 0; i < feats.size(); ++i) feats.at(i) = rng.normal() * 0.5;

  auto all_masked = realtime_encode<double>(feats, {0, 0, 0, 0}, params, cfg, nullptr);
  for (std::size_t i = 0; i < all_masked.size(); ++i) CHECK(all_masked.at(i) == 0.0);

  auto one = realtime_encode<double>(feats, {0, 1, 0, 0}, params, cfg, nullptr);
  for (std::size_t j = 0; j < std::size_t(cfg.d_h); ++j) {
    CHECK(one.at(0, j) == 0.0);
    CHECK(one.at(2, j) == 0.0);
    CHECK(one.at(3, j) == 0.0);
  }
  // the lone valid row is x + proj(v(ln(x))): nonzero for generic params
  double norm = 0;
  for (std::size_t j = 0; j < std::size_t(cfg.d_h); ++j) norm += one.at(1, j) * one.at(1, j);
  CHECK(norm > 0.0);

  ParamStore<double>& p = params;
  auto loss_fn = [&](Tape<double>* tape) {
    auto h = realtime_encode<double>(feats, {1, 1, 0, 1}, p, cfg, tape);
    return mean_all(mul(h, h, tape), tape);
  };
  auto report = grad_check(p, loss_fn, 1e-5, 400, 5);
  CHECK(report.max_rel_err < 1e-4);
}

TEST_CASE("rank_score: in (0,1), depends on candidate, needs the long-term embedding") {
  auto world = small_world();
  RealtimeConfig cfg = small_ranker_cfg();
  auto params = init_ranker_params<double>(cfg, 6);
  // generic nonzero weights so candidates differ
  Rng rng(mix_seed(6, "rankw"));
  for (auto& [name, p] : params)
    if (name.ends_with("/w"))
      for (std::size_t i = 0; i < p.size(); ++i) p.at(i) = rng.normal() * 0.3;

  RankRequest req;
  req.long_term = unit_long_term(8);
  req.request_time = world.cfg.epoch_start + 86400;
  for (int i = 0; i < 5; ++i) req.actions.push_back(action_at(req.request_time - 4000 + i * 600, i));
  req.candidate_pin = 10;
  const double s1 = rank_score(req, world, params, cfg);
  CHECK(s1 > 0.0);
  CHECK(s1 < 1.0);
  req.candidate_pin = 55;
  const double s2 = rank_score(req, world, params, cfg);
  CHECK(s1 != s2);

  RankRequest missing = req;
  missing.long_term.clear();
  CHECK_THROWS_WITH_AS(rank_score(missing, world, params, cfg), doctest::Contains("long-term"), ConfigError);
}

TEST_CASE("masked real-time tokens are inert: mutations cannot move the score") {
  auto world = small_world();
  RealtimeConfig cfg = small_ranker_cfg();
  auto params = init_ranker_params<double>(cfg, 7);
  Rng rng(mix_seed(7, "inert"));
  for (auto& [name, p] : params)
    if (name.ends_with("/w"))
      for (std::size_t i = 0; i < p.size(); ++i) p.at(i) = rng.normal() * 0.3;

  RankRequest req;
  req.long_term = unit_long_term(8);
  req.request_time = world.cfg.epoch_start + 10 * 86400;
  req.candidate_pin = 3;
  req.actions.push_back(action_at(req.request_time - 2 * 86400, 1));
  req.actions.push_back(action_at(req.request_time - 30, 2));  // masked under 1h window

  const double t_mask = 3600.0;
  const double base = rank_score(req, world, params, cfg, t_mask);

  RankRequest mutated = req;
  mutated.actions[1].pin_id = 44;
  mutated.actions[1].type = ActionType::hide;
  mutated.actions[1].duration = 999;
  mutated.actions[1].surface = Surface::search;
  CHECK(rank_score(mutated, world, params, cfg, t_mask) == base);

  // with all real-time tokens masked the score ignores the whole sequence
  const double all_masked = rank_score(req, world, params, cfg, std::numeric_limits<double>::infinity());
  RankRequest other = req;
  other.actions.clear();
  other.actions.push_back(action_at(req.request_time - 50, 7));
  CHECK(rank_score(other, world, params, cfg, std::numeric_limits<double>::infinity()) == all_masked);
}

TEST_CASE("rank_logit gradient check through the full ranker") {
  auto world = small_world();
  RealtimeConfig cfg = small_ranker_cfg();
  cfg.max_actions = 4;
  auto params = init_ranker_params<double>(cfg, 8);
  RankRequest req;
  req.long_term = unit_long_term(8);
  req.request_time = world.cfg.epoch_start + 5 * 86400;
  req.candidate_pin = 11;
  for (int i = 0; i < 3; ++i) req.actions.push_back(action_at(req.request_time - 9000 + i * 1200, 20 + i));
  const auto rt_valid = time_window_mask(req.actions, req.request_time, 0.0);
  auto loss_fn = [&](Tape<double>* tape) {
    return rank_logit<double>(req, rt_valid, world, params, cfg, tape);
  };
  auto report = grad_check(params, loss_fn, 1e-5, 400, 8);
  CHECK(report.max_rel_err < 1e-4);
}

TEST_CASE("train_ranker: deterministic, loss decreases on a seeded corpus") {
  auto world = small_world(73);
  auto [train_users, held_users] = eval::holdout_split(world.users.size(), 0.2);

  RankerTrainConfig cfg;
  cfg.ranker = small_ranker_cfg();
  cfg.steps = 60;
  cfg.batch_size = 6;
  cfg.seed = 9;
  cfg.min_history = 4;

  std::vector<std::vector<double>> long_term(world.users.size(), unit_long_term(8));
  const std::int64_t replay_start = world.cfg.epoch_start + 20 * 86400;
  auto impressions = build_impressions(world, train_users, replay_start, cfg.min_history);
  REQUIRE(impressions.size() > 50);

  auto r1 = train_ranker<double>(world, impressions, long_term, cfg);
  auto r2 = train_ranker<double>(world, impressions, long_term, cfg);
  REQUIRE(r1.loss_log.size() == 60);
  CHECK(r1.loss_log.back().second == r2.loss_log.back().second);

  double first = 0, last = 0;
  for (int i = 0; i < 15; ++i) {
    first += r1.loss_log[std::size_t(i)].second;
    last += r1.loss_log[r1.loss_log.size() - 1 - std::size_t(i)].second;
  }
  CHECK(last < first);
  for (auto& [step, loss] : r1.loss_log) CHECK(std::isfinite(loss));
}

TEST_CASE("responsiveness: untrained model near zero; probe set must span categories") {
  auto world = small_world(74);
  RealtimeConfig cfg = small_ranker_cfg();

  eval::MaskExperimentConfig mcfg;
  mcfg.probe_topics = 4;
  mcfg.probe_pins_per_topic = 2;
  auto probes = eval::build_probe_set(world, mcfg.probe_topics, mcfg.probe_pins_per_topic, 99);
  REQUIRE(probes.pins.size() == 8);

  // average the probe over several seeds of untrained parameters
  double total = 0;
  int count = 0;
  for (std::uint64_t seed : {1u, 2u, 3u, 4u, 5u, 6u}) {
    auto params = init_ranker_params<double>(cfg, seed);
    for (auto ui : {std::size_t(0), std::size_t(5)}) {
      const auto& u = world.users[ui];
      if (u.actions.empty()) continue;
      total += responsiveness(world, params, cfg, u, unit_long_term(8), 1, probes.pins, probes.fresh_by_topic[1]);
      ++count;
    }
  }
  REQUIRE(count > 0);
  CHECK(std::abs(total / count) < 1.0);  // mean rank shift under 1 position out of 8

  std::vector<std::int64_t> one_topic{probes.pins[0], probes.pins[1]};
  const auto& u0 = world.users[0];
  auto params = init_ranker_params<double>(cfg, 1);
  CHECK_THROWS_AS(
      responsiveness(world, params, cfg, u0, unit_long_term(8), 0, one_topic, probes.fresh_by_topic[0]),
      ConfigError);
}

TEST_CASE("appending an engagement then masking it leaves responsiveness at zero") {
  auto world = small_world(75);
  RealtimeConfig cfg = small_ranker_cfg();
  auto params = init_ranker_params<double>(cfg, 10);
  Rng rng(mix_seed(10, "respw"));
  for (auto& [name, p] : params)
    if (name.ends_with("/w"))
      for (std::size_t i = 0; i < p.size(); ++i) p.at(i) = rng.normal() * 0.3;

  auto probes = eval::build_probe_set(world, 4, 2, 100);
  const auto& u = world.users[2];
  REQUIRE(!u.actions.empty());
  // the appended action sits 1s before the request; a 10s inference mask hides it
  const double r = responsiveness(world, params, cfg, u, unit_long_term(8), 2, probes.pins,
                                  probes.fresh_by_topic[2], 10.0);
  CHECK(r == 0.0);
}
