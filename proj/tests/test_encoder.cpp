#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <algorithm>

#include "dsq/encoder.hpp"
#include "dsq/gradcheck.hpp"

using namespace dsq;
using namespace dsq::synth;
using namespace dsq::enc;

namespace {

World two_pin_world() {
  World w;
  w.cfg.n_topics = 2;
  w.cfg.n_pins = 2;
  w.cfg.n_users = 1;
  w.cfg.d_pin = 16;
  w.cfg.horizon_days = 30;
  for (int i = 0; i < 2; ++i) {
    Pin p;
    p.pin_id = i;
    p.topic_id = i;
    p.embedding.assign(16, 0.0);
    p.embedding[std::size_t(i)] = 1.0;
    w.pins.push_back(p);
  }
  w.rebuild_index();
  return w;
}

ActionRecord make_action(std::int64_t ts, double dur = 5.0, Surface s = Surface::homefeed) {
  ActionRecord a;
  a.pin_id = 0;
  a.ts = ts;
  a.type = ActionType::click;
  a.duration = dur;
  a.surface = s;
  return a;
}

}  // namespace

TEST_CASE("feature width: d_pin=16 gives d_feat=30") {
  EncoderConfig cfg;
  cfg.d_pin = 16;
  CHECK(cfg.d_feat() == 30);
  auto w = two_pin_world();
  auto f = encode_action(make_action(1000), w.pins[0], 2000);
  CHECK(f.size() == 30);
}

TEST_CASE("zero duration encodes as zero log1p") {
  auto w = two_pin_world();
  auto f = encode_action(make_action(1000, 0.0), w.pins[0], 2000);
  CHECK(f[16 + 6 + 3] == 0.0);
}

TEST_CASE("actions differing only in surface differ only in surface slots") {
  auto w = two_pin_world();
  auto f1 = encode_action(make_action(1000, 5.0, Surface::homefeed), w.pins[0], 2000);
  auto f2 = encode_action(make_action(1000, 5.0, Surface::search), w.pins[0], 2000);
  const std::size_t surface0 = 16 + 6;
  for (std::size_t i = 0; i < f1.size(); ++i) {
    if (i >= surface0 && i < surface0 + 3)
      continue;
    CHECK(f1[i] == f2[i]);
  }
  CHECK(f1[surface0 + 0] == 1.0);
  CHECK(f2[surface0 + 2] == 1.0);
  CHECK(f1[surface0 + 2] == 0.0);
}

TEST_CASE("encode_action rejects actions after ref_time") {
  auto w = two_pin_world();
  CHECK_THROWS_AS(encode_action(make_action(3000), w.pins[0], 2000), NumericError);
  CHECK_THROWS_AS(encode_action(make_action(1000), w.pins[1], 2000), ConfigError);
}

TEST_CASE("right alignment with padding in front") {
  auto w = two_pin_world();
  UserHistory u;
  u.user_id = 0;
  u.interest_mixture = {0.5, 0.5};
  for (int i = 0; i < 3; ++i) u.actions.push_back(make_action(1000 + i * 100));
  EncoderConfig cfg;
  cfg.max_actions = 5;
  auto im = build_input_matrix<double>(u, 2000, w, cfg);
  CHECK(im.validity == std::vector<std::uint8_t>{0, 0, 1, 1, 1});
  for (std::size_t j = 0; j < std::size_t(cfg.d_feat()); ++j) {
    CHECK(im.features.at(0, j) == 0.0);
    CHECK(im.features.at(1, j) == 0.0);
  }
  // ascending ages decrease down the rows; age feature sits at d_pin+10
  const std::size_t age_col = 16 + 6 + 3 + 1;
  CHECK(im.features.at(2, age_col) > im.features.at(3, age_col));
  CHECK(im.features.at(3, age_col) > im.features.at(4, age_col));
}

TEST_CASE("keeps exactly the 255 most recent of 300 actions") {
  auto w = two_pin_world();
  UserHistory u;
  u.user_id = 1;
  u.interest_mixture = {1.0, 0.0};
  for (int i = 0; i < 300; ++i) u.actions.push_back(make_action(1000 + i));
  EncoderConfig cfg;
  cfg.max_actions = 255;
  auto im = build_input_matrix<double>(u, 10000, w, cfg);
  CHECK(std::count(im.validity.begin(), im.validity.end(), 1) == 255);
  const std::size_t age_col = 16 + 6 + 3 + 1;
  // earliest kept action is number 45 (ts=1045)
  CHECK(im.features.at(0, age_col) == doctest::Approx(std::log1p(10000.0 - 1045.0)).epsilon(1e-12));
}

TEST_CASE("storage order permutation does not change the input matrix") {
  auto w = two_pin_world();
  UserHistory sorted_u;
  sorted_u.user_id = 2;
  sorted_u.interest_mixture = {1.0, 0.0};
  for (int i = 0; i < 8; ++i) sorted_u.actions.push_back(make_action(1000 + i * 17, double(i)));
  UserHistory shuffled_u = sorted_u;
  std::reverse(shuffled_u.actions.begin(), shuffled_u.actions.end());
  std::swap(shuffled_u.actions[0], shuffled_u.actions[3]);

  EncoderConfig cfg;
  cfg.max_actions = 6;
  auto a = build_input_matrix<double>(sorted_u, 5000, w, cfg);
  auto b = build_input_matrix<double>(shuffled_u, 5000, w, cfg);
  CHECK(a.validity == b.validity);
  for (std::size_t i = 0; i < a.features.size(); ++i) CHECK(a.features.at(i) == b.features.at(i));
}

TEST_CASE("empty input raises the skip-user error") {
  auto w = two_pin_world();
  UserHistory u;
  u.user_id = 3;
  u.interest_mixture = {1.0, 0.0};
  u.actions.push_back(make_action(5000));
  EncoderConfig cfg;
  CHECK_THROWS_AS(build_input_matrix<double>(u, 2000, w, cfg), EmptyInputError);
}

TEST_CASE("positional encoding: zero table is identity, gradients flow, rows differ") {
  Tensor<double> x(Shape{3, 4}, {1, 2, 3, 4, 5, 6, 7, 8, 9, 10, 11, 12});
  Tensor<double> zero(Shape{3, 4});
  auto same = apply_positional_encoding(x, zero, nullptr);
  for (std::size_t i = 0; i < x.size(); ++i) CHECK(same.at(i) == x.at(i));

  Tensor<double> wrong(Shape{2, 4});
  CHECK_THROWS_AS(apply_positional_encoding(x, wrong, nullptr), ShapeError);

  ParamStore<double> params;
  Tensor<double> table(Shape{3, 4});
  for (std::size_t i = 0; i < table.size(); ++i) table.at(i) = 0.01 * double(i);
  params.add("pos", table);
  auto loss_fn = [&](Tape<double>* tape) {
    auto y = apply_positional_encoding(x, params.get("pos"), tape);
    return mean_all(mul(y, y, tape), tape);
  };
  auto report = grad_check(params, loss_fn, 1e-5);
  CHECK(report.max_rel_err < 1e-6);

  auto shifted = apply_positional_encoding(x, params.get("pos"), nullptr);
  bool any_diff = false;
  for (std::size_t j = 0; j < 4; ++j) any_diff = any_diff || (shifted.at(0, j) - x.at(0, j) != shifted.at(1, j) - x.at(1, j));
  CHECK(any_diff);
}

TEST_CASE("feature layout document lists every slice") {
  auto md = feature_layout_markdown(16);
  CHECK(md.find("d_feat = 30") != std::string::npos);
  CHECK(md.find("pin embedding") != std::string::npos);
  CHECK(md.find("day-of-week") != std::string::npos);
}
