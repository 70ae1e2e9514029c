#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <numeric>
#include <vector>

#include "dsq/ops.hpp"
#include "dsq/synth.hpp"

// Raw actions -> model input matrix: per-action features, truncation to the
// most recent max_actions, right-aligned padding, learnable positional offset.

namespace dsq::enc {

class EmptyInputError : public std::runtime_error {
 public:
  explicit EmptyInputError(const std::string& msg) : std::runtime_error(msg) {}
};

struct EncoderConfig {
  int max_actions = 64;  // M; 255 at full scale
  int d_pin = 16;
  int d_h = 32;

  int d_feat() const { return d_pin + synth::kNumActionTypes + synth::kNumSurfaces + 1 + 4; }

  void validate() const {
    if (max_actions < 1) throw ConfigError("max_actions must be at least 1");
    if (d_pin < 2) throw ConfigError("d_pin must be at least 2");
  }
};

inline constexpr int kFixedFeatures = synth::kNumActionTypes + synth::kNumSurfaces + 1 + 4;

// Fixed layout: pin embedding | one-hot action type | one-hot surface |
// log1p(duration) | log1p(age), sin/cos hour-of-day, day-of-week in [0,1).
inline std::vector<double> encode_action(const synth::ActionRecord& a, const synth::Pin& pin,
                                         std::int64_t ref_time) {
  if (a.pin_id != pin.pin_id) throw ConfigError("encode_action: pin does not match action's pin_id");
  if (a.ts > ref_time)
    throw NumericError("encode_action: action at " + std::to_string(a.ts) + " is after ref_time " +
                       std::to_string(ref_time));
  std::vector<double> f;
  f.reserve(pin.embedding.size() + kFixedFeatures);
  f.insert(f.end(), pin.embedding.begin(), pin.embedding.end());
  for (int i = 0; i < synth::kNumActionTypes; ++i) f.push_back(i == int(a.type) ? 1.0 : 0.0);
  for (int i = 0; i < synth::kNumSurfaces; ++i) f.push_back(i == int(a.surface) ? 1.0 : 0.0);
  f.push_back(std::log1p(std::max(a.duration, 0.0)));
  const double age = double(ref_time - a.ts);
  f.push_back(std::log1p(age));
  const double hour = double(a.ts % 86400) / 3600.0;
  const double angle = 2.0 * 3.14159265358979323846 * hour / 24.0;
  f.push_back(std::sin(angle));
  f.push_back(std::cos(angle));
  const double dow = double((a.ts / 86400 + 4) % 7);
  f.push_back(dow / 7.0);
  return f;
}

template <class Real>
struct InputMatrix {
  Tensor<Real> features;               // max_actions x d_feat, rows ascending in time
  std::vector<std::uint8_t> validity;  // false rows are zero padding (front)
  std::vector<std::ptrdiff_t> source_rows;  // row -> index into user.actions, -1 for padding
};

// Last <= M actions at/before cut_time, time-ascending, right-aligned; ties in
// timestamp keep the original record order.
template <class Real>
InputMatrix<Real> build_input_matrix(const synth::UserHistory& user, std::int64_t cut_time,
                                     const synth::World& world, const EncoderConfig& cfg) {
  cfg.validate();
  std::vector<std::size_t> eligible;
  for (std::size_t i = 0; i < user.actions.size(); ++i)
    if (user.actions[i].ts <= cut_time) eligible.push_back(i);
  std::stable_sort(eligible.begin(), eligible.end(), [&](std::size_t a, std::size_t b) {
    return user.actions[a].ts < user.actions[b].ts;
  });
  if (eligible.empty())
    throw EmptyInputError("user " + std::to_string(user.user_id) + " has no actions at or before cut time");
  const std::size_t m = std::size_t(cfg.max_actions);
  if (eligible.size() > m) eligible.erase(eligible.begin(), eligible.end() - std::ptrdiff_t(m));

  InputMatrix<Real> out;
  out.features = Tensor<Real>(Shape{m, std::size_t(cfg.d_feat())});
  out.validity.assign(m, 0);
  out.source_rows.assign(m, -1);
  const std::size_t pad = m - eligible.size();
  for (std::size_t i = 0; i < eligible.size(); ++i) {
    const auto& action = user.actions[eligible[i]];
    const auto row = encode_action(action, world.pin_by_id(action.pin_id), cut_time);
    for (std::size_t j = 0; j < row.size(); ++j) out.features.at(pad + i, j) = Real(row[j]);
    out.validity[pad + i] = 1;
    out.source_rows[pad + i] = std::ptrdiff_t(eligible[i]);
  }
  return out;
}

// Elementwise addition of the learned positional table.
template <class Real>
Tensor<Real> apply_positional_encoding(const Tensor<Real>& x, const Tensor<Real>& pos_table,
                                       std::type_identity_t<Tape<Real>*> tape) {
  if (!x.same_shape(pos_table))
    throw ShapeError("positional encoding " + pos_table.shape_string() + " does not match input " +
                     x.shape_string());
  return add(x, pos_table, tape);
}

// Markdown table documenting the feature layout for a given pin width.
inline std::string feature_layout_markdown(int d_pin) {
  std::ostringstream os;
  int off = 0;
  os << "# Action feature layout\n\n";
  os << "Per-action input vector, d_feat = " << d_pin + kFixedFeatures << " for d_pin = " << d_pin << ".\n\n";
  os << "| slice | width | contents |\n|---|---|---|\n";
  auto row = [&](int w, const std::string& what) {
    os << "| [" << off << ", " << off + w << ") | " << w << " | " << what << " |\n";
    off += w;
  };
  row(d_pin, "pin embedding (unit norm)");
  row(synth::kNumActionTypes, "one-hot action type: repin, click, closeup, hide, reaction, comment");
  row(synth::kNumSurfaces, "one-hot surface: homefeed, related_pins, search");
  row(1, "log1p(action duration seconds)");
  row(1, "log1p(age seconds relative to ref time)");
  row(2, "sin/cos of hour-of-day");
  row(1, "day-of-week scaled to [0,1)");
  return os.str();
}

}  // namespace dsq::enc
