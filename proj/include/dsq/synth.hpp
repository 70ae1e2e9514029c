#pragma once

#include <cstdint>
#include <string>
#include <unordered_map>
#include <vector>

#include "dsq/tensor.hpp"

// Seeded synthetic world: pins clustered around topic centroids, users with
// sparse drifting interest mixtures, and year-scale action histories emitted
// by per-user substreams so sharding generation cannot change the output.

namespace dsq::synth {

enum class ActionType : int { repin = 0, click = 1, closeup = 2, hide = 3, reaction = 4, comment = 5 };
enum class Surface : int { homefeed = 0, related_pins = 1, search = 2 };

constexpr int kNumActionTypes = 6;
constexpr int kNumSurfaces = 3;

const char* to_string(ActionType t);
const char* to_string(Surface s);
ActionType action_type_from_string(const std::string& s);
Surface surface_from_string(const std::string& s);

struct Pin {
  std::int64_t pin_id = 0;
  int topic_id = 0;
  std::vector<double> embedding;  // unit norm
};

struct ActionRecord {
  std::int64_t pin_id = 0;
  std::int64_t ts = 0;  // seconds since epoch
  ActionType type = ActionType::repin;
  double duration = 0;  // seconds
  Surface surface = Surface::homefeed;
};

struct UserHistory {
  std::int64_t user_id = 0;
  std::vector<double> interest_mixture;  // over topics, sums to 1
  double drift_rate = 0;
  std::vector<ActionRecord> actions;  // time-ascending
};

struct WorldConfig {
  std::uint64_t seed = 7;
  int n_topics = 16;
  int n_pins = 2000;
  int n_users = 500;
  int d_pin = 16;
  int horizon_days = 180;
  double drift_rate = 0.02;          // per sqrt(day) log-weight walk
  double sessions_per_day = 0.9;
  double session_length_mean = 8.0;  // actions per session
  double topic_switch_prob = 0.15;   // per-action within-session resample
  double click_min_duration = 10.0;  // seconds; bounce threshold
  std::int64_t epoch_start = 1600000000;

  void validate() const;
  std::int64_t horizon_end() const { return epoch_start + std::int64_t(horizon_days) * 86400; }
};

struct World {
  WorldConfig cfg;
  std::vector<Pin> pins;
  std::vector<UserHistory> users;
  std::vector<std::vector<double>> topic_centroids;

  const Pin& pin_by_id(std::int64_t id) const;
  // n_pins x d_pin matrix of raw pin embeddings, row i = pin with id i.
  Tensor<double> pin_matrix() const;

  void rebuild_index();

 private:
  std::unordered_map<std::int64_t, std::size_t> pin_index_;
};

World generate_world(const WorldConfig& cfg);

bool is_positive(const ActionRecord& a, double click_min_duration = 10.0);

// --- corpus splitting -------------------------------------------------------

struct CutPolicy {
  enum class Kind {
    end_minus_window,  // cut = horizon_end - window
    span_fraction,     // cut = first_ts + value * (last_ts - first_ts), per user
  };
  Kind kind = Kind::end_minus_window;
  double value = 0.0;
};

struct TrainingExample {
  std::int64_t user_id = 0;
  std::int64_t cut_time = 0;
  std::vector<ActionRecord> inputs;   // ts <= cut_time
  std::vector<ActionRecord> targets;  // positive actions in (cut, cut + window]
};

std::vector<TrainingExample> split_corpus(const World& world, const CutPolicy& policy, int window_days);

// --- on-disk corpus ---------------------------------------------------------
// JSON-lines corpus plus pins sidecar and a meta echo of the generator config.

void save_world(const World& world, const std::string& dir);
World load_world(const std::string& dir);

// Serialized corpus.jsonl content; used for digest/determinism checks.
std::string corpus_to_string(const World& world);

}  // namespace dsq::synth
