#include "dsq/synth.hpp"

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <sstream>

#include <json.hpp>

#include "dsq/rng.hpp"

namespace dsq::synth {

using ordered_json = nlohmann::ordered_json;

const char* to_string(ActionType t) {
  switch (t) {
    case ActionType::repin: return "repin";
    case ActionType::click: return "click";
    case ActionType::closeup: return "closeup";
    case ActionType::hide: return "hide";
    case ActionType::reaction: return "reaction";
    case ActionType::comment: return "comment";
  }
  return "repin";
}

const char* to_string(Surface s) {
  switch (s) {
    case Surface::homefeed: return "homefeed";
    case Surface::related_pins: return "related_pins";
    case Surface::search: return "search";
  }
  return "homefeed";
}

ActionType action_type_from_string(const std::string& s) {
  for (int i = 0; i < kNumActionTypes; ++i)
    if (s == to_string(ActionType(i))) return ActionType(i);
  throw ConfigError("unknown action type: " + s);
}

Surface surface_from_string(const std::string& s) {
  for (int i = 0; i < kNumSurfaces; ++i)
    if (s == to_string(Surface(i))) return Surface(i);
  throw ConfigError("unknown surface: " + s);
}

void WorldConfig::validate() const {
  if (d_pin < 2) throw ConfigError("d_pin must be at least 2, got " + std::to_string(d_pin));
  if (n_topics < 1 || n_pins < 1 || n_users < 1) throw ConfigError("world counts must be positive");
  if (n_topics > n_pins)
    throw ConfigError("n_topics (" + std::to_string(n_topics) + ") exceeds n_pins (" + std::to_string(n_pins) + ")");
  if (horizon_days < 1 || horizon_days > 365)
    throw ConfigError("horizon_days must be in [1, 365], got " + std::to_string(horizon_days));
  if (sessions_per_day <= 0 || session_length_mean < 1) throw ConfigError("session parameters out of range");
}

const Pin& World::pin_by_id(std::int64_t id) const {
  auto it = pin_index_.find(id);
  if (it == pin_index_.end()) throw ConfigError("unknown pin id: " + std::to_string(id));
  return pins[it->second];
}

Tensor<double> World::pin_matrix() const {
  const std::size_t d = pins.empty() ? 0 : pins[0].embedding.size();
  Tensor<double> m(Shape{pins.size(), d});
  for (std::size_t i = 0; i < pins.size(); ++i)
    for (std::size_t j = 0; j < d; ++j) m.at(i, j) = pins[i].embedding[j];
  return m;
}

void World::rebuild_index() {
  pin_index_.clear();
  for (std::size_t i = 0; i < pins.size(); ++i) pin_index_[pins[i].pin_id] = i;
}

namespace {

std::vector<std::vector<double>> make_centroids(const WorldConfig& cfg) {
  Rng rng(mix_seed(cfg.seed, "topics"));
  std::vector<std::vector<double>> c(cfg.n_topics, std::vector<double>(cfg.d_pin));
  for (auto& v : c) {
    for (auto& x : v) x = rng.normal();
  }
  // Gram-Schmidt while possible; cleanly separated topics make alignment
  // scores meaningful at small d_pin.
  for (int i = 0; i < cfg.n_topics; ++i) {
    if (i < cfg.d_pin) {
      for (int j = 0; j < i; ++j) {
        double dot = 0;
        for (int k = 0; k < cfg.d_pin; ++k) dot += c[i][k] * c[j][k];
        for (int k = 0; k < cfg.d_pin; ++k) c[i][k] -= dot * c[j][k];
      }
    }
    double norm = 0;
    for (double x : c[i]) norm += x * x;
    norm = std::sqrt(norm);
    if (norm < 1e-9) {  // regenerate a degenerate direction deterministically
      for (auto& x : c[i]) x = rng.normal();
      norm = 0;
      for (double x : c[i]) norm += x * x;
      norm = std::sqrt(norm);
    }
    for (auto& x : c[i]) x /= norm;
  }
  return c;
}

std::vector<Pin> make_pins(const WorldConfig& cfg, const std::vector<std::vector<double>>& centroids) {
  Rng rng(mix_seed(cfg.seed, "pins"));
  std::vector<Pin> pins(cfg.n_pins);
  const double spread = 0.35;
  for (int i = 0; i < cfg.n_pins; ++i) {
    Pin& p = pins[i];
    p.pin_id = i;
    p.topic_id = i % cfg.n_topics;
    p.embedding.resize(cfg.d_pin);
    double norm = 0;
    for (int k = 0; k < cfg.d_pin; ++k) {
      p.embedding[k] = centroids[p.topic_id][k] + spread * rng.normal();
      norm += p.embedding[k] * p.embedding[k];
    }
    norm = std::sqrt(norm);
    for (auto& x : p.embedding) x /= norm;
  }
  return pins;
}

struct TypeDraw {
  ActionType type;
  double duration;
};

// Positives become more likely the better the pin's topic matches the user's
// current mixture and the live session topic; hides concentrate on
// misaligned pins. Bounce clicks (short duration) appear in both branches.
TypeDraw draw_action_type(Rng& rng, double mixture_alignment, bool in_session_topic) {
  const double p_pos = std::clamp(0.16 + 0.5 * mixture_alignment + 0.2 * (in_session_topic ? 1.0 : 0.0), 0.02, 0.95);
  TypeDraw d{};
  if (rng.uniform01() < p_pos) {
    switch (rng.categorical({0.45, 0.35, 0.12, 0.08})) {
      case 0: d.type = ActionType::repin; d.duration = rng.exponential(25.0); break;
      case 1: d.type = ActionType::click; d.duration = 12.0 + rng.exponential(40.0); break;
      case 2: d.type = ActionType::reaction; d.duration = rng.exponential(15.0); break;
      default: d.type = ActionType::comment; d.duration = 10.0 + rng.exponential(30.0); break;
    }
  } else {
    const double hide_w = 0.18 + 0.5 * (1.0 - mixture_alignment);
    switch (rng.categorical({0.55, hide_w, 0.25})) {
      case 0: d.type = ActionType::closeup; d.duration = rng.exponential(8.0); break;
      case 1: d.type = ActionType::hide; d.duration = 0.0; break;
      default: d.type = ActionType::click; d.duration = rng.exponential(4.0); break;  // bounce
    }
  }
  return d;
}

UserHistory make_user(const WorldConfig& cfg, std::int64_t user_id,
                      const std::vector<std::vector<std::size_t>>& pins_by_topic) {
  Rng rng(mix_seed(cfg.seed, "user", std::uint64_t(user_id)));
  UserHistory u;
  u.user_id = user_id;
  u.drift_rate = cfg.drift_rate;

  const int lo = std::min(3, cfg.n_topics);
  const int hi = std::min(6, cfg.n_topics);
  const int k_active = int(rng.uniform_int(lo, hi));
  std::vector<std::size_t> topics(cfg.n_topics);
  for (int i = 0; i < cfg.n_topics; ++i) topics[i] = std::size_t(i);
  rng.shuffle(topics);
  std::vector<double> weights(cfg.n_topics, 0.0);
  double total = 0;
  for (int i = 0; i < k_active; ++i) {
    weights[topics[i]] = rng.exponential(1.0) + 0.2;
    total += weights[topics[i]];
  }
  for (auto& w : weights) w /= total;
  u.interest_mixture = weights;

  std::vector<double> live = weights;  // drifting copy
  const std::int64_t end = cfg.horizon_end();
  double t = double(cfg.epoch_start);
  double last_session_day = 0;
  while (true) {
    t += rng.exponential(86400.0 / cfg.sessions_per_day);
    if (t >= double(end)) break;
    const double day = (t - double(cfg.epoch_start)) / 86400.0;
    if (u.drift_rate > 0) {
      const double dd = std::max(day - last_session_day, 0.0);
      double z = 0;
      for (auto& w : live)
        if (w > 0) {
          w *= std::exp(u.drift_rate * std::sqrt(dd) * rng.normal());
          z += w;
        }
      for (auto& w : live) w /= z;
    }
    last_session_day = day;
    const double max_w = *std::max_element(live.begin(), live.end());
    std::size_t session_topic = rng.categorical(live);
    const int n_actions = 1 + rng.poisson(cfg.session_length_mean - 1.0);
    double ts = t;
    for (int a = 0; a < n_actions && ts < double(end); ++a) {
      std::size_t topic = session_topic;
      if (rng.uniform01() < cfg.topic_switch_prob) topic = rng.categorical(live);
      const auto& bucket = pins_by_topic[topic];
      const std::size_t pin_row = bucket[rng.index(bucket.size())];
      const double alignment = max_w > 0 ? live[topic] / max_w : 0.0;
      TypeDraw draw = draw_action_type(rng, alignment, topic == session_topic);
      ActionRecord rec;
      rec.pin_id = std::int64_t(pin_row);
      rec.ts = std::int64_t(ts);
      rec.type = draw.type;
      rec.duration = std::round(draw.duration * 100.0) / 100.0;
      rec.surface = Surface(rng.categorical({0.6, 0.25, 0.15}));
      u.actions.push_back(rec);
      ts += 20.0 + rng.exponential(70.0);
    }
    t = ts;
  }
  return u;
}

}  // namespace

World generate_world(const WorldConfig& cfg) {
  cfg.validate();
  World w;
  w.cfg = cfg;
  w.topic_centroids = make_centroids(cfg);
  w.pins = make_pins(cfg, w.topic_centroids);
  w.rebuild_index();

  std::vector<std::vector<std::size_t>> pins_by_topic(cfg.n_topics);
  for (std::size_t i = 0; i < w.pins.size(); ++i) pins_by_topic[w.pins[i].topic_id].push_back(i);

  w.users.reserve(cfg.n_users);
  for (int uid = 0; uid < cfg.n_users; ++uid) w.users.push_back(make_user(cfg, uid, pins_by_topic));
  return w;
}

bool is_positive(const ActionRecord& a, double click_min_duration) {
  switch (a.type) {
    case ActionType::repin:
    case ActionType::reaction:
    case ActionType::comment: return true;
    case ActionType::click: return a.duration >= click_min_duration;
    case ActionType::closeup:
    case ActionType::hide: return false;
  }
  return false;
}

std::vector<TrainingExample> split_corpus(const World& world, const CutPolicy& policy, int window_days) {
  if (window_days <= 0) throw ConfigError("window_days must be positive, got " + std::to_string(window_days));
  const std::int64_t window = std::int64_t(window_days) * 86400;
  std::vector<TrainingExample> out;
  out.reserve(world.users.size());
  for (const auto& u : world.users) {
    TrainingExample ex;
    ex.user_id = u.user_id;
    if (policy.kind == CutPolicy::Kind::end_minus_window) {
      ex.cut_time = world.cfg.horizon_end() - window;
    } else {
      if (u.actions.empty()) continue;
      const std::int64_t first = u.actions.front().ts, last = u.actions.back().ts;
      ex.cut_time = first + std::int64_t(policy.value * double(last - first));
    }
    for (const auto& a : u.actions) {
      if (a.ts <= ex.cut_time)
        ex.inputs.push_back(a);
      else if (a.ts <= ex.cut_time + window && is_positive(a, world.cfg.click_min_duration))
        ex.targets.push_back(a);
    }
    out.push_back(std::move(ex));
  }
  return out;
}

namespace {

ordered_json action_to_json(std::int64_t user_id, const ActionRecord& a) {
  ordered_json j;
  j["user_id"] = user_id;
  j["pin_id"] = a.pin_id;
  j["ts"] = a.ts;
  j["type"] = to_string(a.type);
  j["dur"] = a.duration;
  j["surface"] = to_string(a.surface);
  return j;
}

}  // namespace

std::string corpus_to_string(const World& world) {
  std::ostringstream os;
  for (const auto& u : world.users)
    for (const auto& a : u.actions) os << action_to_json(u.user_id, a).dump() << '\n';
  return os.str();
}

void save_world(const World& world, const std::string& dir) {
  std::filesystem::create_directories(dir);
  {
    std::ofstream f(dir + "/pins.jsonl", std::ios::trunc);
    if (!f) throw ConfigError("cannot write " + dir + "/pins.jsonl");
    for (const auto& p : world.pins) {
      ordered_json j;
      j["pin_id"] = p.pin_id;
      j["topic"] = p.topic_id;
      j["emb"] = p.embedding;
      f << j.dump() << '\n';
    }
  }
  {
    std::ofstream f(dir + "/corpus.jsonl", std::ios::trunc);
    if (!f) throw ConfigError("cannot write " + dir + "/corpus.jsonl");
    f << corpus_to_string(world);
  }
  {
    ordered_json meta;
    meta["seed"] = world.cfg.seed;
    meta["n_topics"] = world.cfg.n_topics;
    meta["n_pins"] = world.cfg.n_pins;
    meta["n_users"] = world.cfg.n_users;
    meta["d_pin"] = world.cfg.d_pin;
    meta["horizon_days"] = world.cfg.horizon_days;
    meta["drift_rate"] = world.cfg.drift_rate;
    meta["click_min_duration"] = world.cfg.click_min_duration;
    meta["epoch_start"] = world.cfg.epoch_start;
    std::ofstream f(dir + "/meta.json", std::ios::trunc);
    if (!f) throw ConfigError("cannot write " + dir + "/meta.json");
    f << meta.dump(2) << '\n';
  }
}

World load_world(const std::string& dir) {
  World w;
  {
    std::ifstream f(dir + "/meta.json");
    if (!f) throw ConfigError("cannot read " + dir + "/meta.json");
    ordered_json meta = ordered_json::parse(f);
    w.cfg.seed = meta.value("seed", std::uint64_t(0));
    w.cfg.n_topics = meta.value("n_topics", 0);
    w.cfg.n_pins = meta.value("n_pins", 0);
    w.cfg.n_users = meta.value("n_users", 0);
    w.cfg.d_pin = meta.value("d_pin", 0);
    w.cfg.horizon_days = meta.value("horizon_days", 0);
    w.cfg.drift_rate = meta.value("drift_rate", 0.0);
    w.cfg.click_min_duration = meta.value("click_min_duration", 10.0);
    w.cfg.epoch_start = meta.value("epoch_start", std::int64_t(0));
  }
  {
    std::ifstream f(dir + "/pins.jsonl");
    if (!f) throw ConfigError("cannot read " + dir + "/pins.jsonl");
    std::string line;
    while (std::getline(f, line)) {
      if (line.empty()) continue;
      ordered_json j = ordered_json::parse(line);
      Pin p;
      p.pin_id = j.at("pin_id").get<std::int64_t>();
      p.topic_id = j.at("topic").get<int>();
      p.embedding = j.at("emb").get<std::vector<double>>();
      w.pins.push_back(std::move(p));
    }
  }
  w.rebuild_index();
  {
    std::ifstream f(dir + "/corpus.jsonl");
    if (!f) throw ConfigError("cannot read " + dir + "/corpus.jsonl");
    std::unordered_map<std::int64_t, std::size_t> user_index;
    std::string line;
    while (std::getline(f, line)) {
      if (line.empty()) continue;
      ordered_json j = ordered_json::parse(line);
      const std::int64_t uid = j.at("user_id").get<std::int64_t>();
      auto it = user_index.find(uid);
      if (it == user_index.end()) {
        it = user_index.emplace(uid, w.users.size()).first;
        UserHistory u;
        u.user_id = uid;
        // latent generator state is not serialized; keep a uniform mixture
        u.interest_mixture.assign(std::size_t(std::max(w.cfg.n_topics, 1)), 1.0 / std::max(w.cfg.n_topics, 1));
        w.users.push_back(std::move(u));
      }
      ActionRecord a;
      a.pin_id = j.at("pin_id").get<std::int64_t>();
      a.ts = j.at("ts").get<std::int64_t>();
      a.type = action_type_from_string(j.at("type").get<std::string>());
      a.duration = j.at("dur").get<double>();
      a.surface = surface_from_string(j.at("surface").get<std::string>());
      auto& actions = w.users[it->second].actions;
      if (!actions.empty() && a.ts < actions.back().ts)
        throw ConfigError("corpus timestamps not nondecreasing for user " + std::to_string(uid));
      actions.push_back(a);
    }
  }
  return w;
}

}  // namespace dsq::synth
