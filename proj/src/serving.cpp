#include "dsq/serving.hpp"

#include <algorithm>
#include <fstream>
#include <limits>
#include <map>
#include <set>
#include <queue>
#include <sstream>

namespace dsq::serving {

const char* to_string(OpKind k) {
  switch (k) {
    case OpKind::embedding_lookup: return "embedding_lookup";
    case OpKind::projection: return "projection";
    case OpKind::feature_preprocess: return "feature_preprocess";
    case OpKind::transformer_encoder: return "transformer_encoder";
    case OpKind::mlp_head: return "mlp_head";
    case OpKind::other: return "other";
  }
  return "other";
}

OpKind op_kind_from_string(const std::string& s) {
  for (int i = 0; i <= int(OpKind::other); ++i)
    if (s == to_string(OpKind(i))) return OpKind(i);
  throw ConfigError("unknown op kind: " + s);
}

std::size_t OpGraph::index_of(const std::string& id) const {
  for (std::size_t i = 0; i < nodes.size(); ++i)
    if (nodes[i].id == id) return i;
  throw ConfigError("unknown node id: " + id);
}

bool OpGraph::has_kind(OpKind k) const {
  for (const auto& n : nodes)
    if (n.kind == k) return true;
  return false;
}

OpGraph OpGraph::without_kind(OpKind k) const {
  OpGraph out;
  std::vector<std::ptrdiff_t> remap(nodes.size(), -1);
  for (std::size_t i = 0; i < nodes.size(); ++i)
    if (nodes[i].kind != k) {
      remap[i] = std::ptrdiff_t(out.nodes.size());
      out.nodes.push_back(nodes[i]);
    }
  // bridge edges through removed nodes
  std::vector<std::vector<std::size_t>> succ(nodes.size());
  for (auto [a, b] : edges) succ[a].push_back(b);
  auto surviving_successors = [&](std::size_t from) {
    std::vector<std::size_t> result;
    std::vector<std::size_t> stack(succ[from]);
    std::vector<char> seen(nodes.size(), 0);
    while (!stack.empty()) {
      const std::size_t v = stack.back();
      stack.pop_back();
      if (seen[v]) continue;
      seen[v] = 1;
      if (remap[v] >= 0)
        result.push_back(v);
      else
        for (auto w : succ[v]) stack.push_back(w);
    }
    return result;
  };
  std::set<std::pair<std::size_t, std::size_t>> added;
  for (std::size_t i = 0; i < nodes.size(); ++i) {
    if (remap[i] < 0) continue;
    for (auto v : surviving_successors(i)) {
      auto e = std::make_pair(std::size_t(remap[i]), std::size_t(remap[v]));
      if (added.insert(e).second) out.edges.push_back(e);
    }
  }
  return out;
}

std::vector<std::size_t> OpGraph::topo_order() const {
  std::vector<std::size_t> indegree(nodes.size(), 0);
  std::vector<std::vector<std::size_t>> succ(nodes.size());
  for (auto [a, b] : edges) {
    succ[a].push_back(b);
    ++indegree[b];
  }
  std::vector<std::size_t> order;
  order.reserve(nodes.size());
  std::vector<std::size_t> ready;
  for (std::size_t i = 0; i < nodes.size(); ++i)
    if (indegree[i] == 0) ready.push_back(i);
  while (!ready.empty()) {
    const std::size_t v = ready.back();
    ready.pop_back();
    order.push_back(v);
    for (auto w : succ[v])
      if (--indegree[w] == 0) ready.push_back(w);
  }
  if (order.size() != nodes.size()) {
    for (std::size_t i = 0; i < nodes.size(); ++i)
      if (indegree[i] > 0)
        throw ConfigError("graph contains a cycle through node '" + nodes[i].id + "'");
  }
  return order;
}

Placement Placement::uniform(const OpGraph& g, Device d) {
  Placement p;
  p.device.assign(g.nodes.size(), Device::CPU);
  if (d == Device::GPU)
    for (std::size_t i = 0; i < g.nodes.size(); ++i)
      if (g.nodes[i].gpu_cost_us) p.device[i] = Device::GPU;
  return p;
}

OpGraph parse_graph(std::istream& in) {
  OpGraph g;
  std::map<std::string, std::size_t> index;
  std::vector<std::pair<std::string, std::string>> raw_edges;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    const auto hash = line.find('#');
    if (hash != std::string::npos) line.erase(hash);
    std::istringstream ls(line);
    std::string word;
    if (!(ls >> word)) continue;
    if (word == "node") {
      OpNode n;
      std::string kind, gpu;
      if (!(ls >> n.id >> kind >> n.cpu_cost_us >> gpu >> n.output_bytes))
        throw ConfigError("malformed node line " + std::to_string(line_no));
      n.kind = op_kind_from_string(kind);
      if (gpu != "-") n.gpu_cost_us = std::stod(gpu);
      if (n.cpu_cost_us < 0 || (n.gpu_cost_us && *n.gpu_cost_us < 0) || n.output_bytes < 0)
        throw ConfigError("negative cost on node '" + n.id + "'");
      if (index.count(n.id)) throw ConfigError("duplicate node id: " + n.id);
      index[n.id] = g.nodes.size();
      g.nodes.push_back(std::move(n));
    } else if (word == "edge") {
      std::string a, b;
      if (!(ls >> a >> b)) throw ConfigError("malformed edge line " + std::to_string(line_no));
      raw_edges.emplace_back(a, b);
    } else {
      throw ConfigError("unknown directive '" + word + "' on line " + std::to_string(line_no));
    }
  }
  if (g.nodes.empty()) throw ConfigError("graph has no nodes");
  for (auto& [a, b] : raw_edges) {
    auto ia = index.find(a), ib = index.find(b);
    if (ia == index.end()) throw ConfigError("edge references unknown node '" + a + "'");
    if (ib == index.end()) throw ConfigError("edge references unknown node '" + b + "'");
    g.edges.emplace_back(ia->second, ib->second);
  }
  g.topo_order();  // validates acyclicity
  return g;
}

OpGraph parse_graph_file(const std::string& path) {
  std::ifstream f(path);
  if (!f) throw ConfigError("cannot open graph file: " + path);
  return parse_graph(f);
}

namespace {

double node_cost(const OpNode& n, Device d) {
  if (d == Device::GPU) {
    if (!n.gpu_cost_us) throw ConfigError("node '" + n.id + "' is CPU-only but placed on GPU");
    return *n.gpu_cost_us;
  }
  return n.cpu_cost_us;
}

}  // namespace

double plan_latency(const OpGraph& g, const Placement& p, const TransferModel& t) {
  t.validate();
  if (p.device.size() != g.nodes.size()) throw ConfigError("placement size does not match graph");
  const auto order = g.topo_order();

  // group crossing edges by (producer, consumer device) for coalescing
  std::map<std::pair<std::size_t, int>, int> group_size;
  if (t.coalesce_transfers) {
    for (auto [a, b] : g.edges)
      if (p.device[a] != p.device[b]) ++group_size[{a, int(p.device[b])}];
  }
  auto edge_cost = [&](std::size_t a, std::size_t b) {
    if (p.device[a] == p.device[b]) return 0.0;
    double overhead = t.overhead_us;
    if (t.coalesce_transfers) overhead /= double(group_size.at({a, int(p.device[b])}));
    return overhead + g.nodes[a].output_bytes / t.bytes_per_us;
  };

  std::vector<std::vector<std::pair<std::size_t, std::size_t>>> incoming(g.nodes.size());
  for (auto [a, b] : g.edges) incoming[b].emplace_back(a, b);

  std::vector<double> dist(g.nodes.size(), 0);
  double best = 0;
  for (auto v : order) {
    double start = 0;
    for (auto [a, b] : incoming[v]) start = std::max(start, dist[a] + edge_cost(a, b));
    dist[v] = start + node_cost(g.nodes[v], p.device[v]);
    best = std::max(best, dist[v]);
  }
  return best;
}

namespace {

// CPU for the listed kinds, GPU elsewhere (when eligible).
Placement split_placement(const OpGraph& g, std::initializer_list<OpKind> cpu_kinds) {
  Placement p = Placement::uniform(g, Device::GPU);
  for (std::size_t i = 0; i < g.nodes.size(); ++i)
    for (auto k : cpu_kinds)
      if (g.nodes[i].kind == k) p.device[i] = Device::CPU;
  return p;
}

}  // namespace

Placement named_plan_placement(const OpGraph& g, const std::string& name) {
  if (name == "a" || name == "cpu") return Placement::uniform(g, Device::CPU);
  if (name == "b" || name == "gpu") return Placement::uniform(g, Device::GPU);
  if (name == "c") return split_placement(g, {OpKind::embedding_lookup});
  if (name == "d") return split_placement(g, {OpKind::embedding_lookup, OpKind::projection});
  if (name == "e")
    return split_placement(g, {OpKind::embedding_lookup, OpKind::projection, OpKind::feature_preprocess});
  throw ConfigError("unknown plan name: " + name);
}

std::vector<NamedPlanRow> evaluate_named_plans(const OpGraph& g, const TransferModel& t) {
  std::vector<OpKind> needed{OpKind::embedding_lookup, OpKind::projection, OpKind::feature_preprocess,
                             OpKind::transformer_encoder, OpKind::mlp_head};
  std::string missing;
  for (auto k : needed)
    if (!g.has_kind(k)) missing += std::string(missing.empty() ? "" : ", ") + to_string(k);
  if (!missing.empty()) throw ConfigError("graph lacks kinds required by named plans: " + missing);

  const OpGraph baseline_graph = g.without_kind(OpKind::transformer_encoder);
  const double base = plan_latency(baseline_graph, Placement::uniform(baseline_graph, Device::CPU), t);

  std::vector<NamedPlanRow> rows;
  rows.push_back({"baseline", "CPU ranker without the transformer", base, 0.0});
  auto add = [&](const std::string& name, const std::string& desc) {
    const double lat = plan_latency(g, named_plan_placement(g, name), t);
    rows.push_back({name, desc, lat, 100.0 * (lat - base) / base});
  };
  add("a", "CPU model");
  add("b", "GPU model");
  add("c", "consolidated ops: embedding lookup on CPU");
  add("d", "consolidated ops: lookup + projection on CPU");
  add("e", "mixed device: lookup + projection + preprocessing on CPU");
  return rows;
}

SearchResult search_placement(const OpGraph& g, const TransferModel& t, std::size_t budget) {
  std::vector<std::size_t> free_nodes;
  for (std::size_t i = 0; i < g.nodes.size(); ++i)
    if (g.nodes[i].gpu_cost_us) free_nodes.push_back(i);

  SearchResult result;
  result.placement = Placement::uniform(g, Device::CPU);
  result.latency_us = plan_latency(g, result.placement, t);

  if (free_nodes.empty()) {
    result.exhaustive = true;
    result.evaluated = 1;
    return result;
  }

  if (free_nodes.size() <= 20) {
    result.exhaustive = true;
    const std::size_t total = std::size_t(1) << free_nodes.size();
    Placement p = Placement::uniform(g, Device::CPU);
    for (std::size_t bits = 0; bits < total; ++bits) {
      if (result.evaluated >= budget) {
        result.truncated = true;
        result.exhaustive = false;
        break;
      }
      for (std::size_t j = 0; j < free_nodes.size(); ++j)
        p.device[free_nodes[j]] = (bits >> j) & 1 ? Device::GPU : Device::CPU;
      const double lat = plan_latency(g, p, t);
      ++result.evaluated;
      if (lat < result.latency_us) {
        result.latency_us = lat;
        result.placement = p;
      }
    }
    return result;
  }

  // greedy per-kind assignment, then single-node hill climbing
  Placement p = Placement::uniform(g, Device::CPU);
  for (int k = 0; k <= int(OpKind::other); ++k) {
    Placement trial = p;
    for (auto i : free_nodes)
      if (g.nodes[i].kind == OpKind(k)) trial.device[i] = Device::GPU;
    const double with_gpu = plan_latency(g, trial, t);
    const double with_cpu = plan_latency(g, p, t);
    ++result.evaluated;
    if (with_gpu < with_cpu) p = trial;
  }
  // never worse than the better uniform placement
  {
    Placement all_gpu = Placement::uniform(g, Device::GPU);
    const double lat = plan_latency(g, all_gpu, t);
    if (lat < plan_latency(g, p, t)) p = all_gpu;
  }
  double current = plan_latency(g, p, t);
  bool improved = true;
  while (improved && result.evaluated < budget) {
    improved = false;
    for (auto i : free_nodes) {
      Placement trial = p;
      trial.device[i] = trial.device[i] == Device::CPU ? Device::GPU : Device::CPU;
      const double lat = plan_latency(g, trial, t);
      ++result.evaluated;
      if (lat < current) {
        current = lat;
        p = trial;
        improved = true;
      }
      if (result.evaluated >= budget) {
        result.truncated = true;
        break;
      }
    }
  }
  result.placement = p;
  result.latency_us = current;
  return result;
}

}  // namespace dsq::serving
