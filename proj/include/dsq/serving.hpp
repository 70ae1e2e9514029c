#pragma once

#include <cstdint>
#include <iosfwd>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "dsq/tensor.hpp"

// Serving-latency cost model: a DAG of operators with per-device costs,
// transfer-aware critical-path latency, the five named placement strategies,
// and exhaustive/greedy placement search.

namespace dsq::serving {

enum class OpKind : int {
  embedding_lookup = 0,
  projection = 1,
  feature_preprocess = 2,
  transformer_encoder = 3,
  mlp_head = 4,
  other = 5,
};

const char* to_string(OpKind k);
OpKind op_kind_from_string(const std::string& s);

enum class Device : int { CPU = 0, GPU = 1 };

inline const char* to_string(Device d) { return d == Device::CPU ? "CPU" : "GPU"; }

struct OpNode {
  std::string id;
  OpKind kind = OpKind::other;
  double cpu_cost_us = 0;
  std::optional<double> gpu_cost_us;  // absent -> CPU-only
  double output_bytes = 0;
};

struct OpGraph {
  std::vector<OpNode> nodes;
  std::vector<std::pair<std::size_t, std::size_t>> edges;  // producer -> consumer

  std::size_t index_of(const std::string& id) const;
  bool has_kind(OpKind k) const;
  // Contract away every node of the given kind, bridging predecessors to
  // successors; used for the no-transformer baseline.
  OpGraph without_kind(OpKind k) const;
  // Topological order; throws naming a cycle member if the graph is cyclic.
  std::vector<std::size_t> topo_order() const;
};

struct Placement {
  std::vector<Device> device;  // by node index

  static Placement uniform(const OpGraph& g, Device d);
};

struct TransferModel {
  double overhead_us = 40.0;
  double bytes_per_us = 1000.0;
  // when true, crossing edges that share a producer split one overhead
  bool coalesce_transfers = true;

  void validate() const {
    if (overhead_us < 0) throw ConfigError("transfer overhead must be nonnegative");
    if (bytes_per_us <= 0) throw ConfigError("transfer bandwidth must be positive");
  }
};

// Line format: `node <id> <kind> <cpu_us> <gpu_us|-> <out_bytes>` and
// `edge <src> <dst>`; '#' starts a comment.
OpGraph parse_graph(std::istream& in);
OpGraph parse_graph_file(const std::string& path);

// Transfer-aware critical path: node weight = cost on its device, each
// device-crossing edge adds overhead plus bytes/bandwidth.
double plan_latency(const OpGraph& g, const Placement& p, const TransferModel& t);

struct NamedPlanRow {
  std::string name;
  std::string description;
  double latency_us = 0;
  double increase_pct = 0;  // vs the no-transformer all-CPU baseline
};

// Baseline plus rows (a')-(e): all-CPU, all-GPU, and the three consolidation
// stages keeping lookup / +projection / +preprocessing on CPU.
std::vector<NamedPlanRow> evaluate_named_plans(const OpGraph& g, const TransferModel& t);

// The placement pattern behind a named row, for comparing against search.
Placement named_plan_placement(const OpGraph& g, const std::string& name);

struct SearchResult {
  Placement placement;
  double latency_us = 0;
  bool exhaustive = false;
  bool truncated = false;
  std::size_t evaluated = 0;
};

// Exhaustive over eligible assignments up to 20 free nodes (or budget),
// otherwise greedy per-kind assignment plus single-node hill climbing.
SearchResult search_placement(const OpGraph& g, const TransferModel& t, std::size_t budget = 1u << 22);

}  // namespace dsq::serving
