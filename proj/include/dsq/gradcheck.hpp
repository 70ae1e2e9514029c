#pragma once

#include <cmath>
#include <functional>
#include <map>
#include <string>
#include <utility>
#include <vector>

#include "dsq/param_store.hpp"
#include "dsq/rng.hpp"
#include "dsq/tape.hpp"

namespace dsq {

struct GradCheckReport {
  double max_rel_err = 0.0;
  std::string worst_param;
  std::size_t worst_coord = 0;
  double worst_analytic = 0.0;
  double worst_numeric = 0.0;
  std::size_t coords_checked = 0;
  std::map<std::string, double> per_param_max;

  bool pass(double tolerance) const { return max_rel_err < tolerance; }
};

// Central-difference check of reverse-mode gradients, 64-bit only. Checks
// every coordinate when the total fits in max_coords, otherwise a seeded
// subsample (at least min_coords). loss_fn must rebuild the forward pass from
// current parameter values; it receives a tape for the analytic pass and
// nullptr for finite-difference evaluations.
inline GradCheckReport grad_check(ParamStore<double>& params,
                                  const std::function<Tensor<double>(Tape<double>*)>& loss_fn,
                                  double epsilon = 1e-5, std::size_t max_coords = 4096,
                                  std::uint64_t seed = 0, std::size_t min_coords = 200) {
  Tape<double> tape;
  params.zero_grads();
  Tensor<double> loss = loss_fn(&tape);
  if (!std::isfinite(double(loss.at(0)))) throw NumericError("grad_check: non-finite loss in analytic pass");
  tape.backward(loss);

  std::map<std::string, std::vector<double>> analytic;
  for (auto& [name, p] : params) analytic[name] = p.grad();

  std::vector<std::pair<std::string, std::size_t>> coords;
  coords.reserve(params.coord_count());
  for (auto& [name, p] : params)
    for (std::size_t i = 0; i < p.size(); ++i) coords.emplace_back(name, i);
  if (coords.size() > max_coords) {
    Rng rng(mix_seed(seed, "gradcheck"));
    rng.shuffle(coords);
    coords.resize(std::max(min_coords, max_coords));
  }

  GradCheckReport report;
  report.coords_checked = coords.size();
  for (const auto& [name, i] : coords) {
    Tensor<double>& p = params.get(name);
    const double saved = p.at(i);
    p.at(i) = saved + epsilon;
    const double up = double(loss_fn(nullptr).at(0));
    p.at(i) = saved - epsilon;
    const double dn = double(loss_fn(nullptr).at(0));
    p.at(i) = saved;
    if (!std::isfinite(up) || !std::isfinite(dn))
      throw NumericError("grad_check: non-finite loss while perturbing " + name + "[" + std::to_string(i) + "]");
    const double numeric = (up - dn) / (2.0 * epsilon);
    const double a = analytic[name][i];
    const double rel = std::abs(a - numeric) / std::max({std::abs(a), std::abs(numeric), 1e-6});
    double& pm = report.per_param_max[name];
    pm = std::max(pm, rel);
    if (rel > report.max_rel_err) {
      report.max_rel_err = rel;
      report.worst_param = name;
      report.worst_coord = i;
      report.worst_analytic = a;
      report.worst_numeric = numeric;
    }
  }
  return report;
}

}  // namespace dsq
