#include "dsq/evaluation.hpp"

#include <algorithm>
#include <numeric>

namespace dsq::eval {

double recall_at_k(const std::vector<double>& user_embedding, const std::set<std::int64_t>& positives,
                   const Tensor<double>& pin_index, std::size_t k) {
  if (pin_index.size() == 0) throw ConfigError("recall_at_k: empty pin index");
  const std::size_t n = pin_index.shape()[0];
  const std::size_t d = pin_index.shape()[1];
  if (user_embedding.size() != d)
    throw ShapeError("recall_at_k: embedding width " + std::to_string(user_embedding.size()) +
                     " vs index " + pin_index.shape_string());
  if (positives.empty()) throw ConfigError("recall_at_k: empty positive set");

  std::vector<std::pair<double, std::int64_t>> scored(n);
  for (std::size_t i = 0; i < n; ++i) {
    double dot = 0;
    for (std::size_t j = 0; j < d; ++j) dot += user_embedding[j] * pin_index.at(i, j);
    scored[i] = {-dot, std::int64_t(i)};
  }
  const std::size_t kk = std::min(k, n);
  std::partial_sort(scored.begin(), scored.begin() + std::ptrdiff_t(kk), scored.end());
  std::size_t hits = 0;
  for (std::size_t i = 0; i < kk; ++i)
    if (positives.count(scored[i].second)) ++hits;
  return double(hits) / double(std::min(k, positives.size()));
}

double auc(const std::vector<double>& scores, const std::vector<int>& labels) {
  if (scores.size() != labels.size()) throw ShapeError("auc: scores and labels differ in length");
  std::size_t n_pos = 0, n_neg = 0;
  for (int l : labels) (l ? n_pos : n_neg)++;
  if (n_pos == 0 || n_neg == 0) throw ConfigError("auc undefined: both classes must be present");

  // midrank statistic: AUC = (sum of positive ranks - n_pos(n_pos+1)/2) / (n_pos n_neg)
  std::vector<std::size_t> order(scores.size());
  std::iota(order.begin(), order.end(), 0);
  std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return scores[a] < scores[b]; });
  std::vector<double> rank(scores.size());
  std::size_t i = 0;
  while (i < order.size()) {
    std::size_t j = i;
    while (j + 1 < order.size() && scores[order[j + 1]] == scores[order[i]]) ++j;
    const double mid = 0.5 * double(i + j) + 1.0;  // 1-based midrank
    for (std::size_t t = i; t <= j; ++t) rank[order[t]] = mid;
    i = j + 1;
  }
  double pos_rank_sum = 0;
  for (std::size_t t = 0; t < labels.size(); ++t)
    if (labels[t]) pos_rank_sum += rank[t];
  return (pos_rank_sum - 0.5 * double(n_pos) * double(n_pos + 1)) / (double(n_pos) * double(n_neg));
}

}  // namespace dsq::eval
