#include "logoproxy/retrieval.hpp"

#include <algorithm>
#include <exception>
#include <map>
#include <numeric>

#include "logoproxy/error.hpp"

namespace logoproxy {

AnchorIndex::AnchorIndex(std::vector<AnchorEntry> entries) : entries_(std::move(entries)) {
  if (entries_.empty()) throw InvalidInput("build_index: no entries");
  dim_ = entries_.front().embedding.size();
  if (dim_ == 0) throw InvalidInput("build_index: zero-dimensional embedding");
  for (std::size_t i = 0; i < entries_.size(); ++i) {
    if (entries_[i].embedding.size() != dim_) {
      throw InvalidInput("build_index: entry " + std::to_string(i) + " has dimension " +
                         std::to_string(entries_[i].embedding.size()) + ", expected " +
                         std::to_string(dim_));
    }
  }
}

std::vector<Neighbor> knn(const AnchorIndex& index, std::span<const double> query, std::size_t k) {
  if (k < 1) throw InvalidInput("knn: k must be >= 1");
  if (query.size() != index.dim()) throw InvalidInput("knn: query dimension mismatch");

  const std::size_t n = index.size();
  std::vector<double> dist(n);
  for (std::size_t i = 0; i < n; ++i) dist[i] = euclidean_distance(query, index.entry(i).embedding);

  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), 0);
  const std::size_t take = std::min(k, n);
  auto closer = [&](std::size_t a, std::size_t b) {
    return dist[a] < dist[b] || (dist[a] == dist[b] && a < b);
  };
  std::partial_sort(order.begin(), order.begin() + static_cast<std::ptrdiff_t>(take), order.end(), closer);

  std::vector<Neighbor> out;
  out.reserve(take);
  for (std::size_t r = 0; r < take; ++r) {
    const AnchorEntry& e = index.entry(order[r]);
    out.push_back({e.source_id, e.label, dist[order[r]], order[r]});
  }
  return out;
}

std::vector<std::vector<Neighbor>> knn_batch(const AnchorIndex& index,
                                             std::span<const Embedding> queries, std::size_t k) {
  std::vector<std::vector<Neighbor>> out(queries.size());
  const auto n = static_cast<std::ptrdiff_t>(queries.size());
  // Exceptions may not cross the parallel region; record the first one.
  std::exception_ptr error;
#pragma omp parallel for schedule(static)
  for (std::ptrdiff_t q = 0; q < n; ++q) {
    try {
      out[q] = knn(index, queries[q], k);
    } catch (...) {
#pragma omp critical
      if (!error) error = std::current_exception();
    }
  }
  if (error) std::rethrow_exception(error);
  return out;
}

std::vector<std::vector<Neighbor>> knn_batch_serial(const AnchorIndex& index,
                                                    std::span<const Embedding> queries,
                                                    std::size_t k) {
  std::vector<std::vector<Neighbor>> out;
  out.reserve(queries.size());
  for (const Embedding& q : queries) out.push_back(knn(index, q, k));
  return out;
}

double top1_recall(const AnchorIndex& index, std::span<const LabeledQuery> queries) {
  if (queries.empty()) throw InvalidInput("top1_recall: no queries");
  std::vector<Embedding> embeddings;
  embeddings.reserve(queries.size());
  for (const LabeledQuery& q : queries) embeddings.push_back(q.embedding);
  const auto neighbors = knn_batch(index, embeddings, 1);
  std::size_t hits = 0;
  for (std::size_t i = 0; i < queries.size(); ++i) {
    if (neighbors[i].front().label == queries[i].label) ++hits;
  }
  return static_cast<double>(hits) / static_cast<double>(queries.size());
}

Prediction classify_topk(const AnchorIndex& index, std::span<const double> query, std::size_t k) {
  const std::vector<Neighbor> nn = knn(index, query, k);
  struct Tally {
    std::size_t votes = 0;
    double distance_sum = 0.0;
    std::size_t first_seen = 0;
  };
  std::map<Label, Tally> tally;
  for (std::size_t r = 0; r < nn.size(); ++r) {
    auto [it, inserted] = tally.try_emplace(nn[r].label, Tally{0, 0.0, r});
    ++it->second.votes;
    it->second.distance_sum += nn[r].distance;
  }
  auto better = [](const Tally& a, const Tally& b) {
    if (a.votes != b.votes) return a.votes > b.votes;
    // Equal vote counts: compare mean distances via the sums.
    if (a.distance_sum != b.distance_sum) return a.distance_sum < b.distance_sum;
    return a.first_seen < b.first_seen;
  };
  auto best = tally.begin();
  for (auto it = tally.begin(); it != tally.end(); ++it) {
    if (better(it->second, best->second)) best = it;
  }
  return {best->first, static_cast<double>(best->second.votes) / static_cast<double>(nn.size())};
}

std::vector<PrPoint> precision_recall_curve(std::span<const ScoredPrediction> predictions,
                                            std::size_t positives_total) {
  if (positives_total == 0) throw InvalidInput("precision_recall_curve: no positives");
  std::vector<std::size_t> order(predictions.size());
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
    return predictions[a].score > predictions[b].score;
  });

  std::vector<PrPoint> curve;
  std::size_t tp = 0;
  for (std::size_t r = 0; r < order.size(); ++r) {
    if (predictions[order[r]].correct) ++tp;
    const bool last_of_score =
        r + 1 == order.size() || predictions[order[r + 1]].score != predictions[order[r]].score;
    if (!last_of_score) continue;
    curve.push_back({static_cast<double>(tp) / static_cast<double>(positives_total),
                     static_cast<double>(tp) / static_cast<double>(r + 1)});
  }
  return curve;
}

std::vector<std::size_t> first_k_per_label(std::span<const Label> labels, std::size_t k) {
  std::map<Label, std::size_t> taken;
  std::vector<std::size_t> out;
  for (std::size_t i = 0; i < labels.size(); ++i) {
    if (taken[labels[i]]++ < k) out.push_back(i);
  }
  return out;
}

}  // namespace logoproxy
