#pragma once

#include <cstddef>
#include <span>
#include <string>
#include <vector>

#include "logoproxy/losses.hpp"

namespace logoproxy {

using Label = int;

struct AnchorEntry {
  Embedding embedding;
  Label label = 0;
  std::string source_id;
};

// Exact, immutable nearest-neighbour index. Safe to query concurrently.
class AnchorIndex {
 public:
  // Throws InvalidInput on an empty list or mixed dimensions.
  explicit AnchorIndex(std::vector<AnchorEntry> entries);

  std::size_t size() const { return entries_.size(); }
  std::size_t dim() const { return dim_; }
  const AnchorEntry& entry(std::size_t i) const { return entries_[i]; }
  const std::vector<AnchorEntry>& entries() const { return entries_; }

 private:
  std::vector<AnchorEntry> entries_;
  std::size_t dim_ = 0;
};

inline AnchorIndex build_index(std::vector<AnchorEntry> entries) {
  return AnchorIndex(std::move(entries));
}

struct Neighbor {
  std::string source_id;
  Label label = 0;
  double distance = 0.0;
  std::size_t index = 0;  // insertion position in the index

  bool operator==(const Neighbor&) const = default;
};

// The min(k, n) nearest entries by Euclidean distance, ascending; equal
// distances keep insertion order.
std::vector<Neighbor> knn(const AnchorIndex& index, std::span<const double> query, std::size_t k);

// knn for many queries, parallel over queries.
std::vector<std::vector<Neighbor>> knn_batch(const AnchorIndex& index,
                                             std::span<const Embedding> queries, std::size_t k);

std::vector<std::vector<Neighbor>> knn_batch_serial(const AnchorIndex& index,
                                                    std::span<const Embedding> queries,
                                                    std::size_t k);

struct LabeledQuery {
  Embedding embedding;
  Label label = 0;
};

// Fraction of queries whose nearest anchor carries the true label.
double top1_recall(const AnchorIndex& index, std::span<const LabeledQuery> queries);

struct Prediction {
  Label label = 0;
  double score = 0.0;  // vote fraction in (0, 1]
};

// Majority vote over the k nearest anchors. Ties go to the label with the
// smaller mean distance, then to the label seen first.
Prediction classify_topk(const AnchorIndex& index, std::span<const double> query, std::size_t k);

struct ScoredPrediction {
  double score = 0.0;
  bool correct = false;
};

struct PrPoint {
  double recall = 0.0;
  double precision = 0.0;

  bool operator==(const PrPoint&) const = default;
};

// One (recall, precision) point per distinct score, sweeping the threshold
// downwards. Throws InvalidInput if positives_total == 0.
std::vector<PrPoint> precision_recall_curve(std::span<const ScoredPrediction> predictions,
                                            std::size_t positives_total);

// Positions of the first k rows of each label, in file order (the anchor
// protocol).
std::vector<std::size_t> first_k_per_label(std::span<const Label> labels, std::size_t k);

}  // namespace logoproxy
