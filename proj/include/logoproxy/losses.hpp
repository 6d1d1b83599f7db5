#pragma once

#include <cstddef>
#include <span>
#include <string>
#include <vector>

#include "logoproxy/linalg.hpp"

namespace logoproxy {

using Embedding = Vector;

// One learned proxy per class (static assignment), all on the sphere of
// radius `norm`. Loss functions index proxies by class position, not by id.
struct ProxySet {
  std::vector<std::string> class_ids;
  Matrix proxies;  // class_ids.size() x D
  double norm = 1.0;

  std::size_t num_classes() const { return proxies.rows; }
  std::size_t dim() const { return proxies.cols; }
  std::span<const double> proxy(std::size_t c) const { return proxies.row(c); }

  // Largest |‖p‖ - norm| / norm over all proxies.
  double max_norm_deviation() const;

  // Throws InvalidInput on shape mismatch, duplicate ids, non-positive norm,
  // or a proxy off the sphere by more than rel_tol.
  void validate(double rel_tol = 1e-6) const;
};

enum class NegativeAggregation {
  kMean,             // mean of per-negative hinges
  kSum,              // sum of per-negative hinges
  kMinDistanceOnly,  // hinge against the nearest negative proxy only
};

struct LossConfig {
  double margin = 0.2;
  NegativeAggregation aggregation = NegativeAggregation::kMean;
  // Adds the positive term to the proxy-NCA denominator. Off by default so
  // the denominator sums over negatives only.
  bool nca_include_positive = false;
};

// Loss value with gradients for the sample and for each reference point.
// grad_refs holds one entry per proxy for proxy losses (zero if the proxy
// did not contribute), {positive, negative} for triplet_loss and {other}
// for margin_loss.
struct LossResult {
  double value = 0.0;
  Vector grad_x;
  std::vector<Vector> grad_refs;
};

struct CrossEntropyResult {
  double value = 0.0;
  Vector grad_logits;
};

double euclidean_distance(std::span<const double> u, std::span<const double> v);

// [d(x,y) + M - d(x,z)]_+
LossResult triplet_loss(std::span<const double> x, std::span<const double> positive,
                        std::span<const double> negative, double margin);

// -log(exp(-d(x, p_y)) / sum_{z != y} exp(-d(x, p_z))), evaluated with a
// stable log-sum-exp.
LossResult proxy_nca_loss(std::span<const double> x, std::size_t label,
                          const ProxySet& proxies, const LossConfig& cfg = {});

// Per-negative hinges [d(x, p_y) + M - d(x, p_z)]_+ combined per
// cfg.aggregation.
LossResult proxy_triplet_loss(std::span<const double> x, std::size_t label,
                              const ProxySet& proxies, const LossConfig& cfg = {});

// [s (d(x, other) - beta) + M]_+ with s = +1 for same-class pairs, -1
// otherwise. beta is fixed.
LossResult margin_loss(std::span<const double> x, std::span<const double> other,
                       bool same_class, double margin, double beta);

CrossEntropyResult cross_entropy_loss(std::span<const double> logits, std::size_t label);

}  // namespace logoproxy
