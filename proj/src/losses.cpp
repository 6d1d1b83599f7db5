#include "logoproxy/losses.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <set>

#include "logoproxy/error.hpp"

namespace logoproxy {

double ProxySet::max_norm_deviation() const {
  double worst = 0.0;
  for (std::size_t c = 0; c < num_classes(); ++c) {
    worst = std::max(worst, std::abs(l2_norm(proxy(c)) - norm) / norm);
  }
  return worst;
}

void ProxySet::validate(double rel_tol) const {
  if (!(norm > 0.0) || !std::isfinite(norm)) throw InvalidInput("proxy norm must be positive");
  if (class_ids.size() != proxies.rows) throw InvalidInput("one proxy per class required");
  if (proxies.data.size() != proxies.rows * proxies.cols) throw InvalidInput("proxy matrix shape");
  if (std::set<std::string>(class_ids.begin(), class_ids.end()).size() != class_ids.size()) {
    throw InvalidInput("duplicate class id in proxy set");
  }
  if (!all_finite(proxies.data)) throw InvalidInput("non-finite proxy");
  if (max_norm_deviation() > rel_tol) throw InvalidInput("proxy off the norm sphere");
}

namespace {

void require_same_dim(std::span<const double> u, std::span<const double> v) {
  if (u.size() != v.size()) {
    throw InvalidInput("dimension mismatch: " + std::to_string(u.size()) + " vs " +
                       std::to_string(v.size()));
  }
}

void require_proxy_label(std::span<const double> x, std::size_t label, const ProxySet& p) {
  if (p.num_classes() < 2) throw InvalidInput("proxy loss needs at least two classes");
  if (label >= p.num_classes()) throw InvalidInput("label outside proxy set");
  if (x.size() != p.dim()) throw InvalidInput("embedding and proxy dimensions differ");
}

// Adds scale * d(d(x, r))/dx to gx and the matching term to gr. At d == 0
// the subgradient 0 is used.
void accumulate_distance_grad(std::span<const double> x, std::span<const double> r, double d,
                              double scale, Vector& gx, Vector& gr) {
  if (d == 0.0 || scale == 0.0) return;
  for (std::size_t i = 0; i < x.size(); ++i) {
    const double g = scale * (x[i] - r[i]) / d;
    gx[i] += g;
    gr[i] -= g;
  }
}

std::vector<double> proxy_distances(std::span<const double> x, const ProxySet& p) {
  std::vector<double> d(p.num_classes());
  for (std::size_t c = 0; c < d.size(); ++c) d[c] = euclidean_distance(x, p.proxy(c));
  return d;
}

LossResult zero_result(std::size_t dim, std::size_t refs) {
  LossResult r;
  r.grad_x.assign(dim, 0.0);
  r.grad_refs.assign(refs, Vector(dim, 0.0));
  return r;
}

}  // namespace

double euclidean_distance(std::span<const double> u, std::span<const double> v) {
  require_same_dim(u, v);
  double s = 0.0;
  for (std::size_t i = 0; i < u.size(); ++i) {
    const double t = u[i] - v[i];
    s += t * t;
  }
  return std::sqrt(s);
}

LossResult triplet_loss(std::span<const double> x, std::span<const double> positive,
                        std::span<const double> negative, double margin) {
  require_same_dim(x, positive);
  require_same_dim(x, negative);
  LossResult r = zero_result(x.size(), 2);
  const double d_pos = euclidean_distance(x, positive);
  const double d_neg = euclidean_distance(x, negative);
  const double h = d_pos + margin - d_neg;
  if (h <= 0.0) return r;
  r.value = h;
  accumulate_distance_grad(x, positive, d_pos, 1.0, r.grad_x, r.grad_refs[0]);
  accumulate_distance_grad(x, negative, d_neg, -1.0, r.grad_x, r.grad_refs[1]);
  return r;
}

LossResult proxy_nca_loss(std::span<const double> x, std::size_t label,
                          const ProxySet& proxies, const LossConfig& cfg) {
  require_proxy_label(x, label, proxies);
  const std::size_t k = proxies.num_classes();
  const std::vector<double> d = proxy_distances(x, proxies);

  // Log-sum-exp of -d over the denominator set, shifted by its maximum.
  auto in_denominator = [&](std::size_t c) { return c != label || cfg.nca_include_positive; };
  double shift = -std::numeric_limits<double>::infinity();
  for (std::size_t c = 0; c < k; ++c) {
    if (in_denominator(c)) shift = std::max(shift, -d[c]);
  }
  double sum = 0.0;
  for (std::size_t c = 0; c < k; ++c) {
    if (in_denominator(c)) sum += std::exp(-d[c] - shift);
  }
  const double lse = shift + std::log(sum);

  LossResult r = zero_result(x.size(), k);
  r.value = d[label] + lse;
  // dL/dd_c = [c == y] - softmax_c over the denominator set.
  for (std::size_t c = 0; c < k; ++c) {
    double coeff = c == label ? 1.0 : 0.0;
    if (in_denominator(c)) coeff -= std::exp(-d[c] - lse);
    accumulate_distance_grad(x, proxies.proxy(c), d[c], coeff, r.grad_x, r.grad_refs[c]);
  }
  return r;
}

LossResult proxy_triplet_loss(std::span<const double> x, std::size_t label,
                              const ProxySet& proxies, const LossConfig& cfg) {
  require_proxy_label(x, label, proxies);
  if (cfg.margin < 0.0) throw InvalidInput("margin must be >= 0");
  const std::size_t k = proxies.num_classes();
  const std::vector<double> d = proxy_distances(x, proxies);
  LossResult r = zero_result(x.size(), k);

  // coeff[c] is dL/dd_c.
  std::vector<double> coeff(k, 0.0);
  switch (cfg.aggregation) {
    case NegativeAggregation::kMean:
    case NegativeAggregation::kSum: {
      const double weight = cfg.aggregation == NegativeAggregation::kMean
                                ? 1.0 / static_cast<double>(k - 1)
                                : 1.0;
      double total = 0.0;
      for (std::size_t z = 0; z < k; ++z) {
        if (z == label) continue;
        const double h = d[label] + cfg.margin - d[z];
        if (h > 0.0) {
          total += h;
          coeff[label] += weight;
          coeff[z] -= weight;
        }
      }
      r.value = total * weight;
      break;
    }
    case NegativeAggregation::kMinDistanceOnly: {
      std::size_t nearest = label == 0 ? 1 : 0;
      for (std::size_t z = 0; z < k; ++z) {
        if (z != label && d[z] < d[nearest]) nearest = z;
      }
      const double h = d[label] + cfg.margin - d[nearest];
      if (h > 0.0) {
        r.value = h;
        coeff[label] = 1.0;
        coeff[nearest] = -1.0;
      }
      break;
    }
  }
  for (std::size_t c = 0; c < k; ++c) {
    accumulate_distance_grad(x, proxies.proxy(c), d[c], coeff[c], r.grad_x, r.grad_refs[c]);
  }
  return r;
}

LossResult margin_loss(std::span<const double> x, std::span<const double> other,
                       bool same_class, double margin, double beta) {
  require_same_dim(x, other);
  if (!(beta > 0.0)) throw InvalidInput("margin_loss: beta must be positive");
  LossResult r = zero_result(x.size(), 1);
  const double d = euclidean_distance(x, other);
  const double s = same_class ? 1.0 : -1.0;
  const double h = s * (d - beta) + margin;
  if (h <= 0.0) return r;
  r.value = h;
  accumulate_distance_grad(x, other, d, s, r.grad_x, r.grad_refs[0]);
  return r;
}

CrossEntropyResult cross_entropy_loss(std::span<const double> logits, std::size_t label) {
  if (logits.empty()) throw InvalidInput("cross_entropy_loss: empty logits");
  if (label >= logits.size()) throw InvalidInput("cross_entropy_loss: label out of range");
  const double shift = *std::max_element(logits.begin(), logits.end());
  double sum = 0.0;
  for (double z : logits) sum += std::exp(z - shift);
  const double log_sum = std::log(sum);
  const double lse = shift + log_sum;

  CrossEntropyResult r;
  r.value = (shift - logits[label]) + log_sum;
  r.grad_logits.resize(logits.size());
  for (std::size_t c = 0; c < logits.size(); ++c) {
    r.grad_logits[c] = std::exp(logits[c] - lse) - (c == label ? 1.0 : 0.0);
  }
  return r;
}

}  // namespace logoproxy
