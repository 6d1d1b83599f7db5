#include "logoproxy/consolidation.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <map>

#include "logoproxy/error.hpp"
#include "logoproxy/random.hpp"

namespace logoproxy {

void ConsolidationConfig::validate() const {
  if (!(eps > 0.0 && eps < 1.0)) throw InvalidInput("eps must lie in (0, 1)");
  if (min_samples < 1) throw InvalidInput("min_samples must be >= 1");
  if (!(whole_image_iou > 0.0 && whole_image_iou <= 1.0)) {
    throw InvalidInput("whole_image_iou must lie in (0, 1]");
  }
}

ConsolidationStats& ConsolidationStats::operator+=(const ConsolidationStats& o) {
  input_boxes += o.input_boxes;
  invalid_boxes += o.invalid_boxes;
  noise_points += o.noise_points;
  clusters += o.clusters;
  removed_whole_image += o.removed_whole_image;
  removed_low_support += o.removed_low_support;
  removed_degenerate += o.removed_degenerate;
  return *this;
}

NoLogoFilterResult filter_no_logo(std::vector<ImageRecord> images,
                                  std::size_t threshold) {
  NoLogoFilterResult out;
  for (ImageRecord& rec : images) {
    const auto votes = std::count_if(
        rec.annotations.begin(), rec.annotations.end(),
        [](const WorkerAnnotation& a) { return a.logo_label == LogoLabel::kNoLogo; });
    if (static_cast<std::size_t>(votes) > threshold) {
      out.dropped.push_back(std::move(rec));
    } else {
      out.kept.push_back(std::move(rec));
    }
  }
  return out;
}

std::vector<int> dbscan(const DistanceMatrix& dist, double eps,
                        std::size_t min_samples) {
  if (!(eps > 0.0 && eps < 1.0)) throw InvalidInput("dbscan: eps must lie in (0, 1)");
  if (min_samples < 1) throw InvalidInput("dbscan: min_samples must be >= 1");

  constexpr int kUnvisited = -2;
  const std::size_t n = dist.size();

  std::vector<std::vector<std::size_t>> neighbors(n);
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t j = 0; j < n; ++j) {
      if (dist(i, j) <= eps) neighbors[i].push_back(j);
    }
  }
  auto is_core = [&](std::size_t i) { return neighbors[i].size() >= min_samples; };

  std::vector<int> labels(n, kUnvisited);
  int next_label = 0;
  std::vector<std::size_t> frontier;
  for (std::size_t i = 0; i < n; ++i) {
    if (labels[i] != kUnvisited) continue;
    if (!is_core(i)) {
      labels[i] = kNoise;  // may still be claimed as a border point later
      continue;
    }
    const int label = next_label++;
    labels[i] = label;
    frontier.assign(neighbors[i].begin(), neighbors[i].end());
    while (!frontier.empty()) {
      const std::size_t q = frontier.back();
      frontier.pop_back();
      if (labels[q] == kNoise) {
        labels[q] = label;  // border point
        continue;
      }
      if (labels[q] != kUnvisited) continue;
      labels[q] = label;
      if (is_core(q)) {
        for (std::size_t r : neighbors[q]) {
          if (labels[r] == kUnvisited || labels[r] == kNoise) frontier.push_back(r);
        }
      }
    }
  }
  return labels;
}

Box merge_cluster(std::span<const Box> members) {
  if (members.empty()) throw InvalidInput("merge_cluster: empty cluster");
  auto lower_median = [&](double Box::*coord) {
    std::vector<double> v;
    v.reserve(members.size());
    for (const Box& b : members) v.push_back(b.*coord);
    const std::size_t mid = (v.size() - 1) / 2;
    std::nth_element(v.begin(), v.begin() + mid, v.end());
    return v[mid];
  };
  const Box merged{lower_median(&Box::x_min), lower_median(&Box::y_min),
                   lower_median(&Box::x_max), lower_median(&Box::y_max)};
  if (!merged.valid()) throw MergeDegenerate("merge_cluster: median box is degenerate");
  return merged;
}

std::vector<ConsensusBox> consolidate_image(const ImageRecord& rec,
                                            const ConsolidationConfig& cfg,
                                            ConsolidationStats* stats) {
  cfg.validate();
  ConsolidationStats local;
  std::vector<ConsensusBox> out;

  std::vector<Box> boxes;
  for (const WorkerAnnotation& a : rec.annotations) {
    if (a.logo_label == LogoLabel::kNoLogo || !a.box) continue;
    ++local.input_boxes;
    const Box b = a.box->clamped(rec.width, rec.height);
    if (b.valid()) {
      boxes.push_back(b);
    } else {
      ++local.invalid_boxes;
    }
  }

  if (!boxes.empty()) {
    const std::vector<int> labels =
        dbscan(pairwise_distances_serial(boxes), cfg.eps, cfg.min_samples);
    const int num_clusters = labels.empty() ? 0 : *std::max_element(labels.begin(), labels.end()) + 1;
    local.clusters = static_cast<std::size_t>(num_clusters);
    local.noise_points = static_cast<std::size_t>(std::count(labels.begin(), labels.end(), kNoise));

    std::vector<std::vector<Box>> members(static_cast<std::size_t>(num_clusters));
    for (std::size_t i = 0; i < boxes.size(); ++i) {
      if (labels[i] != kNoise) members[static_cast<std::size_t>(labels[i])].push_back(boxes[i]);
    }

    const Box image = Box::image_rect(rec.width, rec.height);
    for (int c = 0; c < num_clusters; ++c) {
      const auto& group = members[static_cast<std::size_t>(c)];
      Box merged;
      try {
        merged = merge_cluster(group);
      } catch (const MergeDegenerate&) {
        ++local.removed_degenerate;
        continue;
      }
      if (iou(merged, image) > cfg.whole_image_iou) {
        ++local.removed_whole_image;
        continue;
      }
      if (group.size() < cfg.min_cluster_support) {
        ++local.removed_low_support;
        continue;
      }
      out.push_back({rec.image_id, merged, group.size(), c});
    }
    std::stable_sort(out.begin(), out.end(), [](const ConsensusBox& a, const ConsensusBox& b) {
      return a.support > b.support;
    });
  }

  if (stats != nullptr) *stats = local;
  return out;
}

std::vector<ImageConsolidation> consolidate_all(std::span<const ImageRecord> images,
                                                const ConsolidationConfig& cfg) {
  cfg.validate();
  std::vector<ImageConsolidation> out(images.size());
  const auto n = static_cast<std::ptrdiff_t>(images.size());
#pragma omp parallel for schedule(dynamic, 16)
  for (std::ptrdiff_t i = 0; i < n; ++i) {
    out[i].boxes = consolidate_image(images[i], cfg, &out[i].stats);
  }
  return out;
}

std::vector<ImageConsolidation> consolidate_all_serial(
    std::span<const ImageRecord> images, const ConsolidationConfig& cfg) {
  cfg.validate();
  std::vector<ImageConsolidation> out(images.size());
  for (std::size_t i = 0; i < images.size(); ++i) {
    out[i].boxes = consolidate_image(images[i], cfg, &out[i].stats);
  }
  return out;
}

DatasetSplit split_dataset(std::span<const ImageRecord> images,
                           SplitFractions fractions, std::uint64_t seed) {
  const double frac[3] = {fractions.train, fractions.val, fractions.test};
  for (double f : frac) {
    if (!(f >= 0.0) || !std::isfinite(f)) throw InvalidInput("split fractions must be >= 0");
  }
  if (std::abs(frac[0] + frac[1] + frac[2] - 1.0) > 1e-9) {
    throw InvalidInput("split fractions must sum to 1");
  }

  std::map<std::string, std::size_t> brand_sizes;
  for (const ImageRecord& rec : images) ++brand_sizes[rec.brand];

  std::vector<std::size_t> active;  // splits with a nonzero target
  for (std::size_t s = 0; s < 3; ++s) {
    if (frac[s] > 0.0) active.push_back(s);
  }
  if (brand_sizes.size() < active.size()) {
    throw InsufficientBrands("split_dataset: " + std::to_string(brand_sizes.size()) +
                             " brands for " + std::to_string(active.size()) +
                             " nonempty splits");
  }

  std::vector<std::string> brands;
  brands.reserve(brand_sizes.size());
  for (const auto& [brand, count] : brand_sizes) brands.push_back(brand);
  Rng rng(seed);
  seeded_shuffle(brands, rng);

  const double total = static_cast<double>(images.size());
  double assigned[3] = {0.0, 0.0, 0.0};
  std::size_t brand_count[3] = {0, 0, 0};
  std::map<std::string, std::size_t> brand_split;
  for (std::size_t b = 0; b < brands.size(); ++b) {
    std::size_t empty_active = 0;
    for (std::size_t s : active) empty_active += brand_count[s] == 0 ? 1 : 0;

    std::size_t target = active.front();
    if (brands.size() - b <= empty_active) {
      // Just enough brands left to give every remaining split one.
      for (std::size_t s : active) {
        if (brand_count[s] == 0) {
          target = s;
          break;
        }
      }
    } else {
      double best = -std::numeric_limits<double>::infinity();
      for (std::size_t s : active) {
        const double deficit = frac[s] * total - assigned[s];
        if (deficit > best) {
          best = deficit;
          target = s;
        }
      }
    }
    brand_split[brands[b]] = target;
    assigned[target] += static_cast<double>(brand_sizes[brands[b]]);
    ++brand_count[target];
  }

  DatasetSplit out;
  std::vector<ImageRecord>* dest[3] = {&out.train, &out.val, &out.test};
  for (const ImageRecord& rec : images) dest[brand_split.at(rec.brand)]->push_back(rec);
  return out;
}

}  // namespace logoproxy
