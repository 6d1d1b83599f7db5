#pragma once

#include <cstddef>
#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "logoproxy/geometry.hpp"

namespace logoproxy {

enum class LogoLabel { kNoLogo, kOneLogo, kMultipleLogo };

// One worker's answer for one image. box is present iff the label is not
// kNoLogo.
struct WorkerAnnotation {
  std::string image_id;
  std::string worker_id;
  LogoLabel logo_label = LogoLabel::kNoLogo;
  std::optional<Box> box;
};

struct ImageRecord {
  std::string image_id;
  std::string brand;
  double width = 0.0;
  double height = 0.0;
  std::vector<WorkerAnnotation> annotations;
};

struct ConsensusBox {
  std::string image_id;
  Box box;
  std::size_t support = 0;
  int cluster_id = 0;

  bool operator==(const ConsensusBox&) const = default;
};

struct ConsolidationConfig {
  double eps = 0.6;
  std::size_t min_samples = 1;
  double whole_image_iou = 0.65;
  std::size_t no_logo_vote_threshold = 3;
  std::size_t min_cluster_support = 1;

  // Throws InvalidInput unless 0 < eps < 1, min_samples >= 1 and
  // 0 < whole_image_iou <= 1.
  void validate() const;
};

struct NoLogoFilterResult {
  std::vector<ImageRecord> kept;
  std::vector<ImageRecord> dropped;
};

// Keeps an image iff at most `threshold` workers voted NO_LOGO. Order is
// preserved in both outputs.
NoLogoFilterResult filter_no_logo(std::vector<ImageRecord> images,
                                  std::size_t threshold);

inline constexpr int kNoise = -1;

// DBSCAN over a precomputed metric. A point is core iff at least min_samples
// points (itself included) lie within eps. Cluster labels are 0..k-1 in
// order of their first member by index; unreachable non-core points are
// kNoise.
std::vector<int> dbscan(const DistanceMatrix& dist, double eps,
                        std::size_t min_samples);

// Coordinate-wise (lower) median of the member boxes.
// Throws InvalidInput on an empty list, MergeDegenerate if the median box
// has non-positive area.
Box merge_cluster(std::span<const Box> members);

// What happened to each annotation box and cluster of one image.
struct ConsolidationStats {
  std::size_t input_boxes = 0;
  std::size_t invalid_boxes = 0;  // degenerate after clamping to the image
  std::size_t noise_points = 0;
  std::size_t clusters = 0;
  std::size_t removed_whole_image = 0;
  std::size_t removed_low_support = 0;
  std::size_t removed_degenerate = 0;

  ConsolidationStats& operator+=(const ConsolidationStats& o);
  bool operator==(const ConsolidationStats&) const = default;
};

// Boxes -> IoU distances -> DBSCAN -> median merge -> support and
// whole-image filters. Annotation boxes are clamped to the image first.
// Output is sorted by support, descending (ties keep cluster order).
//
// The whole-image rule is checked before the support rule. Both are pure
// filters so the surviving set does not depend on the order; only the
// attribution in `stats` does.
std::vector<ConsensusBox> consolidate_image(const ImageRecord& rec,
                                            const ConsolidationConfig& cfg,
                                            ConsolidationStats* stats = nullptr);

struct ImageConsolidation {
  std::vector<ConsensusBox> boxes;
  ConsolidationStats stats;

  bool operator==(const ImageConsolidation&) const = default;
};

// consolidate_image over many images, parallel over images. Output order
// follows input order.
std::vector<ImageConsolidation> consolidate_all(std::span<const ImageRecord> images,
                                                const ConsolidationConfig& cfg);

std::vector<ImageConsolidation> consolidate_all_serial(
    std::span<const ImageRecord> images, const ConsolidationConfig& cfg);

struct SplitFractions {
  double train = 0.8;
  double val = 0.0;
  double test = 0.2;
};

struct DatasetSplit {
  std::vector<ImageRecord> train;
  std::vector<ImageRecord> val;
  std::vector<ImageRecord> test;
};

// Brand-disjoint split. Brands are visited in a seeded shuffle of their
// sorted order and each goes to the split furthest below its target image
// count. Splits with a zero fraction receive nothing. Throws
// InsufficientBrands if there are fewer brands than nonzero splits.
DatasetSplit split_dataset(std::span<const ImageRecord> images,
                           SplitFractions fractions, std::uint64_t seed);

}  // namespace logoproxy
