#pragma once

#include <cstddef>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "logoproxy/geometry.hpp"

namespace logoproxy {

struct Detection {
  std::string image_id;
  Box box;
  double score = 0.0;
  std::optional<std::string> class_label;
};

struct GroundTruthBox {
  std::string image_id;
  Box box;
  std::optional<std::string> class_label;
};

// Per-detection and per-GT outcome of match_detections, indexed like the
// inputs.
struct MatchResult {
  std::vector<bool> is_tp;                         // per detection
  std::vector<std::optional<std::size_t>> matched_gt;  // per detection
  std::vector<bool> gt_matched;                    // per ground-truth box

  std::size_t num_tp() const;
  std::size_t num_fp() const { return is_tp.size() - num_tp(); }
  std::size_t num_gt_matched() const;
};

// Greedy VOC-style matching within each image: detections in descending
// score order (ties keep input order) take the still-unmatched GT of highest
// IoU, provided that IoU is strictly above iou_threshold; otherwise they are
// false positives. Class labels are ignored here.
MatchResult match_detections(std::span<const Detection> dets, std::span<const GroundTruthBox> gts,
                             double iou_threshold = 0.5);

// Matched GT / total GT. Throws InvalidInput when there is no GT.
double recall(const MatchResult& match);

struct RankedOutcome {
  double score = 0.0;
  bool is_tp = false;
};

// All-point average precision: mean over GT of the precision at the rank of
// each TP (unmatched GT contribute 0).
double average_precision(std::span<const RankedOutcome> ranked, std::size_t total_gt);

// Convenience: pairs each detection's score with its match flag.
std::vector<RankedOutcome> ranked_outcomes(std::span<const Detection> dets, const MatchResult& match);

struct FrocPoint {
  double threshold = 0.0;
  double avg_false_positives_per_image = 0.0;
  double recall = 0.0;

  bool operator==(const FrocPoint&) const = default;
};

// For each threshold t (descending), matches the detections with score >= t
// and reports FP / image count and recall. The image count covers every
// image id appearing in gts, dets or extra_image_ids (e.g. a negative set).
std::vector<FrocPoint> froc_curve(std::span<const Detection> dets, std::span<const GroundTruthBox> gts,
                                  std::span<const double> thresholds, double iou_threshold = 0.5,
                                  std::span<const std::string> extra_image_ids = {});

// Distinct detection scores, descending; the natural FROC sweep.
std::vector<double> score_thresholds(std::span<const Detection> dets);

std::size_t count_negative_detections(std::span<const Detection> dets,
                                      std::span<const std::string> negative_image_ids,
                                      double threshold);

struct EndToEndResult {
  std::map<std::string, double> per_class_ap;
  double mean_ap = 0.0;
};

struct EndToEndOptions {
  double iou_threshold = 0.5;
  // Drops detections scoring below this before matching. Off by default.
  std::optional<double> min_score;
};

// Class-wise AP over classes with at least one GT box, and their unweighted
// mean. Detections are matched only against GT of their own class;
// detections without a label, or labelled with a class that has no GT, are
// ignored. Throws InvalidInput if no GT box carries a class label.
EndToEndResult end_to_end_map(std::span<const Detection> dets, std::span<const GroundTruthBox> gts,
                              const EndToEndOptions& opts = {});

// Score of a recognised detection: detector confidence x k-NN vote fraction.
inline double compose_score(double detector_score, double vote_score) {
  return detector_score * vote_score;
}

}  // namespace logoproxy
