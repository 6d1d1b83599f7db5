#include "logoproxy/detection_eval.hpp"

#include <algorithm>
#include <numeric>
#include <set>
#include <unordered_map>

#include "logoproxy/error.hpp"

namespace logoproxy {

std::size_t MatchResult::num_tp() const {
  return static_cast<std::size_t>(std::count(is_tp.begin(), is_tp.end(), true));
}

std::size_t MatchResult::num_gt_matched() const {
  return static_cast<std::size_t>(std::count(gt_matched.begin(), gt_matched.end(), true));
}

MatchResult match_detections(std::span<const Detection> dets, std::span<const GroundTruthBox> gts,
                             double iou_threshold) {
  if (!(iou_threshold > 0.0 && iou_threshold <= 1.0)) {
    throw InvalidInput("match_detections: iou_threshold must lie in (0, 1]");
  }
  MatchResult m;
  m.is_tp.assign(dets.size(), false);
  m.matched_gt.assign(dets.size(), std::nullopt);
  m.gt_matched.assign(gts.size(), false);

  std::unordered_map<std::string, std::vector<std::size_t>> gt_by_image;
  for (std::size_t g = 0; g < gts.size(); ++g) gt_by_image[gts[g].image_id].push_back(g);

  std::vector<std::size_t> order(dets.size());
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(),
                   [&](std::size_t a, std::size_t b) { return dets[a].score > dets[b].score; });

  // Images are independent, so one global score-ordered pass is equivalent
  // to per-image passes.
  for (std::size_t d : order) {
    auto it = gt_by_image.find(dets[d].image_id);
    if (it == gt_by_image.end()) continue;
    double best_iou = -1.0;
    std::optional<std::size_t> best;
    for (std::size_t g : it->second) {
      if (m.gt_matched[g]) continue;
      const double v = iou(dets[d].box, gts[g].box);
      if (v > best_iou) {
        best_iou = v;
        best = g;
      }
    }
    if (best && best_iou > iou_threshold) {
      m.is_tp[d] = true;
      m.matched_gt[d] = best;
      m.gt_matched[*best] = true;
    }
  }
  return m;
}

double recall(const MatchResult& match) {
  if (match.gt_matched.empty()) throw InvalidInput("recall: no ground truth");
  return static_cast<double>(match.num_gt_matched()) / static_cast<double>(match.gt_matched.size());
}

double average_precision(std::span<const RankedOutcome> ranked, std::size_t total_gt) {
  if (total_gt == 0) throw InvalidInput("average_precision: no ground truth");
  std::vector<std::size_t> order(ranked.size());
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(),
                   [&](std::size_t a, std::size_t b) { return ranked[a].score > ranked[b].score; });
  // Sum precision at each TP in extended precision and divide once, so the
  // result is the double nearest the exact rational in textbook cases.
  long double precision_sum = 0.0L;
  std::size_t tp = 0;
  for (std::size_t r = 0; r < order.size(); ++r) {
    if (!ranked[order[r]].is_tp) continue;
    ++tp;
    precision_sum += static_cast<long double>(tp) / static_cast<long double>(r + 1);
  }
  return static_cast<double>(precision_sum / static_cast<long double>(total_gt));
}

std::vector<RankedOutcome> ranked_outcomes(std::span<const Detection> dets, const MatchResult& match) {
  std::vector<RankedOutcome> out;
  out.reserve(dets.size());
  for (std::size_t i = 0; i < dets.size(); ++i) out.push_back({dets[i].score, match.is_tp[i]});
  return out;
}

std::vector<FrocPoint> froc_curve(std::span<const Detection> dets, std::span<const GroundTruthBox> gts,
                                  std::span<const double> thresholds, double iou_threshold,
                                  std::span<const std::string> extra_image_ids) {
  if (thresholds.empty()) throw InvalidInput("froc_curve: empty threshold list");
  if (gts.empty()) throw InvalidInput("froc_curve: no ground truth");
  std::set<std::string> images(extra_image_ids.begin(), extra_image_ids.end());
  for (const auto& g : gts) images.insert(g.image_id);
  for (const auto& d : dets) images.insert(d.image_id);
  const double num_images = static_cast<double>(images.size());

  std::vector<FrocPoint> curve;
  curve.reserve(thresholds.size());
  std::vector<Detection> kept;
  for (double t : thresholds) {
    kept.clear();
    for (const Detection& d : dets) {
      if (d.score >= t) kept.push_back(d);
    }
    const MatchResult m = match_detections(kept, gts, iou_threshold);
    curve.push_back({t, static_cast<double>(m.num_fp()) / num_images, recall(m)});
  }
  return curve;
}

std::vector<double> score_thresholds(std::span<const Detection> dets) {
  std::vector<double> scores;
  scores.reserve(dets.size());
  for (const Detection& d : dets) scores.push_back(d.score);
  std::sort(scores.begin(), scores.end(), std::greater<>());
  scores.erase(std::unique(scores.begin(), scores.end()), scores.end());
  return scores;
}

std::size_t count_negative_detections(std::span<const Detection> dets,
                                      std::span<const std::string> negative_image_ids,
                                      double threshold) {
  const std::set<std::string> negatives(negative_image_ids.begin(), negative_image_ids.end());
  return static_cast<std::size_t>(std::count_if(dets.begin(), dets.end(), [&](const Detection& d) {
    return d.score >= threshold && negatives.count(d.image_id) > 0;
  }));
}

EndToEndResult end_to_end_map(std::span<const Detection> dets, std::span<const GroundTruthBox> gts,
                              const EndToEndOptions& opts) {
  std::map<std::string, std::vector<GroundTruthBox>> gt_by_class;
  for (const GroundTruthBox& g : gts) {
    if (g.class_label) gt_by_class[*g.class_label].push_back(g);
  }
  if (gt_by_class.empty()) throw InvalidInput("end_to_end_map: no class-labelled ground truth");

  std::map<std::string, std::vector<Detection>> det_by_class;
  for (const Detection& d : dets) {
    if (!d.class_label || !gt_by_class.count(*d.class_label)) continue;
    if (opts.min_score && d.score < *opts.min_score) continue;
    det_by_class[*d.class_label].push_back(d);
  }

  EndToEndResult out;
  double sum = 0.0;
  for (const auto& [label, class_gts] : gt_by_class) {
    const std::vector<Detection>& class_dets = det_by_class[label];
    const MatchResult m = match_detections(class_dets, class_gts, opts.iou_threshold);
    const double ap = average_precision(ranked_outcomes(class_dets, m), class_gts.size());
    out.per_class_ap[label] = ap;
    sum += ap;
  }
  out.mean_ap = sum / static_cast<double>(gt_by_class.size());
  return out;
}

}  // namespace logoproxy
