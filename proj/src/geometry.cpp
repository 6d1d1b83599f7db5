#include "logoproxy/geometry.hpp"

#include <algorithm>
#include <cmath>

#include "logoproxy/error.hpp"

namespace logoproxy {

bool Box::valid() const {
  return std::isfinite(x_min) && std::isfinite(y_min) && std::isfinite(x_max) &&
         std::isfinite(y_max) && x_max > x_min && y_max > y_min;
}

Box Box::clamped(double width, double height) const {
  return {std::clamp(x_min, 0.0, width), std::clamp(y_min, 0.0, height),
          std::clamp(x_max, 0.0, width), std::clamp(y_max, 0.0, height)};
}

double iou(const Box& a, const Box& b) {
  if (!a.valid() || !b.valid()) {
    throw InvalidInput("iou: degenerate or non-finite box");
  }
  const double iw = std::max(0.0, std::min(a.x_max, b.x_max) - std::max(a.x_min, b.x_min));
  const double ih = std::max(0.0, std::min(a.y_max, b.y_max) - std::max(a.y_min, b.y_min));
  const double inter = iw * ih;
  const double uni = a.area() + b.area() - inter;
  return inter / uni;
}

double iou_distance(const Box& a, const Box& b) { return 1.0 - iou(a, b); }

namespace {

void check_nonempty(std::span<const Box> boxes) {
  if (boxes.empty()) throw InvalidInput("pairwise_distances: empty box list");
  for (const Box& b : boxes) {
    if (!b.valid()) throw InvalidInput("pairwise_distances: degenerate box");
  }
}

}  // namespace

DistanceMatrix pairwise_distances(std::span<const Box> boxes) {
  check_nonempty(boxes);
  const auto n = static_cast<std::ptrdiff_t>(boxes.size());
  DistanceMatrix dist(boxes.size());
  // Row i owns entries (i, j > i) and their mirrors; no two threads write the
  // same cell.
#pragma omp parallel for schedule(dynamic, 8)
  for (std::ptrdiff_t i = 0; i < n; ++i) {
    for (std::ptrdiff_t j = i + 1; j < n; ++j) {
      dist.set(i, j, iou_distance(boxes[i], boxes[j]));
    }
  }
  return dist;
}

DistanceMatrix pairwise_distances_serial(std::span<const Box> boxes) {
  check_nonempty(boxes);
  DistanceMatrix dist(boxes.size());
  for (std::size_t i = 0; i < boxes.size(); ++i) {
    for (std::size_t j = i + 1; j < boxes.size(); ++j) {
      dist.set(i, j, iou_distance(boxes[i], boxes[j]));
    }
  }
  return dist;
}

}  // namespace logoproxy
