#pragma once

#include <cstddef>
#include <span>
#include <vector>

namespace logoproxy {

// Axis-aligned rectangle in image coordinates, stored as corners. Inputs in
// (x, y, w, h) form are converted with from_xywh at the file boundary.
struct Box {
  double x_min = 0.0;
  double y_min = 0.0;
  double x_max = 0.0;
  double y_max = 0.0;

  static Box from_xywh(double x, double y, double w, double h) {
    return {x, y, x + w, y + h};
  }
  static Box image_rect(double width, double height) {
    return {0.0, 0.0, width, height};
  }

  double width() const { return x_max - x_min; }
  double height() const { return y_max - y_min; }
  double area() const { return width() * height(); }

  // Finite coordinates and strictly positive extent in both axes.
  bool valid() const;

  // Intersection with [0,width]x[0,height]; may be invalid if the box lies
  // entirely outside.
  Box clamped(double width, double height) const;

  bool operator==(const Box&) const = default;
};

// Area-based IoU. Touching boxes (shared edge only) give 0.
// Throws InvalidInput if either box is degenerate.
double iou(const Box& a, const Box& b);

// 1 - iou(a, b); the clustering metric for annotation rectangles.
double iou_distance(const Box& a, const Box& b);

// Symmetric n x n matrix with zero diagonal.
class DistanceMatrix {
 public:
  explicit DistanceMatrix(std::size_t n) : n_(n), values_(n * n, 0.0) {}

  std::size_t size() const { return n_; }
  double operator()(std::size_t i, std::size_t j) const {
    return values_[i * n_ + j];
  }
  // Writes both (i, j) and (j, i).
  void set(std::size_t i, std::size_t j, double value) {
    values_[i * n_ + j] = value;
    values_[j * n_ + i] = value;
  }
  std::span<const double> values() const { return values_; }

  bool operator==(const DistanceMatrix&) const = default;

 private:
  std::size_t n_;
  std::vector<double> values_;
};

// Pairwise iou_distance, rows distributed over OpenMP threads. Each entry is
// computed exactly once, so the result is bitwise identical to the serial
// version for any schedule.
DistanceMatrix pairwise_distances(std::span<const Box> boxes);

// Single-threaded reference for pairwise_distances.
DistanceMatrix pairwise_distances_serial(std::span<const Box> boxes);

}  // namespace logoproxy
