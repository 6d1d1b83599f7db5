#pragma once

#include <cstddef>
#include <cstdint>
#include <iosfwd>
#include <optional>
#include <string>
#include <vector>

#include "logoproxy/consolidation.hpp"
#include "logoproxy/io.hpp"

namespace logoproxy::cli {

inline constexpr const char* kToolVersion = "0.1.0";

// Flags shared by every subcommand. Settings from the config file are
// applied first, then `overrides`, then `seed`.
struct CommonOptions {
  std::optional<std::uint64_t> seed;
  std::string config_path;
  std::string out_dir = ".";
  std::size_t error_budget = 0;
  io::Settings overrides;
};

struct ConsolidateArgs {
  std::string input;
  std::optional<SplitFractions> split;  // also write a brand-disjoint split
  CommonOptions common;
};

struct TrainArgs {
  std::string features;
  CommonOptions common;
};

struct EvalRetrievalArgs {
  std::string model;
  std::string anchors;
  std::string queries;
  std::size_t k = 5;
  std::optional<std::size_t> anchors_per_class;  // first-k-per-class protocol
  bool exclude_anchor_sources = true;
  CommonOptions common;
};

enum class DetectionMode { kRecallAp, kFroc, kEndToEndMap };

struct EvalDetectionArgs {
  std::string detections;
  std::string ground_truth;
  std::string negatives;  // optional id list
  DetectionMode mode = DetectionMode::kRecallAp;
  double iou_threshold = 0.5;
  double negative_threshold = 0.5;
  std::optional<double> min_score;
  CommonOptions common;
};

// Setting keys accepted by the evaluation commands through --config or
// overrides. Resolved settings are applied on top of the struct fields.
std::vector<std::string> retrieval_setting_keys();
void apply_retrieval_settings(EvalRetrievalArgs& args, const io::Settings& settings);
std::vector<std::string> detection_setting_keys();
void apply_detection_settings(EvalDetectionArgs& args, const io::Settings& settings);

// Each returns the process exit status: 0 iff every output was written.
// Progress and metrics go to `out`, diagnostics to `err`.
int run_consolidate(const ConsolidateArgs& args, std::ostream& out, std::ostream& err);
int run_train(const TrainArgs& args, std::ostream& out, std::ostream& err);
int run_eval_retrieval(const EvalRetrievalArgs& args, std::ostream& out, std::ostream& err);
int run_eval_detection(const EvalDetectionArgs& args, std::ostream& out, std::ostream& err);

DetectionMode parse_detection_mode(const std::string& s);

}  // namespace logoproxy::cli
