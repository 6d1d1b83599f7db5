#pragma once

#include <cstddef>
#include <iosfwd>
#include <map>
#include <span>
#include <string>
#include <vector>

#include "json.hpp"
#include "logoproxy/consolidation.hpp"
#include "logoproxy/detection_eval.hpp"
#include "logoproxy/error.hpp"
#include "logoproxy/trainer.hpp"

namespace logoproxy::io {

using OrderedJson = nlohmann::ordered_json;

inline constexpr int kModelSchemaVersion = 1;

// Shortest decimal text that round-trips to the same double.
std::string format_double(double v);

// Per-line diagnostics collected while reading line-delimited input. Blank
// lines are skipped. Once more than `error_budget` lines fail, reading stops
// by throwing the ParseError of the line that exceeded the budget.
struct ReadReport {
  std::vector<ParseError> errors;
  std::size_t lines_read = 0;
};

// {"image_id","brand","width","height","annotations":[{"worker_id",
//  "logo_label","box":[x,y,w,h]}]}; boxes are converted to corners.
ImageRecord parse_image_record(const nlohmann::json& j);
std::vector<ImageRecord> read_image_records(std::istream& in, std::size_t error_budget,
                                            ReadReport* report = nullptr);

// {"image_id","box":[x_min,y_min,x_max,y_max],"support","cluster_id"}
OrderedJson to_json(const ConsensusBox& box);
void write_consensus(std::ostream& out, std::span<const ConsensusBox> boxes);

// {"label": string, "features": [reals], "source_id"?: string}
LabeledFeatureSet read_feature_set(std::istream& in, std::size_t error_budget,
                                   ReadReport* report = nullptr);

// {"image_id","box":[x,y,w,h],"score","class_label"?,"recognizer_score"?};
// when recognizer_score is present the stored score is the composed
// detector x recognizer score.
Detection parse_detection(const nlohmann::json& j);
std::vector<Detection> read_detections(std::istream& in, std::size_t error_budget,
                                       ReadReport* report = nullptr);

// {"image_id","box":[x,y,w,h],"class_label"?}
GroundTruthBox parse_ground_truth(const nlohmann::json& j);
std::vector<GroundTruthBox> read_ground_truth(std::istream& in, std::size_t error_budget,
                                              ReadReport* report = nullptr);

// One image id per non-blank line; '#' starts a comment line.
std::vector<std::string> read_id_list(std::istream& in);

// --- flat key=value configuration -------------------------------------------

using Settings = std::map<std::string, std::string>;

// Lines of `key = value`; blank lines and '#' comments are ignored.
// Throws ParseError on a line without '='.
Settings parse_settings(std::istream& in);

std::vector<std::string> train_config_keys();
void apply_train_setting(TrainConfig& cfg, const std::string& key, const std::string& value);
TrainConfig train_config_from(const Settings& settings, TrainConfig base = {});
Settings to_settings(const TrainConfig& cfg);

std::vector<std::string> consolidation_config_keys();
void apply_consolidation_setting(ConsolidationConfig& cfg, const std::string& key,
                                 const std::string& value);
ConsolidationConfig consolidation_config_from(const Settings& settings,
                                              ConsolidationConfig base = {});
Settings to_settings(const ConsolidationConfig& cfg);

std::string to_string(Architecture arch);
std::string to_string(LossKind kind);
std::string to_string(NegativeAggregation agg);
std::string to_string(LogoLabel label);
LogoLabel parse_logo_label(const std::string& s);

// --- model ------------------------------------------------------------------

// Versioned document: schema_version, arch, shapes, row-major weights,
// class_ids, proxies, norm and projection flags.
OrderedJson model_to_json(const Model& model);
Model model_from_json(const nlohmann::json& j);

}  // namespace logoproxy::io
