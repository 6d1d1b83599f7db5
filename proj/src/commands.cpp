#include "logoproxy/commands.hpp"

#include <chrono>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <map>
#include <ostream>
#include <set>

#include "logoproxy/retrieval.hpp"

namespace logoproxy::cli {

namespace fs = std::filesystem;
using io::OrderedJson;

namespace {

using Clock = std::chrono::steady_clock;

std::ifstream open_input(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw InvalidInput("cannot open " + path);
  return in;
}

class OutputDir {
 public:
  explicit OutputDir(const std::string& dir) : dir_(dir) { fs::create_directories(dir_); }

  std::string path(const std::string& name) const { return (dir_ / name).string(); }

  std::ofstream open(const std::string& name) {
    std::ofstream out(path(name), std::ios::binary | std::ios::trunc);
    if (!out) throw InvalidInput("cannot write " + path(name));
    written_.push_back(path(name));
    return out;
  }

  const std::vector<std::string>& written() const { return written_; }

 private:
  fs::path dir_;
  std::vector<std::string> written_;
};

io::Settings load_settings(const CommonOptions& common) {
  io::Settings s;
  if (!common.config_path.empty()) {
    std::ifstream in = open_input(common.config_path);
    s = io::parse_settings(in);
  }
  for (const auto& [k, v] : common.overrides) s[k] = v;
  if (common.seed) s["seed"] = std::to_string(*common.seed);
  return s;
}

// Everything needed to repeat the run; wall-clock time is informational.
void write_manifest(OutputDir& dir, const std::string& subcommand, const io::Settings& config,
                    const std::map<std::string, std::string>& inputs, std::uint64_t seed,
                    Clock::time_point started) {
  OrderedJson j;
  j["tool"] = "logoproxy";
  j["version"] = kToolVersion;
  j["subcommand"] = subcommand;
  j["seed"] = seed;
  j["config"] = config;
  j["inputs"] = inputs;
  j["outputs"] = dir.written();
  j["wall_clock_seconds"] =
      std::chrono::duration<double>(Clock::now() - started).count();
  std::ofstream out(dir.path("manifest.json"), std::ios::binary | std::ios::trunc);
  if (!out) throw InvalidInput("cannot write manifest");
  out << j.dump(2) << '\n';
}

void report_read(const io::ReadReport& report, const std::string& what, std::ostream& err) {
  for (const ParseError& e : report.errors) err << what << ": " << e.what() << " (skipped)\n";
}

template <typename Fn>
int guarded(std::ostream& err, const char* name, Fn&& body) {
  try {
    return body();
  } catch (const ParseError& e) {
    err << name << ": parse error at " << e.what() << '\n';
  } catch (const std::exception& e) {
    err << name << ": " << e.what() << '\n';
  }
  return 1;
}

std::size_t parse_count(const std::string& key, const std::string& v) {
  std::size_t used = 0;
  unsigned long long n = 0;
  try {
    n = std::stoull(v, &used);
  } catch (const std::exception&) {
    used = 0;
  }
  if (used == 0 || used != v.size() || v.front() == '-') {
    throw InvalidInput("setting " + key + ": expected a non-negative integer, got \"" + v + "\"");
  }
  return static_cast<std::size_t>(n);
}

double parse_number(const std::string& key, const std::string& v) {
  std::size_t used = 0;
  double d = 0.0;
  try {
    d = std::stod(v, &used);
  } catch (const std::exception&) {
    used = 0;
  }
  if (used == 0 || used != v.size() || !std::isfinite(d)) {
    throw InvalidInput("setting " + key + ": expected a real number, got \"" + v + "\"");
  }
  return d;
}

bool parse_flag(const std::string& key, const std::string& v) {
  if (v == "true" || v == "1") return true;
  if (v == "false" || v == "0") return false;
  throw InvalidInput("setting " + key + ": expected true or false, got \"" + v + "\"");
}

std::string csv_escape(const std::string& s) {
  if (s.find_first_of(",\"\n") == std::string::npos) return s;
  std::string out = "\"";
  for (char c : s) {
    if (c == '"') out += '"';
    out += c;
  }
  return out + "\"";
}

}  // namespace

std::vector<std::string> retrieval_setting_keys() {
  return {"k", "anchors_per_class", "exclude_anchor_sources"};
}

void apply_retrieval_settings(EvalRetrievalArgs& args, const io::Settings& settings) {
  for (const auto& [key, value] : settings) {
    if (key == "seed") continue;
    if (key == "k") {
      args.k = parse_count(key, value);
    } else if (key == "anchors_per_class") {
      const std::size_t n = parse_count(key, value);
      args.anchors_per_class = n == 0 ? std::nullopt : std::optional<std::size_t>(n);
    } else if (key == "exclude_anchor_sources") {
      args.exclude_anchor_sources = parse_flag(key, value);
    } else {
      throw InvalidInput("unknown eval-retrieval setting \"" + key + "\"");
    }
  }
}

std::vector<std::string> detection_setting_keys() {
  return {"mode", "iou_threshold", "negative_threshold", "min_score"};
}

void apply_detection_settings(EvalDetectionArgs& args, const io::Settings& settings) {
  for (const auto& [key, value] : settings) {
    if (key == "seed") continue;
    if (key == "mode") args.mode = parse_detection_mode(value);
    else if (key == "iou_threshold") args.iou_threshold = parse_number(key, value);
    else if (key == "negative_threshold") args.negative_threshold = parse_number(key, value);
    else if (key == "min_score") args.min_score = parse_number(key, value);
    else throw InvalidInput("unknown eval-detection setting \"" + key + "\"");
  }
}

DetectionMode parse_detection_mode(const std::string& s) {
  if (s == "recall-ap") return DetectionMode::kRecallAp;
  if (s == "froc") return DetectionMode::kFroc;
  if (s == "e2e-map") return DetectionMode::kEndToEndMap;
  throw InvalidInput("unknown detection mode \"" + s + "\"");
}

// --- consolidate ------------------------------------------------------------------

int run_consolidate(const ConsolidateArgs& args, std::ostream& out, std::ostream& err) {
  return guarded(err, "consolidate", [&] {
    const auto started = Clock::now();
    io::Settings settings = load_settings(args.common);
    std::uint64_t seed = 0;
    if (auto it = settings.find("seed"); it != settings.end()) {
      seed = std::stoull(it->second);
      settings.erase(it);
    }
    const ConsolidationConfig cfg = io::consolidation_config_from(settings);

    std::ifstream in = open_input(args.input);
    io::ReadReport report;
    std::vector<ImageRecord> images = io::read_image_records(in, args.common.error_budget, &report);
    report_read(report, args.input, err);

    const std::size_t total = images.size();
    NoLogoFilterResult filtered = filter_no_logo(std::move(images), cfg.no_logo_vote_threshold);
    const std::vector<ImageConsolidation> results = consolidate_all(filtered.kept, cfg);

    OutputDir dir(args.common.out_dir);
    ConsolidationStats stats;
    std::size_t written = 0;
    {
      std::ofstream consensus = dir.open("consensus.jsonl");
      for (const ImageConsolidation& r : results) {
        io::write_consensus(consensus, r.boxes);
        written += r.boxes.size();
        stats += r.stats;
      }
    }
    if (args.split) {
      const DatasetSplit split = split_dataset(filtered.kept, *args.split, seed);
      std::ofstream s = dir.open("split.jsonl");
      const std::pair<const char*, const std::vector<ImageRecord>*> parts[] = {
          {"train", &split.train}, {"val", &split.val}, {"test", &split.test}};
      for (const auto& [name, recs] : parts) {
        for (const ImageRecord& rec : *recs) {
          OrderedJson j;
          j["image_id"] = rec.image_id;
          j["brand"] = rec.brand;
          j["split"] = name;
          s << j.dump() << '\n';
        }
      }
    }

    io::Settings resolved = io::to_settings(cfg);
    if (args.split) {
      resolved["split"] = io::format_double(args.split->train) + "," +
                          io::format_double(args.split->val) + "," +
                          io::format_double(args.split->test);
    }
    write_manifest(dir, "consolidate", resolved, {{"annotations", args.input}}, seed, started);

    const std::size_t removed = stats.removed_whole_image + stats.removed_low_support +
                                stats.removed_degenerate;
    out << "images: " << total << " read, " << filtered.kept.size() << " kept, "
        << filtered.dropped.size() << " dropped (no-logo votes > " << cfg.no_logo_vote_threshold
        << ")\n";
    out << "boxes: " << written << " written, " << removed << " removed (whole-image "
        << stats.removed_whole_image << ", low-support " << stats.removed_low_support
        << ", degenerate " << stats.removed_degenerate << "), " << stats.noise_points
        << " noise, " << stats.invalid_boxes << " invalid\n";
    if (!report.errors.empty()) out << "malformed lines skipped: " << report.errors.size() << '\n';
    return 0;
  });
}

// --- train -----------------------------------------------------------------------

int run_train(const TrainArgs& args, std::ostream& out, std::ostream& err) {
  return guarded(err, "train", [&] {
    const auto started = Clock::now();
    const TrainConfig cfg = io::train_config_from(load_settings(args.common));

    std::ifstream in = open_input(args.features);
    io::ReadReport report;
    const LabeledFeatureSet data = io::read_feature_set(in, args.common.error_budget, &report);
    report_read(report, args.features, err);

    const FitResult fitted = fit(data, cfg);

    OutputDir dir(args.common.out_dir);
    {
      std::ofstream model = dir.open("model.json");
      model << io::model_to_json(fitted.model).dump(2) << '\n';
    }
    {
      std::ofstream csv = dir.open("loss.csv");
      csv << "epoch,loss\n";
      for (std::size_t e = 0; e < fitted.history.size(); ++e) {
        csv << e << ',' << io::format_double(fitted.history[e]) << '\n';
      }
    }
    write_manifest(dir, "train", io::to_settings(cfg), {{"features", args.features}}, cfg.seed,
                   started);

    out << "trained " << io::to_string(cfg.arch) << " embedder with " << io::to_string(cfg.loss)
        << " on " << data.size() << " rows, " << data.classes.size() << " classes, "
        << cfg.epochs << " epochs\n";
    if (!fitted.history.empty()) {
      out << "loss: first " << io::format_double(fitted.history.front()) << ", last "
          << io::format_double(fitted.history.back()) << '\n';
    }
    return 0;
  });
}

// --- eval-retrieval ------------------------------------------------------------------

int run_eval_retrieval(const EvalRetrievalArgs& given, std::ostream& out, std::ostream& err) {
  return guarded(err, "eval-retrieval", [&] {
    const auto started = Clock::now();
    EvalRetrievalArgs args = given;
    apply_retrieval_settings(args, load_settings(given.common));
    if (args.k < 1) throw InvalidInput("k must be >= 1");
    Model model;
    {
      std::ifstream in = open_input(args.model);
      model = io::model_from_json(nlohmann::json::parse(in));
    }
    io::ReadReport anchor_report;
    io::ReadReport query_report;
    std::ifstream anchors_in = open_input(args.anchors);
    const LabeledFeatureSet anchors = io::read_feature_set(anchors_in, args.common.error_budget, &anchor_report);
    std::ifstream queries_in = open_input(args.queries);
    const LabeledFeatureSet queries = io::read_feature_set(queries_in, args.common.error_budget, &query_report);
    report_read(anchor_report, args.anchors, err);
    report_read(query_report, args.queries, err);
    if (anchors.size() == 0) throw InvalidInput("no anchors");

    // Shared label vocabulary across both files.
    std::map<std::string, Label> vocab;
    auto label_id = [&](const std::string& name) {
      return vocab.try_emplace(name, static_cast<Label>(vocab.size())).first->second;
    };
    std::vector<Label> anchor_labels;
    for (std::size_t i = 0; i < anchors.size(); ++i) {
      anchor_labels.push_back(label_id(anchors.classes[anchors.labels[i]]));
    }

    std::vector<std::size_t> chosen(anchors.size());
    for (std::size_t i = 0; i < chosen.size(); ++i) chosen[i] = i;
    if (args.anchors_per_class) chosen = first_k_per_label(anchor_labels, *args.anchors_per_class);

    std::vector<AnchorEntry> entries;
    std::set<std::string> anchor_sources;
    for (std::size_t i : chosen) {
      entries.push_back({model.embed(anchors.features[i]), anchor_labels[i], anchors.source_ids[i]});
      if (!anchors.source_ids[i].empty()) anchor_sources.insert(anchors.source_ids[i]);
    }
    const AnchorIndex index = build_index(std::move(entries));

    std::vector<std::size_t> query_rows;
    std::size_t excluded = 0;
    for (std::size_t i = 0; i < queries.size(); ++i) {
      if (args.exclude_anchor_sources && anchor_sources.count(queries.source_ids[i])) {
        ++excluded;
        continue;
      }
      query_rows.push_back(i);
    }
    if (query_rows.empty()) throw InvalidInput("no evaluation queries left after anchor exclusion");

    std::vector<LabeledQuery> labeled;
    for (std::size_t i : query_rows) {
      labeled.push_back({model.embed(queries.features[i]), label_id(queries.classes[queries.labels[i]])});
    }
    const double recall1 = top1_recall(index, labeled);

    std::vector<ScoredPrediction> scored;
    std::vector<std::string> label_names(vocab.size());
    for (const auto& [name, id] : vocab) label_names[static_cast<std::size_t>(id)] = name;

    OutputDir dir(args.common.out_dir);
    std::size_t topk_correct = 0;
    {
      std::ofstream pred = dir.open("predictions.csv");
      pred << "source_id,label,predicted,score\n";
      for (std::size_t q = 0; q < labeled.size(); ++q) {
        const Prediction p = classify_topk(index, labeled[q].embedding, args.k);
        const bool correct = p.label == labeled[q].label;
        topk_correct += correct ? 1 : 0;
        scored.push_back({p.score, correct});
        pred << csv_escape(queries.source_ids[query_rows[q]]) << ','
             << csv_escape(label_names[static_cast<std::size_t>(labeled[q].label)]) << ','
             << csv_escape(label_names[static_cast<std::size_t>(p.label)]) << ','
             << io::format_double(p.score) << '\n';
      }
    }
    {
      std::ofstream curve = dir.open("pr_curve.csv");
      curve << "recall,precision\n";
      for (const PrPoint& pt : precision_recall_curve(scored, labeled.size())) {
        curve << io::format_double(pt.recall) << ',' << io::format_double(pt.precision) << '\n';
      }
    }
    const double topk_accuracy = static_cast<double>(topk_correct) / static_cast<double>(labeled.size());
    {
      OrderedJson summary;
      summary["top1_recall"] = recall1;
      summary["k"] = args.k;
      summary["topk_vote_accuracy"] = topk_accuracy;
      summary["anchors"] = index.size();
      summary["queries"] = labeled.size();
      summary["excluded_queries"] = excluded;
      std::ofstream s = dir.open("summary.json");
      s << summary.dump(2) << '\n';
    }
    io::Settings resolved{{"k", std::to_string(args.k)},
                          {"exclude_anchor_sources", args.exclude_anchor_sources ? "true" : "false"}};
    if (args.anchors_per_class) resolved["anchors_per_class"] = std::to_string(*args.anchors_per_class);
    write_manifest(dir, "eval-retrieval", resolved,
                   {{"model", args.model}, {"anchors", args.anchors}, {"queries", args.queries}},
                   args.common.seed.value_or(0), started);

    out << "top1_recall: " << io::format_double(recall1) << '\n';
    out << "top" << args.k << "_vote_accuracy: " << io::format_double(topk_accuracy) << '\n';
    out << "anchors: " << index.size() << ", queries: " << labeled.size() << ", excluded: " << excluded
        << '\n';
    return 0;
  });
}

// --- eval-detection ---------------------------------------------------------------------

int run_eval_detection(const EvalDetectionArgs& given, std::ostream& out, std::ostream& err) {
  return guarded(err, "eval-detection", [&] {
    const auto started = Clock::now();
    EvalDetectionArgs args = given;
    apply_detection_settings(args, load_settings(given.common));
    io::ReadReport det_report;
    io::ReadReport gt_report;
    std::ifstream det_in = open_input(args.detections);
    const std::vector<Detection> dets = io::read_detections(det_in, args.common.error_budget, &det_report);
    std::ifstream gt_in = open_input(args.ground_truth);
    const std::vector<GroundTruthBox> gts = io::read_ground_truth(gt_in, args.common.error_budget, &gt_report);
    report_read(det_report, args.detections, err);
    report_read(gt_report, args.ground_truth, err);
    std::vector<std::string> negatives;
    if (!args.negatives.empty()) {
      std::ifstream neg_in = open_input(args.negatives);
      negatives = io::read_id_list(neg_in);
    }

    OutputDir dir(args.common.out_dir);
    OrderedJson summary;
    std::string mode_name;
    switch (args.mode) {
      case DetectionMode::kRecallAp: {
        mode_name = "recall-ap";
        if (gts.empty()) throw InvalidInput("no ground-truth boxes");
        const MatchResult m = match_detections(dets, gts, args.iou_threshold);
        const double r = recall(m);
        const double ap = average_precision(ranked_outcomes(dets, m), gts.size());
        summary["recall"] = r;
        summary["ap"] = ap;
        summary["num_gt"] = gts.size();
        summary["num_detections"] = dets.size();
        summary["true_positives"] = m.num_tp();
        summary["false_positives"] = m.num_fp();
        summary["negative_detections"] = count_negative_detections(dets, negatives, args.negative_threshold);
        out << "recall: " << io::format_double(r) << "\nap: " << io::format_double(ap) << '\n';
        out << "negative_detections: " << summary["negative_detections"].get<std::size_t>() << '\n';
        break;
      }
      case DetectionMode::kFroc: {
        mode_name = "froc";
        const std::vector<double> thresholds = score_thresholds(dets);
        const std::vector<FrocPoint> curve =
            froc_curve(dets, gts, thresholds, args.iou_threshold, negatives);
        std::ofstream csv = dir.open("froc.csv");
        csv << "threshold,avg_fp_per_image,recall\n";
        for (const FrocPoint& p : curve) {
          csv << io::format_double(p.threshold) << ',' << io::format_double(p.avg_false_positives_per_image)
              << ',' << io::format_double(p.recall) << '\n';
        }
        summary["points"] = curve.size();
        summary["max_recall"] = curve.back().recall;
        summary["max_avg_fp_per_image"] = curve.back().avg_false_positives_per_image;
        out << "froc points: " << curve.size() << ", max recall "
            << io::format_double(curve.back().recall) << '\n';
        break;
      }
      case DetectionMode::kEndToEndMap: {
        mode_name = "e2e-map";
        EndToEndOptions opts;
        opts.iou_threshold = args.iou_threshold;
        opts.min_score = args.min_score;
        const EndToEndResult res = end_to_end_map(dets, gts, opts);
        summary["map"] = res.mean_ap;
        summary["per_class"] = res.per_class_ap;
        out << "map: " << io::format_double(res.mean_ap) << " over " << res.per_class_ap.size()
            << " classes\n";
        break;
      }
    }
    {
      std::ofstream s = dir.open("metrics.json");
      s << summary.dump(2) << '\n';
    }
    io::Settings resolved{{"mode", mode_name},
                          {"iou_threshold", io::format_double(args.iou_threshold)},
                          {"negative_threshold", io::format_double(args.negative_threshold)}};
    if (args.min_score) resolved["min_score"] = io::format_double(*args.min_score);
    std::map<std::string, std::string> inputs{{"detections", args.detections},
                                              {"ground_truth", args.ground_truth}};
    if (!args.negatives.empty()) inputs["negatives"] = args.negatives;
    write_manifest(dir, "eval-detection", resolved, inputs, args.common.seed.value_or(0), started);
    return 0;
  });
}

}  // namespace logoproxy::cli
