// logoproxy: crowdsourced box consolidation, proxy-loss embedding training
// and retrieval / detection evaluation.

#include <iostream>
#include <map>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "logoproxy/commands.hpp"

namespace {

using logoproxy::cli::CommonOptions;

// --seed, --config, --out-dir, --error-budget, repeatable --set key=value and
// one --<key> flag per known setting. Flags win over the config file.
struct CommonFlags {
  CommonOptions options;
  std::vector<std::string> set;
  std::map<std::string, std::string> keyed;

  void attach(CLI::App* app, const std::vector<std::string>& keys) {
    app->add_option("--seed", options.seed, "Seed for every random stream");
    app->add_option("--config", options.config_path, "Flat key = value config file")
        ->check(CLI::ExistingFile);
    app->add_option("--out-dir", options.out_dir, "Directory for outputs and manifest.json");
    app->add_option("--error-budget", options.error_budget,
                    "Malformed input lines tolerated before aborting");
    app->add_option("--set", set, "Override a setting: key=value (repeatable)");
    for (const std::string& key : keys) {
      if (key == "seed") continue;
      app->add_option("--" + key, keyed[key], "Override setting '" + key + "'");
    }
  }

  CommonOptions resolve() const {
    CommonOptions out = options;
    for (const std::string& kv : set) {
      const auto eq = kv.find('=');
      if (eq == std::string::npos) throw CLI::ValidationError("--set", "expected key=value, got " + kv);
      out.overrides[kv.substr(0, eq)] = kv.substr(eq + 1);
    }
    for (const auto& [k, v] : keyed) {
      if (!v.empty()) out.overrides[k] = v;
    }
    return out;
  }
};

std::vector<double> parse_fractions(const std::string& s) {
  std::vector<double> out;
  std::size_t start = 0;
  while (start <= s.size()) {
    const auto comma = s.find(',', start);
    out.push_back(std::stod(s.substr(start, comma - start)));
    if (comma == std::string::npos) break;
    start = comma + 1;
  }
  return out;
}

}  // namespace

int main(int argc, char** argv) {
  namespace cli = logoproxy::cli;
  namespace io = logoproxy::io;

  CLI::App app{"logoproxy: proxy-loss few-shot recognition toolkit"};
  app.set_version_flag("--version", cli::kToolVersion);
  app.require_subcommand(1);

  cli::ConsolidateArgs consolidate;
  CommonFlags consolidate_flags;
  std::string split;
  auto* c = app.add_subcommand("consolidate", "Merge crowdsourced boxes into consensus boxes");
  c->add_option("--in", consolidate.input, "Annotation JSONL")->required()->check(CLI::ExistingFile);
  c->add_option("--split", split, "Also write a brand-disjoint split, e.g. 0.8,0,0.2");
  consolidate_flags.attach(c, io::consolidation_config_keys());

  cli::TrainArgs train;
  CommonFlags train_flags;
  auto* t = app.add_subcommand("train", "Fit an embedder and proxies on labelled features");
  t->add_option("--features", train.features, "Labelled feature JSONL")->required()->check(CLI::ExistingFile);
  train_flags.attach(t, io::train_config_keys());

  // Evaluation flags are passed as overrides so they win over --config.
  cli::EvalRetrievalArgs retrieval;
  CommonFlags retrieval_flags;
  bool keep_anchor_queries = false;
  auto* r = app.add_subcommand("eval-retrieval", "Top-1 recall and PR curve of k-NN identification");
  r->add_option("--model", retrieval.model, "Model JSON from train")->required()->check(CLI::ExistingFile);
  r->add_option("--anchors", retrieval.anchors, "Anchor feature JSONL")->required()->check(CLI::ExistingFile);
  r->add_option("--queries", retrieval.queries, "Query feature JSONL")->required()->check(CLI::ExistingFile);
  r->add_option("--k", retrieval_flags.keyed["k"], "Neighbours per vote (default 5)");
  r->add_option("--anchors-per-class", retrieval_flags.keyed["anchors_per_class"],
                "Use only the first N anchors of each class (0 = all)");
  r->add_flag("--no-exclusion", keep_anchor_queries,
              "Keep queries whose source_id is also an anchor");
  retrieval_flags.attach(r, {});

  cli::EvalDetectionArgs detection;
  CommonFlags detection_flags;
  auto* d = app.add_subcommand("eval-detection", "Recall/AP, FROC or end-to-end mAP");
  d->add_option("--dets", detection.detections, "Detection JSONL")->required()->check(CLI::ExistingFile);
  d->add_option("--gts", detection.ground_truth, "Ground-truth JSONL")->required()->check(CLI::ExistingFile);
  d->add_option("--negatives", detection.negatives, "Negative image ids, one per line")
      ->check(CLI::ExistingFile);
  d->add_option("--mode", detection_flags.keyed["mode"], "recall-ap (default) | froc | e2e-map")
      ->check(CLI::IsMember({"recall-ap", "froc", "e2e-map"}));
  d->add_option("--iou-threshold", detection_flags.keyed["iou_threshold"],
                "Match requires IoU strictly above this (default 0.5)");
  d->add_option("--negative-threshold", detection_flags.keyed["negative_threshold"],
                "Score at or above which negative-set detections are counted (default 0.5)");
  d->add_option("--min-score", detection_flags.keyed["min_score"],
                "e2e-map: drop detections scoring below this");
  detection_flags.attach(d, {});

  CLI11_PARSE(app, argc, argv);

  try {
    if (*c) {
      consolidate.common = consolidate_flags.resolve();
      if (!split.empty()) {
        const std::vector<double> f = parse_fractions(split);
        if (f.size() != 3) throw CLI::ValidationError("--split", "expected three fractions");
        consolidate.split = logoproxy::SplitFractions{f[0], f[1], f[2]};
      }
      return cli::run_consolidate(consolidate, std::cout, std::cerr);
    }
    if (*t) {
      train.common = train_flags.resolve();
      return cli::run_train(train, std::cout, std::cerr);
    }
    if (*r) {
      retrieval.common = retrieval_flags.resolve();
      if (keep_anchor_queries) retrieval.common.overrides["exclude_anchor_sources"] = "false";
      return cli::run_eval_retrieval(retrieval, std::cout, std::cerr);
    }
    if (*d) {
      detection.common = detection_flags.resolve();
      return cli::run_eval_detection(detection, std::cout, std::cerr);
    }
  } catch (const CLI::Error& e) {
    return app.exit(e);
  } catch (const std::exception& e) {
    std::cerr << e.what() << '\n';
    return 1;
  }
  return 1;
}
