#include "logoproxy/io.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <functional>
#include <istream>
#include <ostream>

namespace logoproxy::io {

using nlohmann::json;

std::string format_double(double v) {
  char buf[64];
  const auto res = std::to_chars(buf, buf + sizeof(buf), v);
  return std::string(buf, res.ptr);
}

namespace {

std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r\n");
  if (b == std::string::npos) return {};
  const auto e = s.find_last_not_of(" \t\r\n");
  return s.substr(b, e - b + 1);
}

const json& field(const json& j, const char* key) {
  if (!j.is_object()) throw InvalidInput("expected a JSON object");
  auto it = j.find(key);
  if (it == j.end()) throw InvalidInput(std::string("missing field \"") + key + "\"");
  return *it;
}

std::string string_field(const json& j, const char* key) {
  const json& v = field(j, key);
  if (!v.is_string()) throw InvalidInput(std::string("field \"") + key + "\" must be a string");
  return v.get<std::string>();
}

double number_field(const json& j, const char* key) {
  const json& v = field(j, key);
  if (!v.is_number()) throw InvalidInput(std::string("field \"") + key + "\" must be a number");
  const double d = v.get<double>();
  if (!std::isfinite(d)) throw InvalidInput(std::string("field \"") + key + "\" must be finite");
  return d;
}

std::optional<std::string> optional_string(const json& j, const char* key) {
  auto it = j.find(key);
  if (it == j.end() || it->is_null()) return std::nullopt;
  if (!it->is_string()) throw InvalidInput(std::string("field \"") + key + "\" must be a string");
  return it->get<std::string>();
}

std::vector<double> number_array(const json& v, const char* what) {
  if (!v.is_array()) throw InvalidInput(std::string(what) + " must be an array");
  std::vector<double> out;
  out.reserve(v.size());
  for (const json& x : v) {
    if (!x.is_number()) throw InvalidInput(std::string(what) + " must contain only numbers");
    const double d = x.get<double>();
    if (!std::isfinite(d)) throw InvalidInput(std::string(what) + " must be finite");
    out.push_back(d);
  }
  return out;
}

Box xywh_box(const json& v) {
  const std::vector<double> b = number_array(v, "box");
  if (b.size() != 4) throw InvalidInput("box must have 4 entries [x,y,w,h]");
  if (!(b[2] > 0.0 && b[3] > 0.0)) throw InvalidInput("box width and height must be positive");
  return Box::from_xywh(b[0], b[1], b[2], b[3]);
}

// Reads line-delimited JSON, handing each parsed object to `consume`.
void read_jsonl(std::istream& in, std::size_t error_budget, ReadReport* report,
                const std::function<void(const json&)>& consume) {
  ReadReport local;
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (trim(line).empty()) continue;
    ++local.lines_read;
    try {
      consume(json::parse(line));
    } catch (const json::exception& e) {
      local.errors.emplace_back(lineno, e.what());
    } catch (const InvalidInput& e) {
      local.errors.emplace_back(lineno, e.what());
    }
    if (local.errors.size() > error_budget) {
      if (report != nullptr) *report = local;
      throw local.errors.back();
    }
  }
  if (report != nullptr) *report = std::move(local);
}

bool parse_bool(const std::string& key, const std::string& v) {
  if (v == "true" || v == "1" || v == "yes") return true;
  if (v == "false" || v == "0" || v == "no") return false;
  throw InvalidInput("setting " + key + ": expected a boolean, got \"" + v + "\"");
}

double parse_real(const std::string& key, const std::string& v) {
  double out = 0.0;
  const auto res = std::from_chars(v.data(), v.data() + v.size(), out);
  if (res.ec != std::errc() || res.ptr != v.data() + v.size() || !std::isfinite(out)) {
    throw InvalidInput("setting " + key + ": expected a real number, got \"" + v + "\"");
  }
  return out;
}

template <typename Int>
Int parse_int(const std::string& key, const std::string& v) {
  Int out = 0;
  const auto res = std::from_chars(v.data(), v.data() + v.size(), out);
  if (res.ec != std::errc() || res.ptr != v.data() + v.size()) {
    throw InvalidInput("setting " + key + ": expected an integer, got \"" + v + "\"");
  }
  return out;
}

Architecture parse_arch(const std::string& v) {
  if (v == "linear") return Architecture::kLinear;
  if (v == "mlp1") return Architecture::kMlp1;
  throw InvalidInput("arch: expected linear or mlp1, got \"" + v + "\"");
}

LossKind parse_loss(const std::string& v) {
  if (v == "proxy-triplet") return LossKind::kProxyTriplet;
  if (v == "proxy-nca") return LossKind::kProxyNca;
  if (v == "triplet") return LossKind::kTriplet;
  if (v == "margin") return LossKind::kMargin;
  if (v == "cross-entropy") return LossKind::kCrossEntropy;
  throw InvalidInput("loss: unknown loss \"" + v + "\"");
}

NegativeAggregation parse_aggregation(const std::string& v) {
  if (v == "mean") return NegativeAggregation::kMean;
  if (v == "sum") return NegativeAggregation::kSum;
  if (v == "min-distance") return NegativeAggregation::kMinDistanceOnly;
  throw InvalidInput("aggregation: expected mean, sum or min-distance, got \"" + v + "\"");
}

std::string format_bool(bool b) { return b ? "true" : "false"; }

}  // namespace

std::string to_string(Architecture arch) {
  return arch == Architecture::kLinear ? "linear" : "mlp1";
}

std::string to_string(LossKind kind) {
  switch (kind) {
    case LossKind::kProxyTriplet: return "proxy-triplet";
    case LossKind::kProxyNca: return "proxy-nca";
    case LossKind::kTriplet: return "triplet";
    case LossKind::kMargin: return "margin";
    case LossKind::kCrossEntropy: return "cross-entropy";
  }
  return "unknown";
}

std::string to_string(NegativeAggregation agg) {
  switch (agg) {
    case NegativeAggregation::kMean: return "mean";
    case NegativeAggregation::kSum: return "sum";
    case NegativeAggregation::kMinDistanceOnly: return "min-distance";
  }
  return "unknown";
}

std::string to_string(LogoLabel label) {
  switch (label) {
    case LogoLabel::kNoLogo: return "NO_LOGO";
    case LogoLabel::kOneLogo: return "ONE_LOGO";
    case LogoLabel::kMultipleLogo: return "MULTIPLE_LOGO";
  }
  return "unknown";
}

LogoLabel parse_logo_label(const std::string& s) {
  if (s == "NO_LOGO") return LogoLabel::kNoLogo;
  if (s == "ONE_LOGO") return LogoLabel::kOneLogo;
  if (s == "MULTIPLE_LOGO") return LogoLabel::kMultipleLogo;
  throw InvalidInput("unknown logo_label \"" + s + "\"");
}

// --- annotations --------------------------------------------------------------

ImageRecord parse_image_record(const json& j) {
  ImageRecord rec;
  rec.image_id = string_field(j, "image_id");
  rec.brand = string_field(j, "brand");
  rec.width = number_field(j, "width");
  rec.height = number_field(j, "height");
  if (!(rec.width > 0.0 && rec.height > 0.0)) throw InvalidInput("width and height must be positive");
  const json& anns = field(j, "annotations");
  if (!anns.is_array()) throw InvalidInput("annotations must be an array");
  for (const json& a : anns) {
    WorkerAnnotation w;
    w.image_id = rec.image_id;
    w.worker_id = string_field(a, "worker_id");
    w.logo_label = parse_logo_label(string_field(a, "logo_label"));
    auto box = a.find("box");
    const bool has_box = box != a.end() && !box->is_null();
    if (has_box != (w.logo_label != LogoLabel::kNoLogo)) {
      throw InvalidInput("worker " + w.worker_id + ": box must be present iff logo_label is not NO_LOGO");
    }
    if (has_box) w.box = xywh_box(*box);
    rec.annotations.push_back(std::move(w));
  }
  return rec;
}

std::vector<ImageRecord> read_image_records(std::istream& in, std::size_t error_budget,
                                            ReadReport* report) {
  std::vector<ImageRecord> out;
  read_jsonl(in, error_budget, report, [&](const json& j) { out.push_back(parse_image_record(j)); });
  return out;
}

OrderedJson to_json(const ConsensusBox& box) {
  OrderedJson j;
  j["image_id"] = box.image_id;
  j["box"] = {box.box.x_min, box.box.y_min, box.box.x_max, box.box.y_max};
  j["support"] = box.support;
  j["cluster_id"] = box.cluster_id;
  return j;
}

void write_consensus(std::ostream& out, std::span<const ConsensusBox> boxes) {
  for (const ConsensusBox& b : boxes) out << to_json(b).dump() << '\n';
}

// --- features -------------------------------------------------------------------

LabeledFeatureSet read_feature_set(std::istream& in, std::size_t error_budget, ReadReport* report) {
  LabeledFeatureSet set;
  read_jsonl(in, error_budget, report, [&](const json& j) {
    std::string label = string_field(j, "label");
    std::vector<double> features = number_array(field(j, "features"), "features");
    if (features.empty()) throw InvalidInput("features must be nonempty");
    if (!set.features.empty() && features.size() != set.dim()) {
      throw InvalidInput("feature dimension " + std::to_string(features.size()) + ", expected " +
                         std::to_string(set.dim()));
    }
    set.add(std::move(features), label, optional_string(j, "source_id").value_or(""));
  });
  return set;
}

// --- detections -------------------------------------------------------------------

Detection parse_detection(const json& j) {
  Detection d;
  d.image_id = string_field(j, "image_id");
  d.box = xywh_box(field(j, "box"));
  d.score = number_field(j, "score");
  d.class_label = optional_string(j, "class_label");
  if (j.contains("recognizer_score")) d.score = compose_score(d.score, number_field(j, "recognizer_score"));
  return d;
}

std::vector<Detection> read_detections(std::istream& in, std::size_t error_budget, ReadReport* report) {
  std::vector<Detection> out;
  read_jsonl(in, error_budget, report, [&](const json& j) { out.push_back(parse_detection(j)); });
  return out;
}

GroundTruthBox parse_ground_truth(const json& j) {
  GroundTruthBox g;
  g.image_id = string_field(j, "image_id");
  g.box = xywh_box(field(j, "box"));
  g.class_label = optional_string(j, "class_label");
  return g;
}

std::vector<GroundTruthBox> read_ground_truth(std::istream& in, std::size_t error_budget,
                                              ReadReport* report) {
  std::vector<GroundTruthBox> out;
  read_jsonl(in, error_budget, report, [&](const json& j) { out.push_back(parse_ground_truth(j)); });
  return out;
}

std::vector<std::string> read_id_list(std::istream& in) {
  std::vector<std::string> ids;
  std::string line;
  while (std::getline(in, line)) {
    const std::string t = trim(line);
    if (t.empty() || t.front() == '#') continue;
    ids.push_back(t);
  }
  return ids;
}

// --- settings -----------------------------------------------------------------------

Settings parse_settings(std::istream& in) {
  Settings out;
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    const std::string t = trim(line);
    if (t.empty() || t.front() == '#') continue;
    const auto eq = t.find('=');
    if (eq == std::string::npos) throw ParseError(lineno, "expected key = value");
    const std::string key = trim(t.substr(0, eq));
    if (key.empty()) throw ParseError(lineno, "empty key");
    out[key] = trim(t.substr(eq + 1));
  }
  return out;
}

std::vector<std::string> train_config_keys() {
  return {"arch",          "hidden_dim",     "embedding_dim",   "learning_rate",
          "weight_decay",  "lr_decay_factor", "lr_decay_every", "batch_size",
          "epochs",        "seed",           "beta1",           "beta2",
          "adam_epsilon",  "init_magnitude", "loss",            "margin",
          "aggregation",   "nca_include_positive", "margin_beta", "proxy_norm",
          "project_embeddings", "project_proxies"};
}

void apply_train_setting(TrainConfig& cfg, const std::string& key, const std::string& v) {
  if (key == "arch") cfg.arch = parse_arch(v);
  else if (key == "hidden_dim") cfg.hidden_dim = parse_int<std::size_t>(key, v);
  else if (key == "embedding_dim") cfg.embedding_dim = parse_int<std::size_t>(key, v);
  else if (key == "learning_rate") cfg.learning_rate = parse_real(key, v);
  else if (key == "weight_decay") cfg.weight_decay = parse_real(key, v);
  else if (key == "lr_decay_factor") cfg.lr_decay_factor = parse_real(key, v);
  else if (key == "lr_decay_every") cfg.lr_decay_every = parse_int<int>(key, v);
  else if (key == "batch_size") cfg.batch_size = parse_int<std::size_t>(key, v);
  else if (key == "epochs") cfg.epochs = parse_int<int>(key, v);
  else if (key == "seed") cfg.seed = parse_int<std::uint64_t>(key, v);
  else if (key == "beta1") cfg.beta1 = parse_real(key, v);
  else if (key == "beta2") cfg.beta2 = parse_real(key, v);
  else if (key == "adam_epsilon") cfg.adam_epsilon = parse_real(key, v);
  else if (key == "init_magnitude") cfg.init_magnitude = parse_real(key, v);
  else if (key == "loss") cfg.loss = parse_loss(v);
  else if (key == "margin") cfg.loss_config.margin = parse_real(key, v);
  else if (key == "aggregation") cfg.loss_config.aggregation = parse_aggregation(v);
  else if (key == "nca_include_positive") cfg.loss_config.nca_include_positive = parse_bool(key, v);
  else if (key == "margin_beta") cfg.margin_beta = parse_real(key, v);
  else if (key == "proxy_norm") cfg.proxy_norm = parse_real(key, v);
  else if (key == "project_embeddings") cfg.project_embeddings = parse_bool(key, v);
  else if (key == "project_proxies") cfg.project_proxies = parse_bool(key, v);
  else throw InvalidInput("unknown training setting \"" + key + "\"");
}

TrainConfig train_config_from(const Settings& settings, TrainConfig base) {
  for (const auto& [k, v] : settings) apply_train_setting(base, k, v);
  base.validate();
  return base;
}

Settings to_settings(const TrainConfig& cfg) {
  return {{"arch", to_string(cfg.arch)},
          {"hidden_dim", std::to_string(cfg.hidden_dim)},
          {"embedding_dim", std::to_string(cfg.embedding_dim)},
          {"learning_rate", format_double(cfg.learning_rate)},
          {"weight_decay", format_double(cfg.weight_decay)},
          {"lr_decay_factor", format_double(cfg.lr_decay_factor)},
          {"lr_decay_every", std::to_string(cfg.lr_decay_every)},
          {"batch_size", std::to_string(cfg.batch_size)},
          {"epochs", std::to_string(cfg.epochs)},
          {"seed", std::to_string(cfg.seed)},
          {"beta1", format_double(cfg.beta1)},
          {"beta2", format_double(cfg.beta2)},
          {"adam_epsilon", format_double(cfg.adam_epsilon)},
          {"init_magnitude", format_double(cfg.init_magnitude)},
          {"loss", to_string(cfg.loss)},
          {"margin", format_double(cfg.loss_config.margin)},
          {"aggregation", to_string(cfg.loss_config.aggregation)},
          {"nca_include_positive", format_bool(cfg.loss_config.nca_include_positive)},
          {"margin_beta", format_double(cfg.margin_beta)},
          {"proxy_norm", format_double(cfg.proxy_norm)},
          {"project_embeddings", format_bool(cfg.project_embeddings)},
          {"project_proxies", format_bool(cfg.project_proxies)}};
}

std::vector<std::string> consolidation_config_keys() {
  return {"eps", "min_samples", "whole_image_iou", "no_logo_vote_threshold", "min_cluster_support"};
}

void apply_consolidation_setting(ConsolidationConfig& cfg, const std::string& key,
                                 const std::string& v) {
  if (key == "eps") cfg.eps = parse_real(key, v);
  else if (key == "min_samples") cfg.min_samples = parse_int<std::size_t>(key, v);
  else if (key == "whole_image_iou") cfg.whole_image_iou = parse_real(key, v);
  else if (key == "no_logo_vote_threshold") cfg.no_logo_vote_threshold = parse_int<std::size_t>(key, v);
  else if (key == "min_cluster_support") cfg.min_cluster_support = parse_int<std::size_t>(key, v);
  else throw InvalidInput("unknown consolidation setting \"" + key + "\"");
}

ConsolidationConfig consolidation_config_from(const Settings& settings, ConsolidationConfig base) {
  for (const auto& [k, v] : settings) apply_consolidation_setting(base, k, v);
  base.validate();
  return base;
}

Settings to_settings(const ConsolidationConfig& cfg) {
  return {{"eps", format_double(cfg.eps)},
          {"min_samples", std::to_string(cfg.min_samples)},
          {"whole_image_iou", format_double(cfg.whole_image_iou)},
          {"no_logo_vote_threshold", std::to_string(cfg.no_logo_vote_threshold)},
          {"min_cluster_support", std::to_string(cfg.min_cluster_support)}};
}

// --- model --------------------------------------------------------------------------

OrderedJson model_to_json(const Model& model) {
  const EmbedderParams& p = model.embedder;
  OrderedJson j;
  j["schema_version"] = kModelSchemaVersion;
  j["arch"] = to_string(p.arch);
  j["input_dim"] = p.input_dim;
  j["hidden_dim"] = p.hidden_dim;
  j["embedding_dim"] = p.embedding_dim;
  OrderedJson w;
  w["w1"] = {{"rows", p.w1.rows}, {"cols", p.w1.cols}, {"data", p.w1.data}};
  w["b1"] = p.b1;
  if (p.arch == Architecture::kMlp1) {
    w["w2"] = {{"rows", p.w2.rows}, {"cols", p.w2.cols}, {"data", p.w2.data}};
    w["b2"] = p.b2;
  }
  j["weights"] = std::move(w);
  j["class_ids"] = model.proxies.class_ids;
  OrderedJson proxies = OrderedJson::array();
  for (std::size_t c = 0; c < model.proxies.num_classes(); ++c) {
    const auto row = model.proxies.proxy(c);
    proxies.push_back(std::vector<double>(row.begin(), row.end()));
  }
  j["proxies"] = std::move(proxies);
  j["norm"] = model.proxies.norm;
  j["project_embeddings"] = model.project_embeddings;
  j["project_proxies"] = model.project_proxies;
  return j;
}

namespace {

Matrix matrix_from_json(const json& j, const char* name) {
  Matrix m;
  m.rows = field(j, "rows").get<std::size_t>();
  m.cols = field(j, "cols").get<std::size_t>();
  m.data = number_array(field(j, "data"), name);
  if (m.data.size() != m.rows * m.cols) throw InvalidInput(std::string(name) + ": data size != rows*cols");
  return m;
}

}  // namespace

Model model_from_json(const json& j) {
  try {
    const int version = field(j, "schema_version").get<int>();
    if (version != kModelSchemaVersion) {
      throw InvalidInput("unsupported model schema_version " + std::to_string(version));
    }
    Model model;
    EmbedderParams& p = model.embedder;
    p.arch = parse_arch(string_field(j, "arch"));
    p.input_dim = field(j, "input_dim").get<std::size_t>();
    p.hidden_dim = field(j, "hidden_dim").get<std::size_t>();
    p.embedding_dim = field(j, "embedding_dim").get<std::size_t>();
    const json& w = field(j, "weights");
    p.w1 = matrix_from_json(field(w, "w1"), "w1");
    p.b1 = number_array(field(w, "b1"), "b1");
    if (p.arch == Architecture::kMlp1) {
      p.w2 = matrix_from_json(field(w, "w2"), "w2");
      p.b2 = number_array(field(w, "b2"), "b2");
    }
    p.validate();

    ProxySet& proxies = model.proxies;
    proxies.class_ids = field(j, "class_ids").get<std::vector<std::string>>();
    proxies.norm = number_field(j, "norm");
    const json& rows = field(j, "proxies");
    if (!rows.is_array()) throw InvalidInput("proxies must be an array");
    proxies.proxies = Matrix(rows.size(), p.embedding_dim);
    for (std::size_t c = 0; c < rows.size(); ++c) {
      const std::vector<double> r = number_array(rows[c], "proxy");
      if (r.size() != p.embedding_dim) throw InvalidInput("proxy dimension != embedding_dim");
      std::copy(r.begin(), r.end(), proxies.proxies.row(c).begin());
    }
    model.project_embeddings = field(j, "project_embeddings").get<bool>();
    model.project_proxies = field(j, "project_proxies").get<bool>();
    if (model.project_proxies) {
      proxies.validate();
    } else if (proxies.class_ids.size() != proxies.num_classes()) {
      throw InvalidInput("one proxy per class required");
    }
    return model;
  } catch (const json::exception& e) {
    throw InvalidInput(std::string("malformed model document: ") + e.what());
  }
}

}  // namespace logoproxy::io
