#pragma once

#include <cstddef>
#include <cstdint>
#include <functional>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "logoproxy/linalg.hpp"
#include "logoproxy/losses.hpp"

namespace logoproxy {

enum class Architecture { kLinear, kMlp1 };

enum class LossKind { kProxyTriplet, kProxyNca, kTriplet, kMargin, kCrossEntropy };

// Embedder weights. LINEAR uses w1/b1 only (embedding_dim x input_dim).
// MLP1 maps input -> hidden through w1/b1 and a rectifier, then
// hidden -> embedding through w2/b2.
struct EmbedderParams {
  Architecture arch = Architecture::kLinear;
  std::size_t input_dim = 0;
  std::size_t hidden_dim = 0;
  std::size_t embedding_dim = 0;
  Matrix w1;
  Vector b1;
  Matrix w2;
  Vector b2;

  // Same shapes, all zeros.
  static EmbedderParams zeros_like(const EmbedderParams& p);

  std::vector<std::span<double>> tensors();
  std::vector<std::span<const double>> tensors() const;

  void validate() const;
  bool operator==(const EmbedderParams&) const = default;
};

struct TrainConfig {
  Architecture arch = Architecture::kLinear;
  std::size_t hidden_dim = 64;
  std::size_t embedding_dim = 128;

  double learning_rate = 1e-4;
  double weight_decay = 5e-4;
  double lr_decay_factor = 0.8;
  int lr_decay_every = 20;
  std::size_t batch_size = 32;
  int epochs = 100;
  std::uint64_t seed = 0;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double adam_epsilon = 1e-8;
  double init_magnitude = 2.0;

  LossKind loss = LossKind::kProxyTriplet;
  LossConfig loss_config;
  double margin_beta = 1.2;  // fixed beta of margin_loss

  double proxy_norm = 1.0;
  bool project_embeddings = true;
  bool project_proxies = true;

  void validate() const;
};

struct AdamMoments {
  Vector first;
  Vector second;
};

// One AdamMoments per parameter tensor, in EmbedderParams::tensors() order
// followed by the proxy matrix.
struct OptimizerState {
  std::vector<AdamMoments> moments;
  long step = 0;
};

struct LabeledFeatureSet {
  std::vector<Vector> features;
  std::vector<std::size_t> labels;        // index into classes
  std::vector<std::string> classes;       // vocabulary, first-seen order
  std::vector<std::string> source_ids;    // empty or one per row

  std::size_t size() const { return features.size(); }
  std::size_t dim() const { return features.empty() ? 0 : features.front().size(); }

  // Appends a row, extending the vocabulary with unseen labels.
  void add(Vector feature, const std::string& label, std::string source_id = {});

  void validate() const;
};

// Xavier-uniform weights in [-a, a], a = magnitude * sqrt(3 / ((fan_in +
// fan_out) / 2)); zero biases. hidden_dim is ignored for kLinear.
EmbedderParams init_params(Architecture arch, std::size_t input_dim, std::size_t hidden_dim,
                           std::size_t embedding_dim, std::uint64_t seed,
                           double magnitude = 2.0);

// v * norm / ‖v‖. Throws DegenerateEmbedding if ‖v‖ <= 1e-12.
Embedding project_norm(std::span<const double> v, double norm);

// Pulls a gradient on project_norm(v, norm) back to v.
Vector project_norm_backward(std::span<const double> v, double norm,
                             std::span<const double> grad_out);

struct ForwardCache {
  Vector hidden_pre;  // MLP1 pre-activation
  Vector raw;         // embedding before norm projection
};

// Embeds one feature vector. When `norm` is set the output is projected onto
// the sphere of that radius.
Embedding forward(const EmbedderParams& params, std::span<const double> features,
                  std::optional<double> norm, ForwardCache* cache = nullptr);

// Accumulates d(loss)/d(params) into `grads` given d(loss)/d(embedding).
void backward(const EmbedderParams& params, std::span<const double> features,
              const ForwardCache& cache, std::span<const double> grad_embedding,
              std::optional<double> norm, EmbedderParams& grads);

// Embedder plus the jointly learned proxies.
struct Model {
  EmbedderParams embedder;
  ProxySet proxies;
  bool project_embeddings = true;
  bool project_proxies = true;

  std::optional<double> embedding_norm() const {
    return project_embeddings ? std::optional<double>(proxies.norm) : std::nullopt;
  }
  Embedding embed(std::span<const double> features) const {
    return forward(embedder, features, embedding_norm());
  }
};

struct ModelGradients {
  EmbedderParams embedder;
  Matrix proxies;
};

// base_lr * decay_factor^floor(epoch / decay_every)
double effective_learning_rate(const TrainConfig& cfg, int epoch);

// Bias-corrected Adam on one tensor with decoupled weight decay
// (p <- p - lr * wd * p before the moment update). `step` is 1-based.
// Throws NonFiniteError on a non-finite gradient.
void adam_update(std::span<double> param, std::span<const double> grad, AdamMoments& moments,
                 long step, double lr, const TrainConfig& cfg);

// adam_update over every model tensor, then re-projects proxies to the
// shared norm if model.project_proxies.
void adam_step(Model& model, const ModelGradients& grads, OptimizerState& state,
               const TrainConfig& cfg, int epoch);

struct BatchLoss {
  double value = 0.0;
  ModelGradients grads;
};

// Mean loss over the batch and its gradient with respect to every embedder
// weight and every raw proxy. Per-item results are reduced in sample order.
// Proxy losses and cross-entropy use one term per sample; the triplet loss
// averages over all in-batch (anchor, positive, negative) triplets and the
// margin loss over all in-batch pairs.
BatchLoss batch_loss(const Model& model, const LabeledFeatureSet& data,
                     std::span<const std::size_t> batch, const TrainConfig& cfg);

Model init_model(const LabeledFeatureSet& data, const TrainConfig& cfg);

struct FitResult {
  Model model;
  std::vector<double> history;  // mean batch loss per epoch
};

// Called after every optimizer step.
using StepObserver = std::function<void(int epoch, std::size_t batch, const Model& model)>;

FitResult fit(const LabeledFeatureSet& data, const TrainConfig& cfg,
              const StepObserver& on_step = {});

bool is_proxy_loss(LossKind kind);

}  // namespace logoproxy
