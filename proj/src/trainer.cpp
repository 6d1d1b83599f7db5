#include "logoproxy/trainer.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "logoproxy/error.hpp"
#include "logoproxy/random.hpp"

namespace logoproxy {

namespace {

double uniform01(Rng& rng) { return static_cast<double>(rng() >> 11) * 0x1.0p-53; }

void fill_xavier(Matrix& w, double magnitude, Rng& rng) {
  const double fan_avg = static_cast<double>(w.rows + w.cols) / 2.0;
  const double a = magnitude * std::sqrt(3.0 / fan_avg);
  for (double& x : w.data) x = (2.0 * uniform01(rng) - 1.0) * a;
}

// out += a ⊗ b
void add_outer(Matrix& out, std::span<const double> a, std::span<const double> b) {
  for (std::size_t r = 0; r < a.size(); ++r) {
    if (a[r] == 0.0) continue;
    auto row = out.row(r);
    for (std::size_t c = 0; c < b.size(); ++c) row[c] += a[r] * b[c];
  }
}

// y = W x + b
Vector affine(const Matrix& w, const Vector& b, std::span<const double> x) {
  Vector y(b);
  for (std::size_t r = 0; r < w.rows; ++r) y[r] += dot(w.row(r), x);
  return y;
}

void add_into(std::span<double> acc, std::span<const double> v, double scale = 1.0) {
  for (std::size_t i = 0; i < acc.size(); ++i) acc[i] += scale * v[i];
}

}  // namespace

bool is_proxy_loss(LossKind kind) {
  return kind == LossKind::kProxyTriplet || kind == LossKind::kProxyNca;
}

// --- EmbedderParams --------------------------------------------------------

EmbedderParams EmbedderParams::zeros_like(const EmbedderParams& p) {
  EmbedderParams z = p;
  for (auto t : z.tensors()) std::fill(t.begin(), t.end(), 0.0);
  return z;
}

std::vector<std::span<double>> EmbedderParams::tensors() {
  std::vector<std::span<double>> out{w1.data, b1};
  if (arch == Architecture::kMlp1) {
    out.emplace_back(w2.data);
    out.emplace_back(b2);
  }
  return out;
}

std::vector<std::span<const double>> EmbedderParams::tensors() const {
  std::vector<std::span<const double>> out{w1.data, b1};
  if (arch == Architecture::kMlp1) {
    out.emplace_back(w2.data);
    out.emplace_back(b2);
  }
  return out;
}

void EmbedderParams::validate() const {
  if (input_dim < 1 || embedding_dim < 1) throw InvalidInput("embedder dimensions must be >= 1");
  const std::size_t first_out = arch == Architecture::kMlp1 ? hidden_dim : embedding_dim;
  if (arch == Architecture::kMlp1 && hidden_dim < 1) throw InvalidInput("hidden_dim must be >= 1");
  auto check = [](const Matrix& m, std::size_t r, std::size_t c) {
    return m.rows == r && m.cols == c && m.data.size() == r * c;
  };
  bool ok = check(w1, first_out, input_dim) && b1.size() == first_out;
  if (arch == Architecture::kMlp1) {
    ok = ok && check(w2, embedding_dim, hidden_dim) && b2.size() == embedding_dim;
  }
  if (!ok) throw InvalidInput("embedder parameter shapes inconsistent with dimensions");
  for (auto t : tensors()) {
    if (!all_finite(t)) throw InvalidInput("non-finite embedder parameter");
  }
}

// --- TrainConfig / data ------------------------------------------------------

void TrainConfig::validate() const {
  if (!(learning_rate > 0.0)) throw InvalidInput("learning_rate must be positive");
  if (!(weight_decay >= 0.0)) throw InvalidInput("weight_decay must be >= 0");
  if (!(lr_decay_factor > 0.0)) throw InvalidInput("lr_decay_factor must be positive");
  if (lr_decay_every < 1) throw InvalidInput("lr_decay_every must be >= 1");
  if (batch_size < 1) throw InvalidInput("batch_size must be >= 1");
  if (epochs < 0) throw InvalidInput("epochs must be >= 0");
  if (!(beta1 >= 0.0 && beta1 < 1.0) || !(beta2 >= 0.0 && beta2 < 1.0)) {
    throw InvalidInput("Adam betas must lie in [0, 1)");
  }
  if (!(adam_epsilon > 0.0)) throw InvalidInput("adam_epsilon must be positive");
  if (!(proxy_norm > 0.0)) throw InvalidInput("proxy_norm must be positive");
  if (!(loss_config.margin >= 0.0)) throw InvalidInput("margin must be >= 0");
  if (!(margin_beta > 0.0)) throw InvalidInput("margin_beta must be positive");
  if (embedding_dim < 1) throw InvalidInput("embedding_dim must be >= 1");
  if (arch == Architecture::kMlp1 && hidden_dim < 1) throw InvalidInput("hidden_dim must be >= 1");
}

void LabeledFeatureSet::add(Vector feature, const std::string& label, std::string source_id) {
  auto it = std::find(classes.begin(), classes.end(), label);
  const std::size_t idx = static_cast<std::size_t>(it - classes.begin());
  if (it == classes.end()) classes.push_back(label);
  features.push_back(std::move(feature));
  labels.push_back(idx);
  source_ids.push_back(std::move(source_id));
}

void LabeledFeatureSet::validate() const {
  if (features.empty()) throw InvalidInput("feature set is empty");
  if (labels.size() != features.size()) throw InvalidInput("one label per feature row required");
  if (!source_ids.empty() && source_ids.size() != features.size()) {
    throw InvalidInput("source_ids must be empty or one per row");
  }
  const std::size_t d = dim();
  if (d == 0) throw InvalidInput("feature vectors must be nonempty");
  for (std::size_t i = 0; i < features.size(); ++i) {
    if (features[i].size() != d) {
      throw InvalidInput("row " + std::to_string(i) + ": feature dimension " +
                         std::to_string(features[i].size()) + ", expected " + std::to_string(d));
    }
    if (!all_finite(features[i])) throw InvalidInput("row " + std::to_string(i) + ": non-finite feature");
    if (labels[i] >= classes.size()) throw InvalidInput("row " + std::to_string(i) + ": label outside vocabulary");
  }
}

// --- embedder ---------------------------------------------------------------

EmbedderParams init_params(Architecture arch, std::size_t input_dim, std::size_t hidden_dim,
                           std::size_t embedding_dim, std::uint64_t seed, double magnitude) {
  if (input_dim < 1 || embedding_dim < 1 || (arch == Architecture::kMlp1 && hidden_dim < 1)) {
    throw InvalidInput("init_params: dimensions must be >= 1");
  }
  Rng rng(seed);
  EmbedderParams p;
  p.arch = arch;
  p.input_dim = input_dim;
  p.embedding_dim = embedding_dim;
  if (arch == Architecture::kLinear) {
    p.hidden_dim = 0;
    p.w1 = Matrix(embedding_dim, input_dim);
    p.b1.assign(embedding_dim, 0.0);
  } else {
    p.hidden_dim = hidden_dim;
    p.w1 = Matrix(hidden_dim, input_dim);
    p.b1.assign(hidden_dim, 0.0);
    p.w2 = Matrix(embedding_dim, hidden_dim);
    p.b2.assign(embedding_dim, 0.0);
  }
  fill_xavier(p.w1, magnitude, rng);
  if (arch == Architecture::kMlp1) fill_xavier(p.w2, magnitude, rng);
  return p;
}

Embedding project_norm(std::span<const double> v, double norm) {
  const double n = l2_norm(v);
  if (!(n > 1e-12)) throw DegenerateEmbedding("cannot project a near-zero vector onto the norm sphere");
  Embedding out(v.begin(), v.end());
  const double scale = norm / n;
  for (double& x : out) x *= scale;
  return out;
}

Vector project_norm_backward(std::span<const double> v, double norm,
                             std::span<const double> grad_out) {
  const double n = l2_norm(v);
  if (!(n > 1e-12)) throw DegenerateEmbedding("cannot project a near-zero vector onto the norm sphere");
  // J = (norm / n) (I - u u^T), u = v / n; J is symmetric.
  const double radial = dot(v, grad_out) / (n * n);
  Vector g(v.size());
  for (std::size_t i = 0; i < v.size(); ++i) g[i] = (norm / n) * (grad_out[i] - radial * v[i]);
  return g;
}

Embedding forward(const EmbedderParams& params, std::span<const double> features,
                  std::optional<double> norm, ForwardCache* cache) {
  if (features.size() != params.input_dim) {
    throw InvalidInput("forward: feature dimension " + std::to_string(features.size()) +
                       ", expected " + std::to_string(params.input_dim));
  }
  Vector raw;
  if (params.arch == Architecture::kLinear) {
    raw = affine(params.w1, params.b1, features);
  } else {
    Vector pre = affine(params.w1, params.b1, features);
    Vector hidden(pre.size());
    for (std::size_t i = 0; i < pre.size(); ++i) hidden[i] = std::max(0.0, pre[i]);
    raw = affine(params.w2, params.b2, hidden);
    if (cache != nullptr) cache->hidden_pre = std::move(pre);
  }
  Embedding e = norm ? project_norm(raw, *norm) : raw;
  if (cache != nullptr) cache->raw = std::move(raw);
  return e;
}

void backward(const EmbedderParams& params, std::span<const double> features,
              const ForwardCache& cache, std::span<const double> grad_embedding,
              std::optional<double> norm, EmbedderParams& grads) {
  const Vector g_raw = norm ? project_norm_backward(cache.raw, *norm, grad_embedding)
                            : Vector(grad_embedding.begin(), grad_embedding.end());
  if (params.arch == Architecture::kLinear) {
    add_outer(grads.w1, g_raw, features);
    add_into(grads.b1, g_raw);
    return;
  }
  Vector hidden(cache.hidden_pre.size());
  for (std::size_t i = 0; i < hidden.size(); ++i) hidden[i] = std::max(0.0, cache.hidden_pre[i]);
  add_outer(grads.w2, g_raw, hidden);
  add_into(grads.b2, g_raw);

  Vector g_pre(params.hidden_dim, 0.0);
  for (std::size_t r = 0; r < params.w2.rows; ++r) {
    add_into(g_pre, params.w2.row(r), g_raw[r]);
  }
  for (std::size_t i = 0; i < g_pre.size(); ++i) {
    if (!(cache.hidden_pre[i] > 0.0)) g_pre[i] = 0.0;
  }
  add_outer(grads.w1, g_pre, features);
  add_into(grads.b1, g_pre);
}

// --- optimizer ---------------------------------------------------------------

double effective_learning_rate(const TrainConfig& cfg, int epoch) {
  return cfg.learning_rate * std::pow(cfg.lr_decay_factor, epoch / cfg.lr_decay_every);
}

void adam_update(std::span<double> param, std::span<const double> grad, AdamMoments& moments,
                 long step, double lr, const TrainConfig& cfg) {
  if (grad.size() != param.size()) throw InvalidInput("adam_update: gradient shape mismatch");
  for (std::size_t i = 0; i < grad.size(); ++i) {
    if (!std::isfinite(grad[i])) {
      throw NonFiniteError("adam_update: non-finite gradient at coordinate " + std::to_string(i) +
                           " (step " + std::to_string(step) + ")");
    }
  }
  if (moments.first.size() != param.size()) moments.first.assign(param.size(), 0.0);
  if (moments.second.size() != param.size()) moments.second.assign(param.size(), 0.0);

  const double bias1 = 1.0 - std::pow(cfg.beta1, static_cast<double>(step));
  const double bias2 = 1.0 - std::pow(cfg.beta2, static_cast<double>(step));
  for (std::size_t i = 0; i < param.size(); ++i) {
    param[i] -= lr * cfg.weight_decay * param[i];
    double& m = moments.first[i];
    double& v = moments.second[i];
    m = cfg.beta1 * m + (1.0 - cfg.beta1) * grad[i];
    v = cfg.beta2 * v + (1.0 - cfg.beta2) * grad[i] * grad[i];
    const double m_hat = m / bias1;
    const double v_hat = v / bias2;
    param[i] -= lr * m_hat / (std::sqrt(v_hat) + cfg.adam_epsilon);
  }
}

void adam_step(Model& model, const ModelGradients& grads, OptimizerState& state,
               const TrainConfig& cfg, int epoch) {
  auto params = model.embedder.tensors();
  auto g = grads.embedder.tensors();
  if (params.size() != g.size()) throw InvalidInput("adam_step: gradient architecture mismatch");
  params.emplace_back(model.proxies.proxies.data);
  g.emplace_back(grads.proxies.data);

  if (state.moments.size() != params.size()) state.moments.assign(params.size(), AdamMoments{});
  ++state.step;
  const double lr = effective_learning_rate(cfg, epoch);
  for (std::size_t t = 0; t < params.size(); ++t) {
    adam_update(params[t], g[t], state.moments[t], state.step, lr, cfg);
  }
  if (model.project_proxies) {
    Matrix& p = model.proxies.proxies;
    for (std::size_t c = 0; c < p.rows; ++c) {
      const Embedding projected = project_norm(p.row(c), model.proxies.norm);
      std::copy(projected.begin(), projected.end(), p.row(c).begin());
    }
  }
}

// --- batch objective ------------------------------------------------------------

BatchLoss batch_loss(const Model& model, const LabeledFeatureSet& data,
                     std::span<const std::size_t> batch, const TrainConfig& cfg) {
  if (batch.empty()) throw InvalidInput("batch_loss: empty batch");
  const std::size_t dim = model.embedder.embedding_dim;
  const std::optional<double> norm = model.embedding_norm();

  std::vector<ForwardCache> caches(batch.size());
  std::vector<Embedding> emb(batch.size());
  for (std::size_t i = 0; i < batch.size(); ++i) {
    emb[i] = forward(model.embedder, data.features[batch[i]], norm, &caches[i]);
  }

  // Loss sees the proxies after projection; gradients flow back through it.
  ProxySet effective = model.proxies;
  if (model.project_proxies) {
    for (std::size_t c = 0; c < effective.num_classes(); ++c) {
      const Embedding p = project_norm(model.proxies.proxy(c), model.proxies.norm);
      std::copy(p.begin(), p.end(), effective.proxies.row(c).begin());
    }
  }

  std::vector<Vector> g_emb(batch.size(), Vector(dim, 0.0));
  Matrix g_proxy(effective.num_classes(), dim);
  double total = 0.0;
  std::size_t terms = 0;

  auto label_of = [&](std::size_t i) { return data.labels[batch[i]]; };

  switch (cfg.loss) {
    case LossKind::kProxyTriplet:
    case LossKind::kProxyNca:
      for (std::size_t i = 0; i < batch.size(); ++i) {
        const LossResult r = cfg.loss == LossKind::kProxyTriplet
                                 ? proxy_triplet_loss(emb[i], label_of(i), effective, cfg.loss_config)
                                 : proxy_nca_loss(emb[i], label_of(i), effective, cfg.loss_config);
        total += r.value;
        ++terms;
        add_into(g_emb[i], r.grad_x);
        for (std::size_t c = 0; c < r.grad_refs.size(); ++c) add_into(g_proxy.row(c), r.grad_refs[c]);
      }
      break;
    case LossKind::kCrossEntropy:
      for (std::size_t i = 0; i < batch.size(); ++i) {
        Vector logits(effective.num_classes());
        for (std::size_t c = 0; c < logits.size(); ++c) logits[c] = dot(emb[i], effective.proxy(c));
        const CrossEntropyResult r = cross_entropy_loss(logits, label_of(i));
        total += r.value;
        ++terms;
        for (std::size_t c = 0; c < logits.size(); ++c) {
          add_into(g_emb[i], effective.proxy(c), r.grad_logits[c]);
          add_into(g_proxy.row(c), emb[i], r.grad_logits[c]);
        }
      }
      break;
    case LossKind::kTriplet:
      for (std::size_t a = 0; a < batch.size(); ++a) {
        for (std::size_t p = 0; p < batch.size(); ++p) {
          if (p == a || label_of(p) != label_of(a)) continue;
          for (std::size_t n = 0; n < batch.size(); ++n) {
            if (label_of(n) == label_of(a)) continue;
            const LossResult r = triplet_loss(emb[a], emb[p], emb[n], cfg.loss_config.margin);
            total += r.value;
            ++terms;
            add_into(g_emb[a], r.grad_x);
            add_into(g_emb[p], r.grad_refs[0]);
            add_into(g_emb[n], r.grad_refs[1]);
          }
        }
      }
      break;
    case LossKind::kMargin:
      for (std::size_t i = 0; i < batch.size(); ++i) {
        for (std::size_t j = i + 1; j < batch.size(); ++j) {
          const LossResult r = margin_loss(emb[i], emb[j], label_of(i) == label_of(j),
                                           cfg.loss_config.margin, cfg.margin_beta);
          total += r.value;
          ++terms;
          add_into(g_emb[i], r.grad_x);
          add_into(g_emb[j], r.grad_refs[0]);
        }
      }
      break;
  }

  BatchLoss out;
  out.grads.embedder = EmbedderParams::zeros_like(model.embedder);
  out.grads.proxies = Matrix(effective.num_classes(), dim);
  if (terms == 0) return out;

  const double scale = 1.0 / static_cast<double>(terms);
  out.value = total * scale;
  for (std::size_t i = 0; i < batch.size(); ++i) {
    for (double& g : g_emb[i]) g *= scale;
    backward(model.embedder, data.features[batch[i]], caches[i], g_emb[i], norm, out.grads.embedder);
  }
  for (std::size_t c = 0; c < g_proxy.rows; ++c) {
    auto row = g_proxy.row(c);
    for (double& g : row) g *= scale;
    const Vector g_raw = model.project_proxies
                             ? project_norm_backward(model.proxies.proxy(c), model.proxies.norm, row)
                             : Vector(row.begin(), row.end());
    std::copy(g_raw.begin(), g_raw.end(), out.grads.proxies.row(c).begin());
  }

  if (!std::isfinite(out.value)) throw NonFiniteError("batch loss is not finite");
  for (auto t : out.grads.embedder.tensors()) {
    if (!all_finite(t)) throw NonFiniteError("non-finite embedder gradient");
  }
  if (!all_finite(out.grads.proxies.data)) throw NonFiniteError("non-finite proxy gradient");
  return out;
}

// --- fit ----------------------------------------------------------------------

Model init_model(const LabeledFeatureSet& data, const TrainConfig& cfg) {
  Model model;
  model.embedder = init_params(cfg.arch, data.dim(), cfg.hidden_dim, cfg.embedding_dim, cfg.seed,
                               cfg.init_magnitude);
  model.project_embeddings = cfg.project_embeddings;
  model.project_proxies = cfg.project_proxies;

  ProxySet& proxies = model.proxies;
  proxies.class_ids = data.classes;
  proxies.norm = cfg.proxy_norm;
  proxies.proxies = Matrix(data.classes.size(), cfg.embedding_dim);
  Rng rng(cfg.seed + 1);
  std::normal_distribution<double> gauss(0.0, 1.0);
  for (std::size_t c = 0; c < proxies.num_classes(); ++c) {
    auto row = proxies.proxies.row(c);
    for (double& x : row) x = gauss(rng);
    const Embedding p = project_norm(row, cfg.proxy_norm);
    std::copy(p.begin(), p.end(), row.begin());
  }
  return model;
}

FitResult fit(const LabeledFeatureSet& data, const TrainConfig& cfg, const StepObserver& on_step) {
  cfg.validate();
  data.validate();
  if (is_proxy_loss(cfg.loss) && data.classes.size() < 2) {
    throw InvalidInput("proxy losses need at least two classes (got " +
                       std::to_string(data.classes.size()) + ")");
  }

  FitResult result{init_model(data, cfg), {}};
  OptimizerState state;
  std::vector<std::size_t> order(data.size());
  std::iota(order.begin(), order.end(), 0);
  Rng shuffle_rng(cfg.seed + 2);

  for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
    seeded_shuffle(order, shuffle_rng);
    double sum = 0.0;
    std::size_t batches = 0;
    for (std::size_t start = 0; start < order.size(); start += cfg.batch_size) {
      const std::size_t end = std::min(order.size(), start + cfg.batch_size);
      const std::span<const std::size_t> batch(order.data() + start, end - start);
      const std::string where = "epoch " + std::to_string(epoch) + ", batch " + std::to_string(batches);
      try {
        BatchLoss bl = batch_loss(result.model, data, batch, cfg);
        adam_step(result.model, bl.grads, state, cfg, epoch);
        sum += bl.value;
      } catch (const NonFiniteError& e) {
        throw NonFiniteError(where + ": " + e.what());
      } catch (const DegenerateEmbedding& e) {
        throw DegenerateEmbedding(where + ": " + e.what());
      }
      if (on_step) on_step(epoch, batches, result.model);
      ++batches;
    }
    const double mean = sum / static_cast<double>(batches);
    if (!std::isfinite(mean)) {
      throw NonFiniteError("epoch " + std::to_string(epoch) + ": mean loss is not finite");
    }
    result.history.push_back(mean);
  }
  return result;
}

}  // namespace logoproxy
