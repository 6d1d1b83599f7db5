#include <cmath>
#include <numeric>
#include <random>

#include "doctest.h"
#include "logoproxy/error.hpp"
#include "logoproxy/trainer.hpp"
#include "oracles.hpp"
#include "training_fixtures.hpp"

using namespace logoproxy;

TEST_CASE("init_params") {
  const EmbedderParams a = init_params(Architecture::kMlp1, 10, 7, 4, 42);
  const EmbedderParams b = init_params(Architecture::kMlp1, 10, 7, 4, 42);
  CHECK(a == b);
  CHECK_FALSE(a == init_params(Architecture::kMlp1, 10, 7, 4, 43));
  CHECK(a.w1.rows == 7);
  CHECK(a.w1.cols == 10);
  CHECK(a.w2.rows == 4);
  CHECK(a.w2.cols == 7);
  for (double x : a.b1) CHECK(x == 0.0);
  for (double x : a.b2) CHECK(x == 0.0);
  const double bound1 = 2.0 * std::sqrt(3.0 / 8.5);
  for (double x : a.w1.data) CHECK(std::abs(x) <= bound1);

  const EmbedderParams lin = init_params(Architecture::kLinear, 10, 99, 4, 1);
  CHECK(lin.w1.rows == 4);
  CHECK(lin.w2.data.empty());
  CHECK(lin.b2.empty());
  CHECK_THROWS_AS(init_params(Architecture::kLinear, 0, 1, 4, 1), InvalidInput);
}

TEST_CASE("init_params: weight variance matches the uniform bound") {
  // 10 seeds x 1024 weights (64 -> 16).
  double sum = 0.0, sum_sq = 0.0;
  std::size_t n = 0;
  for (std::uint64_t seed = 0; seed < 10; ++seed) {
    for (double x : init_params(Architecture::kLinear, 64, 1, 16, seed).w1.data) {
      sum += x;
      sum_sq += x * x;
      ++n;
    }
  }
  const double mean = sum / static_cast<double>(n);
  const double var = sum_sq / static_cast<double>(n) - mean * mean;
  const double expected = 4.0 * (3.0 / 40.0) / 3.0;
  CHECK(std::abs(var - expected) / expected < 0.05);
}

TEST_CASE("project_norm") {
  const Embedding p = project_norm(Vector{3, 4}, 1.0);
  CHECK(p[0] == doctest::Approx(0.6));
  CHECK(p[1] == doctest::Approx(0.8));
  const Vector on_sphere{0.6, 0.0, 0.8};
  const Embedding same = project_norm(on_sphere, 1.0);
  for (std::size_t i = 0; i < 3; ++i) CHECK(std::abs(same[i] - on_sphere[i]) < 1e-12);
  CHECK_THROWS_AS(project_norm(Vector{0, 0}, 1.0), DegenerateEmbedding);
  CHECK_THROWS_AS(project_norm(Vector{1e-13, 0}, 1.0), DegenerateEmbedding);

  std::mt19937_64 rng(6);
  for (int i = 0; i < 200; ++i) {
    const Vector v = oracle::random_vector(rng, 9, std::exp(std::uniform_real_distribution<double>(-5, 5)(rng)));
    const double norm = std::uniform_real_distribution<double>(0.1, 10)(rng);
    CHECK(std::abs(l2_norm(project_norm(v, norm)) - norm) < 1e-9);

    // Backward pass against finite differences of <g, project_norm(v)>.
    const Vector g = oracle::random_vector(rng, 9);
    const Vector analytic = project_norm_backward(v, norm, g);
    const Vector numeric = oracle::numeric_gradient(
        [&](const Vector& w) { return dot(g, project_norm(w, norm)); }, v, 1e-6 * l2_norm(v));
    CHECK(oracle::max_relative_error(analytic, numeric, 1e-6 * norm / l2_norm(v)) < 1e-5);
  }
}

TEST_CASE("forward: examples") {
  EmbedderParams p = init_params(Architecture::kLinear, 3, 1, 5, 0);
  std::fill(p.w1.data.begin(), p.w1.data.end(), 0.0);
  for (std::size_t i = 0; i < 3; ++i) p.w1(i, i) = 1.0;
  CHECK(forward(p, Vector{1, 2, 3}, std::nullopt) == Vector{1, 2, 3, 0, 0});

  EmbedderParams narrow = init_params(Architecture::kLinear, 3, 1, 2, 0);
  std::fill(narrow.w1.data.begin(), narrow.w1.data.end(), 0.0);
  narrow.w1(0, 0) = narrow.w1(1, 1) = 1.0;
  CHECK(forward(narrow, Vector{1, 2, 3}, std::nullopt) == Vector{1, 2});

  CHECK_THROWS_AS(forward(p, Vector{0, 0, 0}, 1.0), DegenerateEmbedding);
  CHECK_THROWS_AS(forward(p, Vector{1, 2}, 1.0), InvalidInput);

  // MLP1 rectifier: negative pre-activations are cut.
  EmbedderParams mlp = init_params(Architecture::kMlp1, 1, 2, 1, 0);
  mlp.w1.data = {1.0, -1.0};
  mlp.w2.data = {1.0, 10.0};
  mlp.b2 = {0.5};
  CHECK(forward(mlp, Vector{2.0}, std::nullopt) == Vector{2.5});
  CHECK(forward(mlp, Vector{-2.0}, std::nullopt) == Vector{20.5});
}

TEST_CASE("forward/backward: Jacobian-vector products match finite differences") {
  std::mt19937_64 rng(7);
  for (Architecture arch : {Architecture::kLinear, Architecture::kMlp1}) {
    for (std::optional<double> norm : {std::optional<double>(), std::optional<double>(1.5)}) {
      for (int trial = 0; trial < 20; ++trial) {
        EmbedderParams p = init_params(arch, 6, 5, 4, 100 + trial);
        for (auto t : p.tensors()) {
          for (double& x : t) x += 0.1 * std::normal_distribution<double>()(rng);
        }
        const Vector f = oracle::random_vector(rng, 6);
        Model m;
        m.embedder = p;
        Vector theta;
        for (auto t : p.tensors()) theta.insert(theta.end(), t.begin(), t.end());
        const Vector dir = oracle::random_vector(rng, theta.size());

        ForwardCache cache;
        forward(p, f, norm, &cache);
        EmbedderParams probe = p;
        auto embed_at = [&](double h) {
          Vector shifted = theta;
          for (std::size_t i = 0; i < shifted.size(); ++i) shifted[i] += h * dir[i];
          std::size_t k = 0;
          for (auto t : probe.tensors()) {
            for (double& x : t) x = shifted[k++];
          }
          return forward(probe, f, norm);
        };
        const Vector up = embed_at(1e-5), down = embed_at(-1e-5);
        for (std::size_t k = 0; k < 4; ++k) {
          Vector unit(4, 0.0);
          unit[k] = 1.0;
          EmbedderParams grads = EmbedderParams::zeros_like(p);
          backward(p, f, cache, unit, norm, grads);
          Vector row;
          for (auto t : std::as_const(grads).tensors()) row.insert(row.end(), t.begin(), t.end());
          const double analytic = dot(row, dir);
          const double numeric = (up[k] - down[k]) / 2e-5;
          CHECK(std::abs(analytic - numeric) <= 1e-4 * std::max(1.0, std::abs(analytic)));
        }
      }
    }
  }
}

TEST_CASE("learning-rate schedule") {
  const TrainConfig cfg;
  CHECK(effective_learning_rate(cfg, 0) == doctest::Approx(1e-4));
  CHECK(effective_learning_rate(cfg, 19) == doctest::Approx(1e-4));
  CHECK(effective_learning_rate(cfg, 20) == doctest::Approx(8e-5));
  CHECK(effective_learning_rate(cfg, 40) == doctest::Approx(6.4e-5).epsilon(1e-12));
  for (int e = 1; e < 500; ++e) {
    CHECK(effective_learning_rate(cfg, e) <= effective_learning_rate(cfg, e - 1));
  }
}

TEST_CASE("adam_update") {
  TrainConfig cfg;
  SUBCASE("zero gradient, zero decay leaves parameters unchanged") {
    cfg.weight_decay = 0.0;
    Vector p{1.0, -2.0, 3.0};
    const Vector before = p;
    AdamMoments m;
    for (long step = 1; step <= 5; ++step) adam_update(p, Vector(3, 0.0), m, step, 1e-3, cfg);
    CHECK(p == before);
  }
  SUBCASE("first step moves by about lr") {
    cfg.weight_decay = 0.0;
    Vector p{0.5};
    AdamMoments m;
    adam_update(p, Vector{1.0}, m, 1, 1e-4, cfg);
    CHECK(0.5 - p[0] == doctest::Approx(1e-4).epsilon(1e-6));
  }
  SUBCASE("decoupled decay shrinks before the moment update") {
    cfg.weight_decay = 0.5;
    Vector p{2.0};
    AdamMoments m;
    adam_update(p, Vector{0.0}, m, 1, 0.1, cfg);
    CHECK(p[0] == doctest::Approx(2.0 - 0.1 * 0.5 * 2.0));
  }
  SUBCASE("non-finite gradients abort") {
    Vector p{1.0};
    AdamMoments m;
    CHECK_THROWS_AS(adam_update(p, Vector{std::nan("")}, m, 1, 1e-3, cfg), NonFiniteError);
    CHECK_THROWS_AS(adam_update(p, Vector{INFINITY}, m, 1, 1e-3, cfg), NonFiniteError);
  }
}

TEST_CASE("adam_step re-projects proxies") {
  const LabeledFeatureSet data = fixtures::gaussian_clusters(3, 4, 5, 0.1, 1);
  TrainConfig cfg;
  cfg.embedding_dim = 4;
  cfg.proxy_norm = 2.5;
  cfg.learning_rate = 0.1;
  Model model = init_model(data, cfg);
  CHECK(model.proxies.max_norm_deviation() < 1e-12);
  std::vector<std::size_t> batch(data.size());
  std::iota(batch.begin(), batch.end(), 0);
  OptimizerState state;
  for (int step = 0; step < 10; ++step) {
    const BatchLoss bl = batch_loss(model, data, batch, cfg);
    adam_step(model, bl.grads, state, cfg, 0);
    CHECK(model.proxies.max_norm_deviation() < 1e-6);
  }
  CHECK(state.step == 10);
  CHECK(state.moments.size() == 3);  // w1, b1, proxies
}

TEST_CASE("batch_loss: end-to-end gradient matches finite differences") {
  for (Architecture arch : {Architecture::kLinear, Architecture::kMlp1}) {
    for (LossKind loss : {LossKind::kProxyTriplet, LossKind::kProxyNca, LossKind::kTriplet,
                          LossKind::kMargin, LossKind::kCrossEntropy}) {
      for (std::uint64_t seed = 0; seed < 3; ++seed) {
        CAPTURE(static_cast<int>(arch));
        CAPTURE(static_cast<int>(loss));
        CAPTURE(seed);
        CHECK(fixtures::end_to_end_gradient_error(arch, loss, seed) < 1e-3);
      }
    }
  }
}

TEST_CASE("fit") {
  TrainConfig cfg;
  cfg.epochs = 100;
  cfg.embedding_dim = 16;
  const LabeledFeatureSet data = fixtures::gaussian_clusters(10, 20, 32, 0.1, 3);

  SUBCASE("loss decreases on separable clusters") {
    const FitResult r = fit(data, cfg);
    REQUIRE(r.history.size() == 100);
    for (double v : r.history) CHECK(std::isfinite(v));
    CHECK(r.history.back() < r.history.front());
  }
  SUBCASE("deterministic given seed") {
    cfg.epochs = 5;
    const FitResult a = fit(data, cfg);
    const FitResult b = fit(data, cfg);
    CHECK(a.history == b.history);
    CHECK(a.model.embedder == b.model.embedder);
    CHECK(a.model.proxies.proxies == b.model.proxies.proxies);
    cfg.seed = 1;
    CHECK(fit(data, cfg).history != a.history);
  }
  SUBCASE("proxy norms hold after every step") {
    cfg.epochs = 3;
    cfg.learning_rate = 1e-2;
    std::size_t steps = 0;
    fit(data, cfg, [&](int, std::size_t, const Model& m) {
      ++steps;
      CHECK(m.proxies.max_norm_deviation() < 1e-6);
    });
    CHECK(steps == 3 * 7);
  }
  SUBCASE("every loss trains without non-finite values") {
    cfg.epochs = 3;
    for (LossKind loss : {LossKind::kProxyTriplet, LossKind::kProxyNca, LossKind::kTriplet,
                          LossKind::kMargin, LossKind::kCrossEntropy}) {
      for (Architecture arch : {Architecture::kLinear, Architecture::kMlp1}) {
        cfg.loss = loss;
        cfg.arch = arch;
        for (double v : fit(data, cfg).history) CHECK(std::isfinite(v));
      }
    }
  }
  SUBCASE("input errors") {
    LabeledFeatureSet single;
    single.add({1.0, 2.0}, "only");
    single.add({2.0, 1.0}, "only");
    CHECK_THROWS_AS(fit(single, cfg), InvalidInput);
    cfg.loss = LossKind::kProxyNca;
    CHECK_THROWS_AS(fit(single, cfg), InvalidInput);
    CHECK_THROWS_AS(fit(LabeledFeatureSet{}, TrainConfig{}), InvalidInput);
    TrainConfig bad;
    bad.batch_size = 0;
    CHECK_THROWS_AS(fit(data, bad), InvalidInput);
  }
  SUBCASE("degenerate embeddings carry epoch and batch") {
    LabeledFeatureSet zeros;
    zeros.add({0.0, 0.0}, "a");
    zeros.add({0.0, 0.0}, "b");
    cfg.epochs = 1;
    try {
      fit(zeros, cfg);
      FAIL("expected DegenerateEmbedding");
    } catch (const DegenerateEmbedding& e) {
      CHECK(std::string(e.what()).find("epoch 0, batch 0") != std::string::npos);
    }
  }
}

TEST_CASE("LabeledFeatureSet") {
  LabeledFeatureSet s;
  s.add({1, 2}, "b", "x");
  s.add({3, 4}, "a", "y");
  s.add({5, 6}, "b", "z");
  CHECK(s.classes == std::vector<std::string>{"b", "a"});
  CHECK(s.labels == std::vector<std::size_t>{0, 1, 0});
  CHECK_NOTHROW(s.validate());
  s.add({1}, "a");
  CHECK_THROWS_AS(s.validate(), InvalidInput);
}
