#include <doctest.h>

#include <cmath>
#include <numbers>
#include <numeric>

#include "helpers.hpp"
#include "oracles.hpp"
#include "mfusion/autodiff.hpp"
#include "mfusion/error.hpp"
#include "mfusion/prondf.hpp"

using namespace mfusion;
using namespace testing;

namespace {

ProNdfConfig small_config() {
  ProNdfConfig cfg;
  cfg.block3_hidden = {6};
  cfg.weights = {0.05, 0.2, 1e-3, 0.1};
  cfg.sigma_p = 0.8;
  return cfg;
}

TrainConfig quick_train(std::uint64_t seed = 3) {
  TrainConfig tc;
  tc.epochs = 40;
  tc.patience = 40;
  tc.batch_size = 8;
  tc.m_train = 8;
  tc.m_pred = 25;
  tc.seed = seed;
  return tc;
}

MixedDataset fusion_data() {
  return testing::two_source_1d([](double x) { return std::sin(3.0 * x); },
                                [](double x) { return std::sin(3.0 * x) + 0.3 * x; }, 6, 20);
}

}  // namespace

TEST_CASE("interval score hand cases") {
  CHECK(interval_score_bounds(1.5, 0.0, 1.0) == doctest::Approx(21.0).epsilon(1e-14));
  CHECK(interval_score_bounds(-0.25, 0.0, 1.0) == doctest::Approx(11.0).epsilon(1e-14));
  CHECK(interval_score_bounds(0.3, 0.0, 1.0) == 1.0);
  CHECK(interval_score_bounds(0.0, 0.0, 1.0) == 1.0);
  CHECK(interval_score_bounds(1.5, 0.0, 1.0, 0.5) == doctest::Approx(3.0).epsilon(1e-14));
  CHECK(interval_score(0.0, 0.0, 1.0) == doctest::Approx(2.0 * 1.96).epsilon(1e-14));
  CHECK_THROWS_AS(interval_score(0.0, 0.0, 0.0), InvalidArgument);
}

TEST_CASE("interval score properties") {
  RngStream rng(4, "is");
  for (int trial = 0; trial < 500; ++trial) {
    const double mu = rng.normal(), sigma = 0.01 + rng.uniform(), y = 3.0 * rng.normal();
    const double s = interval_score(y, mu, sigma);
    CHECK(s >= 2.0 * kPiHalfWidth * sigma - 1e-12);
    // Moving y further from the centre never lowers the score.
    const double further = y + (y >= mu ? 0.1 : -0.1);
    CHECK(interval_score(further, mu, sigma) >= s - 1e-12);
    // With y at the centre the score grows with sigma.
    CHECK(interval_score(mu, mu, sigma * 1.1) > interval_score(mu, mu, sigma));
  }
}

TEST_CASE("ensemble moments") {
  const std::vector<double> one_mu{0.7}, one_sigma{0.3};
  const auto one = ensemble_moments(one_mu, one_sigma);
  CHECK(one.mean == 0.7);
  CHECK(one.variance == 0.3 * 0.3);

  const std::vector<double> mu{0.0, 2.0}, sigma{1.0, 1.0};
  const auto two = ensemble_moments(mu, sigma);
  CHECK(two.mean == 1.0);
  CHECK(two.variance == 2.0);

  const std::vector<double> same_mu(10, -1.5), same_sigma(10, 0.25);
  const auto same = ensemble_moments(same_mu, same_sigma);
  CHECK(same.mean == doctest::Approx(-1.5).epsilon(1e-15));
  CHECK(same.variance == doctest::Approx(0.0625).epsilon(1e-14));

  CHECK_THROWS_AS(ensemble_moments(std::vector<double>{}, std::vector<double>{}), InvalidArgument);
  CHECK_THROWS_AS(ensemble_moments(mu, one_sigma), InvalidArgument);
}

TEST_CASE("softplus is stable at both tails") {
  CHECK(softplus(0.0) == doctest::Approx(std::log(2.0)).epsilon(1e-15));
  CHECK(softplus(800.0) == 800.0);
  CHECK(softplus(-800.0) == 0.0);
  CHECK(softplus(-30.0) == doctest::Approx(std::exp(-30.0)).epsilon(1e-12));
}

TEST_CASE("parameter layout") {
  const auto d = testing::random_dataset(1, 12, 2, 3, 3);
  const auto lay = ProNdfLayout::make(d.schema(), small_config());
  CHECK(lay.c1 == 5 * 3 + 5);
  CHECK(lay.c2 == 2 * 5 + 2);
  CHECK(lay.raw1 == lay.mu1 + lay.c1);
  CHECK(lay.mu2 == lay.raw1 + lay.c1 * (lay.c1 + 1) / 2);
  CHECK(lay.block2 == lay.raw2 + lay.c2 * (lay.c2 + 1) / 2);
  CHECK(lay.block3_inputs() == 2 + 2 + 2);
  CHECK(lay.block3_shape.outputs() == 2);
  CHECK(lay.total == lay.block3 + lay.block3_shape.parameter_count());

  ProNdfConfig v3 = small_config();
  v3.variant = {false, true, false};
  const auto no_cat = ProNdfLayout::make(fusion_data().schema(), v3);
  CHECK_FALSE(no_cat.has_block2());
  CHECK(no_cat.block3 == no_cat.block2);
  CHECK(no_cat.block3_shape.outputs() == 1);
}

TEST_CASE("loss matches an independent scalar-tape rebuild") {
  struct Variant {
    const char* name;
    ProNdfVariant v;
  };
  const Variant variants[] = {{"base", {true, true, true}},
                              {"no interval score", {false, true, true}},
                              {"deterministic block 1", {true, false, true}},
                              {"deterministic output", {false, true, false}}};
  for (const auto& [name, v] : variants) {
    CAPTURE(name);
    ProNdfConfig cfg = small_config();
    cfg.variant = v;
    const LossCase lc(testing::random_dataset(7, 9, 2, 3, 3), cfg, 3, 11);
    const TapeFunction f = [&](Tape& tape, std::span<const Var> p) {
      return tape_loss(tape, p, lc.layout, lc.config, lc.batch, lc.eps);
    };
    std::vector<double> tape_grad;
    const double tape_value = value_and_grad(f, lc.params, tape_grad);
    CHECK(lc.value(lc.params) == doctest::Approx(tape_value).epsilon(1e-11));
    CHECK(testing::max_rel_error(lc.gradient(), tape_grad, 1e-6) <= 1e-8);
  }
}

TEST_CASE("loss gradient agrees with central differences") {
  const ProNdfVariant variants[] = {{true, true, true}, {false, true, true}, {true, false, true}, {false, true, false}};
  for (const auto& v : variants) {
    for (int with_categorical = 0; with_categorical < 2; ++with_categorical) {
      ProNdfConfig cfg = small_config();
      cfg.variant = v;
      const MixedDataset d = with_categorical ? testing::random_dataset(2, 10, 1, 2, 2) : fusion_data();
      const LossCase lc(d, cfg, 4, 5);
      const auto numeric = testing::fd_gradient([&](const std::vector<double>& p) { return lc.value(p); }, lc.params);
      CHECK(testing::max_rel_error(lc.gradient(), numeric) <= 1e-4);
    }
  }
}

TEST_CASE("loss terms") {
  ProNdfConfig cfg = small_config();
  cfg.weights = {0.0, 0.0, 0.0, 0.05};
  const LossCase lc(testing::random_dataset(3, 8, 1, 0, 2), cfg, 2, 9);
  const auto terms = prondf_loss(lc.layout, lc.config, lc.params.data(), lc.batch, lc.eps, nullptr);
  CHECK(terms.total == terms.data);
  CHECK(terms.kl != 0.0);
  CHECK(terms.is > 0.0);

  // Constant prediction equal to every target with unit sigma.
  ProNdfConfig det = small_config();
  det.variant = {true, false, true};
  det.weights = {0.0, 0.0, 0.0, 0.05};
  Schema schema;
  schema.numeric_names = {"x1"};
  const MixedDataset flat(schema, {{{{0.0}, {}, 1}, 0.0}, {{{1.0}, {}, 1}, 0.0}, {{{2.0}, {}, 1}, 0.0}});
  const auto lay = ProNdfLayout::make(schema, det);
  std::vector<double> p(static_cast<std::size_t>(lay.total), 0.0);
  const auto out_bias = static_cast<std::size_t>(lay.total - 2);
  p[out_bias + 1] = std::log(std::exp(1.0 - kSigmaFloor) - 1.0);
  const MixedDataset scaled = Standardizer::fit(flat).apply(flat);
  const std::vector<std::size_t> rows{0, 1, 2};
  const auto batch = make_batch(scaled, rows);
  const auto perfect = prondf_loss(lay, det, p.data(), batch, {}, nullptr);
  CHECK(perfect.data == doctest::Approx(0.5 * std::log(2.0 * std::numbers::pi)).epsilon(1e-12));
  CHECK(perfect.is == doctest::Approx(2.0 * kPiHalfWidth).epsilon(1e-12));
  CHECK(perfect.l2 == doctest::Approx(p[out_bias + 1] * p[out_bias + 1]).epsilon(1e-14));

  CHECK_THROWS_AS(prondf_loss(lay, det, p.data(), make_batch(scaled, std::vector<std::size_t>{}), {}, nullptr),
                  InvalidArgument);
  CHECK_THROWS_AS(prondf_loss(lc.layout, lc.config, lc.params.data(), lc.batch, {}, nullptr), InvalidArgument);
}

TEST_CASE("configuration checks") {
  const auto d = fusion_data();
  ProNdfConfig bad = small_config();
  bad.variant = {true, true, false};
  CHECK_THROWS_AS(ProNdfModel::train(d, bad, quick_train()), InvalidArgument);
  bad = small_config();
  bad.weights.gamma = 1.0;
  CHECK_THROWS_AS(ProNdfModel::train(d, bad, quick_train()), InvalidArgument);
  bad = small_config();
  bad.weights.alpha1 = -1.0;
  CHECK_THROWS_AS(ProNdfModel::train(d, bad, quick_train()), InvalidArgument);
  TrainConfig tc = quick_train();
  tc.m_train = 0;
  CHECK_THROWS_AS(ProNdfModel::train(d, small_config(), tc), InvalidArgument);
  CHECK_THROWS_AS(ProNdfModel::train(d.only_source(2), small_config(), quick_train()), InvalidArgument);
  CHECK_THROWS_AS(ProNdfModel::from_parts(d.schema(), Standardizer::fit(d), small_config(), {1.0, 2.0}, 10, 1, {}),
                  SchemaError);
}

TEST_CASE("training is deterministic for a fixed seed") {
  const auto d = testing::random_dataset(8, 24, 1, 2, 2);
  TrainHistory h1, h2, h3;
  const auto a = ProNdfModel::train(d, small_config(), quick_train(), &h1);
  const auto b = ProNdfModel::train(d, small_config(), quick_train(), &h2);
  const auto c = ProNdfModel::train(d, small_config(), quick_train(4), &h3);
  CHECK(h1.loss == h2.loss);
  CHECK(a.parameters() == b.parameters());
  CHECK(h1.loss != h3.loss);
  const auto pa = a.predict(d), pb = b.predict(d);
  for (std::size_t i = 0; i < pa.size(); ++i) {
    CHECK(pa[i].mean == pb[i].mean);
    CHECK(*pa[i].variance == *pb[i].variance);
  }
  for (double l : h1.loss) CHECK(std::isfinite(l));
  CHECK(h1.loss[static_cast<std::size_t>(h1.best_epoch)] == *std::min_element(h1.loss.begin(), h1.loss.end()));
}

TEST_CASE("early stopping keeps the best epoch") {
  TrainConfig tc = quick_train();
  tc.epochs = 400;
  tc.patience = 3;
  tc.learning_rate = 0.2;
  TrainHistory h;
  ProNdfModel::train(fusion_data(), small_config(), tc, &h);
  CHECK(h.early_stopped);
  CHECK(static_cast<int>(h.loss.size()) == h.best_epoch + 1 + tc.patience);
}

TEST_CASE("training reduces the loss and fits a smooth function") {
  TrainConfig tc = quick_train();
  tc.epochs = 300;
  tc.patience = 300;
  TrainHistory h;
  const auto d = fusion_data();
  const auto model = ProNdfModel::train(d, small_config(), tc, &h);
  CHECK(h.loss[static_cast<std::size_t>(h.best_epoch)] < h.loss.front());
  const auto pred = model.predict(d.only_source(1));
  double se = 0.0;
  for (std::size_t i = 0; i < pred.size(); ++i) se += std::pow(pred[i].mean - d.only_source(1).row(i).y, 2);
  CHECK(se / static_cast<double>(pred.size()) < 0.05);
}

TEST_CASE("constant targets are learned") {
  Schema schema;
  schema.numeric_names = {"x1"};
  schema.num_sources = 2;
  std::vector<Row> rows;
  for (int i = 0; i < 16; ++i) rows.push_back({{{i / 15.0}, {}, 1 + i % 2}, 3.5});
  const MixedDataset d(schema, rows);
  TrainConfig tc = quick_train();
  tc.epochs = 200;
  const auto model = ProNdfModel::train(d, small_config(), tc);
  for (const auto& p : model.predict(d)) {
    CHECK(std::abs(p.mean - 3.5) < 0.1);
    CHECK(std::isfinite(*p.variance));
  }
}

TEST_CASE("predictions follow the law of total variance") {
  const auto d = testing::random_dataset(9, 20, 1, 2, 2);
  const auto model = ProNdfModel::train(d, small_config(), quick_train());
  Matrix mu, sigma;
  model.predict_realizations(d, model.m_pred(), mu, sigma);
  CHECK(sigma.minCoeff() >= kSigmaFloor);
  const auto pred = model.predict(d);
  const double scale = model.standardizer().y_scale();
  for (Eigen::Index i = 0; i < mu.rows(); ++i) {
    const double mean = mu.row(i).mean();
    const double within = sigma.row(i).array().square().mean();
    const double between = (mu.row(i).array() - mean).square().mean();
    const auto& p = pred[static_cast<std::size_t>(i)];
    CHECK(p.mean == doctest::Approx(model.standardizer().invert_y(mean)).epsilon(1e-12));
    CHECK(*p.variance == doctest::Approx((within + between) * scale * scale).epsilon(1e-10));
    CHECK(*p.variance > 0.0);
  }
}

TEST_CASE("a single realization reports its own variance") {
  const auto d = fusion_data();
  const auto trained = ProNdfModel::train(d, small_config(), quick_train());
  const auto one = ProNdfModel::from_parts(trained.schema(), trained.standardizer(), trained.config(),
                                           trained.parameters(), 1, trained.seed(), {});
  Matrix mu, sigma;
  one.predict_realizations(d, 1, mu, sigma);
  const auto pred = one.predict(d);
  const double scale = one.standardizer().y_scale();
  for (Eigen::Index i = 0; i < mu.rows(); ++i) {
    CHECK(*pred[static_cast<std::size_t>(i)].variance == sigma(i, 0) * sigma(i, 0) * scale * scale);
  }
}

TEST_CASE("deterministic output head") {
  ProNdfConfig cfg = small_config();
  cfg.variant = {false, true, false};
  const auto d = fusion_data();
  const auto model = ProNdfModel::train(d, cfg, quick_train());
  Matrix mu, sigma;
  model.predict_realizations(d, 5, mu, sigma);
  CHECK(sigma.isZero(0.0));
  for (const auto& p : model.predict(d)) CHECK(*p.variance >= 0.0);
}

TEST_CASE("fidelity manifold") {
  const auto d = fusion_data();
  const auto model = ProNdfModel::train(d, small_config(), quick_train());
  const auto pts = model.fidelity_manifold(3);
  REQUIRE(pts.size() == 6);
  for (std::size_t k = 0; k < pts.size(); ++k) {
    CHECK(pts[k].source == 1 + static_cast<int>(k / 3));
    CHECK(pts[k].realization == static_cast<int>(k % 3));
  }
  // Realizations differ under a stochastic Block 1 and repeat for a fixed seed.
  CHECK(pts[0].z1 != pts[1].z1);
  const auto again = model.fidelity_manifold(3);
  CHECK(again[4].z2 == pts[4].z2);
  const auto dist = model.source_distances(50);
  CHECK(dist[0] == 0.0);
  CHECK(dist[1] > 0.0);
  CHECK_THROWS_AS(model.fidelity_manifold(0), InvalidArgument);

  ProNdfConfig det = small_config();
  det.variant = {true, false, true};
  const auto fixed = ProNdfModel::train(d, det, quick_train());
  const auto flat = fixed.fidelity_manifold(4);
  for (int r = 1; r < 4; ++r) {
    CHECK(flat[static_cast<std::size_t>(r)].z1 == flat[0].z1);
    CHECK(flat[static_cast<std::size_t>(r)].z2 == flat[0].z2);
  }
}

TEST_CASE("categorical manifold") {
  const auto d = testing::random_dataset(12, 18, 1, 3, 2);
  const auto model = ProNdfModel::train(d, small_config(), quick_train());
  const auto pts = model.categorical_manifold();
  REQUIRE(pts.size() == 3);
  CHECK(pts[0].combo == "L0");
  CHECK(pts[1].combo == "L1");
  CHECK(pts[2].combo == "L2");
  for (const auto& p : pts) {
    // Block 2 ends in an identity layer fed by sigmoid units, so values are finite.
    CHECK(std::isfinite(p.z1));
    CHECK(std::isfinite(p.z2));
  }
  const auto none = ProNdfModel::train(fusion_data(), small_config(), quick_train());
  CHECK_THROWS_AS(none.categorical_manifold(), InvalidArgument);
}

TEST_CASE("predicting an unseen source is rejected") {
  const auto model = ProNdfModel::train(fusion_data(), small_config(), quick_train());
  Schema wide;
  wide.numeric_names = {"x1"};
  wide.num_sources = 3;
  const MixedDataset q(wide, {{{{0.1}, {}, 3}, 0.0}});
  CHECK_THROWS_AS(model.predict(q), SchemaError);
}
