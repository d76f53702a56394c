#include <doctest.h>

#include <random>

#include "ditracker/refiner.hpp"
#include "ditracker/tracker.hpp"
#include "gradcheck.hpp"
#include "micro.hpp"

using namespace ditracker;
using testing::random_matrix;

namespace {

RefinerConfig small_refiner() {
  RefinerConfig c;
  c.width = 16;
  c.heads = 2;
  c.blocks = 2;
  c.fourier_bands = 3;
  c.embed_dim = 5;
  return c;
}

}  // namespace

TEST_CASE("initial estimate broadcasts the query point") {
  const auto e = init_tracks<double>({{1, {10.0, 20.0}}}, 5);
  REQUIRE(e.positions.rows() == 5);
  for (Index j = 0; j < 5; ++j) {
    CHECK(e.positions.value()(j, 0) == 10.0);
    CHECK(e.positions.value()(j, 1) == 20.0);
  }
  CHECK(e.vis_logits.value().isZero());
  CHECK(e.conf_logits.value().isZero());
  for (Index j = 0; j < 5; ++j) CHECK(sigmoid(e.vis_logits.value()(j, 0)) == 0.5);
  CHECK(init_tracks<double>({{0, {1.0, 2.0}}}, 1).positions.rows() == 1);
  CHECK_THROWS_AS(init_tracks<double>({{5, {0.0, 0.0}}}, 5), std::invalid_argument);
}

TEST_CASE("token width follows the Fourier layout") {
  CHECK(token_width(8, 128) == 2 * 34 + 2 + 128);
  CHECK(token_width(3, 5) == 2 * 14 + 2 + 5);
  const auto e = init_tracks<double>({{0, {3.0, 4.0}}, {2, {1.0, 1.0}}}, 4);
  const Var<double> tokens = assemble_tokens(e, Var<double>::constant(Matrix<double>::Zero(8, 5)), 3);
  CHECK(tokens.cols() == token_width(3, 5));
  CHECK(tokens.rows() == 8);
}

TEST_CASE("constant trajectories encode zero displacement on both sides") {
  const auto e = init_tracks<double>({{0, {3.0, 4.0}}}, 4);
  const Var<double> tokens = assemble_tokens(e, Var<double>::constant(Matrix<double>::Ones(4, 2)), 2);
  const Index fl = fourier_length(2);
  const RowVector<double> zero = fourier_encode(Point2D{0.0, 0.0}, 2).transpose();
  for (Index r = 0; r < 4; ++r) {
    CHECK((tokens.value().row(r).segment(0, fl) - zero).norm() == 0.0);
    CHECK((tokens.value().row(r).segment(fl, fl) - zero).norm() == 0.0);
  }
}

TEST_CASE("boundary frames use the zero-displacement code for the missing neighbour") {
  TrackEstimate<double> e = init_tracks<double>({{0, {0.0, 0.0}}}, 3);
  Matrix<double> p(3, 2);
  p << 0, 0, 1, 0, 3, 1;
  e.positions = Var<double>::constant(p);
  const Var<double> tokens = assemble_tokens(e, Var<double>::constant(Matrix<double>::Zero(3, 1)), 1);
  const Index fl = fourier_length(1);
  const RowVector<double> zero = fourier_encode(Point2D{0.0, 0.0}, 1).transpose();
  CHECK((tokens.value().row(0).segment(0, fl) - zero).norm() == 0.0);
  CHECK((tokens.value().row(2).segment(fl, fl) - zero).norm() == 0.0);
  const RowVector<double> step = fourier_encode(Point2D{1.0, 0.0}, 1).transpose();
  CHECK((tokens.value().row(0).segment(fl, fl) - step).norm() < 1e-12);
  CHECK((tokens.value().row(1).segment(0, fl) - step).norm() < 1e-12);
}

TEST_CASE("attention groups partition the rows by query and by frame") {
  const auto tg = time_groups(2, 3), pg = point_groups(2, 3);
  CHECK(tg == std::vector<std::vector<Index>>{{0, 1, 2}, {3, 4, 5}});
  CHECK(pg == std::vector<std::vector<Index>>{{0, 3}, {1, 4}, {2, 5}});
}

TEST_CASE("a zero output head leaves the estimate unchanged") {
  ParameterSet<double> params;
  Initializer init(1);
  const auto cfg = small_refiner();
  const Refiner<double> refiner(params, init, cfg);
  // Var copies share storage with the parameter.
  Var<double> w = refiner.head().weight, b = refiner.head().bias;
  w.mutable_value().setZero();
  b.mutable_value().setZero();
  std::mt19937_64 rng(2);
  const auto e = init_tracks<double>({{0, {3.0, 4.0}}, {1, {6.0, 2.0}}}, 3);
  const Var<double> tokens = assemble_tokens(e, Var<double>::constant(random_matrix(6, cfg.embed_dim, rng)), cfg.fourier_bands);
  const Var<double> delta = refiner(tokens, 2, 3);
  CHECK(delta.value().isZero());
  const auto next = apply_residuals(e, delta, true);
  CHECK(next.positions.value() == e.positions.value());
  CHECK(next.vis_logits.value() == e.vis_logits.value());
  CHECK(next.iteration == 1);
}

TEST_CASE("refiner outputs are equivariant to query permutations") {
  ParameterSet<double> params;
  Initializer init(3);
  const auto cfg = small_refiner();
  const Refiner<double> refiner(params, init, cfg);
  std::mt19937_64 rng(4);
  const Index nq = 3, f = 4, n = nq * f;
  const Matrix<double> tokens = random_matrix(n, token_width(cfg.fourier_bands, cfg.embed_dim), rng);
  const std::vector<Index> perm{2, 0, 1};
  Matrix<double> permuted(n, tokens.cols());
  for (Index a = 0; a < nq; ++a) permuted.middleRows(a * f, f) = tokens.middleRows(perm[static_cast<std::size_t>(a)] * f, f);
  const Matrix<double> out = refiner(Var<double>::constant(tokens), nq, f).value();
  const Matrix<double> out_p = refiner(Var<double>::constant(permuted), nq, f).value();
  for (Index a = 0; a < nq; ++a)
    CHECK((out_p.middleRows(a * f, f) - out.middleRows(perm[static_cast<std::size_t>(a)] * f, f)).cwiseAbs().maxCoeff() < 1e-10);
}

TEST_CASE("a single query runs point attention over one token") {
  ParameterSet<double> params;
  Initializer init(5);
  const auto cfg = small_refiner();
  const Refiner<double> refiner(params, init, cfg);
  std::mt19937_64 rng(6);
  const Matrix<double> tokens = random_matrix(3, token_width(cfg.fourier_bands, cfg.embed_dim), rng);
  const Matrix<double> out = refiner(Var<double>::constant(tokens), 1, 3).value();
  CHECK(out.rows() == 3);
  CHECK(out.cols() == 4);
  CHECK(out.allFinite());
}

TEST_CASE("refiner gradients match finite differences") {
  ParameterSet<double> params;
  Initializer init(7);
  RefinerConfig cfg = small_refiner();
  cfg.blocks = 1;
  const Refiner<double> refiner(params, init, cfg);
  std::mt19937_64 rng(8);
  const double err = testing::gradcheck([&](const std::vector<Var<double>>& v) { return refiner(v[0], 2, 3); },
                                        {random_matrix(6, token_width(cfg.fourier_bands, cfg.embed_dim), rng)});
  CHECK(err < 1e-5);
}

TEST_CASE("detached residual updates cut the gradient to the previous estimate") {
  auto e = init_tracks<double>({{0, {1.0, 1.0}}}, 2);
  e.positions = Var<double>(e.positions.value(), true);
  const Var<double> delta(Matrix<double>::Ones(2, 4), true);
  ad::backward(ad::sum(apply_residuals(e, delta, true).positions));
  CHECK_FALSE(e.positions.has_grad());
  CHECK(delta.has_grad());

  auto e2 = init_tracks<double>({{0, {1.0, 1.0}}}, 2);
  e2.positions = Var<double>(e2.positions.value(), true);
  ad::backward(ad::sum(apply_residuals(e2, Var<double>::constant(Matrix<double>::Ones(2, 4)), false).positions));
  REQUIRE(e2.positions.has_grad());
  CHECK(e2.positions.grad().isOnes());
}

TEST_CASE("one tracker iteration is one refinement step after initialization") {
  TrackerModel<double> model(testing::micro_tracker_config(), 21);
  const SyntheticClip clip = generate_clip(testing::micro_generator(4), 3);
  const std::vector<TrackQuery> queries{{0, {4.0, 5.0}}, {2, {17.5, 9.0}}};
  const auto one = model.track(clip.video, queries, 1);
  const auto three = model.track(clip.video, queries, 3);
  REQUIRE(one.iterations.size() == 1);
  REQUIRE(three.iterations.size() == 3);
  CHECK(one.final().iteration == 1);
  CHECK(one.final().positions.value() == three.iterations[0].positions.value());
  const auto again = model.track(clip.video, queries, 3);
  CHECK(again.final().positions.value() == three.final().positions.value());
}

TEST_CASE("each iteration samples its costs around the previous positions") {
  TrackerModel<double> model(testing::micro_tracker_config(), 22);
  const SyntheticClip clip = generate_clip(testing::micro_generator(3), 4);
  const std::vector<TrackQuery> queries{{1, {6.0, 7.0}}};
  std::vector<Matrix<double>> centers;
  TrackHooks<double> hooks;
  hooks.on_resample = [&](int, const Matrix<double>& c) { centers.push_back(c); };
  const auto out = model.track(clip.video, queries, 3, hooks);
  REQUIRE(centers.size() == 3);
  CHECK(centers[0] == init_tracks<double>(queries, 3).positions.value());
  CHECK(centers[1] == out.iterations[0].positions.value());
  CHECK(centers[2] == out.iterations[1].positions.value());
}

TEST_CASE("the tracker handles a single-frame clip") {
  TrackerModel<double> model(testing::micro_tracker_config(), 23);
  const SyntheticClip clip = generate_clip(testing::micro_generator(2), 5);
  const auto out = model.track(clip.video.select({0}), {{0, {3.0, 3.0}}}, 2);
  CHECK(out.final().positions.rows() == 1);
  CHECK(out.final().positions.value().allFinite());
}
