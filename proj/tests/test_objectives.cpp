#include "doctest.h"
#include "support.hpp"
#include "videxp/objectives.hpp"
#include "videxp/optimizer.hpp"

using namespace videxp;

TEST_CASE("preservation objective reference values") {
  const VideoTensor::Dims d{2, 4, 4, 1};
  const VideoTensor flat(d, 0.6);
  ConstantModel half = ConstantModel::binary(d, 0.5);
  const BlurSpec b{1.0};
  CHECK(preservation_objective(MaskVolume({2, 4, 4}), flat, half, 1, 3.0, b) == doctest::Approx(-0.5));

  const VideoTensor x = testing::random_video(d, 1);
  LinearSoftmaxModel lin = LinearSoftmaxModel::random(d, 3, 2, 0.5);
  const MaskVolume m = testing::random_tie_free_mask({2, 4, 4}, 3);
  const double phi_m = lin.forward(perturb(x, m, b))[2];
  CHECK(preservation_objective(m, x, lin, 2, 0.0, b) == doctest::Approx(-phi_m));
  CHECK(preservation_objective(MaskVolume({2, 4, 4}, 1.0), x, lin, 2, 0.25, b) ==
        doctest::Approx(0.25 * 32 - lin.forward(x)[2]));
}

TEST_CASE("vecsort is a stable descending sort") {
  Eigen::ArrayXd v(3);
  v << 0.3, 0.8, 0.5;
  const auto s = vecsort(v);
  CHECK(s.values[0] == 0.8);
  CHECK(s.values[1] == 0.5);
  CHECK(s.values[2] == 0.3);
  CHECK(s.permutation == std::vector<Index>{1, 2, 0});

  Eigen::ArrayXd sorted(4);
  sorted << 4, 3, 2, 1;
  CHECK(vecsort(sorted).permutation == std::vector<Index>{0, 1, 2, 3});

  Eigen::ArrayXd ties(2);
  ties << 0.5, 0.5;
  CHECK(vecsort(ties).permutation == std::vector<Index>{0, 1});
}

TEST_CASE("area loss hand example") {
  MaskVolume m({1, 1, 3});
  m(0, 0, 0) = 0.9;
  m(0, 0, 1) = 0.2;
  m(0, 0, 2) = 0.1;
  const auto r = area_loss(m, 1.0 / 3.0);
  CHECK(r.loss == doctest::Approx(0.02).epsilon(1e-12));
  // d/dm_i of mean (m_sorted - r)^2 = 2 (m_i - r_i) / n
  CHECK(r.gradient(0, 0, 0) == doctest::Approx(2.0 * (0.9 - 1.0) / 3.0));
  CHECK(r.gradient(0, 0, 1) == doctest::Approx(2.0 * 0.2 / 3.0));
  CHECK(r.gradient(0, 0, 2) == doctest::Approx(2.0 * 0.1 / 3.0));
  CHECK_THROWS_AS(area_loss(m, 1.5), ValidationError);
}

TEST_CASE("binary mask with the right count has zero area loss") {
  MaskVolume m({2, 5, 4});
  for (Index k : {3, 7, 11, 19, 25, 33}) m.data()[k] = 1.0;
  const auto r = area_loss(m, 6.0 / 40.0);
  CHECK(r.loss == 0.0);
  CHECK(r.gradient.data().abs().maxCoeff() == 0.0);
}

TEST_CASE("area loss gradient matches finite differences") {
  for (std::uint64_t s = 0; s < 20; ++s) {
    const MaskVolume m = testing::random_tie_free_mask({1 + static_cast<Index>(s % 4), 8, 8}, 40 + s);
    const double a = 0.05 + 0.05 * static_cast<double>(s % 5);
    const std::function<double(const MaskVolume&)> f = [&](const MaskVolume& v) { return area_loss(v, a).loss; };
    CHECK(testing::max_relative_error(area_loss(m, a).gradient, testing::numeric_gradient(f, m, 1e-5)) < 1e-4);
  }
}

TEST_CASE("per-frame area loss") {
  MaskVolume m({3, 2, 2});
  for (Index t = 0; t < 3; ++t) m(t, t % 2, 1) = 1.0;
  CHECK(area_loss_per_frame(m, 0.25).loss == 0.0);

  const MaskVolume single = testing::random_tie_free_mask({1, 4, 5}, 8);
  CHECK(area_loss_per_frame(single, 0.3).loss == doctest::Approx(area_loss(single, 0.3).loss).epsilon(1e-14));

  for (std::uint64_t s = 0; s < 20; ++s) {
    const MaskVolume v = testing::random_tie_free_mask({4, 6, 8}, 60 + s);
    const double a = 0.1 + 0.03 * static_cast<double>(s % 7);
    // Sum of independent per-frame template losses, recomputed with area_loss on each frame.
    const std::function<double(const MaskVolume&)> f = [&](const MaskVolume& x) {
      double acc = 0.0;
      for (Index t = 0; t < x.dim(0); ++t) {
        MaskVolume fr({1, x.dim(1), x.dim(2)});
        for (Index i = 0; i < x.dim(1); ++i)
          for (Index j = 0; j < x.dim(2); ++j) fr(0, i, j) = x(t, i, j);
        acc += area_loss(fr, a).loss;
      }
      return acc;
    };
    const auto r = area_loss_per_frame(v, a);
    CHECK(r.loss == doctest::Approx(f(v)).epsilon(1e-12));
    CHECK(testing::max_relative_error(r.gradient, testing::numeric_gradient(f, v, 1e-5)) < 1e-4);
  }
}

TEST_CASE("ellipsoid kernel supports") {
  const EllipsoidKernel k3 = build_ellipsoid_kernel(3, 3, 3);
  CHECK(k3.support == 7);
  for (Index t = 0; t < 3; ++t)
    for (Index i = 0; i < 3; ++i)
      for (Index j = 0; j < 3; ++j) {
        const int off = static_cast<int>((t != 1) + (i != 1) + (j != 1));
        CHECK(k3.value(t, i, j) == (off <= 1 ? 1.0 / 7.0 : 0.0));
      }
  const EllipsoidKernel k1 = build_ellipsoid_kernel(1, 1, 1);
  CHECK(k1.support == 1);
  CHECK(k1.value(0, 0, 0) == 1.0);

  const EllipsoidKernel big = build_ellipsoid_kernel(7, 11, 11);
  CHECK(big.support == testing::ellipsoid_count(7, 11, 11));
  for (auto e : std::vector<std::array<Index, 3>>{{3, 3, 3}, {7, 11, 11}, {1, 5, 9}, {4, 4, 6}, {2, 1, 3}}) {
    const EllipsoidKernel k = build_ellipsoid_kernel(e[0], e[1], e[2]);
    CHECK(k.weights.data().sum() == doctest::Approx(1.0).epsilon(1e-14));
    CHECK(k.support == testing::ellipsoid_count(e[0], e[1], e[2]));
  }
  CHECK_THROWS_AS(build_ellipsoid_kernel(0, 3, 3), ValidationError);
  // even extents on every axis put no voxel centre inside the ellipsoid
  CHECK_THROWS_AS(build_ellipsoid_kernel(2, 2, 2), ValidationError);
}

TEST_CASE("smoothness loss on constant masks") {
  const EllipsoidKernel k = build_ellipsoid_kernel(3, 3, 3, {1, 11, 11});
  const MaskVolume ones({8, 22, 22}, 1.0);
  const MaskVolume conv = correlate(ones, k);
  CHECK((conv.data() - 1.0).abs().maxCoeff() < 1e-14);
  const auto full = smoothness_loss(ones, k, 1.0);
  CHECK(full.saturated);
  CHECK(full.ones == full.outputs);
  CHECK(full.loss == doctest::Approx(0.0));

  const auto zero = smoothness_loss(MaskVolume({8, 22, 22}), k, 0.0);
  CHECK(zero.loss == 0.0);
  CHECK(zero.ones == 0);
}

TEST_CASE("smoothness loss matches a brute force implementation") {
  const EllipsoidKernel k = build_ellipsoid_kernel(3, 3, 3, {1, 11, 11});
  for (std::uint64_t s = 0; s < 3; ++s) {
    const MaskVolume m = testing::random_tie_free_mask({8, 22, 22}, 70 + s, 0.0, 1.0, 0.0);
    for (double v : {0.01, 0.02}) {
      const auto r = smoothness_loss(m, k, v);
      CHECK(r.outputs == 6 * 2 * 2);
      CHECK(r.loss == doctest::Approx(testing::brute_force_lk(m, 3, 3, 3, {1, 11, 11}, v)).epsilon(1e-12));
      const std::function<double(const MaskVolume&)> f = [&](const MaskVolume& x) {
        return testing::brute_force_lk(x, 3, 3, 3, {1, 11, 11}, v);
      };
      CHECK(testing::max_relative_error(r.gradient, testing::numeric_gradient(f, m, 1e-5)) < 1e-4);
    }
  }
}

TEST_CASE("smoothness template counts at the default kernel") {
  const EllipsoidKernel k = build_ellipsoid_kernel(7, 11, 11, {1, 11, 11});
  const auto r = smoothness_loss(MaskVolume({16, 63, 63}, 0.1), k, 0.1);
  CHECK(r.outputs == 10 * 5 * 5);
  CHECK(r.ones == std::llround(0.1 * 16 * 63 * 63 / static_cast<double>(testing::ellipsoid_count(7, 11, 11))));
  CHECK_FALSE(r.saturated);
}

TEST_CASE("correlate transpose is the adjoint of correlate") {
  const EllipsoidKernel k = build_ellipsoid_kernel(3, 5, 3, {2, 3, 1});
  const MaskVolume m = testing::random_tie_free_mask({7, 11, 6}, 5, 0.0, 1.0, 0.0);
  const MaskVolume c = correlate(m, k);
  const MaskVolume u = testing::random_tie_free_mask(c.dims(), 6, -1.0, 1.0, 0.0);
  const MaskVolume back = correlate_transpose(u, k, m.dims());
  CHECK((c.data() * u.data()).sum() == doctest::Approx((m.data() * back.data()).sum()).epsilon(1e-12));
}
