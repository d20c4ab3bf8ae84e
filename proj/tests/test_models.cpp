#include "doctest.h"
#include "support.hpp"
#include "videxp/models.hpp"

using namespace videxp;

namespace {

double logistic(double z) { return 1.0 / (1.0 + std::exp(-z)); }

double brute_planted_score(const VideoTensor& x, const PlantedRegionModel& m) {
  const auto& r = m.region();
  double z = m.alpha() * testing::brute_force_energy(x, r.row_begin, r.row_end, r.col_begin, r.col_end,
                                                      m.segment().begin, m.segment().end);
  for (const auto& d : m.decoys())
    z += d.weight * testing::brute_force_energy(x, d.box.row_begin, d.box.row_end, d.box.col_begin, d.box.col_end,
                                                d.span.begin, d.span.end);
  return logistic(z);
}

}  // namespace

TEST_CASE("linear model with identical class weights is uniform") {
  const VideoTensor::Dims d{2, 3, 3, 1};
  const VideoTensor w = testing::random_video(d, 4, -1, 1);
  LinearSoftmaxModel lin({w, w, w, w});
  const ScoreVector p = lin.forward(testing::random_video(d, 5));
  for (Index c = 0; c < 4; ++c) CHECK(p[c] == doctest::Approx(0.25).epsilon(1e-14));
  CHECK(lin.concurrency_safe());
}

TEST_CASE("linear model scores follow the inner product softmax") {
  const VideoTensor::Dims d{2, 3, 4, 3};
  LinearSoftmaxModel lin = LinearSoftmaxModel::random(d, 3, 17, 0.3);
  const VideoTensor x = testing::random_video(d, 18);
  Eigen::Vector3d z;
  for (Index c = 0; c < 3; ++c) {
    double s = 0;
    for (Index i = 0; i < x.size(); ++i) s += lin.weights()[static_cast<std::size_t>(c)].data()[i] * x.data()[i];
    z[c] = s;
  }
  const Eigen::Vector3d e = (z.array() - z.maxCoeff()).exp();
  const ScoreVector p = lin.forward(x);
  for (Index c = 0; c < 3; ++c) CHECK(p[c] == doctest::Approx(e[c] / e.sum()).epsilon(1e-12));
  CHECK(p.sum() == doctest::Approx(1.0));
}

TEST_CASE("linear model gradient matches finite differences") {
  for (std::uint64_t s = 0; s < 5; ++s) {
    const VideoTensor::Dims d{2, 4, 3, 1 + 2 * static_cast<Index>(s % 2)};
    LinearSoftmaxModel lin = LinearSoftmaxModel::random(d, 3, s, 0.5);
    const VideoTensor x = testing::random_video(d, 30 + s);
    for (Index c = 0; c < 3; ++c) {
      const std::function<double(const VideoTensor&)> f = [&](const VideoTensor& v) { return lin.forward(v)[c]; };
      CHECK(testing::max_relative_error(lin.gradient(x, c), testing::numeric_gradient(f, x, 1e-5)) < 1e-5);
    }
  }
}

TEST_CASE("model input and class checks") {
  LinearSoftmaxModel lin = LinearSoftmaxModel::random({1, 2, 2, 1}, 2, 0);
  CHECK_THROWS_AS(lin.forward(VideoTensor({1, 2, 3, 1})), ValidationError);
  CHECK_THROWS_AS(lin.gradient(VideoTensor({1, 2, 2, 1}), 2), ValidationError);
  CHECK_THROWS_AS(ConstantModel({1, 1, 1, 1}, Eigen::Vector2d(0.7, 0.7)), ValidationError);
}

TEST_CASE("planted model on a constant video scores one half") {
  PlantedRegionModel m({4, 10, 10, 1}, {2, 6, 3, 7}, {1, 2}, 1.5);
  const ScoreVector p = m.forward(VideoTensor({4, 10, 10, 1}, 0.42));
  CHECK(p[1] == doctest::Approx(0.5));
  CHECK(p[0] == doctest::Approx(0.5));
  CHECK(m.gradient(VideoTensor({4, 10, 10, 1}, 0.42), 1).data().abs().maxCoeff() == 0.0);
}

TEST_CASE("planted model score agrees with a brute force recomputation") {
  for (std::uint64_t s = 0; s < 5; ++s) {
    const VideoTensor::Dims d{5, 12, 11, s % 2 ? 3 : 1};
    std::vector<PlantedRegionModel::Decoy> decoys;
    if (s >= 2) decoys.push_back({{0, 4, 6, 10}, {0, 0}, 0.4});
    PlantedRegionModel m(d, {3, 9, 2, 8}, {1, 3}, 1.2, decoys);
    const VideoTensor x = testing::random_video(d, 50 + s);
    CHECK(m.forward(x)[1] == doctest::Approx(brute_planted_score(x, m)).epsilon(1e-6));
  }
}

TEST_CASE("planted model gradient matches finite differences and stays inside the region") {
  const VideoTensor::Dims d{4, 9, 10, 1};
  const PixelBox region{2, 6, 3, 8};
  const FrameSpan segment{1, 2};
  PlantedRegionModel m(d, region, segment, 2.0);
  const VideoTensor x = testing::random_video(d, 61, 0.3, 0.7);
  const VideoTensor g = m.gradient(x, 1);
  const std::function<double(const VideoTensor&)> f = [&](const VideoTensor& v) { return brute_planted_score(v, m); };
  CHECK(testing::max_relative_error(g, testing::numeric_gradient(f, x, 1e-5)) < 1e-5);
  const VideoTensor g0 = m.gradient(x, 0);
  bool outside_zero = true;
  for (Index t = 0; t < d[0]; ++t)
    for (Index i = 0; i < d[1]; ++i)
      for (Index j = 0; j < d[2]; ++j) {
        CHECK(g0(t, i, j, 0) == doctest::Approx(-g(t, i, j, 0)));
        if (!(segment.contains(t) && region.contains(i, j))) outside_zero = outside_zero && g(t, i, j, 0) == 0.0;
      }
  CHECK(outside_zero);
}

TEST_CASE("planted instance construction") {
  const VideoTensor::Dims d{16, 64, 64, 1};
  for (std::uint64_t s = 0; s < 20; ++s) {
    const PlantedLayout lay = random_planted_layout(d, s);
    CHECK(lay.region.row_begin >= 0);
    CHECK(lay.region.row_end < d[1]);
    CHECK(lay.region.col_begin >= 0);
    CHECK(lay.region.col_end < d[2]);
    CHECK(lay.segment.begin >= 0);
    CHECK(lay.segment.end < d[0]);
    const double vol = static_cast<double>(lay.region.rows() * lay.region.cols() * lay.segment.length()) /
                       static_cast<double>(d[0] * d[1] * d[2]);
    CHECK(vol == doctest::Approx(0.08).epsilon(0.15));

    const PlantedInstance inst = make_planted_instance(d, lay.region, lay.segment, s);
    CHECK(inst.annotation.segment.length() == lay.segment.end - lay.segment.begin + 1);
    PlantedRegionModel m = inst.model();
    const double clean = m.forward(inst.video)[1];
    const double blurred = m.forward(blur(inst.video, default_blur(64, 64)))[1];
    CHECK(clean - blurred >= 0.2);
    CHECK(inst.video.data().minCoeff() >= 0.0);
    CHECK(inst.video.data().maxCoeff() <= 1.0);
  }
}

TEST_CASE("planted instances are reproducible from their seed") {
  const VideoTensor::Dims d{8, 32, 32, 3};
  PlantedOptions opt;
  opt.decoy_count = 2;
  opt.decoy_size = 9;
  opt.decoy_weight = 0.3;
  const PlantedLayout lay = random_planted_layout(d, 3);
  const PlantedInstance a = make_planted_instance(d, lay.region, lay.segment, 3, opt);
  const PlantedInstance b = make_planted_instance(d, lay.region, lay.segment, 3, opt);
  const PlantedInstance c = make_planted_instance(d, lay.region, lay.segment, 4, opt);
  CHECK(a.video == b.video);
  CHECK_FALSE(a.video == c.video);
  REQUIRE(a.annotation.decoy_spans.size() == 2);
  for (const auto& span : a.annotation.decoy_spans) CHECK_FALSE(lay.segment.contains(span.begin));
}

TEST_CASE("a too weak planted signal is rejected") {
  PlantedOptions opt;
  opt.alpha = 1e-3;
  CHECK_THROWS_AS(make_planted_instance({4, 16, 16, 1}, {4, 11, 4, 11}, {1, 2}, 0, opt), ValidationError);
}

TEST_CASE("constant model ignores its input") {
  ConstantModel m = ConstantModel::binary({2, 3, 3, 1}, 0.8);
  CHECK(m.forward(testing::random_video({2, 3, 3, 1}, 1))[1] == doctest::Approx(0.8));
  CHECK(m.gradient(testing::random_video({2, 3, 3, 1}, 1), 1).data().abs().maxCoeff() == 0.0);
}
