#include <atomic>

#include "doctest.h"
#include "support.hpp"
#include "videxp/optimizer.hpp"

using namespace videxp;

namespace {

// Forwards to another model and counts calls; can fail on demand.
class CountingModel final : public ModelAdapter {
 public:
  CountingModel(ModelAdapter& inner, bool safe) : inner_(inner), safe_(safe) {}

  Index class_count() const override { return inner_.class_count(); }
  VideoTensor::Dims input_dims() const override { return inner_.input_dims(); }
  bool concurrency_safe() const override { return safe_; }

  ScoreVector forward(const VideoTensor& x) override {
    ++forwards;
    if (fail_after >= 0 && forwards > fail_after) throw ModelError("server went away");
    return inner_.forward(x);
  }
  VideoTensor gradient(const VideoTensor& x, Index c) override {
    ++gradients;
    VideoTensor g = inner_.gradient(x, c);
    if (nan_gradient) g.data()[0] = std::numeric_limits<double>::quiet_NaN();
    return g;
  }

  std::atomic<int> forwards{0}, gradients{0};
  int fail_after = -1;
  bool nan_gradient = false;

 private:
  ModelAdapter& inner_;
  bool safe_;
};

OptimConfig quick(Method m, double a, int iterations = 300) {
  OptimConfig cfg;
  cfg.method = m;
  cfg.ratio = a;
  cfg.iterations = iterations;
  return cfg;
}

double mean_over(const MaskVolume& m, const PixelBox& box, const FrameSpan& span, bool inside) {
  double s = 0.0;
  Index n = 0;
  for (Index t = 0; t < m.dim(0); ++t)
    for (Index i = 0; i < m.dim(1); ++i)
      for (Index j = 0; j < m.dim(2); ++j)
        if ((span.contains(t) && box.contains(i, j)) == inside) {
          s += m(t, i, j);
          ++n;
        }
  return s / static_cast<double>(n);
}

}  // namespace

TEST_CASE("method names") {
  CHECK(parse_method("step") == Method::STEP);
  CHECK(parse_method("EP-3D") == Method::EP3D);
  CHECK(parse_method("ep-3d-evenly") == Method::EP3D_EVENLY);
  CHECK(parse_method("EP") == Method::EP2D);
  CHECK(to_string(Method::EP3D_GAUSS) == "EP3D_GAUSS");
  CHECK_THROWS_AS(parse_method("FANCY"), ValidationError);
}

TEST_CASE("configuration is validated") {
  OptimConfig cfg;
  cfg.ratio = 0.0;
  CHECK_THROWS_AS(validate(cfg), ValidationError);
  cfg = OptimConfig{};
  cfg.momentum = 1.0;
  CHECK_THROWS_AS(validate(cfg), ValidationError);
  cfg = OptimConfig{};
  cfg.kernel_extents = {0, 11, 11};
  CHECK_THROWS_AS(validate(cfg), ValidationError);
  CHECK_NOTHROW(validate(OptimConfig{}));
}

TEST_CASE("crop keeps the largest centered multiple of the seed factor") {
  const CropWindow c = crop_for_factor(30, 64, 7);
  CHECK(c.height == 28);
  CHECK(c.width == 63);
  CHECK(c.row_offset == 1);
  CHECK(c.col_offset == 0);
  CHECK_THROWS_AS(crop_for_factor(6, 20, 7), ValidationError);
}

TEST_CASE("constant score model: regularizer alone sets the area") {
  for (Method m : {Method::EP2D, Method::EP3D, Method::EP3D_EVENLY, Method::EP3D_GAUSS, Method::STEP}) {
    CAPTURE(to_string(m));
    // The STEP kernel spans 11 pixels, so 28 pixels leave only 2x2 windows; give it room.
    const Index side = m == Method::STEP ? 56 : 28;
    const VideoTensor::Dims d{8, side, side, 1};
    const VideoTensor x = testing::random_video(d, 1);
    ConstantModel model = ConstantModel::binary(d, 0.6);
    const AttributionResult r = optimize_mask(x, model, 1, quick(m, 0.1));
    CHECK(std::abs(r.realized_ratio - 0.1) <= 0.02);
    CHECK(r.final_score == doctest::Approx(0.6));
    CHECK(r.mask.dims() == MaskVolume::Dims{8, side, side});
  }
}

TEST_CASE("evenly budgeted masks hold the ratio on every frame") {
  const VideoTensor::Dims d{6, 28, 28, 1};
  const VideoTensor x = testing::random_video(d, 2);
  ConstantModel model = ConstantModel::binary(d, 0.6);
  const AttributionResult r = optimize_mask(x, model, 1, quick(Method::EP3D_EVENLY, 0.2));
  for (Index t = 0; t < 6; ++t) CHECK(std::abs(frame(r.mask, t).mean() - 0.2) <= 0.03);
}

TEST_CASE("mask is zero outside the crop") {
  const VideoTensor::Dims d{2, 30, 31, 1};
  const VideoTensor x = testing::random_video(d, 3);
  ConstantModel model = ConstantModel::binary(d, 0.6);
  const AttributionResult r = optimize_mask(x, model, 1, quick(Method::EP3D, 0.3, 50));
  CHECK(r.crop.row_offset == 1);
  CHECK(r.crop.height == 28);
  for (Index t = 0; t < 2; ++t) {
    CHECK(frame(r.mask, t).row(0).abs().maxCoeff() == 0.0);
    CHECK(frame(r.mask, t).row(29).abs().maxCoeff() == 0.0);
    CHECK(frame(r.mask, t).col(30).abs().maxCoeff() == 0.0);
  }
  CHECK(r.seed.values.dims() == Volume<double>::Dims{2, 4, 4});
}

TEST_CASE("one forward and one gradient call per iteration") {
  const VideoTensor::Dims d{3, 14, 14, 1};
  const VideoTensor x = testing::random_video(d, 4);
  ConstantModel inner = ConstantModel::binary(d, 0.5);
  {
    CountingModel model(inner, true);
    const AttributionResult r = optimize_mask(x, model, 1, quick(Method::EP3D, 0.1, 40));
    CHECK(model.forwards == 40);
    CHECK(model.gradients == 40);
    CHECK(r.trajectory.size() == 40);
  }
  {
    // Per-frame runs score the assembled mask once at the end.
    CountingModel model(inner, true);
    const AttributionResult r = optimize_mask(x, model, 1, quick(Method::EP2D, 0.1, 40));
    CHECK(model.forwards == 3 * 40 + 1);
    CHECK(model.gradients == 3 * 40);
    REQUIRE(r.trajectory.size() == 120);
    CHECK(r.trajectory[40].frame == 1);
  }
}

TEST_CASE("identical seeds give bit identical masks") {
  const VideoTensor::Dims d{4, 21, 21, 1};
  const PlantedLayout lay = random_planted_layout(d, 2, 0.1, 0.5, 3);
  const PlantedInstance inst = make_planted_instance(d, lay.region, lay.segment, 2);
  PlantedRegionModel model = inst.model();
  for (Method m : {Method::EP3D, Method::STEP}) {
    OptimConfig cfg = quick(m, 0.1, 60);
    cfg.kernel_extents = {3, 7, 7};
    cfg.kernel_stride = {1, 7, 7};
    cfg.rng_seed = 9;
    const AttributionResult a = optimize_mask(inst.video, model, 1, cfg);
    const AttributionResult b = optimize_mask(inst.video, model, 1, cfg);
    CHECK(a.mask == b.mask);
    cfg.rng_seed = 10;
    CHECK_FALSE(optimize_mask(inst.video, model, 1, cfg).mask == a.mask);
  }
}

TEST_CASE("STEP concentrates the mask on the planted region") {
  const VideoTensor::Dims d{16, 64, 64, 1};
  const PlantedLayout lay = random_planted_layout(d, 0);
  const PlantedInstance inst = make_planted_instance(d, lay.region, lay.segment, 0);
  PlantedRegionModel model = inst.model();
  const double a = static_cast<double>(lay.region.rows() * lay.region.cols() * lay.segment.length()) / (16.0 * 64 * 64);
  OptimConfig cfg = quick(Method::STEP, a, 800);
  cfg.lambda_max = 30.0;
  const AttributionResult r = optimize_mask(inst.video, model, 1, cfg);
  const double in = mean_over(r.mask, lay.region, lay.segment, true);
  const double out = mean_over(r.mask, lay.region, lay.segment, false);
  CHECK(in >= 3.0 * out);
}

TEST_CASE("model failure aborts with the partial trajectory") {
  const VideoTensor::Dims d{2, 14, 14, 1};
  ConstantModel inner = ConstantModel::binary(d, 0.5);
  CountingModel model(inner, true);
  model.fail_after = 5;
  try {
    optimize_mask(testing::random_video(d, 1), model, 1, quick(Method::EP3D, 0.1, 20));
    FAIL("expected an abort");
  } catch (const OptimizationAborted& e) {
    CHECK(e.partial_trajectory().size() == 5);
    CHECK(std::string(e.what()).find("server went away") != std::string::npos);
  }
  CountingModel nan_model(inner, true);
  nan_model.nan_gradient = true;
  CHECK_THROWS_AS(optimize_mask(testing::random_video(d, 1), nan_model, 1, quick(Method::EP3D, 0.1, 20)),
                  OptimizationAborted);
}

TEST_CASE("inputs are checked against the model") {
  ConstantModel model = ConstantModel::binary({2, 14, 14, 1}, 0.5);
  CHECK_THROWS_AS(optimize_mask(VideoTensor({2, 14, 15, 1}), model, 1, OptimConfig{}), ValidationError);
  CHECK_THROWS_AS(optimize_mask(VideoTensor({2, 14, 14, 1}), model, 2, OptimConfig{}), ValidationError);
}

TEST_CASE("phi0 resolution") {
  CHECK(resolve_phi0(Phi0Mode::Relative, 0.9) == doctest::Approx(0.72));
  CHECK(resolve_phi0(Phi0Mode::Relative, 0.9, 0.5) == doctest::Approx(0.45));
  CHECK(resolve_phi0(Phi0Mode::Preserve, 0.9) == doctest::Approx(0.89));
  CHECK(resolve_phi0(Phi0Mode::Absolute, 0.9, 0.3) == doctest::Approx(0.3));
  CHECK_THROWS_AS(resolve_phi0(Phi0Mode::Absolute, 0.9), ValidationError);
  CHECK(parse_phi0_mode("Preserve") == Phi0Mode::Preserve);
  CHECK_THROWS_AS(parse_phi0_mode("loose"), ValidationError);
}

TEST_CASE("extremal search degenerate bounds") {
  const VideoTensor::Dims d{3, 14, 14, 1};
  const VideoTensor x = testing::random_video(d, 5);
  ConstantModel inner = ConstantModel::binary(d, 0.7);
  const std::vector<double> ratios{0.02, 0.05, 0.1, 0.2};
  const OptimConfig cfg = quick(Method::EP3D, 0.1, 30);
  {
    CountingModel model(inner, false);
    const ExtremalOutcome o = extremal_search(x, model, 1, cfg, ratios, 0.0);
    CHECK(o.ratio == 0.02);
    CHECK_FALSE(o.bound_unmet);
    CHECK(o.evaluated.size() == 1);  // sequential search stops at the first success
    CHECK(model.forwards == 30);
  }
  {
    CountingModel model(inner, false);
    const ExtremalOutcome o = extremal_search(x, model, 1, cfg, ratios, 1.5);
    CHECK(o.bound_unmet);
    CHECK(o.ratio == 0.2);
    CHECK(o.result.ratio == 0.2);
    CHECK(o.evaluated.size() == 4);
  }
  {
    CountingModel model(inner, true);
    ExtremalOptions opt;
    opt.exhaustive = true;
    const ExtremalOutcome o = extremal_search(x, model, 1, cfg, ratios, 0.0, opt);
    CHECK(o.ratio == 0.02);
    CHECK(o.evaluated.size() == 4);
    CHECK(model.forwards == 4 * 30);
  }
  ConstantModel plain = ConstantModel::binary(d, 0.7);
  CHECK_THROWS_AS(extremal_search(x, plain, 1, cfg, {}, 0.5), ValidationError);
  CHECK_THROWS_AS(extremal_search(x, plain, 1, cfg, {0.1, 0.05}, 0.5), ValidationError);
  CHECK_THROWS_AS(extremal_search(x, plain, 1, cfg, {0.1, 0.1}, 0.5), ValidationError);
}
