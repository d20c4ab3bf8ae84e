#pragma once

#include <cstdint>
#include <memory>
#include <string>
#include <vector>

#include "videxp/perturbation.hpp"
#include "videxp/tensor.hpp"

namespace videxp {

using ScoreVector = Eigen::VectorXd;

/// Black-box classifier contract: softmax scores and their input gradient.
class ModelAdapter {
 public:
  virtual ~ModelAdapter() = default;

  virtual Index class_count() const = 0;
  virtual VideoTensor::Dims input_dims() const = 0;
  /// True when forward/gradient may be called from several threads at once.
  virtual bool concurrency_safe() const = 0;

  /// Scores in [0,1] summing to 1.
  virtual ScoreVector forward(const VideoTensor& x) = 0;
  /// d forward(x)[c] / d x.
  virtual VideoTensor gradient(const VideoTensor& x, Index c) = 0;

 protected:
  void check_input(const VideoTensor& x) const;
  void check_class(Index c) const;
};

/// Numerically stable softmax.
ScoreVector softmax(const Eigen::VectorXd& logits);

/// logits_c = <w_c, x>.
class LinearSoftmaxModel final : public ModelAdapter {
 public:
  explicit LinearSoftmaxModel(std::vector<VideoTensor> weights);

  /// Weights drawn uniformly from [-scale, scale] with a fixed seed.
  static LinearSoftmaxModel random(const VideoTensor::Dims& dims, Index classes, std::uint64_t seed,
                                   double scale = 0.05);

  Index class_count() const override { return static_cast<Index>(weights_.size()); }
  VideoTensor::Dims input_dims() const override { return weights_.front().dims(); }
  bool concurrency_safe() const override { return true; }

  ScoreVector forward(const VideoTensor& x) override;
  VideoTensor gradient(const VideoTensor& x, Index c) override;

  Eigen::VectorXd logits(const VideoTensor& x) const;
  const std::vector<VideoTensor>& weights() const { return weights_; }

 private:
  std::vector<VideoTensor> weights_;
};

/// Inclusive pixel box on rows [row_begin, row_end] and columns [col_begin, col_end].
struct PixelBox {
  Index row_begin = 0, row_end = 0, col_begin = 0, col_end = 0;

  Index rows() const { return row_end - row_begin + 1; }
  Index cols() const { return col_end - col_begin + 1; }
  bool contains(Index r, Index c) const { return r >= row_begin && r <= row_end && c >= col_begin && c <= col_end; }
};

struct FrameSpan {
  Index begin = 0, end = 0;  // inclusive

  Index length() const { return end - begin + 1; }
  bool contains(Index t) const { return t >= begin && t <= end; }
};

/// Mean squared 4-neighbour Laplacian response over the interior pixels of a
/// box (pixels whose stencil stays inside the box) across a frame span and
/// all channels. Depends on nothing outside box x span.
double laplacian_energy(const VideoTensor& x, const PixelBox& box, const FrameSpan& span);
/// Adds `scale * d energy / d x` into `grad`.
void add_laplacian_energy_gradient(const VideoTensor& x, const PixelBox& box, const FrameSpan& span,
                                   double scale, VideoTensor& grad);

/// Two-class model whose class-1 logit is alpha times the high-pass energy
/// inside a planted box during a planted frame span; the class-0 logit is 0.
///
/// Optional decoys add weight * energy(decoy box, decoy span) to the class-1
/// logit. With no decoys the score depends only on region x segment.
class PlantedRegionModel final : public ModelAdapter {
 public:
  struct Decoy {
    PixelBox box;
    FrameSpan span;
    double weight = 0.0;
  };

  PlantedRegionModel(VideoTensor::Dims dims, PixelBox region, FrameSpan segment, double alpha,
                     std::vector<Decoy> decoys = {});

  Index class_count() const override { return 2; }
  VideoTensor::Dims input_dims() const override { return dims_; }
  bool concurrency_safe() const override { return true; }

  ScoreVector forward(const VideoTensor& x) override;
  VideoTensor gradient(const VideoTensor& x, Index c) override;

  double logit(const VideoTensor& x) const;
  const PixelBox& region() const { return region_; }
  const FrameSpan& segment() const { return segment_; }
  double alpha() const { return alpha_; }
  const std::vector<Decoy>& decoys() const { return decoys_; }

 private:
  VideoTensor::Dims dims_;
  PixelBox region_;
  FrameSpan segment_;
  double alpha_;
  std::vector<Decoy> decoys_;
};

/// Ignores its input; gradient is identically zero.
class ConstantModel final : public ModelAdapter {
 public:
  ConstantModel(VideoTensor::Dims dims, ScoreVector scores);
  /// Two classes with class-1 score p.
  static ConstantModel binary(VideoTensor::Dims dims, double p);

  Index class_count() const override { return scores_.size(); }
  VideoTensor::Dims input_dims() const override { return dims_; }
  bool concurrency_safe() const override { return true; }

  ScoreVector forward(const VideoTensor& x) override;
  VideoTensor gradient(const VideoTensor& x, Index c) override;

 private:
  VideoTensor::Dims dims_;
  ScoreVector scores_;
};

/// Ground truth emitted with a synthetic planted video.
struct PlantedAnnotation {
  PixelBox region;
  FrameSpan segment;
  std::vector<PixelBox> decoy_boxes;
  std::vector<FrameSpan> decoy_spans;
};

struct PlantedOptions {
  Index channels = 1;
  double texture_amplitude = 0.2;
  double alpha = 1.2;
  /// Decoy textures placed in frames outside the segment; 0 disables them.
  Index decoy_count = 0;
  Index decoy_size = 21;
  double decoy_weight = 0.0;  // relative to alpha
  /// Blurring the whole video must lower the class-1 score by at least this much.
  double min_blur_drop = 0.2;
};

/// Benchmark preset used by `videxp bench` and the acceptance suite: four
/// single-frame 31-pixel decoys in the head and tail frames at 0.3 x alpha.
inline PlantedOptions benchmark_planted_options() {
  PlantedOptions o;
  o.decoy_count = 4;
  o.decoy_size = 31;
  o.decoy_weight = 0.3;
  return o;
}

struct PlantedInstance {
  VideoTensor video;
  PlantedAnnotation annotation;
  PlantedOptions options;

  /// The matching class-1 model for this instance.
  PlantedRegionModel model() const;
};

/// Smooth low-frequency background plus a +-amplitude checkerboard inside
/// region x segment (and inside each decoy box x span).
PlantedInstance make_planted_instance(const VideoTensor::Dims& dims, const PixelBox& region, const FrameSpan& segment,
                                      std::uint64_t rng_seed, const PlantedOptions& options = {});

/// Random region/segment layout covering about `volume_fraction` of the
/// video, with the box kept `margin` pixels away from every border.
struct PlantedLayout {
  PixelBox region;
  FrameSpan segment;
};
PlantedLayout random_planted_layout(const VideoTensor::Dims& dims, std::uint64_t rng_seed,
                                    double volume_fraction = 0.08, double segment_fraction = 9.0 / 16.0,
                                    Index margin = 4);

}  // namespace videxp
