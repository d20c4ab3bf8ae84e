#include "videxp/models.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <random>

namespace videxp {

void ModelAdapter::check_input(const VideoTensor& x) const {
  if (x.dims() != input_dims()) {
    throw ValidationError("model expects input dims " + format_dims(input_dims()) + ", got " + format_dims(x.dims()));
  }
}

void ModelAdapter::check_class(Index c) const {
  if (c < 0 || c >= class_count()) {
    throw ValidationError("class index " + std::to_string(c) + " out of range for " +
                          std::to_string(class_count()) + " classes");
  }
}

ScoreVector softmax(const Eigen::VectorXd& logits) {
  const Eigen::VectorXd e = (logits.array() - logits.maxCoeff()).exp();
  return e / e.sum();
}

// ---------------------------------------------------------------------------

LinearSoftmaxModel::LinearSoftmaxModel(std::vector<VideoTensor> weights) : weights_(std::move(weights)) {
  if (weights_.empty()) throw ValidationError("linear model needs at least one class");
  for (const auto& w : weights_) {
    if (!w.same_shape(weights_.front())) throw ValidationError("linear model weights must share dims");
  }
}

LinearSoftmaxModel LinearSoftmaxModel::random(const VideoTensor::Dims& dims, Index classes, std::uint64_t seed,
                                              double scale) {
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> dist(-scale, scale);
  std::vector<VideoTensor> weights;
  for (Index c = 0; c < classes; ++c) {
    VideoTensor w(dims);
    for (Index i = 0; i < w.size(); ++i) w.data()[i] = dist(rng);
    weights.push_back(std::move(w));
  }
  return LinearSoftmaxModel(std::move(weights));
}

Eigen::VectorXd LinearSoftmaxModel::logits(const VideoTensor& x) const {
  Eigen::VectorXd z(class_count());
  for (Index c = 0; c < class_count(); ++c) z[c] = (weights_[c].data() * x.data()).sum();
  return z;
}

ScoreVector LinearSoftmaxModel::forward(const VideoTensor& x) {
  check_input(x);
  return softmax(logits(x));
}

VideoTensor LinearSoftmaxModel::gradient(const VideoTensor& x, Index c) {
  check_input(x);
  check_class(c);
  const ScoreVector p = softmax(logits(x));
  // d p_c / d x = p_c (w_c - sum_k p_k w_k)
  VideoTensor g(x.dims());
  g.data() = weights_[c].data();
  for (Index k = 0; k < class_count(); ++k) g.data() -= p[k] * weights_[k].data();
  g.data() *= p[c];
  return g;
}

// ---------------------------------------------------------------------------

namespace {

void check_box(const PixelBox& box, const FrameSpan& span, const VideoTensor::Dims& dims, const char* what) {
  if (box.row_begin < 0 || box.col_begin < 0 || box.row_end >= dims[1] || box.col_end >= dims[2] ||
      box.row_begin > box.row_end || box.col_begin > box.col_end) {
    throw ValidationError(std::string(what) + " box lies outside the frame");
  }
  if (span.begin < 0 || span.end >= dims[0] || span.begin > span.end) {
    throw ValidationError(std::string(what) + " frame span lies outside the video");
  }
}

Index interior_count(const PixelBox& box, const FrameSpan& span, Index channels) {
  return std::max<Index>(0, box.rows() - 2) * std::max<Index>(0, box.cols() - 2) * span.length() * channels;
}

}  // namespace

double laplacian_energy(const VideoTensor& x, const PixelBox& box, const FrameSpan& span) {
  const Index C = x.dim(3);
  const Index n = interior_count(box, span, C);
  if (n == 0) return 0.0;
  double acc = 0.0;
  for (Index t = span.begin; t <= span.end; ++t)
    for (Index i = box.row_begin + 1; i < box.row_end; ++i)
      for (Index j = box.col_begin + 1; j < box.col_end; ++j)
        for (Index c = 0; c < C; ++c) {
          const double l = x(t, i - 1, j, c) + x(t, i + 1, j, c) + x(t, i, j - 1, c) + x(t, i, j + 1, c) -
                           4.0 * x(t, i, j, c);
          acc += l * l;
        }
  return acc / static_cast<double>(n);
}

void add_laplacian_energy_gradient(const VideoTensor& x, const PixelBox& box, const FrameSpan& span, double scale,
                                   VideoTensor& grad) {
  const Index C = x.dim(3);
  const Index n = interior_count(box, span, C);
  if (n == 0) return;
  const double k = 2.0 * scale / static_cast<double>(n);
  for (Index t = span.begin; t <= span.end; ++t)
    for (Index i = box.row_begin + 1; i < box.row_end; ++i)
      for (Index j = box.col_begin + 1; j < box.col_end; ++j)
        for (Index c = 0; c < C; ++c) {
          const double l = x(t, i - 1, j, c) + x(t, i + 1, j, c) + x(t, i, j - 1, c) + x(t, i, j + 1, c) -
                           4.0 * x(t, i, j, c);
          const double g = k * l;
          grad(t, i - 1, j, c) += g;
          grad(t, i + 1, j, c) += g;
          grad(t, i, j - 1, c) += g;
          grad(t, i, j + 1, c) += g;
          grad(t, i, j, c) -= 4.0 * g;
        }
}

PlantedRegionModel::PlantedRegionModel(VideoTensor::Dims dims, PixelBox region, FrameSpan segment, double alpha,
                                       std::vector<Decoy> decoys)
    : dims_(dims), region_(region), segment_(segment), alpha_(alpha), decoys_(std::move(decoys)) {
  if (!(alpha_ > 0.0)) throw ValidationError("planted model sharpness must be positive");
  check_box(region_, segment_, dims_, "planted region");
  for (const auto& d : decoys_) check_box(d.box, d.span, dims_, "decoy");
}

double PlantedRegionModel::logit(const VideoTensor& x) const {
  double z = alpha_ * laplacian_energy(x, region_, segment_);
  for (const auto& d : decoys_) z += d.weight * laplacian_energy(x, d.box, d.span);
  return z;
}

ScoreVector PlantedRegionModel::forward(const VideoTensor& x) {
  check_input(x);
  return softmax(Eigen::Vector2d(0.0, logit(x)));
}

VideoTensor PlantedRegionModel::gradient(const VideoTensor& x, Index c) {
  check_input(x);
  check_class(c);
  const ScoreVector p = softmax(Eigen::Vector2d(0.0, logit(x)));
  // d p_1 / d z = p_0 p_1, d p_0 / d z = -p_0 p_1
  const double dz = (c == 1 ? 1.0 : -1.0) * p[0] * p[1];
  VideoTensor g(x.dims());
  add_laplacian_energy_gradient(x, region_, segment_, dz * alpha_, g);
  for (const auto& d : decoys_) add_laplacian_energy_gradient(x, d.box, d.span, dz * d.weight, g);
  return g;
}

// ---------------------------------------------------------------------------

ConstantModel::ConstantModel(VideoTensor::Dims dims, ScoreVector scores) : dims_(dims), scores_(std::move(scores)) {
  if (scores_.size() < 1 || (scores_.array() < 0.0).any() || std::abs(scores_.sum() - 1.0) > 1e-9) {
    throw ValidationError("constant model scores must be a probability vector");
  }
}

ConstantModel ConstantModel::binary(VideoTensor::Dims dims, double p) {
  return ConstantModel(dims, Eigen::Vector2d(1.0 - p, p));
}

ScoreVector ConstantModel::forward(const VideoTensor& x) {
  check_input(x);
  return scores_;
}

VideoTensor ConstantModel::gradient(const VideoTensor& x, Index c) {
  check_input(x);
  check_class(c);
  return VideoTensor(x.dims());
}

// ---------------------------------------------------------------------------

PlantedRegionModel PlantedInstance::model() const {
  std::vector<PlantedRegionModel::Decoy> decoys;
  for (std::size_t k = 0; k < annotation.decoy_boxes.size(); ++k) {
    decoys.push_back({annotation.decoy_boxes[k], annotation.decoy_spans[k], options.decoy_weight * options.alpha});
  }
  return PlantedRegionModel(video.dims(), annotation.region, annotation.segment, options.alpha, std::move(decoys));
}

namespace {

void add_checkerboard(VideoTensor& x, const PixelBox& box, const FrameSpan& span, double amplitude) {
  for (Index t = span.begin; t <= span.end; ++t)
    for (Index i = box.row_begin; i <= box.row_end; ++i)
      for (Index j = box.col_begin; j <= box.col_end; ++j)
        for (Index c = 0; c < x.dim(3); ++c) x(t, i, j, c) += ((i + j) % 2 == 0 ? amplitude : -amplitude);
}

}  // namespace

PlantedInstance make_planted_instance(const VideoTensor::Dims& dims, const PixelBox& region, const FrameSpan& segment,
                                      std::uint64_t rng_seed, const PlantedOptions& options) {
  if (dims[3] != 1 && dims[3] != 3) throw ValidationError("planted instances need 1 or 3 channels");
  check_box(region, segment, dims, "planted region");
  if (options.texture_amplitude <= 0.0 || options.texture_amplitude > 0.25) {
    throw ValidationError("texture amplitude must lie in (0, 0.25]");
  }

  std::mt19937_64 rng(rng_seed);
  std::uniform_real_distribution<double> freq(0.5, 1.5), phase(0.0, 2.0 * std::numbers::pi), drift(-0.5, 0.5);
  const double fr = freq(rng), fc = freq(rng), pr = phase(rng), pc = phase(rng), dt = drift(rng);

  PlantedInstance inst;
  inst.options = options;
  inst.annotation.region = region;
  inst.annotation.segment = segment;
  inst.video = VideoTensor(dims);
  const Index T = dims[0], H = dims[1], W = dims[2], C = dims[3];
  for (Index t = 0; t < T; ++t)
    for (Index i = 0; i < H; ++i)
      for (Index j = 0; j < W; ++j)
        for (Index c = 0; c < C; ++c) {
          const double tt = static_cast<double>(t) / static_cast<double>(T);
          const double v = 0.5 + 0.12 * std::sin(2.0 * std::numbers::pi * fr * i / H + pr + dt * tt) +
                           0.12 * std::cos(2.0 * std::numbers::pi * fc * j / W + pc + 0.3 * c);
          inst.video(t, i, j, c) = v;
        }
  add_checkerboard(inst.video, region, segment, options.texture_amplitude);

  if (options.decoy_count > 0) {
    std::vector<Index> head, tail;
    for (Index t = 0; t < segment.begin; ++t) head.push_back(t);
    for (Index t = segment.end + 1; t < T; ++t) tail.push_back(t);
    const Index size = std::min({options.decoy_size, H - 2, W - 2});
    std::uniform_int_distribution<Index> row(1, H - 1 - size), col(1, W - 1 - size);
    for (Index k = 0; k < options.decoy_count; ++k) {
      // alternate head and tail frames, falling back to whichever side exists
      const auto& side = (k % 2 == 0 && !head.empty()) || tail.empty() ? head : tail;
      if (side.empty()) break;
      std::uniform_int_distribution<std::size_t> pick(0, side.size() - 1);
      const Index t = side[pick(rng)];
      const Index r0 = row(rng), c0 = col(rng);
      PixelBox box{r0, r0 + size - 1, c0, c0 + size - 1};
      FrameSpan span{t, t};
      add_checkerboard(inst.video, box, span, options.texture_amplitude);
      inst.annotation.decoy_boxes.push_back(box);
      inst.annotation.decoy_spans.push_back(span);
    }
  }
  inst.video.data() = inst.video.data().max(0.0).min(1.0);

  PlantedRegionModel model = inst.model();
  const BlurSpec b = default_blur(H, W);
  const double clean = model.forward(inst.video)[1];
  const double blurred = model.forward(blur(inst.video, b))[1];
  if (clean - blurred < options.min_blur_drop) {
    throw ValidationError("planted instance too weak: blurring lowers the score by only " +
                          std::to_string(clean - blurred));
  }
  return inst;
}

PlantedLayout random_planted_layout(const VideoTensor::Dims& dims, std::uint64_t rng_seed, double volume_fraction,
                                    double segment_fraction, Index margin) {
  const Index T = dims[0], H = dims[1], W = dims[2];
  if (margin < 1) margin = 1;
  if (!(volume_fraction > 0.0 && volume_fraction < 1.0) || !(segment_fraction > 0.0 && segment_fraction <= 1.0)) {
    throw ValidationError("layout fractions must lie in (0,1)");
  }
  const Index length = std::clamp<Index>(static_cast<Index>(std::llround(segment_fraction * T)), 1, T);
  const double area = volume_fraction * static_cast<double>(T * H * W) / static_cast<double>(length);
  const Index side_max = std::min(H, W) - 2 * margin;
  if (side_max < 3) throw ValidationError("frames too small for a planted region");
  const Index side = std::clamp<Index>(static_cast<Index>(std::llround(std::sqrt(area))), 3, side_max);

  std::mt19937_64 rng(rng_seed ^ 0x9E3779B97F4A7C15ULL);
  std::uniform_int_distribution<Index> row(margin, H - margin - side), col(margin, W - margin - side);
  // Keep the segment off the first and last two frames when there is room.
  const Index slack = T - length;
  const Index lo = slack >= 4 ? 2 : 0, hi = slack >= 4 ? slack - 2 : slack;
  std::uniform_int_distribution<Index> start(lo, hi);
  PlantedLayout layout;
  const Index r0 = row(rng), c0 = col(rng), t0 = start(rng);
  layout.region = {r0, r0 + side - 1, c0, c0 + side - 1};
  layout.segment = {t0, t0 + length - 1};
  return layout;
}

}  // namespace videxp
