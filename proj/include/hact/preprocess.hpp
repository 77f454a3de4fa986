#pragma once

#include <cstddef>
#include <random>
#include <span>
#include <vector>

#include "hact/ops.hpp"
#include "hact/tensor.hpp"

namespace hact {

// Joint positions of one clip: frames x joints x dims, dims = 2 (pixels, y
// down) or 3 (world units, depth z > 0).
class SkeletonSequence {
 public:
  SkeletonSequence() = default;
  SkeletonSequence(std::size_t dims, std::size_t joints);

  std::size_t dims() const { return dims_; }
  std::size_t joints() const { return joints_; }
  std::size_t frames() const { return joints_ == 0 ? 0 : coords_.size() / (joints_ * dims_); }
  bool empty() const { return coords_.empty(); }

  /// Appends a frame of joints*dims values.
  void add_frame(std::span<const double> values);
  double at(std::size_t frame, std::size_t joint, std::size_t axis) const {
    return coords_[(frame * joints_ + joint) * dims_ + axis];
  }
  double& at(std::size_t frame, std::size_t joint, std::size_t axis) {
    return coords_[(frame * joints_ + joint) * dims_ + axis];
  }
  std::span<const double> frame(std::size_t f) const {
    return std::span<const double>(coords_).subspan(f * joints_ * dims_, joints_ * dims_);
  }

 private:
  std::size_t dims_ = 2;
  std::size_t joints_ = 0;
  std::vector<double> coords_;
};

struct ProjectionParams {
  double c_x = 558.1;
  double c_y = 579.5;
  double b_x = 320.0;
  double b_y = 240.0;

  void validate() const;
};

// Pinhole projection of a 3D skeleton onto the image plane:
// px = c_x * x / z + b_x, py = c_y * y / z + b_y.
SkeletonSequence project(const SkeletonSequence& skeleton3d, const ProjectionParams& params);

struct ProjectionSample {
  double x, y, z;   // world
  double px, py;    // annotated pixel
};

// Least-squares focal coefficients with the principal point fixed at (b_x, b_y).
ProjectionParams fit_projection(std::span<const ProjectionSample> samples, double b_x = 320.0, double b_y = 240.0);

// Half-open integer pixel rectangle [x0,x1) x [y0,y1).
struct CropRect {
  int x0 = 0, y0 = 0, x1 = 0, y1 = 0;

  int width() const { return x1 - x0; }
  int height() const { return y1 - y0; }
  bool valid_for(int frame_w, int frame_h) const {
    return 0 <= x0 && x0 < x1 && x1 <= frame_w && 0 <= y0 && y0 < y1 && y1 <= frame_h;
  }
  bool operator==(const CropRect&) const = default;
};

constexpr double kCropMargin = 0.10;

// Bounding box over every joint of every frame (and every person), grown by
// margin * box width on the left and right and margin * box height on the top
// and bottom, clamped to the frame and rounded outward.
CropRect crop_rect(std::span<const SkeletonSequence> people, int frame_w, int frame_h, double margin = kCropMargin);
CropRect crop_rect(const SkeletonSequence& skeleton2d, int frame_w, int frame_h, double margin = kCropMargin);

// Bilinear resampling (pixel centers, edge clamped) of `rect` in every frame
// of [T,C,H,W] to [T,C,out_h,out_w].
Tensor crop_resize(const Tensor& frames, const CropRect& rect, std::size_t out_h = 256, std::size_t out_w = 256);

// n indices floor(offset + k * T/n), clamped to [0, T).
std::vector<std::size_t> sample_frames_at(std::size_t clip_len, std::size_t n, double offset);
// Train: offset uniform in the first segment. Test: offset at its midpoint.
std::vector<std::size_t> sample_frames(std::size_t clip_len, std::size_t n, Mode mode, std::mt19937_64& rng);

// Gathers frames [T,C,H,W] at `indices`.
Tensor gather_frames(const Tensor& frames, std::span<const std::size_t> indices);

Tensor flip_horizontal(const Tensor& frames);
// Square crop of side `size` at (y0, x0) from every frame.
Tensor crop_square(const Tensor& frames, std::size_t y0, std::size_t x0, std::size_t size);

// Train: one fair-coin flip for the whole clip, then one random square crop
// shared by all frames. Test: center crop only.
Tensor augment(const Tensor& frames, Mode mode, std::size_t crop_size, std::mt19937_64& rng);

}  // namespace hact
