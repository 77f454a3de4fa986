#include "hact/preprocess.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

#include "hact/error.hpp"

namespace hact {

SkeletonSequence::SkeletonSequence(std::size_t dims, std::size_t joints) : dims_(dims), joints_(joints) {
  if (dims != 2 && dims != 3) throw DataError("skeleton joints must have 2 or 3 coordinates");
  if (joints == 0) throw DataError("skeleton needs at least one joint");
}

void SkeletonSequence::add_frame(std::span<const double> values) {
  if (values.size() != joints_ * dims_) {
    throw DataError("skeleton frame has " + std::to_string(values.size()) + " values, expected " +
                    std::to_string(joints_ * dims_));
  }
  coords_.insert(coords_.end(), values.begin(), values.end());
}

void ProjectionParams::validate() const {
  for (double v : {c_x, c_y, b_x, b_y}) {
    if (!std::isfinite(v)) throw ConfigError("projection parameters must be finite");
  }
  if (c_x == 0.0 || c_y == 0.0) throw ConfigError("projection coefficients must be nonzero");
}

SkeletonSequence project(const SkeletonSequence& skeleton3d, const ProjectionParams& params) {
  params.validate();
  if (skeleton3d.dims() != 3) throw DataError("project expects a 3D skeleton");
  SkeletonSequence out(2, skeleton3d.joints());
  std::vector<double> frame(2 * skeleton3d.joints());
  for (std::size_t f = 0; f < skeleton3d.frames(); ++f) {
    for (std::size_t j = 0; j < skeleton3d.joints(); ++j) {
      const double z = skeleton3d.at(f, j, 2);
      if (!(z > 0.0)) {
        throw DataError("projection: joint " + std::to_string(j) + " of frame " + std::to_string(f) +
                        " has non-positive depth " + std::to_string(z));
      }
      frame[2 * j] = params.c_x * skeleton3d.at(f, j, 0) / z + params.b_x;
      frame[2 * j + 1] = params.c_y * skeleton3d.at(f, j, 1) / z + params.b_y;
    }
    out.add_frame(frame);
  }
  return out;
}

ProjectionParams fit_projection(std::span<const ProjectionSample> samples, double b_x, double b_y) {
  // Minimizing sum (c * u_i - r_i)^2 with u = x/z, r = px - b gives
  // c = sum(u r) / sum(u^2) per axis.
  double uu_x = 0.0, ur_x = 0.0, uu_y = 0.0, ur_y = 0.0;
  for (const auto& s : samples) {
    if (!(s.z > 0.0)) throw DataError("fit_projection: sample with non-positive depth");
    const double ux = s.x / s.z, uy = s.y / s.z;
    uu_x += ux * ux;
    ur_x += ux * (s.px - b_x);
    uu_y += uy * uy;
    ur_y += uy * (s.py - b_y);
  }
  if (uu_x == 0.0) throw DataError("fit_projection: no sample with nonzero x; c_x is undetermined");
  if (uu_y == 0.0) throw DataError("fit_projection: no sample with nonzero y; c_y is undetermined");
  ProjectionParams p;
  p.c_x = ur_x / uu_x;
  p.c_y = ur_y / uu_y;
  p.b_x = b_x;
  p.b_y = b_y;
  return p;
}

CropRect crop_rect(std::span<const SkeletonSequence> people, int frame_w, int frame_h, double margin) {
  if (frame_w <= 0 || frame_h <= 0) throw DataError("crop_rect: frame size must be positive");
  if (margin < 0.0 || !std::isfinite(margin)) throw ConfigError("crop margin must be finite and >= 0");
  double min_x = std::numeric_limits<double>::infinity(), max_x = -min_x;
  double min_y = min_x, max_y = -min_x;
  std::size_t count = 0;
  for (const auto& person : people) {
    if (person.dims() != 2) throw DataError("crop_rect expects 2D skeletons");
    for (std::size_t f = 0; f < person.frames(); ++f) {
      for (std::size_t j = 0; j < person.joints(); ++j) {
        const double x = person.at(f, j, 0), y = person.at(f, j, 1);
        if (!std::isfinite(x) || !std::isfinite(y)) throw DataError("crop_rect: non-finite joint position");
        min_x = std::min(min_x, x);
        max_x = std::max(max_x, x);
        min_y = std::min(min_y, y);
        max_y = std::max(max_y, y);
        ++count;
      }
    }
  }
  if (count == 0) throw DataError("crop_rect: empty skeleton");

  const double grow_x = margin * (max_x - min_x);
  const double grow_y = margin * (max_y - min_y);
  const double fx0 = std::clamp(min_x - grow_x, 0.0, static_cast<double>(frame_w));
  const double fx1 = std::clamp(max_x + grow_x, 0.0, static_cast<double>(frame_w));
  const double fy0 = std::clamp(min_y - grow_y, 0.0, static_cast<double>(frame_h));
  const double fy1 = std::clamp(max_y + grow_y, 0.0, static_cast<double>(frame_h));
  CropRect r{static_cast<int>(std::floor(fx0)), static_cast<int>(std::floor(fy0)),
             static_cast<int>(std::ceil(fx1)), static_cast<int>(std::ceil(fy1))};
  // A box of zero extent still covers the pixel holding it.
  if (r.x1 == r.x0) {
    if (r.x1 < frame_w) ++r.x1; else --r.x0;
  }
  if (r.y1 == r.y0) {
    if (r.y1 < frame_h) ++r.y1; else --r.y0;
  }
  if (max_x < 0.0 || min_x > frame_w || max_y < 0.0 || min_y > frame_h || !r.valid_for(frame_w, frame_h)) {
    throw DataError("crop_rect: skeleton lies outside the " + std::to_string(frame_w) + "x" +
                    std::to_string(frame_h) + " frame");
  }
  return r;
}

CropRect crop_rect(const SkeletonSequence& skeleton2d, int frame_w, int frame_h, double margin) {
  return crop_rect(std::span<const SkeletonSequence>(&skeleton2d, 1), frame_w, frame_h, margin);
}

Tensor crop_resize(const Tensor& frames, const CropRect& rect, std::size_t out_h, std::size_t out_w) {
  if (frames.ndim() != 4) throw ShapeError("crop_resize: expected [T,C,H,W], got " + shape_str(frames.shape()));
  const std::size_t t = frames.dim(0), c = frames.dim(1), h = frames.dim(2), w = frames.dim(3);
  if (!rect.valid_for(static_cast<int>(w), static_cast<int>(h))) {
    throw DataError("crop_resize: rect [" + std::to_string(rect.x0) + "," + std::to_string(rect.x1) + ")x[" +
                    std::to_string(rect.y0) + "," + std::to_string(rect.y1) + ") outside " + std::to_string(w) +
                    "x" + std::to_string(h) + " frame");
  }
  if (out_h == 0 || out_w == 0) throw ConfigError("crop_resize: output size must be positive");

  struct Tap {
    std::size_t lo, hi;
    double frac;
  };
  auto taps = [](int origin, int extent, std::size_t out) {
    std::vector<Tap> result(out);
    const double scale = static_cast<double>(extent) / static_cast<double>(out);
    for (std::size_t i = 0; i < out; ++i) {
      double src = (static_cast<double>(i) + 0.5) * scale - 0.5;
      src = std::clamp(src, 0.0, static_cast<double>(extent - 1));
      const auto lo = static_cast<std::size_t>(std::floor(src));
      const std::size_t hi = std::min<std::size_t>(lo + 1, static_cast<std::size_t>(extent - 1));
      result[i] = {lo + static_cast<std::size_t>(origin), hi + static_cast<std::size_t>(origin),
                   src - static_cast<double>(lo)};
    }
    return result;
  };
  const auto ys = taps(rect.y0, rect.height(), out_h);
  const auto xs = taps(rect.x0, rect.width(), out_w);

  const auto src = frames.data();
  std::vector<double> out(t * c * out_h * out_w);
  for (std::size_t p = 0; p < t * c; ++p) {
    const double* plane = src.data() + p * h * w;
    double* dst = out.data() + p * out_h * out_w;
    for (std::size_t i = 0; i < out_h; ++i) {
      const auto& ty = ys[i];
      for (std::size_t j = 0; j < out_w; ++j) {
        const auto& tx = xs[j];
        const double top = plane[ty.lo * w + tx.lo] * (1.0 - tx.frac) + plane[ty.lo * w + tx.hi] * tx.frac;
        const double bot = plane[ty.hi * w + tx.lo] * (1.0 - tx.frac) + plane[ty.hi * w + tx.hi] * tx.frac;
        dst[i * out_w + j] = top * (1.0 - ty.frac) + bot * ty.frac;
      }
    }
  }
  return Tensor({t, c, out_h, out_w}, std::move(out));
}

std::vector<std::size_t> sample_frames_at(std::size_t clip_len, std::size_t n, double offset) {
  if (clip_len == 0) throw DataError("sample_frames: empty clip");
  if (n == 0) throw ConfigError("sample_frames: need at least one frame");
  const double segment = static_cast<double>(clip_len) / static_cast<double>(n);
  std::vector<std::size_t> idx(n);
  for (std::size_t k = 0; k < n; ++k) {
    const double pos = std::floor(offset + static_cast<double>(k) * segment);
    idx[k] = static_cast<std::size_t>(std::clamp(pos, 0.0, static_cast<double>(clip_len - 1)));
  }
  return idx;
}

std::vector<std::size_t> sample_frames(std::size_t clip_len, std::size_t n, Mode mode, std::mt19937_64& rng) {
  if (n == 0) throw ConfigError("sample_frames: need at least one frame");
  const double segment = static_cast<double>(clip_len) / static_cast<double>(n);
  double offset = 0.5 * segment;
  if (mode == Mode::kTrain) offset = std::uniform_real_distribution<double>(0.0, segment)(rng);
  return sample_frames_at(clip_len, n, offset);
}

Tensor gather_frames(const Tensor& frames, std::span<const std::size_t> indices) {
  if (frames.ndim() != 4) throw ShapeError("gather_frames: expected [T,C,H,W], got " + shape_str(frames.shape()));
  const std::size_t per = frames.numel() / frames.dim(0);
  std::vector<double> out;
  out.reserve(per * indices.size());
  for (auto i : indices) {
    if (i >= frames.dim(0)) throw IndexError("frame index " + std::to_string(i) + " out of range");
    const auto* base = frames.data().data() + i * per;
    out.insert(out.end(), base, base + per);
  }
  Shape shape = frames.shape();
  shape[0] = indices.size();
  return Tensor(std::move(shape), std::move(out));
}

Tensor flip_horizontal(const Tensor& frames) {
  if (frames.ndim() != 4) throw ShapeError("flip_horizontal: expected [T,C,H,W], got " + shape_str(frames.shape()));
  const std::size_t w = frames.dim(3);
  const std::size_t rows = frames.numel() / w;
  const auto src = frames.data();
  std::vector<double> out(src.size());
  for (std::size_t r = 0; r < rows; ++r) {
    for (std::size_t x = 0; x < w; ++x) out[r * w + x] = src[r * w + (w - 1 - x)];
  }
  return Tensor(frames.shape(), std::move(out));
}

Tensor crop_square(const Tensor& frames, std::size_t y0, std::size_t x0, std::size_t size) {
  if (frames.ndim() != 4) throw ShapeError("crop_square: expected [T,C,H,W], got " + shape_str(frames.shape()));
  const std::size_t planes = frames.dim(0) * frames.dim(1), h = frames.dim(2), w = frames.dim(3);
  if (size == 0 || y0 + size > h || x0 + size > w) {
    throw DataError("crop of " + std::to_string(size) + " at (" + std::to_string(y0) + "," + std::to_string(x0) +
                    ") exceeds " + std::to_string(h) + "x" + std::to_string(w) + " frames");
  }
  const auto src = frames.data();
  std::vector<double> out(planes * size * size);
  for (std::size_t p = 0; p < planes; ++p) {
    for (std::size_t y = 0; y < size; ++y) {
      const double* row = src.data() + (p * h + y0 + y) * w + x0;
      std::copy(row, row + size, out.begin() + static_cast<std::ptrdiff_t>((p * size + y) * size));
    }
  }
  return Tensor({frames.dim(0), frames.dim(1), size, size}, std::move(out));
}

Tensor augment(const Tensor& frames, Mode mode, std::size_t crop_size, std::mt19937_64& rng) {
  if (frames.ndim() != 4) throw ShapeError("augment: expected [T,C,H,W], got " + shape_str(frames.shape()));
  const std::size_t h = frames.dim(2), w = frames.dim(3);
  if (crop_size == 0 || crop_size > h || crop_size > w) {
    throw DataError("crop size " + std::to_string(crop_size) + " larger than " + std::to_string(h) + "x" +
                    std::to_string(w) + " frames");
  }
  if (mode == Mode::kEval) return crop_square(frames, (h - crop_size) / 2, (w - crop_size) / 2, crop_size);
  const bool flip = std::bernoulli_distribution(0.5)(rng);
  const std::size_t y0 = std::uniform_int_distribution<std::size_t>(0, h - crop_size)(rng);
  const std::size_t x0 = std::uniform_int_distribution<std::size_t>(0, w - crop_size)(rng);
  return crop_square(flip ? flip_horizontal(frames) : frames, y0, x0, crop_size);
}

}  // namespace hact
