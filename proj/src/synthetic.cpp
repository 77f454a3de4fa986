#include "hact/synthetic.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdio>
#include <numbers>
#include <random>

#include "hact/error.hpp"

namespace hact {

void SyntheticSpec::validate() const {
  if (classes == 0 || superfamilies == 0) throw ConfigError("synthetic: classes and superfamilies must be positive");
  if (classes % superfamilies != 0) {
    throw ConfigError("synthetic: " + std::to_string(classes) + " classes do not split evenly into " +
                      std::to_string(superfamilies) + " superfamilies");
  }
  if (superfamilies > kSyntheticFamilies) {
    throw ConfigError("synthetic: at most " + std::to_string(kSyntheticFamilies) + " superfamilies are available");
  }
  if (clips_per_class == 0) throw ConfigError("synthetic: clips_per_class must be positive");
  if (width < 32 || height < 32) throw ConfigError("synthetic: frames must be at least 32x32");
  if (clip_len < 2) throw ConfigError("synthetic: clip_len must be >= 2");
  if (!(clutter >= 0.0 && clutter <= 1.0)) throw ConfigError("synthetic: clutter must lie in [0,1]");
  if (!(offset >= 0.0 && offset <= 1.0)) throw ConfigError("synthetic: offset must lie in [0,1]");
  if (joints < 6) throw ConfigError("synthetic: at least 6 joints are required");
}

ProjectionParams synthetic_projection(const SyntheticSpec& spec) {
  const double s = static_cast<double>(spec.width) / 640.0;
  ProjectionParams p;
  p.c_x = 558.1 * s;
  p.c_y = 579.5 * s;
  p.b_x = static_cast<double>(spec.width) / 2.0;
  p.b_y = static_cast<double>(spec.height) / 2.0;
  return p;
}

namespace {

// Emitted joints first; the neck and hip are drawn but not emitted.
enum Joint { kHead, kTorso, kLeftHand, kRightHand, kLeftFoot, kRightFoot, kCoreJoints, kNeck = kCoreJoints, kHip };

struct Point {
  double x, y;
};

using Pose = std::array<Point, kHip + 1>;

// Pose relative to the hip, in units of body height, at phase theta. Each
// superfamily moves one body region (hands, feet, head, hips); variant 0 moves
// it vertically, variant 1 horizontally. Every motion is mirror symmetric up to
// a half-cycle shift, so horizontal flips keep every class.
Pose pose(std::size_t family, std::size_t variant, double theta, double amp) {
  Pose p{{{0.0, -0.72}, {0.0, -0.28}, {-0.3, -0.22}, {0.3, -0.22}, {-0.14, 0.3}, {0.14, 0.3}, {0.0, -0.56}, {0.0, 0.0}}};
  const double a = amp * 0.5 * (1.0 - std::cos(theta));
  const double sway = amp * std::sin(theta);
  const bool vertical = variant == 0;
  switch (family) {
    case 0:  // hands: raise / clap
      if (vertical) {
        p[kLeftHand].y -= 0.45 * a;
        p[kRightHand].y -= 0.45 * a;
      } else {
        p[kLeftHand].x += 0.24 * a;
        p[kRightHand].x -= 0.24 * a;
      }
      break;
    case 1:  // feet: lift / spread
      if (vertical) {
        p[kLeftFoot].y -= 0.16 * a;
        p[kRightFoot].y -= 0.16 * a;
      } else {
        p[kLeftFoot].x -= 0.18 * a;
        p[kRightFoot].x += 0.18 * a;
      }
      break;
    case 2:  // head: nod / shake
      if (vertical) {
        p[kHead].y += 0.2 * a;
      } else {
        p[kHead].x += 0.16 * sway;
      }
      break;
    default:  // hips: bob / sway
      if (vertical) {
        p[kHip].y -= 0.16 * a;
        p[kTorso].y -= 0.08 * a;
      } else {
        p[kHip].x += 0.14 * sway;
        p[kTorso].x += 0.07 * sway;
      }
      break;
  }
  return p;
}

class Canvas {
 public:
  Canvas(std::size_t w, std::size_t h, double fill) : w_(w), h_(h), px_(w * h, fill) {}

  void rect(double x0, double y0, double x1, double y1, double value) {
    for (std::size_t y = 0; y < h_; ++y) {
      for (std::size_t x = 0; x < w_; ++x) {
        const double cx = static_cast<double>(x) + 0.5, cy = static_cast<double>(y) + 0.5;
        if (cx >= x0 && cx < x1 && cy >= y0 && cy < y1) px_[y * w_ + x] = value;
      }
    }
  }

  // Paints `value` with coverage falling off over one pixel outside `radius`
  // around the segment a-b.
  void segment(Point a, Point b, double radius, double value) {
    const double x_lo = std::min(a.x, b.x) - radius - 1, x_hi = std::max(a.x, b.x) + radius + 1;
    const double y_lo = std::min(a.y, b.y) - radius - 1, y_hi = std::max(a.y, b.y) + radius + 1;
    const double dx = b.x - a.x, dy = b.y - a.y, len2 = dx * dx + dy * dy;
    for (long y = std::max(0L, static_cast<long>(std::floor(y_lo))); y < std::min<long>(h_, std::ceil(y_hi)); ++y) {
      for (long x = std::max(0L, static_cast<long>(std::floor(x_lo))); x < std::min<long>(w_, std::ceil(x_hi)); ++x) {
        const double px = static_cast<double>(x) + 0.5, py = static_cast<double>(y) + 0.5;
        double t = len2 > 0 ? ((px - a.x) * dx + (py - a.y) * dy) / len2 : 0.0;
        t = std::clamp(t, 0.0, 1.0);
        const double ex = a.x + t * dx - px, ey = a.y + t * dy - py;
        const double cover = std::clamp(radius + 0.5 - std::sqrt(ex * ex + ey * ey), 0.0, 1.0);
        double& v = px_[static_cast<std::size_t>(y) * w_ + static_cast<std::size_t>(x)];
        v += cover * (value - v);
      }
    }
  }

  void disc(Point c, double radius, double value) { segment(c, c, radius, value); }

  std::vector<double>& pixels() { return px_; }

 private:
  std::size_t w_, h_;
  std::vector<double> px_;
};

struct Distractor {
  Point start, velocity;
  double radius;
};

}  // namespace

SyntheticDataset generate_synthetic(const SyntheticSpec& spec) {
  spec.validate();
  SyntheticDataset ds;
  ds.spec = spec;
  ds.projection = synthetic_projection(spec);
  const std::size_t per_family = spec.classes / spec.superfamilies;
  for (std::size_t c = 0; c < spec.classes; ++c) ds.superfamily_of_class.push_back(c / per_family);

  const double W = static_cast<double>(spec.width), H = static_cast<double>(spec.height);
  const std::size_t T = spec.clip_len;
  const double body = 0.42 * H;
  const double pi = std::numbers::pi;
  // Depth offsets per core joint keep the 3D skeleton off a single plane.
  const std::array<double, kCoreJoints> dz{0.0, 0.05, -0.12, -0.12, 0.03, 0.03};

  for (std::size_t c = 0; c < spec.classes; ++c) {
    const std::size_t family = ds.superfamily_of_class[c];
    const std::size_t rank = c % per_family;
    const std::size_t variant = rank % 2;
    const double cycles = static_cast<double>(rank / 2 + 1);
    for (std::size_t k = 0; k < spec.clips_per_class; ++k) {
      std::seed_seq seq{static_cast<std::uint32_t>(spec.seed), static_cast<std::uint32_t>(spec.seed >> 32),
                        static_cast<std::uint32_t>(c), static_cast<std::uint32_t>(k)};
      std::mt19937_64 rng(seq);
      std::uniform_real_distribution<double> unit(0.0, 1.0);
      auto uniform = [&](double lo, double hi) { return lo + (hi - lo) * unit(rng); };

      const double h = body * uniform(0.9, 1.1);
      const double amp = uniform(0.85, 1.15);
      const double phase = uniform(0.0, 2.0 * pi);
      const double room_x = std::max(0.0, W / 2 - 0.4 * h - 2);
      const double room_y = std::max(0.0, H / 2 - 0.58 * h - 2);
      const double hip_x = W / 2 + spec.offset * room_x * uniform(-1.0, 1.0);
      const double hip_y = H / 2 + 0.26 * h + spec.offset * room_y * uniform(-1.0, 1.0);
      const double depth = uniform(2.5, 3.5);

      Canvas background(spec.width, spec.height, 0.1);
      const auto rects = static_cast<std::size_t>(std::lround(12.0 * spec.clutter));
      for (std::size_t r = 0; r < rects; ++r) {
        const double rw = uniform(0.05, 0.25) * W, rh = uniform(0.05, 0.25) * H;
        const double x0 = uniform(0.0, W - rw), y0 = uniform(0.0, H - rh);
        background.rect(x0, y0, x0 + rw, y0 + rh, uniform(0.15, 0.75));
      }
      std::vector<Distractor> movers;
      const auto n_movers = static_cast<std::size_t>(std::lround(2.0 * spec.clutter));
      for (std::size_t m = 0; m < n_movers; ++m) {
        const double speed = uniform(0.3, 1.0) * W / static_cast<double>(T);
        const double angle = uniform(0.0, 2.0 * pi);
        movers.push_back({{uniform(0.0, W), uniform(0.0, H)},
                          {speed * std::cos(angle), speed * std::sin(angle)},
                          uniform(0.05, 0.09) * H});
      }
      const double noise_sd = 0.02 + 0.08 * spec.clutter;
      std::normal_distribution<double> noise(0.0, noise_sd);

      RawClip clip;
      char id[32];
      std::snprintf(id, sizeof id, "c%02zu_%03zu", c, k);
      clip.id = id;
      clip.label = c;
      clip.superfamily = family;
      clip.skeleton2d = SkeletonSequence(2, spec.joints);
      clip.skeleton3d = SkeletonSequence(3, spec.joints);
      std::vector<double> frames(T * spec.width * spec.height);

      for (std::size_t t = 0; t < T; ++t) {
        const double theta = 2.0 * pi * cycles * static_cast<double>(t) / static_cast<double>(T) + phase;
        const Pose rel = pose(family, variant, theta, amp);
        Pose p;
        for (std::size_t j = 0; j < p.size(); ++j) p[j] = {hip_x + h * rel[j].x, hip_y + h * rel[j].y};

        Canvas canvas = background;
        for (const auto& m : movers) {
          Point at{m.start.x + m.velocity.x * static_cast<double>(t), m.start.y + m.velocity.y * static_cast<double>(t)};
          at.x = std::fmod(std::fmod(at.x, W) + W, W);
          at.y = std::fmod(std::fmod(at.y, H) + H, H);
          canvas.disc(at, m.radius, 0.9);
        }
        const Point hip = p[kHip], neck = p[kNeck];
        const double limb = std::max(0.6, 0.035 * h);
        canvas.segment(neck, p[kTorso], limb * 1.3, 1.0);
        canvas.segment(p[kTorso], hip, limb * 1.3, 1.0);
        canvas.segment(neck, p[kLeftHand], limb, 1.0);
        canvas.segment(neck, p[kRightHand], limb, 1.0);
        canvas.segment(hip, p[kLeftFoot], limb, 1.0);
        canvas.segment(hip, p[kRightFoot], limb, 1.0);
        canvas.disc(p[kHead], 0.09 * h, 1.0);

        auto& px = canvas.pixels();
        double* out = frames.data() + t * spec.width * spec.height;
        for (std::size_t i = 0; i < px.size(); ++i) {
          const double v = std::clamp(px[i] + noise(rng), 0.0, 1.0);
          out[i] = std::round(v * 255.0) / 255.0;
        }

        std::vector<double> f2, f3;
        for (std::size_t j = 0; j < spec.joints; ++j) {
          Point q;
          double z;
          if (j < kCoreJoints) {
            q = p[j];
            z = depth + dz[j];
          } else {
            // Extra joints sit halfway between the torso and a core joint.
            const std::size_t other = (j - kCoreJoints) % kCoreJoints;
            q = {0.5 * (p[kTorso].x + p[other].x), 0.5 * (p[kTorso].y + p[other].y)};
            z = depth + 0.5 * (dz[kTorso] + dz[other]);
          }
          f2.push_back(q.x);
          f2.push_back(q.y);
          f3.push_back((q.x - ds.projection.b_x) * z / ds.projection.c_x);
          f3.push_back((q.y - ds.projection.b_y) * z / ds.projection.c_y);
          f3.push_back(z);
        }
        clip.skeleton2d.add_frame(f2);
        clip.skeleton3d.add_frame(f3);
      }
      clip.frames = Tensor({T, 1, spec.height, spec.width}, std::move(frames));
      ds.clips.push_back(std::move(clip));
    }
  }
  return ds;
}

TrainTestSplit split_train_test(const std::vector<RawClip>& clips, std::size_t classes, std::uint64_t seed) {
  std::vector<std::vector<std::size_t>> by_class(classes);
  for (std::size_t i = 0; i < clips.size(); ++i) {
    if (clips[i].label >= classes) throw IndexError("clip " + clips[i].id + " has label outside the class range");
    by_class[clips[i].label].push_back(i);
  }
  std::mt19937_64 rng(seed);
  TrainTestSplit s;
  for (auto& members : by_class) {
    std::shuffle(members.begin(), members.end(), rng);
    const std::size_t half = members.size() / 2;
    s.train.insert(s.train.end(), members.begin(), members.begin() + static_cast<std::ptrdiff_t>(half));
    s.test.insert(s.test.end(), members.begin() + static_cast<std::ptrdiff_t>(half), members.end());
  }
  std::sort(s.train.begin(), s.train.end());
  std::sort(s.test.begin(), s.test.end());
  return s;
}

}  // namespace hact
