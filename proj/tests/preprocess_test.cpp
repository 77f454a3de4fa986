#include <gtest/gtest.h>

#include <Eigen/Dense>
#include <cmath>
#include <random>

#include "hact/error.hpp"
#include "hact/preprocess.hpp"

namespace hact {
namespace {

SkeletonSequence one_joint_3d(double x, double y, double z) {
  SkeletonSequence s(3, 1);
  const double v[3] = {x, y, z};
  s.add_frame(v);
  return s;
}

std::vector<double> values(const Tensor& t) { return {t.data().begin(), t.data().end()}; }

TEST(ProjectTest, Examples) {
  const ProjectionParams p;
  const auto on_axis = project(one_joint_3d(0, 0, 2), p);
  EXPECT_DOUBLE_EQ(on_axis.at(0, 0, 0), 320.0);
  EXPECT_DOUBLE_EQ(on_axis.at(0, 0, 1), 240.0);

  const auto off = project(one_joint_3d(1, -1, 2), p);
  EXPECT_NEAR(off.at(0, 0, 0), 599.05, 1e-12);
  EXPECT_NEAR(off.at(0, 0, 1), -49.75, 1e-12);
}

TEST(ProjectTest, NonPositiveDepthNamesFrameAndJoint) {
  SkeletonSequence s(3, 2);
  const double f0[6] = {0, 0, 1, 0, 0, 1};
  const double f1[6] = {0, 0, 1, 1, 1, -0.5};
  s.add_frame(f0);
  s.add_frame(f1);
  try {
    project(s, ProjectionParams{});
    FAIL();
  } catch (const DataError& e) {
    const std::string msg = e.what();
    EXPECT_NE(msg.find("joint 1"), std::string::npos);
    EXPECT_NE(msg.find("frame 1"), std::string::npos);
  }
}

TEST(ProjectTest, RayInvarianceAndInversion) {
  std::mt19937_64 rng(1);
  std::uniform_real_distribution<double> xy(-2.0, 2.0), z(0.5, 6.0), lambda(0.01, 100.0);
  const ProjectionParams p;
  for (int i = 0; i < 200; ++i) {
    const double x = xy(rng), y = xy(rng), d = z(rng), l = lambda(rng);
    const auto a = project(one_joint_3d(x, y, d), p);
    const auto b = project(one_joint_3d(l * x, l * y, l * d), p);
    EXPECT_NEAR(a.at(0, 0, 0), b.at(0, 0, 0), 1e-9);
    EXPECT_NEAR(a.at(0, 0, 1), b.at(0, 0, 1), 1e-9);
    // Invert with the known depth.
    EXPECT_NEAR((a.at(0, 0, 0) - p.b_x) * d / p.c_x, x, 1e-9);
    EXPECT_NEAR((a.at(0, 0, 1) - p.b_y) * d / p.c_y, y, 1e-9);
  }
}

std::vector<ProjectionSample> synth_samples(std::size_t n, double noise, std::mt19937_64& rng,
                                            const ProjectionParams& truth = {}) {
  std::uniform_real_distribution<double> xy(-1.5, 1.5), z(1.5, 5.0);
  std::normal_distribution<double> eps(0.0, noise > 0 ? noise : 1.0);
  std::vector<ProjectionSample> out;
  for (std::size_t i = 0; i < n; ++i) {
    ProjectionSample s{xy(rng), xy(rng), z(rng), 0, 0};
    s.px = truth.c_x * s.x / s.z + truth.b_x + (noise > 0 ? eps(rng) : 0.0);
    s.py = truth.c_y * s.y / s.z + truth.b_y + (noise > 0 ? eps(rng) : 0.0);
    out.push_back(s);
  }
  return out;
}

TEST(FitProjectionTest, NoiselessRecoversCoefficients) {
  std::mt19937_64 rng(2);
  const auto samples = synth_samples(50, 0.0, rng);
  const auto p = fit_projection(samples);
  EXPECT_NEAR(p.c_x, 558.1, 1e-9);
  EXPECT_NEAR(p.c_y, 579.5, 1e-9);
}

TEST(FitProjectionTest, SingleSampleMatchesClosedForm) {
  const ProjectionSample s{0.4, -0.7, 3.0, 401.3, 100.2};
  const auto p = fit_projection(std::span(&s, 1));
  EXPECT_NEAR(p.c_x, (s.px - 320.0) * s.z / s.x, 1e-9);
  EXPECT_NEAR(p.c_y, (s.py - 240.0) * s.z / s.y, 1e-9);
}

TEST(FitProjectionTest, NoisyMatchesQrLeastSquares) {
  std::mt19937_64 rng(3);
  const auto samples = synth_samples(10, 2.0, rng);
  const auto p = fit_projection(samples);
  // Oracle: one-column least squares solved by Householder QR.
  Eigen::VectorXd ux(10), rx(10), uy(10), ry(10);
  for (int i = 0; i < 10; ++i) {
    ux(i) = samples[i].x / samples[i].z;
    rx(i) = samples[i].px - 320.0;
    uy(i) = samples[i].y / samples[i].z;
    ry(i) = samples[i].py - 240.0;
  }
  const double cx = Eigen::MatrixXd(ux).householderQr().solve(rx)(0);
  const double cy = Eigen::MatrixXd(uy).householderQr().solve(ry)(0);
  EXPECT_NEAR(p.c_x, cx, 1e-9);
  EXPECT_NEAR(p.c_y, cy, 1e-9);

  auto residual = [&](double c_x, double c_y) {
    double r = 0.0;
    for (const auto& s : samples) {
      r += std::pow(c_x * s.x / s.z + 320.0 - s.px, 2) + std::pow(c_y * s.y / s.z + 240.0 - s.py, 2);
    }
    return r;
  };
  EXPECT_LE(residual(p.c_x, p.c_y), residual(558.1, 579.5));
}

TEST(FitProjectionTest, DegenerateSamplesRejected) {
  const ProjectionSample s[2] = {{0, 1, 2, 320, 500}, {0, -1, 2, 320, 0}};
  EXPECT_THROW(fit_projection(s), DataError);
}

SkeletonSequence box_skeleton(double x0, double y0, double x1, double y1) {
  SkeletonSequence s(2, 2);
  const double f[4] = {x0, y0, x1, y1};
  s.add_frame(f);
  return s;
}

TEST(CropRectTest, Examples) {
  EXPECT_EQ(crop_rect(box_skeleton(100, 200, 300, 400), 640, 480), (CropRect{80, 180, 320, 420}));
  EXPECT_EQ(crop_rect(box_skeleton(0, 200, 300, 400), 640, 480).x0, 0);
  EXPECT_EQ(crop_rect(box_skeleton(100.4, 200.6, 299.2, 399.9), 640, 480, 0.0), (CropRect{100, 200, 300, 400}));
  EXPECT_THROW(crop_rect(SkeletonSequence(2, 3), 640, 480), DataError);
}

TEST(CropRectTest, UnionOverPeopleAndFrames) {
  SkeletonSequence a(2, 1), b(2, 1);
  const double a0[2] = {10, 10}, a1[2] = {50, 20}, b0[2] = {30, 60};
  a.add_frame(a0);
  a.add_frame(a1);
  b.add_frame(b0);
  const SkeletonSequence people[2] = {a, b};
  EXPECT_EQ(crop_rect(people, 100, 100, 0.0), (CropRect{10, 10, 50, 60}));
}

TEST(CropRectTest, InvariantsOnRandomSkeletons) {
  std::mt19937_64 rng(4);
  std::uniform_real_distribution<double> ux(-40.0, 680.0), uy(-40.0, 520.0), m(0.0, 0.3);
  for (int trial = 0; trial < 300; ++trial) {
    SkeletonSequence s(2, 5);
    for (int f = 0; f < 3; ++f) {
      double v[10];
      for (int j = 0; j < 5; ++j) {
        v[2 * j] = ux(rng);
        v[2 * j + 1] = uy(rng);
      }
      s.add_frame(v);
    }
    const CropRect r = crop_rect(s, 640, 480, m(rng));
    ASSERT_TRUE(r.valid_for(640, 480));
    for (std::size_t f = 0; f < s.frames(); ++f) {
      for (std::size_t j = 0; j < s.joints(); ++j) {
        const double x = s.at(f, j, 0), y = s.at(f, j, 1);
        if (x < 0 || x > 640 || y < 0 || y > 480) continue;
        EXPECT_TRUE(r.x0 <= x && x <= r.x1 && r.y0 <= y && y <= r.y1);
      }
    }
  }
}

TEST(CropResizeTest, IdentityAndConstant) {
  std::mt19937_64 rng(5);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  std::vector<double> d(2 * 3 * 7 * 9);
  for (auto& v : d) v = u(rng);
  const Tensor frames({2, 3, 7, 9}, d);
  const Tensor same = crop_resize(frames, {0, 0, 9, 7}, 7, 9);
  const auto a = values(same), b = values(frames);
  for (std::size_t i = 0; i < a.size(); ++i) EXPECT_NEAR(a[i], b[i], 1e-12);

  const Tensor flat = Tensor::full({1, 1, 10, 12}, 0.3);
  for (double v : values(crop_resize(flat, {2, 1, 9, 8}, 25, 31))) EXPECT_NEAR(v, 0.3, 1e-15);
}

TEST(CropResizeTest, CheckerboardUpscale) {
  const Tensor board({1, 1, 2, 2}, {1, 0, 0, 1});
  // Pixel-center sampling: destination i maps to source (i + 0.5)/2 - 0.5,
  // clamped, i.e. {0, 0.25, 0.75, 1}; f(y, x) = 1 - x - y + 2xy.
  const std::vector<double> expected{1,    0.75,  0.25,  0,     0.75, 0.625, 0.375, 0.25,
                                     0.25, 0.375, 0.625, 0.75, 0,    0.25,  0.75,  1};
  const auto got = values(crop_resize(board, {0, 0, 2, 2}, 4, 4));
  for (std::size_t i = 0; i < 16; ++i) EXPECT_NEAR(got[i], expected[i], 1e-15);
}

TEST(CropResizeTest, RectOutsideFrameRejected) {
  EXPECT_THROW(crop_resize(Tensor::zeros({1, 1, 4, 4}), {0, 0, 5, 4}, 2, 2), DataError);
}

TEST(SampleFramesTest, Examples) {
  std::mt19937_64 rng(6);
  for (int i = 0; i < 20; ++i) {
    const auto idx = sample_frames(8, 8, Mode::kTrain, rng);
    EXPECT_EQ(idx, (std::vector<std::size_t>{0, 1, 2, 3, 4, 5, 6, 7}));
  }
  EXPECT_EQ(sample_frames_at(80, 8, 0.0), (std::vector<std::size_t>{0, 10, 20, 30, 40, 50, 60, 70}));
  for (Mode mode : {Mode::kTrain, Mode::kEval}) {
    const auto idx = sample_frames(3, 8, mode, rng);
    ASSERT_EQ(idx.size(), 8u);
    for (std::size_t k = 0; k < 8; ++k) {
      EXPECT_LE(idx[k], 2u);
      if (k) EXPECT_GE(idx[k], idx[k - 1]);
    }
  }
  EXPECT_EQ(sample_frames(80, 8, Mode::kEval, rng), (std::vector<std::size_t>{5, 15, 25, 35, 45, 55, 65, 75}));
}

TEST(AugmentTest, TestModeIsPureCenterCrop) {
  std::vector<double> d(2 * 1 * 6 * 6);
  for (std::size_t i = 0; i < d.size(); ++i) d[i] = static_cast<double>(i);
  const Tensor frames({2, 1, 6, 6}, d);
  std::mt19937_64 r1(1), r2(99);
  const auto a = values(augment(frames, Mode::kEval, 4, r1));
  EXPECT_EQ(a, values(augment(frames, Mode::kEval, 4, r2)));
  EXPECT_EQ(a, values(crop_square(frames, 1, 1, 4)));
  EXPECT_EQ(r1(), std::mt19937_64(1)());  // no rng consumed
}

TEST(AugmentTest, FlipIsInvolution) {
  std::vector<double> d(3 * 2 * 4 * 5);
  for (std::size_t i = 0; i < d.size(); ++i) d[i] = std::sin(static_cast<double>(i));
  const Tensor frames({3, 2, 4, 5}, d);
  EXPECT_NE(values(flip_horizontal(frames)), d);
  EXPECT_EQ(values(flip_horizontal(flip_horizontal(frames))), d);
}

TEST(AugmentTest, TrainModeReproducibleUnderSeed) {
  std::vector<double> d(2 * 1 * 10 * 10);
  for (std::size_t i = 0; i < d.size(); ++i) d[i] = static_cast<double>(i % 17);
  const Tensor frames({2, 1, 10, 10}, d);
  std::mt19937_64 a(7), b(7);
  for (int i = 0; i < 10; ++i) EXPECT_EQ(values(augment(frames, Mode::kTrain, 6, a)), values(augment(frames, Mode::kTrain, 6, b)));
  EXPECT_THROW(augment(frames, Mode::kTrain, 11, a), DataError);
}

TEST(AugmentTest, SharedCropAcrossFrames) {
  // Two identical frames must stay identical after augmentation.
  std::vector<double> d(2 * 10 * 10);
  for (std::size_t i = 0; i < 100; ++i) d[i] = d[100 + i] = static_cast<double>(i);
  const Tensor frames({2, 1, 10, 10}, d);
  std::mt19937_64 rng(8);
  for (int i = 0; i < 10; ++i) {
    const auto out = values(augment(frames, Mode::kTrain, 5, rng));
    EXPECT_TRUE(std::equal(out.begin(), out.begin() + 25, out.begin() + 25));
  }
}

}  // namespace
}  // namespace hact
