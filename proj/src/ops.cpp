#include "hact/ops.hpp"

#include <Eigen/Core>
#include <algorithm>
#include <cmath>
#include <limits>

#include "hact/error.hpp"

namespace hact {

namespace {

using RowMatrix = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using MatMap = Eigen::Map<RowMatrix>;
using ConstMatMap = Eigen::Map<const RowMatrix>;

void require_same_shape(const Tensor& a, const Tensor& b, const char* op) {
  if (a.shape() != b.shape()) {
    throw ShapeError(std::string(op) + ": shapes " + shape_str(a.shape()) + " and " + shape_str(b.shape()) +
                     " differ");
  }
}

struct ConvGeometry {
  std::size_t n, cin, t, h, w;
  std::size_t cout, kt, kh, kw;
  std::size_t ot, oh, ow;
  Conv3dOptions opt;

  std::size_t patch() const { return cin * kt * kh * kw; }
  std::size_t out_voxels() const { return ot * oh * ow; }
  std::size_t in_voxels() const { return t * h * w; }
};

ConvGeometry conv_geometry(const Tensor& input, const Tensor& weight, const Tensor& bias, const Conv3dOptions& opt) {
  if (input.ndim() != 5) throw ShapeError("conv3d: input must be [N,C,T,H,W], got " + shape_str(input.shape()));
  if (weight.ndim() != 5) {
    throw ShapeError("conv3d: weight must be [Cout,Cin,kT,kH,kW], got " + shape_str(weight.shape()));
  }
  if (input.dim(1) != weight.dim(1)) {
    throw ShapeError("conv3d: input " + shape_str(input.shape()) + " has " + std::to_string(input.dim(1)) +
                     " channels but weight " + shape_str(weight.shape()) + " expects " +
                     std::to_string(weight.dim(1)));
  }
  if (bias.ndim() != 1 || bias.dim(0) != weight.dim(0)) {
    throw ShapeError("conv3d: bias " + shape_str(bias.shape()) + " does not match weight " +
                     shape_str(weight.shape()));
  }
  for (auto s : opt.stride) {
    if (s < 1) throw ShapeError("conv3d: stride components must be >= 1");
  }
  ConvGeometry g{};
  g.n = input.dim(0);
  g.cin = input.dim(1);
  g.t = input.dim(2);
  g.h = input.dim(3);
  g.w = input.dim(4);
  g.cout = weight.dim(0);
  g.kt = weight.dim(2);
  g.kh = weight.dim(3);
  g.kw = weight.dim(4);
  g.opt = opt;
  const std::array<std::size_t, 3> in{g.t, g.h, g.w};
  const std::array<std::size_t, 3> k{g.kt, g.kh, g.kw};
  std::array<std::size_t, 3> out{};
  for (int a = 0; a < 3; ++a) {
    const std::size_t padded = in[a] + 2 * opt.padding[a];
    if (k[a] > padded) {
      throw ShapeError("conv3d: kernel " + shape_str(weight.shape()) + " exceeds padded input " +
                       shape_str(input.shape()));
    }
    out[a] = (padded - k[a]) / opt.stride[a] + 1;
  }
  g.ot = out[0];
  g.oh = out[1];
  g.ow = out[2];
  return g;
}

// Source frame index for an (unpadded-coordinate) temporal position, or -1
// when it falls in zero padding.
inline long temporal_source(long ti, const ConvGeometry& g) {
  if (ti >= 0 && ti < static_cast<long>(g.t)) return ti;
  if (g.opt.temporal_padding == TemporalPadding::kReplicate) {
    return std::clamp<long>(ti, 0, static_cast<long>(g.t) - 1);
  }
  return -1;
}

// cols: [patch, out_voxels] for sample `x` ([Cin,T,H,W]).
void im2col(const double* x, const ConvGeometry& g, double* cols) {
  const std::size_t ov = g.out_voxels();
  std::size_t row = 0;
  for (std::size_t c = 0; c < g.cin; ++c) {
    const double* xc = x + c * g.in_voxels();
    for (std::size_t dt = 0; dt < g.kt; ++dt) {
      for (std::size_t dh = 0; dh < g.kh; ++dh) {
        for (std::size_t dw = 0; dw < g.kw; ++dw, ++row) {
          double* out = cols + row * ov;
          std::size_t o = 0;
          for (std::size_t ot = 0; ot < g.ot; ++ot) {
            const long ts = temporal_source(static_cast<long>(ot * g.opt.stride[0] + dt) -
                                                static_cast<long>(g.opt.padding[0]),
                                            g);
            for (std::size_t oh = 0; oh < g.oh; ++oh) {
              const long hi = static_cast<long>(oh * g.opt.stride[1] + dh) - static_cast<long>(g.opt.padding[1]);
              const bool row_ok = ts >= 0 && hi >= 0 && hi < static_cast<long>(g.h);
              const double* xr = row_ok ? xc + (ts * g.h + hi) * g.w : nullptr;
              for (std::size_t ow = 0; ow < g.ow; ++ow, ++o) {
                const long wi = static_cast<long>(ow * g.opt.stride[2] + dw) - static_cast<long>(g.opt.padding[2]);
                out[o] = (row_ok && wi >= 0 && wi < static_cast<long>(g.w)) ? xr[wi] : 0.0;
              }
            }
          }
        }
      }
    }
  }
}

// Adjoint of im2col: scatter-add cols back into dx ([Cin,T,H,W]).
void col2im(const double* cols, const ConvGeometry& g, double* dx) {
  const std::size_t ov = g.out_voxels();
  std::size_t row = 0;
  for (std::size_t c = 0; c < g.cin; ++c) {
    double* dxc = dx + c * g.in_voxels();
    for (std::size_t dt = 0; dt < g.kt; ++dt) {
      for (std::size_t dh = 0; dh < g.kh; ++dh) {
        for (std::size_t dw = 0; dw < g.kw; ++dw, ++row) {
          const double* in = cols + row * ov;
          std::size_t o = 0;
          for (std::size_t ot = 0; ot < g.ot; ++ot) {
            const long ts = temporal_source(static_cast<long>(ot * g.opt.stride[0] + dt) -
                                                static_cast<long>(g.opt.padding[0]),
                                            g);
            for (std::size_t oh = 0; oh < g.oh; ++oh) {
              const long hi = static_cast<long>(oh * g.opt.stride[1] + dh) - static_cast<long>(g.opt.padding[1]);
              const bool row_ok = ts >= 0 && hi >= 0 && hi < static_cast<long>(g.h);
              double* dr = row_ok ? dxc + (ts * g.h + hi) * g.w : nullptr;
              for (std::size_t ow = 0; ow < g.ow; ++ow, ++o) {
                const long wi = static_cast<long>(ow * g.opt.stride[2] + dw) - static_cast<long>(g.opt.padding[2]);
                if (row_ok && wi >= 0 && wi < static_cast<long>(g.w)) dr[wi] += in[o];
              }
            }
          }
        }
      }
    }
  }
}

}  // namespace

Tensor conv3d(const Tensor& input, const Tensor& weight, const Tensor& bias, const Conv3dOptions& options) {
  const ConvGeometry g = conv_geometry(input, weight, bias, options);
  const std::size_t patch = g.patch();
  const std::size_t ov = g.out_voxels();
  std::vector<double> out(g.n * g.cout * ov);
  std::vector<double> cols(patch * ov);
  const ConstMatMap wmat(weight.data().data(), g.cout, patch);
  const auto b = bias.data();
  for (std::size_t s = 0; s < g.n; ++s) {
    im2col(input.data().data() + s * g.cin * g.in_voxels(), g, cols.data());
    MatMap y(out.data() + s * g.cout * ov, g.cout, ov);
    y.noalias() = wmat * ConstMatMap(cols.data(), patch, ov);
    for (std::size_t c = 0; c < g.cout; ++c) y.row(c).array() += b[c];
  }

  Shape shape{g.n, g.cout, g.ot, g.oh, g.ow};
  return record_op("conv3d", std::move(shape), std::move(out), {input, weight, bias},
                   [input, weight, g](std::span<const double> gy, std::span<const std::span<double>> gin) {
                     const std::size_t patch = g.patch();
                     const std::size_t ov = g.out_voxels();
                     std::vector<double> cols(patch * ov);
                     const ConstMatMap wmat(weight.data().data(), g.cout, patch);
                     for (std::size_t s = 0; s < g.n; ++s) {
                       const ConstMatMap dy(gy.data() + s * g.cout * ov, g.cout, ov);
                       if (!gin[1].empty()) {
                         im2col(input.data().data() + s * g.cin * g.in_voxels(), g, cols.data());
                         MatMap dw(gin[1].data(), g.cout, patch);
                         dw.noalias() += dy * ConstMatMap(cols.data(), patch, ov).transpose();
                       }
                       if (!gin[2].empty()) {
                         for (std::size_t c = 0; c < g.cout; ++c) gin[2][c] += dy.row(c).sum();
                       }
                       if (!gin[0].empty()) {
                         MatMap dcols(cols.data(), patch, ov);
                         dcols.noalias() = wmat.transpose() * dy;
                         col2im(cols.data(), g, gin[0].data() + s * g.cin * g.in_voxels());
                       }
                     }
                   });
}

Tensor global_avg_pool(const Tensor& input) {
  if (input.ndim() != 5) throw ShapeError("global_avg_pool: expected [N,C,T,H,W], got " + shape_str(input.shape()));
  const std::size_t n = input.dim(0), c = input.dim(1);
  const std::size_t cell = input.dim(2) * input.dim(3) * input.dim(4);
  const auto x = input.data();
  std::vector<double> out(n * c);
  for (std::size_t i = 0; i < n * c; ++i) {
    double acc = 0.0;
    for (std::size_t k = 0; k < cell; ++k) acc += x[i * cell + k];
    out[i] = acc / static_cast<double>(cell);
  }
  return record_op("global_avg_pool", {n, c}, std::move(out), {input},
                   [cell](std::span<const double> gy, std::span<const std::span<double>> gin) {
                     const double inv = 1.0 / static_cast<double>(cell);
                     for (std::size_t i = 0; i < gy.size(); ++i) {
                       for (std::size_t k = 0; k < cell; ++k) gin[0][i * cell + k] += gy[i] * inv;
                     }
                   });
}

Tensor linear(const Tensor& input, const Tensor& weight, const Tensor& bias) {
  if (input.ndim() != 2 || weight.ndim() != 2 || bias.ndim() != 1) {
    throw ShapeError("linear: expected input [N,F], weight [K,F], bias [K]; got " + shape_str(input.shape()) + ", " +
                     shape_str(weight.shape()) + ", " + shape_str(bias.shape()));
  }
  const std::size_t n = input.dim(0), f = input.dim(1), k = weight.dim(0);
  if (weight.dim(1) != f || bias.dim(0) != k) {
    throw ShapeError("linear: input " + shape_str(input.shape()) + " incompatible with weight " +
                     shape_str(weight.shape()) + " and bias " + shape_str(bias.shape()));
  }
  std::vector<double> out(n * k);
  MatMap y(out.data(), n, k);
  y.noalias() = ConstMatMap(input.data().data(), n, f) * ConstMatMap(weight.data().data(), k, f).transpose();
  const auto b = bias.data();
  for (std::size_t r = 0; r < n; ++r) {
    for (std::size_t j = 0; j < k; ++j) y(r, j) += b[j];
  }
  return record_op("linear", {n, k}, std::move(out), {input, weight, bias},
                   [input, weight, n, f, k](std::span<const double> gy, std::span<const std::span<double>> gin) {
                     const ConstMatMap dy(gy.data(), n, k);
                     if (!gin[0].empty()) {
                       MatMap(gin[0].data(), n, f).noalias() += dy * ConstMatMap(weight.data().data(), k, f);
                     }
                     if (!gin[1].empty()) {
                       MatMap(gin[1].data(), k, f).noalias() += dy.transpose() * ConstMatMap(input.data().data(), n, f);
                     }
                     if (!gin[2].empty()) {
                       for (std::size_t j = 0; j < k; ++j) gin[2][j] += dy.col(j).sum();
                     }
                   });
}

std::vector<double> softmax_rows(const Tensor& logits) {
  if (logits.ndim() != 2) throw ShapeError("softmax: expected [N,K], got " + shape_str(logits.shape()));
  const std::size_t n = logits.dim(0), k = logits.dim(1);
  const auto z = logits.data();
  std::vector<double> p(n * k);
  for (std::size_t r = 0; r < n; ++r) {
    const double* zr = z.data() + r * k;
    const double mx = *std::max_element(zr, zr + k);
    double total = 0.0;
    for (std::size_t j = 0; j < k; ++j) total += (p[r * k + j] = std::exp(zr[j] - mx));
    for (std::size_t j = 0; j < k; ++j) p[r * k + j] /= total;
  }
  return p;
}

Tensor softmax_cross_entropy(const Tensor& logits, std::span<const std::size_t> targets) {
  if (logits.ndim() != 2) throw ShapeError("softmax_cross_entropy: expected [N,K], got " + shape_str(logits.shape()));
  const std::size_t n = logits.dim(0), k = logits.dim(1);
  if (targets.size() != n) {
    throw ShapeError("softmax_cross_entropy: " + std::to_string(targets.size()) + " targets for batch of " +
                     std::to_string(n));
  }
  for (std::size_t r = 0; r < n; ++r) {
    if (targets[r] >= k) {
      throw IndexError("softmax_cross_entropy: target " + std::to_string(targets[r]) + " outside [0," +
                       std::to_string(k) + ")");
    }
  }
  const auto z = logits.data();
  double loss = 0.0;
  for (std::size_t r = 0; r < n; ++r) {
    const double* zr = z.data() + r * k;
    const double mx = *std::max_element(zr, zr + k);
    double total = 0.0;
    for (std::size_t j = 0; j < k; ++j) total += std::exp(zr[j] - mx);
    loss += (mx + std::log(total)) - zr[targets[r]];
  }
  loss /= static_cast<double>(n);
  std::vector<std::size_t> tgt(targets.begin(), targets.end());
  return record_op("softmax_cross_entropy", {1}, {loss}, {logits},
                   [logits, tgt, n, k](std::span<const double> gy, std::span<const std::span<double>> gin) {
                     const auto p = softmax_rows(logits);
                     const double s = gy[0] / static_cast<double>(n);
                     for (std::size_t r = 0; r < n; ++r) {
                       for (std::size_t j = 0; j < k; ++j) {
                         gin[0][r * k + j] += s * (p[r * k + j] - (j == tgt[r] ? 1.0 : 0.0));
                       }
                     }
                   });
}

Tensor relu(const Tensor& x) {
  const auto d = x.data();
  std::vector<double> out(d.size());
  for (std::size_t i = 0; i < d.size(); ++i) out[i] = d[i] > 0.0 ? d[i] : 0.0;
  return record_op("relu", x.shape(), std::move(out), {x},
                   [x](std::span<const double> gy, std::span<const std::span<double>> gin) {
                     const auto d = x.data();
                     for (std::size_t i = 0; i < d.size(); ++i) {
                       if (d[i] > 0.0) gin[0][i] += gy[i];
                     }
                   });
}

Tensor add(const Tensor& a, const Tensor& b) {
  require_same_shape(a, b, "add");
  const auto x = a.data(), y = b.data();
  std::vector<double> out(x.size());
  for (std::size_t i = 0; i < x.size(); ++i) out[i] = x[i] + y[i];
  return record_op("add", a.shape(), std::move(out), {a, b},
                   [](std::span<const double> gy, std::span<const std::span<double>> gin) {
                     for (const auto& g : gin) {
                       if (g.empty()) continue;
                       for (std::size_t i = 0; i < gy.size(); ++i) g[i] += gy[i];
                     }
                   });
}

Tensor mul(const Tensor& a, const Tensor& b) {
  require_same_shape(a, b, "mul");
  const auto x = a.data(), y = b.data();
  std::vector<double> out(x.size());
  for (std::size_t i = 0; i < x.size(); ++i) out[i] = x[i] * y[i];
  return record_op("mul", a.shape(), std::move(out), {a, b},
                   [a, b](std::span<const double> gy, std::span<const std::span<double>> gin) {
                     const auto x = a.data(), y = b.data();
                     if (!gin[0].empty()) {
                       for (std::size_t i = 0; i < gy.size(); ++i) gin[0][i] += gy[i] * y[i];
                     }
                     if (!gin[1].empty()) {
                       for (std::size_t i = 0; i < gy.size(); ++i) gin[1][i] += gy[i] * x[i];
                     }
                   });
}

Tensor scale(const Tensor& x, double factor) {
  const auto d = x.data();
  std::vector<double> out(d.size());
  for (std::size_t i = 0; i < d.size(); ++i) out[i] = d[i] * factor;
  return record_op("scale", x.shape(), std::move(out), {x},
                   [factor](std::span<const double> gy, std::span<const std::span<double>> gin) {
                     for (std::size_t i = 0; i < gy.size(); ++i) gin[0][i] += gy[i] * factor;
                   });
}

Tensor sum(const Tensor& x) {
  double total = 0.0;
  for (double v : x.data()) total += v;
  return record_op("sum", {1}, {total}, {x}, [](std::span<const double> gy, std::span<const std::span<double>> gin) {
    for (auto& g : gin[0]) g += gy[0];
  });
}

Tensor batch_norm(const Tensor& input, const Tensor& gamma, const Tensor& beta, BatchNormStats& stats, Mode mode,
                  double momentum, double eps) {
  if (input.ndim() < 2) throw ShapeError("batch_norm: expected [N,C,...], got " + shape_str(input.shape()));
  const std::size_t n = input.dim(0), c = input.dim(1);
  const std::size_t inner = input.numel() / (n * c);
  if (gamma.shape() != Shape{c} || beta.shape() != Shape{c}) {
    throw ShapeError("batch_norm: gamma " + shape_str(gamma.shape()) + " / beta " + shape_str(beta.shape()) +
                     " do not match " + std::to_string(c) + " channels");
  }
  if (stats.running_mean.size() != c || stats.running_var.size() != c) {
    throw ShapeError("batch_norm: running statistics do not match " + std::to_string(c) + " channels");
  }
  const std::size_t count = n * inner;
  if (mode == Mode::kTrain && count < 2) {
    throw ShapeError("batch_norm: train mode needs at least 2 values per channel, input " +
                     shape_str(input.shape()));
  }

  const auto x = input.data();
  const auto gm = gamma.data();
  const auto bt = beta.data();
  std::vector<double> mean(c), inv_std(c);
  for (std::size_t ch = 0; ch < c; ++ch) {
    if (mode == Mode::kTrain) {
      double acc = 0.0;
      for (std::size_t s = 0; s < n; ++s) {
        const double* p = x.data() + (s * c + ch) * inner;
        for (std::size_t k = 0; k < inner; ++k) acc += p[k];
      }
      const double mu = acc / static_cast<double>(count);
      double sq = 0.0;
      for (std::size_t s = 0; s < n; ++s) {
        const double* p = x.data() + (s * c + ch) * inner;
        for (std::size_t k = 0; k < inner; ++k) sq += (p[k] - mu) * (p[k] - mu);
      }
      const double var = sq / static_cast<double>(count);
      mean[ch] = mu;
      inv_std[ch] = 1.0 / std::sqrt(var + eps);
      const double unbiased = sq / static_cast<double>(count - 1);
      stats.running_mean[ch] = (1.0 - momentum) * stats.running_mean[ch] + momentum * mu;
      stats.running_var[ch] = (1.0 - momentum) * stats.running_var[ch] + momentum * unbiased;
    } else {
      mean[ch] = stats.running_mean[ch];
      inv_std[ch] = 1.0 / std::sqrt(stats.running_var[ch] + eps);
    }
  }

  std::vector<double> out(x.size());
  for (std::size_t s = 0; s < n; ++s) {
    for (std::size_t ch = 0; ch < c; ++ch) {
      const std::size_t base = (s * c + ch) * inner;
      for (std::size_t k = 0; k < inner; ++k) {
        out[base + k] = gm[ch] * (x[base + k] - mean[ch]) * inv_std[ch] + bt[ch];
      }
    }
  }

  const bool batch_stats = mode == Mode::kTrain;
  return record_op(
      "batch_norm", input.shape(), std::move(out), {input, gamma, beta},
      [input, gamma, mean, inv_std, n, c, inner, count, batch_stats](std::span<const double> gy,
                                                                     std::span<const std::span<double>> gin) {
        const auto x = input.data();
        const auto gm = gamma.data();
        for (std::size_t ch = 0; ch < c; ++ch) {
          double sum_gy = 0.0, sum_gy_xhat = 0.0;
          for (std::size_t s = 0; s < n; ++s) {
            const std::size_t base = (s * c + ch) * inner;
            for (std::size_t k = 0; k < inner; ++k) {
              const double xhat = (x[base + k] - mean[ch]) * inv_std[ch];
              sum_gy += gy[base + k];
              sum_gy_xhat += gy[base + k] * xhat;
            }
          }
          if (!gin[1].empty()) gin[1][ch] += sum_gy_xhat;
          if (!gin[2].empty()) gin[2][ch] += sum_gy;
          if (gin[0].empty()) continue;
          const double scale_ = gm[ch] * inv_std[ch];
          const double m = static_cast<double>(count);
          for (std::size_t s = 0; s < n; ++s) {
            const std::size_t base = (s * c + ch) * inner;
            for (std::size_t k = 0; k < inner; ++k) {
              if (batch_stats) {
                const double xhat = (x[base + k] - mean[ch]) * inv_std[ch];
                gin[0][base + k] += scale_ * (gy[base + k] - sum_gy / m - xhat * sum_gy_xhat / m);
              } else {
                gin[0][base + k] += scale_ * gy[base + k];
              }
            }
          }
        }
      });
}

}  // namespace hact
