#include "tacnet/ops.hpp"

#include <Eigen/Core>

#include <algorithm>
#include <cmath>
#include <random>
#include <stdexcept>
#include <string>

namespace tacnet::ops {
namespace {

void require_same_shape(const char* op, const Tensor& a, const Tensor& b) {
  if (a.shape() != b.shape()) {
    throw std::invalid_argument(std::string(op) + ": shape mismatch " + shape_to_string(a.shape()) + " vs " +
                                shape_to_string(b.shape()));
  }
}

void require_rank(const char* op, const Tensor& t, std::size_t rank) {
  if (t.rank() != rank) {
    throw std::invalid_argument(std::string(op) + ": expected rank " + std::to_string(rank) + ", got shape " +
                                shape_to_string(t.shape()));
  }
}

using RowMatrix = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using RowMap = Eigen::Map<RowMatrix>;
using ConstRowMap = Eigen::Map<const RowMatrix>;

struct ConvGeometry {
  std::size_t batch, cin, height, width, cout, kh, kw, out_h, out_w;
  int stride, pad;
  std::size_t patch() const { return cin * kh * kw; }
  std::size_t columns() const { return batch * out_h * out_w; }
};

void im2col(const ConvGeometry& geo, const double* x, double* col) {
  const std::size_t n_cols = geo.columns();
  const std::size_t plane = geo.out_h * geo.out_w;
  for (std::size_t c = 0; c < geo.cin; ++c) {
    for (std::size_t ky = 0; ky < geo.kh; ++ky) {
      for (std::size_t kx = 0; kx < geo.kw; ++kx) {
        double* row = col + ((c * geo.kh + ky) * geo.kw + kx) * n_cols;
        for (std::size_t b = 0; b < geo.batch; ++b) {
          const double* src = x + (b * geo.cin + c) * geo.height * geo.width;
          double* dst = row + b * plane;
          for (std::size_t oy = 0; oy < geo.out_h; ++oy) {
            const long iy = static_cast<long>(oy) * geo.stride - geo.pad + static_cast<long>(ky);
            double* out_row = dst + oy * geo.out_w;
            if (iy < 0 || iy >= static_cast<long>(geo.height)) {
              std::fill(out_row, out_row + geo.out_w, 0.0);
              continue;
            }
            const double* in_row = src + static_cast<std::size_t>(iy) * geo.width;
            for (std::size_t ox = 0; ox < geo.out_w; ++ox) {
              const long ix = static_cast<long>(ox) * geo.stride - geo.pad + static_cast<long>(kx);
              out_row[ox] = (ix < 0 || ix >= static_cast<long>(geo.width)) ? 0.0 : in_row[ix];
            }
          }
        }
      }
    }
  }
}

void col2im_accumulate(const ConvGeometry& geo, const double* col, double* dx) {
  const std::size_t n_cols = geo.columns();
  const std::size_t plane = geo.out_h * geo.out_w;
  for (std::size_t c = 0; c < geo.cin; ++c) {
    for (std::size_t ky = 0; ky < geo.kh; ++ky) {
      for (std::size_t kx = 0; kx < geo.kw; ++kx) {
        const double* row = col + ((c * geo.kh + ky) * geo.kw + kx) * n_cols;
        for (std::size_t b = 0; b < geo.batch; ++b) {
          double* dst = dx + (b * geo.cin + c) * geo.height * geo.width;
          const double* src = row + b * plane;
          for (std::size_t oy = 0; oy < geo.out_h; ++oy) {
            const long iy = static_cast<long>(oy) * geo.stride - geo.pad + static_cast<long>(ky);
            if (iy < 0 || iy >= static_cast<long>(geo.height)) continue;
            double* in_row = dst + static_cast<std::size_t>(iy) * geo.width;
            const double* g_row = src + oy * geo.out_w;
            for (std::size_t ox = 0; ox < geo.out_w; ++ox) {
              const long ix = static_cast<long>(ox) * geo.stride - geo.pad + static_cast<long>(kx);
              if (ix >= 0 && ix < static_cast<long>(geo.width)) in_row[ix] += g_row[ox];
            }
          }
        }
      }
    }
  }
}

double unit_uniform(std::mt19937_64& rng) { return static_cast<double>(rng() >> 11) * 0x1.0p-53; }

double stable_sigmoid(double x) {
  if (x >= 0) return 1.0 / (1.0 + std::exp(-x));
  const double e = std::exp(x);
  return e / (1.0 + e);
}

}  // namespace

Tensor conv2d(Graph& g, const Tensor& input, const Tensor& kernel, const Tensor& bias, int stride, int padding) {
  require_rank("conv2d input", input, 4);
  require_rank("conv2d kernel", kernel, 4);
  if (stride < 1 || padding < 0) throw std::invalid_argument("conv2d: stride must be >= 1 and padding >= 0");
  if (input.dim(1) != kernel.dim(1)) {
    throw std::invalid_argument("conv2d: input channels of " + shape_to_string(input.shape()) +
                                " do not match kernel " + shape_to_string(kernel.shape()));
  }
  ConvGeometry geo{input.dim(0), input.dim(1), input.dim(2), input.dim(3), kernel.dim(0), kernel.dim(2), kernel.dim(3),
                   0, 0, stride, padding};
  const std::size_t padded_h = geo.height + 2 * static_cast<std::size_t>(padding);
  const std::size_t padded_w = geo.width + 2 * static_cast<std::size_t>(padding);
  if (geo.kh > padded_h || geo.kw > padded_w) {
    throw std::invalid_argument("conv2d: kernel " + shape_to_string(kernel.shape()) + " larger than padded input " +
                                shape_to_string(input.shape()));
  }
  if ((padded_h - geo.kh) % stride != 0 || (padded_w - geo.kw) % stride != 0) {
    throw std::invalid_argument("conv2d: output extent not exact for input " + shape_to_string(input.shape()) +
                                " kernel " + shape_to_string(kernel.shape()) + " stride " + std::to_string(stride));
  }
  geo.out_h = (padded_h - geo.kh) / stride + 1;
  geo.out_w = (padded_w - geo.kw) / stride + 1;
  const bool has_bias = bias.defined();
  if (has_bias && (bias.numel() != geo.cout)) {
    throw std::invalid_argument("conv2d: bias " + shape_to_string(bias.shape()) + " does not match kernel " +
                                shape_to_string(kernel.shape()));
  }

  const std::size_t K = geo.patch();
  const std::size_t N = geo.columns();
  const std::size_t M = geo.cout;
  const std::size_t plane = geo.out_h * geo.out_w;

  auto col = std::make_shared<std::vector<double>>(K * N);
  im2col(geo, input.values().data(), col->data());
  std::vector<double> out_mat(M * N);
  RowMap(out_mat.data(), M, N).noalias() = ConstRowMap(kernel.values().data(), M, K) * ConstRowMap(col->data(), K, N);

  Tensor out = has_bias ? g.make_output({geo.batch, M, geo.out_h, geo.out_w}, {&input, &kernel, &bias})
                        : g.make_output({geo.batch, M, geo.out_h, geo.out_w}, {&input, &kernel});
  auto ov = out.values();
  for (std::size_t b = 0; b < geo.batch; ++b) {
    for (std::size_t co = 0; co < M; ++co) {
      const double bv = has_bias ? bias.values()[co] : 0.0;
      const double* src = out_mat.data() + co * N + b * plane;
      double* dst = ov.data() + (b * M + co) * plane;
      for (std::size_t s = 0; s < plane; ++s) dst[s] = src[s] + bv;
    }
  }

  if (out.requires_grad()) {
    g.record([out, input, kernel, bias, geo, col, has_bias]() mutable {
      const std::size_t K = geo.patch();
      const std::size_t N = geo.columns();
      const std::size_t M = geo.cout;
      const std::size_t plane = geo.out_h * geo.out_w;
      auto og = out.grad();
      std::vector<double> dmat(M * N);
      for (std::size_t b = 0; b < geo.batch; ++b) {
        for (std::size_t co = 0; co < M; ++co) {
          std::copy_n(og.data() + (b * M + co) * plane, plane, dmat.data() + co * N + b * plane);
        }
      }
      if (has_bias && bias.requires_grad()) {
        auto bg = bias.grad();
        for (std::size_t co = 0; co < M; ++co) {
          double acc = 0.0;
          for (std::size_t n = 0; n < N; ++n) acc += dmat[co * N + n];
          bg[co] += acc;
        }
      }
      if (kernel.requires_grad()) {
        RowMap(kernel.grad().data(), M, K).noalias() +=
            ConstRowMap(dmat.data(), M, N) * ConstRowMap(col->data(), K, N).transpose();
      }
      if (input.requires_grad()) {
        std::vector<double> dcol(K * N);
        RowMap(dcol.data(), K, N).noalias() =
            ConstRowMap(kernel.values().data(), M, K).transpose() * ConstRowMap(dmat.data(), M, N);
        col2im_accumulate(geo, dcol.data(), input.grad().data());
      }
    });
  }
  return out;
}

Tensor activation(Graph& g, const Tensor& input, Activation kind) {
  Tensor out = g.make_output(input.shape(), {&input});
  auto x = input.values();
  auto y = out.values();
  for (std::size_t i = 0; i < x.size(); ++i) {
    switch (kind) {
      case Activation::kRelu: y[i] = x[i] > 0.0 ? x[i] : 0.0; break;
      case Activation::kSigmoid: y[i] = stable_sigmoid(x[i]); break;
      case Activation::kTanh: y[i] = std::tanh(x[i]); break;
    }
  }
  if (out.requires_grad()) {
    g.record([out, input, kind]() mutable {
      auto x = input.values();
      auto y = out.values();
      auto gy = out.grad();
      auto gx = input.grad();
      for (std::size_t i = 0; i < x.size(); ++i) {
        double d = 0.0;
        switch (kind) {
          case Activation::kRelu: d = x[i] > 0.0 ? 1.0 : 0.0; break;
          case Activation::kSigmoid: d = y[i] * (1.0 - y[i]); break;
          case Activation::kTanh: d = 1.0 - y[i] * y[i]; break;
        }
        gx[i] += gy[i] * d;
      }
    });
  }
  return out;
}

Tensor add(Graph& g, const Tensor& a, const Tensor& b) {
  require_same_shape("add", a, b);
  Tensor out = g.make_output(a.shape(), {&a, &b});
  auto av = a.values();
  auto bv = b.values();
  auto ov = out.values();
  for (std::size_t i = 0; i < ov.size(); ++i) ov[i] = av[i] + bv[i];
  if (out.requires_grad()) {
    g.record([out, a, b]() mutable {
      auto go = out.grad();
      if (a.requires_grad()) {
        auto ga = a.grad();
        for (std::size_t i = 0; i < go.size(); ++i) ga[i] += go[i];
      }
      if (b.requires_grad()) {
        auto gb = b.grad();
        for (std::size_t i = 0; i < go.size(); ++i) gb[i] += go[i];
      }
    });
  }
  return out;
}

Tensor mul(Graph& g, const Tensor& a, const Tensor& b) {
  require_same_shape("mul", a, b);
  Tensor out = g.make_output(a.shape(), {&a, &b});
  auto av = a.values();
  auto bv = b.values();
  auto ov = out.values();
  for (std::size_t i = 0; i < ov.size(); ++i) ov[i] = av[i] * bv[i];
  if (out.requires_grad()) {
    g.record([out, a, b]() mutable {
      auto go = out.grad();
      auto av = a.values();
      auto bv = b.values();
      if (a.requires_grad()) {
        auto ga = a.grad();
        for (std::size_t i = 0; i < go.size(); ++i) ga[i] += go[i] * bv[i];
      }
      if (b.requires_grad()) {
        auto gb = b.grad();
        for (std::size_t i = 0; i < go.size(); ++i) gb[i] += go[i] * av[i];
      }
    });
  }
  return out;
}

Tensor sum(Graph& g, const Tensor& x) {
  Tensor out = g.make_output({1}, {&x});
  double acc = 0.0;
  for (double v : x.values()) acc += v;
  out.values()[0] = acc;
  if (out.requires_grad()) {
    g.record([out, x]() mutable {
      const double go = out.grad()[0];
      for (double& gx : x.grad()) gx += go;
    });
  }
  return out;
}

Tensor sum_squares(Graph& g, const Tensor& x) {
  Tensor out = g.make_output({1}, {&x});
  double acc = 0.0;
  for (double v : x.values()) acc += v * v;
  out.values()[0] = acc;
  if (out.requires_grad()) {
    g.record([out, x]() mutable {
      const double go = out.grad()[0];
      auto xv = x.values();
      auto gx = x.grad();
      for (std::size_t i = 0; i < xv.size(); ++i) gx[i] += 2.0 * xv[i] * go;
    });
  }
  return out;
}

Tensor softmax_lastdim(Graph& g, const Tensor& x) {
  if (x.rank() == 0 || x.shape().back() == 0) throw std::invalid_argument("softmax_lastdim: empty last axis");
  const std::size_t n = x.shape().back();
  const std::size_t rows = x.numel() / n;
  Tensor out = g.make_output(x.shape(), {&x});
  auto xv = x.values();
  auto yv = out.values();
  for (std::size_t r = 0; r < rows; ++r) {
    const double* in = xv.data() + r * n;
    double* y = yv.data() + r * n;
    const double mx = *std::max_element(in, in + n);
    double z = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
      y[i] = std::exp(in[i] - mx);
      z += y[i];
    }
    for (std::size_t i = 0; i < n; ++i) y[i] /= z;
  }
  if (out.requires_grad()) {
    g.record([out, x, n, rows]() mutable {
      auto yv = out.values();
      auto gy = out.grad();
      auto gx = x.grad();
      for (std::size_t r = 0; r < rows; ++r) {
        const double* y = yv.data() + r * n;
        const double* dy = gy.data() + r * n;
        double dot = 0.0;
        for (std::size_t i = 0; i < n; ++i) dot += y[i] * dy[i];
        for (std::size_t i = 0; i < n; ++i) gx[r * n + i] += y[i] * (dy[i] - dot);
      }
    });
  }
  return out;
}

std::vector<bool> dropout2d_mask(std::size_t batch, std::size_t channels, double p, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::vector<bool> keep(batch * channels);
  for (std::size_t i = 0; i < keep.size(); ++i) keep[i] = unit_uniform(rng) >= p;
  return keep;
}

Tensor dropout2d(Graph& g, const Tensor& x, double p, bool training, std::uint64_t seed) {
  if (!(p >= 0.0 && p < 1.0)) throw std::invalid_argument("dropout2d: probability must lie in [0, 1), got " + std::to_string(p));
  if (!training || p == 0.0) return x;
  require_rank("dropout2d", x, 4);
  const std::size_t planes = x.dim(0) * x.dim(1);
  const std::size_t plane = x.dim(2) * x.dim(3);
  auto keep = std::make_shared<std::vector<bool>>(dropout2d_mask(x.dim(0), x.dim(1), p, seed));
  const double scale = 1.0 / (1.0 - p);
  Tensor out = g.make_output(x.shape(), {&x});
  auto xv = x.values();
  auto yv = out.values();
  for (std::size_t i = 0; i < planes; ++i) {
    const double s = (*keep)[i] ? scale : 0.0;
    for (std::size_t j = 0; j < plane; ++j) yv[i * plane + j] = xv[i * plane + j] * s;
  }
  if (out.requires_grad()) {
    g.record([out, x, keep, scale, planes, plane]() mutable {
      auto gy = out.grad();
      auto gx = x.grad();
      for (std::size_t i = 0; i < planes; ++i) {
        if (!(*keep)[i]) continue;
        for (std::size_t j = 0; j < plane; ++j) gx[i * plane + j] += gy[i * plane + j] * scale;
      }
    });
  }
  return out;
}

Tensor concat_channels(Graph& g, const Tensor& a, const Tensor& b) {
  require_rank("concat_channels", a, 4);
  require_rank("concat_channels", b, 4);
  if (a.dim(0) != b.dim(0) || a.dim(2) != b.dim(2) || a.dim(3) != b.dim(3)) {
    throw std::invalid_argument("concat_channels: incompatible shapes " + shape_to_string(a.shape()) + " and " +
                                shape_to_string(b.shape()));
  }
  const std::size_t B = a.dim(0), ca = a.dim(1), cb = b.dim(1), plane = a.dim(2) * a.dim(3);
  Tensor out = g.make_output({B, ca + cb, a.dim(2), a.dim(3)}, {&a, &b});
  auto ov = out.values();
  for (std::size_t n = 0; n < B; ++n) {
    std::copy_n(a.values().data() + n * ca * plane, ca * plane, ov.data() + n * (ca + cb) * plane);
    std::copy_n(b.values().data() + n * cb * plane, cb * plane, ov.data() + (n * (ca + cb) + ca) * plane);
  }
  if (out.requires_grad()) {
    g.record([out, a, b, B, ca, cb, plane]() mutable {
      auto go = out.grad();
      for (std::size_t n = 0; n < B; ++n) {
        if (a.requires_grad()) {
          auto ga = a.grad();
          const double* src = go.data() + n * (ca + cb) * plane;
          for (std::size_t i = 0; i < ca * plane; ++i) ga[n * ca * plane + i] += src[i];
        }
        if (b.requires_grad()) {
          auto gb = b.grad();
          const double* src = go.data() + (n * (ca + cb) + ca) * plane;
          for (std::size_t i = 0; i < cb * plane; ++i) gb[n * cb * plane + i] += src[i];
        }
      }
    });
  }
  return out;
}

Tensor slice_channels(Graph& g, const Tensor& x, std::size_t start, std::size_t count) {
  require_rank("slice_channels", x, 4);
  if (start + count > x.dim(1) || count == 0) {
    throw std::invalid_argument("slice_channels: range [" + std::to_string(start) + ", " +
                                std::to_string(start + count) + ") outside " + shape_to_string(x.shape()));
  }
  const std::size_t B = x.dim(0), C = x.dim(1), plane = x.dim(2) * x.dim(3);
  Tensor out = g.make_output({B, count, x.dim(2), x.dim(3)}, {&x});
  auto ov = out.values();
  for (std::size_t n = 0; n < B; ++n) {
    std::copy_n(x.values().data() + (n * C + start) * plane, count * plane, ov.data() + n * count * plane);
  }
  if (out.requires_grad()) {
    g.record([out, x, B, C, plane, start, count]() mutable {
      auto go = out.grad();
      auto gx = x.grad();
      for (std::size_t n = 0; n < B; ++n) {
        double* dst = gx.data() + (n * C + start) * plane;
        const double* src = go.data() + n * count * plane;
        for (std::size_t i = 0; i < count * plane; ++i) dst[i] += src[i];
      }
    });
  }
  return out;
}

Tensor concat_batch(Graph& g, const std::vector<Tensor>& parts) {
  if (parts.empty()) throw std::invalid_argument("concat_batch: no inputs");
  Shape shape = parts.front().shape();
  std::size_t total = 0;
  bool needs_grad = false;
  for (const auto& p : parts) {
    if (p.rank() != shape.size() || !std::equal(shape.begin() + 1, shape.end(), p.shape().begin() + 1)) {
      throw std::invalid_argument("concat_batch: incompatible shapes " + shape_to_string(shape) + " and " +
                                  shape_to_string(p.shape()));
    }
    total += p.dim(0);
    needs_grad = needs_grad || p.requires_grad();
  }
  shape[0] = total;
  Tensor out(shape, 0.0, needs_grad && g.recording());
  auto ov = out.values();
  std::size_t offset = 0;
  for (const auto& p : parts) {
    std::copy(p.values().begin(), p.values().end(), ov.begin() + static_cast<std::ptrdiff_t>(offset));
    offset += p.numel();
  }
  if (out.requires_grad()) {
    g.record([out, parts]() mutable {
      auto go = out.grad();
      std::size_t offset = 0;
      for (auto& p : parts) {
        if (p.requires_grad()) {
          auto gp = p.grad();
          for (std::size_t i = 0; i < gp.size(); ++i) gp[i] += go[offset + i];
        }
        offset += p.numel();
      }
    });
  }
  return out;
}

Tensor slice_batch(Graph& g, const Tensor& x, std::size_t start, std::size_t count) {
  if (x.rank() == 0 || count == 0 || start + count > x.dim(0)) {
    throw std::invalid_argument("slice_batch: range [" + std::to_string(start) + ", " + std::to_string(start + count) +
                                ") outside " + shape_to_string(x.shape()));
  }
  Shape shape = x.shape();
  const std::size_t stride = x.numel() / shape[0];
  shape[0] = count;
  Tensor out = g.make_output(shape, {&x});
  std::copy_n(x.values().data() + start * stride, count * stride, out.values().data());
  if (out.requires_grad()) {
    g.record([out, x, start, stride, count]() mutable {
      auto go = out.grad();
      auto gx = x.grad();
      for (std::size_t i = 0; i < count * stride; ++i) gx[start * stride + i] += go[i];
    });
  }
  return out;
}

Tensor scale_gradient(Graph& g, const Tensor& x, double scale) {
  Tensor out = g.make_output(x.shape(), {&x});
  std::copy(x.values().begin(), x.values().end(), out.values().begin());
  if (out.requires_grad()) {
    g.record([out, x, scale]() mutable {
      auto go = out.grad();
      auto gx = x.grad();
      for (std::size_t i = 0; i < go.size(); ++i) gx[i] += go[i] * scale;
    });
  }
  return out;
}

}  // namespace tacnet::ops
