#include "mmfuse/kernels.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numbers>
#include <numeric>

namespace mmfuse {

namespace {

std::size_t bin_begin(std::size_t i, std::size_t in, std::size_t out) { return (i * in) / out; }
std::size_t bin_end(std::size_t i, std::size_t in, std::size_t out) { return ((i + 1) * in + out - 1) / out; }

void require_same(const Shape& a, const Shape& b, const char* what) {
  if (a != b) {
    throw ShapeError(std::string(what) + ": shape " + to_string(a) + " does not match " + to_string(b));
  }
}

// Index of b's element that broadcasts onto a's (n,c,h,w).
struct BroadcastIndex {
  Shape b;
  std::size_t operator()(std::size_t n, std::size_t c, std::size_t h, std::size_t w) const {
    n = b.n == 1 ? 0 : n;
    c = b.c == 1 ? 0 : c;
    h = b.h == 1 ? 0 : h;
    w = b.w == 1 ? 0 : w;
    return ((n * b.c + c) * b.h + h) * b.w + w;
  }
};

}  // namespace

void ConvSpec::validate() const {
  if (in_channels == 0 || out_channels == 0 || kernel_h == 0 || kernel_w == 0 || stride == 0 || groups == 0) {
    throw ConfigError("convolution extents, stride and groups must be positive");
  }
  if (in_channels % groups != 0 || out_channels % groups != 0) {
    throw ConfigError("convolution channels " + std::to_string(in_channels) + "->" + std::to_string(out_channels) +
                      " are not divisible by groups=" + std::to_string(groups));
  }
}

Shape ConvSpec::output_shape(const Shape& input) const {
  validate();
  if (input.c != in_channels) {
    throw ConfigError("convolution expects " + std::to_string(in_channels) + " input channels, got " +
                      std::to_string(input.c));
  }
  const auto extent = [&](std::size_t in, std::size_t k) -> std::size_t {
    const std::size_t padded = in + 2 * padding;
    if (padded < k) {
      throw ShapeError("convolution output extent would be < 1 for input " + to_string(input));
    }
    return (padded - k) / stride + 1;
  };
  return {input.n, out_channels, extent(input.h, kernel_h), extent(input.w, kernel_w)};
}

template <typename T>
BasicTensor<T> conv2d(const BasicTensor<T>& x, const ConvSpec& spec, const BasicTensor<T>& weight,
                      const BasicTensor<T>* bias) {
  const Shape os = spec.output_shape(x.shape());
  require_same(weight.shape(), spec.weight_shape(), "conv2d weight");
  if (spec.has_bias != (bias != nullptr)) {
    throw ConfigError("conv2d bias presence does not match spec");
  }
  if (bias) require_same(bias->shape(), spec.bias_shape(), "conv2d bias");

  const std::size_t icg = spec.in_channels / spec.groups;
  const std::size_t ocg = spec.out_channels / spec.groups;
  const std::size_t H = x.h(), W = x.w(), kh = spec.kernel_h, kw = spec.kernel_w;
  const std::size_t in_plane = H * W, out_plane = os.h * os.w;
  BasicTensor<T> out(os);
  const T* xd = x.data().data();
  const T* wd = weight.data().data();
  T* od = out.data().data();

  if (kh == 1 && kw == 1 && spec.stride == 1 && spec.padding == 0) {
    for (std::size_t n = 0; n < os.n; ++n) {
      for (std::size_t oc = 0; oc < os.c; ++oc) {
        const std::size_t g = oc / ocg;
        T* dst = od + (n * os.c + oc) * out_plane;
        std::fill(dst, dst + out_plane, bias ? (*bias)[oc] : T(0));
        for (std::size_t il = 0; il < icg; ++il) {
          const T wv = wd[oc * icg + il];
          const T* src = xd + (n * x.c() + g * icg + il) * in_plane;
          for (std::size_t i = 0; i < out_plane; ++i) dst[i] += wv * src[i];
        }
      }
    }
    return out;
  }

  // Valid kernel taps [lo, hi) for output coordinate o along an axis of
  // extent `extent`.
  const auto taps = [&](std::size_t o, std::size_t k, std::size_t extent) {
    const auto origin = static_cast<std::ptrdiff_t>(o * spec.stride) - static_cast<std::ptrdiff_t>(spec.padding);
    const std::size_t lo = origin < 0 ? static_cast<std::size_t>(-origin) : 0;
    const std::ptrdiff_t room = static_cast<std::ptrdiff_t>(extent) - origin;
    const std::size_t hi = room <= 0 ? 0 : std::min(k, static_cast<std::size_t>(room));
    return std::pair{lo, std::max(lo, hi)};
  };
  for (std::size_t n = 0; n < os.n; ++n) {
    for (std::size_t oc = 0; oc < os.c; ++oc) {
      const std::size_t g = oc / ocg;
      const T b0 = bias ? (*bias)[oc] : T(0);
      for (std::size_t oy = 0; oy < os.h; ++oy) {
        const auto [ky0, ky1] = taps(oy, kh, H);
        for (std::size_t ox = 0; ox < os.w; ++ox) {
          const auto [kx0, kx1] = taps(ox, kw, W);
          const std::size_t iy0 = oy * spec.stride + ky0 - spec.padding;
          const std::size_t ix0 = ox * spec.stride + kx0 - spec.padding;
          T acc = b0;
          for (std::size_t il = 0; il < icg; ++il) {
            const T* src = xd + (n * x.c() + g * icg + il) * in_plane;
            const T* wk = wd + (oc * icg + il) * kh * kw;
            for (std::size_t ky = ky0; ky < ky1; ++ky) {
              const T* row = src + (iy0 + ky - ky0) * W + ix0;
              const T* wrow = wk + ky * kw + kx0;
              for (std::size_t kx = 0; kx < kx1 - kx0; ++kx) acc += wrow[kx] * row[kx];
            }
          }
          od[(n * os.c + oc) * out_plane + oy * os.w + ox] = acc;
        }
      }
    }
  }
  return out;
}

template <typename T>
ConvGrads<T> conv2d_backward(const BasicTensor<T>& x, const ConvSpec& spec, const BasicTensor<T>& weight,
                             bool has_bias, const BasicTensor<T>& grad_out) {
  const Shape os = spec.output_shape(x.shape());
  require_same(grad_out.shape(), os, "conv2d grad");
  const std::size_t icg = spec.in_channels / spec.groups;
  const std::size_t ocg = spec.out_channels / spec.groups;
  const auto H = static_cast<std::ptrdiff_t>(x.h());
  const auto W = static_cast<std::ptrdiff_t>(x.w());
  const auto pad = static_cast<std::ptrdiff_t>(spec.padding);

  ConvGrads<T> g{BasicTensor<T>(x.shape()), BasicTensor<T>(weight.shape()), std::nullopt};
  if (has_bias) g.bias = BasicTensor<T>(spec.bias_shape());
  for (std::size_t n = 0; n < os.n; ++n) {
    for (std::size_t oc = 0; oc < os.c; ++oc) {
      const std::size_t grp = oc / ocg;
      for (std::size_t oy = 0; oy < os.h; ++oy) {
        for (std::size_t ox = 0; ox < os.w; ++ox) {
          const T go = grad_out.at(n, oc, oy, ox);
          if (has_bias) (*g.bias)[oc] += go;
          for (std::size_t il = 0; il < icg; ++il) {
            const std::size_t ic = grp * icg + il;
            for (std::size_t ky = 0; ky < spec.kernel_h; ++ky) {
              const std::ptrdiff_t iy = static_cast<std::ptrdiff_t>(oy * spec.stride + ky) - pad;
              if (iy < 0 || iy >= H) continue;
              for (std::size_t kx = 0; kx < spec.kernel_w; ++kx) {
                const std::ptrdiff_t ix = static_cast<std::ptrdiff_t>(ox * spec.stride + kx) - pad;
                if (ix < 0 || ix >= W) continue;
                const auto uy = static_cast<std::size_t>(iy);
                const auto ux = static_cast<std::size_t>(ix);
                g.weight.at(oc, il, ky, kx) += go * x.at(n, ic, uy, ux);
                g.input.at(n, ic, uy, ux) += go * weight.at(oc, il, ky, kx);
              }
            }
          }
        }
      }
    }
  }
  return g;
}

namespace {
void check_conv1d(const Shape& x, std::size_t k, const Shape& w) {
  if (k % 2 == 0) throw ConfigError("conv1d kernel size must be odd, got " + std::to_string(k));
  if (x.c != 1 || x.w != 1) throw ShapeError("conv1d expects an (N,1,L,1) descriptor, got " + to_string(x));
  require_same(w, Shape{1, 1, k, 1}, "conv1d weight");
}
}  // namespace

template <typename T>
BasicTensor<T> conv1d(const BasicTensor<T>& x, std::size_t kernel_size, const BasicTensor<T>& weight,
                      const BasicTensor<T>* bias) {
  check_conv1d(x.shape(), kernel_size, weight.shape());
  if (bias) require_same(bias->shape(), Shape{}, "conv1d bias");
  const auto L = static_cast<std::ptrdiff_t>(x.h());
  const auto half = static_cast<std::ptrdiff_t>(kernel_size / 2);
  BasicTensor<T> out(x.shape());
  for (std::size_t n = 0; n < x.n(); ++n) {
    for (std::ptrdiff_t i = 0; i < L; ++i) {
      T acc = bias ? (*bias)[0] : T(0);
      for (std::size_t j = 0; j < kernel_size; ++j) {
        const std::ptrdiff_t src = i - half + static_cast<std::ptrdiff_t>(j);
        if (src < 0 || src >= L) continue;
        acc += weight[j] * x.at(n, 0, static_cast<std::size_t>(src), 0);
      }
      out.at(n, 0, static_cast<std::size_t>(i), 0) = acc;
    }
  }
  return out;
}

template <typename T>
ConvGrads<T> conv1d_backward(const BasicTensor<T>& x, std::size_t kernel_size, const BasicTensor<T>& weight,
                             bool has_bias, const BasicTensor<T>& grad_out) {
  check_conv1d(x.shape(), kernel_size, weight.shape());
  require_same(grad_out.shape(), x.shape(), "conv1d grad");
  const auto L = static_cast<std::ptrdiff_t>(x.h());
  const auto half = static_cast<std::ptrdiff_t>(kernel_size / 2);
  ConvGrads<T> g{BasicTensor<T>(x.shape()), BasicTensor<T>(weight.shape()), std::nullopt};
  if (has_bias) g.bias = BasicTensor<T>(Shape{});
  for (std::size_t n = 0; n < x.n(); ++n) {
    for (std::ptrdiff_t i = 0; i < L; ++i) {
      const T go = grad_out.at(n, 0, static_cast<std::size_t>(i), 0);
      if (has_bias) (*g.bias)[0] += go;
      for (std::size_t j = 0; j < kernel_size; ++j) {
        const std::ptrdiff_t src = i - half + static_cast<std::ptrdiff_t>(j);
        if (src < 0 || src >= L) continue;
        const auto us = static_cast<std::size_t>(src);
        g.weight[j] += go * x.at(n, 0, us, 0);
        g.input.at(n, 0, us, 0) += go * weight[j];
      }
    }
  }
  return g;
}

namespace {
void check_pool(const Shape& s, std::size_t oh, std::size_t ow) {
  if (oh == 0 || ow == 0) throw ShapeError("adaptive pool output extents must be >= 1");
  if (oh > s.h || ow > s.w) {
    throw ShapeError("adaptive pool output " + std::to_string(oh) + "x" + std::to_string(ow) +
                     " exceeds input " + to_string(s));
  }
}
}  // namespace

template <typename T>
BasicTensor<T> adaptive_pool(const BasicTensor<T>& x, std::size_t out_h, std::size_t out_w, PoolMode mode) {
  check_pool(x.shape(), out_h, out_w);
  BasicTensor<T> out(Shape{x.n(), x.c(), out_h, out_w});
  for (std::size_t n = 0; n < x.n(); ++n) {
    for (std::size_t c = 0; c < x.c(); ++c) {
      for (std::size_t i = 0; i < out_h; ++i) {
        const std::size_t y0 = bin_begin(i, x.h(), out_h), y1 = bin_end(i, x.h(), out_h);
        for (std::size_t j = 0; j < out_w; ++j) {
          const std::size_t x0 = bin_begin(j, x.w(), out_w), x1 = bin_end(j, x.w(), out_w);
          T acc = mode == PoolMode::max ? -std::numeric_limits<T>::infinity() : T(0);
          for (std::size_t y = y0; y < y1; ++y) {
            for (std::size_t xx = x0; xx < x1; ++xx) {
              const T v = x.at(n, c, y, xx);
              if (mode == PoolMode::max) {
                acc = v > acc ? v : acc;
              } else {
                acc += v;
              }
            }
          }
          if (mode == PoolMode::avg) acc /= static_cast<T>((y1 - y0) * (x1 - x0));
          out.at(n, c, i, j) = acc;
        }
      }
    }
  }
  return out;
}

template <typename T>
BasicTensor<T> adaptive_pool_backward(const BasicTensor<T>& x, std::size_t out_h, std::size_t out_w, PoolMode mode,
                                      const BasicTensor<T>& grad_out) {
  check_pool(x.shape(), out_h, out_w);
  require_same(grad_out.shape(), Shape{x.n(), x.c(), out_h, out_w}, "adaptive pool grad");
  BasicTensor<T> gx(x.shape());
  for (std::size_t n = 0; n < x.n(); ++n) {
    for (std::size_t c = 0; c < x.c(); ++c) {
      for (std::size_t i = 0; i < out_h; ++i) {
        const std::size_t y0 = bin_begin(i, x.h(), out_h), y1 = bin_end(i, x.h(), out_h);
        for (std::size_t j = 0; j < out_w; ++j) {
          const std::size_t x0 = bin_begin(j, x.w(), out_w), x1 = bin_end(j, x.w(), out_w);
          const T go = grad_out.at(n, c, i, j);
          if (mode == PoolMode::avg) {
            const T share = go / static_cast<T>((y1 - y0) * (x1 - x0));
            for (std::size_t y = y0; y < y1; ++y) {
              for (std::size_t xx = x0; xx < x1; ++xx) gx.at(n, c, y, xx) += share;
            }
          } else {
            // First maximum in scan order receives the gradient.
            std::size_t by = y0, bx = x0;
            for (std::size_t y = y0; y < y1; ++y) {
              for (std::size_t xx = x0; xx < x1; ++xx) {
                if (x.at(n, c, y, xx) > x.at(n, c, by, bx)) {
                  by = y;
                  bx = xx;
                }
              }
            }
            gx.at(n, c, by, bx) += go;
          }
        }
      }
    }
  }
  return gx;
}

template <typename T>
BasicTensor<T> channel_pool(const BasicTensor<T>& x, PoolMode mode) {
  BasicTensor<T> out(Shape{x.n(), 1, x.h(), x.w()});
  for (std::size_t n = 0; n < x.n(); ++n) {
    for (std::size_t y = 0; y < x.h(); ++y) {
      for (std::size_t xx = 0; xx < x.w(); ++xx) {
        T acc = x.at(n, 0, y, xx);
        for (std::size_t c = 1; c < x.c(); ++c) {
          const T v = x.at(n, c, y, xx);
          if (mode == PoolMode::max) {
            acc = v > acc ? v : acc;
          } else {
            acc += v;
          }
        }
        if (mode == PoolMode::avg) acc /= static_cast<T>(x.c());
        out.at(n, 0, y, xx) = acc;
      }
    }
  }
  return out;
}

template <typename T>
BasicTensor<T> channel_pool_backward(const BasicTensor<T>& x, PoolMode mode, const BasicTensor<T>& grad_out) {
  require_same(grad_out.shape(), Shape{x.n(), 1, x.h(), x.w()}, "channel pool grad");
  BasicTensor<T> gx(x.shape());
  for (std::size_t n = 0; n < x.n(); ++n) {
    for (std::size_t y = 0; y < x.h(); ++y) {
      for (std::size_t xx = 0; xx < x.w(); ++xx) {
        const T go = grad_out.at(n, 0, y, xx);
        if (mode == PoolMode::avg) {
          for (std::size_t c = 0; c < x.c(); ++c) gx.at(n, c, y, xx) += go / static_cast<T>(x.c());
        } else {
          std::size_t best = 0;
          for (std::size_t c = 1; c < x.c(); ++c) {
            if (x.at(n, c, y, xx) > x.at(n, best, y, xx)) best = c;
          }
          gx.at(n, best, y, xx) += go;
        }
      }
    }
  }
  return gx;
}

template <typename T>
T activate(T v, ActivationKind kind) {
  switch (kind) {
    case ActivationKind::sigmoid:
      if (v >= T(0)) return T(1) / (T(1) + std::exp(-v));
      return std::exp(v) / (T(1) + std::exp(v));
    case ActivationKind::relu:
      return v > T(0) ? v : T(0);
    case ActivationKind::gelu:
      return T(0.5) * v * (T(1) + std::erf(v / std::numbers::sqrt2_v<T>));
    case ActivationKind::silu:
      return v * activate(v, ActivationKind::sigmoid);
    case ActivationKind::hardswish:
      return v * std::clamp(v + T(3), T(0), T(6)) / T(6);
  }
  return v;
}

template <typename T>
T activate_derivative(T v, ActivationKind kind) {
  switch (kind) {
    case ActivationKind::sigmoid: {
      const T s = activate(v, ActivationKind::sigmoid);
      return s * (T(1) - s);
    }
    case ActivationKind::relu:
      return v > T(0) ? T(1) : T(0);
    case ActivationKind::gelu: {
      const T cdf = T(0.5) * (T(1) + std::erf(v / std::numbers::sqrt2_v<T>));
      const T pdf = std::exp(T(-0.5) * v * v) * std::numbers::inv_sqrtpi_v<T> / std::numbers::sqrt2_v<T>;
      return cdf + v * pdf;
    }
    case ActivationKind::silu: {
      const T s = activate(v, ActivationKind::sigmoid);
      return s * (T(1) + v * (T(1) - s));
    }
    case ActivationKind::hardswish:
      if (v <= T(-3)) return T(0);
      if (v >= T(3)) return T(1);
      return (T(2) * v + T(3)) / T(6);
  }
  return T(0);
}

template <typename T>
BasicTensor<T> activation(const BasicTensor<T>& x, ActivationKind kind) {
  BasicTensor<T> out(x.shape());
  for (std::size_t i = 0; i < x.numel(); ++i) out[i] = activate(x[i], kind);
  return out;
}

template <typename T>
BasicTensor<T> activation_backward(const BasicTensor<T>& x, ActivationKind kind, const BasicTensor<T>& grad_out) {
  require_same(grad_out.shape(), x.shape(), "activation grad");
  BasicTensor<T> gx(x.shape());
  for (std::size_t i = 0; i < x.numel(); ++i) gx[i] = grad_out[i] * activate_derivative(x[i], kind);
  return gx;
}

namespace {

template <typename T>
void check_bn_params(const BasicTensor<T>& x, std::initializer_list<const BasicTensor<T>*> params) {
  const Shape per_channel{1, x.c(), 1, 1};
  for (const auto* p : params) require_same(p->shape(), per_channel, "batch_norm parameter");
}

// Per-channel mean and population variance over (N,H,W).
template <typename T>
void batch_moments(const BasicTensor<T>& x, std::vector<T>& mean, std::vector<T>& var) {
  const std::size_t C = x.c(), plane = x.h() * x.w();
  const T count = static_cast<T>(x.n() * plane);
  mean.assign(C, T(0));
  var.assign(C, T(0));
  for (std::size_t c = 0; c < C; ++c) {
    T s = 0;
    for (std::size_t n = 0; n < x.n(); ++n) {
      const T* p = &x.data()[x.index(n, c, 0, 0)];
      for (std::size_t i = 0; i < plane; ++i) s += p[i];
    }
    mean[c] = s / count;
    T q = 0;
    for (std::size_t n = 0; n < x.n(); ++n) {
      const T* p = &x.data()[x.index(n, c, 0, 0)];
      for (std::size_t i = 0; i < plane; ++i) q += (p[i] - mean[c]) * (p[i] - mean[c]);
    }
    var[c] = q / count;
  }
}

}  // namespace

template <typename T>
BasicTensor<T> batch_norm(const BasicTensor<T>& x, const BasicTensor<T>& gamma, const BasicTensor<T>& beta,
                          const BasicTensor<T>& running_mean, const BasicTensor<T>& running_var, BnMode mode,
                          double epsilon, double momentum, BatchNormStats<T>* updated) {
  check_bn_params(x, {&gamma, &beta, &running_mean, &running_var});
  const std::size_t C = x.c(), plane = x.h() * x.w();
  std::vector<T> mean(C), var(C);
  if (mode == BnMode::infer) {
    for (std::size_t c = 0; c < C; ++c) {
      if (running_var[c] < T(0)) {
        throw DataError("batch_norm running variance is negative at channel " + std::to_string(c));
      }
      mean[c] = running_mean[c];
      var[c] = running_var[c];
    }
  } else {
    batch_moments(x, mean, var);
    if (updated) {
      const double count = static_cast<double>(x.n() * plane);
      const double unbias = count > 1 ? count / (count - 1) : 1.0;
      updated->mean = BasicTensor<T>(running_mean.shape());
      updated->var = BasicTensor<T>(running_var.shape());
      for (std::size_t c = 0; c < C; ++c) {
        updated->mean[c] = static_cast<T>((1 - momentum) * running_mean[c] + momentum * mean[c]);
        updated->var[c] = static_cast<T>((1 - momentum) * running_var[c] + momentum * var[c] * unbias);
      }
    }
  }
  BasicTensor<T> out(x.shape());
  for (std::size_t c = 0; c < C; ++c) {
    const T inv_std = T(1) / std::sqrt(var[c] + static_cast<T>(epsilon));
    const T scale = gamma[c] * inv_std;
    for (std::size_t n = 0; n < x.n(); ++n) {
      const std::size_t base = x.index(n, c, 0, 0);
      for (std::size_t i = 0; i < plane; ++i) out[base + i] = (x[base + i] - mean[c]) * scale + beta[c];
    }
  }
  return out;
}

template <typename T>
BatchNormGrads<T> batch_norm_backward(const BasicTensor<T>& x, const BasicTensor<T>& gamma,
                                      const BasicTensor<T>& running_mean, const BasicTensor<T>& running_var,
                                      BnMode mode, double epsilon, const BasicTensor<T>& grad_out) {
  check_bn_params(x, {&gamma, &running_mean, &running_var});
  require_same(grad_out.shape(), x.shape(), "batch_norm grad");
  const std::size_t C = x.c(), plane = x.h() * x.w();
  const T count = static_cast<T>(x.n() * plane);
  std::vector<T> mean(C), var(C);
  if (mode == BnMode::infer) {
    for (std::size_t c = 0; c < C; ++c) {
      mean[c] = running_mean[c];
      var[c] = running_var[c];
    }
  } else {
    batch_moments(x, mean, var);
  }
  BatchNormGrads<T> g{BasicTensor<T>(x.shape()), BasicTensor<T>(gamma.shape()), BasicTensor<T>(gamma.shape())};
  for (std::size_t c = 0; c < C; ++c) {
    const T inv_std = T(1) / std::sqrt(var[c] + static_cast<T>(epsilon));
    T sum_g = 0, sum_gx = 0;
    for (std::size_t n = 0; n < x.n(); ++n) {
      const std::size_t base = x.index(n, c, 0, 0);
      for (std::size_t i = 0; i < plane; ++i) {
        const T xhat = (x[base + i] - mean[c]) * inv_std;
        sum_g += grad_out[base + i];
        sum_gx += grad_out[base + i] * xhat;
      }
    }
    g.beta[c] = sum_g;
    g.gamma[c] = sum_gx;
    for (std::size_t n = 0; n < x.n(); ++n) {
      const std::size_t base = x.index(n, c, 0, 0);
      for (std::size_t i = 0; i < plane; ++i) {
        if (mode == BnMode::infer) {
          g.input[base + i] = grad_out[base + i] * gamma[c] * inv_std;
        } else {
          const T xhat = (x[base + i] - mean[c]) * inv_std;
          g.input[base + i] =
              gamma[c] * inv_std / count * (count * grad_out[base + i] - sum_g - xhat * sum_gx);
        }
      }
    }
  }
  return g;
}

template <typename T>
BasicTensor<T> upsample_nearest(const BasicTensor<T>& x, std::size_t factor) {
  if (factor == 0) throw ConfigError("upsample factor must be >= 1");
  BasicTensor<T> out(Shape{x.n(), x.c(), x.h() * factor, x.w() * factor});
  for (std::size_t n = 0; n < x.n(); ++n) {
    for (std::size_t c = 0; c < x.c(); ++c) {
      for (std::size_t y = 0; y < out.h(); ++y) {
        for (std::size_t xx = 0; xx < out.w(); ++xx) out.at(n, c, y, xx) = x.at(n, c, y / factor, xx / factor);
      }
    }
  }
  return out;
}

template <typename T>
BasicTensor<T> upsample_nearest_backward(const BasicTensor<T>& grad_out, std::size_t factor) {
  if (factor == 0) throw ConfigError("upsample factor must be >= 1");
  if (grad_out.h() % factor != 0 || grad_out.w() % factor != 0) {
    throw ShapeError("upsample grad extents are not multiples of the factor");
  }
  BasicTensor<T> gx(Shape{grad_out.n(), grad_out.c(), grad_out.h() / factor, grad_out.w() / factor});
  for (std::size_t n = 0; n < grad_out.n(); ++n) {
    for (std::size_t c = 0; c < grad_out.c(); ++c) {
      for (std::size_t y = 0; y < grad_out.h(); ++y) {
        for (std::size_t xx = 0; xx < grad_out.w(); ++xx) {
          gx.at(n, c, y / factor, xx / factor) += grad_out.at(n, c, y, xx);
        }
      }
    }
  }
  return gx;
}

template <typename T>
BasicTensor<T> l2_normalize_channels(const BasicTensor<T>& x, double epsilon) {
  BasicTensor<T> out(x.shape());
  const std::size_t plane = x.h() * x.w();
  for (std::size_t n = 0; n < x.n(); ++n) {
    for (std::size_t p = 0; p < plane; ++p) {
      T sq = 0;
      for (std::size_t c = 0; c < x.c(); ++c) {
        const T v = x[x.index(n, c, 0, 0) + p];
        sq += v * v;
      }
      const T denom = std::max(std::sqrt(sq), static_cast<T>(epsilon));
      for (std::size_t c = 0; c < x.c(); ++c) {
        const std::size_t i = x.index(n, c, 0, 0) + p;
        out[i] = x[i] / denom;
      }
    }
  }
  return out;
}

template <typename T>
BasicTensor<T> l2_normalize_channels_backward(const BasicTensor<T>& x, double epsilon,
                                              const BasicTensor<T>& grad_out) {
  require_same(grad_out.shape(), x.shape(), "l2 normalize grad");
  BasicTensor<T> gx(x.shape());
  const std::size_t plane = x.h() * x.w();
  const auto eps = static_cast<T>(epsilon);
  for (std::size_t n = 0; n < x.n(); ++n) {
    for (std::size_t p = 0; p < plane; ++p) {
      T sq = 0, dot = 0;
      for (std::size_t c = 0; c < x.c(); ++c) {
        const std::size_t i = x.index(n, c, 0, 0) + p;
        sq += x[i] * x[i];
        dot += x[i] * grad_out[i];
      }
      const T norm = std::sqrt(sq);
      for (std::size_t c = 0; c < x.c(); ++c) {
        const std::size_t i = x.index(n, c, 0, 0) + p;
        if (norm > eps) {
          gx[i] = (grad_out[i] - x[i] * dot / sq) / norm;
        } else {
          gx[i] = grad_out[i] / eps;
        }
      }
    }
  }
  return gx;
}

template <typename T>
BasicTensor<T> channel_variance(const BasicTensor<T>& x) {
  BasicTensor<T> out(Shape{x.n(), x.c(), 1, 1});
  const std::size_t plane = x.h() * x.w();
  for (std::size_t n = 0; n < x.n(); ++n) {
    for (std::size_t c = 0; c < x.c(); ++c) {
      const T* p = &x.data()[x.index(n, c, 0, 0)];
      T s = 0;
      for (std::size_t i = 0; i < plane; ++i) s += p[i];
      const T mean = s / static_cast<T>(plane);
      T q = 0;
      for (std::size_t i = 0; i < plane; ++i) q += (p[i] - mean) * (p[i] - mean);
      out.at(n, c, 0, 0) = q / static_cast<T>(plane);
    }
  }
  return out;
}

template <typename T>
BasicTensor<T> channel_variance_backward(const BasicTensor<T>& x, const BasicTensor<T>& grad_out) {
  require_same(grad_out.shape(), Shape{x.n(), x.c(), 1, 1}, "channel variance grad");
  BasicTensor<T> gx(x.shape());
  const std::size_t plane = x.h() * x.w();
  for (std::size_t n = 0; n < x.n(); ++n) {
    for (std::size_t c = 0; c < x.c(); ++c) {
      const std::size_t base = x.index(n, c, 0, 0);
      T s = 0;
      for (std::size_t i = 0; i < plane; ++i) s += x[base + i];
      const T mean = s / static_cast<T>(plane);
      const T scale = T(2) * grad_out.at(n, c, 0, 0) / static_cast<T>(plane);
      for (std::size_t i = 0; i < plane; ++i) gx[base + i] = scale * (x[base + i] - mean);
    }
  }
  return gx;
}

bool broadcastable(const Shape& a, const Shape& b) {
  const auto da = a.dims(), db = b.dims();
  for (std::size_t i = 0; i < 4; ++i) {
    if (db[i] != da[i] && db[i] != 1) return false;
  }
  return true;
}

template <typename T>
BasicTensor<T> elementwise(const BasicTensor<T>& a, const BasicTensor<T>& b, BinaryOp op) {
  if (!broadcastable(a.shape(), b.shape())) {
    throw ShapeError("cannot broadcast " + to_string(b.shape()) + " onto " + to_string(a.shape()));
  }
  BasicTensor<T> out(a.shape());
  const BroadcastIndex bi{b.shape()};
  std::size_t i = 0;
  for (std::size_t n = 0; n < a.n(); ++n) {
    for (std::size_t c = 0; c < a.c(); ++c) {
      for (std::size_t y = 0; y < a.h(); ++y) {
        for (std::size_t x = 0; x < a.w(); ++x, ++i) {
          const T bv = b[bi(n, c, y, x)];
          switch (op) {
            case BinaryOp::add: out[i] = a[i] + bv; break;
            case BinaryOp::sub: out[i] = a[i] - bv; break;
            case BinaryOp::mul: out[i] = a[i] * bv; break;
          }
        }
      }
    }
  }
  return out;
}

template <typename T>
BasicTensor<T> reduce_to(const BasicTensor<T>& g, const Shape& target) {
  if (g.shape() == target) return g;
  if (!broadcastable(g.shape(), target)) {
    throw ShapeError("cannot reduce " + to_string(g.shape()) + " to " + to_string(target));
  }
  BasicTensor<T> out(target);
  const BroadcastIndex bi{target};
  std::size_t i = 0;
  for (std::size_t n = 0; n < g.n(); ++n) {
    for (std::size_t c = 0; c < g.c(); ++c) {
      for (std::size_t y = 0; y < g.h(); ++y) {
        for (std::size_t x = 0; x < g.w(); ++x, ++i) out[bi(n, c, y, x)] += g[i];
      }
    }
  }
  return out;
}

template <typename T>
BinaryGrads<T> elementwise_backward(const BasicTensor<T>& a, const BasicTensor<T>& b, BinaryOp op,
                                    const BasicTensor<T>& grad_out) {
  require_same(grad_out.shape(), a.shape(), "elementwise grad");
  switch (op) {
    case BinaryOp::add:
      return {grad_out, reduce_to(grad_out, b.shape())};
    case BinaryOp::sub: {
      BasicTensor<T> neg(grad_out.shape());
      for (std::size_t i = 0; i < neg.numel(); ++i) neg[i] = -grad_out[i];
      return {grad_out, reduce_to(neg, b.shape())};
    }
    case BinaryOp::mul: {
      // d/da = g * b (broadcast), d/db = reduce(g * a).
      BasicTensor<T> ga = elementwise(grad_out, b, BinaryOp::mul);
      BasicTensor<T> gab(grad_out.shape());
      for (std::size_t i = 0; i < gab.numel(); ++i) gab[i] = grad_out[i] * a[i];
      return {std::move(ga), reduce_to(gab, b.shape())};
    }
  }
  throw InternalError("unknown binary op");
}

template <typename T>
BasicTensor<T> channel_slice(const BasicTensor<T>& x, std::size_t begin, std::size_t count) {
  if (count == 0 || begin + count > x.c()) {
    throw ShapeError("channel slice [" + std::to_string(begin) + "," + std::to_string(begin + count) +
                     ") outside " + to_string(x.shape()));
  }
  BasicTensor<T> out(Shape{x.n(), count, x.h(), x.w()});
  const std::size_t plane = x.h() * x.w();
  for (std::size_t n = 0; n < x.n(); ++n) {
    std::copy_n(&x.data()[x.index(n, begin, 0, 0)], count * plane, &out.data()[out.index(n, 0, 0, 0)]);
  }
  return out;
}

template <typename T>
std::vector<BasicTensor<T>> channel_split(const BasicTensor<T>& x, const std::vector<std::size_t>& sizes) {
  const std::size_t total = std::accumulate(sizes.begin(), sizes.end(), std::size_t{0});
  if (total != x.c()) {
    throw ShapeError("split sizes sum to " + std::to_string(total) + " but input has " + std::to_string(x.c()) +
                     " channels");
  }
  std::vector<BasicTensor<T>> parts;
  std::size_t begin = 0;
  for (std::size_t s : sizes) {
    parts.push_back(channel_slice(x, begin, s));
    begin += s;
  }
  return parts;
}

template <typename T>
BasicTensor<T> channel_concat(const std::vector<BasicTensor<T>>& parts) {
  if (parts.empty()) throw ShapeError("concat of zero tensors");
  const Shape& ref = parts.front().shape();
  std::size_t channels = 0;
  for (const auto& p : parts) {
    if (p.n() != ref.n || p.h() != ref.h || p.w() != ref.w) {
      throw ShapeError("concat spatial mismatch: " + to_string(p.shape()) + " vs " + to_string(ref));
    }
    channels += p.c();
  }
  BasicTensor<T> out(Shape{ref.n, channels, ref.h, ref.w});
  const std::size_t plane = ref.h * ref.w;
  for (std::size_t n = 0; n < ref.n; ++n) {
    std::size_t offset = 0;
    for (const auto& p : parts) {
      std::copy_n(&p.data()[p.index(n, 0, 0, 0)], p.c() * plane, &out.data()[out.index(n, offset, 0, 0)]);
      offset += p.c();
    }
  }
  return out;
}

std::vector<std::size_t> shuffle_permutation(std::size_t channels, std::size_t groups) {
  if (groups == 0 || channels % groups != 0) {
    throw ConfigError("channel shuffle: " + std::to_string(channels) + " channels are not divisible by " +
                      std::to_string(groups) + " groups");
  }
  const std::size_t per_group = channels / groups;
  std::vector<std::size_t> perm(channels);
  for (std::size_t g = 0; g < groups; ++g) {
    for (std::size_t i = 0; i < per_group; ++i) perm[i * groups + g] = g * per_group + i;
  }
  return perm;
}

template <typename T>
BasicTensor<T> channel_shuffle(const BasicTensor<T>& x, std::size_t groups) {
  const auto perm = shuffle_permutation(x.c(), groups);
  BasicTensor<T> out(x.shape());
  const std::size_t plane = x.h() * x.w();
  for (std::size_t n = 0; n < x.n(); ++n) {
    for (std::size_t c = 0; c < x.c(); ++c) {
      std::copy_n(&x.data()[x.index(n, perm[c], 0, 0)], plane, &out.data()[out.index(n, c, 0, 0)]);
    }
  }
  return out;
}

template <typename T>
T sum_all(const BasicTensor<T>& x) {
  T s = 0;
  for (T v : x.data()) s += v;
  return s;
}

#define MMFUSE_INSTANTIATE_KERNELS(T)                                                                             \
  template BasicTensor<T> conv2d(const BasicTensor<T>&, const ConvSpec&, const BasicTensor<T>&,                  \
                                 const BasicTensor<T>*);                                                         \
  template ConvGrads<T> conv2d_backward(const BasicTensor<T>&, const ConvSpec&, const BasicTensor<T>&, bool,      \
                                        const BasicTensor<T>&);                                                  \
  template BasicTensor<T> conv1d(const BasicTensor<T>&, std::size_t, const BasicTensor<T>&, const BasicTensor<T>*); \
  template ConvGrads<T> conv1d_backward(const BasicTensor<T>&, std::size_t, const BasicTensor<T>&, bool,          \
                                        const BasicTensor<T>&);                                                  \
  template BasicTensor<T> adaptive_pool(const BasicTensor<T>&, std::size_t, std::size_t, PoolMode);              \
  template BasicTensor<T> adaptive_pool_backward(const BasicTensor<T>&, std::size_t, std::size_t, PoolMode,      \
                                                 const BasicTensor<T>&);                                         \
  template BasicTensor<T> channel_pool(const BasicTensor<T>&, PoolMode);                                         \
  template BasicTensor<T> channel_pool_backward(const BasicTensor<T>&, PoolMode, const BasicTensor<T>&);         \
  template T activate(T, ActivationKind);                                                                        \
  template T activate_derivative(T, ActivationKind);                                                             \
  template BasicTensor<T> activation(const BasicTensor<T>&, ActivationKind);                                     \
  template BasicTensor<T> activation_backward(const BasicTensor<T>&, ActivationKind, const BasicTensor<T>&);     \
  template BasicTensor<T> batch_norm(const BasicTensor<T>&, const BasicTensor<T>&, const BasicTensor<T>&,        \
                                     const BasicTensor<T>&, const BasicTensor<T>&, BnMode, double, double,       \
                                     BatchNormStats<T>*);                                                        \
  template BatchNormGrads<T> batch_norm_backward(const BasicTensor<T>&, const BasicTensor<T>&,                   \
                                                 const BasicTensor<T>&, const BasicTensor<T>&, BnMode, double,   \
                                                 const BasicTensor<T>&);                                         \
  template BasicTensor<T> upsample_nearest(const BasicTensor<T>&, std::size_t);                                  \
  template BasicTensor<T> upsample_nearest_backward(const BasicTensor<T>&, std::size_t);                         \
  template BasicTensor<T> l2_normalize_channels(const BasicTensor<T>&, double);                                  \
  template BasicTensor<T> l2_normalize_channels_backward(const BasicTensor<T>&, double, const BasicTensor<T>&);  \
  template BasicTensor<T> channel_variance(const BasicTensor<T>&);                                               \
  template BasicTensor<T> channel_variance_backward(const BasicTensor<T>&, const BasicTensor<T>&);               \
  template BasicTensor<T> elementwise(const BasicTensor<T>&, const BasicTensor<T>&, BinaryOp);                   \
  template BinaryGrads<T> elementwise_backward(const BasicTensor<T>&, const BasicTensor<T>&, BinaryOp,           \
                                               const BasicTensor<T>&);                                           \
  template BasicTensor<T> reduce_to(const BasicTensor<T>&, const Shape&);                                        \
  template BasicTensor<T> channel_slice(const BasicTensor<T>&, std::size_t, std::size_t);                        \
  template std::vector<BasicTensor<T>> channel_split(const BasicTensor<T>&, const std::vector<std::size_t>&);    \
  template BasicTensor<T> channel_concat(const std::vector<BasicTensor<T>>&);                                    \
  template BasicTensor<T> channel_shuffle(const BasicTensor<T>&, std::size_t);                                   \
  template T sum_all(const BasicTensor<T>&);

MMFUSE_INSTANTIATE_KERNELS(float)
MMFUSE_INSTANTIATE_KERNELS(double)

}  // namespace mmfuse
