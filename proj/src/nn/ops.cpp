#include "kwsf/nn/ops.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

#include <Eigen/Core>

#include "kwsf/random.hpp"

namespace kwsf::nn {

std::string shape_string(const Shape& shape) {
  std::string s = "[";
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i) s += "x";
    s += std::to_string(shape[i]);
  }
  return s + "]";
}

namespace {

template <typename T>
using RowMat = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
template <typename T>
using ConstMapMat = Eigen::Map<const RowMat<T>>;

// Eigen picks its vectorized reduction order from the data address, so
// products run on freshly allocated (aligned) copies to stay bitwise
// reproducible across buffers.
template <typename T>
RowMat<T> aligned_copy(const T* p, Eigen::Index rows, Eigen::Index cols) {
  return ConstMapMat<T>(p, rows, cols);
}

struct ConvGeometry {
  std::size_t n, c, h, w, o, kh, kw, ph, pw;
  std::size_t patch() const { return c * kh * kw; }
  std::size_t plane() const { return h * w; }
};

template <typename T>
ConvGeometry conv_geometry(const Tensor<T>& input, const Tensor<T>& kernel) {
  require(input.rank() == 4, ErrorCode::kShape, "conv2d: input must be N x C x H x W, got " + shape_string(input.shape()));
  require(kernel.rank() == 4, ErrorCode::kShape, "conv2d: kernel must be O x C x kh x kw, got " + shape_string(kernel.shape()));
  require(kernel.dim(1) == input.dim(1), ErrorCode::kShape,
          "conv2d: channel mismatch " + shape_string(input.shape()) + " vs kernel " + shape_string(kernel.shape()));
  require(kernel.dim(2) % 2 == 1 && kernel.dim(3) % 2 == 1, ErrorCode::kShape, "conv2d: kernel sizes must be odd");
  return {input.dim(0), input.dim(1), input.dim(2), input.dim(3), kernel.dim(0),
          kernel.dim(2), kernel.dim(3), kernel.dim(2) / 2, kernel.dim(3) / 2};
}

// cols[(ci*kh + i)*kw + j][y*W + x] = input[n, ci, y+i-ph, x+j-pw] (zero outside).
template <typename T>
void im2col(const T* img, const ConvGeometry& g, T* cols) {
  const std::size_t plane = g.plane();
  for (std::size_t ci = 0; ci < g.c; ++ci) {
    const T* src = img + ci * plane;
    for (std::size_t i = 0; i < g.kh; ++i) {
      for (std::size_t j = 0; j < g.kw; ++j) {
        T* dst = cols + ((ci * g.kh + i) * g.kw + j) * plane;
        const auto dy = static_cast<std::ptrdiff_t>(i) - static_cast<std::ptrdiff_t>(g.ph);
        const auto dx = static_cast<std::ptrdiff_t>(j) - static_cast<std::ptrdiff_t>(g.pw);
        const std::size_t x_lo = dx < 0 ? static_cast<std::size_t>(-dx) : 0;
        const std::size_t x_hi = dx > 0 ? g.w - static_cast<std::size_t>(dx) : g.w;
        for (std::size_t y = 0; y < g.h; ++y) {
          T* row = dst + y * g.w;
          const auto sy = static_cast<std::ptrdiff_t>(y) + dy;
          if (sy < 0 || sy >= static_cast<std::ptrdiff_t>(g.h) || x_lo >= x_hi) {
            std::fill(row, row + g.w, T{0});
            continue;
          }
          const T* srow = src + static_cast<std::size_t>(sy) * g.w;
          std::fill(row, row + x_lo, T{0});
          for (std::size_t x = x_lo; x < x_hi; ++x) row[x] = srow[static_cast<std::ptrdiff_t>(x) + dx];
          std::fill(row + x_hi, row + g.w, T{0});
        }
      }
    }
  }
}

template <typename T>
void col2im_add(const T* cols, const ConvGeometry& g, T* img) {
  const std::size_t plane = g.plane();
  for (std::size_t ci = 0; ci < g.c; ++ci) {
    T* dst = img + ci * plane;
    for (std::size_t i = 0; i < g.kh; ++i) {
      for (std::size_t j = 0; j < g.kw; ++j) {
        const T* src = cols + ((ci * g.kh + i) * g.kw + j) * plane;
        const auto dy = static_cast<std::ptrdiff_t>(i) - static_cast<std::ptrdiff_t>(g.ph);
        const auto dx = static_cast<std::ptrdiff_t>(j) - static_cast<std::ptrdiff_t>(g.pw);
        const std::size_t x_lo = dx < 0 ? static_cast<std::size_t>(-dx) : 0;
        const std::size_t x_hi = dx > 0 ? g.w - static_cast<std::size_t>(dx) : g.w;
        for (std::size_t y = 0; y < g.h; ++y) {
          const auto sy = static_cast<std::ptrdiff_t>(y) + dy;
          if (sy < 0 || sy >= static_cast<std::ptrdiff_t>(g.h)) continue;
          T* drow = dst + static_cast<std::size_t>(sy) * g.w;
          const T* srow = src + y * g.w;
          for (std::size_t x = x_lo; x < x_hi; ++x) drow[static_cast<std::ptrdiff_t>(x) + dx] += srow[x];
        }
      }
    }
  }
}

std::size_t bn_channels(const Shape& s) { return s[1]; }

template <typename T>
void check_bn_shapes(const Tensor<T>& x, const Tensor<T>& scale, const Tensor<T>& offset) {
  require(x.rank() == 4 || x.rank() == 2, ErrorCode::kShape, "batch_norm: input must be rank 2 or 4");
  const std::size_t c = bn_channels(x.shape());
  require(scale.size() == c && offset.size() == c, ErrorCode::kShape, "batch_norm: scale/offset size mismatch");
}

// Calls f(channel, flat_index) over every element, channel-major per sample.
template <typename F>
void for_each_channel_element(const Shape& s, F&& f) {
  const std::size_t n = s[0], c = s[1];
  const std::size_t inner = s.size() == 4 ? s[2] * s[3] : 1;
  for (std::size_t b = 0; b < n; ++b) {
    for (std::size_t ch = 0; ch < c; ++ch) {
      const std::size_t base = (b * c + ch) * inner;
      for (std::size_t k = 0; k < inner; ++k) f(ch, base + k);
    }
  }
}

}  // namespace

template <typename T>
Tensor<T> conv2d_forward(const Tensor<T>& input, const Tensor<T>& kernel, const Tensor<T>* bias) {
  const ConvGeometry g = conv_geometry(input, kernel);
  if (bias) require(bias->size() == g.o, ErrorCode::kShape, "conv2d: bias size mismatch");
  Tensor<T> out({g.n, g.o, g.h, g.w});
  const auto patch = static_cast<Eigen::Index>(g.patch());
  const auto plane = static_cast<Eigen::Index>(g.plane());
  const auto outc = static_cast<Eigen::Index>(g.o);
  const RowMat<T> k = aligned_copy(kernel.ptr(), outc, patch);
  RowMat<T> cols(patch, plane);
  RowMat<T> y(outc, plane);
  for (std::size_t b = 0; b < g.n; ++b) {
    im2col(input.ptr() + b * g.c * g.plane(), g, cols.data());
    y.noalias() = k * cols;
    T* dst = out.ptr() + b * g.o * g.plane();
    for (std::size_t o = 0; o < g.o; ++o) {
      const T shift = bias ? (*bias)[o] : T{0};
      const T* row = y.data() + o * g.plane();
      for (std::size_t i = 0; i < g.plane(); ++i) dst[o * g.plane() + i] = row[i] + shift;
    }
  }
  check_finite(out, "conv2d");
  return out;
}

template <typename T>
Conv2dGrads<T> conv2d_backward(const Tensor<T>& input, const Tensor<T>& kernel, const Tensor<T>& grad_output,
                               bool has_bias, bool need_input_grad) {
  const ConvGeometry g = conv_geometry(input, kernel);
  require(grad_output.shape() == Shape({g.n, g.o, g.h, g.w}), ErrorCode::kShape, "conv2d_backward: grad shape mismatch");
  Conv2dGrads<T> grads;
  grads.kernel = Tensor<T>(kernel.shape());
  if (need_input_grad) grads.input = Tensor<T>(input.shape());
  if (has_bias) grads.bias = Tensor<T>({g.o});

  const auto patch = static_cast<Eigen::Index>(g.patch());
  const auto plane = static_cast<Eigen::Index>(g.plane());
  const auto outc = static_cast<Eigen::Index>(g.o);
  const RowMat<T> k = aligned_copy(kernel.ptr(), outc, patch);
  RowMat<T> dk = RowMat<T>::Zero(outc, patch);
  RowMat<T> cols(patch, plane);
  RowMat<T> dc(need_input_grad ? patch : 0, plane);
  for (std::size_t b = 0; b < g.n; ++b) {
    im2col(input.ptr() + b * g.c * g.plane(), g, cols.data());
    const T* dy_ptr = grad_output.ptr() + b * g.o * g.plane();
    const RowMat<T> dy = aligned_copy(dy_ptr, outc, plane);
    dk.noalias() += dy * cols.transpose();
    if (has_bias) {
      for (std::size_t o = 0; o < g.o; ++o) {
        T acc{0};
        for (std::size_t i = 0; i < g.plane(); ++i) acc += dy_ptr[o * g.plane() + i];
        grads.bias[o] += acc;
      }
    }
    if (need_input_grad) {
      dc.noalias() = k.transpose() * dy;
      col2im_add(dc.data(), g, grads.input.ptr() + b * g.c * g.plane());
    }
  }
  std::copy_n(dk.data(), dk.size(), grads.kernel.ptr());
  return grads;
}

template <typename T>
Tensor<T> relu(const Tensor<T>& x) {
  Tensor<T> out(x.shape());
  for (std::size_t i = 0; i < x.size(); ++i) out[i] = x[i] > T{0} ? x[i] : T{0};
  check_finite(out, "relu");
  return out;
}

template <typename T>
Tensor<T> relu_backward(const Tensor<T>& x, const Tensor<T>& grad_output) {
  check_same_shape(x, grad_output, "relu_backward");
  Tensor<T> out(x.shape());
  for (std::size_t i = 0; i < x.size(); ++i) out[i] = x[i] > T{0} ? grad_output[i] : T{0};
  return out;
}

template <typename T>
Tensor<T> sigmoid(const Tensor<T>& x) {
  Tensor<T> out(x.shape());
  for (std::size_t i = 0; i < x.size(); ++i) {
    const T v = x[i];
    // Branch keeps exp() from overflowing for large |v|.
    if (v >= T{0}) {
      out[i] = T{1} / (T{1} + std::exp(-v));
    } else {
      const T e = std::exp(v);
      out[i] = e / (T{1} + e);
    }
  }
  check_finite(out, "sigmoid");
  return out;
}

template <typename T>
Tensor<T> sigmoid_backward(const Tensor<T>& y, const Tensor<T>& grad_output) {
  check_same_shape(y, grad_output, "sigmoid_backward");
  Tensor<T> out(y.shape());
  for (std::size_t i = 0; i < y.size(); ++i) out[i] = grad_output[i] * y[i] * (T{1} - y[i]);
  return out;
}

template <typename T>
Tensor<T> elementwise_mul(const Tensor<T>& a, const Tensor<T>& b) {
  check_same_shape(a, b, "elementwise_mul");
  Tensor<T> out(a.shape());
  for (std::size_t i = 0; i < a.size(); ++i) out[i] = a[i] * b[i];
  check_finite(out, "elementwise_mul");
  return out;
}

template <typename T>
Tensor<T> batch_norm_forward(const Tensor<T>& x, const Tensor<T>& scale, const Tensor<T>& offset,
                             const Tensor<T>& running_mean, const Tensor<T>& running_var,
                             const BatchNormOptions& options, BatchNormCache<T>* cache) {
  check_bn_shapes(x, scale, offset);
  const std::size_t c = bn_channels(x.shape());
  const std::size_t count = x.size() / c;
  const auto eps = static_cast<T>(options.epsilon);
  std::vector<T> mean(c, T{0}), var(c, T{0}), inv_std(c);

  if (options.mode == Mode::kTrain) {
    require(x.dim(0) >= 2, ErrorCode::kDegenerateBatch, "batch_norm: train mode needs a batch of at least 2");
    // Two-pass statistics in double for stability even when T is float.
    std::vector<double> sum(c, 0.0), sq(c, 0.0);
    for_each_channel_element(x.shape(), [&](std::size_t ch, std::size_t i) { sum[ch] += x[i]; });
    for (std::size_t ch = 0; ch < c; ++ch) sum[ch] /= static_cast<double>(count);
    for_each_channel_element(x.shape(), [&](std::size_t ch, std::size_t i) {
      const double d = x[i] - sum[ch];
      sq[ch] += d * d;
    });
    for (std::size_t ch = 0; ch < c; ++ch) {
      mean[ch] = static_cast<T>(sum[ch]);
      var[ch] = static_cast<T>(sq[ch] / static_cast<double>(count));
    }
  } else {
    require(running_mean.size() == c && running_var.size() == c, ErrorCode::kShape,
            "batch_norm: running stats size mismatch");
    for (std::size_t ch = 0; ch < c; ++ch) {
      mean[ch] = running_mean[ch];
      var[ch] = running_var[ch];
    }
  }
  for (std::size_t ch = 0; ch < c; ++ch) inv_std[ch] = T{1} / std::sqrt(var[ch] + eps);

  Tensor<T> out(x.shape());
  Tensor<T> x_hat;
  if (cache) x_hat = Tensor<T>(x.shape());
  for_each_channel_element(x.shape(), [&](std::size_t ch, std::size_t i) {
    const T xh = (x[i] - mean[ch]) * inv_std[ch];
    if (cache) x_hat[i] = xh;
    out[i] = scale[ch] * xh + offset[ch];
  });
  check_finite(out, "batch_norm");
  if (cache) {
    cache->x_hat = std::move(x_hat);
    cache->inv_std = std::move(inv_std);
    cache->batch_mean = std::move(mean);
    cache->batch_var = std::move(var);
    cache->count = count;
  }
  return out;
}

template <typename T>
BatchNormGrads<T> batch_norm_backward(const Tensor<T>& grad_output, const Tensor<T>& scale,
                                      const BatchNormCache<T>& cache) {
  check_same_shape(grad_output, cache.x_hat, "batch_norm_backward");
  const std::size_t c = bn_channels(grad_output.shape());
  BatchNormGrads<T> g;
  g.scale = Tensor<T>({c});
  g.offset = Tensor<T>({c});
  g.input = Tensor<T>(grad_output.shape());
  std::vector<T> sum_dxhat(c, T{0}), sum_dxhat_xhat(c, T{0});
  for_each_channel_element(grad_output.shape(), [&](std::size_t ch, std::size_t i) {
    const T dy = grad_output[i];
    g.scale[ch] += dy * cache.x_hat[i];
    g.offset[ch] += dy;
    const T dxhat = dy * scale[ch];
    sum_dxhat[ch] += dxhat;
    sum_dxhat_xhat[ch] += dxhat * cache.x_hat[i];
  });
  const auto m = static_cast<T>(cache.count);
  for_each_channel_element(grad_output.shape(), [&](std::size_t ch, std::size_t i) {
    const T dxhat = grad_output[i] * scale[ch];
    g.input[i] = cache.inv_std[ch] / m * (m * dxhat - sum_dxhat[ch] - cache.x_hat[i] * sum_dxhat_xhat[ch]);
  });
  return g;
}

template <typename T>
void update_running_stats(Tensor<T>& running_mean, Tensor<T>& running_var, const BatchNormCache<T>& cache,
                          double momentum) {
  const std::size_t c = cache.batch_mean.size();
  require(running_mean.size() == c && running_var.size() == c, ErrorCode::kShape,
          "update_running_stats: size mismatch");
  const auto m = static_cast<T>(momentum);
  const T unbias = cache.count > 1 ? static_cast<T>(cache.count) / static_cast<T>(cache.count - 1) : T{1};
  for (std::size_t ch = 0; ch < c; ++ch) {
    running_mean[ch] = (T{1} - m) * running_mean[ch] + m * cache.batch_mean[ch];
    running_var[ch] = (T{1} - m) * running_var[ch] + m * cache.batch_var[ch] * unbias;
  }
}

template <typename T>
Tensor<T> dropout_mask(const Shape& shape, double rate, std::uint64_t seed) {
  require(rate >= 0.0 && rate < 1.0, ErrorCode::kInvalidArgument, "dropout rate must lie in [0, 1)");
  Tensor<T> mask(shape, T{1});
  if (rate == 0.0) return mask;
  const auto keep_scale = static_cast<T>(1.0 / (1.0 - rate));
  Rng rng(seed);
  for (std::size_t i = 0; i < mask.size(); ++i) mask[i] = rng.uniform() < rate ? T{0} : keep_scale;
  return mask;
}

template <typename T>
Tensor<T> dropout(const Tensor<T>& x, double rate, Mode mode, std::uint64_t seed, Tensor<T>* mask_out) {
  require(rate >= 0.0 && rate < 1.0, ErrorCode::kInvalidArgument, "dropout rate must lie in [0, 1)");
  if (mode == Mode::kEval || rate == 0.0) {
    if (mask_out) *mask_out = Tensor<T>(x.shape(), T{1});
    return x;
  }
  Tensor<T> mask = dropout_mask<T>(x.shape(), rate, seed);
  Tensor<T> out = elementwise_mul(x, mask);
  if (mask_out) *mask_out = std::move(mask);
  return out;
}

template <typename T>
Tensor<T> maxpool2_forward(const Tensor<T>& x, std::vector<std::uint32_t>* argmax) {
  require(x.rank() == 4, ErrorCode::kShape, "maxpool2: input must be rank 4");
  const std::size_t n = x.dim(0), c = x.dim(1), h = x.dim(2), w = x.dim(3);
  require(h >= 2 && w >= 2, ErrorCode::kShape, "maxpool2: input smaller than 2x2: " + shape_string(x.shape()));
  const std::size_t oh = h / 2, ow = w / 2;
  Tensor<T> out({n, c, oh, ow});
  if (argmax) argmax->assign(out.size(), 0);
  std::size_t o = 0;
  for (std::size_t p = 0; p < n * c; ++p) {
    const std::size_t base = p * h * w;
    for (std::size_t y = 0; y < oh; ++y) {
      for (std::size_t xx = 0; xx < ow; ++xx, ++o) {
        std::size_t best = base + (2 * y) * w + 2 * xx;
        const std::size_t cand[3] = {best + 1, best + w, best + w + 1};
        for (std::size_t idx : cand) {
          if (x[idx] > x[best]) best = idx;  // strict: first index wins ties
        }
        out[o] = x[best];
        if (argmax) (*argmax)[o] = static_cast<std::uint32_t>(best);
      }
    }
  }
  return out;
}

template <typename T>
Tensor<T> maxpool2_backward(const Shape& input_shape, const std::vector<std::uint32_t>& argmax,
                            const Tensor<T>& grad_output) {
  require(argmax.size() == grad_output.size(), ErrorCode::kShape, "maxpool2_backward: argmax size mismatch");
  Tensor<T> dx(input_shape);
  for (std::size_t o = 0; o < argmax.size(); ++o) dx[argmax[o]] += grad_output[o];
  return dx;
}

template <typename T>
Tensor<T> linear_forward(const Tensor<T>& x, const Tensor<T>& weight, const Tensor<T>& bias) {
  require(x.rank() == 2 && weight.rank() == 2 && x.dim(1) == weight.dim(0), ErrorCode::kShape,
          "linear: shape mismatch " + shape_string(x.shape()) + " x " + shape_string(weight.shape()));
  require(bias.size() == weight.dim(1), ErrorCode::kShape, "linear: bias size mismatch");
  const auto n = static_cast<Eigen::Index>(x.dim(0));
  const auto d = static_cast<Eigen::Index>(x.dim(1));
  const auto k = static_cast<Eigen::Index>(weight.dim(1));
  Tensor<T> out({x.dim(0), weight.dim(1)});
  RowMat<T> y(n, k);
  y.noalias() = aligned_copy(x.ptr(), n, d) * aligned_copy(weight.ptr(), d, k);
  for (Eigen::Index r = 0; r < n; ++r) {
    for (Eigen::Index j = 0; j < k; ++j) y(r, j) += bias[static_cast<std::size_t>(j)];
  }
  std::copy_n(y.data(), y.size(), out.ptr());
  check_finite(out, "linear");
  return out;
}

template <typename T>
LinearGrads<T> linear_backward(const Tensor<T>& x, const Tensor<T>& weight, const Tensor<T>& grad_output) {
  const auto n = static_cast<Eigen::Index>(x.dim(0));
  const auto d = static_cast<Eigen::Index>(x.dim(1));
  const auto k = static_cast<Eigen::Index>(weight.dim(1));
  require(grad_output.shape() == Shape({x.dim(0), weight.dim(1)}), ErrorCode::kShape,
          "linear_backward: grad shape mismatch");
  LinearGrads<T> g{Tensor<T>(x.shape()), Tensor<T>(weight.shape()), Tensor<T>({weight.dim(1)})};
  const RowMat<T> dy = aligned_copy(grad_output.ptr(), n, k);
  const RowMat<T> dx = dy * aligned_copy(weight.ptr(), d, k).transpose();
  const RowMat<T> dw = aligned_copy(x.ptr(), n, d).transpose() * dy;
  std::copy_n(dx.data(), dx.size(), g.input.ptr());
  std::copy_n(dw.data(), dw.size(), g.weight.ptr());
  for (Eigen::Index r = 0; r < n; ++r) {
    for (Eigen::Index j = 0; j < k; ++j) g.bias[static_cast<std::size_t>(j)] += dy(r, j);
  }
  return g;
}

template <typename T>
Tensor<T> log_softmax(const Tensor<T>& logits) {
  require(logits.rank() == 2, ErrorCode::kShape, "softmax: logits must be N x K");
  const std::size_t n = logits.dim(0), k = logits.dim(1);
  Tensor<T> out(logits.shape());
  for (std::size_t r = 0; r < n; ++r) {
    const T* z = logits.ptr() + r * k;
    const T mx = *std::max_element(z, z + k);
    T sum{0};
    for (std::size_t j = 0; j < k; ++j) sum += std::exp(z[j] - mx);
    const T lse = mx + std::log(sum);
    for (std::size_t j = 0; j < k; ++j) out[r * k + j] = z[j] - lse;
  }
  check_finite(out, "log_softmax");
  return out;
}

template <typename T>
Tensor<T> softmax(const Tensor<T>& logits) {
  require(logits.rank() == 2, ErrorCode::kShape, "softmax: logits must be N x K");
  const std::size_t n = logits.dim(0), k = logits.dim(1);
  Tensor<T> out(logits.shape());
  for (std::size_t r = 0; r < n; ++r) {
    const T* z = logits.ptr() + r * k;
    T* p = out.ptr() + r * k;
    const T mx = *std::max_element(z, z + k);
    T sum{0};
    for (std::size_t j = 0; j < k; ++j) {
      p[j] = std::exp(z[j] - mx);
      sum += p[j];
    }
    for (std::size_t j = 0; j < k; ++j) p[j] /= sum;
  }
  check_finite(out, "softmax");
  return out;
}

#define KWSF_INSTANTIATE_OPS(T)                                                                                  \
  template Tensor<T> conv2d_forward(const Tensor<T>&, const Tensor<T>&, const Tensor<T>*);                       \
  template Conv2dGrads<T> conv2d_backward(const Tensor<T>&, const Tensor<T>&, const Tensor<T>&, bool, bool);     \
  template Tensor<T> relu(const Tensor<T>&);                                                                     \
  template Tensor<T> relu_backward(const Tensor<T>&, const Tensor<T>&);                                          \
  template Tensor<T> sigmoid(const Tensor<T>&);                                                                  \
  template Tensor<T> sigmoid_backward(const Tensor<T>&, const Tensor<T>&);                                       \
  template Tensor<T> elementwise_mul(const Tensor<T>&, const Tensor<T>&);                                        \
  template Tensor<T> batch_norm_forward(const Tensor<T>&, const Tensor<T>&, const Tensor<T>&, const Tensor<T>&,  \
                                        const Tensor<T>&, const BatchNormOptions&, BatchNormCache<T>*);          \
  template BatchNormGrads<T> batch_norm_backward(const Tensor<T>&, const Tensor<T>&, const BatchNormCache<T>&);  \
  template void update_running_stats(Tensor<T>&, Tensor<T>&, const BatchNormCache<T>&, double);                  \
  template Tensor<T> dropout_mask(const Shape&, double, std::uint64_t);                                          \
  template Tensor<T> dropout(const Tensor<T>&, double, Mode, std::uint64_t, Tensor<T>*);                         \
  template Tensor<T> maxpool2_forward(const Tensor<T>&, std::vector<std::uint32_t>*);                            \
  template Tensor<T> maxpool2_backward(const Shape&, const std::vector<std::uint32_t>&, const Tensor<T>&);       \
  template Tensor<T> linear_forward(const Tensor<T>&, const Tensor<T>&, const Tensor<T>&);                       \
  template LinearGrads<T> linear_backward(const Tensor<T>&, const Tensor<T>&, const Tensor<T>&);                 \
  template Tensor<T> softmax(const Tensor<T>&);                                                                  \
  template Tensor<T> log_softmax(const Tensor<T>&);

KWSF_INSTANTIATE_OPS(float)
KWSF_INSTANTIATE_OPS(double)

}  // namespace kwsf::nn
