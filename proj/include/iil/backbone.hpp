#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <numbers>
#include <random>
#include <string>
#include <vector>

#include "iil/error.hpp"
#include "iil/sampling.hpp"
#include "iil/tensor.hpp"

namespace iil {

/// Gradient pair returned by every layer's backward pass.
struct LayerGradients {
  Tensor input;
  std::vector<Tensor> params;  // same order as the layer's parameter list
};

/// Planar image -> N orientation channels. Kernel layout: out x in x k x k.
struct LiftingConvLayer {
  Tensor kernels;
  Tensor bias;  // out
  int num_orientations = 1;
  std::size_t stride = 1;

  [[nodiscard]] std::size_t out_channels() const { return kernels.dim(0); }
  [[nodiscard]] std::size_t in_channels() const { return kernels.dim(1); }
  [[nodiscard]] std::size_t kernel_size() const { return kernels.dim(2); }

  static LiftingConvLayer random(std::size_t in_ch, std::size_t out_ch, std::size_t k, int orientations,
                                 std::mt19937_64& rng) {
    if (k % 2 == 0) throw ShapeError("kernel size must be odd");
    LiftingConvLayer layer{Tensor({out_ch, in_ch, k, k}), Tensor({out_ch}), orientations, 1};
    std::normal_distribution<double> dist(0.0, std::sqrt(2.0 / static_cast<double>(in_ch * k * k)));
    for (double& v : layer.kernels.data()) v = dist(rng);
    return layer;
  }
};

/// Orientation-aware convolution. Kernel layout: out x in x N x k x k.
struct GroupConvLayer {
  Tensor kernels;
  Tensor bias;  // out
  std::size_t stride = 1;

  [[nodiscard]] std::size_t out_channels() const { return kernels.dim(0); }
  [[nodiscard]] std::size_t in_channels() const { return kernels.dim(1); }
  [[nodiscard]] std::size_t orientations() const { return kernels.dim(2); }
  [[nodiscard]] std::size_t kernel_size() const { return kernels.dim(3); }

  static GroupConvLayer random(std::size_t in_ch, std::size_t out_ch, std::size_t k, int orientations,
                               std::mt19937_64& rng) {
    if (k % 2 == 0) throw ShapeError("kernel size must be odd");
    const auto n = static_cast<std::size_t>(orientations);
    GroupConvLayer layer{Tensor({out_ch, in_ch, n, k, k}), Tensor({out_ch}), 1};
    std::normal_distribution<double> dist(0.0, std::sqrt(2.0 / static_cast<double>(in_ch * n * k * k)));
    for (double& v : layer.kernels.data()) v = dist(rng);
    return layer;
  }
};

namespace detail {

inline std::size_t conv_out_extent(std::size_t in, std::size_t k, std::size_t stride) {
  if (in < k) throw ShapeError("convolution input smaller than kernel");
  if (stride == 0) throw ShapeError("stride must be positive");
  return (in - k) / stride + 1;
}

inline std::vector<KernelRotation> orientation_rotations(std::size_t k, std::size_t n) {
  std::vector<KernelRotation> rots;
  for (std::size_t r = 0; r < n; ++r)
    rots.push_back(make_kernel_rotation(k, 2.0 * std::numbers::pi * static_cast<double>(r) / static_cast<double>(n)));
  return rots;
}

/// Rotated lifting kernels laid out [r][ky][kx][in][out] for the inner loops.
inline std::vector<double> rotated_lift_kernels(const LiftingConvLayer& layer) {
  const std::size_t co = layer.out_channels(), ci = layer.in_channels(), k = layer.kernel_size();
  const auto n = static_cast<std::size_t>(layer.num_orientations);
  const auto rots = orientation_rotations(k, n);
  std::vector<double> out(n * k * k * ci * co, 0.0);
  for (std::size_t r = 0; r < n; ++r)
    for (std::size_t t = 0; t < k * k; ++t)
      for (const auto& e : rots[r].taps[t])
        for (std::size_t i = 0; i < ci; ++i)
          for (std::size_t o = 0; o < co; ++o)
            out[((r * k * k + t) * ci + i) * co + o] += e.weight * layer.kernels[((o * ci + i) * k * k) + e.src];
  return out;
}

/// Effective group kernels: for output orientation s and input orientation t the
/// spatial kernel is rot_s(K[:, :, (t - s) mod N]). Layout [s][t][ky][kx][in][out].
inline std::vector<double> rotated_group_kernels(const GroupConvLayer& layer) {
  const std::size_t co = layer.out_channels(), ci = layer.in_channels(), n = layer.orientations(),
                    k = layer.kernel_size();
  const auto rots = orientation_rotations(k, n);
  std::vector<double> out(n * n * k * k * ci * co, 0.0);
  for (std::size_t s = 0; s < n; ++s)
    for (std::size_t t = 0; t < n; ++t) {
      const std::size_t src_orient = (t + n - s) % n;
      for (std::size_t tap = 0; tap < k * k; ++tap)
        for (const auto& e : rots[s].taps[tap])
          for (std::size_t i = 0; i < ci; ++i)
            for (std::size_t o = 0; o < co; ++o)
              out[(((s * n + t) * k * k + tap) * ci + i) * co + o] +=
                  e.weight * layer.kernels[(((o * ci + i) * n + src_orient) * k * k) + e.src];
    }
  return out;
}

}  // namespace detail

/// Output: batch x N x H' x W' x out. Slot r correlates the input with the
/// kernel rotated by 2 pi r / N (valid padding).
inline Tensor lift_forward(const Tensor& image, const LiftingConvLayer& layer) {
  if (image.rank() != 4 || image.dim(3) != layer.in_channels())
    throw ShapeError("lift_forward: image " + shape_string(image.shape()) + " vs kernels " +
                     shape_string(layer.kernels.shape()));
  const std::size_t nb = image.dim(0), h = image.dim(1), w = image.dim(2), ci = layer.in_channels(),
                    co = layer.out_channels(), k = layer.kernel_size(), st = layer.stride;
  const auto n = static_cast<std::size_t>(layer.num_orientations);
  const std::size_t ho = detail::conv_out_extent(h, k, st), wo = detail::conv_out_extent(w, k, st);
  const auto rk = detail::rotated_lift_kernels(layer);
  Tensor out({nb, n, ho, wo, co});
  for (std::size_t b = 0; b < nb; ++b)
    for (std::size_t r = 0; r < n; ++r)
      for (std::size_t y = 0; y < ho; ++y)
        for (std::size_t x = 0; x < wo; ++x) {
          double* dst = out.raw() + (((b * n + r) * ho + y) * wo + x) * co;
          for (std::size_t o = 0; o < co; ++o) dst[o] = layer.bias[o];
          for (std::size_t ky = 0; ky < k; ++ky)
            for (std::size_t kx = 0; kx < k; ++kx) {
              const double* src = image.raw() + ((b * h + y * st + ky) * w + x * st + kx) * ci;
              const double* ker = rk.data() + ((r * k + ky) * k + kx) * ci * co;
              for (std::size_t i = 0; i < ci; ++i) {
                const double v = src[i];
                for (std::size_t o = 0; o < co; ++o) dst[o] += v * ker[i * co + o];
              }
            }
        }
  return out;
}

/// Gradients w.r.t. the image and {kernels, bias}.
inline LayerGradients lift_backward(const Tensor& image, const LiftingConvLayer& layer, const Tensor& upstream) {
  const std::size_t nb = image.dim(0), h = image.dim(1), w = image.dim(2), ci = layer.in_channels(),
                    co = layer.out_channels(), k = layer.kernel_size(), st = layer.stride;
  const auto n = static_cast<std::size_t>(layer.num_orientations);
  const std::size_t ho = detail::conv_out_extent(h, k, st), wo = detail::conv_out_extent(w, k, st);
  if (upstream.shape() != Shape{nb, n, ho, wo, co}) throw ShapeError("lift_backward: upstream shape");
  const auto rk = detail::rotated_lift_kernels(layer);
  std::vector<double> grk(rk.size(), 0.0);
  LayerGradients g{Tensor(image.shape()), {Tensor(layer.kernels.shape()), Tensor(layer.bias.shape())}};
  for (std::size_t b = 0; b < nb; ++b)
    for (std::size_t r = 0; r < n; ++r)
      for (std::size_t y = 0; y < ho; ++y)
        for (std::size_t x = 0; x < wo; ++x) {
          const double* up = upstream.raw() + (((b * n + r) * ho + y) * wo + x) * co;
          for (std::size_t o = 0; o < co; ++o) g.params[1][o] += up[o];
          for (std::size_t ky = 0; ky < k; ++ky)
            for (std::size_t kx = 0; kx < k; ++kx) {
              const std::size_t in_off = ((b * h + y * st + ky) * w + x * st + kx) * ci;
              const std::size_t k_off = ((r * k + ky) * k + kx) * ci * co;
              for (std::size_t i = 0; i < ci; ++i) {
                const double v = image[in_off + i];
                double acc = 0.0;
                for (std::size_t o = 0; o < co; ++o) {
                  acc += up[o] * rk[k_off + i * co + o];
                  grk[k_off + i * co + o] += v * up[o];
                }
                g.input[in_off + i] += acc;
              }
            }
        }
  // Transpose of the kernel rotation map.
  const auto rots = detail::orientation_rotations(k, n);
  for (std::size_t r = 0; r < n; ++r)
    for (std::size_t t = 0; t < k * k; ++t)
      for (const auto& e : rots[r].taps[t])
        for (std::size_t i = 0; i < ci; ++i)
          for (std::size_t o = 0; o < co; ++o)
            g.params[0][((o * ci + i) * k * k) + e.src] += e.weight * grk[((r * k * k + t) * ci + i) * co + o];
  return g;
}

/// Group correlation over translations and the cyclic orientation axis.
/// Input and output: batch x N x H x W x channels.
inline Tensor gconv_forward(const Tensor& features, const GroupConvLayer& layer) {
  if (features.rank() != 5 || features.dim(1) != layer.orientations() || features.dim(4) != layer.in_channels())
    throw ShapeError("gconv_forward: features " + shape_string(features.shape()) + " vs kernels " +
                     shape_string(layer.kernels.shape()));
  const std::size_t nb = features.dim(0), n = layer.orientations(), h = features.dim(2), w = features.dim(3),
                    ci = layer.in_channels(), co = layer.out_channels(), k = layer.kernel_size(),
                    st = layer.stride;
  const std::size_t ho = detail::conv_out_extent(h, k, st), wo = detail::conv_out_extent(w, k, st);
  const auto gk = detail::rotated_group_kernels(layer);
  Tensor out({nb, n, ho, wo, co});
  for (std::size_t b = 0; b < nb; ++b)
    for (std::size_t s = 0; s < n; ++s)
      for (std::size_t y = 0; y < ho; ++y)
        for (std::size_t x = 0; x < wo; ++x) {
          double* dst = out.raw() + (((b * n + s) * ho + y) * wo + x) * co;
          for (std::size_t o = 0; o < co; ++o) dst[o] = layer.bias[o];
          for (std::size_t t = 0; t < n; ++t)
            for (std::size_t ky = 0; ky < k; ++ky)
              for (std::size_t kx = 0; kx < k; ++kx) {
                const double* src = features.raw() + (((b * n + t) * h + y * st + ky) * w + x * st + kx) * ci;
                const double* ker = gk.data() + (((s * n + t) * k + ky) * k + kx) * ci * co;
                for (std::size_t i = 0; i < ci; ++i) {
                  const double v = src[i];
                  for (std::size_t o = 0; o < co; ++o) dst[o] += v * ker[i * co + o];
                }
              }
        }
  return out;
}

inline LayerGradients gconv_backward(const Tensor& features, const GroupConvLayer& layer, const Tensor& upstream) {
  const std::size_t nb = features.dim(0), n = layer.orientations(), h = features.dim(2), w = features.dim(3),
                    ci = layer.in_channels(), co = layer.out_channels(), k = layer.kernel_size(),
                    st = layer.stride;
  const std::size_t ho = detail::conv_out_extent(h, k, st), wo = detail::conv_out_extent(w, k, st);
  if (upstream.shape() != Shape{nb, n, ho, wo, co}) throw ShapeError("gconv_backward: upstream shape");
  const auto gk = detail::rotated_group_kernels(layer);
  std::vector<double> ggk(gk.size(), 0.0);
  LayerGradients g{Tensor(features.shape()), {Tensor(layer.kernels.shape()), Tensor(layer.bias.shape())}};
  for (std::size_t b = 0; b < nb; ++b)
    for (std::size_t s = 0; s < n; ++s)
      for (std::size_t y = 0; y < ho; ++y)
        for (std::size_t x = 0; x < wo; ++x) {
          const double* up = upstream.raw() + (((b * n + s) * ho + y) * wo + x) * co;
          for (std::size_t o = 0; o < co; ++o) g.params[1][o] += up[o];
          for (std::size_t t = 0; t < n; ++t)
            for (std::size_t ky = 0; ky < k; ++ky)
              for (std::size_t kx = 0; kx < k; ++kx) {
                const std::size_t in_off = (((b * n + t) * h + y * st + ky) * w + x * st + kx) * ci;
                const std::size_t k_off = (((s * n + t) * k + ky) * k + kx) * ci * co;
                for (std::size_t i = 0; i < ci; ++i) {
                  const double v = features[in_off + i];
                  double acc = 0.0;
                  const double* ker = gk.data() + k_off + i * co;
                  double* gker = ggk.data() + k_off + i * co;
                  for (std::size_t o = 0; o < co; ++o) {
                    acc += up[o] * ker[o];
                    gker[o] += v * up[o];
                  }
                  g.input[in_off + i] += acc;
                }
              }
        }
  const auto rots = detail::orientation_rotations(k, n);
  for (std::size_t s = 0; s < n; ++s)
    for (std::size_t t = 0; t < n; ++t) {
      const std::size_t src_orient = (t + n - s) % n;
      for (std::size_t tap = 0; tap < k * k; ++tap)
        for (const auto& e : rots[s].taps[tap])
          for (std::size_t i = 0; i < ci; ++i)
            for (std::size_t o = 0; o < co; ++o)
              g.params[0][(((o * ci + i) * n + src_orient) * k * k) + e.src] +=
                  e.weight * ggk[(((s * n + t) * k * k + tap) * ci + i) * co + o];
    }
  return g;
}

/// Max over the orientation axis of batch x N x H x W x C; argmax kept for backward.
inline MaxResult orientation_maxpool(const Tensor& features) {
  if (features.rank() != 5) throw ShapeError("orientation_maxpool expects rank-5 features");
  return max_axis(features, 1);
}

inline Tensor orientation_maxpool_backward(const Shape& input_shape, const MaxResult& pooled, const Tensor& upstream) {
  require_same_shape(upstream, pooled.values, "orientation_maxpool_backward");
  const std::size_t nb = input_shape[0], n = input_shape[1];
  const std::size_t inner = input_shape[2] * input_shape[3] * input_shape[4];
  Tensor g(input_shape);
  for (std::size_t b = 0; b < nb; ++b)
    for (std::size_t i = 0; i < inner; ++i) {
      const std::size_t idx = b * inner + i;
      g[(b * n + pooled.argmax[idx]) * inner + i] = upstream[idx];
    }
  return g;
}

inline Tensor relu(const Tensor& x) {
  Tensor out = x;
  for (double& v : out.data()) v = std::max(v, 0.0);
  return out;
}

inline Tensor relu_backward(const Tensor& x, const Tensor& upstream) {
  require_same_shape(x, upstream, "relu_backward");
  Tensor g(x.shape());
  for (std::size_t i = 0; i < x.size(); ++i) g[i] = x[i] > 0.0 ? upstream[i] : 0.0;
  return g;
}

/// Mean over height and width: batch x H x W x C -> batch x C.
inline Tensor global_avg_pool(const Tensor& x) {
  if (x.rank() != 4) throw ShapeError("global_avg_pool expects rank-4 features");
  const std::size_t nb = x.dim(0), hw = x.dim(1) * x.dim(2), ch = x.dim(3);
  Tensor out({nb, ch});
  for (std::size_t b = 0; b < nb; ++b)
    for (std::size_t p = 0; p < hw; ++p)
      for (std::size_t c = 0; c < ch; ++c) out[b * ch + c] += x[(b * hw + p) * ch + c];
  for (double& v : out.data()) v /= static_cast<double>(hw);
  return out;
}

inline Tensor global_avg_pool_backward(const Shape& input_shape, const Tensor& upstream) {
  const std::size_t nb = input_shape[0], hw = input_shape[1] * input_shape[2], ch = input_shape[3];
  if (upstream.shape() != Shape{nb, ch}) throw ShapeError("global_avg_pool_backward: upstream shape");
  Tensor g(input_shape);
  for (std::size_t b = 0; b < nb; ++b)
    for (std::size_t p = 0; p < hw; ++p)
      for (std::size_t c = 0; c < ch; ++c) g[(b * hw + p) * ch + c] = upstream[b * ch + c] / static_cast<double>(hw);
  return g;
}

// ---------------------------------------------------------------------------
// Feature normalization (batch norm without affine terms; the dense layer
// that follows supplies scale and offset)

inline constexpr double kNormEpsilon = 1e-5;

struct NormStats {
  Tensor mean;     // features
  Tensor inv_std;  // 1 / sqrt(var + kNormEpsilon), biased variance
};

/// Per-column statistics of a batch x features matrix.
inline NormStats feature_stats(const Tensor& x) {
  if (x.rank() != 2 || x.dim(0) == 0) throw ShapeError("feature_stats expects a non-empty batch x features matrix");
  const std::size_t nb = x.dim(0), d = x.dim(1);
  NormStats s{Tensor({d}), Tensor({d})};
  for (std::size_t j = 0; j < d; ++j) {
    double mean = 0.0, var = 0.0;
    for (std::size_t b = 0; b < nb; ++b) mean += x[b * d + j];
    mean /= static_cast<double>(nb);
    for (std::size_t b = 0; b < nb; ++b) var += (x[b * d + j] - mean) * (x[b * d + j] - mean);
    var /= static_cast<double>(nb);
    s.mean[j] = mean;
    s.inv_std[j] = 1.0 / std::sqrt(var + kNormEpsilon);
  }
  return s;
}

inline Tensor normalize_features(const Tensor& x, const NormStats& s) {
  if (x.rank() != 2 || x.dim(1) != s.mean.size())
    throw ShapeError("normalize_features: input " + shape_string(x.shape()) + " vs " +
                     std::to_string(s.mean.size()) + " statistics");
  const std::size_t d = s.mean.size();
  Tensor y(x.shape());
  for (std::size_t i = 0; i < x.size(); ++i) y[i] = (x[i] - s.mean[i % d]) * s.inv_std[i % d];
  return y;
}

/// Backward through normalization with statistics of the same batch;
/// `normalized` is the forward output.
inline Tensor normalize_features_backward(const Tensor& normalized, const NormStats& s, const Tensor& upstream) {
  require_same_shape(normalized, upstream, "normalize_features_backward");
  const std::size_t nb = normalized.dim(0), d = normalized.dim(1);
  Tensor g(normalized.shape());
  for (std::size_t j = 0; j < d; ++j) {
    double sum_g = 0.0, sum_gy = 0.0;
    for (std::size_t b = 0; b < nb; ++b) {
      sum_g += upstream[b * d + j];
      sum_gy += upstream[b * d + j] * normalized[b * d + j];
    }
    const double inv_n = 1.0 / static_cast<double>(nb);
    for (std::size_t b = 0; b < nb; ++b)
      g[b * d + j] = s.inv_std[j] * (upstream[b * d + j] - inv_n * sum_g - normalized[b * d + j] * inv_n * sum_gy);
  }
  return g;
}

/// Backward with fixed (population) statistics.
inline Tensor normalize_features_backward_fixed(const NormStats& s, const Tensor& upstream) {
  const std::size_t d = s.inv_std.size();
  Tensor g(upstream.shape());
  for (std::size_t i = 0; i < upstream.size(); ++i) g[i] = upstream[i] * s.inv_std[i % d];
  return g;
}

/// y = x W + b with W: in x out.
struct DenseLayer {
  Tensor weights;
  Tensor bias;

  static DenseLayer random(std::size_t in, std::size_t out, std::mt19937_64& rng) {
    DenseLayer d{Tensor({in, out}), Tensor({out})};
    std::normal_distribution<double> dist(0.0, std::sqrt(1.0 / static_cast<double>(in)));
    for (double& v : d.weights.data()) v = dist(rng);
    return d;
  }
};

inline Tensor dense_forward(const Tensor& x, const DenseLayer& layer) {
  if (x.rank() != 2 || x.dim(1) != layer.weights.dim(0))
    throw ShapeError("dense_forward: input " + shape_string(x.shape()) + " vs weights " +
                     shape_string(layer.weights.shape()));
  Tensor out = matmul(x, layer.weights);
  const std::size_t m = layer.bias.size();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] += layer.bias[i % m];
  return out;
}

inline LayerGradients dense_backward(const Tensor& x, const DenseLayer& layer, const Tensor& upstream) {
  const std::size_t nb = x.dim(0), in = layer.weights.dim(0), out = layer.weights.dim(1);
  if (upstream.shape() != Shape{nb, out}) throw ShapeError("dense_backward: upstream shape");
  LayerGradients g{Tensor({nb, in}), {Tensor({in, out}), Tensor({out})}};
  for (std::size_t b = 0; b < nb; ++b)
    for (std::size_t i = 0; i < in; ++i) {
      double acc = 0.0;
      const double xv = x[b * in + i];
      for (std::size_t o = 0; o < out; ++o) {
        acc += upstream[b * out + o] * layer.weights[i * out + o];
        g.params[0][i * out + o] += xv * upstream[b * out + o];
      }
      g.input[b * in + i] = acc;
    }
  for (std::size_t b = 0; b < nb; ++b)
    for (std::size_t o = 0; o < out; ++o) g.params[1][o] += upstream[b * out + o];
  return g;
}

struct SoftmaxXentResult {
  double loss = 0.0;   // mean over the batch
  Tensor grad_logits;  // d loss / d logits
};

inline SoftmaxXentResult softmax_xent(const Tensor& logits, std::span<const int> labels) {
  if (logits.rank() != 2 || logits.dim(0) != labels.size())
    throw ShapeError("softmax_xent: logits " + shape_string(logits.shape()) + " vs " +
                     std::to_string(labels.size()) + " labels");
  const std::size_t nb = logits.dim(0), nc = logits.dim(1);
  SoftmaxXentResult r{0.0, Tensor(logits.shape())};
  for (std::size_t b = 0; b < nb; ++b) {
    if (labels[b] < 0 || static_cast<std::size_t>(labels[b]) >= nc)
      throw ShapeError("softmax_xent: label " + std::to_string(labels[b]) + " out of range");
    const double* z = logits.raw() + b * nc;
    const double zmax = *std::max_element(z, z + nc);
    double denom = 0.0;
    for (std::size_t c = 0; c < nc; ++c) denom += std::exp(z[c] - zmax);
    const double log_denom = std::log(denom) + zmax;
    r.loss -= z[labels[b]] - log_denom;
    for (std::size_t c = 0; c < nc; ++c) {
      const double p = std::exp(z[c] - log_denom);
      r.grad_logits[b * nc + c] = (p - (static_cast<std::size_t>(labels[b]) == c ? 1.0 : 0.0)) / static_cast<double>(nb);
    }
  }
  r.loss /= static_cast<double>(nb);
  return r;
}

}  // namespace iil
