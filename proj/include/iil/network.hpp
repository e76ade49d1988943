#pragma once

#include <cstdint>
#include <random>
#include <span>
#include <string>
#include <vector>

#include "iil/backbone.hpp"
#include "iil/error.hpp"
#include "iil/ii_layer.hpp"
#include "iil/tensor.hpp"

namespace iil {

struct BackboneConfig {
  std::size_t in_channels = 1;
  int orientations = 8;
  std::size_t lift_channels = 6;
  std::vector<std::size_t> gconv_channels{8};
  std::size_t lift_kernel = 5;
  std::size_t gconv_kernel = 3;
};

/// Lifting layer followed by group convolutions, ReLU after each.
struct Backbone {
  LiftingConvLayer lift;
  std::vector<GroupConvLayer> gconvs;

  static Backbone random(const BackboneConfig& cfg, std::mt19937_64& rng) {
    Backbone b{LiftingConvLayer::random(cfg.in_channels, cfg.lift_channels, cfg.lift_kernel, cfg.orientations, rng), {}};
    std::size_t in = cfg.lift_channels;
    for (std::size_t out : cfg.gconv_channels) {
      b.gconvs.push_back(GroupConvLayer::random(in, out, cfg.gconv_kernel, cfg.orientations, rng));
      in = out;
    }
    return b;
  }

  [[nodiscard]] std::size_t out_channels() const {
    return gconvs.empty() ? lift.out_channels() : gconvs.back().out_channels();
  }
};

enum class HeadKind {
  Pooled,     // orientation max-pool -> spatial mean -> dense
  Invariant,  // orientation max-pool -> shift -> II layer -> dense
};

struct Model {
  Backbone backbone;
  HeadKind head = HeadKind::Pooled;
  IILayerState ii;  // used by the Invariant head
  DenseLayer dense;
  int num_classes = 0;

  /// Trainable tensors in a fixed order. For the Invariant head the exponents
  /// are exposed through `exponents` and written back by sync_exponents().
  Tensor exponents;

  /// The head input is normalized per feature before the dense layer. While
  /// training each batch uses its own statistics; evaluation uses these,
  /// computed over the whole training split (see refresh_head_stats).
  bool normalize_head = true;
  NormStats head_stats;

  [[nodiscard]] std::vector<Tensor*> parameters() {
    std::vector<Tensor*> p{&backbone.lift.kernels, &backbone.lift.bias};
    for (auto& g : backbone.gconvs) {
      p.push_back(&g.kernels);
      p.push_back(&g.bias);
    }
    if (head == HeadKind::Invariant) p.push_back(&exponents);
    p.push_back(&dense.weights);
    p.push_back(&dense.bias);
    return p;
  }

  [[nodiscard]] std::vector<std::string> parameter_names() const {
    std::vector<std::string> n{"lift.kernels", "lift.bias"};
    for (std::size_t i = 0; i < backbone.gconvs.size(); ++i) {
      n.push_back("gconv" + std::to_string(i) + ".kernels");
      n.push_back("gconv" + std::to_string(i) + ".bias");
    }
    if (head == HeadKind::Invariant) n.push_back("ii.exponents");
    n.push_back("dense.weights");
    n.push_back("dense.bias");
    return n;
  }

  void load_exponents_from_monomials() {
    std::vector<double> b;
    for (const auto& m : ii.monomials)
      for (const auto& f : m.factors) b.push_back(f.b);
    const std::size_t n = b.size();
    exponents = Tensor({n}, std::move(b));
  }

  void sync_exponents() {
    std::size_t k = 0;
    for (auto& m : ii.monomials)
      for (auto& f : m.factors) f.b = exponents[k++];
  }

  [[nodiscard]] std::size_t head_features() const {
    const std::size_t c = backbone.out_channels();
    return head == HeadKind::Pooled ? c : c * ii.monomials.size();
  }
};

/// Intermediate values kept by forward for the backward pass.
struct ForwardCache {
  std::vector<Tensor> layer_inputs;  // input of lift, then of each gconv
  std::vector<Tensor> pre_relu;      // output of each conv before ReLU
  Tensor last;                       // after the final ReLU (rank-5)
  MaxResult pooled;
  Tensor shifted;                    // Invariant head only
  Tensor head_raw;                   // batch x features, before normalization
  NormStats batch_stats;             // set when normalizing with batch statistics
  Tensor head_in;                    // dense input
  Tensor logits;
};

enum class Mode { Eval, Train };

inline Tensor backbone_forward(const Backbone& bb, const Tensor& images, ForwardCache* cache = nullptr) {
  Tensor x = images;
  Tensor a = lift_forward(x, bb.lift);
  if (cache) {
    cache->layer_inputs.push_back(x);
    cache->pre_relu.push_back(a);
  }
  x = relu(a);
  for (const auto& g : bb.gconvs) {
    a = gconv_forward(x, g);
    if (cache) {
      cache->layer_inputs.push_back(x);
      cache->pre_relu.push_back(a);
    }
    x = relu(a);
  }
  return x;
}

/// Orientation-pooled planar features of the backbone: batch x H x W x C.
inline Tensor backbone_features(const Backbone& bb, const Tensor& images) {
  return orientation_maxpool(backbone_forward(bb, images)).values;
}

/// batch x C x M -> batch x (C * M), channel-major.
inline Tensor flatten_ii(const Tensor& ii_out) {
  return ii_out.reshaped({ii_out.dim(0), ii_out.dim(1) * ii_out.dim(2)});
}

/// Head features before normalization: batch x features.
inline Tensor head_raw_features(Model& model, ForwardCache& c, const Tensor& images) {
  c.last = backbone_forward(model.backbone, images, &c);
  c.pooled = orientation_maxpool(c.last);
  if (model.head == HeadKind::Pooled) return global_avg_pool(c.pooled.values);
  model.sync_exponents();
  c.shifted = apply_shift(c.pooled.values, model.ii.shift);
  return flatten_ii(ii_forward(c.shifted, model.ii));
}

inline Tensor model_forward(Model& model, const Tensor& images, ForwardCache* cache = nullptr, Mode mode = Mode::Eval) {
  ForwardCache local;
  ForwardCache& c = cache ? *cache : local;
  c = ForwardCache{};
  c.head_raw = head_raw_features(model, c, images);
  if (!model.normalize_head) {
    c.head_in = c.head_raw;
  } else if (mode == Mode::Train) {
    c.batch_stats = feature_stats(c.head_raw);
    c.head_in = normalize_features(c.head_raw, c.batch_stats);
  } else {
    if (model.head_stats.mean.empty()) throw ShapeError("model_forward: head statistics not computed");
    c.head_in = normalize_features(c.head_raw, model.head_stats);
  }
  c.logits = dense_forward(c.head_in, model.dense);
  return c.logits;
}

/// Recomputes the evaluation statistics of the head normalization over `images`.
inline void refresh_head_stats(Model& model, const Tensor& images, std::size_t batch = 64) {
  if (!model.normalize_head) return;
  const std::size_t nb = images.dim(0), per = images.size() / std::max<std::size_t>(nb, 1);
  Tensor all;
  for (std::size_t start = 0; start < nb; start += batch) {
    const std::size_t len = std::min(batch, nb - start);
    Shape shape = images.shape();
    shape[0] = len;
    const Tensor chunk(shape, std::vector<double>(images.raw() + start * per, images.raw() + (start + len) * per));
    ForwardCache c;
    const Tensor raw = head_raw_features(model, c, chunk);
    if (all.empty()) all = Tensor({nb, raw.dim(1)});
    std::copy_n(raw.raw(), raw.size(), all.raw() + start * raw.dim(1));
  }
  model.head_stats = feature_stats(all);
}

/// Gradients for every entry of model.parameters(), in the same order.
inline std::vector<Tensor> model_backward(Model& model, const ForwardCache& c, const Tensor& grad_logits) {
  LayerGradients gd = dense_backward(c.head_in, model.dense, grad_logits);
  if (model.normalize_head) {
    gd.input = c.batch_stats.mean.empty() ? normalize_features_backward_fixed(model.head_stats, gd.input)
                                          : normalize_features_backward(c.head_in, c.batch_stats, gd.input);
  }
  Tensor g_pooled;
  Tensor g_exponents;
  if (model.head == HeadKind::Pooled) {
    g_pooled = global_avg_pool_backward(c.pooled.values.shape(), gd.input);
  } else {
    const std::size_t nb = c.shifted.dim(0), ch = c.shifted.dim(3), nm = model.ii.monomials.size();
    const IIGradients gi = ii_backward(c.shifted, model.ii, gd.input.reshaped({nb, ch, nm}));
    g_pooled = apply_shift_grad(gi.features, c.pooled.values, model.ii.shift);
    std::vector<double> flat;
    for (const auto& v : gi.exponents) flat.insert(flat.end(), v.begin(), v.end());
    const std::size_t n = flat.size();
    g_exponents = Tensor({n}, std::move(flat));
  }
  Tensor g = orientation_maxpool_backward(c.last.shape(), c.pooled, g_pooled);

  const auto& bb = model.backbone;
  std::vector<Tensor> conv_grads;  // reversed order: last gconv first
  for (std::size_t li = bb.gconvs.size(); li-- > 0;) {
    g = relu_backward(c.pre_relu[li + 1], g);
    LayerGradients lg = gconv_backward(c.layer_inputs[li + 1], bb.gconvs[li], g);
    conv_grads.push_back(std::move(lg.params[1]));
    conv_grads.push_back(std::move(lg.params[0]));
    g = std::move(lg.input);
  }
  g = relu_backward(c.pre_relu[0], g);
  LayerGradients ll = lift_backward(c.layer_inputs[0], bb.lift, g);

  std::vector<Tensor> out{std::move(ll.params[0]), std::move(ll.params[1])};
  for (std::size_t i = conv_grads.size(); i > 0; i -= 2) {
    out.push_back(std::move(conv_grads[i - 1]));
    out.push_back(std::move(conv_grads[i - 2]));
  }
  if (model.head == HeadKind::Invariant) out.push_back(std::move(g_exponents));
  out.push_back(gd.params[0]);
  out.push_back(gd.params[1]);
  return out;
}

/// Plain SGD with momentum: v <- mu v - lr g; p <- p + v.
class SgdMomentum {
 public:
  SgdMomentum(double lr, double momentum) : lr_(lr), momentum_(momentum) {}

  /// Per-parameter multipliers on the learning rate (default 1).
  void set_scales(std::vector<double> scales) { scales_ = std::move(scales); }

  void step(std::span<Tensor* const> params, std::span<const Tensor> grads) {
    if (params.size() != grads.size()) throw ShapeError("optimizer: parameter/gradient count mismatch");
    if (velocity_.size() != params.size()) {
      velocity_.clear();
      for (const Tensor* p : params) velocity_.emplace_back(p->shape());
    }
    for (std::size_t i = 0; i < params.size(); ++i) {
      require_same_shape(*params[i], grads[i], "optimizer step");
      const double lr = lr_ * (i < scales_.size() ? scales_[i] : 1.0);
      Tensor& v = velocity_[i];
      for (std::size_t j = 0; j < v.size(); ++j) {
        v[j] = momentum_ * v[j] - lr * grads[i][j];
        (*params[i])[j] += v[j];
      }
    }
  }

 private:
  double lr_;
  double momentum_;
  std::vector<double> scales_;
  std::vector<Tensor> velocity_;
};

}  // namespace iil
