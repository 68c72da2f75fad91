#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <fstream>
#include <numeric>
#include <string>
#include <utility>
#include <vector>

#include "json.hpp"
#include "rmi/autodiff.hpp"
#include "rmi/errors.hpp"
#include "rmi/io.hpp"
#include "rmi/rng.hpp"
#include "rmi/tensor.hpp"

namespace rmi {

struct TrainConfig {
  double lr = 0.2;
  int max_iter = 1500;
  int slow_iters = 150;
  double power = 0.9;
  int batch = 2;
  double lambda = 0.5;
  int df = 2;
  int region_side = 3;
  PoolMode pool_mode = PoolMode::kAverage;
  double xi = 1e-6;
  std::uint64_t seed = 1;

  void validate() const {
    if (slow_iters >= max_iter) throw Error("config: slow_iters >= max_iter");
    if (!(power > 0.0)) throw Error("config: power must be > 0");
    if (!(lambda >= 0.0 && lambda <= 1.0)) {
      throw Error("config: lambda must lie in [0, 1]");
    }
    if (batch < 1) throw Error("config: batch must be >= 1");
    if (!(xi > 0.0)) throw Error("config: xi must be > 0");
  }

  LossParams loss_params() const {
    LossParams p;
    p.pool = DownsampleConfig{df, pool_mode};
    p.region_side = region_side;
    p.xi = xi;
    p.lambda = lambda;
    return p;
  }
};

/// Linear warmup over slow_iters, then poly decay:
///   lr * iter / slow_iters                                    (iter <= slow)
///   lr * (1 - (iter - slow) / (max_iter - slow))^power        (after)
/// Continuous at iter == slow_iters.
inline double lr_at(int step, const TrainConfig& cfg) {
  if (cfg.slow_iters > 0 && step <= cfg.slow_iters) {
    return cfg.lr * static_cast<double>(step) /
           static_cast<double>(cfg.slow_iters);
  }
  const double progress = static_cast<double>(step - cfg.slow_iters) /
                          static_cast<double>(cfg.max_iter - cfg.slow_iters);
  return cfg.lr * std::pow(1.0 - progress, cfg.power);
}

inline constexpr int kShapeClasses = 4;  // background, disk, rectangle, triangle

/// Synthetic grayscale segmentation set: noisy geometric shapes with
/// exact rasterized labels. Deterministic per seed.
struct ShapesDataset {
  DenseTensor images;  // count x 1 x H x W
  DenseTensor labels;  // count x H x W
  std::vector<std::size_t> train, val, test;
  std::uint64_t seed = 0;

  std::size_t count() const { return images.dim(0); }
  std::size_t height() const { return images.dim(2); }
  std::size_t width() const { return images.dim(3); }
};

namespace detail {

struct ShapeBox {
  int x0, y0, x1, y1;
  bool overlaps(const ShapeBox& o) const {
    return x0 < o.x1 && o.x0 < x1 && y0 < o.y1 && o.y0 < y1;
  }
};

inline void raster_shapes(SplitMix64& rng, std::size_t h, std::size_t w,
                          double* image, double* label, double noise_sigma) {
  const double bg = 0.15;
  for (std::size_t i = 0; i < h * w; ++i) {
    image[i] = bg;
    label[i] = 0.0;
  }
  const int n_shapes = 1 + static_cast<int>(rng.next_below(3));
  std::vector<ShapeBox> placed;
  const int lo = static_cast<int>(h) / 10, hi = static_cast<int>(h) / 5;
  for (int s = 0; s < n_shapes; ++s) {
    const int cls = 1 + static_cast<int>(rng.next_below(3));
    const int half = lo + static_cast<int>(rng.next_below(
                              static_cast<std::uint64_t>(hi - lo + 1)));
    ShapeBox box{};
    bool ok = false;
    for (int attempt = 0; attempt < 20 && !ok; ++attempt) {
      const int cx = half + 1 +
                     static_cast<int>(rng.next_below(
                         static_cast<std::uint64_t>(w - 2 * (half + 1))));
      const int cy = half + 1 +
                     static_cast<int>(rng.next_below(
                         static_cast<std::uint64_t>(h - 2 * (half + 1))));
      box = ShapeBox{cx - half - 1, cy - half - 1, cx + half + 1,
                     cy + half + 1};
      ok = std::none_of(placed.begin(), placed.end(),
                        [&](const ShapeBox& o) { return box.overlaps(o); });
      if (ok) {
        placed.push_back(box);
        const double base[] = {0.0, 0.45, 0.65, 0.85};
        const double intensity = base[cls] + rng.uniform(-0.1, 0.1);
        for (int y = std::max(box.y0, 0);
             y < std::min(box.y1, static_cast<int>(h)); ++y) {
          for (int x = std::max(box.x0, 0);
               x < std::min(box.x1, static_cast<int>(w)); ++x) {
            const double dx = x - cx, dy = y - cy;
            bool inside = false;
            switch (cls) {
              case 1:  // disk
                inside = dx * dx + dy * dy <= half * half;
                break;
              case 2:  // axis-aligned rectangle
                inside = std::abs(dx) <= half && std::abs(dy) <= 0.7 * half;
                break;
              case 3:  // isoceles triangle, apex up
                inside = dy >= -half && dy <= half &&
                         std::abs(dx) <= (dy + half) * 0.5;
                break;
            }
            if (inside) {
              image[y * w + x] = intensity;
              label[y * w + x] = cls;
            }
          }
        }
      }
    }
  }
  if (noise_sigma > 0.0) {
    for (std::size_t i = 0; i < h * w; ++i) {
      image[i] += noise_sigma * rng.normal();
    }
  }
}

}  // namespace detail

inline ShapesDataset generate_shapes(std::size_t count, std::size_t h,
                                     std::size_t w, std::uint64_t seed,
                                     double noise_sigma = 0.1) {
  if (h < 32 || w < 32) throw Error("generate_shapes: H, W must be >= 32");
  ShapesDataset ds;
  ds.seed = seed;
  for (std::uint64_t retry = 0;; ++retry) {
    ds.images = DenseTensor({count, 1, h, w});
    ds.labels = DenseTensor({count, h, w});
    SplitMix64 root(seed ^ (retry * 0x9e3779b97f4a7c15ULL));
    std::vector<int> images_with_class(kShapeClasses, 0);
    for (std::size_t i = 0; i < count; ++i) {
      SplitMix64 rng = root.split(i);
      detail::raster_shapes(rng, h, w, ds.images.data() + i * h * w,
                            ds.labels.data() + i * h * w, noise_sigma);
      std::vector<bool> seen(kShapeClasses, false);
      for (std::size_t px = 0; px < h * w; ++px) {
        seen[static_cast<int>(ds.labels[i * h * w + px])] = true;
      }
      for (int cls = 0; cls < kShapeClasses; ++cls) {
        images_with_class[cls] += seen[cls];
      }
    }
    const int required = count >= 100 ? 10 : 1;
    const bool covered =
        std::all_of(images_with_class.begin(), images_with_class.end(),
                    [&](int v) { return v >= required; });
    if (covered || retry >= 10) break;
  }
  const std::size_t n_train = count * 4 / 5;
  for (std::size_t i = 0; i < count; ++i) {
    (i < n_train ? ds.train : ds.test).push_back(i);
  }
  return ds;
}

/// Tiny fully convolutional model: three 3x3 same-padding conv layers
/// (16 and 32 hidden channels), relu between, logits at input
/// resolution. Forward and backward are hand written.
class ConvNet {
 public:
  struct Layer {
    std::size_t in_ch, out_ch;
    std::vector<double> w;   // out_ch x in_ch x 3 x 3
    std::vector<double> b;   // out_ch
    std::vector<double> gw, gb;
  };

  ConvNet() = default;

  ConvNet(int num_classes, std::uint64_t seed) {
    SplitMix64 rng(seed);
    layers_.push_back(make_layer(1, 16, rng));
    layers_.push_back(make_layer(16, 32, rng));
    layers_.push_back(make_layer(32, static_cast<std::size_t>(num_classes),
                                 rng));
  }

  std::vector<Layer>& layers() { return layers_; }
  const std::vector<Layer>& layers() const { return layers_; }
  std::size_t num_classes() const { return layers_.back().out_ch; }

  /// Forward for one image (1 x H x W). Keeps activations for backward.
  DenseTensor forward(const double* image, std::size_t h, std::size_t w) {
    h_ = h;
    w_ = w;
    acts_.assign(layers_.size() + 1, {});
    acts_[0].assign(image, image + h * w);
    for (std::size_t li = 0; li < layers_.size(); ++li) {
      std::vector<double> out;
      conv_forward(layers_[li], acts_[li], out);
      if (li + 1 < layers_.size()) relu_inplace(out);
      acts_[li + 1] = out;
    }
    const std::size_t c = layers_.back().out_ch;
    return DenseTensor::from_data({c, h, w}, acts_.back());
  }

  /// Hands over the activation stack of the last forward() so a batch
  /// can interleave forwards without recomputing them for backward.
  std::vector<std::vector<double>> take_activations() {
    return std::move(acts_);
  }

  void restore_activations(std::vector<std::vector<double>> acts,
                           std::size_t h, std::size_t w) {
    acts_ = std::move(acts);
    h_ = h;
    w_ = w;
  }

  /// Accumulates weight gradients from dLoss/dlogits of the image last
  /// passed through forward().
  void backward(const double* dlogits) {
    const std::size_t c = layers_.back().out_ch;
    std::vector<double> grad(dlogits, dlogits + c * h_ * w_);
    for (std::size_t li = layers_.size(); li-- > 0;) {
      if (li + 1 < layers_.size()) {
        // relu mask from the stored post-activation values
        const std::vector<double>& a = acts_[li + 1];
        for (std::size_t i = 0; i < grad.size(); ++i) {
          if (a[i] <= 0.0) grad[i] = 0.0;
        }
      }
      std::vector<double> din;
      conv_backward(layers_[li], acts_[li], grad, li > 0 ? &din : nullptr);
      grad = std::move(din);
    }
  }

  void zero_grad() {
    for (Layer& l : layers_) {
      std::fill(l.gw.begin(), l.gw.end(), 0.0);
      std::fill(l.gb.begin(), l.gb.end(), 0.0);
    }
  }

  void sgd_step(double lr) {
    for (Layer& l : layers_) {
      for (std::size_t i = 0; i < l.w.size(); ++i) l.w[i] -= lr * l.gw[i];
      for (std::size_t i = 0; i < l.b.size(); ++i) l.b[i] -= lr * l.gb[i];
    }
  }

 private:
  static Layer make_layer(std::size_t in_ch, std::size_t out_ch,
                          SplitMix64& rng) {
    Layer l;
    l.in_ch = in_ch;
    l.out_ch = out_ch;
    l.w.resize(out_ch * in_ch * 9);
    l.b.assign(out_ch, 0.0);
    const double std = std::sqrt(2.0 / static_cast<double>(in_ch * 9));
    for (double& v : l.w) v = std * rng.normal();
    l.gw.assign(l.w.size(), 0.0);
    l.gb.assign(l.b.size(), 0.0);
    return l;
  }

  void pad_plane(const double* src, double* dst) const {
    const std::size_t pw = w_ + 2;
    std::fill(dst, dst + (h_ + 2) * pw, 0.0);
    for (std::size_t y = 0; y < h_; ++y) {
      std::copy(src + y * w_, src + (y + 1) * w_, dst + (y + 1) * pw + 1);
    }
  }

  void conv_forward(const Layer& l, const std::vector<double>& in,
                    std::vector<double>& out) const {
    const std::size_t pw = w_ + 2;
    std::vector<double> pad(l.in_ch * (h_ + 2) * pw);
    for (std::size_t ci = 0; ci < l.in_ch; ++ci) {
      pad_plane(in.data() + ci * h_ * w_, pad.data() + ci * (h_ + 2) * pw);
    }
    out.assign(l.out_ch * h_ * w_, 0.0);
    for (std::size_t co = 0; co < l.out_ch; ++co) {
      double* oplane = out.data() + co * h_ * w_;
      const double bias = l.b[co];
      for (std::size_t i = 0; i < h_ * w_; ++i) oplane[i] = bias;
      for (std::size_t ci = 0; ci < l.in_ch; ++ci) {
        const double* pplane = pad.data() + ci * (h_ + 2) * pw;
        for (std::size_t ky = 0; ky < 3; ++ky) {
          for (std::size_t kx = 0; kx < 3; ++kx) {
            const double wv = l.w[((co * l.in_ch + ci) * 3 + ky) * 3 + kx];
            for (std::size_t y = 0; y < h_; ++y) {
              const double* __restrict srow = pplane + (y + ky) * pw + kx;
              double* __restrict drow = oplane + y * w_;
              for (std::size_t x = 0; x < w_; ++x) drow[x] += wv * srow[x];
            }
          }
        }
      }
    }
  }

  void conv_backward(Layer& l, const std::vector<double>& in,
                     const std::vector<double>& dout,
                     std::vector<double>* din) {
    const std::size_t pw = w_ + 2;
    std::vector<double> pad_in(l.in_ch * (h_ + 2) * pw);
    for (std::size_t ci = 0; ci < l.in_ch; ++ci) {
      pad_plane(in.data() + ci * h_ * w_,
                pad_in.data() + ci * (h_ + 2) * pw);
    }
    for (std::size_t co = 0; co < l.out_ch; ++co) {
      const double* gplane = dout.data() + co * h_ * w_;
      double gb = 0.0;
      for (std::size_t i = 0; i < h_ * w_; ++i) gb += gplane[i];
      l.gb[co] += gb;
      for (std::size_t ci = 0; ci < l.in_ch; ++ci) {
        const double* pplane = pad_in.data() + ci * (h_ + 2) * pw;
        for (std::size_t ky = 0; ky < 3; ++ky) {
          for (std::size_t kx = 0; kx < 3; ++kx) {
            double s = 0.0;
            for (std::size_t y = 0; y < h_; ++y) {
              const double* __restrict srow = pplane + (y + ky) * pw + kx;
              const double* __restrict grow = gplane + y * w_;
              // plain FP reductions are not auto-vectorized; allow it here
#pragma omp simd reduction(+ : s)
              for (std::size_t x = 0; x < w_; ++x) s += grow[x] * srow[x];
            }
            l.gw[((co * l.in_ch + ci) * 3 + ky) * 3 + kx] += s;
          }
        }
      }
    }
    if (!din) return;
    std::vector<double> pad_g(l.out_ch * (h_ + 2) * pw);
    for (std::size_t co = 0; co < l.out_ch; ++co) {
      pad_plane(dout.data() + co * h_ * w_,
                pad_g.data() + co * (h_ + 2) * pw);
    }
    din->assign(l.in_ch * h_ * w_, 0.0);
    for (std::size_t ci = 0; ci < l.in_ch; ++ci) {
      double* dplane = din->data() + ci * h_ * w_;
      for (std::size_t co = 0; co < l.out_ch; ++co) {
        const double* gplane = pad_g.data() + co * (h_ + 2) * pw;
        for (std::size_t ky = 0; ky < 3; ++ky) {
          for (std::size_t kx = 0; kx < 3; ++kx) {
            const double wv = l.w[((co * l.in_ch + ci) * 3 + ky) * 3 + kx];
            for (std::size_t y = 0; y < h_; ++y) {
              const double* __restrict srow = gplane + (y + 2 - ky) * pw + (2 - kx);
              double* __restrict drow = dplane + y * w_;
              for (std::size_t x = 0; x < w_; ++x) drow[x] += wv * srow[x];
            }
          }
        }
      }
    }
  }

  static void relu_inplace(std::vector<double>& v) {
    for (double& x : v) x = std::max(0.0, x);
  }

  std::vector<Layer> layers_;
  std::size_t h_ = 0, w_ = 0;
  std::vector<std::vector<double>> acts_;
};

struct HistoryRow {
  int step = 0;
  double lr = 0.0, bce = 0.0, rmi = 0.0, total = 0.0;
};

struct TrainResult {
  ConvNet model;
  std::vector<HistoryRow> history;
};

/// Plain SGD over shuffled epochs with random left-right flips.
/// Deterministic per (seed, config); per-image gradients are reduced in
/// batch order.
inline TrainResult train(const ShapesDataset& ds, const TrainConfig& cfg) {
  cfg.validate();
  const std::size_t h = ds.height(), w = ds.width();
  const std::size_t bsz = static_cast<std::size_t>(cfg.batch);
  TrainResult res;
  res.model = ConvNet(kShapeClasses, cfg.seed);
  SplitMix64 shuffle_rng(cfg.seed ^ 0xa5a5a5a5a5a5a5a5ULL);
  SplitMix64 flip_rng(cfg.seed ^ 0x5a5a5a5a5a5a5a5aULL);
  const LossParams params = cfg.loss_params();

  std::vector<std::size_t> order = ds.train;
  std::size_t cursor = order.size();  // forces an initial shuffle
  DenseTensor batch_images({bsz, 1, h, w});
  DenseTensor batch_labels({bsz, h, w});

  for (int step = 0; step < cfg.max_iter; ++step) {
    for (std::size_t k = 0; k < bsz; ++k) {
      if (cursor >= order.size()) {
        // Fisher-Yates from the seeded stream, fresh each epoch.
        for (std::size_t i = order.size(); i-- > 1;) {
          std::swap(order[i], order[shuffle_rng.next_below(i + 1)]);
        }
        cursor = 0;
      }
      const std::size_t idx = order[cursor++];
      const bool flip = flip_rng.uniform() < 0.5;
      const double* img = ds.images.data() + idx * h * w;
      const double* lbl = ds.labels.data() + idx * h * w;
      for (std::size_t y = 0; y < h; ++y) {
        for (std::size_t x = 0; x < w; ++x) {
          const std::size_t sx = flip ? (w - 1 - x) : x;
          batch_images(k, std::size_t{0}, y, x) = img[y * w + sx];
          batch_labels(k, y, x) = lbl[y * w + sx];
        }
      }
    }

    DenseTensor logits({bsz, res.model.num_classes(), h, w});
    const std::size_t plane = res.model.num_classes() * h * w;
    std::vector<std::vector<std::vector<double>>> saved(bsz);
    for (std::size_t k = 0; k < bsz; ++k) {
      DenseTensor lk =
          res.model.forward(batch_images.data() + k * h * w, h, w);
      std::copy(lk.data(), lk.data() + plane, logits.data() + k * plane);
      saved[k] = res.model.take_activations();
    }

    // The two terms are differentiated separately so the RMI gradient
    // can be norm-clipped: the log-determinant has unbounded curvature
    // near the xi floor and would otherwise drown the BCE signal at
    // this model scale. The recorded losses are the plain mixture.
    LossParams rmi_only = params;
    rmi_only.lambda = 0.0;
    ForwardResult fwd = forward_with_tape(batch_labels, kShapeClasses,
                                          std::nullopt, logits, rmi_only);
    const double total = cfg.lambda * fwd.report.bce +
                         (1.0 - cfg.lambda) * fwd.report.rmi;
    if (!std::isfinite(total)) {
      throw DivergenceDetected("train: loss diverged at step " +
                               std::to_string(step));
    }
    DenseTensor grad_rmi = backward(fwd.tape);

    // Analytic BCE gradient: (p - t) / count per non-ignored entry.
    DenseTensor grad_bce(logits.shape());
    const double inv_count = 1.0 / static_cast<double>(bsz * h * w *
                                                       kShapeClasses);
    double bce_n2 = 0.0, rmi_n2 = 0.0;
    for (std::size_t k = 0; k < bsz; ++k) {
      for (std::size_t px = 0; px < h * w; ++px) {
        const int lbl = static_cast<int>(batch_labels[k * h * w + px]);
        for (int cls = 0; cls < kShapeClasses; ++cls) {
          const std::size_t at = (k * kShapeClasses + cls) * h * w + px;
          const double p = 1.0 / (1.0 + std::exp(-logits[at]));
          grad_bce[at] = (p - (cls == lbl ? 1.0 : 0.0)) * inv_count;
          bce_n2 += grad_bce[at] * grad_bce[at];
          rmi_n2 += grad_rmi[at] * grad_rmi[at];
        }
      }
    }
    // Step normalization: lr always applies at full strength to the
    // BCE component, with the clipped RMI gradient mixed in at relative
    // weight (1 - lambda) / lambda. This is the loss-true descent
    // direction rescaled by 1 / lambda, so the calibration step size
    // does not shrink as the auxiliary weight grows.
    const double clip =
        rmi_n2 > bce_n2 ? std::sqrt(bce_n2 / rmi_n2) : 1.0;
    DenseTensor dlogits(logits.shape());
    if (cfg.lambda > 0.0) {
      const double ratio = (1.0 - cfg.lambda) / cfg.lambda;
      for (std::size_t i = 0; i < dlogits.size(); ++i) {
        dlogits[i] = grad_bce[i] + ratio * clip * grad_rmi[i];
      }
    } else {
      dlogits = grad_rmi;  // pure RMI objective, unclipped
    }

    res.model.zero_grad();
    for (std::size_t k = 0; k < bsz; ++k) {
      res.model.restore_activations(std::move(saved[k]), h, w);
      res.model.backward(dlogits.data() + k * plane);
    }
    const double lr = lr_at(step, cfg);
    res.model.sgd_step(lr);
    res.history.push_back(
        {step, lr, fwd.report.bce, fwd.report.rmi, total});
  }
  return res;
}

struct EvalReport {
  std::vector<double> per_class_iou;
  double miou = 0.0;
  double pixel_acc = 0.0;
  double boundary_f = 0.0;  // mean boundary F-score, 2 px tolerance
};

namespace detail {

inline std::vector<char> boundary_mask(const std::vector<int>& lbl,
                                       std::size_t h, std::size_t w,
                                       int cls) {
  // A pixel of class cls is boundary when any 4-neighbour (or the image
  // border) has a different class.
  std::vector<char> m(h * w, 0);
  for (std::size_t y = 0; y < h; ++y) {
    for (std::size_t x = 0; x < w; ++x) {
      if (lbl[y * w + x] != cls) continue;
      bool edge = y == 0 || y + 1 == h || x == 0 || x + 1 == w;
      if (!edge) {
        edge = lbl[(y - 1) * w + x] != cls || lbl[(y + 1) * w + x] != cls ||
               lbl[y * w + x - 1] != cls || lbl[y * w + x + 1] != cls;
      }
      m[y * w + x] = edge;
    }
  }
  return m;
}

inline std::vector<char> dilate2(const std::vector<char>& m, std::size_t h,
                                 std::size_t w) {
  std::vector<char> out(h * w, 0);
  for (std::size_t y = 0; y < h; ++y) {
    for (std::size_t x = 0; x < w; ++x) {
      if (!m[y * w + x]) continue;
      for (int dy = -2; dy <= 2; ++dy) {
        for (int dx = -2; dx <= 2; ++dx) {
          if (dy * dy + dx * dx > 4) continue;
          const int ny = static_cast<int>(y) + dy;
          const int nx = static_cast<int>(x) + dx;
          if (ny >= 0 && ny < static_cast<int>(h) && nx >= 0 &&
              nx < static_cast<int>(w)) {
            out[ny * w + nx] = 1;
          }
        }
      }
    }
  }
  return out;
}

}  // namespace detail

/// Metric core over per-image predicted and ground-truth label maps.
/// IoU and pixel accuracy aggregate counts over the whole split.
inline EvalReport evaluate_maps(const std::vector<std::vector<int>>& preds,
                                const std::vector<std::vector<int>>& gts,
                                std::size_t h, std::size_t w, int c) {
  std::vector<std::int64_t> tp(c, 0), fp(c, 0), fn(c, 0);
  std::int64_t correct = 0, total = 0;
  // Boundary precision/recall counts, aggregated over the split.
  std::vector<std::int64_t> b_pred(c, 0), b_pred_hit(c, 0);
  std::vector<std::int64_t> b_gt(c, 0), b_gt_hit(c, 0);

  for (std::size_t im = 0; im < preds.size(); ++im) {
    const std::vector<int>& pred = preds[im];
    const std::vector<int>& gt = gts[im];
    for (std::size_t px = 0; px < h * w; ++px) {
      tp[gt[px]] += pred[px] == gt[px];
      fp[pred[px]] += pred[px] != gt[px];
      fn[gt[px]] += pred[px] != gt[px];
      correct += pred[px] == gt[px];
      ++total;
    }
    for (int cls = 0; cls < c; ++cls) {
      const std::vector<char> pb = detail::boundary_mask(pred, h, w, cls);
      const std::vector<char> gb = detail::boundary_mask(gt, h, w, cls);
      const std::vector<char> pb_wide = detail::dilate2(pb, h, w);
      const std::vector<char> gb_wide = detail::dilate2(gb, h, w);
      for (std::size_t px = 0; px < h * w; ++px) {
        b_pred[cls] += pb[px];
        b_pred_hit[cls] += pb[px] && gb_wide[px];
        b_gt[cls] += gb[px];
        b_gt_hit[cls] += gb[px] && pb_wide[px];
      }
    }
  }

  EvalReport rep;
  rep.per_class_iou.assign(c, 0.0);
  double iou_sum = 0.0, f_sum = 0.0;
  int present = 0, f_present = 0;
  for (int cls = 0; cls < c; ++cls) {
    const std::int64_t denom = tp[cls] + fp[cls] + fn[cls];
    rep.per_class_iou[cls] =
        denom ? static_cast<double>(tp[cls]) / static_cast<double>(denom)
              : 0.0;
    if (tp[cls] + fn[cls] > 0) {
      iou_sum += rep.per_class_iou[cls];
      ++present;
    }
    if (b_gt[cls] > 0) {
      const double prec =
          b_pred[cls] ? static_cast<double>(b_pred_hit[cls]) /
                            static_cast<double>(b_pred[cls])
                      : 0.0;
      const double rec = static_cast<double>(b_gt_hit[cls]) /
                         static_cast<double>(b_gt[cls]);
      f_sum += (prec + rec > 0.0) ? 2.0 * prec * rec / (prec + rec) : 0.0;
      ++f_present;
    }
  }
  rep.miou = present ? iou_sum / present : 0.0;
  rep.boundary_f = f_present ? f_sum / f_present : 0.0;
  rep.pixel_acc = total ? static_cast<double>(correct) / total : 0.0;
  return rep;
}

/// Whole-split evaluation. Prediction is the argmax over per-channel
/// sigmoid scores; ties break to the lowest class index.
inline EvalReport evaluate(ConvNet& model, const ShapesDataset& ds,
                           const std::vector<std::size_t>& split) {
  const std::size_t h = ds.height(), w = ds.width();
  const int c = static_cast<int>(model.num_classes());
  std::vector<std::vector<int>> preds, gts;
  for (std::size_t idx : split) {
    DenseTensor logits = model.forward(ds.images.data() + idx * h * w, h, w);
    std::vector<int> pred(h * w), gt(h * w);
    for (std::size_t px = 0; px < h * w; ++px) {
      int best = 0;
      for (int cls = 1; cls < c; ++cls) {
        if (logits[cls * h * w + px] > logits[best * h * w + px]) best = cls;
      }
      pred[px] = best;
      gt[px] = static_cast<int>(ds.labels[idx * h * w + px]);
    }
    preds.push_back(std::move(pred));
    gts.push_back(std::move(gt));
  }
  return evaluate_maps(preds, gts, h, w, c);
}

// Checkpoint: u64 LE manifest length, JSON manifest (layer names,
// shapes, config echo), then one RMT1 blob per listed tensor.

inline void save_checkpoint(const std::string& path, const ConvNet& model,
                            const nlohmann::json& config_echo) {
  nlohmann::json manifest;
  manifest["config"] = config_echo;
  manifest["layers"] = nlohmann::json::array();
  for (std::size_t li = 0; li < model.layers().size(); ++li) {
    const ConvNet::Layer& l = model.layers()[li];
    manifest["layers"].push_back(
        {{"name", "conv" + std::to_string(li + 1)},
         {"weight_shape", {l.out_ch, l.in_ch, 3, 3}},
         {"bias_shape", {l.out_ch}}});
  }
  std::ofstream os(path, std::ios::binary);
  if (!os) throw IoError("checkpoint: cannot open for writing: " + path);
  const std::string m = manifest.dump();
  const std::uint64_t len = m.size();
  os.write(reinterpret_cast<const char*>(&len), 8);
  os.write(m.data(), static_cast<std::streamsize>(m.size()));
  for (const ConvNet::Layer& l : model.layers()) {
    write_rmt1(os, DenseTensor::from_data({l.out_ch, l.in_ch, 3, 3}, l.w));
    write_rmt1(os, DenseTensor::from_data({l.out_ch}, l.b));
  }
  if (!os) throw IoError("checkpoint: write failed");
}

inline ConvNet load_checkpoint(const std::string& path,
                               nlohmann::json* config_echo = nullptr) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw IoError("checkpoint: cannot open: " + path);
  std::uint64_t len = 0;
  is.read(reinterpret_cast<char*>(&len), 8);
  std::string m(len, '\0');
  is.read(m.data(), static_cast<std::streamsize>(len));
  if (!is) throw IoError("checkpoint: truncated manifest");
  nlohmann::json manifest = nlohmann::json::parse(m);
  if (config_echo) *config_echo = manifest["config"];
  ConvNet model;
  for (std::size_t li = 0; li < manifest["layers"].size(); ++li) {
    DenseTensor wt = read_rmt1(is);
    DenseTensor bt = read_rmt1(is);
    ConvNet::Layer l;
    l.out_ch = wt.dim(0);
    l.in_ch = wt.dim(1);
    l.w = wt.values();
    l.b = bt.values();
    l.gw.assign(l.w.size(), 0.0);
    l.gb.assign(l.b.size(), 0.0);
    model.layers().push_back(std::move(l));
  }
  return model;
}

}  // namespace rmi
