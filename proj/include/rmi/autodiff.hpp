#pragma once

#include <cmath>
#include <cstddef>
#include <optional>
#include <utility>
#include <vector>

#include "rmi/errors.hpp"
#include "rmi/lower_bound.hpp"
#include "rmi/region.hpp"
#include "rmi/rng.hpp"
#include "rmi/tensor.hpp"

namespace rmi {

struct LossParams {
  DownsampleConfig pool{};
  int region_side = 3;
  double xi = 1e-6;
  double lambda = 0.5;
  int unfold_stride = 1;
};

struct ClassRecord {
  std::size_t b = 0, c = 0, n = 0, d = 0;
  double i_l = 0.0;
  double logdet_m = 0.0;
};

struct LossReport {
  double total = 0.0;
  double bce = 0.0;
  double rmi = 0.0;  // (1/B) sum_{b,c} (-I_l)
  std::vector<ClassRecord> records;
};

inline constexpr double kProbClamp = 1e-12;

namespace detail {

inline double clamped(double p) {
  return std::min(std::max(p, kProbClamp), 1.0 - kProbClamp);
}

// Mean binary cross-entropy over non-ignored (pixel, class) entries.
inline std::pair<double, std::size_t> bce_sum(const SegmentationBatch& batch) {
  const std::size_t b = batch.batch(), h = batch.height(), w = batch.width();
  const std::size_t c = static_cast<std::size_t>(batch.num_classes);
  double sum = 0.0;
  std::size_t pixels = 0;
  for (std::size_t i = 0; i < b; ++i) {
    for (std::size_t y = 0; y < h; ++y) {
      for (std::size_t x = 0; x < w; ++x) {
        if (batch.is_ignored(i, y, x)) continue;
        ++pixels;
        const int lbl = batch.label_at(i, y, x);
        for (std::size_t cls = 0; cls < c; ++cls) {
          const double p = clamped(batch.probs(i, cls, y, x));
          const double t = (static_cast<int>(cls) == lbl) ? 1.0 : 0.0;
          sum -= t * std::log(p) + (1.0 - t) * std::log(1.0 - p);
        }
      }
    }
  }
  return {sum, pixels * c};
}

}  // namespace detail

/// Forward-only evaluation of the overall objective
/// lambda * BCE + (1 - lambda) * (1/B) sum_{b,c} (-I_l^{b,c})
/// on an already-assembled batch (probabilities given, no gradients).
inline LossReport compute_loss(const SegmentationBatch& batch,
                               const LossParams& params) {
  const std::size_t b = batch.batch();
  const std::size_t c = static_cast<std::size_t>(batch.num_classes);
  auto [bce_total, bce_count] = detail::bce_sum(batch);
  LossReport report;
  report.bce = bce_count ? bce_total / static_cast<double>(bce_count) : 0.0;
  auto dists = build_region_distribution(batch, params.pool,
                                         params.region_side, nullptr,
                                         params.unfold_stride);
  for (std::size_t i = 0; i < b; ++i) {
    for (std::size_t cls = 0; cls < c; ++cls) {
      const RegionDistribution& dist = dists[i * c + cls];
      CovarianceStats stats = estimate_stats(dist);
      ConditionalCov cc = conditional_cov(stats, params.xi);
      ClassRecord rec;
      rec.b = i;
      rec.c = cls;
      rec.n = dist.count;
      rec.d = dist.dim;
      rec.logdet_m = logdet(cc.factor);
      rec.i_l = rmi_lower_bound(cc);
      report.rmi -= rec.i_l / static_cast<double>(b);
      report.records.push_back(rec);
    }
  }
  report.total =
      params.lambda * report.bce + (1.0 - params.lambda) * report.rmi;
  return report;
}

/// Reverse-pass state saved by forward_with_tape. Single use.
struct GradientTape {
  struct Entry {
    std::size_t b = 0, c = 0;
    RegionDistribution dist;
    std::vector<double> mean_y, mean_p;
    std::vector<double> regression_solve;  // (Sigma_P + xi I)^{-1} K^T
    CholeskyFactor chol_m{0, {}};
  };
  DenseTensor probs;   // sigmoid(logits), B x C x H x W
  DenseTensor labels;  // B x H x W
  int num_classes = 0;
  std::optional<int> ignore_index;
  LossParams params;
  RegionGeometry geom;
  std::size_t bce_count = 0;
  std::vector<Entry> entries;
  bool consumed = false;
};

struct ForwardResult {
  double loss = 0.0;
  LossReport report;
  GradientTape tape;
};

inline DenseTensor sigmoid(const DenseTensor& logits) {
  DenseTensor p(logits.shape());
  for (std::size_t i = 0; i < logits.size(); ++i) {
    p[i] = 1.0 / (1.0 + std::exp(-logits[i]));
  }
  return p;
}

/// Runs the full objective from logits (probabilities are the
/// elementwise sigmoid, one channel per class) and records everything
/// the backward pass needs.
inline ForwardResult forward_with_tape(const DenseTensor& labels,
                                       int num_classes,
                                       std::optional<int> ignore_index,
                                       const DenseTensor& logits,
                                       const LossParams& params) {
  SegmentationBatch batch{labels, sigmoid(logits), num_classes, ignore_index};
  const std::size_t b = batch.batch();
  const std::size_t c = static_cast<std::size_t>(num_classes);

  ForwardResult res;
  res.tape.probs = batch.probs;
  res.tape.labels = labels;
  res.tape.num_classes = num_classes;
  res.tape.ignore_index = ignore_index;
  res.tape.params = params;

  auto [bce_total, bce_count] = detail::bce_sum(batch);
  res.report.bce =
      bce_count ? bce_total / static_cast<double>(bce_count) : 0.0;
  res.tape.bce_count = bce_count;

  auto dists = build_region_distribution(batch, params.pool,
                                         params.region_side, &res.tape.geom,
                                         params.unfold_stride);
  for (std::size_t i = 0; i < b; ++i) {
    for (std::size_t cls = 0; cls < c; ++cls) {
      RegionDistribution& dist = dists[i * c + cls];
      CovarianceStats stats = estimate_stats(dist);
      ConditionalCov cc = conditional_cov(stats, params.xi);
      ClassRecord rec;
      rec.b = i;
      rec.c = cls;
      rec.n = dist.count;
      rec.d = dist.dim;
      rec.logdet_m = logdet(cc.factor);
      rec.i_l = rmi_lower_bound(cc);
      res.report.rmi -= rec.i_l / static_cast<double>(b);
      res.report.records.push_back(rec);

      GradientTape::Entry e;
      e.b = i;
      e.c = cls;
      e.mean_y = std::move(stats.mean_y);
      e.mean_p = std::move(stats.mean_p);
      e.regression_solve = std::move(cc.regression_solve);
      e.chol_m = std::move(cc.factor);
      e.dist = std::move(dist);
      res.tape.entries.push_back(std::move(e));
    }
  }
  res.report.total =
      params.lambda * res.report.bce + (1.0 - params.lambda) * res.report.rmi;
  res.loss = res.report.total;
  return res;
}

inline double forward_loss(const DenseTensor& labels, int num_classes,
                           std::optional<int> ignore_index,
                           const DenseTensor& logits,
                           const LossParams& params) {
  SegmentationBatch batch{labels, sigmoid(logits), num_classes, ignore_index};
  return compute_loss(batch, params).total;
}

namespace detail {

// Adjoint of downsample for the probability path: spreads a gradient on
// the H' x W' plane back to the full-resolution plane.
inline void pool_adjoint(const std::vector<double>& ds_grad,
                         const double* src_plane, double* out_plane,
                         std::size_t h, std::size_t w, std::size_t oh,
                         std::size_t ow, const DownsampleConfig& cfg) {
  const std::size_t df = static_cast<std::size_t>(cfg.factor);
  switch (cfg.mode) {
    case PoolMode::kAverage: {
      const double inv = 1.0 / static_cast<double>(df * df);
      for (std::size_t oy = 0; oy < oh; ++oy) {
        for (std::size_t ox = 0; ox < ow; ++ox) {
          const double g = ds_grad[oy * ow + ox] * inv;
          for (std::size_t dy = 0; dy < df; ++dy) {
            for (std::size_t dx = 0; dx < df; ++dx) {
              out_plane[(oy * df + dy) * w + ox * df + dx] += g;
            }
          }
        }
      }
      break;
    }
    case PoolMode::kMax: {
      // Ties route to the first maximum in row-major order.
      for (std::size_t oy = 0; oy < oh; ++oy) {
        for (std::size_t ox = 0; ox < ow; ++ox) {
          std::size_t best = (oy * df) * w + ox * df;
          double mx = src_plane[best];
          for (std::size_t dy = 0; dy < df; ++dy) {
            for (std::size_t dx = 0; dx < df; ++dx) {
              const std::size_t idx = (oy * df + dy) * w + ox * df + dx;
              if (src_plane[idx] > mx) {
                mx = src_plane[idx];
                best = idx;
              }
            }
          }
          out_plane[best] += ds_grad[oy * ow + ox];
        }
      }
      break;
    }
    case PoolMode::kInterpolate: {
      for (std::size_t oy = 0; oy < oh; ++oy) {
        for (std::size_t ox = 0; ox < ow; ++ox) {
          const double g = ds_grad[oy * ow + ox];
          double sy = std::clamp((oy + 0.5) * df - 0.5, 0.0,
                                 static_cast<double>(h - 1));
          double sx = std::clamp((ox + 0.5) * df - 0.5, 0.0,
                                 static_cast<double>(w - 1));
          const std::size_t y0 = static_cast<std::size_t>(sy);
          const std::size_t x0 = static_cast<std::size_t>(sx);
          const std::size_t y1 = std::min(y0 + 1, h - 1);
          const std::size_t x1 = std::min(x0 + 1, w - 1);
          const double fy = sy - static_cast<double>(y0);
          const double fx = sx - static_cast<double>(x0);
          out_plane[y0 * w + x0] += g * (1 - fy) * (1 - fx);
          out_plane[y0 * w + x1] += g * (1 - fy) * fx;
          out_plane[y1 * w + x0] += g * fy * (1 - fx);
          out_plane[y1 * w + x1] += g * fy * fx;
        }
      }
      break;
    }
  }
}

}  // namespace detail

/// Gradient of the objective with respect to the logits. Consumes the
/// tape; a second call throws.
inline DenseTensor backward(GradientTape& tape) {
  if (tape.consumed) throw TapeConsumed("backward: tape already used");
  tape.consumed = true;

  const std::size_t b = tape.probs.dim(0), c = tape.probs.dim(1);
  const std::size_t h = tape.probs.dim(2), w = tape.probs.dim(3);
  const std::size_t oh = tape.geom.down_h, ow = tape.geom.down_w;
  const std::size_t nw = tape.geom.win_w;
  const std::size_t r = static_cast<std::size_t>(tape.params.region_side);
  const std::size_t st = static_cast<std::size_t>(tape.params.unfold_stride);
  const double lambda = tape.params.lambda;
  const double rmi_scale = (1.0 - lambda) / static_cast<double>(b);

  // Accumulated in probability space first; the sigmoid chain and the
  // BCE term (whose logit gradient is analytic) are applied at the end.
  DenseTensor grad_p(tape.probs.shape());

  for (const GradientTape::Entry& e : tape.entries) {
    const std::size_t d = e.dist.dim, n = e.dist.count;
    // dLoss/dM = rmi_scale * (1 / 2d) * M^{-1}
    SymMatrix minv = spd_inverse(e.chol_m);
    std::vector<double> g(minv.values());
    const double gs = rmi_scale / (2.0 * static_cast<double>(d));
    for (double& v : g) v *= gs;

    // With W = (Sigma_P + xi I)^{-1} K^T:
    //   dLoss/dK       = -2 G W^T
    //   dLoss/dSigma_P =  W G W^T
    const std::vector<double> wt = transpose(e.regression_solve, d, d);
    std::vector<double> grad_k = matmul(g, wt, d, d, d);
    for (double& v : grad_k) v *= -2.0;
    std::vector<double> grad_sp =
        matmul(matmul(e.regression_solve, g, d, d, d), wt, d, d, d);
    const std::vector<double> grad_k_t = transpose(grad_k, d, d);

    // Per-column gradient of the centered second moments:
    //   dLoss/dp_j = (2/N) grad_sp (p_j - mu_p) + (1/N) grad_k^T (y_j - mu_y)
    std::vector<double> ds_grad(oh * ow, 0.0);
    std::vector<double> cp(d), cy(d), gcol(d);
    const double inv_n = 1.0 / static_cast<double>(n);
    for (std::size_t j = 0; j < n; ++j) {
      for (std::size_t i = 0; i < d; ++i) {
        cp[i] = e.dist.points_p(i, j) - e.mean_p[i];
        cy[i] = e.dist.points_y(i, j) - e.mean_y[i];
      }
      for (std::size_t i = 0; i < d; ++i) {
        double s = 0.0;
        for (std::size_t k = 0; k < d; ++k) {
          s += 2.0 * grad_sp[i * d + k] * cp[k] + grad_k_t[i * d + k] * cy[k];
        }
        gcol[i] = s * inv_n;
      }
      // Unfold adjoint: scatter-add the window gradient.
      const std::size_t pos = e.dist.positions[j];
      const std::size_t wy = pos / nw, wx = pos % nw;
      for (std::size_t dy = 0; dy < r; ++dy) {
        for (std::size_t dx = 0; dx < r; ++dx) {
          ds_grad[(wy * st + dy) * ow + wx * st + dx] += gcol[dy * r + dx];
        }
      }
    }

    const double* src = tape.probs.data() + (e.b * c + e.c) * h * w;
    double* dst = grad_p.data() + (e.b * c + e.c) * h * w;
    detail::pool_adjoint(ds_grad, src, dst, h, w, oh, ow, tape.params.pool);
  }

  // Chain through the sigmoid and add the BCE term.
  DenseTensor grad_z(tape.probs.shape());
  const double inv_count =
      tape.bce_count ? 1.0 / static_cast<double>(tape.bce_count) : 0.0;
  for (std::size_t i = 0; i < b; ++i) {
    for (std::size_t y = 0; y < h; ++y) {
      for (std::size_t x = 0; x < w; ++x) {
        const int lbl = static_cast<int>(tape.labels(i, y, x));
        const bool ignored =
            tape.ignore_index && lbl == *tape.ignore_index;
        for (std::size_t cls = 0; cls < c; ++cls) {
          const double p = tape.probs(i, cls, y, x);
          double gz = grad_p(i, cls, y, x) * p * (1.0 - p);
          if (!ignored) {
            const double t = (static_cast<int>(cls) == lbl) ? 1.0 : 0.0;
            gz += lambda * (p - t) * inv_count;
          }
          grad_z(i, cls, y, x) = gz;
        }
      }
    }
  }
  return grad_z;
}

struct GradCheckReport {
  double max_abs_err = 0.0;
  double max_rel_err = 0.0;
  std::size_t probe_count = 0;
  std::size_t worst_flat_index = 0;
};

/// Compares backward() against central finite differences on randomly
/// probed logit coordinates. Deterministic per seed.
inline GradCheckReport gradcheck(const DenseTensor& labels, int num_classes,
                                 std::optional<int> ignore_index,
                                 const DenseTensor& logits,
                                 const LossParams& params, std::size_t probes,
                                 double step, std::uint64_t seed) {
  if (probes < 1) throw Error("gradcheck: probes must be >= 1");
  if (!(step >= 1e-7 && step <= 1e-3)) {
    throw Error("gradcheck: step must lie in [1e-7, 1e-3]");
  }
  ForwardResult fwd =
      forward_with_tape(labels, num_classes, ignore_index, logits, params);
  DenseTensor analytic = backward(fwd.tape);

  GradCheckReport rep;
  rep.probe_count = probes;
  SplitMix64 rng(seed);
  DenseTensor perturbed = logits;
  for (std::size_t k = 0; k < probes; ++k) {
    const std::size_t idx = rng.next_below(logits.size());
    const double orig = perturbed[idx];
    perturbed[idx] = orig + step;
    const double up =
        forward_loss(labels, num_classes, ignore_index, perturbed, params);
    perturbed[idx] = orig - step;
    const double dn =
        forward_loss(labels, num_classes, ignore_index, perturbed, params);
    perturbed[idx] = orig;
    const double fd = (up - dn) / (2.0 * step);
    const double an = analytic[idx];
    const double abs_err = std::abs(an - fd);
    const double rel_err =
        abs_err / std::max({std::abs(an), std::abs(fd), 1e-8});
    if (abs_err > rep.max_abs_err) rep.max_abs_err = abs_err;
    if (rel_err > rep.max_rel_err) {
      rep.max_rel_err = rel_err;
      rep.worst_flat_index = idx;
    }
  }
  return rep;
}

}  // namespace rmi
