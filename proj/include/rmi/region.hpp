#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <optional>
#include <string>
#include <vector>

#include "rmi/errors.hpp"
#include "rmi/tensor.hpp"

namespace rmi {

enum class PoolMode { kAverage, kMax, kInterpolate };

inline std::string to_string(PoolMode m) {
  switch (m) {
    case PoolMode::kAverage: return "avg";
    case PoolMode::kMax: return "max";
    case PoolMode::kInterpolate: return "interp";
  }
  return "?";
}

struct DownsampleConfig {
  int factor = 4;
  PoolMode mode = PoolMode::kAverage;
};

enum class MapKind { kLabel, kProbability };

/// Ground-truth label maps plus predicted probability maps for a
/// mini-batch. Labels are stored as doubles holding integer class ids.
struct SegmentationBatch {
  DenseTensor labels;  // B x H x W class indices
  DenseTensor probs;   // B x C x H x W in [0, 1]
  int num_classes = 0;
  std::optional<int> ignore_index;

  std::size_t batch() const { return labels.dim(0); }
  std::size_t height() const { return labels.dim(1); }
  std::size_t width() const { return labels.dim(2); }

  int label_at(std::size_t b, std::size_t h, std::size_t w) const {
    return static_cast<int>(labels(b, h, w));
  }

  bool is_ignored(std::size_t b, std::size_t h, std::size_t w) const {
    return ignore_index && label_at(b, h, w) == *ignore_index;
  }

  void validate() const {
    if (labels.rank() != 3 || probs.rank() != 4) {
      throw ShapeMismatch("batch: labels must be BxHxW and probs BxCxHxW");
    }
    if (probs.dim(0) != labels.dim(0) || probs.dim(2) != labels.dim(1) ||
        probs.dim(3) != labels.dim(2)) {
      throw ShapeMismatch("batch: labels " + shape_str(labels) +
                          " and probs " + shape_str(probs) +
                          " disagree on B, H, W");
    }
    if (static_cast<int>(probs.dim(1)) != num_classes) {
      throw ShapeMismatch("batch: probs channel count != num_classes");
    }
    for (std::size_t i = 0; i < labels.size(); ++i) {
      const int v = static_cast<int>(labels[i]);
      const bool ignored = ignore_index && v == *ignore_index;
      if (!ignored && (v < 0 || v >= num_classes)) {
        throw ClassOutOfRange("batch: label " + std::to_string(v) +
                              " outside [0, " + std::to_string(num_classes) +
                              ")");
      }
    }
    for (double p : probs.values()) {
      if (!(p >= 0.0 && p <= 1.0)) {
        throw Error("batch: probability outside [0, 1]");
      }
    }
  }

  static std::string shape_str(const DenseTensor& t) {
    std::string s = "[";
    for (std::size_t i = 0; i < t.rank(); ++i) {
      if (i) s += "x";
      s += std::to_string(t.dim(i));
    }
    return s + "]";
  }
};

struct OneHotResult {
  DenseTensor volume;       // B x C x H x W in {0, 1}
  DenseTensor ignore_mask;  // B x H x W, 1 where the pixel is ignored
};

inline OneHotResult one_hot(const DenseTensor& labels, int num_classes,
                            std::optional<int> ignore_index = std::nullopt) {
  if (labels.rank() != 3) throw ShapeMismatch("one_hot: labels must be BxHxW");
  const std::size_t b = labels.dim(0), h = labels.dim(1), w = labels.dim(2);
  OneHotResult r{DenseTensor({b, static_cast<std::size_t>(num_classes), h, w}),
                 DenseTensor({b, h, w})};
  for (std::size_t i = 0; i < b; ++i) {
    for (std::size_t y = 0; y < h; ++y) {
      for (std::size_t x = 0; x < w; ++x) {
        const int v = static_cast<int>(labels(i, y, x));
        if (ignore_index && v == *ignore_index) {
          r.ignore_mask(i, y, x) = 1.0;
          continue;
        }
        if (v < 0 || v >= num_classes) {
          throw ClassOutOfRange("one_hot: label " + std::to_string(v) +
                                " outside [0, " + std::to_string(num_classes) +
                                ")");
        }
        r.volume(i, v, y, x) = 1.0;
      }
    }
  }
  return r;
}

namespace detail {

// Bilinear with half-pixel centers: source coordinate of output i is
// (i + 0.5) * scale - 0.5, clamped to the border.
inline double bilinear_sample(const double* plane, std::size_t h,
                              std::size_t w, double sy, double sx) {
  sy = std::clamp(sy, 0.0, static_cast<double>(h - 1));
  sx = std::clamp(sx, 0.0, static_cast<double>(w - 1));
  const std::size_t y0 = static_cast<std::size_t>(sy);
  const std::size_t x0 = static_cast<std::size_t>(sx);
  const std::size_t y1 = std::min(y0 + 1, h - 1);
  const std::size_t x1 = std::min(x0 + 1, w - 1);
  const double fy = sy - static_cast<double>(y0);
  const double fx = sx - static_cast<double>(x0);
  return (1 - fy) * ((1 - fx) * plane[y0 * w + x0] + fx * plane[y0 * w + x1]) +
         fy * ((1 - fx) * plane[y1 * w + x0] + fx * plane[y1 * w + x1]);
}

}  // namespace detail

/// Downsamples a B x C x H x W volume to B x C x H' x W' with
/// H' = floor(H / DF); trailing remainder rows/columns are dropped.
/// Interpolate mode uses nearest neighbour for labels and bilinear
/// (half-pixel centers) for probabilities.
inline DenseTensor downsample(const DenseTensor& volume,
                              const DownsampleConfig& cfg, MapKind kind) {
  if (volume.rank() != 4) {
    throw ShapeMismatch("downsample: expected BxCxHxW");
  }
  const std::size_t b = volume.dim(0), c = volume.dim(1);
  const std::size_t h = volume.dim(2), w = volume.dim(3);
  const std::size_t df = static_cast<std::size_t>(cfg.factor);
  if (df < 1 || df > h || df > w) {
    throw FactorTooLarge("downsample: factor " + std::to_string(cfg.factor) +
                         " exceeds map size " + std::to_string(h) + "x" +
                         std::to_string(w));
  }
  const std::size_t oh = h / df, ow = w / df;
  DenseTensor out({b, c, oh, ow});
  const double scale = static_cast<double>(df);
  for (std::size_t i = 0; i < b; ++i) {
    for (std::size_t ch = 0; ch < c; ++ch) {
      const double* plane = volume.data() + (i * c + ch) * h * w;
      double* oplane = out.data() + (i * c + ch) * oh * ow;
      for (std::size_t oy = 0; oy < oh; ++oy) {
        for (std::size_t ox = 0; ox < ow; ++ox) {
          double v;
          switch (cfg.mode) {
            case PoolMode::kAverage: {
              double s = 0.0;
              for (std::size_t dy = 0; dy < df; ++dy) {
                for (std::size_t dx = 0; dx < df; ++dx) {
                  s += plane[(oy * df + dy) * w + ox * df + dx];
                }
              }
              v = s / static_cast<double>(df * df);
              break;
            }
            case PoolMode::kMax: {
              double m = plane[oy * df * w + ox * df];
              for (std::size_t dy = 0; dy < df; ++dy) {
                for (std::size_t dx = 0; dx < df; ++dx) {
                  m = std::max(m, plane[(oy * df + dy) * w + ox * df + dx]);
                }
              }
              v = m;
              break;
            }
            case PoolMode::kInterpolate: {
              const double sy = (oy + 0.5) * scale - 0.5;
              const double sx = (ox + 0.5) * scale - 0.5;
              if (kind == MapKind::kLabel) {
                const std::size_t ny = static_cast<std::size_t>(std::clamp(
                    std::floor(sy + 0.5), 0.0, static_cast<double>(h - 1)));
                const std::size_t nx = static_cast<std::size_t>(std::clamp(
                    std::floor(sx + 0.5), 0.0, static_cast<double>(w - 1)));
                v = plane[ny * w + nx];
              } else {
                v = detail::bilinear_sample(plane, h, w, sy, sx);
              }
              break;
            }
          }
          oplane[oy * ow + ox] = v;
        }
      }
    }
  }
  return out;
}

/// Unfolds an H' x W' map into a d x N matrix of flattened R x R
/// windows: d = R^2, N = (H'-R+1)(W'-R+1), valid windows only,
/// enumerated row-major with the given stride (default 1).
inline DenseTensor unfold(const DenseTensor& map, int side, int stride = 1) {
  if (map.rank() != 2) throw ShapeMismatch("unfold: expected HxW map");
  const std::size_t h = map.dim(0), w = map.dim(1);
  const std::size_t r = static_cast<std::size_t>(side);
  if (r < 1 || r > h || r > w) {
    throw RegionTooLarge("unfold: region side " + std::to_string(side) +
                         " exceeds map size " + std::to_string(h) + "x" +
                         std::to_string(w));
  }
  const std::size_t st = static_cast<std::size_t>(stride);
  const std::size_t nh = (h - r) / st + 1, nw = (w - r) / st + 1;
  const std::size_t d = r * r, n = nh * nw;
  DenseTensor out({d, n});
  for (std::size_t wy = 0; wy < nh; ++wy) {
    for (std::size_t wx = 0; wx < nw; ++wx) {
      const std::size_t col = wy * nw + wx;
      for (std::size_t dy = 0; dy < r; ++dy) {
        for (std::size_t dx = 0; dx < r; ++dx) {
          out((dy * r + dx), col) = map(wy * st + dy, wx * st + dx);
        }
      }
    }
  }
  return out;
}

/// Paired region point clouds for one (image, class): columns of
/// points_y are unfolded label windows, columns of points_p the
/// matching probability windows. points_y entries are binary at DF=1
/// and may be fractional after pooling.
struct RegionDistribution {
  std::size_t dim = 0;    // d = R^2
  std::size_t count = 0;  // N after ignore filtering
  DenseTensor points_y;   // d x N
  DenseTensor points_p;   // d x N
  // Row-major valid-window index of each kept column in the
  // downsampled map; used by the unfold adjoint.
  std::vector<std::size_t> positions;
  // Set by the Gaussian sampling harness, whose y points are
  // continuous; the binary invariant is waived there.
  bool continuous_y = false;
};

struct RegionGeometry {
  std::size_t down_h = 0, down_w = 0;  // H', W'
  std::size_t win_h = 0, win_w = 0;    // valid window grid
};

/// Builds one RegionDistribution per (image, class). Columns whose
/// label window overlaps any ignored pixel are dropped from both
/// clouds. Result is indexed [b * C + c].
inline std::vector<RegionDistribution> build_region_distribution(
    const SegmentationBatch& batch, const DownsampleConfig& cfg, int side,
    RegionGeometry* geometry = nullptr, int stride = 1) {
  batch.validate();
  const std::size_t b = batch.batch(), h = batch.height(), w = batch.width();
  const std::size_t c = static_cast<std::size_t>(batch.num_classes);
  const std::size_t df = static_cast<std::size_t>(cfg.factor);
  const std::size_t oh = h / df, ow = w / df;
  const std::size_t r = static_cast<std::size_t>(side);
  if (r > oh || r > ow) {
    throw RegionTooLarge("build_region_distribution: downsampled map " +
                         std::to_string(oh) + "x" + std::to_string(ow) +
                         " smaller than region side " + std::to_string(side));
  }
  const std::size_t st = static_cast<std::size_t>(stride);
  const std::size_t nh = (oh - r) / st + 1, nw = (ow - r) / st + 1;
  if (geometry) *geometry = {oh, ow, nh, nw};

  OneHotResult oh_res = one_hot(batch.labels, batch.num_classes,
                                batch.ignore_index);
  DenseTensor y_small = downsample(oh_res.volume, cfg, MapKind::kLabel);
  DenseTensor p_small = downsample(batch.probs, cfg, MapKind::kProbability);

  // A downsampled cell is tainted when any contributing source pixel is
  // ignored: the DF x DF footprint for pooling modes, the nearest
  // source pixel for interpolate mode.
  std::vector<std::vector<char>> taint(b, std::vector<char>(oh * ow, 0));
  if (batch.ignore_index) {
    for (std::size_t i = 0; i < b; ++i) {
      for (std::size_t oy = 0; oy < oh; ++oy) {
        for (std::size_t ox = 0; ox < ow; ++ox) {
          bool t = false;
          if (cfg.mode == PoolMode::kInterpolate) {
            const double sy = std::clamp((oy + 0.5) * df - 0.5, 0.0,
                                         static_cast<double>(h - 1));
            const double sx = std::clamp((ox + 0.5) * df - 0.5, 0.0,
                                         static_cast<double>(w - 1));
            t = oh_res.ignore_mask(i,
                                   static_cast<std::size_t>(
                                       std::floor(sy + 0.5)),
                                   static_cast<std::size_t>(
                                       std::floor(sx + 0.5))) > 0.5;
          } else {
            for (std::size_t dy = 0; dy < df && !t; ++dy) {
              for (std::size_t dx = 0; dx < df && !t; ++dx) {
                t = oh_res.ignore_mask(i, oy * df + dy, ox * df + dx) > 0.5;
              }
            }
          }
          taint[i][oy * ow + ox] = t;
        }
      }
    }
  }

  std::vector<RegionDistribution> out;
  out.reserve(b * c);
  const std::size_t d = r * r;
  for (std::size_t i = 0; i < b; ++i) {
    // Kept window positions are shared by all classes of one image.
    std::vector<std::size_t> keep;
    keep.reserve(nh * nw);
    for (std::size_t wy = 0; wy < nh; ++wy) {
      for (std::size_t wx = 0; wx < nw; ++wx) {
        bool tainted = false;
        for (std::size_t dy = 0; dy < r && !tainted; ++dy) {
          for (std::size_t dx = 0; dx < r && !tainted; ++dx) {
            tainted = taint[i][(wy * st + dy) * ow + wx * st + dx];
          }
        }
        if (!tainted) keep.push_back(wy * nw + wx);
      }
    }
    if (keep.empty()) {
      throw EmptyDistribution(
          "build_region_distribution: all windows overlap ignored pixels");
    }
    for (std::size_t cls = 0; cls < c; ++cls) {
      RegionDistribution dist;
      dist.dim = d;
      dist.count = keep.size();
      dist.positions = keep;
      dist.points_y = DenseTensor({d, keep.size()});
      dist.points_p = DenseTensor({d, keep.size()});
      const double* yp = y_small.data() + (i * c + cls) * oh * ow;
      const double* pp = p_small.data() + (i * c + cls) * oh * ow;
      for (std::size_t j = 0; j < keep.size(); ++j) {
        const std::size_t wy = keep[j] / nw, wx = keep[j] % nw;
        for (std::size_t dy = 0; dy < r; ++dy) {
          for (std::size_t dx = 0; dx < r; ++dx) {
            const std::size_t src = (wy * st + dy) * ow + wx * st + dx;
            dist.points_y(dy * r + dx, j) = yp[src];
            dist.points_p(dy * r + dx, j) = pp[src];
          }
        }
      }
      out.push_back(std::move(dist));
    }
  }
  return out;
}

}  // namespace rmi
