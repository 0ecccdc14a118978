#include "ops.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>

#include <cblas.h>
#include <fmt/format.h>

#include "../error.hpp"

namespace camb::nn::ops {

namespace {

[[noreturn]] void bad(const Node& n, const std::string& what) {
  fail(ErrorCode::kUnsupported, fmt::format("{} node '{}': {}", n.op, n.name, what));
}

void require_rank(const Node& n, const Tensor& t, int rank) {
  if (t.rank() != rank) bad(n, fmt::format("expected rank-{} input, got {}", rank, shape_string(t.shape)));
}

struct Window2d {
  std::int64_t kh, kw, sh, sw, dh, dw;
  std::int64_t pt, pl, pb, pr;
};

Window2d window(const Node& n, std::int64_t kh, std::int64_t kw) {
  const auto auto_pad = n.has("auto_pad") ? n.attrs.at("auto_pad").s : std::string("NOTSET");
  if (auto_pad != "NOTSET" && auto_pad != "VALID" && !auto_pad.empty()) bad(n, "auto_pad " + auto_pad + " unsupported");
  const auto strides = n.get_ints("strides", {1, 1});
  const auto dil = n.get_ints("dilations", {1, 1});
  const auto pads = n.get_ints("pads", {0, 0, 0, 0});
  if (strides.size() != 2 || dil.size() != 2 || pads.size() != 4) bad(n, "only 2-D windows are supported");
  return {kh, kw, strides[0], strides[1], dil[0], dil[1], pads[0], pads[1], pads[2], pads[3]};
}

std::int64_t pooled_extent(std::int64_t in, std::int64_t k, std::int64_t s, std::int64_t p0, std::int64_t p1,
                           bool ceil_mode) {
  const std::int64_t span = in + p0 + p1 - k;
  std::int64_t out = (ceil_mode ? (span + s - 1) / s : span / s) + 1;
  // The last window must start inside the input or the leading padding.
  if (ceil_mode && (out - 1) * s >= in + p0) --out;
  return out;
}

std::int64_t conv_extent(std::int64_t in, std::int64_t k, std::int64_t s, std::int64_t d, std::int64_t p0,
                         std::int64_t p1) {
  return (in + p0 + p1 - d * (k - 1) - 1) / s + 1;
}

}  // namespace

Tensor conv(const Node& n, const Tensor& x, const Tensor& w, const Tensor* bias) {
  require_rank(n, x, 4);
  require_rank(n, w, 4);
  const std::int64_t batch = x.dim(0), c_in = x.dim(1), h = x.dim(2), wd = x.dim(3);
  const std::int64_t m = w.dim(0), kh = w.dim(2), kw = w.dim(3);
  const std::int64_t group = n.get_int("group", 1);
  if (c_in % group != 0 || m % group != 0 || w.dim(1) != c_in / group) {
    bad(n, fmt::format("weight {} incompatible with input {} and group {}", shape_string(w.shape),
                       shape_string(x.shape), group));
  }
  const Window2d win = window(n, kh, kw);
  const std::int64_t oh = conv_extent(h, kh, win.sh, win.dh, win.pt, win.pb);
  const std::int64_t ow = conv_extent(wd, kw, win.sw, win.dw, win.pl, win.pr);
  if (oh < 1 || ow < 1) bad(n, "empty output");
  const std::int64_t cg = c_in / group, mg = m / group;
  const std::int64_t kdim = cg * kh * kw, spatial = oh * ow;
  const bool pointwise = kh == 1 && kw == 1 && win.sh == 1 && win.sw == 1 && win.pt == 0 && win.pl == 0 &&
                         win.pb == 0 && win.pr == 0;

  Tensor y({batch, m, oh, ow});
  std::vector<float> col(pointwise ? 0 : static_cast<std::size_t>(kdim * spatial));
  for (std::int64_t b = 0; b < batch; ++b) {
    for (std::int64_t g = 0; g < group; ++g) {
      const float* src = x.data.data() + (b * c_in + g * cg) * h * wd;
      const float* cols = src;
      if (!pointwise) {
        for (std::int64_t c = 0; c < cg; ++c) {
          for (std::int64_t i = 0; i < kh; ++i) {
            for (std::int64_t j = 0; j < kw; ++j) {
              float* row = col.data() + ((c * kh + i) * kw + j) * spatial;
              for (std::int64_t oy = 0; oy < oh; ++oy) {
                const std::int64_t iy = oy * win.sh - win.pt + i * win.dh;
                for (std::int64_t ox = 0; ox < ow; ++ox) {
                  const std::int64_t ix = ox * win.sw - win.pl + j * win.dw;
                  row[oy * ow + ox] = (iy >= 0 && iy < h && ix >= 0 && ix < wd) ? src[(c * h + iy) * wd + ix] : 0.0f;
                }
              }
            }
          }
        }
        cols = col.data();
      }
      float* dst = y.data.data() + (b * m + g * mg) * spatial;
      cblas_sgemm(CblasRowMajor, CblasNoTrans, CblasNoTrans, static_cast<int>(mg), static_cast<int>(spatial),
                  static_cast<int>(kdim), 1.0f, w.data.data() + g * mg * kdim, static_cast<int>(kdim), cols,
                  static_cast<int>(spatial), 0.0f, dst, static_cast<int>(spatial));
    }
    if (bias != nullptr) {
      if (bias->numel() != m) bad(n, "bias length mismatch");
      for (std::int64_t o = 0; o < m; ++o) {
        float* dst = y.data.data() + (b * m + o) * spatial;
        const float v = bias->data[static_cast<std::size_t>(o)];
        for (std::int64_t i = 0; i < spatial; ++i) dst[i] += v;
      }
    }
  }
  return y;
}

Tensor conv_backward_input(const Node& n, const Shape& x_shape, const Tensor& w, const Tensor& dy) {
  const std::int64_t batch = x_shape[0], c_in = x_shape[1], h = x_shape[2], wd = x_shape[3];
  const std::int64_t m = w.dim(0), kh = w.dim(2), kw = w.dim(3);
  const std::int64_t group = n.get_int("group", 1);
  const Window2d win = window(n, kh, kw);
  const std::int64_t oh = dy.dim(2), ow = dy.dim(3);
  const std::int64_t cg = c_in / group, mg = m / group;
  const std::int64_t kdim = cg * kh * kw, spatial = oh * ow;

  Tensor dx(x_shape);
  std::vector<float> col(static_cast<std::size_t>(kdim * spatial));
  for (std::int64_t b = 0; b < batch; ++b) {
    for (std::int64_t g = 0; g < group; ++g) {
      const float* grad = dy.data.data() + (b * m + g * mg) * spatial;
      cblas_sgemm(CblasRowMajor, CblasTrans, CblasNoTrans, static_cast<int>(kdim), static_cast<int>(spatial),
                  static_cast<int>(mg), 1.0f, w.data.data() + g * mg * kdim, static_cast<int>(kdim), grad,
                  static_cast<int>(spatial), 0.0f, col.data(), static_cast<int>(spatial));
      float* dst = dx.data.data() + (b * c_in + g * cg) * h * wd;
      for (std::int64_t c = 0; c < cg; ++c) {
        for (std::int64_t i = 0; i < kh; ++i) {
          for (std::int64_t j = 0; j < kw; ++j) {
            const float* row = col.data() + ((c * kh + i) * kw + j) * spatial;
            for (std::int64_t oy = 0; oy < oh; ++oy) {
              const std::int64_t iy = oy * win.sh - win.pt + i * win.dh;
              if (iy < 0 || iy >= h) continue;
              for (std::int64_t ox = 0; ox < ow; ++ox) {
                const std::int64_t ix = ox * win.sw - win.pl + j * win.dw;
                if (ix < 0 || ix >= wd) continue;
                dst[(c * h + iy) * wd + ix] += row[oy * ow + ox];
              }
            }
          }
        }
      }
    }
  }
  return dx;
}

Tensor relu(const Tensor& x) {
  Tensor y = x;
  for (float& v : y.data) v = v > 0.0f ? v : 0.0f;
  return y;
}

Tensor relu_backward(const Tensor& y, const Tensor& dy) {
  Tensor dx(dy.shape);
  for (std::size_t i = 0; i < dx.data.size(); ++i) dx.data[i] = y.data[i] > 0.0f ? dy.data[i] : 0.0f;
  return dx;
}

Tensor clip(const Tensor& x, float lo, float hi) {
  Tensor y = x;
  for (float& v : y.data) v = std::min(std::max(v, lo), hi);
  return y;
}

Tensor clip_backward(const Tensor& x, float lo, float hi, const Tensor& dy) {
  Tensor dx(dy.shape);
  for (std::size_t i = 0; i < dx.data.size(); ++i) {
    dx.data[i] = (x.data[i] > lo && x.data[i] < hi) ? dy.data[i] : 0.0f;
  }
  return dx;
}

namespace {

struct PoolGeometry {
  Window2d win;
  std::int64_t batch, c, h, w, oh, ow;
};

PoolGeometry pool_geometry(const Node& n, const Shape& x) {
  if (x.size() != 4) bad(n, "expected rank-4 input");
  const auto k = n.get_ints("kernel_shape", {});
  if (k.size() != 2) bad(n, "kernel_shape must have 2 entries");
  PoolGeometry g{window(n, k[0], k[1]), x[0], x[1], x[2], x[3], 0, 0};
  const bool ceil_mode = n.get_int("ceil_mode", 0) != 0;
  if (g.win.dh != 1 || g.win.dw != 1) bad(n, "dilated pooling unsupported");
  g.oh = pooled_extent(g.h, g.win.kh, g.win.sh, g.win.pt, g.win.pb, ceil_mode);
  g.ow = pooled_extent(g.w, g.win.kw, g.win.sw, g.win.pl, g.win.pr, ceil_mode);
  if (g.oh < 1 || g.ow < 1) bad(n, "empty output");
  return g;
}

// Index (within the plane) of the first maximum of each pooling window.
template <typename Fn>
void for_each_max(const PoolGeometry& g, const float* plane, Fn&& fn) {
  for (std::int64_t oy = 0; oy < g.oh; ++oy) {
    for (std::int64_t ox = 0; ox < g.ow; ++ox) {
      float best = -std::numeric_limits<float>::infinity();
      std::int64_t at = -1;
      for (std::int64_t i = 0; i < g.win.kh; ++i) {
        const std::int64_t iy = oy * g.win.sh - g.win.pt + i;
        if (iy < 0 || iy >= g.h) continue;
        for (std::int64_t j = 0; j < g.win.kw; ++j) {
          const std::int64_t ix = ox * g.win.sw - g.win.pl + j;
          if (ix < 0 || ix >= g.w) continue;
          const float v = plane[iy * g.w + ix];
          if (at < 0 || v > best) {
            best = v;
            at = iy * g.w + ix;
          }
        }
      }
      fn(oy * g.ow + ox, at, best);
    }
  }
}

}  // namespace

Tensor max_pool(const Node& n, const Tensor& x) {
  const PoolGeometry g = pool_geometry(n, x.shape);
  Tensor y({g.batch, g.c, g.oh, g.ow});
  for (std::int64_t p = 0; p < g.batch * g.c; ++p) {
    const float* src = x.data.data() + p * g.h * g.w;
    float* dst = y.data.data() + p * g.oh * g.ow;
    for_each_max(g, src, [&](std::int64_t o, std::int64_t, float v) { dst[o] = v; });
  }
  return y;
}

Tensor max_pool_backward(const Node& n, const Tensor& x, const Tensor& dy) {
  const PoolGeometry g = pool_geometry(n, x.shape);
  Tensor dx(x.shape);
  for (std::int64_t p = 0; p < g.batch * g.c; ++p) {
    const float* src = x.data.data() + p * g.h * g.w;
    const float* grad = dy.data.data() + p * g.oh * g.ow;
    float* dst = dx.data.data() + p * g.h * g.w;
    for_each_max(g, src, [&](std::int64_t o, std::int64_t at, float) {
      if (at >= 0) dst[at] += grad[o];
    });
  }
  return dx;
}

namespace {

template <typename Fn>
void for_each_avg_window(const Node& n, const PoolGeometry& g, Fn&& fn) {
  const bool include_pad = n.get_int("count_include_pad", 0) != 0;
  for (std::int64_t oy = 0; oy < g.oh; ++oy) {
    const std::int64_t y0 = oy * g.win.sh - g.win.pt;
    const std::int64_t y1 = y0 + g.win.kh;
    for (std::int64_t ox = 0; ox < g.ow; ++ox) {
      const std::int64_t x0 = ox * g.win.sw - g.win.pl;
      const std::int64_t x1 = x0 + g.win.kw;
      const std::int64_t vy0 = std::max<std::int64_t>(y0, 0), vy1 = std::min(y1, g.h);
      const std::int64_t vx0 = std::max<std::int64_t>(x0, 0), vx1 = std::min(x1, g.w);
      std::int64_t count;
      if (include_pad) {
        count = (std::min(y1, g.h + g.win.pb) - y0) * (std::min(x1, g.w + g.win.pr) - x0);
      } else {
        count = (vy1 - vy0) * (vx1 - vx0);
      }
      fn(oy * g.ow + ox, vy0, vy1, vx0, vx1, count > 0 ? count : 1);
    }
  }
}

}  // namespace

Tensor avg_pool(const Node& n, const Tensor& x) {
  const PoolGeometry g = pool_geometry(n, x.shape);
  Tensor y({g.batch, g.c, g.oh, g.ow});
  for (std::int64_t p = 0; p < g.batch * g.c; ++p) {
    const float* src = x.data.data() + p * g.h * g.w;
    float* dst = y.data.data() + p * g.oh * g.ow;
    for_each_avg_window(n, g, [&](std::int64_t o, std::int64_t y0, std::int64_t y1, std::int64_t x0, std::int64_t x1,
                                  std::int64_t count) {
      double acc = 0.0;
      for (std::int64_t iy = y0; iy < y1; ++iy) {
        for (std::int64_t ix = x0; ix < x1; ++ix) acc += src[iy * g.w + ix];
      }
      dst[o] = static_cast<float>(acc / count);
    });
  }
  return y;
}

Tensor avg_pool_backward(const Node& n, const Shape& x_shape, const Tensor& dy) {
  const PoolGeometry g = pool_geometry(n, x_shape);
  Tensor dx(x_shape);
  for (std::int64_t p = 0; p < g.batch * g.c; ++p) {
    const float* grad = dy.data.data() + p * g.oh * g.ow;
    float* dst = dx.data.data() + p * g.h * g.w;
    for_each_avg_window(n, g, [&](std::int64_t o, std::int64_t y0, std::int64_t y1, std::int64_t x0, std::int64_t x1,
                                  std::int64_t count) {
      const float share = grad[o] / static_cast<float>(count);
      for (std::int64_t iy = y0; iy < y1; ++iy) {
        for (std::int64_t ix = x0; ix < x1; ++ix) dst[iy * g.w + ix] += share;
      }
    });
  }
  return dx;
}

Tensor global_avg_pool(const Tensor& x) {
  if (x.rank() != 4) fail(ErrorCode::kUnsupported, "GlobalAveragePool expects rank-4 input");
  const std::int64_t planes = x.dim(0) * x.dim(1), area = x.dim(2) * x.dim(3);
  Tensor y({x.dim(0), x.dim(1), 1, 1});
  for (std::int64_t p = 0; p < planes; ++p) {
    double acc = 0.0;
    for (std::int64_t i = 0; i < area; ++i) acc += x.data[static_cast<std::size_t>(p * area + i)];
    y.data[static_cast<std::size_t>(p)] = static_cast<float>(acc / area);
  }
  return y;
}

Tensor global_avg_pool_backward(const Shape& x_shape, const Tensor& dy) {
  Tensor dx(x_shape);
  const std::int64_t planes = x_shape[0] * x_shape[1], area = x_shape[2] * x_shape[3];
  for (std::int64_t p = 0; p < planes; ++p) {
    const float share = dy.data[static_cast<std::size_t>(p)] / static_cast<float>(area);
    std::fill_n(dx.data.begin() + p * area, area, share);
  }
  return dx;
}

Tensor global_max_pool(const Tensor& x) {
  if (x.rank() != 4) fail(ErrorCode::kUnsupported, "GlobalMaxPool expects rank-4 input");
  const std::int64_t planes = x.dim(0) * x.dim(1), area = x.dim(2) * x.dim(3);
  Tensor y({x.dim(0), x.dim(1), 1, 1});
  for (std::int64_t p = 0; p < planes; ++p) {
    auto begin = x.data.begin() + p * area;
    y.data[static_cast<std::size_t>(p)] = *std::max_element(begin, begin + area);
  }
  return y;
}

Tensor global_max_pool_backward(const Tensor& x, const Tensor& dy) {
  Tensor dx(x.shape);
  const std::int64_t planes = x.dim(0) * x.dim(1), area = x.dim(2) * x.dim(3);
  for (std::int64_t p = 0; p < planes; ++p) {
    auto begin = x.data.begin() + p * area;
    const auto at = std::max_element(begin, begin + area) - x.data.begin();
    dx.data[static_cast<std::size_t>(at)] = dy.data[static_cast<std::size_t>(p)];
  }
  return dx;
}

Tensor reshape(const Tensor& x, Shape shape) {
  if (numel(shape) != x.numel()) {
    fail(ErrorCode::kShapeMismatch, fmt::format("cannot reshape {} to {}", shape_string(x.shape), shape_string(shape)));
  }
  return Tensor(std::move(shape), x.data);
}

Shape flatten_shape(const Node& n, const Shape& in) {
  std::int64_t axis = n.get_int("axis", 1);
  if (axis < 0) axis += static_cast<std::int64_t>(in.size());
  std::int64_t outer = 1, inner = 1;
  for (std::size_t i = 0; i < in.size(); ++i) (static_cast<std::int64_t>(i) < axis ? outer : inner) *= in[i];
  return {outer, inner};
}

Shape reshape_target(const Shape& in, const Tensor& spec) {
  Shape out;
  std::int64_t known = 1;
  int infer = -1;
  for (std::size_t i = 0; i < spec.data.size(); ++i) {
    auto v = static_cast<std::int64_t>(spec.data[i]);
    if (v == 0) v = in.at(i);
    if (v == -1) {
      infer = static_cast<int>(i);
      out.push_back(1);
      continue;
    }
    known *= v;
    out.push_back(v);
  }
  if (infer >= 0) out[static_cast<std::size_t>(infer)] = numel(in) / known;
  return out;
}

namespace {

struct GemmDims {
  int m, k, n;
  bool ta, tb;
};

GemmDims gemm_dims(const Node& n, const Tensor& a, const Tensor& b) {
  if (a.rank() != 2 || b.rank() != 2) bad(n, "only 2-D operands are supported");
  const bool ta = n.get_int("transA", 0) != 0, tb = n.get_int("transB", 0) != 0;
  const auto m = ta ? a.dim(1) : a.dim(0), k = ta ? a.dim(0) : a.dim(1);
  const auto kb = tb ? b.dim(1) : b.dim(0), nn = tb ? b.dim(0) : b.dim(1);
  if (k != kb) bad(n, fmt::format("inner dims differ: {} vs {}", shape_string(a.shape), shape_string(b.shape)));
  return {static_cast<int>(m), static_cast<int>(k), static_cast<int>(nn), ta, tb};
}

}  // namespace

Tensor gemm(const Node& n, const Tensor& a, const Tensor& b, const Tensor* c) {
  const GemmDims d = gemm_dims(n, a, b);
  const float alpha = n.get_float("alpha", 1.0f), beta = n.get_float("beta", 1.0f);
  Tensor y({d.m, d.n});
  cblas_sgemm(CblasRowMajor, d.ta ? CblasTrans : CblasNoTrans, d.tb ? CblasTrans : CblasNoTrans, d.m, d.n, d.k, alpha,
              a.data.data(), static_cast<int>(a.dim(1)), b.data.data(), static_cast<int>(b.dim(1)), 0.0f,
              y.data.data(), d.n);
  if (c != nullptr) {
    const Tensor bias = binary(Binary::kMul, *c, Tensor({1}, {beta}));
    y = binary(Binary::kAdd, y, bias);
  }
  return y;
}

Tensor gemm_backward(const Node& n, const Tensor& a, const Tensor& b, const Tensor& dy, int which) {
  const GemmDims d = gemm_dims(n, a, b);
  const float alpha = n.get_float("alpha", 1.0f);
  if (which == 0) {
    // dA (as stored) = alpha * dY B^T, transposed back when transA is set.
    Tensor da(a.shape);
    if (!d.ta) {
      cblas_sgemm(CblasRowMajor, CblasNoTrans, d.tb ? CblasNoTrans : CblasTrans, d.m, d.k, d.n, alpha, dy.data.data(),
                  d.n, b.data.data(), static_cast<int>(b.dim(1)), 0.0f, da.data.data(), d.k);
    } else {
      cblas_sgemm(CblasRowMajor, d.tb ? CblasTrans : CblasNoTrans, CblasTrans, d.k, d.m, d.n, alpha, b.data.data(),
                  static_cast<int>(b.dim(1)), dy.data.data(), d.n, 0.0f, da.data.data(), d.m);
    }
    return da;
  }
  if (which == 1) {
    Tensor db(b.shape);
    if (!d.tb) {
      cblas_sgemm(CblasRowMajor, d.ta ? CblasNoTrans : CblasTrans, CblasNoTrans, d.k, d.n, d.m, alpha, a.data.data(),
                  static_cast<int>(a.dim(1)), dy.data.data(), d.n, 0.0f, db.data.data(), d.n);
    } else {
      cblas_sgemm(CblasRowMajor, CblasTrans, d.ta ? CblasTrans : CblasNoTrans, d.n, d.k, d.m, alpha, dy.data.data(),
                  d.n, a.data.data(), static_cast<int>(a.dim(1)), 0.0f, db.data.data(), d.k);
    }
    return db;
  }
  bad(n, "gradient through the bias operand is not needed");
}

namespace {

Shape broadcast_shape(const Shape& a, const Shape& b) {
  const std::size_t rank = std::max(a.size(), b.size());
  Shape out(rank, 1);
  for (std::size_t i = 0; i < rank; ++i) {
    const std::int64_t da = i < rank - a.size() ? 1 : a[i - (rank - a.size())];
    const std::int64_t db = i < rank - b.size() ? 1 : b[i - (rank - b.size())];
    if (da != db && da != 1 && db != 1) {
      fail(ErrorCode::kShapeMismatch, fmt::format("cannot broadcast {} with {}", shape_string(a), shape_string(b)));
    }
    out[i] = std::max(da, db);
  }
  return out;
}

// Strides of `s` aligned to `out`, zero along broadcast axes.
std::vector<std::int64_t> broadcast_strides(const Shape& s, const Shape& out) {
  std::vector<std::int64_t> strides(out.size(), 0);
  std::int64_t stride = 1;
  for (std::size_t i = s.size(); i-- > 0;) {
    const std::size_t o = i + out.size() - s.size();
    strides[o] = s[i] == 1 ? 0 : stride;
    stride *= s[i];
  }
  return strides;
}

template <typename Fn>
void for_each_broadcast(const Shape& out, const Shape& a, const Shape& b, Fn&& fn) {
  const auto sa = broadcast_strides(a, out), sb = broadcast_strides(b, out);
  const std::int64_t total = numel(out);
  std::vector<std::int64_t> idx(out.size(), 0);
  std::int64_t ia = 0, ib = 0;
  for (std::int64_t i = 0; i < total; ++i) {
    fn(i, ia, ib);
    for (std::size_t d = out.size(); d-- > 0;) {
      ++idx[d];
      ia += sa[d];
      ib += sb[d];
      if (idx[d] < out[d]) break;
      ia -= sa[d] * out[d];
      ib -= sb[d] * out[d];
      idx[d] = 0;
    }
  }
}

}  // namespace

Tensor binary(Binary op, const Tensor& a, const Tensor& b) {
  Tensor y(broadcast_shape(a.shape, b.shape));
  if (a.shape == b.shape) {
    for (std::size_t i = 0; i < y.data.size(); ++i) {
      const float u = a.data[i], v = b.data[i];
      y.data[i] = op == Binary::kAdd ? u + v : op == Binary::kSub ? u - v : op == Binary::kMul ? u * v : u / v;
    }
    return y;
  }
  for_each_broadcast(y.shape, a.shape, b.shape, [&](std::int64_t i, std::int64_t ia, std::int64_t ib) {
    const float u = a.data[static_cast<std::size_t>(ia)], v = b.data[static_cast<std::size_t>(ib)];
    y.data[static_cast<std::size_t>(i)] =
        op == Binary::kAdd ? u + v : op == Binary::kSub ? u - v : op == Binary::kMul ? u * v : u / v;
  });
  return y;
}

Tensor binary_backward(Binary op, const Tensor& a, const Tensor& b, const Tensor& dy, int which) {
  const Tensor& self = which == 0 ? a : b;
  Tensor grad(self.shape);
  for_each_broadcast(dy.shape, a.shape, b.shape, [&](std::int64_t i, std::int64_t ia, std::int64_t ib) {
    const float g = dy.data[static_cast<std::size_t>(i)];
    const float u = a.data[static_cast<std::size_t>(ia)], v = b.data[static_cast<std::size_t>(ib)];
    float d = 0.0f;
    switch (op) {
      case Binary::kAdd: d = g; break;
      case Binary::kSub: d = which == 0 ? g : -g; break;
      case Binary::kMul: d = which == 0 ? g * v : g * u; break;
      case Binary::kDiv:
        if (which != 0) fail(ErrorCode::kUnsupported, "gradient through a Div denominator is unsupported");
        d = g / v;
        break;
    }
    grad.data[static_cast<std::size_t>(which == 0 ? ia : ib)] += d;
  });
  return grad;
}

namespace {

std::size_t concat_axis(const Node& n, int rank) {
  std::int64_t axis = n.get_int("axis", 1);
  if (axis < 0) axis += rank;
  if (axis < 0 || axis >= rank) bad(n, "axis out of range");
  return static_cast<std::size_t>(axis);
}

}  // namespace

Tensor concat(const Node& n, const std::vector<const Tensor*>& xs) {
  if (xs.empty()) bad(n, "no inputs");
  const std::size_t axis = concat_axis(n, xs[0]->rank());
  Shape out = xs[0]->shape;
  out[axis] = 0;
  for (const Tensor* t : xs) {
    if (t->rank() != xs[0]->rank()) bad(n, "rank mismatch");
    out[axis] += t->shape[axis];
  }
  std::int64_t outer = 1, inner = 1;
  for (std::size_t i = 0; i < axis; ++i) outer *= out[i];
  for (std::size_t i = axis + 1; i < out.size(); ++i) inner *= out[i];
  Tensor y(out);
  std::int64_t offset = 0;
  for (const Tensor* t : xs) {
    const std::int64_t chunk = t->shape[axis] * inner;
    for (std::int64_t o = 0; o < outer; ++o) {
      std::copy_n(t->data.begin() + o * chunk, chunk, y.data.begin() + o * out[axis] * inner + offset);
    }
    offset += chunk;
  }
  return y;
}

Tensor concat_backward(const Node& n, const std::vector<const Tensor*>& xs, const Tensor& dy, int which) {
  const std::size_t axis = concat_axis(n, xs[0]->rank());
  std::int64_t outer = 1, inner = 1;
  for (std::size_t i = 0; i < axis; ++i) outer *= dy.shape[i];
  for (std::size_t i = axis + 1; i < dy.shape.size(); ++i) inner *= dy.shape[i];
  std::int64_t offset = 0;
  for (int i = 0; i < which; ++i) offset += xs[static_cast<std::size_t>(i)]->shape[axis] * inner;
  const Tensor& self = *xs[static_cast<std::size_t>(which)];
  const std::int64_t chunk = self.shape[axis] * inner;
  Tensor dx(self.shape);
  for (std::int64_t o = 0; o < outer; ++o) {
    std::copy_n(dy.data.begin() + o * dy.shape[axis] * inner + offset, chunk, dx.data.begin() + o * chunk);
  }
  return dx;
}

Tensor batch_norm(const Node& n, const Tensor& x, const Tensor& scale, const Tensor& bias, const Tensor& mean,
                  const Tensor& var) {
  if (x.rank() < 2) bad(n, "expected at least rank-2 input");
  const float eps = n.get_float("epsilon", 1e-5f);
  const std::int64_t c = x.dim(1);
  std::int64_t inner = 1;
  for (int i = 2; i < x.rank(); ++i) inner *= x.dim(i);
  Tensor y = x;
  for (std::int64_t b = 0; b < x.dim(0); ++b) {
    for (std::int64_t ch = 0; ch < c; ++ch) {
      const auto k = static_cast<std::size_t>(ch);
      const float mul = scale.data[k] / std::sqrt(var.data[k] + eps);
      const float add = bias.data[k] - mean.data[k] * mul;
      float* p = y.data.data() + (b * c + ch) * inner;
      for (std::int64_t i = 0; i < inner; ++i) p[i] = p[i] * mul + add;
    }
  }
  return y;
}

Tensor batch_norm_backward(const Node& n, const Tensor& scale, const Tensor& var, const Tensor& dy) {
  const float eps = n.get_float("epsilon", 1e-5f);
  const std::int64_t c = dy.dim(1);
  std::int64_t inner = 1;
  for (int i = 2; i < dy.rank(); ++i) inner *= dy.dim(i);
  Tensor dx = dy;
  for (std::int64_t b = 0; b < dy.dim(0); ++b) {
    for (std::int64_t ch = 0; ch < c; ++ch) {
      const auto k = static_cast<std::size_t>(ch);
      const float mul = scale.data[k] / std::sqrt(var.data[k] + eps);
      float* p = dx.data.data() + (b * c + ch) * inner;
      for (std::int64_t i = 0; i < inner; ++i) p[i] *= mul;
    }
  }
  return dx;
}

}  // namespace camb::nn::ops
