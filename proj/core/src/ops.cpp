#include "sfde/ops.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <limits>
#include <numeric>
#include <string>

namespace sfde::ops {
namespace {

using std::size_t;

template <typename T>
Tape<T>& tape_of(Var<T> v) {
  if (!v.valid()) throw ValidationError("operation received an unbound Var");
  return v.tape();
}

void require_rank(const Shape& s, size_t rank, const char* op) {
  if (s.size() != rank) {
    throw ShapeError(std::string(op) + ": expected rank " + std::to_string(rank) + ", got shape " +
                     to_string(s));
  }
}

// Output positions o in [lo, hi) whose tap lands inside the input:
// 0 <= o * stride - pad + offset < in.
std::pair<long, long> valid_range(long in, long out, long stride, long pad, long offset) {
  const long lead = pad - offset;
  long lo = lead <= 0 ? 0 : (lead + stride - 1) / stride;
  const long num = in - 1 + pad - offset;
  long hi = num < 0 ? 0 : num / stride + 1;
  hi = std::min(hi, out);
  lo = std::min(lo, hi);
  return {lo, hi};
}

struct ConvGeom {
  size_t n, c, h, w, o, kh, kw, oh, ow, stride, pad, dil, groups, cin_g, cout_g;
  bool pointwise() const { return kh == 1 && kw == 1 && stride == 1 && pad == 0; }
};

template <typename T>
void conv_forward(const ConvGeom& g, const T* x, const T* wt, const T* bias, T* y) {
  const size_t in_plane = g.h * g.w;
  const size_t out_plane = g.oh * g.ow;
  for (size_t n = 0; n < g.n; ++n) {
    for (size_t oc = 0; oc < g.o; ++oc) {
      T* yp = y + (n * g.o + oc) * out_plane;
      std::fill(yp, yp + out_plane, bias ? bias[oc] : T(0));
      const size_t grp = oc / g.cout_g;
      for (size_t icl = 0; icl < g.cin_g; ++icl) {
        const size_t ic = grp * g.cin_g + icl;
        const T* xp = x + (n * g.c + ic) * in_plane;
        const T* wp = wt + (oc * g.cin_g + icl) * g.kh * g.kw;
        if (g.pointwise()) {
          const T wv = wp[0];
          for (size_t i = 0; i < out_plane; ++i) yp[i] += wv * xp[i];
          continue;
        }
        for (size_t a = 0; a < g.kh; ++a) {
          auto [oh_lo, oh_hi] = valid_range(g.h, g.oh, g.stride, g.pad, a * g.dil);
          for (size_t b = 0; b < g.kw; ++b) {
            const T wv = wp[a * g.kw + b];
            auto [ow_lo, ow_hi] = valid_range(g.w, g.ow, g.stride, g.pad, b * g.dil);
            if (ow_lo >= ow_hi) continue;
            for (long oh = oh_lo; oh < oh_hi; ++oh) {
              const long ih = oh * long(g.stride) - long(g.pad) + long(a * g.dil);
              const T* xr = xp + ih * g.w;
              T* yr = yp + oh * g.ow;
              const long base = -long(g.pad) + long(b * g.dil);
              if (g.stride == 1) {
                for (long ow = ow_lo; ow < ow_hi; ++ow) yr[ow] += wv * xr[ow + base];
              } else {
                for (long ow = ow_lo; ow < ow_hi; ++ow) yr[ow] += wv * xr[ow * long(g.stride) + base];
              }
            }
          }
        }
      }
    }
  }
}

template <typename T>
void conv_backward(const ConvGeom& g, const T* x, const T* wt, const T* gy, T* gx, T* gw, T* gb) {
  const size_t in_plane = g.h * g.w;
  const size_t out_plane = g.oh * g.ow;
  for (size_t n = 0; n < g.n; ++n) {
    for (size_t oc = 0; oc < g.o; ++oc) {
      const T* gyp = gy + (n * g.o + oc) * out_plane;
      if (gb) {
        T acc = 0;
        for (size_t i = 0; i < out_plane; ++i) acc += gyp[i];
        gb[oc] += acc;
      }
      const size_t grp = oc / g.cout_g;
      for (size_t icl = 0; icl < g.cin_g; ++icl) {
        const size_t ic = grp * g.cin_g + icl;
        const T* xp = x + (n * g.c + ic) * in_plane;
        T* gxp = gx ? gx + (n * g.c + ic) * in_plane : nullptr;
        const T* wp = wt + (oc * g.cin_g + icl) * g.kh * g.kw;
        T* gwp = gw ? gw + (oc * g.cin_g + icl) * g.kh * g.kw : nullptr;
        if (g.pointwise()) {
          if (gxp) {
            const T wv = wp[0];
            for (size_t i = 0; i < out_plane; ++i) gxp[i] += wv * gyp[i];
          }
          if (gwp) {
            T acc = 0;
            for (size_t i = 0; i < out_plane; ++i) acc += gyp[i] * xp[i];
            gwp[0] += acc;
          }
          continue;
        }
        for (size_t a = 0; a < g.kh; ++a) {
          auto [oh_lo, oh_hi] = valid_range(g.h, g.oh, g.stride, g.pad, a * g.dil);
          for (size_t b = 0; b < g.kw; ++b) {
            auto [ow_lo, ow_hi] = valid_range(g.w, g.ow, g.stride, g.pad, b * g.dil);
            if (ow_lo >= ow_hi) continue;
            const T wv = wp[a * g.kw + b];
            const long base = -long(g.pad) + long(b * g.dil);
            T acc = 0;
            for (long oh = oh_lo; oh < oh_hi; ++oh) {
              const long ih = oh * long(g.stride) - long(g.pad) + long(a * g.dil);
              const T* xr = xp + ih * g.w;
              const T* gyr = gyp + oh * g.ow;
              if (gxp) {
                T* gxr = gxp + ih * g.w;
                for (long ow = ow_lo; ow < ow_hi; ++ow) gxr[ow * long(g.stride) + base] += wv * gyr[ow];
              }
              if (gwp) {
                for (long ow = ow_lo; ow < ow_hi; ++ow) acc += gyr[ow] * xr[ow * long(g.stride) + base];
              }
            }
            if (gwp) gwp[a * g.kw + b] += acc;
          }
        }
      }
    }
  }
}

template <typename T, typename F, typename DF>
Var<T> unary(Var<T> x, F f, DF df) {
  Tape<T>& tape = tape_of(x);
  const Tensor<T>& xv = x.value();
  Tensor<T> y(xv.shape());
  for (size_t i = 0; i < xv.size(); ++i) y[i] = f(xv[i]);
  const bool rg = tape.requires_grad(x);
  Tensor<T> saved = rg ? y : Tensor<T>();
  return tape.record(std::move(y), rg, [x, saved, df](Tape<T>& t, const Tensor<T>& g) {
    const Tensor<T>& xv2 = t.value(x);
    Tensor<T>& gx = t.grad_slot(x);
    for (size_t i = 0; i < g.size(); ++i) gx[i] += g[i] * df(xv2[i], saved[i]);
  });
}

constexpr double kInvSqrt2 = 0.70710678118654752440;
constexpr double kInvSqrt2Pi = 0.39894228040143267794;

struct Broadcast {
  Shape out;
  std::array<size_t, 4> dims{};
  std::array<size_t, 4> sa{}, sb{};
};

Broadcast broadcast_plan(const Shape& a, const Shape& b, const char* op) {
  if (a.size() != b.size() || a.size() > 4 || a.empty()) {
    throw ShapeError(std::string(op) + ": cannot broadcast " + to_string(a) + " with " + to_string(b));
  }
  Broadcast p;
  const size_t r = a.size();
  p.out.resize(r);
  for (size_t i = 0; i < r; ++i) {
    if (a[i] != b[i] && a[i] != 1 && b[i] != 1) {
      throw ShapeError(std::string(op) + ": cannot broadcast " + to_string(a) + " with " + to_string(b));
    }
    p.out[i] = std::max(a[i], b[i]);
  }
  // Left-pad to rank 4.
  std::array<size_t, 4> da{1, 1, 1, 1}, db{1, 1, 1, 1};
  for (size_t i = 0; i < r; ++i) {
    p.dims[4 - r + i] = p.out[i];
    da[4 - r + i] = a[i];
    db[4 - r + i] = b[i];
  }
  for (size_t i = 0; i < 4 - r; ++i) p.dims[i] = 1;
  size_t ra = 1, rb = 1;
  for (size_t i = 4; i-- > 0;) {
    p.sa[i] = da[i] == 1 ? 0 : ra;
    p.sb[i] = db[i] == 1 ? 0 : rb;
    ra *= da[i];
    rb *= db[i];
  }
  return p;
}

// Visits every output element with its (a, b) source offsets.
template <typename F>
void for_each_broadcast(const Broadcast& p, F f) {
  size_t o = 0;
  for (size_t i0 = 0; i0 < p.dims[0]; ++i0)
    for (size_t i1 = 0; i1 < p.dims[1]; ++i1)
      for (size_t i2 = 0; i2 < p.dims[2]; ++i2) {
        size_t ia = i0 * p.sa[0] + i1 * p.sa[1] + i2 * p.sa[2];
        size_t ib = i0 * p.sb[0] + i1 * p.sb[1] + i2 * p.sb[2];
        for (size_t i3 = 0; i3 < p.dims[3]; ++i3, ++o) {
          f(o, ia, ib);
          ia += p.sa[3];
          ib += p.sb[3];
        }
      }
}

enum class BinOp { Add, Sub, Mul };

template <typename T>
Var<T> binary(Var<T> a, Var<T> b, BinOp op, const char* name) {
  Tape<T>& tape = tape_of(a);
  const Tensor<T>& av = a.value();
  const Tensor<T>& bv = b.value();
  const bool same = av.shape() == bv.shape();
  Broadcast plan = same ? Broadcast{} : broadcast_plan(av.shape(), bv.shape(), name);
  Tensor<T> y(same ? av.shape() : plan.out);
  auto apply = [op](T x, T z) {
    switch (op) {
      case BinOp::Add: return x + z;
      case BinOp::Sub: return x - z;
      case BinOp::Mul: return x * z;
    }
    return T(0);
  };
  if (same) {
    for (size_t i = 0; i < y.size(); ++i) y[i] = apply(av[i], bv[i]);
  } else {
    for_each_broadcast(plan, [&](size_t o, size_t ia, size_t ib) { y[o] = apply(av[ia], bv[ib]); });
  }
  const bool rg = tape.any_requires_grad({a, b});
  return tape.record(std::move(y), rg, [a, b, op, same, plan](Tape<T>& t, const Tensor<T>& g) {
    const bool ga_on = t.requires_grad(a);
    const bool gb_on = t.requires_grad(b);
    const Tensor<T>& av2 = t.value(a);
    const Tensor<T>& bv2 = t.value(b);
    Tensor<T>* ga = ga_on ? &t.grad_slot(a) : nullptr;
    Tensor<T>* gb = gb_on ? &t.grad_slot(b) : nullptr;
    auto step = [&](size_t o, size_t ia, size_t ib) {
      const T go = g[o];
      switch (op) {
        case BinOp::Add:
          if (ga) (*ga)[ia] += go;
          if (gb) (*gb)[ib] += go;
          break;
        case BinOp::Sub:
          if (ga) (*ga)[ia] += go;
          if (gb) (*gb)[ib] -= go;
          break;
        case BinOp::Mul:
          if (ga) (*ga)[ia] += go * bv2[ib];
          if (gb) (*gb)[ib] += go * av2[ia];
          break;
      }
    };
    if (same) {
      for (size_t i = 0; i < g.size(); ++i) step(i, i, i);
    } else {
      for_each_broadcast(plan, step);
    }
  });
}

// View of a tensor as [outer, mid, inner] around `axis`.
struct AxisView {
  size_t outer = 1, mid = 1, inner = 1;
};

AxisView axis_view(const Shape& s, size_t axis) {
  AxisView v;
  for (size_t i = 0; i < axis; ++i) v.outer *= s[i];
  v.mid = s[axis];
  for (size_t i = axis + 1; i < s.size(); ++i) v.inner *= s[i];
  return v;
}

template <typename T>
Var<T> concat_axis(const std::vector<Var<T>>& parts, size_t axis, const char* name) {
  if (parts.empty()) throw ShapeError(std::string(name) + ": no inputs");
  Tape<T>& tape = tape_of(parts[0]);
  Shape ref = parts[0].shape();
  if (ref.size() <= axis) throw ShapeError(std::string(name) + ": rank too small " + to_string(ref));
  size_t total = 0;
  for (const auto& p : parts) {
    Shape s = p.shape();
    if (s.size() != ref.size()) throw ShapeError(std::string(name) + ": rank mismatch");
    for (size_t i = 0; i < s.size(); ++i) {
      if (i != axis && s[i] != ref[i]) {
        throw ShapeError(std::string(name) + ": incompatible shapes " + to_string(ref) + " and " + to_string(s));
      }
    }
    total += s[axis];
  }
  Shape out_shape = ref;
  out_shape[axis] = total;
  Tensor<T> y(out_shape);
  const AxisView ov = axis_view(out_shape, axis);
  std::vector<size_t> offsets;
  size_t off = 0;
  bool rg = false;
  for (const auto& p : parts) {
    const Tensor<T>& pv = p.value();
    const AxisView v = axis_view(pv.shape(), axis);
    for (size_t o = 0; o < v.outer; ++o) {
      const T* src = pv.data() + o * v.mid * v.inner;
      T* dst = y.data() + (o * ov.mid + off) * ov.inner;
      std::copy(src, src + v.mid * v.inner, dst);
    }
    offsets.push_back(off);
    off += v.mid;
    rg = rg || tape.requires_grad(p);
  }
  return tape.record(std::move(y), rg, [parts, offsets, axis, ov](Tape<T>& t, const Tensor<T>& g) {
    for (size_t k = 0; k < parts.size(); ++k) {
      if (!t.requires_grad(parts[k])) continue;
      Tensor<T>& gp = t.grad_slot(parts[k]);
      const AxisView v = axis_view(gp.shape(), axis);
      for (size_t o = 0; o < v.outer; ++o) {
        const T* src = g.data() + (o * ov.mid + offsets[k]) * ov.inner;
        T* dst = gp.data() + o * v.mid * v.inner;
        for (size_t i = 0; i < v.mid * v.inner; ++i) dst[i] += src[i];
      }
    }
  });
}

template <typename T>
Var<T> slice_axis(Var<T> x, size_t axis, size_t start, size_t count, const char* name) {
  Tape<T>& tape = tape_of(x);
  const Shape& s = x.shape();
  if (s.size() <= axis || count == 0 || start + count > s[axis]) {
    throw ShapeError(std::string(name) + ": slice [" + std::to_string(start) + ", +" + std::to_string(count) +
                     ") out of range for " + to_string(s));
  }
  Shape out_shape = s;
  out_shape[axis] = count;
  Tensor<T> y(out_shape);
  const AxisView v = axis_view(s, axis);
  for (size_t o = 0; o < v.outer; ++o) {
    const T* src = x.value().data() + (o * v.mid + start) * v.inner;
    std::copy(src, src + count * v.inner, y.data() + o * count * v.inner);
  }
  return tape.record(std::move(y), tape.requires_grad(x), [x, v, start, count](Tape<T>& t, const Tensor<T>& g) {
    Tensor<T>& gx = t.grad_slot(x);
    for (size_t o = 0; o < v.outer; ++o) {
      T* dst = gx.data() + (o * v.mid + start) * v.inner;
      const T* src = g.data() + o * count * v.inner;
      for (size_t i = 0; i < count * v.inner; ++i) dst[i] += src[i];
    }
  });
}

struct PoolWindow {
  size_t begin, end;
};

std::vector<PoolWindow> adaptive_windows(size_t in, size_t out) {
  std::vector<PoolWindow> w(out);
  for (size_t i = 0; i < out; ++i) {
    w[i].begin = (i * in) / out;
    w[i].end = ((i + 1) * in + out - 1) / out;
  }
  return w;
}

}  // namespace

std::size_t same_padding(std::size_t kernel, std::size_t dilation) {
  if (kernel % 2 == 0) throw ConfigError("same padding needs an odd kernel, got " + std::to_string(kernel));
  return dilation * (kernel - 1) / 2;
}

std::size_t conv_output_extent(std::size_t in, std::size_t kernel, const Conv2dSpec& spec) {
  const std::size_t span = spec.dilation * (kernel - 1) + 1;
  if (in + 2 * spec.padding < span) {
    throw ShapeError("conv2d: input extent " + std::to_string(in) + " with padding " +
                     std::to_string(spec.padding) + " is smaller than the dilated kernel span " +
                     std::to_string(span));
  }
  return (in + 2 * spec.padding - span) / spec.stride + 1;
}

template <typename T>
Var<T> conv2d(Var<T> x, Var<T> weight, Var<T> bias, const Conv2dSpec& spec) {
  Tape<T>& tape = tape_of(x);
  const Shape& xs = x.shape();
  const Shape& ws = weight.shape();
  require_rank(xs, 4, "conv2d input");
  require_rank(ws, 4, "conv2d weight");
  if (spec.stride == 0 || spec.dilation == 0 || spec.groups == 0) {
    throw ConfigError("conv2d: stride, dilation and groups must be positive");
  }
  ConvGeom g{};
  g.n = xs[0];
  g.c = xs[1];
  g.h = xs[2];
  g.w = xs[3];
  g.o = ws[0];
  g.kh = ws[2];
  g.kw = ws[3];
  g.stride = spec.stride;
  g.pad = spec.padding;
  g.dil = spec.dilation;
  g.groups = spec.groups;
  if (g.c % g.groups != 0 || g.o % g.groups != 0 || ws[1] * g.groups != g.c) {
    throw ShapeError("conv2d: input has " + std::to_string(g.c) + " channels but weight " + to_string(ws) +
                     " with groups=" + std::to_string(g.groups) + " expects " +
                     std::to_string(ws[1] * g.groups));
  }
  g.cin_g = g.c / g.groups;
  g.cout_g = g.o / g.groups;
  if (bias.valid() && (bias.shape().size() != 1 || bias.shape()[0] != g.o)) {
    throw ShapeError("conv2d: bias shape " + to_string(bias.shape()) + " does not match " + std::to_string(g.o) +
                     " output channels");
  }
  g.oh = conv_output_extent(g.h, g.kh, spec);
  g.ow = conv_output_extent(g.w, g.kw, spec);
  Tensor<T> y({g.n, g.o, g.oh, g.ow});
  conv_forward(g, x.value().data(), weight.value().data(), bias.valid() ? bias.value().data() : nullptr, y.data());
  const bool rg = tape.any_requires_grad({x, weight, bias});
  return tape.record(std::move(y), rg, [x, weight, bias, g](Tape<T>& t, const Tensor<T>& gy) {
    T* gx = t.requires_grad(x) ? t.grad_slot(x).data() : nullptr;
    T* gw = t.requires_grad(weight) ? t.grad_slot(weight).data() : nullptr;
    T* gb = bias.valid() && t.requires_grad(bias) ? t.grad_slot(bias).data() : nullptr;
    conv_backward(g, t.value(x).data(), t.value(weight).data(), gy.data(), gx, gw, gb);
  });
}

template <typename T>
Var<T> conv2d(Var<T> x, Var<T> weight, const Conv2dSpec& spec) {
  return conv2d(x, weight, Var<T>(), spec);
}

template <typename T>
Var<T> batch_norm(Var<T> x, Var<T> gamma, Var<T> beta, Parameter<T>& running_mean, Parameter<T>& running_var,
                  Mode mode, const BatchNormSpec& spec) {
  Tape<T>& tape = tape_of(x);
  const Shape& s = x.shape();
  if (s.size() != 2 && s.size() != 4) throw ShapeError("batch_norm: expected rank 2 or 4, got " + to_string(s));
  const size_t n = s[0];
  const size_t c = s[1];
  const size_t inner = s.size() == 4 ? s[2] * s[3] : 1;
  for (const Shape* ps : {&gamma.shape(), &beta.shape(), &running_mean.value.shape(), &running_var.value.shape()}) {
    if (ps->size() != 1 || (*ps)[0] != c) {
      throw ShapeError("batch_norm: per-channel tensor " + to_string(*ps) + " does not match " +
                       std::to_string(c) + " channels");
    }
  }
  if (mode == Mode::Train && n < 2) {
    throw ValidationError("batch_norm: train mode needs a batch of at least 2 (got " + std::to_string(n) +
                          "); batch variance is undefined");
  }
  const size_t count = n * inner;
  const Tensor<T>& xv = x.value();
  const Tensor<T>& gv = gamma.value();
  const Tensor<T>& bv = beta.value();
  Tensor<T> y(s);
  Tensor<T> xhat(s);
  std::vector<T> inv_std(c);
  for (size_t ch = 0; ch < c; ++ch) {
    double mean_c = 0.0, var_c = 0.0;
    if (mode == Mode::Train) {
      for (size_t i = 0; i < n; ++i) {
        const T* p = xv.data() + (i * c + ch) * inner;
        for (size_t j = 0; j < inner; ++j) mean_c += p[j];
      }
      mean_c /= double(count);
      for (size_t i = 0; i < n; ++i) {
        const T* p = xv.data() + (i * c + ch) * inner;
        for (size_t j = 0; j < inner; ++j) {
          const double d = p[j] - mean_c;
          var_c += d * d;
        }
      }
      var_c /= double(count);
      const double m = spec.momentum;
      running_mean.value[ch] = T((1.0 - m) * running_mean.value[ch] + m * mean_c);
      const double unbiased = count > 1 ? var_c * double(count) / double(count - 1) : var_c;
      running_var.value[ch] = T((1.0 - m) * running_var.value[ch] + m * unbiased);
    } else {
      mean_c = running_mean.value[ch];
      var_c = running_var.value[ch];
    }
    const double is = 1.0 / std::sqrt(var_c + spec.epsilon);
    inv_std[ch] = T(is);
    for (size_t i = 0; i < n; ++i) {
      const size_t base = (i * c + ch) * inner;
      for (size_t j = 0; j < inner; ++j) {
        const T xh = T((xv[base + j] - mean_c) * is);
        xhat[base + j] = xh;
        y[base + j] = gv[ch] * xh + bv[ch];
      }
    }
  }
  const bool rg = tape.any_requires_grad({x, gamma, beta});
  return tape.record(std::move(y), rg,
                     [x, gamma, beta, xhat = std::move(xhat), inv_std, n, c, inner, mode](Tape<T>& t,
                                                                                       const Tensor<T>& g) {
                       const Tensor<T>& gv2 = t.value(gamma);
                       T* gx = t.requires_grad(x) ? t.grad_slot(x).data() : nullptr;
                       T* gg = t.requires_grad(gamma) ? t.grad_slot(gamma).data() : nullptr;
                       T* gb = t.requires_grad(beta) ? t.grad_slot(beta).data() : nullptr;
                       const double count = double(n * inner);
                       for (size_t ch = 0; ch < c; ++ch) {
                         double sum_g = 0.0, sum_gx = 0.0;
                         for (size_t i = 0; i < n; ++i) {
                           const size_t base = (i * c + ch) * inner;
                           for (size_t j = 0; j < inner; ++j) {
                             sum_g += g[base + j];
                             sum_gx += double(g[base + j]) * xhat[base + j];
                           }
                         }
                         if (gg) gg[ch] += T(sum_gx);
                         if (gb) gb[ch] += T(sum_g);
                         if (!gx) continue;
                         const double scale_c = double(gv2[ch]) * inv_std[ch];
                         for (size_t i = 0; i < n; ++i) {
                           const size_t base = (i * c + ch) * inner;
                           for (size_t j = 0; j < inner; ++j) {
                             if (mode == Mode::Train) {
                               gx[base + j] += T(scale_c / count *
                                                 (count * g[base + j] - sum_g - xhat[base + j] * sum_gx));
                             } else {
                               gx[base + j] += T(scale_c * g[base + j]);
                             }
                           }
                         }
                       }
                     });
}

double sigmoid_scalar(double x) {
  if (x >= 0) return 1.0 / (1.0 + std::exp(-x));
  const double e = std::exp(x);
  return e / (1.0 + e);
}

double gelu_scalar(double x) { return 0.5 * x * (1.0 + std::erf(x * kInvSqrt2)); }

double softplus_scalar(double x) { return x > 0 ? x + std::log1p(std::exp(-x)) : std::log1p(std::exp(x)); }

std::vector<double> softmax_values(std::span<const double> logits) {
  std::vector<double> out(logits.size());
  if (logits.empty()) return out;
  const double m = *std::max_element(logits.begin(), logits.end());
  double z = 0.0;
  for (size_t i = 0; i < logits.size(); ++i) z += (out[i] = std::exp(logits[i] - m));
  for (auto& v : out) v /= z;
  return out;
}

template <typename T>
Var<T> relu(Var<T> x) {
  return unary(x, [](T v) { return v > T(0) ? v : T(0); }, [](T v, T) { return v > T(0) ? T(1) : T(0); });
}

template <typename T>
Var<T> gelu(Var<T> x) {
  return unary(
      x, [](T v) { return T(gelu_scalar(v)); },
      [](T v, T) {
        const double d = 0.5 * (1.0 + std::erf(v * kInvSqrt2)) + v * kInvSqrt2Pi * std::exp(-0.5 * double(v) * v);
        return T(d);
      });
}

template <typename T>
Var<T> sigmoid(Var<T> x) {
  const T lo = std::numeric_limits<T>::min();
  const T hi = std::nextafter(T(1), T(0));
  return unary(
      x, [lo, hi](T v) { return std::clamp(T(sigmoid_scalar(v)), lo, hi); }, [](T, T y) { return y * (T(1) - y); });
}

template <typename T>
Var<T> softplus(Var<T> x) {
  return unary(x, [](T v) { return T(softplus_scalar(v)); }, [](T v, T) { return T(sigmoid_scalar(v)); });
}

template <typename T>
Var<T> softmax(Var<T> x) {
  Tape<T>& tape = tape_of(x);
  const Tensor<T>& xv = x.value();
  const size_t len = xv.shape().back();
  const size_t rows = xv.size() / len;
  Tensor<T> y(xv.shape());
  for (size_t r = 0; r < rows; ++r) {
    const T* in = xv.data() + r * len;
    T* out = y.data() + r * len;
    const T m = *std::max_element(in, in + len);
    double z = 0.0;
    for (size_t i = 0; i < len; ++i) z += (out[i] = T(std::exp(double(in[i] - m))));
    for (size_t i = 0; i < len; ++i) out[i] = T(out[i] / z);
  }
  Tensor<T> saved = y;
  return tape.record(std::move(y), tape.requires_grad(x), [x, saved, rows, len](Tape<T>& t, const Tensor<T>& g) {
    Tensor<T>& gx = t.grad_slot(x);
    for (size_t r = 0; r < rows; ++r) {
      const T* yr = saved.data() + r * len;
      const T* gr = g.data() + r * len;
      double dot = 0.0;
      for (size_t i = 0; i < len; ++i) dot += double(gr[i]) * yr[i];
      for (size_t i = 0; i < len; ++i) gx[r * len + i] += T(yr[i] * (gr[i] - dot));
    }
  });
}

template <typename T>
Var<T> add(Var<T> a, Var<T> b) {
  return binary(a, b, BinOp::Add, "add");
}
template <typename T>
Var<T> sub(Var<T> a, Var<T> b) {
  return binary(a, b, BinOp::Sub, "sub");
}
template <typename T>
Var<T> mul(Var<T> a, Var<T> b) {
  return binary(a, b, BinOp::Mul, "mul");
}

template <typename T>
Var<T> scale(Var<T> x, double factor) {
  const T f = T(factor);
  return unary(x, [f](T v) { return v * f; }, [f](T, T) { return f; });
}

template <typename T>
Var<T> add_scalar(Var<T> x, double offset) {
  const T o = T(offset);
  return unary(x, [o](T v) { return v + o; }, [](T, T) { return T(1); });
}

template <typename T>
Var<T> one_minus(Var<T> x) {
  return unary(x, [](T v) { return T(1) - v; }, [](T, T) { return T(-1); });
}

template <typename T>
Var<T> scale_by_element(Var<T> x, Var<T> w, std::size_t index) {
  Tape<T>& tape = tape_of(x);
  if (index >= w.value().size()) throw ShapeError("scale_by_element: index out of range");
  const T s = w.value()[index];
  Tensor<T> y = x.value();
  for (auto& v : y.values()) v *= s;
  return tape.record(std::move(y), tape.any_requires_grad({x, w}), [x, w, index](Tape<T>& t, const Tensor<T>& g) {
    const T s2 = t.value(w)[index];
    if (t.requires_grad(x)) {
      Tensor<T>& gx = t.grad_slot(x);
      for (size_t i = 0; i < g.size(); ++i) gx[i] += g[i] * s2;
    }
    if (t.requires_grad(w)) {
      const Tensor<T>& xv = t.value(x);
      double acc = 0.0;
      for (size_t i = 0; i < g.size(); ++i) acc += double(g[i]) * xv[i];
      t.grad_slot(w)[index] += T(acc);
    }
  });
}

template <typename T>
Var<T> concat_channels(const std::vector<Var<T>>& parts) {
  return concat_axis(parts, 1, "concat_channels");
}

template <typename T>
Var<T> concat_batch(const std::vector<Var<T>>& parts) {
  return concat_axis(parts, 0, "concat_batch");
}

template <typename T>
Var<T> slice_channels(Var<T> x, std::size_t start, std::size_t count) {
  return slice_axis(x, 1, start, count, "slice_channels");
}

template <typename T>
Var<T> slice_batch(Var<T> x, std::size_t start, std::size_t count) {
  return slice_axis(x, 0, start, count, "slice_batch");
}

template <typename T>
Var<T> reshape(Var<T> x, Shape shape) {
  Tape<T>& tape = tape_of(x);
  Tensor<T> y = x.value().reshaped(std::move(shape));
  return tape.record(std::move(y), tape.requires_grad(x), [x](Tape<T>& t, const Tensor<T>& g) {
    Tensor<T>& gx = t.grad_slot(x);
    for (size_t i = 0; i < g.size(); ++i) gx[i] += g[i];
  });
}

template <typename T>
Var<T> transpose_last2(Var<T> x) {
  Tape<T>& tape = tape_of(x);
  const Shape& s = x.shape();
  require_rank(s, 3, "transpose_last2");
  const size_t b = s[0], r = s[1], c = s[2];
  Tensor<T> y({b, c, r});
  const Tensor<T>& xv = x.value();
  for (size_t k = 0; k < b; ++k)
    for (size_t i = 0; i < r; ++i)
      for (size_t j = 0; j < c; ++j) y[(k * c + j) * r + i] = xv[(k * r + i) * c + j];
  return tape.record(std::move(y), tape.requires_grad(x), [x, b, r, c](Tape<T>& t, const Tensor<T>& g) {
    Tensor<T>& gx = t.grad_slot(x);
    for (size_t k = 0; k < b; ++k)
      for (size_t i = 0; i < r; ++i)
        for (size_t j = 0; j < c; ++j) gx[(k * r + i) * c + j] += g[(k * c + j) * r + i];
  });
}

template <typename T>
Var<T> adaptive_avg_pool(Var<T> x, std::size_t out_h, std::size_t out_w) {
  Tape<T>& tape = tape_of(x);
  const Shape& s = x.shape();
  require_rank(s, 4, "adaptive_avg_pool");
  if (out_h == 0 || out_w == 0) throw ShapeError("adaptive_avg_pool: output extents must be positive");
  if (out_h > s[2] || out_w > s[3]) {
    throw ShapeError("adaptive_avg_pool: output grid " + std::to_string(out_h) + "x" + std::to_string(out_w) +
                     " exceeds input " + to_string(s));
  }
  const size_t planes = s[0] * s[1], h = s[2], w = s[3];
  auto rows = adaptive_windows(h, out_h);
  auto cols = adaptive_windows(w, out_w);
  Tensor<T> y({s[0], s[1], out_h, out_w});
  const Tensor<T>& xv = x.value();
  for (size_t p = 0; p < planes; ++p) {
    const T* xp = xv.data() + p * h * w;
    for (size_t i = 0; i < out_h; ++i)
      for (size_t j = 0; j < out_w; ++j) {
        double acc = 0.0;
        for (size_t r = rows[i].begin; r < rows[i].end; ++r)
          for (size_t q = cols[j].begin; q < cols[j].end; ++q) acc += xp[r * w + q];
        const double cnt = double((rows[i].end - rows[i].begin) * (cols[j].end - cols[j].begin));
        y[(p * out_h + i) * out_w + j] = T(acc / cnt);
      }
  }
  return tape.record(std::move(y), tape.requires_grad(x),
                     [x, rows, cols, planes, h, w, out_h, out_w](Tape<T>& t, const Tensor<T>& g) {
                       Tensor<T>& gx = t.grad_slot(x);
                       for (size_t p = 0; p < planes; ++p) {
                         T* gp = gx.data() + p * h * w;
                         for (size_t i = 0; i < out_h; ++i)
                           for (size_t j = 0; j < out_w; ++j) {
                             const double cnt =
                                 double((rows[i].end - rows[i].begin) * (cols[j].end - cols[j].begin));
                             const T share = T(g[(p * out_h + i) * out_w + j] / cnt);
                             for (size_t r = rows[i].begin; r < rows[i].end; ++r)
                               for (size_t q = cols[j].begin; q < cols[j].end; ++q) gp[r * w + q] += share;
                           }
                       }
                     });
}

template <typename T>
Var<T> global_avg_pool(Var<T> x) {
  require_rank(x.shape(), 4, "global_avg_pool");
  return adaptive_avg_pool(x, 1, 1);
}

std::vector<BilinearTap> bilinear_taps(std::size_t in, std::size_t out) {
  std::vector<BilinearTap> taps(out);
  const double ratio = double(in) / double(out);
  for (size_t o = 0; o < out; ++o) {
    double src = (double(o) + 0.5) * ratio - 0.5;
    if (src < 0) src = 0;
    size_t i0 = static_cast<size_t>(std::floor(src));
    if (i0 > in - 1) i0 = in - 1;
    const size_t i1 = std::min(i0 + 1, in - 1);
    taps[o] = {i0, i1, src - double(i0)};
  }
  return taps;
}

template <typename T>
Var<T> upsample_bilinear(Var<T> x, std::size_t out_h, std::size_t out_w) {
  Tape<T>& tape = tape_of(x);
  const Shape& s = x.shape();
  require_rank(s, 4, "upsample_bilinear");
  if (out_h < s[2] || out_w < s[3]) {
    throw ShapeError("upsample_bilinear: target " + std::to_string(out_h) + "x" + std::to_string(out_w) +
                     " is smaller than input " + to_string(s));
  }
  const size_t planes = s[0] * s[1], h = s[2], w = s[3];
  auto rt = bilinear_taps(h, out_h);
  auto ct = bilinear_taps(w, out_w);
  Tensor<T> y({s[0], s[1], out_h, out_w});
  const Tensor<T>& xv = x.value();
  for (size_t p = 0; p < planes; ++p) {
    const T* xp = xv.data() + p * h * w;
    T* yp = y.data() + p * out_h * out_w;
    for (size_t i = 0; i < out_h; ++i) {
      const auto& r = rt[i];
      for (size_t j = 0; j < out_w; ++j) {
        const auto& c = ct[j];
        const double top = (1 - c.frac) * xp[r.i0 * w + c.i0] + c.frac * xp[r.i0 * w + c.i1];
        const double bot = (1 - c.frac) * xp[r.i1 * w + c.i0] + c.frac * xp[r.i1 * w + c.i1];
        yp[i * out_w + j] = T((1 - r.frac) * top + r.frac * bot);
      }
    }
  }
  return tape.record(std::move(y), tape.requires_grad(x),
                     [x, rt, ct, planes, h, w, out_h, out_w](Tape<T>& t, const Tensor<T>& g) {
                       Tensor<T>& gx = t.grad_slot(x);
                       for (size_t p = 0; p < planes; ++p) {
                         T* gp = gx.data() + p * h * w;
                         const T* gy = g.data() + p * out_h * out_w;
                         for (size_t i = 0; i < out_h; ++i) {
                           const auto& r = rt[i];
                           for (size_t j = 0; j < out_w; ++j) {
                             const auto& c = ct[j];
                             const double v = gy[i * out_w + j];
                             gp[r.i0 * w + c.i0] += T(v * (1 - r.frac) * (1 - c.frac));
                             gp[r.i0 * w + c.i1] += T(v * (1 - r.frac) * c.frac);
                             gp[r.i1 * w + c.i0] += T(v * r.frac * (1 - c.frac));
                             gp[r.i1 * w + c.i1] += T(v * r.frac * c.frac);
                           }
                         }
                       }
                     });
}

template <typename T>
Var<T> gem_pool(Var<T> x, Var<T> p) {
  Tape<T>& tape = tape_of(x);
  const Shape& s = x.shape();
  require_rank(s, 4, "gem_pool");
  if (p.value().size() != 1) throw ShapeError("gem_pool: exponent must be a single value");
  const double pv = p.value()[0];
  if (!(pv >= 1.0)) throw ValidationError("gem_pool: exponent p=" + std::to_string(pv) + " is below 1");
  const size_t planes = s[0] * s[1], m = s[2] * s[3];
  Tensor<T> y({s[0], s[1], 1, 1});
  std::vector<double> zmax(planes), mean_r(planes);
  const Tensor<T>& xv = x.value();
  for (size_t q = 0; q < planes; ++q) {
    const T* xp = xv.data() + q * m;
    double mx = kGemClamp;
    for (size_t i = 0; i < m; ++i) mx = std::max(mx, double(xp[i]));
    double acc = 0.0;
    for (size_t i = 0; i < m; ++i) acc += std::pow(std::max(double(xp[i]), kGemClamp) / mx, pv);
    acc /= double(m);
    zmax[q] = mx;
    mean_r[q] = acc;
    y[q] = T(mx * std::pow(acc, 1.0 / pv));
  }
  Tensor<T> saved_y = y;
  return tape.record(std::move(y), tape.any_requires_grad({x, p}),
                     [x, p, zmax, mean_r, saved_y, planes, m](Tape<T>& t, const Tensor<T>& g) {
                       const double pv2 = t.value(p)[0];
                       const Tensor<T>& xv2 = t.value(x);
                       T* gx = t.requires_grad(x) ? t.grad_slot(x).data() : nullptr;
                       double gp_acc = 0.0;
                       for (size_t q = 0; q < planes; ++q) {
                         const T* xp = xv2.data() + q * m;
                         const double mr = mean_r[q];
                         const double lead = std::pow(mr, 1.0 / pv2 - 1.0) / double(m);
                         double sum_rp_logr = 0.0;
                         for (size_t i = 0; i < m; ++i) {
                           const double z = std::max(double(xp[i]), kGemClamp);
                           const double r = z / zmax[q];
                           if (gx && double(xp[i]) > kGemClamp) gx[q * m + i] += T(g[q] * lead * std::pow(r, pv2 - 1.0));
                           sum_rp_logr += std::pow(r, pv2) * std::log(r);
                         }
                         const double dy_dp =
                             double(saved_y[q]) / pv2 * (sum_rp_logr / (double(m) * mr) - std::log(mr) / pv2);
                         gp_acc += double(g[q]) * dy_dp;
                       }
                       if (t.requires_grad(p)) t.grad_slot(p)[0] += T(gp_acc);
                     });
}

template <typename T>
Var<T> linear(Var<T> x, Var<T> weight, Var<T> bias) {
  Tape<T>& tape = tape_of(x);
  const Shape& xs = x.shape();
  const Shape& ws = weight.shape();
  require_rank(xs, 2, "linear input");
  require_rank(ws, 2, "linear weight");
  const size_t m = xs[0], in = xs[1], out = ws[0];
  if (ws[1] != in) {
    throw ShapeError("linear: input width " + std::to_string(in) + " does not match weight " + to_string(ws));
  }
  if (bias.valid() && (bias.shape().size() != 1 || bias.shape()[0] != out)) {
    throw ShapeError("linear: bias shape " + to_string(bias.shape()) + " does not match " + std::to_string(out));
  }
  Tensor<T> y({m, out});
  const T* xd = x.value().data();
  const T* wd = weight.value().data();
  for (size_t i = 0; i < m; ++i)
    for (size_t o = 0; o < out; ++o) {
      T acc = bias.valid() ? bias.value()[o] : T(0);
      const T* xr = xd + i * in;
      const T* wr = wd + o * in;
      for (size_t k = 0; k < in; ++k) acc += xr[k] * wr[k];
      y[i * out + o] = acc;
    }
  return tape.record(std::move(y), tape.any_requires_grad({x, weight, bias}),
                     [x, weight, bias, m, in, out](Tape<T>& t, const Tensor<T>& g) {
                       const T* xd2 = t.value(x).data();
                       const T* wd2 = t.value(weight).data();
                       if (t.requires_grad(x)) {
                         T* gx = t.grad_slot(x).data();
                         for (size_t i = 0; i < m; ++i)
                           for (size_t o = 0; o < out; ++o) {
                             const T go = g[i * out + o];
                             const T* wr = wd2 + o * in;
                             T* gxr = gx + i * in;
                             for (size_t k = 0; k < in; ++k) gxr[k] += go * wr[k];
                           }
                       }
                       if (t.requires_grad(weight)) {
                         T* gw = t.grad_slot(weight).data();
                         for (size_t i = 0; i < m; ++i)
                           for (size_t o = 0; o < out; ++o) {
                             const T go = g[i * out + o];
                             const T* xr = xd2 + i * in;
                             T* gwr = gw + o * in;
                             for (size_t k = 0; k < in; ++k) gwr[k] += go * xr[k];
                           }
                       }
                       if (bias.valid() && t.requires_grad(bias)) {
                         T* gb = t.grad_slot(bias).data();
                         for (size_t i = 0; i < m; ++i)
                           for (size_t o = 0; o < out; ++o) gb[o] += g[i * out + o];
                       }
                     });
}

template <typename T>
Var<T> attention(Var<T> q, Var<T> k, Var<T> v, std::size_t batch, std::size_t heads, AttentionProbe<T>* probe) {
  Tape<T>& tape = tape_of(q);
  const Shape& qs = q.shape();
  require_rank(qs, 2, "attention");
  if (k.shape() != qs || v.shape() != qs) throw ShapeError("attention: q, k, v shapes differ");
  if (batch == 0 || qs[0] % batch != 0) throw ShapeError("attention: rows not divisible by batch");
  const size_t c = qs[1];
  if (heads == 0 || c % heads != 0) {
    throw ConfigError("attention: channel width " + std::to_string(c) + " is not divisible by " +
                      std::to_string(heads) + " heads");
  }
  const size_t seq = qs[0] / batch, d = c / heads;
  const double inv_scale = 1.0 / std::sqrt(double(d));
  const T* qd = q.value().data();
  const T* kd = k.value().data();
  const T* vd = v.value().data();
  std::vector<T> probs(batch * heads * seq * seq);
  Tensor<T> out({qs[0], c});
  std::vector<double> row(seq);
  for (size_t b = 0; b < batch; ++b)
    for (size_t h = 0; h < heads; ++h) {
      T* pb = probs.data() + (b * heads + h) * seq * seq;
      for (size_t i = 0; i < seq; ++i) {
        const T* qi = qd + (b * seq + i) * c + h * d;
        double mx = -std::numeric_limits<double>::infinity();
        for (size_t j = 0; j < seq; ++j) {
          const T* kj = kd + (b * seq + j) * c + h * d;
          double acc = 0.0;
          for (size_t e = 0; e < d; ++e) acc += double(qi[e]) * kj[e];
          row[j] = acc * inv_scale;
          mx = std::max(mx, row[j]);
        }
        double z = 0.0;
        for (size_t j = 0; j < seq; ++j) z += (row[j] = std::exp(row[j] - mx));
        T* oi = out.data() + (b * seq + i) * c + h * d;
        for (size_t j = 0; j < seq; ++j) {
          const double pij = row[j] / z;
          pb[i * seq + j] = T(pij);
          const T* vj = vd + (b * seq + j) * c + h * d;
          for (size_t e = 0; e < d; ++e) oi[e] += T(pij * vj[e]);
        }
      }
    }
  if (probe) {
    probe->batch = batch;
    probe->heads = heads;
    probe->seq = seq;
    probe->weights = probs;
  }
  return tape.record(
      std::move(out), tape.any_requires_grad({q, k, v}),
      [q, k, v, probs = std::move(probs), batch, heads, seq, c, d, inv_scale](Tape<T>& t, const Tensor<T>& g) {
        const T* qd2 = t.value(q).data();
        const T* kd2 = t.value(k).data();
        const T* vd2 = t.value(v).data();
        T* gq = t.requires_grad(q) ? t.grad_slot(q).data() : nullptr;
        T* gk = t.requires_grad(k) ? t.grad_slot(k).data() : nullptr;
        T* gv = t.requires_grad(v) ? t.grad_slot(v).data() : nullptr;
        std::vector<double> dp(seq);
        for (size_t b = 0; b < batch; ++b)
          for (size_t h = 0; h < heads; ++h) {
            const T* pb = probs.data() + (b * heads + h) * seq * seq;
            for (size_t i = 0; i < seq; ++i) {
              const T* goi = g.data() + (b * seq + i) * c + h * d;
              double dot = 0.0;
              for (size_t j = 0; j < seq; ++j) {
                const T* vj = vd2 + (b * seq + j) * c + h * d;
                double acc = 0.0;
                for (size_t e = 0; e < d; ++e) acc += double(goi[e]) * vj[e];
                dp[j] = acc;
                dot += acc * pb[i * seq + j];
                if (gv) {
                  T* gvj = gv + (b * seq + j) * c + h * d;
                  for (size_t e = 0; e < d; ++e) gvj[e] += pb[i * seq + j] * goi[e];
                }
              }
              const T* qi = qd2 + (b * seq + i) * c + h * d;
              T* gqi = gq ? gq + (b * seq + i) * c + h * d : nullptr;
              for (size_t j = 0; j < seq; ++j) {
                const double ds = pb[i * seq + j] * (dp[j] - dot) * inv_scale;
                const T* kj = kd2 + (b * seq + j) * c + h * d;
                if (gqi)
                  for (size_t e = 0; e < d; ++e) gqi[e] += T(ds * kj[e]);
                if (gk) {
                  T* gkj = gk + (b * seq + j) * c + h * d;
                  for (size_t e = 0; e < d; ++e) gkj[e] += T(ds * qi[e]);
                }
              }
            }
          }
      });
}

template <typename T>
Var<T> multi_head_attention(Var<T> tokens, const AttentionWeights<T>& w, std::size_t heads,
                            AttentionProbe<T>* probe) {
  const Shape s = tokens.shape();
  require_rank(s, 3, "multi_head_attention");
  const size_t n = s[0], len = s[1], c = s[2];
  if (heads == 0 || c % heads != 0) {
    throw ConfigError("multi_head_attention: width " + std::to_string(c) + " not divisible by " +
                      std::to_string(heads) + " heads");
  }
  Var<T> flat = reshape(tokens, {n * len, c});
  Var<T> q = linear(flat, w.wq, w.bq);
  Var<T> k = linear(flat, w.wk, w.bk);
  Var<T> v = linear(flat, w.wv, w.bv);
  Var<T> ctx = attention(q, k, v, n, heads, probe);
  Var<T> o = linear(ctx, w.wo, w.bo);
  return reshape(o, {n, len, c});
}

template <typename T>
Var<T> dropout(Var<T> x, double rate, Mode mode, Rng& rng) {
  if (mode != Mode::Train || rate <= 0.0) return x;
  if (rate >= 1.0) throw ConfigError("dropout rate must be below 1");
  Tape<T>& tape = tape_of(x);
  const Tensor<T>& xv = x.value();
  const T keep_scale = T(1.0 / (1.0 - rate));
  Tensor<T> mask(xv.shape());
  Tensor<T> y(xv.shape());
  for (size_t i = 0; i < xv.size(); ++i) {
    mask[i] = rng.uniform() >= rate ? keep_scale : T(0);
    y[i] = xv[i] * mask[i];
  }
  return tape.record(std::move(y), tape.requires_grad(x), [x, mask](Tape<T>& t, const Tensor<T>& g) {
    Tensor<T>& gx = t.grad_slot(x);
    for (size_t i = 0; i < g.size(); ++i) gx[i] += g[i] * mask[i];
  });
}

template <typename T>
Var<T> l2_normalize_rows(Var<T> x) {
  Tape<T>& tape = tape_of(x);
  const Shape& s = x.shape();
  require_rank(s, 2, "l2_normalize_rows");
  const size_t n = s[0], d = s[1];
  Tensor<T> y(s);
  std::vector<double> norms(n);
  const Tensor<T>& xv = x.value();
  for (size_t i = 0; i < n; ++i) {
    double acc = 0.0;
    for (size_t j = 0; j < d; ++j) acc += double(xv[i * d + j]) * xv[i * d + j];
    norms[i] = std::max(std::sqrt(acc), 1e-12);
    for (size_t j = 0; j < d; ++j) y[i * d + j] = T(xv[i * d + j] / norms[i]);
  }
  Tensor<T> saved = y;
  return tape.record(std::move(y), tape.requires_grad(x), [x, saved, norms, n, d](Tape<T>& t, const Tensor<T>& g) {
    Tensor<T>& gx = t.grad_slot(x);
    for (size_t i = 0; i < n; ++i) {
      double dot = 0.0;
      for (size_t j = 0; j < d; ++j) dot += double(g[i * d + j]) * saved[i * d + j];
      for (size_t j = 0; j < d; ++j) gx[i * d + j] += T((g[i * d + j] - saved[i * d + j] * dot) / norms[i]);
    }
  });
}

template <typename T>
Var<T> sum(Var<T> x) {
  Tape<T>& tape = tape_of(x);
  double acc = 0.0;
  for (T v : x.value().values()) acc += v;
  return tape.record(Tensor<T>({1}, std::vector<T>{T(static_cast<double>(acc))}), tape.requires_grad(x),
                     [x](Tape<T>& t, const Tensor<T>& g) {
                       Tensor<T>& gx = t.grad_slot(x);
                       for (auto& v : gx.values()) v += g[0];
                     });
}

template <typename T>
Var<T> mean(Var<T> x) {
  return scale(sum(x), 1.0 / double(x.value().size()));
}

template <typename T>
Var<T> weighted_sum(const std::vector<Var<T>>& terms, const std::vector<double>& weights) {
  if (terms.empty() || terms.size() != weights.size()) {
    throw ValidationError("weighted_sum: term and weight counts differ");
  }
  Tape<T>& tape = tape_of(terms[0]);
  long double acc = 0.0L;
  bool rg = false;
  for (size_t i = 0; i < terms.size(); ++i) {
    if (terms[i].value().size() != 1) throw ShapeError("weighted_sum: terms must be scalars");
    acc += static_cast<long double>(weights[i]) * static_cast<long double>(terms[i].value()[0]);
    rg = rg || tape.requires_grad(terms[i]);
  }
  return tape.record(Tensor<T>({1}, std::vector<T>{T(static_cast<double>(acc))}), rg, [terms, weights](Tape<T>& t, const Tensor<T>& g) {
    for (size_t i = 0; i < terms.size(); ++i) {
      if (t.requires_grad(terms[i])) t.grad_slot(terms[i])[0] += T(weights[i] * g[0]);
    }
  });
}

template <typename T>
Var<T> cross_entropy(Var<T> logits, std::span<const std::size_t> labels) {
  Tape<T>& tape = tape_of(logits);
  const Shape& s = logits.shape();
  require_rank(s, 2, "cross_entropy");
  const size_t m = s[0], classes = s[1];
  if (labels.size() != m) throw ShapeError("cross_entropy: label count does not match rows");
  for (auto l : labels) {
    if (l >= classes) {
      throw ValidationError("cross_entropy: label " + std::to_string(l) + " out of range for " +
                            std::to_string(classes) + " classes");
    }
  }
  const Tensor<T>& lv = logits.value();
  Tensor<T> probs(s);
  double loss = 0.0;
  for (size_t i = 0; i < m; ++i) {
    const T* r = lv.data() + i * classes;
    double mx = r[0];
    for (size_t j = 1; j < classes; ++j) mx = std::max(mx, double(r[j]));
    double z = 0.0;
    for (size_t j = 0; j < classes; ++j) z += std::exp(double(r[j]) - mx);
    const double lse = mx + std::log(z);
    loss += lse - double(r[labels[i]]);
    for (size_t j = 0; j < classes; ++j) probs[i * classes + j] = T(std::exp(double(r[j]) - lse));
  }
  loss /= double(m);
  std::vector<std::size_t> lab(labels.begin(), labels.end());
  return tape.record(Tensor<T>({1}, std::vector<T>{T(loss)}), tape.requires_grad(logits),
                     [logits, probs, lab, m, classes](Tape<T>& t, const Tensor<T>& g) {
                       Tensor<T>& gl = t.grad_slot(logits);
                       const double f = double(g[0]) / double(m);
                       for (size_t i = 0; i < m; ++i)
                         for (size_t j = 0; j < classes; ++j) {
                           const double target = j == lab[i] ? 1.0 : 0.0;
                           gl[i * classes + j] += T(f * (probs[i * classes + j] - target));
                         }
                     });
}

template <typename T>
Var<T> info_nce(Var<T> a, Var<T> b, Var<T> log_temperature) {
  Tape<T>& tape = tape_of(a);
  const Shape& s = a.shape();
  require_rank(s, 2, "info_nce");
  if (b.shape() != s) throw ShapeError("info_nce: embedding lists differ in shape");
  if (log_temperature.value().size() != 1) throw ShapeError("info_nce: temperature must be a scalar");
  const size_t n = s[0], d = s[1];
  if (n < 2) throw ValidationError("info_nce: needs at least 2 pairs for in-batch negatives");
  const double scale_v = std::exp(-double(log_temperature.value()[0]));
  const T* ad = a.value().data();
  const T* bd = b.value().data();
  std::vector<double> sim(n * n);
  for (size_t i = 0; i < n; ++i)
    for (size_t j = 0; j < n; ++j) {
      double acc = 0.0;
      for (size_t e = 0; e < d; ++e) acc += double(ad[i * d + e]) * bd[j * d + e];
      sim[i * n + j] = scale_v * acc;
    }
  std::vector<double> prow(n * n), pcol(n * n);
  double loss = 0.0;
  for (size_t i = 0; i < n; ++i) {
    double mx = sim[i * n];
    for (size_t j = 1; j < n; ++j) mx = std::max(mx, sim[i * n + j]);
    double z = 0.0;
    for (size_t j = 0; j < n; ++j) z += std::exp(sim[i * n + j] - mx);
    const double lse = mx + std::log(z);
    loss += lse - sim[i * n + i];
    for (size_t j = 0; j < n; ++j) prow[i * n + j] = std::exp(sim[i * n + j] - lse);
  }
  for (size_t j = 0; j < n; ++j) {
    double mx = sim[j];
    for (size_t i = 1; i < n; ++i) mx = std::max(mx, sim[i * n + j]);
    double z = 0.0;
    for (size_t i = 0; i < n; ++i) z += std::exp(sim[i * n + j] - mx);
    const double lse = mx + std::log(z);
    loss += lse - sim[j * n + j];
    for (size_t i = 0; i < n; ++i) pcol[i * n + j] = std::exp(sim[i * n + j] - lse);
  }
  loss /= 2.0 * double(n);
  return tape.record(
      Tensor<T>({1}, std::vector<T>{T(loss)}), tape.any_requires_grad({a, b, log_temperature}),
      [a, b, log_temperature, sim, prow, pcol, n, d, scale_v](Tape<T>& t, const Tensor<T>& g) {
        const T* ad2 = t.value(a).data();
        const T* bd2 = t.value(b).data();
        T* ga = t.requires_grad(a) ? t.grad_slot(a).data() : nullptr;
        T* gb = t.requires_grad(b) ? t.grad_slot(b).data() : nullptr;
        double g_lt = 0.0;
        const double f = double(g[0]) / (2.0 * double(n));
        for (size_t i = 0; i < n; ++i)
          for (size_t j = 0; j < n; ++j) {
            const double gs = f * (prow[i * n + j] + pcol[i * n + j] - (i == j ? 2.0 : 0.0));
            g_lt -= gs * sim[i * n + j];
            const double w = gs * scale_v;
            if (ga)
              for (size_t e = 0; e < d; ++e) ga[i * d + e] += T(w * bd2[j * d + e]);
            if (gb)
              for (size_t e = 0; e < d; ++e) gb[j * d + e] += T(w * ad2[i * d + e]);
          }
        if (t.requires_grad(log_temperature)) t.grad_slot(log_temperature)[0] += T(g_lt);
      });
}

#define SFDE_INSTANTIATE_OPS(T)                                                                               \
  template Var<T> conv2d<T>(Var<T>, Var<T>, Var<T>, const Conv2dSpec&);                                      \
  template Var<T> conv2d<T>(Var<T>, Var<T>, const Conv2dSpec&);                                              \
  template Var<T> batch_norm<T>(Var<T>, Var<T>, Var<T>, Parameter<T>&, Parameter<T>&, Mode,                  \
                                const BatchNormSpec&);                                                       \
  template Var<T> relu<T>(Var<T>);                                                                           \
  template Var<T> gelu<T>(Var<T>);                                                                           \
  template Var<T> sigmoid<T>(Var<T>);                                                                        \
  template Var<T> softplus<T>(Var<T>);                                                                       \
  template Var<T> softmax<T>(Var<T>);                                                                        \
  template Var<T> add<T>(Var<T>, Var<T>);                                                                    \
  template Var<T> sub<T>(Var<T>, Var<T>);                                                                    \
  template Var<T> mul<T>(Var<T>, Var<T>);                                                                    \
  template Var<T> scale<T>(Var<T>, double);                                                                  \
  template Var<T> add_scalar<T>(Var<T>, double);                                                             \
  template Var<T> one_minus<T>(Var<T>);                                                                      \
  template Var<T> scale_by_element<T>(Var<T>, Var<T>, std::size_t);                                          \
  template Var<T> concat_channels<T>(const std::vector<Var<T>>&);                                            \
  template Var<T> concat_batch<T>(const std::vector<Var<T>>&);                                               \
  template Var<T> slice_channels<T>(Var<T>, std::size_t, std::size_t);                                       \
  template Var<T> slice_batch<T>(Var<T>, std::size_t, std::size_t);                                          \
  template Var<T> reshape<T>(Var<T>, Shape);                                                                 \
  template Var<T> transpose_last2<T>(Var<T>);                                                                \
  template Var<T> adaptive_avg_pool<T>(Var<T>, std::size_t, std::size_t);                                    \
  template Var<T> global_avg_pool<T>(Var<T>);                                                                \
  template Var<T> upsample_bilinear<T>(Var<T>, std::size_t, std::size_t);                                    \
  template Var<T> gem_pool<T>(Var<T>, Var<T>);                                                               \
  template Var<T> linear<T>(Var<T>, Var<T>, Var<T>);                                                         \
  template Var<T> attention<T>(Var<T>, Var<T>, Var<T>, std::size_t, std::size_t, AttentionProbe<T>*);        \
  template Var<T> multi_head_attention<T>(Var<T>, const AttentionWeights<T>&, std::size_t,                   \
                                          AttentionProbe<T>*);                                               \
  template Var<T> dropout<T>(Var<T>, double, Mode, Rng&);                                                    \
  template Var<T> l2_normalize_rows<T>(Var<T>);                                                              \
  template Var<T> sum<T>(Var<T>);                                                                            \
  template Var<T> mean<T>(Var<T>);                                                                           \
  template Var<T> weighted_sum<T>(const std::vector<Var<T>>&, const std::vector<double>&);                   \
  template Var<T> cross_entropy<T>(Var<T>, std::span<const std::size_t>);                                    \
  template Var<T> info_nce<T>(Var<T>, Var<T>, Var<T>);

SFDE_INSTANTIATE_OPS(float)
SFDE_INSTANTIATE_OPS(double)

}  // namespace sfde::ops
