#include "sfde/spectral.hpp"

#include <atomic>
#include <cmath>
#include <numbers>
#include <string>

namespace sfde::spectral {
namespace {

using cd = std::complex<double>;

std::atomic<bool> g_corrupt_inverse{false};

std::size_t smallest_factor(std::size_t n) {
  for (std::size_t p = 2; p * p <= n; ++p) {
    if (n % p == 0) return p;
  }
  return n;
}

// Mixed-radix decimation in time; prime lengths fall back to a direct sum.
void transform(const cd* in, std::size_t n, std::size_t stride, cd* out, double sign) {
  if (n == 1) {
    out[0] = in[0];
    return;
  }
  std::vector<cd> twiddle(n);
  for (std::size_t t = 0; t < n; ++t) {
    const double angle = sign * 2.0 * std::numbers::pi * double(t) / double(n);
    twiddle[t] = cd(std::cos(angle), std::sin(angle));
  }
  const std::size_t p = smallest_factor(n);
  if (p == n) {
    for (std::size_t k = 0; k < n; ++k) {
      cd acc = 0;
      for (std::size_t j = 0; j < n; ++j) acc += in[j * stride] * twiddle[(j * k) % n];
      out[k] = acc;
    }
    return;
  }
  const std::size_t m = n / p;
  std::vector<cd> sub(n);
  for (std::size_t j = 0; j < p; ++j) transform(in + j * stride, m, stride * p, sub.data() + j * m, sign);
  for (std::size_t q = 0; q < p; ++q)
    for (std::size_t k = 0; k < m; ++k) {
      const std::size_t idx = k + m * q;
      cd acc = 0;
      for (std::size_t j = 0; j < p; ++j) acc += sub[j * m + k] * twiddle[(j * idx) % n];
      out[idx] = acc;
    }
}

struct Layout {
  std::size_t planes, h, w, wh;
};

Layout spatial_layout(const Shape& s, const char* op) {
  if (s.size() < 2) throw ShapeError(std::string(op) + ": need at least 2 axes, got " + to_string(s));
  Layout l{1, s[s.size() - 2], s[s.size() - 1], 0};
  for (std::size_t i = 0; i + 2 < s.size(); ++i) l.planes *= s[i];
  if (l.h < 2 || l.w < 2) throw ShapeError(std::string(op) + ": H and W must be at least 2, got " + to_string(s));
  l.wh = half_width(l.w);
  return l;
}

bool self_conjugate(std::size_t u, std::size_t v, const Layout& l) {
  const bool row = u == 0 || (l.h % 2 == 0 && u == l.h / 2);
  const bool col = v == 0 || (l.w % 2 == 0 && v == l.w / 2);
  return row && col;
}

double column_weight(std::size_t v, std::size_t w) {
  return (v == 0 || (w % 2 == 0 && v == w / 2)) ? 1.0 : 2.0;
}

// x: planes * h * w; re/im: planes * h * wh.
void forward_core(const double* x, const Layout& l, double* re, double* im) {
  std::vector<cd> row(l.w), row_out(l.w), col(l.h), col_out(l.h);
  std::vector<cd> half(l.h * l.wh);
  for (std::size_t p = 0; p < l.planes; ++p) {
    const double* xp = x + p * l.h * l.w;
    for (std::size_t r = 0; r < l.h; ++r) {
      for (std::size_t c = 0; c < l.w; ++c) row[c] = xp[r * l.w + c];
      transform(row.data(), l.w, 1, row_out.data(), -1.0);
      for (std::size_t v = 0; v < l.wh; ++v) half[r * l.wh + v] = row_out[v];
    }
    for (std::size_t v = 0; v < l.wh; ++v) {
      for (std::size_t r = 0; r < l.h; ++r) col[r] = half[r * l.wh + v];
      transform(col.data(), l.h, 1, col_out.data(), -1.0);
      for (std::size_t u = 0; u < l.h; ++u) {
        const std::size_t o = (p * l.h + u) * l.wh + v;
        re[o] = col_out[u].real();
        im[o] = self_conjugate(u, v, l) ? 0.0 : col_out[u].imag();
      }
    }
  }
}

void inverse_core(const double* re, const double* im, const Layout& l, double* x) {
  std::vector<cd> col(l.h), col_out(l.h), row(l.w), row_out(l.w);
  std::vector<cd> mixed(l.h * l.wh);
  double scale = 1.0 / double(l.h * l.w);
  if (g_corrupt_inverse.load()) scale *= 2.0;
  for (std::size_t p = 0; p < l.planes; ++p) {
    for (std::size_t v = 0; v < l.wh; ++v) {
      for (std::size_t u = 0; u < l.h; ++u) {
        const std::size_t o = (p * l.h + u) * l.wh + v;
        col[u] = cd(re[o], im[o]);
      }
      transform(col.data(), l.h, 1, col_out.data(), 1.0);
      for (std::size_t r = 0; r < l.h; ++r) mixed[r * l.wh + v] = col_out[r];
    }
    double* xp = x + p * l.h * l.w;
    for (std::size_t r = 0; r < l.h; ++r) {
      for (std::size_t v = 0; v < l.wh; ++v) row[v] = mixed[r * l.wh + v];
      for (std::size_t v = l.wh; v < l.w; ++v) row[v] = std::conj(mixed[r * l.wh + (l.w - v)]);
      transform(row.data(), l.w, 1, row_out.data(), 1.0);
      for (std::size_t c = 0; c < l.w; ++c) xp[r * l.w + c] = row_out[c].real() * scale;
    }
  }
}

template <typename T>
std::vector<double> to_double(const Tensor<T>& t) {
  return std::vector<double>(t.values().begin(), t.values().end());
}

template <typename T>
Tensor<T> from_double(Shape shape, const std::vector<double>& v) {
  return Tensor<T>(std::move(shape), std::vector<T>(v.begin(), v.end()));
}

Shape spectrum_shape(const Shape& spatial, std::size_t wh) {
  Shape s = spatial;
  s.back() = wh;
  return s;
}

void require_packed(const Shape& s, const char* op) {
  if (s.size() < 3 || s.back() != 2) {
    throw ShapeError(std::string(op) + ": expected a packed spectrum [..., H, W', 2], got " + to_string(s));
  }
}

}  // namespace

void fft(std::vector<std::complex<double>>& data, bool inverse) {
  if (data.empty()) return;
  std::vector<cd> out(data.size());
  transform(data.data(), data.size(), 1, out.data(), inverse ? 1.0 : -1.0);
  data = std::move(out);
}

double phase_of(double re, double im) {
  if (re == 0.0 && im == 0.0) return 0.0;
  const double angle = std::atan2(im, re);
  return angle <= -std::numbers::pi ? std::numbers::pi : angle;
}

template <typename T>
ComplexSpectrum<T> rfft2(const Tensor<T>& x) {
  const Layout l = spatial_layout(x.shape(), "rfft2");
  const auto xd = to_double(x);
  std::vector<double> re(l.planes * l.h * l.wh), im(re.size());
  forward_core(xd.data(), l, re.data(), im.data());
  const Shape s = spectrum_shape(x.shape(), l.wh);
  return {from_double<T>(s, re), from_double<T>(s, im), l.w};
}

template <typename T>
Tensor<T> irfft2(const ComplexSpectrum<T>& s) {
  s.real.require_same_shape(s.imag, "irfft2");
  Shape spatial = s.shape();
  if (spatial.size() < 2 || half_width(s.source_width) != spatial.back()) {
    throw ShapeError("irfft2: half width " + std::to_string(spatial.empty() ? 0 : spatial.back()) +
                     " does not match source width " + std::to_string(s.source_width));
  }
  spatial.back() = s.source_width;
  const Layout l = spatial_layout(spatial, "irfft2");
  const auto re = to_double(s.real);
  const auto im = to_double(s.imag);
  std::vector<double> x(l.planes * l.h * l.w);
  inverse_core(re.data(), im.data(), l, x.data());
  return from_double<T>(spatial, x);
}

template <typename T>
Tensor<T> amplitude(const ComplexSpectrum<T>& s) {
  Tensor<T> a(s.shape());
  for (std::size_t i = 0; i < a.size(); ++i) a[i] = T(std::hypot(double(s.real[i]), double(s.imag[i])));
  return a;
}

template <typename T>
Tensor<T> phase(const ComplexSpectrum<T>& s) {
  Tensor<T> p(s.shape());
  for (std::size_t i = 0; i < p.size(); ++i) p[i] = T(phase_of(s.real[i], s.imag[i]));
  return p;
}

template <typename T>
ComplexSpectrum<T> polar_recompose(const Tensor<T>& amp, const Tensor<T>& phi, std::size_t source_width) {
  amp.require_same_shape(phi, "polar_recompose");
  ComplexSpectrum<T> s{Tensor<T>(amp.shape()), Tensor<T>(amp.shape()), source_width};
  for (std::size_t i = 0; i < amp.size(); ++i) {
    if (amp[i] < T(0)) {
      throw ValidationError("polar_recompose: negative amplitude " + std::to_string(double(amp[i])) + " at index " +
                            std::to_string(i));
    }
    s.real[i] = T(double(amp[i]) * std::cos(double(phi[i])));
    s.imag[i] = T(double(amp[i]) * std::sin(double(phi[i])));
  }
  return s;
}

template <typename T>
Tensor<T> interleave(const ComplexSpectrum<T>& s) {
  Shape packed = s.shape();
  packed.push_back(2);
  Tensor<T> out(packed);
  for (std::size_t i = 0; i < s.real.size(); ++i) {
    out[2 * i] = s.real[i];
    out[2 * i + 1] = s.imag[i];
  }
  return out;
}

template <typename T>
ComplexSpectrum<T> deinterleave(const Tensor<T>& packed, std::size_t source_width) {
  require_packed(packed.shape(), "deinterleave");
  Shape s(packed.shape().begin(), packed.shape().end() - 1);
  ComplexSpectrum<T> out{Tensor<T>(s), Tensor<T>(s), source_width};
  for (std::size_t i = 0; i < out.real.size(); ++i) {
    out.real[i] = packed[2 * i];
    out.imag[i] = packed[2 * i + 1];
  }
  return out;
}

template <typename T>
Var<T> rfft2(Var<T> x) {
  Tape<T>& tape = x.tape();
  const Layout l = spatial_layout(x.shape(), "rfft2");
  Tensor<T> y = interleave(rfft2(x.value()));
  return tape.record(std::move(y), tape.requires_grad(x), [x, l](Tape<T>& t, const Tensor<T>& g) {
    std::vector<double> re(l.planes * l.h * l.wh), im(re.size());
    for (std::size_t i = 0; i < re.size(); ++i) {
      const double cw = column_weight(i % l.wh, l.w);
      re[i] = g[2 * i] / cw;
      im[i] = g[2 * i + 1] / cw;
    }
    std::vector<double> dx(l.planes * l.h * l.w);
    const bool corrupted = g_corrupt_inverse.exchange(false);
    inverse_core(re.data(), im.data(), l, dx.data());
    g_corrupt_inverse.store(corrupted);
    Tensor<T>& gx = t.grad_slot(x);
    const double hw = double(l.h * l.w);
    for (std::size_t i = 0; i < dx.size(); ++i) gx[i] += T(dx[i] * hw);
  });
}

template <typename T>
Var<T> irfft2(Var<T> s, std::size_t source_width) {
  Tape<T>& tape = s.tape();
  require_packed(s.shape(), "irfft2");
  Tensor<T> y = irfft2(deinterleave(s.value(), source_width));
  const Layout l = spatial_layout(y.shape(), "irfft2");
  return tape.record(std::move(y), tape.requires_grad(s), [s, l](Tape<T>& t, const Tensor<T>& g) {
    const auto gd = to_double(g);
    std::vector<double> re(l.planes * l.h * l.wh), im(re.size());
    forward_core(gd.data(), l, re.data(), im.data());
    Tensor<T>& gs = t.grad_slot(s);
    const double hw = double(l.h * l.w);
    for (std::size_t i = 0; i < re.size(); ++i) {
      const double f = column_weight(i % l.wh, l.w) / hw;
      gs[2 * i] += T(re[i] * f);
      gs[2 * i + 1] += T(im[i] * f);
    }
  });
}

template <typename T>
Var<T> amplitude(Var<T> s) {
  Tape<T>& tape = s.tape();
  require_packed(s.shape(), "amplitude");
  const Tensor<T>& sv = s.value();
  Shape out_shape(sv.shape().begin(), sv.shape().end() - 1);
  Tensor<T> a(out_shape);
  for (std::size_t i = 0; i < a.size(); ++i) a[i] = T(std::hypot(double(sv[2 * i]), double(sv[2 * i + 1])));
  return tape.record(std::move(a), tape.requires_grad(s), [s](Tape<T>& t, const Tensor<T>& g) {
    const Tensor<T>& sv2 = t.value(s);
    Tensor<T>& gs = t.grad_slot(s);
    for (std::size_t i = 0; i < g.size(); ++i) {
      const double re = sv2[2 * i], im = sv2[2 * i + 1];
      const double r = std::hypot(re, im);
      if (r == 0.0) continue;
      gs[2 * i] += T(g[i] * re / r);
      gs[2 * i + 1] += T(g[i] * im / r);
    }
  });
}

template <typename T>
Var<T> phase(Var<T> s) {
  Tape<T>& tape = s.tape();
  require_packed(s.shape(), "phase");
  const Tensor<T>& sv = s.value();
  Shape out_shape(sv.shape().begin(), sv.shape().end() - 1);
  Tensor<T> p(out_shape);
  for (std::size_t i = 0; i < p.size(); ++i) p[i] = T(phase_of(sv[2 * i], sv[2 * i + 1]));
  return tape.record(std::move(p), tape.requires_grad(s), [s](Tape<T>& t, const Tensor<T>& g) {
    const Tensor<T>& sv2 = t.value(s);
    Tensor<T>& gs = t.grad_slot(s);
    for (std::size_t i = 0; i < g.size(); ++i) {
      const double re = sv2[2 * i], im = sv2[2 * i + 1];
      const double r2 = re * re + im * im;
      if (r2 == 0.0) continue;
      gs[2 * i] += T(-g[i] * im / r2);
      gs[2 * i + 1] += T(g[i] * re / r2);
    }
  });
}

template <typename T>
Var<T> polar_recompose(Var<T> amp, Var<T> phi) {
  Tape<T>& tape = amp.tape();
  const Tensor<T>& av = amp.value();
  const Tensor<T>& pv = phi.value();
  av.require_same_shape(pv, "polar_recompose");
  Shape packed = av.shape();
  packed.push_back(2);
  Tensor<T> s(packed);
  for (std::size_t i = 0; i < av.size(); ++i) {
    if (av[i] < T(0)) {
      throw ValidationError("polar_recompose: negative amplitude " + std::to_string(double(av[i])) + " at index " +
                            std::to_string(i));
    }
    s[2 * i] = T(double(av[i]) * std::cos(double(pv[i])));
    s[2 * i + 1] = T(double(av[i]) * std::sin(double(pv[i])));
  }
  return tape.record(std::move(s), tape.any_requires_grad({amp, phi}), [amp, phi](Tape<T>& t, const Tensor<T>& g) {
    const Tensor<T>& av2 = t.value(amp);
    const Tensor<T>& pv2 = t.value(phi);
    T* ga = t.requires_grad(amp) ? t.grad_slot(amp).data() : nullptr;
    T* gp = t.requires_grad(phi) ? t.grad_slot(phi).data() : nullptr;
    for (std::size_t i = 0; i < av2.size(); ++i) {
      const double c = std::cos(double(pv2[i])), sn = std::sin(double(pv2[i]));
      const double gr = g[2 * i], gi = g[2 * i + 1];
      if (ga) ga[i] += T(gr * c + gi * sn);
      if (gp) gp[i] += T(double(av2[i]) * (gi * c - gr * sn));
    }
  });
}

namespace testing {
void corrupt_inverse_normalization(bool on) { g_corrupt_inverse.store(on); }
bool inverse_normalization_corrupted() { return g_corrupt_inverse.load(); }
}  // namespace testing

#define SFDE_INSTANTIATE_SPECTRAL(T)                                                              \
  template ComplexSpectrum<T> rfft2<T>(const Tensor<T>&);                                        \
  template Tensor<T> irfft2<T>(const ComplexSpectrum<T>&);                                       \
  template Tensor<T> amplitude<T>(const ComplexSpectrum<T>&);                                    \
  template Tensor<T> phase<T>(const ComplexSpectrum<T>&);                                        \
  template ComplexSpectrum<T> polar_recompose<T>(const Tensor<T>&, const Tensor<T>&, std::size_t); \
  template Tensor<T> interleave<T>(const ComplexSpectrum<T>&);                                   \
  template ComplexSpectrum<T> deinterleave<T>(const Tensor<T>&, std::size_t);                    \
  template Var<T> rfft2<T>(Var<T>);                                                              \
  template Var<T> irfft2<T>(Var<T>, std::size_t);                                                \
  template Var<T> amplitude<T>(Var<T>);                                                          \
  template Var<T> phase<T>(Var<T>);                                                              \
  template Var<T> polar_recompose<T>(Var<T>, Var<T>);

SFDE_INSTANTIATE_SPECTRAL(float)
SFDE_INSTANTIATE_SPECTRAL(double)

}  // namespace sfde::spectral
