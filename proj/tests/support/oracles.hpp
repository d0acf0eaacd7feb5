#pragma once

// Straight-line reference implementations used as test oracles. Nothing here
// shares code with the library kernels.

#include <algorithm>
#include <cmath>
#include <complex>
#include <map>
#include <numbers>
#include <set>
#include <string>
#include <vector>

#include "sfde/random.hpp"
#include "sfde/retrieval.hpp"
#include "sfde/tensor.hpp"

namespace oracle {

using sfde::Rng;
using sfde::Shape;
using sfde::Tensor;

template <typename T = double>
Tensor<T> random_tensor(Shape shape, Rng& rng, double lo = -1.0, double hi = 1.0) {
  Tensor<T> t(std::move(shape));
  for (auto& v : t.values()) v = T(rng.uniform(lo, hi));
  return t;
}

inline Tensor<double> conv2d(const Tensor<double>& x, const Tensor<double>& w, const Tensor<double>* b,
                             std::size_t stride, std::size_t pad, std::size_t dil, std::size_t groups = 1) {
  const std::size_t n = x.dim(0), c = x.dim(1), h = x.dim(2), wd = x.dim(3);
  const std::size_t o = w.dim(0), cg = w.dim(1), k = w.dim(2);
  const std::size_t oh = (h + 2 * pad - dil * (k - 1) - 1) / stride + 1;
  const std::size_t ow = (wd + 2 * pad - dil * (k - 1) - 1) / stride + 1;
  const std::size_t og = o / groups;
  Tensor<double> y({n, o, oh, ow});
  for (std::size_t b0 = 0; b0 < n; ++b0)
    for (std::size_t oc = 0; oc < o; ++oc)
      for (std::size_t i = 0; i < oh; ++i)
        for (std::size_t j = 0; j < ow; ++j) {
          double acc = b ? (*b)[oc] : 0.0;
          const std::size_t g = oc / og;
          for (std::size_t ic = 0; ic < cg; ++ic)
            for (std::size_t ki = 0; ki < k; ++ki)
              for (std::size_t kj = 0; kj < k; ++kj) {
                const long yi = long(i * stride + ki * dil) - long(pad);
                const long xj = long(j * stride + kj * dil) - long(pad);
                if (yi < 0 || xj < 0 || yi >= long(h) || xj >= long(wd)) continue;
                acc += x.at(b0, g * cg + ic, std::size_t(yi), std::size_t(xj)) * w.at(oc, ic, ki, kj);
              }
          y.at(b0, oc, i, j) = acc;
        }
  (void)c;
  return y;
}

/// Half spectrum of one H x W plane by the defining double sum.
inline std::vector<std::complex<double>> dft2_half(const double* x, std::size_t h, std::size_t w) {
  const std::size_t wh = w / 2 + 1;
  std::vector<std::complex<double>> out(h * wh);
  for (std::size_t u = 0; u < h; ++u)
    for (std::size_t v = 0; v < wh; ++v) {
      std::complex<double> acc = 0.0;
      for (std::size_t y = 0; y < h; ++y)
        for (std::size_t xx = 0; xx < w; ++xx) {
          const double a = -2.0 * std::numbers::pi * (double(u * y) / double(h) + double(v * xx) / double(w));
          acc += x[y * w + xx] * std::complex<double>(std::cos(a), std::sin(a));
        }
      out[u * wh + v] = acc;
    }
  return out;
}

/// Align-corners-false sample position, clamped at the first pixel.
inline double bilinear_1d(const std::vector<double>& src, std::size_t out, std::size_t o) {
  const std::size_t in = src.size();
  double s = (double(o) + 0.5) * double(in) / double(out) - 0.5;
  s = std::max(s, 0.0);
  const std::size_t i0 = std::min(std::size_t(std::floor(s)), in - 1);
  const std::size_t i1 = std::min(i0 + 1, in - 1);
  const double f = s - double(i0);
  return src[i0] * (1.0 - f) + src[i1] * f;
}

inline double softmax_ce(const std::vector<double>& logits, std::size_t label) {
  double m = *std::max_element(logits.begin(), logits.end());
  double z = 0.0;
  for (double l : logits) z += std::exp(l - m);
  return -(logits[label] - m - std::log(z));
}

/// Symmetric InfoNCE on a raw similarity matrix (before temperature).
inline double symmetric_info_nce(const std::vector<std::vector<double>>& sim, double temperature) {
  const std::size_t n = sim.size();
  double rows = 0.0, cols = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    std::vector<double> r(n), c(n);
    for (std::size_t j = 0; j < n; ++j) {
      r[j] = sim[i][j] / temperature;
      c[j] = sim[j][i] / temperature;
    }
    rows += softmax_ce(r, i);
    cols += softmax_ce(c, i);
  }
  return 0.5 * (rows / double(n) + cols / double(n));
}

struct Metrics {
  std::map<std::size_t, double> recall;
  double mean_ap = 0.0;
  std::size_t evaluated = 0;
};

inline Metrics brute_force_metrics(const std::vector<sfde::retrieval::EmbeddingRecord>& queries,
                                   const std::vector<sfde::retrieval::EmbeddingRecord>& gallery,
                                   const std::set<std::size_t>& ks) {
  Metrics m;
  std::map<std::size_t, std::size_t> hits;
  for (const auto& q : queries) {
    std::vector<std::size_t> order(gallery.size());
    std::vector<double> score(gallery.size());
    for (std::size_t i = 0; i < gallery.size(); ++i) {
      order[i] = i;
      for (std::size_t d = 0; d < q.vector.size(); ++d) score[i] += double(q.vector[d]) * double(gallery[i].vector[d]);
    }
    std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
      if (score[a] != score[b]) return score[a] > score[b];
      return gallery[a].id < gallery[b].id;
    });
    std::vector<std::size_t> relevant_ranks;
    for (std::size_t r = 0; r < order.size(); ++r)
      if (gallery[order[r]].class_id == q.class_id) relevant_ranks.push_back(r + 1);
    if (relevant_ranks.empty()) continue;
    ++m.evaluated;
    double ap = 0.0;
    for (std::size_t i = 0; i < relevant_ranks.size(); ++i) ap += double(i + 1) / double(relevant_ranks[i]);
    m.mean_ap += ap / double(relevant_ranks.size());
    for (auto k : ks)
      if (relevant_ranks.front() <= k) ++hits[k];
  }
  for (auto k : ks) m.recall[k] = m.evaluated ? double(hits[k]) / double(m.evaluated) : 0.0;
  if (m.evaluated) m.mean_ap /= double(m.evaluated);
  return m;
}

inline std::vector<sfde::retrieval::EmbeddingRecord> random_records(std::size_t n, std::size_t dim,
                                                                    std::size_t classes, Rng& rng,
                                                                    const std::string& prefix) {
  std::vector<sfde::retrieval::EmbeddingRecord> out;
  for (std::size_t i = 0; i < n; ++i) {
    sfde::retrieval::EmbeddingRecord r;
    r.id = prefix + std::to_string(i);
    r.view = rng.bernoulli(0.5) ? sfde::retrieval::View::Drone : sfde::retrieval::View::Satellite;
    r.class_id = static_cast<std::uint32_t>(rng.below(classes));
    r.vector.resize(dim);
    double norm = 0.0;
    for (auto& v : r.vector) {
      v = float(rng.normal());
      norm += double(v) * double(v);
    }
    for (auto& v : r.vector) v = float(double(v) / std::sqrt(norm));
    out.push_back(std::move(r));
  }
  return out;
}

}  // namespace oracle
