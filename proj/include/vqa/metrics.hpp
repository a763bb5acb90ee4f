#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <numeric>
#include <vector>

#include "vqa/errors.hpp"
#include "vqa/optim.hpp"
#include "vqa/tensor.hpp"

namespace vqa {

inline void check_metric_inputs(const std::vector<double>& a,
                                const std::vector<double>& b) {
  if (a.size() != b.size())
    throw DataError("metric inputs differ in length: " + std::to_string(a.size()) +
                    " vs " + std::to_string(b.size()));
  if (a.size() < 2) throw DataError("metrics need at least 2 samples");
  for (double v : a)
    if (!std::isfinite(v)) throw DataError("metric input contains non-finite value");
  for (double v : b)
    if (!std::isfinite(v)) throw DataError("metric input contains non-finite value");
}

// 1-based fractional ranks; tied values share the average of their positions.
inline std::vector<double> fractional_ranks(const std::vector<double>& v) {
  const std::size_t n = v.size();
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::stable_sort(order.begin(), order.end(),
                   [&](std::size_t i, std::size_t j) { return v[i] < v[j]; });
  std::vector<double> ranks(n);
  std::size_t i = 0;
  while (i < n) {
    std::size_t j = i;
    while (j + 1 < n && v[order[j + 1]] == v[order[i]]) ++j;
    const double avg = (static_cast<double>(i + 1) + static_cast<double>(j + 1)) / 2.0;
    for (std::size_t k = i; k <= j; ++k) ranks[order[k]] = avg;
    i = j + 1;
  }
  return ranks;
}

inline double pearson(const std::vector<double>& a, const std::vector<double>& b) {
  check_metric_inputs(a, b);
  const double n = static_cast<double>(a.size());
  double ma = 0.0, mb = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    ma += a[i];
    mb += b[i];
  }
  ma /= n;
  mb /= n;
  double sab = 0.0, saa = 0.0, sbb = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    const double da = a[i] - ma, db = b[i] - mb;
    sab += da * db;
    saa += da * da;
    sbb += db * db;
  }
  if (saa == 0.0 || sbb == 0.0)
    throw DataError("undefined correlation: constant input");
  return sab / std::sqrt(saa * sbb);
}

inline double plcc(const std::vector<double>& pred, const std::vector<double>& mos) {
  return pearson(pred, mos);
}

inline double srcc(const std::vector<double>& pred, const std::vector<double>& mos) {
  check_metric_inputs(pred, mos);
  return pearson(fractional_ranks(pred), fractional_ranks(mos));
}

namespace detail {

// Counts strict inversions while merge-sorting v.
inline int64_t merge_count(std::vector<double>& v, std::vector<double>& tmp,
                           std::size_t lo, std::size_t hi) {
  if (hi - lo < 2) return 0;
  const std::size_t mid = lo + (hi - lo) / 2;
  int64_t swaps = merge_count(v, tmp, lo, mid) + merge_count(v, tmp, mid, hi);
  std::size_t i = lo, j = mid, k = lo;
  while (i < mid && j < hi) {
    if (v[j] < v[i]) {
      swaps += static_cast<int64_t>(mid - i);
      tmp[k++] = v[j++];
    } else {
      tmp[k++] = v[i++];
    }
  }
  while (i < mid) tmp[k++] = v[i++];
  while (j < hi) tmp[k++] = v[j++];
  std::copy(tmp.begin() + static_cast<std::ptrdiff_t>(lo),
            tmp.begin() + static_cast<std::ptrdiff_t>(hi),
            v.begin() + static_cast<std::ptrdiff_t>(lo));
  return swaps;
}

inline int64_t tie_pairs(const std::vector<double>& sorted_vals) {
  int64_t total = 0;
  std::size_t i = 0;
  while (i < sorted_vals.size()) {
    std::size_t j = i;
    while (j + 1 < sorted_vals.size() && sorted_vals[j + 1] == sorted_vals[i]) ++j;
    const int64_t t = static_cast<int64_t>(j - i + 1);
    total += t * (t - 1) / 2;
    i = j + 1;
  }
  return total;
}

}  // namespace detail

// Tie-corrected tau-b in O(n log n): sort by (x, y), count joint/x ties, count
// y inversions by merge sort, then count y ties.
inline double krcc(const std::vector<double>& pred, const std::vector<double>& mos) {
  check_metric_inputs(pred, mos);
  const std::size_t n = pred.size();
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::sort(order.begin(), order.end(), [&](std::size_t i, std::size_t j) {
    if (pred[i] != pred[j]) return pred[i] < pred[j];
    return mos[i] < mos[j];
  });

  const int64_t n0 = static_cast<int64_t>(n) * (static_cast<int64_t>(n) - 1) / 2;
  int64_t n1 = 0, n3 = 0;
  {
    std::size_t i = 0;
    while (i < n) {
      std::size_t j = i;
      while (j + 1 < n && pred[order[j + 1]] == pred[order[i]]) ++j;
      const int64_t t = static_cast<int64_t>(j - i + 1);
      n1 += t * (t - 1) / 2;
      std::size_t a = i;
      while (a <= j) {
        std::size_t b = a;
        while (b + 1 <= j && mos[order[b + 1]] == mos[order[a]]) ++b;
        const int64_t u = static_cast<int64_t>(b - a + 1);
        n3 += u * (u - 1) / 2;
        a = b + 1;
      }
      i = j + 1;
    }
  }

  std::vector<double> ys(n);
  for (std::size_t i = 0; i < n; ++i) ys[i] = mos[order[i]];
  std::vector<double> tmp(n);
  const int64_t swaps = detail::merge_count(ys, tmp, 0, n);
  const int64_t n2 = detail::tie_pairs(ys);  // ys is now sorted

  const int64_t num = n0 - n1 - n2 + n3 - 2 * swaps;
  const double d1 = static_cast<double>(n0 - n1);
  const double d2 = static_cast<double>(n0 - n2);
  if (d1 <= 0.0 || d2 <= 0.0)
    throw DataError("undefined correlation: constant input");
  return static_cast<double>(num) / std::sqrt(d1 * d2);
}

inline double rmse(const std::vector<double>& pred, const std::vector<double>& mos) {
  check_metric_inputs(pred, mos);
  double s = 0.0;
  for (std::size_t i = 0; i < pred.size(); ++i) {
    const double d = pred[i] - mos[i];
    s += d * d;
  }
  return std::sqrt(s / static_cast<double>(pred.size()));
}

struct MetricsReport {
  double srcc = 0.0;
  double krcc = 0.0;
  double plcc = 0.0;
  double rmse = 0.0;
  int64_t n = 0;
};

inline MetricsReport compute_metrics(const std::vector<double>& pred,
                                     const std::vector<double>& mos) {
  MetricsReport r;
  r.srcc = srcc(pred, mos);
  r.krcc = krcc(pred, mos);
  r.plcc = plcc(pred, mos);
  r.rmse = rmse(pred, mos);
  r.n = static_cast<int64_t>(pred.size());
  return r;
}

// ---------------------------------------------------------------------------
// Optional four-parameter logistic remap of predictions before PLCC/RMSE
// (off by default everywhere). q(x) = b2 + (b1 - b2) / (1 + exp(-(x-b3)/|b4|)),
// fitted to MOS by full-batch Adam on mean squared error — deterministic,
// no randomness involved. The fit runs in standardized coordinates (both
// axes shifted/scaled to zero mean, unit spread) with a linearly decaying
// step, so convergence does not depend on the scale of the inputs; the
// curve family is closed under those affine changes of variable.

inline std::vector<double> logistic_remap(const std::vector<double>& pred,
                                          const std::vector<double>& mos,
                                          int iterations = 2000) {
  check_metric_inputs(pred, mos);
  const std::size_t n = pred.size();
  double pm = 0.0, psd = 0.0, mm = 0.0, msd = 0.0;
  for (double p : pred) pm += p;
  pm /= static_cast<double>(n);
  for (double p : pred) psd += (p - pm) * (p - pm);
  psd = std::sqrt(psd / static_cast<double>(n));
  if (psd == 0.0) throw DataError("logistic remap: constant predictions");
  for (double m : mos) mm += m;
  mm /= static_cast<double>(n);
  for (double m : mos) msd += (m - mm) * (m - mm);
  msd = std::sqrt(msd / static_cast<double>(n));
  // Constant targets are fitted exactly by a flat curve.
  if (msd == 0.0) return std::vector<double>(n, mm);

  std::vector<double> z(n), t(n);
  for (std::size_t i = 0; i < n; ++i) {
    z[i] = (pred[i] - pm) / psd;
    t[i] = (mos[i] - mm) / msd;
  }
  const auto [mn_it, mx_it] = std::minmax_element(t.begin(), t.end());

  ParamSet params;
  params.emplace("beta", Tensor({4}, {*mx_it, *mn_it, 0.0, 1.0}));
  AdamState adam;
  const double lr0 = 0.05;
  for (int it = 0; it < iterations; ++it) {
    const Tensor& b = params.at("beta");
    Tensor grad = Tensor::zeros({4});
    for (std::size_t i = 0; i < n; ++i) {
      const double s = 1.0 / (1.0 + std::exp(-(z[i] - b[2]) / std::abs(b[3])));
      const double q = b[1] + (b[0] - b[1]) * s;
      const double e = 2.0 * (q - t[i]) / static_cast<double>(n);
      const double ds = s * (1.0 - s) * (b[0] - b[1]);
      grad[0] += e * s;
      grad[1] += e * (1.0 - s);
      grad[2] += e * ds * (-1.0 / std::abs(b[3]));
      grad[3] += e * ds * (-(z[i] - b[2]) / (b[3] * std::abs(b[3])));
    }
    std::map<std::string, Tensor> grads;
    grads.emplace("beta", std::move(grad));
    const double lr =
        lr0 * (1.0 - static_cast<double>(it) / static_cast<double>(iterations));
    adam_step(adam, params, grads, std::max(lr, 1e-8));
    Tensor& bm = params.at("beta");
    if (std::abs(bm[3]) < 1e-6) bm[3] = bm[3] < 0.0 ? -1e-6 : 1e-6;
  }
  const Tensor& b = params.at("beta");
  std::vector<double> out(n);
  for (std::size_t i = 0; i < n; ++i) {
    const double s = 1.0 / (1.0 + std::exp(-(z[i] - b[2]) / std::abs(b[3])));
    out[i] = mm + msd * (b[1] + (b[0] - b[1]) * s);
  }
  return out;
}

}  // namespace vqa
