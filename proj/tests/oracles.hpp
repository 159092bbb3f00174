#ifndef XMEM_TESTS_ORACLES_HPP_
#define XMEM_TESTS_ORACLES_HPP_

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <numeric>
#include <span>
#include <vector>

#include "xmem/tensor.hpp"

namespace xmem {
namespace test {

inline double row_dist(const Tensor<double>& a, size_t i, const Tensor<double>& b, size_t j) {
  double s = 0;
  for (size_t k = 0; k < a.cols(); ++k) s += (a(i, k) - b(j, k)) * (a(i, k) - b(j, k));
  return std::sqrt(s);
}

struct TripletOracle {
  double loss = 0;
  size_t contributing = 0;
};

// Enumerates every (positive, negative) combination per anchor and keeps the
// largest violation.
inline TripletOracle brute_force_hard(const Tensor<double>& v, const Tensor<double>& r,
                                      const std::vector<uint64_t>& ids, double alpha) {
  TripletOracle o;
  double sum = 0;
  for (int dir = 0; dir < 2; ++dir) {
    const Tensor<double>& a = dir == 0 ? v : r;
    const Tensor<double>& c = dir == 0 ? r : v;
    for (size_t i = 0; i < ids.size(); ++i) {
      bool any = false;
      double best = 0;
      for (size_t p = 0; p < ids.size(); ++p) {
        if (ids[p] != ids[i]) continue;
        for (size_t n = 0; n < ids.size(); ++n) {
          if (ids[n] == ids[i]) continue;
          const double h = std::max(0.0, row_dist(a, i, c, p) - row_dist(a, i, c, n) + alpha);
          best = any ? std::max(best, h) : h;
          any = true;
        }
      }
      if (any) {
        sum += best;
        ++o.contributing;
      }
    }
  }
  o.loss = o.contributing ? sum / static_cast<double>(o.contributing) : 0;
  return o;
}

// Mean over anchors of the mean hinge over all (positive, negative) pairs.
inline double brute_force_all(const Tensor<double>& v, const Tensor<double>& r,
                              const std::vector<uint64_t>& ids, double alpha) {
  double sum = 0;
  size_t anchors = 0;
  for (int dir = 0; dir < 2; ++dir) {
    const Tensor<double>& a = dir == 0 ? v : r;
    const Tensor<double>& c = dir == 0 ? r : v;
    for (size_t i = 0; i < ids.size(); ++i) {
      double s = 0;
      size_t pairs = 0;
      for (size_t p = 0; p < ids.size(); ++p) {
        if (ids[p] != ids[i]) continue;
        for (size_t n = 0; n < ids.size(); ++n) {
          if (ids[n] == ids[i]) continue;
          s += std::max(0.0, row_dist(a, i, c, p) - row_dist(a, i, c, n) + alpha);
          ++pairs;
        }
      }
      if (pairs) {
        sum += s / static_cast<double>(pairs);
        ++anchors;
      }
    }
  }
  return sum / static_cast<double>(anchors);
}

// 1-based position of `truth` after a stable sort by squared distance.
inline size_t sort_oracle_rank(std::span<const double> q, const Tensor<double>& c, size_t truth) {
  auto sq = [&](size_t j) {
    double s = 0;
    for (size_t k = 0; k < q.size(); ++k) s += (q[k] - c(j, k)) * (q[k] - c(j, k));
    return s;
  };
  std::vector<size_t> order(c.rows());
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(), [&](size_t a, size_t b) { return sq(a) < sq(b); });
  return static_cast<size_t>(std::find(order.begin(), order.end(), truth) - order.begin()) + 1;
}

}  // namespace test
}  // namespace xmem

#endif  // XMEM_TESTS_ORACLES_HPP_
