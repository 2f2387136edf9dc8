#pragma once

// Scalar-loop reference implementations. Deliberately naive: no Eigen
// expressions, no shared code with the library.

#include "ssda/tensor.hpp"

#include <algorithm>
#include <cmath>
#include <map>
#include <random>
#include <vector>

namespace oracle {

using ssda::Index;
using ssda::Matrix;

inline double at(const Matrix& m, Index r, Index c) { return m.data()[r * m.cols() + c]; }

inline double recon_bce(const Matrix& x, const Matrix& p) {
  double total = 0.0;
  for (Index i = 0; i < x.rows(); ++i) {
    for (Index j = 0; j < x.cols(); ++j) {
      const double pv = at(p, i, j);
      const double lp = std::log(pv > 1e-12 ? pv : 1e-12);
      const double q = 1.0 - pv;
      const double lq = std::log(q > 1e-12 ? q : 1e-12);
      total -= at(x, i, j) * lp + (1.0 - at(x, i, j)) * lq;
    }
  }
  return total / static_cast<double>(x.rows());
}

inline std::vector<double> column_means(const Matrix& a, const std::vector<Index>& rows) {
  std::vector<double> m(static_cast<std::size_t>(a.cols()), 0.0);
  for (Index r : rows) {
    for (Index j = 0; j < a.cols(); ++j) m[j] += at(a, r, j);
  }
  for (double& v : m) v /= static_cast<double>(rows.size());
  return m;
}

inline std::vector<Index> all_rows(const Matrix& a) {
  std::vector<Index> r;
  for (Index i = 0; i < a.rows(); ++i) r.push_back(i);
  return r;
}

inline double mmd(const Matrix& a, const Matrix& b) {
  const auto ma = column_means(a, all_rows(a));
  const auto mb = column_means(b, all_rows(b));
  double s = 0.0;
  for (std::size_t j = 0; j < ma.size(); ++j) s += (ma[j] - mb[j]) * (ma[j] - mb[j]);
  return s;
}

// Mean over the classes present on both sides of the squared centroid gap.
inline double mmd_classwise(const Matrix& a, const std::vector<int>& la, const Matrix& b,
                            const std::vector<int>& lb) {
  std::map<int, std::vector<Index>> ra, rb;
  for (Index i = 0; i < a.rows(); ++i) ra[la[i]].push_back(i);
  for (Index i = 0; i < b.rows(); ++i) rb[lb[i]].push_back(i);
  double total = 0.0;
  int classes = 0;
  for (const auto& [k, rows] : ra) {
    const auto ma = column_means(a, rows);
    const auto mb = column_means(b, rb.at(k));
    for (std::size_t j = 0; j < ma.size(); ++j) total += (ma[j] - mb[j]) * (ma[j] - mb[j]);
    ++classes;
  }
  return total / classes;
}

inline double cross_entropy(const Matrix& y, const Matrix& p) {
  double total = 0.0;
  for (Index i = 0; i < y.rows(); ++i) {
    for (Index j = 0; j < y.cols(); ++j) {
      const double pv = at(p, i, j);
      total -= at(y, i, j) * std::log(pv > 1e-12 ? pv : 1e-12);
    }
  }
  return total / static_cast<double>(y.rows());
}

inline Matrix softmax_rows(const Matrix& x) {
  Matrix out(x.rows(), x.cols());
  for (Index i = 0; i < x.rows(); ++i) {
    double hi = at(x, i, 0);
    for (Index j = 1; j < x.cols(); ++j) hi = std::max(hi, at(x, i, j));
    double z = 0.0;
    for (Index j = 0; j < x.cols(); ++j) z += std::exp(at(x, i, j) - hi);
    for (Index j = 0; j < x.cols(); ++j) out(i, j) = std::exp(at(x, i, j) - hi) / z;
  }
  return out;
}

// One dense layer, x W + b, followed by the named activation.
inline Matrix dense(const Matrix& x, const Matrix& w, const Matrix& b, const char* act) {
  Matrix y(x.rows(), w.cols());
  for (Index i = 0; i < x.rows(); ++i) {
    for (Index o = 0; o < w.cols(); ++o) {
      double s = at(b, 0, o);
      for (Index k = 0; k < x.cols(); ++k) s += at(x, i, k) * at(w, k, o);
      y(i, o) = s;
    }
  }
  const std::string a = act;
  if (a == "relu") {
    for (Index i = 0; i < y.size(); ++i) y.data()[i] = std::max(0.0, y.data()[i]);
  } else if (a == "sigmoid") {
    for (Index i = 0; i < y.size(); ++i) y.data()[i] = 1.0 / (1.0 + std::exp(-y.data()[i]));
  } else if (a == "softmax") {
    y = softmax_rows(y);
  }
  return y;
}

inline Matrix uniform(Index rows, Index cols, std::mt19937_64& rng, double lo = -1.0,
                      double hi = 1.0) {
  std::uniform_real_distribution<double> u(lo, hi);
  Matrix m(rows, cols);
  for (Index i = 0; i < m.size(); ++i) m.data()[i] = u(rng);
  return m;
}

// Uniform entries kept at least `gap` away from zero (avoids relu kinks).
inline Matrix uniform_off_zero(Index rows, Index cols, std::mt19937_64& rng, double gap = 0.05) {
  Matrix m = uniform(rows, cols, rng);
  for (Index i = 0; i < m.size(); ++i) {
    double& v = m.data()[i];
    if (std::abs(v) < gap) v = v < 0 ? v - gap : v + gap;
  }
  return m;
}

inline Matrix random_rows_softmax(Index rows, Index cols, std::mt19937_64& rng) {
  return softmax_rows(uniform(rows, cols, rng, -2.0, 2.0));
}

inline Matrix random_one_hot(Index rows, Index cols, std::mt19937_64& rng) {
  std::uniform_int_distribution<Index> pick(0, cols - 1);
  Matrix y = Matrix::Zero(rows, cols);
  for (Index i = 0; i < rows; ++i) y(i, pick(rng)) = 1.0;
  return y;
}

}  // namespace oracle
