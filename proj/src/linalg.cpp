#include "fvi/linalg.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

namespace fvi {

Mat Mat::identity(std::size_t n) {
  Mat m(n, n);
  for (std::size_t i = 0; i < n; ++i) m(i, i) = 1.0;
  return m;
}

Mat Mat::block(std::size_t r0, std::size_t c0, std::size_t nr,
               std::size_t nc) const {
  Mat out(nr, nc);
  for (std::size_t i = 0; i < nr; ++i)
    for (std::size_t j = 0; j < nc; ++j) out(i, j) = (*this)(r0 + i, c0 + j);
  return out;
}

Mat Mat::transposed() const {
  Mat out(cols_, rows_);
  for (std::size_t i = 0; i < rows_; ++i)
    for (std::size_t j = 0; j < cols_; ++j) out(j, i) = (*this)(i, j);
  return out;
}

Vec Mat::mul(ConstSpan x) const {
  Vec y(rows_, 0.0);
  for (std::size_t i = 0; i < rows_; ++i) {
    double s = 0.0;
    for (std::size_t j = 0; j < cols_; ++j) s += (*this)(i, j) * x[j];
    y[i] = s;
  }
  return y;
}

Mat Mat::mul(const Mat& b) const {
  Mat out(rows_, b.cols_);
  for (std::size_t i = 0; i < rows_; ++i)
    for (std::size_t k = 0; k < cols_; ++k) {
      const double aik = (*this)(i, k);
      if (aik == 0.0) continue;
      for (std::size_t j = 0; j < b.cols_; ++j) out(i, j) += aik * b(k, j);
    }
  return out;
}

Mat& Mat::operator+=(const Mat& b) {
  for (std::size_t i = 0; i < a_.size(); ++i) a_[i] += b.a_[i];
  return *this;
}

Mat& Mat::operator-=(const Mat& b) {
  for (std::size_t i = 0; i < a_.size(); ++i) a_[i] -= b.a_[i];
  return *this;
}

Mat& Mat::scale(double s) {
  for (double& v : a_) v *= s;
  return *this;
}

double Mat::norm_inf() const {
  double m = 0.0;
  for (std::size_t i = 0; i < rows_; ++i) {
    double s = 0.0;
    for (std::size_t j = 0; j < cols_; ++j) s += std::abs((*this)(i, j));
    m = std::max(m, s);
  }
  return m;
}

double Mat::norm_1() const {
  double m = 0.0;
  for (std::size_t j = 0; j < cols_; ++j) {
    double s = 0.0;
    for (std::size_t i = 0; i < rows_; ++i) s += std::abs((*this)(i, j));
    m = std::max(m, s);
  }
  return m;
}

double Mat::max_abs() const {
  double m = 0.0;
  for (double v : a_) m = std::max(m, std::abs(v));
  return m;
}

Mat operator+(Mat a, const Mat& b) {
  a += b;
  return a;
}

Mat operator-(Mat a, const Mat& b) {
  a -= b;
  return a;
}

LuFactor lu_factor(Mat a) {
  const std::size_t n = a.rows();
  LuFactor f;
  f.piv.resize(n);
  double scale = a.max_abs();
  if (scale == 0.0) scale = 1.0;
  const double tiny = scale * n * std::numeric_limits<double>::epsilon();
  for (std::size_t k = 0; k < n; ++k) {
    std::size_t p = k;
    double best = std::abs(a(k, k));
    for (std::size_t i = k + 1; i < n; ++i) {
      const double v = std::abs(a(i, k));
      if (v > best) {
        best = v;
        p = i;
      }
    }
    if (!(best > tiny)) {
      f.lu = std::move(a);
      f.ok = false;
      return f;
    }
    f.piv[k] = static_cast<int>(p);
    if (p != k)
      for (std::size_t j = 0; j < n; ++j) std::swap(a(k, j), a(p, j));
    const double pivot = a(k, k);
    for (std::size_t i = k + 1; i < n; ++i) {
      const double m = a(i, k) / pivot;
      a(i, k) = m;
      for (std::size_t j = k + 1; j < n; ++j) a(i, j) -= m * a(k, j);
    }
  }
  f.lu = std::move(a);
  f.ok = true;
  return f;
}

Vec lu_solve(const LuFactor& f, ConstSpan b) {
  const std::size_t n = f.lu.rows();
  Vec x(b.begin(), b.end());
  for (std::size_t k = 0; k < n; ++k) {
    const std::size_t p = static_cast<std::size_t>(f.piv[k]);
    if (p != k) std::swap(x[k], x[p]);
    for (std::size_t i = k + 1; i < n; ++i) x[i] -= f.lu(i, k) * x[k];
  }
  for (std::size_t i = n; i-- > 0;) {
    double s = x[i];
    for (std::size_t j = i + 1; j < n; ++j) s -= f.lu(i, j) * x[j];
    x[i] = s / f.lu(i, i);
  }
  return x;
}

std::optional<Vec> try_solve(const Mat& a, ConstSpan b) {
  LuFactor f = lu_factor(a);
  if (!f.ok) return std::nullopt;
  return lu_solve(f, b);
}

std::optional<Mat> try_inverse(const Mat& a) {
  const std::size_t n = a.rows();
  LuFactor f = lu_factor(a);
  if (!f.ok) return std::nullopt;
  Mat inv(n, n);
  Vec e(n, 0.0);
  for (std::size_t j = 0; j < n; ++j) {
    e.assign(n, 0.0);
    e[j] = 1.0;
    Vec col = lu_solve(f, e);
    for (std::size_t i = 0; i < n; ++i) inv(i, j) = col[i];
  }
  return inv;
}

double cond_1(const Mat& a) {
  if (a.rows() == 0) return 1.0;
  auto inv = try_inverse(a);
  if (!inv) return std::numeric_limits<double>::infinity();
  return a.norm_1() * inv->norm_1();
}

double norm_inf(ConstSpan x) {
  double m = 0.0;
  for (double v : x) m = std::max(m, std::abs(v));
  return m;
}

double dot(ConstSpan a, ConstSpan b) {
  double s = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) s += a[i] * b[i];
  return s;
}

Vec concat(ConstSpan a, ConstSpan b) {
  Vec out;
  out.reserve(a.size() + b.size());
  out.insert(out.end(), a.begin(), a.end());
  out.insert(out.end(), b.begin(), b.end());
  return out;
}

bool all_finite(ConstSpan x) {
  for (double v : x)
    if (!std::isfinite(v)) return false;
  return true;
}

}  // namespace fvi
