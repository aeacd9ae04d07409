#pragma once

#include <cstddef>
#include <optional>
#include <span>
#include <vector>

namespace fvi {

using Vec = std::vector<double>;
using ConstSpan = std::span<const double>;

// Small dense row-major matrix. Problem dimensions here are tiny (a handful of
// configuration variables, a few quadrature stages), so nothing is blocked or
// factor-cached beyond plain LU.
class Mat {
 public:
  Mat() = default;
  Mat(std::size_t rows, std::size_t cols, double fill = 0.0)
      : rows_(rows), cols_(cols), a_(rows * cols, fill) {}

  static Mat identity(std::size_t n);

  std::size_t rows() const { return rows_; }
  std::size_t cols() const { return cols_; }
  bool empty() const { return a_.empty(); }

  double& operator()(std::size_t i, std::size_t j) { return a_[i * cols_ + j]; }
  double operator()(std::size_t i, std::size_t j) const {
    return a_[i * cols_ + j];
  }

  double* data() { return a_.data(); }
  const double* data() const { return a_.data(); }

  Mat block(std::size_t r0, std::size_t c0, std::size_t nr,
            std::size_t nc) const;
  Mat transposed() const;
  Vec mul(ConstSpan x) const;
  Mat mul(const Mat& b) const;

  Mat& operator+=(const Mat& b);
  Mat& operator-=(const Mat& b);
  Mat& scale(double s);

  double norm_inf() const;  // max row sum
  double norm_1() const;    // max column sum
  double max_abs() const;

 private:
  std::size_t rows_ = 0, cols_ = 0;
  std::vector<double> a_;
};

Mat operator+(Mat a, const Mat& b);
Mat operator-(Mat a, const Mat& b);

struct LuFactor {
  Mat lu;
  std::vector<int> piv;
  bool ok = false;
};

LuFactor lu_factor(Mat a);
Vec lu_solve(const LuFactor& f, ConstSpan b);

// nullopt when the matrix is numerically singular.
std::optional<Vec> try_solve(const Mat& a, ConstSpan b);
std::optional<Mat> try_inverse(const Mat& a);

// 1-norm condition estimate via explicit inverse; +inf when singular.
double cond_1(const Mat& a);

double norm_inf(ConstSpan x);
double dot(ConstSpan a, ConstSpan b);
Vec concat(ConstSpan a, ConstSpan b);
bool all_finite(ConstSpan x);

}  // namespace fvi
