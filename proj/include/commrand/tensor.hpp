#pragma once

#include <algorithm>
#include <cstddef>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

namespace commrand {

/// Dense row-major matrix.
template <typename T>
class Matrix {
public:
  using value_type = T;

  Matrix() = default;
  Matrix(std::size_t rows, std::size_t cols, T fill = T{})
      : rows_(rows), cols_(cols), data_(rows * cols, fill) {}
  Matrix(std::size_t rows, std::size_t cols, std::vector<T> data)
      : rows_(rows), cols_(cols), data_(std::move(data)) {
    if (data_.size() != rows * cols) throw std::invalid_argument("matrix data size mismatch");
  }

  std::size_t rows() const noexcept { return rows_; }
  std::size_t cols() const noexcept { return cols_; }
  std::size_t size() const noexcept { return data_.size(); }
  bool empty() const noexcept { return data_.empty(); }

  T& operator()(std::size_t r, std::size_t c) { return data_[r * cols_ + c]; }
  const T& operator()(std::size_t r, std::size_t c) const { return data_[r * cols_ + c]; }

  std::span<T> row(std::size_t r) { return {data_.data() + r * cols_, cols_}; }
  std::span<const T> row(std::size_t r) const { return {data_.data() + r * cols_, cols_}; }

  std::span<T> flat() noexcept { return data_; }
  std::span<const T> flat() const noexcept { return data_; }

  void fill(T value) { std::fill(data_.begin(), data_.end(), value); }

  template <typename U>
  Matrix<U> cast() const {
    Matrix<U> out(rows_, cols_);
    std::transform(data_.begin(), data_.end(), out.flat().begin(),
                   [](T x) { return static_cast<U>(x); });
    return out;
  }

  friend bool operator==(const Matrix&, const Matrix&) = default;

private:
  std::size_t rows_ = 0;
  std::size_t cols_ = 0;
  std::vector<T> data_;
};

namespace linalg {

inline void require(bool ok, const char* what) {
  if (!ok) throw std::invalid_argument(std::string("shape mismatch: ") + what);
}

/// out (+)= a * b
template <typename T>
void matmul(const Matrix<T>& a, const Matrix<T>& b, Matrix<T>& out, bool accumulate = false) {
  require(a.cols() == b.rows(), "matmul inner");
  if (!accumulate) out = Matrix<T>(a.rows(), b.cols());
  require(out.rows() == a.rows() && out.cols() == b.cols(), "matmul out");
  for (std::size_t i = 0; i < a.rows(); ++i) {
    auto o = out.row(i);
    for (std::size_t k = 0; k < a.cols(); ++k) {
      const T aik = a(i, k);
      if (aik == T{}) continue;
      auto br = b.row(k);
      for (std::size_t j = 0; j < b.cols(); ++j) o[j] += aik * br[j];
    }
  }
}

/// out (+)= a^T * b
template <typename T>
void matmul_tn(const Matrix<T>& a, const Matrix<T>& b, Matrix<T>& out, bool accumulate = false) {
  require(a.rows() == b.rows(), "matmul_tn inner");
  if (!accumulate) out = Matrix<T>(a.cols(), b.cols());
  require(out.rows() == a.cols() && out.cols() == b.cols(), "matmul_tn out");
  for (std::size_t k = 0; k < a.rows(); ++k) {
    auto ar = a.row(k);
    auto br = b.row(k);
    for (std::size_t i = 0; i < a.cols(); ++i) {
      const T aki = ar[i];
      if (aki == T{}) continue;
      auto o = out.row(i);
      for (std::size_t j = 0; j < b.cols(); ++j) o[j] += aki * br[j];
    }
  }
}

/// out (+)= a * b^T
template <typename T>
void matmul_nt(const Matrix<T>& a, const Matrix<T>& b, Matrix<T>& out, bool accumulate = false) {
  require(a.cols() == b.cols(), "matmul_nt inner");
  if (!accumulate) out = Matrix<T>(a.rows(), b.rows());
  require(out.rows() == a.rows() && out.cols() == b.rows(), "matmul_nt out");
  for (std::size_t i = 0; i < a.rows(); ++i) {
    auto ar = a.row(i);
    for (std::size_t j = 0; j < b.rows(); ++j) {
      auto br = b.row(j);
      T acc{};
      for (std::size_t k = 0; k < a.cols(); ++k) acc += ar[k] * br[k];
      out(i, j) += acc;
    }
  }
}

} // namespace linalg

} // namespace commrand
