#pragma once

#include <initializer_list>
#include <span>
#include <string>
#include <vector>

#include "error.hpp"

namespace tvr {

// Dense 1-D / 2-D array of doubles, row-major. All reductions (matrix
// products, row sums, norms) accumulate in ascending index order so results
// are bit-stable across runs and worker counts.
class Tensor {
 public:
  Tensor() = default;

  // 1-D of zeros.
  static Tensor vec(int n);
  // 2-D of zeros.
  static Tensor mat(int rows, int cols);
  static Tensor from(std::initializer_list<double> values);
  static Tensor from_rows(std::initializer_list<std::initializer_list<double>> rows);
  // Identity matrix.
  static Tensor eye(int n);
  static Tensor full(int n, double value);

  int rank() const { return static_cast<int>(shape_.size()); }
  int size() const { return static_cast<int>(data_.size()); }
  const std::vector<int>& shape() const { return shape_; }

  // Row/column view of the array: a 1-D tensor is treated as a single row.
  int rows() const { return rank() == 2 ? shape_[0] : (rank() == 1 ? 1 : 0); }
  int cols() const { return rank() == 2 ? shape_[1] : (rank() == 1 ? shape_[0] : 0); }

  double& operator[](int i) { return data_[i]; }
  double operator[](int i) const { return data_[i]; }
  double& at(int r, int c) { return data_[static_cast<size_t>(r) * cols() + c]; }
  double at(int r, int c) const { return data_[static_cast<size_t>(r) * cols() + c]; }

  std::span<double> row(int r) { return {data_.data() + static_cast<size_t>(r) * cols(), static_cast<size_t>(cols())}; }
  std::span<const double> row(int r) const { return {data_.data() + static_cast<size_t>(r) * cols(), static_cast<size_t>(cols())}; }

  std::span<double> data() { return data_; }
  std::span<const double> data() const { return data_; }

  void fill(double v);
  bool all_finite() const;
  bool same_shape(const Tensor& other) const { return shape_ == other.shape_; }

  // Extracts row r as a 1-D tensor.
  Tensor row_vec(int r) const;

 private:
  Tensor(std::vector<int> shape, std::vector<double> data)
      : shape_(std::move(shape)), data_(std::move(data)) {}

  std::vector<int> shape_;
  std::vector<double> data_;
};

enum class Activation { gelu, relu };

struct LayerNormParams {
  Tensor gain;   // length C
  Tensor bias;   // length C
  double epsilon = 1e-5;

  static LayerNormParams identity(int c);
};

struct LayerNormGrads {
  Tensor gain;
  Tensor bias;
};

struct FeedForwardParams {
  Tensor w1;  // C x H
  Tensor b1;  // H
  Tensor w2;  // H x C
  Tensor b2;  // C
  Activation activation = Activation::gelu;

  int in_dim() const { return w1.rows(); }
  int hidden_dim() const { return w1.cols(); }
};

struct FeedForwardGrads {
  Tensor w1, b1, w2, b2;
};

// ---- forward ops ----

// Standard matrix product; inner summation runs over ascending k.
Tensor matmul(const Tensor& a, const Tensor& b);
// a @ b^T without materializing the transpose.
Tensor matmul_nt(const Tensor& a, const Tensor& b);
// a^T @ b.
Tensor matmul_tn(const Tensor& a, const Tensor& b);

// Per-row standardization with the biased variance estimator, then gain/bias.
Tensor layer_norm(const Tensor& x, const LayerNormParams& p);

// Per-row softmax, computed against the row max so large inputs cannot
// overflow.
Tensor softmax(const Tensor& x);

// Per-row w2 * act(w1 * x + b1) + b2.
Tensor feed_forward(const Tensor& x, const FeedForwardParams& p);

// Per-row x @ w + b.
Tensor linear(const Tensor& x, const Tensor& w, const Tensor& b);

double dot(const Tensor& a, const Tensor& b);
double norm(const Tensor& a);
// Cosine similarity of two vectors; throws a degenerate-input error when
// either norm is zero.
double cosine(const Tensor& a, const Tensor& b);

struct RowMax {
  Tensor values;            // one entry per row
  std::vector<int> argmax;  // lowest index wins ties
};
RowMax row_max(const Tensor& x);

// elementwise helpers
Tensor add(const Tensor& a, const Tensor& b);
Tensor sub(const Tensor& a, const Tensor& b);
Tensor scale(const Tensor& a, double s);
// y += alpha * x
void axpy(double alpha, const Tensor& x, Tensor& y);
// Mean of the rows of a 2-D tensor, as a 1-D tensor.
Tensor mean_rows(const Tensor& x);

double activation_value(Activation a, double x);
double activation_grad(Activation a, double x);

// ---- backward ops ----
//
// Each backward rule takes the upstream gradient of its output and
// *accumulates* into the provided gradient tensors (callers zero-init them).
// Null destinations are skipped.

void matmul_backward(const Tensor& a, const Tensor& b, const Tensor& g,
                     Tensor* da, Tensor* db);
void layer_norm_backward(const Tensor& x, const LayerNormParams& p, const Tensor& g,
                         Tensor* dx, LayerNormGrads* dp);
// Takes the forward output y, not the input.
void softmax_backward(const Tensor& y, const Tensor& g, Tensor* dx);
void feed_forward_backward(const Tensor& x, const FeedForwardParams& p, const Tensor& g,
                           Tensor* dx, FeedForwardGrads* dp);
void linear_backward(const Tensor& x, const Tensor& w, const Tensor& g,
                     Tensor* dx, Tensor* dw, Tensor* db);
void cosine_backward(const Tensor& a, const Tensor& b, double upstream,
                     Tensor* da, Tensor* db);
void dot_backward(const Tensor& a, const Tensor& b, double upstream,
                  Tensor* da, Tensor* db);
// Routes each row's upstream entry to that row's argmax column.
void row_max_backward(const RowMax& fwd, const Tensor& g, Tensor* dx);

}  // namespace tvr
