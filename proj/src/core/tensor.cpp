#include "tensor.hpp"

#include <cmath>

namespace tvr {

namespace {

void require(bool ok, const std::string& what) {
  if (!ok) fail(ErrorCode::dimension, what);
}

}  // namespace

Tensor Tensor::vec(int n) {
  return Tensor({n}, std::vector<double>(static_cast<size_t>(n), 0.0));
}

Tensor Tensor::mat(int rows, int cols) {
  return Tensor({rows, cols},
                std::vector<double>(static_cast<size_t>(rows) * cols, 0.0));
}

Tensor Tensor::from(std::initializer_list<double> values) {
  return Tensor({static_cast<int>(values.size())}, std::vector<double>(values));
}

Tensor Tensor::from_rows(std::initializer_list<std::initializer_list<double>> rows) {
  const int r = static_cast<int>(rows.size());
  const int c = r > 0 ? static_cast<int>(rows.begin()->size()) : 0;
  std::vector<double> data;
  data.reserve(static_cast<size_t>(r) * c);
  for (const auto& row : rows) {
    if (static_cast<int>(row.size()) != c)
      fail(ErrorCode::dimension, "ragged rows in tensor literal");
    data.insert(data.end(), row.begin(), row.end());
  }
  return Tensor({r, c}, std::move(data));
}

Tensor Tensor::eye(int n) {
  Tensor t = mat(n, n);
  for (int i = 0; i < n; ++i) t.at(i, i) = 1.0;
  return t;
}

Tensor Tensor::full(int n, double value) {
  return Tensor({n}, std::vector<double>(static_cast<size_t>(n), value));
}

void Tensor::fill(double v) {
  for (double& x : data_) x = v;
}

bool Tensor::all_finite() const {
  for (double x : data_)
    if (!std::isfinite(x)) return false;
  return true;
}

Tensor Tensor::row_vec(int r) const {
  Tensor out = vec(cols());
  for (int c = 0; c < cols(); ++c) out[c] = at(r, c);
  return out;
}

LayerNormParams LayerNormParams::identity(int c) {
  LayerNormParams p;
  p.gain = Tensor::full(c, 1.0);
  p.bias = Tensor::vec(c);
  return p;
}

// ---- forward ----

Tensor matmul(const Tensor& a, const Tensor& b) {
  require(a.cols() == b.rows(), "matmul: inner dimensions disagree");
  const int m = a.rows(), k = a.cols(), n = b.cols();
  Tensor out = a.rank() == 1 && b.rank() == 2 && m == 1
                   ? Tensor::vec(n)
                   : Tensor::mat(m, n);
  if (a.rank() == 1 && b.rank() == 1) out = Tensor::mat(m, n);
  // i-p-j ordering: each output element still accumulates over ascending p,
  // identical rounding to the naive triple loop, better locality.
  for (int i = 0; i < m; ++i) {
    auto arow = a.row(i);
    for (int p = 0; p < k; ++p) {
      const double aip = arow[p];
      auto brow = b.row(p);
      for (int j = 0; j < n; ++j) out[i * n + j] += aip * brow[j];
    }
  }
  return out;
}

Tensor matmul_nt(const Tensor& a, const Tensor& b) {
  require(a.cols() == b.cols(), "matmul_nt: contraction dimensions disagree");
  const int m = a.rows(), k = a.cols(), n = b.rows();
  Tensor out = a.rank() == 1 ? Tensor::vec(n) : Tensor::mat(m, n);
  for (int i = 0; i < m; ++i) {
    auto arow = a.row(i);
    for (int j = 0; j < n; ++j) {
      auto brow = b.row(j);
      double acc = 0.0;
      for (int p = 0; p < k; ++p) acc += arow[p] * brow[p];
      out[i * n + j] = acc;
    }
  }
  return out;
}

Tensor matmul_tn(const Tensor& a, const Tensor& b) {
  require(a.rows() == b.rows(), "matmul_tn: contraction dimensions disagree");
  const int m = a.cols(), k = a.rows(), n = b.cols();
  Tensor out = Tensor::mat(m, n);
  for (int p = 0; p < k; ++p) {
    auto arow = a.row(p);
    auto brow = b.row(p);
    for (int i = 0; i < m; ++i) {
      const double api = arow[i];
      for (int j = 0; j < n; ++j) out[i * n + j] += api * brow[j];
    }
  }
  return out;
}

Tensor layer_norm(const Tensor& x, const LayerNormParams& p) {
  const int c = x.cols();
  require(p.gain.size() == c && p.bias.size() == c,
          "layer_norm: parameter length does not match last dimension");
  require(p.epsilon > 0.0, "layer_norm: epsilon must be positive");
  Tensor out = x;
  for (int r = 0; r < x.rows(); ++r) {
    auto xi = x.row(r);
    double mean = 0.0;
    for (int i = 0; i < c; ++i) mean += xi[i];
    mean /= c;
    double var = 0.0;
    for (int i = 0; i < c; ++i) var += (xi[i] - mean) * (xi[i] - mean);
    var /= c;
    const double inv = 1.0 / std::sqrt(var + p.epsilon);
    auto oi = out.row(r);
    for (int i = 0; i < c; ++i)
      oi[i] = (xi[i] - mean) * inv * p.gain[i] + p.bias[i];
  }
  return out;
}

Tensor softmax(const Tensor& x) {
  const int c = x.cols();
  require(c > 0, "softmax: empty row");
  Tensor out = x;
  for (int r = 0; r < x.rows(); ++r) {
    auto xi = x.row(r);
    double m = xi[0];
    for (int i = 1; i < c; ++i)
      if (xi[i] > m) m = xi[i];
    auto oi = out.row(r);
    double sum = 0.0;
    for (int i = 0; i < c; ++i) {
      oi[i] = std::exp(xi[i] - m);
      sum += oi[i];
    }
    for (int i = 0; i < c; ++i) oi[i] /= sum;
  }
  return out;
}

double activation_value(Activation a, double x) {
  switch (a) {
    case Activation::relu:
      return x > 0.0 ? x : 0.0;
    case Activation::gelu:
      // Exact form: x * Phi(x).
      return 0.5 * x * (1.0 + std::erf(x * 0.7071067811865475244));
  }
  return 0.0;
}

double activation_grad(Activation a, double x) {
  switch (a) {
    case Activation::relu:
      return x > 0.0 ? 1.0 : 0.0;
    case Activation::gelu: {
      const double phi = std::exp(-0.5 * x * x) * 0.3989422804014326779;
      return 0.5 * (1.0 + std::erf(x * 0.7071067811865475244)) + x * phi;
    }
  }
  return 0.0;
}

Tensor feed_forward(const Tensor& x, const FeedForwardParams& p) {
  require(x.cols() == p.w1.rows(), "feed_forward: input width does not match w1");
  require(p.w1.cols() == p.b1.size() && p.w1.cols() == p.w2.rows() &&
              p.w2.cols() == p.b2.size(),
          "feed_forward: inconsistent parameter shapes");
  Tensor h = matmul(x, p.w1);
  for (int r = 0; r < h.rows(); ++r) {
    auto hr = h.row(r);
    for (int i = 0; i < h.cols(); ++i)
      hr[i] = activation_value(p.activation, hr[i] + p.b1[i]);
  }
  Tensor out = matmul(h, p.w2);
  for (int r = 0; r < out.rows(); ++r) {
    auto orow = out.row(r);
    for (int i = 0; i < out.cols(); ++i) orow[i] += p.b2[i];
  }
  return out;
}

Tensor linear(const Tensor& x, const Tensor& w, const Tensor& b) {
  require(x.cols() == w.rows() && w.cols() == b.size(),
          "linear: inconsistent shapes");
  Tensor out = matmul(x, w);
  for (int r = 0; r < out.rows(); ++r) {
    auto orow = out.row(r);
    for (int i = 0; i < out.cols(); ++i) orow[i] += b[i];
  }
  return out;
}

double dot(const Tensor& a, const Tensor& b) {
  require(a.size() == b.size(), "dot: length mismatch");
  double acc = 0.0;
  for (int i = 0; i < a.size(); ++i) acc += a[i] * b[i];
  return acc;
}

double norm(const Tensor& a) { return std::sqrt(dot(a, a)); }

double cosine(const Tensor& a, const Tensor& b) {
  const double na = norm(a);
  const double nb = norm(b);
  if (na == 0.0 || nb == 0.0)
    fail(ErrorCode::degenerate, "cosine: zero-norm input");
  double s = dot(a, b) / (na * nb);
  if (s > 1.0) s = 1.0;
  if (s < -1.0) s = -1.0;
  return s;
}

RowMax row_max(const Tensor& x) {
  require(x.cols() > 0, "row_max: empty row");
  RowMax out;
  out.values = Tensor::vec(x.rows());
  out.argmax.resize(x.rows());
  for (int r = 0; r < x.rows(); ++r) {
    auto xi = x.row(r);
    int best = 0;
    for (int i = 1; i < x.cols(); ++i)
      if (xi[i] > xi[best]) best = i;
    out.values[r] = xi[best];
    out.argmax[r] = best;
  }
  return out;
}

Tensor add(const Tensor& a, const Tensor& b) {
  require(a.same_shape(b), "add: shape mismatch");
  Tensor out = a;
  for (int i = 0; i < out.size(); ++i) out[i] += b[i];
  return out;
}

Tensor sub(const Tensor& a, const Tensor& b) {
  require(a.same_shape(b), "sub: shape mismatch");
  Tensor out = a;
  for (int i = 0; i < out.size(); ++i) out[i] -= b[i];
  return out;
}

Tensor scale(const Tensor& a, double s) {
  Tensor out = a;
  for (int i = 0; i < out.size(); ++i) out[i] *= s;
  return out;
}

void axpy(double alpha, const Tensor& x, Tensor& y) {
  require(x.same_shape(y), "axpy: shape mismatch");
  for (int i = 0; i < y.size(); ++i) y[i] += alpha * x[i];
}

Tensor mean_rows(const Tensor& x) {
  require(x.rank() == 2 && x.rows() > 0, "mean_rows: need a nonempty matrix");
  Tensor out = Tensor::vec(x.cols());
  for (int r = 0; r < x.rows(); ++r) {
    auto xi = x.row(r);
    for (int i = 0; i < x.cols(); ++i) out[i] += xi[i];
  }
  for (int i = 0; i < x.cols(); ++i) out[i] /= x.rows();
  return out;
}

// ---- backward ----

void matmul_backward(const Tensor& a, const Tensor& b, const Tensor& g,
                     Tensor* da, Tensor* db) {
  require(g.rows() == a.rows() && g.cols() == b.cols(),
          "matmul_backward: upstream shape mismatch");
  if (da) axpy(1.0, matmul_nt(g, b), *da);
  if (db) axpy(1.0, matmul_tn(a, g), *db);
}

void layer_norm_backward(const Tensor& x, const LayerNormParams& p, const Tensor& g,
                         Tensor* dx, LayerNormGrads* dp) {
  const int c = x.cols();
  require(g.same_shape(x), "layer_norm_backward: upstream shape mismatch");
  for (int r = 0; r < x.rows(); ++r) {
    auto xi = x.row(r);
    auto gi = g.row(r);
    double mean = 0.0;
    for (int i = 0; i < c; ++i) mean += xi[i];
    mean /= c;
    double var = 0.0;
    for (int i = 0; i < c; ++i) var += (xi[i] - mean) * (xi[i] - mean);
    var /= c;
    const double inv = 1.0 / std::sqrt(var + p.epsilon);
    // xhat_i = (x_i - mean) * inv; out_i = xhat_i * gain_i + bias_i
    if (dp) {
      for (int i = 0; i < c; ++i) {
        dp->gain[i] += gi[i] * (xi[i] - mean) * inv;
        dp->bias[i] += gi[i];
      }
    }
    if (dx) {
      // dxhat = g * gain; dx = inv * (dxhat - mean(dxhat) - xhat * mean(dxhat*xhat))
      double sum_dxh = 0.0;
      double sum_dxh_xh = 0.0;
      for (int i = 0; i < c; ++i) {
        const double xh = (xi[i] - mean) * inv;
        const double dxh = gi[i] * p.gain[i];
        sum_dxh += dxh;
        sum_dxh_xh += dxh * xh;
      }
      auto dxi = dx->row(r);
      for (int i = 0; i < c; ++i) {
        const double xh = (xi[i] - mean) * inv;
        const double dxh = gi[i] * p.gain[i];
        dxi[i] += inv * (dxh - sum_dxh / c - xh * sum_dxh_xh / c);
      }
    }
  }
}

void softmax_backward(const Tensor& y, const Tensor& g, Tensor* dx) {
  require(g.same_shape(y), "softmax_backward: upstream shape mismatch");
  if (!dx) return;
  const int c = y.cols();
  for (int r = 0; r < y.rows(); ++r) {
    auto yi = y.row(r);
    auto gi = g.row(r);
    double gy = 0.0;
    for (int i = 0; i < c; ++i) gy += gi[i] * yi[i];
    auto dxi = dx->row(r);
    for (int i = 0; i < c; ++i) dxi[i] += yi[i] * (gi[i] - gy);
  }
}

void feed_forward_backward(const Tensor& x, const FeedForwardParams& p, const Tensor& g,
                           Tensor* dx, FeedForwardGrads* dp) {
  require(g.rows() == x.rows() && g.cols() == p.w2.cols(),
          "feed_forward_backward: upstream shape mismatch");
  // Recompute the hidden pre-activation.
  Tensor pre = matmul(x, p.w1);
  for (int r = 0; r < pre.rows(); ++r) {
    auto hr = pre.row(r);
    for (int i = 0; i < pre.cols(); ++i) hr[i] += p.b1[i];
  }
  Tensor act = pre;
  for (int i = 0; i < act.size(); ++i)
    act[i] = activation_value(p.activation, act[i]);

  if (dp)
    for (int r = 0; r < g.rows(); ++r) {
      auto gr = g.row(r);
      for (int i = 0; i < g.cols(); ++i) dp->b2[i] += gr[i];
    }
  Tensor dact = act;  // same shape and rank as the activation
  dact.fill(0.0);
  matmul_backward(act, p.w2, g, &dact, dp ? &dp->w2 : nullptr);
  Tensor dpre = dact;
  for (int i = 0; i < dpre.size(); ++i)
    dpre[i] = dact[i] * activation_grad(p.activation, pre[i]);
  if (dp)
    for (int r = 0; r < dpre.rows(); ++r) {
      auto dr = dpre.row(r);
      for (int i = 0; i < dpre.cols(); ++i) dp->b1[i] += dr[i];
    }
  matmul_backward(x, p.w1, dpre, dx, dp ? &dp->w1 : nullptr);
}

void linear_backward(const Tensor& x, const Tensor& w, const Tensor& g,
                     Tensor* dx, Tensor* dw, Tensor* db) {
  require(g.rows() == x.rows() && g.cols() == w.cols(),
          "linear_backward: upstream shape mismatch");
  if (db)
    for (int r = 0; r < g.rows(); ++r) {
      auto gr = g.row(r);
      for (int i = 0; i < g.cols(); ++i) (*db)[i] += gr[i];
    }
  matmul_backward(x, w, g, dx, dw);
}

void cosine_backward(const Tensor& a, const Tensor& b, double upstream,
                     Tensor* da, Tensor* db) {
  const double na = norm(a);
  const double nb = norm(b);
  if (na == 0.0 || nb == 0.0)
    fail(ErrorCode::degenerate, "cosine_backward: zero-norm input");
  const double ab = dot(a, b);
  const double s = ab / (na * nb);
  if (da)
    for (int i = 0; i < a.size(); ++i)
      (*da)[i] += upstream * (b[i] / (na * nb) - s * a[i] / (na * na));
  if (db)
    for (int i = 0; i < b.size(); ++i)
      (*db)[i] += upstream * (a[i] / (na * nb) - s * b[i] / (nb * nb));
}

void dot_backward(const Tensor& a, const Tensor& b, double upstream,
                  Tensor* da, Tensor* db) {
  require(a.size() == b.size(), "dot_backward: length mismatch");
  if (da) axpy(upstream, b, *da);
  if (db) axpy(upstream, a, *db);
}

void row_max_backward(const RowMax& fwd, const Tensor& g, Tensor* dx) {
  require(g.size() == static_cast<int>(fwd.argmax.size()),
          "row_max_backward: upstream length mismatch");
  if (!dx) return;
  for (size_t r = 0; r < fwd.argmax.size(); ++r)
    dx->at(static_cast<int>(r), fwd.argmax[r]) += g[static_cast<int>(r)];
}

}  // namespace tvr
