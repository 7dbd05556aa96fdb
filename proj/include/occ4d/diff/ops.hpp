#pragma once

// Elementary differentiable operators. Matrices are row-major rows x cols.

#include <algorithm>
#include <cmath>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "occ4d/diff/graph.hpp"

namespace occ4d::diff {

namespace detail {

using RowMajor = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using MapC = Eigen::Map<const RowMajor>;
using Map = Eigen::Map<RowMajor>;

inline MapC as_matrix(const Tensor& t) {
  return MapC(t.data(), static_cast<Eigen::Index>(t.rows()), static_cast<Eigen::Index>(t.cols()));
}
inline Map as_matrix(Tensor& t) {
  return Map(t.data(), static_cast<Eigen::Index>(t.rows()), static_cast<Eigen::Index>(t.cols()));
}

inline void require_same_shape(const Var& a, const Var& b, const char* op) {
  if (a.shape() != b.shape()) {
    fail(ErrorKind::shape, std::string(op) + ": shape mismatch " + shape_str(a.shape()) + " vs " +
                               shape_str(b.shape()));
  }
}

inline void require_matrix(const Var& a, const char* op) {
  if (a.value().rank() != 2) {
    fail(ErrorKind::shape, std::string(op) + ": expected a matrix, got " + shape_str(a.shape()));
  }
}

template <typename F>
Tensor map_values(const Tensor& x, F&& f) {
  Tensor y = Tensor::zeros_like(x);
  for (std::size_t i = 0; i < x.size(); ++i) y[i] = f(x[i]);
  return y;
}

}  // namespace detail

inline Var add(Var a, Var b) {
  detail::require_same_shape(a, b, "add");
  Tensor y = a.value();
  y += b.value();
  return a.graph->record(std::move(y), {a, b}, [a, b](Graph& g, const Tensor& gy) {
    g.accumulate(a, gy);
    g.accumulate(b, gy);
  });
}

inline Var scale(Var a, double s) {
  Tensor y = detail::map_values(a.value(), [s](double v) { return s * v; });
  return a.graph->record(std::move(y), {a}, [a, s](Graph& g, const Tensor& gy) {
    g.accumulate(a, detail::map_values(gy, [s](double v) { return s * v; }));
  });
}

inline Var neg(Var a) { return scale(a, -1.0); }

inline Var sub(Var a, Var b) {
  detail::require_same_shape(a, b, "sub");
  Tensor y = a.value();
  for (std::size_t i = 0; i < y.size(); ++i) y[i] -= b.value()[i];
  return a.graph->record(std::move(y), {a, b}, [a, b](Graph& g, const Tensor& gy) {
    g.accumulate(a, gy);
    g.accumulate(b, detail::map_values(gy, [](double v) { return -v; }));
  });
}

/// Elementwise product.
inline Var mul(Var a, Var b) {
  detail::require_same_shape(a, b, "mul");
  Tensor y = a.value();
  for (std::size_t i = 0; i < y.size(); ++i) y[i] *= b.value()[i];
  return a.graph->record(std::move(y), {a, b}, [a, b](Graph& g, const Tensor& gy) {
    if (g.requires_grad(a)) {
      Tensor ga = gy;
      for (std::size_t i = 0; i < ga.size(); ++i) ga[i] *= b.value()[i];
      g.accumulate(a, ga);
    }
    if (g.requires_grad(b)) {
      Tensor gb = gy;
      for (std::size_t i = 0; i < gb.size(); ++i) gb[i] *= a.value()[i];
      g.accumulate(b, gb);
    }
  });
}

/// x (R x C) + row (1 x C) broadcast over rows.
inline Var add_row(Var x, Var row) {
  detail::require_matrix(x, "add_row");
  detail::require_matrix(row, "add_row");
  if (row.rows() != 1 || row.cols() != x.cols()) {
    fail(ErrorKind::shape, "add_row: cannot broadcast " + shape_str(row.shape()) + " onto " +
                               shape_str(x.shape()));
  }
  Tensor y = x.value();
  const std::size_t c = x.cols();
  for (std::size_t i = 0; i < y.size(); ++i) y[i] += row.value()[i % c];
  return x.graph->record(std::move(y), {x, row}, [x, row, c](Graph& g, const Tensor& gy) {
    g.accumulate(x, gy);
    if (g.requires_grad(row)) {
      Tensor gr({1, c}, 0.0);
      for (std::size_t i = 0; i < gy.size(); ++i) gr[i % c] += gy[i];
      g.accumulate(row, gr);
    }
  });
}

/// x (R x C) scaled row-wise by col (R x 1).
inline Var mul_col(Var x, Var col) {
  detail::require_matrix(x, "mul_col");
  detail::require_matrix(col, "mul_col");
  if (col.cols() != 1 || col.rows() != x.rows()) {
    fail(ErrorKind::shape, "mul_col: cannot broadcast " + shape_str(col.shape()) + " onto " +
                               shape_str(x.shape()));
  }
  const std::size_t c = x.cols();
  Tensor y = x.value();
  for (std::size_t i = 0; i < y.size(); ++i) y[i] *= col.value()[i / c];
  return x.graph->record(std::move(y), {x, col}, [x, col, c](Graph& g, const Tensor& gy) {
    if (g.requires_grad(x)) {
      Tensor gx = gy;
      for (std::size_t i = 0; i < gx.size(); ++i) gx[i] *= col.value()[i / c];
      g.accumulate(x, gx);
    }
    if (g.requires_grad(col)) {
      Tensor gc = Tensor::zeros_like(col.value());
      for (std::size_t i = 0; i < gy.size(); ++i) gc[i / c] += gy[i] * x.value()[i];
      g.accumulate(col, gc);
    }
  });
}

inline Var sum(Var x) {
  double s = 0.0;
  for (double v : x.value().values()) s += v;
  return x.graph->record(Tensor::scalar(s), {x}, [x](Graph& g, const Tensor& gy) {
    g.accumulate(x, Tensor(x.shape(), gy.item()));
  });
}

inline Var mean(Var x) { return scale(sum(x), 1.0 / static_cast<double>(x.value().size())); }

inline Var matmul(Var a, Var b) {
  detail::require_matrix(a, "matmul");
  detail::require_matrix(b, "matmul");
  if (a.cols() != b.rows()) {
    fail(ErrorKind::shape,
         "matmul: inner dimensions differ " + shape_str(a.shape()) + " x " + shape_str(b.shape()));
  }
  Tensor y = Tensor::matrix(a.rows(), b.cols());
  detail::as_matrix(y).noalias() = detail::as_matrix(a.value()) * detail::as_matrix(b.value());
  return a.graph->record(std::move(y), {a, b}, [a, b](Graph& g, const Tensor& gy) {
    if (Tensor* ga = g.grad_buffer(a)) {
      detail::as_matrix(*ga).noalias() +=
          detail::as_matrix(gy) * detail::as_matrix(b.value()).transpose();
    }
    if (Tensor* gb = g.grad_buffer(b)) {
      detail::as_matrix(*gb).noalias() +=
          detail::as_matrix(a.value()).transpose() * detail::as_matrix(gy);
    }
  });
}

inline Var transpose(Var a) {
  detail::require_matrix(a, "transpose");
  Tensor y = Tensor::matrix(a.cols(), a.rows());
  detail::as_matrix(y) = detail::as_matrix(a.value()).transpose();
  return a.graph->record(std::move(y), {a}, [a](Graph& g, const Tensor& gy) {
    if (Tensor* ga = g.grad_buffer(a)) {
      detail::as_matrix(*ga) += detail::as_matrix(gy).transpose();
    }
  });
}

/// x (N x in) W (in x out) + b (1 x out).
inline Var linear(Var x, Var w, Var b) {
  detail::require_matrix(x, "linear");
  detail::require_matrix(w, "linear");
  if (x.cols() != w.rows()) {
    fail(ErrorKind::shape,
         "linear: input " + shape_str(x.shape()) + " incompatible with weight " + shape_str(w.shape()));
  }
  return add_row(matmul(x, w), b);
}

inline Var relu(Var x) {
  Tensor y = detail::map_values(x.value(), [](double v) { return v > 0.0 ? v : 0.0; });
  return x.graph->record(std::move(y), {x}, [x](Graph& g, const Tensor& gy) {
    Tensor gx = gy;
    for (std::size_t i = 0; i < gx.size(); ++i) {
      if (!(x.value()[i] > 0.0)) gx[i] = 0.0;
    }
    g.accumulate(x, gx);
  });
}

inline Var exp(Var x) {
  Tensor y = detail::map_values(x.value(), [](double v) { return std::exp(v); });
  return x.graph->record(y, {x}, [x, y](Graph& g, const Tensor& gy) {
    Tensor gx = gy;
    for (std::size_t i = 0; i < gx.size(); ++i) gx[i] *= y[i];
    g.accumulate(x, gx);
  });
}

inline Var sigmoid(Var x) {
  auto sig = [](double v) {
    if (v >= 0.0) return 1.0 / (1.0 + std::exp(-v));
    const double e = std::exp(v);
    return e / (1.0 + e);
  };
  Tensor y = detail::map_values(x.value(), sig);
  return x.graph->record(y, {x}, [x, y](Graph& g, const Tensor& gy) {
    Tensor gx = gy;
    for (std::size_t i = 0; i < gx.size(); ++i) gx[i] *= y[i] * (1.0 - y[i]);
    g.accumulate(x, gx);
  });
}

/// Per-row normalization to zero mean and unit (biased) variance.
inline Var layer_norm(Var x, double eps = 1e-9) {
  detail::require_matrix(x, "layer_norm");
  const std::size_t rows = x.rows(), cols = x.cols();
  Tensor y = Tensor::zeros_like(x.value());
  std::vector<double> inv_std(rows);
  for (std::size_t r = 0; r < rows; ++r) {
    double m = 0.0;
    for (std::size_t c = 0; c < cols; ++c) m += x.value()(r, c);
    m /= static_cast<double>(cols);
    double var = 0.0;
    for (std::size_t c = 0; c < cols; ++c) {
      const double d = x.value()(r, c) - m;
      var += d * d;
    }
    var /= static_cast<double>(cols);
    inv_std[r] = 1.0 / std::sqrt(var + eps);
    for (std::size_t c = 0; c < cols; ++c) y(r, c) = (x.value()(r, c) - m) * inv_std[r];
  }
  return x.graph->record(y, {x}, [x, y, inv_std, rows, cols](Graph& g, const Tensor& gy) {
    Tensor gx = Tensor::zeros_like(y);
    const double n = static_cast<double>(cols);
    for (std::size_t r = 0; r < rows; ++r) {
      double sum_g = 0.0, sum_gy = 0.0;
      for (std::size_t c = 0; c < cols; ++c) {
        sum_g += gy(r, c);
        sum_gy += gy(r, c) * y(r, c);
      }
      for (std::size_t c = 0; c < cols; ++c) {
        gx(r, c) = inv_std[r] * (gy(r, c) - sum_g / n - y(r, c) * sum_gy / n);
      }
    }
    g.accumulate(x, gx);
  });
}

/// Softmax along axis 1 (within each row) or axis 0 (within each column).
inline Var softmax(Var x, int axis = 1) {
  detail::require_matrix(x, "softmax");
  if (axis != 0 && axis != 1) {
    fail(ErrorKind::shape, "softmax: axis must be 0 or 1");
  }
  const std::size_t rows = x.rows(), cols = x.cols();
  const std::size_t outer = axis == 1 ? rows : cols;
  const std::size_t inner = axis == 1 ? cols : rows;
  auto at = [axis, cols](std::size_t o, std::size_t i) {
    return axis == 1 ? o * cols + i : i * cols + o;
  };
  Tensor y = Tensor::zeros_like(x.value());
  for (std::size_t o = 0; o < outer; ++o) {
    double m = -INFINITY;
    for (std::size_t i = 0; i < inner; ++i) m = std::max(m, x.value()[at(o, i)]);
    double s = 0.0;
    for (std::size_t i = 0; i < inner; ++i) {
      y[at(o, i)] = std::exp(x.value()[at(o, i)] - m);
      s += y[at(o, i)];
    }
    for (std::size_t i = 0; i < inner; ++i) y[at(o, i)] /= s;
  }
  return x.graph->record(y, {x}, [x, y, outer, inner, at](Graph& g, const Tensor& gy) {
    Tensor gx = Tensor::zeros_like(y);
    for (std::size_t o = 0; o < outer; ++o) {
      double dot = 0.0;
      for (std::size_t i = 0; i < inner; ++i) dot += gy[at(o, i)] * y[at(o, i)];
      for (std::size_t i = 0; i < inner; ++i) gx[at(o, i)] = y[at(o, i)] * (gy[at(o, i)] - dot);
    }
    g.accumulate(x, gx);
  });
}

/// Scales every row to unit Euclidean norm.
inline Var normalize_rows(Var x) {
  detail::require_matrix(x, "normalize_rows");
  const std::size_t rows = x.rows(), cols = x.cols();
  Tensor y = Tensor::zeros_like(x.value());
  std::vector<double> norms(rows);
  for (std::size_t r = 0; r < rows; ++r) {
    double s = 0.0;
    for (std::size_t c = 0; c < cols; ++c) s += x.value()(r, c) * x.value()(r, c);
    norms[r] = std::sqrt(s);
    if (!(norms[r] > 0.0)) {
      fail(ErrorKind::invalid_parameter, "normalize_rows: row " + std::to_string(r) + " has zero norm");
    }
    for (std::size_t c = 0; c < cols; ++c) y(r, c) = x.value()(r, c) / norms[r];
  }
  return x.graph->record(y, {x}, [x, y, norms, rows, cols](Graph& g, const Tensor& gy) {
    Tensor gx = Tensor::zeros_like(y);
    for (std::size_t r = 0; r < rows; ++r) {
      double dot = 0.0;
      for (std::size_t c = 0; c < cols; ++c) dot += gy(r, c) * y(r, c);
      for (std::size_t c = 0; c < cols; ++c) gx(r, c) = (gy(r, c) - y(r, c) * dot) / norms[r];
    }
    g.accumulate(x, gx);
  });
}

/// Columns [begin, end) of a matrix.
inline Var columns(Var x, std::size_t begin, std::size_t end) {
  detail::require_matrix(x, "columns");
  if (begin >= end || end > x.cols()) {
    fail(ErrorKind::shape, "columns: range [" + std::to_string(begin) + "," + std::to_string(end) +
                               ") invalid for " + shape_str(x.shape()));
  }
  const std::size_t rows = x.rows(), cols = x.cols(), w = end - begin;
  Tensor y = Tensor::matrix(rows, w);
  for (std::size_t r = 0; r < rows; ++r) {
    for (std::size_t c = 0; c < w; ++c) y(r, c) = x.value()(r, begin + c);
  }
  return x.graph->record(std::move(y), {x}, [x, rows, cols, begin, w](Graph& g, const Tensor& gy) {
    Tensor* gx = g.grad_buffer(x);
    if (gx == nullptr) return;
    for (std::size_t r = 0; r < rows; ++r) {
      for (std::size_t c = 0; c < w; ++c) (*gx)[r * cols + begin + c] += gy(r, c);
    }
  });
}

inline Var concat_cols(const std::vector<Var>& parts) {
  if (parts.empty()) {
    fail(ErrorKind::shape, "concat_cols: no inputs");
  }
  const std::size_t rows = parts.front().rows();
  std::size_t total = 0;
  for (const auto& p : parts) {
    detail::require_matrix(p, "concat_cols");
    if (p.rows() != rows) {
      fail(ErrorKind::shape, "concat_cols: row mismatch " + shape_str(parts.front().shape()) +
                                 " vs " + shape_str(p.shape()));
    }
    total += p.cols();
  }
  Tensor y = Tensor::matrix(rows, total);
  std::size_t off = 0;
  for (const auto& p : parts) {
    for (std::size_t r = 0; r < rows; ++r) {
      for (std::size_t c = 0; c < p.cols(); ++c) y(r, off + c) = p.value()(r, c);
    }
    off += p.cols();
  }
  return parts.front().graph->record(std::move(y), parts, [parts, rows, total](Graph& g, const Tensor& gy) {
    std::size_t off = 0;
    for (const auto& p : parts) {
      const std::size_t w = p.cols();
      if (Tensor* gp = g.grad_buffer(p)) {
        for (std::size_t r = 0; r < rows; ++r) {
          for (std::size_t c = 0; c < w; ++c) (*gp)(r, c) += gy[r * total + off + c];
        }
      }
      off += w;
    }
  });
}

inline Var reshape(Var x, Shape shape) {
  if (shape_size(shape) != x.value().size()) {
    fail(ErrorKind::shape, "reshape: cannot reshape " + shape_str(x.shape()) + " to " + shape_str(shape));
  }
  Tensor y = x.value().reshaped(std::move(shape));
  return x.graph->record(std::move(y), {x}, [x](Graph& g, const Tensor& gy) {
    g.accumulate(x, gy.reshaped(x.shape()));
  });
}

/// Forward identity that blocks every adjoint.
inline Var stop_gradient(Var x) { return x.graph->constant(x.value()); }

}  // namespace occ4d::diff
