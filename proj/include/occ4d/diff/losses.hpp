#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <numeric>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "occ4d/diff/ops.hpp"
#include "occ4d/grid.hpp"

namespace occ4d::diff {

inline constexpr double kProbFloor = 1e-12;

namespace detail {

inline void check_labels(std::span<const std::uint8_t> labels, std::size_t rows,
                         std::size_t categories, const char* op) {
  if (labels.size() != rows) {
    fail(ErrorKind::validation, std::string(op) + ": " + std::to_string(labels.size()) +
                                    " labels for " + std::to_string(rows) + " rows");
  }
  for (std::size_t i = 0; i < labels.size(); ++i) {
    if (labels[i] >= categories) {
      fail(ErrorKind::validation, std::string(op) + ": label " + std::to_string(labels[i]) +
                                      " at voxel " + std::to_string(i) + " outside [0," +
                                      std::to_string(categories) + ")");
    }
  }
}

}  // namespace detail

/// Maps a splat field with rows [class_prob_0..C-1, occ] to the (C+1)-way
/// distribution [occ * class_prob_c ..., 1 - occ]; the last category is free.
inline Var occupancy_distribution(Var field) {
  detail::require_matrix(field, "occupancy_distribution");
  const std::size_t rows = field.rows(), k = field.cols(), classes = k - 1;
  Tensor y = Tensor::zeros_like(field.value());
  for (std::size_t r = 0; r < rows; ++r) {
    const double occ = field.value()(r, classes);
    for (std::size_t c = 0; c < classes; ++c) y(r, c) = occ * field.value()(r, c);
    y(r, classes) = 1.0 - occ;
  }
  return field.graph->record(std::move(y), {field}, [field, rows, classes](Graph& g, const Tensor& gy) {
    Tensor gx = Tensor::zeros_like(field.value());
    for (std::size_t r = 0; r < rows; ++r) {
      const double occ = field.value()(r, classes);
      double g_occ = -gy(r, classes);
      for (std::size_t c = 0; c < classes; ++c) {
        gx(r, c) = gy(r, c) * occ;
        g_occ += gy(r, c) * field.value()(r, c);
      }
      gx(r, classes) = g_occ;
    }
    g.accumulate(field, gx);
  });
}

/// Weighted mean negative log-likelihood of the labelled category:
/// sum_i w[y_i] * -log p_i[y_i] / sum_i w[y_i].
inline Var cross_entropy_loss(Var probs, std::span<const std::uint8_t> labels,
                              std::span<const double> class_weights) {
  detail::require_matrix(probs, "cross_entropy_loss");
  const std::size_t rows = probs.rows(), k = probs.cols();
  detail::check_labels(labels, rows, k, "cross_entropy_loss");
  if (class_weights.size() != k) {
    fail(ErrorKind::validation, "cross_entropy_loss: expected " + std::to_string(k) +
                                    " class weights, got " + std::to_string(class_weights.size()));
  }
  double total = 0.0, norm = 0.0;
  for (std::size_t i = 0; i < rows; ++i) {
    const double w = class_weights[labels[i]];
    total += w * -std::log(std::max(probs.value()(i, labels[i]), kProbFloor));
    norm += w;
  }
  if (!(norm > 0.0)) {
    fail(ErrorKind::validation, "cross_entropy_loss: class weights sum to zero over the labels");
  }
  std::vector<std::uint8_t> lab(labels.begin(), labels.end());
  std::vector<double> wts(class_weights.begin(), class_weights.end());
  return probs.graph->record(
      Tensor::scalar(total / norm), {probs}, [probs, lab, wts, norm](Graph& g, const Tensor& gy) {
        Tensor* gp = g.grad_buffer(probs);
        if (gp == nullptr) return;
        const std::size_t k = probs.cols();
        for (std::size_t i = 0; i < lab.size(); ++i) {
          const double p = probs.value()(i, lab[i]);
          if (p > kProbFloor) {
            (*gp)[i * k + lab[i]] -= gy.item() * wts[lab[i]] / (norm * p);
          }
        }
      });
}

inline Var cross_entropy_loss(Var probs, const LabelGrid& labels,
                              std::span<const double> class_weights) {
  return cross_entropy_loss(probs, std::span<const std::uint8_t>(labels.labels), class_weights);
}

/// Per-category Lovasz hinge on the Jaccard extension. Entries are empty for
/// categories absent from the labels. When grad is given it receives
/// d(loss_c)/d(probs) summed over present categories.
inline std::vector<std::optional<double>> lovasz_class_losses(const Tensor& probs,
                                                              std::span<const std::uint8_t> labels,
                                                              Tensor* grad = nullptr) {
  const std::size_t n = probs.rows(), k = probs.cols();
  detail::check_labels(labels, n, k, "lovasz_softmax_loss");
  std::vector<std::optional<double>> out(k);
  std::vector<double> errors(n);
  std::vector<std::size_t> order(n);
  std::vector<double> jaccard(n);
  for (std::size_t c = 0; c < k; ++c) {
    std::size_t gts = 0;
    for (std::size_t i = 0; i < n; ++i) {
      const bool fg = labels[i] == c;
      gts += fg ? 1 : 0;
      errors[i] = fg ? 1.0 - probs(i, c) : probs(i, c);
    }
    if (gts == 0) {
      continue;
    }
    std::iota(order.begin(), order.end(), std::size_t{0});
    std::stable_sort(order.begin(), order.end(),
                     [&](std::size_t a, std::size_t b) { return errors[a] > errors[b]; });
    std::size_t cum_fg = 0, cum_bg = 0;
    for (std::size_t r = 0; r < n; ++r) {
      if (labels[order[r]] == c) {
        ++cum_fg;
      } else {
        ++cum_bg;
      }
      const double inter = static_cast<double>(gts - cum_fg);
      const double uni = static_cast<double>(gts + cum_bg);
      jaccard[r] = 1.0 - inter / uni;
    }
    // sum_r m_r (J_r - J_{r-1}) rearranged to sum_r J_r (m_r - m_{r+1}); runs
    // of equal J telescope to J (m_first - m_after).
    double loss = 0.0;
    for (std::size_t r = 0; r < n;) {
      std::size_t end = r + 1;
      while (end < n && jaccard[end] == jaccard[r]) ++end;
      const double after = end < n ? errors[order[end]] : 0.0;
      const double step = errors[order[r]] - after;
      if (step != 0.0) loss += jaccard[r] * step;
      r = end;
    }
    out[c] = loss;
    if (grad != nullptr) {
      for (std::size_t r = 0; r < n; ++r) {
        const std::size_t i = order[r];
        const double dj = jaccard[r] - (r > 0 ? jaccard[r - 1] : 0.0);
        (*grad)(i, c) += labels[i] == c ? -dj : dj;
      }
    }
  }
  return out;
}

/// Mean over present categories of the per-category Lovasz loss.
inline Var lovasz_softmax_loss(Var probs, std::span<const std::uint8_t> labels) {
  detail::require_matrix(probs, "lovasz_softmax_loss");
  Tensor grad = Tensor::zeros_like(probs.value());
  const auto per_class = lovasz_class_losses(probs.value(), labels, &grad);
  double total = 0.0;
  std::size_t present = 0;
  for (const auto& l : per_class) {
    if (l) {
      total += *l;
      ++present;
    }
  }
  const double inv = present > 0 ? 1.0 / static_cast<double>(present) : 0.0;
  return probs.graph->record(Tensor::scalar(total * inv), {probs},
                             [probs, grad, inv](Graph& g, const Tensor& gy) {
                               Tensor gp = grad;
                               const double s = gy.item() * inv;
                               for (auto& v : gp.values()) v *= s;
                               g.accumulate(probs, gp);
                             });
}

inline Var lovasz_softmax_loss(Var probs, const LabelGrid& labels) {
  return lovasz_softmax_loss(probs, std::span<const std::uint8_t>(labels.labels));
}

inline Var mse_loss(Var pred, Var target) {
  if (pred.shape() != target.shape()) {
    fail(ErrorKind::shape, "mse_loss: shape mismatch " + shape_str(pred.shape()) + " vs " +
                               shape_str(target.shape()));
  }
  const std::size_t n = pred.value().size();
  double s = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    const double d = pred.value()[i] - target.value()[i];
    s += d * d;
  }
  return pred.graph->record(Tensor::scalar(s / static_cast<double>(n)), {pred, target},
                            [pred, target, n](Graph& g, const Tensor& gy) {
                              Tensor gp = Tensor::zeros_like(pred.value());
                              const double k = 2.0 * gy.item() / static_cast<double>(n);
                              for (std::size_t i = 0; i < n; ++i) {
                                gp[i] = k * (pred.value()[i] - target.value()[i]);
                              }
                              g.accumulate(pred, gp);
                              if (g.requires_grad(target)) {
                                for (auto& v : gp.values()) v = -v;
                                g.accumulate(target, gp);
                              }
                            });
}

}  // namespace occ4d::diff
