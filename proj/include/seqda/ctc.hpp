#pragma once

// Connectionist temporal classification: loss by log-space forward-backward,
// label collapsing and best-path decoding. The blank is the last class.

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <limits>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include "seqda/autodiff.hpp"
#include "seqda/tensor.hpp"

namespace seqda::ctc {

using LabelSeq = std::vector<int>;

namespace detail {

constexpr double kNegInf = -std::numeric_limits<double>::infinity();

inline double log_add(double a, double b) {
  if (a == kNegInf) return b;
  if (b == kNegInf) return a;
  const double m = std::max(a, b);
  return m + std::log1p(std::exp(-std::abs(a - b)));
}

}  // namespace detail

/// Minimum number of frames that can emit `label`: one per symbol plus one
/// blank between each pair of equal neighbours.
inline std::size_t required_frames(std::span<const int> label) {
  std::size_t repeats = 0;
  for (std::size_t i = 1; i < label.size(); ++i) repeats += label[i] == label[i - 1] ? 1 : 0;
  return label.size() + repeats;
}

struct LossAndGrad {
  double loss = 0.0;
  Tensor grad;  ///< d loss / d log_probs, same shape as the input.
};

/// -log P(label | log_probs) and its gradient with respect to log_probs.
/// log_probs is T' x (K+1) with the blank at column K.
inline LossAndGrad loss_and_grad(const Tensor& log_probs, std::span<const int> label) {
  if (!log_probs.is_matrix() || log_probs.cols() < 2)
    throw std::invalid_argument("ctc: log_probs must be T' x (K+1) with K >= 1, got " + shape_string(log_probs.shape));
  const std::size_t frames = log_probs.rows(), classes = log_probs.cols();
  const int blank = static_cast<int>(classes) - 1;
  for (int s : label)
    if (s < 0 || s >= blank) throw std::invalid_argument("ctc: label symbol " + std::to_string(s) + " outside alphabet");
  if (required_frames(label) > frames)
    throw std::invalid_argument("ctc: label too long for T' (needs " + std::to_string(required_frames(label)) +
                                " frames, have " + std::to_string(frames) + ")");

  const std::size_t states = 2 * label.size() + 1;
  auto sym = [&](std::size_t s) { return s % 2 == 0 ? blank : label[s / 2]; };
  auto skip_ok = [&](std::size_t s) { return s >= 2 && sym(s) != blank && sym(s) != sym(s - 2); };

  using detail::kNegInf;
  using detail::log_add;
  std::vector<double> alpha(frames * states, kNegInf), beta(frames * states, kNegInf);
  auto A = [&](std::size_t t, std::size_t s) -> double& { return alpha[t * states + s]; };
  auto B = [&](std::size_t t, std::size_t s) -> double& { return beta[t * states + s]; };

  A(0, 0) = log_probs(0, static_cast<std::size_t>(blank));
  if (states > 1) A(0, 1) = log_probs(0, static_cast<std::size_t>(sym(1)));
  for (std::size_t t = 1; t < frames; ++t)
    for (std::size_t s = 0; s < states; ++s) {
      double acc = A(t - 1, s);
      if (s >= 1) acc = log_add(acc, A(t - 1, s - 1));
      if (skip_ok(s)) acc = log_add(acc, A(t - 1, s - 2));
      if (acc != kNegInf) A(t, s) = acc + log_probs(t, static_cast<std::size_t>(sym(s)));
    }

  const std::size_t last = frames - 1;
  B(last, states - 1) = log_probs(last, static_cast<std::size_t>(blank));
  if (states > 1) B(last, states - 2) = log_probs(last, static_cast<std::size_t>(sym(states - 2)));
  for (std::size_t t = last; t-- > 0;)
    for (std::size_t s = 0; s < states; ++s) {
      double acc = B(t + 1, s);
      if (s + 1 < states) acc = log_add(acc, B(t + 1, s + 1));
      if (s + 2 < states && skip_ok(s + 2)) acc = log_add(acc, B(t + 1, s + 2));
      if (acc != kNegInf) B(t, s) = acc + log_probs(t, static_cast<std::size_t>(sym(s)));
    }

  double log_p = A(last, states - 1);
  if (states > 1) log_p = log_add(log_p, A(last, states - 2));
  // NaN inputs yield a NaN loss so callers can report divergence
  if (std::isnan(log_p)) return {log_p, Tensor::matrix(frames, classes, log_p)};
  if (!std::isfinite(log_p)) throw std::domain_error("ctc: label has zero probability under log_probs");

  LossAndGrad out{-log_p, Tensor::matrix(frames, classes)};
  for (std::size_t t = 0; t < frames; ++t) {
    std::vector<double> occ(classes, kNegInf);
    for (std::size_t s = 0; s < states; ++s) {
      if (A(t, s) == kNegInf || B(t, s) == kNegInf) continue;
      const auto k = static_cast<std::size_t>(sym(s));
      occ[k] = log_add(occ[k], A(t, s) + B(t, s) - log_probs(t, k));
    }
    for (std::size_t k = 0; k < classes; ++k)
      if (occ[k] != kNegInf) out.grad(t, k) = -std::exp(occ[k] - log_p);
  }
  return out;
}

inline double loss(const Tensor& log_probs, std::span<const int> label) {
  return loss_and_grad(log_probs, label).loss;
}

/// CTC loss as a graph node over a (T' x (K+1)) log-probability node.
inline ad::Var ctc_loss(ad::Var log_probs, LabelSeq label) {
  ad::Graph& g = *log_probs.graph;
  LossAndGrad lg = loss_and_grad(log_probs.value(), label);
  const std::size_t li = log_probs.id;
  auto grad = std::make_shared<Tensor>(std::move(lg.grad));
  return g.record(ad::Op::Custom, {li}, Tensor::scalar(lg.loss), [li, grad](ad::Graph& gr, std::size_t self) {
    const double gy = gr.adjoint_ref(self).item();
    Tensor& gx = gr.adjoint_buffer(li);
    for (std::size_t i = 0; i < gx.size(); ++i) gx.values[i] += gy * grad->values[i];
  });
}

/// Merge adjacent repeats, then drop blanks.
inline LabelSeq collapse(std::span<const int> path, int blank) {
  LabelSeq out;
  int prev = -1;
  for (int s : path) {
    if (s != prev && s != blank) out.push_back(s);
    prev = s;
  }
  return out;
}

/// Per-frame argmax (lowest index wins ties), then collapse.
inline LabelSeq best_path_decode(const Tensor& log_probs) {
  const std::size_t classes = log_probs.cols();
  std::vector<int> path(log_probs.rows());
  for (std::size_t t = 0; t < log_probs.rows(); ++t) {
    const double* row = log_probs.row_ptr(t);
    path[t] = static_cast<int>(std::max_element(row, row + classes) - row);
  }
  return collapse(path, static_cast<int>(classes) - 1);
}

}  // namespace seqda::ctc
