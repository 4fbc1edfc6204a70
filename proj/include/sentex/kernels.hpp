#pragma once

#include <algorithm>
#include <cmath>
#include <numeric>
#include <stdexcept>
#include <vector>

#include "sentex/mat.hpp"

namespace sentex {

/// A bank of n_f feature maps, each a d x w_f filter with a scalar bias,
/// applied along the columns of a d x n embedding matrix.
struct FilterBank {
  int n_f = 0;  // number of feature maps
  int w_f = 0;  // filter width
  int d = 0;    // rows of the layer input
  std::vector<Mat> weights;  // n_f filters, each d x w_f
  std::vector<double> bias;  // n_f

  FilterBank() = default;
  FilterBank(int n_f_, int w_f_, int d_)
      : n_f(n_f_), w_f(w_f_), d(d_), weights(n_f_, Mat(d_, w_f_)),
        bias(n_f_, 0.0) {
    if (n_f_ < 1 || w_f_ < 1 || d_ < 1)
      throw std::invalid_argument("FilterBank: non-positive shape");
  }

  std::size_t param_count() const {
    return static_cast<std::size_t>(n_f) * d * w_f + static_cast<std::size_t>(n_f);
  }
};

/// Wide ("full") 1-d convolution along rows. The input is zero-padded with
/// w_f - 1 columns on each side so every filter weight reaches every column;
/// output is n_f x (n + w_f - 1). Filters are applied in correlation
/// orientation (no flipping):
///   out[r][t] = bias[r] + sum_{i,j} filter_r[i][j] * padded[i][t + j]
inline Mat conv_wide_forward(const Mat& input, const FilterBank& bank) {
  if (input.rows != bank.d)
    throw std::invalid_argument("conv_wide_forward: input rows != bank.d");
  if (input.cols < 1)
    throw std::invalid_argument("conv_wide_forward: empty input");
  const int n = input.cols;
  const int out_w = n + bank.w_f - 1;
  Mat out(bank.n_f, out_w);
  for (int r = 0; r < bank.n_f; ++r) {
    const Mat& f = bank.weights[r];
    for (int t = 0; t < out_w; ++t) {
      double acc = bank.bias[r];
      // padded column t + j maps to input column t + j - (w_f - 1)
      const int j_lo = std::max(0, bank.w_f - 1 - t);
      const int j_hi = std::min(bank.w_f, n + bank.w_f - 1 - t);
      for (int i = 0; i < bank.d; ++i) {
        const double* frow = f.row(i).data();
        const double* xrow = input.row(i).data();
        for (int j = j_lo; j < j_hi; ++j)
          acc += frow[j] * xrow[t + j - (bank.w_f - 1)];
      }
      out.at(r, t) = acc;
    }
  }
  return out;
}

/// Exact adjoint of conv_wide_forward for the scalar objective
/// sum(upstream .* forward(input, bank)).
struct ConvGrads {
  Mat input_grad;         // same shape as the input
  FilterBank param_grad;  // same shapes as the bank
};

inline ConvGrads conv_wide_backward(const Mat& input, const FilterBank& bank,
                                    const Mat& upstream) {
  if (input.rows != bank.d)
    throw std::invalid_argument("conv_wide_backward: input rows != bank.d");
  const int n = input.cols;
  const int out_w = n + bank.w_f - 1;
  if (upstream.rows != bank.n_f || upstream.cols != out_w)
    throw std::invalid_argument("conv_wide_backward: upstream shape mismatch");

  ConvGrads g{Mat(input.rows, input.cols), FilterBank(bank.n_f, bank.w_f, bank.d)};
  for (int r = 0; r < bank.n_f; ++r) {
    const Mat& f = bank.weights[r];
    Mat& fg = g.param_grad.weights[r];
    double bias_acc = 0.0;
    for (int t = 0; t < out_w; ++t) {
      const double u = upstream.at(r, t);
      bias_acc += u;
      if (u == 0.0) continue;
      const int j_lo = std::max(0, bank.w_f - 1 - t);
      const int j_hi = std::min(bank.w_f, n + bank.w_f - 1 - t);
      for (int i = 0; i < bank.d; ++i) {
        const double* frow = f.row(i).data();
        const double* xrow = input.row(i).data();
        double* frow_g = fg.row(i).data();
        double* xrow_g = g.input_grad.row(i).data();
        for (int j = j_lo; j < j_hi; ++j) {
          const int c = t + j - (bank.w_f - 1);
          frow_g[j] += u * xrow[c];
          xrow_g[c] += u * frow[j];
        }
      }
    }
    g.param_grad.bias[r] = bias_acc;
  }
  return g;
}

/// Index map recorded by kmax_forward, consumed by kmax_backward.
/// idx is row-major rows x k; padded slots hold -1.
struct KMaxIndices {
  int rows = 0;
  int k = 0;
  int source_cols = 0;
  std::vector<int> idx;

  int at(int r, int c) const { return idx[static_cast<std::size_t>(r) * k + c]; }
};

struct KMaxResult {
  Mat values;  // rows x k
  KMaxIndices indices;
};

/// Per-row k-max pooling: keep the k largest values of each row in their
/// original left-to-right order. Ties at the k-th rank keep the leftmost
/// occurrences. Rows shorter than k are right-padded with zeros, and the
/// padded slots carry the sentinel index -1.
inline KMaxResult kmax_forward(const Mat& input, int k) {
  if (k < 1) throw std::invalid_argument("kmax_forward: k < 1");
  KMaxResult res;
  res.values = Mat(input.rows, k);
  res.indices = KMaxIndices{input.rows, k, input.cols,
                            std::vector<int>(static_cast<std::size_t>(input.rows) * k, -1)};
  const int keep = std::min(k, input.cols);
  std::vector<int> order(input.cols);
  for (int r = 0; r < input.rows; ++r) {
    auto row = input.row(r);
    std::iota(order.begin(), order.end(), 0);
    // rank by value descending, leftmost first among equals
    std::sort(order.begin(), order.end(), [&](int a, int b) {
      if (row[static_cast<std::size_t>(a)] != row[static_cast<std::size_t>(b)])
        return row[static_cast<std::size_t>(a)] > row[static_cast<std::size_t>(b)];
      return a < b;
    });
    std::vector<int> kept(order.begin(), order.begin() + keep);
    std::sort(kept.begin(), kept.end());
    for (int c = 0; c < keep; ++c) {
      res.values.at(r, c) = row[static_cast<std::size_t>(kept[c])];
      res.indices.idx[static_cast<std::size_t>(r) * k + c] = kept[c];
    }
    // remaining slots stay 0.0 / -1
  }
  return res;
}

/// Scatter upstream values back to their source columns; padded slots
/// contribute nothing.
inline Mat kmax_backward(const KMaxIndices& indices, const Mat& upstream) {
  if (upstream.rows != indices.rows || upstream.cols != indices.k)
    throw std::invalid_argument("kmax_backward: upstream shape mismatch");
  Mat out(indices.rows, indices.source_cols);
  for (int r = 0; r < indices.rows; ++r)
    for (int c = 0; c < indices.k; ++c) {
      const int src = indices.at(r, c);
      if (src >= 0) out.at(r, src) += upstream.at(r, c);
    }
  return out;
}

inline Mat tanh_forward(const Mat& input) {
  Mat out(input.rows, input.cols);
  for (std::size_t i = 0; i < input.data.size(); ++i)
    out.data[i] = std::tanh(input.data[i]);
  return out;
}

/// Backward through tanh given the forward *output*: d/dx tanh = 1 - y^2.
inline Mat tanh_backward(const Mat& activated, const Mat& upstream) {
  if (!activated.same_shape(upstream))
    throw std::invalid_argument("tanh_backward: shape mismatch");
  Mat out(activated.rows, activated.cols);
  for (std::size_t i = 0; i < out.data.size(); ++i)
    out.data[i] = (1.0 - activated.data[i] * activated.data[i]) * upstream.data[i];
  return out;
}

/// Numerically stable softmax.
inline std::vector<double> softmax_forward(std::span<const double> logits) {
  if (logits.empty()) throw std::invalid_argument("softmax_forward: empty logits");
  const double m = *std::max_element(logits.begin(), logits.end());
  std::vector<double> p(logits.size());
  double z = 0.0;
  for (std::size_t i = 0; i < logits.size(); ++i) {
    p[i] = std::exp(logits[i] - m);
    z += p[i];
  }
  for (double& x : p) x /= z;
  return p;
}

inline void check_probabilities(std::span<const double> probs, int label) {
  if (label < 0 || static_cast<std::size_t>(label) >= probs.size())
    throw std::out_of_range("label out of range");
  double sum = 0.0;
  for (double p : probs) {
    if (!(p > 0.0)) throw std::invalid_argument("probabilities must be positive");
    sum += p;
  }
  if (std::abs(sum - 1.0) > 1e-12)
    throw std::invalid_argument("probabilities must sum to 1");
}

inline double cross_entropy_loss(std::span<const double> probs, int label) {
  check_probabilities(probs, label);
  return -std::log(probs[static_cast<std::size_t>(label)]);
}

/// Gradient of -log p_label with respect to the pre-softmax logits:
/// p - onehot(label).
inline std::vector<double> softmax_xent_backward(std::span<const double> probs,
                                                 int label) {
  check_probabilities(probs, label);
  std::vector<double> g(probs.begin(), probs.end());
  g[static_cast<std::size_t>(label)] -= 1.0;
  return g;
}

/// p <- p - lr * g. Non-finite gradient entries abort the step before any
/// parameter is touched.
inline void sgd_step(std::span<double> params, std::span<const double> grads,
                     double learning_rate) {
  if (params.size() != grads.size())
    throw std::invalid_argument("sgd_step: shape mismatch");
  if (!all_finite(grads))
    throw std::runtime_error("sgd_step: non-finite gradient");
  for (std::size_t i = 0; i < params.size(); ++i)
    params[i] -= learning_rate * grads[i];
}

inline void sgd_step(Mat& params, const Mat& grads, double learning_rate) {
  if (!params.same_shape(grads))
    throw std::invalid_argument("sgd_step: shape mismatch");
  sgd_step(std::span<double>{params.data}, std::span<const double>{grads.data},
           learning_rate);
}

inline void sgd_step(FilterBank& params, const FilterBank& grads,
                     double learning_rate) {
  if (params.n_f != grads.n_f || params.w_f != grads.w_f || params.d != grads.d)
    throw std::invalid_argument("sgd_step: filter bank shape mismatch");
  for (const Mat& g : grads.weights)
    if (!all_finite(g)) throw std::runtime_error("sgd_step: non-finite gradient");
  if (!all_finite(std::span<const double>{grads.bias}))
    throw std::runtime_error("sgd_step: non-finite gradient");
  for (int r = 0; r < params.n_f; ++r)
    sgd_step(params.weights[r], grads.weights[r], learning_rate);
  sgd_step(std::span<double>{params.bias}, std::span<const double>{grads.bias},
           learning_rate);
}

/// Uniform [-a, a] with a = sqrt(6 / (fan_in + fan_out)). For a filter bank,
/// fan_in = d * w_f and fan_out = n_f * w_f.
inline void init_glorot_uniform(Mat& m, int fan_in, int fan_out, Rng& rng) {
  const double a = std::sqrt(6.0 / (fan_in + fan_out));
  for (double& x : m.data) x = rng.uniform(-a, a);
}

inline void init_filter_bank(FilterBank& bank, Rng& rng) {
  const int fan_in = bank.d * bank.w_f;
  const int fan_out = bank.n_f * bank.w_f;
  for (Mat& f : bank.weights) init_glorot_uniform(f, fan_in, fan_out, rng);
  std::fill(bank.bias.begin(), bank.bias.end(), 0.0);
}

inline void init_embeddings(Mat& m, Rng& rng, double scale = 0.05) {
  for (double& x : m.data) x = rng.uniform(-scale, scale);
}

}  // namespace sentex
