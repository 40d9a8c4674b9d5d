#pragma once

#include <random>
#include <utility>
#include <vector>

#include "master/tensor.hpp"

namespace master {

// Every op computes its value eagerly and, when a tape is active and an
// input requires grad, records a backward rule that accumulates into the
// inputs' grad buffers. A rule whose output never received a gradient is a
// no-op on replay.

// ---- elementwise ----
Tensor add(const Tensor& a, const Tensor& b);
Tensor sub(const Tensor& a, const Tensor& b);
Tensor mul(const Tensor& a, const Tensor& b);
Tensor scale(const Tensor& a, double s);
Tensor add_scalar(const Tensor& a, double s);
Tensor relu(const Tensor& x);

// ---- linear algebra (rank-2) ----
Tensor matmul(const Tensor& a, const Tensor& b);
Tensor transpose(const Tensor& a);

// ---- shape ----
Tensor reshape(const Tensor& x, Shape target);
/// Slice of length `len` starting at `start` along `axis`.
Tensor narrow(const Tensor& x, int axis, std::int64_t start, std::int64_t len);
Tensor concat(const std::vector<Tensor>& parts, int axis);

/// Adds v (extent == x.extent(axis)) to every slice of x along `axis`.
Tensor broadcast_add(const Tensor& x, const Tensor& v, int axis);

// ---- reductions / normalization ----
Tensor sum(const Tensor& x);
Tensor softmax(const Tensor& x, int axis);
Tensor layer_norm(const Tensor& x, const Tensor& gamma, const Tensor& beta, int axis,
                  double eps = 1e-5);

/// Batch-independent conv-map normalization: per-channel mean/variance over
/// the H x W grid of a C x H x W map, channel-wise affine. Keeps the spatial
/// contrast that per-position normalization would flatten.
Tensor spatial_norm(const Tensor& x, const Tensor& gamma, const Tensor& beta, double eps = 1e-5);

// ---- neural-net ----
/// Cross-correlation (no kernel flip). x: Cin x H x W, w: Cout x Cin x kh x kw,
/// b: Cout. Output extent (H + 2*pad - k) / stride + 1 must be integral.
Tensor conv2d(const Tensor& x, const Tensor& w, const Tensor& b,
              std::pair<int, int> stride = {1, 1}, std::pair<int, int> padding = {0, 0});

/// Per-window maximum, no padding; windows must tile the input exactly.
/// Gradient routes to the first-seen maximum in each window.
Tensor max_pool2d(const Tensor& x, std::pair<int, int> kernel, std::pair<int, int> stride);

/// Gathers rows of `table` (vocab x d) at the given ids.
Tensor embed(const Tensor& table, const std::vector<int>& ids);

/// Inverted dropout: keeps with probability 1-rate and rescales by 1/(1-rate).
/// rate == 0 is the identity.
Tensor dropout(const Tensor& x, double rate, std::mt19937_64& rng);

}  // namespace master
