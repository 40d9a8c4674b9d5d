#include "master/ops.hpp"

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>

namespace master {

namespace {

using RowMat = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using MatMap = Eigen::Map<RowMat>;
using ConstMatMap = Eigen::Map<const RowMat>;
using VecMap = Eigen::Map<Eigen::VectorXd>;
using ConstVecMap = Eigen::Map<const Eigen::VectorXd>;
using Node = std::shared_ptr<detail::TensorStorage>;

bool tracked(const Tensor& t) { return active_tape() != nullptr && t.requires_grad(); }

double* grad_of(const Node& n) {
  if (n->grad.empty()) n->grad.assign(n->values.size(), 0.0);
  return n->grad.data();
}

// Output gradient, or nullptr when nothing downstream touched this tensor.
const double* out_grad(const Node& n) { return n->grad.empty() ? nullptr : n->grad.data(); }

void require_same_shape(const Tensor& a, const Tensor& b, const char* op) {
  if (a.shape() != b.shape()) {
    throw ShapeError(std::string(op) + ": shape mismatch " + shape_str(a.shape()) + " vs " +
                     shape_str(b.shape()));
  }
}

void require_axis(const Tensor& t, int axis, const char* op) {
  if (axis < 0 || axis >= t.rank()) {
    throw ShapeError(std::string(op) + ": axis " + std::to_string(axis) +
                     " out of range for " + shape_str(t.shape()));
  }
}

struct AxisSplit {
  std::int64_t outer, n, inner;
};

AxisSplit split_axis(const Shape& s, int axis) {
  AxisSplit r{1, s[static_cast<std::size_t>(axis)], 1};
  for (int i = 0; i < axis; ++i) r.outer *= s[static_cast<std::size_t>(i)];
  for (std::size_t i = static_cast<std::size_t>(axis) + 1; i < s.size(); ++i) r.inner *= s[i];
  return r;
}

}  // namespace

Tensor add(const Tensor& a, const Tensor& b) {
  require_same_shape(a, b, "add");
  Tensor y = Tensor::uninitialized(a.shape());
  VecMap(y.data(), y.size()) = ConstVecMap(a.data(), a.size()) + ConstVecMap(b.data(), b.size());
  if (tracked(a) || tracked(b)) {
    y.set_requires_grad(true);
    Node an = a.storage(), bn = b.storage(), yn = y.storage();
    bool ga = a.requires_grad(), gb = b.requires_grad();
    active_tape()->record([an, bn, yn, ga, gb] {
      const double* dy = out_grad(yn);
      if (!dy) return;
      auto n = static_cast<std::int64_t>(yn->values.size());
      if (ga) VecMap(grad_of(an), n) += ConstVecMap(dy, n);
      if (gb) VecMap(grad_of(bn), n) += ConstVecMap(dy, n);
    });
  }
  return y;
}

Tensor sub(const Tensor& a, const Tensor& b) {
  require_same_shape(a, b, "sub");
  Tensor y = Tensor::uninitialized(a.shape());
  VecMap(y.data(), y.size()) = ConstVecMap(a.data(), a.size()) - ConstVecMap(b.data(), b.size());
  if (tracked(a) || tracked(b)) {
    y.set_requires_grad(true);
    Node an = a.storage(), bn = b.storage(), yn = y.storage();
    bool ga = a.requires_grad(), gb = b.requires_grad();
    active_tape()->record([an, bn, yn, ga, gb] {
      const double* dy = out_grad(yn);
      if (!dy) return;
      auto n = static_cast<std::int64_t>(yn->values.size());
      if (ga) VecMap(grad_of(an), n) += ConstVecMap(dy, n);
      if (gb) VecMap(grad_of(bn), n) -= ConstVecMap(dy, n);
    });
  }
  return y;
}

Tensor mul(const Tensor& a, const Tensor& b) {
  require_same_shape(a, b, "mul");
  Tensor y = Tensor::uninitialized(a.shape());
  VecMap(y.data(), y.size()) =
      ConstVecMap(a.data(), a.size()).cwiseProduct(ConstVecMap(b.data(), b.size()));
  if (tracked(a) || tracked(b)) {
    y.set_requires_grad(true);
    Node an = a.storage(), bn = b.storage(), yn = y.storage();
    bool ga = a.requires_grad(), gb = b.requires_grad();
    active_tape()->record([an, bn, yn, ga, gb] {
      const double* dy = out_grad(yn);
      if (!dy) return;
      auto n = static_cast<std::int64_t>(yn->values.size());
      ConstVecMap d(dy, n);
      if (ga) VecMap(grad_of(an), n) += d.cwiseProduct(ConstVecMap(bn->values.data(), n));
      if (gb) VecMap(grad_of(bn), n) += d.cwiseProduct(ConstVecMap(an->values.data(), n));
    });
  }
  return y;
}

Tensor scale(const Tensor& a, double s) {
  Tensor y = Tensor::uninitialized(a.shape());
  VecMap(y.data(), y.size()) = ConstVecMap(a.data(), a.size()) * s;
  if (tracked(a)) {
    y.set_requires_grad(true);
    Node an = a.storage(), yn = y.storage();
    active_tape()->record([an, yn, s] {
      const double* dy = out_grad(yn);
      if (!dy) return;
      auto n = static_cast<std::int64_t>(yn->values.size());
      VecMap(grad_of(an), n) += ConstVecMap(dy, n) * s;
    });
  }
  return y;
}

Tensor add_scalar(const Tensor& a, double s) {
  Tensor y = Tensor::uninitialized(a.shape());
  VecMap(y.data(), y.size()) = ConstVecMap(a.data(), a.size()).array() + s;
  if (tracked(a)) {
    y.set_requires_grad(true);
    Node an = a.storage(), yn = y.storage();
    active_tape()->record([an, yn] {
      const double* dy = out_grad(yn);
      if (!dy) return;
      auto n = static_cast<std::int64_t>(yn->values.size());
      VecMap(grad_of(an), n) += ConstVecMap(dy, n);
    });
  }
  return y;
}

Tensor relu(const Tensor& x) {
  Tensor y = Tensor::uninitialized(x.shape());
  const double* xv = x.data();
  double* yv = y.data();
  for (std::int64_t i = 0; i < x.size(); ++i) yv[i] = xv[i] > 0.0 ? xv[i] : 0.0;
  if (tracked(x)) {
    y.set_requires_grad(true);
    Node xn = x.storage(), yn = y.storage();
    active_tape()->record([xn, yn] {
      const double* dy = out_grad(yn);
      if (!dy) return;
      double* gx = grad_of(xn);
      const double* xd = xn->values.data();
      auto n = static_cast<std::int64_t>(yn->values.size());
      for (std::int64_t i = 0; i < n; ++i) {
        if (xd[i] > 0.0) gx[i] += dy[i];  // subgradient at 0 is 0
      }
    });
  }
  return y;
}

Tensor matmul(const Tensor& a, const Tensor& b) {
  if (a.rank() != 2 || b.rank() != 2 || a.extent(1) != b.extent(0)) {
    throw ShapeError("matmul: incompatible shapes " + shape_str(a.shape()) + " vs " +
                     shape_str(b.shape()));
  }
  const auto m = a.extent(0), k = a.extent(1), n = b.extent(1);
  Tensor y = Tensor::uninitialized({m, n});
  ConstMatMap am(a.data(), m, k), bm(b.data(), k, n);
  MatMap(y.data(), m, n).noalias() = am * bm;
  if (tracked(a) || tracked(b)) {
    y.set_requires_grad(true);
    Node an = a.storage(), bn = b.storage(), yn = y.storage();
    bool ga = a.requires_grad(), gb = b.requires_grad();
    active_tape()->record([an, bn, yn, ga, gb, m, k, n] {
      const double* dy = out_grad(yn);
      if (!dy) return;
      ConstMatMap dym(dy, m, n);
      ConstMatMap am2(an->values.data(), m, k), bm2(bn->values.data(), k, n);
      if (ga) MatMap(grad_of(an), m, k).noalias() += dym * bm2.transpose();
      if (gb) MatMap(grad_of(bn), k, n).noalias() += am2.transpose() * dym;
    });
  }
  return y;
}

Tensor transpose(const Tensor& a) {
  if (a.rank() != 2) throw ShapeError("transpose: expects rank 2, got " + shape_str(a.shape()));
  const auto m = a.extent(0), n = a.extent(1);
  Tensor y = Tensor::uninitialized({n, m});
  MatMap(y.data(), n, m) = ConstMatMap(a.data(), m, n).transpose();
  if (tracked(a)) {
    y.set_requires_grad(true);
    Node an = a.storage(), yn = y.storage();
    active_tape()->record([an, yn, m, n] {
      const double* dy = out_grad(yn);
      if (!dy) return;
      MatMap(grad_of(an), m, n) += ConstMatMap(dy, n, m).transpose();
    });
  }
  return y;
}

Tensor reshape(const Tensor& x, Shape target) {
  if (numel(target) != x.size()) {
    throw ShapeError("reshape: " + shape_str(x.shape()) + " has " + std::to_string(x.size()) +
                     " elements, target " + shape_str(target) + " needs " +
                     std::to_string(numel(target)));
  }
  Tensor y(std::move(target), std::vector<double>(x.data(), x.data() + x.size()));
  if (tracked(x)) {
    y.set_requires_grad(true);
    Node xn = x.storage(), yn = y.storage();
    active_tape()->record([xn, yn] {
      const double* dy = out_grad(yn);
      if (!dy) return;
      auto n = static_cast<std::int64_t>(yn->values.size());
      VecMap(grad_of(xn), n) += ConstVecMap(dy, n);
    });
  }
  return y;
}

Tensor narrow(const Tensor& x, int axis, std::int64_t start, std::int64_t len) {
  require_axis(x, axis, "narrow");
  if (start < 0 || len <= 0 || start + len > x.extent(axis)) {
    throw ShapeError("narrow: slice [" + std::to_string(start) + ", " +
                     std::to_string(start + len) + ") exceeds extent " +
                     std::to_string(x.extent(axis)) + " of " + shape_str(x.shape()));
  }
  Shape out_shape = x.shape();
  out_shape[static_cast<std::size_t>(axis)] = len;
  Tensor y = Tensor::uninitialized(out_shape);
  const auto sp = split_axis(x.shape(), axis);
  const double* xv = x.data();
  double* yv = y.data();
  for (std::int64_t o = 0; o < sp.outer; ++o) {
    const double* src = xv + (o * sp.n + start) * sp.inner;
    double* dst = yv + o * len * sp.inner;
    std::copy(src, src + len * sp.inner, dst);
  }
  if (tracked(x)) {
    y.set_requires_grad(true);
    Node xn = x.storage(), yn = y.storage();
    active_tape()->record([xn, yn, sp, start, len] {
      const double* dy = out_grad(yn);
      if (!dy) return;
      double* gx = grad_of(xn);
      for (std::int64_t o = 0; o < sp.outer; ++o) {
        double* dst = gx + (o * sp.n + start) * sp.inner;
        const double* src = dy + o * len * sp.inner;
        for (std::int64_t i = 0; i < len * sp.inner; ++i) dst[i] += src[i];
      }
    });
  }
  return y;
}

Tensor concat(const std::vector<Tensor>& parts, int axis) {
  if (parts.empty()) throw ShapeError("concat: no inputs");
  require_axis(parts[0], axis, "concat");
  Shape out_shape = parts[0].shape();
  std::int64_t total = 0;
  for (const auto& p : parts) {
    if (p.rank() != parts[0].rank()) {
      throw ShapeError("concat: rank mismatch " + shape_str(p.shape()) + " vs " +
                       shape_str(parts[0].shape()));
    }
    for (int d = 0; d < p.rank(); ++d) {
      if (d != axis && p.extent(d) != parts[0].extent(d)) {
        throw ShapeError("concat: shape mismatch " + shape_str(p.shape()) + " vs " +
                         shape_str(parts[0].shape()));
      }
    }
    total += p.extent(axis);
  }
  out_shape[static_cast<std::size_t>(axis)] = total;
  Tensor y = Tensor::uninitialized(out_shape);
  const auto osp = split_axis(out_shape, axis);
  double* yv = y.data();
  std::int64_t offset = 0;
  bool any_tracked = false;
  for (const auto& p : parts) {
    const auto psp = split_axis(p.shape(), axis);
    const double* pv = p.data();
    for (std::int64_t o = 0; o < psp.outer; ++o) {
      std::copy(pv + o * psp.n * psp.inner, pv + (o + 1) * psp.n * psp.inner,
                yv + (o * osp.n + offset) * osp.inner);
    }
    offset += p.extent(axis);
    any_tracked = any_tracked || tracked(p);
  }
  if (any_tracked) {
    y.set_requires_grad(true);
    std::vector<Node> nodes;
    std::vector<std::int64_t> extents;
    std::vector<bool> wants;
    for (const auto& p : parts) {
      nodes.push_back(p.storage());
      extents.push_back(p.extent(axis));
      wants.push_back(p.requires_grad());
    }
    Node yn = y.storage();
    active_tape()->record([nodes, extents, wants, yn, osp] {
      const double* dy = out_grad(yn);
      if (!dy) return;
      std::int64_t off = 0;
      for (std::size_t pi = 0; pi < nodes.size(); ++pi) {
        const std::int64_t n = extents[pi];
        if (wants[pi]) {
          double* gp = grad_of(nodes[pi]);
          for (std::int64_t o = 0; o < osp.outer; ++o) {
            const double* src = dy + (o * osp.n + off) * osp.inner;
            double* dst = gp + o * n * osp.inner;
            for (std::int64_t i = 0; i < n * osp.inner; ++i) dst[i] += src[i];
          }
        }
        off += n;
      }
    });
  }
  return y;
}

Tensor broadcast_add(const Tensor& x, const Tensor& v, int axis) {
  require_axis(x, axis, "broadcast_add");
  if (v.rank() != 1 || v.extent(0) != x.extent(axis)) {
    throw ShapeError("broadcast_add: vector " + shape_str(v.shape()) +
                     " does not match axis extent " + std::to_string(x.extent(axis)) + " of " +
                     shape_str(x.shape()));
  }
  Tensor y = Tensor::uninitialized(x.shape());
  const auto sp = split_axis(x.shape(), axis);
  const double* xv = x.data();
  const double* vv = v.data();
  double* yv = y.data();
  for (std::int64_t o = 0; o < sp.outer; ++o) {
    for (std::int64_t k = 0; k < sp.n; ++k) {
      const double add_v = vv[k];
      const double* src = xv + (o * sp.n + k) * sp.inner;
      double* dst = yv + (o * sp.n + k) * sp.inner;
      for (std::int64_t i = 0; i < sp.inner; ++i) dst[i] = src[i] + add_v;
    }
  }
  if (tracked(x) || tracked(v)) {
    y.set_requires_grad(true);
    Node xn = x.storage(), vn = v.storage(), yn = y.storage();
    bool gx = x.requires_grad(), gv = v.requires_grad();
    active_tape()->record([xn, vn, yn, sp, gx, gv] {
      const double* dy = out_grad(yn);
      if (!dy) return;
      if (gx) {
        auto n = static_cast<std::int64_t>(yn->values.size());
        VecMap(grad_of(xn), n) += ConstVecMap(dy, n);
      }
      if (gv) {
        double* g = grad_of(vn);
        for (std::int64_t o = 0; o < sp.outer; ++o) {
          for (std::int64_t k = 0; k < sp.n; ++k) {
            const double* src = dy + (o * sp.n + k) * sp.inner;
            double acc = 0.0;
            for (std::int64_t i = 0; i < sp.inner; ++i) acc += src[i];
            g[k] += acc;
          }
        }
      }
    });
  }
  return y;
}

Tensor sum(const Tensor& x) {
  Tensor y = Tensor::scalar(ConstVecMap(x.data(), x.size()).sum());
  if (tracked(x)) {
    y.set_requires_grad(true);
    Node xn = x.storage(), yn = y.storage();
    active_tape()->record([xn, yn] {
      const double* dy = out_grad(yn);
      if (!dy) return;
      auto n = static_cast<std::int64_t>(xn->values.size());
      VecMap(grad_of(xn), n).array() += dy[0];
    });
  }
  return y;
}

Tensor softmax(const Tensor& x, int axis) {
  require_axis(x, axis, "softmax");
  Tensor y = Tensor::uninitialized(x.shape());
  const auto sp = split_axis(x.shape(), axis);
  const double* xv = x.data();
  double* yv = y.data();
  for (std::int64_t o = 0; o < sp.outer; ++o) {
    for (std::int64_t i = 0; i < sp.inner; ++i) {
      const std::int64_t base = o * sp.n * sp.inner + i;
      double m = xv[base];
      for (std::int64_t k = 1; k < sp.n; ++k) m = std::max(m, xv[base + k * sp.inner]);
      double s = 0.0;
      for (std::int64_t k = 0; k < sp.n; ++k) {
        const double e = std::exp(xv[base + k * sp.inner] - m);
        yv[base + k * sp.inner] = e;
        s += e;
      }
      const double inv = 1.0 / s;
      for (std::int64_t k = 0; k < sp.n; ++k) yv[base + k * sp.inner] *= inv;
    }
  }
  if (tracked(x)) {
    y.set_requires_grad(true);
    Node xn = x.storage(), yn = y.storage();
    active_tape()->record([xn, yn, sp] {
      const double* dy = out_grad(yn);
      if (!dy) return;
      double* gx = grad_of(xn);
      const double* yd = yn->values.data();
      for (std::int64_t o = 0; o < sp.outer; ++o) {
        for (std::int64_t i = 0; i < sp.inner; ++i) {
          const std::int64_t base = o * sp.n * sp.inner + i;
          double dot = 0.0;
          for (std::int64_t k = 0; k < sp.n; ++k) {
            const std::int64_t idx = base + k * sp.inner;
            dot += dy[idx] * yd[idx];
          }
          for (std::int64_t k = 0; k < sp.n; ++k) {
            const std::int64_t idx = base + k * sp.inner;
            gx[idx] += yd[idx] * (dy[idx] - dot);
          }
        }
      }
    });
  }
  return y;
}

Tensor layer_norm(const Tensor& x, const Tensor& gamma, const Tensor& beta, int axis, double eps) {
  require_axis(x, axis, "layer_norm");
  if (eps <= 0.0) throw ConfigError("layer_norm: eps must be positive");
  const auto sp = split_axis(x.shape(), axis);
  if (gamma.rank() != 1 || gamma.extent(0) != sp.n || beta.rank() != 1 || beta.extent(0) != sp.n) {
    throw ShapeError("layer_norm: gamma " + shape_str(gamma.shape()) + " / beta " +
                     shape_str(beta.shape()) + " must be vectors of extent " +
                     std::to_string(sp.n));
  }
  Tensor y = Tensor::uninitialized(x.shape());
  auto xhat = std::make_shared<std::vector<double>>(static_cast<std::size_t>(x.size()));
  auto inv_std = std::make_shared<std::vector<double>>(
      static_cast<std::size_t>(sp.outer * sp.inner));
  const double* xv = x.data();
  const double* gv = gamma.data();
  const double* bv = beta.data();
  double* yv = y.data();
  for (std::int64_t o = 0; o < sp.outer; ++o) {
    for (std::int64_t i = 0; i < sp.inner; ++i) {
      const std::int64_t base = o * sp.n * sp.inner + i;
      double mean = 0.0;
      for (std::int64_t k = 0; k < sp.n; ++k) mean += xv[base + k * sp.inner];
      mean /= static_cast<double>(sp.n);
      double var = 0.0;
      for (std::int64_t k = 0; k < sp.n; ++k) {
        const double d = xv[base + k * sp.inner] - mean;
        var += d * d;
      }
      var /= static_cast<double>(sp.n);
      const double inv = 1.0 / std::sqrt(var + eps);
      (*inv_std)[static_cast<std::size_t>(o * sp.inner + i)] = inv;
      for (std::int64_t k = 0; k < sp.n; ++k) {
        const std::int64_t idx = base + k * sp.inner;
        const double xh = (xv[idx] - mean) * inv;
        (*xhat)[static_cast<std::size_t>(idx)] = xh;
        yv[idx] = gv[k] * xh + bv[k];
      }
    }
  }
  if (tracked(x) || tracked(gamma) || tracked(beta)) {
    y.set_requires_grad(true);
    Node xn = x.storage(), gn = gamma.storage(), bn = beta.storage(), yn = y.storage();
    bool wx = x.requires_grad(), wg = gamma.requires_grad(), wb = beta.requires_grad();
    active_tape()->record([xn, gn, bn, yn, sp, xhat, inv_std, wx, wg, wb] {
      const double* dy = out_grad(yn);
      if (!dy) return;
      const double* gvv = gn->values.data();
      double* gx = wx ? grad_of(xn) : nullptr;
      double* gg = wg ? grad_of(gn) : nullptr;
      double* gb = wb ? grad_of(bn) : nullptr;
      for (std::int64_t o = 0; o < sp.outer; ++o) {
        for (std::int64_t i = 0; i < sp.inner; ++i) {
          const std::int64_t base = o * sp.n * sp.inner + i;
          const double inv = (*inv_std)[static_cast<std::size_t>(o * sp.inner + i)];
          double mean_g = 0.0, mean_gx = 0.0;
          for (std::int64_t k = 0; k < sp.n; ++k) {
            const std::int64_t idx = base + k * sp.inner;
            const double xh = (*xhat)[static_cast<std::size_t>(idx)];
            const double g = dy[idx] * gvv[k];
            mean_g += g;
            mean_gx += g * xh;
            if (gg) gg[k] += dy[idx] * xh;
            if (gb) gb[k] += dy[idx];
          }
          if (!gx) continue;
          mean_g /= static_cast<double>(sp.n);
          mean_gx /= static_cast<double>(sp.n);
          for (std::int64_t k = 0; k < sp.n; ++k) {
            const std::int64_t idx = base + k * sp.inner;
            const double xh = (*xhat)[static_cast<std::size_t>(idx)];
            gx[idx] += inv * (dy[idx] * gvv[k] - mean_g - xh * mean_gx);
          }
        }
      }
    });
  }
  return y;
}

Tensor spatial_norm(const Tensor& x, const Tensor& gamma, const Tensor& beta, double eps) {
  if (x.rank() != 3) {
    throw ShapeError("spatial_norm: expects C x H x W, got " + shape_str(x.shape()));
  }
  if (eps <= 0.0) throw ConfigError("spatial_norm: eps must be positive");
  const std::int64_t c = x.extent(0), n = x.extent(1) * x.extent(2);
  if (gamma.rank() != 1 || gamma.extent(0) != c || beta.rank() != 1 || beta.extent(0) != c) {
    throw ShapeError("spatial_norm: gamma " + shape_str(gamma.shape()) + " / beta " +
                     shape_str(beta.shape()) + " must be vectors of extent " + std::to_string(c));
  }
  Tensor y = Tensor::uninitialized(x.shape());
  auto xhat = std::make_shared<std::vector<double>>(static_cast<std::size_t>(x.size()));
  auto inv_std = std::make_shared<std::vector<double>>(static_cast<std::size_t>(c));
  const double* xv = x.data();
  const double* gv = gamma.data();
  const double* bv = beta.data();
  double* yv = y.data();
  for (std::int64_t ci = 0; ci < c; ++ci) {
    const double* src = xv + ci * n;
    double mean = 0.0;
    for (std::int64_t p = 0; p < n; ++p) mean += src[p];
    mean /= static_cast<double>(n);
    double var = 0.0;
    for (std::int64_t p = 0; p < n; ++p) {
      const double d = src[p] - mean;
      var += d * d;
    }
    var /= static_cast<double>(n);
    const double inv = 1.0 / std::sqrt(var + eps);
    (*inv_std)[static_cast<std::size_t>(ci)] = inv;
    double* xh = xhat->data() + ci * n;
    double* dst = yv + ci * n;
    for (std::int64_t p = 0; p < n; ++p) {
      xh[p] = (src[p] - mean) * inv;
      dst[p] = gv[ci] * xh[p] + bv[ci];
    }
  }
  if (tracked(x) || tracked(gamma) || tracked(beta)) {
    y.set_requires_grad(true);
    Node xn = x.storage(), gn = gamma.storage(), bn = beta.storage(), yn = y.storage();
    bool wx = x.requires_grad(), wg = gamma.requires_grad(), wb = beta.requires_grad();
    active_tape()->record([xn, gn, bn, yn, c, n, xhat, inv_std, wx, wg, wb] {
      const double* dy = out_grad(yn);
      if (!dy) return;
      const double* gvv = gn->values.data();
      double* gx = wx ? grad_of(xn) : nullptr;
      double* gg = wg ? grad_of(gn) : nullptr;
      double* gb = wb ? grad_of(bn) : nullptr;
      for (std::int64_t ci = 0; ci < c; ++ci) {
        const double* d = dy + ci * n;
        const double* xh = xhat->data() + ci * n;
        double sum_d = 0.0, sum_dx = 0.0;
        for (std::int64_t p = 0; p < n; ++p) {
          sum_d += d[p];
          sum_dx += d[p] * xh[p];
        }
        if (gb) gb[ci] += sum_d;
        if (gg) gg[ci] += sum_dx;
        if (!gx) continue;
        const double inv = (*inv_std)[static_cast<std::size_t>(ci)];
        const double mean_d = sum_d / static_cast<double>(n);
        const double mean_dx = sum_dx / static_cast<double>(n);
        double* dst = gx + ci * n;
        const double g_inv = gvv[ci] * inv;
        for (std::int64_t p = 0; p < n; ++p) {
          dst[p] += g_inv * (d[p] - mean_d - xh[p] * mean_dx);
        }
      }
    });
  }
  return y;
}

namespace {

struct ConvDims {
  std::int64_t cin, h, w, cout, kh, kw, sh, sw, ph, pw, oh, ow;
  std::int64_t len() const { return oh * ow; }
  std::int64_t patch() const { return cin * kh * kw; }
  bool pointwise() const {
    return kh == 1 && kw == 1 && sh == 1 && sw == 1 && ph == 0 && pw == 0;
  }
};

// Kernel-major im2col: row (c*kh+dy)*kw+dx holds that tap's value for every
// output position. Stride-1 rows are contiguous runs of the input row.
// Fills output rows [oy0, oy1); col points at the full K x len matrix.
void im2col(const double* x, const ConvDims& d, std::int64_t oy0, std::int64_t oy1,
            double* col) {
  const std::int64_t l = d.len();
  for (std::int64_t c = 0; c < d.cin; ++c) {
    for (std::int64_t dy = 0; dy < d.kh; ++dy) {
      for (std::int64_t dx = 0; dx < d.kw; ++dx) {
        double* dst = col + ((c * d.kh + dy) * d.kw + dx) * l + oy0 * d.ow;
        for (std::int64_t oy = oy0; oy < oy1; ++oy, dst += d.ow) {
          const std::int64_t iy = oy * d.sh - d.ph + dy;
          if (iy < 0 || iy >= d.h) {
            std::fill(dst, dst + d.ow, 0.0);
            continue;
          }
          const double* src = x + (c * d.h + iy) * d.w;
          if (d.sw == 1) {
            const std::int64_t ix0 = dx - d.pw;
            const std::int64_t lo = std::max<std::int64_t>(0, -ix0);
            const std::int64_t hi = std::max(lo, std::min(d.ow, d.w - ix0));
            std::fill(dst, dst + lo, 0.0);
            std::copy(src + ix0 + lo, src + ix0 + hi, dst + lo);
            std::fill(dst + hi, dst + d.ow, 0.0);
          } else {
            for (std::int64_t ox = 0; ox < d.ow; ++ox) {
              const std::int64_t ix = ox * d.sw - d.pw + dx;
              dst[ox] = (ix >= 0 && ix < d.w) ? src[ix] : 0.0;
            }
          }
        }
      }
    }
  }
}

// Output rows per strip so one strip of the column matrix stays cache-resident.
std::int64_t strip_rows(const ConvDims& d) {
  const std::int64_t budget = 262144 / 8;  // 256 KiB of doubles
  return std::clamp<std::int64_t>(budget / std::max<std::int64_t>(1, d.patch() * d.ow), 1, d.oh);
}

// Transposed scatter of im2col: accumulates tap gradients back into gx.
// Consumes output rows [oy0, oy1) of a strip buffer whose columns span
// exactly that strip (stride strip_len).
void col2im_add(const double* col, const ConvDims& d, std::int64_t oy0, std::int64_t oy1,
                double* gx) {
  const std::int64_t strip_len = (oy1 - oy0) * d.ow;
  for (std::int64_t c = 0; c < d.cin; ++c) {
    for (std::int64_t dy = 0; dy < d.kh; ++dy) {
      for (std::int64_t dx = 0; dx < d.kw; ++dx) {
        const double* src = col + ((c * d.kh + dy) * d.kw + dx) * strip_len;
        for (std::int64_t oy = oy0; oy < oy1; ++oy, src += d.ow) {
          const std::int64_t iy = oy * d.sh - d.ph + dy;
          if (iy < 0 || iy >= d.h) continue;
          double* dst = gx + (c * d.h + iy) * d.w;
          if (d.sw == 1) {
            const std::int64_t ix0 = dx - d.pw;
            const std::int64_t lo = std::max<std::int64_t>(0, -ix0);
            const std::int64_t hi = std::max(lo, std::min(d.ow, d.w - ix0));
            for (std::int64_t i = lo; i < hi; ++i) dst[ix0 + i] += src[i];
          } else {
            for (std::int64_t ox = 0; ox < d.ow; ++ox) {
              const std::int64_t ix = ox * d.sw - d.pw + dx;
              if (ix >= 0 && ix < d.w) dst[ix] += src[ox];
            }
          }
        }
      }
    }
  }
}

}  // namespace

Tensor conv2d(const Tensor& x, const Tensor& w, const Tensor& b, std::pair<int, int> stride,
              std::pair<int, int> padding) {
  if (x.rank() != 3 || w.rank() != 4) {
    throw ShapeError("conv2d: expects x rank 3 and w rank 4, got " + shape_str(x.shape()) +
                     " and " + shape_str(w.shape()));
  }
  ConvDims d;
  d.cin = x.extent(0);
  d.h = x.extent(1);
  d.w = x.extent(2);
  d.cout = w.extent(0);
  d.kh = w.extent(2);
  d.kw = w.extent(3);
  if (w.extent(1) != d.cin) {
    throw ShapeError("conv2d: kernel channels " + shape_str(w.shape()) +
                     " do not match input " + shape_str(x.shape()));
  }
  if (b.rank() != 1 || b.extent(0) != d.cout) {
    throw ShapeError("conv2d: bias " + shape_str(b.shape()) + " must have extent " +
                     std::to_string(d.cout));
  }
  d.sh = stride.first;
  d.sw = stride.second;
  d.ph = padding.first;
  d.pw = padding.second;
  if (d.sh <= 0 || d.sw <= 0 || d.ph < 0 || d.pw < 0) {
    throw ConfigError("conv2d: bad stride/padding");
  }
  if (d.h + 2 * d.ph < d.kh || d.w + 2 * d.pw < d.kw || (d.h + 2 * d.ph - d.kh) % d.sh != 0 ||
      (d.w + 2 * d.pw - d.kw) % d.sw != 0) {
    throw ConfigError("conv2d: non-integral output extent for input " + shape_str(x.shape()) +
                      ", kernel " + shape_str(w.shape()) + ", stride " + std::to_string(d.sh) +
                      "x" + std::to_string(d.sw) + ", padding " + std::to_string(d.ph) + "x" +
                      std::to_string(d.pw));
  }
  d.oh = (d.h + 2 * d.ph - d.kh) / d.sh + 1;
  d.ow = (d.w + 2 * d.pw - d.kw) / d.sw + 1;
  const std::int64_t len = d.len(), patch = d.patch();

  // 1x1 convs read the input directly; everything else builds the column
  // matrix once and keeps it for the weight gradient.
  std::shared_ptr<detail::AlignedBuffer> col;
  const double* col_data = x.data();
  Tensor y = Tensor::uninitialized({d.cout, d.oh, d.ow});
  {
    ConstMatMap wm(w.data(), d.cout, patch);
    MatMap ym(y.data(), d.cout, len);
    if (d.pointwise()) {
      ym.noalias() = wm * ConstMatMap(col_data, patch, len);
    } else {
      // Build the column matrix strip by strip so the GEMM consumes it while
      // it is still cache-resident; the full buffer stays around for dW.
      col = std::make_shared<detail::AlignedBuffer>(static_cast<std::size_t>(patch * len));
      col_data = col->data();
      ConstMatMap colm(col_data, patch, len);
      const std::int64_t rs = strip_rows(d);
      for (std::int64_t oy0 = 0; oy0 < d.oh; oy0 += rs) {
        const std::int64_t oy1 = std::min(d.oh, oy0 + rs);
        im2col(x.data(), d, oy0, oy1, col->data());
        ym.middleCols(oy0 * d.ow, (oy1 - oy0) * d.ow).noalias() =
            wm * colm.middleCols(oy0 * d.ow, (oy1 - oy0) * d.ow);
      }
    }
    ym.colwise() += ConstVecMap(b.data(), d.cout);
  }

  if (tracked(x) || tracked(w) || tracked(b)) {
    y.set_requires_grad(true);
    Node xn = x.storage(), wn = w.storage(), bn = b.storage(), yn = y.storage();
    bool wxg = x.requires_grad(), wwg = w.requires_grad(), wbg = b.requires_grad();
    active_tape()->record([xn, wn, bn, yn, col, d, len, patch, wxg, wwg, wbg] {
      const double* dyv = out_grad(yn);
      if (!dyv) return;
      const double* cold = col ? col->data() : xn->values.data();
      ConstMatMap dym(dyv, d.cout, len);
      if (wbg) VecMap(grad_of(bn), d.cout) += dym.rowwise().sum();
      if (wwg) {
        ConstMatMap colm(cold, patch, len);
        MatMap(grad_of(wn), d.cout, patch).noalias() += dym * colm.transpose();
      }
      if (wxg) {
        ConstMatMap wm(wn->values.data(), d.cout, patch);
        if (d.pointwise()) {
          MatMap(grad_of(xn), patch, len).noalias() += wm.transpose() * dym;
        } else {
          thread_local detail::AlignedBuffer scratch;
          const std::int64_t rs = strip_rows(d);
          scratch.resize(static_cast<std::size_t>(patch * rs * d.ow));
          double* gx = grad_of(xn);
          for (std::int64_t oy0 = 0; oy0 < d.oh; oy0 += rs) {
            const std::int64_t oy1 = std::min(d.oh, oy0 + rs);
            MatMap dcol(scratch.data(), patch, (oy1 - oy0) * d.ow);
            dcol.noalias() = wm.transpose() * dym.middleCols(oy0 * d.ow, (oy1 - oy0) * d.ow);
            col2im_add(scratch.data(), d, oy0, oy1, gx);
          }
        }
      }
    });
  }
  return y;
}

Tensor max_pool2d(const Tensor& x, std::pair<int, int> kernel, std::pair<int, int> stride) {
  if (x.rank() != 3) throw ShapeError("max_pool2d: expects rank 3, got " + shape_str(x.shape()));
  const std::int64_t c = x.extent(0), h = x.extent(1), w = x.extent(2);
  const std::int64_t kh = kernel.first, kw = kernel.second;
  const std::int64_t sh = stride.first, sw = stride.second;
  if (kh <= 0 || kw <= 0 || sh <= 0 || sw <= 0) throw ConfigError("max_pool2d: bad kernel/stride");
  if (kh > h || kw > w || (h - kh) % sh != 0 || (w - kw) % sw != 0) {
    throw ConfigError("max_pool2d: window " + std::to_string(kh) + "x" + std::to_string(kw) +
                      " stride " + std::to_string(sh) + "x" + std::to_string(sw) +
                      " does not tile input " + shape_str(x.shape()));
  }
  const std::int64_t oh = (h - kh) / sh + 1;
  const std::int64_t ow = (w - kw) / sw + 1;
  Tensor y = Tensor::uninitialized({c, oh, ow});
  auto argmax = std::make_shared<std::vector<std::int64_t>>(static_cast<std::size_t>(c * oh * ow));
  const double* xv = x.data();
  double* yv = y.data();
  for (std::int64_t ci = 0; ci < c; ++ci) {
    for (std::int64_t oy = 0; oy < oh; ++oy) {
      for (std::int64_t ox = 0; ox < ow; ++ox) {
        double best = -std::numeric_limits<double>::infinity();
        std::int64_t best_idx = -1;
        for (std::int64_t dy = 0; dy < kh; ++dy) {
          for (std::int64_t dx = 0; dx < kw; ++dx) {
            const std::int64_t idx = (ci * h + oy * sh + dy) * w + ox * sw + dx;
            if (xv[idx] > best) {  // strict: first occurrence wins ties
              best = xv[idx];
              best_idx = idx;
            }
          }
        }
        const std::int64_t oidx = (ci * oh + oy) * ow + ox;
        yv[oidx] = best;
        (*argmax)[static_cast<std::size_t>(oidx)] = best_idx;
      }
    }
  }
  if (tracked(x)) {
    y.set_requires_grad(true);
    Node xn = x.storage(), yn = y.storage();
    active_tape()->record([xn, yn, argmax] {
      const double* dy = out_grad(yn);
      if (!dy) return;
      double* gx = grad_of(xn);
      for (std::size_t i = 0; i < argmax->size(); ++i) gx[(*argmax)[i]] += dy[i];
    });
  }
  return y;
}

Tensor embed(const Tensor& table, const std::vector<int>& ids) {
  if (table.rank() != 2) {
    throw ShapeError("embed: table must be rank 2, got " + shape_str(table.shape()));
  }
  const std::int64_t vocab = table.extent(0), d = table.extent(1);
  if (ids.empty()) throw ContractError("embed: empty id sequence");
  for (int id : ids) {
    if (id < 0 || id >= vocab) {
      throw ContractError("embed: token id " + std::to_string(id) + " outside vocabulary of " +
                          std::to_string(vocab));
    }
  }
  const auto t = static_cast<std::int64_t>(ids.size());
  Tensor y = Tensor::uninitialized({t, d});
  for (std::int64_t i = 0; i < t; ++i) {
    const double* src = table.data() + ids[static_cast<std::size_t>(i)] * d;
    std::copy(src, src + d, y.data() + i * d);
  }
  if (tracked(table)) {
    y.set_requires_grad(true);
    Node tn = table.storage(), yn = y.storage();
    auto ids_copy = std::make_shared<std::vector<int>>(ids);
    active_tape()->record([tn, yn, ids_copy, d] {
      const double* dy = out_grad(yn);
      if (!dy) return;
      double* gt = grad_of(tn);
      for (std::size_t i = 0; i < ids_copy->size(); ++i) {
        double* dst = gt + static_cast<std::int64_t>((*ids_copy)[i]) * d;
        const double* src = dy + static_cast<std::int64_t>(i) * d;
        for (std::int64_t k = 0; k < d; ++k) dst[k] += src[k];
      }
    });
  }
  return y;
}

Tensor dropout(const Tensor& x, double rate, std::mt19937_64& rng) {
  if (rate < 0.0 || rate >= 1.0) {
    throw ConfigError("dropout: rate must be in [0, 1), got " + std::to_string(rate));
  }
  if (rate == 0.0) return x;
  const double keep = 1.0 - rate;
  const double inv_keep = 1.0 / keep;
  auto mask = std::make_shared<std::vector<double>>(static_cast<std::size_t>(x.size()));
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  for (auto& m : *mask) m = unit(rng) < keep ? inv_keep : 0.0;
  Tensor y = Tensor::uninitialized(x.shape());
  const double* xv = x.data();
  double* yv = y.data();
  for (std::int64_t i = 0; i < x.size(); ++i) yv[i] = xv[i] * (*mask)[static_cast<std::size_t>(i)];
  if (tracked(x)) {
    y.set_requires_grad(true);
    Node xn = x.storage(), yn = y.storage();
    active_tape()->record([xn, yn, mask] {
      const double* dy = out_grad(yn);
      if (!dy) return;
      double* gx = grad_of(xn);
      for (std::size_t i = 0; i < mask->size(); ++i) gx[i] += dy[i] * (*mask)[i];
    });
  }
  return y;
}

}  // namespace master
