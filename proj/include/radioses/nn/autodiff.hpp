#pragma once

// Minimal reverse-mode differentiation core. A Tape owns a growing list of
// DiffTensor nodes; every op appends a node plus a closure that scatters the
// node's gradient back into its parents. Graphs are rebuilt per step
// (define-by-run), so control flow in the model code just works.
//
// Layout conventions used by the ops:
//   - tensors are dense row-major over an explicit shape vector
//   - conv1d operates on [C, T]; recurrent and norm ops on [..., F] with the
//     feature dimension last; lstm input is [T, B, F] (steps, batch, features)
// Scalar is float for training speed or double for finite-difference checks.

#include <Eigen/Dense>
#include <algorithm>
#include <array>
#include <cmath>
#include <cstddef>
#include <functional>
#include <memory>
#include <numeric>
#include <vector>

#include "radioses/common.hpp"

namespace radioses::nn {

template <typename S>
struct DiffTensor {
  std::vector<int> shape;
  std::vector<S> values;
  std::vector<S> gradient;  // same length as values once allocated

  static std::size_t count(const std::vector<int>& shape) {
    std::size_t n = 1;
    for (int d : shape) {
      require(d > 0, "tensor: nonpositive dimension");
      n *= std::size_t(d);
    }
    return n;
  }
  static DiffTensor zeros(std::vector<int> shape) {
    DiffTensor t;
    t.values.assign(count(shape), S(0));
    t.shape = std::move(shape);
    return t;
  }
  std::size_t numel() const { return values.size(); }
  int dim(int i) const {
    return shape[std::size_t(i < 0 ? int(shape.size()) + i : i)];
  }
};

template <typename S>
class Tape {
 public:
  using Mat = Eigen::Matrix<S, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
  using Map = Eigen::Map<Mat>;
  using CMap = Eigen::Map<const Mat>;

  // When disabled, ops skip backward bookkeeping entirely (inference mode).
  void set_grad_enabled(bool on) { grad_enabled_ = on; }
  bool grad_enabled() const { return grad_enabled_; }

  int size() const { return int(nodes_.size()); }
  const DiffTensor<S>& at(int id) const { return check(id).t; }
  DiffTensor<S>& at(int id) { return check(id).t; }
  const std::vector<S>& values(int id) const { return check(id).t.values; }
  const std::vector<S>& gradient(int id) const { return check(id).t.gradient; }

  /// Leaf node. Gradients accumulate into it like any other node.
  int input(DiffTensor<S> t) { return push(std::move(t)); }
  int input(std::vector<int> shape, std::vector<S> values) {
    require(DiffTensor<S>::count(shape) == values.size(),
            "tensor: shape does not match value count");
    DiffTensor<S> t;
    t.shape = std::move(shape);
    t.values = std::move(values);
    return input(std::move(t));
  }

  /// Scalar root: propagate d(root)/d(node) into every node's gradient.
  void backward(int root) {
    require(grad_enabled_, "backward: gradients are disabled");
    require(check(root).t.numel() == 1, "backward: root must be scalar");
    nodes_[std::size_t(root)].t.gradient[0] = S(1);
    nodes_[std::size_t(root)].dirty = true;
    for (int id = root; id >= 0; --id) {
      Node& n = nodes_[std::size_t(id)];
      if (n.dirty && n.back) n.back();
    }
  }

  // ---- elementwise -------------------------------------------------------

  int add(int a, int b) {
    same_shape(a, b, "add");
    DiffTensor<S> out = at(a);
    for (std::size_t i = 0; i < out.numel(); ++i) out.values[i] += val(b)[i];
    return unary_pair(std::move(out), a, b, [this](int y, int a_, int b_) {
      axpy(a_, S(1), grad(y));
      axpy(b_, S(1), grad(y));
    });
  }

  int sub(int a, int b) {
    same_shape(a, b, "sub");
    DiffTensor<S> out = at(a);
    for (std::size_t i = 0; i < out.numel(); ++i) out.values[i] -= val(b)[i];
    return unary_pair(std::move(out), a, b, [this](int y, int a_, int b_) {
      axpy(a_, S(1), grad(y));
      axpy(b_, S(-1), grad(y));
    });
  }

  int mul(int a, int b) {
    same_shape(a, b, "mul");
    DiffTensor<S> out = at(a);
    for (std::size_t i = 0; i < out.numel(); ++i) out.values[i] *= val(b)[i];
    return unary_pair(std::move(out), a, b, [this](int y, int a_, int b_) {
      const auto& g = grad(y);
      auto& ga = grad_ref(a_);
      auto& gb = grad_ref(b_);
      const auto& va = val(a_);
      const auto& vb = val(b_);
      for (std::size_t i = 0; i < g.size(); ++i) {
        ga[i] += g[i] * vb[i];
        gb[i] += g[i] * va[i];
      }
      mark(a_);
      mark(b_);
    });
  }

  int div(int a, int b) {
    same_shape(a, b, "div");
    DiffTensor<S> out = at(a);
    for (std::size_t i = 0; i < out.numel(); ++i) out.values[i] /= val(b)[i];
    return unary_pair(std::move(out), a, b, [this](int y, int a_, int b_) {
      const auto& g = grad(y);
      auto& ga = grad_ref(a_);
      auto& gb = grad_ref(b_);
      const auto& va = val(a_);
      const auto& vb = val(b_);
      for (std::size_t i = 0; i < g.size(); ++i) {
        ga[i] += g[i] / vb[i];
        gb[i] -= g[i] * va[i] / (vb[i] * vb[i]);
      }
      mark(a_);
      mark(b_);
    });
  }

  int scale(int a, S c) {
    DiffTensor<S> out = at(a);
    for (auto& v : out.values) v *= c;
    return unary(std::move(out), a,
                 [this, c](int y, int a_) { axpy(a_, c, grad(y)); });
  }

  int add_const(int a, S c) {
    DiffTensor<S> out = at(a);
    for (auto& v : out.values) v += c;
    return unary(std::move(out), a,
                 [this](int y, int a_) { axpy(a_, S(1), grad(y)); });
  }

  /// y = s · x where s is a scalar node (numel 1) and x any shape.
  int scale_by(int s, int x) {
    require(at(s).numel() == 1, "scale_by: scale must be scalar");
    const S c = val(s)[0];
    DiffTensor<S> out = at(x);
    for (auto& v : out.values) v *= c;
    return unary_pair(std::move(out), s, x, [this](int y, int s_, int x_) {
      const auto& g = grad(y);
      const auto& xv = val(x_);
      const S c = val(s_)[0];
      auto& gs = grad_ref(s_);
      auto& gx = grad_ref(x_);
      for (std::size_t i = 0; i < g.size(); ++i) {
        gs[0] += g[i] * xv[i];
        gx[i] += c * g[i];
      }
      mark(s_);
      mark(x_);
    });
  }

  int relu(int a) {
    DiffTensor<S> out = at(a);
    for (auto& v : out.values) v = std::max(v, S(0));
    return unary(std::move(out), a, [this](int y, int a_) {
      const auto& g = grad(y);
      const auto& v = val(y);
      auto& ga = grad_ref(a_);
      for (std::size_t i = 0; i < g.size(); ++i)
        if (v[i] > S(0)) ga[i] += g[i];
      mark(a_);
    });
  }

  int sigmoid(int a) {
    DiffTensor<S> out = at(a);
    for (auto& v : out.values) v = S(1) / (S(1) + std::exp(-v));
    return unary(std::move(out), a, [this](int y, int a_) {
      const auto& g = grad(y);
      const auto& v = val(y);
      auto& ga = grad_ref(a_);
      for (std::size_t i = 0; i < g.size(); ++i)
        ga[i] += g[i] * v[i] * (S(1) - v[i]);
      mark(a_);
    });
  }

  int tanh_(int a) {
    DiffTensor<S> out = at(a);
    for (auto& v : out.values) v = std::tanh(v);
    return unary(std::move(out), a, [this](int y, int a_) {
      const auto& g = grad(y);
      const auto& v = val(y);
      auto& ga = grad_ref(a_);
      for (std::size_t i = 0; i < g.size(); ++i)
        ga[i] += g[i] * (S(1) - v[i] * v[i]);
      mark(a_);
    });
  }

  int log_(int a) {
    DiffTensor<S> out = at(a);
    for (auto& v : out.values) {
      require(v > S(0), "log: nonpositive input");
      v = std::log(v);
    }
    return unary(std::move(out), a, [this](int y, int a_) {
      const auto& g = grad(y);
      const auto& va = val(a_);
      auto& ga = grad_ref(a_);
      for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i] / va[i];
      mark(a_);
    });
  }

  // ---- reductions --------------------------------------------------------

  int sum_all(int a) {
    DiffTensor<S> out = DiffTensor<S>::zeros({1});
    out.values[0] = std::accumulate(val(a).begin(), val(a).end(), S(0));
    return unary(std::move(out), a,
                 [this](int y, int a_) { axpy_scalar(a_, grad(y)[0]); });
  }

  int mean_all(int a) {
    const S inv = S(1) / S(at(a).numel());
    DiffTensor<S> out = DiffTensor<S>::zeros({1});
    out.values[0] =
        std::accumulate(val(a).begin(), val(a).end(), S(0)) * inv;
    return unary(std::move(out), a, [this, inv](int y, int a_) {
      axpy_scalar(a_, grad(y)[0] * inv);
    });
  }

  // ---- shape plumbing ----------------------------------------------------

  int reshape(int a, std::vector<int> shape) {
    require(DiffTensor<S>::count(shape) == at(a).numel(),
            "reshape: element count mismatch");
    DiffTensor<S> out;
    out.shape = std::move(shape);
    out.values = val(a);
    return unary(std::move(out), a,
                 [this](int y, int a_) { axpy(a_, S(1), grad(y)); });
  }

  int transpose2(int a) {
    require(at(a).shape.size() == 2, "transpose2: rank-2 only");
    const int R = at(a).shape[0], C = at(a).shape[1];
    DiffTensor<S> out = DiffTensor<S>::zeros({C, R});
    CMap x(val(a).data(), R, C);
    Map(out.values.data(), C, R) = x.transpose();
    return unary(std::move(out), a, [this, R, C](int y, int a_) {
      CMap g(grad(y).data(), C, R);
      Map(grad_ref(a_).data(), R, C) += g.transpose();
      mark(a_);
    });
  }

  /// Permute a rank-3 tensor: out[i0,i1,i2] = in[i(perm[0]),...] where
  /// out dim d == in dim perm[d].
  int transpose3(int a, std::array<int, 3> perm) {
    require(at(a).shape.size() == 3, "transpose3: rank-3 only");
    std::array<bool, 3> seen{};
    for (int p : perm) {
      require(p >= 0 && p < 3 && !seen[std::size_t(p)], "transpose3: bad perm");
      seen[std::size_t(p)] = true;
    }
    const auto& sh = at(a).shape;
    std::vector<int> oshape{sh[std::size_t(perm[0])], sh[std::size_t(perm[1])],
                            sh[std::size_t(perm[2])]};
    DiffTensor<S> out = DiffTensor<S>::zeros(oshape);
    const std::size_t s1 = std::size_t(sh[1]) * std::size_t(sh[2]);
    const std::size_t s2 = std::size_t(sh[2]);
    std::array<std::size_t, 3> stride{s1, s2, 1};
    const std::size_t o1 = std::size_t(oshape[1]) * std::size_t(oshape[2]);
    const std::size_t o2 = std::size_t(oshape[2]);
    const auto& x = val(a);
    for (int i = 0; i < oshape[0]; ++i)
      for (int j = 0; j < oshape[1]; ++j)
        for (int k = 0; k < oshape[2]; ++k) {
          std::array<int, 3> oidx{i, j, k};
          std::size_t src = 0;
          for (int d = 0; d < 3; ++d)
            src += stride[std::size_t(perm[std::size_t(d)])] *
                   std::size_t(oidx[std::size_t(d)]);
          out.values[(std::size_t(i) * o1) + std::size_t(j) * o2 +
                     std::size_t(k)] = x[src];
        }
    return unary(std::move(out), a, [this, perm, sh, oshape](int y, int a_) {
      const auto& g = grad(y);
      auto& ga = grad_ref(a_);
      const std::size_t s1 = std::size_t(sh[1]) * std::size_t(sh[2]);
      const std::size_t s2 = std::size_t(sh[2]);
      std::array<std::size_t, 3> stride{s1, s2, 1};
      const std::size_t o1 = std::size_t(oshape[1]) * std::size_t(oshape[2]);
      const std::size_t o2 = std::size_t(oshape[2]);
      for (int i = 0; i < oshape[0]; ++i)
        for (int j = 0; j < oshape[1]; ++j)
          for (int k = 0; k < oshape[2]; ++k) {
            std::array<int, 3> oidx{i, j, k};
            std::size_t src = 0;
            for (int d = 0; d < 3; ++d)
              src += stride[std::size_t(perm[std::size_t(d)])] *
                     std::size_t(oidx[std::size_t(d)]);
            ga[src] += g[std::size_t(i) * o1 + std::size_t(j) * o2 +
                         std::size_t(k)];
          }
      mark(a_);
    });
  }

  /// Concatenate along the last dimension; all other dims must agree.
  int concat_last(const std::vector<int>& parts) {
    require(!parts.empty(), "concat: no inputs");
    std::vector<int> shape = at(parts[0]).shape;
    int total = 0;
    for (int p : parts) {
      const auto& sh = at(p).shape;
      require(sh.size() == shape.size(), "concat: rank mismatch");
      for (std::size_t d = 0; d + 1 < sh.size(); ++d)
        require(sh[d] == shape[d], "concat: leading dim mismatch");
      total += sh.back();
    }
    std::vector<int> oshape = shape;
    oshape.back() = total;
    DiffTensor<S> out = DiffTensor<S>::zeros(oshape);
    const std::size_t rows = out.numel() / std::size_t(total);
    std::size_t off = 0;
    for (int p : parts) {
      const std::size_t f = std::size_t(at(p).shape.back());
      const auto& x = val(p);
      for (std::size_t r = 0; r < rows; ++r)
        std::copy(x.begin() + std::ptrdiff_t(r * f),
                  x.begin() + std::ptrdiff_t((r + 1) * f),
                  out.values.begin() + std::ptrdiff_t(r * std::size_t(total) + off));
      off += f;
    }
    const int y = push(std::move(out));
    if (grad_enabled_) {
      std::vector<int> ps = parts;
      nodes_[std::size_t(y)].back = [this, y, ps, total, rows]() {
        const auto& g = grad(y);
        std::size_t off = 0;
        for (int p : ps) {
          const std::size_t f = std::size_t(at(p).shape.back());
          auto& gp = grad_ref(p);
          for (std::size_t r = 0; r < rows; ++r)
            for (std::size_t i = 0; i < f; ++i)
              gp[r * f + i] += g[r * std::size_t(total) + off + i];
          mark(p);
          off += f;
        }
      };
    }
    return y;
  }

  /// out = x[..., from:to] along the last dimension.
  int slice_last(int a, int from, int to) {
    const auto& sh = at(a).shape;
    const int F = sh.back();
    require(from >= 0 && from < to && to <= F, "slice: bad range");
    std::vector<int> oshape = sh;
    oshape.back() = to - from;
    DiffTensor<S> out = DiffTensor<S>::zeros(oshape);
    const std::size_t rows = out.numel() / std::size_t(to - from);
    const auto& x = val(a);
    for (std::size_t r = 0; r < rows; ++r)
      std::copy(x.begin() + std::ptrdiff_t(r * std::size_t(F) + std::size_t(from)),
                x.begin() + std::ptrdiff_t(r * std::size_t(F) + std::size_t(to)),
                out.values.begin() + std::ptrdiff_t(r * std::size_t(to - from)));
    return unary(std::move(out), a, [this, from, to, F, rows](int y, int a_) {
      const auto& g = grad(y);
      auto& ga = grad_ref(a_);
      const std::size_t w = std::size_t(to - from);
      for (std::size_t r = 0; r < rows; ++r)
        for (std::size_t i = 0; i < w; ++i)
          ga[r * std::size_t(F) + std::size_t(from) + i] += g[r * w + i];
      mark(a_);
    });
  }

  /// Zero-pad the last dimension out to `to` entries.
  int pad_last(int a, int to) {
    const auto& sh = at(a).shape;
    const int F = sh.back();
    require(to >= F, "pad_last: target shorter than input");
    std::vector<int> oshape = sh;
    oshape.back() = to;
    DiffTensor<S> out = DiffTensor<S>::zeros(oshape);
    const std::size_t rows = at(a).numel() / std::size_t(F);
    const auto& x = val(a);
    for (std::size_t r = 0; r < rows; ++r)
      std::copy(x.begin() + std::ptrdiff_t(r * std::size_t(F)),
                x.begin() + std::ptrdiff_t((r + 1) * std::size_t(F)),
                out.values.begin() + std::ptrdiff_t(r * std::size_t(to)));
    return unary(std::move(out), a, [this, F, to, rows](int y, int a_) {
      const auto& g = grad(y);
      auto& ga = grad_ref(a_);
      for (std::size_t r = 0; r < rows; ++r)
        for (int i = 0; i < F; ++i)
          ga[r * std::size_t(F) + std::size_t(i)] +=
              g[r * std::size_t(to) + std::size_t(i)];
      mark(a_);
    });
  }

  /// Concatenate rank-3 tensors along the middle dimension. Used to batch
  /// same-shaped sequences into one fat LSTM call ([T, B, F] → [T, ΣB, F]).
  int stack_mid(const std::vector<int>& parts) {
    require(!parts.empty(), "stack_mid: no inputs");
    const auto& sh0 = at(parts[0]).shape;
    require(sh0.size() == 3, "stack_mid: rank-3 only");
    int total = 0;
    for (int p : parts) {
      const auto& sh = at(p).shape;
      require(sh.size() == 3 && sh[0] == sh0[0] && sh[2] == sh0[2],
              "stack_mid: outer dims mismatch");
      total += sh[1];
    }
    const int A = sh0[0], C = sh0[2];
    DiffTensor<S> out = DiffTensor<S>::zeros({A, total, C});
    std::size_t off = 0;
    for (int p : parts) {
      const std::size_t B = std::size_t(at(p).shape[1]);
      const auto& x = val(p);
      for (int a = 0; a < A; ++a)
        std::copy(
            x.begin() + std::ptrdiff_t(std::size_t(a) * B * std::size_t(C)),
            x.begin() + std::ptrdiff_t((std::size_t(a) + 1) * B * std::size_t(C)),
            out.values.begin() +
                std::ptrdiff_t((std::size_t(a) * std::size_t(total) + off) *
                               std::size_t(C)));
      off += B;
    }
    const int y = push(std::move(out));
    if (grad_enabled_) {
      std::vector<int> ps = parts;
      nodes_[std::size_t(y)].back = [this, y, ps, A, total, C]() {
        const auto& g = grad(y);
        std::size_t off = 0;
        for (int p : ps) {
          const std::size_t B = std::size_t(at(p).shape[1]);
          auto& gp = grad_ref(p);
          for (int a = 0; a < A; ++a)
            for (std::size_t i = 0; i < B * std::size_t(C); ++i)
              gp[std::size_t(a) * B * std::size_t(C) + i] +=
                  g[(std::size_t(a) * std::size_t(total) + off) *
                        std::size_t(C) +
                    i];
          mark(p);
          off += B;
        }
      };
    }
    return y;
  }

  /// out = x[:, from:to, :] (middle slice of a rank-3 tensor).
  int slice_mid(int a, int from, int to) {
    const auto& sh = at(a).shape;
    require(sh.size() == 3, "slice_mid: rank-3 only");
    const int A = sh[0], B = sh[1], C = sh[2];
    require(from >= 0 && from < to && to <= B, "slice_mid: bad range");
    const int W = to - from;
    DiffTensor<S> out = DiffTensor<S>::zeros({A, W, C});
    const auto& x = val(a);
    for (int i = 0; i < A; ++i)
      std::copy(x.begin() + std::ptrdiff_t((std::size_t(i) * std::size_t(B) +
                                            std::size_t(from)) *
                                           std::size_t(C)),
                x.begin() + std::ptrdiff_t((std::size_t(i) * std::size_t(B) +
                                            std::size_t(to)) *
                                           std::size_t(C)),
                out.values.begin() + std::ptrdiff_t(std::size_t(i) *
                                                    std::size_t(W) *
                                                    std::size_t(C)));
    return unary(std::move(out), a, [this, A, B, C, from, W](int y, int a_) {
      const auto& g = grad(y);
      auto& ga = grad_ref(a_);
      for (int i = 0; i < A; ++i)
        for (std::size_t k = 0; k < std::size_t(W) * std::size_t(C); ++k)
          ga[(std::size_t(i) * std::size_t(B) + std::size_t(from)) *
                 std::size_t(C) +
             k] += g[std::size_t(i) * std::size_t(W) * std::size_t(C) + k];
      mark(a_);
    });
  }

  // ---- linear algebra ----------------------------------------------------

  int matmul(int a, int b) {
    require(at(a).shape.size() == 2 && at(b).shape.size() == 2,
            "matmul: rank-2 only");
    const int m = at(a).shape[0], k = at(a).shape[1], n = at(b).shape[1];
    require(at(b).shape[0] == k, "matmul: inner dim mismatch");
    DiffTensor<S> out = DiffTensor<S>::zeros({m, n});
    CMap A(val(a).data(), m, k);
    CMap B(val(b).data(), k, n);
    Map(out.values.data(), m, n).noalias() = A * B;
    return unary_pair(std::move(out), a, b, [this, m, k, n](int y, int a_, int b_) {
      CMap g(grad(y).data(), m, n);
      CMap A(val(a_).data(), m, k);
      CMap B(val(b_).data(), k, n);
      Map(grad_ref(a_).data(), m, k).noalias() += g * B.transpose();
      Map(grad_ref(b_).data(), k, n).noalias() += A.transpose() * g;
      mark(a_);
      mark(b_);
    });
  }

  /// y[..., G] = x[..., F] · W[F, G] + b[G]; any leading shape.
  int linear(int x, int W, int b) {
    const auto& sh = at(x).shape;
    require(!sh.empty() && at(W).shape.size() == 2, "linear: bad ranks");
    const int F = sh.back();
    require(at(W).shape[0] == F, "linear: feature dim mismatch");
    const int G = at(W).shape[1];
    require(at(b).shape == std::vector<int>{G}, "linear: bias shape");
    const int R = int(at(x).numel() / std::size_t(F));
    std::vector<int> oshape = sh;
    oshape.back() = G;
    DiffTensor<S> out = DiffTensor<S>::zeros(oshape);
    CMap X(val(x).data(), R, F);
    CMap Wm(val(W).data(), F, G);
    Map Y(out.values.data(), R, G);
    Y.noalias() = X * Wm;
    Y.rowwise() += Eigen::Map<const Eigen::Matrix<S, 1, Eigen::Dynamic>>(
        val(b).data(), G);
    const int y = push(std::move(out));
    if (grad_enabled_)
      nodes_[std::size_t(y)].back = [this, y, x, W, b, R, F, G]() {
        CMap g(grad(y).data(), R, G);
        CMap X(val(x).data(), R, F);
        CMap Wm(val(W).data(), F, G);
        Map(grad_ref(x).data(), R, F).noalias() += g * Wm.transpose();
        Map(grad_ref(W).data(), F, G).noalias() += X.transpose() * g;
        Eigen::Map<Eigen::Matrix<S, 1, Eigen::Dynamic>>(grad_ref(b).data(), G) +=
            g.colwise().sum();
        mark(x);
        mark(W);
        mark(b);
      };
    return y;
  }

  /// Normalize the last dimension of x to zero mean / unit variance per
  /// feature vector, then apply the affine pair (gamma, beta).
  int layer_norm(int x, int gamma, int beta, S eps = S(1e-5)) {
    const auto& sh = at(x).shape;
    const int F = sh.back();
    require(at(gamma).shape == std::vector<int>{F} &&
                at(beta).shape == std::vector<int>{F},
            "layer_norm: affine shape mismatch");
    const std::size_t R = at(x).numel() / std::size_t(F);
    DiffTensor<S> out = DiffTensor<S>::zeros(sh);
    auto xhat = grad_enabled_ ? std::make_shared<std::vector<S>>(at(x).numel())
                              : nullptr;
    auto rstd = grad_enabled_ ? std::make_shared<std::vector<S>>(R) : nullptr;
    const auto& xv = val(x);
    const auto& gv = val(gamma);
    const auto& bv = val(beta);
    for (std::size_t r = 0; r < R; ++r) {
      const S* row = xv.data() + r * std::size_t(F);
      S mu = 0;
      for (int i = 0; i < F; ++i) mu += row[i];
      mu /= S(F);
      S var = 0;
      for (int i = 0; i < F; ++i) var += (row[i] - mu) * (row[i] - mu);
      var /= S(F);
      const S rs = S(1) / std::sqrt(var + eps);
      for (int i = 0; i < F; ++i) {
        const S xh = (row[i] - mu) * rs;
        if (xhat) (*xhat)[r * std::size_t(F) + std::size_t(i)] = xh;
        out.values[r * std::size_t(F) + std::size_t(i)] =
            gv[std::size_t(i)] * xh + bv[std::size_t(i)];
      }
      if (rstd) (*rstd)[r] = rs;
    }
    const int y = push(std::move(out));
    if (grad_enabled_)
      nodes_[std::size_t(y)].back = [this, y, x, gamma, beta, F, R, xhat,
                                     rstd]() {
        const auto& g = grad(y);
        const auto& gv = val(gamma);
        auto& gx = grad_ref(x);
        auto& gg = grad_ref(gamma);
        auto& gb = grad_ref(beta);
        for (std::size_t r = 0; r < R; ++r) {
          const S* grow = g.data() + r * std::size_t(F);
          const S* xh = xhat->data() + r * std::size_t(F);
          S sum_dxh = 0, sum_dxh_xh = 0;
          for (int i = 0; i < F; ++i) {
            const S dxh = grow[i] * gv[std::size_t(i)];
            sum_dxh += dxh;
            sum_dxh_xh += dxh * xh[i];
            gg[std::size_t(i)] += grow[i] * xh[i];
            gb[std::size_t(i)] += grow[i];
          }
          const S inv_f = S(1) / S(F);
          for (int i = 0; i < F; ++i) {
            const S dxh = grow[i] * gv[std::size_t(i)];
            gx[r * std::size_t(F) + std::size_t(i)] +=
                (*rstd)[r] *
                (dxh - sum_dxh * inv_f - xh[i] * sum_dxh_xh * inv_f);
          }
        }
        mark(x);
        mark(gamma);
        mark(beta);
      };
    return y;
  }

  // ---- convolution -------------------------------------------------------

  /// x: [C_in, T], W: [C_out, C_in·K], b: [C_out] → y: [C_out, L],
  /// L = floor((T−K)/stride)+1.
  int conv1d(int x, int W, int b, int kernel, int stride) {
    const auto& sh = at(x).shape;
    require(sh.size() == 2, "conv1d: input must be [C, T]");
    const int Cin = sh[0], T = sh[1];
    require(T >= kernel, "conv1d: input shorter than kernel");
    require(stride >= 1, "conv1d: bad stride");
    const int Cout = at(W).shape[0];
    require(at(W).shape == std::vector<int>({Cout, Cin * kernel}),
            "conv1d: weight shape mismatch");
    require(at(b).shape == std::vector<int>{Cout}, "conv1d: bias shape");
    const int L = (T - kernel) / stride + 1;

    auto cols = std::make_shared<std::vector<S>>(
        std::size_t(Cin) * std::size_t(kernel) * std::size_t(L));
    const auto& xv = val(x);
    for (int ci = 0; ci < Cin; ++ci)
      for (int k = 0; k < kernel; ++k)
        for (int l = 0; l < L; ++l)
          (*cols)[(std::size_t(ci) * std::size_t(kernel) + std::size_t(k)) *
                      std::size_t(L) +
                  std::size_t(l)] =
              xv[std::size_t(ci) * std::size_t(T) +
                 std::size_t(l * stride + k)];

    DiffTensor<S> out = DiffTensor<S>::zeros({Cout, L});
    CMap Wm(val(W).data(), Cout, Cin * kernel);
    CMap C(cols->data(), Cin * kernel, L);
    Map Y(out.values.data(), Cout, L);
    Y.noalias() = Wm * C;
    for (int o = 0; o < Cout; ++o) Y.row(o).array() += val(b)[std::size_t(o)];

    const int y = push(std::move(out));
    if (grad_enabled_)
      nodes_[std::size_t(y)].back = [this, y, x, W, b, Cin, T, Cout, kernel,
                                     stride, L, cols]() {
        CMap g(grad(y).data(), Cout, L);
        CMap Wm(val(W).data(), Cout, Cin * kernel);
        CMap C(cols->data(), Cin * kernel, L);
        Map(grad_ref(W).data(), Cout, Cin * kernel).noalias() +=
            g * C.transpose();
        for (int o = 0; o < Cout; ++o)
          grad_ref(b)[std::size_t(o)] += g.row(o).sum();
        Mat dcols = Wm.transpose() * g;  // [Cin·K, L]
        auto& gx = grad_ref(x);
        for (int ci = 0; ci < Cin; ++ci)
          for (int k = 0; k < kernel; ++k)
            for (int l = 0; l < L; ++l)
              gx[std::size_t(ci) * std::size_t(T) +
                 std::size_t(l * stride + k)] +=
                  dcols(ci * kernel + k, l);
        mark(x);
        mark(W);
        mark(b);
      };
    return y;
  }

  /// x: [C_in, L], W: [C_in, C_out·K], b: [C_out] → y: [C_out, out_len],
  /// out_len ≤ (L−1)·stride + K (tail trimmed).
  int conv1d_transpose(int x, int W, int b, int kernel, int stride,
                       int out_len) {
    const auto& sh = at(x).shape;
    require(sh.size() == 2, "conv1d_transpose: input must be [C, L]");
    const int Cin = sh[0], L = sh[1];
    const int full = (L - 1) * stride + kernel;
    require(out_len >= 1 && out_len <= full, "conv1d_transpose: bad out_len");
    const int Cout = at(W).shape.size() == 2
                         ? at(W).shape[1] / kernel
                         : 0;
    require(Cout >= 1 && at(W).shape == std::vector<int>({Cin, Cout * kernel}),
            "conv1d_transpose: weight shape mismatch");
    require(at(b).shape == std::vector<int>{Cout},
            "conv1d_transpose: bias shape");

    // M = xᵀ · W : [L, Cout·K], then scatter along time.
    CMap X(val(x).data(), Cin, L);
    CMap Wm(val(W).data(), Cin, Cout * kernel);
    Mat M = X.transpose() * Wm;
    DiffTensor<S> out = DiffTensor<S>::zeros({Cout, out_len});
    for (int l = 0; l < L; ++l)
      for (int o = 0; o < Cout; ++o)
        for (int k = 0; k < kernel; ++k) {
          const int t = l * stride + k;
          if (t < out_len)
            out.values[std::size_t(o) * std::size_t(out_len) + std::size_t(t)] +=
                M(l, o * kernel + k);
        }
    for (int o = 0; o < Cout; ++o)
      for (int t = 0; t < out_len; ++t)
        out.values[std::size_t(o) * std::size_t(out_len) + std::size_t(t)] +=
            val(b)[std::size_t(o)];

    const int y = push(std::move(out));
    if (grad_enabled_)
      nodes_[std::size_t(y)].back = [this, y, x, W, b, Cin, L, Cout, kernel,
                                     stride, out_len]() {
        const auto& g = grad(y);
        // dM[l, o·K+k] = g[o, l·stride+k] (0 where trimmed)
        Mat dM = Mat::Zero(L, Cout * kernel);
        for (int l = 0; l < L; ++l)
          for (int o = 0; o < Cout; ++o)
            for (int k = 0; k < kernel; ++k) {
              const int t = l * stride + k;
              if (t < out_len)
                dM(l, o * kernel + k) =
                    g[std::size_t(o) * std::size_t(out_len) + std::size_t(t)];
            }
        CMap X(val(x).data(), Cin, L);
        CMap Wm(val(W).data(), Cin, Cout * kernel);
        Map(grad_ref(x).data(), Cin, L).noalias() += Wm * dM.transpose();
        Map(grad_ref(W).data(), Cin, Cout * kernel).noalias() += X * dM;
        auto& gb = grad_ref(b);
        for (int o = 0; o < Cout; ++o)
          for (int t = 0; t < out_len; ++t)
            gb[std::size_t(o)] +=
                g[std::size_t(o) * std::size_t(out_len) + std::size_t(t)];
        mark(x);
        mark(W);
        mark(b);
      };
    return y;
  }

  // ---- recurrence --------------------------------------------------------

  /// x: [T, B, F], Wx: [F, 4H], Wh: [H, 4H], b: [4H] → h: [T, B, H].
  /// Gate order i, f, g, o. Zero initial state. reverse=true runs the
  /// recurrence from the last step backwards (output stays time-aligned).
  int lstm(int x, int Wx, int Wh, int b, bool reverse) {
    const auto& sh = at(x).shape;
    require(sh.size() == 3, "lstm: input must be [T, B, F]");
    const int T = sh[0], B = sh[1], F = sh[2];
    require(at(Wx).shape.size() == 2 && at(Wx).shape[0] == F,
            "lstm: Wx shape mismatch");
    const int H4 = at(Wx).shape[1];
    require(H4 % 4 == 0, "lstm: gate width not divisible by 4");
    const int H = H4 / 4;
    require(at(Wh).shape == std::vector<int>({H, H4}), "lstm: Wh shape");
    require(at(b).shape == std::vector<int>{H4}, "lstm: bias shape");

    struct Work {
      std::vector<S> gates;  // [T, B, 4H] post-activation
      std::vector<S> c;      // [T, B, H]
      std::vector<S> tc;     // tanh(c), [T, B, H]
    };
    auto ws = grad_enabled_ ? std::make_shared<Work>() : nullptr;
    std::vector<S> gates_t(std::size_t(B) * std::size_t(H4));
    std::vector<S> c_prev(std::size_t(B) * std::size_t(H), S(0));
    std::vector<S> h_prev(std::size_t(B) * std::size_t(H), S(0));
    if (ws) {
      ws->gates.resize(std::size_t(T) * std::size_t(B) * std::size_t(H4));
      ws->c.resize(std::size_t(T) * std::size_t(B) * std::size_t(H));
      ws->tc.resize(std::size_t(T) * std::size_t(B) * std::size_t(H));
    }
    DiffTensor<S> out =
        DiffTensor<S>::zeros({T, B, H});
    CMap WxM(val(Wx).data(), F, H4);
    CMap WhM(val(Wh).data(), H, H4);
    Eigen::Map<const Eigen::Matrix<S, 1, Eigen::Dynamic>> bm(val(b).data(), H4);

    for (int step = 0; step < T; ++step) {
      const int t = reverse ? T - 1 - step : step;
      CMap xt(val(x).data() + std::size_t(t) * std::size_t(B) * std::size_t(F),
              B, F);
      Map Z(gates_t.data(), B, H4);
      Z.noalias() = xt * WxM;
      Z.noalias() += Map(h_prev.data(), B, H) * WhM;
      Z.rowwise() += bm;
      for (int r = 0; r < B; ++r)
        for (int j = 0; j < H4; ++j) {
          S& z = gates_t[std::size_t(r) * std::size_t(H4) + std::size_t(j)];
          z = (j < 2 * H || j >= 3 * H) ? S(1) / (S(1) + std::exp(-z))
                                        : std::tanh(z);
        }
      S* hout = out.values.data() +
                std::size_t(t) * std::size_t(B) * std::size_t(H);
      for (int r = 0; r < B; ++r)
        for (int j = 0; j < H; ++j) {
          const std::size_t gb =
              std::size_t(r) * std::size_t(H4);
          const S i_g = gates_t[gb + std::size_t(j)];
          const S f_g = gates_t[gb + std::size_t(H + j)];
          const S g_g = gates_t[gb + std::size_t(2 * H + j)];
          const S o_g = gates_t[gb + std::size_t(3 * H + j)];
          const std::size_t ci = std::size_t(r) * std::size_t(H) + std::size_t(j);
          const S c_new = f_g * c_prev[ci] + i_g * g_g;
          const S tc = std::tanh(c_new);
          c_prev[ci] = c_new;
          h_prev[ci] = o_g * tc;
          hout[ci] = h_prev[ci];
          if (ws) {
            const std::size_t base =
                std::size_t(t) * std::size_t(B) * std::size_t(H);
            ws->c[base + ci] = c_new;
            ws->tc[base + ci] = tc;
          }
        }
      if (ws)
        std::copy(gates_t.begin(), gates_t.end(),
                  ws->gates.begin() +
                      std::ptrdiff_t(std::size_t(t) * std::size_t(B) *
                                     std::size_t(H4)));
      // note: c_prev/h_prev roll forward inside the loop
    }

    const int y = push(std::move(out));
    if (grad_enabled_)
      nodes_[std::size_t(y)].back = [this, y, x, Wx, Wh, b, T, B, F, H, H4,
                                     reverse, ws]() {
        CMap WxM(val(Wx).data(), F, H4);
        CMap WhM(val(Wh).data(), H, H4);
        Mat dh_carry = Mat::Zero(B, H);
        std::vector<S> dc(std::size_t(B) * std::size_t(H), S(0));
        Mat dZ(B, H4);
        auto& gx = grad_ref(x);
        auto& gWx = grad_ref(Wx);
        auto& gWh = grad_ref(Wh);
        auto& gb = grad_ref(b);
        const auto& gy = grad(y);
        for (int step = T - 1; step >= 0; --step) {
          const int t = reverse ? T - 1 - step : step;
          // time index of the previous step in recurrence order
          const int tp = reverse ? T - step : step - 1;
          const std::size_t hbase =
              std::size_t(t) * std::size_t(B) * std::size_t(H);
          const std::size_t pbase =
              step > 0 ? std::size_t(tp) * std::size_t(B) * std::size_t(H) : 0;
          const std::size_t gbase =
              std::size_t(t) * std::size_t(B) * std::size_t(H4);
          for (int r = 0; r < B; ++r)
            for (int j = 0; j < H; ++j) {
              const std::size_t ci =
                  std::size_t(r) * std::size_t(H) + std::size_t(j);
              const std::size_t gb4 = std::size_t(r) * std::size_t(H4);
              const S i_g = ws->gates[gbase + gb4 + std::size_t(j)];
              const S f_g = ws->gates[gbase + gb4 + std::size_t(H + j)];
              const S g_g = ws->gates[gbase + gb4 + std::size_t(2 * H + j)];
              const S o_g = ws->gates[gbase + gb4 + std::size_t(3 * H + j)];
              const S tc = ws->tc[hbase + ci];
              const S dh = gy[hbase + ci] + dh_carry(r, j);
              const S dct = dc[ci] + dh * o_g * (S(1) - tc * tc);
              const S c_prev = step == 0 ? S(0) : ws->c[pbase + ci];
              dZ(r, j) = dct * g_g * i_g * (S(1) - i_g);
              dZ(r, H + j) = dct * c_prev * f_g * (S(1) - f_g);
              dZ(r, 2 * H + j) = dct * i_g * (S(1) - g_g * g_g);
              dZ(r, 3 * H + j) = dh * tc * o_g * (S(1) - o_g);
              dc[ci] = dct * f_g;
            }
          CMap xt(val(x).data() + std::size_t(t) * std::size_t(B) *
                                       std::size_t(F),
                  B, F);
          Map(gx.data() + std::size_t(t) * std::size_t(B) * std::size_t(F), B,
              F)
              .noalias() += dZ * WxM.transpose();
          Map(gWx.data(), F, H4).noalias() += xt.transpose() * dZ;
          if (step > 0) {
            CMap hprev(at(y).values.data() + pbase, B, H);
            Map(gWh.data(), H, H4).noalias() += hprev.transpose() * dZ;
            dh_carry.noalias() = dZ * WhM.transpose();
          } else {
            dh_carry.setZero();
          }
          Eigen::Map<Eigen::Matrix<S, 1, Eigen::Dynamic>>(gb.data(), H4) +=
              dZ.colwise().sum();
        }
        mark(x);
        mark(Wx);
        mark(Wh);
        mark(b);
      };
    return y;
  }

  /// One recurrence step. x: [B, F], h/c: [B, H]; returns [B, 2H] packed as
  /// (h' ‖ c') per row. Same math as one step of lstm(); gate order i,f,g,o.
  int lstm_cell(int x, int h, int c, int Wx, int Wh, int b) {
    const auto& sh = at(x).shape;
    require(sh.size() == 2, "lstm_cell: input must be [B, F]");
    const int B = sh[0], F = sh[1];
    const int H4 = at(Wx).shape.size() == 2 ? at(Wx).shape[1] : 0;
    require(H4 > 0 && H4 % 4 == 0 && at(Wx).shape[0] == F,
            "lstm_cell: Wx shape mismatch");
    const int H = H4 / 4;
    require(at(h).shape == std::vector<int>({B, H}) &&
                at(c).shape == std::vector<int>({B, H}),
            "lstm_cell: state shape mismatch");
    require(at(Wh).shape == std::vector<int>({H, H4}), "lstm_cell: Wh shape");
    require(at(b).shape == std::vector<int>{H4}, "lstm_cell: bias shape");

    auto gates = std::make_shared<std::vector<S>>(std::size_t(B) *
                                                  std::size_t(H4));
    Map Z(gates->data(), B, H4);
    Z.noalias() = CMap(val(x).data(), B, F) * CMap(val(Wx).data(), F, H4);
    Z.noalias() += CMap(val(h).data(), B, H) * CMap(val(Wh).data(), H, H4);
    Z.rowwise() +=
        Eigen::Map<const Eigen::Matrix<S, 1, Eigen::Dynamic>>(val(b).data(),
                                                              H4);
    for (int r = 0; r < B; ++r)
      for (int j = 0; j < H4; ++j) {
        S& z = (*gates)[std::size_t(r) * std::size_t(H4) + std::size_t(j)];
        z = (j < 2 * H || j >= 3 * H) ? S(1) / (S(1) + std::exp(-z))
                                      : std::tanh(z);
      }
    DiffTensor<S> out = DiffTensor<S>::zeros({B, 2 * H});
    auto tc = std::make_shared<std::vector<S>>(std::size_t(B) *
                                               std::size_t(H));
    for (int r = 0; r < B; ++r)
      for (int j = 0; j < H; ++j) {
        const std::size_t gb = std::size_t(r) * std::size_t(H4);
        const S i_g = (*gates)[gb + std::size_t(j)];
        const S f_g = (*gates)[gb + std::size_t(H + j)];
        const S g_g = (*gates)[gb + std::size_t(2 * H + j)];
        const S o_g = (*gates)[gb + std::size_t(3 * H + j)];
        const S c_new =
            f_g * val(c)[std::size_t(r) * std::size_t(H) + std::size_t(j)] +
            i_g * g_g;
        const S t = std::tanh(c_new);
        (*tc)[std::size_t(r) * std::size_t(H) + std::size_t(j)] = t;
        out.values[std::size_t(r) * 2 * std::size_t(H) + std::size_t(j)] =
            o_g * t;
        out.values[std::size_t(r) * 2 * std::size_t(H) + std::size_t(H + j)] =
            c_new;
      }
    const int y = push(std::move(out));
    if (grad_enabled_)
      nodes_[std::size_t(y)].back = [this, y, x, h, c, Wx, Wh, b, B, F, H, H4,
                                     gates, tc]() {
        const auto& g = grad(y);
        Mat dZ(B, H4);
        auto& gc = grad_ref(c);
        for (int r = 0; r < B; ++r)
          for (int j = 0; j < H; ++j) {
            const std::size_t gb = std::size_t(r) * std::size_t(H4);
            const std::size_t ci =
                std::size_t(r) * std::size_t(H) + std::size_t(j);
            const S i_g = (*gates)[gb + std::size_t(j)];
            const S f_g = (*gates)[gb + std::size_t(H + j)];
            const S g_g = (*gates)[gb + std::size_t(2 * H + j)];
            const S o_g = (*gates)[gb + std::size_t(3 * H + j)];
            const S t = (*tc)[ci];
            const S dh = g[std::size_t(r) * 2 * std::size_t(H) + std::size_t(j)];
            const S dc_out =
                g[std::size_t(r) * 2 * std::size_t(H) + std::size_t(H + j)];
            const S dct = dc_out + dh * o_g * (S(1) - t * t);
            dZ(r, j) = dct * g_g * i_g * (S(1) - i_g);
            dZ(r, H + j) = dct * val(c)[ci] * f_g * (S(1) - f_g);
            dZ(r, 2 * H + j) = dct * i_g * (S(1) - g_g * g_g);
            dZ(r, 3 * H + j) = dh * t * o_g * (S(1) - o_g);
            gc[ci] += dct * f_g;
          }
        Map(grad_ref(x).data(), B, F).noalias() +=
            dZ * CMap(val(Wx).data(), F, H4).transpose();
        Map(grad_ref(h).data(), B, H).noalias() +=
            dZ * CMap(val(Wh).data(), H, H4).transpose();
        Map(grad_ref(Wx).data(), F, H4).noalias() +=
            CMap(val(x).data(), B, F).transpose() * dZ;
        Map(grad_ref(Wh).data(), H, H4).noalias() +=
            CMap(val(h).data(), B, H).transpose() * dZ;
        Eigen::Map<Eigen::Matrix<S, 1, Eigen::Dynamic>>(grad_ref(b).data(),
                                                        H4) +=
            dZ.colwise().sum();
        mark(x);
        mark(h);
        mark(c);
        mark(Wx);
        mark(Wh);
        mark(b);
      };
    return y;
  }

  /// Bidirectional LSTM: forward and reverse passes concatenated on the
  /// feature axis. x: [T, B, F] → [T, B, 2H].
  int bilstm(int x, int WxF, int WhF, int bF, int WxR, int WhR, int bR) {
    return concat_last({lstm(x, WxF, WhF, bF, false),
                        lstm(x, WxR, WhR, bR, true)});
  }

  // ---- block segmentation (50% overlap) -----------------------------------

  /// x: [L, F] → blocks [K, S, F]; block s holds frames [s·hop, s·hop+K) of
  /// x zero-padded past its end. Default hop K/2 (50% overlap), S =
  /// ceil(L/hop); min_blocks forces extra all-zero tail blocks so two
  /// sequences can be aligned to the same S.
  int segment(int x, int K, int hop = -1, int min_blocks = 0) {
    const auto& sh = at(x).shape;
    require(sh.size() == 2, "segment: input must be [L, F]");
    if (hop < 0) {
      require(K >= 2 && K % 2 == 0, "segment: block length must be even");
      hop = K / 2;
    }
    require(hop >= 1 && hop <= K, "segment: hop must be in [1, K]");
    const int L = sh[0], F = sh[1];
    const int Sb = std::max((L + hop - 1) / hop, min_blocks);
    DiffTensor<S> out = DiffTensor<S>::zeros({K, Sb, F});
    const auto& xv = val(x);
    for (int k = 0; k < K; ++k)
      for (int s = 0; s < Sb; ++s) {
        const int t = s * hop + k;
        if (t >= L) continue;
        std::copy(xv.begin() + std::ptrdiff_t(std::size_t(t) * std::size_t(F)),
                  xv.begin() + std::ptrdiff_t((std::size_t(t) + 1) * std::size_t(F)),
                  out.values.begin() +
                      std::ptrdiff_t((std::size_t(k) * std::size_t(Sb) +
                                      std::size_t(s)) *
                                     std::size_t(F)));
      }
    return unary(std::move(out), x, [this, K, Sb, F, L, hop](int y, int x_) {
      const auto& g = grad(y);
      auto& gx = grad_ref(x_);
      for (int k = 0; k < K; ++k)
        for (int s = 0; s < Sb; ++s) {
          const int t = s * hop + k;
          if (t >= L) continue;
          for (int f = 0; f < F; ++f)
            gx[std::size_t(t) * std::size_t(F) + std::size_t(f)] +=
                g[(std::size_t(k) * std::size_t(Sb) + std::size_t(s)) *
                      std::size_t(F) +
                  std::size_t(f)];
        }
      mark(x_);
    });
  }

  /// blocks [K, S, F] → [L, F]; every frame divided by its coverage count so
  /// overlap_add(segment(x)) == x exactly. hop must match the segmentation.
  int overlap_add(int blocks, int L, int hop = -1) {
    const auto& sh = at(blocks).shape;
    require(sh.size() == 3, "overlap_add: input must be [K, S, F]");
    const int K = sh[0], Sb = sh[1], F = sh[2];
    if (hop < 0) {
      require(K % 2 == 0, "overlap_add: block length must be even");
      hop = K / 2;
    }
    require(hop >= 1 && hop <= K, "overlap_add: hop must be in [1, K]");
    require(L >= 1 && L <= (Sb - 1) * hop + K, "overlap_add: bad output length");
    std::vector<int> cover(std::size_t(L), 0);
    for (int k = 0; k < K; ++k)
      for (int s = 0; s < Sb; ++s) {
        const int t = s * hop + k;
        if (t < L) ++cover[std::size_t(t)];
      }
    DiffTensor<S> out = DiffTensor<S>::zeros({L, F});
    const auto& bv = val(blocks);
    for (int k = 0; k < K; ++k)
      for (int s = 0; s < Sb; ++s) {
        const int t = s * hop + k;
        if (t >= L) continue;
        for (int f = 0; f < F; ++f)
          out.values[std::size_t(t) * std::size_t(F) + std::size_t(f)] +=
              bv[(std::size_t(k) * std::size_t(Sb) + std::size_t(s)) *
                     std::size_t(F) +
                 std::size_t(f)];
      }
    for (int t = 0; t < L; ++t) {
      require(cover[std::size_t(t)] > 0, "overlap_add: uncovered frame");
      const S inv = S(1) / S(cover[std::size_t(t)]);
      for (int f = 0; f < F; ++f)
        out.values[std::size_t(t) * std::size_t(F) + std::size_t(f)] *= inv;
    }
    return unary(std::move(out), blocks,
                 [this, K, Sb, F, L, hop, cover](int y, int b_) {
                   const auto& g = grad(y);
                   auto& gb = grad_ref(b_);
                   for (int k = 0; k < K; ++k)
                     for (int s = 0; s < Sb; ++s) {
                       const int t = s * hop + k;
                       if (t >= L) continue;
                       const S inv = S(1) / S(cover[std::size_t(t)]);
                       for (int f = 0; f < F; ++f)
                         gb[(std::size_t(k) * std::size_t(Sb) +
                             std::size_t(s)) *
                                std::size_t(F) +
                            std::size_t(f)] +=
                             inv * g[std::size_t(t) * std::size_t(F) +
                                     std::size_t(f)];
                     }
                   mark(b_);
                 });
  }

  /// blocks [K_in, S, F] → [K_out, S, F], linear interpolation along the
  /// first (block) axis with endpoints aligned.
  int interp_blocks(int x, int K_out) {
    const auto& sh = at(x).shape;
    require(sh.size() == 3, "interp: input must be [K, S, F]");
    require(K_out >= 1, "interp: bad target length");
    const int K_in = sh[0], Sb = sh[1], F = sh[2];
    const std::size_t row = std::size_t(Sb) * std::size_t(F);
    // precompute (i0, i1, w) per output index
    std::vector<int> i0(static_cast<std::size_t>(K_out));
    std::vector<int> i1(static_cast<std::size_t>(K_out));
    std::vector<S> w(static_cast<std::size_t>(K_out));
    for (int k = 0; k < K_out; ++k) {
      if (K_out == 1 || K_in == 1) {
        i0[std::size_t(k)] = i1[std::size_t(k)] = 0;
        w[std::size_t(k)] = S(0);
        continue;
      }
      const double pos = double(k) * double(K_in - 1) / double(K_out - 1);
      const int lo = std::min(int(pos), K_in - 2);
      i0[std::size_t(k)] = lo;
      i1[std::size_t(k)] = lo + 1;
      w[std::size_t(k)] = S(pos - lo);
    }
    DiffTensor<S> out = DiffTensor<S>::zeros({K_out, Sb, F});
    const auto& xv = val(x);
    for (int k = 0; k < K_out; ++k)
      for (std::size_t i = 0; i < row; ++i)
        out.values[std::size_t(k) * row + i] =
            (S(1) - w[std::size_t(k)]) *
                xv[std::size_t(i0[std::size_t(k)]) * row + i] +
            w[std::size_t(k)] * xv[std::size_t(i1[std::size_t(k)]) * row + i];
    return unary(std::move(out), x,
                 [this, K_out, row, i0, i1, w](int y, int x_) {
                   const auto& g = grad(y);
                   auto& gx = grad_ref(x_);
                   for (int k = 0; k < K_out; ++k)
                     for (std::size_t i = 0; i < row; ++i) {
                       gx[std::size_t(i0[std::size_t(k)]) * row + i] +=
                           (S(1) - w[std::size_t(k)]) *
                           g[std::size_t(k) * row + i];
                       gx[std::size_t(i1[std::size_t(k)]) * row + i] +=
                           w[std::size_t(k)] * g[std::size_t(k) * row + i];
                     }
                   mark(x_);
                 });
  }

 private:
  struct Node {
    DiffTensor<S> t;
    std::function<void()> back;
    bool dirty = false;
  };

  Node& check(int id) {
    require(id >= 0 && id < int(nodes_.size()), "tape: bad node id");
    return nodes_[std::size_t(id)];
  }
  const Node& check(int id) const {
    require(id >= 0 && id < int(nodes_.size()), "tape: bad node id");
    return nodes_[std::size_t(id)];
  }
  const std::vector<S>& val(int id) const { return check(id).t.values; }
  const std::vector<S>& grad(int id) const { return check(id).t.gradient; }
  std::vector<S>& grad_ref(int id) { return check(id).t.gradient; }
  void mark(int id) { check(id).dirty = true; }

  void axpy(int dst, S c, const std::vector<S>& src) {
    auto& g = grad_ref(dst);
    for (std::size_t i = 0; i < src.size(); ++i) g[i] += c * src[i];
    mark(dst);
  }
  void axpy_scalar(int dst, S c) {
    auto& g = grad_ref(dst);
    for (auto& v : g) v += c;
    mark(dst);
  }

  void same_shape(int a, int b, const char* op) {
    require(at(a).shape == at(b).shape,
            std::string(op) + ": shape mismatch");
  }

  /// All node creation funnels through here so every node gets a zeroed
  /// gradient buffer of matching size.
  int push(DiffTensor<S> out) {
    out.gradient.assign(out.numel(), S(0));
    nodes_.push_back(Node{std::move(out), nullptr, false});
    return int(nodes_.size()) - 1;
  }

  template <typename Fn>
  int unary(DiffTensor<S> out, int a, Fn&& fn) {
    const int y = push(std::move(out));
    if (grad_enabled_)
      nodes_[std::size_t(y)].back = [this, y, a, fn]() { fn(y, a); };
    return y;
  }
  template <typename Fn>
  int unary_pair(DiffTensor<S> out, int a, int b, Fn&& fn) {
    const int y = push(std::move(out));
    if (grad_enabled_)
      nodes_[std::size_t(y)].back = [this, y, a, b, fn]() { fn(y, a, b); };
    return y;
  }

  std::vector<Node> nodes_;
  bool grad_enabled_ = true;
};

}  // namespace radioses::nn
