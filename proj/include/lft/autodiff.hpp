#pragma once

#include <Eigen/Core>

#include <cmath>
#include <functional>
#include <string>
#include <vector>

#include "lft/error.hpp"
#include "lft/tensor.hpp"

namespace lft {

// Reverse-mode gradient tape.
//
// Nodes are appended in execution order, so the node list is always a valid
// topological order. Parameters are bound by pointer: backward() adds the
// accumulated gradient into the bound Tensor's grad buffer (callers zero it
// between steps). With recording disabled the tape only evaluates values, which
// is what the samplers use.
class Tape {
 public:
  struct Var {
    std::size_t id = 0;
  };

  explicit Tape(bool recording = true) : recording_(recording) {}

  bool recording() const { return recording_; }

  Var constant(Tensor value) { return push(std::move(value), false); }

  // Non-owning constant; `value` must outlive the tape.
  Var constant_ref(const Tensor& value) {
    Node node;
    node.external = &value;
    nodes_.push_back(std::move(node));
    return Var{nodes_.size() - 1};
  }

  // Leaf whose gradient flows into `param.grad()`. `param` must outlive the tape.
  Var parameter(Tensor& param) {
    Node node;
    node.external = &param;
    node.param = &param;
    node.needs_grad = recording_;
    nodes_.push_back(std::move(node));
    return Var{nodes_.size() - 1};
  }

  const Tensor& value(Var v) const { return nodes_.at(v.id).value(); }
  bool needs_grad(Var v) const { return nodes_.at(v.id).needs_grad; }

  // Gradient of the last backward() target w.r.t. `v` (zeros if unreached).
  std::vector<double> grad(Var v) const {
    const Node& n = nodes_.at(v.id);
    if (n.grad.empty()) {
      return std::vector<double>(n.value().size(), 0.0);
    }
    return n.grad;
  }

  std::size_t size() const { return nodes_.size(); }

  // Appends a computed node. `backward` receives (tape, upstream gradient) and
  // must add into the inputs' buffers via accumulate().
  Var push(Tensor value, bool needs_grad,
           std::function<void(Tape&, const std::vector<double>&)> backward = {}) {
    Node node;
    node.owned = std::move(value);
    node.needs_grad = recording_ && needs_grad;
    if (node.needs_grad) {
      node.backward = std::move(backward);
    }
    nodes_.push_back(std::move(node));
    return Var{nodes_.size() - 1};
  }

  std::vector<double>& grad_buffer(Var v) {
    Node& n = nodes_.at(v.id);
    if (n.grad.empty()) {
      n.grad.assign(n.value().size(), 0.0);
    }
    return n.grad;
  }

  void backward(Var loss) {
    if (!recording_) {
      throw contract_error("backward() on a non-recording tape");
    }
    if (value(loss).size() != 1) {
      throw contract_error("backward() requires a scalar loss, got shape " +
                           shape_string(value(loss).shape()));
    }
    for (auto& n : nodes_) {
      n.grad.clear();
    }
    grad_buffer(loss)[0] = 1.0;
    for (std::size_t i = loss.id + 1; i-- > 0;) {
      Node& n = nodes_[i];
      if (!n.needs_grad || n.grad.empty()) {
        continue;
      }
      if (n.backward) {
        // Callbacks only touch buffers of earlier nodes.
        std::vector<double> upstream = std::move(n.grad);
        n.backward(*this, upstream);
        n.grad = std::move(upstream);
      }
      if (n.param != nullptr) {
        auto& g = n.param->grad();
        for (std::size_t j = 0; j < g.size(); ++j) {
          g[j] += n.grad[j];
        }
      }
    }
  }

 private:
  struct Node {
    Tensor owned;
    const Tensor* external = nullptr;
    Tensor* param = nullptr;
    bool needs_grad = false;
    std::vector<double> grad;
    std::function<void(Tape&, const std::vector<double>&)> backward;

    const Tensor& value() const { return external ? *external : owned; }
  };

  bool recording_;
  std::vector<Node> nodes_;
};

using Var = Tape::Var;

namespace detail {

using RowMat = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using MapMat = Eigen::Map<RowMat>;
using CMapMat = Eigen::Map<const RowMat>;

inline CMapMat as_matrix(const Tensor& t) {
  return CMapMat(t.data().data(), static_cast<Eigen::Index>(t.rows()),
                 static_cast<Eigen::Index>(t.cols()));
}
inline CMapMat as_matrix(const std::vector<double>& v, std::size_t rows, std::size_t cols) {
  return CMapMat(v.data(), static_cast<Eigen::Index>(rows), static_cast<Eigen::Index>(cols));
}
inline MapMat as_matrix_mut(std::vector<double>& v, std::size_t rows, std::size_t cols) {
  return MapMat(v.data(), static_cast<Eigen::Index>(rows), static_cast<Eigen::Index>(cols));
}

inline void add_into(std::vector<double>& dst, const std::vector<double>& src) {
  for (std::size_t i = 0; i < dst.size(); ++i) {
    dst[i] += src[i];
  }
}

// For `b` broadcast onto `a`: b's shape must equal a's shape with some suffix
// replaced by ones. Returns the number of a-elements per b-element.
inline std::size_t broadcast_inner(const Shape& a, const Shape& b, const char* op) {
  if (a == b) {
    return 1;
  }
  if (a.size() == b.size()) {
    std::size_t split = b.size();
    while (split > 0 && b[split - 1] == 1) {
      --split;
    }
    bool prefix_ok = true;
    for (std::size_t i = 0; i < split; ++i) {
      prefix_ok = prefix_ok && a[i] == b[i];
    }
    if (prefix_ok) {
      std::size_t inner = 1;
      for (std::size_t i = split; i < a.size(); ++i) {
        inner *= a[i];
      }
      return inner;
    }
  }
  throw dimension_error(std::string(op) + ": shapes " + shape_string(a) + " and " +
                        shape_string(b) + " do not agree");
}

inline double sigmoid(double x) { return 1.0 / (1.0 + std::exp(-x)); }

}  // namespace detail

// ---------------------------------------------------------------------------
// Ops

inline Var matmul(Tape& tape, Var a, Var b) {
  const Tensor& ta = tape.value(a);
  const Tensor& tb = tape.value(b);
  if (ta.rank() != 2 || tb.rank() != 2 || ta.cols() != tb.rows()) {
    throw dimension_error("matmul: " + shape_string(ta.shape()) + " x " + shape_string(tb.shape()));
  }
  const std::size_t m = ta.rows(), k = ta.cols(), n = tb.cols();
  Tensor out = Tensor::matrix(m, n);
  detail::as_matrix_mut(out.values(), m, n).noalias() = detail::as_matrix(ta) * detail::as_matrix(tb);
  return tape.push(std::move(out), tape.needs_grad(a) || tape.needs_grad(b),
                   [a, b, m, k, n](Tape& t, const std::vector<double>& g) {
                     const auto dc = detail::as_matrix(g, m, n);
                     if (t.needs_grad(a)) {
                       auto da = detail::as_matrix_mut(t.grad_buffer(a), m, k);
                       da.noalias() += dc * detail::as_matrix(t.value(b)).transpose();
                     }
                     if (t.needs_grad(b)) {
                       auto db = detail::as_matrix_mut(t.grad_buffer(b), k, n);
                       db.noalias() += detail::as_matrix(t.value(a)).transpose() * dc;
                     }
                   });
}

// a + b, with b optionally broadcast over trailing singleton dims of a.
inline Var add(Tape& tape, Var a, Var b) {
  const Tensor& ta = tape.value(a);
  const Tensor& tb = tape.value(b);
  const std::size_t inner = detail::broadcast_inner(ta.shape(), tb.shape(), "add");
  Tensor out = ta;
  for (std::size_t i = 0; i < out.size(); ++i) {
    out[i] += tb[i / inner];
  }
  return tape.push(std::move(out), tape.needs_grad(a) || tape.needs_grad(b),
                   [a, b, inner](Tape& t, const std::vector<double>& g) {
                     if (t.needs_grad(a)) {
                       detail::add_into(t.grad_buffer(a), g);
                     }
                     if (t.needs_grad(b)) {
                       auto& db = t.grad_buffer(b);
                       for (std::size_t i = 0; i < g.size(); ++i) {
                         db[i / inner] += g[i];
                       }
                     }
                   });
}

// Elementwise product, b optionally broadcast like add().
inline Var mul(Tape& tape, Var a, Var b) {
  const Tensor& ta = tape.value(a);
  const Tensor& tb = tape.value(b);
  const std::size_t inner = detail::broadcast_inner(ta.shape(), tb.shape(), "mul");
  Tensor out = ta;
  for (std::size_t i = 0; i < out.size(); ++i) {
    out[i] *= tb[i / inner];
  }
  return tape.push(std::move(out), tape.needs_grad(a) || tape.needs_grad(b),
                   [a, b, inner](Tape& t, const std::vector<double>& g) {
                     const Tensor& va = t.value(a);
                     const Tensor& vb = t.value(b);
                     if (t.needs_grad(a)) {
                       auto& da = t.grad_buffer(a);
                       for (std::size_t i = 0; i < g.size(); ++i) {
                         da[i] += g[i] * vb[i / inner];
                       }
                     }
                     if (t.needs_grad(b)) {
                       auto& db = t.grad_buffer(b);
                       for (std::size_t i = 0; i < g.size(); ++i) {
                         db[i / inner] += g[i] * va[i];
                       }
                     }
                   });
}

inline Var scale(Tape& tape, Var a, double s) {
  Tensor out = tape.value(a);
  for (double& v : out.values()) {
    v *= s;
  }
  return tape.push(std::move(out), tape.needs_grad(a), [a, s](Tape& t, const std::vector<double>& g) {
    auto& da = t.grad_buffer(a);
    for (std::size_t i = 0; i < g.size(); ++i) {
      da[i] += s * g[i];
    }
  });
}

// x * sigmoid(x)
inline Var silu(Tape& tape, Var a) {
  Tensor out = tape.value(a);
  for (double& v : out.values()) {
    v *= detail::sigmoid(v);
  }
  return tape.push(std::move(out), tape.needs_grad(a), [a](Tape& t, const std::vector<double>& g) {
    const Tensor& x = t.value(a);
    auto& da = t.grad_buffer(a);
    for (std::size_t i = 0; i < g.size(); ++i) {
      const double s = detail::sigmoid(x[i]);
      da[i] += g[i] * s * (1.0 + x[i] * (1.0 - s));
    }
  });
}

inline Var sum(Tape& tape, Var a) {
  const Tensor& ta = tape.value(a);
  double total = 0.0;
  for (double v : ta.data()) {
    total += v;
  }
  return tape.push(Tensor::scalar(total), tape.needs_grad(a),
                   [a](Tape& t, const std::vector<double>& g) {
                     for (double& d : t.grad_buffer(a)) {
                       d += g[0];
                     }
                   });
}

// weight * mean((a - target)^2), target held constant.
inline Var weighted_mse(Tape& tape, Var a, const Tensor& target, double weight) {
  const Tensor& ta = tape.value(a);
  if (ta.shape() != target.shape()) {
    throw dimension_error("weighted_mse: " + shape_string(ta.shape()) + " vs " +
                          shape_string(target.shape()));
  }
  const double n = static_cast<double>(ta.size());
  double acc = 0.0;
  for (std::size_t i = 0; i < ta.size(); ++i) {
    const double d = ta[i] - target[i];
    acc += d * d;
  }
  return tape.push(Tensor::scalar(weight * acc / n), tape.needs_grad(a),
                   [a, target, weight, n](Tape& t, const std::vector<double>& g) {
                     const Tensor& x = t.value(a);
                     auto& da = t.grad_buffer(a);
                     const double c = 2.0 * weight * g[0] / n;
                     for (std::size_t i = 0; i < da.size(); ++i) {
                       da[i] += c * (x[i] - target[i]);
                     }
                   });
}

// Stacks rank-2 operands along rows (channel concatenation).
inline Var concat_rows(Tape& tape, Var a, Var b) {
  const Tensor& ta = tape.value(a);
  const Tensor& tb = tape.value(b);
  if (ta.rank() != 2 || tb.rank() != 2 || ta.cols() != tb.cols()) {
    throw dimension_error("concat_rows: " + shape_string(ta.shape()) + " and " +
                          shape_string(tb.shape()));
  }
  Tensor out = Tensor::matrix(ta.rows() + tb.rows(), ta.cols());
  std::copy(ta.data().begin(), ta.data().end(), out.values().begin());
  std::copy(tb.data().begin(), tb.data().end(), out.values().begin() + static_cast<std::ptrdiff_t>(ta.size()));
  const std::size_t split = ta.size();
  return tape.push(std::move(out), tape.needs_grad(a) || tape.needs_grad(b),
                   [a, b, split](Tape& t, const std::vector<double>& g) {
                     if (t.needs_grad(a)) {
                       auto& da = t.grad_buffer(a);
                       for (std::size_t i = 0; i < da.size(); ++i) {
                         da[i] += g[i];
                       }
                     }
                     if (t.needs_grad(b)) {
                       auto& db = t.grad_buffer(b);
                       for (std::size_t i = 0; i < db.size(); ++i) {
                         db[i] += g[split + i];
                       }
                     }
                   });
}

// Same-padded dilated 1-D convolution along columns.
// x: [Cin x T], w: [K x Cout x Cin] with K odd. out[:, t] = sum_k w_k x[:, t + (k - K/2) d].
inline Var conv1d(Tape& tape, Var x, Var w, std::size_t dilation) {
  const Tensor& tx = tape.value(x);
  const Tensor& tw = tape.value(w);
  if (tx.rank() != 2 || tw.rank() != 3 || tw.dim(2) != tx.rows() || tw.dim(0) % 2 == 0) {
    throw dimension_error("conv1d: input " + shape_string(tx.shape()) + ", kernel " +
                          shape_string(tw.shape()));
  }
  const std::size_t taps = tw.dim(0), cout = tw.dim(1), cin = tw.dim(2), len = tx.cols();
  const auto half = static_cast<std::ptrdiff_t>(taps / 2);
  const auto T = static_cast<std::ptrdiff_t>(len);

  // Visits (tap k, output range [o0, o0+n), input offset s) for each overlapping window.
  auto for_each_tap = [=](auto&& fn) {
    for (std::size_t k = 0; k < taps; ++k) {
      const std::ptrdiff_t s = (static_cast<std::ptrdiff_t>(k) - half) * static_cast<std::ptrdiff_t>(dilation);
      const std::ptrdiff_t o0 = std::max<std::ptrdiff_t>(0, -s);
      const std::ptrdiff_t o1 = std::min<std::ptrdiff_t>(T, T - s);
      if (o1 > o0) {
        fn(k, o0, o1 - o0, s);
      }
    }
  };

  Tensor out = Tensor::matrix(cout, len);
  {
    auto mo = detail::as_matrix_mut(out.values(), cout, len);
    const auto mx = detail::as_matrix(tx);
    for_each_tap([&](std::size_t k, std::ptrdiff_t o0, std::ptrdiff_t n, std::ptrdiff_t s) {
      const detail::CMapMat wk(tw.data().data() + k * cout * cin, static_cast<Eigen::Index>(cout),
                               static_cast<Eigen::Index>(cin));
      mo.middleCols(o0, n).noalias() += wk * mx.middleCols(o0 + s, n);
    });
  }
  return tape.push(std::move(out), tape.needs_grad(x) || tape.needs_grad(w),
                   [=](Tape& t, const std::vector<double>& g) {
                     const auto dout = detail::as_matrix(g, cout, len);
                     const Tensor& vx = t.value(x);
                     const Tensor& vw = t.value(w);
                     const auto mx = detail::as_matrix(vx);
                     if (t.needs_grad(x)) {
                       auto dx = detail::as_matrix_mut(t.grad_buffer(x), cin, len);
                       for_each_tap([&](std::size_t k, std::ptrdiff_t o0, std::ptrdiff_t n, std::ptrdiff_t s) {
                         const detail::CMapMat wk(vw.data().data() + k * cout * cin,
                                                  static_cast<Eigen::Index>(cout), static_cast<Eigen::Index>(cin));
                         dx.middleCols(o0 + s, n).noalias() += wk.transpose() * dout.middleCols(o0, n);
                       });
                     }
                     if (t.needs_grad(w)) {
                       auto& dw = t.grad_buffer(w);
                       for_each_tap([&](std::size_t k, std::ptrdiff_t o0, std::ptrdiff_t n, std::ptrdiff_t s) {
                         detail::MapMat dwk(dw.data() + k * cout * cin, static_cast<Eigen::Index>(cout),
                                            static_cast<Eigen::Index>(cin));
                         dwk.noalias() += dout.middleCols(o0, n) * mx.middleCols(o0 + s, n).transpose();
                       });
                     }
                   });
}

// Applies a linear operator given as forward and adjoint callbacks (same shape in and out).
inline Var linear_map(Tape& tape, Var a, std::function<Tensor(const Tensor&)> forward,
                      std::function<Tensor(const Tensor&)> adjoint) {
  Tensor out = forward(tape.value(a));
  const Shape in_shape = tape.value(a).shape();
  return tape.push(std::move(out), tape.needs_grad(a),
                   [a, in_shape, adjoint = std::move(adjoint)](Tape& t, const std::vector<double>& g) {
                     const Tensor upstream(t.value(a).shape(), g);
                     const Tensor back = adjoint(upstream);
                     if (back.shape() != in_shape) {
                       throw dimension_error("linear_map: adjoint returned " + shape_string(back.shape()));
                     }
                     detail::add_into(t.grad_buffer(a), back.values());
                   });
}

}  // namespace lft
