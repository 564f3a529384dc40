// Reverse-mode gradient tape over dense tensors.
//
// A Tape is built fresh for every mini-batch: each primitive appends a node
// holding its value and a closure that scatters the node's gradient into its
// inputs. Nodes are appended in topological order, so backward() is a single
// reverse sweep. Parameters enter the tape through watch(); after backward()
// their gradients are accumulated into Parameter::grad.
#pragma once

#include <cmath>
#include <cstddef>
#include <functional>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "dine/tensor.hpp"

namespace dine {

/// Learning-rate group of a parameter: trunk layers train at the base rate,
/// layers created for the task at ten times that.
enum class ParamGroup { kTrunk, kNew };

struct Parameter {
  std::string name;
  Tensor value;
  Tensor grad;
  ParamGroup group = ParamGroup::kNew;

  Parameter() = default;
  Parameter(std::string n, Tensor v, ParamGroup g)
      : name(std::move(n)), value(std::move(v)), grad(value.shape()), group(g) {}

  void zero_grad() {
    if (grad.shape() != value.shape()) grad = Tensor(value.shape());
    grad.fill(0.0);
  }
};

class Tape;

/// Handle to a node on a Tape.
struct Var {
  Tape* tape = nullptr;
  std::size_t id = 0;

  const Tensor& value() const;
  const Shape& shape() const { return value().shape(); }
  double scalar() const { return value()[0]; }
};

class Tape {
 public:
  /// With recording disabled the tape only evaluates values (eval-mode forward).
  explicit Tape(bool record = true) : record_(record) {}
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  bool recording() const { return record_; }

  Var constant(Tensor value) { return push(std::move(value), false, {}); }

  /// Leaf bound to a parameter; its gradient lands in `p.grad` on backward().
  Var watch(Parameter& p) {
    if (!record_) return constant(p.value);
    Var v = push(p.value, true, {});
    nodes_[v.id].param = &p;
    return v;
  }

  using Backward = std::function<void(Tape&, const Tensor& grad_out)>;

  /// Appends a node. `backward` is dropped when no input requires a gradient.
  Var push(Tensor value, bool requires_grad, Backward backward) {
    Node n;
    n.value = std::move(value);
    n.requires_grad = record_ && requires_grad;
    if (n.requires_grad) n.backward = std::move(backward);
    nodes_.push_back(std::move(n));
    return Var{this, nodes_.size() - 1};
  }

  bool requires_grad(Var v) const { return nodes_[v.id].requires_grad; }
  const Tensor& value(Var v) const { return nodes_[v.id].value; }

  /// Adds `g` into the gradient buffer of `v` (no-op for constants).
  void accumulate(Var v, const Tensor& g) {
    Node& n = nodes_[v.id];
    if (!n.requires_grad) return;
    if (n.grad.size() == 0)
      n.grad = g;
    else
      n.grad += g;
  }

  /// Reverse sweep from a scalar loss.
  void backward(Var loss) {
    if (loss.tape != this) throw ContractError("backward: variable belongs to another tape");
    if (value(loss).size() != 1) throw DimensionError("backward expects a scalar loss");
    if (!record_) throw ContractError("backward on a non-recording tape");
    accumulate(loss, Tensor(value(loss).shape(), 1.0));
    for (std::size_t i = loss.id + 1; i-- > 0;) {
      Node& n = nodes_[i];
      if (!n.requires_grad || n.grad.size() == 0) continue;
      if (n.param) n.param->grad += n.grad;
      // Closures only accumulate into earlier nodes; nodes_ does not grow here.
      if (n.backward) n.backward(*this, n.grad);
    }
  }

  std::size_t size() const { return nodes_.size(); }

 private:
  struct Node {
    Tensor value;
    Tensor grad;
    bool requires_grad = false;
    Backward backward;
    Parameter* param = nullptr;
  };

  bool record_;
  std::vector<Node> nodes_;
};

inline const Tensor& Var::value() const { return tape->value(*this); }

namespace ad {

namespace detail {
inline bool any_grad(std::initializer_list<Var> vs) {
  for (Var v : vs)
    if (v.tape->requires_grad(v)) return true;
  return false;
}
}  // namespace detail

inline Var stop_gradient(Var x) { return x.tape->constant(x.value()); }

inline Var matmul(Var a, Var b) {
  Tensor out = dine::matmul(a.value(), b.value());
  return a.tape->push(std::move(out), detail::any_grad({a, b}), [a, b](Tape& t, const Tensor& g) {
    if (t.requires_grad(a)) t.accumulate(a, dine::matmul(g, transpose(b.value())));
    if (t.requires_grad(b)) t.accumulate(b, dine::matmul(transpose(a.value()), g));
  });
}

/// x·Wᵀ + b for x: n×in, W: out×in, b: out.
inline Var linear(Var x, Var w, Var b) {
  const Tensor& xv = x.value();
  const Tensor& wv = w.value();
  require_matrix(xv, "linear");
  require_matrix(wv, "linear");
  const std::size_t n = xv.shape()[0], in = xv.shape()[1], out = wv.shape()[0];
  if (wv.shape()[1] != in)
    throw DimensionError("linear: input width " + std::to_string(in) + " vs weight " + shape_string(wv.shape()));
  if (b.value().size() != out) throw DimensionError("linear: bias length mismatch");
  Tensor y({n, out});
  for (std::size_t i = 0; i < n; ++i) {
    const double* xr = xv.data() + i * in;
    for (std::size_t o = 0; o < out; ++o) {
      const double* wr = wv.data() + o * in;
      double acc = b.value()[o];
      for (std::size_t p = 0; p < in; ++p) acc += xr[p] * wr[p];
      y(i, o) = acc;
    }
  }
  return x.tape->push(std::move(y), detail::any_grad({x, w, b}), [x, w, b, n, out](Tape& t, const Tensor& g) {
    if (t.requires_grad(x)) t.accumulate(x, dine::matmul(g, w.value()));
    if (t.requires_grad(w)) t.accumulate(w, dine::matmul(transpose(g), x.value()));
    if (t.requires_grad(b)) {
      Tensor gb(b.value().shape());
      for (std::size_t i = 0; i < n; ++i)
        for (std::size_t o = 0; o < out; ++o) gb[o] += g(i, o);
      t.accumulate(b, gb);
    }
  });
}

inline Var relu(Var x) {
  Tensor y = x.value();
  for (double& v : y.values()) v = v > 0.0 ? v : 0.0;
  return x.tape->push(std::move(y), detail::any_grad({x}), [x](Tape& t, const Tensor& g) {
    Tensor gx = g;
    const Tensor& xv = x.value();
    for (std::size_t i = 0; i < gx.size(); ++i)
      if (!(xv[i] > 0.0)) gx[i] = 0.0;
    t.accumulate(x, gx);
  });
}

struct BatchStats {
  std::vector<double> mean;
  std::vector<double> var;  // biased, as used for normalization
};

/// Training-mode batch normalization over the batch axis of an n×m matrix.
/// The batch statistics are written to `stats` when non-null.
inline Var batch_norm(Var x, Var gamma, Var beta, double eps, BatchStats* stats = nullptr) {
  const Tensor& xv = x.value();
  require_matrix(xv, "batch_norm");
  const std::size_t n = xv.shape()[0], m = xv.shape()[1];
  std::vector<double> mean(m, 0.0), var(m, 0.0);
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = 0; j < m; ++j) mean[j] += xv(i, j);
  for (double& v : mean) v /= static_cast<double>(n);
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = 0; j < m; ++j) {
      const double d = xv(i, j) - mean[j];
      var[j] += d * d;
    }
  for (double& v : var) v /= static_cast<double>(n);
  std::vector<double> inv_std(m);
  for (std::size_t j = 0; j < m; ++j) inv_std[j] = 1.0 / std::sqrt(var[j] + eps);
  Tensor xhat({n, m}), y({n, m});
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = 0; j < m; ++j) {
      xhat(i, j) = (xv(i, j) - mean[j]) * inv_std[j];
      y(i, j) = gamma.value()[j] * xhat(i, j) + beta.value()[j];
    }
  if (stats) *stats = BatchStats{mean, var};
  return x.tape->push(std::move(y), detail::any_grad({x, gamma, beta}),
                      [x, gamma, beta, xhat = std::move(xhat), inv_std = std::move(inv_std), n, m](
                          Tape& t, const Tensor& g) {
                        if (t.requires_grad(gamma) || t.requires_grad(beta)) {
                          Tensor gg(gamma.value().shape()), gb(beta.value().shape());
                          for (std::size_t i = 0; i < n; ++i)
                            for (std::size_t j = 0; j < m; ++j) {
                              gg[j] += g(i, j) * xhat(i, j);
                              gb[j] += g(i, j);
                            }
                          t.accumulate(gamma, gg);
                          t.accumulate(beta, gb);
                        }
                        if (t.requires_grad(x)) {
                          const double nn = static_cast<double>(n);
                          Tensor gx({n, m});
                          for (std::size_t j = 0; j < m; ++j) {
                            double sum_g = 0.0, sum_gx = 0.0;
                            for (std::size_t i = 0; i < n; ++i) {
                              const double gh = g(i, j) * gamma.value()[j];
                              sum_g += gh;
                              sum_gx += gh * xhat(i, j);
                            }
                            for (std::size_t i = 0; i < n; ++i) {
                              const double gh = g(i, j) * gamma.value()[j];
                              gx(i, j) = inv_std[j] / nn * (nn * gh - sum_g - xhat(i, j) * sum_gx);
                            }
                          }
                          t.accumulate(x, gx);
                        }
                      });
}

/// Inference-mode batch normalization with fixed statistics.
inline Var batch_norm_fixed(Var x, Var gamma, Var beta, std::span<const double> mean, std::span<const double> var,
                            double eps) {
  const Tensor& xv = x.value();
  require_matrix(xv, "batch_norm_fixed");
  const std::size_t n = xv.shape()[0], m = xv.shape()[1];
  if (mean.size() != m || var.size() != m) throw DimensionError("batch_norm_fixed: statistics width mismatch");
  std::vector<double> inv_std(m);
  for (std::size_t j = 0; j < m; ++j) inv_std[j] = 1.0 / std::sqrt(var[j] + eps);
  Tensor xhat({n, m}), y({n, m});
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = 0; j < m; ++j) {
      xhat(i, j) = (xv(i, j) - mean[j]) * inv_std[j];
      y(i, j) = gamma.value()[j] * xhat(i, j) + beta.value()[j];
    }
  return x.tape->push(std::move(y), detail::any_grad({x, gamma, beta}),
                      [x, gamma, beta, xhat = std::move(xhat), inv_std = std::move(inv_std), n, m](
                          Tape& t, const Tensor& g) {
                        Tensor gg(gamma.value().shape()), gb(beta.value().shape()), gx({n, m});
                        for (std::size_t i = 0; i < n; ++i)
                          for (std::size_t j = 0; j < m; ++j) {
                            gg[j] += g(i, j) * xhat(i, j);
                            gb[j] += g(i, j);
                            gx(i, j) = g(i, j) * gamma.value()[j] * inv_std[j];
                          }
                        t.accumulate(gamma, gg);
                        t.accumulate(beta, gb);
                        t.accumulate(x, gx);
                      });
}

/// Weight normalization: row k of the result is g_k · v_k / ||v_k||.
inline Var weight_norm(Var v, Var g) {
  const Tensor& vv = v.value();
  require_matrix(vv, "weight_norm");
  const std::size_t rows = vv.shape()[0], cols = vv.shape()[1];
  if (g.value().size() != rows) throw DimensionError("weight_norm: magnitude length mismatch");
  std::vector<double> norms(rows);
  Tensor w({rows, cols});
  for (std::size_t r = 0; r < rows; ++r) {
    double s = 0.0;
    for (double x : vv.row(r)) s += x * x;
    norms[r] = std::sqrt(s);
    if (!(norms[r] > 0.0)) throw ContractError("weight_norm: zero direction vector");
    for (std::size_t c = 0; c < cols; ++c) w(r, c) = g.value()[r] * vv(r, c) / norms[r];
  }
  return v.tape->push(std::move(w), detail::any_grad({v, g}),
                      [v, g, norms = std::move(norms), rows, cols](Tape& t, const Tensor& gw) {
                        const Tensor& vv = v.value();
                        Tensor gv({rows, cols}), gg(g.value().shape());
                        for (std::size_t r = 0; r < rows; ++r) {
                          double dot = 0.0;  // gw_r · v_r / ||v_r||
                          for (std::size_t c = 0; c < cols; ++c) dot += gw(r, c) * vv(r, c);
                          dot /= norms[r];
                          gg[r] = dot;
                          const double scale = g.value()[r] / norms[r];
                          for (std::size_t c = 0; c < cols; ++c)
                            gv(r, c) = scale * (gw(r, c) - dot * vv(r, c) / norms[r]);
                        }
                        t.accumulate(v, gv);
                        t.accumulate(g, gg);
                      });
}

/// Row-wise softmax over the trailing axis.
inline Var softmax(Var logits) {
  Tensor p = dine::softmax(logits.value());
  Tensor pv = p;
  return logits.tape->push(std::move(p), detail::any_grad({logits}), [logits, pv = std::move(pv)](Tape& t, const Tensor& g) {
    Tensor gx(pv.shape());
    for (std::size_t r = 0; r < pv.rows(); ++r) {
      auto pr = pv.row(r);
      auto gr = g.row(r);
      double dot = 0.0;
      for (std::size_t j = 0; j < pr.size(); ++j) dot += gr[j] * pr[j];
      auto out = gx.row(r);
      for (std::size_t j = 0; j < pr.size(); ++j) out[j] = pr[j] * (gr[j] - dot);
    }
    t.accumulate(logits, gx);
  });
}

/// Elementwise log(max(x, kLogClamp)); zero gradient inside the clamp.
inline Var log_clamped(Var x) {
  Tensor y = x.value();
  for (double& v : y.values()) v = clamped_log(v);
  return x.tape->push(std::move(y), detail::any_grad({x}), [x](Tape& t, const Tensor& g) {
    Tensor gx = g;
    const Tensor& xv = x.value();
    for (std::size_t i = 0; i < gx.size(); ++i) gx[i] = xv[i] > kLogClamp ? g[i] / xv[i] : 0.0;
    t.accumulate(x, gx);
  });
}

inline Var mul(Var a, Var b) {
  a.value().require_same_shape(b.value(), "mul");
  Tensor y = a.value();
  for (std::size_t i = 0; i < y.size(); ++i) y[i] *= b.value()[i];
  return a.tape->push(std::move(y), detail::any_grad({a, b}), [a, b](Tape& t, const Tensor& g) {
    if (t.requires_grad(a)) {
      Tensor ga = g;
      for (std::size_t i = 0; i < ga.size(); ++i) ga[i] *= b.value()[i];
      t.accumulate(a, ga);
    }
    if (t.requires_grad(b)) {
      Tensor gb = g;
      for (std::size_t i = 0; i < gb.size(); ++i) gb[i] *= a.value()[i];
      t.accumulate(b, gb);
    }
  });
}

inline Var add(Var a, Var b) {
  a.value().require_same_shape(b.value(), "add");
  Tensor y = a.value();
  y += b.value();
  return a.tape->push(std::move(y), detail::any_grad({a, b}), [a, b](Tape& t, const Tensor& g) {
    t.accumulate(a, g);
    t.accumulate(b, g);
  });
}

inline Var scale(Var a, double s) {
  Tensor y = a.value();
  y *= s;
  return a.tape->push(std::move(y), detail::any_grad({a}), [a, s](Tape& t, const Tensor& g) {
    Tensor ga = g;
    ga *= s;
    t.accumulate(a, ga);
  });
}

inline Var sub(Var a, Var b) { return add(a, scale(b, -1.0)); }

/// Sum of all entries, as a scalar of shape {1}.
inline Var sum(Var a) {
  double s = 0.0;
  for (double v : a.value().values()) s += v;
  return a.tape->push(Tensor({1}, s), detail::any_grad({a}), [a](Tape& t, const Tensor& g) {
    t.accumulate(a, Tensor(a.value().shape(), g[0]));
  });
}

inline Var mean(Var a) { return scale(sum(a), 1.0 / static_cast<double>(a.value().size())); }

/// Mean over the batch axis: n×K → 1×K.
inline Var mean_rows(Var a) {
  const Tensor& av = a.value();
  require_matrix(av, "mean_rows");
  const std::size_t n = av.shape()[0], k = av.shape()[1];
  Tensor y({1, k}, column_mean(av));
  return a.tape->push(std::move(y), detail::any_grad({a}), [a, n, k](Tape& t, const Tensor& g) {
    Tensor ga({n, k});
    for (std::size_t i = 0; i < n; ++i)
      for (std::size_t j = 0; j < k; ++j) ga(i, j) = g[j] / static_cast<double>(n);
    t.accumulate(a, ga);
  });
}

/// Sum of squares of all entries.
inline Var sum_squares(Var a) { return sum(mul(a, a)); }

}  // namespace ad
}  // namespace dine
