#pragma once

#include <cmath>
#include <functional>
#include <map>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "anomattr/matrix.hpp"

namespace anomattr {

// Named collection of parameter tensors.
using Params = std::map<std::string, Matrix>;

enum class Activation { Relu, Sigmoid, Identity };

inline double sigmoid(double x) {
  return x >= 0.0 ? 1.0 / (1.0 + std::exp(-x)) : std::exp(x) / (1.0 + std::exp(x));
}

// ---------------------------------------------------------------------------
// Reverse-mode autodiff on a tape of matrix-valued nodes. A Graph is built
// per loss evaluation; backward() walks the tape in reverse accumulating
// gradients into every differentiable leaf.
// ---------------------------------------------------------------------------

struct Var {
  int id = -1;
};

class Graph {
 public:
  Var constant(Matrix v) { return emit(std::move(v), false); }

  Var param(Matrix v) { return emit(std::move(v), true); }

  const Matrix& value(Var v) const { return nodes_[v.id].value; }
  const Matrix& grad(Var v) const { return nodes_[v.id].grad; }
  double scalar(Var v) const { return nodes_[v.id].value.data[0]; }
  bool depends_on_params(Var v) const { return nodes_[v.id].needs_grad; }

  Var add(Var a, Var b) {
    const Matrix &A = value(a), &B = value(b);
    require_same_shape(A, B, "add");
    Matrix out = A;
    for (std::size_t i = 0; i < out.size(); ++i) out.data[i] += B.data[i];
    Var v = emit(std::move(out), needs(a) || needs(b));
    attach(v, [self = v.id, ai = a.id, bi = b.id](Graph& g) {
      const Matrix& G = g.nodes_[self].grad;
      g.accumulate(ai, G);
      g.accumulate(bi, G);
    });
    return v;
  }

  Var sub(Var a, Var b) {
    const Matrix &A = value(a), &B = value(b);
    require_same_shape(A, B, "sub");
    Matrix out = A;
    for (std::size_t i = 0; i < out.size(); ++i) out.data[i] -= B.data[i];
    Var v = emit(std::move(out), needs(a) || needs(b));
    attach(v, [self = v.id, ai = a.id, bi = b.id](Graph& g) {
      const Matrix& G = g.nodes_[self].grad;
      g.accumulate(ai, G);
      if (g.nodes_[bi].needs_grad) {
        Matrix& gb = g.nodes_[bi].grad;
        for (std::size_t i = 0; i < G.size(); ++i) gb.data[i] -= G.data[i];
      }
    });
    return v;
  }

  // elementwise product
  Var mul(Var a, Var b) {
    const Matrix &A = value(a), &B = value(b);
    require_same_shape(A, B, "mul");
    Matrix out = A;
    for (std::size_t i = 0; i < out.size(); ++i) out.data[i] *= B.data[i];
    Var v = emit(std::move(out), needs(a) || needs(b));
    attach(v, [self = v.id, ai = a.id, bi = b.id](Graph& g) {
      const Matrix& G = g.nodes_[self].grad;
      if (g.nodes_[ai].needs_grad) {
        Matrix& ga = g.nodes_[ai].grad;
        const Matrix& B2 = g.nodes_[bi].value;
        for (std::size_t i = 0; i < G.size(); ++i) ga.data[i] += G.data[i] * B2.data[i];
      }
      if (g.nodes_[bi].needs_grad) {
        Matrix& gb = g.nodes_[bi].grad;
        const Matrix& A2 = g.nodes_[ai].value;
        for (std::size_t i = 0; i < G.size(); ++i) gb.data[i] += G.data[i] * A2.data[i];
      }
    });
    return v;
  }

  // a (m x n) plus column vector b (m x 1) broadcast across columns
  Var add_bias(Var a, Var b) {
    const Matrix &A = value(a), &B = value(b);
    if (B.cols != 1 || B.rows != A.rows) {
      fail(ErrorKind::ShapeMismatch, "add_bias: " + shape_str(A) + " + " + shape_str(B));
    }
    Matrix out = A;
    for (int i = 0; i < A.rows; ++i) {
      const double bi = B.data[i];
      for (int j = 0; j < A.cols; ++j) out(i, j) += bi;
    }
    Var v = emit(std::move(out), needs(a) || needs(b));
    attach(v, [self = v.id, ai = a.id, bi = b.id](Graph& g) {
      const Matrix& G = g.nodes_[self].grad;
      g.accumulate(ai, G);
      if (g.nodes_[bi].needs_grad) {
        Matrix& gb = g.nodes_[bi].grad;
        for (int i = 0; i < G.rows; ++i) {
          double s = 0.0;
          for (int j = 0; j < G.cols; ++j) s += G(i, j);
          gb.data[i] += s;
        }
      }
    });
    return v;
  }

  Var scale(Var a, double c) {
    Matrix out = value(a);
    for (double& x : out.data) x *= c;
    Var v = emit(std::move(out), needs(a));
    attach(v, [self = v.id, ai = a.id, c](Graph& g) {
      const Matrix& G = g.nodes_[self].grad;
      Matrix& ga = g.nodes_[ai].grad;
      for (std::size_t i = 0; i < G.size(); ++i) ga.data[i] += c * G.data[i];
    });
    return v;
  }

  Var add_scalar(Var a, double c) {
    Matrix out = value(a);
    for (double& x : out.data) x += c;
    Var v = emit(std::move(out), needs(a));
    attach(v, [self = v.id, ai = a.id](Graph& g) { g.accumulate(ai, g.nodes_[self].grad); });
    return v;
  }

  Var matmul(Var a, Var b) {
    Matrix out = anomattr::matmul(value(a), value(b));
    Var v = emit(std::move(out), needs(a) || needs(b));
    attach(v, [self = v.id, ai = a.id, bi = b.id](Graph& g) {
      const Matrix& G = g.nodes_[self].grad;
      if (g.nodes_[ai].needs_grad) acc_matmul_nt(g.nodes_[ai].grad, G, g.nodes_[bi].value);
      if (g.nodes_[bi].needs_grad) acc_matmul_tn(g.nodes_[bi].grad, g.nodes_[ai].value, G);
    });
    return v;
  }

  Var sigmoid_op(Var a) {
    Matrix out = value(a);
    for (double& x : out.data) x = anomattr::sigmoid(x);
    Var v = emit(std::move(out), needs(a));
    attach(v, [self = v.id, ai = a.id](Graph& g) {
      const Matrix &G = g.nodes_[self].grad, &Y = g.nodes_[self].value;
      Matrix& ga = g.nodes_[ai].grad;
      for (std::size_t i = 0; i < G.size(); ++i)
        ga.data[i] += G.data[i] * Y.data[i] * (1.0 - Y.data[i]);
    });
    return v;
  }

  Var tanh_op(Var a) {
    Matrix out = value(a);
    for (double& x : out.data) x = std::tanh(x);
    Var v = emit(std::move(out), needs(a));
    attach(v, [self = v.id, ai = a.id](Graph& g) {
      const Matrix &G = g.nodes_[self].grad, &Y = g.nodes_[self].value;
      Matrix& ga = g.nodes_[ai].grad;
      for (std::size_t i = 0; i < G.size(); ++i)
        ga.data[i] += G.data[i] * (1.0 - Y.data[i] * Y.data[i]);
    });
    return v;
  }

  Var relu_op(Var a) {
    Matrix out = value(a);
    for (double& x : out.data) x = x > 0.0 ? x : 0.0;
    Var v = emit(std::move(out), needs(a));
    attach(v, [self = v.id, ai = a.id](Graph& g) {
      const Matrix &G = g.nodes_[self].grad, &X = g.nodes_[ai].value;
      Matrix& ga = g.nodes_[ai].grad;
      for (std::size_t i = 0; i < G.size(); ++i)
        if (X.data[i] > 0.0) ga.data[i] += G.data[i];
    });
    return v;
  }

  Var exp_op(Var a) {
    Matrix out = value(a);
    for (double& x : out.data) x = std::exp(x);
    Var v = emit(std::move(out), needs(a));
    attach(v, [self = v.id, ai = a.id](Graph& g) {
      const Matrix &G = g.nodes_[self].grad, &Y = g.nodes_[self].value;
      Matrix& ga = g.nodes_[ai].grad;
      for (std::size_t i = 0; i < G.size(); ++i) ga.data[i] += G.data[i] * Y.data[i];
    });
    return v;
  }

  Var sum_all(Var a) {
    double s = 0.0;
    for (double x : value(a).data) s += x;
    Matrix out(1, 1, s);
    Var v = emit(std::move(out), needs(a));
    attach(v, [self = v.id, ai = a.id](Graph& g) {
      const double gs = g.nodes_[self].grad.data[0];
      Matrix& ga = g.nodes_[ai].grad;
      for (double& x : ga.data) x += gs;
    });
    return v;
  }

  Var slice_rows(Var a, int r0, int count) {
    const Matrix& A = value(a);
    if (r0 < 0 || r0 + count > A.rows) {
      fail(ErrorKind::ShapeMismatch, "slice_rows outside " + shape_str(A));
    }
    Matrix out(count, A.cols);
    std::copy(A.data.begin() + static_cast<std::ptrdiff_t>(r0) * A.cols,
              A.data.begin() + static_cast<std::ptrdiff_t>(r0 + count) * A.cols,
              out.data.begin());
    Var v = emit(std::move(out), needs(a));
    attach(v, [self = v.id, ai = a.id, r0](Graph& g) {
      const Matrix& G = g.nodes_[self].grad;
      Matrix& ga = g.nodes_[ai].grad;
      double* dst = &ga.data[static_cast<std::size_t>(r0) * ga.cols];
      for (std::size_t i = 0; i < G.size(); ++i) dst[i] += G.data[i];
    });
    return v;
  }

  Var concat_rows(const std::vector<Var>& parts) {
    require(!parts.empty(), ErrorKind::ShapeMismatch, "concat_rows of nothing");
    const int cols = value(parts[0]).cols;
    int rows = 0;
    bool ng = false;
    for (Var p : parts) {
      require(value(p).cols == cols, ErrorKind::ShapeMismatch, "concat_rows: column mismatch");
      rows += value(p).rows;
      ng = ng || needs(p);
    }
    Matrix out(rows, cols);
    std::size_t off = 0;
    for (Var p : parts) {
      const Matrix& P = value(p);
      std::copy(P.data.begin(), P.data.end(), out.data.begin() + static_cast<std::ptrdiff_t>(off));
      off += P.size();
    }
    std::vector<int> ids(parts.size());
    for (std::size_t i = 0; i < parts.size(); ++i) ids[i] = parts[i].id;
    Var v = emit(std::move(out), ng);
    attach(v, [self = v.id, ids](Graph& g) {
      const Matrix& G = g.nodes_[self].grad;
      std::size_t off2 = 0;
      for (int id : ids) {
        Matrix& gp = g.nodes_[id].grad;
        if (g.nodes_[id].needs_grad) {
          for (std::size_t i = 0; i < g.nodes_[id].value.size(); ++i)
            gp.data[i] += G.data[off2 + i];
        }
        off2 += g.nodes_[id].value.size();
      }
    });
    return v;
  }

  // Numerically stable weighted binary cross-entropy on logits:
  //   sum_i w_i * (max(x_i, 0) - y_i * x_i + log(1 + exp(-|x_i|)))
  // with d/dx_i = w_i * (sigmoid(x_i) - y_i).
  Var bce_with_logits(Var logits, const Matrix& targets, const Matrix& weights) {
    const Matrix& X = value(logits);
    require_same_shape(X, targets, "bce_with_logits targets");
    require_same_shape(X, weights, "bce_with_logits weights");
    double loss = 0.0;
    for (std::size_t i = 0; i < X.size(); ++i) {
      const double x = X.data[i];
      loss += weights.data[i] *
              (std::max(x, 0.0) - targets.data[i] * x + std::log1p(std::exp(-std::abs(x))));
    }
    Var v = emit(Matrix(1, 1, loss), needs(logits));
    attach(v, [self = v.id, xi = logits.id, targets, weights](Graph& g) {
      const double gs = g.nodes_[self].grad.data[0];
      const Matrix& X2 = g.nodes_[xi].value;
      Matrix& gx = g.nodes_[xi].grad;
      for (std::size_t i = 0; i < X2.size(); ++i) {
        gx.data[i] += gs * weights.data[i] * (anomattr::sigmoid(X2.data[i]) - targets.data[i]);
      }
    });
    return v;
  }

  void backward(Var loss) {
    const Matrix& L = value(loss);
    require(L.rows == 1 && L.cols == 1, ErrorKind::ShapeMismatch, "backward needs a scalar");
    require(nodes_[loss.id].needs_grad, ErrorKind::InvalidConfig,
            "loss does not depend on any parameter");
    for (int i = 0; i <= loss.id; ++i) {
      if (nodes_[i].needs_grad) {
        nodes_[i].grad = Matrix(nodes_[i].value.rows, nodes_[i].value.cols);
      }
    }
    nodes_[loss.id].grad.data[0] = 1.0;
    for (int i = loss.id; i >= 0; --i) {
      if (nodes_[i].needs_grad && nodes_[i].backprop) nodes_[i].backprop(*this);
    }
  }

 private:
  struct Node {
    Matrix value;
    Matrix grad;
    bool needs_grad = false;
    std::function<void(Graph&)> backprop;
  };

  bool needs(Var v) const { return nodes_[v.id].needs_grad; }

  Var emit(Matrix value, bool needs_grad) {
    nodes_.push_back(Node{std::move(value), Matrix(), needs_grad, nullptr});
    return Var{static_cast<int>(nodes_.size() - 1)};
  }

  template <typename F>
  void attach(Var v, F&& fn) {
    if (nodes_[v.id].needs_grad) nodes_[v.id].backprop = std::forward<F>(fn);
  }

  void accumulate(int id, const Matrix& g) {
    if (!nodes_[id].needs_grad) return;
    Matrix& dst = nodes_[id].grad;
    for (std::size_t i = 0; i < g.size(); ++i) dst.data[i] += g.data[i];
  }

  std::vector<Node> nodes_;
};

// ---------------------------------------------------------------------------
// Plain (tape-free) forward passes, used for scoring and as the reference the
// tape path is tested against.
// ---------------------------------------------------------------------------

inline Matrix apply_activation(Matrix m, Activation act) {
  switch (act) {
    case Activation::Relu:
      for (double& x : m.data) x = x > 0.0 ? x : 0.0;
      break;
    case Activation::Sigmoid:
      for (double& x : m.data) x = sigmoid(x);
      break;
    case Activation::Identity:
      break;
  }
  return m;
}

// activation(W x + b); x may be a batch (columns are instances)
inline Matrix dense_forward(const Matrix& W, const Matrix& b, const Matrix& x, Activation act) {
  Matrix y = matmul(W, x);
  if (b.rows != y.rows || b.cols != 1) {
    fail(ErrorKind::ShapeMismatch, "dense bias " + shape_str(b) + " against " + shape_str(y));
  }
  for (int i = 0; i < y.rows; ++i)
    for (int j = 0; j < y.cols; ++j) y(i, j) += b.data[i];
  return apply_activation(std::move(y), act);
}

// Gate order in the stacked matrices is [input, forget, candidate, output].
struct LstmParams {
  Matrix W;  // 4H x d
  Matrix U;  // 4H x H
  Matrix b;  // 4H x 1

  int hidden() const { return U.cols; }
  int input() const { return W.cols; }
};

// Conventional init; the forget-gate bias starts at +1.
inline LstmParams init_lstm(int input_dim, int hidden, Rng& rng) {
  LstmParams p;
  p.W = Matrix(4 * hidden, input_dim);
  p.U = Matrix(4 * hidden, hidden);
  p.b = Matrix(4 * hidden, 1);
  const double wlim = std::sqrt(6.0 / static_cast<double>(input_dim + hidden));
  const double ulim = std::sqrt(6.0 / static_cast<double>(hidden + hidden));
  for (double& x : p.W.data) x = rng.uniform(-wlim, wlim);
  for (double& x : p.U.data) x = rng.uniform(-ulim, ulim);
  for (int i = hidden; i < 2 * hidden; ++i) p.b.data[i] = 1.0;
  return p;
}

struct LstmState {
  Matrix h;
  Matrix c;
};

// One step of the standard LSTM recurrence on a batch (columns = instances).
inline LstmState lstm_step(const LstmParams& p, const Matrix& x, const LstmState& prev) {
  const int H = p.hidden();
  Matrix pre = matmul(p.W, x);
  acc_matmul(pre, p.U, prev.h);
  for (int i = 0; i < pre.rows; ++i)
    for (int j = 0; j < pre.cols; ++j) pre(i, j) += p.b.data[i];

  LstmState next{Matrix(H, x.cols), Matrix(H, x.cols)};
  for (int i = 0; i < H; ++i) {
    for (int j = 0; j < x.cols; ++j) {
      const double gi = sigmoid(pre(i, j));
      const double gf = sigmoid(pre(H + i, j));
      const double gg = std::tanh(pre(2 * H + i, j));
      const double go = sigmoid(pre(3 * H + i, j));
      const double c = gf * prev.c(i, j) + gi * gg;
      next.c(i, j) = c;
      next.h(i, j) = go * std::tanh(c);
    }
  }
  return next;
}

struct LstmOutput {
  std::vector<Matrix> hidden;  // per step, H x B
  Matrix h;                    // final hidden
  Matrix c;                    // final cell
};

// Runs the recurrence over a sequence; initial state defaults to zeros.
inline LstmOutput lstm_forward(const LstmParams& p, const std::vector<Matrix>& xs,
                               const LstmState* init = nullptr) {
  require(!xs.empty(), ErrorKind::ShapeMismatch, "lstm_forward on empty sequence");
  const int B = xs[0].cols;
  LstmState st = init ? *init : LstmState{Matrix(p.hidden(), B), Matrix(p.hidden(), B)};
  LstmOutput out;
  out.hidden.reserve(xs.size());
  for (const Matrix& x : xs) {
    if (x.rows != p.input()) {
      fail(ErrorKind::ShapeMismatch,
           "lstm input " + shape_str(x) + ", expected " + std::to_string(p.input()) + " rows");
    }
    st = lstm_step(p, x, st);
    out.hidden.push_back(st.h);
  }
  out.h = st.h;
  out.c = st.c;
  return out;
}

// Tape version of the LSTM recurrence; returns the per-step hidden Vars.
struct LstmVars {
  Var W, U, b;
};

inline std::vector<Var> lstm_unroll(Graph& g, const LstmVars& p, const std::vector<Var>& xs,
                                    int hidden) {
  const int H = hidden;
  const int B = g.value(xs[0]).cols;
  Var h = g.constant(Matrix(H, B));
  Var c = g.constant(Matrix(H, B));
  std::vector<Var> hs;
  hs.reserve(xs.size());
  for (Var x : xs) {
    Var pre = g.add_bias(g.add(g.matmul(p.W, x), g.matmul(p.U, h)), p.b);
    Var gi = g.sigmoid_op(g.slice_rows(pre, 0, H));
    Var gf = g.sigmoid_op(g.slice_rows(pre, H, H));
    Var gg = g.tanh_op(g.slice_rows(pre, 2 * H, H));
    Var go = g.sigmoid_op(g.slice_rows(pre, 3 * H, H));
    c = g.add(g.mul(gf, c), g.mul(gi, gg));
    h = g.mul(go, g.tanh_op(c));
    hs.push_back(h);
  }
  return hs;
}

// ---------------------------------------------------------------------------
// VAE pieces
// ---------------------------------------------------------------------------

// Diagonal Gaussian with log-variance parameterization.
struct LatentDist {
  std::vector<double> mu;
  std::vector<double> logvar;
};

// z = mu + exp(logvar / 2) * noise
inline std::vector<double> reparameterize(const LatentDist& d, std::span<const double> noise) {
  require(d.mu.size() == d.logvar.size() && d.mu.size() == noise.size(),
          ErrorKind::ShapeMismatch, "reparameterize: length mismatch");
  std::vector<double> z(d.mu.size());
  for (std::size_t i = 0; i < z.size(); ++i) {
    z[i] = d.mu[i] + std::exp(0.5 * d.logvar[i]) * noise[i];
  }
  return z;
}

struct ElboParts {
  double total = 0.0;  // kl + nll, the minimized loss (negative ELBO)
  double kl = 0.0;
  double nll = 0.0;
};

// KL(q || N(0, I)) plus the unit-variance Gaussian negative log-likelihood:
//   kl  = 1/2 sum(mu^2 + exp(logvar) - 1 - logvar)
//   nll = 1/2 sum((x - recon)^2 + log 2*pi)
inline ElboParts elbo_loss(std::span<const double> x, std::span<const double> recon,
                           const LatentDist& q) {
  require(x.size() == recon.size(), ErrorKind::ShapeMismatch, "elbo_loss: x/recon mismatch");
  require(q.mu.size() == q.logvar.size(), ErrorKind::ShapeMismatch, "elbo_loss: latent mismatch");
  constexpr double kLog2Pi = 1.8378770664093454836;
  ElboParts p;
  for (std::size_t i = 0; i < q.mu.size(); ++i) {
    p.kl += q.mu[i] * q.mu[i] + std::exp(q.logvar[i]) - 1.0 - q.logvar[i];
  }
  p.kl *= 0.5;
  for (std::size_t i = 0; i < x.size(); ++i) {
    const double d = x[i] - recon[i];
    p.nll += d * d + kLog2Pi;
  }
  p.nll *= 0.5;
  p.total = p.kl + p.nll;
  return p;
}

// ---------------------------------------------------------------------------
// Optimizer and gradient utilities
// ---------------------------------------------------------------------------

struct AdamState {
  long step = 0;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  Params m;
  Params v;
};

inline void adam_step(Params& params, const Params& grads, AdamState& st, double lr) {
  require(lr >= 0.0, ErrorKind::InvalidConfig, "adam_step: lr must be non-negative");
  ++st.step;
  const double bc1 = 1.0 - std::pow(st.beta1, static_cast<double>(st.step));
  const double bc2 = 1.0 - std::pow(st.beta2, static_cast<double>(st.step));
  for (auto& [name, p] : params) {
    auto git = grads.find(name);
    require(git != grads.end(), ErrorKind::ShapeMismatch, "adam_step: no gradient for " + name);
    const Matrix& g = git->second;
    require_same_shape(p, g, "adam_step");
    Matrix& m = st.m.try_emplace(name, Matrix(p.rows, p.cols)).first->second;
    Matrix& v = st.v.try_emplace(name, Matrix(p.rows, p.cols)).first->second;
    for (std::size_t i = 0; i < p.size(); ++i) {
      m.data[i] = st.beta1 * m.data[i] + (1.0 - st.beta1) * g.data[i];
      v.data[i] = st.beta2 * v.data[i] + (1.0 - st.beta2) * g.data[i] * g.data[i];
      const double mhat = m.data[i] / bc1;
      const double vhat = v.data[i] / bc2;
      p.data[i] -= lr * mhat / (std::sqrt(vhat) + st.eps);
    }
  }
}

using ParamVars = std::map<std::string, Var>;
// Builds the loss subgraph from registered parameter leaves.
using LossFn = std::function<Var(Graph&, const ParamVars&)>;

inline double eval_loss(const LossFn& fn, const Params& params) {
  Graph g;
  ParamVars vars;
  for (const auto& [name, p] : params) vars[name] = g.constant(p);
  return g.scalar(fn(g, vars));
}

// Analytic gradients of a scalar loss with respect to every parameter.
inline Params grad(const LossFn& fn, const Params& params, double* loss_out = nullptr) {
  Graph g;
  ParamVars vars;
  for (const auto& [name, p] : params) vars[name] = g.param(p);
  Var loss = fn(g, vars);
  const double value = g.scalar(loss);
  if (!std::isfinite(value)) {
    fail(ErrorKind::NonFiniteLoss, "loss is not finite: " + std::to_string(value));
  }
  if (loss_out) *loss_out = value;
  Params out;
  if (!g.depends_on_params(loss)) {
    // constant loss: every gradient is zero
    for (const auto& [name, p] : params) out.emplace(name, Matrix(p.rows, p.cols));
    return out;
  }
  g.backward(loss);
  for (const auto& [name, v] : vars) out.emplace(name, g.grad(v));
  return out;
}

// Central finite differences against the analytic gradient; returns the worst
// relative error across all coordinates. The error scale is floored at 1e-6:
// below that both sides sit at the difference quotient's roundoff floor
// (|f| * machine-eps / eps), where the quotient carries no usable digits.
inline double grad_check(const LossFn& fn, const Params& params, double eps = 1e-5) {
  require(eps > 0.0 && eps <= 1e-2, ErrorKind::InvalidConfig, "grad_check: eps in (0, 1e-2]");
  const Params analytic = grad(fn, params);
  double worst = 0.0;
  Params probe = params;
  for (auto& [name, p] : probe) {
    for (std::size_t i = 0; i < p.size(); ++i) {
      const double saved = p.data[i];
      p.data[i] = saved + eps;
      const double up = eval_loss(fn, probe);
      p.data[i] = saved - eps;
      const double down = eval_loss(fn, probe);
      p.data[i] = saved;
      const double numeric = (up - down) / (2.0 * eps);
      const double a = analytic.at(name).data[i];
      const double scale = std::max({std::abs(a), std::abs(numeric), 1e-6});
      worst = std::max(worst, std::abs(a - numeric) / scale);
    }
  }
  return worst;
}

}  // namespace anomattr
