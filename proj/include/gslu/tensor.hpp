#pragma once

#include <Eigen/Core>

#include <cmath>
#include <functional>
#include <memory>
#include <random>
#include <stdexcept>
#include <string>
#include <vector>

namespace gslu {

template <class T>
using Mat = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

using BoolMat = Eigen::Array<bool, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

struct TensorError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

// Forward outputs are checked for NaN/Inf when enabled; a non-finite value is
// an error state, not a silent propagation.
inline bool& finite_checks() {
  static bool on = true;
  return on;
}

template <class T>
class Tape;

// Dense 2D tensor participating in reverse-mode differentiation. Value and
// gradient buffers are shared between handles; a null tape marks a constant.
template <class T>
struct Tensor {
  std::shared_ptr<Mat<T>> val;
  std::shared_ptr<Mat<T>> grad;  // same shape as val when present
  Tape<T>* tape = nullptr;

  Eigen::Index rows() const { return val ? val->rows() : 0; }
  Eigen::Index cols() const { return val ? val->cols() : 0; }
  Eigen::Index size() const { return val ? val->size() : 0; }
  std::vector<Eigen::Index> shape() const { return {rows(), cols()}; }
  const Mat<T>& value() const { return *val; }
  Mat<T>& value() { return *val; }
  const Mat<T>& gradient() const {
    if (!grad) throw TensorError("tensor has no gradient buffer");
    return *grad;
  }
  T item() const {
    if (size() != 1) throw TensorError("item() requires a scalar tensor");
    return (*val)(0, 0);
  }
  bool differentiable() const { return grad != nullptr; }
};

template <class T>
Tensor<T> constant(Mat<T> m) {
  Tensor<T> t;
  t.val = std::make_shared<Mat<T>>(std::move(m));
  return t;
}

template <class T>
Tensor<T> constant_scalar(T v) {
  Mat<T> m(1, 1);
  m(0, 0) = v;
  return constant<T>(std::move(m));
}

// Append-only record of the forward pass. Nodes are stored in topological
// order (parents precede children by construction) and the backward pass
// visits each exactly once in reverse.
template <class T>
class Tape {
 public:
  // A leaf owns fresh value/grad buffers; gradients accumulate across steps
  // until explicitly zeroed.
  Tensor<T> leaf(Mat<T> init) {
    return watch(std::make_shared<Mat<T>>(std::move(init)),
                 std::make_shared<Mat<T>>());
  }

  // Binds existing (persistent) buffers as a leaf of this tape.
  Tensor<T> watch(std::shared_ptr<Mat<T>> val, std::shared_ptr<Mat<T>> grad) {
    if (grad->rows() != val->rows() || grad->cols() != val->cols()) {
      grad->setZero(val->rows(), val->cols());
    }
    Tensor<T> t;
    t.val = std::move(val);
    t.grad = std::move(grad);
    t.tape = this;
    return t;
  }

  void record(std::function<void()> backward_fn) {
    nodes_.push_back(std::move(backward_fn));
  }

  std::size_t size() const { return nodes_.size(); }

  void backward(const Tensor<T>& loss) {
    if (loss.tape != this || !loss.grad)
      throw TensorError("backward: tensor is not attached to this tape");
    if (loss.size() != 1) throw TensorError("backward: loss must be a scalar");
    (*loss.grad)(0, 0) += T(1);
    for (auto it = nodes_.rbegin(); it != nodes_.rend(); ++it) (*it)();
    nodes_.clear();
  }

 private:
  std::vector<std::function<void()>> nodes_;
};

namespace detail {

template <class T>
Tape<T>* joint_tape(const Tensor<T>& a, const Tensor<T>& b) {
  if (a.tape && b.tape && a.tape != b.tape)
    throw TensorError("operands belong to different tapes");
  return a.tape ? a.tape : b.tape;
}

template <class T>
Tensor<T> make_result(Tape<T>* tape, Mat<T> value, const char* op) {
  if (finite_checks() && !value.allFinite())
    throw TensorError(std::string(op) + ": non-finite value in forward output");
  Tensor<T> out;
  out.val = std::make_shared<Mat<T>>(std::move(value));
  if (tape) {
    out.grad = std::make_shared<Mat<T>>(Mat<T>::Zero(out.val->rows(), out.val->cols()));
    out.tape = tape;
  }
  return out;
}

}  // namespace detail

template <class T>
Tensor<T> matmul(const Tensor<T>& a, const Tensor<T>& b) {
  if (a.cols() != b.rows())
    throw TensorError("matmul: inner extents do not match (" + std::to_string(a.rows()) + "x" +
                      std::to_string(a.cols()) + " * " + std::to_string(b.rows()) + "x" +
                      std::to_string(b.cols()) + ")");
  Tape<T>* tape = detail::joint_tape(a, b);
  Tensor<T> out = detail::make_result<T>(tape, (*a.val) * (*b.val), "matmul");
  if (tape) {
    auto av = a.val, bv = b.val, ag = a.grad, bg = b.grad, og = out.grad;
    tape->record([av, bv, ag, bg, og] {
      if (ag) ag->noalias() += (*og) * bv->transpose();
      if (bg) bg->noalias() += av->transpose() * (*og);
    });
  }
  return out;
}

template <class T>
Tensor<T> transpose(const Tensor<T>& x) {
  Tensor<T> out = detail::make_result<T>(x.tape, x.val->transpose(), "transpose");
  if (x.tape) {
    auto xg = x.grad, og = out.grad;
    x.tape->record([xg, og] {
      if (xg) xg->noalias() += og->transpose();
    });
  }
  return out;
}

template <class T>
Tensor<T> add(const Tensor<T>& a, const Tensor<T>& b) {
  if (a.rows() != b.rows() || a.cols() != b.cols())
    throw TensorError("add: shape mismatch");
  Tape<T>* tape = detail::joint_tape(a, b);
  Tensor<T> out = detail::make_result<T>(tape, *a.val + *b.val, "add");
  if (tape) {
    auto ag = a.grad, bg = b.grad, og = out.grad;
    tape->record([ag, bg, og] {
      if (ag) *ag += *og;
      if (bg) *bg += *og;
    });
  }
  return out;
}

// Adds a 1xC row to every row of x (the one sanctioned broadcast).
template <class T>
Tensor<T> add_bias(const Tensor<T>& x, const Tensor<T>& b) {
  if (b.rows() != 1 || b.cols() != x.cols())
    throw TensorError("add_bias: bias must be 1 x cols(x)");
  Tape<T>* tape = detail::joint_tape(x, b);
  Mat<T> v = *x.val;
  v.rowwise() += b.val->row(0);
  Tensor<T> out = detail::make_result<T>(tape, std::move(v), "add_bias");
  if (tape) {
    auto xg = x.grad, bg = b.grad, og = out.grad;
    tape->record([xg, bg, og] {
      if (xg) *xg += *og;
      if (bg) bg->row(0) += og->colwise().sum();
    });
  }
  return out;
}

template <class T>
Tensor<T> scale(const Tensor<T>& x, T s) {
  Tensor<T> out = detail::make_result<T>(x.tape, (*x.val) * s, "scale");
  if (x.tape) {
    auto xg = x.grad, og = out.grad;
    x.tape->record([xg, og, s] {
      if (xg) *xg += (*og) * s;
    });
  }
  return out;
}

template <class T>
Tensor<T> mul_elem(const Tensor<T>& a, const Tensor<T>& b) {
  if (a.rows() != b.rows() || a.cols() != b.cols())
    throw TensorError("mul_elem: shape mismatch");
  Tape<T>* tape = detail::joint_tape(a, b);
  Tensor<T> out = detail::make_result<T>(tape, a.val->cwiseProduct(*b.val), "mul_elem");
  if (tape) {
    auto av = a.val, bv = b.val, ag = a.grad, bg = b.grad, og = out.grad;
    tape->record([av, bv, ag, bg, og] {
      if (ag) *ag += og->cwiseProduct(*bv);
      if (bg) *bg += og->cwiseProduct(*av);
    });
  }
  return out;
}

template <class T>
Tensor<T> sum_all(const Tensor<T>& x) {
  Mat<T> v(1, 1);
  v(0, 0) = x.val->sum();
  Tensor<T> out = detail::make_result<T>(x.tape, std::move(v), "sum_all");
  if (x.tape) {
    auto xg = x.grad, og = out.grad;
    x.tape->record([xg, og] {
      if (xg) xg->array() += (*og)(0, 0);
    });
  }
  return out;
}

template <class T>
Tensor<T> concat_cols(const Tensor<T>& a, const Tensor<T>& b) {
  if (a.rows() != b.rows()) throw TensorError("concat_cols: row counts differ");
  Tape<T>* tape = detail::joint_tape(a, b);
  Mat<T> v(a.rows(), a.cols() + b.cols());
  v.leftCols(a.cols()) = *a.val;
  v.rightCols(b.cols()) = *b.val;
  Tensor<T> out = detail::make_result<T>(tape, std::move(v), "concat_cols");
  if (tape) {
    auto ag = a.grad, bg = b.grad, og = out.grad;
    const Eigen::Index ac = a.cols(), bc = b.cols();
    tape->record([ag, bg, og, ac, bc] {
      if (ag) *ag += og->leftCols(ac);
      if (bg) *bg += og->rightCols(bc);
    });
  }
  return out;
}

template <class T>
Tensor<T> slice_cols(const Tensor<T>& x, Eigen::Index offset, Eigen::Index n) {
  if (offset < 0 || n <= 0 || offset + n > x.cols())
    throw TensorError("slice_cols: range out of bounds");
  Tensor<T> out = detail::make_result<T>(x.tape, x.val->middleCols(offset, n), "slice_cols");
  if (x.tape) {
    auto xg = x.grad, og = out.grad;
    x.tape->record([xg, og, offset, n] {
      if (xg) xg->middleCols(offset, n) += *og;
    });
  }
  return out;
}

// Row gather from an embedding table; id -1 produces a zero row and receives
// no gradient. Repeated ids accumulate.
template <class T>
Tensor<T> gather_rows(const Tensor<T>& table, const std::vector<int>& ids) {
  Mat<T> v = Mat<T>::Zero(static_cast<Eigen::Index>(ids.size()), table.cols());
  for (std::size_t i = 0; i < ids.size(); ++i) {
    if (ids[i] == -1) continue;
    if (ids[i] < 0 || ids[i] >= table.rows())
      throw TensorError("gather_rows: id out of range");
    v.row(static_cast<Eigen::Index>(i)) = table.val->row(ids[i]);
  }
  Tensor<T> out = detail::make_result<T>(table.tape, std::move(v), "gather_rows");
  if (table.tape) {
    auto tg = table.grad, og = out.grad;
    auto ids_copy = ids;
    table.tape->record([tg, og, ids_copy] {
      if (!tg) return;
      for (std::size_t i = 0; i < ids_copy.size(); ++i) {
        if (ids_copy[i] >= 0)
          tg->row(ids_copy[i]) += og->row(static_cast<Eigen::Index>(i));
      }
    });
  }
  return out;
}

// Row-wise softmax with numerical stabilization by row-max subtraction.
// Masked entries (mask false) are exactly zero in the output; a fully masked
// row is a degenerate-row error.
template <class T>
Tensor<T> softmax_rows(const Tensor<T>& x, const BoolMat* mask = nullptr) {
  if (mask && (mask->rows() != x.rows() || mask->cols() != x.cols()))
    throw TensorError("softmax_rows: mask shape mismatch");
  Mat<T> y(x.rows(), x.cols());
  for (Eigen::Index r = 0; r < x.rows(); ++r) {
    T mx = -std::numeric_limits<T>::infinity();
    for (Eigen::Index c = 0; c < x.cols(); ++c) {
      if (mask && !(*mask)(r, c)) continue;
      mx = std::max(mx, (*x.val)(r, c));
    }
    if (!(mx > -std::numeric_limits<T>::infinity()))
      throw TensorError("softmax_rows: fully masked row");
    T denom = T(0);
    for (Eigen::Index c = 0; c < x.cols(); ++c) {
      if (mask && !(*mask)(r, c)) {
        y(r, c) = T(0);
      } else {
        y(r, c) = std::exp((*x.val)(r, c) - mx);
        denom += y(r, c);
      }
    }
    y.row(r) /= denom;
  }
  Tensor<T> out = detail::make_result<T>(x.tape, std::move(y), "softmax_rows");
  if (x.tape) {
    auto xg = x.grad, og = out.grad, ov = out.val;
    x.tape->record([xg, og, ov] {
      if (!xg) return;
      for (Eigen::Index r = 0; r < ov->rows(); ++r) {
        T dot = ov->row(r).dot(og->row(r));
        xg->row(r).array() +=
            ov->row(r).array() * (og->row(r).array() - dot);
      }
    });
  }
  return out;
}

// Per-row standardization followed by the gamma/beta affine map.
template <class T>
Tensor<T> layer_norm(const Tensor<T>& x, const Tensor<T>& gamma, const Tensor<T>& beta,
                     T eps = T(1e-5)) {
  const Eigen::Index d = x.cols();
  if (gamma.rows() != 1 || gamma.cols() != d || beta.rows() != 1 || beta.cols() != d)
    throw TensorError("layer_norm: gamma/beta must be 1 x cols(x)");
  Tape<T>* tape = x.tape ? x.tape : (gamma.tape ? gamma.tape : beta.tape);
  if ((x.tape && x.tape != tape) || (gamma.tape && gamma.tape != tape) ||
      (beta.tape && beta.tape != tape))
    throw TensorError("layer_norm: operands belong to different tapes");
  auto xhat = std::make_shared<Mat<T>>(x.rows(), d);
  auto inv_std = std::make_shared<Mat<T>>(x.rows(), 1);
  Mat<T> y(x.rows(), d);
  for (Eigen::Index r = 0; r < x.rows(); ++r) {
    T mean = x.val->row(r).mean();
    T var = (x.val->row(r).array() - mean).square().mean();
    T is = T(1) / std::sqrt(var + eps);
    (*inv_std)(r, 0) = is;
    xhat->row(r) = (x.val->row(r).array() - mean) * is;
    y.row(r) = xhat->row(r).cwiseProduct(gamma.val->row(0)) + beta.val->row(0);
  }
  Tensor<T> out = detail::make_result<T>(tape, std::move(y), "layer_norm");
  if (tape) {
    auto xg = x.grad, gg = gamma.grad, bg = beta.grad, og = out.grad;
    auto gv = gamma.val;
    tape->record([xg, gg, bg, og, gv, xhat, inv_std] {
      for (Eigen::Index r = 0; r < og->rows(); ++r) {
        if (gg) gg->row(0) += og->row(r).cwiseProduct(xhat->row(r));
        if (bg) bg->row(0) += og->row(r);
        if (xg) {
          Eigen::Array<T, 1, Eigen::Dynamic> gy =
              og->row(r).array() * gv->row(0).array();
          T m1 = gy.mean();
          T m2 = (gy * xhat->row(r).array()).mean();
          xg->row(r).array() +=
              (gy - m1 - xhat->row(r).array() * m2) * (*inv_std)(r, 0);
        }
      }
    });
  }
  return out;
}

template <class T>
Tensor<T> gelu(const Tensor<T>& x) {
  static const T inv_sqrt2 = T(1) / std::sqrt(T(2));
  static const T inv_sqrt2pi = T(1) / std::sqrt(T(2) * T(M_PI));
  Mat<T> y = x.val->unaryExpr([](T v) {
    return T(0.5) * v * (T(1) + std::erf(v * inv_sqrt2));
  });
  Tensor<T> out = detail::make_result<T>(x.tape, std::move(y), "gelu");
  if (x.tape) {
    auto xv = x.val, xg = x.grad, og = out.grad;
    x.tape->record([xv, xg, og] {
      if (!xg) return;
      xg->array() += og->array() * xv->array().unaryExpr([](T v) {
        T cdf = T(0.5) * (T(1) + std::erf(v * inv_sqrt2));
        T pdf = std::exp(T(-0.5) * v * v) * inv_sqrt2pi;
        return cdf + v * pdf;
      });
    });
  }
  return out;
}

template <class T>
Tensor<T> relu(const Tensor<T>& x) {
  Mat<T> y = x.val->cwiseMax(T(0));
  Tensor<T> out = detail::make_result<T>(x.tape, std::move(y), "relu");
  if (x.tape) {
    auto xv = x.val, xg = x.grad, og = out.grad;
    x.tape->record([xv, xg, og] {
      if (!xg) return;
      xg->array() += og->array() * (xv->array() > T(0)).template cast<T>();
    });
  }
  return out;
}

// Inverted dropout; identity when not training or p == 0.
template <class T>
Tensor<T> dropout(const Tensor<T>& x, double p, std::mt19937_64& rng, bool training) {
  if (!training || p <= 0.0) return x;
  if (p >= 1.0) throw TensorError("dropout: p must be < 1");
  std::bernoulli_distribution keep(1.0 - p);
  auto mask = std::make_shared<Mat<T>>(x.rows(), x.cols());
  const T scale_up = T(1.0 / (1.0 - p));
  for (Eigen::Index r = 0; r < x.rows(); ++r)
    for (Eigen::Index c = 0; c < x.cols(); ++c)
      (*mask)(r, c) = keep(rng) ? scale_up : T(0);
  Tensor<T> out = detail::make_result<T>(x.tape, x.val->cwiseProduct(*mask), "dropout");
  if (x.tape) {
    auto xg = x.grad, og = out.grad;
    x.tape->record([xg, og, mask] {
      if (xg) *xg += og->cwiseProduct(*mask);
    });
  }
  return out;
}

// Mean over rows of -log softmax(logits)[target]. Masked logits (mask false)
// are excluded from the distribution entirely: zero probability, zero
// gradient. Targets must be unmasked.
template <class T>
Tensor<T> cross_entropy(const Tensor<T>& logits, const std::vector<int>& targets,
                        const BoolMat* mask = nullptr) {
  const Eigen::Index m = logits.rows(), c = logits.cols();
  if (static_cast<Eigen::Index>(targets.size()) != m)
    throw TensorError("cross_entropy: one target per row required");
  if (mask && (mask->rows() != m || mask->cols() != c))
    throw TensorError("cross_entropy: mask shape mismatch");
  auto probs = std::make_shared<Mat<T>>(m, c);
  T total = T(0);
  for (Eigen::Index r = 0; r < m; ++r) {
    int tgt = targets[static_cast<std::size_t>(r)];
    if (tgt < 0 || tgt >= c) throw TensorError("cross_entropy: target out of range");
    if (mask && !(*mask)(r, tgt)) throw TensorError("cross_entropy: target is masked");
    T mx = -std::numeric_limits<T>::infinity();
    for (Eigen::Index j = 0; j < c; ++j) {
      if (mask && !(*mask)(r, j)) continue;
      mx = std::max(mx, (*logits.val)(r, j));
    }
    T denom = T(0);
    for (Eigen::Index j = 0; j < c; ++j) {
      if (mask && !(*mask)(r, j)) {
        (*probs)(r, j) = T(0);
      } else {
        (*probs)(r, j) = std::exp((*logits.val)(r, j) - mx);
        denom += (*probs)(r, j);
      }
    }
    probs->row(r) /= denom;
    total -= std::log((*probs)(r, tgt));
  }
  Mat<T> v(1, 1);
  v(0, 0) = total / T(m);
  Tensor<T> out = detail::make_result<T>(logits.tape, std::move(v), "cross_entropy");
  if (logits.tape) {
    auto lg = logits.grad, og = out.grad;
    auto tgts = targets;
    logits.tape->record([lg, og, probs, tgts, m] {
      if (!lg) return;
      T g = (*og)(0, 0) / T(m);
      for (Eigen::Index r = 0; r < probs->rows(); ++r) {
        lg->row(r) += probs->row(r) * g;
        (*lg)(r, tgts[static_cast<std::size_t>(r)]) -= g;
      }
    });
  }
  return out;
}

template <class T>
void backward(const Tensor<T>& loss) {
  if (!loss.tape) throw TensorError("backward: tensor is detached from any tape");
  loss.tape->backward(loss);
}

// Causal mask: row t may attend to columns 0..t.
inline BoolMat causal_mask(Eigen::Index n) {
  BoolMat m(n, n);
  for (Eigen::Index r = 0; r < n; ++r)
    for (Eigen::Index c = 0; c < n; ++c) m(r, c) = c <= r;
  return m;
}

template <class T>
Mat<T> random_normal(Eigen::Index rows, Eigen::Index cols, T sigma, std::mt19937_64& rng) {
  std::normal_distribution<double> dist(0.0, 1.0);
  Mat<T> m(rows, cols);
  for (Eigen::Index r = 0; r < rows; ++r)
    for (Eigen::Index c = 0; c < cols; ++c) m(r, c) = static_cast<T>(dist(rng)) * sigma;
  return m;
}

}  // namespace gslu
