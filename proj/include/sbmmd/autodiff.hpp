#pragma once

// Reverse-mode automatic differentiation over matrix-valued nodes.
//
// Nodes are appended in evaluation order, so the append order is a
// topological order and backward() is a single reverse sweep.

#include <Eigen/Dense>

#include <cstdint>
#include <limits>
#include <memory>
#include <string>
#include <vector>

#include "sbmmd/error.hpp"
#include "sbmmd/kernel_mmd.hpp"

namespace sbmmd::ad {

/// Vectorised tanh as 1 - 2 / (exp(2x) + 1). Absolute error is a few ulp
/// of 1; Eigen's own double tanh is scalar and an order of magnitude slower.
inline Matrix fast_tanh(const Matrix& x) {
  Matrix out(x.rows(), x.cols());
  out.array() = 1.0 - 2.0 / ((2.0 * x.array()).exp() + 1.0);
  return out;
}

struct Var {
  std::uint32_t id = std::numeric_limits<std::uint32_t>::max();
  bool valid() const noexcept { return id != std::numeric_limits<std::uint32_t>::max(); }
};

enum class Op : std::uint8_t {
  leaf,
  add,
  sub,
  mul,
  scale,
  add_scalar,
  add_row,
  matmul_bt,
  affine,
  tanh,
  exp,
  square,
  sum,
  mean,
  row_sq_norm,
  gather_rows,
  concat_cols,
  gram_gauss,
  sum_offdiag,
  mixture_embed,
};

class Tape {
 public:
  Tape() { nodes_.reserve(1024); }

  Var constant(Matrix v) { return push(Op::leaf, {}, {}, std::move(v), false); }
  Var parameter(Matrix v) { return push(Op::leaf, {}, {}, std::move(v), true); }

  Var add(Var a, Var b) {
    same_shape(a, b, "add");
    return push(Op::add, a, b, value(a) + value(b));
  }

  Var sub(Var a, Var b) {
    same_shape(a, b, "sub");
    return push(Op::sub, a, b, value(a) - value(b));
  }

  /// Elementwise product.
  Var mul(Var a, Var b) {
    same_shape(a, b, "mul");
    return push(Op::mul, a, b, value(a).cwiseProduct(value(b)));
  }

  Var scale(Var a, double s) {
    Var v = push(Op::scale, a, {}, s * value(a));
    nodes_[v.id].scalar = s;
    return v;
  }

  Var add_scalar(Var a, double s) {
    Var v = push(Op::add_scalar, a, {}, (value(a).array() + s).matrix());
    nodes_[v.id].scalar = s;
    return v;
  }

  /// A (M x n) plus the 1 x n row `b` broadcast over rows.
  Var add_row(Var a, Var b) {
    require_dim(value(b).rows() == 1 && value(b).cols() == value(a).cols(), "add_row: shape mismatch");
    Matrix out = value(a);
    out.rowwise() += value(b).row(0);
    return push(Op::add_row, a, b, std::move(out));
  }

  /// A * B^T.
  Var matmul_bt(Var a, Var b) {
    require_dim(value(a).cols() == value(b).cols(), "matmul_bt: inner dimension mismatch");
    Matrix out = value(a) * value(b).transpose();
    return push(Op::matmul_bt, a, b, std::move(out));
  }

  /// A * W^T + b with b a 1 x n row broadcast over rows (a dense layer).
  Var affine(Var a, Var w, Var b) {
    require_dim(value(a).cols() == value(w).cols(), "affine: inner dimension mismatch");
    require_dim(value(b).rows() == 1 && value(b).cols() == value(w).rows(), "affine: bias shape mismatch");
    Matrix out(value(a).rows(), value(w).rows());
    out.noalias() = value(a) * value(w).transpose();
    out.rowwise() += value(b).row(0);
    return push(Op::affine, a, w, std::move(out), false, b);
  }

  Var tanh(Var a) { return push(Op::tanh, a, {}, fast_tanh(value(a))); }
  Var exp(Var a) { return push(Op::exp, a, {}, value(a).array().exp().matrix()); }
  Var square(Var a) { return push(Op::square, a, {}, value(a).array().square().matrix()); }

  Var sum(Var a) { return push(Op::sum, a, {}, Matrix::Constant(1, 1, value(a).sum())); }
  Var mean(Var a) {
    require_dim(value(a).size() > 0, "mean of empty node");
    return push(Op::mean, a, {}, Matrix::Constant(1, 1, value(a).mean()));
  }

  /// Per-row squared Euclidean norm, M x 1.
  Var row_sq_norm(Var a) { return push(Op::row_sq_norm, a, {}, value(a).rowwise().squaredNorm()); }

  Var gather_rows(Var a, std::vector<Eigen::Index> rows) {
    const Matrix& src = value(a);
    Matrix out(static_cast<Eigen::Index>(rows.size()), src.cols());
    for (std::size_t i = 0; i < rows.size(); ++i) {
      require_dim(rows[i] >= 0 && rows[i] < src.rows(), "gather_rows: index out of range");
      out.row(static_cast<Eigen::Index>(i)) = src.row(rows[i]);
    }
    Var v = push(Op::gather_rows, a, {}, std::move(out));
    nodes_[v.id].rows = std::move(rows);
    return v;
  }

  Var concat_cols(Var a, Var b) {
    require_dim(value(a).rows() == value(b).rows(), "concat_cols: row count mismatch");
    Matrix out(value(a).rows(), value(a).cols() + value(b).cols());
    out << value(a), value(b);
    return push(Op::concat_cols, a, b, std::move(out));
  }

  /// Gaussian Gram block [exp(-alpha |a_i - b_j|^2)], M x N.
  Var gram_gauss(Var a, Var b, double alpha) {
    const Matrix& A = value(a);
    const Matrix& B = value(b);
    require_dim(A.cols() == B.cols(), "gram_gauss: dimension mismatch");
    Eigen::ArrayXXd d2 = Eigen::ArrayXXd::Zero(A.rows(), B.rows());
    for (Eigen::Index j = 0; j < A.cols(); ++j) {
      d2 += (A.col(j).replicate(1, B.rows()) - B.col(j).transpose().replicate(A.rows(), 1)).array().square();
    }
    Matrix out = (-alpha * d2).exp().matrix();
    Var v = push(Op::gram_gauss, a, b, std::move(out));
    nodes_[v.id].scalar = alpha;
    return v;
  }

  /// Sum of a square matrix excluding its diagonal.
  Var sum_offdiag(Var a) {
    const Matrix& A = value(a);
    require_dim(A.rows() == A.cols(), "sum_offdiag: matrix must be square");
    return push(Op::sum_offdiag, a, {}, Matrix::Constant(1, 1, A.sum() - A.trace()));
  }

  /// Closed-form gaussian-kernel embedding of `mixture` at each row, M x 1.
  Var mixture_embed(Var a, std::shared_ptr<const GaussianMixture> mixture, double alpha) {
    const Matrix& A = value(a);
    require_dim(A.cols() == mixture->dim(), "mixture_embed: dimension mismatch");
    Matrix out(A.rows(), 1);
    for (Eigen::Index i = 0; i < A.rows(); ++i) {
      double total = 0.0;
      for (int c = 0; c < mixture->components(); ++c) {
        total += mixture->weights()(c) * component_embed(A, i, *mixture, c, alpha);
      }
      out(i, 0) = total;
    }
    Var v = push(Op::mixture_embed, a, {}, std::move(out));
    nodes_[v.id].scalar = alpha;
    nodes_[v.id].mixture = std::move(mixture);
    return v;
  }

  const Matrix& value(Var v) const { return node(v).value; }

  double scalar(Var v) const {
    const Matrix& m = value(v);
    require_dim(m.rows() == 1 && m.cols() == 1, "node is not scalar");
    return m(0, 0);
  }

  std::size_t size() const noexcept { return nodes_.size(); }
  bool consumed() const noexcept { return consumed_; }
  Op op(Var v) const { return node(v).op; }

  /// Reverse sweep from a scalar loss. The tape can be swept only once.
  void backward(Var loss) {
    if (consumed_) throw Error("backward: tape already consumed");
    Node& root = node(loss);
    if (root.value.rows() != 1 || root.value.cols() != 1) throw DimensionError("backward: loss must be scalar");
    consumed_ = true;
    root.adjoint = Matrix::Ones(1, 1);
    root.has_adjoint = true;
    for (std::size_t k = loss.id + 1; k-- > 0;) {
      Node& n = nodes_[k];
      if (!n.has_adjoint || !n.needs_grad || n.op == Op::leaf) continue;
      propagate(n);
    }
  }

  /// Adjoint of a node after backward(); zeros for nodes the loss does not reach.
  Matrix gradient(Var v) const {
    const Node& n = node(v);
    if (n.has_adjoint) return n.adjoint;
    return Matrix::Zero(n.value.rows(), n.value.cols());
  }

 private:
  struct Node {
    Op op = Op::leaf;
    Var a;
    Var b;
    Var c;
    double scalar = 0.0;
    bool needs_grad = false;
    bool has_adjoint = false;
    Matrix value;
    Matrix adjoint;
    std::vector<Eigen::Index> rows;
    std::shared_ptr<const GaussianMixture> mixture;
  };

  Node& node(Var v) {
    if (v.id >= nodes_.size()) throw Error("invalid tape variable");
    return nodes_[v.id];
  }
  const Node& node(Var v) const {
    if (v.id >= nodes_.size()) throw Error("invalid tape variable");
    return nodes_[v.id];
  }

  void same_shape(Var a, Var b, const char* op) const {
    const Matrix& x = value(a);
    const Matrix& y = value(b);
    if (x.rows() != y.rows() || x.cols() != y.cols()) throw DimensionError(std::string(op) + ": shape mismatch");
  }

  Var push(Op op, Var a, Var b, Matrix value, bool leaf_grad = false, Var c = {}) {
    if (consumed_) throw Error("tape already consumed");
    Node n;
    n.op = op;
    n.a = a;
    n.b = b;
    n.c = c;
    n.value = std::move(value);
    if (op == Op::leaf) {
      n.needs_grad = leaf_grad;
    } else {
      n.needs_grad = (a.valid() && node(a).needs_grad) || (b.valid() && node(b).needs_grad) ||
                     (c.valid() && node(c).needs_grad);
    }
    nodes_.push_back(std::move(n));
    return Var{static_cast<std::uint32_t>(nodes_.size() - 1)};
  }

  template <class Expr>
  void accumulate(Var target, const Expr& g) {
    Node& n = nodes_[target.id];
    if (!n.needs_grad) return;
    if (n.has_adjoint) {
      n.adjoint += g;
    } else {
      n.adjoint = g;
      n.has_adjoint = true;
    }
  }

  bool wants(Var v) const { return v.valid() && nodes_[v.id].needs_grad; }

  static double component_embed(const Matrix& A, Eigen::Index i, const GaussianMixture& mu, int c, double alpha) {
    double e = 1.0;
    for (Eigen::Index j = 0; j < A.cols(); ++j) {
      const double s = 1.0 + 2.0 * alpha * mu.variances()(c, j);
      const double z = A(i, j) - mu.means()(c, j);
      e *= std::exp(-alpha * z * z / s) / std::sqrt(s);
    }
    return e;
  }

  void propagate(const Node& n) {
    const Matrix& g = n.adjoint;
    switch (n.op) {
      case Op::leaf:
        break;
      case Op::add:
        accumulate(n.a, g);
        accumulate(n.b, g);
        break;
      case Op::sub:
        accumulate(n.a, g);
        accumulate(n.b, -g);
        break;
      case Op::mul:
        if (wants(n.a)) accumulate(n.a, g.cwiseProduct(value(n.b)));
        if (wants(n.b)) accumulate(n.b, g.cwiseProduct(value(n.a)));
        break;
      case Op::scale:
        accumulate(n.a, n.scalar * g);
        break;
      case Op::add_scalar:
        accumulate(n.a, g);
        break;
      case Op::add_row:
        accumulate(n.a, g);
        if (wants(n.b)) accumulate(n.b, g.colwise().sum());
        break;
      case Op::matmul_bt:
        if (wants(n.a)) accumulate(n.a, g * value(n.b));
        if (wants(n.b)) accumulate(n.b, g.transpose() * value(n.a));
        break;
      case Op::affine:
        if (wants(n.a)) accumulate(n.a, g * value(n.b));
        if (wants(n.b)) accumulate(n.b, g.transpose() * value(n.a));
        if (wants(n.c)) accumulate(n.c, g.colwise().sum());
        break;
      case Op::tanh:
        accumulate(n.a, (g.array() * (1.0 - n.value.array().square())).matrix());
        break;
      case Op::exp:
        accumulate(n.a, g.cwiseProduct(n.value));
        break;
      case Op::square:
        accumulate(n.a, (2.0 * g.array() * value(n.a).array()).matrix());
        break;
      case Op::sum: {
        const Matrix& x = value(n.a);
        accumulate(n.a, Matrix::Constant(x.rows(), x.cols(), g(0, 0)));
        break;
      }
      case Op::mean: {
        const Matrix& x = value(n.a);
        accumulate(n.a, Matrix::Constant(x.rows(), x.cols(), g(0, 0) / static_cast<double>(x.size())));
        break;
      }
      case Op::row_sq_norm: {
        Matrix d = 2.0 * value(n.a);
        d.array().colwise() *= g.col(0).array();
        accumulate(n.a, d);
        break;
      }
      case Op::gather_rows: {
        const Matrix& x = value(n.a);
        Matrix d = Matrix::Zero(x.rows(), x.cols());
        for (std::size_t i = 0; i < n.rows.size(); ++i) d.row(n.rows[i]) += g.row(static_cast<Eigen::Index>(i));
        accumulate(n.a, d);
        break;
      }
      case Op::concat_cols: {
        const Eigen::Index ca = value(n.a).cols();
        if (wants(n.a)) accumulate(n.a, g.leftCols(ca));
        if (wants(n.b)) accumulate(n.b, g.rightCols(g.cols() - ca));
        break;
      }
      case Op::gram_gauss: {
        const Matrix w = g.cwiseProduct(n.value);
        const Matrix& A = value(n.a);
        const Matrix& B = value(n.b);
        const double f = -2.0 * n.scalar;
        if (wants(n.a)) {
          Matrix d = A;
          d.array().colwise() *= w.rowwise().sum().array();
          d.noalias() -= w * B;
          accumulate(n.a, f * d);
        }
        if (wants(n.b)) {
          Matrix d = B;
          d.array().colwise() *= w.colwise().sum().transpose().array();
          d.noalias() -= w.transpose() * A;
          accumulate(n.b, f * d);
        }
        break;
      }
      case Op::sum_offdiag: {
        const Matrix& x = value(n.a);
        Matrix d = Matrix::Constant(x.rows(), x.cols(), g(0, 0));
        d.diagonal().setZero();
        accumulate(n.a, d);
        break;
      }
      case Op::mixture_embed: {
        const Matrix& A = value(n.a);
        const GaussianMixture& mu = *n.mixture;
        const double alpha = n.scalar;
        Matrix d = Matrix::Zero(A.rows(), A.cols());
        for (Eigen::Index i = 0; i < A.rows(); ++i) {
          for (int c = 0; c < mu.components(); ++c) {
            const double e = mu.weights()(c) * component_embed(A, i, mu, c, alpha);
            for (Eigen::Index j = 0; j < A.cols(); ++j) {
              const double s = 1.0 + 2.0 * alpha * mu.variances()(c, j);
              d(i, j) += e * (-2.0 * alpha * (A(i, j) - mu.means()(c, j)) / s);
            }
          }
          d.row(i) *= g(i, 0);
        }
        accumulate(n.a, d);
        break;
      }
    }
  }

  std::vector<Node> nodes_;
  bool consumed_ = false;
};

}  // namespace sbmmd::ad
