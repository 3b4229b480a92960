#pragma once

// The control u_theta(t, x): a tanh multilayer perceptron on (t, x) with a
// linear output layer.

#include <Eigen/Dense>

#include <cmath>
#include <cstdint>
#include <cstdlib>
#include <istream>
#include <ostream>
#include <vector>

#include "sbmmd/autodiff.hpp"
#include "sbmmd/error.hpp"
#include "sbmmd/io.hpp"
#include "sbmmd/rng.hpp"

namespace sbmmd {

class ControlNet {
 public:
  /// Layer widths [1 + d, h_1, ..., h_L, m]; parameters start at zero.
  explicit ControlNet(std::vector<int> dims) : dims_(std::move(dims)) {
    require(dims_.size() >= 2, "network needs at least input and output layers");
    for (int w : dims_) require(w >= 1, "layer widths must be positive");
    for (std::size_t l = 0; l + 1 < dims_.size(); ++l) {
      weights_.push_back(Matrix::Zero(dims_[l + 1], dims_[l]));
      biases_.push_back(RowVector::Zero(dims_[l + 1]));
    }
  }

  /// Glorot-uniform weights, zero biases.
  static ControlNet glorot(std::vector<int> dims, std::uint64_t seed) {
    ControlNet net(std::move(dims));
    const CounterRng rng(seed, make_stream(StreamTag::init_weights, 0));
    for (std::size_t l = 0; l < net.weights_.size(); ++l) {
      Matrix& w = net.weights_[l];
      const double limit = std::sqrt(6.0 / static_cast<double>(w.rows() + w.cols()));
      for (Eigen::Index r = 0; r < w.rows(); ++r) {
        for (Eigen::Index c = 0; c < w.cols(); ++c) {
          const double u = rng.uniform(static_cast<std::uint32_t>(l), static_cast<std::uint32_t>(r),
                                       static_cast<std::uint32_t>(c));
          w(r, c) = (2.0 * u - 1.0) * limit;
        }
      }
    }
    return net;
  }

  static std::int64_t parameter_count(const std::vector<int>& dims) {
    std::int64_t n = 0;
    for (std::size_t l = 0; l + 1 < dims.size(); ++l) n += std::int64_t{dims[l]} * dims[l + 1] + dims[l + 1];
    return n;
  }

  /// Equal-width hidden layers whose total parameter count is closest to
  /// `target` (ties resolve to the narrower width).
  static std::vector<int> equal_width_dims(int input, int output, int hidden_layers, std::int64_t target) {
    require(hidden_layers >= 1, "need at least one hidden layer");
    auto dims_for = [&](int w) {
      std::vector<int> d{input};
      for (int l = 0; l < hidden_layers; ++l) d.push_back(w);
      d.push_back(output);
      return d;
    };
    int best = 1;
    std::int64_t best_gap = std::llabs(parameter_count(dims_for(1)) - target);
    for (int w = 2; w < 100000; ++w) {
      const std::int64_t n = parameter_count(dims_for(w));
      const std::int64_t gap = std::llabs(n - target);
      if (gap < best_gap) {
        best = w;
        best_gap = gap;
      }
      if (n > target) break;
    }
    return dims_for(best);
  }

  const std::vector<int>& dims() const noexcept { return dims_; }
  int layers() const noexcept { return static_cast<int>(weights_.size()); }
  int state_dim() const noexcept { return dims_.front() - 1; }
  int output_dim() const noexcept { return dims_.back(); }
  std::int64_t parameter_count() const { return parameter_count(dims_); }

  Matrix& weight(int l) { return weights_.at(l); }
  const Matrix& weight(int l) const { return weights_.at(l); }
  RowVector& bias(int l) { return biases_.at(l); }
  const RowVector& bias(int l) const { return biases_.at(l); }

  /// Flattened theta: per layer, W row-major then b.
  Vector parameters() const {
    Vector theta(parameter_count());
    Eigen::Index k = 0;
    for (int l = 0; l < layers(); ++l) {
      for (Eigen::Index r = 0; r < weights_[l].rows(); ++r) {
        for (Eigen::Index c = 0; c < weights_[l].cols(); ++c) theta(k++) = weights_[l](r, c);
      }
      for (Eigen::Index c = 0; c < biases_[l].size(); ++c) theta(k++) = biases_[l](c);
    }
    return theta;
  }

  void set_parameters(const Vector& theta) {
    require_dim(theta.size() == parameter_count(), "set_parameters: wrong parameter count");
    Eigen::Index k = 0;
    for (int l = 0; l < layers(); ++l) {
      for (Eigen::Index r = 0; r < weights_[l].rows(); ++r) {
        for (Eigen::Index c = 0; c < weights_[l].cols(); ++c) weights_[l](r, c) = theta(k++);
      }
      for (Eigen::Index c = 0; c < biases_[l].size(); ++c) biases_[l](c) = theta(k++);
    }
  }

  /// u(t, x) for each row of X (M x d) -> M x m.
  Matrix forward_batch(double t, const Matrix& X) const {
    require_dim(X.cols() == state_dim(), "control network: state dimension mismatch");
    Matrix h(X.rows(), X.cols() + 1);
    h << Matrix::Constant(X.rows(), 1, t), X;
    for (int l = 0; l < layers(); ++l) {
      Matrix z = h * weights_[l].transpose();
      z.rowwise() += biases_[l];
      if (l + 1 < layers()) z = ad::fast_tanh(z);
      h = std::move(z);
    }
    return h;
  }

  Vector forward(double t, const Vector& x) const {
    return forward_batch(t, x.transpose()).row(0).transpose();
  }

  /// Parameters registered as leaves of a tape.
  struct Bound {
    std::vector<ad::Var> weights;
    std::vector<ad::Var> biases;
  };

  Bound bind(ad::Tape& tape) const {
    Bound b;
    for (int l = 0; l < layers(); ++l) {
      b.weights.push_back(tape.parameter(weights_[l]));
      b.biases.push_back(tape.parameter(biases_[l]));
    }
    return b;
  }

  /// Taped forward on an (M x (1+d)) input node holding [t | x].
  ad::Var forward(ad::Tape& tape, const Bound& p, ad::Var input) const {
    require_dim(tape.value(input).cols() == dims_.front(), "control network: input width mismatch");
    ad::Var h = input;
    for (int l = 0; l < layers(); ++l) {
      h = tape.affine(h, p.weights[l], p.biases[l]);
      if (l + 1 < layers()) h = tape.tanh(h);
    }
    return h;
  }

  /// Gradient w.r.t. theta, flattened in parameters() order.
  Vector gradient(const ad::Tape& tape, const Bound& p) const {
    Vector g(parameter_count());
    Eigen::Index k = 0;
    for (int l = 0; l < layers(); ++l) {
      const Matrix gw = tape.gradient(p.weights[l]);
      const Matrix gb = tape.gradient(p.biases[l]);
      for (Eigen::Index r = 0; r < gw.rows(); ++r) {
        for (Eigen::Index c = 0; c < gw.cols(); ++c) g(k++) = gw(r, c);
      }
      for (Eigen::Index c = 0; c < gb.size(); ++c) g(k++) = gb(c);
    }
    return g;
  }

  bool operator==(const ControlNet& o) const { return dims_ == o.dims_ && parameters() == o.parameters(); }

  // Checkpoint: u64 magic, u32 version, u32 layer-dims count, u32 dims...,
  // then theta as float64 in parameters() order (row-major weights).
  static constexpr std::uint64_t kMagic = 0x3154454E4D4D4253ull;  // "SBMMNET1"
  static constexpr std::uint32_t kVersion = 1;

  void save(std::ostream& os) const {
    io::write_le(os, kMagic);
    io::write_le(os, kVersion);
    io::write_le(os, static_cast<std::uint32_t>(dims_.size()));
    for (int d : dims_) io::write_le(os, static_cast<std::uint32_t>(d));
    const Vector theta = parameters();
    for (Eigen::Index i = 0; i < theta.size(); ++i) io::write_le(os, theta(i));
    if (!os) throw IoError("failed writing checkpoint");
  }

  static ControlNet load(std::istream& is) {
    if (io::read_le<std::uint64_t>(is) != kMagic) throw IoError("not a control network checkpoint");
    if (io::read_le<std::uint32_t>(is) != kVersion) throw IoError("unsupported checkpoint version");
    const auto n = io::read_le<std::uint32_t>(is);
    if (n < 2 || n > 64) throw IoError("corrupt checkpoint layer count");
    std::vector<int> dims(n);
    for (int& d : dims) d = static_cast<int>(io::read_le<std::uint32_t>(is));
    ControlNet net(dims);
    Vector theta(net.parameter_count());
    for (Eigen::Index i = 0; i < theta.size(); ++i) theta(i) = io::read_le<double>(is);
    net.set_parameters(theta);
    return net;
  }

 private:
  std::vector<int> dims_;
  std::vector<Matrix> weights_;
  std::vector<RowVector> biases_;
};

}  // namespace sbmmd
