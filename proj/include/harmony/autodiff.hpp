#pragma once

#include <cstdint>
#include <deque>
#include <functional>
#include <span>
#include <string>
#include <unordered_map>
#include <vector>

#include "harmony/kernels.hpp"
#include "harmony/tensor.hpp"

// Reverse-mode differentiation over NCHW tensors.
//
// A Tape records every op executed through it. Values are computed eagerly;
// backward() walks the records in exact reverse order and accumulates each
// op's contribution additively into its inputs' gradients. Leaves created
// with watch() are bound to a Parameter, whose `grad` receives the result.
// Leaves created with constant() never receive gradients, and ops whose
// inputs are all constant are recorded without a backward closure.

namespace harmony::ad {

struct Parameter {
  Parameter(std::string name, Tensor value, Real lr_multiplier = 1.0);

  std::string name;
  Tensor value;
  Tensor grad;  // same shape as value
  Real lr_multiplier = 1.0;

  void zero_grad() { grad.fill(0); }
};

class Tape;

class Var {
 public:
  Var() = default;

  const Tensor& value() const;
  const Shape& shape() const { return value().shape(); }
  Tape* tape() const { return tape_; }
  std::size_t id() const { return id_; }

 private:
  friend class Tape;
  Var(Tape* tape, std::size_t id) : tape_(tape), id_(id) {}

  Tape* tape_ = nullptr;
  std::size_t id_ = 0;
};

class Tape {
 public:
  /// Adds d(loss)/d(input_i) into *input_grads[i]; null entries are inputs
  /// that need no gradient. `output` is the op's own forward value.
  using BackwardFn =
      std::function<void(const Tensor& output, const Tensor& grad_out,
                         std::span<Tensor* const> input_grads)>;

  Tape() = default;
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  Var constant(Tensor value);
  /// Leaf bound to `p`; watching the same parameter twice returns the same Var.
  Var watch(Parameter& p);
  Var record(Tensor value, std::vector<Var> inputs, BackwardFn backward);

  /// Writes d(loss)/d(p) into every watched Parameter's grad (accumulating).
  void backward(const Var& loss);

  const Tensor& value(const Var& v) const { return node(v).value; }
  bool requires_grad(const Var& v) const { return node(v).requires_grad; }
  /// Gradient from the most recent backward(); null if `v` was unreachable.
  const Tensor* grad(const Var& v) const;
  std::size_t size() const { return nodes_.size(); }

 private:
  struct Node {
    Tensor value;
    std::vector<std::size_t> inputs;
    BackwardFn backward;
    Parameter* param = nullptr;
    bool requires_grad = false;
    bool has_grad = false;
    Tensor grad;
  };

  const Node& node(const Var& v) const;
  void check_owned(const Var& v, const char* what) const;

  std::deque<Node> nodes_;
  std::unordered_map<const Parameter*, std::size_t> watched_;
};

// ---------------------------------------------------------------------------
// Ops

Var conv2d(const Var& input, const Var& weight, const Var& bias,
           kernels::ConvGeometry geometry = {});
Var upsample_nearest(const Var& input, int factor);
/// Nearest-neighbour resize to (h, w): source index = floor(dst * in / out).
Var resize_nearest(const Var& input, int h, int w);
Var max_pool2d(const Var& input, int k, int stride);

struct Activation {
  enum class Kind { relu, leaky_relu, sigmoid };
  Kind kind = Kind::relu;
  Real alpha = 0.2;

  static Activation relu() { return {Kind::relu, 0}; }
  static Activation leaky_relu(Real alpha) { return {Kind::leaky_relu, alpha}; }
  static Activation sigmoid() { return {Kind::sigmoid, 0}; }
};

Var activation(const Var& input, const Activation& kind);
inline Var relu(const Var& x) { return activation(x, Activation::relu()); }
inline Var leaky_relu(const Var& x, Real alpha) {
  return activation(x, Activation::leaky_relu(alpha));
}
inline Var sigmoid(const Var& x) { return activation(x, Activation::sigmoid()); }

Var concat_channels(const Var& a, const Var& b);
Var slice_channels(const Var& input, int begin, int count);

/// Elementwise a+b / a*b. Equal shapes, or one operand with a single channel
/// that is replicated across the other's channels.
Var add(const Var& a, const Var& b);
Var mul(const Var& a, const Var& b);
/// scale * a + shift
Var scalar_affine(const Var& a, Real scale, Real shift);
/// Sum of all elements as a (1,1,1,1) tensor.
Var sum(const Var& a);

// ---------------------------------------------------------------------------
// Finite-difference checking

struct GradCheckOptions {
  Real step = 1e-5;
  /// Coordinates per tensor; tensors at most this large are checked fully.
  std::size_t max_coords = 64;
  std::uint64_t seed = 0;
};

/// Relative error |analytic - numeric| / max(|analytic|, |numeric|, 1e-8).
Real relative_error(Real analytic, Real numeric);

using TensorFn = std::function<Var(Tape&, std::span<const Var>)>;
using LossFn = std::function<Var(Tape&)>;

/// Max relative error between backward() and central differences over sampled
/// coordinates of `inputs`. A non-scalar f is reduced with fixed random
/// weights so every output element contributes.
Real grad_check(const TensorFn& f, const std::vector<Tensor>& inputs,
                const GradCheckOptions& options = {});

/// Same check against the parameters a scalar loss depends on. Overwrites
/// their grads with the analytic gradient.
Real grad_check_parameters(const LossFn& loss,
                           std::span<Parameter* const> params,
                           const GradCheckOptions& options = {});

}  // namespace harmony::ad
