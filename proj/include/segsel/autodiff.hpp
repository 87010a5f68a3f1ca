#pragma once

#include <cstddef>
#include <deque>
#include <functional>
#include <initializer_list>
#include <map>
#include <span>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include "segsel/param_store.hpp"
#include "segsel/tensor.hpp"

namespace segsel {

class Tape;

/// Handle to a node recorded on a Tape. Cheap to copy; valid while the tape lives.
class Var {
 public:
  Var() = default;

  bool valid() const { return tape_ != nullptr; }
  Tape* tape() const { return tape_; }
  std::size_t id() const { return id_; }

  const Tensor& value() const;
  /// Gradient of the last backward() target with respect to this node.
  const Tensor& grad() const;

 private:
  friend class Tape;
  Var(Tape* tape, std::size_t id) : tape_(tape), id_(id) {}

  Tape* tape_ = nullptr;
  std::size_t id_ = 0;
};

/// Reverse-mode tape. Every forward op appends a node; backward() walks the
/// nodes in reverse recording order. A tape is built per forward pass and
/// discarded afterwards.
class Tape {
 public:
  using BackwardFn = std::function<void(Tape&, std::size_t self)>;

  Tape() = default;
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  /// Leaf with no gradient flow (stop-gradient).
  Var constant(Tensor value);
  /// Differentiable leaf that is not a parameter; its gradient is readable via Var::grad().
  Var input(Tensor value);
  /// Leaf bound to a store entry; backward() writes into the store's gradient buffer.
  Var param(ParamStore& store, std::string_view name);

  /// Appends an op result. `fn` reads grad(self) and accumulates into the grads of
  /// those parents for which needs_grad() holds. Throws NonFiniteError on NaN/Inf.
  Var record(Tensor value, std::initializer_list<Var> parents, BackwardFn fn, std::string_view op);
  Var record(Tensor value, std::span<const Var> parents, BackwardFn fn, std::string_view op);

  /// Fills gradients for every node reachable from `loss` (must be a scalar on this tape).
  /// Gradient buffers of all stores referenced by this tape are zeroed first, so
  /// parameters that do not influence the loss end up with zero gradient.
  void backward(Var loss);

  const Tensor& value(std::size_t id) const { return nodes_.at(id).value; }
  Tensor& grad(std::size_t id);
  bool needs_grad(std::size_t id) const { return nodes_.at(id).needs_grad; }
  bool has_grad() const { return backward_done_; }
  std::size_t size() const { return nodes_.size(); }

 private:
  struct Node {
    Tensor value;
    Tensor grad;
    BackwardFn backward;
    ParamStore* store = nullptr;
    std::size_t param_index = 0;
    bool needs_grad = false;
  };

  std::deque<Node> nodes_;
  std::map<std::pair<const ParamStore*, std::size_t>, std::size_t> param_nodes_;
  bool backward_done_ = false;
};

enum class Activation { identity, elu, leaky_relu, square, sigmoid };

/// Negative-side slope of leaky ReLU.
inline constexpr double kLeakySlope = 0.01;
/// Probability clamp applied before the log in binary cross-entropy.
inline constexpr double kBceEpsilon = 1e-7;
/// Lower clamp on action probabilities before the log in the actor loss.
inline constexpr double kLogProbFloor = 1e-8;

Activation activation_from_string(std::string_view name);
std::string to_string(Activation kind);

// Value-level kernels. The tape ops below call these for their forward pass,
// so recorded and un-recorded paths agree bit-for-bit.

/// Valid (no padding) cross-correlation: input [Cin x L], kernels [Cout x Cin x K].
Tensor conv1d_forward(const Tensor& input, const Tensor& kernels, std::size_t stride);
/// The same kernel bank [F x K] applied to every input row: [C x L] -> [C*F x L'],
/// output row c*F + f.
Tensor channelwise_conv1d_forward(const Tensor& input, const Tensor& kernels, std::size_t stride);
Tensor avg_pool1d_forward(const Tensor& input, std::size_t window, std::size_t stride);
/// weights [M x N] . input [N] + bias [M]
Tensor dense_forward(const Tensor& input, const Tensor& weights, const Tensor& bias);
Tensor activation_forward(const Tensor& x, Activation kind);
/// Softmax over a vector input.
Tensor softmax_forward(const Tensor& x);
double bce_value(double predicted, int label);
/// Mean over the listed columns of a [D x T] matrix; empty list gives the zero vector.
Tensor mean_columns_forward(const Tensor& features, std::span<const std::size_t> columns);
double elastic_net_value(const ParamStore& store, double l1, double l2);

// Recorded ops.

Var conv1d(Var input, Var kernels, std::size_t stride);
Var channelwise_conv1d(Var input, Var kernels, std::size_t stride);
/// Adds bias[r] to every element of row r of a [R x L] matrix.
Var add_row_bias(Var input, Var bias);
Var avg_pool1d(Var input, std::size_t window, std::size_t stride);
Var dense(Var input, Var weights, Var bias);
Var activate(Var x, Activation kind);
Var softmax(Var x);
Var mean_columns(Var features, std::span<const std::size_t> columns);
Var concat(Var a, Var b);
Var element(Var x, std::size_t index);
Var add(Var a, Var b);
Var scale(Var x, double factor);
/// Arithmetic mean of scalar vars, summed in order.
Var mean(std::span<const Var> scalars);
/// Binary cross-entropy of a one-element probability against label in {0,1}.
Var bce(Var predicted, int label);
/// log(max(probs[action], kLogProbFloor)) * advantage, advantage held constant.
Var actor_objective(Var probs, std::size_t action, double advantage);
/// 0.5 * (value - target)^2, target held constant.
Var critic_loss(Var value, double target);
/// l1 * sum|w| + l2 * sum w^2 over every entry in the store.
Var elastic_net(Tape& tape, ParamStore& store, double l1, double l2);

}  // namespace segsel
