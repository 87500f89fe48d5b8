#pragma once

#include <cstddef>
#include <cstdint>
#include <functional>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "mmfuse/kernels.hpp"
#include "mmfuse/tensor.hpp"

namespace mmfuse {

// Handle to a value recorded on a Tape.
struct Var {
  std::size_t id = 0;
};

enum class Primitive {
  input,
  constant,
  conv2d,
  conv1d,
  adaptive_pool,
  channel_pool,
  activation,
  batch_norm,
  upsample_nearest,
  l2_normalize,
  channel_variance,
  binary,
  channel_slice,
  channel_concat,
  channel_shuffle,
  reshape,
  sum,
  mean,
};

const char* primitive_name(Primitive p);

template <typename T>
using GradientMap = std::map<std::string, BasicTensor<T>>;

// Reverse-mode differentiation record. Nodes are appended in evaluation
// order, so the node list is already a topological order of the graph and
// backward() walks it from the end. Values are computed eagerly.
template <typename T>
class Tape {
 public:
  using TensorT = BasicTensor<T>;

  // Differentiable leaf. Names are unique per tape and key the gradient map.
  Var input(std::string name, TensorT value);
  Var constant(TensorT value);

  const TensorT& value(Var v) const { return nodes_.at(v.id).value; }
  const Shape& shape(Var v) const { return value(v).shape(); }
  Primitive primitive(Var v) const { return nodes_.at(v.id).op; }
  std::size_t size() const { return nodes_.size(); }

  Var conv2d(Var x, const ConvSpec& spec, Var weight, std::optional<Var> bias);
  Var conv1d(Var x, std::size_t kernel_size, Var weight, std::optional<Var> bias);
  Var adaptive_pool(Var x, std::size_t out_h, std::size_t out_w, PoolMode mode);
  Var channel_pool(Var x, PoolMode mode);
  Var activation(Var x, ActivationKind kind);
  // running_mean/running_var are read in infer mode only. In train mode the
  // blended running statistics are written to `updated` when given.
  Var batch_norm(Var x, Var gamma, Var beta, Var running_mean, Var running_var, BnMode mode,
                 BatchNormStats<T>* updated = nullptr);
  Var upsample_nearest(Var x, std::size_t factor);
  Var l2_normalize_channels(Var x);
  Var channel_variance(Var x);
  Var add(Var a, Var b) { return binary(a, b, BinaryOp::add); }
  Var sub(Var a, Var b) { return binary(a, b, BinaryOp::sub); }
  Var mul(Var a, Var b) { return binary(a, b, BinaryOp::mul); }
  Var binary(Var a, Var b, BinaryOp op);
  std::vector<Var> channel_split(Var x, const std::vector<std::size_t>& sizes);
  Var channel_concat(const std::vector<Var>& parts);
  Var channel_shuffle(Var x, std::size_t groups);
  Var reshape(Var x, Shape shape);
  Var sum(Var x);
  Var mean(Var x);

  // Gradient of <seed, value(output)> with respect to every named input.
  GradientMap<T> backward(Var output, const TensorT& seed);

  // Node ids visited by the most recent backward(), in visit order.
  const std::vector<std::size_t>& last_backward_order() const { return order_; }

  // Re-evaluates every node from its recorded inputs and compares the result
  // bitwise with the stored value. Throws InternalError on any mismatch.
  void verify_replay() const;

  // Discrete state of every non-smooth node: argmax positions of max pools,
  // and the linear piece each ReLU/hardswish input falls on. Two evaluations
  // with equal signatures lie on the same smooth piece of the graph.
  std::vector<std::int64_t> branch_signature() const;

 private:
  using Inputs = std::vector<const TensorT*>;
  using ForwardFn = std::function<TensorT(const Inputs&)>;
  using BackwardFn = std::function<std::vector<std::optional<TensorT>>(const Inputs&, const TensorT&, const TensorT&)>;
  using BranchFn = std::function<void(const Inputs&, std::vector<std::int64_t>&)>;

  struct Node {
    Primitive op;
    std::vector<std::size_t> inputs;
    TensorT value;
    std::string name;
    bool requires_grad = false;
    ForwardFn forward;
    BackwardFn backward;
    BranchFn branch;
  };

  Var record(Primitive op, std::vector<Var> inputs, ForwardFn fwd, BackwardFn bwd,
             std::optional<TensorT> precomputed = std::nullopt);
  Inputs gather(const Node& node) const;
  void check(Var v) const;

  std::vector<Node> nodes_;
  std::vector<std::size_t> order_;
};

template <typename T>
GradientMap<T> backward(Tape<T>& tape, Var output, const BasicTensor<T>& seed) {
  return tape.backward(output, seed);
}

extern template class Tape<float>;
extern template class Tape<double>;

}  // namespace mmfuse
