#include "mmfuse/tape.hpp"

#include <set>

namespace mmfuse {

const char* primitive_name(Primitive p) {
  switch (p) {
    case Primitive::input: return "input";
    case Primitive::constant: return "constant";
    case Primitive::conv2d: return "conv2d";
    case Primitive::conv1d: return "conv1d";
    case Primitive::adaptive_pool: return "adaptive_pool";
    case Primitive::channel_pool: return "channel_pool";
    case Primitive::activation: return "activation";
    case Primitive::batch_norm: return "batch_norm";
    case Primitive::upsample_nearest: return "upsample_nearest";
    case Primitive::l2_normalize: return "l2_normalize";
    case Primitive::channel_variance: return "channel_variance";
    case Primitive::binary: return "binary";
    case Primitive::channel_slice: return "channel_slice";
    case Primitive::channel_concat: return "channel_concat";
    case Primitive::channel_shuffle: return "channel_shuffle";
    case Primitive::reshape: return "reshape";
    case Primitive::sum: return "sum";
    case Primitive::mean: return "mean";
  }
  return "?";
}

template <typename T>
void Tape<T>::check(Var v) const {
  if (v.id >= nodes_.size()) throw InternalError("variable does not belong to this tape");
}

template <typename T>
Var Tape<T>::input(std::string name, TensorT value) {
  for (const auto& n : nodes_) {
    if (n.op == Primitive::input && n.name == name) throw InternalError("duplicate tape input '" + name + "'");
  }
  Node node{Primitive::input, {}, std::move(value), std::move(name), true, nullptr, nullptr, nullptr};
  nodes_.push_back(std::move(node));
  return Var{nodes_.size() - 1};
}

template <typename T>
Var Tape<T>::constant(TensorT value) {
  Node node{Primitive::constant, {}, std::move(value), {}, false, nullptr, nullptr, nullptr};
  nodes_.push_back(std::move(node));
  return Var{nodes_.size() - 1};
}

template <typename T>
typename Tape<T>::Inputs Tape<T>::gather(const Node& node) const {
  Inputs in;
  in.reserve(node.inputs.size());
  for (std::size_t id : node.inputs) in.push_back(&nodes_[id].value);
  return in;
}

template <typename T>
Var Tape<T>::record(Primitive op, std::vector<Var> inputs, ForwardFn fwd, BackwardFn bwd,
                    std::optional<TensorT> precomputed) {
  Node node{op, {}, TensorT{}, {}, false, std::move(fwd), std::move(bwd), {}};
  for (Var v : inputs) {
    check(v);
    node.inputs.push_back(v.id);
    node.requires_grad = node.requires_grad || nodes_[v.id].requires_grad;
  }
  node.value = precomputed ? std::move(*precomputed) : node.forward(gather(node));
  nodes_.push_back(std::move(node));
  return Var{nodes_.size() - 1};
}

template <typename T>
Var Tape<T>::conv2d(Var x, const ConvSpec& spec, Var weight, std::optional<Var> bias) {
  std::vector<Var> in{x, weight};
  if (bias) in.push_back(*bias);
  const bool has_bias = bias.has_value();
  return record(
      Primitive::conv2d, in,
      [spec](const Inputs& v) { return mmfuse::conv2d(*v[0], spec, *v[1], v.size() > 2 ? v[2] : nullptr); },
      [spec, has_bias](const Inputs& v, const TensorT&, const TensorT& g) {
        auto r = conv2d_backward(*v[0], spec, *v[1], has_bias, g);
        std::vector<std::optional<TensorT>> out{std::move(r.input), std::move(r.weight)};
        if (has_bias) out.push_back(std::move(r.bias));
        return out;
      });
}

template <typename T>
Var Tape<T>::conv1d(Var x, std::size_t kernel_size, Var weight, std::optional<Var> bias) {
  std::vector<Var> in{x, weight};
  if (bias) in.push_back(*bias);
  const bool has_bias = bias.has_value();
  return record(
      Primitive::conv1d, in,
      [kernel_size](const Inputs& v) {
        return mmfuse::conv1d(*v[0], kernel_size, *v[1], v.size() > 2 ? v[2] : nullptr);
      },
      [kernel_size, has_bias](const Inputs& v, const TensorT&, const TensorT& g) {
        auto r = conv1d_backward(*v[0], kernel_size, *v[1], has_bias, g);
        std::vector<std::optional<TensorT>> out{std::move(r.input), std::move(r.weight)};
        if (has_bias) out.push_back(std::move(r.bias));
        return out;
      });
}

template <typename T>
Var Tape<T>::adaptive_pool(Var x, std::size_t out_h, std::size_t out_w, PoolMode mode) {
  const Var out = record(
      Primitive::adaptive_pool, {x},
      [=](const Inputs& v) { return mmfuse::adaptive_pool(*v[0], out_h, out_w, mode); },
      [=](const Inputs& v, const TensorT&, const TensorT& g) {
        return std::vector<std::optional<TensorT>>{adaptive_pool_backward(*v[0], out_h, out_w, mode, g)};
      });
  if (mode == PoolMode::max) {
    nodes_.back().branch = [=](const Inputs& v, std::vector<std::int64_t>& sig) {
      const auto mask = adaptive_pool_backward(*v[0], out_h, out_w, mode, TensorT(Shape{v[0]->n(), v[0]->c(), out_h, out_w}, T(1)));
      for (std::size_t i = 0; i < mask.numel(); ++i) {
        if (mask[i] != T(0)) sig.push_back(static_cast<std::int64_t>(i));
      }
    };
  }
  return out;
}

template <typename T>
Var Tape<T>::channel_pool(Var x, PoolMode mode) {
  const Var out = record(
      Primitive::channel_pool, {x}, [=](const Inputs& v) { return mmfuse::channel_pool(*v[0], mode); },
      [=](const Inputs& v, const TensorT&, const TensorT& g) {
        return std::vector<std::optional<TensorT>>{channel_pool_backward(*v[0], mode, g)};
      });
  if (mode == PoolMode::max) {
    nodes_.back().branch = [=](const Inputs& v, std::vector<std::int64_t>& sig) {
      const Shape s = v[0]->shape();
      const auto mask = channel_pool_backward(*v[0], mode, TensorT(Shape{s.n, 1, s.h, s.w}, T(1)));
      for (std::size_t i = 0; i < mask.numel(); ++i) {
        if (mask[i] != T(0)) sig.push_back(static_cast<std::int64_t>(i));
      }
    };
  }
  return out;
}

template <typename T>
Var Tape<T>::activation(Var x, ActivationKind kind) {
  const Var out = record(
      Primitive::activation, {x}, [=](const Inputs& v) { return mmfuse::activation(*v[0], kind); },
      [=](const Inputs& v, const TensorT&, const TensorT& g) {
        return std::vector<std::optional<TensorT>>{activation_backward(*v[0], kind, g)};
      });
  if (kind == ActivationKind::relu || kind == ActivationKind::hardswish) {
    nodes_.back().branch = [=](const Inputs& v, std::vector<std::int64_t>& sig) {
      for (T e : v[0]->data()) {
        if (kind == ActivationKind::relu) {
          sig.push_back(e > T(0));
        } else {
          sig.push_back(e <= T(-3) ? 0 : e >= T(3) ? 2 : 1);
        }
      }
    };
  }
  return out;
}

template <typename T>
Var Tape<T>::batch_norm(Var x, Var gamma, Var beta, Var running_mean, Var running_var, BnMode mode,
                        BatchNormStats<T>* updated) {
  for (Var v : {x, gamma, beta, running_mean, running_var}) check(v);
  auto value = mmfuse::batch_norm(this->value(x), this->value(gamma), this->value(beta), this->value(running_mean),
                                  this->value(running_var), mode, kBatchNormEpsilon, kBatchNormMomentum, updated);
  return record(
      Primitive::batch_norm, {x, gamma, beta, running_mean, running_var},
      [mode](const Inputs& v) { return mmfuse::batch_norm(*v[0], *v[1], *v[2], *v[3], *v[4], mode); },
      [mode](const Inputs& v, const TensorT&, const TensorT& g) {
        auto r = batch_norm_backward(*v[0], *v[1], *v[3], *v[4], mode, kBatchNormEpsilon, g);
        return std::vector<std::optional<TensorT>>{std::move(r.input), std::move(r.gamma), std::move(r.beta),
                                                   std::nullopt, std::nullopt};
      },
      std::move(value));
}

template <typename T>
Var Tape<T>::upsample_nearest(Var x, std::size_t factor) {
  return record(
      Primitive::upsample_nearest, {x}, [=](const Inputs& v) { return mmfuse::upsample_nearest(*v[0], factor); },
      [=](const Inputs&, const TensorT&, const TensorT& g) {
        return std::vector<std::optional<TensorT>>{upsample_nearest_backward(g, factor)};
      });
}

template <typename T>
Var Tape<T>::l2_normalize_channels(Var x) {
  return record(
      Primitive::l2_normalize, {x}, [](const Inputs& v) { return mmfuse::l2_normalize_channels(*v[0], kL2Epsilon); },
      [](const Inputs& v, const TensorT&, const TensorT& g) {
        return std::vector<std::optional<TensorT>>{l2_normalize_channels_backward(*v[0], kL2Epsilon, g)};
      });
}

template <typename T>
Var Tape<T>::channel_variance(Var x) {
  return record(
      Primitive::channel_variance, {x}, [](const Inputs& v) { return mmfuse::channel_variance(*v[0]); },
      [](const Inputs& v, const TensorT&, const TensorT& g) {
        return std::vector<std::optional<TensorT>>{channel_variance_backward(*v[0], g)};
      });
}

template <typename T>
Var Tape<T>::binary(Var a, Var b, BinaryOp op) {
  return record(
      Primitive::binary, {a, b}, [op](const Inputs& v) { return mmfuse::elementwise(*v[0], *v[1], op); },
      [op](const Inputs& v, const TensorT&, const TensorT& g) {
        auto r = elementwise_backward(*v[0], *v[1], op, g);
        return std::vector<std::optional<TensorT>>{std::move(r.a), std::move(r.b)};
      });
}

template <typename T>
std::vector<Var> Tape<T>::channel_split(Var x, const std::vector<std::size_t>& sizes) {
  std::size_t total = 0;
  for (std::size_t s : sizes) total += s;
  if (total != shape(x).c) {
    throw ShapeError("split sizes sum to " + std::to_string(total) + " but input has " +
                     std::to_string(shape(x).c) + " channels");
  }
  std::vector<Var> parts;
  std::size_t begin = 0;
  for (std::size_t count : sizes) {
    parts.push_back(record(
        Primitive::channel_slice, {x},
        [=](const Inputs& v) { return mmfuse::channel_slice(*v[0], begin, count); },
        [=](const Inputs& v, const TensorT&, const TensorT& g) {
          TensorT gx(v[0]->shape());
          const std::size_t plane = g.h() * g.w();
          for (std::size_t n = 0; n < g.n(); ++n) {
            std::copy_n(&g.data()[g.index(n, 0, 0, 0)], count * plane, &gx.data()[gx.index(n, begin, 0, 0)]);
          }
          return std::vector<std::optional<TensorT>>{std::move(gx)};
        }));
    begin += count;
  }
  return parts;
}

template <typename T>
Var Tape<T>::channel_concat(const std::vector<Var>& parts) {
  return record(
      Primitive::channel_concat, parts,
      [](const Inputs& v) {
        std::vector<TensorT> copies;
        copies.reserve(v.size());
        for (const auto* t : v) copies.push_back(*t);
        return mmfuse::channel_concat(copies);
      },
      [](const Inputs& v, const TensorT&, const TensorT& g) {
        std::vector<std::optional<TensorT>> out;
        std::size_t begin = 0;
        for (const auto* t : v) {
          out.emplace_back(mmfuse::channel_slice(g, begin, t->c()));
          begin += t->c();
        }
        return out;
      });
}

template <typename T>
Var Tape<T>::channel_shuffle(Var x, std::size_t groups) {
  const std::size_t channels = shape(x).c;
  shuffle_permutation(channels, groups);
  return record(
      Primitive::channel_shuffle, {x}, [=](const Inputs& v) { return mmfuse::channel_shuffle(*v[0], groups); },
      [=](const Inputs&, const TensorT&, const TensorT& g) {
        // The inverse of a (G, C/G) transpose is the (C/G, G) transpose.
        return std::vector<std::optional<TensorT>>{mmfuse::channel_shuffle(g, channels / groups)};
      });
}

template <typename T>
Var Tape<T>::reshape(Var x, Shape s) {
  return record(
      Primitive::reshape, {x}, [=](const Inputs& v) { return v[0]->reshaped(s); },
      [](const Inputs& v, const TensorT&, const TensorT& g) {
        return std::vector<std::optional<TensorT>>{g.reshaped(v[0]->shape())};
      });
}

template <typename T>
Var Tape<T>::sum(Var x) {
  return record(
      Primitive::sum, {x}, [](const Inputs& v) { return TensorT(Shape{}, sum_all(*v[0])); },
      [](const Inputs& v, const TensorT&, const TensorT& g) {
        return std::vector<std::optional<TensorT>>{TensorT(v[0]->shape(), g[0])};
      });
}

template <typename T>
Var Tape<T>::mean(Var x) {
  return record(
      Primitive::mean, {x},
      [](const Inputs& v) { return TensorT(Shape{}, sum_all(*v[0]) / static_cast<T>(v[0]->numel())); },
      [](const Inputs& v, const TensorT&, const TensorT& g) {
        return std::vector<std::optional<TensorT>>{
            TensorT(v[0]->shape(), g[0] / static_cast<T>(v[0]->numel()))};
      });
}

template <typename T>
GradientMap<T> Tape<T>::backward(Var output, const TensorT& seed) {
  check(output);
  if (seed.shape() != shape(output)) {
    throw ShapeError("seed gradient shape " + to_string(seed.shape()) + " does not match output " +
                     to_string(shape(output)));
  }
  std::vector<std::optional<TensorT>> grads(nodes_.size());
  grads[output.id] = seed;
  order_.clear();
  for (std::size_t id = output.id + 1; id-- > 0;) {
    Node& node = nodes_[id];
    if (!grads[id] || !node.requires_grad) continue;
    order_.push_back(id);
    if (!node.backward) continue;
    auto in_grads = node.backward(gather(node), node.value, *grads[id]);
    if (in_grads.size() != node.inputs.size()) {
      throw InternalError(std::string("backward of ") + primitive_name(node.op) + " returned wrong arity");
    }
    for (std::size_t k = 0; k < node.inputs.size(); ++k) {
      const std::size_t src = node.inputs[k];
      if (!in_grads[k] || !nodes_[src].requires_grad) continue;
      if (in_grads[k]->shape() != nodes_[src].value.shape()) {
        throw InternalError(std::string("backward of ") + primitive_name(node.op) + " produced gradient of shape " +
                            to_string(in_grads[k]->shape()) + " for input of shape " +
                            to_string(nodes_[src].value.shape()));
      }
      if (!grads[src]) {
        grads[src] = std::move(*in_grads[k]);
      } else {
        auto& acc = *grads[src];
        for (std::size_t i = 0; i < acc.numel(); ++i) acc[i] += (*in_grads[k])[i];
      }
    }
  }
  GradientMap<T> result;
  for (std::size_t id = 0; id < nodes_.size(); ++id) {
    const Node& node = nodes_[id];
    if (node.op != Primitive::input) continue;
    result.emplace(node.name, grads[id] ? std::move(*grads[id]) : TensorT(node.value.shape()));
  }
  return result;
}

template <typename T>
std::vector<std::int64_t> Tape<T>::branch_signature() const {
  std::vector<std::int64_t> sig;
  for (std::size_t i = 0; i < nodes_.size(); ++i) {
    if (!nodes_[i].branch) continue;
    sig.push_back(-static_cast<std::int64_t>(i) - 1);
    nodes_[i].branch(gather(nodes_[i]), sig);
  }
  return sig;
}

template <typename T>
void Tape<T>::verify_replay() const {
  for (std::size_t id = 0; id < nodes_.size(); ++id) {
    const Node& node = nodes_[id];
    if (!node.forward) continue;
    for (std::size_t src : node.inputs) {
      if (src >= id) throw InternalError("tape node consumes a later node");
    }
    if (!(node.forward(gather(node)) == node.value)) {
      throw InternalError(std::string("tape replay mismatch at node ") + std::to_string(id) + " (" +
                          primitive_name(node.op) + ")");
    }
  }
}

template class Tape<float>;
template class Tape<double>;

}  // namespace mmfuse
