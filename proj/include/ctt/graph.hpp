#pragma once

#include <functional>
#include <map>
#include <optional>
#include <utility>
#include <vector>

#include "ctt/ops.hpp"
#include "ctt/params.hpp"
#include "ctt/tensor.hpp"

namespace ctt {

// Reverse-mode tape. Every operation appends a node whose inputs already
// exist, so creation order is a topological order and backward() is a single
// reverse sweep. Node gradients are per-sweep; parameter gradients accumulate
// across sweeps until ParamStore::zero_grad().
template <class T>
class GraphT {
 public:
  using Id = int;

  // track_grad requests input gradients (saliency, activation maps).
  Id constant(TensorT<T> value, bool track_grad = false) {
    return push(std::move(value), track_grad, nullptr);
  }

  // Learnable leaf; memoized so shared parameters accumulate naturally.
  Id param(ParameterT<T>& p) {
    auto it = param_ids_.find(&p);
    if (it != param_ids_.end()) return it->second;
    const Id id = push(p.value, true, &p);
    param_ids_[&p] = id;
    return id;
  }

  const TensorT<T>& value(Id id) const { return nodes_[check(id)].value; }
  bool needs_grad(Id id) const { return nodes_[check(id)].needs_grad; }

  // Gradient of the last backward() root w.r.t. this node; empty tensor if
  // no gradient flowed.
  const TensorT<T>& grad_of(Id id) const { return nodes_[check(id)].grad; }

  Id conv2d(Id x, Id w, std::optional<Id> b, ops::ConvSpec spec) {
    TensorT<T> y = ops::conv2d(value(x), value(w), b ? &value(*b) : nullptr, spec);
    const Id id = push(std::move(y), needs(x) || needs(w) || (b && needs(*b)), nullptr);
    if (nodes_[id].needs_grad)
      nodes_[id].backward = [id, x, w, b, spec](GraphT& g) {
        TensorT<T>* dx = g.needs(x) ? &g.grad_buf(x) : nullptr;
        TensorT<T>* dw = g.needs(w) ? &g.grad_buf(w) : nullptr;
        TensorT<T>* db = (b && g.needs(*b)) ? &g.grad_buf(*b) : nullptr;
        ops::conv2d_backward(g.value(x), g.value(w), spec, g.nodes_[id].grad, dx, dw, db);
      };
    return id;
  }

  Id batch_norm(Id x, Id gamma, Id beta, std::vector<T>& running_mean,
                std::vector<T>& running_var, T momentum, T eps, ops::BnMode mode) {
    ops::BnBatchStats<T> stats;
    TensorT<T> y = ops::batch_norm(value(x), value(gamma), value(beta), running_mean,
                                   running_var, momentum, eps, mode, &stats);
    const Id id = push(std::move(y), needs(x) || needs(gamma) || needs(beta), nullptr);
    if (nodes_[id].needs_grad)
      nodes_[id].backward = [id, x, gamma, beta, mode, stats = std::move(stats)](GraphT& g) {
        TensorT<T>* dx = g.needs(x) ? &g.grad_buf(x) : nullptr;
        TensorT<T>* dg = g.needs(gamma) ? &g.grad_buf(gamma) : nullptr;
        TensorT<T>* db = g.needs(beta) ? &g.grad_buf(beta) : nullptr;
        if (mode == ops::BnMode::Train)
          ops::batch_norm_backward_train(g.value(x), g.value(gamma), stats, g.nodes_[id].grad,
                                         dx, dg, db);
        else
          ops::batch_norm_backward_eval(g.value(x), g.value(gamma), stats, g.nodes_[id].grad,
                                        dx, dg, db);
      };
    return id;
  }

  Id relu(Id x) {
    const Id id = push(ops::relu(value(x)), needs(x), nullptr);
    if (nodes_[id].needs_grad)
      nodes_[id].backward = [id, x](GraphT& g) {
        const TensorT<T>& xv = g.value(x);
        TensorT<T>& dx = g.grad_buf(x);
        const TensorT<T>& dy = g.nodes_[id].grad;
        for (std::size_t i = 0; i < dx.numel(); ++i)
          if (xv.data[i] > T(0)) dx.data[i] += dy.data[i];
      };
    return id;
  }

  Id sigmoid(Id x) {
    const Id id = push(ops::sigmoid(value(x)), needs(x), nullptr);
    if (nodes_[id].needs_grad)
      nodes_[id].backward = [id, x](GraphT& g) {
        const TensorT<T>& yv = g.value(id);
        TensorT<T>& dx = g.grad_buf(x);
        const TensorT<T>& dy = g.nodes_[id].grad;
        for (std::size_t i = 0; i < dx.numel(); ++i)
          dx.data[i] += dy.data[i] * yv.data[i] * (T(1) - yv.data[i]);
      };
    return id;
  }

  Id max_pool2d(Id x, int kernel, int stride, int pad) {
    std::vector<std::int32_t> argmax;
    TensorT<T> y = ops::max_pool2d(value(x), kernel, stride, pad, needs(x) ? &argmax : nullptr);
    const Id id = push(std::move(y), needs(x), nullptr);
    if (nodes_[id].needs_grad)
      nodes_[id].backward = [id, x, argmax = std::move(argmax)](GraphT& g) {
        TensorT<T>& dx = g.grad_buf(x);
        const TensorT<T>& dy = g.nodes_[id].grad;
        for (std::size_t i = 0; i < dy.numel(); ++i) dx.data[argmax[i]] += dy.data[i];
      };
    return id;
  }

  Id global_pool(Id x, ops::PoolKind kind) {
    std::vector<std::int32_t> argmax;
    TensorT<T> y = ops::global_pool(value(x), kind,
                                    (needs(x) && kind == ops::PoolKind::Max) ? &argmax : nullptr);
    const Id id = push(std::move(y), needs(x), nullptr);
    if (nodes_[id].needs_grad)
      nodes_[id].backward = [id, x, kind, argmax = std::move(argmax)](GraphT& g) {
        TensorT<T>& dx = g.grad_buf(x);
        const TensorT<T>& dy = g.nodes_[id].grad;
        if (kind == ops::PoolKind::Max) {
          for (std::size_t i = 0; i < dy.numel(); ++i) dx.data[argmax[i]] += dy.data[i];
        } else {
          const std::size_t plane =
              static_cast<std::size_t>(g.value(x).dim(2)) * g.value(x).dim(3);
          const T inv = T(1) / static_cast<T>(plane);
          for (std::size_t nc = 0; nc < dy.numel(); ++nc) {
            const T d = dy.data[nc] * inv;
            T* dxp = dx.data.data() + nc * plane;
            for (std::size_t i = 0; i < plane; ++i) dxp[i] += d;
          }
        }
      };
    return id;
  }

  Id channel_reduce(Id x, ops::ReduceKind kind) {
    std::vector<std::int32_t> argmax;
    TensorT<T> y = ops::channel_reduce(
        value(x), kind, (needs(x) && kind == ops::ReduceKind::Max) ? &argmax : nullptr);
    const Id id = push(std::move(y), needs(x), nullptr);
    if (nodes_[id].needs_grad)
      nodes_[id].backward = [id, x, kind, argmax = std::move(argmax)](GraphT& g) {
        const TensorT<T>& xv = g.value(x);
        const int N = xv.dim(0), C = xv.dim(1);
        const std::size_t plane = static_cast<std::size_t>(xv.dim(2)) * xv.dim(3);
        TensorT<T>& dx = g.grad_buf(x);
        const TensorT<T>& dy = g.nodes_[id].grad;
        for (int n = 0; n < N; ++n) {
          const T* dyp = dy.data.data() + static_cast<std::size_t>(n) * plane;
          T* dxp = dx.data.data() + static_cast<std::size_t>(n) * C * plane;
          if (kind == ops::ReduceKind::Mean) {
            const T inv = T(1) / static_cast<T>(C);
            for (int c = 0; c < C; ++c)
              for (std::size_t i = 0; i < plane; ++i) dxp[c * plane + i] += dyp[i] * inv;
          } else {
            const std::int32_t* am = argmax.data() + static_cast<std::size_t>(n) * plane;
            for (std::size_t i = 0; i < plane; ++i) dxp[am[i] * plane + i] += dyp[i];
          }
        }
      };
    return id;
  }

  Id linear(Id x, Id w, std::optional<Id> b) {
    TensorT<T> y = ops::linear(value(x), value(w), b ? &value(*b) : nullptr);
    const Id id = push(std::move(y), needs(x) || needs(w) || (b && needs(*b)), nullptr);
    if (nodes_[id].needs_grad)
      nodes_[id].backward = [id, x, w, b](GraphT& g) {
        TensorT<T>* dx = g.needs(x) ? &g.grad_buf(x) : nullptr;
        TensorT<T>* dw = g.needs(w) ? &g.grad_buf(w) : nullptr;
        TensorT<T>* db = (b && g.needs(*b)) ? &g.grad_buf(*b) : nullptr;
        ops::linear_backward(g.value(x), g.value(w), g.nodes_[id].grad, dx, dw, db);
      };
    return id;
  }

  Id add(Id a, Id b) {
    require(value(a).shape == value(b).shape, "add: shape mismatch");
    TensorT<T> y(value(a).shape);
    for (std::size_t i = 0; i < y.numel(); ++i) y.data[i] = value(a).data[i] + value(b).data[i];
    const Id id = push(std::move(y), needs(a) || needs(b), nullptr);
    if (nodes_[id].needs_grad)
      nodes_[id].backward = [id, a, b](GraphT& g) {
        const TensorT<T>& dy = g.nodes_[id].grad;
        if (g.needs(a)) {
          TensorT<T>& da = g.grad_buf(a);
          for (std::size_t i = 0; i < dy.numel(); ++i) da.data[i] += dy.data[i];
        }
        if (g.needs(b)) {
          TensorT<T>& db = g.grad_buf(b);
          for (std::size_t i = 0; i < dy.numel(); ++i) db.data[i] += dy.data[i];
        }
      };
    return id;
  }

  // y[n,c,h,w] = x[n,c,h,w] * gate[n,c]
  Id mul_channel_gate(Id x, Id gate) {
    const TensorT<T>& xv = value(x);
    const TensorT<T>& gv = value(gate);
    require(xv.shape.size() == 4 && gv.shape.size() == 2 && gv.dim(0) == xv.dim(0) &&
                gv.dim(1) == xv.dim(1),
            "mul_channel_gate: shape mismatch");
    const std::size_t plane = static_cast<std::size_t>(xv.dim(2)) * xv.dim(3);
    TensorT<T> y(xv.shape);
    for (std::size_t nc = 0; nc < gv.numel(); ++nc) {
      const T gk = gv.data[nc];
      const T* xp = xv.data.data() + nc * plane;
      T* yp = y.data.data() + nc * plane;
      for (std::size_t i = 0; i < plane; ++i) yp[i] = xp[i] * gk;
    }
    const Id id = push(std::move(y), needs(x) || needs(gate), nullptr);
    if (nodes_[id].needs_grad)
      nodes_[id].backward = [id, x, gate, plane](GraphT& g) {
        const TensorT<T>& dy = g.nodes_[id].grad;
        const TensorT<T>& xv2 = g.value(x);
        const TensorT<T>& gv2 = g.value(gate);
        if (g.needs(x)) {
          TensorT<T>& dx = g.grad_buf(x);
          for (std::size_t nc = 0; nc < gv2.numel(); ++nc) {
            const T gk = gv2.data[nc];
            for (std::size_t i = 0; i < plane; ++i)
              dx.data[nc * plane + i] += dy.data[nc * plane + i] * gk;
          }
        }
        if (g.needs(gate)) {
          TensorT<T>& dg = g.grad_buf(gate);
          for (std::size_t nc = 0; nc < gv2.numel(); ++nc) {
            double acc = 0.0;
            for (std::size_t i = 0; i < plane; ++i)
              acc += static_cast<double>(dy.data[nc * plane + i]) * xv2.data[nc * plane + i];
            dg.data[nc] += static_cast<T>(acc);
          }
        }
      };
    return id;
  }

  // y[n,c,h,w] = x[n,c,h,w] * gate[n,0,h,w]
  Id mul_spatial_gate(Id x, Id gate) {
    const TensorT<T>& xv = value(x);
    const TensorT<T>& gv = value(gate);
    require(xv.shape.size() == 4 && gv.shape.size() == 4 && gv.dim(0) == xv.dim(0) &&
                gv.dim(1) == 1 && gv.dim(2) == xv.dim(2) && gv.dim(3) == xv.dim(3),
            "mul_spatial_gate: shape mismatch");
    const int N = xv.dim(0), C = xv.dim(1);
    const std::size_t plane = static_cast<std::size_t>(xv.dim(2)) * xv.dim(3);
    TensorT<T> y(xv.shape);
    for (int n = 0; n < N; ++n) {
      const T* gp = gv.data.data() + static_cast<std::size_t>(n) * plane;
      for (int c = 0; c < C; ++c) {
        const T* xp = xv.data.data() + (static_cast<std::size_t>(n) * C + c) * plane;
        T* yp = y.data.data() + (static_cast<std::size_t>(n) * C + c) * plane;
        for (std::size_t i = 0; i < plane; ++i) yp[i] = xp[i] * gp[i];
      }
    }
    const Id id = push(std::move(y), needs(x) || needs(gate), nullptr);
    if (nodes_[id].needs_grad)
      nodes_[id].backward = [id, x, gate, N, C, plane](GraphT& g) {
        const TensorT<T>& dy = g.nodes_[id].grad;
        const TensorT<T>& xv2 = g.value(x);
        const TensorT<T>& gv2 = g.value(gate);
        for (int n = 0; n < N; ++n) {
          const T* gp = gv2.data.data() + static_cast<std::size_t>(n) * plane;
          for (int c = 0; c < C; ++c) {
            const std::size_t off = (static_cast<std::size_t>(n) * C + c) * plane;
            if (g.needs(x)) {
              TensorT<T>& dx = g.grad_buf(x);
              for (std::size_t i = 0; i < plane; ++i)
                dx.data[off + i] += dy.data[off + i] * gp[i];
            }
            if (g.needs(gate)) {
              TensorT<T>& dg = g.grad_buf(gate);
              for (std::size_t i = 0; i < plane; ++i)
                dg.data[static_cast<std::size_t>(n) * plane + i] +=
                    dy.data[off + i] * xv2.data[off + i];
            }
          }
        }
      };
    return id;
  }

  // Concatenate N x C_i x H x W feature maps along the channel axis.
  Id concat_channels(const std::vector<Id>& parts) {
    require(!parts.empty(), "concat_channels: no inputs");
    const TensorT<T>& first = value(parts[0]);
    const int N = first.dim(0), H = first.dim(2), W = first.dim(3);
    int Ctot = 0;
    bool any_grad = false;
    for (Id p : parts) {
      const TensorT<T>& v = value(p);
      require(v.dim(0) == N && v.dim(2) == H && v.dim(3) == W, "concat_channels: shape mismatch");
      Ctot += v.dim(1);
      any_grad = any_grad || needs(p);
    }
    const std::size_t plane = static_cast<std::size_t>(H) * W;
    TensorT<T> y({N, Ctot, H, W});
    for (int n = 0; n < N; ++n) {
      std::size_t coff = 0;
      for (Id p : parts) {
        const TensorT<T>& v = value(p);
        const std::size_t bytes = static_cast<std::size_t>(v.dim(1)) * plane;
        std::copy_n(v.data.data() + static_cast<std::size_t>(n) * bytes, bytes,
                    y.data.data() + (static_cast<std::size_t>(n) * Ctot) * plane + coff * plane);
        coff += static_cast<std::size_t>(v.dim(1));
      }
    }
    const Id id = push(std::move(y), any_grad, nullptr);
    if (nodes_[id].needs_grad)
      nodes_[id].backward = [id, parts, N, Ctot, plane](GraphT& g) {
        const TensorT<T>& dy = g.nodes_[id].grad;
        for (int n = 0; n < N; ++n) {
          std::size_t coff = 0;
          for (Id p : parts) {
            const int Ci = g.value(p).dim(1);
            if (g.needs(p)) {
              TensorT<T>& dp = g.grad_buf(p);
              const T* src =
                  dy.data.data() + (static_cast<std::size_t>(n) * Ctot + coff) * plane;
              T* dst = dp.data.data() + static_cast<std::size_t>(n) * Ci * plane;
              for (std::size_t i = 0; i < static_cast<std::size_t>(Ci) * plane; ++i)
                dst[i] += src[i];
            }
            coff += static_cast<std::size_t>(Ci);
          }
        }
      };
    return id;
  }

  // Concatenate N x D_i row vectors along the feature axis.
  Id concat_features(const std::vector<Id>& parts) {
    require(!parts.empty(), "concat_features: no inputs");
    const int N = value(parts[0]).dim(0);
    int Dtot = 0;
    bool any_grad = false;
    for (Id p : parts) {
      require(value(p).shape.size() == 2 && value(p).dim(0) == N,
              "concat_features: shape mismatch");
      Dtot += value(p).dim(1);
      any_grad = any_grad || needs(p);
    }
    TensorT<T> y({N, Dtot});
    for (int n = 0; n < N; ++n) {
      int off = 0;
      for (Id p : parts) {
        const TensorT<T>& v = value(p);
        std::copy_n(v.data.data() + static_cast<std::size_t>(n) * v.dim(1), v.dim(1),
                    y.data.data() + static_cast<std::size_t>(n) * Dtot + off);
        off += v.dim(1);
      }
    }
    const Id id = push(std::move(y), any_grad, nullptr);
    if (nodes_[id].needs_grad)
      nodes_[id].backward = [id, parts, N, Dtot](GraphT& g) {
        const TensorT<T>& dy = g.nodes_[id].grad;
        for (int n = 0; n < N; ++n) {
          int off = 0;
          for (Id p : parts) {
            const int Di = g.value(p).dim(1);
            if (g.needs(p)) {
              TensorT<T>& dp = g.grad_buf(p);
              for (int d = 0; d < Di; ++d)
                dp.data[static_cast<std::size_t>(n) * Di + d] +=
                    dy.data[static_cast<std::size_t>(n) * Dtot + off + d];
            }
            off += Di;
          }
        }
      };
    return id;
  }

  // Scalar mean cross-entropy between logits (N x K) and target class indices.
  Id softmax_cross_entropy(Id logits, std::vector<int> targets,
                           std::optional<std::vector<T>> class_weights) {
    TensorT<T> probs;
    const T loss = ops::softmax_cross_entropy(
        value(logits), targets, class_weights ? &*class_weights : nullptr, &probs);
    TensorT<T> y({1});
    y.data[0] = loss;
    const Id id = push(std::move(y), needs(logits), nullptr);
    if (nodes_[id].needs_grad)
      nodes_[id].backward = [id, logits, targets = std::move(targets),
                             class_weights = std::move(class_weights),
                             probs = std::move(probs)](GraphT& g) {
        TensorT<T> dl = ops::softmax_cross_entropy_backward(
            probs, targets, class_weights ? &*class_weights : nullptr);
        TensorT<T>& dst = g.grad_buf(logits);
        const T scale = g.nodes_[id].grad.data[0];
        for (std::size_t i = 0; i < dst.numel(); ++i) dst.data[i] += scale * dl.data[i];
      };
    return id;
  }

  // Scalar pick, used to seed class-gradient sweeps.
  Id select(Id x, std::size_t flat_index) {
    require(flat_index < value(x).numel(), "select: index out of range");
    TensorT<T> y({1});
    y.data[0] = value(x).data[flat_index];
    const Id id = push(std::move(y), needs(x), nullptr);
    if (nodes_[id].needs_grad)
      nodes_[id].backward = [id, x, flat_index](GraphT& g) {
        g.grad_buf(x).data[flat_index] += g.nodes_[id].grad.data[0];
      };
    return id;
  }

  // Reverse sweep from a scalar root. Parameter gradients accumulate into
  // their ParamStore entries.
  void backward(Id root) {
    if (nodes_.empty()) throw NnError(NnError::Kind::GraphNotBuilt, "backward: empty graph");
    check(root);
    require(nodes_[root].value.numel() == 1, "backward: root must be scalar");
    for (auto& n : nodes_) n.grad = TensorT<T>();
    grad_buf(root).data[0] = T(1);
    for (Id i = root; i >= 0; --i) {
      Node& n = nodes_[i];
      if (n.grad.numel() == 0) continue;
      if (n.backward) n.backward(*this);
      if (n.param)
        for (std::size_t k = 0; k < n.grad.numel(); ++k)
          n.param->grad.data[k] += n.grad.data[k];
    }
  }

  std::size_t node_count() const { return nodes_.size(); }

 private:
  struct Node {
    TensorT<T> value;
    TensorT<T> grad;  // empty until touched by a sweep
    bool needs_grad = false;
    ParameterT<T>* param = nullptr;
    std::function<void(GraphT&)> backward;
  };

  Id push(TensorT<T> value, bool needs_grad, ParameterT<T>* p) {
    Node n;
    n.value = std::move(value);
    n.needs_grad = needs_grad || p != nullptr;
    n.param = p;
    nodes_.push_back(std::move(n));
    return static_cast<Id>(nodes_.size() - 1);
  }

  Id check(Id id) const {
    if (id < 0 || id >= static_cast<Id>(nodes_.size()))
      throw NnError(NnError::Kind::GraphNotBuilt, "invalid node id");
    return id;
  }

  bool needs(Id id) const { return nodes_[check(id)].needs_grad; }

  TensorT<T>& grad_buf(Id id) {
    Node& n = nodes_[check(id)];
    if (n.grad.numel() == 0) n.grad = TensorT<T>(n.value.shape);
    return n.grad;
  }

  std::vector<Node> nodes_;
  std::map<const ParameterT<T>*, Id> param_ids_;
};

using Graph = GraphT<float>;

}  // namespace ctt
