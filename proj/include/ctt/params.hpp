#pragma once

#include <cmath>
#include <map>
#include <memory>
#include <string>
#include <vector>

#include "ctt/rng.hpp"
#include "ctt/tensor.hpp"

namespace ctt {

// One learnable tensor plus its gradient and optimizer moments. Gradients
// accumulate across backward() calls until zero_grad(). Non-trainable entries
// (batch-norm running statistics) ride along for serialization but are left
// alone by the optimizer.
template <class T>
struct ParameterT {
  std::string name;
  bool trainable = true;
  TensorT<T> value;
  TensorT<T> grad;
  TensorT<T> m;  // first moment
  TensorT<T> v;  // second moment

  ParameterT(std::string n, Shape shape, bool train)
      : name(std::move(n)), trainable(train), value(shape), grad(shape), m(shape),
        v(std::move(shape)) {}
};

struct AdamConfig {
  float lr = 1e-3f;
  float beta1 = 0.9f;
  float beta2 = 0.999f;
  float eps = 1e-8f;
};

// Named, ordered set of learnable tensors. Iteration follows registration
// order so that seeded initialization and optimizer sweeps are deterministic.
template <class T>
class ParamStoreT {
 public:
  ParameterT<T>& add(const std::string& name, Shape shape, bool trainable = true) {
    if (index_.count(name))
      throw NnError(NnError::Kind::IncompatibleWeights, "duplicate parameter name: " + name);
    params_.push_back(std::make_unique<ParameterT<T>>(name, std::move(shape), trainable));
    index_[name] = params_.size() - 1;
    return *params_.back();
  }

  ParameterT<T>& get(const std::string& name) {
    auto it = index_.find(name);
    if (it == index_.end())
      throw NnError(NnError::Kind::IncompatibleWeights, "unknown parameter: " + name);
    return *params_[it->second];
  }
  const ParameterT<T>& get(const std::string& name) const {
    return const_cast<ParamStoreT*>(this)->get(name);
  }
  bool contains(const std::string& name) const { return index_.count(name) != 0; }

  std::size_t size() const { return params_.size(); }
  ParameterT<T>& at(std::size_t i) { return *params_[i]; }
  const ParameterT<T>& at(std::size_t i) const { return *params_[i]; }

  std::size_t total_scalars() const {
    std::size_t n = 0;
    for (const auto& p : params_) n += p->value.numel();
    return n;
  }

  std::size_t trainable_scalars() const {
    std::size_t n = 0;
    for (const auto& p : params_)
      if (p->trainable) n += p->value.numel();
    return n;
  }

  void zero_grad() {
    for (auto& p : params_)
      std::fill(p->grad.data.begin(), p->grad.data.end(), T(0));
  }

  // Adam with bias correction. A zero gradient leaves the parameter unchanged.
  void adam_step(const AdamConfig& cfg) {
    ++step_;
    const double b1t = 1.0 - std::pow(static_cast<double>(cfg.beta1), step_);
    const double b2t = 1.0 - std::pow(static_cast<double>(cfg.beta2), step_);
    for (auto& p : params_) {
      if (!p->trainable) continue;
      for (std::size_t i = 0; i < p->value.numel(); ++i) {
        const double g = p->grad.data[i];
        const double m = cfg.beta1 * p->m.data[i] + (1.0 - cfg.beta1) * g;
        const double v = cfg.beta2 * p->v.data[i] + (1.0 - cfg.beta2) * g * g;
        p->m.data[i] = static_cast<T>(m);
        p->v.data[i] = static_cast<T>(v);
        const double mhat = m / b1t;
        const double vhat = v / b2t;
        p->value.data[i] -=
            static_cast<T>(cfg.lr * mhat / (std::sqrt(vhat) + cfg.eps));
      }
    }
  }

  long step_count() const { return step_; }

  std::vector<TensorT<T>> snapshot_values() const {
    std::vector<TensorT<T>> out;
    out.reserve(params_.size());
    for (const auto& p : params_) out.push_back(p->value);
    return out;
  }

  void restore_values(const std::vector<TensorT<T>>& values) {
    if (values.size() != params_.size())
      throw NnError(NnError::Kind::IncompatibleWeights, "snapshot size mismatch");
    for (std::size_t i = 0; i < values.size(); ++i) {
      if (values[i].shape != params_[i]->value.shape)
        throw NnError(NnError::Kind::IncompatibleWeights, "snapshot shape mismatch");
      params_[i]->value = values[i];
    }
  }

 private:
  std::vector<std::unique_ptr<ParameterT<T>>> params_;
  std::map<std::string, std::size_t> index_;
  long step_ = 0;
};

using ParamStore = ParamStoreT<float>;

// He fan-in scaled normal init for a conv/linear weight tensor.
template <class T>
void init_he_normal(TensorT<T>& t, std::size_t fan_in, Rng& rng) {
  const double stddev = std::sqrt(2.0 / static_cast<double>(fan_in));
  for (auto& v : t.data) v = static_cast<T>(rng.normal(0.0, stddev));
}

}  // namespace ctt
