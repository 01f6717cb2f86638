#pragma once

#include <cstddef>
#include <initializer_list>
#include <numeric>
#include <stdexcept>
#include <string>
#include <vector>

namespace ctt {

// Errors raised by the tensor / network core.
class NnError : public std::runtime_error {
 public:
  enum class Kind {
    ShapeMismatch,
    GraphNotBuilt,
    CorruptWeights,
    IncompatibleWeights,
  };
  NnError(Kind kind, const std::string& what) : std::runtime_error(what), kind_(kind) {}
  Kind kind() const { return kind_; }

 private:
  Kind kind_;
};

using Shape = std::vector<int>;

inline std::size_t shape_numel(const Shape& s) {
  std::size_t n = 1;
  for (int d : s) {
    if (d <= 0) throw NnError(NnError::Kind::ShapeMismatch, "non-positive shape dimension");
    n *= static_cast<std::size_t>(d);
  }
  return n;
}

inline std::string shape_str(const Shape& s) {
  std::string out = "[";
  for (std::size_t i = 0; i < s.size(); ++i) {
    if (i) out += "x";
    out += std::to_string(s[i]);
  }
  return out + "]";
}

// Dense row-major tensor. Layouts in use: N x C x H x W, N x D, C, D x K.
template <class T>
struct TensorT {
  Shape shape;
  std::vector<T> data;

  TensorT() = default;
  explicit TensorT(Shape s) : shape(std::move(s)), data(shape_numel(shape), T(0)) {}
  TensorT(Shape s, std::vector<T> d) : shape(std::move(s)), data(std::move(d)) {
    if (data.size() != shape_numel(shape))
      throw NnError(NnError::Kind::ShapeMismatch, "data length does not match shape");
  }

  std::size_t numel() const { return data.size(); }
  int dim(std::size_t i) const { return shape.at(i); }

  T& at(std::initializer_list<int> idx) {
    return data[flat_index(idx)];
  }
  T at(std::initializer_list<int> idx) const {
    return data[flat_index(idx)];
  }

  std::size_t flat_index(std::initializer_list<int> idx) const {
    if (idx.size() != shape.size())
      throw NnError(NnError::Kind::ShapeMismatch, "index rank mismatch");
    std::size_t flat = 0;
    std::size_t k = 0;
    for (int i : idx) {
      flat = flat * static_cast<std::size_t>(shape[k]) + static_cast<std::size_t>(i);
      ++k;
    }
    return flat;
  }

  template <class U>
  TensorT<U> cast() const {
    TensorT<U> out(shape);
    for (std::size_t i = 0; i < data.size(); ++i) out.data[i] = static_cast<U>(data[i]);
    return out;
  }
};

using Tensor = TensorT<float>;

template <class T>
inline bool same_shape(const TensorT<T>& a, const TensorT<T>& b) {
  return a.shape == b.shape;
}

inline void require(bool cond, const char* msg) {
  if (!cond) throw NnError(NnError::Kind::ShapeMismatch, msg);
}

}  // namespace ctt
