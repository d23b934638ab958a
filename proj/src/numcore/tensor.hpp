#pragma once

#include <algorithm>
#include <cstddef>
#include <memory>
#include <string>
#include <unordered_map>
#include <vector>

#include "common/error.hpp"
#include "common/prng.hpp"

namespace fge {

// Recycles freed buffers by exact element count. A training step allocates
// the same few dozen activation shapes every iteration; reusing the pages is
// much cheaper than handing multi-megabyte blocks back to the allocator.
class BufferPool {
 public:
  static std::vector<double> take(std::size_t n, bool zeroed) {
    auto& buckets = instance();
    auto it = buckets.find(n);
    if (it == buckets.end() || it->second.empty())
      return std::vector<double>(n, 0.0);  // fresh memory arrives zeroed
    std::vector<double> v = std::move(it->second.back());
    it->second.pop_back();
    if (zeroed) std::fill(v.begin(), v.end(), 0.0);
    return v;
  }

  static void give(std::vector<double>&& v) {
    if (v.size() < kMinPooled) return;
    auto& bucket = instance()[v.size()];
    if (bucket.size() < kMaxPerBucket) bucket.push_back(std::move(v));
  }

 private:
  static constexpr std::size_t kMinPooled = 4096;
  static constexpr std::size_t kMaxPerBucket = 64;
  using Buckets = std::unordered_map<std::size_t, std::vector<std::vector<double>>>;
  static Buckets& instance() {
    thread_local Buckets b;
    return b;
  }
};

// Dense row-major f64 tensor. Also serves as an autodiff node payload:
// `grad` is allocated lazily and has the same length as `data` once touched
// by a backward pass.
struct Tensor {
  std::vector<std::size_t> shape;
  std::vector<double> data;
  bool requires_grad = false;
  std::vector<double> grad;  // empty until ensure_grad()

  Tensor() = default;
  explicit Tensor(std::vector<std::size_t> s) : shape(std::move(s)) {
    data = BufferPool::take(numel_of(shape), true);
  }
  Tensor(std::vector<std::size_t> s, std::vector<double> d)
      : shape(std::move(s)), data(std::move(d)) {
    if (data.size() != numel_of(shape))
      raise(ErrorCode::ShapeMismatch, "tensor data length does not match shape");
  }

  Tensor(const Tensor&) = default;
  Tensor& operator=(const Tensor&) = default;
  Tensor(Tensor&&) = default;
  Tensor& operator=(Tensor&&) = default;
  ~Tensor() {
    BufferPool::give(std::move(data));
    BufferPool::give(std::move(grad));
  }

  // For ops that overwrite every output element; contents are unspecified
  // when the buffer is recycled, so never read before writing.
  static Tensor uninit(std::vector<std::size_t> s) {
    Tensor t;
    t.shape = std::move(s);
    t.data = BufferPool::take(numel_of(t.shape), false);
    return t;
  }

  static std::size_t numel_of(const std::vector<std::size_t>& s) {
    std::size_t n = 1;
    for (auto d : s) n *= d;
    return n;
  }

  std::size_t numel() const { return data.size(); }
  std::size_t rank() const { return shape.size(); }

  // Rank-2 helpers; most ops treat tensors as matrices.
  std::size_t rows() const { return shape.empty() ? 1 : shape[0]; }
  std::size_t cols() const { return numel() / rows(); }

  double& at(std::size_t r, std::size_t c) { return data[r * cols() + c]; }
  double at(std::size_t r, std::size_t c) const { return data[r * cols() + c]; }

  void ensure_grad() {
    if (grad.size() != data.size()) grad = BufferPool::take(data.size(), true);
  }
  void zero_grad() {
    if (!grad.empty()) std::fill(grad.begin(), grad.end(), 0.0);
  }

  bool same_shape(const Tensor& o) const { return shape == o.shape; }

  static Tensor full(std::vector<std::size_t> s, double v) {
    Tensor t(std::move(s));
    std::fill(t.data.begin(), t.data.end(), v);
    return t;
  }
  static Tensor scalar(double v) { return Tensor({1}, {v}); }

  static Tensor randn(std::vector<std::size_t> s, Rng& rng, double stddev) {
    Tensor t(std::move(s));
    for (auto& v : t.data) v = rng.gauss(0.0, stddev);
    return t;
  }
};

using TensorPtr = std::shared_ptr<Tensor>;

inline TensorPtr make_tensor(Tensor t) {
  return std::make_shared<Tensor>(std::move(t));
}

inline std::string shape_str(const std::vector<std::size_t>& s) {
  std::string out = "(";
  for (std::size_t i = 0; i < s.size(); ++i) {
    if (i) out += ",";
    out += std::to_string(s[i]);
  }
  out += ")";
  return out;
}

}  // namespace fge
