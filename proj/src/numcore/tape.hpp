#pragma once

#include <cstddef>
#include <functional>
#include <utility>
#include <vector>

#include "numcore/tensor.hpp"

namespace fge {

// Reverse-mode tape. Ops compute eagerly and record a backward closure when
// any input has requires_grad set; backward() replays closures in reverse.
// A tape is single-use: build a graph, call backward once, discard.
//
// Persistent parameters are plain TensorPtr values passed into ops; their
// .grad accumulates across tapes until explicitly zeroed.
class Tape {
 public:
  TensorPtr leaf(Tensor t, bool requires_grad = false);

  // elementwise / arithmetic
  TensorPtr add(const TensorPtr& a, const TensorPtr& b);
  TensorPtr sub(const TensorPtr& a, const TensorPtr& b);
  TensorPtr mul(const TensorPtr& a, const TensorPtr& b);
  TensorPtr scale(const TensorPtr& a, double c);
  TensorPtr add_const(const TensorPtr& a, double c);
  TensorPtr exp(const TensorPtr& a);
  TensorPtr gelu(const TensorPtr& a);
  TensorPtr tanh(const TensorPtr& a);
  // multiply every element of x by a scalar node s (shape {1})
  TensorPtr scale_by(const TensorPtr& x, const TensorPtr& s);

  // linear algebra
  TensorPtr matmul(const TensorPtr& a, const TensorPtr& b);
  // x {m,k} * w {k,n} + row-broadcast bias, fused into one node
  TensorPtr linear(const TensorPtr& x, const TensorPtr& w, const TensorPtr& b);
  TensorPtr transpose(const TensorPtr& a);
  TensorPtr add_rowvec(const TensorPtr& x, const TensorPtr& b);

  // normalization / reductions
  TensorPtr layernorm(const TensorPtr& x, const TensorPtr& g,
                      const TensorPtr& b, double eps = 1e-5);
  TensorPtr softmax_rows(const TensorPtr& x);
  TensorPtr l2_normalize(const TensorPtr& x, std::size_t axis);
  TensorPtr cosine(const TensorPtr& a, const TensorPtr& b);
  TensorPtr sum(const TensorPtr& x);
  TensorPtr mean(const TensorPtr& x);

  // losses
  TensorPtr cross_entropy_rows(const TensorPtr& logits,
                               const std::vector<std::size_t>& targets);
  TensorPtr bce_with_logits(const TensorPtr& logits,
                            const std::vector<double>& labels);

  // shape / token plumbing
  TensorPtr patchify(const TensorPtr& img, std::size_t patch);
  TensorPtr prepend_token(const TensorPtr& x, const TensorPtr& tok,
                          std::size_t batch);
  TensorPtr add_pos(const TensorPtr& x, const TensorPtr& pos,
                    std::size_t batch);
  TensorPtr select_cls_rows(const TensorPtr& x, std::size_t batch,
                            std::size_t len);
  TensorPtr gather_rows(const TensorPtr& table,
                        const std::vector<std::size_t>& ids);
  TensorPtr mean_pool(const TensorPtr& x, std::size_t batch, std::size_t len,
                      const std::vector<std::size_t>& lens);

  // attention over packed qkv rows; lens masks keys per batch element
  TensorPtr attention(const TensorPtr& qkv, std::size_t batch, std::size_t len,
                      const std::vector<std::size_t>& lens, std::size_t heads);

  // image ops (H,W,C layout)
  TensorPtr depthwise_conv2d(const TensorPtr& x, const Tensor& kernel,
                             std::size_t anchor_r, std::size_t anchor_c);
  TensorPtr bilinear_resize(const TensorPtr& x, std::size_t oh, std::size_t ow);

  void backward(const TensorPtr& loss);

  // When on, every op validates that its output is finite. Used by tests;
  // off by default to keep training hot loops lean.
  static void set_finite_checks(bool on);
  static bool finite_checks();

 private:
  std::vector<std::function<void()>> nodes_;
  bool ran_backward_ = false;
};

// Adam with bias correction; state per parameter tensor.
struct AdamState {
  std::size_t t = 0;
  std::vector<double> m, v;
};

struct AdamConfig {
  double lr = 3e-4;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
};

// One update step for a parameter set; grads[i] must match params[i] in shape.
void adam_step(const std::vector<TensorPtr>& params,
               std::vector<AdamState>& states, const AdamConfig& cfg);

// Max relative error between tape gradients of f at x and central finite
// differences: max_i |analytic_i - fd_i| / max(1, |fd_i|). When coords is
// non-null only those flat indices are probed.
double grad_check(
    const std::function<TensorPtr(Tape&, const TensorPtr&)>& f,
    const Tensor& x, double h,
    const std::vector<std::size_t>* coords = nullptr);

}  // namespace fge
