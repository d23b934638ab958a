#include "numcore/tape.hpp"

#include <cmath>

#if defined(__GLIBC__)
#include <malloc.h>
#endif

#include "numcore/gemm.hpp"

namespace fge {

namespace {

// Activation buffers run to megabytes and churn every tape; keeping them on
// the heap instead of handing pages back to the kernel avoids refaulting the
// same memory thousands of times per run.
const bool g_heap_tuned = [] {
#if defined(__GLIBC__)
  mallopt(M_MMAP_THRESHOLD, 1 << 30);
  mallopt(M_TRIM_THRESHOLD, 1 << 30);
#endif
  return true;
}();

bool g_finite_checks = false;

void check_finite(const Tensor& t, const char* op) {
  for (double v : t.data)
    if (!std::isfinite(v))
      raise(ErrorCode::Internal,
            std::string("non-finite value produced by op ") + op);
}

void require(bool cond, ErrorCode code, const std::string& msg) {
  if (!cond) raise(code, msg);
}

// Mirror an index into [0, n) without repeating the border sample
// (index -1 maps to 1, index n maps to n-2).
std::size_t mirror101(long i, long n) {
  while (i < 0 || i >= n) {
    if (i < 0) i = -i;
    if (i >= n) i = 2 * n - 2 - i;
  }
  return static_cast<std::size_t>(i);
}

constexpr double kNormFloor = 1e-12;

double l2_norm(const double* v, std::size_t n) {
  double s = 0.0;
  for (std::size_t i = 0; i < n; ++i) s += v[i] * v[i];
  return std::sqrt(s);
}

}  // namespace

void Tape::set_finite_checks(bool on) { g_finite_checks = on; }
bool Tape::finite_checks() { return g_finite_checks; }

// Wraps the computed output; registers the backward closure when tracking.
#define FGE_FINISH(OPNAME, OUT_TENSOR, TRACK, ...)              \
  do {                                                          \
    if (g_finite_checks) check_finite(OUT_TENSOR, OPNAME);      \
    auto out = make_tensor(std::move(OUT_TENSOR));              \
    if (TRACK) {                                                \
      out->requires_grad = true;                                \
      nodes_.push_back(__VA_ARGS__);                            \
    }                                                           \
    return out;                                                 \
  } while (0)

void Tape::backward(const TensorPtr& loss) {
  require(loss->numel() == 1, ErrorCode::NotScalar,
          "backward target must hold exactly one element, got shape " +
              shape_str(loss->shape));
  require(!ran_backward_, ErrorCode::Internal, "tape backward called twice");
  ran_backward_ = true;
  loss->ensure_grad();
  loss->grad[0] += 1.0;
  for (auto it = nodes_.rbegin(); it != nodes_.rend(); ++it) (*it)();
}

TensorPtr Tape::leaf(Tensor t, bool requires_grad) {
  if (g_finite_checks) check_finite(t, "leaf");
  auto p = make_tensor(std::move(t));
  p->requires_grad = requires_grad;
  return p;
}

// ---- elementwise -----------------------------------------------------------

TensorPtr Tape::add(const TensorPtr& a, const TensorPtr& b) {
  require(a->same_shape(*b), ErrorCode::ShapeMismatch,
          "add: " + shape_str(a->shape) + " vs " + shape_str(b->shape));
  Tensor o = Tensor::uninit(a->shape);
  for (std::size_t i = 0; i < o.numel(); ++i)
    o.data[i] = a->data[i] + b->data[i];
  const bool tr = a->requires_grad || b->requires_grad;
  FGE_FINISH("add", o, tr, [out, a, b] {
    out->ensure_grad();
    if (a->requires_grad) {
      a->ensure_grad();
      for (std::size_t i = 0; i < out->numel(); ++i) a->grad[i] += out->grad[i];
    }
    if (b->requires_grad) {
      b->ensure_grad();
      for (std::size_t i = 0; i < out->numel(); ++i) b->grad[i] += out->grad[i];
    }
  });
}

TensorPtr Tape::sub(const TensorPtr& a, const TensorPtr& b) {
  require(a->same_shape(*b), ErrorCode::ShapeMismatch,
          "sub: " + shape_str(a->shape) + " vs " + shape_str(b->shape));
  Tensor o = Tensor::uninit(a->shape);
  for (std::size_t i = 0; i < o.numel(); ++i)
    o.data[i] = a->data[i] - b->data[i];
  const bool tr = a->requires_grad || b->requires_grad;
  FGE_FINISH("sub", o, tr, [out, a, b] {
    out->ensure_grad();
    if (a->requires_grad) {
      a->ensure_grad();
      for (std::size_t i = 0; i < out->numel(); ++i) a->grad[i] += out->grad[i];
    }
    if (b->requires_grad) {
      b->ensure_grad();
      for (std::size_t i = 0; i < out->numel(); ++i) b->grad[i] -= out->grad[i];
    }
  });
}

TensorPtr Tape::mul(const TensorPtr& a, const TensorPtr& b) {
  require(a->same_shape(*b), ErrorCode::ShapeMismatch,
          "mul: " + shape_str(a->shape) + " vs " + shape_str(b->shape));
  Tensor o(a->shape);
  for (std::size_t i = 0; i < o.numel(); ++i)
    o.data[i] = a->data[i] * b->data[i];
  const bool tr = a->requires_grad || b->requires_grad;
  FGE_FINISH("mul", o, tr, [out, a, b] {
    out->ensure_grad();
    if (a->requires_grad) {
      a->ensure_grad();
      for (std::size_t i = 0; i < out->numel(); ++i)
        a->grad[i] += out->grad[i] * b->data[i];
    }
    if (b->requires_grad) {
      b->ensure_grad();
      for (std::size_t i = 0; i < out->numel(); ++i)
        b->grad[i] += out->grad[i] * a->data[i];
    }
  });
}

TensorPtr Tape::scale(const TensorPtr& a, double c) {
  Tensor o(a->shape);
  for (std::size_t i = 0; i < o.numel(); ++i) o.data[i] = a->data[i] * c;
  const bool tr = a->requires_grad;
  FGE_FINISH("scale", o, tr, [out, a, c] {
    out->ensure_grad();
    a->ensure_grad();
    for (std::size_t i = 0; i < out->numel(); ++i)
      a->grad[i] += out->grad[i] * c;
  });
}

TensorPtr Tape::add_const(const TensorPtr& a, double c) {
  Tensor o(a->shape);
  for (std::size_t i = 0; i < o.numel(); ++i) o.data[i] = a->data[i] + c;
  const bool tr = a->requires_grad;
  FGE_FINISH("add_const", o, tr, [out, a] {
    out->ensure_grad();
    a->ensure_grad();
    for (std::size_t i = 0; i < out->numel(); ++i) a->grad[i] += out->grad[i];
  });
}

TensorPtr Tape::exp(const TensorPtr& a) {
  Tensor o(a->shape);
  for (std::size_t i = 0; i < o.numel(); ++i) o.data[i] = std::exp(a->data[i]);
  const bool tr = a->requires_grad;
  FGE_FINISH("exp", o, tr, [out, a] {
    out->ensure_grad();
    a->ensure_grad();
    for (std::size_t i = 0; i < out->numel(); ++i)
      a->grad[i] += out->grad[i] * out->data[i];
  });
}

TensorPtr Tape::gelu(const TensorPtr& a) {
  // Exact erf form; derivative is Phi(x) + x * phi(x).
  Tensor o = Tensor::uninit(a->shape);
  constexpr double inv_sqrt2 = 0.70710678118654752440;
  for (std::size_t i = 0; i < o.numel(); ++i) {
    const double x = a->data[i];
    o.data[i] = 0.5 * x * (1.0 + std::erf(x * inv_sqrt2));
  }
  const bool tr = a->requires_grad;
  FGE_FINISH("gelu", o, tr, [out, a] {
    out->ensure_grad();
    a->ensure_grad();
    constexpr double inv_sqrt2 = 0.70710678118654752440;
    constexpr double inv_sqrt2pi = 0.39894228040143267794;
    for (std::size_t i = 0; i < out->numel(); ++i) {
      const double x = a->data[i];
      const double cdf = 0.5 * (1.0 + std::erf(x * inv_sqrt2));
      const double pdf = inv_sqrt2pi * std::exp(-0.5 * x * x);
      a->grad[i] += out->grad[i] * (cdf + x * pdf);
    }
  });
}

TensorPtr Tape::tanh(const TensorPtr& a) {
  Tensor o(a->shape);
  for (std::size_t i = 0; i < o.numel(); ++i) o.data[i] = std::tanh(a->data[i]);
  const bool tr = a->requires_grad;
  FGE_FINISH("tanh", o, tr, [out, a] {
    out->ensure_grad();
    a->ensure_grad();
    for (std::size_t i = 0; i < out->numel(); ++i) {
      const double y = out->data[i];
      a->grad[i] += out->grad[i] * (1.0 - y * y);
    }
  });
}

TensorPtr Tape::scale_by(const TensorPtr& x, const TensorPtr& s) {
  require(s->numel() == 1, ErrorCode::NotScalar,
          "scale_by: multiplier must be a scalar, got " + shape_str(s->shape));
  Tensor o(x->shape);
  const double sv = s->data[0];
  for (std::size_t i = 0; i < o.numel(); ++i) o.data[i] = x->data[i] * sv;
  const bool tr = x->requires_grad || s->requires_grad;
  FGE_FINISH("scale_by", o, tr, [out, x, s] {
    out->ensure_grad();
    if (x->requires_grad) {
      x->ensure_grad();
      const double sv = s->data[0];
      for (std::size_t i = 0; i < out->numel(); ++i)
        x->grad[i] += out->grad[i] * sv;
    }
    if (s->requires_grad) {
      s->ensure_grad();
      double acc = 0.0;
      for (std::size_t i = 0; i < out->numel(); ++i)
        acc += out->grad[i] * x->data[i];
      s->grad[0] += acc;
    }
  });
}

// ---- linear algebra --------------------------------------------------------

TensorPtr Tape::matmul(const TensorPtr& a, const TensorPtr& b) {
  require(a->rank() == 2 && b->rank() == 2, ErrorCode::ShapeMismatch,
          "matmul expects rank-2 operands, got " + shape_str(a->shape) +
              " and " + shape_str(b->shape));
  const std::size_t m = a->shape[0], k = a->shape[1];
  require(b->shape[0] == k, ErrorCode::ShapeMismatch,
          "matmul: inner dimensions disagree, " + shape_str(a->shape) +
              " x " + shape_str(b->shape));
  const std::size_t n = b->shape[1];
  Tensor o({m, n});  // construction zeroes the buffer, so accumulate in place
  gemm_acc(a->data.data(), b->data.data(), o.data.data(), m, k, n);
  const bool tr = a->requires_grad || b->requires_grad;
  FGE_FINISH("matmul", o, tr, [out, a, b, m, k, n] {
    out->ensure_grad();
    if (a->requires_grad) {
      a->ensure_grad();
      // dA += dC * B^T
      gemm_bt_acc(out->grad.data(), b->data.data(), a->grad.data(), m, n, k);
    }
    if (b->requires_grad) {
      b->ensure_grad();
      // dB += A^T * dC
      gemm_at_acc(a->data.data(), out->grad.data(), b->grad.data(), k, m, n);
    }
  });
}

TensorPtr Tape::linear(const TensorPtr& x, const TensorPtr& w,
                       const TensorPtr& b) {
  require(x->rank() == 2 && w->rank() == 2, ErrorCode::ShapeMismatch,
          "linear expects rank-2 operands, got " + shape_str(x->shape) +
              " and " + shape_str(w->shape));
  const std::size_t m = x->shape[0], k = x->shape[1];
  require(w->shape[0] == k, ErrorCode::ShapeMismatch,
          "linear: inner dimensions disagree, " + shape_str(x->shape) +
              " x " + shape_str(w->shape));
  const std::size_t n = w->shape[1];
  require(b->numel() == n, ErrorCode::ShapeMismatch,
          "linear: bias length " + std::to_string(b->numel()) +
              " vs output width " + std::to_string(n));
  Tensor o = Tensor::uninit({m, n});
  for (std::size_t i = 0; i < m; ++i)
    for (std::size_t j = 0; j < n; ++j) o.data[i * n + j] = b->data[j];
  gemm_acc(x->data.data(), w->data.data(), o.data.data(), m, k, n);
  const bool tr = x->requires_grad || w->requires_grad || b->requires_grad;
  FGE_FINISH("linear", o, tr, [out, x, w, b, m, k, n] {
    out->ensure_grad();
    if (x->requires_grad) {
      x->ensure_grad();
      gemm_bt_acc(out->grad.data(), w->data.data(), x->grad.data(), m, n, k);
    }
    if (w->requires_grad) {
      w->ensure_grad();
      gemm_at_acc(x->data.data(), out->grad.data(), w->grad.data(), k, m, n);
    }
    if (b->requires_grad) {
      b->ensure_grad();
      for (std::size_t i = 0; i < m; ++i)
        for (std::size_t j = 0; j < n; ++j)
          b->grad[j] += out->grad[i * n + j];
    }
  });
}

TensorPtr Tape::transpose(const TensorPtr& a) {
  require(a->rank() == 2, ErrorCode::ShapeMismatch,
          "transpose expects rank-2, got " + shape_str(a->shape));
  const std::size_t r = a->shape[0], c = a->shape[1];
  Tensor o({c, r});
  for (std::size_t i = 0; i < r; ++i)
    for (std::size_t j = 0; j < c; ++j) o.data[j * r + i] = a->data[i * c + j];
  const bool tr = a->requires_grad;
  FGE_FINISH("transpose", o, tr, [out, a, r, c] {
    out->ensure_grad();
    a->ensure_grad();
    for (std::size_t i = 0; i < r; ++i)
      for (std::size_t j = 0; j < c; ++j)
        a->grad[i * c + j] += out->grad[j * r + i];
  });
}

TensorPtr Tape::add_rowvec(const TensorPtr& x, const TensorPtr& b) {
  require(x->rank() == 2, ErrorCode::ShapeMismatch,
          "add_rowvec expects rank-2 input, got " + shape_str(x->shape));
  const std::size_t r = x->shape[0], c = x->shape[1];
  require(b->numel() == c, ErrorCode::ShapeMismatch,
          "add_rowvec: vector length " + std::to_string(b->numel()) +
              " vs row width " + std::to_string(c));
  Tensor o({r, c});
  for (std::size_t i = 0; i < r; ++i)
    for (std::size_t j = 0; j < c; ++j)
      o.data[i * c + j] = x->data[i * c + j] + b->data[j];
  const bool tr = x->requires_grad || b->requires_grad;
  FGE_FINISH("add_rowvec", o, tr, [out, x, b, r, c] {
    out->ensure_grad();
    if (x->requires_grad) {
      x->ensure_grad();
      for (std::size_t i = 0; i < r * c; ++i) x->grad[i] += out->grad[i];
    }
    if (b->requires_grad) {
      b->ensure_grad();
      for (std::size_t i = 0; i < r; ++i)
        for (std::size_t j = 0; j < c; ++j) b->grad[j] += out->grad[i * c + j];
    }
  });
}

// ---- normalization / reductions -------------------------------------------

TensorPtr Tape::layernorm(const TensorPtr& x, const TensorPtr& g,
                          const TensorPtr& b, double eps) {
  require(x->rank() == 2, ErrorCode::ShapeMismatch,
          "layernorm expects rank-2 input, got " + shape_str(x->shape));
  const std::size_t r = x->shape[0], c = x->shape[1];
  require(g->numel() == c && b->numel() == c, ErrorCode::ShapeMismatch,
          "layernorm: gain/bias length must equal row width " +
              std::to_string(c));
  Tensor o = Tensor::uninit({r, c});
  auto mean = std::make_shared<std::vector<double>>(r);
  auto rstd = std::make_shared<std::vector<double>>(r);
  for (std::size_t i = 0; i < r; ++i) {
    const double* row = &x->data[i * c];
    double m = 0.0;
    for (std::size_t j = 0; j < c; ++j) m += row[j];
    m /= static_cast<double>(c);
    double var = 0.0;
    for (std::size_t j = 0; j < c; ++j) {
      const double d = row[j] - m;
      var += d * d;
    }
    var /= static_cast<double>(c);
    const double rs = 1.0 / std::sqrt(var + eps);
    (*mean)[i] = m;
    (*rstd)[i] = rs;
    for (std::size_t j = 0; j < c; ++j)
      o.data[i * c + j] = (row[j] - m) * rs * g->data[j] + b->data[j];
  }
  const bool tr = x->requires_grad || g->requires_grad || b->requires_grad;
  FGE_FINISH("layernorm", o, tr, [out, x, g, b, mean, rstd, r, c] {
    out->ensure_grad();
    std::vector<double> xhat(c), q(c);
    for (std::size_t i = 0; i < r; ++i) {
      const double* row = &x->data[i * c];
      const double* dy = &out->grad[i * c];
      const double m = (*mean)[i], rs = (*rstd)[i];
      for (std::size_t j = 0; j < c; ++j) xhat[j] = (row[j] - m) * rs;
      if (g->requires_grad) {
        g->ensure_grad();
        for (std::size_t j = 0; j < c; ++j) g->grad[j] += dy[j] * xhat[j];
      }
      if (b->requires_grad) {
        b->ensure_grad();
        for (std::size_t j = 0; j < c; ++j) b->grad[j] += dy[j];
      }
      if (x->requires_grad) {
        x->ensure_grad();
        double s1 = 0.0, s2 = 0.0;
        for (std::size_t j = 0; j < c; ++j) {
          q[j] = dy[j] * g->data[j];
          s1 += q[j];
          s2 += q[j] * xhat[j];
        }
        s1 /= static_cast<double>(c);
        s2 /= static_cast<double>(c);
        for (std::size_t j = 0; j < c; ++j)
          x->grad[i * c + j] += rs * (q[j] - s1 - xhat[j] * s2);
      }
    }
  });
}

TensorPtr Tape::softmax_rows(const TensorPtr& x) {
  require(x->rank() == 2, ErrorCode::ShapeMismatch,
          "softmax_rows expects rank-2, got " + shape_str(x->shape));
  const std::size_t r = x->shape[0], c = x->shape[1];
  Tensor o({r, c});
  for (std::size_t i = 0; i < r; ++i) {
    const double* row = &x->data[i * c];
    double mx = row[0];
    for (std::size_t j = 1; j < c; ++j) mx = std::max(mx, row[j]);
    double z = 0.0;
    for (std::size_t j = 0; j < c; ++j) {
      const double e = std::exp(row[j] - mx);
      o.data[i * c + j] = e;
      z += e;
    }
    for (std::size_t j = 0; j < c; ++j) o.data[i * c + j] /= z;
  }
  const bool tr = x->requires_grad;
  FGE_FINISH("softmax_rows", o, tr, [out, x, r, c] {
    out->ensure_grad();
    x->ensure_grad();
    for (std::size_t i = 0; i < r; ++i) {
      const double* p = &out->data[i * c];
      const double* dy = &out->grad[i * c];
      double dot = 0.0;
      for (std::size_t j = 0; j < c; ++j) dot += p[j] * dy[j];
      for (std::size_t j = 0; j < c; ++j)
        x->grad[i * c + j] += p[j] * (dy[j] - dot);
    }
  });
}

TensorPtr Tape::l2_normalize(const TensorPtr& x, std::size_t axis) {
  const bool rows_mode = (x->rank() == 2 && axis == 1);
  const bool vec_mode = (x->rank() == 1 && axis == 0);
  require(rows_mode || vec_mode, ErrorCode::InvalidArg,
          "l2_normalize: unsupported axis " + std::to_string(axis) +
              " for shape " + shape_str(x->shape));
  const std::size_t r = rows_mode ? x->shape[0] : 1;
  const std::size_t c = rows_mode ? x->shape[1] : x->numel();
  Tensor o(x->shape);
  auto norms = std::make_shared<std::vector<double>>(r);
  for (std::size_t i = 0; i < r; ++i) {
    const double n = l2_norm(&x->data[i * c], c);
    require(n > kNormFloor, ErrorCode::DegenerateNorm,
            "l2_normalize: norm " + std::to_string(n) + " at slice " +
                std::to_string(i) + " is below 1e-12");
    (*norms)[i] = n;
    for (std::size_t j = 0; j < c; ++j) o.data[i * c + j] = x->data[i * c + j] / n;
  }
  const bool tr = x->requires_grad;
  FGE_FINISH("l2_normalize", o, tr, [out, x, norms, r, c] {
    out->ensure_grad();
    x->ensure_grad();
    for (std::size_t i = 0; i < r; ++i) {
      const double* y = &out->data[i * c];
      const double* dy = &out->grad[i * c];
      const double n = (*norms)[i];
      double dot = 0.0;
      for (std::size_t j = 0; j < c; ++j) dot += y[j] * dy[j];
      for (std::size_t j = 0; j < c; ++j)
        x->grad[i * c + j] += (dy[j] - y[j] * dot) / n;
    }
  });
}

TensorPtr Tape::cosine(const TensorPtr& a, const TensorPtr& b) {
  require(a->numel() == b->numel(), ErrorCode::ShapeMismatch,
          "cosine: element counts differ, " + shape_str(a->shape) + " vs " +
              shape_str(b->shape));
  const std::size_t n = a->numel();
  const double na = l2_norm(a->data.data(), n);
  const double nb = l2_norm(b->data.data(), n);
  require(na > kNormFloor && nb > kNormFloor, ErrorCode::DegenerateNorm,
          "cosine: input norm below 1e-12");
  double dot = 0.0;
  for (std::size_t i = 0; i < n; ++i) dot += a->data[i] * b->data[i];
  const double cv = dot / (na * nb);
  Tensor o = Tensor::scalar(cv);
  const bool tr = a->requires_grad || b->requires_grad;
  FGE_FINISH("cosine", o, tr, [out, a, b, na, nb, cv, n] {
    out->ensure_grad();
    const double go = out->grad[0];
    if (a->requires_grad) {
      a->ensure_grad();
      for (std::size_t i = 0; i < n; ++i)
        a->grad[i] +=
            go * (b->data[i] / (na * nb) - cv * a->data[i] / (na * na));
    }
    if (b->requires_grad) {
      b->ensure_grad();
      for (std::size_t i = 0; i < n; ++i)
        b->grad[i] +=
            go * (a->data[i] / (na * nb) - cv * b->data[i] / (nb * nb));
    }
  });
}

TensorPtr Tape::sum(const TensorPtr& x) {
  double s = 0.0;
  for (double v : x->data) s += v;
  Tensor o = Tensor::scalar(s);
  const bool tr = x->requires_grad;
  FGE_FINISH("sum", o, tr, [out, x] {
    out->ensure_grad();
    x->ensure_grad();
    const double g = out->grad[0];
    for (std::size_t i = 0; i < x->numel(); ++i) x->grad[i] += g;
  });
}

TensorPtr Tape::mean(const TensorPtr& x) {
  require(x->numel() > 0, ErrorCode::ShapeMismatch, "mean of empty tensor");
  double s = 0.0;
  for (double v : x->data) s += v;
  const double inv = 1.0 / static_cast<double>(x->numel());
  Tensor o = Tensor::scalar(s * inv);
  const bool tr = x->requires_grad;
  FGE_FINISH("mean", o, tr, [out, x, inv] {
    out->ensure_grad();
    x->ensure_grad();
    const double g = out->grad[0] * inv;
    for (std::size_t i = 0; i < x->numel(); ++i) x->grad[i] += g;
  });
}

// ---- losses ----------------------------------------------------------------

TensorPtr Tape::cross_entropy_rows(const TensorPtr& logits,
                                   const std::vector<std::size_t>& targets) {
  require(logits->rank() == 2, ErrorCode::ShapeMismatch,
          "cross_entropy_rows expects rank-2 logits, got " +
              shape_str(logits->shape));
  const std::size_t r = logits->shape[0], c = logits->shape[1];
  require(targets.size() == r, ErrorCode::ShapeMismatch,
          "cross_entropy_rows: target count " + std::to_string(targets.size()) +
              " vs row count " + std::to_string(r));
  auto probs = std::make_shared<std::vector<double>>(r * c);
  double loss = 0.0;
  for (std::size_t i = 0; i < r; ++i) {
    require(targets[i] < c, ErrorCode::InvalidArg,
            "cross_entropy_rows: target index out of range");
    const double* row = &logits->data[i * c];
    double mx = row[0];
    for (std::size_t j = 1; j < c; ++j) mx = std::max(mx, row[j]);
    double z = 0.0;
    for (std::size_t j = 0; j < c; ++j) {
      const double e = std::exp(row[j] - mx);
      (*probs)[i * c + j] = e;
      z += e;
    }
    for (std::size_t j = 0; j < c; ++j) (*probs)[i * c + j] /= z;
    loss += mx + std::log(z) - row[targets[i]];
  }
  loss /= static_cast<double>(r);
  Tensor o = Tensor::scalar(loss);
  const bool tr = logits->requires_grad;
  FGE_FINISH("cross_entropy_rows", o, tr, [out, logits, probs, targets, r, c] {
    out->ensure_grad();
    logits->ensure_grad();
    const double g = out->grad[0] / static_cast<double>(r);
    for (std::size_t i = 0; i < r; ++i)
      for (std::size_t j = 0; j < c; ++j) {
        const double ind = (j == targets[i]) ? 1.0 : 0.0;
        logits->grad[i * c + j] += g * ((*probs)[i * c + j] - ind);
      }
  });
}

TensorPtr Tape::bce_with_logits(const TensorPtr& logits,
                                const std::vector<double>& labels) {
  const std::size_t n = logits->numel();
  require(labels.size() == n, ErrorCode::ShapeMismatch,
          "bce_with_logits: label count " + std::to_string(labels.size()) +
              " vs logit count " + std::to_string(n));
  require(n > 0, ErrorCode::ShapeMismatch, "bce_with_logits: empty batch");
  double loss = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    const double z = logits->data[i], y = labels[i];
    loss += std::max(z, 0.0) - z * y + std::log1p(std::exp(-std::abs(z)));
  }
  loss /= static_cast<double>(n);
  Tensor o = Tensor::scalar(loss);
  const bool tr = logits->requires_grad;
  FGE_FINISH("bce_with_logits", o, tr, [out, logits, labels, n] {
    out->ensure_grad();
    logits->ensure_grad();
    const double g = out->grad[0] / static_cast<double>(n);
    for (std::size_t i = 0; i < n; ++i) {
      const double z = logits->data[i];
      const double sig = 1.0 / (1.0 + std::exp(-z));
      logits->grad[i] += g * (sig - labels[i]);
    }
  });
}

// ---- token plumbing --------------------------------------------------------

TensorPtr Tape::patchify(const TensorPtr& img, std::size_t patch) {
  require(img->rank() == 3, ErrorCode::ShapeMismatch,
          "patchify expects an H,W,C image, got " + shape_str(img->shape));
  const std::size_t h = img->shape[0], w = img->shape[1], ch = img->shape[2];
  require(patch > 0 && h % patch == 0 && w % patch == 0,
          ErrorCode::BadResolution,
          "patchify: " + std::to_string(h) + "x" + std::to_string(w) +
              " not divisible by patch " + std::to_string(patch));
  const std::size_t gh = h / patch, gw = w / patch;
  const std::size_t cols = patch * patch * ch;
  Tensor o({gh * gw, cols});
  for (std::size_t pr = 0; pr < gh; ++pr)
    for (std::size_t pc = 0; pc < gw; ++pc) {
      double* dst = &o.data[(pr * gw + pc) * cols];
      for (std::size_t py = 0; py < patch; ++py)
        for (std::size_t px = 0; px < patch; ++px)
          for (std::size_t c = 0; c < ch; ++c)
            dst[(py * patch + px) * ch + c] =
                img->data[((pr * patch + py) * w + pc * patch + px) * ch + c];
    }
  const bool tr = img->requires_grad;
  FGE_FINISH("patchify", o, tr, [out, img, patch, h, w, ch] {
    out->ensure_grad();
    img->ensure_grad();
    const std::size_t gw = w / patch;
    const std::size_t cols = patch * patch * ch;
    for (std::size_t pr = 0; pr < h / patch; ++pr)
      for (std::size_t pc = 0; pc < gw; ++pc) {
        const double* src = &out->grad[(pr * gw + pc) * cols];
        for (std::size_t py = 0; py < patch; ++py)
          for (std::size_t px = 0; px < patch; ++px)
            for (std::size_t c = 0; c < ch; ++c)
              img->grad[((pr * patch + py) * w + pc * patch + px) * ch + c] +=
                  src[(py * patch + px) * ch + c];
      }
  });
}

TensorPtr Tape::prepend_token(const TensorPtr& x, const TensorPtr& tok,
                              std::size_t batch) {
  require(x->rank() == 2, ErrorCode::ShapeMismatch,
          "prepend_token expects rank-2 input, got " + shape_str(x->shape));
  const std::size_t rows = x->shape[0], w = x->shape[1];
  require(batch > 0 && rows % batch == 0, ErrorCode::ShapeMismatch,
          "prepend_token: row count not divisible by batch");
  require(tok->numel() == w, ErrorCode::ShapeMismatch,
          "prepend_token: token width " + std::to_string(tok->numel()) +
              " vs " + std::to_string(w));
  const std::size_t np = rows / batch, l = np + 1;
  Tensor o({batch * l, w});
  for (std::size_t b = 0; b < batch; ++b) {
    for (std::size_t j = 0; j < w; ++j) o.data[(b * l) * w + j] = tok->data[j];
    for (std::size_t t = 0; t < np; ++t)
      for (std::size_t j = 0; j < w; ++j)
        o.data[(b * l + 1 + t) * w + j] = x->data[(b * np + t) * w + j];
  }
  const bool tr = x->requires_grad || tok->requires_grad;
  FGE_FINISH("prepend_token", o, tr, [out, x, tok, batch, np, l, w] {
    out->ensure_grad();
    if (tok->requires_grad) {
      tok->ensure_grad();
      for (std::size_t b = 0; b < batch; ++b)
        for (std::size_t j = 0; j < w; ++j)
          tok->grad[j] += out->grad[(b * l) * w + j];
    }
    if (x->requires_grad) {
      x->ensure_grad();
      for (std::size_t b = 0; b < batch; ++b)
        for (std::size_t t = 0; t < np; ++t)
          for (std::size_t j = 0; j < w; ++j)
            x->grad[(b * np + t) * w + j] += out->grad[(b * l + 1 + t) * w + j];
    }
  });
}

TensorPtr Tape::add_pos(const TensorPtr& x, const TensorPtr& pos,
                        std::size_t batch) {
  require(x->rank() == 2 && pos->rank() == 2, ErrorCode::ShapeMismatch,
          "add_pos expects rank-2 tensors");
  const std::size_t rows = x->shape[0], w = x->shape[1];
  require(batch > 0 && rows % batch == 0, ErrorCode::ShapeMismatch,
          "add_pos: row count not divisible by batch");
  const std::size_t l = rows / batch;
  require(pos->shape[0] >= l && pos->shape[1] == w, ErrorCode::ShapeMismatch,
          "add_pos: table " + shape_str(pos->shape) + " too small for len " +
              std::to_string(l));
  Tensor o({rows, w});
  for (std::size_t b = 0; b < batch; ++b)
    for (std::size_t t = 0; t < l; ++t)
      for (std::size_t j = 0; j < w; ++j)
        o.data[(b * l + t) * w + j] =
            x->data[(b * l + t) * w + j] + pos->data[t * w + j];
  const bool tr = x->requires_grad || pos->requires_grad;
  FGE_FINISH("add_pos", o, tr, [out, x, pos, batch, l, w] {
    out->ensure_grad();
    if (x->requires_grad) {
      x->ensure_grad();
      for (std::size_t i = 0; i < out->numel(); ++i)
        x->grad[i] += out->grad[i];
    }
    if (pos->requires_grad) {
      pos->ensure_grad();
      for (std::size_t b = 0; b < batch; ++b)
        for (std::size_t t = 0; t < l; ++t)
          for (std::size_t j = 0; j < w; ++j)
            pos->grad[t * w + j] += out->grad[(b * l + t) * w + j];
    }
  });
}

TensorPtr Tape::select_cls_rows(const TensorPtr& x, std::size_t batch,
                                std::size_t len) {
  require(x->rank() == 2 && x->shape[0] == batch * len, ErrorCode::ShapeMismatch,
          "select_cls_rows: shape " + shape_str(x->shape) +
              " does not pack batch " + std::to_string(batch) + " x len " +
              std::to_string(len));
  const std::size_t w = x->shape[1];
  Tensor o({batch, w});
  for (std::size_t b = 0; b < batch; ++b)
    for (std::size_t j = 0; j < w; ++j)
      o.data[b * w + j] = x->data[(b * len) * w + j];
  const bool tr = x->requires_grad;
  FGE_FINISH("select_cls_rows", o, tr, [out, x, batch, len, w] {
    out->ensure_grad();
    x->ensure_grad();
    for (std::size_t b = 0; b < batch; ++b)
      for (std::size_t j = 0; j < w; ++j)
        x->grad[(b * len) * w + j] += out->grad[b * w + j];
  });
}

TensorPtr Tape::gather_rows(const TensorPtr& table,
                            const std::vector<std::size_t>& ids) {
  require(table->rank() == 2, ErrorCode::ShapeMismatch,
          "gather_rows expects a rank-2 table, got " + shape_str(table->shape));
  const std::size_t v = table->shape[0], w = table->shape[1];
  Tensor o({ids.size(), w});
  for (std::size_t i = 0; i < ids.size(); ++i) {
    require(ids[i] < v, ErrorCode::InvalidArg,
            "gather_rows: id " + std::to_string(ids[i]) + " out of range " +
                std::to_string(v));
    for (std::size_t j = 0; j < w; ++j)
      o.data[i * w + j] = table->data[ids[i] * w + j];
  }
  const bool tr = table->requires_grad;
  FGE_FINISH("gather_rows", o, tr, [out, table, ids, w] {
    out->ensure_grad();
    table->ensure_grad();
    for (std::size_t i = 0; i < ids.size(); ++i)
      for (std::size_t j = 0; j < w; ++j)
        table->grad[ids[i] * w + j] += out->grad[i * w + j];
  });
}

TensorPtr Tape::mean_pool(const TensorPtr& x, std::size_t batch,
                          std::size_t len, const std::vector<std::size_t>& lens) {
  require(x->rank() == 2 && x->shape[0] == batch * len, ErrorCode::ShapeMismatch,
          "mean_pool: shape " + shape_str(x->shape) + " does not pack batch " +
              std::to_string(batch) + " x len " + std::to_string(len));
  require(lens.size() == batch, ErrorCode::ShapeMismatch,
          "mean_pool: lens size vs batch");
  const std::size_t w = x->shape[1];
  Tensor o({batch, w});
  for (std::size_t b = 0; b < batch; ++b) {
    require(lens[b] >= 1 && lens[b] <= len, ErrorCode::InvalidArg,
            "mean_pool: invalid length " + std::to_string(lens[b]));
    const double inv = 1.0 / static_cast<double>(lens[b]);
    for (std::size_t t = 0; t < lens[b]; ++t)
      for (std::size_t j = 0; j < w; ++j)
        o.data[b * w + j] += x->data[(b * len + t) * w + j] * inv;
  }
  const bool tr = x->requires_grad;
  FGE_FINISH("mean_pool", o, tr, [out, x, batch, len, lens, w] {
    out->ensure_grad();
    x->ensure_grad();
    for (std::size_t b = 0; b < batch; ++b) {
      const double inv = 1.0 / static_cast<double>(lens[b]);
      for (std::size_t t = 0; t < lens[b]; ++t)
        for (std::size_t j = 0; j < w; ++j)
          x->grad[(b * len + t) * w + j] += out->grad[b * w + j] * inv;
    }
  });
}

// ---- attention -------------------------------------------------------------

TensorPtr Tape::attention(const TensorPtr& qkv, std::size_t batch,
                          std::size_t len, const std::vector<std::size_t>& lens,
                          std::size_t heads) {
  require(qkv->rank() == 2 && qkv->shape[0] == batch * len,
          ErrorCode::ShapeMismatch,
          "attention: qkv shape " + shape_str(qkv->shape) +
              " does not pack batch " + std::to_string(batch) + " x len " +
              std::to_string(len));
  require(qkv->shape[1] % 3 == 0, ErrorCode::ShapeMismatch,
          "attention: qkv width must be 3*model width");
  const std::size_t w = qkv->shape[1] / 3;
  require(heads > 0 && w % heads == 0, ErrorCode::ShapeMismatch,
          "attention: width " + std::to_string(w) + " not divisible by " +
              std::to_string(heads) + " heads");
  require(lens.size() == batch, ErrorCode::ShapeMismatch,
          "attention: lens size vs batch");
  const std::size_t dh = w / heads;
  const double scl = 1.0 / std::sqrt(static_cast<double>(dh));
  const std::size_t stride = 3 * w;

  // Cached softmax rows, len x klen per (batch, head).
  auto probs = std::make_shared<std::vector<std::vector<double>>>(batch * heads);
  Tensor o({batch * len, w});

  std::vector<double> qb(len * dh), kb(len * dh), vb(len * dh), sb(len * len),
      ob(len * dh);
  for (std::size_t b = 0; b < batch; ++b) {
    const std::size_t klen = lens[b];
    require(klen >= 1 && klen <= len, ErrorCode::InvalidArg,
            "attention: invalid length " + std::to_string(klen));
    for (std::size_t h = 0; h < heads; ++h) {
      const double* base = &qkv->data[(b * len) * stride];
      for (std::size_t t = 0; t < len; ++t)
        for (std::size_t d = 0; d < dh; ++d)
          qb[t * dh + d] = base[t * stride + h * dh + d];
      for (std::size_t t = 0; t < klen; ++t)
        for (std::size_t d = 0; d < dh; ++d)
          kb[t * dh + d] = base[t * stride + w + h * dh + d];
      for (std::size_t t = 0; t < klen; ++t)
        for (std::size_t d = 0; d < dh; ++d)
          vb[t * dh + d] = base[t * stride + 2 * w + h * dh + d];

      // scores = Q K^T * scale, then row softmax over the klen valid keys
      std::fill(sb.begin(), sb.begin() + len * klen, 0.0);
      gemm_bt_acc(qb.data(), kb.data(), sb.data(), len, dh, klen);
      for (std::size_t t = 0; t < len; ++t) {
        double* row = &sb[t * klen];
        double mx = row[0] * scl;
        for (std::size_t u = 0; u < klen; ++u) {
          row[u] *= scl;
          mx = std::max(mx, row[u]);
        }
        double z = 0.0;
        for (std::size_t u = 0; u < klen; ++u) {
          row[u] = std::exp(row[u] - mx);
          z += row[u];
        }
        for (std::size_t u = 0; u < klen; ++u) row[u] /= z;
      }
      (*probs)[b * heads + h].assign(sb.begin(), sb.begin() + len * klen);

      // out = P V
      std::fill(ob.begin(), ob.end(), 0.0);
      gemm_acc(sb.data(), vb.data(), ob.data(), len, klen, dh);
      for (std::size_t t = 0; t < len; ++t)
        for (std::size_t d = 0; d < dh; ++d)
          o.data[(b * len + t) * w + h * dh + d] = ob[t * dh + d];
    }
  }

  const bool tr = qkv->requires_grad;
  FGE_FINISH("attention", o, tr,
             [out, qkv, probs, batch, len, lens, heads, w, dh, scl, stride] {
    out->ensure_grad();
    qkv->ensure_grad();
    std::vector<double> qb(len * dh), kb(len * dh), vb(len * dh), dob(len * dh),
        dp(len * len), dq(len * dh), dk(len * dh), dv(len * dh);
    for (std::size_t b = 0; b < batch; ++b) {
      const std::size_t klen = lens[b];
      for (std::size_t h = 0; h < heads; ++h) {
        const double* base = &qkv->data[(b * len) * stride];
        double* gbase = &qkv->grad[(b * len) * stride];
        const std::vector<double>& p = (*probs)[b * heads + h];
        for (std::size_t t = 0; t < len; ++t)
          for (std::size_t d = 0; d < dh; ++d) {
            qb[t * dh + d] = base[t * stride + h * dh + d];
            dob[t * dh + d] = out->grad[(b * len + t) * w + h * dh + d];
          }
        for (std::size_t t = 0; t < klen; ++t)
          for (std::size_t d = 0; d < dh; ++d) {
            kb[t * dh + d] = base[t * stride + w + h * dh + d];
            vb[t * dh + d] = base[t * stride + 2 * w + h * dh + d];
          }

        // dV = P^T dO
        std::fill(dv.begin(), dv.end(), 0.0);
        gemm_at_acc(p.data(), dob.data(), dv.data(), klen, len, dh);
        // dP = dO V^T
        std::fill(dp.begin(), dp.begin() + len * klen, 0.0);
        gemm_bt_acc(dob.data(), vb.data(), dp.data(), len, dh, klen);
        // softmax backward, fold in the scale
        for (std::size_t t = 0; t < len; ++t) {
          const double* pr = &p[t * klen];
          double* dpr = &dp[t * klen];
          double dot = 0.0;
          for (std::size_t u = 0; u < klen; ++u) dot += pr[u] * dpr[u];
          for (std::size_t u = 0; u < klen; ++u)
            dpr[u] = pr[u] * (dpr[u] - dot) * scl;
        }
        // dQ = dS K ; dK = dS^T Q
        std::fill(dq.begin(), dq.end(), 0.0);
        gemm_acc(dp.data(), kb.data(), dq.data(), len, klen, dh);
        std::fill(dk.begin(), dk.end(), 0.0);
        gemm_at_acc(dp.data(), qb.data(), dk.data(), klen, len, dh);

        for (std::size_t t = 0; t < len; ++t)
          for (std::size_t d = 0; d < dh; ++d)
            gbase[t * stride + h * dh + d] += dq[t * dh + d];
        for (std::size_t t = 0; t < klen; ++t)
          for (std::size_t d = 0; d < dh; ++d) {
            gbase[t * stride + w + h * dh + d] += dk[t * dh + d];
            gbase[t * stride + 2 * w + h * dh + d] += dv[t * dh + d];
          }
      }
    }
  });
}

// ---- image ops -------------------------------------------------------------

TensorPtr Tape::depthwise_conv2d(const TensorPtr& x, const Tensor& kernel,
                                 std::size_t anchor_r, std::size_t anchor_c) {
  require(x->rank() == 3, ErrorCode::ShapeMismatch,
          "depthwise_conv2d expects an H,W,C image, got " +
              shape_str(x->shape));
  require(kernel.rank() == 2, ErrorCode::ShapeMismatch,
          "depthwise_conv2d: kernel must be rank-2");
  const std::size_t h = x->shape[0], w = x->shape[1], ch = x->shape[2];
  require(h >= 2 && w >= 2, ErrorCode::BadResolution,
          "depthwise_conv2d: image too small for mirror padding");
  const std::size_t kh = kernel.shape[0], kw = kernel.shape[1];
  require(anchor_r < kh && anchor_c < kw, ErrorCode::InvalidArg,
          "depthwise_conv2d: anchor outside kernel");
  Tensor o({h, w, ch});
  for (std::size_t i = 0; i < h; ++i)
    for (std::size_t j = 0; j < w; ++j)
      for (std::size_t u = 0; u < kh; ++u)
        for (std::size_t v = 0; v < kw; ++v) {
          const double kv = kernel.data[u * kw + v];
          const std::size_t si =
              mirror101(static_cast<long>(i + u) - static_cast<long>(anchor_r),
                        static_cast<long>(h));
          const std::size_t sj =
              mirror101(static_cast<long>(j + v) - static_cast<long>(anchor_c),
                        static_cast<long>(w));
          for (std::size_t c = 0; c < ch; ++c)
            o.data[(i * w + j) * ch + c] +=
                kv * x->data[(si * w + sj) * ch + c];
        }
  const bool tr = x->requires_grad;
  const Tensor ker = kernel;  // the closure owns a copy
  FGE_FINISH("depthwise_conv2d", o, tr,
             [out, x, ker, anchor_r, anchor_c, h, w, ch] {
    out->ensure_grad();
    x->ensure_grad();
    const std::size_t kh = ker.shape[0], kw = ker.shape[1];
    for (std::size_t i = 0; i < h; ++i)
      for (std::size_t j = 0; j < w; ++j)
        for (std::size_t u = 0; u < kh; ++u)
          for (std::size_t v = 0; v < kw; ++v) {
            const double kv = ker.data[u * kw + v];
            const std::size_t si = mirror101(
                static_cast<long>(i + u) - static_cast<long>(anchor_r),
                static_cast<long>(h));
            const std::size_t sj = mirror101(
                static_cast<long>(j + v) - static_cast<long>(anchor_c),
                static_cast<long>(w));
            for (std::size_t c = 0; c < ch; ++c)
              x->grad[(si * w + sj) * ch + c] +=
                  kv * out->grad[(i * w + j) * ch + c];
          }
  });
}

TensorPtr Tape::bilinear_resize(const TensorPtr& x, std::size_t oh,
                                std::size_t ow) {
  require(x->rank() == 3, ErrorCode::ShapeMismatch,
          "bilinear_resize expects an H,W,C image, got " +
              shape_str(x->shape));
  require(oh > 0 && ow > 0, ErrorCode::BadResolution,
          "bilinear_resize: empty output");
  const std::size_t h = x->shape[0], w = x->shape[1], ch = x->shape[2];
  // Half-pixel centers (align_corners = false).
  auto src_coord = [](std::size_t d, std::size_t in, std::size_t outn) {
    double s = (static_cast<double>(d) + 0.5) * static_cast<double>(in) /
                   static_cast<double>(outn) -
               0.5;
    if (s < 0.0) s = 0.0;
    const double hi = static_cast<double>(in - 1);
    if (s > hi) s = hi;
    return s;
  };
  Tensor o({oh, ow, ch});
  for (std::size_t oy = 0; oy < oh; ++oy) {
    const double sy = src_coord(oy, h, oh);
    const std::size_t y0 = static_cast<std::size_t>(sy);
    const std::size_t y1 = (y0 + 1 < h) ? y0 + 1 : y0;
    const double fy = sy - static_cast<double>(y0);
    for (std::size_t ox = 0; ox < ow; ++ox) {
      const double sx = src_coord(ox, w, ow);
      const std::size_t x0 = static_cast<std::size_t>(sx);
      const std::size_t x1 = (x0 + 1 < w) ? x0 + 1 : x0;
      const double fx = sx - static_cast<double>(x0);
      for (std::size_t c = 0; c < ch; ++c) {
        const double v00 = x->data[(y0 * w + x0) * ch + c];
        const double v01 = x->data[(y0 * w + x1) * ch + c];
        const double v10 = x->data[(y1 * w + x0) * ch + c];
        const double v11 = x->data[(y1 * w + x1) * ch + c];
        o.data[(oy * ow + ox) * ch + c] = (1.0 - fy) * (1.0 - fx) * v00 +
                                          (1.0 - fy) * fx * v01 +
                                          fy * (1.0 - fx) * v10 + fy * fx * v11;
      }
    }
  }
  const bool tr = x->requires_grad;
  FGE_FINISH("bilinear_resize", o, tr, [out, x, oh, ow, h, w, ch, src_coord] {
    out->ensure_grad();
    x->ensure_grad();
    for (std::size_t oy = 0; oy < oh; ++oy) {
      const double sy = src_coord(oy, h, oh);
      const std::size_t y0 = static_cast<std::size_t>(sy);
      const std::size_t y1 = (y0 + 1 < h) ? y0 + 1 : y0;
      const double fy = sy - static_cast<double>(y0);
      for (std::size_t ox = 0; ox < ow; ++ox) {
        const double sx = src_coord(ox, w, ow);
        const std::size_t x0 = static_cast<std::size_t>(sx);
        const std::size_t x1 = (x0 + 1 < w) ? x0 + 1 : x0;
        const double fx = sx - static_cast<double>(x0);
        for (std::size_t c = 0; c < ch; ++c) {
          const double g = out->grad[(oy * ow + ox) * ch + c];
          x->grad[(y0 * w + x0) * ch + c] += (1.0 - fy) * (1.0 - fx) * g;
          x->grad[(y0 * w + x1) * ch + c] += (1.0 - fy) * fx * g;
          x->grad[(y1 * w + x0) * ch + c] += fy * (1.0 - fx) * g;
          x->grad[(y1 * w + x1) * ch + c] += fy * fx * g;
        }
      }
    }
  });
}

#undef FGE_FINISH

// ---- optimizer / gradient checking ----------------------------------------

void adam_step(const std::vector<TensorPtr>& params,
               std::vector<AdamState>& states, const AdamConfig& cfg) {
  if (states.size() != params.size())
    raise(ErrorCode::ShapeMismatch,
          "adam_step: state count " + std::to_string(states.size()) +
              " vs param count " + std::to_string(params.size()));
  for (std::size_t pi = 0; pi < params.size(); ++pi) {
    Tensor& p = *params[pi];
    AdamState& st = states[pi];
    const std::size_t n = p.numel();
    if (st.m.empty()) {
      st.m.assign(n, 0.0);
      st.v.assign(n, 0.0);
    }
    if (st.m.size() != n)
      raise(ErrorCode::ShapeMismatch,
            "adam_step: state size drifted from parameter size");
    if (!p.grad.empty() && p.grad.size() != n)
      raise(ErrorCode::ShapeMismatch,
            "adam_step: grad size does not match parameter size");
    st.t += 1;
    const double bc1 = 1.0 - std::pow(cfg.beta1, static_cast<double>(st.t));
    const double bc2 = 1.0 - std::pow(cfg.beta2, static_cast<double>(st.t));
    for (std::size_t i = 0; i < n; ++i) {
      const double g = p.grad.empty() ? 0.0 : p.grad[i];
      st.m[i] = cfg.beta1 * st.m[i] + (1.0 - cfg.beta1) * g;
      st.v[i] = cfg.beta2 * st.v[i] + (1.0 - cfg.beta2) * g * g;
      const double mh = st.m[i] / bc1;
      const double vh = st.v[i] / bc2;
      p.data[i] -= cfg.lr * mh / (std::sqrt(vh) + cfg.eps);
    }
  }
}

double grad_check(const std::function<TensorPtr(Tape&, const TensorPtr&)>& f,
                  const Tensor& x, double h,
                  const std::vector<std::size_t>* coords) {
  Tape tape;
  Tensor x0 = x;
  x0.requires_grad = false;
  x0.grad.clear();
  auto xp = tape.leaf(x0, true);
  auto loss = f(tape, xp);
  tape.backward(loss);
  xp->ensure_grad();
  const std::vector<double> analytic = xp->grad;

  auto eval = [&](const Tensor& xv) {
    Tape t2;
    auto p = t2.leaf(xv, false);
    auto l = f(t2, p);
    if (l->numel() != 1)
      raise(ErrorCode::NotScalar, "grad_check: objective is not scalar");
    return l->data[0];
  };

  std::vector<std::size_t> all;
  if (!coords) {
    all.resize(x.numel());
    for (std::size_t i = 0; i < all.size(); ++i) all[i] = i;
  }
  const std::vector<std::size_t>& idx = coords ? *coords : all;

  double worst = 0.0;
  Tensor xp_probe = x0;
  for (std::size_t i : idx) {
    if (i >= x.numel())
      raise(ErrorCode::InvalidArg, "grad_check: coordinate out of range");
    const double keep = xp_probe.data[i];
    xp_probe.data[i] = keep + h;
    const double fp = eval(xp_probe);
    xp_probe.data[i] = keep - h;
    const double fm = eval(xp_probe);
    xp_probe.data[i] = keep;
    const double fd = (fp - fm) / (2.0 * h);
    const double err =
        std::abs(analytic[i] - fd) / std::max(1.0, std::abs(fd));
    worst = std::max(worst, err);
  }
  return worst;
}

}  // namespace fge
