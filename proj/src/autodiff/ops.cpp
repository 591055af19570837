#include "peftlab/ops.hpp"

#include <algorithm>
#include <cmath>
#include <initializer_list>
#include <numbers>
#include <string>

#include "peftlab/errors.hpp"
#include "peftlab/kernels.hpp"

namespace peftlab::ad {

namespace {

using StoragePtr = std::shared_ptr<detail::Storage>;

bool recording(std::initializer_list<const Tensor*> inputs) {
  if (Tape::current() == nullptr) return false;
  for (const Tensor* t : inputs) {
    if (t->defined() && t->requires_grad()) return true;
  }
  return false;
}

Tensor make_output(Shape shape, std::vector<double> data) {
  if (finite_checks()) {
    for (double v : data) {
      if (!std::isfinite(v)) throw TrainingError("non-finite value produced by tensor op");
    }
  }
  return Tensor::from_data(std::move(shape), std::move(data));
}

void attach(const Tensor& out, Tape::BackwardFn fn) {
  out.storage()->requires_grad = true;
  Tape::current()->record(out.storage(), std::move(fn));
}

void require_matrix(const Tensor& t, const char* op) {
  if (!t.defined() || t.dim() != 2) {
    throw DimensionError(std::string(op) + ": expected a matrix, got " +
                         (t.defined() ? to_string(t.shape()) : std::string("undefined")));
  }
}

void require_same_shape(const Tensor& a, const Tensor& b, const char* op) {
  if (a.shape() != b.shape()) {
    throw DimensionError(std::string(op) + ": shape mismatch " + to_string(a.shape()) +
                         " vs " + to_string(b.shape()));
  }
}

}  // namespace

Tensor matmul(const Tensor& a, const Tensor& b) {
  require_matrix(a, "matmul");
  require_matrix(b, "matmul");
  const std::size_t m = a.rows(), k = a.cols(), n = b.cols();
  if (b.rows() != k) {
    throw DimensionError("matmul: inner dimensions differ " + to_string(a.shape()) + " x " +
                         to_string(b.shape()));
  }
  std::vector<double> out(m * n);
  kernels::gemm_nn(a.data(), b.data(), out, m, k, n, false);
  Tensor y = make_output({m, n}, std::move(out));
  if (recording({&a, &b})) {
    attach(y, [as = a.storage(), bs = b.storage(), m, k, n](detail::Storage& o) {
      if (as->requires_grad) kernels::gemm_nt(o.grad, bs->data, as->grad_buffer(), m, n, k, true);
      if (bs->requires_grad) kernels::gemm_tn(as->data, o.grad, bs->grad_buffer(), k, m, n, true);
    });
  }
  return y;
}

Tensor matmul_nt(const Tensor& a, const Tensor& b) {
  require_matrix(a, "matmul_nt");
  require_matrix(b, "matmul_nt");
  const std::size_t m = a.rows(), k = a.cols(), n = b.rows();
  if (b.cols() != k) {
    throw DimensionError("matmul_nt: inner dimensions differ " + to_string(a.shape()) +
                         " x " + to_string(b.shape()) + "^T");
  }
  std::vector<double> out(m * n);
  kernels::gemm_nt(a.data(), b.data(), out, m, k, n, false);
  Tensor y = make_output({m, n}, std::move(out));
  if (recording({&a, &b})) {
    attach(y, [as = a.storage(), bs = b.storage(), m, k, n](detail::Storage& o) {
      if (as->requires_grad) kernels::gemm_nn(o.grad, bs->data, as->grad_buffer(), m, n, k, true);
      if (bs->requires_grad) kernels::gemm_tn(o.grad, as->data, bs->grad_buffer(), n, m, k, true);
    });
  }
  return y;
}

Tensor linear(const Tensor& x, const Tensor& w, const Tensor& bias) {
  require_matrix(x, "linear");
  require_matrix(w, "linear");
  const std::size_t m = x.rows(), in = x.cols(), out_dim = w.rows();
  if (w.cols() != in) {
    throw DimensionError("linear: input width " + std::to_string(in) +
                         " does not match weight " + to_string(w.shape()));
  }
  if (bias.defined() && bias.shape() != Shape{out_dim}) {
    throw DimensionError("linear: bias shape " + to_string(bias.shape()) +
                         " does not match output width " + std::to_string(out_dim));
  }
  std::vector<double> out(m * out_dim);
  kernels::gemm_nt(x.data(), w.data(), out, m, in, out_dim, false);
  if (bias.defined()) {
    const auto bd = bias.data();
    for (std::size_t i = 0; i < m; ++i) {
      for (std::size_t j = 0; j < out_dim; ++j) out[i * out_dim + j] += bd[j];
    }
  }
  Tensor y = make_output({m, out_dim}, std::move(out));
  if (recording({&x, &w, &bias})) {
    StoragePtr bs = bias.defined() ? bias.storage() : nullptr;
    attach(y, [xs = x.storage(), ws = w.storage(), bs, m, in, out_dim](detail::Storage& o) {
      if (xs->requires_grad) {
        kernels::gemm_nn(o.grad, ws->data, xs->grad_buffer(), m, out_dim, in, true);
      }
      if (ws->requires_grad) {
        kernels::gemm_tn(o.grad, xs->data, ws->grad_buffer(), out_dim, m, in, true);
      }
      if (bs && bs->requires_grad) {
        auto gb = bs->grad_buffer();
        for (std::size_t i = 0; i < m; ++i) {
          for (std::size_t j = 0; j < out_dim; ++j) gb[j] += o.grad[i * out_dim + j];
        }
      }
    });
  }
  return y;
}

Tensor add(const Tensor& a, const Tensor& b) {
  require_same_shape(a, b, "add");
  std::vector<double> out(a.numel());
  const auto ad = a.data(), bd = b.data();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = ad[i] + bd[i];
  Tensor y = make_output(a.shape(), std::move(out));
  if (recording({&a, &b})) {
    attach(y, [as = a.storage(), bs = b.storage()](detail::Storage& o) {
      for (const auto& s : {as, bs}) {
        if (!s->requires_grad) continue;
        auto g = s->grad_buffer();
        for (std::size_t i = 0; i < g.size(); ++i) g[i] += o.grad[i];
      }
    });
  }
  return y;
}

Tensor mul(const Tensor& a, const Tensor& b) {
  require_same_shape(a, b, "mul");
  std::vector<double> out(a.numel());
  const auto ad = a.data(), bd = b.data();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = ad[i] * bd[i];
  Tensor y = make_output(a.shape(), std::move(out));
  if (recording({&a, &b})) {
    attach(y, [as = a.storage(), bs = b.storage()](detail::Storage& o) {
      if (as->requires_grad) {
        auto g = as->grad_buffer();
        for (std::size_t i = 0; i < g.size(); ++i) g[i] += o.grad[i] * bs->data[i];
      }
      if (bs->requires_grad) {
        auto g = bs->grad_buffer();
        for (std::size_t i = 0; i < g.size(); ++i) g[i] += o.grad[i] * as->data[i];
      }
    });
  }
  return y;
}

Tensor scale(const Tensor& a, double s) {
  std::vector<double> out(a.numel());
  const auto ad = a.data();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = ad[i] * s;
  Tensor y = make_output(a.shape(), std::move(out));
  if (recording({&a})) {
    attach(y, [as = a.storage(), s](detail::Storage& o) {
      auto g = as->grad_buffer();
      for (std::size_t i = 0; i < g.size(); ++i) g[i] += o.grad[i] * s;
    });
  }
  return y;
}

Tensor add_row(const Tensor& x, const Tensor& v) {
  require_matrix(x, "add_row");
  const std::size_t m = x.rows(), n = x.cols();
  if (v.shape() != Shape{n}) {
    throw DimensionError("add_row: vector " + to_string(v.shape()) + " vs matrix " +
                         to_string(x.shape()));
  }
  std::vector<double> out(x.data().begin(), x.data().end());
  const auto vd = v.data();
  for (std::size_t i = 0; i < m; ++i) {
    for (std::size_t j = 0; j < n; ++j) out[i * n + j] += vd[j];
  }
  Tensor y = make_output({m, n}, std::move(out));
  if (recording({&x, &v})) {
    attach(y, [xs = x.storage(), vs = v.storage(), m, n](detail::Storage& o) {
      if (xs->requires_grad) {
        auto g = xs->grad_buffer();
        for (std::size_t i = 0; i < g.size(); ++i) g[i] += o.grad[i];
      }
      if (vs->requires_grad) {
        auto g = vs->grad_buffer();
        for (std::size_t i = 0; i < m; ++i) {
          for (std::size_t j = 0; j < n; ++j) g[j] += o.grad[i * n + j];
        }
      }
    });
  }
  return y;
}

Tensor sum(const Tensor& a) {
  double s = 0.0;
  for (double v : a.data()) s += v;
  Tensor y = make_output({}, {s});
  if (recording({&a})) {
    attach(y, [as = a.storage()](detail::Storage& o) {
      auto g = as->grad_buffer();
      for (auto& gi : g) gi += o.grad[0];
    });
  }
  return y;
}

Tensor mean(const Tensor& a) {
  if (a.numel() == 0) throw DimensionError("mean of empty tensor");
  return scale(sum(a), 1.0 / static_cast<double>(a.numel()));
}

Tensor softmax(const Tensor& x, int axis) {
  const int rank = static_cast<int>(x.dim());
  if (rank == 0) throw DimensionError("softmax of a scalar");
  const int ax = axis < 0 ? axis + rank : axis;
  if (ax < 0 || ax >= rank) throw DimensionError("softmax: axis out of range");
  const auto& shape = x.shape();
  const std::size_t n = shape[static_cast<std::size_t>(ax)];
  if (n == 0) throw DimensionError("softmax over an empty axis");
  std::size_t outer = 1, inner = 1;
  for (int i = 0; i < ax; ++i) outer *= shape[static_cast<std::size_t>(i)];
  for (int i = ax + 1; i < rank; ++i) inner *= shape[static_cast<std::size_t>(i)];

  std::vector<double> out(x.numel());
  const auto xd = x.data();
  if (inner == 1) {
    kernels::softmax_rows(xd, out, outer, n);
  } else {
    for (std::size_t o = 0; o < outer; ++o) {
      for (std::size_t in = 0; in < inner; ++in) {
        const std::size_t base = o * n * inner + in;
        double mx = xd[base];
        for (std::size_t j = 1; j < n; ++j) mx = std::max(mx, xd[base + j * inner]);
        double s = 0.0;
        for (std::size_t j = 0; j < n; ++j) {
          out[base + j * inner] = std::exp(xd[base + j * inner] - mx);
          s += out[base + j * inner];
        }
        for (std::size_t j = 0; j < n; ++j) out[base + j * inner] /= s;
      }
    }
  }
  Tensor y = make_output(shape, std::move(out));
  if (recording({&x})) {
    attach(y, [xs = x.storage(), outer, n, inner](detail::Storage& o) {
      auto g = xs->grad_buffer();
      for (std::size_t ob = 0; ob < outer; ++ob) {
        for (std::size_t in = 0; in < inner; ++in) {
          const std::size_t base = ob * n * inner + in;
          double dot = 0.0;
          for (std::size_t j = 0; j < n; ++j) {
            dot += o.grad[base + j * inner] * o.data[base + j * inner];
          }
          for (std::size_t j = 0; j < n; ++j) {
            const std::size_t idx = base + j * inner;
            g[idx] += o.data[idx] * (o.grad[idx] - dot);
          }
        }
      }
    });
  }
  return y;
}

Tensor layer_norm(const Tensor& x, const Tensor& gamma, const Tensor& beta, double eps) {
  require_matrix(x, "layer_norm");
  const std::size_t m = x.rows(), n = x.cols();
  if (gamma.shape() != Shape{n} || beta.shape() != Shape{n}) {
    throw DimensionError("layer_norm: affine parameters must have length " + std::to_string(n));
  }
  std::vector<double> xhat(m * n), rstd(m), out(m * n);
  const auto xd = x.data(), gd = gamma.data(), bd = beta.data();
  for (std::size_t i = 0; i < m; ++i) {
    const double* xr = xd.data() + i * n;
    double mu = 0.0;
    for (std::size_t j = 0; j < n; ++j) mu += xr[j];
    mu /= static_cast<double>(n);
    double var = 0.0;
    for (std::size_t j = 0; j < n; ++j) var += (xr[j] - mu) * (xr[j] - mu);
    var /= static_cast<double>(n);
    rstd[i] = 1.0 / std::sqrt(var + eps);
    for (std::size_t j = 0; j < n; ++j) {
      xhat[i * n + j] = (xr[j] - mu) * rstd[i];
      out[i * n + j] = gd[j] * xhat[i * n + j] + bd[j];
    }
  }
  Tensor y = make_output({m, n}, std::move(out));
  if (recording({&x, &gamma, &beta})) {
    attach(y, [xs = x.storage(), gs = gamma.storage(), bs = beta.storage(),
               xhat = std::move(xhat), rstd = std::move(rstd), m, n](detail::Storage& o) {
      const auto& dy = o.grad;
      if (gs->requires_grad) {
        auto g = gs->grad_buffer();
        for (std::size_t i = 0; i < m; ++i) {
          for (std::size_t j = 0; j < n; ++j) g[j] += dy[i * n + j] * xhat[i * n + j];
        }
      }
      if (bs->requires_grad) {
        auto g = bs->grad_buffer();
        for (std::size_t i = 0; i < m; ++i) {
          for (std::size_t j = 0; j < n; ++j) g[j] += dy[i * n + j];
        }
      }
      if (xs->requires_grad) {
        auto g = xs->grad_buffer();
        const double inv_n = 1.0 / static_cast<double>(n);
        for (std::size_t i = 0; i < m; ++i) {
          double mean_d = 0.0, mean_dx = 0.0;
          for (std::size_t j = 0; j < n; ++j) {
            const double d = dy[i * n + j] * gs->data[j];
            mean_d += d;
            mean_dx += d * xhat[i * n + j];
          }
          mean_d *= inv_n;
          mean_dx *= inv_n;
          for (std::size_t j = 0; j < n; ++j) {
            const double d = dy[i * n + j] * gs->data[j];
            g[i * n + j] += rstd[i] * (d - mean_d - xhat[i * n + j] * mean_dx);
          }
        }
      }
    });
  }
  return y;
}

Tensor gelu(const Tensor& x) {
  constexpr double c = 0.7978845608028654;  // sqrt(2/pi)
  constexpr double k = 0.044715;
  std::vector<double> out(x.numel());
  const auto xd = x.data();
  for (std::size_t i = 0; i < out.size(); ++i) {
    const double v = xd[i];
    out[i] = 0.5 * v * (1.0 + std::tanh(c * (v + k * v * v * v)));
  }
  Tensor y = make_output(x.shape(), std::move(out));
  if (recording({&x})) {
    attach(y, [xs = x.storage()](detail::Storage& o) {
      auto g = xs->grad_buffer();
      for (std::size_t i = 0; i < g.size(); ++i) {
        const double v = xs->data[i];
        const double t = std::tanh(c * (v + k * v * v * v));
        const double d = 0.5 * (1.0 + t) + 0.5 * v * (1.0 - t * t) * c * (1.0 + 3.0 * k * v * v);
        g[i] += o.grad[i] * d;
      }
    });
  }
  return y;
}

Tensor tanh(const Tensor& x) {
  std::vector<double> out(x.numel());
  const auto xd = x.data();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = std::tanh(xd[i]);
  Tensor y = make_output(x.shape(), std::move(out));
  if (recording({&x})) {
    attach(y, [xs = x.storage()](detail::Storage& o) {
      auto g = xs->grad_buffer();
      for (std::size_t i = 0; i < g.size(); ++i) {
        g[i] += o.grad[i] * (1.0 - o.data[i] * o.data[i]);
      }
    });
  }
  return y;
}

Tensor select_rows(const Tensor& x, std::span<const int> rows) {
  require_matrix(x, "select_rows");
  const std::size_t r = x.rows(), d = x.cols();
  std::vector<int> idx(rows.begin(), rows.end());
  for (int i : idx) {
    if (i < 0 || static_cast<std::size_t>(i) >= r) {
      throw DimensionError("row index " + std::to_string(i) + " out of range for " +
                           to_string(x.shape()));
    }
  }
  std::vector<double> out(idx.size() * d);
  const auto xd = x.data();
  for (std::size_t i = 0; i < idx.size(); ++i) {
    std::copy_n(xd.data() + static_cast<std::size_t>(idx[i]) * d, d, out.data() + i * d);
  }
  Tensor y = make_output({idx.size(), d}, std::move(out));
  if (recording({&x})) {
    attach(y, [xs = x.storage(), idx = std::move(idx), d](detail::Storage& o) {
      auto g = xs->grad_buffer();
      for (std::size_t i = 0; i < idx.size(); ++i) {
        double* gr = g.data() + static_cast<std::size_t>(idx[i]) * d;
        for (std::size_t j = 0; j < d; ++j) gr[j] += o.grad[i * d + j];
      }
    });
  }
  return y;
}

Tensor embedding(const Tensor& table, std::span<const int> ids) {
  return select_rows(table, ids);
}

Tensor select_cols(const Tensor& x, std::span<const int> cols) {
  require_matrix(x, "select_cols");
  const std::size_t m = x.rows(), n = x.cols();
  std::vector<int> idx(cols.begin(), cols.end());
  for (int c : idx) {
    if (c < 0 || static_cast<std::size_t>(c) >= n) {
      throw DimensionError("column index " + std::to_string(c) + " out of range for " +
                           to_string(x.shape()));
    }
  }
  const std::size_t k = idx.size();
  std::vector<double> out(m * k);
  const auto xd = x.data();
  for (std::size_t i = 0; i < m; ++i) {
    for (std::size_t j = 0; j < k; ++j) out[i * k + j] = xd[i * n + static_cast<std::size_t>(idx[j])];
  }
  Tensor y = make_output({m, k}, std::move(out));
  if (recording({&x})) {
    attach(y, [xs = x.storage(), idx = std::move(idx), m, n, k](detail::Storage& o) {
      auto g = xs->grad_buffer();
      for (std::size_t i = 0; i < m; ++i) {
        for (std::size_t j = 0; j < k; ++j) {
          g[i * n + static_cast<std::size_t>(idx[j])] += o.grad[i * k + j];
        }
      }
    });
  }
  return y;
}

Tensor concat(const std::vector<Tensor>& parts, int axis) {
  if (axis != 0 && axis != 1) throw DimensionError("concat: axis must be 0 or 1");
  std::vector<Tensor> ps;
  for (const auto& p : parts) {
    if (!p.defined()) continue;
    require_matrix(p, "concat");
    ps.push_back(p);
  }
  if (ps.empty()) throw DimensionError("concat of no tensors");
  const std::size_t other = axis == 0 ? ps[0].cols() : ps[0].rows();
  std::size_t total = 0;
  for (const auto& p : ps) {
    if ((axis == 0 ? p.cols() : p.rows()) != other) {
      throw DimensionError("concat: incompatible shapes " + to_string(ps[0].shape()) + " and " +
                           to_string(p.shape()));
    }
    total += axis == 0 ? p.rows() : p.cols();
  }
  const std::size_t m = axis == 0 ? total : other;
  const std::size_t n = axis == 0 ? other : total;
  std::vector<double> out(m * n);
  std::vector<std::size_t> offsets;
  std::size_t off = 0;
  for (const auto& p : ps) {
    offsets.push_back(off);
    const auto pd = p.data();
    if (axis == 0) {
      std::copy(pd.begin(), pd.end(), out.begin() + static_cast<std::ptrdiff_t>(off * n));
      off += p.rows();
    } else {
      const std::size_t pc = p.cols();
      for (std::size_t i = 0; i < m; ++i) {
        std::copy_n(pd.data() + i * pc, pc, out.data() + i * n + off);
      }
      off += pc;
    }
  }
  Tensor y = make_output({m, n}, std::move(out));
  bool any = false;
  for (const auto& p : ps) any = any || recording({&p});
  if (any) {
    std::vector<StoragePtr> ss;
    for (const auto& p : ps) ss.push_back(p.storage());
    attach(y, [ss = std::move(ss), offsets = std::move(offsets), axis, m, n](detail::Storage& o) {
      for (std::size_t t = 0; t < ss.size(); ++t) {
        auto& s = *ss[t];
        if (!s.requires_grad) continue;
        auto g = s.grad_buffer();
        const std::size_t pr = s.shape[0], pc = s.shape[1];
        if (axis == 0) {
          const double* src = o.grad.data() + offsets[t] * n;
          for (std::size_t i = 0; i < pr * pc; ++i) g[i] += src[i];
        } else {
          for (std::size_t i = 0; i < m; ++i) {
            for (std::size_t j = 0; j < pc; ++j) g[i * pc + j] += o.grad[i * n + offsets[t] + j];
          }
        }
      }
    });
  }
  return y;
}

Tensor slice(const Tensor& x, int axis, std::size_t start, std::size_t length) {
  require_matrix(x, "slice");
  if (axis != 0 && axis != 1) throw DimensionError("slice: axis must be 0 or 1");
  const std::size_t m = x.rows(), n = x.cols();
  const std::size_t extent = axis == 0 ? m : n;
  if (start + length > extent) {
    throw DimensionError("slice [" + std::to_string(start) + ", " +
                         std::to_string(start + length) + ") out of range for " +
                         to_string(x.shape()));
  }
  const std::size_t om = axis == 0 ? length : m;
  const std::size_t on = axis == 0 ? n : length;
  std::vector<double> out(om * on);
  const auto xd = x.data();
  for (std::size_t i = 0; i < om; ++i) {
    for (std::size_t j = 0; j < on; ++j) {
      out[i * on + j] = axis == 0 ? xd[(start + i) * n + j] : xd[i * n + start + j];
    }
  }
  Tensor y = make_output({om, on}, std::move(out));
  if (recording({&x})) {
    attach(y, [xs = x.storage(), axis, start, n, om, on](detail::Storage& o) {
      auto g = xs->grad_buffer();
      for (std::size_t i = 0; i < om; ++i) {
        for (std::size_t j = 0; j < on; ++j) {
          const std::size_t src = axis == 0 ? (start + i) * n + j : i * n + start + j;
          g[src] += o.grad[i * on + j];
        }
      }
    });
  }
  return y;
}

Tensor transpose(const Tensor& x) {
  require_matrix(x, "transpose");
  const std::size_t m = x.rows(), n = x.cols();
  std::vector<double> out(m * n);
  const auto xd = x.data();
  for (std::size_t i = 0; i < m; ++i) {
    for (std::size_t j = 0; j < n; ++j) out[j * m + i] = xd[i * n + j];
  }
  Tensor y = make_output({n, m}, std::move(out));
  if (recording({&x})) {
    attach(y, [xs = x.storage(), m, n](detail::Storage& o) {
      auto g = xs->grad_buffer();
      for (std::size_t i = 0; i < m; ++i) {
        for (std::size_t j = 0; j < n; ++j) g[i * n + j] += o.grad[j * m + i];
      }
    });
  }
  return y;
}

Tensor cross_entropy(const Tensor& logits, std::span<const int> targets) {
  require_matrix(logits, "cross_entropy");
  const std::size_t m = logits.rows(), c = logits.cols();
  if (targets.size() != m) {
    throw DimensionError("cross_entropy: " + std::to_string(targets.size()) + " targets for " +
                         std::to_string(m) + " rows");
  }
  if (m == 0) throw DimensionError("cross_entropy over zero rows");
  std::vector<int> tg(targets.begin(), targets.end());
  for (int t : tg) {
    if (t < 0 || static_cast<std::size_t>(t) >= c) {
      throw DimensionError("cross_entropy: target " + std::to_string(t) + " outside [0, " +
                           std::to_string(c) + ")");
    }
  }
  std::vector<double> probs(m * c);
  kernels::softmax_rows(logits.data(), probs, m, c);
  const auto ld = logits.data();
  double loss = 0.0;
  for (std::size_t i = 0; i < m; ++i) {
    const double* row = ld.data() + i * c;
    const double mx = *std::max_element(row, row + c);
    double s = 0.0;
    for (std::size_t j = 0; j < c; ++j) s += std::exp(row[j] - mx);
    loss += (mx + std::log(s)) - row[static_cast<std::size_t>(tg[i])];
  }
  loss /= static_cast<double>(m);
  Tensor y = make_output({}, {loss});
  if (recording({&logits})) {
    attach(y, [ls = logits.storage(), probs = std::move(probs), tg = std::move(tg), m,
               c](detail::Storage& o) {
      auto g = ls->grad_buffer();
      const double w = o.grad[0] / static_cast<double>(m);
      for (std::size_t i = 0; i < m; ++i) {
        for (std::size_t j = 0; j < c; ++j) {
          const double onehot = static_cast<std::size_t>(tg[i]) == j ? 1.0 : 0.0;
          g[i * c + j] += w * (probs[i * c + j] - onehot);
        }
      }
    });
  }
  return y;
}

Tensor dropout(const Tensor& x, double rate, Rng& rng) {
  if (rate < 0.0 || rate >= 1.0) throw ConfigError("dropout rate must lie in [0, 1)");
  if (rate == 0.0) return x;
  const double keep_scale = 1.0 / (1.0 - rate);
  std::vector<double> mask(x.numel());
  for (auto& v : mask) v = rng.bernoulli(rate) ? 0.0 : keep_scale;
  return mul(x, Tensor::from_data(x.shape(), std::move(mask)));
}

}  // namespace peftlab::ad
