#include "onelatent/numeric/ops.hpp"

#include <algorithm>
#include <cmath>
#include <string>

#include "onelatent/util/error.hpp"

namespace onelatent::numeric {

namespace {

using detail::Node;
using NodePtr = std::shared_ptr<Node>;

void require(bool ok, const char* op, const std::string& msg) {
  if (!ok) throw ContractViolation(std::string(op) + ": " + msg);
}

void check_finite(const char* op, const std::vector<double>& v) {
  for (double x : v) {
    if (!std::isfinite(x)) throw NumericFault(op, "non-finite value in forward pass");
  }
}

// Wraps a freshly computed value; records the graph edge only when some input
// needs a gradient and recording is enabled.
template <typename Backward>
Tensor make(const char* op, Shape shape, std::vector<double> data, std::vector<NodePtr> parents,
            Backward&& backward) {
  check_finite(op, data);
  auto n = std::make_shared<Node>();
  n->shape = std::move(shape);
  n->data = std::move(data);
  n->op = op;
  bool needs = false;
  if (grad_enabled()) {
    for (const auto& p : parents) needs = needs || p->requires_grad;
  }
  if (needs) {
    n->requires_grad = true;
    n->parents = std::move(parents);
    n->backward = std::forward<Backward>(backward);
  }
  return Tensor(std::move(n));
}

std::size_t rows_of(const Tensor& t) { return t.rank() == 2 ? t.shape()[0] : 1; }
std::size_t cols_of(const Tensor& t) { return t.rank() == 0 ? 1 : t.shape().back(); }

// c[m,n] += a[m,k] * b[k,n]; inner index ascending for every output element.
// Rows are processed four at a time so each loaded row of b feeds four
// accumulator rows; this changes no summation order.
void gemm_acc(const double* __restrict a, const double* __restrict b, double* __restrict c, std::size_t m, std::size_t k, std::size_t n) {
  std::size_t i = 0;
  for (; i + 4 <= m; i += 4) {
    double* __restrict c0 = c + i * n;
    double* __restrict c1 = c0 + n;
    double* __restrict c2 = c1 + n;
    double* __restrict c3 = c2 + n;
    const double* a0 = a + i * k;
    for (std::size_t p = 0; p < k; ++p) {
      const double v0 = a0[p], v1 = a0[k + p], v2 = a0[2 * k + p], v3 = a0[3 * k + p];
      const double* bp = b + p * n;
      for (std::size_t j = 0; j < n; ++j) {
        const double bv = bp[j];
        c0[j] += v0 * bv;
        c1[j] += v1 * bv;
        c2[j] += v2 * bv;
        c3[j] += v3 * bv;
      }
    }
  }
  for (; i < m; ++i) {
    double* ci = c + i * n;
    const double* ai = a + i * k;
    for (std::size_t p = 0; p < k; ++p) {
      const double av = ai[p];
      const double* bp = b + p * n;
      for (std::size_t j = 0; j < n; ++j) ci[j] += av * bp[j];
    }
  }
}

std::vector<double> transpose(const double* a, std::size_t r, std::size_t c) {
  std::vector<double> t(r * c);
  for (std::size_t i = 0; i < r; ++i)
    for (std::size_t j = 0; j < c; ++j) t[j * r + i] = a[i * c + j];
  return t;
}

}  // namespace

Tensor matmul(const Tensor& a, const Tensor& b) {
  require(a.rank() == 2 && b.rank() == 2, "matmul", "operands must be rank 2");
  const std::size_t m = a.shape()[0], k = a.shape()[1], n = b.shape()[1];
  require(b.shape()[0] == k, "matmul", "inner dimensions differ: " + shape_str(a.shape()) + " x " + shape_str(b.shape()));
  std::vector<double> out(m * n, 0.0);
  gemm_acc(a.data().data(), b.data().data(), out.data(), m, k, n);
  Node* an = a.node();
  Node* bn = b.node();
  return make("matmul", {m, n}, std::move(out), {a.node_ptr(), b.node_ptr()}, [an, bn, m, k, n](Node& self) {
    if (an->requires_grad) {
      // dA = dC * B^T
      const auto bt = transpose(bn->data.data(), k, n);
      gemm_acc(self.grad.data(), bt.data(), an->ensure_grad().data(), m, n, k);
    }
    if (bn->requires_grad) {
      // dB = A^T * dC
      const auto at = transpose(an->data.data(), m, k);
      gemm_acc(at.data(), self.grad.data(), bn->ensure_grad().data(), k, m, n);
    }
  });
}

Tensor transpose(const Tensor& a) {
  require(a.rank() == 2, "transpose", "operand must be rank 2");
  const std::size_t r = a.shape()[0], c = a.shape()[1];
  Node* an = a.node();
  return make("transpose", {c, r}, transpose(a.data().data(), r, c), {a.node_ptr()}, [an, r, c](Node& self) {
    auto& g = an->ensure_grad();
    for (std::size_t i = 0; i < r; ++i)
      for (std::size_t j = 0; j < c; ++j) g[i * c + j] += self.grad[j * r + i];
  });
}

namespace {

template <typename F, typename GA, typename GB>
Tensor elementwise(const char* op, const Tensor& a, const Tensor& b, F f, GA ga, GB gb) {
  require(a.numel() == b.numel(), op, "shape mismatch " + shape_str(a.shape()) + " vs " + shape_str(b.shape()));
  const auto ad = a.data();
  const auto bd = b.data();
  std::vector<double> out(ad.size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = f(ad[i], bd[i]);
  Node* an = a.node();
  Node* bn = b.node();
  return make(op, a.shape(), std::move(out), {a.node_ptr(), b.node_ptr()}, [an, bn, ga, gb](Node& self) {
    const std::size_t n = self.grad.size();
    if (an->requires_grad) {
      auto& g = an->ensure_grad();
      for (std::size_t i = 0; i < n; ++i) g[i] += ga(self.grad[i], an->data[i], bn->data[i]);
    }
    if (bn->requires_grad) {
      auto& g = bn->ensure_grad();
      for (std::size_t i = 0; i < n; ++i) g[i] += gb(self.grad[i], an->data[i], bn->data[i]);
    }
  });
}

}  // namespace

Tensor add(const Tensor& a, const Tensor& b) {
  return elementwise(
      "add", a, b, [](double x, double y) { return x + y; }, [](double g, double, double) { return g; },
      [](double g, double, double) { return g; });
}

Tensor sub(const Tensor& a, const Tensor& b) {
  return elementwise(
      "sub", a, b, [](double x, double y) { return x - y; }, [](double g, double, double) { return g; },
      [](double g, double, double) { return -g; });
}

Tensor mul(const Tensor& a, const Tensor& b) {
  return elementwise(
      "mul", a, b, [](double x, double y) { return x * y; }, [](double g, double, double y) { return g * y; },
      [](double g, double x, double) { return g * x; });
}

Tensor scale(const Tensor& a, double s) {
  std::vector<double> out(a.data().begin(), a.data().end());
  for (double& x : out) x *= s;
  Node* an = a.node();
  return make("scale", a.shape(), std::move(out), {a.node_ptr()}, [an, s](Node& self) {
    auto& g = an->ensure_grad();
    for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i] * s;
  });
}

Tensor add_row(const Tensor& a, const Tensor& bias) {
  require(a.rank() == 2, "add_row", "input must be rank 2");
  const std::size_t m = a.shape()[0], n = a.shape()[1];
  require(bias.numel() == n, "add_row", "bias length differs from column count");
  std::vector<double> out(a.data().begin(), a.data().end());
  const auto bd = bias.data();
  for (std::size_t i = 0; i < m; ++i)
    for (std::size_t j = 0; j < n; ++j) out[i * n + j] += bd[j];
  Node* an = a.node();
  Node* bn = bias.node();
  return make("add_row", a.shape(), std::move(out), {a.node_ptr(), bias.node_ptr()}, [an, bn, m, n](Node& self) {
    if (an->requires_grad) {
      auto& g = an->ensure_grad();
      for (std::size_t i = 0; i < m * n; ++i) g[i] += self.grad[i];
    }
    if (bn->requires_grad) {
      auto& g = bn->ensure_grad();
      for (std::size_t i = 0; i < m; ++i)
        for (std::size_t j = 0; j < n; ++j) g[j] += self.grad[i * n + j];
    }
  });
}

Tensor layer_norm(const Tensor& x, const Tensor& gain, const Tensor& bias, double eps) {
  const std::size_t m = rows_of(x), n = cols_of(x);
  require(gain.numel() == n && bias.numel() == n, "layer_norm", "gain/bias length differs from row width");
  const auto xd = x.data();
  const auto gd = gain.data();
  const auto bd = bias.data();
  std::vector<double> out(m * n);
  auto xhat = std::make_shared<std::vector<double>>(m * n);
  auto rstd = std::make_shared<std::vector<double>>(m);
  for (std::size_t i = 0; i < m; ++i) {
    const double* row = xd.data() + i * n;
    double mean = 0.0;
    for (std::size_t j = 0; j < n; ++j) mean += row[j];
    mean /= static_cast<double>(n);
    double var = 0.0;
    for (std::size_t j = 0; j < n; ++j) var += (row[j] - mean) * (row[j] - mean);
    var /= static_cast<double>(n);
    const double r = 1.0 / std::sqrt(var + eps);
    (*rstd)[i] = r;
    for (std::size_t j = 0; j < n; ++j) {
      const double h = (row[j] - mean) * r;
      (*xhat)[i * n + j] = h;
      out[i * n + j] = h * gd[j] + bd[j];
    }
  }
  Node* xn = x.node();
  Node* gn = gain.node();
  Node* bn = bias.node();
  return make("layer_norm", x.shape(), std::move(out), {x.node_ptr(), gain.node_ptr(), bias.node_ptr()},
              [xn, gn, bn, xhat, rstd, m, n](Node& self) {
                const auto& dy = self.grad;
                if (gn->requires_grad) {
                  auto& g = gn->ensure_grad();
                  for (std::size_t i = 0; i < m; ++i)
                    for (std::size_t j = 0; j < n; ++j) g[j] += dy[i * n + j] * (*xhat)[i * n + j];
                }
                if (bn->requires_grad) {
                  auto& g = bn->ensure_grad();
                  for (std::size_t i = 0; i < m; ++i)
                    for (std::size_t j = 0; j < n; ++j) g[j] += dy[i * n + j];
                }
                if (xn->requires_grad) {
                  auto& g = xn->ensure_grad();
                  const double inv_n = 1.0 / static_cast<double>(n);
                  for (std::size_t i = 0; i < m; ++i) {
                    double sum_d = 0.0, sum_dx = 0.0;
                    for (std::size_t j = 0; j < n; ++j) {
                      const double d = dy[i * n + j] * gn->data[j];
                      sum_d += d;
                      sum_dx += d * (*xhat)[i * n + j];
                    }
                    for (std::size_t j = 0; j < n; ++j) {
                      const double d = dy[i * n + j] * gn->data[j];
                      g[i * n + j] += (*rstd)[i] * (d - inv_n * sum_d - (*xhat)[i * n + j] * inv_n * sum_dx);
                    }
                  }
                }
              });
}

Tensor gelu(const Tensor& x) {
  constexpr double kC = 0.7978845608028654;  // sqrt(2/pi)
  constexpr double kA = 0.044715;
  const auto xd = x.data();
  std::vector<double> out(xd.size());
  for (std::size_t i = 0; i < xd.size(); ++i) {
    const double v = xd[i];
    out[i] = 0.5 * v * (1.0 + std::tanh(kC * (v + kA * v * v * v)));
  }
  Node* xn = x.node();
  return make("gelu", x.shape(), std::move(out), {x.node_ptr()}, [xn](Node& self) {
    auto& g = xn->ensure_grad();
    for (std::size_t i = 0; i < g.size(); ++i) {
      const double v = xn->data[i];
      const double t = std::tanh(kC * (v + kA * v * v * v));
      const double dt = (1.0 - t * t) * kC * (1.0 + 3.0 * kA * v * v);
      g[i] += self.grad[i] * (0.5 * (1.0 + t) + 0.5 * v * dt);
    }
  });
}

Tensor gather_rows(const Tensor& table, std::span<const int> ids) {
  require(table.rank() == 2, "gather_rows", "table must be rank 2");
  const std::size_t vocab = table.shape()[0], d = table.shape()[1];
  std::vector<double> out(ids.size() * d);
  const auto td = table.data();
  for (std::size_t i = 0; i < ids.size(); ++i) {
    require(ids[i] >= 0 && static_cast<std::size_t>(ids[i]) < vocab, "gather_rows",
            "id " + std::to_string(ids[i]) + " out of range for table of " + std::to_string(vocab) + " rows");
    std::copy_n(td.data() + static_cast<std::size_t>(ids[i]) * d, d, out.data() + i * d);
  }
  Node* tn = table.node();
  std::vector<int> idv(ids.begin(), ids.end());
  return make("gather_rows", {ids.size(), d}, std::move(out), {table.node_ptr()}, [tn, idv, d](Node& self) {
    auto& g = tn->ensure_grad();
    for (std::size_t i = 0; i < idv.size(); ++i) {
      double* dst = g.data() + static_cast<std::size_t>(idv[i]) * d;
      for (std::size_t j = 0; j < d; ++j) dst[j] += self.grad[i * d + j];
    }
  });
}

Tensor slice_rows(const Tensor& x, std::size_t begin, std::size_t end) {
  require(x.rank() == 2, "slice_rows", "input must be rank 2");
  require(begin <= end && end <= x.shape()[0], "slice_rows", "row range out of bounds");
  const std::size_t d = x.shape()[1];
  std::vector<double> out(x.data().begin() + static_cast<std::ptrdiff_t>(begin * d),
                          x.data().begin() + static_cast<std::ptrdiff_t>(end * d));
  Node* xn = x.node();
  return make("slice_rows", {end - begin, d}, std::move(out), {x.node_ptr()}, [xn, begin, d](Node& self) {
    auto& g = xn->ensure_grad();
    for (std::size_t i = 0; i < self.grad.size(); ++i) g[begin * d + i] += self.grad[i];
  });
}

Tensor concat_rows(const std::vector<Tensor>& parts) {
  require(!parts.empty(), "concat_rows", "no parts");
  const std::size_t d = parts.front().shape()[1];
  std::size_t total = 0;
  std::vector<NodePtr> parents;
  std::vector<double> out;
  for (const auto& p : parts) {
    require(p.rank() == 2 && p.shape()[1] == d, "concat_rows", "column counts differ");
    total += p.shape()[0];
    out.insert(out.end(), p.data().begin(), p.data().end());
    parents.push_back(p.node_ptr());
  }
  std::vector<Node*> raw;
  for (const auto& p : parts) raw.push_back(p.node());
  return make("concat_rows", {total, d}, std::move(out), std::move(parents), [raw](Node& self) {
    std::size_t off = 0;
    for (Node* p : raw) {
      const std::size_t n = p->data.size();
      if (p->requires_grad) {
        auto& g = p->ensure_grad();
        for (std::size_t i = 0; i < n; ++i) g[i] += self.grad[off + i];
      }
      off += n;
    }
  });
}

Tensor replace_row(const Tensor& x, std::size_t row, const Tensor& v) {
  require(x.rank() == 2, "replace_row", "input must be rank 2");
  const std::size_t d = x.shape()[1];
  require(row < x.shape()[0], "replace_row", "row out of range");
  require(v.numel() == d, "replace_row", "vector width differs from row width");
  std::vector<double> out(x.data().begin(), x.data().end());
  std::copy(v.data().begin(), v.data().end(), out.begin() + static_cast<std::ptrdiff_t>(row * d));
  Node* xn = x.node();
  Node* vn = v.node();
  return make("replace_row", x.shape(), std::move(out), {x.node_ptr(), v.node_ptr()}, [xn, vn, row, d](Node& self) {
    if (xn->requires_grad) {
      auto& g = xn->ensure_grad();
      for (std::size_t i = 0; i < g.size(); ++i) {
        if (i / d != row) g[i] += self.grad[i];
      }
    }
    if (vn->requires_grad) {
      auto& g = vn->ensure_grad();
      for (std::size_t j = 0; j < d; ++j) g[j] += self.grad[row * d + j];
    }
  });
}

Tensor causal_attention(const Tensor& q, const Tensor& k, const Tensor& v, std::size_t heads, std::size_t offset) {
  require(q.rank() == 2 && k.rank() == 2 && v.rank() == 2, "causal_attention", "operands must be rank 2");
  const std::size_t n = q.shape()[0], d = q.shape()[1], m = k.shape()[0];
  require(k.shape()[1] == d && v.shape()[1] == d && v.shape()[0] == m, "causal_attention", "q/k/v widths differ");
  require(heads > 0 && d % heads == 0, "causal_attention", "width not divisible by head count");
  require(offset + n <= m, "causal_attention", "queries extend past the available keys");
  const std::size_t dh = d / heads;
  const double sc = 1.0 / std::sqrt(static_cast<double>(dh));
  const auto qd = q.data();
  const auto kd = k.data();
  const auto vd = v.data();
  std::vector<double> out(n * d, 0.0);
  // probs[h][i] holds the weights over keys 0..offset+i, packed per row.
  auto probs = std::make_shared<std::vector<double>>();
  auto row_start = std::make_shared<std::vector<std::size_t>>(heads * n);
  std::size_t total = 0;
  for (std::size_t i = 0; i < n; ++i) total += offset + i + 1;
  probs->resize(total * heads);
  std::size_t cursor = 0;
  for (std::size_t h = 0; h < heads; ++h) {
    const std::size_t c0 = h * dh;
    for (std::size_t i = 0; i < n; ++i) {
      const std::size_t lim = offset + i + 1;
      (*row_start)[h * n + i] = cursor;
      double* p = probs->data() + cursor;
      const double* qi = qd.data() + i * d + c0;
      double mx = -INFINITY;
      for (std::size_t j = 0; j < lim; ++j) {
        const double* kj = kd.data() + j * d + c0;
        double s = 0.0;
        for (std::size_t c = 0; c < dh; ++c) s += qi[c] * kj[c];
        s *= sc;
        p[j] = s;
        mx = std::max(mx, s);
      }
      double z = 0.0;
      for (std::size_t j = 0; j < lim; ++j) {
        p[j] = std::exp(p[j] - mx);
        z += p[j];
      }
      const double inv = 1.0 / z;
      double* oi = out.data() + i * d + c0;
      for (std::size_t j = 0; j < lim; ++j) {
        p[j] *= inv;
        const double* vj = vd.data() + j * d + c0;
        for (std::size_t c = 0; c < dh; ++c) oi[c] += p[j] * vj[c];
      }
      cursor += lim;
    }
  }
  Node* qn = q.node();
  Node* kn = k.node();
  Node* vn = v.node();
  return make("causal_attention", {n, d}, std::move(out), {q.node_ptr(), k.node_ptr(), v.node_ptr()},
              [qn, kn, vn, probs, row_start, n, d, heads, dh, offset, sc](Node& self) {
                std::vector<double>* dq = qn->requires_grad ? &qn->ensure_grad() : nullptr;
                std::vector<double>* dk = kn->requires_grad ? &kn->ensure_grad() : nullptr;
                std::vector<double>* dv = vn->requires_grad ? &vn->ensure_grad() : nullptr;
                std::vector<double> dp;
                for (std::size_t h = 0; h < heads; ++h) {
                  const std::size_t c0 = h * dh;
                  for (std::size_t i = 0; i < n; ++i) {
                    const std::size_t lim = offset + i + 1;
                    const double* p = probs->data() + (*row_start)[h * n + i];
                    const double* go = self.grad.data() + i * d + c0;
                    dp.assign(lim, 0.0);
                    double dot = 0.0;
                    for (std::size_t j = 0; j < lim; ++j) {
                      const double* vj = vn->data.data() + j * d + c0;
                      double s = 0.0;
                      for (std::size_t c = 0; c < dh; ++c) s += go[c] * vj[c];
                      dp[j] = s;
                      dot += p[j] * s;
                      if (dv) {
                        double* dvj = dv->data() + j * d + c0;
                        for (std::size_t c = 0; c < dh; ++c) dvj[c] += p[j] * go[c];
                      }
                    }
                    const double* qi = qn->data.data() + i * d + c0;
                    for (std::size_t j = 0; j < lim; ++j) {
                      const double ds = p[j] * (dp[j] - dot) * sc;
                      if (dq) {
                        const double* kj = kn->data.data() + j * d + c0;
                        double* dqi = dq->data() + i * d + c0;
                        for (std::size_t c = 0; c < dh; ++c) dqi[c] += ds * kj[c];
                      }
                      if (dk) {
                        double* dkj = dk->data() + j * d + c0;
                        for (std::size_t c = 0; c < dh; ++c) dkj[c] += ds * qi[c];
                      }
                    }
                  }
                }
              });
}

Tensor softmax_rows(const Tensor& x) {
  const std::size_t m = rows_of(x), n = cols_of(x);
  const auto xd = x.data();
  std::vector<double> out(m * n);
  for (std::size_t i = 0; i < m; ++i) {
    const double* r = xd.data() + i * n;
    double mx = -INFINITY;
    for (std::size_t j = 0; j < n; ++j) mx = std::max(mx, r[j]);
    double z = 0.0;
    for (std::size_t j = 0; j < n; ++j) {
      out[i * n + j] = std::exp(r[j] - mx);
      z += out[i * n + j];
    }
    for (std::size_t j = 0; j < n; ++j) out[i * n + j] /= z;
  }
  Node* xn = x.node();
  auto y = std::make_shared<std::vector<double>>(out);
  return make("softmax_rows", x.shape(), std::move(out), {x.node_ptr()}, [xn, y, m, n](Node& self) {
    auto& g = xn->ensure_grad();
    for (std::size_t i = 0; i < m; ++i) {
      double dot = 0.0;
      for (std::size_t j = 0; j < n; ++j) dot += self.grad[i * n + j] * (*y)[i * n + j];
      for (std::size_t j = 0; j < n; ++j) g[i * n + j] += (*y)[i * n + j] * (self.grad[i * n + j] - dot);
    }
  });
}

Tensor log_softmax_rows(const Tensor& x) {
  const std::size_t m = rows_of(x), n = cols_of(x);
  const auto xd = x.data();
  std::vector<double> out(m * n);
  for (std::size_t i = 0; i < m; ++i) {
    const double* r = xd.data() + i * n;
    double mx = -INFINITY;
    for (std::size_t j = 0; j < n; ++j) mx = std::max(mx, r[j]);
    double z = 0.0;
    for (std::size_t j = 0; j < n; ++j) z += std::exp(r[j] - mx);
    const double lse = mx + std::log(z);
    for (std::size_t j = 0; j < n; ++j) out[i * n + j] = r[j] - lse;
  }
  Node* xn = x.node();
  auto y = std::make_shared<std::vector<double>>(out);
  return make("log_softmax_rows", x.shape(), std::move(out), {x.node_ptr()}, [xn, y, m, n](Node& self) {
    auto& g = xn->ensure_grad();
    for (std::size_t i = 0; i < m; ++i) {
      double s = 0.0;
      for (std::size_t j = 0; j < n; ++j) s += self.grad[i * n + j];
      for (std::size_t j = 0; j < n; ++j) g[i * n + j] += self.grad[i * n + j] - std::exp((*y)[i * n + j]) * s;
    }
  });
}

Tensor nll_sum(const Tensor& log_probs, std::span<const std::size_t> rows, std::span<const int> cols) {
  require(rows.size() == cols.size(), "nll_sum", "rows/cols length differ");
  const std::size_t n = cols_of(log_probs), m = rows_of(log_probs);
  double total = 0.0;
  for (std::size_t i = 0; i < rows.size(); ++i) {
    require(rows[i] < m && cols[i] >= 0 && static_cast<std::size_t>(cols[i]) < n, "nll_sum", "index out of range");
    total -= log_probs.data()[rows[i] * n + static_cast<std::size_t>(cols[i])];
  }
  Node* ln = log_probs.node();
  std::vector<std::size_t> rv(rows.begin(), rows.end());
  std::vector<int> cv(cols.begin(), cols.end());
  return make("nll_sum", {}, {total}, {log_probs.node_ptr()}, [ln, rv, cv, n](Node& self) {
    auto& g = ln->ensure_grad();
    for (std::size_t i = 0; i < rv.size(); ++i) g[rv[i] * n + static_cast<std::size_t>(cv[i])] -= self.grad[0];
  });
}

Tensor cross_entropy_sum(const Tensor& logits, std::span<const std::size_t> rows, std::span<const int> targets) {
  require(rows.size() == targets.size(), "cross_entropy_sum", "rows/targets length differ");
  const std::size_t n = cols_of(logits), m = rows_of(logits);
  const auto xd = logits.data();
  auto probs = std::make_shared<std::vector<double>>(rows.size() * n);
  double total = 0.0;
  for (std::size_t i = 0; i < rows.size(); ++i) {
    require(rows[i] < m && targets[i] >= 0 && static_cast<std::size_t>(targets[i]) < n, "cross_entropy_sum",
            "index out of range");
    const double* r = xd.data() + rows[i] * n;
    double mx = -INFINITY;
    for (std::size_t j = 0; j < n; ++j) mx = std::max(mx, r[j]);
    double z = 0.0;
    for (std::size_t j = 0; j < n; ++j) z += std::exp(r[j] - mx);
    const double lse = mx + std::log(z);
    for (std::size_t j = 0; j < n; ++j) (*probs)[i * n + j] = std::exp(r[j] - lse);
    total -= r[static_cast<std::size_t>(targets[i])] - lse;
  }
  Node* ln = logits.node();
  std::vector<std::size_t> rv(rows.begin(), rows.end());
  std::vector<int> tv(targets.begin(), targets.end());
  return make("cross_entropy_sum", {}, {total}, {logits.node_ptr()}, [ln, probs, rv, tv, n](Node& self) {
    auto& g = ln->ensure_grad();
    const double go = self.grad[0];
    for (std::size_t i = 0; i < rv.size(); ++i) {
      double* gi = g.data() + rv[i] * n;
      const double* pi = probs->data() + i * n;
      for (std::size_t j = 0; j < n; ++j) gi[j] += go * pi[j];
      gi[static_cast<std::size_t>(tv[i])] -= go;
    }
  });
}

Tensor squared_distance(const Tensor& a, const Tensor& b) {
  require(a.numel() == b.numel(), "squared_distance", "element counts differ");
  const auto ad = a.data();
  const auto bd = b.data();
  double total = 0.0;
  for (std::size_t i = 0; i < ad.size(); ++i) total += (ad[i] - bd[i]) * (ad[i] - bd[i]);
  Node* an = a.node();
  Node* bn = b.node();
  return make("squared_distance", {}, {total}, {a.node_ptr(), b.node_ptr()}, [an, bn](Node& self) {
    const double go = self.grad[0];
    if (an->requires_grad) {
      auto& g = an->ensure_grad();
      for (std::size_t i = 0; i < g.size(); ++i) g[i] += 2.0 * go * (an->data[i] - bn->data[i]);
    }
    if (bn->requires_grad) {
      auto& g = bn->ensure_grad();
      for (std::size_t i = 0; i < g.size(); ++i) g[i] -= 2.0 * go * (an->data[i] - bn->data[i]);
    }
  });
}

Tensor sum(const Tensor& x) {
  double total = 0.0;
  for (double v : x.data()) total += v;
  Node* xn = x.node();
  return make("sum", {}, {total}, {x.node_ptr()}, [xn](Node& self) {
    auto& g = xn->ensure_grad();
    for (double& v : g) v += self.grad[0];
  });
}

Tensor weighted_sum(const std::vector<Tensor>& scalars, std::span<const double> weights) {
  require(scalars.size() == weights.size() && !scalars.empty(), "weighted_sum", "need one weight per scalar");
  double total = 0.0;
  std::vector<NodePtr> parents;
  std::vector<Node*> raw;
  for (std::size_t i = 0; i < scalars.size(); ++i) {
    require(scalars[i].numel() == 1, "weighted_sum", "inputs must be scalars");
    total += weights[i] * scalars[i].item();
    parents.push_back(scalars[i].node_ptr());
    raw.push_back(scalars[i].node());
  }
  std::vector<double> w(weights.begin(), weights.end());
  return make("weighted_sum", {}, {total}, std::move(parents), [raw, w](Node& self) {
    for (std::size_t i = 0; i < raw.size(); ++i) {
      if (raw[i]->requires_grad) raw[i]->ensure_grad()[0] += w[i] * self.grad[0];
    }
  });
}

}  // namespace onelatent::numeric
