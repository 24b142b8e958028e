#include "dpadaln/autodiff.hpp"

#include <algorithm>
#include <cmath>
#include <memory>
#include <utility>

#include <Eigen/Core>

#if defined(DPADALN_HAVE_MVEC) && defined(__AVX512F__)
#include <immintrin.h>
extern "C" __m512d _ZGVeN8v_tanh(__m512d);
extern "C" __m512d _ZGVeN8v_exp(__m512d);
#define DPADALN_VECTOR_MATH 1
#endif

namespace dpadaln::ad {

namespace {

using RowMajor = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using MapC = Eigen::Map<const RowMajor>;
using Map = Eigen::Map<RowMajor>;
using Stride = Eigen::OuterStride<>;
using MapCS = Eigen::Map<const RowMajor, 0, Stride>;
using MapS = Eigen::Map<RowMajor, 0, Stride>;

void require_same(std::string_view op, const Tensor& a, const Tensor& b) {
  if (a.rows() != b.rows() || a.cols() != b.cols()) {
    throw Error(std::string(op) + ": shape mismatch " + a.shape_str() + " vs " + b.shape_str());
  }
}

void tanh_inplace(double* x, std::size_t n) {
#ifdef DPADALN_VECTOR_MATH
  std::size_t i = 0;
  for (; i + 8 <= n; i += 8) _mm512_storeu_pd(x + i, _ZGVeN8v_tanh(_mm512_loadu_pd(x + i)));
  if (i < n) {
    const __mmask8 m = static_cast<__mmask8>((1u << (n - i)) - 1u);
    _mm512_mask_storeu_pd(x + i, m, _ZGVeN8v_tanh(_mm512_maskz_loadu_pd(m, x + i)));
  }
#else
  for (std::size_t i = 0; i < n; ++i) x[i] = std::tanh(x[i]);
#endif
}

void exp_inplace(double* x, std::size_t n) {
#ifdef DPADALN_VECTOR_MATH
  std::size_t i = 0;
  for (; i + 8 <= n; i += 8) _mm512_storeu_pd(x + i, _ZGVeN8v_exp(_mm512_loadu_pd(x + i)));
  if (i < n) {
    const __mmask8 m = static_cast<__mmask8>((1u << (n - i)) - 1u);
    _mm512_mask_storeu_pd(x + i, m, _ZGVeN8v_exp(_mm512_maskz_loadu_pd(m, x + i)));
  }
#else
  for (std::size_t i = 0; i < n; ++i) x[i] = std::exp(x[i]);
#endif
}

// Row-wise softmax in place over an m x n block with leading dimension ld.
void softmax_rows(double* x, std::size_t m, std::size_t n, std::size_t ld) {
  for (std::size_t i = 0; i < m; ++i) {
    double* row = x + i * ld;
    const double mx = *std::max_element(row, row + n);
    for (std::size_t j = 0; j < n; ++j) row[j] -= mx;
    exp_inplace(row, n);
    double s = 0.0;
    for (std::size_t j = 0; j < n; ++j) s += row[j];
    const double inv = 1.0 / s;
    for (std::size_t j = 0; j < n; ++j) row[j] *= inv;
  }
}

// For softmax output y and upstream g (rows of length n): ga += y * (g - <g, y>).
void softmax_rows_backward(const double* g, const double* y, double* ga, std::size_t m, std::size_t n,
                           std::size_t ld) {
  for (std::size_t i = 0; i < m; ++i) {
    const double* gi = g + i * ld;
    const double* yi = y + i * ld;
    double dotgy = 0.0;
    for (std::size_t j = 0; j < n; ++j) dotgy += gi[j] * yi[j];
    double* out = ga + i * ld;
    for (std::size_t j = 0; j < n; ++j) out[j] += yi[j] * (gi[j] - dotgy);
  }
}

std::vector<std::size_t> ids_of(const std::vector<Var>& vars) {
  std::vector<std::size_t> ids;
  ids.reserve(vars.size());
  for (const Var& v : vars) ids.push_back(v.id);
  return ids;
}

}  // namespace

const Tensor& Var::value() const { return tape->value(id); }
const Tensor& Var::grad() const { return tape->grad(id); }

Var Tape::push(Node node) {
  nodes_.push_back(std::move(node));
  return Var{this, nodes_.size() - 1};
}

Var Tape::constant(Tensor value) { return push(Node{"constant", std::move(value), {}, false, {}, {}, {}}); }

Var Tape::input(Tensor value) { return push(Node{"input", std::move(value), {}, true, {}, {}, {}}); }

Var Tape::parameter(const std::string& id, Tensor value) {
  for (const auto& [name, _] : params_) {
    if (name == id) throw Error("parameter '" + id + "' registered twice on one tape");
  }
  Var v = push(Node{"parameter", std::move(value), {}, true, {}, {}, {}});
  params_.emplace_back(id, v.id);
  return v;
}

std::vector<Var> Tape::parameters(const ParamSet& params) {
  std::vector<Var> vars;
  vars.reserve(params.count());
  for (const auto& e : params.entries()) vars.push_back(parameter(e.id, e.value));
  return vars;
}

Var Tape::parameter_var(std::string_view id) const {
  for (const auto& [name, node] : params_) {
    if (name == id) return Var{const_cast<Tape*>(this), node};
  }
  throw Error("parameter '" + std::string(id) + "' not on tape");
}

Var Tape::record(std::string_view op, std::initializer_list<Var> parents, Forward forward, Backprop backprop) {
  return record(op, std::vector<Var>(parents), std::move(forward), std::move(backprop));
}

Var Tape::record(std::string_view op, const std::vector<Var>& parents, Forward forward, Backprop backprop) {
  bool needs = false;
  for (const Var& p : parents) {
    if (p.tape != this) throw Error(std::string(op) + ": operand from a different tape");
    needs = needs || nodes_[p.id].requires_grad;
  }
  Var v = push(Node{std::string(op), Tensor{}, Tensor{}, needs, ids_of(parents), std::move(forward),
                    needs ? std::move(backprop) : Backprop{}});
  nodes_[v.id].forward(*this, v.id);
  return v;
}

Tensor& Tape::output(std::size_t self, std::vector<std::size_t> shape) {
  Tensor& t = nodes_[self].value;
  if (t.shape != shape || t.data.size() != shape_product(shape)) t = Tensor(std::move(shape), 0.0);
  return t;
}

Tensor* Tape::grad_buffer(std::size_t id) {
  Node& n = nodes_[id];
  if (!n.requires_grad) return nullptr;
  if (n.grad.size() != n.value.size()) n.grad = Tensor::zeros_like(n.value);
  return &n.grad;
}

void Tape::zero_grad() {
  for (Node& n : nodes_) n.grad = Tensor{};
}

void Tape::backward(Var loss) {
  if (nodes_[loss.id].value.size() != 1) {
    throw Error("backward: loss node '" + nodes_[loss.id].op + "' is not scalar, shape " +
                nodes_[loss.id].value.shape_str());
  }
  backward(loss, Tensor(nodes_[loss.id].value.shape, 1.0));
}

void Tape::backward(Var out, const Tensor& seed) {
  if (seed.size() != nodes_[out.id].value.size()) {
    throw Error("backward: seed shape " + seed.shape_str() + " does not match node " +
                nodes_[out.id].value.shape_str());
  }
  if (Tensor* g = grad_buffer(out.id)) {
    for (std::size_t i = 0; i < seed.size(); ++i) (*g)[i] += seed[i];
  }
  for (std::size_t i = out.id + 1; i-- > 0;) {
    Node& n = nodes_[i];
    if (!n.requires_grad || !n.backprop || n.grad.size() == 0) continue;
    n.backprop(*this, i);
  }
}

GradientVector Tape::parameter_gradients() const {
  GradientVector g;
  for (const auto& [name, id] : params_) {
    const Node& n = nodes_[id];
    g.add(name, n.grad.size() == n.value.size() ? n.grad : Tensor::zeros_like(n.value));
  }
  return g;
}

Tensor& Tape::leaf_value(std::size_t id) {
  if (id >= nodes_.size()) throw Error("leaf_value: node out of range");
  if (nodes_[id].forward) throw Error("leaf_value: node '" + nodes_[id].op + "' is not a leaf");
  return nodes_[id].value;
}

std::vector<std::size_t> Tape::descendants(std::size_t id) const {
  std::vector<char> hit(nodes_.size(), 0);
  hit[id] = 1;
  std::vector<std::size_t> out;
  for (std::size_t j = id + 1; j < nodes_.size(); ++j) {
    for (std::size_t p : nodes_[j].parents) {
      if (hit[p]) {
        hit[j] = 1;
        out.push_back(j);
        break;
      }
    }
  }
  return out;
}

void Tape::recompute(const std::vector<std::size_t>& ids) {
  for (std::size_t id : ids) {
    if (nodes_[id].forward) nodes_[id].forward(*this, id);
  }
}

// ---- primitives -----------------------------------------------------------

Var add(Var a, Var b) {
  require_same("add", a.value(), b.value());
  return a.tape->record(
      "add", {a, b},
      [a, b](Tape& t, std::size_t self) {
        const Tensor& x = t.value(a.id);
        const Tensor& y = t.value(b.id);
        Tensor& o = t.output(self, x.shape);
        for (std::size_t i = 0; i < o.size(); ++i) o[i] = x[i] + y[i];
      },
      [a, b](Tape& t, std::size_t self) {
        const Tensor& g = t.grad(self);
        for (Var p : {a, b}) {
          if (Tensor* gp = t.grad_buffer(p.id)) {
            for (std::size_t i = 0; i < g.size(); ++i) (*gp)[i] += g[i];
          }
        }
      });
}

Var sub(Var a, Var b) {
  require_same("sub", a.value(), b.value());
  return a.tape->record(
      "sub", {a, b},
      [a, b](Tape& t, std::size_t self) {
        const Tensor& x = t.value(a.id);
        const Tensor& y = t.value(b.id);
        Tensor& o = t.output(self, x.shape);
        for (std::size_t i = 0; i < o.size(); ++i) o[i] = x[i] - y[i];
      },
      [a, b](Tape& t, std::size_t self) {
        const Tensor& g = t.grad(self);
        if (Tensor* ga = t.grad_buffer(a.id)) {
          for (std::size_t i = 0; i < g.size(); ++i) (*ga)[i] += g[i];
        }
        if (Tensor* gb = t.grad_buffer(b.id)) {
          for (std::size_t i = 0; i < g.size(); ++i) (*gb)[i] -= g[i];
        }
      });
}

Var mul(Var a, Var b) {
  require_same("mul", a.value(), b.value());
  return a.tape->record(
      "mul", {a, b},
      [a, b](Tape& t, std::size_t self) {
        const Tensor& x = t.value(a.id);
        const Tensor& y = t.value(b.id);
        Tensor& o = t.output(self, x.shape);
        for (std::size_t i = 0; i < o.size(); ++i) o[i] = x[i] * y[i];
      },
      [a, b](Tape& t, std::size_t self) {
        const Tensor& g = t.grad(self);
        const Tensor& x = t.value(a.id);
        const Tensor& y = t.value(b.id);
        if (Tensor* ga = t.grad_buffer(a.id)) {
          for (std::size_t i = 0; i < g.size(); ++i) (*ga)[i] += g[i] * y[i];
        }
        if (Tensor* gb = t.grad_buffer(b.id)) {
          for (std::size_t i = 0; i < g.size(); ++i) (*gb)[i] += g[i] * x[i];
        }
      });
}

Var scale(Var a, double s) {
  return a.tape->record(
      "scale", {a},
      [a, s](Tape& t, std::size_t self) {
        const Tensor& x = t.value(a.id);
        Tensor& o = t.output(self, x.shape);
        for (std::size_t i = 0; i < o.size(); ++i) o[i] = s * x[i];
      },
      [a, s](Tape& t, std::size_t self) {
        const Tensor& g = t.grad(self);
        if (Tensor* ga = t.grad_buffer(a.id)) {
          for (std::size_t i = 0; i < g.size(); ++i) (*ga)[i] += s * g[i];
        }
      });
}

Var matmul(Var a, Var b) {
  const Tensor& x = a.value();
  const Tensor& y = b.value();
  const std::size_t m = x.rows(), k = x.cols(), n = y.cols();
  if (y.rows() != k) {
    throw Error("matmul: inner dimensions differ " + x.shape_str() + " * " + y.shape_str());
  }
  return a.tape->record(
      "matmul", {a, b},
      [a, b, m, k, n](Tape& t, std::size_t self) {
        const Tensor& x = t.value(a.id);
        const Tensor& y = t.value(b.id);
        Tensor& o = t.output(self, {m, n});
        Map(o.data.data(), m, n).noalias() = MapC(x.data.data(), m, k) * MapC(y.data.data(), k, n);
      },
      [a, b, m, k, n](Tape& t, std::size_t self) {
        const Tensor& g = t.grad(self);
        const MapC G(g.data.data(), m, n);
        if (Tensor* ga = t.grad_buffer(a.id)) {
          Map(ga->data.data(), m, k).noalias() += G * MapC(t.value(b.id).data.data(), k, n).transpose();
        }
        if (Tensor* gb = t.grad_buffer(b.id)) {
          Map(gb->data.data(), k, n).noalias() += MapC(t.value(a.id).data.data(), m, k).transpose() * G;
        }
      });
}

Var transpose(Var a) {
  const std::size_t m = a.value().rows(), n = a.value().cols();
  return a.tape->record(
      "transpose", {a},
      [a, m, n](Tape& t, std::size_t self) {
        const Tensor& x = t.value(a.id);
        Tensor& o = t.output(self, {n, m});
        for (std::size_t i = 0; i < m; ++i) {
          for (std::size_t j = 0; j < n; ++j) o.data[j * m + i] = x.data[i * n + j];
        }
      },
      [a, m, n](Tape& t, std::size_t self) {
        const Tensor& g = t.grad(self);
        if (Tensor* ga = t.grad_buffer(a.id)) {
          for (std::size_t i = 0; i < m; ++i) {
            for (std::size_t j = 0; j < n; ++j) ga->data[i * n + j] += g.data[j * m + i];
          }
        }
      });
}

Var add_row(Var a, Var r) {
  const Tensor& x = a.value();
  const std::size_t m = x.rows(), n = x.cols();
  if (r.value().size() != n) {
    throw Error("add_row: row vector " + r.value().shape_str() + " vs matrix " + x.shape_str());
  }
  return a.tape->record(
      "add_row", {a, r},
      [a, r, m, n](Tape& t, std::size_t self) {
        const Tensor& x = t.value(a.id);
        const Tensor& v = t.value(r.id);
        Tensor& o = t.output(self, x.shape);
        for (std::size_t i = 0; i < m; ++i) {
          for (std::size_t j = 0; j < n; ++j) o.data[i * n + j] = x.data[i * n + j] + v[j];
        }
      },
      [a, r, m, n](Tape& t, std::size_t self) {
        const Tensor& g = t.grad(self);
        if (Tensor* ga = t.grad_buffer(a.id)) {
          for (std::size_t i = 0; i < g.size(); ++i) (*ga)[i] += g[i];
        }
        if (Tensor* gr = t.grad_buffer(r.id)) {
          for (std::size_t i = 0; i < m; ++i) {
            for (std::size_t j = 0; j < n; ++j) (*gr)[j] += g.data[i * n + j];
          }
        }
      });
}

Var mul_row(Var a, Var r) {
  const Tensor& x = a.value();
  const std::size_t m = x.rows(), n = x.cols();
  if (r.value().size() != n) {
    throw Error("mul_row: row vector " + r.value().shape_str() + " vs matrix " + x.shape_str());
  }
  return a.tape->record(
      "mul_row", {a, r},
      [a, r, m, n](Tape& t, std::size_t self) {
        const Tensor& x = t.value(a.id);
        const Tensor& v = t.value(r.id);
        Tensor& o = t.output(self, x.shape);
        for (std::size_t i = 0; i < m; ++i) {
          for (std::size_t j = 0; j < n; ++j) o.data[i * n + j] = x.data[i * n + j] * v[j];
        }
      },
      [a, r, m, n](Tape& t, std::size_t self) {
        const Tensor& g = t.grad(self);
        const Tensor& x = t.value(a.id);
        const Tensor& v = t.value(r.id);
        if (Tensor* ga = t.grad_buffer(a.id)) {
          for (std::size_t i = 0; i < m; ++i) {
            for (std::size_t j = 0; j < n; ++j) ga->data[i * n + j] += g.data[i * n + j] * v[j];
          }
        }
        if (Tensor* gr = t.grad_buffer(r.id)) {
          for (std::size_t i = 0; i < m; ++i) {
            for (std::size_t j = 0; j < n; ++j) (*gr)[j] += g.data[i * n + j] * x.data[i * n + j];
          }
        }
      });
}

Var tanh(Var a) {
  return a.tape->record(
      "tanh", {a},
      [a](Tape& t, std::size_t self) {
        const Tensor& x = t.value(a.id);
        Tensor& o = t.output(self, x.shape);
        std::copy(x.data.begin(), x.data.end(), o.data.begin());
        tanh_inplace(o.data.data(), o.size());
      },
      [a](Tape& t, std::size_t self) {
        const Tensor& g = t.grad(self);
        const Tensor& y = t.value(self);
        if (Tensor* ga = t.grad_buffer(a.id)) {
          for (std::size_t i = 0; i < g.size(); ++i) (*ga)[i] += g[i] * (1.0 - y[i] * y[i]);
        }
      });
}

Var clamp(Var a, double bound) {
  if (!(bound > 0.0)) throw Error("clamp: bound must be positive");
  return a.tape->record(
      "clamp", {a},
      [a, bound](Tape& t, std::size_t self) {
        const Tensor& x = t.value(a.id);
        Tensor& o = t.output(self, x.shape);
        for (std::size_t i = 0; i < o.size(); ++i) o[i] = std::clamp(x[i], -bound, bound);
      },
      [a, bound](Tape& t, std::size_t self) {
        const Tensor& g = t.grad(self);
        const Tensor& x = t.value(a.id);
        if (Tensor* ga = t.grad_buffer(a.id)) {
          for (std::size_t i = 0; i < g.size(); ++i) {
            if (std::abs(x[i]) <= bound) (*ga)[i] += g[i];
          }
        }
      });
}

Var clamp_ste(Var a, double bound) {
  if (!(bound > 0.0)) throw Error("clamp_ste: bound must be positive");
  return a.tape->record(
      "clamp_ste", {a},
      [a, bound](Tape& t, std::size_t self) {
        const Tensor& x = t.value(a.id);
        Tensor& o = t.output(self, x.shape);
        for (std::size_t i = 0; i < o.size(); ++i) o[i] = std::clamp(x[i], -bound, bound);
      },
      [a](Tape& t, std::size_t self) {
        const Tensor& g = t.grad(self);
        if (Tensor* ga = t.grad_buffer(a.id)) {
          for (std::size_t i = 0; i < g.size(); ++i) (*ga)[i] += g[i];
        }
      });
}

Var map(Var a, std::string_view name, const std::function<double(double)>& f,
        const std::function<double(double)>& df) {
  return a.tape->record(
      name, {a},
      [a, f](Tape& t, std::size_t self) {
        const Tensor& x = t.value(a.id);
        Tensor& o = t.output(self, x.shape);
        for (std::size_t i = 0; i < o.size(); ++i) o[i] = f(x[i]);
      },
      [a, df](Tape& t, std::size_t self) {
        const Tensor& g = t.grad(self);
        const Tensor& x = t.value(a.id);
        if (Tensor* ga = t.grad_buffer(a.id)) {
          for (std::size_t i = 0; i < g.size(); ++i) (*ga)[i] += g[i] * df(x[i]);
        }
      });
}

Var layer_norm(Var a, double eps) {
  const std::size_t m = a.value().rows(), n = a.value().cols();
  auto inv_std = std::make_shared<std::vector<double>>(m);
  return a.tape->record(
      "layer_norm", {a},
      [a, m, n, eps, inv_std](Tape& t, std::size_t self) {
        const Tensor& x = t.value(a.id);
        Tensor& o = t.output(self, x.shape);
        for (std::size_t i = 0; i < m; ++i) {
          const double* xi = x.data.data() + i * n;
          double* row = o.data.data() + i * n;
          double mean = 0.0;
          for (std::size_t j = 0; j < n; ++j) mean += xi[j];
          mean /= static_cast<double>(n);
          double var = 0.0;
          for (std::size_t j = 0; j < n; ++j) var += (xi[j] - mean) * (xi[j] - mean);
          var /= static_cast<double>(n);
          const double s = 1.0 / std::sqrt(var + eps);
          (*inv_std)[i] = s;
          for (std::size_t j = 0; j < n; ++j) row[j] = (xi[j] - mean) * s;
        }
      },
      [a, m, n, inv_std](Tape& t, std::size_t self) {
        const Tensor& g = t.grad(self);
        const Tensor& y = t.value(self);
        Tensor* ga = t.grad_buffer(a.id);
        if (!ga) return;
        const double inv_n = 1.0 / static_cast<double>(n);
        for (std::size_t i = 0; i < m; ++i) {
          const double* gi = g.data.data() + i * n;
          const double* yi = y.data.data() + i * n;
          double mean_g = 0.0, mean_gy = 0.0;
          for (std::size_t j = 0; j < n; ++j) {
            mean_g += gi[j];
            mean_gy += gi[j] * yi[j];
          }
          mean_g *= inv_n;
          mean_gy *= inv_n;
          for (std::size_t j = 0; j < n; ++j) {
            ga->data[i * n + j] += (*inv_std)[i] * (gi[j] - mean_g - yi[j] * mean_gy);
          }
        }
      });
}

Var softmax(Var a) {
  const std::size_t m = a.value().rows(), n = a.value().cols();
  return a.tape->record(
      "softmax", {a},
      [a, m, n](Tape& t, std::size_t self) {
        const Tensor& x = t.value(a.id);
        Tensor& o = t.output(self, x.shape);
        std::copy(x.data.begin(), x.data.end(), o.data.begin());
        softmax_rows(o.data.data(), m, n, n);
      },
      [a, m, n](Tape& t, std::size_t self) {
        Tensor* ga = t.grad_buffer(a.id);
        if (!ga) return;
        softmax_rows_backward(t.grad(self).data.data(), t.value(self).data.data(), ga->data.data(), m, n, n);
      });
}

Var multi_head_attention(Var q, Var k, Var v, std::size_t heads) {
  const Tensor& qv = q.value();
  require_same("multi_head_attention", qv, k.value());
  require_same("multi_head_attention", qv, v.value());
  const std::size_t L = qv.rows(), d = qv.cols();
  if (heads == 0 || d % heads != 0) {
    throw Error("multi_head_attention: width " + std::to_string(d) + " not divisible into " +
                std::to_string(heads) + " heads");
  }
  const std::size_t dh = d / heads;
  const double scale = 1.0 / std::sqrt(static_cast<double>(dh));
  // Attention weights per head, heads x L x L, refreshed by every evaluation.
  auto probs = std::make_shared<std::vector<double>>(heads * L * L);
  return q.tape->record(
      "multi_head_attention", {q, k, v},
      [q, k, v, L, d, dh, heads, scale, probs](Tape& t, std::size_t self) {
        const double* Q = t.value(q.id).data.data();
        const double* K = t.value(k.id).data.data();
        const double* V = t.value(v.id).data.data();
        Tensor& o = t.output(self, {L, d});
        for (std::size_t h = 0; h < heads; ++h) {
          double* P = probs->data() + h * L * L;
          Map S(P, L, L);
          S.noalias() = scale * (MapCS(Q + h * dh, L, dh, Stride(d)) * MapCS(K + h * dh, L, dh, Stride(d)).transpose());
          softmax_rows(P, L, L, L);
          MapS(o.data.data() + h * dh, L, dh, Stride(d)).noalias() =
              MapC(P, L, L) * MapCS(V + h * dh, L, dh, Stride(d));
        }
      },
      [q, k, v, L, d, dh, heads, scale, probs](Tape& t, std::size_t self) {
        const double* G = t.grad(self).data.data();
        const double* Q = t.value(q.id).data.data();
        const double* K = t.value(k.id).data.data();
        const double* V = t.value(v.id).data.data();
        Tensor* gq = t.grad_buffer(q.id);
        Tensor* gk = t.grad_buffer(k.id);
        Tensor* gv = t.grad_buffer(v.id);
        RowMajor dP(L, L), dS(L, L);
        for (std::size_t h = 0; h < heads; ++h) {
          const MapC P(probs->data() + h * L * L, L, L);
          const MapCS Gh(G + h * dh, L, dh, Stride(d));
          if (gv) MapS(gv->data.data() + h * dh, L, dh, Stride(d)).noalias() += P.transpose() * Gh;
          if (!gq && !gk) continue;
          dP.noalias() = Gh * MapCS(V + h * dh, L, dh, Stride(d)).transpose();
          dS.setZero();
          softmax_rows_backward(dP.data(), P.data(), dS.data(), L, L, L);
          dS *= scale;
          if (gq) MapS(gq->data.data() + h * dh, L, dh, Stride(d)).noalias() += dS * MapCS(K + h * dh, L, dh, Stride(d));
          if (gk) {
            MapS(gk->data.data() + h * dh, L, dh, Stride(d)).noalias() +=
                dS.transpose() * MapCS(Q + h * dh, L, dh, Stride(d));
          }
        }
      });
}

Var slice_cols(Var a, std::size_t begin, std::size_t end) {
  const Tensor& x = a.value();
  const std::size_t m = x.rows(), n = x.cols();
  if (begin >= end || end > n) {
    throw Error("slice_cols: range [" + std::to_string(begin) + ", " + std::to_string(end) +
                ") invalid for " + x.shape_str());
  }
  const std::size_t w = end - begin;
  return a.tape->record(
      "slice_cols", {a},
      [a, m, n, begin, w](Tape& t, std::size_t self) {
        const Tensor& x = t.value(a.id);
        Tensor& o = t.output(self, {m, w});
        for (std::size_t i = 0; i < m; ++i) {
          std::copy_n(x.data.data() + i * n + begin, w, o.data.data() + i * w);
        }
      },
      [a, m, n, begin, w](Tape& t, std::size_t self) {
        const Tensor& g = t.grad(self);
        if (Tensor* ga = t.grad_buffer(a.id)) {
          for (std::size_t i = 0; i < m; ++i) {
            for (std::size_t j = 0; j < w; ++j) ga->data[i * n + begin + j] += g.data[i * w + j];
          }
        }
      });
}

Var concat_cols(const std::vector<Var>& parts) {
  if (parts.empty()) throw Error("concat_cols: no operands");
  const std::size_t m = parts.front().value().rows();
  std::vector<std::size_t> widths;
  std::size_t total = 0;
  for (const Var& p : parts) {
    if (p.value().rows() != m) throw Error("concat_cols: row count mismatch " + p.value().shape_str());
    widths.push_back(p.value().cols());
    total += widths.back();
  }
  return parts.front().tape->record(
      "concat_cols", parts,
      [parts, widths, m, total](Tape& t, std::size_t self) {
        Tensor& o = t.output(self, {m, total});
        std::size_t off = 0;
        for (std::size_t k = 0; k < parts.size(); ++k) {
          const Tensor& x = t.value(parts[k].id);
          for (std::size_t i = 0; i < m; ++i) {
            std::copy_n(x.data.data() + i * widths[k], widths[k], o.data.data() + i * total + off);
          }
          off += widths[k];
        }
      },
      [parts, widths, m, total](Tape& t, std::size_t self) {
        const Tensor& g = t.grad(self);
        std::size_t off = 0;
        for (std::size_t k = 0; k < parts.size(); ++k) {
          if (Tensor* gp = t.grad_buffer(parts[k].id)) {
            for (std::size_t i = 0; i < m; ++i) {
              for (std::size_t j = 0; j < widths[k]; ++j) {
                gp->data[i * widths[k] + j] += g.data[i * total + off + j];
              }
            }
          }
          off += widths[k];
        }
      });
}

Var sum(Var a) {
  return a.tape->record(
      "sum", {a},
      [a](Tape& t, std::size_t self) {
        double s = 0.0;
        for (double v : t.value(a.id).data) s += v;
        t.output(self, {})[0] = s;
      },
      [a](Tape& t, std::size_t self) {
        const double g = t.grad(self).item();
        if (Tensor* ga = t.grad_buffer(a.id)) {
          for (double& v : ga->data) v += g;
        }
      });
}

Var sum_squares(Var a) {
  return a.tape->record(
      "sum_squares", {a},
      [a](Tape& t, std::size_t self) {
        double s = 0.0;
        for (double v : t.value(a.id).data) s += v * v;
        t.output(self, {})[0] = s;
      },
      [a](Tape& t, std::size_t self) {
        const double g = t.grad(self).item();
        const Tensor& x = t.value(a.id);
        if (Tensor* ga = t.grad_buffer(a.id)) {
          for (std::size_t i = 0; i < x.size(); ++i) (*ga)[i] += 2.0 * g * x[i];
        }
      });
}

Var mse(Var pred, Var target) {
  return masked_mse(pred, target, std::vector<double>(pred.value().rows(), 1.0));
}

Var masked_mse(Var pred, Var target, const std::vector<double>& row_weight) {
  const Tensor& p = pred.value();
  require_same("masked_mse", p, target.value());
  const std::size_t m = p.rows(), n = p.cols();
  if (row_weight.size() != m) throw Error("masked_mse: mask length does not match row count");
  std::size_t active = 0;
  for (double w : row_weight) active += (w != 0.0);
  if (active == 0) throw Error("masked_mse: no masked positions");
  const double denom = static_cast<double>(active * n);
  return pred.tape->record(
      "masked_mse", {pred, target},
      [pred, target, row_weight, m, n, denom](Tape& t, std::size_t self) {
        const Tensor& p = t.value(pred.id);
        const Tensor& y = t.value(target.id);
        double s = 0.0;
        for (std::size_t i = 0; i < m; ++i) {
          if (row_weight[i] == 0.0) continue;
          for (std::size_t j = 0; j < n; ++j) {
            const double d = p.data[i * n + j] - y.data[i * n + j];
            s += d * d;
          }
        }
        t.output(self, {})[0] = s / denom;
      },
      [pred, target, row_weight, m, n, denom](Tape& t, std::size_t self) {
        const double g = t.grad(self).item();
        const Tensor& p = t.value(pred.id);
        const Tensor& y = t.value(target.id);
        Tensor* gp = t.grad_buffer(pred.id);
        Tensor* gy = t.grad_buffer(target.id);
        for (std::size_t i = 0; i < m; ++i) {
          if (row_weight[i] == 0.0) continue;
          for (std::size_t j = 0; j < n; ++j) {
            const std::size_t k = i * n + j;
            const double d = 2.0 * g * (p.data[k] - y.data[k]) / denom;
            if (gp) gp->data[k] += d;
            if (gy) gy->data[k] -= d;
          }
        }
      });
}

Var project_l2(Var a, double max_norm) {
  if (!(max_norm > 0.0)) throw Error("project_l2: radius must be positive");
  return a.tape->record(
      "project_l2", {a},
      [a, max_norm](Tape& t, std::size_t self) {
        const Tensor& x = t.value(a.id);
        const double norm = l2_norm(x);
        Tensor& o = t.output(self, x.shape);
        const double s = norm > max_norm ? max_norm / norm : 1.0;
        for (std::size_t i = 0; i < o.size(); ++i) o[i] = s * x[i];
      },
      [a, max_norm](Tape& t, std::size_t self) {
        const Tensor& g = t.grad(self);
        Tensor* ga = t.grad_buffer(a.id);
        if (!ga) return;
        const Tensor& x = t.value(a.id);
        const double norm = l2_norm(x);
        if (norm <= max_norm) {
          for (std::size_t i = 0; i < g.size(); ++i) (*ga)[i] += g[i];
          return;
        }
        const double s = max_norm / norm;
        const double xg = dot(x, g) / (norm * norm);
        for (std::size_t i = 0; i < g.size(); ++i) (*ga)[i] += s * (g[i] - x[i] * xg);
      });
}

}  // namespace dpadaln::ad
