#include "icar/numcore/ops.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numbers>

#include <Eigen/Core>
#include <fmt/format.h>

#include "icar/error.hpp"

namespace icar::nc {
namespace {

template <typename T>
using RowMat = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
template <typename T>
using MapC = Eigen::Map<const RowMat<T>>;
template <typename T>
using MapM = Eigen::Map<RowMat<T>>;

template <typename T>
MapC<T> view(const Tensor<T>& t) {
  return MapC<T>(t.data().data(), static_cast<Eigen::Index>(t.rows()),
                 static_cast<Eigen::Index>(t.cols()));
}
template <typename T>
MapM<T> view(Tensor<T>& t) {
  return MapM<T>(t.data().data(), static_cast<Eigen::Index>(t.rows()),
                 static_cast<Eigen::Index>(t.cols()));
}

// Gradient buffer of a parent, or nullptr when it does not need one.
template <typename T>
Tensor<T>* grad_of(Node<T>* n) {
  return n->requires_grad ? &n->ensure_grad() : nullptr;
}

template <typename T>
bool same_matrix(const Tensor<T>& a, const Tensor<T>& b) {
  return a.rows() == b.rows() && a.cols() == b.cols();
}

[[noreturn]] void shape_fail(const char* op, const Shape& a, const Shape& b) {
  throw ShapeError(fmt::format("{}: incompatible shapes {} and {}", op, shape_str(a), shape_str(b)));
}

template <typename T, typename F, typename D>
Var<T> unary(const Var<T>& x, F f, D df) {
  const Tensor<T>& xv = x.value();
  Tensor<T> out(xv.shape());
  for (std::size_t i = 0; i < xv.numel(); ++i) out[i] = f(xv[i]);
  Node<T>* px = x.node();
  return make_result<T>(std::move(out), {x.shared()}, [px, df](Node<T>& self) {
    Tensor<T>& gx = px->ensure_grad();
    const Tensor<T>& xv = px->value;
    for (std::size_t i = 0; i < xv.numel(); ++i) gx[i] += self.grad[i] * df(xv[i], self.value[i]);
  });
}

}  // namespace

std::vector<std::string> forward_backward_ops() {
  return {"matmul",      "matmul_nt",    "add",         "sub",        "mul",        "scale",
          "sum",         "mean",         "group_mean_rows", "concat_cols", "concat_rows",
          "assemble_rows", "gather_rows", "reshape",    "layer_norm", "softmax_rows",
          "cross_entropy", "attention",  "gelu",        "relu",       "softplus",   "log",
          "pow",         "clamp_min",    "l2_normalize_rows", "row_distance", "nn_distance"};
}

template <typename T>
Var<T> matmul(const Var<T>& a, const Var<T>& b) {
  if (a.cols() != b.rows()) shape_fail("matmul", a.shape(), b.shape());
  Tensor<T> out = Tensor<T>::matrix(a.rows(), b.cols());
  view(out).noalias() = view(a.value()) * view(b.value());
  Node<T>* pa = a.node();
  Node<T>* pb = b.node();
  return make_result<T>(std::move(out), {a.shared(), b.shared()}, [pa, pb](Node<T>& self) {
    if (auto* ga = grad_of(pa)) view(*ga).noalias() += view(self.grad) * view(pb->value).transpose();
    if (auto* gb = grad_of(pb)) view(*gb).noalias() += view(pa->value).transpose() * view(self.grad);
  });
}

template <typename T>
Var<T> matmul_nt(const Var<T>& a, const Var<T>& b) {
  if (a.cols() != b.cols()) shape_fail("matmul_nt", a.shape(), b.shape());
  Tensor<T> out = Tensor<T>::matrix(a.rows(), b.rows());
  view(out).noalias() = view(a.value()) * view(b.value()).transpose();
  Node<T>* pa = a.node();
  Node<T>* pb = b.node();
  return make_result<T>(std::move(out), {a.shared(), b.shared()}, [pa, pb](Node<T>& self) {
    if (auto* ga = grad_of(pa)) view(*ga).noalias() += view(self.grad) * view(pb->value);
    if (auto* gb = grad_of(pb)) view(*gb).noalias() += view(self.grad).transpose() * view(pa->value);
  });
}

template <typename T>
Var<T> add(const Var<T>& a, const Var<T>& b) {
  const Tensor<T>& av = a.value();
  const Tensor<T>& bv = b.value();
  const bool broadcast = !same_matrix(av, bv);
  if (broadcast && !(bv.rows() == 1 && bv.cols() == av.cols())) shape_fail("add", a.shape(), b.shape());
  Tensor<T> out = av;
  const std::size_t cols = av.cols();
  for (std::size_t i = 0; i < out.numel(); ++i) out[i] += broadcast ? bv[i % cols] : bv[i];
  Node<T>* pa = a.node();
  Node<T>* pb = b.node();
  return make_result<T>(std::move(out), {a.shared(), b.shared()}, [pa, pb, broadcast](Node<T>& self) {
    if (auto* ga = grad_of(pa)) {
      for (std::size_t i = 0; i < self.grad.numel(); ++i) (*ga)[i] += self.grad[i];
    }
    if (auto* gb = grad_of(pb)) {
      const std::size_t cols = self.value.cols();
      for (std::size_t i = 0; i < self.grad.numel(); ++i) (*gb)[broadcast ? i % cols : i] += self.grad[i];
    }
  });
}

template <typename T>
Var<T> sub(const Var<T>& a, const Var<T>& b) {
  if (!same_matrix(a.value(), b.value())) shape_fail("sub", a.shape(), b.shape());
  Tensor<T> out = a.value();
  for (std::size_t i = 0; i < out.numel(); ++i) out[i] -= b.value()[i];
  Node<T>* pa = a.node();
  Node<T>* pb = b.node();
  return make_result<T>(std::move(out), {a.shared(), b.shared()}, [pa, pb](Node<T>& self) {
    if (auto* ga = grad_of(pa)) for (std::size_t i = 0; i < self.grad.numel(); ++i) (*ga)[i] += self.grad[i];
    if (auto* gb = grad_of(pb)) for (std::size_t i = 0; i < self.grad.numel(); ++i) (*gb)[i] -= self.grad[i];
  });
}

template <typename T>
Var<T> mul(const Var<T>& a, const Var<T>& b) {
  if (!same_matrix(a.value(), b.value())) shape_fail("mul", a.shape(), b.shape());
  Tensor<T> out = a.value();
  for (std::size_t i = 0; i < out.numel(); ++i) out[i] *= b.value()[i];
  Node<T>* pa = a.node();
  Node<T>* pb = b.node();
  return make_result<T>(std::move(out), {a.shared(), b.shared()}, [pa, pb](Node<T>& self) {
    if (auto* ga = grad_of(pa))
      for (std::size_t i = 0; i < self.grad.numel(); ++i) (*ga)[i] += self.grad[i] * pb->value[i];
    if (auto* gb = grad_of(pb))
      for (std::size_t i = 0; i < self.grad.numel(); ++i) (*gb)[i] += self.grad[i] * pa->value[i];
  });
}

template <typename T>
Var<T> scale(const Var<T>& a, T factor) {
  return unary<T>(a, [factor](T x) { return x * factor; }, [factor](T, T) { return factor; });
}

template <typename T>
Var<T> sum(const Var<T>& a) {
  T total{0};
  for (T x : a.value().data()) total += x;
  Node<T>* pa = a.node();
  return make_result<T>(Tensor<T>::scalar(total), {a.shared()}, [pa](Node<T>& self) {
    Tensor<T>& ga = pa->ensure_grad();
    for (std::size_t i = 0; i < ga.numel(); ++i) ga[i] += self.grad[0];
  });
}

template <typename T>
Var<T> mean(const Var<T>& a) {
  if (a.value().numel() == 0) throw ShapeError("mean: empty tensor");
  return scale(sum(a), T{1} / static_cast<T>(a.value().numel()));
}

template <typename T>
Var<T> group_mean_rows(const Var<T>& a, std::size_t group) {
  const Tensor<T>& av = a.value();
  if (group == 0 || av.rows() % group != 0) {
    throw ShapeError(fmt::format("group_mean_rows: {} rows not divisible into groups of {}", av.rows(), group));
  }
  const std::size_t n = av.rows() / group;
  const std::size_t c = av.cols();
  Tensor<T> out = Tensor<T>::matrix(n, c);
  const T inv = T{1} / static_cast<T>(group);
  for (std::size_t r = 0; r < av.rows(); ++r)
    for (std::size_t j = 0; j < c; ++j) out(r / group, j) += av(r, j) * inv;
  Node<T>* pa = a.node();
  return make_result<T>(std::move(out), {a.shared()}, [pa, group, inv](Node<T>& self) {
    Tensor<T>& ga = pa->ensure_grad();
    const std::size_t c = ga.cols();
    for (std::size_t r = 0; r < ga.rows(); ++r)
      for (std::size_t j = 0; j < c; ++j) ga(r, j) += self.grad(r / group, j) * inv;
  });
}

template <typename T>
Var<T> concat_cols(const std::vector<Var<T>>& parts) {
  if (parts.empty()) throw ShapeError("concat_cols: no inputs");
  const std::size_t rows = parts[0].rows();
  std::size_t cols = 0;
  for (const auto& p : parts) {
    if (p.rows() != rows) shape_fail("concat_cols", parts[0].shape(), p.shape());
    cols += p.cols();
  }
  Tensor<T> out = Tensor<T>::matrix(rows, cols);
  std::vector<std::shared_ptr<Node<T>>> parents;
  std::vector<Node<T>*> raw;
  std::size_t off = 0;
  for (const auto& p : parts) {
    const Tensor<T>& pv = p.value();
    for (std::size_t r = 0; r < rows; ++r)
      std::copy_n(pv.row_span(r).begin(), pv.cols(), out.row_span(r).begin() + static_cast<std::ptrdiff_t>(off));
    off += pv.cols();
    parents.push_back(p.shared());
    raw.push_back(p.node());
  }
  return make_result<T>(std::move(out), std::move(parents), [raw](Node<T>& self) {
    std::size_t off = 0;
    for (Node<T>* p : raw) {
      const std::size_t pc = p->value.cols();
      if (auto* g = grad_of(p)) {
        for (std::size_t r = 0; r < g->rows(); ++r)
          for (std::size_t j = 0; j < pc; ++j) (*g)(r, j) += self.grad(r, off + j);
      }
      off += pc;
    }
  });
}

template <typename T>
Var<T> assemble_rows(const std::vector<Var<T>>& sources, const std::vector<RowPick>& picks) {
  if (sources.empty()) throw ShapeError("assemble_rows: no sources");
  const std::size_t cols = sources[0].cols();
  for (const auto& s : sources)
    if (s.cols() != cols) shape_fail("assemble_rows", sources[0].shape(), s.shape());
  for (const auto& pick : picks) {
    if (pick.source >= sources.size() || pick.row >= sources[pick.source].rows()) {
      throw ShapeError(fmt::format("assemble_rows: pick (source {}, row {}) out of range", pick.source, pick.row));
    }
  }
  Tensor<T> out = Tensor<T>::matrix(picks.size(), cols);
  for (std::size_t i = 0; i < picks.size(); ++i) {
    const auto src = sources[picks[i].source].value().row_span(picks[i].row);
    std::copy(src.begin(), src.end(), out.row_span(i).begin());
  }
  std::vector<std::shared_ptr<Node<T>>> parents;
  std::vector<Node<T>*> raw;
  for (const auto& s : sources) {
    parents.push_back(s.shared());
    raw.push_back(s.node());
  }
  return make_result<T>(std::move(out), std::move(parents), [raw, picks](Node<T>& self) {
    for (std::size_t i = 0; i < picks.size(); ++i) {
      if (auto* g = grad_of(raw[picks[i].source])) {
        auto dst = g->row_span(picks[i].row);
        auto src = self.grad.row_span(i);
        for (std::size_t j = 0; j < dst.size(); ++j) dst[j] += src[j];
      }
    }
  });
}

template <typename T>
Var<T> concat_rows(const std::vector<Var<T>>& parts) {
  std::vector<RowPick> picks;
  for (std::size_t s = 0; s < parts.size(); ++s)
    for (std::size_t r = 0; r < parts[s].rows(); ++r) picks.push_back({s, r});
  return assemble_rows(parts, picks);
}

template <typename T>
Var<T> gather_rows(const Var<T>& a, std::span<const std::size_t> rows) {
  std::vector<RowPick> picks;
  picks.reserve(rows.size());
  for (std::size_t r : rows) picks.push_back({0, r});
  return assemble_rows(std::vector<Var<T>>{a}, picks);
}

template <typename T>
Var<T> reshape(const Var<T>& a, Shape shape) {
  Tensor<T> out = a.value();
  out.reshape(std::move(shape));
  Node<T>* pa = a.node();
  return make_result<T>(std::move(out), {a.shared()}, [pa](Node<T>& self) {
    Tensor<T>& ga = pa->ensure_grad();
    for (std::size_t i = 0; i < ga.numel(); ++i) ga[i] += self.grad[i];
  });
}

template <typename T>
Var<T> layer_norm(const Var<T>& x, const Var<T>& gain, const Var<T>& bias, T eps) {
  const Tensor<T>& xv = x.value();
  const std::size_t n = xv.cols();
  if (gain.value().numel() != n || bias.value().numel() != n) shape_fail("layer_norm", x.shape(), gain.shape());
  Tensor<T> out(xv.shape());
  Tensor<T> xhat(xv.shape());
  std::vector<T> rstd(xv.rows());
  for (std::size_t r = 0; r < xv.rows(); ++r) {
    auto row = xv.row_span(r);
    T mu{0};
    for (T v : row) mu += v;
    mu /= static_cast<T>(n);
    T var{0};
    for (T v : row) var += (v - mu) * (v - mu);
    var /= static_cast<T>(n);
    rstd[r] = T{1} / std::sqrt(var + eps);
    for (std::size_t j = 0; j < n; ++j) {
      xhat(r, j) = (row[j] - mu) * rstd[r];
      out(r, j) = gain.value()[j] * xhat(r, j) + bias.value()[j];
    }
  }
  Node<T>* px = x.node();
  Node<T>* pg = gain.node();
  Node<T>* pb = bias.node();
  return make_result<T>(
      std::move(out), {x.shared(), gain.shared(), bias.shared()},
      [px, pg, pb, xhat = std::move(xhat), rstd = std::move(rstd)](Node<T>& self) {
        const std::size_t n = xhat.cols();
        auto* gx = grad_of(px);
        auto* gg = grad_of(pg);
        auto* gb = grad_of(pb);
        std::vector<T> dxhat(n);
        for (std::size_t r = 0; r < xhat.rows(); ++r) {
          T mean_d{0};
          T mean_dx{0};
          for (std::size_t j = 0; j < n; ++j) {
            const T dy = self.grad(r, j);
            if (gg) (*gg)[j] += dy * xhat(r, j);
            if (gb) (*gb)[j] += dy;
            dxhat[j] = dy * pg->value[j];
            mean_d += dxhat[j];
            mean_dx += dxhat[j] * xhat(r, j);
          }
          if (!gx) continue;
          mean_d /= static_cast<T>(n);
          mean_dx /= static_cast<T>(n);
          for (std::size_t j = 0; j < n; ++j)
            (*gx)(r, j) += rstd[r] * (dxhat[j] - mean_d - xhat(r, j) * mean_dx);
        }
      });
}

template <typename T>
Tensor<T> softmax_values(std::span<const T> logits) {
  Tensor<T> out(Shape{1, logits.size()});
  if (logits.empty()) return out;
  const T mx = *std::max_element(logits.begin(), logits.end());
  T z{0};
  for (std::size_t i = 0; i < logits.size(); ++i) {
    out[i] = std::exp(logits[i] - mx);
    z += out[i];
  }
  for (std::size_t i = 0; i < logits.size(); ++i) out[i] /= z;
  return out;
}

template <typename T>
Var<T> softmax_rows(const Var<T>& x) {
  const Tensor<T>& xv = x.value();
  Tensor<T> out(xv.shape());
  for (std::size_t r = 0; r < xv.rows(); ++r) {
    Tensor<T> s = softmax_values<T>(xv.row_span(r));
    std::copy(s.data().begin(), s.data().end(), out.row_span(r).begin());
  }
  Node<T>* px = x.node();
  return make_result<T>(std::move(out), {x.shared()}, [px](Node<T>& self) {
    Tensor<T>& gx = px->ensure_grad();
    for (std::size_t r = 0; r < self.value.rows(); ++r) {
      auto y = self.value.row_span(r);
      auto dy = self.grad.row_span(r);
      T dot{0};
      for (std::size_t j = 0; j < y.size(); ++j) dot += dy[j] * y[j];
      for (std::size_t j = 0; j < y.size(); ++j) gx(r, j) += y[j] * (dy[j] - dot);
    }
  });
}

template <typename T>
Var<T> cross_entropy(const Var<T>& logits, std::span<const std::size_t> labels) {
  const Tensor<T>& lv = logits.value();
  if (labels.size() != lv.rows() || lv.rows() == 0) {
    throw ShapeError(fmt::format("cross_entropy: {} labels for logits {}", labels.size(), shape_str(lv.shape())));
  }
  Tensor<T> probs(lv.shape());
  T loss{0};
  for (std::size_t r = 0; r < lv.rows(); ++r) {
    if (labels[r] >= lv.cols()) {
      throw ContractError(fmt::format("cross_entropy: label {} out of range for {} classes", labels[r], lv.cols()));
    }
    auto row = lv.row_span(r);
    const T mx = *std::max_element(row.begin(), row.end());
    T z{0};
    for (T v : row) z += std::exp(v - mx);
    loss += mx + std::log(z) - row[labels[r]];
    for (std::size_t j = 0; j < row.size(); ++j) probs(r, j) = std::exp(row[j] - mx) / z;
  }
  const T inv = T{1} / static_cast<T>(lv.rows());
  std::vector<std::size_t> lab(labels.begin(), labels.end());
  Node<T>* pl = logits.node();
  return make_result<T>(Tensor<T>::scalar(loss * inv), {logits.shared()},
                        [pl, probs = std::move(probs), lab = std::move(lab), inv](Node<T>& self) {
                          Tensor<T>& g = pl->ensure_grad();
                          const T up = self.grad[0] * inv;
                          for (std::size_t r = 0; r < probs.rows(); ++r)
                            for (std::size_t j = 0; j < probs.cols(); ++j)
                              g(r, j) += up * (probs(r, j) - (j == lab[r] ? T{1} : T{0}));
                        });
}

template <typename T>
Var<T> attention(const Var<T>& q, const Var<T>& k, const Var<T>& v, const std::vector<Segment>& segments,
                 std::size_t heads) {
  const Tensor<T>& qv = q.value();
  if (!same_matrix(qv, k.value())) shape_fail("attention", q.shape(), k.shape());
  if (!same_matrix(qv, v.value())) shape_fail("attention", q.shape(), v.shape());
  const std::size_t d = qv.cols();
  if (heads == 0 || d % heads != 0) {
    throw ShapeError(fmt::format("attention: width {} not divisible by {} heads", d, heads));
  }
  std::size_t covered = 0;
  for (const auto& s : segments) {
    if (s.offset != covered || s.length == 0) throw ShapeError("attention: segments must tile the rows contiguously");
    covered += s.length;
  }
  if (covered != qv.rows()) {
    throw ShapeError(fmt::format("attention: segments cover {} rows of {}", covered, qv.rows()));
  }
  const std::size_t dh = d / heads;
  const T inv_sqrt = T{1} / std::sqrt(static_cast<T>(dh));

  // probs[s*heads + h] is the [len, len] attention matrix of segment s, head h.
  std::vector<RowMat<T>> probs(segments.size() * heads);
  Tensor<T> out(qv.shape());
  const auto Q = view(qv);
  const auto K = view(k.value());
  const auto V = view(v.value());
  auto O = view(out);
  for (std::size_t s = 0; s < segments.size(); ++s) {
    const auto off = static_cast<Eigen::Index>(segments[s].offset);
    const auto len = static_cast<Eigen::Index>(segments[s].length);
    for (std::size_t h = 0; h < heads; ++h) {
      const auto c0 = static_cast<Eigen::Index>(h * dh);
      const auto w = static_cast<Eigen::Index>(dh);
      RowMat<T> S = (Q.block(off, c0, len, w) * K.block(off, c0, len, w).transpose()) * inv_sqrt;
      for (Eigen::Index r = 0; r < len; ++r) {
        const T mx = S.row(r).maxCoeff();
        S.row(r) = (S.row(r).array() - mx).exp();
        S.row(r) /= S.row(r).sum();
      }
      O.block(off, c0, len, w).noalias() = S * V.block(off, c0, len, w);
      probs[s * heads + h] = std::move(S);
    }
  }
  Node<T>* pq = q.node();
  Node<T>* pk = k.node();
  Node<T>* pv = v.node();
  return make_result<T>(
      std::move(out), {q.shared(), k.shared(), v.shared()},
      [pq, pk, pv, segments, heads, dh, inv_sqrt, probs = std::move(probs)](Node<T>& self) {
        auto* gq = grad_of(pq);
        auto* gk = grad_of(pk);
        auto* gv = grad_of(pv);
        const auto Q = view(pq->value);
        const auto K = view(pk->value);
        const auto V = view(pv->value);
        const auto dO = view(self.grad);
        for (std::size_t s = 0; s < segments.size(); ++s) {
          const auto off = static_cast<Eigen::Index>(segments[s].offset);
          const auto len = static_cast<Eigen::Index>(segments[s].length);
          for (std::size_t h = 0; h < heads; ++h) {
            const auto c0 = static_cast<Eigen::Index>(h * dh);
            const auto w = static_cast<Eigen::Index>(dh);
            const RowMat<T>& P = probs[s * heads + h];
            const RowMat<T> dOb = dO.block(off, c0, len, w);
            if (gv) view(*gv).block(off, c0, len, w).noalias() += P.transpose() * dOb;
            if (!gq && !gk) continue;
            RowMat<T> dP = dOb * V.block(off, c0, len, w).transpose();
            RowMat<T> dS(len, len);
            for (Eigen::Index r = 0; r < len; ++r) {
              const T dot = (dP.row(r).array() * P.row(r).array()).sum();
              dS.row(r) = P.row(r).array() * (dP.row(r).array() - dot);
            }
            dS *= inv_sqrt;
            if (gq) view(*gq).block(off, c0, len, w).noalias() += dS * K.block(off, c0, len, w);
            if (gk) view(*gk).block(off, c0, len, w).noalias() += dS.transpose() * Q.block(off, c0, len, w);
          }
        }
      });
}

template <typename T>
Var<T> gelu(const Var<T>& x) {
  constexpr T inv_sqrt2 = T(1) / std::numbers::sqrt2_v<T>;
  constexpr T inv_sqrt_2pi = std::numbers::inv_sqrtpi_v<T> * inv_sqrt2;
  return unary<T>(
      x, [](T v) { return T(0.5) * v * (T(1) + std::erf(v * inv_sqrt2)); },
      [](T v, T) {
        const T cdf = T(0.5) * (T(1) + std::erf(v * inv_sqrt2));
        return cdf + v * inv_sqrt_2pi * std::exp(T(-0.5) * v * v);
      });
}

template <typename T>
Var<T> relu(const Var<T>& x) {
  return unary<T>(x, [](T v) { return v > T(0) ? v : T(0); }, [](T v, T) { return v > T(0) ? T(1) : T(0); });
}

template <typename T>
Var<T> softplus(const Var<T>& x) {
  return unary<T>(
      x, [](T v) { return v > T(0) ? v + std::log1p(std::exp(-v)) : std::log1p(std::exp(v)); },
      [](T v, T) { return v >= T(0) ? T(1) / (T(1) + std::exp(-v)) : std::exp(v) / (T(1) + std::exp(v)); });
}

template <typename T>
Var<T> log(const Var<T>& x) {
  return unary<T>(x, [](T v) { return std::log(v); }, [](T v, T) { return T(1) / v; });
}

template <typename T>
Var<T> pow(const Var<T>& x, T exponent) {
  return unary<T>(
      x, [exponent](T v) { return std::pow(v, exponent); },
      [exponent](T v, T) { return exponent * std::pow(v, exponent - T(1)); });
}

template <typename T>
Var<T> clamp_min(const Var<T>& x, T lo) {
  return unary<T>(x, [lo](T v) { return v > lo ? v : lo; }, [lo](T v, T) { return v > lo ? T(1) : T(0); });
}

template <typename T>
Var<T> l2_normalize_rows(const Var<T>& x) {
  const Tensor<T>& xv = x.value();
  Tensor<T> out(xv.shape());
  std::vector<T> norms(xv.rows());
  for (std::size_t r = 0; r < xv.rows(); ++r) {
    T ss{0};
    for (T v : xv.row_span(r)) ss += v * v;
    norms[r] = std::max(std::sqrt(ss), std::numeric_limits<T>::min());
    for (std::size_t j = 0; j < xv.cols(); ++j) out(r, j) = xv(r, j) / norms[r];
  }
  Node<T>* px = x.node();
  return make_result<T>(std::move(out), {x.shared()}, [px, norms = std::move(norms)](Node<T>& self) {
    Tensor<T>& gx = px->ensure_grad();
    for (std::size_t r = 0; r < self.value.rows(); ++r) {
      auto y = self.value.row_span(r);
      auto dy = self.grad.row_span(r);
      T dot{0};
      for (std::size_t j = 0; j < y.size(); ++j) dot += y[j] * dy[j];
      for (std::size_t j = 0; j < y.size(); ++j) gx(r, j) += (dy[j] - y[j] * dot) / norms[r];
    }
  });
}

template <typename T>
Var<T> row_distance(const Var<T>& a, const Var<T>& b) {
  if (!same_matrix(a.value(), b.value())) shape_fail("row_distance", a.shape(), b.shape());
  const Tensor<T>& av = a.value();
  const Tensor<T>& bv = b.value();
  Tensor<T> out = Tensor<T>::matrix(av.rows(), 1);
  for (std::size_t r = 0; r < av.rows(); ++r) {
    T ss{0};
    for (std::size_t j = 0; j < av.cols(); ++j) ss += (av(r, j) - bv(r, j)) * (av(r, j) - bv(r, j));
    out[r] = std::sqrt(ss);
  }
  Node<T>* pa = a.node();
  Node<T>* pb = b.node();
  return make_result<T>(std::move(out), {a.shared(), b.shared()}, [pa, pb](Node<T>& self) {
    auto* ga = grad_of(pa);
    auto* gb = grad_of(pb);
    for (std::size_t r = 0; r < self.value.rows(); ++r) {
      const T dist = self.value[r];
      if (dist == T(0)) continue;
      const T up = self.grad[r] / dist;
      for (std::size_t j = 0; j < pa->value.cols(); ++j) {
        const T diff = (pa->value(r, j) - pb->value(r, j)) * up;
        if (ga) (*ga)(r, j) += diff;
        if (gb) (*gb)(r, j) -= diff;
      }
    }
  });
}

template <typename T>
Var<T> nn_distance(const Var<T>& x) {
  const Tensor<T>& xv = x.value();
  const std::size_t m = xv.rows();
  if (m < 2) throw ShapeError(fmt::format("nn_distance: needs >= 2 rows, got {}", shape_str(x.shape())));
  Tensor<T> out = Tensor<T>::matrix(m, 1);
  std::vector<std::size_t> nearest(m);
  for (std::size_t i = 0; i < m; ++i) {
    T best = std::numeric_limits<T>::infinity();
    for (std::size_t j = 0; j < m; ++j) {
      if (j == i) continue;
      T ss{0};
      for (std::size_t c = 0; c < xv.cols(); ++c) ss += (xv(i, c) - xv(j, c)) * (xv(i, c) - xv(j, c));
      if (ss < best) {
        best = ss;
        nearest[i] = j;
      }
    }
    out[i] = std::sqrt(best);
  }
  Node<T>* px = x.node();
  return make_result<T>(std::move(out), {x.shared()}, [px, nearest = std::move(nearest)](Node<T>& self) {
    Tensor<T>& gx = px->ensure_grad();
    const Tensor<T>& xv = px->value;
    for (std::size_t i = 0; i < nearest.size(); ++i) {
      const T dist = self.value[i];
      if (dist == T(0)) continue;
      const T up = self.grad[i] / dist;
      const std::size_t j = nearest[i];
      for (std::size_t c = 0; c < xv.cols(); ++c) {
        const T diff = (xv(i, c) - xv(j, c)) * up;
        gx(i, c) += diff;
        gx(j, c) -= diff;
      }
    }
  });
}

#define ICAR_INSTANTIATE_OPS(T)                                                                    \
  template Var<T> matmul(const Var<T>&, const Var<T>&);                                            \
  template Var<T> matmul_nt(const Var<T>&, const Var<T>&);                                         \
  template Var<T> add(const Var<T>&, const Var<T>&);                                               \
  template Var<T> sub(const Var<T>&, const Var<T>&);                                               \
  template Var<T> mul(const Var<T>&, const Var<T>&);                                               \
  template Var<T> scale(const Var<T>&, T);                                                         \
  template Var<T> sum(const Var<T>&);                                                              \
  template Var<T> mean(const Var<T>&);                                                             \
  template Var<T> group_mean_rows(const Var<T>&, std::size_t);                                     \
  template Var<T> concat_cols(const std::vector<Var<T>>&);                                         \
  template Var<T> concat_rows(const std::vector<Var<T>>&);                                         \
  template Var<T> assemble_rows(const std::vector<Var<T>>&, const std::vector<RowPick>&);          \
  template Var<T> gather_rows(const Var<T>&, std::span<const std::size_t>);                        \
  template Var<T> reshape(const Var<T>&, Shape);                                                   \
  template Var<T> layer_norm(const Var<T>&, const Var<T>&, const Var<T>&, T);                      \
  template Var<T> softmax_rows(const Var<T>&);                                                     \
  template Var<T> cross_entropy(const Var<T>&, std::span<const std::size_t>);                      \
  template Var<T> attention(const Var<T>&, const Var<T>&, const Var<T>&, const std::vector<Segment>&, \
                            std::size_t);                                                          \
  template Var<T> gelu(const Var<T>&);                                                             \
  template Var<T> relu(const Var<T>&);                                                             \
  template Var<T> softplus(const Var<T>&);                                                         \
  template Var<T> log(const Var<T>&);                                                              \
  template Var<T> pow(const Var<T>&, T);                                                           \
  template Var<T> clamp_min(const Var<T>&, T);                                                     \
  template Var<T> l2_normalize_rows(const Var<T>&);                                                \
  template Var<T> row_distance(const Var<T>&, const Var<T>&);                                      \
  template Var<T> nn_distance(const Var<T>&);                                                      \
  template Tensor<T> softmax_values(std::span<const T>);

ICAR_INSTANTIATE_OPS(float)
ICAR_INSTANTIATE_OPS(double)

#undef ICAR_INSTANTIATE_OPS

}  // namespace icar::nc
