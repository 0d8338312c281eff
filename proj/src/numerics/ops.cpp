#include "mqir/numerics/ops.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <stdexcept>

namespace mqir::num {
namespace {

template <typename T>
[[noreturn]] void fail(Graph<T>& g, std::string_view op, const std::string& what) {
  throw ShapeError(g.describe(op) + ": " + what);
}

template <typename T>
Graph<T>& same_graph(std::string_view op, Tensor<T> a, Tensor<T> b) {
  if (!a.valid() || !b.valid()) {
    throw std::invalid_argument(std::string(op) + ": invalid tensor handle");
  }
  if (&a.graph() != &b.graph()) {
    fail(a.graph(), op, "operands belong to different graphs");
  }
  return a.graph();
}

std::size_t product(const Shape& s, std::size_t from, std::size_t to) {
  std::size_t p = 1;
  for (std::size_t i = from; i < to; ++i) {
    p *= s[i];
  }
  return p;
}

}  // namespace

template <typename T>
Tensor<T> matmul(Tensor<T> x, Tensor<T> w) {
  Graph<T>& g = same_graph("matmul", x, w);
  const Shape& xs = x.shape();
  const Shape& ws = w.shape();
  if (ws.size() != 2 || xs.empty() || xs.back() != ws[0]) {
    fail(g, "matmul", "cannot multiply " + shape_string(xs) + " by " + shape_string(ws));
  }
  const std::size_t k = ws[0];
  const std::size_t n = ws[1];
  const std::size_t rows = x.size() / k;
  auto xv = x.values();
  auto wv = w.values();
  std::vector<T> out(rows * n, T(0));
  for (std::size_t i = 0; i < rows; ++i) {
    T* o = out.data() + i * n;
    for (std::size_t p = 0; p < k; ++p) {
      const T a = xv[i * k + p];
      if (a == T(0)) {
        continue;
      }
      const T* wr = wv.data() + p * n;
      for (std::size_t j = 0; j < n; ++j) {
        o[j] += a * wr[j];
      }
    }
  }
  Shape shape(xs.begin(), xs.end() - 1);
  shape.push_back(n);
  const std::size_t xi = x.id();
  const std::size_t wi = w.id();
  return g.emplace("matmul", std::move(shape), std::move(out), x.needs_grad() || w.needs_grad(),
                   [xi, wi, rows, k, n](Graph<T>& gr, std::size_t self) {
                     const std::vector<T>& go = gr.node(self).grad;
                     auto xv = gr.value(xi);
                     auto wv = gr.value(wi);
                     if (gr.node(xi).needs_grad) {
                       std::vector<T>& gx = gr.grad_buffer(xi);
                       for (std::size_t i = 0; i < rows; ++i) {
                         const T* gi = go.data() + i * n;
                         for (std::size_t p = 0; p < k; ++p) {
                           const T* wr = wv.data() + p * n;
                           T acc = T(0);
                           for (std::size_t j = 0; j < n; ++j) {
                             acc += gi[j] * wr[j];
                           }
                           gx[i * k + p] += acc;
                         }
                       }
                     }
                     if (gr.node(wi).needs_grad) {
                       std::vector<T>& gw = gr.grad_buffer(wi);
                       for (std::size_t i = 0; i < rows; ++i) {
                         const T* gi = go.data() + i * n;
                         for (std::size_t p = 0; p < k; ++p) {
                           const T a = xv[i * k + p];
                           if (a == T(0)) {
                             continue;
                           }
                           T* gwr = gw.data() + p * n;
                           for (std::size_t j = 0; j < n; ++j) {
                             gwr[j] += a * gi[j];
                           }
                         }
                       }
                     }
                   });
}

template <typename T>
Tensor<T> batched_matmul(Tensor<T> a, Tensor<T> b, bool transpose_b) {
  Graph<T>& g = same_graph("batched_matmul", a, b);
  const Shape& as = a.shape();
  const Shape& bs = b.shape();
  if (as.size() != 3 || bs.size() != 3 || as[0] != bs[0] ||
      as[2] != (transpose_b ? bs[2] : bs[1])) {
    fail(g, "batched_matmul",
         "cannot multiply " + shape_string(as) + " by " + shape_string(bs) +
             (transpose_b ? " (transposed)" : ""));
  }
  const std::size_t batch = as[0];
  const std::size_t m = as[1];
  const std::size_t k = as[2];
  const std::size_t n = transpose_b ? bs[1] : bs[2];
  auto av = a.values();
  auto bv = b.values();
  std::vector<T> out(batch * m * n, T(0));
  for (std::size_t z = 0; z < batch; ++z) {
    const T* A = av.data() + z * m * k;
    const T* B = bv.data() + z * k * n;
    T* O = out.data() + z * m * n;
    for (std::size_t i = 0; i < m; ++i) {
      if (transpose_b) {
        for (std::size_t j = 0; j < n; ++j) {
          T acc = T(0);
          for (std::size_t p = 0; p < k; ++p) {
            acc += A[i * k + p] * B[j * k + p];
          }
          O[i * n + j] = acc;
        }
      } else {
        for (std::size_t p = 0; p < k; ++p) {
          const T x = A[i * k + p];
          for (std::size_t j = 0; j < n; ++j) {
            O[i * n + j] += x * B[p * n + j];
          }
        }
      }
    }
  }
  const std::size_t ai = a.id();
  const std::size_t bi = b.id();
  return g.emplace(
      "batched_matmul", Shape{batch, m, n}, std::move(out), a.needs_grad() || b.needs_grad(),
      [ai, bi, batch, m, k, n, transpose_b](Graph<T>& gr, std::size_t self) {
        const std::vector<T>& go = gr.node(self).grad;
        auto av = gr.value(ai);
        auto bv = gr.value(bi);
        const bool need_a = gr.node(ai).needs_grad;
        const bool need_b = gr.node(bi).needs_grad;
        T* ga = need_a ? gr.grad_buffer(ai).data() : nullptr;
        T* gb = need_b ? gr.grad_buffer(bi).data() : nullptr;
        for (std::size_t z = 0; z < batch; ++z) {
          const T* A = av.data() + z * m * k;
          const T* B = bv.data() + z * k * n;
          const T* G = go.data() + z * m * n;
          for (std::size_t i = 0; i < m; ++i) {
            for (std::size_t j = 0; j < n; ++j) {
              const T gij = G[i * n + j];
              if (gij == T(0)) {
                continue;
              }
              for (std::size_t p = 0; p < k; ++p) {
                const T bval = transpose_b ? B[j * k + p] : B[p * n + j];
                if (need_a) {
                  ga[z * m * k + i * k + p] += gij * bval;
                }
                if (need_b) {
                  const std::size_t idx = transpose_b ? j * k + p : p * n + j;
                  gb[z * k * n + idx] += gij * A[i * k + p];
                }
              }
            }
          }
        }
      });
}

template <typename T>
Tensor<T> transpose(Tensor<T> x) {
  Graph<T>& g = x.graph();
  if (x.rank() != 2) {
    fail(g, "transpose", "expected a matrix, got " + shape_string(x.shape()));
  }
  const std::size_t r = x.dim(0);
  const std::size_t c = x.dim(1);
  auto xv = x.values();
  std::vector<T> out(r * c);
  for (std::size_t i = 0; i < r; ++i) {
    for (std::size_t j = 0; j < c; ++j) {
      out[j * r + i] = xv[i * c + j];
    }
  }
  const std::size_t xi = x.id();
  return g.emplace("transpose", Shape{c, r}, std::move(out), x.needs_grad(),
                   [xi, r, c](Graph<T>& gr, std::size_t self) {
                     const std::vector<T>& go = gr.node(self).grad;
                     std::vector<T>& gx = gr.grad_buffer(xi);
                     for (std::size_t i = 0; i < r; ++i) {
                       for (std::size_t j = 0; j < c; ++j) {
                         gx[i * c + j] += go[j * r + i];
                       }
                     }
                   });
}

template <typename T>
Tensor<T> add(Tensor<T> a, Tensor<T> b) {
  Graph<T>& g = same_graph("add", a, b);
  if (a.shape() != b.shape()) {
    fail(g, "add", "shapes " + shape_string(a.shape()) + " and " + shape_string(b.shape()) +
                       " differ");
  }
  auto av = a.values();
  auto bv = b.values();
  std::vector<T> out(av.size());
  for (std::size_t i = 0; i < out.size(); ++i) {
    out[i] = av[i] + bv[i];
  }
  const std::size_t ai = a.id();
  const std::size_t bi = b.id();
  return g.emplace("add", a.shape(), std::move(out), a.needs_grad() || b.needs_grad(),
                   [ai, bi](Graph<T>& gr, std::size_t self) {
                     const std::vector<T>& go = gr.node(self).grad;
                     for (std::size_t id : {ai, bi}) {
                       if (!gr.node(id).needs_grad) {
                         continue;
                       }
                       std::vector<T>& gx = gr.grad_buffer(id);
                       for (std::size_t i = 0; i < go.size(); ++i) {
                         gx[i] += go[i];
                       }
                     }
                   });
}

template <typename T>
Tensor<T> add_broadcast(Tensor<T> a, Tensor<T> b) {
  Graph<T>& g = same_graph("add_broadcast", a, b);
  const Shape& as = a.shape();
  const Shape& bs = b.shape();
  if (bs.size() > as.size() || !std::equal(bs.rbegin(), bs.rend(), as.rbegin())) {
    fail(g, "add_broadcast",
         shape_string(bs) + " is not a trailing suffix of " + shape_string(as));
  }
  auto av = a.values();
  auto bv = b.values();
  const std::size_t inner = bv.size();
  std::vector<T> out(av.size());
  for (std::size_t i = 0; i < out.size(); ++i) {
    out[i] = av[i] + bv[i % inner];
  }
  const std::size_t ai = a.id();
  const std::size_t bi = b.id();
  return g.emplace("add_broadcast", as, std::move(out), a.needs_grad() || b.needs_grad(),
                   [ai, bi, inner](Graph<T>& gr, std::size_t self) {
                     const std::vector<T>& go = gr.node(self).grad;
                     if (gr.node(ai).needs_grad) {
                       std::vector<T>& ga = gr.grad_buffer(ai);
                       for (std::size_t i = 0; i < go.size(); ++i) {
                         ga[i] += go[i];
                       }
                     }
                     if (gr.node(bi).needs_grad) {
                       std::vector<T>& gb = gr.grad_buffer(bi);
                       for (std::size_t i = 0; i < go.size(); ++i) {
                         gb[i % inner] += go[i];
                       }
                     }
                   });
}

template <typename T>
Tensor<T> scale(Tensor<T> x, T factor) {
  auto xv = x.values();
  std::vector<T> out(xv.size());
  for (std::size_t i = 0; i < out.size(); ++i) {
    out[i] = xv[i] * factor;
  }
  const std::size_t xi = x.id();
  return x.graph().emplace("scale", x.shape(), std::move(out), x.needs_grad(),
                           [xi, factor](Graph<T>& gr, std::size_t self) {
                             const std::vector<T>& go = gr.node(self).grad;
                             std::vector<T>& gx = gr.grad_buffer(xi);
                             for (std::size_t i = 0; i < go.size(); ++i) {
                               gx[i] += go[i] * factor;
                             }
                           });
}

template <typename T>
Tensor<T> relu(Tensor<T> x) {
  auto xv = x.values();
  std::vector<T> out(xv.size());
  for (std::size_t i = 0; i < out.size(); ++i) {
    out[i] = xv[i] > T(0) ? xv[i] : T(0);
  }
  const std::size_t xi = x.id();
  return x.graph().emplace("relu", x.shape(), std::move(out), x.needs_grad(),
                           [xi](Graph<T>& gr, std::size_t self) {
                             const std::vector<T>& go = gr.node(self).grad;
                             auto xv = gr.value(xi);
                             std::vector<T>& gx = gr.grad_buffer(xi);
                             for (std::size_t i = 0; i < go.size(); ++i) {
                               if (xv[i] > T(0)) {
                                 gx[i] += go[i];
                               }
                             }
                           });
}

template <typename T>
Tensor<T> exp(Tensor<T> x) {
  auto xv = x.values();
  std::vector<T> out(xv.size());
  for (std::size_t i = 0; i < out.size(); ++i) {
    out[i] = std::exp(xv[i]);
  }
  const std::size_t xi = x.id();
  return x.graph().emplace("exp", x.shape(), std::move(out), x.needs_grad(),
                           [xi](Graph<T>& gr, std::size_t self) {
                             const std::vector<T>& go = gr.node(self).grad;
                             auto y = gr.value(self);
                             std::vector<T>& gx = gr.grad_buffer(xi);
                             for (std::size_t i = 0; i < go.size(); ++i) {
                               gx[i] += go[i] * y[i];
                             }
                           });
}

template <typename T>
Tensor<T> log(Tensor<T> x) {
  auto xv = x.values();
  std::vector<T> out(xv.size());
  for (std::size_t i = 0; i < out.size(); ++i) {
    out[i] = std::log(xv[i]);
  }
  const std::size_t xi = x.id();
  return x.graph().emplace("log", x.shape(), std::move(out), x.needs_grad(),
                           [xi](Graph<T>& gr, std::size_t self) {
                             const std::vector<T>& go = gr.node(self).grad;
                             auto xv = gr.value(xi);
                             std::vector<T>& gx = gr.grad_buffer(xi);
                             for (std::size_t i = 0; i < go.size(); ++i) {
                               gx[i] += go[i] / xv[i];
                             }
                           });
}

template <typename T>
Tensor<T> softmax(Tensor<T> x) {
  Graph<T>& g = x.graph();
  if (x.rank() == 0) {
    fail(g, "softmax", "rank-0 input");
  }
  const std::size_t n = x.shape().back();
  const std::size_t rows = x.size() / n;
  auto xv = x.values();
  std::vector<T> out(xv.size());
  for (std::size_t r = 0; r < rows; ++r) {
    const T* in = xv.data() + r * n;
    T* o = out.data() + r * n;
    const T mx = *std::max_element(in, in + n);
    T sum = T(0);
    for (std::size_t j = 0; j < n; ++j) {
      o[j] = std::exp(in[j] - mx);
      sum += o[j];
    }
    for (std::size_t j = 0; j < n; ++j) {
      o[j] /= sum;
    }
  }
  const std::size_t xi = x.id();
  return g.emplace("softmax", x.shape(), std::move(out), x.needs_grad(),
                   [xi, rows, n](Graph<T>& gr, std::size_t self) {
                     const std::vector<T>& go = gr.node(self).grad;
                     auto y = gr.value(self);
                     std::vector<T>& gx = gr.grad_buffer(xi);
                     for (std::size_t r = 0; r < rows; ++r) {
                       T dot = T(0);
                       for (std::size_t j = 0; j < n; ++j) {
                         dot += go[r * n + j] * y[r * n + j];
                       }
                       for (std::size_t j = 0; j < n; ++j) {
                         gx[r * n + j] += y[r * n + j] * (go[r * n + j] - dot);
                       }
                     }
                   });
}

template <typename T>
Tensor<T> log_softmax(Tensor<T> x) {
  Graph<T>& g = x.graph();
  if (x.rank() == 0) {
    fail(g, "log_softmax", "rank-0 input");
  }
  const std::size_t n = x.shape().back();
  const std::size_t rows = x.size() / n;
  auto xv = x.values();
  std::vector<T> out(xv.size());
  for (std::size_t r = 0; r < rows; ++r) {
    const T* in = xv.data() + r * n;
    const T mx = *std::max_element(in, in + n);
    T sum = T(0);
    for (std::size_t j = 0; j < n; ++j) {
      sum += std::exp(in[j] - mx);
    }
    const T lse = mx + std::log(sum);
    for (std::size_t j = 0; j < n; ++j) {
      out[r * n + j] = in[j] - lse;
    }
  }
  const std::size_t xi = x.id();
  return g.emplace("log_softmax", x.shape(), std::move(out), x.needs_grad(),
                   [xi, rows, n](Graph<T>& gr, std::size_t self) {
                     const std::vector<T>& go = gr.node(self).grad;
                     auto y = gr.value(self);
                     std::vector<T>& gx = gr.grad_buffer(xi);
                     for (std::size_t r = 0; r < rows; ++r) {
                       T total = T(0);
                       for (std::size_t j = 0; j < n; ++j) {
                         total += go[r * n + j];
                       }
                       for (std::size_t j = 0; j < n; ++j) {
                         gx[r * n + j] += go[r * n + j] - std::exp(y[r * n + j]) * total;
                       }
                     }
                   });
}

template <typename T>
Tensor<T> layer_norm(Tensor<T> x, Tensor<T> gain, Tensor<T> bias, T epsilon) {
  Graph<T>& g = same_graph("layer_norm", x, gain);
  same_graph("layer_norm", x, bias);
  if (x.rank() == 0 || gain.shape() != Shape{x.shape().back()} || bias.shape() != gain.shape()) {
    fail(g, "layer_norm",
         "input " + shape_string(x.shape()) + " with gain " + shape_string(gain.shape()) +
             " and bias " + shape_string(bias.shape()));
  }
  const std::size_t n = x.shape().back();
  const std::size_t rows = x.size() / n;
  auto xv = x.values();
  auto gv = gain.values();
  auto bv = bias.values();
  std::vector<T> normed(xv.size());
  std::vector<T> inv_std(rows);
  std::vector<T> out(xv.size());
  for (std::size_t r = 0; r < rows; ++r) {
    const T* in = xv.data() + r * n;
    T* nr = normed.data() + r * n;
    const auto [lo, hi] = std::minmax_element(in, in + n);
    T mean_v = T(0);
    for (std::size_t j = 0; j < n; ++j) {
      mean_v += in[j];
    }
    mean_v /= static_cast<T>(n);
    T var = T(0);
    for (std::size_t j = 0; j < n; ++j) {
      var += (in[j] - mean_v) * (in[j] - mean_v);
    }
    var /= static_cast<T>(n);
    inv_std[r] = T(1) / std::sqrt(var + epsilon);
    const bool constant_row = *lo == *hi;
    for (std::size_t j = 0; j < n; ++j) {
      nr[j] = constant_row ? T(0) : (in[j] - mean_v) * inv_std[r];
      out[r * n + j] = nr[j] * gv[j] + bv[j];
    }
  }
  const std::size_t xi = x.id();
  const std::size_t gi = gain.id();
  const std::size_t bi = bias.id();
  const bool needs = x.needs_grad() || gain.needs_grad() || bias.needs_grad();
  return g.emplace(
      "layer_norm", x.shape(), std::move(out), needs,
      [xi, gi, bi, rows, n, normed = std::move(normed), inv_std = std::move(inv_std)](
          Graph<T>& gr, std::size_t self) {
        const std::vector<T>& go = gr.node(self).grad;
        auto gv = gr.value(gi);
        if (gr.node(gi).needs_grad) {
          std::vector<T>& gg = gr.grad_buffer(gi);
          for (std::size_t i = 0; i < go.size(); ++i) {
            gg[i % n] += go[i] * normed[i];
          }
        }
        if (gr.node(bi).needs_grad) {
          std::vector<T>& gb = gr.grad_buffer(bi);
          for (std::size_t i = 0; i < go.size(); ++i) {
            gb[i % n] += go[i];
          }
        }
        if (gr.node(xi).needs_grad) {
          std::vector<T>& gx = gr.grad_buffer(xi);
          for (std::size_t r = 0; r < rows; ++r) {
            T mean_d = T(0);
            T mean_dn = T(0);
            for (std::size_t j = 0; j < n; ++j) {
              const T d = go[r * n + j] * gv[j];
              mean_d += d;
              mean_dn += d * normed[r * n + j];
            }
            mean_d /= static_cast<T>(n);
            mean_dn /= static_cast<T>(n);
            for (std::size_t j = 0; j < n; ++j) {
              const T d = go[r * n + j] * gv[j];
              gx[r * n + j] += inv_std[r] * (d - mean_d - normed[r * n + j] * mean_dn);
            }
          }
        }
      });
}

template <typename T>
Tensor<T> mean(Tensor<T> x, std::size_t axis) {
  Graph<T>& g = x.graph();
  const Shape& xs = x.shape();
  if (axis >= xs.size()) {
    fail(g, "mean", "axis " + std::to_string(axis) + " out of range for " + shape_string(xs));
  }
  const std::size_t outer = product(xs, 0, axis);
  const std::size_t len = xs[axis];
  const std::size_t inner = product(xs, axis + 1, xs.size());
  auto xv = x.values();
  std::vector<T> out(outer * inner, T(0));
  const T inv = T(1) / static_cast<T>(len);
  for (std::size_t o = 0; o < outer; ++o) {
    for (std::size_t l = 0; l < len; ++l) {
      for (std::size_t i = 0; i < inner; ++i) {
        out[o * inner + i] += xv[(o * len + l) * inner + i];
      }
    }
  }
  for (T& v : out) {
    v *= inv;
  }
  Shape shape;
  for (std::size_t i = 0; i < xs.size(); ++i) {
    if (i != axis) {
      shape.push_back(xs[i]);
    }
  }
  if (shape.empty()) {
    shape.push_back(1);
  }
  const std::size_t xi = x.id();
  return g.emplace("mean", std::move(shape), std::move(out), x.needs_grad(),
                   [xi, outer, len, inner, inv](Graph<T>& gr, std::size_t self) {
                     const std::vector<T>& go = gr.node(self).grad;
                     std::vector<T>& gx = gr.grad_buffer(xi);
                     for (std::size_t o = 0; o < outer; ++o) {
                       for (std::size_t l = 0; l < len; ++l) {
                         for (std::size_t i = 0; i < inner; ++i) {
                           gx[(o * len + l) * inner + i] += go[o * inner + i] * inv;
                         }
                       }
                     }
                   });
}

template <typename T>
Tensor<T> mean_all(Tensor<T> x) {
  return mean(reshape(x, Shape{x.size()}), 0);
}

template <typename T>
Tensor<T> masked_mean(Tensor<T> x, std::span<const std::uint8_t> mask) {
  Graph<T>& g = x.graph();
  if (x.rank() != 3 || mask.size() != x.dim(0) * x.dim(1)) {
    fail(g, "masked_mean",
         "input " + shape_string(x.shape()) + " with mask of " + std::to_string(mask.size()));
  }
  const std::size_t b = x.dim(0);
  const std::size_t s = x.dim(1);
  const std::size_t d = x.dim(2);
  auto xv = x.values();
  std::vector<T> weights(b * s, T(0));
  for (std::size_t i = 0; i < b; ++i) {
    std::size_t count = 0;
    for (std::size_t j = 0; j < s; ++j) {
      count += mask[i * s + j] ? 1 : 0;
    }
    for (std::size_t j = 0; j < s; ++j) {
      if (mask[i * s + j]) {
        weights[i * s + j] = T(1) / static_cast<T>(count);
      }
    }
  }
  std::vector<T> out(b * d, T(0));
  for (std::size_t i = 0; i < b; ++i) {
    for (std::size_t j = 0; j < s; ++j) {
      const T w = weights[i * s + j];
      if (w == T(0)) {
        continue;
      }
      const T* row = xv.data() + (i * s + j) * d;
      for (std::size_t c = 0; c < d; ++c) {
        out[i * d + c] += w * row[c];
      }
    }
  }
  const std::size_t xi = x.id();
  return g.emplace("masked_mean", Shape{b, d}, std::move(out), x.needs_grad(),
                   [xi, b, s, d, weights = std::move(weights)](Graph<T>& gr, std::size_t self) {
                     const std::vector<T>& go = gr.node(self).grad;
                     std::vector<T>& gx = gr.grad_buffer(xi);
                     for (std::size_t i = 0; i < b; ++i) {
                       for (std::size_t j = 0; j < s; ++j) {
                         const T w = weights[i * s + j];
                         if (w == T(0)) {
                           continue;
                         }
                         for (std::size_t c = 0; c < d; ++c) {
                           gx[(i * s + j) * d + c] += w * go[i * d + c];
                         }
                       }
                     }
                   });
}

template <typename T>
Tensor<T> embedding(Tensor<T> table, std::span<const std::int32_t> ids, Shape prefix) {
  Graph<T>& g = table.graph();
  if (table.rank() != 2 || element_count(prefix) != ids.size()) {
    fail(g, "embedding",
         "table " + shape_string(table.shape()) + " with " + std::to_string(ids.size()) +
             " ids for prefix " + shape_string(prefix));
  }
  const std::size_t vocab = table.dim(0);
  const std::size_t d = table.dim(1);
  for (std::int32_t id : ids) {
    if (id < 0 || static_cast<std::size_t>(id) >= vocab) {
      throw std::out_of_range(g.describe("embedding") + ": id " + std::to_string(id) +
                              " outside vocabulary of " + std::to_string(vocab));
    }
  }
  auto tv = table.values();
  std::vector<T> out(ids.size() * d);
  for (std::size_t i = 0; i < ids.size(); ++i) {
    std::copy_n(tv.data() + static_cast<std::size_t>(ids[i]) * d, d, out.data() + i * d);
  }
  prefix.push_back(d);
  const std::size_t ti = table.id();
  return g.emplace("embedding", std::move(prefix), std::move(out), table.needs_grad(),
                   [ti, d, ids = std::vector<std::int32_t>(ids.begin(), ids.end())](
                       Graph<T>& gr, std::size_t self) {
                     const std::vector<T>& go = gr.node(self).grad;
                     std::vector<T>& gt = gr.grad_buffer(ti);
                     for (std::size_t i = 0; i < ids.size(); ++i) {
                       T* row = gt.data() + static_cast<std::size_t>(ids[i]) * d;
                       for (std::size_t c = 0; c < d; ++c) {
                         row[c] += go[i * d + c];
                       }
                     }
                   });
}

template <typename T>
Tensor<T> dropout(Tensor<T> x, double rate) {
  Graph<T>& g = x.graph();
  if (rate < 0.0 || rate >= 1.0) {
    throw std::invalid_argument(g.describe("dropout") + ": rate must be in [0, 1)");
  }
  if (!g.training() || rate == 0.0) {
    return x;
  }
  const T keep_scale = static_cast<T>(1.0 / (1.0 - rate));
  auto xv = x.values();
  std::vector<T> factor(xv.size());
  std::vector<T> out(xv.size());
  Rng& rng = g.dropout_stream();
  for (std::size_t i = 0; i < out.size(); ++i) {
    factor[i] = rng.uniform() < rate ? T(0) : keep_scale;
    out[i] = xv[i] * factor[i];
  }
  const std::size_t xi = x.id();
  return g.emplace("dropout", x.shape(), std::move(out), x.needs_grad(),
                   [xi, factor = std::move(factor)](Graph<T>& gr, std::size_t self) {
                     const std::vector<T>& go = gr.node(self).grad;
                     std::vector<T>& gx = gr.grad_buffer(xi);
                     for (std::size_t i = 0; i < go.size(); ++i) {
                       gx[i] += go[i] * factor[i];
                     }
                   });
}

template <typename T>
Tensor<T> concat(const std::vector<Tensor<T>>& parts, std::size_t axis) {
  if (parts.empty()) {
    throw std::invalid_argument("concat: no inputs");
  }
  Graph<T>& g = parts.front().graph();
  const Shape& first = parts.front().shape();
  if (axis >= first.size()) {
    fail(g, "concat", "axis " + std::to_string(axis) + " out of range for " + shape_string(first));
  }
  Shape shape = first;
  shape[axis] = 0;
  bool needs = false;
  for (const Tensor<T>& p : parts) {
    same_graph("concat", parts.front(), p);
    const Shape& ps = p.shape();
    bool compatible = ps.size() == first.size();
    for (std::size_t i = 0; compatible && i < ps.size(); ++i) {
      compatible = i == axis || ps[i] == first[i];
    }
    if (!compatible) {
      fail(g, "concat", "cannot join " + shape_string(ps) + " with " + shape_string(first) +
                            " along axis " + std::to_string(axis));
    }
    shape[axis] += ps[axis];
    needs = needs || p.needs_grad();
  }
  const std::size_t outer = product(first, 0, axis);
  const std::size_t inner = product(first, axis + 1, first.size());
  const std::size_t out_stride = shape[axis] * inner;
  std::vector<T> out(outer * out_stride);
  std::vector<std::size_t> ids;
  std::vector<std::size_t> widths;
  std::size_t offset = 0;
  for (const Tensor<T>& p : parts) {
    const std::size_t w = p.dim(axis) * inner;
    auto pv = p.values();
    for (std::size_t o = 0; o < outer; ++o) {
      std::copy_n(pv.data() + o * w, w, out.data() + o * out_stride + offset);
    }
    ids.push_back(p.id());
    widths.push_back(w);
    offset += w;
  }
  return g.emplace("concat", std::move(shape), std::move(out), needs,
                   [ids = std::move(ids), widths = std::move(widths), outer, out_stride](
                       Graph<T>& gr, std::size_t self) {
                     const std::vector<T>& go = gr.node(self).grad;
                     std::size_t off = 0;
                     for (std::size_t k = 0; k < ids.size(); ++k) {
                       if (gr.node(ids[k]).needs_grad) {
                         std::vector<T>& gp = gr.grad_buffer(ids[k]);
                         for (std::size_t o = 0; o < outer; ++o) {
                           for (std::size_t i = 0; i < widths[k]; ++i) {
                             gp[o * widths[k] + i] += go[o * out_stride + off + i];
                           }
                         }
                       }
                       off += widths[k];
                     }
                   });
}

template <typename T>
Tensor<T> slice(Tensor<T> x, std::size_t axis, std::size_t start, std::size_t length) {
  Graph<T>& g = x.graph();
  const Shape& xs = x.shape();
  if (axis >= xs.size() || length == 0 || start + length > xs[axis]) {
    fail(g, "slice", "range [" + std::to_string(start) + ", " + std::to_string(start + length) +
                         ") on axis " + std::to_string(axis) + " of " + shape_string(xs));
  }
  const std::size_t outer = product(xs, 0, axis);
  const std::size_t inner = product(xs, axis + 1, xs.size());
  const std::size_t in_stride = xs[axis] * inner;
  const std::size_t w = length * inner;
  const std::size_t off = start * inner;
  auto xv = x.values();
  std::vector<T> out(outer * w);
  for (std::size_t o = 0; o < outer; ++o) {
    std::copy_n(xv.data() + o * in_stride + off, w, out.data() + o * w);
  }
  Shape shape = xs;
  shape[axis] = length;
  const std::size_t xi = x.id();
  return g.emplace("slice", std::move(shape), std::move(out), x.needs_grad(),
                   [xi, outer, in_stride, w, off](Graph<T>& gr, std::size_t self) {
                     const std::vector<T>& go = gr.node(self).grad;
                     std::vector<T>& gx = gr.grad_buffer(xi);
                     for (std::size_t o = 0; o < outer; ++o) {
                       for (std::size_t i = 0; i < w; ++i) {
                         gx[o * in_stride + off + i] += go[o * w + i];
                       }
                     }
                   });
}

template <typename T>
Tensor<T> mask_fill(Tensor<T> x, std::span<const std::uint8_t> key_mask, T fill) {
  Graph<T>& g = x.graph();
  if (x.rank() != 3 || key_mask.size() != x.dim(0) * x.dim(2)) {
    fail(g, "mask_fill",
         "input " + shape_string(x.shape()) + " with mask of " + std::to_string(key_mask.size()));
  }
  const std::size_t b = x.dim(0);
  const std::size_t q = x.dim(1);
  const std::size_t k = x.dim(2);
  auto xv = x.values();
  std::vector<T> out(xv.begin(), xv.end());
  for (std::size_t i = 0; i < b; ++i) {
    for (std::size_t j = 0; j < k; ++j) {
      if (key_mask[i * k + j]) {
        continue;
      }
      for (std::size_t r = 0; r < q; ++r) {
        out[(i * q + r) * k + j] += fill;
      }
    }
  }
  const std::size_t xi = x.id();
  return g.emplace("mask_fill", x.shape(), std::move(out), x.needs_grad(),
                   [xi](Graph<T>& gr, std::size_t self) {
                     const std::vector<T>& go = gr.node(self).grad;
                     std::vector<T>& gx = gr.grad_buffer(xi);
                     for (std::size_t i = 0; i < go.size(); ++i) {
                       gx[i] += go[i];
                     }
                   });
}

template <typename T>
Tensor<T> pick(Tensor<T> x, std::span<const std::size_t> index) {
  Graph<T>& g = x.graph();
  if (x.rank() != 2 || index.size() != x.dim(0)) {
    fail(g, "pick", "input " + shape_string(x.shape()) + " with " +
                        std::to_string(index.size()) + " indices");
  }
  const std::size_t c = x.dim(1);
  auto xv = x.values();
  std::vector<T> out(index.size());
  for (std::size_t r = 0; r < index.size(); ++r) {
    if (index[r] >= c) {
      fail(g, "pick", "index " + std::to_string(index[r]) + " outside " + std::to_string(c) +
                          " columns");
    }
    out[r] = xv[r * c + index[r]];
  }
  const std::size_t xi = x.id();
  return g.emplace("pick", Shape{index.size()}, std::move(out), x.needs_grad(),
                   [xi, c, index = std::vector<std::size_t>(index.begin(), index.end())](
                       Graph<T>& gr, std::size_t self) {
                     const std::vector<T>& go = gr.node(self).grad;
                     std::vector<T>& gx = gr.grad_buffer(xi);
                     for (std::size_t r = 0; r < index.size(); ++r) {
                       gx[r * c + index[r]] += go[r];
                     }
                   });
}

template <typename T>
Tensor<T> reshape(Tensor<T> x, Shape shape) {
  Graph<T>& g = x.graph();
  if (element_count(shape) != x.size()) {
    fail(g, "reshape", "cannot view " + shape_string(x.shape()) + " as " + shape_string(shape));
  }
  auto xv = x.values();
  const std::size_t xi = x.id();
  return g.emplace("reshape", std::move(shape), std::vector<T>(xv.begin(), xv.end()),
                   x.needs_grad(), [xi](Graph<T>& gr, std::size_t self) {
                     const std::vector<T>& go = gr.node(self).grad;
                     std::vector<T>& gx = gr.grad_buffer(xi);
                     for (std::size_t i = 0; i < go.size(); ++i) {
                       gx[i] += go[i];
                     }
                   });
}

template <typename T>
Tensor<T> linear(Tensor<T> x, Tensor<T> w, Tensor<T> b) {
  return add_broadcast(matmul(x, w), b);
}

#define MQIR_INSTANTIATE_OPS(T)                                                          \
  template Tensor<T> matmul(Tensor<T>, Tensor<T>);                                       \
  template Tensor<T> batched_matmul(Tensor<T>, Tensor<T>, bool);                         \
  template Tensor<T> transpose(Tensor<T>);                                               \
  template Tensor<T> add(Tensor<T>, Tensor<T>);                                          \
  template Tensor<T> add_broadcast(Tensor<T>, Tensor<T>);                                \
  template Tensor<T> scale(Tensor<T>, T);                                                \
  template Tensor<T> relu(Tensor<T>);                                                    \
  template Tensor<T> exp(Tensor<T>);                                                     \
  template Tensor<T> log(Tensor<T>);                                                     \
  template Tensor<T> softmax(Tensor<T>);                                                 \
  template Tensor<T> log_softmax(Tensor<T>);                                             \
  template Tensor<T> layer_norm(Tensor<T>, Tensor<T>, Tensor<T>, T);                     \
  template Tensor<T> mean(Tensor<T>, std::size_t);                                       \
  template Tensor<T> mean_all(Tensor<T>);                                                \
  template Tensor<T> masked_mean(Tensor<T>, std::span<const std::uint8_t>);              \
  template Tensor<T> embedding(Tensor<T>, std::span<const std::int32_t>, Shape);         \
  template Tensor<T> dropout(Tensor<T>, double);                                         \
  template Tensor<T> concat(const std::vector<Tensor<T>>&, std::size_t);                 \
  template Tensor<T> slice(Tensor<T>, std::size_t, std::size_t, std::size_t);            \
  template Tensor<T> mask_fill(Tensor<T>, std::span<const std::uint8_t>, T);             \
  template Tensor<T> pick(Tensor<T>, std::span<const std::size_t>);                      \
  template Tensor<T> reshape(Tensor<T>, Shape);                                          \
  template Tensor<T> linear(Tensor<T>, Tensor<T>, Tensor<T>);

MQIR_INSTANTIATE_OPS(float)
MQIR_INSTANTIATE_OPS(double)

#undef MQIR_INSTANTIATE_OPS

}  // namespace mqir::num
