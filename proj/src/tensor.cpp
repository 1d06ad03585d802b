#include "ovsal/tensor.hpp"

// Keep Eigen's GEMM single-threaded: results must be bitwise reproducible
// regardless of the ambient OpenMP thread count.
#define EIGEN_DONT_PARALLELIZE
#include <Eigen/Core>

#include <cmath>
#include <memory>

#include "ovsal/errors.hpp"

namespace ovsal::nn {

namespace {

using EMat = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using CMap = Eigen::Map<const EMat>;
using MMap = Eigen::Map<EMat>;

void require(bool ok, const std::string& what) {
  if (!ok) throw InvalidInputError("tensor: " + what);
}

void require_same_shape(Var a, Var b) {
  require(a.shape() == b.shape(),
          "shape mismatch " + shape_str(a.shape()) + " vs " + shape_str(b.shape()));
}

void require_same_tape(Var a, Var b) { require(a.tape == b.tape, "vars from different tapes"); }

std::vector<std::size_t> strides_of(const Shape& s) {
  std::vector<std::size_t> st(s.size());
  std::size_t acc = 1;
  for (int i = static_cast<int>(s.size()) - 1; i >= 0; --i) {
    st[static_cast<std::size_t>(i)] = acc;
    acc *= static_cast<std::size_t>(s[static_cast<std::size_t>(i)]);
  }
  return st;
}

}  // namespace

std::size_t numel(const Shape& s) {
  std::size_t n = 1;
  for (int d : s) n *= static_cast<std::size_t>(d);
  return n;
}

std::string shape_str(const Shape& s) {
  std::string out = "[";
  for (std::size_t i = 0; i < s.size(); ++i) {
    if (i) out += ",";
    out += std::to_string(s[i]);
  }
  return out + "]";
}

const Shape& Var::shape() const { return tape->node(idx).shape; }
const std::vector<double>& Var::val() const { return tape->node(idx).v; }
std::vector<double>& Var::grad() const { return tape->node(idx).g; }

std::uint64_t Tape::next_id() {
  static std::uint64_t counter = 0;
  return ++counter;
}

Var Tape::leaf(Shape shape) {
  for (int d : shape) require(d > 0, "non-positive dim in " + shape_str(shape));
  Node n;
  n.shape = std::move(shape);
  n.v.assign(numel(n.shape), 0.0);
  n.g.assign(n.v.size(), 0.0);
  nodes_.push_back(std::move(n));
  return {this, static_cast<int>(nodes_.size()) - 1};
}

Var Tape::leaf(Shape shape, const std::vector<double>& values) {
  Var v = leaf(std::move(shape));
  require(values.size() == v.size(), "leaf value count mismatch");
  node(v.idx).v = values;
  return v;
}

Var Tape::make(Shape shape, std::function<void()> back) {
  Var v = leaf(std::move(shape));
  node(v.idx).back = std::move(back);
  return v;
}

void Tape::backward(Var out) {
  require(out.tape == this, "backward on foreign var");
  require(out.size() == 1, "backward needs a scalar output");
  node(out.idx).g[0] = 1.0;
  for (int i = out.idx; i >= 0; --i)
    if (nodes_[static_cast<std::size_t>(i)].back) nodes_[static_cast<std::size_t>(i)].back();
}

// ---------------------------------------------------------------- elementwise

namespace {

template <class F, class B>
Var unary(Var a, F f, B dfdx) {
  Tape* t = a.tape;
  Var y = t->make(a.shape(), nullptr);
  const auto& av = a.val();
  auto& yv = t->node(y.idx).v;
  for (std::size_t i = 0; i < av.size(); ++i) yv[i] = f(av[i]);
  const int ai = a.idx, yi = y.idx;
  t->node(y.idx).back = [t, ai, yi, dfdx] {
    const auto& g = t->node(yi).g;
    const auto& x = t->node(ai).v;
    const auto& yv2 = t->node(yi).v;
    auto& ag = t->node(ai).g;
    for (std::size_t i = 0; i < g.size(); ++i) ag[i] += g[i] * dfdx(x[i], yv2[i]);
  };
  return y;
}

}  // namespace

Var add(Var a, Var b) {
  require_same_tape(a, b);
  require_same_shape(a, b);
  Tape* t = a.tape;
  Var y = t->make(a.shape(), nullptr);
  auto& yv = t->node(y.idx).v;
  const auto& av = a.val();
  const auto& bv = b.val();
  for (std::size_t i = 0; i < yv.size(); ++i) yv[i] = av[i] + bv[i];
  const int ai = a.idx, bi = b.idx, yi = y.idx;
  t->node(y.idx).back = [t, ai, bi, yi] {
    const auto& g = t->node(yi).g;
    auto& ag = t->node(ai).g;
    auto& bg = t->node(bi).g;
    for (std::size_t i = 0; i < g.size(); ++i) {
      ag[i] += g[i];
      bg[i] += g[i];
    }
  };
  return y;
}

Var sub(Var a, Var b) {
  require_same_tape(a, b);
  require_same_shape(a, b);
  Tape* t = a.tape;
  Var y = t->make(a.shape(), nullptr);
  auto& yv = t->node(y.idx).v;
  const auto& av = a.val();
  const auto& bv = b.val();
  for (std::size_t i = 0; i < yv.size(); ++i) yv[i] = av[i] - bv[i];
  const int ai = a.idx, bi = b.idx, yi = y.idx;
  t->node(y.idx).back = [t, ai, bi, yi] {
    const auto& g = t->node(yi).g;
    auto& ag = t->node(ai).g;
    auto& bg = t->node(bi).g;
    for (std::size_t i = 0; i < g.size(); ++i) {
      ag[i] += g[i];
      bg[i] -= g[i];
    }
  };
  return y;
}

Var mul(Var a, Var b) {
  require_same_tape(a, b);
  require_same_shape(a, b);
  Tape* t = a.tape;
  Var y = t->make(a.shape(), nullptr);
  auto& yv = t->node(y.idx).v;
  const auto& av = a.val();
  const auto& bv = b.val();
  for (std::size_t i = 0; i < yv.size(); ++i) yv[i] = av[i] * bv[i];
  const int ai = a.idx, bi = b.idx, yi = y.idx;
  t->node(y.idx).back = [t, ai, bi, yi] {
    const auto& g = t->node(yi).g;
    const auto& av2 = t->node(ai).v;
    const auto& bv2 = t->node(bi).v;
    auto& ag = t->node(ai).g;
    auto& bg = t->node(bi).g;
    for (std::size_t i = 0; i < g.size(); ++i) {
      ag[i] += g[i] * bv2[i];
      bg[i] += g[i] * av2[i];
    }
  };
  return y;
}

Var divide(Var a, Var b) {
  require_same_tape(a, b);
  require_same_shape(a, b);
  Tape* t = a.tape;
  Var y = t->make(a.shape(), nullptr);
  auto& yv = t->node(y.idx).v;
  const auto& av = a.val();
  const auto& bv = b.val();
  for (std::size_t i = 0; i < yv.size(); ++i) yv[i] = av[i] / bv[i];
  const int ai = a.idx, bi = b.idx, yi = y.idx;
  t->node(y.idx).back = [t, ai, bi, yi] {
    const auto& g = t->node(yi).g;
    const auto& bv2 = t->node(bi).v;
    const auto& yv2 = t->node(yi).v;
    auto& ag = t->node(ai).g;
    auto& bg = t->node(bi).g;
    for (std::size_t i = 0; i < g.size(); ++i) {
      ag[i] += g[i] / bv2[i];
      bg[i] -= g[i] * yv2[i] / bv2[i];
    }
  };
  return y;
}

Var scale(Var a, double c) {
  return unary(a, [c](double x) { return c * x; }, [c](double, double) { return c; });
}

Var add_scalar(Var a, double c) {
  return unary(a, [c](double x) { return x + c; }, [](double, double) { return 1.0; });
}

Var abs_(Var a) {
  return unary(a, [](double x) { return std::abs(x); },
               [](double x, double) { return x > 0.0 ? 1.0 : (x < 0.0 ? -1.0 : 0.0); });
}

Var log_(Var a) {
  return unary(a, [](double x) { return std::log(x); }, [](double x, double) { return 1.0 / x; });
}

Var sqrt_(Var a) {
  return unary(a, [](double x) { return std::sqrt(x); },
               [](double, double y) { return 0.5 / y; });
}

Var sigmoid(Var a) {
  return unary(a, [](double x) { return 1.0 / (1.0 + std::exp(-x)); },
               [](double, double y) { return y * (1.0 - y); });
}

Var tanh_(Var a) {
  return unary(a, [](double x) { return std::tanh(x); },
               [](double, double y) { return 1.0 - y * y; });
}

Var gelu(Var a) {
  constexpr double kInvSqrt2 = 0.70710678118654752440;
  constexpr double kInvSqrt2Pi = 0.39894228040143267794;
  return unary(a, [=](double x) { return 0.5 * x * (1.0 + std::erf(x * kInvSqrt2)); },
               [=](double x, double) {
                 return 0.5 * (1.0 + std::erf(x * kInvSqrt2)) +
                        x * std::exp(-0.5 * x * x) * kInvSqrt2Pi;
               });
}

// ------------------------------------------------------------- linear algebra

Var matmul(Var a, Var b) {
  require_same_tape(a, b);
  require(a.shape().size() == 2 && b.shape().size() == 2, "matmul needs 2-d operands");
  const int m = a.shape()[0], k = a.shape()[1], k2 = b.shape()[0], n = b.shape()[1];
  require(k == k2, "matmul inner dims " + shape_str(a.shape()) + " x " + shape_str(b.shape()));
  Tape* t = a.tape;
  Var y = t->make({m, n}, nullptr);
  {
    CMap am(a.val().data(), m, k);
    CMap bm(b.val().data(), k, n);
    MMap ym(t->node(y.idx).v.data(), m, n);
    ym.noalias() = am * bm;
  }
  const int ai = a.idx, bi = b.idx, yi = y.idx;
  t->node(y.idx).back = [t, ai, bi, yi, m, k, n] {
    CMap g(t->node(yi).g.data(), m, n);
    CMap am(t->node(ai).v.data(), m, k);
    CMap bm(t->node(bi).v.data(), k, n);
    MMap ag(t->node(ai).g.data(), m, k);
    MMap bg(t->node(bi).g.data(), k, n);
    ag.noalias() += g * bm.transpose();
    bg.noalias() += am.transpose() * g;
  };
  return y;
}

Var add_bias(Var a, Var b) {
  require_same_tape(a, b);
  require(b.shape().size() == 1, "bias must be 1-d");
  const int c = b.shape()[0];
  require(!a.shape().empty() && a.shape().back() == c, "bias dim mismatch");
  Tape* t = a.tape;
  Var y = t->make(a.shape(), nullptr);
  auto& yv = t->node(y.idx).v;
  const auto& av = a.val();
  const auto& bv = b.val();
  for (std::size_t i = 0; i < yv.size(); ++i) yv[i] = av[i] + bv[i % c];
  const int ai = a.idx, bi = b.idx, yi = y.idx;
  t->node(y.idx).back = [t, ai, bi, yi, c] {
    const auto& g = t->node(yi).g;
    auto& ag = t->node(ai).g;
    auto& bg = t->node(bi).g;
    for (std::size_t i = 0; i < g.size(); ++i) {
      ag[i] += g[i];
      bg[i % c] += g[i];
    }
  };
  return y;
}

// ----------------------------------------------------------------- reshaping

Var reshape(Var a, Shape shape) {
  require(numel(shape) == a.size(),
          "reshape " + shape_str(a.shape()) + " -> " + shape_str(shape));
  Tape* t = a.tape;
  Var y = t->make(std::move(shape), nullptr);
  t->node(y.idx).v = a.val();
  const int ai = a.idx, yi = y.idx;
  t->node(y.idx).back = [t, ai, yi] {
    const auto& g = t->node(yi).g;
    auto& ag = t->node(ai).g;
    for (std::size_t i = 0; i < g.size(); ++i) ag[i] += g[i];
  };
  return y;
}

Var permute(Var a, const std::vector<int>& perm) {
  const Shape s = a.shape();  // by value: node creation below may move the arena
  require(perm.size() == s.size(), "permute rank mismatch");
  Shape out_shape(s.size());
  for (std::size_t i = 0; i < perm.size(); ++i)
    out_shape[i] = s[static_cast<std::size_t>(perm[i])];
  Tape* t = a.tape;
  Var y = t->make(out_shape, nullptr);

  const auto in_st = strides_of(s);
  const auto out_st = strides_of(out_shape);
  const std::size_t n = a.size();
  // out linear index -> in linear index
  auto fill_mapping = std::make_shared<std::vector<std::size_t>>(n);
  {
    std::vector<int> coord(s.size());
    for (std::size_t o = 0; o < n; ++o) {
      std::size_t rem = o;
      std::size_t in_idx = 0;
      for (std::size_t d = 0; d < out_shape.size(); ++d) {
        const std::size_t c = rem / out_st[d];
        rem %= out_st[d];
        in_idx += c * in_st[static_cast<std::size_t>(perm[d])];
      }
      (*fill_mapping)[o] = in_idx;
    }
  }
  auto& yv = t->node(y.idx).v;
  const auto& av = a.val();
  for (std::size_t o = 0; o < n; ++o) yv[o] = av[(*fill_mapping)[o]];
  const int ai = a.idx, yi = y.idx;
  t->node(y.idx).back = [t, ai, yi, fill_mapping] {
    const auto& g = t->node(yi).g;
    auto& ag = t->node(ai).g;
    for (std::size_t o = 0; o < g.size(); ++o) ag[(*fill_mapping)[o]] += g[o];
  };
  return y;
}

Var concat(const std::vector<Var>& xs, int axis) {
  require(!xs.empty(), "concat of nothing");
  Tape* t = xs[0].tape;
  const Shape s0 = xs[0].shape();  // by value: node creation below may move the arena
  const std::size_t rank = s0.size();
  require(axis >= 0 && static_cast<std::size_t>(axis) < rank, "concat axis out of range");
  Shape out_shape = s0;
  int total = 0;
  for (const Var& x : xs) {
    require(x.tape == t, "vars from different tapes");
    require(x.shape().size() == rank, "concat rank mismatch");
    for (std::size_t d = 0; d < rank; ++d)
      if (d != static_cast<std::size_t>(axis))
        require(x.shape()[d] == s0[d], "concat shape mismatch");
    total += x.shape()[static_cast<std::size_t>(axis)];
  }
  out_shape[static_cast<std::size_t>(axis)] = total;
  Var y = t->make(out_shape, nullptr);

  std::size_t outer = 1, inner = 1;
  for (int d = 0; d < axis; ++d) outer *= static_cast<std::size_t>(s0[static_cast<std::size_t>(d)]);
  for (std::size_t d = static_cast<std::size_t>(axis) + 1; d < rank; ++d)
    inner *= static_cast<std::size_t>(s0[d]);

  auto idxs = std::make_shared<std::vector<int>>();
  auto lens = std::make_shared<std::vector<int>>();
  for (const Var& x : xs) {
    idxs->push_back(x.idx);
    lens->push_back(x.shape()[static_cast<std::size_t>(axis)]);
  }
  auto& yv = t->node(y.idx).v;
  {
    std::size_t off = 0;
    for (std::size_t xi = 0; xi < xs.size(); ++xi) {
      const auto& src = xs[xi].val();
      const std::size_t block = static_cast<std::size_t>((*lens)[xi]) * inner;
      for (std::size_t o = 0; o < outer; ++o)
        for (std::size_t i = 0; i < block; ++i)
          yv[o * static_cast<std::size_t>(total) * inner + off + i] = src[o * block + i];
      off += block;
    }
  }
  const int yi = y.idx;
  const std::size_t total_inner = static_cast<std::size_t>(total) * inner;
  t->node(y.idx).back = [t, yi, idxs, lens, outer, inner, total_inner] {
    const auto& g = t->node(yi).g;
    std::size_t off = 0;
    for (std::size_t xi = 0; xi < idxs->size(); ++xi) {
      auto& ag = t->node((*idxs)[xi]).g;
      const std::size_t block = static_cast<std::size_t>((*lens)[xi]) * inner;
      for (std::size_t o = 0; o < outer; ++o)
        for (std::size_t i = 0; i < block; ++i)
          ag[o * block + i] += g[o * total_inner + off + i];
      off += block;
    }
  };
  return y;
}

Var slice(Var a, int axis, int start, int len) {
  const Shape s = a.shape();  // by value: node creation below may move the arena
  require(axis >= 0 && static_cast<std::size_t>(axis) < s.size(), "slice axis out of range");
  require(start >= 0 && len > 0 && start + len <= s[static_cast<std::size_t>(axis)],
          "slice range out of bounds");
  Shape out_shape = s;
  out_shape[static_cast<std::size_t>(axis)] = len;
  Tape* t = a.tape;
  Var y = t->make(out_shape, nullptr);

  std::size_t outer = 1, inner = 1;
  for (int d = 0; d < axis; ++d) outer *= static_cast<std::size_t>(s[static_cast<std::size_t>(d)]);
  for (std::size_t d = static_cast<std::size_t>(axis) + 1; d < s.size(); ++d)
    inner *= static_cast<std::size_t>(s[d]);
  const std::size_t src_axis = static_cast<std::size_t>(s[static_cast<std::size_t>(axis)]);

  auto& yv = t->node(y.idx).v;
  const auto& av = a.val();
  for (std::size_t o = 0; o < outer; ++o)
    for (int j = 0; j < len; ++j)
      for (std::size_t i = 0; i < inner; ++i)
        yv[(o * static_cast<std::size_t>(len) + static_cast<std::size_t>(j)) * inner + i] =
            av[(o * src_axis + static_cast<std::size_t>(start + j)) * inner + i];
  const int ai = a.idx, yi = y.idx;
  t->node(y.idx).back = [t, ai, yi, outer, inner, len, start, src_axis] {
    const auto& g = t->node(yi).g;
    auto& ag = t->node(ai).g;
    for (std::size_t o = 0; o < outer; ++o)
      for (int j = 0; j < len; ++j)
        for (std::size_t i = 0; i < inner; ++i)
          ag[(o * src_axis + static_cast<std::size_t>(start + j)) * inner + i] +=
              g[(o * static_cast<std::size_t>(len) + static_cast<std::size_t>(j)) * inner + i];
  };
  return y;
}

// ---------------------------------------------------------------- activations

Var softmax_lastdim(Var a) {
  const Shape& s = a.shape();
  require(!s.empty(), "softmax on scalar");
  const std::size_t L = static_cast<std::size_t>(s.back());
  const std::size_t rows = a.size() / L;
  Tape* t = a.tape;
  Var y = t->make(s, nullptr);
  auto& yv = t->node(y.idx).v;
  const auto& av = a.val();
  for (std::size_t r = 0; r < rows; ++r) {
    const double* x = av.data() + r * L;
    double* o = yv.data() + r * L;
    double mx = x[0];
    for (std::size_t i = 1; i < L; ++i)
      if (x[i] > mx) mx = x[i];
    double sum = 0.0;
    for (std::size_t i = 0; i < L; ++i) {
      o[i] = std::exp(x[i] - mx);
      sum += o[i];
    }
    for (std::size_t i = 0; i < L; ++i) o[i] /= sum;
  }
  const int ai = a.idx, yi = y.idx;
  t->node(y.idx).back = [t, ai, yi, rows, L] {
    const auto& g = t->node(yi).g;
    const auto& yv2 = t->node(yi).v;
    auto& ag = t->node(ai).g;
    for (std::size_t r = 0; r < rows; ++r) {
      const double* gr = g.data() + r * L;
      const double* yr = yv2.data() + r * L;
      double dot = 0.0;
      for (std::size_t i = 0; i < L; ++i) dot += gr[i] * yr[i];
      for (std::size_t i = 0; i < L; ++i) ag[r * L + i] += yr[i] * (gr[i] - dot);
    }
  };
  return y;
}

Var layernorm_lastdim(Var a, Var gamma, Var beta, double eps) {
  const Shape& s = a.shape();
  require(!s.empty(), "layernorm on scalar");
  const std::size_t L = static_cast<std::size_t>(s.back());
  require(gamma.shape() == Shape{static_cast<int>(L)} && beta.shape() == Shape{static_cast<int>(L)},
          "layernorm gamma/beta shape");
  const std::size_t rows = a.size() / L;
  Tape* t = a.tape;
  Var y = t->make(s, nullptr);

  auto xhat = std::make_shared<std::vector<double>>(a.size());
  auto inv_sd = std::make_shared<std::vector<double>>(rows);
  auto& yv = t->node(y.idx).v;
  const auto& av = a.val();
  const auto& gv = gamma.val();
  const auto& bv = beta.val();
  for (std::size_t r = 0; r < rows; ++r) {
    const double* x = av.data() + r * L;
    double mean = 0.0;
    for (std::size_t i = 0; i < L; ++i) mean += x[i];
    mean /= static_cast<double>(L);
    double var = 0.0;
    for (std::size_t i = 0; i < L; ++i) var += (x[i] - mean) * (x[i] - mean);
    var /= static_cast<double>(L);
    const double isd = 1.0 / std::sqrt(var + eps);
    (*inv_sd)[r] = isd;
    for (std::size_t i = 0; i < L; ++i) {
      const double xh = (x[i] - mean) * isd;
      (*xhat)[r * L + i] = xh;
      yv[r * L + i] = gv[i] * xh + bv[i];
    }
  }
  const int ai = a.idx, gi = gamma.idx, bi = beta.idx, yi = y.idx;
  t->node(y.idx).back = [t, ai, gi, bi, yi, rows, L, xhat, inv_sd] {
    const auto& g = t->node(yi).g;
    const auto& gv2 = t->node(gi).v;
    auto& ag = t->node(ai).g;
    auto& gg = t->node(gi).g;
    auto& bg = t->node(bi).g;
    for (std::size_t r = 0; r < rows; ++r) {
      const double* gr = g.data() + r * L;
      const double* xh = xhat->data() + r * L;
      double mean_dxhat = 0.0, mean_dxhat_xhat = 0.0;
      for (std::size_t i = 0; i < L; ++i) {
        const double dxh = gr[i] * gv2[i];
        mean_dxhat += dxh;
        mean_dxhat_xhat += dxh * xh[i];
        gg[i] += gr[i] * xh[i];
        bg[i] += gr[i];
      }
      mean_dxhat /= static_cast<double>(L);
      mean_dxhat_xhat /= static_cast<double>(L);
      const double isd = (*inv_sd)[r];
      for (std::size_t i = 0; i < L; ++i) {
        const double dxh = gr[i] * gv2[i];
        ag[r * L + i] += isd * (dxh - mean_dxhat - xh[i] * mean_dxhat_xhat);
      }
    }
  };
  return y;
}

// --------------------------------------------------------------- convolutions

Var conv2d(Var x, Var w, Var b, int stride, int pad_h, int pad_w, Pad mode, int groups) {
  const Shape& xs = x.shape();
  const Shape& ws = w.shape();
  require(xs.size() == 3 && ws.size() == 4, "conv2d expects x [C,H,W], w [O,I,kh,kw]");
  const int cin = xs[0], H = xs[1], W = xs[2];
  const int cout = ws[0], cin_g = ws[1], kh = ws[2], kw = ws[3];
  require(groups >= 1 && cin % groups == 0 && cout % groups == 0, "conv2d groups");
  require(cin / groups == cin_g, "conv2d weight in-channels");
  require(stride >= 1, "conv2d stride");
  const bool has_bias = b.valid();
  if (has_bias) require(b.shape() == Shape{cout}, "conv2d bias shape");
  const int Ho = (H + 2 * pad_h - kh) / stride + 1;
  const int Wo = (W + 2 * pad_w - kw) / stride + 1;
  require(Ho > 0 && Wo > 0, "conv2d output would be empty");

  Tape* t = x.tape;
  Var y = t->make({cout, Ho, Wo}, nullptr);
  auto& yv = t->node(y.idx).v;
  const auto& xv = x.val();
  const auto& wv = w.val();
  const int cpg_out = cout / groups;

  auto col_index = [W, mode](int c) -> int {
    if (c >= 0 && c < W) return c;
    if (mode == Pad::circular_lon) return ((c % W) + W) % W;
    return -1;
  };

  for (int oc = 0; oc < cout; ++oc) {
    const int g0 = (oc / cpg_out) * cin_g;  // first input channel of this group
    const double bias = has_bias ? b.val()[static_cast<std::size_t>(oc)] : 0.0;
    for (int oy = 0; oy < Ho; ++oy) {
      for (int ox = 0; ox < Wo; ++ox) {
        double acc = bias;
        for (int ic = 0; ic < cin_g; ++ic) {
          for (int ky = 0; ky < kh; ++ky) {
            const int iy = oy * stride - pad_h + ky;
            if (iy < 0 || iy >= H) continue;
            for (int kx = 0; kx < kw; ++kx) {
              const int ix = col_index(ox * stride - pad_w + kx);
              if (ix < 0) continue;
              acc += xv[(static_cast<std::size_t>(g0 + ic) * H + iy) * W + ix] *
                     wv[((static_cast<std::size_t>(oc) * cin_g + ic) * kh + ky) * kw + kx];
            }
          }
        }
        yv[(static_cast<std::size_t>(oc) * Ho + oy) * Wo + ox] = acc;
      }
    }
  }

  const int xi = x.idx, wi = w.idx, bi = has_bias ? b.idx : -1, yi = y.idx;
  t->node(y.idx).back = [t, xi, wi, bi, yi, cin_g, H, W, cout, kh, kw, Ho, Wo, stride, pad_h,
                         pad_w, mode, cpg_out, col_index] {
    const auto& g = t->node(yi).g;
    const auto& xv2 = t->node(xi).v;
    const auto& wv2 = t->node(wi).v;
    auto& xg = t->node(xi).g;
    auto& wg = t->node(wi).g;
    for (int oc = 0; oc < cout; ++oc) {
      const int g0 = (oc / cpg_out) * cin_g;
      for (int oy = 0; oy < Ho; ++oy) {
        for (int ox = 0; ox < Wo; ++ox) {
          const double go = g[(static_cast<std::size_t>(oc) * Ho + oy) * Wo + ox];
          if (bi >= 0) t->node(bi).g[static_cast<std::size_t>(oc)] += go;
          for (int ic = 0; ic < cin_g; ++ic) {
            for (int ky = 0; ky < kh; ++ky) {
              const int iy = oy * stride - pad_h + ky;
              if (iy < 0 || iy >= H) continue;
              for (int kx = 0; kx < kw; ++kx) {
                const int ix = col_index(ox * stride - pad_w + kx);
                if (ix < 0) continue;
                const std::size_t xoff = (static_cast<std::size_t>(g0 + ic) * H + iy) * W + ix;
                const std::size_t woff =
                    ((static_cast<std::size_t>(oc) * cin_g + ic) * kh + ky) * kw + kx;
                xg[xoff] += go * wv2[woff];
                wg[woff] += go * xv2[xoff];
              }
            }
          }
        }
      }
    }
  };
  return y;
}

Var conv3d(Var x, Var w, Var b, int pad_h, int pad_w) {
  const Shape& xs = x.shape();
  const Shape& ws = w.shape();
  require(xs.size() == 4 && ws.size() == 5, "conv3d expects x [C,T,H,W], w [O,I,kt,kh,kw]");
  const int cin = xs[0], T = xs[1], H = xs[2], W = xs[3];
  const int cout = ws[0], kt = ws[2], kh = ws[3], kw = ws[4];
  require(ws[1] == cin, "conv3d weight in-channels");
  require(kt <= T, "conv3d time kernel longer than sequence");
  const bool has_bias = b.valid();
  if (has_bias) require(b.shape() == Shape{cout}, "conv3d bias shape");
  const int To = T - kt + 1;
  const int Ho = H + 2 * pad_h - kh + 1;
  const int Wo = W + 2 * pad_w - kw + 1;
  require(Ho > 0 && Wo > 0, "conv3d output would be empty");

  Tape* t = x.tape;
  Var y = t->make({cout, To, Ho, Wo}, nullptr);
  auto& yv = t->node(y.idx).v;
  const auto& xv = x.val();
  const auto& wv = w.val();

  for (int oc = 0; oc < cout; ++oc) {
    const double bias = has_bias ? b.val()[static_cast<std::size_t>(oc)] : 0.0;
    for (int ot = 0; ot < To; ++ot)
      for (int oy = 0; oy < Ho; ++oy)
        for (int ox = 0; ox < Wo; ++ox) {
          double acc = bias;
          for (int ic = 0; ic < cin; ++ic)
            for (int tt = 0; tt < kt; ++tt)
              for (int ky = 0; ky < kh; ++ky) {
                const int iy = oy - pad_h + ky;
                if (iy < 0 || iy >= H) continue;
                for (int kx = 0; kx < kw; ++kx) {
                  const int ix = ox - pad_w + kx;
                  if (ix < 0 || ix >= W) continue;
                  acc += xv[((static_cast<std::size_t>(ic) * T + ot + tt) * H + iy) * W + ix] *
                         wv[(((static_cast<std::size_t>(oc) * cin + ic) * kt + tt) * kh + ky) * kw +
                            kx];
                }
              }
          yv[((static_cast<std::size_t>(oc) * To + ot) * Ho + oy) * Wo + ox] = acc;
        }
  }

  const int xi = x.idx, wi = w.idx, bi = has_bias ? b.idx : -1, yi = y.idx;
  t->node(y.idx).back = [t, xi, wi, bi, yi, cin, T, H, W, cout, kt, kh, kw, To, Ho, Wo, pad_h,
                         pad_w] {
    const auto& g = t->node(yi).g;
    const auto& xv2 = t->node(xi).v;
    const auto& wv2 = t->node(wi).v;
    auto& xg = t->node(xi).g;
    auto& wg = t->node(wi).g;
    for (int oc = 0; oc < cout; ++oc)
      for (int ot = 0; ot < To; ++ot)
        for (int oy = 0; oy < Ho; ++oy)
          for (int ox = 0; ox < Wo; ++ox) {
            const double go = g[((static_cast<std::size_t>(oc) * To + ot) * Ho + oy) * Wo + ox];
            if (bi >= 0) t->node(bi).g[static_cast<std::size_t>(oc)] += go;
            for (int ic = 0; ic < cin; ++ic)
              for (int tt = 0; tt < kt; ++tt)
                for (int ky = 0; ky < kh; ++ky) {
                  const int iy = oy - pad_h + ky;
                  if (iy < 0 || iy >= H) continue;
                  for (int kx = 0; kx < kw; ++kx) {
                    const int ix = ox - pad_w + kx;
                    if (ix < 0 || ix >= W) continue;
                    const std::size_t xoff =
                        ((static_cast<std::size_t>(ic) * T + ot + tt) * H + iy) * W + ix;
                    const std::size_t woff =
                        (((static_cast<std::size_t>(oc) * cin + ic) * kt + tt) * kh + ky) * kw +
                        kx;
                    xg[xoff] += go * wv2[woff];
                    wg[woff] += go * xv2[xoff];
                  }
                }
          }
  };
  return y;
}

Var maxpool2d(Var x) {
  const Shape& xs = x.shape();
  require(xs.size() == 3, "maxpool2d expects [C,H,W]");
  const int C = xs[0], H = xs[1], W = xs[2];
  require(H % 2 == 0 && W % 2 == 0, "maxpool2d needs even dims");
  const int Ho = H / 2, Wo = W / 2;
  Tape* t = x.tape;
  Var y = t->make({C, Ho, Wo}, nullptr);
  auto arg = std::make_shared<std::vector<std::size_t>>(y.size());
  auto& yv = t->node(y.idx).v;
  const auto& xv = x.val();
  for (int c = 0; c < C; ++c)
    for (int oy = 0; oy < Ho; ++oy)
      for (int ox = 0; ox < Wo; ++ox) {
        std::size_t best = (static_cast<std::size_t>(c) * H + 2 * oy) * W + 2 * ox;
        double bv = xv[best];
        for (int dy = 0; dy < 2; ++dy)
          for (int dx = 0; dx < 2; ++dx) {
            const std::size_t off =
                (static_cast<std::size_t>(c) * H + 2 * oy + dy) * W + 2 * ox + dx;
            if (xv[off] > bv) {
              bv = xv[off];
              best = off;
            }
          }
        const std::size_t o = (static_cast<std::size_t>(c) * Ho + oy) * Wo + ox;
        yv[o] = bv;
        (*arg)[o] = best;
      }
  const int xi = x.idx, yi = y.idx;
  t->node(y.idx).back = [t, xi, yi, arg] {
    const auto& g = t->node(yi).g;
    auto& xg = t->node(xi).g;
    for (std::size_t o = 0; o < g.size(); ++o) xg[(*arg)[o]] += g[o];
  };
  return y;
}

Var pixel_shuffle(Var x, int r) {
  const Shape& xs = x.shape();
  require(xs.size() == 3, "pixel_shuffle expects [C*r*r,H,W]");
  require(r >= 1 && xs[0] % (r * r) == 0, "pixel_shuffle channel count");
  const int C = xs[0] / (r * r), H = xs[1], W = xs[2];
  Tape* t = x.tape;
  Var y = t->make({C, H * r, W * r}, nullptr);
  auto& yv = t->node(y.idx).v;
  const auto& xv = x.val();
  for (int c = 0; c < C; ++c)
    for (int yy = 0; yy < H; ++yy)
      for (int xx = 0; xx < W; ++xx)
        for (int dy = 0; dy < r; ++dy)
          for (int dx = 0; dx < r; ++dx)
            yv[(static_cast<std::size_t>(c) * H * r + yy * r + dy) * (W * r) + xx * r + dx] =
                xv[(static_cast<std::size_t>(c * r * r + dy * r + dx) * H + yy) * W + xx];
  const int xi = x.idx, yi = y.idx;
  t->node(y.idx).back = [t, xi, yi, C, H, W, r] {
    const auto& g = t->node(yi).g;
    auto& xg = t->node(xi).g;
    for (int c = 0; c < C; ++c)
      for (int yy = 0; yy < H; ++yy)
        for (int xx = 0; xx < W; ++xx)
          for (int dy = 0; dy < r; ++dy)
            for (int dx = 0; dx < r; ++dx)
              xg[(static_cast<std::size_t>(c * r * r + dy * r + dx) * H + yy) * W + xx] +=
                  g[(static_cast<std::size_t>(c) * H * r + yy * r + dy) * (W * r) + xx * r + dx];
  };
  return y;
}

// ----------------------------------------------------------------- reductions

Var sum_all(Var a) {
  Tape* t = a.tape;
  Var y = t->make({1}, nullptr);
  double acc = 0.0;
  for (double v : a.val()) acc += v;
  t->node(y.idx).v[0] = acc;
  const int ai = a.idx, yi = y.idx;
  t->node(y.idx).back = [t, ai, yi] {
    const double g = t->node(yi).g[0];
    auto& ag = t->node(ai).g;
    for (double& v : ag) v += g;
  };
  return y;
}

Var mean_all(Var a) { return scale(sum_all(a), 1.0 / static_cast<double>(a.size())); }

Var tile_spatial(Var a, int h, int w) {
  require(a.shape().size() == 1, "tile_spatial expects [C]");
  const int C = a.shape()[0];
  Tape* t = a.tape;
  Var y = t->make({C, h, w}, nullptr);
  auto& yv = t->node(y.idx).v;
  const auto& av = a.val();
  const std::size_t hw = static_cast<std::size_t>(h) * w;
  for (int c = 0; c < C; ++c)
    for (std::size_t i = 0; i < hw; ++i) yv[static_cast<std::size_t>(c) * hw + i] = av[c];
  const int ai = a.idx, yi = y.idx;
  t->node(y.idx).back = [t, ai, yi, C, hw] {
    const auto& g = t->node(yi).g;
    auto& ag = t->node(ai).g;
    for (int c = 0; c < C; ++c) {
      double acc = 0.0;
      for (std::size_t i = 0; i < hw; ++i) acc += g[static_cast<std::size_t>(c) * hw + i];
      ag[c] += acc;
    }
  };
  return y;
}

}  // namespace ovsal::nn
