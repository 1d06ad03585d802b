#pragma once
// Minimal fp64 reverse-mode autograd on a tape. Nodes are created in
// topological order, so backward is a reverse sweep over creation order.
// Dense linear algebra (matmul) is backed by Eigen; everything else is
// straightforward loops — model sizes here are tiny by design.

#include <cstdint>
#include <functional>
#include <string>
#include <vector>

namespace ovsal::nn {

using Shape = std::vector<int>;

std::size_t numel(const Shape& s);
std::string shape_str(const Shape& s);

class Tape;

struct Var {
  Tape* tape = nullptr;
  int idx = -1;

  bool valid() const { return tape != nullptr && idx >= 0; }
  const Shape& shape() const;
  const std::vector<double>& val() const;
  std::vector<double>& grad() const;
  std::size_t size() const { return numel(shape()); }
};

class Tape {
 public:
  struct Node {
    Shape shape;
    std::vector<double> v;
    std::vector<double> g;
    std::function<void()> back;  // empty for leaves/constants
  };

  Var leaf(Shape shape);  // zero-initialized
  Var leaf(Shape shape, const std::vector<double>& values);
  Var constant(Shape shape, const std::vector<double>& values) { return leaf(std::move(shape), values); }
  Var scalar(double v) { return leaf({1}, std::vector<double>{v}); }

  // Reverse sweep from a scalar output; grads accumulate into node.g.
  void backward(Var out);

  std::size_t n_nodes() const { return nodes_.size(); }
  Node& node(int i) { return nodes_[static_cast<std::size_t>(i)]; }
  const Node& node(int i) const { return nodes_[static_cast<std::size_t>(i)]; }

  Var make(Shape shape, std::function<void()> back);

  // Process-unique, never reused; lets caches keyed by tape detect staleness
  // even when a new Tape lands at a recycled address.
  std::uint64_t id() const { return id_; }

 private:
  static std::uint64_t next_id();

  std::vector<Node> nodes_;
  std::uint64_t id_ = next_id();
};

// elementwise, same shape
Var add(Var a, Var b);
Var sub(Var a, Var b);
Var mul(Var a, Var b);
Var divide(Var a, Var b);
Var scale(Var a, double c);
Var add_scalar(Var a, double c);
Var abs_(Var a);
Var log_(Var a);
Var sqrt_(Var a);
Var sigmoid(Var a);
Var tanh_(Var a);
Var gelu(Var a);  // exact erf form

// [m,k] x [k,n] -> [m,n]
Var matmul(Var a, Var b);
// a [..., C] + b [C]
Var add_bias(Var a, Var b);

Var reshape(Var a, Shape shape);
Var permute(Var a, const std::vector<int>& perm);
Var concat(const std::vector<Var>& xs, int axis);
Var slice(Var a, int axis, int start, int len);

Var softmax_lastdim(Var a);
// normalizes the last dim; gamma/beta shaped [last_dim]
Var layernorm_lastdim(Var a, Var gamma, Var beta, double eps = 1e-5);

enum class Pad { zero, circular_lon };  // circular wraps columns, zero-pads rows

// x [Cin,H,W], w [Cout,Cin/groups,kh,kw], optional b [Cout]
Var conv2d(Var x, Var w, Var b, int stride, int pad_h, int pad_w, Pad mode, int groups = 1);
// x [Cin,T,H,W], w [Cout,Cin,kt,kh,kw], optional b [Cout]; no time padding
Var conv3d(Var x, Var w, Var b, int pad_h, int pad_w);
// 2x2 stride-2 max pooling, dims must be even; ties take the first index
Var maxpool2d(Var x);
// [C*r*r, H, W] -> [C, H*r, W*r]
Var pixel_shuffle(Var x, int r);

Var sum_all(Var a);   // -> [1]
Var mean_all(Var a);  // -> [1]
// a [C] -> [C,h,w]
Var tile_spatial(Var a, int h, int w);

}  // namespace ovsal::nn
