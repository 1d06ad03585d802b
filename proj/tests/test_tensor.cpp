#include "ovsal/tensor.hpp"

#include <cmath>
#include <functional>

#include "doctest.h"
#include "ovsal/errors.hpp"
#include "ovsal/rng.hpp"

using namespace ovsal;
using namespace ovsal::nn;

namespace {

std::vector<double> rnd(const Shape& s, std::uint64_t seed, double lo = -1.5, double hi = 1.5) {
  Rng rng(seed);
  std::vector<double> v(numel(s));
  for (auto& x : v) x = rng.uniform(lo, hi);
  return v;
}

// scalarize: weighted sum with fixed pseudo-random weights so output grads
// are non-uniform
Var to_scalar(Tape& t, Var y, std::uint64_t seed = 999) {
  Var w = t.constant(y.shape(), rnd(y.shape(), seed, -1.0, 1.0));
  return sum_all(mul(y, w));
}

using Builder = std::function<Var(Tape&, const std::vector<Var>&)>;

double eval_at(const std::vector<Shape>& shapes, const std::vector<std::vector<double>>& vals,
               const Builder& build) {
  Tape t;
  std::vector<Var> ins;
  for (std::size_t i = 0; i < shapes.size(); ++i) ins.push_back(t.leaf(shapes[i], vals[i]));
  return build(t, ins).val()[0];
}

// central differences, h = 1e-5, relative tolerance 1e-4 with unit floor
void gradcheck(const std::vector<Shape>& shapes, std::vector<std::vector<double>> vals,
               const Builder& build) {
  Tape t;
  std::vector<Var> ins;
  for (std::size_t i = 0; i < shapes.size(); ++i) ins.push_back(t.leaf(shapes[i], vals[i]));
  Var out = build(t, ins);
  REQUIRE(out.size() == 1);
  t.backward(out);

  const double h = 1e-5;
  for (std::size_t i = 0; i < shapes.size(); ++i) {
    for (std::size_t j = 0; j < vals[i].size(); ++j) {
      const double keep = vals[i][j];
      vals[i][j] = keep + h;
      const double up = eval_at(shapes, vals, build);
      vals[i][j] = keep - h;
      const double dn = eval_at(shapes, vals, build);
      vals[i][j] = keep;
      const double fd = (up - dn) / (2.0 * h);
      const double ad = ins[i].grad()[j];
      const double tol = 1e-4 * std::max({1.0, std::abs(ad), std::abs(fd)});
      CHECK_MESSAGE(std::abs(ad - fd) <= tol,
                    "input " << i << " elem " << j << ": ad=" << ad << " fd=" << fd);
    }
  }
}

}  // namespace

TEST_CASE("elementwise op gradients") {
  gradcheck({{2, 3}, {2, 3}}, {rnd({2, 3}, 1), rnd({2, 3}, 2)},
            [](Tape& t, const std::vector<Var>& in) { return to_scalar(t, add(in[0], in[1])); });
  gradcheck({{2, 3}, {2, 3}}, {rnd({2, 3}, 3), rnd({2, 3}, 4)},
            [](Tape& t, const std::vector<Var>& in) { return to_scalar(t, sub(in[0], in[1])); });
  gradcheck({{2, 3}, {2, 3}}, {rnd({2, 3}, 5), rnd({2, 3}, 6)},
            [](Tape& t, const std::vector<Var>& in) { return to_scalar(t, mul(in[0], in[1])); });
  gradcheck({{2, 3}, {2, 3}}, {rnd({2, 3}, 7), rnd({2, 3}, 8, 0.5, 1.5)},
            [](Tape& t, const std::vector<Var>& in) {
              return to_scalar(t, divide(in[0], in[1]));
            });
  gradcheck({{5}}, {rnd({5}, 9)}, [](Tape& t, const std::vector<Var>& in) {
    return to_scalar(t, scale(in[0], -2.25));
  });
  gradcheck({{5}}, {rnd({5}, 10)}, [](Tape& t, const std::vector<Var>& in) {
    return to_scalar(t, add_scalar(in[0], 0.75));
  });
  gradcheck({{6}}, {rnd({6}, 11, 0.2, 1.8)},
            [](Tape& t, const std::vector<Var>& in) { return to_scalar(t, log_(in[0])); });
  gradcheck({{6}}, {rnd({6}, 12, 0.2, 1.8)},
            [](Tape& t, const std::vector<Var>& in) { return to_scalar(t, sqrt_(in[0])); });
  // keep |x| away from the abs kink
  auto away = rnd({6}, 13);
  for (auto& v : away) v = v < 0 ? v - 0.3 : v + 0.3;
  gradcheck({{6}}, {away},
            [](Tape& t, const std::vector<Var>& in) { return to_scalar(t, abs_(in[0])); });
}

TEST_CASE("activation gradients") {
  gradcheck({{7}}, {rnd({7}, 20, -3.0, 3.0)},
            [](Tape& t, const std::vector<Var>& in) { return to_scalar(t, sigmoid(in[0])); });
  gradcheck({{7}}, {rnd({7}, 21, -2.0, 2.0)},
            [](Tape& t, const std::vector<Var>& in) { return to_scalar(t, tanh_(in[0])); });
  gradcheck({{7}}, {rnd({7}, 22, -2.5, 2.5)},
            [](Tape& t, const std::vector<Var>& in) { return to_scalar(t, gelu(in[0])); });
  gradcheck({{3, 4}}, {rnd({3, 4}, 23, -2.0, 2.0)}, [](Tape& t, const std::vector<Var>& in) {
    return to_scalar(t, softmax_lastdim(in[0]));
  });
  gradcheck({{3, 5}, {5}, {5}},
            {rnd({3, 5}, 24), rnd({5}, 25, 0.5, 1.5), rnd({5}, 26, -0.3, 0.3)},
            [](Tape& t, const std::vector<Var>& in) {
              return to_scalar(t, layernorm_lastdim(in[0], in[1], in[2]));
            });
}

TEST_CASE("softmax rows sum to one and match direct evaluation") {
  Tape t;
  Var x = t.leaf({4, 6}, rnd({4, 6}, 30, -4.0, 4.0));
  Var y = softmax_lastdim(x);
  for (int r = 0; r < 4; ++r) {
    double s = 0.0;
    for (int c = 0; c < 6; ++c) s += y.val()[r * 6 + c];
    CHECK(s == doctest::Approx(1.0).epsilon(1e-12));
  }
  // equal logits give exactly uniform rows
  Var eq = t.leaf({1, 5}, std::vector<double>(5, 0.7));
  Var u = softmax_lastdim(eq);
  for (int c = 0; c < 5; ++c) CHECK(u.val()[c] == 0.2);
}

TEST_CASE("matmul values and gradients") {
  Tape t;
  Var a = t.leaf({2, 2}, {1.0, 2.0, 3.0, 4.0});
  Var b = t.leaf({2, 2}, {5.0, 6.0, 7.0, 8.0});
  Var y = matmul(a, b);
  CHECK(y.val() == std::vector<double>{19.0, 22.0, 43.0, 50.0});

  gradcheck({{3, 4}, {4, 2}}, {rnd({3, 4}, 40), rnd({4, 2}, 41)},
            [](Tape& tt, const std::vector<Var>& in) {
              return to_scalar(tt, matmul(in[0], in[1]));
            });
  gradcheck({{2, 3}, {3}}, {rnd({2, 3}, 42), rnd({3}, 43)},
            [](Tape& tt, const std::vector<Var>& in) {
              return to_scalar(tt, add_bias(in[0], in[1]));
            });
}

TEST_CASE("shape op gradients") {
  gradcheck({{2, 6}}, {rnd({2, 6}, 50)}, [](Tape& t, const std::vector<Var>& in) {
    return to_scalar(t, reshape(in[0], {3, 4}));
  });
  gradcheck({{2, 3, 4}}, {rnd({2, 3, 4}, 51)}, [](Tape& t, const std::vector<Var>& in) {
    return to_scalar(t, permute(in[0], {2, 0, 1}));
  });
  gradcheck({{2, 3}, {2, 2}}, {rnd({2, 3}, 52), rnd({2, 2}, 53)},
            [](Tape& t, const std::vector<Var>& in) {
              return to_scalar(t, concat({in[0], in[1]}, 1));
            });
  gradcheck({{3, 5}}, {rnd({3, 5}, 54)}, [](Tape& t, const std::vector<Var>& in) {
    return to_scalar(t, slice(in[0], 1, 1, 3));
  });
  gradcheck({{4}}, {rnd({4}, 55)}, [](Tape& t, const std::vector<Var>& in) {
    return to_scalar(t, tile_spatial(in[0], 2, 3));
  });
  gradcheck({{3, 3}}, {rnd({3, 3}, 56)},
            [](Tape& t, const std::vector<Var>& in) { return mean_all(in[0]); });
}

TEST_CASE("permute round trip and values") {
  Tape t;
  Var x = t.leaf({2, 3}, {1, 2, 3, 4, 5, 6});
  Var y = permute(x, {1, 0});
  CHECK(y.shape() == Shape{3, 2});
  CHECK(y.val() == std::vector<double>{1, 4, 2, 5, 3, 6});
  Var back = permute(y, {1, 0});
  CHECK(back.val() == x.val());

  Var c = concat({x, x}, 0);
  CHECK(c.shape() == Shape{4, 3});
  Var s = slice(c, 0, 2, 2);
  CHECK(s.val() == x.val());
}

TEST_CASE("conv2d gradients for every padding flavor") {
  // zero padding, stride 1
  gradcheck({{2, 4, 4}, {3, 2, 3, 3}, {3}},
            {rnd({2, 4, 4}, 60), rnd({3, 2, 3, 3}, 61), rnd({3}, 62)},
            [](Tape& t, const std::vector<Var>& in) {
              return to_scalar(t, conv2d(in[0], in[1], in[2], 1, 1, 1, Pad::zero));
            });
  // circular longitude padding
  gradcheck({{2, 3, 4}, {2, 2, 3, 3}, {2}},
            {rnd({2, 3, 4}, 63), rnd({2, 2, 3, 3}, 64), rnd({2}, 65)},
            [](Tape& t, const std::vector<Var>& in) {
              return to_scalar(t, conv2d(in[0], in[1], in[2], 1, 1, 1, Pad::circular_lon));
            });
  // strided patch embedding, no padding, no bias
  gradcheck({{1, 4, 8}, {3, 1, 2, 2}}, {rnd({1, 4, 8}, 66), rnd({3, 1, 2, 2}, 67)},
            [](Tape& t, const std::vector<Var>& in) {
              return to_scalar(t, conv2d(in[0], in[1], Var{}, 2, 0, 0, Pad::zero));
            });
  // depthwise (groups = channels)
  gradcheck({{3, 4, 4}, {3, 1, 3, 3}, {3}},
            {rnd({3, 4, 4}, 68), rnd({3, 1, 3, 3}, 69), rnd({3}, 70)},
            [](Tape& t, const std::vector<Var>& in) {
              return to_scalar(t, conv2d(in[0], in[1], in[2], 1, 1, 1, Pad::circular_lon, 3));
            });
}

TEST_CASE("conv2d circular wrap reference values") {
  Tape t;
  Var x = t.leaf({1, 1, 4}, {1, 2, 3, 4});
  Var w = t.leaf({1, 1, 1, 3}, {1, 1, 1});
  Var yc = conv2d(x, w, Var{}, 1, 0, 1, Pad::circular_lon);
  CHECK(yc.val() == std::vector<double>{7, 6, 9, 8});
  Var yz = conv2d(x, w, Var{}, 1, 0, 1, Pad::zero);
  CHECK(yz.val() == std::vector<double>{3, 6, 9, 7});
}

TEST_CASE("conv3d collapses time and checks gradients") {
  Tape t;
  Var x = t.leaf({1, 3, 2, 2}, rnd({1, 3, 2, 2}, 75));
  Var w = t.leaf({2, 1, 3, 3, 3}, rnd({2, 1, 3, 3, 3}, 76));
  Var b = t.leaf({2}, rnd({2}, 77));
  Var y = conv3d(x, w, b, 1, 1);
  CHECK(y.shape() == Shape{2, 1, 2, 2});

  gradcheck({{2, 2, 2, 2}, {2, 2, 2, 3, 3}, {2}},
            {rnd({2, 2, 2, 2}, 78), rnd({2, 2, 2, 3, 3}, 79), rnd({2}, 80)},
            [](Tape& tt, const std::vector<Var>& in) {
              return to_scalar(tt, conv3d(in[0], in[1], in[2], 1, 1));
            });
}

TEST_CASE("maxpool matches a blockwise max oracle and backprops to the argmax") {
  Tape t;
  // distinct values so the argmax is unambiguous
  std::vector<double> vals(2 * 4 * 4);
  Rng rng(85);
  for (std::size_t i = 0; i < vals.size(); ++i) vals[i] = 0.1 * static_cast<double>(i);
  for (std::size_t i = vals.size() - 1; i > 0; --i) std::swap(vals[i], vals[rng.below(i + 1)]);
  Var x = t.leaf({2, 4, 4}, vals);
  Var y = maxpool2d(x);
  CHECK(y.shape() == Shape{2, 2, 2});
  for (int c = 0; c < 2; ++c)
    for (int oy = 0; oy < 2; ++oy)
      for (int ox = 0; ox < 2; ++ox) {
        double want = -1e30;
        for (int dy = 0; dy < 2; ++dy)
          for (int dx = 0; dx < 2; ++dx)
            want = std::max(want, vals[(c * 4 + 2 * oy + dy) * 4 + 2 * ox + dx]);
        CHECK(y.val()[(c * 2 + oy) * 2 + ox] == want);
      }

  gradcheck({{2, 4, 4}}, {vals}, [](Tape& tt, const std::vector<Var>& in) {
    return to_scalar(tt, maxpool2d(in[0]));
  });
}

TEST_CASE("pixel shuffle mapping and gradient") {
  Tape t;
  // C=1, r=2: channels {0,1,2,3} interleave into a 2x2 block
  Var x = t.leaf({4, 1, 2}, {0, 1, 10, 11, 20, 21, 30, 31});
  Var y = pixel_shuffle(x, 2);
  CHECK(y.shape() == Shape{1, 2, 4});
  CHECK(y.val() == std::vector<double>{0, 10, 1, 11, 20, 30, 21, 31});

  gradcheck({{8, 2, 3}}, {rnd({8, 2, 3}, 90)}, [](Tape& tt, const std::vector<Var>& in) {
    return to_scalar(tt, pixel_shuffle(in[0], 2));
  });
}

TEST_CASE("gradients accumulate when a var is used twice") {
  Tape t;
  Var x = t.leaf({3}, {1.0, 2.0, 3.0});
  Var y = sum_all(add(x, x));
  t.backward(y);
  for (int i = 0; i < 3; ++i) CHECK(x.grad()[i] == 2.0);

  gradcheck({{3}}, {rnd({3}, 95)}, [](Tape& tt, const std::vector<Var>& in) {
    return sum_all(mul(in[0], in[0]));
  });
}

TEST_CASE("shape validation throws") {
  Tape t;
  Var a = t.leaf({2, 3});
  Var b = t.leaf({3, 2});
  CHECK_THROWS_AS(add(a, b), InvalidInputError);
  CHECK_THROWS_AS(matmul(a, a), InvalidInputError);
  CHECK_THROWS_AS(reshape(a, {4, 2}), InvalidInputError);
  CHECK_THROWS_AS(slice(a, 1, 2, 3), InvalidInputError);
  CHECK_THROWS_AS(t.backward(a), InvalidInputError);
}
