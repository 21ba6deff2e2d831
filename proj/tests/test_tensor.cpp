#include <doctest.h>

#include <cmath>
#include <random>

#include "deltar/nn/tensor.hpp"
#include "fd_check.hpp"

using namespace deltar::nn;
using testutil::check_grads;
using testutil::project;
using testutil::rand_tensor;

TEST_CASE("tensor factories and accessors") {
  Tensor z = Tensor::zeros({2, 3});
  CHECK(z.numel() == 6);
  CHECK(z.data().isZero());
  CHECK_FALSE(z.requires_grad());
  CHECK_FALSE(z.has_grad());

  Tensor f = Tensor::full({4}, 2.5, true);
  CHECK(f.requires_grad());
  CHECK(f.data()[3] == 2.5);

  Tensor v = Tensor::from_vector({2, 2}, {1, 2, 3, 4});
  CHECK(v.data()[2] == 3.0);  // row-major
  CHECK(Tensor::scalar(7.0).item() == 7.0);

  CHECK_THROWS_AS(Tensor::from_vector({2, 2}, {1, 2, 3}), deltar::InvalidArgument);
  CHECK_THROWS_AS(Tensor::zeros({2, 0}), deltar::InvalidArgument);
  CHECK_THROWS_AS(v.item(), deltar::InvalidArgument);
  CHECK_THROWS_AS(v.grad(), deltar::InvalidArgument);
}

TEST_CASE("elementwise ops match central differences") {
  std::mt19937 rng(11);
  Tensor a = rand_tensor(rng, {3, 4});
  Tensor b = rand_tensor(rng, {3, 4});
  Tensor dir = rand_tensor(rng, {3, 4}, -1, 1, false);

  check_grads([&] { return project(add(a, b), dir); }, {a, b});
  check_grads([&] { return project(sub(a, b), dir); }, {a, b});
  check_grads([&] { return project(mul(a, b), dir); }, {a, b});
  check_grads([&] { return project(add_scalar(a, 0.75), dir); }, {a});
  check_grads([&] { return project(mul_scalar(a, -2.5), dir); }, {a});
  check_grads([&] { return project(square(a), dir); }, {a});
  // composite expression reusing an operand twice
  check_grads([&] { return project(mul(add(a, b), square(a)), dir); }, {a, b});

  CHECK_THROWS_AS(add(a, Tensor::zeros({4, 3})), deltar::InvalidArgument);
}

TEST_CASE("gelu, log and clamped sqrt gradients") {
  std::mt19937 rng(12);
  Tensor dir = rand_tensor(rng, {8}, -1, 1, false);

  Tensor g = Tensor::from_vector({8}, {-3.0, -1.5, -0.5, -0.01, 0.01, 0.5, 1.5, 3.0}, true);
  check_grads([&] { return project(gelu(g), dir); }, {g});
  CHECK(gelu(Tensor::scalar(0.0)).item() == 0.0);
  // gelu(x) -> x for large x, -> 0 for very negative x
  CHECK(gelu(Tensor::scalar(10.0)).item() == doctest::Approx(10.0).epsilon(1e-12));
  CHECK(std::abs(gelu(Tensor::scalar(-10.0)).item()) < 1e-12);

  Tensor p = rand_tensor(rng, {8}, 0.2, 3.0);
  check_grads([&] { return project(log_nat(p), dir); }, {p});
  CHECK_THROWS_AS(log_nat(Tensor::scalar(0.0)), deltar::InvalidArgument);
  CHECK_THROWS_AS(log_nat(Tensor::scalar(-1.0)), deltar::InvalidArgument);

  Tensor q = rand_tensor(rng, {8}, 0.5, 4.0);
  check_grads([&] { return project(sqrt_clamped(q, 1e-12), dir); }, {q});
  // at exactly zero the forward is 0 and the gradient is clamped, not infinite
  Tensor z = Tensor::scalar(0.0, true);
  Tensor s = sqrt_clamped(z, 1e-12);
  CHECK(s.item() == 0.0);
  backward(s);
  CHECK(z.grad()[0] == doctest::Approx(0.5 / std::sqrt(1e-12)));
  // negative inputs clamp to zero in the forward
  CHECK(sqrt_clamped(Tensor::scalar(-2.0), 1e-12).item() == 0.0);
}

TEST_CASE("shape ops are gradient-exact") {
  std::mt19937 rng(13);
  Tensor a = rand_tensor(rng, {2, 3, 4});

  SUBCASE("reshape") {
    Tensor dir = rand_tensor(rng, {6, 4}, -1, 1, false);
    check_grads([&] { return project(reshape(a, {6, 4}), dir); }, {a});
    CHECK_THROWS_AS(reshape(a, {5, 5}), deltar::InvalidArgument);
  }
  SUBCASE("permute") {
    Tensor p = permute(a, {2, 0, 1});
    CHECK(p.shape() == std::vector<int>{4, 2, 3});
    // spot-check the element mapping: p[i,j,k] == a[j,k,i]
    CHECK(p.data()[(1 * 2 + 1) * 3 + 2] == a.data()[(1 * 3 + 2) * 4 + 1]);
    Tensor dir = rand_tensor(rng, {4, 2, 3}, -1, 1, false);
    check_grads([&] { return project(permute(a, {2, 0, 1}), dir); }, {a});
    CHECK_THROWS_AS(permute(a, {0, 1}), deltar::InvalidArgument);
    CHECK_THROWS_AS(permute(a, {0, 0, 1}), deltar::InvalidArgument);
  }
  SUBCASE("permute round trip is identity") {
    Tensor back = permute(permute(a, {1, 2, 0}), {2, 0, 1});
    CHECK((back.data() - a.data()).lpNorm<Eigen::Infinity>() == 0.0);
  }
  SUBCASE("concat") {
    Tensor b = rand_tensor(rng, {2, 2, 4});
    Tensor dir = rand_tensor(rng, {2, 5, 4}, -1, 1, false);
    check_grads([&] { return project(concat({a, b}, 1), dir); }, {a, b});
    Tensor c = concat({a, b}, 1);
    CHECK(c.shape() == std::vector<int>{2, 5, 4});
    CHECK(c.data()[3 * 4 + 1] == b.data()[1]);  // first batch, row 3 = b row 0
    CHECK_THROWS_AS(concat({a, Tensor::zeros({2, 2, 5})}, 1), deltar::InvalidArgument);
    CHECK_THROWS_AS(concat({}, 0), deltar::InvalidArgument);
  }
  SUBCASE("slice_axis0") {
    Tensor dir = rand_tensor(rng, {1, 3, 4}, -1, 1, false);
    check_grads([&] { return project(slice_axis0(a, 1, 1), dir); }, {a});
    CHECK(slice_axis0(a, 1, 1).data()[0] == a.data()[12]);
    CHECK_THROWS_AS(slice_axis0(a, 1, 2), deltar::InvalidArgument);
  }
  SUBCASE("gather_rows with repeats accumulates") {
    Tensor t = rand_tensor(rng, {4, 3});
    std::vector<int> rows = {2, 0, 2, 3};
    Tensor dir = rand_tensor(rng, {4, 3}, -1, 1, false);
    check_grads([&] { return project(gather_rows(t, rows), dir); }, {t});
    Tensor g = gather_rows(t, rows);
    CHECK(g.data().segment(0, 3) == t.data().segment(6, 3));
    CHECK_THROWS_AS(gather_rows(t, {4}), deltar::InvalidArgument);
  }
}

TEST_CASE("reductions match central differences") {
  std::mt19937 rng(14);
  Tensor a = rand_tensor(rng, {3, 4, 5});

  check_grads([&] { return sum_all(a); }, {a});
  check_grads([&] { return mean_all(a); }, {a});
  CHECK(mean_all(a).item() == doctest::Approx(a.data().mean()).epsilon(1e-14));

  Tensor dir_bs = rand_tensor(rng, {3, 4}, -1, 1, false);
  check_grads([&] { return project(mean_last(a), dir_bs); }, {a});
  CHECK(mean_last(a).shape() == std::vector<int>{3, 4});
  CHECK(mean_last(a).data()[0] == doctest::Approx(a.data().segment(0, 5).mean()).epsilon(1e-14));

  Tensor dir_bc = rand_tensor(rng, {3, 5}, -1, 1, false);
  check_grads([&] { return project(max_axis1(a), dir_bc); }, {a});
  CHECK(max_axis1(a).shape() == std::vector<int>{3, 5});

  Tensor dir_full = rand_tensor(rng, {3, 4, 5}, -1, 1, false);
  check_grads([&] { return project(softmax_last(a), dir_full); }, {a});
  Tensor sm = softmax_last(a);
  for (int r = 0; r < 12; ++r)
    CHECK(sm.data().segment(r * 5, 5).sum() == doctest::Approx(1.0).epsilon(1e-12));
  // invariant under a constant shift of the logits
  Tensor sm2 = softmax_last(add_scalar(a, 123.0));
  CHECK((sm2.data() - sm.data()).lpNorm<Eigen::Infinity>() < 1e-12);
}

TEST_CASE("max over the sample axis routes ties to the first occurrence") {
  Tensor a = Tensor::from_vector({1, 3, 2}, {1.0, 5.0, 7.0, 2.0, 7.0, 5.0}, true);
  Tensor m = max_axis1(a);
  CHECK(m.data()[0] == 7.0);
  CHECK(m.data()[1] == 5.0);
  backward(sum_all(m));
  // channel 0: rows carry (1,7,7) -> first max at row 1; channel 1: (5,2,5) -> row 0
  Eigen::VectorXd expected(6);
  expected << 0, 1, 1, 0, 0, 0;
  CHECK((a.grad() - expected).lpNorm<Eigen::Infinity>() == 0.0);
}

TEST_CASE("matmul and bmm cover every transpose combination") {
  std::mt19937 rng(15);
  for (bool ta : {false, true}) {
    for (bool tb : {false, true}) {
      CAPTURE(ta);
      CAPTURE(tb);
      Tensor a = rand_tensor(rng, ta ? std::vector<int>{4, 3} : std::vector<int>{3, 4});
      Tensor b = rand_tensor(rng, tb ? std::vector<int>{2, 4} : std::vector<int>{4, 2});
      Tensor dir = rand_tensor(rng, {3, 2}, -1, 1, false);
      check_grads([&] { return project(matmul(a, b, ta, tb), dir); }, {a, b});

      Tensor a3 = rand_tensor(rng, ta ? std::vector<int>{2, 4, 3} : std::vector<int>{2, 3, 4});
      Tensor b3 = rand_tensor(rng, tb ? std::vector<int>{2, 2, 4} : std::vector<int>{2, 4, 2});
      Tensor dir3 = rand_tensor(rng, {2, 3, 2}, -1, 1, false);
      check_grads([&] { return project(bmm(a3, b3, ta, tb), dir3); }, {a3, b3});
    }
  }

  // value spot check against Eigen
  Tensor a = rand_tensor(rng, {3, 4}, -1, 1, false);
  Tensor b = rand_tensor(rng, {4, 2}, -1, 1, false);
  Tensor c = matmul(a, b);
  Eigen::Map<const Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>> ma(
      a.data().data(), 3, 4),
      mb(b.data().data(), 4, 2), mc(c.data().data(), 3, 2);
  CHECK((mc - ma * mb).lpNorm<Eigen::Infinity>() < 1e-14);

  CHECK_THROWS_AS(matmul(a, Tensor::zeros({3, 2})), deltar::InvalidArgument);
  CHECK_THROWS_AS(bmm(Tensor::zeros({2, 3, 4}), Tensor::zeros({3, 4, 2})),
                  deltar::InvalidArgument);
}

TEST_CASE("bias_add broadcasts over rows") {
  std::mt19937 rng(16);
  Tensor a = rand_tensor(rng, {2, 3, 4});
  Tensor b = rand_tensor(rng, {4});
  Tensor dir = rand_tensor(rng, {2, 3, 4}, -1, 1, false);
  check_grads([&] { return project(bias_add(a, b), dir); }, {a, b});
  Tensor out = bias_add(a, b);
  CHECK(out.data()[5] == doctest::Approx(a.data()[5] + b.data()[1]).epsilon(1e-15));
  CHECK_THROWS_AS(bias_add(a, Tensor::zeros({3})), deltar::InvalidArgument);
}

TEST_CASE("conv2d matches central differences") {
  std::mt19937 rng(17);

  SUBCASE("stride 1, padding 1") {
    Tensor x = rand_tensor(rng, {2, 5, 6});
    Tensor w = rand_tensor(rng, {3, 2, 3, 3}, -0.5, 0.5);
    Tensor b = rand_tensor(rng, {3});
    Tensor dir = rand_tensor(rng, {3, 5, 6}, -1, 1, false);
    check_grads([&] { return project(conv2d(x, w, b, 1, 1), dir); }, {x, w, b});
  }
  SUBCASE("stride 2 halves the raster") {
    Tensor x = rand_tensor(rng, {1, 6, 8});
    Tensor w = rand_tensor(rng, {2, 1, 3, 3}, -0.5, 0.5);
    Tensor b = rand_tensor(rng, {2});
    Tensor out = conv2d(x, w, b, 2, 1);
    CHECK(out.shape() == std::vector<int>{2, 3, 4});
    Tensor dir = rand_tensor(rng, {2, 3, 4}, -1, 1, false);
    check_grads([&] { return project(conv2d(x, w, b, 2, 1), dir); }, {x, w, b});
  }
  SUBCASE("1x1 kernel is a per-pixel linear map") {
    Tensor x = rand_tensor(rng, {3, 2, 2});
    Tensor w = rand_tensor(rng, {2, 3, 1, 1});
    Tensor b = Tensor::zeros({2});
    Tensor out = conv2d(x, w, b, 1, 0);
    for (int p = 0; p < 4; ++p) {
      for (int co = 0; co < 2; ++co) {
        double want = 0;
        for (int ci = 0; ci < 3; ++ci) want += w.data()[co * 3 + ci] * x.data()[ci * 4 + p];
        CHECK(out.data()[co * 4 + p] == doctest::Approx(want).epsilon(1e-14));
      }
    }
  }
  SUBCASE("shape validation") {
    CHECK_THROWS_AS(conv2d(Tensor::zeros({2, 4, 4}), Tensor::zeros({3, 1, 3, 3}),
                           Tensor::zeros({3}), 1, 1),
                    deltar::InvalidArgument);
    CHECK_THROWS_AS(conv2d(Tensor::zeros({2, 4, 4}), Tensor::zeros({3, 2, 3, 3}),
                           Tensor::zeros({2}), 1, 1),
                    deltar::InvalidArgument);
  }
}

TEST_CASE("bilinear upsample matches central differences and preserves constants") {
  std::mt19937 rng(18);
  Tensor x = rand_tensor(rng, {2, 3, 4});
  Tensor dir = rand_tensor(rng, {2, 6, 8}, -1, 1, false);
  check_grads([&] { return project(upsample_bilinear(x, 6, 8), dir); }, {x});

  Tensor c = Tensor::full({1, 3, 4}, 1.75);
  Tensor up = upsample_bilinear(c, 9, 12);
  CHECK((up.data().array() - 1.75).abs().maxCoeff() < 1e-14);

  // identity when the size is unchanged
  Tensor same = upsample_bilinear(x, 3, 4);
  CHECK((same.data() - x.data()).lpNorm<Eigen::Infinity>() == 0.0);
}

TEST_CASE("layer_norm matches central differences and normalizes rows") {
  std::mt19937 rng(19);
  Tensor x = rand_tensor(rng, {4, 6}, -2, 2);
  Tensor w = rand_tensor(rng, {6}, 0.5, 1.5);
  Tensor b = rand_tensor(rng, {6});
  Tensor dir = rand_tensor(rng, {4, 6}, -1, 1, false);
  check_grads([&] { return project(layer_norm(x, w, b), dir); }, {x, w, b}, 1e-5, 2e-6, 2e-6);

  Tensor ones = Tensor::full({6}, 1.0);
  Tensor zeros = Tensor::zeros({6});
  Tensor y = layer_norm(x, ones, zeros);
  for (int r = 0; r < 4; ++r) {
    auto row = y.data().segment(r * 6, 6);
    CHECK(row.mean() == doctest::Approx(0.0).epsilon(1e-12));
    CHECK((row.array() - row.mean()).square().mean() == doctest::Approx(1.0).epsilon(1e-4));
  }
}

TEST_CASE("attention reproduces the two-key hand case") {
  Tensor q = Tensor::from_vector({1, 2}, {1, 0});
  Tensor k = Tensor::from_vector({2, 2}, {1, 0, 0, 1});
  Tensor v = Tensor::from_vector({2, 2}, {1, 0, 0, 1});
  Tensor out = attention(q, k, v, 1);
  CHECK(out.shape() == std::vector<int>{1, 2});
  CHECK(out.data()[0] == doctest::Approx(0.6697615493266569).epsilon(1e-12));
  CHECK(out.data()[1] == doctest::Approx(0.3302384506733431).epsilon(1e-12));
}

TEST_CASE("attention matches central differences") {
  std::mt19937 rng(20);
  SUBCASE("single head, 2-D operands") {
    Tensor q = rand_tensor(rng, {3, 4});
    Tensor k = rand_tensor(rng, {5, 4});
    Tensor v = rand_tensor(rng, {5, 4});
    Tensor dir = rand_tensor(rng, {3, 4}, -1, 1, false);
    check_grads([&] { return project(attention(q, k, v, 1), dir); }, {q, k, v});
  }
  SUBCASE("two heads, batched, additive mask") {
    Tensor q = rand_tensor(rng, {2, 3, 4});
    Tensor k = rand_tensor(rng, {2, 5, 4});
    Tensor v = rand_tensor(rng, {2, 5, 4});
    std::vector<double> mvals(15, 0.0);
    mvals[2] = -1e9;  // forbid query 0 -> key 2
    mvals[9] = -1e9;
    Tensor mask = Tensor::from_vector({3, 5}, mvals, false);
    Tensor dir = rand_tensor(rng, {2, 3, 4}, -1, 1, false);
    check_grads([&] { return project(attention(q, k, v, 2, mask), dir); }, {q, k, v});
  }
  SUBCASE("masked keys receive zero weight") {
    Tensor q = Tensor::from_vector({1, 2}, {1, 0});
    Tensor k = Tensor::from_vector({2, 2}, {1, 0, 0, 1});
    Tensor v = Tensor::from_vector({2, 2}, {3, 3, 7, 7});
    Tensor mask = Tensor::from_vector({1, 2}, {0.0, -1e9});
    Tensor out = attention(q, k, v, 1, mask);
    CHECK(out.data()[0] == doctest::Approx(3.0).epsilon(1e-12));
    CHECK(out.data()[1] == doctest::Approx(3.0).epsilon(1e-12));
  }
  SUBCASE("validation") {
    CHECK_THROWS_AS(attention(Tensor::zeros({2, 3}), Tensor::zeros({2, 3}),
                              Tensor::zeros({2, 3}), 2),
                    deltar::InvalidArgument);
    CHECK_THROWS_AS(attention(Tensor::zeros({2, 4}), Tensor::zeros({2, 3}),
                              Tensor::zeros({2, 3}), 1),
                    deltar::InvalidArgument);
  }
}

TEST_CASE("backward mechanics") {
  SUBCASE("diamond graphs accumulate through both paths") {
    Tensor x = Tensor::scalar(1.5, true);
    Tensor y = add(mul(x, x), square(x));  // 2*x^2 -> dy/dx = 4x
    backward(sum_all(y));
    CHECK(x.grad()[0] == doctest::Approx(6.0).epsilon(1e-12));
  }
  SUBCASE("gradients accumulate across backward calls until zeroed") {
    Tensor x = Tensor::scalar(2.0, true);
    backward(square(x));
    CHECK(x.grad()[0] == doctest::Approx(4.0));
    backward(square(x));
    CHECK(x.grad()[0] == doctest::Approx(8.0));
    x.zero_grad();
    CHECK(x.grad().isZero());
  }
  SUBCASE("no gradient flows into detached inputs") {
    Tensor x = Tensor::scalar(2.0, false);
    Tensor y = square(x);
    CHECK_FALSE(y.requires_grad());
    backward(y);
    CHECK_FALSE(x.has_grad());
  }
  SUBCASE("root must be a one-element tensor") {
    CHECK_THROWS_AS(backward(Tensor::zeros({2}, true)), deltar::InvalidArgument);
    CHECK_THROWS_AS(backward(Tensor()), deltar::InvalidArgument);
  }
  SUBCASE("deep chain stays iterative") {
    Tensor x = Tensor::scalar(1.0, true);
    Tensor y = x;
    for (int i = 0; i < 20000; ++i) y = add_scalar(y, 1.0);
    backward(y);
    CHECK(y.item() == doctest::Approx(20001.0));
    CHECK(x.grad()[0] == 1.0);
  }
}
