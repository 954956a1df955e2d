#include <cmath>
#include <cstdio>
#include <fstream>

#include "doctest.h"
#include "lopr/checkpoint.hpp"
#include "lopr/ops.hpp"
#include "lopr/optim.hpp"
#include "lopr/random.hpp"
#include "lopr/tensor.hpp"
#include "support/oracles.hpp"

using namespace lopr;

namespace {

Tensor make(Shape s, std::vector<double> v) { return Tensor::from_data(std::move(s), std::move(v)); }

}  // namespace

TEST_CASE("matmul identity and forced example") {
  Tensor i2 = make({2, 2}, {1, 0, 0, 1});
  Tensor p = matmul(i2, i2);
  for (int i = 0; i < 4; ++i) CHECK(p.at(i) == i2.at(i));

  Tensor a = make({2, 2}, {1, 2, 3, 4});
  Tensor b = make({2, 1}, {0, 1});
  Tensor c = matmul(a, b);
  CHECK(c.at(0) == doctest::Approx(2.0));
  CHECK(c.at(1) == doctest::Approx(4.0));
}

TEST_CASE("matmul shape mismatch names both shapes") {
  Tensor a = Tensor::zeros({2, 3});
  Tensor b = Tensor::zeros({2, 2});
  CHECK_THROWS_WITH_AS(matmul(a, b), doctest::Contains("[2,3]"), DimensionError);
}

TEST_CASE("matmul gradients vs finite differences") {
  RandomStream rng(11);
  Tensor a = Tensor::randn({3, 4}, rng);
  Tensor b = Tensor::randn({4, 2}, rng);
  Tensor r = Tensor::randn({3, 2}, rng);
  double err = oracles::grad_check([&]() { return sum_all(mul(matmul(a, b), r)); }, {a, b});
  CHECK(err < 1e-6);
}

TEST_CASE("conv2d identity kernel") {
  RandomStream rng(3);
  Tensor x = Tensor::randn({1, 3, 3}, rng);
  Tensor w = make({1, 1, 1, 1}, {1.0});
  Tensor y = conv2d(x, w, 1, 0);
  REQUIRE(y.shape() == Shape{1, 3, 3});
  for (int i = 0; i < 9; ++i) CHECK(y.at(i) == x.at(i));
}

TEST_CASE("conv2d border sums on ones") {
  Tensor x = Tensor::ones({1, 4, 4});
  Tensor w = Tensor::ones({1, 1, 3, 3});
  Tensor y = conv2d(x, w, 1, 1);
  REQUIRE(y.shape() == Shape{1, 4, 4});
  Tensor ref = oracles::conv2d_direct(x, w, 1, 1);
  for (int i = 0; i < 16; ++i) CHECK(y.at(i) == doctest::Approx(ref.at(i)));
  CHECK(y.at(0) == doctest::Approx(4.0));   // corner
  CHECK(y.at(1) == doctest::Approx(6.0));   // edge
  CHECK(y.at(5) == doctest::Approx(9.0));   // interior
}

TEST_CASE("conv2d matches direct summation on random instances") {
  RandomStream rng(17);
  for (int trial = 0; trial < 5; ++trial) {
    Tensor x = Tensor::randn({2, 6, 5}, rng);
    Tensor w = Tensor::randn({3, 2, 3, 3}, rng);
    const int stride = 1 + static_cast<int>(rng.uniform_int(0, 1));
    Tensor y = conv2d(x, w, stride, 1);
    Tensor ref = oracles::conv2d_direct(x, w, stride, 1);
    REQUIRE(y.shape() == ref.shape());
    for (std::int64_t i = 0; i < y.size(); ++i) CHECK(y.at(i) == doctest::Approx(ref.at(i)).epsilon(1e-12));
  }
}

TEST_CASE("conv2d gradient check") {
  RandomStream rng(23);
  Tensor x = Tensor::randn({2, 5, 5}, rng);
  Tensor w = Tensor::randn({3, 2, 3, 3}, rng);
  Tensor r = Tensor::randn({3, 3, 3}, rng);
  double err = oracles::grad_check(
      [&]() { return sum_all(mul(conv2d(x, w, 2, 1), r)); }, {x, w});
  CHECK(err < 1e-5);
}

TEST_CASE("conv2d rejects oversized kernels") {
  Tensor x = Tensor::zeros({1, 3, 3});
  Tensor w = Tensor::zeros({1, 1, 5, 5});
  CHECK_THROWS_AS(conv2d(x, w, 1, 0), DimensionError);
}

TEST_CASE("conv2d_transpose identity and output shape") {
  RandomStream rng(5);
  Tensor x = Tensor::randn({1, 3, 3}, rng);
  Tensor w = make({1, 1, 1, 1}, {1.0});
  Tensor y = conv2d_transpose(x, w, 1, 0);
  for (int i = 0; i < 9; ++i) CHECK(y.at(i) == x.at(i));

  Tensor x2 = Tensor::randn({2, 4, 4}, rng);
  Tensor w2 = Tensor::randn({2, 3, 4, 4}, rng);
  Tensor y2 = conv2d_transpose(x2, w2, 2, 1);
  CHECK(y2.shape() == Shape{3, 8, 8});
}

TEST_CASE("conv2d_transpose is the adjoint of conv2d") {
  RandomStream rng(31);
  Tensor x = Tensor::randn({2, 6, 6}, rng).set_requires_grad(true);
  Tensor w = Tensor::randn({3, 2, 4, 4}, rng);
  Tensor cot = Tensor::randn({3, 3, 3}, rng);

  ComputationTape tape;
  Tensor dx;
  {
    TapeGuard guard(tape);
    Tensor y = conv2d(x, w, 2, 1);
    REQUIRE(y.shape() == cot.shape());
    Tensor s = sum_all(mul(y, cot));
    dx = tape.grad(s, x, false);
  }
  // Forward transpose with the weight laid out [Cin_t=3, Cout=2, kh, kw]:
  // conv2d's weight indexed [co][ci] maps to the transpose's [ci][co].
  Tensor wt = Tensor::zeros({3, 2, 4, 4});
  for (int a = 0; a < 3; ++a)
    for (int b = 0; b < 2; ++b)
      for (int k = 0; k < 16; ++k)
        wt.data()[(a * 2 + b) * 16 + k] = w.at((a * 2 + b) * 16 + k);
  Tensor fwd = conv2d_transpose(cot, wt, 2, 1);
  REQUIRE(fwd.shape() == dx.shape());
  for (std::int64_t i = 0; i < dx.size(); ++i)
    CHECK(dx.at(i) == doctest::Approx(fwd.at(i)).epsilon(1e-12));
}

TEST_CASE("conv2d_transpose gradient check") {
  RandomStream rng(37);
  Tensor x = Tensor::randn({2, 3, 3}, rng);
  Tensor w = Tensor::randn({2, 2, 4, 4}, rng);
  Tensor y0 = conv2d_transpose(x, w, 2, 1);
  Tensor r = Tensor::randn(y0.shape(), rng);
  double err = oracles::grad_check(
      [&]() { return sum_all(mul(conv2d_transpose(x, w, 2, 1), r)); }, {x, w});
  CHECK(err < 1e-5);
}

TEST_CASE("elementwise basics") {
  CHECK(sigmoid(Tensor::scalar(0.0)).item() == doctest::Approx(0.5));
  CHECK(relu(Tensor::scalar(-3.0)).item() == 0.0);
  CHECK_THROWS_AS(log(Tensor::scalar(-1.0)), DomainError);
  CHECK_THROWS_AS(log(Tensor::scalar(0.0)), DomainError);

  Tensor a = Tensor::zeros({2, 3});
  Tensor b = Tensor::zeros({3, 2});
  CHECK_THROWS_AS(add(a, b), DimensionError);
  // scalar-vs-tensor broadcast is allowed
  CHECK(add(a, Tensor::scalar(1.0)).at(0) == 1.0);
}

TEST_CASE("gelu gradient at probe points") {
  for (double v : {-2.0, -0.5, 0.0, 0.5, 2.0}) {
    Tensor x = Tensor::scalar(v);
    double err = oracles::grad_check([&]() { return sum_all(gelu(x)); }, {x});
    CHECK(err < 1e-5);
  }
}

TEST_CASE("softmax symmetry, stability, gradient") {
  Tensor s = softmax(make({2}, {0.0, 0.0}));
  CHECK(s.at(0) == doctest::Approx(0.5));
  CHECK(s.at(1) == doctest::Approx(0.5));

  Tensor big = softmax(make({2}, {1000.0, 0.0}));
  CHECK(std::isfinite(big.at(0)));
  CHECK(big.at(0) == doctest::Approx(1.0));
  CHECK(big.at(1) == doctest::Approx(0.0));

  RandomStream rng(41);
  Tensor x = Tensor::randn({2, 5}, rng);
  Tensor r = Tensor::randn({2, 5}, rng);
  double err = oracles::grad_check([&]() { return sum_all(mul(softmax(x, 1), r)); }, {x});
  CHECK(err < 1e-6);
}

TEST_CASE("softmax rows sum to one across random shapes") {
  RandomStream rng(43);
  for (int trial = 0; trial < 100; ++trial) {
    const int n = 2 + static_cast<int>(rng.uniform_int(0, 6));
    const int rows = 1 + static_cast<int>(rng.uniform_int(0, 4));
    Tensor x = Tensor::randn({rows, n}, rng);
    Tensor y = softmax(x, -1);
    for (int i = 0; i < rows; ++i) {
      double acc = 0.0;
      for (int j = 0; j < n; ++j) acc += y.at(i * n + j);
      CHECK(std::abs(acc - 1.0) < 1e-12);
    }
  }
}

TEST_CASE("layer_norm on constants and [1,2,3]") {
  Tensor gain = Tensor::ones({4});
  Tensor bias = Tensor::zeros({4});
  Tensor y = layer_norm(Tensor::full({1, 4}, 3.7), gain, bias, 1e-5);
  for (int i = 0; i < 4; ++i) CHECK(std::abs(y.at(i)) < 1e-9);

  Tensor g3 = Tensor::ones({3}), b3 = Tensor::zeros({3});
  Tensor z = layer_norm(make({1, 3}, {1, 2, 3}), g3, b3, 1e-12);
  double mean = (z.at(0) + z.at(1) + z.at(2)) / 3.0;
  double var = 0.0;
  for (int i = 0; i < 3; ++i) var += (z.at(i) - mean) * (z.at(i) - mean) / 3.0;
  CHECK(std::abs(mean) < 1e-9);
  CHECK(var == doctest::Approx(1.0).epsilon(1e-6));
}

TEST_CASE("layer_norm pre-affine rows have tiny mean on random input") {
  RandomStream rng(47);
  Tensor gain = Tensor::ones({8}), bias = Tensor::zeros({8});
  for (int trial = 0; trial < 20; ++trial) {
    Tensor x = mul_scalar(Tensor::randn({5, 8}, rng), 3.0);
    Tensor y = layer_norm(x, gain, bias);
    for (int i = 0; i < 5; ++i) {
      double acc = 0.0;
      for (int j = 0; j < 8; ++j) acc += y.at(i * 8 + j);
      CHECK(std::abs(acc / 8.0) < 1e-9);
    }
  }
}

TEST_CASE("layer_norm gradient check") {
  RandomStream rng(53);
  Tensor x = Tensor::randn({3, 6}, rng);
  Tensor gain = Tensor::randn({6}, rng);
  Tensor bias = Tensor::randn({6}, rng);
  Tensor r = Tensor::randn({3, 6}, rng);
  double err = oracles::grad_check(
      [&]() { return sum_all(mul(layer_norm(x, gain, bias), r)); }, {x, gain, bias});
  CHECK(err < 1e-5);
}

TEST_CASE("backward populates leaf gradients") {
  Tensor x = make({3}, {1, 2, 3}).set_requires_grad(true);
  ComputationTape tape;
  {
    TapeGuard guard(tape);
    backward(sum_all(x));
  }
  for (int i = 0; i < 3; ++i) CHECK(x.grad()[i] == 1.0);

  Tensor y = make({2}, {1, 2}).set_requires_grad(true);
  ComputationTape tape2;
  {
    TapeGuard guard(tape2);
    backward(sum_all(square(y)));
  }
  CHECK(y.grad()[0] == doctest::Approx(2.0));
  CHECK(y.grad()[1] == doctest::Approx(4.0));
}

TEST_CASE("backward accumulates across calls and rejects non-scalars") {
  Tensor x = make({2}, {1.0, 1.0}).set_requires_grad(true);
  ComputationTape tape;
  TapeGuard guard(tape);
  Tensor loss = sum_all(x);
  tape.backward(loss);
  tape.backward(loss);
  CHECK(x.grad()[0] == 2.0);

  CHECK_THROWS_AS(tape.backward(x), ContractError);
}

TEST_CASE("backward on empty tape is a contract error") {
  ComputationTape tape;
  CHECK_THROWS_AS(tape.backward(Tensor::scalar(0.0)), ContractError);
}

TEST_CASE("backward is linear in the loss") {
  RandomStream rng(59);
  Tensor x = Tensor::randn({4}, rng);
  auto grad_of = [&](double a, double b) {
    Tensor leaf = x.detach().set_requires_grad(true);
    ComputationTape tape;
    TapeGuard guard(tape);
    Tensor f = sum_all(square(leaf));
    Tensor g = sum_all(exp(leaf));
    tape.backward(add(mul_scalar(f, a), mul_scalar(g, b)));
    return leaf.grad();
  };
  auto gf = grad_of(1.0, 0.0);
  auto gg = grad_of(0.0, 1.0);
  auto gc = grad_of(2.0, 3.0);
  for (int i = 0; i < 4; ++i) {
    CHECK(gc[i] == doctest::Approx(2.0 * gf[i] + 3.0 * gg[i]).epsilon(1e-12));
  }
}

TEST_CASE("forward ops are deterministic bit for bit") {
  RandomStream rng(61);
  Tensor a = Tensor::randn({4, 4}, rng);
  Tensor b = Tensor::randn({4, 4}, rng);
  Tensor y1 = matmul(gelu(a), softmax(b, -1));
  Tensor y2 = matmul(gelu(a), softmax(b, -1));
  for (std::int64_t i = 0; i < y1.size(); ++i) CHECK(y1.at(i) == y2.at(i));
}

TEST_CASE("second-order gradients through the tape") {
  // y = x^3: dy/dx = 3x^2, d2y/dx2 = 6x.
  Tensor x = Tensor::scalar(1.7).set_requires_grad(true);
  ComputationTape tape;
  TapeGuard guard(tape);
  Tensor y = mul(mul(x, x), x);
  Tensor g1 = tape.grad(y, x, /*create_graph=*/true);
  CHECK(g1.item() == doctest::Approx(3.0 * 1.7 * 1.7).epsilon(1e-12));
  Tensor g2 = tape.grad(sum_all(g1), x, false);
  CHECK(g2.item() == doctest::Approx(6.0 * 1.7).epsilon(1e-12));
}

TEST_CASE("randomized finite-difference sweep over primitives") {
  RandomStream rng(67);
  for (int trial = 0; trial < 8; ++trial) {
    const int n = 2 + static_cast<int>(rng.uniform_int(0, 3));
    const int m = 2 + static_cast<int>(rng.uniform_int(0, 3));
    Tensor a = Tensor::randn({m, n}, rng);
    Tensor b = Tensor::randn({m, n}, rng);
    Tensor r = Tensor::randn({m, n}, rng);
    auto fn = [&]() {
      Tensor t = add(mul(a, b), sigmoid(a));
      t = sub(t, mul_scalar(tanh(b), 0.3));
      t = add(t, softplus(a));
      t = div(t, add_scalar(square(b), 2.0));
      t = add(t, gelu(a));
      return sum_all(mul(t, r));
    };
    CHECK(oracles::grad_check(fn, {a, b}) < 1e-4);
  }
  // reductions / shape plumbing
  Tensor a = Tensor::randn({3, 4}, rng);
  auto fn2 = [&]() {
    Tensor t = concat({narrow(a, 0, 0, 2), narrow(a, 0, 1, 2)}, 0);
    Tensor u = repeat_last(sum_last(t), 4);
    Tensor v = repeat_rows(sum_rows(u), 4);
    return mean_all(square(add(v, transpose(reshape(u, {4, 4})))));
  };
  CHECK(oracles::grad_check(fn2, {a}) < 1e-4);
  // pooling pair
  Tensor p = Tensor::randn({2, 4, 4}, rng);
  auto fn3 = [&]() {
    return sum_all(square(nearest_upsample2d(avg_pool2d(p, 2), 2)));
  };
  CHECK(oracles::grad_check(fn3, {p}) < 1e-4);
}

TEST_CASE("adamw holds still with zero gradients and no decay") {
  Tensor x = Tensor::scalar(1.0).set_requires_grad(true);
  x.zero_grad();
  AdamWConfig cfg;
  cfg.weight_decay = 0.0;
  AdamW opt({{"x", x}}, cfg);
  opt.step();
  CHECK(x.item() == 1.0);
}

TEST_CASE("adamw descends on x^2") {
  Tensor x = Tensor::scalar(1.0).set_requires_grad(true);
  AdamWConfig cfg;
  cfg.lr = 0.1;
  cfg.weight_decay = 0.0;
  AdamW opt({{"x", x}}, cfg);
  ComputationTape tape;
  TapeGuard guard(tape);
  opt.zero_grad();
  tape.backward(square(x));
  opt.step();
  CHECK(std::abs(x.item()) < 1.0);
}

TEST_CASE("adamw converges on a 2-d quadratic") {
  // f(p) = (p0-1.5)^2 + 3*(p1+0.5)^2, optimum (1.5, -0.5)
  Tensor p = Tensor::from_data({2}, {0.0, 0.0}).set_requires_grad(true);
  AdamWConfig cfg;
  cfg.lr = 0.05;
  cfg.weight_decay = 0.0;
  AdamW opt({{"p", p}}, cfg);
  Tensor target = Tensor::from_data({2}, {1.5, -0.5});
  Tensor scale = Tensor::from_data({2}, {1.0, 3.0});
  for (int i = 0; i < 200; ++i) {
    ComputationTape tape;
    TapeGuard guard(tape);
    opt.zero_grad();
    tape.backward(sum_all(mul(scale, square(sub(p, target)))));
    opt.step();
  }
  CHECK(std::abs(p.at(0) - 1.5) < 1e-3);
  CHECK(std::abs(p.at(1) + 0.5) < 1e-3);
}

TEST_CASE("adamw rejects non-finite gradients naming the parameter") {
  Tensor x = Tensor::scalar(1.0).set_requires_grad(true);
  x.zero_grad();
  const double nan = std::nan("");
  x.accumulate_grad(&nan, 1);
  AdamW opt({{"weights.theta", x}});
  try {
    opt.step();
    FAIL("expected TrainingError");
  } catch (const TrainingError& e) {
    CHECK(e.parameter == "weights.theta");
  }
}

TEST_CASE("checkpoint round trip and corruption detection") {
  RandomStream rng(71);
  std::vector<std::pair<std::string, Tensor>> tensors;
  tensors.emplace_back("enc.w", Tensor::randn({3, 4}, rng));
  tensors.emplace_back("enc.b", Tensor::randn({4}, rng));
  const std::string path = "test_ckpt.bin";
  save_checkpoint(path, tensors);
  auto loaded = load_checkpoint(path);
  REQUIRE(loaded.size() == 2);
  CHECK(loaded[0].first == "enc.w");
  CHECK(loaded[0].second.shape() == Shape{3, 4});
  for (std::int64_t i = 0; i < 12; ++i) CHECK(loaded[0].second.at(i) == tensors[0].second.at(i));

  // corrupt the magic
  {
    std::fstream f(path, std::ios::in | std::ios::out | std::ios::binary);
    f.seekp(0);
    f.write("XXXX", 4);
  }
  CHECK_THROWS_AS(load_checkpoint(path), FormatError);
  std::remove(path.c_str());
}

TEST_CASE("whole composite graph gradient check on an 8x8 toy stack") {
  // conv -> gelu -> downsample -> layer_norm -> matmul readout, the same
  // op zoo the models compose.
  RandomStream rng(73);
  Tensor x = Tensor::randn({1, 8, 8}, rng);
  Tensor w1 = mul_scalar(Tensor::randn({2, 1, 4, 4}, rng), 0.5);
  Tensor w2 = mul_scalar(Tensor::randn({8, 3}, rng), 0.5);
  Tensor gain = Tensor::ones({8}), bias = Tensor::zeros({8});
  Tensor r = Tensor::randn({4, 3}, rng);
  auto fn = [&]() {
    Tensor h = gelu(conv2d(x, w1, 2, 1));   // [2,4,4]
    Tensor t = reshape(h, {4, 8});
    t = layer_norm(t, gain, bias);
    return sum_all(mul(matmul(t, w2), r));
  };
  CHECK(oracles::grad_check(fn, {x, w1, w2, gain, bias}) < 1e-4);
}
