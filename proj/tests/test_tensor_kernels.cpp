#include <catch_amalgamated.hpp>

#include "can/kernels.hpp"
#include "support.hpp"

using can::Tensor;
using Catch::Matchers::WithinAbs;
using Catch::Matchers::WithinRel;

TEST_CASE("tensor rejects inconsistent construction", "[tensor]") {
  CHECK_THROWS_AS(Tensor<double>({2, 0, 3}), can::UsageError);
  CHECK_THROWS_AS(Tensor<double>({2, 2}, std::vector<double>(3)), can::UsageError);
  Tensor<double> t({2, 3}, 1.5);
  CHECK(t.size() == 6);
  CHECK(t.reshaped({3, 2}).shape() == can::Shape{3, 2});
  CHECK_THROWS_AS(t.reshaped({4, 2}), can::UsageError);
}

TEST_CASE("slice_batch copies a contiguous run of samples", "[tensor]") {
  Tensor<double> t({4, 2});
  for (std::size_t i = 0; i < t.size(); ++i) t[i] = static_cast<double>(i);
  const auto s = can::slice_batch(t, 1, 2);
  CHECK(s.shape() == can::Shape{2, 2});
  CHECK(s[0] == 2.0);
  CHECK(s[3] == 5.0);
  CHECK_THROWS_AS(can::slice_batch(t, 3, 2), can::UsageError);
}

TEST_CASE("conv2d output geometry", "[conv2d]") {
  CHECK(can::conv2d_output_extent(256, 4, 2, 1) == 128);
  // Weight-shape-only check at full input size would be slow; the extent function is what
  // the forward pass uses, so a smaller input suffices to exercise the same arithmetic.
  std::mt19937_64 rng(1);
  const auto x = testing::random_tensor({1, 3, 16, 16}, rng);
  const auto w = testing::random_tensor({32, 3, 4, 4}, rng);
  const Tensor<double> b({32});
  CHECK(can::conv2d(x, w, b, 2, 1).shape() == can::Shape{1, 32, 8, 8});
}

TEST_CASE("conv2d on a full 256 input halves the extent", "[conv2d][slow]") {
  std::mt19937_64 rng(2);
  const auto x = testing::random_tensor({1, 3, 256, 256}, rng);
  const auto w = testing::random_tensor({32, 3, 4, 4}, rng, 0.02);
  CHECK(can::conv2d(x, w, Tensor<double>({32}), 2, 1).shape() == can::Shape{1, 32, 128, 128});
}

TEST_CASE("conv2d identity and box kernels", "[conv2d]") {
  std::mt19937_64 rng(3);
  const auto x = testing::random_tensor({1, 1, 5, 5}, rng);
  const Tensor<double> one({1, 1, 1, 1}, 1.0);
  CHECK(can::conv2d(x, one, Tensor<double>({1}), 1, 0) == x);

  const Tensor<double> ones({1, 1, 3, 3}, 1.0);
  const Tensor<double> box({1, 1, 2, 2}, 1.0);
  const auto y = can::conv2d(ones, box, Tensor<double>({1}), 1, 0);
  REQUIRE(y.shape() == can::Shape{1, 1, 2, 2});
  for (double v : y.data()) CHECK(v == 4.0);

  const auto g = can::conv2d_backward(Tensor<double>({1, 1, 2, 2}, 1.0), ones, box, 1, 0);
  for (double v : g.weight.data()) CHECK(v == 4.0);
}

TEST_CASE("conv2d rejects a channel mismatch and a collapsing input", "[conv2d]") {
  const Tensor<double> x({1, 2, 5, 5});
  CHECK_THROWS_AS(can::conv2d(x, Tensor<double>({1, 3, 2, 2}), Tensor<double>({1}), 1, 0),
                  can::UsageError);
  CHECK_THROWS_AS(can::conv2d(Tensor<double>({1, 2, 1, 1}), Tensor<double>({1, 2, 4, 4}),
                              Tensor<double>({1}), 2, 0),
                  can::UsageError);
}

TEST_CASE("conv2d backward of a zero gradient is zero", "[conv2d]") {
  std::mt19937_64 rng(4);
  const auto x = testing::random_tensor({2, 3, 6, 6}, rng);
  const auto w = testing::random_tensor({4, 3, 4, 4}, rng);
  const auto g = can::conv2d_backward(Tensor<double>({2, 4, 3, 3}), x, w, 2, 1);
  for (const auto* t : {&g.input, &g.weight, &g.bias}) {
    for (double v : t->data()) CHECK(v == 0.0);
  }
}

TEST_CASE("conv2d gradients match central differences", "[conv2d][gradient]") {
  std::mt19937_64 rng(5);
  struct Geometry {
    can::Shape x, w;
    std::size_t stride, pad;
  };
  for (const Geometry& geo : {Geometry{{1, 1, 3, 3}, {1, 1, 2, 2}, 1, 0},
                              Geometry{{2, 3, 6, 6}, {4, 3, 4, 4}, 2, 1}}) {
    auto x = testing::random_tensor(geo.x, rng);
    auto w = testing::random_tensor(geo.w, rng);
    auto b = testing::random_tensor({geo.w[0]}, rng);
    const auto probe_shape = can::conv2d(x, w, b, geo.stride, geo.pad).shape();
    const auto r = testing::random_tensor(probe_shape, rng);
    auto f = [&]() { return testing::dot(can::conv2d(x, w, b, geo.stride, geo.pad), r); };
    const auto g = can::conv2d_backward(r, x, w, geo.stride, geo.pad);
    CHECK(testing::max_rel_error(g.input, testing::numeric_grad(f, x)) <= 1e-5);
    CHECK(testing::max_rel_error(g.weight, testing::numeric_grad(f, w)) <= 1e-5);
    CHECK(testing::max_rel_error(g.bias, testing::numeric_grad(f, b)) <= 1e-5);
  }
}

TEST_CASE("conv_transpose2d doubles the extent", "[conv_transpose2d]") {
  CHECK(can::conv_transpose2d_output_extent(4, 4, 2, 1) == 8);
  std::mt19937_64 rng(6);
  const auto x = testing::random_tensor({1, 1024, 4, 4}, rng);
  const auto w = testing::random_tensor({1024, 8, 4, 4}, rng, 0.02);
  CHECK(can::conv_transpose2d(x, w, Tensor<double>({8}), 2, 1).shape() ==
        can::Shape{1, 8, 8, 8});
}

TEST_CASE("conv_transpose2d with a unit kernel is the identity", "[conv_transpose2d]") {
  std::mt19937_64 rng(7);
  const auto x = testing::random_tensor({2, 1, 4, 4}, rng);
  CHECK(can::conv_transpose2d(x, Tensor<double>({1, 1, 1, 1}, 1.0), Tensor<double>({1}), 1, 0) ==
        x);
}

TEST_CASE("conv_transpose2d is the adjoint of conv2d", "[conv_transpose2d]") {
  std::mt19937_64 rng(8);
  // conv2d maps [N,C,8,8] -> [N,F,4,4] with weight [F,C,k,k]; the transposed map takes
  // [N,F,4,4] back to [N,C,8,8] with the same weight read as [Cin=F, Cout=C, k, k].
  const auto x = testing::random_tensor({2, 3, 8, 8}, rng);
  const auto w = testing::random_tensor({5, 3, 4, 4}, rng);
  const auto g = testing::random_tensor({2, 5, 4, 4}, rng);
  const auto via_backward = can::conv2d_backward(g, x, w, 2, 1).input;
  const auto via_transpose = can::conv_transpose2d(g, w, Tensor<double>({3}), 2, 1);
  REQUIRE(via_backward.shape() == via_transpose.shape());
  CHECK(testing::max_rel_error(via_backward, via_transpose, 1e-12) <= 1e-12);
}

TEST_CASE("conv_transpose2d gradients match central differences", "[conv_transpose2d][gradient]") {
  std::mt19937_64 rng(9);
  auto x = testing::random_tensor({2, 3, 3, 3}, rng);
  auto w = testing::random_tensor({3, 2, 4, 4}, rng);
  auto b = testing::random_tensor({2}, rng);
  const auto r = testing::random_tensor({2, 2, 6, 6}, rng);
  auto f = [&]() { return testing::dot(can::conv_transpose2d(x, w, b, 2, 1), r); };
  const auto g = can::conv_transpose2d_backward(r, x, w, 2, 1);
  CHECK(testing::max_rel_error(g.input, testing::numeric_grad(f, x)) <= 1e-5);
  CHECK(testing::max_rel_error(g.weight, testing::numeric_grad(f, w)) <= 1e-5);
  CHECK(testing::max_rel_error(g.bias, testing::numeric_grad(f, b)) <= 1e-5);
}

TEST_CASE("dense shapes and identity", "[dense]") {
  std::mt19937_64 rng(10);
  const auto x = testing::random_tensor({1, 4096}, rng);
  const auto w = testing::random_tensor({4096, 1024}, rng, 0.02);
  CHECK(can::dense(x, w, Tensor<double>({1024})).shape() == can::Shape{1, 1024});

  const auto y = testing::random_tensor({3, 5}, rng);
  Tensor<double> eye({5, 5});
  for (std::size_t i = 0; i < 5; ++i) eye.at(i, i) = 1.0;
  CHECK(can::dense(y, eye, Tensor<double>({5})) == y);
}

TEST_CASE("dense gradients match central differences", "[dense][gradient]") {
  std::mt19937_64 rng(11);
  auto x = testing::random_tensor({3, 5}, rng);
  auto w = testing::random_tensor({5, 4}, rng);
  auto b = testing::random_tensor({4}, rng);
  const auto r = testing::random_tensor({3, 4}, rng);
  auto f = [&]() { return testing::dot(can::dense(x, w, b), r); };
  const auto g = can::dense_backward(r, x, w);
  CHECK(testing::max_rel_error(g.input, testing::numeric_grad(f, x)) <= 1e-6);
  CHECK(testing::max_rel_error(g.weight, testing::numeric_grad(f, w)) <= 1e-6);
  CHECK(testing::max_rel_error(g.bias, testing::numeric_grad(f, b)) <= 1e-6);
}

TEST_CASE("batchnorm standardizes each channel in training", "[batchnorm]") {
  std::mt19937_64 rng(12);
  auto x = testing::random_tensor({4, 3, 5, 5}, rng, 3.0);
  for (auto& v : x.data()) v += 7.0;
  can::BatchNormState<double> state{Tensor<double>({3}), Tensor<double>({3}, 1.0)};
  const auto r = can::batchnorm2d(x, Tensor<double>({3}, 1.0), Tensor<double>({3}), state, 1e-5,
                                  0.1, can::Phase::train);
  for (std::size_t c = 0; c < 3; ++c) {
    double mean = 0.0, sq = 0.0;
    for (std::size_t n = 0; n < 4; ++n) {
      for (std::size_t i = 0; i < 25; ++i) {
        const double v = r.output[(n * 3 + c) * 25 + i];
        mean += v;
        sq += v * v;
      }
    }
    mean /= 100.0;
    CHECK(std::abs(mean) <= 1e-6);
    CHECK_THAT(sq / 100.0 - mean * mean, WithinAbs(1.0, 1e-4));
  }
}

TEST_CASE("batchnorm running statistics follow the momentum rule", "[batchnorm]") {
  std::mt19937_64 rng(13);
  const auto x = testing::random_tensor({3, 1, 2, 2}, rng);
  can::BatchNormState<double> state{Tensor<double>({1}), Tensor<double>({1}, 1.0)};
  (void)can::batchnorm2d(x, Tensor<double>({1}, 1.0), Tensor<double>({1}), state, 1e-5, 0.1,
                         can::Phase::train);
  double mean = 0.0;
  for (double v : x.data()) mean += v;
  mean /= 12.0;
  double var = 0.0;
  for (double v : x.data()) var += (v - mean) * (v - mean);
  var /= 11.0;
  CHECK_THAT(state.running_mean[0], WithinRel(0.1 * mean, 1e-12));
  CHECK_THAT(state.running_var[0], WithinRel(0.9 + 0.1 * var, 1e-12));

  const auto before = state;
  (void)can::batchnorm2d(x, Tensor<double>({1}, 1.0), Tensor<double>({1}), state, 1e-5, 0.1,
                         can::Phase::batch);
  CHECK(state.running_mean == before.running_mean);
  CHECK(state.running_var == before.running_var);
}

TEST_CASE("batchnorm of a constant channel is zero", "[batchnorm]") {
  const Tensor<double> x({2, 1, 3, 3}, 4.2);
  can::BatchNormState<double> state{Tensor<double>({1}), Tensor<double>({1}, 1.0)};
  const auto r = can::batchnorm2d(x, Tensor<double>({1}, 1.0), Tensor<double>({1}), state, 1e-5,
                                  0.1, can::Phase::train);
  for (double v : r.output.data()) CHECK(std::abs(v) < 1e-9);
}

TEST_CASE("batchnorm rejects a single-sample training batch", "[batchnorm]") {
  can::BatchNormState<double> state{Tensor<double>({1}), Tensor<double>({1}, 1.0)};
  CHECK_THROWS_AS(can::batchnorm2d(Tensor<double>({1, 1, 2, 2}), Tensor<double>({1}, 1.0),
                                   Tensor<double>({1}), state, 1e-5, 0.1, can::Phase::train),
                  can::UsageError);
  CHECK_NOTHROW(can::batchnorm2d(Tensor<double>({1, 1, 2, 2}), Tensor<double>({1}, 1.0),
                                 Tensor<double>({1}), state, 1e-5, 0.1, can::Phase::infer));
}

TEST_CASE("batchnorm gradients match central differences", "[batchnorm][gradient]") {
  std::mt19937_64 rng(14);
  auto x = testing::random_tensor({4, 2, 3, 3}, rng);
  auto gamma = testing::random_tensor({2}, rng);
  auto beta = testing::random_tensor({2}, rng);
  const auto r = testing::random_tensor({4, 2, 3, 3}, rng);
  auto f = [&]() {
    can::BatchNormState<double> s{Tensor<double>({2}), Tensor<double>({2}, 1.0)};
    return testing::dot(
        can::batchnorm2d(x, gamma, beta, s, 1e-5, 0.1, can::Phase::train).output, r);
  };
  can::BatchNormState<double> s{Tensor<double>({2}), Tensor<double>({2}, 1.0)};
  const auto fw = can::batchnorm2d(x, gamma, beta, s, 1e-5, 0.1, can::Phase::train);
  const auto g = can::batchnorm2d_backward(r, fw.cache, gamma);
  CHECK(testing::max_rel_error(g.input, testing::numeric_grad(f, x)) <= 1e-4);
  CHECK(testing::max_rel_error(g.weight, testing::numeric_grad(f, gamma)) <= 1e-4);
  CHECK(testing::max_rel_error(g.bias, testing::numeric_grad(f, beta)) <= 1e-4);
}

TEST_CASE("activation values", "[activation]") {
  CHECK(can::leaky_relu(Tensor<double>({1}, -1.0), 0.2)[0] == -0.2);
  CHECK(can::leaky_relu(Tensor<double>({1}, 2.0), 0.2)[0] == 2.0);
  CHECK(can::sigmoid(Tensor<double>({1}, 0.0))[0] == 0.5);
  CHECK(can::tanh(Tensor<double>({1}, 0.0))[0] == 0.0);
  const auto p = can::softmax(Tensor<double>({1, 3}, 0.0));
  for (double v : p.data()) CHECK_THAT(v, WithinRel(1.0 / 3.0, 1e-15));
}

TEST_CASE("sigmoid and softmax stay finite for extreme logits", "[activation]") {
  const Tensor<double> big({1, 3}, std::vector<double>{1000.0, -1000.0, 0.0});
  const auto p = can::softmax(big);
  CHECK(p.all_finite());
  CHECK(p[0] == 1.0);
  const auto s = can::sigmoid(Tensor<double>({2}, std::vector<double>{-800.0, 800.0}));
  CHECK(s.all_finite());
  CHECK(s[1] == 1.0);
}

TEST_CASE("activation gradients match central differences", "[activation][gradient]") {
  std::mt19937_64 rng(15);
  auto x = testing::random_tensor({3, 4}, rng);
  // Keep leaky inputs away from the kink.
  for (auto& v : x.data()) v += v > 0 ? 0.1 : -0.1;
  const auto r = testing::random_tensor({3, 4}, rng);

  auto leaky = [&]() { return testing::dot(can::leaky_relu(x, 0.2), r); };
  CHECK(testing::max_rel_error(can::leaky_relu_backward(r, x, 0.2),
                               testing::numeric_grad(leaky, x)) <= 1e-6);

  auto sig = [&]() { return testing::dot(can::sigmoid(x), r); };
  CHECK(testing::max_rel_error(can::sigmoid_backward(r, can::sigmoid(x)),
                               testing::numeric_grad(sig, x)) <= 1e-6);

  auto th = [&]() { return testing::dot(can::tanh(x), r); };
  CHECK(testing::max_rel_error(can::tanh_backward(r, can::tanh(x)),
                               testing::numeric_grad(th, x)) <= 1e-6);

  auto sm = [&]() { return testing::dot(can::softmax(x), r); };
  CHECK(testing::max_rel_error(can::softmax_backward(r, can::softmax(x)),
                               testing::numeric_grad(sm, x)) <= 1e-6);
}

TEST_CASE("kernels also run in single precision", "[float]") {
  std::mt19937_64 rng(16);
  const auto xd = testing::random_tensor({2, 3, 8, 8}, rng);
  const auto wd = testing::random_tensor({4, 3, 4, 4}, rng);
  const auto yd = can::conv2d(xd, wd, Tensor<double>({4}), 2, 1);
  const auto yf = can::conv2d(can::tensor_cast<float>(xd), can::tensor_cast<float>(wd),
                              Tensor<float>({4}), 2, 1);
  for (std::size_t i = 0; i < yd.size(); ++i) CHECK_THAT(yf[i], WithinAbs(yd[i], 1e-4));
}
