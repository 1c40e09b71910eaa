#include <gtest/gtest.h>

#include <cmath>
#include <filesystem>
#include <sstream>

#include "lft/autodiff.hpp"
#include "lft/error.hpp"
#include "lft/tensor.hpp"
#include "oracles.hpp"

using namespace lft;
using lft::testing::check_gradient;
using lft::testing::random_tensor;

namespace {

Tensor from(std::size_t r, std::size_t c, std::vector<double> v) { return Tensor(Shape{r, c}, std::move(v)); }

}  // namespace

TEST(Tensor, ShapeAndDataLengthMustAgree) {
  EXPECT_THROW(Tensor(Shape{2, 3}, std::vector<double>(5)), dimension_error);
  const Tensor t(Shape{2, 3}, 1.5);
  EXPECT_EQ(t.size(), 6u);
  EXPECT_EQ(t.rows(), 2u);
  EXPECT_EQ(t.cols(), 3u);
  EXPECT_FALSE(t.has_grad());
}

TEST(Tensor, ItemRequiresOneElement) {
  EXPECT_DOUBLE_EQ(Tensor::scalar(3.0).item(), 3.0);
  EXPECT_THROW(Tensor::matrix(2, 2).item(), contract_error);
}

TEST(Tensor, Lft1RoundTripF64IsExact) {
  Rng rng(7);
  const Tensor t = random_tensor({3, 4, 5}, rng);
  std::stringstream buf;
  write_tensor(buf, t, Dtype::f64);
  EXPECT_EQ(read_tensor(buf), t);
}

TEST(Tensor, Lft1HeaderLayout) {
  const Tensor t(Shape{2, 1}, std::vector<double>{1.0, -2.0});
  std::stringstream buf;
  write_tensor(buf, t, Dtype::f32);
  const std::string bytes = buf.str();
  ASSERT_EQ(bytes.size(), 4u + 1 + 1 + 2 * 8 + 2 * 4);
  EXPECT_EQ(bytes.substr(0, 4), "LFT1");
  EXPECT_EQ(bytes[4], 0);  // f32
  EXPECT_EQ(bytes[5], 2);  // rank
  EXPECT_EQ(static_cast<unsigned char>(bytes[6]), 2u);
  const Tensor back = read_tensor(buf);
  EXPECT_EQ(back, t);  // both values are exact in f32
}

TEST(Tensor, Lft1RejectsBadMagic) {
  std::stringstream buf("NOPE....");
  EXPECT_THROW(read_tensor(buf), io_error);
}

TEST(Tensor, SaveAndLoadFile) {
  const auto path = std::filesystem::temp_directory_path() / "lft_core_test.lft";
  const Tensor t(Shape{4}, std::vector<double>{1, 2, 3, 4});
  save_tensor(path, t);
  EXPECT_EQ(load_tensor(path), t);
  std::filesystem::remove(path);
}

TEST(Matmul, IdentityLeavesMatrixUnchanged) {
  Tape tape(false);
  const Tensor m = from(2, 2, {1.5, -2, 3, 4});
  const Var out = matmul(tape, tape.constant(from(2, 2, {1, 0, 0, 1})), tape.constant(m));
  EXPECT_EQ(tape.value(out), m);
}

TEST(Matmul, HandSum) {
  Tape tape(false);
  const Var out = matmul(tape, tape.constant(from(2, 2, {1, 2, 3, 4})), tape.constant(from(2, 1, {1, 1})));
  EXPECT_EQ(tape.value(out), from(2, 1, {3, 7}));
}

TEST(Matmul, InnerDimensionMismatchThrows) {
  Tape tape(false);
  EXPECT_THROW(matmul(tape, tape.constant(Tensor::matrix(2, 3)), tape.constant(Tensor::matrix(2, 3))),
               dimension_error);
}

TEST(Matmul, GradientsMatchFiniteDifferences) {
  Rng rng(11);
  Tensor a = random_tensor({5, 7}, rng);
  Tensor b = random_tensor({7, 3}, rng);
  const Tensor w = random_tensor({5, 3}, rng);
  auto loss = [&](Tape& tape) {
    const Var c = matmul(tape, tape.parameter(a), tape.parameter(b));
    return sum(tape, mul(tape, c, tape.constant(w)));
  };
  Tape tape;
  tape.backward(loss(tape));
  auto eval = [&] {
    Tape t(false);
    return t.value(loss(t)).item();
  };
  EXPECT_LT(check_gradient(a, a.grad(), eval).max_rel_err, 1e-6);
  EXPECT_LT(check_gradient(b, b.grad(), eval).max_rel_err, 1e-6);
}

TEST(Elementwise, SiluAtZeroIsZero) {
  Tape tape(false);
  EXPECT_EQ(tape.value(silu(tape, tape.constant(Tensor::scalar(0.0)))).item(), 0.0);
}

TEST(Elementwise, AddZerosIsIdentity) {
  Rng rng(3);
  const Tensor x = random_tensor({3, 4}, rng);
  Tape tape(false);
  EXPECT_EQ(tape.value(add(tape, tape.constant(x), tape.constant(Tensor::matrix(3, 4)))), x);
}

TEST(Elementwise, ShapeMismatchThrows) {
  Tape tape(false);
  EXPECT_THROW(add(tape, tape.constant(Tensor::matrix(3, 4)), tape.constant(Tensor::matrix(4, 3))), dimension_error);
  EXPECT_THROW(mul(tape, tape.constant(Tensor::matrix(3, 4)), tape.constant(Tensor::matrix(2, 1))), dimension_error);
}

TEST(Elementwise, TrailingSingletonBroadcast) {
  Tape tape(false);
  const Var out = add(tape, tape.constant(from(2, 3, {1, 2, 3, 4, 5, 6})), tape.constant(from(2, 1, {10, 20})));
  EXPECT_EQ(tape.value(out), from(2, 3, {11, 12, 13, 24, 25, 26}));
}

TEST(Elementwise, GradientsMatchFiniteDifferences) {
  Rng rng(5);
  Tensor x = random_tensor({4, 6}, rng, 2.0);
  Tensor bias = random_tensor({4, 1}, rng);
  Tensor gain = random_tensor({4, 6}, rng);
  auto loss = [&](Tape& tape) {
    Var h = add(tape, tape.parameter(x), tape.parameter(bias));
    h = silu(tape, h);
    h = mul(tape, h, tape.parameter(gain));
    h = scale(tape, h, -0.7);
    return weighted_mse(tape, h, Tensor(Shape{4, 6}, 0.3), 2.5);
  };
  Tape tape;
  tape.backward(loss(tape));
  auto eval = [&] {
    Tape t(false);
    return t.value(loss(t)).item();
  };
  EXPECT_LT(check_gradient(x, x.grad(), eval).max_rel_err, 1e-6);
  EXPECT_LT(check_gradient(bias, bias.grad(), eval).max_rel_err, 1e-6);
  EXPECT_LT(check_gradient(gain, gain.grad(), eval).max_rel_err, 1e-6);
}

TEST(Backward, SumGivesOnes) {
  Tensor x = Tensor::matrix(2, 3, 0.5);
  Tape tape;
  tape.backward(sum(tape, tape.parameter(x)));
  for (double g : x.grad()) {
    EXPECT_EQ(g, 1.0);
  }
}

TEST(Backward, SumOfSquaresGivesTwoX) {
  Rng rng(2);
  Tensor x = random_tensor({3, 3}, rng);
  Tape tape;
  const Var v = tape.parameter(x);
  tape.backward(sum(tape, mul(tape, v, v)));
  for (std::size_t i = 0; i < x.size(); ++i) {
    EXPECT_DOUBLE_EQ(x.grad()[i], 2.0 * x[i]);
  }
}

TEST(Backward, NonScalarLossIsContractError) {
  Tensor x = Tensor::matrix(2, 2);
  Tape tape;
  EXPECT_THROW(tape.backward(tape.parameter(x)), contract_error);
}

TEST(Backward, GradientsAccumulateUntilZeroed) {
  Tensor x = Tensor::matrix(1, 2, 1.0);
  for (int rep = 0; rep < 2; ++rep) {
    Tape tape;
    tape.backward(sum(tape, tape.parameter(x)));
  }
  EXPECT_EQ(x.grad()[0], 2.0);
  x.zero_grad();
  EXPECT_EQ(x.grad()[0], 0.0);
}

TEST(Conv1d, MatchesDirectSum) {
  Rng rng(9);
  const Tensor x = random_tensor({3, 11}, rng);
  const Tensor w = random_tensor({3, 2, 3}, rng);  // K x Cout x Cin
  const std::size_t dil = 2;
  Tape tape(false);
  const Tensor& y = tape.value(conv1d(tape, tape.constant(x), tape.constant(w), dil));
  ASSERT_EQ(y.shape(), (Shape{2, 11}));
  for (std::size_t o = 0; o < 2; ++o) {
    for (std::ptrdiff_t t = 0; t < 11; ++t) {
      double acc = 0.0;
      for (std::ptrdiff_t k = 0; k < 3; ++k) {
        const std::ptrdiff_t src = t + (k - 1) * static_cast<std::ptrdiff_t>(dil);
        if (src < 0 || src >= 11) continue;
        for (std::size_t i = 0; i < 3; ++i) {
          acc += w[(static_cast<std::size_t>(k) * 2 + o) * 3 + i] * x(i, static_cast<std::size_t>(src));
        }
      }
      EXPECT_NEAR(y(o, static_cast<std::size_t>(t)), acc, 1e-12);
    }
  }
}

TEST(Conv1d, GradientsMatchFiniteDifferences) {
  Rng rng(4);
  Tensor x = random_tensor({3, 9}, rng);
  Tensor w = random_tensor({3, 4, 3}, rng);
  const Tensor target = random_tensor({4, 9}, rng);
  auto loss = [&](Tape& tape) {
    return weighted_mse(tape, conv1d(tape, tape.parameter(x), tape.parameter(w), 4), target, 1.0);
  };
  Tape tape;
  tape.backward(loss(tape));
  auto eval = [&] {
    Tape t(false);
    return t.value(loss(t)).item();
  };
  EXPECT_LT(check_gradient(x, x.grad(), eval).max_rel_err, 1e-6);
  EXPECT_LT(check_gradient(w, w.grad(), eval).max_rel_err, 1e-6);
}

TEST(ConcatRows, StacksAndSplitsGradient) {
  Tensor a = Tensor::matrix(1, 2, 1.0);
  Tensor b = Tensor::matrix(2, 2, 2.0);
  Tape tape;
  const Var c = concat_rows(tape, tape.parameter(a), tape.parameter(b));
  EXPECT_EQ(tape.value(c).shape(), (Shape{3, 2}));
  EXPECT_EQ(tape.value(c)(2, 1), 2.0);
  tape.backward(sum(tape, scale(tape, c, 3.0)));
  EXPECT_EQ(a.grad()[1], 3.0);
  EXPECT_EQ(b.grad()[3], 3.0);
}

TEST(Determinism, SameGraphIsBitIdentical) {
  auto run = [] {
    Rng rng(21);
    Tensor x = random_tensor({8, 16}, rng);
    Tensor w = random_tensor({3, 8, 8}, rng);
    Tape tape;
    tape.backward(sum(tape, silu(tape, conv1d(tape, tape.parameter(x), tape.parameter(w), 2))));
    return std::pair{x.grad(), w.grad()};
  };
  EXPECT_EQ(run(), run());
}
