#include "doctest.h"
#include "framegen/errors.hpp"
#include "framegen/gradcheck.hpp"
#include "support.hpp"

using namespace framegen;
using fgtest::random_tensor;

TEST_SUITE("tensor") {
  TEST_CASE("construction and shape checks") {
    const auto t = Tensor::from({2, 3}, {1, 2, 3, 4, 5, 6});
    CHECK(t.rank() == 2);
    CHECK(t.size() == 6);
    CHECK(t.dim(1) == 3);
    CHECK(t.at(4) == 5.0);
    CHECK_THROWS_AS(Tensor::from({2, 2}, {1, 2, 3}), DimensionError);
    CHECK(Tensor::scalar(2.5).item() == 2.5);
    CHECK_THROWS_AS(t.item(), ContractError);
    CHECK(Tensor::full({3}, 7.0).at(2) == 7.0);
    CHECK(shape_str({2, 3}) == "[2x3]");
  }

  TEST_CASE("interior nodes are immutable") {
    const auto a = random_tensor({2, 2}, 1, 1.0, true);
    auto b = add(a, a);
    CHECK_FALSE(b.is_leaf());
    CHECK_THROWS_AS(b.mutable_data(), ContractError);
  }

  TEST_CASE("backward needs a scalar and accumulates into leaves") {
    auto x = Tensor::from({3}, {1, 2, 3}, true);
    CHECK_THROWS_AS(backward(scale(x, 2.0)), ContractError);
    backward(sum(scale(x, 2.0)));
    backward(sum(scale(x, 2.0)));
    for (double g : x.grad()) CHECK(g == 4.0);
    x.zero_grad();
    for (double g : x.grad()) CHECK(g == 0.0);
  }

  TEST_CASE("shared subexpressions receive the sum of their uses") {
    auto x = Tensor::from({1}, {3.0}, true);
    const auto y = mul(x, x);  // dy/dx = 2x
    backward(sum(add(y, y)));
    CHECK(x.grad()[0] == doctest::Approx(12.0));
  }

  TEST_CASE("no-grad guard stops recording") {
    const auto x = random_tensor({2}, 2, 1.0, true);
    {
      NoGradGuard guard;
      CHECK_FALSE(grad_recording_enabled());
      const auto y = scale(x, 3.0);
      CHECK_FALSE(y.requires_grad());
      CHECK_FALSE(y.depends_on(x));
    }
    CHECK(grad_recording_enabled());
    CHECK(scale(x, 3.0).depends_on(x));
  }

  TEST_CASE("detach and clone are independent leaves") {
    const auto x = random_tensor({2, 2}, 3, 1.0, true);
    const auto y = scale(x, 2.0);
    auto d = y.detach();
    CHECK(d.is_leaf());
    CHECK_FALSE(d.depends_on(x));
    d.mutable_data()[0] = 42.0;
    CHECK(y.at(0) != 42.0);
    auto c = x.clone(true);
    c.mutable_data()[1] = -1.0;
    CHECK(x.at(1) != -1.0);
  }

  TEST_CASE("gradient of a composite expression matches finite differences") {
    const auto x = random_tensor({3, 4}, 4, 1.0, true);
    const auto w = random_tensor({5, 4}, 5);
    const auto f = [&] { return mean(gelu(matmul_nt(x, w))); };
    CHECK(grad_check(f, x) < 1e-7);
  }
}
