#include <catch2/catch_amalgamated.hpp>

#include "support/grad_check.hpp"
#include "translob/autodiff.hpp"
#include "translob/nn.hpp"
#include "translob/rng.hpp"
#include "translob/tensor.hpp"

using namespace translob;

TEST_CASE("tensor shape bookkeeping") {
  Tensor t({2, 3});
  REQUIRE(t.numel() == 6);
  REQUIRE(t.rank() == 2);
  t.at(1, 2) = 5.0;
  REQUIRE(t.data[5] == 5.0);

  REQUIRE_THROWS_AS(Tensor({0, 3}), ShapeError);
  REQUIRE_THROWS_AS(Tensor({2, 2}, {1.0, 2.0}), ShapeError);
}

TEST_CASE("checked mode rejects non-finite values at op boundaries") {
  checked_mode() = true;
  Tape tape;
  Tensor bad({2});
  bad.data[0] = std::numeric_limits<double>::quiet_NaN();
  Var x = tape.input(bad);
  REQUIRE_THROWS_AS(relu(x), ValidationError);
  checked_mode() = false;
  REQUIRE_NOTHROW(relu(x));
}

TEST_CASE("backward of a plain sum is all ones") {
  Param w("w", Tensor({2, 3}, {1, -2, 3, 4, -5, 6}));
  Tape tape;
  Var loss = sum(tape.watch(w));
  tape.backward(loss);
  for (double g : w.grad.data) REQUIRE(g == 1.0);
}

TEST_CASE("backward of half squared norm recovers the input") {
  Rng rng(7);
  Param x("x", testsupport::random_tensor({4, 5}, rng));
  Tape tape;
  Var loss = scale(sum(square(tape.watch(x))), 0.5);
  tape.backward(loss);
  for (std::int64_t i = 0; i < x.value.numel(); ++i)
    REQUIRE(x.grad.data[i] == Catch::Approx(x.value.data[i]).margin(1e-12));
}

TEST_CASE("params not reaching the loss end with zero grad") {
  Param used("used", Tensor({2}, {1.0, 2.0}));
  Param unused("unused", Tensor({2}, {3.0, 4.0}));
  unused.grad.data = {9.0, 9.0};  // stale garbage that backward must clear
  Tape tape;
  Var loss = sum(tape.watch(used));
  tape.watch(unused);
  tape.backward(loss);
  REQUIRE(unused.grad.data[0] == 0.0);
  REQUIRE(unused.grad.data[1] == 0.0);
  REQUIRE(used.grad.data[0] == 1.0);
}

TEST_CASE("watching a param twice reuses the same node") {
  Param w("w", Tensor({2}, {1.0, 2.0}));
  Tape tape;
  Var a = tape.watch(w);
  Var b = tape.watch(w);
  REQUIRE(a.id == b.id);
  // Using the shared node twice doubles the gradient.
  Var loss = sum(add(a, b));
  tape.backward(loss);
  REQUIRE(w.grad.data[0] == 2.0);
}

TEST_CASE("backward guards") {
  Param w("w", Tensor({2}, {1.0, 2.0}));
  SECTION("non-scalar root") {
    Tape tape;
    Var x = tape.watch(w);
    REQUIRE_THROWS_AS(tape.backward(x), ShapeError);
  }
  SECTION("second backward") {
    Tape tape;
    Var loss = sum(tape.watch(w));
    tape.backward(loss);
    REQUIRE_THROWS_AS(tape.backward(loss), Error);
  }
  SECTION("read-only tape") {
    Tape tape;
    Var loss = sum(tape.watch_read_only(w));
    REQUIRE_THROWS_AS(tape.backward(loss), Error);
  }
}

TEST_CASE("rng streams are reproducible and forks are decorrelated") {
  Rng a(42), b(42);
  for (int i = 0; i < 100; ++i) REQUIRE(a.uniform() == b.uniform());

  Rng root(42);
  Rng f1 = root.fork(1), f2 = root.fork(2);
  REQUIRE(f1.uniform() != f2.uniform());

  Rng n(3);
  double mean = 0.0;
  const int trials = 20000;
  for (int i = 0; i < trials; ++i) mean += n.normal();
  mean /= trials;
  REQUIRE(std::abs(mean) < 0.05);
}
