#include <catch2/catch_amalgamated.hpp>
#include <cmath>

#include "support/grad_check.hpp"
#include "translob/nn.hpp"

using namespace translob;
using testsupport::grad_check_ratio;
using testsupport::random_tensor;
using testsupport::random_tensor_away_from_zero;

namespace {

Tensor identity_matrix(int n) {
  Tensor t({n, n});
  for (int i = 0; i < n; ++i) t.at(i, i) = 1.0;
  return t;
}

// Conv kernel [k,C,C] passing channel c of tap `tap` straight through.
Tensor single_tap_identity(int k, int channels, int tap) {
  Tensor w({k, channels, channels});
  for (int c = 0; c < channels; ++c)
    w.data[(static_cast<std::size_t>(tap) * channels + c) * channels + c] = 1.0;
  return w;
}

}  // namespace

TEST_CASE("affine matches hand-computed products") {
  Tape tape;
  Param w("w", identity_matrix(2));
  Param b("b", Tensor({2}, {3.0, 3.0}));
  Param x("x", Tensor({1, 2}, {1.0, 2.0}));

  SECTION("identity weight, no bias") {
    Var y = affine(tape.input(Tensor({3, 2}, {1, 2, 3, 4, 5, 6})), tape.watch(w));
    REQUIRE(y.value().data == std::vector<double>{1, 2, 3, 4, 5, 6});
  }
  SECTION("identity plus shift") {
    Var y = affine(tape.watch(x), tape.watch(w), tape.watch(b));
    REQUIRE(y.value().data == std::vector<double>{4.0, 5.0});
  }
  SECTION("2x2 hand matmul") {
    Param w2("w2", Tensor({2, 2}, {1, 1, 1, -1}));
    Var y = affine(tape.watch(x), tape.watch(w2));
    REQUIRE(y.value().data == std::vector<double>{3.0, -1.0});
  }
  SECTION("shape mismatch") {
    Param w3("w3", Tensor({3, 2}));
    REQUIRE_THROWS_AS(affine(tape.watch(x), tape.watch(w3)), ShapeError);
  }
}

TEST_CASE("affine gradients match finite differences") {
  for (std::uint64_t seed : {1u, 2u, 3u}) {
    Rng rng(seed);
    Param x("x", random_tensor({4, 3}, rng));
    Param w("w", random_tensor({3, 5}, rng));
    Param b("b", random_tensor({5}, rng));
    Tensor proj = random_tensor({4, 5}, rng);
    auto build = [&](Tape& t) {
      return weighted_sum(affine(t.watch(x), t.watch(w), t.watch(b)), proj);
    };
    REQUIRE(grad_check_ratio({&x, &w, &b}, build) <= 1.0);
  }
}

TEST_CASE("relu values and slope") {
  Tape tape;
  Var y = relu(tape.input(Tensor({4}, {1.0, -1.0, 0.0, 2.5})));
  REQUIRE(y.value().data == std::vector<double>{1.0, 0.0, 0.0, 2.5});

  Param x("x", Tensor({1}, {0.5}));
  Tape t2;
  Var loss = sum(relu(t2.watch(x)));
  t2.backward(loss);
  REQUIRE(x.grad.data[0] == 1.0);

  // Subgradient at exactly 0 is 0.
  Param z("z", Tensor({1}, {0.0}));
  Tape t3;
  Var l3 = sum(relu(t3.watch(z)));
  t3.backward(l3);
  REQUIRE(z.grad.data[0] == 0.0);
}

TEST_CASE("relu gradients match finite differences away from the kink") {
  for (std::uint64_t seed : {4u, 5u, 6u}) {
    Rng rng(seed);
    Param x("x", random_tensor_away_from_zero({6, 4}, rng));
    Tensor proj = random_tensor({6, 4}, rng);
    auto build = [&](Tape& t) { return weighted_sum(relu(t.watch(x)), proj); };
    REQUIRE(grad_check_ratio({&x}, build) <= 1.0);
  }
}

TEST_CASE("causal dilated conv1d") {
  const int t_len = 60, channels = 3;
  Rng rng(9);
  Tensor x = random_tensor({t_len, channels}, rng);

  SECTION("current-tap identity kernel reproduces the input for any dilation") {
    for (int dil : {1, 2, 4, 8}) {
      Tape tape;
      Param w("w", single_tap_identity(2, channels, 0));
      Param b("b", Tensor::zeros({channels}));
      Var y = conv1d_causal(tape.input(x), tape.watch(w), tape.watch(b), dil);
      REQUIRE(y.value().data == x.data);
    }
  }

  SECTION("lagged-tap kernel delays an impulse by the dilation") {
    Tensor impulse({t_len, 1});
    impulse.at(50, 0) = 1.0;
    Tape tape;
    Param w("w", single_tap_identity(2, 1, 1));
    Param b("b", Tensor::zeros({1}));
    Var y = conv1d_causal(tape.input(impulse), tape.watch(w), tape.watch(b), 4);
    for (int t = 0; t < t_len; ++t) REQUIRE(y.value().at(t, 0) == (t == 54 ? 1.0 : 0.0));
  }

  SECTION("t=0 reads only the zero padding through lagged taps") {
    Tape tape;
    Rng wr(11);
    Param w("w", random_tensor({2, channels, channels}, wr));
    Param b("b", random_tensor({channels}, wr));
    Var y = conv1d_causal(tape.input(x), tape.watch(w), tape.watch(b), 5);
    for (int co = 0; co < channels; ++co) {
      // w is [k,Cin,Cout]; only tap 0 can contribute at t=0.
      double want = b.value.data[co];
      for (int ci = 0; ci < channels; ++ci)
        want += w.value.data[static_cast<std::size_t>(ci) * channels + co] * x.at(0, ci);
      REQUIRE(y.value().at(0, co) == Catch::Approx(want).margin(1e-12));
    }
  }

  SECTION("future perturbations leave past outputs bitwise unchanged") {
    Rng wr(12);
    Param w("w", random_tensor({2, channels, channels}, wr));
    Param b("b", random_tensor({channels}, wr));
    auto run = [&](const Tensor& in) {
      Tape tape;
      return conv1d_causal(tape.input(in), tape.watch(w), tape.watch(b), 3).value();
    };
    const Tensor base = run(x);
    for (int tp = 10; tp < t_len; tp += 17) {
      Tensor tweaked = x;
      tweaked.at(tp, 1) += 100.0;
      const Tensor got = run(tweaked);
      for (int t = 0; t < tp; ++t)
        for (int c = 0; c < channels; ++c) REQUIRE(got.at(t, c) == base.at(t, c));
    }
  }
}

TEST_CASE("conv1d gradients match finite differences") {
  for (std::uint64_t seed : {7u, 8u, 9u}) {
    Rng rng(seed);
    Param x("x", random_tensor({12, 3}, rng));
    Param w("w", random_tensor({2, 3, 4}, rng));
    Param b("b", random_tensor({4}, rng));
    Tensor proj = random_tensor({12, 4}, rng);
    auto build = [&](Tape& t) {
      return weighted_sum(conv1d_causal(t.watch(x), t.watch(w), t.watch(b), 2), proj);
    };
    REQUIRE(grad_check_ratio({&x, &w, &b}, build) <= 1.0);
  }
}

TEST_CASE("layer_norm values") {
  SECTION("constant row collapses to zero") {
    Tape tape;
    Param g("g", Tensor::full({4}, 1.0));
    Param b("b", Tensor::zeros({4}));
    Var y = layer_norm(tape.input(Tensor::full({2, 4}, 3.5)), tape.watch(g), tape.watch(b));
    for (double v : y.value().data) REQUIRE(v == 0.0);
  }
  SECTION("unit-variance row with eps=0 is unchanged") {
    Tape tape;
    Param g("g", Tensor::full({2}, 1.0));
    Param b("b", Tensor::zeros({2}));
    Var y = layer_norm(tape.input(Tensor({1, 2}, {1.0, -1.0})), tape.watch(g), tape.watch(b), 0.0);
    REQUIRE(y.value().data[0] == Catch::Approx(1.0).margin(1e-12));
    REQUIRE(y.value().data[1] == Catch::Approx(-1.0).margin(1e-12));
  }
  SECTION("zero gain broadcasts the bias") {
    Tape tape;
    Param g("g", Tensor::zeros({3}));
    Param b("b", Tensor({3}, {5.0, 6.0, 7.0}));
    Rng rng(13);
    Var y = layer_norm(tape.input(random_tensor({4, 3}, rng)), tape.watch(g), tape.watch(b));
    for (int i = 0; i < 4; ++i)
      for (int j = 0; j < 3; ++j) REQUIRE(y.value().at(i, j) == b.value.data[j]);
  }
  SECTION("output rows have near-zero mean and near-unit population variance") {
    // The eps in the denominator biases the output variance by ~eps/var, so
    // the 1e-6 tolerance needs input rows with variance >= 10.
    Tape tape;
    Param g("g", Tensor::full({15}, 1.0));
    Param b("b", Tensor::zeros({15}));
    Rng rng(14);
    Var y = layer_norm(tape.input(random_tensor({20, 15}, rng, 10.0)), tape.watch(g),
                       tape.watch(b));
    for (int i = 0; i < 20; ++i) {
      double mu = 0.0, var = 0.0;
      for (int j = 0; j < 15; ++j) mu += y.value().at(i, j);
      mu /= 15;
      for (int j = 0; j < 15; ++j) {
        const double c = y.value().at(i, j) - mu;
        var += c * c;
      }
      var /= 15;
      REQUIRE(std::abs(mu) < 1e-10);
      REQUIRE(std::abs(var - 1.0) < 1e-6);
    }
  }
  SECTION("eps=0 normalizes to exactly unit variance") {
    Tape tape;
    Param g("g", Tensor::full({15}, 1.0));
    Param b("b", Tensor::zeros({15}));
    Rng rng(15);
    Var y = layer_norm(tape.input(random_tensor({8, 15}, rng)), tape.watch(g), tape.watch(b),
                       0.0);
    for (int i = 0; i < 8; ++i) {
      double mu = 0.0, var = 0.0;
      for (int j = 0; j < 15; ++j) mu += y.value().at(i, j);
      mu /= 15;
      for (int j = 0; j < 15; ++j) {
        const double c = y.value().at(i, j) - mu;
        var += c * c;
      }
      var /= 15;
      REQUIRE(std::abs(mu) < 1e-10);
      REQUIRE(std::abs(var - 1.0) < 1e-12);
    }
  }
}

TEST_CASE("layer_norm gradients match finite differences") {
  for (std::uint64_t seed : {15u, 16u, 17u}) {
    Rng rng(seed);
    Param x("x", random_tensor({5, 7}, rng));
    Param g("g", random_tensor({7}, rng));
    Param b("b", random_tensor({7}, rng));
    Tensor proj = random_tensor({5, 7}, rng);
    auto build = [&](Tape& t) {
      return weighted_sum(layer_norm(t.watch(x), t.watch(g), t.watch(b)), proj);
    };
    REQUIRE(grad_check_ratio({&x, &g, &b}, build) <= 1.0);
  }
}

TEST_CASE("masked scaled attention values") {
  SECTION("row 0 can only attend to itself") {
    Rng rng(18);
    Tape tape;
    Tensor q = random_tensor({5, 3}, rng), k = random_tensor({5, 3}, rng),
           v = random_tensor({5, 3}, rng);
    AttentionResult r = masked_scaled_attention(tape.input(q), tape.input(k), tape.input(v), 0.7);
    REQUIRE(r.weights.at(0, 0) == 1.0);
    for (int j = 1; j < 5; ++j) REQUIRE(r.weights.at(0, j) == 0.0);
    for (int c = 0; c < 3; ++c) REQUIRE(r.out.value().at(0, c) == v.at(0, c));
  }

  SECTION("zero queries give uniform attention over the causal prefix") {
    Rng rng(19);
    Tape tape;
    Tensor q = Tensor::zeros({6, 2});
    Tensor k = random_tensor({6, 2}, rng), v = random_tensor({6, 2}, rng);
    AttentionResult r = masked_scaled_attention(tape.input(q), tape.input(k), tape.input(v), 1.0);
    for (int i = 0; i < 6; ++i)
      for (int j = 0; j < 6; ++j) {
        if (j <= i)
          REQUIRE(r.weights.at(i, j) == Catch::Approx(1.0 / (i + 1)).margin(1e-12));
        else
          REQUIRE(r.weights.at(i, j) == 0.0);
      }
  }

  SECTION("scalar softmax hand computation") {
    Tape tape;
    Tensor q({2, 1}, {1.0, 1.0}), k({2, 1}, {1.0, 2.0}), v({2, 1}, {10.0, 20.0});
    AttentionResult r = masked_scaled_attention(tape.input(q), tape.input(k), tape.input(v), 1.0);
    REQUIRE(r.weights.at(1, 0) == Catch::Approx(0.2689).margin(1e-4));
    REQUIRE(r.weights.at(1, 1) == Catch::Approx(0.7311).margin(1e-4));
    REQUIRE(r.out.value().at(1, 0) == Catch::Approx(17.311).margin(1e-3));
  }

  SECTION("rows are probability vectors and masked mass is exactly zero") {
    Rng rng(20);
    Tape tape;
    AttentionResult r = masked_scaled_attention(tape.input(random_tensor({40, 5}, rng)),
                                                tape.input(random_tensor({40, 5}, rng)),
                                                tape.input(random_tensor({40, 5}, rng)),
                                                1.0 / std::sqrt(15.0));
    for (int i = 0; i < 40; ++i) {
      double s = 0.0;
      for (int j = 0; j < 40; ++j) {
        REQUIRE(r.weights.at(i, j) >= 0.0);
        if (j > i) REQUIRE(r.weights.at(i, j) == 0.0);
        s += r.weights.at(i, j);
      }
      REQUIRE(std::abs(s - 1.0) < 1e-9);
    }
  }

  SECTION("perturbing a future row leaves earlier outputs bitwise unchanged") {
    Rng rng(21);
    Tensor q = random_tensor({10, 4}, rng), k = random_tensor({10, 4}, rng),
           v = random_tensor({10, 4}, rng);
    auto run = [&](const Tensor& qq, const Tensor& kk, const Tensor& vv) {
      Tape tape;
      return masked_scaled_attention(tape.input(qq), tape.input(kk), tape.input(vv), 0.5)
          .out.value();
    };
    const Tensor base = run(q, k, v);
    for (int tp = 1; tp < 10; tp += 3) {
      for (int which = 0; which < 3; ++which) {
        Tensor q2 = q, k2 = k, v2 = v;
        (which == 0 ? q2 : which == 1 ? k2 : v2).at(tp, 2) += 50.0;
        const Tensor got = run(q2, k2, v2);
        for (int i = 0; i < tp; ++i)
          for (int c = 0; c < 4; ++c) REQUIRE(got.at(i, c) == base.at(i, c));
      }
    }
  }
}

TEST_CASE("masked attention gradients match finite differences") {
  for (std::uint64_t seed : {22u, 23u, 24u}) {
    Rng rng(seed);
    Param q("q", random_tensor({7, 3}, rng));
    Param k("k", random_tensor({7, 3}, rng));
    Param v("v", random_tensor({7, 3}, rng));
    Tensor proj = random_tensor({7, 3}, rng);
    auto build = [&](Tape& t) {
      return weighted_sum(
          masked_scaled_attention(t.watch(q), t.watch(k), t.watch(v), 0.6).out, proj);
    };
    REQUIRE(grad_check_ratio({&q, &k, &v}, build) <= 1.0);
  }
}

TEST_CASE("multi-head attention values") {
  const int d = 6, heads = 2, dh = 3, n = 5;

  SECTION("zero value projections annihilate the output") {
    Rng rng(25);
    Tape tape;
    std::vector<AttentionHeadVars> hv;
    std::vector<Param> store;
    store.reserve(6);
    for (int a = 0; a < heads; ++a) {
      store.emplace_back("wq", random_tensor({d, dh}, rng));
      store.emplace_back("wk", random_tensor({d, dh}, rng));
      store.emplace_back("wv", Tensor::zeros({d, dh}));
    }
    for (int a = 0; a < heads; ++a)
      hv.push_back({tape.watch(store[3 * a]), tape.watch(store[3 * a + 1]),
                    tape.watch(store[3 * a + 2])});
    Param wo("wo", random_tensor({d, d}, rng));
    MultiHeadResult r =
        multi_head_attention(tape.input(random_tensor({n, d}, rng)), hv, tape.watch(wo), 0.4);
    for (double x : r.out.value().data) REQUIRE(x == 0.0);
  }

  SECTION("single entity attends only to itself") {
    Rng rng(26);
    Tape tape;
    Tensor x = random_tensor({1, d}, rng);
    std::vector<Param> store;
    std::vector<AttentionHeadVars> hv;
    for (int a = 0; a < heads; ++a) {
      store.emplace_back("wq", random_tensor({d, dh}, rng));
      store.emplace_back("wk", random_tensor({d, dh}, rng));
      store.emplace_back("wv", random_tensor({d, dh}, rng));
    }
    for (int a = 0; a < heads; ++a)
      hv.push_back({tape.watch(store[3 * a]), tape.watch(store[3 * a + 1]),
                    tape.watch(store[3 * a + 2])});
    Param wo("wo", random_tensor({d, d}, rng));
    MultiHeadResult r = multi_head_attention(tape.input(x), hv, tape.watch(wo), 0.4);
    // Expected: concat of V_a rows (attention weight 1) times W^O.
    Tensor cat({1, d});
    for (int a = 0; a < heads; ++a)
      for (int c = 0; c < dh; ++c) {
        double acc = 0.0;
        for (int j = 0; j < d; ++j) acc += x.at(0, j) * store[3 * a + 2].value.at(j, c);
        cat.at(0, a * dh + c) = acc;
      }
    for (int c = 0; c < d; ++c) {
      double want = 0.0;
      for (int j = 0; j < d; ++j) want += cat.at(0, j) * wo.value.at(j, c);
      REQUIRE(r.out.value().at(0, c) == Catch::Approx(want).margin(1e-12));
    }
    REQUIRE(r.head_weights[0].at(0, 0) == 1.0);
  }

  SECTION("uniform causal attention averages the prefix") {
    // One head, zero Q/K, identity V and output mixing: row i becomes the
    // mean of input rows 0..i.
    Rng rng(27);
    Tape tape;
    Tensor x = random_tensor({n, d}, rng);
    Param wq("wq", Tensor::zeros({d, d}));
    Param wk("wk", Tensor::zeros({d, d}));
    Param wv("wv", identity_matrix(d));
    Param wo("wo", identity_matrix(d));
    std::vector<AttentionHeadVars> hv{{tape.watch(wq), tape.watch(wk), tape.watch(wv)}};
    MultiHeadResult r = multi_head_attention(tape.input(x), hv, tape.watch(wo), 1.0);
    for (int i = 0; i < n; ++i)
      for (int c = 0; c < d; ++c) {
        double mean = 0.0;
        for (int j = 0; j <= i; ++j) mean += x.at(j, c);
        mean /= (i + 1);
        REQUIRE(r.out.value().at(i, c) == Catch::Approx(mean).margin(1e-12));
      }
  }
}

TEST_CASE("multi-head attention gradients match finite differences") {
  const int d = 4, dh = 2, n = 6;
  for (std::uint64_t seed : {28u, 29u}) {
    Rng rng(seed);
    Param x("x", random_tensor({n, d}, rng));
    Param wq1("wq1", random_tensor({d, dh}, rng)), wk1("wk1", random_tensor({d, dh}, rng)),
        wv1("wv1", random_tensor({d, dh}, rng));
    Param wq2("wq2", random_tensor({d, dh}, rng)), wk2("wk2", random_tensor({d, dh}, rng)),
        wv2("wv2", random_tensor({d, dh}, rng));
    Param wo("wo", random_tensor({d, d}, rng));
    Tensor proj = random_tensor({n, d}, rng);
    auto build = [&](Tape& t) {
      std::vector<AttentionHeadVars> hv{{t.watch(wq1), t.watch(wk1), t.watch(wv1)},
                                        {t.watch(wq2), t.watch(wk2), t.watch(wv2)}};
      return weighted_sum(
          multi_head_attention(t.watch(x), hv, t.watch(wo), 1.0 / std::sqrt(d)).out, proj);
    };
    REQUIRE(grad_check_ratio({&x, &wq1, &wk1, &wv1, &wq2, &wk2, &wv2, &wo}, build) <= 1.0);
  }
}

TEST_CASE("softmax values and properties") {
  SECTION("uniform input maps to uniform probabilities") {
    Tape tape;
    Var y = softmax(tape.input(Tensor::full({1, 4}, 2.5)));
    for (double v : y.value().data) REQUIRE(v == Catch::Approx(0.25).margin(1e-15));
  }
  SECTION("large gaps saturate") {
    Tape tape;
    Var y = softmax(tape.input(Tensor({1, 2}, {0.0, 60.0})));
    REQUIRE(y.value().data[0] < 1e-20);
    REQUIRE(y.value().data[1] == Catch::Approx(1.0).margin(1e-20));
  }
  SECTION("hand-evaluated 3-vector") {
    Tape tape;
    Var y = softmax(tape.input(Tensor({1, 3}, {1.0, 2.0, 3.0})));
    REQUIRE(y.value().data[0] == Catch::Approx(0.0900).margin(5e-5));
    REQUIRE(y.value().data[1] == Catch::Approx(0.2447).margin(5e-5));
    REQUIRE(y.value().data[2] == Catch::Approx(0.6652).margin(5e-5));
  }
  SECTION("shift invariance within 1e-12") {
    Rng rng(30);
    for (int trial = 0; trial < 10; ++trial) {
      Tensor x = random_tensor({3, 6}, rng);
      Tensor shifted = x;
      const double c = rng.uniform(-5.0, 5.0);
      for (double& v : shifted.data) v += c;
      Tape tape;
      Var a = softmax(tape.input(x));
      Var b = softmax(tape.input(shifted));
      for (std::int64_t i = 0; i < a.value().numel(); ++i)
        REQUIRE(a.value().data[i] == Catch::Approx(b.value().data[i]).margin(1e-12));
    }
  }
}

TEST_CASE("softmax gradients match finite differences") {
  for (std::uint64_t seed : {31u, 32u}) {
    Rng rng(seed);
    Param x("x", random_tensor({4, 5}, rng));
    Tensor proj = random_tensor({4, 5}, rng);
    auto build = [&](Tape& t) { return weighted_sum(softmax(t.watch(x)), proj); };
    REQUIRE(grad_check_ratio({&x}, build) <= 1.0);
  }
}

TEST_CASE("dropout") {
  Rng master(33);
  SECTION("rate zero and eval mode are identities") {
    Rng rng = master.fork(1);
    Tape tape;
    Tensor x = random_tensor({8, 8}, rng);
    Var a = dropout(tape.input(x), 0.0, rng, true);
    Var b = dropout(tape.input(x), 0.9, rng, false);
    REQUIRE(a.value().data == x.data);
    REQUIRE(b.value().data == x.data);
  }
  SECTION("kept fraction concentrates around 1-rate") {
    Rng rng = master.fork(2);
    Tape tape;
    Tensor x = Tensor::full({1000, 1000}, 1.0);
    Var y = dropout(tape.input(x), 0.1, rng, true);
    std::int64_t kept = 0;
    for (double v : y.value().data) kept += (v != 0.0);
    const double frac = static_cast<double>(kept) / 1e6;
    REQUIRE(frac > 0.898);
    REQUIRE(frac < 0.902);
    // Survivors are scaled by 1/(1-rate).
    for (double v : y.value().data)
      if (v != 0.0) REQUIRE(v == Catch::Approx(1.0 / 0.9).margin(1e-15));
  }
  SECTION("backward reuses the forward mask") {
    Rng rng = master.fork(3);
    Param x("x", Tensor::full({100}, 2.0));
    Tape tape;
    Var y = dropout(tape.watch(x), 0.3, rng, true);
    Var loss = sum(y);
    tape.backward(loss);
    for (std::int64_t i = 0; i < x.value.numel(); ++i) {
      const double expected = y.value().data[i] == 0.0 ? 0.0 : 1.0 / 0.7;
      REQUIRE(x.grad.data[i] == Catch::Approx(expected).margin(1e-15));
    }
  }
  SECTION("rate must stay below 1") {
    Rng rng = master.fork(4);
    Tape tape;
    Var x = tape.input(Tensor({2}, {1.0, 2.0}));
    REQUIRE_THROWS_AS(dropout(x, 1.0, rng, true), ValidationError);
  }
}

TEST_CASE("cross entropy loss values") {
  SECTION("perfect predictions give zero loss") {
    Tape tape;
    Var p = tape.input(Tensor({2, 3}, {1, 0, 0, 0, 0, 1}));
    Var loss = cross_entropy_loss(p, {0, 2});
    REQUIRE(loss.value().data[0] == Catch::Approx(0.0).margin(1e-12));
  }
  SECTION("uniform probabilities give ln 3") {
    Tape tape;
    Var p = tape.input(Tensor::full({4, 3}, 1.0 / 3.0));
    Var loss = cross_entropy_loss(p, {0, 1, 2, 1});
    REQUIRE(loss.value().data[0] == Catch::Approx(std::log(3.0)).margin(1e-12));
  }
  SECTION("single row -ln 0.5") {
    Tape tape;
    Var p = tape.input(Tensor({1, 3}, {0.2, 0.5, 0.3}));
    Var loss = cross_entropy_loss(p, {1});
    REQUIRE(loss.value().data[0] == Catch::Approx(0.6931).margin(1e-4));
  }
  SECTION("label out of range") {
    Tape tape;
    Var p = tape.input(Tensor({1, 3}, {0.2, 0.5, 0.3}));
    REQUIRE_THROWS_AS(cross_entropy_loss(p, {3}), ValidationError);
  }
  SECTION("l2 term adds lambda * sum of squares") {
    Tape tape;
    Param w("w", Tensor({2, 2}, {1.0, 2.0, 3.0, 4.0}));
    Var p = tape.input(Tensor({1, 3}, {1.0, 0.0, 0.0}));
    Var loss = cross_entropy_loss(p, {0}, 0.01, {tape.watch(w)});
    REQUIRE(loss.value().data[0] == Catch::Approx(0.01 * 30.0).margin(1e-12));
    tape.backward(loss);
    for (std::int64_t i = 0; i < 4; ++i)
      REQUIRE(w.grad.data[i] == Catch::Approx(0.02 * w.value.data[i]).margin(1e-12));
  }
}

TEST_CASE("softmax + cross entropy composition gradients match finite differences") {
  for (std::uint64_t seed : {34u, 35u, 36u}) {
    Rng rng(seed);
    Param logits("logits", random_tensor({5, 3}, rng));
    Param w("w", random_tensor({3, 2}, rng));
    const std::vector<int> labels{0, 2, 1, 1, 0};
    auto build = [&](Tape& t) {
      return cross_entropy_loss(softmax(t.watch(logits)), labels, 1e-3, {t.watch(w)});
    };
    REQUIRE(grad_check_ratio({&logits, &w}, build) <= 1.0);
  }
}

TEST_CASE("reshape and concat route gradients") {
  Rng rng(37);
  Param a("a", random_tensor({3, 2}, rng));
  Param b("b", random_tensor({3, 4}, rng));
  Tensor proj_cols = random_tensor({3, 6}, rng);
  auto build_cols = [&](Tape& t) {
    return weighted_sum(concat_cols({t.watch(a), t.watch(b)}), proj_cols);
  };
  REQUIRE(grad_check_ratio({&a, &b}, build_cols) <= 1.0);

  Param c("c", random_tensor({2, 3}, rng));
  Tensor proj_flat = random_tensor({1, 6}, rng);
  auto build_flat = [&](Tape& t) {
    return weighted_sum(reshape(t.watch(c), {1, 6}), proj_flat);
  };
  REQUIRE(grad_check_ratio({&c}, build_flat) <= 1.0);

  Param d("d", random_tensor({2, 3}, rng));
  Param e("e", random_tensor({4, 3}, rng));
  Tensor proj_rows = random_tensor({6, 3}, rng);
  auto build_rows = [&](Tape& t) {
    return weighted_sum(concat_rows({t.watch(d), t.watch(e)}), proj_rows);
  };
  REQUIRE(grad_check_ratio({&d, &e}, build_rows) <= 1.0);
}
