#include "latr/tensor.hpp"

#include <cmath>
#include <vector>

#include "doctest.h"
#include "latr/rng.hpp"

using namespace latr;

namespace {

Tensor randn_named(Shape dims, Rng& rng, const char* name) {
  Tensor t = Tensor::randn(std::move(dims), rng, 1.0f, true);
  t.set_name(name);
  return t;
}

}  // namespace

TEST_CASE("matmul identity and hand-computed products") {
  Tape tape;
  Tensor eye({2, 2}, {1, 0, 0, 1});
  Tensor b({2, 2}, {5, 6, 7, 8});
  Tensor c = matmul(tape, eye, b);
  CHECK(c.data()[0] == 5.0f);
  CHECK(c.data()[1] == 6.0f);
  CHECK(c.data()[2] == 7.0f);
  CHECK(c.data()[3] == 8.0f);

  Tensor row({1, 2}, {1, 2});
  Tensor col({2, 1}, {3, 4});
  Tensor prod = matmul(tape, row, col);
  CHECK(prod.item() == 11.0f);
}

TEST_CASE("matmul rejects mismatched inner dims") {
  Tape tape;
  Tensor a = Tensor::zeros({2, 3});
  Tensor b = Tensor::zeros({4, 2});
  CHECK_THROWS_AS(matmul(tape, a, b), ShapeError);
}

TEST_CASE("matmul gradients match central differences") {
  Rng rng(11);
  Tape tape;
  Tensor a = randn_named({4, 5}, rng, "a");
  Tensor b = randn_named({5, 3}, rng, "b");
  Tensor loss = sum_all(tape, matmul(tape, a, b));
  tape.backward(loss);
  const auto report = finite_difference_check(tape, loss, {a, b}, 1e-3, 1e-3);
  CHECK(report.n_checked == 35);
  CHECK(report.max_rel_error <= 1e-3);
}

TEST_CASE("softmax symmetry, stability and normalization") {
  Tape tape;
  Tensor flat({3}, {0, 0, 0});
  Tensor y = softmax(tape, flat, 0);
  for (int i = 0; i < 3; ++i) CHECK(y.data()[i] == doctest::Approx(1.0 / 3).epsilon(1e-6));

  Tensor spiked({3}, {1000, 0, 0});
  Tensor ys = softmax(tape, spiked, 0);
  CHECK(ys.data()[0] == doctest::Approx(1.0));
  CHECK(std::isfinite(ys.data()[0]));
  CHECK(ys.data()[1] == doctest::Approx(0.0));

  Rng rng(3);
  Tensor r = Tensor::randn({7}, rng, 2.0f);
  Tensor yr = softmax(tape, r, 0);
  float sum = 0.0f;
  for (const float v : yr.data()) sum += v;
  CHECK(sum == doctest::Approx(1.0).epsilon(1e-6));
}

TEST_CASE("softmax rejects non-finite input") {
  Tape tape;
  Tensor bad({2}, {std::nanf(""), 0.0f});
  CHECK_THROWS_AS(softmax(tape, bad, 0), NumericError);
}

TEST_CASE("softmax over a middle axis normalizes that axis") {
  Tape tape;
  Rng rng(5);
  Tensor x = Tensor::randn({2, 3, 4}, rng, 1.0f);
  Tensor y = softmax(tape, x, 1);
  for (int o = 0; o < 2; ++o) {
    for (int in = 0; in < 4; ++in) {
      float s = 0.0f;
      for (int i = 0; i < 3; ++i) s += y.data()[o * 12 + i * 4 + in];
      CHECK(s == doctest::Approx(1.0).epsilon(1e-5));
    }
  }
}

TEST_CASE("layer_norm collapses constants and keeps normalized input") {
  Tape tape;
  Tensor gain = Tensor::full({4}, 1.0f);
  Tensor bias = Tensor::zeros({4});
  Tensor constant = Tensor::full({1, 4}, 3.5f);
  Tensor y = layer_norm(tape, constant, gain, bias, 1e-5f);
  for (const float v : y.data()) CHECK(v == doctest::Approx(0.0));

  Tensor g2 = Tensor::full({2}, 1.0f);
  Tensor b2 = Tensor::zeros({2});
  Tensor pm({1, 2}, {1, -1});
  Tensor y2 = layer_norm(tape, pm, g2, b2, 1e-8f);
  CHECK(y2.data()[0] == doctest::Approx(1.0).epsilon(1e-3));
  CHECK(y2.data()[1] == doctest::Approx(-1.0).epsilon(1e-3));
}

TEST_CASE("layer_norm gradients match central differences") {
  Rng rng(17);
  Tape tape;
  Tensor x = randn_named({3, 8}, rng, "x");
  Tensor gain = randn_named({8}, rng, "gain");
  Tensor bias = randn_named({8}, rng, "bias");
  Tensor y = layer_norm(tape, x, gain, bias, 1e-5f);
  Tensor w = randn_named({3, 8}, rng, "w");
  w.set_requires_grad(false);
  Tensor loss = sum_all(tape, mul(tape, y, w));
  tape.backward(loss);
  const auto report = finite_difference_check(tape, loss, {x, gain, bias}, 1e-3, 1e-3);
  CHECK(report.max_rel_error <= 1e-3);
}

TEST_CASE("embedding_lookup gathers rows and scatter-adds gradients") {
  Tape tape;
  Tensor table({3, 2}, {0, 1, 10, 11, 20, 21}, true);
  Tensor out = embedding_lookup(tape, table, {2, 0});
  CHECK(out.data()[0] == 20.0f);
  CHECK(out.data()[1] == 21.0f);
  CHECK(out.data()[2] == 0.0f);
  CHECK(out.data()[3] == 1.0f);

  Tape tape2;
  Tensor repeated = embedding_lookup(tape2, table, {1, 1});
  Tensor loss = sum_all(tape2, repeated);
  tape2.backward(loss);
  CHECK(table.grad_view()[2] == 2.0f);  // row 1, col 0 accumulated twice
  CHECK(table.grad_view()[3] == 2.0f);
  CHECK(table.grad_view()[0] == 0.0f);

  CHECK_THROWS_AS(embedding_lookup(tape, table, {3}), IndexError);
}

TEST_CASE("embedding_lookup gradient check") {
  Rng rng(23);
  Tape tape;
  Tensor table = randn_named({6, 4}, rng, "table");
  Tensor w = Tensor::randn({3, 4}, rng, 1.0f);
  Tensor loss = sum_all(tape, mul(tape, embedding_lookup(tape, table, {4, 1, 4}), w));
  tape.backward(loss);
  const auto report = finite_difference_check(tape, loss, {table}, 1e-3, 1e-3);
  CHECK(report.max_rel_error <= 1e-3);
}

TEST_CASE("cross_entropy special cases") {
  Tape tape;
  // Huge logit on the target class: loss ~ 0.
  Tensor sharp({2, 3}, {50, 0, 0, 0, 50, 0});
  Tensor l0 = cross_entropy_loss(tape, sharp, {0, 1}, -100);
  CHECK(l0.item() == doctest::Approx(0.0).epsilon(1e-6));

  // Uniform logits over V=4: loss = ln 4.
  Tensor uniform = Tensor::zeros({3, 4});
  Tensor l1 = cross_entropy_loss(tape, uniform, {1, 3, 0}, -100);
  CHECK(l1.item() == doctest::Approx(std::log(4.0)).epsilon(1e-6));

  // Ignored positions contribute nothing.
  Tensor l2 = cross_entropy_loss(tape, uniform, {1, -100, 0}, -100);
  CHECK(l2.item() == doctest::Approx(std::log(4.0)).epsilon(1e-6));

  CHECK_THROWS_AS(cross_entropy_loss(tape, uniform, {-100, -100, -100}, -100), ValueError);
}

TEST_CASE("cross_entropy gradient check") {
  Rng rng(31);
  Tape tape;
  Tensor logits = randn_named({5, 10}, rng, "logits");
  Tensor loss = cross_entropy_loss(tape, logits, {3, 9, 0, 0, 7}, -100);
  tape.backward(loss);
  const auto report = finite_difference_check(tape, loss, {logits}, 1e-3, 1e-3);
  CHECK(report.max_rel_error <= 1e-3);
}

TEST_CASE("backward fills ones for sum and 2x for sum of squares") {
  Tape tape;
  Tensor x({2, 3}, {1, 2, 3, 4, 5, 6}, true);
  Tensor loss = sum_all(tape, x);
  tape.backward(loss);
  for (const float g : x.grad_view()) CHECK(g == 1.0f);

  Tape tape2;
  Tensor x2({2}, {2, 3}, true);
  Tensor loss2 = sum_all(tape2, mul(tape2, x2, x2));
  tape2.backward(loss2);
  CHECK(x2.grad_view()[0] == 4.0f);
  CHECK(x2.grad_view()[1] == 6.0f);
}

TEST_CASE("backward rejects non-scalar loss and accumulates across calls") {
  Tape tape;
  Tensor x({2}, {1, 2}, true);
  Tensor y = scale(tape, x, 2.0f);
  CHECK_THROWS_AS(tape.backward(y), ShapeError);

  Tensor loss = sum_all(tape, y);
  tape.backward(loss);
  tape.backward(loss);
  CHECK(x.grad_view()[0] == 4.0f);  // two backward passes accumulate
}

TEST_CASE("backward is deterministic bit for bit") {
  Rng rng(7);
  Tensor a = Tensor::randn({6, 6}, rng, 1.0f, true);
  Tensor b = Tensor::randn({6, 6}, rng, 1.0f, true);
  std::vector<float> first;
  for (int run = 0; run < 2; ++run) {
    a.zero_grad();
    b.zero_grad();
    Tape tape;
    Tensor y = softmax(tape, matmul(tape, a, b), 1);
    Tensor loss = mean_all(tape, mul(tape, y, y));
    tape.backward(loss);
    std::vector<float> grads(a.grad_view().begin(), a.grad_view().end());
    grads.insert(grads.end(), b.grad_view().begin(), b.grad_view().end());
    if (run == 0) {
      first = grads;
    } else {
      CHECK(first == grads);
    }
  }
}

TEST_CASE("frozen leaves receive no gradient") {
  Tape tape;
  Tensor a({2}, {1, 2}, true);
  Tensor b({2}, {3, 4}, false);
  Tensor loss = sum_all(tape, mul(tape, a, b));
  tape.backward(loss);
  CHECK(a.has_grad());
  CHECK_FALSE(b.has_grad());
}

TEST_CASE("adamw zero grad is identity without decay, scales with decay") {
  Rng rng(41);
  Tensor p = Tensor::randn({4}, rng, 1.0f, true);
  const std::vector<float> before(p.data().begin(), p.data().end());

  std::vector<Tensor> params{p};
  AdamWState state;
  AdamWConfig cfg;
  cfg.weight_decay = 0.0f;
  adamw_step(params, state, 0.05f, cfg);
  for (int i = 0; i < 4; ++i) CHECK(p.data()[i] == before[i]);

  cfg.weight_decay = 0.1f;
  AdamWState state2;
  adamw_step(params, state2, 0.05f, cfg);
  for (int i = 0; i < 4; ++i) {
    CHECK(p.data()[i] == doctest::Approx(before[i] * (1.0f - 0.05f * 0.1f)).epsilon(1e-6));
  }
}

TEST_CASE("adamw descends a quadratic bowl") {
  Rng rng(43);
  Tensor w = Tensor::randn({8}, rng, 1.0f, true);
  float norm0 = 0.0f;
  for (const float v : w.data()) norm0 += v * v;
  norm0 = std::sqrt(norm0);

  std::vector<Tensor> params{w};
  AdamWState state;
  AdamWConfig cfg;
  cfg.weight_decay = 0.0f;
  for (int step = 0; step < 200; ++step) {
    w.zero_grad();
    Tape tape;
    Tensor loss = sum_all(tape, mul(tape, w, w));
    tape.backward(loss);
    adamw_step(params, state, 0.05f, cfg);
  }
  float norm1 = 0.0f;
  for (const float v : w.data()) norm1 += v * v;
  norm1 = std::sqrt(norm1);
  CHECK(norm1 <= norm0 / 10.0f);
}

TEST_CASE("finite differences are exact on a linear function") {
  Rng rng(51);
  Tape tape;
  Tensor x = randn_named({5}, rng, "x");
  Tensor loss = sum_all(tape, scale(tape, x, 3.0f));
  tape.backward(loss);
  const auto report = finite_difference_check(tape, loss, {x}, 1e-3, 1e-3);
  CHECK(report.max_rel_error <= 1e-6);
}

TEST_CASE("finite differences pass on a softmax + cross-entropy composite") {
  Rng rng(53);
  Tape tape;
  Tensor x = randn_named({4, 6}, rng, "x");
  Tensor w = randn_named({6, 6}, rng, "w");
  Tensor h = softmax(tape, matmul(tape, x, w), 1);
  Tensor loss = cross_entropy_loss(tape, scale(tape, h, 5.0f), {2, 0, 5, 1}, -100);
  tape.backward(loss);
  const auto report = finite_difference_check(tape, loss, {x, w}, 1e-3, 1e-3);
  CHECK(report.max_rel_error <= 1e-3);
}

TEST_CASE("gradient oracle covers remaining kernels") {
  Rng rng(61);
  Tape tape;
  Tensor a = randn_named({3, 4}, rng, "a");
  Tensor b = randn_named({5, 4}, rng, "b");
  Tensor v = randn_named({5}, rng, "v");
  Tensor scores = matmul_nt(tape, a, b);                 // [3,5]
  Tensor shifted = add_row_vector(tape, scores, v);      // [3,5]
  Tensor act = relu(tape, shifted);
  Tensor left = slice_cols(tape, act, 0, 2);
  Tensor right = slice_cols(tape, act, 2, 5);
  Tensor glued = concat_cols(tape, {left, right});
  Tensor stacked = concat_rows(tape, {glued, glued});
  Tensor pooled = mean_axis0(tape, slice_rows(tape, stacked, 1, 5));
  Tensor loss = mean_all(tape, pooled);
  tape.backward(loss);
  const auto report = finite_difference_check(tape, loss, {a, b, v}, 1e-3, 1e-3);
  CHECK(report.max_rel_error <= 1e-3);
}

TEST_CASE("causal softmax normalizes prefixes and zeroes the future") {
  Rng rng(67);
  Tape tape;
  Tensor scores = randn_named({4, 4}, rng, "scores");
  Tensor y = softmax_causal(tape, scores);
  for (int i = 0; i < 4; ++i) {
    float sum = 0.0f;
    for (int j = 0; j <= i; ++j) sum += y.data()[i * 4 + j];
    CHECK(sum == doctest::Approx(1.0).epsilon(1e-5));
    for (int j = i + 1; j < 4; ++j) CHECK(y.data()[i * 4 + j] == 0.0f);
  }
  Tensor w = Tensor::randn({4, 4}, rng, 1.0f);
  Tensor loss = sum_all(tape, mul(tape, y, w));
  tape.backward(loss);
  const auto report = finite_difference_check(tape, loss, {scores}, 1e-3, 1e-3);
  CHECK(report.max_rel_error <= 1e-3);
}

TEST_CASE("bce_with_logits matches hand values and gradient") {
  Tape tape;
  Tensor big = Tensor::scalar(30.0f);
  big.set_requires_grad(true);
  Tensor l = bce_with_logits(tape, big, 1.0f);
  CHECK(l.item() == doctest::Approx(0.0).epsilon(1e-6));

  Tape tape2;
  Tensor x = Tensor::scalar(0.3f);
  x.set_requires_grad(true);
  x.set_name("x");
  Tensor loss = bce_with_logits(tape2, x, 0.0f);
  tape2.backward(loss);
  const auto report = finite_difference_check(tape2, loss, {x}, 1e-4, 1e-3);
  CHECK(report.max_rel_error <= 1e-3);
}

TEST_CASE("dropout masks deterministically given a seeded rng") {
  Rng rng(71);
  Tape tape;
  Tensor x = Tensor::full({100}, 1.0f, true);
  Tensor y = dropout(tape, x, 0.5f, rng);
  int zeros = 0;
  for (const float v : y.data()) {
    if (v == 0.0f) {
      ++zeros;
    } else {
      CHECK(v == doctest::Approx(2.0f));
    }
  }
  CHECK(zeros > 20);
  CHECK(zeros < 80);
}
