#include "latr/layout.hpp"

#include <algorithm>
#include <set>

#include "doctest.h"
#include "latr/corpus.hpp"
#include "latr/tokenizer.hpp"

using namespace latr;

namespace {

Vocabulary tiny_vocab() {
  OcrDocument doc;
  doc.id = "v";
  doc.page_w = doc.page_h = 100;
  for (const char* w : {"aa", "bb", "cc", "dd", "ee", "ff", "gg", "hh"}) {
    doc.words.push_back({w, 0, 0, 1, 1});
  }
  return build_vocabulary({doc}, 40, 8);
}

}  // namespace

TEST_CASE("quantize_box scales, rounds and clamps") {
  const auto full = quantize_box(0, 0, 800, 600, 800, 600);
  CHECK(full == make_box(0, 0, 1000, 1000));
  CHECK(full.w == 1000);
  CHECK(full.h == 1000);

  const auto mid = quantize_box(200, 150, 400, 300, 800, 600);
  CHECK(mid.x0 == 250);
  CHECK(mid.y0 == 250);
  CHECK(mid.x1 == 500);
  CHECK(mid.y1 == 500);

  // Swapped corners normalize to the same box.
  CHECK(quantize_box(400, 300, 200, 150, 800, 600) == mid);

  // Out-of-page coordinates clamp.
  CHECK(quantize_box(-50, 0, 900, 600, 800, 600).x0 == 0);
  CHECK(quantize_box(-50, 0, 900, 600, 800, 600).x1 == 1000);

  CHECK_THROWS_AS(quantize_box(0, 0, 1e300 * 1e300, 1, 10, 10), NumericError);
}

TEST_CASE("quantize_box is idempotent over a 1000x1000 page") {
  Rng rng(5);
  for (int i = 0; i < 100; ++i) {
    const auto b = quantize_box(rng.next_double() * 640, rng.next_double() * 480,
                                rng.next_double() * 640, rng.next_double() * 480, 640, 480);
    const auto again = quantize_box(b.x0, b.y0, b.x1, b.y1, 1000, 1000);
    CHECK(again == b);
  }
}

TEST_CASE("question_box is the fixed whole-page box") {
  const auto q = question_box();
  CHECK(q.x0 == 0);
  CHECK(q.y0 == 0);
  CHECK(q.x1 == 1000);
  CHECK(q.y1 == 1000);
  CHECK(q.w == 1000);
  CHECK(q.h == 1000);
}

TEST_CASE("embed_token sums exactly the seven lookups") {
  Rng rng(7);
  SpatialEmbedder e(10, 4, kCoordBins, rng, 0.0f);
  // Only the token table is nonzero: output equals the token row.
  for (int j = 0; j < 4; ++j) e.token.data()[3 * 4 + j] = static_cast<float>(j + 1);
  Tape tape;
  const Tensor out = embed_token(tape, e, 3, make_box(10, 20, 30, 40));
  for (int j = 0; j < 4; ++j) CHECK(out.data()[j] == doctest::Approx(j + 1));

  // Degenerate box contributes E_w(0) and E_h(0).
  e.w.data()[0 * 4 + 0] = 5.0f;
  e.h.data()[0 * 4 + 0] = 7.0f;
  Tape tape2;
  const Tensor deg = embed_token(tape2, e, 3, make_box(50, 60, 50, 60));
  CHECK(deg.data()[0] == doctest::Approx(1 + 5 + 7));
}

TEST_CASE("embed_token is linear in the tables") {
  Rng rng(8);
  SpatialEmbedder e(6, 8, kCoordBins, rng, 0.1f);
  Tape tape;
  const Tensor once = embed_token(tape, e, 2, make_box(1, 2, 3, 4));
  for (Tensor t : {e.token, e.x, e.y, e.w, e.h}) {
    for (auto& v : t.data()) v *= 2.0f;
  }
  Tape tape2;
  const Tensor twice = embed_token(tape2, e, 2, make_box(1, 2, 3, 4));
  for (int j = 0; j < 8; ++j) CHECK(twice.data()[j] == doctest::Approx(2.0f * once.data()[j]));
}

TEST_CASE("embed_token gradients scatter into all seven rows") {
  Rng rng(9);
  SpatialEmbedder e(6, 4, kCoordBins, rng, 0.1f);
  Tape tape;
  const Tensor out = embed_token(tape, e, 2, make_box(1, 2, 3, 4));
  const Tensor loss = sum_all(tape, out);
  tape.backward(loss);
  const auto report =
      finite_difference_check(tape, loss, {e.token, e.x, e.y, e.w, e.h}, 1e-3, 1e-3, 64, &rng);
  CHECK(report.max_rel_error <= 1e-3);
  // E_x rows 1 and 3 each received the upstream ones.
  for (int j = 0; j < 4; ++j) {
    CHECK(e.x.grad_view()[1 * 4 + j] == 1.0f);
    CHECK(e.x.grad_view()[3 * 4 + j] == 1.0f);
  }
}

TEST_CASE("embed rejects out-of-range bins") {
  Rng rng(10);
  SpatialEmbedder e(6, 4, kCoordBins, rng, 0.1f);
  Tape tape;
  BoundingBox bad = make_box(0, 0, 1000, 1000);
  bad.x1 = 1001;  // bypass make_box to simulate corrupt input
  bad.w = 1001;
  CHECK_THROWS_AS(e.embed(tape, {1}, {bad}), IndexError);
}

TEST_CASE("select_mask_spans masks round(rate*n) tokens") {
  Rng rng(11);
  const auto spans = select_mask_spans(20, 0.15, 3, 100, rng);
  int total = 0;
  for (const auto& s : spans) total += s.length;
  CHECK(total == 3);

  CHECK(select_mask_spans(1, 0.15, 3, 100, rng).empty());
  CHECK(select_mask_spans(6, 0.15, 3, 100, rng).empty());
  CHECK_FALSE(select_mask_spans(7, 0.15, 3, 100, rng).empty());
}

TEST_CASE("select_mask_spans produces disjoint ordered spans with sequential sentinels") {
  Rng rng(13);
  for (int trial = 0; trial < 500; ++trial) {
    const int n = 7 + static_cast<int>(rng.below(194));
    const auto spans = select_mask_spans(n, 0.15, 3, 100, rng);
    int prev_end = -1;
    for (size_t i = 0; i < spans.size(); ++i) {
      CHECK(spans[i].sentinel_index == static_cast<int>(i));
      CHECK(spans[i].length >= 1);
      CHECK(spans[i].start > prev_end);
      prev_end = spans[i].start + spans[i].length - 1;
      CHECK(prev_end < n);
    }
  }
}

TEST_CASE("select_mask_spans empirical corruption fraction") {
  Rng rng(17);
  int64_t masked = 0, total = 0;
  for (int trial = 0; trial < 10000; ++trial) {
    const auto spans = select_mask_spans(200, 0.15, 3, 100, rng);
    for (const auto& s : spans) masked += s.length;
    total += 200;
  }
  const double fraction = static_cast<double>(masked) / static_cast<double>(total);
  CHECK(fraction == doctest::Approx(0.15).epsilon(0.0667));  // 0.15 +/- 0.01
}

TEST_CASE("select_mask_spans raises when sentinels run out") {
  Rng rng(19);
  CHECK_THROWS_AS(select_mask_spans(200, 0.15, 1, 2, rng), ValueError);
}

TEST_CASE("apply_masking builds loose boxes per the min/max rule") {
  const auto vocab = tiny_vocab();
  const std::vector<int> ids = {4, 5, 6, 7};
  const std::vector<BoundingBox> boxes = {
      make_box(10, 10, 50, 20), make_box(60, 12, 100, 22), make_box(0, 0, 5, 5),
      make_box(7, 7, 9, 9)};

  // Span covering tokens 0 and 1.
  const auto ex = apply_masking(ids, boxes, {{0, 2, 0}}, vocab);
  REQUIRE(ex.input_ids.size() == 3);
  CHECK(ex.input_ids[0] == vocab.sentinel_id(0));
  CHECK(ex.input_boxes[0] == make_box(10, 10, 100, 22));
  CHECK(ex.input_boxes[0].w == 90);
  CHECK(ex.input_boxes[0].h == 12);

  // Single-token span keeps that token's box.
  const auto single = apply_masking(ids, boxes, {{2, 1, 0}}, vocab);
  CHECK(single.input_boxes[2] == boxes[2]);
}

TEST_CASE("apply_masking worked example and reconstruct") {
  const auto vocab = tiny_vocab();
  const std::vector<int> ids = {4, 5, 6, 7};  // a, b, c, d
  std::vector<BoundingBox> boxes(4, make_box(0, 0, 10, 10));
  const auto ex = apply_masking(ids, boxes, {{1, 2, 0}}, vocab);
  CHECK(ex.input_ids == std::vector<int>{4, vocab.sentinel_id(0), 7});
  CHECK(ex.target_ids == std::vector<int>{vocab.sentinel_id(0), 5, 6, Vocabulary::kEosId});
  CHECK(unmask_reconstruct(ex, vocab) == ids);
}

TEST_CASE("apply_masking rejects overlapping spans") {
  const auto vocab = tiny_vocab();
  const std::vector<int> ids = {4, 5, 6, 7};
  const std::vector<BoundingBox> boxes(4, make_box(0, 0, 10, 10));
  CHECK_THROWS_AS(apply_masking(ids, boxes, {{0, 2, 0}, {1, 1, 1}}, vocab), ValueError);
}

TEST_CASE("unmask_reconstruct is the identity over random documents") {
  const auto vocab = tiny_vocab();
  Rng rng(23);
  for (int trial = 0; trial < 1000; ++trial) {
    const int n = 1 + static_cast<int>(rng.below(60));
    std::vector<int> ids;
    std::vector<BoundingBox> boxes;
    for (int i = 0; i < n; ++i) {
      ids.push_back(3 + static_cast<int>(rng.below(8)));
      const int x0 = static_cast<int>(rng.below(900));
      const int y0 = static_cast<int>(rng.below(900));
      boxes.push_back(make_box(x0, y0, x0 + static_cast<int>(rng.below(100)),
                               y0 + static_cast<int>(rng.below(100))));
    }
    const auto spans = select_mask_spans(n, 0.15, 3, vocab.n_sentinels(), rng);
    const auto ex = apply_masking(ids, boxes, spans, vocab);
    CHECK(unmask_reconstruct(ex, vocab) == ids);
    if (spans.empty()) CHECK(ex.input_ids == ids);
  }
}

TEST_CASE("masking hides span length: loose boxes carry no member detail") {
  const auto vocab = tiny_vocab();
  // Two documents with different span contents but identical loose geometry.
  const std::vector<BoundingBox> wide = {make_box(0, 0, 10, 10), make_box(90, 0, 100, 10)};
  const auto long_span =
      apply_masking({4, 5, 6, 7}, {make_box(0, 0, 10, 10), make_box(40, 0, 60, 10),
                                   make_box(70, 0, 80, 10), make_box(90, 0, 100, 10)},
                    {{0, 4, 0}}, vocab);
  const auto short_span = apply_masking({8, 9}, wide, {{0, 2, 0}}, vocab);
  CHECK(long_span.input_ids == short_span.input_ids);
  CHECK(long_span.input_boxes[0] == short_span.input_boxes[0]);
}
