#include "latr/layout.hpp"

#include <algorithm>
#include <cmath>

namespace latr {

namespace {

int quantize_coord(double px, double page_dim) {
  const double scaled = 1000.0 * px / page_dim;
  const int bin = static_cast<int>(std::floor(scaled + 0.5));
  return std::clamp(bin, 0, 1000);
}

}  // namespace

BoundingBox make_box(int x0, int y0, int x1, int y1) {
  BoundingBox b;
  b.x0 = std::min(x0, x1);
  b.x1 = std::max(x0, x1);
  b.y0 = std::min(y0, y1);
  b.y1 = std::max(y0, y1);
  b.w = b.x1 - b.x0;
  b.h = b.y1 - b.y0;
  return b;
}

BoundingBox quantize_box(double px0, double py0, double px1, double py1, double page_w,
                         double page_h) {
  if (page_w <= 0 || page_h <= 0) throw ValueError("page dimensions must be positive");
  for (const double v : {px0, py0, px1, py1, page_w, page_h}) {
    if (!std::isfinite(v)) throw NumericError("quantize_box: non-finite coordinate");
  }
  return make_box(quantize_coord(px0, page_w), quantize_coord(py0, page_h),
                  quantize_coord(px1, page_w), quantize_coord(py1, page_h));
}

BoundingBox question_box() { return make_box(0, 0, 1000, 1000); }

SpatialEmbedder::SpatialEmbedder(int vocab_size, int d_model, int n_coord_bins, Rng& rng,
                                 float init_std)
    : token(Tensor::randn({vocab_size, d_model}, rng, init_std, true)),
      x(Tensor::randn({n_coord_bins, d_model}, rng, init_std, true)),
      y(Tensor::randn({n_coord_bins, d_model}, rng, init_std, true)),
      w(Tensor::randn({n_coord_bins, d_model}, rng, init_std, true)),
      h(Tensor::randn({n_coord_bins, d_model}, rng, init_std, true)) {
  token.set_name("embed.token");
  x.set_name("embed.x");
  y.set_name("embed.y");
  w.set_name("embed.w");
  h.set_name("embed.h");
}

Tensor SpatialEmbedder::embed(Tape& tape, const std::vector<int>& ids,
                              const std::vector<BoundingBox>& boxes) const {
  if (ids.size() != boxes.size()) {
    throw ShapeError("embed: " + std::to_string(ids.size()) + " ids vs " +
                     std::to_string(boxes.size()) + " boxes");
  }
  const int bins = x.dims()[0];
  std::vector<int> x0s, y0s, x1s, y1s, ws, hs;
  x0s.reserve(ids.size());
  for (const auto& b : boxes) {
    for (const int v : {b.x0, b.y0, b.x1, b.y1, b.w, b.h}) {
      if (v < 0 || v >= bins) {
        throw IndexError("box bin " + std::to_string(v) + " outside [0, " +
                         std::to_string(bins) + ")");
      }
    }
    x0s.push_back(b.x0);
    y0s.push_back(b.y0);
    x1s.push_back(b.x1);
    y1s.push_back(b.y1);
    ws.push_back(b.w);
    hs.push_back(b.h);
  }
  Tensor sum = embedding_lookup(tape, token, ids);
  sum = add(tape, sum, embedding_lookup(tape, x, x0s));
  sum = add(tape, sum, embedding_lookup(tape, y, y0s));
  sum = add(tape, sum, embedding_lookup(tape, x, x1s));
  sum = add(tape, sum, embedding_lookup(tape, y, y1s));
  sum = add(tape, sum, embedding_lookup(tape, w, ws));
  sum = add(tape, sum, embedding_lookup(tape, h, hs));
  return sum;
}

Tensor SpatialEmbedder::embed_tokens_only(Tape& tape, const std::vector<int>& ids) const {
  return embedding_lookup(tape, token, ids);
}

Tensor embed_token(Tape& tape, const SpatialEmbedder& e, int id, const BoundingBox& box) {
  return e.embed(tape, {id}, {box});
}

std::vector<MaskSpan> select_mask_spans(int n_tokens, double corruption_rate, int mean_span,
                                        int max_spans, Rng& rng) {
  if (n_tokens < 1) throw ValueError("select_mask_spans: need at least one token");
  if (corruption_rate <= 0.0 || corruption_rate >= 1.0) {
    throw ValueError("corruption_rate must be in (0, 1)");
  }
  if (mean_span < 1) throw ValueError("mean_span must be >= 1");

  // Masking does not activate on near-empty documents.
  if (n_tokens < 7) return {};

  int budget = static_cast<int>(std::floor(corruption_rate * n_tokens + 0.5));
  budget = std::clamp(budget, 1, n_tokens - 1);

  // Truncated geometric span lengths with the requested mean, capped at the
  // remaining budget.
  const double p = 1.0 / static_cast<double>(mean_span);
  std::vector<int> lengths;
  int remaining = budget;
  while (remaining > 0) {
    int len = 1;
    if (mean_span > 1) {
      double u = rng.next_double();
      while (u >= 1.0) u = rng.next_double();
      len = 1 + static_cast<int>(std::floor(std::log(1.0 - u) / std::log(1.0 - p)));
    }
    len = std::min(len, remaining);
    lengths.push_back(len);
    remaining -= len;
  }
  const int k = static_cast<int>(lengths.size());
  if (k > max_spans) {
    throw ValueError("masking needs " + std::to_string(k) + " spans but only " +
                     std::to_string(max_spans) + " sentinels are available");
  }

  // Uniform placement: distribute the free tokens into k+1 gaps by sampling a
  // k-subset of {0, ..., free + k - 1} (Floyd's algorithm), which maps
  // bijectively onto gap compositions.
  const int free_tokens = n_tokens - budget;
  std::vector<int> picks;
  picks.reserve(k);
  for (int j = free_tokens; j < free_tokens + k; ++j) {
    const int t = static_cast<int>(rng.below(static_cast<uint64_t>(j) + 1));
    if (std::find(picks.begin(), picks.end(), t) == picks.end()) {
      picks.push_back(t);
    } else {
      picks.push_back(j);
    }
  }
  std::sort(picks.begin(), picks.end());

  // Gap sizes g_i = picks[i] - picks[i-1] - 1 (picks[-1] = -1); spans start
  // after their leading gap.
  std::vector<MaskSpan> spans;
  spans.reserve(k);
  int start = 0;
  int prev = -1;
  for (int i = 0; i < k; ++i) {
    start += picks[i] - prev - 1;
    prev = picks[i];
    spans.push_back({start, lengths[i], i});
    start += lengths[i];
  }
  return spans;
}

MaskedExample apply_masking(const std::vector<int>& token_ids,
                            const std::vector<BoundingBox>& boxes,
                            const std::vector<MaskSpan>& spans, const Vocabulary& vocab) {
  if (token_ids.size() != boxes.size()) {
    throw ShapeError("apply_masking: ids and boxes lengths differ");
  }
  const int n = static_cast<int>(token_ids.size());
  int prev_end = -1;
  for (const auto& span : spans) {
    if (span.length < 1) throw ValueError("apply_masking: span length must be >= 1");
    if (span.start <= prev_end) {
      throw ValueError("apply_masking: spans overlap or are out of order");
    }
    if (span.start + span.length > n) throw ValueError("apply_masking: span past end");
    prev_end = span.start + span.length - 1;
  }

  MaskedExample out;
  size_t next = 0;
  for (const auto& span : spans) {
    const int sentinel = vocab.sentinel_id(span.sentinel_index);
    while (next < static_cast<size_t>(span.start)) {
      out.input_ids.push_back(token_ids[next]);
      out.input_boxes.push_back(boxes[next]);
      ++next;
    }
    // Loose box: min of top-left corners, max of bottom-right, with w and h
    // recomputed from the loose corners.
    BoundingBox loose = boxes[span.start];
    out.target_ids.push_back(sentinel);
    for (int i = span.start; i < span.start + span.length; ++i) {
      loose.x0 = std::min(loose.x0, boxes[i].x0);
      loose.y0 = std::min(loose.y0, boxes[i].y0);
      loose.x1 = std::max(loose.x1, boxes[i].x1);
      loose.y1 = std::max(loose.y1, boxes[i].y1);
      out.target_ids.push_back(token_ids[i]);
    }
    out.input_ids.push_back(sentinel);
    out.input_boxes.push_back(make_box(loose.x0, loose.y0, loose.x1, loose.y1));
    next = static_cast<size_t>(span.start + span.length);
  }
  while (next < token_ids.size()) {
    out.input_ids.push_back(token_ids[next]);
    out.input_boxes.push_back(boxes[next]);
    ++next;
  }
  out.target_ids.push_back(Vocabulary::kEosId);
  return out;
}

std::vector<int> unmask_reconstruct(const MaskedExample& example, const Vocabulary& vocab) {
  // Split the target into per-sentinel spans.
  std::vector<std::pair<int, std::vector<int>>> spans;  // sentinel id -> tokens
  for (const int id : example.target_ids) {
    if (id == Vocabulary::kEosId) break;
    if (vocab.is_sentinel(id)) {
      spans.push_back({id, {}});
    } else {
      if (spans.empty()) throw ValueError("malformed example: target starts mid-span");
      spans.back().second.push_back(id);
    }
  }
  size_t cursor = 0;
  std::vector<int> out;
  for (const int id : example.input_ids) {
    if (vocab.is_sentinel(id)) {
      if (cursor >= spans.size() || spans[cursor].first != id) {
        throw ValueError("malformed example: sentinel mismatch between input and target");
      }
      out.insert(out.end(), spans[cursor].second.begin(), spans[cursor].second.end());
      ++cursor;
    } else {
      out.push_back(id);
    }
  }
  if (cursor != spans.size()) {
    throw ValueError("malformed example: sentinel counts differ between input and target");
  }
  return out;
}

}  // namespace latr
