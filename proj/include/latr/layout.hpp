#pragma once

#include <vector>

#include "latr/rng.hpp"
#include "latr/tensor.hpp"
#include "latr/tokenizer.hpp"

namespace latr {

constexpr int kCoordBins = 1001;  // quantized coordinates live in [0, 1000]

// Quantized 2-D box. Corners are bin indices in [0, 1000]; width and height
// are always recomputed from the corners, never trusted from input.
struct BoundingBox {
  int x0 = 0, y0 = 0, x1 = 0, y1 = 0;
  int h = 0, w = 0;

  friend bool operator==(const BoundingBox&, const BoundingBox&) = default;
};

// Reorders corners so x0 <= x1, y0 <= y1 and fills w = x1-x0, h = y1-y0.
BoundingBox make_box(int x0, int y0, int x1, int y1);

// Scales pixel coordinates onto the [0, 1000] grid (round half up, clamped).
BoundingBox quantize_box(double px0, double py0, double px1, double py1, double page_w,
                         double page_h);

// Fixed whole-page box assigned to every question token.
BoundingBox question_box();

// The learnable lookup tables combined into each token representation:
// token table E_O[V x d], coordinate tables E_x / E_y (shared between both
// corners), size tables E_w / E_h, all [1001 x d].
struct SpatialEmbedder {
  Tensor token;  // E_O
  Tensor x;      // E_x
  Tensor y;      // E_y
  Tensor w;      // E_w
  Tensor h;      // E_h

  SpatialEmbedder() = default;
  SpatialEmbedder(int vocab_size, int d_model, int n_coord_bins, Rng& rng, float init_std);

  int dim() const { return token.dims()[1]; }

  // Seven-term sum E_O(id) + E_x(x0) + E_y(y0) + E_x(x1) + E_y(y1) +
  // E_w(w) + E_h(h) for a whole sequence; [len x d].
  Tensor embed(Tape& tape, const std::vector<int>& ids,
               const std::vector<BoundingBox>& boxes) const;

  // Token-only lookup (2-D embeddings ablated away).
  Tensor embed_tokens_only(Tape& tape, const std::vector<int>& ids) const;
};

Tensor embed_token(Tape& tape, const SpatialEmbedder& e, int id, const BoundingBox& box);

// Contiguous masked span: token indices [start, start + length), replaced by
// sentinel number sentinel_index.
struct MaskSpan {
  int start = 0;
  int length = 1;
  int sentinel_index = 0;
};

// Denoising pair. input_ids/input_boxes are the post-masking sequence where
// each span became one sentinel carrying its loose box; target_ids lists
// sentinel_l followed by span l's original tokens, for every span in order,
// terminated by </s>.
struct MaskedExample {
  std::vector<int> input_ids;
  std::vector<BoundingBox> input_boxes;
  std::vector<int> target_ids;
};

// Samples disjoint, strictly ordered spans masking round(rate * n) tokens in
// total (none below 7 tokens, at least one otherwise). Lengths follow a
// truncated geometric with the given mean; placements are uniform over all
// valid arrangements. Throws ValueError when more than max_spans spans would
// be needed.
std::vector<MaskSpan> select_mask_spans(int n_tokens, double corruption_rate, int mean_span,
                                        int max_spans, Rng& rng);

MaskedExample apply_masking(const std::vector<int>& token_ids,
                            const std::vector<BoundingBox>& boxes,
                            const std::vector<MaskSpan>& spans, const Vocabulary& vocab);

// Splices the target spans back over the sentinels; test-side inverse of
// apply_masking.
std::vector<int> unmask_reconstruct(const MaskedExample& example, const Vocabulary& vocab);

}  // namespace latr
