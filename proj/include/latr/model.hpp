#pragma once

#include <optional>
#include <string>
#include <vector>

#include "latr/corpus.hpp"
#include "latr/layout.hpp"
#include "latr/rng.hpp"
#include "latr/tensor.hpp"
#include "latr/tokenizer.hpp"

namespace latr {

struct ModelConfig {
  int d_model = 64;
  int n_heads = 4;
  int n_enc_layers = 2;
  int n_dec_layers = 2;
  int n_vit_layers = 1;
  int ffn_dim = 256;
  int vocab_size = 2000;  // upper bound; the built vocabulary sets the real size
  int max_seq_len = 512;
  int max_answer_len = 16;
  int patch_size = 8;
  int image_h = 64;
  int image_w = 64;
  int image_c = 1;
  int n_coord_bins = kCoordBins;
  float dropout = 0.1f;
  bool visual_branch_enabled = false;
  bool freeze_patch_encoder = false;
  bool use_2d = true;
  float init_std = 0.02f;

  int n_patches() const { return (image_h / patch_size) * (image_w / patch_size); }
  void validate() const;
};

enum class Segment : uint8_t { Visual, Ocr, Question };

// Encoder output: concatenated visual | ocr | question states with per-position
// segment tags.
struct EncodedSequence {
  Tensor states;  // [L x d]
  std::vector<Segment> tags;

  int length() const { return states.defined() ? states.dims()[0] : 0; }
};

// Flattens an H x W x C byte image into N x (P^2 * C) patch rows, row-major in
// patch order, bytes scaled to [0, 1].
Tensor patchify(const Image& image, int patch_size);

// 50/50 pollution decision for the image-text matching objective.
bool itm_pollution_draw(Rng& rng);

class LatrModel {
 public:
  LatrModel(const ModelConfig& cfg, int vocab_size, uint64_t seed);

  const ModelConfig& config() const { return cfg_; }
  int vocab_size() const { return embedder_.token.dims()[0]; }

  std::vector<Tensor>& parameters() { return params_; }
  const std::vector<Tensor>& parameters() const { return params_; }
  Tensor parameter(const std::string& name) const;
  void zero_grads();

  // Dropout is active only between set_train(true) and set_train(false);
  // the rng must outlive the forward pass.
  void set_train(bool training, Rng* dropout_rng = nullptr);

  const SpatialEmbedder& embedder() const { return embedder_; }

  // ViT branch: patch projection, [class] token, position embeddings, the toy
  // transformer stack, and a final trainable projection. [N+1 x d].
  Tensor visual_encode(Tape& tape, const Tensor& patches) const;
  Tensor visual_encode_image(Tape& tape, const Image& image) const;

  // Bidirectional encoder over visual | ocr | question. Question tokens carry
  // the fixed whole-page box; a learned 1-D position embedding over the
  // concatenated index is added to text positions.
  EncodedSequence encode_multimodal(Tape& tape, const std::optional<Tensor>& visual_states,
                                    const std::vector<int>& ocr_ids,
                                    const std::vector<BoundingBox>& ocr_boxes,
                                    const std::vector<int>& question_ids) const;

  // Teacher-forced decoder logits [T x V] for the given target prefix
  // (internally shifted right with <pad> as the start symbol).
  Tensor decode_logits(Tape& tape, const EncodedSequence& enc,
                       const std::vector<int>& target_ids) const;

  // Logits [V] for the next token after `prefix`.
  Tensor decode_step(Tape& tape, const EncodedSequence& enc,
                     const std::vector<int>& prefix) const;

  // Argmax decoding until </s> or max_len; ties resolve to the lowest id and
  // </s> is excluded from the result.
  std::vector<int> greedy_decode(const EncodedSequence& enc, int max_len) const;

  // Span-denoising loss; the visual branch stays out of the graph.
  Tensor denoising_loss(Tape& tape, const MaskedExample& example) const;

  // QA fine-tuning loss over answer_ids (</s> appended internally).
  Tensor qa_loss(Tape& tape, const std::optional<Tensor>& visual_states,
                 const std::vector<int>& ocr_ids, const std::vector<BoundingBox>& ocr_boxes,
                 const std::vector<int>& question_ids, const std::vector<int>& answer_ids) const;

  // Binary matched-vs-polluted loss from a linear head over the mean encoder
  // state. The decoder is not part of this graph, so its parameters receive
  // exactly zero gradient.
  Tensor itm_loss(Tape& tape, const EncodedSequence& enc, bool polluted) const;

 private:
  struct Attention {
    Tensor wq, wk, wv, wo;
  };
  struct EncoderBlock {
    Tensor ln1_g, ln1_b;
    Attention attn;
    Tensor ln2_g, ln2_b;
    Tensor ffn_w1, ffn_w2;
  };
  struct DecoderBlock {
    Tensor ln1_g, ln1_b;
    Attention self;
    Tensor ln2_g, ln2_b;
    Attention cross;
    Tensor ln3_g, ln3_b;
    Tensor ffn_w1, ffn_w2;
  };

  Tensor attend(Tape& tape, const Attention& p, const Tensor& q_in, const Tensor& kv_in,
                bool causal) const;
  Tensor encoder_ffn(Tape& tape, const Tensor& x, const Tensor& w1, const Tensor& w2) const;
  Tensor maybe_dropout(Tape& tape, const Tensor& x) const;
  Tensor embed_text(Tape& tape, const std::vector<int>& ids,
                    const std::vector<BoundingBox>& boxes, int position_offset) const;

  Tensor register_param(Tensor t, const std::string& name);
  Tensor make_weight(Shape dims, const std::string& name, Rng& rng);

  ModelConfig cfg_;
  SpatialEmbedder embedder_;
  Tensor enc_pos_;  // 1-D positions over the concatenated text index
  Tensor dec_pos_;
  std::vector<EncoderBlock> enc_blocks_;
  Tensor enc_final_g_, enc_final_b_;
  std::vector<DecoderBlock> dec_blocks_;
  Tensor dec_final_g_, dec_final_b_;

  Tensor vit_proj_in_;
  Tensor vit_class_;
  Tensor vit_pos_;
  std::vector<EncoderBlock> vit_blocks_;
  Tensor vit_final_g_, vit_final_b_;
  Tensor vit_proj_out_;

  Tensor itm_w_, itm_b_;

  std::vector<Tensor> params_;
  bool training_ = false;
  Rng* dropout_rng_ = nullptr;
};

}  // namespace latr
