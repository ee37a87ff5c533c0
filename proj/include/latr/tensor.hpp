#pragma once

#include <cstdint>
#include <memory>
#include <span>
#include <string>
#include <vector>

#include "latr/errors.hpp"
#include "latr/rng.hpp"

namespace latr {

using Shape = std::vector<int>;

int64_t shape_numel(const Shape& dims);
std::string shape_str(const Shape& dims);

struct TensorImpl {
  Shape dims;
  std::vector<float> data;
  std::vector<float> grad;  // empty until first accumulation
  bool requires_grad = false;
  std::string name;  // non-empty for named parameters
};

// Dense row-major float32 tensor. Copies share storage (handle semantics);
// the autodiff tape keys gradients on the shared impl.
class Tensor {
 public:
  Tensor() = default;
  Tensor(Shape dims, std::vector<float> data, bool requires_grad = false);

  static Tensor zeros(Shape dims, bool requires_grad = false);
  static Tensor full(Shape dims, float value, bool requires_grad = false);
  static Tensor scalar(float value);
  static Tensor randn(Shape dims, Rng& rng, float stddev, bool requires_grad = false);

  bool defined() const { return impl_ != nullptr; }
  const Shape& dims() const { return impl_->dims; }
  int64_t size() const { return static_cast<int64_t>(impl_->data.size()); }

  std::span<float> data() { return impl_->data; }
  std::span<const float> data() const { return impl_->data; }

  bool requires_grad() const { return impl_->requires_grad; }
  void set_requires_grad(bool v) { impl_->requires_grad = v; }

  bool has_grad() const { return !impl_->grad.empty(); }
  // Allocates a zero gradient buffer on first use.
  std::span<float> grad();
  std::span<const float> grad_view() const;
  void zero_grad();

  float item() const;

  const std::string& name() const { return impl_->name; }
  void set_name(std::string n) { impl_->name = std::move(n); }

  TensorImpl* impl() const { return impl_.get(); }

 private:
  std::shared_ptr<TensorImpl> impl_;
};

enum class OpKind : uint8_t {
  MatMul,
  MatMulNT,  // a[m,k] * b[n,k]^T
  Add,
  AddRowVec,  // x[m,n] + v[n] broadcast over rows
  Mul,
  Scale,
  Relu,
  Softmax,        // iattrs: {axis}
  SoftmaxCausal,  // 2-D [t,t], row i attends to columns 0..i
  LayerNorm,      // inputs: x, gain, bias; fattrs: {eps}
  Embed,          // inputs: table; iattrs: ids
  CrossEntropy,   // inputs: logits; iattrs: {ignore_index, targets...}
  BceLogits,      // fattrs: {label}
  SumAll,
  MeanAll,
  MeanAxis0,
  ConcatRows,
  ConcatCols,
  SliceRows,  // iattrs: {r0, r1}
  SliceCols,  // iattrs: {c0, c1}
  Dropout,    // fattrs: keep-scaled 0/1 mask, one entry per element
};

struct TapeNode {
  OpKind kind;
  std::vector<Tensor> inputs;
  Tensor output;
  std::vector<int> iattrs;
  std::vector<float> fattrs;
};

// Define-by-run reverse-mode tape. Ops append nodes in execution order;
// backward() walks them in exact reverse order. The recorded node list is a
// complete description of the forward computation, which replay64() re-runs
// in double precision (used by the finite-difference oracle).
class Tape {
 public:
  void record(TapeNode node) { nodes_.push_back(std::move(node)); }
  const std::vector<TapeNode>& nodes() const { return nodes_; }
  size_t size() const { return nodes_.size(); }
  void clear() { nodes_.clear(); }

  // Accumulates gradients of `loss` (a scalar output recorded on this tape)
  // into every reachable tensor. Leaf tensors with requires_grad=false are
  // skipped. Repeated calls accumulate.
  void backward(const Tensor& loss) const;

  // Recomputes the scalar value of `target` in 64-bit floats from current
  // leaf values, optionally adding `bump_delta` to one element of one leaf.
  double replay64(const Tensor& target, const TensorImpl* bump_leaf = nullptr,
                  int64_t bump_index = -1, double bump_delta = 0.0) const;

 private:
  std::vector<TapeNode> nodes_;
};

// --- recorded ops -----------------------------------------------------------

Tensor matmul(Tape& tape, const Tensor& a, const Tensor& b);
Tensor matmul_nt(Tape& tape, const Tensor& a, const Tensor& b);
Tensor add(Tape& tape, const Tensor& a, const Tensor& b);
Tensor add_row_vector(Tape& tape, const Tensor& x, const Tensor& v);
Tensor mul(Tape& tape, const Tensor& a, const Tensor& b);
Tensor scale(Tape& tape, const Tensor& a, float c);
Tensor relu(Tape& tape, const Tensor& a);
Tensor softmax(Tape& tape, const Tensor& a, int axis);
Tensor softmax_causal(Tape& tape, const Tensor& a);
Tensor layer_norm(Tape& tape, const Tensor& x, const Tensor& gain, const Tensor& bias,
                  float eps);
Tensor embedding_lookup(Tape& tape, const Tensor& table, const std::vector<int>& ids);
Tensor cross_entropy_loss(Tape& tape, const Tensor& logits, const std::vector<int>& targets,
                          int ignore_index);
Tensor bce_with_logits(Tape& tape, const Tensor& logit, float label);
Tensor sum_all(Tape& tape, const Tensor& a);
Tensor mean_all(Tape& tape, const Tensor& a);
Tensor mean_axis0(Tape& tape, const Tensor& a);
Tensor concat_rows(Tape& tape, const std::vector<Tensor>& parts);
Tensor slice_rows(Tape& tape, const Tensor& a, int r0, int r1);
Tensor slice_cols(Tape& tape, const Tensor& a, int c0, int c1);
Tensor concat_cols(Tape& tape, const std::vector<Tensor>& parts);
Tensor dropout(Tape& tape, const Tensor& a, float p, Rng& rng);

void backward(const Tensor& loss, const Tape& tape);

// --- optimizer --------------------------------------------------------------

struct AdamWConfig {
  float beta1 = 0.9f;
  float beta2 = 0.999f;
  float eps = 1e-8f;
  float weight_decay = 0.01f;
};

struct AdamWState {
  std::vector<std::vector<float>> m;
  std::vector<std::vector<float>> v;
  int64_t step = 0;
};

// Decoupled weight decay applied directly to parameters, bias-corrected
// moments, one shared step counter. Parameters with requires_grad=false are
// left untouched. Gradients are read from each parameter's grad buffer
// (missing buffer counts as zero).
void adamw_step(std::vector<Tensor>& params, AdamWState& state, float lr,
                const AdamWConfig& cfg);

// --- finite-difference oracle -----------------------------------------------

struct GradCheckReport {
  double max_rel_error = 0.0;
  int64_t n_checked = 0;
  std::string worst;  // "name[index]" of the worst entry

  bool pass(double tolerance) const { return max_rel_error <= tolerance; }
};

// Central differences in a 64-bit replay of the tape against the recorded
// float32 gradients. Error per entry is |fd - g| / max(1, |fd|, |g|).
// `max_entries_per_tensor` == 0 checks every element; otherwise that many
// entries are sampled per tensor with `sample_rng`.
GradCheckReport finite_difference_check(const Tape& tape, const Tensor& loss,
                                        const std::vector<Tensor>& inputs, double h,
                                        double tolerance, int max_entries_per_tensor = 0,
                                        Rng* sample_rng = nullptr);

}  // namespace latr
