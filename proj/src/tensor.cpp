#include "latr/tensor.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <sstream>
#include <unordered_map>
#include <unordered_set>

namespace latr {

int64_t shape_numel(const Shape& dims) {
  int64_t n = 1;
  for (const int d : dims) n *= d;
  return n;
}

std::string shape_str(const Shape& dims) {
  std::ostringstream os;
  os << "[";
  for (size_t i = 0; i < dims.size(); ++i) {
    if (i) os << "x";
    os << dims[i];
  }
  os << "]";
  return os.str();
}

Tensor::Tensor(Shape dims, std::vector<float> data, bool requires_grad) {
  if (dims.empty()) throw ShapeError("tensor rank must be >= 1");
  for (const int d : dims) {
    if (d <= 0) throw ShapeError("tensor dims must be positive, got " + shape_str(dims));
  }
  if (shape_numel(dims) != static_cast<int64_t>(data.size())) {
    throw ShapeError("data length " + std::to_string(data.size()) + " does not match dims " +
                     shape_str(dims));
  }
  impl_ = std::make_shared<TensorImpl>();
  impl_->dims = std::move(dims);
  impl_->data = std::move(data);
  impl_->requires_grad = requires_grad;
}

Tensor Tensor::zeros(Shape dims, bool requires_grad) {
  const int64_t n = shape_numel(dims);
  return Tensor(std::move(dims), std::vector<float>(static_cast<size_t>(n), 0.0f),
                requires_grad);
}

Tensor Tensor::full(Shape dims, float value, bool requires_grad) {
  const int64_t n = shape_numel(dims);
  return Tensor(std::move(dims), std::vector<float>(static_cast<size_t>(n), value),
                requires_grad);
}

Tensor Tensor::scalar(float value) { return Tensor({1}, {value}); }

Tensor Tensor::randn(Shape dims, Rng& rng, float stddev, bool requires_grad) {
  const int64_t n = shape_numel(dims);
  std::vector<float> data(static_cast<size_t>(n));
  for (auto& v : data) v = static_cast<float>(rng.normal()) * stddev;
  return Tensor(std::move(dims), std::move(data), requires_grad);
}

std::span<float> Tensor::grad() {
  if (impl_->grad.empty()) impl_->grad.assign(impl_->data.size(), 0.0f);
  return impl_->grad;
}

std::span<const float> Tensor::grad_view() const { return impl_->grad; }

void Tensor::zero_grad() {
  if (!impl_->grad.empty()) std::fill(impl_->grad.begin(), impl_->grad.end(), 0.0f);
}

float Tensor::item() const {
  if (size() != 1) throw ShapeError("item() needs a scalar, got " + shape_str(dims()));
  return impl_->data[0];
}

namespace {

// Forward kernels, templated so the float32 tape path and the float64 replay
// run the same arithmetic.
template <typename T>
void k_matmul(const T* a, const T* b, T* c, int m, int k, int n) {
  std::fill(c, c + static_cast<int64_t>(m) * n, T(0));
  for (int i = 0; i < m; ++i) {
    const T* arow = a + static_cast<int64_t>(i) * k;
    T* crow = c + static_cast<int64_t>(i) * n;
    for (int p = 0; p < k; ++p) {
      const T av = arow[p];
      const T* brow = b + static_cast<int64_t>(p) * n;
      for (int j = 0; j < n; ++j) crow[j] += av * brow[j];
    }
  }
}

template <typename T>
void k_matmul_nt(const T* a, const T* b, T* c, int m, int k, int n) {
  // c[m,n] = a[m,k] * b[n,k]^T
  for (int i = 0; i < m; ++i) {
    const T* arow = a + static_cast<int64_t>(i) * k;
    T* crow = c + static_cast<int64_t>(i) * n;
    for (int j = 0; j < n; ++j) {
      const T* brow = b + static_cast<int64_t>(j) * k;
      T acc = T(0);
      for (int p = 0; p < k; ++p) acc += arow[p] * brow[p];
      crow[j] = acc;
    }
  }
}

template <typename T>
void k_softmax_slice(const T* x, T* y, int n, int64_t stride) {
  T mx = x[0];
  for (int i = 1; i < n; ++i) mx = std::max(mx, x[i * stride]);
  T sum = T(0);
  for (int i = 0; i < n; ++i) {
    const T e = std::exp(x[i * stride] - mx);
    y[i * stride] = e;
    sum += e;
  }
  for (int i = 0; i < n; ++i) y[i * stride] /= sum;
}

// Iterates all 1-D slices along `axis`, calling fn(offset, len, stride).
template <typename Fn>
void for_each_axis_slice(const Shape& dims, int axis, Fn fn) {
  const int rank = static_cast<int>(dims.size());
  const int n = dims[axis];
  int64_t inner = 1;
  for (int i = axis + 1; i < rank; ++i) inner *= dims[i];
  int64_t outer = 1;
  for (int i = 0; i < axis; ++i) outer *= dims[i];
  for (int64_t o = 0; o < outer; ++o) {
    for (int64_t in = 0; in < inner; ++in) {
      fn(o * n * inner + in, n, inner);
    }
  }
}

template <typename T>
void k_layer_norm_row(const T* x, const T* gain, const T* bias, T* y, int d, T eps) {
  T mean = T(0);
  for (int i = 0; i < d; ++i) mean += x[i];
  mean /= T(d);
  T var = T(0);
  for (int i = 0; i < d; ++i) {
    const T c = x[i] - mean;
    var += c * c;
  }
  var /= T(d);
  const T inv = T(1) / std::sqrt(var + eps);
  for (int i = 0; i < d; ++i) y[i] = (x[i] - mean) * inv * gain[i] + bias[i];
}

template <typename T>
T k_cross_entropy(const T* logits, int t, int v, const int* targets, int ignore_index,
                  int* out_live) {
  T total = T(0);
  int live = 0;
  for (int i = 0; i < t; ++i) {
    if (targets[i] == ignore_index) continue;
    const T* row = logits + static_cast<int64_t>(i) * v;
    T mx = row[0];
    for (int j = 1; j < v; ++j) mx = std::max(mx, row[j]);
    T lse = T(0);
    for (int j = 0; j < v; ++j) lse += std::exp(row[j] - mx);
    lse = std::log(lse) + mx;
    total += lse - row[targets[i]];
    ++live;
  }
  if (out_live) *out_live = live;
  return live > 0 ? total / T(live) : T(0);
}

template <typename T>
T k_bce_logits(T x, T label) {
  // softplus(x) - label*x, computed stably
  const T sp = std::max(x, T(0)) + std::log1p(std::exp(-std::abs(x)));
  return sp - label * x;
}

void require_2d(const Tensor& t, const char* what) {
  if (t.dims().size() != 2) {
    throw ShapeError(std::string(what) + " must be 2-D, got " + shape_str(t.dims()));
  }
}

Tensor out_like(Shape dims) { return Tensor::zeros(std::move(dims)); }

Tensor record_op(Tape& tape, OpKind kind, std::vector<Tensor> inputs, Tensor output,
                 std::vector<int> iattrs = {}, std::vector<float> fattrs = {}) {
  tape.record(TapeNode{kind, std::move(inputs), output, std::move(iattrs), std::move(fattrs)});
  return output;
}

}  // namespace

Tensor matmul(Tape& tape, const Tensor& a, const Tensor& b) {
  require_2d(a, "matmul lhs");
  require_2d(b, "matmul rhs");
  if (a.dims()[1] != b.dims()[0]) {
    throw ShapeError("matmul inner dims differ: " + shape_str(a.dims()) + " vs " +
                     shape_str(b.dims()));
  }
  Tensor out = out_like({a.dims()[0], b.dims()[1]});
  k_matmul(a.data().data(), b.data().data(), out.data().data(), a.dims()[0], a.dims()[1],
           b.dims()[1]);
  return record_op(tape, OpKind::MatMul, {a, b}, out);
}

Tensor matmul_nt(Tape& tape, const Tensor& a, const Tensor& b) {
  require_2d(a, "matmul_nt lhs");
  require_2d(b, "matmul_nt rhs");
  if (a.dims()[1] != b.dims()[1]) {
    throw ShapeError("matmul_nt inner dims differ: " + shape_str(a.dims()) + " vs " +
                     shape_str(b.dims()));
  }
  Tensor out = out_like({a.dims()[0], b.dims()[0]});
  k_matmul_nt(a.data().data(), b.data().data(), out.data().data(), a.dims()[0], a.dims()[1],
              b.dims()[0]);
  return record_op(tape, OpKind::MatMulNT, {a, b}, out);
}

Tensor add(Tape& tape, const Tensor& a, const Tensor& b) {
  if (a.dims() != b.dims()) {
    throw ShapeError("add shape mismatch: " + shape_str(a.dims()) + " vs " +
                     shape_str(b.dims()));
  }
  Tensor out = out_like(a.dims());
  const auto av = a.data();
  const auto bv = b.data();
  auto ov = out.data();
  for (size_t i = 0; i < ov.size(); ++i) ov[i] = av[i] + bv[i];
  return record_op(tape, OpKind::Add, {a, b}, out);
}

Tensor add_row_vector(Tape& tape, const Tensor& x, const Tensor& v) {
  require_2d(x, "add_row_vector lhs");
  if (v.dims().size() != 1 || v.dims()[0] != x.dims()[1]) {
    throw ShapeError("add_row_vector vector " + shape_str(v.dims()) + " does not match " +
                     shape_str(x.dims()));
  }
  Tensor out = out_like(x.dims());
  const int m = x.dims()[0], n = x.dims()[1];
  for (int i = 0; i < m; ++i) {
    for (int j = 0; j < n; ++j) {
      out.data()[i * n + j] = x.data()[i * n + j] + v.data()[j];
    }
  }
  return record_op(tape, OpKind::AddRowVec, {x, v}, out);
}

Tensor mul(Tape& tape, const Tensor& a, const Tensor& b) {
  if (a.dims() != b.dims()) {
    throw ShapeError("mul shape mismatch: " + shape_str(a.dims()) + " vs " +
                     shape_str(b.dims()));
  }
  Tensor out = out_like(a.dims());
  for (int64_t i = 0; i < a.size(); ++i) out.data()[i] = a.data()[i] * b.data()[i];
  return record_op(tape, OpKind::Mul, {a, b}, out);
}

Tensor scale(Tape& tape, const Tensor& a, float c) {
  Tensor out = out_like(a.dims());
  for (int64_t i = 0; i < a.size(); ++i) out.data()[i] = a.data()[i] * c;
  return record_op(tape, OpKind::Scale, {a}, out, {}, {c});
}

Tensor relu(Tape& tape, const Tensor& a) {
  Tensor out = out_like(a.dims());
  for (int64_t i = 0; i < a.size(); ++i) out.data()[i] = std::max(a.data()[i], 0.0f);
  return record_op(tape, OpKind::Relu, {a}, out);
}

Tensor softmax(Tape& tape, const Tensor& a, int axis) {
  const int rank = static_cast<int>(a.dims().size());
  if (axis < 0) axis += rank;
  if (axis < 0 || axis >= rank) {
    throw ShapeError("softmax axis " + std::to_string(axis) + " invalid for " +
                     shape_str(a.dims()));
  }
  for (const float v : a.data()) {
    if (!std::isfinite(v)) throw NumericError("softmax input is not finite");
  }
  Tensor out = out_like(a.dims());
  for_each_axis_slice(a.dims(), axis, [&](int64_t off, int n, int64_t stride) {
    k_softmax_slice(a.data().data() + off, out.data().data() + off, n, stride);
  });
  return record_op(tape, OpKind::Softmax, {a}, out, {axis});
}

Tensor softmax_causal(Tape& tape, const Tensor& a) {
  require_2d(a, "softmax_causal input");
  if (a.dims()[0] != a.dims()[1]) {
    throw ShapeError("softmax_causal needs square scores, got " + shape_str(a.dims()));
  }
  const int t = a.dims()[0];
  Tensor out = out_like(a.dims());
  for (int i = 0; i < t; ++i) {
    k_softmax_slice(a.data().data() + static_cast<int64_t>(i) * t,
                    out.data().data() + static_cast<int64_t>(i) * t, i + 1, 1);
  }
  return record_op(tape, OpKind::SoftmaxCausal, {a}, out);
}

Tensor layer_norm(Tape& tape, const Tensor& x, const Tensor& gain, const Tensor& bias,
                  float eps) {
  if (eps <= 0.0f) throw ValueError("layer_norm eps must be > 0");
  const int d = x.dims().back();
  if (gain.dims() != Shape{d} || bias.dims() != Shape{d}) {
    throw ShapeError("layer_norm gain/bias must be [" + std::to_string(d) + "]");
  }
  Tensor out = out_like(x.dims());
  const int64_t rows = x.size() / d;
  for (int64_t r = 0; r < rows; ++r) {
    k_layer_norm_row(x.data().data() + r * d, gain.data().data(), bias.data().data(),
                     out.data().data() + r * d, d, eps);
  }
  return record_op(tape, OpKind::LayerNorm, {x, gain, bias}, out, {}, {eps});
}

Tensor embedding_lookup(Tape& tape, const Tensor& table, const std::vector<int>& ids) {
  require_2d(table, "embedding table");
  const int v = table.dims()[0], d = table.dims()[1];
  for (const int id : ids) {
    if (id < 0 || id >= v) {
      throw IndexError("embedding id " + std::to_string(id) + " out of range [0, " +
                       std::to_string(v) + ")");
    }
  }
  if (ids.empty()) throw ShapeError("embedding_lookup needs at least one id");
  Tensor out = out_like({static_cast<int>(ids.size()), d});
  for (size_t i = 0; i < ids.size(); ++i) {
    std::memcpy(out.data().data() + i * d, table.data().data() + static_cast<int64_t>(ids[i]) * d,
                sizeof(float) * d);
  }
  return record_op(tape, OpKind::Embed, {table}, out, ids);
}

Tensor cross_entropy_loss(Tape& tape, const Tensor& logits, const std::vector<int>& targets,
                          int ignore_index) {
  require_2d(logits, "cross_entropy logits");
  const int t = logits.dims()[0], v = logits.dims()[1];
  if (static_cast<int>(targets.size()) != t) {
    throw ShapeError("cross_entropy targets length " + std::to_string(targets.size()) +
                     " != rows " + std::to_string(t));
  }
  for (const int y : targets) {
    if (y != ignore_index && (y < 0 || y >= v)) {
      throw IndexError("cross_entropy target " + std::to_string(y) + " out of range");
    }
  }
  int live = 0;
  const float loss =
      k_cross_entropy(logits.data().data(), t, v, targets.data(), ignore_index, &live);
  if (live == 0) throw ValueError("cross_entropy: all positions ignored, loss undefined");
  Tensor out = Tensor::scalar(loss);
  std::vector<int> iattrs;
  iattrs.reserve(targets.size() + 1);
  iattrs.push_back(ignore_index);
  iattrs.insert(iattrs.end(), targets.begin(), targets.end());
  return record_op(tape, OpKind::CrossEntropy, {logits}, out, std::move(iattrs));
}

Tensor bce_with_logits(Tape& tape, const Tensor& logit, float label) {
  if (logit.size() != 1) throw ShapeError("bce_with_logits needs a scalar logit");
  Tensor out = Tensor::scalar(k_bce_logits(logit.data()[0], label));
  return record_op(tape, OpKind::BceLogits, {logit}, out, {}, {label});
}

Tensor sum_all(Tape& tape, const Tensor& a) {
  float s = 0.0f;
  for (const float v : a.data()) s += v;
  return record_op(tape, OpKind::SumAll, {a}, Tensor::scalar(s));
}

Tensor mean_all(Tape& tape, const Tensor& a) {
  float s = 0.0f;
  for (const float v : a.data()) s += v;
  return record_op(tape, OpKind::MeanAll, {a}, Tensor::scalar(s / static_cast<float>(a.size())));
}

Tensor mean_axis0(Tape& tape, const Tensor& a) {
  require_2d(a, "mean_axis0 input");
  const int m = a.dims()[0], n = a.dims()[1];
  Tensor out = out_like({n});
  for (int j = 0; j < n; ++j) {
    float s = 0.0f;
    for (int i = 0; i < m; ++i) s += a.data()[static_cast<int64_t>(i) * n + j];
    out.data()[j] = s / static_cast<float>(m);
  }
  return record_op(tape, OpKind::MeanAxis0, {a}, out);
}

Tensor concat_rows(Tape& tape, const std::vector<Tensor>& parts) {
  if (parts.empty()) throw ShapeError("concat_rows needs at least one part");
  const int n = parts[0].dims().size() == 2 ? parts[0].dims()[1] : -1;
  int rows = 0;
  for (const auto& p : parts) {
    require_2d(p, "concat_rows part");
    if (p.dims()[1] != n) throw ShapeError("concat_rows column mismatch");
    rows += p.dims()[0];
  }
  Tensor out = out_like({rows, n});
  int64_t off = 0;
  for (const auto& p : parts) {
    std::memcpy(out.data().data() + off, p.data().data(), sizeof(float) * p.size());
    off += p.size();
  }
  return record_op(tape, OpKind::ConcatRows, parts, out);
}

Tensor slice_rows(Tape& tape, const Tensor& a, int r0, int r1) {
  require_2d(a, "slice_rows input");
  if (r0 < 0 || r1 > a.dims()[0] || r0 >= r1) {
    throw ShapeError("slice_rows [" + std::to_string(r0) + ", " + std::to_string(r1) +
                     ") invalid for " + shape_str(a.dims()));
  }
  const int n = a.dims()[1];
  Tensor out = out_like({r1 - r0, n});
  std::memcpy(out.data().data(), a.data().data() + static_cast<int64_t>(r0) * n,
              sizeof(float) * out.size());
  return record_op(tape, OpKind::SliceRows, {a}, out, {r0, r1});
}

Tensor slice_cols(Tape& tape, const Tensor& a, int c0, int c1) {
  require_2d(a, "slice_cols input");
  if (c0 < 0 || c1 > a.dims()[1] || c0 >= c1) {
    throw ShapeError("slice_cols [" + std::to_string(c0) + ", " + std::to_string(c1) +
                     ") invalid for " + shape_str(a.dims()));
  }
  const int m = a.dims()[0], n = a.dims()[1], w = c1 - c0;
  Tensor out = out_like({m, w});
  for (int i = 0; i < m; ++i) {
    std::memcpy(out.data().data() + static_cast<int64_t>(i) * w,
                a.data().data() + static_cast<int64_t>(i) * n + c0, sizeof(float) * w);
  }
  return record_op(tape, OpKind::SliceCols, {a}, out, {c0, c1});
}

Tensor concat_cols(Tape& tape, const std::vector<Tensor>& parts) {
  if (parts.empty()) throw ShapeError("concat_cols needs at least one part");
  const int m = parts[0].dims().size() == 2 ? parts[0].dims()[0] : -1;
  int cols = 0;
  for (const auto& p : parts) {
    require_2d(p, "concat_cols part");
    if (p.dims()[0] != m) throw ShapeError("concat_cols row mismatch");
    cols += p.dims()[1];
  }
  Tensor out = out_like({m, cols});
  int coff = 0;
  for (const auto& p : parts) {
    const int w = p.dims()[1];
    for (int i = 0; i < m; ++i) {
      std::memcpy(out.data().data() + static_cast<int64_t>(i) * cols + coff,
                  p.data().data() + static_cast<int64_t>(i) * w, sizeof(float) * w);
    }
    coff += w;
  }
  return record_op(tape, OpKind::ConcatCols, parts, out);
}

Tensor dropout(Tape& tape, const Tensor& a, float p, Rng& rng) {
  if (p < 0.0f || p >= 1.0f) throw ValueError("dropout p must be in [0, 1)");
  std::vector<float> mask(static_cast<size_t>(a.size()));
  const float keep = 1.0f / (1.0f - p);
  for (auto& m : mask) m = rng.bernoulli(p) ? 0.0f : keep;
  Tensor out = out_like(a.dims());
  for (int64_t i = 0; i < a.size(); ++i) out.data()[i] = a.data()[i] * mask[i];
  return record_op(tape, OpKind::Dropout, {a}, out, {}, std::move(mask));
}

// --- backward ----------------------------------------------------------------

namespace {

// Gradients for tensors produced on the tape live in a pass-local map, so a
// second backward() over the same tape re-accumulates cleanly into the
// persistent grad buffers of leaf tensors.
struct BackwardCtx {
  std::unordered_set<const TensorImpl*> produced;
  std::unordered_map<const TensorImpl*, std::vector<float>> local;

  // Gradient buffer for a node input; nullptr for frozen leaves.
  float* dst(const Tensor& t) {
    TensorImpl* impl = t.impl();
    if (produced.find(impl) != produced.end()) {
      auto [it, fresh] = local.try_emplace(impl);
      if (fresh) it->second.assign(impl->data.size(), 0.0f);
      return it->second.data();
    }
    if (!impl->requires_grad) return nullptr;
    if (impl->grad.empty()) impl->grad.assign(impl->data.size(), 0.0f);
    return impl->grad.data();
  }

  const float* upstream(const TensorImpl* impl) const {
    const auto it = local.find(impl);
    return it == local.end() ? nullptr : it->second.data();
  }
};

void backward_node(const TapeNode& node, BackwardCtx& ctx) {
  const float* go = ctx.upstream(node.output.impl());
  if (!go) return;  // output unreachable from the loss

  switch (node.kind) {
    case OpKind::MatMul: {
      const Tensor& a = node.inputs[0];
      const Tensor& b = node.inputs[1];
      const int m = a.dims()[0], k = a.dims()[1], n = b.dims()[1];
      if (float* ga = ctx.dst(a)) {
        // dA += dC * B^T
        for (int i = 0; i < m; ++i) {
          for (int p = 0; p < k; ++p) {
            float acc = 0.0f;
            const float* grow = go + static_cast<int64_t>(i) * n;
            const float* brow = b.data().data() + static_cast<int64_t>(p) * n;
            for (int j = 0; j < n; ++j) acc += grow[j] * brow[j];
            ga[static_cast<int64_t>(i) * k + p] += acc;
          }
        }
      }
      if (float* gb = ctx.dst(b)) {
        // dB += A^T * dC
        for (int p = 0; p < k; ++p) {
          for (int i = 0; i < m; ++i) {
            const float av = a.data()[static_cast<int64_t>(i) * k + p];
            const float* grow = go + static_cast<int64_t>(i) * n;
            float* brow = gb + static_cast<int64_t>(p) * n;
            for (int j = 0; j < n; ++j) brow[j] += av * grow[j];
          }
        }
      }
      break;
    }
    case OpKind::MatMulNT: {
      const Tensor& a = node.inputs[0];
      const Tensor& b = node.inputs[1];
      const int m = a.dims()[0], k = a.dims()[1], n = b.dims()[0];
      if (float* ga = ctx.dst(a)) {
        // dA += dC * B
        for (int i = 0; i < m; ++i) {
          const float* grow = go + static_cast<int64_t>(i) * n;
          float* garow = ga + static_cast<int64_t>(i) * k;
          for (int j = 0; j < n; ++j) {
            const float gv = grow[j];
            const float* brow = b.data().data() + static_cast<int64_t>(j) * k;
            for (int p = 0; p < k; ++p) garow[p] += gv * brow[p];
          }
        }
      }
      if (float* gb = ctx.dst(b)) {
        // dB += dC^T * A
        for (int j = 0; j < n; ++j) {
          float* gbrow = gb + static_cast<int64_t>(j) * k;
          for (int i = 0; i < m; ++i) {
            const float gv = go[static_cast<int64_t>(i) * n + j];
            const float* arow = a.data().data() + static_cast<int64_t>(i) * k;
            for (int p = 0; p < k; ++p) gbrow[p] += gv * arow[p];
          }
        }
      }
      break;
    }
    case OpKind::Add: {
      for (int s = 0; s < 2; ++s) {
        if (float* g = ctx.dst(node.inputs[s])) {
          for (int64_t i = 0; i < node.output.size(); ++i) g[i] += go[i];
        }
      }
      break;
    }
    case OpKind::AddRowVec: {
      const int m = node.inputs[0].dims()[0], n = node.inputs[0].dims()[1];
      if (float* gx = ctx.dst(node.inputs[0])) {
        for (int64_t i = 0; i < static_cast<int64_t>(m) * n; ++i) gx[i] += go[i];
      }
      if (float* gv = ctx.dst(node.inputs[1])) {
        for (int i = 0; i < m; ++i) {
          for (int j = 0; j < n; ++j) gv[j] += go[static_cast<int64_t>(i) * n + j];
        }
      }
      break;
    }
    case OpKind::Mul: {
      const auto av = node.inputs[0].data();
      const auto bv = node.inputs[1].data();
      if (float* ga = ctx.dst(node.inputs[0])) {
        for (int64_t i = 0; i < node.output.size(); ++i) ga[i] += go[i] * bv[i];
      }
      if (float* gb = ctx.dst(node.inputs[1])) {
        for (int64_t i = 0; i < node.output.size(); ++i) gb[i] += go[i] * av[i];
      }
      break;
    }
    case OpKind::Scale: {
      if (float* ga = ctx.dst(node.inputs[0])) {
        const float c = node.fattrs[0];
        for (int64_t i = 0; i < node.output.size(); ++i) ga[i] += go[i] * c;
      }
      break;
    }
    case OpKind::Relu: {
      if (float* ga = ctx.dst(node.inputs[0])) {
        const auto av = node.inputs[0].data();
        for (int64_t i = 0; i < node.output.size(); ++i) {
          if (av[i] > 0.0f) ga[i] += go[i];
        }
      }
      break;
    }
    case OpKind::Softmax: {
      if (float* ga = ctx.dst(node.inputs[0])) {
        const auto yv = node.output.data();
        for_each_axis_slice(node.inputs[0].dims(), node.iattrs[0],
                            [&](int64_t off, int n, int64_t stride) {
                              float dot = 0.0f;
                              for (int i = 0; i < n; ++i) {
                                dot += go[off + i * stride] * yv[off + i * stride];
                              }
                              for (int i = 0; i < n; ++i) {
                                const int64_t idx = off + i * stride;
                                ga[idx] += yv[idx] * (go[idx] - dot);
                              }
                            });
      }
      break;
    }
    case OpKind::SoftmaxCausal: {
      if (float* ga = ctx.dst(node.inputs[0])) {
        const auto yv = node.output.data();
        const int t = node.output.dims()[0];
        for (int i = 0; i < t; ++i) {
          const int64_t off = static_cast<int64_t>(i) * t;
          float dot = 0.0f;
          for (int j = 0; j <= i; ++j) dot += go[off + j] * yv[off + j];
          for (int j = 0; j <= i; ++j) ga[off + j] += yv[off + j] * (go[off + j] - dot);
        }
      }
      break;
    }
    case OpKind::LayerNorm: {
      const Tensor& x = node.inputs[0];
      const Tensor& gain = node.inputs[1];
      const float eps = node.fattrs[0];
      const int d = x.dims().back();
      const int64_t rows = x.size() / d;
      float* gx = ctx.dst(x);
      float* gg = ctx.dst(gain);
      float* gb = ctx.dst(node.inputs[2]);
      for (int64_t r = 0; r < rows; ++r) {
        const float* xv = x.data().data() + r * d;
        const float* gv = go + r * d;
        float mean = 0.0f;
        for (int i = 0; i < d; ++i) mean += xv[i];
        mean /= static_cast<float>(d);
        float var = 0.0f;
        for (int i = 0; i < d; ++i) var += (xv[i] - mean) * (xv[i] - mean);
        var /= static_cast<float>(d);
        const float inv = 1.0f / std::sqrt(var + eps);
        // xhat = (x - mean) * inv
        float m1 = 0.0f, m2 = 0.0f;  // mean(dy*g), mean(dy*g*xhat)
        for (int i = 0; i < d; ++i) {
          const float xh = (xv[i] - mean) * inv;
          const float dyg = gv[i] * gain.data()[i];
          m1 += dyg;
          m2 += dyg * xh;
          if (gg) gg[i] += gv[i] * xh;
          if (gb) gb[i] += gv[i];
        }
        m1 /= static_cast<float>(d);
        m2 /= static_cast<float>(d);
        if (gx) {
          for (int i = 0; i < d; ++i) {
            const float xh = (xv[i] - mean) * inv;
            const float dyg = gv[i] * gain.data()[i];
            gx[r * d + i] += inv * (dyg - m1 - xh * m2);
          }
        }
      }
      break;
    }
    case OpKind::Embed: {
      if (float* gt = ctx.dst(node.inputs[0])) {
        const int d = node.inputs[0].dims()[1];
        for (size_t i = 0; i < node.iattrs.size(); ++i) {
          const int64_t row = node.iattrs[i];
          for (int j = 0; j < d; ++j) {
            gt[row * d + j] += go[static_cast<int64_t>(i) * d + j];
          }
        }
      }
      break;
    }
    case OpKind::CrossEntropy: {
      if (float* gl = ctx.dst(node.inputs[0])) {
        const int t = node.inputs[0].dims()[0], v = node.inputs[0].dims()[1];
        const int ignore_index = node.iattrs[0];
        const int* targets = node.iattrs.data() + 1;
        int live = 0;
        for (int i = 0; i < t; ++i) {
          if (targets[i] != ignore_index) ++live;
        }
        const float w = go[0] / static_cast<float>(live);
        for (int i = 0; i < t; ++i) {
          if (targets[i] == ignore_index) continue;
          const float* row = node.inputs[0].data().data() + static_cast<int64_t>(i) * v;
          float mx = row[0];
          for (int j = 1; j < v; ++j) mx = std::max(mx, row[j]);
          float sum = 0.0f;
          for (int j = 0; j < v; ++j) sum += std::exp(row[j] - mx);
          float* grow = gl + static_cast<int64_t>(i) * v;
          for (int j = 0; j < v; ++j) {
            float p = std::exp(row[j] - mx) / sum;
            if (j == targets[i]) p -= 1.0f;
            grow[j] += w * p;
          }
        }
      }
      break;
    }
    case OpKind::BceLogits: {
      if (float* gx = ctx.dst(node.inputs[0])) {
        const float x = node.inputs[0].data()[0];
        const float label = node.fattrs[0];
        const float sig = 1.0f / (1.0f + std::exp(-x));
        gx[0] += go[0] * (sig - label);
      }
      break;
    }
    case OpKind::SumAll: {
      if (float* ga = ctx.dst(node.inputs[0])) {
        for (int64_t i = 0; i < node.inputs[0].size(); ++i) ga[i] += go[0];
      }
      break;
    }
    case OpKind::MeanAll: {
      if (float* ga = ctx.dst(node.inputs[0])) {
        const float w = go[0] / static_cast<float>(node.inputs[0].size());
        for (int64_t i = 0; i < node.inputs[0].size(); ++i) ga[i] += w;
      }
      break;
    }
    case OpKind::MeanAxis0: {
      if (float* ga = ctx.dst(node.inputs[0])) {
        const int m = node.inputs[0].dims()[0], n = node.inputs[0].dims()[1];
        const float w = 1.0f / static_cast<float>(m);
        for (int i = 0; i < m; ++i) {
          for (int j = 0; j < n; ++j) ga[static_cast<int64_t>(i) * n + j] += go[j] * w;
        }
      }
      break;
    }
    case OpKind::ConcatRows: {
      int64_t off = 0;
      for (const auto& p : node.inputs) {
        if (float* gp = ctx.dst(p)) {
          for (int64_t i = 0; i < p.size(); ++i) gp[i] += go[off + i];
        }
        off += p.size();
      }
      break;
    }
    case OpKind::SliceRows: {
      if (float* ga = ctx.dst(node.inputs[0])) {
        const int n = node.inputs[0].dims()[1];
        const int64_t base = static_cast<int64_t>(node.iattrs[0]) * n;
        for (int64_t i = 0; i < node.output.size(); ++i) ga[base + i] += go[i];
      }
      break;
    }
    case OpKind::SliceCols: {
      if (float* ga = ctx.dst(node.inputs[0])) {
        const int m = node.inputs[0].dims()[0], n = node.inputs[0].dims()[1];
        const int c0 = node.iattrs[0], w = node.iattrs[1] - node.iattrs[0];
        for (int i = 0; i < m; ++i) {
          for (int j = 0; j < w; ++j) {
            ga[static_cast<int64_t>(i) * n + c0 + j] += go[static_cast<int64_t>(i) * w + j];
          }
        }
      }
      break;
    }
    case OpKind::ConcatCols: {
      const int m = node.output.dims()[0], cols = node.output.dims()[1];
      int coff = 0;
      for (const auto& p : node.inputs) {
        const int w = p.dims()[1];
        if (float* gp = ctx.dst(p)) {
          for (int i = 0; i < m; ++i) {
            for (int j = 0; j < w; ++j) {
              gp[static_cast<int64_t>(i) * w + j] += go[static_cast<int64_t>(i) * cols + coff + j];
            }
          }
        }
        coff += w;
      }
      break;
    }
    case OpKind::Dropout: {
      if (float* ga = ctx.dst(node.inputs[0])) {
        for (int64_t i = 0; i < node.output.size(); ++i) ga[i] += go[i] * node.fattrs[i];
      }
      break;
    }
  }
}

}  // namespace

void Tape::backward(const Tensor& loss) const {
  if (loss.size() != 1) {
    throw ShapeError("backward needs a scalar loss, got " + shape_str(loss.dims()));
  }
  BackwardCtx ctx;
  ctx.produced.reserve(nodes_.size());
  bool found = false;
  for (const auto& node : nodes_) {
    ctx.produced.insert(node.output.impl());
    if (node.output.impl() == loss.impl()) found = true;
  }
  if (!found) throw ValueError("backward: loss is not an output recorded on this tape");
  ctx.local[loss.impl()] = {1.0f};
  for (auto it = nodes_.rbegin(); it != nodes_.rend(); ++it) backward_node(*it, ctx);
}

void backward(const Tensor& loss, const Tape& tape) { tape.backward(loss); }

// --- 64-bit replay -----------------------------------------------------------

double Tape::replay64(const Tensor& target, const TensorImpl* bump_leaf, int64_t bump_index,
                      double bump_delta) const {
  std::unordered_map<const TensorImpl*, std::vector<double>> values;
  values.reserve(nodes_.size() * 2);

  auto fetch = [&](const Tensor& t) -> const std::vector<double>& {
    auto it = values.find(t.impl());
    if (it != values.end()) return it->second;
    std::vector<double> v(t.impl()->data.begin(), t.impl()->data.end());
    if (t.impl() == bump_leaf && bump_index >= 0) v[bump_index] += bump_delta;
    return values.emplace(t.impl(), std::move(v)).first->second;
  };

  for (const auto& node : nodes_) {
    std::vector<double> out(static_cast<size_t>(node.output.size()));
    switch (node.kind) {
      case OpKind::MatMul: {
        const auto& a = fetch(node.inputs[0]);
        const auto& b = fetch(node.inputs[1]);
        k_matmul(a.data(), b.data(), out.data(), node.inputs[0].dims()[0],
                 node.inputs[0].dims()[1], node.inputs[1].dims()[1]);
        break;
      }
      case OpKind::MatMulNT: {
        const auto& a = fetch(node.inputs[0]);
        const auto& b = fetch(node.inputs[1]);
        k_matmul_nt(a.data(), b.data(), out.data(), node.inputs[0].dims()[0],
                    node.inputs[0].dims()[1], node.inputs[1].dims()[0]);
        break;
      }
      case OpKind::Add: {
        const auto& a = fetch(node.inputs[0]);
        const auto& b = fetch(node.inputs[1]);
        for (size_t i = 0; i < out.size(); ++i) out[i] = a[i] + b[i];
        break;
      }
      case OpKind::AddRowVec: {
        const auto& a = fetch(node.inputs[0]);
        const auto& v = fetch(node.inputs[1]);
        const int m = node.inputs[0].dims()[0], n = node.inputs[0].dims()[1];
        for (int i = 0; i < m; ++i) {
          for (int j = 0; j < n; ++j) out[static_cast<size_t>(i) * n + j] = a[i * n + j] + v[j];
        }
        break;
      }
      case OpKind::Mul: {
        const auto& a = fetch(node.inputs[0]);
        const auto& b = fetch(node.inputs[1]);
        for (size_t i = 0; i < out.size(); ++i) out[i] = a[i] * b[i];
        break;
      }
      case OpKind::Scale: {
        const auto& a = fetch(node.inputs[0]);
        const double c = node.fattrs[0];
        for (size_t i = 0; i < out.size(); ++i) out[i] = a[i] * c;
        break;
      }
      case OpKind::Relu: {
        const auto& a = fetch(node.inputs[0]);
        for (size_t i = 0; i < out.size(); ++i) out[i] = std::max(a[i], 0.0);
        break;
      }
      case OpKind::Softmax: {
        const auto& a = fetch(node.inputs[0]);
        for_each_axis_slice(node.inputs[0].dims(), node.iattrs[0],
                            [&](int64_t off, int n, int64_t stride) {
                              k_softmax_slice(a.data() + off, out.data() + off, n, stride);
                            });
        break;
      }
      case OpKind::SoftmaxCausal: {
        const auto& a = fetch(node.inputs[0]);
        const int t = node.output.dims()[0];
        for (int i = 0; i < t; ++i) {
          k_softmax_slice(a.data() + static_cast<int64_t>(i) * t,
                          out.data() + static_cast<int64_t>(i) * t, i + 1, 1);
        }
        break;
      }
      case OpKind::LayerNorm: {
        const auto& x = fetch(node.inputs[0]);
        const auto& g = fetch(node.inputs[1]);
        const auto& b = fetch(node.inputs[2]);
        const int d = node.inputs[0].dims().back();
        const int64_t rows = node.inputs[0].size() / d;
        for (int64_t r = 0; r < rows; ++r) {
          k_layer_norm_row(x.data() + r * d, g.data(), b.data(), out.data() + r * d, d,
                           static_cast<double>(node.fattrs[0]));
        }
        break;
      }
      case OpKind::Embed: {
        const auto& t = fetch(node.inputs[0]);
        const int d = node.inputs[0].dims()[1];
        for (size_t i = 0; i < node.iattrs.size(); ++i) {
          for (int j = 0; j < d; ++j) {
            out[i * d + j] = t[static_cast<int64_t>(node.iattrs[i]) * d + j];
          }
        }
        break;
      }
      case OpKind::CrossEntropy: {
        const auto& l = fetch(node.inputs[0]);
        out[0] = k_cross_entropy(l.data(), node.inputs[0].dims()[0], node.inputs[0].dims()[1],
                                 node.iattrs.data() + 1, node.iattrs[0], nullptr);
        break;
      }
      case OpKind::BceLogits: {
        const auto& x = fetch(node.inputs[0]);
        out[0] = k_bce_logits(x[0], static_cast<double>(node.fattrs[0]));
        break;
      }
      case OpKind::SumAll: {
        const auto& a = fetch(node.inputs[0]);
        double s = 0.0;
        for (const double v : a) s += v;
        out[0] = s;
        break;
      }
      case OpKind::MeanAll: {
        const auto& a = fetch(node.inputs[0]);
        double s = 0.0;
        for (const double v : a) s += v;
        out[0] = s / static_cast<double>(a.size());
        break;
      }
      case OpKind::MeanAxis0: {
        const auto& a = fetch(node.inputs[0]);
        const int m = node.inputs[0].dims()[0], n = node.inputs[0].dims()[1];
        for (int j = 0; j < n; ++j) {
          double s = 0.0;
          for (int i = 0; i < m; ++i) s += a[static_cast<size_t>(i) * n + j];
          out[j] = s / m;
        }
        break;
      }
      case OpKind::ConcatRows: {
        size_t off = 0;
        for (const auto& p : node.inputs) {
          const auto& v = fetch(p);
          std::copy(v.begin(), v.end(), out.begin() + off);
          off += v.size();
        }
        break;
      }
      case OpKind::SliceRows: {
        const auto& a = fetch(node.inputs[0]);
        const int n = node.inputs[0].dims()[1];
        const size_t base = static_cast<size_t>(node.iattrs[0]) * n;
        std::copy(a.begin() + base, a.begin() + base + out.size(), out.begin());
        break;
      }
      case OpKind::SliceCols: {
        const auto& a = fetch(node.inputs[0]);
        const int m = node.inputs[0].dims()[0], n = node.inputs[0].dims()[1];
        const int c0 = node.iattrs[0], w = node.iattrs[1] - node.iattrs[0];
        for (int i = 0; i < m; ++i) {
          for (int j = 0; j < w; ++j) {
            out[static_cast<size_t>(i) * w + j] = a[static_cast<size_t>(i) * n + c0 + j];
          }
        }
        break;
      }
      case OpKind::ConcatCols: {
        const int m = node.output.dims()[0], cols = node.output.dims()[1];
        int coff = 0;
        for (const auto& p : node.inputs) {
          const auto& v = fetch(p);
          const int w = p.dims()[1];
          for (int i = 0; i < m; ++i) {
            for (int j = 0; j < w; ++j) {
              out[static_cast<size_t>(i) * cols + coff + j] = v[static_cast<size_t>(i) * w + j];
            }
          }
          coff += w;
        }
        break;
      }
      case OpKind::Dropout: {
        const auto& a = fetch(node.inputs[0]);
        for (size_t i = 0; i < out.size(); ++i) {
          out[i] = a[i] * static_cast<double>(node.fattrs[i]);
        }
        break;
      }
    }
    values[node.output.impl()] = std::move(out);
  }

  auto it = values.find(target.impl());
  if (it == values.end() || it->second.size() != 1) {
    throw ValueError("replay64: target is not a scalar output of this tape");
  }
  return it->second[0];
}

// --- optimizer ----------------------------------------------------------------

void adamw_step(std::vector<Tensor>& params, AdamWState& state, float lr,
                const AdamWConfig& cfg) {
  if (state.m.empty()) {
    state.m.resize(params.size());
    state.v.resize(params.size());
    for (size_t i = 0; i < params.size(); ++i) {
      state.m[i].assign(static_cast<size_t>(params[i].size()), 0.0f);
      state.v[i].assign(static_cast<size_t>(params[i].size()), 0.0f);
    }
  }
  if (state.m.size() != params.size()) {
    throw ShapeError("adamw state has " + std::to_string(state.m.size()) + " slots for " +
                     std::to_string(params.size()) + " params");
  }
  state.step += 1;
  const float t = static_cast<float>(state.step);
  const float bc1 = 1.0f - std::pow(cfg.beta1, t);
  const float bc2 = 1.0f - std::pow(cfg.beta2, t);
  for (size_t i = 0; i < params.size(); ++i) {
    Tensor& p = params[i];
    if (!p.requires_grad()) continue;
    if (state.m[i].size() != static_cast<size_t>(p.size())) {
      throw ShapeError("adamw moment shape mismatch for param " + p.name());
    }
    auto pv = p.data();
    const auto& gvec = p.impl()->grad;
    float* m = state.m[i].data();
    float* v = state.v[i].data();
    for (int64_t j = 0; j < p.size(); ++j) {
      const float g = gvec.empty() ? 0.0f : gvec[j];
      m[j] = cfg.beta1 * m[j] + (1.0f - cfg.beta1) * g;
      v[j] = cfg.beta2 * v[j] + (1.0f - cfg.beta2) * g * g;
      const float mhat = m[j] / bc1;
      const float vhat = v[j] / bc2;
      pv[j] -= lr * (mhat / (std::sqrt(vhat) + cfg.eps) + cfg.weight_decay * pv[j]);
    }
  }
}

// --- finite differences --------------------------------------------------------

GradCheckReport finite_difference_check(const Tape& tape, const Tensor& loss,
                                        const std::vector<Tensor>& inputs, double h,
                                        double tolerance, int max_entries_per_tensor,
                                        Rng* sample_rng) {
  if (h <= 0.0) throw ValueError("finite_difference_check: h must be > 0");
  (void)tolerance;
  GradCheckReport report;
  for (const auto& t : inputs) {
    std::vector<int64_t> indices;
    if (max_entries_per_tensor <= 0 || t.size() <= max_entries_per_tensor) {
      indices.resize(static_cast<size_t>(t.size()));
      for (int64_t i = 0; i < t.size(); ++i) indices[static_cast<size_t>(i)] = i;
    } else {
      if (!sample_rng) throw ValueError("finite_difference_check: sampling needs an rng");
      for (int i = 0; i < max_entries_per_tensor; ++i) {
        indices.push_back(static_cast<int64_t>(sample_rng->below(static_cast<uint64_t>(t.size()))));
      }
    }
    const auto gv = t.grad_view();
    for (const int64_t idx : indices) {
      const double fp = tape.replay64(loss, t.impl(), idx, h);
      const double fm = tape.replay64(loss, t.impl(), idx, -h);
      const double fd = (fp - fm) / (2.0 * h);
      const double g = gv.empty() ? 0.0 : static_cast<double>(gv[idx]);
      const double rel = std::abs(fd - g) / std::max({1.0, std::abs(fd), std::abs(g)});
      ++report.n_checked;
      if (rel > report.max_rel_error) {
        report.max_rel_error = rel;
        report.worst = (t.name().empty() ? std::string("tensor") : t.name()) + "[" +
                       std::to_string(idx) + "]";
      }
    }
  }
  return report;
}

}  // namespace latr
