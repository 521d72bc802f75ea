#pragma once

// Decoder-only transformer over token sequences: pre-norm blocks with causal
// multi-head attention, learned positional embeddings and an untied output
// head. Forward, masked NLL and exact reverse-mode gradients, plus an
// incremental inference context for decoding.

#include <cstdint>
#include <optional>
#include <span>
#include <vector>

#include <Eigen/Dense>

#include "codec.hpp"

namespace roomseq {

using RowMatrix = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using Vector = Eigen::VectorXd;
using RowVector = Eigen::RowVectorXd;
using MatrixMap = Eigen::Map<RowMatrix>;
using ConstMatrixMap = Eigen::Map<const RowMatrix>;

// Row t holds scores for the token at position t + 1.
using LogitsMatrix = RowMatrix;

struct ModelConfig {
  int d_model = 64;
  int n_heads = 4;
  int n_layers = 2;
  int d_ff = 256;
  int vocab_size = 0;
  int max_seq_len = 160;
  std::uint64_t seed = 0;

  void validate() const;
  friend bool operator==(const ModelConfig&, const ModelConfig&) = default;
};

struct TensorRef {
  std::size_t offset = 0;
  int rows = 0;
  int cols = 0;
  std::size_t size() const { return static_cast<std::size_t>(rows) * cols; }
};

struct LayerTensors {
  TensorRef ln1_gain, ln1_bias;
  TensorRef wq, bq, wk, bk, wv, bv, wo, bo;
  TensorRef ln2_gain, ln2_bias;
  TensorRef w1, b1, w2, b2;
};

struct ParamLayout {
  TensorRef token_embedding;
  TensorRef position_embedding;
  std::vector<LayerTensors> layers;
  TensorRef final_gain, final_bias;
  TensorRef head;
  std::size_t total = 0;

  static ParamLayout build(const ModelConfig& config);
  // Every tensor with its role, in storage order.
  enum class Role { Weight, Gain, Bias };
  std::vector<std::pair<TensorRef, Role>> tensors() const;
};

// Flat storage for every learnable weight. Gradients share the layout.
class Parameters {
 public:
  Parameters() = default;
  explicit Parameters(const ModelConfig& config);

  const ModelConfig& config() const { return config_; }
  const ParamLayout& layout() const { return layout_; }
  std::size_t size() const { return data_.size(); }

  std::span<double> values() { return data_; }
  std::span<const double> values() const { return data_; }

  MatrixMap view(const TensorRef& t) { return {data_.data() + t.offset, t.rows, t.cols}; }
  ConstMatrixMap view(const TensorRef& t) const { return {data_.data() + t.offset, t.rows, t.cols}; }

  void set_zero();
  bool all_finite() const;

  friend bool operator==(const Parameters& a, const Parameters& b) {
    return a.config_ == b.config_ && a.data_ == b.data_;
  }

 private:
  ModelConfig config_;
  ParamLayout layout_;
  // Vectorized reductions peel to the packet boundary, so a fixed alignment
  // keeps summation order, and therefore results, independent of the heap.
  std::vector<double, Eigen::aligned_allocator<double>> data_;
};

using Gradients = Parameters;

// Normal(0, 0.02^2) weights, unit gains, zero biases; deterministic in seed.
Parameters init_params(const ModelConfig& config);

// Full logits, one row per input position.
LogitsMatrix forward(const Parameters& params, const TokenSequence& tokens);

struct NllResult {
  double loss = 0;
  double weight_sum = 0;
  bool all_masked = false;
};

// Weighted mean of -log softmax(logits[t])[targets[t]]; 0 with all_masked set
// when every weight is zero.
NllResult loss_nll(const LogitsMatrix& logits, const TokenSequence& targets,
                   std::span<const double> mask);

// d loss_nll / d logits, scaled by `scale`.
RowMatrix nll_logit_grad(const LogitsMatrix& logits, const TokenSequence& targets,
                         std::span<const double> mask, double scale = 1.0);

// Gradient of scale * loss_nll(forward(tokens), targets, mask) plus the
// optional upstream gradient injected at the logits.
Gradients backward(const Parameters& params, const TokenSequence& tokens,
                   const TokenSequence& targets, std::span<const double> mask,
                   const RowMatrix* constraint_grads = nullptr, double scale = 1.0);

// Training-time pass that keeps activations. Logits are computed for rows
// [head_begin, T) only; backward accumulates into `grads`.
class ForwardPass {
 public:
  ForwardPass(const Parameters& params, const TokenSequence& tokens, int head_begin = 0);

  int length() const { return length_; }
  int head_begin() const { return head_begin_; }
  // Rows [head_begin, T).
  const RowMatrix& logits() const { return logits_; }

  // dlogits has the shape of logits().
  void backward(const RowMatrix& dlogits, Gradients& grads) const;

 private:
  struct LayerCache {
    RowMatrix x_in;
    Vector rstd1;
    RowMatrix xhat1, h1, q, k, v;
    std::vector<RowMatrix> attn;
    RowMatrix att;
    RowMatrix x_mid;
    Vector rstd2;
    RowMatrix xhat2, h2, u, g;
  };

  const Parameters& params_;
  TokenSequence tokens_;
  int length_ = 0;
  int head_begin_ = 0;
  std::vector<LayerCache> layers_;
  Vector rstdf_;
  RowMatrix xhatf_, hf_;
  RowMatrix logits_;
};

// Incremental causal inference with cached keys and values; copyable so beam
// hypotheses can fork.
class DecodeContext {
 public:
  explicit DecodeContext(const Parameters& params);

  // Feeds one token and returns the logits row predicting the next one.
  const RowVector& append(TokenId token);
  // Feeds several tokens; returns the last logits row.
  const RowVector& append(std::span<const TokenId> tokens);

  int length() const { return length_; }
  const RowVector& last_logits() const { return last_logits_; }

 private:
  const Parameters* params_;
  int length_ = 0;
  std::vector<RowMatrix> keys_;
  std::vector<RowMatrix> values_;
  RowVector last_logits_;
};

// Row-wise softmax, numerically stabilized.
RowMatrix softmax_rows(const RowMatrix& logits);

}  // namespace roomseq
