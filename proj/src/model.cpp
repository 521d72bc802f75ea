#include "model.hpp"

#include <cmath>
#include <limits>
#include <random>

#include "error.hpp"

namespace roomseq {

namespace {

constexpr double kLayerNormEps = 1e-5;
constexpr double kGeluC = 0.7978845608028654;  // sqrt(2 / pi)
constexpr double kGeluA = 0.044715;

TensorRef take(std::size_t& cursor, int rows, int cols) {
  TensorRef t{cursor, rows, cols};
  cursor += t.size();
  return t;
}

// y = xhat * gain + bias, per row.
void layer_norm(const RowMatrix& x, const ConstMatrixMap& gain, const ConstMatrixMap& bias,
                RowMatrix& xhat, Vector& rstd, RowMatrix& y) {
  const auto rows = x.rows();
  const auto cols = x.cols();
  xhat.resize(rows, cols);
  rstd.resize(rows);
  for (Eigen::Index r = 0; r < rows; ++r) {
    const double mean = x.row(r).mean();
    const double var = (x.row(r).array() - mean).square().mean();
    const double s = 1.0 / std::sqrt(var + kLayerNormEps);
    rstd(r) = s;
    xhat.row(r) = (x.row(r).array() - mean) * s;
  }
  y = (xhat.array().rowwise() * gain.row(0).array()).rowwise() + bias.row(0).array();
}

// Returns dx; accumulates gain/bias gradients.
RowMatrix layer_norm_backward(const RowMatrix& dy, const RowMatrix& xhat, const Vector& rstd,
                              const ConstMatrixMap& gain, MatrixMap dgain, MatrixMap dbias) {
  dgain.row(0) += (dy.array() * xhat.array()).colwise().sum().matrix();
  dbias.row(0) += dy.colwise().sum();
  const RowMatrix dxhat = dy.array().rowwise() * gain.row(0).array();
  RowMatrix dx(dy.rows(), dy.cols());
  const double n = static_cast<double>(dy.cols());
  for (Eigen::Index r = 0; r < dy.rows(); ++r) {
    const double mean_d = dxhat.row(r).sum() / n;
    const double mean_dx = dxhat.row(r).dot(xhat.row(r)) / n;
    dx.row(r) = rstd(r) * (dxhat.row(r).array() - mean_d - xhat.row(r).array() * mean_dx);
  }
  return dx;
}

double gelu(double u) {
  return 0.5 * u * (1.0 + std::tanh(kGeluC * (u + kGeluA * u * u * u)));
}

double gelu_grad(double u) {
  const double t = std::tanh(kGeluC * (u + kGeluA * u * u * u));
  return 0.5 * (1.0 + t) + 0.5 * u * (1.0 - t * t) * kGeluC * (1.0 + 3.0 * kGeluA * u * u);
}

void check_tokens(const Parameters& params, const TokenSequence& tokens) {
  const auto& cfg = params.config();
  if (tokens.empty()) fail(ErrorCode::InvalidArgument, "empty token sequence");
  if (static_cast<int>(tokens.size()) > cfg.max_seq_len)
    fail(ErrorCode::SequenceTooLong, "sequence of length " + std::to_string(tokens.size()) +
                                         " exceeds max_seq_len " + std::to_string(cfg.max_seq_len));
  for (TokenId t : tokens) {
    if (t < 0 || t >= cfg.vocab_size)
      fail(ErrorCode::TokenOutOfRange, "token id out of range: " + std::to_string(t));
  }
}

}  // namespace

void ModelConfig::validate() const {
  if (d_model <= 0 || n_heads <= 0 || n_layers <= 0 || d_ff <= 0 || vocab_size <= 0)
    fail(ErrorCode::InvalidArgument, "model dimensions must be positive");
  if (d_model % n_heads != 0) fail(ErrorCode::InvalidArgument, "d_model must be divisible by n_heads");
  if (max_seq_len < 1) fail(ErrorCode::InvalidArgument, "max_seq_len must be positive");
}

ParamLayout ParamLayout::build(const ModelConfig& c) {
  ParamLayout l;
  std::size_t cur = 0;
  l.token_embedding = take(cur, c.vocab_size, c.d_model);
  l.position_embedding = take(cur, c.max_seq_len, c.d_model);
  for (int i = 0; i < c.n_layers; ++i) {
    LayerTensors t;
    t.ln1_gain = take(cur, 1, c.d_model);
    t.ln1_bias = take(cur, 1, c.d_model);
    t.wq = take(cur, c.d_model, c.d_model);
    t.bq = take(cur, 1, c.d_model);
    t.wk = take(cur, c.d_model, c.d_model);
    t.bk = take(cur, 1, c.d_model);
    t.wv = take(cur, c.d_model, c.d_model);
    t.bv = take(cur, 1, c.d_model);
    t.wo = take(cur, c.d_model, c.d_model);
    t.bo = take(cur, 1, c.d_model);
    t.ln2_gain = take(cur, 1, c.d_model);
    t.ln2_bias = take(cur, 1, c.d_model);
    t.w1 = take(cur, c.d_model, c.d_ff);
    t.b1 = take(cur, 1, c.d_ff);
    t.w2 = take(cur, c.d_ff, c.d_model);
    t.b2 = take(cur, 1, c.d_model);
    l.layers.push_back(t);
  }
  l.final_gain = take(cur, 1, c.d_model);
  l.final_bias = take(cur, 1, c.d_model);
  l.head = take(cur, c.d_model, c.vocab_size);
  l.total = cur;
  return l;
}

std::vector<std::pair<TensorRef, ParamLayout::Role>> ParamLayout::tensors() const {
  std::vector<std::pair<TensorRef, Role>> out;
  out.emplace_back(token_embedding, Role::Weight);
  out.emplace_back(position_embedding, Role::Weight);
  for (const auto& t : layers) {
    out.emplace_back(t.ln1_gain, Role::Gain);
    out.emplace_back(t.ln1_bias, Role::Bias);
    out.emplace_back(t.wq, Role::Weight);
    out.emplace_back(t.bq, Role::Bias);
    out.emplace_back(t.wk, Role::Weight);
    out.emplace_back(t.bk, Role::Bias);
    out.emplace_back(t.wv, Role::Weight);
    out.emplace_back(t.bv, Role::Bias);
    out.emplace_back(t.wo, Role::Weight);
    out.emplace_back(t.bo, Role::Bias);
    out.emplace_back(t.ln2_gain, Role::Gain);
    out.emplace_back(t.ln2_bias, Role::Bias);
    out.emplace_back(t.w1, Role::Weight);
    out.emplace_back(t.b1, Role::Bias);
    out.emplace_back(t.w2, Role::Weight);
    out.emplace_back(t.b2, Role::Bias);
  }
  out.emplace_back(final_gain, Role::Gain);
  out.emplace_back(final_bias, Role::Bias);
  out.emplace_back(head, Role::Weight);
  return out;
}

Parameters::Parameters(const ModelConfig& config)
    : config_(config), layout_(ParamLayout::build(config)), data_(layout_.total, 0.0) {
  config.validate();
}

void Parameters::set_zero() { std::fill(data_.begin(), data_.end(), 0.0); }

bool Parameters::all_finite() const {
  for (double v : data_) {
    if (!std::isfinite(v)) return false;
  }
  return true;
}

Parameters init_params(const ModelConfig& config) {
  Parameters p(config);
  std::mt19937_64 rng(config.seed);
  std::normal_distribution<double> normal(0.0, 0.02);
  for (const auto& [t, role] : p.layout().tensors()) {
    auto v = p.view(t);
    for (Eigen::Index i = 0; i < v.size(); ++i) {
      switch (role) {
        case ParamLayout::Role::Weight: v.data()[i] = normal(rng); break;
        case ParamLayout::Role::Gain: v.data()[i] = 1.0; break;
        case ParamLayout::Role::Bias: v.data()[i] = 0.0; break;
      }
    }
  }
  return p;
}

RowMatrix softmax_rows(const RowMatrix& logits) {
  RowMatrix out(logits.rows(), logits.cols());
  for (Eigen::Index r = 0; r < logits.rows(); ++r) {
    const double m = logits.row(r).maxCoeff();
    out.row(r) = (logits.row(r).array() - m).exp();
    out.row(r) /= out.row(r).sum();
  }
  return out;
}

// ---------------------------------------------------------------------------
// ForwardPass

ForwardPass::ForwardPass(const Parameters& params, const TokenSequence& tokens, int head_begin)
    : params_(params), tokens_(tokens) {
  check_tokens(params, tokens);
  const auto& cfg = params.config();
  const auto& lay = params.layout();
  length_ = static_cast<int>(tokens.size());
  if (head_begin < 0 || head_begin > length_) fail(ErrorCode::InvalidArgument, "head_begin out of range");
  head_begin_ = head_begin;
  const int T = length_;
  const int d = cfg.d_model;
  const int nh = cfg.n_heads;
  const int dh = d / nh;
  const double scale = 1.0 / std::sqrt(static_cast<double>(dh));

  const auto emb = params.view(lay.token_embedding);
  const auto pos = params.view(lay.position_embedding);
  RowMatrix x(T, d);
  for (int t = 0; t < T; ++t) x.row(t) = emb.row(tokens[t]) + pos.row(t);

  layers_.resize(cfg.n_layers);
  for (int l = 0; l < cfg.n_layers; ++l) {
    const auto& w = lay.layers[l];
    auto& c = layers_[l];
    c.x_in = x;
    layer_norm(x, params.view(w.ln1_gain), params.view(w.ln1_bias), c.xhat1, c.rstd1, c.h1);
    c.q.noalias() = c.h1 * params.view(w.wq);
    c.q.rowwise() += params.view(w.bq).row(0);
    c.k.noalias() = c.h1 * params.view(w.wk);
    c.k.rowwise() += params.view(w.bk).row(0);
    c.v.noalias() = c.h1 * params.view(w.wv);
    c.v.rowwise() += params.view(w.bv).row(0);

    c.attn.resize(nh);
    c.att.resize(T, d);
    for (int h = 0; h < nh; ++h) {
      RowMatrix s;
      s.noalias() = c.q.middleCols(h * dh, dh) * c.k.middleCols(h * dh, dh).transpose();
      RowMatrix& a = c.attn[h];
      a.setZero(T, T);
      for (int i = 0; i < T; ++i) {
        double m = -std::numeric_limits<double>::infinity();
        for (int j = 0; j <= i; ++j) m = std::max(m, s(i, j) * scale);
        double sum = 0;
        for (int j = 0; j <= i; ++j) {
          const double e = std::exp(s(i, j) * scale - m);
          a(i, j) = e;
          sum += e;
        }
        for (int j = 0; j <= i; ++j) a(i, j) /= sum;
      }
      c.att.middleCols(h * dh, dh).noalias() = a * c.v.middleCols(h * dh, dh);
    }
    x.noalias() += c.att * params.view(w.wo);
    x.rowwise() += params.view(w.bo).row(0);
    c.x_mid = x;

    layer_norm(x, params.view(w.ln2_gain), params.view(w.ln2_bias), c.xhat2, c.rstd2, c.h2);
    c.u.noalias() = c.h2 * params.view(w.w1);
    c.u.rowwise() += params.view(w.b1).row(0);
    c.g = c.u.unaryExpr(&gelu);
    x.noalias() += c.g * params.view(w.w2);
    x.rowwise() += params.view(w.b2).row(0);
  }

  const int rows = T - head_begin_;
  const RowMatrix x_head = x.bottomRows(rows);
  layer_norm(x_head, params.view(lay.final_gain), params.view(lay.final_bias), xhatf_, rstdf_, hf_);
  logits_.noalias() = hf_ * params.view(lay.head);
}

void ForwardPass::backward(const RowMatrix& dlogits, Gradients& grads) const {
  const auto& cfg = params_.config();
  const auto& lay = params_.layout();
  if (dlogits.rows() != logits_.rows() || dlogits.cols() != logits_.cols())
    fail(ErrorCode::ShapeMismatch, "dlogits shape does not match logits");
  if (!(grads.config() == cfg)) fail(ErrorCode::ShapeMismatch, "gradient layout mismatch");

  const int T = length_;
  const int d = cfg.d_model;
  const int nh = cfg.n_heads;
  const int dh = d / nh;
  const double scale = 1.0 / std::sqrt(static_cast<double>(dh));

  grads.view(lay.head).noalias() += hf_.transpose() * dlogits;
  const RowMatrix dhf = dlogits * params_.view(lay.head).transpose();
  const RowMatrix dx_head = layer_norm_backward(dhf, xhatf_, rstdf_, params_.view(lay.final_gain),
                                                grads.view(lay.final_gain), grads.view(lay.final_bias));
  RowMatrix dx = RowMatrix::Zero(T, d);
  dx.bottomRows(T - head_begin_) = dx_head;

  for (int l = cfg.n_layers - 1; l >= 0; --l) {
    const auto& w = lay.layers[l];
    const auto& c = layers_[l];

    // Feed-forward residual branch.
    grads.view(w.b2).row(0) += dx.colwise().sum();
    grads.view(w.w2).noalias() += c.g.transpose() * dx;
    RowMatrix du = dx * params_.view(w.w2).transpose();
    du.array() *= c.u.unaryExpr(&gelu_grad).array();
    grads.view(w.b1).row(0) += du.colwise().sum();
    grads.view(w.w1).noalias() += c.h2.transpose() * du;
    const RowMatrix dh2 = du * params_.view(w.w1).transpose();
    dx += layer_norm_backward(dh2, c.xhat2, c.rstd2, params_.view(w.ln2_gain),
                              grads.view(w.ln2_gain), grads.view(w.ln2_bias));

    // Attention residual branch.
    grads.view(w.bo).row(0) += dx.colwise().sum();
    grads.view(w.wo).noalias() += c.att.transpose() * dx;
    const RowMatrix datt = dx * params_.view(w.wo).transpose();
    RowMatrix dq(T, d), dk(T, d), dv(T, d);
    for (int h = 0; h < nh; ++h) {
      const RowMatrix& a = c.attn[h];
      const auto doh = datt.middleCols(h * dh, dh);
      dv.middleCols(h * dh, dh).noalias() = a.transpose() * doh;
      RowMatrix da;
      da.noalias() = doh * c.v.middleCols(h * dh, dh).transpose();
      RowMatrix ds = RowMatrix::Zero(T, T);
      for (int i = 0; i < T; ++i) {
        double dot = 0;
        for (int j = 0; j <= i; ++j) dot += da(i, j) * a(i, j);
        for (int j = 0; j <= i; ++j) ds(i, j) = a(i, j) * (da(i, j) - dot) * scale;
      }
      dq.middleCols(h * dh, dh).noalias() = ds * c.k.middleCols(h * dh, dh);
      dk.middleCols(h * dh, dh).noalias() = ds.transpose() * c.q.middleCols(h * dh, dh);
    }
    grads.view(w.bq).row(0) += dq.colwise().sum();
    grads.view(w.bk).row(0) += dk.colwise().sum();
    grads.view(w.bv).row(0) += dv.colwise().sum();
    grads.view(w.wq).noalias() += c.h1.transpose() * dq;
    grads.view(w.wk).noalias() += c.h1.transpose() * dk;
    grads.view(w.wv).noalias() += c.h1.transpose() * dv;
    RowMatrix dh1;
    dh1.noalias() = dq * params_.view(w.wq).transpose();
    dh1.noalias() += dk * params_.view(w.wk).transpose();
    dh1.noalias() += dv * params_.view(w.wv).transpose();
    dx += layer_norm_backward(dh1, c.xhat1, c.rstd1, params_.view(w.ln1_gain),
                              grads.view(w.ln1_gain), grads.view(w.ln1_bias));
  }

  auto demb = grads.view(lay.token_embedding);
  auto dpos = grads.view(lay.position_embedding);
  for (int t = 0; t < T; ++t) {
    demb.row(tokens_[t]) += dx.row(t);
    dpos.row(t) += dx.row(t);
  }
}

// ---------------------------------------------------------------------------
// Public functional API

LogitsMatrix forward(const Parameters& params, const TokenSequence& tokens) {
  ForwardPass pass(params, tokens, 0);
  return pass.logits();
}

NllResult loss_nll(const LogitsMatrix& logits, const TokenSequence& targets,
                   std::span<const double> mask) {
  if (static_cast<std::size_t>(logits.rows()) != targets.size() || mask.size() != targets.size())
    fail(ErrorCode::ShapeMismatch, "logits, targets and mask must have equal length");
  NllResult res;
  double total = 0;
  for (Eigen::Index t = 0; t < logits.rows(); ++t) {
    if (mask[t] == 0.0) continue;
    if (targets[t] < 0 || targets[t] >= logits.cols())
      fail(ErrorCode::TokenOutOfRange, "target id out of range");
    const double m = logits.row(t).maxCoeff();
    const double lse = m + std::log((logits.row(t).array() - m).exp().sum());
    total += mask[t] * (lse - logits(t, targets[t]));
    res.weight_sum += mask[t];
  }
  if (res.weight_sum == 0.0) {
    res.all_masked = true;
    return res;
  }
  res.loss = total / res.weight_sum;
  return res;
}

RowMatrix nll_logit_grad(const LogitsMatrix& logits, const TokenSequence& targets,
                         std::span<const double> mask, double scale) {
  if (static_cast<std::size_t>(logits.rows()) != targets.size() || mask.size() != targets.size())
    fail(ErrorCode::ShapeMismatch, "logits, targets and mask must have equal length");
  RowMatrix g = RowMatrix::Zero(logits.rows(), logits.cols());
  double wsum = 0;
  for (double m : mask) wsum += m;
  if (wsum == 0.0) return g;
  for (Eigen::Index t = 0; t < logits.rows(); ++t) {
    if (mask[t] == 0.0) continue;
    const double m = logits.row(t).maxCoeff();
    RowVector p = (logits.row(t).array() - m).exp();
    p /= p.sum();
    p(targets[t]) -= 1.0;
    g.row(t) = p * (scale * mask[t] / wsum);
  }
  return g;
}

Gradients backward(const Parameters& params, const TokenSequence& tokens,
                   const TokenSequence& targets, std::span<const double> mask,
                   const RowMatrix* constraint_grads, double scale) {
  ForwardPass pass(params, tokens, 0);
  RowMatrix dlogits = nll_logit_grad(pass.logits(), targets, mask, scale);
  if (constraint_grads) {
    if (constraint_grads->rows() != dlogits.rows() || constraint_grads->cols() != dlogits.cols())
      fail(ErrorCode::ShapeMismatch, "constraint gradient shape does not match logits");
    dlogits += *constraint_grads;
  }
  Gradients grads(params.config());
  pass.backward(dlogits, grads);
  return grads;
}

// ---------------------------------------------------------------------------
// DecodeContext

DecodeContext::DecodeContext(const Parameters& params)
    : params_(&params),
      keys_(params.config().n_layers),
      values_(params.config().n_layers) {
  for (auto& k : keys_) k.resize(params.config().max_seq_len, params.config().d_model);
  for (auto& v : values_) v.resize(params.config().max_seq_len, params.config().d_model);
}

const RowVector& DecodeContext::append(TokenId token) {
  const auto& params = *params_;
  const auto& cfg = params.config();
  const auto& lay = params.layout();
  if (length_ >= cfg.max_seq_len)
    fail(ErrorCode::SequenceTooLong, "decode context exceeds max_seq_len " + std::to_string(cfg.max_seq_len));
  if (token < 0 || token >= cfg.vocab_size)
    fail(ErrorCode::TokenOutOfRange, "token id out of range: " + std::to_string(token));

  const int d = cfg.d_model;
  const int nh = cfg.n_heads;
  const int dh = d / nh;
  const double scale = 1.0 / std::sqrt(static_cast<double>(dh));
  const int pos = length_;

  RowMatrix x = params.view(lay.token_embedding).row(token) + params.view(lay.position_embedding).row(pos);
  RowMatrix xhat, h, q, k, v, att(1, d);
  Vector rstd;
  for (int l = 0; l < cfg.n_layers; ++l) {
    const auto& w = lay.layers[l];
    layer_norm(x, params.view(w.ln1_gain), params.view(w.ln1_bias), xhat, rstd, h);
    q.noalias() = h * params.view(w.wq);
    q.rowwise() += params.view(w.bq).row(0);
    k.noalias() = h * params.view(w.wk);
    k.rowwise() += params.view(w.bk).row(0);
    v.noalias() = h * params.view(w.wv);
    v.rowwise() += params.view(w.bv).row(0);

    auto& kc = keys_[l];
    auto& vc = values_[l];
    kc.row(pos) = k.row(0);
    vc.row(pos) = v.row(0);

    for (int hd = 0; hd < nh; ++hd) {
      const RowVector s =
          q.middleCols(hd * dh, dh) * kc.topRows(pos + 1).middleCols(hd * dh, dh).transpose();
      double m = -std::numeric_limits<double>::infinity();
      for (int j = 0; j <= pos; ++j) m = std::max(m, s(j) * scale);
      RowVector a(pos + 1);
      double sum = 0;
      for (int j = 0; j <= pos; ++j) {
        a(j) = std::exp(s(j) * scale - m);
        sum += a(j);
      }
      a /= sum;
      att.middleCols(hd * dh, dh).noalias() = a * vc.topRows(pos + 1).middleCols(hd * dh, dh);
    }
    x.noalias() += att * params.view(w.wo);
    x.rowwise() += params.view(w.bo).row(0);

    layer_norm(x, params.view(w.ln2_gain), params.view(w.ln2_bias), xhat, rstd, h);
    RowMatrix u = h * params.view(w.w1);
    u.rowwise() += params.view(w.b1).row(0);
    x.noalias() += u.unaryExpr(&gelu) * params.view(w.w2);
    x.rowwise() += params.view(w.b2).row(0);
  }
  layer_norm(x, params.view(lay.final_gain), params.view(lay.final_bias), xhat, rstd, h);
  last_logits_.noalias() = h.row(0) * params.view(lay.head);
  ++length_;
  return last_logits_;
}

const RowVector& DecodeContext::append(std::span<const TokenId> tokens) {
  if (tokens.empty()) fail(ErrorCode::InvalidArgument, "append needs at least one token");
  for (TokenId t : tokens) append(t);
  return last_logits_;
}

}  // namespace roomseq
