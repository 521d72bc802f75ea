#include <doctest.h>

#include <cmath>
#include <random>
#include <vector>

#include "error.hpp"
#include "model.hpp"
#include "support.hpp"

using namespace roomseq;

namespace {

using Mat = std::vector<std::vector<double>>;

Mat tensor(const Parameters& p, const TensorRef& t) {
  const auto v = p.view(t);
  Mat m(t.rows, std::vector<double>(t.cols));
  for (int r = 0; r < t.rows; ++r)
    for (int c = 0; c < t.cols; ++c) m[r][c] = v(r, c);
  return m;
}

std::vector<double> layer_norm_ref(const std::vector<double>& x, const Mat& g, const Mat& b) {
  double mean = 0;
  for (double v : x) mean += v;
  mean /= x.size();
  double var = 0;
  for (double v : x) var += (v - mean) * (v - mean);
  var /= x.size();
  std::vector<double> y(x.size());
  for (std::size_t i = 0; i < x.size(); ++i)
    y[i] = (x[i] - mean) / std::sqrt(var + 1e-5) * g[0][i] + b[0][i];
  return y;
}

std::vector<double> affine(const std::vector<double>& x, const Mat& w, const Mat& b) {
  std::vector<double> y(w[0].size(), 0.0);
  for (std::size_t j = 0; j < y.size(); ++j) {
    double s = b.empty() ? 0.0 : b[0][j];
    for (std::size_t i = 0; i < x.size(); ++i) s += x[i] * w[i][j];
    y[j] = s;
  }
  return y;
}

// Straight-line transcription of the network with loops only.
Mat reference_forward(const Parameters& p, const TokenSequence& tokens) {
  const auto& c = p.config();
  const auto& lay = p.layout();
  const int T = static_cast<int>(tokens.size()), d = c.d_model, nh = c.n_heads, dh = d / nh;
  const Mat emb = tensor(p, lay.token_embedding), pos = tensor(p, lay.position_embedding);
  Mat x(T, std::vector<double>(d));
  for (int t = 0; t < T; ++t)
    for (int i = 0; i < d; ++i) x[t][i] = emb[tokens[t]][i] + pos[t][i];

  for (const auto& w : lay.layers) {
    Mat q(T), k(T), v(T);
    for (int t = 0; t < T; ++t) {
      const auto h = layer_norm_ref(x[t], tensor(p, w.ln1_gain), tensor(p, w.ln1_bias));
      q[t] = affine(h, tensor(p, w.wq), tensor(p, w.bq));
      k[t] = affine(h, tensor(p, w.wk), tensor(p, w.bk));
      v[t] = affine(h, tensor(p, w.wv), tensor(p, w.bv));
    }
    Mat att(T, std::vector<double>(d, 0.0));
    for (int hd = 0; hd < nh; ++hd) {
      for (int t = 0; t < T; ++t) {
        std::vector<double> s(t + 1);
        double m = -1e300;
        for (int u = 0; u <= t; ++u) {
          double dot = 0;
          for (int i = 0; i < dh; ++i) dot += q[t][hd * dh + i] * k[u][hd * dh + i];
          s[u] = dot / std::sqrt(double(dh));
          m = std::max(m, s[u]);
        }
        double z = 0;
        for (double& e : s) z += (e = std::exp(e - m));
        for (int u = 0; u <= t; ++u)
          for (int i = 0; i < dh; ++i) att[t][hd * dh + i] += s[u] / z * v[u][hd * dh + i];
      }
    }
    for (int t = 0; t < T; ++t) {
      const auto o = affine(att[t], tensor(p, w.wo), tensor(p, w.bo));
      for (int i = 0; i < d; ++i) x[t][i] += o[i];
      const auto h = layer_norm_ref(x[t], tensor(p, w.ln2_gain), tensor(p, w.ln2_bias));
      auto u = affine(h, tensor(p, w.w1), tensor(p, w.b1));
      for (double& e : u) e = 0.5 * e * (1 + std::tanh(std::sqrt(2 / M_PI) * (e + 0.044715 * e * e * e)));
      const auto f = affine(u, tensor(p, w.w2), tensor(p, w.b2));
      for (int i = 0; i < d; ++i) x[t][i] += f[i];
    }
  }
  Mat logits(T);
  for (int t = 0; t < T; ++t) {
    const auto h = layer_norm_ref(x[t], tensor(p, lay.final_gain), tensor(p, lay.final_bias));
    logits[t] = affine(h, tensor(p, lay.head), {});
  }
  return logits;
}

double nll_of(const Parameters& p, const TokenSequence& in, const TokenSequence& tgt,
              const std::vector<double>& mask) {
  return loss_nll(forward(p, in), tgt, mask).loss;
}

}  // namespace

TEST_CASE("configuration validation") {
  ModelConfig c = testing::tiny_config();
  CHECK_NOTHROW(c.validate());
  c.n_heads = 3;
  CHECK_THROWS_AS(c.validate(), Error);
  c = testing::tiny_config();
  c.vocab_size = 0;
  CHECK_THROWS_AS(c.validate(), Error);
}

TEST_CASE("initialization") {
  ModelConfig c = testing::small_config(Vocabulary::standard().size());
  c.d_model = 32;
  const Parameters a = init_params(c), b = init_params(c);
  CHECK(a == b);
  ModelConfig other = c;
  other.seed = c.seed + 1;
  CHECK_FALSE(init_params(other) == a);

  for (const auto& [t, role] : a.layout().tensors()) {
    const auto v = a.view(t);
    if (role == ParamLayout::Role::Gain) CHECK((v.array() == 1.0).all());
    if (role == ParamLayout::Role::Bias) CHECK((v.array() == 0.0).all());
  }
  const auto emb = a.view(a.layout().token_embedding);
  REQUIRE(emb.size() >= 10000);
  CHECK(std::abs(emb.mean()) < 0.005);
  const double sd = std::sqrt((emb.array() - emb.mean()).square().mean());
  CHECK(sd == doctest::Approx(0.02).epsilon(0.05));
  CHECK(a.layout().total == a.size());

  // Storage sits on the vector packet boundary wherever it is allocated.
  for (int i = 0; i < 8; ++i) {
    std::vector<char> shift(8 * i + 1);
    const Parameters copy = a;
    CHECK(reinterpret_cast<std::uintptr_t>(copy.values().data()) % EIGEN_MAX_ALIGN_BYTES == 0);
  }
}

TEST_CASE("forward matches the scalar reference") {
  ModelConfig c = testing::tiny_config(20, 16);
  c.n_layers = 2;
  c.seed = 0;
  const Parameters p = testing::noisy_params(c, 0.3, 17);
  const TokenSequence toks = {0, 7, 3, 19, 12};
  const LogitsMatrix got = forward(p, toks);
  const Mat want = reference_forward(p, toks);
  REQUIRE(got.rows() == 5);
  REQUIRE(got.cols() == 20);
  double worst = 0;
  for (int t = 0; t < 5; ++t)
    for (int v = 0; v < 20; ++v) worst = std::max(worst, std::abs(got(t, v) - want[t][v]));
  CHECK(worst < 1e-12);
  CHECK(forward(p, {4}).rows() == 1);
  // Deterministic.
  CHECK(forward(p, toks) == got);
}

TEST_CASE("forward is causal") {
  const ModelConfig c = testing::tiny_config(20, 16);
  const Parameters p = testing::noisy_params(c, 0.2, 5);
  std::mt19937_64 rng(3);
  for (int trial = 0; trial < 20; ++trial) {
    TokenSequence a(12);
    for (auto& t : a) t = static_cast<int>(rng() % 20);
    const int cut = static_cast<int>(rng() % 11);
    TokenSequence b = a;
    for (int i = cut + 1; i < 12; ++i) b[i] = static_cast<int>(rng() % 20);
    const auto la = forward(p, a), lb = forward(p, b);
    CHECK(la.topRows(cut + 1) == lb.topRows(cut + 1));
  }
}

TEST_CASE("forward rejects bad input") {
  const ModelConfig c = testing::tiny_config(20, 8);
  const Parameters p = init_params(c);
  try {
    forward(p, TokenSequence(9, 1));
    FAIL("expected SequenceTooLong");
  } catch (const Error& e) {
    CHECK(e.code() == ErrorCode::SequenceTooLong);
  }
  try {
    forward(p, {1, 20});
    FAIL("expected TokenOutOfRange");
  } catch (const Error& e) {
    CHECK(e.code() == ErrorCode::TokenOutOfRange);
  }
}

TEST_CASE("softmax rows are distributions") {
  const ModelConfig c = testing::tiny_config(20, 16);
  const Parameters p = testing::noisy_params(c, 1.0, 8);
  const RowMatrix probs = softmax_rows(forward(p, {1, 2, 3, 4, 5, 6}));
  for (Eigen::Index r = 0; r < probs.rows(); ++r) {
    CHECK(std::abs(probs.row(r).sum() - 1.0) < 1e-9);
    CHECK((probs.row(r).array() >= 0).all());
  }
}

TEST_CASE("negative log-likelihood closed forms") {
  const int V = 300;
  LogitsMatrix zero = LogitsMatrix::Zero(3, V);
  const std::vector<double> ones(3, 1.0);
  CHECK(loss_nll(zero, {1, 2, 3}, ones).loss == doctest::Approx(std::log(300.0)).epsilon(1e-12));
  CHECK(std::log(300.0) == doctest::Approx(5.7038).epsilon(1e-5));

  LogitsMatrix peaked = LogitsMatrix::Zero(1, V);
  peaked(0, 7) = 20.0;
  const double expect = std::log(1.0 + 299.0 * std::exp(-20.0));
  CHECK(loss_nll(peaked, {7}, std::vector<double>{1.0}).loss == doctest::Approx(expect).epsilon(1e-9));
  CHECK(expect < 7e-7);

  const NllResult none = loss_nll(zero, {1, 2, 3}, std::vector<double>(3, 0.0));
  CHECK(none.all_masked);
  CHECK(none.loss == 0.0);
  CHECK_THROWS_AS(loss_nll(zero, {1, 2}, ones), Error);
}

TEST_CASE("analytic gradients match central differences") {
  ModelConfig c = testing::tiny_config(20, 12);
  Parameters p = testing::noisy_params(c, 0.3, 99);
  std::mt19937_64 rng(7);
  TokenSequence in(12), tgt(12);
  for (auto& t : in) t = static_cast<int>(rng() % 20);
  for (auto& t : tgt) t = static_cast<int>(rng() % 20);
  std::vector<double> mask(12, 1.0);
  mask[0] = mask[1] = 0.0;
  mask[5] = 0.5;

  const Gradients g = backward(p, in, tgt, mask);
  const double h = 1e-5;
  int checked = 0;
  for (int trial = 0; trial < 30; ++trial) {
    const std::size_t i = rng() % p.size();
    const double orig = p.values()[i];
    p.values()[i] = orig + h;
    const double up = nll_of(p, in, tgt, mask);
    p.values()[i] = orig - h;
    const double down = nll_of(p, in, tgt, mask);
    p.values()[i] = orig;
    const double fd = (up - down) / (2 * h);
    const double an = g.values()[i];
    const double rel = std::abs(fd - an) / std::max({std::abs(fd), std::abs(an), 1e-8});
    CHECK_MESSAGE(rel < 1e-4, "param " << i << " analytic " << an << " numeric " << fd);
    ++checked;
  }
  CHECK(checked == 30);
}

TEST_CASE("injected logit gradient flows like an extra loss term") {
  ModelConfig c = testing::tiny_config(20, 12);
  Parameters p = testing::noisy_params(c, 0.3, 4);
  const TokenSequence in = {0, 3, 9, 4, 11, 2}, tgt = {3, 9, 4, 11, 2, 1};
  const std::vector<double> mask(6, 1.0);
  // Extra loss: sum of logits(2, 5) * 0.7.
  RowMatrix extra = RowMatrix::Zero(6, 20);
  extra(2, 5) = 0.7;
  const Gradients g = backward(p, in, tgt, mask, &extra);
  std::mt19937_64 rng(12);
  for (int trial = 0; trial < 10; ++trial) {
    const std::size_t i = rng() % p.size();
    const double orig = p.values()[i];
    auto f = [&] {
      const auto l = forward(p, in);
      return loss_nll(l, tgt, mask).loss + 0.7 * l(2, 5);
    };
    p.values()[i] = orig + 1e-5;
    const double up = f();
    p.values()[i] = orig - 1e-5;
    const double down = f();
    p.values()[i] = orig;
    const double fd = (up - down) / 2e-5;
    CHECK(std::abs(fd - g.values()[i]) <= 1e-4 * std::max({std::abs(fd), 1e-6}));
  }
}

TEST_CASE("gradient linearity and zero mask") {
  const ModelConfig c = testing::tiny_config(20, 12);
  const Parameters p = testing::noisy_params(c, 0.3, 1);
  const TokenSequence in = {0, 5, 6, 7}, tgt = {5, 6, 7, 1};
  const std::vector<double> mask(4, 1.0);
  const Gradients g1 = backward(p, in, tgt, mask, nullptr, 1.0);
  const Gradients g2 = backward(p, in, tgt, mask, nullptr, 2.0);
  for (std::size_t i = 0; i < p.size(); ++i) CHECK(g2.values()[i] == 2.0 * g1.values()[i]);
  const Gradients g0 = backward(p, in, tgt, std::vector<double>(4, 0.0));
  for (double v : g0.values()) CHECK(v == 0.0);
}

TEST_CASE("incremental decoding matches the full forward pass") {
  const ModelConfig c = testing::tiny_config(20, 16);
  const Parameters p = testing::noisy_params(c, 0.3, 21);
  const TokenSequence toks = {0, 4, 8, 15, 16, 2, 9, 9, 1};
  const LogitsMatrix full = forward(p, toks);
  DecodeContext ctx(p);
  for (std::size_t t = 0; t < toks.size(); ++t) {
    const RowVector& row = ctx.append(toks[t]);
    CHECK((row - full.row(t)).cwiseAbs().maxCoeff() < 1e-12);
  }
  CHECK(ctx.length() == static_cast<int>(toks.size()));

  DecodeContext a(p);
  a.append(std::span<const TokenId>(toks.data(), 4));
  DecodeContext b = a;  // forks share nothing
  a.append(3);
  b.append(5);
  CHECK((b.last_logits() - forward(p, {0, 4, 8, 15, 5}).row(4)).cwiseAbs().maxCoeff() < 1e-12);
  CHECK((a.last_logits() - forward(p, {0, 4, 8, 15, 3}).row(4)).cwiseAbs().maxCoeff() < 1e-12);

  DecodeContext full_ctx(p);
  for (int i = 0; i < c.max_seq_len; ++i) full_ctx.append(1);
  try {
    full_ctx.append(1);
    FAIL("expected SequenceTooLong");
  } catch (const Error& e) {
    CHECK(e.code() == ErrorCode::SequenceTooLong);
  }
}

TEST_CASE("head_begin restricts the logits rows") {
  const ModelConfig c = testing::tiny_config(20, 16);
  const Parameters p = testing::noisy_params(c, 0.3, 2);
  const TokenSequence toks = {0, 4, 8, 15, 16, 2, 9};
  const LogitsMatrix full = forward(p, toks);
  ForwardPass pass(p, toks, 3);
  CHECK(pass.logits().rows() == 4);
  CHECK((pass.logits() - full.bottomRows(4)).cwiseAbs().maxCoeff() < 1e-12);
}
