#include "trainer.hpp"

#include <bit>
#include <cmath>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <sstream>

#include <json.hpp>

#include "error.hpp"

namespace roomseq {

namespace {

std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r\n");
  if (b == std::string::npos) return "";
  const auto e = s.find_last_not_of(" \t\r\n");
  return s.substr(b, e - b + 1);
}

double parse_double(const std::string& key, const std::string& v) {
  try {
    std::size_t used = 0;
    const double d = std::stod(v, &used);
    if (used != v.size()) throw std::invalid_argument(v);
    return d;
  } catch (const std::exception&) {
    fail(ErrorCode::InvalidArgument, "invalid number for " + key + ": '" + v + "'");
  }
}

long long parse_int(const std::string& key, const std::string& v) {
  try {
    std::size_t used = 0;
    const long long i = std::stoll(v, &used);
    if (used != v.size()) throw std::invalid_argument(v);
    return i;
  } catch (const std::exception&) {
    fail(ErrorCode::InvalidArgument, "invalid integer for " + key + ": '" + v + "'");
  }
}

std::uint64_t parse_u64(const std::string& key, const std::string& v) {
  try {
    std::size_t used = 0;
    if (!v.empty() && v[0] == '-') throw std::invalid_argument(v);
    const unsigned long long i = std::stoull(v, &used);
    if (used != v.size()) throw std::invalid_argument(v);
    return i;
  } catch (const std::exception&) {
    fail(ErrorCode::InvalidArgument, "invalid unsigned integer for " + key + ": '" + v + "'");
  }
}

// Little-endian binary I/O.
class Writer {
 public:
  explicit Writer(std::ostream& os) : os_(os) {}
  void u32(std::uint32_t v) {
    for (int i = 0; i < 4; ++i) os_.put(static_cast<char>((v >> (8 * i)) & 0xff));
  }
  void u64(std::uint64_t v) {
    for (int i = 0; i < 8; ++i) os_.put(static_cast<char>((v >> (8 * i)) & 0xff));
  }
  void i32(std::int32_t v) { u32(static_cast<std::uint32_t>(v)); }
  void f64(double v) { u64(std::bit_cast<std::uint64_t>(v)); }
  void f64s(std::span<const double> v) {
    u64(v.size());
    for (double d : v) f64(d);
  }
  void bytes(const std::string& s) {
    u64(s.size());
    os_.write(s.data(), static_cast<std::streamsize>(s.size()));
  }

 private:
  std::ostream& os_;
};

class Reader {
 public:
  Reader(std::istream& is, std::string path) : is_(is), path_(std::move(path)) {}
  std::uint32_t u32() {
    unsigned char b[4];
    read(b, 4);
    std::uint32_t v = 0;
    for (int i = 0; i < 4; ++i) v |= static_cast<std::uint32_t>(b[i]) << (8 * i);
    return v;
  }
  std::uint64_t u64() {
    unsigned char b[8];
    read(b, 8);
    std::uint64_t v = 0;
    for (int i = 0; i < 8; ++i) v |= static_cast<std::uint64_t>(b[i]) << (8 * i);
    return v;
  }
  std::int32_t i32() { return static_cast<std::int32_t>(u32()); }
  double f64() { return std::bit_cast<double>(u64()); }
  std::vector<double> f64s(std::size_t expected) {
    const auto n = u64();
    if (n != expected) fail(ErrorCode::Parse, path_ + ": array length mismatch");
    std::vector<double> out(n);
    for (auto& d : out) d = f64();
    return out;
  }
  std::string bytes() {
    const auto n = u64();
    if (n > (1u << 20)) fail(ErrorCode::Parse, path_ + ": implausible string length");
    std::string s(n, '\0');
    read(s.data(), n);
    return s;
  }
  void read(void* dst, std::size_t n) {
    is_.read(static_cast<char*>(dst), static_cast<std::streamsize>(n));
    if (static_cast<std::size_t>(is_.gcount()) != n)
      fail(ErrorCode::Parse, path_ + ": truncated checkpoint");
  }

 private:
  std::istream& is_;
  std::string path_;
};

std::string dump_nonfinite(const std::string& checkpoint_path, std::uint64_t step,
                           const std::string& detail) {
  const std::string path = checkpoint_path + ".nonfinite.json";
  nlohmann::ordered_json j;
  j["step"] = step;
  j["detail"] = detail;
  std::ofstream f(path);
  f << j.dump(2) << '\n';
  return path;
}

}  // namespace

// ---------------------------------------------------------------------------
// Configuration

void TrainConfig::validate() const {
  if (!(lr >= 0) || !std::isfinite(lr)) fail(ErrorCode::InvalidArgument, "lr must be >= 0");
  if (steps < 0) fail(ErrorCode::InvalidArgument, "steps must be >= 0");
  if (batch_size < 1) fail(ErrorCode::InvalidArgument, "batch_size must be >= 1");
  if (!(beta1 >= 0 && beta1 < 1) || !(beta2 >= 0 && beta2 < 1))
    fail(ErrorCode::InvalidArgument, "Adam betas must lie in [0, 1)");
  if (!(eps > 0)) fail(ErrorCode::InvalidArgument, "eps must be > 0");
  if (!(grad_clip > 0)) fail(ErrorCode::InvalidArgument, "grad_clip must be > 0");
  if (checkpoint_every < 0) fail(ErrorCode::InvalidArgument, "checkpoint_every must be >= 0");
  if (log_every < 1) fail(ErrorCode::InvalidArgument, "log_every must be >= 1");
  if (val_samples < 0) fail(ErrorCode::InvalidArgument, "val_samples must be >= 0");
  if (max_seq_len < 3 + kRecordLength * kMaxRooms)
    fail(ErrorCode::InvalidArgument,
         "max_seq_len must be >= " + std::to_string(3 + kRecordLength * kMaxRooms));
  weights.validate();
}

ModelConfig TrainConfig::model_config(int vocab_size) const {
  ModelConfig m;
  m.d_model = d_model;
  m.n_heads = n_heads;
  m.n_layers = n_layers;
  m.d_ff = d_ff;
  m.vocab_size = vocab_size;
  m.max_seq_len = max_seq_len;
  m.seed = seed;
  m.validate();
  return m;
}

const std::vector<std::string>& train_config_keys() {
  static const std::vector<std::string> keys = {
      "lr",     "steps",  "batch_size",       "beta1",     "beta2",       "eps",
      "grad_clip", "lambda", "w_adj",         "w_edit",    "w_out",       "tau_adj",
      "seed",   "checkpoint_every", "log_every", "val_samples", "dataset",
      "d_model", "n_heads", "n_layers",       "d_ff",      "max_seq_len"};
  return keys;
}

void set_train_key(TrainConfig& c, const std::string& key, const std::string& raw) {
  const std::string v = trim(raw);
  auto as_int = [&] { return static_cast<int>(parse_int(key, v)); };
  if (key == "lr") c.lr = parse_double(key, v);
  else if (key == "steps") c.steps = as_int();
  else if (key == "batch_size") c.batch_size = as_int();
  else if (key == "beta1") c.beta1 = parse_double(key, v);
  else if (key == "beta2") c.beta2 = parse_double(key, v);
  else if (key == "eps") c.eps = parse_double(key, v);
  else if (key == "grad_clip") c.grad_clip = parse_double(key, v);
  else if (key == "lambda") c.weights.lambda = parse_double(key, v);
  else if (key == "w_adj") c.weights.w_adj = parse_double(key, v);
  else if (key == "w_edit") c.weights.w_edit = parse_double(key, v);
  else if (key == "w_out") c.weights.w_out = parse_double(key, v);
  else if (key == "tau_adj") c.weights.tau_adj = parse_double(key, v);
  else if (key == "seed") c.seed = parse_u64(key, v);
  else if (key == "checkpoint_every") c.checkpoint_every = as_int();
  else if (key == "log_every") c.log_every = as_int();
  else if (key == "val_samples") c.val_samples = as_int();
  else if (key == "dataset") c.dataset = v;
  else if (key == "d_model") c.d_model = as_int();
  else if (key == "n_heads") c.n_heads = as_int();
  else if (key == "n_layers") c.n_layers = as_int();
  else if (key == "d_ff") c.d_ff = as_int();
  else if (key == "max_seq_len") c.max_seq_len = as_int();
  else fail(ErrorCode::InvalidArgument, "unknown training config key: " + key);
}

TrainConfig parse_train_config(const std::string& text, TrainConfig base) {
  const std::string body = trim(text);
  if (!body.empty() && body.front() == '{') {
    nlohmann::json j;
    try {
      j = nlohmann::json::parse(body);
    } catch (const nlohmann::json::exception& e) {
      fail(ErrorCode::Parse, std::string("training config: ") + e.what());
    }
    for (const auto& [key, value] : j.items()) {
      if (value.is_string()) set_train_key(base, key, value.get<std::string>());
      else if (value.is_number() || value.is_boolean()) set_train_key(base, key, value.dump());
      else fail(ErrorCode::Parse, "training config value for " + key + " must be a scalar");
    }
  } else {
    std::istringstream in(text);
    std::string line;
    int lineno = 0;
    while (std::getline(in, line)) {
      ++lineno;
      if (auto hash = line.find('#'); hash != std::string::npos) line.resize(hash);
      line = trim(line);
      if (line.empty()) continue;
      const auto eq = line.find('=');
      if (eq == std::string::npos)
        fail(ErrorCode::Parse, "training config line " + std::to_string(lineno) + ": expected key = value");
      set_train_key(base, trim(line.substr(0, eq)), line.substr(eq + 1));
    }
  }
  base.validate();
  return base;
}

TrainConfig load_train_config(const std::string& path, TrainConfig base) {
  std::ifstream f(path);
  if (!f) fail(ErrorCode::Io, "cannot open training config: " + path);
  std::stringstream ss;
  ss << f.rdbuf();
  return parse_train_config(ss.str(), std::move(base));
}

// ---------------------------------------------------------------------------
// Examples

PreparedExample prepare_example(const Example& ex, int max_seq_len, const Vocabulary& vocab) {
  const auto prompt = encode_prompt(ex.prompt, vocab);
  const TokenSequence seq = encode_example(prompt, ex.plan);
  if (static_cast<int>(seq.size()) - 1 > max_seq_len)
    fail(ErrorCode::SequenceTooLong, "example needs " + std::to_string(seq.size() - 1) +
                                         " positions, max_seq_len is " + std::to_string(max_seq_len));
  PreparedExample p;
  p.head_begin = static_cast<int>(prompt.size()) + 1;  // index of SEP
  p.inputs.assign(seq.begin(), seq.end() - 1);
  p.targets.assign(seq.begin() + p.head_begin + 1, seq.end());
  for (std::size_t r = 0; r < ex.plan.rooms.size(); ++r) {
    // TYPE of record r sits at sequence index sep + 1 + 7r; row t predicts token t + 1.
    const int type_pos = p.head_begin + 1 + kRecordLength * static_cast<int>(r);
    const int base = type_pos + 1 - p.head_begin;
    p.rows.push_back({base, base + 1, base + 2, base + 3});
    p.types.push_back(ex.plan.rooms[r].type);
  }
  p.pairs = adjacency_pairs(ex.plan);
  p.outline = ex.plan.outline;
  return p;
}

// ---------------------------------------------------------------------------
// Optimization

TrainState init_train_state(const TrainConfig& config, int vocab_size) {
  TrainState s;
  s.params = init_params(config.model_config(vocab_size));
  s.adam.m.assign(s.params.size(), 0.0);
  s.adam.v.assign(s.params.size(), 0.0);
  s.rng.seed(mix_seed(config.seed, 0xba7c4));
  return s;
}

double global_norm(std::span<const double> g) {
  double s = 0;
  for (double x : g) s += x * x;
  return std::sqrt(s);
}

void clip_gradients(std::span<double> g, double max_norm) {
  const double n = global_norm(g);
  if (n <= max_norm || n == 0.0) return;
  const double scale = max_norm / n;
  for (double& x : g) x *= scale;
}

void adam_update(std::span<double> params, std::span<const double> grads, AdamState& st,
                 const TrainConfig& c) {
  if (params.size() != grads.size() || st.m.size() != params.size() || st.v.size() != params.size())
    fail(ErrorCode::ShapeMismatch, "optimizer state does not match parameters");
  ++st.t;
  const double t = static_cast<double>(st.t);
  const double bc1 = 1.0 - std::pow(c.beta1, t);
  const double bc2 = 1.0 - std::pow(c.beta2, t);
  for (std::size_t i = 0; i < params.size(); ++i) {
    const double g = grads[i];
    st.m[i] = c.beta1 * st.m[i] + (1.0 - c.beta1) * g;
    st.v[i] = c.beta2 * st.v[i] + (1.0 - c.beta2) * g * g;
    const double mhat = st.m[i] / bc1;
    const double vhat = st.v[i] / bc2;
    params[i] -= c.lr * mhat / (std::sqrt(vhat) + c.eps);
  }
}

LossBreakdown train_step(TrainState& state, const std::vector<const PreparedExample*>& batch,
                         const TrainConfig& config, StepOptions options) {
  if (batch.empty()) fail(ErrorCode::InvalidArgument, "empty batch");
  double tokens = 0;
  for (const auto* ex : batch) tokens += static_cast<double>(ex->targets.size());

  Gradients grads(state.params.config());
  double nll_sum = 0, adj = 0, edit = 0, out = 0;
  const double inv_batch = 1.0 / static_cast<double>(batch.size());
  for (const auto* ex : batch) {
    ForwardPass pass(state.params, ex->inputs, ex->head_begin);
    const std::vector<double> mask(ex->targets.size(), 1.0);
    const auto nll = loss_nll(pass.logits(), ex->targets, mask);
    nll_sum += nll.loss * nll.weight_sum;
    RowMatrix dlogits = nll_logit_grad(pass.logits(), ex->targets, mask, nll.weight_sum / tokens);
    if (!options.nll_only) {
      const auto ev = evaluate_constraints(pass.logits(), ex->rows, ex->types, ex->pairs,
                                           ex->outline, config.weights);
      adj += ev.adj * inv_batch;
      edit += ev.edit * inv_batch;
      out += ev.out * inv_batch;
      dlogits += (config.weights.lambda * inv_batch) * ev.dlogits;
    }
    pass.backward(dlogits, grads);
  }
  const LossBreakdown loss = total_loss(nll_sum / tokens, adj, edit, out, config.weights);
  if (!std::isfinite(loss.total) || !grads.all_finite()) {
    std::ostringstream msg;
    msg << "non-finite loss at step " << state.step + 1 << " (nll=" << loss.nll << ", adj=" << loss.adj
        << ", edit=" << loss.edit << ", out=" << loss.out << ")";
    fail(ErrorCode::NonFiniteLoss, msg.str());
  }
  clip_gradients(grads.values(), config.grad_clip);
  adam_update(state.params.values(), grads.values(), state.adam, config);
  ++state.step;
  return loss;
}

double evaluate_nll(const Parameters& params, const std::vector<PreparedExample>& examples) {
  double sum = 0, count = 0;
  for (const auto& ex : examples) {
    ForwardPass pass(params, ex.inputs, ex.head_begin);
    const std::vector<double> mask(ex.targets.size(), 1.0);
    const auto nll = loss_nll(pass.logits(), ex.targets, mask);
    sum += nll.loss * nll.weight_sum;
    count += nll.weight_sum;
  }
  if (count == 0) fail(ErrorCode::InvalidArgument, "no tokens to evaluate");
  return sum / count;
}

// ---------------------------------------------------------------------------
// Checkpoints

void save_checkpoint(const std::string& path, const TrainState& s, std::uint64_t vocab_hash) {
  const std::string tmp = path + ".tmp";
  {
    std::ofstream f(tmp, std::ios::binary | std::ios::trunc);
    if (!f) fail(ErrorCode::Io, "cannot write checkpoint: " + tmp);
    f.write(kCheckpointMagic, sizeof kCheckpointMagic);
    Writer w(f);
    w.u32(kCheckpointVersion);
    const auto& c = s.params.config();
    w.i32(c.d_model);
    w.i32(c.n_heads);
    w.i32(c.n_layers);
    w.i32(c.d_ff);
    w.i32(c.vocab_size);
    w.i32(c.max_seq_len);
    w.u64(c.seed);
    w.u64(vocab_hash);
    w.u64(s.step);
    w.u64(s.adam.t);
    w.f64s(s.params.values());
    w.f64s(s.adam.m);
    w.f64s(s.adam.v);
    std::ostringstream rng;
    rng << s.rng;
    w.bytes(rng.str());
    if (!f) fail(ErrorCode::Io, "checkpoint write failed: " + tmp);
  }
  std::error_code ec;
  std::filesystem::rename(tmp, path, ec);
  if (ec) fail(ErrorCode::Io, "cannot move checkpoint into place: " + path + ": " + ec.message());
}

Checkpoint load_checkpoint(const std::string& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) fail(ErrorCode::Io, "cannot open checkpoint: " + path);
  Reader r(f, path);
  char magic[8];
  r.read(magic, sizeof magic);
  if (std::memcmp(magic, kCheckpointMagic, sizeof magic) != 0)
    fail(ErrorCode::Parse, path + ": not a checkpoint file");
  const auto version = r.u32();
  if (version != kCheckpointVersion)
    fail(ErrorCode::Parse, path + ": unsupported checkpoint version " + std::to_string(version));
  ModelConfig c;
  c.d_model = r.i32();
  c.n_heads = r.i32();
  c.n_layers = r.i32();
  c.d_ff = r.i32();
  c.vocab_size = r.i32();
  c.max_seq_len = r.i32();
  c.seed = r.u64();
  try {
    c.validate();
  } catch (const Error& e) {
    fail(ErrorCode::Parse, path + ": " + e.what());
  }
  Checkpoint ck;
  ck.vocab_hash = r.u64();
  auto& s = ck.state;
  s.step = r.u64();
  s.adam.t = r.u64();
  s.params = Parameters(c);
  const auto values = r.f64s(s.params.size());
  std::copy(values.begin(), values.end(), s.params.values().begin());
  s.adam.m = r.f64s(s.params.size());
  s.adam.v = r.f64s(s.params.size());
  std::istringstream rng(r.bytes());
  rng >> s.rng;
  if (!rng) fail(ErrorCode::Parse, path + ": bad RNG state");
  return ck;
}

void check_vocabulary(const Checkpoint& ckpt, const Vocabulary& vocab) {
  if (ckpt.vocab_hash != vocab.hash() || ckpt.state.params.config().vocab_size != vocab.size())
    fail(ErrorCode::VocabularyMismatch,
         "checkpoint vocabulary does not match (checkpoint hash " + std::to_string(ckpt.vocab_hash) +
             ", current " + std::to_string(vocab.hash()) + ")");
}

// ---------------------------------------------------------------------------
// Training loop

std::string format_loss_row(const LossRow& row) {
  char buf[256];
  std::snprintf(buf, sizeof buf, "%llu,%.9g,%.9g,%.9g,%.9g,%.9g,%.9g",
                static_cast<unsigned long long>(row.step), row.loss.nll, row.loss.adj, row.loss.edit,
                row.loss.out, row.loss.total, row.val_nll);
  return buf;
}

void split_dataset(const std::vector<Example>& data, std::vector<Example>& train,
                   std::vector<Example>& val) {
  train.clear();
  val.clear();
  for (std::size_t i = 0; i < data.size(); ++i) (is_val_index(i) ? val : train).push_back(data[i]);
}

TrainResult train(const TrainConfig& config, const std::vector<Example>& data,
                  const TrainOutputs& outputs, const std::optional<std::string>& resume_from,
                  const Vocabulary& vocab) {
  config.validate();
  std::vector<Example> train_set, val_set;
  split_dataset(data, train_set, val_set);
  if (train_set.empty()) fail(ErrorCode::InvalidArgument, "training split is empty");

  TrainResult result;
  std::vector<std::string> kept_rows;
  if (resume_from) {
    auto ck = load_checkpoint(*resume_from);
    check_vocabulary(ck, vocab);
    result.state = std::move(ck.state);
    if (!outputs.loss_csv.empty()) {
      std::ifstream f(outputs.loss_csv);
      std::string line;
      std::getline(f, line);  // header
      while (std::getline(f, line)) {
        if (line.empty()) continue;
        const auto step = std::stoull(line.substr(0, line.find(',')));
        if (step <= result.state.step) kept_rows.push_back(line);
      }
    }
  } else {
    result.state = init_train_state(config, vocab.size());
  }
  auto& state = result.state;
  const int max_len = state.params.config().max_seq_len;

  std::vector<PreparedExample> train_prep, val_prep;
  for (const auto& ex : train_set) train_prep.push_back(prepare_example(ex, max_len, vocab));
  const std::size_t n_val = std::min<std::size_t>(val_set.size(), config.val_samples);
  for (std::size_t i = 0; i < n_val; ++i) val_prep.push_back(prepare_example(val_set[i], max_len, vocab));

  std::ofstream csv;
  if (!outputs.loss_csv.empty()) {
    csv.open(outputs.loss_csv, std::ios::trunc);
    if (!csv) fail(ErrorCode::Io, "cannot write loss curve: " + outputs.loss_csv);
    csv << kLossCsvHeader << '\n';
    for (const auto& l : kept_rows) csv << l << '\n';
    csv.flush();
  }

  std::uniform_int_distribution<std::size_t> pick(0, train_prep.size() - 1);
  std::vector<const PreparedExample*> batch(config.batch_size);
  while (state.step < static_cast<std::uint64_t>(config.steps)) {
    for (auto& b : batch) b = &train_prep[pick(state.rng)];
    LossBreakdown loss;
    try {
      loss = train_step(state, batch, config);
    } catch (const Error& e) {
      if (e.code() != ErrorCode::NonFiniteLoss || outputs.checkpoint.empty()) throw;
      const auto dump = dump_nonfinite(outputs.checkpoint, state.step + 1, e.what());
      fail(ErrorCode::NonFiniteLoss, std::string(e.what()) + "; diagnostics written to " + dump);
    }
    const bool last = state.step == static_cast<std::uint64_t>(config.steps);
    if (state.step % config.log_every == 0 || last) {
      LossRow row{state.step, loss, val_prep.empty() ? 0.0 : evaluate_nll(state.params, val_prep)};
      result.curve.push_back(row);
      if (csv.is_open()) csv << format_loss_row(row) << '\n' << std::flush;
    }
    if (!outputs.checkpoint.empty() && config.checkpoint_every > 0 &&
        state.step % config.checkpoint_every == 0 && !last)
      save_checkpoint(outputs.checkpoint, state, vocab.hash());
  }
  if (!outputs.checkpoint.empty()) {
    save_checkpoint(outputs.checkpoint, state, vocab.hash());
    const auto dir = std::filesystem::path(outputs.checkpoint).parent_path();
    vocab.save(((dir.empty() ? std::filesystem::path(".") : dir) / "vocab.txt").string());
  }
  return result;
}

}  // namespace roomseq
