#pragma once

// Teacher-forced training of the room sequence model on NLL plus weighted
// layout penalties, with Adam, global-norm clipping, binary checkpoints and a
// CSV loss curve.

#include <cstdint>
#include <map>
#include <optional>
#include <random>
#include <string>
#include <vector>

#include "codec.hpp"
#include "constraints.hpp"
#include "model.hpp"
#include "synth.hpp"

namespace roomseq {

struct TrainConfig {
  double lr = 3e-4;
  int steps = 3000;
  int batch_size = 16;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  double grad_clip = 1.0;
  ConstraintWeights weights;
  std::uint64_t seed = 0;
  int checkpoint_every = 0;  // 0: only the final checkpoint
  int log_every = 50;
  int val_samples = 256;     // cap on validation examples scored per log row
  std::string dataset;

  // Architecture of a fresh run; vocab_size comes from the vocabulary.
  int d_model = 64;
  int n_heads = 4;
  int n_layers = 2;
  int d_ff = 256;
  int max_seq_len = 160;

  void validate() const;
  ModelConfig model_config(int vocab_size) const;
};

// Every accepted configuration key, in declaration order.
const std::vector<std::string>& train_config_keys();

// Sets one field from its textual value; throws InvalidArgument for an unknown
// key or a malformed value.
void set_train_key(TrainConfig& config, const std::string& key, const std::string& value);

// Flat "key = value" lines ('#' starts a comment) or a JSON object.
TrainConfig parse_train_config(const std::string& text, TrainConfig base = {});
TrainConfig load_train_config(const std::string& path, TrainConfig base = {});

// One teacher-forced example: inputs are the sequence without its last token;
// logits are needed from row `head_begin` (the SEP position) onwards.
struct PreparedExample {
  TokenSequence inputs;
  TokenSequence targets;  // rows [head_begin, L - 1)
  int head_begin = 0;
  std::vector<SlotRows> rows;  // relative to head_begin
  std::vector<RoomType> types;
  std::vector<std::pair<int, int>> pairs;
  Outline outline;
};

PreparedExample prepare_example(const Example& ex, int max_seq_len,
                                const Vocabulary& vocab = Vocabulary::standard());

struct AdamState {
  std::vector<double> m;
  std::vector<double> v;
  std::uint64_t t = 0;
};

struct TrainState {
  Parameters params;
  AdamState adam;
  std::uint64_t step = 0;
  std::mt19937_64 rng;
};

TrainState init_train_state(const TrainConfig& config, int vocab_size);

struct StepOptions {
  // Skips the penalty computation altogether (the plain NLL objective).
  bool nll_only = false;
};

// One optimizer update on `batch`. The NLL is the token-weighted mean over the
// batch; penalties are averaged over examples. Throws NonFiniteLoss.
LossBreakdown train_step(TrainState& state, const std::vector<const PreparedExample*>& batch,
                         const TrainConfig& config, StepOptions options = {});

// Global L2 norm of the gradient and clipping to `max_norm`.
double global_norm(std::span<const double> g);
void clip_gradients(std::span<double> g, double max_norm);

void adam_update(std::span<double> params, std::span<const double> grads, AdamState& state,
                 const TrainConfig& config);

// Token-weighted mean NLL over the plan tokens of `examples`; parameters are
// not modified.
double evaluate_nll(const Parameters& params, const std::vector<PreparedExample>& examples);

// ---------------------------------------------------------------------------
// Checkpoints

inline constexpr char kCheckpointMagic[8] = {'R', 'S', 'E', 'Q', 'C', 'K', 'P', 'T'};
inline constexpr std::uint32_t kCheckpointVersion = 1;

struct Checkpoint {
  TrainState state;
  std::uint64_t vocab_hash = 0;
};

void save_checkpoint(const std::string& path, const TrainState& state, std::uint64_t vocab_hash);
Checkpoint load_checkpoint(const std::string& path);

// Throws VocabularyMismatch when the checkpoint was trained on another vocabulary.
void check_vocabulary(const Checkpoint& ckpt, const Vocabulary& vocab);

// ---------------------------------------------------------------------------
// Training loop

struct TrainOutputs {
  std::string checkpoint;
  std::string loss_csv;
};

struct LossRow {
  std::uint64_t step = 0;
  LossBreakdown loss;
  double val_nll = 0;
};

struct TrainResult {
  TrainState state;
  std::vector<LossRow> curve;
};

inline constexpr const char* kLossCsvHeader = "step,nll,adj,edit,out,total,val_nll";

std::string format_loss_row(const LossRow& row);

// Runs until config.steps, optionally continuing from a checkpoint. Rows are
// logged after every log_every-th update and after the last one; the CSV is
// rewritten with the resumed prefix followed by new rows.
TrainResult train(const TrainConfig& config, const std::vector<Example>& data,
                  const TrainOutputs& outputs, const std::optional<std::string>& resume_from = {},
                  const Vocabulary& vocab = Vocabulary::standard());

// Splits a dataset by is_val_index.
void split_dataset(const std::vector<Example>& data, std::vector<Example>& train,
                   std::vector<Example>& val);

}  // namespace roomseq
