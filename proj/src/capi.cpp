#include "roomseq/roomseq.h"

#include <cstdio>
#include <cstdlib>
#include <cstring>
#include <memory>
#include <sstream>
#include <string>

#include <json.hpp>

#include "codec.hpp"
#include "decoder.hpp"
#include "grammar.hpp"
#include "metrics.hpp"
#include "plan_json.hpp"
#include "service.hpp"
#include "synth.hpp"
#include "trainer.hpp"

using namespace roomseq;

struct rs_model {
  std::shared_ptr<const Parameters> params;
  std::string path;
};

namespace {

thread_local std::string g_last_error;

rs_status status_of(ErrorCode code) {
  switch (code) {
    case ErrorCode::InvalidArgument:
    case ErrorCode::CoordinateOutOfRange:
    case ErrorCode::TokenOutOfRange:
    case ErrorCode::ShapeMismatch:
    case ErrorCode::DimensionMismatch:
    case ErrorCode::TooSmall:
      return RS_ERR_INVALID_ARGUMENT;
    case ErrorCode::MalformedSequence:
    case ErrorCode::Parse:
      return RS_ERR_PARSE;
    case ErrorCode::SequenceTooLong:
      return RS_ERR_SEQUENCE_TOO_LONG;
    case ErrorCode::AllMasked:
    case ErrorCode::InfeasibleStep:
    case ErrorCode::InfeasiblePartition:
      return RS_ERR_INFEASIBLE;
    case ErrorCode::NonFiniteLoss:
      return RS_ERR_NON_FINITE_LOSS;
    case ErrorCode::VocabularyMismatch:
      return RS_ERR_VOCABULARY_MISMATCH;
    case ErrorCode::TooFewSamples:
      return RS_ERR_TOO_FEW_SAMPLES;
    case ErrorCode::Io:
      return RS_ERR_IO;
  }
  return RS_ERR_INTERNAL;
}

rs_status set_error(rs_status status, const std::string& message) {
  g_last_error = message;
  return status;
}

char* dup_string(const std::string& s) {
  char* out = static_cast<char*>(std::malloc(s.size() + 1));
  if (out) std::memcpy(out, s.c_str(), s.size() + 1);
  return out;
}

void give(char** out, const std::string& s) {
  if (out) *out = dup_string(s);
}

// Runs `fn` and turns exceptions into status codes.
template <typename Fn>
rs_status guarded(Fn&& fn) {
  g_last_error.clear();
  try {
    return fn();
  } catch (const Error& e) {
    return set_error(status_of(e.code()), e.what());
  } catch (const nlohmann::json::exception& e) {
    return set_error(RS_ERR_PARSE, e.what());
  } catch (const std::bad_alloc&) {
    return set_error(RS_ERR_INTERNAL, "out of memory");
  } catch (const std::exception& e) {
    return set_error(RS_ERR_INTERNAL, e.what());
  }
}

std::vector<ApartmentTemplate> parse_templates(const char* list) {
  if (!list || !*list) return standard_templates();
  std::vector<ApartmentTemplate> out;
  std::stringstream ss(list);
  std::string name;
  while (std::getline(ss, name, ';')) {
    if (name.empty()) continue;
    out.push_back(find_template(name));
  }
  if (out.empty()) fail(ErrorCode::InvalidArgument, "empty template list");
  return out;
}

DecodeConfig decode_from(const char* decode_json, DecodeConfig base = {}) {
  if (!decode_json || !*decode_json) return base;
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(decode_json);
  } catch (const nlohmann::json::exception& e) {
    fail(ErrorCode::Parse, std::string("decode options: ") + e.what());
  }
  DecodeConfig c = decode_config_from_json(j, base);
  c.validate();
  return c;
}

std::shared_ptr<const Parameters> load_params(const std::string& path) {
  Checkpoint ckpt = load_checkpoint(path);
  check_vocabulary(ckpt, Vocabulary::standard());
  return std::make_shared<const Parameters>(std::move(ckpt.state.params));
}

std::string render(const FloorPlan& plan, const std::string& format) {
  if (format == "json") return plan_to_json_string(plan);
  if (format == "svg") return plan_to_svg(plan);
  return render_textual(plan);
}

}  // namespace

extern "C" {

const char* rs_version(void) { return "0.1.0"; }

const char* rs_last_error(void) { return g_last_error.c_str(); }

const char* rs_status_name(rs_status status) {
  switch (status) {
    case RS_OK: return "ok";
    case RS_ERR_INVALID_ARGUMENT: return "invalid_argument";
    case RS_ERR_IO: return "io";
    case RS_ERR_PARSE: return "parse";
    case RS_ERR_VOCABULARY_MISMATCH: return "vocabulary_mismatch";
    case RS_ERR_INFEASIBLE: return "infeasible";
    case RS_ERR_SEQUENCE_TOO_LONG: return "sequence_too_long";
    case RS_ERR_NON_FINITE_LOSS: return "non_finite_loss";
    case RS_ERR_TOO_FEW_SAMPLES: return "too_few_samples";
    case RS_ERR_PORT_IN_USE: return "port_in_use";
    case RS_ERR_INTERNAL: return "internal";
  }
  return "unknown";
}

void rs_string_free(char* s) { std::free(s); }

const char* rs_vocab_version(void) {
  static const std::string hex = [] {
    char buf[17];
    std::snprintf(buf, sizeof buf, "%016llx",
                  static_cast<unsigned long long>(Vocabulary::standard().hash()));
    return std::string(buf);
  }();
  return hex.c_str();
}

rs_status rs_synth(int n, uint64_t seed, const char* templates, const char* out_path,
                   char** out_summary) {
  return guarded([&] {
    if (n <= 0) return set_error(RS_ERR_INVALID_ARGUMENT, "sample count must be positive");
    if (!out_path || !*out_path) return set_error(RS_ERR_INVALID_ARGUMENT, "missing output path");
    const auto tmpls = parse_templates(templates);
    const auto data = make_dataset(n, tmpls, seed);
    write_dataset(out_path, data);
    nlohmann::ordered_json summary;
    summary["samples"] = data.size();
    nlohmann::ordered_json counts = nlohmann::ordered_json::object();
    for (std::size_t i = 0; i < data.size(); ++i) {
      const std::string& name = tmpls[i % tmpls.size()].name;
      counts[name] = counts.value(name, 0) + 1;
    }
    summary["templates"] = counts;
    give(out_summary, summary.dump());
    return RS_OK;
  });
}

const char* rs_train_config_keys(void) {
  static const std::string joined = [] {
    std::string out;
    for (const auto& k : train_config_keys()) out += (out.empty() ? "" : ";") + k;
    return out;
  }();
  return joined.c_str();
}

rs_status rs_train(const char* data_path, const char* config_path, const char* overrides,
                   const char* checkpoint_out, const char* loss_csv, const char* resume_from,
                   char** out_summary) {
  return guarded([&] {
    TrainConfig config;
    if (config_path && *config_path) config = load_train_config(config_path);
    if (overrides && *overrides) config = parse_train_config(overrides, config);
    if (data_path && *data_path) config.dataset = data_path;
    config.validate();
    if (config.dataset.empty()) return set_error(RS_ERR_INVALID_ARGUMENT, "no dataset given");
    if (!checkpoint_out || !*checkpoint_out)
      return set_error(RS_ERR_INVALID_ARGUMENT, "missing checkpoint path");

    const auto data = read_dataset(config.dataset);
    TrainOutputs outputs{checkpoint_out, loss_csv ? loss_csv : ""};
    std::optional<std::string> resume;
    if (resume_from && *resume_from) resume = resume_from;
    const TrainResult result = train(config, data, outputs, resume);

    nlohmann::ordered_json summary;
    summary["steps"] = result.state.step;
    if (!result.curve.empty()) {
      const LossRow& last = result.curve.back();
      summary["final"] = {{"step", last.step},         {"nll", last.loss.nll},
                          {"adj", last.loss.adj},       {"edit", last.loss.edit},
                          {"out", last.loss.out},       {"total", last.loss.total},
                          {"val_nll", last.val_nll}};
    }
    give(out_summary, summary.dump());
    return RS_OK;
  });
}

rs_status rs_model_load(const char* checkpoint_path, rs_model** out) {
  return guarded([&] {
    if (!out) return set_error(RS_ERR_INVALID_ARGUMENT, "null output handle");
    *out = nullptr;
    if (!checkpoint_path) return set_error(RS_ERR_INVALID_ARGUMENT, "missing checkpoint path");
    auto model = std::make_unique<rs_model>();
    model->params = load_params(checkpoint_path);
    model->path = checkpoint_path;
    *out = model.release();
    return RS_OK;
  });
}

void rs_model_free(rs_model* model) { delete model; }

rs_status rs_generate(const rs_model* model, const char* prompt, const char* outline_json,
                      const char* decode_json, const char* format, char** out_document,
                      char** out_partial) {
  return guarded([&] {
    if (!model || !prompt || !out_document)
      return set_error(RS_ERR_INVALID_ARGUMENT, "null model, prompt or output");
    const std::string fmt = format ? format : "json";
    if (fmt != "json" && fmt != "svg" && fmt != "text")
      return set_error(RS_ERR_INVALID_ARGUMENT, "unknown format '" + fmt + "'");

    Outline outline;
    if (outline_json && *outline_json) {
      outline = outline_from_json(nlohmann::json::parse(outline_json));
    } else if (auto parsed = grammar::outline_from_prompt(prompt)) {
      outline = *parsed;
    }
    const DecodeConfig config = decode_from(decode_json);
    try {
      const GenerateResult result = generate_plan(*model->params, prompt, outline, config);
      give(out_document, render(result.plan, fmt));
    } catch (const InfeasibleStepError& e) {
      give(out_partial, plan_to_json_string(e.partial()));
      throw;
    }
    return RS_OK;
  });
}

rs_status rs_evaluate_nll(const rs_model* model, const char* data_path, const char* split,
                          double* out_nll) {
  return guarded([&] {
    if (!model || !data_path || !out_nll)
      return set_error(RS_ERR_INVALID_ARGUMENT, "null argument");
    const std::string which = split ? split : "val";
    if (which != "train" && which != "val" && which != "all")
      return set_error(RS_ERR_INVALID_ARGUMENT, "unknown split '" + which + "'");
    const auto data = read_dataset(data_path);
    std::vector<Example> train_part, val_part;
    split_dataset(data, train_part, val_part);
    const auto& chosen = which == "train" ? train_part : which == "val" ? val_part : data;
    const int max_len = model->params->config().max_seq_len;
    std::vector<PreparedExample> prepared;
    prepared.reserve(chosen.size());
    for (const auto& ex : chosen) prepared.push_back(prepare_example(ex, max_len));
    if (prepared.empty()) return set_error(RS_ERR_INVALID_ARGUMENT, "split is empty");
    *out_nll = evaluate_nll(*model->params, prepared);
    return RS_OK;
  });
}

rs_status rs_evaluate(const rs_model* model, const char* data_path, int n_generate,
                      const char* decode_json, char** out_report) {
  return guarded([&] {
    if (!model || !data_path) return set_error(RS_ERR_INVALID_ARGUMENT, "null argument");
    if (n_generate <= 0) return set_error(RS_ERR_INVALID_ARGUMENT, "sample count must be positive");
    const DecodeConfig config = decode_from(decode_json);
    const auto data = read_dataset(data_path);
    std::vector<Example> train_part, val_part;
    split_dataset(data, train_part, val_part);
    if (val_part.empty()) val_part = data;

    std::vector<FloorPlan> generated, reference;
    std::size_t infeasible = 0;
    for (std::size_t i = 0; i < val_part.size() && static_cast<int>(i) < n_generate; ++i) {
      const Example& ex = val_part[i];
      DecodeConfig c = config;
      c.seed = mix_seed(config.seed, i);
      FloorPlan plan;
      try {
        plan = generate_plan(*model->params, ex.prompt, ex.plan.outline, c).plan;
      } catch (const InfeasibleStepError& e) {
        plan = e.partial();
        ++infeasible;
      }
      generated.push_back(std::move(plan));
      reference.push_back(ex.plan);
    }
    const MetricsReport report = evaluate_corpus(generated, reference);
    nlohmann::ordered_json j = report.to_json();
    j["metadata"]["checkpoint"] = model->path;
    j["metadata"]["decode"] = decode_config_to_json(config);
    j["metadata"]["infeasible"] = infeasible;
    j["metadata"]["palette_version"] = kPaletteVersion;
    j["metadata"]["vocab_version"] = rs_vocab_version();
    give(out_report, j.dump(2));
    return RS_OK;
  });
}

rs_status rs_serve(const char* checkpoint_path, const char* host, int port,
                   const char* snapshot_dir, const char* cors_origin,
                   int (*should_stop)(void* user), void* user) {
  return guarded([&] {
    if (port < 0 || port > 65535) return set_error(RS_ERR_INVALID_ARGUMENT, "port out of range");
    std::shared_ptr<const Parameters> params;
    ServiceOptions options;
    if (checkpoint_path && *checkpoint_path) {
      params = load_params(checkpoint_path);
      options.checkpoint_path = checkpoint_path;
    }
    if (snapshot_dir) options.snapshot_dir = snapshot_dir;
    if (cors_origin && *cors_origin) options.cors_origin = cors_origin;
    SessionService service(params, options);
    const bool ok = run_server(service, host && *host ? host : "127.0.0.1", port,
                               [&] { return should_stop && should_stop(user) != 0; });
    if (!ok) {
      return set_error(RS_ERR_PORT_IN_USE, "cannot bind " + std::string(host ? host : "") + ":" +
                                              std::to_string(port));
    }
    return RS_OK;
  });
}

}  // extern "C"
