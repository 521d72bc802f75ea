// roomseq command line: synth, train, generate, evaluate, serve.
//
// Exit codes: 0 success, 1 runtime failure, 2 usage error, 3 infeasible
// generation.

#include <atomic>
#include <csignal>
#include <cstdio>
#include <fstream>
#include <iostream>
#include <map>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <json.hpp>

#include "roomseq/roomseq.h"

namespace {

constexpr int kExitOk = 0;
constexpr int kExitRuntime = 1;
constexpr int kExitUsage = 2;
constexpr int kExitInfeasible = 3;

std::atomic<bool> g_interrupted{false};

extern "C" void on_signal(int) { g_interrupted.store(true); }

int stop_requested(void*) { return g_interrupted.load() ? 1 : 0; }

// Owns a string handed out by the library.
struct LibString {
  char* p = nullptr;
  ~LibString() { rs_string_free(p); }
  std::string str() const { return p ? std::string(p) : std::string(); }
};

int report(rs_status status, const char* what) {
  std::cerr << "roomseq " << what << ": " << rs_status_name(status) << ": " << rs_last_error()
            << '\n';
  return status == RS_ERR_INVALID_ARGUMENT ? kExitUsage : kExitRuntime;
}

std::vector<std::string> split(const std::string& s, char sep) {
  std::vector<std::string> out;
  std::stringstream ss(s);
  std::string part;
  while (std::getline(ss, part, sep)) out.push_back(part);
  return out;
}

// "batch_size" -> "--batch_size,--batch-size"
std::string flag_names(const std::string& key) {
  std::string dashed = key;
  for (char& c : dashed)
    if (c == '_') c = '-';
  return dashed == key ? "--" + key : "--" + key + ",--" + dashed;
}

struct DecodeFlags {
  std::optional<std::string> strategy;
  std::optional<int> k;
  std::optional<int> beam_width;
  std::optional<double> temperature;
  std::optional<int> max_rooms;
  std::optional<bool> hard_constraints;

  void add_to(CLI::App* cmd) {
    cmd->add_option("--strategy", strategy, "greedy | topk | beam")
        ->check(CLI::IsMember({"greedy", "topk", "beam"}));
    cmd->add_option("--k", k, "Top-K candidate count")->check(CLI::PositiveNumber);
    cmd->add_option("--beam-width,--beam_width", beam_width, "Beam width")
        ->check(CLI::PositiveNumber);
    cmd->add_option("--temperature", temperature, "Softmax temperature")
        ->check(CLI::PositiveNumber);
    cmd->add_option("--max-rooms,--max_rooms", max_rooms, "Room cap per plan")
        ->check(CLI::PositiveNumber);
    cmd->add_option("--hard-constraints,--hard_constraints", hard_constraints,
                    "Restrict coordinates to the outline (true|false)");
  }

  std::string to_json(std::uint64_t seed) const {
    nlohmann::json j;
    if (strategy) j["strategy"] = *strategy;
    if (k) j["k"] = *k;
    if (beam_width) j["beam_width"] = *beam_width;
    if (temperature) j["temperature"] = *temperature;
    if (max_rooms) j["max_rooms"] = *max_rooms;
    if (hard_constraints) j["hard_constraints"] = *hard_constraints;
    j["seed"] = seed;
    return j.dump();
  }
};

bool write_text(const std::string& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary);
  out << text;
  out.close();
  if (!out) {
    std::cerr << "roomseq: cannot write " << path << '\n';
    return false;
  }
  return true;
}

int run_synth(int n, std::uint64_t seed, const std::string& templates, const std::string& out) {
  LibString summary;
  const rs_status st =
      rs_synth(n, seed, templates.empty() ? nullptr : templates.c_str(), out.c_str(), &summary.p);
  if (st != RS_OK) return report(st, "synth");
  const auto j = nlohmann::ordered_json::parse(summary.str());
  std::cout << "wrote " << j["samples"].get<long>() << " samples to " << out << '\n';
  for (const auto& [name, count] : j["templates"].items())
    std::cout << "  " << name << ": " << count.get<long>() << '\n';
  return kExitOk;
}

int run_train(const std::string& data, const std::string& config, const std::string& out,
              const std::string& loss_csv, const std::string& resume,
              const std::map<std::string, std::string>& overrides) {
  std::string lines;
  for (const auto& [key, value] : overrides) lines += key + " = " + value + "\n";
  const std::string csv = loss_csv.empty() ? out + ".loss.csv" : loss_csv;
  LibString summary;
  const rs_status st = rs_train(data.empty() ? nullptr : data.c_str(),
                                config.empty() ? nullptr : config.c_str(), lines.c_str(),
                                out.c_str(), csv.c_str(), resume.empty() ? nullptr : resume.c_str(),
                                &summary.p);
  if (st != RS_OK) return report(st, "train");
  const auto j = nlohmann::ordered_json::parse(summary.str());
  std::cout << "trained " << j["steps"].get<long>() << " steps; checkpoint " << out
            << "; loss curve " << csv << '\n';
  if (j.contains("final")) std::cout << "final " << j["final"].dump() << '\n';
  return kExitOk;
}

std::vector<std::string> read_prompts(const std::string& path, bool& ok) {
  std::vector<std::string> prompts;
  std::ifstream in(path);
  ok = static_cast<bool>(in);
  std::string line;
  while (std::getline(in, line)) {
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.find_first_not_of(" \t") == std::string::npos) continue;
    prompts.push_back(line);
  }
  return prompts;
}

int run_generate(const std::string& ckpt, std::vector<std::string> prompts,
                 const std::string& prompt_file, const std::string& outline,
                 const DecodeFlags& decode, std::uint64_t seed, const std::string& format,
                 const std::string& out) {
  if (!prompt_file.empty()) {
    bool ok = false;
    auto more = read_prompts(prompt_file, ok);
    if (!ok) {
      std::cerr << "roomseq generate: cannot read " << prompt_file << '\n';
      return kExitRuntime;
    }
    prompts.insert(prompts.end(), more.begin(), more.end());
  }
  if (prompts.empty()) {
    std::cerr << "roomseq generate: no prompt given (--prompt or --prompt-file)\n";
    return kExitUsage;
  }

  rs_model* model = nullptr;
  rs_status st = rs_model_load(ckpt.c_str(), &model);
  if (st != RS_OK) return report(st, "generate");

  const std::string decode_json = decode.to_json(seed);
  std::string documents;
  int exit_code = kExitOk;
  for (std::size_t i = 0; i < prompts.size(); ++i) {
    LibString doc, partial;
    st = rs_generate(model, prompts[i].c_str(), outline.empty() ? nullptr : outline.c_str(),
                     decode_json.c_str(), format.c_str(), &doc.p, &partial.p);
    if (st == RS_ERR_INFEASIBLE) {
      std::cerr << "roomseq generate: prompt " << i + 1 << ": " << rs_last_error() << '\n';
      if (partial.p) std::cerr << partial.str() << '\n';
      exit_code = kExitInfeasible;
      continue;
    }
    if (st != RS_OK) {
      rs_model_free(model);
      return report(st, "generate");
    }
    if (i > 0 && format == "text") documents += '\n';
    documents += doc.str();
    if (format != "text") documents += '\n';
  }
  rs_model_free(model);

  if (out.empty()) {
    std::cout << documents << std::flush;
  } else if (!write_text(out, documents)) {
    return kExitRuntime;
  }
  return exit_code;
}

int run_evaluate(const std::string& ckpt, const std::string& data, const std::string& out,
                 int n_generate, const DecodeFlags& decode, std::uint64_t seed) {
  rs_model* model = nullptr;
  rs_status st = rs_model_load(ckpt.c_str(), &model);
  if (st != RS_OK) return report(st, "evaluate");
  LibString report_doc;
  st = rs_evaluate(model, data.c_str(), n_generate, decode.to_json(seed).c_str(), &report_doc.p);
  double nll = 0;
  if (st == RS_OK) st = rs_evaluate_nll(model, data.c_str(), "val", &nll);
  rs_model_free(model);
  if (st != RS_OK) return report(st, "evaluate");

  auto j = nlohmann::ordered_json::parse(report_doc.str());
  j["metadata"]["val_nll"] = nll;
  const std::string text = j.dump(2) + "\n";
  if (out.empty()) {
    std::cout << text;
  } else {
    if (!write_text(out, text)) return kExitRuntime;
    std::cout << "wrote " << out << '\n';
  }
  return kExitOk;
}

int run_serve(const std::string& ckpt, const std::string& host, int port,
              const std::string& snapshot_dir, const std::string& cors) {
  std::signal(SIGINT, on_signal);
  std::signal(SIGTERM, on_signal);
  std::cerr << "roomseq serve: listening on " << host << ':' << port << '\n';
  const rs_status st =
      rs_serve(ckpt.empty() ? nullptr : ckpt.c_str(), host.c_str(), port,
               snapshot_dir.empty() ? nullptr : snapshot_dir.c_str(), cors.c_str(),
               stop_requested, nullptr);
  if (st != RS_OK) return report(st, "serve");
  std::cerr << "roomseq serve: stopped\n";
  return kExitOk;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"roomseq: next-room floor plan generation"};
  app.require_subcommand(1);
  app.set_version_flag("--version", rs_version());

  std::uint64_t seed = 0;

  // synth
  auto* synth = app.add_subcommand("synth", "Write a synthetic JSONL corpus");
  int synth_n = 0;
  std::string synth_out, synth_templates;
  synth->add_option("--n", synth_n, "Number of samples")->required()->check(CLI::PositiveNumber);
  synth->add_option("--out", synth_out, "Output JSONL path")->required();
  synth->add_option("--templates", synth_templates, "Comma-separated template names");
  synth->add_option("--seed", seed, "Random seed");

  // train
  auto* train = app.add_subcommand("train", "Train a model on a JSONL corpus");
  std::string train_data, train_config, train_out, train_csv, train_resume;
  std::map<std::string, std::string> overrides;
  train->add_option("--data", train_data, "JSONL dataset (overrides the dataset key)");
  train->add_option("--config", train_config, "key = value or JSON configuration file")
      ->check(CLI::ExistingFile);
  train->add_option("--out", train_out, "Checkpoint path")->required();
  train->add_option("--loss-csv,--loss_csv", train_csv, "Loss curve path (default <out>.loss.csv)");
  train->add_option("--resume", train_resume, "Continue from this checkpoint")
      ->check(CLI::ExistingFile);
  for (const std::string& key : split(rs_train_config_keys(), ';')) {
    if (key == "dataset") continue;
    train->add_option_function<std::string>(
        flag_names(key), [&overrides, key](const std::string& v) { overrides[key] = v; },
        "Overrides the '" + key + "' configuration key");
  }

  // generate
  auto* generate = app.add_subcommand("generate", "Generate plans from prompts");
  std::string gen_ckpt, gen_prompt_file, gen_outline, gen_format = "json", gen_out;
  std::vector<std::string> gen_prompts;
  DecodeFlags gen_decode;
  generate->add_option("--ckpt", gen_ckpt, "Checkpoint")->required();
  generate->add_option("--prompt", gen_prompts, "Prompt text (repeatable)");
  generate->add_option("--prompt-file,--prompt_file", gen_prompt_file, "One prompt per line");
  generate->add_option("--outline", gen_outline, "Outline JSON {x0, y0, x1, y1}");
  generate->add_option("--out-format,--out_format,--format", gen_format, "json | svg | text")
      ->check(CLI::IsMember({"json", "svg", "text"}));
  generate->add_option("--out", gen_out, "Write documents here instead of stdout");
  generate->add_option("--seed", seed, "Random seed");
  gen_decode.add_to(generate);

  // evaluate
  auto* evaluate = app.add_subcommand("evaluate", "Score generated plans against the val split");
  std::string eval_ckpt, eval_data, eval_out;
  int eval_n = 256;
  DecodeFlags eval_decode;
  evaluate->add_option("--ckpt", eval_ckpt, "Checkpoint")->required();
  evaluate->add_option("--data", eval_data, "JSONL dataset")->required();
  evaluate->add_option("--out", eval_out, "Report path (default stdout)");
  evaluate->add_option("--n-generate,--n_generate", eval_n, "Plans to generate")
      ->check(CLI::PositiveNumber);
  evaluate->add_option("--seed", seed, "Random seed");
  eval_decode.add_to(evaluate);

  // serve
  auto* serve = app.add_subcommand("serve", "Run the interactive session service");
  std::string serve_ckpt, serve_host = "127.0.0.1", serve_snapshots, serve_cors = "*";
  int serve_port = 8080;
  serve->add_option("--ckpt", serve_ckpt, "Checkpoint");
  serve->add_option("--host", serve_host, "Bind address");
  serve->add_option("--port", serve_port, "Port")->check(CLI::Range(0, 65535));
  serve->add_option("--snapshot-dir,--snapshot_dir", serve_snapshots, "Session snapshot directory");
  serve->add_option("--cors-origin,--cors_origin", serve_cors, "Access-Control-Allow-Origin");
  serve->add_option("--seed", seed, "Accepted for uniformity; unused");

  try {
    app.parse(argc, argv);
  } catch (const CLI::Success& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return kExitUsage;
  }

  if (*synth) {
    std::string names = synth_templates;
    for (char& c : names)
      if (c == ',') c = ';';
    return run_synth(synth_n, seed, names, synth_out);
  }
  if (*train) {
    return run_train(train_data, train_config, train_out, train_csv, train_resume, overrides);
  }
  if (*generate)
    return run_generate(gen_ckpt, gen_prompts, gen_prompt_file, gen_outline, gen_decode, seed,
                        gen_format, gen_out);
  if (*evaluate) return run_evaluate(eval_ckpt, eval_data, eval_out, eval_n, eval_decode, seed);
  if (*serve) return run_serve(serve_ckpt, serve_host, serve_port, serve_snapshots, serve_cors);
  return kExitUsage;
}
