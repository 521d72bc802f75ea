#pragma once

// Interactive next-room sessions over HTTP + JSON. SessionService holds the
// protocol and can be driven directly (tests) or through run_server().

#include <atomic>
#include <chrono>
#include <cstdint>
#include <functional>
#include <map>
#include <memory>
#include <mutex>
#include <optional>
#include <random>
#include <string>
#include <vector>

#include <json.hpp>

#include "codec.hpp"
#include "decoder.hpp"
#include "model.hpp"

namespace roomseq {

struct HttpResponse {
  int status = 200;
  std::string content_type = "application/json";
  std::string body;
};

struct ServiceOptions {
  std::string checkpoint_path;   // reported by /v1/health
  std::string snapshot_dir;      // empty: no snapshots
  std::string cors_origin = "*";
  std::optional<std::uint64_t> id_seed;  // deterministic session ids when set
};

// Defaults for sessions created without a "decode" object.
DecodeConfig default_session_decode();

nlohmann::ordered_json decode_config_to_json(const DecodeConfig& c);
// Starts from `base` and overrides the fields present; throws Error(Parse).
DecodeConfig decode_config_from_json(const nlohmann::json& j, DecodeConfig base);

// SVG with an outline rect and one rect per room; y is flipped so north is up.
std::string plan_to_svg(const FloorPlan& plan);

class SessionService {
 public:
  // `params` may be null, in which case session creation answers 503.
  SessionService(std::shared_ptr<const Parameters> params, ServiceOptions options,
                 const Vocabulary& vocab = Vocabulary::standard());

  HttpResponse handle(const std::string& method, const std::string& path,
                      const std::string& body = {},
                      const std::map<std::string, std::string>& query = {});

  // Writes every session to the snapshot directory.
  void snapshot_all();

  const ServiceOptions& options() const { return options_; }
  std::size_t session_count();

 private:
  struct Proposals {
    std::vector<RoomProposal> list;
    bool finished = false;
    int k = 0;
  };
  struct Frame {
    std::vector<Room> accepted;
    bool finished = false;
    std::optional<Proposals> proposals;
    std::uint64_t reseed = 0;
  };
  struct Session {
    std::mutex mu;
    std::string id;
    std::string prompt;
    std::vector<TokenId> prompt_tokens;
    Outline outline;
    DecodeConfig decode;
    std::vector<Room> accepted;
    bool finished = false;
    std::optional<Proposals> proposals;
    std::uint64_t reseed = 0;
    std::vector<Frame> history;
    std::string created;
    std::string updated;
  };

  HttpResponse create(const std::string& body);
  HttpResponse get(Session& s);
  HttpResponse propose(Session& s, const std::string& body);
  HttpResponse resolve(Session& s, const std::string& body);
  HttpResponse export_plan(Session& s, const std::map<std::string, std::string>& query);
  HttpResponse health();

  std::shared_ptr<Session> find(const std::string& id);
  std::string new_id();
  nlohmann::ordered_json state_json(const Session& s) const;
  nlohmann::ordered_json proposals_json(const Proposals& p) const;
  Frame frame_of(const Session& s) const;
  void snapshot(const Session& s);

  std::shared_ptr<const Parameters> params_;
  ServiceOptions options_;
  const Vocabulary& vocab_;
  std::mutex map_mu_;
  std::map<std::string, std::shared_ptr<Session>> sessions_;
  std::mt19937_64 id_rng_;
};

HttpResponse error_response(int status, const std::string& code, const std::string& message,
                            const nlohmann::ordered_json& detail = nullptr);

// Serves until `should_stop` returns true (polled every 50 ms). Returns false
// when the port cannot be bound. Snapshots are flushed on the way out.
bool run_server(SessionService& service, const std::string& host, int port,
                const std::function<bool()>& should_stop);

}  // namespace roomseq
