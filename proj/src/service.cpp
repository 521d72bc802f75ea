#include "service.hpp"

#include <cstdio>
#include <ctime>
#include <filesystem>
#include <fstream>
#include <regex>
#include <thread>

#include <httplib.h>

#include "error.hpp"
#include "grammar.hpp"
#include "metrics.hpp"
#include "plan_json.hpp"

namespace roomseq {

namespace {

using ojson = nlohmann::ordered_json;

std::string now_iso8601() {
  const auto t = std::chrono::system_clock::to_time_t(std::chrono::system_clock::now());
  std::tm tm{};
  gmtime_r(&t, &tm);
  char buf[32];
  std::strftime(buf, sizeof buf, "%Y-%m-%dT%H:%M:%SZ", &tm);
  return buf;
}

HttpResponse json_response(int status, const ojson& j) { return {status, "application/json", j.dump()}; }

std::string fmt_num(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%g", v);
  return buf;
}

std::string hex64(std::uint64_t v) {
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(v));
  return buf;
}

// Parses a JSON request body; an empty body counts as {}.
std::optional<nlohmann::json> parse_body(const std::string& body) {
  if (body.find_first_not_of(" \t\r\n") == std::string::npos) return nlohmann::json::object();
  try {
    auto j = nlohmann::json::parse(body);
    if (!j.is_object()) return std::nullopt;
    return j;
  } catch (const nlohmann::json::exception&) {
    return std::nullopt;
  }
}

HttpResponse malformed_body() { return error_response(400, "malformed_body", "request body must be a JSON object"); }

HttpResponse decode_error(const Error& e, const FloorPlan* partial) {
  switch (e.code()) {
    case ErrorCode::InfeasibleStep: {
      ojson detail;
      if (partial) detail["partial"] = plan_to_json(*partial);
      return error_response(422, "infeasible_step", e.what(), detail);
    }
    case ErrorCode::SequenceTooLong:
      return error_response(422, "sequence_too_long", e.what());
    default:
      return error_response(500, error_code_name(e.code()), e.what());
  }
}

}  // namespace

HttpResponse error_response(int status, const std::string& code, const std::string& message,
                            const ojson& detail) {
  ojson err;
  err["code"] = code;
  err["message"] = message;
  if (!detail.is_null()) err["detail"] = detail;
  return json_response(status, ojson{{"error", err}});
}

DecodeConfig default_session_decode() {
  DecodeConfig c;
  c.strategy = Strategy::TopK;
  c.k = 3;
  return c;
}

ojson decode_config_to_json(const DecodeConfig& c) {
  ojson j;
  j["strategy"] = strategy_name(c.strategy);
  j["k"] = c.k;
  j["beam_width"] = c.beam_width;
  j["temperature"] = c.temperature;
  j["max_rooms"] = c.max_rooms;
  j["seed"] = c.seed;
  j["hard_constraints"] = c.hard_constraints;
  return j;
}

DecodeConfig decode_config_from_json(const nlohmann::json& j, DecodeConfig c) {
  if (!j.is_object()) fail(ErrorCode::Parse, "decode must be an object");
  for (const auto& [key, v] : j.items()) {
    if (key == "strategy") {
      if (!v.is_string()) fail(ErrorCode::Parse, "strategy must be a string");
      auto s = strategy_from_name(v.get<std::string>());
      if (!s) fail(ErrorCode::Parse, "unknown strategy: " + v.get<std::string>());
      c.strategy = *s;
    } else if (key == "k" || key == "beam_width" || key == "max_rooms") {
      if (!v.is_number_integer()) fail(ErrorCode::Parse, key + " must be an integer");
      const int x = v.get<int>();
      (key == "k" ? c.k : key == "beam_width" ? c.beam_width : c.max_rooms) = x;
    } else if (key == "temperature") {
      if (!v.is_number()) fail(ErrorCode::Parse, "temperature must be a number");
      c.temperature = v.get<double>();
    } else if (key == "seed") {
      if (!v.is_number_unsigned()) fail(ErrorCode::Parse, "seed must be a non-negative integer");
      c.seed = v.get<std::uint64_t>();
    } else if (key == "hard_constraints") {
      if (!v.is_boolean()) fail(ErrorCode::Parse, "hard_constraints must be a boolean");
      c.hard_constraints = v.get<bool>();
    } else {
      fail(ErrorCode::Parse, "unknown decode field: " + key);
    }
  }
  try {
    c.validate();
  } catch (const Error& e) {
    fail(ErrorCode::Parse, e.what());
  }
  return c;
}

std::string plan_to_svg(const FloorPlan& plan) {
  const auto& o = plan.outline;
  const int w = o.x1 - o.x0, h = o.y1 - o.y0;
  std::string s = "<svg xmlns=\"http://www.w3.org/2000/svg\" viewBox=\"" + std::to_string(o.x0) + " " +
                  std::to_string(o.y0) + " " + std::to_string(w) + " " + std::to_string(h) + "\">\n";
  s += "  <rect class=\"outline\" x=\"" + std::to_string(o.x0) + "\" y=\"" + std::to_string(o.y0) +
       "\" width=\"" + std::to_string(w) + "\" height=\"" + std::to_string(h) +
       "\" fill=\"none\" stroke=\"black\" stroke-width=\"1\"/>\n";
  for (const auto& r : plan.rooms) {
    const Rect b = room_bounds(r);
    const double y = o.y0 + o.y1 - b.y_hi;
    const int v = palette_intensity(r.type);
    const std::string fill = "rgb(" + std::to_string(v) + "," + std::to_string(v) + "," + std::to_string(v) + ")";
    s += "  <rect class=\"room\" data-room-type=\"" + std::string(room_type_name(r.type)) +
         "\" data-ordinal=\"" + std::to_string(r.ordinal) + "\" x=\"" + fmt_num(b.x_lo) + "\" y=\"" +
         fmt_num(y) + "\" width=\"" + std::to_string(r.w) + "\" height=\"" + std::to_string(r.h) +
         "\" fill=\"" + fill + "\" stroke=\"black\" stroke-width=\"0.5\"/>\n";
  }
  s += "</svg>\n";
  return s;
}

SessionService::SessionService(std::shared_ptr<const Parameters> params, ServiceOptions options,
                               const Vocabulary& vocab)
    : params_(std::move(params)), options_(std::move(options)), vocab_(vocab) {
  if (options_.id_seed) {
    id_rng_.seed(*options_.id_seed);
  } else {
    std::random_device rd;
    id_rng_.seed((static_cast<std::uint64_t>(rd()) << 32) ^ rd());
  }
  if (!options_.snapshot_dir.empty()) std::filesystem::create_directories(options_.snapshot_dir);
}

std::size_t SessionService::session_count() {
  std::lock_guard lock(map_mu_);
  return sessions_.size();
}

std::string SessionService::new_id() {
  std::string id;
  for (int i = 0; i < 2; ++i) id += hex64(id_rng_());
  return id;
}

std::shared_ptr<SessionService::Session> SessionService::find(const std::string& id) {
  std::lock_guard lock(map_mu_);
  auto it = sessions_.find(id);
  return it == sessions_.end() ? nullptr : it->second;
}

HttpResponse SessionService::handle(const std::string& method, const std::string& path,
                                    const std::string& body,
                                    const std::map<std::string, std::string>& query) {
  static const std::regex session_re(R"(^/v1/sessions/([A-Za-z0-9_-]+)(/(propose|resolve|export))?$)");
  try {
    if (path == "/v1/health") {
      if (method != "GET") return error_response(405, "method_not_allowed", "use GET");
      return health();
    }
    if (path == "/v1/sessions") {
      if (method != "POST") return error_response(405, "method_not_allowed", "use POST");
      return create(body);
    }
    std::smatch m;
    if (!std::regex_match(path, m, session_re)) return error_response(404, "not_found", "no such endpoint");
    auto s = find(m[1].str());
    if (!s) return error_response(404, "unknown_session", "no session with id " + m[1].str());
    const std::string action = m[3].str();
    std::lock_guard lock(s->mu);
    if (action.empty()) {
      if (method != "GET") return error_response(405, "method_not_allowed", "use GET");
      return get(*s);
    }
    if (action == "export") {
      if (method != "GET") return error_response(405, "method_not_allowed", "use GET");
      return export_plan(*s, query);
    }
    if (method != "POST") return error_response(405, "method_not_allowed", "use POST");
    return action == "propose" ? propose(*s, body) : resolve(*s, body);
  } catch (const Error& e) {
    return error_response(500, error_code_name(e.code()), e.what());
  } catch (const std::exception& e) {
    return error_response(500, "internal", e.what());
  }
}

HttpResponse SessionService::health() {
  ojson j;
  j["status"] = "ok";
  j["checkpoint"] = options_.checkpoint_path.empty() || !params_ ? ojson(nullptr) : ojson(options_.checkpoint_path);
  j["vocab_version"] = hex64(vocab_.hash());
  j["model_loaded"] = static_cast<bool>(params_);
  return json_response(200, j);
}

HttpResponse SessionService::create(const std::string& body) {
  auto j = parse_body(body);
  if (!j) return malformed_body();
  if (!j->contains("prompt")) return error_response(400, "missing_field:prompt", "prompt is required");
  if (!(*j)["prompt"].is_string()) return error_response(400, "invalid_field:prompt", "prompt must be a string");
  if (!params_) return error_response(503, "no_checkpoint", "no model checkpoint is loaded");

  auto s = std::make_shared<Session>();
  s->prompt = (*j)["prompt"].get<std::string>();
  s->prompt_tokens = encode_prompt(s->prompt, vocab_);
  if (static_cast<int>(s->prompt_tokens.size()) + 3 > params_->config().max_seq_len)
    return error_response(400, "prompt_too_long", "prompt leaves no room for a plan",
                          ojson{{"prompt_tokens", s->prompt_tokens.size()},
                                {"max_seq_len", params_->config().max_seq_len}});
  if (j->contains("outline") && !(*j)["outline"].is_null()) {
    try {
      s->outline = outline_from_json((*j)["outline"]);
    } catch (const Error& e) {
      return error_response(400, "invalid_field:outline", e.what());
    }
  } else if (auto parsed = grammar::outline_from_prompt(s->prompt)) {
    s->outline = *parsed;
  }
  s->decode = default_session_decode();
  if (j->contains("decode") && !(*j)["decode"].is_null()) {
    try {
      s->decode = decode_config_from_json((*j)["decode"], s->decode);
    } catch (const Error& e) {
      return error_response(400, "invalid_field:decode", e.what());
    }
  }
  s->created = s->updated = now_iso8601();
  {
    std::lock_guard lock(map_mu_);
    do s->id = new_id();
    while (sessions_.count(s->id));
    sessions_[s->id] = s;
  }
  std::lock_guard lock(s->mu);
  snapshot(*s);
  return json_response(201, ojson{{"id", s->id}, {"state", state_json(*s)}});
}

HttpResponse SessionService::get(Session& s) { return json_response(200, state_json(s)); }

ojson SessionService::proposals_json(const Proposals& p) const {
  ojson list = ojson::array();
  for (const auto& r : p.list)
    list.push_back(ojson{{"room", room_to_json(r.room)}, {"logprob", r.logprob}, {"rank", r.rank}});
  return ojson{{"proposals", list}, {"finished", p.finished}};
}

ojson SessionService::state_json(const Session& s) const {
  ojson j;
  j["id"] = s.id;
  j["status"] = s.finished ? "finished" : "active";
  j["prompt"] = s.prompt;
  j["plan"] = plan_to_json(FloorPlan{s.outline, s.accepted});
  j["decode"] = decode_config_to_json(s.decode);
  j["history_depth"] = s.history.size();
  j["pending"] = s.proposals ? proposals_json(*s.proposals) : ojson(nullptr);
  j["created"] = s.created;
  j["updated"] = s.updated;
  return j;
}

SessionService::Frame SessionService::frame_of(const Session& s) const {
  return {s.accepted, s.finished, s.proposals, s.reseed};
}

HttpResponse SessionService::propose(Session& s, const std::string& body) {
  auto j = parse_body(body);
  if (!j) return malformed_body();
  if (s.finished) return error_response(409, "session_finished", "session is finished");
  DecodeConfig cfg = s.decode;
  int k = 0;
  if (j->contains("k") && !(*j)["k"].is_null()) {
    if (!(*j)["k"].is_number_integer() || (*j)["k"].get<int>() < 1)
      return error_response(400, "invalid_field:k", "k must be a positive integer");
    k = (*j)["k"].get<int>();
    if (cfg.strategy == Strategy::Beam) cfg.beam_width = k;
    else cfg.k = k;
  }
  if (s.proposals && s.proposals->k == k) return json_response(200, proposals_json(*s.proposals));

  Proposals p;
  p.k = k;
  if (static_cast<int>(s.accepted.size()) >= cfg.max_rooms) {
    p.finished = true;
  } else {
    try {
      auto r = next_room(*params_, s.prompt_tokens, s.accepted, s.outline, cfg, s.reseed);
      p.list = std::move(r.proposals);
      p.finished = r.finished;
    } catch (const InfeasibleStepError& e) {
      return decode_error(e, &e.partial());
    } catch (const Error& e) {
      return decode_error(e, nullptr);
    }
  }
  s.proposals = p;
  s.updated = now_iso8601();
  return json_response(200, proposals_json(p));
}

HttpResponse SessionService::resolve(Session& s, const std::string& body) {
  auto j = parse_body(body);
  if (!j) return malformed_body();
  if (!j->contains("action") || !(*j)["action"].is_string())
    return error_response(400, "missing_field:action", "action is required");
  const std::string action = (*j)["action"].get<std::string>();
  static const std::vector<std::string> known = {"accept", "accept_custom", "reject_all", "undo", "finish"};
  if (std::find(known.begin(), known.end(), action) == known.end())
    return error_response(400, "invalid_field:action", "unknown action: " + action);

  if (action == "undo") {
    if (s.history.empty()) return error_response(409, "nothing_to_undo", "history is empty");
    Frame f = std::move(s.history.back());
    s.history.pop_back();
    s.accepted = std::move(f.accepted);
    s.finished = f.finished;
    s.proposals = std::move(f.proposals);
    s.reseed = f.reseed;
    s.updated = now_iso8601();
    snapshot(s);
    return json_response(200, state_json(s));
  }
  if (s.finished) return error_response(409, "session_finished", "session is finished");

  Frame before = frame_of(s);
  if (action == "accept") {
    if (!j->contains("index") || !(*j)["index"].is_number_integer())
      return error_response(400, "missing_field:index", "index is required");
    if (!s.proposals) return error_response(409, "no_proposals", "call propose first");
    const int index = (*j)["index"].get<int>();
    if (index < 0 || index >= static_cast<int>(s.proposals->list.size()))
      return error_response(400, "invalid_field:index", "index out of range");
    s.accepted.push_back(s.proposals->list[index].room);
  } else if (action == "accept_custom") {
    if (!j->contains("room")) return error_response(400, "missing_field:room", "room is required");
    Room room;
    try {
      room = room_from_json((*j)["room"]);
    } catch (const Error& e) {
      return error_response(400, "invalid_field:room", e.what());
    }
    if (static_cast<int>(s.accepted.size()) >= s.decode.max_rooms)
      return error_response(409, "max_rooms", "session already has max_rooms rooms");
    if (s.decode.hard_constraints) {
      const double out = outside_area(room, s.outline);
      if (out > 0)
        return error_response(422, "outline_violation", "room extends beyond the outline",
                              ojson{{"outside_area", out}});
    }
    s.accepted.push_back(room);
  } else if (action == "reject_all") {
    ++s.reseed;
  } else if (action == "finish") {
    s.finished = true;
  }
  s.proposals.reset();
  s.history.push_back(std::move(before));
  s.updated = now_iso8601();
  snapshot(s);
  return json_response(200, state_json(s));
}

HttpResponse SessionService::export_plan(Session& s, const std::map<std::string, std::string>& query) {
  auto it = query.find("format");
  const std::string format = it == query.end() ? "json" : it->second;
  const FloorPlan plan{s.outline, s.accepted};
  if (format == "json") return {200, "application/json", plan_to_json_string(plan)};
  if (format == "text") return {200, "text/plain; charset=utf-8", render_textual(plan)};
  if (format == "svg") return {200, "image/svg+xml", plan_to_svg(plan)};
  return error_response(400, "unknown_format", "format must be json, svg or text");
}

void SessionService::snapshot(const Session& s) {
  if (options_.snapshot_dir.empty()) return;
  const auto path = std::filesystem::path(options_.snapshot_dir) / (s.id + ".json");
  const auto tmp = path.string() + ".tmp";
  {
    std::ofstream f(tmp);
    if (!f) return;
    f << state_json(s).dump(2) << '\n';
  }
  std::error_code ec;
  std::filesystem::rename(tmp, path, ec);
}

void SessionService::snapshot_all() {
  std::vector<std::shared_ptr<Session>> all;
  {
    std::lock_guard lock(map_mu_);
    for (auto& [id, s] : sessions_) all.push_back(s);
  }
  for (auto& s : all) {
    std::lock_guard lock(s->mu);
    snapshot(*s);
  }
}

bool run_server(SessionService& service, const std::string& host, int port,
                const std::function<bool()>& should_stop) {
  httplib::Server server;
  // SO_REUSEADDR only: a second instance on the same port must fail to bind.
  server.set_socket_options([](socket_t sock) {
    int yes = 1;
    setsockopt(sock, SOL_SOCKET, SO_REUSEADDR, &yes, sizeof(yes));
  });
  const std::string origin = service.options().cors_origin;
  server.set_default_headers({{"Access-Control-Allow-Origin", origin},
                              {"Access-Control-Allow-Methods", "GET, POST, OPTIONS"},
                              {"Access-Control-Allow-Headers", "Content-Type"}});
  server.Options(R"(.*)", [](const httplib::Request&, httplib::Response& res) { res.status = 204; });
  auto route = [&service](const httplib::Request& req, httplib::Response& res) {
    std::map<std::string, std::string> query;
    for (const auto& [k, v] : req.params) query.emplace(k, v);
    const auto r = service.handle(req.method, req.path, req.body, query);
    res.status = r.status;
    res.set_content(r.body, r.content_type);
  };
  server.Get(R"(/v1/.*)", route);
  server.Post(R"(/v1/.*)", route);

  if (!server.bind_to_port(host, port)) return false;
  std::atomic<bool> ended{false};
  std::thread worker([&] {
    server.listen_after_bind();
    ended = true;
  });
  // stop() is a no-op until the listener is running.
  server.wait_until_ready();
  while (!should_stop() && !ended.load()) std::this_thread::sleep_for(std::chrono::milliseconds(50));
  server.stop();
  worker.join();
  service.snapshot_all();
  return true;
}

}  // namespace roomseq
