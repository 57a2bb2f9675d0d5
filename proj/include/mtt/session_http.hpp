#pragma once

// HTTP/JSON binding of the session service.
//
//   POST /api/v1/sessions                        {"preset", "seed"?}       -> {"id", ...}
//   POST /api/v1/sessions/{id}/join              {"role"}                  -> {"token", "role", "state"}
//   GET  /api/v1/sessions/{id}/state
//   POST /api/v1/sessions/{id}/ready             {"ready"?}
//   POST /api/v1/sessions/{id}/advance           {"to"?}
//   GET  /api/v1/sessions/{id}/sandbox                                     -> {"image": PNG data URI}
//   POST /api/v1/sessions/{id}/sandbox/messages  {"text"}                  -> {"accepted", "violation"?}
//   GET  /api/v1/sessions/{id}/sandbox/messages                            -> [{"from", "text"}]
//   GET  /api/v1/sessions/{id}/gallery                                     -> HTML page
//   GET  /api/v1/sessions/{id}/trial                                       -> role-scoped trial view
//   POST /api/v1/sessions/{id}/message           {"text"}                  -> {"accepted", "violation"?}
//   POST /api/v1/sessions/{id}/selection         {"choice"}
//   GET  /api/v1/sessions/{id}/scratchpad, PUT with {"text"}
//   GET  /api/v1/sessions/{id}/results                                     -> breakdowns + results CSV
//   GET  /api/v1/sessions/{id}/records.jsonl                               -> records file
//
// Everything after join needs "Authorization: Bearer <token>".

#include <filesystem>
#include <functional>
#include <memory>
#include <optional>
#include <string>

#include <httplib.h>
#include <json.hpp>

#include "mtt/session.hpp"

namespace mtt {

class SessionServer {
 public:
  explicit SessionServer(SessionManager& sessions, std::optional<std::filesystem::path> export_dir = std::nullopt)
      : sessions_(sessions), export_dir_(std::move(export_dir)) {
    routes();
  }

  httplib::Server& http() { return server_; }

  bool mount_static(const std::filesystem::path& dir) { return server_.set_mount_point("/", dir.string()); }

  bool listen(const std::string& host, int port) { return server_.listen(host, port); }

  // Binds an ephemeral port and serves on a background thread.
  int start_background(const std::string& host = "127.0.0.1") {
    const int port = server_.bind_to_any_port(host);
    if (port <= 0) throw Error("cannot bind " + host);
    thread_ = std::jthread([this] { server_.listen_after_bind(); });
    server_.wait_until_ready();
    return port;
  }

  void stop() {
    server_.stop();
    if (thread_.joinable()) thread_.join();
  }

  ~SessionServer() { stop(); }

 private:
  using Handler = std::function<void(const httplib::Request&, httplib::Response&)>;
  using json = nlohmann::json;

  static constexpr const char* kSession = R"(/api/v1/sessions/([0-9a-f]+))";

  static int status_of(SessionError::Kind k) {
    switch (k) {
      case SessionError::Kind::NotFound: return 404;
      case SessionError::Kind::BadRequest: return 400;
      case SessionError::Kind::Unauthorized: return 401;
      case SessionError::Kind::Forbidden: return 403;
      case SessionError::Kind::Conflict: return 409;
    }
    return 500;
  }

  static void send_json(httplib::Response& res, const json& j, int status = 200) {
    res.status = status;
    res.set_content(j.dump(), "application/json");
  }

  static Handler guarded(Handler h) {
    return [h = std::move(h)](const httplib::Request& req, httplib::Response& res) {
      try {
        h(req, res);
      } catch (const SessionError& e) {
        send_json(res, {{"error", e.what()}}, status_of(e.kind()));
      } catch (const json::exception& e) {
        send_json(res, {{"error", std::string("bad request body: ") + e.what()}}, 400);
      } catch (const std::exception& e) {
        send_json(res, {{"error", e.what()}}, 500);
      }
    };
  }

  static json body(const httplib::Request& req) {
    if (req.body.empty()) return json::object();
    json j = json::parse(req.body);
    if (!j.is_object()) throw SessionError(SessionError::Kind::BadRequest, "request body must be a JSON object");
    return j;
  }

  static std::string text_field(const httplib::Request& req) {
    const json b = body(req);
    if (!b.contains("text") || !b.at("text").is_string()) {
      throw SessionError(SessionError::Kind::BadRequest, "body needs a string 'text'");
    }
    return b.at("text").get<std::string>();
  }

  static std::string token(const httplib::Request& req) {
    const std::string auth = req.get_header_value("Authorization");
    static constexpr std::string_view kBearer = "Bearer ";
    if (auth.rfind(kBearer, 0) != 0) return {};
    return auth.substr(kBearer.size());
  }

  std::shared_ptr<Session> session(const httplib::Request& req) const { return sessions_.get(req.matches[1].str()); }

  void on(const char* method, const std::string& pattern, Handler h) {
    const std::string m = method;
    if (m == "GET") server_.Get(pattern, guarded(std::move(h)));
    else if (m == "POST") server_.Post(pattern, guarded(std::move(h)));
    else if (m == "PUT") server_.Put(pattern, guarded(std::move(h)));
  }

  void routes() {
    const std::string s = kSession;

    on("POST", "/api/v1/sessions", [this](const httplib::Request& req, httplib::Response& res) {
      const json b = body(req);
      const std::string preset = b.value("preset", std::string("human-10/10"));
      std::optional<std::uint64_t> seed;
      if (b.contains("seed")) seed = b.at("seed").get<std::uint64_t>();
      auto sess = sessions_.create(preset, seed);
      send_json(res,
                {{"id", sess->id()},
                 {"preset", sess->preset()},
                 {"state", to_string(sess->state())},
                 {"practice_questions", sess->question_count(PhaseKind::Practice)},
                 {"test_questions", sess->question_count(PhaseKind::Test)}},
                201);
    });

    on("POST", s + "/join", [this](const httplib::Request& req, httplib::Response& res) {
      auto sess = session(req);
      const json b = body(req);
      const auto role = role_from_string(b.value("role", std::string()));
      if (!role) throw SessionError(SessionError::Kind::BadRequest, "role must be speaker or listener");
      const std::string tok = sess->join(*role);
      send_json(res, {{"token", tok}, {"role", to_string(*role)}, {"state", to_string(sess->state())}});
    });

    on("GET", s + "/state", [this](const httplib::Request& req, httplib::Response& res) {
      send_json(res, session(req)->describe(token(req)));
    });

    on("POST", s + "/ready", [this](const httplib::Request& req, httplib::Response& res) {
      auto sess = session(req);
      sess->set_ready(token(req), body(req).value("ready", true));
      send_json(res, sess->describe(token(req)));
    });

    on("POST", s + "/advance", [this](const httplib::Request& req, httplib::Response& res) {
      auto sess = session(req);
      const json b = body(req);
      std::optional<SessionState> to;
      if (b.contains("to")) {
        to = session_state_from_string(b.at("to").get<std::string>());
        if (!to) throw SessionError(SessionError::Kind::BadRequest, "unknown state");
      }
      const SessionState st = sess->advance(token(req), to);
      send_json(res, {{"state", to_string(st)}});
    });

    on("GET", s + "/sandbox", [this](const httplib::Request& req, httplib::Response& res) {
      send_json(res, {{"image", png_data_uri(session(req)->sandbox_sample(token(req)))}});
    });

    on("POST", s + "/sandbox/messages", [this](const httplib::Request& req, httplib::Response& res) {
      const auto r = session(req)->post_sandbox_message(token(req), text_field(req));
      json j{{"accepted", r.accepted}};
      if (r.violation) j["violation"] = r.violation->description;
      send_json(res, j);
    });

    on("GET", s + "/sandbox/messages", [this](const httplib::Request& req, httplib::Response& res) {
      json out = json::array();
      for (const SandboxMessage& m : session(req)->sandbox_messages(token(req))) {
        out.push_back({{"from", to_string(m.from)}, {"text", m.text}});
      }
      send_json(res, out);
    });

    on("GET", s + "/gallery", [this](const httplib::Request& req, httplib::Response& res) {
      const auto images = session(req)->gallery(token(req));
      std::string html =
          "<!doctype html>\n<html><head><meta charset=\"utf-8\"><title>Examples</title>"
          "<style>img{width:160px;height:160px;image-rendering:pixelated;margin:6px;border:1px solid #888}</style>"
          "</head><body>\n";
      for (const Image& img : images) html += "<img src=\"" + png_data_uri(img) + "\">\n";
      html += "</body></html>\n";
      res.set_content(html, "text/html; charset=utf-8");
    });

    on("GET", s + "/trial", [this](const httplib::Request& req, httplib::Response& res) {
      send_json(res, to_json(session(req)->trial_view(token(req))));
    });

    on("POST", s + "/message", [this](const httplib::Request& req, httplib::Response& res) {
      const auto r = session(req)->post_message(token(req), text_field(req));
      json j{{"accepted", r.accepted}};
      if (r.violation) j["violation"] = r.violation->description;
      send_json(res, j);
    });

    on("POST", s + "/selection", [this](const httplib::Request& req, httplib::Response& res) {
      auto sess = session(req);
      const json b = body(req);
      if (!b.contains("choice") || !b.at("choice").is_number_integer()) {
        throw SessionError(SessionError::Kind::BadRequest, "body needs an integer 'choice'");
      }
      const TrialRecord r = sess->post_selection(token(req), b.at("choice").get<int>());
      json j{{"trial_id", r.question_id}, {"phase", to_string(r.phase)}, {"recorded", true}};
      if (r.phase == PhaseKind::Practice) {
        j["correct"] = r.correct;
        j["correct_index"] = r.correct_index;
      }
      j["state"] = to_string(sess->state());
      if (export_dir_ && sess->state() == SessionState::Done) sess->export_to(*export_dir_ / sess->id());
      send_json(res, j);
    });

    on("GET", s + "/scratchpad", [this](const httplib::Request& req, httplib::Response& res) {
      send_json(res, {{"text", session(req)->scratchpad(token(req))}});
    });

    on("PUT", s + "/scratchpad", [this](const httplib::Request& req, httplib::Response& res) {
      auto sess = session(req);
      sess->set_scratchpad(token(req), text_field(req));
      send_json(res, {{"text", sess->scratchpad(token(req))}});
    });

    on("GET", s + "/results", [this](const httplib::Request& req, httplib::Response& res) {
      const SessionResults r = session(req)->results(token(req));
      send_json(res, {{"practice", to_json(r.practice)}, {"test", to_json(r.test)}, {"results_csv", results_to_string(r.table)}});
    });

    on("GET", s + "/records.jsonl", [this](const httplib::Request& req, httplib::Response& res) {
      const SessionResults r = session(req)->results(token(req));
      res.set_content(records_to_string(r.records), "application/x-ndjson");
    });
  }

  SessionManager& sessions_;
  std::optional<std::filesystem::path> export_dir_;
  httplib::Server server_;
  std::jthread thread_;
};

}  // namespace mtt
