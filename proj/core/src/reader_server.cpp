#include "fcns/reader_server.hpp"

#include <fstream>
#include <iterator>

#include <httplib.h>

#include "fcns/error.hpp"

namespace fcns::reader {

using nlohmann::json;

struct ReaderServer::Impl {
  ReaderStudy& study;
  std::string admin_token;
  httplib::Server server;

  Impl(ReaderStudy& s, std::string token) : study(s), admin_token(std::move(token)) {}
};

namespace {

void send_json(httplib::Response& res, int status, const json& body) {
  res.status = status;
  res.set_content(body.dump(), "application/json");
}

void send_error(httplib::Response& res, int status, const std::string& message,
                const std::vector<std::string>& details = {}) {
  json body{{"error", message}};
  if (!details.empty()) body["details"] = details;
  send_json(res, status, body);
}

bool authorized(const httplib::Request& req, const std::string& token) {
  if (token.empty()) return false;
  return req.get_header_value("Authorization") == "Bearer " + token;
}

bool send_file(httplib::Response& res, const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) return false;
  std::string bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  res.status = 200;
  res.set_content(std::move(bytes), "image/png");
  return true;
}

}  // namespace

ReaderServer::ReaderServer(ReaderStudy& study, std::string admin_token)
    : impl_(std::make_unique<Impl>(study, std::move(admin_token))) {
  auto& srv = impl_->server;
  auto* impl = impl_.get();

  srv.set_default_headers({{"Access-Control-Allow-Origin", "*"}});
  srv.Options(R"(/api/.*)", [](const httplib::Request&, httplib::Response& res) {
    res.set_header("Access-Control-Allow-Methods", "GET, POST, OPTIONS");
    res.set_header("Access-Control-Allow-Headers", "Content-Type, Authorization");
    res.status = 204;
  });

  srv.Get("/api/health", [](const httplib::Request&, httplib::Response& res) {
    send_json(res, 200, {{"status", "ok"}});
  });

  srv.Get("/api/cases/next", [impl](const httplib::Request& req, httplib::Response& res) {
    const auto reader = req.get_param_value("reader");
    const auto mode_text =
        req.has_param("mode") ? req.get_param_value("mode") : std::string("blind");
    const auto mode = parse_mode(mode_text);
    if (reader.empty()) return send_error(res, 400, "missing reader parameter");
    if (!mode) return send_error(res, 400, "mode must be blind or assisted");
    const auto next = impl->study.next_case(reader);
    if (!next) return send_error(res, 404, "unknown reader " + reader);
    if (!next->next) {
      res.status = 204;
      return;
    }
    send_json(res, 200, case_descriptor(*next->next, *mode, next->remaining));
  });

  srv.Post(R"(/api/cases/([^/]+)/responses)",
           [impl](const httplib::Request& req, httplib::Response& res) {
             const std::string case_id = req.matches[1];
             json body;
             try {
               body = json::parse(req.body);
             } catch (const json::exception& e) {
               return send_error(res, 400, std::string("invalid JSON: ") + e.what());
             }
             ReaderResponse response;
             try {
               if (body.is_object()) body["case_id"] = case_id;
               response = response_from_json(body);
             } catch (const Error& e) {
               return send_error(res, 422, e.what(), e.details());
             }
             response.submitted_at.clear();
             switch (impl->study.submit(response)) {
               case SubmitStatus::kCreated:
                 return send_json(res, 201, {{"status", "created"}});
               case SubmitStatus::kDuplicate:
                 return send_error(res, 409, "case already answered by this reader");
               case SubmitStatus::kUnknownCase:
                 return send_error(res, 404, "unknown case " + case_id);
               case SubmitStatus::kUnknownReader:
                 return send_error(res, 404, "unknown reader " + response.reader_id);
             }
           });

  srv.Get(R"(/api/cases/([^/]+)/(image|overlay))",
          [impl](const httplib::Request& req, httplib::Response& res) {
            const auto* c = impl->study.find_case(req.matches[1]);
            if (!c) return send_error(res, 404, "unknown case");
            if (req.matches[2] == "image") {
              if (!send_file(res, c->image_path)) send_error(res, 404, "image missing");
              return;
            }
            if (!c->overlay_path || !send_file(res, *c->overlay_path)) {
              send_error(res, 404, "no overlay for this case");
            }
          });

  srv.Post("/api/readers", [impl](const httplib::Request& req, httplib::Response& res) {
    if (!authorized(req, impl->admin_token)) return send_error(res, 401, "admin token required");
    std::string id;
    try {
      id = json::parse(req.body).at("reader_id").get<std::string>();
    } catch (const json::exception& e) {
      return send_error(res, 422, std::string("expected {\"reader_id\": ...}: ") + e.what());
    }
    try {
      const bool created = impl->study.register_reader(id);
      send_json(res, created ? 201 : 200, {{"reader_id", id}});
    } catch (const Error& e) {
      send_error(res, 422, e.what());
    }
  });

  srv.Get("/api/summary", [impl](const httplib::Request& req, httplib::Response& res) {
    if (!authorized(req, impl->admin_token)) return send_error(res, 401, "admin token required");
    send_json(res, 200, to_json(impl->study.summary()));
  });
}

ReaderServer::~ReaderServer() = default;

int ReaderServer::bind(const std::string& host, int port) {
  if (port == 0) {
    const int p = impl_->server.bind_to_any_port(host);
    if (p < 0) raise(ErrorKind::kIo, "cannot bind " + host);
    return p;
  }
  if (!impl_->server.bind_to_port(host, port)) {
    raise(ErrorKind::kIo, "cannot bind " + host + ":" + std::to_string(port));
  }
  return port;
}

void ReaderServer::serve() { impl_->server.listen_after_bind(); }

void ReaderServer::stop() { impl_->server.stop(); }

}  // namespace fcns::reader
