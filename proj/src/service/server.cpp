#include "dancedit/service/server.hpp"

#include <iostream>

#include <httplib.h>

namespace dancedit::service {

using nlohmann::json;

struct HttpServer::Impl {
  SessionStore& store;
  httplib::Server server;
  int port = -1;

  explicit Impl(SessionStore& s) : store(s) {}
};

namespace {

void reply(httplib::Response& res, int status, const json& body) {
  res.status = status;
  res.set_content(body.dump(), "application/json");
}

void reply_error(httplib::Response& res, int status, const std::string& code,
                 const std::string& message) {
  reply(res, status, {{"code", code}, {"message", message}});
}

// Runs `fn`, translating store errors into JSON error bodies.
template <class Fn>
httplib::Server::Handler guarded(Fn fn) {
  return [fn](const httplib::Request& req, httplib::Response& res) {
    try {
      fn(req, res);
    } catch (const ServiceError& e) {
      reply_error(res, e.status(), e.code(), e.what());
    } catch (const json::exception& e) {
      reply_error(res, 422, "unprocessable", std::string("bad JSON body: ") + e.what());
    } catch (const std::exception& e) {
      std::cerr << "request " << req.method << " " << req.path << " failed: " << e.what() << "\n";
      reply_error(res, 500, "internal", e.what());
    }
  };
}

json parse_body(const httplib::Request& req) {
  if (req.body.empty()) return json::object();
  json j = json::parse(req.body);
  if (!j.is_object()) throw ServiceError(422, "unprocessable", "request body must be a JSON object");
  return j;
}

}  // namespace

HttpServer::HttpServer(SessionStore& store) : impl_(std::make_unique<Impl>(store)) {
  auto& srv = impl_->server;
  SessionStore& st = store;

  srv.Get("/v1/healthz", guarded([](const httplib::Request&, httplib::Response& res) {
    reply(res, 200, {{"status", "ok"}});
  }));

  srv.Get("/v1/sessions", guarded([&st](const httplib::Request&, httplib::Response& res) {
    reply(res, 200, {{"sessions", st.list()}});
  }));

  srv.Post("/v1/sessions", guarded([&st](const httplib::Request& req, httplib::Response& res) {
    const json body = parse_body(req);
    for (const auto& [key, _] : body.items()) {
      if (key != "seed" && key != "music") {
        throw ServiceError(422, "unprocessable", "unknown key \"" + key + "\"");
      }
    }
    const auto seed = body.value("seed", std::uint64_t{0});
    const std::string id = st.create(body.value("music", json::object()), seed);
    reply(res, 201, {{"id", id}});
  }));

  srv.Post(R"(/v1/sessions/([^/]+)/predict)",
           guarded([&st](const httplib::Request& req, httplib::Response& res) {
             reply(res, 200, {{"iteration", st.predict(req.matches[1])}});
           }));

  srv.Post(R"(/v1/sessions/([^/]+)/edits)",
           guarded([&st](const httplib::Request& req, httplib::Response& res) {
             const json body = parse_body(req);
             if (!body.contains("prompt") || !body.at("prompt").is_string()) {
               throw ServiceError(422, "unprocessable", "body needs a string \"prompt\"");
             }
             reply(res, 200,
                   {{"iteration", st.edit(req.matches[1], body.at("prompt").get<std::string>())}});
           }));

  srv.Post(R"(/v1/sessions/([^/]+)/undo)",
           guarded([&st](const httplib::Request& req, httplib::Response& res) {
             reply(res, 200, {{"iteration", st.undo(req.matches[1])}});
           }));

  srv.Get(R"(/v1/sessions/([^/]+))",
          guarded([&st](const httplib::Request& req, httplib::Response& res) {
            reply(res, 200, st.describe(req.matches[1]));
          }));

  srv.Get(R"(/v1/sessions/([^/]+)/iterations/(\d+)/motion)",
          guarded([&st](const httplib::Request& req, httplib::Response& res) {
            const std::string format =
                req.has_param("format") ? req.get_param_value("format") : "features";
            const std::size_t n = std::stoul(req.matches[2]);
            reply(res, 200, st.motion_payload(req.matches[1], n, format));
          }));

  srv.set_error_handler([](const httplib::Request& req, httplib::Response& res) {
    if (!res.body.empty()) return;
    if (res.status == 404) {
      reply_error(res, 404, "not_found", "no route for " + req.method + " " + req.path);
    }
  });
}

HttpServer::~HttpServer() { stop(); }

bool HttpServer::bind(const std::string& host, int port) {
  if (port < 0 || port > 65535) return false;
  if (port == 0) {
    impl_->port = impl_->server.bind_to_any_port(host);
  } else {
    impl_->port = impl_->server.bind_to_port(host, port) ? port : -1;
  }
  return impl_->port > 0;
}

int HttpServer::port() const { return impl_->port; }

void HttpServer::run() {
  if (impl_->port <= 0) throw std::logic_error("HttpServer::run before a successful bind");
  impl_->server.listen_after_bind();
}

void HttpServer::stop() {
  if (impl_->server.is_running()) impl_->server.stop();
}

}  // namespace dancedit::service
