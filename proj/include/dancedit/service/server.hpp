#pragma once

// HTTP+JSON front end of the session store. Routes live under /v1; errors
// are {"code","message"} bodies with 404/409/422/503 statuses.

#include <memory>
#include <string>

#include "dancedit/service/session.hpp"

namespace dancedit::service {

class HttpServer {
 public:
  explicit HttpServer(SessionStore& store);
  ~HttpServer();
  HttpServer(const HttpServer&) = delete;
  HttpServer& operator=(const HttpServer&) = delete;

  // Port 0 picks a free port. Returns false when the address cannot be bound.
  bool bind(const std::string& host, int port);
  int port() const;
  // Serves until stop(). Requires a successful bind().
  void run();
  void stop();

 private:
  struct Impl;
  std::unique_ptr<Impl> impl_;
};

}  // namespace dancedit::service
