#pragma once

#include <functional>
#include <memory>
#include <string>
#include <thread>

#include "reclab/gateway.hpp"

namespace httplib {
class Server;
}

namespace reclab {

// Serves a request handler over HTTP/1.1 on a background thread.
class HttpServer {
 public:
  using Handler = std::function<HttpResponse(const HttpRequest&)>;

  explicit HttpServer(Handler handler, int worker_threads = 32);
  ~HttpServer();
  HttpServer(const HttpServer&) = delete;
  HttpServer& operator=(const HttpServer&) = delete;

  // Binds and starts serving. port 0 picks a free port. Returns the bound port.
  // Throws Error("BindFailed").
  int start(const std::string& host, int port);
  // Blocks on the calling thread until stop() is called from elsewhere.
  void run(const std::string& host, int port);
  void stop();
  int port() const { return port_; }
  std::string base_url() const;

 private:
  std::unique_ptr<httplib::Server> server_;
  std::thread thread_;
  std::string host_;
  int port_ = 0;
};

// Convenience: a server whose handler is gateway.dispatch.
std::unique_ptr<HttpServer> serve_gateway(Gateway& gateway, const std::string& host, int port);

}  // namespace reclab
