#include "reclab/http_server.hpp"

#include "httplib.h"

namespace reclab {

namespace {

HttpRequest convert(const httplib::Request& req) {
  HttpRequest out;
  out.method = req.method;
  out.path = req.path;
  out.body = req.body;
  for (const auto& [name, value] : req.headers) {
    std::string key = name;
    for (auto& c : key) c = (c >= 'A' && c <= 'Z') ? char(c - 'A' + 'a') : c;
    out.headers.emplace(std::move(key), value);
  }
  return out;
}

}  // namespace

HttpServer::HttpServer(Handler handler, int worker_threads) : server_(std::make_unique<httplib::Server>()) {
  server_->new_task_queue = [worker_threads] { return new httplib::ThreadPool(std::size_t(worker_threads)); };
  // Partners keep connections open; the library default closes them every 5 requests.
  server_->set_keep_alive_max_count(100000);
  auto route = [handler = std::move(handler)](const httplib::Request& req, httplib::Response& res) {
    const auto out = handler(convert(req));
    res.status = out.status;
    for (const auto& [name, value] : out.headers) res.set_header(name, value);
    if (!out.body.empty()) res.set_content(out.body, out.content_type);
  };
  server_->Get(".*", route);
  server_->Post(".*", route);
  server_->Put(".*", route);
}

HttpServer::~HttpServer() { stop(); }

int HttpServer::start(const std::string& host, int port) {
  host_ = host;
  port_ = port == 0 ? server_->bind_to_any_port(host) : (server_->bind_to_port(host, port) ? port : -1);
  if (port_ < 0) throw Error("BindFailed", "cannot bind " + host + ":" + std::to_string(port));
  thread_ = std::thread([this] { server_->listen_after_bind(); });
  server_->wait_until_ready();
  return port_;
}

void HttpServer::run(const std::string& host, int port) {
  host_ = host;
  if (!server_->bind_to_port(host, port)) throw Error("BindFailed", "cannot bind " + host + ":" + std::to_string(port));
  port_ = port;
  server_->listen_after_bind();
}

void HttpServer::stop() {
  if (server_) server_->stop();
  if (thread_.joinable()) thread_.join();
}

std::string HttpServer::base_url() const { return "http://" + host_ + ":" + std::to_string(port_); }

std::unique_ptr<HttpServer> serve_gateway(Gateway& gateway, const std::string& host, int port) {
  auto server = std::make_unique<HttpServer>([&gateway](const HttpRequest& r) { return gateway.dispatch(r); });
  server->start(host, port);
  return server;
}

}  // namespace reclab
