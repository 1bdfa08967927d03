#include <algorithm>
#include <fstream>
#include <sstream>

#include "httplib.h"

#include "rarefind/error.hpp"
#include "rarefind/service.hpp"

namespace rarefind {

using nlohmann::json;

namespace {

void send_json(httplib::Response& res, int status, const json& body) {
  res.status = status;
  res.set_content(body.dump(), "application/json");
}

std::string content_type_for(const std::filesystem::path& p) {
  auto ext = p.extension().string();
  std::transform(ext.begin(), ext.end(), ext.begin(), [](unsigned char c) { return std::tolower(c); });
  if (ext == ".png") return "image/png";
  if (ext == ".jpg" || ext == ".jpeg") return "image/jpeg";
  if (ext == ".gif") return "image/gif";
  if (ext == ".webp") return "image/webp";
  if (ext == ".bmp") return "image/bmp";
  return "application/octet-stream";
}

// Runs a handler and maps failures onto the {code, message, details} body.
template <typename Fn>
void guarded(httplib::Response& res, Fn&& fn) {
  try {
    fn();
  } catch (const ServiceError& e) {
    send_json(res, e.status(), e.body());
  } catch (const json::exception& e) {
    send_json(res, 400, ServiceError(400, "bad_request", e.what()).body());
  } catch (const Error& e) {
    send_json(res, 500, ServiceError(500, std::string(to_string(e.code())), e.what()).body());
  } catch (const std::exception& e) {
    send_json(res, 500, ServiceError(500, "internal", e.what()).body());
  }
}

json parse_body(const httplib::Request& req) {
  if (req.body.empty()) return json::object();
  return json::parse(req.body);
}

}  // namespace

struct HttpServer::Impl {
  static constexpr std::size_t kWorkers = 64;
  FeedbackService& service;
  httplib::Server server;

  explicit Impl(FeedbackService& s) : service(s) {
    // Keep-alive clients hold a worker each; size the pool for many annotators.
    server.new_task_queue = [] { return new httplib::ThreadPool(kWorkers); };
    server.Post("/v1/sessions", [this](const httplib::Request& req, httplib::Response& res) {
      guarded(res, [&] { send_json(res, 201, service.create_session(parse_body(req))); });
    });
    server.Get(R"(/v1/sessions/([^/]+)/batch)",
               [this](const httplib::Request& req, httplib::Response& res) {
                 guarded(res, [&] { send_json(res, 200, service.get_batch(req.matches[1])); });
               });
    server.Post(R"(/v1/sessions/([^/]+)/labels)",
                [this](const httplib::Request& req, httplib::Response& res) {
                  guarded(res, [&] {
                    send_json(res, 200, service.submit_labels(req.matches[1], parse_body(req)));
                  });
                });
    server.Get(R"(/v1/sessions/([^/]+)/state)",
               [this](const httplib::Request& req, httplib::Response& res) {
                 guarded(res, [&] { send_json(res, 200, service.get_state(req.matches[1])); });
               });
    server.Get("/v1/datasets", [this](const httplib::Request&, httplib::Response& res) {
      guarded(res, [&] { send_json(res, 200, service.list_datasets()); });
    });
    server.Get(R"(/v1/datasets/([^/]+)/samples/([^/]+)/image)",
               [this](const httplib::Request& req, httplib::Response& res) {
                 guarded(res, [&] {
                   const auto path = service.image_path(req.matches[1], req.matches[2].str());
                   std::ifstream in;
                   if (path) in.open(*path, std::ios::binary);
                   if (!path || !in) {
                     throw ServiceError(404, "no_image", "sample has no image",
                                        json{{"sample", req.matches[2].str()}});
                   }
                   std::ostringstream data;
                   data << in.rdbuf();
                   res.status = 200;
                   res.set_content(data.str(), content_type_for(*path));
                 });
               });
    server.set_error_handler([](const httplib::Request&, httplib::Response& res) {
      if (res.status == 404 && res.body.empty()) {
        send_json(res, 404, ServiceError(404, "not_found", "no such endpoint").body());
      }
    });
  }
};

HttpServer::HttpServer(FeedbackService& service) : impl_(std::make_unique<Impl>(service)) {}

HttpServer::~HttpServer() { stop(); }

int HttpServer::bind(const std::string& host, int port) {
  if (port == 0) return impl_->server.bind_to_any_port(host);
  return impl_->server.bind_to_port(host, port) ? port : -1;
}

bool HttpServer::listen() { return impl_->server.listen_after_bind(); }

void HttpServer::stop() {
  if (impl_->server.is_running()) impl_->server.stop();
}

void HttpServer::wait_until_ready() const { impl_->server.wait_until_ready(); }

}  // namespace rarefind
