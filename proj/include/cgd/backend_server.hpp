#pragma once

// Serves any Generator/Guide pair over the HTTP wire protocol. Used to expose
// a mock world to remote clients and as the reference for server conformance.

#include <atomic>
#include <thread>

#include <httplib.h>

#include "cgd/backend.hpp"
#include "cgd/wire.hpp"

namespace cgd {

class BackendServer {
 public:
  BackendServer(const Generator& generator, const Guide& guide, std::string model_id = "mock")
      : generator_(&generator), guide_(&guide), model_id_(std::move(model_id)) {
    server_.Post("/v1/generate", [this](const httplib::Request& req, httplib::Response& res) {
      handle(res, [&] {
        GenerationRequest request = json::parse(req.body).get<GenerationRequest>();
        validate(request);
        return json(generator_->generate_next_sentence(request));
      });
    });
    server_.Post("/v1/similarity", [this](const httplib::Request& req, httplib::Response& res) {
      handle(res, [&] {
        SimilarityRequest request = json::parse(req.body).get<SimilarityRequest>();
        return json(SimilarityReply{guide_->similarity(request.image, request.text)});
      });
    });
    server_.Get("/v1/health", [this](const httplib::Request&, httplib::Response& res) {
      res.set_content(json{{"status", "ok"}, {"generator", model_id_}, {"guide", model_id_}}.dump(),
                      "application/json");
    });
  }

  BackendServer(const BackendServer&) = delete;
  BackendServer& operator=(const BackendServer&) = delete;
  ~BackendServer() { stop(); }

  /// Binds to host:port (port 0 picks a free port) and serves on a
  /// background thread. Returns the bound port.
  int start(const std::string& host = "127.0.0.1", int port = 0) {
    port_ = port == 0 ? server_.bind_to_any_port(host) : (server_.bind_to_port(host, port) ? port : -1);
    if (port_ < 0) throw Error("cannot bind " + host + ":" + std::to_string(port));
    thread_ = std::thread([this] { server_.listen_after_bind(); });
    server_.wait_until_ready();
    return port_;
  }

  /// Serves on the calling thread until stop() is called elsewhere.
  bool listen(const std::string& host, int port) { return server_.listen(host, port); }

  void stop() {
    server_.stop();
    if (thread_.joinable()) thread_.join();
  }

  int port() const noexcept { return port_; }

 private:
  template <typename Fn>
  static void handle(httplib::Response& res, Fn&& fn) {
    try {
      res.set_content(fn().dump(), "application/json");
    } catch (const json::exception& e) {
      res.status = 400;
      res.set_content(error_body("bad_request", e.what()).dump(), "application/json");
    } catch (const InvalidInput& e) {
      res.status = 400;
      res.set_content(error_body("invalid_input", e.what()).dump(), "application/json");
    } catch (const BackendError& e) {
      res.status = e.kind() == BackendErrorKind::world_miss ? 404 : 500;
      res.set_content(error_body(to_string(e.kind()), e.detail()).dump(), "application/json");
    } catch (const std::exception& e) {
      res.status = 500;
      res.set_content(error_body("internal", e.what()).dump(), "application/json");
    }
  }

  const Generator* generator_;
  const Guide* guide_;
  std::string model_id_;
  httplib::Server server_;
  std::thread thread_;
  int port_ = -1;
};

}  // namespace cgd
