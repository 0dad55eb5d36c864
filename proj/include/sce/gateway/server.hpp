#pragma once

// Serves any Gateway over the wire protocol. Used to put the mock behind a
// real socket (client tests, offline demos); argument errors map to 400 and
// everything else to 500, both with an {"error": ...} body.

#include <functional>
#include <string>

#include <httplib.h>
#include <nlohmann/json.hpp>

#include "sce/core/error.hpp"
#include "sce/gateway/gateway.hpp"
#include "sce/gateway/protocol.hpp"

namespace sce {

class GatewayServer {
 public:
  explicit GatewayServer(Gateway& backend) : backend_(backend) {
    using nlohmann::json;
    server_.Get(protocol::kModelInfo, [this](const httplib::Request&, httplib::Response& res) {
      respond(res, [&] { return protocol::encode_model_info(backend_.model_info()); });
    });
    server_.Get("/healthz", [](const httplib::Request&, httplib::Response& res) {
      res.set_content("ok", "text/plain");
    });
    post(protocol::kGenerate, [this](const json& j) {
      const auto params = protocol::parse_generate_params(j);
      return protocol::encode_generation(backend_.generate(protocol::detail::req<std::string>(j, "prompt"), params));
    });
    post(protocol::kHiddenStates, [this](const json& j) {
      return protocol::encode_layer_states(backend_.hidden_states(
          protocol::detail::req<std::string>(j, "prompt"), protocol::detail::req<std::string>(j, "response"),
          protocol::parse_layer_selection(j)));
    });
    post(protocol::kTokenChoiceProb, [this](const json& j) {
      return protocol::encode_probs(
          backend_.token_choice_prob(protocol::detail::req<std::string>(j, "prompt"),
                                     protocol::detail::req<std::vector<std::string>>(j, "candidates")));
    });
    post(protocol::kNli, [this](const json& j) {
      return protocol::encode_nli(backend_.nli(protocol::detail::req<std::string>(j, "premise"),
                                               protocol::detail::req<std::string>(j, "hypothesis")));
    });
    post(protocol::kGrade, [this](const json& j) {
      return protocol::encode_grade(backend_.grade(protocol::detail::req<std::string>(j, "question"),
                                                   protocol::detail::req<std::string>(j, "target"),
                                                   protocol::detail::req<std::string>(j, "predicted")));
    });
  }

  // Binds an ephemeral port on host and returns it; call listen() afterwards.
  int bind_any_port(const std::string& host = "127.0.0.1") { return server_.bind_to_any_port(host); }
  bool bind(const std::string& host, int port) { return server_.bind_to_port(host, port); }
  bool listen() { return server_.listen_after_bind(); }
  void stop() { server_.stop(); }
  void wait_until_ready() { server_.wait_until_ready(); }

 private:
  template <class F>
  static void respond(httplib::Response& res, F&& produce) {
    try {
      res.set_content(produce().dump(), "application/json");
    } catch (const ArgumentError& e) {
      res.status = 400;
      res.set_content(nlohmann::json{{"error", e.what()}}.dump(), "application/json");
    } catch (const std::exception& e) {
      res.status = 500;
      res.set_content(nlohmann::json{{"error", e.what()}}.dump(), "application/json");
    }
  }

  void post(const char* path, std::function<nlohmann::json(const nlohmann::json&)> handler) {
    server_.Post(path, [handler = std::move(handler)](const httplib::Request& req, httplib::Response& res) {
      respond(res, [&] {
        nlohmann::json body;
        try {
          body = nlohmann::json::parse(req.body);
        } catch (const nlohmann::json::parse_error&) {
          throw ArgumentError("request body is not valid JSON");
        }
        return handler(body);
      });
    });
  }

  Gateway& backend_;
  httplib::Server server_;
};

}  // namespace sce
