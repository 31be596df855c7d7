#pragma once

// HTTP completion adapter. POSTs one JSON request per prompt to a
// completion endpoint and expects {"text": "..."} back.
//
// Status handling: 2xx -> ok; 4xx -> permanent failure (the request is
// wrong, retrying cannot help); 5xx and transport errors -> transient,
// eligible for retry by the collector.

#define CPPHTTPLIB_NO_EXCEPTIONS
#include <httplib.h>

#include <memory>
#include <string>

#include "genbridge.hpp"
#include "util.hpp"

namespace icpl {

struct HttpClientConfig {
    std::string host = "127.0.0.1";
    int port = 8080;
    std::string path = "/v1/complete";
    int timeout_seconds = 60;
};

class HttpJsonClient final : public CompletionClient {
  public:
    explicit HttpJsonClient(HttpClientConfig cfg) : cfg_(std::move(cfg)) {}

    CompletionResult complete(const CompletionRequest& req) override {
        httplib::Client cli(cfg_.host, cfg_.port);
        cli.set_connection_timeout(cfg_.timeout_seconds);
        cli.set_read_timeout(cfg_.timeout_seconds);
        json body{{"model", req.model_id},
                  {"prompt", req.prompt},
                  {"temperature", req.decoding.temperature},
                  {"top_k", req.decoding.top_k},
                  {"max_tokens", req.decoding.max_tokens}};
        auto res = cli.Post(cfg_.path, body.dump(), "application/json");
        if (!res) return {false, "", "connect: " + httplib::to_string(res.error()), true};
        if (res->status >= 200 && res->status < 300) {
            json parsed = json::parse(res->body, nullptr, false);
            if (parsed.is_discarded() || !parsed.contains("text") || !parsed["text"].is_string())
                return {false, "", "malformed completion payload", false};
            return {true, parsed["text"].get<std::string>(), "", false};
        }
        const bool transient = res->status >= 500;
        return {false, "", "http status " + std::to_string(res->status), transient};
    }

  private:
    HttpClientConfig cfg_;
};

}  // namespace icpl
