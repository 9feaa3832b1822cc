#pragma once

#include <memory>
#include <string>

#include <json.hpp>

#include "caro/gateway.hpp"
#include "caro/http.hpp"

namespace caro {

// OpenAI-compatible chat-completions provider: POST {base}/v1/chat/completions
// with {model, messages, temperature, max_tokens}. Works against any
// endpoint speaking that dialect.
class OpenAiProvider : public Provider {
public:
    OpenAiProvider(std::shared_ptr<HttpTransport> transport, std::string base_url,
                   std::string model, std::string api_key)
        : transport_(std::move(transport)),
          base_url_(std::move(base_url)),
          model_(std::move(model)),
          api_key_(std::move(api_key)) {
        while (!base_url_.empty() && base_url_.back() == '/') base_url_.pop_back();
    }

    static nlohmann::json build_body(const std::string& model, const CompletionRequest& request) {
        nlohmann::json body;
        body["model"] = model;
        body["messages"] = nlohmann::json::array({
            nlohmann::json{{"role", "system"}, {"content", request.system_prompt}},
            nlohmann::json{{"role", "user"}, {"content", request.user_prompt}},
        });
        // Grading runs at temperature 0; serialize it as the integer 0.
        if (request.temperature == 0.0)
            body["temperature"] = 0;
        else
            body["temperature"] = request.temperature;
        body["max_tokens"] = request.max_tokens;
        return body;
    }

    ProviderReply complete(const CompletionRequest& request, const std::string&) override {
        HttpRequest http;
        http.url = base_url_ + "/v1/chat/completions";
        http.headers["Content-Type"] = "application/json";
        if (!api_key_.empty()) http.headers["Authorization"] = "Bearer " + api_key_;
        http.body = build_body(model_, request).dump();

        HttpResponse response = transport_->send(http);
        if (response.status == 0)
            throw RetryableTransportError("no response from " + http.url);
        if (response.status == 429 || response.status >= 500)
            throw RetryableTransportError("HTTP " + std::to_string(response.status) + " from " + http.url);
        if (response.status != 200)
            throw Error(Errc::transport,
                        "HTTP " + std::to_string(response.status) + " from " + http.url);

        nlohmann::json payload = nlohmann::json::parse(response.body, nullptr, false);
        if (payload.is_discarded())
            throw Error(Errc::protocol, "provider returned invalid JSON");
        try {
            ProviderReply reply;
            reply.text = payload.at("choices").at(0).at("message").at("content").get<std::string>();
            if (payload.contains("usage")) {
                reply.input_tokens = payload["usage"].value("prompt_tokens", 0L);
                reply.output_tokens = payload["usage"].value("completion_tokens", 0L);
            } else {
                reply.input_tokens = MockProvider::estimate_tokens(request);
                reply.output_tokens = MockProvider::estimate_tokens(reply.text);
            }
            return reply;
        } catch (const nlohmann::json::exception& e) {
            throw Error(Errc::protocol, std::string("unexpected completion payload: ") + e.what());
        }
    }

    std::string id() const override { return "openai:" + model_; }

private:
    std::shared_ptr<HttpTransport> transport_;
    std::string base_url_;
    std::string model_;
    std::string api_key_;
};

}  // namespace caro
