#pragma once

#include <cmath>
#include <memory>
#include <string>
#include <vector>

#include <json.hpp>

#include "caro/common.hpp"
#include "caro/http.hpp"

namespace caro {

struct EmbeddingVector {
    std::vector<double> values;
    std::string source_id;
};

inline double cosine_similarity(const EmbeddingVector& a, const EmbeddingVector& b) {
    if (a.values.size() != b.values.size())
        throw Error(Errc::invalid_input, "cosine over mismatched embedding dimensions");
    double dot = 0.0, na = 0.0, nb = 0.0;
    for (std::size_t i = 0; i < a.values.size(); ++i) {
        dot += a.values[i] * b.values[i];
        na += a.values[i] * a.values[i];
        nb += b.values[i] * b.values[i];
    }
    if (na <= 0.0 || nb <= 0.0) return 0.0;
    return dot / (std::sqrt(na) * std::sqrt(nb));
}

class EmbeddingProvider {
public:
    virtual ~EmbeddingProvider() = default;
    virtual EmbeddingVector embed(const std::string& text, const std::string& source_id = "") = 0;
    virtual int dimension() const = 0;
};

// Deterministic offline embedder: hashed character-3-gram term
// frequencies, L2-normalized. No model, no network, same vector on every
// machine — nearest-neighbor semantics stay testable.
class OfflineEmbedder : public EmbeddingProvider {
public:
    static constexpr int kDimension = 512;

    EmbeddingVector embed(const std::string& text, const std::string& source_id = "") override {
        EmbeddingVector v;
        v.source_id = source_id;
        v.values.assign(kDimension, 0.0);
        std::string lowered = to_lower(text);
        if (lowered.size() >= 3) {
            for (std::size_t i = 0; i + 3 <= lowered.size(); ++i) {
                auto idx = fnv1a64(std::string_view(lowered).substr(i, 3)) % kDimension;
                v.values[idx] += 1.0;
            }
        }
        double norm = 0.0;
        for (double x : v.values) norm += x * x;
        if (norm <= 0.0) {
            // Degenerate text: deterministic unit basis vector keyed by id.
            auto idx = fnv1a64(source_id.empty() ? text : source_id) % kDimension;
            v.values[idx] = 1.0;
            return v;
        }
        norm = std::sqrt(norm);
        for (double& x : v.values) x /= norm;
        return v;
    }

    int dimension() const override { return kDimension; }
};

// Live embedding endpoint (OpenAI-compatible /v1/embeddings). After the
// retry budget is exhausted it degrades to the offline embedder for the
// rest of the run, so one run never mixes embedding spaces.
class HttpEmbedder : public EmbeddingProvider {
public:
    HttpEmbedder(std::shared_ptr<HttpTransport> transport, std::string base_url,
                 std::string model, std::string api_key, int max_retries = 3)
        : transport_(std::move(transport)),
          base_url_(std::move(base_url)),
          model_(std::move(model)),
          api_key_(std::move(api_key)),
          max_retries_(max_retries) {
        while (!base_url_.empty() && base_url_.back() == '/') base_url_.pop_back();
    }

    EmbeddingVector embed(const std::string& text, const std::string& source_id = "") override {
        if (fallen_back_) return fallback_.embed(text, source_id);
        for (int attempt = 0; attempt <= max_retries_; ++attempt) {
            try {
                return fetch(text, source_id);
            } catch (const Error&) {
                // transient or protocol failure; retry, then degrade
            }
        }
        log_warn("embedding endpoint unavailable; falling back to offline embeddings");
        fallen_back_ = true;
        return fallback_.embed(text, source_id);
    }

    int dimension() const override {
        return fallen_back_ ? fallback_.dimension() : live_dimension_;
    }

private:
    EmbeddingVector fetch(const std::string& text, const std::string& source_id) {
        HttpRequest request;
        request.url = base_url_ + "/v1/embeddings";
        request.headers["Content-Type"] = "application/json";
        if (!api_key_.empty()) request.headers["Authorization"] = "Bearer " + api_key_;
        request.body = nlohmann::json{{"model", model_}, {"input", text}}.dump();
        HttpResponse response = transport_->send(request);
        if (response.status != 200)
            throw Error(Errc::transport, "embedding endpoint returned HTTP " +
                                             std::to_string(response.status));
        nlohmann::json payload = nlohmann::json::parse(response.body, nullptr, false);
        if (payload.is_discarded()) throw Error(Errc::protocol, "invalid embedding payload");
        EmbeddingVector v;
        v.source_id = source_id;
        try {
            for (const auto& x : payload.at("data").at(0).at("embedding"))
                v.values.push_back(x.get<double>());
        } catch (const nlohmann::json::exception& e) {
            throw Error(Errc::protocol, std::string("unexpected embedding payload: ") + e.what());
        }
        if (v.values.empty()) throw Error(Errc::protocol, "empty embedding");
        live_dimension_ = static_cast<int>(v.values.size());
        return v;
    }

    std::shared_ptr<HttpTransport> transport_;
    std::string base_url_;
    std::string model_;
    std::string api_key_;
    int max_retries_;
    int live_dimension_ = 0;
    bool fallen_back_ = false;
    OfflineEmbedder fallback_;
};

}  // namespace caro
