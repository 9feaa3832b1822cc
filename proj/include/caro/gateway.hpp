#pragma once

#include <array>
#include <chrono>
#include <map>
#include <memory>
#include <mutex>
#include <semaphore>
#include <string>
#include <thread>
#include <unordered_map>

#include "caro/common.hpp"

namespace caro {

// ─── Requests and results ────────────────────────────────────────────

enum class Tag { grade, reflect, refine, consolidate };
inline constexpr int kNumTags = 4;

inline const char* tag_name(Tag t) {
    switch (t) {
        case Tag::grade: return "grade";
        case Tag::reflect: return "reflect";
        case Tag::refine: return "refine";
        case Tag::consolidate: return "consolidate";
    }
    return "?";
}

struct CompletionRequest {
    std::string system_prompt;
    std::string user_prompt;
    double temperature = 0.0;
    int max_tokens = 1024;
    Tag tag = Tag::grade;
};

struct CompletionResult {
    std::string text;
    long input_tokens = 0;
    long output_tokens = 0;
    long latency_ms = 0;
    std::string provider_id;
};

// Stable hash of (tag, system, user) after whitespace canonicalization.
// Scripted mock tests key on this, so incidental trailing spaces or CRLF
// differences do not break them.
inline std::string request_fingerprint(Tag tag, const std::string& system_prompt,
                                       const std::string& user_prompt) {
    std::uint64_t h = fnv1a64(tag_name(tag));
    h = fnv1a64(canonicalize_text(system_prompt), h);
    h = fnv1a64("\x1f", h);
    h = fnv1a64(canonicalize_text(user_prompt), h);
    return hex64(h);
}

inline std::string request_fingerprint(const CompletionRequest& req) {
    return request_fingerprint(req.tag, req.system_prompt, req.user_prompt);
}

// ─── Provider interface ──────────────────────────────────────────────

struct ProviderReply {
    std::string text;
    long input_tokens = 0;
    long output_tokens = 0;
};

// Thrown by providers for transient failures (429/5xx, connection
// drops); the gateway retries these with backoff.
class RetryableTransportError : public Error {
public:
    explicit RetryableTransportError(const std::string& message)
        : Error(Errc::transport, message) {}
};

class Provider {
public:
    virtual ~Provider() = default;
    virtual ProviderReply complete(const CompletionRequest& request,
                                   const std::string& fingerprint) = 0;
    virtual std::string id() const = 0;
};

// Deterministic scripted provider: a pure fingerprint -> reply lookup.
// An unknown fingerprint is a hard error so scripted tests cannot drift
// silently.
class MockProvider : public Provider {
public:
    void add(Tag tag, const std::string& system_prompt, const std::string& user_prompt,
             const std::string& reply_text) {
        add_fingerprint(request_fingerprint(tag, system_prompt, user_prompt), reply_text);
    }

    void add_fingerprint(const std::string& fingerprint, const std::string& reply_text) {
        scripts_[fingerprint] = reply_text;
    }

    ProviderReply complete(const CompletionRequest& request,
                           const std::string& fingerprint) override {
        auto it = scripts_.find(fingerprint);
        if (it == scripts_.end()) {
            throw Error(Errc::config, "mock provider has no scripted reply (tag=" +
                                          std::string(tag_name(request.tag)) +
                                          " fingerprint=" + fingerprint + ")");
        }
        return ProviderReply{it->second, estimate_tokens(request), estimate_tokens(it->second)};
    }

    std::string id() const override { return "mock"; }

    static long estimate_tokens(const CompletionRequest& request) {
        return estimate_tokens(request.system_prompt) + estimate_tokens(request.user_prompt);
    }
    // 4 chars/token is the usual rough figure; deterministic is all the
    // ledger math needs.
    static long estimate_tokens(const std::string& text) {
        return static_cast<long>(text.size() / 4 + 1);
    }

private:
    std::unordered_map<std::string, std::string> scripts_;
};

// ─── Usage ledger ────────────────────────────────────────────────────

struct Pricing {
    double input_per_million = 0.15;   // USD per 1M input tokens
    double output_per_million = 0.60;  // USD per 1M output tokens

    double cost(long input_tokens, long output_tokens) const {
        return static_cast<double>(input_tokens) * (input_per_million / 1e6) +
               static_cast<double>(output_tokens) * (output_per_million / 1e6);
    }
};

struct LedgerSlice {
    std::array<long, kNumTags> calls_by_tag{};
    long input_tokens = 0;
    long output_tokens = 0;

    long total_calls() const {
        long n = 0;
        for (long c : calls_by_tag) n += c;
        return n;
    }
    long calls(Tag t) const { return calls_by_tag[static_cast<std::size_t>(t)]; }
};

struct RunLedger {
    LedgerSlice totals;
    std::map<int, LedgerSlice> by_round;
    Pricing pricing;

    double estimated_cost_usd() const {
        return pricing.cost(totals.input_tokens, totals.output_tokens);
    }
    long total_calls() const { return totals.total_calls(); }
};

// ─── Gateway ─────────────────────────────────────────────────────────

struct RetryPolicy {
    int max_retries = 3;
    long base_delay_ms = 250;
    double multiplier = 2.0;
    long max_delay_ms = 4000;
};

struct GatewayOptions {
    RetryPolicy retry;
    Pricing pricing;
    int max_in_flight = 8;
};

// Shared front door for all model calls: enforces the grading
// temperature invariant, bounds in-flight concurrency, retries transient
// failures, and meters usage. Only the successful attempt's tokens enter
// the ledger.
class Gateway {
public:
    explicit Gateway(std::shared_ptr<Provider> provider, GatewayOptions options = {})
        : provider_(std::move(provider)), options_(options), in_flight_(options.max_in_flight) {
        if (options_.max_in_flight < 1 || options_.max_in_flight > kMaxInFlightCap)
            throw Error(Errc::config, "gateway in-flight limit must be in [1, 256]");
        ledger_.pricing = options_.pricing;
    }

    CompletionResult complete(const CompletionRequest& request) {
        if (request.tag == Tag::grade && request.temperature != 0.0)
            throw Error(Errc::config, "grade requests must use temperature 0");

        std::string fingerprint = request_fingerprint(request);
        in_flight_.acquire();
        struct Release {
            std::counting_semaphore<kMaxInFlightCap>& sem;
            ~Release() { sem.release(); }
        } release{in_flight_};

        auto started = std::chrono::steady_clock::now();
        long delay = options_.retry.base_delay_ms;
        for (int attempt = 0;; ++attempt) {
            try {
                ProviderReply reply = provider_->complete(request, fingerprint);
                auto elapsed = std::chrono::duration_cast<std::chrono::milliseconds>(
                                   std::chrono::steady_clock::now() - started)
                                   .count();
                record(request.tag, reply);
                return CompletionResult{reply.text, reply.input_tokens, reply.output_tokens,
                                        static_cast<long>(elapsed), provider_->id()};
            } catch (const RetryableTransportError& e) {
                if (attempt >= options_.retry.max_retries) {
                    throw Error(Errc::transport,
                                std::string(e.what()) + " (retries exhausted, tag=" +
                                    tag_name(request.tag) + " fingerprint=" + fingerprint + ")");
                }
                std::this_thread::sleep_for(std::chrono::milliseconds(delay));
                delay = std::min<long>(
                    static_cast<long>(static_cast<double>(delay) * options_.retry.multiplier),
                    options_.retry.max_delay_ms);
            } catch (const Error& e) {
                if (e.code() == Errc::protocol) {
                    throw Error(Errc::protocol,
                                std::string(e.what()) + " (tag=" + tag_name(request.tag) +
                                    " fingerprint=" + fingerprint + ")");
                }
                throw;
            }
        }
    }

    RunLedger ledger_snapshot() const {
        std::lock_guard<std::mutex> lock(ledger_mutex_);
        return ledger_;
    }

    void set_round(int round) {
        std::lock_guard<std::mutex> lock(ledger_mutex_);
        round_ = round;
    }

    // Seeds the ledger when resuming a persisted run.
    void restore_ledger(const RunLedger& ledger) {
        std::lock_guard<std::mutex> lock(ledger_mutex_);
        auto pricing = ledger_.pricing;
        ledger_ = ledger;
        ledger_.pricing = pricing;
    }

    const GatewayOptions& options() const { return options_; }
    Provider& provider() { return *provider_; }

private:
    static constexpr int kMaxInFlightCap = 256;

    void record(Tag tag, const ProviderReply& reply) {
        std::lock_guard<std::mutex> lock(ledger_mutex_);
        auto idx = static_cast<std::size_t>(tag);
        ledger_.totals.calls_by_tag[idx] += 1;
        ledger_.totals.input_tokens += reply.input_tokens;
        ledger_.totals.output_tokens += reply.output_tokens;
        auto& slice = ledger_.by_round[round_];
        slice.calls_by_tag[idx] += 1;
        slice.input_tokens += reply.input_tokens;
        slice.output_tokens += reply.output_tokens;
    }

    std::shared_ptr<Provider> provider_;
    GatewayOptions options_;
    mutable std::mutex ledger_mutex_;
    RunLedger ledger_;
    int round_ = 0;
    std::counting_semaphore<kMaxInFlightCap> in_flight_;
};

}  // namespace caro
