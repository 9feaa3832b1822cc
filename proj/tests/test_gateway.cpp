#include <catch2/catch_amalgamated.hpp>

#include <atomic>
#include <fstream>
#include <thread>

#include "caro/gateway.hpp"
#include "caro/http.hpp"
#include "caro/openai.hpp"

using namespace caro;
using Catch::Approx;

namespace {

std::string read_file(const std::string& path) {
    std::ifstream in(path);
    REQUIRE(in);
    return std::string((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
}

// Provider with exact token accounting, for ledger arithmetic tests.
class FixedProvider : public Provider {
public:
    FixedProvider(std::string text, long in_tokens, long out_tokens)
        : text_(std::move(text)), in_(in_tokens), out_(out_tokens) {}

    ProviderReply complete(const CompletionRequest&, const std::string&) override {
        return ProviderReply{text_, in_, out_};
    }
    std::string id() const override { return "fixed"; }

private:
    std::string text_;
    long in_, out_;
};

// Scripted HTTP transport: returns canned responses in sequence and
// records every request it sees.
class ScriptedTransport : public HttpTransport {
public:
    explicit ScriptedTransport(std::vector<HttpResponse> responses)
        : responses_(std::move(responses)) {}

    HttpResponse send(const HttpRequest& request) override {
        requests.push_back(request);
        if (index_ >= responses_.size()) return responses_.back();
        return responses_[index_++];
    }

    std::vector<HttpRequest> requests;

private:
    std::vector<HttpResponse> responses_;
    std::size_t index_ = 0;
};

GatewayOptions fast_options() {
    GatewayOptions options;
    options.retry.base_delay_ms = 1;
    options.retry.max_delay_ms = 2;
    return options;
}

std::string ok_payload(const std::string& text, long in_tokens, long out_tokens) {
    nlohmann::json j{{"choices",
                      nlohmann::json::array(
                          {{{"message", {{"role", "assistant"}, {"content", text}}}}})},
                     {"usage",
                      {{"prompt_tokens", in_tokens}, {"completion_tokens", out_tokens}}}};
    return j.dump();
}

}  // namespace

TEST_CASE("mock provider is a deterministic fingerprint lookup") {
    auto mock = std::make_shared<MockProvider>();
    mock->add(Tag::grade, "sys", "hello", "Score: 1");
    Gateway gateway(mock, fast_options());

    CompletionRequest request{"sys", "hello", 0.0, 128, Tag::grade};
    auto first = gateway.complete(request);
    auto second = gateway.complete(request);
    CHECK(first.text == "Score: 1");
    CHECK(first.text == second.text);
    CHECK(first.provider_id == "mock");

    CompletionRequest unknown{"sys", "unscripted", 0.0, 128, Tag::grade};
    CHECK_THROWS_AS(gateway.complete(unknown), Error);
}

TEST_CASE("fingerprints survive incidental whitespace") {
    std::string a = request_fingerprint(Tag::reflect, "sys", "line one\nline two");
    std::string b = request_fingerprint(Tag::reflect, "sys", "line one  \r\nline two");
    CHECK(a == b);
    // Different tags fingerprint differently even with identical text.
    CHECK(request_fingerprint(Tag::grade, "sys", "x") !=
          request_fingerprint(Tag::reflect, "sys", "x"));
}

TEST_CASE("ledger arithmetic matches the pricing table") {
    auto provider = std::make_shared<FixedProvider>("Score: 0", 100, 20);
    Gateway gateway(provider, fast_options());
    CompletionRequest request{"sys", "grade this", 0.0, 128, Tag::grade};
    for (int i = 0; i < 3; ++i) gateway.complete(request);

    RunLedger ledger = gateway.ledger_snapshot();
    CHECK(ledger.totals.input_tokens == 300);
    CHECK(ledger.totals.output_tokens == 60);
    CHECK(ledger.totals.calls(Tag::grade) == 3);
    CHECK(ledger.total_calls() == 3);
    double expected = 300 * (0.15 / 1e6) + 60 * (0.60 / 1e6);
    CHECK(ledger.estimated_cost_usd() == expected);
}

TEST_CASE("fresh gateway has an all-zero ledger; snapshots never decrease") {
    auto mock = std::make_shared<MockProvider>();
    mock->add(Tag::reflect, "s", "u", "Root Cause: x\nProposed Rule Fix:\n1. y");
    Gateway gateway(mock, fast_options());

    RunLedger zero = gateway.ledger_snapshot();
    CHECK(zero.total_calls() == 0);
    CHECK(zero.totals.input_tokens == 0);
    CHECK(zero.estimated_cost_usd() == 0.0);

    CompletionRequest request{"s", "u", 0.3, 128, Tag::reflect};
    gateway.complete(request);
    RunLedger one = gateway.ledger_snapshot();
    gateway.complete(request);
    RunLedger two = gateway.ledger_snapshot();
    CHECK(one.total_calls() >= zero.total_calls());
    CHECK(two.total_calls() >= one.total_calls());
    CHECK(two.totals.input_tokens >= one.totals.input_tokens);

    // Conservation: per-tag counts sum to the total.
    long sum = 0;
    for (long c : two.totals.calls_by_tag) sum += c;
    CHECK(sum == two.total_calls());
}

TEST_CASE("per-round breakdown follows set_round") {
    auto provider = std::make_shared<FixedProvider>("ok", 10, 5);
    Gateway gateway(provider, fast_options());
    CompletionRequest reflect{"s", "u", 0.3, 64, Tag::reflect};
    CompletionRequest refine{"s", "v", 0.3, 64, Tag::refine};

    gateway.set_round(1);
    gateway.complete(reflect);
    gateway.complete(refine);
    gateway.set_round(2);
    gateway.complete(reflect);

    RunLedger ledger = gateway.ledger_snapshot();
    CHECK(ledger.by_round.at(1).total_calls() == 2);
    CHECK(ledger.by_round.at(2).total_calls() == 1);
    CHECK(ledger.by_round.at(1).calls(Tag::reflect) == 1);
    CHECK(ledger.by_round.at(2).calls(Tag::reflect) == 1);
}

TEST_CASE("grade requests must use temperature zero") {
    auto mock = std::make_shared<MockProvider>();
    Gateway gateway(mock, fast_options());
    CompletionRequest warm{"s", "u", 0.7, 64, Tag::grade};
    CHECK_THROWS_AS(gateway.complete(warm), Error);
}

TEST_CASE("transient HTTP failures are retried; usage lands once") {
    auto transport = std::make_shared<ScriptedTransport>(std::vector<HttpResponse>{
        {429, "slow down"}, {500, "boom"}, {200, ok_payload("Answer: fine\nScore: 1", 42, 7)}});
    auto provider =
        std::make_shared<OpenAiProvider>(transport, "http://example.test", "test-model", "key");
    Gateway gateway(provider, fast_options());

    CompletionRequest request{"sys", "grade", 0.0, 64, Tag::grade};
    CompletionResult result = gateway.complete(request);
    CHECK(result.text == "Answer: fine\nScore: 1");
    CHECK(transport->requests.size() == 3);

    RunLedger ledger = gateway.ledger_snapshot();
    CHECK(ledger.total_calls() == 1);
    CHECK(ledger.totals.input_tokens == 42);
    CHECK(ledger.totals.output_tokens == 7);
}

TEST_CASE("exhausted retries surface a transport error naming tag and fingerprint") {
    auto transport = std::make_shared<ScriptedTransport>(std::vector<HttpResponse>{{429, "x"}});
    auto provider =
        std::make_shared<OpenAiProvider>(transport, "http://example.test", "m", "key");
    GatewayOptions options = fast_options();
    options.retry.max_retries = 2;
    Gateway gateway(provider, options);

    CompletionRequest request{"sys", "grade", 0.0, 64, Tag::grade};
    try {
        gateway.complete(request);
        FAIL("expected transport error");
    } catch (const Error& e) {
        CHECK(e.code() == Errc::transport);
        CHECK(contains(e.what(), "tag=grade"));
        CHECK(contains(e.what(), request_fingerprint(request)));
    }
    CHECK(transport->requests.size() == 3);  // initial + 2 retries
    CHECK(gateway.ledger_snapshot().total_calls() == 0);
}

TEST_CASE("malformed provider JSON is a protocol error with tag and fingerprint") {
    auto transport = std::make_shared<ScriptedTransport>(
        std::vector<HttpResponse>{{200, "this is not json"}});
    auto provider =
        std::make_shared<OpenAiProvider>(transport, "http://example.test", "m", "key");
    Gateway gateway(provider, fast_options());

    CompletionRequest request{"sys", "grade", 0.0, 64, Tag::grade};
    try {
        gateway.complete(request);
        FAIL("expected protocol error");
    } catch (const Error& e) {
        CHECK(e.code() == Errc::protocol);
        CHECK(contains(e.what(), "tag=grade"));
        CHECK(contains(e.what(), request_fingerprint(request)));
    }
}

TEST_CASE("grade request wire shape matches the recorded fixture") {
    CompletionRequest request{"sys", "hello", 0.0, 256, Tag::grade};
    nlohmann::json body = OpenAiProvider::build_body("gpt-4o-mini", request);
    CHECK(contains(body.dump(), "\"temperature\":0"));
    CHECK(!contains(body.dump(), "\"temperature\":0.0"));
    std::string golden =
        read_file(std::string(CARO_TEST_DATA_DIR) + "/golden/wire_grade_request.json");
    CHECK(body.dump(2) + "\n" == golden);

    // Nonzero temperatures serialize as reals.
    CompletionRequest warm{"sys", "hello", 0.3, 256, Tag::reflect};
    CHECK(contains(OpenAiProvider::build_body("m", warm).dump(), "\"temperature\":0.3"));
}

TEST_CASE("authorization and endpoint path are as expected") {
    auto transport = std::make_shared<ScriptedTransport>(
        std::vector<HttpResponse>{{200, ok_payload("Score: 0", 1, 1)}});
    auto provider =
        std::make_shared<OpenAiProvider>(transport, "http://example.test/", "m", "secret");
    Gateway gateway(provider, fast_options());
    gateway.complete(CompletionRequest{"s", "u", 0.0, 16, Tag::grade});
    REQUIRE(transport->requests.size() == 1);
    CHECK(transport->requests[0].url == "http://example.test/v1/chat/completions");
    CHECK(transport->requests[0].headers.at("Authorization") == "Bearer secret");
}

TEST_CASE("in-flight concurrency is bounded by the gateway limit") {
    class CountingProvider : public Provider {
    public:
        ProviderReply complete(const CompletionRequest&, const std::string&) override {
            int now = ++in_flight;
            int seen = max_seen.load();
            while (now > seen && !max_seen.compare_exchange_weak(seen, now)) {
            }
            std::this_thread::sleep_for(std::chrono::milliseconds(2));
            --in_flight;
            return ProviderReply{"ok", 1, 1};
        }
        std::string id() const override { return "counting"; }
        std::atomic<int> in_flight{0};
        std::atomic<int> max_seen{0};
    };

    auto provider = std::make_shared<CountingProvider>();
    GatewayOptions options = fast_options();
    options.max_in_flight = 3;
    Gateway gateway(provider, options);

    std::vector<std::thread> threads;
    for (int i = 0; i < 12; ++i) {
        threads.emplace_back([&gateway] {
            gateway.complete(CompletionRequest{"s", "u", 0.0, 16, Tag::grade});
        });
    }
    for (auto& t : threads) t.join();
    CHECK(provider->max_seen.load() <= 3);
    CHECK(provider->max_seen.load() >= 1);
    CHECK(gateway.ledger_snapshot().total_calls() == 12);
}
