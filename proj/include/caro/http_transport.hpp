#pragma once

// Real HTTP transport over cpp-httplib. Kept in its own header: httplib
// is heavy to compile and only the CLI and live smoke tests need it.

#define CPPHTTPLIB_OPENSSL_SUPPORT
#include <httplib.h>

#include <string>

#include "caro/common.hpp"
#include "caro/http.hpp"

namespace caro {

class HttplibTransport : public HttpTransport {
public:
    explicit HttplibTransport(long timeout_seconds = 120) : timeout_seconds_(timeout_seconds) {}

    HttpResponse send(const HttpRequest& request) override {
        auto [origin, path] = split_url(request.url);
        httplib::Client client(origin);
        client.set_connection_timeout(timeout_seconds_, 0);
        client.set_read_timeout(timeout_seconds_, 0);
        httplib::Headers headers;
        std::string content_type = "application/json";
        for (const auto& [k, v] : request.headers) {
            if (k == "Content-Type")
                content_type = v;
            else
                headers.emplace(k, v);
        }
        httplib::Result result =
            request.method == "GET"
                ? client.Get(path, headers)
                : client.Post(path, headers, request.body, content_type);
        if (!result) return HttpResponse{0, ""};
        return HttpResponse{result->status, result->body};
    }

private:
    // "https://host:port/some/path" -> ("https://host:port", "/some/path")
    static std::pair<std::string, std::string> split_url(const std::string& url) {
        auto scheme_end = url.find("://");
        if (scheme_end == std::string::npos)
            throw Error(Errc::config, "endpoint URL must include a scheme: " + url);
        auto path_start = url.find('/', scheme_end + 3);
        if (path_start == std::string::npos) return {url, "/"};
        return {url.substr(0, path_start), url.substr(path_start)};
    }

    long timeout_seconds_;
};

}  // namespace caro
