#pragma once

#include <map>
#include <memory>
#include <string>

namespace caro {

// Minimal HTTP seam so wire-level behavior (retry classification, body
// shape) is testable without sockets. The real implementation lives in
// http_transport.hpp to keep httplib out of most translation units.

struct HttpRequest {
    std::string method = "POST";
    std::string url;  // full URL including scheme and path
    std::map<std::string, std::string> headers;
    std::string body;
};

struct HttpResponse {
    int status = 0;  // 0 = no response (connection failure)
    std::string body;
};

class HttpTransport {
public:
    virtual ~HttpTransport() = default;
    virtual HttpResponse send(const HttpRequest& request) = 0;
};

}  // namespace caro
