#pragma once

#include <cstdint>
#include <cstdio>
#include <mutex>
#include <random>
#include <sstream>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

namespace caro {

// ─── Errors ──────────────────────────────────────────────────────────

enum class Errc {
    invalid_input,  // rejected input (bad labels, empty batch, ...)
    config,         // rejected configuration
    transport,      // HTTP/provider failure after retries
    protocol,       // malformed provider payload
    parse,          // unparseable completion after retry
    runtime,        // everything else
};

inline const char* errc_name(Errc c) {
    switch (c) {
        case Errc::invalid_input: return "invalid_input";
        case Errc::config: return "config";
        case Errc::transport: return "transport";
        case Errc::protocol: return "protocol";
        case Errc::parse: return "parse";
        case Errc::runtime: return "runtime";
    }
    return "unknown";
}

class Error : public std::runtime_error {
public:
    Error(Errc code, const std::string& message)
        : std::runtime_error(std::string(errc_name(code)) + ": " + message), code_(code) {}

    Errc code() const noexcept { return code_; }

private:
    Errc code_;
};

// ─── Logging ─────────────────────────────────────────────────────────
//
// Human-facing diagnostics go to stderr so stdout stays machine-readable.
// Tests attach a memory sink to assert on recorded warnings.

class Logger {
public:
    enum class Level { debug, info, warn, error };

    static Logger& instance() {
        static Logger logger;
        return logger;
    }

    void log(Level level, const std::string& message) {
        std::lock_guard<std::mutex> lock(mutex_);
        if (capture_) captured_.push_back({level, message});
        if (level >= min_level_) {
            std::fprintf(stderr, "[%s] %s\n", level_name(level), message.c_str());
        }
    }

    void warn(const std::string& m) { log(Level::warn, m); }
    void info(const std::string& m) { log(Level::info, m); }
    void debug(const std::string& m) { log(Level::debug, m); }
    void error(const std::string& m) { log(Level::error, m); }

    void set_min_level(Level level) { min_level_ = level; }

    void start_capture() {
        std::lock_guard<std::mutex> lock(mutex_);
        capture_ = true;
        captured_.clear();
    }

    std::vector<std::pair<Level, std::string>> stop_capture() {
        std::lock_guard<std::mutex> lock(mutex_);
        capture_ = false;
        auto out = std::move(captured_);
        captured_.clear();
        return out;
    }

private:
    static const char* level_name(Level level) {
        switch (level) {
            case Level::debug: return "debug";
            case Level::info: return "info";
            case Level::warn: return "warn";
            case Level::error: return "error";
        }
        return "?";
    }

    std::mutex mutex_;
    Level min_level_ = Level::warn;
    bool capture_ = false;
    std::vector<std::pair<Level, std::string>> captured_;
};

inline void log_warn(const std::string& m) { Logger::instance().warn(m); }
inline void log_info(const std::string& m) { Logger::instance().info(m); }

// ─── Hashing ─────────────────────────────────────────────────────────

// FNV-1a; stable across platforms, used for mock fingerprints and seeds.
inline std::uint64_t fnv1a64(std::string_view data, std::uint64_t seed = 0xcbf29ce484222325ull) {
    std::uint64_t h = seed;
    for (unsigned char c : data) {
        h ^= c;
        h *= 0x100000001b3ull;
    }
    return h;
}

inline std::string hex64(std::uint64_t v) {
    char buf[17];
    std::snprintf(buf, sizeof(buf), "%016llx", static_cast<unsigned long long>(v));
    return buf;
}

// ─── Deterministic RNG ───────────────────────────────────────────────
//
// std::mt19937_64 output is pinned by the standard; the distributions are
// not, so bounded draws and shuffles are hand-rolled here. Every sampling
// site derives its engine from (seed, purpose, round) to keep runs
// replayable and resumable.

class Rng {
public:
    explicit Rng(std::uint64_t seed) : engine_(seed) {}

    static std::uint64_t derive_seed(std::uint64_t base, std::string_view purpose, std::uint64_t round = 0) {
        std::uint64_t h = fnv1a64(purpose);
        h = fnv1a64(std::string_view(reinterpret_cast<const char*>(&base), sizeof(base)), h);
        h = fnv1a64(std::string_view(reinterpret_cast<const char*>(&round), sizeof(round)), h);
        return h;
    }

    std::uint64_t next() { return engine_(); }

    // Uniform in [0, n). Modulo bias is ~n/2^64 and irrelevant here;
    // determinism is what matters.
    std::uint64_t bounded(std::uint64_t n) {
        return n == 0 ? 0 : next() % n;
    }

    double uniform01() {
        return static_cast<double>(next() >> 11) * (1.0 / 9007199254740992.0);
    }

    template <typename T>
    void shuffle(std::vector<T>& v) {
        for (std::size_t i = v.size(); i > 1; --i) {
            std::size_t j = static_cast<std::size_t>(bounded(i));
            std::swap(v[i - 1], v[j]);
        }
    }

    // First k elements of a shuffled index range, order preserved by draw.
    std::vector<std::size_t> sample_indices(std::size_t n, std::size_t k) {
        std::vector<std::size_t> idx(n);
        for (std::size_t i = 0; i < n; ++i) idx[i] = i;
        shuffle(idx);
        if (k < idx.size()) idx.resize(k);
        return idx;
    }

private:
    std::mt19937_64 engine_;
};

// ─── String helpers ──────────────────────────────────────────────────

inline std::string trim(std::string_view s) {
    std::size_t b = 0, e = s.size();
    while (b < e && std::isspace(static_cast<unsigned char>(s[b]))) ++b;
    while (e > b && std::isspace(static_cast<unsigned char>(s[e - 1]))) --e;
    return std::string(s.substr(b, e - b));
}

inline std::string to_lower(std::string_view s) {
    std::string out(s);
    for (char& c : out) c = static_cast<char>(std::tolower(static_cast<unsigned char>(c)));
    return out;
}

inline std::vector<std::string> split_lines(std::string_view text) {
    std::vector<std::string> lines;
    std::size_t start = 0;
    while (start <= text.size()) {
        std::size_t nl = text.find('\n', start);
        if (nl == std::string_view::npos) {
            lines.emplace_back(text.substr(start));
            break;
        }
        lines.emplace_back(text.substr(start, nl - start));
        start = nl + 1;
    }
    return lines;
}

inline std::string join(const std::vector<std::string>& parts, const std::string& sep) {
    std::string out;
    for (std::size_t i = 0; i < parts.size(); ++i) {
        if (i) out += sep;
        out += parts[i];
    }
    return out;
}

inline bool contains(std::string_view haystack, std::string_view needle) {
    return haystack.find(needle) != std::string_view::npos;
}

// CRLF → LF, strip trailing spaces per line. Fingerprints and golden
// files both go through this so incidental whitespace never matters.
inline std::string canonicalize_text(std::string_view text) {
    std::string out;
    out.reserve(text.size());
    std::string line;
    auto flush = [&] {
        std::size_t e = line.size();
        while (e > 0 && (line[e - 1] == ' ' || line[e - 1] == '\t' || line[e - 1] == '\r')) --e;
        out.append(line, 0, e);
        line.clear();
    };
    for (char c : text) {
        if (c == '\n') {
            flush();
            out += '\n';
        } else {
            line += c;
        }
    }
    flush();
    return out;
}

inline std::string format_double(double v, int decimals) {
    char buf[64];
    std::snprintf(buf, sizeof(buf), "%.*f", decimals, v);
    return buf;
}

inline std::size_t word_count(std::string_view text) {
    std::size_t n = 0;
    bool in_word = false;
    for (char c : text) {
        bool space = std::isspace(static_cast<unsigned char>(c)) != 0;
        if (!space && !in_word) ++n;
        in_word = !space;
    }
    return n;
}

}  // namespace caro
