#pragma once

#include <atomic>
#include <functional>
#include <map>
#include <memory>
#include <string>

#include <json.hpp>

#include "polyroute/errors.hpp"

namespace polyroute::backends {

struct ChatRequest {
    std::string model_id;
    std::string system_text;
    std::string user_text;
    double temperature = 0.0;
    int max_tokens = 1024;

    void validate() const;
    /// Key-stable JSON form: field order is canonical regardless of how the
    /// request was assembled.
    nlohmann::json canonical_payload() const;
};

/// Uniform chat-completion surface for answer generation, aggregation, and
/// judging. Implementations must be safe for concurrent calls.
class ChatBackend {
public:
    virtual ~ChatBackend() = default;
    virtual std::string complete(const ChatRequest& req) = 0;
    virtual std::string provider_id() const = 0;
    /// Number of times the underlying transport was actually exercised
    /// (cache hits do not count).
    virtual long call_count() const = 0;
};

/// Returns the user text unchanged. The workhorse for pipeline tests.
class EchoChatBackend : public ChatBackend {
public:
    std::string complete(const ChatRequest& req) override;
    std::string provider_id() const override { return "mock-echo"; }
    long call_count() const override { return calls_.load(); }

private:
    std::atomic<long> calls_{0};
};

/// Maps canonicalized requests to canned responses. Unknown requests either
/// echo or throw, depending on construction.
class FixtureChatBackend : public ChatBackend {
public:
    explicit FixtureChatBackend(bool echo_on_miss = false) : echo_on_miss_(echo_on_miss) {}

    void add_response(const ChatRequest& req, std::string response);
    /// Responds with `response` whenever the user text contains `needle`.
    void add_contains_rule(std::string needle, std::string response);

    std::string complete(const ChatRequest& req) override;
    std::string provider_id() const override { return "mock-fixture"; }
    long call_count() const override { return calls_.load(); }

private:
    std::map<std::string, std::string> by_key_;
    std::vector<std::pair<std::string, std::string>> contains_rules_;
    bool echo_on_miss_;
    std::atomic<long> calls_{0};
};

/// Arbitrary reply function; handy for scripted behaviors in tests.
class LambdaChatBackend : public ChatBackend {
public:
    using Fn = std::function<std::string(const ChatRequest&)>;
    LambdaChatBackend(std::string id, Fn fn) : id_(std::move(id)), fn_(std::move(fn)) {}

    std::string complete(const ChatRequest& req) override {
        calls_.fetch_add(1);
        return fn_(req);
    }
    std::string provider_id() const override { return id_; }
    long call_count() const override { return calls_.load(); }

private:
    std::string id_;
    Fn fn_;
    std::atomic<long> calls_{0};
};

}  // namespace polyroute::backends
