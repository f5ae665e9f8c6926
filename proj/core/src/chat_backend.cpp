#include "polyroute/chat_backend.hpp"

#include "polyroute/response_cache.hpp"

namespace polyroute::backends {

void ChatRequest::validate() const {
    if (model_id.empty()) throw InvalidInput("chat request needs a model id");
    if (user_text.empty()) throw InvalidInput("chat request needs non-empty user text");
    if (temperature < 0.0) throw InvalidInput("temperature must be >= 0");
    if (max_tokens <= 0) throw InvalidInput("max_tokens must be positive");
}

nlohmann::json ChatRequest::canonical_payload() const {
    return {{"model", model_id},
            {"system", system_text},
            {"user", user_text},
            {"temperature", temperature},
            {"max_tokens", max_tokens}};
}

std::string EchoChatBackend::complete(const ChatRequest& req) {
    req.validate();
    calls_.fetch_add(1);
    return req.user_text;
}

void FixtureChatBackend::add_response(const ChatRequest& req, std::string response) {
    by_key_[req.canonical_payload().dump()] = std::move(response);
}

void FixtureChatBackend::add_contains_rule(std::string needle, std::string response) {
    contains_rules_.emplace_back(std::move(needle), std::move(response));
}

std::string FixtureChatBackend::complete(const ChatRequest& req) {
    req.validate();
    calls_.fetch_add(1);
    if (auto it = by_key_.find(req.canonical_payload().dump()); it != by_key_.end())
        return it->second;
    for (const auto& [needle, response] : contains_rules_)
        if (req.user_text.find(needle) != std::string::npos) return response;
    if (echo_on_miss_) return req.user_text;
    throw BackendUnavailable("no fixture response for request");
}

}  // namespace polyroute::backends
