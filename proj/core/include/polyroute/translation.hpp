#pragma once

#include <atomic>
#include <memory>
#include <string>

#include "polyroute/chat_backend.hpp"
#include "polyroute/config_space.hpp"

namespace polyroute::backends {

struct TranslationJob {
    std::string text;
    LanguageTag source_lang;
    LanguageTag target_lang;

    void validate() const;  // source != target, text non-empty
};

class TranslationBackend {
public:
    virtual ~TranslationBackend() = default;
    virtual std::string translate(const TranslationJob& job) = 0;
    virtual std::string provider_id() const = 0;
    virtual long call_count() const = 0;
};

/// Reversible mock: prefixes the text with a direction tag so round trips
/// are checkable. Translating a text that already starts with the inverse
/// tag strips it instead, which makes f(g->s) . f(s->g) the identity.
class TaggingMockTranslator : public TranslationBackend {
public:
    static std::string tag(const LanguageTag& from, const LanguageTag& to);

    std::string translate(const TranslationJob& job) override;
    std::string provider_id() const override { return "mock-tagging"; }
    long call_count() const override { return calls_.load(); }

private:
    std::atomic<long> calls_{0};
};

/// Translation via a chat model: wraps the text in a translation
/// instruction and returns the completion verbatim.
class ChatTranslationBackend : public TranslationBackend {
public:
    ChatTranslationBackend(std::shared_ptr<ChatBackend> chat, std::string model_id);

    std::string translate(const TranslationJob& job) override;
    std::string provider_id() const override;
    long call_count() const override { return chat_->call_count(); }

private:
    std::shared_ptr<ChatBackend> chat_;
    std::string model_id_;
};

}  // namespace polyroute::backends
