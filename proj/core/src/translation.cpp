#include "polyroute/translation.hpp"

namespace polyroute::backends {

void TranslationJob::validate() const {
    if (text.empty()) throw InvalidJob("translation text must be non-empty");
    if (source_lang.code == target_lang.code)
        throw InvalidJob("translation source and target must differ: " + source_lang.code);
}

std::string TaggingMockTranslator::tag(const LanguageTag& from, const LanguageTag& to) {
    return "⟦" + from.code + "→" + to.code + "⟧";
}

std::string TaggingMockTranslator::translate(const TranslationJob& job) {
    job.validate();
    calls_.fetch_add(1);
    // Inverse direction already applied? Strip instead of stacking tags.
    const std::string inverse = tag(job.target_lang, job.source_lang);
    if (job.text.rfind(inverse, 0) == 0) return job.text.substr(inverse.size());
    return tag(job.source_lang, job.target_lang) + job.text;
}

ChatTranslationBackend::ChatTranslationBackend(std::shared_ptr<ChatBackend> chat,
                                               std::string model_id)
    : chat_(std::move(chat)), model_id_(std::move(model_id)) {
    if (!chat_) throw InvalidInput("chat translation backend needs a chat client");
}

std::string ChatTranslationBackend::translate(const TranslationJob& job) {
    job.validate();
    ChatRequest req;
    req.model_id = model_id_;
    req.system_text =
        "You are a professional translation engine. Translate the user's text from " +
        job.source_lang.code + " to " + job.target_lang.code +
        ". Reply with the translation only, no commentary.";
    req.user_text = job.text;
    return chat_->complete(req);
}

std::string ChatTranslationBackend::provider_id() const {
    return "chat-translate:" + chat_->provider_id();
}

}  // namespace polyroute::backends
