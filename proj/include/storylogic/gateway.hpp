#pragma once

// Prompt assembly and chat-completion transport.

#include <array>
#include <chrono>
#include <condition_variable>
#include <cstddef>
#include <cstdint>
#include <functional>
#include <map>
#include <memory>
#include <mutex>
#include <optional>
#include <random>
#include <string>
#include <string_view>
#include <vector>

#include "storylogic/error.hpp"

namespace storylogic {

enum class PromptStage {
    action_abstract,
    emotion_classify,
    logic_check_plain,
    logic_check_ea,
    predict_ea,
    generate_plain,
    generate_ea,
    generate_ea_pred,
    t2act2t,
};

inline constexpr std::array<PromptStage, 9> kAllStages{
    PromptStage::action_abstract, PromptStage::emotion_classify, PromptStage::logic_check_plain,
    PromptStage::logic_check_ea,  PromptStage::predict_ea,       PromptStage::generate_plain,
    PromptStage::generate_ea,     PromptStage::generate_ea_pred, PromptStage::t2act2t,
};

std::string_view to_string(PromptStage stage) noexcept;
// Accepts the snake-case names above; throws InvariantError otherwise.
PromptStage parse_stage(std::string_view name);

enum class ShotMode { zero, one, few };

std::string_view to_string(ShotMode mode) noexcept;
ShotMode parse_shot_mode(std::string_view name);

enum class Role { system, user, assistant };

std::string_view to_string(Role role) noexcept;

struct Message {
    Role role;
    std::string content;

    friend bool operator==(const Message&, const Message&) = default;
};

using Variables = std::map<std::string, std::string, std::less<>>;

struct PromptRequest {
    PromptStage stage = PromptStage::action_abstract;
    ShotMode shot_mode = ShotMode::zero;
    Variables variables;
};

struct GenerationConfig {
    double temperature = 0.1;
    double top_p = 0.4;
    int max_tokens = 256;
    int retries = 2;
    std::chrono::milliseconds timeout{60000};
    std::optional<std::int64_t> seed;

    // Throws InvariantError.
    void validate() const;
};

// Lower-case hex SHA-256.
std::string sha256_hex(std::string_view data);

// Digest of the role/content sequence; the key the mock backend matches on.
std::string messages_digest(const std::vector<Message>& messages);

// ---------------------------------------------------------------------------
// Templates

struct StageTemplate {
    std::string system;
    std::string user;
};

// Names of `{{name}}` placeholders in order of first appearance.
std::vector<std::string> placeholders(std::string_view text);

// Substitutes every placeholder. Throws TemplateError naming the first
// placeholder with no variable.
std::string render_template(std::string_view text, const Variables& variables);

// One system and one user template per stage, verified against a
// `sha256sum`-format MANIFEST.sha256 on load.
class TemplateCatalog {
public:
    // Compiled-in copy of assets/prompts.
    static const TemplateCatalog& embedded();

    static TemplateCatalog load(const std::string& directory);

    // `files` maps file name to contents and must include MANIFEST.sha256.
    static TemplateCatalog from_files(const std::map<std::string, std::string>& files);

    const StageTemplate& at(PromptStage stage) const;
    const std::string& manifest_digest() const noexcept { return manifest_digest_; }

private:
    std::array<StageTemplate, kAllStages.size()> templates_;
    std::string manifest_digest_;
};

struct Exemplar {
    PromptStage stage;
    std::string user;
    std::string assistant;
};

// Demonstrations for one- and few-shot prompting, read from JSONL records
// {"stage", "user", "assistant"}.
class ExemplarSet {
public:
    static ExemplarSet load(const std::string& path);
    static ExemplarSet parse(std::string_view text);

    void add(Exemplar exemplar) { exemplars_.push_back(std::move(exemplar)); }
    std::vector<const Exemplar*> for_stage(PromptStage stage) const;
    std::size_t size() const noexcept { return exemplars_.size(); }

private:
    std::vector<Exemplar> exemplars_;
};

// System template, then exemplar user/assistant pairs (first one for
// one-shot, all for few-shot), then the rendered user template.
std::vector<Message> build_prompt(const PromptRequest& request, const TemplateCatalog& catalog,
                                  const ExemplarSet& exemplars = {});

// ---------------------------------------------------------------------------
// Backends

class GatewayError : public Error {
public:
    GatewayError(const std::string& what, bool retryable) : Error(what), retryable_(retryable) {}
    bool retryable() const noexcept { return retryable_; }

private:
    bool retryable_;
};

class TransportError : public GatewayError {
public:
    explicit TransportError(const std::string& what) : GatewayError(what, true) {}
};

class TimeoutError : public GatewayError {
public:
    explicit TimeoutError(const std::string& what) : GatewayError(what, true) {}
};

class AuthError : public GatewayError {
public:
    explicit AuthError(const std::string& what) : GatewayError(what, false) {}
};

class HttpStatusError : public GatewayError {
public:
    HttpStatusError(int status, const std::string& body);
    int status() const noexcept { return status_; }

private:
    int status_;
};

class MalformedResponseError : public GatewayError {
public:
    explicit MalformedResponseError(const std::string& what) : GatewayError(what, false) {}
};

// Mock fixture has no answer for a request.
class MockMissError : public GatewayError {
public:
    explicit MockMissError(const std::string& what) : GatewayError(what, false) {}
};

struct Usage {
    double latency_ms = 0.0;
    std::int64_t prompt_tokens = 0;
    std::int64_t completion_tokens = 0;
    int attempts = 1;

    int retries() const noexcept { return attempts - 1; }
};

struct Completion {
    std::string text;
    Usage usage;
};

// Story facts the synthetic mock uses to shape well-formed answers.
struct RequestContext {
    std::vector<std::string> characters;
    std::size_t sentence_count = 0;
};

struct ChatRequest {
    PromptStage stage = PromptStage::action_abstract;
    std::vector<Message> messages;
    GenerationConfig config;
    RequestContext context;
};

// One attempt per call; retries live in Gateway.
class ChatBackend {
public:
    virtual ~ChatBackend() = default;
    virtual Completion send(const ChatRequest& request) = 0;
    virtual std::string describe() const = 0;
};

struct HttpResponse {
    int status = 0;
    std::string body;
};

class HttpTransport {
public:
    virtual ~HttpTransport() = default;
    // Throws TransportError or TimeoutError when no response arrives.
    virtual HttpResponse post_json(const std::string& path, const std::string& body,
                                   const std::string& bearer, std::chrono::milliseconds timeout) = 0;
};

// cpp-httplib client for `http://` and `https://` base URLs.
std::unique_ptr<HttpTransport> make_http_transport(const std::string& base_url);

// POSTs `{base}/chat/completions` in the common chat-completions format.
class OpenAICompatibleBackend : public ChatBackend {
public:
    OpenAICompatibleBackend(std::shared_ptr<HttpTransport> transport, std::string model,
                            std::string api_key = {});

    Completion send(const ChatRequest& request) override;
    std::string describe() const override { return "chat-completions model=" + model_; }

    // Request body for `request`, exposed for inspection.
    std::string request_body(const ChatRequest& request) const;

private:
    std::shared_ptr<HttpTransport> transport_;
    std::string model_;
    std::string api_key_;
};

struct MockRule {
    std::optional<PromptStage> stage;
    std::optional<std::string> digest;
    std::vector<std::string> contains;  // all must occur in the last user message
    std::string response;
};

enum class MockFallback { error, synthetic };

// Canned responses from `<dir>/responses.jsonl`, first matching rule in file
// order; `<dir>/mock.json` may set {"fallback": "error" | "synthetic"}.
// Synthetic answers are well-formed for the stage and seeded by the message
// digest. Reported latency is always zero.
class MockBackend : public ChatBackend {
public:
    struct Call {
        PromptStage stage;
        std::string digest;
    };

    MockBackend(std::vector<MockRule> rules, MockFallback fallback);
    static std::shared_ptr<MockBackend> load(const std::string& directory);

    Completion send(const ChatRequest& request) override;
    std::string describe() const override { return "mock:" + source_; }

    std::vector<Call> calls() const;
    std::size_t call_count() const;

private:
    std::vector<MockRule> rules_;
    MockFallback fallback_;
    std::string source_ = "<memory>";
    mutable std::mutex mutex_;
    std::vector<Call> calls_;
};

std::string synthetic_response(const ChatRequest& request, const std::string& digest);

struct BackendSettings {
    std::string model = "default";
    std::string api_base;
    std::string api_key;
};

// `mock:<dir>`, an http(s) base URL, or `openai` (uses settings.api_base).
std::shared_ptr<ChatBackend> make_backend(const std::string& spec, const BackendSettings& settings);

// ---------------------------------------------------------------------------
// Gateway

struct BackoffPolicy {
    std::chrono::milliseconds base{500};
    double factor = 2.0;
    double jitter = 0.2;

    // Delay before retry number `retry` (1-based).
    std::chrono::milliseconds delay(int retry, double unit_random) const;
};

struct GatewayOptions {
    std::size_t concurrency = 4;
    std::chrono::milliseconds min_interval{0};
    BackoffPolicy backoff;
    std::uint64_t seed = 0;
    std::function<void(std::chrono::milliseconds)> sleeper;  // defaults to sleep_for
};

class Gateway {
public:
    Gateway(std::shared_ptr<ChatBackend> backend, const TemplateCatalog& catalog,
            ExemplarSet exemplars = {}, GatewayOptions options = {});

    // Retries retryable failures up to config.retries times with backoff.
    Completion complete(const ChatRequest& request);

    // build_prompt followed by complete.
    Completion run(const PromptRequest& prompt, const GenerationConfig& config,
                   RequestContext context = {});

    std::vector<Message> prompt(const PromptRequest& prompt) const;

    const TemplateCatalog& catalog() const noexcept { return catalog_; }
    ChatBackend& backend() noexcept { return *backend_; }

private:
    void acquire();
    void release();
    void pace();
    void sleep(std::chrono::milliseconds duration);

    std::shared_ptr<ChatBackend> backend_;
    TemplateCatalog catalog_;
    ExemplarSet exemplars_;
    GatewayOptions options_;

    std::mutex slot_mutex_;
    std::condition_variable slot_cv_;
    std::size_t in_flight_ = 0;

    std::mutex pace_mutex_;
    std::chrono::steady_clock::time_point next_start_{};

    std::mutex rng_mutex_;
    std::mt19937_64 rng_;
};

} // namespace storylogic
