#include "storylogic/gateway.hpp"

#include <filesystem>
#include <fstream>
#include <sstream>

#define CPPHTTPLIB_OPENSSL_SUPPORT
#include <httplib.h>
#include <json.hpp>

#include "storylogic/codec.hpp"
#include "text_util.hpp"

namespace storylogic {

using json = nlohmann::json;

HttpStatusError::HttpStatusError(int status, const std::string& body)
    : GatewayError("HTTP " + std::to_string(status) + ": " + body.substr(0, 200),
                   status == 408 || status == 429 || status >= 500),
      status_(status) {}

namespace {

class HttplibTransport : public HttpTransport {
public:
    explicit HttplibTransport(const std::string& base_url) {
        const auto scheme_end = base_url.find("://");
        if (scheme_end == std::string::npos) throw InvariantError("base URL needs a scheme: '" + base_url + "'");
        const auto path_start = base_url.find('/', scheme_end + 3);
        origin_ = base_url.substr(0, path_start);
        if (path_start != std::string::npos) prefix_ = base_url.substr(path_start);
        while (!prefix_.empty() && prefix_.back() == '/') prefix_.pop_back();
    }

    HttpResponse post_json(const std::string& path, const std::string& body, const std::string& bearer,
                           std::chrono::milliseconds timeout) override {
        httplib::Client client(origin_);
        if (!client.is_valid()) throw TransportError("unsupported base URL '" + origin_ + "'");
        client.set_connection_timeout(timeout);
        client.set_read_timeout(timeout);
        client.set_write_timeout(timeout);
        httplib::Headers headers;
        if (!bearer.empty()) headers.emplace("Authorization", "Bearer " + bearer);

        auto result = client.Post(prefix_ + path, headers, body, "application/json");
        if (!result) {
            const auto error = result.error();
            const std::string what = origin_ + prefix_ + path + ": " + httplib::to_string(error);
            if (error == httplib::Error::ConnectionTimeout) throw TimeoutError(what);
            throw TransportError(what);
        }
        return HttpResponse{result->status, result->body};
    }

private:
    std::string origin_;
    std::string prefix_;
};

std::string read_text(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw Error("cannot read '" + path.string() + "'");
    std::ostringstream buffer;
    buffer << in.rdbuf();
    return buffer.str();
}

const std::string& last_user_message(const std::vector<Message>& messages) {
    static const std::string empty;
    for (auto it = messages.rbegin(); it != messages.rend(); ++it) {
        if (it->role == Role::user) return it->content;
    }
    return empty;
}

bool matches(const MockRule& rule, const ChatRequest& request, const std::string& digest) {
    if (rule.stage && *rule.stage != request.stage) return false;
    if (rule.digest && *rule.digest != digest) return false;
    const auto& user = last_user_message(request.messages);
    for (const auto& needle : rule.contains) {
        if (user.find(needle) == std::string::npos) return false;
    }
    return true;
}

// ---------------------------------------------------------------------------
// Synthetic answers

constexpr std::array<std::string_view, 12> kVerbs{
    "Walked", "Bought", "Called", "Found", "Lost", "Gave", "Saw", "Made", "Took", "Asked", "Helped", "Left",
};
constexpr std::array<std::string_view, 12> kNouns{
    "the store", "a friend", "the car", "some money", "a letter", "the dog",
    "a cake",    "the park", "her mom", "a ticket",   "the game", "the door",
};
constexpr std::array<std::string_view, 10> kWords{
    "the", "day", "was", "long", "and", "everyone", "felt", "it", "later", "again",
};

template <class Rng>
std::size_t pick(Rng& rng, std::size_t n) {
    return static_cast<std::size_t>(rng() % n);
}

template <class Rng>
ActionRecord synthetic_action(Rng& rng) {
    switch (pick(rng, 4)) {
    case 0: return ActionRecord::none();
    case 1: return ActionRecord::make(std::string(kVerbs[pick(rng, kVerbs.size())]));
    case 2:
        return ActionRecord::make(std::string(kVerbs[pick(rng, kVerbs.size())]),
                                  std::string(kNouns[pick(rng, kNouns.size())]));
    default:
        return ActionRecord::make(std::string(kVerbs[pick(rng, kVerbs.size())]),
                                  std::string(kNouns[pick(rng, kNouns.size())]),
                                  std::string(kNouns[pick(rng, kNouns.size())]));
    }
}

template <class Rng>
EmotionAnnotation synthetic_emotion(Rng& rng) {
    const auto slot = pick(rng, kLabelCount + 2);
    if (slot >= kWheelSize) return EmotionAnnotation::unaffected();
    return EmotionAnnotation::make(true, kAllLabels[slot]);
}

template <class Rng>
std::string synthetic_sentence(Rng& rng, const std::vector<std::string>& characters) {
    std::string out = characters.empty() ? std::string("Someone") : characters[pick(rng, characters.size())];
    out += ' ';
    out += detail::lower(kVerbs[pick(rng, kVerbs.size())]);
    out += ' ';
    out += kNouns[pick(rng, kNouns.size())];
    const auto extra = pick(rng, 4);
    for (std::size_t i = 0; i < extra; ++i) {
        out += ' ';
        out += kWords[pick(rng, kWords.size())];
    }
    out += '.';
    return out;
}

} // namespace

std::unique_ptr<HttpTransport> make_http_transport(const std::string& base_url) {
    return std::make_unique<HttplibTransport>(base_url);
}

OpenAICompatibleBackend::OpenAICompatibleBackend(std::shared_ptr<HttpTransport> transport, std::string model,
                                                 std::string api_key)
    : transport_(std::move(transport)), model_(std::move(model)), api_key_(std::move(api_key)) {}

std::string OpenAICompatibleBackend::request_body(const ChatRequest& request) const {
    json messages = json::array();
    for (const auto& m : request.messages) {
        messages.push_back({{"role", to_string(m.role)}, {"content", m.content}});
    }
    json body{
        {"model", model_},
        {"messages", std::move(messages)},
        {"temperature", request.config.temperature},
        {"top_p", request.config.top_p},
        {"max_tokens", request.config.max_tokens},
    };
    if (request.config.seed) body["seed"] = *request.config.seed;
    return body.dump();
}

Completion OpenAICompatibleBackend::send(const ChatRequest& request) {
    const auto start = std::chrono::steady_clock::now();
    const auto response = transport_->post_json("/chat/completions", request_body(request), api_key_,
                                                request.config.timeout);
    const auto elapsed = std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - start);

    if (response.status == 401 || response.status == 403) {
        throw AuthError("authentication rejected (HTTP " + std::to_string(response.status) + ")");
    }
    if (response.status < 200 || response.status >= 300) throw HttpStatusError(response.status, response.body);

    Completion completion;
    completion.usage.latency_ms = elapsed.count();
    try {
        const auto body = json::parse(response.body);
        const auto& content = body.at("choices").at(0).at("message").at("content");
        if (!content.is_string()) throw MalformedResponseError("message content is not a string");
        completion.text = content.get<std::string>();
        if (auto it = body.find("usage"); it != body.end() && it->is_object()) {
            completion.usage.prompt_tokens = it->value("prompt_tokens", std::int64_t{0});
            completion.usage.completion_tokens = it->value("completion_tokens", std::int64_t{0});
        }
    } catch (const MalformedResponseError&) {
        throw;
    } catch (const std::exception& e) {
        throw MalformedResponseError(std::string("malformed response body: ") + e.what());
    }
    return completion;
}

// ---------------------------------------------------------------------------

MockBackend::MockBackend(std::vector<MockRule> rules, MockFallback fallback)
    : rules_(std::move(rules)), fallback_(fallback) {}

std::shared_ptr<MockBackend> MockBackend::load(const std::string& directory) {
    namespace fs = std::filesystem;
    const fs::path root(directory);
    if (!fs::is_directory(root)) throw Error("mock fixture directory '" + directory + "' does not exist");

    std::vector<MockRule> rules;
    if (fs::exists(root / "responses.jsonl")) {
        std::istringstream in(read_text(root / "responses.jsonl"));
        std::string line;
        std::size_t line_no = 0;
        while (std::getline(in, line)) {
            ++line_no;
            if (detail::trim(line).empty()) continue;
            try {
                const auto j = json::parse(line);
                MockRule rule;
                if (j.contains("stage")) rule.stage = parse_stage(j["stage"].get<std::string>());
                if (j.contains("digest")) rule.digest = j["digest"].get<std::string>();
                if (j.contains("contains")) {
                    const auto& c = j["contains"];
                    if (c.is_string()) rule.contains.push_back(c.get<std::string>());
                    else rule.contains = c.get<std::vector<std::string>>();
                }
                rule.response = j.at("response").get<std::string>();
                rules.push_back(std::move(rule));
            } catch (const std::exception& e) {
                throw CorpusError(line_no, line, e.what());
            }
        }
    }

    MockFallback fallback = MockFallback::error;
    if (fs::exists(root / "mock.json")) {
        const auto j = json::parse(read_text(root / "mock.json"));
        const auto mode = j.value("fallback", std::string("error"));
        if (mode == "synthetic") fallback = MockFallback::synthetic;
        else if (mode != "error") throw InvariantError("mock fallback must be 'error' or 'synthetic'");
    }

    auto backend = std::make_shared<MockBackend>(std::move(rules), fallback);
    backend->source_ = directory;
    return backend;
}

Completion MockBackend::send(const ChatRequest& request) {
    const auto digest = messages_digest(request.messages);
    {
        std::lock_guard lock(mutex_);
        calls_.push_back(Call{request.stage, digest});
    }
    for (const auto& rule : rules_) {
        if (matches(rule, request, digest)) return Completion{rule.response, {}};
    }
    if (fallback_ == MockFallback::synthetic) return Completion{synthetic_response(request, digest), {}};
    throw MockMissError("no mock response for " + std::string(to_string(request.stage)) + " request " + digest);
}

std::vector<MockBackend::Call> MockBackend::calls() const {
    std::lock_guard lock(mutex_);
    return calls_;
}

std::size_t MockBackend::call_count() const {
    std::lock_guard lock(mutex_);
    return calls_.size();
}

std::string synthetic_response(const ChatRequest& request, const std::string& digest) {
    std::uint64_t seed = 0;
    for (std::size_t i = 0; i < 16 && i < digest.size(); ++i) {
        seed = (seed << 4) | static_cast<std::uint64_t>(std::stoi(std::string(1, digest[i]), nullptr, 16));
    }
    std::mt19937_64 rng(seed);
    const auto& characters = request.context.characters;

    auto actions = [&] {
        std::vector<ActionRecord> records;
        for (std::size_t c = 0; c < characters.size(); ++c) records.push_back(synthetic_action(rng));
        return serialize_action_block(characters, records);
    };
    auto emotions = [&] {
        std::vector<EmotionAnnotation> annotations;
        for (std::size_t c = 0; c < characters.size(); ++c) annotations.push_back(synthetic_emotion(rng));
        return serialize_emotion_block(characters, annotations);
    };

    switch (request.stage) {
    case PromptStage::action_abstract: return actions();
    case PromptStage::emotion_classify: return emotions();
    case PromptStage::logic_check_plain:
    case PromptStage::logic_check_ea: {
        const auto m = request.context.sentence_count;
        if (m < 2 || pick(rng, 5) == 0) return serialize_verdict(GapVerdict::complete());
        return serialize_verdict(GapVerdict::insert_before(static_cast<int>(2 + pick(rng, m - 1))));
    }
    case PromptStage::predict_ea: {
        auto a = actions();
        return "Actions: " + a + "\nEmotions: " + emotions();
    }
    case PromptStage::generate_plain:
    case PromptStage::generate_ea:
    case PromptStage::generate_ea_pred:
    case PromptStage::t2act2t: return synthetic_sentence(rng, characters);
    }
    return {};
}

std::shared_ptr<ChatBackend> make_backend(const std::string& spec, const BackendSettings& settings) {
    if (spec.rfind("mock:", 0) == 0) return MockBackend::load(spec.substr(5));
    std::string base;
    if (spec.rfind("http://", 0) == 0 || spec.rfind("https://", 0) == 0) base = spec;
    else if (spec == "openai" || spec.empty()) base = settings.api_base;
    else throw InvariantError("unknown backend '" + spec + "'");
    if (base.empty()) throw InvariantError("no API base URL configured");
    return std::make_shared<OpenAICompatibleBackend>(std::shared_ptr<HttpTransport>(make_http_transport(base)),
                                                     settings.model, settings.api_key);
}

} // namespace storylogic
