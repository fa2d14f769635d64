#include "storylogic/gateway.hpp"

#include <algorithm>
#include <filesystem>
#include <fstream>
#include <sstream>

#include <json.hpp>
#include <openssl/evp.h>

#include "embedded_prompts.hpp"
#include "text_util.hpp"

namespace storylogic {

namespace {

constexpr std::string_view kManifest = "MANIFEST.sha256";

constexpr std::array<std::string_view, kAllStages.size()> kStageNames{
    "action_abstract", "emotion_classify", "logic_check_plain", "logic_check_ea", "predict_ea",
    "generate_plain",  "generate_ea",      "generate_ea_pred",  "t2act2t",
};

std::string read_file(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw TemplateError("cannot read '" + path.string() + "'");
    std::ostringstream buffer;
    buffer << in.rdbuf();
    return buffer.str();
}

std::string strip_final_newline(std::string text) {
    if (!text.empty() && text.back() == '\n') text.pop_back();
    if (!text.empty() && text.back() == '\r') text.pop_back();
    return text;
}

// name -> hex digest
std::map<std::string, std::string> parse_manifest(std::string_view text) {
    std::map<std::string, std::string> out;
    std::size_t pos = 0;
    while (pos < text.size()) {
        auto eol = text.find('\n', pos);
        if (eol == std::string_view::npos) eol = text.size();
        auto line = detail::trim(text.substr(pos, eol - pos));
        pos = eol + 1;
        if (line.empty() || line.front() == '#') continue;
        const auto gap = line.find(' ');
        if (gap != 64) throw TemplateError("malformed manifest line '" + std::string(line) + "'");
        auto name = detail::trim(line.substr(gap));
        if (!name.empty() && name.front() == '*') name.remove_prefix(1);
        out[std::string(name)] = detail::lower(line.substr(0, gap));
    }
    return out;
}

} // namespace

std::string_view to_string(PromptStage stage) noexcept {
    return kStageNames[static_cast<std::size_t>(stage)];
}

PromptStage parse_stage(std::string_view name) {
    const auto key = detail::fold(name);
    for (std::size_t i = 0; i < kStageNames.size(); ++i) {
        if (key == kStageNames[i]) return kAllStages[i];
    }
    throw InvariantError("unknown prompt stage '" + std::string(name) + "'");
}

std::string_view to_string(ShotMode mode) noexcept {
    switch (mode) {
    case ShotMode::zero: return "zero";
    case ShotMode::one: return "one";
    case ShotMode::few: return "few";
    }
    return "zero";
}

ShotMode parse_shot_mode(std::string_view name) {
    const auto key = detail::fold(name);
    if (key == "zero") return ShotMode::zero;
    if (key == "one") return ShotMode::one;
    if (key == "few") return ShotMode::few;
    throw InvariantError("unknown shot mode '" + std::string(name) + "'");
}

std::string_view to_string(Role role) noexcept {
    switch (role) {
    case Role::system: return "system";
    case Role::user: return "user";
    case Role::assistant: return "assistant";
    }
    return "user";
}

void GenerationConfig::validate() const {
    if (!(temperature >= 0.0)) throw InvariantError("temperature must be >= 0");
    if (!(top_p > 0.0 && top_p <= 1.0)) throw InvariantError("top_p must lie in (0, 1]");
    if (max_tokens < 1) throw InvariantError("max_tokens must be positive");
    if (retries < 0) throw InvariantError("retries must be >= 0");
    if (timeout.count() <= 0) throw InvariantError("timeout must be positive");
}

std::string sha256_hex(std::string_view data) {
    unsigned char digest[EVP_MAX_MD_SIZE];
    unsigned int length = 0;
    if (EVP_Digest(data.data(), data.size(), digest, &length, EVP_sha256(), nullptr) != 1) {
        throw Error("SHA-256 computation failed");
    }
    static constexpr char kHex[] = "0123456789abcdef";
    std::string out;
    out.reserve(length * 2);
    for (unsigned int i = 0; i < length; ++i) {
        out.push_back(kHex[digest[i] >> 4]);
        out.push_back(kHex[digest[i] & 0xf]);
    }
    return out;
}

std::string messages_digest(const std::vector<Message>& messages) {
    nlohmann::json array = nlohmann::json::array();
    for (const auto& m : messages) {
        array.push_back({{"role", to_string(m.role)}, {"content", m.content}});
    }
    return sha256_hex(array.dump());
}

// ---------------------------------------------------------------------------

std::vector<std::string> placeholders(std::string_view text) {
    std::vector<std::string> out;
    std::size_t pos = 0;
    while ((pos = text.find("{{", pos)) != std::string_view::npos) {
        const auto close = text.find("}}", pos + 2);
        if (close == std::string_view::npos) break;
        std::string name(detail::trim(text.substr(pos + 2, close - pos - 2)));
        if (std::find(out.begin(), out.end(), name) == out.end()) out.push_back(std::move(name));
        pos = close + 2;
    }
    return out;
}

std::string render_template(std::string_view text, const Variables& variables) {
    std::string out;
    out.reserve(text.size());
    std::size_t pos = 0;
    while (true) {
        const auto open = text.find("{{", pos);
        const auto close = open == std::string_view::npos ? open : text.find("}}", open + 2);
        if (close == std::string_view::npos) {
            out.append(text.substr(pos));
            return out;
        }
        out.append(text.substr(pos, open - pos));
        const auto name = detail::trim(text.substr(open + 2, close - open - 2));
        const auto it = variables.find(name);
        if (it == variables.end()) {
            throw TemplateError("no value for placeholder '" + std::string(name) + "'");
        }
        out.append(it->second);
        pos = close + 2;
    }
}

const TemplateCatalog& TemplateCatalog::embedded() {
    static const TemplateCatalog catalog = [] {
        std::map<std::string, std::string> files;
        for (const auto& file : detail::embedded_prompt_files()) {
            files.emplace(std::string(file.name), std::string(file.contents));
        }
        return from_files(files);
    }();
    return catalog;
}

TemplateCatalog TemplateCatalog::load(const std::string& directory) {
    namespace fs = std::filesystem;
    const fs::path root(directory);
    std::map<std::string, std::string> files;
    files.emplace(std::string(kManifest), read_file(root / kManifest));
    for (auto name : kStageNames) {
        for (std::string_view suffix : {".system.txt", ".user.txt"}) {
            std::string file = std::string(name) + std::string(suffix);
            files.emplace(file, read_file(root / file));
        }
    }
    return from_files(files);
}

TemplateCatalog TemplateCatalog::from_files(const std::map<std::string, std::string>& files) {
    const auto manifest_it = files.find(std::string(kManifest));
    if (manifest_it == files.end()) throw TemplateError("template set has no MANIFEST.sha256");
    const auto manifest = parse_manifest(manifest_it->second);

    TemplateCatalog catalog;
    catalog.manifest_digest_ = sha256_hex(manifest_it->second);
    auto fetch = [&](const std::string& name) {
        const auto it = files.find(name);
        if (it == files.end()) throw TemplateError("missing template '" + name + "'");
        const auto expected = manifest.find(name);
        if (expected == manifest.end()) throw TemplateError("template '" + name + "' is not in the manifest");
        if (sha256_hex(it->second) != expected->second) {
            throw TemplateError("checksum mismatch for template '" + name + "'");
        }
        return strip_final_newline(it->second);
    };
    for (std::size_t i = 0; i < kStageNames.size(); ++i) {
        const std::string base(kStageNames[i]);
        catalog.templates_[i] = StageTemplate{fetch(base + ".system.txt"), fetch(base + ".user.txt")};
    }
    return catalog;
}

const StageTemplate& TemplateCatalog::at(PromptStage stage) const {
    return templates_[static_cast<std::size_t>(stage)];
}

// ---------------------------------------------------------------------------

ExemplarSet ExemplarSet::load(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw Error("cannot open exemplar file '" + path + "'");
    std::ostringstream buffer;
    buffer << in.rdbuf();
    return parse(buffer.str());
}

ExemplarSet ExemplarSet::parse(std::string_view text) {
    ExemplarSet set;
    std::size_t pos = 0;
    std::size_t line_no = 0;
    while (pos < text.size()) {
        auto eol = text.find('\n', pos);
        if (eol == std::string_view::npos) eol = text.size();
        const auto line = text.substr(pos, eol - pos);
        pos = eol + 1;
        ++line_no;
        if (detail::trim(line).empty()) continue;
        try {
            const auto j = nlohmann::json::parse(line);
            set.add(Exemplar{parse_stage(j.at("stage").get<std::string>()), j.at("user").get<std::string>(),
                             j.at("assistant").get<std::string>()});
        } catch (const std::exception& e) {
            throw CorpusError(line_no, std::string(line), e.what());
        }
    }
    return set;
}

std::vector<const Exemplar*> ExemplarSet::for_stage(PromptStage stage) const {
    std::vector<const Exemplar*> out;
    for (const auto& e : exemplars_) {
        if (e.stage == stage) out.push_back(&e);
    }
    return out;
}

std::vector<Message> build_prompt(const PromptRequest& request, const TemplateCatalog& catalog,
                                  const ExemplarSet& exemplars) {
    const auto& tmpl = catalog.at(request.stage);
    std::vector<Message> messages;
    messages.push_back(Message{Role::system, tmpl.system});

    if (request.shot_mode != ShotMode::zero) {
        auto shots = exemplars.for_stage(request.stage);
        const std::size_t needed = request.shot_mode == ShotMode::one ? 1 : 2;
        if (shots.size() < needed) {
            throw TemplateError(std::string(to_string(request.shot_mode)) + "-shot " +
                                std::string(to_string(request.stage)) + " needs " +
                                std::to_string(needed) + " exemplar(s), have " +
                                std::to_string(shots.size()));
        }
        if (request.shot_mode == ShotMode::one) shots.resize(1);
        for (const auto* shot : shots) {
            messages.push_back(Message{Role::user, shot->user});
            messages.push_back(Message{Role::assistant, shot->assistant});
        }
    }
    messages.push_back(Message{Role::user, render_template(tmpl.user, request.variables)});
    return messages;
}

} // namespace storylogic
