#include "storylogic/codec.hpp"

#include <charconv>
#include <optional>
#include <regex>

#include "text_util.hpp"

namespace storylogic {

namespace {

struct Tag {
    std::size_t character;
    std::size_t begin;        // '<' of the opening tag
    std::size_t end;          // one past the closing tag
    std::size_t inner_begin;
    std::string_view inner;
    bool terminated;
};

std::vector<std::string> folded_names(std::span<const std::string> characters) {
    std::vector<std::string> out;
    out.reserve(characters.size());
    for (const auto& c : characters) out.push_back(detail::fold(c));
    return out;
}

// Character whose folded name is the whole tag head, or its prefix followed by
// attributes. Longest name wins so "Lucy's mom" beats "Lucy".
std::optional<std::size_t> match_head(std::string_view head, const std::vector<std::string>& names) {
    const std::string folded = detail::fold(head);
    std::optional<std::size_t> best;
    for (std::size_t i = 0; i < names.size(); ++i) {
        const auto& name = names[i];
        const bool exact = folded == name;
        const bool with_attrs = folded.size() > name.size() && folded.compare(0, name.size(), name) == 0 &&
                                folded[name.size()] == ' ';
        if ((exact || with_attrs) && (!best || names[*best].size() < name.size())) best = i;
    }
    return best;
}

enum class Bracket { other, open_known, close_match };

// Classifies the markup starting at text[pos] == '<' relative to character
// `who`; `end` receives one past its '>'.
Bracket classify_bracket(std::string_view text, std::size_t pos, std::size_t who,
                         const std::vector<std::string>& names, std::size_t& end) {
    const auto gt = text.find('>', pos + 1);
    if (gt == std::string_view::npos) return Bracket::other;
    std::string_view head = detail::trim(text.substr(pos + 1, gt - pos - 1));
    end = gt + 1;
    if (!head.empty() && head.front() == '/') {
        head.remove_prefix(1);
        return detail::fold(head) == names[who] ? Bracket::close_match : Bracket::other;
    }
    return match_head(head, names) ? Bracket::open_known : Bracket::other;
}

std::vector<Tag> scan_tags(std::string_view text, const std::vector<std::string>& names) {
    std::vector<Tag> tags;
    std::size_t pos = 0;
    while ((pos = text.find('<', pos)) != std::string_view::npos) {
        const auto gt = text.find('>', pos + 1);
        if (gt == std::string_view::npos) break;
        const std::string_view head = detail::trim(text.substr(pos + 1, gt - pos - 1));
        if (head.empty() || head.front() == '/' || head.find('\n') != std::string_view::npos) {
            ++pos;
            continue;
        }
        const auto who = match_head(head, names);
        if (!who) {
            ++pos;
            continue;
        }
        const std::size_t inner_begin = gt + 1;
        std::size_t cursor = inner_begin;
        std::optional<Tag> tag;
        while ((cursor = text.find('<', cursor)) != std::string_view::npos) {
            std::size_t bracket_end = cursor + 1;
            const auto kind = classify_bracket(text, cursor, *who, names, bracket_end);
            if (kind == Bracket::close_match) {
                tag = Tag{*who, pos, bracket_end, inner_begin,
                          text.substr(inner_begin, cursor - inner_begin), true};
                break;
            }
            if (kind == Bracket::open_known) break;
            ++cursor;
        }
        if (!tag) {
            std::size_t stop = text.find('\n', inner_begin);
            if (cursor != std::string_view::npos && (stop == std::string_view::npos || cursor < stop)) {
                stop = cursor;
            }
            if (stop == std::string_view::npos) stop = text.size();
            tag = Tag{*who, pos, stop, inner_begin, text.substr(inner_begin, stop - inner_begin), false};
        }
        tags.push_back(*tag);
        pos = std::max(tag->end, pos + 1);
    }
    return tags;
}

// `Name: inner` lines, used only when no tag is present at all.
std::vector<Tag> scan_fallback_lines(std::string_view text, const std::vector<std::string>& names) {
    std::vector<Tag> tags;
    std::size_t line_begin = 0;
    while (line_begin <= text.size()) {
        auto line_end = text.find('\n', line_begin);
        if (line_end == std::string_view::npos) line_end = text.size();
        const std::string_view line = text.substr(line_begin, line_end - line_begin);
        const auto colon = line.find(':');
        if (colon != std::string_view::npos) {
            std::string_view head = detail::trim(line.substr(0, colon));
            while (!head.empty() && (head.front() == '-' || head.front() == '*')) head.remove_prefix(1);
            const std::string folded = detail::fold(head);
            for (std::size_t i = 0; i < names.size(); ++i) {
                if (folded == names[i]) {
                    const std::size_t inner_begin = line_begin + colon + 1;
                    tags.push_back(Tag{i, line_begin, line_end, inner_begin,
                                       text.substr(inner_begin, line_end - inner_begin), true});
                    break;
                }
            }
        }
        if (line_end == text.size()) break;
        line_begin = line_end + 1;
    }
    return tags;
}

// Tags for the block, switching to the fallback form when necessary.
std::vector<Tag> locate(std::string_view text, std::span<const std::string> characters,
                        ParseDiagnostics& diagnostics, const char* what) {
    if (characters.empty()) throw InvariantError("character list must not be empty");
    const auto names = folded_names(characters);
    auto tags = scan_tags(text, names);
    if (tags.empty()) {
        tags = scan_fallback_lines(text, names);
        if (tags.empty()) {
            throw UnparseableError(std::string("no ") + what + " tag for any character", std::string(text));
        }
        diagnostics.recover(WarningKind::fallback_format, 0, text.size(),
                            "no tags found; read `Name: ...` lines");
    }
    for (const auto& tag : tags) {
        if (!tag.terminated) {
            diagnostics.recover(WarningKind::unterminated_tag, tag.begin, tag.end,
                                "tag for '" + characters[tag.character] + "' is not closed");
        }
    }
    return tags;
}

template <class T, class Parse>
std::vector<T> assign(std::string_view text, std::span<const std::string> characters,
                      const std::vector<Tag>& tags, ParseDiagnostics& diagnostics,
                      const T& missing, Parse parse) {
    std::vector<std::optional<T>> slots(characters.size());
    for (const auto& tag : tags) {
        auto& slot = slots[tag.character];
        if (slot) {
            diagnostics.warn(WarningKind::duplicate_tag, tag.begin, tag.end,
                             "repeated tag for '" + characters[tag.character] + "' ignored");
            continue;
        }
        slot = parse(tag.inner, diagnostics, tag.inner_begin);
    }
    std::vector<T> out;
    out.reserve(slots.size());
    for (std::size_t i = 0; i < slots.size(); ++i) {
        if (!slots[i]) {
            diagnostics.warn(WarningKind::missing_tag, 0, text.size(),
                             "no tag for '" + characters[i] + "'");
        }
        out.push_back(slots[i].value_or(missing));
    }
    return out;
}

bool balanced(std::string_view s) {
    int depth = 0;
    for (char c : s) {
        if (c == '(') ++depth;
        if (c == ')' && --depth < 0) return false;
    }
    return depth == 0;
}

std::size_t last_top_level_comma(std::string_view s) {
    int depth = 0;
    std::size_t found = std::string_view::npos;
    for (std::size_t i = 0; i < s.size(); ++i) {
        if (s[i] == '(') ++depth;
        else if (s[i] == ')') --depth;
        else if (s[i] == ',' && depth == 0) found = i;
    }
    return found;
}

std::optional<std::string> nonempty(std::string_view s) {
    s = detail::trim(s);
    if (s.empty()) return std::nullopt;
    return std::string(s);
}

std::string_view strip_sentence_period(std::string_view s, ParseDiagnostics& diagnostics,
                                       std::size_t offset) {
    if (!s.empty() && s.back() == '.') {
        diagnostics.recover(WarningKind::trailing_text, offset + s.size() - 1, offset + s.size(),
                            "trailing '.' ignored");
        s.remove_suffix(1);
        s = detail::trim(s);
    }
    return s;
}

} // namespace

std::string_view to_string(WarningKind kind) noexcept {
    switch (kind) {
        case WarningKind::missing_tag: return "missing_tag";
        case WarningKind::duplicate_tag: return "duplicate_tag";
        case WarningKind::unterminated_tag: return "unterminated_tag";
        case WarningKind::trailing_text: return "trailing_text";
        case WarningKind::unbalanced_parentheses: return "unbalanced_parentheses";
        case WarningKind::empty_verb: return "empty_verb";
        case WarningKind::invalid_action: return "invalid_action";
        case WarningKind::coerced_emotion: return "coerced_emotion";
        case WarningKind::bare_label: return "bare_label";
        case WarningKind::fallback_format: return "fallback_format";
    }
    return "unknown";
}

void ParseDiagnostics::warn(WarningKind kind, std::size_t begin, std::size_t end, std::string message) {
    warnings.push_back(ParseWarning{kind, begin, end, std::move(message)});
}

void ParseDiagnostics::recover(WarningKind kind, std::size_t begin, std::size_t end, std::string message) {
    warn(kind, begin, end, std::move(message));
    recovered = true;
}

void ParseDiagnostics::merge(const ParseDiagnostics& other) {
    warnings.insert(warnings.end(), other.warnings.begin(), other.warnings.end());
    recovered = recovered || other.recovered;
}

ActionRecord parse_action_inner(std::string_view inner, ParseDiagnostics& diagnostics,
                                std::size_t offset) {
    std::string_view text = detail::trim(inner);
    const auto first = inner.find_first_not_of(" \t\r\n");
    if (first != std::string_view::npos) offset += first;
    const std::size_t end = offset + text.size();

    if (text.empty()) {
        diagnostics.warn(WarningKind::empty_verb, offset, end, "empty action; read as None");
        return ActionRecord::none();
    }
    if (detail::iequals(text, "none") || detail::iequals(text, "none.")) return ActionRecord::none();

    const auto open = text.find('(');
    if (open == std::string_view::npos) {
        try {
            return ActionRecord::make(std::string(text));
        } catch (const InvariantError& e) {
            diagnostics.recover(WarningKind::invalid_action, offset, end, e.what());
            return ActionRecord::none();
        }
    }

    const std::string verb(detail::trim(text.substr(0, open)));
    if (verb.empty()) {
        diagnostics.warn(WarningKind::empty_verb, offset, end, "action has no verb; read as None");
        return ActionRecord::none();
    }

    std::string_view interior;
    const auto close = text.rfind(')');
    if (close == std::string_view::npos || close < open) {
        interior = text.substr(open + 1);
        diagnostics.recover(WarningKind::unbalanced_parentheses, offset + open, end,
                            "argument list is not closed");
    } else {
        interior = text.substr(open + 1, close - open - 1);
        const auto trailing = detail::trim(text.substr(close + 1));
        if (!trailing.empty()) {
            diagnostics.recover(WarningKind::trailing_text, offset + close + 1, end,
                                "text after the argument list ignored");
        }
    }

    std::optional<std::string> target;
    std::optional<std::string> object;
    if (!balanced(interior)) {
        target = nonempty(interior);
        if (close != std::string_view::npos && close > open) {
            diagnostics.warn(WarningKind::unbalanced_parentheses, offset + open, end,
                             "unbalanced arguments kept whole as target");
        }
    } else if (const auto comma = last_top_level_comma(interior); comma != std::string_view::npos) {
        target = nonempty(interior.substr(0, comma));
        object = nonempty(interior.substr(comma + 1));
        if (!target && object) {
            diagnostics.recover(WarningKind::invalid_action, offset + open, end,
                                "empty target; object promoted to target");
            target = std::move(object);
            object.reset();
        }
    } else {
        target = nonempty(interior);
    }

    try {
        return ActionRecord::make(verb, std::move(target), std::move(object));
    } catch (const InvariantError& e) {
        diagnostics.recover(WarningKind::invalid_action, offset, end, e.what());
    }
    try {
        return ActionRecord::make(verb);
    } catch (const InvariantError& e) {
        diagnostics.recover(WarningKind::invalid_action, offset, end, e.what());
        return ActionRecord::none();
    }
}

EmotionAnnotation parse_emotion_inner(std::string_view inner, ParseDiagnostics& diagnostics,
                                      std::size_t offset) {
    std::string_view text = detail::trim(inner);
    const auto first = inner.find_first_not_of(" \t\r\n");
    if (first != std::string_view::npos) offset += first;
    const std::size_t end = offset + text.size();
    text = strip_sentence_period(text, diagnostics, offset);

    if (text.empty()) throw UnknownLabelError("");

    const bool parenthesized = text.size() >= 2 && text.front() == '(' && text.back() == ')';
    std::string_view body = parenthesized ? text.substr(1, text.size() - 2) : text;
    const auto comma = body.find(',');

    if (comma == std::string_view::npos) {
        const EmotionLabel label = parse_label(body);
        if (label == EmotionLabel::none) return EmotionAnnotation::unaffected();
        diagnostics.recover(WarningKind::bare_label, offset, end,
                            "bare label read as affected");
        return {true, label};
    }
    if (!parenthesized) {
        diagnostics.recover(WarningKind::bare_label, offset, end, "pair without parentheses");
    }

    const std::string_view flag = detail::trim(body.substr(0, comma));
    const std::string_view label_token = body.substr(comma + 1);
    bool affected;
    if (detail::iequals(flag, "true") || detail::iequals(flag, "yes")) {
        affected = true;
    } else if (detail::iequals(flag, "false") || detail::iequals(flag, "no")) {
        affected = false;
    } else {
        throw UnparseableError("affected flag '" + std::string(flag) + "' is not a boolean",
                               std::string(inner));
    }
    const EmotionLabel label = parse_label(label_token);
    if (!affected && label != EmotionLabel::none) {
        diagnostics.recover(WarningKind::coerced_emotion, offset, end,
                            "unaffected character with emotion '" + std::string(to_string(label)) +
                                "' coerced to none");
        return EmotionAnnotation::unaffected();
    }
    return {affected, label};
}

ActionBlock parse_action_block(std::string_view text, std::span<const std::string> characters) {
    ActionBlock block;
    const auto tags = locate(text, characters, block.diagnostics, "action");
    block.records = assign<ActionRecord>(text, characters, tags, block.diagnostics,
                                         ActionRecord::none(), parse_action_inner);
    return block;
}

EmotionBlock parse_emotion_block(std::string_view text, std::span<const std::string> characters) {
    EmotionBlock block;
    const auto tags = locate(text, characters, block.diagnostics, "emotion");
    block.annotations = assign<EmotionAnnotation>(text, characters, tags, block.diagnostics,
                                                  EmotionAnnotation::unaffected(),
                                                  parse_emotion_inner);
    return block;
}

std::string serialize_action(std::string_view actor, const ActionRecord& record) {
    std::string out;
    out.reserve(actor.size() * 2 + 16);
    out += '<';
    out += actor;
    out += '>';
    out += record.inner_text();
    out += "</";
    out += actor;
    out += '>';
    return out;
}

std::string serialize_emotion(std::string_view actor, const EmotionAnnotation& annotation) {
    std::string out;
    out += '<';
    out += actor;
    out += '>';
    out += annotation.inner_text();
    out += "</";
    out += actor;
    out += '>';
    return out;
}

std::string serialize_action_block(std::span<const std::string> characters,
                                   std::span<const ActionRecord> records) {
    if (characters.size() != records.size()) throw InvariantError("action block size mismatch");
    std::string out;
    for (std::size_t i = 0; i < characters.size(); ++i) {
        if (i) out += ' ';
        out += serialize_action(characters[i], records[i]);
    }
    return out;
}

std::string serialize_emotion_block(std::span<const std::string> characters,
                                    std::span<const EmotionAnnotation> annotations) {
    if (characters.size() != annotations.size()) throw InvariantError("emotion block size mismatch");
    std::string out;
    for (std::size_t i = 0; i < characters.size(); ++i) {
        if (i) out += ' ';
        out += serialize_emotion(characters[i], annotations[i]);
    }
    return out;
}

GapVerdict parse_index_verdict(std::string_view text, std::size_t n) {
    if (n < 2) throw InvariantError("verdict needs a story of at least 2 sentences");

    static const std::regex templated(
        R"(insert\s+before\s*:?\s*(?:the\s+)?(?:sentence|index)?\s*:?\s*[\[\(]?\s*\**\s*(-?\d+))",
        std::regex::icase | std::regex::ECMAScript);
    static const std::regex standalone(R"((^|[^\w\-])(-1)(?![\d]))", std::regex::ECMAScript);

    const std::string s(text);
    std::optional<std::pair<std::size_t, long>> best;
    auto consider = [&](std::size_t pos, std::string_view digits) {
        long value = 0;
        const auto* first = digits.data();
        const auto* last = digits.data() + digits.size();
        if (std::from_chars(first, last, value).ec != std::errc{}) return;
        if (!best || pos >= best->first) best = {pos, value};
    };
    for (auto it = std::sregex_iterator(s.begin(), s.end(), templated); it != std::sregex_iterator(); ++it) {
        const auto& m = *it;
        consider(static_cast<std::size_t>(m.position(1)), std::string_view(s).substr(m.position(1), m.length(1)));
    }
    for (auto it = std::sregex_iterator(s.begin(), s.end(), standalone); it != std::sregex_iterator(); ++it) {
        const auto& m = *it;
        consider(static_cast<std::size_t>(m.position(2)), "-1");
    }
    if (!best) {
        // A bare integer, possibly decorated as in the template.
        std::string stripped;
        for (char c : detail::trim(text)) {
            if (c != '*' && c != '[' && c != ']' && c != '(' && c != ')' && c != '.') stripped += c;
        }
        static const std::regex bare(R"(^\s*(-?\d+)\s*$)");
        std::smatch m;
        if (std::regex_match(stripped, m, bare)) consider(0, std::string_view(m[1].str()));
    }
    if (!best) throw UnparseableError("no gap index found", std::string(text));

    const long k = best->second;
    if (k == -1) return GapVerdict::complete();
    if (k <= 1 || k >= static_cast<long>(n)) throw RangeError(k, static_cast<long>(n));
    return GapVerdict::insert_before(static_cast<int>(k));
}

std::string serialize_verdict(GapVerdict verdict) {
    if (verdict.is_complete()) return "-1";
    return "Insert before sentence [**" + std::to_string(verdict.index()) + "**]";
}

} // namespace storylogic
