#pragma once

// Wire grammars shared with the model:
//
//   action-block  := { tag }                      tag := "<" name ">" inner "</" name ">"
//   action-inner  := "None" | verb [ "(" target [ ", " object ] ")" ]
//   emotion-inner := "(" ( "true" | "false" ) ", " label ")" | "none"
//   verdict       := "Insert before sentence [**" k "**]" | "-1"
//
// Serializers emit exactly the canonical forms above. Parsers are tolerant:
// tag names match case-insensitively with whitespace folded, attributes after
// the name are ignored, and near misses are repaired with a warning.

#include <cstddef>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "storylogic/story.hpp"

namespace storylogic {

// Result of the logic checker: the story is complete, or a sentence is
// missing before 1-based index k.
class GapVerdict {
public:
    static GapVerdict complete() noexcept { return GapVerdict(-1); }
    static GapVerdict insert_before(int k) noexcept { return GapVerdict(k); }

    // -1 for complete, otherwise k.
    static GapVerdict from_value(int value) noexcept { return GapVerdict(value); }

    bool is_complete() const noexcept { return value_ == -1; }
    int index() const noexcept { return value_; }
    int value() const noexcept { return value_; }

    // Complete, or 1 < k < n.
    bool valid_for(std::size_t n) const noexcept {
        return is_complete() || (value_ > 1 && static_cast<std::size_t>(value_) < n);
    }

    friend bool operator==(GapVerdict, GapVerdict) = default;
    friend auto operator<=>(GapVerdict, GapVerdict) = default;

private:
    explicit GapVerdict(int value) noexcept : value_(value) {}
    int value_;
};

enum class WarningKind {
    missing_tag,
    duplicate_tag,
    unterminated_tag,
    trailing_text,
    unbalanced_parentheses,
    empty_verb,
    invalid_action,
    coerced_emotion,
    bare_label,
    fallback_format,
};

std::string_view to_string(WarningKind kind) noexcept;

struct ParseWarning {
    WarningKind kind;
    std::size_t begin = 0;  // byte span in the parsed text
    std::size_t end = 0;
    std::string message;

    friend bool operator==(const ParseWarning&, const ParseWarning&) = default;
};

// recovered is set when output was salvaged from a non-canonical form; every
// recovery also records a warning.
struct ParseDiagnostics {
    std::vector<ParseWarning> warnings;
    bool recovered = false;

    void warn(WarningKind kind, std::size_t begin, std::size_t end, std::string message);
    void recover(WarningKind kind, std::size_t begin, std::size_t end, std::string message);
    void merge(const ParseDiagnostics& other);
    bool clean() const noexcept { return warnings.empty() && !recovered; }

    friend bool operator==(const ParseDiagnostics&, const ParseDiagnostics&) = default;
};

// Parsed blocks are aligned with the character list passed in.
struct ActionBlock {
    std::vector<ActionRecord> records;
    ParseDiagnostics diagnostics;
};

struct EmotionBlock {
    std::vector<EmotionAnnotation> annotations;
    ParseDiagnostics diagnostics;
};

// Throws UnparseableError when no tag (and no `Name: ...` fallback line) for any
// character is present.
ActionBlock parse_action_block(std::string_view text, std::span<const std::string> characters);

// Throws UnparseableError when no tag is present, UnknownLabelError on a label
// outside the closed set.
EmotionBlock parse_emotion_block(std::string_view text, std::span<const std::string> characters);

// Single inner texts, as stored in record files.
ActionRecord parse_action_inner(std::string_view inner, ParseDiagnostics& diagnostics,
                                std::size_t offset = 0);
EmotionAnnotation parse_emotion_inner(std::string_view inner, ParseDiagnostics& diagnostics,
                                      std::size_t offset = 0);

std::string serialize_action(std::string_view actor, const ActionRecord& record);
std::string serialize_emotion(std::string_view actor, const EmotionAnnotation& annotation);

// One tag per character, space separated, in roster order.
std::string serialize_action_block(std::span<const std::string> characters,
                                   std::span<const ActionRecord> records);
std::string serialize_emotion_block(std::span<const std::string> characters,
                                    std::span<const EmotionAnnotation> annotations);

// n is the length of the complete story the verdict refers to; a gapped story
// of m sentences is checked with n = m + 1. Takes the last verdict-shaped
// integer in the text. Throws RangeError or UnparseableError.
GapVerdict parse_index_verdict(std::string_view text, std::size_t n);

// `Insert before sentence [**k**]` or `-1`.
std::string serialize_verdict(GapVerdict verdict);

} // namespace storylogic
