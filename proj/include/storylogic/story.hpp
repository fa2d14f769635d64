#pragma once

#include <array>
#include <cstddef>
#include <cstdint>
#include <istream>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "storylogic/error.hpp"

namespace storylogic {

// Plutchik's eight basic emotions in wheel order, followed by `none`.
// The numeric value of each wheel label is its position on the wheel.
enum class EmotionLabel : std::uint8_t {
    joy = 0,
    trust,
    fear,
    surprise,
    sadness,
    disgust,
    anger,
    anticipation,
    none,
};

inline constexpr std::size_t kWheelSize = 8;
inline constexpr std::size_t kLabelCount = 9;

inline constexpr std::array<EmotionLabel, kLabelCount> kAllLabels{
    EmotionLabel::joy,     EmotionLabel::trust,   EmotionLabel::fear,
    EmotionLabel::surprise, EmotionLabel::sadness, EmotionLabel::disgust,
    EmotionLabel::anger,   EmotionLabel::anticipation, EmotionLabel::none,
};

std::string_view to_string(EmotionLabel label) noexcept;

// Case-insensitive, surrounding whitespace ignored. Throws UnknownLabelError.
EmotionLabel parse_label(std::string_view token);
std::optional<EmotionLabel> try_parse_label(std::string_view token) noexcept;

constexpr std::size_t wheel_position(EmotionLabel label) noexcept {
    return static_cast<std::size_t>(label);
}

// What a character does in one sentence: `Verb(Target, Object)` or nothing.
//
// Valid records are exactly the ones the canonical serializer can write and the
// tolerant parser reads back unchanged:
//   - verb is non-empty, trimmed, free of `()<>`, and not the word "none";
//   - target and object are trimmed, non-empty when present, free of `<>`;
//   - an object implies a target; both are then balanced and the object has
//     no top-level comma;
//   - a lone target is either unbalanced or has no top-level comma.
class ActionRecord {
public:
    // NoAction.
    ActionRecord() = default;

    static ActionRecord none() { return {}; }
    static ActionRecord make(std::string verb,
                             std::optional<std::string> target = std::nullopt,
                             std::optional<std::string> object = std::nullopt);

    bool is_none() const noexcept { return verb_.empty(); }
    const std::string& verb() const noexcept { return verb_; }
    const std::optional<std::string>& target() const noexcept { return target_; }
    const std::optional<std::string>& object() const noexcept { return object_; }

    // `Verb(Target, Object)` or `None`, without the actor tag.
    std::string inner_text() const;

    friend bool operator==(const ActionRecord&, const ActionRecord&) = default;

private:
    std::string verb_;
    std::optional<std::string> target_;
    std::optional<std::string> object_;
};

struct EmotionAnnotation {
    bool affected = false;
    EmotionLabel emotion = EmotionLabel::none;

    // Throws InvariantError when affected is false and emotion is not none.
    static EmotionAnnotation make(bool affected, EmotionLabel emotion);
    static EmotionAnnotation unaffected() { return {}; }

    // `(true, joy)` form.
    std::string inner_text() const;

    friend bool operator==(const EmotionAnnotation&, const EmotionAnnotation&) = default;
};

struct Annotation {
    ActionRecord action;
    EmotionAnnotation emotion;

    friend bool operator==(const Annotation&, const Annotation&) = default;
};

// An ordered story. Sentence indices exposed by accessors are 1-based.
class Story {
public:
    // Throws InvariantError on: fewer than 2 sentences, no characters, an empty
    // sentence, or a duplicated character name.
    Story(std::string id, std::vector<std::string> sentences, std::vector<std::string> characters);

    const std::string& id() const noexcept { return id_; }
    const std::vector<std::string>& sentences() const noexcept { return sentences_; }
    const std::vector<std::string>& characters() const noexcept { return characters_; }

    std::size_t size() const noexcept { return sentences_.size(); }
    const std::string& sentence(std::size_t index) const;

    // Position of a character in the roster; exact, case-sensitive match.
    std::optional<std::size_t> character_index(std::string_view name) const noexcept;

    friend bool operator==(const Story&, const Story&) = default;

private:
    std::string id_;
    std::vector<std::string> sentences_;
    std::vector<std::string> characters_;
};

// Per-sentence, per-character annotation grid, indexed [sentence][character]
// with both dimensions in story order.
using AnnotationGrid = std::vector<std::vector<Annotation>>;

// A story together with a total (sentence, character) annotation map.
class AnnotatedStory {
public:
    // Throws InvariantError unless the grid covers every sentence and character.
    AnnotatedStory(Story story, AnnotationGrid grid);

    // Every cell NoAction / (false, none).
    static AnnotatedStory blank(Story story);

    const Story& story() const noexcept { return story_; }
    const AnnotationGrid& grid() const noexcept { return grid_; }

    // 1-based sentence index.
    const Annotation& at(std::size_t sentence, std::size_t character) const;
    const Annotation& at(std::size_t sentence, std::string_view character) const;

    friend bool operator==(const AnnotatedStory&, const AnnotatedStory&) = default;

private:
    Story story_;
    AnnotationGrid grid_;
};

struct EmotionVote {
    EmotionLabel label = EmotionLabel::none;
    double weight = 0.0;
};

// A story with raw multi-annotator emotion votes per (sentence, character).
struct RawStory {
    Story story;
    std::vector<std::vector<std::vector<EmotionVote>>> votes;  // [sentence][character]
};

// Reads line-delimited corpus records. Blank lines are skipped. Throws
// CorpusError carrying the 1-based line number and raw text.
std::vector<RawStory> load_corpus(const std::string& path);
std::vector<RawStory> read_corpus(std::istream& in);

// Decodes one corpus record. Throws InvariantError / nlohmann exceptions on bad input.
RawStory parse_corpus_record(std::string_view line);
std::string corpus_record_json(const RawStory& raw);

// Highest total weight wins; ties go to the label earliest in wheel order
// (with none last). An empty vote list, or a `none` win, is (false, none).
EmotionAnnotation consolidate_votes(const std::vector<EmotionVote>& votes);

// Emotions from votes; every action slot is NoAction.
AnnotatedStory consolidate_emotions(const RawStory& raw);

struct SplitRatios {
    double train = 0.8;
    double validation = 0.1;
    double test = 0.1;
};

template <class T>
struct CorpusSplit {
    std::vector<T> train;
    std::vector<T> validation;
    std::vector<T> test;
};

// Sizes of each partition for n items: validation and test get
// max(1, floor(n * ratio)); train takes the remainder.
std::array<std::size_t, 3> split_sizes(std::size_t n, const SplitRatios& ratios);

// Seeded permutation of [0, n) (Fisher-Yates over mt19937_64, portable).
std::vector<std::size_t> seeded_permutation(std::size_t n, std::uint64_t seed);

// Deterministic, exhaustive, disjoint partition. Requires at least 3 stories
// and positive ratios summing to 1 within 1e-9.
CorpusSplit<RawStory> split_corpus(const std::vector<RawStory>& stories,
                                   const SplitRatios& ratios, std::uint64_t seed);

} // namespace storylogic
