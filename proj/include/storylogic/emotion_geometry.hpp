#pragma once

#include <cstddef>
#include <functional>
#include <string>
#include <string_view>
#include <vector>

#include "storylogic/story.hpp"

namespace storylogic {

// Distance between two wheel emotions. Implementations must be symmetric,
// return 0 on equal labels, and never receive `none`.
using EmotionDistance = std::function<double(EmotionLabel, EmotionLabel)>;

// Circular distance on Plutchik's wheel, min(|i-j|, 8-|i-j|) / 4, in [0, 1].
// Throws InvariantError if either label is none.
double emotion_distance(EmotionLabel a, EmotionLabel b);

// Emotion change of `character` between 1-based sentences i and j:
// distance(e_i, e_j) / |i - j| when both emotions are present, else 0.
// Throws InvariantError when i == j, an index is out of bounds, or the
// character is unknown.
double pair_change(const AnnotatedStory& annotated, std::string_view character, std::size_t i,
                   std::size_t j, const EmotionDistance& distance = emotion_distance);

struct RemovalSelection {
    std::size_t index = 0;        // 1-based, interior
    std::vector<double> scores;   // scores[i - 1] for every sentence i, boundaries included
};

// score(i) = sum over characters c and sentences j != i of pair_change(c, i, j).
// The argmax ranges over interior sentences 2..n-1 only; ties go to the smallest
// index. Throws InvariantError for stories shorter than 3 sentences.
RemovalSelection select_removal_index(const AnnotatedStory& annotated,
                                      const EmotionDistance& distance = emotion_distance);

// A story with one interior sentence removed, plus what was removed.
struct GapInstance {
    AnnotatedStory gapped;                  // sentences re-numbered 1..n-1
    int gold_k = 0;                         // the removed sentence's original position
    std::string gold_sentence;
    std::vector<Annotation> gold_annotations;  // per character, roster order
};

GapInstance make_gap_instance(const AnnotatedStory& annotated,
                              const EmotionDistance& distance = emotion_distance);

// Removes the given interior sentence (1-based) without scoring.
GapInstance remove_sentence(const AnnotatedStory& annotated, std::size_t index);

// Puts the gold sentence back at gold_k; inverse of make_gap_instance.
AnnotatedStory reinsert(const GapInstance& instance);

struct ChainEntry {
    std::size_t sentence = 0;  // 1-based
    EmotionAnnotation emotion;
    ActionRecord action;
};

struct EmotionChain {
    std::string character;
    std::vector<ChainEntry> entries;
};

// One chain per character in roster order, one entry per sentence.
std::vector<EmotionChain> build_chains(const AnnotatedStory& annotated);

// "LookingFor(a new laptop) → Needed(laptop) → ..." and
// "anticipation → anticipation → ...".
std::string render_action_chain(const EmotionChain& chain);
std::string render_emotion_chain(const EmotionChain& chain);

} // namespace storylogic
