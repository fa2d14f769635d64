#include "storylogic/emotion_geometry.hpp"

#include <algorithm>
#include <cstdlib>

namespace storylogic {

namespace {

constexpr std::string_view kArrow = " → ";

std::size_t require_character(const Story& story, std::string_view character) {
    auto idx = story.character_index(character);
    if (!idx) throw InvariantError("unknown character '" + std::string(character) + "'");
    return *idx;
}

} // namespace

double emotion_distance(EmotionLabel a, EmotionLabel b) {
    if (a == EmotionLabel::none || b == EmotionLabel::none) {
        throw InvariantError("emotion distance is undefined for none");
    }
    const auto i = static_cast<long>(wheel_position(a));
    const auto j = static_cast<long>(wheel_position(b));
    const long gap = std::labs(i - j);
    const long steps = std::min(gap, static_cast<long>(kWheelSize) - gap);
    return static_cast<double>(steps) / static_cast<double>(kWheelSize / 2);
}

double pair_change(const AnnotatedStory& annotated, std::string_view character, std::size_t i,
                   std::size_t j, const EmotionDistance& distance) {
    const std::size_t c = require_character(annotated.story(), character);
    if (i == j) throw InvariantError("pair_change needs two distinct sentences");
    const auto ei = annotated.at(i, c).emotion.emotion;
    const auto ej = annotated.at(j, c).emotion.emotion;
    if (ei == EmotionLabel::none || ej == EmotionLabel::none) return 0.0;
    const double span = i > j ? static_cast<double>(i - j) : static_cast<double>(j - i);
    return distance(ei, ej) / span;
}

RemovalSelection select_removal_index(const AnnotatedStory& annotated,
                                      const EmotionDistance& distance) {
    const Story& story = annotated.story();
    const std::size_t n = story.size();
    if (n < 3) throw InvariantError("story '" + story.id() + "' has no interior sentence");

    RemovalSelection selection;
    selection.scores.assign(n, 0.0);
    for (std::size_t i = 1; i <= n; ++i) {
        double total = 0.0;
        for (const auto& character : story.characters()) {
            for (std::size_t j = 1; j <= n; ++j) {
                if (j != i) total += pair_change(annotated, character, i, j, distance);
            }
        }
        selection.scores[i - 1] = total;
    }
    selection.index = 2;
    for (std::size_t i = 3; i < n; ++i) {
        if (selection.scores[i - 1] > selection.scores[selection.index - 1]) selection.index = i;
    }
    return selection;
}

GapInstance remove_sentence(const AnnotatedStory& annotated, std::size_t index) {
    const Story& story = annotated.story();
    if (index < 2 || index + 1 > story.size()) {
        throw InvariantError("only interior sentences can be removed");
    }
    auto sentences = story.sentences();
    auto grid = annotated.grid();
    const auto at = static_cast<std::ptrdiff_t>(index - 1);
    std::string removed = std::move(sentences[index - 1]);
    std::vector<Annotation> removed_annotations = std::move(grid[index - 1]);
    sentences.erase(sentences.begin() + at);
    grid.erase(grid.begin() + at);
    return GapInstance{
        AnnotatedStory(Story(story.id(), std::move(sentences), story.characters()), std::move(grid)),
        static_cast<int>(index),
        std::move(removed),
        std::move(removed_annotations),
    };
}

GapInstance make_gap_instance(const AnnotatedStory& annotated, const EmotionDistance& distance) {
    return remove_sentence(annotated, select_removal_index(annotated, distance).index);
}

AnnotatedStory reinsert(const GapInstance& instance) {
    const Story& gapped = instance.gapped.story();
    if (instance.gold_k < 2 || static_cast<std::size_t>(instance.gold_k) > gapped.size()) {
        throw InvariantError("gold index outside the gapped story");
    }
    auto sentences = gapped.sentences();
    auto grid = instance.gapped.grid();
    const auto at = static_cast<std::ptrdiff_t>(instance.gold_k - 1);
    sentences.insert(sentences.begin() + at, instance.gold_sentence);
    grid.insert(grid.begin() + at, instance.gold_annotations);
    return AnnotatedStory(Story(gapped.id(), std::move(sentences), gapped.characters()),
                          std::move(grid));
}

std::vector<EmotionChain> build_chains(const AnnotatedStory& annotated) {
    const Story& story = annotated.story();
    std::vector<EmotionChain> chains;
    chains.reserve(story.characters().size());
    for (std::size_t c = 0; c < story.characters().size(); ++c) {
        EmotionChain chain{story.characters()[c], {}};
        for (std::size_t s = 1; s <= story.size(); ++s) {
            const auto& cell = annotated.at(s, c);
            chain.entries.push_back(ChainEntry{s, cell.emotion, cell.action});
        }
        chains.push_back(std::move(chain));
    }
    return chains;
}

std::string render_action_chain(const EmotionChain& chain) {
    std::string out;
    for (std::size_t i = 0; i < chain.entries.size(); ++i) {
        if (i) out += kArrow;
        out += chain.entries[i].action.inner_text();
    }
    return out;
}

std::string render_emotion_chain(const EmotionChain& chain) {
    std::string out;
    for (std::size_t i = 0; i < chain.entries.size(); ++i) {
        if (i) out += kArrow;
        out += to_string(chain.entries[i].emotion.emotion);
    }
    return out;
}

} // namespace storylogic
