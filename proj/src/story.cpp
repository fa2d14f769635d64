#include "storylogic/story.hpp"

#include <cmath>
#include <fstream>
#include <limits>
#include <random>
#include <set>
#include <sstream>
#include <unordered_set>

#include <json.hpp>

#include "text_util.hpp"

namespace storylogic {

using nlohmann::json;

namespace {

constexpr std::array<std::string_view, kLabelCount> kLabelNames{
    "joy", "trust", "fear", "surprise", "sadness", "disgust", "anger", "anticipation", "none",
};

int paren_depth_after(std::string_view s) {
    int depth = 0;
    for (char c : s) {
        if (c == '(') ++depth;
        if (c == ')' && --depth < 0) return -1;
    }
    return depth;
}

bool has_top_level_comma(std::string_view s) {
    int depth = 0;
    for (char c : s) {
        if (c == '(') ++depth;
        else if (c == ')') --depth;
        else if (c == ',' && depth == 0) return true;
    }
    return false;
}

void check_argument_text(const std::string& text, const char* what) {
    if (text.empty() || detail::trim(text).size() != text.size()) {
        throw InvariantError(std::string("action ") + what + " must be non-empty and trimmed");
    }
    if (text.find_first_of("<>") != std::string::npos) {
        throw InvariantError(std::string("action ") + what + " contains an angle bracket");
    }
}

void require_balanced(const std::string& text, const char* what) {
    if (paren_depth_after(text) != 0) {
        throw InvariantError(std::string("action ") + what + " has unbalanced parentheses");
    }
}

} // namespace

std::string_view to_string(EmotionLabel label) noexcept {
    return kLabelNames[static_cast<std::size_t>(label)];
}

std::optional<EmotionLabel> try_parse_label(std::string_view token) noexcept {
    token = detail::trim(token);
    for (std::size_t i = 0; i < kLabelCount; ++i) {
        if (detail::iequals(token, kLabelNames[i])) return kAllLabels[i];
    }
    return std::nullopt;
}

EmotionLabel parse_label(std::string_view token) {
    if (auto label = try_parse_label(token)) return *label;
    throw UnknownLabelError(std::string(detail::trim(token)));
}

ActionRecord ActionRecord::make(std::string verb, std::optional<std::string> target,
                                std::optional<std::string> object) {
    if (verb.empty() || detail::trim(verb).size() != verb.size()) {
        throw InvariantError("action verb must be non-empty and trimmed");
    }
    if (verb.find_first_of("()<>") != std::string::npos) {
        throw InvariantError("action verb '" + verb + "' contains a parenthesis or angle bracket");
    }
    if (detail::iequals(verb, "none")) {
        throw InvariantError("action verb 'None' is reserved for NoAction");
    }
    if (target) check_argument_text(*target, "target");
    if (object) {
        if (!target) throw InvariantError("action object requires a target");
        check_argument_text(*object, "object");
        require_balanced(*target, "target");
        require_balanced(*object, "object");
        if (has_top_level_comma(*object)) {
            throw InvariantError("action object contains a top-level comma");
        }
    } else if (target && paren_depth_after(*target) == 0 && has_top_level_comma(*target)) {
        throw InvariantError("lone action target contains a top-level comma");
    }
    ActionRecord record;
    record.verb_ = std::move(verb);
    record.target_ = std::move(target);
    record.object_ = std::move(object);
    return record;
}

std::string ActionRecord::inner_text() const {
    if (is_none()) return "None";
    std::string out = verb_;
    if (target_) {
        out += '(';
        out += *target_;
        if (object_) {
            out += ", ";
            out += *object_;
        }
        out += ')';
    }
    return out;
}

EmotionAnnotation EmotionAnnotation::make(bool affected, EmotionLabel emotion) {
    if (!affected && emotion != EmotionLabel::none) {
        throw InvariantError("unaffected character must carry emotion none");
    }
    return {affected, emotion};
}

std::string EmotionAnnotation::inner_text() const {
    std::string out = affected ? "(true, " : "(false, ";
    out += to_string(emotion);
    out += ')';
    return out;
}

Story::Story(std::string id, std::vector<std::string> sentences, std::vector<std::string> characters)
    : id_(std::move(id)), sentences_(std::move(sentences)), characters_(std::move(characters)) {
    if (sentences_.size() < 2) {
        throw InvariantError("story '" + id_ + "' needs at least 2 sentences");
    }
    if (characters_.empty()) {
        throw InvariantError("story '" + id_ + "' has no characters");
    }
    for (std::size_t i = 0; i < sentences_.size(); ++i) {
        if (detail::trim(sentences_[i]).empty()) {
            throw InvariantError("story '" + id_ + "' sentence " + std::to_string(i + 1) + " is empty");
        }
    }
    std::unordered_set<std::string> seen;
    for (const auto& name : characters_) {
        if (detail::trim(name).empty() || detail::trim(name).size() != name.size()) {
            throw InvariantError("story '" + id_ + "' has an empty or untrimmed character name");
        }
        if (name.find_first_of("<>\n") != std::string::npos) {
            throw InvariantError("character name '" + name + "' contains markup characters");
        }
        if (!seen.insert(name).second) {
            throw InvariantError("story '" + id_ + "' duplicates character '" + name + "'");
        }
    }
}

const std::string& Story::sentence(std::size_t index) const {
    if (index < 1 || index > sentences_.size()) {
        throw InvariantError("sentence index " + std::to_string(index) + " out of bounds");
    }
    return sentences_[index - 1];
}

std::optional<std::size_t> Story::character_index(std::string_view name) const noexcept {
    for (std::size_t i = 0; i < characters_.size(); ++i) {
        if (characters_[i] == name) return i;
    }
    return std::nullopt;
}

AnnotatedStory::AnnotatedStory(Story story, AnnotationGrid grid)
    : story_(std::move(story)), grid_(std::move(grid)) {
    if (grid_.size() != story_.size()) {
        throw InvariantError("annotation grid covers " + std::to_string(grid_.size()) +
                             " sentences, story has " + std::to_string(story_.size()));
    }
    for (std::size_t s = 0; s < grid_.size(); ++s) {
        if (grid_[s].size() != story_.characters().size()) {
            throw InvariantError("annotation row " + std::to_string(s + 1) +
                                 " does not cover every character");
        }
        for (const auto& cell : grid_[s]) {
            if (!cell.emotion.affected && cell.emotion.emotion != EmotionLabel::none) {
                throw InvariantError("unaffected character must carry emotion none");
            }
        }
    }
}

AnnotatedStory AnnotatedStory::blank(Story story) {
    AnnotationGrid grid(story.size(), std::vector<Annotation>(story.characters().size()));
    return AnnotatedStory(std::move(story), std::move(grid));
}

const Annotation& AnnotatedStory::at(std::size_t sentence, std::size_t character) const {
    if (sentence < 1 || sentence > grid_.size() || character >= story_.characters().size()) {
        throw InvariantError("annotation index out of bounds");
    }
    return grid_[sentence - 1][character];
}

const Annotation& AnnotatedStory::at(std::size_t sentence, std::string_view character) const {
    auto idx = story_.character_index(character);
    if (!idx) throw InvariantError("unknown character '" + std::string(character) + "'");
    return at(sentence, *idx);
}

RawStory parse_corpus_record(std::string_view line) {
    json j = json::parse(line);
    if (!j.is_object()) throw InvariantError("record is not an object");
    Story story(j.at("id").get<std::string>(), j.at("sentences").get<std::vector<std::string>>(),
                j.at("characters").get<std::vector<std::string>>());

    const auto n = story.size();
    const auto m = story.characters().size();
    std::vector<std::vector<std::vector<EmotionVote>>> votes(
        n, std::vector<std::vector<EmotionVote>>(m));
    if (auto it = j.find("emotions"); it != j.end() && !it->is_null()) {
        const json& rows = *it;
        if (!rows.is_array() || rows.size() != n) {
            throw InvariantError("emotions must have one row per sentence");
        }
        for (std::size_t s = 0; s < n; ++s) {
            if (!rows[s].is_array() || rows[s].size() != m) {
                throw InvariantError("emotions row " + std::to_string(s + 1) +
                                     " must have one entry per character");
            }
            for (std::size_t c = 0; c < m; ++c) {
                for (const auto& vote : rows[s][c]) {
                    EmotionVote v{parse_label(vote.at("label").get<std::string>()),
                                  vote.at("weight").get<double>()};
                    if (!(v.weight >= 0.0) || !std::isfinite(v.weight)) {
                        throw InvariantError("vote weight must be non-negative");
                    }
                    votes[s][c].push_back(v);
                }
            }
        }
    }
    return RawStory{std::move(story), std::move(votes)};
}

std::string corpus_record_json(const RawStory& raw) {
    json emotions = json::array();
    for (const auto& row : raw.votes) {
        json jrow = json::array();
        for (const auto& cell : row) {
            json jcell = json::array();
            for (const auto& v : cell) {
                jcell.push_back({{"label", to_string(v.label)}, {"weight", v.weight}});
            }
            jrow.push_back(std::move(jcell));
        }
        emotions.push_back(std::move(jrow));
    }
    json j = {{"id", raw.story.id()},
              {"sentences", raw.story.sentences()},
              {"characters", raw.story.characters()},
              {"emotions", std::move(emotions)}};
    return j.dump();
}

std::vector<RawStory> read_corpus(std::istream& in) {
    std::vector<RawStory> out;
    std::set<std::string> ids;
    std::string line;
    std::size_t line_no = 0;
    while (std::getline(in, line)) {
        ++line_no;
        if (detail::trim(line).empty()) continue;
        try {
            RawStory raw = parse_corpus_record(line);
            if (!ids.insert(raw.story.id()).second) {
                throw InvariantError("duplicate story id '" + raw.story.id() + "'");
            }
            out.push_back(std::move(raw));
        } catch (const CorpusError&) {
            throw;
        } catch (const std::exception& e) {
            throw CorpusError(line_no, line, e.what());
        }
    }
    return out;
}

std::vector<RawStory> load_corpus(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw Error("cannot open corpus '" + path + "'");
    return read_corpus(in);
}

EmotionAnnotation consolidate_votes(const std::vector<EmotionVote>& votes) {
    std::array<double, kLabelCount> totals{};
    for (const auto& v : votes) totals[static_cast<std::size_t>(v.label)] += v.weight;

    // Strict comparison over the fixed order keeps the earliest label on ties,
    // independent of vote order.
    std::size_t best = kLabelCount;
    for (std::size_t i = 0; i < kLabelCount; ++i) {
        if (totals[i] <= 0.0) continue;
        if (best == kLabelCount || totals[i] > totals[best]) best = i;
    }
    if (best == kLabelCount || kAllLabels[best] == EmotionLabel::none) {
        return EmotionAnnotation::unaffected();
    }
    return {true, kAllLabels[best]};
}

AnnotatedStory consolidate_emotions(const RawStory& raw) {
    const auto& story = raw.story;
    AnnotationGrid grid(story.size(), std::vector<Annotation>(story.characters().size()));
    for (std::size_t s = 0; s < story.size(); ++s) {
        for (std::size_t c = 0; c < story.characters().size(); ++c) {
            if (s < raw.votes.size() && c < raw.votes[s].size()) {
                grid[s][c].emotion = consolidate_votes(raw.votes[s][c]);
            }
        }
    }
    return AnnotatedStory(story, std::move(grid));
}

std::array<std::size_t, 3> split_sizes(std::size_t n, const SplitRatios& ratios) {
    if (n < 3) throw InvariantError("splitting needs at least 3 stories");
    if (!(ratios.train > 0 && ratios.validation > 0 && ratios.test > 0)) {
        throw InvariantError("split ratios must be positive");
    }
    if (std::abs(ratios.train + ratios.validation + ratios.test - 1.0) > 1e-9) {
        throw InvariantError("split ratios must sum to 1");
    }
    auto share = [n](double r) {
        auto k = static_cast<std::size_t>(std::floor(static_cast<double>(n) * r + 1e-9));
        return std::max<std::size_t>(k, 1);
    };
    std::size_t validation = share(ratios.validation);
    std::size_t test = share(ratios.test);
    while (validation + test > n - 1) {
        if (validation >= test && validation > 1) --validation;
        else if (test > 1) --test;
        else break;
    }
    return {n - validation - test, validation, test};
}

std::vector<std::size_t> seeded_permutation(std::size_t n, std::uint64_t seed) {
    std::vector<std::size_t> order(n);
    for (std::size_t i = 0; i < n; ++i) order[i] = i;
    std::mt19937_64 rng(seed);
    for (std::size_t i = n; i > 1; --i) {
        // Unbiased draw in [0, i) by rejection; std distributions are not portable.
        const std::uint64_t bound = i;
        const std::uint64_t limit = std::numeric_limits<std::uint64_t>::max() -
                                    std::numeric_limits<std::uint64_t>::max() % bound;
        std::uint64_t draw;
        do {
            draw = rng();
        } while (draw >= limit);
        std::swap(order[i - 1], order[draw % bound]);
    }
    return order;
}

CorpusSplit<RawStory> split_corpus(const std::vector<RawStory>& stories,
                                   const SplitRatios& ratios, std::uint64_t seed) {
    const auto sizes = split_sizes(stories.size(), ratios);
    const auto order = seeded_permutation(stories.size(), seed);
    CorpusSplit<RawStory> out;
    for (std::size_t i = 0; i < order.size(); ++i) {
        const RawStory& s = stories[order[i]];
        if (i < sizes[0]) out.train.push_back(s);
        else if (i < sizes[0] + sizes[1]) out.validation.push_back(s);
        else out.test.push_back(s);
    }
    return out;
}

} // namespace storylogic
