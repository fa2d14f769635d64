#include <doctest.h>

#include <algorithm>
#include <set>
#include <sstream>

#include "generators.hpp"
#include "storylogic/story.hpp"

using namespace storylogic;
namespace t = storylogic::testing;

namespace {

const std::string kData = STORYLOGIC_TEST_DATA;

RawStory make_raw(std::size_t n, const std::string& id = "s") {
    std::vector<std::string> sentences;
    for (std::size_t i = 0; i < n; ++i) sentences.push_back("Sentence number " + std::to_string(i + 1) + ".");
    return RawStory{Story(id, sentences, {"Gary"}), std::vector<std::vector<std::vector<EmotionVote>>>(n, {{}})};
}

} // namespace

TEST_CASE("labels parse case-insensitively and reject unknown tokens") {
    CHECK(parse_label(" Joy ") == EmotionLabel::joy);
    CHECK(parse_label("ANTICIPATION") == EmotionLabel::anticipation);
    CHECK(parse_label("none") == EmotionLabel::none);
    CHECK_THROWS_AS(parse_label("elated"), UnknownLabelError);
    for (auto label : kAllLabels) CHECK(parse_label(to_string(label)) == label);
    CHECK(wheel_position(EmotionLabel::sadness) == 4);
}

TEST_CASE("story invariants") {
    CHECK_THROWS_AS(Story("x", {"only one."}, {"Gary"}), InvariantError);
    CHECK_THROWS_AS(Story("x", {"a.", "b."}, {}), InvariantError);
    CHECK_THROWS_AS(Story("x", {"a.", ""}, {"Gary"}), InvariantError);
    CHECK_THROWS_AS(Story("x", {"a.", "b."}, {"Gary", "Gary"}), InvariantError);
    Story s("x", {"a.", "b."}, {"Gary", "Lucy"});
    CHECK(s.sentence(2) == "b.");
    CHECK(s.character_index("Lucy") == 1u);
    CHECK_FALSE(s.character_index("lucy").has_value());
}

TEST_CASE("annotation grid must be total") {
    Story s("x", {"a.", "b."}, {"Gary"});
    CHECK_THROWS_AS(AnnotatedStory(s, AnnotationGrid{{Annotation{}}}), InvariantError);
    CHECK_THROWS_AS(AnnotatedStory(s, AnnotationGrid{{Annotation{}}, {}}), InvariantError);
    auto blank = AnnotatedStory::blank(s);
    CHECK(blank.at(2, "Gary").action.is_none());
    CHECK(blank.at(1, 0).emotion == EmotionAnnotation::unaffected());
    CHECK_THROWS_AS(EmotionAnnotation::make(false, EmotionLabel::joy), InvariantError);
}

TEST_CASE("corpus loading") {
    SUBCASE("single record") {
        std::istringstream in(R"({"id":"a","sentences":["One.","Two."],"characters":["Gary"]})" "\n");
        auto stories = read_corpus(in);
        REQUIRE(stories.size() == 1);
        CHECK(stories[0].story.id() == "a");
    }
    SUBCASE("duplicate character") {
        std::istringstream in("\n" R"({"id":"a","sentences":["One.","Two."],"characters":["Gary","Gary"]})" "\n");
        try {
            read_corpus(in);
            FAIL("expected an error");
        } catch (const CorpusError& e) {
            CHECK(e.line() == 2);
        }
    }
    SUBCASE("ten-record fixture keeps file order") {
        auto stories = load_corpus(kData + "/corpus10.jsonl");
        REQUIRE(stories.size() == 10);
        const std::vector<std::string> ids{"gary-laptop", "lucy-cake", "tom-dog",  "ana-exam", "ben-rain",
                                           "mia-bike",    "sam-job",   "kate-garden", "leo-phone", "zoe-move"};
        for (std::size_t i = 0; i < ids.size(); ++i) CHECK(stories[i].story.id() == ids[i]);
    }
    SUBCASE("records survive a write and read") {
        for (const auto& raw : load_corpus(kData + "/corpus10.jsonl")) {
            auto again = parse_corpus_record(corpus_record_json(raw));
            CHECK(again.story == raw.story);
            CHECK(consolidate_emotions(again) == consolidate_emotions(raw));
        }
    }
}

TEST_CASE("vote consolidation") {
    using L = EmotionLabel;
    CHECK(consolidate_votes({{L::joy, 3}}) == EmotionAnnotation::make(true, L::joy));
    CHECK(consolidate_votes({}) == EmotionAnnotation::unaffected());
    CHECK(consolidate_votes({{L::joy, 2}, {L::sadness, 2}}) == EmotionAnnotation::make(true, L::joy));
    CHECK(consolidate_votes({{L::sadness, 2}, {L::joy, 2}}) == EmotionAnnotation::make(true, L::joy));
    CHECK(consolidate_votes({{L::none, 3}, {L::anger, 1}}) == EmotionAnnotation::unaffected());
    CHECK(consolidate_votes({{L::anger, 1}, {L::none, 1}}) == EmotionAnnotation::make(true, L::anger));

    SUBCASE("result does not depend on vote order") {
        t::Rng rng(7);
        for (int round = 0; round < 500; ++round) {
            std::vector<EmotionVote> votes;
            const auto n = t::uniform(rng, 0, 6);
            for (std::size_t i = 0; i < n; ++i)
                votes.push_back({kAllLabels[t::uniform(rng, 0, 8)], static_cast<double>(t::uniform(rng, 0, 3))});
            const auto expected = consolidate_votes(votes);
            for (int shuffle = 0; shuffle < 5; ++shuffle) {
                std::shuffle(votes.begin(), votes.end(), rng);
                CHECK(consolidate_votes(votes) == expected);
            }
        }
    }
}

TEST_CASE("split sizes") {
    using A = std::array<std::size_t, 3>;
    CHECK(split_sizes(10, {}) == A{8, 1, 1});
    CHECK(split_sizes(3, {}) == A{1, 1, 1});
    CHECK(split_sizes(100, {0.7, 0.2, 0.1}) == A{70, 20, 10});
}

TEST_CASE("split partitions are exhaustive, disjoint and seeded") {
    t::Rng rng(11);
    for (int round = 0; round < 50; ++round) {
        const auto n = t::uniform(rng, 3, 60);
        std::vector<RawStory> stories;
        for (std::size_t i = 0; i < n; ++i) stories.push_back(make_raw(2, "id" + std::to_string(i)));
        const auto seed = rng();
        auto a = split_corpus(stories, {}, seed);
        auto b = split_corpus(stories, {}, seed);
        std::multiset<std::string> seen;
        for (const auto* part : {&a.train, &a.validation, &a.test})
            for (const auto& r : *part) seen.insert(r.story.id());
        CHECK(seen.size() == n);
        CHECK(std::set<std::string>(seen.begin(), seen.end()).size() == n);
        CHECK(a.validation.size() >= 1);
        CHECK(a.test.size() >= 1);
        REQUIRE(a.train.size() == b.train.size());
        for (std::size_t i = 0; i < a.train.size(); ++i) CHECK(a.train[i].story == b.train[i].story);
    }
    std::vector<RawStory> two{make_raw(2, "a"), make_raw(2, "b")};
    CHECK_THROWS_AS(split_corpus(two, {}, 1), InvariantError);
    std::vector<RawStory> three{make_raw(2, "a"), make_raw(2, "b"), make_raw(2, "c")};
    CHECK_THROWS_AS(split_corpus(three, {0.5, 0.1, 0.1}, 1), InvariantError);
}

TEST_CASE("seeded permutation is a permutation") {
    for (std::uint64_t seed : {0ull, 1ull, 42ull}) {
        auto p = seeded_permutation(25, seed);
        auto sorted = p;
        std::sort(sorted.begin(), sorted.end());
        for (std::size_t i = 0; i < sorted.size(); ++i) CHECK(sorted[i] == i);
        CHECK(p == seeded_permutation(25, seed));
    }
}
