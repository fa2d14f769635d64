#include <doctest.h>

#include <string>
#include <vector>

#include "generators.hpp"
#include "storylogic/codec.hpp"

using namespace storylogic;
namespace t = storylogic::testing;

namespace {

const std::vector<std::string> kGary{"Gary"};

bool has_warning(const ParseDiagnostics& d, WarningKind kind) {
    for (const auto& w : d.warnings)
        if (w.kind == kind) return true;
    return false;
}

} // namespace

TEST_CASE("action block examples") {
    SUBCASE("verb with target") {
        auto block = parse_action_block("<Gary>LookingFor(a new laptop)</Gary>", kGary);
        REQUIRE(block.records.size() == 1);
        CHECK(block.records[0].verb() == "LookingFor");
        CHECK(block.records[0].target() == "a new laptop");
        CHECK_FALSE(block.records[0].object().has_value());
        CHECK(block.diagnostics.clean());
    }
    SUBCASE("none") {
        auto block = parse_action_block("<Gary>None</Gary>", kGary);
        CHECK(block.records[0].is_none());
        CHECK(block.diagnostics.clean());
    }
    SUBCASE("target and object, second character missing") {
        const std::vector<std::string> cast{"a", "b"};
        auto block = parse_action_block("<a>Give(b, an apply)</a>", cast);
        CHECK(block.records[0] == ActionRecord::make("Give", "b", "an apply"));
        CHECK(block.records[1].is_none());
        CHECK(has_warning(block.diagnostics, WarningKind::missing_tag));
        CHECK_FALSE(block.diagnostics.recovered);
    }
}

TEST_CASE("action serialization") {
    CHECK(serialize_action("Gary", ActionRecord::none()) == "<Gary>None</Gary>");
    CHECK(serialize_action("Gary", ActionRecord::make("Decided", "Purchase a Mac Air")) ==
          "<Gary>Decided(Purchase a Mac Air)</Gary>");
    CHECK(serialize_action("Gary", ActionRecord::make("Give", "Lucy", "a cake")) == "<Gary>Give(Lucy, a cake)</Gary>");
    const std::vector<std::string> cast{"Gary", "Lucy"};
    const std::vector<ActionRecord> records{ActionRecord::make("Ran"), ActionRecord::none()};
    CHECK(serialize_action_block(cast, records) == "<Gary>Ran</Gary> <Lucy>None</Lucy>");
}

TEST_CASE("action record validation") {
    CHECK_THROWS_AS(ActionRecord::make(""), InvariantError);
    CHECK_THROWS_AS(ActionRecord::make("none"), InvariantError);
    CHECK_THROWS_AS(ActionRecord::make("Go(", "x"), InvariantError);
    CHECK_THROWS_AS(ActionRecord::make("Go", std::nullopt, "x"), InvariantError);
    CHECK_THROWS_AS(ActionRecord::make("Go", "x", "y, z"), InvariantError);
    CHECK_THROWS_AS(ActionRecord::make("Go", "<x>"), InvariantError);
}

TEST_CASE("emotion block examples") {
    auto upper = parse_emotion_block("<Gary>(True, anticipation)</Gary>", kGary);
    CHECK(upper.annotations[0] == EmotionAnnotation::make(true, EmotionLabel::anticipation));
    CHECK(upper.diagnostics.clean());

    auto none = parse_emotion_block("<Gary>(false, none)</Gary>", kGary);
    CHECK(none.annotations[0] == EmotionAnnotation::unaffected());
    CHECK(none.diagnostics.clean());

    CHECK_THROWS_AS(parse_emotion_block("<Gary>(true, elated)</Gary>", kGary), UnknownLabelError);
    CHECK(serialize_emotion("Gary", EmotionAnnotation::make(true, EmotionLabel::joy)) == "<Gary>(true, joy)</Gary>");
    CHECK(serialize_emotion("Gary", EmotionAnnotation::unaffected()) == "<Gary>(false, none)</Gary>");
}

TEST_CASE("tolerant parsing") {
    SUBCASE("reasoning around the tag and case-folded names") {
        auto block = parse_action_block("Gary wants a computer.\n<gary >LookingFor(a new laptop)</GARY>\nDone.", kGary);
        CHECK(block.records[0] == ActionRecord::make("LookingFor", "a new laptop"));
        CHECK_FALSE(block.diagnostics.recovered);
    }
    SUBCASE("attributes after the tag name") {
        auto block = parse_emotion_block("<Gary id=\"1\">(true, fear)</Gary>", kGary);
        CHECK(block.annotations[0] == EmotionAnnotation::make(true, EmotionLabel::fear));
    }
    SUBCASE("unterminated tag") {
        auto block = parse_action_block("<Gary>Ran(home)", kGary);
        CHECK(block.records[0] == ActionRecord::make("Ran", "home"));
        CHECK(block.diagnostics.recovered);
        CHECK(has_warning(block.diagnostics, WarningKind::unterminated_tag));
    }
    SUBCASE("duplicate tag keeps the first") {
        auto block = parse_action_block("<Gary>Ran</Gary><Gary>Sat</Gary>", kGary);
        CHECK(block.records[0] == ActionRecord::make("Ran"));
        CHECK(has_warning(block.diagnostics, WarningKind::duplicate_tag));
    }
    SUBCASE("fallback name lines") {
        auto block = parse_emotion_block("Gary: (true, sadness)", kGary);
        CHECK(block.annotations[0] == EmotionAnnotation::make(true, EmotionLabel::sadness));
        CHECK(has_warning(block.diagnostics, WarningKind::fallback_format));
    }
    SUBCASE("bare label") {
        auto block = parse_emotion_block("<Gary>joy</Gary>", kGary);
        CHECK(block.annotations[0] == EmotionAnnotation::make(true, EmotionLabel::joy));
        CHECK(has_warning(block.diagnostics, WarningKind::bare_label));
    }
    SUBCASE("unaffected with a label is coerced") {
        auto block = parse_emotion_block("<Gary>(false, joy)</Gary>", kGary);
        CHECK(block.annotations[0] == EmotionAnnotation::unaffected());
        CHECK(has_warning(block.diagnostics, WarningKind::coerced_emotion));
    }
    SUBCASE("unbalanced parentheses") {
        auto block = parse_action_block("<Gary>Bought(a laptop</Gary>", kGary);
        CHECK(block.records[0].verb() == "Bought");
        CHECK(has_warning(block.diagnostics, WarningKind::unbalanced_parentheses));
    }
    SUBCASE("trailing period") {
        auto block = parse_action_block("<Gary>Ran(home).</Gary>", kGary);
        CHECK(block.records[0] == ActionRecord::make("Ran", "home"));
        CHECK(has_warning(block.diagnostics, WarningKind::trailing_text));
    }
    SUBCASE("no structure") {
        CHECK_THROWS_AS(parse_action_block("I cannot answer that.", kGary), UnparseableError);
        CHECK_THROWS_AS(parse_emotion_block("", kGary), UnparseableError);
    }
    SUBCASE("warning spans point into the text") {
        const std::string text = "<Gary>Ran(home).</Gary>";
        auto block = parse_action_block(text, kGary);
        for (const auto& w : block.diagnostics.warnings) {
            CHECK(w.begin <= w.end);
            CHECK(w.end <= text.size());
        }
    }
}

TEST_CASE("verdicts") {
    CHECK(parse_index_verdict("Insert before sentence [**3**].", 5) == GapVerdict::insert_before(3));
    CHECK(parse_index_verdict("-1", 5) == GapVerdict::complete());
    CHECK_THROWS_AS(parse_index_verdict("Insert before sentence [**1**].", 5), RangeError);
    CHECK_THROWS_AS(parse_index_verdict("Insert before sentence [**5**].", 5), RangeError);
    CHECK_THROWS_AS(parse_index_verdict("no idea", 5), UnparseableError);
    CHECK(parse_index_verdict("The turn is abrupt.\nInsert before sentence 4", 5) == GapVerdict::insert_before(4));
    CHECK(parse_index_verdict("Maybe insert before sentence [**2**]... no: Insert before sentence [**3**]", 5) ==
          GapVerdict::insert_before(3));
    CHECK(parse_index_verdict("**3**", 5) == GapVerdict::insert_before(3));
    CHECK(parse_index_verdict("The story is complete: -1", 5) == GapVerdict::complete());
    CHECK(serialize_verdict(GapVerdict::insert_before(3)) == "Insert before sentence [**3**]");
    CHECK(serialize_verdict(GapVerdict::complete()) == "-1");
    for (int k = 2; k < 8; ++k)
        CHECK(parse_index_verdict(serialize_verdict(GapVerdict::insert_before(k)), 8) == GapVerdict::insert_before(k));
    CHECK(GapVerdict::insert_before(3).valid_for(5));
    CHECK_FALSE(GapVerdict::insert_before(5).valid_for(5));
    CHECK(GapVerdict::complete().valid_for(2));
}

TEST_CASE("generated records survive serialize then parse") {
    t::Rng rng(20240611);
    for (int round = 0; round < 2000; ++round) {
        const auto cast = t::character_names(t::uniform(rng, 1, 4));
        std::vector<ActionRecord> actions;
        std::vector<EmotionAnnotation> emotions;
        for (std::size_t i = 0; i < cast.size(); ++i) {
            actions.push_back(t::random_action(rng));
            emotions.push_back(t::random_emotion(rng));
        }
        const auto action_text = serialize_action_block(cast, actions);
        auto a = parse_action_block(action_text, cast);
        CHECK_MESSAGE(a.records == actions, action_text);
        CHECK(a.diagnostics.clean());

        const auto emotion_text = serialize_emotion_block(cast, emotions);
        auto e = parse_emotion_block(emotion_text, cast);
        CHECK(e.annotations == emotions);
        CHECK(e.diagnostics.clean());

        ParseDiagnostics d;
        for (const auto& r : actions) CHECK(parse_action_inner(r.inner_text(), d) == r);
        CHECK(d.clean());
    }
}
