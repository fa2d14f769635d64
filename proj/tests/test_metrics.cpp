#include <doctest.h>

#include <cmath>

#include "generators.hpp"
#include "oracles.hpp"
#include "storylogic/metrics.hpp"

using namespace storylogic;
namespace t = storylogic::testing;

namespace {

const std::string kData = STORYLOGIC_TEST_DATA;

void check_prf(const PRF& p, double precision, double recall, double f1) {
    CHECK(p.precision == doctest::Approx(precision).epsilon(1e-12));
    CHECK(p.recall == doctest::Approx(recall).epsilon(1e-12));
    CHECK(p.f1 == doctest::Approx(f1).epsilon(1e-12));
}

std::vector<std::pair<GapVerdict, GapVerdict>> verdict_pairs(const std::vector<std::pair<int, int>>& raw) {
    std::vector<std::pair<GapVerdict, GapVerdict>> out;
    for (auto [g, p] : raw) out.emplace_back(GapVerdict::from_value(g), GapVerdict::from_value(p));
    return out;
}

} // namespace

TEST_CASE("prf from counts") {
    check_prf(prf_from_counts({5, 0, 0}), 1, 1, 1);
    check_prf(prf_from_counts({3, 1, 2}), 0.75, 0.6, 2.0 / 3.0);
    check_prf(prf_from_counts({}), 0, 0, 0);
    ConfusionTally empty;
    check_prf(micro_prf(empty), 0, 0, 0);
    check_prf(macro_prf(empty), 0, 0, 0);
}

TEST_CASE("tallies merge as a commutative monoid") {
    t::Rng rng(8);
    auto random_tally = [&] {
        ConfusionTally tally;
        for (std::size_t i = 0, n = t::uniform(rng, 0, 20); i < n; ++i)
            tally.add(static_cast<int>(t::uniform(rng, 0, 4)), static_cast<int>(t::uniform(rng, 0, 4)));
        return tally;
    };
    for (int round = 0; round < 200; ++round) {
        auto a = random_tally(), b = random_tally(), c = random_tally();
        CHECK(a + b == b + a);
        CHECK((a + b) + c == a + (b + c));
        CHECK(a + ConfusionTally{} == a);
    }
}

TEST_CASE("verdict report") {
    SUBCASE("all complete") {
        auto r = verdict_report(verdict_pairs({{-1, -1}, {-1, -1}}));
        check_prf(r.per_class.at(-1), 1, 1, 1);
    }
    SUBCASE("eight-pair fixture against the enumerated tally") {
        const std::vector<std::pair<int, int>> raw{{3, 3}, {3, 2}, {2, 2}, {4, 4}, {4, 3}, {-1, -1}, {-1, 4}, {2, -1}};
        auto r = verdict_report(verdict_pairs(raw));
        const auto expected = oracle::tally(raw);
        REQUIRE(r.tally.classes().size() == expected.size());
        double tp = 0, fp = 0, fn = 0, sum_p = 0, sum_r = 0, sum_f = 0;
        for (const auto& [cls, c] : expected) {
            const auto got = r.tally.counts(cls);
            CHECK(got.true_positive == c.tp);
            CHECK(got.false_positive == c.fp);
            CHECK(got.false_negative == c.fn);
            const double p = oracle::ratio(c.tp, c.tp + c.fp);
            const double rc = oracle::ratio(c.tp, c.tp + c.fn);
            const double f = oracle::ratio(2 * p * rc, p + rc);
            check_prf(r.per_class.at(cls), p, rc, f);
            tp += c.tp, fp += c.fp, fn += c.fn, sum_p += p, sum_r += rc, sum_f += f;
        }
        // Hand tally: every class has one hit, one false alarm and one miss.
        check_prf(r.micro, 0.5, 0.5, 0.5);
        const double mp = oracle::ratio(tp, tp + fp), mr = oracle::ratio(tp, tp + fn);
        check_prf(r.micro, mp, mr, oracle::ratio(2 * mp * mr, mp + mr));
        const double k = static_cast<double>(expected.size());
        check_prf(r.macro, sum_p / k, sum_r / k, sum_f / k);
    }
    SUBCASE("gold class never predicted") {
        auto r = verdict_report(verdict_pairs({{2, 3}, {3, 3}}));
        check_prf(r.per_class.at(2), 0, 0, 0);
        check_prf(r.per_class.at(3), 0.5, 1, 2.0 / 3.0);
    }
}

TEST_CASE("emotion report excludes none from the micro average") {
    using L = EmotionLabel;
    auto e = [](L l) { return l == L::none ? EmotionAnnotation::unaffected() : EmotionAnnotation::make(true, l); };
    auto r = emotion_report({{e(L::joy), e(L::joy)}, {e(L::none), e(L::none)}, {e(L::anger), e(L::none)}});
    check_prf(r.micro, 1.0, 0.5, 2.0 / 3.0);
    CHECK(r.affected_accuracy == doctest::Approx(2.0 / 3.0));
    auto with_none = emotion_report({{e(L::none), e(L::none)}}, true);
    check_prf(with_none.micro, 1, 1, 1);
}

TEST_CASE("tokenizer") {
    CHECK(tokenize("Hello, World!") == std::vector<std::string>{"hello", ",", "world", "!"});
    CHECK(tokenize("  Mac   Air's\tnew ") == std::vector<std::string>{"mac", "air", "'", "s", "new"});
    CHECK(tokenize("").empty());
}

TEST_CASE("bleu hand fixtures") {
    CHECK(bleu("the cat sat on the mat", {"the cat sat on the mat"}, 4) == doctest::Approx(100.0));
    // Clipped unigram precision 1/3; the candidate is longer so no brevity penalty.
    CHECK(std::abs(bleu("the the the", {"the cat"}, 1) - 100.0 / 3.0) < 1e-9);
    // Two matching tokens against six: penalty exp(1 - 6/2).
    CHECK(std::abs(bleu("the cat", {"the cat sat on the mat"}, 1) - 100.0 * std::exp(-2.0)) < 1e-9);
    CHECK(std::abs(bleu("the cat", {"the cat sat on the mat"}, 2) - 100.0 * std::exp(-2.0)) < 1e-9);
    const double short4 = bleu("the cat", {"the cat sat on the mat"}, 4);
    CHECK(std::abs(short4 - 100.0 * std::exp(-2.0) * std::pow(1e-9, 0.5)) < 1e-9);
    const double three = bleu("a cat sat", {"the dog ran home today"}, 4);
    CHECK(three >= 0.0);
    CHECK(three < 1e-3);
    std::string warning;
    CHECK(bleu("", {"x"}, 1, &warning) == 0.0);
    CHECK_FALSE(warning.empty());
    CHECK(bleu("it is", {"it is"}, 4) == doctest::Approx(100.0));
}

TEST_CASE("bleu picks the closest reference length") {
    CHECK(bleu("a b c", {"a b c d e f", "a b c"}, 1) == doctest::Approx(100.0));
}

TEST_CASE("corpus bleu pools statistics") {
    BleuStats pooled;
    pooled += bleu_stats(tokenize("the the the"), {tokenize("the cat")});
    pooled += bleu_stats(tokenize("a b"), {tokenize("a b")});
    // Unigrams: 1 + 2 matched of 3 + 2; lengths 5 against 4.
    CHECK(std::abs(bleu_from_stats(pooled, 1) - 60.0) < 1e-9);
}

TEST_CASE("rouge hand fixtures") {
    auto l = rouge("a b c d", "a c d", RougeVariant::rougeL);
    check_prf(l, 0.75, 1.0, 6.0 / 7.0);
    check_prf(rouge("the cat sat", "the dog sat", RougeVariant::rouge1), 2.0 / 3.0, 2.0 / 3.0, 2.0 / 3.0);
    check_prf(rouge("the cat sat", "the dog sat", RougeVariant::rouge2), 0, 0, 0);
    check_prf(rouge("a b c", "a b d", RougeVariant::rouge2), 0.5, 0.5, 0.5);
    for (auto v : {RougeVariant::rouge1, RougeVariant::rouge2, RougeVariant::rougeL}) {
        check_prf(rouge("one two three", "one two three", v), 1, 1, 1);
        check_prf(rouge("one two", "four five six", v), 0, 0, 0);
    }
    std::string warning;
    check_prf(rouge("", "a", RougeVariant::rouge1, &warning), 0, 0, 0);
    CHECK_FALSE(warning.empty());
}

TEST_CASE("lcs agrees with the full-table oracle") {
    t::Rng rng(44);
    const std::vector<std::string> small{"a", "b", "c", "d"};
    for (int round = 0; round < 1000; ++round) {
        std::vector<std::string> a, b;
        for (std::size_t i = 0, n = t::uniform(rng, 0, 15); i < n; ++i) a.push_back(t::pick(rng, small));
        for (std::size_t i = 0, n = t::uniform(rng, 0, 15); i < n; ++i) b.push_back(t::pick(rng, small));
        const auto expected = oracle::lcs(a, b);
        CHECK(lcs_length(a, b) == expected);
        CHECK(lcs_length(b, a) == expected);
    }
}

TEST_CASE("lexicon") {
    auto lex = VadLexicon::load(kData + "/lexicon.tsv");
    CHECK(lex.size() == 12);
    REQUIRE(lex.find("happy") != nullptr);
    CHECK(lex.find("Happy") == nullptr);
    auto d = vad_deviation("feeling happy", "feeling grim", lex);
    REQUIRE(d.values[0].has_value());
    CHECK(std::abs(*d.values[0] - 0.8) < 1e-9);
    CHECK(std::abs(*d.values[1] - 0.1) < 1e-9);
    CHECK(std::abs(*d.values[2] - 0.3) < 1e-9);
    CHECK(std::abs(*d.values[3] - 0.4) < 1e-9);
    CHECK(std::abs(*d.values[4] - 0.4) < 1e-9);
    CHECK(std::abs(*d.values[5] - 0.05) < 1e-9);

    auto same = vad_deviation("Gary bought a new laptop", "Gary bought a new laptop", lex);
    for (const auto& v : same.values) CHECK(v == 0.0);

    auto missing = vad_deviation("the dog ran", "happy cake", lex);
    for (const auto& v : missing.values) CHECK_FALSE(v.has_value());
    VadAggregate agg;
    agg.add(missing);
    agg.add(d);
    CHECK(*agg.mean()[0] == doctest::Approx(0.8));

    CHECK_THROWS_AS(VadLexicon::parse("word\tv\ta\td\taoa\tcon\nx\t1.5\t0\t0\t0\t0\n"), CorpusError);
    CHECK_THROWS_AS(VadLexicon::parse("word\tv\ta\td\taoa\tcon\nx\t0.5\t0\n"), CorpusError);
}

TEST_CASE("generation evaluator") {
    GenerationEvaluator eval;
    eval.add("the cat sat", "the cat sat");
    eval.add("a dog", "the cat sat");
    auto s = eval.finish();
    CHECK(s.count == 2);
    CHECK(s.bleu1 == doctest::Approx(50.0));
    CHECK(s.rougeL.f1 == doctest::Approx(0.5));
    CHECK_FALSE(s.vad.has_value());
    CHECK(GenerationEvaluator{}.finish().count == 0);
}
