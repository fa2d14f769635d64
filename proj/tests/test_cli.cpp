#include <doctest.h>

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <random>
#include <sstream>

#include <json.hpp>

#include "storylogic/cli.hpp"
#include "storylogic/pipeline.hpp"
#include "storylogic/records.hpp"

using namespace storylogic;
using json = nlohmann::json;
namespace fs = std::filesystem;

namespace {

const std::string kData = STORYLOGIC_TEST_DATA;

struct TempDir {
    TempDir() {
        std::random_device rd;
        path = fs::temp_directory_path() / ("storylogic-cli-" + std::to_string(rd()) + std::to_string(rd()));
        fs::create_directories(path);
    }
    ~TempDir() {
        std::error_code ec;
        fs::remove_all(path, ec);
    }
    std::string operator/(const std::string& name) const { return (path / name).string(); }
    fs::path path;
};

struct Run {
    int code = -1;
    std::string out;
    std::string err;
};

Run cli(std::vector<std::string> args) {
    std::ostringstream out, err;
    Run r;
    r.code = run_cli(args, out, err);
    r.out = out.str();
    r.err = err.str();
    return r;
}

std::string slurp(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    REQUIRE(in.good());
    return std::string(std::istreambuf_iterator<char>(in), {});
}

void spit(const std::string& path, const std::string& text) {
    std::ofstream(path, std::ios::binary) << text;
}

std::size_t line_count(const std::string& text) {
    std::size_t n = 0;
    for (char c : text) n += c == '\n';
    return n;
}

// A mock that knows every gold verdict and sentence, keyed on the first
// sentence of each story.
void write_oracle_mock(const std::string& dir, const std::vector<GapRecord>& gold) {
    fs::create_directories(dir);
    std::string rules;
    for (const auto& g : gold) {
        const auto& first = g.story.sentence(1);
        for (const char* stage : {"logic_check_plain", "logic_check_ea"})
            rules += json{{"stage", stage}, {"contains", first}, {"response", serialize_verdict(g.gold)}}.dump() + "\n";
        if (!g.gold.is_complete())
            for (const char* stage : {"generate_plain", "generate_ea", "generate_ea_pred"})
                rules += json{{"stage", stage}, {"contains", first}, {"response", g.gold_sentence}}.dump() + "\n";
    }
    spit(dir + "/responses.jsonl", rules);
    spit(dir + "/mock.json", R"({"fallback": "synthetic"})" "\n");
}

} // namespace

TEST_CASE("make-gaps") {
    TempDir dir;
    auto a = cli({"make-gaps", kData + "/corpus10.jsonl", "--out", dir / "a"});
    REQUIRE(a.code == kExitOk);
    auto gaps = load_gap_file(dir / "a/gaps.jsonl");
    CHECK(gaps.size() == 10);
    for (const auto& g : gaps) {
        CHECK(g.gold.index() >= 2);
        CHECK(g.gold.index() <= 4);
        CHECK(g.story.size() == 4);
    }
    CHECK(gaps[0].story.id() == "gary-laptop");
    CHECK(gaps[0].gold == GapVerdict::insert_before(4));
    CHECK(a.err.find("storylogic make-gaps seed=0 rng=mt19937_64") != std::string::npos);

    auto b = cli({"make-gaps", kData + "/corpus10.jsonl", "--out", dir / "b"});
    CHECK(slurp(dir / "a/gaps.jsonl") == slurp(dir / "b/gaps.jsonl"));
    CHECK(slurp(dir / "a/gaps.summary.json") == slurp(dir / "b/gaps.summary.json"));

    auto fifty = cli({"make-gaps", kData + "/corpus50.jsonl", "--out", dir / "c"});
    REQUIRE(fifty.code == kExitOk);
    CHECK(line_count(slurp(dir / "c/gaps.jsonl")) == 48);
    CHECK(fifty.err.find("skip") != std::string::npos);

    auto kept = cli({"make-gaps", kData + "/corpus10.jsonl", "--keep-complete", "0.3", "--seed", "5", "--out", dir / "d"});
    REQUIRE(kept.code == kExitOk);
    std::size_t complete = 0;
    for (const auto& g : load_gap_file(dir / "d/gaps.jsonl")) complete += g.gold.is_complete();
    CHECK(complete == 3);
}

TEST_CASE("split") {
    TempDir dir;
    auto r = cli({"split", kData + "/corpus10.jsonl", "--out", dir.path.string()});
    REQUIRE(r.code == kExitOk);
    CHECK(line_count(slurp(dir / "train.jsonl")) == 8);
    CHECK(line_count(slurp(dir / "val.jsonl")) == 1);
    CHECK(line_count(slurp(dir / "test.jsonl")) == 1);
}

TEST_CASE("invalid input exits with 2") {
    TempDir dir;
    spit(dir / "empty.jsonl", "");
    CHECK(cli({"check", dir / "empty.jsonl", "--backend", "mock:" + kData + "/synthetic", "--out", dir / "o"}).code ==
          kExitInvalid);
    CHECK(cli({"check", dir / "missing.jsonl", "--out", dir / "o"}).code == kExitInvalid);
    CHECK(cli({"nonsense"}).code == kExitInvalid);
    CHECK(cli({}).code == kExitInvalid);
    CHECK(cli({"make-gaps", kData + "/corpus10.jsonl", "--no-ea", "--with-prediction"}).code == kExitInvalid);
    CHECK(cli({"make-gaps", kData + "/corpus10.jsonl", "--temperature", "-3"}).code == kExitInvalid);
    spit(dir / "bad.json", R"({"backend": "mock:x", "colour": "blue"})");
    auto bad = cli({"make-gaps", kData + "/corpus10.jsonl", "--config", dir / "bad.json", "--out", dir / "o"});
    CHECK(bad.code == kExitInvalid);
    CHECK(bad.err.find("colour") != std::string::npos);
    spit(dir / "broken.jsonl", "{\"id\": \"x\"\n");
    auto broken = cli({"check", dir / "broken.jsonl", "--backend", "mock:" + kData + "/synthetic", "--out", dir / "o"});
    CHECK(broken.code == kExitInvalid);
    CHECK(broken.err.find("line 1") != std::string::npos);
}

TEST_CASE("configuration precedence") {
    TempDir dir;
    spit(dir / "cfg.json", R"({"api_base": "http://file.invalid/v1", "model": "from-file", "seed": 9})");
    ::setenv("STORYLOGIC_API_BASE", "http://env.invalid/v1", 1);
    ::setenv("STORYLOGIC_API_KEY", "sk-very-secret", 1);
    auto r = cli({"make-gaps", kData + "/corpus10.jsonl", "--config", dir / "cfg.json", "--seed", "3", "--out", dir / "o"});
    ::unsetenv("STORYLOGIC_API_BASE");
    ::unsetenv("STORYLOGIC_API_KEY");
    REQUIRE(r.code == kExitOk);
    CHECK(r.err.find("config api_base = http://env.invalid/v1 [env]") != std::string::npos);
    CHECK(r.err.find("config model = from-file [file]") != std::string::npos);
    CHECK(r.err.find("config seed = 3 [flag]") != std::string::npos);
    CHECK(r.err.find("config backend = openai [env]") != std::string::npos);
    CHECK(r.err.find("config api_key = *** [env]") != std::string::npos);
    CHECK(r.err.find("sk-very-secret") == std::string::npos);
    CHECK(r.err.find("seed=3 rng=mt19937_64") != std::string::npos);
}

TEST_CASE("check and complete write mode-separated outputs") {
    TempDir dir;
    REQUIRE(cli({"make-gaps", kData + "/corpus10.jsonl", "--keep-complete", "0.2", "--out", dir.path.string()}).code == kExitOk);
    const std::string mock = "mock:" + kData + "/synthetic";
    auto ea = cli({"check", dir / "gaps.jsonl", "--backend", mock, "--ea", "--out", dir.path.string()});
    auto plain = cli({"check", dir / "gaps.jsonl", "--backend", mock, "--no-ea", "--out", dir.path.string()});
    CHECK(ea.code == kExitOk);
    CHECK(plain.code == kExitOk);
    CHECK(fs::exists(dir / "check-ea.report.json"));
    CHECK(fs::exists(dir / "check-plain.report.json"));
    CHECK(fs::exists(dir / "check-ea.results.jsonl"));
    CHECK(slurp(dir / "check-ea.report.json") != slurp(dir / "check-plain.report.json"));
    auto report = json::parse(slurp(dir / "check-ea.report.json"));
    CHECK(report["generation"].is_null());
    CHECK(report["verdict"]["count"] == 10);
    CHECK(ea.out.find("Avg (micro)") != std::string::npos);

    auto pred = cli({"complete", dir / "gaps.jsonl", "--backend", mock, "--with-prediction", "--lexicon", kData + "/lexicon.tsv",
                     "--out", dir.path.string()});
    CHECK(pred.code == kExitOk);
    auto gen = json::parse(slurp(dir / "complete-ea-pred.report.json"))["generation"];
    REQUIRE(gen.is_object());
    for (const char* key : {"1", "2", "4"}) {
        CHECK(gen["bleu"][key].get<double>() >= 0.0);
        CHECK(gen["bleu"][key].get<double>() <= 100.0);
    }
    for (const char* key : {"1", "2", "L"}) CHECK(gen["rouge"][key]["f1"].get<double>() <= 1.0);
    CHECK(gen["vad"].is_object());
    for (const char* col : {"BLEU-1", "BLEU-2", "BLEU-4", "ROUGE-1", "ROUGE-2", "ROUGE-L"})
        CHECK(pred.out.find(col) != std::string::npos);
    CHECK(pred.out.find("Lexicon deviation") != std::string::npos);
}

TEST_CASE("case study through the command line") {
    TempDir dir;
    auto r = cli({"complete", kData + "/case_study/gaps.jsonl", "--backend", "mock:" + kData + "/case_study", "--with-prediction",
                  "--out", dir.path.string()});
    REQUIRE(r.code == kExitOk);
    auto result = load_results(dir / "complete-ea-pred.results.jsonl").at(0);
    CHECK(result.verdict == GapVerdict::insert_before(3));
    CHECK(result.generated_sentence == "After purchasing, Gary quickly realized he made the wrong decision.");
}

TEST_CASE("a mock that knows the gold scores perfectly") {
    TempDir dir;
    REQUIRE(cli({"make-gaps", kData + "/corpus10.jsonl", "--keep-complete", "0.2", "--out", dir.path.string()}).code == kExitOk);
    const auto gold = load_gap_file(dir / "gaps.jsonl");
    write_oracle_mock(dir / "mock", gold);
    auto r = cli({"complete", dir / "gaps.jsonl", "--backend", "mock:" + dir / "mock", "--out", dir.path.string()});
    REQUIRE(r.code == kExitOk);
    auto report = json::parse(slurp(dir / "complete-ea.report.json"));
    CHECK(report["verdict"]["micro"]["f1"].get<double>() == doctest::Approx(1.0));
    CHECK(report["verdict"]["macro"]["f1"].get<double>() == doctest::Approx(1.0));
    CHECK(report["generation"]["count"] == 8);
    CHECK(report["generation"]["bleu"]["1"].get<double>() == doctest::Approx(100.0));
    CHECK(report["generation"]["rouge"]["L"]["f1"].get<double>() == doctest::Approx(1.0));

    SUBCASE("correct index only") {
        auto filtered = cli({"complete", dir / "gaps.jsonl", "--backend", "mock:" + dir / "mock", "--correct-index-only",
                             "--out", dir / "f"});
        REQUIRE(filtered.code == kExitOk);
        auto f = json::parse(slurp(dir / "f/complete-ea.report.json"));
        CHECK(f["generation"]["correct_index_only"] == true);
        CHECK(f["generation"]["count"] == 8);
    }
}

TEST_CASE("eval") {
    TempDir dir;
    REQUIRE(cli({"make-gaps", kData + "/corpus10.jsonl", "--keep-complete", "0.2", "--out", dir.path.string()}).code == kExitOk);
    const auto gold = load_gap_file(dir / "gaps.jsonl");

    std::string lines;
    for (const auto& g : gold) {
        PipelineResult r;
        r.story_id = g.story.id();
        r.characters = g.story.characters();
        r.sentence_count = g.story.size();
        r.verdict = g.gold;
        r.with_generation = true;
        if (!g.gold.is_complete()) r.generated_sentence = g.gold_sentence;
        StageLog check{"logic_check_plain"};
        check.calls = 1;
        r.stages.push_back(check);
        if (!g.gold.is_complete()) {
            StageLog generate{"generate_plain"};
            generate.calls = 1;
            r.stages.push_back(generate);
        }
        lines += pipeline_result_json(r) + "\n";
    }
    spit(dir / "perfect.jsonl", lines);

    auto first = cli({"eval", dir / "gaps.jsonl", dir / "perfect.jsonl", "--out", dir / "e1"});
    REQUIRE(first.code == kExitOk);
    auto report = json::parse(slurp(dir / "e1/eval-plain.report.json"));
    CHECK(report["verdict"]["micro"]["f1"].get<double>() == doctest::Approx(1.0));
    for (const auto& c : report["verdict"]["classes"]) CHECK(c["f1"].get<double>() == doctest::Approx(1.0));
    CHECK(report["generation"]["bleu"]["1"].get<double>() == doctest::Approx(100.0));

    auto second = cli({"eval", dir / "gaps.jsonl", dir / "perfect.jsonl", "--out", dir / "e2"});
    CHECK(slurp(dir / "e1/eval-plain.report.json") == slurp(dir / "e2/eval-plain.report.json"));
    CHECK(slurp(dir / "e1/eval-plain.report.txt") == slurp(dir / "e2/eval-plain.report.txt"));
    CHECK(first.out == second.out);

    // Re-scoring a pipeline run gives the report the run wrote.
    REQUIRE(cli({"complete", dir / "gaps.jsonl", "--backend", "mock:" + kData + "/synthetic", "--out", dir / "run"}).code ==
            kExitOk);
    REQUIRE(cli({"eval", dir / "gaps.jsonl", dir / "run/complete-ea.results.jsonl", "--out", dir / "run"}).code == kExitOk);
    auto original = json::parse(slurp(dir / "run/complete-ea.report.json"));
    auto rescored = json::parse(slurp(dir / "run/eval-ea.report.json"));
    CHECK(original["verdict"] == rescored["verdict"]);
    CHECK(original["generation"] == rescored["generation"]);

    auto lines_vec = std::vector<std::string>{};
    std::istringstream in(lines);
    for (std::string l; std::getline(in, l);) lines_vec.push_back(l);
    std::string partial;
    for (std::size_t i = 1; i < lines_vec.size(); ++i) partial += lines_vec[i] + "\n";
    auto extra = json::parse(lines_vec[0]);
    extra["id"] = "stranger";
    partial += extra.dump() + "\n";
    spit(dir / "orphans.jsonl", partial);
    auto orphan = cli({"eval", dir / "gaps.jsonl", dir / "orphans.jsonl", "--out", dir / "e3"});
    CHECK(orphan.code == kExitInvalid);
    CHECK(orphan.err.find("result-only stranger") != std::string::npos);
    CHECK(orphan.err.find("gold-only " + gold[0].story.id()) != std::string::npos);
}

TEST_CASE("t2act2t") {
    TempDir dir;
    const auto corpus = load_corpus(kData + "/corpus10.jsonl");
    // Each sentence abstracts to a unique verb that maps back to the sentence.
    std::string rules;
    std::size_t n = 0;
    for (const auto& raw : corpus) {
        for (std::size_t s = 1; s <= raw.story.size(); ++s, ++n) {
            const std::string verb = "Step" + std::to_string(n);
            std::string tags;
            for (const auto& c : raw.story.characters()) tags += "<" + c + ">" + verb + "</" + c + ">";
            rules += json{{"stage", "action_abstract"}, {"contains", "Sentence: " + raw.story.sentence(s)}, {"response", tags}}.dump() + "\n";
            rules += json{{"stage", "t2act2t"}, {"contains", verb + "<"}, {"response", raw.story.sentence(s)}}.dump() + "\n";
        }
    }
    fs::create_directories(dir / "perfect");
    spit(dir / "perfect/responses.jsonl", rules);
    auto r = cli({"t2act2t", kData + "/corpus10.jsonl", "--backend", "mock:" + dir / "perfect", "--out", dir / "p"});
    REQUIRE(r.code == kExitOk);
    auto report = json::parse(slurp(dir / "p/t2act2t.report.json"));
    CHECK(report["sentences"] == 50);
    CHECK(report["BLEU-1"].get<double>() == doctest::Approx(100.0));
    CHECK(report["ROUGE-L"].get<double>() == doctest::Approx(100.0));
    const auto text = slurp(dir / "p/t2act2t.report.txt");
    CHECK(text.find("BLEU-1") != std::string::npos);
    CHECK(text.find("BLEU-2") != std::string::npos);
    CHECK(text.find("ROUGE-L") != std::string::npos);
    CHECK(text.find("BLEU-4") == std::string::npos);
    CHECK(text.find("ROUGE-1") == std::string::npos);

    std::string every_tag;
    for (const auto& raw : corpus)
        for (const auto& c : raw.story.characters()) every_tag += "<" + c + ">Went(home)</" + c + ">";
    fs::create_directories(dir / "fixed");
    spit(dir / "fixed/responses.jsonl",
         json{{"stage", "action_abstract"}, {"response", every_tag}}.dump() + "\n" +
             R"({"stage": "t2act2t", "response": "Zebras juggle quietly"})" "\n");
    auto u = cli({"t2act2t", kData + "/corpus10.jsonl", "--backend", "mock:" + dir / "fixed", "--out", dir / "u"});
    auto unrelated = json::parse(slurp(dir / "u/t2act2t.report.json"));
    CHECK(unrelated["BLEU-1"].get<double>() < 5.0);
    CHECK(unrelated["ROUGE-L"].get<double>() < 5.0);
    CHECK(unrelated["degenerate"].get<int>() == 0);
    CHECK(unrelated["scored"].get<int>() == 50);
    CHECK(u.code == kExitOk);
}

TEST_CASE("export-sft") {
    TempDir dir;
    REQUIRE(cli({"make-gaps", kData + "/corpus10.jsonl", "--keep-complete", "0.2", "--out", dir.path.string()}).code == kExitOk);
    auto r = cli({"export-sft", dir / "gaps.jsonl", "--stage", "logic_check_ea", "--stage", "generate_plain", "--out",
                  dir.path.string()});
    REQUIRE(r.code == kExitOk);
    CHECK(line_count(slurp(dir / "sft-logic_check_ea.jsonl")) == 10);
    CHECK(line_count(slurp(dir / "sft-generate_plain.jsonl")) == 8);
    CHECK(cli({"export-sft", dir / "gaps.jsonl", "--stage", "bogus", "--out", dir.path.string()}).code == kExitInvalid);
}

TEST_CASE("degraded stories exit with 1") {
    TempDir dir;
    fs::create_directories(dir / "m");
    spit(dir / "m/responses.jsonl", R"({"stage": "logic_check_plain", "response": "I am not sure."})" "\n");
    auto r = cli({"check", kData + "/case_study/gaps.jsonl", "--backend", "mock:" + dir / "m", "--no-ea", "--out", dir.path.string()});
    CHECK(r.code == kExitPartial);
    CHECK(r.err.find("degraded gary-laptop") != std::string::npos);
    auto result = load_results(dir / "check-plain.results.jsonl").at(0);
    CHECK_FALSE(result.verdict.has_value());
}
