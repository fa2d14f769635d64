#include "storylogic/cli.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <map>
#include <ostream>
#include <set>
#include <sstream>

#include <CLI11.hpp>
#include <json.hpp>

#include "storylogic/metrics.hpp"
#include "storylogic/pipeline.hpp"
#include "text_util.hpp"

namespace storylogic {

namespace {

using ordered_json = nlohmann::ordered_json;
namespace fs = std::filesystem;

// Invalid input; maps to exit code 2.
class UsageError : public Error {
public:
    using Error::Error;
};

// ---------------------------------------------------------------------------
// Configuration

const std::vector<std::string> kConfigKeys{
    "backend", "model",     "api_base", "api_key",     "shots",      "ea",      "with_prediction",
    "seed",    "jobs",      "out",      "lexicon",     "exemplars",  "prompts", "temperature",
    "top_p",   "max_tokens", "retries", "timeout_ms",  "min_interval_ms",
};

struct RunConfig {
    std::string backend;
    std::string model = "default";
    std::string api_base;
    std::string api_key;
    ShotMode shots = ShotMode::zero;
    bool with_ea = true;
    bool with_prediction = false;
    std::uint64_t seed = 0;
    std::size_t jobs = 1;
    std::string out = ".";
    std::string lexicon;
    std::string exemplars;
    std::string prompts;
    GenerationConfig generation;
    long min_interval_ms = 0;
    std::map<std::string, std::string> sources;
};

bool parse_bool(const std::string& key, const std::string& value) {
    const auto v = detail::fold(value);
    if (v == "true" || v == "1" || v == "yes" || v == "on") return true;
    if (v == "false" || v == "0" || v == "no" || v == "off") return false;
    throw UsageError(key + ": expected a boolean, got '" + value + "'");
}

template <class T>
T parse_number(const std::string& key, const std::string& value) {
    std::istringstream in(value);
    T number{};
    in >> number;
    if (!in || !(in >> std::ws).eof()) throw UsageError(key + ": expected a number, got '" + value + "'");
    return number;
}

void assign(RunConfig& c, const std::string& key, const std::string& value) {
    if (key == "backend") c.backend = value;
    else if (key == "model") c.model = value;
    else if (key == "api_base") c.api_base = value;
    else if (key == "api_key") c.api_key = value;
    else if (key == "shots") {
        try {
            c.shots = parse_shot_mode(value);
        } catch (const InvariantError& e) {
            throw UsageError(e.what());
        }
    } else if (key == "ea") c.with_ea = parse_bool(key, value);
    else if (key == "with_prediction") c.with_prediction = parse_bool(key, value);
    else if (key == "seed") c.seed = parse_number<std::uint64_t>(key, value);
    else if (key == "jobs") {
        const auto jobs = parse_number<long>(key, value);
        if (jobs < 1) throw UsageError("jobs must be >= 1");
        c.jobs = static_cast<std::size_t>(jobs);
    } else if (key == "out") c.out = value;
    else if (key == "lexicon") c.lexicon = value;
    else if (key == "exemplars") c.exemplars = value;
    else if (key == "prompts") c.prompts = value;
    else if (key == "temperature") c.generation.temperature = parse_number<double>(key, value);
    else if (key == "top_p") c.generation.top_p = parse_number<double>(key, value);
    else if (key == "max_tokens") c.generation.max_tokens = parse_number<int>(key, value);
    else if (key == "retries") c.generation.retries = parse_number<int>(key, value);
    else if (key == "timeout_ms") c.generation.timeout = std::chrono::milliseconds(parse_number<long>(key, value));
    else if (key == "min_interval_ms") c.min_interval_ms = parse_number<long>(key, value);
    else throw UsageError("unknown configuration key '" + key + "'");
}

std::map<std::string, std::string> read_config_file(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw UsageError("cannot open config file '" + path + "'");
    nlohmann::json j;
    try {
        in >> j;
    } catch (const std::exception& e) {
        throw UsageError("config file '" + path + "': " + e.what());
    }
    if (!j.is_object()) throw UsageError("config file '" + path + "' must hold a JSON object");
    std::map<std::string, std::string> out;
    for (const auto& [key, value] : j.items()) {
        if (std::find(kConfigKeys.begin(), kConfigKeys.end(), key) == kConfigKeys.end()) {
            throw UsageError("config file '" + path + "': unknown key '" + key + "'");
        }
        out[key] = value.is_string() ? value.get<std::string>() : value.dump();
    }
    return out;
}

std::map<std::string, std::string> read_environment() {
    std::map<std::string, std::string> out;
    if (const char* base = std::getenv("STORYLOGIC_API_BASE"); base && *base) out["api_base"] = base;
    if (const char* key = std::getenv("STORYLOGIC_API_KEY"); key && *key) out["api_key"] = key;
    return out;
}

// Flags > environment > config file > defaults.
RunConfig resolve_config(const std::string& config_path, const std::map<std::string, std::string>& flags) {
    RunConfig config;
    for (const auto& key : kConfigKeys) config.sources[key] = "default";
    auto apply = [&](const std::map<std::string, std::string>& layer, const std::string& source) {
        for (const auto& [key, value] : layer) {
            assign(config, key, value);
            config.sources[key] = source;
        }
    };
    if (!config_path.empty()) apply(read_config_file(config_path), "file");
    apply(read_environment(), "env");
    apply(flags, "flag");
    if (config.backend.empty() && !config.api_base.empty()) {
        config.backend = "openai";
        config.sources["backend"] = config.sources["api_base"];
    }
    try {
        config.generation.validate();
    } catch (const InvariantError& e) {
        throw UsageError(e.what());
    }
    if (config.with_prediction && !config.with_ea) throw UsageError("--with-prediction needs --ea");
    return config;
}

std::string config_value(const RunConfig& c, const std::string& key) {
    std::ostringstream o;
    if (key == "backend") o << c.backend;
    else if (key == "model") o << c.model;
    else if (key == "api_base") o << c.api_base;
    else if (key == "api_key") o << (c.api_key.empty() ? "" : "***");
    else if (key == "shots") o << to_string(c.shots);
    else if (key == "ea") o << (c.with_ea ? "true" : "false");
    else if (key == "with_prediction") o << (c.with_prediction ? "true" : "false");
    else if (key == "seed") o << c.seed;
    else if (key == "jobs") o << c.jobs;
    else if (key == "out") o << c.out;
    else if (key == "lexicon") o << c.lexicon;
    else if (key == "exemplars") o << c.exemplars;
    else if (key == "prompts") o << (c.prompts.empty() ? "<embedded>" : c.prompts);
    else if (key == "temperature") o << c.generation.temperature;
    else if (key == "top_p") o << c.generation.top_p;
    else if (key == "max_tokens") o << c.generation.max_tokens;
    else if (key == "retries") o << c.generation.retries;
    else if (key == "timeout_ms") o << c.generation.timeout.count();
    else if (key == "min_interval_ms") o << c.min_interval_ms;
    return o.str();
}

void print_header(std::ostream& err, const std::string& command, const RunConfig& c) {
    err << "storylogic " << command << " seed=" << c.seed << " rng=mt19937_64\n";
    for (const auto& key : kConfigKeys) {
        err << "  config " << key << " = " << config_value(c, key) << " [" << c.sources.at(key) << "]\n";
    }
}

// ---------------------------------------------------------------------------
// Helpers

std::string mode_name(bool with_ea, bool with_prediction) {
    if (!with_ea) return "plain";
    return with_prediction ? "ea-pred" : "ea";
}

fs::path output_path(const RunConfig& c, const std::string& name) { return fs::path(c.out) / name; }

void write_output(const fs::path& path, const std::string& contents, std::ostream& err) {
    write_file_atomic(path.string(), contents);
    err << "wrote " << path.string() << '\n';
}

std::string fixed(double value, int digits) {
    std::ostringstream o;
    o << std::fixed << std::setprecision(digits) << value;
    return o.str();
}

std::string pad(std::string text, std::size_t width) {
    if (text.size() < width) text.append(width - text.size(), ' ');
    return text;
}

std::string lpad(std::string text, std::size_t width) {
    if (text.size() < width) text.insert(0, width - text.size(), ' ');
    return text;
}

ordered_json prf_json(const PRF& p) {
    return {{"precision", p.precision}, {"recall", p.recall}, {"f1", p.f1}};
}

PRF prf_from_json(const ordered_json& j) {
    return PRF{j.at("precision").get<double>(), j.at("recall").get<double>(), j.at("f1").get<double>()};
}

ordered_json optional_number(const std::optional<double>& v) {
    return v ? ordered_json(*v) : ordered_json(nullptr);
}

std::vector<GapRecord> load_gaps_checked(const std::string& path) {
    if (!fs::exists(path)) throw UsageError("gap file '" + path + "' does not exist");
    auto records = load_gap_file(path);
    if (records.empty()) throw UsageError("gap file '" + path + "' holds no records");
    return records;
}

struct Session {
    std::shared_ptr<ChatBackend> backend;
    std::unique_ptr<Gateway> gateway;
};

Session open_session(const RunConfig& c, std::ostream& err) {
    if (c.backend.empty()) {
        throw UsageError("no backend configured; pass --backend mock:<dir> or set STORYLOGIC_API_BASE");
    }
    Session session;
    try {
        session.backend = make_backend(c.backend, BackendSettings{c.model, c.api_base, c.api_key});
    } catch (const Error& e) {
        throw UsageError(e.what());
    }
    const TemplateCatalog& catalog = c.prompts.empty() ? TemplateCatalog::embedded() : TemplateCatalog::load(c.prompts);
    ExemplarSet exemplars = c.exemplars.empty() ? ExemplarSet{} : ExemplarSet::load(c.exemplars);
    if (c.shots != ShotMode::zero && exemplars.size() == 0) {
        throw UsageError(std::string(to_string(c.shots)) + "-shot prompting needs --exemplars");
    }
    GatewayOptions options;
    options.concurrency = c.jobs;
    options.seed = c.seed;
    options.min_interval = std::chrono::milliseconds(c.min_interval_ms);
    session.gateway = std::make_unique<Gateway>(session.backend, catalog, std::move(exemplars), options);
    err << "backend " << session.backend->describe() << " templates " << catalog.manifest_digest().substr(0, 12)
        << '\n';
    return session;
}

std::optional<VadLexicon> load_lexicon(const RunConfig& c) {
    if (c.lexicon.empty()) return std::nullopt;
    if (!fs::exists(c.lexicon)) throw UsageError("lexicon '" + c.lexicon + "' does not exist");
    return VadLexicon::load(c.lexicon);
}

// ---------------------------------------------------------------------------
// Reports

struct ReportOptions {
    std::string label;
    bool correct_index_only = false;
    const VadLexicon* lexicon = nullptr;
};

ordered_json build_report(const std::vector<GapRecord>& gold, const std::vector<PipelineResult>& results,
                          const ReportOptions& options) {
    std::map<std::string, const GapRecord*> by_id;
    for (const auto& g : gold) by_id[g.story.id()] = &g;

    std::vector<std::pair<GapVerdict, GapVerdict>> verdicts;
    std::vector<std::pair<EmotionAnnotation, EmotionAnnotation>> emotions;
    GenerationEvaluator generation(options.lexicon);
    bool any_generation = false;
    bool any_emotion = false;
    std::size_t degraded = 0;

    for (const auto& r : results) {
        const GapRecord& g = *by_id.at(r.story_id);
        if (r.degraded()) ++degraded;
        if (r.verdict) verdicts.emplace_back(g.gold, *r.verdict);

        const StageLog* emotion_stage = r.stage("emotion_classify");
        if (r.annotations && g.annotations && emotion_stage && !emotion_stage->failed()) {
            any_emotion = true;
            for (std::size_t s = 0; s < r.annotations->size(); ++s) {
                for (std::size_t c = 0; c < (*r.annotations)[s].size(); ++c) {
                    emotions.emplace_back((*g.annotations)[s][c].emotion, (*r.annotations)[s][c].emotion);
                }
            }
        }

        if (r.with_generation && !g.gold.is_complete()) {
            any_generation = true;
            if (!r.verdict) continue;
            if (options.correct_index_only && *r.verdict != g.gold) continue;
            bool failed = false;
            for (const auto& s : r.stages) {
                if (s.stage.rfind("generate_", 0) == 0 && s.failed()) failed = true;
            }
            if (failed) continue;
            generation.add(r.generated_sentence.value_or(""), g.gold_sentence);
        }
    }

    ordered_json report;
    report["schema_version"] = kResultSchemaVersion;
    report["label"] = options.label;
    report["stories"] = results.size();
    report["degraded"] = degraded;

    const auto vr = verdict_report(verdicts);
    ordered_json classes = ordered_json::array();
    for (const auto& [cls, counts] : vr.tally.classes()) {
        auto row = prf_json(vr.per_class.at(cls));
        row["k"] = cls;
        row["tp"] = counts.true_positive;
        row["fp"] = counts.false_positive;
        row["fn"] = counts.false_negative;
        classes.push_back(std::move(row));
    }
    report["verdict"] = {{"count", vr.count},
                         {"classes", std::move(classes)},
                         {"micro", prf_json(vr.micro)},
                         {"macro", prf_json(vr.macro)}};

    if (any_emotion) {
        const auto er = emotion_report(emotions);
        ordered_json labels = ordered_json::array();
        for (const auto& [label, prf] : er.per_label) {
            auto row = prf_json(prf);
            row["label"] = to_string(label);
            labels.push_back(std::move(row));
        }
        report["emotion"] = {{"count", er.count},
                             {"include_none", er.include_none},
                             {"labels", std::move(labels)},
                             {"micro", prf_json(er.micro)},
                             {"affected_accuracy", er.affected_accuracy}};
    } else {
        report["emotion"] = nullptr;
    }

    if (any_generation) {
        const auto gs = generation.finish();
        ordered_json gen;
        gen["count"] = gs.count;
        gen["correct_index_only"] = options.correct_index_only;
        gen["tokenizer"] = kTokenizerVersion;
        gen["bleu"] = {{"1", gs.bleu1}, {"2", gs.bleu2}, {"4", gs.bleu4}};
        gen["corpus_bleu"] = {{"1", gs.corpus_bleu1}, {"2", gs.corpus_bleu2}, {"4", gs.corpus_bleu4}};
        gen["rouge"] = {{"1", prf_json(gs.rouge1)}, {"2", prf_json(gs.rouge2)}, {"L", prf_json(gs.rougeL)}};
        if (gs.vad) {
            ordered_json vad;
            for (std::size_t i = 0; i < VadDeviation::kColumns.size(); ++i) {
                vad[std::string(VadDeviation::kColumns[i])] = optional_number((*gs.vad)[i]);
            }
            gen["vad"] = std::move(vad);
        } else {
            gen["vad"] = nullptr;
        }
        gen["warnings"] = gs.warnings;
        report["generation"] = std::move(gen);
    } else {
        report["generation"] = nullptr;
    }
    return report;
}

std::string render_report(const ordered_json& report) {
    std::ostringstream o;
    const std::string label = report.at("label").get<std::string>();
    const std::size_t name_width = std::max<std::size_t>(16, label.size() + 2);
    o << "== " << label << ": " << report.at("stories").get<std::size_t>() << " stories, "
      << report.at("degraded").get<std::size_t>() << " degraded ==\n\n";

    const auto& verdict = report.at("verdict");
    o << "Gap index (" << verdict.at("count").get<std::size_t>() << " verdicts)\n";
    std::string head1 = pad("Model", name_width);
    std::string head2 = pad("", name_width);
    std::string row = pad(label, name_width);
    auto add_group = [&](const std::string& title, const PRF& p) {
        head1 += pad(title, 24);
        head2 += pad("P", 8) + pad("R", 8) + pad("F1", 8);
        row += pad(fixed(100 * p.precision, 2), 8) + pad(fixed(100 * p.recall, 2), 8) +
               pad(fixed(100 * p.f1, 2), 8);
    };
    for (const auto& c : verdict.at("classes")) add_group("k=" + std::to_string(c.at("k").get<int>()), prf_from_json(c));
    add_group("Avg (micro)", prf_from_json(verdict.at("micro")));
    const auto macro = prf_from_json(verdict.at("macro"));
    o << head1 << '\n' << head2 << '\n' << row << '\n';
    o << "macro average: P " << fixed(100 * macro.precision, 2) << "  R " << fixed(100 * macro.recall, 2)
      << "  F1 " << fixed(100 * macro.f1, 2) << "\n";

    if (const auto& emotion = report.at("emotion"); !emotion.is_null()) {
        const auto micro = prf_from_json(emotion.at("micro"));
        o << "\nEmotion classification (" << emotion.at("count").get<std::size_t>() << " cells)\n";
        o << pad("Model", name_width) << pad("P", 8) << pad("R", 8) << pad("F1", 8) << "Affected\n";
        o << pad(label, name_width) << pad(fixed(100 * micro.precision, 2), 8) << pad(fixed(100 * micro.recall, 2), 8)
          << pad(fixed(100 * micro.f1, 2), 8) << fixed(100 * emotion.at("affected_accuracy").get<double>(), 2)
          << '\n';
    }

    if (const auto& gen = report.at("generation"); !gen.is_null()) {
        o << "\nGeneration (" << gen.at("count").get<std::size_t>() << " sentences"
          << (gen.at("correct_index_only").get<bool>() ? ", correct index only" : "") << ")\n";
        o << pad("Model", name_width) << pad("BLEU-1", 9) << pad("BLEU-2", 9) << pad("BLEU-4", 9)
          << pad("ROUGE-1", 9) << pad("ROUGE-2", 9) << "ROUGE-L\n";
        const auto& bleu = gen.at("bleu");
        const auto& rouge = gen.at("rouge");
        o << pad(label, name_width) << pad(fixed(bleu.at("1").get<double>(), 2), 9)
          << pad(fixed(bleu.at("2").get<double>(), 2), 9) << pad(fixed(bleu.at("4").get<double>(), 2), 9)
          << pad(fixed(100 * rouge.at("1").at("f1").get<double>(), 2), 9)
          << pad(fixed(100 * rouge.at("2").at("f1").get<double>(), 2), 9)
          << fixed(100 * rouge.at("L").at("f1").get<double>(), 2) << '\n';
        const auto& corpus = gen.at("corpus_bleu");
        o << "corpus BLEU: 1 " << fixed(corpus.at("1").get<double>(), 2) << "  2 "
          << fixed(corpus.at("2").get<double>(), 2) << "  4 " << fixed(corpus.at("4").get<double>(), 2) << '\n';
        if (const auto& vad = gen.at("vad"); !vad.is_null()) {
            o << "\nLexicon deviation\n" << pad("Model", name_width);
            for (auto column : VadDeviation::kColumns) o << pad(std::string(column), 8);
            o << '\n' << pad(label, name_width);
            for (auto column : VadDeviation::kColumns) {
                const auto& v = vad.at(std::string(column));
                o << pad(v.is_null() ? "-" : fixed(v.get<double>(), 3), 8);
            }
            o << '\n';
        }
        for (const auto& w : gen.at("warnings")) o << "warning: " << w.get<std::string>() << '\n';
    }
    std::string text = o.str();
    // Trailing pad spaces make diffs noisy.
    std::string cleaned;
    std::istringstream lines(text);
    for (std::string line; std::getline(lines, line);) {
        while (!line.empty() && line.back() == ' ') line.pop_back();
        cleaned += line + '\n';
    }
    return cleaned;
}

void write_report(const RunConfig& c, const std::string& stem, const ordered_json& report, std::ostream& out,
                  std::ostream& err) {
    const auto text = render_report(report);
    write_output(output_path(c, stem + ".report.json"), report.dump(2) + "\n", err);
    write_output(output_path(c, stem + ".report.txt"), text, err);
    out << text;
}

std::string results_text(const std::vector<PipelineResult>& results) {
    std::vector<std::string> lines;
    for (const auto& r : results) lines.push_back(pipeline_result_json(r));
    return join_lines(lines);
}

// ---------------------------------------------------------------------------
// Commands

int cmd_make_gaps(const RunConfig& c, const std::string& corpus_path, double keep_complete, std::ostream& out,
                  std::ostream& err) {
    if (!(keep_complete >= 0.0 && keep_complete <= 1.0)) throw UsageError("--keep-complete must lie in [0, 1]");
    if (!fs::exists(corpus_path)) throw UsageError("corpus '" + corpus_path + "' does not exist");
    const auto corpus = load_corpus(corpus_path);

    std::vector<std::size_t> eligible;
    for (std::size_t i = 0; i < corpus.size(); ++i) {
        if (corpus[i].story.size() < 3) {
            err << "skip " << corpus[i].story.id() << ": " << corpus[i].story.size()
                << " sentences, no interior sentence\n";
        } else {
            eligible.push_back(i);
        }
    }
    std::set<std::size_t> complete;
    const auto order = seeded_permutation(eligible.size(), c.seed);
    const auto complete_count = static_cast<std::size_t>(std::floor(keep_complete * static_cast<double>(eligible.size()) + 1e-9));
    for (std::size_t i = 0; i < complete_count; ++i) complete.insert(eligible[order[i]]);

    std::vector<std::string> lines;
    std::map<int, std::size_t> histogram;
    for (auto i : eligible) {
        const auto annotated = consolidate_emotions(corpus[i]);
        GapRecord record = complete.count(i) ? GapRecord::complete_story(annotated)
                                             : GapRecord::from_instance(make_gap_instance(annotated));
        ++histogram[record.gold.value()];
        lines.push_back(gap_record_json(record));
    }
    write_output(output_path(c, "gaps.jsonl"), join_lines(lines), err);

    ordered_json summary;
    summary["stories"] = corpus.size();
    summary["instances"] = lines.size();
    summary["skipped"] = corpus.size() - eligible.size();
    summary["complete"] = complete_count;
    ordered_json hist = ordered_json::object();
    for (const auto& [k, n] : histogram) hist[std::to_string(k)] = n;
    summary["gold_k"] = hist;
    write_output(output_path(c, "gaps.summary.json"), summary.dump(2) + "\n", err);

    out << "instances " << lines.size() << " (skipped " << corpus.size() - eligible.size() << ")\n";
    out << "gold_k  count\n";
    for (const auto& [k, n] : histogram) out << lpad(std::to_string(k), 6) << "  " << n << '\n';
    return kExitOk;
}

int cmd_split(const RunConfig& c, const std::string& corpus_path, const std::string& ratios_text, std::ostream& out,
              std::ostream& err) {
    if (!fs::exists(corpus_path)) throw UsageError("corpus '" + corpus_path + "' does not exist");
    std::vector<double> parts;
    std::stringstream in(ratios_text);
    for (std::string item; std::getline(in, item, ',');) parts.push_back(parse_number<double>("ratios", item));
    if (parts.size() != 3) throw UsageError("--ratios needs three comma-separated values");
    const auto corpus = load_corpus(corpus_path);
    CorpusSplit<RawStory> split;
    try {
        split = split_corpus(corpus, SplitRatios{parts[0], parts[1], parts[2]}, c.seed);
    } catch (const InvariantError& e) {
        throw UsageError(e.what());
    }
    auto dump = [&](const std::vector<RawStory>& part, const std::string& name) {
        std::vector<std::string> lines;
        for (const auto& raw : part) lines.push_back(corpus_record_json(raw));
        write_output(output_path(c, name), join_lines(lines), err);
    };
    dump(split.train, "train.jsonl");
    dump(split.validation, "val.jsonl");
    dump(split.test, "test.jsonl");
    out << "train " << split.train.size() << "  val " << split.validation.size() << "  test " << split.test.size()
        << '\n';
    return kExitOk;
}

int run_pipeline_command(const RunConfig& c, const std::string& command, const std::string& gaps_path,
                         bool generate, bool correct_index_only, std::ostream& out, std::ostream& err) {
    const auto records = load_gaps_checked(gaps_path);
    const auto lexicon = generate ? load_lexicon(c) : std::nullopt;
    auto session = open_session(c, err);

    PipelineOptions options;
    options.with_ea = c.with_ea;
    options.with_prediction = c.with_prediction;
    options.generate = generate;
    options.shots = c.shots;
    options.generation = c.generation;
    Pipeline pipeline(*session.gateway, options);

    std::vector<Story> stories;
    for (const auto& r : records) stories.push_back(r.story);
    const auto results = run_batch(pipeline, stories, c.jobs);

    const std::string stem = command + "-" + mode_name(c.with_ea, c.with_prediction);
    write_output(output_path(c, stem + ".results.jsonl"), results_text(results), err);
    const auto report = build_report(records, results,
                                     ReportOptions{stem, correct_index_only, lexicon ? &*lexicon : nullptr});
    write_report(c, stem, report, out, err);

    std::size_t degraded = 0;
    for (const auto& r : results) {
        if (!r.degraded()) continue;
        ++degraded;
        for (const auto& s : r.stages) {
            if (s.failed()) err << "degraded " << r.story_id << " " << s.stage << ": " << *s.error << '\n';
        }
    }
    return degraded ? kExitPartial : kExitOk;
}

int cmd_t2act2t(const RunConfig& c, const std::string& corpus_path, std::ostream& out, std::ostream& err) {
    if (!fs::exists(corpus_path)) throw UsageError("corpus '" + corpus_path + "' does not exist");
    const auto corpus = load_corpus(corpus_path);
    if (corpus.empty()) throw UsageError("corpus '" + corpus_path + "' holds no stories");
    auto session = open_session(c, err);
    PipelineOptions options;
    options.shots = c.shots;
    options.generation = c.generation;
    Pipeline pipeline(*session.gateway, options);

    std::vector<std::pair<std::size_t, std::size_t>> jobs;
    for (std::size_t i = 0; i < corpus.size(); ++i) {
        for (std::size_t s = 1; s <= corpus[i].story.size(); ++s) jobs.emplace_back(i, s);
    }
    std::vector<RoundTrip> trips(jobs.size());
    parallel_for(jobs.size(), c.jobs,
                 [&](std::size_t j) { trips[j] = pipeline.t2act2t(corpus[jobs[j].first].story, jobs[j].second); });

    GenerationEvaluator evaluator;
    std::vector<std::string> lines;
    std::size_t degenerate = 0;
    std::size_t failed = 0;
    for (std::size_t j = 0; j < jobs.size(); ++j) {
        const auto& story = corpus[jobs[j].first].story;
        const auto& trip = trips[j];
        ordered_json line;
        line["schema_version"] = kResultSchemaVersion;
        line["id"] = story.id();
        line["sentence"] = trip.sentence_index;
        line["original"] = trip.original;
        ordered_json actions = ordered_json::object();
        for (std::size_t k = 0; k < trip.actions.size(); ++k) {
            actions[story.characters()[k]] = trip.actions[k].inner_text();
        }
        line["actions"] = std::move(actions);
        line["reconstruction"] = trip.reconstruction;
        line["degenerate"] = trip.degenerate;
        ordered_json stages = ordered_json::array();
        bool any_failed = false;
        for (const auto& s : trip.stages) {
            stages.push_back({{"stage", s.stage}, {"calls", s.calls}, {"error", s.error ? ordered_json(*s.error) : ordered_json(nullptr)}});
            any_failed = any_failed || s.failed();
        }
        line["stages"] = std::move(stages);
        lines.push_back(line.dump());
        if (trip.degenerate) ++degenerate;
        if (any_failed) {
            ++failed;
            continue;
        }
        evaluator.add(trip.reconstruction, trip.original);
    }
    write_output(output_path(c, "t2act2t.results.jsonl"), join_lines(lines), err);

    const auto scores = evaluator.finish();
    ordered_json report;
    report["schema_version"] = kResultSchemaVersion;
    report["label"] = "T2Act2T";
    report["sentences"] = jobs.size();
    report["scored"] = scores.count;
    report["degenerate"] = degenerate;
    report["failed"] = failed;
    report["tokenizer"] = kTokenizerVersion;
    report["BLEU-1"] = scores.bleu1;
    report["BLEU-2"] = scores.bleu2;
    report["ROUGE-L"] = 100.0 * scores.rougeL.f1;
    write_output(output_path(c, "t2act2t.report.json"), report.dump(2) + "\n", err);

    std::ostringstream text;
    text << "== T2Act2T: " << jobs.size() << " sentences, " << degenerate << " degenerate, " << failed
         << " failed ==\n\n";
    text << pad("", 12) << pad("BLEU-1", 10) << pad("BLEU-2", 10) << "ROUGE-L\n";
    text << pad("T2Act2T", 12) << pad(fixed(scores.bleu1, 2), 10) << pad(fixed(scores.bleu2, 2), 10)
         << fixed(100.0 * scores.rougeL.f1, 2) << '\n';
    write_output(output_path(c, "t2act2t.report.txt"), text.str(), err);
    out << text.str();
    return failed ? kExitPartial : kExitOk;
}

int cmd_export_sft(const RunConfig& c, const std::string& gaps_path, const std::vector<std::string>& stage_names,
                   std::ostream& out, std::ostream& err) {
    const auto records = load_gaps_checked(gaps_path);
    std::vector<PromptStage> stages;
    for (const auto& name : stage_names) {
        try {
            stages.push_back(parse_stage(name));
        } catch (const InvariantError& e) {
            throw UsageError(e.what());
        }
    }
    const TemplateCatalog& catalog = c.prompts.empty() ? TemplateCatalog::embedded() : TemplateCatalog::load(c.prompts);
    for (auto stage : stages) {
        std::vector<std::string> lines;
        for (const auto& record : export_sft(records, stage, catalog)) lines.push_back(sft_record_json(record));
        write_output(output_path(c, "sft-" + std::string(to_string(stage)) + ".jsonl"), join_lines(lines), err);
        out << to_string(stage) << ' ' << lines.size() << " records\n";
    }
    return kExitOk;
}

int cmd_eval(const RunConfig& c, const std::string& gold_path, const std::string& results_path,
             bool correct_index_only, std::ostream& out, std::ostream& err) {
    const auto gold = load_gaps_checked(gold_path);
    if (!fs::exists(results_path)) throw UsageError("result file '" + results_path + "' does not exist");
    const auto results = load_results(results_path);

    std::set<std::string> gold_ids;
    std::set<std::string> result_ids;
    for (const auto& g : gold) gold_ids.insert(g.story.id());
    for (const auto& r : results) result_ids.insert(r.story_id);
    std::vector<std::string> orphans;
    for (const auto& id : result_ids) {
        if (!gold_ids.count(id)) orphans.push_back("result-only " + id);
    }
    for (const auto& id : gold_ids) {
        if (!result_ids.count(id)) orphans.push_back("gold-only " + id);
    }
    if (!orphans.empty()) {
        std::string message = "ids differ between gold and results:";
        for (const auto& o : orphans) message += "\n  " + o;
        throw UsageError(message);
    }

    const auto lexicon = load_lexicon(c);
    const std::string stem =
        "eval-" + (results.empty() ? std::string("plain") : mode_name(results.front().with_ea, results.front().with_prediction));
    const auto report =
        build_report(gold, results, ReportOptions{stem, correct_index_only, lexicon ? &*lexicon : nullptr});
    write_report(c, stem, report, out, err);
    return kExitOk;
}

} // namespace

int run_cli(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
    CLI::App app{"Missing-sentence detection and generation toolkit", "storylogic"};
    app.require_subcommand(1);
    app.fallthrough();

    std::string config_path;
    std::map<std::string, std::string> flag_values;
    std::map<std::string, CLI::Option*> flag_options;
    std::map<std::string, std::string> raw;
    bool ea = true;

    app.add_option("--config", config_path, "JSON configuration file");
    auto add_flag_option = [&](const std::string& key, const std::string& name, const std::string& help) {
        flag_options[key] = app.add_option(name, raw[key], help);
    };
    add_flag_option("backend", "--backend", "mock:<dir>, an http(s) base URL, or openai");
    add_flag_option("model", "--model", "Model name sent to the endpoint");
    add_flag_option("shots", "--shots", "zero, one or few");
    add_flag_option("seed", "--seed", "Seed for every random choice");
    add_flag_option("jobs", "--jobs", "Stories processed concurrently");
    add_flag_option("out", "--out", "Output directory");
    add_flag_option("lexicon", "--lexicon", "Word-level VAD/AoA/concreteness lexicon (TSV)");
    add_flag_option("exemplars", "--exemplars", "Exemplar JSONL for one/few-shot prompts");
    add_flag_option("prompts", "--prompts", "Template directory replacing the built-in catalog");
    add_flag_option("temperature", "--temperature", "Sampling temperature");
    add_flag_option("top_p", "--top-p", "Nucleus sampling mass");
    add_flag_option("max_tokens", "--max-tokens", "Completion token limit");
    add_flag_option("retries", "--retries", "Retries for transient backend failures");
    add_flag_option("timeout_ms", "--timeout-ms", "Per-request timeout");
    add_flag_option("min_interval_ms", "--min-interval-ms", "Minimum spacing between requests");
    auto* ea_flag = app.add_flag("--ea,!--no-ea", ea, "Interleave actions and emotions into prompts");
    auto* prediction_flag = app.add_flag("--with-prediction", "Predict gap actions and emotions before generating");

    auto* make_gaps = app.add_subcommand("make-gaps", "Build gap instances from an annotated corpus");
    std::string corpus_path;
    double keep_complete = 0.0;
    make_gaps->add_option("corpus", corpus_path, "Corpus JSONL")->required();
    make_gaps->add_option("--keep-complete", keep_complete, "Fraction of stories kept whole (gold -1)");

    auto* split = app.add_subcommand("split", "Partition a corpus into train/val/test");
    std::string ratios = "0.8,0.1,0.1";
    split->add_option("corpus", corpus_path, "Corpus JSONL")->required();
    split->add_option("--ratios", ratios, "train,val,test");

    std::string gaps_path;
    bool correct_index_only = false;
    auto* check = app.add_subcommand("check", "Locate the missing sentence");
    check->add_option("gaps", gaps_path, "Gap JSONL")->required();

    auto* complete = app.add_subcommand("complete", "Locate and generate the missing sentence");
    complete->add_option("gaps", gaps_path, "Gap JSONL")->required();
    complete->add_flag("--correct-index-only", correct_index_only, "Score generation only where the index is right");

    auto* t2act2t = app.add_subcommand("t2act2t", "Text to action to text round trip");
    t2act2t->add_option("corpus", corpus_path, "Corpus JSONL")->required();

    auto* export_sft = app.add_subcommand("export-sft", "Write instruction/input/output training records");
    std::vector<std::string> stage_names{"logic_check_ea"};
    export_sft->add_option("gaps", gaps_path, "Gap JSONL")->required();
    export_sft->add_option("--stage", stage_names, "Stage name (repeatable)");

    auto* eval = app.add_subcommand("eval", "Re-score a result file against gold");
    std::string results_path;
    eval->add_option("gold", gaps_path, "Gap JSONL")->required();
    eval->add_option("results", results_path, "Result JSONL")->required();
    eval->add_flag("--correct-index-only", correct_index_only, "Score generation only where the index is right");

    std::vector<std::string> argv_storage{"storylogic"};
    argv_storage.insert(argv_storage.end(), args.begin(), args.end());
    std::vector<char*> argv;
    for (auto& a : argv_storage) argv.push_back(a.data());

    try {
        app.parse(static_cast<int>(argv.size()), argv.data());
    } catch (const CLI::ParseError& e) {
        const int code = app.exit(e, out, err);
        return code == 0 ? kExitOk : kExitInvalid;
    }

    try {
        for (const auto& [key, option] : flag_options) {
            if (option->count() > 0) flag_values[key] = raw[key];
        }
        if (ea_flag->count() > 0) flag_values["ea"] = ea ? "true" : "false";
        if (prediction_flag->count() > 0) flag_values["with_prediction"] = "true";

        const RunConfig config = resolve_config(config_path, flag_values);
        const std::string command = app.get_subcommands().front()->get_name();
        print_header(err, command, config);

        if (*make_gaps) return cmd_make_gaps(config, corpus_path, keep_complete, out, err);
        if (*split) return cmd_split(config, corpus_path, ratios, out, err);
        if (*check) return run_pipeline_command(config, "check", gaps_path, false, false, out, err);
        if (*complete) return run_pipeline_command(config, "complete", gaps_path, true, correct_index_only, out, err);
        if (*t2act2t) return cmd_t2act2t(config, corpus_path, out, err);
        if (*export_sft) return cmd_export_sft(config, gaps_path, stage_names, out, err);
        if (*eval) return cmd_eval(config, gaps_path, results_path, correct_index_only, out, err);
    } catch (const UsageError& e) {
        err << "error: " << e.what() << '\n';
        return kExitInvalid;
    } catch (const CorpusError& e) {
        err << "error: " << e.what() << '\n';
        return kExitInvalid;
    } catch (const TemplateError& e) {
        err << "error: " << e.what() << '\n';
        return kExitInvalid;
    } catch (const InvariantError& e) {
        err << "error: " << e.what() << '\n';
        return kExitInvalid;
    } catch (const std::exception& e) {
        err << "error: " << e.what() << '\n';
        return kExitPartial;
    }
    return kExitInvalid;
}

} // namespace storylogic
