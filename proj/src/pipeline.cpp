#include "storylogic/pipeline.hpp"

#include <algorithm>
#include <atomic>
#include <exception>
#include <fstream>
#include <mutex>
#include <set>
#include <thread>

#include <json.hpp>

#include "text_util.hpp"

namespace storylogic {

using ordered_json = nlohmann::ordered_json;

namespace {

constexpr WarningKind kLastWarningKind = WarningKind::fallback_format;

WarningKind parse_warning_kind(std::string_view name) {
    for (int i = 0; i <= static_cast<int>(kLastWarningKind); ++i) {
        const auto kind = static_cast<WarningKind>(i);
        if (to_string(kind) == name) return kind;
    }
    throw InvariantError("unknown warning kind '" + std::string(name) + "'");
}

std::string annotation_lines(const Story& story, const std::vector<Annotation>& row) {
    std::vector<ActionRecord> actions;
    std::vector<EmotionAnnotation> emotions;
    for (const auto& cell : row) {
        actions.push_back(cell.action);
        emotions.push_back(cell.emotion);
    }
    return "Actions: " + serialize_action_block(story.characters(), actions) +
           "\nEmotions: " + serialize_emotion_block(story.characters(), emotions);
}

std::string flanking_annotations(const AnnotatedStory& annotated, int k) {
    const auto& story = annotated.story();
    std::string out;
    for (int s : {k - 1, k}) {
        if (!out.empty()) out += '\n';
        out += "Sentence " + std::to_string(s) + ":\n";
        out += annotation_lines(story, annotated.grid()[static_cast<std::size_t>(s - 1)]);
    }
    return out;
}

void fail(StageLog& log, const std::string& message) {
    log.error = log.error ? *log.error + "; " + message : message;
}

ParseDiagnostics diagnostics_from_json(const ordered_json& j) {
    ParseDiagnostics d;
    d.recovered = j.at("recovered").get<bool>();
    for (const auto& w : j.at("warnings")) {
        d.warnings.push_back(ParseWarning{parse_warning_kind(w.at("kind").get<std::string>()),
                                          w.at("begin").get<std::size_t>(), w.at("end").get<std::size_t>(),
                                          w.at("message").get<std::string>()});
    }
    return d;
}

ordered_json diagnostics_json(const ParseDiagnostics& d) {
    ordered_json warnings = ordered_json::array();
    for (const auto& w : d.warnings) {
        warnings.push_back(
            {{"kind", to_string(w.kind)}, {"begin", w.begin}, {"end", w.end}, {"message", w.message}});
    }
    return {{"recovered", d.recovered}, {"warnings", std::move(warnings)}};
}

ActionRecord loose_action(std::string_view inner) {
    ParseDiagnostics ignored;
    return parse_action_inner(inner, ignored);
}

EmotionAnnotation loose_emotion(std::string_view inner) {
    ParseDiagnostics ignored;
    return parse_emotion_inner(inner, ignored);
}

std::size_t opening_quote(std::string_view s) {
    if (!s.empty() && (s.front() == '"' || s.front() == '\'')) return 1;
    if (s.substr(0, 3) == "\xE2\x80\x9C") return 3;
    return 0;
}

std::size_t closing_quote(std::string_view s) {
    if (!s.empty() && (s.back() == '"' || s.back() == '\'')) return 1;
    if (s.size() >= 3 && s.substr(s.size() - 3) == "\xE2\x80\x9D") return 3;
    return 0;
}

} // namespace

// ---------------------------------------------------------------------------
// Rendering

std::string render_story(const Story& story) {
    std::string out;
    for (std::size_t s = 1; s <= story.size(); ++s) {
        if (s > 1) out += '\n';
        out += "Sentence " + std::to_string(s) + ": " + story.sentence(s);
    }
    return out;
}

std::string render_story_ea(const AnnotatedStory& annotated) {
    const auto& story = annotated.story();
    std::string out;
    for (std::size_t s = 1; s <= story.size(); ++s) {
        if (s > 1) out += '\n';
        out += "Sentence " + std::to_string(s) + ": " + story.sentence(s) + '\n';
        out += annotation_lines(story, annotated.grid()[s - 1]);
    }
    return out;
}

std::string render_characters(const std::vector<std::string>& characters) {
    std::string out;
    for (std::size_t i = 0; i < characters.size(); ++i) {
        if (i) out += ", ";
        out += characters[i];
    }
    return out;
}

std::string first_sentence(std::string_view text) {
    std::size_t pos = 0;
    while (pos <= text.size()) {
        auto eol = text.find('\n', pos);
        if (eol == std::string_view::npos) eol = text.size();
        auto line = detail::trim(text.substr(pos, eol - pos));
        pos = eol + 1;
        if (line.empty()) continue;
        while (true) {
            const auto front = opening_quote(line);
            const auto back = front ? closing_quote(line) : 0;
            if (!front || !back || front + back > line.size()) break;
            line = detail::trim(line.substr(front, line.size() - front - back));
        }
        if (!line.empty()) return std::string(line);
    }
    return {};
}

GapPrediction parse_gap_prediction(std::string_view text, std::span<const std::string> characters) {
    GapPrediction prediction;
    std::string action_text;
    std::string emotion_text;
    const auto marker = detail::irfind(text, "emotions:");
    if (marker != std::string_view::npos) {
        action_text = std::string(text.substr(0, marker));
        emotion_text = std::string(text.substr(marker));
    } else {
        // No marker: route each line by the shape of its tags.
        prediction.diagnostics.recover(WarningKind::fallback_format, 0, text.size(),
                                       "no 'Emotions:' line; lines routed by tag shape");
        std::size_t pos = 0;
        while (pos < text.size()) {
            auto eol = text.find('\n', pos);
            if (eol == std::string_view::npos) eol = text.size();
            const auto line = text.substr(pos, eol - pos);
            pos = eol + 1;
            const auto folded = detail::fold(line);
            const bool emotional = folded.find(">(true") != std::string::npos ||
                                   folded.find(">(false") != std::string::npos ||
                                   folded.find("> (true") != std::string::npos ||
                                   folded.find("> (false") != std::string::npos;
            (emotional ? emotion_text : action_text).append(line).push_back('\n');
        }
    }
    auto actions = parse_action_block(action_text, characters);
    auto emotions = parse_emotion_block(emotion_text, characters);
    prediction.actions = std::move(actions.records);
    prediction.emotions = std::move(emotions.annotations);
    prediction.diagnostics.merge(actions.diagnostics);
    prediction.diagnostics.merge(emotions.diagnostics);
    return prediction;
}

std::string serialize_gap_prediction(std::span<const std::string> characters, const std::vector<Annotation>& cells) {
    std::vector<ActionRecord> actions;
    std::vector<EmotionAnnotation> emotions;
    for (const auto& cell : cells) {
        actions.push_back(cell.action);
        emotions.push_back(cell.emotion);
    }
    return "Actions: " + serialize_action_block(characters, actions) +
           "\nEmotions: " + serialize_emotion_block(characters, emotions);
}

// ---------------------------------------------------------------------------
// Results

bool PipelineResult::degraded() const noexcept {
    return std::any_of(stages.begin(), stages.end(), [](const StageLog& s) { return s.failed(); });
}

double PipelineResult::timing_ms() const noexcept {
    double total = 0.0;
    for (const auto& s : stages) total += s.latency_ms;
    return total;
}

const StageLog* PipelineResult::stage(std::string_view name) const noexcept {
    for (const auto& s : stages) {
        if (s.stage == name) return &s;
    }
    return nullptr;
}

std::string pipeline_result_json(const PipelineResult& r) {
    ordered_json j;
    j["schema_version"] = kResultSchemaVersion;
    j["id"] = r.story_id;
    j["mode"] = {{"with_ea", r.with_ea}, {"with_prediction", r.with_prediction},
                 {"with_generation", r.with_generation}};
    j["characters"] = r.characters;
    j["sentence_count"] = r.sentence_count;
    if (r.annotations) {
        ordered_json actions = ordered_json::array();
        ordered_json emotions = ordered_json::array();
        for (const auto& row : *r.annotations) {
            ordered_json arow = ordered_json::array();
            ordered_json erow = ordered_json::array();
            for (const auto& cell : row) {
                arow.push_back(cell.action.inner_text());
                erow.push_back(cell.emotion.inner_text());
            }
            actions.push_back(std::move(arow));
            emotions.push_back(std::move(erow));
        }
        j["annotations"] = {{"actions", std::move(actions)}, {"emotions", std::move(emotions)}};
    } else {
        j["annotations"] = nullptr;
    }
    j["verdict"] = r.verdict ? ordered_json(r.verdict->value()) : ordered_json(nullptr);
    if (r.predicted_gap) {
        ordered_json actions = ordered_json::object();
        ordered_json emotions = ordered_json::object();
        for (std::size_t c = 0; c < r.predicted_gap->size(); ++c) {
            actions[r.characters.at(c)] = (*r.predicted_gap)[c].action.inner_text();
            emotions[r.characters.at(c)] = (*r.predicted_gap)[c].emotion.inner_text();
        }
        j["predicted_gap"] = {{"actions", std::move(actions)}, {"emotions", std::move(emotions)}};
    } else {
        j["predicted_gap"] = nullptr;
    }
    j["generated_sentence"] = r.generated_sentence ? ordered_json(*r.generated_sentence) : ordered_json(nullptr);
    ordered_json stages = ordered_json::array();
    for (const auto& s : r.stages) {
        ordered_json js;
        js["stage"] = s.stage;
        js["calls"] = s.calls;
        js["latency_ms"] = s.latency_ms;
        js["parse"] = diagnostics_json(s.parse);
        js["error"] = s.error ? ordered_json(*s.error) : ordered_json(nullptr);
        stages.push_back(std::move(js));
    }
    j["stages"] = std::move(stages);
    j["timing_ms"] = r.timing_ms();
    return j.dump();
}

PipelineResult parse_pipeline_result(std::string_view line) {
    const auto j = ordered_json::parse(line);
    const int version = j.at("schema_version").get<int>();
    if (version != kResultSchemaVersion) {
        throw InvariantError("unsupported result schema_version " + std::to_string(version));
    }
    PipelineResult r;
    r.story_id = j.at("id").get<std::string>();
    r.with_ea = j.at("mode").at("with_ea").get<bool>();
    r.with_prediction = j.at("mode").at("with_prediction").get<bool>();
    r.with_generation = j.at("mode").at("with_generation").get<bool>();
    r.characters = j.at("characters").get<std::vector<std::string>>();
    r.sentence_count = j.at("sentence_count").get<std::size_t>();
    if (const auto& a = j.at("annotations"); !a.is_null()) {
        const auto& actions = a.at("actions");
        const auto& emotions = a.at("emotions");
        if (actions.size() != r.sentence_count || emotions.size() != r.sentence_count) {
            throw InvariantError("annotation rows must match sentence_count");
        }
        AnnotationGrid grid(r.sentence_count);
        for (std::size_t s = 0; s < r.sentence_count; ++s) {
            if (actions[s].size() != r.characters.size() || emotions[s].size() != r.characters.size()) {
                throw InvariantError("annotation row must have one entry per character");
            }
            for (std::size_t c = 0; c < r.characters.size(); ++c) {
                grid[s].push_back(Annotation{loose_action(actions[s][c].get<std::string>()),
                                             loose_emotion(emotions[s][c].get<std::string>())});
            }
        }
        r.annotations = std::move(grid);
    }
    if (const auto& v = j.at("verdict"); !v.is_null()) r.verdict = GapVerdict::from_value(v.get<int>());
    if (const auto& p = j.at("predicted_gap"); !p.is_null()) {
        std::vector<Annotation> cells;
        for (const auto& name : r.characters) {
            cells.push_back(Annotation{loose_action(p.at("actions").at(name).get<std::string>()),
                                       loose_emotion(p.at("emotions").at(name).get<std::string>())});
        }
        r.predicted_gap = std::move(cells);
    }
    if (const auto& g = j.at("generated_sentence"); !g.is_null()) r.generated_sentence = g.get<std::string>();
    for (const auto& js : j.at("stages")) {
        StageLog s;
        s.stage = js.at("stage").get<std::string>();
        s.calls = js.at("calls").get<int>();
        s.latency_ms = js.at("latency_ms").get<double>();
        s.parse = diagnostics_from_json(js.at("parse"));
        if (!js.at("error").is_null()) s.error = js["error"].get<std::string>();
        r.stages.push_back(std::move(s));
    }
    return r;
}

std::vector<PipelineResult> load_results(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw Error("cannot open result file '" + path + "'");
    std::vector<PipelineResult> out;
    std::set<std::string> ids;
    std::string line;
    std::size_t line_no = 0;
    while (std::getline(in, line)) {
        ++line_no;
        if (detail::trim(line).empty()) continue;
        try {
            auto r = parse_pipeline_result(line);
            if (!ids.insert(r.story_id).second) throw InvariantError("duplicate story id '" + r.story_id + "'");
            out.push_back(std::move(r));
        } catch (const std::exception& e) {
            throw CorpusError(line_no, line, e.what());
        }
    }
    return out;
}

// ---------------------------------------------------------------------------
// Stages

Pipeline::Pipeline(Gateway& gateway, PipelineOptions options) : gateway_(gateway), options_(std::move(options)) {
    options_.generation.validate();
}

Completion Pipeline::call(PromptStage stage, Variables variables, const RequestContext& context, StageLog& log) {
    ++log.calls;
    auto completion =
        gateway_.run(PromptRequest{stage, options_.shots, std::move(variables)}, options_.generation, context);
    log.latency_ms += completion.usage.latency_ms;
    return completion;
}

std::vector<std::vector<ActionRecord>> Pipeline::abstract_actions(const Story& story, StageLog& log) {
    const auto& characters = story.characters();
    const RequestContext context{characters, story.size()};
    const auto rendered = render_story(story);
    std::vector<std::vector<ActionRecord>> out;
    for (std::size_t s = 1; s <= story.size(); ++s) {
        try {
            const auto reply = call(PromptStage::action_abstract,
                                    {{"story", rendered},
                                     {"characters", render_characters(characters)},
                                     {"sentence", story.sentence(s)}},
                                    context, log);
            auto block = parse_action_block(reply.text, characters);
            log.parse.merge(block.diagnostics);
            out.push_back(std::move(block.records));
        } catch (const Error& e) {
            fail(log, "sentence " + std::to_string(s) + ": " + e.what());
            log.parse.recovered = true;
            out.emplace_back(characters.size(), ActionRecord::none());
        }
    }
    return out;
}

std::vector<std::vector<EmotionAnnotation>> Pipeline::classify_emotions(const Story& story, StageLog& log) {
    const auto& characters = story.characters();
    const RequestContext context{characters, story.size()};
    const auto rendered = render_story(story);
    std::vector<std::vector<EmotionAnnotation>> out;
    for (std::size_t s = 1; s <= story.size(); ++s) {
        try {
            const auto reply = call(PromptStage::emotion_classify,
                                    {{"story", rendered},
                                     {"characters", render_characters(characters)},
                                     {"sentence", story.sentence(s)}},
                                    context, log);
            auto block = parse_emotion_block(reply.text, characters);
            log.parse.merge(block.diagnostics);
            out.push_back(std::move(block.annotations));
        } catch (const Error& e) {
            fail(log, "sentence " + std::to_string(s) + ": " + e.what());
            log.parse.recovered = true;
            out.emplace_back(characters.size(), EmotionAnnotation::unaffected());
        }
    }
    return out;
}

std::optional<GapVerdict> Pipeline::check_logic(const Story& story, const AnnotatedStory* annotations,
                                                 StageLog& log) {
    const RequestContext context{story.characters(), story.size()};
    try {
        Completion reply;
        if (annotations) {
            reply = call(PromptStage::logic_check_ea,
                         {{"story", render_story_ea(*annotations)},
                          {"characters", render_characters(story.characters())}},
                         context, log);
        } else {
            reply = call(PromptStage::logic_check_plain, {{"story", render_story(story)}}, context, log);
        }
        return parse_index_verdict(reply.text, story.size() + 1);
    } catch (const RangeError& e) {
        fail(log, std::string("range: ") + e.what());
    } catch (const Error& e) {
        fail(log, e.what());
    }
    return std::nullopt;
}

std::optional<std::vector<Annotation>> Pipeline::predict_gap_ea(const AnnotatedStory& annotated, int k,
                                                                StageLog& log) {
    const auto& story = annotated.story();
    if (!GapVerdict::insert_before(k).valid_for(story.size() + 1) || k < 2) {
        fail(log, "gap index " + std::to_string(k) + " outside the story");
        return std::nullopt;
    }
    try {
        const auto reply = call(PromptStage::predict_ea,
                                {{"story", render_story(story)},
                                 {"annotations", flanking_annotations(annotated, k)},
                                 {"characters", render_characters(story.characters())},
                                 {"index", std::to_string(k)}},
                                RequestContext{story.characters(), story.size()}, log);
        auto prediction = parse_gap_prediction(reply.text, story.characters());
        log.parse.merge(prediction.diagnostics);
        std::vector<Annotation> cells;
        for (std::size_t c = 0; c < story.characters().size(); ++c) {
            cells.push_back(Annotation{prediction.actions[c], prediction.emotions[c]});
        }
        return cells;
    } catch (const Error& e) {
        fail(log, e.what());
    }
    return std::nullopt;
}

std::optional<std::string> Pipeline::generate_sentence(const AnnotatedStory& annotated, int k,
                                                       const std::vector<Annotation>* predictions,
                                                       GenerationMode mode, StageLog& log) {
    const auto& story = annotated.story();
    if (!GapVerdict::insert_before(k).valid_for(story.size() + 1) || k < 2) {
        fail(log, "gap index " + std::to_string(k) + " outside the story");
        return std::nullopt;
    }
    if (mode == GenerationMode::ea_pred && !predictions) {
        fail(log, "prediction mode needs predictions");
        return std::nullopt;
    }
    Variables vars{{"index", std::to_string(k)}, {"characters", render_characters(story.characters())}};
    PromptStage stage = PromptStage::generate_plain;
    switch (mode) {
    case GenerationMode::plain: vars["story"] = render_story(story); break;
    case GenerationMode::ea:
        stage = PromptStage::generate_ea;
        vars["story"] = render_story_ea(annotated);
        break;
    case GenerationMode::ea_pred:
        stage = PromptStage::generate_ea_pred;
        vars["story"] = render_story_ea(annotated);
        vars["predictions"] = serialize_gap_prediction(story.characters(), *predictions);
        break;
    }
    try {
        const auto reply = call(stage, std::move(vars), RequestContext{story.characters(), story.size()}, log);
        auto sentence = first_sentence(reply.text);
        if (sentence.empty()) {
            fail(log, "empty generation");
            return std::nullopt;
        }
        return sentence;
    } catch (const Error& e) {
        fail(log, e.what());
    }
    return std::nullopt;
}

RoundTrip Pipeline::t2act2t(const Story& story, std::size_t index) {
    RoundTrip trip;
    trip.sentence_index = index;
    trip.original = story.sentence(index);
    const auto& characters = story.characters();
    const RequestContext context{characters, story.size()};

    StageLog abstract{"action_abstract"};
    try {
        const auto reply = call(PromptStage::action_abstract,
                                {{"story", render_story(story)},
                                 {"characters", render_characters(characters)},
                                 {"sentence", trip.original}},
                                context, abstract);
        auto block = parse_action_block(reply.text, characters);
        abstract.parse.merge(block.diagnostics);
        trip.actions = std::move(block.records);
    } catch (const Error& e) {
        fail(abstract, e.what());
        abstract.parse.recovered = true;
        trip.actions.assign(characters.size(), ActionRecord::none());
    }
    trip.stages.push_back(std::move(abstract));

    trip.degenerate = std::all_of(trip.actions.begin(), trip.actions.end(),
                                  [](const ActionRecord& a) { return a.is_none(); });
    if (trip.degenerate) return trip;

    StageLog regenerate{"t2act2t"};
    try {
        const auto reply = call(PromptStage::t2act2t,
                                {{"characters", render_characters(characters)},
                                 {"actions", serialize_action_block(characters, trip.actions)}},
                                context, regenerate);
        trip.reconstruction = first_sentence(reply.text);
        if (trip.reconstruction.empty()) fail(regenerate, "empty generation");
    } catch (const Error& e) {
        fail(regenerate, e.what());
    }
    trip.stages.push_back(std::move(regenerate));
    return trip;
}

PipelineResult Pipeline::run(const Story& story) {
    PipelineResult result;
    result.story_id = story.id();
    result.characters = story.characters();
    result.sentence_count = story.size();
    result.with_ea = options_.with_ea;
    result.with_prediction = options_.with_prediction;
    result.with_generation = options_.generate;

    std::optional<AnnotatedStory> annotated;
    if (options_.with_ea) {
        StageLog actions_log{"action_abstract"};
        const auto actions = abstract_actions(story, actions_log);
        result.stages.push_back(std::move(actions_log));
        StageLog emotions_log{"emotion_classify"};
        const auto emotions = classify_emotions(story, emotions_log);
        result.stages.push_back(std::move(emotions_log));

        AnnotationGrid grid(story.size());
        for (std::size_t s = 0; s < story.size(); ++s) {
            for (std::size_t c = 0; c < story.characters().size(); ++c) {
                grid[s].push_back(Annotation{actions[s][c], emotions[s][c]});
            }
        }
        annotated.emplace(story, grid);
        result.annotations = std::move(grid);
    }

    StageLog check_log{options_.with_ea ? "logic_check_ea" : "logic_check_plain"};
    result.verdict = check_logic(story, annotated ? &*annotated : nullptr, check_log);
    result.stages.push_back(std::move(check_log));
    if (!options_.generate || !result.verdict || result.verdict->is_complete()) return result;

    const int k = result.verdict->index();
    if (options_.with_ea && options_.with_prediction) {
        StageLog predict_log{"predict_ea"};
        result.predicted_gap = predict_gap_ea(*annotated, k, predict_log);
        result.stages.push_back(std::move(predict_log));
    }

    GenerationMode mode = GenerationMode::plain;
    if (options_.with_ea) mode = result.predicted_gap ? GenerationMode::ea_pred : GenerationMode::ea;
    const PromptStage stage = mode == GenerationMode::plain ? PromptStage::generate_plain
                              : mode == GenerationMode::ea  ? PromptStage::generate_ea
                                                            : PromptStage::generate_ea_pred;
    StageLog generate_log{std::string(to_string(stage))};
    const AnnotatedStory context = annotated ? *annotated : AnnotatedStory::blank(story);
    result.generated_sentence = generate_sentence(
        context, k, result.predicted_gap ? &*result.predicted_gap : nullptr, mode, generate_log);
    result.stages.push_back(std::move(generate_log));
    return result;
}

// ---------------------------------------------------------------------------
// Batches

void parallel_for(std::size_t n, std::size_t jobs, const std::function<void(std::size_t)>& fn) {
    jobs = std::max<std::size_t>(1, std::min(jobs, n));
    if (jobs <= 1) {
        for (std::size_t i = 0; i < n; ++i) fn(i);
        return;
    }
    std::atomic<std::size_t> next{0};
    std::exception_ptr error;
    std::mutex error_mutex;
    std::vector<std::thread> workers;
    workers.reserve(jobs);
    for (std::size_t t = 0; t < jobs; ++t) {
        workers.emplace_back([&] {
            for (std::size_t i = next++; i < n; i = next++) {
                try {
                    fn(i);
                } catch (...) {
                    std::lock_guard lock(error_mutex);
                    if (!error) error = std::current_exception();
                }
            }
        });
    }
    for (auto& w : workers) w.join();
    if (error) std::rethrow_exception(error);
}

std::vector<PipelineResult> run_batch(Pipeline& pipeline, const std::vector<Story>& stories, std::size_t jobs) {
    std::vector<PipelineResult> results(stories.size());
    parallel_for(stories.size(), jobs, [&](std::size_t i) { results[i] = pipeline.run(stories[i]); });
    return results;
}

// ---------------------------------------------------------------------------
// Training export

std::vector<SftRecord> export_sft(const std::vector<GapRecord>& records, PromptStage stage,
                                  const TemplateCatalog& catalog) {
    const auto& tmpl = catalog.at(stage);
    std::vector<SftRecord> out;
    for (const auto& record : records) {
        const auto& story = record.story;
        const auto& characters = story.characters();
        const bool gapped = !record.gold.is_complete();
        const bool check_stage = stage == PromptStage::logic_check_plain || stage == PromptStage::logic_check_ea;
        if (!gapped && !check_stage) continue;

        std::vector<ActionRecord> gold_actions;
        std::vector<EmotionAnnotation> gold_emotions;
        for (const auto& cell : record.gold_annotations) {
            gold_actions.push_back(cell.action);
            gold_emotions.push_back(cell.emotion);
        }
        const std::string k = std::to_string(record.gold.value());
        Variables vars{{"characters", render_characters(characters)}, {"index", k}};
        std::string output;

        switch (stage) {
        case PromptStage::action_abstract:
        case PromptStage::emotion_classify: {
            const auto full = reinsert(GapInstance{record.annotated(), record.gold.index(), record.gold_sentence,
                                                   record.gold_annotations});
            vars["story"] = render_story(full.story());
            vars["sentence"] = record.gold_sentence;
            output = stage == PromptStage::action_abstract ? serialize_action_block(characters, gold_actions)
                                                           : serialize_emotion_block(characters, gold_emotions);
            break;
        }
        case PromptStage::logic_check_plain:
            vars["story"] = render_story(story);
            output = serialize_verdict(record.gold);
            break;
        case PromptStage::logic_check_ea:
            vars["story"] = render_story_ea(record.annotated());
            output = serialize_verdict(record.gold);
            break;
        case PromptStage::predict_ea:
            vars["story"] = render_story(story);
            vars["annotations"] = flanking_annotations(record.annotated(), record.gold.index());
            output = serialize_gap_prediction(characters, record.gold_annotations);
            break;
        case PromptStage::generate_plain:
            vars["story"] = render_story(story);
            output = record.gold_sentence;
            break;
        case PromptStage::generate_ea:
            vars["story"] = render_story_ea(record.annotated());
            output = record.gold_sentence;
            break;
        case PromptStage::generate_ea_pred:
            vars["story"] = render_story_ea(record.annotated());
            vars["predictions"] = serialize_gap_prediction(characters, record.gold_annotations);
            output = record.gold_sentence;
            break;
        case PromptStage::t2act2t:
            vars["actions"] = serialize_action_block(characters, gold_actions);
            output = record.gold_sentence;
            break;
        }
        out.push_back(SftRecord{tmpl.system, render_template(tmpl.user, vars), std::move(output)});
    }
    return out;
}

std::string sft_record_json(const SftRecord& record) {
    ordered_json j;
    j["instruction"] = record.instruction;
    j["input"] = record.input;
    j["output"] = record.output;
    return j.dump();
}

} // namespace storylogic
