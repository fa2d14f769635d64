#pragma once

// Per-story orchestration: actions, emotions, gap check, gap prediction and
// sentence generation, plus the action round trip and training-data export.

#include <cstddef>
#include <functional>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "storylogic/codec.hpp"
#include "storylogic/gateway.hpp"
#include "storylogic/records.hpp"

namespace storylogic {

inline constexpr int kResultSchemaVersion = 1;

struct PipelineOptions {
    bool with_ea = true;
    bool with_prediction = false;
    bool generate = true;  // false stops after the gap check
    ShotMode shots = ShotMode::zero;
    GenerationConfig generation;
};

// Outcome of one stage for one story.
struct StageLog {
    StageLog() = default;
    explicit StageLog(std::string name) : stage(std::move(name)) {}

    std::string stage;
    int calls = 0;
    double latency_ms = 0.0;
    ParseDiagnostics parse;
    std::optional<std::string> error;

    bool failed() const noexcept { return error.has_value(); }
    friend bool operator==(const StageLog&, const StageLog&) = default;
};

struct PipelineResult {
    std::string story_id;
    std::vector<std::string> characters;
    std::size_t sentence_count = 0;
    std::optional<AnnotationGrid> annotations;          // EA mode only
    std::optional<GapVerdict> verdict;                  // absent when the check failed
    std::optional<std::vector<Annotation>> predicted_gap;
    std::optional<std::string> generated_sentence;
    std::vector<StageLog> stages;
    bool with_ea = false;
    bool with_prediction = false;
    bool with_generation = false;

    bool degraded() const noexcept;
    double timing_ms() const noexcept;
    const StageLog* stage(std::string_view name) const noexcept;

    friend bool operator==(const PipelineResult&, const PipelineResult&) = default;
};

std::string pipeline_result_json(const PipelineResult& result);
PipelineResult parse_pipeline_result(std::string_view line);
std::vector<PipelineResult> load_results(const std::string& path);

// `Sentence i: text` lines.
std::string render_story(const Story& story);
// Each sentence line followed by its `Actions:` and `Emotions:` lines.
std::string render_story_ea(const AnnotatedStory& annotated);
std::string render_characters(const std::vector<std::string>& characters);

enum class GenerationMode { plain, ea, ea_pred };

struct RoundTrip {
    std::size_t sentence_index = 0;
    std::string original;
    std::vector<ActionRecord> actions;
    std::string reconstruction;
    bool degenerate = false;
    std::vector<StageLog> stages;
};

class Pipeline {
public:
    Pipeline(Gateway& gateway, PipelineOptions options);

    const PipelineOptions& options() const noexcept { return options_; }

    // One call per sentence, in order. A sentence whose answer cannot be
    // parsed falls back to NoAction for every character.
    std::vector<std::vector<ActionRecord>> abstract_actions(const Story& story, StageLog& log);
    std::vector<std::vector<EmotionAnnotation>> classify_emotions(const Story& story, StageLog& log);

    // Verdict checked against n = size + 1. Failures leave the log with an
    // error and return nullopt.
    std::optional<GapVerdict> check_logic(const Story& story, const AnnotatedStory* annotations, StageLog& log);

    // Uses annotations of sentences k-1 and k only.
    std::optional<std::vector<Annotation>> predict_gap_ea(const AnnotatedStory& annotated, int k, StageLog& log);

    std::optional<std::string> generate_sentence(const AnnotatedStory& annotated, int k,
                                                 const std::vector<Annotation>* predictions,
                                                 GenerationMode mode, StageLog& log);

    // Abstracts sentence `index` of `story`, then regenerates it from the
    // actions alone.
    RoundTrip t2act2t(const Story& story, std::size_t index);

    PipelineResult run(const Story& story);

private:
    Completion call(PromptStage stage, Variables variables, const RequestContext& context, StageLog& log);

    Gateway& gateway_;
    PipelineOptions options_;
};

// Runs fn(i) for i in [0, n) on up to `jobs` threads.
void parallel_for(std::size_t n, std::size_t jobs, const std::function<void(std::size_t)>& fn);

// Results in input order.
std::vector<PipelineResult> run_batch(Pipeline& pipeline, const std::vector<Story>& stories, std::size_t jobs);

// First non-empty line with surrounding quotes removed.
std::string first_sentence(std::string_view text);

// `Actions:` and `Emotions:` lines of a gap prediction.
struct GapPrediction {
    std::vector<ActionRecord> actions;
    std::vector<EmotionAnnotation> emotions;
    ParseDiagnostics diagnostics;
};
GapPrediction parse_gap_prediction(std::string_view text, std::span<const std::string> characters);
std::string serialize_gap_prediction(std::span<const std::string> characters,
                                     const std::vector<Annotation>& cells);

struct SftRecord {
    std::string instruction;
    std::string input;
    std::string output;
};

// One record per gapped instance for every stage; logic checks also export
// complete stories.
std::vector<SftRecord> export_sft(const std::vector<GapRecord>& records, PromptStage stage,
                                  const TemplateCatalog& catalog = TemplateCatalog::embedded());
std::string sft_record_json(const SftRecord& record);

} // namespace storylogic
