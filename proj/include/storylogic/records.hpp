#pragma once

// Line-delimited record files: gap instances and atomic file output.
//
// Gap record fields (one JSON object per line):
//   id, sentences, characters   the (possibly gapped) story
//   gold_k                      insertion index, or -1 for a complete story
//   gold_sentence               removed sentence ("" when complete)
//   gold_actions                {character: action inner text}
//   gold_emotions               {character: emotion inner text}
//   actions, emotions           optional [sentence][character] inner texts for
//                               the story as given

#include <cstddef>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "storylogic/codec.hpp"
#include "storylogic/emotion_geometry.hpp"

namespace storylogic {

struct GapRecord {
    Story story;
    GapVerdict gold = GapVerdict::complete();
    std::string gold_sentence;
    std::vector<Annotation> gold_annotations;  // roster order; empty when complete
    std::optional<AnnotationGrid> annotations;

    static GapRecord from_instance(const GapInstance& instance, bool keep_annotations = true);
    static GapRecord complete_story(const AnnotatedStory& annotated, bool keep_annotations = true);

    // Story annotations when present, blank otherwise.
    AnnotatedStory annotated() const;
};

std::string gap_record_json(const GapRecord& record);
GapRecord parse_gap_record(std::string_view line);

// Throws CorpusError with line numbers; duplicate ids are rejected.
std::vector<GapRecord> load_gap_file(const std::string& path);

// Writes to a sibling temporary file, then renames over `path`.
void write_file_atomic(const std::string& path, std::string_view contents);

std::string join_lines(const std::vector<std::string>& lines);

} // namespace storylogic
