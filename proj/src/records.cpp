#include "storylogic/records.hpp"

#include <filesystem>
#include <fstream>
#include <set>

#include <json.hpp>

#include "text_util.hpp"

namespace storylogic {

using ordered_json = nlohmann::ordered_json;

namespace {

ActionRecord strict_action(std::string_view inner) {
    ParseDiagnostics diagnostics;
    auto record = parse_action_inner(inner, diagnostics);
    if (!diagnostics.clean()) {
        throw InvariantError("non-canonical action '" + std::string(inner) + "'");
    }
    return record;
}

EmotionAnnotation strict_emotion(std::string_view inner) {
    ParseDiagnostics diagnostics;
    auto annotation = parse_emotion_inner(inner, diagnostics);
    if (!diagnostics.clean()) {
        throw InvariantError("non-canonical emotion '" + std::string(inner) + "'");
    }
    return annotation;
}

ordered_json grid_field(const AnnotationGrid& grid, bool actions) {
    ordered_json rows = ordered_json::array();
    for (const auto& row : grid) {
        ordered_json jrow = ordered_json::array();
        for (const auto& cell : row) {
            jrow.push_back(actions ? cell.action.inner_text() : cell.emotion.inner_text());
        }
        rows.push_back(std::move(jrow));
    }
    return rows;
}

} // namespace

GapRecord GapRecord::from_instance(const GapInstance& instance, bool keep_annotations) {
    GapRecord record{instance.gapped.story(), GapVerdict::insert_before(instance.gold_k),
                     instance.gold_sentence, instance.gold_annotations, std::nullopt};
    if (keep_annotations) record.annotations = instance.gapped.grid();
    return record;
}

GapRecord GapRecord::complete_story(const AnnotatedStory& annotated, bool keep_annotations) {
    GapRecord record{annotated.story(), GapVerdict::complete(), "", {}, std::nullopt};
    if (keep_annotations) record.annotations = annotated.grid();
    return record;
}

AnnotatedStory GapRecord::annotated() const {
    if (annotations) return AnnotatedStory(story, *annotations);
    return AnnotatedStory::blank(story);
}

std::string gap_record_json(const GapRecord& record) {
    const auto& characters = record.story.characters();
    ordered_json gold_actions = ordered_json::object();
    ordered_json gold_emotions = ordered_json::object();
    for (std::size_t c = 0; c < record.gold_annotations.size(); ++c) {
        gold_actions[characters[c]] = record.gold_annotations[c].action.inner_text();
        gold_emotions[characters[c]] = record.gold_annotations[c].emotion.inner_text();
    }
    ordered_json j;
    j["id"] = record.story.id();
    j["sentences"] = record.story.sentences();
    j["characters"] = characters;
    j["gold_k"] = record.gold.value();
    j["gold_sentence"] = record.gold_sentence;
    j["gold_actions"] = std::move(gold_actions);
    j["gold_emotions"] = std::move(gold_emotions);
    if (record.annotations) {
        j["actions"] = grid_field(*record.annotations, true);
        j["emotions"] = grid_field(*record.annotations, false);
    }
    return j.dump();
}

GapRecord parse_gap_record(std::string_view line) {
    const auto j = ordered_json::parse(line);
    Story story(j.at("id").get<std::string>(), j.at("sentences").get<std::vector<std::string>>(),
                j.at("characters").get<std::vector<std::string>>());
    const int gold_k = j.at("gold_k").get<int>();
    GapRecord record{story, GapVerdict::from_value(gold_k), j.value("gold_sentence", std::string()),
                     {}, std::nullopt};
    // The gapped story has n-1 sentences, so the gold index may equal its length.
    if (!record.gold.valid_for(story.size() + 1)) throw RangeError(gold_k, static_cast<long>(story.size() + 1));

    const auto& characters = story.characters();
    if (!record.gold.is_complete()) {
        if (detail::trim(record.gold_sentence).empty()) {
            throw InvariantError("gapped record needs a gold_sentence");
        }
        const auto& actions = j.at("gold_actions");
        const auto& emotions = j.at("gold_emotions");
        for (const auto& name : characters) {
            Annotation cell;
            if (auto it = actions.find(name); it != actions.end()) {
                cell.action = strict_action(it->get<std::string>());
            }
            if (auto it = emotions.find(name); it != emotions.end()) {
                cell.emotion = strict_emotion(it->get<std::string>());
            }
            record.gold_annotations.push_back(std::move(cell));
        }
    }

    const bool has_actions = j.contains("actions") && !j["actions"].is_null();
    const bool has_emotions = j.contains("emotions") && !j["emotions"].is_null();
    if (has_actions || has_emotions) {
        AnnotationGrid grid(story.size(), std::vector<Annotation>(characters.size()));
        auto fill = [&](const ordered_json& rows, bool actions) {
            if (!rows.is_array() || rows.size() != story.size()) {
                throw InvariantError("annotation rows must match the sentence count");
            }
            for (std::size_t s = 0; s < story.size(); ++s) {
                if (!rows[s].is_array() || rows[s].size() != characters.size()) {
                    throw InvariantError("annotation row must have one entry per character");
                }
                for (std::size_t c = 0; c < characters.size(); ++c) {
                    const auto text = rows[s][c].get<std::string>();
                    if (actions) grid[s][c].action = strict_action(text);
                    else grid[s][c].emotion = strict_emotion(text);
                }
            }
        };
        if (has_actions) fill(j["actions"], true);
        if (has_emotions) fill(j["emotions"], false);
        record.annotations = std::move(grid);
    }
    return record;
}

std::vector<GapRecord> load_gap_file(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw Error("cannot open gap file '" + path + "'");
    std::vector<GapRecord> out;
    std::set<std::string> ids;
    std::string line;
    std::size_t line_no = 0;
    while (std::getline(in, line)) {
        ++line_no;
        if (detail::trim(line).empty()) continue;
        try {
            auto record = parse_gap_record(line);
            if (!ids.insert(record.story.id()).second) {
                throw InvariantError("duplicate story id '" + record.story.id() + "'");
            }
            out.push_back(std::move(record));
        } catch (const std::exception& e) {
            throw CorpusError(line_no, line, e.what());
        }
    }
    return out;
}

void write_file_atomic(const std::string& path, std::string_view contents) {
    namespace fs = std::filesystem;
    const fs::path target(path);
    if (target.has_parent_path()) fs::create_directories(target.parent_path());
    fs::path temp = target;
    temp += ".tmp";
    {
        std::ofstream out(temp, std::ios::binary | std::ios::trunc);
        if (!out) throw Error("cannot write '" + temp.string() + "'");
        out.write(contents.data(), static_cast<std::streamsize>(contents.size()));
        if (!out) throw Error("write failed for '" + temp.string() + "'");
    }
    fs::rename(temp, target);
}

std::string join_lines(const std::vector<std::string>& lines) {
    std::string out;
    for (const auto& line : lines) {
        out += line;
        out += '\n';
    }
    return out;
}

} // namespace storylogic
