#pragma once

#include <span>
#include <string_view>

namespace storylogic::detail {

struct EmbeddedFile {
    std::string_view name;
    std::string_view contents;
};

// Generated at build time from assets/prompts.
std::span<const EmbeddedFile> embedded_prompt_files();

} // namespace storylogic::detail
