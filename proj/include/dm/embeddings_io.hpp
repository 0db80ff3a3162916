#pragma once

#include <filesystem>
#include <string>
#include <string_view>
#include <vector>

#include "dm/models.hpp"

namespace dm {

struct EmbeddingRecord {
    std::string id;
    std::string label;
    Embedding values;
    bool operator==(const EmbeddingRecord&) const = default;
};

/// `id<TAB>label<TAB>v1,v2,...` per line, values printed with %.9g so a
/// float survives the round trip exactly.
std::string format_embeddings(const std::vector<EmbeddingRecord>& rows);
std::vector<EmbeddingRecord> parse_embeddings(std::string_view text);
void save_embeddings(const std::vector<EmbeddingRecord>& rows, const std::filesystem::path& path);
std::vector<EmbeddingRecord> load_embeddings(const std::filesystem::path& path);

} // namespace dm
