#include "dm/embeddings_io.hpp"

#include <charconv>
#include <cstdio>
#include <fstream>
#include <sstream>
#include <stdexcept>

#include "dm/png_io.hpp"

namespace dm {

std::string format_embeddings(const std::vector<EmbeddingRecord>& rows) {
    std::string out;
    char buf[32];
    for (const auto& r : rows) {
        out += r.id;
        out += '\t';
        out += r.label;
        out += '\t';
        for (std::size_t i = 0; i < r.values.size(); ++i) {
            if (i) out += ',';
            std::snprintf(buf, sizeof buf, "%.9g", static_cast<double>(r.values[i]));
            out += buf;
        }
        out += '\n';
    }
    return out;
}

std::vector<EmbeddingRecord> parse_embeddings(std::string_view text) {
    std::vector<EmbeddingRecord> rows;
    std::size_t line_no = 0;
    while (!text.empty()) {
        const auto nl = text.find('\n');
        std::string_view line = text.substr(0, nl);
        text = nl == std::string_view::npos ? std::string_view{} : text.substr(nl + 1);
        ++line_no;
        if (!line.empty() && line.back() == '\r') line.remove_suffix(1);
        if (line.empty()) continue;
        auto fail = [&](const std::string& why) {
            throw std::runtime_error("embeddings line " + std::to_string(line_no) + ": " + why);
        };
        const auto t1 = line.find('\t');
        const auto t2 = t1 == std::string_view::npos ? t1 : line.find('\t', t1 + 1);
        if (t2 == std::string_view::npos) fail("expected id, label and values separated by tabs");
        EmbeddingRecord r{std::string(line.substr(0, t1)), std::string(line.substr(t1 + 1, t2 - t1 - 1)), {}};
        if (r.id.empty()) fail("empty id");
        std::string values(line.substr(t2 + 1));
        std::istringstream in(values);
        std::string tok;
        while (std::getline(in, tok, ',')) {
            try {
                std::size_t used = 0;
                const float v = std::stof(tok, &used);
                if (used != tok.size()) fail("bad value '" + tok + "'");
                r.values.push_back(v);
            } catch (const std::logic_error&) {
                fail("bad value '" + tok + "'");
            }
        }
        if (r.values.empty()) fail("no values");
        if (!rows.empty() && rows.front().values.size() != r.values.size()) {
            fail("dimension " + std::to_string(r.values.size()) + " differs from " +
                 std::to_string(rows.front().values.size()));
        }
        rows.push_back(std::move(r));
    }
    return rows;
}

void save_embeddings(const std::vector<EmbeddingRecord>& rows, const std::filesystem::path& path) {
    const auto text = format_embeddings(rows);
    write_file_bytes(path, std::span(reinterpret_cast<const std::uint8_t*>(text.data()), text.size()));
}

std::vector<EmbeddingRecord> load_embeddings(const std::filesystem::path& path) {
    const auto bytes = read_file_bytes(path);
    return parse_embeddings(std::string_view(reinterpret_cast<const char*>(bytes.data()), bytes.size()));
}

} // namespace dm
