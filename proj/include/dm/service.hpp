#pragma once

#include <atomic>
#include <filesystem>
#include <map>
#include <memory>
#include <mutex>
#include <optional>
#include <shared_mutex>
#include <stdexcept>
#include <string>
#include <thread>
#include <vector>

#include "dm/hnsw.hpp"
#include "dm/models.hpp"

namespace dm {

struct ServiceOptions {
    int default_k = 5;
    int ef_search = 100;
    /// Append-only query/verdict log; empty keeps everything in memory.
    std::filesystem::path record_file;
};

struct GalleryEntry {
    std::string label;
    std::filesystem::path image_path;
    std::string confidence; // optional free-form text, empty when absent
};

struct QueryOutcome {
    std::string query_id;
    std::vector<MatchResult> matches;
};

enum class VerdictStatus { recorded, malformed, unknown_query, unknown_match, duplicate };

struct ServiceStats {
    std::size_t queries = 0;
    std::size_t validated = 0;
    std::size_t accepted = 0;
    std::size_t rejected = 0;
    double accept_rate = 0.0; // accepted / validated, 0 when nothing is validated
};

class ServiceUnavailable : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

/// Query-and-validate core behind the HTTP routes. Queries run
/// concurrently; session and verdict writes are serialized.
class MatchService {
public:
    MatchService(Encoder encoder, std::shared_ptr<const HnswIndex> index, std::map<std::string, GalleryEntry> gallery,
                 ServiceOptions options = {});

    /// Pads and resizes `img` to the model input, embeds and searches.
    /// Throws ServiceUnavailable while a rebuild is in progress.
    QueryOutcome query(const Image& img, std::optional<int> k = std::nullopt);

    /// verdict is "accepted"/"accept" or "rejected"/"reject".
    VerdictStatus validate(const std::string& query_id, const std::string& match_id, const std::string& verdict);

    ServiceStats stats() const;
    const GalleryEntry* doubt(const std::string& id) const;
    std::optional<std::vector<std::uint8_t>> doubt_image(const std::string& id) const;

    void begin_rebuild();
    void finish_rebuild(std::shared_ptr<const HnswIndex> index);
    bool rebuilding() const { return rebuilding_.load(); }

    const Encoder& encoder() const { return encoder_; }

private:
    struct Session {
        std::vector<std::string> match_ids;
        std::map<std::string, bool> verdicts; // match id -> accepted
    };

    void load_records();
    void append_record(const std::string& line);

    Encoder encoder_;
    mutable std::shared_mutex index_mutex_;
    std::shared_ptr<const HnswIndex> index_;
    std::atomic<bool> rebuilding_{false};
    std::map<std::string, GalleryEntry> gallery_;
    ServiceOptions options_;

    mutable std::mutex session_mutex_;
    std::map<std::string, Session> sessions_;
    std::size_t next_query_ = 1;
    std::size_t accepted_ = 0;
    std::size_t rejected_ = 0;
};

/// JSON over HTTP under /v1.
class HttpFrontend {
public:
    explicit HttpFrontend(MatchService& service);
    ~HttpFrontend();
    HttpFrontend(const HttpFrontend&) = delete;
    HttpFrontend& operator=(const HttpFrontend&) = delete;

    /// Port 0 picks a free port. Returns the bound port.
    int bind(const std::string& host, int port);
    /// Serves until stop(); blocks.
    void run();
    /// Serves on a background thread.
    void start();
    void stop();

private:
    struct Impl;
    std::unique_ptr<Impl> impl_;
};

} // namespace dm
