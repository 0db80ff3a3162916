#include "dm/service.hpp"

#include <cstdio>
#include <fstream>
#include <sstream>

#include "httplib.h"
#include "json.hpp"

#include "dm/png_io.hpp"

namespace dm {

namespace {

std::vector<std::string> split_tabs(const std::string& line) {
    std::vector<std::string> out;
    std::string cur;
    std::istringstream in(line);
    while (std::getline(in, cur, '\t')) out.push_back(cur);
    return out;
}

std::string format_query_id(std::size_t n) {
    char buf[32];
    std::snprintf(buf, sizeof buf, "q%06zu", n);
    return buf;
}

std::optional<bool> parse_verdict(const std::string& v) {
    if (v == "accepted" || v == "accept") return true;
    if (v == "rejected" || v == "reject") return false;
    return std::nullopt;
}

} // namespace

MatchService::MatchService(Encoder encoder, std::shared_ptr<const HnswIndex> index,
                           std::map<std::string, GalleryEntry> gallery, ServiceOptions options)
    : encoder_(std::move(encoder)), index_(std::move(index)), gallery_(std::move(gallery)), options_(std::move(options)) {
    if (!index_ || index_->empty()) throw std::invalid_argument("service needs a nonempty index");
    if (options_.default_k < 1) throw std::invalid_argument("default k must be >= 1");
    for (std::size_t i = 0; i < index_->size(); ++i) {
        if (!gallery_.count(index_->id(i))) {
            throw std::invalid_argument("index id '" + index_->id(i) + "' is not in the gallery manifest");
        }
    }
    load_records();
}

void MatchService::load_records() {
    if (options_.record_file.empty() || !std::filesystem::exists(options_.record_file)) return;
    std::ifstream in(options_.record_file);
    std::string line;
    std::size_t line_no = 0;
    while (std::getline(in, line)) {
        ++line_no;
        if (line.empty()) continue;
        const auto f = split_tabs(line);
        auto bad = [&] {
            return std::runtime_error("record file line " + std::to_string(line_no) + " is malformed");
        };
        if (f[0] == "Q" && f.size() >= 2) {
            Session s;
            if (f.size() >= 3) {
                std::istringstream ids(f[2]);
                std::string id;
                while (std::getline(ids, id, ',')) s.match_ids.push_back(id);
            }
            sessions_[f[1]] = std::move(s);
            if (f[1].size() > 1 && f[1][0] == 'q') {
                next_query_ = std::max(next_query_, static_cast<std::size_t>(std::stoull(f[1].substr(1))) + 1);
            }
        } else if (f[0] == "V" && f.size() == 4) {
            auto it = sessions_.find(f[1]);
            const auto v = parse_verdict(f[3]);
            if (it == sessions_.end() || !v) throw bad();
            if (it->second.verdicts.emplace(f[2], *v).second) ++(*v ? accepted_ : rejected_);
        } else {
            throw bad();
        }
    }
}

void MatchService::append_record(const std::string& line) {
    if (options_.record_file.empty()) return;
    if (options_.record_file.has_parent_path()) std::filesystem::create_directories(options_.record_file.parent_path());
    std::ofstream out(options_.record_file, std::ios::app);
    out << line << '\n';
    out.flush();
    if (!out) throw std::runtime_error("cannot append to " + options_.record_file.string());
}

QueryOutcome MatchService::query(const Image& img, std::optional<int> k) {
    if (rebuilding_) throw ServiceUnavailable("index rebuild in progress");
    std::shared_ptr<const HnswIndex> index;
    {
        std::shared_lock lock(index_mutex_);
        index = index_;
    }
    const int want = k.value_or(options_.default_k);
    if (want < 1) throw std::invalid_argument("k must be >= 1");
    const Image input = prepare_input(img, encoder_.config().input_size);
    const auto emb = encoder_.embed(input, index->metric() == Metric::cosine);
    const int kk = std::min<int>(want, static_cast<int>(index->size()));
    QueryOutcome out;
    out.matches = index->search(emb, kk, std::max(options_.ef_search, kk));

    std::lock_guard lock(session_mutex_);
    out.query_id = format_query_id(next_query_++);
    Session s;
    std::string ids;
    for (const auto& m : out.matches) {
        s.match_ids.push_back(m.id);
        if (!ids.empty()) ids += ',';
        ids += m.id;
    }
    append_record("Q\t" + out.query_id + "\t" + ids);
    sessions_[out.query_id] = std::move(s);
    return out;
}

VerdictStatus MatchService::validate(const std::string& query_id, const std::string& match_id,
                                     const std::string& verdict) {
    const auto v = parse_verdict(verdict);
    if (!v || query_id.empty() || match_id.empty()) return VerdictStatus::malformed;
    std::lock_guard lock(session_mutex_);
    auto it = sessions_.find(query_id);
    if (it == sessions_.end()) return VerdictStatus::unknown_query;
    auto& s = it->second;
    if (std::find(s.match_ids.begin(), s.match_ids.end(), match_id) == s.match_ids.end()) {
        return VerdictStatus::unknown_match;
    }
    if (s.verdicts.count(match_id)) return VerdictStatus::duplicate;
    append_record("V\t" + query_id + "\t" + match_id + "\t" + (*v ? "accepted" : "rejected"));
    s.verdicts.emplace(match_id, *v);
    ++(*v ? accepted_ : rejected_);
    return VerdictStatus::recorded;
}

ServiceStats MatchService::stats() const {
    std::lock_guard lock(session_mutex_);
    ServiceStats s;
    s.queries = sessions_.size();
    s.accepted = accepted_;
    s.rejected = rejected_;
    s.validated = accepted_ + rejected_;
    s.accept_rate = s.validated ? static_cast<double>(accepted_) / static_cast<double>(s.validated) : 0.0;
    return s;
}

const GalleryEntry* MatchService::doubt(const std::string& id) const {
    auto it = gallery_.find(id);
    return it == gallery_.end() ? nullptr : &it->second;
}

std::optional<std::vector<std::uint8_t>> MatchService::doubt_image(const std::string& id) const {
    const auto* d = doubt(id);
    if (!d) return std::nullopt;
    return read_file_bytes(d->image_path);
}

void MatchService::begin_rebuild() { rebuilding_ = true; }

void MatchService::finish_rebuild(std::shared_ptr<const HnswIndex> index) {
    if (!index || index->empty()) throw std::invalid_argument("rebuild produced an empty index");
    for (std::size_t i = 0; i < index->size(); ++i) {
        if (!gallery_.count(index->id(i))) {
            throw std::invalid_argument("index id '" + index->id(i) + "' is not in the gallery manifest");
        }
    }
    {
        std::unique_lock lock(index_mutex_);
        index_ = std::move(index);
    }
    rebuilding_ = false;
}

struct HttpFrontend::Impl {
    MatchService& service;
    httplib::Server server;
    std::thread thread;
    explicit Impl(MatchService& s) : service(s) {}
};

namespace {

void send_json(httplib::Response& res, int status, const nlohmann::json& body) {
    res.status = status;
    res.set_content(body.dump(), "application/json");
}

void send_error(httplib::Response& res, int status, const std::string& message) {
    send_json(res, status, {{"error", message}});
}

std::optional<int> parse_k(const std::string& s) {
    try {
        std::size_t used = 0;
        const int k = std::stoi(s, &used);
        if (used == s.size() && k >= 1 && k <= 1000) return k;
    } catch (const std::logic_error&) {
    }
    return std::nullopt;
}

} // namespace

HttpFrontend::HttpFrontend(MatchService& service) : impl_(std::make_unique<Impl>(service)) {
    auto& srv = impl_->server;
    MatchService& svc = impl_->service;

    srv.Get("/v1/healthz", [&svc](const httplib::Request&, httplib::Response& res) {
        send_json(res, 200, {{"status", svc.rebuilding() ? "rebuilding" : "ok"}});
    });

    srv.Get("/v1/stats", [&svc](const httplib::Request&, httplib::Response& res) {
        const auto s = svc.stats();
        send_json(res, 200,
                  {{"query_count", s.queries},
                   {"validated_count", s.validated},
                   {"accepted_count", s.accepted},
                   {"rejected_count", s.rejected},
                   {"accept_rate", s.accept_rate}});
    });

    srv.Get(R"(/v1/doubts/([^/]+)/image)", [&svc](const httplib::Request& req, httplib::Response& res) {
        const std::string id = req.matches[1];
        if (!svc.doubt(id)) return send_error(res, 404, "unknown doubt id '" + id + "'");
        try {
            const auto bytes = svc.doubt_image(id);
            res.status = 200;
            res.set_content(std::string(bytes->begin(), bytes->end()), "image/png");
        } catch (const std::exception& e) {
            send_error(res, 500, e.what());
        }
    });

    srv.Post("/v1/query", [&svc](const httplib::Request& req, httplib::Response& res) {
        if (svc.rebuilding()) return send_error(res, 503, "index rebuild in progress");
        if (!req.is_multipart_form_data() || !req.has_file("image")) {
            return send_error(res, 400, "expected multipart form data with an 'image' field");
        }
        std::optional<int> k;
        std::string k_text;
        if (req.has_file("k")) k_text = req.get_file_value("k").content;
        else if (req.has_param("k")) k_text = req.get_param_value("k");
        if (!k_text.empty()) {
            k = parse_k(k_text);
            if (!k) return send_error(res, 400, "k must be an integer in [1, 1000]");
        }
        Image img;
        try {
            const auto& content = req.get_file_value("image").content;
            img = decode_png(std::span(reinterpret_cast<const std::uint8_t*>(content.data()), content.size()));
        } catch (const std::exception& e) {
            return send_error(res, 400, std::string("image is not a valid PNG: ") + e.what());
        }
        try {
            const auto out = svc.query(img, k);
            nlohmann::json matches = nlohmann::json::array();
            for (const auto& m : out.matches) {
                nlohmann::json j{{"doubt_id", m.id},
                                 {"score", m.score},
                                 {"rank", m.rank},
                                 {"image_url", "/v1/doubts/" + m.id + "/image"}};
                const auto* d = svc.doubt(m.id);
                if (d && !d->confidence.empty()) j["confidence"] = d->confidence;
                matches.push_back(std::move(j));
            }
            send_json(res, 200, {{"query_id", out.query_id}, {"matches", matches}});
        } catch (const ServiceUnavailable& e) {
            send_error(res, 503, e.what());
        } catch (const std::exception& e) {
            send_error(res, 500, e.what());
        }
    });

    srv.Post("/v1/validate", [&svc](const httplib::Request& req, httplib::Response& res) {
        nlohmann::json body;
        try {
            body = nlohmann::json::parse(req.body);
        } catch (const std::exception&) {
            return send_error(res, 400, "body is not valid JSON");
        }
        if (!body.is_object() || !body.contains("query_id") || !body.contains("match_id") ||
            !body.contains("verdict") || !body["query_id"].is_string() || !body["match_id"].is_string() ||
            !body["verdict"].is_string()) {
            return send_error(res, 400, "expected string fields query_id, match_id and verdict");
        }
        const std::string qid = body["query_id"], mid = body["match_id"], verdict = body["verdict"];
        try {
            switch (svc.validate(qid, mid, verdict)) {
            case VerdictStatus::recorded:
                return send_json(res, 200, {{"query_id", qid}, {"match_id", mid}, {"verdict", verdict}, {"recorded", true}});
            case VerdictStatus::malformed:
                return send_error(res, 400, "verdict must be 'accepted' or 'rejected'");
            case VerdictStatus::unknown_query: return send_error(res, 404, "unknown query_id '" + qid + "'");
            case VerdictStatus::unknown_match:
                return send_error(res, 404, "match '" + mid + "' was not returned for query '" + qid + "'");
            case VerdictStatus::duplicate:
                return send_error(res, 409, "verdict already recorded for this query and match");
            }
        } catch (const std::exception& e) {
            send_error(res, 500, e.what());
        }
    });
}

HttpFrontend::~HttpFrontend() { stop(); }

int HttpFrontend::bind(const std::string& host, int port) {
    if (port == 0) {
        const int p = impl_->server.bind_to_any_port(host);
        if (p < 0) throw std::runtime_error("cannot bind " + host);
        return p;
    }
    if (!impl_->server.bind_to_port(host, port)) {
        throw std::runtime_error("cannot bind " + host + ":" + std::to_string(port));
    }
    return port;
}

void HttpFrontend::run() { impl_->server.listen_after_bind(); }

void HttpFrontend::start() {
    impl_->thread = std::thread([this] { impl_->server.listen_after_bind(); });
    impl_->server.wait_until_ready();
}

void HttpFrontend::stop() {
    if (!impl_) return;
    impl_->server.stop();
    if (impl_->thread.joinable()) impl_->thread.join();
}

} // namespace dm
