#include "dm/hnsw.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <fstream>
#include <iterator>
#include <queue>

#include "dm/png_io.hpp"

namespace dm {

namespace {

// Fixed 16-lane accumulation order: vectorizes, and the result does not
// depend on where the vectors sit in memory.
float sq_l2(const float* a, const float* b, int d) {
    float acc[16] = {};
    int i = 0;
    for (; i + 16 <= d; i += 16) {
        for (int j = 0; j < 16; ++j) {
            const float t = a[i + j] - b[i + j];
            acc[j] += t * t;
        }
    }
    for (int j = 0; i < d; ++i, ++j) {
        const float t = a[i] - b[i];
        acc[j] += t * t;
    }
    float s = 0.0f;
    for (float v : acc) s += v;
    return s;
}

std::vector<float> normalized_copy(std::span<const float> v, Metric metric) {
    std::vector<float> out(v.begin(), v.end());
    for (float x : out) {
        if (!std::isfinite(x)) throw std::invalid_argument("embedding has a non-finite component");
    }
    if (metric == Metric::cosine) {
        double sq = 0.0;
        for (float x : out) sq += static_cast<double>(x) * x;
        if (sq == 0.0) throw std::invalid_argument("zero vector under cosine metric");
        const double inv = 1.0 / std::sqrt(sq);
        for (float& x : out) x = static_cast<float>(x * inv);
    }
    return out;
}

double report_score(float d2, Metric metric) {
    return metric == Metric::cosine ? 1.0 - static_cast<double>(d2) / 2.0 : std::sqrt(static_cast<double>(d2));
}

} // namespace

std::string_view to_string(Metric m) { return m == Metric::cosine ? "cosine" : "euclidean"; }

Metric parse_metric(std::string_view s) {
    if (s == "cosine") return Metric::cosine;
    if (s == "euclidean") return Metric::euclidean;
    throw std::invalid_argument("unknown metric '" + std::string(s) + "'");
}

double score(std::span<const float> a, std::span<const float> b, Metric metric) {
    if (a.size() != b.size()) throw std::invalid_argument("score: dimension mismatch");
    double ab = 0.0, aa = 0.0, bb = 0.0, d2 = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) {
        ab += static_cast<double>(a[i]) * b[i];
        aa += static_cast<double>(a[i]) * a[i];
        bb += static_cast<double>(b[i]) * b[i];
        const double d = static_cast<double>(a[i]) - b[i];
        d2 += d * d;
    }
    if (metric == Metric::euclidean) return std::sqrt(d2);
    if (aa == 0.0 || bb == 0.0) throw std::invalid_argument("score: zero vector under cosine metric");
    return ab / (std::sqrt(aa) * std::sqrt(bb));
}

HnswIndex::HnswIndex(int dim, Metric metric, HnswParams params) : dim_(dim), metric_(metric), params_(params) {
    if (dim < 1) throw std::invalid_argument("index dimension must be positive");
    if (params.M < 2) throw std::invalid_argument("M must be >= 2");
    if (params.ef_construction < 1) throw std::invalid_argument("ef_construction must be positive");
}

std::optional<std::size_t> HnswIndex::find(std::string_view id) const {
    auto it = by_id_.find(std::string(id));
    if (it == by_id_.end()) return std::nullopt;
    return it->second;
}

float HnswIndex::dist(std::span<const float> q, std::uint32_t node) const {
    return sq_l2(q.data(), vectors_.data() + static_cast<std::size_t>(node) * dim_, dim_);
}

std::vector<float> HnswIndex::prepare(std::span<const float> vec) const {
    if (static_cast<int>(vec.size()) != dim_) {
        throw std::invalid_argument("dimension mismatch: index is " + std::to_string(dim_) + ", vector is " +
                                    std::to_string(vec.size()));
    }
    return normalized_copy(vec, metric_);
}

double HnswIndex::report(float d2) const { return report_score(d2, metric_); }

std::uint32_t HnswIndex::greedy(std::span<const float> q, std::uint32_t ep, int layer) const {
    float best = dist(q, ep);
    for (bool moved = true; moved;) {
        moved = false;
        for (std::uint32_t n : neighbors(ep, layer)) {
            const float d = dist(q, n);
            if (d < best || (d == best && n < ep)) {
                best = d;
                ep = n;
                moved = true;
            }
        }
    }
    return ep;
}

std::vector<HnswIndex::Candidate> HnswIndex::search_layer(std::span<const float> q, std::uint32_t ep, int ef,
                                                          int layer) const {
    std::vector<std::uint8_t> visited(size(), 0);
    // Min-heap of nodes to expand, max-heap of the ef best found.
    std::priority_queue<Candidate, std::vector<Candidate>, std::greater<>> frontier;
    std::priority_queue<Candidate> best;
    const Candidate start{dist(q, ep), ep};
    frontier.push(start);
    best.push(start);
    visited[ep] = 1;
    while (!frontier.empty()) {
        const Candidate c = frontier.top();
        if (static_cast<int>(best.size()) >= ef && best.top() < c) break;
        frontier.pop();
        for (std::uint32_t n : neighbors(c.node, layer)) {
            if (visited[n]) continue;
            visited[n] = 1;
            const Candidate cand{dist(q, n), n};
            if (static_cast<int>(best.size()) < ef || cand < best.top()) {
                frontier.push(cand);
                best.push(cand);
                if (static_cast<int>(best.size()) > ef) best.pop();
            }
        }
    }
    std::vector<Candidate> out;
    out.reserve(best.size());
    while (!best.empty()) {
        out.push_back(best.top());
        best.pop();
    }
    std::reverse(out.begin(), out.end());
    return out;
}

bool HnswIndex::linked(std::uint32_t a, std::uint32_t b, int layer) const {
    const auto& n = neighbors(a, layer);
    return std::find(n.begin(), n.end(), b) != n.end();
}

void HnswIndex::link(std::uint32_t a, std::uint32_t b, int layer) {
    links_[a][layer].push_back(b);
    links_[b][layer].push_back(a);
}

void HnswIndex::unlink(std::uint32_t a, std::uint32_t b, int layer) {
    auto drop = [&](std::uint32_t from, std::uint32_t to) {
        auto& n = links_[from][layer];
        n.erase(std::find(n.begin(), n.end(), to));
    };
    drop(a, b);
    drop(b, a);
}

void HnswIndex::connect(std::uint32_t q, const std::vector<Candidate>& chosen, int layer) {
    const int limit = cap(layer);
    auto room = [&](std::uint32_t n) { return static_cast<int>(neighbors(n, layer).size()) < limit; };
    for (std::size_t i = 0; i < chosen.size(); ++i) {
        const std::uint32_t c = chosen[i].node;
        if (!room(q)) break;
        if (linked(q, c, layer)) continue;
        if (room(c)) {
            link(q, c, layer);
            continue;
        }
        // c is full: it keeps q only by dropping its farthest neighbour f.
        std::uint32_t f = neighbors(c, layer).front();
        float fd = dist(c, f);
        for (std::uint32_t n : neighbors(c, layer)) {
            const float d = dist(c, n);
            if (d > fd || (d == fd && n > f)) {
                f = n;
                fd = d;
            }
        }
        const float qd = chosen[i].dist;
        if (qd > fd || (qd == fd && q > f)) continue;
        unlink(c, f, layer);
        link(q, c, layer);
        // c - q - f replaces c - f when q can take it, so f stays reachable.
        if (room(q) && !linked(q, f, layer)) link(q, f, layer);
    }
}

void HnswIndex::insert(const std::string& id, std::span<const float> vec, Rng& rng) {
    if (by_id_.count(id)) throw std::invalid_argument("duplicate id '" + id + "'");
    auto v = prepare(vec);

    // Geometric levels with P(level >= l) = e^-l.
    int lvl = static_cast<int>(std::floor(-std::log(1.0 - rng.uniform())));
    if (params_.max_level >= 0) lvl = std::min(lvl, params_.max_level);

    const auto q = static_cast<std::uint32_t>(ids_.size());
    ids_.push_back(id);
    by_id_.emplace(id, q);
    vectors_.insert(vectors_.end(), v.begin(), v.end());
    links_.emplace_back(static_cast<std::size_t>(lvl) + 1);

    if (!entry_) {
        entry_ = q;
        return;
    }
    const int top = top_level();
    const std::span<const float> qv = vector(q);
    auto ep = static_cast<std::uint32_t>(*entry_);
    for (int layer = top; layer > lvl; --layer) ep = greedy(qv, ep, layer);
    for (int layer = std::min(lvl, top); layer >= 0; --layer) {
        auto found = search_layer(qv, ep, params_.ef_construction, layer);
        // q itself is not linked yet, so it never shows up in `found`.
        std::vector<Candidate> chosen(found.begin(),
                                      found.begin() + std::min<std::ptrdiff_t>(fanout(layer), std::ssize(found)));
        connect(q, chosen, layer);
        ep = found.front().node;
    }
    if (lvl > top) entry_ = q;
}

std::vector<MatchResult> HnswIndex::search(std::span<const float> query, int k, int ef_search) const {
    if (empty()) throw std::invalid_argument("search on an empty index");
    if (k < 1) throw std::invalid_argument("k must be >= 1");
    const int want = std::min<int>(k, static_cast<int>(size()));
    if (ef_search < want) throw std::invalid_argument("ef_search must be >= k");
    const auto q = prepare(query);
    auto ep = static_cast<std::uint32_t>(*entry_);
    for (int layer = top_level(); layer > 0; --layer) ep = greedy(q, ep, layer);
    const auto found = search_layer(q, ep, ef_search, 0);
    std::vector<MatchResult> out;
    for (std::size_t i = 0; i < found.size() && static_cast<int>(i) < want; ++i) {
        out.push_back({ids_[found[i].node], report(found[i].dist), static_cast<int>(i) + 1});
    }
    return out;
}

IndexAudit HnswIndex::audit() const {
    IndexAudit a;
    auto problem = [&](std::string s) {
        if (a.problems.size() < 50) a.problems.push_back(std::move(s));
    };
    for (std::size_t n = 0; n < size(); ++n) {
        for (int layer = 0; layer <= level(n); ++layer) {
            const auto& nb = neighbors(n, layer);
            if (static_cast<int>(nb.size()) > cap(layer)) {
                problem("node " + ids_[n] + " layer " + std::to_string(layer) + " degree " +
                        std::to_string(nb.size()) + " exceeds " + std::to_string(cap(layer)));
            }
            std::vector<std::uint32_t> sorted(nb);
            std::sort(sorted.begin(), sorted.end());
            if (std::adjacent_find(sorted.begin(), sorted.end()) != sorted.end()) {
                problem("node " + ids_[n] + " layer " + std::to_string(layer) + " has duplicate edges");
            }
            for (std::uint32_t m : nb) {
                if (m >= size()) {
                    problem("node " + ids_[n] + " links to missing node " + std::to_string(m));
                    continue;
                }
                if (m == n) problem("node " + ids_[n] + " links to itself");
                if (level(m) < layer) {
                    problem("node " + ids_[n] + " links to " + ids_[m] + " above its level on layer " +
                            std::to_string(layer));
                    continue;
                }
                if (!linked(m, static_cast<std::uint32_t>(n), layer)) {
                    problem("edge " + ids_[n] + " -> " + ids_[m] + " on layer " + std::to_string(layer) +
                            " has no reverse");
                }
            }
        }
    }
    if (empty()) {
        if (entry_) problem("empty index has an entry point");
        return a;
    }
    if (!entry_) {
        problem("nonempty index has no entry point");
        return a;
    }
    for (std::size_t n = 0; n < size(); ++n) {
        if (level(n) > top_level()) problem("node " + ids_[n] + " is above the entry point");
    }
    std::vector<std::uint8_t> seen(size(), 0);
    std::vector<std::uint32_t> stack{static_cast<std::uint32_t>(*entry_)};
    seen[*entry_] = 1;
    std::size_t reached = 1;
    while (!stack.empty()) {
        const auto n = stack.back();
        stack.pop_back();
        for (std::uint32_t m : neighbors(n, 0)) {
            if (m < size() && !seen[m]) {
                seen[m] = 1;
                ++reached;
                stack.push_back(m);
            }
        }
    }
    if (reached != size()) {
        problem("layer 0 reaches " + std::to_string(reached) + " of " + std::to_string(size()) +
                " nodes from the entry point");
    }
    return a;
}

namespace {

void put_u32(std::vector<std::uint8_t>& out, std::uint32_t v) {
    for (int i = 0; i < 4; ++i) out.push_back(static_cast<std::uint8_t>(v >> (8 * i)));
}

void put_f32(std::vector<std::uint8_t>& out, float f) {
    std::uint32_t v;
    std::memcpy(&v, &f, 4);
    put_u32(out, v);
}

struct Reader {
    std::span<const std::uint8_t> bytes;
    std::size_t pos = 0;

    void need(std::size_t n, const char* what) const {
        if (bytes.size() - pos < n) {
            throw IndexFormatError(std::string("truncated index file while reading ") + what + " at byte " +
                                   std::to_string(pos));
        }
    }
    std::uint32_t u32(const char* what) {
        need(4, what);
        std::uint32_t v = 0;
        for (int i = 0; i < 4; ++i) v |= static_cast<std::uint32_t>(bytes[pos + i]) << (8 * i);
        pos += 4;
        return v;
    }
    float f32(const char* what) {
        const std::uint32_t v = u32(what);
        float f;
        std::memcpy(&f, &v, 4);
        return f;
    }
};

constexpr char kMagic[4] = {'D', 'M', 'I', 'X'};

} // namespace

std::vector<std::uint8_t> HnswIndex::encode() const {
    std::vector<std::uint8_t> out(kMagic, kMagic + 4);
    put_u32(out, kIndexVersion);
    put_u32(out, static_cast<std::uint32_t>(dim_));
    put_u32(out, static_cast<std::uint32_t>(metric_));
    put_u32(out, static_cast<std::uint32_t>(size()));
    put_u32(out, static_cast<std::uint32_t>(params_.M));
    for (std::size_t n = 0; n < size(); ++n) {
        put_u32(out, static_cast<std::uint32_t>(ids_[n].size()));
        out.insert(out.end(), ids_[n].begin(), ids_[n].end());
        put_u32(out, static_cast<std::uint32_t>(level(n)));
        for (float x : vector(n)) put_f32(out, x);
        for (int layer = 0; layer <= level(n); ++layer) {
            put_u32(out, static_cast<std::uint32_t>(neighbors(n, layer).size()));
            for (std::uint32_t m : neighbors(n, layer)) put_u32(out, m);
        }
    }
    return out;
}

HnswIndex HnswIndex::decode(std::span<const std::uint8_t> bytes) {
    if (bytes.size() < 4 || !std::equal(kMagic, kMagic + 4, bytes.begin())) {
        throw IndexFormatError("bad index header: magic is not DMIX");
    }
    Reader r{bytes, 4};
    const std::uint32_t version = r.u32("header version");
    if (version != kIndexVersion) {
        throw IndexFormatError("bad index header: unsupported version " + std::to_string(version));
    }
    const std::uint32_t dim = r.u32("header dim");
    const std::uint32_t metric = r.u32("header metric");
    const std::uint32_t count = r.u32("header count");
    const std::uint32_t M = r.u32("header M");
    if (dim == 0 || dim > (1u << 20)) throw IndexFormatError("bad index header: dim " + std::to_string(dim));
    if (metric > 1) throw IndexFormatError("bad index header: metric code " + std::to_string(metric));
    if (M < 2 || M > (1u << 16)) throw IndexFormatError("bad index header: M " + std::to_string(M));

    HnswParams params;
    params.M = static_cast<int>(M);
    HnswIndex idx(static_cast<int>(dim), static_cast<Metric>(metric), params);
    for (std::uint32_t n = 0; n < count; ++n) {
        const std::uint32_t len = r.u32("id length");
        r.need(len, "id");
        std::string id(reinterpret_cast<const char*>(bytes.data() + r.pos), len);
        r.pos += len;
        if (id.empty()) throw IndexFormatError("node " + std::to_string(n) + " has an empty id");
        if (idx.by_id_.count(id)) throw IndexFormatError("duplicate id '" + id + "' in index file");
        const std::uint32_t lvl = r.u32("level");
        if (lvl > 64) throw IndexFormatError("node '" + id + "' has implausible level " + std::to_string(lvl));
        for (std::uint32_t d = 0; d < dim; ++d) {
            const float x = r.f32("vector");
            if (!std::isfinite(x)) throw IndexFormatError("node '" + id + "' has a non-finite component");
            idx.vectors_.push_back(x);
        }
        std::vector<std::vector<std::uint32_t>> layers(lvl + 1);
        for (auto& layer : layers) {
            const std::uint32_t deg = r.u32("degree");
            if (deg > 2 * M) throw IndexFormatError("node '" + id + "' degree " + std::to_string(deg) + " exceeds cap");
            for (std::uint32_t k = 0; k < deg; ++k) {
                const std::uint32_t m = r.u32("adjacency");
                if (m >= count) throw IndexFormatError("node '" + id + "' links to missing node " + std::to_string(m));
                layer.push_back(m);
            }
        }
        idx.by_id_.emplace(id, n);
        idx.ids_.push_back(std::move(id));
        idx.links_.push_back(std::move(layers));
        // Entry point: first node holding the highest level.
        if (!idx.entry_ || static_cast<int>(lvl) > idx.top_level()) idx.entry_ = n;
    }
    if (r.pos != bytes.size()) {
        throw IndexFormatError("index file has " + std::to_string(bytes.size() - r.pos) + " trailing bytes");
    }
    if (idx.metric_ == Metric::cosine) {
        for (std::size_t n = 0; n < idx.size(); ++n) {
            double sq = 0.0;
            for (float x : idx.vector(n)) sq += static_cast<double>(x) * x;
            if (std::abs(sq - 1.0) > 1e-4) throw IndexFormatError("cosine node '" + idx.ids_[n] + "' is not unit norm");
        }
    }
    const auto audit = idx.audit();
    if (!audit.ok()) throw IndexFormatError("index invariant violated: " + audit.problems.front());
    return idx;
}

void HnswIndex::save(const std::filesystem::path& path) const { write_file_bytes(path, encode()); }

HnswIndex HnswIndex::load(const std::filesystem::path& path) { return decode(read_file_bytes(path)); }

HnswIndex build_index(const std::vector<std::string>& ids, const std::vector<Embedding>& vectors, Metric metric,
                      HnswParams params, std::uint64_t seed) {
    if (ids.size() != vectors.size()) throw std::invalid_argument("build_index: ids and vectors differ in length");
    if (vectors.empty()) throw std::invalid_argument("build_index: no vectors");
    HnswIndex idx(static_cast<int>(vectors.front().size()), metric, params);
    Rng rng(derive_seed(seed, "hnsw-levels"));
    for (std::size_t i = 0; i < ids.size(); ++i) idx.insert(ids[i], vectors[i], rng);
    return idx;
}

std::vector<MatchResult> brute_force_search(const std::vector<std::string>& ids, const std::vector<Embedding>& vectors,
                                            std::span<const float> query, int k, Metric metric) {
    if (k < 1) throw std::invalid_argument("k must be >= 1");
    const auto q = normalized_copy(query, metric);
    std::vector<std::pair<float, std::size_t>> all;
    for (std::size_t i = 0; i < vectors.size(); ++i) {
        if (vectors[i].size() != q.size()) throw std::invalid_argument("brute_force_search: dimension mismatch");
        const auto v = normalized_copy(vectors[i], metric);
        all.emplace_back(sq_l2(q.data(), v.data(), static_cast<int>(q.size())), i);
    }
    const std::size_t want = std::min<std::size_t>(static_cast<std::size_t>(k), all.size());
    std::partial_sort(all.begin(), all.begin() + static_cast<std::ptrdiff_t>(want), all.end());
    std::vector<MatchResult> out;
    for (std::size_t r = 0; r < want; ++r) {
        out.push_back({ids[all[r].second], report_score(all[r].first, metric), static_cast<int>(r) + 1});
    }
    return out;
}

} // namespace dm
