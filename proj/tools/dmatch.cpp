// Command-line driver: synth -> split -> train -> embed -> index -> eval / serve.

#include <csignal>
#include <cstdio>
#include <fstream>
#include <functional>
#include <iostream>
#include <set>

#include "CLI11.hpp"

#include "dm/byol.hpp"
#include "dm/config.hpp"
#include "dm/dataset.hpp"
#include "dm/embeddings_io.hpp"
#include "dm/eval.hpp"
#include "dm/hnsw.hpp"
#include "dm/mi.hpp"
#include "dm/nn/checkpoint.hpp"
#include "dm/png_io.hpp"
#include "dm/service.hpp"
#include "dm/synth.hpp"
#include "dm/triplet.hpp"

namespace fs = std::filesystem;
using namespace dm;

namespace {

// Options that a config key can seed; command-line values win.
struct ConfigBinding {
    CLI::Option* option;
    std::string key;
};
std::vector<ConfigBinding> g_bindings;

template <typename T>
CLI::Option* opt(CLI::App* app, const std::string& flags, T& var, const std::string& key, const std::string& help) {
    auto* o = app->add_option(flags, var, help)->capture_default_str();
    if (!key.empty()) g_bindings.push_back({o, key});
    return o;
}

CLI::Option* flag(CLI::App* app, const std::string& flags, bool& var, const std::string& key, const std::string& help) {
    auto* o = app->add_flag(flags, var, help);
    if (!key.empty()) g_bindings.push_back({o, key});
    return o;
}

std::string find_config_arg(int argc, char** argv) {
    for (int i = 1; i < argc; ++i) {
        const std::string a = argv[i];
        if (a == "--config" && i + 1 < argc) return argv[i + 1];
        if (a.rfind("--config=", 0) == 0) return a.substr(9);
    }
    return {};
}

void write_text(const fs::path& path, const std::string& text) {
    write_file_bytes(path, std::span(reinterpret_cast<const std::uint8_t*>(text.data()), text.size()));
}

fs::path base_dir(const fs::path& manifest) {
    return manifest.has_parent_path() ? manifest.parent_path() : fs::path(".");
}

fs::path resolve(const fs::path& base, const std::string& ref) {
    const fs::path p(ref);
    return p.is_absolute() ? p : base / p;
}

Split parse_split_arg(const std::string& s) {
    return s == "all" ? Split::unassigned : parse_split(s);
}

Corpus select(const Corpus& c, const std::string& split) {
    return split == "all" ? c : c.subset(parse_split_arg(split));
}

std::vector<EmbeddingRecord> embed_corpus(const Encoder& enc, const Corpus& corpus, const ImageStore& images,
                                          bool normalize) {
    std::vector<Image> prepared;
    prepared.reserve(corpus.size());
    for (const auto& r : corpus.records()) prepared.push_back(prepare_input(images.at(r.id), enc.config().input_size));
    std::vector<const Image*> ptrs;
    for (const auto& p : prepared) ptrs.push_back(&p);
    const auto emb = enc.embed_batch(ptrs, normalize);
    std::vector<EmbeddingRecord> out;
    for (std::size_t i = 0; i < corpus.size(); ++i) {
        out.push_back({corpus.records()[i].id, corpus.records()[i].cluster_label, emb[i]});
    }
    return out;
}

Encoder load_encoder(const fs::path& checkpoint) {
    return Encoder::from_checkpoint(nn::load_checkpoint(checkpoint));
}

std::map<std::string, std::string> labels_of(const std::vector<EmbeddingRecord>& rows) {
    std::map<std::string, std::string> m;
    for (const auto& r : rows) m[r.id] = r.label;
    return m;
}

HttpFrontend* g_frontend = nullptr;

} // namespace

int main(int argc, char** argv) {
    CLI::App app{"doubt image matching: synthetic data, self-supervised training, ANN index, evaluation, service"};
    app.require_subcommand(1);
    app.fallthrough(); // --seed / --config may follow any subcommand
    std::uint64_t seed = 0;
    std::string config_path;
    app.add_option("--config", config_path, "flat 'section.key = value' config file");
    opt(&app, "--seed", seed, "global.seed", "random seed");

    // synth
    auto* synth = app.add_subcommand("synth", "generate a synthetic diagram corpus (PNG images + manifest)");
    SynthOptions so;
    std::string synth_out = "data", family = "outline";
    opt(synth, "--out", synth_out, "synth.out", "output directory");
    opt(synth, "--clusters", so.n_clusters, "synth.clusters", "number of clusters");
    opt(synth, "--variants", so.variants_per_cluster, "synth.variants", "images per cluster");
    opt(synth, "--size", so.side, "synth.size", "image side in pixels");
    opt(synth, "--family", family, "synth.family", "outline|curves")->check(CLI::IsMember({"outline", "curves"}));
    opt(synth, "--prefix", so.prefix, "synth.prefix", "id/label prefix");

    // split
    auto* split = app.add_subcommand("split", "assign whole clusters to train/val/test");
    std::string split_in, split_out;
    std::vector<double> ratios{kDefaultSplitRatios.begin(), kDefaultSplitRatios.end()};
    split->add_option("--manifest", split_in, "input manifest")->required();
    split->add_option("--out", split_out, "output manifest (default: overwrite input)");
    opt(split, "--ratios", ratios, "split.ratios", "train,val,test proportions")->expected(3)->delimiter(',');

    // train
    auto* train = app.add_subcommand("train", "train an encoder");
    std::string mode = "byol", train_manifest, train_out = "model.dmck";
    TrainConfig bc;
    TripletConfig tc;
    opt(train, "--mode", mode, "train.mode", "byol|triplet")->check(CLI::IsMember({"byol", "triplet"}));
    opt(train, "--policy", bc.policy, "train.policy", "custom|default (byol)")
        ->check(CLI::IsMember({"custom", "default"}));
    train->add_option("--manifest", train_manifest, "split manifest")->required();
    opt(train, "--out", train_out, "train.out", "checkpoint path");
    opt(train, "--epochs", bc.epochs, "train.epochs", "epochs");
    opt(train, "--batch-size", bc.batch_size, "train.batch_size", "batch size");
    opt(train, "--lr", bc.base_lr, "train.lr", "base learning rate");
    opt(train, "--warmup", bc.warmup_epochs, "train.warmup_epochs", "warmup epochs (byol)");
    opt(train, "--tau", bc.tau, "train.tau", "EMA coefficient (byol)");
    flag(train, "--symmetrize", bc.symmetrize, "train.symmetrize", "add the swapped-view loss term (byol)");
    opt(train, "--hard-count", tc.hard_count, "train.hard_count", "mined triplets per batch (triplet)");
    opt(train, "--margin", tc.margin, "train.margin", "triplet margin");
    opt(train, "--lr-decay", tc.lr_decay, "train.lr_decay", "per-epoch decay (triplet)");
    opt(train, "--input-size", bc.model.input_size, "model.input_size", "model input side");

    // embed
    auto* embed = app.add_subcommand("embed", "write encoder embeddings for a manifest split");
    std::string emb_ckpt, emb_manifest, emb_out = "embeddings.tsv", emb_split = "all", metric = "cosine";
    embed->add_option("--checkpoint", emb_ckpt, "checkpoint")->required();
    embed->add_option("--manifest", emb_manifest, "manifest")->required();
    opt(embed, "--split", emb_split, "embed.split", "train|val|test|all");
    opt(embed, "--out", emb_out, "embed.out", "embeddings TSV");
    opt(embed, "--metric", metric, "index.metric", "cosine normalizes the output")
        ->check(CLI::IsMember({"cosine", "euclidean"}));

    // index build
    auto* index = app.add_subcommand("index", "index operations");
    auto* index_build = index->add_subcommand("build", "build an HNSW index from embeddings");
    index->require_subcommand(1);
    std::string idx_emb, idx_out = "index.dmix";
    HnswParams hp;
    index_build->add_option("--embeddings", idx_emb, "embeddings TSV")->required();
    opt(index_build, "--out", idx_out, "index.out", "index path");
    opt(index_build, "--metric", metric, "index.metric", "cosine|euclidean")
        ->check(CLI::IsMember({"cosine", "euclidean"}));
    opt(index_build, "--M", hp.M, "index.M", "max neighbours per upper layer");
    opt(index_build, "--ef-construction", hp.ef_construction, "index.ef_construction", "build candidate pool");

    // query
    auto* query = app.add_subcommand("query", "query an index with an image");
    std::string q_ckpt, q_index, q_image;
    int k = 5, ef = 100;
    query->add_option("--checkpoint", q_ckpt, "checkpoint")->required();
    query->add_option("--index", q_index, "index")->required();
    query->add_option("--image", q_image, "PNG image")->required();
    opt(query, "-k,--k", k, "service.k", "results");
    opt(query, "--ef", ef, "index.ef_search", "search candidate pool");

    // eval
    auto* ev = app.add_subcommand("eval", "evaluation protocols");
    ev->require_subcommand(1);
    std::string ev_emb, ev_index, ev_out, ev_name = "model";
    auto* ev_topk = ev->add_subcommand("topk", "top-1/3/5 accuracy, self excluded");
    ev_topk->add_option("--index", ev_index, "index")->required();
    ev_topk->add_option("--embeddings", ev_emb, "query embeddings (labels also label the gallery)")->required();
    ev_topk->add_option("--name", ev_name, "row name");
    opt(ev_topk, "--ef", ef, "index.ef_search", "search candidate pool");
    ev_topk->add_option("--out", ev_out, "report prefix (.tsv/.json)");

    auto* ev_ratios = ev->add_subcommand("ratios", "between/within label distance ratios");
    ev_ratios->add_option("--embeddings", ev_emb, "embeddings")->required();
    ev_ratios->add_option("--out", ev_out, "report prefix");

    auto* ev_nn = ev->add_subcommand("nnmatrix", "exact nearest neighbours + distance grid");
    int nn_k = 5;
    ev_nn->add_option("--embeddings", ev_emb, "embeddings")->required();
    ev_nn->add_option("--k", nn_k, "neighbours")->capture_default_str();
    ev_nn->add_option("--out", ev_out, "report prefix (.tsv and .grid.tsv)");

    auto* ev_cluster = ev->add_subcommand("cluster", "eps-graph clustering precision / noise");
    double eps = 0.5;
    std::size_t min_size = 2;
    ev_cluster->add_option("--embeddings", ev_emb, "embeddings")->required();
    opt(ev_cluster, "--eps", eps, "eval.eps", "linkage distance");
    opt(ev_cluster, "--min-size", min_size, "eval.min_size", "smallest non-noise cluster");
    ev_cluster->add_option("--out", ev_out, "report prefix");

    auto* ev_ood = ev->add_subcommand("ood", "out-of-distribution probe");
    std::string ood_ckpt, ood_manifest, ood_train_manifest;
    ev_ood->add_option("--checkpoint", ood_ckpt, "checkpoint")->required();
    ev_ood->add_option("--index", ev_index, "gallery index")->required();
    ev_ood->add_option("--manifest", ood_manifest, "held-out manifest")->required();
    ev_ood->add_option("--train-manifest", ood_train_manifest, "training manifest (overlap check)")->required();
    ev_ood->add_option("--out", ev_out, "report prefix");

    auto* ev_mi = ev->add_subcommand("mi", "mutual information per augmentation");
    std::string mi_manifest;
    int mi_pairs = 50, mi_bins = 32;
    ev_mi->add_option("--manifest", mi_manifest, "manifest")->required();
    opt(ev_mi, "--pairs", mi_pairs, "eval.mi_pairs", "pairs per kind");
    opt(ev_mi, "--bins", mi_bins, "eval.mi_bins", "histogram bins");
    ev_mi->add_option("--out", ev_out, "report prefix");

    // serve
    auto* serve = app.add_subcommand("serve", "HTTP query/validate service");
    std::string s_ckpt, s_index, s_manifest, host = "127.0.0.1", records;
    int port = 8080;
    serve->add_option("--checkpoint", s_ckpt, "checkpoint")->required();
    serve->add_option("--index", s_index, "index")->required();
    serve->add_option("--manifest", s_manifest, "gallery manifest")->required();
    opt(serve, "--host", host, "service.host", "bind address");
    opt(serve, "--port", port, "service.port", "port (0 = any free port)");
    opt(serve, "-k,--k", k, "service.k", "default result count");
    opt(serve, "--ef", ef, "index.ef_search", "search candidate pool");
    opt(serve, "--records", records, "service.records", "append-only verdict log");

    try {
        const auto cfg_path = find_config_arg(argc, argv);
        if (!cfg_path.empty()) {
            const auto cfg = Config::load(cfg_path);
            for (const auto& b : g_bindings) {
                if (auto v = cfg.get(b.key)) b.option->default_val(*v);
            }
        }
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 2;
    }

    CLI11_PARSE(app, argc, argv);

    try {
        if (*synth) {
            so.seed = seed;
            so.family = family == "curves" ? SynthFamily::curves : SynthFamily::outline;
            const auto s = synth_generate(so);
            write_synth(s, synth_out);
            std::cout << "wrote " << s.corpus.size() << " images in " << s.corpus.cluster_count() << " clusters to "
                      << synth_out << "\n";
        } else if (*split) {
            const auto c = load_manifest(split_in);
            const auto out = split_by_cluster(c, {ratios[0], ratios[1], ratios[2]}, seed);
            save_manifest(out, split_out.empty() ? split_in : split_out);
            for (Split s : {Split::train, Split::val, Split::test}) {
                std::cout << to_string(s) << "\t" << out.labels_in(s).size() << " clusters\t" << out.in_split(s).size()
                          << " images\n";
            }
        } else if (*train) {
            const auto corpus = load_manifest(train_manifest);
            const auto images = load_images(corpus, base_dir(train_manifest));
            auto report = [](const EpochLog& e) {
                std::printf("epoch %d\ttrain %.6f\tval %.6f\n", e.epoch, e.train_loss, e.val_loss);
                std::fflush(stdout);
            };
            TrainResult result;
            std::string meta;
            if (mode == "byol") {
                bc.seed = seed;
                result = train_byol(corpus, images, bc, report);
                meta = byol_metadata_json(bc, result);
            } else {
                tc.seed = seed;
                tc.epochs = bc.epochs;
                tc.batch_size = bc.batch_size;
                tc.base_lr = bc.base_lr;
                tc.model = bc.model;
                tc.hard_count = std::min(tc.hard_count, tc.batch_size);
                result = train_triplet(corpus, images, tc, report);
                meta = triplet_metadata_json(tc, result);
            }
            nn::save_checkpoint(result.checkpoint, train_out);
            write_text(train_out + ".json", meta);
            write_text(train_out + ".loss.tsv", format_loss_curve(result.curve));
            std::cout << "best epoch " << result.best_epoch << " val loss " << result.best_val_loss << " -> "
                      << train_out << "\n";
        } else if (*embed) {
            const auto enc = load_encoder(emb_ckpt);
            const auto corpus = select(load_manifest(emb_manifest), emb_split);
            if (corpus.empty()) throw std::runtime_error("no records in split '" + emb_split + "'");
            const auto images = load_images(corpus, base_dir(emb_manifest));
            const auto rows = embed_corpus(enc, corpus, images, metric == "cosine");
            save_embeddings(rows, emb_out);
            std::cout << "wrote " << rows.size() << " embeddings to " << emb_out << "\n";
        } else if (*index_build) {
            const auto rows = load_embeddings(idx_emb);
            std::vector<std::string> ids;
            std::vector<Embedding> vecs;
            for (const auto& r : rows) {
                ids.push_back(r.id);
                vecs.push_back(r.values);
            }
            const auto idx = build_index(ids, vecs, parse_metric(metric), hp, seed);
            idx.save(idx_out);
            std::cout << "indexed " << idx.size() << " vectors, top level " << idx.top_level() << " -> " << idx_out
                      << "\n";
        } else if (*query) {
            const auto enc = load_encoder(q_ckpt);
            const auto idx = HnswIndex::load(q_index);
            const auto img = prepare_input(load_png(q_image), enc.config().input_size);
            const auto e = enc.embed(img, idx.metric() == Metric::cosine);
            const int kk = std::min<int>(k, static_cast<int>(idx.size()));
            std::cout << "rank\tid\tscore\n";
            for (const auto& m : idx.search(e, kk, std::max(ef, kk))) {
                std::printf("%d\t%s\t%.6f\n", m.rank, m.id.c_str(), m.score);
            }
        } else if (*ev_topk) {
            const auto idx = HnswIndex::load(ev_index);
            const auto rows = load_embeddings(ev_emb);
            const auto r = topk_accuracy(idx, rows, labels_of(rows), {1, 3, 5}, ef);
            std::cout << r.to_tsv(ev_name);
            if (!ev_out.empty()) {
                write_text(ev_out + ".tsv", r.to_tsv(ev_name));
                write_text(ev_out + ".json", r.to_json());
            }
        } else if (*ev_ratios) {
            const auto r = discriminant_ratios(load_embeddings(ev_emb));
            std::cout << r.to_json();
            if (!ev_out.empty()) {
                write_text(ev_out + ".tsv", r.to_tsv());
                write_text(ev_out + ".json", r.to_json());
            }
        } else if (*ev_nn) {
            const auto rows = load_embeddings(ev_emb);
            const auto m = nn_matrix(rows, nn_k);
            std::cout << format_nn_matrix(m);
            std::printf("in-label neighbour fraction\t%.4f\n", in_label_fraction(m, rows));
            if (!ev_out.empty()) {
                write_text(ev_out + ".tsv", format_nn_matrix(m));
                write_text(ev_out + ".grid.tsv", format_distance_grid(rows, distance_grid(rows)));
            }
        } else if (*ev_cluster) {
            const auto r = threshold_cluster(load_embeddings(ev_emb), eps, min_size);
            std::cout << r.to_tsv();
            if (!ev_out.empty()) {
                write_text(ev_out + ".tsv", r.to_tsv());
                write_text(ev_out + ".json", r.to_json());
            }
        } else if (*ev_ood) {
            const auto enc = load_encoder(ood_ckpt);
            const auto idx = HnswIndex::load(ev_index);
            const auto held = load_manifest(ood_manifest);
            const auto held_images = load_images(held, base_dir(ood_manifest));
            const auto train_corpus = load_manifest(ood_train_manifest).subset(Split::train);
            const auto train_images = load_images(train_corpus, base_dir(ood_train_manifest));
            std::set<std::string> train_labels;
            for (const auto& [label, ids] : train_corpus.label_index()) train_labels.insert(label);
            const auto r = ood_probe(enc, idx, held, held_images, train_labels, train_images, seed);
            std::cout << r.topk.to_tsv("ood") << r.to_json();
            if (!ev_out.empty()) write_text(ev_out + ".json", r.to_json());
        } else if (*ev_mi) {
            const auto corpus = load_manifest(mi_manifest);
            const auto images = load_images(corpus, base_dir(mi_manifest));
            const std::vector<AugKind> augs{AugKind::crop,           AugKind::color_jitter, AugKind::grayscale,
                                            AugKind::rotate,         AugKind::channel_shuffle,
                                            AugKind::color_mask,     AugKind::hflip};
            const auto r = mi_gain_report(corpus, images, augs, mi_pairs, seed, mi_bins);
            std::cout << r.to_tsv();
            if (!ev_out.empty()) {
                write_text(ev_out + ".tsv", r.to_tsv());
                write_text(ev_out + ".json", r.to_json());
            }
        } else if (*serve) {
            auto enc = load_encoder(s_ckpt);
            auto idx = std::make_shared<const HnswIndex>(HnswIndex::load(s_index));
            const auto corpus = load_manifest(s_manifest);
            std::map<std::string, GalleryEntry> gallery;
            for (const auto& r : corpus.records()) {
                gallery[r.id] = {r.cluster_label, resolve(base_dir(s_manifest), r.image_ref), {}};
            }
            ServiceOptions so2;
            so2.default_k = k;
            so2.ef_search = ef;
            so2.record_file = records;
            MatchService service(std::move(enc), idx, std::move(gallery), so2);
            HttpFrontend frontend(service);
            const int bound = frontend.bind(host, port);
            std::cout << "listening on " << host << ":" << bound << "\n" << std::flush;
            g_frontend = &frontend;
            std::signal(SIGINT, [](int) {
                if (g_frontend) g_frontend->stop();
            });
            std::signal(SIGTERM, [](int) {
                if (g_frontend) g_frontend->stop();
            });
            frontend.run();
            g_frontend = nullptr;
        }
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 1;
    }
    return 0;
}
