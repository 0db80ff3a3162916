#pragma once

#include <cstdint>
#include <map>
#include <span>
#include <string>
#include <vector>

#include "dm/byol.hpp"

namespace dm {

/// max(0, |a-p|^2 - |a-n|^2 + margin).
double triplet_loss(std::span<const float> a, std::span<const float> p, std::span<const float> n, double margin = 0.2);
double triplet_loss(std::span<const double> a, std::span<const double> p, std::span<const double> n,
                    double margin = 0.2);

struct Triplet {
    std::string anchor_id;
    std::string positive_id;
    std::string negative_id;
    bool operator==(const Triplet&) const = default;
};

/// hard: negative nearer the anchor than the positive. semi_hard: farther,
/// but inside the margin. nearest: no such negative existed, the closest
/// one was used. random: uniformly drawn negative.
enum class TripletKind { hard, semi_hard, nearest, random };
std::string_view to_string(TripletKind k);

struct MinedTriplet {
    Triplet triplet;
    TripletKind kind;
};

using EmbeddingMap = std::map<std::string, Embedding>;
using LabelMap = std::map<std::string, std::string>;

/// One batch: the first hard_count triplets are mined against `embeddings`
/// (hard, else semi-hard, else nearest negative), the rest are random.
/// Anchors are drawn from clusters with at least two members.
std::vector<MinedTriplet> mine_triplets(const EmbeddingMap& embeddings, const LabelMap& labels, std::size_t batch_size,
                                        std::size_t hard_count, Rng& rng, double margin = 0.2);

struct TripletModel {
    EncoderConfig cfg;
    nn::Sequential<float> encoder;
    nn::ParamSet<float> params;
    nn::ParamSet<float> buffers;
};

TripletModel init_triplet_model(const EncoderConfig& cfg, std::uint64_t seed);

/// Mean triplet loss over the batch on L2-normalized encoder outputs, one
/// Adam step. Images are looked up by id and must be at the model input size.
double triplet_train_step(TripletModel& model, const ImageStore& images, std::span<const Triplet> batch,
                          nn::AdamState<float>& adam, double lr, double margin = 0.2);
double triplet_eval_loss(const TripletModel& model, const ImageStore& images, std::span<const Triplet> batch,
                         double margin = 0.2);
/// Eval-mode normalized embeddings of the given ids.
EmbeddingMap triplet_embed(const TripletModel& model, const ImageStore& images, const std::vector<std::string>& ids);

struct TripletConfig {
    int epochs = 50;
    int batch_size = 64;
    int hard_count = 50;
    double base_lr = 5e-4;
    double lr_decay = 0.9;
    double margin = 0.2;
    std::uint64_t seed = 0;
    std::size_t val_triplets = 256;
    EncoderConfig model{};

    void validate() const;
};

/// Offline mining each epoch from the current embeddings; best validation
/// loss (fixed random val-split triplets) wins.
TrainResult train_triplet(const Corpus& corpus, const ImageStore& images, const TripletConfig& config,
                          const EpochCallback& on_epoch = {});

nn::ParamSet<float> triplet_checkpoint(const TripletModel& model);
std::string triplet_metadata_json(const TripletConfig& config, const TrainResult& result);

} // namespace dm
