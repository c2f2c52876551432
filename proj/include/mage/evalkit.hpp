#pragma once

#include <vector>

#include "mage/dataset.hpp"
#include "mage/model.hpp"
#include "mage/tokenizer.hpp"

namespace mage {

struct FeatureSet {
    Tensor features; // [n, d]
    std::vector<int> labels;

    int size() const { return features.rows(); }
    int dim() const { return features.cols(); }
};

struct ProbeConfig {
    int epochs = 30;
    int batch = 64;
    float lr = 0.1f;
    float momentum = 0.9f;
    float weight_decay = 0.0f;
    bool freeze_encoder = true;
    int samples_per_class = 0; // 0 = all
    uint64_t seed = 1;
    float layerwise_decay = 0.65f; // fine-tune only
};

// Tokenize + zero-mask forward + mean pool over the token slots (class slot
// excluded). `block` = -1 uses the final encoder output, otherwise that
// encoder block (the per-layer probe sweep).
FeatureSet pooled_features(const std::vector<LabeledImage>& images, VqModel& tokenizer,
                           MageModel& model, int block = -1, bool bypass_quantizer = false);

// Trains one linear layer on frozen features; returns top-1 test accuracy.
float linear_probe(const FeatureSet& train, const FeatureSet& test, const ProbeConfig& cfg);

// Per-epoch test accuracy from the last probe/fine-tune run (for CSV reports).
const std::vector<float>& last_probe_curve();

// Subsamples n per class from the train features (error if any class is
// short), then runs linear_probe on the full test set.
float few_shot_probe(const FeatureSet& train, const FeatureSet& test, int n_per_class,
                     const ProbeConfig& cfg, RngStream& rng);

// End-to-end classification: pooled encoder feature + linear head, AdamW with
// layer-wise LR decay. freeze_encoder=true reduces to linear-probe behavior.
// num_classes > max label. Returns top-1 test accuracy.
float fine_tune(const Dataset& data, VqModel& tokenizer, MageModel& model, int num_classes,
                const ProbeConfig& cfg);

// Total-variation distance between empirical token-index distributions.
double token_marginal_tv(const std::vector<TokenGrid>& corpus_a, const std::vector<TokenGrid>& corpus_b,
                         int vocab);

} // namespace mage
