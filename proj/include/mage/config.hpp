#pragma once

#include <cstdint>
#include <map>
#include <string>

#include "mage/losses.hpp"
#include "mage/masking.hpp"
#include "mage/model.hpp"
#include "mage/tokenizer.hpp"

namespace mage {

enum class AugPolicy { Strong, Weak, None };

// Full run configuration. Parsed from plain `key = value` lines with dotted
// namespaces; unknown keys are rejected before any compute.
struct RunConfig {
    uint64_t seed = 7;

    // data
    std::string data_source = "synthetic"; // "synthetic" or a directory of class subfolders
    int image_size = 32;
    int num_classes = 10;
    int train_per_class = 50;
    int test_per_class = 20;

    AugPolicy augment = AugPolicy::Strong;

    MaskRatioDist mask;
    ContrastiveConfig loss;
    float label_smoothing = 0.1f;

    // tokenizer (vq.*)
    VqConfig vq;
    int vq_epochs = 10;
    int vq_batch = 16;
    float vq_lr = 1e-3f;

    // mage transformer (model.* / train.*)
    MageConfig model;
    int epochs = 60;
    int batch = 16;
    float base_lr = 1.2e-2f; // scaled by batch/256 at runtime
    float warmup_frac = 0.025f;
    bool bypass_quantizer = false;
    bool cache_tokens = false;
    int checkpoint_every = 0; // epochs; 0 = final only
    std::string tokenizer_checkpoint = "tokenizer.ckpt";

    // generation (gen.*)
    int gen_steps = 20;
    float gen_gumbel_temp = 6.0f;
    float gen_sample_temp = 1.0f;

    // probing (probe.*)
    int probe_epochs = 30;
    int probe_batch = 64;
    float probe_lr = 0.1f;
    float probe_momentum = 0.9f;
    float probe_weight_decay = 0.0f;
    int probe_samples_per_class = 0; // 0 = all
    float finetune_layer_decay = 0.65f;

    // Parse + validate. Throws std::invalid_argument with a message naming
    // the offending key.
    static RunConfig from_map(const std::map<std::string, std::string>& kv);
    static RunConfig from_file(const std::string& path);
    static RunConfig from_text(const std::string& text);

    // Serialization used for checkpoint snapshots; from_text(to_text(c))
    // reproduces every field.
    std::string to_text() const;
};

// Parses `key = value` lines; '#' starts a comment; blank lines ignored.
std::map<std::string, std::string> parse_config_text(const std::string& text);

} // namespace mage
