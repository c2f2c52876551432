#pragma once

#include <cstdint>
#include <vector>

#include "mage/graph.hpp"
#include "mage/optim.hpp"
#include "mage/params.hpp"
#include "mage/rng.hpp"

namespace mage {

// 2-D grid of codebook indices.
struct TokenGrid {
    int height = 0;
    int width = 0;
    std::vector<int> indices; // row-major, values in [0, K)

    int size() const { return height * width; }
};

struct VqConfig {
    int image_size = 32;   // square inputs, pixels in [-1, 1]
    int num_blocks = 2;    // downsample factor 2^num_blocks
    int base_channels = 32;
    int codebook_size = 64; // K
    int codebook_dim = 16;  // d
    float commitment_beta = 0.25f;

    int grid_size() const { return image_size >> num_blocks; }
};

// VQ autoencoder: conv encoder, nearest-neighbor codebook with a
// straight-through gradient, conv decoder. Trained with
// L2 reconstruction + codebook + beta * commitment losses.
class VqModel {
  public:
    explicit VqModel(const VqConfig& cfg, RngStream& init_rng);

    const VqConfig& config() const { return cfg_; }
    ParamStore& params() { return params_; }
    ag::Param& codebook() { return *codebook_; }
    std::vector<int64_t>& usage_counts() { return usage_; }

    // Graph builders (shared by training and inference paths).
    // image node: [H*W, 3]; returns feature node [h*w, d].
    ag::NodeId encode_features(ag::Graph& g, ag::NodeId image) const;
    // quantized feature node [h*w, d] -> image node [H*W, 3], tanh-bounded.
    ag::NodeId decode_features(ag::Graph& g, ag::NodeId features) const;

    // Re-initialize entries unused since the last call to random rows of
    // `recent_features` (a [n, d] sample of encoder outputs). Returns the
    // number of entries reset and clears usage counters.
    int reinit_dead_entries(const Tensor& recent_features, RngStream& rng);

  private:
    ag::NodeId res_block(ag::Graph& g, ag::NodeId x, int side, int ch, const std::string& prefix) const;

    VqConfig cfg_;
    ParamStore params_;
    ag::Param* codebook_ = nullptr;
    std::vector<int64_t> usage_;
};

struct QuantizeResult {
    TokenGrid grid;
    Tensor quantized; // [h*w, d]
    float vq_loss = 0.0f;
    float commit_loss = 0.0f;
};

// Nearest codebook index per row of features (ties -> lowest index).
std::vector<int> nearest_codes(const Tensor& features, const Tensor& codebook);

// Plain (non-graph) quantization with both auxiliary loss values. `h`/`w`
// describe the feature grid; features is [h*w, d].
QuantizeResult quantize(const Tensor& features, int h, int w, const Tensor& codebook);

// Graph quantization for training: returns the straight-through node plus
// the two auxiliary scalar loss nodes.
struct VqGraphOut {
    ag::NodeId quantized;
    ag::NodeId vq_loss;
    ag::NodeId commit_loss;
    std::vector<int> codes;
};
VqGraphOut quantize_on_graph(ag::Graph& g, ag::NodeId features, ag::Param& codebook);

// Frozen-model token round trip.
TokenGrid encode_image(const Tensor& image, VqModel& model);
Tensor decode_tokens(const TokenGrid& grid, VqModel& model); // clamped to [-1, 1]

struct TokenizerStepStats {
    float total = 0.0f;
    float recon = 0.0f;
    float vq = 0.0f;
    float commit = 0.0f;
};

// One optimizer step over a batch of images ([H*W,3] each). Updates codebook
// usage counts. Throws on non-finite loss.
TokenizerStepStats tokenizer_train_step(const std::vector<Tensor>& batch, VqModel& model, AdamW& opt,
                                        float lr);

} // namespace mage
