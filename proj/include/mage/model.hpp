#pragma once

#include <optional>
#include <string>
#include <vector>

#include "mage/graph.hpp"
#include "mage/masking.hpp"
#include "mage/params.hpp"
#include "mage/rng.hpp"

namespace mage {

enum class PadMode { ClassToken, MaskToken };

struct MageConfig {
    int vocab = 64;      // K
    int seq_len = 64;    // N = grid h*w
    int width = 128;
    int enc_depth = 4;
    int dec_depth = 4;
    int heads = 4;
    int mlp_ratio = 2;
    float dropout = 0.1f;
    PadMode pad_mode = PadMode::ClassToken;
    int num_classes = 0;      // > 0 enables the conditional decoder
    int vq_feature_dim = 16;  // for the unquantized-bypass input projection

    int head_dim() const { return width / heads; }
};

// Encoder output for a batch: one row block of seq_node per sequence,
// position 0 of each block is the class-token feature [C].
struct EncoderBatchOut {
    ag::NodeId seq = -1;   // [B * enc_len, width]
    int batch = 0;
    int enc_len = 0;       // slots + 1 (class token first)
    std::vector<ag::NodeId> block_outputs; // per encoder block, same layout
};

struct ForwardOptions {
    bool bypass_quantizer = false;
    // Continuous VQ features per batch element, [seq_len, vq_feature_dim];
    // required when bypass_quantizer is set.
    const std::vector<Tensor>* features = nullptr;
};

// Bidirectional ViT encoder-decoder over token sequences.
class MageModel {
  public:
    MageModel(const MageConfig& cfg, RngStream& init_rng);

    const MageConfig& config() const { return cfg_; }
    ParamStore& params() { return params_; }

    // Parameter groups for optimizer construction.
    std::vector<ag::Param*> backbone_params();     // everything except the conditional decoder
    std::vector<ag::Param*> conditional_params();  // label table + conditional decoder + its head
    std::vector<ag::Param*> encoder_params();      // embeddings + encoder blocks
    std::vector<ag::Param*> projection_params();   // contrastive MLP head

    // Embeds (token / [M] / [C0]) + positional embeddings, runs encoder blocks.
    // All specs must share the same slot count.
    EncoderBatchOut embed_and_encode(ag::Graph& g, const std::vector<EncoderInputSpec>& specs,
                                     RngStream& rng, const ForwardOptions& opts = {});

    // Scatters encoder latents back to full length; dropped slots are filled
    // with each sequence's [C] (or the shared mask vector when configured
    // for the mask-token-padding ablation); adds the decoder positional
    // embedding.
    // Returns [B * (seq_len + 1), width], class slot first per sequence.
    ag::NodeId pad_with_class(ag::Graph& g, const EncoderBatchOut& enc,
                              const std::vector<MaskPlan>& plans);

    // Decoder blocks + vocab head over the token slots: [B * seq_len, vocab].
    ag::NodeId decode_logits(ag::Graph& g, ag::NodeId padded, int batch, RngStream& rng);

    // apply_mask -> embed_and_encode -> pad_with_class -> decode_logits.
    ag::NodeId forward_train(ag::Graph& g, const std::vector<std::vector<int>>& token_seqs,
                             const std::vector<MaskPlan>& plans, RngStream& rng,
                             const ForwardOptions& opts = {});

    // Conditional decoder: label embedding prepended to the padded sequence;
    // gradient is blocked at the padded features so the encoder stays frozen.
    ag::NodeId conditional_decode(ag::Graph& g, ag::NodeId padded, const std::vector<int>& labels,
                                  RngStream& rng);

    // Mean over encoder token-slot outputs (class slot excluded): [B, width].
    // `block` = -1 pools the final output, otherwise that encoder block's.
    ag::NodeId pooled_encoder_feature(ag::Graph& g, const EncoderBatchOut& enc, int block = -1);

    // Contrastive projection: two-layer MLP + row L2 normalization, [B, width].
    ag::NodeId projection_head(ag::Graph& g, ag::NodeId pooled);

  private:
    ag::NodeId transformer_block(ag::Graph& g, ag::NodeId x, int batch, int tokens,
                                 const std::string& prefix, RngStream& rng);
    ag::NodeId decoder_stack(ag::Graph& g, ag::NodeId x, int batch, int tokens,
                             const std::string& prefix, int depth, RngStream& rng);

    MageConfig cfg_;
    ParamStore params_;
};

} // namespace mage
