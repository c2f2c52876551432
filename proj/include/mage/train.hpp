#pragma once

#include <memory>
#include <ostream>
#include <string>

#include "mage/config.hpp"
#include "mage/dataset.hpp"
#include "mage/model.hpp"
#include "mage/tokenizer.hpp"

namespace mage {

// Trains the VQ tokenizer on the train split and writes
// <out_dir>/tokenizer.ckpt. Returns the checkpoint path.
std::string train_tokenizer(const RunConfig& cfg, const Dataset& data, const std::string& out_dir,
                            std::ostream& log);

struct MageTrainResult {
    std::string checkpoint_path;
    float final_loss = 0.0f;
    float final_recon = 0.0f;
};

// Trains the masked transformer against a frozen tokenizer checkpoint and
// writes <out_dir>/mage.ckpt with optimizer state for exact resume. When
// `resume_path` names an existing checkpoint, training continues from its
// stored epoch/step counters and produces byte-identical results to an
// uninterrupted run.
MageTrainResult train_mage(const RunConfig& cfg, const Dataset& data, const std::string& out_dir,
                           std::ostream& log, const std::string& resume_path = "");

// Reconstructs a VqModel from a tokenizer checkpoint.
std::unique_ptr<VqModel> load_tokenizer_checkpoint(const std::string& path,
                                                   RunConfig* cfg_out = nullptr);

// Reconstructs a MageModel from a transformer checkpoint.
std::unique_ptr<MageModel> load_mage_checkpoint(const std::string& path,
                                                RunConfig* cfg_out = nullptr);

// Resolves a checkpoint path: used verbatim when it exists, otherwise
// retried under `out_dir`.
std::string resolve_checkpoint(const std::string& path, const std::string& out_dir);

// Continuous (pre-quantization) tokenizer features for one image, [N, d].
Tensor continuous_features(const Tensor& image, VqModel& tokenizer);

} // namespace mage
