#pragma once

#include <cstdint>
#include <vector>

#include "mage/graph.hpp"
#include "mage/tensor.hpp"

namespace mage {

// AdamW with decoupled weight decay and global-norm gradient clipping.
struct AdamWConfig {
    float base_lr = 1.5e-4f;
    float beta1 = 0.9f;
    float beta2 = 0.95f;
    float eps = 1e-8f;
    float weight_decay = 0.05f;
    float clip_norm = 3.0f; // <= 0 disables clipping
};

class AdamW {
  public:
    AdamW() = default;
    AdamW(std::vector<ag::Param*> params, AdamWConfig cfg);

    // One update with the given schedule value (absolute learning rate).
    // Throws on non-finite gradients; parameters are left untouched in that case.
    void step(float lr);

    // Global L2 norm of all gradients (pre-clip).
    double grad_norm() const;

    void zero_grad();

    int64_t step_count() const { return step_count_; }
    const AdamWConfig& config() const { return cfg_; }

    // Per-parameter LR multipliers (layer-wise decay); default all 1.
    void set_lr_scales(std::vector<float> scales);

    // Moment buffers exposed for checkpointing, same order as params.
    std::vector<ag::Param*>& params() { return params_; }
    std::vector<Tensor>& moments1() { return m_; }
    std::vector<Tensor>& moments2() { return v_; }
    void set_step_count(int64_t s) { step_count_ = s; }

  private:
    std::vector<ag::Param*> params_;
    std::vector<Tensor> m_, v_;
    std::vector<float> lr_scales_;
    AdamWConfig cfg_;
    int64_t step_count_ = 0;
};

// Cosine decay with linear warmup; returns the absolute LR for a step.
float cosine_lr(float base_lr, int64_t step, int64_t total_steps, int64_t warmup_steps,
                float min_lr = 0.0f);

// Momentum SGD used by the probe trainer.
class MomentumSgd {
  public:
    MomentumSgd(std::vector<ag::Param*> params, float momentum = 0.9f, float weight_decay = 0.0f);
    void step(float lr);
    void zero_grad();

  private:
    std::vector<ag::Param*> params_;
    std::vector<Tensor> vel_;
    float momentum_, weight_decay_;
};

} // namespace mage
