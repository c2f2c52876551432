#pragma once

#include <cstdint>
#include <vector>

#include "mage/rng.hpp"

namespace mage {

// Truncated Gaussian over masking ratios.
struct MaskRatioDist {
    float mode = 0.55f;
    float std = 0.25f;
    float min = 0.5f;
    float max = 1.0f;
};

// One sequence's masking plan: |masked| = ceil(m_r * l), a floor(0.5 * l)
// subset of the masked positions is dropped from the encoder input entirely.
struct MaskPlan {
    int seq_len = 0;
    float ratio = 0.0f;
    std::vector<int> masked;     // sorted ascending
    std::vector<int> dropped;    // sorted ascending, subset of masked
    std::vector<int> kept_order; // all positions minus dropped, ascending

    bool is_masked(int pos) const;
    bool is_dropped(int pos) const;

    // Evaluation path: nothing masked, nothing dropped.
    static MaskPlan zero_mask(int seq_len);
    // Decode path: given mask flags, nothing dropped.
    static MaskPlan from_mask_set(int seq_len, const std::vector<int>& masked_positions);
};

// Per-position encoder input: either a token id or the [M] marker, plus the
// original position for positional-embedding lookup.
struct EncoderInputSpec {
    struct Slot {
        int position; // original index in [0, l)
        int token;    // codebook index, or -1 for [M]
    };
    std::vector<Slot> slots; // relative order of the original sequence
    MaskPlan plan;
};

// Draw m_r from the truncated Gaussian by rejection; sigma == 0 returns the mode.
float sample_ratio(const MaskRatioDist& dist, RngStream& rng);

// Uniform plan with |masked| = ceil(m_r*l), |dropped| = floor(0.5*l).
// m_r below 0.5 is rejected (the drop-count guarantee would break).
MaskPlan build_mask_plan(int l, float m_r, RngStream& rng);

// Applies a plan to a token sequence. Output length l - |dropped|.
EncoderInputSpec apply_mask(const std::vector<int>& tokens, const MaskPlan& plan);

} // namespace mage
