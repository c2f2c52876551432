#pragma once

#include <optional>
#include <vector>

#include "mage/model.hpp"
#include "mage/rng.hpp"
#include "mage/tokenizer.hpp"

namespace mage {

struct DecodeSchedule {
    int steps = 20;            // T
    float gumbel_temp = 6.0f;  // tau applied to the confidence noise
    float sample_temp = 1.0f;  // categorical temperature (raw softmax at 1.0)
};

struct DecodeState {
    std::vector<int> grid;       // flat token indices; undefined where masked
    std::vector<bool> mask;      // true = still masked
    std::vector<float> confidence; // +inf at committed positions
    int step = 0;

    int masked_count() const;
};

// Masked-count targets [N_1 .. N_{T+1}]: floor(N0 * cos(pi t / 2T)), forced
// strictly decreasing so every step commits at least one token; final 0.
std::vector<int> cosine_schedule(int n0, int steps);

// log_prob + tau * g, g = -ln(-ln u).
float gumbel_confidence(float log_prob, float gumbel_temp, RngStream& rng);

// One predict/sample/re-mask iteration.
void decode_step(DecodeState& state, MageModel& model, const std::vector<int>& schedule,
                 const DecodeSchedule& cfg, RngStream& rng,
                 const std::optional<std::vector<int>>& labels = std::nullopt);

// T iterations from a fully masked grid.
TokenGrid generate(MageModel& model, int grid_side, const DecodeSchedule& cfg, RngStream& rng,
                   std::optional<int> label = std::nullopt);

// Regenerates only the positions marked true in region_mask; everything else
// is preserved verbatim. Empty region returns the input.
TokenGrid inpaint(const TokenGrid& tokens, const std::vector<bool>& region_mask, MageModel& model,
                  const DecodeSchedule& cfg, RngStream& rng);

} // namespace mage
