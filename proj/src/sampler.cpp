#include "mage/sampler.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <stdexcept>

namespace mage {

int DecodeState::masked_count() const {
    int n = 0;
    for (bool b : mask) n += b ? 1 : 0;
    return n;
}

std::vector<int> cosine_schedule(int n0, int steps) {
    if (n0 < 1 || steps < 1) throw std::invalid_argument("cosine_schedule: need N0 >= 1, T >= 1");
    std::vector<int> out(static_cast<size_t>(steps + 1));
    for (int t = 0; t <= steps; ++t) {
        double raw = n0 * std::cos(3.141592653589793 * t / (2.0 * steps));
        int v = static_cast<int>(std::floor(raw + 1e-9)); // guard cos() rounding at t=0
        if (t > 0) v = std::min(v, out[static_cast<size_t>(t - 1)] - 1);
        out[static_cast<size_t>(t)] = std::max(v, 0);
    }
    out[static_cast<size_t>(steps)] = 0;
    return out;
}

float gumbel_confidence(float log_prob, float gumbel_temp, RngStream& rng) {
    if (!std::isfinite(log_prob)) throw std::invalid_argument("gumbel_confidence: non-finite log_prob");
    if (gumbel_temp == 0.0f) return log_prob;
    double u = rng.uniform_open();
    double g = -std::log(-std::log(u));
    return log_prob + gumbel_temp * static_cast<float>(g);
}

namespace {

// Softmax row -> categorical sample; returns (token, ln p(token)).
std::pair<int, float> sample_row(const float* logits, int K, float temp, RngStream& rng) {
    double mx = logits[0];
    for (int c = 1; c < K; ++c) mx = std::max(mx, static_cast<double>(logits[c]));
    std::vector<double> p(static_cast<size_t>(K));
    double z = 0.0;
    for (int c = 0; c < K; ++c) {
        p[static_cast<size_t>(c)] = std::exp((logits[c] - mx) / temp);
        z += p[static_cast<size_t>(c)];
    }
    double u = rng.uniform_open() * z;
    double acc = 0.0;
    int pick = K - 1;
    for (int c = 0; c < K; ++c) {
        acc += p[static_cast<size_t>(c)];
        if (u <= acc) {
            pick = c;
            break;
        }
    }
    return {pick, static_cast<float>(std::log(p[static_cast<size_t>(pick)] / z))};
}

} // namespace

void decode_step(DecodeState& state, MageModel& model, const std::vector<int>& schedule,
                 const DecodeSchedule& cfg, RngStream& rng,
                 const std::optional<std::vector<int>>& labels) {
    int N = model.config().seq_len;
    if (static_cast<int>(state.grid.size()) != N) throw std::invalid_argument("decode_step: state length mismatch");
    if (state.step >= cfg.steps) throw std::logic_error("decode_step: schedule exhausted");

    std::vector<int> masked_positions;
    for (int i = 0; i < N; ++i)
        if (state.mask[static_cast<size_t>(i)]) masked_positions.push_back(i);
    if (masked_positions.empty()) {
        ++state.step;
        return;
    }

    // Predict: zero-drop plan over the current mask; committed tokens visible.
    MaskPlan plan = MaskPlan::from_mask_set(N, masked_positions);
    std::vector<int> tokens = state.grid;
    for (int pos : masked_positions) tokens[static_cast<size_t>(pos)] = 0;
    ag::Graph g(false);
    RngStream dummy; // dropout disabled at inference
    ag::NodeId logits;
    if (labels) {
        std::vector<EncoderInputSpec> specs{apply_mask(tokens, plan)};
        EncoderBatchOut enc = model.embed_and_encode(g, specs, dummy);
        ag::NodeId padded = model.pad_with_class(g, enc, {plan});
        logits = model.conditional_decode(g, padded, *labels, dummy);
    } else {
        logits = model.forward_train(g, {tokens}, {plan}, dummy);
    }
    const Tensor& tl = g.val(logits);
    int K = tl.cols();

    // Sample every masked position, score it with Gumbel-perturbed confidence.
    for (int pos : masked_positions) {
        auto [tok, logp] = sample_row(&tl.v[static_cast<size_t>(pos) * K], K, cfg.sample_temp, rng);
        state.grid[static_cast<size_t>(pos)] = tok;
        state.confidence[static_cast<size_t>(pos)] = gumbel_confidence(logp, cfg.gumbel_temp, rng);
        state.mask[static_cast<size_t>(pos)] = false;
    }

    // Re-mask the lowest-confidence predictions; committed slots stay at +inf.
    int next = schedule.at(static_cast<size_t>(state.step + 1));
    next = std::min(next, static_cast<int>(masked_positions.size()));
    if (next > 0) {
        std::stable_sort(masked_positions.begin(), masked_positions.end(), [&](int a, int b) {
            return state.confidence[static_cast<size_t>(a)] < state.confidence[static_cast<size_t>(b)];
        });
        for (int i = 0; i < next; ++i) state.mask[static_cast<size_t>(masked_positions[static_cast<size_t>(i)])] = true;
    }
    for (int i = 0; i < N; ++i)
        if (!state.mask[static_cast<size_t>(i)])
            state.confidence[static_cast<size_t>(i)] = std::numeric_limits<float>::infinity();
    ++state.step;
}

namespace {
TokenGrid run_decode(DecodeState state, int height, int width, MageModel& model,
                     const DecodeSchedule& cfg, RngStream& rng, std::optional<std::vector<int>> labels) {
    int n0 = state.masked_count();
    std::vector<int> schedule = cosine_schedule(n0, cfg.steps);
    while (state.step < cfg.steps && state.masked_count() > 0)
        decode_step(state, model, schedule, cfg, rng, labels);
    TokenGrid out;
    out.height = height;
    out.width = width;
    out.indices = state.grid;
    return out;
}
} // namespace

TokenGrid generate(MageModel& model, int grid_side, const DecodeSchedule& cfg, RngStream& rng,
                   std::optional<int> label) {
    int N = model.config().seq_len;
    if (grid_side * grid_side != N) throw std::invalid_argument("generate: grid side inconsistent with seq_len");
    DecodeState state;
    state.grid.assign(static_cast<size_t>(N), 0);
    state.mask.assign(static_cast<size_t>(N), true);
    state.confidence.assign(static_cast<size_t>(N), -std::numeric_limits<float>::infinity());
    std::optional<std::vector<int>> labels;
    if (label) labels = std::vector<int>{*label};
    return run_decode(std::move(state), grid_side, grid_side, model, cfg, rng, std::move(labels));
}

TokenGrid inpaint(const TokenGrid& tokens, const std::vector<bool>& region_mask, MageModel& model,
                  const DecodeSchedule& cfg, RngStream& rng) {
    int N = tokens.size();
    if (static_cast<int>(region_mask.size()) != N) throw std::invalid_argument("inpaint: region size mismatch");
    if (N != model.config().seq_len) throw std::invalid_argument("inpaint: grid inconsistent with model");
    bool any = false;
    for (bool b : region_mask) any = any || b;
    if (!any) return tokens;

    DecodeState state;
    state.grid = tokens.indices;
    state.mask.assign(region_mask.begin(), region_mask.end());
    state.confidence.assign(static_cast<size_t>(N), std::numeric_limits<float>::infinity());
    for (int i = 0; i < N; ++i)
        if (state.mask[static_cast<size_t>(i)])
            state.confidence[static_cast<size_t>(i)] = -std::numeric_limits<float>::infinity();
    return run_decode(std::move(state), tokens.height, tokens.width, model, cfg, rng, std::nullopt);
}

} // namespace mage
