#include "mage/masking.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

namespace mage {

bool MaskPlan::is_masked(int pos) const { return std::binary_search(masked.begin(), masked.end(), pos); }
bool MaskPlan::is_dropped(int pos) const { return std::binary_search(dropped.begin(), dropped.end(), pos); }

MaskPlan MaskPlan::zero_mask(int seq_len) {
    MaskPlan p;
    p.seq_len = seq_len;
    p.ratio = 0.0f;
    p.kept_order.resize(static_cast<size_t>(seq_len));
    for (int i = 0; i < seq_len; ++i) p.kept_order[static_cast<size_t>(i)] = i;
    return p;
}

MaskPlan MaskPlan::from_mask_set(int seq_len, const std::vector<int>& masked_positions) {
    MaskPlan p;
    p.seq_len = seq_len;
    p.masked = masked_positions;
    std::sort(p.masked.begin(), p.masked.end());
    p.ratio = seq_len > 0 ? static_cast<float>(p.masked.size()) / static_cast<float>(seq_len) : 0.0f;
    p.kept_order.resize(static_cast<size_t>(seq_len));
    for (int i = 0; i < seq_len; ++i) p.kept_order[static_cast<size_t>(i)] = i;
    return p;
}

float sample_ratio(const MaskRatioDist& dist, RngStream& rng) {
    if (dist.std < 0.0f || dist.min > dist.max) throw std::invalid_argument("sample_ratio: invalid distribution");
    if (dist.std == 0.0f) return dist.mode;
    // Rejection sampling; acceptance ~0.54 at the defaults.
    for (;;) {
        float x = dist.mode + dist.std * rng.normal();
        if (x >= dist.min && x <= dist.max) return x;
    }
}

MaskPlan build_mask_plan(int l, float m_r, RngStream& rng) {
    if (l < 2) throw std::invalid_argument("build_mask_plan: l must be >= 2");
    if (m_r < 0.5f || m_r > 1.0f) throw std::invalid_argument("build_mask_plan: m_r must be in [0.5, 1]");
    int n_mask = static_cast<int>(std::ceil(static_cast<double>(m_r) * l));
    n_mask = std::min(n_mask, l);
    int n_drop = l / 2; // floor(0.5 * l)

    std::vector<int> perm(static_cast<size_t>(l));
    for (int i = 0; i < l; ++i) perm[static_cast<size_t>(i)] = i;
    shuffle_indices(perm, rng);

    MaskPlan p;
    p.seq_len = l;
    p.ratio = m_r;
    p.masked.assign(perm.begin(), perm.begin() + n_mask);
    // uniform drop subset: re-shuffle the masked prefix, take n_drop
    std::vector<int> ms = p.masked;
    shuffle_indices(ms, rng);
    p.dropped.assign(ms.begin(), ms.begin() + n_drop);
    std::sort(p.masked.begin(), p.masked.end());
    std::sort(p.dropped.begin(), p.dropped.end());
    p.kept_order.reserve(static_cast<size_t>(l - n_drop));
    for (int i = 0; i < l; ++i)
        if (!p.is_dropped(i)) p.kept_order.push_back(i);
    return p;
}

EncoderInputSpec apply_mask(const std::vector<int>& tokens, const MaskPlan& plan) {
    if (static_cast<int>(tokens.size()) != plan.seq_len)
        throw std::invalid_argument("apply_mask: plan/sequence length mismatch");
    EncoderInputSpec spec;
    spec.plan = plan;
    spec.slots.reserve(plan.kept_order.size());
    for (int pos : plan.kept_order)
        spec.slots.push_back({pos, plan.is_masked(pos) ? -1 : tokens[static_cast<size_t>(pos)]});
    return spec;
}

} // namespace mage
