#pragma once

#include <vector>

#include "mage/graph.hpp"
#include "mage/masking.hpp"

namespace mage {

struct ContrastiveConfig {
    float temperature = 0.2f;
    float lambda = 0.1f;
    float max_ratio = 0.6f; // views with m_r >= this do not participate
};

// Mean smoothed cross-entropy over masked positions only (dropped included).
// logits: [B * N, K]; targets: flat token ids, length B * N.
ag::NodeId reconstructive_loss(ag::Graph& g, ag::NodeId logits, const std::vector<int>& targets,
                               const std::vector<MaskPlan>& plans, float smoothing);

// Symmetrized InfoNCE between two views of L2-normalized embeddings [B, d].
// For each anchor the denominator runs over the opposite view's batch,
// positive included; both directions averaged.
ag::NodeId contrastive_loss(ag::Graph& g, ag::NodeId z_view1, ag::NodeId z_view2, float temperature);

// recon + lambda * contrast, contrast gated on both views' masking ratios
// being below cfg.max_ratio for >= 2 batch elements. Returns the combined
// scalar node and whether the contrastive term participated.
struct CombinedLoss {
    ag::NodeId total;
    bool contrastive_active = false;
    // Batch indices that pass the participation gate.
    static std::vector<int> participants(const std::vector<float>& ratios_view1,
                                         const std::vector<float>& ratios_view2, float max_ratio);
};
CombinedLoss combined_loss(ag::Graph& g, ag::NodeId recon, ag::NodeId contrast_or_minus1, float lambda);

} // namespace mage
