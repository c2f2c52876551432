#include "mage/losses.hpp"

#include <cmath>
#include <stdexcept>

namespace mage {

ag::NodeId reconstructive_loss(ag::Graph& g, ag::NodeId logits, const std::vector<int>& targets,
                               const std::vector<MaskPlan>& plans, float smoothing) {
    const Tensor& tl = g.val(logits);
    int n = tl.rows();
    if (static_cast<int>(targets.size()) != n) throw std::invalid_argument("reconstructive_loss: target length mismatch");
    std::vector<float> weights(static_cast<size_t>(n), 0.0f);
    int total_masked = 0;
    int offset = 0;
    for (const MaskPlan& plan : plans) {
        for (int pos : plan.masked) {
            weights[static_cast<size_t>(offset + pos)] = 1.0f;
            ++total_masked;
        }
        offset += plan.seq_len;
    }
    if (offset != n) throw std::invalid_argument("reconstructive_loss: plan lengths don't cover logits");
    if (total_masked == 0) throw std::invalid_argument("reconstructive_loss: no masked positions");
    return g.cross_entropy_rows(logits, targets, smoothing, weights);
}

ag::NodeId contrastive_loss(ag::Graph& g, ag::NodeId z_view1, ag::NodeId z_view2, float temperature) {
    const Tensor& z1 = g.val(z_view1);
    const Tensor& z2 = g.val(z_view2);
    if (!z1.same_shape(z2)) throw std::invalid_argument("contrastive_loss: view shape mismatch");
    int B = z1.rows();
    if (B < 2) throw std::invalid_argument("contrastive_loss: need batch >= 2");
    if (temperature <= 0.0f) throw std::invalid_argument("contrastive_loss: temperature must be > 0");
    auto check_norm = [](const Tensor& z) {
        int m = z.cols();
        for (int r = 0; r < z.rows(); ++r) {
            double s = 0.0;
            for (int c = 0; c < m; ++c) s += static_cast<double>(z.v[static_cast<size_t>(r) * m + c]) *
                                              z.v[static_cast<size_t>(r) * m + c];
            if (std::fabs(std::sqrt(s) - 1.0) > 1e-4)
                throw std::invalid_argument("contrastive_loss: rows must be L2-normalized");
        }
    };
    check_norm(z1);
    check_norm(z2);

    std::vector<int> diag(static_cast<size_t>(B));
    for (int i = 0; i < B; ++i) diag[static_cast<size_t>(i)] = i;
    float inv_t = 1.0f / temperature;
    ag::NodeId sim12 = g.scale(g.matmul(z_view1, z_view2, false, true), inv_t);
    ag::NodeId sim21 = g.transpose(sim12);
    ag::NodeId l12 = g.cross_entropy_rows(sim12, diag, 0.0f);
    ag::NodeId l21 = g.cross_entropy_rows(sim21, diag, 0.0f);
    return g.scale(g.add_scalar_nodes(l12, l21, 1.0f), 0.5f);
}

std::vector<int> CombinedLoss::participants(const std::vector<float>& ratios_view1,
                                            const std::vector<float>& ratios_view2, float max_ratio) {
    std::vector<int> out;
    for (size_t i = 0; i < ratios_view1.size(); ++i)
        if (ratios_view1[i] < max_ratio && ratios_view2[i] < max_ratio) out.push_back(static_cast<int>(i));
    return out;
}

CombinedLoss combined_loss(ag::Graph& g, ag::NodeId recon, ag::NodeId contrast_or_minus1, float lambda) {
    CombinedLoss out;
    if (lambda < 0.0f) throw std::invalid_argument("combined_loss: lambda must be >= 0");
    if (contrast_or_minus1 < 0 || lambda == 0.0f) {
        out.total = recon;
        out.contrastive_active = false;
        return out;
    }
    out.total = g.add_scalar_nodes(recon, contrast_or_minus1, lambda);
    out.contrastive_active = true;
    return out;
}

} // namespace mage
