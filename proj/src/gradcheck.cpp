#include "mage/gradcheck.hpp"

#include <cmath>

namespace mage {

double grad_check(const std::vector<ag::Param*>& params,
                  const std::function<double(bool)>& eval, RngStream& rng, double epsilon,
                  int max_coords) {
    for (ag::Param* p : params) p->zero_grad();
    eval(true);
    std::vector<Tensor> analytic;
    analytic.reserve(params.size());
    for (ag::Param* p : params) analytic.push_back(p->grad);

    double worst = 0.0;
    for (size_t pi = 0; pi < params.size(); ++pi) {
        ag::Param& p = *params[pi];
        int64_t n = p.value.numel();
        int probes = static_cast<int>(std::min<int64_t>(n, max_coords));
        for (int t = 0; t < probes; ++t) {
            int64_t j = n <= max_coords ? t : rng.below(static_cast<uint32_t>(n));
            float orig = p.value.v[static_cast<size_t>(j)];
            p.value.v[static_cast<size_t>(j)] = orig + static_cast<float>(epsilon);
            double fp = eval(false);
            p.value.v[static_cast<size_t>(j)] = orig - static_cast<float>(epsilon);
            double fm = eval(false);
            p.value.v[static_cast<size_t>(j)] = orig;
            double numeric = (fp - fm) / (2.0 * epsilon);
            double a = analytic[pi].v[static_cast<size_t>(j)];
            double rel = std::fabs(a - numeric) / (std::fabs(a) + std::fabs(numeric) + 1e-8);
            worst = std::max(worst, rel);
        }
    }
    return worst;
}

} // namespace mage
