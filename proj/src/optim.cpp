#include "mage/errors.hpp"
#include "mage/optim.hpp"

#include <cmath>
#include <stdexcept>

namespace mage {

AdamW::AdamW(std::vector<ag::Param*> params, AdamWConfig cfg) : params_(std::move(params)), cfg_(cfg) {
    m_.reserve(params_.size());
    v_.reserve(params_.size());
    for (ag::Param* p : params_) {
        m_.emplace_back(p->value.shape);
        v_.emplace_back(p->value.shape);
    }
}

double AdamW::grad_norm() const {
    double s = 0.0;
    for (ag::Param* p : params_)
        for (float g : p->grad.v) s += static_cast<double>(g) * g;
    return std::sqrt(s);
}

void AdamW::step(float lr) {
    for (ag::Param* p : params_)
        if (!p->grad.all_finite()) throw NumericError("adamw: non-finite gradient in " + p->name);

    double norm = grad_norm();
    float scale = 1.0f;
    if (cfg_.clip_norm > 0.0f && norm > cfg_.clip_norm) scale = static_cast<float>(cfg_.clip_norm / norm);

    ++step_count_;
    float bc1 = 1.0f - std::pow(cfg_.beta1, static_cast<float>(step_count_));
    float bc2 = 1.0f - std::pow(cfg_.beta2, static_cast<float>(step_count_));
    for (size_t i = 0; i < params_.size(); ++i) {
        ag::Param& p = *params_[i];
        Tensor& m = m_[i];
        Tensor& v = v_[i];
        float plr = lr * (lr_scales_.empty() ? 1.0f : lr_scales_[i]);
        for (size_t j = 0; j < p.value.v.size(); ++j) {
            float g = p.grad.v[j] * scale;
            m.v[j] = cfg_.beta1 * m.v[j] + (1.0f - cfg_.beta1) * g;
            v.v[j] = cfg_.beta2 * v.v[j] + (1.0f - cfg_.beta2) * g * g;
            float mhat = m.v[j] / bc1;
            float vhat = v.v[j] / bc2;
            p.value.v[j] -= plr * (mhat / (std::sqrt(vhat) + cfg_.eps) + cfg_.weight_decay * p.value.v[j]);
        }
    }
}

void AdamW::set_lr_scales(std::vector<float> scales) {
    if (scales.size() != params_.size()) throw std::invalid_argument("adamw: lr scale count mismatch");
    lr_scales_ = std::move(scales);
}

void AdamW::zero_grad() {
    for (ag::Param* p : params_) p->zero_grad();
}

float cosine_lr(float base_lr, int64_t step, int64_t total_steps, int64_t warmup_steps, float min_lr) {
    if (warmup_steps > 0 && step < warmup_steps)
        return base_lr * static_cast<float>(step + 1) / static_cast<float>(warmup_steps);
    int64_t decay_steps = std::max<int64_t>(1, total_steps - warmup_steps);
    double t = static_cast<double>(std::min(step - warmup_steps, decay_steps)) / static_cast<double>(decay_steps);
    return min_lr + (base_lr - min_lr) * 0.5f * static_cast<float>(1.0 + std::cos(3.141592653589793 * t));
}

MomentumSgd::MomentumSgd(std::vector<ag::Param*> params, float momentum, float weight_decay)
    : params_(std::move(params)), momentum_(momentum), weight_decay_(weight_decay) {
    for (ag::Param* p : params_) vel_.emplace_back(p->value.shape);
}

void MomentumSgd::step(float lr) {
    for (size_t i = 0; i < params_.size(); ++i) {
        ag::Param& p = *params_[i];
        for (size_t j = 0; j < p.value.v.size(); ++j) {
            float g = p.grad.v[j] + weight_decay_ * p.value.v[j];
            vel_[i].v[j] = momentum_ * vel_[i].v[j] + g;
            p.value.v[j] -= lr * vel_[i].v[j];
        }
    }
}

void MomentumSgd::zero_grad() {
    for (ag::Param* p : params_) p->zero_grad();
}

} // namespace mage
