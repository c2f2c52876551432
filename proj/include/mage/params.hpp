#pragma once

#include <memory>
#include <stdexcept>
#include <string>
#include <vector>

#include "mage/graph.hpp"
#include "mage/rng.hpp"

namespace mage {

// Ordered, named parameter registry. Order is creation order and defines the
// checkpoint/optimizer layout.
class ParamStore {
  public:
    ag::Param& add(const std::string& name, Tensor init) {
        for (auto& p : params_)
            if (p->name == name) throw std::invalid_argument("duplicate param: " + name);
        params_.push_back(std::make_unique<ag::Param>(name, std::move(init)));
        return *params_.back();
    }

    ag::Param* find(const std::string& name) {
        for (auto& p : params_)
            if (p->name == name) return p.get();
        return nullptr;
    }

    std::vector<ag::Param*> all() const {
        std::vector<ag::Param*> out;
        out.reserve(params_.size());
        for (auto& p : params_) out.push_back(p.get());
        return out;
    }

    void zero_grad() {
        for (auto& p : params_) p->zero_grad();
    }

    int64_t total_size() const {
        int64_t n = 0;
        for (auto& p : params_) n += p->value.numel();
        return n;
    }

  private:
    std::vector<std::unique_ptr<ag::Param>> params_;
};

inline Tensor normal_init(std::vector<int> shape, float std, RngStream& rng) {
    Tensor t(std::move(shape));
    for (float& x : t.v) x = std * rng.normal();
    return t;
}

inline Tensor const_init(std::vector<int> shape, float c) { return Tensor(std::move(shape), c); }

} // namespace mage
