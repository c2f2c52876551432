#pragma once

#include <cmath>
#include <cstdint>
#include <numeric>
#include <stdexcept>
#include <string>
#include <vector>

namespace mage {

// Row-major f32 tensor. Shapes are small, data can be large.
struct Tensor {
    std::vector<int> shape;
    std::vector<float> v;

    Tensor() = default;
    explicit Tensor(std::vector<int> s) : shape(std::move(s)), v(numel_of(shape), 0.0f) {}
    Tensor(std::vector<int> s, float fill) : shape(std::move(s)), v(numel_of(shape), fill) {}

    static int64_t numel_of(const std::vector<int>& s) {
        int64_t n = 1;
        for (int d : s) {
            if (d < 0) throw std::invalid_argument("negative tensor dim");
            n *= d;
        }
        return n;
    }

    int64_t numel() const { return static_cast<int64_t>(v.size()); }
    int dim(int i) const { return shape.at(static_cast<size_t>(i)); }
    int rows() const { return shape.empty() ? 1 : shape[0]; }
    int cols() const {
        int64_t n = numel();
        int r = rows();
        return r == 0 ? 0 : static_cast<int>(n / r);
    }

    float& at(int64_t i) { return v[static_cast<size_t>(i)]; }
    float at(int64_t i) const { return v[static_cast<size_t>(i)]; }

    bool same_shape(const Tensor& o) const { return shape == o.shape; }

    bool all_finite() const {
        for (float x : v)
            if (!std::isfinite(x)) return false;
        return true;
    }

    void zero() { std::fill(v.begin(), v.end(), 0.0f); }
};

inline std::string shape_str(const std::vector<int>& s) {
    std::string out = "[";
    for (size_t i = 0; i < s.size(); ++i) {
        if (i) out += ",";
        out += std::to_string(s[i]);
    }
    return out + "]";
}

} // namespace mage
