#include "mage/errors.hpp"
#include "mage/graph.hpp"

#include <cblas.h>

#include <algorithm>
#include <cmath>
#include <cstring>

namespace mage::ag {

void gemm(const float* a, const float* b, float* c, int m, int n, int k, bool trans_a, bool trans_b,
          float beta) {
    cblas_sgemm(CblasRowMajor, trans_a ? CblasTrans : CblasNoTrans, trans_b ? CblasTrans : CblasNoTrans,
                m, n, k, 1.0f, a, trans_a ? m : k, b, trans_b ? k : n, beta, c, n);
}

NodeId Graph::push(Tensor value, const std::vector<NodeId>& parents, std::function<void()> back) {
    Node node;
    node.value = std::move(value);
    node.back = std::move(back);
    for (NodeId p : parents) {
        if (nodes_[static_cast<size_t>(p)].needs_grad) {
            node.needs_grad = true;
            break;
        }
    }
    if (check_finite_ && !node.value.all_finite())
        throw NumericError("non-finite value produced by op at node " + std::to_string(nodes_.size()));
    nodes_.push_back(std::move(node));
    return static_cast<NodeId>(nodes_.size() - 1);
}

Tensor* Graph::gacc(NodeId id) {
    Node& n = nodes_[static_cast<size_t>(id)];
    if (!n.needs_grad) return nullptr;
    if (n.grad.v.empty() && n.value.numel() > 0) n.grad = Tensor(n.value.shape);
    return &n.grad;
}

NodeId Graph::input(Tensor t) { return push(std::move(t), {}, nullptr); }

NodeId Graph::use(Param& p) {
    auto it = param_ids_.find(&p);
    if (it != param_ids_.end()) return it->second;
    Node node;
    node.value = p.value;
    node.param = &p;
    node.needs_grad = training_;
    nodes_.push_back(std::move(node));
    NodeId id = static_cast<NodeId>(nodes_.size() - 1);
    param_ids_[&p] = id;
    return id;
}

void Graph::backward(NodeId loss) {
    Node& ln = nodes_[static_cast<size_t>(loss)];
    if (ln.value.numel() != 1) throw std::invalid_argument("backward requires a scalar loss");
    if (!ln.needs_grad) return;
    if (ln.grad.v.empty()) ln.grad = Tensor(ln.value.shape);
    ln.grad.v[0] = 1.0f;
    for (NodeId id = loss; id >= 0; --id) {
        Node& n = nodes_[static_cast<size_t>(id)];
        if (!n.needs_grad || n.grad.v.empty()) continue;
        if (n.back) n.back();
        if (n.param) {
            for (int64_t i = 0; i < n.grad.numel(); ++i) n.param->grad.v[static_cast<size_t>(i)] += n.grad.v[static_cast<size_t>(i)];
        }
    }
}

// ---------------------------------------------------------------- elementwise

NodeId Graph::add(NodeId a, NodeId b) {
    const Tensor& ta = val(a);
    const Tensor& tb = val(b);
    if (!ta.same_shape(tb)) throw std::invalid_argument("add: shape mismatch " + shape_str(ta.shape) + " vs " + shape_str(tb.shape));
    Tensor out = ta;
    for (int64_t i = 0; i < out.numel(); ++i) out.v[static_cast<size_t>(i)] += tb.v[static_cast<size_t>(i)];
    NodeId id = push(std::move(out), {a, b}, nullptr);
    nodes_.back().back = [this, id, a, b] {
        const Tensor& go = grad(id);
        for (NodeId p : {a, b})
            if (Tensor* gp = gacc(p))
                for (int64_t i = 0; i < go.numel(); ++i) gp->v[static_cast<size_t>(i)] += go.v[static_cast<size_t>(i)];
    };
    return id;
}

NodeId Graph::sub(NodeId a, NodeId b) {
    const Tensor& ta = val(a);
    const Tensor& tb = val(b);
    if (!ta.same_shape(tb)) throw std::invalid_argument("sub: shape mismatch");
    Tensor out = ta;
    for (int64_t i = 0; i < out.numel(); ++i) out.v[static_cast<size_t>(i)] -= tb.v[static_cast<size_t>(i)];
    NodeId id = push(std::move(out), {a, b}, nullptr);
    nodes_.back().back = [this, id, a, b] {
        const Tensor& go = grad(id);
        if (Tensor* ga = gacc(a))
            for (int64_t i = 0; i < go.numel(); ++i) ga->v[static_cast<size_t>(i)] += go.v[static_cast<size_t>(i)];
        if (Tensor* gb = gacc(b))
            for (int64_t i = 0; i < go.numel(); ++i) gb->v[static_cast<size_t>(i)] -= go.v[static_cast<size_t>(i)];
    };
    return id;
}

NodeId Graph::mul(NodeId a, NodeId b) {
    const Tensor& ta = val(a);
    const Tensor& tb = val(b);
    if (!ta.same_shape(tb)) throw std::invalid_argument("mul: shape mismatch");
    Tensor out = ta;
    for (int64_t i = 0; i < out.numel(); ++i) out.v[static_cast<size_t>(i)] *= tb.v[static_cast<size_t>(i)];
    NodeId id = push(std::move(out), {a, b}, nullptr);
    nodes_.back().back = [this, id, a, b] {
        const Tensor& go = grad(id);
        const Tensor& ta2 = val(a);
        const Tensor& tb2 = val(b);
        if (Tensor* ga = gacc(a))
            for (int64_t i = 0; i < go.numel(); ++i) ga->v[static_cast<size_t>(i)] += go.v[static_cast<size_t>(i)] * tb2.v[static_cast<size_t>(i)];
        if (Tensor* gb = gacc(b))
            for (int64_t i = 0; i < go.numel(); ++i) gb->v[static_cast<size_t>(i)] += go.v[static_cast<size_t>(i)] * ta2.v[static_cast<size_t>(i)];
    };
    return id;
}

NodeId Graph::scale(NodeId a, float s) {
    Tensor out = val(a);
    for (float& x : out.v) x *= s;
    NodeId id = push(std::move(out), {a}, nullptr);
    nodes_.back().back = [this, id, a, s] {
        const Tensor& go = grad(id);
        if (Tensor* ga = gacc(a))
            for (int64_t i = 0; i < go.numel(); ++i) ga->v[static_cast<size_t>(i)] += s * go.v[static_cast<size_t>(i)];
    };
    return id;
}

NodeId Graph::add_scalar_nodes(NodeId a, NodeId b, float wb) {
    Tensor out({1});
    out.v[0] = scalar(a) + wb * scalar(b);
    NodeId id = push(std::move(out), {a, b}, nullptr);
    nodes_.back().back = [this, id, a, b, wb] {
        float go = grad(id).v[0];
        if (Tensor* ga = gacc(a)) ga->v[0] += go;
        if (Tensor* gb = gacc(b)) gb->v[0] += wb * go;
    };
    return id;
}

namespace {
// tanh-approximation GELU.
constexpr float kGeluC = 0.7978845608028654f; // sqrt(2/pi)
inline float gelu_fwd(float x) {
    float t = std::tanh(kGeluC * (x + 0.044715f * x * x * x));
    return 0.5f * x * (1.0f + t);
}
inline float gelu_bwd(float x) {
    float u = kGeluC * (x + 0.044715f * x * x * x);
    float t = std::tanh(u);
    float du = kGeluC * (1.0f + 3.0f * 0.044715f * x * x);
    return 0.5f * (1.0f + t) + 0.5f * x * (1.0f - t * t) * du;
}
} // namespace

NodeId Graph::gelu(NodeId a) {
    Tensor out = val(a);
    for (float& x : out.v) x = gelu_fwd(x);
    NodeId id = push(std::move(out), {a}, nullptr);
    nodes_.back().back = [this, id, a] {
        const Tensor& go = grad(id);
        const Tensor& ta = val(a);
        if (Tensor* ga = gacc(a))
            for (int64_t i = 0; i < go.numel(); ++i)
                ga->v[static_cast<size_t>(i)] += go.v[static_cast<size_t>(i)] * gelu_bwd(ta.v[static_cast<size_t>(i)]);
    };
    return id;
}

NodeId Graph::tanh_op(NodeId a) {
    Tensor out = val(a);
    for (float& x : out.v) x = std::tanh(x);
    NodeId id = push(std::move(out), {a}, nullptr);
    nodes_.back().back = [this, id, a] {
        const Tensor& go = grad(id);
        const Tensor& to = val(id);
        if (Tensor* ga = gacc(a))
            for (int64_t i = 0; i < go.numel(); ++i) {
                float t = to.v[static_cast<size_t>(i)];
                ga->v[static_cast<size_t>(i)] += go.v[static_cast<size_t>(i)] * (1.0f - t * t);
            }
    };
    return id;
}

NodeId Graph::dropout(NodeId a, float p, RngStream& rng) {
    if (!training_ || p <= 0.0f) return a;
    const Tensor& ta = val(a);
    auto keep = std::make_shared<std::vector<uint8_t>>(ta.v.size());
    float inv = 1.0f / (1.0f - p);
    Tensor out = ta;
    for (size_t i = 0; i < out.v.size(); ++i) {
        bool k = rng.uniform() >= p;
        (*keep)[i] = k;
        out.v[i] = k ? out.v[i] * inv : 0.0f;
    }
    NodeId id = push(std::move(out), {a}, nullptr);
    nodes_.back().back = [this, id, a, keep, inv] {
        const Tensor& go = grad(id);
        if (Tensor* ga = gacc(a))
            for (size_t i = 0; i < go.v.size(); ++i)
                if ((*keep)[i]) ga->v[i] += go.v[i] * inv;
    };
    return id;
}

// ------------------------------------------------------------- linear algebra

NodeId Graph::matmul(NodeId a, NodeId b, bool trans_a, bool trans_b) {
    const Tensor& ta = val(a);
    const Tensor& tb = val(b);
    if (ta.shape.size() != 2 || tb.shape.size() != 2) throw std::invalid_argument("matmul: need 2-D operands");
    int m = trans_a ? ta.dim(1) : ta.dim(0);
    int k = trans_a ? ta.dim(0) : ta.dim(1);
    int kb = trans_b ? tb.dim(1) : tb.dim(0);
    int n = trans_b ? tb.dim(0) : tb.dim(1);
    if (k != kb) throw std::invalid_argument("matmul: inner dim mismatch " + shape_str(ta.shape) + " x " + shape_str(tb.shape));
    Tensor out({m, n});
    gemm(ta.v.data(), tb.v.data(), out.v.data(), m, n, k, trans_a, trans_b);
    NodeId id = push(std::move(out), {a, b}, nullptr);
    nodes_.back().back = [this, id, a, b, trans_a, trans_b, m, n, k] {
        const Tensor& go = grad(id);
        const Tensor& ta2 = val(a);
        const Tensor& tb2 = val(b);
        if (Tensor* ga = gacc(a)) {
            // dA = dC B^T (layouts adjusted for stored transposes)
            if (!trans_a)
                gemm(go.v.data(), tb2.v.data(), ga->v.data(), m, k, n, false, !trans_b, 1.0f);
            else
                gemm(tb2.v.data(), go.v.data(), ga->v.data(), k, m, n, trans_b, true, 1.0f);
        }
        if (Tensor* gb = gacc(b)) {
            if (!trans_b)
                gemm(ta2.v.data(), go.v.data(), gb->v.data(), k, n, m, !trans_a, false, 1.0f);
            else
                gemm(go.v.data(), ta2.v.data(), gb->v.data(), n, k, m, true, trans_a, 1.0f);
        }
    };
    return id;
}

NodeId Graph::add_bias(NodeId x, NodeId bias) {
    const Tensor& tx = val(x);
    const Tensor& tb = val(bias);
    int n = tx.rows();
    int m = tx.cols();
    if (tb.numel() != m) throw std::invalid_argument("add_bias: width mismatch");
    Tensor out = tx;
    for (int r = 0; r < n; ++r)
        for (int c = 0; c < m; ++c) out.v[static_cast<size_t>(r) * m + c] += tb.v[static_cast<size_t>(c)];
    NodeId id = push(std::move(out), {x, bias}, nullptr);
    nodes_.back().back = [this, id, x, bias, n, m] {
        const Tensor& go = grad(id);
        if (Tensor* gx = gacc(x))
            for (int64_t i = 0; i < go.numel(); ++i) gx->v[static_cast<size_t>(i)] += go.v[static_cast<size_t>(i)];
        if (Tensor* gb = gacc(bias))
            for (int r = 0; r < n; ++r)
                for (int c = 0; c < m; ++c) gb->v[static_cast<size_t>(c)] += go.v[static_cast<size_t>(r) * m + c];
    };
    return id;
}

NodeId Graph::transpose(NodeId a) {
    const Tensor& ta = val(a);
    int n = ta.rows(), m = ta.cols();
    Tensor out({m, n});
    for (int r = 0; r < n; ++r)
        for (int c = 0; c < m; ++c) out.v[static_cast<size_t>(c) * n + r] = ta.v[static_cast<size_t>(r) * m + c];
    NodeId id = push(std::move(out), {a}, nullptr);
    nodes_.back().back = [this, id, a, n, m] {
        const Tensor& go = grad(id);
        if (Tensor* ga = gacc(a))
            for (int r = 0; r < n; ++r)
                for (int c = 0; c < m; ++c) ga->v[static_cast<size_t>(r) * m + c] += go.v[static_cast<size_t>(c) * n + r];
    };
    return id;
}

// -------------------------------------------------------------- rearrangement

NodeId Graph::gather_rows(NodeId x, std::vector<int> idx) {
    const Tensor& tx = val(x);
    int m = tx.cols();
    int nr = tx.rows();
    Tensor out({static_cast<int>(idx.size()), m});
    for (size_t r = 0; r < idx.size(); ++r) {
        if (idx[r] < 0 || idx[r] >= nr) throw std::out_of_range("gather_rows: index out of range");
        std::memcpy(&out.v[r * static_cast<size_t>(m)], &tx.v[static_cast<size_t>(idx[r]) * m], sizeof(float) * static_cast<size_t>(m));
    }
    auto ids = std::make_shared<std::vector<int>>(std::move(idx));
    NodeId id = push(std::move(out), {x}, nullptr);
    nodes_.back().back = [this, id, x, ids, m] {
        const Tensor& go = grad(id);
        if (Tensor* gx = gacc(x))
            for (size_t r = 0; r < ids->size(); ++r) {
                float* dst = &gx->v[static_cast<size_t>((*ids)[r]) * m];
                const float* src = &go.v[r * static_cast<size_t>(m)];
                for (int c = 0; c < m; ++c) dst[c] += src[c];
            }
    };
    return id;
}

NodeId Graph::slice_cols(NodeId x, int c0, int c1) {
    const Tensor& tx = val(x);
    int n = tx.rows(), m = tx.cols();
    if (c0 < 0 || c1 > m || c0 >= c1) throw std::invalid_argument("slice_cols: bad range");
    int w = c1 - c0;
    Tensor out({n, w});
    for (int r = 0; r < n; ++r)
        std::memcpy(&out.v[static_cast<size_t>(r) * w], &tx.v[static_cast<size_t>(r) * m + c0], sizeof(float) * static_cast<size_t>(w));
    NodeId id = push(std::move(out), {x}, nullptr);
    nodes_.back().back = [this, id, x, c0, w, n, m] {
        const Tensor& go = grad(id);
        if (Tensor* gx = gacc(x))
            for (int r = 0; r < n; ++r) {
                float* dst = &gx->v[static_cast<size_t>(r) * m + c0];
                const float* src = &go.v[static_cast<size_t>(r) * w];
                for (int c = 0; c < w; ++c) dst[c] += src[c];
            }
    };
    return id;
}

NodeId Graph::concat_cols(const std::vector<NodeId>& xs) {
    int n = val(xs.at(0)).rows();
    int total = 0;
    for (NodeId x : xs) {
        if (val(x).rows() != n) throw std::invalid_argument("concat_cols: row mismatch");
        total += val(x).cols();
    }
    Tensor out({n, total});
    int off = 0;
    for (NodeId x : xs) {
        const Tensor& tx = val(x);
        int w = tx.cols();
        for (int r = 0; r < n; ++r)
            std::memcpy(&out.v[static_cast<size_t>(r) * total + off], &tx.v[static_cast<size_t>(r) * w], sizeof(float) * static_cast<size_t>(w));
        off += w;
    }
    NodeId id = push(std::move(out), xs, nullptr);
    auto parts = std::make_shared<std::vector<NodeId>>(xs);
    nodes_.back().back = [this, id, parts, n, total] {
        const Tensor& go = grad(id);
        int off2 = 0;
        for (NodeId x : *parts) {
            int w = val(x).cols();
            if (Tensor* gx = gacc(x))
                for (int r = 0; r < n; ++r) {
                    float* dst = &gx->v[static_cast<size_t>(r) * w];
                    const float* src = &go.v[static_cast<size_t>(r) * total + off2];
                    for (int c = 0; c < w; ++c) dst[c] += src[c];
                }
            off2 += w;
        }
    };
    return id;
}

NodeId Graph::concat_rows(const std::vector<NodeId>& xs) {
    int m = val(xs.at(0)).cols();
    int total = 0;
    for (NodeId x : xs) {
        if (val(x).cols() != m) throw std::invalid_argument("concat_rows: col mismatch");
        total += val(x).rows();
    }
    Tensor out({total, m});
    size_t off = 0;
    for (NodeId x : xs) {
        const Tensor& tx = val(x);
        std::memcpy(&out.v[off], tx.v.data(), sizeof(float) * tx.v.size());
        off += tx.v.size();
    }
    NodeId id = push(std::move(out), xs, nullptr);
    auto parts = std::make_shared<std::vector<NodeId>>(xs);
    nodes_.back().back = [this, id, parts] {
        const Tensor& go = grad(id);
        size_t off2 = 0;
        for (NodeId x : *parts) {
            size_t n = val(x).v.size();
            if (Tensor* gx = gacc(x))
                for (size_t i = 0; i < n; ++i) gx->v[i] += go.v[off2 + i];
            off2 += n;
        }
    };
    return id;
}

NodeId Graph::mean_rows(NodeId x) {
    const Tensor& tx = val(x);
    int n = tx.rows(), m = tx.cols();
    if (n == 0) throw std::invalid_argument("mean_rows: empty");
    Tensor out({1, m});
    for (int c = 0; c < m; ++c) {
        double s = 0.0;
        for (int r = 0; r < n; ++r) s += tx.v[static_cast<size_t>(r) * m + c];
        out.v[static_cast<size_t>(c)] = static_cast<float>(s / n);
    }
    NodeId id = push(std::move(out), {x}, nullptr);
    nodes_.back().back = [this, id, x, n, m] {
        const Tensor& go = grad(id);
        float inv = 1.0f / static_cast<float>(n);
        if (Tensor* gx = gacc(x))
            for (int r = 0; r < n; ++r)
                for (int c = 0; c < m; ++c) gx->v[static_cast<size_t>(r) * m + c] += go.v[static_cast<size_t>(c)] * inv;
    };
    return id;
}

// ---------------------------------------------------------------- activations

NodeId Graph::layer_norm(NodeId x, NodeId gain, NodeId bias, float eps) {
    const Tensor& tx = val(x);
    int n = tx.rows(), m = tx.cols();
    if (val(gain).numel() != m || val(bias).numel() != m) throw std::invalid_argument("layer_norm: affine width mismatch");
    Tensor out({n, m});
    auto xhat = std::make_shared<Tensor>(std::vector<int>{n, m});
    auto rstd = std::make_shared<std::vector<float>>(static_cast<size_t>(n));
    const Tensor& tg = val(gain);
    const Tensor& tb = val(bias);
    for (int r = 0; r < n; ++r) {
        const float* row = &tx.v[static_cast<size_t>(r) * m];
        double mean = 0.0;
        for (int c = 0; c < m; ++c) mean += row[c];
        mean /= m;
        double var = 0.0;
        for (int c = 0; c < m; ++c) {
            double d = row[c] - mean;
            var += d * d;
        }
        var /= m;
        float rs = 1.0f / std::sqrt(static_cast<float>(var) + eps);
        (*rstd)[static_cast<size_t>(r)] = rs;
        for (int c = 0; c < m; ++c) {
            float xh = (row[c] - static_cast<float>(mean)) * rs;
            xhat->v[static_cast<size_t>(r) * m + c] = xh;
            out.v[static_cast<size_t>(r) * m + c] = xh * tg.v[static_cast<size_t>(c)] + tb.v[static_cast<size_t>(c)];
        }
    }
    NodeId id = push(std::move(out), {x, gain, bias}, nullptr);
    nodes_.back().back = [this, id, x, gain, bias, xhat, rstd, n, m] {
        const Tensor& go = grad(id);
        const Tensor& tg = val(gain);
        Tensor* gx = gacc(x);
        Tensor* gg = gacc(gain);
        Tensor* gb = gacc(bias);
        for (int r = 0; r < n; ++r) {
            const float* gorow = &go.v[static_cast<size_t>(r) * m];
            const float* xh = &xhat->v[static_cast<size_t>(r) * m];
            if (gg || gb)
                for (int c = 0; c < m; ++c) {
                    if (gg) gg->v[static_cast<size_t>(c)] += gorow[c] * xh[c];
                    if (gb) gb->v[static_cast<size_t>(c)] += gorow[c];
                }
            if (gx) {
                double sum_g = 0.0, sum_gx = 0.0;
                for (int c = 0; c < m; ++c) {
                    float gh = gorow[c] * tg.v[static_cast<size_t>(c)];
                    sum_g += gh;
                    sum_gx += gh * xh[c];
                }
                float rs = (*rstd)[static_cast<size_t>(r)];
                for (int c = 0; c < m; ++c) {
                    float gh = gorow[c] * tg.v[static_cast<size_t>(c)];
                    gx->v[static_cast<size_t>(r) * m + c] +=
                        rs * (gh - static_cast<float>(sum_g) / m - xh[c] * static_cast<float>(sum_gx) / m);
                }
            }
        }
    };
    return id;
}

NodeId Graph::softmax_rows(NodeId x) {
    const Tensor& tx = val(x);
    int n = tx.rows(), m = tx.cols();
    Tensor out({n, m});
    for (int r = 0; r < n; ++r) {
        const float* row = &tx.v[static_cast<size_t>(r) * m];
        float* orow = &out.v[static_cast<size_t>(r) * m];
        float mx = row[0];
        for (int c = 1; c < m; ++c) mx = std::max(mx, row[c]);
        double z = 0.0;
        for (int c = 0; c < m; ++c) {
            orow[c] = std::exp(row[c] - mx);
            z += orow[c];
        }
        float inv = static_cast<float>(1.0 / z);
        for (int c = 0; c < m; ++c) orow[c] *= inv;
    }
    NodeId id = push(std::move(out), {x}, nullptr);
    nodes_.back().back = [this, id, x, n, m] {
        const Tensor& go = grad(id);
        const Tensor& p = val(id);
        if (Tensor* gx = gacc(x))
            for (int r = 0; r < n; ++r) {
                const float* prow = &p.v[static_cast<size_t>(r) * m];
                const float* gorow = &go.v[static_cast<size_t>(r) * m];
                double dot = 0.0;
                for (int c = 0; c < m; ++c) dot += prow[c] * gorow[c];
                for (int c = 0; c < m; ++c)
                    gx->v[static_cast<size_t>(r) * m + c] += prow[c] * (gorow[c] - static_cast<float>(dot));
            }
    };
    return id;
}

NodeId Graph::l2_normalize_rows(NodeId x, float eps) {
    const Tensor& tx = val(x);
    int n = tx.rows(), m = tx.cols();
    Tensor out({n, m});
    auto norms = std::make_shared<std::vector<float>>(static_cast<size_t>(n));
    for (int r = 0; r < n; ++r) {
        const float* row = &tx.v[static_cast<size_t>(r) * m];
        double s = 0.0;
        for (int c = 0; c < m; ++c) s += static_cast<double>(row[c]) * row[c];
        float nrm = static_cast<float>(std::sqrt(s)) + eps;
        (*norms)[static_cast<size_t>(r)] = nrm;
        for (int c = 0; c < m; ++c) out.v[static_cast<size_t>(r) * m + c] = row[c] / nrm;
    }
    NodeId id = push(std::move(out), {x}, nullptr);
    nodes_.back().back = [this, id, x, norms, n, m] {
        const Tensor& go = grad(id);
        const Tensor& z = val(id);
        if (Tensor* gx = gacc(x))
            for (int r = 0; r < n; ++r) {
                const float* zrow = &z.v[static_cast<size_t>(r) * m];
                const float* gorow = &go.v[static_cast<size_t>(r) * m];
                double dot = 0.0;
                for (int c = 0; c < m; ++c) dot += zrow[c] * gorow[c];
                float inv = 1.0f / (*norms)[static_cast<size_t>(r)];
                for (int c = 0; c < m; ++c)
                    gx->v[static_cast<size_t>(r) * m + c] += inv * (gorow[c] - zrow[c] * static_cast<float>(dot));
            }
    };
    return id;
}

NodeId Graph::cross_entropy_rows(NodeId logits, const std::vector<int>& targets, float smoothing,
                                 const std::vector<float>& row_weights) {
    const Tensor& tl = val(logits);
    int n = tl.rows(), K = tl.cols();
    if (K < 2) throw std::invalid_argument("cross_entropy: need K >= 2");
    if (static_cast<int>(targets.size()) != n) throw std::invalid_argument("cross_entropy: target count mismatch");
    if (!row_weights.empty() && static_cast<int>(row_weights.size()) != n)
        throw std::invalid_argument("cross_entropy: weight count mismatch");
    if (smoothing < 0.0f || smoothing >= 1.0f) throw std::invalid_argument("cross_entropy: smoothing out of range");

    // probs cached for backward; log-sum-exp and loss accumulated in double.
    auto probs = std::make_shared<Tensor>(std::vector<int>{n, K});
    auto tgt = std::make_shared<std::vector<int>>(targets);
    auto wts = std::make_shared<std::vector<float>>(row_weights);
    double total = 0.0;
    double wsum = 0.0;
    float off = smoothing / static_cast<float>(K);
    float on = 1.0f - smoothing + off;
    for (int r = 0; r < n; ++r) {
        float w = row_weights.empty() ? 1.0f : row_weights[static_cast<size_t>(r)];
        const float* row = &tl.v[static_cast<size_t>(r) * K];
        int t = targets[static_cast<size_t>(r)];
        if (t < 0 || t >= K) throw std::out_of_range("cross_entropy: target index out of range");
        float mx = row[0];
        for (int c = 1; c < K; ++c) mx = std::max(mx, row[c]);
        if (!std::isfinite(mx)) throw NumericError("cross_entropy: non-finite logits");
        double z = 0.0;
        for (int c = 0; c < K; ++c) z += std::exp(static_cast<double>(row[c]) - mx);
        double logz = std::log(z) + mx;
        float* prow = &probs->v[static_cast<size_t>(r) * K];
        for (int c = 0; c < K; ++c) prow[c] = static_cast<float>(std::exp(row[c] - logz));
        if (w <= 0.0f) continue;
        // smoothed CE = -sum_c y_c (logit_c - logz)
        double ce = 0.0;
        if (smoothing > 0.0f) {
            for (int c = 0; c < K; ++c) ce -= static_cast<double>(off) * (row[c] - logz);
            ce -= static_cast<double>(on - off) * (row[t] - logz);
        } else {
            ce = logz - row[t];
        }
        total += w * ce;
        wsum += w;
    }
    if (wsum <= 0.0) throw std::invalid_argument("cross_entropy: no rows with positive weight");
    Tensor out({1});
    out.v[0] = static_cast<float>(total / wsum);
    NodeId id = push(std::move(out), {logits}, nullptr);
    float inv_wsum = static_cast<float>(1.0 / wsum);
    nodes_.back().back = [this, id, logits, probs, tgt, wts, n, K, on, off, inv_wsum] {
        float go = grad(id).v[0];
        if (Tensor* gl = gacc(logits))
            for (int r = 0; r < n; ++r) {
                float w = wts->empty() ? 1.0f : (*wts)[static_cast<size_t>(r)];
                if (w <= 0.0f) continue;
                const float* prow = &probs->v[static_cast<size_t>(r) * K];
                float* grow = &gl->v[static_cast<size_t>(r) * K];
                int t = (*tgt)[static_cast<size_t>(r)];
                float s = go * w * inv_wsum;
                for (int c = 0; c < K; ++c) grow[c] += s * (prow[c] - (c == t ? on : off));
            }
    };
    return id;
}

NodeId Graph::mse(NodeId a, NodeId b) {
    const Tensor& ta = val(a);
    const Tensor& tb = val(b);
    if (!ta.same_shape(tb)) throw std::invalid_argument("mse: shape mismatch");
    int64_t n = ta.numel();
    double s = 0.0;
    for (int64_t i = 0; i < n; ++i) {
        double d = static_cast<double>(ta.v[static_cast<size_t>(i)]) - tb.v[static_cast<size_t>(i)];
        s += d * d;
    }
    Tensor out({1});
    out.v[0] = static_cast<float>(s / static_cast<double>(n));
    NodeId id = push(std::move(out), {a, b}, nullptr);
    nodes_.back().back = [this, id, a, b, n] {
        float go = grad(id).v[0];
        const Tensor& ta2 = val(a);
        const Tensor& tb2 = val(b);
        float s2 = 2.0f * go / static_cast<float>(n);
        if (Tensor* ga = gacc(a))
            for (int64_t i = 0; i < n; ++i)
                ga->v[static_cast<size_t>(i)] += s2 * (ta2.v[static_cast<size_t>(i)] - tb2.v[static_cast<size_t>(i)]);
        if (Tensor* gb = gacc(b))
            for (int64_t i = 0; i < n; ++i)
                gb->v[static_cast<size_t>(i)] -= s2 * (ta2.v[static_cast<size_t>(i)] - tb2.v[static_cast<size_t>(i)]);
    };
    return id;
}

NodeId Graph::sum_squares(NodeId a) {
    const Tensor& ta = val(a);
    double s = 0.0;
    for (float x : ta.v) s += static_cast<double>(x) * x;
    Tensor out({1});
    out.v[0] = static_cast<float>(s);
    NodeId id = push(std::move(out), {a}, nullptr);
    nodes_.back().back = [this, id, a] {
        float go = grad(id).v[0];
        const Tensor& ta2 = val(a);
        if (Tensor* ga = gacc(a))
            for (size_t i = 0; i < ta2.v.size(); ++i) ga->v[i] += 2.0f * go * ta2.v[i];
    };
    return id;
}

NodeId Graph::stop_gradient(NodeId a) { return push(val(a), {}, nullptr); }

NodeId Graph::straight_through(NodeId f, NodeId q) {
    if (!val(f).same_shape(val(q))) throw std::invalid_argument("straight_through: shape mismatch");
    NodeId id = push(val(q), {f}, nullptr);
    nodes_.back().back = [this, id, f] {
        const Tensor& go = grad(id);
        if (Tensor* gf = gacc(f))
            for (size_t i = 0; i < go.v.size(); ++i) gf->v[i] += go.v[i];
    };
    return id;
}

NodeId Graph::im2col(NodeId x, int H, int W, int k, int stride, int pad) {
    const Tensor& tx = val(x);
    if (tx.rows() != H * W) throw std::invalid_argument("im2col: H*W mismatch");
    int C = tx.cols();
    int Ho = (H + 2 * pad - k) / stride + 1;
    int Wo = (W + 2 * pad - k) / stride + 1;
    Tensor out({Ho * Wo, k * k * C});
    // mapping: output (r, patch_cell*C + c) <- input row (iy*W + ix), col c
    for (int oy = 0; oy < Ho; ++oy)
        for (int ox = 0; ox < Wo; ++ox) {
            float* orow = &out.v[static_cast<size_t>(oy * Wo + ox) * (k * k * C)];
            for (int ky = 0; ky < k; ++ky)
                for (int kx = 0; kx < k; ++kx) {
                    int iy = oy * stride - pad + ky;
                    int ix = ox * stride - pad + kx;
                    float* dst = orow + static_cast<size_t>(ky * k + kx) * C;
                    if (iy >= 0 && iy < H && ix >= 0 && ix < W)
                        std::memcpy(dst, &tx.v[static_cast<size_t>(iy * W + ix) * C], sizeof(float) * static_cast<size_t>(C));
                    else
                        std::memset(dst, 0, sizeof(float) * static_cast<size_t>(C));
                }
        }
    NodeId id = push(std::move(out), {x}, nullptr);
    nodes_.back().back = [this, id, x, H, W, k, stride, pad, C] {
        const Tensor& go = grad(id);
        int Ho = (H + 2 * pad - k) / stride + 1;
        int Wo = (W + 2 * pad - k) / stride + 1;
        if (Tensor* gx = gacc(x))
            for (int oy = 0; oy < Ho; ++oy)
                for (int ox = 0; ox < Wo; ++ox) {
                    const float* gorow = &go.v[static_cast<size_t>(oy * Wo + ox) * (k * k * C)];
                    for (int ky = 0; ky < k; ++ky)
                        for (int kx = 0; kx < k; ++kx) {
                            int iy = oy * stride - pad + ky;
                            int ix = ox * stride - pad + kx;
                            if (iy < 0 || iy >= H || ix < 0 || ix >= W) continue;
                            float* dst = &gx->v[static_cast<size_t>(iy * W + ix) * C];
                            const float* src = gorow + static_cast<size_t>(ky * k + kx) * C;
                            for (int c = 0; c < C; ++c) dst[c] += src[c];
                        }
                }
    };
    return id;
}

} // namespace mage::ag
