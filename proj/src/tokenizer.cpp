#include "mage/errors.hpp"
#include "mage/tokenizer.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

namespace mage {

namespace {
// Channel width per resolution level.
int level_ch(int base, int level) { return level == 0 ? base : base * 2; }

std::vector<int> upsample2_indices(int side) {
    std::vector<int> idx(static_cast<size_t>(4 * side * side));
    int out_side = side * 2;
    for (int y = 0; y < out_side; ++y)
        for (int x = 0; x < out_side; ++x)
            idx[static_cast<size_t>(y) * out_side + x] = (y / 2) * side + (x / 2);
    return idx;
}
} // namespace

// Parameters are created on first use during the constructor's probe forward
// pass (init_rng_ set); afterwards lookups must hit.
struct VqBuild {
    ParamStore* store;
    RngStream* init_rng;

    ag::Param& get(const std::string& name, std::vector<int> shape, float std_or_const, bool constant) {
        if (ag::Param* p = store->find(name)) return *p;
        if (!init_rng) throw std::logic_error("missing param after init: " + name);
        Tensor t = constant ? const_init(shape, std_or_const) : normal_init(shape, std_or_const, *init_rng);
        return store->add(name, std::move(t));
    }
};

static VqBuild* g_build = nullptr; // only non-null inside the ctor probe

VqModel::VqModel(const VqConfig& cfg, RngStream& init_rng) : cfg_(cfg) {
    if (cfg.image_size % (1 << cfg.num_blocks) != 0)
        throw std::invalid_argument("vq: image size not divisible by 2^num_blocks");
    if (cfg.codebook_size < 2) throw std::invalid_argument("vq: codebook needs K >= 2");
    codebook_ = &params_.add("vq.codebook",
                             normal_init({cfg.codebook_size, cfg.codebook_dim}, 0.05f, init_rng));
    usage_.assign(static_cast<size_t>(cfg.codebook_size), 0);

    // Probe forward to instantiate every parameter in a fixed order.
    VqBuild build{&params_, &init_rng};
    g_build = &build;
    ag::Graph g(false);
    ag::NodeId img = g.input(Tensor({cfg.image_size * cfg.image_size, 3}));
    ag::NodeId f = encode_features(g, img);
    decode_features(g, f);
    g_build = nullptr;
}

static ag::Param& P(ParamStore& store, const std::string& name, std::vector<int> shape, float init_std,
                    bool constant = false) {
    if (ag::Param* p = store.find(name)) return *p;
    if (!g_build) throw std::logic_error("missing param after init: " + name);
    return g_build->get(name, std::move(shape), init_std, constant);
}

namespace {
ag::NodeId conv_impl(ag::Graph& g, ParamStore& store, ag::NodeId x, int side, int k, int stride,
                     int c_in, int c_out, const std::string& name) {
    float std = 0.02f;
    ag::Param& w = P(store, name + ".w", {k * k * c_in, c_out}, std);
    ag::Param& b = P(store, name + ".b", {c_out}, 0.0f, true);
    ag::NodeId col = k == 1 && stride == 1 ? x : g.im2col(x, side, side, k, stride, k / 2);
    return g.add_bias(g.matmul(col, g.use(w)), g.use(b));
}

ag::NodeId norm_act(ag::Graph& g, ParamStore& store, ag::NodeId x, int ch, const std::string& name) {
    ag::Param& gain = P(store, name + ".g", {ch}, 1.0f, true);
    ag::Param& bias = P(store, name + ".b", {ch}, 0.0f, true);
    return g.gelu(g.layer_norm(x, g.use(gain), g.use(bias)));
}
} // namespace

ag::NodeId VqModel::res_block(ag::Graph& g, ag::NodeId x, int side, int ch,
                              const std::string& prefix) const {
    ParamStore& store = const_cast<ParamStore&>(params_);
    ag::NodeId h = norm_act(g, store, x, ch, prefix + ".ln1");
    h = conv_impl(g, store, h, side, 3, 1, ch, ch, prefix + ".conv1");
    h = norm_act(g, store, h, ch, prefix + ".ln2");
    h = conv_impl(g, store, h, side, 3, 1, ch, ch, prefix + ".conv2");
    return g.add(x, h);
}

ag::NodeId VqModel::encode_features(ag::Graph& g, ag::NodeId image) const {
    if (g.val(image).cols() != 3) throw std::invalid_argument("encode: expected 3-channel image");
    if (g.val(image).rows() != cfg_.image_size * cfg_.image_size)
        throw std::invalid_argument("encode: wrong image size");
    ParamStore& store = const_cast<ParamStore&>(params_);
    int side = cfg_.image_size;
    int ch = level_ch(cfg_.base_channels, 0);
    ag::NodeId x = conv_impl(g, store, image, side, 3, 1, 3, ch, "vq.enc.stem");
    for (int b = 0; b < cfg_.num_blocks; ++b) {
        x = res_block(g, x, side, ch, "vq.enc.res" + std::to_string(b));
        int ch_next = level_ch(cfg_.base_channels, b + 1);
        x = conv_impl(g, store, x, side, 3, 2, ch, ch_next, "vq.enc.down" + std::to_string(b));
        side /= 2;
        ch = ch_next;
    }
    x = res_block(g, x, side, ch, "vq.enc.mid");
    x = norm_act(g, store, x, ch, "vq.enc.out_ln");
    return conv_impl(g, store, x, side, 1, 1, ch, cfg_.codebook_dim, "vq.enc.proj");
}

ag::NodeId VqModel::decode_features(ag::Graph& g, ag::NodeId features) const {
    ParamStore& store = const_cast<ParamStore&>(params_);
    int side = cfg_.grid_size();
    if (g.val(features).rows() != side * side || g.val(features).cols() != cfg_.codebook_dim)
        throw std::invalid_argument("decode: feature shape mismatch");
    int ch = level_ch(cfg_.base_channels, cfg_.num_blocks);
    ag::NodeId x = conv_impl(g, store, features, side, 1, 1, cfg_.codebook_dim, ch, "vq.dec.proj");
    x = res_block(g, x, side, ch, "vq.dec.mid");
    for (int b = cfg_.num_blocks - 1; b >= 0; --b) {
        x = g.gather_rows(x, upsample2_indices(side));
        side *= 2;
        int ch_next = level_ch(cfg_.base_channels, b);
        x = conv_impl(g, store, x, side, 3, 1, ch, ch_next, "vq.dec.up" + std::to_string(b));
        x = res_block(g, x, side, ch_next, "vq.dec.res" + std::to_string(b));
        ch = ch_next;
    }
    x = norm_act(g, store, x, ch, "vq.dec.out_ln");
    x = conv_impl(g, store, x, side, 3, 1, ch, 3, "vq.dec.out");
    return g.tanh_op(x);
}

std::vector<int> nearest_codes(const Tensor& features, const Tensor& codebook) {
    int n = features.rows();
    int d = features.cols();
    int K = codebook.rows();
    if (codebook.cols() != d) throw std::invalid_argument("quantize: dim mismatch");
    std::vector<int> codes(static_cast<size_t>(n));
    for (int i = 0; i < n; ++i) {
        const float* f = &features.v[static_cast<size_t>(i) * d];
        double best = 0.0;
        int best_k = 0;
        for (int k = 0; k < K; ++k) {
            const float* e = &codebook.v[static_cast<size_t>(k) * d];
            double dist = 0.0;
            for (int c = 0; c < d; ++c) {
                double diff = static_cast<double>(f[c]) - e[c];
                dist += diff * diff;
            }
            if (k == 0 || dist < best) { // ties keep the lowest index
                best = dist;
                best_k = k;
            }
        }
        codes[static_cast<size_t>(i)] = best_k;
    }
    return codes;
}

QuantizeResult quantize(const Tensor& features, int h, int w, const Tensor& codebook) {
    if (features.rows() != h * w) throw std::invalid_argument("quantize: grid size mismatch");
    int d = features.cols();
    QuantizeResult out;
    out.grid.height = h;
    out.grid.width = w;
    out.grid.indices = nearest_codes(features, codebook);
    out.quantized = Tensor({h * w, d});
    double dist_sum = 0.0;
    for (int i = 0; i < h * w; ++i) {
        const float* e = &codebook.v[static_cast<size_t>(out.grid.indices[static_cast<size_t>(i)]) * d];
        const float* f = &features.v[static_cast<size_t>(i) * d];
        for (int c = 0; c < d; ++c) {
            out.quantized.v[static_cast<size_t>(i) * d + c] = e[c];
            double diff = static_cast<double>(f[c]) - e[c];
            dist_sum += diff * diff;
        }
    }
    // mean over pixels of the squared distance; vq and commitment terms share
    // the value and differ only in which side receives the gradient.
    out.vq_loss = static_cast<float>(dist_sum / (h * w));
    out.commit_loss = out.vq_loss;
    return out;
}

VqGraphOut quantize_on_graph(ag::Graph& g, ag::NodeId features, ag::Param& codebook) {
    const Tensor& f = g.val(features);
    VqGraphOut out;
    out.codes = nearest_codes(f, codebook.value);
    ag::NodeId cb = g.use(codebook);
    ag::NodeId entries = g.gather_rows(cb, out.codes);
    int d = f.cols();
    ag::NodeId f_sg = g.stop_gradient(features);
    ag::NodeId e_sg = g.stop_gradient(entries);
    out.vq_loss = g.scale(g.mse(f_sg, entries), static_cast<float>(d));
    out.commit_loss = g.scale(g.mse(features, e_sg), static_cast<float>(d));
    out.quantized = g.straight_through(features, entries);
    return out;
}

TokenGrid encode_image(const Tensor& image, VqModel& model) {
    ag::Graph g(false);
    ag::NodeId img = g.input(image);
    ag::NodeId f = model.encode_features(g, img);
    int side = model.config().grid_size();
    QuantizeResult q = quantize(g.val(f), side, side, model.codebook().value);
    for (int idx : q.grid.indices) ++model.usage_counts()[static_cast<size_t>(idx)];
    return q.grid;
}

Tensor decode_tokens(const TokenGrid& grid, VqModel& model) {
    int K = model.config().codebook_size;
    for (int idx : grid.indices)
        if (idx < 0 || idx >= K) throw std::out_of_range("decode_tokens: index >= K");
    int d = model.config().codebook_dim;
    Tensor f({grid.size(), d});
    for (int i = 0; i < grid.size(); ++i)
        for (int c = 0; c < d; ++c)
            f.v[static_cast<size_t>(i) * d + c] =
                model.codebook().value.v[static_cast<size_t>(grid.indices[static_cast<size_t>(i)]) * d + c];
    ag::Graph g(false);
    ag::NodeId out = model.decode_features(g, g.input(std::move(f)));
    Tensor img = g.val(out);
    for (float& x : img.v) x = std::clamp(x, -1.0f, 1.0f);
    return img;
}

TokenizerStepStats tokenizer_train_step(const std::vector<Tensor>& batch, VqModel& model, AdamW& opt,
                                        float lr) {
    if (batch.empty()) throw std::invalid_argument("tokenizer_train_step: empty batch");
    opt.zero_grad();
    TokenizerStepStats stats;
    float inv_b = 1.0f / static_cast<float>(batch.size());
    for (const Tensor& image : batch) {
        ag::Graph g(true);
        ag::NodeId img = g.input(image);
        ag::NodeId f = model.encode_features(g, img);
        VqGraphOut q = quantize_on_graph(g, f, model.codebook());
        ag::NodeId recon_img = model.decode_features(g, q.quantized);
        ag::NodeId recon = g.mse(recon_img, img);
        ag::NodeId total = g.add_scalar_nodes(g.add_scalar_nodes(recon, q.vq_loss, 1.0f), q.commit_loss,
                                              model.config().commitment_beta);
        float loss = g.scalar(total);
        if (!std::isfinite(loss)) throw NumericError("tokenizer_train_step: non-finite loss");
        stats.total += loss * inv_b;
        stats.recon += g.scalar(recon) * inv_b;
        stats.vq += g.scalar(q.vq_loss) * inv_b;
        stats.commit += g.scalar(q.commit_loss) * inv_b;
        g.backward(g.scale(total, inv_b));
        for (int idx : q.codes) ++model.usage_counts()[static_cast<size_t>(idx)];
    }
    opt.step(lr);
    return stats;
}

int VqModel::reinit_dead_entries(const Tensor& recent_features, RngStream& rng) {
    int K = cfg_.codebook_size;
    int d = cfg_.codebook_dim;
    int n = recent_features.rows();
    if (n == 0) throw std::invalid_argument("reinit_dead_entries: no features");
    int reset = 0;
    for (int k = 0; k < K; ++k) {
        if (usage_[static_cast<size_t>(k)] > 0) continue;
        int src = static_cast<int>(rng.below(static_cast<uint32_t>(n)));
        for (int c = 0; c < d; ++c)
            codebook_->value.v[static_cast<size_t>(k) * d + c] =
                recent_features.v[static_cast<size_t>(src) * d + c];
        ++reset;
    }
    std::fill(usage_.begin(), usage_.end(), 0);
    return reset;
}

} // namespace mage
