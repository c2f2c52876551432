#include "mage/evalkit.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

#include "mage/losses.hpp"
#include "mage/optim.hpp"

namespace mage {

namespace {
std::vector<float> g_last_curve;

int argmax_row(const Tensor& t, int row) {
    int m = t.cols();
    const float* p = &t.v[static_cast<size_t>(row) * m];
    int best = 0;
    for (int c = 1; c < m; ++c)
        if (p[c] > p[best]) best = c;
    return best;
}
} // namespace

const std::vector<float>& last_probe_curve() { return g_last_curve; }

FeatureSet pooled_features(const std::vector<LabeledImage>& images, VqModel& tokenizer,
                           MageModel& model, int block, bool bypass_quantizer) {
    if (images.empty()) throw std::invalid_argument("pooled_features: no images");
    int W = model.config().width;
    int N = model.config().seq_len;
    int side = tokenizer.config().grid_size();
    FeatureSet out;
    out.features = Tensor({static_cast<int>(images.size()), W});
    out.labels.reserve(images.size());
    RngStream dummy;

    constexpr int kChunk = 16;
    for (size_t start = 0; start < images.size(); start += kChunk) {
        size_t end = std::min(images.size(), start + kChunk);
        std::vector<EncoderInputSpec> specs;
        std::vector<Tensor> feats;
        ForwardOptions opts;
        for (size_t i = start; i < end; ++i) {
            ag::Graph eg(false);
            ag::NodeId f = tokenizer.encode_features(eg, eg.input(images[i].image));
            QuantizeResult q = quantize(eg.val(f), side, side, tokenizer.codebook().value);
            std::vector<int> tokens = q.grid.indices;
            specs.push_back(apply_mask(tokens, MaskPlan::zero_mask(N)));
            if (bypass_quantizer) feats.push_back(eg.val(f));
        }
        if (bypass_quantizer) {
            opts.bypass_quantizer = true;
            opts.features = &feats;
        }
        ag::Graph g(false);
        EncoderBatchOut enc = model.embed_and_encode(g, specs, dummy, opts);
        ag::NodeId pooled = model.pooled_encoder_feature(g, enc, block);
        const Tensor& p = g.val(pooled);
        for (size_t i = start; i < end; ++i) {
            std::copy_n(&p.v[(i - start) * static_cast<size_t>(W)], W,
                        &out.features.v[i * static_cast<size_t>(W)]);
            out.labels.push_back(images[i].label);
        }
    }
    return out;
}

float linear_probe(const FeatureSet& train, const FeatureSet& test, const ProbeConfig& cfg) {
    if (train.dim() != test.dim()) throw std::invalid_argument("linear_probe: feature dim mismatch");
    int num_classes = 0;
    for (int lb : train.labels) num_classes = std::max(num_classes, lb + 1);
    for (int lb : test.labels) num_classes = std::max(num_classes, lb + 1);
    if (num_classes < 2) throw std::invalid_argument("linear_probe: need >= 2 classes");
    std::vector<int> seen(static_cast<size_t>(num_classes), 0);
    for (int lb : train.labels) ++seen[static_cast<size_t>(lb)];
    for (int c = 0; c < num_classes; ++c)
        if (!seen[static_cast<size_t>(c)])
            throw std::invalid_argument("linear_probe: class " + std::to_string(c) + " absent from train set");

    int d = train.dim();
    RngStream rng(cfg.seed);
    ParamStore store;
    ag::Param& w = store.add("probe.w", Tensor({d, num_classes}));
    ag::Param& b = store.add("probe.b", Tensor({num_classes}));
    MomentumSgd opt(store.all(), cfg.momentum, cfg.weight_decay);

    int n = train.size();
    std::vector<int> order(static_cast<size_t>(n));
    for (int i = 0; i < n; ++i) order[static_cast<size_t>(i)] = i;
    int steps_per_epoch = (n + cfg.batch - 1) / cfg.batch;
    int64_t total_steps = static_cast<int64_t>(steps_per_epoch) * cfg.epochs;
    int64_t step = 0;

    g_last_curve.clear();
    auto evaluate = [&](const FeatureSet& fs) {
        ag::Graph g(false);
        ag::NodeId logits = g.add_bias(g.matmul(g.input(fs.features), g.use(w)), g.use(b));
        const Tensor& t = g.val(logits);
        int correct = 0;
        for (int i = 0; i < fs.size(); ++i)
            if (argmax_row(t, i) == fs.labels[static_cast<size_t>(i)]) ++correct;
        return static_cast<float>(correct) / static_cast<float>(fs.size());
    };

    for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
        RngStream erng = rng.fork("epoch").fork(static_cast<uint64_t>(epoch));
        shuffle_indices(order, erng);
        for (int s = 0; s < steps_per_epoch; ++s) {
            int lo = s * cfg.batch;
            int hi = std::min(n, lo + cfg.batch);
            Tensor xb({hi - lo, d});
            std::vector<int> yb;
            for (int i = lo; i < hi; ++i) {
                std::copy_n(&train.features.v[static_cast<size_t>(order[static_cast<size_t>(i)]) * d], d,
                            &xb.v[static_cast<size_t>(i - lo) * d]);
                yb.push_back(train.labels[static_cast<size_t>(order[static_cast<size_t>(i)])]);
            }
            ag::Graph g(true);
            ag::NodeId logits = g.add_bias(g.matmul(g.input(std::move(xb)), g.use(w)), g.use(b));
            ag::NodeId loss = g.cross_entropy_rows(logits, yb, 0.0f);
            opt.zero_grad();
            g.backward(loss);
            opt.step(cosine_lr(cfg.lr, step, total_steps, total_steps / 20));
            ++step;
        }
        g_last_curve.push_back(evaluate(test));
    }
    return evaluate(test);
}

float few_shot_probe(const FeatureSet& train, const FeatureSet& test, int n_per_class,
                     const ProbeConfig& cfg, RngStream& rng) {
    if (n_per_class < 1) throw std::invalid_argument("few_shot_probe: n_per_class must be >= 1");
    int num_classes = 0;
    for (int lb : train.labels) num_classes = std::max(num_classes, lb + 1);
    std::vector<std::vector<int>> by_class(static_cast<size_t>(num_classes));
    for (int i = 0; i < train.size(); ++i) by_class[static_cast<size_t>(train.labels[static_cast<size_t>(i)])].push_back(i);

    std::vector<int> chosen;
    for (int c = 0; c < num_classes; ++c) {
        auto& pool = by_class[static_cast<size_t>(c)];
        if (static_cast<int>(pool.size()) < n_per_class)
            throw std::invalid_argument("few_shot_probe: class " + std::to_string(c) + " has too few samples");
        shuffle_indices(pool, rng);
        chosen.insert(chosen.end(), pool.begin(), pool.begin() + n_per_class);
    }
    std::sort(chosen.begin(), chosen.end());

    FeatureSet sub;
    sub.features = Tensor({static_cast<int>(chosen.size()), train.dim()});
    for (size_t i = 0; i < chosen.size(); ++i) {
        std::copy_n(&train.features.v[static_cast<size_t>(chosen[i]) * train.dim()], train.dim(),
                    &sub.features.v[i * static_cast<size_t>(train.dim())]);
        sub.labels.push_back(train.labels[static_cast<size_t>(chosen[i])]);
    }
    return linear_probe(sub, test, cfg);
}

float fine_tune(const Dataset& data, VqModel& tokenizer, MageModel& model, int num_classes,
                const ProbeConfig& cfg) {
    if (cfg.freeze_encoder) {
        FeatureSet tr = pooled_features(data.train, tokenizer, model);
        FeatureSet te = pooled_features(data.test, tokenizer, model);
        return linear_probe(tr, te, cfg);
    }
    int W = model.config().width;
    int N = model.config().seq_len;
    int side = tokenizer.config().grid_size();
    RngStream rng(cfg.seed);
    RngStream drop_rng = rng.fork("dropout");

    ParamStore head;
    ag::Param& hw = head.add("ft.head.w", Tensor({W, num_classes}));
    ag::Param& hb = head.add("ft.head.b", Tensor({num_classes}));

    // Layer-wise LR decay: head 1.0, top encoder block cfg.layerwise_decay,
    // each earlier block multiplied again, embeddings deepest.
    std::vector<ag::Param*> all = model.encoder_params();
    all.push_back(&hw);
    all.push_back(&hb);
    int depth = model.config().enc_depth;
    std::vector<float> scales;
    for (ag::Param* p : all) {
        float s = 1.0f;
        if (p->name.rfind("enc.block", 0) == 0) {
            int blk = std::stoi(p->name.substr(9, p->name.find('.', 9) - 9));
            s = std::pow(cfg.layerwise_decay, static_cast<float>(depth - blk));
        } else if (p->name.rfind("ft.", 0) == 0 || p->name.rfind("enc.out_ln", 0) == 0) {
            s = 1.0f;
        } else {
            s = std::pow(cfg.layerwise_decay, static_cast<float>(depth + 1));
        }
        scales.push_back(s);
    }
    AdamWConfig ocfg;
    ocfg.weight_decay = cfg.weight_decay;
    AdamW opt(all, ocfg);
    opt.set_lr_scales(scales);

    // Tokens are fixed across epochs (no augmentation in fine-tuning).
    std::vector<std::vector<int>> tokens;
    for (const auto& li : data.train) tokens.push_back(encode_image(li.image, tokenizer).indices);

    int n = static_cast<int>(data.train.size());
    std::vector<int> order(static_cast<size_t>(n));
    for (int i = 0; i < n; ++i) order[static_cast<size_t>(i)] = i;
    int steps_per_epoch = (n + cfg.batch - 1) / cfg.batch;
    int64_t total_steps = static_cast<int64_t>(steps_per_epoch) * cfg.epochs;
    int64_t step = 0;
    g_last_curve.clear();

    for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
        RngStream erng = rng.fork("epoch").fork(static_cast<uint64_t>(epoch));
        shuffle_indices(order, erng);
        for (int s = 0; s < steps_per_epoch; ++s) {
            int lo = s * cfg.batch;
            int hi = std::min(n, lo + cfg.batch);
            std::vector<EncoderInputSpec> specs;
            std::vector<int> yb;
            for (int i = lo; i < hi; ++i) {
                specs.push_back(apply_mask(tokens[static_cast<size_t>(order[static_cast<size_t>(i)])],
                                           MaskPlan::zero_mask(N)));
                yb.push_back(data.train[static_cast<size_t>(order[static_cast<size_t>(i)])].label);
            }
            ag::Graph g(true);
            EncoderBatchOut enc = model.embed_and_encode(g, specs, drop_rng);
            ag::NodeId pooled = model.pooled_encoder_feature(g, enc);
            ag::NodeId logits = g.add_bias(g.matmul(pooled, g.use(hw)), g.use(hb));
            ag::NodeId loss = g.cross_entropy_rows(logits, yb, 0.0f);
            opt.zero_grad();
            g.backward(loss);
            opt.step(cosine_lr(cfg.lr, step, total_steps, total_steps / 20));
            ++step;
        }
        FeatureSet te = pooled_features(data.test, tokenizer, model);
        ag::Graph g(false);
        ag::NodeId logits = g.add_bias(g.matmul(g.input(te.features), g.use(hw)), g.use(hb));
        const Tensor& t = g.val(logits);
        int correct = 0;
        for (int i = 0; i < te.size(); ++i)
            if (argmax_row(t, i) == te.labels[static_cast<size_t>(i)]) ++correct;
        g_last_curve.push_back(static_cast<float>(correct) / static_cast<float>(te.size()));
    }
    return g_last_curve.empty() ? 0.0f : g_last_curve.back();
}

double token_marginal_tv(const std::vector<TokenGrid>& corpus_a, const std::vector<TokenGrid>& corpus_b,
                         int vocab) {
    if (corpus_a.empty() || corpus_b.empty()) throw std::invalid_argument("token_marginal_tv: empty corpus");
    auto hist = [&](const std::vector<TokenGrid>& corpus) {
        std::vector<double> h(static_cast<size_t>(vocab), 0.0);
        double total = 0.0;
        for (const TokenGrid& g : corpus)
            for (int idx : g.indices) {
                if (idx < 0 || idx >= vocab) throw std::out_of_range("token_marginal_tv: index out of range");
                h[static_cast<size_t>(idx)] += 1.0;
                total += 1.0;
            }
        for (double& x : h) x /= total;
        return h;
    };
    std::vector<double> ha = hist(corpus_a);
    std::vector<double> hb = hist(corpus_b);
    double tv = 0.0;
    for (int k = 0; k < vocab; ++k) tv += std::fabs(ha[static_cast<size_t>(k)] - hb[static_cast<size_t>(k)]);
    return tv / 2.0;
}

} // namespace mage
