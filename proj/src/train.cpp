#include "mage/train.hpp"

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <iomanip>
#include <sstream>

#include "mage/checkpoint.hpp"
#include "mage/errors.hpp"
#include "mage/losses.hpp"

namespace mage {

namespace fs = std::filesystem;

std::string resolve_checkpoint(const std::string& path, const std::string& out_dir) {
    if (fs::exists(path)) return path;
    fs::path alt = fs::path(out_dir) / path;
    if (fs::exists(alt)) return alt.string();
    throw DataError("checkpoint not found: " + path);
}

Tensor continuous_features(const Tensor& image, VqModel& tokenizer) {
    ag::Graph g(false);
    ag::NodeId f = tokenizer.encode_features(g, g.input(image));
    return g.val(f);
}

std::unique_ptr<VqModel> load_tokenizer_checkpoint(const std::string& path, RunConfig* cfg_out) {
    Checkpoint ck = Checkpoint::load(path);
    RunConfig cfg = RunConfig::from_text(ck.config_text);
    RngStream init(cfg.seed);
    auto model = std::make_unique<VqModel>(cfg.vq, init);
    // Tensor-table restore only; the tokenizer is frozen downstream.
    ParamStore& ps = model->params();
    ck.restore_params(ps);
    if (cfg_out) *cfg_out = cfg;
    return model;
}

std::unique_ptr<MageModel> load_mage_checkpoint(const std::string& path, RunConfig* cfg_out) {
    Checkpoint ck = Checkpoint::load(path);
    RunConfig cfg = RunConfig::from_text(ck.config_text);
    RngStream base(cfg.seed);
    RngStream init = base.fork("mage-init");
    auto model = std::make_unique<MageModel>(cfg.model, init);
    ck.restore_params(model->params());
    if (cfg_out) *cfg_out = cfg;
    return model;
}

namespace {

std::string fmt(float x) {
    std::ostringstream o;
    o << std::setprecision(6) << x;
    return o.str();
}

} // namespace

std::string train_tokenizer(const RunConfig& cfg, const Dataset& data, const std::string& out_dir,
                            std::ostream& log) {
    fs::create_directories(out_dir);
    RngStream base(cfg.seed);
    RngStream init = base.fork("vq-init");
    VqModel model(cfg.vq, init);

    AdamWConfig oc;
    oc.base_lr = cfg.vq_lr;
    oc.weight_decay = 1e-4f;
    AdamW opt(model.params().all(), oc);

    const int n = static_cast<int>(data.train.size());
    if (n == 0) throw DataError("train_tokenizer: empty train split");
    const int batch = std::min(cfg.vq_batch, n);
    const int steps_per_epoch = (n + batch - 1) / batch;
    const int64_t total_steps = static_cast<int64_t>(steps_per_epoch) * cfg.vq_epochs;
    const int64_t warmup = std::max<int64_t>(1, total_steps / 20);

    int64_t step = 0;
    for (int epoch = 0; epoch < cfg.vq_epochs; ++epoch) {
        RngStream ep = base.fork("vq-epoch").fork(static_cast<uint64_t>(epoch));
        std::vector<int> order = shuffle_indices(n, ep);
        for (int s = 0; s < steps_per_epoch; ++s, ++step) {
            RngStream sr = base.fork("vq-step").fork(static_cast<uint64_t>(step));
            std::vector<Tensor> images;
            for (int b = 0; b < batch; ++b) {
                int idx = order[static_cast<size_t>((s * batch + b) % n)];
                RngStream ar = sr.fork(static_cast<uint64_t>(b));
                images.push_back(augment(data.train[static_cast<size_t>(idx)].image, data.image_size,
                                         cfg.augment, ar));
            }
            float lr = cosine_lr(cfg.vq_lr, step, total_steps, warmup);
            TokenizerStepStats st = tokenizer_train_step(images, model, opt, lr);
            log << "step=" << step << " loss=" << fmt(st.total) << " recon=" << fmt(st.recon)
                << " vq=" << fmt(st.vq) << " commit=" << fmt(st.commit) << "\n";
        }
        // Revive unused codebook entries from fresh encoder outputs.
        RngStream rr = base.fork("vq-reinit").fork(static_cast<uint64_t>(epoch));
        std::vector<Tensor> feats;
        int sample = std::min(8, n);
        for (int i = 0; i < sample; ++i)
            feats.push_back(continuous_features(
                data.train[static_cast<size_t>(rr.below(static_cast<uint64_t>(n)))].image, model));
        Tensor pool({sample * feats[0].rows(), feats[0].cols()});
        for (int i = 0; i < sample; ++i)
            std::copy(feats[static_cast<size_t>(i)].v.begin(), feats[static_cast<size_t>(i)].v.end(),
                      pool.v.begin() + static_cast<size_t>(i) * feats[0].v.size());
        int revived = model.reinit_dead_entries(pool, rr);
        if (revived > 0) log << "# epoch " << epoch << ": revived " << revived << " codebook entries\n";
    }

    std::string out = (fs::path(out_dir) / "tokenizer.ckpt").string();
    Checkpoint::from_params(cfg.to_text(), model.params()).save(out);
    return out;
}

namespace {

struct View {
    std::vector<std::vector<int>> tokens; // per element, flat indices
    std::vector<MaskPlan> plans;
    std::vector<float> ratios;
    std::vector<Tensor> features; // continuous VQ features (bypass mode only)
};

View build_view(const RunConfig& cfg, const Dataset& data, VqModel& tok,
                const std::vector<int>& order, int step_in_epoch, int batch, RngStream& sr,
                uint64_t view_key, const std::vector<std::vector<int>>* token_cache) {
    View v;
    const int n = static_cast<int>(data.train.size());
    for (int b = 0; b < batch; ++b) {
        int idx = order[static_cast<size_t>((step_in_epoch * batch + b) % n)];
        RngStream er = sr.fork(view_key).fork(static_cast<uint64_t>(b));
        std::vector<int> tokens;
        if (token_cache) {
            tokens = (*token_cache)[static_cast<size_t>(idx)];
        } else {
            RngStream ar = er.fork("aug");
            Tensor img = augment(data.train[static_cast<size_t>(idx)].image, data.image_size,
                                 cfg.augment, ar);
            if (cfg.bypass_quantizer) v.features.push_back(continuous_features(img, tok));
            tokens = encode_image(img, tok).indices;
        }
        if (cfg.bypass_quantizer && token_cache) {
            // Cached path never runs with bypass (cache stores indices only).
            throw ConfigError("train.cache_tokens is incompatible with train.bypass_quantizer");
        }
        RngStream mr = er.fork("ratio");
        float ratio = sample_ratio(cfg.mask, mr);
        RngStream pr = er.fork("plan");
        v.plans.push_back(build_mask_plan(static_cast<int>(tokens.size()), ratio, pr));
        v.ratios.push_back(ratio);
        v.tokens.push_back(std::move(tokens));
    }
    return v;
}

std::vector<int> flat_targets(const View& v) {
    std::vector<int> t;
    for (const auto& seq : v.tokens) t.insert(t.end(), seq.begin(), seq.end());
    return t;
}

} // namespace

MageTrainResult train_mage(const RunConfig& cfg, const Dataset& data, const std::string& out_dir,
                           std::ostream& log, const std::string& resume_path) {
    fs::create_directories(out_dir);
    auto tok = load_tokenizer_checkpoint(resolve_checkpoint(cfg.tokenizer_checkpoint, out_dir));

    RngStream base(cfg.seed);
    RngStream init = base.fork("mage-init");
    MageModel model(cfg.model, init);

    const bool contrastive = cfg.loss.lambda > 0.0f;
    std::vector<ag::Param*> opt_params = model.backbone_params();
    if (!contrastive) {
        // Without the contrastive term the projection head receives no
        // gradient; keep it out of the optimizer so decay leaves it at init.
        std::vector<ag::Param*> kept;
        auto proj = model.projection_params();
        for (ag::Param* p : opt_params)
            if (std::find(proj.begin(), proj.end(), p) == proj.end()) kept.push_back(p);
        opt_params = kept;
    }
    if (cfg.model.num_classes > 0) {
        auto cond = model.conditional_params();
        opt_params.insert(opt_params.end(), cond.begin(), cond.end());
    }
    AdamWConfig oc;
    oc.base_lr = cfg.base_lr;
    AdamW opt(opt_params, oc);

    const int n = static_cast<int>(data.train.size());
    if (n == 0) throw DataError("train_mage: empty train split");
    const int batch = std::min(cfg.batch, n);
    const int steps_per_epoch = (n + batch - 1) / batch;
    const int64_t total_steps = static_cast<int64_t>(steps_per_epoch) * cfg.epochs;
    const int64_t warmup =
        std::max<int64_t>(1, static_cast<int64_t>(std::lround(cfg.warmup_frac * total_steps)));
    const float lr_base = cfg.base_lr * static_cast<float>(batch) / 256.0f;

    int start_epoch = 0;
    int64_t step = 0;
    if (!resume_path.empty()) {
        Checkpoint ck = Checkpoint::load(resolve_checkpoint(resume_path, out_dir));
        ck.restore_params(model.params(), &opt);
        start_epoch = static_cast<int>(ck.counters.at("epoch"));
        step = static_cast<int64_t>(ck.counters.at("step"));
    }

    // Token cache is only sound when every epoch sees the identical image.
    std::unique_ptr<std::vector<std::vector<int>>> cache;
    if (cfg.cache_tokens) {
        if (cfg.augment != AugPolicy::None)
            throw ConfigError("train.cache_tokens requires aug.policy = none");
        if (cfg.bypass_quantizer)
            throw ConfigError("train.cache_tokens is incompatible with train.bypass_quantizer");
        cache = std::make_unique<std::vector<std::vector<int>>>();
        for (const auto& li : data.train) cache->push_back(encode_image(li.image, *tok).indices);
    }

    std::string out = (fs::path(out_dir) / "mage.ckpt").string();
    auto save = [&](int completed_epochs) {
        Checkpoint ck = Checkpoint::from_params(cfg.to_text(), model.params(), &opt);
        ck.counters["epoch"] = static_cast<uint64_t>(completed_epochs);
        ck.counters["step"] = static_cast<uint64_t>(step);
        ck.save(out);
    };

    MageTrainResult result;
    result.checkpoint_path = out;
    for (int epoch = start_epoch; epoch < cfg.epochs; ++epoch) {
        RngStream ep = base.fork("mage-epoch").fork(static_cast<uint64_t>(epoch));
        std::vector<int> order = shuffle_indices(n, ep);
        for (int s = 0; s < steps_per_epoch; ++s, ++step) {
            RngStream sr = base.fork("mage-step").fork(static_cast<uint64_t>(step));
            View v1 = build_view(cfg, data, *tok, order, s, batch, sr, 1, cache.get());

            ag::Graph g(true);
            ForwardOptions opts;
            opts.bypass_quantizer = cfg.bypass_quantizer;
            if (cfg.bypass_quantizer) opts.features = &v1.features;

            std::vector<EncoderInputSpec> specs;
            for (size_t i = 0; i < v1.tokens.size(); ++i)
                specs.push_back(apply_mask(v1.tokens[i], v1.plans[i]));
            RngStream dr = sr.fork("dropout");
            EncoderBatchOut enc = model.embed_and_encode(g, specs, dr, opts);
            ag::NodeId padded = model.pad_with_class(g, enc, v1.plans);
            ag::NodeId logits = model.decode_logits(g, padded, batch, dr);
            ag::NodeId recon =
                reconstructive_loss(g, logits, flat_targets(v1), v1.plans, cfg.label_smoothing);

            ag::NodeId contrast = -1;
            float contrast_val = 0.0f;
            if (contrastive) {
                View v2 = build_view(cfg, data, *tok, order, s, batch, sr, 2, cache.get());
                std::vector<int> part =
                    CombinedLoss::participants(v1.ratios, v2.ratios, cfg.loss.max_ratio);
                if (part.size() >= 2) {
                    ForwardOptions o2 = opts;
                    if (cfg.bypass_quantizer) o2.features = &v2.features;
                    std::vector<EncoderInputSpec> specs2;
                    for (size_t i = 0; i < v2.tokens.size(); ++i)
                        specs2.push_back(apply_mask(v2.tokens[i], v2.plans[i]));
                    RngStream dr2 = sr.fork("dropout2");
                    EncoderBatchOut enc2 = model.embed_and_encode(g, specs2, dr2, o2);
                    ag::NodeId p1 = model.pooled_encoder_feature(g, enc);
                    ag::NodeId p2 = model.pooled_encoder_feature(g, enc2);
                    ag::NodeId r1 = g.gather_rows(p1, part);
                    ag::NodeId r2 = g.gather_rows(p2, part);
                    ag::NodeId z1 = model.projection_head(g, r1);
                    ag::NodeId z2 = model.projection_head(g, r2);
                    contrast = contrastive_loss(g, z1, z2, cfg.loss.temperature);
                    contrast_val = g.val(contrast).v[0];
                }
            }
            CombinedLoss combined = combined_loss(g, recon, contrast, cfg.loss.lambda);
            ag::NodeId total = combined.total;

            if (cfg.model.num_classes > 0) {
                std::vector<int> labels;
                for (int b = 0; b < batch; ++b)
                    labels.push_back(
                        data.train[static_cast<size_t>(order[static_cast<size_t>((s * batch + b) % n)])]
                            .label);
                ag::NodeId clogits = model.conditional_decode(g, padded, labels, dr);
                ag::NodeId closs =
                    reconstructive_loss(g, clogits, flat_targets(v1), v1.plans, cfg.label_smoothing);
                // Gradient is blocked at the padded features, so this term
                // only trains the conditional decoder branch.
                total = g.add_scalar_nodes(total, closs, 1.0f);
            }

            float loss_val = g.val(total).v[0];
            float recon_val = g.val(recon).v[0];
            if (!std::isfinite(loss_val)) throw NumericError("train_mage: non-finite loss");
            model.params().zero_grad();
            g.backward(total);
            float lr = cosine_lr(lr_base, step, total_steps, warmup);
            opt.step(lr);

            double mr = 0.0;
            for (float r : v1.ratios) mr += r;
            mr /= static_cast<double>(v1.ratios.size());
            log << "step=" << step << " loss=" << fmt(loss_val) << " recon=" << fmt(recon_val)
                << " contrast=" << fmt(contrast_val) << " mr_mean=" << fmt(static_cast<float>(mr))
                << "\n";
            result.final_loss = loss_val;
            result.final_recon = recon_val;
        }
        if (cfg.checkpoint_every > 0 && (epoch + 1) % cfg.checkpoint_every == 0 &&
            epoch + 1 < cfg.epochs)
            save(epoch + 1);
    }
    save(cfg.epochs);
    return result;
}

} // namespace mage
