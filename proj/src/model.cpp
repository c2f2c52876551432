#include "mage/model.hpp"

#include <cmath>
#include <stdexcept>

namespace mage {

namespace {
constexpr float kInitStd = 0.02f;
} // namespace

MageModel::MageModel(const MageConfig& cfg, RngStream& init_rng) : cfg_(cfg) {
    if (cfg.width % cfg.heads != 0) throw std::invalid_argument("mage: width not divisible by heads");
    int W = cfg.width;
    int N = cfg.seq_len;
    auto nrm = [&](std::vector<int> s) { return normal_init(std::move(s), kInitStd, init_rng); };

    params_.add("tok_emb", nrm({cfg.vocab, W}));
    params_.add("mask_emb", nrm({1, W}));
    params_.add("class0_emb", nrm({1, W}));
    params_.add("enc_pos", nrm({N + 1, W})); // index N = class slot
    params_.add("dec_pos", nrm({N + 1, W})); // index 0 = class slot
    params_.add("pad_mask_vec", nrm({1, W}));
    params_.add("bypass_proj", nrm({cfg.vq_feature_dim, W}));

    auto block_params = [&](const std::string& prefix) {
        params_.add(prefix + ".ln1.g", const_init({W}, 1.0f));
        params_.add(prefix + ".ln1.b", const_init({W}, 0.0f));
        params_.add(prefix + ".attn.wqkv", nrm({W, 3 * W}));
        params_.add(prefix + ".attn.bqkv", const_init({3 * W}, 0.0f));
        params_.add(prefix + ".attn.wo", nrm({W, W}));
        params_.add(prefix + ".attn.bo", const_init({W}, 0.0f));
        params_.add(prefix + ".ln2.g", const_init({W}, 1.0f));
        params_.add(prefix + ".ln2.b", const_init({W}, 0.0f));
        params_.add(prefix + ".mlp.w1", nrm({W, cfg.mlp_ratio * W}));
        params_.add(prefix + ".mlp.b1", const_init({cfg.mlp_ratio * W}, 0.0f));
        params_.add(prefix + ".mlp.w2", nrm({cfg.mlp_ratio * W, W}));
        params_.add(prefix + ".mlp.b2", const_init({W}, 0.0f));
    };
    for (int b = 0; b < cfg.enc_depth; ++b) block_params("enc.block" + std::to_string(b));
    params_.add("enc.out_ln.g", const_init({W}, 1.0f));
    params_.add("enc.out_ln.b", const_init({W}, 0.0f));
    for (int b = 0; b < cfg.dec_depth; ++b) block_params("dec.block" + std::to_string(b));
    params_.add("dec.out_ln.g", const_init({W}, 1.0f));
    params_.add("dec.out_ln.b", const_init({W}, 0.0f));
    params_.add("head.w", nrm({W, cfg.vocab}));
    params_.add("head.b", const_init({cfg.vocab}, 0.0f));

    // contrastive projection head
    params_.add("proj.w1", nrm({W, W}));
    params_.add("proj.b1", const_init({W}, 0.0f));
    params_.add("proj.w2", nrm({W, W}));
    params_.add("proj.b2", const_init({W}, 0.0f));

    if (cfg.num_classes > 0) {
        params_.add("label_emb", nrm({cfg.num_classes, W}));
        params_.add("cdec_pos", nrm({N + 2, W})); // label slot, class slot, N tokens
        for (int b = 0; b < cfg.dec_depth; ++b) block_params("cdec.block" + std::to_string(b));
        params_.add("cdec.out_ln.g", const_init({W}, 1.0f));
        params_.add("cdec.out_ln.b", const_init({W}, 0.0f));
        params_.add("chead.w", nrm({W, cfg.vocab}));
        params_.add("chead.b", const_init({cfg.vocab}, 0.0f));
    }
}

std::vector<ag::Param*> MageModel::backbone_params() {
    std::vector<ag::Param*> out;
    for (ag::Param* p : params_.all())
        if (p->name.rfind("cdec", 0) != 0 && p->name.rfind("chead", 0) != 0 && p->name != "label_emb" &&
            p->name != "cdec_pos")
            out.push_back(p);
    return out;
}

std::vector<ag::Param*> MageModel::conditional_params() {
    std::vector<ag::Param*> out;
    for (ag::Param* p : params_.all())
        if (p->name.rfind("cdec", 0) == 0 || p->name.rfind("chead", 0) == 0 || p->name == "label_emb" ||
            p->name == "cdec_pos")
            out.push_back(p);
    return out;
}

std::vector<ag::Param*> MageModel::encoder_params() {
    std::vector<ag::Param*> out;
    for (ag::Param* p : params_.all())
        if (p->name.rfind("enc", 0) == 0 || p->name == "tok_emb" || p->name == "mask_emb" ||
            p->name == "class0_emb" || p->name == "bypass_proj")
            out.push_back(p);
    return out;
}

std::vector<ag::Param*> MageModel::projection_params() {
    std::vector<ag::Param*> out;
    for (ag::Param* p : params_.all())
        if (p->name.rfind("proj.", 0) == 0) out.push_back(p);
    return out;
}

ag::NodeId MageModel::transformer_block(ag::Graph& g, ag::NodeId x, int batch, int tokens,
                                        const std::string& prefix, RngStream& rng) {
    int W = cfg_.width;
    int H = cfg_.heads;
    int dh = cfg_.head_dim();
    auto p = [&](const std::string& n) { return g.use(*params_.find(prefix + n)); };

    ag::NodeId h = g.layer_norm(x, p(".ln1.g"), p(".ln1.b"));
    ag::NodeId qkv = g.add_bias(g.matmul(h, p(".attn.wqkv")), p(".attn.bqkv"));
    float att_scale = 1.0f / std::sqrt(static_cast<float>(dh));
    std::vector<ag::NodeId> seq_outs;
    seq_outs.reserve(static_cast<size_t>(batch));
    std::vector<int> rows(static_cast<size_t>(tokens));
    for (int b = 0; b < batch; ++b) {
        for (int t = 0; t < tokens; ++t) rows[static_cast<size_t>(t)] = b * tokens + t;
        ag::NodeId qkv_b = g.gather_rows(qkv, rows);
        std::vector<ag::NodeId> head_outs;
        head_outs.reserve(static_cast<size_t>(H));
        for (int hd = 0; hd < H; ++hd) {
            ag::NodeId q = g.slice_cols(qkv_b, hd * dh, (hd + 1) * dh);
            ag::NodeId k = g.slice_cols(qkv_b, W + hd * dh, W + (hd + 1) * dh);
            ag::NodeId v = g.slice_cols(qkv_b, 2 * W + hd * dh, 2 * W + (hd + 1) * dh);
            ag::NodeId scores = g.scale(g.matmul(q, k, false, true), att_scale);
            ag::NodeId attn = g.softmax_rows(scores);
            head_outs.push_back(g.matmul(attn, v));
        }
        seq_outs.push_back(g.concat_cols(head_outs));
    }
    ag::NodeId attn_out = batch == 1 ? seq_outs[0] : g.concat_rows(seq_outs);
    attn_out = g.add_bias(g.matmul(attn_out, p(".attn.wo")), p(".attn.bo"));
    attn_out = g.dropout(attn_out, cfg_.dropout, rng);
    x = g.add(x, attn_out);

    ag::NodeId m = g.layer_norm(x, p(".ln2.g"), p(".ln2.b"));
    m = g.gelu(g.add_bias(g.matmul(m, p(".mlp.w1")), p(".mlp.b1")));
    m = g.add_bias(g.matmul(m, p(".mlp.w2")), p(".mlp.b2"));
    m = g.dropout(m, cfg_.dropout, rng);
    return g.add(x, m);
}

EncoderBatchOut MageModel::embed_and_encode(ag::Graph& g, const std::vector<EncoderInputSpec>& specs,
                                            RngStream& rng, const ForwardOptions& opts) {
    if (specs.empty()) throw std::invalid_argument("embed_and_encode: empty batch");
    int B = static_cast<int>(specs.size());
    int slots = static_cast<int>(specs[0].slots.size());
    for (const auto& s : specs)
        if (static_cast<int>(s.slots.size()) != slots)
            throw std::invalid_argument("embed_and_encode: ragged batch");
    int Te = slots + 1;
    int N = cfg_.seq_len;
    int W = cfg_.width;
    int K = cfg_.vocab;
    if (opts.bypass_quantizer && (!opts.features || static_cast<int>(opts.features->size()) != B))
        throw std::invalid_argument("embed_and_encode: bypass requires per-element features");

    // One extended embedding table: [token rows | [M] | [C0] | zero row].
    ag::NodeId zero_row = g.input(Tensor({1, W}));
    ag::NodeId ext = g.concat_rows({g.use(*params_.find("tok_emb")), g.use(*params_.find("mask_emb")),
                                    g.use(*params_.find("class0_emb")), zero_row});
    int mask_row = K, class_row = K + 1, zero = K + 2;

    std::vector<int> emb_ids, pos_ids;
    emb_ids.reserve(static_cast<size_t>(B * Te));
    pos_ids.reserve(static_cast<size_t>(B * Te));
    Tensor feat_rows; // bypass: continuous VQ features aligned with visible slots
    if (opts.bypass_quantizer) feat_rows = Tensor({B * Te, cfg_.vq_feature_dim});
    for (int b = 0; b < B; ++b) {
        emb_ids.push_back(class_row);
        pos_ids.push_back(N); // class slot uses positional index N
        for (int s = 0; s < slots; ++s) {
            const auto& slot = specs[static_cast<size_t>(b)].slots[static_cast<size_t>(s)];
            if (slot.position < 0 || slot.position >= N)
                throw std::out_of_range("embed_and_encode: position out of range");
            bool visible = slot.token >= 0;
            if (visible && slot.token >= K) throw std::out_of_range("embed_and_encode: token >= vocab");
            if (opts.bypass_quantizer && visible) {
                emb_ids.push_back(zero);
                const Tensor& f = (*opts.features)[static_cast<size_t>(b)];
                for (int c = 0; c < cfg_.vq_feature_dim; ++c)
                    feat_rows.v[static_cast<size_t>(b * Te + 1 + s) * cfg_.vq_feature_dim + c] =
                        f.v[static_cast<size_t>(slot.position) * cfg_.vq_feature_dim + c];
            } else {
                emb_ids.push_back(visible ? slot.token : mask_row);
            }
            pos_ids.push_back(slot.position);
        }
    }
    ag::NodeId x = g.add(g.gather_rows(ext, emb_ids), g.gather_rows(g.use(*params_.find("enc_pos")), pos_ids));
    if (opts.bypass_quantizer)
        x = g.add(x, g.matmul(g.input(std::move(feat_rows)), g.use(*params_.find("bypass_proj"))));

    EncoderBatchOut out;
    out.batch = B;
    out.enc_len = Te;
    for (int blk = 0; blk < cfg_.enc_depth; ++blk) {
        x = transformer_block(g, x, B, Te, "enc.block" + std::to_string(blk), rng);
        out.block_outputs.push_back(x);
    }
    x = g.layer_norm(x, g.use(*params_.find("enc.out_ln.g")), g.use(*params_.find("enc.out_ln.b")));
    out.seq = x;
    return out;
}

ag::NodeId MageModel::pad_with_class(ag::Graph& g, const EncoderBatchOut& enc,
                                     const std::vector<MaskPlan>& plans) {
    int B = enc.batch;
    if (static_cast<int>(plans.size()) != B) throw std::invalid_argument("pad_with_class: plan count mismatch");
    int N = cfg_.seq_len;
    int Te = enc.enc_len;

    // Source table: encoder rows followed by the shared pad vector.
    ag::NodeId src = g.concat_rows({enc.seq, g.use(*params_.find("pad_mask_vec"))});
    int pad_row = B * Te;

    std::vector<int> ids;
    ids.reserve(static_cast<size_t>(B * (N + 1)));
    std::vector<int> pos_ids(static_cast<size_t>(B * (N + 1)));
    for (int b = 0; b < B; ++b) {
        const MaskPlan& plan = plans[static_cast<size_t>(b)];
        if (plan.seq_len != N || static_cast<int>(plan.kept_order.size()) != Te - 1)
            throw std::invalid_argument("pad_with_class: plan inconsistent with encoder output");
        int class_src = b * Te;
        ids.push_back(class_src);
        std::vector<int> row_of(static_cast<size_t>(N), -1);
        for (int s = 0; s < Te - 1; ++s) row_of[static_cast<size_t>(plan.kept_order[static_cast<size_t>(s)])] = class_src + 1 + s;
        for (int pos = 0; pos < N; ++pos) {
            if (row_of[static_cast<size_t>(pos)] >= 0)
                ids.push_back(row_of[static_cast<size_t>(pos)]);
            else
                ids.push_back(cfg_.pad_mode == PadMode::ClassToken ? class_src : pad_row);
        }
        for (int i = 0; i <= N; ++i) pos_ids[static_cast<size_t>(b * (N + 1) + i)] = i;
    }
    ag::NodeId padded = g.gather_rows(src, ids);
    return g.add(padded, g.gather_rows(g.use(*params_.find("dec_pos")), pos_ids));
}

ag::NodeId MageModel::decoder_stack(ag::Graph& g, ag::NodeId x, int batch, int tokens,
                                    const std::string& prefix, int depth, RngStream& rng) {
    for (int blk = 0; blk < depth; ++blk)
        x = transformer_block(g, x, batch, tokens, prefix + ".block" + std::to_string(blk), rng);
    return x;
}

ag::NodeId MageModel::decode_logits(ag::Graph& g, ag::NodeId padded, int batch, RngStream& rng) {
    int N = cfg_.seq_len;
    int T = N + 1;
    if (g.val(padded).rows() != batch * T) throw std::invalid_argument("decode_logits: length mismatch");
    ag::NodeId x = decoder_stack(g, padded, batch, T, "dec", cfg_.dec_depth, rng);
    x = g.layer_norm(x, g.use(*params_.find("dec.out_ln.g")), g.use(*params_.find("dec.out_ln.b")));
    std::vector<int> token_rows;
    token_rows.reserve(static_cast<size_t>(batch * N));
    for (int b = 0; b < batch; ++b)
        for (int i = 1; i <= N; ++i) token_rows.push_back(b * T + i);
    x = g.gather_rows(x, token_rows); // class-slot outputs discarded
    return g.add_bias(g.matmul(x, g.use(*params_.find("head.w"))), g.use(*params_.find("head.b")));
}

ag::NodeId MageModel::forward_train(ag::Graph& g, const std::vector<std::vector<int>>& token_seqs,
                                    const std::vector<MaskPlan>& plans, RngStream& rng,
                                    const ForwardOptions& opts) {
    if (token_seqs.size() != plans.size()) throw std::invalid_argument("forward_train: batch mismatch");
    std::vector<EncoderInputSpec> specs;
    specs.reserve(token_seqs.size());
    for (size_t i = 0; i < token_seqs.size(); ++i) specs.push_back(apply_mask(token_seqs[i], plans[i]));
    EncoderBatchOut enc = embed_and_encode(g, specs, rng, opts);
    ag::NodeId padded = pad_with_class(g, enc, plans);
    return decode_logits(g, padded, enc.batch, rng);
}

ag::NodeId MageModel::conditional_decode(ag::Graph& g, ag::NodeId padded, const std::vector<int>& labels,
                                         RngStream& rng) {
    if (cfg_.num_classes <= 0) throw std::logic_error("conditional_decode: no label table configured");
    int B = static_cast<int>(labels.size());
    int N = cfg_.seq_len;
    if (g.val(padded).rows() != B * (N + 1)) throw std::invalid_argument("conditional_decode: length mismatch");
    for (int lb : labels)
        if (lb < 0 || lb >= cfg_.num_classes) throw std::out_of_range("conditional_decode: bad label");

    // Encoder (and main decoder inputs) stay frozen during conditional training.
    ag::NodeId base = g.stop_gradient(padded);
    ag::NodeId src = g.concat_rows({base, g.use(*params_.find("label_emb"))});
    int label_row0 = B * (N + 1);
    int T = N + 2;
    std::vector<int> ids, pos_ids;
    ids.reserve(static_cast<size_t>(B * T));
    pos_ids.reserve(static_cast<size_t>(B * T));
    for (int b = 0; b < B; ++b) {
        ids.push_back(label_row0 + labels[static_cast<size_t>(b)]);
        pos_ids.push_back(0);
        for (int i = 0; i <= N; ++i) {
            ids.push_back(b * (N + 1) + i);
            pos_ids.push_back(1 + i);
        }
    }
    ag::NodeId x = g.add(g.gather_rows(src, ids), g.gather_rows(g.use(*params_.find("cdec_pos")), pos_ids));
    x = decoder_stack(g, x, B, T, "cdec", cfg_.dec_depth, rng);
    x = g.layer_norm(x, g.use(*params_.find("cdec.out_ln.g")), g.use(*params_.find("cdec.out_ln.b")));
    std::vector<int> token_rows;
    token_rows.reserve(static_cast<size_t>(B * N));
    for (int b = 0; b < B; ++b)
        for (int i = 2; i < T; ++i) token_rows.push_back(b * T + i); // drop label + class slots
    x = g.gather_rows(x, token_rows);
    return g.add_bias(g.matmul(x, g.use(*params_.find("chead.w"))), g.use(*params_.find("chead.b")));
}

ag::NodeId MageModel::pooled_encoder_feature(ag::Graph& g, const EncoderBatchOut& enc, int block) {
    ag::NodeId seq = block < 0 ? enc.seq : enc.block_outputs.at(static_cast<size_t>(block));
    std::vector<ag::NodeId> pooled;
    pooled.reserve(static_cast<size_t>(enc.batch));
    std::vector<int> rows(static_cast<size_t>(enc.enc_len - 1));
    for (int b = 0; b < enc.batch; ++b) {
        for (int s = 1; s < enc.enc_len; ++s) rows[static_cast<size_t>(s - 1)] = b * enc.enc_len + s;
        pooled.push_back(g.mean_rows(g.gather_rows(seq, rows)));
    }
    return enc.batch == 1 ? pooled[0] : g.concat_rows(pooled);
}

ag::NodeId MageModel::projection_head(ag::Graph& g, ag::NodeId pooled) {
    ag::NodeId h = g.gelu(g.add_bias(g.matmul(pooled, g.use(*params_.find("proj.w1"))),
                                     g.use(*params_.find("proj.b1"))));
    h = g.add_bias(g.matmul(h, g.use(*params_.find("proj.w2"))), g.use(*params_.find("proj.b2")));
    return g.l2_normalize_rows(h);
}

} // namespace mage
