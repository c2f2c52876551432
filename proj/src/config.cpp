#include "mage/config.hpp"

#include <fstream>
#include <functional>
#include <sstream>
#include <stdexcept>

namespace mage {

namespace {

std::string trim(const std::string& s) {
    size_t a = s.find_first_not_of(" \t\r\n");
    if (a == std::string::npos) return "";
    size_t b = s.find_last_not_of(" \t\r\n");
    return s.substr(a, b - a + 1);
}

struct Schema {
    std::map<std::string, std::function<void(RunConfig&, const std::string&)>> setters;

    void num(const std::string& key, std::function<void(RunConfig&, double)> set) {
        setters[key] = [key, set](RunConfig& c, const std::string& v) {
            size_t pos = 0;
            double d;
            try {
                d = std::stod(v, &pos);
            } catch (const std::exception&) {
                throw std::invalid_argument("config: bad numeric value for " + key + ": '" + v + "'");
            }
            if (pos != v.size()) throw std::invalid_argument("config: bad numeric value for " + key + ": '" + v + "'");
            set(c, d);
        };
    }
    void str(const std::string& key, std::function<void(RunConfig&, const std::string&)> set) {
        setters[key] = std::move(set);
    }
    void flag(const std::string& key, std::function<void(RunConfig&, bool)> set) {
        setters[key] = [key, set](RunConfig& c, const std::string& v) {
            if (v == "true" || v == "1") set(c, true);
            else if (v == "false" || v == "0") set(c, false);
            else throw std::invalid_argument("config: bad boolean for " + key + ": '" + v + "'");
        };
    }
};

const Schema& schema() {
    static Schema s = [] {
        Schema s;
        s.num("seed", [](RunConfig& c, double v) { c.seed = static_cast<uint64_t>(v); });
        s.str("data.source", [](RunConfig& c, const std::string& v) { c.data_source = v; });
        s.num("data.image_size", [](RunConfig& c, double v) { c.image_size = static_cast<int>(v); });
        s.num("data.num_classes", [](RunConfig& c, double v) { c.num_classes = static_cast<int>(v); });
        s.num("data.train_per_class", [](RunConfig& c, double v) { c.train_per_class = static_cast<int>(v); });
        s.num("data.test_per_class", [](RunConfig& c, double v) { c.test_per_class = static_cast<int>(v); });
        s.str("aug.policy", [](RunConfig& c, const std::string& v) {
            if (v == "strong") c.augment = AugPolicy::Strong;
            else if (v == "weak") c.augment = AugPolicy::Weak;
            else if (v == "none") c.augment = AugPolicy::None;
            else throw std::invalid_argument("config: aug.policy must be strong|weak|none");
        });
        s.num("mask.mode", [](RunConfig& c, double v) { c.mask.mode = static_cast<float>(v); });
        s.num("mask.std", [](RunConfig& c, double v) { c.mask.std = static_cast<float>(v); });
        s.num("mask.min", [](RunConfig& c, double v) { c.mask.min = static_cast<float>(v); });
        s.num("mask.max", [](RunConfig& c, double v) { c.mask.max = static_cast<float>(v); });
        s.num("loss.lambda", [](RunConfig& c, double v) { c.loss.lambda = static_cast<float>(v); });
        s.num("loss.temperature", [](RunConfig& c, double v) { c.loss.temperature = static_cast<float>(v); });
        s.num("loss.contrastive_max_ratio", [](RunConfig& c, double v) { c.loss.max_ratio = static_cast<float>(v); });
        s.num("loss.label_smoothing", [](RunConfig& c, double v) { c.label_smoothing = static_cast<float>(v); });
        s.num("vq.num_blocks", [](RunConfig& c, double v) { c.vq.num_blocks = static_cast<int>(v); });
        s.num("vq.base_channels", [](RunConfig& c, double v) { c.vq.base_channels = static_cast<int>(v); });
        s.num("vq.codebook_size", [](RunConfig& c, double v) { c.vq.codebook_size = static_cast<int>(v); });
        s.num("vq.codebook_dim", [](RunConfig& c, double v) { c.vq.codebook_dim = static_cast<int>(v); });
        s.num("vq.commitment_beta", [](RunConfig& c, double v) { c.vq.commitment_beta = static_cast<float>(v); });
        s.num("vq.epochs", [](RunConfig& c, double v) { c.vq_epochs = static_cast<int>(v); });
        s.num("vq.batch_size", [](RunConfig& c, double v) { c.vq_batch = static_cast<int>(v); });
        s.num("vq.base_lr", [](RunConfig& c, double v) { c.vq_lr = static_cast<float>(v); });
        s.num("model.width", [](RunConfig& c, double v) { c.model.width = static_cast<int>(v); });
        s.num("model.enc_depth", [](RunConfig& c, double v) { c.model.enc_depth = static_cast<int>(v); });
        s.num("model.dec_depth", [](RunConfig& c, double v) { c.model.dec_depth = static_cast<int>(v); });
        s.num("model.heads", [](RunConfig& c, double v) { c.model.heads = static_cast<int>(v); });
        s.num("model.mlp_ratio", [](RunConfig& c, double v) { c.model.mlp_ratio = static_cast<int>(v); });
        s.num("model.dropout", [](RunConfig& c, double v) { c.model.dropout = static_cast<float>(v); });
        s.str("model.pad_mode", [](RunConfig& c, const std::string& v) {
            if (v == "class_token") c.model.pad_mode = PadMode::ClassToken;
            else if (v == "mask_token") c.model.pad_mode = PadMode::MaskToken;
            else throw std::invalid_argument("config: model.pad_mode must be class_token|mask_token");
        });
        s.flag("model.conditional", [](RunConfig& c, bool v) { c.model.num_classes = v ? -1 : 0; });
        s.num("train.epochs", [](RunConfig& c, double v) { c.epochs = static_cast<int>(v); });
        s.num("train.batch_size", [](RunConfig& c, double v) { c.batch = static_cast<int>(v); });
        s.num("train.base_lr", [](RunConfig& c, double v) { c.base_lr = static_cast<float>(v); });
        s.num("train.warmup_frac", [](RunConfig& c, double v) { c.warmup_frac = static_cast<float>(v); });
        s.flag("train.bypass_quantizer", [](RunConfig& c, bool v) { c.bypass_quantizer = v; });
        s.flag("train.cache_tokens", [](RunConfig& c, bool v) { c.cache_tokens = v; });
        s.num("train.checkpoint_every", [](RunConfig& c, double v) { c.checkpoint_every = static_cast<int>(v); });
        s.str("train.tokenizer_checkpoint", [](RunConfig& c, const std::string& v) { c.tokenizer_checkpoint = v; });
        s.num("gen.steps", [](RunConfig& c, double v) { c.gen_steps = static_cast<int>(v); });
        s.num("gen.gumbel_temp", [](RunConfig& c, double v) { c.gen_gumbel_temp = static_cast<float>(v); });
        s.num("gen.sample_temp", [](RunConfig& c, double v) { c.gen_sample_temp = static_cast<float>(v); });
        s.num("probe.epochs", [](RunConfig& c, double v) { c.probe_epochs = static_cast<int>(v); });
        s.num("probe.batch_size", [](RunConfig& c, double v) { c.probe_batch = static_cast<int>(v); });
        s.num("probe.lr", [](RunConfig& c, double v) { c.probe_lr = static_cast<float>(v); });
        s.num("probe.momentum", [](RunConfig& c, double v) { c.probe_momentum = static_cast<float>(v); });
        s.num("probe.weight_decay", [](RunConfig& c, double v) { c.probe_weight_decay = static_cast<float>(v); });
        s.num("probe.samples_per_class", [](RunConfig& c, double v) { c.probe_samples_per_class = static_cast<int>(v); });
        s.num("probe.layerwise_decay", [](RunConfig& c, double v) { c.finetune_layer_decay = static_cast<float>(v); });
        return s;
    }();
    return s;
}

void validate(const RunConfig& c) {
    auto req = [](bool ok, const std::string& msg) {
        if (!ok) throw std::invalid_argument("config: " + msg);
    };
    req(c.image_size >= 8 && c.image_size % (1 << c.vq.num_blocks) == 0,
        "data.image_size must be divisible by 2^vq.num_blocks");
    req(c.vq.codebook_size >= 2, "vq.codebook_size must be >= 2");
    req(c.mask.std >= 0.0f, "mask.std must be >= 0");
    req(c.mask.min >= 0.0f && c.mask.max <= 1.0f && c.mask.min <= c.mask.max,
        "mask bounds must satisfy 0 <= min <= max <= 1");
    req(c.mask.min <= c.mask.mode && c.mask.mode <= c.mask.max, "mask.mode must lie in [mask.min, mask.max]");
    req(c.loss.temperature > 0.0f, "loss.temperature must be > 0");
    req(c.loss.lambda >= 0.0f, "loss.lambda must be >= 0");
    req(c.label_smoothing >= 0.0f && c.label_smoothing < 1.0f, "loss.label_smoothing must be in [0, 1)");
    req(c.model.width % c.model.heads == 0, "model.width must be divisible by model.heads");
    req(c.epochs >= 1 && c.batch >= 1, "train.epochs and train.batch_size must be >= 1");
    req(c.gen_steps >= 1, "gen.steps must be >= 1");
    req(c.gen_gumbel_temp >= 0.0f, "gen.gumbel_temp must be >= 0");
    req(c.probe_samples_per_class >= 0, "probe.samples_per_class must be >= 0");
    req(c.num_classes >= 2, "data.num_classes must be >= 2");
}

} // namespace

std::map<std::string, std::string> parse_config_text(const std::string& text) {
    std::map<std::string, std::string> kv;
    std::istringstream in(text);
    std::string line;
    int lineno = 0;
    while (std::getline(in, line)) {
        ++lineno;
        size_t hash = line.find('#');
        if (hash != std::string::npos) line = line.substr(0, hash);
        line = trim(line);
        if (line.empty()) continue;
        size_t eq = line.find('=');
        if (eq == std::string::npos)
            throw std::invalid_argument("config: line " + std::to_string(lineno) + " has no '='");
        std::string key = trim(line.substr(0, eq));
        std::string val = trim(line.substr(eq + 1));
        if (key.empty()) throw std::invalid_argument("config: empty key on line " + std::to_string(lineno));
        kv[key] = val;
    }
    return kv;
}

RunConfig RunConfig::from_map(const std::map<std::string, std::string>& kv) {
    RunConfig c;
    const Schema& s = schema();
    for (const auto& [key, val] : kv) {
        auto it = s.setters.find(key);
        if (it == s.setters.end()) throw std::invalid_argument("config: unknown key '" + key + "'");
        it->second(c, val);
    }
    // derived fields
    c.vq.image_size = c.image_size;
    c.model.vocab = c.vq.codebook_size;
    c.model.seq_len = c.vq.grid_size() * c.vq.grid_size();
    c.model.vq_feature_dim = c.vq.codebook_dim;
    if (c.model.num_classes == -1) c.model.num_classes = c.num_classes;
    validate(c);
    return c;
}

RunConfig RunConfig::from_text(const std::string& text) { return from_map(parse_config_text(text)); }

RunConfig RunConfig::from_file(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw std::invalid_argument("config: cannot open " + path);
    std::ostringstream ss;
    ss << in.rdbuf();
    return from_text(ss.str());
}

std::string RunConfig::to_text() const {
    std::ostringstream o;
    o.precision(9);
    o << "seed = " << seed << "\n";
    o << "data.source = " << data_source << "\n";
    o << "data.image_size = " << image_size << "\n";
    o << "data.num_classes = " << num_classes << "\n";
    o << "data.train_per_class = " << train_per_class << "\n";
    o << "data.test_per_class = " << test_per_class << "\n";
    o << "aug.policy = " << (augment == AugPolicy::Strong ? "strong" : augment == AugPolicy::Weak ? "weak" : "none") << "\n";
    o << "mask.mode = " << mask.mode << "\n";
    o << "mask.std = " << mask.std << "\n";
    o << "mask.min = " << mask.min << "\n";
    o << "mask.max = " << mask.max << "\n";
    o << "loss.lambda = " << loss.lambda << "\n";
    o << "loss.temperature = " << loss.temperature << "\n";
    o << "loss.contrastive_max_ratio = " << loss.max_ratio << "\n";
    o << "loss.label_smoothing = " << label_smoothing << "\n";
    o << "vq.num_blocks = " << vq.num_blocks << "\n";
    o << "vq.base_channels = " << vq.base_channels << "\n";
    o << "vq.codebook_size = " << vq.codebook_size << "\n";
    o << "vq.codebook_dim = " << vq.codebook_dim << "\n";
    o << "vq.commitment_beta = " << vq.commitment_beta << "\n";
    o << "vq.epochs = " << vq_epochs << "\n";
    o << "vq.batch_size = " << vq_batch << "\n";
    o << "vq.base_lr = " << vq_lr << "\n";
    o << "model.width = " << model.width << "\n";
    o << "model.enc_depth = " << model.enc_depth << "\n";
    o << "model.dec_depth = " << model.dec_depth << "\n";
    o << "model.heads = " << model.heads << "\n";
    o << "model.mlp_ratio = " << model.mlp_ratio << "\n";
    o << "model.dropout = " << model.dropout << "\n";
    o << "model.pad_mode = " << (model.pad_mode == PadMode::ClassToken ? "class_token" : "mask_token") << "\n";
    o << "model.conditional = " << (model.num_classes > 0 ? "true" : "false") << "\n";
    o << "train.epochs = " << epochs << "\n";
    o << "train.batch_size = " << batch << "\n";
    o << "train.base_lr = " << base_lr << "\n";
    o << "train.warmup_frac = " << warmup_frac << "\n";
    o << "train.bypass_quantizer = " << (bypass_quantizer ? "true" : "false") << "\n";
    o << "train.cache_tokens = " << (cache_tokens ? "true" : "false") << "\n";
    o << "train.checkpoint_every = " << checkpoint_every << "\n";
    o << "train.tokenizer_checkpoint = " << tokenizer_checkpoint << "\n";
    o << "gen.steps = " << gen_steps << "\n";
    o << "gen.gumbel_temp = " << gen_gumbel_temp << "\n";
    o << "gen.sample_temp = " << gen_sample_temp << "\n";
    o << "probe.epochs = " << probe_epochs << "\n";
    o << "probe.batch_size = " << probe_batch << "\n";
    o << "probe.lr = " << probe_lr << "\n";
    o << "probe.momentum = " << probe_momentum << "\n";
    o << "probe.weight_decay = " << probe_weight_decay << "\n";
    o << "probe.samples_per_class = " << probe_samples_per_class << "\n";
    o << "probe.layerwise_decay = " << finetune_layer_decay << "\n";
    return o.str();
}

} // namespace mage
