// Command-line entry point: tokenizer training, masked-transformer training,
// generation, inpainting, representation probes, and generation diagnostics.
//
// Exit codes: 0 success, 2 configuration error, 3 data error, 4 numeric abort.

#include <cmath>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "mage/checkpoint.hpp"
#include "mage/config.hpp"
#include "mage/dataset.hpp"
#include "mage/errors.hpp"
#include "mage/evalkit.hpp"
#include "mage/image_io.hpp"
#include "mage/sampler.hpp"
#include "mage/train.hpp"

namespace fs = std::filesystem;
using namespace mage;

namespace {

struct CommonArgs {
    std::string config_path;
    std::string out_dir = "runs/default";
    std::vector<std::string> overrides; // key=value
    int64_t seed = -1;
};

RunConfig load_config(const CommonArgs& a) {
    std::map<std::string, std::string> kv;
    if (!a.config_path.empty()) {
        std::ifstream in(a.config_path);
        if (!in) throw std::invalid_argument("cannot open config file: " + a.config_path);
        std::string text((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
        kv = parse_config_text(text);
    }
    for (const std::string& ov : a.overrides) {
        size_t eq = ov.find('=');
        if (eq == std::string::npos)
            throw std::invalid_argument("--set expects key=value, got: " + ov);
        std::string key = ov.substr(0, eq);
        std::string val = ov.substr(eq + 1);
        auto trim = [](std::string s) {
            size_t b = s.find_first_not_of(" \t");
            size_t e = s.find_last_not_of(" \t");
            return b == std::string::npos ? std::string() : s.substr(b, e - b + 1);
        };
        kv[trim(key)] = trim(val);
    }
    if (a.seed >= 0) kv["seed"] = std::to_string(a.seed);
    return RunConfig::from_map(kv);
}

void add_common(CLI::App* app, CommonArgs& a) {
    app->add_option("--config", a.config_path, "config file of key = value lines");
    app->add_option("--out-dir", a.out_dir, "output directory");
    app->add_option("--set", a.overrides, "config override key=value (repeatable)");
    app->add_option("--seed", a.seed, "override seed");
}

std::ofstream open_metrics(const std::string& out_dir, const std::string& name) {
    fs::create_directories(out_dir);
    std::ofstream f(fs::path(out_dir) / name);
    if (!f) throw DataError("cannot write metrics log in " + out_dir);
    return f;
}

// Tees metric lines to stdout and a file.
struct TeeBuf : std::streambuf {
    std::streambuf *a, *b;
    TeeBuf(std::streambuf* a_, std::streambuf* b_) : a(a_), b(b_) {}
    int overflow(int c) override {
        if (c == EOF) return !EOF;
        if (a->sputc(static_cast<char>(c)) == EOF) return EOF;
        if (b->sputc(static_cast<char>(c)) == EOF) return EOF;
        return c;
    }
    int sync() override { return a->pubsync() == 0 && b->pubsync() == 0 ? 0 : -1; }
};

std::unique_ptr<VqModel> tokenizer_for(const RunConfig& cfg, const std::string& out_dir) {
    return load_tokenizer_checkpoint(resolve_checkpoint(cfg.tokenizer_checkpoint, out_dir));
}

} // namespace

int main(int argc, char** argv) {
    CLI::App app{"masked generative token modeling toolkit"};
    app.require_subcommand(1);

    CommonArgs args;

    auto* c_tok = app.add_subcommand("train-tokenizer", "train the VQ tokenizer");
    add_common(c_tok, args);

    auto* c_mage = app.add_subcommand("train-mage", "train the masked transformer");
    add_common(c_mage, args);
    std::string resume;
    c_mage->add_option("--resume", resume, "checkpoint to continue from");

    auto* c_gen = app.add_subcommand("generate", "sample images from a trained model");
    add_common(c_gen, args);
    std::string ckpt = "mage.ckpt";
    int count = 8;
    int label = -1;
    c_gen->add_option("--checkpoint", ckpt, "transformer checkpoint");
    c_gen->add_option("--count", count, "number of images");
    c_gen->add_option("--label", label, "class label (conditional models)");
    int gen_steps_ovr = -1;
    double gen_temp_ovr = -1.0;
    c_gen->add_option("--steps", gen_steps_ovr, "decode iterations");
    c_gen->add_option("--temperature", gen_temp_ovr, "confidence noise temperature");

    auto* c_inp = app.add_subcommand("inpaint", "regenerate a masked region of an image");
    add_common(c_inp, args);
    std::string in_image, mask_png, out_image = "inpainted.png";
    c_inp->add_option("--checkpoint", ckpt, "transformer checkpoint");
    c_inp->add_option("--image", in_image, "input PNG")->required();
    c_inp->add_option("--mask-png", mask_png, "PNG whose bright pixels mark the region")->required();
    c_inp->add_option("--out", out_image, "output PNG path");

    auto* c_probe = app.add_subcommand("probe", "linear / few-shot / fine-tune evaluation");
    add_common(c_probe, args);
    bool finetune = false;
    int layer = -1;
    c_probe->add_option("--checkpoint", ckpt, "transformer checkpoint");
    c_probe->add_flag("--finetune", finetune, "unfreeze the encoder");
    c_probe->add_option("--layer", layer, "encoder block to pool (-1 = final output)");

    auto* c_eval = app.add_subcommand("eval-gen", "token-marginal distance of generated samples");
    add_common(c_eval, args);
    c_eval->add_option("--checkpoint", ckpt, "transformer checkpoint");
    c_eval->add_option("--count", count, "number of generated grids");

    CLI11_PARSE(app, argc, argv);

    RunConfig cfg;
    try {
        cfg = load_config(args);
    } catch (const std::exception& e) {
        std::cerr << "config error: " << e.what() << "\n";
        return 2;
    }

    try {
        Dataset data;
        bool needs_data = c_tok->parsed() || c_mage->parsed() || c_probe->parsed() || c_eval->parsed();
        if (needs_data) data = ingest_dataset(cfg);

        if (c_tok->parsed()) {
            std::ofstream mf = open_metrics(args.out_dir, "tokenizer_metrics.log");
            TeeBuf tee(std::cout.rdbuf(), mf.rdbuf());
            std::ostream log(&tee);
            std::string path = train_tokenizer(cfg, data, args.out_dir, log);
            std::cout << "checkpoint=" << path << "\n";
        } else if (c_mage->parsed()) {
            std::ofstream mf = open_metrics(args.out_dir, "mage_metrics.log");
            TeeBuf tee(std::cout.rdbuf(), mf.rdbuf());
            std::ostream log(&tee);
            MageTrainResult r = train_mage(cfg, data, args.out_dir, log, resume);
            std::cout << "checkpoint=" << r.checkpoint_path << "\n";
        } else if (c_gen->parsed()) {
            RunConfig mcfg;
            auto model = load_mage_checkpoint(resolve_checkpoint(ckpt, args.out_dir), &mcfg);
            auto tok = tokenizer_for(mcfg, args.out_dir);
            DecodeSchedule sched;
            sched.steps = gen_steps_ovr > 0 ? gen_steps_ovr : cfg.gen_steps;
            sched.gumbel_temp = gen_temp_ovr >= 0 ? static_cast<float>(gen_temp_ovr) : cfg.gen_gumbel_temp;
            sched.sample_temp = cfg.gen_sample_temp;
            fs::create_directories(args.out_dir);
            RngStream rng = RngStream(cfg.seed).fork("generate");
            int side = tok->config().grid_size();
            for (int i = 0; i < count; ++i) {
                RngStream r = rng.fork(static_cast<uint64_t>(i));
                std::optional<int> lab;
                if (label >= 0) lab = label;
                TokenGrid grid = generate(*model, side, sched, r, lab);
                Tensor img = decode_tokens(grid, *tok);
                std::string path =
                    (fs::path(args.out_dir) / ("gen_" + std::to_string(i) + ".png")).string();
                write_png(path, img, tok->config().image_size, tok->config().image_size);
                std::cout << path << "\n";
            }
        } else if (c_inp->parsed()) {
            RunConfig mcfg;
            auto model = load_mage_checkpoint(resolve_checkpoint(ckpt, args.out_dir), &mcfg);
            auto tok = tokenizer_for(mcfg, args.out_dir);
            int S = tok->config().image_size;
            ImageSize isz;
            Tensor img = read_png(in_image, &isz);
            if (isz.height != S || isz.width != S)
                throw DataError("inpaint: image must be " + std::to_string(S) + "x" +
                                std::to_string(S));
            Tensor m = read_png(mask_png, &isz);
            if (isz.height != S || isz.width != S)
                throw DataError("inpaint: mask must match image size");
            TokenGrid grid = encode_image(img, *tok);
            // A token is regenerated when any pixel of its patch is bright.
            int side = grid.width;
            int patch = S / side;
            std::vector<bool> region(static_cast<size_t>(side * side), false);
            for (int y = 0; y < S; ++y)
                for (int x = 0; x < S; ++x) {
                    float lum = (m.v[static_cast<size_t>((y * S + x) * 3)] +
                                 m.v[static_cast<size_t>((y * S + x) * 3 + 1)] +
                                 m.v[static_cast<size_t>((y * S + x) * 3 + 2)]) /
                                3.0f;
                    if (lum > 0.0f) region[static_cast<size_t>((y / patch) * side + x / patch)] = true;
                }
            DecodeSchedule sched;
            sched.steps = cfg.gen_steps;
            sched.gumbel_temp = cfg.gen_gumbel_temp;
            sched.sample_temp = cfg.gen_sample_temp;
            RngStream rng = RngStream(cfg.seed).fork("inpaint");
            TokenGrid outg = inpaint(grid, region, *model, sched, rng);
            write_png(out_image, decode_tokens(outg, *tok), S, S);
            std::cout << out_image << "\n";
        } else if (c_probe->parsed()) {
            RunConfig mcfg;
            auto model = load_mage_checkpoint(resolve_checkpoint(ckpt, args.out_dir), &mcfg);
            auto tok = tokenizer_for(mcfg, args.out_dir);
            ProbeConfig pc;
            pc.epochs = cfg.probe_epochs;
            pc.batch = cfg.probe_batch;
            pc.lr = cfg.probe_lr;
            pc.momentum = cfg.probe_momentum;
            pc.weight_decay = cfg.probe_weight_decay;
            pc.samples_per_class = cfg.probe_samples_per_class;
            pc.layerwise_decay = cfg.finetune_layer_decay;
            pc.seed = cfg.seed;
            pc.freeze_encoder = !finetune;
            float acc;
            if (finetune) {
                acc = fine_tune(data, *tok, *model, data.num_classes, pc);
            } else {
                FeatureSet ftr = pooled_features(data.train, *tok, *model, layer, mcfg.bypass_quantizer);
                FeatureSet fte = pooled_features(data.test, *tok, *model, layer, mcfg.bypass_quantizer);
                if (pc.samples_per_class > 0) {
                    RngStream rng = RngStream(cfg.seed).fork("few-shot");
                    acc = few_shot_probe(ftr, fte, pc.samples_per_class, pc, rng);
                } else {
                    acc = linear_probe(ftr, fte, pc);
                }
            }
            fs::create_directories(args.out_dir);
            std::ofstream csv(fs::path(args.out_dir) / "probe_curve.csv");
            csv << "epoch,test_acc\n";
            const auto& curve = last_probe_curve();
            for (size_t i = 0; i < curve.size(); ++i) csv << i << "," << curve[i] << "\n";
            std::cout << (finetune ? "finetune_acc=" : "probe_acc=") << acc << "\n";
        } else if (c_eval->parsed()) {
            RunConfig mcfg;
            auto model = load_mage_checkpoint(resolve_checkpoint(ckpt, args.out_dir), &mcfg);
            auto tok = tokenizer_for(mcfg, args.out_dir);
            DecodeSchedule sched;
            sched.steps = cfg.gen_steps;
            sched.gumbel_temp = cfg.gen_gumbel_temp;
            sched.sample_temp = cfg.gen_sample_temp;
            RngStream rng = RngStream(cfg.seed).fork("eval-gen");
            int side = tok->config().grid_size();
            std::vector<TokenGrid> gen, ref;
            for (int i = 0; i < count; ++i) {
                RngStream r = rng.fork(static_cast<uint64_t>(i));
                gen.push_back(generate(*model, side, sched, r));
            }
            for (const auto& li : data.test) ref.push_back(encode_image(li.image, *tok));
            double tv = token_marginal_tv(gen, ref, tok->config().codebook_size);
            std::cout << "gen_tv=" << tv << "\n";
        }
    } catch (const ConfigError& e) {
        std::cerr << "config error: " << e.what() << "\n";
        return 2;
    } catch (const std::invalid_argument& e) {
        std::cerr << "config error: " << e.what() << "\n";
        return 2;
    } catch (const DataError& e) {
        std::cerr << "data error: " << e.what() << "\n";
        return 3;
    } catch (const NumericError& e) {
        std::cerr << "numeric abort: " << e.what() << "\n";
        return 4;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 1;
    }
    return 0;
}
