#include "mage/errors.hpp"
#include "mage/dataset.hpp"

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <stdexcept>

#include "mage/image_io.hpp"

namespace mage {

namespace {

struct Rgb {
    float r, g, b;
};

// Muted backgrounds and vivid foregrounds; jittered per image so the color is
// uninformative about the class.
constexpr Rgb kBackgrounds[] = {
    {0.15f, 0.15f, 0.18f}, {0.85f, 0.82f, 0.78f}, {0.25f, 0.35f, 0.30f}, {0.70f, 0.65f, 0.75f},
    {0.40f, 0.30f, 0.25f}, {0.20f, 0.28f, 0.40f}, {0.60f, 0.60f, 0.55f}, {0.32f, 0.22f, 0.35f},
};
constexpr Rgb kForegrounds[] = {
    {0.95f, 0.20f, 0.20f}, {0.20f, 0.85f, 0.25f}, {0.20f, 0.35f, 0.95f}, {0.95f, 0.85f, 0.15f},
    {0.90f, 0.25f, 0.85f}, {0.15f, 0.85f, 0.85f}, {0.95f, 0.55f, 0.15f}, {0.80f, 0.90f, 0.80f},
};

// Signed "inside" test per shape, in shape-local coords (dx, dy in units of
// the shape radius). Returns true if the point is covered.
bool shape_covers(int shape, float dx, float dy) {
    float ax = std::fabs(dx), ay = std::fabs(dy);
    switch (shape) {
        case 0: return dx * dx + dy * dy <= 1.0f;                        // disc
        case 1: {                                                        // ring
            float r2 = dx * dx + dy * dy;
            return r2 <= 1.0f && r2 >= 0.45f;
        }
        case 2: return ax <= 0.85f && ay <= 0.85f;                       // square
        case 3: return ax <= 0.9f && ay <= 0.9f && (ax >= 0.5f || ay >= 0.5f); // square outline
        case 4: return dy >= -0.85f && dy <= 0.9f && ax <= (dy + 0.85f) * 0.55f; // triangle
        case 5: return (ax <= 0.3f && ay <= 0.95f) || (ay <= 0.3f && ax <= 0.95f); // plus
        case 6: return std::fabs(ax - ay) <= 0.35f && ax <= 0.95f && ay <= 0.95f;  // X
        case 7: return ax + ay <= 1.0f;                                  // diamond
        case 8: return ay <= 0.35f && ax <= 0.95f;                       // horizontal bar
        case 9: return ax <= 0.35f && ay <= 0.95f;                       // vertical bar
        default: throw std::logic_error("unknown shape");
    }
}

LabeledImage render_shape(int shape, int size, RngStream& rng) {
    Rgb bg = kBackgrounds[rng.below(8)];
    Rgb fg = kForegrounds[rng.below(8)];
    auto jitter = [&](Rgb c) {
        float j = 0.06f;
        return Rgb{std::clamp(c.r + j * (rng.uniform() - 0.5f), 0.0f, 1.0f),
                   std::clamp(c.g + j * (rng.uniform() - 0.5f), 0.0f, 1.0f),
                   std::clamp(c.b + j * (rng.uniform() - 0.5f), 0.0f, 1.0f)};
    };
    bg = jitter(bg);
    fg = jitter(fg);
    float cx = (0.35f + 0.3f * rng.uniform()) * static_cast<float>(size);
    float cy = (0.35f + 0.3f * rng.uniform()) * static_cast<float>(size);
    float radius = (0.18f + 0.14f * rng.uniform()) * static_cast<float>(size);

    LabeledImage out;
    out.label = shape;
    out.image = Tensor({size * size, 3});
    for (int y = 0; y < size; ++y)
        for (int x = 0; x < size; ++x) {
            // 2x2 supersampling for soft edges
            int hits = 0;
            for (int sy = 0; sy < 2; ++sy)
                for (int sx = 0; sx < 2; ++sx) {
                    float px = static_cast<float>(x) + 0.25f + 0.5f * static_cast<float>(sx);
                    float py = static_cast<float>(y) + 0.25f + 0.5f * static_cast<float>(sy);
                    if (shape_covers(shape, (px - cx) / radius, (py - cy) / radius)) ++hits;
                }
            float cov = static_cast<float>(hits) / 4.0f;
            float* px = &out.image.v[static_cast<size_t>(y * size + x) * 3];
            px[0] = (bg.r + cov * (fg.r - bg.r)) * 2.0f - 1.0f;
            px[1] = (bg.g + cov * (fg.g - bg.g)) * 2.0f - 1.0f;
            px[2] = (bg.b + cov * (fg.b - bg.b)) * 2.0f - 1.0f;
        }
    return out;
}

} // namespace

Dataset synthetic_corpus(uint64_t seed, int train_per_class, int test_per_class, int image_size,
                         int num_classes) {
    if (num_classes < 2 || num_classes > 10) throw std::invalid_argument("synthetic_corpus: 2..10 classes");
    Dataset ds;
    ds.image_size = image_size;
    ds.num_classes = num_classes;
    RngStream base(seed);
    for (int c = 0; c < num_classes; ++c) {
        RngStream train_rng = base.fork("synthetic-train").fork(static_cast<uint64_t>(c));
        for (int i = 0; i < train_per_class; ++i) ds.train.push_back(render_shape(c, image_size, train_rng));
        RngStream test_rng = base.fork("synthetic-test").fork(static_cast<uint64_t>(c));
        for (int i = 0; i < test_per_class; ++i) ds.test.push_back(render_shape(c, image_size, test_rng));
    }
    return ds;
}

Dataset load_png_dir(const std::string& path, int image_size) {
    namespace fs = std::filesystem;
    if (!fs::is_directory(path)) throw DataError("dataset: not a directory: " + path);
    std::vector<std::string> classes;
    for (const auto& e : fs::directory_iterator(path))
        if (e.is_directory()) classes.push_back(e.path().filename().string());
    std::sort(classes.begin(), classes.end());
    if (classes.size() < 2) throw DataError("dataset: need >= 2 class subfolders in " + path);

    Dataset ds;
    ds.image_size = image_size;
    ds.num_classes = static_cast<int>(classes.size());
    for (size_t c = 0; c < classes.size(); ++c) {
        std::vector<std::string> files;
        for (const auto& e : fs::directory_iterator(fs::path(path) / classes[c]))
            if (e.path().extension() == ".png") files.push_back(e.path().string());
        std::sort(files.begin(), files.end());
        if (files.empty()) throw DataError("dataset: empty class folder " + classes[c]);
        size_t split = (files.size() * 4 + 4) / 5; // 80% train, at least 1 test when possible
        split = std::min(split, files.size() - (files.size() > 1 ? 1 : 0));
        for (size_t i = 0; i < files.size(); ++i) {
            ImageSize sz;
            Tensor img = read_png(files[i], &sz);
            if (sz.height != image_size || sz.width != image_size) {
                img = bilinear_crop_resize(img, sz.width, 0.0f, 0.0f, static_cast<float>(sz.height),
                                           static_cast<float>(sz.width), image_size);
                if (sz.height != sz.width)
                    throw DataError("dataset: non-square image " + files[i]);
            }
            LabeledImage li{std::move(img), static_cast<int>(c)};
            (i < split ? ds.train : ds.test).push_back(std::move(li));
        }
    }
    return ds;
}

Dataset ingest_dataset(const RunConfig& cfg) {
    if (cfg.data_source == "synthetic")
        return synthetic_corpus(cfg.seed, cfg.train_per_class, cfg.test_per_class, cfg.image_size,
                                cfg.num_classes);
    return load_png_dir(cfg.data_source, cfg.image_size);
}

Tensor bilinear_crop_resize(const Tensor& image, int src_size, float y0, float x0, float crop_h,
                            float crop_w, int out_size) {
    Tensor out({out_size * out_size, 3});
    for (int oy = 0; oy < out_size; ++oy)
        for (int ox = 0; ox < out_size; ++ox) {
            float sy = y0 + (static_cast<float>(oy) + 0.5f) * crop_h / static_cast<float>(out_size) - 0.5f;
            float sx = x0 + (static_cast<float>(ox) + 0.5f) * crop_w / static_cast<float>(out_size) - 0.5f;
            int iy = static_cast<int>(std::floor(sy));
            int ix = static_cast<int>(std::floor(sx));
            float fy = sy - static_cast<float>(iy);
            float fx = sx - static_cast<float>(ix);
            auto px = [&](int y, int x, int c) {
                y = std::clamp(y, 0, src_size - 1);
                x = std::clamp(x, 0, src_size - 1);
                return image.v[static_cast<size_t>(y * src_size + x) * 3 + c];
            };
            for (int c = 0; c < 3; ++c) {
                float top = px(iy, ix, c) * (1.0f - fx) + px(iy, ix + 1, c) * fx;
                float bot = px(iy + 1, ix, c) * (1.0f - fx) + px(iy + 1, ix + 1, c) * fx;
                out.v[static_cast<size_t>(oy * out_size + ox) * 3 + c] = top * (1.0f - fy) + bot * fy;
            }
        }
    return out;
}

Tensor augment(const Tensor& image, int size, AugPolicy policy, RngStream& rng) {
    if (policy == AugPolicy::None) return image;
    float scale_lo = policy == AugPolicy::Strong ? 0.2f : 0.8f;
    float area = static_cast<float>(size * size);
    float crop_h = 0.0f, crop_w = 0.0f;
    for (int attempt = 0; attempt < 10; ++attempt) {
        float target_area = area * (scale_lo + (1.0f - scale_lo) * rng.uniform());
        float log_ratio = std::log(0.75f) + (std::log(4.0f / 3.0f) - std::log(0.75f)) * rng.uniform();
        float ratio = std::exp(log_ratio);
        crop_w = std::sqrt(target_area * ratio);
        crop_h = std::sqrt(target_area / ratio);
        if (crop_w <= static_cast<float>(size) && crop_h <= static_cast<float>(size)) break;
        crop_h = crop_w = 0.0f;
    }
    if (crop_h == 0.0f) crop_h = crop_w = static_cast<float>(size); // fallback: full frame
    float y0 = (static_cast<float>(size) - crop_h) * rng.uniform();
    float x0 = (static_cast<float>(size) - crop_w) * rng.uniform();
    Tensor out = bilinear_crop_resize(image, size, y0, x0, crop_h, crop_w, size);
    if (rng.uniform() < 0.5f) {
        for (int y = 0; y < size; ++y)
            for (int x = 0; x < size / 2; ++x)
                for (int c = 0; c < 3; ++c)
                    std::swap(out.v[static_cast<size_t>(y * size + x) * 3 + c],
                              out.v[static_cast<size_t>(y * size + size - 1 - x) * 3 + c]);
    }
    return out;
}

} // namespace mage
