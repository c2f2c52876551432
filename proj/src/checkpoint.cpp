#include "mage/checkpoint.hpp"

#include <cstring>
#include <fstream>
#include <stdexcept>

namespace mage {

namespace {

constexpr uint32_t kVersion = 1;

void put_u32(std::ostream& o, uint32_t v) {
    uint8_t b[4] = {static_cast<uint8_t>(v), static_cast<uint8_t>(v >> 8), static_cast<uint8_t>(v >> 16),
                    static_cast<uint8_t>(v >> 24)};
    o.write(reinterpret_cast<const char*>(b), 4);
}

void put_u64(std::ostream& o, uint64_t v) {
    put_u32(o, static_cast<uint32_t>(v));
    put_u32(o, static_cast<uint32_t>(v >> 32));
}

void put_f32s(std::ostream& o, const std::vector<float>& v) {
    for (float x : v) {
        uint32_t bits;
        std::memcpy(&bits, &x, 4);
        put_u32(o, bits);
    }
}

void put_str(std::ostream& o, const std::string& s) {
    put_u32(o, static_cast<uint32_t>(s.size()));
    o.write(s.data(), static_cast<std::streamsize>(s.size()));
}

struct Reader {
    std::ifstream in;
    std::string path;

    explicit Reader(const std::string& p) : in(p, std::ios::binary), path(p) {
        if (!in) throw std::runtime_error("checkpoint: cannot open " + p);
    }
    void need(bool ok) const {
        if (!ok) throw std::runtime_error("checkpoint: corrupt or truncated file " + path);
    }
    uint32_t u32() {
        uint8_t b[4];
        in.read(reinterpret_cast<char*>(b), 4);
        need(in.gcount() == 4);
        return static_cast<uint32_t>(b[0]) | (static_cast<uint32_t>(b[1]) << 8) |
               (static_cast<uint32_t>(b[2]) << 16) | (static_cast<uint32_t>(b[3]) << 24);
    }
    uint64_t u64() {
        uint64_t lo = u32();
        return lo | (static_cast<uint64_t>(u32()) << 32);
    }
    std::string str() {
        uint32_t n = u32();
        need(n < (1u << 28));
        std::string s(n, '\0');
        in.read(s.data(), n);
        need(static_cast<uint32_t>(in.gcount()) == n);
        return s;
    }
    std::vector<float> f32s(size_t n) {
        std::vector<float> v(n);
        for (size_t i = 0; i < n; ++i) {
            uint32_t bits = u32();
            std::memcpy(&v[i], &bits, 4);
        }
        return v;
    }
};

void put_tensor(std::ostream& o, const std::string& name, const Tensor& t) {
    put_str(o, name);
    put_u32(o, static_cast<uint32_t>(t.shape.size()));
    for (int d : t.shape) put_u32(o, static_cast<uint32_t>(d));
    put_f32s(o, t.v);
}

std::pair<std::string, Tensor> read_tensor(Reader& r) {
    std::string name = r.str();
    uint32_t nd = r.u32();
    r.need(nd <= 8);
    std::vector<int> shape(nd);
    int64_t numel = 1;
    for (uint32_t i = 0; i < nd; ++i) {
        shape[i] = static_cast<int>(r.u32());
        r.need(shape[i] >= 0 && shape[i] < (1 << 28));
        numel *= shape[i];
    }
    r.need(numel < (1ll << 30));
    Tensor t(shape);
    t.v = r.f32s(static_cast<size_t>(numel));
    return {std::move(name), std::move(t)};
}

} // namespace

Checkpoint Checkpoint::from_params(const std::string& config_text, const ParamStore& params,
                                   const AdamW* opt) {
    Checkpoint ck;
    ck.config_text = config_text;
    for (ag::Param* p : params.all()) ck.tensors.emplace_back(p->name, p->value);
    if (opt) {
        ck.has_optimizer = true;
        ck.opt_step = const_cast<AdamW*>(opt)->step_count();
        ck.opt_m = const_cast<AdamW*>(opt)->moments1();
        ck.opt_v = const_cast<AdamW*>(opt)->moments2();
    }
    return ck;
}

void Checkpoint::restore_params(ParamStore& params, AdamW* opt) const {
    std::vector<ag::Param*> ps = params.all();
    if (ps.size() != tensors.size()) throw std::runtime_error("checkpoint: parameter count mismatch");
    for (size_t i = 0; i < ps.size(); ++i) {
        const auto& [name, t] = tensors[i];
        if (ps[i]->name != name) throw std::runtime_error("checkpoint: parameter name mismatch: " + name);
        if (ps[i]->value.shape != t.shape)
            throw std::runtime_error("checkpoint: shape mismatch for " + name + ": file " +
                                     shape_str(t.shape) + " vs model " + shape_str(ps[i]->value.shape));
        ps[i]->value = t;
    }
    if (opt) {
        if (!has_optimizer) throw std::runtime_error("checkpoint: no optimizer state stored");
        if (opt->moments1().size() != opt_m.size()) throw std::runtime_error("checkpoint: optimizer size mismatch");
        opt->set_step_count(opt_step);
        opt->moments1() = opt_m;
        opt->moments2() = opt_v;
    }
}

void Checkpoint::save(const std::string& path) const {
    std::ofstream o(path, std::ios::binary);
    if (!o) throw std::runtime_error("checkpoint: cannot write " + path);
    o.write("MAGE", 4);
    put_u32(o, kVersion);
    put_str(o, config_text);
    put_u32(o, static_cast<uint32_t>(tensors.size()));
    for (const auto& [name, t] : tensors) put_tensor(o, name, t);
    put_u32(o, has_optimizer ? 1u : 0u);
    if (has_optimizer) {
        put_u64(o, static_cast<uint64_t>(opt_step));
        put_u32(o, static_cast<uint32_t>(opt_m.size()));
        for (size_t i = 0; i < opt_m.size(); ++i) {
            put_tensor(o, "m", opt_m[i]);
            put_tensor(o, "v", opt_v[i]);
        }
    }
    put_u32(o, static_cast<uint32_t>(counters.size()));
    for (const auto& [k, v] : counters) {
        put_str(o, k);
        put_u64(o, v);
    }
    if (!o) throw std::runtime_error("checkpoint: write failed " + path);
}

Checkpoint Checkpoint::load(const std::string& path) {
    Reader r(path);
    char magic[4];
    r.in.read(magic, 4);
    r.need(r.in.gcount() == 4 && std::memcmp(magic, "MAGE", 4) == 0);
    uint32_t version = r.u32();
    if (version != kVersion)
        throw std::runtime_error("checkpoint: unsupported version " + std::to_string(version));
    Checkpoint ck;
    ck.config_text = r.str();
    uint32_t nt = r.u32();
    r.need(nt < (1u << 20));
    for (uint32_t i = 0; i < nt; ++i) ck.tensors.push_back(read_tensor(r));
    ck.has_optimizer = r.u32() != 0;
    if (ck.has_optimizer) {
        ck.opt_step = static_cast<int64_t>(r.u64());
        uint32_t n = r.u32();
        r.need(n < (1u << 20));
        for (uint32_t i = 0; i < n; ++i) {
            ck.opt_m.push_back(read_tensor(r).second);
            ck.opt_v.push_back(read_tensor(r).second);
        }
    }
    uint32_t nc = r.u32();
    r.need(nc < (1u << 16));
    for (uint32_t i = 0; i < nc; ++i) {
        std::string k = r.str();
        ck.counters[k] = r.u64();
    }
    return ck;
}

} // namespace mage
