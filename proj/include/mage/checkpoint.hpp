#pragma once

#include <cstdint>
#include <map>
#include <string>
#include <vector>

#include "mage/optim.hpp"
#include "mage/params.hpp"

namespace mage {

// Binary checkpoint: magic "MAGE", u32 version, config snapshot, named f32
// tensor table, optional optimizer moments, named u64 counters (epoch, step,
// RNG seeds). All integers and floats little-endian. Round trip is bit-exact.
struct Checkpoint {
    std::string config_text;
    std::vector<std::pair<std::string, Tensor>> tensors;
    std::map<std::string, uint64_t> counters;
    bool has_optimizer = false;
    int64_t opt_step = 0;
    std::vector<Tensor> opt_m, opt_v; // aligned with tensor order when present

    static Checkpoint from_params(const std::string& config_text, const ParamStore& params,
                                  const AdamW* opt = nullptr);

    // Copies tensor values into an existing ParamStore (names and shapes must
    // match exactly) and, when present, optimizer moments into `opt`.
    void restore_params(ParamStore& params, AdamW* opt = nullptr) const;

    void save(const std::string& path) const;
    static Checkpoint load(const std::string& path); // throws on corrupt/mismatched files
};

} // namespace mage
