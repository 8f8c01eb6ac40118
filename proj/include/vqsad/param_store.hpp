#pragma once

#include <cstdint>
#include <map>
#include <string>
#include <vector>

#include "vqsad/autodiff.hpp"

namespace vqsad {

struct AdamConfig {
    double lr = 1e-3;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double eps = 1e-8;
};

// Named trainable arrays shared by the scheduler nets, denoiser and VQ-VAE.
// Entries are graph leaves; each training step builds a fresh graph on top of
// the same leaves.
class ParamStore {
public:
    ad::Tensor add(const std::string& name, Array init, bool trainable = true);
    ad::Tensor add_uniform(const std::string& name, long rows, long cols, double lo, double hi, Rng& rng,
                           bool trainable = true);
    // Xavier-style init for a [fan_in, fan_out] weight.
    ad::Tensor add_linear(const std::string& name, long fan_in, long fan_out, Rng& rng);

    ad::Tensor at(const std::string& name) const;
    bool contains(const std::string& name) const { return entries_.count(name) > 0; }
    bool trainable(const std::string& name) const;
    void set_trainable(const std::string& name, bool flag);
    void set_trainable_prefix(const std::string& prefix, bool flag);
    bool all_frozen(const std::string& prefix) const;

    void zero_grad();
    void adam_step(const AdamConfig& cfg = {});
    void sgd_step(double lr);

    std::vector<std::string> names() const;
    std::size_t count() const { return entries_.size(); }

    // FNV-1a over the raw value bytes of every entry, in name order.
    std::uint64_t checksum() const;

    // Checkpoint directory: manifest.json with {name, shape, dtype, offset}
    // entries plus params.bin, a little-endian blob of raw doubles.
    void save(const std::string& dir) const;
    // Shapes and names are validated against the entries already defined.
    void load(const std::string& dir);

private:
    struct Entry {
        ad::Tensor tensor;
        bool trainable = true;
        Array m;  // Adam first moment
        Array v;  // Adam second moment
    };
    std::map<std::string, Entry> entries_;  // ordered: deterministic iteration
    std::int64_t adam_t_ = 0;
};

}  // namespace vqsad
