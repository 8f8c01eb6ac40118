#include "vqsad/param_store.hpp"

#include <cmath>
#include <cstring>
#include <filesystem>
#include <fstream>

#include <json.hpp>

#include "vqsad/errors.hpp"

namespace vqsad {

using nlohmann::json;

ad::Tensor ParamStore::add(const std::string& name, Array init, bool trainable) {
    if (entries_.count(name)) throw ContractError("duplicate parameter name: " + name);
    Entry e;
    e.tensor = ad::Tensor::leaf(std::move(init));
    e.trainable = trainable;
    e.m = Array::zeros(e.tensor.value().rows(), e.tensor.value().cols());
    e.v = Array::zeros(e.tensor.value().rows(), e.tensor.value().cols());
    auto [it, ok] = entries_.emplace(name, std::move(e));
    (void)ok;
    return it->second.tensor;
}

ad::Tensor ParamStore::add_uniform(const std::string& name, long rows, long cols, double lo, double hi, Rng& rng,
                                   bool trainable) {
    return add(name, Array::uniform(rows, cols, lo, hi, rng), trainable);
}

ad::Tensor ParamStore::add_linear(const std::string& name, long fan_in, long fan_out, Rng& rng) {
    double s = std::sqrt(6.0 / static_cast<double>(fan_in + fan_out));
    return add_uniform(name, fan_in, fan_out, -s, s, rng);
}

ad::Tensor ParamStore::at(const std::string& name) const {
    auto it = entries_.find(name);
    if (it == entries_.end()) throw ContractError("unknown parameter: " + name);
    return it->second.tensor;
}

bool ParamStore::trainable(const std::string& name) const {
    auto it = entries_.find(name);
    if (it == entries_.end()) throw ContractError("unknown parameter: " + name);
    return it->second.trainable;
}

void ParamStore::set_trainable(const std::string& name, bool flag) {
    auto it = entries_.find(name);
    if (it == entries_.end()) throw ContractError("unknown parameter: " + name);
    it->second.trainable = flag;
}

void ParamStore::set_trainable_prefix(const std::string& prefix, bool flag) {
    for (auto& [name, e] : entries_)
        if (name.rfind(prefix, 0) == 0) e.trainable = flag;
}

bool ParamStore::all_frozen(const std::string& prefix) const {
    bool any = false;
    for (const auto& [name, e] : entries_)
        if (name.rfind(prefix, 0) == 0) {
            any = true;
            if (e.trainable) return false;
        }
    return any;
}

void ParamStore::zero_grad() {
    for (auto& [name, e] : entries_) {
        auto node = e.tensor.node();
        if (node->grad_alloc)
            for (long i = 0; i < node->grad.size(); ++i) node->grad[i] = 0.0;
    }
}

void ParamStore::adam_step(const AdamConfig& cfg) {
    ++adam_t_;
    double bc1 = 1.0 - std::pow(cfg.beta1, static_cast<double>(adam_t_));
    double bc2 = 1.0 - std::pow(cfg.beta2, static_cast<double>(adam_t_));
    for (auto& [name, e] : entries_) {
        auto node = e.tensor.node();
        if (e.trainable && node->grad_alloc) {
            for (long i = 0; i < node->value.size(); ++i) {
                double g = node->grad[i];
                e.m[i] = cfg.beta1 * e.m[i] + (1.0 - cfg.beta1) * g;
                e.v[i] = cfg.beta2 * e.v[i] + (1.0 - cfg.beta2) * g * g;
                double mhat = e.m[i] / bc1;
                double vhat = e.v[i] / bc2;
                node->value[i] -= cfg.lr * mhat / (std::sqrt(vhat) + cfg.eps);
            }
        }
    }
    zero_grad();
}

void ParamStore::sgd_step(double lr) {
    for (auto& [name, e] : entries_) {
        auto node = e.tensor.node();
        if (e.trainable && node->grad_alloc)
            for (long i = 0; i < node->value.size(); ++i) node->value[i] -= lr * node->grad[i];
    }
    zero_grad();
}

std::vector<std::string> ParamStore::names() const {
    std::vector<std::string> out;
    out.reserve(entries_.size());
    for (const auto& [name, e] : entries_) out.push_back(name);
    return out;
}

std::uint64_t ParamStore::checksum() const {
    std::uint64_t h = 1469598103934665603ull;
    auto mix = [&h](const void* p, std::size_t bytes) {
        const unsigned char* b = static_cast<const unsigned char*>(p);
        for (std::size_t i = 0; i < bytes; ++i) {
            h ^= b[i];
            h *= 1099511628211ull;
        }
    };
    for (const auto& [name, e] : entries_) {
        mix(name.data(), name.size());
        const Array& v = e.tensor.value();
        mix(v.data(), static_cast<std::size_t>(v.size()) * sizeof(double));
    }
    return h;
}

void ParamStore::save(const std::string& dir) const {
    namespace fs = std::filesystem;
    fs::create_directories(dir);
    json manifest;
    manifest["format"] = 1;
    manifest["dtype"] = "f64";
    json tensors = json::array();
    std::ofstream blob(fs::path(dir) / "params.bin", std::ios::binary);
    if (!blob) throw DomainError("cannot write checkpoint blob in " + dir);
    std::uint64_t offset = 0;
    for (const auto& [name, e] : entries_) {
        const Array& v = e.tensor.value();
        json t;
        t["name"] = name;
        t["shape"] = {v.rows(), v.cols()};
        t["dtype"] = "f64";
        t["offset"] = offset;
        tensors.push_back(t);
        blob.write(reinterpret_cast<const char*>(v.data()),
                   static_cast<std::streamsize>(v.size() * sizeof(double)));
        offset += static_cast<std::uint64_t>(v.size()) * sizeof(double);
    }
    manifest["tensors"] = tensors;
    std::ofstream mf(fs::path(dir) / "manifest.json");
    mf << manifest.dump(2) << "\n";
}

void ParamStore::load(const std::string& dir) {
    namespace fs = std::filesystem;
    std::ifstream mf(fs::path(dir) / "manifest.json");
    if (!mf) throw DomainError("missing manifest.json in " + dir);
    json manifest = json::parse(mf);
    std::ifstream blob(fs::path(dir) / "params.bin", std::ios::binary);
    if (!blob) throw DomainError("missing params.bin in " + dir);
    std::size_t seen = 0;
    for (const auto& t : manifest.at("tensors")) {
        std::string name = t.at("name").get<std::string>();
        auto it = entries_.find(name);
        if (it == entries_.end()) throw DomainError("checkpoint tensor not in model: " + name);
        long rows = t.at("shape")[0].get<long>();
        long cols = t.at("shape")[1].get<long>();
        Array& v = it->second.tensor.node()->value;
        if (rows != v.rows() || cols != v.cols())
            throw DomainError("shape mismatch for " + name + ": checkpoint [" + std::to_string(rows) + "," +
                              std::to_string(cols) + "] vs model " + v.shape_str());
        blob.seekg(static_cast<std::streamoff>(t.at("offset").get<std::uint64_t>()));
        blob.read(reinterpret_cast<char*>(v.data()), static_cast<std::streamsize>(v.size() * sizeof(double)));
        if (!blob) throw DomainError("truncated checkpoint blob for " + name);
        ++seen;
    }
    if (seen != entries_.size())
        throw DomainError("checkpoint has " + std::to_string(seen) + " tensors, model defines " +
                          std::to_string(entries_.size()));
}

}  // namespace vqsad
