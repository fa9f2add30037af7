#include <cstring>

#include "refgame/error.hpp"
#include "refgame/nn.hpp"

namespace refgame::nn {

uint64_t fnv1a(const void* data, size_t n, uint64_t h) {
    const auto* p = static_cast<const unsigned char*>(data);
    for (size_t i = 0; i < n; ++i) {
        h ^= p[i];
        h *= 0x100000001b3ULL;
    }
    return h;
}

Tensor& ParamStore::add(const std::string& name, const std::string& group, int rows, int cols) {
    require(!params_.count(name), ErrorCode::invalid_argument,
            "parameter '" + name + "' already exists");
    require(rows > 0 && cols > 0, ErrorCode::shape_mismatch,
            "parameter '" + name + "' needs positive shape");
    auto& p = params_[name];
    p.group = group;
    p.value = Tensor::Zero(rows, cols);
    return p.value;
}

Tensor& ParamStore::add_uniform(const std::string& name, const std::string& group, int rows,
                                int cols, double scale, Rng& rng) {
    Tensor& t = add(name, group, rows, cols);
    for (long j = 0; j < t.cols(); ++j)
        for (long i = 0; i < t.rows(); ++i)
            t(i, j) = static_cast<double>(static_cast<float>(rng.uniform(-scale, scale)));
    return t;
}

const Param& ParamStore::param(const std::string& name) const {
    auto it = params_.find(name);
    if (it == params_.end()) fail(ErrorCode::not_found, "unknown parameter '" + name + "'");
    return it->second;
}

const Tensor& ParamStore::value(const std::string& name) const { return param(name).value; }

Tensor& ParamStore::mutable_value(const std::string& name) {
    auto it = params_.find(name);
    if (it == params_.end()) fail(ErrorCode::not_found, "unknown parameter '" + name + "'");
    return it->second.value;
}

std::set<std::string> ParamStore::groups() const {
    std::set<std::string> out;
    for (const auto& [name, p] : params_) out.insert(p.group);
    return out;
}

void ParamStore::copy_group(const ParamStore& from, const std::string& group) {
    bool any = false;
    for (const auto& [name, p] : from.params_) {
        if (p.group != group) continue;
        params_[name] = p;
        any = true;
    }
    require(any, ErrorCode::not_found, "no parameters in group '" + group + "'");
    if (from.group_frozen(group)) frozen_.insert(group);
}

void ParamStore::merge(const ParamStore& from) {
    for (const auto& [name, p] : from.params_) params_[name] = p;
    for (const auto& g : from.frozen_) frozen_.insert(g);
}

namespace {

uint64_t hash_param(const std::string& name, const Param& p, uint64_t h) {
    h = fnv1a(name, h);
    h = fnv1a(p.group, h);
    const uint32_t shape[2] = {static_cast<uint32_t>(p.value.rows()),
                               static_cast<uint32_t>(p.value.cols())};
    h = fnv1a(shape, sizeof(shape), h);
    for (long j = 0; j < p.value.cols(); ++j)
        for (long i = 0; i < p.value.rows(); ++i) {
            const float f = static_cast<float>(p.value(i, j));
            h = fnv1a(&f, sizeof(f), h);
        }
    return h;
}

}  // namespace

uint64_t ParamStore::checksum() const {
    uint64_t h = 0xcbf29ce484222325ULL;
    for (const auto& [name, p] : params_) h = hash_param(name, p, h);
    return h;
}

uint64_t ParamStore::group_checksum(const std::string& group) const {
    uint64_t h = 0xcbf29ce484222325ULL;
    for (const auto& [name, p] : params_)
        if (p.group == group) h = hash_param(name, p, h);
    return h;
}

size_t ParamStore::size() const {
    size_t n = 0;
    for (const auto& [name, p] : params_) n += static_cast<size_t>(p.value.size());
    return n;
}

void ParamStore::round_to_float() {
    for (auto& [name, p] : params_)
        p.value = p.value.cast<float>().cast<double>();
}

}  // namespace refgame::nn
