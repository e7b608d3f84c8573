#include "gfs/params.hpp"

#include <stdexcept>

namespace gfs {

void ParameterStore::add(const std::string& name, Tensor init) {
    if (has(name)) throw std::invalid_argument("ParameterStore::add: duplicate name " + name);
    Entry e;
    e.grad = Tensor::zeros(init.shape);
    e.value = std::move(init);
    entries_.emplace(name, std::move(e));
}

Tensor& ParameterStore::value(const std::string& name) { return entry(name).value; }

const Tensor& ParameterStore::value(const std::string& name) const {
    auto it = entries_.find(name);
    if (it == entries_.end()) throw std::invalid_argument("ParameterStore: unknown name " + name);
    return it->second.value;
}

Tensor& ParameterStore::grad(const std::string& name) { return entry(name).grad; }

const Tensor& ParameterStore::grad(const std::string& name) const {
    auto it = entries_.find(name);
    if (it == entries_.end()) throw std::invalid_argument("ParameterStore: unknown name " + name);
    return it->second.grad;
}

ParameterStore::Entry& ParameterStore::entry(const std::string& name) {
    auto it = entries_.find(name);
    if (it == entries_.end()) throw std::invalid_argument("ParameterStore: unknown name " + name);
    return it->second;
}

void ParameterStore::zero_grads() {
    for (auto& [name, e] : entries_) {
        std::fill(e.grad.data.begin(), e.grad.data.end(), 0.0);
    }
}

std::vector<std::string> ParameterStore::names() const {
    std::vector<std::string> out;
    out.reserve(entries_.size());
    for (const auto& [name, e] : entries_) out.push_back(name);
    return out;
}

std::size_t ParameterStore::total_parameters() const {
    std::size_t n = 0;
    for (const auto& [name, e] : entries_) n += e.value.numel();
    return n;
}

std::vector<double> ParameterStore::flat_grads(const std::vector<std::string>& prefixes) const {
    std::vector<double> out;
    for (const auto& [name, e] : entries_) {
        bool take = prefixes.empty();
        for (const auto& p : prefixes) {
            if (name.rfind(p, 0) == 0) {
                take = true;
                break;
            }
        }
        if (take) out.insert(out.end(), e.grad.data.begin(), e.grad.data.end());
    }
    return out;
}

void ParameterStore::accumulate_grads_from(const ParameterStore& other) {
    auto it = entries_.begin();
    auto ot = other.entries_.begin();
    for (; it != entries_.end() && ot != other.entries_.end(); ++it, ++ot) {
        if (it->first != ot->first) {
            throw std::invalid_argument("ParameterStore::accumulate_grads_from: name mismatch");
        }
        auto& dst = it->second.grad.data;
        const auto& src = ot->second.grad.data;
        for (std::size_t i = 0; i < dst.size(); ++i) dst[i] += src[i];
    }
}

}  // namespace gfs
