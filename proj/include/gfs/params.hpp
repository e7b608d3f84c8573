#pragma once

#include <map>
#include <string>
#include <vector>

#include "gfs/tensor.hpp"

namespace gfs {

// Named parameter arrays with matching gradient arrays. Iteration order is
// the lexicographic name order, which keeps every reduction deterministic.
class ParameterStore {
public:
    struct Entry {
        Tensor value;
        Tensor grad;
    };

    void add(const std::string& name, Tensor init);
    bool has(const std::string& name) const { return entries_.count(name) != 0; }

    Tensor& value(const std::string& name);
    const Tensor& value(const std::string& name) const;
    Tensor& grad(const std::string& name);
    const Tensor& grad(const std::string& name) const;
    Entry& entry(const std::string& name);

    void zero_grads();

    std::vector<std::string> names() const;
    std::size_t total_parameters() const;

    // Gradient entries of all parameters whose name starts with one of the
    // given prefixes (empty list = all), flattened in name order.
    std::vector<double> flat_grads(const std::vector<std::string>& prefixes = {}) const;

    // Ordered accumulation: this->grad += other.grad for every entry.
    void accumulate_grads_from(const ParameterStore& other);

    auto begin() { return entries_.begin(); }
    auto end() { return entries_.end(); }
    auto begin() const { return entries_.begin(); }
    auto end() const { return entries_.end(); }

private:
    std::map<std::string, Entry> entries_;
};

}  // namespace gfs
