#pragma once

#include <cmath>
#include <cstdint>
#include <map>
#include <random>
#include <string>
#include <utility>
#include <vector>

#include "vqd/numerics/autodiff.hpp"

namespace vqd {

using Rng = std::mt19937_64;

// Named, insertion-ordered set of trainable leaves. Layers keep Var handles to
// entries, so in-place value updates are visible to every holder.
template <typename T>
class ParamSet {
public:
    using Entry = std::pair<std::string, Var<T>>;

    ParamSet() = default;
    ParamSet(const ParamSet&) = delete;
    ParamSet& operator=(const ParamSet&) = delete;
    ParamSet(ParamSet&&) noexcept = default;
    ParamSet& operator=(ParamSet&&) noexcept = default;

    Var<T> add(const std::string& name, Tensor<T> init) {
        if (index_.count(name)) {
            throw std::invalid_argument("duplicate parameter name '" + name + "'");
        }
        index_[name] = entries_.size();
        entries_.emplace_back(name, Var<T>::parameter(std::move(init)));
        return entries_.back().second;
    }

    /// Registers an existing leaf (shared, not copied), e.g. to optimize a subset.
    void link(const std::string& name, const Var<T>& leaf) {
        if (index_.count(name)) {
            throw std::invalid_argument("duplicate parameter name '" + name + "'");
        }
        index_[name] = entries_.size();
        entries_.emplace_back(name, leaf);
    }

    bool contains(const std::string& name) const { return index_.count(name) != 0; }

    const Var<T>& get(const std::string& name) const {
        auto it = index_.find(name);
        if (it == index_.end()) {
            throw std::out_of_range("no parameter named '" + name + "'");
        }
        return entries_[it->second].second;
    }

    Var<T>& get(const std::string& name) {
        return const_cast<Var<T>&>(static_cast<const ParamSet&>(*this).get(name));
    }

    const std::vector<Entry>& entries() const { return entries_; }
    std::vector<Entry>& entries() { return entries_; }
    std::size_t size() const { return entries_.size(); }

    std::size_t scalar_count() const {
        std::size_t n = 0;
        for (const auto& [_, v] : entries_) n += v.size();
        return n;
    }

    void zero_grad() {
        for (auto& [_, v] : entries_) v.zero_grad();
    }

    // Overwrites the value of `name`, keeping the leaf identity.
    void assign(const std::string& name, const Tensor<T>& value) {
        Var<T>& v = get(name);
        if (v.shape() != value.shape()) {
            throw ShapeError("parameter '" + name + "' has shape " + shape_str(v.shape()) + ", got " +
                             shape_str(value.shape()));
        }
        v.mutable_value() = value;
    }

private:
    std::vector<Entry> entries_;
    std::map<std::string, std::size_t> index_;
};

// Uniform Kaiming-style fan-in initialization, U(-1/sqrt(fan_in), 1/sqrt(fan_in)).
template <typename T>
Tensor<T> uniform_fan_in(Shape shape, std::size_t fan_in, Rng& rng) {
    const double bound = 1.0 / std::sqrt(static_cast<double>(fan_in == 0 ? 1 : fan_in));
    std::uniform_real_distribution<double> dist(-bound, bound);
    Tensor<T> t(std::move(shape));
    for (auto& v : t.values()) v = static_cast<T>(dist(rng));
    return t;
}

}  // namespace vqd
