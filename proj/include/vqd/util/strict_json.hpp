#pragma once

#include <set>
#include <stdexcept>
#include <string>

#include <nlohmann/json.hpp>

namespace vqd {

// Reads optional fields from a JSON object and rejects keys nobody asked for.
class StrictReader {
public:
    StrictReader(const nlohmann::json& j, std::string context) : j_(j), context_(std::move(context)) {
        if (!j_.is_object()) throw std::invalid_argument(where("") + " must be a JSON object");
    }

    template <typename V>
    StrictReader& get(const std::string& key, V& out) {
        known_.insert(key);
        auto it = j_.find(key);
        if (it == j_.end()) return *this;
        try {
            out = it->template get<V>();
        } catch (const nlohmann::json::exception& e) {
            throw std::invalid_argument(where(key) + ": " + e.what());
        }
        return *this;
    }

    /// Hands a nested object to `fn(const json&, context)` when present.
    template <typename Fn>
    StrictReader& section(const std::string& key, Fn&& fn) {
        known_.insert(key);
        auto it = j_.find(key);
        if (it != j_.end()) fn(*it, where(key));
        return *this;
    }

    bool has(const std::string& key) const { return j_.contains(key); }

    void finish() const {
        for (auto it = j_.begin(); it != j_.end(); ++it) {
            if (!known_.count(it.key())) throw std::invalid_argument("unknown config key '" + where(it.key()) + "'");
        }
    }

private:
    std::string where(const std::string& key) const {
        if (context_.empty()) return key;
        return key.empty() ? context_ : context_ + "." + key;
    }

    const nlohmann::json& j_;
    std::string context_;
    std::set<std::string> known_;
};

}  // namespace vqd
