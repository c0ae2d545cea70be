#include "vqd/numerics/gradcheck.hpp"

#include <algorithm>
#include <cmath>
#include <iomanip>
#include <sstream>
#include <numeric>
#include <random>

namespace vqd {

GradCheckResult grad_check(const std::function<Var<double>()>& fn,
                           const std::vector<std::pair<std::string, Var<double>>>& leaves,
                           const GradCheckOptions& options) {
    GradCheckResult result;
    for (const auto& [_, leaf] : leaves) {
        Var<double> handle = leaf;
        handle.zero_grad();
    }

    {
        DetachScope<double> record(DetachMode::record);
        Var<double> loss = fn();
        if (!std::isfinite(loss.item())) {
            result.finite = false;
            result.location = "reference evaluation";
            return result;
        }
        backward(loss);
    }

    std::vector<Tensor<double>> analytic;
    for (const auto& [_, leaf] : leaves) {
        analytic.push_back(leaf.grad_tensor());
    }

    DetachScope<double> replay(DetachMode::replay);
    auto eval = [&] {
        DetachScope<double>::rewind();
        return fn().item();
    };

    std::mt19937_64 rng(options.seed);
    const double h = options.epsilon;
    for (std::size_t li = 0; li < leaves.size(); ++li) {
        Var<double> leaf = leaves[li].second;
        auto& values = leaf.mutable_value();
        std::vector<std::size_t> coords(values.size());
        std::iota(coords.begin(), coords.end(), 0);
        if (options.max_coords_per_leaf > 0 && coords.size() > options.max_coords_per_leaf) {
            std::shuffle(coords.begin(), coords.end(), rng);
            coords.resize(options.max_coords_per_leaf);
            std::sort(coords.begin(), coords.end());
        }
        for (std::size_t j : coords) {
            const double x0 = values[j];
            values[j] = x0 + 2 * h;
            const double f2p = eval();
            values[j] = x0 + h;
            const double f1p = eval();
            values[j] = x0 - h;
            const double f1m = eval();
            values[j] = x0 - 2 * h;
            const double f2m = eval();
            values[j] = x0;
            const double numeric = (8 * (f1p - f1m) - (f2p - f2m)) / (12 * h);
            const double a = analytic[li][j];
            ++result.coordinates;
            const std::string where = leaves[li].first + "[" + std::to_string(j) + "]";
            if (!std::isfinite(numeric) || !std::isfinite(a)) {
                result.finite = false;
                result.location = where;
                return result;
            }
            const double denom = std::max({std::abs(a), std::abs(numeric), 1e-8});
            const double err = std::abs(a - numeric) / denom;
            if (err > result.max_rel_error) {
                result.max_rel_error = err;
                std::ostringstream os;
                os << where << " analytic=" << std::setprecision(10) << a << " numeric=" << numeric;
                result.location = os.str();
            }
        }
    }
    return result;
}

GradCheckResult grad_check(const std::function<Var<double>()>& fn, std::vector<Var<double>> leaves,
                           const GradCheckOptions& options) {
    std::vector<std::pair<std::string, Var<double>>> named;
    for (std::size_t i = 0; i < leaves.size(); ++i) {
        named.emplace_back("input" + std::to_string(i), leaves[i]);
    }
    return grad_check(fn, named, options);
}

}  // namespace vqd
