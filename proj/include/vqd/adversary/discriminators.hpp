#pragma once

#include <cstdint>
#include <map>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "vqd/numerics/layers.hpp"

namespace vqd {

// Period discriminators view audio as [period, length / period] and run a
// strided 2-D conv stack along the time axis of every phase.
struct PeriodDiscSpec {
    std::vector<std::size_t> periods{5, 8, 13, 19, 30};
    std::size_t kernel = 5;
    std::size_t stride = 3;
    std::vector<std::size_t> channels{32, 128, 512, 1024};
};

// Scale discriminators run grouped 1-D convs on audio average-pooled by 1, 2, 4, ...
struct ScaleDiscSpec {
    std::size_t n_scales = 3;
    std::vector<std::size_t> channels{16, 64, 256, 1024, 1024};
    std::size_t kernel = 41;
    std::size_t stride = 4;
};

// STFT discriminators run 2-D convs over log(1 + |STFT|) laid out [frames, bins].
struct StftDiscSpec {
    std::vector<std::size_t> n_ffts{1024, 2048, 512, 256, 128};
    std::vector<std::size_t> hops{256, 512, 128, 64, 32};
    std::vector<std::size_t> windows{1024, 2048, 512, 256, 128};
    std::size_t filters = 32;
};

struct DiscriminatorBankSpec {
    bool use_period = true;
    bool use_scale = true;
    bool use_stft = true;
    PeriodDiscSpec period;
    ScaleDiscSpec scale;
    StftDiscSpec stft;
    std::uint64_t seed = 0;

    void validate() const;
    /// Shortest audio every enabled sub-discriminator accepts.
    std::size_t min_length() const;

    static DiscriminatorBankSpec full();
    /// Same families and periods with narrow channels and STFT sizes divided by 4.
    static DiscriminatorBankSpec desk();
};

nlohmann::json to_json(const DiscriminatorBankSpec& s);
DiscriminatorBankSpec bank_spec_from_json(const nlohmann::json& j, DiscriminatorBankSpec base = {},
                                          const std::string& context = "discriminators");

template <typename T>
struct SubDiscriminatorOutput {
    std::string name;
    Var<T> score;                 // flattened score map
    std::vector<Var<T>> features;  // every intermediate activation, in order
};

template <typename T>
using DiscriminatorOutput = std::vector<SubDiscriminatorOutput<T>>;

template <typename T>
class DiscriminatorBank {
public:
    explicit DiscriminatorBank(const DiscriminatorBankSpec& spec);
    DiscriminatorBank(const DiscriminatorBank&) = delete;
    DiscriminatorBank& operator=(const DiscriminatorBank&) = delete;

    const DiscriminatorBankSpec& spec() const { return spec_; }
    ParamSet<T>& params() { return params_; }
    const ParamSet<T>& params() const { return params_; }
    std::size_t size() const;

    /// Scores and features of every sub-discriminator on audio [length].
    DiscriminatorOutput<T> discriminate(const Var<T>& audio) const;

private:
    SubDiscriminatorOutput<T> run_period(std::size_t i, const Var<T>& audio) const;
    SubDiscriminatorOutput<T> run_scale(std::size_t i, const Var<T>& audio) const;
    SubDiscriminatorOutput<T> run_stft(std::size_t i, const Var<T>& audio) const;
    std::vector<const Layer<T>*> stack(const std::string& prefix) const;

    DiscriminatorBankSpec spec_;
    ParamSet<T> params_;
    std::map<std::string, Layer<T>> layers_;
    std::map<std::string, std::size_t> depth_;
};

/// [length] -> [1, period, ceil(length / period)], reflect-padding the tail.
template <typename T>
Var<T> period_view(const Var<T>& audio, std::size_t period);

}  // namespace vqd
