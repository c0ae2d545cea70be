#pragma once

#include <cstdint>
#include <functional>
#include <stdexcept>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "vqd/adversary/losses.hpp"
#include "vqd/codec/codec.hpp"
#include "vqd/numerics/optim.hpp"

namespace vqd {

struct TrainConfig {
    std::size_t steps = 200;
    std::size_t batch_size = 2;
    /// Samples per training crop; 0 uses the codec's mel segment.
    std::size_t segment = 0;
    /// 0 means one pass over the corpus, rounded up.
    std::size_t steps_per_epoch = 0;
    AdamWConfig optim;
    GanLossWeights weights;
    /// Without it (or without a bank) training is mel + commitment regression.
    bool adversarial = true;
    /// Codec parts ("encoder", "decoder", "vq") whose parameters get no updates.
    std::vector<std::string> frozen_parts;
    std::vector<MelScale> mel_scales = desk_mel_scales();
    double max_skip_fraction = 0.01;
    std::uint64_t seed = 0;

    void validate() const;
};

/// 200 steps of 2-clip batches at a learning rate suited to the desk codec.
TrainConfig desk_train_config();

nlohmann::json to_json(const TrainConfig& c);
TrainConfig train_config_from_json(const nlohmann::json& j, TrainConfig base = {},
                                   const std::string& context = "train");

struct StepRecord {
    std::size_t step = 0;  // 1-based
    std::size_t epoch = 0;
    double mel = 0, adv_g = 0, adv_d = 0, fm = 0, commit = 0;
    double ppl = 0, usage = 0, lr = 0;
    bool skipped = false;
};

nlohmann::json to_json(const StepRecord& r);

struct EpochRecord {
    std::size_t epoch = 0;
    std::size_t steps = 0;
    /// Over every frame quantized during the epoch, averaged over codebooks.
    double ppl = 0, usage = 0;
    double lr = 0;
};

nlohmann::json to_json(const EpochRecord& r);

struct TrainResult {
    std::vector<StepRecord> log;
    std::vector<EpochRecord> epochs;
    std::size_t skipped = 0;

    /// Mel distance of the first completed step.
    double first_mel() const;
    /// Mean mel distance over the last `window` completed steps.
    double final_mel(std::size_t window = 10) const;
    double final_usage() const;
    double final_perplexity() const;
};

class TrainingAborted : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

// Counts skipped steps and aborts once they exceed a fraction of the planned run.
class SkipBudget {
public:
    SkipBudget(std::size_t planned_steps, double max_fraction);
    /// Records a skipped step; throws TrainingAborted when over budget.
    void skip(std::size_t step, const std::string& why);
    std::size_t skipped() const { return skipped_; }
    std::size_t allowed() const { return allowed_; }

private:
    std::size_t allowed_ = 0;
    std::size_t skipped_ = 0;
};

using StepCallback = std::function<void(const StepRecord&)>;

/// The LSGAN codec loop: per step a discriminator update on detached
/// reconstructions, then a generator update on mel + adversarial + feature
/// matching + commitment. Codebooks move by EMA during the forward pass.
/// Learning rate decays once per epoch. Non-finite losses or gradients skip
/// the whole step (codebooks and discriminator restored).
TrainResult dlt_train(const std::vector<AudioBuffer>& corpus, CodecModel<float>& codec,
                      DiscriminatorBank<float>* bank, const TrainConfig& cfg, const StepCallback& on_step = {});

/// Unweighted multi-scale mel distance of the codec's reconstruction of each clip, averaged.
double evaluate_mel(CodecModel<float>& codec, const std::vector<AudioBuffer>& clips, const std::vector<MelScale>& scales);

}  // namespace vqd
