#include "vqd/adversary/train.hpp"

#include <algorithm>
#include <cmath>

#include "vqd/util/strict_json.hpp"

namespace vqd {

using nlohmann::json;

void TrainConfig::validate() const {
    auto fail = [](const std::string& m) { throw std::invalid_argument("train config: " + m); };
    if (steps < 1) fail("steps must be >= 1");
    if (batch_size < 1) fail("batch_size must be >= 1");
    if (!(optim.lr > 0.0) || !(optim.lr_decay > 0.0)) fail("lr and lr_decay must be positive");
    if (!(max_skip_fraction >= 0.0)) fail("max_skip_fraction must be >= 0");
    if (mel_scales.empty()) fail("mel_scales must be nonempty");
    for (const auto& p : frozen_parts) {
        if (p != "encoder" && p != "decoder" && p != "vq") fail("unknown frozen part '" + p + "'");
    }
    weights.validate();
}

json to_json(const TrainConfig& c) {
    json scales = json::array();
    for (const auto& s : c.mel_scales) scales.push_back({{"window", s.window}, {"hop", s.hop}});
    return json{{"steps", c.steps},
                {"batch_size", c.batch_size},
                {"segment", c.segment},
                {"steps_per_epoch", c.steps_per_epoch},
                {"lr", c.optim.lr},
                {"beta1", c.optim.beta1},
                {"beta2", c.optim.beta2},
                {"weight_decay", c.optim.weight_decay},
                {"eps", c.optim.eps},
                {"lr_decay", c.optim.lr_decay},
                {"lambda_mel", c.weights.mel},
                {"lambda_fm", c.weights.fm},
                {"lambda_adv", c.weights.adv},
                {"adversarial", c.adversarial},
                {"frozen_parts", c.frozen_parts},
                {"mel_scales", scales},
                {"max_skip_fraction", c.max_skip_fraction},
                {"seed", c.seed}};
}

TrainConfig desk_train_config() {
    TrainConfig c;
    c.steps = 200;
    c.batch_size = 2;
    c.optim.lr = 2e-3;
    return c;
}

TrainConfig train_config_from_json(const json& j, TrainConfig c, const std::string& context) {
    StrictReader r(j, context);
    r.get("steps", c.steps).get("batch_size", c.batch_size).get("segment", c.segment);
    r.get("steps_per_epoch", c.steps_per_epoch).get("lr", c.optim.lr).get("beta1", c.optim.beta1);
    r.get("beta2", c.optim.beta2).get("weight_decay", c.optim.weight_decay).get("eps", c.optim.eps);
    r.get("lr_decay", c.optim.lr_decay).get("lambda_mel", c.weights.mel).get("lambda_fm", c.weights.fm);
    r.get("lambda_adv", c.weights.adv).get("adversarial", c.adversarial).get("frozen_parts", c.frozen_parts);
    r.get("max_skip_fraction", c.max_skip_fraction).get("seed", c.seed);
    r.section("mel_scales", [&](const json& a, const std::string& ctx) {
        if (!a.is_array()) throw std::invalid_argument(ctx + " must be an array");
        c.mel_scales.clear();
        for (std::size_t i = 0; i < a.size(); ++i) {
            MelScale s;
            StrictReader sr(a[i], ctx + "[" + std::to_string(i) + "]");
            sr.get("window", s.window).get("hop", s.hop).finish();
            c.mel_scales.push_back(s);
        }
    });
    r.finish();
    return c;
}

json to_json(const StepRecord& r) {
    return json{{"step", r.step}, {"epoch", r.epoch},   {"mel", r.mel}, {"adv_g", r.adv_g},
                {"adv_d", r.adv_d}, {"fm", r.fm},       {"commit", r.commit}, {"ppl", r.ppl},
                {"usage", r.usage}, {"lr", r.lr},       {"skipped", r.skipped}};
}

json to_json(const EpochRecord& r) {
    return json{{"epoch", r.epoch}, {"steps", r.steps}, {"ppl", r.ppl}, {"usage", r.usage}, {"lr", r.lr}};
}

double TrainResult::first_mel() const {
    for (const auto& r : log) {
        if (!r.skipped) return r.mel;
    }
    throw std::logic_error("no completed training steps");
}

double TrainResult::final_mel(std::size_t window) const {
    double acc = 0;
    std::size_t n = 0;
    for (auto it = log.rbegin(); it != log.rend() && n < window; ++it) {
        if (it->skipped) continue;
        acc += it->mel;
        ++n;
    }
    if (n == 0) throw std::logic_error("no completed training steps");
    return acc / static_cast<double>(n);
}

double TrainResult::final_usage() const {
    if (epochs.empty()) throw std::logic_error("no epochs recorded");
    return epochs.back().usage;
}

double TrainResult::final_perplexity() const {
    if (epochs.empty()) throw std::logic_error("no epochs recorded");
    return epochs.back().ppl;
}

SkipBudget::SkipBudget(std::size_t planned_steps, double max_fraction)
    : allowed_(static_cast<std::size_t>(std::floor(max_fraction * static_cast<double>(planned_steps)))) {}

void SkipBudget::skip(std::size_t step, const std::string& why) {
    ++skipped_;
    if (skipped_ > allowed_) {
        throw TrainingAborted("training aborted at step " + std::to_string(step) + ": " + std::to_string(skipped_) +
                              " skipped steps exceed the allowed " + std::to_string(allowed_) + " (last: " + why +
                              ")");
    }
}

namespace {

template <typename T>
std::vector<Tensor<T>> snapshot(const ParamSet<T>& p) {
    std::vector<Tensor<T>> out;
    out.reserve(p.size());
    for (const auto& [_, v] : p.entries()) out.push_back(v.value());
    return out;
}

template <typename T>
void restore(ParamSet<T>& p, const std::vector<Tensor<T>>& s) {
    for (std::size_t i = 0; i < s.size(); ++i) p.entries()[i].second.mutable_value() = s[i];
}

template <typename T>
void require_unchanged(const ParamSet<T>& p, const std::vector<Tensor<T>>& s, const char* what) {
    for (std::size_t i = 0; i < s.size(); ++i) {
        if (!p.entries()[i].second.value().bitwise_equal(s[i])) {
            throw std::logic_error(std::string(what) + " changed parameter '" + p.entries()[i].first + "'");
        }
    }
}

bool finite(double v) { return std::isfinite(v); }

Var<float> clip_var(const AudioBuffer& a, std::size_t offset, std::size_t len) {
    Tensor<float> t(Shape{len});
    std::copy(a.samples.begin() + static_cast<std::ptrdiff_t>(offset),
              a.samples.begin() + static_cast<std::ptrdiff_t>(offset + len), t.data());
    return Var<float>::constant(std::move(t));
}

Rng stream(std::uint64_t seed, std::uint32_t id) {
    std::seed_seq seq{static_cast<std::uint32_t>(seed), static_cast<std::uint32_t>(seed >> 32), id};
    return Rng(seq);
}

}  // namespace

TrainResult dlt_train(const std::vector<AudioBuffer>& corpus, CodecModel<float>& codec,
                      DiscriminatorBank<float>* bank, const TrainConfig& cfg, const StepCallback& on_step) {
    cfg.validate();
    if (corpus.empty()) throw std::invalid_argument("dlt_train: corpus is empty");
    const MelConfig& mel = codec.spec().mel;
    const std::size_t segment = cfg.segment > 0 ? cfg.segment : mel.segment;
    const bool adversarial = cfg.adversarial && bank != nullptr && bank->size() > 0;
    for (const auto& a : corpus) {
        a.validate();
        if (a.sample_rate != mel.sample_rate) {
            throw std::invalid_argument("dlt_train: clip sample rate " + std::to_string(a.sample_rate) +
                                        " does not match codec rate " + std::to_string(mel.sample_rate));
        }
        if (adversarial && std::min(segment, a.size()) < bank->spec().min_length()) {
            throw std::invalid_argument("dlt_train: clips must hold at least " +
                                        std::to_string(bank->spec().min_length()) + " samples for the discriminators");
        }
    }
    const std::size_t per_epoch =
        cfg.steps_per_epoch > 0 ? cfg.steps_per_epoch : (corpus.size() + cfg.batch_size - 1) / cfg.batch_size;

    ParamSet<float> trainable;
    for (const auto& [name, v] : codec.params().entries()) {
        const bool frozen = std::any_of(cfg.frozen_parts.begin(), cfg.frozen_parts.end(), [&](const std::string& p) {
            return name.compare(0, p.size() + 1, p + "/") == 0;
        });
        if (!frozen) trainable.link(name, v);
    }

    Rng data_rng = stream(cfg.seed, 1), model_rng = stream(cfg.seed, 2);
    AdamWState<float> g_state, d_state;
    SkipBudget budget(cfg.steps, cfg.max_skip_fraction);
    TrainResult result;
    std::vector<std::size_t> order(corpus.size());
    std::vector<Histogram> epoch_hist;
    EpochRecord epoch_rec;
    double lr = cfg.optim.lr;
    const double inv_b = 1.0 / static_cast<double>(cfg.batch_size);

    for (std::size_t step = 1; step <= cfg.steps; ++step) {
        const std::size_t epoch = (step - 1) / per_epoch, in_epoch = (step - 1) % per_epoch;
        if (in_epoch == 0) {
            std::iota(order.begin(), order.end(), std::size_t{0});
            for (std::size_t i = order.size(); i > 1; --i) {
                std::swap(order[i - 1], order[std::uniform_int_distribution<std::size_t>(0, i - 1)(data_rng)]);
            }
        }
        std::vector<Var<float>> clips;
        for (std::size_t b = 0; b < cfg.batch_size; ++b) {
            const AudioBuffer& a = corpus[order[(in_epoch * cfg.batch_size + b) % order.size()]];
            const std::size_t len = std::min(segment, a.size());
            const std::size_t off = std::uniform_int_distribution<std::size_t>(0, a.size() - len)(data_rng);
            clips.push_back(clip_var(a, off, len));
        }

        StepRecord rec;
        rec.step = step;
        rec.epoch = epoch;
        rec.lr = lr;
        const auto codebooks_before = codec.quantizer().codebooks();
        const auto g_before = snapshot(codec.params());
        auto skip = [&](const std::string& why) {
            codec.quantizer().codebooks() = codebooks_before;
            restore(codec.params(), g_before);
            rec.skipped = true;
            result.log.push_back(rec);
            if (on_step) on_step(rec);
            budget.skip(step, why);
        };

        [&] {
            auto recon = codec.reconstruct(clips, true, &model_rng);

            // discriminator update on detached reconstructions
            std::vector<Tensor<float>> d_before;
            AdamWState<float> d_state_before;
            if (adversarial) {
                d_before = snapshot(bank->params());
                d_state_before = d_state;
                Var<float> d_loss;
                for (std::size_t b = 0; b < clips.size(); ++b) {
                    Var<float> l = discriminator_loss(*bank, clips[b], recon.audio[b]);
                    d_loss = d_loss.valid() ? add(d_loss, l) : l;
                }
                d_loss = scale(d_loss, static_cast<float>(inv_b));
                rec.adv_d = d_loss.item();
                if (!finite(rec.adv_d)) {
                    skip("non-finite discriminator loss");
                    return;
                }
                bank->params().zero_grad();
                backward(d_loss);
                if (!adamw_step(bank->params(), d_state, cfg.optim, lr)) {
                    skip("non-finite discriminator gradient");
                    return;
                }
                require_unchanged(codec.params(), g_before, "discriminator update");
            }

            // generator update
            Var<float> g_loss;
            double mel_sum = 0, adv_sum = 0, fm_sum = 0;
            for (std::size_t b = 0; b < clips.size(); ++b) {
                auto parts = generator_total_loss<float>(clips[b], recon.audio[b], adversarial ? bank : nullptr,
                                                         cfg.weights, Var<float>(), mel, cfg.mel_scales);
                mel_sum += parts.mel.item();
                adv_sum += parts.adv.item();
                fm_sum += parts.fm.item();
                g_loss = g_loss.valid() ? add(g_loss, parts.total) : parts.total;
            }
            g_loss = add(scale(g_loss, static_cast<float>(inv_b)), recon.quant.commitment_loss);
            rec.mel = mel_sum * inv_b;
            rec.adv_g = adv_sum * inv_b;
            rec.fm = fm_sum * inv_b;
            rec.commit = recon.quant.commitment_loss.item();
            rec.ppl = mean_perplexity(recon.quant.histograms);
            rec.usage = mean_usage(recon.quant.histograms);
            auto undo_d = [&] {
                if (!adversarial) return;
                restore(bank->params(), d_before);
                d_state = d_state_before;
            };
            if (!finite(g_loss.item())) {
                undo_d();
                skip("non-finite generator loss");
                return;
            }
            const auto d_after = adversarial ? snapshot(bank->params()) : std::vector<Tensor<float>>{};
            codec.params().zero_grad();
            backward(g_loss);
            if (!adamw_step(trainable, g_state, cfg.optim, lr)) {
                undo_d();
                skip("non-finite generator gradient");
                return;
            }
            if (adversarial) require_unchanged(bank->params(), d_after, "generator update");

            if (epoch_hist.empty()) {
                epoch_hist = recon.quant.histograms;
            } else {
                accumulate(epoch_hist, recon.quant.histograms);
            }
            ++epoch_rec.steps;
            result.log.push_back(rec);
            if (on_step) on_step(rec);
        }();

        if (in_epoch + 1 == per_epoch || step == cfg.steps) {
            epoch_rec.epoch = epoch;
            epoch_rec.lr = lr;
            if (!epoch_hist.empty()) {
                epoch_rec.ppl = mean_perplexity(epoch_hist);
                epoch_rec.usage = mean_usage(epoch_hist);
            }
            result.epochs.push_back(epoch_rec);
            epoch_rec = EpochRecord{};
            epoch_hist.clear();
            if (in_epoch + 1 == per_epoch) lr *= cfg.optim.lr_decay;
        }
    }
    result.skipped = budget.skipped();
    return result;
}

double evaluate_mel(CodecModel<float>& codec, const std::vector<AudioBuffer>& clips,
                    const std::vector<MelScale>& scales) {
    if (clips.empty()) throw std::invalid_argument("evaluate_mel: no clips");
    double acc = 0;
    for (const auto& a : clips) {
        Var<float> x = clip_var(a, 0, a.size());
        auto r = codec.reconstruct({x}, false);
        acc += multi_scale_mel_loss(x, r.audio[0], codec.spec().mel, scales).item();
    }
    return acc / static_cast<double>(clips.size());
}

}  // namespace vqd
