#include "vqd/adversary/losses.hpp"

#include <stdexcept>

namespace vqd {

void GanLossWeights::validate() const {
    if (!(mel >= 0.0 && fm >= 0.0 && adv >= 0.0)) throw std::invalid_argument("loss weights must be >= 0");
}

namespace {

template <typename T>
Var<T> filled(const Var<T>& like, T v) {
    return Var<T>::constant(Tensor<T>(like.shape(), v));
}

template <typename T>
Var<T> accumulate(const Var<T>& acc, const Var<T>& term) {
    return acc.valid() ? add(acc, term) : term;
}

template <typename T>
Var<T> zero() {
    return Var<T>::constant(Tensor<T>::scalar(T(0)));
}

}  // namespace

template <typename T>
Var<T> lsgan_d_loss(const DiscriminatorOutput<T>& real, const DiscriminatorOutput<T>& fake) {
    if (real.size() != fake.size()) throw std::invalid_argument("lsgan_d_loss: outputs from different banks");
    Var<T> loss;
    for (std::size_t k = 0; k < real.size(); ++k) {
        loss = accumulate(loss, mse_mean(real[k].score, filled(real[k].score, T(1))));
        loss = accumulate(loss, mse_mean(fake[k].score, filled(fake[k].score, T(0))));
    }
    return loss.valid() ? loss : zero<T>();
}

template <typename T>
Var<T> lsgan_g_loss(const DiscriminatorOutput<T>& fake) {
    Var<T> loss;
    for (const auto& sub : fake) loss = accumulate(loss, mse_mean(sub.score, filled(sub.score, T(1))));
    return loss.valid() ? loss : zero<T>();
}

template <typename T>
Var<T> feature_matching_loss(const DiscriminatorOutput<T>& real, const DiscriminatorOutput<T>& fake) {
    if (real.size() != fake.size()) {
        throw std::invalid_argument("feature matching: " + std::to_string(real.size()) + " real vs " +
                                    std::to_string(fake.size()) + " fake sub-discriminators");
    }
    Var<T> loss;
    std::size_t layers = 0;
    for (std::size_t k = 0; k < real.size(); ++k) {
        if (real[k].features.size() != fake[k].features.size()) {
            throw std::invalid_argument("feature matching: feature list length mismatch in '" + real[k].name + "'");
        }
        for (std::size_t l = 0; l < real[k].features.size(); ++l) {
            if (real[k].features[l].shape() != fake[k].features[l].shape()) {
                throw ShapeError("feature matching: '" + real[k].name + "' layer " + std::to_string(l) + " has " +
                                 shape_str(real[k].features[l].shape()) + " vs " +
                                 shape_str(fake[k].features[l].shape()));
            }
            loss = accumulate(loss, l1_mean(fake[k].features[l], stop_gradient(real[k].features[l])));
            ++layers;
        }
    }
    if (layers == 0) return zero<T>();
    return scale(loss, static_cast<T>(1.0 / static_cast<double>(layers)));
}

template <typename T>
Var<T> discriminator_loss(const DiscriminatorBank<T>& bank, const Var<T>& y, const Var<T>& y_hat) {
    return lsgan_d_loss(bank.discriminate(y), bank.discriminate(stop_gradient(y_hat)));
}

template <typename T>
GeneratorLoss<T> generator_total_loss(const Var<T>& y, const Var<T>& y_hat, const DiscriminatorBank<T>* bank,
                                      const GanLossWeights& w, const Var<T>& commitment, const MelConfig& mel,
                                      const std::vector<MelScale>& scales) {
    w.validate();
    GeneratorLoss<T> out;
    out.mel = multi_scale_mel_loss(y, y_hat, mel, scales);
    out.commit = commitment.valid() ? commitment : zero<T>();
    if (bank != nullptr && bank->size() > 0) {
        const auto fake = bank->discriminate(y_hat);
        out.adv = lsgan_g_loss(fake);
        out.fm = w.fm > 0.0 ? feature_matching_loss(bank->discriminate(y), fake) : zero<T>();
    } else {
        out.adv = zero<T>();
        out.fm = zero<T>();
    }
    Var<T> total = out.commit;
    if (w.mel > 0.0) total = add(total, scale(out.mel, static_cast<T>(w.mel)));
    if (w.adv > 0.0) total = add(total, scale(out.adv, static_cast<T>(w.adv)));
    if (w.fm > 0.0) total = add(total, scale(out.fm, static_cast<T>(w.fm)));
    out.total = total;
    return out;
}

#define VQD_INSTANTIATE(T)                                                                                        \
    template Var<T> lsgan_d_loss<T>(const DiscriminatorOutput<T>&, const DiscriminatorOutput<T>&);                \
    template Var<T> lsgan_g_loss<T>(const DiscriminatorOutput<T>&);                                               \
    template Var<T> feature_matching_loss<T>(const DiscriminatorOutput<T>&, const DiscriminatorOutput<T>&);       \
    template Var<T> discriminator_loss<T>(const DiscriminatorBank<T>&, const Var<T>&, const Var<T>&);             \
    template GeneratorLoss<T> generator_total_loss<T>(const Var<T>&, const Var<T>&, const DiscriminatorBank<T>*, \
                                                      const GanLossWeights&, const Var<T>&, const MelConfig&,      \
                                                      const std::vector<MelScale>&);

VQD_INSTANTIATE(float)
VQD_INSTANTIATE(double)

}  // namespace vqd
