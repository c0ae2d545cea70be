#pragma once

#include <vector>

#include "vqd/adversary/discriminators.hpp"
#include "vqd/dsp/mel.hpp"

namespace vqd {

struct GanLossWeights {
    double mel = 45.0;
    double fm = 2.0;
    double adv = 1.0;

    void validate() const;
};

/// sum_k mean((D_k(y) - 1)^2) + mean(D_k(y_hat)^2). Callers score y_hat after
/// stop_gradient so the generator receives nothing from this loss.
template <typename T>
Var<T> lsgan_d_loss(const DiscriminatorOutput<T>& real, const DiscriminatorOutput<T>& fake);

/// sum_k mean((D_k(y_hat) - 1)^2)
template <typename T>
Var<T> lsgan_g_loss(const DiscriminatorOutput<T>& fake);

/// Mean over every feature map of every sub-discriminator of mean |fake - real|,
/// with real features detached.
template <typename T>
Var<T> feature_matching_loss(const DiscriminatorOutput<T>& real, const DiscriminatorOutput<T>& fake);

/// Scores real audio and detached fake audio, then applies lsgan_d_loss.
template <typename T>
Var<T> discriminator_loss(const DiscriminatorBank<T>& bank, const Var<T>& y, const Var<T>& y_hat);

template <typename T>
struct GeneratorLoss {
    Var<T> total;
    Var<T> mel;   // unweighted multi-scale mel distance
    Var<T> adv;   // unweighted lsgan_g_loss (zero without a bank)
    Var<T> fm;    // unweighted feature matching (zero without a bank)
    Var<T> commit;
};

/// mel_w * mel + adv_w * adv + fm_w * fm + commitment. A null bank leaves out
/// the adversarial terms.
template <typename T>
GeneratorLoss<T> generator_total_loss(const Var<T>& y, const Var<T>& y_hat, const DiscriminatorBank<T>* bank,
                                      const GanLossWeights& weights, const Var<T>& commitment, const MelConfig& mel,
                                      const std::vector<MelScale>& scales);

}  // namespace vqd
