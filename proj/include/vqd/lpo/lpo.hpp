#pragma once

#include <cstddef>
#include <filesystem>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "vqd/numerics/autodiff.hpp"

namespace vqd {

// Summed token log-probabilities of a chosen (w) and a rejected (l) response.
struct PreferencePair {
    std::string id;
    double logp_policy_w = 0, logp_ref_w = 0;
    double logp_policy_l = 0, logp_ref_l = 0;
};

struct LpoHyper {
    double beta = 0.2;
    double r1 = 1.0;
    double r2 = 0.4;
    /// Barrier weight; defaults to the preference-tuning delta of 10.
    double lambda = 10.0;
    /// Floor inside the barrier's log.
    double eps = 1e-6;
    /// Log-ratio clamp, in nats.
    double clamp = 30.0;

    void validate() const;
    /// 2 beta * 2 / (r1 + r2)
    double gamma() const { return 2.0 * beta * 2.0 / (r1 + r2); }
};

nlohmann::json to_json(const LpoHyper& h);
LpoHyper lpo_hyper_from_json(const nlohmann::json& j, LpoHyper base = {}, const std::string& context = "lpo");

struct Ratios {
    double x1 = 1, x2 = 1;
    /// How many of the two log-ratios hit the clamp.
    std::size_t clamped = 0;
};

/// Policy/reference probability ratios of the chosen and rejected responses,
/// computed from log differences clamped to [-clamp, clamp].
Ratios ratios(const PreferencePair& p, double clamp = 30.0);

struct LpoValue {
    double loss = 0;
    double d_x1 = 0, d_x2 = 0;
    double margin = 0;  // x1 - x2 - 1/(2 beta)
    double x1_ste = 0, x2_ste = 0;
    bool hinge_active = false;
    /// The barrier adds a positive term (x1_ste < 1).
    bool barrier_active = false;
    /// x1_ste fell to the eps floor, so the barrier is constant.
    bool barrier_saturated = false;
};

/// Linear preference loss with its derivatives. x1_ste sees x2 detached and
/// x2_ste sees x1 detached, so d_x1 flows through x1_ste only and d_x2
/// through x2_ste only. Nonpositive ratios are rejected.
LpoValue lpo_loss(double x1, double x2, const LpoHyper& h);

/// The same loss on the tape, for gradient checks and composition.
Var<double> lpo_loss_var(const Var<double>& x1, const Var<double>& x2, const LpoHyper& h);

struct LpoDiagnostics {
    std::string id;
    Ratios ratios;
    LpoValue value;
};

struct LpoBatchResult {
    double mean_loss = 0;
    std::size_t clamp_events = 0;
    std::size_t active_hinges = 0;
    std::vector<LpoDiagnostics> pairs;
};

/// Mean loss over a nonempty batch, summed in input order.
LpoBatchResult lpo_batch(const std::vector<PreferencePair>& pairs, const LpoHyper& h);

nlohmann::json to_json(const LpoDiagnostics& d);
nlohmann::json to_json(const LpoBatchResult& r);

PreferencePair preference_pair_from_json(const nlohmann::json& j);
/// One JSON object per line; blank lines are skipped, errors name the line.
std::vector<PreferencePair> read_pairs(const std::filesystem::path& path);

}  // namespace vqd
