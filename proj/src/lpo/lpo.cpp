#include "vqd/lpo/lpo.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <stdexcept>

#include "vqd/numerics/ops.hpp"
#include "vqd/util/strict_json.hpp"

namespace vqd {

using nlohmann::json;

void LpoHyper::validate() const {
    auto finite = [](double v) { return std::isfinite(v); };
    if (!(beta > 0.0) || !finite(beta)) throw std::invalid_argument("lpo: beta must be > 0");
    if (!(r1 > 0.0) || !(r2 > 0.0) || !finite(r1) || !finite(r2)) throw std::invalid_argument("lpo: r1 and r2 must be > 0");
    if (!(lambda >= 0.0) || !finite(lambda)) throw std::invalid_argument("lpo: lambda must be >= 0");
    if (!(eps > 0.0) || !(eps < 1.0)) throw std::invalid_argument("lpo: eps must lie in (0, 1)");
    if (!(clamp > 0.0) || !finite(clamp)) throw std::invalid_argument("lpo: clamp must be > 0");
}

json to_json(const LpoHyper& h) {
    return json{{"beta", h.beta}, {"r1", h.r1}, {"r2", h.r2}, {"lambda", h.lambda}, {"eps", h.eps}, {"clamp", h.clamp}};
}

LpoHyper lpo_hyper_from_json(const json& j, LpoHyper h, const std::string& context) {
    StrictReader r(j, context);
    r.get("beta", h.beta).get("r1", h.r1).get("r2", h.r2).get("lambda", h.lambda).get("eps", h.eps);
    r.get("clamp", h.clamp).finish();
    h.validate();
    return h;
}

namespace {

double clamped_exp(double d, double clamp, std::size_t& hits) {
    if (d > clamp) {
        ++hits;
        d = clamp;
    } else if (d < -clamp) {
        ++hits;
        d = -clamp;
    }
    return std::exp(d);
}

}  // namespace

Ratios ratios(const PreferencePair& p, double clamp) {
    for (double v : {p.logp_policy_w, p.logp_ref_w, p.logp_policy_l, p.logp_ref_l}) {
        if (!std::isfinite(v)) throw std::invalid_argument("lpo: pair '" + p.id + "' has a non-finite log-probability");
    }
    Ratios r;
    r.x1 = clamped_exp(p.logp_policy_w - p.logp_ref_w, clamp, r.clamped);
    r.x2 = clamped_exp(p.logp_policy_l - p.logp_ref_l, clamp, r.clamped);
    return r;
}

LpoValue lpo_loss(double x1, double x2, const LpoHyper& h) {
    h.validate();
    if (!(x1 > 0.0) || !(x2 > 0.0) || !std::isfinite(x1) || !std::isfinite(x2)) {
        throw std::invalid_argument("lpo: ratios must be positive and finite");
    }
    const double g = h.gamma();
    LpoValue v;
    v.margin = x1 - x2 - 1.0 / (2.0 * h.beta);
    v.hinge_active = v.margin > 0.0;
    const double hinge = v.hinge_active ? v.margin : 0.0;
    v.x1_ste = h.r1 * hinge;
    v.x2_ste = h.r2 * hinge;
    const double floored = std::max(v.x1_ste, h.eps);
    const double barrier = std::max(0.0, -std::log(floored));
    v.barrier_active = barrier > 0.0;
    v.barrier_saturated = v.x1_ste <= h.eps;
    v.loss = g * (v.x1_ste + v.x2_ste) + h.lambda * barrier;
    if (v.hinge_active) {
        v.d_x1 = g * h.r1;
        if (v.barrier_active && !v.barrier_saturated) v.d_x1 += h.lambda * (-h.r1 / v.x1_ste);
        v.d_x2 = -g * h.r2;
    }
    return v;
}

Var<double> lpo_loss_var(const Var<double>& x1, const Var<double>& x2, const LpoHyper& h) {
    h.validate();
    const double offset = -1.0 / (2.0 * h.beta);
    // x2 frozen inside x1_ste, x1 frozen inside x2_ste
    const auto m1 = add_scalar(sub(x1, stop_gradient(x2)), offset);
    const auto m2 = add_scalar(sub(stop_gradient(x1), x2), offset);
    const auto x1_ste = scale(max_const(m1, 0.0), h.r1);
    const auto x2_ste = scale(max_const(m2, 0.0), h.r2);
    const auto linear = scale(add(x1_ste, x2_ste), h.gamma());
    const auto barrier = max_const(scale(log(max_const(x1_ste, h.eps)), -1.0), 0.0);
    return add(linear, scale(barrier, h.lambda));
}

LpoBatchResult lpo_batch(const std::vector<PreferencePair>& pairs, const LpoHyper& h) {
    h.validate();
    if (pairs.empty()) throw std::invalid_argument("lpo: empty batch");
    LpoBatchResult out;
    out.pairs.reserve(pairs.size());
    double total = 0.0;
    for (const auto& p : pairs) {
        LpoDiagnostics d;
        d.id = p.id;
        d.ratios = ratios(p, h.clamp);
        d.value = lpo_loss(d.ratios.x1, d.ratios.x2, h);
        total += d.value.loss;
        out.clamp_events += d.ratios.clamped;
        out.active_hinges += d.value.hinge_active ? 1 : 0;
        out.pairs.push_back(std::move(d));
    }
    out.mean_loss = total / static_cast<double>(pairs.size());
    return out;
}

json to_json(const LpoDiagnostics& d) {
    return json{{"id", d.id},
                {"x1", d.ratios.x1},
                {"x2", d.ratios.x2},
                {"clamped", d.ratios.clamped},
                {"margin", d.value.margin},
                {"x1_ste", d.value.x1_ste},
                {"x2_ste", d.value.x2_ste},
                {"hinge_active", d.value.hinge_active},
                {"barrier_active", d.value.barrier_active},
                {"barrier_saturated", d.value.barrier_saturated},
                {"loss", d.value.loss},
                {"d_x1", d.value.d_x1},
                {"d_x2", d.value.d_x2}};
}

json to_json(const LpoBatchResult& r) {
    json pairs = json::array();
    for (const auto& d : r.pairs) pairs.push_back(to_json(d));
    return json{{"mean_loss", r.mean_loss},
                {"n_pairs", r.pairs.size()},
                {"clamp_events", r.clamp_events},
                {"active_hinges", r.active_hinges},
                {"pairs", std::move(pairs)}};
}

PreferencePair preference_pair_from_json(const json& j) {
    if (!j.is_object()) throw std::invalid_argument("pair must be a JSON object");
    PreferencePair p;
    if (j.contains("id")) {
        const auto& id = j.at("id");
        p.id = id.is_string() ? id.get<std::string>() : id.dump();
    }
    auto num = [&](const char* key, double& out) {
        if (!j.contains(key) || !j.at(key).is_number()) {
            throw std::invalid_argument(std::string("pair is missing numeric field '") + key + "'");
        }
        out = j.at(key).get<double>();
    };
    num("logp_policy_w", p.logp_policy_w);
    num("logp_ref_w", p.logp_ref_w);
    num("logp_policy_l", p.logp_policy_l);
    num("logp_ref_l", p.logp_ref_l);
    return p;
}

std::vector<PreferencePair> read_pairs(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw std::runtime_error("cannot open pairs file " + path.string());
    std::vector<PreferencePair> out;
    std::string line;
    std::size_t n = 0;
    while (std::getline(in, line)) {
        ++n;
        if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
        try {
            out.push_back(preference_pair_from_json(json::parse(line)));
        } catch (const std::exception& e) {
            throw std::invalid_argument(path.string() + ":" + std::to_string(n) + ": " + e.what());
        }
    }
    return out;
}

}  // namespace vqd
