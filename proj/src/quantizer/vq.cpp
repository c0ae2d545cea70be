#include "vqd/quantizer/vq.hpp"

#include <cmath>
#include <limits>
#include <map>
#include <stdexcept>

#include "vqd/numerics/ops.hpp"

namespace vqd {

void VQConfig::validate() const {
    auto fail = [](const std::string& m) { throw std::invalid_argument("vq config: " + m); };
    if (n_residual < 1) fail("n_residual must be >= 1");
    if (n_group < 1) fail("n_group must be >= 1");
    if (n_codes < 2) fail("n_codes must be >= 2");
    if (code_dim < 1) fail("code_dim must be >= 1");
    if (latent_dim < 1 || latent_dim % n_group != 0) {
        fail("latent_dim " + std::to_string(latent_dim) + " is not divisible by n_group " + std::to_string(n_group));
    }
    if (!(ema_decay > 0.0 && ema_decay < 1.0)) fail("ema_decay must be in (0, 1)");
    if (!factorized && code_dim != group_dim()) {
        fail("without factorized projections code_dim (" + std::to_string(code_dim) +
             ") must equal latent_dim / n_group (" + std::to_string(group_dim()) + ")");
    }
    if (commitment_weight < 0.0) fail("commitment_weight must be >= 0");
    if (dead_code_after < 1) fail("dead_code_after must be >= 1");
    if (!(ema_epsilon > 0.0)) fail("ema_epsilon must be positive");
}

template <typename T>
Codebook<T>::Codebook(std::size_t n_codes, std::size_t dim)
    : embeddings(Shape{n_codes, dim}),
      cluster_size(Shape{n_codes}, T(1)),
      embed_sum(Shape{n_codes, dim}),
      staleness(n_codes, 0) {}

template <typename T>
void Codebook<T>::set_embeddings(const Tensor<T>& e) {
    if (e.shape() != embeddings.shape()) {
        throw ShapeError("codebook embeddings " + shape_str(embeddings.shape()) + " cannot take " + shape_str(e.shape()));
    }
    embeddings = e;
    embed_sum = e;
    cluster_size.fill(T(1));
    std::fill(staleness.begin(), staleness.end(), 0u);
    initialized = true;
}

namespace {

template <typename T>
double sq_dist(const T* a, const T* b, std::size_t d) {
    double s = 0;
    for (std::size_t i = 0; i < d; ++i) {
        const double v = static_cast<double>(a[i]) - static_cast<double>(b[i]);
        s += v * v;
    }
    return s;
}

template <typename T>
void require_rows(const Tensor<T>& v, std::size_t dim, const char* what) {
    if (v.rank() != 2 || v.dim(1) != dim) {
        throw ShapeError(std::string(what) + ": expected vectors [n, " + std::to_string(dim) + "], got " +
                         shape_str(v.shape()));
    }
}

}  // namespace

template <typename T>
std::vector<std::uint32_t> nearest_codes(const Codebook<T>& cb, const Tensor<T>& vectors) {
    const std::size_t d = cb.dim(), k = cb.n_codes();
    require_rows(vectors, d, "nearest_codes");
    const std::size_t n = vectors.dim(0);
    std::vector<std::uint32_t> out(n);
    for (std::size_t i = 0; i < n; ++i) {
        const T* x = vectors.data() + i * d;
        double best = std::numeric_limits<double>::infinity();
        std::uint32_t arg = 0;
        for (std::size_t c = 0; c < k; ++c) {
            const double dist = sq_dist(x, cb.embeddings.data() + c * d, d);
            if (dist < best) {
                best = dist;
                arg = static_cast<std::uint32_t>(c);
            }
        }
        out[i] = arg;
    }
    return out;
}

template <typename T>
void init_codebook(Codebook<T>& cb, const Tensor<T>& vectors, Rng& rng) {
    const std::size_t d = cb.dim(), k = cb.n_codes();
    require_rows(vectors, d, "init_codebook");
    const std::size_t n = vectors.dim(0);
    if (n == 0) throw std::invalid_argument("init_codebook: no vectors to sample from");
    Tensor<T> e(Shape{k, d});
    std::vector<bool> taken(n, false);
    std::vector<double> nearest(n, std::numeric_limits<double>::infinity());
    auto take = [&](std::size_t row, std::size_t slot) {
        taken[row] = true;
        const T* src = vectors.data() + row * d;
        std::copy(src, src + d, e.data() + slot * d);
        for (std::size_t i = 0; i < n; ++i) nearest[i] = std::min(nearest[i], sq_dist(vectors.data() + i * d, src, d));
    };
    const std::size_t distinct = std::min(n, k);
    take(std::uniform_int_distribution<std::size_t>(0, n - 1)(rng), 0);
    for (std::size_t slot = 1; slot < distinct; ++slot) {
        double total = 0;
        for (std::size_t i = 0; i < n; ++i) total += taken[i] ? 0.0 : nearest[i];
        std::size_t pick = n;
        if (total > 0) {
            double u = std::uniform_real_distribution<double>(0.0, total)(rng);
            for (std::size_t i = 0; i < n; ++i) {
                if (taken[i] || nearest[i] <= 0) continue;
                pick = i;
                if ((u -= nearest[i]) < 0) break;
            }
        }
        if (pick == n) {
            std::vector<std::size_t> free;
            for (std::size_t i = 0; i < n; ++i) {
                if (!taken[i]) free.push_back(i);
            }
            pick = free[std::uniform_int_distribution<std::size_t>(0, free.size() - 1)(rng)];
        }
        take(pick, slot);
    }
    // fewer rows than codes: reuse random rows with a small jitter
    std::normal_distribution<double> jitter(0.0, 1e-3);
    for (std::size_t slot = distinct; slot < k; ++slot) {
        const std::size_t row = std::uniform_int_distribution<std::size_t>(0, n - 1)(rng);
        for (std::size_t j = 0; j < d; ++j) e.at2(slot, j) = static_cast<T>(vectors.at2(row, j) + jitter(rng));
    }
    cb.set_embeddings(e);
}

template <typename T>
void ema_update(Codebook<T>& cb, const std::vector<std::uint32_t>& assignments, const Tensor<T>& vectors,
                double decay, double epsilon) {
    const std::size_t d = cb.dim(), k = cb.n_codes();
    require_rows(vectors, d, "ema_update");
    if (assignments.size() != vectors.dim(0)) {
        throw ShapeError("ema_update: " + std::to_string(assignments.size()) + " assignments for " +
                         std::to_string(vectors.dim(0)) + " vectors");
    }
    std::vector<double> counts(k, 0.0), sums(k * d, 0.0);
    for (std::size_t i = 0; i < assignments.size(); ++i) {
        const std::size_t c = assignments[i];
        if (c >= k) throw std::out_of_range("ema_update: code index out of range");
        counts[c] += 1.0;
        for (std::size_t j = 0; j < d; ++j) sums[c * d + j] += static_cast<double>(vectors.at2(i, j));
    }
    double mass = 0;
    for (std::size_t c = 0; c < k; ++c) {
        cb.cluster_size[c] = static_cast<T>(decay * cb.cluster_size[c] + (1.0 - decay) * counts[c]);
        for (std::size_t j = 0; j < d; ++j) {
            T& s = cb.embed_sum.at2(c, j);
            s = static_cast<T>(decay * s + (1.0 - decay) * sums[c * d + j]);
        }
        mass += cb.cluster_size[c];
        cb.staleness[c] = counts[c] > 0 ? 0u : cb.staleness[c] + 1;
    }
    for (std::size_t c = 0; c < k; ++c) {
        const double smoothed = (cb.cluster_size[c] + epsilon) / (mass + static_cast<double>(k) * epsilon) * mass;
        for (std::size_t j = 0; j < d; ++j) cb.embeddings.at2(c, j) = static_cast<T>(cb.embed_sum.at2(c, j) / smoothed);
    }
}

template <typename T>
std::size_t reseed_dead_codes(Codebook<T>& cb, const Tensor<T>& donors, std::size_t threshold, Rng& rng) {
    const std::size_t d = cb.dim();
    require_rows(donors, d, "reseed_dead_codes");
    if (donors.dim(0) == 0) return 0;
    std::uniform_int_distribution<std::size_t> pick(0, donors.dim(0) - 1);
    std::size_t replaced = 0;
    for (std::size_t c = 0; c < cb.n_codes(); ++c) {
        if (cb.staleness[c] < threshold) continue;
        const std::size_t row = pick(rng);
        for (std::size_t j = 0; j < d; ++j) {
            cb.embeddings.at2(c, j) = donors.at2(row, j);
            cb.embed_sum.at2(c, j) = donors.at2(row, j);
        }
        cb.cluster_size[c] = T(1);
        cb.staleness[c] = 0;
        ++replaced;
    }
    return replaced;
}

template <typename T>
Var<T> commitment_loss(const Var<T>& latents, const Var<T>& codes, T weight) {
    return scale(mse_mean(latents, stop_gradient(codes)), weight);
}

double perplexity(const Histogram& h) {
    // counts grouped by value: H = log T - sum_v m_v v log v / T, in extended
    // precision so exp(H) rounds back to K for K equal counts
    std::map<std::int64_t, std::int64_t> multiplicity;
    long double total = 0;
    for (auto c : h) {
        if (c < 0) throw std::invalid_argument("perplexity: negative count");
        if (c == 0) continue;
        multiplicity[c] += 1;
        total += static_cast<long double>(c);
    }
    if (total <= 0) throw std::invalid_argument("perplexity: histogram is all zero");
    long double weighted = 0;
    for (const auto& [v, m] : multiplicity) {
        const long double lv = static_cast<long double>(v);
        weighted += static_cast<long double>(m) * lv * std::log(lv);
    }
    return static_cast<double>(std::exp(std::log(total) - weighted / total));
}

double usage(const Histogram& h) {
    if (h.empty()) throw std::invalid_argument("usage: empty histogram");
    std::size_t used = 0;
    for (auto c : h) {
        if (c < 0) throw std::invalid_argument("usage: negative count");
        used += c > 0;
    }
    return static_cast<double>(used) / static_cast<double>(h.size());
}

double mean_perplexity(const std::vector<Histogram>& hs) {
    if (hs.empty()) throw std::invalid_argument("mean_perplexity: no histograms");
    double s = 0;
    for (const auto& h : hs) s += perplexity(h);
    return s / static_cast<double>(hs.size());
}

double mean_usage(const std::vector<Histogram>& hs) {
    if (hs.empty()) throw std::invalid_argument("mean_usage: no histograms");
    double s = 0;
    for (const auto& h : hs) s += usage(h);
    return s / static_cast<double>(hs.size());
}

void accumulate(std::vector<Histogram>& into, const std::vector<Histogram>& add) {
    if (into.empty()) {
        into = add;
        return;
    }
    if (into.size() != add.size()) throw std::invalid_argument("accumulate: histogram count mismatch");
    for (std::size_t i = 0; i < into.size(); ++i) {
        if (into[i].size() != add[i].size()) throw std::invalid_argument("accumulate: histogram length mismatch");
        for (std::size_t c = 0; c < into[i].size(); ++c) into[i][c] += add[i][c];
    }
}

template <typename T>
std::pair<Tensor<T>, Tensor<T>> semi_orthogonal_pair(std::size_t in, std::size_t out, Rng& rng) {
    // Gram-Schmidt on a Gaussian [tall, wide] matrix gives orthonormal columns.
    const std::size_t tall = std::max(in, out), wide = std::min(in, out);
    std::normal_distribution<double> gauss(0.0, 1.0);
    std::vector<double> q(tall * wide);
    for (auto& v : q) v = gauss(rng);
    for (std::size_t c = 0; c < wide; ++c) {
        for (int pass = 0; pass < 2; ++pass) {
            for (std::size_t p = 0; p < c; ++p) {
                double dot = 0;
                for (std::size_t r = 0; r < tall; ++r) dot += q[r * wide + c] * q[r * wide + p];
                for (std::size_t r = 0; r < tall; ++r) q[r * wide + c] -= dot * q[r * wide + p];
            }
        }
        double norm = 0;
        for (std::size_t r = 0; r < tall; ++r) norm += q[r * wide + c] * q[r * wide + c];
        norm = std::sqrt(norm);
        for (std::size_t r = 0; r < tall; ++r) q[r * wide + c] /= norm;
    }
    Tensor<T> pre(Shape{out, in}), post(Shape{in, out});
    for (std::size_t o = 0; o < out; ++o) {
        for (std::size_t i = 0; i < in; ++i) {
            // out >= in: pre = Q [out, in]; otherwise pre = Q^T with Q [in, out]
            const double v = out >= in ? q[o * wide + i] : q[i * wide + o];
            pre.at2(o, i) = static_cast<T>(v);
            post.at2(i, o) = static_cast<T>(v);
        }
    }
    return {std::move(pre), std::move(post)};
}

template <typename T>
Quantizer<T>::Quantizer(VQConfig cfg, ParamSet<T>& params, Rng& rng, std::string prefix)
    : cfg_(cfg), prefix_(std::move(prefix)) {
    cfg_.validate();
    const std::size_t gd = cfg_.group_dim(), cd = cfg_.code_dim;
    if (cfg_.factorized) {
        for (std::size_t g = 0; g < cfg_.n_group; ++g) {
            const std::string base = prefix_ + "/" + std::to_string(g);
            auto [pre, post] = semi_orthogonal_pair<T>(gd, cd, rng);
            pre_w_.push_back(params.add(base + "/pre/weight", std::move(pre)));
            pre_b_.push_back(params.add(base + "/pre/bias", Tensor<T>(Shape{cd})));
            post_w_.push_back(params.add(base + "/post/weight", std::move(post)));
            post_b_.push_back(params.add(base + "/post/bias", Tensor<T>(Shape{gd})));
        }
    }
    std::normal_distribution<double> gauss(0.0, 1.0);
    for (std::size_t i = 0; i < cfg_.n_codebooks(); ++i) {
        Codebook<T> cb(cfg_.n_codes, cd);
        for (auto& v : cb.embeddings.values()) v = static_cast<T>(gauss(rng));
        cb.embed_sum = cb.embeddings;
        codebooks_.push_back(std::move(cb));
    }
}

template <typename T>
Var<T> Quantizer<T>::project_out(std::size_t g, const Var<T>& codes) const {
    return cfg_.factorized ? linear(codes, post_w_[g], post_b_[g]) : codes;
}

template <typename T>
QuantizeOutput<T> Quantizer<T>::quantize(const Var<T>& latents, bool train, Rng* rng) {
    if (latents.shape().size() != 2 || latents.shape()[1] != cfg_.latent_dim) {
        throw ShapeError("quantize: expected latents [frames, " + std::to_string(cfg_.latent_dim) + "], got " +
                         shape_str(latents.shape()));
    }
    if (!latents.value().all_finite()) throw std::invalid_argument("quantize: latents contain non-finite values");
    if (train && rng == nullptr) throw std::invalid_argument("quantize: training mode needs an rng");
    const std::size_t frames = latents.shape()[0], gd = cfg_.group_dim(), cd = cfg_.code_dim;
    const std::size_t nr = cfg_.n_residual;

    QuantizeOutput<T> out;
    out.frames = frames;
    out.indices.assign(cfg_.n_group, std::vector<std::vector<std::uint32_t>>(nr));
    std::vector<Var<T>> parts;
    Var<T> commit;
    for (std::size_t g = 0; g < cfg_.n_group; ++g) {
        Var<T> z = cfg_.n_group == 1 ? latents : slice(latents, 1, g * gd, gd);
        Var<T> p = cfg_.factorized ? linear(z, pre_w_[g], pre_b_[g]) : z;
        Tensor<T> residual = p.value();
        Tensor<T> q(Shape{frames, cd});
        for (std::size_t r = 0; r < nr; ++r) {
            Codebook<T>& cb = codebooks_[g * nr + r];
            if (train && !cb.initialized) init_codebook(cb, residual, *rng);
            const auto idx = nearest_codes(cb, residual);
            Histogram h(cfg_.n_codes, 0);
            for (auto i : idx) ++h[i];
            out.histograms.push_back(std::move(h));
            const Tensor<T> stage = residual;
            for (std::size_t f = 0; f < frames; ++f) {
                const T* e = cb.embeddings.data() + idx[f] * cd;
                for (std::size_t j = 0; j < cd; ++j) {
                    q.at2(f, j) += e[j];
                    residual.at2(f, j) -= e[j];
                }
            }
            if (train) {
                ema_update(cb, idx, stage, cfg_.ema_decay, cfg_.ema_epsilon);
                if (cfg_.reseed_dead_codes) reseed_dead_codes(cb, stage, cfg_.dead_code_after, *rng);
            }
            out.indices[g][r] = idx;
        }
        // Codes enter through stop_gradient so gradient checks replay them frozen.
        Var<T> codes = stop_gradient(Var<T>::constant(std::move(q)));
        Var<T> c = commitment_loss(p, codes, T(1));
        commit = commit.valid() ? add(commit, c) : c;
        Var<T> st = add(p, stop_gradient(sub(codes, p)));
        parts.push_back(project_out(g, st));
    }
    out.commitment_loss = scale(commit, static_cast<T>(cfg_.commitment_weight / static_cast<double>(cfg_.n_group)));
    out.quantized = parts.size() == 1 ? parts[0] : concat(parts, 1);
    return out;
}

template <typename T>
Var<T> Quantizer<T>::dequantize(const std::vector<std::vector<std::vector<std::uint32_t>>>& indices) const {
    if (indices.size() != cfg_.n_group) throw ShapeError("dequantize: expected " + std::to_string(cfg_.n_group) + " groups");
    const std::size_t cd = cfg_.code_dim, nr = cfg_.n_residual;
    std::size_t frames = 0;
    std::vector<Var<T>> parts;
    for (std::size_t g = 0; g < cfg_.n_group; ++g) {
        if (indices[g].size() != nr) throw ShapeError("dequantize: expected " + std::to_string(nr) + " residual layers");
        if (g == 0) frames = indices[0].empty() ? 0 : indices[0][0].size();
        Tensor<T> q(Shape{frames, cd});
        for (std::size_t r = 0; r < nr; ++r) {
            const Codebook<T>& cb = codebooks_[g * nr + r];
            if (indices[g][r].size() != frames) throw ShapeError("dequantize: ragged code sequences");
            for (std::size_t f = 0; f < frames; ++f) {
                const auto c = indices[g][r][f];
                if (c >= cfg_.n_codes) {
                    throw std::out_of_range("dequantize: code " + std::to_string(c) + " outside codebook of " +
                                            std::to_string(cfg_.n_codes));
                }
                for (std::size_t j = 0; j < cd; ++j) q.at2(f, j) += cb.embeddings.at2(c, j);
            }
        }
        parts.push_back(project_out(g, Var<T>::constant(std::move(q))));
    }
    return parts.size() == 1 ? parts[0] : concat(parts, 1);
}

template <typename T>
std::vector<std::pair<std::string, Shape>> Quantizer<T>::state_shapes(const VQConfig& cfg, const std::string& prefix) {
    std::vector<std::pair<std::string, Shape>> out;
    for (std::size_t g = 0; g < cfg.n_group; ++g) {
        for (std::size_t r = 0; r < cfg.n_residual; ++r) {
            const std::string base = prefix + "/" + std::to_string(g) + "/" + std::to_string(r);
            out.emplace_back(base + "/embeddings", Shape{cfg.n_codes, cfg.code_dim});
            out.emplace_back(base + "/cluster_size", Shape{cfg.n_codes});
            out.emplace_back(base + "/embed_sum", Shape{cfg.n_codes, cfg.code_dim});
            out.emplace_back(base + "/staleness", Shape{cfg.n_codes});
        }
    }
    return out;
}

template <typename T>
std::vector<std::pair<std::string, Shape>> Quantizer<T>::parameter_shapes(const VQConfig& cfg,
                                                                          const std::string& prefix) {
    std::vector<std::pair<std::string, Shape>> out;
    if (!cfg.factorized) return out;
    const std::size_t gd = cfg.group_dim(), cd = cfg.code_dim;
    for (std::size_t g = 0; g < cfg.n_group; ++g) {
        const std::string base = prefix + "/" + std::to_string(g);
        out.emplace_back(base + "/pre/weight", Shape{cd, gd});
        out.emplace_back(base + "/pre/bias", Shape{cd});
        out.emplace_back(base + "/post/weight", Shape{gd, cd});
        out.emplace_back(base + "/post/bias", Shape{gd});
    }
    return out;
}

template <typename T>
void Quantizer<T>::save_state(Checkpoint& ckpt) const {
    for (std::size_t g = 0; g < cfg_.n_group; ++g) {
        for (std::size_t r = 0; r < cfg_.n_residual; ++r) {
            const auto& cb = codebooks_[g * cfg_.n_residual + r];
            const std::string base = prefix_ + "/" + std::to_string(g) + "/" + std::to_string(r);
            ckpt.put(base + "/embeddings", cb.embeddings.template cast<float>());
            ckpt.put(base + "/cluster_size", cb.cluster_size.template cast<float>());
            ckpt.put(base + "/embed_sum", cb.embed_sum.template cast<float>());
            Tensor<float> stale(Shape{cb.n_codes()});
            for (std::size_t c = 0; c < cb.n_codes(); ++c) stale[c] = static_cast<float>(cb.staleness[c]);
            ckpt.put(base + "/staleness", std::move(stale));
        }
    }
}

template <typename T>
void Quantizer<T>::load_state(const Checkpoint& ckpt) {
    auto fetch = [&](const std::string& name, const Shape& shape) {
        const Tensor<float>& t = ckpt.at(name);
        if (t.shape() != shape) {
            throw ShapeError("checkpoint tensor '" + name + "' has shape " + shape_str(t.shape()) + ", expected " +
                             shape_str(shape));
        }
        return t.template cast<T>();
    };
    for (std::size_t g = 0; g < cfg_.n_group; ++g) {
        for (std::size_t r = 0; r < cfg_.n_residual; ++r) {
            auto& cb = codebooks_[g * cfg_.n_residual + r];
            const std::string base = prefix_ + "/" + std::to_string(g) + "/" + std::to_string(r);
            const Shape kd{cfg_.n_codes, cfg_.code_dim}, k{cfg_.n_codes};
            cb.embeddings = fetch(base + "/embeddings", kd);
            cb.cluster_size = fetch(base + "/cluster_size", k);
            cb.embed_sum = fetch(base + "/embed_sum", kd);
            const Tensor<T> stale = fetch(base + "/staleness", k);
            for (std::size_t c = 0; c < cfg_.n_codes; ++c) cb.staleness[c] = static_cast<std::uint32_t>(stale[c]);
            cb.initialized = true;
        }
    }
}

#define VQD_INSTANTIATE(T)                                                                                    \
    template struct Codebook<T>;                                                                              \
    template std::vector<std::uint32_t> nearest_codes<T>(const Codebook<T>&, const Tensor<T>&);               \
    template void init_codebook<T>(Codebook<T>&, const Tensor<T>&, Rng&);                                     \
    template void ema_update<T>(Codebook<T>&, const std::vector<std::uint32_t>&, const Tensor<T>&, double,    \
                                double);                                                                      \
    template std::size_t reseed_dead_codes<T>(Codebook<T>&, const Tensor<T>&, std::size_t, Rng&);             \
    template Var<T> commitment_loss<T>(const Var<T>&, const Var<T>&, T);                                      \
    template std::pair<Tensor<T>, Tensor<T>> semi_orthogonal_pair<T>(std::size_t, std::size_t, Rng&);         \
    template class Quantizer<T>;

VQD_INSTANTIATE(float)
VQD_INSTANTIATE(double)

#undef VQD_INSTANTIATE

}  // namespace vqd
