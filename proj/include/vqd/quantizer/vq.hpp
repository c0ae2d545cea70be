#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "vqd/numerics/checkpoint.hpp"
#include "vqd/numerics/params.hpp"

namespace vqd {

struct VQConfig {
    std::size_t n_residual = 1;
    std::size_t n_group = 1;
    std::size_t n_codes = 1024;
    std::size_t code_dim = 512;
    std::size_t latent_dim = 1024;
    double ema_decay = 0.8;
    /// Per-group dense projections latent_dim / n_group -> code_dim and back.
    /// Without them code_dim must equal latent_dim / n_group.
    bool factorized = true;
    double commitment_weight = 0.25;
    bool reseed_dead_codes = true;
    std::size_t dead_code_after = 20;
    double ema_epsilon = 1e-5;

    void validate() const;
    std::size_t group_dim() const { return latent_dim / n_group; }
    std::size_t n_codebooks() const { return n_group * n_residual; }
};

template <typename T>
struct Codebook {
    Tensor<T> embeddings;    // [n_codes, dim]
    Tensor<T> cluster_size;  // [n_codes]
    Tensor<T> embed_sum;     // [n_codes, dim]
    std::vector<std::uint32_t> staleness;
    bool initialized = false;

    Codebook() = default;
    Codebook(std::size_t n_codes, std::size_t dim);

    std::size_t n_codes() const { return embeddings.dim(0); }
    std::size_t dim() const { return embeddings.dim(1); }
    /// Sets embeddings directly, with cluster sizes of one and matching sums.
    void set_embeddings(const Tensor<T>& e);
};

using Histogram = std::vector<std::int64_t>;

/// Index of the nearest embedding (squared L2, ties to the lowest index) for each row of vectors [n, dim].
template <typename T>
std::vector<std::uint32_t> nearest_codes(const Codebook<T>& cb, const Tensor<T>& vectors);

/// Seeds the codebook with distinct rows of vectors [n, dim], chosen with
/// probability proportional to squared distance from the rows already taken.
template <typename T>
void init_codebook(Codebook<T>& cb, const Tensor<T>& vectors, Rng& rng);

/// EMA step: cluster_size and embed_sum decay toward this batch's counts and
/// per-code sums, embeddings become embed_sum over the Laplace-smoothed sizes.
/// Staleness counters advance for codes with no assignment and reset otherwise.
template <typename T>
void ema_update(Codebook<T>& cb, const std::vector<std::uint32_t>& assignments, const Tensor<T>& vectors,
                double decay, double epsilon);

/// Replaces every code whose staleness reached `threshold` with a random donor
/// row and resets its statistics. Returns the number of codes replaced.
template <typename T>
std::size_t reseed_dead_codes(Codebook<T>& cb, const Tensor<T>& donors, std::size_t threshold, Rng& rng);

/// weight * mean((latents - stop_gradient(codes))^2)
template <typename T>
Var<T> commitment_loss(const Var<T>& latents, const Var<T>& codes, T weight);

/// exp(-sum p ln p) over the histogram's empirical distribution.
double perplexity(const Histogram& h);
/// Fraction of codes with a nonzero count.
double usage(const Histogram& h);
/// Averages over codebooks.
double mean_perplexity(const std::vector<Histogram>& hs);
double mean_usage(const std::vector<Histogram>& hs);
/// Elementwise sum of histograms of equal length.
void accumulate(std::vector<Histogram>& into, const std::vector<Histogram>& add);

template <typename T>
struct QuantizeOutput {
    Var<T> quantized;        // [frames, latent_dim], straight-through
    Var<T> commitment_loss;  // scalar
    /// indices[g][r][frame]
    std::vector<std::vector<std::vector<std::uint32_t>>> indices;
    /// histograms[g * n_residual + r], one count per code
    std::vector<Histogram> histograms;
    std::size_t frames = 0;
};

// Grouped, residual, factorized VQ. Projection weights live in the shared
// ParamSet under "<prefix>/<g>/pre" and "<prefix>/<g>/post"; codebooks are
// EMA state held here and saved as "<prefix>/<g>/<r>/embeddings" and friends.
template <typename T>
class Quantizer {
public:
    Quantizer() = default;
    Quantizer(VQConfig cfg, ParamSet<T>& params, Rng& rng, std::string prefix = "vq");

    /// With `train`, uninitialized codebooks are seeded from this batch and
    /// every codebook takes an EMA step (plus dead-code reseeding) after lookup.
    QuantizeOutput<T> quantize(const Var<T>& latents, bool train, Rng* rng = nullptr);

    /// Rebuilds latents [frames, latent_dim] from code indices.
    Var<T> dequantize(const std::vector<std::vector<std::vector<std::uint32_t>>>& indices) const;

    const VQConfig& config() const { return cfg_; }
    std::vector<Codebook<T>>& codebooks() { return codebooks_; }
    const std::vector<Codebook<T>>& codebooks() const { return codebooks_; }
    Codebook<T>& codebook(std::size_t g, std::size_t r) { return codebooks_.at(g * cfg_.n_residual + r); }

    void save_state(Checkpoint& ckpt) const;
    void load_state(const Checkpoint& ckpt);
    static std::vector<std::pair<std::string, Shape>> state_shapes(const VQConfig& cfg, const std::string& prefix = "vq");
    /// Trainable projection parameters registered in the ParamSet.
    static std::vector<std::pair<std::string, Shape>> parameter_shapes(const VQConfig& cfg,
                                                                       const std::string& prefix = "vq");

private:
    Var<T> project_out(std::size_t g, const Var<T>& codes) const;

    VQConfig cfg_;
    std::string prefix_;
    std::vector<Var<T>> pre_w_, pre_b_, post_w_, post_b_;
    std::vector<Codebook<T>> codebooks_;
};

/// Random pair (pre [out, in], post [in, out]) with orthonormal rows or columns
/// so post * pre is the identity when out >= in and a projection otherwise.
template <typename T>
std::pair<Tensor<T>, Tensor<T>> semi_orthogonal_pair(std::size_t in, std::size_t out, Rng& rng);

}  // namespace vqd
