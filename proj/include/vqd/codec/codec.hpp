#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <memory>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include <nlohmann/json.hpp>

#include "vqd/dsp/audio.hpp"
#include "vqd/dsp/mel.hpp"
#include "vqd/numerics/checkpoint.hpp"
#include "vqd/numerics/layers.hpp"
#include "vqd/quantizer/vq.hpp"

namespace vqd {

// Where a part's parameters come from: a fresh seeded init, or a checkpoint.
struct InitSource {
    std::optional<std::filesystem::path> checkpoint;

    static InitSource scratch() { return {}; }
    static InitSource from(std::filesystem::path p) { return InitSource{std::move(p)}; }
    bool is_scratch() const { return !checkpoint.has_value(); }
    /// "scratch" or "from:<path>"
    std::string str() const;
    static InitSource parse(const std::string& s);
};

struct EncoderSpec {
    std::vector<std::size_t> depths{3, 3, 9, 3};
    std::vector<std::size_t> dims{256, 512, 768, 1024};
    double drop_rate = 0.2;
    std::size_t kernel = 7;
    /// Hidden width of a block's pointwise pair, as a multiple of the stage dim.
    std::size_t expansion = 4;

    void validate() const;
    std::size_t latent_dim() const { return dims.back(); }
};

struct DecoderSpec {
    std::vector<std::size_t> rates{8, 4, 2, 2, 2};
    std::vector<std::size_t> resblock_kernels{3, 7, 11};
    std::vector<std::vector<std::size_t>> resblock_dilations{{1, 3, 5}, {1, 3, 5}, {1, 3, 5}};
    std::size_t pre_kernel = 13;
    std::size_t post_kernel = 13;
    /// Channels after the input conv; each upsampler halves them (floor 1).
    std::size_t channels = 512;

    void validate() const;
    std::size_t hop() const;
    std::size_t channels_after(std::size_t n_upsamplers) const;
};

struct CodecSpec {
    std::size_t n_residual = 1;
    std::size_t n_group = 1;
    std::size_t n_codes = 1024;
    std::size_t code_dim = 512;
    InitSource encoder_init;
    InitSource decoder_init;
    InitSource vq_init;
    EncoderSpec encoder;
    DecoderSpec decoder;
    MelConfig mel;
    bool factorized = true;
    double ema_decay = 0.8;
    double commitment_weight = 0.25;
    std::uint64_t seed = 0;

    void validate() const;
    VQConfig vq_config() const;
    std::size_t latent_dim() const { return encoder.latent_dim(); }
    double tokens_per_second() const;
    double bandwidth_bps() const;

    /// Multi-codebook teacher (8, 4, 1024, 512) on the full architecture.
    static CodecSpec full_teacher();
    /// Single-codebook student (1, 1, 32768, 3584) inheriting encoder and decoder.
    static CodecSpec full_student(const std::filesystem::path& teacher_ckpt);
    /// Small profile at 8 kHz: 2 stages, decoder rates [4, 4, 4], teacher VQ (2, 2, 16, 8).
    static CodecSpec desk_teacher();
    /// Desk student VQ (1, 1, 64, 16) inheriting encoder and decoder.
    static CodecSpec desk_student(const std::filesystem::path& teacher_ckpt);
};

nlohmann::json to_json(const MelConfig& c);
MelConfig mel_config_from_json(const nlohmann::json& j, const std::string& context = "mel");
nlohmann::json to_json(const CodecSpec& s);
/// Missing keys keep the values already in `base`; unknown keys are rejected.
CodecSpec codec_spec_from_json(const nlohmann::json& j, CodecSpec base = {}, const std::string& context = "codec");

struct ParamInfo {
    std::string name;
    Shape shape;
};

/// Every tensor a codec built from `spec` stores, computed without allocating
/// it: encoder, decoder and quantizer parameters followed by codebook state.
std::vector<ParamInfo> codec_inventory(const CodecSpec& spec);
std::size_t inventory_scalars(const std::vector<ParamInfo>& inv);

template <typename T>
struct Reconstruction {
    std::vector<Var<T>> audio;  // one per input clip, cropped to its length
    QuantizeOutput<T> quant;    // over all clips' frames, concatenated in order
    std::vector<std::size_t> frames;
};

// Mel front end, ConvNeXt-style encoder stages, grouped residual factorized VQ,
// and a transposed-conv decoder with multi-receptive-field residual blocks.
template <typename T>
class CodecModel {
public:
    /// Fresh parameters seeded from spec.seed; init sources are not consulted.
    explicit CodecModel(const CodecSpec& spec);
    CodecModel(const CodecModel&) = delete;
    CodecModel& operator=(const CodecModel&) = delete;

    const CodecSpec& spec() const { return spec_; }
    ParamSet<T>& params() { return params_; }
    const ParamSet<T>& params() const { return params_; }
    Quantizer<T>& quantizer() { return vq_; }
    const Quantizer<T>& quantizer() const { return vq_; }

    /// Audio [length] -> latents [frames, latent_dim]. With `rng`, drop-path is active.
    Var<T> encode(const Var<T>& audio, Rng* rng = nullptr) const;
    /// Log-mel [frames, n_mels] -> latents [frames, latent_dim].
    Var<T> encode_mel(const Var<T>& mel, Rng* rng = nullptr) const;
    /// Latents [frames, latent_dim] -> audio [frames * hop].
    Var<T> decode(const Var<T>& latents) const;

    /// Encodes every clip, quantizes all frames in one call (EMA step when
    /// `train`), decodes each clip and crops it to its input length.
    Reconstruction<T> reconstruct(const std::vector<Var<T>>& clips, bool train, Rng* rng = nullptr);

    /// Code indices of one clip, indices[g][r][frame].
    std::vector<std::vector<std::vector<std::uint32_t>>> tokenize(const AudioBuffer& audio);
    AudioBuffer detokenize(const std::vector<std::vector<std::vector<std::uint32_t>>>& codes) const;

    /// Names of tensors belonging to a part: "encoder", "decoder" or "vq".
    std::vector<std::string> part_names(const std::string& part) const;

    Checkpoint to_checkpoint() const;
    /// Copies the tensors of `part` from ckpt bitwise, rejecting a missing tensor
    /// or a shape mismatch by name. For "vq" codebook state is loaded too.
    void load_part(const Checkpoint& ckpt, const std::string& part);
    void load_all(const Checkpoint& ckpt);

private:
    const Layer<T>& L(const std::string& name) const;
    Var<T> resblock(const Var<T>& x, const std::string& base, std::size_t kernel,
                    const std::vector<std::size_t>& dilations) const;

    CodecSpec spec_;
    ParamSet<T> params_;
    std::map<std::string, Layer<T>> layers_;
    Quantizer<T> vq_;
    std::vector<double> drop_rates_;
};

/// Scratch parts seeded from spec.seed; from(checkpoint) parts copied bitwise.
std::unique_ptr<CodecModel<float>> build_codec(const CodecSpec& spec);

/// Rebuilds a model (spec from the checkpoint metadata) with every tensor restored.
std::unique_ptr<CodecModel<float>> codec_from_checkpoint(const Checkpoint& ckpt);
std::unique_ptr<CodecModel<float>> load_codec(const std::filesystem::path& path);
void save_codec(const CodecModel<float>& model, const std::filesystem::path& path);

/// Reads spec metadata from a checkpoint.
CodecSpec checkpoint_spec(const Checkpoint& ckpt);

/// Copies parameter values and codebook state between models of the same spec shape.
template <typename T, typename U>
void copy_model_state(const CodecModel<T>& from, CodecModel<U>& to);

}  // namespace vqd
