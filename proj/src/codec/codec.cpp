#include "vqd/codec/codec.hpp"

#include <cmath>
#include <numeric>
#include <stdexcept>

#include "vqd/util/strict_json.hpp"

namespace vqd {

using nlohmann::json;

std::string InitSource::str() const { return checkpoint ? "from:" + checkpoint->string() : "scratch"; }

InitSource InitSource::parse(const std::string& s) {
    if (s == "scratch") return scratch();
    if (s.rfind("from:", 0) == 0 && s.size() > 5) return from(s.substr(5));
    throw std::invalid_argument("init source must be 'scratch' or 'from:<checkpoint>', got '" + s + "'");
}

void EncoderSpec::validate() const {
    if (depths.empty() || depths.size() != dims.size()) {
        throw std::invalid_argument("encoder: depths and dims must be nonempty and of equal length");
    }
    for (auto d : dims) {
        if (d < 1) throw std::invalid_argument("encoder: dims must be >= 1");
    }
    for (auto d : depths) {
        if (d < 1) throw std::invalid_argument("encoder: depths must be >= 1");
    }
    if (kernel < 1 || kernel % 2 == 0) throw std::invalid_argument("encoder: kernel must be odd");
    if (expansion < 1) throw std::invalid_argument("encoder: expansion must be >= 1");
    if (!(drop_rate >= 0.0 && drop_rate < 1.0)) throw std::invalid_argument("encoder: drop_rate must be in [0, 1)");
}

void DecoderSpec::validate() const {
    if (rates.empty()) throw std::invalid_argument("decoder: needs at least one upsampler");
    for (auto r : rates) {
        if (r < 1) throw std::invalid_argument("decoder: rates must be >= 1");
    }
    if (resblock_kernels.empty() || resblock_kernels.size() != resblock_dilations.size()) {
        throw std::invalid_argument("decoder: resblock kernel and dilation lists must be nonempty and of equal length");
    }
    for (std::size_t i = 0; i < resblock_kernels.size(); ++i) {
        if (resblock_kernels[i] % 2 == 0) throw std::invalid_argument("decoder: resblock kernels must be odd");
        if (resblock_dilations[i].empty()) throw std::invalid_argument("decoder: empty dilation list");
        for (auto d : resblock_dilations[i]) {
            if (d < 1) throw std::invalid_argument("decoder: dilations must be >= 1");
        }
    }
    if (pre_kernel % 2 == 0 || post_kernel % 2 == 0) throw std::invalid_argument("decoder: pre/post kernels must be odd");
    if (channels < 1) throw std::invalid_argument("decoder: channels must be >= 1");
}

std::size_t DecoderSpec::hop() const {
    return std::accumulate(rates.begin(), rates.end(), std::size_t{1}, std::multiplies<>());
}

std::size_t DecoderSpec::channels_after(std::size_t n) const {
    std::size_t c = channels;
    for (std::size_t i = 0; i < n; ++i) c = std::max<std::size_t>(1, c / 2);
    return c;
}

void CodecSpec::validate() const {
    encoder.validate();
    decoder.validate();
    mel.validate();
    if (decoder.hop() != mel.hop) {
        throw std::invalid_argument("codec: product of decoder rates (" + std::to_string(decoder.hop()) +
                                    ") must equal the mel hop (" + std::to_string(mel.hop) + ")");
    }
    vq_config().validate();
}

VQConfig CodecSpec::vq_config() const {
    VQConfig c;
    c.n_residual = n_residual;
    c.n_group = n_group;
    c.n_codes = n_codes;
    c.code_dim = code_dim;
    c.latent_dim = latent_dim();
    c.ema_decay = ema_decay;
    c.factorized = factorized;
    c.commitment_weight = commitment_weight;
    return c;
}

double CodecSpec::tokens_per_second() const {
    return static_cast<double>(mel.sample_rate) / static_cast<double>(mel.hop);
}

double CodecSpec::bandwidth_bps() const {
    return tokens_per_second() * static_cast<double>(n_group * n_residual) * std::log2(static_cast<double>(n_codes));
}

CodecSpec CodecSpec::full_teacher() {
    CodecSpec s;
    s.n_residual = 8;
    s.n_group = 4;
    s.n_codes = 1024;
    s.code_dim = 512;
    return s;
}

CodecSpec CodecSpec::full_student(const std::filesystem::path& teacher_ckpt) {
    CodecSpec s;
    s.n_residual = 1;
    s.n_group = 1;
    s.n_codes = 32768;
    s.code_dim = 3584;
    s.encoder_init = InitSource::from(teacher_ckpt);
    s.decoder_init = InitSource::from(teacher_ckpt);
    s.seed = 1;
    return s;
}

CodecSpec CodecSpec::desk_teacher() {
    CodecSpec s;
    s.n_residual = 2;
    s.n_group = 2;
    s.n_codes = 16;
    s.code_dim = 8;
    s.mel = MelConfig::desk();
    s.encoder.depths = {1, 1};
    s.encoder.dims = {32, 32};
    s.encoder.drop_rate = 0.0;
    s.encoder.expansion = 2;
    s.decoder.rates = {4, 4, 4};
    s.decoder.channels = 32;
    return s;
}

CodecSpec CodecSpec::desk_student(const std::filesystem::path& teacher_ckpt) {
    CodecSpec s = desk_teacher();
    s.n_residual = 1;
    s.n_group = 1;
    s.n_codes = 64;
    s.code_dim = 16;
    s.encoder_init = InitSource::from(teacher_ckpt);
    s.decoder_init = InitSource::from(teacher_ckpt);
    s.seed = 1;
    return s;
}

json to_json(const MelConfig& c) {
    return json{{"sample_rate", c.sample_rate}, {"n_mels", c.n_mels}, {"hop", c.hop},        {"window", c.window},
                {"fmin", c.fmin},               {"fmax", c.fmax},     {"segment", c.segment}};
}

MelConfig mel_config_from_json(const json& j, const std::string& context) {
    MelConfig c;
    StrictReader r(j, context);
    r.get("sample_rate", c.sample_rate).get("n_mels", c.n_mels).get("hop", c.hop).get("window", c.window);
    r.get("fmin", c.fmin).get("fmax", c.fmax).get("segment", c.segment);
    r.finish();
    return c;
}

namespace {

MelConfig merge_mel(const json& j, MelConfig c, const std::string& context) {
    StrictReader r(j, context);
    r.get("sample_rate", c.sample_rate).get("n_mels", c.n_mels).get("hop", c.hop).get("window", c.window);
    r.get("fmin", c.fmin).get("fmax", c.fmax).get("segment", c.segment);
    r.finish();
    return c;
}

}  // namespace

json to_json(const CodecSpec& s) {
    return json{{"n_residual", s.n_residual},
                {"n_group", s.n_group},
                {"n_codes", s.n_codes},
                {"code_dim", s.code_dim},
                {"encoder_init", s.encoder_init.str()},
                {"decoder_init", s.decoder_init.str()},
                {"vq_init", s.vq_init.str()},
                {"factorized", s.factorized},
                {"ema_decay", s.ema_decay},
                {"commitment_weight", s.commitment_weight},
                {"seed", s.seed},
                {"encoder",
                 {{"depths", s.encoder.depths},
                  {"dims", s.encoder.dims},
                  {"drop_rate", s.encoder.drop_rate},
                  {"kernel", s.encoder.kernel},
                  {"expansion", s.encoder.expansion}}},
                {"decoder",
                 {{"rates", s.decoder.rates},
                  {"resblock_kernels", s.decoder.resblock_kernels},
                  {"resblock_dilations", s.decoder.resblock_dilations},
                  {"pre_kernel", s.decoder.pre_kernel},
                  {"post_kernel", s.decoder.post_kernel},
                  {"channels", s.decoder.channels}}},
                {"mel", to_json(s.mel)}};
}

CodecSpec codec_spec_from_json(const json& j, CodecSpec s, const std::string& context) {
    StrictReader r(j, context);
    r.get("n_residual", s.n_residual).get("n_group", s.n_group).get("n_codes", s.n_codes).get("code_dim", s.code_dim);
    std::string enc = s.encoder_init.str(), dec = s.decoder_init.str(), vq = s.vq_init.str();
    r.get("encoder_init", enc).get("decoder_init", dec).get("vq_init", vq);
    s.encoder_init = InitSource::parse(enc);
    s.decoder_init = InitSource::parse(dec);
    s.vq_init = InitSource::parse(vq);
    r.get("factorized", s.factorized).get("ema_decay", s.ema_decay).get("commitment_weight", s.commitment_weight);
    r.get("seed", s.seed);
    r.section("encoder", [&](const json& e, const std::string& ctx) {
        StrictReader er(e, ctx);
        er.get("depths", s.encoder.depths).get("dims", s.encoder.dims).get("drop_rate", s.encoder.drop_rate);
        er.get("kernel", s.encoder.kernel).get("expansion", s.encoder.expansion);
        er.finish();
    });
    r.section("decoder", [&](const json& d, const std::string& ctx) {
        StrictReader dr(d, ctx);
        dr.get("rates", s.decoder.rates).get("resblock_kernels", s.decoder.resblock_kernels);
        dr.get("resblock_dilations", s.decoder.resblock_dilations).get("pre_kernel", s.decoder.pre_kernel);
        dr.get("post_kernel", s.decoder.post_kernel).get("channels", s.decoder.channels);
        dr.finish();
    });
    r.section("mel", [&](const json& m, const std::string& ctx) { s.mel = merge_mel(m, s.mel, ctx); });
    r.finish();
    return s;
}

namespace {

using Plan = std::vector<std::pair<std::string, LayerSpec>>;

std::string stage_name(std::size_t i) { return "encoder/stages/" + std::to_string(i); }
std::string block_name(std::size_t i, std::size_t b) { return stage_name(i) + "/blocks/" + std::to_string(b); }
std::string mrf_name(std::size_t up, std::size_t k, std::size_t d) {
    return "decoder/mrf/" + std::to_string(up) + "/" + std::to_string(k) + "/" + std::to_string(d);
}

// Kernel and padding that make a transposed conv upsample by exactly `rate`.
std::pair<std::size_t, std::size_t> upsample_geometry(std::size_t rate) {
    const std::size_t k = rate % 2 == 0 ? 2 * rate : 2 * rate + 1;
    return {k, (k - rate) / 2};
}

Plan layer_plan(const CodecSpec& s) {
    const EncoderSpec& e = s.encoder;
    const DecoderSpec& d = s.decoder;
    Plan p;
    p.emplace_back("encoder/stem/conv", LayerSpec::conv1d_same(s.mel.n_mels, e.dims[0], e.kernel));
    p.emplace_back("encoder/stem/norm", LayerSpec::layer_norm(e.dims[0]));
    for (std::size_t i = 0; i < e.dims.size(); ++i) {
        const std::size_t c = e.dims[i];
        if (i > 0) {
            p.emplace_back(stage_name(i) + "/down/norm", LayerSpec::layer_norm(e.dims[i - 1]));
            p.emplace_back(stage_name(i) + "/down/conv", LayerSpec::conv1d(e.dims[i - 1], c, 1, 1, 0));
        }
        for (std::size_t b = 0; b < e.depths[i]; ++b) {
            p.emplace_back(block_name(i, b) + "/dw", LayerSpec::depthwise_conv1d(c, e.kernel));
            p.emplace_back(block_name(i, b) + "/norm", LayerSpec::layer_norm(c));
            p.emplace_back(block_name(i, b) + "/pw1", LayerSpec::conv1d(c, c * e.expansion, 1, 1, 0));
            p.emplace_back(block_name(i, b) + "/pw2", LayerSpec::conv1d(c * e.expansion, c, 1, 1, 0));
        }
    }
    p.emplace_back("encoder/final_norm", LayerSpec::layer_norm(e.latent_dim()));

    p.emplace_back("decoder/pre", LayerSpec::conv1d_same(e.latent_dim(), d.channels, d.pre_kernel));
    for (std::size_t u = 0; u < d.rates.size(); ++u) {
        const std::size_t cin = d.channels_after(u), cout = d.channels_after(u + 1);
        const auto [k, pad] = upsample_geometry(d.rates[u]);
        p.emplace_back("decoder/up/" + std::to_string(u), LayerSpec::conv_transpose1d(cin, cout, k, d.rates[u], pad));
        for (std::size_t j = 0; j < d.resblock_kernels.size(); ++j) {
            for (std::size_t m = 0; m < d.resblock_dilations[j].size(); ++m) {
                const std::size_t kk = d.resblock_kernels[j];
                p.emplace_back(mrf_name(u, j, m) + "/dilated",
                               LayerSpec::conv1d_same(cout, cout, kk, d.resblock_dilations[j][m]));
                p.emplace_back(mrf_name(u, j, m) + "/plain", LayerSpec::conv1d_same(cout, cout, kk, 1));
            }
        }
    }
    p.emplace_back("decoder/post", LayerSpec::conv1d_same(d.channels_after(d.rates.size()), 1, d.post_kernel));
    return p;
}

Rng part_rng(std::uint64_t seed, std::uint64_t part) {
    std::seed_seq seq{static_cast<std::uint32_t>(seed), static_cast<std::uint32_t>(seed >> 32),
                      static_cast<std::uint32_t>(part)};
    return Rng(seq);
}

bool in_part(const std::string& name, const std::string& part) {
    return name.size() > part.size() && name.compare(0, part.size(), part) == 0 && name[part.size()] == '/';
}

}  // namespace

std::vector<ParamInfo> codec_inventory(const CodecSpec& spec) {
    spec.validate();
    std::vector<ParamInfo> out;
    for (const auto& [name, ls] : layer_plan(spec)) {
        for (auto& [n, shape] : layer_parameter_shapes(ls, name)) out.push_back({n, shape});
    }
    const VQConfig vq = spec.vq_config();
    for (auto& [n, shape] : Quantizer<float>::parameter_shapes(vq)) out.push_back({n, shape});
    for (auto& [n, shape] : Quantizer<float>::state_shapes(vq)) out.push_back({n, shape});
    return out;
}

std::size_t inventory_scalars(const std::vector<ParamInfo>& inv) {
    std::size_t n = 0;
    for (const auto& p : inv) n += numel(p.shape);
    return n;
}

template <typename T>
CodecModel<T>::CodecModel(const CodecSpec& spec) : spec_(spec) {
    spec_.validate();
    Rng enc_rng = part_rng(spec_.seed, 1), dec_rng = part_rng(spec_.seed, 2), vq_rng = part_rng(spec_.seed, 3);
    for (const auto& [name, ls] : layer_plan(spec_)) {
        Rng& rng = in_part(name, "encoder") ? enc_rng : dec_rng;
        layers_.emplace(name, Layer<T>(ls, name, params_, rng));
    }
    vq_ = Quantizer<T>(spec_.vq_config(), params_, vq_rng);
    std::size_t blocks = 0;
    for (auto d : spec_.encoder.depths) blocks += d;
    for (std::size_t b = 0; b < blocks; ++b) {
        drop_rates_.push_back(blocks == 1 ? 0.0
                                          : spec_.encoder.drop_rate * static_cast<double>(b) /
                                                static_cast<double>(blocks - 1));
    }
}

template <typename T>
const Layer<T>& CodecModel<T>::L(const std::string& name) const {
    auto it = layers_.find(name);
    if (it == layers_.end()) throw std::logic_error("codec: no layer '" + name + "'");
    return it->second;
}

template <typename T>
Var<T> CodecModel<T>::encode(const Var<T>& audio, Rng* rng) const {
    return encode_mel(log_mel(audio, spec_.mel), rng);
}

template <typename T>
Var<T> CodecModel<T>::encode_mel(const Var<T>& mel, Rng* rng) const {
    if (mel.shape().size() != 2 || mel.shape()[1] != spec_.mel.n_mels) {
        throw ShapeError("encode: expected mel [frames, " + std::to_string(spec_.mel.n_mels) + "], got " +
                         shape_str(mel.shape()));
    }
    const EncoderSpec& e = spec_.encoder;
    Var<T> x = transpose(mel);
    x = L("encoder/stem/norm").forward(L("encoder/stem/conv").forward(x));
    std::size_t block = 0;
    for (std::size_t i = 0; i < e.dims.size(); ++i) {
        if (i > 0) {
            x = L(stage_name(i) + "/down/conv").forward(L(stage_name(i) + "/down/norm").forward(x));
        }
        for (std::size_t b = 0; b < e.depths[i]; ++b, ++block) {
            const double p = drop_rates_[block];
            bool keep = true;
            if (rng != nullptr && p > 0.0) keep = std::uniform_real_distribution<double>(0.0, 1.0)(*rng) >= p;
            if (!keep) continue;
            const std::string n = block_name(i, b);
            Var<T> h = L(n + "/dw").forward(x);
            h = L(n + "/norm").forward(h);
            h = gelu(L(n + "/pw1").forward(h));
            h = L(n + "/pw2").forward(h);
            if (rng != nullptr && p > 0.0) h = scale(h, static_cast<T>(1.0 / (1.0 - p)));
            x = add(x, h);
        }
    }
    x = L("encoder/final_norm").forward(x);
    return transpose(x);
}

template <typename T>
Var<T> CodecModel<T>::resblock(const Var<T>& x, const std::string& base, std::size_t,
                               const std::vector<std::size_t>& dilations) const {
    Var<T> h = x;
    for (std::size_t m = 0; m < dilations.size(); ++m) {
        const std::string n = base + "/" + std::to_string(m);
        Var<T> t = L(n + "/dilated").forward(leaky_relu(h, T(0.1)));
        t = L(n + "/plain").forward(leaky_relu(t, T(0.1)));
        h = add(h, t);
    }
    return h;
}

template <typename T>
Var<T> CodecModel<T>::decode(const Var<T>& latents) const {
    if (latents.shape().size() != 2 || latents.shape()[1] != spec_.latent_dim()) {
        throw ShapeError("decode: expected latents [frames, " + std::to_string(spec_.latent_dim()) + "], got " +
                         shape_str(latents.shape()));
    }
    const DecoderSpec& d = spec_.decoder;
    Var<T> x = L("decoder/pre").forward(transpose(latents));
    for (std::size_t u = 0; u < d.rates.size(); ++u) {
        x = L("decoder/up/" + std::to_string(u)).forward(leaky_relu(x, T(0.1)));
        Var<T> acc;
        for (std::size_t j = 0; j < d.resblock_kernels.size(); ++j) {
            const std::string base = "decoder/mrf/" + std::to_string(u) + "/" + std::to_string(j);
            Var<T> r = resblock(x, base, d.resblock_kernels[j], d.resblock_dilations[j]);
            acc = acc.valid() ? add(acc, r) : r;
        }
        x = scale(acc, static_cast<T>(1.0 / static_cast<double>(d.resblock_kernels.size())));
    }
    x = tanh(L("decoder/post").forward(leaky_relu(x, T(0.01))));
    return reshape(x, Shape{x.shape()[1]});
}

template <typename T>
Reconstruction<T> CodecModel<T>::reconstruct(const std::vector<Var<T>>& clips, bool train, Rng* rng) {
    if (clips.empty()) throw std::invalid_argument("reconstruct: no clips");
    Reconstruction<T> out;
    std::vector<Var<T>> latents;
    for (const auto& c : clips) {
        if (c.shape().size() != 1 || c.size() == 0) {
            throw ShapeError("reconstruct: clips must be nonempty 1-D audio, got " + shape_str(c.shape()));
        }
        latents.push_back(encode(c, train ? rng : nullptr));
        out.frames.push_back(latents.back().shape()[0]);
    }
    Var<T> all = latents.size() == 1 ? latents[0] : concat(latents, 0);
    out.quant = vq_.quantize(all, train, rng);
    std::size_t offset = 0;
    for (std::size_t i = 0; i < clips.size(); ++i) {
        Var<T> q = clips.size() == 1 ? out.quant.quantized : slice(out.quant.quantized, 0, offset, out.frames[i]);
        offset += out.frames[i];
        Var<T> y = decode(q);
        out.audio.push_back(slice(y, 0, 0, clips[i].size()));
    }
    return out;
}

template <typename T>
std::vector<std::vector<std::vector<std::uint32_t>>> CodecModel<T>::tokenize(const AudioBuffer& audio) {
    audio.validate();
    if (audio.sample_rate != spec_.mel.sample_rate) {
        throw std::invalid_argument("encode: audio sample rate " + std::to_string(audio.sample_rate) +
                                    " does not match model rate " + std::to_string(spec_.mel.sample_rate));
    }
    Tensor<T> t(Shape{audio.samples.size()});
    for (std::size_t i = 0; i < t.size(); ++i) t[i] = static_cast<T>(audio.samples[i]);
    return vq_.quantize(encode(Var<T>::constant(std::move(t))), false).indices;
}

template <typename T>
AudioBuffer CodecModel<T>::detokenize(const std::vector<std::vector<std::vector<std::uint32_t>>>& codes) const {
    Var<T> y = decode(vq_.dequantize(codes));
    AudioBuffer out;
    out.sample_rate = spec_.mel.sample_rate;
    out.samples.resize(y.size());
    for (std::size_t i = 0; i < y.size(); ++i) out.samples[i] = static_cast<float>(y.value()[i]);
    return out;
}

template <typename T>
std::vector<std::string> CodecModel<T>::part_names(const std::string& part) const {
    if (part != "encoder" && part != "decoder" && part != "vq") {
        throw std::invalid_argument("unknown codec part '" + part + "'");
    }
    std::vector<std::string> out;
    for (const auto& [name, _] : params_.entries()) {
        if (in_part(name, part)) out.push_back(name);
    }
    if (part == "vq") {
        for (const auto& [name, _] : Quantizer<T>::state_shapes(spec_.vq_config())) out.push_back(name);
    }
    return out;
}

template <typename T>
Checkpoint CodecModel<T>::to_checkpoint() const {
    Checkpoint c;
    c.metadata = json{{"kind", "codec"}, {"spec", to_json(spec_)}};
    for (const auto& [name, v] : params_.entries()) c.put(name, v.value().template cast<float>());
    vq_.save_state(c);
    return c;
}

template <typename T>
void CodecModel<T>::load_part(const Checkpoint& ckpt, const std::string& part) {
    for (const auto& name : part_names(part)) {
        if (!params_.contains(name)) continue;
        const Tensor<float>* t = ckpt.find(name);
        if (t == nullptr) throw std::invalid_argument("checkpoint is missing tensor '" + name + "'");
        params_.assign(name, t->template cast<T>());
    }
    if (part == "vq") vq_.load_state(ckpt);
}

template <typename T>
void CodecModel<T>::load_all(const Checkpoint& ckpt) {
    for (const char* part : {"encoder", "decoder", "vq"}) load_part(ckpt, part);
}

CodecSpec checkpoint_spec(const Checkpoint& ckpt) {
    if (!ckpt.metadata.contains("spec") || ckpt.metadata.value("kind", "") != "codec") {
        throw std::invalid_argument("checkpoint does not hold a codec (missing codec metadata)");
    }
    return codec_spec_from_json(ckpt.metadata.at("spec"));
}

std::unique_ptr<CodecModel<float>> build_codec(const CodecSpec& spec) {
    auto model = std::make_unique<CodecModel<float>>(spec);
    const std::pair<const InitSource*, const char*> parts[] = {
        {&spec.encoder_init, "encoder"}, {&spec.decoder_init, "decoder"}, {&spec.vq_init, "vq"}};
    for (const auto& [src, part] : parts) {
        if (src->is_scratch()) continue;
        model->load_part(load_checkpoint(*src->checkpoint), part);
    }
    return model;
}

std::unique_ptr<CodecModel<float>> codec_from_checkpoint(const Checkpoint& ckpt) {
    auto model = std::make_unique<CodecModel<float>>(checkpoint_spec(ckpt));
    model->load_all(ckpt);
    return model;
}

std::unique_ptr<CodecModel<float>> load_codec(const std::filesystem::path& path) {
    return codec_from_checkpoint(load_checkpoint(path));
}

void save_codec(const CodecModel<float>& model, const std::filesystem::path& path) {
    save_checkpoint(path, model.to_checkpoint());
}

template <typename T, typename U>
void copy_model_state(const CodecModel<T>& from, CodecModel<U>& to) {
    for (const auto& [name, v] : from.params().entries()) to.params().assign(name, v.value().template cast<U>());
    for (std::size_t i = 0; i < from.quantizer().codebooks().size(); ++i) {
        const auto& a = from.quantizer().codebooks()[i];
        auto& b = to.quantizer().codebooks().at(i);
        b.embeddings = a.embeddings.template cast<U>();
        b.cluster_size = a.cluster_size.template cast<U>();
        b.embed_sum = a.embed_sum.template cast<U>();
        b.staleness = a.staleness;
        b.initialized = a.initialized;
    }
}

template class CodecModel<float>;
template class CodecModel<double>;
template void copy_model_state<float, double>(const CodecModel<float>&, CodecModel<double>&);
template void copy_model_state<double, float>(const CodecModel<double>&, CodecModel<float>&);
template void copy_model_state<float, float>(const CodecModel<float>&, CodecModel<float>&);

}  // namespace vqd
