#ifndef WF_MODEL_HPP
#define WF_MODEL_HPP

#include <cstdint>
#include <cstring>
#include <fstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "wf/autodiff.hpp"
#include "wf/errors.hpp"
#include "wf/mixer.hpp"
#include "wf/rng.hpp"

namespace wf {

enum class Activation { gelu, identity };

inline std::string to_string(Activation a) {
    return a == Activation::gelu ? "gelu" : "identity";
}

inline Activation activation_from_string(const std::string& s) {
    if (s == "gelu") return Activation::gelu;
    if (s == "identity") return Activation::identity;
    throw ArgumentError("unknown activation: " + s);
}

inline std::string to_string(Nonlinearity n) {
    return n == Nonlinearity::relu_split ? "relu_split" : "identity";
}

inline Nonlinearity nonlinearity_from_string(const std::string& s) {
    if (s == "relu_split") return Nonlinearity::relu_split;
    if (s == "identity") return Nonlinearity::identity;
    throw ArgumentError("unknown nonlinearity: " + s);
}

/// Architecture hyperparameters of one forecasting model instance.
struct ModelConfig {
    std::size_t input_steps = 6;  // T
    std::size_t grid_h = 32;
    std::size_t grid_w = 64;
    std::size_t channels_dyn = 69;
    std::size_t channels_static = 2;
    std::size_t patch_t = 2;
    std::size_t patch_h = 1;
    std::size_t patch_w = 1;
    std::size_t embed_dim = 1024;  // D
    std::size_t layers = 12;       // L
    std::size_t mixer_blocks = 4;  // k
    std::size_t mlp_ratio = 4;     // channel-MLP hidden width = ratio * D
    std::size_t decoder_depth = 1; // 3x3 conv layers before the linear head
    MixerMode mixer_mode = MixerMode::pafno;
    Nonlinearity mixer_nonlinearity = Nonlinearity::relu_split;
    Activation activation = Activation::gelu;
    bool use_temporal_mixer = true;
    bool use_layer_norm = true;

    std::size_t channels() const { return channels_dyn + channels_static; }
    std::size_t tokens_t() const { return input_steps / patch_t; }
    std::size_t tokens_h() const { return grid_h / patch_h; }
    std::size_t tokens_w() const { return grid_w / patch_w; }
    std::size_t patch_len() const { return patch_t * patch_h * patch_w * channels(); }
    std::size_t head_len() const { return patch_h * patch_w * channels_dyn; }

    std::vector<std::size_t> spatial_grid() const { return {tokens_h(), tokens_w()}; }
    std::vector<std::size_t> temporal_grid() const { return {tokens_t()}; }
    std::size_t spatial_bins() const { return retained_bins(spatial_grid()); }
    std::size_t temporal_bins() const { return retained_bins(temporal_grid()); }

    MixerConfig spatial_mixer() const {
        return {MixerDomain::spatial, embed_dim, mixer_blocks, mixer_mode, mixer_nonlinearity};
    }
    MixerConfig temporal_mixer() const {
        return {MixerDomain::temporal, embed_dim, mixer_blocks, mixer_mode, mixer_nonlinearity};
    }

    void validate() const {
        if (channels_dyn < 1) throw ArgumentError("ModelConfig: need at least one dynamic channel");
        if (patch_t == 0 || patch_h == 0 || patch_w == 0)
            throw ArgumentError("ModelConfig: zero patch extent");
        if (input_steps % patch_t || grid_h % patch_h || grid_w % patch_w)
            throw ArgumentError("ModelConfig: grid extents must be divisible by patch sizes");
        if (embed_dim == 0 || mixer_blocks == 0 || embed_dim % mixer_blocks)
            throw ArgumentError("ModelConfig: embed_dim must be divisible by mixer_blocks");
        if (decoder_depth == 0) throw ArgumentError("ModelConfig: decoder needs at least one conv");
    }
};

inline void to_json(nlohmann::json& j, const ModelConfig& c) {
    j = nlohmann::json{{"input_steps", c.input_steps},
                       {"grid_h", c.grid_h},
                       {"grid_w", c.grid_w},
                       {"channels_dyn", c.channels_dyn},
                       {"channels_static", c.channels_static},
                       {"patch_t", c.patch_t},
                       {"patch_h", c.patch_h},
                       {"patch_w", c.patch_w},
                       {"embed_dim", c.embed_dim},
                       {"layers", c.layers},
                       {"mixer_blocks", c.mixer_blocks},
                       {"mlp_ratio", c.mlp_ratio},
                       {"decoder_depth", c.decoder_depth},
                       {"mixer_mode", to_string(c.mixer_mode)},
                       {"mixer_nonlinearity", to_string(c.mixer_nonlinearity)},
                       {"activation", to_string(c.activation)},
                       {"use_temporal_mixer", c.use_temporal_mixer},
                       {"use_layer_norm", c.use_layer_norm}};
}

inline void from_json(const nlohmann::json& j, ModelConfig& c) {
    j.at("input_steps").get_to(c.input_steps);
    j.at("grid_h").get_to(c.grid_h);
    j.at("grid_w").get_to(c.grid_w);
    j.at("channels_dyn").get_to(c.channels_dyn);
    j.at("channels_static").get_to(c.channels_static);
    j.at("patch_t").get_to(c.patch_t);
    j.at("patch_h").get_to(c.patch_h);
    j.at("patch_w").get_to(c.patch_w);
    j.at("embed_dim").get_to(c.embed_dim);
    j.at("layers").get_to(c.layers);
    j.at("mixer_blocks").get_to(c.mixer_blocks);
    j.at("mlp_ratio").get_to(c.mlp_ratio);
    j.at("decoder_depth").get_to(c.decoder_depth);
    c.mixer_mode = mixer_mode_from_string(j.at("mixer_mode").get<std::string>());
    c.mixer_nonlinearity = nonlinearity_from_string(j.at("mixer_nonlinearity").get<std::string>());
    c.activation = activation_from_string(j.at("activation").get<std::string>());
    j.at("use_temporal_mixer").get_to(c.use_temporal_mixer);
    j.at("use_layer_norm").get_to(c.use_layer_norm);
}

enum class ParamGroup { embedding, norm, lambda, mixer_mlp, channel_mlp, decoder };

inline const char* to_string(ParamGroup g) {
    switch (g) {
        case ParamGroup::embedding: return "embedding";
        case ParamGroup::norm: return "norm";
        case ParamGroup::lambda: return "lambda";
        case ParamGroup::mixer_mlp: return "mixer_mlp";
        case ParamGroup::channel_mlp: return "channel_mlp";
        case ParamGroup::decoder: return "decoder";
    }
    return "?";
}

/// All learnable state of a model. The flat parameter index is defined by
/// visit_params: it enumerates every field below exactly once, in a fixed
/// order, and every optimizer/gradient/checkpoint array is aligned with it.
struct ModelParams {
    struct Block {
        Field norm1_g, norm1_b;
        SpectralFilter spatial;
        Field norm2_g, norm2_b;
        SpectralFilter temporal;
        Field norm3_g, norm3_b;
        Field mlp_w1, mlp_b1, mlp_w2, mlp_b2;
    };

    ModelConfig cfg;
    Field embed_w, embed_b;
    std::vector<Block> blocks;
    std::vector<Field> conv_w, conv_b;
    Field head_w, head_b;
};

/// Canonical enumeration of every learnable field, in flat-index order.
/// fn(name, group, field&) is invoked once per field.
template <typename MP, typename Fn>
void visit_params(MP& p, Fn&& fn) {
    const ModelConfig& cfg = p.cfg;
    fn("embed.w", ParamGroup::embedding, p.embed_w);
    fn("embed.b", ParamGroup::embedding, p.embed_b);
    for (std::size_t l = 0; l < p.blocks.size(); ++l) {
        auto& b = p.blocks[l];
        const std::string prefix = "block" + std::to_string(l) + ".";
        auto filter_fields = [&](auto& f, const std::string& fp) {
            if (f.mode == MixerMode::fno) {
                fn(fp + "per_freq", ParamGroup::mixer_mlp, f.per_freq);
                return;
            }
            if (f.mode == MixerMode::pafno) fn(fp + "lambda", ParamGroup::lambda, f.lambda);
            fn(fp + "w1", ParamGroup::mixer_mlp, f.w1);
            fn(fp + "b1", ParamGroup::mixer_mlp, f.b1);
            fn(fp + "w2", ParamGroup::mixer_mlp, f.w2);
            fn(fp + "b2", ParamGroup::mixer_mlp, f.b2);
        };
        if (cfg.use_layer_norm) {
            fn(prefix + "norm1.g", ParamGroup::norm, b.norm1_g);
            fn(prefix + "norm1.b", ParamGroup::norm, b.norm1_b);
        }
        filter_fields(b.spatial, prefix + "spatial.");
        if (cfg.use_temporal_mixer) {
            if (cfg.use_layer_norm) {
                fn(prefix + "norm2.g", ParamGroup::norm, b.norm2_g);
                fn(prefix + "norm2.b", ParamGroup::norm, b.norm2_b);
            }
            filter_fields(b.temporal, prefix + "temporal.");
        }
        if (cfg.use_layer_norm) {
            fn(prefix + "norm3.g", ParamGroup::norm, b.norm3_g);
            fn(prefix + "norm3.b", ParamGroup::norm, b.norm3_b);
        }
        fn(prefix + "mlp.w1", ParamGroup::channel_mlp, b.mlp_w1);
        fn(prefix + "mlp.b1", ParamGroup::channel_mlp, b.mlp_b1);
        fn(prefix + "mlp.w2", ParamGroup::channel_mlp, b.mlp_w2);
        fn(prefix + "mlp.b2", ParamGroup::channel_mlp, b.mlp_b2);
    }
    for (std::size_t d = 0; d < p.conv_w.size(); ++d) {
        const std::string prefix = "decoder.conv" + std::to_string(d) + ".";
        fn(prefix + "w", ParamGroup::decoder, p.conv_w[d]);
        fn(prefix + "b", ParamGroup::decoder, p.conv_b[d]);
    }
    fn("decoder.head.w", ParamGroup::decoder, p.head_w);
    fn("decoder.head.b", ParamGroup::decoder, p.head_b);
}

inline std::size_t param_count(const ModelParams& p) {
    std::size_t n = 0;
    visit_params(p, [&](const std::string&, ParamGroup, const Field& f) { n += f.size(); });
    return n;
}

/// Closed-form parameter count as a function of the config alone.
inline std::size_t expected_param_count(const ModelConfig& cfg) {
    const std::size_t D = cfg.embed_dim;
    const std::size_t k = cfg.mixer_blocks;
    const std::size_t m = D / k;
    auto filter_count = [&](std::size_t bins) -> std::size_t {
        if (cfg.mixer_mode == MixerMode::fno) return bins * D * D * 2;
        std::size_t n = 2 * (k * m * m) * 2 + 2 * D * 2; // w1+w2, b1+b2 (complex)
        if (cfg.mixer_mode == MixerMode::pafno) n += bins;
        return n;
    };
    std::size_t n = cfg.patch_len() * D + D; // embedding
    std::size_t per_block = filter_count(cfg.spatial_bins());
    std::size_t norms = cfg.use_layer_norm ? 4 * D : 0; // norm1 + norm3
    if (cfg.use_temporal_mixer) {
        per_block += filter_count(cfg.temporal_bins());
        if (cfg.use_layer_norm) norms += 2 * D;
    }
    const std::size_t R = cfg.mlp_ratio;
    per_block += norms + D * (R * D) + R * D + (R * D) * D + D;
    n += cfg.layers * per_block;
    n += cfg.decoder_depth * (9 * D * D + D);
    n += D * cfg.head_len() + cfg.head_len();
    return n;
}

inline std::vector<double> to_flat(const ModelParams& p) {
    std::vector<double> out;
    out.reserve(param_count(p));
    visit_params(p, [&](const std::string&, ParamGroup, const Field& f) {
        out.insert(out.end(), f.data(), f.data() + f.size());
    });
    return out;
}

inline void from_flat(ModelParams& p, const std::vector<double>& flat) {
    std::size_t off = 0;
    visit_params(p, [&](const std::string&, ParamGroup, Field& f) {
        if (off + f.size() > flat.size()) throw ArgumentError("from_flat: vector too short");
        std::copy_n(flat.data() + off, f.size(), f.data());
        off += f.size();
    });
    if (off != flat.size()) throw ArgumentError("from_flat: vector length mismatch");
}

/// Fresh parameters. All randomness flows through `rng`, drawn in flat-index
/// order; lambda starts at 1 (PAFNO == AFNO at initialization) and mixer w2
/// starts near zero so every block begins close to the identity.
inline ModelParams init_params(const ModelConfig& cfg, Rng& rng) {
    cfg.validate();
    const std::size_t D = cfg.embed_dim;
    auto normal_field = [&](Shape s, double std) {
        Field f(std::move(s));
        for (std::size_t i = 0; i < f.size(); ++i) f[i] = rng.normal(0.0, std);
        return f;
    };
    ModelParams p;
    p.cfg = cfg;
    p.embed_w = normal_field(Shape{cfg.patch_len(), D}, 0.02);
    p.embed_b = Field(Shape{D});
    p.blocks.resize(cfg.layers);
    for (auto& b : p.blocks) {
        b.norm1_g = Field(Shape{D}, 1.0);
        b.norm1_b = Field(Shape{D});
        b.spatial = make_filter(cfg.spatial_mixer(), cfg.spatial_grid(), rng);
        b.norm2_g = Field(Shape{D}, 1.0);
        b.norm2_b = Field(Shape{D});
        if (cfg.use_temporal_mixer)
            b.temporal = make_filter(cfg.temporal_mixer(), cfg.temporal_grid(), rng);
        b.norm3_g = Field(Shape{D}, 1.0);
        b.norm3_b = Field(Shape{D});
        b.mlp_w1 = normal_field(Shape{D, cfg.mlp_ratio * D}, 0.02);
        b.mlp_b1 = Field(Shape{cfg.mlp_ratio * D});
        b.mlp_w2 = normal_field(Shape{cfg.mlp_ratio * D, D}, 0.02);
        b.mlp_b2 = Field(Shape{D});
    }
    p.conv_w.resize(cfg.decoder_depth);
    p.conv_b.resize(cfg.decoder_depth);
    for (std::size_t d = 0; d < cfg.decoder_depth; ++d) {
        p.conv_w[d] = normal_field(Shape{3, 3, D, D}, 0.02);
        p.conv_b[d] = Field(Shape{D});
    }
    p.head_w = normal_field(Shape{D, cfg.head_len()}, 0.02);
    p.head_b = Field(Shape{cfg.head_len()});
    return p;
}

// ---------------------------------------------------------------------------
// Forward graph
// ---------------------------------------------------------------------------

/// Tape handles to every parameter, mirroring ModelParams. Built by
/// register_params in flat-index order (verified against visit_params by
/// field identity, so the two can never silently diverge).
struct ModelVars {
    struct Block {
        ad::Var norm1_g, norm1_b, norm2_g, norm2_b, norm3_g, norm3_b;
        FilterVars spatial, temporal;
        ad::Var mlp_w1, mlp_b1, mlp_w2, mlp_b2;
    };
    std::vector<ad::Var> flat; // leaves in flat-index order
    ad::Var embed_w, embed_b;
    std::vector<Block> blocks;
    std::vector<ad::Var> conv_w, conv_b;
    ad::Var head_w, head_b;
};

inline ModelVars register_params(ad::Tape& tape, const ModelParams& p, bool requires_grad) {
    ModelVars mv;
    std::vector<const Field*> order;
    visit_params(p, [&](const std::string&, ParamGroup, const Field& f) {
        mv.flat.push_back(tape.leaf(f, requires_grad));
        order.push_back(&f);
    });
    std::size_t i = 0;
    auto take = [&](const Field& expect) {
        if (i >= order.size() || order[i] != &expect)
            throw StateError("register_params: enumeration misaligned with visit_params");
        return mv.flat[i++];
    };
    auto take_filter = [&](const SpectralFilter& f) {
        FilterVars v;
        if (f.mode == MixerMode::fno) {
            v.per_freq = take(f.per_freq);
            return v;
        }
        if (f.mode == MixerMode::pafno) v.lambda = take(f.lambda);
        v.w1 = take(f.w1);
        v.b1 = take(f.b1);
        v.w2 = take(f.w2);
        v.b2 = take(f.b2);
        return v;
    };

    mv.embed_w = take(p.embed_w);
    mv.embed_b = take(p.embed_b);
    mv.blocks.resize(p.blocks.size());
    for (std::size_t l = 0; l < p.blocks.size(); ++l) {
        const auto& b = p.blocks[l];
        auto& vb = mv.blocks[l];
        if (p.cfg.use_layer_norm) {
            vb.norm1_g = take(b.norm1_g);
            vb.norm1_b = take(b.norm1_b);
        }
        vb.spatial = take_filter(b.spatial);
        if (p.cfg.use_temporal_mixer) {
            if (p.cfg.use_layer_norm) {
                vb.norm2_g = take(b.norm2_g);
                vb.norm2_b = take(b.norm2_b);
            }
            vb.temporal = take_filter(b.temporal);
        }
        if (p.cfg.use_layer_norm) {
            vb.norm3_g = take(b.norm3_g);
            vb.norm3_b = take(b.norm3_b);
        }
        vb.mlp_w1 = take(b.mlp_w1);
        vb.mlp_b1 = take(b.mlp_b1);
        vb.mlp_w2 = take(b.mlp_w2);
        vb.mlp_b2 = take(b.mlp_b2);
    }
    for (std::size_t d = 0; d < p.conv_w.size(); ++d) {
        mv.conv_w.push_back(take(p.conv_w[d]));
        mv.conv_b.push_back(take(p.conv_b[d]));
    }
    mv.head_w = take(p.head_w);
    mv.head_b = take(p.head_b);
    if (i != order.size()) throw StateError("register_params: unconsumed parameters");
    return mv;
}

/// One factorized space-time block: spatial mixing per time slice, temporal
/// mixing per spatial site, then a channel MLP, each residual.
inline ad::Var sf_block_on_tape(ad::Tape& tape, ad::Var z, const ModelVars::Block& b,
                                const ModelConfig& cfg) {
    auto maybe_norm = [&](ad::Var v, ad::Var g, ad::Var bias) {
        return cfg.use_layer_norm ? tape.layer_norm(v, g, bias) : v;
    };
    // spatial: time slices are a batch axis of the (h, w) transform
    ad::Var a = maybe_norm(z, b.norm1_g, b.norm1_b);
    ad::Var s = mix_on_tape(tape, a, b.spatial, cfg.spatial_mixer(), 1);
    z = tape.add(z, s);

    if (cfg.use_temporal_mixer) {
        a = maybe_norm(z, b.norm2_g, b.norm2_b);
        ad::Var at = tape.transpose(a, {1, 2, 0, 3}); // (h, w, t, D)
        ad::Var tm = mix_on_tape(tape, at, b.temporal, cfg.temporal_mixer(), 2);
        ad::Var back = tape.transpose(tm, {2, 0, 1, 3});
        z = tape.add(z, back);
    }

    a = maybe_norm(z, b.norm3_g, b.norm3_b);
    ad::Var m = tape.bias_add(tape.matmul(a, b.mlp_w1), b.mlp_b1);
    if (cfg.activation == Activation::gelu) m = tape.gelu(m);
    m = tape.bias_add(tape.matmul(m, b.mlp_w2), b.mlp_b2);
    return tape.add(z, m);
}

/// Patch tokenization: each (pt*ph*pw*C)-element patch is linearly embedded
/// to D. No positional embedding is added; position sensitivity comes from
/// the mixer's per-frequency coefficients.
inline ad::Var tokenize_on_tape(ad::Tape& tape, ad::Var x, const ModelVars& mv,
                                const ModelConfig& cfg) {
    ad::Var patches = tape.extract_patches(x, cfg.patch_t, cfg.patch_h, cfg.patch_w);
    return tape.bias_add(tape.matmul(patches, mv.embed_w), mv.embed_b);
}

/// Decoder: last temporal token slice -> 3x3 convs (circular along
/// longitude, replicate along latitude) -> per-token linear head ->
/// de-patchify to the full grid.
inline ad::Var decode_on_tape(ad::Tape& tape, ad::Var z, const ModelVars& mv,
                              const ModelConfig& cfg) {
    ad::Var zl = tape.take_index(z, 0, cfg.tokens_t() - 1); // (h, w, D)
    for (std::size_t d = 0; d < mv.conv_w.size(); ++d) {
        if (d > 0 && cfg.activation == Activation::gelu) zl = tape.gelu(zl);
        zl = tape.conv3x3(zl, mv.conv_w[d], mv.conv_b[d]);
    }
    ad::Var y = tape.bias_add(tape.matmul(zl, mv.head_w), mv.head_b);
    return tape.depatchify(y, cfg.patch_h, cfg.patch_w, cfg.channels_dyn);
}

/// The full single-step predictor on a tape: decode(sf_block^L(tokenize(x))).
inline ad::Var build_forward(ad::Tape& tape, ad::Var x, const ModelVars& mv,
                             const ModelConfig& cfg) {
    const Shape want{cfg.input_steps, cfg.grid_h, cfg.grid_w, cfg.channels()};
    if (tape.val(x).shape() != want)
        throw ShapeError("forward: input must be (T, H, W, C) = " + detail::shape_str(want));
    ad::Var z = tokenize_on_tape(tape, x, mv, cfg);
    for (const auto& b : mv.blocks) z = sf_block_on_tape(tape, z, b, cfg);
    return decode_on_tape(tape, z, mv, cfg);
}

/// Pure single-step prediction (H, W, C_dyn) from a normalized input window.
inline Field forward(const Field& x, const ModelParams& params) {
    ad::Tape tape;
    ad::Var xin = tape.leaf(x, false);
    ModelVars mv = register_params(tape, params, false);
    return tape.val(build_forward(tape, xin, mv, params.cfg));
}

// ---------------------------------------------------------------------------
// Checkpoint format: "WFCK1" magic, u32 LE JSON header length, JSON header
// (format_version + config + param_count), then the flat parameter list as
// little-endian f64 in flat-index order.
// ---------------------------------------------------------------------------

inline constexpr char kCheckpointMagic[5] = {'W', 'F', 'C', 'K', '1'};
inline constexpr std::uint32_t kCheckpointVersion = 1;

inline void save_checkpoint(const ModelParams& p, const std::string& path) {
    nlohmann::json header{{"format_version", kCheckpointVersion},
                          {"config", p.cfg},
                          {"param_count", param_count(p)}};
    const std::string hs = header.dump();
    std::ofstream os(path, std::ios::binary | std::ios::trunc);
    if (!os) throw FormatError(FormatError::Kind::io, "cannot open " + path + " for writing");
    os.write(kCheckpointMagic, 5);
    const std::uint32_t len = static_cast<std::uint32_t>(hs.size());
    char lenb[4] = {static_cast<char>(len & 0xff), static_cast<char>((len >> 8) & 0xff),
                    static_cast<char>((len >> 16) & 0xff), static_cast<char>((len >> 24) & 0xff)};
    os.write(lenb, 4);
    os.write(hs.data(), static_cast<std::streamsize>(hs.size()));
    const std::vector<double> flat = to_flat(p);
    os.write(reinterpret_cast<const char*>(flat.data()),
             static_cast<std::streamsize>(flat.size() * sizeof(double)));
    if (!os) throw FormatError(FormatError::Kind::io, "write failed: " + path);
}

inline ModelParams load_checkpoint(const std::string& path) {
    std::ifstream is(path, std::ios::binary);
    if (!is) throw FormatError(FormatError::Kind::io, "cannot open " + path);
    char magic[5];
    if (!is.read(magic, 5) || std::memcmp(magic, kCheckpointMagic, 5) != 0)
        throw FormatError(FormatError::Kind::bad_magic, "not a WFCK1 checkpoint: " + path);
    unsigned char lenb[4];
    if (!is.read(reinterpret_cast<char*>(lenb), 4))
        throw FormatError(FormatError::Kind::truncated, "checkpoint header truncated");
    const std::uint32_t len = static_cast<std::uint32_t>(lenb[0]) |
                              (static_cast<std::uint32_t>(lenb[1]) << 8) |
                              (static_cast<std::uint32_t>(lenb[2]) << 16) |
                              (static_cast<std::uint32_t>(lenb[3]) << 24);
    std::string hs(len, '\0');
    if (!is.read(hs.data(), len))
        throw FormatError(FormatError::Kind::truncated, "checkpoint header truncated");
    nlohmann::json header;
    try {
        header = nlohmann::json::parse(hs);
    } catch (const nlohmann::json::exception&) {
        throw FormatError(FormatError::Kind::bad_version, "checkpoint header is not valid JSON");
    }
    if (header.value("format_version", 0u) != kCheckpointVersion)
        throw FormatError(FormatError::Kind::bad_version, "unsupported checkpoint version");
    ModelConfig cfg = header.at("config").get<ModelConfig>();
    const std::size_t expect = header.at("param_count").get<std::size_t>();

    Rng dummy(0);
    ModelParams p = init_params(cfg, dummy);
    if (param_count(p) != expect)
        throw FormatError(FormatError::Kind::bad_version,
                          "checkpoint parameter count disagrees with its config");

    std::vector<double> flat(expect);
    if (!is.read(reinterpret_cast<char*>(flat.data()),
                 static_cast<std::streamsize>(expect * sizeof(double))))
        throw FormatError(FormatError::Kind::truncated,
                          "checkpoint payload truncated: expected " +
                              std::to_string(expect * sizeof(double)) + " bytes");
    from_flat(p, flat);
    return p;
}

} // namespace wf

#endif // WF_MODEL_HPP
