#ifndef WF_DATA_HPP
#define WF_DATA_HPP

#include <array>
#include <cmath>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "wf/errors.hpp"
#include "wf/fft.hpp"
#include "wf/field.hpp"
#include "wf/rng.hpp"

namespace wf {

struct ChannelMeta {
    std::string name;
    bool is_static = false;
    double mean = 0.0;
    double std = 1.0;
};

inline void to_json(nlohmann::json& j, const ChannelMeta& m) {
    j = nlohmann::json{{"name", m.name}, {"is_static", m.is_static}, {"mean", m.mean}, {"std", m.std}};
}

inline void from_json(const nlohmann::json& j, ChannelMeta& m) {
    j.at("name").get_to(m.name);
    j.at("is_static").get_to(m.is_static);
    j.at("mean").get_to(m.mean);
    j.at("std").get_to(m.std);
}

/// Half-open snapshot index range.
struct SplitRange {
    std::size_t begin = 0;
    std::size_t end = 0;
    std::size_t length() const { return end - begin; }
};

/// A time-ordered sequence of grid snapshots plus the metadata needed to
/// train on it. Dynamic channels come first, static channels after them.
struct DatasetBundle {
    Field snapshots; // (N_time, H, W, C)
    std::vector<double> latitudes;
    std::vector<ChannelMeta> channel_meta;
    double step_hours = 6.0;
    SplitRange train, val, test;
    bool normalized = false;

    std::size_t n_time() const { return snapshots.extent(0); }
    std::size_t grid_h() const { return snapshots.extent(1); }
    std::size_t grid_w() const { return snapshots.extent(2); }
    std::size_t channels() const { return snapshots.extent(3); }
    std::size_t channels_dyn() const {
        std::size_t n = 0;
        for (const auto& m : channel_meta)
            if (!m.is_static) ++n;
        return n;
    }
};

/// Synthetic toy-atmosphere recipe: per-row zonal advection (fractional
/// columns per step, latitude-dependent speed) with spectral diffusion
/// damping, plus one fixed latitude-ridge static channel.
struct GenConfig {
    std::size_t grid_h = 16;
    std::size_t grid_w = 32;
    std::size_t n_time = 400;
    std::size_t channels_dyn = 2;
    std::uint64_t seed = 0;
    double speed_base = 0.5;         // columns per step at the poles
    double speed_amp = 1.0;          // extra columns per step toward the equator
    std::vector<double> diffusion{5e-4}; // nu per dynamic channel (size 1 broadcasts)
    std::size_t blob_count = 6;
    double blob_scale = 0.25;        // blob sigma ~ scale * min(H, W) cells
    double train_frac = 0.6;
    double val_frac = 0.15;
    double step_hours = 6.0;

    void validate() const {
        if (grid_h * grid_w < 4) throw ArgumentError("GenConfig: grid too small");
        if (channels_dyn == 0) throw ArgumentError("GenConfig: need a dynamic channel");
        if (n_time < 3) throw ArgumentError("GenConfig: need at least 3 snapshots");
        if (diffusion.empty() || (diffusion.size() != 1 && diffusion.size() != channels_dyn))
            throw ArgumentError("GenConfig: diffusion must have 1 or channels_dyn entries");
        for (double nu : diffusion)
            if (nu < 0.0) throw ArgumentError("GenConfig: negative diffusion");
        if (train_frac <= 0 || val_frac < 0 || train_frac + val_frac >= 1.0)
            throw ArgumentError("GenConfig: bad split fractions");
    }

    double nu_for(std::size_t c) const {
        return diffusion.size() == 1 ? diffusion[0] : diffusion[c];
    }
};

inline void to_json(nlohmann::json& j, const GenConfig& c) {
    j = nlohmann::json{{"grid_h", c.grid_h},       {"grid_w", c.grid_w},
                       {"n_time", c.n_time},       {"channels_dyn", c.channels_dyn},
                       {"seed", c.seed},           {"speed_base", c.speed_base},
                       {"speed_amp", c.speed_amp}, {"diffusion", c.diffusion},
                       {"blob_count", c.blob_count}, {"blob_scale", c.blob_scale},
                       {"train_frac", c.train_frac}, {"val_frac", c.val_frac},
                       {"step_hours", c.step_hours}};
}

inline void from_json(const nlohmann::json& j, GenConfig& c) {
    j.at("grid_h").get_to(c.grid_h);
    j.at("grid_w").get_to(c.grid_w);
    j.at("n_time").get_to(c.n_time);
    j.at("channels_dyn").get_to(c.channels_dyn);
    j.at("seed").get_to(c.seed);
    j.at("speed_base").get_to(c.speed_base);
    j.at("speed_amp").get_to(c.speed_amp);
    j.at("diffusion").get_to(c.diffusion);
    j.at("blob_count").get_to(c.blob_count);
    j.at("blob_scale").get_to(c.blob_scale);
    j.at("train_frac").get_to(c.train_frac);
    j.at("val_frac").get_to(c.val_frac);
    j.at("step_hours").get_to(c.step_hours);
}

// ---------------------------------------------------------------------------
// Generator
// ---------------------------------------------------------------------------

/// Cell-center latitudes; poles are excluded by construction.
inline std::vector<double> cell_latitudes(std::size_t h) {
    std::vector<double> lats(h);
    for (std::size_t j = 0; j < h; ++j)
        lats[j] = -90.0 + (static_cast<double>(j) + 0.5) * 180.0 / static_cast<double>(h);
    return lats;
}

/// Zonal advection speed in columns per step for one row.
inline double zonal_speed(const GenConfig& cfg, double lat_deg) {
    return cfg.speed_base + cfg.speed_amp * std::cos(lat_deg * 0.017453292519943295);
}

/// Seeded sum-of-Gaussian-blobs initial conditions, (H, W, C_dyn).
/// Longitude distances wrap, so the fields live naturally on the ring.
inline Field gen_initial(const GenConfig& cfg, Rng& rng) {
    const std::size_t H = cfg.grid_h, W = cfg.grid_w, C = cfg.channels_dyn;
    Field out(Shape{H, W, C});
    const double cell = static_cast<double>(std::min(H, W));
    for (std::size_t c = 0; c < C; ++c) {
        const double offset = rng.normal(0.0, 0.5);
        std::vector<std::array<double, 4>> blobs(cfg.blob_count); // j0, k0, amp, inv2s2
        for (auto& b : blobs) {
            b[0] = rng.uniform() * static_cast<double>(H);
            b[1] = rng.uniform() * static_cast<double>(W);
            b[2] = rng.normal(0.0, 1.0);
            const double sigma = cfg.blob_scale * cell * (0.5 + rng.uniform());
            b[3] = 1.0 / (2.0 * sigma * sigma);
        }
        for (std::size_t j = 0; j < H; ++j)
            for (std::size_t k = 0; k < W; ++k) {
                double v = offset;
                for (const auto& b : blobs) {
                    const double dj = static_cast<double>(j) - b[0];
                    double dk = std::abs(static_cast<double>(k) - b[1]);
                    dk = std::min(dk, static_cast<double>(W) - dk);
                    v += b[2] * std::exp(-(dj * dj + dk * dk) * b[3]);
                }
                out.at(j, k, c) = v;
            }
    }
    return out;
}

/// The fixed "orography" stand-in: a latitude-dependent ridge, constant
/// along longitude. (H, W).
inline Field gen_static(const GenConfig& cfg) {
    Field out(Shape{cfg.grid_h, cfg.grid_w});
    const auto lats = cell_latitudes(cfg.grid_h);
    for (std::size_t j = 0; j < cfg.grid_h; ++j) {
        const double a = (lats[j] - 30.0) / 20.0;
        const double b = (lats[j] + 45.0) / 30.0;
        const double v = std::exp(-a * a) + 0.5 * std::exp(-b * b);
        for (std::size_t k = 0; k < cfg.grid_w; ++k) out.at(j, k) = v;
    }
    return out;
}

/// One step of the dynamics as per-row circular convolution kernels,
/// indexed [channel][row][tap]. Each kernel is the inverse transform of
/// exp(-2 pi i n v_j / W) * exp(-nu_c n^2): a fractional column shift by
/// v_j combined with spectral damping. Stepping by direct summation keeps
/// the dynamics exactly (bitwise) equivariant under longitude rolls.
inline std::vector<std::vector<Field>> advection_kernels(const GenConfig& cfg) {
    const std::size_t W = cfg.grid_w;
    const auto lats = cell_latitudes(cfg.grid_h);
    std::vector<std::vector<Field>> kernels(cfg.channels_dyn);
    for (std::size_t c = 0; c < cfg.channels_dyn; ++c) {
        kernels[c].reserve(cfg.grid_h);
        const double nu = cfg.nu_for(c);
        for (std::size_t j = 0; j < cfg.grid_h; ++j) {
            const double v = zonal_speed(cfg, lats[j]);
            ComplexField spec(Shape{W / 2 + 1});
            for (std::size_t n = 0; n < spec.size(); ++n) {
                const double theta = -6.283185307179586476925286766559 *
                                     static_cast<double>(n) * v / static_cast<double>(W);
                const double damp = std::exp(-nu * static_cast<double>(n * n));
                spec[n] = {damp * std::cos(theta), damp * std::sin(theta)};
            }
            kernels[c].push_back(irdft(spec, {0}, Shape{W}));
        }
    }
    return kernels;
}

/// Advances the dynamic state (H, W, C_dyn) one step.
inline Field gen_step(const Field& dyn, const std::vector<std::vector<Field>>& kernels) {
    const std::size_t H = dyn.extent(0), W = dyn.extent(1), C = dyn.extent(2);
    Field out(dyn.shape());
    for (std::size_t j = 0; j < H; ++j)
        for (std::size_t c = 0; c < C; ++c) {
            const Field& ker = kernels[c][j];
            for (std::size_t k = 0; k < W; ++k) {
                double acc = 0.0;
                for (std::size_t m = 0; m < W; ++m)
                    acc += dyn.at(j, (k + W - m) % W, c) * ker[m];
                out.at(j, k, c) = acc;
            }
        }
    return out;
}

/// Train-split per-channel statistics written into channel_meta.
/// Dynamic channels must not be constant over the train split.
inline void compute_channel_stats(DatasetBundle& b) {
    const std::size_t H = b.grid_h(), W = b.grid_w(), C = b.channels();
    const std::size_t n = b.train.length() * H * W;
    if (b.train.length() == 0) throw ArgumentError("compute_channel_stats: empty train split");
    for (std::size_t c = 0; c < C; ++c) {
        double mean = 0.0;
        for (std::size_t t = b.train.begin; t < b.train.end; ++t)
            for (std::size_t j = 0; j < H; ++j)
                for (std::size_t k = 0; k < W; ++k) mean += b.snapshots.at(t, j, k, c);
        mean /= static_cast<double>(n);
        double var = 0.0;
        for (std::size_t t = b.train.begin; t < b.train.end; ++t)
            for (std::size_t j = 0; j < H; ++j)
                for (std::size_t k = 0; k < W; ++k) {
                    const double d = b.snapshots.at(t, j, k, c) - mean;
                    var += d * d;
                }
        var /= static_cast<double>(n);
        b.channel_meta[c].mean = mean;
        b.channel_meta[c].std = std::sqrt(var);
        if (!b.channel_meta[c].is_static && !(b.channel_meta[c].std > 0.0))
            throw ArgumentError("channel " + b.channel_meta[c].name +
                                " is constant over the train split (zero std)");
    }
}

/// Deterministic synthetic dataset. Snapshots are quantized to f32
/// resolution so the in-memory bundle is identical to its WFR1 encoding.
inline DatasetBundle generate(const GenConfig& cfg) {
    cfg.validate();
    Rng rng = Rng::stream(cfg.seed, "data");
    const std::size_t H = cfg.grid_h, W = cfg.grid_w;
    const std::size_t C = cfg.channels_dyn + 1; // one static channel

    DatasetBundle b;
    b.latitudes = cell_latitudes(H);
    b.step_hours = cfg.step_hours;
    b.snapshots = Field(Shape{cfg.n_time, H, W, C});
    b.snapshots.set_axis_names({"time", "lat", "lon", "channel"});

    Field dyn = gen_initial(cfg, rng);
    const Field oro = gen_static(cfg);
    const auto kernels = advection_kernels(cfg);
    for (std::size_t t = 0; t < cfg.n_time; ++t) {
        if (t > 0) dyn = gen_step(dyn, kernels);
        for (std::size_t j = 0; j < H; ++j)
            for (std::size_t k = 0; k < W; ++k) {
                for (std::size_t c = 0; c < cfg.channels_dyn; ++c)
                    b.snapshots.at(t, j, k, c) =
                        static_cast<double>(static_cast<float>(dyn.at(j, k, c)));
                b.snapshots.at(t, j, k, cfg.channels_dyn) =
                    static_cast<double>(static_cast<float>(oro.at(j, k)));
            }
    }

    b.channel_meta.resize(C);
    for (std::size_t c = 0; c < cfg.channels_dyn; ++c)
        b.channel_meta[c] = {"var" + std::to_string(c), false, 0.0, 1.0};
    b.channel_meta[cfg.channels_dyn] = {"orography", true, 0.0, 1.0};

    const auto n_train = static_cast<std::size_t>(cfg.train_frac * static_cast<double>(cfg.n_time));
    const auto n_val = static_cast<std::size_t>(cfg.val_frac * static_cast<double>(cfg.n_time));
    b.train = {0, n_train};
    b.val = {n_train, n_train + n_val};
    b.test = {n_train + n_val, cfg.n_time};
    compute_channel_stats(b);
    return b;
}

// ---------------------------------------------------------------------------
// Normalization
// ---------------------------------------------------------------------------

/// Standardizes dynamic channels with the stored train-split statistics.
inline DatasetBundle normalize(const DatasetBundle& in) {
    if (in.normalized) throw StateError("normalize: bundle already normalized");
    DatasetBundle out = in;
    const std::size_t C = in.channels();
    const std::size_t cells = in.n_time() * in.grid_h() * in.grid_w();
    for (std::size_t c = 0; c < C; ++c) {
        const auto& m = in.channel_meta[c];
        if (m.is_static) continue;
        if (!(m.std > 0.0)) throw ArgumentError("normalize: zero std for channel " + m.name);
        for (std::size_t i = 0; i < cells; ++i) {
            double& v = out.snapshots[i * C + c];
            v = (v - m.mean) / m.std;
        }
    }
    out.normalized = true;
    return out;
}

/// Exact inverse of normalize.
inline DatasetBundle denormalize(const DatasetBundle& in) {
    if (!in.normalized) throw StateError("denormalize: bundle is not normalized");
    DatasetBundle out = in;
    const std::size_t C = in.channels();
    const std::size_t cells = in.n_time() * in.grid_h() * in.grid_w();
    for (std::size_t c = 0; c < C; ++c) {
        const auto& m = in.channel_meta[c];
        if (m.is_static) continue;
        for (std::size_t i = 0; i < cells; ++i) {
            double& v = out.snapshots[i * C + c];
            v = v * m.std + m.mean;
        }
    }
    out.normalized = false;
    return out;
}

// ---------------------------------------------------------------------------
// Training windows
// ---------------------------------------------------------------------------

/// Start indices of every (T inputs -> 1 target) window inside a split.
/// A window [i, i+T) predicts snapshot i+T; none crosses the split boundary.
inline std::vector<std::size_t> window_starts(const SplitRange& split, std::size_t T) {
    if (T == 0) throw ArgumentError("window_starts: T must be positive");
    if (split.length() < T + 1)
        throw ArgumentError("window_starts: split of " + std::to_string(split.length()) +
                            " snapshots cannot hold a window of " + std::to_string(T) + "+1");
    std::vector<std::size_t> starts;
    starts.reserve(split.length() - T);
    for (std::size_t i = split.begin; i + T < split.end; ++i) starts.push_back(i);
    return starts;
}

/// Input window (T, H, W, C) starting at snapshot index `start`.
inline Field window_input(const DatasetBundle& b, std::size_t start, std::size_t T) {
    const std::size_t H = b.grid_h(), W = b.grid_w(), C = b.channels();
    Field x(Shape{T, H, W, C});
    std::copy_n(b.snapshots.data() + start * H * W * C, T * H * W * C, x.data());
    return x;
}

/// Dynamic-channel target (H, W, C_dyn) at snapshot index `idx`.
inline Field snapshot_dyn(const DatasetBundle& b, std::size_t idx) {
    const std::size_t H = b.grid_h(), W = b.grid_w(), C = b.channels();
    const std::size_t Cd = b.channels_dyn();
    Field y(Shape{H, W, Cd});
    for (std::size_t i = 0; i < H * W; ++i)
        for (std::size_t c = 0; c < Cd; ++c) y[i * Cd + c] = b.snapshots[(idx * H * W + i) * C + c];
    return y;
}

/// Static-channel block (H, W, C_static), bitwise time-invariant.
inline Field static_channels(const DatasetBundle& b) {
    const std::size_t H = b.grid_h(), W = b.grid_w(), C = b.channels();
    const std::size_t Cd = b.channels_dyn();
    Field s(Shape{H, W, C - Cd});
    for (std::size_t i = 0; i < H * W; ++i)
        for (std::size_t c = Cd; c < C; ++c) s[i * (C - Cd) + (c - Cd)] = b.snapshots[i * C + c];
    return s;
}

// ---------------------------------------------------------------------------
// WFR1 on-disk format: "WFR1" magic, u32 LE header length, UTF-8 JSON
// header, row-major little-endian f32 payload, trailing CRC32 (payload only)
// ---------------------------------------------------------------------------

namespace wfr {

inline std::uint32_t crc32(const unsigned char* data, std::size_t n) {
    static const auto table = [] {
        std::array<std::uint32_t, 256> t{};
        for (std::uint32_t i = 0; i < 256; ++i) {
            std::uint32_t c = i;
            for (int b = 0; b < 8; ++b) c = (c & 1) ? 0xEDB88320u ^ (c >> 1) : (c >> 1);
            t[i] = c;
        }
        return t;
    }();
    std::uint32_t crc = 0xFFFFFFFFu;
    for (std::size_t i = 0; i < n; ++i) crc = table[(crc ^ data[i]) & 0xFFu] ^ (crc >> 8);
    return crc ^ 0xFFFFFFFFu;
}

inline void put_u32(std::ostream& os, std::uint32_t v) {
    char b[4] = {static_cast<char>(v & 0xff), static_cast<char>((v >> 8) & 0xff),
                 static_cast<char>((v >> 16) & 0xff), static_cast<char>((v >> 24) & 0xff)};
    os.write(b, 4);
}

inline std::uint32_t get_u32(std::istream& is) {
    unsigned char b[4];
    if (!is.read(reinterpret_cast<char*>(b), 4))
        throw FormatError(FormatError::Kind::truncated, "WFR1: unexpected end of file");
    return static_cast<std::uint32_t>(b[0]) | (static_cast<std::uint32_t>(b[1]) << 8) |
           (static_cast<std::uint32_t>(b[2]) << 16) | (static_cast<std::uint32_t>(b[3]) << 24);
}

} // namespace wfr

inline void save_wfr(const DatasetBundle& b, const std::string& path) {
    nlohmann::json header{
        {"version", 1},
        {"dims", {b.n_time(), b.grid_h(), b.grid_w(), b.channels()}},
        {"latitudes", b.latitudes},
        {"channel_meta", b.channel_meta},
        {"step_hours", b.step_hours},
        {"splits",
         {{"train", {b.train.begin, b.train.end}},
          {"val", {b.val.begin, b.val.end}},
          {"test", {b.test.begin, b.test.end}}}},
        {"normalized", b.normalized}};
    const std::string hs = header.dump();

    std::vector<unsigned char> payload(b.snapshots.size() * 4);
    for (std::size_t i = 0; i < b.snapshots.size(); ++i) {
        const float f = static_cast<float>(b.snapshots[i]);
        std::memcpy(payload.data() + i * 4, &f, 4);
    }

    std::ofstream os(path, std::ios::binary | std::ios::trunc);
    if (!os) throw FormatError(FormatError::Kind::io, "cannot open " + path + " for writing");
    os.write("WFR1", 4);
    wfr::put_u32(os, static_cast<std::uint32_t>(hs.size()));
    os.write(hs.data(), static_cast<std::streamsize>(hs.size()));
    os.write(reinterpret_cast<const char*>(payload.data()),
             static_cast<std::streamsize>(payload.size()));
    wfr::put_u32(os, wfr::crc32(payload.data(), payload.size()));
    if (!os) throw FormatError(FormatError::Kind::io, "write failed: " + path);
}

inline DatasetBundle load_wfr(const std::string& path) {
    std::ifstream is(path, std::ios::binary);
    if (!is) throw FormatError(FormatError::Kind::io, "cannot open " + path);
    char magic[4];
    if (!is.read(magic, 4) || std::memcmp(magic, "WFR1", 4) != 0)
        throw FormatError(FormatError::Kind::bad_magic, "not a WFR1 file: " + path);
    const std::uint32_t hlen = wfr::get_u32(is);
    std::string hs(hlen, '\0');
    if (!is.read(hs.data(), hlen))
        throw FormatError(FormatError::Kind::truncated, "WFR1: header truncated");
    nlohmann::json header;
    try {
        header = nlohmann::json::parse(hs);
    } catch (const nlohmann::json::exception&) {
        throw FormatError(FormatError::Kind::bad_version, "WFR1: header is not valid JSON");
    }
    if (header.value("version", 0) != 1)
        throw FormatError(FormatError::Kind::bad_version, "WFR1: unsupported version");

    const auto dims = header.at("dims").get<std::vector<std::size_t>>();
    if (dims.size() != 4) throw FormatError(FormatError::Kind::bad_version, "WFR1: bad dims");

    DatasetBundle b;
    b.latitudes = header.at("latitudes").get<std::vector<double>>();
    b.channel_meta = header.at("channel_meta").get<std::vector<ChannelMeta>>();
    b.step_hours = header.at("step_hours").get<double>();
    const auto& sp = header.at("splits");
    auto range = [&](const char* k) {
        const auto v = sp.at(k).get<std::vector<std::size_t>>();
        return SplitRange{v.at(0), v.at(1)};
    };
    b.train = range("train");
    b.val = range("val");
    b.test = range("test");
    b.normalized = header.value("normalized", false);

    const std::size_t count = dims[0] * dims[1] * dims[2] * dims[3];
    std::vector<unsigned char> payload(count * 4);
    is.read(reinterpret_cast<char*>(payload.data()), static_cast<std::streamsize>(payload.size()));
    if (static_cast<std::size_t>(is.gcount()) != payload.size())
        throw FormatError(FormatError::Kind::truncated,
                          "WFR1: payload truncated: expected " + std::to_string(payload.size()) +
                              " bytes, got " + std::to_string(is.gcount()));
    const std::uint32_t want_crc = wfr::get_u32(is);
    const std::uint32_t got_crc = wfr::crc32(payload.data(), payload.size());
    if (want_crc != got_crc)
        throw FormatError(FormatError::Kind::bad_checksum, "WFR1: payload checksum mismatch");

    b.snapshots = Field(Shape{dims[0], dims[1], dims[2], dims[3]});
    for (std::size_t i = 0; i < count; ++i) {
        float f;
        std::memcpy(&f, payload.data() + i * 4, 4);
        b.snapshots[i] = static_cast<double>(f);
    }
    if (b.latitudes.size() != b.grid_h())
        throw FormatError(FormatError::Kind::bad_version, "WFR1: latitude count mismatch");
    if (b.channel_meta.size() != b.channels())
        throw FormatError(FormatError::Kind::bad_version, "WFR1: channel_meta count mismatch");
    return b;
}

} // namespace wf

#endif // WF_DATA_HPP
