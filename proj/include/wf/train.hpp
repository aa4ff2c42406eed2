#ifndef WF_TRAIN_HPP
#define WF_TRAIN_HPP

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <string>
#include <vector>

#include <json.hpp>

#include "wf/autodiff.hpp"
#include "wf/data.hpp"
#include "wf/errors.hpp"
#include "wf/eval.hpp"
#include "wf/model.hpp"
#include "wf/rng.hpp"

namespace wf {

// ---------------------------------------------------------------------------
// AdamW with linear warmup into a cosine decay
// ---------------------------------------------------------------------------

struct OptimizerConfig {
    double base_lr = 5e-4;
    std::size_t warmup_epochs = 5;
    std::size_t total_epochs = 80;
    double weight_decay = 0.01;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double eps = 1e-8;
};

inline void to_json(nlohmann::json& j, const OptimizerConfig& c) {
    j = nlohmann::json{{"base_lr", c.base_lr},           {"warmup_epochs", c.warmup_epochs},
                       {"total_epochs", c.total_epochs}, {"weight_decay", c.weight_decay},
                       {"beta1", c.beta1},               {"beta2", c.beta2},
                       {"eps", c.eps}};
}

inline void from_json(const nlohmann::json& j, OptimizerConfig& c) {
    j.at("base_lr").get_to(c.base_lr);
    j.at("warmup_epochs").get_to(c.warmup_epochs);
    j.at("total_epochs").get_to(c.total_epochs);
    j.at("weight_decay").get_to(c.weight_decay);
    j.at("beta1").get_to(c.beta1);
    j.at("beta2").get_to(c.beta2);
    j.at("eps").get_to(c.eps);
}

/// lr(e) for a (possibly fractional) epoch index: linear ramp over the
/// warmup epochs, then cosine decay to zero at total_epochs. Continuous at
/// the junction and non-negative everywhere.
inline double lr_at(const OptimizerConfig& c, double epoch) {
    const double w = static_cast<double>(c.warmup_epochs);
    const double total = static_cast<double>(c.total_epochs);
    if (epoch < 0.0) return 0.0;
    if (epoch < w) return c.base_lr * epoch / w;
    if (epoch >= total) return 0.0;
    const double progress = (epoch - w) / (total - w);
    return c.base_lr * 0.5 * (1.0 + std::cos(3.141592653589793238462643383279 * progress));
}

/// First/second moment state aligned with the flat parameter index.
struct OptimizerState {
    std::size_t step = 0;
    std::vector<double> m, v;

    explicit OptimizerState(std::size_t n = 0) : m(n, 0.0), v(n, 0.0) {}
};

/// One decoupled-weight-decay AdamW update, in place on the flat parameters.
inline void adamw_step(OptimizerState& st, std::vector<double>& params,
                       const std::vector<double>& grads, const OptimizerConfig& cfg, double lr) {
    if (params.size() != grads.size() || params.size() != st.m.size())
        throw ArgumentError("adamw_step: length mismatch");
    st.step += 1;
    const double bc1 = 1.0 - std::pow(cfg.beta1, static_cast<double>(st.step));
    const double bc2 = 1.0 - std::pow(cfg.beta2, static_cast<double>(st.step));
    for (std::size_t i = 0; i < params.size(); ++i) {
        st.m[i] = cfg.beta1 * st.m[i] + (1.0 - cfg.beta1) * grads[i];
        st.v[i] = cfg.beta2 * st.v[i] + (1.0 - cfg.beta2) * grads[i] * grads[i];
        const double mhat = st.m[i] / bc1;
        const double vhat = st.v[i] / bc2;
        params[i] -= lr * (mhat / (std::sqrt(vhat) + cfg.eps) + cfg.weight_decay * params[i]);
    }
}

// ---------------------------------------------------------------------------
// Augmentations
// ---------------------------------------------------------------------------

struct AugmentConfig {
    bool rotate = true;
    double rotation_prob = 0.5;
    std::size_t rotation_max = 0; // 0 -> the full longitude extent W
    bool noise = true;
    double noise_variance = 0.1;  // variance (not std) in normalized units

    void validate() const {
        if (rotation_prob < 0.0 || rotation_prob > 1.0)
            throw ArgumentError("AugmentConfig: rotation_prob outside [0, 1]");
        if (noise_variance < 0.0) throw ArgumentError("AugmentConfig: negative noise variance");
    }
};

inline void to_json(nlohmann::json& j, const AugmentConfig& c) {
    j = nlohmann::json{{"rotate", c.rotate},
                       {"rotation_prob", c.rotation_prob},
                       {"rotation_max", c.rotation_max},
                       {"noise", c.noise},
                       {"noise_variance", c.noise_variance}};
}

inline void from_json(const nlohmann::json& j, AugmentConfig& c) {
    j.at("rotate").get_to(c.rotate);
    j.at("rotation_prob").get_to(c.rotation_prob);
    j.at("rotation_max").get_to(c.rotation_max);
    j.at("noise").get_to(c.noise);
    j.at("noise_variance").get_to(c.noise_variance);
}

/// Rolls input and target together by s columns along longitude.
/// x: (T, H, W, C) on axis 2; y: (H, W, C_dyn) on axis 1.
inline void apply_rotation(Field& x, Field& y, std::size_t s) {
    x = roll(x, 2, static_cast<long long>(s));
    y = roll(y, 1, static_cast<long long>(s));
}

/// With probability rotation_prob, draws a shift uniform over the whole
/// revolution (rounded down to a patch-aligned multiple of p_w) and rotates
/// input and target together. Returns the applied shift.
inline std::size_t earth_rotation(Field& x, Field& y, Rng& rng, const AugmentConfig& cfg,
                                  std::size_t patch_w = 1) {
    const std::size_t W = x.extent(2);
    const std::size_t limit = cfg.rotation_max == 0 ? W : cfg.rotation_max;
    if (!cfg.rotate || rng.uniform() >= cfg.rotation_prob) return 0;
    std::size_t s = static_cast<std::size_t>(rng.uniform_below(limit));
    if (patch_w > 1) s -= s % patch_w;
    if (s == 0) return 0;
    apply_rotation(x, y, s);
    return s;
}

/// Adds i.i.d. Gaussian noise of the configured variance to the dynamic
/// channels of a normalized input window. Static channels are untouched.
inline void noise_augment(Field& x, Rng& rng, double variance, std::size_t channels_dyn) {
    if (variance <= 0.0) return;
    const double stddev = std::sqrt(variance);
    const std::size_t C = x.extent(x.rank() - 1);
    for (std::size_t i = 0; i < x.size() / C; ++i)
        for (std::size_t c = 0; c < channels_dyn; ++c) x[i * C + c] += rng.normal(0.0, stddev);
}

// ---------------------------------------------------------------------------
// Training loop
// ---------------------------------------------------------------------------

struct TrainConfig {
    ModelConfig model;
    OptimizerConfig opt;
    AugmentConfig aug;
    std::size_t epochs = 30;
    std::size_t batch_size = 4;
    std::uint64_t seed = 0;
    bool two_step = false;           // 2-step unrolled loss (fine-tuning-style study)
    bool lat_weighted_loss = true;   // false -> plain MSE
    std::size_t max_train_windows = 0; // 0 = every window; else strided subsample
    std::size_t max_val_windows = 32;  // validation forward passes per epoch (0 = all)
};

inline void to_json(nlohmann::json& j, const TrainConfig& c) {
    j = nlohmann::json{{"model", c.model},
                       {"opt", c.opt},
                       {"aug", c.aug},
                       {"epochs", c.epochs},
                       {"batch_size", c.batch_size},
                       {"seed", c.seed},
                       {"two_step", c.two_step},
                       {"lat_weighted_loss", c.lat_weighted_loss},
                       {"max_train_windows", c.max_train_windows},
                       {"max_val_windows", c.max_val_windows}};
}

inline void from_json(const nlohmann::json& j, TrainConfig& c) {
    j.at("model").get_to(c.model);
    j.at("opt").get_to(c.opt);
    j.at("aug").get_to(c.aug);
    j.at("epochs").get_to(c.epochs);
    j.at("batch_size").get_to(c.batch_size);
    j.at("seed").get_to(c.seed);
    j.at("two_step").get_to(c.two_step);
    j.at("lat_weighted_loss").get_to(c.lat_weighted_loss);
    j.at("max_train_windows").get_to(c.max_train_windows);
    c.max_val_windows = j.value("max_val_windows", std::size_t{32});
}

struct EpochStat {
    std::size_t epoch = 0;
    double train_loss = 0.0;
    double val_loss = 0.0;
    double lr = 0.0;
};

struct TrainResult {
    ModelParams params;
    std::vector<EpochStat> curve;
};

/// Uniform index in [0, n) for shuffling (n small; modulo bias negligible).
inline std::size_t rng_index(Rng& rng, std::size_t n) {
    return static_cast<std::size_t>(rng.uniform_below(n));
}

namespace traindetail {

/// Builds the (possibly two-step) loss for one window on a fresh tape,
/// accumulates the flat gradient, and returns the loss value.
struct StepOutput {
    double loss = 0.0;
};

inline StepOutput step_gradients(const TrainConfig& cfg, const ModelParams& params,
                                 const Field& x, const Field& y, const Field& y2,
                                 const std::vector<double>& weights,
                                 std::vector<double>& grad_accum, double grad_scale) {
    ad::Tape tape;
    ad::Var xin = tape.leaf(x, false);
    ModelVars mv = register_params(tape, params, true);
    ad::Var out = build_forward(tape, xin, mv, cfg.model);
    ad::Var loss = tape.weighted_mse(out, y, weights);
    if (cfg.two_step) {
        // slide the window on-tape: [x_{2:T}, (prediction + statics)]
        const ModelConfig& m = cfg.model;
        ad::Var tail = tape.slice(xin, 0, 1, m.input_steps - 1);
        ad::Var frame = out;
        if (m.channels_static > 0) {
            ad::Var last = tape.take_index(xin, 0, m.input_steps - 1);
            ad::Var statics = tape.slice(last, 2, m.channels_dyn, m.channels_static);
            frame = tape.concat({out, statics}, 2);
        }
        ad::Var frame_t =
            tape.reshape(frame, Shape{1, m.grid_h, m.grid_w, m.channels()});
        ad::Var window2 = tape.concat({tail, frame_t}, 0);
        ad::Var out2 = build_forward(tape, window2, mv, m);
        ad::Var loss2 = tape.weighted_mse(out2, y2, weights);
        loss = tape.scale(tape.add(loss, loss2), 0.5);
    }
    tape.backward(loss);
    std::size_t off = 0;
    for (ad::Var leaf : mv.flat) {
        const Field g = tape.grad_of(leaf);
        for (std::size_t i = 0; i < g.size(); ++i) grad_accum[off + i] += grad_scale * g[i];
        off += g.size();
    }
    return {tape.val(loss)[0]};
}

inline double validation_loss(const DatasetBundle& nb, const TrainConfig& cfg,
                              const ModelParams& params, const std::vector<double>& weights) {
    const std::size_t T = cfg.model.input_steps;
    if (nb.val.length() < T + 1) return std::nan("");
    std::vector<std::size_t> starts = window_starts(nb.val, T);
    if (cfg.max_val_windows > 0 && starts.size() > cfg.max_val_windows) {
        std::vector<std::size_t> picked;
        const double stride =
            static_cast<double>(starts.size()) / static_cast<double>(cfg.max_val_windows);
        for (std::size_t k = 0; k < cfg.max_val_windows; ++k)
            picked.push_back(starts[static_cast<std::size_t>(stride * static_cast<double>(k))]);
        starts = std::move(picked);
    }
    double acc = 0.0;
    for (std::size_t i : starts) {
        Field x = window_input(nb, i, T);
        Field y = snapshot_dyn(nb, i + T);
        Field pred = forward(x, params);
        const auto mse = weighted_mse_per_channel(pred, y, weights);
        double m = 0.0;
        for (double v : mse) m += v;
        acc += m / static_cast<double>(mse.size());
    }
    return acc / static_cast<double>(starts.size());
}

} // namespace traindetail

/// Full training protocol: per window augment -> forward -> loss ->
/// backward -> AdamW, with per-epoch train/validation losses. Deterministic
/// given the seed: all randomness flows through named sub-streams, and
/// gradient reduction order is fixed.
inline TrainResult train(const DatasetBundle& raw, const TrainConfig& cfg) {
    cfg.model.validate();
    cfg.aug.validate();
    const DatasetBundle nb = raw.normalized ? raw : normalize(raw);
    const std::size_t T = cfg.model.input_steps;
    if (nb.grid_h() != cfg.model.grid_h || nb.grid_w() != cfg.model.grid_w ||
        nb.channels() != cfg.model.channels() || nb.channels_dyn() != cfg.model.channels_dyn)
        throw ArgumentError("train: dataset does not match the model config");

    // two-step training needs one extra target beyond each window
    const std::size_t lookahead = cfg.two_step ? T + 1 : T;
    std::vector<std::size_t> starts = window_starts(nb.train, lookahead);
    if (cfg.max_train_windows > 0 && starts.size() > cfg.max_train_windows) {
        std::vector<std::size_t> picked;
        picked.reserve(cfg.max_train_windows);
        const double stride =
            static_cast<double>(starts.size()) / static_cast<double>(cfg.max_train_windows);
        for (std::size_t k = 0; k < cfg.max_train_windows; ++k)
            picked.push_back(starts[static_cast<std::size_t>(stride * static_cast<double>(k))]);
        starts = std::move(picked);
    }

    std::vector<double> weights;
    if (cfg.lat_weighted_loss)
        weights = lat_weights(nb.latitudes);
    else
        weights.assign(nb.grid_h(), 1.0);

    Rng init_rng = Rng::stream(cfg.seed, "init");
    Rng shuffle_rng = Rng::stream(cfg.seed, "shuffle");
    Rng rotate_rng = Rng::stream(cfg.seed, "rotate");
    Rng noise_rng = Rng::stream(cfg.seed, "noise");

    TrainResult result;
    result.params = init_params(cfg.model, init_rng);
    std::vector<double> flat = to_flat(result.params);
    OptimizerState opt_state(flat.size());
    OptimizerConfig oc = cfg.opt;
    oc.total_epochs = cfg.epochs;

    std::vector<double> grad(flat.size(), 0.0);

    for (std::size_t epoch = 0; epoch < cfg.epochs; ++epoch) {
        // Fisher-Yates with the dedicated stream keeps runs bit-reproducible
        std::vector<std::size_t> order = starts;
        for (std::size_t i = order.size(); i > 1; --i)
            std::swap(order[i - 1], order[rng_index(shuffle_rng, i)]);

        double epoch_loss = 0.0;
        double last_lr = 0.0;
        const std::size_t n_batches = (order.size() + cfg.batch_size - 1) / cfg.batch_size;
        std::size_t batch_idx = 0;
        for (std::size_t b0 = 0; b0 < order.size(); b0 += cfg.batch_size, ++batch_idx) {
            const std::size_t bs = std::min(cfg.batch_size, order.size() - b0);
            std::fill(grad.begin(), grad.end(), 0.0);
            double batch_loss = 0.0;
            for (std::size_t bi = 0; bi < bs; ++bi) {
                const std::size_t i = order[b0 + bi];
                Field x = window_input(nb, i, T);
                Field y = snapshot_dyn(nb, i + T);
                Field y2;
                if (cfg.two_step) y2 = snapshot_dyn(nb, i + T + 1);
                if (cfg.aug.rotate) {
                    const std::size_t s =
                        earth_rotation(x, y, rotate_rng, cfg.aug, cfg.model.patch_w);
                    if (cfg.two_step && s > 0) y2 = roll(y2, 1, static_cast<long long>(s));
                }
                if (cfg.aug.noise)
                    noise_augment(x, noise_rng, cfg.aug.noise_variance, cfg.model.channels_dyn);
                auto so = traindetail::step_gradients(cfg, result.params, x, y, y2, weights, grad,
                                                      1.0 / static_cast<double>(bs));
                batch_loss += so.loss / static_cast<double>(bs);
            }
            if (!std::isfinite(batch_loss)) {
                double gn = 0.0;
                for (double g : grad) gn += g * g;
                throw StateError("train: non-finite loss at epoch " + std::to_string(epoch) +
                                 " (last lr " + std::to_string(last_lr) + ", grad norm " +
                                 std::to_string(std::sqrt(gn)) + ")");
            }
            const double e = static_cast<double>(epoch) +
                             static_cast<double>(batch_idx) / static_cast<double>(n_batches);
            last_lr = lr_at(oc, e);
            adamw_step(opt_state, flat, grad, oc, last_lr);
            from_flat(result.params, flat);
            epoch_loss += batch_loss;
        }
        EpochStat st;
        st.epoch = epoch;
        st.train_loss = n_batches ? epoch_loss / static_cast<double>(n_batches) : 0.0;
        st.val_loss = traindetail::validation_loss(nb, cfg, result.params, weights);
        st.lr = last_lr;
        result.curve.push_back(st);
    }
    return result;
}

inline void write_loss_csv(const std::vector<EpochStat>& curve, std::ostream& os) {
    os << "epoch,train_loss,val_loss,lr\n";
    os.precision(17);
    for (const auto& s : curve)
        os << s.epoch << "," << s.train_loss << "," << s.val_loss << "," << s.lr << "\n";
}

} // namespace wf

#endif // WF_TRAIN_HPP
