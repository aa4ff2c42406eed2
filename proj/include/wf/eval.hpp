#ifndef WF_EVAL_HPP
#define WF_EVAL_HPP

#include <algorithm>
#include <cmath>
#include <functional>
#include <iomanip>
#include <ostream>
#include <string>
#include <vector>

#include "wf/data.hpp"
#include "wf/errors.hpp"
#include "wf/field.hpp"
#include "wf/model.hpp"

namespace wf {

// ---------------------------------------------------------------------------
// Latitude weights: L(j) = cos(lat_j) / mean_j cos(lat_j)
// ---------------------------------------------------------------------------

/// Per-row latitude weights, unit mean by construction.
/// Latitudes must lie strictly inside (-90, 90).
inline std::vector<double> lat_weights(const std::vector<double>& latitudes_deg) {
    if (latitudes_deg.empty()) throw ArgumentError("lat_weights: no latitudes");
    std::vector<double> w(latitudes_deg.size());
    double mean = 0.0;
    for (std::size_t j = 0; j < w.size(); ++j) {
        if (!(std::abs(latitudes_deg[j]) < 90.0))
            throw ArgumentError("lat_weights: latitude out of (-90, 90): " +
                                std::to_string(latitudes_deg[j]));
        w[j] = std::cos(latitudes_deg[j] * 0.017453292519943295);
        mean += w[j];
    }
    mean /= static_cast<double>(w.size());
    for (double& v : w) v /= mean;
    return w;
}

// ---------------------------------------------------------------------------
// Metrics
// ---------------------------------------------------------------------------

/// Latitude-weighted MSE per channel for one (H, W, C) sample.
inline std::vector<double> weighted_mse_per_channel(const Field& pred, const Field& truth,
                                                    const std::vector<double>& weights) {
    detail::require_same_shape(pred, truth, "weighted_mse");
    if (pred.rank() != 3 || weights.size() != pred.extent(0))
        throw ShapeError("weighted_mse: expected (H, W, C) with one weight per row");
    const std::size_t H = pred.extent(0), W = pred.extent(1), C = pred.extent(2);
    std::vector<double> mse(C, 0.0);
    for (std::size_t j = 0; j < H; ++j)
        for (std::size_t k = 0; k < W; ++k)
            for (std::size_t c = 0; c < C; ++c) {
                const double e = pred.at(j, k, c) - truth.at(j, k, c);
                mse[c] += weights[j] * e * e;
            }
    for (double& v : mse) v /= static_cast<double>(H * W);
    return mse;
}

/// Latitude-weighted RMSE per channel over a sample set. The square root is
/// taken per sample, then averaged over samples.
inline std::vector<double> weighted_rmse(const std::vector<Field>& preds,
                                         const std::vector<Field>& truths,
                                         const std::vector<double>& weights) {
    if (preds.size() != truths.size() || preds.empty())
        throw ArgumentError("weighted_rmse: need matching non-empty sample sets");
    const std::size_t C = preds[0].extent(2);
    std::vector<double> acc(C, 0.0);
    for (std::size_t s = 0; s < preds.size(); ++s) {
        const auto mse = weighted_mse_per_channel(preds[s], truths[s], weights);
        for (std::size_t c = 0; c < C; ++c) acc[c] += std::sqrt(mse[c]);
    }
    for (double& v : acc) v /= static_cast<double>(preds.size());
    return acc;
}

inline std::vector<double> weighted_rmse(const Field& pred, const Field& truth,
                                         const std::vector<double>& weights) {
    return weighted_rmse(std::vector<Field>{pred}, std::vector<Field>{truth}, weights);
}

/// Pooled anomaly correlation per channel: a single weighted correlation over
/// every (sample, lat, lon) triple, with anomalies taken against the supplied
/// climatology. If exactly one side has zero anomaly variance the
/// correlation is reported as 0; if both are degenerate the value is
/// undefined and an error is raised.
inline std::vector<double> acc(const std::vector<Field>& preds, const std::vector<Field>& truths,
                               const Field& climatology, const std::vector<double>& weights) {
    if (preds.size() != truths.size() || preds.empty())
        throw ArgumentError("acc: need matching non-empty sample sets");
    const std::size_t H = climatology.extent(0), W = climatology.extent(1),
                      C = climatology.extent(2);
    std::vector<double> num(C, 0.0), den_t(C, 0.0), den_p(C, 0.0);
    for (std::size_t s = 0; s < preds.size(); ++s) {
        detail::require_same_shape(preds[s], climatology, "acc");
        detail::require_same_shape(truths[s], climatology, "acc");
        for (std::size_t j = 0; j < H; ++j)
            for (std::size_t k = 0; k < W; ++k)
                for (std::size_t c = 0; c < C; ++c) {
                    const double yp = preds[s].at(j, k, c) - climatology.at(j, k, c);
                    const double yt = truths[s].at(j, k, c) - climatology.at(j, k, c);
                    num[c] += weights[j] * yp * yt;
                    den_p[c] += weights[j] * yp * yp;
                    den_t[c] += weights[j] * yt * yt;
                }
    }
    std::vector<double> out(C, 0.0);
    for (std::size_t c = 0; c < C; ++c) {
        const bool p0 = den_p[c] <= 1e-300, t0 = den_t[c] <= 1e-300;
        if (p0 && t0) throw StateError("acc: zero anomaly variance on both sides (undefined)");
        out[c] = (p0 || t0) ? 0.0 : num[c] / std::sqrt(den_p[c] * den_t[c]);
    }
    return out;
}

// ---------------------------------------------------------------------------
// Autoregressive rollout
// ---------------------------------------------------------------------------

/// Lead-indexed predictions from one initialization window.
struct ForecastSeries {
    std::vector<Field> leads; // (H, W, C_dyn), lead 1..n
    std::string model_id;
    std::size_t init_index = 0;
};

/// Sliding-window multistep prediction: each output re-enters the window,
/// with static channels re-attached; after T steps the window holds only
/// predictions. `observer`, when set, sees the window before every step.
inline ForecastSeries rollout(
    const Field& x0, const ModelParams& params, std::size_t n,
    const std::function<void(std::size_t lead, const Field& window)>& observer = nullptr) {
    if (n < 1) throw ArgumentError("rollout: need n >= 1");
    const ModelConfig& cfg = params.cfg;
    const std::size_t T = cfg.input_steps;
    const std::size_t Cs = cfg.channels_static;

    // static channels of the final input frame (time-invariant by contract)
    Field statics;
    if (Cs > 0) {
        Field last = reshape(slice_axis(x0, 0, T - 1, 1),
                             Shape{cfg.grid_h, cfg.grid_w, cfg.channels()});
        statics = slice_axis(last, 2, cfg.channels_dyn, Cs);
    }

    ForecastSeries out;
    out.leads.reserve(n);
    Field window = x0;
    for (std::size_t lead = 1; lead <= n; ++lead) {
        if (observer) observer(lead, window);
        Field pred = forward(window, params); // (H, W, C_dyn)
        out.leads.push_back(pred);
        if (lead == n) break;
        Field frame = pred;
        if (Cs > 0) frame = concat_axis({&pred, &statics}, 2);
        Field frame_t = reshape(frame, Shape{1, cfg.grid_h, cfg.grid_w, cfg.channels()});
        Field tail = slice_axis(window, 0, 1, T - 1);
        window = concat_axis({&tail, &frame_t}, 0);
    }
    return out;
}

// ---------------------------------------------------------------------------
// Evaluation report
// ---------------------------------------------------------------------------

struct EvalRow {
    std::string method; // "model", "persistence", "climatology"
    std::size_t lead = 0;
    std::size_t channel = 0;
    double rmse = 0.0;
    double acc = 0.0;
};

struct EvalReport {
    std::vector<EvalRow> rows;
    std::vector<std::string> channel_names;
    std::size_t leads = 0;
    std::size_t init_count = 0;

    double lookup(const std::string& method, std::size_t lead, std::size_t channel,
                  bool want_acc = false) const {
        for (const auto& r : rows)
            if (r.method == method && r.lead == lead && r.channel == channel)
                return want_acc ? r.acc : r.rmse;
        throw ArgumentError("EvalReport: no row for " + method + " lead " + std::to_string(lead));
    }

    /// Mean RMSE across dynamic channels for one method/lead.
    double mean_rmse(const std::string& method, std::size_t lead) const {
        double s = 0.0;
        std::size_t n = 0;
        for (const auto& r : rows)
            if (r.method == method && r.lead == lead) {
                s += r.rmse;
                ++n;
            }
        if (n == 0) throw ArgumentError("EvalReport: no rows for " + method);
        return s / static_cast<double>(n);
    }
};

struct EvalOptions {
    std::size_t leads = 5;
    std::size_t max_inits = 0; // 0 = every admissible test init time
};

/// Train-split time-mean of the raw ground truth, per cell and channel.
inline Field train_climatology(const DatasetBundle& raw) {
    const std::size_t H = raw.grid_h(), W = raw.grid_w(), Cd = raw.channels_dyn();
    Field c(Shape{H, W, Cd});
    for (std::size_t t = raw.train.begin; t < raw.train.end; ++t) {
        Field y = snapshot_dyn(raw, t);
        axpy(1.0, y, c);
    }
    return scale(c, 1.0 / static_cast<double>(raw.train.length()));
}

/// Denormalizes a model-space prediction back to raw units.
inline Field denormalize_prediction(const Field& pred, const DatasetBundle& raw) {
    const std::size_t Cd = pred.extent(2);
    Field out = pred;
    for (std::size_t i = 0; i < pred.size() / Cd; ++i)
        for (std::size_t c = 0; c < Cd; ++c)
            out[i * Cd + c] = pred[i * Cd + c] * raw.channel_meta[c].std + raw.channel_meta[c].mean;
    return out;
}

namespace evaldetail {

/// Shared scoring loop. `params` may be null for a baselines-only report.
inline EvalReport eval_core(const DatasetBundle& raw, const ModelParams* params, std::size_t T,
                            const EvalOptions& opt) {
    const std::size_t n = opt.leads;
    if (n < 1) throw ArgumentError("evaluate: need at least one lead");

    const auto weights = lat_weights(raw.latitudes);
    const Field clim = train_climatology(raw);

    std::vector<std::size_t> inits;
    for (std::size_t i = raw.test.begin; i + T + n - 1 < raw.test.end; ++i) inits.push_back(i);
    if (opt.max_inits > 0 && inits.size() > opt.max_inits) inits.resize(opt.max_inits);
    if (inits.empty()) throw ArgumentError("evaluate: test split too short for the leads");

    DatasetBundle nb;
    if (params) nb = normalize(raw);

    // per lead: sample sets for each method
    std::vector<std::vector<Field>> truth(n), pred(n), persist(n), climat(n);
    for (std::size_t i : inits) {
        Field last_input = snapshot_dyn(raw, i + T - 1);
        ForecastSeries series;
        if (params) {
            Field x0 = window_input(nb, i, T);
            series = rollout(x0, *params, n);
        }
        for (std::size_t l = 0; l < n; ++l) {
            truth[l].push_back(snapshot_dyn(raw, i + T + l));
            if (params) pred[l].push_back(denormalize_prediction(series.leads[l], raw));
            persist[l].push_back(last_input);
            climat[l].push_back(clim);
        }
    }

    EvalReport rep;
    rep.leads = n;
    rep.init_count = inits.size();
    for (std::size_t c = 0; c < raw.channels_dyn(); ++c)
        rep.channel_names.push_back(raw.channel_meta[c].name);

    auto add_rows = [&](const std::string& method, const std::vector<std::vector<Field>>& ps) {
        for (std::size_t l = 0; l < n; ++l) {
            const auto rmse = weighted_rmse(ps[l], truth[l], weights);
            std::vector<double> accs;
            try {
                accs = acc(ps[l], truth[l], clim, weights);
            } catch (const StateError&) {
                // fully degenerate anomalies (e.g. a frozen dataset): report 0
                accs.assign(rmse.size(), 0.0);
            }
            for (std::size_t c = 0; c < rmse.size(); ++c)
                rep.rows.push_back({method, l + 1, c, rmse[c], accs[c]});
        }
    };
    if (params) add_rows("model", pred);
    add_rows("persistence", persist);
    add_rows("climatology", climat);
    return rep;
}

} // namespace evaldetail

/// Persistence (last input frame) and train-climatology baselines, scored
/// with the same metrics and init times as a model evaluation.
inline EvalReport baselines(const DatasetBundle& raw, std::size_t T, const EvalOptions& opt) {
    return evaldetail::eval_core(raw, nullptr, T, opt);
}

/// Rolls the model out from every admissible test init time and scores it,
/// with persistence and train-climatology baselines, in raw units.
inline EvalReport evaluate_model(const DatasetBundle& raw, const ModelParams& params,
                                 const EvalOptions& opt) {
    const ModelConfig& cfg = params.cfg;
    if (raw.grid_h() != cfg.grid_h || raw.grid_w() != cfg.grid_w ||
        raw.channels() != cfg.channels() || raw.channels_dyn() != cfg.channels_dyn)
        throw ArgumentError("evaluate_model: checkpoint and dataset grids disagree");
    return evaldetail::eval_core(raw, &params, cfg.input_steps, opt);
}

inline void write_eval_csv(const EvalReport& rep, std::ostream& os) {
    os << "method,lead,channel,rmse,acc\n";
    os.precision(17);
    for (const auto& r : rep.rows)
        os << r.method << "," << r.lead << "," << rep.channel_names[r.channel] << "," << r.rmse
           << "," << r.acc << "\n";
}

/// Aligned plain-text table: per channel, RMSE over all leads then ACC over
/// all leads (2 * leads columns per channel).
inline void write_eval_table(const EvalReport& rep, std::ostream& os) {
    auto lead_list = [&] {
        std::string s;
        for (std::size_t l = 1; l <= rep.leads; ++l) s += (l > 1 ? "/" : "") + std::to_string(l);
        return s;
    }();
    std::vector<std::string> methods;
    for (const auto& r : rep.rows)
        if (std::find(methods.begin(), methods.end(), r.method) == methods.end())
            methods.push_back(r.method);
    os << std::left << std::setw(14) << "method";
    for (const auto& name : rep.channel_names)
        os << std::setw(12 * rep.leads) << ("RMSE(" + lead_list + ") " + name)
           << std::setw(9 * rep.leads) << ("ACC(" + lead_list + ") " + name);
    os << "\n";
    for (const std::string& method : methods) {
        os << std::left << std::setw(14) << method;
        for (std::size_t c = 0; c < rep.channel_names.size(); ++c) {
            for (std::size_t l = 1; l <= rep.leads; ++l)
                os << std::setw(12) << std::setprecision(5) << rep.lookup(method, l, c);
            for (std::size_t l = 1; l <= rep.leads; ++l)
                os << std::setw(9) << std::setprecision(3) << rep.lookup(method, l, c, true);
        }
        os << "\n";
    }
    os << "(" << rep.init_count << " init times)\n";
}

} // namespace wf

#endif // WF_EVAL_HPP
