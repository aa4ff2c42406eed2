#ifndef WF_GRADCHECK_HPP
#define WF_GRADCHECK_HPP

#include <algorithm>
#include <map>
#include <string>
#include <vector>

#include "wf/autodiff.hpp"
#include "wf/eval.hpp"
#include "wf/model.hpp"
#include "wf/rng.hpp"
#include "wf/train.hpp"

namespace wf {

struct GradCheckOptions {
    std::size_t samples = 220;   // total scalars to probe (spread over groups)
    double epsilon = 1e-5;       // central-difference step
    double tolerance = 1e-4;     // relative-error threshold
    double required_pass = 0.99; // fraction of samples that must meet it
    std::uint64_t seed = 0;
    std::string corrupt_group;   // test fixture: scales one group's gradients
};

struct GradCheckGroup {
    std::string group;
    std::size_t checked = 0;
    std::size_t failures = 0;
    double worst_rel = 0.0;
    std::size_t worst_index = 0; // flat parameter index of the worst sample
};

struct GradCheckReport {
    std::vector<GradCheckGroup> groups;
    std::size_t total = 0;
    std::size_t failures = 0;
    bool pass = false;

    const GradCheckGroup* worst_group() const {
        const GradCheckGroup* w = nullptr;
        for (const auto& g : groups)
            if (!w || g.worst_rel > w->worst_rel) w = &g;
        return w;
    }
};

/// Central finite differences against the recorded-graph reverse pass, on a
/// toy model with a fixed random (input, target) pair. Samples are spread
/// over every parameter group so each backward rule is exercised.
inline GradCheckReport gradcheck(const ModelConfig& cfg, const GradCheckOptions& opt) {
    if (opt.samples == 0) throw ArgumentError("gradcheck: need at least one sample");
    cfg.validate();
    Rng rng = Rng::stream(opt.seed, "gradcheck");
    ModelParams params = init_params(cfg, rng);
    // probe a generic point in parameter space: the near-identity training
    // init leaves several gradient paths (notably lambda's) almost inactive
    visit_params(params, [&](const std::string&, ParamGroup, Field& f) {
        for (std::size_t i = 0; i < f.size(); ++i) f[i] += rng.normal(0.0, 0.05);
    });

    Field x(Shape{cfg.input_steps, cfg.grid_h, cfg.grid_w, cfg.channels()});
    for (std::size_t i = 0; i < x.size(); ++i) x[i] = rng.normal();
    Field y(Shape{cfg.grid_h, cfg.grid_w, cfg.channels_dyn});
    for (std::size_t i = 0; i < y.size(); ++i) y[i] = rng.normal();
    std::vector<double> weights = lat_weights(cell_latitudes(cfg.grid_h));

    // analytic gradients from one reverse pass
    std::vector<double> analytic;
    {
        ad::Tape tape;
        ad::Var xin = tape.leaf(x, false);
        ModelVars mv = register_params(tape, params, true);
        ad::Var loss = tape.weighted_mse(build_forward(tape, xin, mv, cfg), y, weights);
        tape.backward(loss);
        analytic.reserve(param_count(params));
        for (ad::Var leaf : mv.flat) {
            const Field g = tape.grad_of(leaf);
            analytic.insert(analytic.end(), g.data(), g.data() + g.size());
        }
    }

    // group -> flat index ranges
    struct Range {
        std::string group;
        std::size_t begin, end;
    };
    std::vector<Range> ranges;
    {
        std::size_t off = 0;
        visit_params(params, [&](const std::string&, ParamGroup g, const Field& f) {
            ranges.push_back({to_string(g), off, off + f.size()});
            off += f.size();
        });
    }
    std::map<std::string, std::vector<std::size_t>> group_indices;
    for (const auto& r : ranges)
        for (std::size_t i = r.begin; i < r.end; ++i) group_indices[r.group].push_back(i);

    if (!opt.corrupt_group.empty()) {
        if (group_indices.find(opt.corrupt_group) == group_indices.end())
            throw ArgumentError("gradcheck: unknown group " + opt.corrupt_group);
        for (std::size_t i : group_indices[opt.corrupt_group]) analytic[i] *= 1.01;
    }

    // spread the sample budget over the groups, proportional with a floor
    std::vector<std::pair<std::string, std::vector<std::size_t>>> picks;
    const std::size_t total_params = analytic.size();
    std::size_t planned = 0;
    for (auto& [group, indices] : group_indices) {
        std::size_t want = std::max<std::size_t>(
            3, opt.samples * indices.size() / std::max<std::size_t>(total_params, 1));
        want = std::min(want, indices.size());
        std::vector<std::size_t> chosen;
        for (std::size_t k = 0; k < want; ++k)
            chosen.push_back(indices[rng.uniform_below(indices.size())]);
        std::sort(chosen.begin(), chosen.end());
        chosen.erase(std::unique(chosen.begin(), chosen.end()), chosen.end());
        planned += chosen.size();
        picks.emplace_back(group, std::move(chosen));
    }
    // top up the largest groups until the budget is met
    while (planned < opt.samples) {
        bool grew = false;
        for (auto& [group, chosen] : picks) {
            const auto& all = group_indices[group];
            if (chosen.size() >= all.size()) continue;
            std::size_t cand = all[rng.uniform_below(all.size())];
            if (!std::binary_search(chosen.begin(), chosen.end(), cand)) {
                chosen.insert(std::lower_bound(chosen.begin(), chosen.end(), cand), cand);
                ++planned;
                grew = true;
                if (planned >= opt.samples) break;
            }
        }
        if (!grew) break; // model smaller than the budget
    }

    std::vector<double> flat = to_flat(params);
    auto loss_at = [&](const std::vector<double>& theta) {
        ModelParams p = params;
        from_flat(p, theta);
        Field pred = forward(x, p);
        const auto mse = weighted_mse_per_channel(pred, y, weights);
        double m = 0.0;
        for (double v : mse) m += v;
        return m / static_cast<double>(mse.size());
    };

    GradCheckReport report;
    for (auto& [group, chosen] : picks) {
        GradCheckGroup g;
        g.group = group;
        for (std::size_t idx : chosen) {
            std::vector<double> theta = flat;
            theta[idx] = flat[idx] + opt.epsilon;
            const double lp = loss_at(theta);
            theta[idx] = flat[idx] - opt.epsilon;
            const double lm = loss_at(theta);
            const double fd = (lp - lm) / (2.0 * opt.epsilon);
            const double a = analytic[idx];
            const double denom = std::max({std::abs(a), std::abs(fd), 1e-4});
            const double rel = std::abs(a - fd) / denom;
            ++g.checked;
            if (rel > opt.tolerance) ++g.failures;
            if (rel > g.worst_rel) {
                g.worst_rel = rel;
                g.worst_index = idx;
            }
        }
        report.total += g.checked;
        report.failures += g.failures;
        report.groups.push_back(std::move(g));
    }
    report.pass = report.total > 0 &&
                  static_cast<double>(report.total - report.failures) >=
                      opt.required_pass * static_cast<double>(report.total);
    return report;
}

} // namespace wf

#endif // WF_GRADCHECK_HPP
