#ifndef WF_STUDIES_HPP
#define WF_STUDIES_HPP

#include <cstdio>
#include <iomanip>
#include <ostream>
#include <sstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "wf/data.hpp"
#include "wf/eval.hpp"
#include "wf/train.hpp"

namespace wf {

/// Training + evaluation budget shared by every run of a study, so that a
/// row differs from its neighbour in exactly one toggled component.
struct StudyBudget {
    ModelConfig model;
    OptimizerConfig opt;
    std::size_t epochs = 12;
    std::size_t batch_size = 4;
    std::size_t windows = 64;  // train windows per epoch (strided subsample)
    std::uint64_t seed = 0;
    std::vector<std::size_t> leads{1, 3, 5};
    std::size_t max_inits = 0;

    std::size_t max_lead() const {
        std::size_t m = 1;
        for (std::size_t l : leads) m = std::max(m, l);
        return m;
    }

    TrainConfig base_train_config() const {
        TrainConfig tc;
        tc.model = model;
        tc.opt = opt;
        tc.epochs = epochs;
        tc.batch_size = batch_size;
        tc.seed = seed;
        tc.max_train_windows = windows;
        return tc;
    }
};

inline std::string config_fingerprint(const TrainConfig& cfg) {
    nlohmann::json j = cfg;
    const std::string s = j.dump();
    std::uint64_t h = 0xcbf29ce484222325ULL;
    for (char c : s) {
        h ^= static_cast<std::uint64_t>(static_cast<unsigned char>(c));
        h *= 0x100000001b3ULL;
    }
    char buf[17];
    std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(h));
    return buf;
}

// ---------------------------------------------------------------------------
// Component ablation ladder (temporal mixing, PAFNO, rotation, noise)
// ---------------------------------------------------------------------------

struct AblationRow {
    std::string label;
    TrainConfig config;
    std::string config_hash;
    EvalReport report;
    std::vector<EpochStat> curve;
};

struct AblationResult {
    std::vector<AblationRow> rows;
    std::vector<std::size_t> leads;
};

/// The five-row ladder: AFNO spatial-only baseline, then +temporal mixing,
/// +PAFNO, +rotation, +noise, all under one seed and budget.
inline std::vector<std::pair<std::string, TrainConfig>> ablation_ladder(const StudyBudget& b) {
    TrainConfig base = b.base_train_config();
    base.model.mixer_mode = MixerMode::afno;
    base.model.use_temporal_mixer = false;
    base.aug.rotate = false;
    base.aug.noise = false;

    std::vector<std::pair<std::string, TrainConfig>> ladder;
    ladder.emplace_back("baseline", base);
    TrainConfig c = base;
    c.model.use_temporal_mixer = true;
    ladder.emplace_back("+SF-B", c);
    c.model.mixer_mode = MixerMode::pafno;
    ladder.emplace_back("+PAFNO", c);
    c.aug.rotate = true;
    ladder.emplace_back("+ER", c);
    c.aug.noise = true;
    ladder.emplace_back("+noise", c);
    return ladder;
}

inline AblationResult run_ablation(const DatasetBundle& raw, const StudyBudget& budget) {
    AblationResult result;
    result.leads = budget.leads;
    EvalOptions eo;
    eo.leads = budget.max_lead();
    eo.max_inits = budget.max_inits;
    for (auto& [label, cfg] : ablation_ladder(budget)) {
        TrainResult tr = train(raw, cfg);
        AblationRow row;
        row.label = label;
        row.config = cfg;
        row.config_hash = config_fingerprint(cfg);
        row.curve = tr.curve;
        row.report = evaluate_model(raw, tr.params, eo);
        result.rows.push_back(std::move(row));
    }
    return result;
}

inline void write_ablation_csv(const AblationResult& r, std::ostream& os) {
    os << "row,label,config_hash,mixer,temporal,rotate,noise,lead,channel,rmse,acc\n";
    os.precision(17);
    for (std::size_t i = 0; i < r.rows.size(); ++i) {
        const auto& row = r.rows[i];
        for (const auto& er : row.report.rows) {
            if (er.method != "model") continue;
            bool keep = false;
            for (std::size_t l : r.leads) keep = keep || er.lead == l;
            if (!keep) continue;
            os << i << "," << row.label << "," << row.config_hash << ","
               << to_string(row.config.model.mixer_mode) << ","
               << (row.config.model.use_temporal_mixer ? 1 : 0) << ","
               << (row.config.aug.rotate ? 1 : 0) << "," << (row.config.aug.noise ? 1 : 0) << ","
               << er.lead << "," << row.report.channel_names[er.channel] << "," << er.rmse << ","
               << er.acc << "\n";
        }
    }
}

/// Markdown grid shaped like a component-ablation table: one row per ladder
/// step, check marks for the active components, channel-0 RMSE/ACC per lead.
inline void write_ablation_markdown(const AblationResult& r, std::ostream& os) {
    auto leads_str = [&](const AblationRow& row, bool want_acc) {
        std::ostringstream s;
        s << std::setprecision(4);
        for (std::size_t i = 0; i < r.leads.size(); ++i)
            s << (i ? "/" : "") << row.report.lookup("model", r.leads[i], 0, want_acc);
        return s.str();
    };
    os << "| SF-B | PAFNO | ER | noise | RMSE(";
    for (std::size_t i = 0; i < r.leads.size(); ++i) os << (i ? "/" : "") << r.leads[i];
    os << ") | ACC(";
    for (std::size_t i = 0; i < r.leads.size(); ++i) os << (i ? "/" : "") << r.leads[i];
    os << ") |\n|---|---|---|---|---|---|\n";
    for (const auto& row : r.rows) {
        os << "| " << (row.config.model.use_temporal_mixer ? "x" : " ") << " | "
           << (row.config.model.mixer_mode == MixerMode::pafno ? "x" : " ") << " | "
           << (row.config.aug.rotate ? "x" : " ") << " | " << (row.config.aug.noise ? "x" : " ")
           << " | " << leads_str(row, false) << " | " << leads_str(row, true) << " |\n";
    }
}

// ---------------------------------------------------------------------------
// Noise-augmentation study (optionally with the two-step training variant)
// ---------------------------------------------------------------------------

struct NoiseStudyRun {
    std::uint64_t seed = 0;
    bool noise = false;
    bool two_step = false;
    std::string config_hash;
    EvalReport report;

    double lead5_rmse(std::size_t lead) const { return report.mean_rmse("model", lead); }
};

struct NoiseStudyResult {
    std::vector<NoiseStudyRun> runs;
    std::vector<std::uint64_t> seeds;
    std::size_t eval_lead = 5;
    std::size_t noise_wins = 0; // seeds where noise-on <= noise-off (plain runs)

    const NoiseStudyRun* find(std::uint64_t seed, bool noise, bool two_step) const {
        for (const auto& r : runs)
            if (r.seed == seed && r.noise == noise && r.two_step == two_step) return &r;
        return nullptr;
    }
};

/// Matched-budget comparison of noise augmentation (and optionally the
/// two-step unrolled loss) across seeds, scored at the longest lead.
inline NoiseStudyResult run_noise_study(const DatasetBundle& raw, const StudyBudget& budget,
                                        const std::vector<std::uint64_t>& seeds,
                                        bool include_two_step) {
    NoiseStudyResult result;
    result.seeds = seeds;
    result.eval_lead = budget.max_lead();
    EvalOptions eo;
    eo.leads = budget.max_lead();
    eo.max_inits = budget.max_inits;

    for (std::uint64_t seed : seeds) {
        for (int ts = 0; ts <= (include_two_step ? 1 : 0); ++ts) {
            for (int noise = 0; noise <= 1; ++noise) {
                TrainConfig cfg = budget.base_train_config();
                cfg.seed = seed;
                cfg.aug.rotate = true;
                cfg.aug.noise = noise == 1;
                cfg.two_step = ts == 1;
                TrainResult tr = train(raw, cfg);
                NoiseStudyRun run;
                run.seed = seed;
                run.noise = noise == 1;
                run.two_step = ts == 1;
                run.config_hash = config_fingerprint(cfg);
                run.report = evaluate_model(raw, tr.params, eo);
                result.runs.push_back(std::move(run));
            }
        }
    }
    for (std::uint64_t seed : seeds) {
        const auto* off = result.find(seed, false, false);
        const auto* on = result.find(seed, true, false);
        if (off && on &&
            on->report.mean_rmse("model", result.eval_lead) <=
                off->report.mean_rmse("model", result.eval_lead))
            ++result.noise_wins;
    }
    return result;
}

inline void write_noise_study_csv(const NoiseStudyResult& r, std::ostream& os) {
    os << "seed,two_step,noise,config_hash,lead,channel,rmse,acc\n";
    os.precision(17);
    for (const auto& run : r.runs)
        for (const auto& er : run.report.rows) {
            if (er.method != "model") continue;
            os << run.seed << "," << (run.two_step ? 1 : 0) << "," << (run.noise ? 1 : 0) << ","
               << run.config_hash << "," << er.lead << ","
               << run.report.channel_names[er.channel] << "," << er.rmse << "," << er.acc << "\n";
        }
}

inline void write_noise_study_markdown(const NoiseStudyResult& r, std::ostream& os) {
    os << "| seed | TS | noise | RMSE(lead " << r.eval_lead << ") |\n|---|---|---|---|\n";
    os << std::setprecision(5);
    for (const auto& run : r.runs)
        os << "| " << run.seed << " | " << (run.two_step ? "x" : " ") << " | "
           << (run.noise ? "x" : " ") << " | " << run.report.mean_rmse("model", r.eval_lead)
           << " |\n";
    os << "\nnoise-on <= noise-off at lead " << r.eval_lead << " on " << r.noise_wins << "/"
       << r.seeds.size() << " seeds\n";
}

} // namespace wf

#endif // WF_STUDIES_HPP
