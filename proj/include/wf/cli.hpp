#ifndef WF_CLI_HPP
#define WF_CLI_HPP

#include <chrono>
#include <ctime>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <string>
#include <vector>

#include <json.hpp>

#include "wf/data.hpp"
#include "wf/eval.hpp"
#include "wf/gradcheck.hpp"
#include "wf/mixer.hpp"
#include "wf/model.hpp"
#include "wf/studies.hpp"
#include "wf/train.hpp"

namespace wf::cli {

inline constexpr const char* kVersion = "0.1.0";

// exit codes
inline constexpr int kOk = 0;
inline constexpr int kFailure = 1;
inline constexpr int kUsage = 2;
inline constexpr int kTrainAbort = 3;
inline constexpr int kConfigMismatch = 4;
inline constexpr int kGradcheckFail = 5;

// ---------------------------------------------------------------------------
// Run directories and manifests
// ---------------------------------------------------------------------------

inline std::string hash8(const nlohmann::json& j) {
    const std::string s = j.dump();
    std::uint64_t h = 0xcbf29ce484222325ULL;
    for (char c : s) {
        h ^= static_cast<std::uint64_t>(static_cast<unsigned char>(c));
        h *= 0x100000001b3ULL;
    }
    char buf[9];
    std::snprintf(buf, sizeof buf, "%08x", static_cast<unsigned>(h ^ (h >> 32)));
    return buf;
}

inline std::string utc_timestamp() {
    const auto now = std::chrono::system_clock::now();
    const std::time_t t = std::chrono::system_clock::to_time_t(now);
    std::tm tm{};
    gmtime_r(&t, &tm);
    char buf[32];
    std::strftime(buf, sizeof buf, "%Y%m%d-%H%M%S", &tm);
    return buf;
}

/// Fresh per-run directory named by timestamp + config hash. Existing
/// directories are never reused, so nothing is overwritten.
inline std::string make_run_dir(const std::string& root, const std::string& command,
                                const nlohmann::json& config) {
    namespace fs = std::filesystem;
    const std::string base =
        (root.empty() ? std::string("runs") : root) + "/" + command + "-" + utc_timestamp() + "-" +
        hash8(config);
    std::string dir = base;
    for (int i = 2; fs::exists(dir); ++i) dir = base + "-" + std::to_string(i);
    fs::create_directories(dir);
    return dir;
}

/// One manifest per run directory; re-running a command with the recorded
/// config and seed reproduces the outputs bit for bit.
inline void write_manifest(const std::string& dir, const std::string& command,
                           const nlohmann::json& config, std::uint64_t seed,
                           const std::vector<std::string>& outputs, double wall_seconds) {
    nlohmann::json m{{"command", command},     {"version", kVersion},
                     {"seed", seed},           {"config", config},
                     {"outputs", outputs},     {"wall_clock_seconds", wall_seconds},
                     {"started_utc", utc_timestamp()}};
    std::ofstream os(dir + "/manifest.json", std::ios::trunc);
    os << m.dump(2) << "\n";
}

class Stopwatch {
public:
    Stopwatch() : start_(std::chrono::steady_clock::now()) {}
    double seconds() const {
        return std::chrono::duration<double>(std::chrono::steady_clock::now() - start_).count();
    }

private:
    std::chrono::steady_clock::time_point start_;
};

/// Fills the grid-dependent model fields from a dataset.
inline void fit_model_to_bundle(ModelConfig& m, const DatasetBundle& b) {
    m.grid_h = b.grid_h();
    m.grid_w = b.grid_w();
    m.channels_dyn = b.channels_dyn();
    m.channels_static = b.channels() - b.channels_dyn();
}

// ---------------------------------------------------------------------------
// gen-data
// ---------------------------------------------------------------------------

struct GenDataOpts {
    GenConfig gen;
    std::string output = "toy.wfr";
    std::string outdir;
};

inline int run_gen_data(const GenDataOpts& opt, std::ostream& log = std::cout) {
    Stopwatch watch;
    opt.gen.validate();
    DatasetBundle b = generate(opt.gen);
    save_wfr(b, opt.output);
    const std::string dir = make_run_dir(opt.outdir, "gen-data", nlohmann::json(opt.gen));
    write_manifest(dir, "gen-data", nlohmann::json(opt.gen), opt.gen.seed, {opt.output},
                   watch.seconds());
    log << "wrote " << opt.output << ": " << b.n_time() << " snapshots, grid " << b.grid_h() << "x"
        << b.grid_w() << ", " << b.channels_dyn() << " dynamic + "
        << (b.channels() - b.channels_dyn()) << " static channels\n"
        << "splits: train [" << b.train.begin << "," << b.train.end << ") val [" << b.val.begin
        << "," << b.val.end << ") test [" << b.test.begin << "," << b.test.end << ")\n"
        << "manifest: " << dir << "/manifest.json\n";
    return kOk;
}

// ---------------------------------------------------------------------------
// train
// ---------------------------------------------------------------------------

struct TrainOpts {
    TrainConfig train;
    std::string data_path;
    std::string outdir;
};

inline int run_train(const TrainOpts& opt, std::ostream& log = std::cout) {
    Stopwatch watch;
    DatasetBundle raw = load_wfr(opt.data_path);
    TrainConfig tc = opt.train;
    fit_model_to_bundle(tc.model, raw);
    tc.model.validate();

    const std::string dir = make_run_dir(opt.outdir, "train", nlohmann::json(tc));
    const std::string ckpt = dir + "/checkpoint.wfck";
    const std::string csv = dir + "/loss.csv";

    TrainResult result;
    try {
        result = train(raw, tc);
    } catch (const StateError& e) {
        log << "training aborted: " << e.what() << "\n";
        return kTrainAbort;
    }
    save_checkpoint(result.params, ckpt);
    std::ofstream cs(csv, std::ios::trunc);
    write_loss_csv(result.curve, cs);
    write_manifest(dir, "train", nlohmann::json(tc), tc.seed, {ckpt, csv}, watch.seconds());
    if (!result.curve.empty())
        log << "final train loss " << result.curve.back().train_loss << ", val loss "
            << result.curve.back().val_loss << "\n";
    log << "checkpoint: " << ckpt << "\nloss curve: " << csv << "\n";
    return kOk;
}

// ---------------------------------------------------------------------------
// evaluate
// ---------------------------------------------------------------------------

struct EvaluateOpts {
    std::string checkpoint;
    std::string data_path;
    std::size_t leads = 5;
    std::size_t max_inits = 0;
    std::string outdir;
};

inline int run_evaluate(const EvaluateOpts& opt, std::ostream& log = std::cout) {
    Stopwatch watch;
    ModelParams params = load_checkpoint(opt.checkpoint);
    DatasetBundle raw = load_wfr(opt.data_path);
    if (raw.grid_h() != params.cfg.grid_h || raw.grid_w() != params.cfg.grid_w ||
        raw.channels() != params.cfg.channels() ||
        raw.channels_dyn() != params.cfg.channels_dyn) {
        log << "checkpoint grid (" << params.cfg.grid_h << "x" << params.cfg.grid_w << ", "
            << params.cfg.channels() << " ch) does not match dataset (" << raw.grid_h() << "x"
            << raw.grid_w() << ", " << raw.channels() << " ch)\n";
        return kConfigMismatch;
    }
    EvalOptions eo;
    eo.leads = opt.leads;
    eo.max_inits = opt.max_inits;
    EvalReport rep = evaluate_model(raw, params, eo);

    nlohmann::json config{{"checkpoint", opt.checkpoint},
                          {"data", opt.data_path},
                          {"leads", opt.leads},
                          {"max_inits", opt.max_inits}};
    const std::string dir = make_run_dir(opt.outdir, "evaluate", config);
    const std::string csv = dir + "/eval.csv";
    const std::string txt = dir + "/eval.txt";
    {
        std::ofstream os(csv, std::ios::trunc);
        write_eval_csv(rep, os);
    }
    {
        std::ofstream os(txt, std::ios::trunc);
        write_eval_table(rep, os);
    }
    write_manifest(dir, "evaluate", config, 0, {csv, txt}, watch.seconds());
    write_eval_table(rep, log);
    log << "report: " << csv << "\n";
    return kOk;
}

// ---------------------------------------------------------------------------
// gradcheck
// ---------------------------------------------------------------------------

struct GradcheckOpts {
    ModelConfig model; // toy-sized by default (set in the parser)
    GradCheckOptions check;
    std::string outdir;
};

inline int run_gradcheck(const GradcheckOpts& opt, std::ostream& log = std::cout) {
    Stopwatch watch;
    if (opt.check.samples == 0) {
        log << "gradcheck: --samples must be positive\n";
        return kUsage;
    }
    GradCheckReport rep = gradcheck(opt.model, opt.check);
    log << "gradcheck: " << rep.total << " sampled scalars, " << rep.failures
        << " above tolerance " << opt.check.tolerance << "\n";
    for (const auto& g : rep.groups)
        log << "  " << g.group << ": checked " << g.checked << ", worst rel " << g.worst_rel
            << " (flat index " << g.worst_index << ")" << (g.failures ? "  <-- FAIL" : "") << "\n";

    nlohmann::json config{{"model", opt.model},
                          {"samples", opt.check.samples},
                          {"epsilon", opt.check.epsilon},
                          {"tolerance", opt.check.tolerance},
                          {"seed", opt.check.seed}};
    const std::string dir = make_run_dir(opt.outdir, "gradcheck", config);
    {
        std::ofstream os(dir + "/gradcheck.txt", std::ios::trunc);
        os << (rep.pass ? "PASS" : "FAIL") << "\n";
        for (const auto& g : rep.groups)
            os << g.group << " checked=" << g.checked << " worst_rel=" << g.worst_rel
               << " worst_index=" << g.worst_index << " failures=" << g.failures << "\n";
    }
    write_manifest(dir, "gradcheck", config, opt.check.seed, {dir + "/gradcheck.txt"},
                   watch.seconds());
    if (!rep.pass) {
        const auto* w = rep.worst_group();
        log << "FAIL: worst group " << (w ? w->group : "?") << ", flat parameter index "
            << (w ? w->worst_index : 0) << "\n";
        return kGradcheckFail;
    }
    log << "PASS\n";
    return kOk;
}

// ---------------------------------------------------------------------------
// kernel-dump
// ---------------------------------------------------------------------------

struct KernelDumpOpts {
    std::string checkpoint;
    std::size_t block = 0;
    std::string domain = "spatial";
    std::string output;
    std::string outdir;
};

inline int run_kernel_dump(const KernelDumpOpts& opt, std::ostream& log = std::cout) {
    Stopwatch watch;
    ModelParams params = load_checkpoint(opt.checkpoint);
    if (params.cfg.mixer_mode != MixerMode::pafno) {
        log << "kernel-dump: checkpoint mixer mode is " << to_string(params.cfg.mixer_mode)
            << "; only PAFNO filters carry per-frequency coefficients\n";
        return kUsage;
    }
    if (opt.block >= params.blocks.size()) {
        log << "kernel-dump: block " << opt.block << " out of range (layers = "
            << params.blocks.size() << ")\n";
        return kUsage;
    }
    const bool spatial = opt.domain == "spatial";
    if (!spatial && opt.domain != "temporal") {
        log << "kernel-dump: --domain must be spatial or temporal\n";
        return kUsage;
    }
    if (!spatial && !params.cfg.use_temporal_mixer) {
        log << "kernel-dump: checkpoint has no temporal mixer\n";
        return kUsage;
    }
    const SpectralFilter& f =
        spatial ? params.blocks[opt.block].spatial : params.blocks[opt.block].temporal;
    const auto grid = spatial ? params.cfg.spatial_grid() : params.cfg.temporal_grid();
    Field kernel = effective_kernel(f.lambda, grid);

    nlohmann::json config{{"checkpoint", opt.checkpoint},
                          {"block", opt.block},
                          {"domain", opt.domain}};
    const std::string dir = make_run_dir(opt.outdir, "kernel-dump", config);
    const std::string out = opt.output.empty() ? dir + "/kernel.csv" : opt.output;
    {
        std::ofstream os(out, std::ios::trunc);
        write_kernel_csv(kernel, os);
    }
    write_manifest(dir, "kernel-dump", config, 0, {out}, watch.seconds());
    log << "kernel (" << (spatial ? "spatial" : "temporal") << ", block " << opt.block
        << ") -> " << out << "\n";
    return kOk;
}

// ---------------------------------------------------------------------------
// ablate
// ---------------------------------------------------------------------------

struct AblateOpts {
    StudyBudget budget;
    std::string data_path;
    std::string outdir;
};

inline int run_ablate(const AblateOpts& opt, std::ostream& log = std::cout) {
    Stopwatch watch;
    DatasetBundle raw = load_wfr(opt.data_path);
    StudyBudget budget = opt.budget;
    fit_model_to_bundle(budget.model, raw);

    AblationResult result = run_ablation(raw, budget);

    nlohmann::json config{{"budget_model", budget.model}, {"epochs", budget.epochs},
                          {"windows", budget.windows},    {"seed", budget.seed},
                          {"leads", budget.leads},        {"data", opt.data_path}};
    const std::string dir = make_run_dir(opt.outdir, "ablate", config);
    const std::string csv = dir + "/ablation.csv";
    const std::string md = dir + "/ablation.md";
    {
        std::ofstream os(csv, std::ios::trunc);
        write_ablation_csv(result, os);
    }
    {
        std::ofstream os(md, std::ios::trunc);
        write_ablation_markdown(result, os);
    }
    write_manifest(dir, "ablate", config, budget.seed, {csv, md}, watch.seconds());
    std::ifstream mdin(md);
    log << mdin.rdbuf() << "table: " << md << "\n";
    return kOk;
}

// ---------------------------------------------------------------------------
// noise-study
// ---------------------------------------------------------------------------

struct NoiseStudyOpts {
    StudyBudget budget;
    std::vector<std::uint64_t> seeds{1, 2, 3};
    bool two_step = false;
    std::string data_path;
    std::string outdir;
};

inline int run_noise_study(const NoiseStudyOpts& opt, std::ostream& log = std::cout) {
    Stopwatch watch;
    DatasetBundle raw = load_wfr(opt.data_path);
    StudyBudget budget = opt.budget;
    fit_model_to_bundle(budget.model, raw);

    NoiseStudyResult result = wf::run_noise_study(raw, budget, opt.seeds, opt.two_step);

    nlohmann::json config{{"budget_model", budget.model}, {"epochs", budget.epochs},
                          {"windows", budget.windows},    {"seeds", opt.seeds},
                          {"two_step", opt.two_step},     {"data", opt.data_path}};
    const std::string dir = make_run_dir(opt.outdir, "noise-study", config);
    const std::string csv = dir + "/noise_study.csv";
    const std::string md = dir + "/noise_study.md";
    {
        std::ofstream os(csv, std::ios::trunc);
        write_noise_study_csv(result, os);
    }
    {
        std::ofstream os(md, std::ios::trunc);
        write_noise_study_markdown(result, os);
    }
    write_manifest(dir, "noise-study", config, opt.seeds.empty() ? 0 : opt.seeds[0], {csv, md},
                   watch.seconds());
    std::ifstream mdin(md);
    log << mdin.rdbuf() << "table: " << md << "\n";
    return kOk;
}

} // namespace wf::cli

#endif // WF_CLI_HPP
