#include <doctest.h>

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <sstream>

#include "oracles.hpp"
#include "wf/cli.hpp"

using namespace wf;
namespace fs = std::filesystem;

namespace {

std::string file_bytes(const std::string& path) {
    std::ifstream is(path, std::ios::binary);
    REQUIRE(is.good());
    return std::string((std::istreambuf_iterator<char>(is)), std::istreambuf_iterator<char>());
}

struct TempDir {
    fs::path path;
    explicit TempDir(const std::string& name) : path(fs::temp_directory_path() / name) {
        fs::remove_all(path);
        fs::create_directories(path);
    }
    ~TempDir() { fs::remove_all(path); }
    std::string str(const std::string& rel = "") const { return (path / rel).string(); }
};

GenConfig cli_dataset_cfg() {
    GenConfig g;
    g.grid_h = 8;
    g.grid_w = 16;
    g.n_time = 80;
    g.channels_dyn = 2;
    g.seed = 21;
    return g;
}

TrainConfig cli_train_cfg() {
    TrainConfig tc;
    tc.model.input_steps = 2;
    tc.model.patch_t = 1;
    tc.model.embed_dim = 8;
    tc.model.layers = 1;
    tc.model.mixer_blocks = 2;
    tc.model.mlp_ratio = 2;
    tc.epochs = 1;
    tc.batch_size = 4;
    tc.seed = 5;
    tc.max_train_windows = 8;
    return tc;
}

} // namespace

TEST_CASE("gen-data: flags round-trip through the file and runs are byte-identical") {
    TempDir tmp("wf_cli_gen");
    cli::GenDataOpts opt;
    opt.gen = cli_dataset_cfg();
    opt.output = tmp.str("a.wfr");
    opt.outdir = tmp.str("runs");
    std::ostringstream log;
    CHECK(cli::run_gen_data(opt, log) == cli::kOk);

    DatasetBundle b = load_wfr(opt.output);
    CHECK(b.grid_h() == 8);
    CHECK(b.grid_w() == 16);
    CHECK(b.n_time() == 80);
    CHECK(b.channels_dyn() == 2);

    opt.output = tmp.str("b.wfr");
    CHECK(cli::run_gen_data(opt, log) == cli::kOk);
    CHECK(file_bytes(tmp.str("a.wfr")) == file_bytes(tmp.str("b.wfr")));

    // each run directory holds exactly one manifest
    std::size_t manifests = 0, dirs = 0;
    for (const auto& d : fs::directory_iterator(tmp.str("runs"))) {
        ++dirs;
        std::size_t inside = 0;
        for (const auto& f : fs::directory_iterator(d.path()))
            if (f.path().filename() == "manifest.json") ++inside;
        CHECK(inside == 1);
        ++manifests;
    }
    CHECK(dirs == 2);
}

TEST_CASE("train command: epochs 0 writes the untouched initialization") {
    TempDir tmp("wf_cli_train0");
    cli::GenDataOpts gd;
    gd.gen = cli_dataset_cfg();
    gd.output = tmp.str("d.wfr");
    gd.outdir = tmp.str("runs");
    std::ostringstream log;
    REQUIRE(cli::run_gen_data(gd, log) == cli::kOk);

    cli::TrainOpts to;
    to.train = cli_train_cfg();
    to.train.epochs = 0;
    to.data_path = gd.output;
    to.outdir = tmp.str("runs");
    REQUIRE(cli::run_train(to, log) == cli::kOk);

    // locate the produced checkpoint
    std::string ckpt;
    for (const auto& d : fs::recursive_directory_iterator(tmp.str("runs")))
        if (d.path().filename() == "checkpoint.wfck") ckpt = d.path().string();
    REQUIRE(!ckpt.empty());

    ModelParams got = load_checkpoint(ckpt);
    Rng init_rng = Rng::stream(to.train.seed, "init");
    ModelConfig mc = to.train.model;
    cli::fit_model_to_bundle(mc, load_wfr(gd.output));
    ModelParams want = init_params(mc, init_rng);
    const auto a = to_flat(got), b = to_flat(want);
    REQUIRE(a.size() == b.size());
    for (std::size_t i = 0; i < a.size(); ++i) CHECK(a[i] == b[i]);
}

TEST_CASE("train command: identical seeds give identical checkpoints by bytes") {
    TempDir tmp("wf_cli_det");
    cli::GenDataOpts gd;
    gd.gen = cli_dataset_cfg();
    gd.output = tmp.str("d.wfr");
    gd.outdir = tmp.str("runs");
    std::ostringstream log;
    REQUIRE(cli::run_gen_data(gd, log) == cli::kOk);

    auto run_once = [&](const std::string& sub) {
        cli::TrainOpts to;
        to.train = cli_train_cfg();
        to.data_path = gd.output;
        to.outdir = tmp.str(sub);
        REQUIRE(cli::run_train(to, log) == cli::kOk);
        std::string ckpt;
        for (const auto& d : fs::recursive_directory_iterator(tmp.str(sub)))
            if (d.path().filename() == "checkpoint.wfck") ckpt = d.path().string();
        REQUIRE(!ckpt.empty());
        return file_bytes(ckpt);
    };
    CHECK(run_once("r1") == run_once("r2"));
}

TEST_CASE("evaluate command: oracle checkpoint scores RMSE ~0, ACC ~1 at lead 1") {
    TempDir tmp("wf_cli_oracle");
    // pure advection dataset: one column east per step, no damping
    GenConfig g = cli_dataset_cfg();
    g.speed_base = 1.0;
    g.speed_amp = 0.0;
    g.diffusion = {0.0};
    cli::GenDataOpts gd;
    gd.gen = g;
    gd.output = tmp.str("adv.wfr");
    gd.outdir = tmp.str("runs");
    std::ostringstream log;
    REQUIRE(cli::run_gen_data(gd, log) == cli::kOk);
    DatasetBundle raw = load_wfr(gd.output);

    // oracle model: identity tokenizer, conv wired to the exact one-column
    // shift, head selecting the dynamic channels
    ModelConfig mc;
    mc.input_steps = 2;
    mc.grid_h = 8;
    mc.grid_w = 16;
    mc.channels_dyn = 2;
    mc.channels_static = 1;
    mc.patch_t = 1;
    mc.patch_h = 1;
    mc.patch_w = 1;
    mc.embed_dim = 3;
    mc.layers = 0;
    mc.mixer_blocks = 1;
    mc.mlp_ratio = 1;
    mc.activation = Activation::identity;
    mc.use_layer_norm = false;
    Rng rng(0);
    ModelParams oracle = init_params(mc, rng);
    oracle.embed_w = Field(Shape{3, 3});
    oracle.head_w = Field(Shape{3, 2});
    oracle.conv_w[0] = Field(Shape{3, 3, 3, 3});
    oracle.head_b = Field(Shape{2});
    for (std::size_t c = 0; c < 3; ++c) {
        oracle.embed_w.at(c, c) = 1.0;
        oracle.conv_w[0].at(1u, 0u, c, c) = 1.0; // out(k) = in(k-1): roll east
    }
    oracle.head_w.at(0u, 0u) = 1.0;
    oracle.head_w.at(1u, 1u) = 1.0;
    const std::string ckpt = tmp.str("oracle.wfck");
    save_checkpoint(oracle, ckpt);

    cli::EvaluateOpts eo;
    eo.checkpoint = ckpt;
    eo.data_path = gd.output;
    eo.leads = 2;
    eo.outdir = tmp.str("runs");
    REQUIRE(cli::run_evaluate(eo, log) == cli::kOk);

    // the normalization round trip and f32 storage leave only tiny residue
    EvalReport rep = evaluate_model(raw, oracle, EvalOptions{2, 0});
    CHECK(rep.lookup("model", 1, 0) <= 1e-5);
    CHECK(rep.lookup("model", 1, 1) <= 1e-5);
    CHECK(rep.lookup("model", 1, 0, true) >= 0.999999);
    CHECK(rep.lookup("model", 2, 0) <= 1e-5); // the oracle nails every lead
}

TEST_CASE("train command: a diverging run exits with the training-abort code") {
    TempDir tmp("wf_cli_abort");
    cli::GenDataOpts gd;
    gd.gen = cli_dataset_cfg();
    gd.output = tmp.str("d.wfr");
    gd.outdir = tmp.str("runs");
    std::ostringstream log;
    REQUIRE(cli::run_gen_data(gd, log) == cli::kOk);

    cli::TrainOpts to;
    to.train = cli_train_cfg();
    to.train.epochs = 3;
    to.train.opt.base_lr = 1e18;
    to.train.opt.warmup_epochs = 0;
    to.data_path = gd.output;
    to.outdir = tmp.str("runs");
    CHECK(cli::run_train(to, log) == cli::kTrainAbort);
    CHECK(log.str().find("training aborted") != std::string::npos);
}

TEST_CASE("evaluate command: grid mismatch exits with the dedicated code") {
    TempDir tmp("wf_cli_mismatch");
    cli::GenDataOpts gd;
    gd.gen = cli_dataset_cfg();
    gd.output = tmp.str("d.wfr");
    gd.outdir = tmp.str("runs");
    std::ostringstream log;
    REQUIRE(cli::run_gen_data(gd, log) == cli::kOk);

    ModelConfig mc;
    mc.input_steps = 2;
    mc.grid_h = 4; // dataset is 8 x 16
    mc.grid_w = 16;
    mc.channels_dyn = 2;
    mc.channels_static = 1;
    mc.patch_t = 1;
    mc.embed_dim = 4;
    mc.layers = 0;
    mc.mixer_blocks = 1;
    Rng rng(0);
    ModelParams p = init_params(mc, rng);
    const std::string ckpt = tmp.str("bad.wfck");
    save_checkpoint(p, ckpt);

    cli::EvaluateOpts eo;
    eo.checkpoint = ckpt;
    eo.data_path = gd.output;
    eo.outdir = tmp.str("runs");
    CHECK(cli::run_evaluate(eo, log) == cli::kConfigMismatch);
}

TEST_CASE("gradcheck command exits 0 on pass, 5 on a corrupted rule, 2 on no samples") {
    TempDir tmp("wf_cli_gc");
    cli::GradcheckOpts gc;
    gc.model.input_steps = 2;
    gc.model.grid_h = 4;
    gc.model.grid_w = 8;
    gc.model.channels_dyn = 1;
    gc.model.channels_static = 0;
    gc.model.patch_t = 1;
    gc.model.embed_dim = 4;
    gc.model.layers = 1;
    gc.model.mixer_blocks = 1;
    gc.model.mlp_ratio = 2;
    gc.check.samples = 40;
    gc.check.seed = 4;
    gc.outdir = tmp.str("runs");
    std::ostringstream log;
    CHECK(cli::run_gradcheck(gc, log) == cli::kOk);

    gc.check.corrupt_group = "lambda";
    CHECK(cli::run_gradcheck(gc, log) == cli::kGradcheckFail);
    CHECK(log.str().find("lambda") != std::string::npos);

    gc.check.corrupt_group.clear();
    gc.check.samples = 0;
    CHECK(cli::run_gradcheck(gc, log) == cli::kUsage);
}

TEST_CASE("kernel-dump writes one row per grid index and rejects non-PAFNO checkpoints") {
    TempDir tmp("wf_cli_kd");
    ModelConfig mc;
    mc.input_steps = 2;
    mc.grid_h = 4;
    mc.grid_w = 8;
    mc.channels_dyn = 1;
    mc.channels_static = 0;
    mc.patch_t = 1;
    mc.embed_dim = 4;
    mc.layers = 1;
    mc.mixer_blocks = 1;
    Rng rng(2);
    ModelParams p = init_params(mc, rng);
    const std::string ckpt = tmp.str("m.wfck");
    save_checkpoint(p, ckpt);

    cli::KernelDumpOpts kd;
    kd.checkpoint = ckpt;
    kd.output = tmp.str("kernel.csv");
    kd.outdir = tmp.str("runs");
    std::ostringstream log;
    CHECK(cli::run_kernel_dump(kd, log) == cli::kOk);
    std::ifstream csv(kd.output);
    std::string line;
    std::getline(csv, line);
    CHECK(line == "i0,i1,value");
    std::size_t rows = 0;
    while (std::getline(csv, line)) ++rows;
    CHECK(rows == 4 * 8);

    mc.mixer_mode = MixerMode::afno;
    ModelParams q = init_params(mc, rng);
    save_checkpoint(q, tmp.str("afno.wfck"));
    kd.checkpoint = tmp.str("afno.wfck");
    CHECK(cli::run_kernel_dump(kd, log) == cli::kUsage);
}

TEST_CASE("ablation ladder: row structure, single-toggle diffs, pipeline equivalence") {
    TempDir tmp("wf_cli_ablate");
    GenConfig g = cli_dataset_cfg();
    g.n_time = 70;
    DatasetBundle raw = generate(g);

    StudyBudget budget;
    budget.model.input_steps = 2;
    budget.model.patch_t = 1;
    budget.model.embed_dim = 8;
    budget.model.layers = 1;
    budget.model.mixer_blocks = 2;
    budget.model.mlp_ratio = 2;
    cli::fit_model_to_bundle(budget.model, raw);
    budget.epochs = 1;
    budget.windows = 6;
    budget.seed = 9;
    budget.leads = {1, 3, 5};

    AblationResult res = run_ablation(raw, budget);
    REQUIRE(res.rows.size() == 5);
    CHECK(res.rows[0].label == "baseline");
    CHECK(res.rows[4].label == "+noise");

    // consecutive configs differ in exactly one field
    for (std::size_t i = 1; i < 5; ++i) {
        nlohmann::json a = res.rows[i - 1].config;
        nlohmann::json b = res.rows[i].config;
        const auto diff = nlohmann::json::diff(a, b);
        CHECK(diff.size() == 1);
        CHECK(res.rows[i].config_hash != res.rows[i - 1].config_hash);
    }
    CHECK(res.rows[0].config.model.mixer_mode == MixerMode::afno);
    CHECK_FALSE(res.rows[0].config.model.use_temporal_mixer);
    CHECK(res.rows[2].config.model.mixer_mode == MixerMode::pafno);
    CHECK(res.rows[3].config.aug.rotate);
    CHECK(res.rows[4].config.aug.noise);

    // pipeline equivalence: re-running one row's config through
    // train + evaluate reproduces the tabulated numbers exactly
    TrainResult tr = train(raw, res.rows[2].config);
    EvalOptions eo;
    eo.leads = 5;
    EvalReport rep = evaluate_model(raw, tr.params, eo);
    for (std::size_t lead : {1u, 3u, 5u})
        CHECK(rep.lookup("model", lead, 0) == res.rows[2].report.lookup("model", lead, 0));

    // markdown table has the five ladder rows
    std::ostringstream md;
    write_ablation_markdown(res, md);
    std::size_t lines = 0;
    std::istringstream is(md.str());
    std::string line;
    while (std::getline(is, line)) ++lines;
    CHECK(lines == 2 + 5);
}

TEST_CASE("noise study: run grid, verdict accounting, markdown") {
    GenConfig g = cli_dataset_cfg();
    g.n_time = 70;
    DatasetBundle raw = generate(g);

    StudyBudget budget;
    budget.model.input_steps = 2;
    budget.model.patch_t = 1;
    budget.model.embed_dim = 8;
    budget.model.layers = 1;
    budget.model.mixer_blocks = 2;
    budget.model.mlp_ratio = 2;
    cli::fit_model_to_bundle(budget.model, raw);
    budget.epochs = 1;
    budget.windows = 6;
    budget.leads = {1, 5};

    NoiseStudyResult res = run_noise_study(raw, budget, {3, 4}, false);
    CHECK(res.runs.size() == 4); // 2 seeds x {off, on}
    CHECK(res.seeds.size() == 2);
    CHECK(res.noise_wins <= 2);
    CHECK(res.eval_lead == 5);
    for (std::uint64_t seed : {3u, 4u}) {
        CHECK(res.find(seed, false, false) != nullptr);
        CHECK(res.find(seed, true, false) != nullptr);
    }
    // verdict recomputed independently
    std::size_t wins = 0;
    for (std::uint64_t seed : {3u, 4u})
        if (res.find(seed, true, false)->report.mean_rmse("model", 5) <=
            res.find(seed, false, false)->report.mean_rmse("model", 5))
            ++wins;
    CHECK(wins == res.noise_wins);

    std::ostringstream md;
    write_noise_study_markdown(res, md);
    CHECK(md.str().find("noise-on <= noise-off") != std::string::npos);
}

#ifdef WF_CLI_PATH
TEST_CASE("binary: usage errors exit 2, valid invocations exit 0") {
    TempDir tmp("wf_cli_bin");
    const std::string bin = WF_CLI_PATH;
    auto run = [&](const std::string& args) {
        const int rc = std::system((bin + " " + args + " > /dev/null 2>&1").c_str());
        return WEXITSTATUS(rc);
    };
    CHECK(run("gen-data") == 2);                     // missing required -o
    CHECK(run("definitely-not-a-command") == 2);
    CHECK(run("gen-data --h 8 --w 16 --steps 40 --seed 1 -o " + tmp.str("t.wfr") +
              " --outdir " + tmp.str("runs")) == 0);
    CHECK(run("--help") == 0);
}

TEST_CASE("binary: --config JSON document drives training, flags override") {
    TempDir tmp("wf_cli_cfgfile");
    const std::string bin = WF_CLI_PATH;
    auto run = [&](const std::string& args) {
        const int rc = std::system((bin + " " + args + " > /dev/null 2>&1").c_str());
        return WEXITSTATUS(rc);
    };
    REQUIRE(run("gen-data --h 8 --w 16 --steps 60 --seed 2 -o " + tmp.str("d.wfr") +
                " --outdir " + tmp.str("runs")) == 0);

    TrainConfig tc = [] {
        TrainConfig t;
        t.model.input_steps = 2;
        t.model.patch_t = 1;
        t.model.embed_dim = 8;
        t.model.layers = 1;
        t.model.mixer_blocks = 2;
        t.model.mlp_ratio = 2;
        t.epochs = 3; // the flag below overrides this
        t.seed = 6;
        t.max_train_windows = 6;
        return t;
    }();
    {
        std::ofstream os(tmp.str("cfg.json"));
        os << nlohmann::json(tc).dump();
    }
    REQUIRE(run("train --config " + tmp.str("cfg.json") + " -d " + tmp.str("d.wfr") +
                " --epochs 0 --outdir " + tmp.str("runs")) == 0);
    // epochs 0 + seed from the file -> checkpoint equals the initialization
    std::string ckpt;
    for (const auto& d : fs::recursive_directory_iterator(tmp.str("runs")))
        if (d.path().filename() == "checkpoint.wfck") ckpt = d.path().string();
    REQUIRE(!ckpt.empty());
    ModelParams got = load_checkpoint(ckpt);
    CHECK(got.cfg.embed_dim == 8);
    Rng init_rng = Rng::stream(6, "init");
    ModelParams want = init_params(got.cfg, init_rng);
    const auto a = to_flat(got), b = to_flat(want);
    REQUIRE(a.size() == b.size());
    for (std::size_t i = 0; i < a.size(); ++i) CHECK(a[i] == b[i]);
}
#endif
