// wf: command-line front end for the toy spatio-temporal forecasting engine.
// Subcommands: gen-data, train, evaluate, gradcheck, kernel-dump, ablate,
// noise-study. Exit codes: 0 ok, 2 usage, 3 training abort, 4 config
// mismatch, 5 gradcheck failure.

#include <cstdint>
#include <fstream>
#include <iostream>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <json.hpp>

#include "wf/cli.hpp"

namespace {

/// Loads a TrainConfig from --config before flag parsing so explicit flags
/// override the file values.
wf::TrainConfig preload_config(int argc, char** argv) {
    wf::TrainConfig tc;
    // defaults tuned for the desk-scale toy runs rather than the full model
    tc.model.input_steps = 4;
    tc.model.patch_t = 2;
    tc.model.embed_dim = 64;
    tc.model.layers = 2;
    tc.model.mixer_blocks = 8;
    tc.model.mlp_ratio = 2;
    tc.epochs = 30;
    tc.max_train_windows = 96;
    for (int i = 1; i + 1 < argc; ++i) {
        if (std::string(argv[i]) == "--config") {
            std::ifstream is(argv[i + 1]);
            if (!is) throw wf::ArgumentError(std::string("cannot open config ") + argv[i + 1]);
            nlohmann::json j = nlohmann::json::parse(is);
            tc = j.get<wf::TrainConfig>();
        }
    }
    return tc;
}

void add_budget_flags(CLI::App* cmd, wf::StudyBudget& budget) {
    cmd->add_option("--epochs", budget.epochs, "training epochs per run");
    cmd->add_option("--windows", budget.windows, "train windows per epoch");
    cmd->add_option("--batch-size", budget.batch_size, "windows per optimizer step");
    cmd->add_option("--embed-dim,-D", budget.model.embed_dim, "token embedding dim");
    cmd->add_option("--layers,-L", budget.model.layers, "SF-Block count");
    cmd->add_option("--input-steps,-T", budget.model.input_steps, "input window length");
    cmd->add_option("--patch-t", budget.model.patch_t, "temporal patch size");
    cmd->add_option("--blocks", budget.model.mixer_blocks, "block-diagonal MLP blocks");
    cmd->add_option("--mlp-ratio", budget.model.mlp_ratio, "channel-MLP expansion");
    cmd->add_option("--lr", budget.opt.base_lr, "base learning rate");
    cmd->add_option("--warmup", budget.opt.warmup_epochs, "warmup epochs");
    cmd->add_option("--weight-decay", budget.opt.weight_decay, "decoupled weight decay");
    cmd->add_option("--max-inits", budget.max_inits, "cap on evaluation init times");
}

} // namespace

int main(int argc, char** argv) {
    CLI::App app{"Factorized space-time Fourier-mixer forecasting engine"};
    app.require_subcommand(1);

    // ---- gen-data ----------------------------------------------------------
    wf::cli::GenDataOpts gen;
    auto* cgen = app.add_subcommand("gen-data", "generate a synthetic WFR1 dataset");
    cgen->set_help_flag("--help", "print help"); // frees -h for the grid flag
    cgen->add_option("--h", gen.gen.grid_h, "latitude rows");
    cgen->add_option("--w", gen.gen.grid_w, "longitude columns");
    cgen->add_option("--steps", gen.gen.n_time, "number of snapshots");
    cgen->add_option("--channels", gen.gen.channels_dyn, "dynamic channels");
    cgen->add_option("--seed", gen.gen.seed, "generator seed");
    cgen->add_option("--speed-base", gen.gen.speed_base, "zonal speed offset (cols/step)");
    cgen->add_option("--speed-amp", gen.gen.speed_amp, "zonal speed amplitude (cols/step)");
    cgen->add_option("--diffusion", gen.gen.diffusion, "spectral damping nu (1 or per channel)");
    cgen->add_option("--blobs", gen.gen.blob_count, "Gaussian blobs per channel");
    cgen->add_option("--blob-scale", gen.gen.blob_scale, "blob size fraction");
    cgen->add_option("--train-frac", gen.gen.train_frac, "train split fraction");
    cgen->add_option("--val-frac", gen.gen.val_frac, "validation split fraction");
    cgen->add_option("--step-hours", gen.gen.step_hours, "nominal step interval");
    cgen->add_option("-o,--output", gen.output, "output .wfr path")->required();
    cgen->add_option("--outdir", gen.outdir, "run-directory root");

    // ---- train -------------------------------------------------------------
    wf::cli::TrainOpts tro;
    try {
        tro.train = preload_config(argc, argv);
    } catch (const std::exception& e) {
        std::cerr << e.what() << "\n";
        return wf::cli::kUsage;
    }
    auto* ctrain = app.add_subcommand("train", "train a model on a WFR1 dataset");
    std::string cfg_path;
    ctrain->add_option("--config", cfg_path, "JSON training config (flags override)");
    ctrain->add_option("-d,--data", tro.data_path, "dataset .wfr path")->required();
    ctrain->add_option("--outdir", tro.outdir, "run-directory root");
    ctrain->add_option("--seed", tro.train.seed, "master seed (data/init/augment streams)");
    ctrain->add_option("--epochs", tro.train.epochs, "training epochs");
    ctrain->add_option("--batch-size", tro.train.batch_size, "windows per optimizer step");
    ctrain->add_option("--windows", tro.train.max_train_windows, "train windows per epoch (0=all)");
    ctrain->add_option("--val-windows", tro.train.max_val_windows, "validation windows (0=all)");
    ctrain->add_option("--lr", tro.train.opt.base_lr, "base learning rate");
    ctrain->add_option("--warmup", tro.train.opt.warmup_epochs, "warmup epochs");
    ctrain->add_option("--weight-decay", tro.train.opt.weight_decay, "decoupled weight decay");
    ctrain->add_option("--input-steps,-T", tro.train.model.input_steps, "input window length");
    ctrain->add_option("--embed-dim,-D", tro.train.model.embed_dim, "token embedding dim");
    ctrain->add_option("--layers,-L", tro.train.model.layers, "SF-Block count");
    ctrain->add_option("--patch-t", tro.train.model.patch_t, "temporal patch size");
    ctrain->add_option("--patch-h", tro.train.model.patch_h, "latitude patch size");
    ctrain->add_option("--patch-w", tro.train.model.patch_w, "longitude patch size");
    ctrain->add_option("--blocks", tro.train.model.mixer_blocks, "block-diagonal MLP blocks");
    ctrain->add_option("--mlp-ratio", tro.train.model.mlp_ratio, "channel-MLP expansion");
    ctrain->add_option("--decoder-depth", tro.train.model.decoder_depth, "decoder conv layers");
    std::string mixer = wf::to_string(tro.train.model.mixer_mode);
    ctrain->add_option("--mixer", mixer, "token mixer: afno|pafno|fno");
    bool no_temporal = false;
    ctrain->add_flag("--no-temporal", no_temporal, "drop the temporal mixer");
    ctrain->add_flag("--rotate,!--no-rotate", tro.train.aug.rotate, "earth-rotation augmentation");
    ctrain->add_flag("--noise,!--no-noise", tro.train.aug.noise, "Gaussian noise augmentation");
    ctrain->add_option("--noise-variance", tro.train.aug.noise_variance,
                       "noise variance in normalized units");
    ctrain->add_flag("--two-step", tro.train.two_step, "2-step unrolled training loss");
    bool plain_loss = false;
    ctrain->add_flag("--plain-loss", plain_loss, "plain MSE instead of latitude-weighted");

    // ---- evaluate ----------------------------------------------------------
    wf::cli::EvaluateOpts evo;
    auto* ceval = app.add_subcommand("evaluate", "autoregressive rollout metrics + baselines");
    ceval->add_option("-c,--checkpoint", evo.checkpoint, "checkpoint .wfck path")->required();
    ceval->add_option("-d,--data", evo.data_path, "dataset .wfr path")->required();
    ceval->add_option("--leads", evo.leads, "rollout length");
    ceval->add_option("--max-inits", evo.max_inits, "cap on init times (0=all)");
    ceval->add_option("--outdir", evo.outdir, "run-directory root");

    // ---- gradcheck ---------------------------------------------------------
    wf::cli::GradcheckOpts gco;
    gco.model.input_steps = 4;
    gco.model.grid_h = 8;
    gco.model.grid_w = 16;
    gco.model.channels_dyn = 2;
    gco.model.channels_static = 1;
    gco.model.patch_t = 2;
    gco.model.embed_dim = 16;
    gco.model.layers = 2;
    gco.model.mixer_blocks = 2;
    gco.model.mlp_ratio = 2;
    auto* cgrad = app.add_subcommand("gradcheck", "finite differences vs reverse mode");
    cgrad->add_option("--samples", gco.check.samples, "sampled scalars (>= 1)");
    cgrad->add_option("--epsilon", gco.check.epsilon, "central-difference step");
    cgrad->add_option("--tolerance", gco.check.tolerance, "relative-error threshold");
    cgrad->add_option("--seed", gco.check.seed, "sampling seed");
    cgrad->add_option("--corrupt", gco.check.corrupt_group,
                      "test fixture: corrupt one group's gradients")
        ->group(""); // hidden
    cgrad->add_option("--embed-dim,-D", gco.model.embed_dim, "token embedding dim");
    cgrad->add_option("--layers,-L", gco.model.layers, "SF-Block count");
    cgrad->add_option("--mixer", mixer, "token mixer: afno|pafno|fno")->group("");
    cgrad->add_option("--outdir", gco.outdir, "run-directory root");

    // ---- kernel-dump -------------------------------------------------------
    wf::cli::KernelDumpOpts kdo;
    auto* ckd = app.add_subcommand("kernel-dump", "export an effective PAFNO kernel as CSV");
    ckd->add_option("-c,--checkpoint", kdo.checkpoint, "checkpoint .wfck path")->required();
    ckd->add_option("--block", kdo.block, "SF-Block index");
    ckd->add_option("--domain", kdo.domain, "spatial|temporal");
    ckd->add_option("-o,--output", kdo.output, "output CSV path");
    ckd->add_option("--outdir", kdo.outdir, "run-directory root");

    // ---- ablate ------------------------------------------------------------
    wf::cli::AblateOpts abo;
    abo.budget.model.input_steps = 4;
    abo.budget.model.patch_t = 2;
    abo.budget.model.embed_dim = 32;
    abo.budget.model.layers = 2;
    abo.budget.model.mixer_blocks = 4;
    abo.budget.model.mlp_ratio = 2;
    auto* cab = app.add_subcommand("ablate", "five-row component ablation ladder");
    cab->add_option("-d,--data", abo.data_path, "dataset .wfr path")->required();
    cab->add_option("--seed", abo.budget.seed, "shared seed for every row");
    cab->add_option("--leads", abo.budget.leads, "leads to tabulate");
    add_budget_flags(cab, abo.budget);
    cab->add_option("--outdir", abo.outdir, "run-directory root");

    // ---- noise-study -------------------------------------------------------
    wf::cli::NoiseStudyOpts nso;
    nso.budget.model = abo.budget.model;
    auto* cns = app.add_subcommand("noise-study", "noise augmentation vs two-step training");
    cns->add_option("-d,--data", nso.data_path, "dataset .wfr path")->required();
    cns->add_option("--seeds", nso.seeds, "seeds to repeat over");
    cns->add_flag("--two-step", nso.two_step, "also run the 2-step-loss variants");
    cns->add_option("--leads", nso.budget.leads, "leads to evaluate");
    add_budget_flags(cns, nso.budget);
    cns->add_option("--outdir", nso.outdir, "run-directory root");

    try {
        app.parse(argc, argv);
    } catch (const CLI::CallForHelp& e) {
        return app.exit(e);
    } catch (const CLI::CallForAllHelp& e) {
        return app.exit(e);
    } catch (const CLI::ParseError& e) {
        app.exit(e);
        return wf::cli::kUsage;
    }

    try {
        if (cgen->parsed()) return wf::cli::run_gen_data(gen);
        if (ctrain->parsed()) {
            tro.train.model.mixer_mode = wf::mixer_mode_from_string(mixer);
            if (no_temporal) tro.train.model.use_temporal_mixer = false;
            if (plain_loss) tro.train.lat_weighted_loss = false;
            return wf::cli::run_train(tro);
        }
        if (ceval->parsed()) return wf::cli::run_evaluate(evo);
        if (cgrad->parsed()) {
            gco.model.mixer_mode = wf::mixer_mode_from_string(mixer);
            return wf::cli::run_gradcheck(gco);
        }
        if (ckd->parsed()) return wf::cli::run_kernel_dump(kdo);
        if (cab->parsed()) return wf::cli::run_ablate(abo);
        if (cns->parsed()) return wf::cli::run_noise_study(nso);
    } catch (const wf::ArgumentError& e) {
        std::cerr << "error: " << e.what() << "\n";
        return wf::cli::kUsage;
    } catch (const wf::FormatError& e) {
        std::cerr << "error: " << e.what() << "\n";
        return wf::cli::kFailure;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return wf::cli::kFailure;
    }
    return wf::cli::kUsage;
}
