// Acceptance criteria 1-7 and 11: property-based checks with pinned
// tolerances. Each case prints one PASS line; doctest enforces the asserts.
#include <doctest.h>

#include <chrono>
#include <cstdio>
#include <iostream>

#include "oracles.hpp"
#include "wf/cli.hpp"
#include "wf/data.hpp"
#include "wf/eval.hpp"
#include "wf/gradcheck.hpp"
#include "wf/mixer.hpp"
#include "wf/train.hpp"

using namespace wf;

namespace {

struct CriterionTimer {
    const char* name;
    std::chrono::steady_clock::time_point start = std::chrono::steady_clock::now();
    explicit CriterionTimer(const char* n) : name(n) {}
    ~CriterionTimer() {
        const double s =
            std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
        std::printf("[PASS] %s (%.2f s)\n", name, s);
    }
};

} // namespace

TEST_CASE("criterion 1: spectral correctness against naive DFT oracles") {
    CriterionTimer timer("criterion 1: rdft/irdft vs naive oracles, round trip, Parseval");
    Rng rng(101);

    // forward transform vs direct summation, every length 1..16
    for (std::size_t n = 1; n <= 16; ++n) {
        Field f = oracles::random_field(Shape{n}, rng);
        std::vector<double> raw(f.data(), f.data() + n);
        const auto want = oracles::naive_rdft_line(raw);
        const ComplexField got = rdft(f, {0});
        for (std::size_t b = 0; b < want.size(); ++b)
            REQUIRE(std::abs(got[b] - want[b]) <= 1e-10);

        // inverse against the naive symmetric-completion sum
        const Field back = irdft(got, {0}, Shape{n});
        std::vector<oracles::cplx> half(got.data(), got.data() + got.size());
        const auto wantb = oracles::naive_irdft_line(half, n);
        for (std::size_t i = 0; i < n; ++i) REQUIRE(std::abs(back[i] - wantb[i]) <= 1e-10);
    }

    // every 2-D grid up to 16 x 16
    for (std::size_t h = 1; h <= 16; ++h)
        for (std::size_t w = 1; w <= 16; ++w) {
            Field f = oracles::random_field(Shape{h, w}, rng);
            const ComplexField got = rdft(f, {0, 1});
            const ComplexField full = oracles::naive_dft2(f);
            const std::size_t half = w / 2 + 1;
            for (std::size_t bh = 0; bh < h; ++bh)
                for (std::size_t bw = 0; bw < half; ++bw)
                    REQUIRE(std::abs(got[bh * half + bw] - full[bh * w + bw]) <= 1e-10);
            const Field back = irdft(got, {0, 1}, f.shape());
            REQUIRE(oracles::max_abs_diff(back, f) <= 1e-12);
        }

    // round trip and Parseval on lengths 1..32
    for (std::size_t n = 1; n <= 32; ++n) {
        Field f = oracles::random_field(Shape{n}, rng);
        REQUIRE(oracles::max_abs_diff(irdft(rdft(f, {0}), {0}, f.shape()), f) <= 1e-12);

        double spatial = 0.0;
        for (std::size_t i = 0; i < n; ++i) spatial += f[i] * f[i];
        const ComplexField s = rdft(f, {0});
        double spectral = 0.0;
        for (std::size_t b = 0; b < s.size(); ++b) {
            const bool endpoint = (b == 0) || (n % 2 == 0 && b == n / 2);
            spectral += (endpoint ? 1.0 : 2.0) * std::norm(s[b]);
        }
        spectral /= static_cast<double>(n);
        REQUIRE(std::abs(spectral - spatial) <= 1e-9 * std::max(1.0, spatial));
    }
}

TEST_CASE("criterion 2: PAFNO identity and lambda-collapse") {
    CriterionTimer timer("criterion 2: identity-MLP AFNO identity; PAFNO(lambda=1) == AFNO");
    Rng rng(102);
    MixerConfig acfg{MixerDomain::spatial, 8, 2, MixerMode::afno, Nonlinearity::identity};
    SpectralFilter ident = make_identity_filter(acfg, {6, 8});
    Field tokens = oracles::random_field(Shape{6, 8, 8}, rng);
    REQUIRE(oracles::max_abs_diff(mix(tokens, ident, acfg), tokens) <= 1e-12);

    MixerConfig ar{MixerDomain::spatial, 8, 2, MixerMode::afno, Nonlinearity::relu_split};
    MixerConfig pr{MixerDomain::spatial, 8, 2, MixerMode::pafno, Nonlinearity::relu_split};
    Rng ra(7), rp(7);
    SpectralFilter fa = make_filter(ar, {6, 8}, ra);
    SpectralFilter fp = make_filter(pr, {6, 8}, rp);
    REQUIRE(oracles::max_abs_diff(fa.w1, fp.w1) == 0.0); // bitwise shared MLP
    REQUIRE(oracles::max_abs_diff(fa.w2, fp.w2) == 0.0);
    for (std::size_t i = 0; i < fp.lambda.size(); ++i) REQUIRE(fp.lambda[i] == 1.0);
    REQUIRE(oracles::max_abs_diff(mix(tokens, fa, ar), mix(tokens, fp, pr)) <= 1e-12);
}

TEST_CASE("criterion 3: PAFNO linear regime is circular convolution with its kernel") {
    CriterionTimer timer("criterion 3: convolution equivalence on 20 random draws");
    Rng rng(103);
    int draws = 0;
    // 12 spatial grids up to 12 x 12
    for (int d = 0; d < 12; ++d) {
        const std::size_t h = 2 + rng.uniform_below(11);
        const std::size_t w = 2 + rng.uniform_below(11);
        const std::size_t C = 1 + rng.uniform_below(3);
        MixerConfig cfg{MixerDomain::spatial, C, 1, MixerMode::pafno, Nonlinearity::identity};
        SpectralFilter f = make_identity_filter(cfg, {h, w});
        for (std::size_t i = 0; i < f.lambda.size(); ++i) f.lambda[i] = rng.normal();
        Field tokens = oracles::random_field(Shape{h, w, C}, rng);
        Field out = mix(tokens, f, cfg);
        Field kernel = effective_kernel(f.lambda, {h, w});
        for (std::size_t c = 0; c < C; ++c) {
            Field chan(Shape{h, w});
            for (std::size_t i = 0; i < h * w; ++i) chan[i] = tokens[i * C + c];
            Field want = circular_convolve_oracle(chan, kernel, {0, 1});
            for (std::size_t i = 0; i < h * w; ++i)
                REQUIRE(std::abs(out[i * C + c] - want[i]) <= 1e-9);
        }
        ++draws;
    }
    // 8 temporal lengths up to 8
    for (int d = 0; d < 8; ++d) {
        const std::size_t t = 1 + rng.uniform_below(8);
        const std::size_t C = 1 + rng.uniform_below(3);
        MixerConfig cfg{MixerDomain::temporal, C, 1, MixerMode::pafno, Nonlinearity::identity};
        SpectralFilter f = make_identity_filter(cfg, {t});
        for (std::size_t i = 0; i < f.lambda.size(); ++i) f.lambda[i] = rng.normal();
        Field tokens = oracles::random_field(Shape{t, C}, rng);
        Field out = mix(tokens, f, cfg);
        Field kernel = effective_kernel(f.lambda, {t});
        for (std::size_t c = 0; c < C; ++c) {
            Field chan(Shape{t});
            for (std::size_t i = 0; i < t; ++i) chan[i] = tokens[i * C + c];
            Field want = circular_convolve_oracle(chan, kernel, {0});
            for (std::size_t i = 0; i < t; ++i)
                REQUIRE(std::abs(out[i * C + c] - want[i]) <= 1e-9);
        }
        ++draws;
    }
    REQUIRE(draws == 20);
}

TEST_CASE("criterion 4: linear-regime shift equivariance on an 8x8 grid") {
    CriterionTimer timer("criterion 4: mix(roll(x, s)) == roll(mix(x), s) for every shift");
    Rng rng(104);
    MixerConfig cfg{MixerDomain::spatial, 4, 2, MixerMode::pafno, Nonlinearity::identity};
    SpectralFilter f = make_filter(cfg, {8, 8}, rng);
    f.nonlinearity = Nonlinearity::identity;
    f.b1 = Field(Shape{4, 2}); // complex-linear: biases off
    f.b2 = Field(Shape{4, 2});
    for (std::size_t i = 0; i < f.lambda.size(); ++i) f.lambda[i] = rng.normal();
    Field tokens = oracles::random_field(Shape{8, 8, 4}, rng);
    Field mixed = mix(tokens, f, cfg);
    for (long long sh = 0; sh < 8; ++sh)
        for (long long sw = 0; sw < 8; ++sw) {
            Field shifted = roll(roll(tokens, 0, sh), 1, sw);
            Field lhs = mix(shifted, f, cfg);
            Field rhs = roll(roll(mixed, 0, sh), 1, sw);
            REQUIRE(oracles::max_abs_diff(lhs, rhs) <= 1e-9);
        }
}

TEST_CASE("criterion 5: PAFNO adds exactly the retained-bin count") {
    CriterionTimer timer("criterion 5: parameter accounting across 5 configs");
    Rng rng(105);
    struct Case {
        std::vector<std::size_t> grid;
        std::size_t D, k;
    };
    const std::vector<Case> cases = {{{6, 8}, 8, 2},
                                     {{4, 4}, 4, 1},
                                     {{3}, 6, 3},
                                     {{16, 16}, 16, 4},
                                     {{7}, 2, 1}};
    for (const Case& c : cases) {
        const auto domain = c.grid.size() == 2 ? MixerDomain::spatial : MixerDomain::temporal;
        MixerConfig ac{domain, c.D, c.k, MixerMode::afno, Nonlinearity::relu_split};
        MixerConfig pc{domain, c.D, c.k, MixerMode::pafno, Nonlinearity::relu_split};
        SpectralFilter fa = make_filter(ac, c.grid, rng);
        SpectralFilter fp = make_filter(pc, c.grid, rng);
        REQUIRE(param_count(fp) - param_count(fa) == retained_bins(c.grid));
    }
}

TEST_CASE("criterion 6: gradient fidelity of the full model") {
    CriterionTimer timer("criterion 6: finite differences vs reverse mode, >=200 samples");
    ModelConfig cfg;
    cfg.input_steps = 4;
    cfg.grid_h = 8;
    cfg.grid_w = 16;
    cfg.channels_dyn = 2;
    cfg.channels_static = 1;
    cfg.patch_t = 2;
    cfg.embed_dim = 16;
    cfg.layers = 2;
    cfg.mixer_blocks = 2;
    cfg.mlp_ratio = 2;

    GradCheckOptions opt;
    opt.samples = 220;
    opt.epsilon = 1e-5;
    opt.tolerance = 1e-4;
    opt.required_pass = 0.99;
    opt.seed = 0;
    GradCheckReport rep = gradcheck(cfg, opt);
    REQUIRE(rep.total >= 200);
    for (const char* g : {"lambda", "mixer_mlp", "norm", "embedding", "channel_mlp", "decoder"}) {
        bool found = false;
        for (const auto& r : rep.groups) found = found || r.group == g;
        REQUIRE_MESSAGE(found, "group not sampled: ", g);
    }
    std::printf("  gradcheck: %zu samples, %zu failures (pass fraction %.4f)\n", rep.total,
                rep.failures, 1.0 - static_cast<double>(rep.failures) / rep.total);
    REQUIRE(rep.pass);
}

TEST_CASE("criterion 7: metric formulas against direct appendix evaluation") {
    CriterionTimer timer("criterion 7: lat_weights, weighted RMSE, ACC");
    // (0, 60) degrees -> (4/3, 2/3)
    const auto w = lat_weights({0.0, 60.0});
    REQUIRE(std::abs(w[0] - 4.0 / 3.0) <= 1e-12);
    REQUIRE(std::abs(w[1] - 2.0 / 3.0) <= 1e-12);

    Rng rng(107);
    // weighted RMSE vs direct formula on a two-sample 2x2 case
    std::vector<Field> preds, truths;
    for (int s = 0; s < 2; ++s) {
        preds.push_back(oracles::random_field(Shape{2, 2, 1}, rng));
        truths.push_back(oracles::random_field(Shape{2, 2, 1}, rng));
    }
    const auto got = weighted_rmse(preds, truths, w);
    double direct = 0.0;
    for (int s = 0; s < 2; ++s) {
        double mse = 0.0;
        for (std::size_t j = 0; j < 2; ++j)
            for (std::size_t k = 0; k < 2; ++k) {
                const double e =
                    preds[s].at(j, k, std::size_t{0}) - truths[s].at(j, k, std::size_t{0});
                mse += w[j] * e * e;
            }
        direct += std::sqrt(mse / 4.0);
    }
    direct /= 2.0;
    REQUIRE(std::abs(got[0] - direct) <= 1e-12);

    // ACC extremes and the pooled-formula case
    Field clim(Shape{2, 2, 1}, 1.0);
    Field t = oracles::random_field(Shape{2, 2, 1}, rng);
    REQUIRE(std::abs(acc({t}, {t}, clim, w)[0] - 1.0) <= 1e-12);
    Field anti(t.shape());
    for (std::size_t i = 0; i < t.size(); ++i) anti[i] = 2.0 - t[i];
    REQUIRE(std::abs(acc({anti}, {t}, clim, w)[0] + 1.0) <= 1e-12);

    double num = 0, dp = 0, dt = 0;
    for (int s = 0; s < 2; ++s)
        for (std::size_t j = 0; j < 2; ++j)
            for (std::size_t k = 0; k < 2; ++k) {
                const double yp = preds[s].at(j, k, std::size_t{0}) - 1.0;
                const double yt = truths[s].at(j, k, std::size_t{0}) - 1.0;
                num += w[j] * yp * yt;
                dp += w[j] * yp * yp;
                dt += w[j] * yt * yt;
            }
    REQUIRE(std::abs(acc(preds, truths, clim, w)[0] - num / std::sqrt(dp * dt)) <= 1e-12);
}

TEST_CASE("criterion 11: determinism and on-disk formats") {
    CriterionTimer timer("criterion 11: bitwise files, round trips, corruption errors");
    namespace fs = std::filesystem;
    const fs::path tmp = fs::temp_directory_path() / "wf_acceptance_fmt";
    fs::remove_all(tmp);
    fs::create_directories(tmp);

    GenConfig g;
    g.grid_h = 8;
    g.grid_w = 16;
    g.n_time = 50;
    g.channels_dyn = 2;
    g.seed = 31;

    // identical seeds -> bitwise-identical WFR1 files
    DatasetBundle b1 = generate(g);
    DatasetBundle b2 = generate(g);
    const std::string f1 = (tmp / "a.wfr").string(), f2 = (tmp / "b.wfr").string();
    save_wfr(b1, f1);
    save_wfr(b2, f2);
    auto bytes = [](const std::string& p) {
        std::ifstream is(p, std::ios::binary);
        return std::string((std::istreambuf_iterator<char>(is)),
                           std::istreambuf_iterator<char>());
    };
    REQUIRE(bytes(f1) == bytes(f2));

    // WFR1 round trip bitwise
    DatasetBundle r = load_wfr(f1);
    REQUIRE(r.snapshots.size() == b1.snapshots.size());
    for (std::size_t i = 0; i < r.snapshots.size(); ++i)
        REQUIRE(r.snapshots[i] == b1.snapshots[i]);

    // identical seeds -> bitwise-identical checkpoints
    TrainConfig tc;
    tc.model.input_steps = 2;
    tc.model.patch_t = 1;
    tc.model.embed_dim = 8;
    tc.model.layers = 1;
    tc.model.mixer_blocks = 2;
    tc.model.mlp_ratio = 2;
    cli::fit_model_to_bundle(tc.model, b1);
    tc.epochs = 1;
    tc.max_train_windows = 6;
    tc.seed = 3;
    TrainResult t1 = train(b1, tc);
    TrainResult t2 = train(b1, tc);
    const std::string c1 = (tmp / "a.wfck").string(), c2 = (tmp / "b.wfck").string();
    save_checkpoint(t1.params, c1);
    save_checkpoint(t2.params, c2);
    REQUIRE(bytes(c1) == bytes(c2));

    // corrupted magic and truncation produce the designated errors
    {
        std::fstream fio(f1, std::ios::binary | std::ios::in | std::ios::out);
        fio.seekp(0);
        fio.put('X');
    }
    try {
        load_wfr(f1);
        REQUIRE(false);
    } catch (const FormatError& e) {
        REQUIRE(e.kind() == FormatError::Kind::bad_magic);
    }
    {
        const std::string all = bytes(f2);
        std::ofstream out(f2, std::ios::binary | std::ios::trunc);
        out.write(all.data(), static_cast<std::streamsize>(all.size() - 100));
    }
    try {
        load_wfr(f2);
        REQUIRE(false);
    } catch (const FormatError& e) {
        REQUIRE(e.kind() == FormatError::Kind::truncated);
    }
    fs::remove_all(tmp);
}
