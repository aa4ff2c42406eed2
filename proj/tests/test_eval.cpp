#include <doctest.h>

#include <sstream>

#include "oracles.hpp"
#include "wf/eval.hpp"

using namespace wf;

namespace {

// last-slice passthrough model (see test_model.cpp)
ModelParams passthrough_model(std::size_t T, std::size_t H, std::size_t W, std::size_t C,
                              double head_bias = 0.0) {
    ModelConfig cfg;
    cfg.input_steps = T;
    cfg.grid_h = H;
    cfg.grid_w = W;
    cfg.channels_dyn = C;
    cfg.channels_static = 0;
    cfg.patch_t = 1;
    cfg.patch_h = 1;
    cfg.patch_w = 1;
    cfg.embed_dim = C;
    cfg.layers = 0;
    cfg.mixer_blocks = 1;
    cfg.activation = Activation::identity;
    cfg.use_layer_norm = false;
    Rng rng(0);
    ModelParams p = init_params(cfg, rng);
    p.embed_w = Field(Shape{C, C});
    p.head_w = Field(Shape{C, C});
    p.conv_w[0] = Field(Shape{3, 3, C, C});
    for (std::size_t c = 0; c < C; ++c) {
        p.embed_w.at(c, c) = 1.0;
        p.head_w.at(c, c) = 1.0;
        p.conv_w[0].at(1, 1, c, c) = 1.0;
    }
    for (std::size_t c = 0; c < C; ++c) p.head_b[c] = head_bias;
    return p;
}

} // namespace

TEST_CASE("lat_weights: trivial and derived cases") {
    SUBCASE("equal latitudes give unit weights") {
        auto w = lat_weights({20.0, 20.0, 20.0});
        for (double v : w) CHECK(v == doctest::Approx(1.0).epsilon(1e-15));
    }
    SUBCASE("symmetric pair gives unit weights") {
        auto w = lat_weights({-45.0, 45.0});
        CHECK(w[0] == doctest::Approx(1.0).epsilon(1e-15));
        CHECK(w[1] == doctest::Approx(1.0).epsilon(1e-15));
    }
    SUBCASE("(0, 60) degrees: weights (4/3, 2/3)") {
        auto w = lat_weights({0.0, 60.0});
        CHECK(w[0] == doctest::Approx(4.0 / 3.0).epsilon(1e-12));
        CHECK(w[1] == doctest::Approx(2.0 / 3.0).epsilon(1e-12));
    }
    SUBCASE("unit mean for any latitude vector") {
        Rng rng(61);
        for (int rep = 0; rep < 10; ++rep) {
            std::vector<double> lats(1 + rng.uniform_below(20));
            for (double& l : lats) l = rng.uniform() * 178.0 - 89.0;
            auto w = lat_weights(lats);
            double mean = 0.0;
            for (double v : w) mean += v;
            mean /= static_cast<double>(w.size());
            CHECK(std::abs(mean - 1.0) <= 1e-12);
        }
    }
    SUBCASE("poles are rejected") {
        CHECK_THROWS_AS(lat_weights({0.0, 90.0}), ArgumentError);
        CHECK_THROWS_AS(lat_weights({-90.0}), ArgumentError);
    }
}

TEST_CASE("weighted_rmse: trivial and derived cases") {
    Rng rng(62);
    SUBCASE("pred == truth gives zero") {
        Field a = oracles::random_field(Shape{3, 4, 2}, rng);
        auto r = weighted_rmse(a, a, lat_weights({-30.0, 0.0, 30.0}));
        for (double v : r) CHECK(v == 0.0);
    }
    SUBCASE("constant error e gives |e| (weights average to one)") {
        Field t = oracles::random_field(Shape{4, 3, 1}, rng);
        Field p = t;
        for (std::size_t i = 0; i < p.size(); ++i) p[i] += -0.75;
        auto w = lat_weights({-60.0, -20.0, 20.0, 60.0});
        auto r = weighted_rmse(p, t, w);
        CHECK(r[0] == doctest::Approx(0.75).epsilon(1e-12));
    }
    SUBCASE("two-sample 2x2 case matches direct formula evaluation") {
        const std::vector<double> lats{0.0, 60.0};
        auto w = lat_weights(lats);
        std::vector<Field> preds, truths;
        for (int s = 0; s < 2; ++s) {
            preds.push_back(oracles::random_field(Shape{2, 2, 1}, rng));
            truths.push_back(oracles::random_field(Shape{2, 2, 1}, rng));
        }
        auto got = weighted_rmse(preds, truths, w);
        // direct appendix-formula evaluation: RMSE = mean_s sqrt(MSE_s)
        double acc = 0.0;
        for (int s = 0; s < 2; ++s) {
            double mse = 0.0;
            for (std::size_t j = 0; j < 2; ++j)
                for (std::size_t k = 0; k < 2; ++k) {
                    const double e = preds[s].at(j, k, std::size_t{0}) -
                                     truths[s].at(j, k, std::size_t{0});
                    mse += w[j] * e * e;
                }
            acc += std::sqrt(mse / 4.0);
        }
        CHECK(got[0] == doctest::Approx(acc / 2.0).epsilon(1e-12));
    }
}

TEST_CASE("acc: extremes, direct formula, degenerate variance") {
    Rng rng(63);
    Field clim(Shape{2, 2, 1}, 1.0);
    auto w = lat_weights({-20.0, 20.0});
    SUBCASE("pred == truth with nonzero anomalies gives 1") {
        Field t = oracles::random_field(Shape{2, 2, 1}, rng);
        auto a = acc({t}, {t}, clim, w);
        CHECK(a[0] == doctest::Approx(1.0).epsilon(1e-12));
    }
    SUBCASE("anti-correlated anomalies give -1") {
        Field t = oracles::random_field(Shape{2, 2, 1}, rng);
        Field p(t.shape());
        for (std::size_t i = 0; i < t.size(); ++i) p[i] = 2.0 * clim[i] - t[i]; // p' = -t'
        auto a = acc({p}, {t}, clim, w);
        CHECK(a[0] == doctest::Approx(-1.0).epsilon(1e-12));
    }
    SUBCASE("2x2x2 case matches direct formula evaluation") {
        std::vector<Field> preds, truths;
        for (int s = 0; s < 2; ++s) {
            preds.push_back(oracles::random_field(Shape{2, 2, 1}, rng));
            truths.push_back(oracles::random_field(Shape{2, 2, 1}, rng));
        }
        auto got = acc(preds, truths, clim, w);
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
        CHECK(got[0] == doctest::Approx(num / std::sqrt(dp * dt)).epsilon(1e-12));
    }
    SUBCASE("one-sided zero anomaly variance reports 0") {
        Field t = oracles::random_field(Shape{2, 2, 1}, rng);
        auto a = acc({clim}, {t}, clim, w); // pred anomalies identically zero
        CHECK(a[0] == 0.0);
    }
    SUBCASE("zero anomaly variance on both sides is undefined") {
        CHECK_THROWS_AS(acc({clim}, {clim}, clim, w), StateError);
    }
    SUBCASE("invariant under shifting pred, truth and climatology together") {
        std::vector<Field> preds{oracles::random_field(Shape{2, 2, 1}, rng)};
        std::vector<Field> truths{oracles::random_field(Shape{2, 2, 1}, rng)};
        auto base = acc(preds, truths, clim, w);
        Field shift = oracles::random_field(Shape{2, 2, 1}, rng);
        std::vector<Field> preds2{add(preds[0], shift)};
        std::vector<Field> truths2{add(truths[0], shift)};
        auto shifted = acc(preds2, truths2, add(clim, shift), w);
        CHECK(std::abs(base[0] - shifted[0]) <= 1e-10);
    }
}

TEST_CASE("rollout: n=1 equals a single forward call; rollouts are bitwise deterministic") {
    ModelConfig cfg;
    cfg.input_steps = 3;
    cfg.grid_h = 4;
    cfg.grid_w = 8;
    cfg.channels_dyn = 2;
    cfg.channels_static = 1;
    cfg.patch_t = 1;
    cfg.patch_h = 1;
    cfg.patch_w = 1;
    cfg.embed_dim = 8;
    cfg.layers = 1;
    cfg.mixer_blocks = 2;
    cfg.mlp_ratio = 2;
    Rng rng(64);
    ModelParams p = init_params(cfg, rng);
    Field x0 = oracles::random_field(Shape{3, 4, 8, 3}, rng);
    ForecastSeries s1 = rollout(x0, p, 1);
    Field direct = forward(x0, p);
    CHECK(oracles::max_abs_diff(s1.leads[0], direct) == 0.0);

    ForecastSeries a = rollout(x0, p, 4);
    ForecastSeries b = rollout(x0, p, 4);
    for (std::size_t l = 0; l < 4; ++l)
        for (std::size_t i = 0; i < a.leads[l].size(); ++i)
            CHECK(a.leads[l][i] == b.leads[l][i]); // bitwise
}

TEST_CASE("rollout window bookkeeping matches the sliding-window trace oracle") {
    // passthrough-with-bias model: output = last window slice + 100, so every
    // frame carries a distinguishable tag
    const std::size_t T = 3, H = 2, W = 2, C = 1;
    ModelParams p = passthrough_model(T, H, W, C, 100.0);
    Field x0(Shape{T, H, W, C});
    for (std::size_t tau = 0; tau < T; ++tau)
        for (std::size_t i = 0; i < H * W; ++i) x0[tau * H * W + i] = static_cast<double>(tau + 1);

    std::vector<std::vector<double>> seen; // window tags at each lead
    auto observer = [&](std::size_t, const Field& window) {
        std::vector<double> tags;
        for (std::size_t tau = 0; tau < T; ++tau) tags.push_back(window.at(tau, 0u, 0u, 0u));
        seen.push_back(tags);
    };
    rollout(x0, p, 5, observer);

    // independent trace: window starts [1,2,3]; each step drops the head and
    // appends prediction = tail + 100
    std::vector<std::vector<double>> want;
    std::vector<double> win{1, 2, 3};
    for (int lead = 1; lead <= 5; ++lead) {
        want.push_back(win);
        const double pred = win.back() + 100.0;
        win.erase(win.begin());
        win.push_back(pred);
    }
    CHECK(seen == want);
    // at lead 4 the window is [pred_1, pred_2, pred_3] = [103, 203, 303]
    CHECK(seen[3] == std::vector<double>{103.0, 203.0, 303.0});
}

TEST_CASE("rollout: identity dynamics are a fixed point") {
    const std::size_t T = 3, H = 4, W = 6, C = 2;
    ModelParams p = passthrough_model(T, H, W, C);
    Rng rng(65);
    Field x0 = oracles::random_field(Shape{T, H, W, C}, rng);
    ForecastSeries s = rollout(x0, p, 4);
    Field last = reshape(slice_axis(x0, 0, T - 1, 1), Shape{H, W, C});
    for (std::size_t l = 0; l < 4; ++l) CHECK(oracles::max_abs_diff(s.leads[l], last) <= 1e-15);
}

TEST_CASE("baselines: stationary dataset scores zero RMSE") {
    DatasetBundle b;
    b.snapshots = Field(Shape{12, 2, 4, 2});
    for (std::size_t t = 0; t < 12; ++t)
        for (std::size_t i = 0; i < 8; ++i) {
            b.snapshots[(t * 8 + i) * 2] = 1.0 + 0.25 * static_cast<double>(i); // frozen field
            b.snapshots[(t * 8 + i) * 2 + 1] = 0.5;                             // static
        }
    b.latitudes = {-30.0, 30.0};
    b.channel_meta = {{"a", false, 0, 1}, {"oro", true, 0, 1}};
    b.train = {0, 6};
    b.val = {6, 8};
    b.test = {8, 12};
    EvalOptions opt;
    opt.leads = 2;
    EvalReport rep = baselines(b, 1, opt);
    CHECK(rep.lookup("persistence", 1, 0) == 0.0);
    CHECK(rep.lookup("persistence", 2, 0) == 0.0);
    CHECK(rep.lookup("climatology", 1, 0) == 0.0);
}

TEST_CASE("baselines on pure advection match the generator's closed form") {
    GenConfig cfg;
    cfg.grid_h = 6;
    cfg.grid_w = 12;
    cfg.n_time = 60;
    cfg.channels_dyn = 1;
    cfg.seed = 5;
    cfg.speed_base = 1.0; // exactly one column per step
    cfg.speed_amp = 0.0;
    cfg.diffusion = {0.0};
    DatasetBundle b = generate(cfg);
    EvalOptions opt;
    opt.leads = 1;
    const std::size_t T = 2;
    EvalReport rep = baselines(b, T, opt);
    const auto w = lat_weights(b.latitudes);

    // persistence error at lead 1 = displacement by the known one-column
    // shift, computed directly from the data
    std::vector<Field> lasts, truths;
    for (std::size_t i = b.test.begin; i + T < b.test.end; ++i) {
        lasts.push_back(snapshot_dyn(b, i + T - 1));
        truths.push_back(roll(snapshot_dyn(b, i + T - 1), 1, 1)); // generator's step
    }
    const auto want = weighted_rmse(lasts, truths, w);
    CHECK(rep.lookup("persistence", 1, 0) == doctest::Approx(want[0]).epsilon(1e-5));

    // climatology predictions have identically zero anomalies -> ACC 0
    CHECK(rep.lookup("climatology", 1, 0, true) == 0.0);
}

TEST_CASE("evaluate_model emits CSV and a table with the contracted layout") {
    const std::size_t T = 2, H = 4, W = 6, C = 2;
    ModelParams p = passthrough_model(T, H, W, C);
    GenConfig gc;
    gc.grid_h = H;
    gc.grid_w = W;
    gc.n_time = 30;
    gc.channels_dyn = C;
    gc.seed = 3;
    DatasetBundle raw = generate(gc);
    // passthrough model has no static channel: drop it from the dataset
    DatasetBundle nostat = raw;
    nostat.snapshots = Field(Shape{raw.n_time(), H, W, C});
    for (std::size_t t = 0; t < raw.n_time(); ++t)
        for (std::size_t i = 0; i < H * W; ++i)
            for (std::size_t c = 0; c < C; ++c)
                nostat.snapshots[(t * H * W + i) * C + c] =
                    raw.snapshots[(t * H * W + i) * raw.channels() + c];
    nostat.channel_meta = {raw.channel_meta[0], raw.channel_meta[1]};

    EvalOptions opt;
    opt.leads = 3;
    EvalReport rep = evaluate_model(nostat, p, opt);
    CHECK(rep.init_count >= 1);

    std::ostringstream csv;
    write_eval_csv(rep, csv);
    std::istringstream lines(csv.str());
    std::string line;
    std::getline(lines, line);
    CHECK(line == "method,lead,channel,rmse,acc");
    std::size_t rows = 0;
    while (std::getline(lines, line)) ++rows;
    CHECK(rows == 3 * 3 * 2); // methods x leads x channels

    std::ostringstream table;
    write_eval_table(rep, table);
    std::istringstream tl(table.str());
    std::getline(tl, line);
    CHECK(line.find("RMSE(1/2/3)") != std::string::npos);
    CHECK(line.find("ACC(1/2/3)") != std::string::npos);
}

TEST_CASE("evaluate_model rejects a dataset/checkpoint grid mismatch") {
    ModelParams p = passthrough_model(2, 4, 6, 2);
    GenConfig gc;
    gc.grid_h = 8;
    gc.grid_w = 6;
    gc.n_time = 20;
    gc.channels_dyn = 2;
    DatasetBundle raw = generate(gc);
    EvalOptions opt;
    CHECK_THROWS_AS(evaluate_model(raw, p, opt), ArgumentError);
}
