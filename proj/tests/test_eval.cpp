#include <doctest.h>

#include <cmath>

#include "corrvae/eval.hpp"
#include "support/oracles.hpp"

using namespace corrvae;

namespace {

Tensor shuffled_rows(const Tensor& t, Rng& rng) {
    const std::size_t n = t.dim(0), m = t.dim(1);
    std::vector<double> v(t.values());
    for (std::size_t i = n - 1; i > 0; --i) {
        std::size_t j = rng.next_u64() % (i + 1);
        for (std::size_t k = 0; k < m; ++k) std::swap(v[i * m + k], v[j * m + k]);
    }
    return Tensor::from_data({n, m}, std::move(v));
}

Tensor with_noise(const Tensor& t, double sigma, Rng& rng) {
    std::vector<double> v(t.values());
    for (double& x : v) x += sigma * rng.normal();
    return Tensor::from_data(t.shape(), std::move(v));
}

}  // namespace

TEST_CASE("avgMI estimator") {
    Dataset ds = make_dataset(3000, 99);
    Tensor y = ds.properties_tensor(0, 3000);
    MiMatrix target = property_mi_target(y, 16);

    SUBCASE("the target has unit diagonal and the construction correlations") {
        for (std::size_t i = 0; i < 4; ++i) CHECK(target.at(i, i) == doctest::Approx(1.0).epsilon(1e-12));
        CHECK(target.at(1, 3) > 0.1);   // (x, x+y)
        CHECK(target.at(2, 3) > 0.1);   // (y, x+y)
        CHECK(target.at(0, 1) < 0.08);  // size independent of x
        CHECK(target.at(1, 2) < 0.08);  // x independent of y
    }

    SUBCASE("a perfect copy scores zero against the target") {
        MiMatrix measured;
        double v = avg_mi(y, y, 16, target, &measured);
        CHECK(v <= 1e-24);
        for (std::size_t i = 0; i < 4; ++i) CHECK(measured.at(i, i) == doctest::Approx(1.0).epsilon(1e-12));

        // against a plain identity the off-diagonal true MI is the residual
        MiMatrix ident;
        ident.rows = ident.cols = 4;
        ident.values.assign(16, 0.0);
        for (std::size_t i = 0; i < 4; ++i) ident.values[i * 4 + i] = 1.0;
        double vs_ident = avg_mi(y, y, 16, ident);
        double expect = 0.0;
        for (std::size_t i = 0; i < 4; ++i)
            for (std::size_t j = 0; j < 4; ++j)
                if (i != j) expect += target.at(i, j) * target.at(i, j);
        CHECK(vs_ident == doctest::Approx(expect).epsilon(1e-12));
    }

    SUBCASE("shuffled pairing collapses to the target norm") {
        Rng rng(7);
        Tensor shuf = shuffled_rows(y, rng);
        double v_shuf = avg_mi(shuf, y, 16, target);
        double frob = 0.0;
        for (double t : target.values) frob += t * t;
        CHECK(std::abs(v_shuf - frob) < 0.2);

        Tensor noisy = with_noise(y, 0.03, rng);
        CHECK(v_shuf > avg_mi(noisy, y, 16, target));
    }

    SUBCASE("monotone per-coordinate transforms barely move the score") {
        Rng rng(8);
        Tensor noisy = with_noise(y, 0.03, rng);
        double base = avg_mi(noisy, y, 16, target);
        std::vector<double> v(noisy.values());
        for (double& x : v) x = std::tanh(x);
        double transformed = avg_mi(Tensor::from_data(noisy.shape(), std::move(v)), y, 16, target);
        CHECK(std::abs(transformed - base) < 0.02);
    }

    SUBCASE("degenerate variables flag a warning and score zero") {
        std::vector<double> v(y.values());
        for (std::size_t i = 0; i < 3000; ++i) v[i * 4 + 2] = 0.25;  // constant column
        MiMatrix measured;
        avg_mi(Tensor::from_data({3000, 4}, std::move(v)), y, 16, target, &measured);
        CHECK(measured.degenerate_warning);
        for (std::size_t j = 0; j < 4; ++j) CHECK(measured.at(2, j) == 0.0);
    }

    SUBCASE("input contracts") {
        CHECK_THROWS_AS(pairwise_normalized_mi(ds.properties_tensor(0, 100),
                                               ds.properties_tensor(0, 100), 16),
                        Error);
        CHECK_THROWS_AS(pairwise_normalized_mi(y, y, 4), Error);
    }
}

TEST_CASE("mask recovery scoring") {
    auto truth = ground_truth_pairs();

    SUBCASE("the construction mask scores perfectly") {
        MaskRecovery r = mask_recovery(ground_truth_mask(8), truth);
        CHECK(r.precision == 1.0);
        CHECK(r.recall == 1.0);
        CHECK(r.recovered.size() == 3);
    }
    SUBCASE("an empty mask has zero recall and vacuous precision") {
        MaskRecovery r = mask_recovery(Tensor::zeros({8, 4}), truth);
        CHECK(r.precision == 1.0);
        CHECK(r.recall == 0.0);
    }
    SUBCASE("a fully dense mask recovers everything but over-claims") {
        MaskRecovery r = mask_recovery(Tensor::ones({8, 4}), truth);
        CHECK(r.recall == 1.0);
        CHECK(r.precision == doctest::Approx(0.5));  // 3 true of 6 claimed pairs
    }
}

TEST_CASE("untrained prediction sits at the zero-predictor baseline") {
    TrainConfig cfg;
    cfg.dims.enc_hidden = 32;
    cfg.seed = 5;
    Rng rng(5);
    CorrVae model(cfg, rng);
    Dataset test = make_dataset(400, 1000);

    std::vector<double> mse = prediction_mse(model, test);
    // fresh output layers predict exactly 0, so the analytic baseline per
    // property is E[y^2]; every one far exceeds the 1/12 variance floor
    Tensor y = test.properties_tensor(0, 400);
    for (std::size_t j = 0; j < 4; ++j) {
        double expect = 0.0;
        for (std::size_t i = 0; i < 400; ++i) expect += y.at(i * 4 + j) * y.at(i * 4 + j);
        expect /= 400.0;
        CHECK(mse[j] == doctest::Approx(expect).epsilon(1e-9));
        CHECK(mse[j] > 1.0 / 12.0);
    }

    SUBCASE("empty test set rejected") {
        Dataset empty;
        CHECK_THROWS_AS(prediction_mse(model, empty), Error);
    }
}

TEST_CASE("control battery accounting") {
    TrainConfig cfg;
    cfg.dims.enc_hidden = 32;
    cfg.seed = 6;
    Rng rng(6);
    CorrVae model(cfg, rng);

    SUBCASE("sampled specs are attainable all-value requests") {
        auto battery = sample_value_battery(25, 11);
        CHECK(battery.size() == 25);
        for (const auto& spec : battery) {
            REQUIRE(spec.entries.size() == 4);
            for (const auto& e : spec.entries) CHECK(e.kind == ConstraintKind::Value);
            double s = spec.entries[0].value;
            double x = spec.entries[1].value;
            double y = spec.entries[2].value;
            CHECK(spec.entries[3].value == 0.5 * (x + y));
            CHECK(s >= 0.3);
            CHECK(s <= 0.8);
            // request fits the render box for either shape
            CHECK(x >= s / 4.0);
            CHECK(x <= 1.0 - s / 4.0);
        }
    }

    SUBCASE("a one-spec battery contributes exactly its squared error") {
        auto battery = sample_value_battery(1, 3);
        SolveOptions opts;
        opts.seed = 42;
        opts.restarts = 2;
        opts.inner_steps = 80;
        std::size_t failures = 0;
        std::vector<double> mse = control_mse(model, battery, opts, &failures);
        REQUIRE(failures == 0);

        Rng gen_rng(opts.seed);
        GenerationReport rep = generate(model, battery[0], 1, gen_rng, opts);
        REQUIRE(!rep.achieved_oracle[0].empty());
        for (std::size_t j = 0; j < 4; ++j) {
            double d = rep.achieved_oracle[0][j] - battery[0].entries[j].value;
            CHECK(mse[j] == doctest::Approx(d * d).epsilon(1e-12));
        }
    }
}

TEST_CASE("full evaluation report on a briefly trained model") {
    Dataset train_set = make_dataset(512, 31);
    Dataset test_set = make_dataset(1200, 32);
    TrainConfig cfg;
    cfg.dims.enc_hidden = 64;
    cfg.seed = 31;
    cfg.epochs = 8;
    Rng rng(31);
    CorrVae model(cfg, rng);
    train(model, train_set, rng);

    SolveOptions opts;
    opts.seed = 9;
    opts.restarts = 2;
    opts.inner_steps = 120;
    EvalReport report = evaluate(model, test_set, 4, 16, opts);

    CHECK(report.prediction_mse.size() == 4);
    for (double v : report.prediction_mse) {
        CHECK(v >= 0.0);
        CHECK(v < 0.34);  // better than the untrained baseline
    }
    for (double v : report.control_mse) CHECK(v >= 0.0);
    CHECK(report.avg_mi >= 0.0);
    CHECK(report.mask.precision >= 0.0);

    SUBCASE("serializes to json and csv") {
        std::vector<std::string> names = {"size", "x", "y", "x+y"};
        std::string j = report.to_json_text(names);
        CHECK(j.find("prediction_mse") != std::string::npos);
        CHECK(j.find("recovered_pairs") != std::string::npos);
        std::string c = report.to_csv(names);
        CHECK(c.find("avg_mi") != std::string::npos);
        std::string mi_csv = report.mi_matrix.to_csv({"w1", "w2", "w3", "w4"}, names);
        CHECK(mi_csv.find("w3") != std::string::npos);
    }

    SUBCASE("shuffling the pairing always scores worse on a trained checkpoint") {
        const std::size_t n = test_set.samples.size();
        Tensor x = test_set.images_tensor(0, n);
        Tensor y = test_set.properties_tensor(0, n);
        auto [qw, qz] = model.encode(x);
        Tensor wp = aggregate(qw.mu, model.eval_mask(), model.aggregator());
        MiMatrix target = property_mi_target(y, 16);
        double aligned = avg_mi(wp, y, 16, target);
        Rng rng(44);
        double shuffled = avg_mi(shuffled_rows(wp, rng), y, 16, target);
        CHECK(shuffled > aligned);
    }
}
