#include <benchmark/benchmark.h>

#include "corrvae/datagen.hpp"
#include "corrvae/distributions.hpp"
#include "corrvae/invhead.hpp"
#include "corrvae/model.hpp"
#include "corrvae/optim.hpp"

using namespace corrvae;

namespace {

void BM_MatmulForward(benchmark::State& state) {
    const std::size_t n = static_cast<std::size_t>(state.range(0));
    Rng rng(1);
    Tensor a = sample(rng, Dist::StandardNormal, {n, n});
    Tensor b = sample(rng, Dist::StandardNormal, {n, n});
    for (auto _ : state) {
        Tensor c = matmul(a, b);
        benchmark::DoNotOptimize(c.values().data());
    }
    state.SetItemsProcessed(state.iterations() * 2 * n * n * n);
}
BENCHMARK(BM_MatmulForward)->Arg(64)->Arg(128)->Arg(256);

void BM_MatmulBackward(benchmark::State& state) {
    const std::size_t n = static_cast<std::size_t>(state.range(0));
    Rng rng(1);
    Tensor a = Tensor::from_data({n, n}, sample(rng, Dist::StandardNormal, {n, n}).values(), true);
    Tensor b = Tensor::from_data({n, n}, sample(rng, Dist::StandardNormal, {n, n}).values(), true);
    for (auto _ : state) {
        Tensor loss = mean(square(matmul(a, b)));
        a.zero_grad();
        b.zero_grad();
        loss.backward();
        benchmark::DoNotOptimize(a.grad().data());
    }
}
BENCHMARK(BM_MatmulBackward)->Arg(64)->Arg(128);

void BM_TrainingStep(benchmark::State& state) {
    Dataset ds = make_dataset(64, 3);
    TrainConfig cfg;
    cfg.seed = 1;
    Rng rng(1);
    CorrVae model(cfg, rng);
    std::vector<Tensor> params = model.trainable();
    Adam opt(params, cfg.lr);
    Tensor x = ds.images_tensor(0, 64);
    Tensor y = ds.properties_tensor(0, 64);
    for (auto _ : state) {
        model.head().normalize_exact();
        ObjectiveResult r = model.objective(x, y, rng, 5000);
        for (Tensor& p : params) p.zero_grad();
        r.total.backward();
        opt.step();
        benchmark::DoNotOptimize(r.breakdown.total);
    }
}
BENCHMARK(BM_TrainingStep)->Unit(benchmark::kMillisecond);

void BM_FixedPointInversion(benchmark::State& state) {
    Rng rng(5);
    InvertibleHead head(4, 32, 2, 0.9, rng);
    // live residual branch; fresh heads start at the identity
    for (std::size_t i = 0; i < head.layer_count(); ++i) {
        Tensor w = head.layer_weight(i);
        for (double& v : w.mutable_values()) v = rng.normal() / 6.0;
    }
    head.normalize_exact();
    std::vector<double> y = {0.4, -0.2, 1.1, 0.3};
    for (auto _ : state) {
        InvertResult inv = head.invert(y, 1e-10, 200);
        benchmark::DoNotOptimize(inv.w_prime.data());
    }
}
BENCHMARK(BM_FixedPointInversion);

void BM_RenderAndMeasure(benchmark::State& state) {
    Rng rng(7);
    for (auto _ : state) {
        double s = 0.3 + 0.5 * rng.uniform();
        double m = s / 4.0 + 0.01;
        Image img = render(ShapeKind::Ellipse, s, m + (1 - 2 * m) * rng.uniform(),
                           m + (1 - 2 * m) * rng.uniform(), 16);
        Measurement meas = measure(img);
        benchmark::DoNotOptimize(meas.properties.size);
    }
}
BENCHMARK(BM_RenderAndMeasure);

void BM_TotalCorrelation(benchmark::State& state) {
    const std::size_t b = static_cast<std::size_t>(state.range(0));
    Rng rng(11);
    Tensor mu_w = sample(rng, Dist::StandardNormal, {b, 8});
    Tensor mu_z = sample(rng, Dist::StandardNormal, {b, 8});
    DiagGaussian qw(mu_w, Tensor::zeros({b, 8}));
    DiagGaussian qz(mu_z, Tensor::zeros({b, 8}));
    Tensor w = reparameterize(qw, sample(rng, Dist::StandardNormal, {b, 8}));
    Tensor z = reparameterize(qz, sample(rng, Dist::StandardNormal, {b, 8}));
    for (auto _ : state) {
        TotalCorrelation tc = total_correlation_terms(w, z, qw, qz, 5000);
        benchmark::DoNotOptimize(tc.tc_w.values().data());
    }
}
BENCHMARK(BM_TotalCorrelation)->Arg(64)->Arg(256);

}  // namespace

BENCHMARK_MAIN();
