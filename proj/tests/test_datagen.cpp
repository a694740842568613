#include <doctest.h>

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdio>
#include <fstream>

#include "corrvae/datagen.hpp"
#include "corrvae/maskpool.hpp"
#include "support/oracles.hpp"

using namespace corrvae;

namespace {

// Independent pixel-count oracle: per-axis center counting, multiplied.
std::size_t square_count_oracle(double size, double x, double y, std::size_t n) {
    const double hw = size * static_cast<double>(n) / 4.0;
    std::size_t cols = 0, rows = 0;
    for (std::size_t c = 0; c < n; ++c)
        if (std::abs(static_cast<double>(c) + 0.5 - x * static_cast<double>(n)) <= hw) ++cols;
    for (std::size_t r = 0; r < n; ++r)
        if (std::abs(static_cast<double>(r) + 0.5 - y * static_cast<double>(n)) <= hw) ++rows;
    return cols * rows;
}

}  // namespace

TEST_CASE("square pixel count near the closed form") {
    Rng rng(10);
    for (int t = 0; t < 50; ++t) {
        double s = 0.25 + 0.6 * rng.uniform();
        double m = s / 4.0 + 0.02;
        double x = m + (1.0 - 2.0 * m) * rng.uniform();
        double y = m + (1.0 - 2.0 * m) * rng.uniform();
        Image img = render(ShapeKind::Square, s, x, y, 16);
        const std::size_t count = img.filled_count();
        CHECK(count == square_count_oracle(s, x, y, 16));

        const double side = 2.0 * std::floor(s * 16.0 / 4.0) + 1.0;
        const double perimeter = 4.0 * side;
        CHECK(std::abs(static_cast<double>(count) - side * side) <= perimeter);
    }
}

TEST_CASE("horizontal mirror symmetry") {
    for (ShapeKind kind : {ShapeKind::Square, ShapeKind::Ellipse}) {
        Image a = render(kind, 0.55, 0.35, 0.5, 16);
        Image b = render(kind, 0.55, 0.65, 0.5, 16);
        for (std::size_t r = 0; r < 16; ++r)
            for (std::size_t c = 0; c < 16; ++c) CHECK(a.at(r, c) == b.at(r, 15 - c));
    }
}

TEST_CASE("smallest size still renders pixels") {
    Image img = render(ShapeKind::Square, 0.2, 0.5, 0.5, 16);
    CHECK(img.filled_count() > 0);
    Image ell = render(ShapeKind::Ellipse, 0.2, 0.5, 0.5, 16);
    CHECK(ell.filled_count() > 0);
}

TEST_CASE("render validates its domain") {
    CHECK_THROWS_AS(render(ShapeKind::Square, 0.1, 0.5, 0.5, 16), Error);
    CHECK_THROWS_AS(render(ShapeKind::Square, 0.95, 0.5, 0.5, 16), Error);
    CHECK_THROWS_AS(render(ShapeKind::Square, 0.8, 0.1, 0.5, 16), Error);  // leaves canvas
    CHECK_THROWS_AS(render(ShapeKind::Square, 0.5, 0.5, 0.5, 4), Error);   // canvas too small
}

namespace {

// Grid positions snapped to generic sub-pixel phases. At 16x16, shapes whose
// edges sit near pixel-aligned phases rasterize identically across size
// spans wider than the tolerance (a centered 4x4 block is every square with
// s in [0.375, 0.625]); no image-only oracle can resolve those, so the sweep
// probes the phases where the identification is well posed.
double snapped(double lo, double hi, double u, double phase) {
    double raw = lo + (hi - lo) * u;
    double x = (std::floor(16.0 * raw) + phase) / 16.0;
    return std::clamp(x, lo, hi);
}

}  // namespace

TEST_CASE("measure inverts render over a parameter grid") {
    // 5x5 positions x 3 sizes per shape; tolerances: 1.5 px on the centroid,
    // 10% on size
    const double u[5] = {0.0, 0.25, 0.5, 0.75, 1.0};
    const double ph[5] = {0.17, 0.41, 0.63, 0.29, 0.83};
    for (ShapeKind kind : {ShapeKind::Square, ShapeKind::Ellipse}) {
        const auto sizes = kind == ShapeKind::Square ? std::array{0.5, 0.65, 0.9}
                                                     : std::array{0.5, 0.7, 0.9};
        for (double s : sizes) {
            const double mx = x_margin(kind, s) + 0.01;
            const double my = y_margin(kind, s) + 0.01;
            for (int xi = 0; xi < 5; ++xi) {
                for (int yi = 0; yi < 5; ++yi) {
                    double x = snapped(mx, 1.0 - mx, u[xi], ph[xi]);
                    double y = snapped(my, 1.0 - my, u[yi], ph[(yi + 2) % 5]);
                    Image img = render(kind, s, x, y, 16);
                    Measurement m = measure(img);
                    CAPTURE(static_cast<int>(kind));
                    CAPTURE(s);
                    CAPTURE(x);
                    CAPTURE(y);
                    CHECK(std::abs(m.properties.x - x) < 1.5 / 16.0);
                    CHECK(std::abs(m.properties.y - y) < 1.5 / 16.0);
                    CHECK(std::abs(m.properties.size - s) < 0.10 * s);
                    CHECK(m.properties.xy ==
                          doctest::Approx(0.5 * (m.properties.x + m.properties.y)));
                }
            }
        }
    }
}

TEST_CASE("measure rejects an empty image") {
    Image img;
    img.n = 16;
    img.pixels.assign(256, 0);
    CHECK_THROWS_AS(measure(img), Error);
}

TEST_CASE("one-pixel translation moves the centroid by exactly 1/N") {
    Image img = render(ShapeKind::Square, 0.5, 0.4, 0.5, 16);
    Image shifted;
    shifted.n = 16;
    shifted.pixels.assign(256, 0);
    for (std::size_t r = 0; r < 16; ++r)
        for (std::size_t c = 0; c + 1 < 16; ++c) shifted.pixels[r * 16 + c + 1] = img.at(r, c);
    double x0 = measure(img).properties.x;
    double x1 = measure(shifted).properties.x;
    CHECK(x1 - x0 == doctest::Approx(1.0 / 16.0).epsilon(1e-12));
}

TEST_CASE("dataset generation is deterministic and byte-identical") {
    Dataset a = make_dataset(100, 7);
    Dataset b = make_dataset(100, 7);
    save_dataset(a, "/tmp/corrvae_ds_a.bin");
    save_dataset(b, "/tmp/corrvae_ds_b.bin");
    std::ifstream fa("/tmp/corrvae_ds_a.bin", std::ios::binary);
    std::ifstream fb("/tmp/corrvae_ds_b.bin", std::ios::binary);
    std::string sa((std::istreambuf_iterator<char>(fa)), std::istreambuf_iterator<char>());
    std::string sb((std::istreambuf_iterator<char>(fb)), std::istreambuf_iterator<char>());
    CHECK(sa == sb);
    CHECK(!sa.empty());

    SUBCASE("round trip through the file format") {
        Dataset loaded = load_dataset("/tmp/corrvae_ds_a.bin");
        REQUIRE(loaded.samples.size() == a.samples.size());
        CHECK(loaded.header.property_names == a.header.property_names);
        for (std::size_t i = 0; i < a.samples.size(); ++i) {
            CHECK(loaded.samples[i].image.pixels == a.samples[i].image.pixels);
            CHECK(loaded.samples[i].properties.size == a.samples[i].properties.size);
            CHECK(loaded.samples[i].properties.xy == a.samples[i].properties.xy);
            CHECK(loaded.samples[i].kind == a.samples[i].kind);
        }
    }

    SUBCASE("per-sample streams do not depend on generation order") {
        SyntheticSample s42 = draw_sample(7, 42, 16);
        CHECK(s42.image.pixels == a.samples[42].image.pixels);
    }
}

TEST_CASE("property marginals and correlation structure at n=5000") {
    Dataset ds = make_dataset(5000, 1234);
    std::vector<double> size, x, y, xy;
    for (const auto& s : ds.samples) {
        size.push_back(s.properties.size);
        x.push_back(s.properties.x);
        y.push_back(s.properties.y);
        xy.push_back(s.properties.xy);
        CHECK(s.properties.xy == 0.5 * (s.properties.x + s.properties.y));
    }
    CHECK(std::abs(testsupport::mean_of(size) - 0.55) < 0.02);  // midpoint of [0.2, 0.9]
    CHECK(std::abs(testsupport::mean_of(x) - 0.5) < 0.02);
    CHECK(std::abs(testsupport::mean_of(y) - 0.5) < 0.02);
    CHECK(std::abs(testsupport::mean_of(xy) - 0.5) < 0.02);

    CHECK(testsupport::pearson(x, xy) > 0.6);
    CHECK(testsupport::pearson(y, xy) > 0.6);
    CHECK(std::abs(testsupport::pearson(x, y)) < 0.05);
}

TEST_CASE("ground-truth mask carries the construction pairs") {
    Tensor m = ground_truth_mask(8);
    auto pairs = correlation_pairs(m);
    CHECK(pairs.size() == 3);
    for (auto [i, j] : ground_truth_pairs()) CHECK(pairs.count({i, j}) == 1);
}

TEST_CASE("pgm export uses the binary P5 layout") {
    Image img = render(ShapeKind::Square, 0.5, 0.5, 0.5, 16);
    write_pgm(img, "/tmp/corrvae_test.pgm");
    std::ifstream f("/tmp/corrvae_test.pgm", std::ios::binary);
    std::string header;
    std::getline(f, header);
    CHECK(header == "P5");
    std::string dims;
    std::getline(f, dims);
    CHECK(dims == "16 16");
    std::string maxval;
    std::getline(f, maxval);
    CHECK(maxval == "255");
    std::string rest((std::istreambuf_iterator<char>(f)), std::istreambuf_iterator<char>());
    CHECK(rest.size() == 256);
}

TEST_CASE("threshold at one half for decoded probabilities") {
    std::vector<double> probs(256, 0.4);
    probs[0] = 0.5;
    probs[1] = 0.9;
    Image img = image_from_probs(probs, 16);
    CHECK(img.pixels[0] == 1);
    CHECK(img.pixels[1] == 1);
    CHECK(img.pixels[2] == 0);
    CHECK(img.filled_count() == 2);
}
