#include <doctest.h>

#include <cmath>
#include <thread>

#include "corrvae/tensor.hpp"

using namespace corrvae;

TEST_CASE("shape and data invariants") {
    Tensor t = Tensor::from_data({2, 3}, {1, 2, 3, 4, 5, 6});
    CHECK(t.size() == 6);
    CHECK(t.shape() == Shape{2, 3});
    CHECK_THROWS_AS(Tensor::from_data({2, 3}, {1, 2, 3}), ShapeError);
    CHECK_THROWS_AS(Tensor::from_data({0, 3}, {}), ShapeError);
    CHECK_THROWS_AS(Tensor::from_data({}, {}), ShapeError);
}

TEST_CASE("sum of ones is the element count") {
    CHECK(sum(Tensor::ones({3})).item() == 3.0);
}

TEST_CASE("matmul against identity") {
    Tensor eye = Tensor::from_data({2, 2}, {1, 0, 0, 1});
    Tensor a = Tensor::from_data({2, 2}, {3.5, -1, 2, 0.25});
    Tensor out = matmul(eye, a);
    for (std::size_t i = 0; i < 4; ++i) CHECK(out.at(i) == a.at(i));

    SUBCASE("transpose flags") {
        Tensor b = Tensor::from_data({2, 3}, {1, 2, 3, 4, 5, 6});
        Tensor left = matmul(b, b, false, true);   // B B^T, [2,2]
        Tensor right = matmul(b, b, true, false);  // B^T B, [3,3]
        CHECK(left.shape() == Shape{2, 2});
        CHECK(right.shape() == Shape{3, 3});
        CHECK(left.at(0) == doctest::Approx(14.0));
        CHECK(left.at(1) == doctest::Approx(32.0));
        CHECK(right.at(0) == doctest::Approx(17.0));
    }

    SUBCASE("inner dimension mismatch throws") {
        Tensor b = Tensor::from_data({3, 2}, {1, 2, 3, 4, 5, 6});
        CHECK_THROWS_AS(matmul(a, b), ShapeError);
        CHECK_THROWS_AS(matmul(a, Tensor::from_data({3, 4}, std::vector<double>(12, 1.0)), false,
                               true),
                        ShapeError);
    }
}

TEST_CASE("logsumexp basics") {
    Tensor t = Tensor::from_data({2}, {0.0, 0.0});
    CHECK(logsumexp(t, 0).item() == doctest::Approx(std::log(2.0)).epsilon(1e-12));

    SUBCASE("overflow-safe at 1000") {
        Tensor big = Tensor::from_data({2}, {1000.0, 1000.0});
        CHECK(logsumexp(big, 0).item() == 1000.0 + std::log(2.0));
    }

    SUBCASE("per-axis reduction") {
        Tensor m = Tensor::from_data({2, 2}, {0, 0, 1, 1});
        Tensor r = logsumexp(m, 1);
        CHECK(r.shape() == Shape{2});
        CHECK(r.at(0) == doctest::Approx(std::log(2.0)));
        CHECK(r.at(1) == doctest::Approx(1.0 + std::log(2.0)));
    }
}

TEST_CASE("broadcast add/sub/mul") {
    Tensor m = Tensor::from_data({2, 3}, {1, 2, 3, 4, 5, 6});
    Tensor v = Tensor::from_data({3}, {10, 20, 30});
    Tensor s = Tensor::scalar(2.0);

    Tensor r = add(m, v);
    CHECK(r.at(0) == 11);
    CHECK(r.at(5) == 36);
    Tensor q = mul(m, s);
    CHECK(q.at(3) == 8);
    Tensor d = sub(v, m);  // a-side broadcast
    CHECK(d.at(0) == 9);
    CHECK(d.at(4) == 15);

    CHECK_THROWS_AS(add(m, Tensor::from_data({2}, {1, 2})), ShapeError);
}

TEST_CASE("elementwise domain errors") {
    CHECK_THROWS_AS(log(Tensor::from_data({2}, {1.0, 0.0})), NumericError);
    CHECK_THROWS_AS(log(Tensor::from_data({1}, {-3.0})), NumericError);
    // exp overflow is not silent either
    CHECK_THROWS_AS(exp(Tensor::from_data({1}, {1000.0})), NumericError);
}

TEST_CASE("concat and slice round structure") {
    Tensor a = Tensor::from_data({2, 2}, {1, 2, 3, 4});
    Tensor b = Tensor::from_data({2, 1}, {9, 9});
    Tensor c = concat({a, b}, 1);
    CHECK(c.shape() == Shape{2, 3});
    CHECK(c.at(2) == 9);
    Tensor back = slice(c, 1, 0, 2);
    for (std::size_t i = 0; i < 4; ++i) CHECK(back.at(i) == a.at(i));
    CHECK_THROWS_AS(slice(c, 1, 2, 2), ShapeError);
    CHECK_THROWS_AS(slice(c, 3, 0, 1), ShapeError);
}

TEST_CASE("reductions over an axis") {
    Tensor m = Tensor::from_data({2, 3}, {1, 2, 3, 4, 5, 6});
    Tensor rows = sum(m, 1);
    CHECK(rows.shape() == Shape{2});
    CHECK(rows.at(0) == 6);
    CHECK(rows.at(1) == 15);
    Tensor cols = mean(m, 0);
    CHECK(cols.at(0) == doctest::Approx(2.5));
    CHECK(mean(m).item() == doctest::Approx(3.5));
}

TEST_CASE("distinct graphs on distinct threads are safe") {
    auto work = [](std::uint64_t seed, double* out) {
        Tensor x = Tensor::full({64, 64}, 0.01 * static_cast<double>(seed), true);
        for (int it = 0; it < 50; ++it) {
            Tensor y = mean(square(matmul(x, x)));
            x.zero_grad();
            y.backward();
            *out = x.grad()[0];
        }
    };
    double a = 0, b = 0;
    std::thread t1(work, 1, &a);
    std::thread t2(work, 2, &b);
    t1.join();
    t2.join();
    double a_ref = 0, b_ref = 0;
    work(1, &a_ref);
    work(2, &b_ref);
    CHECK(a == a_ref);
    CHECK(b == b_ref);
}

TEST_CASE("sigmoid saturates without NaN") {
    Tensor t = Tensor::from_data({2}, {-1000.0, 1000.0});
    Tensor s = sigmoid(t);
    CHECK(s.at(0) == 0.0);
    CHECK(s.at(1) == 1.0);
    Tensor ls = logsigmoid(t);
    CHECK(ls.at(0) == doctest::Approx(-1000.0));
    CHECK(ls.at(1) == doctest::Approx(0.0));
}
