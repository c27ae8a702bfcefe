#include <algorithm>
#include <cmath>

#include <catch2/catch_amalgamated.hpp>

#include "flowalign/numkit.hpp"

using namespace flowalign;

// Standard normal CDF, independent of the sampler under test.
static double normal_cdf(double x) { return 0.5 * std::erfc(-x / std::sqrt(2.0)); }

TEST_CASE("splitmix64 known-answer vectors") {
    // Reference outputs of SplitMix64 computed from the published algorithm.
    struct Case {
        uint64_t seed;
        uint64_t expect[4];
    };
    const Case cases[] = {
        {0x0ull,
         {0xe220a8397b1dcdafull, 0x6e789e6aa1b965f4ull, 0x06c45d188009454full,
          0xf88bb8a8724c81ecull}},
        {0x1ull,
         {0x910a2dec89025cc1ull, 0xbeeb8da1658eec67ull, 0xf893a2eefb32555eull,
          0x71c18690ee42c90bull}},
        {0x42ull,
         {0x2c1c719d2c17b759ull, 0xa211b519d9a09a1cull, 0x747a952a1f10bff5ull,
          0xc3d24c89a4ebd131ull}},
    };
    for (const auto& c : cases) {
        Rng rng(c.seed);
        for (uint64_t e : c.expect) REQUIRE(rng.next_u64() == e);
    }
}

TEST_CASE("same seed reproduces the gaussian stream bit-exactly") {
    Rng a(987654321), b(987654321);
    for (int i = 0; i < 1000; ++i) {
        REQUIRE(a.gaussian() == b.gaussian());
    }
}

TEST_CASE("child streams are deterministic and distinct") {
    Rng root(7);
    Rng c1 = root.child(0);
    Rng c2 = root.child(1);
    Rng c1_again = Rng(7).child(0);
    REQUIRE(c1.next_u64() == c1_again.next_u64());
    REQUIRE(Rng(7).child(0).next_u64() != c2.next_u64());
    REQUIRE(Rng(7).child("align.iter_1.gen").next_u64() ==
            Rng(7).child("align.iter_1.gen").next_u64());
}

TEST_CASE("gaussian moments at dim=1") {
    Rng rng(2024);
    const int n = 100000;
    double sum = 0.0, sq = 0.0;
    for (int i = 0; i < n; ++i) {
        const double x = rng.gaussian();
        REQUIRE(std::isfinite(x));
        sum += x;
        sq += x * x;
    }
    const double mean = sum / n;
    const double var = sq / n - mean * mean;
    REQUIRE(std::abs(mean) < 0.02);
    REQUIRE(std::abs(var - 1.0) < 0.05);
}

TEST_CASE("gaussian KS statistic against the normal CDF") {
    Rng rng(5150);
    const int n = 10000;
    Vec xs = gaussian(rng, n);
    std::sort(xs.begin(), xs.end());
    double d = 0.0;
    for (int i = 0; i < n; ++i) {
        const double f = normal_cdf(xs[static_cast<size_t>(i)]);
        d = std::max(d, std::abs(f - static_cast<double>(i) / n));
        d = std::max(d, std::abs(static_cast<double>(i + 1) / n - f));
    }
    REQUIRE(d < 0.02);
}

TEST_CASE("gaussian rejects bad dim") {
    Rng rng(1);
    REQUIRE_THROWS_AS(gaussian(rng, 0), Error);
}

TEST_CASE("logit_normal_t stays strictly inside (0,1)") {
    Rng rng(31337);
    for (int i = 0; i < 100000; ++i) {
        const double t = logit_normal_t(rng);
        REQUIRE(t > 0.0);
        REQUIRE(t < 1.0);
    }
}

TEST_CASE("logit_normal_t median near 0.5") {
    Rng rng(99);
    const int n = 100000;
    Vec ts(n);
    for (double& t : ts) t = logit_normal_t(rng);
    std::nth_element(ts.begin(), ts.begin() + n / 2, ts.end());
    REQUIRE(std::abs(ts[n / 2] - 0.5) < 0.01);
}

TEST_CASE("logit_normal_t mid-interval mass matches the density integral") {
    // Quadrature of the logit-normal density over (0.4, 0.6).
    const double expected = 0.3148643389703082;
    Rng rng(424242);
    const int n = 100000;
    int hits = 0;
    for (int i = 0; i < n; ++i) {
        const double t = logit_normal_t(rng);
        if (t > 0.4 && t < 0.6) ++hits;
    }
    REQUIRE(std::abs(static_cast<double>(hits) / n - expected) < 0.01);
}

TEST_CASE("matrix_sqrt_psd identity and diagonal cases") {
    Matrix eye = Matrix::identity(2);
    Matrix s = matrix_sqrt_psd(eye);
    for (int i = 0; i < 2; ++i)
        for (int j = 0; j < 2; ++j) REQUIRE(s(i, j) == Catch::Approx(eye(i, j)).margin(1e-12));

    Matrix d(2, 2);
    d(0, 0) = 4.0;
    d(1, 1) = 9.0;
    Matrix sd = matrix_sqrt_psd(d);
    REQUIRE(sd(0, 0) == Catch::Approx(2.0).margin(1e-12));
    REQUIRE(sd(1, 1) == Catch::Approx(3.0).margin(1e-12));
    REQUIRE(std::abs(sd(0, 1)) < 1e-12);
}

TEST_CASE("matrix_sqrt_psd squares back to the input") {
    Matrix m(2, 2);
    m(0, 0) = 2.0;
    m(0, 1) = 1.0;
    m(1, 0) = 1.0;
    m(1, 1) = 2.0;
    Matrix s = matrix_sqrt_psd(m);
    Matrix ss = matmul(s, s);
    for (int i = 0; i < 2; ++i)
        for (int j = 0; j < 2; ++j) REQUIRE(ss(i, j) == Catch::Approx(m(i, j)).margin(1e-8));
}

TEST_CASE("matrix_sqrt_psd property on random PSD matrices up to dim 8") {
    Rng rng(8888);
    for (int trial = 0; trial < 40; ++trial) {
        const int n = 1 + static_cast<int>(rng.next_u64() % 8);
        Matrix a(n, n);
        for (int i = 0; i < n; ++i)
            for (int j = 0; j < n; ++j) a(i, j) = rng.gaussian();
        // m = a a^T is PSD by construction.
        Matrix m(n, n);
        for (int i = 0; i < n; ++i)
            for (int j = 0; j < n; ++j) {
                double acc = 0.0;
                for (int k = 0; k < n; ++k) acc += a(i, k) * a(j, k);
                m(i, j) = acc;
            }
        Matrix s = matrix_sqrt_psd(m);
        Matrix ss = matmul(s, s);
        for (int i = 0; i < n; ++i)
            for (int j = 0; j < n; ++j)
                REQUIRE(ss(i, j) == Catch::Approx(m(i, j)).margin(1e-8));
    }
}

TEST_CASE("matrix_sqrt_psd rejects asymmetric and indefinite inputs") {
    Matrix bad(2, 2);
    bad(0, 1) = 0.5;  // m(1,0) stays 0
    bad(0, 0) = 1.0;
    bad(1, 1) = 1.0;
    REQUIRE_THROWS_AS(matrix_sqrt_psd(bad), Error);

    Matrix neg(2, 2);
    neg(0, 0) = 1.0;
    neg(1, 1) = -1.0;
    try {
        matrix_sqrt_psd(neg);
        FAIL("expected NotPsd");
    } catch (const Error& e) {
        REQUIRE(e.kind == ErrorKind::NotPsd);
    }
}
