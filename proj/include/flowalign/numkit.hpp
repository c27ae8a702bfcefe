#pragma once

// Deterministic numeric primitives: dense vectors, small symmetric-matrix
// routines, and a seedable PRNG with derived child streams. Everything else
// in the library builds on these.

#include <cmath>
#include <cstdint>
#include <limits>
#include <stdexcept>
#include <string>
#include <vector>

namespace flowalign {

using Vec = std::vector<double>;

enum class ErrorKind {
    NonSymmetric,
    NotPsd,
    BadCondition,
    ShapeMismatch,
    EmptyBatch,
    EmptyDataset,
    TooFewCandidates,
    TooFewSamples,
    ZeroVariance,
    MissingCell,
    NoComparisons,
    BadConfig,
    IoError,
    ParseError,
};

struct Error : std::runtime_error {
    ErrorKind kind;
    Error(ErrorKind k, const std::string& msg) : std::runtime_error(msg), kind(k) {}
};

// ============================================================================
//  Rng — SplitMix64
//
//  Algorithm: SplitMix64 (Vigna, public domain). State advances by the golden
//  ratio increment 0x9E3779B97F4A7C15 and each output is the mix64 finalizer
//  of the new state. Known-answer vectors live in tests/test_numkit.cpp.
//
//  Child streams: child_seed = mix64(seed ^ mix64(stream + GOLDEN)), so any
//  (seed, stream index) pair names an independent stream without touching the
//  parent's draw position.
// ============================================================================

constexpr uint64_t kGolden = 0x9E3779B97F4A7C15ull;

inline uint64_t mix64(uint64_t z) {
    z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ull;
    z = (z ^ (z >> 27)) * 0x94D049BB133111EBull;
    return z ^ (z >> 31);
}

// FNV-1a, used to turn stream names into stream indices.
inline uint64_t fnv1a(const std::string& s) {
    uint64_t h = 0xCBF29CE484222325ull;
    for (unsigned char c : s) {
        h ^= c;
        h *= 0x100000001B3ull;
    }
    return h;
}

class Rng {
public:
    explicit Rng(uint64_t seed) : seed_(seed), state_(seed) {}

    uint64_t next_u64() {
        state_ += kGolden;
        return mix64(state_);
    }

    // Uniform in [0, 1) with 53 random bits.
    double uniform() { return static_cast<double>(next_u64() >> 11) * 0x1.0p-53; }

    // Standard normal via the Marsaglia polar method. Draw order: u then v,
    // rejecting until 0 < u^2 + v^2 < 1; the second deviate is cached.
    double gaussian() {
        if (has_spare_) {
            has_spare_ = false;
            return spare_;
        }
        double u, v, s;
        do {
            u = 2.0 * uniform() - 1.0;
            v = 2.0 * uniform() - 1.0;
            s = u * u + v * v;
        } while (s >= 1.0 || s == 0.0);
        const double f = std::sqrt(-2.0 * std::log(s) / s);
        spare_ = v * f;
        has_spare_ = true;
        return u * f;
    }

    Rng child(uint64_t stream) const { return Rng(mix64(seed_ ^ mix64(stream + kGolden))); }
    Rng child(const std::string& name) const { return child(fnv1a(name)); }

    uint64_t seed() const { return seed_; }

private:
    uint64_t seed_;
    uint64_t state_;
    bool has_spare_ = false;
    double spare_ = 0.0;
};

inline Vec gaussian(Rng& rng, int dim) {
    if (dim < 1) throw Error(ErrorKind::BadConfig, "gaussian: dim must be >= 1");
    Vec out(static_cast<size_t>(dim));
    for (double& x : out) x = rng.gaussian();
    return out;
}

// t = sigmoid(z), z ~ N(0,1). Concentrates mass mid-interval; result is kept
// strictly inside (0,1).
inline double logit_normal_t(Rng& rng) {
    const double z = rng.gaussian();
    double t = 1.0 / (1.0 + std::exp(-z));
    const double lo = std::numeric_limits<double>::min();
    const double hi = 1.0 - std::numeric_limits<double>::epsilon() / 2.0;
    if (t < lo) t = lo;
    if (t > hi) t = hi;
    return t;
}

// ============================================================================
//  Small dense matrices, row-major
// ============================================================================

struct Matrix {
    int rows = 0;
    int cols = 0;
    std::vector<double> data;

    Matrix() = default;
    Matrix(int r, int c) : rows(r), cols(c), data(static_cast<size_t>(r) * c, 0.0) {}

    double& operator()(int i, int j) { return data[static_cast<size_t>(i) * cols + j]; }
    double operator()(int i, int j) const { return data[static_cast<size_t>(i) * cols + j]; }

    static Matrix identity(int n) {
        Matrix m(n, n);
        for (int i = 0; i < n; ++i) m(i, i) = 1.0;
        return m;
    }
};

inline Matrix matmul(const Matrix& a, const Matrix& b) {
    if (a.cols != b.rows) throw Error(ErrorKind::ShapeMismatch, "matmul: inner dims differ");
    Matrix c(a.rows, b.cols);
    for (int i = 0; i < a.rows; ++i)
        for (int k = 0; k < a.cols; ++k) {
            const double aik = a(i, k);
            for (int j = 0; j < b.cols; ++j) c(i, j) += aik * b(k, j);
        }
    return c;
}

inline Vec matvec(const Matrix& a, const Vec& x) {
    if (a.cols != static_cast<int>(x.size()))
        throw Error(ErrorKind::ShapeMismatch, "matvec: size mismatch");
    Vec y(static_cast<size_t>(a.rows), 0.0);
    for (int i = 0; i < a.rows; ++i) {
        double s = 0.0;
        for (int j = 0; j < a.cols; ++j) s += a(i, j) * x[static_cast<size_t>(j)];
        y[static_cast<size_t>(i)] = s;
    }
    return y;
}

struct SymEig {
    Vec values;      // ascending
    Matrix vectors;  // columns are eigenvectors
};

// Cyclic Jacobi eigendecomposition for symmetric matrices. Intended for the
// small dimensions this library works at (<= a few dozen).
inline SymEig eigh_sym(const Matrix& m_in, double sym_tol = 1e-10) {
    if (m_in.rows != m_in.cols) throw Error(ErrorKind::ShapeMismatch, "eigh_sym: not square");
    const int n = m_in.rows;
    double max_asym = 0.0;
    for (int i = 0; i < n; ++i)
        for (int j = i + 1; j < n; ++j)
            max_asym = std::max(max_asym, std::abs(m_in(i, j) - m_in(j, i)));
    if (max_asym > sym_tol)
        throw Error(ErrorKind::NonSymmetric, "eigh_sym: asymmetry " + std::to_string(max_asym));

    Matrix a = m_in;
    // Work on the symmetrized matrix so round-off asymmetry cannot bias sweeps.
    for (int i = 0; i < n; ++i)
        for (int j = i + 1; j < n; ++j) {
            const double v = 0.5 * (a(i, j) + a(j, i));
            a(i, j) = v;
            a(j, i) = v;
        }
    Matrix q = Matrix::identity(n);

    for (int sweep = 0; sweep < 128; ++sweep) {
        double off = 0.0;
        for (int i = 0; i < n; ++i)
            for (int j = i + 1; j < n; ++j) off += a(i, j) * a(i, j);
        if (off < 1e-30) break;

        for (int p = 0; p < n - 1; ++p) {
            for (int qq = p + 1; qq < n; ++qq) {
                const double apq = a(p, qq);
                if (apq == 0.0) continue;
                const double app = a(p, p);
                const double aqq = a(qq, qq);
                const double theta = 0.5 * (aqq - app) / apq;
                const double t = (theta >= 0.0 ? 1.0 : -1.0) /
                                 (std::abs(theta) + std::sqrt(theta * theta + 1.0));
                const double c = 1.0 / std::sqrt(t * t + 1.0);
                const double s = t * c;
                for (int k = 0; k < n; ++k) {
                    const double akp = a(k, p);
                    const double akq = a(k, qq);
                    a(k, p) = c * akp - s * akq;
                    a(k, qq) = s * akp + c * akq;
                }
                for (int k = 0; k < n; ++k) {
                    const double apk = a(p, k);
                    const double aqk = a(qq, k);
                    a(p, k) = c * apk - s * aqk;
                    a(qq, k) = s * apk + c * aqk;
                }
                for (int k = 0; k < n; ++k) {
                    const double qkp = q(k, p);
                    const double qkq = q(k, qq);
                    q(k, p) = c * qkp - s * qkq;
                    q(k, qq) = s * qkp + c * qkq;
                }
            }
        }
    }

    SymEig out;
    out.values.resize(static_cast<size_t>(n));
    for (int i = 0; i < n; ++i) out.values[static_cast<size_t>(i)] = a(i, i);
    out.vectors = q;
    // Sort ascending, permuting columns along.
    for (int i = 0; i < n; ++i) {
        int lo = i;
        for (int j = i + 1; j < n; ++j)
            if (out.values[static_cast<size_t>(j)] < out.values[static_cast<size_t>(lo)]) lo = j;
        if (lo != i) {
            std::swap(out.values[static_cast<size_t>(i)], out.values[static_cast<size_t>(lo)]);
            for (int k = 0; k < n; ++k) std::swap(out.vectors(k, i), out.vectors(k, lo));
        }
    }
    return out;
}

// Symmetric PSD square root via eigendecomposition. Eigenvalues in
// [-1e-10, 0) are treated as round-off and clamped to zero; anything more
// negative is rejected.
inline Matrix matrix_sqrt_psd(const Matrix& m) {
    const SymEig eig = eigh_sym(m);
    const int n = m.rows;
    Vec root(static_cast<size_t>(n));
    for (int i = 0; i < n; ++i) {
        double lambda = eig.values[static_cast<size_t>(i)];
        if (lambda < -1e-10)
            throw Error(ErrorKind::NotPsd,
                        "matrix_sqrt_psd: eigenvalue " + std::to_string(lambda));
        if (lambda < 0.0) lambda = 0.0;
        root[static_cast<size_t>(i)] = std::sqrt(lambda);
    }
    Matrix s(n, n);
    for (int i = 0; i < n; ++i)
        for (int j = i; j < n; ++j) {
            double acc = 0.0;
            for (int k = 0; k < n; ++k)
                acc += eig.vectors(i, k) * root[static_cast<size_t>(k)] * eig.vectors(j, k);
            s(i, j) = acc;
            s(j, i) = acc;
        }
    return s;
}

// ============================================================================
//  Vec helpers
// ============================================================================

inline double dot(const Vec& a, const Vec& b) {
    if (a.size() != b.size()) throw Error(ErrorKind::ShapeMismatch, "dot: size mismatch");
    double s = 0.0;
    for (size_t i = 0; i < a.size(); ++i) s += a[i] * b[i];
    return s;
}

inline double norm(const Vec& a) { return std::sqrt(dot(a, a)); }

inline double squared_distance(const Vec& a, const Vec& b) {
    if (a.size() != b.size()) throw Error(ErrorKind::ShapeMismatch, "squared_distance: size mismatch");
    double s = 0.0;
    for (size_t i = 0; i < a.size(); ++i) {
        const double d = a[i] - b[i];
        s += d * d;
    }
    return s;
}

inline bool all_finite(const Vec& a) {
    for (double x : a)
        if (!std::isfinite(x)) return false;
    return true;
}

}  // namespace flowalign
