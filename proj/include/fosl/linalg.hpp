#pragma once

// Small dense kernels that work for any scalar type (double or nested Dual).
// Eigen is used on the double-only paths; these cover the differentiated ones.

#include <cstddef>
#include <utility>
#include <vector>

#include "fosl/dual.hpp"
#include "fosl/errors.hpp"

namespace fosl {

template <class S>
struct Cx {
    S re{};
    S im{};

    friend Cx operator+(const Cx& a, const Cx& b) { return {a.re + b.re, a.im + b.im}; }
    friend Cx operator-(const Cx& a, const Cx& b) { return {a.re - b.re, a.im - b.im}; }
    friend Cx operator*(const Cx& a, const Cx& b)
    {
        return {a.re * b.re - a.im * b.im, a.re * b.im + a.im * b.re};
    }
    friend Cx operator/(const Cx& a, const Cx& b)
    {
        S den = b.re * b.re + b.im * b.im;
        return {(a.re * b.re + a.im * b.im) / den, (a.im * b.re - a.re * b.im) / den};
    }
    friend Cx operator*(const Cx& a, const S& s) { return {a.re * s, a.im * s}; }
};

/// |z|^2 of the innermost value, used for pivot selection.
template <class S>
double norm2_value(const Cx<S>& z)
{
    double r = value_of(z.re);
    double i = value_of(z.im);
    return r * r + i * i;
}

/// Row-major dense matrix over an arbitrary scalar.
template <class T>
struct Dense {
    std::size_t rows = 0;
    std::size_t cols = 0;
    std::vector<T> data;

    Dense() = default;
    Dense(std::size_t r, std::size_t c) : rows(r), cols(c), data(r * c, T{}) {}

    T& operator()(std::size_t i, std::size_t j) { return data[i * cols + j]; }
    const T& operator()(std::size_t i, std::size_t j) const { return data[i * cols + j]; }
};

/// Solves M X = R in place by Gaussian elimination with partial pivoting.
/// On return R holds X. Throws `Fail` when a pivot vanishes.
template <class Fail, class T>
void gauss_solve(Dense<T> M, Dense<T>& R, double pivot_floor = 0.0)
{
    const std::size_t n = M.rows;
    auto mag = [](const T& x) {
        if constexpr (requires { x.re; }) {
            return norm2_value(x);
        } else {
            double v = value_of(x);
            return v * v;
        }
    };
    for (std::size_t k = 0; k < n; ++k) {
        std::size_t piv = k;
        double best = mag(M(k, k));
        for (std::size_t i = k + 1; i < n; ++i) {
            double m = mag(M(i, k));
            if (m > best) {
                best = m;
                piv = i;
            }
        }
        if (!(best > pivot_floor * pivot_floor) || best == 0.0) {
            throw Fail("singular matrix in elimination");
        }
        if (piv != k) {
            for (std::size_t j = 0; j < n; ++j) std::swap(M(k, j), M(piv, j));
            for (std::size_t j = 0; j < R.cols; ++j) std::swap(R(k, j), R(piv, j));
        }
        for (std::size_t i = k + 1; i < n; ++i) {
            T factor = M(i, k) / M(k, k);
            for (std::size_t j = k; j < n; ++j) M(i, j) = M(i, j) - factor * M(k, j);
            for (std::size_t j = 0; j < R.cols; ++j) R(i, j) = R(i, j) - factor * R(k, j);
        }
    }
    for (std::size_t kk = n; kk-- > 0;) {
        for (std::size_t j = 0; j < R.cols; ++j) {
            T acc = R(kk, j);
            for (std::size_t c = kk + 1; c < n; ++c) acc = acc - M(kk, c) * R(c, j);
            R(kk, j) = acc / M(kk, kk);
        }
    }
}

} // namespace fosl
