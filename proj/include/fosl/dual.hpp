#pragma once

// Forward-mode automatic differentiation with a single tangent direction.
// Duals nest: Dual<Dual<double>> carries mixed second derivatives.

#include <cmath>
#include <type_traits>

namespace fosl {

template <class T>
struct Dual {
    T v{};
    T d{};

    constexpr Dual() = default;
    constexpr Dual(double x) : v(x), d(0.0) {}  // NOLINT: implicit lift of constants
    constexpr Dual(T value, T tangent) : v(value), d(tangent) {}
    template <class U = T>
        requires(!std::is_same_v<U, double>)
    constexpr Dual(const T& x) : v(x), d(0.0) {}  // NOLINT

    Dual& operator+=(const Dual& o) { v += o.v; d += o.d; return *this; }
    Dual& operator-=(const Dual& o) { v -= o.v; d -= o.d; return *this; }
    Dual& operator*=(const Dual& o) { *this = *this * o; return *this; }
    Dual& operator/=(const Dual& o) { *this = *this / o; return *this; }

    friend Dual operator+(const Dual& a, const Dual& b) { return {a.v + b.v, a.d + b.d}; }
    friend Dual operator-(const Dual& a, const Dual& b) { return {a.v - b.v, a.d - b.d}; }
    friend Dual operator-(const Dual& a) { return {-a.v, -a.d}; }
    friend Dual operator*(const Dual& a, const Dual& b) { return {a.v * b.v, a.d * b.v + a.v * b.d}; }
    friend Dual operator/(const Dual& a, const Dual& b)
    {
        T q = a.v / b.v;
        return {q, (a.d - q * b.d) / b.v};
    }
    friend Dual operator+(const Dual& a, double b) { return {a.v + b, a.d}; }
    friend Dual operator+(double a, const Dual& b) { return {a + b.v, b.d}; }
    friend Dual operator-(const Dual& a, double b) { return {a.v - b, a.d}; }
    friend Dual operator-(double a, const Dual& b) { return {a - b.v, -b.d}; }
    friend Dual operator*(const Dual& a, double b) { return {a.v * b, a.d * b}; }
    friend Dual operator*(double a, const Dual& b) { return {a * b.v, a * b.d}; }
    friend Dual operator/(const Dual& a, double b) { return {a.v / b, a.d / b}; }
    friend Dual operator/(double a, const Dual& b)
    {
        T q = a / b.v;
        return {q, -q * b.d / b.v};
    }
};

template <class T>
struct is_dual : std::false_type {};
template <class T>
struct is_dual<Dual<T>> : std::true_type {};

/// Innermost double value of a (possibly nested) dual number.
inline double value_of(double x) { return x; }
template <class T>
double value_of(const Dual<T>& x) { return value_of(x.v); }

template <class T> bool operator<(const Dual<T>& a, const Dual<T>& b) { return value_of(a) < value_of(b); }
template <class T> bool operator>(const Dual<T>& a, const Dual<T>& b) { return value_of(a) > value_of(b); }
template <class T> bool operator<(const Dual<T>& a, double b) { return value_of(a) < b; }
template <class T> bool operator>(const Dual<T>& a, double b) { return value_of(a) > b; }

using std::atan2;
using std::cos;
using std::exp;
using std::log;
using std::sin;
using std::sqrt;
using std::abs;

template <class T>
Dual<T> sin(const Dual<T>& x) { return {sin(x.v), cos(x.v) * x.d}; }
template <class T>
Dual<T> cos(const Dual<T>& x) { return {cos(x.v), -sin(x.v) * x.d}; }
template <class T>
Dual<T> exp(const Dual<T>& x)
{
    T e = exp(x.v);
    return {e, e * x.d};
}
template <class T>
Dual<T> log(const Dual<T>& x) { return {log(x.v), x.d / x.v}; }
template <class T>
Dual<T> sqrt(const Dual<T>& x)
{
    T s = sqrt(x.v);
    return {s, x.d / (2.0 * s)};
}
template <class T>
Dual<T> abs(const Dual<T>& x) { return value_of(x) < 0.0 ? -x : x; }
template <class T>
Dual<T> atan2(const Dual<T>& y, const Dual<T>& x)
{
    T r2 = x.v * x.v + y.v * y.v;
    return {atan2(y.v, x.v), (x.v * y.d - y.v * x.d) / r2};
}

/// Seed variable x with a unit tangent.
template <class T>
Dual<T> make_variable(const T& x) { return Dual<T>(x, T(1.0)); }

} // namespace fosl
