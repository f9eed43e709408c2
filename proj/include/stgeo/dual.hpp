#pragma once

// Forward-mode dual numbers. Dual<T> carries a value and a single tangent;
// nesting (Dual<Dual<double>>) gives directional second derivatives.

#include <cmath>
#include <type_traits>

namespace stgeo {

template <class T>
struct Dual {
  T v{};
  T d{};

  constexpr Dual() = default;
  constexpr Dual(T value) : v(value), d(T(0)) {}  // NOLINT(google-explicit-constructor)
  constexpr Dual(T value, T tangent) : v(value), d(tangent) {}
  template <class U, std::enable_if_t<std::is_arithmetic_v<U> && !std::is_same_v<U, T>, int> = 0>
  constexpr Dual(U value) : v(T(value)), d(T(0)) {}  // NOLINT(google-explicit-constructor)

  Dual& operator+=(const Dual& o) { v += o.v; d += o.d; return *this; }
  Dual& operator-=(const Dual& o) { v -= o.v; d -= o.d; return *this; }
  Dual& operator*=(const Dual& o) { d = d * o.v + v * o.d; v *= o.v; return *this; }
  Dual& operator/=(const Dual& o) {
    const T inv = T(1) / o.v;
    d = (d - v * inv * o.d) * inv;
    v *= inv;
    return *this;
  }
};

template <class T> struct is_dual : std::false_type {};
template <class T> struct is_dual<Dual<T>> : std::true_type {};
template <class T> inline constexpr bool is_dual_v = is_dual<T>::value;

/// Innermost real value of a (possibly nested) dual.
template <class T>
constexpr double value_of(const T& x) {
  if constexpr (is_dual_v<T>) {
    return value_of(x.v);
  } else {
    return static_cast<double>(x);
  }
}

template <class T> Dual<T> operator+(Dual<T> a, const Dual<T>& b) { return a += b; }
template <class T> Dual<T> operator-(Dual<T> a, const Dual<T>& b) { return a -= b; }
template <class T> Dual<T> operator*(Dual<T> a, const Dual<T>& b) { return a *= b; }
template <class T> Dual<T> operator/(Dual<T> a, const Dual<T>& b) { return a /= b; }
template <class T> Dual<T> operator-(const Dual<T>& a) { return {-a.v, -a.d}; }
template <class T> Dual<T> operator+(const Dual<T>& a) { return a; }

// Mixed arithmetic with plain doubles.
template <class T> Dual<T> operator+(Dual<T> a, double b) { a.v += T(b); return a; }
template <class T> Dual<T> operator+(double b, Dual<T> a) { a.v += T(b); return a; }
template <class T> Dual<T> operator-(Dual<T> a, double b) { a.v -= T(b); return a; }
template <class T> Dual<T> operator-(double b, const Dual<T>& a) { return {T(b) - a.v, -a.d}; }
template <class T> Dual<T> operator*(Dual<T> a, double b) { a.v *= T(b); a.d *= T(b); return a; }
template <class T> Dual<T> operator*(double b, Dual<T> a) { return a * b; }
template <class T> Dual<T> operator/(Dual<T> a, double b) { a.v /= T(b); a.d /= T(b); return a; }
template <class T> Dual<T> operator/(double b, const Dual<T>& a) {
  const T inv = T(1) / a.v;
  return {T(b) * inv, -T(b) * a.d * inv * inv};
}

template <class T> bool operator<(const Dual<T>& a, const Dual<T>& b) { return value_of(a) < value_of(b); }
template <class T> bool operator>(const Dual<T>& a, const Dual<T>& b) { return value_of(a) > value_of(b); }
template <class T> bool operator<(const Dual<T>& a, double b) { return value_of(a) < b; }
template <class T> bool operator>(const Dual<T>& a, double b) { return value_of(a) > b; }
template <class T> bool operator<=(const Dual<T>& a, double b) { return value_of(a) <= b; }
template <class T> bool operator>=(const Dual<T>& a, double b) { return value_of(a) >= b; }

// Elementary functions. Unqualified calls inside templates resolve here by ADL
// for duals and to <cmath> for doubles (via the using-declarations below).
template <class T> Dual<T> exp(const Dual<T>& a) {
  using std::exp;
  const T e = exp(a.v);
  return {e, e * a.d};
}
template <class T> Dual<T> log(const Dual<T>& a) {
  using std::log;
  return {log(a.v), a.d / a.v};
}
template <class T> Dual<T> log1p(const Dual<T>& a) {
  using std::log1p;
  return {log1p(a.v), a.d / (T(1) + a.v)};
}
template <class T> Dual<T> sqrt(const Dual<T>& a) {
  using std::sqrt;
  const T s = sqrt(a.v);
  return {s, a.d / (T(2) * s)};
}
template <class T> Dual<T> sin(const Dual<T>& a) {
  using std::sin;
  using std::cos;
  return {sin(a.v), cos(a.v) * a.d};
}
template <class T> Dual<T> cos(const Dual<T>& a) {
  using std::sin;
  using std::cos;
  return {cos(a.v), -sin(a.v) * a.d};
}
template <class T> Dual<T> abs(const Dual<T>& a) { return value_of(a) < 0 ? -a : a; }

/// Elementwise helpers usable for both doubles and duals.
namespace fn {
using std::exp;
using std::log;
using std::log1p;
using std::sqrt;
using std::sin;
using std::cos;

template <class S> S square(const S& a) { return a * a; }

/// log(1 + e^u) without overflow.
template <class S>
S softplus(const S& u) {
  if (value_of(u) > 0) return u + log1p(exp(-u));
  return log1p(exp(u));
}

template <class S>
S sigmoid(const S& u) {
  if (value_of(u) >= 0) return S(1.0) / (S(1.0) + exp(-u));
  const S e = exp(u);
  return e / (S(1.0) + e);
}

template <class S>
S silu(const S& u) { return u * sigmoid(u); }
}  // namespace fn

using Dual1 = Dual<double>;
using Dual2 = Dual<Dual<double>>;

}  // namespace stgeo
