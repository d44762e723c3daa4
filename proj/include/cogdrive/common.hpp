#pragma once

#include <cmath>
#include <numbers>
#include <stdexcept>
#include <string>

namespace cogdrive {

inline constexpr double kPi = std::numbers::pi;
inline constexpr double kTwoPi = 2.0 * std::numbers::pi;

struct Vec2 {
    double x = 0.0;
    double y = 0.0;

    friend bool operator==(const Vec2&, const Vec2&) = default;
    Vec2 operator+(const Vec2& o) const { return {x + o.x, y + o.y}; }
    Vec2 operator-(const Vec2& o) const { return {x - o.x, y - o.y}; }
    Vec2 operator*(double s) const { return {x * s, y * s}; }
    double dot(const Vec2& o) const { return x * o.x + y * o.y; }
    double cross(const Vec2& o) const { return x * o.y - y * o.x; }
    double norm() const { return std::hypot(x, y); }
};

/// Wraps an angle into [-pi, pi]; an exact -pi maps to +pi so the result is
/// always in (-pi, pi].
inline double wrap_angle(double a) {
    double r = std::remainder(a, kTwoPi);
    if (r <= -kPi) r += kTwoPi;
    if (r > kPi) r = kPi;
    return r;
}

/// Base of every error raised by the library.
class Error : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

/// Input violates a documented schema or type invariant (CLI exit code 2).
class ValidationError : public Error {
public:
    using Error::Error;
};

/// Coincident positions where a direction is required.
class DegenerateGeometryError : public Error {
public:
    using Error::Error;
};

/// Numerical/solver failure at runtime (CLI exit code 3).
class RuntimeFailure : public Error {
public:
    using Error::Error;
};

}  // namespace cogdrive
