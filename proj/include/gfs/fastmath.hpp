#pragma once

#include <bit>
#include <cmath>
#include <cstdint>

namespace gfs {

// Branch-free exp core for x in [-708, 709]: 2^k * P(r) with Cody-Waite
// argument reduction and a degree-11 polynomial (relative error < 2e-14).
// Inputs below -708 clamp to e^-708 ~ 3e-308, which is indistinguishable
// from zero everywhere these values are consumed. Auto-vectorizes cleanly,
// which is the point: the networks spend most of their time in tanh.
inline double fast_exp(double x) {
    constexpr double kLog2E = 1.4426950408889634074;
    constexpr double kLn2Hi = 6.93147180369123816490e-01;
    constexpr double kLn2Lo = 1.90821492927058770002e-10;

    x = x < -708.0 ? -708.0 : x;
    x = x > 709.0 ? 709.0 : x;

    const double kd = std::nearbyint(x * kLog2E);
    const double r = (x - kd * kLn2Hi) - kd * kLn2Lo;

    // exp(r) on |r| <= 0.3466 (Taylor, Horner form).
    double p = 1.0 / 39916800.0;
    p = p * r + 1.0 / 3628800.0;
    p = p * r + 1.0 / 362880.0;
    p = p * r + 1.0 / 40320.0;
    p = p * r + 1.0 / 5040.0;
    p = p * r + 1.0 / 720.0;
    p = p * r + 1.0 / 120.0;
    p = p * r + 1.0 / 24.0;
    p = p * r + 1.0 / 6.0;
    p = p * r + 0.5;
    p = p * r + 1.0;
    p = p * r + 1.0;

    // Scale by 2^k through the exponent field; k stays in [-1022, 1024).
    const std::int64_t k = static_cast<std::int64_t>(kd);
    const std::uint64_t bits = std::bit_cast<std::uint64_t>(p);
    return std::bit_cast<double>(bits + (static_cast<std::uint64_t>(k) << 52));
}

// tanh via the exp core; exact odd symmetry, clamps where tanh rounds to 1.
inline double fast_tanh(double x) {
    const double a = std::abs(x) < 19.0 ? std::abs(x) : 19.0;
    const double e = fast_exp(-2.0 * a);
    const double t = (1.0 - e) / (1.0 + e);
    return std::copysign(t, x);
}

}  // namespace gfs
