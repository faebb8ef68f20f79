#pragma once

#include <cmath>
#include <cstdint>
#include <string>

#include <gtest/gtest.h>

#include "screenlab/core.hpp"

#define EXPECT_SCREENLAB_ERROR(stmt, expected_code)                                                  \
    do {                                                                                   \
        try {                                                                              \
            stmt;                                                                          \
            ADD_FAILURE() << "expected " << ::screenlab::errc_name(expected_code) << ", got no error"; \
        } catch (const ::screenlab::error& e) {                                            \
            EXPECT_EQ(e.code(), expected_code) << e.what();                                         \
        }                                                                                  \
    } while (0)

namespace testing_support {

// Negative binomial pmf straight from the gamma-function formula, independent of the
// recurrence used by the library.
inline double nb_pmf(std::int64_t k, double mu, double r) {
    const double kk = static_cast<double>(k);
    return std::exp(std::lgamma(kk + r) - std::lgamma(r) - std::lgamma(kk + 1.0) + r * std::log(r / (r + mu)) +
                    kk * std::log(mu / (r + mu)));
}

// Pr(Y > tau) = 1 - sum_{k <= tau} pmf(k).
inline double nb_tail(std::int64_t tau, double mu, double r) {
    long double cdf = 0.0L;
    for (std::int64_t k = 0; k <= tau; ++k) {
        cdf += nb_pmf(k, mu, r);
    }
    return static_cast<double>(1.0L - cdf);
}

}  // namespace testing_support
