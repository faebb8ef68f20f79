#pragma once

// Negative binomial with mean mu and size r: variance mu + mu^2 / r.

#include <cmath>
#include <cstdint>
#include <random>

#include <boost/math/special_functions/digamma.hpp>

#include "screenlab/core.hpp"

namespace screenlab::negbin {

inline double log_pmf(std::int64_t k, double mu, double r) {
    if (k < 0) {
        return -INFINITY;
    }
    const double kd = static_cast<double>(k);
    const double log_q = -std::log1p(mu / r);  // log(r / (r + mu))
    const double log_p = std::log(mu) - std::log(r + mu);
    double out = std::lgamma(kd + r) - std::lgamma(r) - std::lgamma(kd + 1.0) + r * log_q;
    if (k > 0) {
        out += kd * log_p;
    }
    return out;
}

// d log_pmf / d mu and d log_pmf / d r.
struct LogPmfGrad {
    double d_mu;
    double d_r;
};

inline LogPmfGrad log_pmf_grad(std::int64_t k, double mu, double r) {
    const double kd = static_cast<double>(k);
    const double denom = r + mu;
    LogPmfGrad g{};
    g.d_mu = kd / mu - (kd + r) / denom;
    const double dpsi = k == 0 ? 0.0 : boost::math::digamma(kd + r) - boost::math::digamma(r);
    g.d_r = dpsi - std::log1p(mu / r) + (mu - kd) / denom;
    return g;
}

// Tail Pr(Y > tau) with its derivatives in log mu and log r.
struct Tail {
    double value;
    double d_log_mu;
    double d_log_r;
};

// Lower-sum route: cdf = sum_{k<=tau} pmf(k), derivatives accumulated term by term.
inline Tail tail_with_grad(std::int64_t tau, double mu, double r) {
    if (tau < 0) {
        return {1.0, 0.0, 0.0};
    }
    const double denom = r + mu;
    const double log_q = -std::log1p(mu / r);
    const double ratio = mu / denom;
    double pmf = std::exp(r * log_q);
    double cdf = 0.0;
    double dcdf_dmu = 0.0;
    double dcdf_dr = 0.0;
    double dpsi = 0.0;  // digamma(k + r) - digamma(r)
    for (std::int64_t k = 0; k <= tau; ++k) {
        const double kd = static_cast<double>(k);
        cdf += pmf;
        dcdf_dmu += pmf * (kd / mu - (kd + r) / denom);
        dcdf_dr += pmf * (dpsi + log_q + (mu - kd) / denom);
        pmf *= (kd + r) / (kd + 1.0) * ratio;
        dpsi += 1.0 / (r + kd);
    }
    return {1.0 - cdf, -dcdf_dmu * mu, -dcdf_dr * r};
}

// Pr(Y > tau). Sums the upper tail directly once the cdf passes 1/2 so small tails keep precision.
inline double tail(std::int64_t tau, double mu, double r) {
    if (tau < 0) {
        return 1.0;
    }
    const double ratio = mu / (r + mu);
    double pmf = std::exp(-r * std::log1p(mu / r));
    double cdf = 0.0;
    std::int64_t k = 0;
    for (; k <= tau; ++k) {
        cdf += pmf;
        pmf *= (static_cast<double>(k) + r) / (static_cast<double>(k) + 1.0) * ratio;
    }
    if (cdf <= 0.5) {
        return 1.0 - cdf;
    }
    // pmf now holds pmf(tau + 1).
    double upper = 0.0;
    const double mode = mu > 1.0 ? mu : 1.0;
    for (; k < tau + 100000000; ++k) {
        upper += pmf;
        if (static_cast<double>(k) > mode && pmf <= 1e-17 * upper) {
            break;
        }
        if (pmf == 0.0 && static_cast<double>(k) > mode) {
            break;
        }
        pmf *= (static_cast<double>(k) + r) / (static_cast<double>(k) + 1.0) * ratio;
    }
    return upper;
}

// Gamma-Poisson mixture: lambda ~ Gamma(r, mu / r), Y ~ Poisson(lambda).
inline std::int64_t sample(double mu, double r, Rng& rng) {
    std::gamma_distribution<double> gamma(r, mu / r);
    const double lambda = gamma(rng);
    if (!(lambda > 0.0)) {
        return 0;
    }
    std::poisson_distribution<std::int64_t> poisson(lambda);
    return poisson(rng);
}

}  // namespace screenlab::negbin
