#pragma once

#include <cmath>
#include <cstddef>
#include <limits>
#include <optional>
#include <string>
#include <vector>

#include "sincere/errors.hpp"
#include "sincere/genmodel.hpp"
#include "sincere/numeric.hpp"
#include "sincere/rng.hpp"

namespace sincere {

/// Monte-Carlo estimate with its standard error.
struct McEstimate {
    double mean = 0.0;
    double standard_error = 0.0;
    std::size_t samples = 0;
};

namespace detail {

inline DiagonalGaussian as_diagonal(const Density& d) {
    if (const auto* iso = std::get_if<IsotropicGaussian>(&d.family()))
        return DiagonalGaussian{iso->mean, std::vector<double>(iso->mean.size(), iso->sigma)};
    if (const auto* diag = std::get_if<DiagonalGaussian>(&d.family())) return *diag;
    throw validation_error("expected a Gaussian density");
}

inline double kl_gaussian(const DiagonalGaussian& a, const DiagonalGaussian& b) {
    double acc = 0.0;
    for (std::size_t i = 0; i < a.mean.size(); ++i) {
        const double v1 = a.sigmas[i] * a.sigmas[i];
        const double v2 = b.sigmas[i] * b.sigmas[i];
        const double dm = a.mean[i] - b.mean[i];
        acc += std::log(b.sigmas[i] / a.sigmas[i]) + (v1 + dm * dm) / (2.0 * v2) - 0.5;
    }
    return acc;
}

inline double kl_categorical(const Categorical& a, const Categorical& b) {
    if (a.pmf.size() != b.pmf.size())
        throw validation_error("symmetrized_kl: categorical alphabets differ in size");
    double acc = 0.0;
    for (std::size_t i = 0; i < a.pmf.size(); ++i)
        acc += a.pmf[i] * std::log(a.pmf[i] / b.pmf[i]);
    return acc;
}

inline bool is_gaussian(const Density& d) {
    return !std::holds_alternative<Categorical>(d.family());
}

} // namespace detail

/// Directed KL(a || b) in closed form (Gaussian pairs) or by exact
/// summation (categorical pairs).
inline double kl_divergence(const Density& a, const Density& b) {
    if (a.dim() != b.dim()) throw validation_error("kl_divergence: dimension mismatch");
    if (detail::is_gaussian(a) && detail::is_gaussian(b))
        return detail::kl_gaussian(detail::as_diagonal(a), detail::as_diagonal(b));
    if (!detail::is_gaussian(a) && !detail::is_gaussian(b))
        return detail::kl_categorical(std::get<Categorical>(a.family()),
                                      std::get<Categorical>(b.family()));
    throw validation_error("kl_divergence: mixed Gaussian/categorical pair has no shared support");
}

/// KL(p- || p+) + KL(p+ || p-), the quantity controlling the ideal-loss
/// floor in the KL bound.
inline double symmetrized_kl(const Density& target, const Density& noise) {
    return kl_divergence(noise, target) + kl_divergence(target, noise);
}

namespace detail {

// Deterministic chunked MC: chunk c draws from Rng(seed, c); the reduction
// runs in chunk order, so estimates replay exactly and chunks could be
// farmed out in parallel without changing the result. Welford accumulation
// keeps the variance stable (and exactly zero for constant integrands).
template <typename PerSample>
McEstimate chunked_mc(std::size_t samples, std::uint64_t seed, PerSample&& per_sample,
                      std::size_t chunk_size = 4096) {
    double mean = 0.0, m2 = 0.0;
    std::size_t count = 0, chunk = 0;
    while (count < samples) {
        Rng rng(seed, chunk);
        const std::size_t m = std::min(chunk_size, samples - count);
        for (std::size_t i = 0; i < m; ++i) {
            const double v = per_sample(rng);
            ++count;
            const double delta = v - mean;
            mean += delta / static_cast<double>(count);
            m2 += delta * (v - mean);
        }
        ++chunk;
    }
    McEstimate est;
    est.samples = samples;
    est.mean = mean;
    if (samples > 1) {
        const double var = std::max(0.0, m2 / static_cast<double>(samples - 1));
        est.standard_error = std::sqrt(var / static_cast<double>(samples));
    }
    return est;
}

} // namespace detail

/// MC estimate of the symmetrized KL for density pairs without a closed
/// form path (and as an independent check of the closed forms).
inline McEstimate symmetrized_kl_mc(const Density& target, const Density& noise,
                                    std::size_t samples, std::uint64_t seed) {
    if (target.dim() != noise.dim())
        throw validation_error("symmetrized_kl_mc: dimension mismatch");
    // E_{p+}[log p+/p-] + E_{p-}[log p-/p+], each term from its own stream.
    const auto fwd = detail::chunked_mc(samples, seed, [&](Rng& rng) {
        const auto x = target.sample(rng);
        return target.log_density(x) - noise.log_density(x);
    });
    const auto rev = detail::chunked_mc(samples, seed ^ 0x517cc1b727220a95ull, [&](Rng& rng) {
        const auto x = noise.sample(rng);
        return noise.log_density(x) - target.log_density(x);
    });
    McEstimate est;
    est.samples = samples;
    est.mean = fwd.mean + rev.mean;
    est.standard_error = std::hypot(fwd.standard_error, rev.standard_error);
    return est;
}

/// Ideal SINCERE loss at theta*: each candidate scored with the exact
/// density ratio, averaged negative log posterior of the true S over
/// draws from the generative model.
inline McEstimate ideal_loss_mc(std::size_t n, std::size_t t, const Density& target,
                                const Density& noise, std::size_t samples, std::uint64_t seed) {
    if (samples < 1000) throw validation_error("ideal_loss_mc: need at least 1000 samples");
    return detail::chunked_mc(samples, seed, [&](Rng& rng) {
        const ModelSample s = sample_supervised(n, t, target, noise, rng);
        const PosteriorVector post = posterior_supervised(s.data, s.positives, target, noise);
        return -std::log(post.prob_of(s.anchor));
    });
}

/// Ideal SupCon-style loss at theta*: same draws, but each candidate's
/// score denominator also carries the other positives' ratios (the
/// pseudo-probability of the probabilistic reading of SupCon), averaged
/// over the choice of highlighted positive p.
inline McEstimate supcon_ideal_loss_mc(std::size_t n, std::size_t t, const Density& target,
                                       const Density& noise, std::size_t samples,
                                       std::uint64_t seed) {
    if (samples < 1000) throw validation_error("supcon_ideal_loss_mc: need at least 1000 samples");
    if (t < 2) throw validation_error("supcon_ideal_loss_mc: need t >= 2 (nonempty P)");
    return detail::chunked_mc(samples, seed, [&](Rng& rng) {
        const ModelSample s = sample_supervised(n, t, target, noise, rng);
        const auto lr = detail::log_ratios(s.data, target, noise);
        std::vector<bool> in_p(n, false);
        for (std::size_t j : s.positives) in_p[j] = true;

        double acc = 0.0;
        for (std::size_t p : s.positives) {
            std::vector<double> logits;
            logits.push_back(lr[s.anchor]);
            for (std::size_t j : s.positives)
                if (j != p) logits.push_back(lr[j]);
            for (std::size_t i = 0; i < n; ++i)
                if (!in_p[i] && i != s.anchor) logits.push_back(lr[i]);
            acc += log_sum_exp(logits) - lr[s.anchor];
        }
        return acc / static_cast<double>(s.positives.size());
    });
}

/// Bound verdicts for one (density pair, n, t) configuration. The RHS
/// values are log|N| - symKL for SINCERE and
/// log(|N|+|P|-1) - |N|/(|N|+|P|-1) * symKL for SupCon; `*_rhs_trivial`
/// clamps them at zero since a negative log PMF cannot go below 0.
/// Satisfaction allows 3 standard errors of MC slack.
struct BoundReport {
    std::size_t n_noise = 0;
    std::size_t n_pos = 0;
    double sym_kl = 0.0;
    McEstimate mc_loss_estimate;
    double sincere_rhs = 0.0;
    double sincere_rhs_trivial = 0.0;
    bool sincere_satisfied = false;
    std::optional<double> supcon_rhs;
    std::optional<double> supcon_rhs_trivial;
    std::optional<McEstimate> supcon_mc;
    std::optional<bool> supcon_satisfied;
};

inline double sincere_bound_rhs(std::size_t n_noise, double sym_kl) {
    return std::log(static_cast<double>(n_noise)) - sym_kl;
}

inline double supcon_bound_rhs(std::size_t n_noise, std::size_t n_pos, double sym_kl) {
    if (n_pos < 1) throw validation_error("supcon_bound_rhs: need |P| >= 1");
    const double m = static_cast<double>(n_noise + n_pos - 1);
    return std::log(m) - static_cast<double>(n_noise) / m * sym_kl;
}

inline BoundReport check_bounds(std::size_t n_noise, std::size_t n_pos, double sym_kl,
                                const McEstimate& sincere_mc,
                                std::optional<McEstimate> supcon_mc = std::nullopt) {
    if (n_noise < 1) throw validation_error("check_bounds: need |N| >= 1");
    if (sym_kl < 0.0) throw validation_error("check_bounds: symmetrized KL must be >= 0");
    BoundReport r;
    r.n_noise = n_noise;
    r.n_pos = n_pos;
    r.sym_kl = sym_kl;
    r.mc_loss_estimate = sincere_mc;
    r.sincere_rhs = sincere_bound_rhs(n_noise, sym_kl);
    r.sincere_rhs_trivial = std::max(r.sincere_rhs, 0.0);
    r.sincere_satisfied =
        sincere_mc.mean + 3.0 * sincere_mc.standard_error >= r.sincere_rhs;
    if (n_pos >= 1) {
        r.supcon_rhs = supcon_bound_rhs(n_noise, n_pos, sym_kl);
        r.supcon_rhs_trivial = std::max(*r.supcon_rhs, 0.0);
        if (supcon_mc) {
            r.supcon_mc = supcon_mc;
            r.supcon_satisfied =
                supcon_mc->mean + 3.0 * supcon_mc->standard_error >= *r.supcon_rhs;
        }
    }
    return r;
}

} // namespace sincere
