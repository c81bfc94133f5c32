#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <limits>
#include <numbers>
#include <span>
#include <string>
#include <variant>
#include <vector>

#include "sincere/errors.hpp"
#include "sincere/numeric.hpp"
#include "sincere/rng.hpp"

namespace sincere {

struct IsotropicGaussian {
    std::vector<double> mean;
    double sigma;
};

struct DiagonalGaussian {
    std::vector<double> mean;
    std::vector<double> sigmas;
};

/// Finite alphabet of feature symbols 0..A-1; a sample is the 1-vector
/// {double(symbol)}. Keeps posterior checks exact by summation.
struct Categorical {
    std::vector<double> pmf;
};

/// Pluggable target/noise density with log-density evaluation and
/// sampling. Families: isotropic Gaussian, diagonal Gaussian, categorical.
class Density {
public:
    static Density isotropic_gaussian(std::vector<double> mean, double sigma) {
        if (mean.empty()) throw validation_error("Density: empty mean");
        if (!(sigma > 0.0)) throw validation_error("Density: sigma must be > 0");
        return Density(IsotropicGaussian{std::move(mean), sigma});
    }

    static Density diagonal_gaussian(std::vector<double> mean, std::vector<double> sigmas) {
        if (mean.empty()) throw validation_error("Density: empty mean");
        if (mean.size() != sigmas.size())
            throw validation_error("Density: mean/sigma dimension mismatch");
        for (double s : sigmas)
            if (!(s > 0.0)) throw validation_error("Density: sigmas must be > 0");
        return Density(DiagonalGaussian{std::move(mean), std::move(sigmas)});
    }

    static Density categorical(std::vector<double> pmf) {
        if (pmf.empty()) throw validation_error("Density: empty pmf");
        double sum = 0.0;
        for (double p : pmf) {
            if (!(p > 0.0))
                throw validation_error("Density: categorical pmf entries must be > 0");
            sum += p;
        }
        if (std::fabs(sum - 1.0) > 1e-12)
            throw validation_error("Density: categorical pmf must sum to 1 (got " +
                                   std::to_string(sum) + ")");
        return Density(Categorical{std::move(pmf)});
    }

    std::size_t dim() const {
        if (const auto* g = std::get_if<IsotropicGaussian>(&family_)) return g->mean.size();
        if (const auto* g = std::get_if<DiagonalGaussian>(&family_)) return g->mean.size();
        return 1;
    }

    double log_density(std::span<const double> x) const {
        if (x.size() != dim()) throw validation_error("Density::log_density: dimension mismatch");
        constexpr double log2pi = 1.8378770664093454836; // log(2*pi)
        if (const auto* g = std::get_if<IsotropicGaussian>(&family_)) {
            double q = 0.0;
            for (std::size_t i = 0; i < x.size(); ++i) {
                const double d = x[i] - g->mean[i];
                q += d * d;
            }
            const double n = static_cast<double>(x.size());
            return -0.5 * n * log2pi - n * std::log(g->sigma) - 0.5 * q / (g->sigma * g->sigma);
        }
        if (const auto* g = std::get_if<DiagonalGaussian>(&family_)) {
            double acc = -0.5 * static_cast<double>(x.size()) * log2pi;
            for (std::size_t i = 0; i < x.size(); ++i) {
                const double d = x[i] - g->mean[i];
                acc -= std::log(g->sigmas[i]) + 0.5 * d * d / (g->sigmas[i] * g->sigmas[i]);
            }
            return acc;
        }
        const auto& c = std::get<Categorical>(family_);
        const double rounded = std::nearbyint(x[0]);
        if (std::fabs(x[0] - rounded) > 1e-9 || rounded < 0.0 ||
            rounded >= static_cast<double>(c.pmf.size()))
            throw support_violation_error("Density::log_density: value " + std::to_string(x[0]) +
                                          " is not a symbol of the categorical alphabet");
        return std::log(c.pmf[static_cast<std::size_t>(rounded)]);
    }

    std::vector<double> sample(Rng& rng) const {
        if (const auto* g = std::get_if<IsotropicGaussian>(&family_)) {
            std::vector<double> x(g->mean.size());
            for (std::size_t i = 0; i < x.size(); ++i) x[i] = g->mean[i] + g->sigma * rng.normal();
            return x;
        }
        if (const auto* g = std::get_if<DiagonalGaussian>(&family_)) {
            std::vector<double> x(g->mean.size());
            for (std::size_t i = 0; i < x.size(); ++i)
                x[i] = g->mean[i] + g->sigmas[i] * rng.normal();
            return x;
        }
        const auto& c = std::get<Categorical>(family_);
        return {static_cast<double>(rng.categorical(c.pmf))};
    }

    const std::variant<IsotropicGaussian, DiagonalGaussian, Categorical>& family() const {
        return family_;
    }

private:
    template <typename F>
    explicit Density(F f) : family_(std::move(f)) {}

    std::variant<IsotropicGaussian, DiagonalGaussian, Categorical> family_;
};

/// One draw from the generative model: N feature rows, the selected target
/// index S, the known positive indices P (empty when T = 1), and T.
struct ModelSample {
    Matrix data;
    std::size_t anchor = 0;
    std::vector<std::size_t> positives;
    std::size_t t = 1;
};

/// p(S | ...) over the candidate indices I \ P, stored ascending. Sums to
/// 1 by construction.
struct PosteriorVector {
    std::vector<std::size_t> candidates;
    std::vector<double> probabilities;

    double prob_of(std::size_t s) const {
        const auto it = std::lower_bound(candidates.begin(), candidates.end(), s);
        if (it == candidates.end() || *it != s)
            throw validation_error("PosteriorVector: index " + std::to_string(s) +
                                   " is not a candidate");
        return probabilities[static_cast<std::size_t>(it - candidates.begin())];
    }
};

/// Self-supervised model: S uniform over I, x_S from the target density,
/// the rest i.i.d. noise. T = 1, P empty.
inline ModelSample sample_selfsup(std::size_t n, const Density& target, const Density& noise,
                                  Rng& rng) {
    if (n < 2) throw validation_error("sample_selfsup: need n >= 2");
    if (target.dim() != noise.dim())
        throw validation_error("sample_selfsup: target/noise dimension mismatch");
    ModelSample s;
    s.t = 1;
    s.anchor = static_cast<std::size_t>(rng.uniform_index(n));
    s.data = Matrix(n, target.dim());
    for (std::size_t i = 0; i < n; ++i) {
        const auto x = (i == s.anchor) ? target.sample(rng) : noise.sample(rng);
        std::copy(x.begin(), x.end(), s.data.row(i).begin());
    }
    return s;
}

/// Supervised model: P uniform over (T-1)-subsets of I, S uniform over
/// I \ P, target-indexed rows from p+, the rest i.i.d. p-. T = 1 reduces
/// to the self-supervised model.
inline ModelSample sample_supervised(std::size_t n, std::size_t t, const Density& target,
                                     const Density& noise, Rng& rng) {
    if (n < 2) throw validation_error("sample_supervised: need n >= 2");
    if (t < 1 || t >= n)
        throw validation_error("sample_supervised: need 1 <= t < n (got t = " +
                               std::to_string(t) + ", n = " + std::to_string(n) + ")");
    if (t == 1) return sample_selfsup(n, target, noise, rng);
    if (target.dim() != noise.dim())
        throw validation_error("sample_supervised: target/noise dimension mismatch");

    ModelSample s;
    s.t = t;
    s.positives = rng.subset(n, t - 1);
    std::vector<bool> in_p(n, false);
    for (std::size_t j : s.positives) in_p[j] = true;
    // S uniform over I \ P: pick the k-th non-positive index.
    std::size_t k = static_cast<std::size_t>(rng.uniform_index(n - (t - 1)));
    for (std::size_t i = 0; i < n; ++i) {
        if (in_p[i]) continue;
        if (k == 0) {
            s.anchor = i;
            break;
        }
        --k;
    }
    s.data = Matrix(n, target.dim());
    for (std::size_t i = 0; i < n; ++i) {
        const bool is_target = in_p[i] || i == s.anchor;
        const auto x = is_target ? target.sample(rng) : noise.sample(rng);
        std::copy(x.begin(), x.end(), s.data.row(i).begin());
    }
    return s;
}

namespace detail {

// Log density ratio log p+ - log p- at every row. NaN or +inf log
// densities, and zero noise density anywhere the ratio is needed, are
// support violations.
inline std::vector<double> log_ratios(const Matrix& x, const Density& target,
                                      const Density& noise) {
    std::vector<double> r(x.rows());
    for (std::size_t i = 0; i < x.rows(); ++i) {
        const double lp = target.log_density(x.row(i));
        const double lm = noise.log_density(x.row(i));
        if (std::isnan(lp) || lp == std::numeric_limits<double>::infinity() ||
            std::isnan(lm) || lm == std::numeric_limits<double>::infinity())
            throw support_violation_error("log_ratios: non-finite log density at row " +
                                          std::to_string(i));
        if (lm == -std::numeric_limits<double>::infinity())
            throw support_violation_error(
                "log_ratios: noise density vanishes at row " + std::to_string(i) +
                "; the ratio p+/p- is undefined there");
        r[i] = lp - lm;
    }
    return r;
}

} // namespace detail

/// Closed-form supervised posterior: p(S | X, P) proportional to the
/// density ratio p+(x_S)/p-(x_S) over candidates S in I \ P, evaluated in
/// log space.
inline PosteriorVector posterior_supervised(const Matrix& x, std::span<const std::size_t> p_set,
                                            const Density& target, const Density& noise) {
    const std::size_t n = x.rows();
    std::vector<bool> in_p(n, false);
    for (std::size_t j : p_set) {
        if (j >= n) throw validation_error("posterior_supervised: positive index out of range");
        in_p[j] = true;
    }
    const auto ratios = detail::log_ratios(x, target, noise);

    PosteriorVector post;
    std::vector<double> logits;
    for (std::size_t i = 0; i < n; ++i) {
        if (in_p[i]) continue;
        post.candidates.push_back(i);
        logits.push_back(ratios[i]);
    }
    if (post.candidates.empty())
        throw validation_error("posterior_supervised: no candidate indices outside P");
    post.probabilities.resize(logits.size());
    softmax_into(logits, post.probabilities);
    return post;
}

/// Self-supervised posterior: the supervised form with P empty.
inline PosteriorVector posterior_selfsup(const Matrix& x, const Density& target,
                                         const Density& noise) {
    return posterior_supervised(x, {}, target, noise);
}

/// One enumerated assignment of the brute-force joint.
struct BruteForceEntry {
    std::size_t anchor;
    std::vector<std::size_t> positives; // sorted
    double log_joint; // unnormalized
    double joint;     // normalized over all assignments
};

/// Exhaustive enumeration of p(S, P | X) from the unsimplified generative
/// model joint (raw density products in log space, uniform index priors).
/// Deliberately avoids the ratio simplification so it can act as an
/// independent oracle for the closed-form posterior.
struct BruteForceResult {
    std::vector<BruteForceEntry> entries;

    /// p(S | X, P): renormalizes the joint over anchors sharing this P.
    PosteriorVector conditional(std::span<const std::size_t> p_set) const {
        std::vector<std::size_t> key(p_set.begin(), p_set.end());
        std::sort(key.begin(), key.end());
        PosteriorVector post;
        std::vector<double> logits;
        for (const auto& e : entries) {
            if (e.positives != key) continue;
            post.candidates.push_back(e.anchor);
            logits.push_back(e.log_joint);
        }
        if (post.candidates.empty())
            throw validation_error("BruteForceResult::conditional: P not found in enumeration");
        post.probabilities.resize(logits.size());
        softmax_into(logits, post.probabilities);
        return post;
    }

    double joint_total() const {
        double s = 0.0;
        for (const auto& e : entries) s += e.joint;
        return s;
    }
};

inline BruteForceResult brute_force_posterior(const Matrix& x, std::size_t t,
                                              const Density& target, const Density& noise) {
    const std::size_t n = x.rows();
    if (n > 12)
        throw validation_error("brute_force_posterior: n = " + std::to_string(n) +
                               " exceeds the combinatorial guard (n <= 12); use the closed "
                               "form for larger batches");
    if (t < 1 || t >= n) throw validation_error("brute_force_posterior: need 1 <= t < n");

    std::vector<double> lp(n), lm(n);
    for (std::size_t i = 0; i < n; ++i) {
        lp[i] = target.log_density(x.row(i));
        lm[i] = noise.log_density(x.row(i));
        if (std::isnan(lp[i]) || lp[i] == std::numeric_limits<double>::infinity() ||
            std::isnan(lm[i]) || lm[i] == std::numeric_limits<double>::infinity())
            throw support_violation_error("brute_force_posterior: non-finite log density at row " +
                                          std::to_string(i));
    }

    // Uniform priors: p(P) = 1/C(n, t-1), p(S | P) = 1/(n - t + 1). They
    // are constants over assignments but kept so log_joint is the true
    // log of p(X | S, P) p(S | P) p(P).
    double log_choose = 0.0;
    for (std::size_t i = 0; i < t - 1; ++i)
        log_choose += std::log(static_cast<double>(n - i)) -
                      std::log(static_cast<double>(i + 1));
    const double log_prior = -log_choose - std::log(static_cast<double>(n - t + 1));

    BruteForceResult result;
    // Iterate (T-1)-subsets in lexicographic order.
    std::vector<std::size_t> comb(t - 1);
    for (std::size_t i = 0; i < comb.size(); ++i) comb[i] = i;
    const auto advance = [&]() -> bool {
        if (comb.empty()) return false;
        std::size_t i = comb.size();
        while (i > 0) {
            --i;
            if (comb[i] != i + n - comb.size()) {
                ++comb[i];
                for (std::size_t j = i + 1; j < comb.size(); ++j) comb[j] = comb[j - 1] + 1;
                return true;
            }
        }
        return false;
    };

    bool more = true;
    while (more) {
        std::vector<bool> in_p(n, false);
        for (std::size_t j : comb) in_p[j] = true;
        for (std::size_t s = 0; s < n; ++s) {
            if (in_p[s]) continue;
            double lj = log_prior;
            for (std::size_t i = 0; i < n; ++i)
                lj += (in_p[i] || i == s) ? lp[i] : lm[i];
            result.entries.push_back({s, comb, lj, 0.0});
        }
        more = advance();
    }

    std::vector<double> logits(result.entries.size());
    for (std::size_t i = 0; i < logits.size(); ++i) logits[i] = result.entries[i].log_joint;
    const double lse = log_sum_exp(logits);
    if (!std::isfinite(lse))
        throw support_violation_error("brute_force_posterior: all assignments have zero density");
    for (auto& e : result.entries) e.joint = std::exp(e.log_joint - lse);
    return result;
}

} // namespace sincere
