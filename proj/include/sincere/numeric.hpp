#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <limits>
#include <span>
#include <string>
#include <vector>

#include "sincere/errors.hpp"

namespace sincere {

/// Dense row-major matrix of doubles. All numerics in this project are
/// 64-bit; the scales involved are desk-sized, so no blocking or SIMD.
class Matrix {
public:
    Matrix() = default;
    Matrix(std::size_t rows, std::size_t cols, double fill = 0.0)
        : rows_(rows), cols_(cols), data_(rows * cols, fill) {}

    static Matrix from_rows(const std::vector<std::vector<double>>& rows) {
        if (rows.empty()) return {};
        Matrix m(rows.size(), rows.front().size());
        for (std::size_t i = 0; i < rows.size(); ++i) {
            if (rows[i].size() != m.cols_)
                throw validation_error("from_rows: ragged row " + std::to_string(i));
            std::copy(rows[i].begin(), rows[i].end(), m.row(i).begin());
        }
        return m;
    }

    std::size_t rows() const { return rows_; }
    std::size_t cols() const { return cols_; }

    double& operator()(std::size_t i, std::size_t j) { return data_[i * cols_ + j]; }
    double operator()(std::size_t i, std::size_t j) const { return data_[i * cols_ + j]; }

    std::span<double> row(std::size_t i) { return {data_.data() + i * cols_, cols_}; }
    std::span<const double> row(std::size_t i) const { return {data_.data() + i * cols_, cols_}; }

    std::vector<double>& data() { return data_; }
    const std::vector<double>& data() const { return data_; }

    bool operator==(const Matrix& other) const = default;

private:
    std::size_t rows_ = 0;
    std::size_t cols_ = 0;
    std::vector<double> data_;
};

inline double dot(std::span<const double> a, std::span<const double> b) {
    double s = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) s += a[i] * b[i];
    return s;
}

inline double norm2(std::span<const double> a) { return std::sqrt(dot(a, a)); }

/// log(sum_i exp(x_i)) with max subtraction. -inf entries contribute zero
/// mass; an empty list is -inf.
inline double log_sum_exp(std::span<const double> x) {
    double m = -std::numeric_limits<double>::infinity();
    for (double v : x) m = std::max(m, v);
    if (!std::isfinite(m)) return m;
    double s = 0.0;
    for (double v : x) s += std::exp(v - m);
    return m + std::log(s);
}

/// softmax over x, written into out (same length).
inline void softmax_into(std::span<const double> x, std::span<double> out) {
    double m = -std::numeric_limits<double>::infinity();
    for (double v : x) m = std::max(m, v);
    double s = 0.0;
    for (std::size_t i = 0; i < x.size(); ++i) {
        out[i] = std::exp(x[i] - m);
        s += out[i];
    }
    for (std::size_t i = 0; i < x.size(); ++i) out[i] /= s;
}

/// Median with the even-count convention of averaging the middle two.
inline double median(std::vector<double> v) {
    if (v.empty()) throw validation_error("median of empty set");
    std::sort(v.begin(), v.end());
    const std::size_t n = v.size();
    if (n % 2 == 1) return v[n / 2];
    return 0.5 * (v[n / 2 - 1] + v[n / 2]);
}

inline double mean(std::span<const double> v) {
    double s = 0.0;
    for (double x : v) s += x;
    return v.empty() ? 0.0 : s / static_cast<double>(v.size());
}

/// Standard error of the mean (unbiased sample variance).
inline double standard_error(std::span<const double> v) {
    const std::size_t n = v.size();
    if (n < 2) return 0.0;
    const double m = mean(v);
    double ss = 0.0;
    for (double x : v) ss += (x - m) * (x - m);
    return std::sqrt(ss / static_cast<double>(n - 1) / static_cast<double>(n));
}

namespace detail {

// Regularized lower incomplete gamma P(a,x) by series, upper Q(a,x) by
// Lentz continued fraction. Standard splitting at x < a+1.
inline double gamma_p_series(double a, double x) {
    double ap = a;
    double sum = 1.0 / a;
    double del = sum;
    for (int i = 0; i < 500; ++i) {
        ap += 1.0;
        del *= x / ap;
        sum += del;
        if (std::fabs(del) < std::fabs(sum) * 1e-15) break;
    }
    return sum * std::exp(-x + a * std::log(x) - std::lgamma(a));
}

inline double gamma_q_contfrac(double a, double x) {
    const double tiny = 1e-300;
    double b = x + 1.0 - a;
    double c = 1.0 / tiny;
    double d = 1.0 / b;
    double h = d;
    for (int i = 1; i <= 500; ++i) {
        const double an = -i * (i - a);
        b += 2.0;
        d = an * d + b;
        if (std::fabs(d) < tiny) d = tiny;
        c = b + an / c;
        if (std::fabs(c) < tiny) c = tiny;
        d = 1.0 / d;
        const double del = d * c;
        h *= del;
        if (std::fabs(del - 1.0) < 1e-15) break;
    }
    return std::exp(-x + a * std::log(x) - std::lgamma(a)) * h;
}

} // namespace detail

/// Upper tail of the chi-square distribution: P(X >= stat) with df degrees
/// of freedom. Used by the sampler uniformity tests.
inline double chi_square_pvalue(double stat, double df) {
    if (stat < 0.0 || df <= 0.0) throw validation_error("chi_square_pvalue: bad arguments");
    if (stat == 0.0) return 1.0;
    const double a = 0.5 * df;
    const double x = 0.5 * stat;
    if (x < a + 1.0) return 1.0 - detail::gamma_p_series(a, x);
    return detail::gamma_q_contfrac(a, x);
}

/// Pearson chi-square statistic against given expected counts.
inline double chi_square_stat(std::span<const double> observed, std::span<const double> expected) {
    if (observed.size() != expected.size())
        throw validation_error("chi_square_stat: length mismatch");
    double s = 0.0;
    for (std::size_t i = 0; i < observed.size(); ++i) {
        const double d = observed[i] - expected[i];
        s += d * d / expected[i];
    }
    return s;
}

/// Fixed-width histogram over [lo, hi]; values outside are clamped into the
/// edge bins so counts always total the input size.
struct Histogram {
    double lo = -1.0;
    double hi = 1.0;
    std::vector<std::size_t> counts;

    Histogram(double lo_, double hi_, std::size_t bins) : lo(lo_), hi(hi_), counts(bins, 0) {}

    void add(double x) {
        const std::size_t bins = counts.size();
        double t = (x - lo) / (hi - lo) * static_cast<double>(bins);
        long idx = static_cast<long>(std::floor(t));
        idx = std::clamp<long>(idx, 0, static_cast<long>(bins) - 1);
        counts[static_cast<std::size_t>(idx)]++;
    }

    double bin_left(std::size_t i) const {
        return lo + (hi - lo) * static_cast<double>(i) / static_cast<double>(counts.size());
    }
    double bin_right(std::size_t i) const { return bin_left(i + 1); }
};

/// FNV-1a over a string; used to derive stable run identifiers.
inline std::uint64_t fnv1a(const std::string& s) {
    std::uint64_t h = 1469598103934665603ull;
    for (unsigned char c : s) {
        h ^= c;
        h *= 1099511628211ull;
    }
    return h;
}

} // namespace sincere
