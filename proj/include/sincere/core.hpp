#pragma once

#include <cmath>
#include <cstddef>
#include <string>
#include <vector>

#include "sincere/errors.hpp"
#include "sincere/numeric.hpp"

namespace sincere {

inline constexpr double kUnitNormTol = 1e-9;

/// Batch of N unit vectors in R^D (rows of a row-major matrix).
/// Construction validates n >= 2, d >= 1 and that every row lies on the
/// sphere within 1e-9.
class EmbeddingMatrix {
public:
    explicit EmbeddingMatrix(Matrix values) : values_(std::move(values)) {
        if (values_.rows() < 2) throw validation_error("EmbeddingMatrix: need n >= 2 rows");
        if (values_.cols() < 1) throw validation_error("EmbeddingMatrix: need d >= 1 columns");
        for (std::size_t i = 0; i < values_.rows(); ++i) {
            const double nrm = norm2(values_.row(i));
            if (std::fabs(nrm - 1.0) > kUnitNormTol)
                throw validation_error("EmbeddingMatrix: row " + std::to_string(i) +
                                       " has norm " + std::to_string(nrm) +
                                       ", expected unit norm");
        }
    }

    std::size_t n() const { return values_.rows(); }
    std::size_t d() const { return values_.cols(); }
    std::span<const double> row(std::size_t i) const { return values_.row(i); }
    const Matrix& values() const { return values_; }

private:
    Matrix values_;
};

/// Per-item class ids. Any integer ids are accepted; the contrastive setup
/// only needs equality tests between them.
struct LabelVector {
    std::vector<int> labels;

    std::size_t size() const { return labels.size(); }
    int operator[](std::size_t i) const { return labels[i]; }

    /// True when at least two distinct ids are present, i.e. every anchor
    /// has a nonempty noise set.
    bool has_two_classes() const {
        for (std::size_t i = 1; i < labels.size(); ++i)
            if (labels[i] != labels[0]) return true;
        return false;
    }
};

/// N x N cosine similarities. Produced validated by
/// cosine_similarity_matrix; `unchecked` exists for oracle paths that
/// evaluate losses at off-sphere points (finite differences).
struct SimilarityMatrix {
    Matrix values;

    static SimilarityMatrix unchecked(Matrix m) { return SimilarityMatrix{std::move(m)}; }

    std::size_t n() const { return values.rows(); }
    double operator()(std::size_t i, std::size_t j) const { return values(i, j); }
};

/// Roles within a batch relative to one anchor S: positives P (same class,
/// excluding S), noise N (every other class), universe I = [0, n).
struct IndexPartition {
    std::size_t anchor = 0;
    std::vector<std::size_t> positives;
    std::vector<std::size_t> noise;
    std::size_t n = 0; // universe size; I = {0, ..., n-1}
};

/// Positive softmax temperature.
struct Temperature {
    double tau;

    explicit Temperature(double t) : tau(t) {
        if (!(t > 0.0)) throw validation_error("Temperature: tau must be > 0");
    }
};

/// Gram matrix without the unit-norm gate. Used internally and by finite
/// difference oracles, which perturb rows off the sphere.
inline Matrix gram_matrix(const Matrix& z) {
    const std::size_t n = z.rows();
    Matrix g(n, n);
    for (std::size_t i = 0; i < n; ++i) {
        g(i, i) = dot(z.row(i), z.row(i));
        for (std::size_t j = i + 1; j < n; ++j) {
            const double s = dot(z.row(i), z.row(j));
            g(i, j) = s;
            g(j, i) = s;
        }
    }
    return g;
}

/// All pairwise cosine similarities of a unit-norm batch, fully
/// materialized (O(N^2 + ND) memory, O(N^2 D) time).
inline SimilarityMatrix cosine_similarity_matrix(const EmbeddingMatrix& z) {
    return SimilarityMatrix{gram_matrix(z.values())};
}

/// Split a batch into anchor / positives / noise for the given anchor.
/// Throws degenerate_batch_error when every label matches the anchor's
/// (empty noise set); an empty positive set is legal and marks the
/// self-supervised unique-label case.
inline IndexPartition partition_for_anchor(const LabelVector& labels, std::size_t anchor) {
    const std::size_t n = labels.size();
    if (anchor >= n) throw validation_error("partition_for_anchor: anchor out of range");
    IndexPartition part;
    part.anchor = anchor;
    part.n = n;
    const int cls = labels[anchor];
    for (std::size_t i = 0; i < n; ++i) {
        if (i == anchor) continue;
        if (labels[i] == cls)
            part.positives.push_back(i);
        else
            part.noise.push_back(i);
    }
    if (part.noise.empty())
        throw degenerate_batch_error(
            "partition_for_anchor: all labels equal class " + std::to_string(cls) +
            "; noise set is empty");
    return part;
}

/// Project every row of a raw matrix onto the unit sphere, preserving
/// direction. Throws projection_error on a zero row.
inline EmbeddingMatrix renormalize_rows(const Matrix& raw) {
    Matrix out = raw;
    for (std::size_t i = 0; i < out.rows(); ++i) {
        auto r = out.row(i);
        const double nrm = norm2(r);
        if (nrm == 0.0 || !std::isfinite(nrm))
            throw projection_error("renormalize_rows: row " + std::to_string(i) +
                                   " has zero or non-finite norm");
        for (double& x : r) x /= nrm;
    }
    return EmbeddingMatrix(std::move(out));
}

} // namespace sincere
