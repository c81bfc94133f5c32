#pragma once

#include <algorithm>
#include <cstddef>
#include <span>
#include <string>
#include <vector>

#include "sincere/core.hpp"
#include "sincere/errors.hpp"
#include "sincere/numeric.hpp"

namespace sincere {

/// Which contrastive objective a computation refers to. EpsSupInfoNCE
/// carries its margin; the other kinds ignore `epsilon`.
struct LossKind {
    enum class Tag { InfoNCE, SupCon, SINCERE, EpsSupInfoNCE };

    Tag tag = Tag::SINCERE;
    double epsilon = 0.0;

    static LossKind info_nce() { return {Tag::InfoNCE, 0.0}; }
    static LossKind supcon() { return {Tag::SupCon, 0.0}; }
    static LossKind sincere() { return {Tag::SINCERE, 0.0}; }
    static LossKind eps_supinfonce(double eps) {
        if (eps < 0.0) throw validation_error("LossKind: epsilon must be >= 0");
        return {Tag::EpsSupInfoNCE, eps};
    }

    std::string name() const {
        switch (tag) {
            case Tag::InfoNCE: return "infonce";
            case Tag::SupCon: return "supcon";
            case Tag::SINCERE: return "sincere";
            case Tag::EpsSupInfoNCE: return "eps_supinfonce";
        }
        return "?";
    }
};

/// Margin grid from the original eps-SupInfoNCE protocol.
inline constexpr double kEpsilonSearchGrid[] = {0.1, 0.25, 0.5};

struct PairLossEntry {
    std::size_t anchor;
    std::size_t positive;
    double value;
};

/// Whether batch aggregation errors on anchors lacking a positive or noise
/// partner (strict) or skips them with a record (lenient).
enum class BatchMode { strict, lenient };

struct LossReport {
    LossKind kind;
    std::vector<PairLossEntry> pair_losses; // anchor-major, positive ascending
    double batch_loss = 0.0;
    std::vector<std::size_t> skipped_anchors; // lenient mode only
};

namespace detail {

// -log softmax[0] over the given logits, stabilized by max subtraction.
// logits[0] is the numerator term; every kernel routes through this one
// expression tree so the |P|=1 and epsilon=0 identities hold bit-exactly.
inline double softmax_nll(std::span<const double> logits, double numerator_logit) {
    return log_sum_exp(logits) - numerator_logit;
}

} // namespace detail

/// SINCERE pair loss for (S, p): the denominator holds only the (S, p)
/// term itself plus noise terms, so no same-class embedding is penalized.
inline double sincere_pair_loss(const SimilarityMatrix& sim, const IndexPartition& part,
                                std::size_t p, Temperature tau) {
    if (part.noise.empty())
        throw degenerate_batch_error("sincere_pair_loss: empty noise set");
    std::vector<double> logits;
    logits.reserve(1 + part.noise.size());
    logits.push_back(sim(part.anchor, p) / tau.tau);
    for (std::size_t n : part.noise) logits.push_back(sim(n, p) / tau.tau);
    return detail::softmax_nll(logits, sim(part.anchor, p) / tau.tau);
}

/// SupCon pair loss: like SINCERE but with the other positives' terms also
/// in the denominator (the source of intra-class repulsion).
inline double supcon_pair_loss(const SimilarityMatrix& sim, const IndexPartition& part,
                               std::size_t p, Temperature tau) {
    if (part.noise.empty())
        throw degenerate_batch_error("supcon_pair_loss: empty noise set");
    std::vector<double> logits;
    logits.reserve(part.positives.size() + part.noise.size());
    logits.push_back(sim(part.anchor, p) / tau.tau);
    for (std::size_t j : part.positives)
        if (j != p) logits.push_back(sim(j, p) / tau.tau);
    for (std::size_t n : part.noise) logits.push_back(sim(n, p) / tau.tau);
    return detail::softmax_nll(logits, sim(part.anchor, p) / tau.tau);
}

/// Self-supervised InfoNCE loss over one similarity row (the augmented
/// anchor against the batch). Identical to SINCERE with P = {target}.
inline double info_nce_loss(std::span<const double> sim_row, std::size_t target,
                            std::span<const std::size_t> noise, Temperature tau) {
    if (noise.empty()) throw degenerate_batch_error("info_nce_loss: empty noise set");
    for (std::size_t n : noise)
        if (n == target) throw validation_error("info_nce_loss: target inside noise set");
    std::vector<double> logits;
    logits.reserve(1 + noise.size());
    logits.push_back(sim_row[target] / tau.tau);
    for (std::size_t n : noise) logits.push_back(sim_row[n] / tau.tau);
    return detail::softmax_nll(logits, sim_row[target] / tau.tau);
}

/// Margin variant: the positive's own denominator term is shifted down by
/// epsilon. Equals SINCERE at epsilon = 0; may dip below zero (never below
/// -epsilon) for large margins.
inline double eps_supinfonce_pair_loss(const SimilarityMatrix& sim, const IndexPartition& part,
                                       std::size_t p, Temperature tau, double epsilon) {
    if (epsilon < 0.0) throw validation_error("eps_supinfonce_pair_loss: epsilon must be >= 0");
    if (part.noise.empty())
        throw degenerate_batch_error("eps_supinfonce_pair_loss: empty noise set");
    std::vector<double> logits;
    logits.reserve(1 + part.noise.size());
    logits.push_back(sim(part.anchor, p) / tau.tau - epsilon);
    for (std::size_t n : part.noise) logits.push_back(sim(n, p) / tau.tau);
    return detail::softmax_nll(logits, sim(part.anchor, p) / tau.tau);
}

namespace detail {

inline double pair_loss_dispatch(LossKind kind, const SimilarityMatrix& sim,
                                 const IndexPartition& part, std::size_t p, Temperature tau) {
    switch (kind.tag) {
        case LossKind::Tag::SupCon:
            return supcon_pair_loss(sim, part, p, tau);
        case LossKind::Tag::EpsSupInfoNCE:
            return eps_supinfonce_pair_loss(sim, part, p, tau, kind.epsilon);
        case LossKind::Tag::InfoNCE:
            // Instance-discrimination reading: positives are augmentations
            // of the anchor, and the kernel coincides with SINCERE.
        case LossKind::Tag::SINCERE:
            return sincere_pair_loss(sim, part, p, tau);
    }
    throw validation_error("pair_loss_dispatch: unknown loss kind");
}

inline LossReport batch_loss_core(LossKind kind, const Matrix& values, const LabelVector& labels,
                                  Temperature tau, BatchMode mode) {
    const std::size_t n = values.rows();
    if (labels.size() != n)
        throw validation_error("batch_loss: labels length does not match batch size");
    const SimilarityMatrix sim = SimilarityMatrix::unchecked(gram_matrix(values));

    LossReport report;
    report.kind = kind;
    double total = 0.0;
    for (std::size_t anchor = 0; anchor < n; ++anchor) {
        IndexPartition part;
        try {
            part = partition_for_anchor(labels, anchor);
        } catch (const degenerate_batch_error&) {
            if (mode == BatchMode::strict) throw;
            report.skipped_anchors.push_back(anchor);
            continue;
        }
        if (part.positives.empty()) {
            if (mode == BatchMode::strict)
                throw degenerate_batch_error("batch_loss: anchor " + std::to_string(anchor) +
                                             " has no positive partner");
            report.skipped_anchors.push_back(anchor);
            continue;
        }
        const double w = 1.0 / (static_cast<double>(n) * static_cast<double>(part.positives.size()));
        for (std::size_t p : part.positives) {
            const double value = detail::pair_loss_dispatch(kind, sim, part, p, tau);
            report.pair_losses.push_back({anchor, p, value});
            total += w * value;
        }
    }
    report.batch_loss = total;
    return report;
}

} // namespace detail

/// Batch objective: sum over anchors S and positives p of
/// pair_loss(S, p) / (N * |P_S|). Anchors without a positive or noise
/// partner raise in strict mode and are skipped (and recorded) in lenient
/// mode; N stays the full batch size either way. Accumulation order is
/// anchor-major, so results are bit-reproducible.
inline LossReport batch_loss(LossKind kind, const EmbeddingMatrix& z, const LabelVector& labels,
                             Temperature tau, BatchMode mode = BatchMode::strict) {
    return detail::batch_loss_core(kind, z.values(), labels, tau, mode);
}

/// Batch objective evaluated on raw (possibly off-sphere) rows. This is
/// the function the finite-difference oracles perturb; similarities are
/// plain dot products with no unit-norm gate.
inline double batch_loss_raw(LossKind kind, const Matrix& values, const LabelVector& labels,
                             Temperature tau, BatchMode mode = BatchMode::strict) {
    return detail::batch_loss_core(kind, values, labels, tau, mode).batch_loss;
}

/// Per-candidate SupCon pseudo-probabilities and their total. The total is
/// exactly 1 when |P| = 1 (a proper softmax) and strictly below 1
/// otherwise, which is why SupCon lacks a coherent probabilistic model.
struct PseudoProbabilitySum {
    std::vector<std::size_t> candidates; // I \ P, ascending
    std::vector<double> values;
    double sum = 0.0;
};

inline PseudoProbabilitySum supcon_pseudo_probability_sum(std::span<const double> ratios,
                                                          std::span<const std::size_t> positives,
                                                          std::size_t p) {
    const std::size_t n = ratios.size();
    for (std::size_t i = 0; i < n; ++i)
        if (!(ratios[i] > 0.0))
            throw validation_error("supcon_pseudo_probability_sum: ratio " + std::to_string(i) +
                                   " is not strictly positive");
    std::vector<bool> in_p(n, false);
    bool p_found = false;
    for (std::size_t j : positives) {
        if (j >= n) throw validation_error("supcon_pseudo_probability_sum: positive index out of range");
        in_p[j] = true;
        p_found = p_found || j == p;
    }
    if (!p_found) throw validation_error("supcon_pseudo_probability_sum: p must lie in positives");

    double positive_extra = 0.0; // sum over P \ {p}
    for (std::size_t j : positives)
        if (j != p) positive_extra += ratios[j];

    PseudoProbabilitySum out;
    for (std::size_t s = 0; s < n; ++s) {
        if (in_p[s]) continue;
        double noise_sum = 0.0;
        for (std::size_t i = 0; i < n; ++i)
            if (!in_p[i] && i != s) noise_sum += ratios[i];
        const double value = ratios[s] / (ratios[s] + positive_extra + noise_sum);
        out.candidates.push_back(s);
        out.values.push_back(value);
        out.sum += value;
    }
    return out;
}

} // namespace sincere
