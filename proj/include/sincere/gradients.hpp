#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <functional>
#include <limits>
#include <span>
#include <utility>
#include <vector>

#include "sincere/core.hpp"
#include "sincere/errors.hpp"
#include "sincere/losses.hpp"
#include "sincere/numeric.hpp"

namespace sincere {

/// Analytic gradient of one pair term with respect to one embedding.
/// `attraction_factor` is the unscaled softmax term multiplying the
/// attraction direction: softmax[S] - 1 for SINCERE (always in [-1, 0])
/// and softmax[S] - 1/|P| for SupCon (in [-1/|P|, 1 - 1/|P|], so it can
/// turn positive and repel same-class pairs). `attraction_coefficient` is
/// the factor divided by tau, i.e. the actual scalar in the gradient.
struct PairGradient {
    std::size_t wrt = 0;
    std::vector<double> vector;
    double attraction_factor = 0.0;
    double attraction_coefficient = 0.0;
};

/// Gradient of sincere_pair_loss(S, p) with respect to z_p:
/// (z_S/tau)(softmax[S] - 1) + sum_n (z_n/tau) softmax[n], softmax taken
/// over {S} u N of s(., p)/tau.
inline PairGradient sincere_grad_wrt_positive(const EmbeddingMatrix& z, const IndexPartition& part,
                                              std::size_t p, Temperature tau) {
    if (part.noise.empty())
        throw degenerate_batch_error("sincere_grad_wrt_positive: empty noise set");
    const std::size_t d = z.d();
    std::vector<std::size_t> members;
    members.reserve(1 + part.noise.size());
    members.push_back(part.anchor);
    members.insert(members.end(), part.noise.begin(), part.noise.end());

    std::vector<double> logits(members.size());
    for (std::size_t k = 0; k < members.size(); ++k)
        logits[k] = dot(z.row(members[k]), z.row(p)) / tau.tau;
    std::vector<double> sm(members.size());
    softmax_into(logits, sm);

    PairGradient g;
    g.wrt = p;
    g.vector.assign(d, 0.0);
    g.attraction_factor = sm[0] - 1.0;
    g.attraction_coefficient = g.attraction_factor / tau.tau;
    for (std::size_t c = 0; c < d; ++c)
        g.vector[c] += g.attraction_coefficient * z.row(part.anchor)[c];
    for (std::size_t k = 1; k < members.size(); ++k) {
        const double w = sm[k] / tau.tau;
        for (std::size_t c = 0; c < d; ++c) g.vector[c] += w * z.row(members[k])[c];
    }
    return g;
}

/// SupCon gradient with respect to z_p in the per-pair closed form:
/// (z_S/tau)(softmax[S] - 1/|P|) + sum_n (z_n/tau) softmax[n], with the
/// softmax over the pair loss's full denominator set {S} u (P\{p}) u N.
/// Summing the attraction parts over S in P plus one copy of the noise
/// part reconstructs the derivative of the per-anchor mean loss around
/// z_p; the tests exercise exactly that identity against central
/// differences.
inline PairGradient supcon_grad_wrt_positive(const EmbeddingMatrix& z, const IndexPartition& part,
                                             std::size_t p, Temperature tau) {
    if (part.noise.empty())
        throw degenerate_batch_error("supcon_grad_wrt_positive: empty noise set");
    if (part.positives.empty() ||
        std::find(part.positives.begin(), part.positives.end(), p) == part.positives.end())
        throw validation_error("supcon_grad_wrt_positive: p must lie in positives");
    const std::size_t d = z.d();
    const double p_size = static_cast<double>(part.positives.size());

    std::vector<std::size_t> members; // {S} u (P \ {p}) u N
    members.reserve(part.positives.size() + part.noise.size());
    members.push_back(part.anchor);
    for (std::size_t j : part.positives)
        if (j != p) members.push_back(j);
    const std::size_t noise_begin = members.size();
    members.insert(members.end(), part.noise.begin(), part.noise.end());

    std::vector<double> logits(members.size());
    for (std::size_t k = 0; k < members.size(); ++k)
        logits[k] = dot(z.row(members[k]), z.row(p)) / tau.tau;
    std::vector<double> sm(members.size());
    softmax_into(logits, sm);

    PairGradient g;
    g.wrt = p;
    g.vector.assign(d, 0.0);
    g.attraction_factor = sm[0] - 1.0 / p_size;
    g.attraction_coefficient = g.attraction_factor / tau.tau;
    for (std::size_t c = 0; c < d; ++c)
        g.vector[c] += g.attraction_coefficient * z.row(part.anchor)[c];
    for (std::size_t k = noise_begin; k < members.size(); ++k) {
        const double w = sm[k] / tau.tau;
        for (std::size_t c = 0; c < d; ++c) g.vector[c] += w * z.row(members[k])[c];
    }
    return g;
}

/// Gradient of the per-anchor mean SINCERE loss with respect to the
/// embedding z_t that appears in every logit:
///   (1/(tau |P|)) sum_p [ z_p (softmax_p[p] - 1) + sum_{i in N} z_i softmax_p[i] ]
/// where softmax_p is over {p} u N of z_t . z_i / tau. The reported
/// attraction factor is the mean of the per-p (softmax_p[p] - 1) terms.
inline PairGradient sincere_grad_wrt_anchor(const EmbeddingMatrix& z, const IndexPartition& part,
                                            Temperature tau) {
    if (part.positives.empty())
        throw degenerate_batch_error("sincere_grad_wrt_anchor: empty positive set");
    if (part.noise.empty())
        throw degenerate_batch_error("sincere_grad_wrt_anchor: empty noise set");
    const std::size_t d = z.d();
    const std::size_t t = part.anchor;
    const double p_size = static_cast<double>(part.positives.size());

    PairGradient g;
    g.wrt = t;
    g.vector.assign(d, 0.0);
    double factor_sum = 0.0;

    std::vector<double> logits(1 + part.noise.size());
    std::vector<double> sm(logits.size());
    for (std::size_t p : part.positives) {
        logits[0] = dot(z.row(t), z.row(p)) / tau.tau;
        for (std::size_t k = 0; k < part.noise.size(); ++k)
            logits[k + 1] = dot(z.row(t), z.row(part.noise[k])) / tau.tau;
        softmax_into(logits, sm);

        factor_sum += sm[0] - 1.0;
        const double wp = (sm[0] - 1.0) / (tau.tau * p_size);
        for (std::size_t c = 0; c < d; ++c) g.vector[c] += wp * z.row(p)[c];
        for (std::size_t k = 0; k < part.noise.size(); ++k) {
            const double wn = sm[k + 1] / (tau.tau * p_size);
            for (std::size_t c = 0; c < d; ++c) g.vector[c] += wn * z.row(part.noise[k])[c];
        }
    }
    g.attraction_factor = factor_sum / p_size;
    g.attraction_coefficient = g.attraction_factor / tau.tau;
    return g;
}

namespace detail {

// Reused per-pair buffers; one instance serves a whole batch sweep.
struct PairScratch {
    std::vector<std::size_t> members;
    std::vector<double> logits;
    std::vector<double> sm;
};

// Adds weight * d pair_loss(S, p) / d z_j into grad for every j, using the
// generic softmax-cross-entropy derivative, and returns the pair loss
// itself (the softmax pass yields it for free). This is the second
// bookkeeping route the per-pair closed forms are checked against.
inline double accumulate_pair_gradient(LossKind kind, const Matrix& z, const SimilarityMatrix& sim,
                                       const IndexPartition& part, std::size_t p, Temperature tau,
                                       double weight, Matrix& grad, PairScratch& scratch) {
    auto& members = scratch.members;
    members.clear();
    members.push_back(part.anchor);
    if (kind.tag == LossKind::Tag::SupCon)
        for (std::size_t j : part.positives)
            if (j != p) members.push_back(j);
    members.insert(members.end(), part.noise.begin(), part.noise.end());

    auto& logits = scratch.logits;
    logits.resize(members.size());
    for (std::size_t k = 0; k < members.size(); ++k)
        logits[k] = sim(members[k], p) / tau.tau;
    const double numerator_logit = sim(part.anchor, p) / tau.tau;
    if (kind.tag == LossKind::Tag::EpsSupInfoNCE) logits[0] -= kind.epsilon;

    // One pass: stabilized softmax plus log-sum-exp (the same expression
    // tree as the loss kernels, so values agree bit-for-bit).
    auto& sm = scratch.sm;
    sm.resize(logits.size());
    double m = -std::numeric_limits<double>::infinity();
    for (double v : logits) m = std::max(m, v);
    double s = 0.0;
    for (std::size_t k = 0; k < logits.size(); ++k) {
        sm[k] = std::exp(logits[k] - m);
        s += sm[k];
    }
    for (std::size_t k = 0; k < logits.size(); ++k) sm[k] /= s;
    const double loss = m + std::log(s) - numerator_logit;

    const std::size_t d = z.cols();
    auto zp = z.row(p);
    auto zs = z.row(part.anchor);
    auto gp = grad.row(p);
    // d logit_k / d z_p = z_k / tau; numerator subtracts z_S / tau.
    for (std::size_t k = 0; k < members.size(); ++k) {
        const double w = weight * sm[k] / tau.tau;
        auto zk = z.row(members[k]);
        auto gk = grad.row(members[k]);
        for (std::size_t c = 0; c < d; ++c) {
            gp[c] += w * zk[c];
            gk[c] += w * zp[c];
        }
    }
    const double wnum = weight / tau.tau;
    auto gs = grad.row(part.anchor);
    for (std::size_t c = 0; c < d; ++c) {
        gp[c] -= wnum * zs[c];
        gs[c] -= wnum * zp[c];
    }
    return loss;
}

} // namespace detail

/// Full derivative of one pair loss with respect to every embedding,
/// computed by the generic route (N x D matrix).
inline Matrix pair_loss_gradient_generic(LossKind kind, const EmbeddingMatrix& z,
                                         const IndexPartition& part, std::size_t p,
                                         Temperature tau) {
    Matrix grad(z.n(), z.d());
    const SimilarityMatrix sim = cosine_similarity_matrix(z);
    detail::PairScratch scratch;
    detail::accumulate_pair_gradient(kind, z.values(), sim, part, p, tau, 1.0, grad, scratch);
    return grad;
}

/// Batch loss and its exact gradient in one softmax pass per pair, with
/// anchor-major deterministic accumulation. The training loop uses this
/// fused form; batch_gradient below is the gradient-only view.
inline std::pair<double, Matrix> batch_loss_and_gradient(LossKind kind, const EmbeddingMatrix& z,
                                                         const LabelVector& labels,
                                                         Temperature tau,
                                                         BatchMode mode = BatchMode::strict) {
    const std::size_t n = z.n();
    if (labels.size() != n)
        throw validation_error("batch_gradient: labels length does not match batch size");
    const SimilarityMatrix sim = cosine_similarity_matrix(z);
    Matrix grad(n, z.d());
    double loss = 0.0;
    detail::PairScratch scratch;
    for (std::size_t anchor = 0; anchor < n; ++anchor) {
        IndexPartition part;
        try {
            part = partition_for_anchor(labels, anchor);
        } catch (const degenerate_batch_error&) {
            if (mode == BatchMode::strict) throw;
            continue;
        }
        if (part.positives.empty()) {
            if (mode == BatchMode::strict)
                throw degenerate_batch_error("batch_gradient: anchor " + std::to_string(anchor) +
                                             " has no positive partner");
            continue;
        }
        const double w = 1.0 / (static_cast<double>(n) * static_cast<double>(part.positives.size()));
        for (std::size_t p : part.positives)
            loss += w * detail::accumulate_pair_gradient(kind, z.values(), sim, part, p, tau, w,
                                                         grad, scratch);
    }
    return {loss, std::move(grad)};
}

/// Exact gradient of batch_loss with respect to every row of Z.
inline Matrix batch_gradient(LossKind kind, const EmbeddingMatrix& z, const LabelVector& labels,
                             Temperature tau, BatchMode mode = BatchMode::strict) {
    return batch_loss_and_gradient(kind, z, labels, tau, mode).second;
}

/// Central finite differences of loss_fn in the raw coordinates of row
/// `wrt`. The perturbed matrix leaves the unit sphere; loss_fn must accept
/// raw rows (the losses do, through SimilarityMatrix::unchecked).
inline std::vector<double> finite_difference_gradient(
    const std::function<double(const Matrix&)>& loss_fn, const Matrix& z, std::size_t wrt,
    double step) {
    if (!(step > 0.0)) throw validation_error("finite_difference_gradient: step must be > 0");
    std::vector<double> g(z.cols());
    Matrix work = z;
    for (std::size_t c = 0; c < z.cols(); ++c) {
        const double saved = work(wrt, c);
        work(wrt, c) = saved + step;
        const double up = loss_fn(work);
        work(wrt, c) = saved - step;
        const double down = loss_fn(work);
        work(wrt, c) = saved;
        g[c] = (up - down) / (2.0 * step);
    }
    return g;
}

/// ||a - b|| / max(||a||, ||b||, 1e-12); robust near saturated (vanishing)
/// gradients.
inline double gradient_relative_error(std::span<const double> a, std::span<const double> b) {
    if (a.size() != b.size()) throw validation_error("gradient_relative_error: length mismatch");
    double diff = 0.0, na = 0.0, nb = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) {
        diff += (a[i] - b[i]) * (a[i] - b[i]);
        na += a[i] * a[i];
        nb += b[i] * b[i];
    }
    return std::sqrt(diff) / std::max({std::sqrt(na), std::sqrt(nb), 1e-12});
}

} // namespace sincere
