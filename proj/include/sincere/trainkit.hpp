#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <limits>
#include <map>
#include <numbers>
#include <span>
#include <string>
#include <vector>

#include "sincere/core.hpp"
#include "sincere/errors.hpp"
#include "sincere/gradients.hpp"
#include "sincere/losses.hpp"
#include "sincere/numeric.hpp"
#include "sincere/rng.hpp"

namespace sincere {

/// Synthetic stand-in for the image datasets: k unit mean directions with
/// controlled pairwise distance, Gaussian cluster noise, renormalized.
struct SyntheticDatasetSpec {
    std::size_t k_classes = 2;
    std::size_t per_class = 200;
    std::size_t feature_dim = 16;
    double class_separation = 1.2; // pairwise Euclidean distance between mean directions
    double within_class_noise = 0.15;
    std::uint64_t seed = 0;
};

struct Dataset {
    Matrix train_x;
    std::vector<int> train_y;
    Matrix test_x;
    std::vector<int> test_y;
    SyntheticDatasetSpec spec;
};

/// Class means are m_c = sqrt(1-a^2) u + a e_c with a = separation/sqrt(2),
/// u an axis orthogonal to all e_c, so every pair of means sits at exactly
/// the requested distance. Needs k_classes + 1 <= feature_dim and
/// separation <= sqrt(2). Samples are mean + isotropic noise, projected
/// back to the sphere; 90/10 per-class train/test split.
inline Dataset generate_dataset(const SyntheticDatasetSpec& spec) {
    if (spec.k_classes < 2) throw validation_error("generate_dataset: need k_classes >= 2");
    if (spec.per_class < 2) throw validation_error("generate_dataset: need per_class >= 2");
    if (spec.within_class_noise < 0.0)
        throw validation_error("generate_dataset: within_class_noise must be >= 0");
    if (spec.class_separation < 0.0)
        throw validation_error("generate_dataset: class_separation must be >= 0");
    const double a = spec.class_separation / std::sqrt(2.0);
    if (a > 1.0)
        throw validation_error("generate_dataset: separation " +
                               std::to_string(spec.class_separation) +
                               " exceeds the sqrt(2) limit of the placement scheme");
    if (spec.k_classes + 1 > spec.feature_dim)
        throw validation_error("generate_dataset: placement needs k_classes + 1 <= feature_dim");

    Matrix means(spec.k_classes, spec.feature_dim);
    const double common = std::sqrt(std::max(0.0, 1.0 - a * a));
    for (std::size_t c = 0; c < spec.k_classes; ++c) {
        means(c, c) = a;
        means(c, spec.k_classes) = common;
    }

    Rng rng(spec.seed);
    const std::size_t n_train = spec.per_class * 9 / 10 > 0 ? spec.per_class * 9 / 10
                                                            : spec.per_class - 1;
    Dataset data;
    data.spec = spec;
    data.train_x = Matrix(spec.k_classes * n_train, spec.feature_dim);
    data.test_x = Matrix(spec.k_classes * (spec.per_class - n_train), spec.feature_dim);
    std::size_t ti = 0, si = 0;
    for (std::size_t c = 0; c < spec.k_classes; ++c) {
        for (std::size_t i = 0; i < spec.per_class; ++i) {
            std::vector<double> x(spec.feature_dim);
            for (std::size_t j = 0; j < spec.feature_dim; ++j)
                x[j] = means(c, j) + spec.within_class_noise * rng.normal();
            const double nrm = norm2(x);
            if (nrm == 0.0) throw validation_error("generate_dataset: degenerate zero sample");
            for (double& v : x) v /= nrm;
            if (i < n_train) {
                std::copy(x.begin(), x.end(), data.train_x.row(ti).begin());
                data.train_y.push_back(static_cast<int>(c));
                ++ti;
            } else {
                std::copy(x.begin(), x.end(), data.test_x.row(si).begin());
                data.test_y.push_back(static_cast<int>(c));
                ++si;
            }
        }
    }
    return data;
}

/// One training batch: batch_size/2 items, each contributing two views
/// (rows 2i and 2i+1), labels duplicated accordingly.
struct Batch {
    std::vector<std::size_t> items;
    Matrix views;
    std::vector<int> labels;
};

/// Epoch-shuffled batch stream. Each sampled item appears exactly twice as
/// feature + Gaussian perturbation, renormalized (the stand-in for data
/// augmentation). Chunks that land on a single class are resampled from
/// the full set, with a bounded retry budget.
class BatchStream {
public:
    BatchStream(const Matrix& x, std::vector<int> y, std::size_t batch_size, double aug_sigma,
                std::uint64_t seed, std::uint64_t stream = 0)
        : x_(&x), y_(std::move(y)), batch_size_(batch_size), aug_sigma_(aug_sigma),
          rng_(seed, stream) {
        if (batch_size_ < 4 || batch_size_ % 2 != 0)
            throw validation_error("BatchStream: batch_size must be even and >= 4");
        if (batch_size_ / 2 > x.rows())
            throw validation_error("BatchStream: batch_size/2 exceeds the item count");
        bool two = false;
        for (std::size_t i = 1; i < y_.size(); ++i) two = two || y_[i] != y_[0];
        if (!two) throw degenerate_batch_error("BatchStream: dataset has a single class");
        order_.resize(x.rows());
        for (std::size_t i = 0; i < order_.size(); ++i) order_[i] = i;
        reshuffle();
    }

    std::size_t batches_per_epoch() const { return order_.size() / (batch_size_ / 2); }

    Batch next() {
        const std::size_t m = batch_size_ / 2;
        if (cursor_ + m > order_.size()) reshuffle();
        std::vector<std::size_t> items(order_.begin() + static_cast<long>(cursor_),
                                       order_.begin() + static_cast<long>(cursor_ + m));
        cursor_ += m;

        for (int attempt = 0; !has_two_classes(items); ++attempt) {
            if (attempt >= 100)
                throw degenerate_batch_error("BatchStream: could not draw a two-class batch");
            for (auto& it : items) it = static_cast<std::size_t>(rng_.uniform_index(x_->rows()));
        }

        Batch b;
        b.items = std::move(items);
        b.views = Matrix(batch_size_, x_->cols());
        b.labels.resize(batch_size_);
        for (std::size_t i = 0; i < m; ++i) {
            for (int v = 0; v < 2; ++v) {
                auto row = b.views.row(2 * i + static_cast<std::size_t>(v));
                auto src = x_->row(b.items[i]);
                double nrm = 0.0;
                for (std::size_t j = 0; j < row.size(); ++j) {
                    row[j] = src[j] + (aug_sigma_ > 0.0 ? aug_sigma_ * rng_.normal() : 0.0);
                    nrm += row[j] * row[j];
                }
                nrm = std::sqrt(nrm);
                if (nrm == 0.0) throw projection_error("BatchStream: zero-norm augmented view");
                for (std::size_t j = 0; j < row.size(); ++j) row[j] /= nrm;
                b.labels[2 * i + static_cast<std::size_t>(v)] = y_[b.items[i]];
            }
        }
        return b;
    }

private:
    void reshuffle() {
        rng_.shuffle(order_);
        cursor_ = 0;
    }

    bool has_two_classes(const std::vector<std::size_t>& items) const {
        for (std::size_t i = 1; i < items.size(); ++i)
            if (y_[items[i]] != y_[items[0]]) return true;
        return false;
    }

    const Matrix* x_;
    std::vector<int> y_;
    std::size_t batch_size_;
    double aug_sigma_;
    Rng rng_;
    std::vector<std::size_t> order_;
    std::size_t cursor_ = 0;
};

struct LrSchedule {
    enum class Kind { constant, cosine_warmup };
    Kind kind = Kind::cosine_warmup;
    std::size_t warmup_epochs = 5;
    double floor_fraction = 0.001;
};

/// Learning-rate multiplier for an epoch: linear warmup from the floor to
/// 1, then cosine back down to the floor at the final epoch.
inline double lr_factor(const LrSchedule& s, std::size_t epoch, std::size_t total_epochs) {
    if (s.kind == LrSchedule::Kind::constant) return 1.0;
    const double floor = s.floor_fraction;
    if (epoch < s.warmup_epochs)
        return floor + (1.0 - floor) * static_cast<double>(epoch + 1) /
                           static_cast<double>(s.warmup_epochs);
    if (total_epochs <= s.warmup_epochs + 1) return 1.0;
    const double progress = static_cast<double>(epoch - s.warmup_epochs) /
                            static_cast<double>(total_epochs - 1 - s.warmup_epochs);
    return floor + (1.0 - floor) * 0.5 * (1.0 + std::cos(std::numbers::pi * progress));
}

enum class EncoderKind { embedding_table, nonlinear_map };

struct TrainConfig {
    LossKind loss = LossKind::sincere();
    double tau = 0.1;
    std::size_t epochs = 200;
    std::size_t batch_size = 64;
    double learning_rate = 0.5;
    double momentum = 0.9;
    double weight_decay = 1e-4;
    LrSchedule schedule;
    EncoderKind encoder = EncoderKind::embedding_table;
    std::size_t mlp_hidden = 32;
    double aug_sigma = -1.0; // negative: default to within_class_noise / 2
    std::uint64_t seed = 0;
    std::vector<std::size_t> knn_ks = {1, 5};
    std::size_t hist_bins = 40;
    std::size_t readout_neighbors = 5;

    void validate() const {
        if (!(tau > 0.0)) throw validation_error("TrainConfig: tau must be > 0");
        if (epochs < 1) throw validation_error("TrainConfig: epochs must be >= 1");
        if (batch_size < 4 || batch_size % 2 != 0)
            throw validation_error("TrainConfig: batch_size must be even and >= 4");
        if (learning_rate < 0.0) throw validation_error("TrainConfig: learning_rate must be >= 0");
        if (momentum < 0.0 || momentum >= 1.0)
            throw validation_error("TrainConfig: momentum must lie in [0, 1)");
        if (weight_decay < 0.0) throw validation_error("TrainConfig: weight_decay must be >= 0");
        if (mlp_hidden < 1) throw validation_error("TrainConfig: mlp_hidden must be >= 1");
        if (hist_bins < 1) throw validation_error("TrainConfig: hist_bins must be >= 1");
        if (readout_neighbors < 1)
            throw validation_error("TrainConfig: readout_neighbors must be >= 1");
    }
};

struct MarginHistograms {
    Histogram target_nn;
    Histogram noise_nn;

    explicit MarginHistograms(std::size_t bins)
        : target_nn(-1.0, 1.0, bins), noise_nn(-1.0, 1.0, bins) {}
};

struct PerClassMargin {
    int label = 0;
    bool available = false;
    double margin = 0.0;
    double median_target_nn = 0.0;
    double median_noise_nn = 0.0;
    std::size_t test_count = 0;
};

/// Nearest-neighbor similarity summary: for every test point, its best
/// similarity to same-class and other-class train points; margin is the
/// difference of the two medians.
struct MarginReport {
    double margin = 0.0;
    double median_target_nn = 0.0;
    double median_noise_nn = 0.0;
    MarginHistograms aggregate{40};
    std::vector<PerClassMargin> per_class;
    std::map<int, MarginHistograms> per_class_hists;
};

inline MarginReport margin_report(const Matrix& train_z, const std::vector<int>& train_y,
                                  const Matrix& test_z, const std::vector<int>& test_y,
                                  std::size_t bins = 40) {
    if (train_z.rows() == 0 || test_z.rows() == 0)
        throw validation_error("margin_report: empty train or test set");
    if (train_z.rows() != train_y.size() || test_z.rows() != test_y.size())
        throw validation_error("margin_report: label length mismatch");
    if (train_z.cols() != test_z.cols())
        throw validation_error("margin_report: embedding dimension mismatch");

    MarginReport report;
    report.aggregate = MarginHistograms(bins);
    std::vector<double> target_sims, noise_sims;
    std::map<int, std::vector<double>> class_target, class_noise;
    std::map<int, std::size_t> class_counts;

    for (std::size_t i = 0; i < test_z.rows(); ++i) {
        double best_target = -std::numeric_limits<double>::infinity();
        double best_noise = -std::numeric_limits<double>::infinity();
        for (std::size_t j = 0; j < train_z.rows(); ++j) {
            const double s = dot(test_z.row(i), train_z.row(j));
            if (train_y[j] == test_y[i])
                best_target = std::max(best_target, s);
            else
                best_noise = std::max(best_noise, s);
        }
        class_counts[test_y[i]]++;
        if (std::isfinite(best_target) && std::isfinite(best_noise)) {
            target_sims.push_back(best_target);
            noise_sims.push_back(best_noise);
            report.aggregate.target_nn.add(best_target);
            report.aggregate.noise_nn.add(best_noise);
            class_target[test_y[i]].push_back(best_target);
            class_noise[test_y[i]].push_back(best_noise);
            auto [it, inserted] =
                report.per_class_hists.try_emplace(test_y[i], MarginHistograms(bins));
            it->second.target_nn.add(best_target);
            it->second.noise_nn.add(best_noise);
        }
    }
    if (target_sims.empty())
        throw validation_error("margin_report: no test point has both a target and a noise "
                               "neighbor in the train set");

    report.median_target_nn = median(target_sims);
    report.median_noise_nn = median(noise_sims);
    report.margin = report.median_target_nn - report.median_noise_nn;

    for (const auto& [label, count] : class_counts) {
        PerClassMargin pc;
        pc.label = label;
        pc.test_count = count;
        const auto it = class_target.find(label);
        if (it != class_target.end() && !it->second.empty()) {
            pc.available = true;
            pc.median_target_nn = median(it->second);
            pc.median_noise_nn = median(class_noise[label]);
            pc.margin = pc.median_target_nn - pc.median_noise_nn;
        }
        report.per_class.push_back(pc);
    }
    return report;
}

/// Weighted k-nearest-neighbor classification by cosine similarity: the k
/// most similar train points vote with their raw similarity as weight;
/// vote ties resolve to the smallest class id, neighbor-rank ties to the
/// smallest index.
struct KnnResult {
    std::vector<int> predictions;
    double accuracy = std::numeric_limits<double>::quiet_NaN();
};

inline KnnResult weighted_knn(const Matrix& train_z, const std::vector<int>& train_y,
                              const Matrix& test_z, std::size_t k,
                              const std::vector<int>* test_y = nullptr) {
    if (k < 1 || k > train_z.rows())
        throw validation_error("weighted_knn: need 1 <= k <= train size");
    if (train_z.rows() != train_y.size())
        throw validation_error("weighted_knn: label length mismatch");

    KnnResult result;
    std::size_t correct = 0;
    std::vector<std::pair<double, std::size_t>> scored(train_z.rows());
    for (std::size_t i = 0; i < test_z.rows(); ++i) {
        for (std::size_t j = 0; j < train_z.rows(); ++j)
            scored[j] = {dot(test_z.row(i), train_z.row(j)), j};
        std::partial_sort(scored.begin(), scored.begin() + static_cast<long>(k), scored.end(),
                          [](const auto& a, const auto& b) {
                              if (a.first != b.first) return a.first > b.first;
                              return a.second < b.second;
                          });
        std::map<int, double> votes;
        for (std::size_t r = 0; r < k; ++r) votes[train_y[scored[r].second]] += scored[r].first;
        int best_label = votes.begin()->first;
        double best_vote = votes.begin()->second;
        for (const auto& [label, vote] : votes) {
            if (vote > best_vote) {
                best_vote = vote;
                best_label = label;
            }
        }
        result.predictions.push_back(best_label);
        if (test_y && (*test_y)[i] == best_label) ++correct;
    }
    if (test_y && test_z.rows() > 0)
        result.accuracy = static_cast<double>(correct) / static_cast<double>(test_z.rows());
    return result;
}

struct MetricsReport {
    std::vector<double> epoch_loss;
    MarginReport margins;
    std::map<std::size_t, double> knn_accuracy;
};

struct TrainResult {
    Matrix train_embeddings;
    Matrix test_embeddings;
    MetricsReport metrics;
};

namespace detail {

// Out-of-sample readout for the embedding-table encoder: a test point is
// embedded as the renormalized mean of the learned embeddings of its m
// feature-space nearest train items.
inline Matrix table_readout(const Matrix& train_x, const Matrix& table, const Matrix& test_x,
                            std::size_t m) {
    m = std::min(m, train_x.rows());
    Matrix out(test_x.rows(), table.cols());
    std::vector<std::pair<double, std::size_t>> scored(train_x.rows());
    for (std::size_t i = 0; i < test_x.rows(); ++i) {
        for (std::size_t j = 0; j < train_x.rows(); ++j)
            scored[j] = {dot(test_x.row(i), train_x.row(j)), j};
        std::partial_sort(scored.begin(), scored.begin() + static_cast<long>(m), scored.end(),
                          [](const auto& a, const auto& b) {
                              if (a.first != b.first) return a.first > b.first;
                              return a.second < b.second;
                          });
        auto row = out.row(i);
        for (std::size_t r = 0; r < m; ++r) {
            auto src = table.row(scored[r].second);
            for (std::size_t c = 0; c < row.size(); ++c) row[c] += src[c];
        }
        double nrm = norm2(row);
        if (nrm < 1e-12) {
            // Antipodal cancellation: fall back to the single nearest item.
            auto src = table.row(scored[0].second);
            std::copy(src.begin(), src.end(), row.begin());
            nrm = norm2(row);
        }
        for (double& v : row) v /= nrm;
    }
    return out;
}

} // namespace detail

// One-hidden-layer encoder with explicit analytic backprop, including the
// output normalization z = u / ||u||. Weights and accumulated gradients
// are plain public state so the finite-difference suite can poke them.
class NonlinearMapEncoder {
public:
    NonlinearMapEncoder(std::size_t d_in, std::size_t hidden, Rng& rng)
        : w1(hidden, d_in), b1(hidden, 0.0), w2(d_in, hidden), b2(d_in, 0.0),
          gw1(hidden, d_in), gb1(hidden, 0.0), gw2(d_in, hidden), gb2(d_in, 0.0),
          d_in_(d_in), hidden_(hidden), vw1_(hidden, d_in), vb1_(hidden, 0.0),
          vw2_(d_in, hidden), vb2_(d_in, 0.0) {
        const double s1 = 1.0 / std::sqrt(static_cast<double>(d_in));
        const double s2 = 1.0 / std::sqrt(static_cast<double>(hidden));
        for (double& v : w1.data()) v = s1 * rng.normal();
        for (double& v : w2.data()) v = s2 * rng.normal();
    }

    struct Cache {
        Matrix x;      // batch inputs
        Matrix h;      // tanh activations
        Matrix u;      // pre-normalization outputs
        std::vector<double> unorm;
    };

    Matrix forward(const Matrix& x, Cache& cache) const {
        const std::size_t n = x.rows();
        cache.x = x;
        cache.h = Matrix(n, hidden_);
        cache.u = Matrix(n, d_in_);
        cache.unorm.assign(n, 0.0);
        Matrix z(n, d_in_);
        for (std::size_t i = 0; i < n; ++i) {
            for (std::size_t a = 0; a < hidden_; ++a) {
                double acc = b1[a];
                for (std::size_t j = 0; j < d_in_; ++j) acc += w1(a, j) * x(i, j);
                cache.h(i, a) = std::tanh(acc);
            }
            double nrm = 0.0;
            for (std::size_t o = 0; o < d_in_; ++o) {
                double acc = b2[o];
                for (std::size_t a = 0; a < hidden_; ++a) acc += w2(o, a) * cache.h(i, a);
                cache.u(i, o) = acc;
                nrm += acc * acc;
            }
            nrm = std::sqrt(nrm);
            if (!(nrm > 1e-12))
                throw training_error("NonlinearMapEncoder: near-zero pre-normalization output");
            cache.unorm[i] = nrm;
            for (std::size_t o = 0; o < d_in_; ++o) z(i, o) = cache.u(i, o) / nrm;
        }
        return z;
    }

    /// Accumulates parameter gradients from dL/dz of the batch; returns
    /// nothing (one step consumes one backward pass).
    void backward(const Matrix& dz, const Cache& cache) {
        const std::size_t n = dz.rows();
        for (std::size_t i = 0; i < n; ++i) {
            // Through z = u/||u||: du = (g - z (z.g)) / ||u||.
            const double nrm = cache.unorm[i];
            double zg = 0.0;
            for (std::size_t o = 0; o < d_in_; ++o)
                zg += cache.u(i, o) / nrm * dz(i, o);
            std::vector<double> du(d_in_);
            for (std::size_t o = 0; o < d_in_; ++o)
                du[o] = (dz(i, o) - cache.u(i, o) / nrm * zg) / nrm;
            // Through the linear output layer.
            std::vector<double> dh(hidden_, 0.0);
            for (std::size_t o = 0; o < d_in_; ++o) {
                gb2[o] += du[o];
                for (std::size_t a = 0; a < hidden_; ++a) {
                    gw2(o, a) += du[o] * cache.h(i, a);
                    dh[a] += w2(o, a) * du[o];
                }
            }
            // Through tanh and the input layer.
            for (std::size_t a = 0; a < hidden_; ++a) {
                const double da = (1.0 - cache.h(i, a) * cache.h(i, a)) * dh[a];
                gb1[a] += da;
                for (std::size_t j = 0; j < d_in_; ++j) gw1(a, j) += da * cache.x(i, j);
            }
        }
    }

    void begin_step() {
        gw1 = Matrix(hidden_, d_in_);
        gb1.assign(hidden_, 0.0);
        gw2 = Matrix(d_in_, hidden_);
        gb2.assign(d_in_, 0.0);
    }

    void apply_step(double lr, double momentum, double weight_decay) {
        const auto update = [&](Matrix& w, Matrix& v, const Matrix& g) {
            for (std::size_t i = 0; i < w.data().size(); ++i) {
                v.data()[i] = momentum * v.data()[i] + g.data()[i] + weight_decay * w.data()[i];
                w.data()[i] -= lr * v.data()[i];
            }
        };
        const auto update_vec = [&](std::vector<double>& w, std::vector<double>& v,
                                    const std::vector<double>& g) {
            for (std::size_t i = 0; i < w.size(); ++i) {
                v[i] = momentum * v[i] + g[i] + weight_decay * w[i];
                w[i] -= lr * v[i];
            }
        };
        update(w1, vw1_, gw1);
        update_vec(b1, vb1_, gb1);
        update(w2, vw2_, gw2);
        update_vec(b2, vb2_, gb2);
    }

    Matrix encode(const Matrix& x) const {
        Cache cache;
        return forward(x, cache);
    }

    Matrix w1;              // hidden x d_in
    std::vector<double> b1; // hidden
    Matrix w2;              // d_in x hidden
    std::vector<double> b2; // d_in
    Matrix gw1;             // gradient accumulators, filled by backward()
    std::vector<double> gb1;
    Matrix gw2;
    std::vector<double> gb2;

private:
    std::size_t d_in_, hidden_;
    Matrix vw1_;
    std::vector<double> vb1_;
    Matrix vw2_;
    std::vector<double> vb2_;
};

namespace detail {

inline double max_abs(const Matrix& m) {
    double v = 0.0;
    for (double x : m.data()) v = std::max(v, std::fabs(x));
    return v;
}

} // namespace detail

/// Trains embeddings on the hypersphere with SGD (momentum, weight decay,
/// scheduled learning rate) under the configured contrastive loss.
///
/// The free-embedding-table encoder keeps one learnable unit vector per
/// train item: batch gradients accumulate into the sampled rows, the step
/// updates raw coordinates, and rows are projected back to the sphere.
/// Test items get read-out embeddings (renormalized mean of the learned
/// vectors of their feature-space nearest train items). The nonlinear-map
/// encoder backpropagates through a one-hidden-layer network whose output
/// is normalized in the forward pass, and encodes test items directly.
inline TrainResult train(const TrainConfig& cfg, const Dataset& data) {
    cfg.validate();
    const double aug =
        cfg.aug_sigma >= 0.0 ? cfg.aug_sigma : data.spec.within_class_noise / 2.0;
    const Temperature tau(cfg.tau);

    BatchStream stream(data.train_x, data.train_y, cfg.batch_size, aug, cfg.seed, 1);
    const std::size_t batches = stream.batches_per_epoch();
    if (batches == 0) throw validation_error("train: batch_size exceeds the train set");

    TrainResult result;
    result.metrics.epoch_loss.reserve(cfg.epochs);

    if (cfg.encoder == EncoderKind::embedding_table) {
        Matrix table = data.train_x; // unit rows by construction
        Matrix velocity(table.rows(), table.cols());
        for (std::size_t epoch = 0; epoch < cfg.epochs; ++epoch) {
            const double lr = cfg.learning_rate * lr_factor(cfg.schedule, epoch, cfg.epochs);
            double loss_acc = 0.0;
            for (std::size_t b = 0; b < batches; ++b) {
                const Batch batch = stream.next();
                Matrix zraw(cfg.batch_size, table.cols());
                for (std::size_t i = 0; i < batch.items.size(); ++i) {
                    auto src = table.row(batch.items[i]);
                    std::copy(src.begin(), src.end(), zraw.row(2 * i).begin());
                    std::copy(src.begin(), src.end(), zraw.row(2 * i + 1).begin());
                }
                const EmbeddingMatrix z(zraw);
                const auto [loss_value, grad] =
                    batch_loss_and_gradient(cfg.loss, z, LabelVector{batch.labels}, tau);
                if (!std::isfinite(loss_value))
                    throw training_error("train: non-finite loss at epoch " +
                                         std::to_string(epoch) + ", batch " + std::to_string(b) +
                                         ", max logit " +
                                         std::to_string(detail::max_abs(zraw) / cfg.tau));
                loss_acc += loss_value;
                if (lr == 0.0) continue; // null optimizer leaves rows bit-identical
                for (std::size_t i = 0; i < batch.items.size(); ++i) {
                    const std::size_t item = batch.items[i];
                    auto w = table.row(item);
                    auto v = velocity.row(item);
                    auto g0 = grad.row(2 * i);
                    auto g1 = grad.row(2 * i + 1);
                    for (std::size_t c = 0; c < w.size(); ++c) {
                        const double g = g0[c] + g1[c] + cfg.weight_decay * w[c];
                        v[c] = cfg.momentum * v[c] + g;
                        w[c] -= lr * v[c];
                    }
                    double nrm = norm2(w);
                    if (!(nrm > 0.0) || !std::isfinite(nrm))
                        throw training_error("train: embedding row collapsed at epoch " +
                                             std::to_string(epoch));
                    for (double& x : w) x /= nrm;
                }
            }
            result.metrics.epoch_loss.push_back(loss_acc / static_cast<double>(batches));
        }
        result.train_embeddings = table;
        result.test_embeddings =
            detail::table_readout(data.train_x, table, data.test_x, cfg.readout_neighbors);
    } else {
        Rng init_rng(cfg.seed, 2);
        NonlinearMapEncoder enc(data.train_x.cols(), cfg.mlp_hidden, init_rng);
        for (std::size_t epoch = 0; epoch < cfg.epochs; ++epoch) {
            const double lr = cfg.learning_rate * lr_factor(cfg.schedule, epoch, cfg.epochs);
            double loss_acc = 0.0;
            for (std::size_t b = 0; b < batches; ++b) {
                const Batch batch = stream.next();
                NonlinearMapEncoder::Cache cache;
                const Matrix zraw = enc.forward(batch.views, cache);
                const EmbeddingMatrix z(zraw);
                const auto [loss_value, grad] =
                    batch_loss_and_gradient(cfg.loss, z, LabelVector{batch.labels}, tau);
                if (!std::isfinite(loss_value))
                    throw training_error("train: non-finite loss at epoch " +
                                         std::to_string(epoch) + ", batch " + std::to_string(b) +
                                         ", max logit " +
                                         std::to_string(detail::max_abs(zraw) / cfg.tau));
                loss_acc += loss_value;
                enc.begin_step();
                enc.backward(grad, cache);
                enc.apply_step(lr, cfg.momentum, cfg.weight_decay);
            }
            result.metrics.epoch_loss.push_back(loss_acc / static_cast<double>(batches));
        }
        result.train_embeddings = enc.encode(data.train_x);
        result.test_embeddings = enc.encode(data.test_x);
    }

    result.metrics.margins = margin_report(result.train_embeddings, data.train_y,
                                           result.test_embeddings, data.test_y, cfg.hist_bins);
    for (std::size_t k : cfg.knn_ks) {
        if (k > result.train_embeddings.rows()) continue;
        const KnnResult knn = weighted_knn(result.train_embeddings, data.train_y,
                                           result.test_embeddings, k, &data.test_y);
        result.metrics.knn_accuracy[k] = knn.accuracy;
    }
    return result;
}

} // namespace sincere
