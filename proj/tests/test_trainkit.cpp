#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <set>
#include <vector>

#include "sincere/trainkit.hpp"
#include "test_util.hpp"

using namespace sincere;
using testutil::random_unit_rows;

namespace {

SyntheticDatasetSpec small_spec(std::size_t k = 2, std::uint64_t seed = 1) {
    SyntheticDatasetSpec spec;
    spec.k_classes = k;
    spec.per_class = 30;
    spec.feature_dim = 8;
    spec.class_separation = 1.2;
    spec.within_class_noise = 0.15;
    spec.seed = seed;
    return spec;
}

TrainConfig small_config(LossKind kind, std::uint64_t seed = 1) {
    TrainConfig cfg;
    cfg.loss = kind;
    cfg.epochs = 40;
    cfg.batch_size = 16;
    cfg.tau = 0.1;
    cfg.learning_rate = 0.5;
    cfg.schedule.warmup_epochs = 3;
    cfg.seed = seed;
    cfg.knn_ks = {1};
    return cfg;
}

} // namespace

TEST_CASE("generate_dataset: shapes, labels and unit rows") {
    const Dataset ds = generate_dataset(small_spec());
    CHECK(ds.train_x.rows() == 2 * 27); // 90% of 30 per class
    CHECK(ds.test_x.rows() == 2 * 3);
    CHECK(ds.train_y.size() == ds.train_x.rows());
    for (std::size_t i = 0; i < ds.train_x.rows(); ++i)
        CHECK(std::fabs(norm2(ds.train_x.row(i)) - 1.0) <= 1e-12);
    const std::set<int> classes(ds.train_y.begin(), ds.train_y.end());
    CHECK(classes.size() == 2);
}

TEST_CASE("generate_dataset: identical seed replays bit-identically") {
    const Dataset a = generate_dataset(small_spec(2, 9));
    const Dataset b = generate_dataset(small_spec(2, 9));
    CHECK(a.train_x == b.train_x);
    CHECK(a.test_x == b.test_x);
    CHECK(a.train_y == b.train_y);
    const Dataset c = generate_dataset(small_spec(2, 10));
    CHECK(a.train_x.data() != c.train_x.data());
}

TEST_CASE("generate_dataset: zero noise collapses classes onto their means") {
    auto spec = small_spec();
    spec.within_class_noise = 0.0;
    const Dataset ds = generate_dataset(spec);
    for (std::size_t i = 1; i < ds.train_x.rows(); ++i) {
        if (ds.train_y[i] != ds.train_y[0]) continue;
        for (std::size_t c = 0; c < ds.train_x.cols(); ++c)
            CHECK(ds.train_x(i, c) == ds.train_x(0, c));
    }
}

TEST_CASE("generate_dataset: wide separation is linearly separable by construction") {
    auto spec = small_spec();
    spec.class_separation = 1.4;
    spec.within_class_noise = 0.1;
    const Dataset ds = generate_dataset(spec);
    // Every sample is closer (in cosine) to its own class's samples than
    // to the other's; the feature 1-NN classifier is already perfect.
    const KnnResult knn = weighted_knn(ds.train_x, ds.train_y, ds.test_x, 1, &ds.test_y);
    CHECK(knn.accuracy == 1.0);
}

TEST_CASE("generate_dataset: infeasible placements are rejected") {
    auto spec = small_spec();
    spec.class_separation = 1.5; // > sqrt(2)
    CHECK_THROWS_AS(generate_dataset(spec), validation_error);
    auto spec2 = small_spec(8);
    spec2.feature_dim = 8; // needs k + 1 <= d
    CHECK_THROWS_AS(generate_dataset(spec2), validation_error);
    auto spec3 = small_spec();
    spec3.per_class = 1;
    CHECK_THROWS_AS(generate_dataset(spec3), validation_error);
}

TEST_CASE("BatchStream: every sampled item appears exactly twice with its label") {
    const Dataset ds = generate_dataset(small_spec());
    BatchStream stream(ds.train_x, ds.train_y, 12, 0.05, 7);
    for (int rep = 0; rep < 20; ++rep) {
        const Batch b = stream.next();
        CHECK(b.items.size() == 6);
        CHECK(b.views.rows() == 12);
        for (std::size_t i = 0; i < b.items.size(); ++i) {
            CHECK(b.labels[2 * i] == ds.train_y[b.items[i]]);
            CHECK(b.labels[2 * i + 1] == ds.train_y[b.items[i]]);
            CHECK(std::fabs(norm2(b.views.row(2 * i)) - 1.0) <= 1e-12);
        }
        // At least two classes in every batch.
        bool two = false;
        for (int l : b.labels) two = two || l != b.labels[0];
        CHECK(two);
    }
}

TEST_CASE("BatchStream: zero augmentation gives identical views at similarity 1") {
    const Dataset ds = generate_dataset(small_spec());
    BatchStream stream(ds.train_x, ds.train_y, 8, 0.0, 3);
    const Batch b = stream.next();
    for (std::size_t i = 0; i < b.items.size(); ++i) {
        CHECK(dot(b.views.row(2 * i), b.views.row(2 * i + 1)) ==
              doctest::Approx(1.0).epsilon(1e-12));
        for (std::size_t c = 0; c < b.views.cols(); ++c)
            CHECK(b.views(2 * i, c) == b.views(2 * i + 1, c));
    }
}

TEST_CASE("BatchStream: seeded streams replay identically") {
    const Dataset ds = generate_dataset(small_spec());
    BatchStream a(ds.train_x, ds.train_y, 8, 0.05, 17);
    BatchStream b(ds.train_x, ds.train_y, 8, 0.05, 17);
    for (int rep = 0; rep < 30; ++rep) {
        const Batch ba = a.next();
        const Batch bb = b.next();
        CHECK(ba.items == bb.items);
        CHECK(ba.views == bb.views);
    }
}

TEST_CASE("BatchStream rejects degenerate setups") {
    const Dataset ds = generate_dataset(small_spec());
    CHECK_THROWS_AS(BatchStream(ds.train_x, ds.train_y, 7, 0.05, 1), validation_error);
    CHECK_THROWS_AS(BatchStream(ds.train_x, ds.train_y, 2, 0.05, 1), validation_error);
    const std::vector<int> one_class(ds.train_y.size(), 0);
    CHECK_THROWS_AS(BatchStream(ds.train_x, one_class, 8, 0.05, 1), degenerate_batch_error);
}

TEST_CASE("lr_factor: warmup ramps to 1, cosine decays to the floor") {
    LrSchedule s;
    s.kind = LrSchedule::Kind::cosine_warmup;
    s.warmup_epochs = 5;
    s.floor_fraction = 0.001;
    const std::size_t total = 100;
    CHECK(lr_factor(s, 4, total) == doctest::Approx(1.0));
    CHECK(lr_factor(s, 0, total) == doctest::Approx(0.001 + 0.999 * 0.2));
    CHECK(lr_factor(s, total - 1, total) == doctest::Approx(0.001));
    for (std::size_t e = 0; e < total; ++e) {
        const double f = lr_factor(s, e, total);
        CHECK(f >= 0.001 - 1e-12);
        CHECK(f <= 1.0 + 1e-12);
    }
    LrSchedule c;
    c.kind = LrSchedule::Kind::constant;
    CHECK(lr_factor(c, 50, total) == 1.0);
}

TEST_CASE("train with zero learning rate is a null optimizer") {
    const Dataset ds = generate_dataset(small_spec());
    TrainConfig cfg = small_config(LossKind::sincere());
    cfg.learning_rate = 0.0;
    cfg.epochs = 5;
    cfg.batch_size = 2 * ds.train_x.rows(); // full batch: same loss each epoch
    cfg.aug_sigma = 0.0;
    const TrainResult out = train(cfg, ds);
    CHECK(out.train_embeddings == ds.train_x); // parameters untouched
    for (double l : out.metrics.epoch_loss)
        CHECK(l == doctest::Approx(out.metrics.epoch_loss.front()).epsilon(1e-12));
}

TEST_CASE("every loss kind descends on the easy two-class dataset") {
    const Dataset ds = generate_dataset(small_spec());
    for (const LossKind kind :
         {LossKind::sincere(), LossKind::supcon(), LossKind::eps_supinfonce(0.25)}) {
        const TrainResult out = train(small_config(kind), ds);
        CHECK(out.metrics.epoch_loss.back() < out.metrics.epoch_loss.front());
    }
}

TEST_CASE("identical config and seed reproduce the run bit-identically") {
    const Dataset ds = generate_dataset(small_spec());
    const TrainConfig cfg = small_config(LossKind::sincere(), 23);
    const TrainResult a = train(cfg, ds);
    const TrainResult b = train(cfg, ds);
    CHECK(a.metrics.epoch_loss == b.metrics.epoch_loss);
    CHECK(a.train_embeddings == b.train_embeddings);
    CHECK(a.test_embeddings == b.test_embeddings);
    CHECK(a.metrics.margins.margin == b.metrics.margins.margin);
}

TEST_CASE("trained embeddings separate the classes") {
    const Dataset ds = generate_dataset(small_spec());
    const TrainResult out = train(small_config(LossKind::sincere()), ds);
    CHECK(out.metrics.margins.margin > 0.5);
    CHECK(out.metrics.knn_accuracy.at(1) >= 0.95);
}

TEST_CASE("the nonlinear-map encoder trains and replays deterministically") {
    const Dataset ds = generate_dataset(small_spec());
    TrainConfig cfg = small_config(LossKind::sincere(), 5);
    cfg.encoder = EncoderKind::nonlinear_map;
    cfg.learning_rate = 0.2;
    const TrainResult a = train(cfg, ds);
    CHECK(a.metrics.epoch_loss.back() < a.metrics.epoch_loss.front());
    const TrainResult b = train(cfg, ds);
    CHECK(a.metrics.epoch_loss == b.metrics.epoch_loss);
    CHECK(a.test_embeddings == b.test_embeddings);
    for (std::size_t i = 0; i < a.test_embeddings.rows(); ++i)
        CHECK(std::fabs(norm2(a.test_embeddings.row(i)) - 1.0) <= 1e-9);
}

TEST_CASE("encoder backprop matches finite differences through the normalization") {
    Rng rng(77);
    NonlinearMapEncoder enc(4, 6, rng);
    const Matrix views = random_unit_rows(8, 4, rng);
    const LabelVector labels{{0, 0, 1, 1, 0, 0, 1, 1}};
    const Temperature tau(0.3);

    const auto loss_of = [&](const NonlinearMapEncoder& e) {
        NonlinearMapEncoder::Cache cache;
        const Matrix z = e.forward(views, cache);
        return batch_loss_raw(LossKind::sincere(), z, labels, tau);
    };

    NonlinearMapEncoder::Cache cache;
    const Matrix z = enc.forward(views, cache);
    const Matrix dz = batch_gradient(LossKind::sincere(), EmbeddingMatrix(z), labels, tau);
    enc.begin_step();
    enc.backward(dz, cache);

    const double h = 1e-6;
    // Spot-check entries from every parameter block.
    for (const auto& [i, j] :
         std::vector<std::pair<std::size_t, std::size_t>>{{0, 0}, {3, 2}, {5, 1}}) {
        NonlinearMapEncoder up = enc, down = enc;
        up.w1(i, j) += h;
        down.w1(i, j) -= h;
        const double fd = (loss_of(up) - loss_of(down)) / (2.0 * h);
        CHECK(enc.gw1(i, j) == doctest::Approx(fd).epsilon(1e-5));
    }
    for (const auto& [i, j] :
         std::vector<std::pair<std::size_t, std::size_t>>{{0, 0}, {2, 5}, {3, 3}}) {
        NonlinearMapEncoder up = enc, down = enc;
        up.w2(i, j) += h;
        down.w2(i, j) -= h;
        const double fd = (loss_of(up) - loss_of(down)) / (2.0 * h);
        CHECK(enc.gw2(i, j) == doctest::Approx(fd).epsilon(1e-5));
    }
    {
        NonlinearMapEncoder up = enc, down = enc;
        up.b1[2] += h;
        down.b1[2] -= h;
        const double fd = (loss_of(up) - loss_of(down)) / (2.0 * h);
        CHECK(enc.gb1[2] == doctest::Approx(fd).epsilon(1e-5));
    }
    {
        NonlinearMapEncoder up = enc, down = enc;
        up.b2[1] += h;
        down.b2[1] -= h;
        const double fd = (loss_of(up) - loss_of(down)) / (2.0 * h);
        CHECK(enc.gb2[1] == doctest::Approx(fd).epsilon(1e-5));
    }
}

TEST_CASE("margin_report: one point per class with test = train") {
    Matrix z(2, 4);
    z(0, 0) = 1.0;
    z(1, 1) = 1.0;
    const std::vector<int> y{0, 1};
    const MarginReport r = margin_report(z, y, z, y, 10);
    CHECK(r.median_target_nn == 1.0); // self-match
    CHECK(r.median_noise_nn == doctest::Approx(0.0));
    CHECK(r.margin == doctest::Approx(1.0));
}

TEST_CASE("margin_report: random embeddings have margin near zero") {
    Rng rng(88);
    const Matrix train = random_unit_rows(300, 16, rng);
    const Matrix test = random_unit_rows(150, 16, rng);
    std::vector<int> train_y(300), test_y(150);
    for (std::size_t i = 0; i < 300; ++i) train_y[i] = static_cast<int>(i % 2);
    for (std::size_t i = 0; i < 150; ++i) test_y[i] = static_cast<int>(i % 2);
    const MarginReport r = margin_report(train, train_y, test, test_y, 20);
    CHECK(std::fabs(r.margin) < 0.1);
    // Histogram counts cover every test point on both sides.
    std::size_t total = 0;
    for (std::size_t c : r.aggregate.target_nn.counts) total += c;
    CHECK(total == 150);
}

TEST_CASE("margin_report: per-class entries recompute the pooled metric on that class") {
    const Dataset ds = generate_dataset(small_spec(2, 31));
    const MarginReport pooled = margin_report(ds.train_x, ds.train_y, ds.test_x, ds.test_y, 20);
    REQUIRE(pooled.per_class.size() == 2);
    double weighted = 0.0;
    std::size_t count = 0;
    for (const auto& pc : pooled.per_class) {
        REQUIRE(pc.available);
        // Rebuild the class's test subset and recompute independently.
        std::vector<std::size_t> idx;
        for (std::size_t i = 0; i < ds.test_y.size(); ++i)
            if (ds.test_y[i] == pc.label) idx.push_back(i);
        Matrix sub(idx.size(), ds.test_x.cols());
        std::vector<int> sub_y(idx.size(), pc.label);
        for (std::size_t i = 0; i < idx.size(); ++i) {
            auto src = ds.test_x.row(idx[i]);
            std::copy(src.begin(), src.end(), sub.row(i).begin());
        }
        const MarginReport on_class = margin_report(ds.train_x, ds.train_y, sub, sub_y, 20);
        CHECK(pc.margin == doctest::Approx(on_class.margin).epsilon(1e-12));
        weighted += pc.margin * static_cast<double>(pc.test_count);
        count += pc.test_count;
    }
    // Weighted per-class mean sits near the pooled value on this symmetric data.
    CHECK(std::fabs(weighted / static_cast<double>(count) - pooled.margin) < 0.05);
}

TEST_CASE("margin_report: class absent from the train set is marked unavailable") {
    Matrix train(2, 3);
    train(0, 0) = 1.0;
    train(1, 1) = 1.0;
    const std::vector<int> train_y{0, 1};
    Matrix test(3, 3);
    test(0, 0) = 1.0;
    test(1, 1) = 1.0;
    test(2, 2) = 1.0;
    const std::vector<int> test_y{0, 1, 7}; // class 7 never trained
    const MarginReport r = margin_report(train, train_y, test, test_y, 10);
    bool found_unavailable = false;
    for (const auto& pc : r.per_class)
        if (pc.label == 7) {
            CHECK_FALSE(pc.available);
            found_unavailable = true;
        }
    CHECK(found_unavailable);
}

TEST_CASE("weighted_knn: exact match wins at k = 1") {
    Rng rng(99);
    const Matrix train = random_unit_rows(20, 5, rng);
    std::vector<int> train_y(20);
    for (std::size_t i = 0; i < 20; ++i) train_y[i] = static_cast<int>(i % 3);
    const KnnResult r = weighted_knn(train, train_y, train, 1, &train_y);
    CHECK(r.accuracy == 1.0);
    CHECK(r.predictions == train_y);
}

TEST_CASE("weighted_knn: similarity weights can flip a 3-2 majority") {
    // Three train points of class 1 at cosine 0.5, two of class 2 at 0.9:
    // majority says 1, similarity-weighted votes say 2 (1.8 > 1.5).
    Matrix train(5, 3);
    for (std::size_t i = 0; i < 3; ++i) {
        train(i, 0) = 0.5;
        train(i, 1) = std::sqrt(1.0 - 0.25);
    }
    for (std::size_t i = 3; i < 5; ++i) {
        train(i, 0) = 0.9;
        train(i, 1) = std::sqrt(1.0 - 0.81);
    }
    const std::vector<int> train_y{1, 1, 1, 2, 2};
    Matrix test(1, 3);
    test(0, 0) = 1.0;
    const KnnResult weighted = weighted_knn(train, train_y, test, 5);
    CHECK(weighted.predictions[0] == 2);
}

TEST_CASE("weighted_knn: vote ties resolve to the smallest class id") {
    Matrix train(2, 2);
    train(0, 0) = 1.0;
    train(1, 0) = 1.0;
    const std::vector<int> train_y{5, 3};
    Matrix test(1, 2);
    test(0, 0) = 1.0;
    const KnnResult r = weighted_knn(train, train_y, test, 2);
    CHECK(r.predictions[0] == 3);
    CHECK_THROWS_AS(weighted_knn(train, train_y, test, 0), validation_error);
    CHECK_THROWS_AS(weighted_knn(train, train_y, test, 3), validation_error);
}

TEST_CASE("train config validation") {
    const Dataset ds = generate_dataset(small_spec());
    TrainConfig cfg = small_config(LossKind::sincere());
    cfg.batch_size = 7;
    CHECK_THROWS_AS(train(cfg, ds), validation_error);
    cfg = small_config(LossKind::sincere());
    cfg.momentum = 1.0;
    CHECK_THROWS_AS(train(cfg, ds), validation_error);
    cfg = small_config(LossKind::sincere());
    cfg.tau = 0.0;
    CHECK_THROWS_AS(train(cfg, ds), validation_error);
}
