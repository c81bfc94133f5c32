#pragma once

#include <chrono>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <iostream>
#include <map>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "sincere/bounds.hpp"
#include "sincere/config.hpp"
#include "sincere/core.hpp"
#include "sincere/genmodel.hpp"
#include "sincere/gradients.hpp"
#include "sincere/losses.hpp"
#include "sincere/manifest.hpp"
#include "sincere/trainkit.hpp"

namespace sincere::cli {

namespace fs = std::filesystem;

/// Exit codes shared by every subcommand.
inline constexpr int kExitOk = 0;
inline constexpr int kExitViolation = 1;
inline constexpr int kExitConfig = 2;
inline constexpr int kExitIo = 3;

namespace detail {

inline Matrix random_unit_rows(std::size_t n, std::size_t d, Rng& rng) {
    Matrix m(n, d);
    for (std::size_t i = 0; i < n; ++i) {
        double nrm = 0.0;
        do {
            for (std::size_t j = 0; j < d; ++j) m(i, j) = rng.normal();
            nrm = norm2(m.row(i));
        } while (nrm < 1e-8);
        for (std::size_t j = 0; j < d; ++j) m(i, j) /= nrm;
    }
    return m;
}

inline std::vector<int> random_labels(std::size_t n, std::size_t k, Rng& rng) {
    std::vector<int> labels(n);
    for (;;) {
        for (auto& l : labels) l = static_cast<int>(rng.uniform_index(k));
        for (std::size_t i = 1; i < n; ++i)
            if (labels[i] != labels[0]) return labels;
    }
}

struct RandomPair {
    Matrix z;
    LabelVector labels;
    IndexPartition part;
    std::size_t p = 0;
    double tau = 0.2;
};

// Draws a random batch with a usable (anchor, positive) pair.
inline RandomPair random_pair(Rng& rng, std::size_t max_n, std::size_t max_d) {
    for (;;) {
        RandomPair rp;
        const std::size_t n = 4 + rng.uniform_index(max_n - 3);
        const std::size_t d = 2 + rng.uniform_index(max_d - 1);
        rp.z = random_unit_rows(n, d, rng);
        rp.labels = LabelVector{random_labels(n, 3, rng)};
        const std::size_t anchor = rng.uniform_index(n);
        try {
            rp.part = partition_for_anchor(rp.labels, anchor);
        } catch (const degenerate_batch_error&) {
            continue;
        }
        if (rp.part.positives.empty()) continue;
        rp.p = rp.part.positives[rng.uniform_index(rp.part.positives.size())];
        rp.tau = 0.1 + 0.4 * rng.uniform();
        return rp;
    }
}

inline double fd_vs(const std::function<double(const Matrix&)>& f, const Matrix& z,
                    std::size_t wrt, std::span<const double> analytic) {
    const auto fd = finite_difference_gradient(f, z, wrt, 1e-5);
    return gradient_relative_error(analytic, fd);
}

inline Density density_from_config(const Config& cfg, const std::string& prefix) {
    const std::string family = cfg.get_string(prefix + "_family", "gaussian");
    if (family == "gaussian") {
        const auto mean = cfg.get_double_list(prefix + "_mean", {0.0});
        if (cfg.has(prefix + "_sigmas"))
            return Density::diagonal_gaussian(mean, cfg.get_double_list(prefix + "_sigmas"));
        return Density::isotropic_gaussian(mean, cfg.get_double(prefix + "_sigma", 1.0));
    }
    if (family == "categorical") {
        if (!cfg.has(prefix + "_pmf"))
            throw config_error("config: categorical density needs " + prefix + "_pmf");
        return Density::categorical(cfg.get_double_list(prefix + "_pmf"));
    }
    throw config_error("config: unknown density family '" + family + "' for " + prefix);
}

inline LossKind loss_kind_from_config(const Config& cfg) {
    const std::string name = cfg.get_string("loss", "sincere");
    if (name == "sincere") return LossKind::sincere();
    if (name == "supcon") return LossKind::supcon();
    if (name == "infonce") return LossKind::info_nce();
    if (name == "eps_supinfonce")
        return LossKind::eps_supinfonce(cfg.get_double("epsilon", kEpsilonSearchGrid[0]));
    throw config_error("config: unknown loss '" + name + "'");
}

inline nlohmann::json margin_report_to_json(const MarginReport& r) {
    nlohmann::json j;
    j["margin"] = r.margin;
    j["median_target_nn"] = r.median_target_nn;
    j["median_noise_nn"] = r.median_noise_nn;
    nlohmann::json per_class = nlohmann::json::array();
    for (const auto& pc : r.per_class) {
        nlohmann::json c;
        c["label"] = pc.label;
        c["available"] = pc.available;
        c["test_count"] = pc.test_count;
        if (pc.available) {
            c["margin"] = pc.margin;
            c["median_target_nn"] = pc.median_target_nn;
            c["median_noise_nn"] = pc.median_noise_nn;
        }
        per_class.push_back(c);
    }
    j["per_class"] = per_class;
    return j;
}

inline void write_histogram_csv(const fs::path& path, const std::string& run_id,
                                const MarginHistograms& h) {
    std::ostringstream out;
    out << "# run_id " << run_id << "\n";
    out << "bin_left,bin_right,count_target_nn,count_noise_nn\n";
    for (std::size_t b = 0; b < h.target_nn.counts.size(); ++b)
        out << format_double(h.target_nn.bin_left(b)) << ','
            << format_double(h.target_nn.bin_right(b)) << ',' << h.target_nn.counts[b] << ','
            << h.noise_nn.counts[b] << "\n";
    write_text_file(path, out.str());
}

} // namespace detail

/// Analytic-vs-finite-difference sweep plus the coefficient-range and
/// repulsion-witness assertions. Exit 1 on any violation.
inline int cmd_gradcheck(const Config& cfg, const fs::path& out_dir, const std::string& run_id,
                         std::vector<std::string>& outputs) {
    cfg.restrict_keys({"seed", "batches", "range_batches", "max_n", "max_d", "tolerance",
                       "inject_fault", "out"});
    const std::uint64_t seed = cfg.get_u64("seed", 0);
    const std::size_t batches = cfg.get_u64("batches", 100);
    const std::size_t range_batches = cfg.get_u64("range_batches", 1000);
    const std::size_t max_n = std::max<std::size_t>(5, cfg.get_u64("max_n", 16));
    const std::size_t max_d = std::max<std::size_t>(2, cfg.get_u64("max_d", 8));
    const double tolerance = cfg.get_double("tolerance", 1e-6);
    const std::string fault = cfg.get_string("inject_fault", "");
    if (!fault.empty() && fault != "sign_flip")
        throw config_error("config: inject_fault must be empty or 'sign_flip'");

    Rng rng(seed);
    double err_pos = 0.0, err_anchor = 0.0, err_supcon = 0.0, err_batch = 0.0;

    for (std::size_t b = 0; b < batches; ++b) {
        const auto rp = detail::random_pair(rng, max_n, max_d);
        const EmbeddingMatrix emb(rp.z);
        const Temperature tau(rp.tau);

        // SINCERE positive-side pair gradient.
        auto analytic = sincere_grad_wrt_positive(emb, rp.part, rp.p, tau).vector;
        if (fault == "sign_flip") analytic[0] = -analytic[0];
        err_pos = std::max(
            err_pos, detail::fd_vs(
                         [&](const Matrix& m) {
                             const auto sim = SimilarityMatrix::unchecked(gram_matrix(m));
                             return sincere_pair_loss(sim, rp.part, rp.p, tau);
                         },
                         rp.z, rp.p, analytic));

        // SINCERE anchor-side gradient (mean over the anchor's positives,
        // with the anchor appearing in every logit).
        const std::size_t t = rp.part.anchor;
        const auto anchor_grad = sincere_grad_wrt_anchor(emb, rp.part, tau).vector;
        err_anchor = std::max(
            err_anchor,
            detail::fd_vs(
                [&](const Matrix& m) {
                    const auto sim = SimilarityMatrix::unchecked(gram_matrix(m));
                    double acc = 0.0;
                    for (std::size_t p : rp.part.positives)
                        acc += sincere_pair_loss(sim, partition_for_anchor(rp.labels, p), t, tau);
                    return acc / static_cast<double>(rp.part.positives.size());
                },
                rp.z, t, anchor_grad));

        // SupCon: per-pair slices reassembled into the grouped derivative.
        const auto part_p = partition_for_anchor(rp.labels, rp.p);
        std::vector<double> total(rp.z.cols(), 0.0);
        bool noise_added = false;
        for (std::size_t s : part_p.positives) {
            const auto part_s = partition_for_anchor(rp.labels, s);
            const PairGradient slice = supcon_grad_wrt_positive(emb, part_s, rp.p, tau);
            for (std::size_t c = 0; c < rp.z.cols(); ++c)
                total[c] += slice.attraction_coefficient * rp.z(s, c);
            if (!noise_added) {
                for (std::size_t c = 0; c < rp.z.cols(); ++c)
                    total[c] += slice.vector[c] - slice.attraction_coefficient * rp.z(s, c);
                noise_added = true;
            }
        }
        err_supcon = std::max(
            err_supcon,
            detail::fd_vs(
                [&](const Matrix& m) {
                    const auto sim = SimilarityMatrix::unchecked(gram_matrix(m));
                    double acc = 0.0;
                    for (std::size_t s : part_p.positives)
                        acc += supcon_pair_loss(sim, partition_for_anchor(rp.labels, s), rp.p,
                                                tau);
                    return acc / static_cast<double>(part_p.positives.size());
                },
                rp.z, rp.p, total));
    }

    // Full batch gradient against entry-wise finite differences.
    for (int rep = 0; rep < 3; ++rep) {
        const std::size_t n = 12, d = 4;
        const Matrix z = detail::random_unit_rows(n, d, rng);
        const LabelVector labels{detail::random_labels(n, 3, rng)};
        const Temperature tau(0.2);
        for (const LossKind kind : {LossKind::sincere(), LossKind::supcon()}) {
            const Matrix grad =
                batch_gradient(kind, EmbeddingMatrix(z), labels, tau, BatchMode::lenient);
            for (std::size_t row = 0; row < n; ++row)
                err_batch = std::max(
                    err_batch, detail::fd_vs(
                                   [&](const Matrix& m) {
                                       return batch_loss_raw(kind, m, labels, tau,
                                                             BatchMode::lenient);
                                   },
                                   z, row, grad.row(row)));
        }
    }

    // Coefficient ranges over many random batches.
    double sincere_factor_min = 0.0, sincere_factor_max = -1.0;
    bool ranges_ok = true;
    for (std::size_t b = 0; b < range_batches; ++b) {
        const auto rp = detail::random_pair(rng, max_n, max_d);
        const EmbeddingMatrix emb(rp.z);
        const Temperature tau(rp.tau);
        const double sf = sincere_grad_wrt_positive(emb, rp.part, rp.p, tau).attraction_factor;
        sincere_factor_min = std::min(sincere_factor_min, sf);
        sincere_factor_max = std::max(sincere_factor_max, sf);
        ranges_ok = ranges_ok && sf >= -1.0 && sf <= 0.0;
        const double psize = static_cast<double>(rp.part.positives.size());
        const double cf = supcon_grad_wrt_positive(emb, rp.part, rp.p, tau).attraction_factor;
        ranges_ok = ranges_ok && cf >= -1.0 / psize && cf <= 1.0 - 1.0 / psize;
    }

    // Constructed intra-class repulsion witness: |P| = 4, dominant s(S,p).
    Matrix wz(8, 4);
    wz(0, 0) = 1.0;
    wz(1, 0) = 1.0;
    for (std::size_t i = 2; i < 5; ++i) wz(i, 1) = 1.0;
    for (std::size_t i = 5; i < 8; ++i) wz(i, 0) = -1.0;
    const LabelVector wl{{0, 0, 0, 0, 0, 1, 1, 1}};
    const auto wpart = partition_for_anchor(wl, 0);
    const double witness_supcon =
        supcon_grad_wrt_positive(EmbeddingMatrix(wz), wpart, 1, Temperature(0.1))
            .attraction_factor;
    const double witness_sincere =
        sincere_grad_wrt_positive(EmbeddingMatrix(wz), wpart, 1, Temperature(0.1))
            .attraction_factor;

    const bool fd_ok = err_pos <= tolerance && err_anchor <= tolerance &&
                       err_supcon <= tolerance && err_batch <= tolerance;
    const bool witness_ok = witness_supcon > 0.0 && witness_sincere <= 0.0;
    const bool pass = fd_ok && ranges_ok && witness_ok;

    nlohmann::json report;
    report["run_id"] = run_id;
    report["tolerance"] = tolerance;
    report["batches"] = batches;
    report["range_batches"] = range_batches;
    report["max_rel_err_sincere_positive"] = err_pos;
    report["max_rel_err_sincere_anchor"] = err_anchor;
    report["max_rel_err_supcon_grouped"] = err_supcon;
    report["max_rel_err_batch_gradient"] = err_batch;
    report["finite_difference_ok"] = fd_ok;
    report["coefficient_ranges_ok"] = ranges_ok;
    report["observed_sincere_factor_min"] = sincere_factor_min;
    report["observed_sincere_factor_max"] = sincere_factor_max;
    report["repulsion_witness"] = {
        {"n", 8},          {"p_size", 4},
        {"tau", 0.1},      {"supcon_factor", witness_supcon},
        {"sincere_factor", witness_sincere},
        {"description", "anchor aligned with p, other positives orthogonal, noise antipodal"}};
    report["pass"] = pass;
    write_json_file(out_dir / "gradcheck_report.json", report);
    outputs.push_back("gradcheck_report.json");
    return pass ? kExitOk : kExitViolation;
}

/// Closed-form posterior vs brute-force enumeration over a
/// grid of (n, t) with Gaussian and categorical density pairs.
inline int cmd_oracle(const Config& cfg, const fs::path& out_dir, const std::string& run_id,
                      std::vector<std::string>& outputs) {
    cfg.restrict_keys({"seed", "max_n", "repeats", "out"});
    const std::uint64_t seed = cfg.get_u64("seed", 0);
    const std::size_t max_n = cfg.get_u64("max_n", 8);
    const std::size_t repeats = std::max<std::uint64_t>(1, cfg.get_u64("repeats", 2));
    if (max_n > 12)
        throw config_error("config: max_n = " + std::to_string(max_n) +
                           " exceeds the enumeration guard (max 12)");
    if (max_n < 2) throw config_error("config: max_n must be at least 2");
    constexpr double kTol = 1e-12;

    Rng rng(seed);
    double worst = 0.0;
    std::size_t instances = 0;
    nlohmann::json cases = nlohmann::json::array();
    for (std::size_t n = 2; n <= max_n; ++n) {
        for (std::size_t t = 1; t < n; ++t) {
            for (std::size_t rep = 0; rep < repeats; ++rep) {
                for (const bool categorical : {false, true}) {
                    Density target = categorical
                                         ? Density::categorical([&] {
                                               std::vector<double> pmf(5);
                                               double s = 0.0;
                                               for (auto& p : pmf) s += p = 0.05 + rng.uniform();
                                               for (auto& p : pmf) p /= s;
                                               double acc = 0.0;
                                               for (std::size_t i = 0; i + 1 < pmf.size(); ++i)
                                                   acc += pmf[i];
                                               pmf.back() = 1.0 - acc;
                                               return pmf;
                                           }())
                                         : Density::isotropic_gaussian(
                                               {2.0 * rng.normal(), 2.0 * rng.normal()},
                                               0.5 + rng.uniform());
                    Density noise = categorical
                                        ? Density::categorical([&] {
                                              std::vector<double> pmf(5);
                                              double s = 0.0;
                                              for (auto& p : pmf) s += p = 0.05 + rng.uniform();
                                              for (auto& p : pmf) p /= s;
                                              double acc = 0.0;
                                              for (std::size_t i = 0; i + 1 < pmf.size(); ++i)
                                                  acc += pmf[i];
                                              pmf.back() = 1.0 - acc;
                                              return pmf;
                                          }())
                                        : Density::isotropic_gaussian(
                                              {2.0 * rng.normal(), 2.0 * rng.normal()},
                                              0.5 + rng.uniform());
                    const ModelSample s = sample_supervised(n, t, target, noise, rng);
                    const auto closed = posterior_supervised(s.data, s.positives, target, noise);
                    const auto brute =
                        brute_force_posterior(s.data, t, target, noise).conditional(s.positives);
                    double dev = 0.0;
                    for (std::size_t i = 0; i < closed.probabilities.size(); ++i)
                        dev = std::max(dev, std::fabs(closed.probabilities[i] -
                                                      brute.probabilities[i]));
                    worst = std::max(worst, dev);
                    ++instances;
                    if (dev > kTol) {
                        nlohmann::json c;
                        c["n"] = n;
                        c["t"] = t;
                        c["family"] = categorical ? "categorical" : "gaussian";
                        c["deviation"] = dev;
                        cases.push_back(c);
                    }
                }
            }
        }
    }

    const bool pass = worst <= kTol;
    nlohmann::json report;
    report["run_id"] = run_id;
    report["tolerance"] = kTol;
    report["max_n"] = max_n;
    report["instances"] = instances;
    report["max_abs_deviation"] = worst;
    report["violations"] = cases;
    report["pass"] = pass;
    write_json_file(out_dir / "oracle_report.json", report);
    outputs.push_back("oracle_report.json");
    std::printf("oracle: %zu instances, max deviation %.3e (tolerance %.0e)\n", instances, worst,
                kTol);
    return pass ? kExitOk : kExitViolation;
}

/// KL-bound verification: MC ideal-loss estimates against the closed-form
/// right-hand sides, the |N| monotonicity trend, and the symbolic
/// SupCon-vs-SINCERE RHS grid.
inline int cmd_bound(const Config& cfg, const fs::path& out_dir, const std::string& run_id,
                     std::vector<std::string>& outputs) {
    cfg.restrict_keys({"seed", "samples", "t", "n_grid", "mu_grid", "target_family",
                       "target_mean", "target_sigma", "target_sigmas", "target_pmf",
                       "noise_family", "noise_mean", "noise_sigma", "noise_sigmas", "noise_pmf",
                       "out"});
    const std::uint64_t seed = cfg.get_u64("seed", 0);
    const std::size_t samples = cfg.get_u64("samples", 100000);
    const std::size_t t = std::max<std::uint64_t>(1, cfg.get_u64("t", 2));
    const auto n_grid = cfg.get_u64_list("n_grid", {6, 10});

    struct PairSpec {
        std::string name;
        Density target;
        Density noise;
    };
    std::vector<PairSpec> pairs;
    if (cfg.has("target_family") || cfg.has("target_mean") || cfg.has("target_pmf")) {
        pairs.push_back({"configured", detail::density_from_config(cfg, "target"),
                         detail::density_from_config(cfg, "noise")});
    } else {
        for (const double mu : cfg.get_double_list("mu_grid", {0.0, 0.5, 1.0, 2.0}))
            pairs.push_back({"gaussian_mu_" + format_double(mu),
                             Density::isotropic_gaussian({mu}, 1.0),
                             Density::isotropic_gaussian({0.0}, 1.0)});
    }

    bool pass = true;
    nlohmann::json entries = nlohmann::json::array();
    std::uint64_t stream = 0;
    for (const auto& pair : pairs) {
        double prev_mean = -std::numeric_limits<double>::infinity();
        double prev_se = 0.0;
        for (const std::uint64_t n64 : n_grid) {
            const std::size_t n = static_cast<std::size_t>(n64);
            if (t >= n) throw config_error("config: need t < n for every n in n_grid");
            const double kl = symmetrized_kl(pair.target, pair.noise);
            const McEstimate est =
                ideal_loss_mc(n, t, pair.target, pair.noise, samples, seed + 7919 * stream);
            std::optional<McEstimate> supcon_est;
            if (t >= 2)
                supcon_est = supcon_ideal_loss_mc(n, t, pair.target, pair.noise, samples,
                                                  seed + 7919 * stream);
            ++stream;
            const BoundReport r = check_bounds(n - t, t - 1, kl, est, supcon_est);

            nlohmann::json e;
            e["pair"] = pair.name;
            e["n"] = n;
            e["t"] = t;
            e["n_noise"] = r.n_noise;
            e["n_pos"] = r.n_pos;
            e["sym_kl"] = r.sym_kl;
            e["mc_loss_estimate"] = r.mc_loss_estimate.mean;
            e["mc_standard_error"] = r.mc_loss_estimate.standard_error;
            e["mc_samples"] = r.mc_loss_estimate.samples;
            e["sincere_rhs"] = r.sincere_rhs;
            e["sincere_rhs_trivial"] = r.sincere_rhs_trivial;
            e["sincere_satisfied"] = r.sincere_satisfied;
            if (r.supcon_rhs) {
                e["supcon_rhs"] = *r.supcon_rhs;
                e["supcon_rhs_trivial"] = *r.supcon_rhs_trivial;
            }
            if (r.supcon_mc) {
                e["supcon_mc_estimate"] = r.supcon_mc->mean;
                e["supcon_mc_standard_error"] = r.supcon_mc->standard_error;
                e["supcon_satisfied"] = *r.supcon_satisfied;
                pass = pass && *r.supcon_satisfied;
            }
            pass = pass && r.sincere_satisfied;

            // |N| monotonicity at MC precision along the n_grid.
            const bool monotone =
                r.mc_loss_estimate.mean >
                prev_mean - 3.0 * (prev_se + r.mc_loss_estimate.standard_error);
            e["monotone_vs_previous_n"] = monotone;
            pass = pass && monotone;
            prev_mean = r.mc_loss_estimate.mean;
            prev_se = r.mc_loss_estimate.standard_error;
            entries.push_back(e);
        }
    }

    // Symbolic grid: the SupCon RHS never falls below the SINCERE RHS and
    // touches it exactly when |P| = 1.
    bool symbolic_ok = true;
    for (std::size_t n_noise : {1u, 2u, 4u, 8u, 16u})
        for (std::size_t n_pos : {1u, 2u, 3u, 5u, 9u})
            for (double kl : {0.0, 0.25, 1.0, 4.0}) {
                const double s = sincere_bound_rhs(n_noise, kl);
                const double c = supcon_bound_rhs(n_noise, n_pos, kl);
                symbolic_ok =
                    symbolic_ok && (n_pos == 1 ? std::fabs(c - s) <= 1e-15 : c > s);
            }
    pass = pass && symbolic_ok;

    nlohmann::json report;
    report["run_id"] = run_id;
    report["samples"] = samples;
    report["entries"] = entries;
    report["symbolic_grid_ok"] = symbolic_ok;
    report["pass"] = pass;
    write_json_file(out_dir / "bound_report.json", report);
    outputs.push_back("bound_report.json");
    return pass ? kExitOk : kExitViolation;
}

namespace detail {

inline SyntheticDatasetSpec dataset_spec_from_config(const Config& cfg) {
    SyntheticDatasetSpec spec;
    spec.k_classes = cfg.get_u64("k_classes", 2);
    spec.per_class = cfg.get_u64("per_class", 200);
    spec.feature_dim = cfg.get_u64("feature_dim", 16);
    spec.class_separation = cfg.get_double("class_separation", 1.2);
    spec.within_class_noise = cfg.get_double("within_class_noise", 0.15);
    spec.seed = cfg.get_u64("data_seed", cfg.get_u64("seed", 0));
    return spec;
}

inline TrainConfig train_config_from_config(const Config& cfg) {
    TrainConfig tc;
    tc.loss = loss_kind_from_config(cfg);
    tc.tau = cfg.get_double("tau", 0.1);
    tc.epochs = cfg.get_u64("epochs", 200);
    tc.batch_size = cfg.get_u64("batch_size", 64);
    tc.learning_rate = cfg.get_double("learning_rate", 0.5);
    tc.momentum = cfg.get_double("momentum", 0.9);
    tc.weight_decay = cfg.get_double("weight_decay", 1e-4);
    const std::string sched = cfg.get_string("schedule", "cosine");
    if (sched == "cosine") {
        tc.schedule.kind = LrSchedule::Kind::cosine_warmup;
        tc.schedule.warmup_epochs = cfg.get_u64("warmup_epochs", 5);
        tc.schedule.floor_fraction = cfg.get_double("floor_fraction", 0.001);
    } else if (sched == "constant") {
        tc.schedule.kind = LrSchedule::Kind::constant;
    } else {
        throw config_error("config: unknown schedule '" + sched + "'");
    }
    const std::string enc = cfg.get_string("encoder", "table");
    if (enc == "table")
        tc.encoder = EncoderKind::embedding_table;
    else if (enc == "mlp")
        tc.encoder = EncoderKind::nonlinear_map;
    else
        throw config_error("config: unknown encoder '" + enc + "'");
    tc.mlp_hidden = cfg.get_u64("mlp_hidden", 32);
    tc.aug_sigma = cfg.get_double("aug_sigma", -1.0);
    tc.seed = cfg.get_u64("seed", 0);
    tc.knn_ks.clear();
    for (const auto k : cfg.get_u64_list("knn_ks", {1, 5}))
        tc.knn_ks.push_back(static_cast<std::size_t>(k));
    tc.hist_bins = cfg.get_u64("hist_bins", 40);
    tc.readout_neighbors = cfg.get_u64("readout_neighbors", 5);
    return tc;
}

inline const std::vector<std::string>& train_keys() {
    static const std::vector<std::string> keys = {
        "seed",        "k_classes",     "per_class",        "feature_dim",
        "class_separation", "within_class_noise", "data_seed",
        "loss",        "epsilon",       "tau",              "epochs",
        "batch_size",  "learning_rate", "momentum",         "weight_decay",
        "schedule",    "warmup_epochs", "floor_fraction",   "encoder",
        "mlp_hidden",  "aug_sigma",     "knn_ks",           "hist_bins",
        "readout_neighbors", "out"};
    return keys;
}

} // namespace detail

/// Trains on the synthetic dataset and writes the trained embeddings plus
/// the per-epoch loss curve.
inline int cmd_train(const Config& cfg, const fs::path& out_dir, const std::string& run_id,
                     std::vector<std::string>& outputs) {
    cfg.restrict_keys(detail::train_keys());
    const SyntheticDatasetSpec spec = detail::dataset_spec_from_config(cfg);
    const TrainConfig tc = detail::train_config_from_config(cfg);
    const Dataset ds = generate_dataset(spec);
    const TrainResult result = train(tc, ds);

    write_loss_csv(out_dir / "loss.csv", run_id, result.metrics.epoch_loss);
    write_embeddings_csv(out_dir / "train_embeddings.csv", run_id, result.train_embeddings,
                         ds.train_y);
    write_embeddings_csv(out_dir / "test_embeddings.csv", run_id, result.test_embeddings,
                         ds.test_y);
    outputs.push_back("loss.csv");
    outputs.push_back("train_embeddings.csv");
    outputs.push_back("test_embeddings.csv");
    std::printf("train: %s, final epoch loss %.6f\n", tc.loss.name().c_str(),
                result.metrics.epoch_loss.back());
    return kExitOk;
}

/// Recomputes the evaluation metrics from a train run's embedding files:
/// margins (aggregate and per class), histograms, weighted kNN accuracy.
inline int cmd_eval(const Config& cfg, const fs::path& out_dir, const std::string& run_id,
                    std::vector<std::string>& outputs) {
    cfg.restrict_keys({"seed", "run", "knn_ks", "hist_bins", "out"});
    const std::string run = cfg.get_string("run", "");
    if (run.empty()) throw config_error("config: eval needs 'run' = path to a train output dir");
    const fs::path run_dir(run);
    const EmbeddingsFile train_file = read_embeddings_csv(run_dir / "train_embeddings.csv");
    const EmbeddingsFile test_file = read_embeddings_csv(run_dir / "test_embeddings.csv");
    const std::size_t bins = cfg.get_u64("hist_bins", 40);

    const MarginReport margins = margin_report(train_file.values, train_file.labels,
                                               test_file.values, test_file.labels, bins);

    nlohmann::json metrics;
    metrics["run_id"] = run_id;
    metrics["source_run_id"] = train_file.run_id;
    metrics["margins"] = detail::margin_report_to_json(margins);
    nlohmann::json knn_json;
    for (const auto k64 : cfg.get_u64_list("knn_ks", {1, 5})) {
        const std::size_t k = static_cast<std::size_t>(k64);
        if (k > train_file.values.rows()) continue;
        const KnnResult r = weighted_knn(train_file.values, train_file.labels, test_file.values,
                                         k, &test_file.labels);
        knn_json[std::to_string(k)] = r.accuracy;
    }
    metrics["knn_accuracy"] = knn_json;
    write_json_file(out_dir / "metrics.json", metrics);
    outputs.push_back("metrics.json");

    detail::write_histogram_csv(out_dir / "hist_aggregate.csv", run_id, margins.aggregate);
    outputs.push_back("hist_aggregate.csv");
    for (const auto& [label, hists] : margins.per_class_hists) {
        const std::string name = "hist_class_" + std::to_string(label) + ".csv";
        detail::write_histogram_csv(out_dir / name, run_id, hists);
        outputs.push_back(name);
    }
    return kExitOk;
}

/// Compares two or more evaluated runs: loss floors, margins, accuracies.
inline int cmd_report(const Config& cfg, const fs::path& out_dir, const std::string& run_id,
                      std::vector<std::string>& outputs) {
    cfg.restrict_keys({"seed", "runs", "out"});
    const auto run_dirs = cfg.get_string_list("runs");
    if (run_dirs.size() < 2)
        throw config_error("config: report needs 'runs' = comma-separated list of >= 2 dirs");

    nlohmann::json runs = nlohmann::json::array();
    struct RunSummary {
        std::string dir;
        std::string loss;
        double final_loss;
        double margin;
    };
    std::vector<RunSummary> summaries;
    for (const auto& dir : run_dirs) {
        const fs::path d(dir);
        const auto losses = read_loss_csv(d / "loss.csv");
        const auto metrics = read_json_file(d / "metrics.json");
        const auto manifest = read_json_file(d / "train_manifest.json");
        nlohmann::json r;
        r["dir"] = dir;
        r["loss"] = manifest["config"].value("loss", "sincere");
        r["seed"] = manifest.value("seed", 0u);
        r["first_epoch_loss"] = losses.front();
        r["final_epoch_loss"] = losses.back();
        r["margin"] = metrics["margins"]["margin"];
        r["knn_accuracy"] = metrics["knn_accuracy"];
        runs.push_back(r);
        summaries.push_back({dir, r["loss"].get<std::string>(), losses.back(),
                             metrics["margins"]["margin"].get<double>()});
    }

    nlohmann::json comparisons = nlohmann::json::array();
    for (std::size_t i = 0; i + 1 < summaries.size(); ++i) {
        for (std::size_t j = i + 1; j < summaries.size(); ++j) {
            nlohmann::json c;
            c["a"] = summaries[i].dir;
            c["b"] = summaries[j].dir;
            c["final_loss_difference"] = summaries[i].final_loss - summaries[j].final_loss;
            c["margin_difference"] = summaries[i].margin - summaries[j].margin;
            c["lower_final_loss"] = summaries[i].final_loss < summaries[j].final_loss
                                        ? summaries[i].dir
                                        : summaries[j].dir;
            c["larger_margin"] =
                summaries[i].margin > summaries[j].margin ? summaries[i].dir : summaries[j].dir;
            comparisons.push_back(c);
        }
    }

    nlohmann::json report;
    report["run_id"] = run_id;
    report["runs"] = runs;
    report["comparisons"] = comparisons;
    write_json_file(out_dir / "comparison.json", report);
    outputs.push_back("comparison.json");
    return kExitOk;
}

/// Dispatch plus manifest writing and the exit-code policy: 0 ok,
/// 1 assertion/bound violation, 2 config error, 3 I/O error.
inline int run_command(const std::string& name, const Config& cfg, const fs::path& out_dir) {
    try {
        std::error_code ec;
        fs::create_directories(out_dir, ec);
        if (ec) throw io_error("cannot create output directory " + out_dir.string());

        RunManifest manifest;
        manifest.command = name;
        manifest.config = cfg.values();
        manifest.seed = cfg.get_u64("seed", 0);
        manifest.run_id = RunManifest::compute_run_id(name, cfg.values());

        const auto start = std::chrono::steady_clock::now();
        int code;
        if (name == "gradcheck")
            code = cmd_gradcheck(cfg, out_dir, manifest.run_id, manifest.outputs);
        else if (name == "oracle")
            code = cmd_oracle(cfg, out_dir, manifest.run_id, manifest.outputs);
        else if (name == "bound")
            code = cmd_bound(cfg, out_dir, manifest.run_id, manifest.outputs);
        else if (name == "train")
            code = cmd_train(cfg, out_dir, manifest.run_id, manifest.outputs);
        else if (name == "eval")
            code = cmd_eval(cfg, out_dir, manifest.run_id, manifest.outputs);
        else if (name == "report")
            code = cmd_report(cfg, out_dir, manifest.run_id, manifest.outputs);
        else
            throw config_error("unknown command '" + name + "'");
        const auto end = std::chrono::steady_clock::now();
        manifest.duration_ms =
            std::chrono::duration_cast<std::chrono::duration<double, std::milli>>(end - start)
                .count();

        write_json_file(out_dir / (name + "_manifest.json"), manifest_to_json(manifest));
        return code;
    } catch (const config_error& e) {
        std::cerr << "config error: " << e.what() << "\n";
        return kExitConfig;
    } catch (const validation_error& e) {
        // Bad parameter values surface as config errors at the CLI level.
        std::cerr << "config error: " << e.what() << "\n";
        return kExitConfig;
    } catch (const io_error& e) {
        std::cerr << "io error: " << e.what() << "\n";
        return kExitIo;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return kExitViolation;
    }
}

} // namespace sincere::cli
