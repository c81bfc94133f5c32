#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <vector>

#include "sincere/bounds.hpp"

using namespace sincere;

TEST_CASE("symmetrized KL of identical densities is zero") {
    const auto g = Density::isotropic_gaussian({0.3, -1.0}, 0.7);
    CHECK(symmetrized_kl(g, g) == 0.0);
    const auto c = Density::categorical({0.2, 0.3, 0.5});
    CHECK(symmetrized_kl(c, c) == 0.0);
}

TEST_CASE("unit-variance 1D Gaussians at distance mu have symmetrized KL mu^2") {
    for (const double mu : {0.0, 0.5, 1.0, 2.0}) {
        const auto p = Density::isotropic_gaussian({mu}, 1.0);
        const auto q = Density::isotropic_gaussian({0.0}, 1.0);
        CHECK(symmetrized_kl(p, q) == doctest::Approx(mu * mu).epsilon(1e-12));
        CHECK(kl_divergence(p, q) == doctest::Approx(0.5 * mu * mu).epsilon(1e-12));
    }
}

TEST_CASE("closed-form Gaussian KL agrees with Monte Carlo within 3 SE") {
    const auto p = Density::diagonal_gaussian({1.0, -0.5}, {1.2, 0.6});
    const auto q = Density::diagonal_gaussian({0.0, 0.0}, {1.0, 1.0});
    const double exact = symmetrized_kl(p, q);
    const McEstimate mc = symmetrized_kl_mc(p, q, 200000, 42);
    CHECK(std::fabs(mc.mean - exact) <= 3.0 * mc.standard_error);
}

TEST_CASE("categorical symmetrized KL by exact summation") {
    const auto a = Density::categorical({0.5, 0.5});
    const auto b = Density::categorical({0.9, 0.1});
    const double kl_ab = 0.5 * std::log(0.5 / 0.9) + 0.5 * std::log(0.5 / 0.1);
    const double kl_ba = 0.9 * std::log(0.9 / 0.5) + 0.1 * std::log(0.1 / 0.5);
    CHECK(symmetrized_kl(a, b) == doctest::Approx(kl_ab + kl_ba).epsilon(1e-14));
    const McEstimate mc = symmetrized_kl_mc(a, b, 200000, 7);
    CHECK(std::fabs(mc.mean - (kl_ab + kl_ba)) <= 3.0 * mc.standard_error);
}

TEST_CASE("symmetrized KL validates its inputs") {
    const auto g1 = Density::isotropic_gaussian({0.0}, 1.0);
    const auto g2 = Density::isotropic_gaussian({0.0, 0.0}, 1.0);
    CHECK_THROWS_AS(symmetrized_kl(g1, g2), validation_error);
    const auto c = Density::categorical({0.5, 0.5});
    CHECK_THROWS_AS(symmetrized_kl(g1, c), validation_error);
    const auto c3 = Density::categorical({0.2, 0.3, 0.5});
    CHECK_THROWS_AS(symmetrized_kl(c, c3), validation_error);
}

TEST_CASE("ideal loss at chance level is exactly log(1 + |N|)") {
    const auto d = Density::isotropic_gaussian({0.0}, 1.0);
    const McEstimate est = ideal_loss_mc(5, 2, d, d, 2000, 9);
    CHECK(est.mean == doctest::Approx(std::log(4.0)).epsilon(1e-14));
    CHECK(est.standard_error <= 1e-14);
    CHECK_THROWS_AS(ideal_loss_mc(5, 2, d, d, 10, 9), validation_error);
}

TEST_CASE("ideal loss estimates are nonnegative and satisfy the KL bound") {
    const auto target = Density::isotropic_gaussian({1.0}, 1.0);
    const auto noise = Density::isotropic_gaussian({0.0}, 1.0);
    const McEstimate est = ideal_loss_mc(6, 2, target, noise, 50000, 11);
    CHECK(est.mean >= 0.0);
    // Bound check at mu = 1, |N| = 4: estimate within 3 SE of >= log 4 - 1.
    CHECK(est.mean + 3.0 * est.standard_error >= std::log(4.0) - 1.0);
}

TEST_CASE("ideal loss MC estimates replay bit-identically") {
    const auto target = Density::isotropic_gaussian({0.7}, 1.0);
    const auto noise = Density::isotropic_gaussian({0.0}, 1.0);
    const McEstimate a = ideal_loss_mc(6, 3, target, noise, 20000, 123);
    const McEstimate b = ideal_loss_mc(6, 3, target, noise, 20000, 123);
    CHECK(a.mean == b.mean);
    CHECK(a.standard_error == b.standard_error);
}

TEST_CASE("check_bounds: SupCon RHS collapses onto the SINCERE RHS at |P| = 1") {
    McEstimate est;
    est.mean = 2.0;
    est.samples = 1000;
    const BoundReport r = check_bounds(4, 1, 0.8, est);
    REQUIRE(r.supcon_rhs.has_value());
    CHECK(std::fabs(*r.supcon_rhs - r.sincere_rhs) <= 1e-15);
    CHECK(r.sincere_rhs == doctest::Approx(std::log(4.0) - 0.8).epsilon(1e-15));
}

TEST_CASE("check_bounds: direct arithmetic at |P| = 3, |N| = 4, KL = 2") {
    McEstimate est;
    est.mean = 1.5;
    est.samples = 1000;
    const BoundReport r = check_bounds(4, 3, 2.0, est);
    CHECK(r.sincere_rhs == doctest::Approx(std::log(4.0) - 2.0).epsilon(1e-14));
    REQUIRE(r.supcon_rhs.has_value());
    CHECK(*r.supcon_rhs == doctest::Approx(std::log(6.0) - (4.0 / 6.0) * 2.0).epsilon(1e-14));
    CHECK(*r.supcon_rhs > r.sincere_rhs);
    CHECK(r.sincere_rhs_trivial == std::max(r.sincere_rhs, 0.0));
    CHECK(r.sincere_satisfied);
}

TEST_CASE("indistinguishable densities sit exactly at the chance-level bound") {
    const auto d = Density::isotropic_gaussian({0.0}, 1.0);
    const McEstimate est = ideal_loss_mc(6, 2, d, d, 2000, 5);
    const BoundReport r = check_bounds(4, 1, 0.0, est);
    CHECK(r.sincere_rhs == doctest::Approx(std::log(4.0)).epsilon(1e-14));
    // Chance level: log(1 + |N|) = log 5 > log 4 = RHS.
    CHECK(est.mean == doctest::Approx(std::log(5.0)).epsilon(1e-13));
    CHECK(r.sincere_satisfied);
}

TEST_CASE("SupCon RHS dominates the SINCERE RHS across a symbolic grid") {
    for (std::size_t n_noise : {1u, 2u, 4u, 8u, 16u}) {
        for (std::size_t n_pos : {1u, 2u, 3u, 5u, 9u}) {
            for (double kl : {0.0, 0.25, 1.0, 4.0}) {
                const double s = sincere_bound_rhs(n_noise, kl);
                const double c = supcon_bound_rhs(n_noise, n_pos, kl);
                if (n_pos == 1)
                    CHECK(std::fabs(c - s) <= 1e-15);
                else
                    CHECK(c > s);
            }
        }
    }
}

TEST_CASE("ideal loss grows with the noise count at MC precision") {
    const auto target = Density::isotropic_gaussian({1.0}, 1.0);
    const auto noise = Density::isotropic_gaussian({0.0}, 1.0);
    double prev_mean = -1.0, prev_se = 0.0;
    for (const std::size_t n_noise : {2u, 4u, 8u, 16u}) {
        const McEstimate est = ideal_loss_mc(n_noise + 2, 2, target, noise, 50000, 17);
        CHECK(est.mean > prev_mean - 3.0 * (prev_se + est.standard_error));
        prev_mean = est.mean;
        prev_se = est.standard_error;
    }
}

TEST_CASE("corollary: log|N| minus the loss lower-bounds the symmetrized KL") {
    const auto target = Density::isotropic_gaussian({1.2}, 1.0);
    const auto noise = Density::isotropic_gaussian({0.0}, 1.0);
    const double kl = symmetrized_kl(target, noise);
    for (const std::size_t n : {6u, 10u}) {
        const McEstimate est = ideal_loss_mc(n, 2, target, noise, 50000, 23);
        CHECK(std::log(static_cast<double>(n - 2)) - est.mean <=
              kl + 3.0 * est.standard_error);
    }
}

TEST_CASE("SupCon ideal loss dominates SINCERE's and satisfies its own bound") {
    const auto target = Density::isotropic_gaussian({1.0}, 1.0);
    const auto noise = Density::isotropic_gaussian({0.0}, 1.0);
    const std::size_t n = 8, t = 3; // |P| = 2, |N| = 5
    const McEstimate sincere_est = ideal_loss_mc(n, t, target, noise, 50000, 29);
    const McEstimate supcon_est = supcon_ideal_loss_mc(n, t, target, noise, 50000, 29);
    CHECK(supcon_est.mean > sincere_est.mean);
    const double kl = symmetrized_kl(target, noise);
    const BoundReport r = check_bounds(n - t, t - 1, kl, sincere_est, supcon_est);
    CHECK(r.sincere_satisfied);
    REQUIRE(r.supcon_satisfied.has_value());
    CHECK(*r.supcon_satisfied);
    CHECK_THROWS_AS(supcon_ideal_loss_mc(n, 1, target, noise, 50000, 29), validation_error);
}
