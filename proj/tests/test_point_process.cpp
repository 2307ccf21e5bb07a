#include <catch2/catch.hpp>

#include <cmath>
#include <vector>

#include "hdhp/point_process.hpp"
#include "hdhp/rng.hpp"
#include "oracles.hpp"

using namespace hdhp;

TEST_CASE("kernel value", "[point_process]") {
    REQUIRE(kernel_value({2.0, 5.0}, 0.0) == 2.0);
    REQUIRE(kernel_value({1.0, 1.0}, std::log(2.0)) == Approx(0.5).epsilon(1e-12));
    REQUIRE(kernel_value({3.0, 5.0}, 0.2) == Approx(3.0 * std::exp(-1.0)).epsilon(1e-12));
    REQUIRE_THROWS_AS(kernel_value({1.0, 1.0}, -0.1), std::domain_error);
}

TEST_CASE("excitation update basics", "[point_process]") {
    REQUIRE(excitation_update(0.0, 3.7, 5.0, true) == 1.0);
    REQUIRE(excitation_update(1.0, 0.0, 5.0, true) == 2.0);
    REQUIRE_THROWS_AS(excitation_update(1.0, -0.5, 5.0, false), std::domain_error);

    // events at 0 and 0.1, decayed sum at 0.3 with nu = 5
    double s = excitation_update(0.0, 0.0, 5.0, true);
    s = excitation_update(s, 0.1, 5.0, true);
    s = excitation_update(s, 0.2, 5.0, false);
    REQUIRE(s == Approx(std::exp(-1.5) + std::exp(-1.0)).epsilon(1e-12));
}

TEST_CASE("excitation update equals the brute-force decayed sum", "[point_process]") {
    Rng rng(11);
    for (int trial = 0; trial < 40; ++trial) {
        const double nu = 0.5 + 6.0 * rng.uniform();
        const int n = 1 + static_cast<int>(rng.uniform() * 50);
        std::vector<double> times;
        double t = 0.0;
        double sum = 0.0;
        for (int i = 0; i < n; ++i) {
            t += rng.exponential(2.0);
            sum = excitation_update(sum, times.empty() ? 0.0 : t - times.back(), nu, true);
            times.push_back(t);
        }
        const double query = t + rng.exponential(1.0);
        sum = excitation_update(sum, query - t, nu, false);
        REQUIRE(sum == Approx(oracle::decayed_sum(times, query, nu)).margin(1e-10));
    }
}

TEST_CASE("user intensity decomposition", "[point_process]") {
    std::vector<KernelParams> kernels{{2.0, 5.0}};

    UserState idle{0, 1.5, {}};
    const auto empty = user_intensity(idle, kernels, 10.0);
    REQUIRE(empty.total == 1.5);
    REQUIRE(empty.task_rates.empty());

    UserState u{0, 1.0, {}};
    TaskState task;
    task.id = 0;
    task.user = 0;
    task.pattern = 0;
    task.add_event(1.0, 5.0);
    u.tasks.push_back(task);

    const auto li = user_intensity(u, kernels, 1.2);
    REQUIRE(li.task_rates.size() == 1);
    REQUIRE(li.task_rates[0] == Approx(2.0 * std::exp(-1.0)).epsilon(1e-12));
    REQUIRE(li.total == Approx(1.0 + 2.0 * std::exp(-1.0)).epsilon(1e-12));
    REQUIRE(li.total == li.new_task_rate + li.task_rates[0]);  // exact
    REQUIRE(li.new_task_rate / li.total == Approx(0.57612).margin(1e-5));

    REQUIRE_THROWS_AS(user_intensity(u, kernels, 0.5), std::domain_error);
}

TEST_CASE("log likelihood closed form", "[point_process]") {
    REQUIRE(log_likelihood({}, {}, 2.0, 5.0, 3.0) == Approx(-6.0));

    std::vector<double> t1{1.0}, a1{0.0};
    REQUIRE(log_likelihood(t1, a1, 1.0, 5.0, 2.0) == Approx(-2.0).epsilon(1e-12));

    std::vector<double> t2{0.5, 0.7}, a2{2.0, 2.0};
    const double got = log_likelihood(t2, a2, 1.0, 5.0, 1.0);
    REQUIRE(got == Approx(oracle::hawkes_loglik(t2, a2, 1.0, 5.0, 1.0)).margin(1e-8));

    std::vector<double> bad{0.7, 0.5}, ab{0.0, 0.0};
    REQUIRE_THROWS_AS(log_likelihood(bad, ab, 1.0, 5.0, 1.0), std::domain_error);

    std::vector<double> tz{0.5}, az{1.0};
    REQUIRE(log_likelihood(tz, az, 0.0, 5.0, 1.0) == neg_infinity);
}

TEST_CASE("log likelihood matches quadrature on random instances", "[point_process]") {
    Rng rng(23);
    for (int trial = 0; trial < 25; ++trial) {
        const double mu = 0.2 + 2.0 * rng.uniform();
        const double nu = 1.0 + 5.0 * rng.uniform();
        const int n = 1 + static_cast<int>(rng.uniform() * 8);
        std::vector<double> times, alphas;
        double t = 0.0;
        for (int i = 0; i < n; ++i) {
            t += rng.exponential(3.0);
            times.push_back(t);
            alphas.push_back(3.0 * rng.uniform());
        }
        const double horizon = t + rng.exponential(1.0);
        const double got = log_likelihood(times, alphas, mu, nu, horizon);
        const double want = oracle::hawkes_loglik(times, alphas, mu, nu, horizon);
        REQUIRE(got == Approx(want).margin(1e-6));
    }
}

TEST_CASE("expected intensity", "[point_process]") {
    REQUIRE(expected_intensity(1.7, {0.0, 5.0}, 2.3) == Approx(1.7).epsilon(1e-12));
    REQUIRE(expected_intensity(1.7, {2.5, 5.0}, 0.0) == Approx(1.7).epsilon(1e-12));
    REQUIRE(expected_intensity(1.0, {2.5, 5.0}, 1.0) == Approx(2.0 - std::exp(-2.5)).epsilon(1e-12));
    REQUIRE_THROWS_AS(expected_intensity(1.0, {1.0, 5.0}, -1.0), std::domain_error);

    // continuity across alpha == nu
    const double lo = expected_intensity(1.3, {5.0 - 1e-9, 5.0}, 0.7);
    const double hi = expected_intensity(1.3, {5.0 + 1e-9, 5.0}, 0.7);
    REQUIRE(std::abs(hi - lo) / lo < 1e-6);
}

TEST_CASE("expected count", "[point_process]") {
    REQUIRE(expected_count(2.0, {0.0, 5.0}, 3.0) == Approx(6.0).epsilon(1e-12));
    REQUIRE(expected_count(1.0, {2.5, 5.0}, 1.0) ==
            Approx(2.0 - (1.0 - std::exp(-2.5)) / 2.5).epsilon(1e-12));
    REQUIRE(expected_count(1.0, {2.5, 5.0}, 0.0) == 0.0);
    REQUIRE(expected_count(1.0, {7.5, 5.0}, 1.0) > expected_count(1.0, {5.0, 5.0}, 1.0));  // supercritical

    // d/dT expected_count == expected_intensity
    Rng rng(31);
    for (int trial = 0; trial < 20; ++trial) {
        const double mu_pi = 0.5 + rng.uniform();
        const KernelParams k{4.0 * rng.uniform(), 1.0 + 5.0 * rng.uniform()};
        const double T = 0.2 + 2.0 * rng.uniform();
        const double h = 1e-5;
        const double deriv = (expected_count(mu_pi, k, T + h) - expected_count(mu_pi, k, T - h)) / (2.0 * h);
        const double want = expected_intensity(mu_pi, k, T);
        REQUIRE(std::abs(deriv - want) / want < 1e-4);
    }
}

TEST_CASE("rescale times", "[point_process]") {
    // constant intensity c: every gap maps to c * dt
    std::vector<double> times{0.5, 1.0, 2.5}, alphas{0.0, 0.0, 0.0};
    const auto gaps = rescale_times(times, alphas, 2.0, 5.0);
    REQUIRE(gaps.size() == 2);
    REQUIRE(gaps[0] == Approx(1.0).epsilon(1e-12));
    REQUIRE(gaps[1] == Approx(3.0).epsilon(1e-12));

    std::vector<double> single{1.0}, sa{2.0};
    REQUIRE(rescale_times(single, sa, 1.0, 5.0).empty());

    std::vector<double> bad{1.0, 0.5}, ba{0.0, 0.0};
    REQUIRE_THROWS_AS(rescale_times(bad, ba, 1.0, 5.0), std::domain_error);
}

TEST_CASE("rescale times matches quadrature", "[point_process]") {
    Rng rng(41);
    for (int trial = 0; trial < 15; ++trial) {
        const double mu = 0.5 + rng.uniform();
        const double nu = 2.0 + 4.0 * rng.uniform();
        std::vector<double> times, alphas;
        double t = 0.0;
        for (int i = 0; i < 10; ++i) {
            t += rng.exponential(4.0);
            times.push_back(t);
            alphas.push_back(2.5 * rng.uniform());
        }
        const auto gaps = rescale_times(times, alphas, mu, nu);
        for (std::size_t i = 0; i + 1 < times.size(); ++i) {
            const double want = oracle::compensator(times, alphas, mu, nu, times[i], times[i + 1]);
            REQUIRE(gaps[i] == Approx(want).margin(1e-8));
        }
    }
}
