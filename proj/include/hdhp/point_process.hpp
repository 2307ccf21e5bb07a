#pragma once

#include <cmath>
#include <limits>
#include <span>
#include <stdexcept>
#include <vector>

namespace hdhp {

// Exponential triggering kernel alpha * exp(-nu * dt). alpha is the
// self-excitation strength of one pattern, nu the shared decay rate
// (1/months).
struct KernelParams {
    double alpha = 0.0;
    double nu = 1.0;
};

inline double kernel_value(const KernelParams& k, double elapsed) {
    if (elapsed < 0.0) throw std::domain_error("kernel_value: negative elapsed time");
    return k.alpha * std::exp(-k.nu * elapsed);
}

// Recursive update of S(t) = sum_i exp(-nu (t - t_i)) over the events of one
// task. Decays the running sum by one gap and optionally absorbs an event at
// the new time (contributing exp(0) = 1).
inline double excitation_update(double sum, double gap, double nu, bool add_event) {
    if (gap < 0.0) throw std::domain_error("excitation_update: negative gap");
    double out = sum * std::exp(-nu * gap);
    if (add_event) out += 1.0;
    return out;
}

// One table of the franchise: a burst of same-pattern events by one user.
// excitation_sum is kept at last_time, so the follow-up rate at any t >=
// last_time is alpha * excitation_sum * exp(-nu (t - last_time)).
struct TaskState {
    int id = -1;  // franchise-wide task id
    int user = -1;
    int pattern = -1;
    long count = 0;
    double first_time = 0.0;
    double last_time = 0.0;
    double excitation_sum = 0.0;

    void add_event(double t, double nu) {
        if (count == 0) {
            first_time = t;
            excitation_sum = 1.0;
        } else {
            if (t < last_time) throw std::domain_error("TaskState::add_event: time before last event");
            excitation_sum = excitation_update(excitation_sum, t - last_time, nu, true);
        }
        last_time = t;
        ++count;
    }

    double rate_at(double t, double alpha, double nu) const {
        if (t < last_time) throw std::domain_error("TaskState::rate_at: time before last event");
        return alpha * excitation_sum * std::exp(-nu * (t - last_time));
    }
};

struct UserState {
    int user = -1;
    double mu = 0.0;  // new-task rate, tasks per month
    std::vector<TaskState> tasks;
};

struct UserIntensity {
    std::vector<double> task_rates;  // parallel to UserState::tasks
    double new_task_rate = 0.0;      // mu
    double total = 0.0;              // mu + sum of task rates
};

// Total intensity of one user, split into the new-task branch and the
// follow-up branch of every task. kernels is indexed by pattern id.
inline UserIntensity user_intensity(const UserState& u, std::span<const KernelParams> kernels, double t) {
    UserIntensity out;
    out.task_rates.reserve(u.tasks.size());
    out.new_task_rate = u.mu;
    double total = u.mu;
    for (const auto& task : u.tasks) {
        const auto& k = kernels[static_cast<std::size_t>(task.pattern)];
        const double r = task.rate_at(t, k.alpha, k.nu);
        out.task_rates.push_back(r);
        total += r;
    }
    out.total = total;
    return out;
}

// Integral of one event's kernel from its own time to horizon T, i.e.
// (alpha/nu) (1 - exp(-nu (T - t_event))).
inline double kernel_compensator(double alpha, double nu, double elapsed) {
    if (elapsed < 0.0) throw std::domain_error("kernel_compensator: negative elapsed time");
    return alpha / nu * (-std::expm1(-nu * elapsed));
}

constexpr double neg_infinity = -std::numeric_limits<double>::infinity();

// Hawkes log-likelihood of one user's stream on [0, T): sum of log total
// intensities at the events minus the closed-form compensator. alphas[i] is
// the kernel strength of the pattern event i was assigned to. Returns
// -infinity if some event sits at zero intensity.
inline double log_likelihood(std::span<const double> times, std::span<const double> alphas,
                             double mu, double nu, double horizon) {
    if (times.size() != alphas.size()) throw std::invalid_argument("log_likelihood: times/alphas size mismatch");
    double ll = -mu * horizon;
    double weighted_sum = 0.0;  // sum alphas_i exp(-nu (t_prev - t_i)), kept at the previous event
    double t_prev = 0.0;
    for (std::size_t i = 0; i < times.size(); ++i) {
        const double t = times[i];
        if (t < t_prev) throw std::domain_error("log_likelihood: events not time-sorted");
        if (t >= horizon) throw std::domain_error("log_likelihood: event at or beyond horizon");
        weighted_sum *= std::exp(-nu * (t - t_prev));
        const double rate = mu + weighted_sum;
        if (rate <= 0.0) return neg_infinity;
        ll += std::log(rate);
        ll -= kernel_compensator(alphas[i], nu, horizon - t);
        weighted_sum += alphas[i];
        t_prev = t;
    }
    return ll;
}

// E[lambda(t)] of a single pattern with effective base rate mu_pi, in the
// form mu_pi (1 + alpha expm1((alpha-nu) t) / (alpha-nu)), with the analytic
// limit mu_pi (1 + nu t) across alpha = nu.
inline double expected_intensity(double mu_pi, const KernelParams& k, double t) {
    if (t < 0.0) throw std::domain_error("expected_intensity: negative time");
    const double a = k.alpha - k.nu;
    if (std::abs(a) < 1e-8) return mu_pi * (1.0 + k.nu * t);
    return mu_pi * (1.0 + k.alpha * std::expm1(a * t) / a);
}

// Integral of expected_intensity over [0, T]. For alpha >= nu the process is
// supercritical and the value grows exponentially in T; the same analytic
// expression applies and is returned as-is.
inline double expected_count(double mu_pi, const KernelParams& k, double horizon) {
    if (horizon < 0.0) throw std::domain_error("expected_count: negative horizon");
    const double a = k.alpha - k.nu;
    if (std::abs(a) < 1e-8) return mu_pi * (horizon + k.nu * horizon * horizon / 2.0);
    return mu_pi * (horizon + k.alpha * (std::expm1(a * horizon) - a * horizon) / (a * a));
}

// Compensator increments between consecutive events of one user under the
// fitted intensity (mu, per-event alphas). Under the generating model these
// gaps are i.i.d. Exp(1). n events yield n-1 gaps.
inline std::vector<double> rescale_times(std::span<const double> times, std::span<const double> alphas,
                                         double mu, double nu) {
    if (times.size() != alphas.size()) throw std::invalid_argument("rescale_times: times/alphas size mismatch");
    std::vector<double> gaps;
    if (times.size() < 2) return gaps;
    gaps.reserve(times.size() - 1);
    double weighted_sum = 0.0;  // sum alphas_i exp(-nu (t_k - t_i)) at the current event
    for (std::size_t i = 0; i + 1 < times.size(); ++i) {
        const double dt = times[i + 1] - times[i];
        if (dt < 0.0) throw std::domain_error("rescale_times: events not time-sorted");
        weighted_sum += alphas[i];
        gaps.push_back(mu * dt + weighted_sum / nu * (-std::expm1(-nu * dt)));
        weighted_sum *= std::exp(-nu * dt);
    }
    return gaps;
}

}  // namespace hdhp
