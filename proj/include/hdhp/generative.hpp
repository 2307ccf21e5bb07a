#pragma once

#include <algorithm>
#include <cstdint>
#include <numeric>
#include <span>
#include <stdexcept>
#include <string>
#include <unordered_set>
#include <vector>

#include "hdhp/point_process.hpp"
#include "hdhp/rng.hpp"

namespace hdhp {

struct Hyperparams {
    double beta = 1.0;   // DP concentration over patterns
    double eta0 = 0.1;   // symmetric Dirichlet prior on pattern word distributions
    double tau1 = 8.0;   // Gamma shape of the alpha prior
    double tau2 = 4.0;   // Gamma rate of the alpha prior
    double nu = 5.0;     // kernel decay, fixed (not inferred)
    std::vector<std::string> vocab;
    double mu_smoothing = 0.9;  // r: mu_new = r mu_old + (1-r) mu_hat
    double mu0 = 1.0;           // initial per-user base-rate estimate
    int particles = 200;
    double ess_fraction = 0.5;  // resample when ESS < ess_fraction * particles
    std::uint64_t seed = 1;

    void validate() const {
        if (!(beta > 0.0)) throw std::invalid_argument("Hyperparams: beta must be > 0");
        if (!(eta0 > 0.0)) throw std::invalid_argument("Hyperparams: eta0 must be > 0");
        if (!(tau1 > 0.0) || !(tau2 > 0.0)) throw std::invalid_argument("Hyperparams: tau1, tau2 must be > 0");
        if (!(nu > 0.0)) throw std::invalid_argument("Hyperparams: nu must be > 0");
        if (!(mu_smoothing >= 0.0 && mu_smoothing <= 1.0))
            throw std::invalid_argument("Hyperparams: mu_smoothing must be in [0, 1]");
        if (!(mu0 > 0.0)) throw std::invalid_argument("Hyperparams: mu0 must be > 0");
        if (particles < 1) throw std::invalid_argument("Hyperparams: particles must be >= 1");
        if (!(ess_fraction > 0.0 && ess_fraction <= 1.0))
            throw std::invalid_argument("Hyperparams: ess_fraction must be in (0, 1]");
        if (vocab.empty()) throw std::invalid_argument("Hyperparams: vocab must be non-empty");
        std::unordered_set<std::string> seen(vocab.begin(), vocab.end());
        if (seen.size() != vocab.size()) throw std::invalid_argument("Hyperparams: vocab entries must be unique");
    }
};

struct PatternParams {
    double alpha = 0.0;
    std::vector<double> theta;  // distribution over the vocab
};

struct Event {
    double time = 0.0;
    int user = -1;
    std::vector<int> words;
    int true_pattern = -1;  // ground truth, synthetic data only
    int true_task = -1;
};

struct Dataset {
    std::vector<Event> events;
    std::vector<std::string> vocab;
    std::vector<std::string> users;
};

// Draw the parameters of a fresh pattern from the prior: alpha from
// Gamma(tau1, tau2), theta from a symmetric Dirichlet over the full vocab.
inline PatternParams sample_pattern_params(const Hyperparams& h, Rng& rng) {
    PatternParams p;
    p.alpha = rng.gamma(h.tau1, h.tau2);
    p.theta = rng.dirichlet_symmetric(h.eta0, h.vocab.size());
    return p;
}

// Task choice for one event of user u at time t: existing task k with
// probability rate_k / total, a new task with probability mu / total.
// Returns the index into u.tasks, or -1 for a new task.
inline int assign_task(const UserState& u, std::span<const KernelParams> kernels, double t, Rng& rng) {
    if (u.tasks.empty()) return -1;
    const UserIntensity li = user_intensity(u, kernels, t);
    std::vector<double> w(li.task_rates);
    w.push_back(li.new_task_rate);
    const std::size_t pick = rng.categorical(w);
    return pick == li.task_rates.size() ? -1 : static_cast<int>(pick);
}

// CRP pattern choice for a new task: existing pattern l with probability
// m_l / (K + beta), a new one with probability beta / (K + beta). Returns
// m.size() for a new pattern.
inline std::size_t assign_pattern(std::span<const long> m, long total_tasks, double beta, Rng& rng) {
    const long sum = std::accumulate(m.begin(), m.end(), 0L);
    if (sum != total_tasks) throw std::domain_error("assign_pattern: counts do not sum to K");
    std::vector<double> w(m.size() + 1);
    for (std::size_t i = 0; i < m.size(); ++i) w[i] = static_cast<double>(m[i]);
    w[m.size()] = beta;
    return rng.categorical(w);
}

inline std::vector<int> sample_content(std::span<const double> theta, int n_words, Rng& rng) {
    if (n_words < 1) throw std::domain_error("sample_content: need at least one word");
    std::vector<int> words(static_cast<std::size_t>(n_words));
    for (auto& w : words) w = static_cast<int>(rng.categorical(theta));
    return words;
}

// Superposed multivariate Hawkes over all users, sampled by thinning.
// Between events every kernel decays at the shared rate nu, so the total
// intensity is mu_total + G exp(-nu dt) with a single scalar G, which makes
// each candidate O(1) and the user pick O(|users| + tasks of that user).
class HawkesSimulator {
public:
    HawkesSimulator(std::vector<double> mu, double nu) : nu_(nu) {
        users_.resize(mu.size());
        excitation_.assign(mu.size(), 0.0);
        excitation_time_.assign(mu.size(), 0.0);
        for (std::size_t u = 0; u < mu.size(); ++u) {
            users_[u].user = static_cast<int>(u);
            users_[u].mu = mu[u];
            mu_total_ += mu[u];
        }
    }

    const UserState& user(int u) const { return users_[static_cast<std::size_t>(u)]; }
    const std::vector<UserState>& users() const { return users_; }

    // Next event of the superposed process after t_prev: thin against the
    // left-limit bound, then pick the user proportionally to the per-user
    // intensities at the accepted time.
    std::pair<double, int> sample_next_event(double t_prev, Rng& rng) {
        if (!(mu_total_ > 0.0)) throw std::domain_error("sample_next_event: total base rate must be > 0");
        double s = t_prev;
        double g = total_excitation_ * std::exp(-nu_ * (s - total_time_));
        for (;;) {
            const double bound = mu_total_ + g;
            const double wait = rng.exponential(bound);
            s += wait;
            g *= std::exp(-nu_ * wait);
            const double rate = mu_total_ + g;
            if (rng.uniform() * bound <= rate) break;
        }
        std::vector<double> by_user(users_.size());
        for (std::size_t u = 0; u < users_.size(); ++u)
            by_user[u] = users_[u].mu + excitation_[u] * std::exp(-nu_ * (s - excitation_time_[u]));
        const int user = static_cast<int>(rng.categorical(by_user));
        return {s, user};
    }

    // Commit an event at time t: join task `local_task` of the user (or -1
    // to open a new task with the given pattern). Returns the task joined.
    TaskState& record_event(int user, double t, int local_task, int pattern_of_new, double alpha, int new_task_id) {
        UserState& u = users_[static_cast<std::size_t>(user)];
        TaskState* task;
        if (local_task < 0) {
            TaskState fresh;
            fresh.id = new_task_id;
            fresh.user = user;
            fresh.pattern = pattern_of_new;
            u.tasks.push_back(fresh);
            task = &u.tasks.back();
        } else {
            task = &u.tasks[static_cast<std::size_t>(local_task)];
        }
        task->add_event(t, nu_);
        decay_user(user, t);
        excitation_[static_cast<std::size_t>(user)] += alpha;
        total_excitation_ = total_excitation_ * std::exp(-nu_ * (t - total_time_)) + alpha;
        total_time_ = t;
        return *task;
    }

private:
    void decay_user(int user, double t) {
        auto& e = excitation_[static_cast<std::size_t>(user)];
        auto& et = excitation_time_[static_cast<std::size_t>(user)];
        e *= std::exp(-nu_ * (t - et));
        et = t;
    }

    double nu_;
    std::vector<UserState> users_;
    double mu_total_ = 0.0;
    std::vector<double> excitation_;       // per-user sum of alpha * task excitation
    std::vector<double> excitation_time_;  // timestamp of excitation_[u]
    double total_excitation_ = 0.0;
    double total_time_ = 0.0;
};

struct SyntheticConfig {
    int n_users = 200;
    double mu_shape = 10.0;  // Gamma(shape, scale) on each user's base rate
    double mu_scale = 0.2;
    int n_patterns = 50;      // explicit-popularity mode only
    std::vector<double> pi;   // explicit popularity; empty -> drawn from Dirichlet(pi_concentration)
    double pi_concentration = 1.0;
    double alpha_shape = 8.0;  // Gamma(shape, scale) on each pattern's alpha
    double alpha_scale = 0.25;
    int support_size = 30;  // words a pattern can use; 0 -> full vocab
    double theta_concentration = 3.0;
    int vocab_size = 100;
    double nu = 5.0;
    int words_per_event = 5;
    long n_events = 150000;
    double horizon = 0.0;  // if > 0, also stop once time exceeds this
    bool crp_mode = false;  // sample patterns through the CRP instead of explicit pi
    double beta = 1.0;      // CRP concentration (crp mode)
    double eta0 = 0.1;      // full-vocab Dirichlet for new patterns (crp mode)
    std::vector<double> mu_override;     // fixed per-user base rates (testing)
    std::vector<double> alpha_override;  // fixed per-pattern alphas (testing)
    std::uint64_t seed = 1;

    void validate() const {
        if (n_users < 1) throw std::invalid_argument("SyntheticConfig: n_users must be >= 1");
        if (vocab_size < 1) throw std::invalid_argument("SyntheticConfig: vocab_size must be >= 1");
        if (words_per_event < 1) throw std::invalid_argument("SyntheticConfig: words_per_event must be >= 1");
        if (n_events < 1 && !(horizon > 0.0))
            throw std::invalid_argument("SyntheticConfig: need a target event count or a horizon");
        if (!crp_mode) {
            if (n_patterns < 1) throw std::invalid_argument("SyntheticConfig: n_patterns must be >= 1");
            if (support_size > vocab_size)
                throw std::invalid_argument("SyntheticConfig: support_size exceeds vocab_size");
            if (!pi.empty()) {
                if (static_cast<int>(pi.size()) != n_patterns)
                    throw std::invalid_argument("SyntheticConfig: pi size must equal n_patterns");
                const double s = std::accumulate(pi.begin(), pi.end(), 0.0);
                if (std::abs(s - 1.0) > 1e-9) throw std::invalid_argument("SyntheticConfig: pi must sum to 1");
            }
        } else {
            if (!(beta > 0.0) || !(eta0 > 0.0))
                throw std::invalid_argument("SyntheticConfig: beta and eta0 must be > 0 in crp mode");
        }
        if (!(mu_shape > 0.0) || !(mu_scale > 0.0) || !(alpha_shape > 0.0) || !(alpha_scale > 0.0) ||
            !(theta_concentration > 0.0) || !(nu > 0.0))
            throw std::invalid_argument("SyntheticConfig: shape/scale/concentration fields must be > 0");
    }
};

struct GroundTruth {
    std::vector<double> mu;
    std::vector<PatternParams> patterns;
    std::vector<double> pi;  // configured popularity, or empirical task shares in crp mode
};

struct GenerateResult {
    Dataset data;
    GroundTruth truth;
};

namespace detail {

inline std::vector<std::string> indexed_names(const char* prefix, int n) {
    std::vector<std::string> out;
    out.reserve(static_cast<std::size_t>(n));
    for (int i = 0; i < n; ++i) {
        std::string s = std::to_string(i);
        s.insert(0, std::string(std::max<std::size_t>(3, s.size()) - s.size(), '0'));
        out.push_back(prefix + s);
    }
    return out;
}

// Pattern word distribution over a random support of the vocab.
inline std::vector<double> sample_support_theta(int vocab_size, int support_size, double concentration, Rng& rng) {
    if (support_size <= 0 || support_size >= vocab_size) return rng.dirichlet_symmetric(concentration, vocab_size);
    std::vector<int> ids(static_cast<std::size_t>(vocab_size));
    std::iota(ids.begin(), ids.end(), 0);
    for (int i = 0; i < support_size; ++i) {  // partial Fisher-Yates
        const auto j = i + static_cast<int>(rng.uniform() * static_cast<double>(vocab_size - i));
        std::swap(ids[static_cast<std::size_t>(i)], ids[static_cast<std::size_t>(j)]);
    }
    const auto weights = rng.dirichlet_symmetric(concentration, static_cast<std::size_t>(support_size));
    std::vector<double> theta(static_cast<std::size_t>(vocab_size), 0.0);
    for (int i = 0; i < support_size; ++i) theta[static_cast<std::size_t>(ids[i])] = weights[static_cast<std::size_t>(i)];
    return theta;
}

}  // namespace detail

// Forward-sample a labeled event stream. In explicit-popularity mode new
// tasks pick their pattern from pi; in crp mode patterns are created on the
// fly through the CRP and their parameters drawn from the prior.
inline GenerateResult generate(const SyntheticConfig& cfg, Rng& rng) {
    cfg.validate();
    GenerateResult out;
    out.data.vocab = detail::indexed_names("w", cfg.vocab_size);
    out.data.users = detail::indexed_names("u", cfg.n_users);

    std::vector<double> mu = cfg.mu_override;
    if (mu.empty()) {
        mu.resize(static_cast<std::size_t>(cfg.n_users));
        for (auto& m : mu) m = rng.gamma(cfg.mu_shape, 1.0 / cfg.mu_scale);
    } else if (static_cast<int>(mu.size()) != cfg.n_users) {
        throw std::invalid_argument("generate: mu_override size must equal n_users");
    }
    out.truth.mu = mu;

    std::vector<PatternParams> patterns;
    std::vector<KernelParams> kernels;
    auto add_pattern = [&](PatternParams p) {
        kernels.push_back({p.alpha, cfg.nu});
        patterns.push_back(std::move(p));
    };
    if (!cfg.crp_mode) {
        if (!cfg.alpha_override.empty() && static_cast<int>(cfg.alpha_override.size()) != cfg.n_patterns)
            throw std::invalid_argument("generate: alpha_override size must equal n_patterns");
        out.truth.pi = cfg.pi.empty() ? rng.dirichlet_symmetric(cfg.pi_concentration, static_cast<std::size_t>(cfg.n_patterns))
                                      : cfg.pi;
        for (int l = 0; l < cfg.n_patterns; ++l) {
            PatternParams p;
            p.alpha = cfg.alpha_override.empty() ? rng.gamma(cfg.alpha_shape, 1.0 / cfg.alpha_scale)
                                                 : cfg.alpha_override[static_cast<std::size_t>(l)];
            p.theta = detail::sample_support_theta(cfg.vocab_size, cfg.support_size, cfg.theta_concentration, rng);
            add_pattern(std::move(p));
        }
    }

    HawkesSimulator sim(mu, cfg.nu);
    std::vector<long> pattern_tasks;  // m_l
    long total_tasks = 0;
    double t = 0.0;
    for (long n = 0; cfg.n_events < 1 || n < cfg.n_events; ++n) {
        auto [time, user] = sim.sample_next_event(t, rng);
        if (cfg.horizon > 0.0 && time > cfg.horizon) break;
        t = time;

        int local_task = assign_task(sim.user(user), kernels, t, rng);
        int pattern;
        if (local_task < 0) {
            if (!cfg.crp_mode) {
                pattern = static_cast<int>(rng.categorical(out.truth.pi));
            } else {
                const auto pick = assign_pattern(pattern_tasks, total_tasks, cfg.beta, rng);
                pattern = static_cast<int>(pick);
                if (pick == patterns.size()) {
                    PatternParams p;
                    p.alpha = rng.gamma(cfg.alpha_shape, 1.0 / cfg.alpha_scale);
                    p.theta = rng.dirichlet_symmetric(cfg.eta0, static_cast<std::size_t>(cfg.vocab_size));
                    add_pattern(std::move(p));
                }
            }
            if (static_cast<std::size_t>(pattern) >= pattern_tasks.size()) pattern_tasks.resize(static_cast<std::size_t>(pattern) + 1, 0);
            ++pattern_tasks[static_cast<std::size_t>(pattern)];
            ++total_tasks;
        } else {
            pattern = sim.user(user).tasks[static_cast<std::size_t>(local_task)].pattern;
        }

        const TaskState& task = sim.record_event(user, t, local_task, pattern,
                                                 kernels[static_cast<std::size_t>(pattern)].alpha,
                                                 static_cast<int>(total_tasks) - 1);
        Event e;
        e.time = t;
        e.user = user;
        e.words = sample_content(patterns[static_cast<std::size_t>(task.pattern)].theta, cfg.words_per_event, rng);
        e.true_pattern = task.pattern;
        e.true_task = task.id;
        out.data.events.push_back(std::move(e));
    }

    out.truth.patterns = std::move(patterns);
    if (cfg.crp_mode) {
        out.truth.pi.assign(pattern_tasks.size(), 0.0);
        for (std::size_t l = 0; l < pattern_tasks.size(); ++l)
            out.truth.pi[l] = total_tasks > 0 ? static_cast<double>(pattern_tasks[l]) / static_cast<double>(total_tasks) : 0.0;
    }
    return out;
}

inline GenerateResult generate(const SyntheticConfig& cfg) {
    Rng rng = Rng::derive(cfg.seed, 0x67656e);
    return generate(cfg, rng);
}

}  // namespace hdhp
