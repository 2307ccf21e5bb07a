#pragma once

#include <algorithm>
#include <atomic>
#include <cmath>
#include <condition_variable>
#include <cstdint>
#include <memory>
#include <mutex>
#include <span>
#include <stdexcept>
#include <thread>
#include <vector>

#include "hdhp/generative.hpp"
#include "hdhp/point_process.hpp"
#include "hdhp/rng.hpp"

namespace hdhp {

struct PatternWordCounts {
    std::vector<std::uint32_t> counts;
    std::uint64_t total = 0;

    explicit PatternWordCounts(std::size_t vocab_size = 0) : counts(vocab_size, 0) {}

    void add(std::span<const int> words) {
        for (int w : words) ++counts[static_cast<std::size_t>(w)];
        total += words.size();
    }
};

// Dirichlet-multinomial predictive of a query under one pattern's counts
// (pass nullptr for a brand-new pattern). Computed as the sequential product
// of (C_w + eta0 + seen_in_query) / (C + eta0 |W| + position), which equals
// the Gamma-ratio marginal.
inline double content_marginal(const PatternWordCounts* counts, std::span<const int> words,
                               double eta0, std::size_t vocab_size) {
    if (words.empty()) throw std::domain_error("content_marginal: empty query");
    const double denom0 = static_cast<double>(counts ? counts->total : 0) + eta0 * static_cast<double>(vocab_size);
    double p = 1.0;
    for (std::size_t j = 0; j < words.size(); ++j) {
        const int w = words[j];
        if (w < 0 || static_cast<std::size_t>(w) >= vocab_size)
            throw std::domain_error("content_marginal: word outside vocab");
        int seen = 0;
        for (std::size_t i = 0; i < j; ++i)
            if (words[i] == w) ++seen;
        const double cw = counts ? static_cast<double>(counts->counts[static_cast<std::size_t>(w)]) : 0.0;
        p *= (cw + eta0 + static_cast<double>(seen)) / (denom0 + static_cast<double>(j));
    }
    return p;
}

// Per-pattern inference state. excitation is the sum of the excitation sums
// of the pattern's tasks, kept lazily at excitation_time; together with the
// event count it yields the alpha-posterior rate statistic D in O(1).
struct PatternStats {
    double alpha = 0.0;  // current draw driving the intensities
    long tasks = 0;      // m_l
    long events = 0;
    long followups = 0;  // F_l: non-initial events
    double excitation = 0.0;
    double excitation_time = 0.0;
    PatternWordCounts words;

    double excitation_at(double t, double nu) const {
        return excitation * std::exp(-nu * (t - excitation_time));
    }
    // D_l(t) = sum over events of (1/nu)(1 - exp(-nu (t - t_i)))
    double comp_stat_at(double t, double nu) const {
        return (static_cast<double>(events) - excitation_at(t, nu)) / nu;
    }
};

struct AssignmentNode {
    std::shared_ptr<const AssignmentNode> prev;
    long task = -1;
    int pattern = -1;
};

// One SMC hypothesis over the stream seen so far.
struct Particle {
    std::vector<UserState> users;
    std::vector<PatternStats> patterns;
    std::vector<long> tasks_started;  // per user, for the mu estimate
    long total_tasks = 0;             // K
    double mu_total = 0.0;
    double excitation_total = 0.0;  // G: sum over tasks of alpha * excitation, at excitation_time
    double excitation_time = 0.0;
    double log_weight = 0.0;   // log space, unnormalized, accumulated since the last resample
    double cum_loglik = 0.0;   // accumulated over the whole stream
    std::shared_ptr<const AssignmentNode> history;
    long n_assigned = 0;

    double total_excitation_at(double t, double nu) const {
        return excitation_total * std::exp(-nu * (t - excitation_time));
    }
};

inline Particle make_particle(int n_users, const Hyperparams& h) {
    Particle p;
    p.users.resize(static_cast<std::size_t>(n_users));
    for (int u = 0; u < n_users; ++u) {
        p.users[static_cast<std::size_t>(u)].user = u;
        p.users[static_cast<std::size_t>(u)].mu = h.mu0;
    }
    p.tasks_started.assign(static_cast<std::size_t>(n_users), 0);
    p.mu_total = h.mu0 * n_users;
    return p;
}

struct ProposalAtom {
    int local_task = -1;  // index into the user's tasks, -1 for a new task
    long task_id = -1;    // franchise-wide id (K for a new task)
    int pattern = -1;     // == L for a new pattern
    double mass = 0.0;    // prior probability times content marginal
};

struct Proposal {
    std::vector<ProposalAtom> atoms;
    double normalizer = 0.0;      // Q_n: sum of the atom masses
    double user_intensity = 0.0;  // lambda*_u(t) under the particle's state
};

// Proposal over {existing tasks of the user} + {new task x existing pattern}
// + {new task, new pattern}. Atom masses are content marginals times the
// exact prior (task choice by intensity share, pattern choice by CRP), so
// the normalizer is the one-step predictive of the words.
inline Proposal propose(const Particle& p, int user, double t, std::span<const int> words,
                        const Hyperparams& h) {
    const UserState& u = p.users[static_cast<std::size_t>(user)];
    const std::size_t n_patterns = p.patterns.size();
    const std::size_t vocab_size = h.vocab.size();

    std::vector<double> content(n_patterns + 1);
    for (std::size_t l = 0; l < n_patterns; ++l)
        content[l] = content_marginal(&p.patterns[l].words, words, h.eta0, vocab_size);
    content[n_patterns] = content_marginal(nullptr, words, h.eta0, vocab_size);

    Proposal out;
    out.atoms.reserve(u.tasks.size() + n_patterns + 1);
    double total_rate = u.mu;
    for (std::size_t k = 0; k < u.tasks.size(); ++k) {
        const TaskState& task = u.tasks[k];
        const double rate = task.rate_at(t, p.patterns[static_cast<std::size_t>(task.pattern)].alpha, h.nu);
        total_rate += rate;
        out.atoms.push_back({static_cast<int>(k), task.id, task.pattern, rate});
    }
    out.user_intensity = total_rate;
    // so far atom.mass holds the raw rate; finish the prior and apply content
    for (std::size_t k = 0; k < u.tasks.size(); ++k) {
        auto& a = out.atoms[k];
        a.mass = a.mass / total_rate * content[static_cast<std::size_t>(a.pattern)];
    }
    const double new_task_prob = u.mu / total_rate;
    const double crp_denom = static_cast<double>(p.total_tasks) + h.beta;
    for (std::size_t l = 0; l < n_patterns; ++l) {
        const double prior = new_task_prob * static_cast<double>(p.patterns[l].tasks) / crp_denom;
        out.atoms.push_back({-1, p.total_tasks, static_cast<int>(l), prior * content[l]});
    }
    out.atoms.push_back({-1, p.total_tasks, static_cast<int>(n_patterns),
                         new_task_prob * h.beta / crp_denom * content[n_patterns]});
    for (const auto& a : out.atoms) out.normalizer += a.mass;
    return out;
}

// log p(t_n, u_n | history) when the user's intensity at t_n is already
// known: log of that intensity minus the closed-form compensator of every
// user's intensity over (t_prev, t_n].
inline double time_loglik_given_rate(const Particle& p, double rate_at_event, double t, double t_prev,
                                     double nu) {
    if (t < t_prev) throw std::domain_error("time_loglik: event time before previous event");
    const double dt = t - t_prev;
    const double g = p.total_excitation_at(t_prev, nu);
    const double compensator = p.mu_total * dt + g / nu * (-std::expm1(-nu * dt));
    return (rate_at_event > 0.0 ? std::log(rate_at_event) : neg_infinity) - compensator;
}

inline double time_loglik_increment(const Particle& p, int user, double t, double t_prev,
                                    const Hyperparams& h) {
    const UserState& u = p.users[static_cast<std::size_t>(user)];
    double rate = u.mu;
    for (const auto& task : u.tasks)
        rate += task.rate_at(t, p.patterns[static_cast<std::size_t>(task.pattern)].alpha, h.nu);
    return time_loglik_given_rate(p, rate, t, t_prev, h.nu);
}

// Smoothed maximum-likelihood refresh of one user's base rate:
// mu_hat = tasks started by the user / elapsed observation time.
inline void update_mu(Particle& p, int user, double now, const Hyperparams& h, double stream_start) {
    const double elapsed = now - stream_start;
    if (!(elapsed > 0.0)) throw std::domain_error("update_mu: now must be after the stream start");
    UserState& u = p.users[static_cast<std::size_t>(user)];
    const double mu_hat =
        static_cast<double>(p.tasks_started[static_cast<std::size_t>(user)]) / elapsed;
    const double mu_new = h.mu_smoothing * u.mu + (1.0 - h.mu_smoothing) * mu_hat;
    p.mu_total += mu_new - u.mu;
    u.mu = mu_new;
}

// Refresh one pattern's alpha from its exact conditional posterior
// Gamma(tau1 + F_l, tau2 + D_l(now)) given the current assignments; with a
// null rng the posterior mean is used instead of a draw.
inline void update_alpha(Particle& p, int pattern, double now, const Hyperparams& h, Rng* rng) {
    PatternStats& ps = p.patterns.at(static_cast<std::size_t>(pattern));
    const double shape = h.tau1 + static_cast<double>(ps.followups);
    const double rate = h.tau2 + ps.comp_stat_at(now, h.nu);
    const double alpha_new = rng ? rng->gamma(shape, rate) : shape / rate;
    p.excitation_total = p.total_excitation_at(now, h.nu);
    p.excitation_time = now;
    p.excitation_total += (alpha_new - ps.alpha) * ps.excitation_at(now, h.nu);
    ps.alpha = alpha_new;
}

inline void update_weight(Particle& p, double proposal_normalizer, double time_ll) {
    if (!(proposal_normalizer > 0.0)) throw std::domain_error("update_weight: normalizer must be > 0");
    const double inc = std::log(proposal_normalizer) + time_ll;
    p.log_weight += inc;
    p.cum_loglik += inc;
}

// Commit one event to the particle under the chosen atom. A new pattern
// starts at the prior-mean alpha; its first refresh happens through
// update_alpha once assignments accumulate.
inline void apply_assignment(Particle& p, const Event& e, const ProposalAtom& atom, const Hyperparams& h) {
    UserState& u = p.users[static_cast<std::size_t>(e.user)];
    int pattern = atom.pattern;
    TaskState* task;
    if (atom.local_task < 0) {
        if (pattern == static_cast<int>(p.patterns.size())) {
            PatternStats fresh;
            fresh.alpha = h.tau1 / h.tau2;
            fresh.excitation_time = e.time;
            fresh.words = PatternWordCounts(h.vocab.size());
            p.patterns.push_back(std::move(fresh));
        }
        PatternStats& ps = p.patterns.at(static_cast<std::size_t>(pattern));
        TaskState fresh;
        fresh.id = p.total_tasks;
        fresh.user = e.user;
        fresh.pattern = pattern;
        u.tasks.push_back(fresh);
        task = &u.tasks.back();
        ++p.total_tasks;
        ++ps.tasks;
        ++p.tasks_started[static_cast<std::size_t>(e.user)];
    } else {
        task = &u.tasks.at(static_cast<std::size_t>(atom.local_task));
        if (task->pattern != pattern) throw std::logic_error("apply_assignment: atom pattern mismatch");
        ++p.patterns[static_cast<std::size_t>(pattern)].followups;
    }
    task->add_event(e.time, h.nu);

    PatternStats& ps = p.patterns[static_cast<std::size_t>(pattern)];
    ++ps.events;
    ps.excitation = ps.excitation_at(e.time, h.nu) + 1.0;
    ps.excitation_time = e.time;
    ps.words.add(e.words);

    p.excitation_total = p.total_excitation_at(e.time, h.nu) + ps.alpha;
    p.excitation_time = e.time;

    auto node = std::make_shared<AssignmentNode>();
    node->prev = p.history;
    node->task = task->id;
    node->pattern = pattern;
    p.history = std::move(node);
    ++p.n_assigned;
}

inline double log_sum_exp(std::span<const double> xs) {
    double m = neg_infinity;
    for (double x : xs) m = std::max(m, x);
    if (!std::isfinite(m)) return m;
    double s = 0.0;
    for (double x : xs) s += std::exp(x - m);
    return m + std::log(s);
}

inline std::vector<double> normalized_weights(const std::vector<Particle>& particles) {
    std::vector<double> lw(particles.size());
    for (std::size_t i = 0; i < particles.size(); ++i) lw[i] = particles[i].log_weight;
    const double lse = log_sum_exp(lw);
    std::vector<double> w(particles.size());
    for (std::size_t i = 0; i < particles.size(); ++i) w[i] = std::exp(lw[i] - lse);
    return w;
}

inline double effective_sample_size(std::span<const double> weights) {
    double s2 = 0.0;
    for (double w : weights) s2 += w * w;
    return s2 > 0.0 ? 1.0 / s2 : 0.0;
}

// Systematic resampling when the effective sample size drops below
// ess_fraction * |particles|. Offspring replace the population and weights
// reset to uniform. Returns whether a resample happened.
inline bool resample(std::vector<Particle>& particles, double ess_fraction, Rng& rng) {
    const std::size_t n = particles.size();
    if (n <= 1) return false;
    const std::vector<double> w = normalized_weights(particles);
    if (effective_sample_size(w) >= ess_fraction * static_cast<double>(n)) return false;

    std::vector<int> offspring(n, 0);
    const double step = 1.0 / static_cast<double>(n);
    double position = rng.uniform() * step;
    double cumulative = 0.0;
    std::size_t parent = 0;
    for (std::size_t j = 0; j < n; ++j) {
        while (parent + 1 < n && cumulative + w[parent] < position) {
            cumulative += w[parent];
            ++parent;
        }
        ++offspring[parent];
        position += step;
    }

    std::vector<Particle> next;
    next.reserve(n);
    for (std::size_t i = 0; i < n; ++i) {
        for (int c = 1; c < offspring[i]; ++c) next.push_back(particles[i]);
        if (offspring[i] > 0) next.push_back(std::move(particles[i]));
    }
    for (auto& p : next) p.log_weight = 0.0;
    particles = std::move(next);
    return true;
}

enum class AlphaUpdate {
    sample_touched,  // resample the event's pattern after each event (default)
    sample_all,      // resample every pattern at the start of each event
    mean_all,        // posterior-mean refresh of every pattern (deterministic)
    fixed,           // keep alphas at the prior mean
};

struct FitOptions {
    int threads = 1;
    AlphaUpdate alpha_update = AlphaUpdate::sample_touched;
    double stream_start = 0.0;
};

// Wire-ready fitted model: everything evaluation needs to continue the
// intensities past the training window.
struct TaskRecord {
    int user = -1;
    int pattern = -1;
    long count = 0;
    double first_time = 0.0;
    double last_time = 0.0;
    double excitation_sum = 0.0;
};

struct PatternRecord {
    double alpha = 0.0;  // posterior mean at the end of training
    long tasks = 0;      // m_l
    std::vector<std::uint32_t> word_counts;
    std::uint64_t total_words = 0;
};

struct Model {
    Hyperparams hyper;
    std::vector<std::string> users;
    std::vector<double> mu;
    std::vector<TaskRecord> tasks;
    std::vector<PatternRecord> patterns;
    std::vector<std::pair<long, int>> assignments;  // per training event: (task, pattern)
    double train_begin = 0.0;
    double train_end = 0.0;
    std::uint64_t seed = 0;
};

struct FitResult {
    Model model;
    std::vector<double> log_evidence;  // cumulative marginal-likelihood estimate per event
    int best_particle = 0;
    double best_log_weight = 0.0;  // increments since the last resample
    double best_cum_loglik = 0.0;  // increments over the whole stream
    long resamples = 0;
};

// Sequential Monte Carlo filter over the event stream. Particle slots are
// advanced independently (optionally across threads); normalization and
// resampling run single-threaded between events. Each slot owns a
// seed-derived rng, so results do not depend on the thread count.
class ParticleFilter {
public:
    ParticleFilter(int n_users, const Hyperparams& h, FitOptions opts = {})
        : h_(h),
          opts_(opts),
          filter_rng_(Rng::derive(h.seed, 0x7265736d706cULL)),
          t_prev_(opts.stream_start) {
        h_.validate();
        if (n_users < 1) throw std::invalid_argument("ParticleFilter: need at least one user");
        particles_.assign(static_cast<std::size_t>(h.particles), make_particle(n_users, h_));
        slot_rngs_.reserve(particles_.size());
        for (std::size_t s = 0; s < particles_.size(); ++s) slot_rngs_.push_back(Rng::derive(h.seed, s));
        start_workers();
    }

    ~ParticleFilter() { stop_workers(); }

    ParticleFilter(const ParticleFilter&) = delete;
    ParticleFilter& operator=(const ParticleFilter&) = delete;

    void step(const Event& e) {
        if (e.time < t_prev_) throw std::domain_error("ParticleFilter::step: events not time-sorted");
        if (e.user < 0 || static_cast<std::size_t>(e.user) >= particles_.front().users.size())
            throw std::domain_error("ParticleFilter::step: unknown user");
        if (e.words.empty()) throw std::domain_error("ParticleFilter::step: event without words");

        const double lse_before = current_lse();
        run_slots(e);
        const double lse_after = current_lse();
        evidence_cum_ += lse_after - lse_before;
        evidence_.push_back(evidence_cum_);

        if (resample(particles_, h_.ess_fraction, filter_rng_)) ++resamples_;
        t_prev_ = e.time;
        ++n_events_;
    }

    const std::vector<Particle>& particles() const { return particles_; }
    const std::vector<double>& log_evidence() const { return evidence_; }
    double t_prev() const { return t_prev_; }
    long resamples() const { return resamples_; }

    int best_particle() const {
        int best = 0;
        for (std::size_t i = 1; i < particles_.size(); ++i)
            if (particles_[i].log_weight > particles_[static_cast<std::size_t>(best)].log_weight)
                best = static_cast<int>(i);
        return best;
    }

private:
    double current_lse() const {
        std::vector<double> lw(particles_.size());
        for (std::size_t i = 0; i < particles_.size(); ++i) lw[i] = particles_[i].log_weight;
        return log_sum_exp(lw);
    }

    void step_slot(std::size_t slot, const Event& e) {
        Particle& p = particles_[slot];
        Rng& rng = slot_rngs_[slot];
        if (e.time > opts_.stream_start) update_mu(p, e.user, e.time, h_, opts_.stream_start);
        if (opts_.alpha_update == AlphaUpdate::sample_all || opts_.alpha_update == AlphaUpdate::mean_all) {
            Rng* r = opts_.alpha_update == AlphaUpdate::sample_all ? &rng : nullptr;
            for (std::size_t l = 0; l < p.patterns.size(); ++l)
                update_alpha(p, static_cast<int>(l), e.time, h_, r);
        }
        const Proposal prop = propose(p, e.user, e.time, e.words, h_);
        const double time_ll = time_loglik_given_rate(p, prop.user_intensity, e.time, t_prev_, h_.nu);
        std::vector<double> masses(prop.atoms.size());
        for (std::size_t i = 0; i < prop.atoms.size(); ++i) masses[i] = prop.atoms[i].mass;
        const ProposalAtom& atom = prop.atoms[rng.categorical(masses)];
        update_weight(p, prop.normalizer, time_ll);
        apply_assignment(p, e, atom, h_);
        if (opts_.alpha_update == AlphaUpdate::sample_touched)
            update_alpha(p, atom.pattern, e.time, h_, &rng);
    }

    // -- worker pool ---------------------------------------------------

    void start_workers() {
        const int n = std::min<int>(opts_.threads, static_cast<int>(particles_.size()));
        if (n <= 1) return;
        n_workers_ = n;
        workers_.reserve(static_cast<std::size_t>(n));
        for (int w = 0; w < n; ++w)
            workers_.emplace_back([this, w] { worker_loop(w); });
    }

    void stop_workers() {
        if (workers_.empty()) return;
        {
            std::lock_guard lk(mutex_);
            stop_ = true;
        }
        cv_start_.notify_all();
        for (auto& t : workers_) t.join();
        workers_.clear();
    }

    void run_slots(const Event& e) {
        if (workers_.empty()) {
            for (std::size_t s = 0; s < particles_.size(); ++s) step_slot(s, e);
            return;
        }
        {
            std::lock_guard lk(mutex_);
            current_event_ = &e;
            pending_ = n_workers_;
            ++generation_;
        }
        cv_start_.notify_all();
        std::unique_lock lk(mutex_);
        cv_done_.wait(lk, [this] { return pending_ == 0; });
    }

    void worker_loop(int worker) {
        std::uint64_t seen = 0;
        for (;;) {
            const Event* e;
            {
                std::unique_lock lk(mutex_);
                cv_start_.wait(lk, [&] { return stop_ || generation_ != seen; });
                if (stop_) return;
                seen = generation_;
                e = current_event_;
            }
            const std::size_t n = particles_.size();
            const std::size_t lo = n * static_cast<std::size_t>(worker) / static_cast<std::size_t>(n_workers_);
            const std::size_t hi = n * (static_cast<std::size_t>(worker) + 1) / static_cast<std::size_t>(n_workers_);
            for (std::size_t s = lo; s < hi; ++s) step_slot(s, *e);
            {
                std::lock_guard lk(mutex_);
                if (--pending_ == 0) cv_done_.notify_one();
            }
        }
    }

    Hyperparams h_;
    FitOptions opts_;
    std::vector<Particle> particles_;
    std::vector<Rng> slot_rngs_;
    Rng filter_rng_;
    double t_prev_;
    long n_events_ = 0;
    long resamples_ = 0;
    std::vector<double> evidence_;
    double evidence_cum_ = 0.0;

    std::vector<std::thread> workers_;
    int n_workers_ = 0;
    std::mutex mutex_;
    std::condition_variable cv_start_, cv_done_;
    const Event* current_event_ = nullptr;
    std::uint64_t generation_ = 0;
    int pending_ = 0;
    bool stop_ = false;
};

inline std::vector<std::pair<long, int>> materialize_history(const Particle& p) {
    std::vector<std::pair<long, int>> out(static_cast<std::size_t>(p.n_assigned));
    const AssignmentNode* node = p.history.get();
    for (std::size_t i = out.size(); i-- > 0;) {
        out[i] = {node->task, node->pattern};
        node = node->prev.get();
    }
    return out;
}

// Run the filter over the whole stream and package the max-weight particle.
inline FitResult fit(const Dataset& data, const Hyperparams& h, FitOptions opts = {}) {
    if (data.events.empty()) throw std::invalid_argument("fit: empty event stream");
    ParticleFilter filter(static_cast<int>(data.users.size()), h, opts);
    for (const auto& e : data.events) {
        for (int w : e.words)
            if (w < 0 || static_cast<std::size_t>(w) >= h.vocab.size())
                throw std::domain_error("fit: event word outside the vocab");
        filter.step(e);
    }

    FitResult out;
    out.log_evidence = filter.log_evidence();
    out.resamples = filter.resamples();
    out.best_particle = filter.best_particle();
    const Particle& best = filter.particles()[static_cast<std::size_t>(out.best_particle)];
    out.best_log_weight = best.log_weight;
    out.best_cum_loglik = best.cum_loglik;

    Model& m = out.model;
    m.hyper = h;
    m.users = data.users;
    m.seed = h.seed;
    m.train_begin = opts.stream_start;
    m.train_end = data.events.back().time;
    m.assignments = materialize_history(best);
    m.mu.resize(best.users.size());
    m.tasks.assign(static_cast<std::size_t>(best.total_tasks), TaskRecord{});
    for (std::size_t u = 0; u < best.users.size(); ++u) {
        m.mu[u] = best.users[u].mu;
        for (const auto& t : best.users[u].tasks) {
            TaskRecord rec;
            rec.user = t.user;
            rec.pattern = t.pattern;
            rec.count = t.count;
            rec.first_time = t.first_time;
            rec.last_time = t.last_time;
            rec.excitation_sum = t.excitation_sum;
            m.tasks.at(static_cast<std::size_t>(t.id)) = rec;
        }
    }
    m.patterns.reserve(best.patterns.size());
    for (const auto& ps : best.patterns) {
        PatternRecord rec;
        rec.alpha = (h.tau1 + static_cast<double>(ps.followups)) /
                    (h.tau2 + ps.comp_stat_at(m.train_end, h.nu));
        rec.tasks = ps.tasks;
        rec.word_counts = ps.words.counts;
        rec.total_words = ps.words.total;
        m.patterns.push_back(std::move(rec));
    }
    return out;
}

}  // namespace hdhp
