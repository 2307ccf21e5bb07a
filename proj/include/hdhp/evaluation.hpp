#pragma once

#include <algorithm>
#include <cmath>
#include <limits>
#include <span>
#include <stdexcept>
#include <string>
#include <unordered_map>
#include <vector>

#include "hdhp/point_process.hpp"
#include "hdhp/smc.hpp"

namespace hdhp {

// Normalized mutual information between two labelings, I(A;B) normalized by
// the geometric mean of the entropies. Invariant under relabeling either
// side. Two constant labelings agree perfectly (1); a constant against a
// non-constant one scores 0.
inline double nmi(std::span<const int> a, std::span<const int> b) {
    if (a.empty()) throw std::invalid_argument("nmi: empty labelings");
    if (a.size() != b.size()) throw std::invalid_argument("nmi: labelings differ in length");
    std::unordered_map<int, int> map_a, map_b;
    std::vector<int> da(a.size()), db(b.size());
    for (std::size_t i = 0; i < a.size(); ++i) {
        da[i] = static_cast<int>(map_a.emplace(a[i], static_cast<int>(map_a.size())).first->second);
        db[i] = static_cast<int>(map_b.emplace(b[i], static_cast<int>(map_b.size())).first->second);
    }
    const std::size_t ka = map_a.size(), kb = map_b.size();
    std::vector<long> joint(ka * kb, 0), ca(ka, 0), cb(kb, 0);
    for (std::size_t i = 0; i < a.size(); ++i) {
        ++joint[static_cast<std::size_t>(da[i]) * kb + static_cast<std::size_t>(db[i])];
        ++ca[static_cast<std::size_t>(da[i])];
        ++cb[static_cast<std::size_t>(db[i])];
    }
    const double n = static_cast<double>(a.size());
    double mi = 0.0, ha = 0.0, hb = 0.0;
    for (std::size_t i = 0; i < ka; ++i)
        for (std::size_t j = 0; j < kb; ++j) {
            const double nij = static_cast<double>(joint[i * kb + j]);
            if (nij == 0.0) continue;
            mi += nij / n * std::log(nij * n / (static_cast<double>(ca[i]) * static_cast<double>(cb[j])));
        }
    for (long c : ca)
        if (c > 0) ha -= static_cast<double>(c) / n * std::log(static_cast<double>(c) / n);
    for (long c : cb)
        if (c > 0) hb -= static_cast<double>(c) / n * std::log(static_cast<double>(c) / n);
    if (ha == 0.0 && hb == 0.0) return 1.0;
    if (ha == 0.0 || hb == 0.0) return 0.0;
    return std::clamp(mi / std::sqrt(ha * hb), 0.0, 1.0);
}

inline std::vector<std::vector<long>> confusion_matrix(std::span<const int> rows, std::span<const int> cols,
                                                       int n_rows, int n_cols) {
    if (rows.size() != cols.size()) throw std::invalid_argument("confusion_matrix: length mismatch");
    std::vector<std::vector<long>> m(static_cast<std::size_t>(n_rows),
                                     std::vector<long>(static_cast<std::size_t>(n_cols), 0));
    for (std::size_t i = 0; i < rows.size(); ++i)
        ++m.at(static_cast<std::size_t>(rows[i])).at(static_cast<std::size_t>(cols[i]));
    return m;
}

// Injective row-to-column matching maximizing total matched mass (Hungarian
// algorithm on the padded square matrix). Rows left on padding map to -1.
inline std::vector<int> match_patterns(const std::vector<std::vector<long>>& confusion) {
    const std::size_t rows = confusion.size();
    if (rows == 0) return {};
    const std::size_t cols = confusion.front().size();
    for (const auto& r : confusion)
        if (r.size() != cols) throw std::invalid_argument("match_patterns: ragged matrix");
    const std::size_t n = std::max(rows, cols);
    const double inf = std::numeric_limits<double>::infinity();
    auto cost = [&](std::size_t i, std::size_t j) -> double {
        if (i >= rows || j >= cols) return 0.0;
        const long v = confusion[i][j];
        if (v < 0) throw std::domain_error("match_patterns: negative entry");
        return -static_cast<double>(v);
    };
    std::vector<double> u(n + 1, 0.0), v(n + 1, 0.0), minv(n + 1);
    std::vector<std::size_t> p(n + 1, 0), way(n + 1, 0);
    for (std::size_t i = 1; i <= n; ++i) {
        p[0] = i;
        std::size_t j0 = 0;
        std::fill(minv.begin(), minv.end(), inf);
        std::vector<char> used(n + 1, 0);
        do {
            used[j0] = 1;
            const std::size_t i0 = p[j0];
            double delta = inf;
            std::size_t j1 = 0;
            for (std::size_t j = 1; j <= n; ++j) {
                if (used[j]) continue;
                const double cur = cost(i0 - 1, j - 1) - u[i0] - v[j];
                if (cur < minv[j]) {
                    minv[j] = cur;
                    way[j] = j0;
                }
                if (minv[j] < delta) {
                    delta = minv[j];
                    j1 = j;
                }
            }
            for (std::size_t j = 0; j <= n; ++j) {
                if (used[j]) {
                    u[p[j]] += delta;
                    v[j] -= delta;
                } else {
                    minv[j] -= delta;
                }
            }
            j0 = j1;
        } while (p[j0] != 0);
        do {
            const std::size_t j1 = way[j0];
            p[j0] = p[j1];
            j0 = j1;
        } while (j0 != 0);
    }
    std::vector<int> match(rows, -1);
    for (std::size_t j = 1; j <= n; ++j) {
        if (p[j] == 0) continue;
        const std::size_t row = p[j] - 1, col = j - 1;
        if (row < rows && col < cols) match[row] = static_cast<int>(col);
    }
    return match;
}

// ---------------------------------------------------------------------
// Held-out predictive scoring.
//
// Content counts and CRP shares stay frozen at their training values; the
// intensities keep evolving as test events are replayed. A replayed event
// joins its highest-mass atom (existing task, or a new task under an
// existing pattern), which is what lets later events see the excitation of
// earlier held-out activity.

class EvalState {
public:
    explicit EvalState(const Model& m) : hyper_(m.hyper) {
        hyper_.validate();
        users_.resize(m.users.size());
        for (std::size_t u = 0; u < m.users.size(); ++u) {
            users_[u].user = static_cast<int>(u);
            users_[u].mu = m.mu.at(u);
        }
        for (std::size_t id = 0; id < m.tasks.size(); ++id) {
            const TaskRecord& rec = m.tasks[id];
            TaskState t;
            t.id = static_cast<int>(id);
            t.user = rec.user;
            t.pattern = rec.pattern;
            t.count = rec.count;
            t.first_time = rec.first_time;
            t.last_time = rec.last_time;
            t.excitation_sum = rec.excitation_sum;
            users_.at(static_cast<std::size_t>(rec.user)).tasks.push_back(t);
        }
        long total_tasks = 0;
        for (const auto& pr : m.patterns) total_tasks += pr.tasks;
        if (total_tasks <= 0) throw std::invalid_argument("EvalState: model has no tasks");
        patterns_.reserve(m.patterns.size());
        for (const auto& pr : m.patterns) {
            FrozenPattern fp;
            fp.alpha = pr.alpha;
            fp.popularity = static_cast<double>(pr.tasks) / static_cast<double>(total_tasks);
            fp.counts.counts = pr.word_counts;
            fp.counts.total = pr.total_words;
            patterns_.push_back(std::move(fp));
        }
        anchor_time_.assign(users_.size(), 0.0);
        anchor_excitation_.assign(users_.size(), 0.0);
        anchored_.assign(users_.size(), 0);
        gaps_.resize(users_.size());
    }

    std::size_t n_users() const { return users_.size(); }
    std::size_t n_patterns() const { return patterns_.size(); }

    // Normalized pattern-mixture weights for user u at time t:
    // proportional to mu_u * popularity_l plus the follow-up intensity of
    // the user's pattern-l tasks.
    std::vector<double> mixture_weights(int user, double t) const {
        const UserState& u = users_.at(static_cast<std::size_t>(user));
        std::vector<double> w(patterns_.size());
        double total = 0.0;
        for (std::size_t l = 0; l < patterns_.size(); ++l) {
            w[l] = u.mu * patterns_[l].popularity;
            total += w[l];
        }
        for (const auto& task : u.tasks) {
            const double r = task.rate_at(t, patterns_[static_cast<std::size_t>(task.pattern)].alpha, hyper_.nu);
            w[static_cast<std::size_t>(task.pattern)] += r;
            total += r;
        }
        for (auto& x : w) x /= total;
        return w;
    }

    // log p(words | training data, user, t): Dirichlet-multinomial
    // predictives mixed by the intensity shares.
    double score(const Event& e) const {
        if (e.user < 0 || static_cast<std::size_t>(e.user) >= users_.size())
            throw std::domain_error("EvalState::score: unknown user");
        const std::vector<double> w = mixture_weights(e.user, e.time);
        double p = 0.0;
        for (std::size_t l = 0; l < patterns_.size(); ++l)
            p += w[l] * content_marginal(&patterns_[l].counts, e.words, hyper_.eta0, hyper_.vocab.size());
        return p > 0.0 ? std::log(p) : neg_infinity;
    }

    // Replay the event: record the rescaled gap to the user's previous
    // held-out event, then join the best atom.
    void advance(const Event& e) {
        UserState& u = users_.at(static_cast<std::size_t>(e.user));
        const std::size_t uu = static_cast<std::size_t>(e.user);

        double best_mass = -1.0;
        int best_local = -1;
        int best_pattern = -1;
        std::vector<double> content(patterns_.size());
        for (std::size_t l = 0; l < patterns_.size(); ++l)
            content[l] = content_marginal(&patterns_[l].counts, e.words, hyper_.eta0, hyper_.vocab.size());
        for (std::size_t k = 0; k < u.tasks.size(); ++k) {
            const TaskState& task = u.tasks[k];
            const double mass =
                task.rate_at(e.time, patterns_[static_cast<std::size_t>(task.pattern)].alpha, hyper_.nu) *
                content[static_cast<std::size_t>(task.pattern)];
            if (mass > best_mass) {
                best_mass = mass;
                best_local = static_cast<int>(k);
                best_pattern = task.pattern;
            }
        }
        for (std::size_t l = 0; l < patterns_.size(); ++l) {
            const double mass = u.mu * patterns_[l].popularity * content[l];
            if (mass > best_mass) {
                best_mass = mass;
                best_local = -1;
                best_pattern = static_cast<int>(l);
            }
        }

        if (anchored_[uu]) {
            const double dt = e.time - anchor_time_[uu];
            if (dt < 0.0) throw std::domain_error("EvalState::advance: events not time-sorted");
            gaps_[uu].push_back(u.mu * dt +
                                anchor_excitation_[uu] / hyper_.nu * (-std::expm1(-hyper_.nu * dt)));
            anchor_excitation_[uu] *= std::exp(-hyper_.nu * dt);
        }

        TaskState* task;
        if (best_local < 0) {
            TaskState fresh;
            fresh.id = -1;  // held-out tasks are not part of the franchise count
            fresh.user = e.user;
            fresh.pattern = best_pattern;
            u.tasks.push_back(fresh);
            task = &u.tasks.back();
        } else {
            task = &u.tasks.at(static_cast<std::size_t>(best_local));
        }
        task->add_event(e.time, hyper_.nu);
        anchor_excitation_[uu] += patterns_[static_cast<std::size_t>(best_pattern)].alpha;
        anchor_time_[uu] = e.time;
        anchored_[uu] = 1;
    }

    const std::vector<std::vector<double>>& rescaled_gaps() const { return gaps_; }

private:
    struct FrozenPattern {
        double alpha = 0.0;
        double popularity = 0.0;
        PatternWordCounts counts;
    };

    Hyperparams hyper_;
    std::vector<UserState> users_;
    std::vector<FrozenPattern> patterns_;
    std::vector<double> anchor_time_;
    std::vector<double> anchor_excitation_;
    std::vector<char> anchored_;
    std::vector<std::vector<double>> gaps_;
};

struct PerplexityResult {
    double value = 0.0;
    std::size_t n_events = 0;
    std::size_t n_zero = 0;  // events with zero predictive probability
};

inline PerplexityResult perplexity(std::span<const double> logliks) {
    if (logliks.empty()) throw std::invalid_argument("perplexity: empty test set");
    PerplexityResult out;
    out.n_events = logliks.size();
    double sum = 0.0;
    for (double ll : logliks) {
        if (!std::isfinite(ll)) {
            ++out.n_zero;
            continue;
        }
        sum += ll;
    }
    if (out.n_zero > 0) {
        out.value = std::numeric_limits<double>::infinity();
        return out;
    }
    out.value = std::exp(-sum / static_cast<double>(out.n_events));
    return out;
}

// ---------------------------------------------------------------------
// Goodness of fit of rescaled gaps against the unit-rate exponential.

inline double exp1_cdf(double x) { return -std::expm1(-x); }

inline double ks_statistic_exp1(std::vector<double> gaps) {
    if (gaps.empty()) throw std::invalid_argument("ks_statistic_exp1: no gaps");
    std::sort(gaps.begin(), gaps.end());
    const double n = static_cast<double>(gaps.size());
    double d = 0.0;
    for (std::size_t i = 0; i < gaps.size(); ++i) {
        const double f = exp1_cdf(gaps[i]);
        d = std::max(d, std::max(static_cast<double>(i + 1) / n - f, f - static_cast<double>(i) / n));
    }
    return d;
}

// Asymptotic Kolmogorov p-value with the Stephens small-sample correction.
inline double ks_pvalue(double statistic, std::size_t n) {
    const double sn = std::sqrt(static_cast<double>(n));
    const double lambda = (sn + 0.12 + 0.11 / sn) * statistic;
    if (lambda <= 0.0) return 1.0;
    double sum = 0.0;
    for (int k = 1; k <= 100; ++k) {
        const double term = std::exp(-2.0 * static_cast<double>(k) * static_cast<double>(k) * lambda * lambda);
        sum += (k % 2 == 1 ? term : -term);
        if (term < 1e-12) break;
    }
    return std::clamp(2.0 * sum, 0.0, 1.0);
}

// Anderson-Darling A^2 against the fully specified Exp(1).
inline double ad_statistic_exp1(std::vector<double> gaps) {
    if (gaps.empty()) throw std::invalid_argument("ad_statistic_exp1: no gaps");
    std::sort(gaps.begin(), gaps.end());
    const std::size_t n = gaps.size();
    const double nd = static_cast<double>(n);
    double s = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
        const double f = exp1_cdf(gaps[i]);
        const double log_f = f > 0.0 ? std::log(f) : -std::numeric_limits<double>::max();
        // log(1 - F(x)) = -x for the Exp(1) cdf
        const double log_1mf = -gaps[n - 1 - i];
        s += (2.0 * static_cast<double>(i) + 1.0) * (log_f + log_1mf);
    }
    return -nd - s / nd;
}

// 5% critical value of A^2 for a fully specified null (no estimated
// parameters; the rescaling already pins them).
constexpr double ad_critical_5pct = 2.492;

struct GofUser {
    int user = -1;
    std::size_t n_gaps = 0;
    double ks_stat = 0.0;
    double ks_pvalue = 1.0;
    bool ks_reject = false;
    double ad_stat = 0.0;
    bool ad_reject = false;
};

struct GofReport {
    std::vector<GofUser> users;
    std::size_t skipped_users = 0;  // fewer than two events in the window
    double ks_reject_fraction = 0.0;
    double ad_reject_fraction = 0.0;
};

inline GofReport gof_tests(const std::vector<std::vector<double>>& gaps_per_user, double level = 0.05) {
    GofReport report;
    std::size_t ks_rejects = 0, ad_rejects = 0;
    for (std::size_t u = 0; u < gaps_per_user.size(); ++u) {
        const auto& gaps = gaps_per_user[u];
        if (gaps.empty()) {
            ++report.skipped_users;
            continue;
        }
        GofUser gu;
        gu.user = static_cast<int>(u);
        gu.n_gaps = gaps.size();
        gu.ks_stat = ks_statistic_exp1(gaps);
        gu.ks_pvalue = ks_pvalue(gu.ks_stat, gaps.size());
        gu.ks_reject = gu.ks_pvalue < level;
        gu.ad_stat = ad_statistic_exp1(gaps);
        gu.ad_reject = gu.ad_stat > ad_critical_5pct;
        ks_rejects += gu.ks_reject;
        ad_rejects += gu.ad_reject;
        report.users.push_back(std::move(gu));
    }
    if (!report.users.empty()) {
        report.ks_reject_fraction = static_cast<double>(ks_rejects) / static_cast<double>(report.users.size());
        report.ad_reject_fraction = static_cast<double>(ad_rejects) / static_cast<double>(report.users.size());
    }
    return report;
}

struct HeldoutResult {
    std::vector<double> logliks;  // aligned with the scored events
    PerplexityResult perplexity;
    GofReport gof;
};

inline HeldoutResult evaluate_heldout(const Model& m, std::span<const Event> test_events) {
    if (test_events.empty()) throw std::invalid_argument("evaluate_heldout: empty test set");
    EvalState state(m);
    HeldoutResult out;
    out.logliks.reserve(test_events.size());
    for (const auto& e : test_events) {
        out.logliks.push_back(state.score(e));
        state.advance(e);
    }
    out.perplexity = perplexity(out.logliks);
    out.gof = gof_tests(state.rescaled_gaps());
    return out;
}

// ---------------------------------------------------------------------
// Pattern and user analytics of a fitted model.

struct PatternSummary {
    int pattern = -1;
    double popularity = 0.0;  // share of tasks
    double burstiness = 0.0;  // expected self-excited events in the first month of a unit-rate task
    double alpha = 0.0;
    std::vector<std::pair<int, double>> top_words;  // (word id, posterior-mean probability)
};

inline std::vector<PatternSummary> pattern_report(const Model& m, int top_k = 10) {
    long total_tasks = 0;
    for (const auto& p : m.patterns) total_tasks += p.tasks;
    std::vector<PatternSummary> out;
    out.reserve(m.patterns.size());
    const std::size_t vocab_size = m.hyper.vocab.size();
    for (std::size_t l = 0; l < m.patterns.size(); ++l) {
        const PatternRecord& p = m.patterns[l];
        PatternSummary s;
        s.pattern = static_cast<int>(l);
        s.popularity = total_tasks > 0 ? static_cast<double>(p.tasks) / static_cast<double>(total_tasks) : 0.0;
        s.alpha = p.alpha;
        s.burstiness = expected_count(1.0, {p.alpha, m.hyper.nu}, 1.0) - 1.0;
        std::vector<int> order(vocab_size);
        for (std::size_t w = 0; w < vocab_size; ++w) order[w] = static_cast<int>(w);
        const int k = std::min<int>(top_k, static_cast<int>(vocab_size));
        std::partial_sort(order.begin(), order.begin() + k, order.end(), [&](int x, int y) {
            const auto cx = p.word_counts[static_cast<std::size_t>(x)];
            const auto cy = p.word_counts[static_cast<std::size_t>(y)];
            return cx != cy ? cx > cy : x < y;
        });
        const double denom = static_cast<double>(p.total_words) + m.hyper.eta0 * static_cast<double>(vocab_size);
        for (int i = 0; i < k; ++i) {
            const int w = order[static_cast<std::size_t>(i)];
            s.top_words.emplace_back(
                w, (static_cast<double>(p.word_counts[static_cast<std::size_t>(w)]) + m.hyper.eta0) / denom);
        }
        out.push_back(std::move(s));
    }
    return out;
}

struct UserSummary {
    int user = -1;
    double mu = 0.0;
    long tasks = 0;
    int patterns_adopted = 0;
    double mean_task_duration = 0.0;  // months; single-event tasks contribute 0
};

inline std::vector<UserSummary> user_report(const Model& m) {
    std::vector<UserSummary> out(m.users.size());
    std::vector<std::unordered_map<int, char>> seen(m.users.size());
    std::vector<double> duration_sum(m.users.size(), 0.0);
    for (std::size_t u = 0; u < m.users.size(); ++u) {
        out[u].user = static_cast<int>(u);
        out[u].mu = m.mu.at(u);
    }
    for (const auto& t : m.tasks) {
        const std::size_t u = static_cast<std::size_t>(t.user);
        ++out[u].tasks;
        seen[u][t.pattern] = 1;
        duration_sum[u] += t.last_time - t.first_time;
    }
    for (std::size_t u = 0; u < m.users.size(); ++u) {
        out[u].patterns_adopted = static_cast<int>(seen[u].size());
        if (out[u].tasks > 0) out[u].mean_task_duration = duration_sum[u] / static_cast<double>(out[u].tasks);
    }
    return out;
}

}  // namespace hdhp
