#pragma once

#include <cmath>
#include <fstream>
#include <limits>
#include <stdexcept>
#include <string>
#include <unordered_map>
#include <vector>

#include <json.hpp>

#include "hdhp/generative.hpp"
#include "hdhp/smc.hpp"

namespace hdhp {

constexpr int snapshot_format_version = 1;

// Event times are decimal months since the dataset's epoch. Ingesters
// holding raw UNIX timestamps can convert with the mean Gregorian month
// (30.436875 days).
constexpr double seconds_per_month = 2629746.0;

inline double epoch_seconds_to_months(double seconds, double origin_seconds) {
    return (seconds - origin_seconds) / seconds_per_month;
}

// One line of the JSONL event wire format.
struct EventRecord {
    double time = 0.0;
    std::string user;
    std::vector<std::string> words;
    int true_pattern = -1;
    int true_task = -1;
};

inline std::vector<EventRecord> load_event_records(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw std::runtime_error("cannot open events file: " + path);
    std::vector<EventRecord> records;
    std::string line;
    std::size_t line_no = 0;
    double prev_time = -std::numeric_limits<double>::infinity();
    while (std::getline(in, line)) {
        ++line_no;
        if (line.empty()) continue;
        nlohmann::json j;
        try {
            j = nlohmann::json::parse(line);
        } catch (const std::exception& ex) {
            throw std::runtime_error(path + " line " + std::to_string(line_no) + ": " + ex.what());
        }
        auto fail = [&](const std::string& what) -> std::runtime_error {
            return std::runtime_error(path + " line " + std::to_string(line_no) + ": " + what);
        };
        if (!j.is_object() || !j.contains("time") || !j.contains("user") || !j.contains("words"))
            throw fail("expected an object with time, user and words");
        EventRecord rec;
        if (!j["time"].is_number()) throw fail("time must be a number");
        rec.time = j["time"].get<double>();
        if (!std::isfinite(rec.time) || rec.time < 0.0) throw fail("time must be finite and >= 0");
        if (!j["user"].is_string()) throw fail("user must be a string");
        rec.user = j["user"].get<std::string>();
        if (!j["words"].is_array() || j["words"].empty()) throw fail("words must be a non-empty array");
        for (const auto& w : j["words"]) {
            if (!w.is_string()) throw fail("words must be strings");
            rec.words.push_back(w.get<std::string>());
        }
        if (j.contains("true_pattern")) rec.true_pattern = j["true_pattern"].get<int>();
        if (j.contains("true_task")) rec.true_task = j["true_task"].get<int>();
        if (rec.time < prev_time) throw fail("events out of order");
        prev_time = rec.time;
        records.push_back(std::move(rec));
    }
    if (records.empty()) throw std::runtime_error(path + ": no events");
    return records;
}

// Intern records against fresh tables; vocab and user ids are assigned in
// first-appearance order unless an explicit vocab is supplied.
inline Dataset make_dataset(const std::vector<EventRecord>& records,
                            const std::vector<std::string>& explicit_vocab = {}) {
    Dataset out;
    std::unordered_map<std::string, int> word_ids, user_ids;
    out.vocab = explicit_vocab;
    for (std::size_t i = 0; i < out.vocab.size(); ++i) word_ids[out.vocab[i]] = static_cast<int>(i);
    const bool fixed_vocab = !explicit_vocab.empty();
    out.events.reserve(records.size());
    for (const auto& rec : records) {
        Event e;
        e.time = rec.time;
        auto uit = user_ids.find(rec.user);
        if (uit == user_ids.end()) {
            uit = user_ids.emplace(rec.user, static_cast<int>(out.users.size())).first;
            out.users.push_back(rec.user);
        }
        e.user = uit->second;
        for (const auto& w : rec.words) {
            auto wit = word_ids.find(w);
            if (wit == word_ids.end()) {
                if (fixed_vocab) throw std::runtime_error("word not in the supplied vocab: " + w);
                wit = word_ids.emplace(w, static_cast<int>(out.vocab.size())).first;
                out.vocab.push_back(w);
            }
            e.words.push_back(wit->second);
        }
        e.true_pattern = rec.true_pattern;
        e.true_task = rec.true_task;
        out.events.push_back(std::move(e));
    }
    return out;
}

inline Dataset load_events(const std::string& path, const std::vector<std::string>& explicit_vocab = {}) {
    return make_dataset(load_event_records(path), explicit_vocab);
}

// Intern records against a fitted model's tables. Events of users the model
// has never seen are dropped (and counted); unknown words are an error.
struct MappedEvents {
    std::vector<Event> events;
    std::size_t dropped_unknown_users = 0;
};

inline MappedEvents map_events(const std::vector<EventRecord>& records,
                               const std::vector<std::string>& vocab,
                               const std::vector<std::string>& users) {
    std::unordered_map<std::string, int> word_ids, user_ids;
    for (std::size_t i = 0; i < vocab.size(); ++i) word_ids[vocab[i]] = static_cast<int>(i);
    for (std::size_t i = 0; i < users.size(); ++i) user_ids[users[i]] = static_cast<int>(i);
    MappedEvents out;
    for (const auto& rec : records) {
        const auto uit = user_ids.find(rec.user);
        if (uit == user_ids.end()) {
            ++out.dropped_unknown_users;
            continue;
        }
        Event e;
        e.time = rec.time;
        e.user = uit->second;
        for (const auto& w : rec.words) {
            const auto wit = word_ids.find(w);
            if (wit == word_ids.end())
                throw std::runtime_error("word not in the model vocab: " + w +
                                         " (was the model fit on a different vocab?)");
            e.words.push_back(wit->second);
        }
        e.true_pattern = rec.true_pattern;
        e.true_task = rec.true_task;
        out.events.push_back(std::move(e));
    }
    return out;
}

inline void save_events(const Dataset& data, const std::string& path) {
    std::ofstream out(path);
    if (!out) throw std::runtime_error("cannot write events file: " + path);
    for (const auto& e : data.events) {
        nlohmann::json j;
        j["time"] = e.time;
        j["user"] = data.users.at(static_cast<std::size_t>(e.user));
        nlohmann::json words = nlohmann::json::array();
        for (int w : e.words) words.push_back(data.vocab.at(static_cast<std::size_t>(w)));
        j["words"] = std::move(words);
        if (e.true_pattern >= 0) j["true_pattern"] = e.true_pattern;
        if (e.true_task >= 0) j["true_task"] = e.true_task;
        out << j.dump() << '\n';
    }
    if (!out) throw std::runtime_error("failed writing events file: " + path);
}

// ---------------------------------------------------------------------
// Hyperparameters and synthetic configs as flat JSON.

inline Hyperparams hyperparams_from_json(const nlohmann::json& j) {
    Hyperparams h;
    h.beta = j.value("beta", h.beta);
    h.eta0 = j.value("eta0", h.eta0);
    h.tau1 = j.value("tau1", h.tau1);
    h.tau2 = j.value("tau2", h.tau2);
    h.nu = j.value("nu", h.nu);
    h.mu_smoothing = j.value("mu_smoothing", h.mu_smoothing);
    h.mu0 = j.value("mu0", h.mu0);
    h.particles = j.value("particles", h.particles);
    h.ess_fraction = j.value("ess_fraction", h.ess_fraction);
    h.seed = j.value("seed", h.seed);
    if (j.contains("vocab")) h.vocab = j["vocab"].get<std::vector<std::string>>();
    return h;
}

inline nlohmann::json hyperparams_to_json(const Hyperparams& h, bool include_vocab = true) {
    nlohmann::json j;
    j["beta"] = h.beta;
    j["eta0"] = h.eta0;
    j["tau1"] = h.tau1;
    j["tau2"] = h.tau2;
    j["nu"] = h.nu;
    j["mu_smoothing"] = h.mu_smoothing;
    j["mu0"] = h.mu0;
    j["particles"] = h.particles;
    j["ess_fraction"] = h.ess_fraction;
    j["seed"] = h.seed;
    if (include_vocab) j["vocab"] = h.vocab;
    return j;
}

inline SyntheticConfig synthetic_config_from_json(const nlohmann::json& j) {
    SyntheticConfig c;
    c.n_users = j.value("n_users", c.n_users);
    c.mu_shape = j.value("mu_shape", c.mu_shape);
    c.mu_scale = j.value("mu_scale", c.mu_scale);
    c.n_patterns = j.value("n_patterns", c.n_patterns);
    if (j.contains("pi")) c.pi = j["pi"].get<std::vector<double>>();
    c.pi_concentration = j.value("pi_concentration", c.pi_concentration);
    c.alpha_shape = j.value("alpha_shape", c.alpha_shape);
    c.alpha_scale = j.value("alpha_scale", c.alpha_scale);
    c.support_size = j.value("support_size", c.support_size);
    c.theta_concentration = j.value("theta_concentration", c.theta_concentration);
    c.vocab_size = j.value("vocab_size", c.vocab_size);
    c.nu = j.value("nu", c.nu);
    c.words_per_event = j.value("words_per_event", c.words_per_event);
    c.n_events = j.value("n_events", c.n_events);
    c.horizon = j.value("horizon", c.horizon);
    c.crp_mode = j.value("crp_mode", c.crp_mode);
    c.beta = j.value("beta", c.beta);
    c.eta0 = j.value("eta0", c.eta0);
    if (j.contains("mu_override")) c.mu_override = j["mu_override"].get<std::vector<double>>();
    if (j.contains("alpha_override")) c.alpha_override = j["alpha_override"].get<std::vector<double>>();
    c.seed = j.value("seed", c.seed);
    return c;
}

inline nlohmann::json synthetic_config_to_json(const SyntheticConfig& c) {
    nlohmann::json j;
    j["n_users"] = c.n_users;
    j["mu_shape"] = c.mu_shape;
    j["mu_scale"] = c.mu_scale;
    j["n_patterns"] = c.n_patterns;
    if (!c.pi.empty()) j["pi"] = c.pi;
    j["pi_concentration"] = c.pi_concentration;
    j["alpha_shape"] = c.alpha_shape;
    j["alpha_scale"] = c.alpha_scale;
    j["support_size"] = c.support_size;
    j["theta_concentration"] = c.theta_concentration;
    j["vocab_size"] = c.vocab_size;
    j["nu"] = c.nu;
    j["words_per_event"] = c.words_per_event;
    j["n_events"] = c.n_events;
    j["horizon"] = c.horizon;
    j["crp_mode"] = c.crp_mode;
    j["beta"] = c.beta;
    j["eta0"] = c.eta0;
    if (!c.mu_override.empty()) j["mu_override"] = c.mu_override;
    if (!c.alpha_override.empty()) j["alpha_override"] = c.alpha_override;
    j["seed"] = c.seed;
    return j;
}

// ---------------------------------------------------------------------
// Model snapshots.

inline nlohmann::json snapshot_to_json(const Model& m) {
    nlohmann::json j;
    j["format"] = "hdhp-model";
    j["format_version"] = snapshot_format_version;
    j["seed"] = m.seed;
    j["train_begin"] = m.train_begin;
    j["train_end"] = m.train_end;
    j["hyper"] = hyperparams_to_json(m.hyper, false);
    j["vocab"] = m.hyper.vocab;
    nlohmann::json users = nlohmann::json::array();
    for (std::size_t u = 0; u < m.users.size(); ++u)
        users.push_back({{"id", m.users[u]}, {"mu", m.mu.at(u)}});
    j["users"] = std::move(users);
    nlohmann::json patterns = nlohmann::json::array();
    for (const auto& p : m.patterns)
        patterns.push_back({{"alpha", p.alpha},
                            {"tasks", p.tasks},
                            {"word_counts", p.word_counts},
                            {"total_words", p.total_words}});
    j["patterns"] = std::move(patterns);
    nlohmann::json tasks = nlohmann::json::array();
    for (const auto& t : m.tasks)
        tasks.push_back({{"user", t.user},
                         {"pattern", t.pattern},
                         {"count", t.count},
                         {"first_time", t.first_time},
                         {"last_time", t.last_time},
                         {"excitation_sum", t.excitation_sum}});
    j["tasks"] = std::move(tasks);
    nlohmann::json assignments = nlohmann::json::array();
    for (const auto& [task, pattern] : m.assignments) assignments.push_back({task, pattern});
    j["assignments"] = std::move(assignments);
    return j;
}

inline Model snapshot_from_json(const nlohmann::json& j) {
    if (!j.is_object() || j.value("format", "") != std::string("hdhp-model"))
        throw std::runtime_error("not a model snapshot");
    const int version = j.value("format_version", -1);
    if (version != snapshot_format_version)
        throw std::runtime_error("snapshot format version mismatch: file has " + std::to_string(version) +
                                 ", this build reads " + std::to_string(snapshot_format_version));
    Model m;
    m.seed = j.at("seed").get<std::uint64_t>();
    m.train_begin = j.at("train_begin").get<double>();
    m.train_end = j.at("train_end").get<double>();
    m.hyper = hyperparams_from_json(j.at("hyper"));
    m.hyper.vocab = j.at("vocab").get<std::vector<std::string>>();
    for (const auto& u : j.at("users")) {
        m.users.push_back(u.at("id").get<std::string>());
        m.mu.push_back(u.at("mu").get<double>());
    }
    for (const auto& p : j.at("patterns")) {
        PatternRecord rec;
        rec.alpha = p.at("alpha").get<double>();
        rec.tasks = p.at("tasks").get<long>();
        rec.word_counts = p.at("word_counts").get<std::vector<std::uint32_t>>();
        rec.total_words = p.at("total_words").get<std::uint64_t>();
        m.patterns.push_back(std::move(rec));
    }
    for (const auto& t : j.at("tasks")) {
        TaskRecord rec;
        rec.user = t.at("user").get<int>();
        rec.pattern = t.at("pattern").get<int>();
        rec.count = t.at("count").get<long>();
        rec.first_time = t.at("first_time").get<double>();
        rec.last_time = t.at("last_time").get<double>();
        rec.excitation_sum = t.at("excitation_sum").get<double>();
        m.tasks.push_back(rec);
    }
    for (const auto& a : j.at("assignments"))
        m.assignments.emplace_back(a.at(0).get<long>(), a.at(1).get<int>());
    return m;
}

inline std::string snapshot_to_string(const Model& m) { return snapshot_to_json(m).dump(2) + "\n"; }

inline void save_snapshot(const Model& m, const std::string& path) {
    std::ofstream out(path);
    if (!out) throw std::runtime_error("cannot write snapshot: " + path);
    out << snapshot_to_string(m);
    if (!out) throw std::runtime_error("failed writing snapshot: " + path);
}

inline Model load_snapshot(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw std::runtime_error("cannot open snapshot: " + path);
    nlohmann::json j;
    try {
        j = nlohmann::json::parse(in);
    } catch (const std::exception& ex) {
        throw std::runtime_error(path + ": " + ex.what());
    }
    return snapshot_from_json(j);
}

// ---------------------------------------------------------------------
// Ground truth sidecar for generated streams.

inline nlohmann::json truth_to_json(const GroundTruth& truth, const SyntheticConfig& cfg) {
    nlohmann::json j;
    j["mu"] = truth.mu;
    j["pi"] = truth.pi;
    nlohmann::json patterns = nlohmann::json::array();
    for (const auto& p : truth.patterns) patterns.push_back({{"alpha", p.alpha}, {"theta", p.theta}});
    j["patterns"] = std::move(patterns);
    j["config"] = synthetic_config_to_json(cfg);
    return j;
}

inline GroundTruth truth_from_json(const nlohmann::json& j) {
    GroundTruth t;
    t.mu = j.at("mu").get<std::vector<double>>();
    t.pi = j.at("pi").get<std::vector<double>>();
    for (const auto& p : j.at("patterns")) {
        PatternParams pp;
        pp.alpha = p.at("alpha").get<double>();
        pp.theta = p.at("theta").get<std::vector<double>>();
        t.patterns.push_back(std::move(pp));
    }
    return t;
}

inline void save_json(const nlohmann::json& j, const std::string& path) {
    std::ofstream out(path);
    if (!out) throw std::runtime_error("cannot write " + path);
    out << j.dump(2) << "\n";
    if (!out) throw std::runtime_error("failed writing " + path);
}

inline nlohmann::json load_json(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw std::runtime_error("cannot open " + path);
    try {
        return nlohmann::json::parse(in);
    } catch (const std::exception& ex) {
        throw std::runtime_error(path + ": " + ex.what());
    }
}

}  // namespace hdhp
