// Command-line front end: generate | fit | evaluate | report.

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "hdhp/evaluation.hpp"
#include "hdhp/generative.hpp"
#include "hdhp/io.hpp"
#include "hdhp/smc.hpp"

namespace {

constexpr const char* tool_version = "hdhp 0.1.0";

std::string fmt(double x) {
    char buf[40];
    std::snprintf(buf, sizeof(buf), "%.12g", x);
    return buf;
}

void write_manifest(const std::string& path, const std::string& command, const nlohmann::json& inputs,
                    const std::vector<std::string>& outputs, std::uint64_t seed) {
    nlohmann::json j;
    j["command"] = command;
    j["inputs"] = inputs;
    j["outputs"] = outputs;
    j["seed"] = seed;
    j["tool_version"] = tool_version;
    j["snapshot_format_version"] = hdhp::snapshot_format_version;
    hdhp::save_json(j, path);
}

struct SplitOptions {
    std::optional<double> split_time;
    std::optional<double> train_frac;

    void attach(CLI::App* cmd) {
        cmd->add_option("--split-time", split_time,
                        "train/test boundary in months (train: t < boundary, test: t >= boundary)");
        cmd->add_option("--train-frac", train_frac, "fraction of events (by count) forming the training side")
            ->check(CLI::Range(0.0, 1.0));
    }

    // Index of the first test event under this split.
    std::size_t boundary(const std::vector<hdhp::EventRecord>& records) const {
        if (split_time && train_frac) throw std::runtime_error("use either --split-time or --train-frac, not both");
        if (split_time) {
            std::size_t i = 0;
            while (i < records.size() && records[i].time < *split_time) ++i;
            return i;
        }
        if (train_frac) return static_cast<std::size_t>(*train_frac * static_cast<double>(records.size()));
        return records.size();
    }
};

int run_generate(const std::string& config_path, const std::string& out_path, const std::string& truth_path,
                 std::optional<std::uint64_t> seed) {
    hdhp::SyntheticConfig cfg = hdhp::synthetic_config_from_json(hdhp::load_json(config_path));
    if (seed) cfg.seed = *seed;
    const hdhp::GenerateResult result = hdhp::generate(cfg);
    hdhp::save_events(result.data, out_path);
    hdhp::save_json(hdhp::truth_to_json(result.truth, cfg), truth_path);
    write_manifest(out_path + ".manifest.json", "generate", hdhp::synthetic_config_to_json(cfg),
                   {out_path, truth_path}, cfg.seed);
    std::cout << "generated " << result.data.events.size() << " events, " << result.data.users.size()
              << " users, " << result.truth.patterns.size() << " patterns -> " << out_path << "\n";
    return 0;
}

int run_fit(const std::string& events_path, const std::string& hyper_path, const std::string& out_path,
            std::optional<int> particles, std::optional<std::uint64_t> seed, int threads,
            const SplitOptions& split) {
    hdhp::Hyperparams hyper;
    if (!hyper_path.empty()) hyper = hdhp::hyperparams_from_json(hdhp::load_json(hyper_path));
    if (particles) hyper.particles = *particles;
    if (seed) hyper.seed = *seed;

    const std::vector<hdhp::EventRecord> records = hdhp::load_event_records(events_path);
    // symbol tables cover the whole file, so a later evaluate can map the
    // held-out slice; training itself sees only the slice below the split
    hdhp::Dataset data = hdhp::make_dataset(records, hyper.vocab);
    const std::size_t n_train = split.boundary(records);
    if (n_train == 0) throw std::runtime_error("the training split is empty");
    data.events.resize(n_train);
    hyper.vocab = data.vocab;

    hdhp::FitOptions opts;
    opts.threads = threads;
    const hdhp::FitResult result = hdhp::fit(data, hyper, opts);
    hdhp::save_snapshot(result.model, out_path);

    nlohmann::json inputs;
    inputs["events"] = events_path;
    inputs["hyper"] = hdhp::hyperparams_to_json(hyper, false);
    inputs["vocab_size"] = hyper.vocab.size();
    inputs["n_train_events"] = n_train;
    inputs["threads"] = threads;
    if (split.split_time) inputs["split_time"] = *split.split_time;
    if (split.train_frac) inputs["train_frac"] = *split.train_frac;
    write_manifest(out_path + ".manifest.json", "fit", inputs, {out_path}, hyper.seed);

    std::cout << "fit " << n_train << " events with " << hyper.particles << " particles: " << result.model.patterns.size()
              << " patterns, " << result.model.tasks.size() << " tasks, log-evidence "
              << fmt(result.log_evidence.empty() ? 0.0 : result.log_evidence.back()) << ", " << result.resamples
              << " resamples -> " << out_path << "\n";
    return 0;
}

int run_evaluate(const std::string& model_path, const std::string& test_path, const std::string& report_dir,
                 const SplitOptions& split) {
    const hdhp::Model model = hdhp::load_snapshot(model_path);
    std::vector<hdhp::EventRecord> records = hdhp::load_event_records(test_path);
    std::size_t first_test;
    if (split.split_time || split.train_frac) {
        first_test = split.boundary(records);
    } else {
        first_test = 0;
        while (first_test < records.size() && records[first_test].time <= model.train_end) ++first_test;
    }
    records.erase(records.begin(), records.begin() + static_cast<std::ptrdiff_t>(first_test));
    if (records.empty()) throw std::runtime_error("the test split is empty");

    const hdhp::MappedEvents mapped = hdhp::map_events(records, model.hyper.vocab, model.users);
    if (mapped.events.empty()) throw std::runtime_error("no test events belong to users the model knows");
    const hdhp::HeldoutResult result = hdhp::evaluate_heldout(model, mapped.events);

    std::filesystem::create_directories(report_dir);
    {
        std::ofstream csv(report_dir + "/heldout_loglik.csv");
        csv << "time,user,loglik\n";
        for (std::size_t i = 0; i < mapped.events.size(); ++i) {
            const auto& e = mapped.events[i];
            csv << fmt(e.time) << ',' << model.users.at(static_cast<std::size_t>(e.user)) << ','
                << fmt(result.logliks[i]) << '\n';
        }
    }
    {
        std::ofstream csv(report_dir + "/gof.csv");
        csv << "user,n_gaps,ks_stat,ks_pvalue,ks_reject,ad_stat,ad_reject\n";
        for (const auto& gu : result.gof.users)
            csv << model.users.at(static_cast<std::size_t>(gu.user)) << ',' << gu.n_gaps << ',' << fmt(gu.ks_stat)
                << ',' << fmt(gu.ks_pvalue) << ',' << (gu.ks_reject ? 1 : 0) << ',' << fmt(gu.ad_stat) << ','
                << (gu.ad_reject ? 1 : 0) << '\n';
    }
    nlohmann::json summary;
    summary["n_test_events"] = result.logliks.size();
    summary["dropped_unknown_users"] = mapped.dropped_unknown_users;
    summary["perplexity"] = result.perplexity.n_zero > 0 ? nlohmann::json("inf") : nlohmann::json(result.perplexity.value);
    summary["zero_probability_events"] = result.perplexity.n_zero;
    summary["mean_loglik"] = result.perplexity.n_zero > 0
                                 ? nlohmann::json("-inf")
                                 : nlohmann::json(-std::log(result.perplexity.value));
    summary["ks_reject_fraction"] = result.gof.ks_reject_fraction;
    summary["ad_reject_fraction"] = result.gof.ad_reject_fraction;
    summary["gof_users"] = result.gof.users.size();
    summary["gof_skipped_users"] = result.gof.skipped_users;
    hdhp::save_json(summary, report_dir + "/summary.json");

    nlohmann::json inputs;
    inputs["model"] = model_path;
    inputs["test"] = test_path;
    if (split.split_time) inputs["split_time"] = *split.split_time;
    if (split.train_frac) inputs["train_frac"] = *split.train_frac;
    write_manifest(report_dir + "/manifest.json", "evaluate", inputs,
                   {report_dir + "/heldout_loglik.csv", report_dir + "/gof.csv", report_dir + "/summary.json"},
                   model.seed);

    std::cout << "evaluated " << result.logliks.size() << " events: perplexity "
              << (result.perplexity.n_zero > 0 ? std::string("inf") : fmt(result.perplexity.value))
              << ", KS rejects " << fmt(result.gof.ks_reject_fraction) << ", AD rejects "
              << fmt(result.gof.ad_reject_fraction) << " -> " << report_dir << "\n";
    return 0;
}

int run_report(const std::string& model_path, const std::string& out_dir, int top_words) {
    const hdhp::Model model = hdhp::load_snapshot(model_path);
    std::filesystem::create_directories(out_dir);
    const auto patterns = hdhp::pattern_report(model, top_words);
    {
        std::ofstream csv(out_dir + "/patterns.csv");
        csv << "pattern,popularity,burstiness,alpha,tasks,top_words\n";
        for (const auto& p : patterns) {
            csv << p.pattern << ',' << fmt(p.popularity) << ',' << fmt(p.burstiness) << ',' << fmt(p.alpha) << ','
                << model.patterns.at(static_cast<std::size_t>(p.pattern)).tasks << ',';
            for (std::size_t i = 0; i < p.top_words.size(); ++i) {
                if (i) csv << ' ';
                csv << model.hyper.vocab.at(static_cast<std::size_t>(p.top_words[i].first));
            }
            csv << '\n';
        }
    }
    const auto users = hdhp::user_report(model);
    {
        std::ofstream csv(out_dir + "/users.csv");
        csv << "user,mu,tasks,patterns_adopted,mean_task_duration\n";
        for (const auto& u : users)
            csv << model.users.at(static_cast<std::size_t>(u.user)) << ',' << fmt(u.mu) << ',' << u.tasks << ','
                << u.patterns_adopted << ',' << fmt(u.mean_task_duration) << '\n';
    }
    write_manifest(out_dir + "/manifest.json", "report", {{"model", model_path}},
                   {out_dir + "/patterns.csv", out_dir + "/users.csv"}, model.seed);
    std::cout << "reported " << patterns.size() << " patterns, " << users.size() << " users -> " << out_dir << "\n";
    return 0;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"hierarchical Dirichlet Hawkes process: simulation, inference and evaluation"};
    app.require_subcommand(1);

    auto* gen = app.add_subcommand("generate", "forward-sample a labeled synthetic event stream");
    std::string gen_config, gen_out, gen_truth;
    std::optional<std::uint64_t> gen_seed;
    gen->add_option("--config", gen_config, "synthetic config (json)")->required();
    gen->add_option("--out", gen_out, "output events (jsonl)")->required();
    gen->add_option("--truth", gen_truth, "output ground truth (json)")->required();
    gen->add_option("--seed", gen_seed, "override the config seed");

    auto* fit = app.add_subcommand("fit", "run posterior inference over an event stream");
    std::string fit_events, fit_hyper, fit_out;
    std::optional<int> fit_particles;
    std::optional<std::uint64_t> fit_seed;
    int fit_threads = 1;
    SplitOptions fit_split;
    fit->add_option("--events", fit_events, "input events (jsonl)")->required();
    fit->add_option("--hyper", fit_hyper, "hyperparameters (json); defaults apply when omitted");
    fit->add_option("--out", fit_out, "output model snapshot (json)")->required();
    fit->add_option("--particles", fit_particles, "number of particles")->check(CLI::PositiveNumber);
    fit->add_option("--seed", fit_seed, "random seed");
    fit->add_option("--threads", fit_threads, "worker threads for the particle loop")->check(CLI::PositiveNumber);
    fit_split.attach(fit);

    auto* eval = app.add_subcommand("evaluate", "held-out likelihood, perplexity and goodness of fit");
    std::string eval_model, eval_test, eval_report;
    SplitOptions eval_split;
    eval->add_option("--model", eval_model, "model snapshot (json)")->required();
    eval->add_option("--test", eval_test, "events file holding the held-out slice (jsonl)")->required();
    eval->add_option("--report", eval_report, "output report directory")->required();
    eval_split.attach(eval);

    auto* rep = app.add_subcommand("report", "pattern popularity/burstiness and user behavior tables");
    std::string rep_model, rep_out;
    int rep_top_words = 10;
    rep->add_option("--model", rep_model, "model snapshot (json)")->required();
    rep->add_option("--out", rep_out, "output directory")->required();
    rep->add_option("--top-words", rep_top_words, "words listed per pattern")->check(CLI::PositiveNumber);

    CLI11_PARSE(app, argc, argv);

    try {
        if (gen->parsed()) return run_generate(gen_config, gen_out, gen_truth, gen_seed);
        if (fit->parsed()) return run_fit(fit_events, fit_hyper, fit_out, fit_particles, fit_seed, fit_threads, fit_split);
        if (eval->parsed()) return run_evaluate(eval_model, eval_test, eval_report, eval_split);
        if (rep->parsed()) return run_report(rep_model, rep_out, rep_top_words);
    } catch (const std::exception& ex) {
        std::cerr << "error: " << ex.what() << "\n";
        return 1;
    }
    return 0;
}
