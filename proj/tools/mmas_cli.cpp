// Command-line front end: run, report, attack-preview, validate, replay, make-dataset.

#include "mmas/error.hpp"
#include "mmas/experiment.hpp"

#include <CLI11.hpp>

#include <filesystem>
#include <iostream>

namespace fs = std::filesystem;
using namespace mmas;

namespace {

constexpr int kExitOk = 0;
constexpr int kExitConfig = 1;
constexpr int kExitFailures = 2;

int cmd_run(const std::string& config_path, std::optional<std::size_t> workers, std::optional<std::size_t> stop_after,
            bool reference, bool quiet) {
    auto config = load_config(config_path);
    if (workers) config.workers = *workers;
    if (reference) config.reference_values = true;
    RunOptions opts;
    opts.stop_after = stop_after;
    if (!quiet) {
        opts.progress = [](std::size_t done, std::size_t total) {
            std::cerr << "\r" << done << "/" << total << " runs" << std::flush;
        };
    }
    auto outcome = run_experiment(config, opts);
    if (!quiet) std::cerr << "\n";
    std::cerr << "executed " << outcome.executed << ", reused " << outcome.reused << "\n";
    if (!outcome.complete) {
        std::cerr << "stopped before completion; rerun to resume\n";
        return kExitOk;
    }
    std::cout << render_report_table(outcome.report, config.reference_values);
    std::cerr << "report written to " << (fs::path(config.output_dir) / "report.txt").string() << "\n";
    if (outcome.failed_threshold) {
        std::cerr << outcome.report.errored_runs << " of " << outcome.report.runs
                  << " runs ended in error, above the failure threshold\n";
        return kExitFailures;
    }
    return kExitOk;
}

int cmd_report(const std::string& config_path, const std::string& format, bool reference) {
    auto config = load_config(config_path);
    auto report = build_report(config);
    if (format == "json") std::cout << report_to_json(report).dump(2) << "\n";
    else std::cout << render_report_table(report, reference || config.reference_values);
    return kExitOk;
}

int cmd_validate(const std::string& config_path) {
    auto config = load_config(config_path);
    auto dataset = ingest_dataset(config.dataset_path, config.filter);
    for (const auto& w : dataset.warnings) std::cerr << "warning: " << w << "\n";
    auto system = load_system(config);
    std::cout << "ok: " << dataset.samples.size() << " samples, " << system.topology.agents().size() << " agents, "
              << config.paradigms.size() << " paradigm(s), " << config.backends.size() << " backend(s), "
              << config.attacks.size() << " attack condition(s)\n"
              << "config digest " << config_digest(config) << "\n";
    return kExitOk;
}

int cmd_preview(const std::string& config_path, const std::string& attack_ref, const std::string& sample_id) {
    auto config = load_config(config_path);
    auto labels = condition_labels(config);
    std::optional<std::size_t> index;
    for (std::size_t i = 0; i < labels.size(); ++i) {
        if (labels[i] == attack_ref || std::to_string(i) == attack_ref) index = i;
    }
    if (!index) throw Error(ErrorCode::ConfigInvalid, "attacks: no attack condition '" + attack_ref + "'");
    auto dataset = ingest_dataset(config.dataset_path, config.filter);
    if (dataset.samples.empty()) throw Error(ErrorCode::InvalidInput, "dataset is empty");
    const MultimodalInput* sample = &dataset.samples.front();
    if (!sample_id.empty()) {
        sample = nullptr;
        for (const auto& s : dataset.samples) {
            if (s.sample_id == sample_id) sample = &s;
        }
        if (!sample) throw Error(ErrorCode::InvalidInput, "no sample '" + sample_id + "'");
    }
    std::cout << attack_preview(config, config.attacks[*index], *sample);
    return kExitOk;
}

int cmd_replay(const std::string& transcript_path, const std::string& config_path, std::string recording_path) {
    auto config = load_config(config_path);
    auto system = load_system(config);
    auto transcript = transcript_from_jsonl(read_file(transcript_path));
    if (recording_path.empty()) {
        fs::path p(transcript_path);
        recording_path = (p.parent_path().parent_path() / "recordings" / p.filename()).string();
    }
    auto recording = Recording::load(recording_path);
    ExecuteOptions opts;
    opts.global_budget = config.global_budget;
    replay(transcript, recording, system.topology, system.tools, transcript.paradigm, opts);
    std::cout << "replay identical: " << transcript.events.size() << " events, termination "
              << nlohmann::json(transcript.termination).get<std::string>() << "\n";
    return kExitOk;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"Red-teaming harness for multimodal multi-agent systems"};
    app.require_subcommand(1);

    std::string config_path;
    std::optional<std::size_t> workers, stop_after;
    bool reference = false, quiet = false;
    auto* run = app.add_subcommand("run", "Execute every condition of an experiment config");
    run->add_option("config", config_path, "Experiment config")->required()->check(CLI::ExistingFile);
    run->add_option("--workers", workers, "Parallel runs");
    run->add_option("--stop-after", stop_after, "Stop after this many new runs");
    run->add_flag("--reference-values", reference, "Annotate cells with published numbers");
    run->add_flag("-q,--quiet", quiet, "No progress output");

    std::string format = "table";
    auto* report = app.add_subcommand("report", "Recompute metrics from persisted transcripts");
    report->add_option("config", config_path, "Experiment config")->required()->check(CLI::ExistingFile);
    report->add_option("--format", format, "table or json")->check(CLI::IsMember({"table", "json"}));
    report->add_flag("--reference-values", reference, "Annotate cells with published numbers");

    std::string attack_ref, sample_id;
    auto* preview = app.add_subcommand("attack-preview", "Show what one attack changes on one sample");
    preview->add_option("config", config_path, "Experiment config")->required()->check(CLI::ExistingFile);
    preview->add_option("--attack", attack_ref, "Condition label (e.g. TIA) or index")->required();
    preview->add_option("--sample", sample_id, "Sample id (default: first)");

    auto* validate = app.add_subcommand("validate", "Lint a config and its dataset");
    validate->add_option("config", config_path, "Experiment config")->required()->check(CLI::ExistingFile);

    std::string transcript_path, recording_path;
    auto* rep = app.add_subcommand("replay", "Re-execute a transcript against its recording");
    rep->add_option("transcript", transcript_path, "Transcript file")->required()->check(CLI::ExistingFile);
    rep->add_option("--config", config_path, "Experiment config the run came from")->required()->check(CLI::ExistingFile);
    rep->add_option("--recording", recording_path, "Recording file (default: sibling recordings/ directory)");

    std::string dataset_dir;
    std::size_t samples = 10;
    auto* make = app.add_subcommand("make-dataset", "Write the synthetic color-question dataset");
    make->add_option("dir", dataset_dir, "Output directory")->required();
    make->add_option("--samples", samples, "Number of samples");

    CLI11_PARSE(app, argc, argv);

    try {
        if (*run) return cmd_run(config_path, workers, stop_after, reference, quiet);
        if (*report) return cmd_report(config_path, format, reference);
        if (*preview) return cmd_preview(config_path, attack_ref, sample_id);
        if (*validate) return cmd_validate(config_path);
        if (*rep) return cmd_replay(transcript_path, config_path, recording_path);
        if (*make) {
            std::cout << write_demo_dataset(dataset_dir, samples) << "\n";
            return kExitOk;
        }
    } catch (const Error& e) {
        std::cerr << "error: " << e.what() << "\n";
        return e.code() == ErrorCode::ConfigInvalid ? kExitConfig : kExitFailures;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return kExitFailures;
    }
    return kExitOk;
}
