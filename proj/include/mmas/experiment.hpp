#pragma once

#include "mmas/attacks.hpp"
#include "mmas/backends.hpp"
#include "mmas/metrics.hpp"
#include "mmas/paradigms.hpp"
#include "mmas/scheduler.hpp"
#include "mmas/system_model.hpp"

#include <nlohmann/json.hpp>

#include <functional>
#include <map>
#include <optional>
#include <string>
#include <vector>

namespace mmas {

// ----------------------------------------------------------- default system

struct AgentSystem {
    SystemTopology topology;
    ToolRegistry tools;
};

/// Registers the deterministic stub handlers behind the 13 default tools
/// ("stub:<tool_id>").
void register_stub_handlers(ToolRegistry& tools);

/// The 13 default tool specs.
std::vector<ToolSpec> default_tool_specs();

/// Master (coordination only, no tools) plus six role agents in a star:
///   image_understanding: caption_image, answer_visual_question, read_text
///   human_attribute:     detect_faces, classify_attributes
///   object_detection:    detect_objects, count_objects
///   image_conversion:    convert_format, resize_image
///   image_segmentation:  segment_regions, dominant_color
///   coding:              run_python, evaluate_expression
AgentSystem build_default_system();

/// Small arithmetic evaluator used by the evaluate_expression stub.
/// Throws Error{InvalidInput} on malformed input.
double evaluate_arithmetic(std::string_view expression);

// ---------------------------------------------------------------- dataset

struct DatasetFilter {
    std::optional<std::string> category;
    std::optional<std::size_t> limit;
    bool fail_fast_missing_images = false;
};

struct Dataset {
    std::vector<MultimodalInput> samples;
    std::size_t skipped_missing_images = 0;
    std::vector<std::string> warnings;
};

/// Line-delimited {id, image_path, question, answer, category}; image paths
/// resolve against the dataset file's directory. Sorted by id, then filtered
/// and truncated. Errors: IoError, ParseError (with line number),
/// MissingImageFile (fail-fast mode only).
Dataset ingest_dataset(const std::string& path, const DatasetFilter& filter = {});

/// Writes a color-question dataset of `samples` solid-color PPM images plus
/// samples.jsonl into `dir`; returns the jsonl path.
std::string write_demo_dataset(const std::string& dir, std::size_t samples = 10);

// ----------------------------------------------------------------- config

struct EmbeddingConfig {
    std::string kind = "stub";  // stub | remote
    int dimension = 64;
    std::uint64_t seed = 0;
    std::string endpoint;
    std::string model;
    std::string api_key_env = "MMAS_API_KEY";
};

struct ExperimentConfig {
    std::string base_dir;  // directory relative paths resolve against
    std::string dataset_path;
    DatasetFilter filter;
    nlohmann::json topology = "default";  // "default", inline document, or {"include": path}
    std::vector<ParadigmConfig> paradigms;
    std::vector<BackendProfile> backends;
    std::vector<AttackSpec> attacks;
    std::uint64_t seed = 0;
    std::string output_dir = "out";
    std::string template_dir;
    EmbeddingConfig embedding;
    std::size_t global_budget = 64;
    HallucinationRule hallucination_rule = HallucinationRule::either;
    /// Grades answers with a model instead of normalized exact match.
    std::optional<BackendProfile> judge;
    double failure_threshold = 0.5;  // share of errored runs that makes the batch fail
    std::size_t workers = 1;
    bool reference_values = false;
};

/// Parses and validates a config document; `base_dir` anchors relative paths.
/// Attack payload strings of the form "@name" load from template_dir.
/// Throws Error{ConfigInvalid} naming the offending field.
ExperimentConfig parse_config(const nlohmann::json& doc, const std::string& base_dir);
ExperimentConfig load_config(const std::string& path);

/// Digest over everything that affects results (not output_dir or workers).
std::string config_digest(const ExperimentConfig& config);

/// Resolves the topology reference; tools always come from the stub registry.
AgentSystem load_system(const ExperimentConfig& config);

/// Condition label per attack: kind name, suffixed "#2", "#3"... on repeats.
std::vector<std::string> condition_labels(const ExperimentConfig& config);

// ----------------------------------------------------------------- running

struct RunOptions {
    /// Stop after this many newly executed runs (simulates an interruption).
    std::optional<std::size_t> stop_after;
    /// Optional progress callback: (done, total).
    std::function<void(std::size_t, std::size_t)> progress;
    std::shared_ptr<Transport> transport;  // remote backends only
};

struct ReportRow {
    std::string paradigm;
    std::string model;
    MetricsReport clean;                       // TSR/HER of the clean condition
    std::map<AttackKind, MetricsReport> by_kind;
    MetricsReport overall;                     // every attack condition pooled
};

struct ExperimentReport {
    std::string config_digest;
    std::vector<ReportRow> rows;
    std::size_t runs = 0;
    std::size_t errored_runs = 0;
};

struct ExperimentOutcome {
    ExperimentReport report;
    std::size_t executed = 0;  // newly run
    std::size_t reused = 0;    // resumed from disk
    bool complete = false;     // false when stopped early
    bool failed_threshold = false;
};

/// Runs every (paradigm, backend) row over the clean condition and each
/// attack, persists transcripts, recordings and the run index, and writes
/// report.json / report.txt when complete. Existing transcripts whose run id
/// matches are reused.
ExperimentOutcome run_experiment(const ExperimentConfig& config, const RunOptions& options = {});

/// Rebuilds the report from persisted transcripts only.
ExperimentReport build_report(const ExperimentConfig& config);

/// Stable-keyed structured form.
nlohmann::json report_to_json(const ExperimentReport& report);

/// Aligned table: Paradigm | LLM | VIA TIA CMA | ASA SBA SMPA SCIA | TSA RMA CIA,
/// followed by per-row TSR / HER / CMC / error distribution.
std::string render_report_table(const ExperimentReport& report, bool reference_values = false);

/// Published ASR for a (paradigm, model, kind) cell, when one exists.
/// Model names match case-insensitively ignoring punctuation.
std::optional<double> reference_asr(Paradigm paradigm, const std::string& model, AttackKind kind);

/// File stem for a run: <paradigm>.<model>.<condition>.<sample>.
std::string run_stem(const std::string& paradigm, const std::string& model, const std::string& condition,
                     const std::string& sample_id);

/// Human-readable description of what an attack changes on one sample.
std::string attack_preview(const ExperimentConfig& config, const AttackSpec& attack, const MultimodalInput& sample);

void to_json(nlohmann::json& j, const EmbeddingConfig& v);
void from_json(const nlohmann::json& j, EmbeddingConfig& v);

}  // namespace mmas
