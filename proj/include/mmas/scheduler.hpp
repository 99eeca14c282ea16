#pragma once

#include "mmas/attacks.hpp"
#include "mmas/backends.hpp"
#include "mmas/paradigms.hpp"
#include "mmas/system_model.hpp"

#include <nlohmann/json.hpp>

#include <cstdint>
#include <map>
#include <optional>
#include <string>
#include <vector>

namespace mmas {

enum class Termination { answered, deadlock, step_limit, error };
enum class EventKind { message, tool_call, trace_step, attack_applied, termination };

struct TranscriptEvent {
    std::uint64_t step = 0;  // logical clock, strictly increasing
    AgentId agent_id;
    EventKind kind = EventKind::message;
    nlohmann::json payload;

    bool operator==(const TranscriptEvent&) const = default;
};

/// Pseudo agent id for the task entering the root.
inline constexpr const char* kInputSource = "<input>";

struct Transcript {
    std::string run_id;
    std::string sample_id;
    ParadigmConfig paradigm;
    std::string model;
    std::optional<AttackSpec> attack;
    std::uint64_t seed = 0;
    MultimodalInput input;  // clean input as configured
    std::string topology_digest;
    AgentId root_id;
    std::vector<TranscriptEvent> events;
    std::string final_answer;
    Termination termination = Termination::error;
    std::map<AgentId, std::string> per_agent_answers;

    bool operator==(const Transcript&) const = default;
};

struct ExecuteOptions {
    std::size_t global_budget = 64;  // model calls across the whole run
    std::string run_id;              // derived from the run inputs when empty
    /// Let backend errors escape instead of becoming termination=error
    /// (replay uses this to surface RecordingMismatch).
    bool rethrow_backend_errors = false;
};

struct ExecutionResult {
    Transcript transcript;
    Recording recording;
};

/// Applies the attack at its interception point, evaluates the root and
/// returns the full event log. Failures become termination kinds.
ExecutionResult execute_task(const MultimodalInput& input, const SystemTopology& topology, const ToolRegistry& tools,
                             const ParadigmConfig& paradigm, Backend& backend,
                             const std::optional<AttackSpec>& attack, std::uint64_t seed,
                             const ExecuteOptions& options = {});

/// A waiting cycle among the wait-for edges, starting at its smallest id.
std::optional<Cycle> detect_deadlock(const std::map<AgentId, AgentId>& waits);

/// Re-executes against the recording and requires byte-identical output.
/// Throws Error{RecordingMismatch} on topology digest or transcript divergence.
Transcript replay(const Transcript& transcript, const Recording& recording, const SystemTopology& topology,
                  const ToolRegistry& tools, const ParadigmConfig& paradigm, const ExecuteOptions& options = {});

std::string derive_run_id(const MultimodalInput& input, const std::string& topology_digest,
                          const ParadigmConfig& paradigm, const std::string& model,
                          const std::optional<AttackSpec>& attack, std::uint64_t seed);

/// One header line (everything but events) followed by one line per event.
std::string transcript_to_jsonl(const Transcript& transcript);
Transcript transcript_from_jsonl(std::string_view text);

/// Writes through a temporary file and renames it into place.
void write_file_atomic(const std::string& path, const std::string& content);
std::string read_file(const std::string& path);

std::string to_string(Termination termination);
std::string to_string(EventKind kind);

NLOHMANN_JSON_SERIALIZE_ENUM(Termination, {
    {Termination::error, "error"},
    {Termination::answered, "answered"},
    {Termination::deadlock, "deadlock"},
    {Termination::step_limit, "step_limit"},
})

NLOHMANN_JSON_SERIALIZE_ENUM(EventKind, {
    {EventKind::message, "message"},
    {EventKind::tool_call, "tool_call"},
    {EventKind::trace_step, "trace_step"},
    {EventKind::attack_applied, "attack_applied"},
    {EventKind::termination, "termination"},
})

void to_json(nlohmann::json& j, const TranscriptEvent& v);
void from_json(const nlohmann::json& j, TranscriptEvent& v);

}  // namespace mmas
