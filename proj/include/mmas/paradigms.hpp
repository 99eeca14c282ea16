#pragma once

#include "mmas/backends.hpp"
#include "mmas/system_model.hpp"

#include <nlohmann/json.hpp>

#include <map>
#include <memory>
#include <string>
#include <vector>

namespace mmas {

enum class StepKind { thought, action, observation, plan, solve, reflection };

/// Kinds that count as reasoning state (post-thought interception fires on these).
bool is_reasoning_step(StepKind kind);

struct TraceStep {
    std::size_t index = 0;  // 1-based, contiguous
    StepKind kind = StepKind::thought;
    std::string content;
    bool injected = false;  // harness-only

    bool operator==(const TraceStep&) const = default;
};

struct ReasoningTrace {
    std::vector<TraceStep> steps;

    std::size_t size() const noexcept { return steps.size(); }
    bool empty() const noexcept { return steps.empty(); }
    TraceStep& append(StepKind kind, std::string content);
    void reindex();

    bool operator==(const ReasoningTrace&) const = default;
};

enum class Paradigm { react, plan_and_solve, reflexion };
enum class DelegationPolicy { tool_first, delegate_first };

struct ParadigmConfig {
    Paradigm paradigm = Paradigm::react;
    std::size_t max_steps = 8;
    std::size_t max_reflections = 2;
    /// delegate_first collects every child output before reasoning;
    /// tool_first only reaches children through explicit delegate actions.
    DelegationPolicy delegation_policy = DelegationPolicy::delegate_first;
    /// Reflexion variant: let the critique see aggregated child outputs.
    bool critique_sees_peers = false;
    /// Append a short trace summary to each child line during aggregation.
    bool aggregate_trace_summary = false;

    bool operator==(const ParadigmConfig&) const = default;
};

/// Throws Error{ConfigInvalid} when max_steps is zero.
void validate(const ParadigmConfig& config);

enum class AgentStatus { completed, blocked, step_limit, error };

struct AgentOutput {
    AgentId agent_id;
    std::string answer;
    ReasoningTrace trace;
    AgentStatus status = AgentStatus::error;
    std::string diagnostic;
};

/// What an agent receives: its task text, the run image, the aggregated
/// child context and (Reflexion) its own reflections.
struct AgentTask {
    std::string text;
    std::shared_ptr<const ImagePayload> image;
    std::string context;
    std::vector<std::string> reflections;
};

/// Raised by a runtime when a wait-for cycle forms; unwinds every engine.
struct BlockedError {
    std::vector<AgentId> cycle;
};

/// Raised by a runtime when the global step budget is spent.
struct BudgetExhausted {};

/// Execution services the engines call into. The scheduler implements this
/// with attack interception and transcript recording; SimpleRuntime is the
/// plain version.
class AgentRuntime {
public:
    virtual ~AgentRuntime() = default;

    virtual const SystemTopology& topology() const = 0;
    virtual const ToolRegistry& tools() const = 0;
    virtual const MemoryModule& shared_memory() const = 0;
    virtual const MemoryModule& own_memory(const AgentSpec& agent) const { return agent.memory; }

    /// One model call. Assigns the per-agent step index.
    virtual std::string complete(const AgentSpec& agent, const std::string& phase, const std::vector<ChatTurn>& turns) = 0;
    /// Tool failures come back as observation text, never as exceptions.
    virtual std::string call_tool(const AgentSpec& agent, const std::string& tool_id, const std::string& args) = 0;
    /// Evaluates `to` on `task` and waits for it. May throw BlockedError.
    virtual AgentOutput delegate(const AgentSpec& from, const AgentId& to, const std::string& task) = 0;
    /// Called after every append; `frozen_prefix` steps may not be modified.
    virtual void step_appended(const AgentSpec& agent, ReasoningTrace& trace, std::size_t frozen_prefix) = 0;
};

/// Deterministic child aggregation: children in id order, one line each,
/// "[id] answer" or "[id] <no response: status>".
std::string aggregate_children(const AgentSpec& parent, const std::map<AgentId, AgentOutput>& child_outputs,
                               bool include_trace_summary = false);

/// Leaves go straight to reasoning; internal agents (under delegate_first)
/// collect and aggregate every child first.
AgentOutput evaluate_agent(const AgentSpec& agent, AgentTask task, AgentRuntime& runtime, const ParadigmConfig& config);

AgentOutput run_react(const AgentSpec& agent, const AgentTask& task, AgentRuntime& runtime, const ParadigmConfig& config);
AgentOutput run_plan_and_solve(const AgentSpec& agent, const AgentTask& task, AgentRuntime& runtime,
                               const ParadigmConfig& config);
AgentOutput run_reflexion(const AgentSpec& agent, const AgentTask& task, AgentRuntime& runtime,
                          const ParadigmConfig& config);

/// Prompt assembly shared by every engine. `phase_instruction` becomes the
/// last user turn.
std::vector<ChatTurn> build_turns(const AgentSpec& agent, const AgentTask& task, const ReasoningTrace& trace,
                                  const AgentRuntime& runtime, const std::string& phase_instruction,
                                  bool include_context = true);

/// Renders a delegation result as the observation the parent sees.
std::string render_child_result(const AgentOutput& out);

/// Runtime without attacks or transcript; used by unit tests and the
/// single-agent convenience entry point.
class SimpleRuntime final : public AgentRuntime {
public:
    SimpleRuntime(const SystemTopology& topology, const ToolRegistry& tools, Backend& backend, ParadigmConfig config,
                  std::shared_ptr<const ImagePayload> image = nullptr);

    const SystemTopology& topology() const override { return topology_; }
    const ToolRegistry& tools() const override { return tools_; }
    const MemoryModule& shared_memory() const override { return topology_.shared_memory(); }
    std::string complete(const AgentSpec& agent, const std::string& phase, const std::vector<ChatTurn>& turns) override;
    std::string call_tool(const AgentSpec& agent, const std::string& tool_id, const std::string& args) override;
    AgentOutput delegate(const AgentSpec& from, const AgentId& to, const std::string& task) override;
    void step_appended(const AgentSpec&, ReasoningTrace&, std::size_t) override {}

private:
    const SystemTopology& topology_;
    const ToolRegistry& tools_;
    Backend& backend_;
    ParadigmConfig config_;
    std::shared_ptr<const ImagePayload> image_;
    std::map<AgentId, std::size_t> steps_;
    std::vector<AgentId> live_;
};

/// Convenience form: evaluate `agent_id` of `topology` against `input`.
AgentOutput evaluate_agent(const SystemTopology& topology, const AgentId& agent_id, const MultimodalInput& input,
                           Backend& backend, const ToolRegistry& tools, const ParadigmConfig& config);

/// Shared tool-call semantics: unknown or unassigned tools and handler
/// failures become "tool error: ..." observations.
std::string invoke_tool_as_observation(const AgentSpec& agent, const ToolRegistry& tools, const std::string& tool_id,
                                       const std::string& args, const ImagePayload* image);

std::string to_string(StepKind kind);
std::string to_string(AgentStatus status);
std::string to_string(Paradigm paradigm);

NLOHMANN_JSON_SERIALIZE_ENUM(StepKind, {
    {StepKind::thought, "thought"},
    {StepKind::action, "action"},
    {StepKind::observation, "observation"},
    {StepKind::plan, "plan"},
    {StepKind::solve, "solve"},
    {StepKind::reflection, "reflection"},
})

NLOHMANN_JSON_SERIALIZE_ENUM(Paradigm, {
    {Paradigm::react, "react"},
    {Paradigm::plan_and_solve, "plan_and_solve"},
    {Paradigm::reflexion, "reflexion"},
})

NLOHMANN_JSON_SERIALIZE_ENUM(DelegationPolicy, {
    {DelegationPolicy::delegate_first, "delegate_first"},
    {DelegationPolicy::tool_first, "tool_first"},
})

NLOHMANN_JSON_SERIALIZE_ENUM(AgentStatus, {
    {AgentStatus::error, "error"},
    {AgentStatus::completed, "completed"},
    {AgentStatus::blocked, "blocked"},
    {AgentStatus::step_limit, "step_limit"},
})

void to_json(nlohmann::json& j, const TraceStep& v);
void from_json(const nlohmann::json& j, TraceStep& v);
void to_json(nlohmann::json& j, const ParadigmConfig& v);
void from_json(const nlohmann::json& j, ParadigmConfig& v);

}  // namespace mmas
