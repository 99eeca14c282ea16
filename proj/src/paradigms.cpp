#include "mmas/paradigms.hpp"

#include "mmas/error.hpp"

#include <algorithm>
#include <cctype>
#include <sstream>

namespace mmas {

namespace {

constexpr const char* kProtocol =
    "Reply using one directive per line:\n"
    "THOUGHT: <reasoning>\n"
    "PLAN: <step>\n"
    "ACTION: tool=<tool_id> args=<arguments>\n"
    "ACTION: delegate=<agent_id> task=<task>\n"
    "FINAL: <answer>\n"
    "REFLECT: <critique>";

std::string trim_copy(std::string_view s) {
    while (!s.empty() && std::isspace(static_cast<unsigned char>(s.front()))) s.remove_prefix(1);
    while (!s.empty() && std::isspace(static_cast<unsigned char>(s.back()))) s.remove_suffix(1);
    return std::string(s);
}

std::string lower(std::string s) {
    std::transform(s.begin(), s.end(), s.begin(), [](unsigned char c) { return std::tolower(c); });
    return s;
}

void append_memory(std::ostringstream& os, const char* title, const MemoryModule& memory) {
    if (memory.entries().empty()) return;
    os << "\n\n" << title << ":";
    for (const auto& e : memory.entries()) os << "\n- [" << e.author_agent_id << "] " << e.content;
}

std::string render_step(const TraceStep& step) {
    switch (step.kind) {
    case StepKind::thought:
    case StepKind::solve: return "THOUGHT: " + step.content;
    case StepKind::plan: return "PLAN: " + step.content;
    case StepKind::reflection: return "REFLECT: " + step.content;
    case StepKind::action: return step.content;
    case StepKind::observation: return "OBSERVATION: " + step.content;
    }
    return step.content;
}

std::string action_line(const Directive& d) {
    switch (d.kind) {
    case DirectiveKind::tool_call: return "ACTION: tool=" + d.target + " args=" + d.content;
    case DirectiveKind::delegate: return "ACTION: delegate=" + d.target + " task=" + d.content;
    case DirectiveKind::final_answer: return "FINAL: " + d.content;
    default: return d.line;
    }
}

struct LoopResult {
    AgentStatus status = AgentStatus::step_limit;
    std::string answer;
    std::string diagnostic;
};

class Recorder {
public:
    Recorder(const AgentSpec& agent, AgentRuntime& runtime, ReasoningTrace& trace)
        : agent_(agent), runtime_(runtime), trace_(trace) {}

    void add(StepKind kind, std::string content, std::size_t frozen_prefix = 0) {
        trace_.append(kind, std::move(content));
        runtime_.step_appended(agent_, trace_, frozen_prefix);
    }

private:
    const AgentSpec& agent_;
    AgentRuntime& runtime_;
    ReasoningTrace& trace_;
};

/// Executes a tool or delegate directive; returns the observation text.
std::string perform_action(const AgentSpec& agent, const Directive& d, AgentRuntime& runtime) {
    if (d.kind == DirectiveKind::tool_call) return runtime.call_tool(agent, d.target, d.content);
    if (!runtime.topology().has_agent(d.target)) return "delegation error: unknown agent '" + d.target + "'";
    if (!runtime.topology().has_link(agent.agent_id, d.target)) {
        return "delegation error: no link from " + agent.agent_id + " to " + d.target;
    }
    return render_child_result(runtime.delegate(agent, d.target, d.content));
}

/// Processes one reply's directives in order. Returns true once a final
/// answer was recorded (written to `answer`).
bool apply_directives(const AgentSpec& agent, const std::vector<Directive>& directives, AgentRuntime& runtime,
                      Recorder& rec, StepKind thought_kind, std::string& answer, std::size_t frozen = 0) {
    for (const auto& d : directives) {
        switch (d.kind) {
        case DirectiveKind::thought: rec.add(thought_kind, d.content, frozen); break;
        case DirectiveKind::plan:
        case DirectiveKind::reflect: rec.add(thought_kind, d.content, frozen); break;
        case DirectiveKind::final_answer:
            if (trim_copy(d.content).empty()) throw Error(ErrorCode::ProtocolViolation, "empty FINAL answer");
            rec.add(StepKind::action, action_line(d), frozen);
            answer = trim_copy(d.content);
            return true;
        case DirectiveKind::tool_call:
        case DirectiveKind::delegate:
            rec.add(StepKind::action, action_line(d), frozen);
            rec.add(StepKind::observation, perform_action(agent, d, runtime), frozen);
            return false;
        }
    }
    return false;
}

LoopResult react_loop(const AgentSpec& agent, const AgentTask& task, AgentRuntime& runtime,
                      const ParadigmConfig& config, ReasoningTrace& trace) {
    Recorder rec(agent, runtime, trace);
    for (std::size_t call = 0; call < config.max_steps; ++call) {
        auto turns = build_turns(agent, task, trace, runtime, "NEXT: continue with one THOUGHT and then one ACTION or FINAL.");
        auto reply = runtime.complete(agent, "act", turns);
        std::string answer;
        if (apply_directives(agent, parse_reply(reply), runtime, rec, StepKind::thought, answer)) {
            return {AgentStatus::completed, answer, ""};
        }
    }
    return {AgentStatus::step_limit, "", "no FINAL within " + std::to_string(config.max_steps) + " steps"};
}

AgentOutput make_output(const AgentSpec& agent, ReasoningTrace trace, const LoopResult& r) {
    AgentOutput out;
    out.agent_id = agent.agent_id;
    out.trace = std::move(trace);
    out.status = r.status;
    out.diagnostic = r.diagnostic;
    if (r.status == AgentStatus::completed) out.answer = r.answer;
    return out;
}

/// Strips list markers such as "1." "2)" "-" "*" from a plan line.
std::string strip_bullet(std::string s) {
    s = trim_copy(s);
    std::size_t i = 0;
    while (i < s.size() && std::isdigit(static_cast<unsigned char>(s[i]))) ++i;
    if (i > 0 && i < s.size() && (s[i] == '.' || s[i] == ')')) return trim_copy(std::string_view(s).substr(i + 1));
    if (!s.empty() && (s[0] == '-' || s[0] == '*')) return trim_copy(std::string_view(s).substr(1));
    return s;
}

}  // namespace

bool is_reasoning_step(StepKind kind) {
    return kind == StepKind::thought || kind == StepKind::plan || kind == StepKind::solve ||
           kind == StepKind::reflection;
}

TraceStep& ReasoningTrace::append(StepKind kind, std::string content) {
    steps.push_back(TraceStep{steps.size() + 1, kind, std::move(content), false});
    return steps.back();
}

void ReasoningTrace::reindex() {
    for (std::size_t i = 0; i < steps.size(); ++i) steps[i].index = i + 1;
}

void validate(const ParadigmConfig& config) {
    if (config.max_steps == 0) throw Error(ErrorCode::ConfigInvalid, "max_steps must be at least 1");
}

std::string render_child_result(const AgentOutput& out) {
    if (out.status == AgentStatus::completed) return "[" + out.agent_id + "] " + out.answer;
    return "[" + out.agent_id + "] <no response: " + to_string(out.status) + ">";
}

std::string aggregate_children(const AgentSpec&, const std::map<AgentId, AgentOutput>& child_outputs,
                               bool include_trace_summary) {
    std::string out;
    for (const auto& [id, child] : child_outputs) {
        if (!out.empty()) out += '\n';
        AgentOutput keyed = child;
        keyed.agent_id = id;
        out += render_child_result(keyed);
        if (include_trace_summary) {
            out += " (" + std::to_string(child.trace.size()) + " steps";
            auto it = std::find_if(child.trace.steps.rbegin(), child.trace.steps.rend(),
                                   [](const TraceStep& s) { return is_reasoning_step(s.kind); });
            if (it != child.trace.steps.rend()) out += "; last thought: " + it->content;
            out += ")";
        }
    }
    return out;
}

std::vector<ChatTurn> build_turns(const AgentSpec& agent, const AgentTask& task, const ReasoningTrace& trace,
                                  const AgentRuntime& runtime, const std::string& phase_instruction,
                                  bool include_context) {
    std::ostringstream sys;
    sys << agent.system_prompt;
    std::vector<std::string> tool_lines;
    for (const auto& id : agent.tool_ids) {
        if (runtime.tools().contains(id)) tool_lines.push_back("- " + id + ": " + runtime.tools().spec(id).description);
    }
    if (!tool_lines.empty()) {
        sys << "\n\nTools:";
        for (const auto& l : tool_lines) sys << "\n" << l;
    }
    std::vector<AgentId> links;
    for (const auto& e : runtime.topology().edges()) {
        if (e.from == agent.agent_id && std::find(links.begin(), links.end(), e.to) == links.end()) links.push_back(e.to);
    }
    if (!links.empty()) {
        sys << "\n\nAgents you can contact:";
        for (const auto& l : links) sys << " " << l;
    }
    append_memory(sys, "Shared memory", runtime.shared_memory());
    append_memory(sys, "Your memory", runtime.own_memory(agent));
    sys << "\n\n" << kProtocol;

    std::vector<ChatTurn> turns;
    turns.push_back(ChatTurn{ChatRole::system, sys.str(), {}});

    std::string user = "Task: " + task.text;
    if (include_context && !task.context.empty()) user += "\n\nSub-agent reports:\n" + task.context;
    if (!task.reflections.empty()) {
        user += "\n\nReflections on earlier attempts:";
        for (const auto& r : task.reflections) user += "\n- " + r;
    }
    ChatTurn first{ChatRole::user, user, {}};
    if (task.image && role_needs_image(agent.role_label)) first.images.push_back(task.image);
    turns.push_back(std::move(first));

    for (const auto& step : trace.steps) {
        auto role = step.kind == StepKind::observation ? ChatRole::user : ChatRole::assistant;
        turns.push_back(ChatTurn{role, render_step(step), {}});
    }
    turns.push_back(ChatTurn{ChatRole::user, phase_instruction, {}});
    return turns;
}

AgentOutput evaluate_agent(const AgentSpec& agent, AgentTask task, AgentRuntime& runtime, const ParadigmConfig& config) {
    validate(config);
    if (config.delegation_policy == DelegationPolicy::delegate_first) {
        std::map<AgentId, AgentOutput> outputs;
        for (const auto& child : children_of(runtime.topology(), agent.agent_id)) {
            outputs.emplace(child, runtime.delegate(agent, child, task.text));
        }
        if (!outputs.empty()) task.context = aggregate_children(agent, outputs, config.aggregate_trace_summary);
    }
    switch (config.paradigm) {
    case Paradigm::react: return run_react(agent, task, runtime, config);
    case Paradigm::plan_and_solve: return run_plan_and_solve(agent, task, runtime, config);
    case Paradigm::reflexion: return run_reflexion(agent, task, runtime, config);
    }
    throw Error(ErrorCode::ConfigInvalid, "unknown paradigm");
}

AgentOutput run_react(const AgentSpec& agent, const AgentTask& task, AgentRuntime& runtime,
                      const ParadigmConfig& config) {
    ReasoningTrace trace;
    LoopResult r;
    try {
        r = react_loop(agent, task, runtime, config, trace);
    } catch (const Error& e) {
        if (e.code() != ErrorCode::ProtocolViolation) throw;
        r = {AgentStatus::error, "", e.what()};
    }
    return make_output(agent, std::move(trace), r);
}

AgentOutput run_plan_and_solve(const AgentSpec& agent, const AgentTask& task, AgentRuntime& runtime,
                               const ParadigmConfig& config) {
    ReasoningTrace trace;
    Recorder rec(agent, runtime, trace);
    LoopResult r{AgentStatus::step_limit, "", ""};
    try {
        // Phase 1: the plan.
        auto reply = runtime.complete(agent, "plan",
                                      build_turns(agent, task, trace, runtime, "NEXT: write your plan as PLAN lines."));
        std::vector<std::string> plan;
        for (const auto& d : parse_reply(reply)) {
            if (d.kind != DirectiveKind::plan) continue;
            std::istringstream lines(d.content);
            for (std::string line; std::getline(lines, line);) {
                auto step = strip_bullet(line);
                if (!step.empty()) plan.push_back(step);
            }
        }
        if (plan.empty()) throw Error(ErrorCode::EmptyPlan, "reply contained no PLAN steps");
        for (const auto& p : plan) rec.add(StepKind::plan, p);
        const std::size_t frozen = trace.size();

        // Phase 2: one solve call per plan step, then answer calls until FINAL.
        std::size_t calls = 1;
        std::size_t next_step = 0;
        bool done = false;
        while (!done) {
            if (calls >= config.max_steps) {
                r = {AgentStatus::step_limit, "", "no FINAL within " + std::to_string(config.max_steps) + " steps"};
                break;
            }
            const bool solving = next_step < plan.size();
            std::string instruction = solving ? "NEXT: carry out plan step " + std::to_string(next_step + 1) + ": " +
                                                    plan[next_step]
                                              : std::string("NEXT: all plan steps are done; give the FINAL answer.");
            auto out = runtime.complete(agent, solving ? "solve" : "answer",
                                        build_turns(agent, task, trace, runtime, instruction));
            ++calls;
            auto directives = parse_reply(out);
            std::string answer;
            done = apply_directives(agent, directives, runtime, rec, StepKind::solve, answer, frozen);
            if (done) {
                r = {AgentStatus::completed, answer, ""};
                break;
            }
            bool acted = std::any_of(directives.begin(), directives.end(), [](const Directive& d) { return d.is_action(); });
            // A step advances once the model reports on it without requesting more work.
            if (solving && !acted) ++next_step;
        }
    } catch (const Error& e) {
        if (e.code() != ErrorCode::ProtocolViolation && e.code() != ErrorCode::EmptyPlan) throw;
        r = {AgentStatus::error, "", e.what()};
    }
    return make_output(agent, std::move(trace), r);
}

AgentOutput run_reflexion(const AgentSpec& agent, const AgentTask& task, AgentRuntime& runtime,
                          const ParadigmConfig& config) {
    ReasoningTrace trace;
    Recorder rec(agent, runtime, trace);
    AgentTask attempt_task = task;
    LoopResult last{AgentStatus::step_limit, "", ""};
    try {
        for (std::size_t attempt = 0;; ++attempt) {
            last = react_loop(agent, attempt_task, runtime, config, trace);
            if (last.status != AgentStatus::completed) break;

            AgentTask critique_task = attempt_task;
            auto reply = runtime.complete(
                agent, "reflect",
                build_turns(agent, critique_task, trace, runtime,
                            "NEXT: critique your answer '" + last.answer +
                                "'. Reply REFLECT: OK if it is right, otherwise REFLECT: <what is wrong>.",
                            config.critique_sees_peers));
            auto directives = parse_reply(reply);
            if (directives.front().kind != DirectiveKind::reflect) {
                throw Error(ErrorCode::ProtocolViolation, "critique must start with REFLECT: " + directives.front().line);
            }
            std::string critique = trim_copy(directives.front().content);
            rec.add(StepKind::reflection, critique);
            bool accepted = lower(critique).rfind("ok", 0) == 0;
            if (accepted || attempt >= config.max_reflections) break;
            attempt_task.reflections.push_back(critique);
        }
    } catch (const Error& e) {
        if (e.code() != ErrorCode::ProtocolViolation) throw;
        last = {AgentStatus::error, "", e.what()};
    }
    return make_output(agent, std::move(trace), last);
}

std::string invoke_tool_as_observation(const AgentSpec& agent, const ToolRegistry& tools, const std::string& tool_id,
                                       const std::string& args, const ImagePayload* image) {
    if (!tools.contains(tool_id)) return "tool error: unknown tool '" + tool_id + "'";
    if (agent.tool_ids.count(tool_id) == 0) return "tool error: tool '" + tool_id + "' is not available to " + agent.agent_id;
    try {
        return tools.invoke(tool_id, ToolRequest{args, image});
    } catch (const Error& e) {
        return std::string("tool error: ") + e.what();
    }
}

// ------------------------------------------------------------ SimpleRuntime

SimpleRuntime::SimpleRuntime(const SystemTopology& topology, const ToolRegistry& tools, Backend& backend,
                             ParadigmConfig config, std::shared_ptr<const ImagePayload> image)
    : topology_(topology), tools_(tools), backend_(backend), config_(config), image_(std::move(image)) {}

std::string SimpleRuntime::complete(const AgentSpec& agent, const std::string& phase,
                                    const std::vector<ChatTurn>& turns) {
    CallContext ctx{agent.agent_id, ++steps_[agent.agent_id], phase};
    return backend_.complete(ctx, turns);
}

std::string SimpleRuntime::call_tool(const AgentSpec& agent, const std::string& tool_id, const std::string& args) {
    return invoke_tool_as_observation(agent, tools_, tool_id, args, image_.get());
}

AgentOutput SimpleRuntime::delegate(const AgentSpec& from, const AgentId& to, const std::string& task) {
    auto live = std::find(live_.begin(), live_.end(), to);
    if (live != live_.end()) {
        std::vector<AgentId> cycle(live, live_.end());
        if (cycle.empty() || cycle.back() != from.agent_id) cycle.push_back(from.agent_id);
        throw BlockedError{cycle};
    }
    live_.push_back(to);
    try {
        auto out = evaluate_agent(topology_.agent(to), AgentTask{task, image_, "", {}}, *this, config_);
        live_.pop_back();
        return out;
    } catch (...) {
        live_.pop_back();
        throw;
    }
}

AgentOutput evaluate_agent(const SystemTopology& topology, const AgentId& agent_id, const MultimodalInput& input,
                           Backend& backend, const ToolRegistry& tools, const ParadigmConfig& config) {
    std::shared_ptr<const ImagePayload> image;
    if (input.image) image = std::make_shared<const ImagePayload>(*input.image);
    SimpleRuntime runtime(topology, tools, backend, config, image);
    const auto& agent = topology.agent(agent_id);
    return evaluate_agent(agent, AgentTask{input.text, image, "", {}}, runtime, config);
}

// ------------------------------------------------------------------ strings

std::string to_string(StepKind kind) { return nlohmann::json(kind).get<std::string>(); }
std::string to_string(AgentStatus status) { return nlohmann::json(status).get<std::string>(); }
std::string to_string(Paradigm paradigm) { return nlohmann::json(paradigm).get<std::string>(); }

void to_json(nlohmann::json& j, const TraceStep& v) {
    j = {{"index", v.index}, {"kind", v.kind}, {"content", v.content}, {"injected", v.injected}};
}

void from_json(const nlohmann::json& j, TraceStep& v) {
    v.index = j.at("index").get<std::size_t>();
    v.kind = j.at("kind").get<StepKind>();
    v.content = j.at("content").get<std::string>();
    v.injected = j.value("injected", false);
}

void to_json(nlohmann::json& j, const ParadigmConfig& v) {
    j = {{"paradigm", v.paradigm},
         {"max_steps", v.max_steps},
         {"max_reflections", v.max_reflections},
         {"delegation_policy", v.delegation_policy},
         {"critique_sees_peers", v.critique_sees_peers},
         {"aggregate_trace_summary", v.aggregate_trace_summary}};
}

void from_json(const nlohmann::json& j, ParadigmConfig& v) {
    ParadigmConfig d;
    v.paradigm = j.value("paradigm", d.paradigm);
    v.max_steps = j.value("max_steps", d.max_steps);
    v.max_reflections = j.value("max_reflections", d.max_reflections);
    v.delegation_policy = j.value("delegation_policy", d.delegation_policy);
    v.critique_sees_peers = j.value("critique_sees_peers", d.critique_sees_peers);
    v.aggregate_trace_summary = j.value("aggregate_trace_summary", d.aggregate_trace_summary);
}

}  // namespace mmas
