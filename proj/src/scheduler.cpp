#include "mmas/scheduler.hpp"

#include "mmas/digest.hpp"
#include "mmas/error.hpp"

#include <algorithm>
#include <filesystem>
#include <fstream>
#include <sstream>

#include <unistd.h>

namespace mmas {

namespace {

using nlohmann::json;

std::string image_digest(const std::optional<ImagePayload>& image) {
    if (!image) return "";
    return sha256_hex(std::string_view(reinterpret_cast<const char*>(image->bytes.data()), image->bytes.size()));
}

json attack_header(const AttackSpec& a) {
    return {{"point", interception_point(a.kind)}, {"kind", a.kind}, {"layer", a.layer}};
}

class SchedulerRuntime final : public AgentRuntime {
public:
    SchedulerRuntime(SystemTopology topology, ToolRegistry tools, Backend& backend, ParadigmConfig config,
                     std::shared_ptr<const ImagePayload> image, const std::optional<AttackSpec>& attack,
                     std::size_t budget, std::vector<TranscriptEvent>& events, std::uint64_t& clock)
        : topology_(std::move(topology)),
          tools_(std::move(tools)),
          memories_(topology_.memories()),
          backend_(backend),
          config_(config),
          image_(std::move(image)),
          budget_(budget),
          events_(events),
          clock_(clock) {
        if (attack && attack->kind == AttackKind::CIA) {
            cia_ = attack->payload.injected_step;
            cia_targets_ = attack->targets;
            if (cia_targets_.empty()) cia_targets_.insert(topology_.root_id());
        }
    }

    const SystemTopology& topology() const override { return topology_; }
    const ToolRegistry& tools() const override { return tools_; }
    const MemoryModule& shared_memory() const override { return memories_.shared; }
    const MemoryModule& own_memory(const AgentSpec& agent) const override {
        auto it = memories_.individual.find(agent.agent_id);
        return it == memories_.individual.end() ? agent.memory : it->second;
    }

    std::string complete(const AgentSpec& agent, const std::string& phase, const std::vector<ChatTurn>& turns) override {
        if (calls_ >= budget_) throw BudgetExhausted{};
        ++calls_;
        CallContext ctx{agent.agent_id, ++steps_[agent.agent_id], phase};
        return backend_.complete(ctx, turns);
    }

    std::string call_tool(const AgentSpec& agent, const std::string& tool_id, const std::string& args) override {
        auto result = invoke_tool_as_observation(agent, tools_, tool_id, args, image_.get());
        bool authentic = !tools_.contains(tool_id) || tools_.spec(tool_id).authentic;
        emit(agent.agent_id, EventKind::tool_call,
             {{"tool", tool_id}, {"args", args}, {"result", result}, {"authentic", authentic}, {"tainted", !authentic}});
        return result;
    }

    AgentOutput delegate(const AgentSpec& from, const AgentId& to, const std::string& task) override {
        const bool tainted = is_tainted_sender(from.agent_id);
        emit(from.agent_id, EventKind::message, message(from.agent_id, to, MessageKind::delegate, task, tainted));
        waits_[from.agent_id] = to;
        if (std::find(live_.begin(), live_.end(), to) != live_.end()) {
            auto cycle = detect_deadlock(waits_);
            throw BlockedError{cycle.value_or(Cycle{from.agent_id, to})};
        }
        live_.push_back(to);
        auto out = evaluate_agent(topology_.agent(to), AgentTask{task, image_, "", {}}, *this, config_);
        live_.pop_back();
        waits_.erase(from.agent_id);
        finish(out, task);
        emit(to, EventKind::message,
             message(to, from.agent_id, MessageKind::respond, render_child_result(out),
                     is_tainted_sender(to)));
        return out;
    }

    void step_appended(const AgentSpec& agent, ReasoningTrace& trace, std::size_t frozen_prefix) override {
        const auto& s = trace.steps.back();
        emit(agent.agent_id, EventKind::trace_step,
             {{"index", s.index}, {"kind", s.kind}, {"content", s.content}, {"injected", s.injected}});
        if (!cia_ || !is_reasoning_step(s.kind) || !cia_targets_.count(agent.agent_id) ||
            cia_fired_.count(agent.agent_id)) {
            return;
        }
        std::size_t at = 0;
        try {
            at = resolve_position(trace, cia_->position);
        } catch (const Error&) {
            return;  // not resolvable yet; a later step may be
        }
        std::size_t touched = at;
        if (cia_->position.mode == InjectionMode::insert_after) touched = at + 1;
        if (touched <= frozen_prefix) return;
        std::string original = cia_->position.mode == InjectionMode::replace ? trace.steps[at - 1].content : "";
        trace = attack_cia(trace, *cia_);
        cia_fired_.insert(agent.agent_id);
        emit(agent.agent_id, EventKind::attack_applied,
             {{"point", InterceptionPoint::post_thought},
              {"kind", AttackKind::CIA},
              {"layer", AttackLayer::reasoning},
              {"position", touched},
              {"mode", cia_->position.mode},
              {"content", cia_->content},
              {"replaced", original},
              {"trace_size", trace.size()}});
        const auto& injected = trace.steps[touched - 1];
        emit(agent.agent_id, EventKind::trace_step,
             {{"index", injected.index}, {"kind", injected.kind}, {"content", injected.content}, {"injected", true}});
    }

    void emit(const AgentId& agent, EventKind kind, json payload) {
        events_.push_back(TranscriptEvent{++clock_, agent, kind, std::move(payload)});
    }

    /// Records a finished agent: its answer and a memory note.
    void finish(const AgentOutput& out, const std::string& task) {
        if (out.status != AgentStatus::completed) return;
        answers_[out.agent_id] = out.answer;
        auto it = memories_.individual.find(out.agent_id);
        if (it != memories_.individual.end()) it->second.append_next(out.agent_id, "task: " + task + " -> " + out.answer);
    }

    void push_live(const AgentId& id) { live_.push_back(id); }
    std::size_t waiting() const { return waits_.size(); }
    const std::map<AgentId, std::string>& answers() const { return answers_; }

private:
    bool is_tainted_sender(const AgentId& id) const {
        return topology_.spoofed_ids().count(id) != 0 || topology_.tainted_ids().count(id) != 0;
    }

    json message(const AgentId& from, const AgentId& to, MessageKind kind, const std::string& content, bool tainted) {
        return {{"from", from}, {"to", to}, {"kind", kind}, {"content", content}, {"tainted", tainted}};
    }

    SystemTopology topology_;
    ToolRegistry tools_;
    MemoryBank memories_;
    Backend& backend_;
    ParadigmConfig config_;
    std::shared_ptr<const ImagePayload> image_;
    std::size_t budget_;
    std::vector<TranscriptEvent>& events_;
    std::uint64_t& clock_;

    std::size_t calls_ = 0;
    std::map<AgentId, std::size_t> steps_;
    std::vector<AgentId> live_;
    std::map<AgentId, AgentId> waits_;
    std::map<AgentId, std::string> answers_;

    std::optional<InjectedStep> cia_;
    std::set<AgentId> cia_targets_;
    std::set<AgentId> cia_fired_;
};

}  // namespace

std::optional<Cycle> detect_deadlock(const std::map<AgentId, AgentId>& waits) {
    std::set<AgentId> cleared;
    for (const auto& [start, _] : waits) {
        if (cleared.count(start)) continue;
        std::vector<AgentId> path;
        std::set<AgentId> on_path;
        AgentId cur = start;
        while (true) {
            if (on_path.count(cur)) {
                auto it = std::find(path.begin(), path.end(), cur);
                Cycle cycle(it, path.end());
                std::rotate(cycle.begin(), std::min_element(cycle.begin(), cycle.end()), cycle.end());
                return cycle;
            }
            if (cleared.count(cur)) break;
            auto next = waits.find(cur);
            if (next == waits.end()) break;
            path.push_back(cur);
            on_path.insert(cur);
            cur = next->second;
        }
        cleared.insert(path.begin(), path.end());
    }
    return std::nullopt;
}

std::string derive_run_id(const MultimodalInput& input, const std::string& topology_digest,
                          const ParadigmConfig& paradigm, const std::string& model,
                          const std::optional<AttackSpec>& attack, std::uint64_t seed) {
    json j = {{"sample", input.sample_id},
              {"text", input.text},
              {"image", image_digest(input.image)},
              {"topology", topology_digest},
              {"paradigm", paradigm},
              {"model", model},
              {"attack", attack ? json(*attack) : json(nullptr)},
              {"seed", seed}};
    return sha256_hex(j.dump()).substr(0, 16);
}

ExecutionResult execute_task(const MultimodalInput& input, const SystemTopology& topology, const ToolRegistry& tools,
                             const ParadigmConfig& paradigm, Backend& backend,
                             const std::optional<AttackSpec>& attack, std::uint64_t seed,
                             const ExecuteOptions& options) {
    Transcript t;
    t.sample_id = input.sample_id;
    t.paradigm = paradigm;
    t.model = backend.model_name();
    t.attack = attack;
    t.seed = seed;
    t.input = input;
    t.topology_digest = topology_digest(topology);
    t.root_id = topology.root_id();
    t.run_id = options.run_id.empty()
                   ? derive_run_id(input, t.topology_digest, paradigm, t.model, attack, seed)
                   : options.run_id;

    RecordingTap tap(backend);
    std::uint64_t clock = 0;
    json end = {{"diagnostic", ""}};
    auto finish = [&](Termination term) {
        t.termination = term;
        end["termination"] = term;
        end["final_answer"] = t.final_answer;
        t.events.push_back(TranscriptEvent{++clock, t.root_id, EventKind::termination, end});
        return ExecutionResult{std::move(t), tap.recording()};
    };

    AttackedState prep{input, topology, tools, nullptr};
    try {
        validate(paradigm);
        validate_input(input);
        if (attack) {
            prep = apply_attack(input, topology, tools, *attack);
            if (attack->kind != AttackKind::CIA) {
                json detail = attack_header(*attack);
                detail.update(prep.detail);
                t.events.push_back(TranscriptEvent{++clock, t.root_id, EventKind::attack_applied, detail});
            }
        }
    } catch (const Error& e) {
        end["diagnostic"] = e.what();
        return finish(Termination::error);
    }

    std::shared_ptr<const ImagePayload> image;
    if (prep.input.image) image = std::make_shared<const ImagePayload>(*prep.input.image);
    SchedulerRuntime rt(std::move(prep.topology), std::move(prep.tools), tap, paradigm, image, attack,
                        options.global_budget, t.events, clock);
    rt.emit(t.root_id, EventKind::message,
            {{"from", kInputSource},
             {"to", t.root_id},
             {"kind", MessageKind::delegate},
             {"content", prep.input.text},
             {"image", image_digest(prep.input.image)},
             {"tainted", prep.input.text_tainted || prep.input.image_tainted}});

    Termination term = Termination::error;
    try {
        rt.push_live(t.root_id);
        const auto& root = rt.topology().agent(t.root_id);
        auto out = evaluate_agent(root, AgentTask{prep.input.text, image, "", {}}, rt, paradigm);
        rt.finish(out, prep.input.text);
        switch (out.status) {
        case AgentStatus::completed:
            term = Termination::answered;
            t.final_answer = out.answer;
            break;
        case AgentStatus::step_limit: term = Termination::step_limit; break;
        case AgentStatus::blocked: term = Termination::deadlock; break;
        case AgentStatus::error: term = Termination::error; break;
        }
        end["diagnostic"] = out.diagnostic;
    } catch (const BlockedError& b) {
        term = Termination::deadlock;
        end["cycle"] = b.cycle;
        end["diagnostic"] = "wait-for cycle";
    } catch (const BudgetExhausted&) {
        const auto waiting = rt.waiting();
        term = waiting >= 2 ? Termination::deadlock : Termination::step_limit;
        end["diagnostic"] = "global step budget of " + std::to_string(options.global_budget) + " exhausted with " +
                            std::to_string(waiting) + " agents waiting";
    } catch (const Error& e) {
        if (options.rethrow_backend_errors) throw;
        term = Termination::error;
        end["diagnostic"] = e.what();
    }
    t.per_agent_answers = rt.answers();
    return finish(term);
}

Transcript replay(const Transcript& transcript, const Recording& recording, const SystemTopology& topology,
                  const ToolRegistry& tools, const ParadigmConfig& paradigm, const ExecuteOptions& options) {
    auto digest = topology_digest(topology);
    if (digest != transcript.topology_digest) {
        throw Error(ErrorCode::RecordingMismatch,
                    "topology digest " + digest + " differs from recorded " + transcript.topology_digest);
    }
    if (!(paradigm == transcript.paradigm)) {
        throw Error(ErrorCode::RecordingMismatch, "paradigm configuration differs from the recorded run");
    }
    RecordedBackend backend(recording, transcript.model);
    ExecuteOptions opts = options;
    opts.run_id = transcript.run_id;
    opts.rethrow_backend_errors = true;
    auto result = execute_task(transcript.input, topology, tools, paradigm, backend, transcript.attack, transcript.seed,
                               opts);
    if (transcript_to_jsonl(result.transcript) != transcript_to_jsonl(transcript)) {
        std::size_t i = 0;
        const auto& a = result.transcript.events;
        const auto& b = transcript.events;
        while (i < a.size() && i < b.size() && a[i] == b[i]) ++i;
        throw Error(ErrorCode::RecordingMismatch, "replay diverged at event " + std::to_string(i + 1));
    }
    return result.transcript;
}

// ---------------------------------------------------------------- storage

std::string to_string(Termination termination) { return json(termination).get<std::string>(); }
std::string to_string(EventKind kind) { return json(kind).get<std::string>(); }

void to_json(json& j, const TranscriptEvent& v) {
    j = {{"step", v.step}, {"agent_id", v.agent_id}, {"kind", v.kind}, {"payload", v.payload}};
}

void from_json(const json& j, TranscriptEvent& v) {
    v.step = j.at("step").get<std::uint64_t>();
    v.agent_id = j.at("agent_id").get<std::string>();
    v.kind = j.at("kind").get<EventKind>();
    v.payload = j.at("payload");
}

std::string transcript_to_jsonl(const Transcript& t) {
    json header = {{"type", "header"},
                   {"run_id", t.run_id},
                   {"sample_id", t.sample_id},
                   {"paradigm", t.paradigm},
                   {"model", t.model},
                   {"attack", t.attack ? json(*t.attack) : json(nullptr)},
                   {"seed", t.seed},
                   {"input", t.input},
                   {"topology_digest", t.topology_digest},
                   {"root_id", t.root_id},
                   {"final_answer", t.final_answer},
                   {"termination", t.termination},
                   {"per_agent_answers", t.per_agent_answers}};
    std::string out = header.dump() + "\n";
    for (const auto& e : t.events) {
        json line = e;
        line["type"] = "event";
        out += line.dump() + "\n";
    }
    return out;
}

Transcript transcript_from_jsonl(std::string_view text) {
    Transcript t;
    std::istringstream in{std::string(text)};
    std::string line;
    bool have_header = false;
    std::size_t lineno = 0;
    while (std::getline(in, line)) {
        ++lineno;
        if (line.empty()) continue;
        json j;
        try {
            j = json::parse(line);
        } catch (const json::exception& e) {
            throw Error(ErrorCode::ParseError, "transcript line " + std::to_string(lineno) + ": " + e.what());
        }
        if (j.value("type", "") == "header") {
            t.run_id = j.at("run_id");
            t.sample_id = j.at("sample_id");
            t.paradigm = j.at("paradigm").get<ParadigmConfig>();
            t.model = j.at("model");
            if (!j.at("attack").is_null()) t.attack = j.at("attack").get<AttackSpec>();
            t.seed = j.at("seed");
            t.input = j.at("input").get<MultimodalInput>();
            t.topology_digest = j.at("topology_digest");
            t.root_id = j.at("root_id");
            t.final_answer = j.at("final_answer");
            t.termination = j.at("termination").get<Termination>();
            t.per_agent_answers = j.at("per_agent_answers").get<std::map<AgentId, std::string>>();
            have_header = true;
        } else {
            t.events.push_back(j.get<TranscriptEvent>());
        }
    }
    if (!have_header) throw Error(ErrorCode::ParseError, "transcript has no header line");
    return t;
}

void write_file_atomic(const std::string& path, const std::string& content) {
    namespace fs = std::filesystem;
    fs::path target(path);
    if (target.has_parent_path()) fs::create_directories(target.parent_path());
    fs::path tmp = target;
    tmp += ".tmp." + std::to_string(::getpid());
    {
        std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
        if (!out) throw Error(ErrorCode::IoError, "cannot write " + tmp.string());
        out << content;
        if (!out.flush()) throw Error(ErrorCode::IoError, "short write to " + tmp.string());
    }
    fs::rename(tmp, target);
}

std::string read_file(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw Error(ErrorCode::IoError, "cannot read " + path);
    std::ostringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

}  // namespace mmas
