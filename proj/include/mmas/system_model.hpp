#pragma once

#include "mmas/image.hpp"

#include <nlohmann/json.hpp>

#include <algorithm>
#include <cstdint>
#include <functional>
#include <map>
#include <mutex>
#include <optional>
#include <set>
#include <string>
#include <vector>

namespace mmas {

using AgentId = std::string;

struct MultimodalInput {
    std::optional<ImagePayload> image;
    std::string text;
    std::string sample_id;
    std::string gold_answer;
    std::string category;
    // harness-only provenance, never rendered into prompts
    bool text_tainted = false;
    bool image_tainted = false;

    bool operator==(const MultimodalInput&) const = default;
};

/// Throws Error{InvalidInput} for empty text or an undecodable image.
void validate_input(const MultimodalInput& input);

enum class RoleLabel {
    master,
    image_understanding,
    human_attribute,
    object_detection,
    image_conversion,
    image_segmentation,
    coding,
    custom,
};

/// Roles whose model calls carry the task image.
bool role_needs_image(RoleLabel role);

enum class MemoryScope { shared, individual };

struct MemoryEntry {
    AgentId author_agent_id;
    std::string content;
    bool tainted = false;
    std::uint64_t timestamp = 0;

    bool operator==(const MemoryEntry&) const = default;
};

class MemoryModule {
public:
    explicit MemoryModule(MemoryScope scope = MemoryScope::individual) : scope_(scope) {}

    MemoryScope scope() const noexcept { return scope_; }
    const std::vector<MemoryEntry>& entries() const noexcept { return entries_; }
    std::uint64_t last_timestamp() const noexcept { return entries_.empty() ? 0 : entries_.back().timestamp; }

    /// Timestamps must strictly increase; throws Error{NonMonotoneTimestamp}.
    void append(MemoryEntry entry);
    /// Appends with timestamp last_timestamp() + 1.
    void append_next(AgentId author, std::string content, bool tainted = false);

    bool operator==(const MemoryModule&) const = default;

private:
    MemoryScope scope_;
    std::vector<MemoryEntry> entries_;
};

/// MemoryModule guarded for concurrent writers; timestamps come from a
/// single logical clock so every module sees a total order.
class ConcurrentMemory {
public:
    explicit ConcurrentMemory(MemoryModule initial, std::uint64_t clock_start = 0)
        : module_(std::move(initial)), clock_(std::max(clock_start, module_.last_timestamp())) {}

    std::uint64_t append(AgentId author, std::string content, bool tainted = false);
    MemoryModule snapshot() const;

private:
    mutable std::mutex mutex_;
    MemoryModule module_;
    std::uint64_t clock_;
};

struct AgentSpec {
    AgentId agent_id;
    std::string system_prompt;
    std::set<std::string> tool_ids;
    MemoryModule memory{MemoryScope::individual};
    bool is_root = false;
    RoleLabel role_label = RoleLabel::custom;

    bool operator==(const AgentSpec&) const = default;
};

struct ToolSpec {
    std::string tool_id;
    std::string description;
    std::string handler_ref;
    bool authentic = true;

    bool operator==(const ToolSpec&) const = default;
};

struct ToolRequest {
    std::string args;
    const ImagePayload* image = nullptr;
};

using ToolHandler = std::function<std::string(const ToolRequest&)>;

/// Named tool specs plus the deterministic handlers they reference.
class ToolRegistry {
public:
    void register_handler(const std::string& handler_ref, ToolHandler handler);
    /// Throws Error{InvalidInput} for a duplicate tool id or an unknown handler.
    void add(ToolSpec spec);
    /// Replaces an existing spec in place (same tool id).
    void replace(ToolSpec spec);

    bool contains(const std::string& tool_id) const { return specs_.count(tool_id) != 0; }
    const ToolSpec& spec(const std::string& tool_id) const;
    const std::map<std::string, ToolSpec>& specs() const noexcept { return specs_; }
    bool has_handler(const std::string& handler_ref) const { return handlers_.count(handler_ref) != 0; }

    /// Throws Error{UnknownTool}.
    std::string invoke(const std::string& tool_id, const ToolRequest& request) const;

private:
    std::map<std::string, ToolSpec> specs_;
    std::map<std::string, ToolHandler> handlers_;
};

enum class EdgeKind { delegate, peer };

struct Edge {
    AgentId from;
    AgentId to;
    EdgeKind kind = EdgeKind::delegate;

    auto operator<=>(const Edge&) const = default;
};

struct MemoryBank {
    MemoryModule shared{MemoryScope::shared};
    std::map<AgentId, MemoryModule> individual;

    bool operator==(const MemoryBank&) const = default;
};

/// Agent tree over a directed communication graph. Built (and validated)
/// through build_topology; attack operators work on copies.
class SystemTopology {
public:
    const std::map<AgentId, AgentSpec>& agents() const noexcept { return agents_; }
    const std::set<Edge>& edges() const noexcept { return edges_; }
    const std::set<AgentId>& spoofed_ids() const noexcept { return spoofed_ids_; }
    /// Existing agents whose definition an attack operator rewrote (prompt
    /// additions, role swaps). Harness-only, like memory taint.
    const std::set<AgentId>& tainted_ids() const noexcept { return tainted_ids_; }
    const MemoryModule& shared_memory() const noexcept { return shared_memory_; }

    bool has_agent(const AgentId& id) const { return agents_.count(id) != 0; }
    const AgentSpec& agent(const AgentId& id) const;
    AgentId root_id() const;
    /// Any edge kind.
    bool has_link(const AgentId& from, const AgentId& to) const;

    MemoryBank memories() const;

    // Copy-and-edit surface used by attack operators.
    AgentSpec& agent_mut(const AgentId& id);
    void insert_agent(AgentSpec spec);
    void insert_edge(Edge edge);
    void mark_spoofed(const AgentId& id) { spoofed_ids_.insert(id); }
    void mark_tainted(const AgentId& id) { tainted_ids_.insert(id); }
    void set_memories(const MemoryBank& bank);

    bool operator==(const SystemTopology&) const = default;

private:
    friend SystemTopology build_topology(const std::vector<AgentSpec>&, const std::vector<Edge>&, MemoryModule);
    friend SystemTopology unchecked_topology(const std::vector<AgentSpec>&, const std::vector<Edge>&);
    std::map<AgentId, AgentSpec> agents_;
    std::set<Edge> edges_;
    std::set<AgentId> spoofed_ids_;
    std::set<AgentId> tainted_ids_;
    MemoryModule shared_memory_{MemoryScope::shared};
};

/// Validating constructor for clean systems.
/// Errors: DuplicateAgentId, NoRoot, MultipleRoots, DanglingEdge,
/// CycleInCleanTopology, UnreachableAgent.
SystemTopology build_topology(const std::vector<AgentSpec>& agent_specs, const std::vector<Edge>& edges,
                              MemoryModule shared_memory = MemoryModule{MemoryScope::shared});

/// Skips the tree checks; for attacked graphs and test generators.
SystemTopology unchecked_topology(const std::vector<AgentSpec>& agent_specs, const std::vector<Edge>& edges);

/// Delegation children, lexicographic. Throws Error{UnknownAgent}.
std::vector<AgentId> children_of(const SystemTopology& topology, const AgentId& agent_id);

/// Every tool id on every agent must exist in the registry; throws Error{UnknownTool}.
void validate_tools(const SystemTopology& topology, const ToolRegistry& tools);

using Cycle = std::vector<AgentId>;

/// All elementary directed cycles over every edge kind. Each cycle starts
/// at its lexicographically smallest member; the list is sorted.
std::vector<Cycle> detect_cycles(const SystemTopology& topology);

/// Johnson's algorithm on an index graph. Each cycle starts at its smallest
/// vertex; output sorted.
std::vector<std::vector<int>> elementary_cycles(const std::vector<std::vector<int>>& adjacency);

enum class MessageKind { delegate, respond, tool_call, tool_result, broadcast };

struct Message {
    AgentId from_agent;
    AgentId to_agent;
    MessageKind kind = MessageKind::delegate;
    std::string content;
    std::uint64_t step = 0;
    bool tainted = false;
};

std::string topology_digest(const SystemTopology& topology);

// JSON (de)serialization; enums are written as their lowercase names.
void to_json(nlohmann::json& j, const ImagePayload& v);
void from_json(const nlohmann::json& j, ImagePayload& v);
void to_json(nlohmann::json& j, const MultimodalInput& v);
void from_json(const nlohmann::json& j, MultimodalInput& v);
void to_json(nlohmann::json& j, const MemoryEntry& v);
void from_json(const nlohmann::json& j, MemoryEntry& v);
void to_json(nlohmann::json& j, const MemoryModule& v);
void from_json(const nlohmann::json& j, MemoryModule& v);
void to_json(nlohmann::json& j, const AgentSpec& v);
void from_json(const nlohmann::json& j, AgentSpec& v);
void to_json(nlohmann::json& j, const ToolSpec& v);
void from_json(const nlohmann::json& j, ToolSpec& v);
void to_json(nlohmann::json& j, const Edge& v);
void from_json(const nlohmann::json& j, Edge& v);
void to_json(nlohmann::json& j, const Message& v);

nlohmann::json serialize_topology(const SystemTopology& topology);
/// Clean topologies go through build_topology; when `validate` is false
/// (attacked snapshots) the tree checks are skipped.
SystemTopology deserialize_topology(const nlohmann::json& j, bool validate = true);

NLOHMANN_JSON_SERIALIZE_ENUM(RoleLabel, {
    {RoleLabel::custom, "custom"},
    {RoleLabel::master, "master"},
    {RoleLabel::image_understanding, "image_understanding"},
    {RoleLabel::human_attribute, "human_attribute"},
    {RoleLabel::object_detection, "object_detection"},
    {RoleLabel::image_conversion, "image_conversion"},
    {RoleLabel::image_segmentation, "image_segmentation"},
    {RoleLabel::coding, "coding"},
})

NLOHMANN_JSON_SERIALIZE_ENUM(MemoryScope, {
    {MemoryScope::individual, "individual"},
    {MemoryScope::shared, "shared"},
})

NLOHMANN_JSON_SERIALIZE_ENUM(EdgeKind, {
    {EdgeKind::delegate, "delegate"},
    {EdgeKind::peer, "peer"},
})

NLOHMANN_JSON_SERIALIZE_ENUM(MessageKind, {
    {MessageKind::delegate, "delegate"},
    {MessageKind::respond, "respond"},
    {MessageKind::tool_call, "tool_call"},
    {MessageKind::tool_result, "tool_result"},
    {MessageKind::broadcast, "broadcast"},
})

}  // namespace mmas
