#include "mmas/system_model.hpp"

#include "mmas/digest.hpp"
#include "mmas/error.hpp"

#include <algorithm>
#include <deque>
#include <functional>

namespace mmas {

void validate_input(const MultimodalInput& input) {
    if (input.text.empty()) throw Error(ErrorCode::InvalidInput, "sample '" + input.sample_id + "' has empty text");
    if (input.image) {
        try {
            (void)decode_image(*input.image);
        } catch (const Error& e) {
            throw Error(ErrorCode::InvalidInput, "sample '" + input.sample_id + "': " + e.what());
        }
    }
}

bool role_needs_image(RoleLabel role) {
    return role != RoleLabel::coding;
}

// ---------------------------------------------------------------- memory

void MemoryModule::append(MemoryEntry entry) {
    if (!entries_.empty() && entry.timestamp <= entries_.back().timestamp) {
        throw Error(ErrorCode::NonMonotoneTimestamp, "timestamp " + std::to_string(entry.timestamp) +
                                                         " does not follow " +
                                                         std::to_string(entries_.back().timestamp));
    }
    entries_.push_back(std::move(entry));
}

void MemoryModule::append_next(AgentId author, std::string content, bool tainted) {
    append(MemoryEntry{std::move(author), std::move(content), tainted, last_timestamp() + 1});
}

std::uint64_t ConcurrentMemory::append(AgentId author, std::string content, bool tainted) {
    std::lock_guard lock(mutex_);
    const auto ts = ++clock_;
    module_.append(MemoryEntry{std::move(author), std::move(content), tainted, ts});
    return ts;
}

MemoryModule ConcurrentMemory::snapshot() const {
    std::lock_guard lock(mutex_);
    return module_;
}

// ----------------------------------------------------------------- tools

void ToolRegistry::register_handler(const std::string& handler_ref, ToolHandler handler) {
    handlers_[handler_ref] = std::move(handler);
}

void ToolRegistry::add(ToolSpec spec) {
    if (specs_.count(spec.tool_id)) throw Error(ErrorCode::InvalidInput, "duplicate tool id '" + spec.tool_id + "'");
    if (!handlers_.count(spec.handler_ref)) {
        throw Error(ErrorCode::InvalidInput, "tool '" + spec.tool_id + "' references unknown handler '" +
                                                 spec.handler_ref + "'");
    }
    auto id = spec.tool_id;
    specs_.emplace(std::move(id), std::move(spec));
}

void ToolRegistry::replace(ToolSpec spec) {
    auto it = specs_.find(spec.tool_id);
    if (it == specs_.end()) throw Error(ErrorCode::UnknownTool, spec.tool_id);
    if (!handlers_.count(spec.handler_ref)) throw Error(ErrorCode::InvalidInput, "unknown handler '" + spec.handler_ref + "'");
    it->second = std::move(spec);
}

const ToolSpec& ToolRegistry::spec(const std::string& tool_id) const {
    auto it = specs_.find(tool_id);
    if (it == specs_.end()) throw Error(ErrorCode::UnknownTool, tool_id);
    return it->second;
}

std::string ToolRegistry::invoke(const std::string& tool_id, const ToolRequest& request) const {
    const auto& s = spec(tool_id);
    auto h = handlers_.find(s.handler_ref);
    if (h == handlers_.end()) throw Error(ErrorCode::UnknownTool, "handler '" + s.handler_ref + "' is not registered");
    return h->second(request);
}

// -------------------------------------------------------------- topology

const AgentSpec& SystemTopology::agent(const AgentId& id) const {
    auto it = agents_.find(id);
    if (it == agents_.end()) throw Error(ErrorCode::UnknownAgent, id);
    return it->second;
}

AgentSpec& SystemTopology::agent_mut(const AgentId& id) {
    auto it = agents_.find(id);
    if (it == agents_.end()) throw Error(ErrorCode::UnknownAgent, id);
    return it->second;
}

AgentId SystemTopology::root_id() const {
    for (const auto& [id, a] : agents_) {
        if (a.is_root) return id;
    }
    throw Error(ErrorCode::NoRoot, "topology has no root agent");
}

bool SystemTopology::has_link(const AgentId& from, const AgentId& to) const {
    auto it = edges_.lower_bound(Edge{from, to, EdgeKind::delegate});
    return it != edges_.end() && it->from == from && it->to == to;
}

MemoryBank SystemTopology::memories() const {
    MemoryBank bank;
    bank.shared = shared_memory_;
    for (const auto& [id, a] : agents_) bank.individual.emplace(id, a.memory);
    return bank;
}

void SystemTopology::insert_agent(AgentSpec spec) {
    if (agents_.count(spec.agent_id)) throw Error(ErrorCode::DuplicateAgentId, spec.agent_id);
    auto id = spec.agent_id;
    agents_.emplace(std::move(id), std::move(spec));
}

void SystemTopology::insert_edge(Edge edge) {
    if (!agents_.count(edge.from) || !agents_.count(edge.to)) {
        throw Error(ErrorCode::DanglingEdge, edge.from + " -> " + edge.to);
    }
    edges_.insert(std::move(edge));
}

void SystemTopology::set_memories(const MemoryBank& bank) {
    shared_memory_ = bank.shared;
    for (const auto& [id, m] : bank.individual) agent_mut(id).memory = m;
}

SystemTopology unchecked_topology(const std::vector<AgentSpec>& agent_specs, const std::vector<Edge>& edges) {
    SystemTopology t;
    for (const auto& a : agent_specs) t.insert_agent(a);
    for (const auto& e : edges) t.insert_edge(e);
    return t;
}

SystemTopology build_topology(const std::vector<AgentSpec>& agent_specs, const std::vector<Edge>& edges,
                              MemoryModule shared_memory) {
    if (agent_specs.empty()) throw Error(ErrorCode::NoRoot, "no agents declared");
    SystemTopology t;
    AgentId root;
    for (const auto& a : agent_specs) {
        if (t.agents_.count(a.agent_id)) throw Error(ErrorCode::DuplicateAgentId, a.agent_id);
        if (a.is_root) {
            if (!root.empty()) throw Error(ErrorCode::MultipleRoots, root + ", " + a.agent_id);
            root = a.agent_id;
        }
        t.agents_.emplace(a.agent_id, a);
    }
    if (root.empty()) throw Error(ErrorCode::NoRoot, "exactly one agent must have is_root = true");
    for (const auto& e : edges) {
        if (!t.agents_.count(e.from) || !t.agents_.count(e.to)) {
            throw Error(ErrorCode::DanglingEdge, e.from + " -> " + e.to);
        }
        t.edges_.insert(e);
    }
    if (auto cycles = detect_cycles(t); !cycles.empty()) {
        std::string path;
        for (const auto& id : cycles.front()) path += id + " -> ";
        throw Error(ErrorCode::CycleInCleanTopology, path + cycles.front().front());
    }
    std::set<AgentId> seen{root};
    std::deque<AgentId> queue{root};
    while (!queue.empty()) {
        auto cur = queue.front();
        queue.pop_front();
        for (auto it = t.edges_.lower_bound(Edge{cur, "", EdgeKind::delegate}); it != t.edges_.end() && it->from == cur;
             ++it) {
            if (seen.insert(it->to).second) queue.push_back(it->to);
        }
    }
    for (const auto& [id, a] : t.agents_) {
        if (!seen.count(id)) throw Error(ErrorCode::UnreachableAgent, id + " is not reachable from " + root);
    }
    if (shared_memory.scope() != MemoryScope::shared) {
        throw Error(ErrorCode::InvalidInput, "shared memory module must have shared scope");
    }
    t.shared_memory_ = std::move(shared_memory);
    return t;
}

std::vector<AgentId> children_of(const SystemTopology& topology, const AgentId& agent_id) {
    if (!topology.has_agent(agent_id)) throw Error(ErrorCode::UnknownAgent, agent_id);
    std::vector<AgentId> out;
    for (auto it = topology.edges().lower_bound(Edge{agent_id, "", EdgeKind::delegate});
         it != topology.edges().end() && it->from == agent_id; ++it) {
        if (it->kind == EdgeKind::delegate) out.push_back(it->to);
    }
    return out;
}

void validate_tools(const SystemTopology& topology, const ToolRegistry& tools) {
    for (const auto& [id, a] : topology.agents()) {
        for (const auto& tool : a.tool_ids) {
            if (!tools.contains(tool)) throw Error(ErrorCode::UnknownTool, "agent '" + id + "' uses unknown tool '" + tool + "'");
        }
    }
}

// ---------------------------------------------------------------- cycles

namespace {

class Johnson {
public:
    explicit Johnson(const std::vector<std::vector<int>>& adj)
        : adj_(adj), radj_(adj.size()), blocked_(adj.size()), b_(adj.size()), live_(adj.size()) {
        for (std::size_t v = 0; v < adj.size(); ++v) {
            for (int w : adj[v]) radj_[w].push_back(static_cast<int>(v));
        }
    }

    std::vector<std::vector<int>> run() {
        const int n = static_cast<int>(adj_.size());
        for (start_ = 0; start_ < n; ++start_) {
            if (!mark_live()) continue;
            std::fill(blocked_.begin(), blocked_.end(), 0);
            for (auto& s : b_) s.clear();
            circuit(start_);
        }
        std::sort(out_.begin(), out_.end());
        return std::move(out_);
    }

private:
    // Keeps only vertices >= start_ that can reach start_; nothing else can
    // lie on a cycle through it. False when start_ has no way back.
    bool mark_live() {
        std::fill(live_.begin(), live_.end(), 0);
        todo_.assign(1, start_);
        live_[start_] = 1;
        bool returns = false;
        while (!todo_.empty()) {
            int v = todo_.back();
            todo_.pop_back();
            for (int u : radj_[v]) {
                if (u < start_) continue;
                if (u == start_) returns = true;
                if (!live_[u]) {
                    live_[u] = 1;
                    todo_.push_back(u);
                }
            }
        }
        return returns;
    }

    bool circuit(int v) {
        bool found = false;
        stack_.push_back(v);
        blocked_[v] = 1;
        for (int w : adj_[v]) {
            if (w < start_ || !live_[w]) continue;
            if (w == start_) {
                out_.push_back(stack_);
                found = true;
            } else if (!blocked_[w] && circuit(w)) {
                found = true;
            }
        }
        if (found) {
            unblock(v);
        } else {
            for (int w : adj_[v]) {
                if (w >= start_ && live_[w] && std::find(b_[w].begin(), b_[w].end(), v) == b_[w].end()) b_[w].push_back(v);
            }
        }
        stack_.pop_back();
        return found;
    }

    void unblock(int u) {
        blocked_[u] = 0;
        auto pending = std::move(b_[u]);
        b_[u].clear();
        for (int w : pending) {
            if (blocked_[w]) unblock(w);
        }
    }

    const std::vector<std::vector<int>>& adj_;
    std::vector<std::vector<int>> radj_;
    std::vector<char> blocked_;
    std::vector<std::vector<int>> b_;
    std::vector<char> live_;
    std::vector<int> todo_;
    std::vector<int> stack_;
    std::vector<std::vector<int>> out_;
    int start_ = 0;
};

}  // namespace

std::vector<std::vector<int>> elementary_cycles(const std::vector<std::vector<int>>& adjacency) {
    // duplicate arcs would report the same cycle twice
    std::vector<std::vector<int>> adj(adjacency.size());
    for (std::size_t v = 0; v < adjacency.size(); ++v) {
        adj[v] = adjacency[v];
        std::sort(adj[v].begin(), adj[v].end());
        adj[v].erase(std::unique(adj[v].begin(), adj[v].end()), adj[v].end());
    }
    return Johnson(adj).run();
}

std::vector<Cycle> detect_cycles(const SystemTopology& topology) {
    // agents() is ordered by id, so a sorted name list doubles as the index
    std::vector<AgentId> names;
    names.reserve(topology.agents().size());
    for (const auto& [id, a] : topology.agents()) names.push_back(id);
    auto index_of = [&](const AgentId& id) {
        auto it = std::lower_bound(names.begin(), names.end(), id);
        if (it == names.end() || *it != id) throw Error(ErrorCode::DanglingEdge, "edge endpoint " + id);
        return static_cast<int>(it - names.begin());
    };
    std::vector<std::vector<int>> adj(names.size());
    for (const auto& e : topology.edges()) adj[index_of(e.from)].push_back(index_of(e.to));
    std::vector<Cycle> out;
    for (const auto& c : elementary_cycles(adj)) {
        Cycle named;
        named.reserve(c.size());
        for (int v : c) named.push_back(names[v]);
        out.push_back(std::move(named));
    }
    // names are sorted, so index order is lexicographic order already
    return out;
}

// ---------------------------------------------------------- serialization

void to_json(nlohmann::json& j, const ImagePayload& v) {
    j = {{"format", v.format}, {"base64", base64_encode(v.bytes)}};
}

void from_json(const nlohmann::json& j, ImagePayload& v) {
    v.format = j.at("format").get<std::string>();
    v.bytes = base64_decode(j.at("base64").get<std::string>());
}

void to_json(nlohmann::json& j, const MultimodalInput& v) {
    j = {{"sample_id", v.sample_id},   {"text", v.text},
         {"gold_answer", v.gold_answer}, {"category", v.category},
         {"text_tainted", v.text_tainted}, {"image_tainted", v.image_tainted}};
    j["image"] = v.image ? nlohmann::json(*v.image) : nlohmann::json(nullptr);
}

void from_json(const nlohmann::json& j, MultimodalInput& v) {
    v.sample_id = j.at("sample_id").get<std::string>();
    v.text = j.at("text").get<std::string>();
    v.gold_answer = j.value("gold_answer", "");
    v.category = j.value("category", "");
    v.text_tainted = j.value("text_tainted", false);
    v.image_tainted = j.value("image_tainted", false);
    if (j.contains("image") && !j.at("image").is_null()) {
        v.image = j.at("image").get<ImagePayload>();
    } else {
        v.image.reset();
    }
}

void to_json(nlohmann::json& j, const MemoryEntry& v) {
    j = {{"author", v.author_agent_id}, {"content", v.content}, {"tainted", v.tainted}, {"timestamp", v.timestamp}};
}

void from_json(const nlohmann::json& j, MemoryEntry& v) {
    v.author_agent_id = j.at("author").get<std::string>();
    v.content = j.at("content").get<std::string>();
    v.tainted = j.value("tainted", false);
    v.timestamp = j.at("timestamp").get<std::uint64_t>();
}

void to_json(nlohmann::json& j, const MemoryModule& v) {
    j = {{"scope", v.scope()}, {"entries", v.entries()}};
}

void from_json(const nlohmann::json& j, MemoryModule& v) {
    v = MemoryModule(j.value("scope", MemoryScope::individual));
    if (j.contains("entries")) {
        for (const auto& e : j.at("entries")) v.append(e.get<MemoryEntry>());
    }
}

void to_json(nlohmann::json& j, const AgentSpec& v) {
    j = {{"agent_id", v.agent_id}, {"system_prompt", v.system_prompt}, {"tool_ids", v.tool_ids},
         {"memory", v.memory},     {"is_root", v.is_root},             {"role", v.role_label}};
}

void from_json(const nlohmann::json& j, AgentSpec& v) {
    v.agent_id = j.at("agent_id").get<std::string>();
    v.system_prompt = j.value("system_prompt", "");
    v.tool_ids = j.value("tool_ids", std::set<std::string>{});
    v.memory = j.contains("memory") ? j.at("memory").get<MemoryModule>() : MemoryModule{};
    v.is_root = j.value("is_root", false);
    v.role_label = j.value("role", RoleLabel::custom);
}

void to_json(nlohmann::json& j, const ToolSpec& v) {
    j = {{"tool_id", v.tool_id}, {"description", v.description}, {"handler", v.handler_ref}, {"authentic", v.authentic}};
}

void from_json(const nlohmann::json& j, ToolSpec& v) {
    v.tool_id = j.at("tool_id").get<std::string>();
    v.description = j.value("description", "");
    v.handler_ref = j.value("handler", v.tool_id);
    v.authentic = j.value("authentic", true);
}

void to_json(nlohmann::json& j, const Edge& v) {
    j = {{"from", v.from}, {"to", v.to}, {"kind", v.kind}};
}

void from_json(const nlohmann::json& j, Edge& v) {
    v.from = j.at("from").get<std::string>();
    v.to = j.at("to").get<std::string>();
    v.kind = j.value("kind", EdgeKind::delegate);
}

void to_json(nlohmann::json& j, const Message& v) {
    j = {{"from", v.from_agent}, {"to", v.to_agent}, {"kind", v.kind},
         {"content", v.content},  {"step", v.step},   {"tainted", v.tainted}};
}

nlohmann::json serialize_topology(const SystemTopology& topology) {
    nlohmann::json agents = nlohmann::json::array();
    for (const auto& [id, a] : topology.agents()) agents.push_back(a);
    nlohmann::json j = {{"agents", agents},
                        {"edges", topology.edges()},
                        {"spoofed_ids", topology.spoofed_ids()},
                        {"shared_memory", topology.shared_memory()}};
    if (!topology.tainted_ids().empty()) j["tainted_ids"] = topology.tainted_ids();
    return j;
}

SystemTopology deserialize_topology(const nlohmann::json& j, bool validate) {
    auto agents = j.at("agents").get<std::vector<AgentSpec>>();
    auto edges = j.value("edges", std::vector<Edge>{});
    MemoryModule shared{MemoryScope::shared};
    if (j.contains("shared_memory")) shared = j.at("shared_memory").get<MemoryModule>();
    SystemTopology t;
    if (validate) {
        t = build_topology(agents, edges, shared);
    } else {
        t = unchecked_topology(agents, edges);
        MemoryBank bank = t.memories();
        bank.shared = shared;
        t.set_memories(bank);
    }
    for (const auto& id : j.value("spoofed_ids", std::set<std::string>{})) t.mark_spoofed(id);
    for (const auto& id : j.value("tainted_ids", std::set<std::string>{})) t.mark_tainted(id);
    return t;
}

std::string topology_digest(const SystemTopology& topology) {
    return sha256_hex(serialize_topology(topology).dump());
}

}  // namespace mmas
