#pragma once

#include "mmas/image.hpp"
#include "mmas/system_model.hpp"

#include <nlohmann/json.hpp>

#include <map>
#include <memory>
#include <mutex>
#include <optional>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

namespace mmas {

// ------------------------------------------------------------ line protocol
//
// Every model reply starts with one of
//   THOUGHT: <text>
//   PLAN: <step>
//   ACTION: tool=<id> args=<text>
//   ACTION: delegate=<agent_id> task=<text>
//   FINAL: <answer>
//   REFLECT: <text>
// Later lines either open a new directive or continue the previous one.

enum class DirectiveKind { thought, plan, tool_call, delegate, final_answer, reflect };

struct Directive {
    DirectiveKind kind;
    std::string content;   // thought/plan/final/reflect text, or args/task
    std::string target;    // tool id or agent id for actions
    std::string line;      // first line, verbatim

    bool is_action() const {
        return kind == DirectiveKind::tool_call || kind == DirectiveKind::delegate ||
               kind == DirectiveKind::final_answer;
    }
};

/// Throws Error{ProtocolViolation}; never coerces malformed text.
std::vector<Directive> parse_reply(std::string_view reply);

// ------------------------------------------------------------------- chat

enum class ChatRole { system, user, assistant, tool };

struct ChatTurn {
    ChatRole role = ChatRole::user;
    std::string content;
    std::vector<std::shared_ptr<const ImagePayload>> images;
};

/// Throws Error{InvalidInput} if turns are empty or a system turn is not first.
void validate_turns(const std::vector<ChatTurn>& turns);

/// Flat text form used by scripted matchers: "<role>: <content>" per turn.
std::string render_prompt(const std::vector<ChatTurn>& turns);

/// Stable digest of a request (roles, contents and image bytes).
std::string request_digest(const std::vector<ChatTurn>& turns);

struct CallContext {
    AgentId agent_id;
    std::size_t step = 0;  // per-agent model call index within a run, from 1
    std::string phase;     // act | plan | solve | answer | reflect
};

class Backend {
public:
    virtual ~Backend() = default;
    virtual std::string complete(const CallContext& ctx, const std::vector<ChatTurn>& turns) = 0;
    virtual std::string model_name() const = 0;
};

// --------------------------------------------------------------- profiles

enum class BackendKind { scripted, recorded, remote };

/// All criteria present must hold; a rule with none is a default rule.
/// When `regex` is set, `reply` may reference capture groups as $1, $2...
struct ScriptRule {
    std::optional<AgentId> agent;
    std::optional<std::size_t> step;
    std::optional<std::string> phase;
    std::optional<std::string> contains;
    std::optional<std::string> regex;
    std::string reply;
};

struct BackendProfile {
    BackendKind kind = BackendKind::scripted;
    std::string model_name = "scripted";
    std::string endpoint;           // remote only
    double temperature = 0.0;       // remote only
    std::int64_t seed = 0;
    std::vector<ScriptRule> script;  // scripted only
    std::string recording_path;     // recorded only
    std::string api_key_env = "MMAS_API_KEY";
};

void to_json(nlohmann::json& j, const ScriptRule& v);
void from_json(const nlohmann::json& j, ScriptRule& v);
void to_json(nlohmann::json& j, const BackendProfile& v);
void from_json(const nlohmann::json& j, BackendProfile& v);

NLOHMANN_JSON_SERIALIZE_ENUM(BackendKind, {
    {BackendKind::scripted, "scripted"},
    {BackendKind::recorded, "recorded"},
    {BackendKind::remote, "remote"},
})

class ScriptedBackend final : public Backend {
public:
    ScriptedBackend(std::vector<ScriptRule> rules, std::string model_name = "scripted");

    /// First matching rule wins; throws Error{NoRuleMatched}.
    std::string complete(const CallContext& ctx, const std::vector<ChatTurn>& turns) override;
    std::string model_name() const override { return model_name_; }

private:
    struct Compiled;
    std::vector<ScriptRule> rules_;
    std::vector<std::shared_ptr<const Compiled>> compiled_;
    std::string model_name_;
};

// -------------------------------------------------------------- recordings

struct RecordEntry {
    AgentId agent_id;
    std::size_t step = 0;
    std::string request_digest;
    std::string reply;

    bool operator==(const RecordEntry&) const = default;
};

class Recording {
public:
    void add(RecordEntry entry);
    const std::vector<RecordEntry>& entries() const noexcept { return entries_; }
    const RecordEntry* find(const AgentId& agent, std::size_t step) const;

    /// Line-delimited {agent_id, step, request_digest, reply}.
    std::string to_jsonl() const;
    static Recording from_jsonl(std::string_view text);
    static Recording load(const std::string& path);
    void save(const std::string& path) const;

    bool operator==(const Recording& o) const { return entries_ == o.entries_; }

private:
    std::vector<RecordEntry> entries_;
    std::map<std::pair<AgentId, std::size_t>, std::size_t> index_;
};

/// Replays replies keyed by (agent_id, step).
/// Errors: RecordingExhausted (no entry), RecordingMismatch (request digest differs).
class RecordedBackend final : public Backend {
public:
    explicit RecordedBackend(Recording recording, std::string model_name = "recorded")
        : recording_(std::move(recording)), model_name_(std::move(model_name)) {}

    std::string complete(const CallContext& ctx, const std::vector<ChatTurn>& turns) override;
    std::string model_name() const override { return model_name_; }

private:
    std::mutex mutex_;
    Recording recording_;
    std::string model_name_;
};

/// Records every exchange passing through to the wrapped backend.
class RecordingTap final : public Backend {
public:
    explicit RecordingTap(Backend& inner) : inner_(inner) {}

    std::string complete(const CallContext& ctx, const std::vector<ChatTurn>& turns) override;
    std::string model_name() const override { return inner_.model_name(); }
    Recording recording() const;

private:
    Backend& inner_;
    mutable std::mutex mutex_;
    Recording recording_;
};

// ---------------------------------------------------------------- remote

struct HttpResponse {
    int status = 0;
    std::string body;
};

class Transport {
public:
    virtual ~Transport() = default;
    /// Throws Error{TransportError} when no response arrives.
    virtual HttpResponse post(const std::string& url, const std::vector<std::pair<std::string, std::string>>& headers,
                              const std::string& body) = 0;
};

/// cpp-httplib backed transport.
class HttpTransport final : public Transport {
public:
    explicit HttpTransport(int timeout_seconds = 120) : timeout_seconds_(timeout_seconds) {}
    HttpResponse post(const std::string& url, const std::vector<std::pair<std::string, std::string>>& headers,
                      const std::string& body) override;

private:
    int timeout_seconds_;
};

/// Chat-completion request body. Keys are emitted in sorted order so the
/// bytes are stable for fixed inputs:
///   {"messages":[{"content":...,"role":...}],"model":...,"seed":...,"temperature":...}
/// A turn with images carries content as an array of
///   {"text":...,"type":"text"} and {"image_url":{"url":"data:<mime>;base64,..."},"type":"image_url"}.
std::string build_chat_request(const BackendProfile& profile, const std::vector<ChatTurn>& turns);

/// Extracts choices[0].message.content; throws Error{TransportError} on a malformed body.
std::string parse_chat_response(std::string_view body);

/// Credentials are read from the environment variable named by
/// profile.api_key_env at call time and never stored.
class RemoteBackend final : public Backend {
public:
    RemoteBackend(BackendProfile profile, std::shared_ptr<Transport> transport);

    /// Errors: TransportError, NonOkStatus, ProtocolViolation.
    std::string complete(const CallContext& ctx, const std::vector<ChatTurn>& turns) override;
    std::string model_name() const override { return profile_.model_name; }

private:
    BackendProfile profile_;
    std::shared_ptr<Transport> transport_;
};

/// Builds the backend a profile describes. `transport` is only used for
/// remote profiles; a default HttpTransport is created when null.
std::unique_ptr<Backend> make_backend(const BackendProfile& profile, std::shared_ptr<Transport> transport = nullptr);

// -------------------------------------------------------------- embeddings

using Embedding = std::vector<double>;

class EmbeddingProvider {
public:
    virtual ~EmbeddingProvider() = default;
    virtual Embedding embed_image(const ImagePayload& image) = 0;
    virtual Embedding embed_text(std::string_view text) = 0;
    virtual int dimension() const = 0;
    virtual std::string identity() const = 0;
};

/// Seeded hash of the input bytes projected onto the unit sphere.
class StubEmbedder final : public EmbeddingProvider {
public:
    explicit StubEmbedder(int dimension = 64, std::uint64_t seed = 0);

    Embedding embed_image(const ImagePayload& image) override;
    Embedding embed_text(std::string_view text) override;
    int dimension() const override { return dimension_; }
    std::string identity() const override;

private:
    Embedding project(std::string_view bytes) const;
    int dimension_;
    std::uint64_t seed_;
};

/// POST {"input":[...],"model":...} and read data[0].embedding.
class RemoteEmbedder final : public EmbeddingProvider {
public:
    RemoteEmbedder(std::string endpoint, std::string model, int dimension, std::shared_ptr<Transport> transport,
                   std::string api_key_env = "MMAS_API_KEY");

    Embedding embed_image(const ImagePayload& image) override;
    Embedding embed_text(std::string_view text) override;
    int dimension() const override { return dimension_; }
    std::string identity() const override { return "remote:" + model_; }

private:
    Embedding request(const nlohmann::json& input);
    std::string endpoint_;
    std::string model_;
    int dimension_;
    std::shared_ptr<Transport> transport_;
    std::string api_key_env_;
};

double cosine(const Embedding& a, const Embedding& b);

std::string image_mime(const ImagePayload& image);

}  // namespace mmas
