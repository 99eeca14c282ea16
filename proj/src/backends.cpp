#include "mmas/backends.hpp"

#include "mmas/digest.hpp"
#include "mmas/error.hpp"

#ifdef MMAS_HTTPS
#define CPPHTTPLIB_OPENSSL_SUPPORT
#endif
#include <httplib.h>

#include <cmath>
#include <cstdlib>
#include <fstream>
#include <random>
#include <regex>
#include <sstream>

namespace mmas {

// ------------------------------------------------------------ line protocol

namespace {

std::string_view trim(std::string_view s) {
    while (!s.empty() && std::isspace(static_cast<unsigned char>(s.front()))) s.remove_prefix(1);
    while (!s.empty() && std::isspace(static_cast<unsigned char>(s.back()))) s.remove_suffix(1);
    return s;
}

struct Keyword {
    std::string_view prefix;
    DirectiveKind kind;
};

constexpr Keyword kKeywords[] = {
    {"THOUGHT:", DirectiveKind::thought}, {"PLAN:", DirectiveKind::plan},
    {"ACTION:", DirectiveKind::tool_call}, {"FINAL:", DirectiveKind::final_answer},
    {"REFLECT:", DirectiveKind::reflect},
};

std::optional<Keyword> keyword_of(std::string_view line) {
    for (const auto& k : kKeywords) {
        if (line.substr(0, k.prefix.size()) == k.prefix) return k;
    }
    return std::nullopt;
}

Directive parse_action(std::string_view line, std::string_view body) {
    body = trim(body);
    auto split = [&](std::string_view key, std::string_view arg_key, DirectiveKind kind) -> std::optional<Directive> {
        if (body.substr(0, key.size()) != key) return std::nullopt;
        auto rest = body.substr(key.size());
        auto pos = rest.find(arg_key);
        if (pos == std::string_view::npos) {
            throw Error(ErrorCode::ProtocolViolation, "missing '" + std::string(arg_key) + "' in: " + std::string(line));
        }
        auto target = trim(rest.substr(0, pos));
        if (target.empty() || target.find(' ') != std::string_view::npos) {
            throw Error(ErrorCode::ProtocolViolation, "bad target in: " + std::string(line));
        }
        return Directive{kind, std::string(trim(rest.substr(pos + arg_key.size()))), std::string(target),
                         std::string(line)};
    };
    if (auto d = split("tool=", " args=", DirectiveKind::tool_call)) return *d;
    if (auto d = split("delegate=", " task=", DirectiveKind::delegate)) return *d;
    throw Error(ErrorCode::ProtocolViolation, "ACTION must be tool= or delegate=: " + std::string(line));
}

}  // namespace

std::vector<Directive> parse_reply(std::string_view reply) {
    reply = trim(reply);
    if (reply.empty()) throw Error(ErrorCode::ProtocolViolation, "empty reply");
    std::vector<Directive> out;
    std::size_t pos = 0;
    while (pos <= reply.size()) {
        auto nl = reply.find('\n', pos);
        auto raw = reply.substr(pos, nl == std::string_view::npos ? std::string_view::npos : nl - pos);
        pos = nl == std::string_view::npos ? reply.size() + 1 : nl + 1;
        if (!raw.empty() && raw.back() == '\r') raw.remove_suffix(1);
        auto kw = keyword_of(raw);
        if (!kw) {
            if (out.empty()) {
                throw Error(ErrorCode::ProtocolViolation, "reply does not start with a protocol keyword: " +
                                                              std::string(raw.substr(0, 80)));
            }
            auto& prev = out.back();
            prev.content += prev.content.empty() ? std::string(trim(raw)) : "\n" + std::string(raw);
            continue;
        }
        auto body = raw.substr(kw->prefix.size());
        if (kw->kind == DirectiveKind::tool_call) {
            out.push_back(parse_action(raw, body));
        } else {
            out.push_back(Directive{kw->kind, std::string(trim(body)), {}, std::string(raw)});
        }
    }
    for (auto& d : out) {
        while (!d.content.empty() && std::isspace(static_cast<unsigned char>(d.content.back()))) d.content.pop_back();
        if (d.kind == DirectiveKind::final_answer && d.content.empty()) {
            throw Error(ErrorCode::ProtocolViolation, "FINAL with empty answer");
        }
    }
    return out;
}

// ------------------------------------------------------------------- chat

namespace {

std::string_view role_name(ChatRole r) {
    switch (r) {
        case ChatRole::system: return "system";
        case ChatRole::user: return "user";
        case ChatRole::assistant: return "assistant";
        case ChatRole::tool: return "tool";
    }
    return "user";
}

}  // namespace

void validate_turns(const std::vector<ChatTurn>& turns) {
    if (turns.empty()) throw Error(ErrorCode::InvalidInput, "no chat turns");
    for (std::size_t i = 1; i < turns.size(); ++i) {
        if (turns[i].role == ChatRole::system) throw Error(ErrorCode::InvalidInput, "system turn must be first");
    }
}

std::string render_prompt(const std::vector<ChatTurn>& turns) {
    std::string out;
    for (const auto& t : turns) {
        out += role_name(t.role);
        out += ": ";
        out += t.content;
        out += '\n';
    }
    return out;
}

std::string request_digest(const std::vector<ChatTurn>& turns) {
    nlohmann::json j = nlohmann::json::array();
    for (const auto& t : turns) {
        nlohmann::json images = nlohmann::json::array();
        for (const auto& img : t.images) {
            images.push_back(sha256_hex(std::string_view(reinterpret_cast<const char*>(img->bytes.data()), img->bytes.size())));
        }
        j.push_back({{"role", role_name(t.role)}, {"content", t.content}, {"images", images}});
    }
    return sha256_hex(j.dump());
}

// ---------------------------------------------------------------- scripted

struct ScriptedBackend::Compiled {
    std::optional<std::regex> regex;
};

ScriptedBackend::ScriptedBackend(std::vector<ScriptRule> rules, std::string model_name)
    : rules_(std::move(rules)), model_name_(std::move(model_name)) {
    for (const auto& r : rules_) {
        auto c = std::make_shared<Compiled>();
        if (r.regex) {
            try {
                c->regex.emplace(*r.regex);
            } catch (const std::regex_error& e) {
                throw Error(ErrorCode::InvalidInput, "bad script regex '" + *r.regex + "': " + e.what());
            }
        }
        compiled_.push_back(std::move(c));
    }
}

std::string ScriptedBackend::complete(const CallContext& ctx, const std::vector<ChatTurn>& turns) {
    validate_turns(turns);
    const std::string prompt = render_prompt(turns);
    for (std::size_t i = 0; i < rules_.size(); ++i) {
        const auto& r = rules_[i];
        if (r.agent && *r.agent != ctx.agent_id) continue;
        if (r.step && *r.step != ctx.step) continue;
        if (r.phase && *r.phase != ctx.phase) continue;
        if (r.contains && prompt.find(*r.contains) == std::string::npos) continue;
        if (compiled_[i]->regex) {
            std::smatch m;
            if (!std::regex_search(prompt, m, *compiled_[i]->regex)) continue;
            return m.format(r.reply);
        }
        return r.reply;
    }
    throw Error(ErrorCode::NoRuleMatched, "agent " + ctx.agent_id + " step " + std::to_string(ctx.step) + " phase " +
                                              ctx.phase);
}

void to_json(nlohmann::json& j, const ScriptRule& v) {
    j = nlohmann::json::object();
    if (v.agent) j["agent"] = *v.agent;
    if (v.step) j["step"] = *v.step;
    if (v.phase) j["phase"] = *v.phase;
    if (v.contains) j["contains"] = *v.contains;
    if (v.regex) j["regex"] = *v.regex;
    j["reply"] = v.reply;
}

void from_json(const nlohmann::json& j, ScriptRule& v) {
    v = ScriptRule{};
    if (j.contains("agent")) v.agent = j.at("agent").get<std::string>();
    if (j.contains("step")) v.step = j.at("step").get<std::size_t>();
    if (j.contains("phase")) v.phase = j.at("phase").get<std::string>();
    if (j.contains("contains")) v.contains = j.at("contains").get<std::string>();
    if (j.contains("regex")) v.regex = j.at("regex").get<std::string>();
    v.reply = j.at("reply").get<std::string>();
}

void to_json(nlohmann::json& j, const BackendProfile& v) {
    j = {{"kind", v.kind}, {"model_name", v.model_name}, {"seed", v.seed}};
    switch (v.kind) {
        case BackendKind::scripted: j["script"] = v.script; break;
        case BackendKind::recorded: j["recording_path"] = v.recording_path; break;
        case BackendKind::remote:
            j["endpoint"] = v.endpoint;
            j["temperature"] = v.temperature;
            j["api_key_env"] = v.api_key_env;
            break;
    }
}

void from_json(const nlohmann::json& j, BackendProfile& v) {
    v = BackendProfile{};
    v.kind = j.value("kind", BackendKind::scripted);
    v.model_name = j.value("model_name", std::string(v.kind == BackendKind::scripted ? "scripted" : "model"));
    v.seed = j.value("seed", std::int64_t{0});
    v.endpoint = j.value("endpoint", "");
    v.temperature = j.value("temperature", 0.0);
    v.recording_path = j.value("recording_path", "");
    v.api_key_env = j.value("api_key_env", "MMAS_API_KEY");
    if (j.contains("script")) v.script = j.at("script").get<std::vector<ScriptRule>>();
}

// -------------------------------------------------------------- recordings

void Recording::add(RecordEntry entry) {
    index_[{entry.agent_id, entry.step}] = entries_.size();
    entries_.push_back(std::move(entry));
}

const RecordEntry* Recording::find(const AgentId& agent, std::size_t step) const {
    auto it = index_.find({agent, step});
    return it == index_.end() ? nullptr : &entries_[it->second];
}

std::string Recording::to_jsonl() const {
    std::string out;
    for (const auto& e : entries_) {
        nlohmann::json j = {{"agent_id", e.agent_id}, {"step", e.step}, {"request_digest", e.request_digest},
                            {"reply", e.reply}};
        out += j.dump();
        out += '\n';
    }
    return out;
}

Recording Recording::from_jsonl(std::string_view text) {
    Recording r;
    std::istringstream in{std::string(text)};
    std::string line;
    std::size_t lineno = 0;
    while (std::getline(in, line)) {
        ++lineno;
        if (trim(line).empty()) continue;
        try {
            auto j = nlohmann::json::parse(line);
            r.add(RecordEntry{j.at("agent_id").get<std::string>(), j.at("step").get<std::size_t>(),
                              j.at("request_digest").get<std::string>(), j.at("reply").get<std::string>()});
        } catch (const nlohmann::json::exception& e) {
            throw Error(ErrorCode::ParseError, "recording line " + std::to_string(lineno) + ": " + e.what());
        }
    }
    return r;
}

Recording Recording::load(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw Error(ErrorCode::IoError, "cannot read recording " + path);
    std::stringstream ss;
    ss << in.rdbuf();
    return from_jsonl(ss.str());
}

void Recording::save(const std::string& path) const {
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw Error(ErrorCode::IoError, "cannot write recording " + path);
    out << to_jsonl();
}

std::string RecordedBackend::complete(const CallContext& ctx, const std::vector<ChatTurn>& turns) {
    validate_turns(turns);
    std::lock_guard lock(mutex_);
    const auto* e = recording_.find(ctx.agent_id, ctx.step);
    if (!e) {
        throw Error(ErrorCode::RecordingExhausted, "no recorded reply for " + ctx.agent_id + " step " +
                                                       std::to_string(ctx.step));
    }
    if (e->request_digest != request_digest(turns)) {
        throw Error(ErrorCode::RecordingMismatch, "request for " + ctx.agent_id + " step " + std::to_string(ctx.step) +
                                                      " differs from the recording");
    }
    return e->reply;
}

std::string RecordingTap::complete(const CallContext& ctx, const std::vector<ChatTurn>& turns) {
    auto reply = inner_.complete(ctx, turns);
    std::lock_guard lock(mutex_);
    recording_.add(RecordEntry{ctx.agent_id, ctx.step, request_digest(turns), reply});
    return reply;
}

Recording RecordingTap::recording() const {
    std::lock_guard lock(mutex_);
    return recording_;
}

// ---------------------------------------------------------------- remote

HttpResponse HttpTransport::post(const std::string& url,
                                 const std::vector<std::pair<std::string, std::string>>& headers,
                                 const std::string& body) {
    auto scheme_end = url.find("://");
    if (scheme_end == std::string::npos) throw Error(ErrorCode::TransportError, "bad endpoint URL " + url);
    auto path_start = url.find('/', scheme_end + 3);
    const std::string origin = url.substr(0, path_start);
    const std::string path = path_start == std::string::npos ? "/" : url.substr(path_start);
    httplib::Client client(origin);
    client.set_connection_timeout(timeout_seconds_);
    client.set_read_timeout(timeout_seconds_);
    httplib::Headers h;
    for (const auto& [k, v] : headers) h.emplace(k, v);
    auto res = client.Post(path, h, body, "application/json");
    if (!res) throw Error(ErrorCode::TransportError, "POST " + url + ": " + httplib::to_string(res.error()));
    return HttpResponse{res->status, res->body};
}

std::string image_mime(const ImagePayload& image) {
    if (image.format == "ppm") return "image/x-portable-pixmap";
    if (image.format == "png") return "image/png";
    if (image.format == "jpeg" || image.format == "jpg") return "image/jpeg";
    return "application/octet-stream";
}

namespace {

std::string data_url(const ImagePayload& image) {
    return "data:" + image_mime(image) + ";base64," + base64_encode(image.bytes);
}

std::vector<std::pair<std::string, std::string>> auth_headers(const std::string& env_name) {
    std::vector<std::pair<std::string, std::string>> headers;
    if (const char* key = std::getenv(env_name.c_str()); key && *key) {
        headers.emplace_back("Authorization", std::string("Bearer ") + key);
    }
    return headers;
}

}  // namespace

std::string build_chat_request(const BackendProfile& profile, const std::vector<ChatTurn>& turns) {
    validate_turns(turns);
    nlohmann::json messages = nlohmann::json::array();
    for (const auto& t : turns) {
        nlohmann::json m = {{"role", role_name(t.role)}};
        if (t.images.empty()) {
            m["content"] = t.content;
        } else {
            nlohmann::json parts = nlohmann::json::array();
            parts.push_back({{"type", "text"}, {"text", t.content}});
            for (const auto& img : t.images) {
                parts.push_back({{"type", "image_url"}, {"image_url", {{"url", data_url(*img)}}}});
            }
            m["content"] = parts;
        }
        messages.push_back(std::move(m));
    }
    nlohmann::json body = {{"model", profile.model_name},
                           {"messages", messages},
                           {"temperature", profile.temperature},
                           {"seed", profile.seed}};
    return body.dump();
}

std::string parse_chat_response(std::string_view body) {
    try {
        auto j = nlohmann::json::parse(body);
        return j.at("choices").at(0).at("message").at("content").get<std::string>();
    } catch (const nlohmann::json::exception& e) {
        throw Error(ErrorCode::TransportError, std::string("malformed chat response: ") + e.what());
    }
}

RemoteBackend::RemoteBackend(BackendProfile profile, std::shared_ptr<Transport> transport)
    : profile_(std::move(profile)), transport_(std::move(transport)) {
    if (profile_.endpoint.empty()) throw Error(ErrorCode::ConfigInvalid, "remote backend needs an endpoint");
    if (!transport_) transport_ = std::make_shared<HttpTransport>();
}

std::string RemoteBackend::complete(const CallContext&, const std::vector<ChatTurn>& turns) {
    auto res = transport_->post(profile_.endpoint, auth_headers(profile_.api_key_env), build_chat_request(profile_, turns));
    if (res.status != 200) {
        throw Error(ErrorCode::NonOkStatus, "HTTP " + std::to_string(res.status) + ": " + res.body.substr(0, 200));
    }
    auto reply = parse_chat_response(res.body);
    (void)parse_reply(reply);
    return reply;
}

std::unique_ptr<Backend> make_backend(const BackendProfile& profile, std::shared_ptr<Transport> transport) {
    switch (profile.kind) {
        case BackendKind::scripted: return std::make_unique<ScriptedBackend>(profile.script, profile.model_name);
        case BackendKind::recorded:
            return std::make_unique<RecordedBackend>(Recording::load(profile.recording_path), profile.model_name);
        case BackendKind::remote: return std::make_unique<RemoteBackend>(profile, std::move(transport));
    }
    throw Error(ErrorCode::ConfigInvalid, "unknown backend kind");
}

// -------------------------------------------------------------- embeddings

StubEmbedder::StubEmbedder(int dimension, std::uint64_t seed) : dimension_(dimension), seed_(seed) {
    if (dimension <= 0) throw Error(ErrorCode::InvalidInput, "embedding dimension must be positive");
}

std::string StubEmbedder::identity() const {
    return "stub:d" + std::to_string(dimension_) + ":s" + std::to_string(seed_);
}

Embedding StubEmbedder::project(std::string_view bytes) const {
    std::mt19937_64 rng(fnv1a64(bytes) ^ (seed_ * 0x9e3779b97f4a7c15ULL));
    auto uniform = [&] { return (static_cast<double>(rng() >> 11) + 0.5) * 0x1.0p-53; };
    Embedding v(static_cast<std::size_t>(dimension_));
    double norm2 = 0;
    for (auto& x : v) {
        // Box-Muller; mt19937_64 output is fully specified, so vectors are portable
        x = std::sqrt(-2.0 * std::log(uniform())) * std::cos(2.0 * M_PI * uniform());
        norm2 += x * x;
    }
    const double inv = 1.0 / std::sqrt(norm2);
    for (auto& x : v) x *= inv;
    return v;
}

Embedding StubEmbedder::embed_image(const ImagePayload& image) {
    (void)decode_image(image);
    return project(std::string_view(reinterpret_cast<const char*>(image.bytes.data()), image.bytes.size()));
}

Embedding StubEmbedder::embed_text(std::string_view text) {
    if (text.empty()) throw Error(ErrorCode::InvalidInput, "cannot embed empty text");
    return project(text);
}

RemoteEmbedder::RemoteEmbedder(std::string endpoint, std::string model, int dimension,
                               std::shared_ptr<Transport> transport, std::string api_key_env)
    : endpoint_(std::move(endpoint)), model_(std::move(model)), dimension_(dimension),
      transport_(transport ? std::move(transport) : std::make_shared<HttpTransport>()),
      api_key_env_(std::move(api_key_env)) {}

Embedding RemoteEmbedder::request(const nlohmann::json& input) {
    nlohmann::json body = {{"model", model_}, {"input", nlohmann::json::array({input})}};
    auto res = transport_->post(endpoint_, auth_headers(api_key_env_), body.dump());
    if (res.status != 200) throw Error(ErrorCode::NonOkStatus, "HTTP " + std::to_string(res.status));
    Embedding v;
    try {
        v = nlohmann::json::parse(res.body).at("data").at(0).at("embedding").get<Embedding>();
    } catch (const nlohmann::json::exception& e) {
        throw Error(ErrorCode::TransportError, std::string("malformed embedding response: ") + e.what());
    }
    if (static_cast<int>(v.size()) != dimension_) {
        throw Error(ErrorCode::TransportError, "embedding has dimension " + std::to_string(v.size()));
    }
    double norm2 = 0;
    for (double x : v) norm2 += x * x;
    if (norm2 <= 0) throw Error(ErrorCode::TransportError, "zero embedding");
    for (auto& x : v) x /= std::sqrt(norm2);
    return v;
}

Embedding RemoteEmbedder::embed_image(const ImagePayload& image) {
    return request({{"type", "image_url"}, {"image_url", {{"url", data_url(image)}}}});
}

Embedding RemoteEmbedder::embed_text(std::string_view text) {
    if (text.empty()) throw Error(ErrorCode::InvalidInput, "cannot embed empty text");
    return request({{"type", "text"}, {"text", std::string(text)}});
}

double cosine(const Embedding& a, const Embedding& b) {
    if (a.size() != b.size() || a.empty()) throw Error(ErrorCode::InvalidInput, "embedding dimension mismatch");
    double dot = 0, na = 0, nb = 0;
    for (std::size_t i = 0; i < a.size(); ++i) {
        dot += a[i] * b[i];
        na += a[i] * a[i];
        nb += b[i] * b[i];
    }
    return dot / std::sqrt(na * nb);
}

}  // namespace mmas
