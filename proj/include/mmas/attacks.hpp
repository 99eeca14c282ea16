#pragma once

#include "mmas/paradigms.hpp"
#include "mmas/system_model.hpp"

#include <nlohmann/json.hpp>

#include <cstdint>
#include <map>
#include <optional>
#include <set>
#include <string>
#include <vector>

namespace mmas {

enum class AttackLayer { perception, communication, reasoning };
enum class AttackKind { VIA, TIA, CMA, ASA, SBA, SMPA, SCIA, TSA, RMA, CIA };

/// Fixed pairing: VIA/TIA/CMA perception, ASA/SBA/SMPA/SCIA communication,
/// TSA/RMA/CIA reasoning.
AttackLayer layer_of(AttackKind kind);

/// The ten kinds in report column order.
const std::vector<AttackKind>& all_attack_kinds();

enum class InterceptionPoint { pre_perception, pre_dispatch, post_thought, pre_aggregate };

InterceptionPoint interception_point(AttackKind kind);

enum class ImageEditKind { none, text_overlay, region_recolor };

struct ImageEdit {
    ImageEditKind kind = ImageEditKind::none;
    std::string text;   // text_overlay: template, rendered upper-case
    int scale = 2;      // text_overlay
    int x = 0, y = 0, width = 0, height = 0;  // region_recolor
    std::string color;  // region_recolor: palette name or "#rrggbb"

    bool operator==(const ImageEdit&) const = default;
};

enum class InjectionMode { insert_before, insert_after, replace };
enum class InjectionAnchor { index, first, pivot, last };

struct InjectionPos {
    InjectionMode mode = InjectionMode::replace;
    InjectionAnchor anchor = InjectionAnchor::first;
    std::size_t index = 1;  // used when anchor == index (1-based)

    bool operator==(const InjectionPos&) const = default;
};

struct InjectedStep {
    std::string content;
    InjectionPos position;

    bool operator==(const InjectedStep&) const = default;
};

enum class AsaMode { insert, replace };

struct PayloadSpec {
    std::optional<std::string> adv_text;
    std::optional<std::vector<std::string>> adv_memory_fragments;
    std::optional<ImageEdit> image_edit;
    std::optional<InjectedStep> injected_step;
    std::optional<double> substitution_prob;
    std::optional<std::vector<AgentId>> cycle_members;

    AsaMode asa_mode = AsaMode::insert;
    std::size_t fake_count = 2;                        // TSA partial
    MemoryScope memory_scope = MemoryScope::individual;  // SMPA
    std::map<std::string, std::string> template_vars;  // {name} substitutions

    bool operator==(const PayloadSpec&) const = default;
};

struct AttackSpec {
    AttackLayer layer = AttackLayer::perception;
    AttackKind kind = AttackKind::TIA;
    std::set<AgentId> targets;
    PayloadSpec payload;
    std::uint64_t seed = 0;

    bool operator==(const AttackSpec&) const = default;
};

/// Layer/kind pairing (LayerKindMismatch) and per-kind required payload
/// fields (MissingPayloadField, CycleTooShort, EmptyFragmentSet, InvalidInput).
void validate_attack(const AttackSpec& spec);

/// Targets (and SBA members) must name agents of `topology`; throws UnknownTarget.
void validate_targets(const AttackSpec& spec, const SystemTopology& topology);

/// Replaces {question} and every {name} from `vars`. A template without
/// {question} is appended to the question after a space.
std::string render_question_template(const std::string& tmpl, const std::string& question,
                                     const std::map<std::string, std::string>& vars);

// ------------------------------------------------------------- perception

/// Rewrites text and perturbs the image; both marked tainted.
/// Errors: MissingPayloadField, ImageDecodeError.
MultimodalInput attack_cma(const MultimodalInput& input, const PayloadSpec& payload);
/// Image only; text stays byte-identical.
MultimodalInput attack_via(const MultimodalInput& input, const PayloadSpec& payload);
/// Text only; image stays byte-identical.
MultimodalInput attack_tia(const MultimodalInput& input, const PayloadSpec& payload);

/// Applies one image edit to a decoded copy; throws ImageDecodeError.
ImagePayload apply_image_edit(const ImagePayload& image, const ImageEdit& edit,
                              const std::map<std::string, std::string>& vars);

// ---------------------------------------------------------- communication

/// Spoofed id used by insert mode.
std::string spoofed_agent_id(const AgentId& target);

/// Insert mode adds `<target>_mal` mirroring every in/out edge of the target;
/// replace mode swaps the target's system prompt. Throws UnknownTarget.
SystemTopology attack_asa(const SystemTopology& topology, const std::set<AgentId>& targets, const PayloadSpec& payload);

struct SbaResult {
    SystemTopology topology;  // closing edges added, member prompts carry the instructions
    Cycle cycle;              // members in requested order
    std::map<AgentId, std::string> blocking_instructions;
};

/// Closes members[0] -> members[1] -> ... -> members[0] with peer edges
/// where no edge exists yet, and tells each member to wait on its successor.
/// Errors: CycleTooShort, UnknownTarget.
SbaResult attack_sba(const SystemTopology& topology, const std::vector<AgentId>& members);

std::string blocking_instruction(const AgentId& awaited);

/// Appends each fragment as a tainted entry to every target's memory
/// (or once into the shared module for shared scope).
/// Errors: UnknownTarget, EmptyFragmentSet.
MemoryBank attack_smpa(const MemoryBank& memories, const std::set<AgentId>& targets,
                       const std::vector<std::string>& fragments, MemoryScope scope, std::uint64_t seed);

/// Appends the same prior to each target's system prompt.
/// Errors: UnknownTarget, InvalidInput (empty prior).
std::map<AgentId, AgentSpec> attack_scia(const std::map<AgentId, AgentSpec>& agents, const std::set<AgentId>& targets,
                                         const std::string& adv_prior);

inline constexpr const char* kPriorSeparator = "\n\n";

// -------------------------------------------------------------- reasoning

/// Replaces the role sentence (the first line) of each target's prompt.
/// Errors: UnknownTarget, InvalidInput (empty role spec).
std::map<AgentId, AgentSpec> attack_rma(const std::map<AgentId, AgentSpec>& agents, const std::set<AgentId>& targets,
                                        const std::string& role_spec);

struct TsaResult {
    ToolRegistry tools;
    SystemTopology topology;                // partial mode grants fakes to holders of the mimicked tool
    std::vector<std::string> counterfeit_ids;  // fakes added or genuine tools substituted
};

/// Partial mode (no substitution_prob) adds fake_count counterfeit tools;
/// full mode replaces each genuine tool with probability substitution_prob.
/// Counterfeit output renders adv_text with {genuine} and {args}.
/// Errors: MissingPayloadField.
TsaResult attack_tsa(const ToolRegistry& tools, const SystemTopology& topology, const PayloadSpec& payload,
                     std::uint64_t seed);

/// 1-based position the injection applies to. Throws IndexOutOfRange or
/// EmptyTraceReplace.
std::size_t resolve_position(const ReasoningTrace& trace, const InjectionPos& pos);

/// Insert grows the trace by one (re-indexed); replace swaps content.
/// The touched step is flagged injected.
ReasoningTrace attack_cia(const ReasoningTrace& trace, const InjectedStep& step);

// ----------------------------------------------------------- composition

struct AttackedState {
    MultimodalInput input;
    SystemTopology topology;
    ToolRegistry tools;
    nlohmann::json detail;  // what changed, for the attack_applied event
};

/// Applies a pre-run operator (everything but CIA, which runs live on traces)
/// to copies of the run state. Agents whose definition changes are marked
/// tainted on the returned topology.
AttackedState apply_attack(const MultimodalInput& input, const SystemTopology& topology, const ToolRegistry& tools,
                           const AttackSpec& spec);

// ------------------------------------------------------------------- json

std::string to_string(AttackKind kind);
std::string to_string(AttackLayer layer);
std::string to_string(InterceptionPoint point);

NLOHMANN_JSON_SERIALIZE_ENUM(AttackLayer, {
    {AttackLayer::perception, "perception"},
    {AttackLayer::communication, "communication"},
    {AttackLayer::reasoning, "reasoning"},
})

NLOHMANN_JSON_SERIALIZE_ENUM(InterceptionPoint, {
    {InterceptionPoint::pre_perception, "pre_perception"},
    {InterceptionPoint::pre_dispatch, "pre_dispatch"},
    {InterceptionPoint::post_thought, "post_thought"},
    {InterceptionPoint::pre_aggregate, "pre_aggregate"},
})

NLOHMANN_JSON_SERIALIZE_ENUM(ImageEditKind, {
    {ImageEditKind::none, "none"},
    {ImageEditKind::text_overlay, "text_overlay"},
    {ImageEditKind::region_recolor, "region_recolor"},
})

NLOHMANN_JSON_SERIALIZE_ENUM(InjectionMode, {
    {InjectionMode::replace, "replace"},
    {InjectionMode::insert_before, "insert_before"},
    {InjectionMode::insert_after, "insert_after"},
})

NLOHMANN_JSON_SERIALIZE_ENUM(AsaMode, {
    {AsaMode::insert, "insert"},
    {AsaMode::replace, "replace"},
})

/// Accepts "VIA" or "via"; throws Error{ConfigInvalid} otherwise.
AttackKind parse_attack_kind(const std::string& text);

void to_json(nlohmann::json& j, AttackKind v);
void from_json(const nlohmann::json& j, AttackKind& v);
void to_json(nlohmann::json& j, const ImageEdit& v);
void from_json(const nlohmann::json& j, ImageEdit& v);
/// Position index is a number or one of "first", "pivot", "last".
void to_json(nlohmann::json& j, const InjectionPos& v);
void from_json(const nlohmann::json& j, InjectionPos& v);
void to_json(nlohmann::json& j, const InjectedStep& v);
void from_json(const nlohmann::json& j, InjectedStep& v);
void to_json(nlohmann::json& j, const PayloadSpec& v);
void from_json(const nlohmann::json& j, PayloadSpec& v);
/// `layer` defaults to the kind's layer when omitted.
void to_json(nlohmann::json& j, const AttackSpec& v);
void from_json(const nlohmann::json& j, AttackSpec& v);

}  // namespace mmas
