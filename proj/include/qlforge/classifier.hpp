#pragma once

#include "qlforge/extractor.hpp"
#include "qlforge/llm.hpp"
#include "qlforge/prompt.hpp"

#include <array>
#include <cstdint>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include <json.hpp>

namespace qlforge {

enum class TaintLabel { Source, Sink, Sanitizer, None };

std::string_view to_string(TaintLabel label);
/// Case-insensitive; nullopt for anything outside the vocabulary.
std::optional<TaintLabel> parse_label(std::string_view text);

inline constexpr int kVotingRounds = 3;

using RecordIndex = std::map<std::string, ApiRecord>;
RecordIndex index_records(const std::vector<ApiRecord>& records);

/// The analysis criteria quoted into the classification prompt. Counts are
/// fixed by the prompt structure: 9 sink characteristics, 8 source
/// heuristics, 3 sanitizer criteria.
struct TaintCatalog {
    std::string version;
    std::vector<std::string> sink_characteristics;
    std::vector<std::string> source_heuristics;
    std::vector<std::string> sanitizer_criteria;

    static const TaintCatalog& defaults();
};

struct ContextGroup {
    int round = 0;
    std::size_t index = 0;
    std::string id; // "r<round>g<index>"
    std::vector<std::string> members;
    std::size_t token_estimate = 0;
    std::size_t budget = 0;

    friend bool operator==(const ContextGroup&, const ContextGroup&) = default;
};

/// Renders the classification prompt for one group. The rendered text is
/// the template with API_INFORMATION replaced by one JSON line per member,
/// so its token estimate never exceeds frame_tokens() plus the sum of the
/// members' block_tokens().
class ClassificationPrompt {
public:
    ClassificationPrompt();
    explicit ClassificationPrompt(PromptTemplate tmpl, TaintCatalog catalog = TaintCatalog::defaults());

    static const char* default_template();

    std::size_t frame_tokens() const { return frame_tokens_; }
    static std::string record_block(const ApiRecord& record);
    static std::size_t block_tokens(const ApiRecord& record) { return estimate_tokens(record_block(record)); }

    /// Throws UnknownApiId, TemplateError (including a rendered prompt over
    /// the group's budget).
    std::string render(const ContextGroup& group, const RecordIndex& records) const;

private:
    std::map<std::string, std::string> fixed_values() const;

    PromptTemplate template_;
    TaintCatalog catalog_;
    std::size_t frame_tokens_ = 0;
};

struct SizedItem {
    std::string id;
    std::size_t tokens = 0;
};

/// Three rounds of groups; each round partitions the items. Items are
/// greedily packed in a seeded permutation order until the next one would
/// push frame + contents over `budget`. Among several candidate permutations
/// per round the one repeating the fewest earlier co-member sets is kept.
/// Pure in (items, frame_tokens, budget, seed). Throws RecordTooLarge.
std::vector<ContextGroup> plan_groups(std::span<const SizedItem> items, std::size_t frame_tokens,
                                      std::size_t budget, std::uint64_t seed);

std::vector<ContextGroup> plan_groups(const std::vector<ApiRecord>& records, std::size_t budget,
                                      std::uint64_t seed, const ClassificationPrompt& prompt = {});

std::string build_classification_prompt(const ContextGroup& group, const RecordIndex& records,
                                        const ClassificationPrompt& prompt = {});

struct Ballot {
    int round = 0;
    std::string group_id;
    TaintLabel label = TaintLabel::None;
    std::uint64_t response_seq = 0; // transcript entry, 0 when none
    bool parse_warning = false;

    friend bool operator==(const Ballot&, const Ballot&) = default;
};

struct MemberBallot {
    std::string api_id;
    TaintLabel label = TaintLabel::None;
    bool parse_warning = false;
    std::string note;
};

/// One ballot per member in group order. Throws WhollyMalformed when the
/// text contains no `<id>: <label>` line at all.
std::vector<MemberBallot> parse_classification_response(const std::string& text,
                                                        const ContextGroup& group);

struct VoteRecord {
    std::string api_id;
    std::array<Ballot, kVotingRounds> ballots;
    TaintLabel resolved = TaintLabel::None;
    bool tie = false;

    friend bool operator==(const VoteRecord&, const VoteRecord&) = default;
};

/// Label held by at least two of three ballots, or None with tie set when
/// all three differ.
std::pair<TaintLabel, bool> majority(TaintLabel a, TaintLabel b, TaintLabel c);

/// Throws BallotCountMismatch unless every id has exactly three ballots.
std::vector<VoteRecord> tally_votes(const std::map<std::string, std::vector<Ballot>>& ballots);

struct ClassifyOptions {
    std::size_t budget = 6000;
    std::uint64_t seed = 0;
    std::size_t workers = 4;
};

struct ClassificationResult {
    std::vector<VoteRecord> votes;
    std::vector<std::string> warnings;
};

/// Plans groups, classifies each group with one LLM call (a wholly
/// malformed answer is retried once) and tallies the three ballots per api.
ClassificationResult classify_all(const std::vector<ApiRecord>& records, Gateway& gateway,
                                  const ClassifyOptions& options,
                                  const ClassificationPrompt& prompt = {});

nlohmann::json to_json(const VoteRecord& vote);
VoteRecord vote_record_from_json(const nlohmann::json& doc);
std::string serialize_votes(const std::vector<VoteRecord>& votes);
/// Throws SpecFormatError.
std::vector<VoteRecord> parse_votes(const std::string& text);

} // namespace qlforge
