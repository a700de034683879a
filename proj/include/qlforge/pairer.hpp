#pragma once

#include "qlforge/classifier.hpp"
#include "qlforge/extractor.hpp"
#include "qlforge/llm.hpp"

#include <map>
#include <string>
#include <vector>

#include <json.hpp>

namespace qlforge {

struct SourceSinkPair {
    std::string source_id;
    std::string sink_id;
    std::string vulnerability_class;
    std::string rationale;
    std::string confidence;

    /// Stable directory-safe key "<source_id>-<sink_id>".
    std::string id() const { return source_id + "-" + sink_id; }

    friend bool operator==(const SourceSinkPair&, const SourceSinkPair&) = default;
};

using VoteIndex = std::map<std::string, VoteRecord>;
VoteIndex index_votes(const std::vector<VoteRecord>& votes);

/// Pairing prompts: every source and sanitizer, plus one chunk of sinks per
/// prompt. Sinks are packed greedily in id order while the rendered prompt
/// estimate stays within `budget`. Throws NothingToPair when there is no
/// source or no sink, RecordTooLarge when the sources alone overflow.
std::vector<std::string> build_pairing_prompts(const std::vector<ApiRecord>& sources,
                                               const std::vector<ApiRecord>& sinks,
                                               const std::vector<ApiRecord>& sanitizers,
                                               std::size_t budget);

struct ParsedPairs {
    std::vector<SourceSinkPair> pairs;
    std::vector<std::string> warnings;
};

/// Accepts `(<source>, <sink>) [class] rationale` lines; a reply of
/// NO_PAIRS is an explicit empty answer. Tuples failing validation against
/// the votes are dropped with a warning. Throws WhollyMalformed.
ParsedPairs parse_pairs(const std::string& text, const VoteIndex& votes);

struct PairOptions {
    std::size_t budget = 6000;
    std::size_t workers = 4;
    bool drop_sanitized = false;
};

struct PairingResult {
    std::vector<SourceSinkPair> pairs; // sorted by (source id, sink id)
    std::vector<std::string> warnings;
    std::vector<std::string> chunk_failures;
};

PairingResult pair_all(const std::vector<VoteRecord>& votes, const RecordIndex& records, Gateway& gateway,
                       const PairOptions& options);

nlohmann::json to_json(const SourceSinkPair& pair);
SourceSinkPair pair_from_json(const nlohmann::json& doc);
std::string serialize_pairs(const std::vector<SourceSinkPair>& pairs);
/// Throws SpecFormatError.
std::vector<SourceSinkPair> parse_pair_artifact(const std::string& text);

} // namespace qlforge
