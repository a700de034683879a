#include "qlforge/pairer.hpp"

#include "qlforge/error.hpp"
#include "qlforge/prompt.hpp"
#include "qlforge/util.hpp"

#include <algorithm>
#include <regex>
#include <set>

namespace qlforge {

using nlohmann::json;

VoteIndex index_votes(const std::vector<VoteRecord>& votes) {
    VoteIndex index;
    for (const auto& v : votes) {
        index.emplace(v.api_id, v);
    }
    return index;
}

namespace {

const PromptTemplate& pairing_template() {
    static const PromptTemplate tmpl(R"(# Objective
Match the classified taint sources and sinks of one Java project into
(source, sink) binary tuples that most likely form vulnerability exploitation
chains. Not every source reaches every sink; keep only plausible chains.

# SOURCES
{SOURCES}
# SINKS
{SINKS}
# SANITIZERS
Context only: operations that may interrupt taint propagation.
{SANITIZERS}
# Procedure
1) Candidate enumeration: consider each source against each sink above.
2) Flow plausibility: judge from types, snippets and annotations whether data
   returned by the source can reach the sink's arguments; exclude pairs whose
   flow is implausible or whose vulnerability class makes no sense.
3) Schema emission: write the surviving tuples in the output schema.

# Output schema
One line per tuple and nothing else:
(<source_id>, <sink_id>) [<vulnerability-class>] <one-sentence rationale>
Use ids exactly as given. If no pair is plausible, reply with the single line
NO_PAIRS.
)");
    return tmpl;
}

std::string blocks(const std::vector<ApiRecord>& records) {
    std::string out;
    for (const auto& r : records) {
        out += ClassificationPrompt::record_block(r);
    }
    return out;
}

} // namespace

std::vector<std::string> build_pairing_prompts(const std::vector<ApiRecord>& sources,
                                               const std::vector<ApiRecord>& sinks,
                                               const std::vector<ApiRecord>& sanitizers,
                                               std::size_t budget) {
    if (sources.empty() || sinks.empty()) {
        throw NothingToPair(sources.empty() ? "no sources to pair" : "no sinks to pair");
    }
    auto by_id = [](std::vector<ApiRecord> v) {
        std::sort(v.begin(), v.end(), [](const ApiRecord& a, const ApiRecord& b) { return a.id < b.id; });
        return v;
    };
    const auto sorted_sources = by_id(sources);
    const auto sorted_sinks = by_id(sinks);
    const auto sorted_sanitizers = by_id(sanitizers);

    std::map<std::string, std::string> values{
        {"SOURCES", blocks(sorted_sources)},
        {"SANITIZERS", sorted_sanitizers.empty() ? "(none)\n" : blocks(sorted_sanitizers)},
        {"SINKS", ""},
    };
    const std::size_t fixed = estimate_tokens(pairing_template().render(values));

    std::vector<std::vector<ApiRecord>> chunks;
    std::size_t used = 0;
    for (const auto& sink : sorted_sinks) {
        const auto cost = ClassificationPrompt::block_tokens(sink);
        if (fixed + cost > budget) {
            throw RecordTooLarge("pairing prompt for sink " + sink.id + " exceeds the token budget of " +
                                 std::to_string(budget));
        }
        if (chunks.empty() || fixed + used + cost > budget) {
            chunks.emplace_back();
            used = 0;
        }
        chunks.back().push_back(sink);
        used += cost;
    }

    std::vector<std::string> prompts;
    prompts.reserve(chunks.size());
    for (const auto& chunk : chunks) {
        values["SINKS"] = blocks(chunk);
        prompts.push_back(pairing_template().render(values));
    }
    return prompts;
}

namespace {

bool contains_word(const std::string& text, const std::string& word) {
    auto is_word = [](char c) { return std::isalnum(static_cast<unsigned char>(c)) != 0 || c == '_' || c == '$'; };
    for (auto pos = text.find(word); pos != std::string::npos; pos = text.find(word, pos + 1)) {
        const bool left = pos == 0 || !is_word(text[pos - 1]);
        const auto end = pos + word.size();
        const bool right = end >= text.size() || !is_word(text[end]);
        if (left && right) {
            return true;
        }
    }
    return false;
}

int ballots_for(const VoteRecord& vote, TaintLabel label) {
    return static_cast<int>(std::count_if(vote.ballots.begin(), vote.ballots.end(),
                                          [&](const Ballot& b) { return b.label == label; }));
}

} // namespace

ParsedPairs parse_pairs(const std::string& text, const VoteIndex& votes) {
    static const std::regex tuple_re(
        R"(\(\s*[`'"]?([A-Za-z0-9_.$<>-]+?)[`'"]?\s*,\s*[`'"]?([A-Za-z0-9_.$<>-]+?)[`'"]?\s*\)\s*(?:\[([^\]]*)\])?\s*(.*)$)");
    static const std::regex none_re(R"(^\s*NO_PAIRS\s*$)");

    ParsedPairs result;
    bool explicit_empty = false;
    bool any_tuple = false;
    std::set<std::pair<std::string, std::string>> seen;

    for (const auto& line : split_lines(text)) {
        if (std::regex_match(line, none_re)) {
            explicit_empty = true;
            continue;
        }
        std::smatch m;
        if (!std::regex_search(line, m, tuple_re)) {
            continue;
        }
        any_tuple = true;
        SourceSinkPair pair;
        pair.source_id = m[1].str();
        pair.sink_id = m[2].str();
        pair.vulnerability_class = trim(m[3].str());
        if (pair.vulnerability_class.empty()) {
            pair.vulnerability_class = "unspecified";
        }
        pair.rationale = trim(m[4].str());

        const auto tuple = "(" + pair.source_id + ", " + pair.sink_id + ")";
        const auto src = votes.find(pair.source_id);
        const auto dst = votes.find(pair.sink_id);
        if (src == votes.end() || dst == votes.end()) {
            result.warnings.push_back("pair: dropped " + tuple + ": unknown api id");
            continue;
        }
        if (pair.source_id == pair.sink_id) {
            result.warnings.push_back("pair: dropped " + tuple + ": source and sink are the same api");
            continue;
        }
        if (src->second.resolved != TaintLabel::Source) {
            result.warnings.push_back("pair: dropped " + tuple + ": first element is resolved " +
                                      std::string(to_string(src->second.resolved)) + ", not SOURCE");
            continue;
        }
        if (dst->second.resolved != TaintLabel::Sink) {
            result.warnings.push_back("pair: dropped " + tuple + ": second element is resolved " +
                                      std::string(to_string(dst->second.resolved)) + ", not SINK");
            continue;
        }
        if (!seen.emplace(pair.source_id, pair.sink_id).second) {
            continue;
        }
        pair.confidence = "source " + std::to_string(ballots_for(src->second, TaintLabel::Source)) +
                          "/3 votes, sink " + std::to_string(ballots_for(dst->second, TaintLabel::Sink)) +
                          "/3 votes";
        result.pairs.push_back(std::move(pair));
    }

    if (!any_tuple && !explicit_empty) {
        throw WhollyMalformed("pairing response contains no (source, sink) tuple and no NO_PAIRS marker");
    }
    return result;
}

PairingResult pair_all(const std::vector<VoteRecord>& votes, const RecordIndex& records, Gateway& gateway,
                       const PairOptions& options) {
    PairingResult result;
    std::vector<ApiRecord> sources;
    std::vector<ApiRecord> sinks;
    std::vector<ApiRecord> sanitizers;
    for (const auto& v : votes) {
        const auto it = records.find(v.api_id);
        if (v.resolved == TaintLabel::None) {
            continue;
        }
        if (it == records.end()) {
            result.warnings.push_back("pair: api " + v.api_id + " has a vote but no spec record; skipped");
            continue;
        }
        switch (v.resolved) {
        case TaintLabel::Source:
            sources.push_back(it->second);
            break;
        case TaintLabel::Sink:
            sinks.push_back(it->second);
            break;
        case TaintLabel::Sanitizer:
            sanitizers.push_back(it->second);
            break;
        case TaintLabel::None:
            break;
        }
    }

    std::vector<std::string> prompts;
    try {
        prompts = build_pairing_prompts(sources, sinks, sanitizers, options.budget);
    } catch (const NothingToPair& e) {
        result.warnings.push_back(std::string("pair: ") + e.what());
        return result;
    }

    const auto vote_index = index_votes(votes);
    std::vector<ParsedPairs> parsed(prompts.size());
    std::vector<std::string> failures(prompts.size());
    std::vector<std::exception_ptr> errors(prompts.size());

    parallel_for(prompts.size(), options.workers, [&](std::size_t c) {
        const auto label = "chunk " + std::to_string(c + 1) + "/" + std::to_string(prompts.size());
        try {
            for (int attempt = 0; attempt < 2; ++attempt) {
                const auto response = gateway.complete(gateway.make_request(Stage::Pair, "", prompts[c]));
                try {
                    parsed[c] = parse_pairs(response.text, vote_index);
                    return;
                } catch (const WhollyMalformed& e) {
                    parsed[c].warnings.push_back("pair: " + label + ": " + e.what() +
                                                 (attempt == 0 ? "; retrying" : "; chunk yields no pairs"));
                }
            }
            failures[c] = label + ": malformed response after retry";
        } catch (const Error& e) {
            failures[c] = label + ": " + e.what();
            errors[c] = std::current_exception();
        }
    });

    if (std::all_of(errors.begin(), errors.end(), [](const auto& e) { return e != nullptr; })) {
        std::rethrow_exception(errors.front());
    }

    std::map<std::pair<std::string, std::string>, SourceSinkPair> merged;
    for (std::size_t c = 0; c < prompts.size(); ++c) {
        result.warnings.insert(result.warnings.end(), parsed[c].warnings.begin(), parsed[c].warnings.end());
        if (!failures[c].empty()) {
            result.chunk_failures.push_back(failures[c]);
        }
        for (auto& pair : parsed[c].pairs) {
            merged.try_emplace({pair.source_id, pair.sink_id}, std::move(pair));
        }
    }

    for (auto& [key, pair] : merged) {
        if (options.drop_sanitized) {
            const auto named = std::find_if(sanitizers.begin(), sanitizers.end(), [&](const ApiRecord& s) {
                return pair.rationale.find(s.id) != std::string::npos || contains_word(pair.rationale, s.method);
            });
            if (named != sanitizers.end()) {
                result.warnings.push_back("pair: dropped (" + pair.source_id + ", " + pair.sink_id +
                                          "): rationale names sanitizer " + named->method);
                continue;
            }
        }
        result.pairs.push_back(std::move(pair));
    }
    return result;
}

json to_json(const SourceSinkPair& pair) {
    return {{"source", pair.source_id},
            {"sink", pair.sink_id},
            {"vulnerability_class", pair.vulnerability_class},
            {"rationale", pair.rationale},
            {"confidence", pair.confidence}};
}

SourceSinkPair pair_from_json(const json& doc) {
    return {doc.at("source").get<std::string>(), doc.at("sink").get<std::string>(),
            doc.at("vulnerability_class").get<std::string>(), doc.at("rationale").get<std::string>(),
            doc.at("confidence").get<std::string>()};
}

std::string serialize_pairs(const std::vector<SourceSinkPair>& pairs) {
    auto sorted = pairs;
    std::sort(sorted.begin(), sorted.end(), [](const SourceSinkPair& a, const SourceSinkPair& b) {
        return std::tie(a.source_id, a.sink_id) < std::tie(b.source_id, b.sink_id);
    });
    json list = json::array();
    for (const auto& p : sorted) {
        list.push_back(to_json(p));
    }
    return json{{"version", 1}, {"pairs", list}}.dump(2) + "\n";
}

std::vector<SourceSinkPair> parse_pair_artifact(const std::string& text) {
    try {
        const auto doc = json::parse(text);
        if (doc.at("version").get<int>() != 1) {
            throw SpecFormatError("unsupported pair artifact version");
        }
        std::vector<SourceSinkPair> out;
        for (const auto& p : doc.at("pairs")) {
            out.push_back(pair_from_json(p));
        }
        return out;
    } catch (const json::exception& e) {
        throw SpecFormatError(std::string("malformed pair artifact: ") + e.what());
    }
}

} // namespace qlforge
