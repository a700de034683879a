#include "qlforge/classifier.hpp"

#include "qlforge/error.hpp"
#include "qlforge/util.hpp"

#include <algorithm>
#include <cctype>
#include <mutex>
#include <random>
#include <regex>
#include <set>
#include <stdexcept>

namespace qlforge {

using nlohmann::json;

std::string_view to_string(TaintLabel label) {
    switch (label) {
    case TaintLabel::Source:
        return "SOURCE";
    case TaintLabel::Sink:
        return "SINK";
    case TaintLabel::Sanitizer:
        return "SANITIZER";
    case TaintLabel::None:
        return "NONE";
    }
    return "NONE";
}

std::optional<TaintLabel> parse_label(std::string_view text) {
    std::string upper;
    for (char c : text) {
        upper.push_back(static_cast<char>(std::toupper(static_cast<unsigned char>(c))));
    }
    if (upper == "SOURCE") {
        return TaintLabel::Source;
    }
    if (upper == "SINK") {
        return TaintLabel::Sink;
    }
    if (upper == "SANITIZER" || upper == "SANITISER") {
        return TaintLabel::Sanitizer;
    }
    if (upper == "NONE") {
        return TaintLabel::None;
    }
    return std::nullopt;
}

RecordIndex index_records(const std::vector<ApiRecord>& records) {
    RecordIndex index;
    for (const auto& r : records) {
        index.emplace(r.id, r);
    }
    return index;
}

const TaintCatalog& TaintCatalog::defaults() {
    static const TaintCatalog catalog{
        "1",
        {
            "Command execution: runs an operating-system command or spawns a process from its arguments.",
            "SQL execution: sends a query string to a database driver or ORM for execution.",
            "File-path write: creates, writes, moves or extracts a file at a caller-supplied path.",
            "Deserialization: reconstructs objects from a byte stream or text (native, XML or JSON binding).",
            "Reflection load: loads a class, resolves a method or instantiates a type by name.",
            "XML parse: parses XML with external entities or DTD resolution possibly enabled.",
            "URL fetch: opens a connection to a caller-supplied URL or host.",
            "Template render: evaluates a template or expression-language string.",
            "Response write: writes data into an HTTP response body, header or redirect target.",
        },
        {
            "Request parameter: returns a query-string or form parameter of an HTTP request.",
            "Header: returns an HTTP request header value.",
            "Cookie: returns cookies sent by the client.",
            "Multipart upload: returns an uploaded file, its content or its client-supplied file name.",
            "Socket read: reads bytes from a network socket or stream opened to a remote peer.",
            "Environment read: returns an environment variable or externally set system property.",
            "File read of user path: reads a file whose path is derived from external input.",
            "Deserialized input: returns objects produced by deserializing external data.",
        },
        {
            "Allow-list validation: accepts the value only if it matches a fixed set or strict pattern.",
            "Escaping/encoding: escapes or encodes the value for the sink's context (SQL, HTML, shell).",
            "Canonicalization check: normalizes a path or URL and verifies it stays within an allowed root.",
        },
    };
    return catalog;
}

// ---------------------------------------------------------------------------
// Prompt

const char* ClassificationPrompt::default_template() {
    return R"(# Objective
You are a security analyst auditing one Java project. Classify every API in
the API_INFORMATION block as a taint source, sink, sanitizer or none, so that
sources and sinks can later be paired into exploitable taint-tracking chains.

# Definitions
{DEFINITIONS}

# API_INFORMATION
Each line below is one API record in JSON (package, type, method, parameter
list, return type, annotations, code snippet around one call site).
{API_INFORMATION}
# Analysis framework
{STEPS}

# Output schema
{OUTPUT_SCHEMA}
)";
}

namespace {

std::string numbered(const std::vector<std::string>& items) {
    std::string out;
    for (std::size_t i = 0; i < items.size(); ++i) {
        out += "   " + std::string(1, static_cast<char>('a' + i)) + ") " + items[i] + "\n";
    }
    return out;
}

} // namespace

ClassificationPrompt::ClassificationPrompt() : ClassificationPrompt(PromptTemplate(default_template())) {}

ClassificationPrompt::ClassificationPrompt(PromptTemplate tmpl, TaintCatalog catalog)
    : template_(std::move(tmpl)), catalog_(std::move(catalog)) {
    auto values = fixed_values();
    values["API_INFORMATION"] = "";
    frame_tokens_ = estimate_tokens(template_.render(values));
}

std::map<std::string, std::string> ClassificationPrompt::fixed_values() const {
    std::map<std::string, std::string> values;
    values["DEFINITIONS"] =
        "- Source point: where untrusted, attacker-controllable data enters the program; the start "
        "of a data-flow path.\n"
        "- Sink point: an operation where tainted data can trigger a vulnerability; the end of a "
        "data-flow path.\n"
        "- Sanitizer point: an operation that interrupts taint propagation by validating, escaping "
        "or canonicalizing data.\n"
        "- Taint tracking chain: a data-flow path from a source point to a sink point that no "
        "sanitizer point interrupts.\n";
    values["STEPS"] =
        "1) Parse the JSON records and examine each API method: its declaring type, parameters, "
        "return type, annotations and snippet.\n"
        "2) Identify sink points using these " + std::to_string(catalog_.sink_characteristics.size()) +
        " characteristics:\n" + numbered(catalog_.sink_characteristics) +
        "3) Identify source points using these " + std::to_string(catalog_.source_heuristics.size()) +
        " heuristics:\n" + numbered(catalog_.source_heuristics) +
        "4) Identify sanitizer points using these " + std::to_string(catalog_.sanitizer_criteria.size()) +
        " criteria:\n" + numbered(catalog_.sanitizer_criteria) +
        "5) Check taint propagation in three phases: (a) enumerate candidate source-to-sink paths "
        "among the records, (b) judge whether data can plausibly flow along each path, (c) keep "
        "labels consistent with the plausible paths.\n"
        "6) Emit the result strictly in the output schema below.\n";
    values["OUTPUT_SCHEMA"] =
        "Reply with exactly one line per API id from API_INFORMATION and nothing else:\n"
        "<id>: SOURCE | SINK | SANITIZER | NONE\n"
        "Use NONE for every API that is not a source, sink or sanitizer.\n";
    return values;
}

std::string ClassificationPrompt::record_block(const ApiRecord& record) {
    return to_json(record).dump() + "\n";
}

std::string ClassificationPrompt::render(const ContextGroup& group, const RecordIndex& records) const {
    std::string data;
    for (const auto& id : group.members) {
        const auto it = records.find(id);
        if (it == records.end()) {
            throw UnknownApiId("group " + group.id + " references unknown api id " + id);
        }
        data += record_block(it->second);
    }
    auto values = fixed_values();
    values["API_INFORMATION"] = std::move(data);
    auto text = template_.render(values);
    if (group.budget > 0 && estimate_tokens(text) > group.budget) {
        throw TemplateError("rendered prompt for group " + group.id + " exceeds the token budget");
    }
    return text;
}

std::string build_classification_prompt(const ContextGroup& group, const RecordIndex& records,
                                        const ClassificationPrompt& prompt) {
    return prompt.render(group, records);
}

// ---------------------------------------------------------------------------
// Grouping

namespace {

constexpr int kShuffleCandidates = 32;

std::uint64_t mix_seed(std::uint64_t seed, std::uint64_t round, std::uint64_t attempt) {
    // splitmix64 finalizer over the combined inputs
    std::uint64_t z = seed + 0x9e3779b97f4a7c15ULL * (1 + round * 131 + attempt);
    z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
    z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
    return z ^ (z >> 31);
}

std::vector<std::vector<std::size_t>> pack(const std::vector<std::size_t>& order,
                                           std::span<const SizedItem> items, std::size_t frame,
                                           std::size_t budget) {
    std::vector<std::vector<std::size_t>> groups;
    std::size_t used = 0;
    for (const auto idx : order) {
        const auto cost = items[idx].tokens;
        if (groups.empty() || frame + used + cost > budget) {
            groups.emplace_back();
            used = 0;
        }
        groups.back().push_back(idx);
        used += cost;
    }
    return groups;
}

std::string signature(std::vector<std::size_t> members) {
    std::sort(members.begin(), members.end());
    std::string sig;
    for (const auto m : members) {
        sig += std::to_string(m);
        sig.push_back(',');
    }
    return sig;
}

} // namespace

std::vector<ContextGroup> plan_groups(std::span<const SizedItem> items, std::size_t frame_tokens,
                                      std::size_t budget, std::uint64_t seed) {
    std::vector<std::size_t> base(items.size());
    for (std::size_t i = 0; i < items.size(); ++i) {
        base[i] = i;
        if (frame_tokens + items[i].tokens > budget) {
            throw RecordTooLarge("record " + items[i].id + " (" + std::to_string(items[i].tokens) +
                                 " tokens) does not fit the budget of " + std::to_string(budget));
        }
    }
    // input order must not matter
    std::sort(base.begin(), base.end(), [&](std::size_t a, std::size_t b) { return items[a].id < items[b].id; });
    for (std::size_t i = 1; i < base.size(); ++i) {
        if (items[base[i]].id == items[base[i - 1]].id) {
            throw std::invalid_argument("duplicate api id in plan_groups: " + items[base[i]].id);
        }
    }

    std::set<std::string> seen_groups;
    std::vector<ContextGroup> plan;
    for (int round = 0; round < kVotingRounds; ++round) {
        std::vector<std::vector<std::size_t>> best;
        std::size_t best_penalty = std::numeric_limits<std::size_t>::max();
        for (int attempt = 0; attempt < kShuffleCandidates; ++attempt) {
            std::mt19937_64 rng(mix_seed(seed, static_cast<std::uint64_t>(round),
                                         static_cast<std::uint64_t>(attempt)));
            auto order = base;
            portable_shuffle(order, rng);
            auto groups = pack(order, items, frame_tokens, budget);

            std::size_t penalty = 0;
            for (const auto& g : groups) {
                if (seen_groups.count(signature(g)) != 0) {
                    penalty += g.size();
                }
            }
            if (penalty < best_penalty) {
                best_penalty = penalty;
                best = std::move(groups);
            }
            if (penalty == 0) {
                break;
            }
        }

        for (std::size_t g = 0; g < best.size(); ++g) {
            seen_groups.insert(signature(best[g]));
            ContextGroup group;
            group.round = round;
            group.index = g;
            group.id = "r" + std::to_string(round) + "g" + std::to_string(g);
            group.budget = budget;
            group.token_estimate = frame_tokens;
            for (const auto idx : best[g]) {
                group.members.push_back(items[idx].id);
                group.token_estimate += items[idx].tokens;
            }
            plan.push_back(std::move(group));
        }
    }
    return plan;
}

std::vector<ContextGroup> plan_groups(const std::vector<ApiRecord>& records, std::size_t budget,
                                      std::uint64_t seed, const ClassificationPrompt& prompt) {
    std::vector<SizedItem> items;
    items.reserve(records.size());
    for (const auto& r : records) {
        items.push_back({r.id, ClassificationPrompt::block_tokens(r)});
    }
    return plan_groups(items, prompt.frame_tokens(), budget, seed);
}

// ---------------------------------------------------------------------------
// Ballots

std::vector<MemberBallot> parse_classification_response(const std::string& text,
                                                        const ContextGroup& group) {
    static const std::regex line_re(
        R"(^\s*(?:[-*]\s+)?[`'"]?([A-Za-z0-9_.$<>-]+)[`'"]?\s*[:=]\s*[*`'"]*([A-Za-z_-]*))");

    const std::set<std::string> members(group.members.begin(), group.members.end());
    std::map<std::string, MemberBallot> found;
    std::size_t parseable = 0;

    for (const auto& line : split_lines(text)) {
        std::smatch m;
        if (!std::regex_search(line, m, line_re)) {
            continue;
        }
        const auto id = m[1].str();
        const auto label = parse_label(m[2].str());
        const bool member = members.count(id) != 0;
        if (!member && !label) {
            continue;
        }
        ++parseable;
        if (!member) {
            continue;
        }
        MemberBallot ballot{id, label.value_or(TaintLabel::None), !label.has_value(), {}};
        if (!label) {
            ballot.note = "unrecognized label '" + m[2].str() + "'";
        }
        auto [it, inserted] = found.emplace(id, ballot);
        if (!inserted && it->second.label != ballot.label) {
            it->second.parse_warning = true;
            it->second.note = "conflicting labels; first kept";
        }
    }

    if (parseable == 0) {
        throw WhollyMalformed("classification response for group " + group.id +
                              " contains no recognizable id: label line");
    }

    std::vector<MemberBallot> out;
    out.reserve(group.members.size());
    for (const auto& id : group.members) {
        if (auto it = found.find(id); it != found.end()) {
            out.push_back(it->second);
        } else {
            out.push_back({id, TaintLabel::None, true, "missing from response"});
        }
    }
    return out;
}

std::pair<TaintLabel, bool> majority(TaintLabel a, TaintLabel b, TaintLabel c) {
    if (a == b || a == c) {
        return {a, false};
    }
    if (b == c) {
        return {b, false};
    }
    return {TaintLabel::None, true};
}

std::vector<VoteRecord> tally_votes(const std::map<std::string, std::vector<Ballot>>& ballots) {
    std::vector<VoteRecord> out;
    out.reserve(ballots.size());
    for (const auto& [id, list] : ballots) {
        if (list.size() != kVotingRounds) {
            throw BallotCountMismatch("api " + id + " has " + std::to_string(list.size()) +
                                      " ballots, expected 3");
        }
        VoteRecord vote;
        vote.api_id = id;
        std::copy(list.begin(), list.end(), vote.ballots.begin());
        std::tie(vote.resolved, vote.tie) = majority(list[0].label, list[1].label, list[2].label);
        out.push_back(std::move(vote));
    }
    return out;
}

// ---------------------------------------------------------------------------
// Orchestration

ClassificationResult classify_all(const std::vector<ApiRecord>& records, Gateway& gateway,
                                  const ClassifyOptions& options, const ClassificationPrompt& prompt) {
    ClassificationResult result;
    std::map<std::string, std::vector<Ballot>> ballots;

    std::vector<ApiRecord> fitting;
    for (const auto& r : records) {
        if (prompt.frame_tokens() + ClassificationPrompt::block_tokens(r) > options.budget) {
            result.warnings.push_back("classify: api " + r.id + " (" + r.method +
                                      ") is unclassifiable: too large for the token budget");
            auto& list = ballots[r.id];
            for (int round = 0; round < kVotingRounds; ++round) {
                list.push_back({round, "unclassifiable-r" + std::to_string(round), TaintLabel::None, 0, true});
            }
        } else {
            fitting.push_back(r);
        }
    }

    const auto index = index_records(fitting);
    const auto plan = plan_groups(fitting, options.budget, options.seed, prompt);

    std::vector<std::vector<std::pair<std::string, Ballot>>> per_group(plan.size());
    std::vector<std::vector<std::string>> group_warnings(plan.size());

    parallel_for(plan.size(), options.workers, [&](std::size_t g) {
        const auto& group = plan[g];
        const auto text = build_classification_prompt(group, index, prompt);
        std::vector<MemberBallot> parsed;
        std::uint64_t seq = 0;
        for (int attempt = 0; attempt < 2 && parsed.empty(); ++attempt) {
            const auto response = gateway.complete(gateway.make_request(Stage::Classify, "", text));
            seq = response.seq;
            try {
                parsed = parse_classification_response(response.text, group);
            } catch (const WhollyMalformed& e) {
                group_warnings[g].push_back("classify: " + std::string(e.what()) +
                                            (attempt == 0 ? "; retrying" : "; all members voted NONE"));
            }
        }
        if (parsed.empty()) {
            for (const auto& id : group.members) {
                parsed.push_back({id, TaintLabel::None, true, "wholly malformed response"});
            }
        }
        for (const auto& b : parsed) {
            if (b.parse_warning) {
                group_warnings[g].push_back("classify: group " + group.id + " api " + b.api_id + ": " + b.note);
            }
            per_group[g].emplace_back(b.api_id, Ballot{group.round, group.id, b.label, seq, b.parse_warning});
        }
    });

    for (std::size_t g = 0; g < plan.size(); ++g) {
        for (auto& [id, ballot] : per_group[g]) {
            ballots[id].push_back(std::move(ballot));
        }
        result.warnings.insert(result.warnings.end(), group_warnings[g].begin(), group_warnings[g].end());
    }
    for (auto& [id, list] : ballots) {
        std::sort(list.begin(), list.end(), [](const Ballot& a, const Ballot& b) { return a.round < b.round; });
    }
    result.votes = tally_votes(ballots);
    return result;
}

// ---------------------------------------------------------------------------
// Artifact

json to_json(const VoteRecord& vote) {
    json ballots = json::array();
    for (const auto& b : vote.ballots) {
        ballots.push_back({{"round", b.round},
                           {"group", b.group_id},
                           {"label", to_string(b.label)},
                           {"response_seq", b.response_seq},
                           {"warning", b.parse_warning}});
    }
    return {{"api_id", vote.api_id}, {"ballots", ballots}, {"resolved", to_string(vote.resolved)}, {"tie", vote.tie}};
}

VoteRecord vote_record_from_json(const json& doc) {
    auto label = [](const json& v) {
        const auto parsed = parse_label(v.get<std::string>());
        if (!parsed) {
            throw SpecFormatError("unknown taint label " + v.dump());
        }
        return *parsed;
    };
    VoteRecord vote;
    vote.api_id = doc.at("api_id").get<std::string>();
    const auto& ballots = doc.at("ballots");
    if (ballots.size() != kVotingRounds) {
        throw SpecFormatError("vote record " + vote.api_id + " does not carry exactly 3 ballots");
    }
    for (std::size_t i = 0; i < kVotingRounds; ++i) {
        const auto& b = ballots.at(i);
        vote.ballots[i] = Ballot{b.at("round").get<int>(), b.at("group").get<std::string>(), label(b.at("label")),
                                 b.at("response_seq").get<std::uint64_t>(), b.at("warning").get<bool>()};
    }
    vote.resolved = label(doc.at("resolved"));
    vote.tie = doc.at("tie").get<bool>();
    return vote;
}

std::string serialize_votes(const std::vector<VoteRecord>& votes) {
    auto sorted = votes;
    std::sort(sorted.begin(), sorted.end(), [](const VoteRecord& a, const VoteRecord& b) { return a.api_id < b.api_id; });
    json list = json::array();
    for (const auto& v : sorted) {
        list.push_back(to_json(v));
    }
    return json{{"version", 1}, {"votes", list}}.dump(2) + "\n";
}

std::vector<VoteRecord> parse_votes(const std::string& text) {
    try {
        const auto doc = json::parse(text);
        if (doc.at("version").get<int>() != 1) {
            throw SpecFormatError("unsupported vote artifact version");
        }
        std::vector<VoteRecord> out;
        for (const auto& v : doc.at("votes")) {
            out.push_back(vote_record_from_json(v));
        }
        return out;
    } catch (const json::exception& e) {
        throw SpecFormatError(std::string("malformed vote artifact: ") + e.what());
    }
}

} // namespace qlforge
