#include "qlforge/extractor.hpp"

#include "qlforge/error.hpp"
#include "qlforge/process.hpp"
#include "qlforge/util.hpp"

#include <algorithm>
#include <cstdlib>
#include <map>
#include <mutex>
#include <set>
#include <unordered_map>

namespace qlforge {

using nlohmann::json;

std::string make_api_id(const std::string& package, const std::string& type_name,
                        const std::string& method, const std::vector<Param>& params,
                        const std::string& return_type) {
    // Unit separators keep field boundaries unambiguous.
    std::string canonical;
    canonical.append(package).push_back('\x1f');
    canonical.append(type_name).push_back('\x1f');
    canonical.append(method).push_back('\x1f');
    for (const auto& p : params) {
        canonical.append(p.type).push_back('\x1e');
    }
    canonical.push_back('\x1f');
    canonical.append(return_type);
    return sha256_hex(canonical).substr(0, 16);
}

ApiRecord finalize_record(ApiRecord record) {
    record.id = make_api_id(record.package, record.type_name, record.method, record.params,
                            record.return_type);
    if (record.snippet.size() > kSnippetMaxChars) {
        auto cut = kSnippetMaxChars;
        // never split a UTF-8 sequence
        while (cut > 0 && (static_cast<unsigned char>(record.snippet[cut]) & 0xc0) == 0x80) {
            --cut;
        }
        record.snippet.resize(cut);
    }
    return record;
}

std::string snippet_around(const std::vector<std::string>& lines, int line) {
    if (lines.empty() || line < 1) {
        return {};
    }
    const auto total = static_cast<long>(lines.size());
    const long center = std::min<long>(line, total) - 1;
    const long half = static_cast<long>(kSnippetMaxLines) / 2;
    long first = std::max<long>(0, center - half + 1);
    long last = std::min<long>(total - 1, first + static_cast<long>(kSnippetMaxLines) - 1);
    first = std::max<long>(0, std::min(first, last - static_cast<long>(kSnippetMaxLines) + 1));

    std::string out;
    for (long i = first; i <= last; ++i) {
        out += lines[static_cast<std::size_t>(i)];
        out += '\n';
    }
    if (out.size() > kSnippetMaxChars) {
        // keep the window centered on the call line
        const std::size_t call_offset = [&] {
            std::size_t offset = 0;
            for (long i = first; i < center; ++i) {
                offset += lines[static_cast<std::size_t>(i)].size() + 1;
            }
            return offset;
        }();
        std::size_t start = call_offset > kSnippetMaxChars / 2 ? call_offset - kSnippetMaxChars / 2 : 0;
        start = std::min(start, out.size() - kSnippetMaxChars);
        while (start > 0 && (static_cast<unsigned char>(out[start]) & 0xc0) == 0x80) {
            --start;
        }
        out = out.substr(start, kSnippetMaxChars);
    }
    return out;
}

// ---------------------------------------------------------------------------
// Fixture backend

namespace {

const std::set<std::string>& java_lang_types() {
    static const std::set<std::string> types = {
        "String", "StringBuilder", "StringBuffer", "Integer", "Long", "Double", "Float",
        "Boolean", "Character", "Byte", "Short", "Math", "System", "Runtime", "Process",
        "ProcessBuilder", "Object", "Thread", "Class", "ClassLoader", "Exception",
        "RuntimeException", "Iterable", "Number"};
    return types;
}

const std::set<std::string>& primitive_types() {
    static const std::set<std::string> types = {"int",    "long", "boolean", "byte", "char",
                                                "double", "float", "short",  "void"};
    return types;
}

const std::set<std::string>& non_call_keywords() {
    static const std::set<std::string> words = {
        "if",     "for",    "while",  "switch", "catch",        "synchronized", "return",
        "throw",  "new",    "super",  "this",   "assert",       "try",          "else",
        "do",     "case",   "class",  "record", "interface",    "enum"};
    return words;
}

/// Blanks comment bodies and literal contents (quotes kept) so that regexes
/// over the result never match inside them. Length and newlines preserved.
std::string mask_source_impl(const std::string& text) {
    std::string out = text;
    enum class State { Code, LineComment, BlockComment, String, Char } state = State::Code;
    for (std::size_t i = 0; i < text.size(); ++i) {
        const char c = text[i];
        const char next = i + 1 < text.size() ? text[i + 1] : '\0';
        switch (state) {
        case State::Code:
            if (c == '/' && next == '/') {
                state = State::LineComment;
                out[i] = ' ';
            } else if (c == '/' && next == '*') {
                state = State::BlockComment;
                out[i] = ' ';
            } else if (c == '"') {
                state = State::String;
            } else if (c == '\'') {
                state = State::Char;
            }
            break;
        case State::LineComment:
            if (c == '\n') {
                state = State::Code;
            } else {
                out[i] = ' ';
            }
            break;
        case State::BlockComment:
            if (c == '*' && next == '/') {
                out[i] = ' ';
                out[i + 1] = ' ';
                ++i;
                state = State::Code;
            } else if (c != '\n') {
                out[i] = ' ';
            }
            break;
        case State::String:
        case State::Char: {
            const char quote = state == State::String ? '"' : '\'';
            if (c == '\\' && next != '\0') {
                out[i] = ' ';
                if (next != '\n') {
                    out[i + 1] = ' ';
                }
                ++i;
            } else if (c == quote || c == '\n') {
                state = State::Code;
            } else {
                out[i] = ' ';
            }
            break;
        }
        }
    }
    return out;
}

std::string strip_generics(std::string type) {
    std::string out;
    int depth = 0;
    for (char c : type) {
        if (c == '<') {
            ++depth;
        } else if (c == '>') {
            --depth;
        } else if (depth == 0 && c != ' ' && c != '\t' && c != '\n') {
            out.push_back(c);
        }
    }
    return out;
}

std::size_t matching_paren(const std::string& masked, std::size_t open) {
    int depth = 0;
    for (std::size_t i = open; i < masked.size(); ++i) {
        if (masked[i] == '(') {
            ++depth;
        } else if (masked[i] == ')') {
            if (--depth == 0) {
                return i;
            }
        }
    }
    return std::string::npos;
}

std::size_t matching_brace(const std::string& masked, std::size_t open) {
    int depth = 0;
    for (std::size_t i = open; i < masked.size(); ++i) {
        if (masked[i] == '{') {
            ++depth;
        } else if (masked[i] == '}') {
            if (--depth == 0) {
                return i;
            }
        }
    }
    return masked.size();
}

struct Declaration {
    std::string name;
    std::string type;
    std::size_t offset;
};

struct MethodSpan {
    std::size_t name_offset;
    std::size_t body_begin;
    std::size_t body_end;
    std::vector<std::string> annotations;
};

struct ClassSpan {
    std::string name;
    std::size_t offset;
};

class SourceScanner {
public:
    SourceScanner(const std::string& text, std::string relative_path)
        : text_(text), masked_(mask_source_impl(text)), path_(std::move(relative_path)),
          lines_(split_lines(text)) {
        index_lines();
        scan_package_and_imports();
        scan_classes();
        scan_declarations();
        scan_methods();
    }

    std::vector<ApiRecord> calls() const {
        static const std::regex call_re(
            R"(\bnew\s+([A-Za-z_][\w.]*)\s*(?:<[^<>()]*>)?\s*\(|\b([A-Za-z_]\w*)\s*\.\s*([A-Za-z_]\w*)\s*\(|\)\s*\.\s*([A-Za-z_]\w*)\s*\(|\b([A-Za-z_]\w*)\s*\()");

        std::vector<ApiRecord> out;
        for (auto it = std::sregex_iterator(masked_.begin(), masked_.end(), call_re);
             it != std::sregex_iterator(); ++it) {
            const auto& m = *it;
            const auto match_begin = static_cast<std::size_t>(m.position(0));
            const auto open = match_begin + static_cast<std::size_t>(m.length(0)) - 1;

            ApiRecord record;
            std::size_t call_start = match_begin;
            if (m[1].matched) {
                const std::string qualified = m[1].str();
                const auto dot = qualified.rfind('.');
                record.type_name = dot == std::string::npos ? qualified : qualified.substr(dot + 1);
                record.package = dot == std::string::npos ? package_of(record.type_name)
                                                          : qualified.substr(0, dot);
                record.method = "<init>";
            } else if (m[2].matched) {
                const std::string receiver = m[2].str();
                if (non_call_keywords().count(receiver) != 0 && receiver != "this" &&
                    receiver != "super") {
                    continue;
                }
                // skip package segments of fully qualified static calls
                call_start = qualified_start(match_begin);
                record.method = m[3].str();
                record.type_name = receiver_type(receiver, match_begin, call_start);
                record.package = package_of(record.type_name);
            } else if (m[4].matched) {
                record.method = m[4].str();
                record.type_name = "unknown";
                record.package = "unknown";
                call_start = match_begin + 1;
            } else {
                const std::string name = m[5].str();
                if (non_call_keywords().count(name) != 0 || primitive_types().count(name) != 0) {
                    continue;
                }
                if (match_begin > 0 && masked_[match_begin - 1] == '@') {
                    continue;
                }
                if (method_names_.count(match_begin) != 0) {
                    continue;
                }
                record.method = name;
                record.type_name = enclosing_class(match_begin);
                record.package = package_of(record.type_name);
            }

            const auto close = matching_paren(masked_, open);
            if (close == std::string::npos) {
                continue;
            }
            record.params = argument_params(open, close);
            record.return_type = assigned_type(call_start);
            const int line = line_of(match_begin);
            record.first_seen = {path_, line};
            record.snippet = snippet_around(lines_, line);
            if (const auto* method = enclosing_method(match_begin)) {
                record.annotations = method->annotations;
            }
            out.push_back(finalize_record(std::move(record)));
        }
        return out;
    }

private:
    void index_lines() {
        line_starts_.push_back(0);
        for (std::size_t i = 0; i < text_.size(); ++i) {
            if (text_[i] == '\n') {
                line_starts_.push_back(i + 1);
            }
        }
    }

    int line_of(std::size_t offset) const {
        const auto it = std::upper_bound(line_starts_.begin(), line_starts_.end(), offset);
        return static_cast<int>(it - line_starts_.begin());
    }

    void scan_package_and_imports() {
        static const std::regex package_re(R"(\bpackage\s+([\w.]+)\s*;)");
        static const std::regex import_re(R"(\bimport\s+(?:static\s+)?([\w.]+)\.(\w+|\*)\s*;)");
        std::smatch m;
        if (std::regex_search(masked_, m, package_re)) {
            package_ = m[1].str();
        }
        for (auto it = std::sregex_iterator(masked_.begin(), masked_.end(), import_re);
             it != std::sregex_iterator(); ++it) {
            if ((*it)[2].str() != "*") {
                imports_[(*it)[2].str()] = (*it)[1].str();
            }
        }
    }

    void scan_classes() {
        static const std::regex class_re(R"(\b(?:class|interface|enum|record)\s+([A-Z]\w*))");
        for (auto it = std::sregex_iterator(masked_.begin(), masked_.end(), class_re);
             it != std::sregex_iterator(); ++it) {
            classes_.push_back({(*it)[1].str(), static_cast<std::size_t>(it->position(0))});
            local_types_.insert((*it)[1].str());
        }
    }

    void scan_declarations() {
        static const std::regex decl_re(
            R"(\b([A-Z][\w.]*(?:\s*<[^;(){}=]*?>)?(?:\[\])*|int|long|boolean|byte|char|double|float|short|var)\s+([a-zA-Z_]\w*)\s*(?=[=;,):]))");
        for (auto it = std::sregex_iterator(masked_.begin(), masked_.end(), decl_re);
             it != std::sregex_iterator(); ++it) {
            auto type = strip_generics((*it)[1].str());
            const auto dot = type.rfind('.');
            if (dot != std::string::npos) {
                type = type.substr(dot + 1);
            }
            declarations_.push_back({(*it)[2].str(), type, static_cast<std::size_t>(it->position(0))});
        }
    }

    void scan_methods() {
        static const std::regex method_re(
            R"(((?:@\w+(?:\s*\([^)]*\))?\s+)*)(?:(?:public|protected|private|static|final|synchronized|abstract|native|default)\s+)*(?:<[^>]*>\s+)?[\w.]+(?:\s*<[^;(){}]*?>)?(?:\[\])*\s+(\w+)\s*\([^;{}]*?\)\s*(?:throws\s+[\w.,\s]+)?\{)");
        static const std::regex annotation_re(R"(@(\w+))");
        for (auto it = std::sregex_iterator(masked_.begin(), masked_.end(), method_re);
             it != std::sregex_iterator(); ++it) {
            const auto& m = *it;
            const std::string name = m[2].str();
            if (non_call_keywords().count(name) != 0) {
                continue;
            }
            MethodSpan span;
            span.name_offset = static_cast<std::size_t>(m.position(2));
            span.body_begin = static_cast<std::size_t>(m.position(0) + m.length(0) - 1);
            span.body_end = matching_brace(masked_, span.body_begin);
            const std::string annotations = m[1].str();
            for (auto a = std::sregex_iterator(annotations.begin(), annotations.end(), annotation_re);
                 a != std::sregex_iterator(); ++a) {
                span.annotations.push_back((*a)[1].str());
            }
            method_names_.insert(span.name_offset);
            methods_.push_back(std::move(span));
        }
    }

    const MethodSpan* enclosing_method(std::size_t offset) const {
        const MethodSpan* best = nullptr;
        for (const auto& m : methods_) {
            if (m.body_begin < offset && offset < m.body_end &&
                (best == nullptr || m.body_begin > best->body_begin)) {
                best = &m;
            }
        }
        return best;
    }

    std::string enclosing_class(std::size_t offset) const {
        std::string name = "unknown";
        for (const auto& c : classes_) {
            if (c.offset < offset) {
                name = c.name;
            }
        }
        return name;
    }

    std::size_t qualified_start(std::size_t begin) const {
        std::size_t start = begin;
        while (start >= 2 && masked_[start - 1] == '.') {
            std::size_t j = start - 1;
            while (j > 0 && (std::isalnum(static_cast<unsigned char>(masked_[j - 1])) != 0 ||
                             masked_[j - 1] == '_')) {
                --j;
            }
            if (j == start - 1) {
                break;
            }
            start = j;
        }
        return start;
    }

    const Declaration* declaration_of(const std::string& name, std::size_t offset) const {
        const Declaration* before = nullptr;
        const Declaration* any = nullptr;
        for (const auto& d : declarations_) {
            if (d.name != name) {
                continue;
            }
            if (d.offset < offset && (before == nullptr || d.offset > before->offset)) {
                before = &d;
            }
            if (any == nullptr) {
                any = &d;
            }
        }
        return before != nullptr ? before : any;
    }

    std::string receiver_type(const std::string& receiver, std::size_t offset,
                              std::size_t qualified_begin) const {
        if (receiver == "this" || receiver == "super") {
            return enclosing_class(offset);
        }
        if (qualified_begin == offset) {
            if (const auto* decl = declaration_of(receiver, offset)) {
                return decl->type;
            }
        }
        if (std::isupper(static_cast<unsigned char>(receiver[0])) != 0) {
            return receiver;
        }
        return "unknown";
    }

    std::string package_of(const std::string& type) const {
        if (type == "unknown") {
            return "unknown";
        }
        if (primitive_types().count(type) != 0) {
            return "";
        }
        if (const auto it = imports_.find(type); it != imports_.end()) {
            return it->second;
        }
        if (java_lang_types().count(type) != 0 && local_types_.count(type) == 0) {
            return "java.lang";
        }
        return package_;
    }

    std::string literal_type(const std::string& arg) const {
        static const std::regex int_re(R"(-?\d+)");
        static const std::regex long_re(R"(-?\d+[lL])");
        static const std::regex double_re(R"(-?\d*\.\d+[dDfF]?)");
        static const std::regex ident_re(R"([A-Za-z_]\w*)");
        static const std::regex new_re(R"(new\s+([A-Za-z_][\w.]*))");
        if (arg.empty()) {
            return "unknown";
        }
        if (arg.front() == '"') {
            return "String";
        }
        if (arg.front() == '\'') {
            return "char";
        }
        if (arg == "true" || arg == "false") {
            return "boolean";
        }
        if (std::regex_match(arg, int_re)) {
            return "int";
        }
        if (std::regex_match(arg, long_re)) {
            return "long";
        }
        if (std::regex_match(arg, double_re)) {
            return "double";
        }
        std::smatch m;
        if (std::regex_search(arg, m, new_re) && m.position(0) == 0) {
            const auto qualified = m[1].str();
            const auto dot = qualified.rfind('.');
            return dot == std::string::npos ? qualified : qualified.substr(dot + 1);
        }
        return "";
    }

    std::vector<Param> argument_params(std::size_t open, std::size_t close) const {
        std::vector<std::pair<std::size_t, std::size_t>> spans;
        int depth = 0;
        std::size_t start = open + 1;
        for (std::size_t i = open + 1; i < close; ++i) {
            const char c = masked_[i];
            if (c == '(' || c == '[' || c == '{') {
                ++depth;
            } else if (c == ')' || c == ']' || c == '}') {
                --depth;
            } else if (c == ',' && depth == 0) {
                spans.emplace_back(start, i);
                start = i + 1;
            }
        }
        spans.emplace_back(start, close);

        std::vector<Param> params;
        for (const auto& [b, e] : spans) {
            const std::string masked_arg = trim(std::string_view(masked_).substr(b, e - b));
            if (masked_arg.empty()) {
                continue;
            }
            const std::string arg = trim(std::string_view(text_).substr(b, e - b));
            std::string type = literal_type(arg);
            if (type.empty()) {
                static const std::regex ident_re(R"([A-Za-z_]\w*)");
                if (std::regex_match(masked_arg, ident_re)) {
                    const auto* decl = declaration_of(masked_arg, b);
                    type = decl != nullptr ? decl->type : "unknown";
                } else if (masked_arg.find('"') != std::string::npos &&
                           masked_arg.find('+') != std::string::npos) {
                    type = "String";
                } else {
                    type = "unknown";
                }
            }
            params.push_back({"arg" + std::to_string(params.size()), type});
        }
        return params;
    }

    std::string assigned_type(std::size_t call_start) const {
        std::size_t stmt = call_start;
        while (stmt > 0) {
            const char c = masked_[stmt - 1];
            if (c == ';' || c == '{' || c == '}') {
                break;
            }
            --stmt;
        }
        const std::string prefix = masked_.substr(stmt, call_start - stmt);
        static const std::regex decl_re(
            R"(^\s*(?:final\s+)?([A-Za-z_][\w.]*(?:\s*<[^=]*>)?(?:\[\])*)\s+[A-Za-z_]\w*\s*=\s*$)");
        std::smatch m;
        if (std::regex_match(prefix, m, decl_re)) {
            auto type = strip_generics(m[1].str());
            const auto dot = type.rfind('.');
            return dot == std::string::npos ? type : type.substr(dot + 1);
        }
        return "unknown";
    }

    const std::string& text_;
    std::string masked_;
    std::string path_;
    std::vector<std::string> lines_;
    std::vector<std::size_t> line_starts_;
    std::string package_;
    std::map<std::string, std::string> imports_;
    std::vector<ClassSpan> classes_;
    std::set<std::string> local_types_;
    std::vector<Declaration> declarations_;
    std::vector<MethodSpan> methods_;
    std::set<std::size_t> method_names_;
};

bool record_less(const ApiRecord& a, const ApiRecord& b) {
    if (a.id != b.id) {
        return a.id < b.id;
    }
    return a.first_seen < b.first_seen;
}

std::vector<std::string> split_list(const std::string& text, char sep) {
    std::vector<std::string> out;
    if (text.empty()) {
        return out;
    }
    std::size_t start = 0;
    while (true) {
        const auto pos = text.find(sep, start);
        out.push_back(text.substr(start, pos == std::string::npos ? std::string::npos : pos - start));
        if (pos == std::string::npos) {
            break;
        }
        start = pos + 1;
    }
    return out;
}

std::vector<std::vector<std::string>> parse_csv(const std::string& text) {
    std::vector<std::vector<std::string>> rows;
    std::vector<std::string> row;
    std::string field;
    bool quoted = false;
    bool any = false;
    for (std::size_t i = 0; i < text.size(); ++i) {
        const char c = text[i];
        if (quoted) {
            if (c == '"') {
                if (i + 1 < text.size() && text[i + 1] == '"') {
                    field.push_back('"');
                    ++i;
                } else {
                    quoted = false;
                }
            } else {
                field.push_back(c);
            }
            continue;
        }
        if (c == '"') {
            quoted = true;
            any = true;
        } else if (c == ',') {
            row.push_back(std::move(field));
            field.clear();
            any = true;
        } else if (c == '\n') {
            if (any || !field.empty()) {
                row.push_back(std::move(field));
                rows.push_back(std::move(row));
            }
            row.clear();
            field.clear();
            any = false;
        } else if (c != '\r') {
            field.push_back(c);
            any = true;
        }
    }
    if (any || !field.empty()) {
        row.push_back(std::move(field));
        rows.push_back(std::move(row));
    }
    return rows;
}

} // namespace

std::string mask_java_source(const std::string& text) { return mask_source_impl(text); }

std::vector<ApiRecord> FixtureBackend::scan_source(const std::string& text,
                                                   const std::string& relative_path) {
    return SourceScanner(text, relative_path).calls();
}

std::vector<ApiRecord> FixtureBackend::enumerate(const std::filesystem::path& project_root) {
    std::error_code ec;
    if (!std::filesystem::is_directory(project_root, ec)) {
        throw BackendUnavailable("project root is not a readable directory: " + project_root.string());
    }
    std::vector<std::filesystem::path> files;
    for (auto it = std::filesystem::recursive_directory_iterator(project_root, ec);
         it != std::filesystem::recursive_directory_iterator(); it.increment(ec)) {
        if (ec) {
            break;
        }
        if (it->is_regular_file() && it->path().extension() == ".java") {
            files.push_back(it->path());
        }
    }
    std::sort(files.begin(), files.end());

    std::vector<std::vector<ApiRecord>> per_file(files.size());
    parallel_for(files.size(), workers_, [&](std::size_t i) {
        const auto relative = std::filesystem::relative(files[i], project_root).generic_string();
        per_file[i] = scan_source(read_file(files[i]), relative);
    });

    std::vector<ApiRecord> out;
    for (auto& records : per_file) {
        out.insert(out.end(), std::make_move_iterator(records.begin()),
                   std::make_move_iterator(records.end()));
    }
    return out;
}

// ---------------------------------------------------------------------------
// CodeQL backend

std::filesystem::path resolve_codeql(const std::string& configured) {
    std::string candidate = configured;
    if (candidate.empty()) {
        if (const char* env = std::getenv("QLFORGE_CODEQL"); env != nullptr && *env != '\0') {
            candidate = env;
        }
    }
    if (candidate.empty()) {
        candidate = "codeql";
    }
    if (auto found = find_executable(candidate)) {
        return *found;
    }
    throw BackendUnavailable("codeql executable not found (" + candidate +
                             "); set extract.codeql or QLFORGE_CODEQL");
}

CodeqlBackend::CodeqlBackend(std::string executable, std::filesystem::path work_dir)
    : executable_(std::move(executable)), work_dir_(std::move(work_dir)) {}

std::filesystem::path CodeqlBackend::resolve() const { return resolve_codeql(executable_); }

BackendInfo CodeqlBackend::info() const {
    try {
        const auto result = run_process({resolve().string(), "version", "--format=terse"});
        return {"codeql", trim(result.out)};
    } catch (const Error&) {
        return {"codeql", "unavailable"};
    }
}

const char* CodeqlBackend::enumeration_query() {
    return R"ql(/**
 * @name API enumeration
 * @kind table
 * @id qlforge/enumerate-apis
 */

import java

string paramList(Callable c) {
  result =
    concat(int i, Parameter p |
      p = c.getParameter(i)
    |
      p.getName() + ":" + p.getType().getName(), ";" order by i
    )
}

string annotationList(Callable c) {
  result = concat(Annotation a | a = c.getAnAnnotation() | a.getType().getName(), ";")
}

from Call call, Callable callee
where
  callee = call.getCallee() and
  exists(call.getFile().getRelativePath())
select callee.getDeclaringType().getPackage().getName(), callee.getDeclaringType().getName(),
  callee.getName(), paramList(callee), callee.getReturnType().getName(), annotationList(callee),
  call.getFile().getRelativePath(), call.getLocation().getStartLine()
)ql";
}

std::vector<ApiRecord> CodeqlBackend::decode_csv(const std::string& csv,
                                                 const std::filesystem::path& project_root) {
    auto rows = parse_csv(csv);
    std::vector<ApiRecord> out;
    std::map<std::string, std::vector<std::string>> file_cache;
    for (std::size_t r = 0; r < rows.size(); ++r) {
        const auto& row = rows[r];
        if (row.size() < 8) {
            continue;
        }
        if (r == 0 && std::none_of(row[7].begin(), row[7].end(),
                                   [](char c) { return std::isdigit(static_cast<unsigned char>(c)); })) {
            continue; // header
        }
        ApiRecord record;
        record.package = row[0];
        record.type_name = row[1];
        record.method = row[2];
        for (const auto& entry : split_list(row[3], ';')) {
            const auto colon = entry.find(':');
            record.params.push_back({entry.substr(0, colon),
                                     colon == std::string::npos ? "unknown" : entry.substr(colon + 1)});
        }
        record.return_type = row[4];
        record.annotations = split_list(row[5], ';');
        std::sort(record.annotations.begin(), record.annotations.end());
        record.first_seen.file = row[6];
        try {
            record.first_seen.line = std::stoi(row[7]);
        } catch (const std::exception&) {
            continue;
        }
        if (record.method.empty()) {
            continue;
        }
        auto [it, inserted] = file_cache.try_emplace(record.first_seen.file);
        if (inserted) {
            try {
                it->second = split_lines(read_file(project_root / record.first_seen.file));
            } catch (const Error&) {
            }
        }
        record.snippet = snippet_around(it->second, record.first_seen.line);
        out.push_back(finalize_record(std::move(record)));
    }
    return out;
}

std::vector<ApiRecord> CodeqlBackend::enumerate(const std::filesystem::path& project_root) {
    const auto codeql = resolve().string();
    auto work = work_dir_.empty() ? std::filesystem::temp_directory_path() / "qlforge-extract"
                                  : work_dir_;
    std::error_code ec;
    std::filesystem::create_directories(work, ec);
    const auto database = work / "db";
    const auto pack = work / "enumerate";
    const auto bqrs = work / "apis.bqrs";
    const auto csv = work / "apis.csv";
    write_file_atomic(pack / "qlpack.yml",
                      "name: qlforge/enumerate\nversion: 0.0.1\ndependencies:\n  codeql/java-all: \"*\"\n");
    write_file_atomic(pack / "enumerate.ql", enumeration_query());

    auto checked = [](const std::vector<std::string>& argv, const std::string& step) {
        const auto result = run_process(argv);
        if (result.exit_code != 0) {
            auto tail = result.err.size() > 2000 ? result.err.substr(result.err.size() - 2000) : result.err;
            throw BackendUnavailable("codeql " + step + " failed (exit " +
                                     std::to_string(result.exit_code) + "): " + tail);
        }
    };
    checked({codeql, "database", "create", database.string(), "--language=java", "--build-mode=none",
             "--overwrite", "--source-root", project_root.string()},
            "database create");
    checked({codeql, "pack", "install", pack.string()}, "pack install");
    checked({codeql, "query", "run", "--database", database.string(), "--output", bqrs.string(),
             (pack / "enumerate.ql").string()},
            "query run");
    checked({codeql, "bqrs", "decode", "--format=csv", "--output", csv.string(), bqrs.string()},
            "bqrs decode");
    return decode_csv(read_file(csv), project_root);
}

// ---------------------------------------------------------------------------
// Pipeline operations

ExtractResult extract_apis(const std::filesystem::path& project_root, AnalyzerBackend& backend) {
    std::error_code ec;
    if (!std::filesystem::is_directory(project_root, ec)) {
        throw BackendUnavailable("project root does not exist or is unreadable: " + project_root.string());
    }
    ExtractResult result;
    result.records = backend.enumerate(project_root);
    if (result.records.empty()) {
        result.warnings.push_back("extract: no API invocations found under " + project_root.string());
    }
    std::sort(result.records.begin(), result.records.end(), record_less);
    return result;
}

FilterConfig::FilterConfig(std::vector<std::string> deny, std::vector<std::string> allow)
    : deny_source_(std::move(deny)), allow_source_(std::move(allow)) {
    auto compile = [](const std::vector<std::string>& patterns, std::vector<std::regex>& out) {
        for (const auto& p : patterns) {
            if (p.empty()) {
                throw InvalidFilterConfig("empty filter pattern");
            }
            try {
                out.emplace_back(p, std::regex::ECMAScript);
            } catch (const std::regex_error& e) {
                throw InvalidFilterConfig("malformed filter pattern '" + p + "': " + e.what());
            }
        }
    };
    compile(deny_source_, deny_);
    compile(allow_source_, allow_);
}

FilterConfig FilterConfig::defaults() {
    return FilterConfig(
        {
            "^(get|is|has)[A-Z]\\w*$",
            "^set[A-Z]\\w*$",
            "^(toString|hashCode|equals|compareTo|clone|getClass)$",
            "^(trace|debug|info|warn|warning|error|fatal|log|println|print|printf)$",
            "^(size|isEmpty|contains|containsKey|containsValue|add|addAll|put|putAll|remove|clear|"
            "iterator|next|hasNext|stream|forEach|length|charAt|append)$",
        },
        {
            "^(getParameter|getParameterValues|getParameterMap|getHeader|getHeaders|getCookies|"
            "getQueryString|getInputStream|getReader|getOriginalFilename|getPart|getParts|"
            "getRequestURI|getPathInfo|getenv|getProperty|getResourceAsStream|getConnection|"
            "getObject|getNextEntry)$",
        });
}

FilterConfig FilterConfig::from_json(const json& doc) {
    try {
        auto strings = [&](const char* key) {
            std::vector<std::string> out;
            if (doc.contains(key)) {
                for (const auto& v : doc.at(key)) {
                    out.push_back(v.get<std::string>());
                }
            }
            return out;
        };
        return FilterConfig(strings("deny"), strings("allow"));
    } catch (const json::exception& e) {
        throw InvalidFilterConfig(std::string("filter config: ") + e.what());
    }
}

namespace {

bool any_match(const std::vector<std::regex>& patterns, const std::vector<std::string>& sources,
               const ApiRecord& record) {
    const std::string qualified = record.type_name + "." + record.method;
    for (std::size_t i = 0; i < patterns.size(); ++i) {
        const bool dotted = sources[i].find('.') != std::string::npos &&
                            sources[i].find("\\.") != std::string::npos;
        if (std::regex_search(dotted ? qualified : record.method, patterns[i])) {
            return true;
        }
    }
    return false;
}

} // namespace

bool FilterConfig::denies(const ApiRecord& record) const {
    return any_match(deny_, deny_source_, record);
}

bool FilterConfig::allows(const ApiRecord& record) const {
    return any_match(allow_, allow_source_, record);
}

std::vector<ApiRecord> filter_risky(const std::vector<ApiRecord>& records, const FilterConfig& rules) {
    std::vector<ApiRecord> out;
    std::copy_if(records.begin(), records.end(), std::back_inserter(out),
                 [&](const ApiRecord& r) { return rules.retains(r); });
    return out;
}

std::vector<ApiRecord> dedupe(const std::vector<ApiRecord>& records) {
    std::map<std::string, const ApiRecord*> earliest;
    for (const auto& record : records) {
        auto [it, inserted] = earliest.try_emplace(record.id, &record);
        if (!inserted && record.first_seen < it->second->first_seen) {
            it->second = &record;
        }
    }
    std::vector<ApiRecord> out;
    out.reserve(earliest.size());
    for (const auto& [id, record] : earliest) {
        out.push_back(*record);
    }
    return out;
}

json to_json(const ApiRecord& record) {
    json params = json::array();
    for (const auto& p : record.params) {
        params.push_back({{"name", p.name}, {"type", p.type}});
    }
    return {
        {"id", record.id},
        {"package", record.package},
        {"type_name", record.type_name},
        {"method", record.method},
        {"params", params},
        {"return_type", record.return_type},
        {"annotations", record.annotations},
        {"snippet", record.snippet},
        {"first_seen", {{"file", record.first_seen.file}, {"line", record.first_seen.line}}},
    };
}

ApiRecord api_record_from_json(const json& doc) {
    ApiRecord record;
    record.id = doc.at("id").get<std::string>();
    record.package = doc.at("package").get<std::string>();
    record.type_name = doc.at("type_name").get<std::string>();
    record.method = doc.at("method").get<std::string>();
    for (const auto& p : doc.at("params")) {
        record.params.push_back({p.at("name").get<std::string>(), p.at("type").get<std::string>()});
    }
    record.return_type = doc.at("return_type").get<std::string>();
    record.annotations = doc.at("annotations").get<std::vector<std::string>>();
    record.snippet = doc.at("snippet").get<std::string>();
    record.first_seen.file = doc.at("first_seen").at("file").get<std::string>();
    record.first_seen.line = doc.at("first_seen").at("line").get<int>();
    if (record.method.empty()) {
        throw SpecFormatError("api record " + record.id + " has an empty method name");
    }
    return record;
}

namespace {

bool record_is_encodable(const ApiRecord& r) {
    auto ok = [](const std::string& s) { return is_valid_utf8(s); };
    if (!ok(r.id) || !ok(r.package) || !ok(r.type_name) || !ok(r.method) || !ok(r.return_type) ||
        !ok(r.snippet) || !ok(r.first_seen.file)) {
        return false;
    }
    for (const auto& p : r.params) {
        if (!ok(p.name) || !ok(p.type)) {
            return false;
        }
    }
    return std::all_of(r.annotations.begin(), r.annotations.end(), ok);
}

} // namespace

SpecDocument to_spec_document(const std::vector<ApiRecord>& records) {
    SpecDocument doc;
    json apis = json::array();
    for (const auto& record : records) {
        if (!record_is_encodable(record)) {
            doc.warnings.push_back("extract: dropped record " + record.id + " (" + record.method +
                                   "): text is not valid UTF-8");
            continue;
        }
        apis.push_back(to_json(record));
    }
    doc.text = json{{"version", 1}, {"apis", std::move(apis)}}.dump(2) + "\n";
    return doc;
}

std::vector<ApiRecord> parse_spec_document(const std::string& text) {
    try {
        const auto doc = json::parse(text);
        if (doc.at("version").get<int>() != 1) {
            throw SpecFormatError("unsupported spec document version");
        }
        std::vector<ApiRecord> out;
        for (const auto& api : doc.at("apis")) {
            out.push_back(api_record_from_json(api));
        }
        return out;
    } catch (const json::exception& e) {
        throw SpecFormatError(std::string("malformed spec document: ") + e.what());
    }
}

} // namespace qlforge
