#include "qlforge/prompt.hpp"

#include "qlforge/error.hpp"

#include <algorithm>
#include <regex>

namespace qlforge {

PromptTemplate::PromptTemplate(std::string text) : text_(std::move(text)) {
    static const std::regex placeholder_re(R"(\{([A-Z][A-Z0-9_]*)\})");
    std::size_t last = 0;
    for (auto it = std::sregex_iterator(text_.begin(), text_.end(), placeholder_re);
         it != std::sregex_iterator(); ++it) {
        const auto pos = static_cast<std::size_t>(it->position(0));
        if (pos > last) {
            pieces_.push_back({false, text_.substr(last, pos - last)});
        }
        const auto name = (*it)[1].str();
        pieces_.push_back({true, name});
        if (std::find(names_.begin(), names_.end(), name) == names_.end()) {
            names_.push_back(name);
        }
        last = pos + static_cast<std::size_t>(it->length(0));
    }
    if (last < text_.size()) {
        pieces_.push_back({false, text_.substr(last)});
    }
}

std::string PromptTemplate::render(const std::map<std::string, std::string>& values) const {
    for (const auto& [name, value] : values) {
        if (std::find(names_.begin(), names_.end(), name) == names_.end()) {
            throw TemplateError("template has no placeholder {" + name + "}");
        }
    }
    std::string out;
    for (const auto& piece : pieces_) {
        if (!piece.placeholder) {
            out += piece.text;
            continue;
        }
        const auto it = values.find(piece.text);
        if (it == values.end()) {
            throw TemplateError("placeholder {" + piece.text + "} left unfilled");
        }
        out += it->second;
    }
    return out;
}

} // namespace qlforge
