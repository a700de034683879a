#pragma once

#include <map>
#include <string>
#include <vector>

namespace qlforge {

/// Plain-text template with `{NAME}` placeholders (NAME is upper-case
/// letters, digits and underscores). Substituted values are inserted
/// verbatim and never rescanned, so they may contain braces.
class PromptTemplate {
public:
    explicit PromptTemplate(std::string text);

    const std::string& text() const { return text_; }
    /// Distinct placeholder names in order of first appearance.
    const std::vector<std::string>& placeholders() const { return names_; }

    /// Throws TemplateError when a placeholder has no value or a value names
    /// no placeholder.
    std::string render(const std::map<std::string, std::string>& values) const;

private:
    struct Piece {
        bool placeholder;
        std::string text;
    };

    std::string text_;
    std::vector<Piece> pieces_;
    std::vector<std::string> names_;
};

} // namespace qlforge
