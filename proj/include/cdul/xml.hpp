#pragma once

#include <string>
#include <string_view>
#include <utility>
#include <vector>

namespace cdul::xml {

// Small DOM for the annotation files this project reads. Handles elements,
// attributes, character data, comments, CDATA, declarations and the five
// predefined entities plus numeric character references. No namespaces.
struct Node {
    std::string name;
    std::vector<std::pair<std::string, std::string>> attributes;
    std::vector<Node> children;
    std::string text; // character data directly inside this element
    int line = 0;

    const Node* child(std::string_view child_name) const;
    std::vector<const Node*> children_named(std::string_view child_name) const;
    const std::string* attribute(std::string_view attr_name) const;
    std::string trimmed_text() const;
};

// Parses a complete document and returns its root element.
// Malformed input raises a data error carrying the offending line.
Node parse_document(std::string_view input);

} // namespace cdul::xml
