#include "cdul/xml.hpp"

#include "cdul/error.hpp"

#include <cctype>
#include <charconv>

namespace cdul::xml {

const Node* Node::child(std::string_view child_name) const {
    for (const Node& c : children) {
        if (c.name == child_name) return &c;
    }
    return nullptr;
}

std::vector<const Node*> Node::children_named(std::string_view child_name) const {
    std::vector<const Node*> out;
    for (const Node& c : children) {
        if (c.name == child_name) out.push_back(&c);
    }
    return out;
}

const std::string* Node::attribute(std::string_view attr_name) const {
    for (const auto& [k, v] : attributes) {
        if (k == attr_name) return &v;
    }
    return nullptr;
}

std::string Node::trimmed_text() const {
    size_t b = text.find_first_not_of(" \t\r\n");
    if (b == std::string::npos) return {};
    size_t e = text.find_last_not_of(" \t\r\n");
    return text.substr(b, e - b + 1);
}

namespace {

class Parser {
public:
    explicit Parser(std::string_view input) : in_(input) {}

    Node run() {
        skip_prolog();
        Node root = parse_element();
        skip_misc();
        if (pos_ != in_.size()) error("trailing content after document element");
        return root;
    }

private:
    std::string_view in_;
    size_t pos_ = 0;
    int line_ = 1;

    [[noreturn]] void error(const std::string& what) const {
        fail(ErrorKind::data, "XML parse error at line " + std::to_string(line_) + ": " + what);
    }

    bool eof() const { return pos_ >= in_.size(); }
    char peek() const { return in_[pos_]; }

    char advance() {
        char c = in_[pos_++];
        if (c == '\n') ++line_;
        return c;
    }

    bool consume(std::string_view s) {
        if (in_.substr(pos_, s.size()) != s) return false;
        for (size_t i = 0; i < s.size(); ++i) advance();
        return true;
    }

    void expect(std::string_view s, const char* what) {
        if (!consume(s)) error(std::string("expected ") + what);
    }

    void skip_ws() {
        while (!eof() && std::isspace(static_cast<unsigned char>(peek()))) advance();
    }

    static bool is_name_start(char c) {
        return std::isalpha(static_cast<unsigned char>(c)) || c == '_' || c == ':';
    }
    static bool is_name_char(char c) {
        return is_name_start(c) || std::isdigit(static_cast<unsigned char>(c)) || c == '-' || c == '.';
    }

    std::string parse_name() {
        if (eof() || !is_name_start(peek())) error("expected a name");
        std::string name;
        while (!eof() && is_name_char(peek())) name.push_back(advance());
        return name;
    }

    void skip_until(std::string_view terminator, const char* what) {
        while (!eof()) {
            if (in_.substr(pos_, terminator.size()) == terminator) {
                consume(terminator);
                return;
            }
            advance();
        }
        error(std::string("unterminated ") + what);
    }

    // <?xml ...?>, comments, doctype, whitespace before/after the root
    void skip_prolog() {
        for (;;) {
            skip_ws();
            if (consume("<?")) {
                skip_until("?>", "processing instruction");
            } else if (consume("<!--")) {
                skip_until("-->", "comment");
            } else if (consume("<!DOCTYPE")) {
                skip_until(">", "doctype");
            } else {
                return;
            }
        }
    }

    void skip_misc() {
        for (;;) {
            skip_ws();
            if (consume("<!--")) {
                skip_until("-->", "comment");
            } else if (consume("<?")) {
                skip_until("?>", "processing instruction");
            } else {
                return;
            }
        }
    }

    void append_reference(std::string& out) {
        // positioned just past '&'
        size_t semi = in_.find(';', pos_);
        if (semi == std::string_view::npos || semi - pos_ > 10) error("unterminated entity reference");
        std::string_view ref = in_.substr(pos_, semi - pos_);
        if (ref == "amp") out.push_back('&');
        else if (ref == "lt") out.push_back('<');
        else if (ref == "gt") out.push_back('>');
        else if (ref == "quot") out.push_back('"');
        else if (ref == "apos") out.push_back('\'');
        else if (!ref.empty() && ref[0] == '#') {
            int base = 10;
            std::string_view digits = ref.substr(1);
            if (!digits.empty() && (digits[0] == 'x' || digits[0] == 'X')) {
                base = 16;
                digits = digits.substr(1);
            }
            unsigned code = 0;
            auto [p, ec] = std::from_chars(digits.data(), digits.data() + digits.size(), code, base);
            if (ec != std::errc{} || p != digits.data() + digits.size() || code > 0x7F)
                error("unsupported character reference '&" + std::string(ref) + ";'");
            out.push_back(static_cast<char>(code));
        } else {
            error("unknown entity '&" + std::string(ref) + ";'");
        }
        while (pos_ <= semi) advance();
    }

    std::string parse_attr_value() {
        if (eof() || (peek() != '"' && peek() != '\'')) error("expected quoted attribute value");
        char quote = advance();
        std::string value;
        while (!eof() && peek() != quote) {
            char c = advance();
            if (c == '&') append_reference(value);
            else value.push_back(c);
        }
        if (eof()) error("unterminated attribute value");
        advance(); // closing quote
        return value;
    }

    Node parse_element() {
        skip_ws();
        if (eof() || peek() != '<') error("expected element");
        int start_line = line_;
        advance();
        Node node;
        node.line = start_line;
        node.name = parse_name();

        for (;;) {
            skip_ws();
            if (eof()) error("unterminated start tag <" + node.name + ">");
            if (consume("/>")) return node;
            if (consume(">")) break;
            std::string attr = parse_name();
            skip_ws();
            expect("=", "'=' after attribute name");
            skip_ws();
            node.attributes.emplace_back(std::move(attr), parse_attr_value());
        }

        // content
        for (;;) {
            if (eof()) error("missing closing tag </" + node.name + ">");
            if (consume("<!--")) {
                skip_until("-->", "comment");
            } else if (consume("<![CDATA[")) {
                size_t end = in_.find("]]>", pos_);
                if (end == std::string_view::npos) error("unterminated CDATA section");
                while (pos_ < end) node.text.push_back(advance());
                consume("]]>");
            } else if (consume("</")) {
                std::string closing = parse_name();
                if (closing != node.name)
                    error("mismatched closing tag </" + closing + "> for <" + node.name + ">");
                skip_ws();
                expect(">", "'>' after closing tag");
                return node;
            } else if (peek() == '<') {
                node.children.push_back(parse_element());
            } else {
                char c = advance();
                if (c == '&') append_reference(node.text);
                else node.text.push_back(c);
            }
        }
    }
};

} // namespace

Node parse_document(std::string_view input) {
    return Parser(input).run();
}

} // namespace cdul::xml
